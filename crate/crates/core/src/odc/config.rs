use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GeometryMode;

/// Weight-factor schedule `μ(t)` across anchors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum WeightFn {
    /// `(τ³ − t(2t − τ)²)/τ³`
    #[default]
    Paper,
    /// `1/2`
    Uniform,
    /// `1 − t/τ`
    Linear,
    /// `1 − (t/τ)²`
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum AnchorInit {
    /// Projected support/query interpolated means.
    #[default]
    #[serde(rename = "pseudokm")]
    #[value(name = "pseudokm")]
    PseudoKM,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum WeightInit {
    /// Projected per-class support means.
    #[default]
    Prototype,
    Random,
}

/// Every hyperparameter of the classifier and its fine-tuning loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    /// Anchors are `K_0..=K_tau`.
    pub tau: usize,
    /// Pyramid depth used when features are raw maps.
    pub p: usize,
    /// Softmax temperature.
    pub gamma: f64,
    /// Conditional-entropy weight inside the mutual-information term.
    pub alpha: f64,
    /// Cross-entropy weight.
    pub lambda: f64,
    /// RSGD step size, shared by weights and anchors.
    pub lr: f64,
    pub iterations: usize,
    pub geometry: GeometryMode,
    pub weight_fn: WeightFn,
    pub anchor_init: AnchorInit,
    pub weight_init: WeightInit,
    /// Drops the mutual-information term entirely.
    pub inductive: bool,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self::transductive()
    }
}

impl ClassifierConfig {
    pub fn transductive() -> Self {
        Self {
            tau: 14,
            p: 11,
            gamma: 7.5,
            alpha: 0.1,
            lambda: 0.1,
            lr: 0.1,
            iterations: 100,
            geometry: GeometryMode::Exact,
            weight_fn: WeightFn::Paper,
            anchor_init: AnchorInit::PseudoKM,
            weight_init: WeightInit::Prototype,
            inductive: false,
            seed: 0,
        }
    }

    /// Single anchor at the support mean; the MI term is kept unless
    /// `inductive` is also set.
    pub fn inductive() -> Self {
        Self {
            tau: 0,
            ..Self::transductive()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return bad("gamma must be finite and positive");
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if self.p == 0 {
            return bad("pyramid depth must be at least 1");
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad("learning rate must be finite and non-negative");
        }
        if !(self.alpha.is_finite() && self.lambda.is_finite()) {
            return bad("loss weights must be finite");
        }
        Ok(())
    }
}
