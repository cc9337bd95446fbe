use nalgebra::DMatrix;

use super::init::{AnchorSet, WeightSet};
use crate::error::{Error, Result};
use crate::geometry::{log_matrix, GeometryMode, OMPoint};
use crate::rsspp::softmax;

/// Class posteriors `p[sample][t][k]` for every sample at every anchor.
///
/// Samples are ordered support first, then query, matching
/// [`Episode::samples`](super::Episode::samples).
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorTensor {
    n_support: usize,
    n_query: usize,
    anchors: usize,
    classes: usize,
    values: Vec<f64>,
}

impl PosteriorTensor {
    pub fn from_values(
        n_support: usize,
        n_query: usize,
        anchors: usize,
        classes: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != (n_support + n_query) * anchors * classes {
            return Err(Error::ShapeMismatch {
                expected: ((n_support + n_query) * anchors, classes),
                actual: (values.len(), 1),
            });
        }
        Ok(Self {
            n_support,
            n_query,
            anchors,
            classes,
            values,
        })
    }

    pub(crate) fn zeros_like(&self) -> Self {
        Self {
            values: vec![0.0; self.values.len()],
            ..*self
        }
    }

    pub fn n_support(&self) -> usize {
        self.n_support
    }

    pub fn n_query(&self) -> usize {
        self.n_query
    }

    pub fn n_samples(&self) -> usize {
        self.n_support + self.n_query
    }

    pub fn anchors(&self) -> usize {
        self.anchors
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    fn offset(&self, sample: usize, t: usize) -> usize {
        (sample * self.anchors + t) * self.classes
    }

    /// The class distribution of `sample` at anchor `t`.
    pub fn row(&self, sample: usize, t: usize) -> &[f64] {
        let o = self.offset(sample, t);
        &self.values[o..o + self.classes]
    }

    pub(crate) fn row_mut(&mut self, sample: usize, t: usize) -> &mut [f64] {
        let o = self.offset(sample, t);
        &mut self.values[o..o + self.classes]
    }

    pub fn support_row(&self, i: usize, t: usize) -> &[f64] {
        self.row(i, t)
    }

    pub fn query_row(&self, j: usize, t: usize) -> &[f64] {
        self.row(self.n_support + j, t)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// `softmax_k(−γ·d_k)` with max-subtraction.
pub(crate) fn posterior_from_sq_dists(sq_dists: &[f64], gamma: f64) -> Vec<f64> {
    let logits: Vec<f64> = sq_dists.iter().map(|d| -gamma * d).collect();
    softmax(&logits)
}

/// Distribution over classes of one point at every anchor.
pub fn class_posteriors(
    x: &OMPoint,
    anchors: &AnchorSet,
    weights: &WeightSet,
    gamma: f64,
    geometry: GeometryMode,
) -> Result<Vec<Vec<f64>>> {
    check_shapes(x.shape(), anchors, weights)?;
    anchors
        .points()
        .iter()
        .map(|k| {
            let hx = log_matrix(k.as_matrix(), x.as_matrix(), geometry)?;
            let d = weights
                .points()
                .iter()
                .map(|w| Ok((&hx - log_matrix(k.as_matrix(), w.as_matrix(), geometry)?).norm_squared()))
                .collect::<Result<Vec<f64>>>()?;
            Ok(posterior_from_sq_dists(&d, gamma))
        })
        .collect()
}

fn check_shapes(shape: (usize, usize), anchors: &AnchorSet, weights: &WeightSet) -> Result<()> {
    for p in anchors.points().iter().chain(weights.points()) {
        if p.shape() != shape {
            return Err(Error::ShapeMismatch {
                expected: shape,
                actual: p.shape(),
            });
        }
    }
    Ok(())
}

/// Tangent vectors and posteriors of one forward pass, kept for the
/// backward pass.
#[derive(Debug, Clone)]
pub(crate) struct ForwardPass {
    /// `sample_logs[t][s] = Log_{K_t}(X_s)`
    pub sample_logs: Vec<Vec<DMatrix<f64>>>,
    /// `weight_logs[t][k] = Log_{K_t}(W_k)`
    pub weight_logs: Vec<Vec<DMatrix<f64>>>,
    pub posteriors: PosteriorTensor,
}

pub(crate) fn forward(
    samples: &[OMPoint],
    n_support: usize,
    anchors: &AnchorSet,
    weights: &WeightSet,
    gamma: f64,
    geometry: GeometryMode,
) -> Result<ForwardPass> {
    if let Some(x) = samples.first() {
        check_shapes(x.shape(), anchors, weights)?;
    }
    let n_anchors = anchors.len();
    let classes = weights.len();
    let mut posteriors = PosteriorTensor {
        n_support,
        n_query: samples.len() - n_support,
        anchors: n_anchors,
        classes,
        values: vec![0.0; samples.len() * n_anchors * classes],
    };
    let mut sample_logs = Vec::with_capacity(n_anchors);
    let mut weight_logs = Vec::with_capacity(n_anchors);
    let mut dists = vec![0.0; classes];
    for (t, k) in anchors.points().iter().enumerate() {
        let km = k.as_matrix();
        let hw = weights
            .points()
            .iter()
            .map(|w| log_matrix(km, w.as_matrix(), geometry))
            .collect::<Result<Vec<_>>>()?;
        let hs = samples
            .iter()
            .map(|x| log_matrix(km, x.as_matrix(), geometry))
            .collect::<Result<Vec<_>>>()?;
        for (s, h) in hs.iter().enumerate() {
            for (d, w) in dists.iter_mut().zip(&hw) {
                *d = squared_distance(h, w);
            }
            posteriors
                .row_mut(s, t)
                .copy_from_slice(&posterior_from_sq_dists(&dists, gamma));
        }
        sample_logs.push(hs);
        weight_logs.push(hw);
    }
    if posteriors.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("posteriors"));
    }
    Ok(ForwardPass {
        sample_logs,
        weight_logs,
        posteriors,
    })
}

/// `‖a − b‖²`, accumulated in four lanes so the loop vectorizes.
pub(crate) fn squared_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let (a, b) = (a.as_slice(), b.as_slice());
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            let d = x[l] - y[l];
            acc[l] += d * d;
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
