use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::store::{FeatureStore, StoreClass, StoreLayout};
use crate::error::{Error, Result};

/// Parameters of a synthetic pre-pooled store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub classes: usize,
    pub per_class: usize,
    pub n: usize,
    pub p: usize,
    /// Inverse noise scale around each class center.
    pub separation: f64,
    /// Offset of the query-half center along a per-class random direction.
    pub shift: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            classes: 20,
            per_class: 40,
            n: 16,
            p: 11,
            separation: 8.0,
            shift: 0.0,
            seed: 0,
        }
    }
}

/// Gaussian clusters of n×p matrices with entry-wise absolute value applied.
///
/// Every class gets a center with `|N(0,1)|` entries. The first half of each
/// class's records is drawn around the center, the second half around the
/// center moved by `shift` along a per-class Gaussian direction. Noise has
/// standard deviation `1/separation`. The store is flagged as split halves so
/// episodes draw support from the first half and queries from the second.
pub fn synth_store(params: &SynthParams) -> Result<FeatureStore> {
    let SynthParams {
        classes,
        per_class,
        n,
        p,
        separation,
        shift,
        seed,
    } = *params;
    if classes == 0 || per_class < 2 || n == 0 || p == 0 {
        return Err(Error::InvalidConfig(
            "synthetic store needs at least one class, two records per class and positive n, p".into(),
        ));
    }
    if !(separation.is_finite() && separation > 0.0 && shift.is_finite()) {
        return Err(Error::InvalidConfig("separation must be positive and shift finite".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = n * p;
    let gauss = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..len).map(|_| rng.sample(StandardNormal)).collect() };
    let half = per_class / 2;
    let out = (0..classes)
        .map(|c| {
            let center: Vec<f64> = gauss(&mut rng).into_iter().map(f64::abs).collect();
            let direction = gauss(&mut rng);
            let shifted: Vec<f64> = center.iter().zip(&direction).map(|(m, d)| m + shift * d).collect();
            let records = (0..per_class)
                .map(|r| {
                    let mean = if r < half { &center } else { &shifted };
                    mean.iter()
                        .map(|m| {
                            let e: f64 = rng.sample(StandardNormal);
                            (m + e / separation).abs() as f32
                        })
                        .collect()
                })
                .collect();
            StoreClass {
                name: format!("synth-{c:03}"),
                records,
            }
        })
        .collect();
    FeatureStore::new(n, StoreLayout::Pooled { p }, true, out)
}
