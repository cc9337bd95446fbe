use nalgebra::DMatrix;
use rand::Rng;

use super::episode::{Episode, Sample};
use crate::error::{Error, Result};
use crate::geometry::{project_to_om, OMPoint};

/// Tangency points `K_0..=K_τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    anchors: Vec<OMPoint>,
}

/// Class weights `W_1..W_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    weights: Vec<OMPoint>,
}

macro_rules! point_set {
    ($ty:ident, $field:ident) => {
        impl $ty {
            pub fn new($field: Vec<OMPoint>) -> Result<Self> {
                let first = $field
                    .first()
                    .ok_or_else(|| Error::InvalidConfig(concat!(stringify!($ty), " must be non-empty").into()))?;
                let shape = first.shape();
                if let Some(bad) = $field.iter().find(|x| x.shape() != shape) {
                    return Err(Error::ShapeMismatch {
                        expected: shape,
                        actual: bad.shape(),
                    });
                }
                Ok(Self { $field })
            }

            pub fn len(&self) -> usize {
                self.$field.len()
            }

            pub fn is_empty(&self) -> bool {
                self.$field.is_empty()
            }

            pub fn points(&self) -> &[OMPoint] {
                &self.$field
            }

            pub fn get(&self, i: usize) -> &OMPoint {
                &self.$field[i]
            }

            pub fn into_points(self) -> Vec<OMPoint> {
                self.$field
            }

            pub fn max_column_norm_residual(&self) -> f64 {
                self.$field
                    .iter()
                    .map(OMPoint::column_norm_residual)
                    .fold(0.0, f64::max)
            }
        }
    };
}

point_set!(AnchorSet, anchors);
point_set!(WeightSet, weights);

fn feature_sum<'a>(samples: impl Iterator<Item = &'a Sample>, shape: (usize, usize)) -> DMatrix<f64> {
    samples.fold(DMatrix::zeros(shape.0, shape.1), |acc, s| acc + &s.features)
}

/// Pseudo Karcher means: `K_t` projects the mix of support and query sums
/// weighted `(τ−t) : t`. With `τ = 0` the single anchor is the support mean.
pub fn init_anchors(episode: &Episode, tau: usize) -> Result<AnchorSet> {
    let shape = episode.feature_shape();
    let support_sum = feature_sum(episode.support().iter(), shape);
    let n_support = episode.support().len() as f64;
    if tau == 0 {
        return AnchorSet::new(vec![project_to_om(&(support_sum / n_support))?]);
    }
    if episode.query().is_empty() {
        return Err(Error::InvalidEpisode(
            "transductive anchors need at least one query sample".into(),
        ));
    }
    let query_sum = feature_sum(episode.query().iter(), shape);
    let n_query = episode.query().len() as f64;
    let anchors = (0..=tau)
        .map(|t| {
            let ws = (tau - t) as f64;
            let wq = t as f64;
            let mean = (&support_sum * ws + &query_sum * wq) / (ws * n_support + wq * n_query);
            project_to_om(&mean)
        })
        .collect::<Result<Vec<_>>>()?;
    AnchorSet::new(anchors)
}

/// Projected class prototypes.
pub fn init_weights(episode: &Episode) -> Result<WeightSet> {
    let shape = episode.feature_shape();
    let weights = (0..episode.ways())
        .map(|k| {
            let members = episode.support().iter().filter(|s| s.label == k);
            let count = members.clone().count();
            if count == 0 {
                return Err(Error::InvalidEpisode(format!("class {k} has no support samples")));
            }
            project_to_om(&(feature_sum(members, shape) / count as f64))
        })
        .collect::<Result<Vec<_>>>()?;
    WeightSet::new(weights)
}

pub fn random_anchors<R: Rng + ?Sized>(tau: usize, n: usize, p: usize, rng: &mut R) -> Result<AnchorSet> {
    AnchorSet::new((0..=tau).map(|_| OMPoint::random(n, p, rng)).collect::<Result<_>>()?)
}

pub fn random_weights<R: Rng + ?Sized>(ways: usize, n: usize, p: usize, rng: &mut R) -> Result<WeightSet> {
    WeightSet::new((0..ways).map(|_| OMPoint::random(n, p, rng)).collect::<Result<_>>()?)
}
