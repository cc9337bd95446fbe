#![allow(dead_code)]

pub mod precise;

use nalgebra::DMatrix;
use oblique_fsl::harness::{episode_seeds, sample_episode, FeatureStore, Protocol};
use oblique_fsl::odc::{AnchorSet, Sample, WeightSet};
use oblique_fsl::rsgd::euclidean_gradients;
use oblique_fsl::{ClassifierConfig, Episode};
use rand::Rng;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-5;
pub const FD_FLOOR: f64 = 1e-8;

pub fn gaussian<R: Rng>(n: usize, p: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Balanced episode with Gaussian class centers and unit-variance noise.
pub fn random_episode<R: Rng>(rng: &mut R, ways: usize, shots: usize, queries: usize, n: usize, p: usize) -> Episode {
    let centers: Vec<DMatrix<f64>> = (0..ways).map(|_| gaussian(n, p, rng) * 2.0).collect();
    let mut draw = |per: usize| {
        let mut out = Vec::new();
        for (label, c) in centers.iter().enumerate() {
            for _ in 0..per {
                out.push(Sample::new(c + gaussian(n, p, rng), label));
            }
        }
        out
    };
    let support = draw(shots);
    let query = draw(queries);
    Episode::new(ways, support, query).unwrap()
}

/// Largest entry-wise `|a − f| / max(|a|, |f|, floor)`.
pub fn max_relative_error(analytic: &[DMatrix<f64>], fd: &[DMatrix<f64>]) -> f64 {
    analytic
        .iter()
        .zip(fd)
        .flat_map(|(a, f)| a.iter().zip(f.iter()).map(|(a, f)| (a - f).abs() / a.abs().max(f.abs()).max(FD_FLOOR)))
        .fold(0.0, f64::max)
}

/// [`max_relative_error`] over all weight and anchor gradients.
pub fn max_fd_relative_error(
    episode: &Episode,
    anchors: &AnchorSet,
    weights: &WeightSet,
    config: &ClassifierConfig,
) -> f64 {
    let grads = euclidean_gradients(episode, anchors, weights, config).unwrap();
    let fd = precise::fd_gradients(episode, anchors, weights, config);
    max_relative_error(&grads.weights, &fd.weights).max(max_relative_error(&grads.anchors, &fd.anchors))
}

fn unit_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut c in out.column_iter_mut() {
        let norm = c.norm();
        c /= norm;
    }
    out
}

/// Sum of squared per-column angles, with the angle from a clamped arccos.
fn oracle_sq_dist(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .zip(b.column_iter())
        .map(|(x, y)| x.dot(&y).clamp(-1.0, 1.0).acos().powi(2))
        .sum()
}

/// Nearest class prototype by geodesic distance, prototypes being normalized
/// means of normalized support features.
pub fn nearest_prototype_accuracy(episode: &Episode) -> f64 {
    let (n, p) = episode.feature_shape();
    let protos: Vec<DMatrix<f64>> = (0..episode.ways())
        .map(|k| {
            let mut sum = DMatrix::zeros(n, p);
            for s in episode.support().iter().filter(|s| s.label == k) {
                sum += unit_columns(&s.features);
            }
            unit_columns(&sum)
        })
        .collect();
    let hits = episode
        .query()
        .iter()
        .filter(|q| {
            let x = unit_columns(&q.features);
            let best = (0..protos.len())
                .min_by(|&a, &b| oracle_sq_dist(&x, &protos[a]).total_cmp(&oracle_sq_dist(&x, &protos[b])))
                .unwrap();
            best == q.label
        })
        .count();
    hits as f64 / episode.query().len() as f64
}

/// Oracle accuracy over the same episodes `evaluate` draws.
pub fn oracle_mean_accuracy(store: &FeatureStore, config: &ClassifierConfig, protocol: Protocol, episodes: usize) -> f64 {
    let total: f64 = (0..episodes)
        .map(|i| {
            let (seed, _) = episode_seeds(config.seed, i);
            let ep = sample_episode(store, protocol.ways, protocol.shots, protocol.queries, config.p, seed).unwrap();
            nearest_prototype_accuracy(&ep)
        })
        .sum();
    total / episodes as f64
}
