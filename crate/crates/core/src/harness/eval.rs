use log::{info, warn};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sampling::sample_episode;
use super::store::FeatureStore;
use crate::error::{Error, Result};
use crate::odc::{AnchorInit, ClassifierConfig, WeightFn, WeightInit};
use crate::rsgd::fit;

/// Episode shape: `ways` classes, `shots` support and `queries` query samples
/// per class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Protocol {
    pub ways: usize,
    pub shots: usize,
    pub queries: usize,
}

impl Default for Protocol {
    fn default() -> Self {
        Self {
            ways: 5,
            shots: 1,
            queries: 15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ClassifierConfig,
    pub protocol: Protocol,
    pub episodes: usize,
    pub mean_accuracy: f64,
    /// Half-width of the normal-approximation 95% interval.
    pub ci95: f64,
    /// Accuracy of every successful episode, in episode order.
    pub per_episode: Vec<f64>,
    pub seed: u64,
    pub failures: usize,
}

/// Seeds for episode `index`: one for sampling, one for the classifier.
///
/// Each episode reads its own ChaCha stream, so results do not depend on the
/// order episodes are run in.
pub fn episode_seeds(master: u64, index: usize) -> (u64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index as u64);
    (rng.next_u64(), rng.next_u64())
}

/// `(mean, 1.96·s/√N)` with the sample standard deviation; zero width for a
/// single value.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * var.sqrt() / (n as f64).sqrt())
}

/// Runs one episode end to end and returns its query accuracy.
pub fn run_episode(store: &FeatureStore, config: &ClassifierConfig, protocol: Protocol, index: usize) -> Result<f64> {
    let (sample_seed, fit_seed) = episode_seeds(config.seed, index);
    let episode = sample_episode(store, protocol.ways, protocol.shots, protocol.queries, config.p, sample_seed)?;
    let cfg = ClassifierConfig {
        seed: fit_seed,
        ..config.clone()
    };
    let report = fit(&episode, &cfg)?;
    Ok(report.accuracy(&episode.query_labels()))
}

/// Fits `episodes` sampled episodes on up to `threads` workers.
///
/// Failed episodes are dropped from the statistics; more than 1% failures
/// aborts the evaluation.
pub fn evaluate(
    store: &FeatureStore,
    config: &ClassifierConfig,
    episodes: usize,
    protocol: Protocol,
    threads: usize,
) -> Result<EvalReport> {
    config.validate()?;
    if episodes == 0 {
        return Err(Error::InvalidConfig("episodes must be at least 1".into()));
    }
    if protocol.queries == 0 {
        return Err(Error::InvalidConfig("queries must be at least 1".into()));
    }
    // Catch store/config mismatches before they show up as per-episode failures.
    store.region_matrix(0, 0, config.p)?;
    super::sampling::draw_episode(store, protocol.ways, protocol.shots, protocol.queries, 0)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let results: Vec<Result<f64>> = pool.install(|| {
        (0..episodes)
            .into_par_iter()
            .map(|i| run_episode(store, config, protocol, i))
            .collect()
    });

    let mut per_episode = Vec::with_capacity(episodes);
    let mut failures = 0;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(acc) => per_episode.push(acc),
            Err(e) => {
                warn!("episode {i} failed: {e}");
                failures += 1;
            }
        }
    }
    if failures * 100 > episodes {
        return Err(Error::EvaluationAborted { failures, episodes });
    }
    if failures > 0 {
        warn!("{failures} of {episodes} episodes failed and were excluded");
    }
    let (mean_accuracy, ci95) = mean_ci95(&per_episode);
    info!(
        "tau={} p={} {:?}: {mean_accuracy:.4} +- {ci95:.4} over {} episodes",
        config.tau,
        config.p,
        config.weight_fn,
        per_episode.len()
    );
    Ok(EvalReport {
        config: config.clone(),
        protocol,
        episodes,
        mean_accuracy,
        ci95,
        per_episode,
        seed: config.seed,
        failures,
    })
}

/// Values swept over; every combination is evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAxes {
    pub tau: Vec<usize>,
    pub p: Vec<usize>,
    pub weight_fn: Vec<WeightFn>,
    pub anchor_init: Vec<AnchorInit>,
    pub weight_init: Vec<WeightInit>,
}

impl SweepAxes {
    /// Single-point axes taken from `config`.
    pub fn from_config(config: &ClassifierConfig) -> Self {
        Self {
            tau: vec![config.tau],
            p: vec![config.p],
            weight_fn: vec![config.weight_fn],
            anchor_init: vec![config.anchor_init],
            weight_init: vec![config.weight_init],
        }
    }

    /// Every configuration in the grid, `tau` varying slowest.
    pub fn configs(&self, base: &ClassifierConfig) -> Result<Vec<ClassifierConfig>> {
        if self.tau.is_empty()
            || self.p.is_empty()
            || self.weight_fn.is_empty()
            || self.anchor_init.is_empty()
            || self.weight_init.is_empty()
        {
            return Err(Error::InvalidConfig("sweep axes must be non-empty".into()));
        }
        let mut out = Vec::new();
        for &tau in &self.tau {
            for &p in &self.p {
                for &weight_fn in &self.weight_fn {
                    for &anchor_init in &self.anchor_init {
                        for &weight_init in &self.weight_init {
                            out.push(ClassifierConfig {
                                tau,
                                p,
                                weight_fn,
                                anchor_init,
                                weight_init,
                                ..base.clone()
                            });
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

pub fn sweep(
    store: &FeatureStore,
    base: &ClassifierConfig,
    axes: &SweepAxes,
    episodes: usize,
    protocol: Protocol,
    threads: usize,
) -> Result<Vec<EvalReport>> {
    axes.configs(base)?
        .iter()
        .map(|cfg| evaluate(store, cfg, episodes, protocol, threads))
        .collect()
}
