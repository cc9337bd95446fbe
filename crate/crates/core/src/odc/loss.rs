use super::config::{ClassifierConfig, WeightFn};
use super::episode::Episode;
use super::posterior::PosteriorTensor;
use crate::error::{Error, Result};

/// Posteriors below this are clamped inside logarithms.
pub const LOG_FLOOR: f64 = 1e-30;

fn clamped_ln(p: f64) -> f64 {
    p.max(LOG_FLOOR).ln()
}

/// Derivative of `clamped_ln`; zero past the clamp.
fn clamped_ln_grad(p: f64) -> f64 {
    if p > LOG_FLOOR {
        1.0 / p
    } else {
        0.0
    }
}

/// Cross-entropy weight `μ(t)` of anchor `t`; the MI term gets `1 − μ(t)`.
pub fn weight_factor(t: usize, tau: usize, variant: WeightFn) -> Result<f64> {
    if t > tau {
        return Err(Error::OutOfRange { t, tau });
    }
    if tau == 0 {
        return Ok(1.0);
    }
    let (t, tau) = (t as f64, tau as f64);
    Ok(match variant {
        WeightFn::Paper => {
            let tau3 = tau * tau * tau;
            let d = 2.0 * t - tau;
            (tau3 - t * d * d) / tau3
        }
        WeightFn::Uniform => 0.5,
        WeightFn::Linear => 1.0 - t / tau,
        WeightFn::Quadratic => 1.0 - (t / tau) * (t / tau),
    })
}

fn weight_factors(config: &ClassifierConfig) -> Vec<f64> {
    (0..=config.tau)
        .map(|t| weight_factor(t, config.tau, config.weight_fn).expect("t within range"))
        .collect()
}

fn check_coverage(post: &PosteriorTensor, episode: &Episode, t: usize) {
    assert_eq!(post.n_support(), episode.support().len(), "support rows missing");
    assert_eq!(post.n_query(), episode.query().len(), "query rows missing");
    assert_eq!(post.classes(), episode.ways(), "class count differs");
    assert!(t < post.anchors(), "anchor {t} not covered");
}

/// `−λ·mean_S log p_{y,t}`.
pub fn ce_loss(post: &PosteriorTensor, episode: &Episode, t: usize, lambda: f64) -> f64 {
    check_coverage(post, episode, t);
    let n = episode.support().len() as f64;
    let sum: f64 = episode
        .support()
        .iter()
        .enumerate()
        .map(|(i, s)| clamped_ln(post.support_row(i, t)[s.label]))
        .sum();
    -lambda * sum / n
}

/// `α·H(Y|X) − H(Y)` over the query set at anchor `t`.
pub fn mi_loss(post: &PosteriorTensor, episode: &Episode, t: usize, alpha: f64) -> f64 {
    check_coverage(post, episode, t);
    let nq = post.n_query();
    if nq == 0 {
        return 0.0;
    }
    let c = post.classes();
    let mut marginal = vec![0.0; c];
    let mut cond = 0.0;
    for j in 0..nq {
        for (k, &p) in post.query_row(j, t).iter().enumerate() {
            cond += p * clamped_ln(p);
            marginal[k] += p;
        }
    }
    let nq = nq as f64;
    let marg: f64 = marginal
        .iter()
        .map(|m| {
            let q = m / nq;
            q * clamped_ln(q)
        })
        .sum();
    -alpha * cond / nq + marg
}

/// Weighted combination of the per-anchor losses, normalized by `Σμ(t)`.
pub fn total_loss(post: &PosteriorTensor, episode: &Episode, config: &ClassifierConfig) -> Result<f64> {
    let mu = weight_factors(config);
    let norm: f64 = mu.iter().sum();
    if norm < 1e-12 {
        return Err(Error::ZeroWeightSum(norm));
    }
    let mut total = 0.0;
    for (t, &m) in mu.iter().enumerate() {
        total += m * ce_loss(post, episode, t, config.lambda);
        if !config.inductive {
            total += (1.0 - m) * mi_loss(post, episode, t, config.alpha);
        }
    }
    Ok(total / norm)
}

/// `∂(total_loss)/∂p` for every entry of the posterior tensor.
pub(crate) fn total_loss_grad(
    post: &PosteriorTensor,
    episode: &Episode,
    config: &ClassifierConfig,
) -> Result<PosteriorTensor> {
    let mu = weight_factors(config);
    let norm: f64 = mu.iter().sum();
    if norm < 1e-12 {
        return Err(Error::ZeroWeightSum(norm));
    }
    let mut grad = post.zeros_like();
    let ns = episode.support().len() as f64;
    let nq_count = post.n_query();
    let nq = nq_count as f64;
    let c = post.classes();
    for (t, &m) in mu.iter().enumerate() {
        let ce_scale = m / norm;
        for (i, s) in episode.support().iter().enumerate() {
            let p = post.support_row(i, t)[s.label];
            grad.row_mut(i, t)[s.label] += -ce_scale * config.lambda * clamped_ln_grad(p) / ns;
        }
        let mi_scale = (1.0 - m) / norm;
        if config.inductive || nq_count == 0 || mi_scale == 0.0 {
            continue;
        }
        let mut marginal = vec![0.0; c];
        for j in 0..nq_count {
            for (k, &p) in post.query_row(j, t).iter().enumerate() {
                marginal[k] += p / nq;
            }
        }
        // d/dp [p·ln p] = ln p + p·(ln p)'
        let marg_grad: Vec<f64> = marginal
            .iter()
            .map(|&q| (clamped_ln(q) + q * clamped_ln_grad(q)) / nq)
            .collect();
        for j in 0..nq_count {
            let row = post.query_row(j, t).to_vec();
            let g = grad.row_mut(post.n_support() + j, t);
            for k in 0..c {
                let p = row[k];
                let cond = -config.alpha * (clamped_ln(p) + p * clamped_ln_grad(p)) / nq;
                g[k] += mi_scale * (cond + marg_grad[k]);
            }
        }
    }
    Ok(grad)
}

/// Query predictions: argmax at the single anchor, or of the
/// `(1 − μ(t))`-weighted posterior sum. Ties go to the lowest class index.
pub fn predict(post: &PosteriorTensor, config: &ClassifierConfig) -> Vec<usize> {
    let mu = weight_factors(config);
    let c = post.classes();
    (0..post.n_query())
        .map(|j| {
            let mut scores = vec![0.0; c];
            if config.tau == 0 {
                scores.copy_from_slice(post.query_row(j, 0));
            } else {
                for (t, &m) in mu.iter().enumerate() {
                    for (s, p) in scores.iter_mut().zip(post.query_row(j, t)) {
                        *s += (1.0 - m) * p;
                    }
                }
            }
            argmax(&scores)
        })
        .collect()
}

pub(crate) fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = k;
        }
    }
    best
}
