//! Gradients of the classification loss with respect to weights and anchors,
//! and Riemannian SGD over the oblique manifold.
//!
//! Euclidean gradients here are gradients of the loss evaluated after column
//! normalization of every weight and anchor, taken in ambient coordinates.
//! At points on the manifold they have no radial component, so they agree
//! with central differences of `L(P_x(W + εE))`.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{exp_map, log_vjp_accumulate, project_columns, project_to_om, tangent_project, GeometryMode, OMPoint};
use crate::odc::{
    forward, init_anchors, init_weights, predict, random_anchors, random_weights, total_loss, total_loss_grad,
    AnchorInit, AnchorSet, ClassifierConfig, Episode, ForwardPass, PosteriorTensor, WeightInit, WeightSet,
};

/// Gradients for every weight `W_k` and anchor `K_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub weights: Vec<DMatrix<f64>>,
    pub anchors: Vec<DMatrix<f64>>,
}

impl GradientBundle {
    pub fn zeros_like(anchors: &AnchorSet, weights: &WeightSet) -> Self {
        let z = |p: &OMPoint| DMatrix::zeros(p.nrows(), p.ncols());
        Self {
            weights: weights.points().iter().map(z).collect(),
            anchors: anchors.points().iter().map(z).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .chain(&self.anchors)
            .map(|m| m.amax())
            .fold(0.0, f64::max)
    }

    fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.anchors)
            .all(|m| m.iter().all(|v| v.is_finite()))
    }
}

/// Projects every episode feature matrix onto the manifold, support first.
pub fn embed_samples(episode: &Episode) -> Result<Vec<OMPoint>> {
    episode.samples().map(|s| project_to_om(&s.features)).collect()
}

/// Posteriors of every sample at the given parameters.
pub fn posteriors(
    episode: &Episode,
    anchors: &AnchorSet,
    weights: &WeightSet,
    config: &ClassifierConfig,
) -> Result<PosteriorTensor> {
    let samples = embed_samples(episode)?;
    Ok(run_forward(&samples, episode, anchors, weights, config)?.posteriors)
}

/// Total loss at the given parameters.
pub fn loss_at(episode: &Episode, anchors: &AnchorSet, weights: &WeightSet, config: &ClassifierConfig) -> Result<f64> {
    total_loss(&posteriors(episode, anchors, weights, config)?, episode, config)
}

fn run_forward(
    samples: &[OMPoint],
    episode: &Episode,
    anchors: &AnchorSet,
    weights: &WeightSet,
    config: &ClassifierConfig,
) -> Result<ForwardPass> {
    forward(
        samples,
        episode.support().len(),
        anchors,
        weights,
        config.gamma,
        config.geometry,
    )
}

/// Gradient of the total loss with respect to every weight and anchor.
pub fn euclidean_gradients(
    episode: &Episode,
    anchors: &AnchorSet,
    weights: &WeightSet,
    config: &ClassifierConfig,
) -> Result<GradientBundle> {
    let samples = embed_samples(episode)?;
    let fwd = run_forward(&samples, episode, anchors, weights, config)?;
    let upstream = total_loss_grad(&fwd.posteriors, episode, config)?;
    let bundle = backward(&samples, &fwd, anchors, weights, &upstream, config.gamma, config.geometry);
    if !bundle.is_finite() {
        return Err(Error::NonFinite("gradients"));
    }
    Ok(bundle)
}

/// Pulls an arbitrary `∂L/∂p` back to the weights and anchors.
pub fn backprop_posteriors(
    episode: &Episode,
    anchors: &AnchorSet,
    weights: &WeightSet,
    config: &ClassifierConfig,
    upstream: &PosteriorTensor,
) -> Result<GradientBundle> {
    let samples = embed_samples(episode)?;
    let fwd = run_forward(&samples, episode, anchors, weights, config)?;
    if upstream.values().len() != fwd.posteriors.values().len() {
        return Err(Error::ShapeMismatch {
            expected: (fwd.posteriors.values().len(), 1),
            actual: (upstream.values().len(), 1),
        });
    }
    Ok(backward(&samples, &fwd, anchors, weights, upstream, config.gamma, config.geometry))
}

fn backward(
    samples: &[OMPoint],
    fwd: &ForwardPass,
    anchors: &AnchorSet,
    weights: &WeightSet,
    upstream: &PosteriorTensor,
    gamma: f64,
    geometry: GeometryMode,
) -> GradientBundle {
    let mut grads = GradientBundle::zeros_like(anchors, weights);
    let post = &fwd.posteriors;
    let classes = weights.len();
    let mut coeff = vec![0.0; classes];
    let (n, p) = anchors.points()[0].shape();
    let mut grad_hx = DMatrix::zeros(n, p);
    for (t, k) in anchors.points().iter().enumerate() {
        let km = k.as_matrix();
        let hw = &fwd.weight_logs[t];
        let mut grad_hw: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n, p); classes];
        for (s, (x, hx)) in samples.iter().zip(&fwd.sample_logs[t]).enumerate() {
            let prob = post.row(s, t);
            let g = upstream.row(s, t);
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            // softmax: ∂z_k = p_k (g_k − Σ p g); z_k = −γ d_k; d_k = ‖H_x − H_k‖².
            let pg: f64 = prob.iter().zip(g).map(|(a, b)| a * b).sum();
            for c in 0..classes {
                coeff[c] = -2.0 * gamma * prob[c] * (g[c] - pg);
            }
            grad_hx.fill(0.0);
            for c in 0..classes {
                let a = coeff[c];
                if a == 0.0 {
                    continue;
                }
                let pairs = hx.as_slice().iter().zip(hw[c].as_slice());
                let grads = grad_hx.as_mut_slice().iter_mut().zip(grad_hw[c].as_mut_slice());
                for ((gx, gw), (xv, wv)) in grads.zip(pairs) {
                    let d = a * (xv - wv);
                    *gx += d;
                    *gw -= d;
                }
            }
            log_vjp_accumulate(km, x.as_matrix(), &grad_hx, geometry, &mut grads.anchors[t], None);
        }
        for (c, w) in weights.points().iter().enumerate() {
            log_vjp_accumulate(
                km,
                w.as_matrix(),
                &grad_hw[c],
                geometry,
                &mut grads.anchors[t],
                Some(&mut grads.weights[c]),
            );
        }
    }
    // Chain through column normalization; at unit columns its Jacobian is the
    // tangent projector.
    for (g, w) in grads.weights.iter_mut().zip(weights.points()) {
        *g = project_columns(w.as_matrix(), g);
    }
    for (g, k) in grads.anchors.iter_mut().zip(anchors.points()) {
        *g = project_columns(k.as_matrix(), g);
    }
    grads
}

/// Tangent projection of every gradient at its parameter.
pub fn riemannian_gradients(bundle: &GradientBundle, anchors: &AnchorSet, weights: &WeightSet) -> Result<GradientBundle> {
    if bundle.weights.len() != weights.len() || bundle.anchors.len() != anchors.len() {
        return Err(Error::InvalidConfig("gradient bundle does not match parameter sets".into()));
    }
    let weights = bundle
        .weights
        .iter()
        .zip(weights.points())
        .map(|(g, w)| Ok(tangent_project(w, g)?.into_matrix()))
        .collect::<Result<_>>()?;
    let anchors = bundle
        .anchors
        .iter()
        .zip(anchors.points())
        .map(|(g, k)| Ok(tangent_project(k, g)?.into_matrix()))
        .collect::<Result<_>>()?;
    Ok(GradientBundle { weights, anchors })
}

/// `X ← Exp_X(−lr·G)` for every weight and anchor.
pub fn rsgd_step(
    weights: &WeightSet,
    anchors: &AnchorSet,
    bundle: &GradientBundle,
    lr: f64,
    geometry: GeometryMode,
) -> Result<(WeightSet, AnchorSet)> {
    if bundle.weights.len() != weights.len() || bundle.anchors.len() != anchors.len() {
        return Err(Error::InvalidConfig("gradient bundle does not match parameter sets".into()));
    }
    let step = |x: &OMPoint, g: &DMatrix<f64>| {
        let h = crate::geometry::TangentVector::new(x.clone(), g * (-lr))?;
        exp_map(x, &h, geometry)
    };
    let new_weights = weights
        .points()
        .iter()
        .zip(&bundle.weights)
        .map(|(w, g)| step(w, g))
        .collect::<Result<Vec<_>>>()?;
    let new_anchors = anchors
        .points()
        .iter()
        .zip(&bundle.anchors)
        .map(|(k, g)| step(k, g))
        .collect::<Result<Vec<_>>>()?;
    Ok((WeightSet::new(new_weights)?, AnchorSet::new(new_anchors)?))
}

/// Outcome of fine-tuning on one episode.
#[derive(Debug, Clone)]
pub struct FitReport {
    /// Loss before each update; one entry per iteration.
    pub loss_trace: Vec<f64>,
    /// Loss after the last update.
    pub final_loss: f64,
    /// Predicted class of every query sample.
    pub predictions: Vec<usize>,
    /// Largest column-norm residual over all weights and anchors after each update.
    pub residuals: Vec<f64>,
    pub weights: WeightSet,
    pub anchors: AnchorSet,
    pub elapsed: Duration,
}

impl FitReport {
    pub fn initial_loss(&self) -> f64 {
        self.loss_trace[0]
    }

    pub fn accuracy(&self, labels: &[usize]) -> f64 {
        accuracy(&self.predictions, labels)
    }
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    assert_eq!(predictions.len(), labels.len());
    if labels.is_empty() {
        return 0.0;
    }
    let hits = predictions.iter().zip(labels).filter(|(a, b)| a == b).count();
    hits as f64 / labels.len() as f64
}

/// Initial parameters selected by the config's init strategies.
pub fn initial_parameters(episode: &Episode, config: &ClassifierConfig) -> Result<(AnchorSet, WeightSet)> {
    let (n, p) = episode.feature_shape();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let anchors = match config.anchor_init {
        AnchorInit::PseudoKM => init_anchors(episode, config.tau)?,
        AnchorInit::Random => random_anchors(config.tau, n, p, &mut rng)?,
    };
    let weights = match config.weight_init {
        WeightInit::Prototype => init_weights(episode)?,
        WeightInit::Random => random_weights(episode.ways(), n, p, &mut rng)?,
    };
    Ok((anchors, weights))
}

/// Initializes anchors and weights, runs `iterations` RSGD updates on the
/// total loss and predicts the query labels.
pub fn fit(episode: &Episode, config: &ClassifierConfig) -> Result<FitReport> {
    config.validate()?;
    let start = Instant::now();
    let samples = embed_samples(episode)?;
    let (mut anchors, mut weights) = initial_parameters(episode, config)?;
    let mut loss_trace = Vec::with_capacity(config.iterations);
    let mut residuals = Vec::with_capacity(config.iterations);

    for iteration in 0..config.iterations {
        let mut step = || -> Result<()> {
            let fwd = run_forward(&samples, episode, &anchors, &weights, config)?;
            loss_trace.push(total_loss(&fwd.posteriors, episode, config)?);
            let upstream = total_loss_grad(&fwd.posteriors, episode, config)?;
            let grads = backward(&samples, &fwd, &anchors, &weights, &upstream, config.gamma, config.geometry);
            if !grads.is_finite() {
                return Err(Error::NonFinite("gradients"));
            }
            let grads = riemannian_gradients(&grads, &anchors, &weights)?;
            let (w, k) = rsgd_step(&weights, &anchors, &grads, config.lr, config.geometry)?;
            residuals.push(w.max_column_norm_residual().max(k.max_column_norm_residual()));
            weights = w;
            anchors = k;
            Ok(())
        };
        step().map_err(|e| Error::FitAborted {
            iteration,
            source: Box::new(e),
        })?;
    }

    let fwd = run_forward(&samples, episode, &anchors, &weights, config).map_err(|e| Error::FitAborted {
        iteration: config.iterations,
        source: Box::new(e),
    })?;
    let final_loss = total_loss(&fwd.posteriors, episode, config)?;
    let predictions = predict(&fwd.posteriors, config);
    Ok(FitReport {
        loss_trace,
        final_loss,
        predictions,
        residuals,
        weights,
        anchors,
        elapsed: start.elapsed(),
    })
}
