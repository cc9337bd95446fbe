//! The episode loss re-evaluated in 128-bit binary floating point.
//!
//! Central differences of an f64 loss of size O(1) resolve steps of about
//! ulp(L)/2h ≈ 1e-11, which is coarser than the smallest gradient entries of
//! saturated posteriors. At 128 bits the same step resolves about 1e-34, so
//! what remains is the truncation error of the stencil.

use astro_float::{BigFloat, Consts, Radix, RoundingMode};
use nalgebra::DMatrix;
use oblique_fsl::odc::{weight_factor, AnchorSet, WeightSet, LOG_FLOOR};
use oblique_fsl::rsgd::GradientBundle;
use oblique_fsl::{ClassifierConfig, Episode, GeometryMode, OMPoint};

const PREC: usize = 128;
const RM: RoundingMode = RoundingMode::ToEven;
/// Mirrors the library's whole-matrix coincidence threshold.
const COINCIDENT_DIST: f64 = 1e-9;

type F = BigFloat;
type Cols = Vec<Vec<F>>;

struct Ctx {
    cc: Consts,
    zero: F,
    one: F,
    half_pi: F,
    pi: F,
}

impl Ctx {
    fn new() -> Self {
        let mut cc = Consts::new().unwrap();
        let pi = cc.pi(PREC, RM);
        let half_pi = pi.div(&F::from_f64(2.0, PREC), PREC, RM);
        Self {
            cc,
            zero: F::from_f64(0.0, PREC),
            one: F::from_f64(1.0, PREC),
            half_pi,
            pi,
        }
    }

    fn f(&self, v: f64) -> F {
        F::from_f64(v, PREC)
    }

    fn dot(&self, a: &[F], b: &[F]) -> F {
        a.iter().zip(b).fold(self.zero.clone(), |acc, (x, y)| acc.add(&x.mul(y, PREC, RM), PREC, RM))
    }

    fn sqrt(&self, v: &F) -> F {
        v.sqrt(PREC, RM)
    }

    fn exp(&mut self, v: &F) -> F {
        v.exp(PREC, RM, &mut self.cc)
    }

    fn ln(&mut self, v: &F) -> F {
        v.ln(PREC, RM, &mut self.cc)
    }

    /// `atan2(s, c)` for `s ≥ 0`.
    fn angle(&mut self, s: &F, c: &F) -> F {
        if c.is_zero() {
            return if s.is_zero() { self.zero.clone() } else { self.half_pi.clone() };
        }
        let t = s.div(&c.abs(), PREC, RM).atan(PREC, RM, &mut self.cc);
        if c.is_positive() {
            t
        } else {
            self.pi.sub(&t, PREC, RM)
        }
    }

    fn lt(&self, a: &F, b: &F) -> bool {
        a.cmp(b).is_some_and(|o| o < 0)
    }

    fn narrow(&mut self, v: &F) -> f64 {
        v.format(Radix::Dec, RM, &mut self.cc).unwrap().parse().unwrap()
    }

    fn unit_columns(&self, m: &DMatrix<f64>, bump: Option<((usize, usize), &F)>) -> Cols {
        (0..m.ncols())
            .map(|j| {
                let col: Vec<F> = (0..m.nrows())
                    .map(|i| {
                        let v = self.f(m[(i, j)]);
                        match bump {
                            Some((e, d)) if e == (i, j) => v.add(d, PREC, RM),
                            _ => v,
                        }
                    })
                    .collect();
                let norm = self.sqrt(&self.dot(&col, &col));
                col.iter().map(|v| v.div(&norm, PREC, RM)).collect()
            })
            .collect()
    }

    fn log(&mut self, k: &Cols, x: &Cols, mode: GeometryMode) -> Cols {
        let mut resid = Vec::with_capacity(k.len());
        let mut sins = Vec::with_capacity(k.len());
        let mut angles = Vec::with_capacity(k.len());
        for (kc, xc) in k.iter().zip(x) {
            let c = self.dot(kc, xc);
            let r: Vec<F> = kc.iter().zip(xc).map(|(kv, xv)| xv.sub(&c.mul(kv, PREC, RM), PREC, RM)).collect();
            let s = self.sqrt(&self.dot(&r, &r));
            angles.push(self.angle(&s, &c));
            sins.push(s);
            resid.push(r);
        }
        let dist = self.sqrt(&self.dot(&angles, &angles));
        if self.lt(&dist, &self.f(COINCIDENT_DIST)) {
            return resid.iter().map(|r| vec![self.zero.clone(); r.len()]).collect();
        }
        let scales: Vec<F> = match mode {
            GeometryMode::Exact => angles
                .iter()
                .zip(&sins)
                .map(|(a, s)| if s.is_zero() { self.zero.clone() } else { a.div(s, PREC, RM) })
                .collect(),
            GeometryMode::Paper => {
                let frob = self.sqrt(&self.dot(&sins, &sins));
                vec![dist.div(&frob, PREC, RM); k.len()]
            }
        };
        resid
            .into_iter()
            .zip(&scales)
            .map(|(r, s)| r.iter().map(|v| v.mul(s, PREC, RM)).collect())
            .collect()
    }

    fn sq_dist(&self, a: &Cols, b: &Cols) -> F {
        a.iter().flatten().zip(b.iter().flatten()).fold(self.zero.clone(), |acc, (x, y)| {
            let d = x.sub(y, PREC, RM);
            acc.add(&d.mul(&d, PREC, RM), PREC, RM)
        })
    }

    fn clamped_ln(&mut self, p: &F) -> F {
        let floor = self.f(LOG_FLOOR);
        if self.lt(p, &floor) {
            self.ln(&floor)
        } else {
            self.ln(p)
        }
    }

    fn plnp(&mut self, p: &F) -> F {
        p.mul(&self.clamped_ln(p), PREC, RM)
    }
}

/// Logs of every sample and weight at every anchor.
struct Logs {
    samples: Vec<Vec<Cols>>,
    weights: Vec<Vec<Cols>>,
}

struct Problem<'a> {
    config: &'a ClassifierConfig,
    labels: Vec<usize>,
    n_support: usize,
    samples: Vec<Cols>,
    anchors: Vec<Cols>,
    weights: Vec<Cols>,
}

impl Problem<'_> {
    fn logs_at(&self, ctx: &mut Ctx, k: &Cols) -> (Vec<Cols>, Vec<Cols>) {
        let mode = self.config.geometry;
        let s = self.samples.iter().map(|x| ctx.log(k, x, mode)).collect();
        let w = self.weights.iter().map(|x| ctx.log(k, x, mode)).collect();
        (s, w)
    }

    fn logs(&self, ctx: &mut Ctx) -> Logs {
        let (samples, weights) = self.anchors.iter().map(|k| self.logs_at(ctx, k)).unzip();
        Logs { samples, weights }
    }

    fn loss(&self, ctx: &mut Ctx, logs: &Logs) -> F {
        let cfg = self.config;
        let gamma = ctx.f(-cfg.gamma);
        let classes = self.weights.len();
        let ns = ctx.f(self.n_support as f64);
        let n_query = self.samples.len() - self.n_support;
        let nq = ctx.f(n_query as f64);
        let mut total = ctx.zero.clone();
        let mut norm = ctx.zero.clone();
        for t in 0..self.anchors.len() {
            let mu = ctx.f(weight_factor(t, cfg.tau, cfg.weight_fn).unwrap());
            norm = norm.add(&mu, PREC, RM);
            let rows: Vec<Vec<F>> = logs.samples[t]
                .iter()
                .map(|h| {
                    let e: Vec<F> = logs.weights[t]
                        .iter()
                        .map(|w| ctx.exp(&gamma.mul(&ctx.sq_dist(h, w), PREC, RM)))
                        .collect();
                    let z = e.iter().fold(ctx.zero.clone(), |a, v| a.add(v, PREC, RM));
                    e.iter().map(|v| v.div(&z, PREC, RM)).collect()
                })
                .collect();
            let mut ce = ctx.zero.clone();
            for (row, &y) in rows.iter().zip(&self.labels).take(self.n_support) {
                ce = ce.add(&ctx.clamped_ln(&row[y]), PREC, RM);
            }
            let ce = ce.mul(&ctx.f(-cfg.lambda), PREC, RM).div(&ns, PREC, RM);
            total = total.add(&mu.mul(&ce, PREC, RM), PREC, RM);
            if cfg.inductive || n_query == 0 {
                continue;
            }
            let mut cond = ctx.zero.clone();
            let mut marginal = vec![ctx.zero.clone(); classes];
            for row in &rows[self.n_support..] {
                for (m, p) in marginal.iter_mut().zip(row) {
                    cond = cond.add(&ctx.plnp(p), PREC, RM);
                    *m = m.add(p, PREC, RM);
                }
            }
            let mut marg = ctx.zero.clone();
            for m in &marginal {
                let q = m.div(&nq, PREC, RM);
                marg = marg.add(&ctx.plnp(&q), PREC, RM);
            }
            let mi = cond
                .mul(&ctx.f(-cfg.alpha), PREC, RM)
                .div(&nq, PREC, RM)
                .add(&marg, PREC, RM);
            let weight = ctx.one.sub(&mu, PREC, RM);
            total = total.add(&weight.mul(&mi, PREC, RM), PREC, RM);
        }
        total.div(&norm, PREC, RM)
    }
}

/// Central differences with step [`super::FD_STEP`] of `L(P(W + εE_ij))` for
/// every weight and anchor entry, with the loss evaluated at 128 bits.
pub fn fd_gradients(episode: &Episode, anchors: &AnchorSet, weights: &WeightSet, config: &ClassifierConfig) -> GradientBundle {
    let mut ctx = Ctx::new();
    let cols = |ctx: &Ctx, pts: &[OMPoint]| -> Vec<Cols> { pts.iter().map(|x| ctx.unit_columns(x.as_matrix(), None)).collect() };
    let all: Vec<_> = episode.support().iter().chain(episode.query()).collect();
    let mut prob = Problem {
        config,
        labels: all.iter().map(|s| s.label).collect(),
        n_support: episode.support().len(),
        samples: all.iter().map(|s| ctx.unit_columns(&s.features, None)).collect(),
        anchors: cols(&ctx, anchors.points()),
        weights: cols(&ctx, weights.points()),
    };
    let base = prob.logs(&mut ctx);
    let step = ctx.f(super::FD_STEP);
    let steps = [step.clone(), step.neg()];
    let two_h = step.add(&step, PREC, RM);

    let mut weight_grads = Vec::new();
    for (c, w) in weights.points().iter().enumerate() {
        let (n, p) = w.shape();
        let original = prob.weights[c].clone();
        let mut g = DMatrix::zeros(n, p);
        for j in 0..p {
            for i in 0..n {
                let mut vals = Vec::new();
                for d in &steps {
                    prob.weights[c] = ctx.unit_columns(w.as_matrix(), Some(((i, j), d)));
                    let mut logs = Logs {
                        samples: base.samples.clone(),
                        weights: base.weights.clone(),
                    };
                    for (t, k) in prob.anchors.iter().enumerate() {
                        logs.weights[t][c] = ctx.log(k, &prob.weights[c], config.geometry);
                    }
                    vals.push(prob.loss(&mut ctx, &logs));
                }
                g[(i, j)] = ctx.narrow(&vals[0].sub(&vals[1], PREC, RM).div(&two_h, PREC, RM));
            }
        }
        prob.weights[c] = original;
        weight_grads.push(g);
    }

    let mut anchor_grads = Vec::new();
    for (t, k) in anchors.points().iter().enumerate() {
        let (n, p) = k.shape();
        let original = prob.anchors[t].clone();
        let mut g = DMatrix::zeros(n, p);
        for j in 0..p {
            for i in 0..n {
                let mut vals = Vec::new();
                for d in &steps {
                    prob.anchors[t] = ctx.unit_columns(k.as_matrix(), Some(((i, j), d)));
                    let (s, w) = prob.logs_at(&mut ctx, &prob.anchors[t]);
                    let mut logs = Logs {
                        samples: base.samples.clone(),
                        weights: base.weights.clone(),
                    };
                    logs.samples[t] = s;
                    logs.weights[t] = w;
                    vals.push(prob.loss(&mut ctx, &logs));
                }
                g[(i, j)] = ctx.narrow(&vals[0].sub(&vals[1], PREC, RM).div(&two_h, PREC, RM));
            }
        }
        prob.anchors[t] = original;
        anchor_grads.push(g);
    }
    GradientBundle {
        weights: weight_grads,
        anchors: anchor_grads,
    }
}

/// Loss at the given parameters; for checking against the f64 evaluation.
pub fn loss(episode: &Episode, anchors: &AnchorSet, weights: &WeightSet, config: &ClassifierConfig) -> f64 {
    let mut ctx = Ctx::new();
    let all: Vec<_> = episode.support().iter().chain(episode.query()).collect();
    let prob = Problem {
        config,
        labels: all.iter().map(|s| s.label).collect(),
        n_support: episode.support().len(),
        samples: all.iter().map(|s| ctx.unit_columns(&s.features, None)).collect(),
        anchors: anchors.points().iter().map(|x| ctx.unit_columns(x.as_matrix(), None)).collect(),
        weights: weights.points().iter().map(|x| ctx.unit_columns(x.as_matrix(), None)).collect(),
    };
    let logs = prob.logs(&mut ctx);
    let l = prob.loss(&mut ctx, &logs);
    ctx.narrow(&l)
}
