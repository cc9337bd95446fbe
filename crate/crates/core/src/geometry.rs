//! Oblique manifold `OB(n, p)`: n×p matrices with unit-norm columns, i.e. a
//! product of p unit spheres in ℝⁿ.
//!
//! Two flavours of the exponential and logarithmic maps are provided:
//!
//! * [`GeometryMode::Exact`] acts column by column with the sphere maps, which
//!   is the true product-of-spheres geometry.
//! * [`GeometryMode::Paper`] uses a single Frobenius norm over the whole
//!   matrix. It coincides with `Exact` for `p = 1`; for `p > 1` the raw
//!   exponential leaves the manifold, so its output is re-projected.
//!
//! Angles between columns are computed as `atan2(‖x − ⟨k,x⟩k‖, ⟨k,x⟩)`, which
//! equals `arccos(clamp(⟨k,x⟩, −1, 1))` on the manifold but keeps full
//! precision near 0 and π.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column-norm tolerance for manifold membership.
pub const UNIT_NORM_TOL: f64 = 1e-9;
/// Columns shorter than this cannot be projected.
pub const DEGENERATE_NORM: f64 = 1e-12;
/// Tangency violations above this (relative to the column norm) are rejected.
pub const TANGENT_TOL: f64 = 1e-6;
/// Below this geodesic distance two points are treated as coincident.
pub const COINCIDENT_DIST: f64 = 1e-9;
/// `⟨k, x⟩ + 1` at or below this marks an antipodal column pair.
pub const ANTIPODAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum GeometryMode {
    Paper,
    #[default]
    Exact,
}

/// A point on the oblique manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct OMPoint {
    data: DMatrix<f64>,
}

impl OMPoint {
    /// Wraps `data`, checking that it is finite with unit-norm columns.
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::ShapeMismatch {
                expected: (1, 1),
                actual: data.shape(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("manifold point"));
        }
        for (j, col) in data.column_iter().enumerate() {
            let norm = col.norm();
            if (norm - 1.0).abs() >= UNIT_NORM_TOL {
                return Err(Error::NotOnManifold { column: j, norm });
            }
        }
        Ok(Self { data })
    }

    /// Draws a point by projecting a matrix of standard normal entries.
    pub fn random<R: Rng + ?Sized>(n: usize, p: usize, rng: &mut R) -> Result<Self> {
        let raw = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        project_to_om(&raw)
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.shape()
    }

    /// `max_j |‖col_j‖ − 1|`.
    pub fn column_norm_residual(&self) -> f64 {
        column_norm_residual(&self.data)
    }
}

pub(crate) fn column_norm_residual(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| (c.norm() - 1.0).abs())
        .fold(0.0, f64::max)
}

/// A tangent vector together with the point it is attached to.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    data: DMatrix<f64>,
    base: OMPoint,
}

impl TangentVector {
    pub fn new(base: OMPoint, data: DMatrix<f64>) -> Result<Self> {
        check_same_shape(base.as_matrix(), &data)?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tangent vector"));
        }
        check_tangent(base.as_matrix(), &data)?;
        Ok(Self { data, base })
    }

    pub fn zeros(base: OMPoint) -> Self {
        let (n, p) = base.shape();
        Self {
            data: DMatrix::zeros(n, p),
            base,
        }
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    pub fn base(&self) -> &OMPoint {
        &self.base
    }

    /// `max_j |⟨base_j, data_j⟩|`.
    pub fn tangency_residual(&self) -> f64 {
        self.base
            .as_matrix()
            .column_iter()
            .zip(self.data.column_iter())
            .map(|(k, h)| k.dot(&h).abs())
            .fold(0.0, f64::max)
    }
}

fn check_same_shape(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            expected: a.shape(),
            actual: b.shape(),
        });
    }
    Ok(())
}

fn check_tangent(base: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<()> {
    for (j, (k, v)) in base.column_iter().zip(h.column_iter()).enumerate() {
        let residual = k.dot(&v).abs();
        if residual > TANGENT_TOL * v.norm().max(1.0) {
            return Err(Error::NotTangent { column: j, residual });
        }
    }
    Ok(())
}

/// Normalizes every column to unit length.
pub fn project_to_om(x: &DMatrix<f64>) -> Result<OMPoint> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::ShapeMismatch {
            expected: (1, 1),
            actual: x.shape(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("projection input"));
    }
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let norm = col.norm();
        if norm < DEGENERATE_NORM {
            return Err(Error::DegenerateColumn { column: j, norm });
        }
        col /= norm;
    }
    Ok(OMPoint { data: out })
}

/// `V − K·diag(Kᵀ V)`: removes the component of each column along the base.
pub fn tangent_project(k: &OMPoint, v: &DMatrix<f64>) -> Result<TangentVector> {
    check_same_shape(k.as_matrix(), v)?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("tangent projection input"));
    }
    let data = project_columns(k.as_matrix(), v);
    Ok(TangentVector {
        data,
        base: k.clone(),
    })
}

pub(crate) fn project_columns(k: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = v.clone();
    for (kc, mut oc) in k.column_iter().zip(out.column_iter_mut()) {
        let d = kc.dot(&oc);
        oc.axpy(-d, &kc, 1.0);
    }
    out
}

/// Per-column scalars shared by distance, log map and its derivative.
#[derive(Clone, Copy)]
struct ColumnAngles {
    cos: f64,
    sin: f64,
    angle: f64,
}

/// Writes `u_j = x_j − ⟨k_j,x_j⟩k_j` into `resid` and returns the scalars of
/// every column.
fn residuals(k: &DMatrix<f64>, x: &DMatrix<f64>, resid: &mut DMatrix<f64>) -> Vec<ColumnAngles> {
    let n = k.nrows();
    resid.copy_from(x);
    let (ks, us) = (k.as_slice(), resid.as_mut_slice());
    ks.chunks_exact(n)
        .zip(us.chunks_exact_mut(n))
        .map(|(kc, uc)| {
            let cos: f64 = kc.iter().zip(uc.iter()).map(|(a, b)| a * b).sum();
            let mut ss = 0.0;
            for (u, kv) in uc.iter_mut().zip(kc) {
                *u -= cos * kv;
                ss += *u * *u;
            }
            let sin = ss.sqrt();
            ColumnAngles {
                cos,
                sin,
                angle: sin.atan2(cos),
            }
        })
        .collect()
}

fn angle_norm(cols: &[ColumnAngles]) -> f64 {
    cols.iter().map(|c| c.angle * c.angle).sum::<f64>().sqrt()
}

/// Root-sum-square of the per-column great-circle angles.
pub fn geodesic_distance(k: &OMPoint, x: &OMPoint) -> Result<f64> {
    check_same_shape(k.as_matrix(), x.as_matrix())?;
    Ok(matrix_distance(k.as_matrix(), x.as_matrix()))
}

pub(crate) fn matrix_distance(k: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    let mut u = DMatrix::zeros(k.nrows(), k.ncols());
    angle_norm(&residuals(k, x, &mut u))
}

/// Follows the geodesic from `k` in direction `h`.
pub fn exp_map(k: &OMPoint, h: &TangentVector, mode: GeometryMode) -> Result<OMPoint> {
    check_same_shape(k.as_matrix(), h.as_matrix())?;
    check_tangent(k.as_matrix(), h.as_matrix())?;
    exp_matrix(k.as_matrix(), h.as_matrix(), mode)
}

pub(crate) fn exp_matrix(k: &DMatrix<f64>, h: &DMatrix<f64>, mode: GeometryMode) -> Result<OMPoint> {
    let mut out = k.clone();
    match mode {
        GeometryMode::Exact => {
            for (mut oc, hc) in out.column_iter_mut().zip(h.column_iter()) {
                let norm = hc.norm();
                if norm < DEGENERATE_NORM {
                    continue;
                }
                oc *= norm.cos();
                oc.axpy(norm.sin() / norm, &hc, 1.0);
            }
        }
        GeometryMode::Paper => {
            let norm = h.norm();
            if norm >= DEGENERATE_NORM {
                out *= norm.cos();
                out += h * (norm.sin() / norm);
            }
        }
    }
    // Re-normalizing is a no-op up to rounding in exact mode and restores
    // manifold membership for the Frobenius-norm formula.
    project_to_om(&out)
}

/// Tangent vector at `k` pointing along the shortest path towards `x`.
pub fn log_map(k: &OMPoint, x: &OMPoint, mode: GeometryMode) -> Result<TangentVector> {
    check_same_shape(k.as_matrix(), x.as_matrix())?;
    let data = log_matrix(k.as_matrix(), x.as_matrix(), mode)?;
    Ok(TangentVector {
        data,
        base: k.clone(),
    })
}

pub(crate) fn log_matrix(k: &DMatrix<f64>, x: &DMatrix<f64>, mode: GeometryMode) -> Result<DMatrix<f64>> {
    let n = k.nrows();
    let mut out = DMatrix::zeros(n, k.ncols());
    let cols = residuals(k, x, &mut out);
    if let Some(j) = cols.iter().position(|c| c.cos + 1.0 <= ANTIPODAL_TOL) {
        return Err(Error::AntipodalColumn { column: j });
    }
    let dist = angle_norm(&cols);
    if dist < COINCIDENT_DIST {
        out.fill(0.0);
        return Ok(out);
    }
    match mode {
        GeometryMode::Exact => {
            for (oc, cg) in out.as_mut_slice().chunks_exact_mut(n).zip(&cols) {
                let scale = if cg.sin > 0.0 { cg.angle / cg.sin } else { 0.0 };
                oc.iter_mut().for_each(|v| *v *= scale);
            }
        }
        GeometryMode::Paper => {
            let frob = cols.iter().map(|c| c.sin * c.sin).sum::<f64>().sqrt();
            out *= dist / frob;
        }
    }
    Ok(out)
}

/// Vector-Jacobian product of the log map.
///
/// Given `upstream = ∂L/∂Log_k(x)`, returns `(∂L/∂k, ∂L/∂x)` for the ambient
/// extension that evaluates the same formulas without assuming unit columns.
/// Callers compose with [`project_columns`] to obtain gradients of the loss
/// evaluated after column normalization.
#[cfg(test)]
pub(crate) fn log_vjp(
    k: &DMatrix<f64>,
    x: &DMatrix<f64>,
    upstream: &DMatrix<f64>,
    mode: GeometryMode,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut dk = DMatrix::zeros(k.nrows(), k.ncols());
    let mut dx = dk.clone();
    log_vjp_accumulate(k, x, upstream, mode, &mut dk, Some(&mut dx));
    (dk, dx)
}

/// [`log_vjp`] that adds into `dk` and, if given, `dx`.
pub(crate) fn log_vjp_accumulate(
    k: &DMatrix<f64>,
    x: &DMatrix<f64>,
    upstream: &DMatrix<f64>,
    mode: GeometryMode,
    dk: &mut DMatrix<f64>,
    mut dx: Option<&mut DMatrix<f64>>,
) {
    let n = k.nrows();
    let mut resid = DMatrix::zeros(n, k.ncols());
    let cols = residuals(k, x, &mut resid);
    let dist = angle_norm(&cols);
    let us = resid.as_slice();
    let gs = upstream.as_slice();

    // Paper mode couples the columns through ‖U‖_F and Σ gⱼᵀuⱼ.
    let (frob, m) = match mode {
        GeometryMode::Paper => (
            cols.iter().map(|c| c.sin * c.sin).sum::<f64>().sqrt(),
            gs.iter().zip(us).map(|(a, b)| a * b).sum::<f64>(),
        ),
        GeometryMode::Exact => (0.0, 0.0),
    };

    let mut gu = vec![0.0; n];
    for (j, cg) in cols.iter().enumerate() {
        let range = j * n..(j + 1) * n;
        let (g, u) = (&gs[range.clone()], &us[range.clone()]);
        // Coefficients of gu = a·g + b·u, plus the direct cosine gradient.
        let (a, b, grad_cos) = if dist < COINCIDENT_DIST {
            // First-order behaviour at coincidence: Log ≈ u.
            (1.0, 0.0, 0.0)
        } else {
            match mode {
                GeometryMode::Exact if cg.sin < DEGENERATE_NORM => (1.0, 0.0, 0.0),
                GeometryMode::Exact => {
                    let s = cg.sin;
                    let r = s * s + cg.cos * cg.cos;
                    let gdotu: f64 = g.iter().zip(u).map(|(a, b)| a * b).sum();
                    let ratio = cg.angle / s;
                    let bs = gdotu / s;
                    // θ/s·(g − (gᵀu/s²)u) + (gᵀu/s)·c/(r·s)·u
                    (ratio, -ratio * gdotu / (s * s) + bs * cg.cos / (r * s), -bs * s / r)
                }
                GeometryMode::Paper => {
                    let scale = dist / frob;
                    let mut b = -m * dist / (frob * frob * frob);
                    let mut grad_cos = 0.0;
                    if cg.sin >= DEGENERATE_NORM {
                        let grad_angle = (m / frob) * (cg.angle / dist);
                        let r = cg.sin * cg.sin + cg.cos * cg.cos;
                        b += grad_angle * cg.cos / (r * cg.sin);
                        grad_cos = -grad_angle * cg.sin / r;
                    }
                    (scale, b, grad_cos)
                }
            }
        };
        for ((v, gi), ui) in gu.iter_mut().zip(g).zip(u) {
            *v = a * gi + b * ui;
        }

        // u = x − c·k, c = kᵀx.
        let kc = &k.as_slice()[range.clone()];
        let xc = &x.as_slice()[range.clone()];
        let gc = grad_cos - kc.iter().zip(&gu).map(|(a, b)| a * b).sum::<f64>();
        for ((d, gi), xi) in dk.as_mut_slice()[range.clone()].iter_mut().zip(&gu).zip(xc) {
            *d += -cg.cos * gi + gc * xi;
        }
        if let Some(dx) = dx.as_deref_mut() {
            for ((d, gi), ki) in dx.as_mut_slice()[range].iter_mut().zip(&gu).zip(kc) {
                *d += gi + gc * ki;
            }
        }
    }
}
