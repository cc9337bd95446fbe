//! Region self-attention over a spatial pyramid of max-pooled feature maps.
//!
//! One n×h×w feature map becomes an n×p matrix whose column i is an
//! attention-weighted, residual summary of pyramid level i+1.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const DENOMINATOR_GUARD: f64 = 1e-8;

/// Channel-major feature tensor: index `(c, r, col)` lives at `c·h·w + r·w + col`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidConfig(format!(
                "feature map dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch {
                expected: (channels, height * width),
                actual: (data.len(), 1),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature map"));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for r in 0..height {
                for col in 0..width {
                    data.push(f(c, r, col));
                }
            }
        }
        Self::new(channels, height, width, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, c: usize, r: usize, col: usize) -> f64 {
        self.data[(c * self.height + r) * self.width + col]
    }

    fn plane(&self, c: usize) -> &[f64] {
        let s = self.height * self.width;
        &self.data[c * s..(c + 1) * s]
    }

    /// Per-channel spatial mean, as a running mean so a constant plane
    /// averages to exactly its value.
    pub fn global_average(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.channels,
            (0..self.channels).map(|c| {
                self.plane(c)
                    .iter()
                    .enumerate()
                    .fold(0.0, |m, (i, &v)| m + (v - m) / (i + 1) as f64)
            }),
        )
    }
}

/// The pyramid levels `F_1, …, F_p`; level `i` (1-based) is n×i×i.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionFeatureSet {
    levels: Vec<FeatureMap>,
}

impl RegionFeatureSet {
    pub fn levels(&self) -> &[FeatureMap] {
        &self.levels
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }
}

/// Key, value and query vectors produced from a pyramid.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyValueQuery {
    pub keys: Vec<DVector<f64>>,
    pub values: Vec<DVector<f64>>,
    pub query: DVector<f64>,
}

/// Max-pools `f` at every level `i = 1..=p` with stride `⌊h/i⌋` and kernel
/// `h − (i−1)⌊h/i⌋` (likewise for the width), giving exactly i×i outputs.
pub fn pyramid_pool(f: &FeatureMap, p: usize) -> Result<RegionFeatureSet> {
    let limit = f.height.min(f.width);
    if p == 0 {
        return Err(Error::InvalidConfig("pyramid depth must be at least 1".into()));
    }
    if p > limit {
        return Err(Error::PyramidTooDeep { p, limit });
    }
    let levels = (1..=p).map(|i| max_pool_level(f, i)).collect();
    Ok(RegionFeatureSet { levels })
}

fn max_pool_level(f: &FeatureMap, i: usize) -> FeatureMap {
    let (h, w) = (f.height, f.width);
    let (sh, sw) = (h / i, w / i);
    let (kh, kw) = (h - (i - 1) * sh, w - (i - 1) * sw);
    let mut data = Vec::with_capacity(f.channels * i * i);
    for c in 0..f.channels {
        let plane = f.plane(c);
        for a in 0..i {
            for b in 0..i {
                let mut m = f64::NEG_INFINITY;
                for r in a * sh..a * sh + kh {
                    for col in b * sw..b * sw + kw {
                        m = m.max(plane[r * w + col]);
                    }
                }
                data.push(m);
            }
        }
    }
    FeatureMap {
        channels: f.channels,
        height: i,
        width: i,
        data,
    }
}

/// `v_i = GAP(F_i)`, `q = GAP(F_p)`, `k_i = GAP(F_i)⊙GAP(F_p)⊘GAP(F_1) + GAP(F_i)`.
pub fn encode_kqv(levels: &RegionFeatureSet) -> Result<KeyValueQuery> {
    let first = levels
        .levels
        .first()
        .ok_or_else(|| Error::InvalidConfig("empty pyramid".into()))?;
    let n = first.channels;
    if levels.levels.iter().any(|l| l.channels != n) {
        return Err(Error::InvalidConfig("pyramid levels disagree on channel count".into()));
    }
    let values: Vec<DVector<f64>> = levels.levels.iter().map(FeatureMap::global_average).collect();
    let query = values.last().expect("non-empty").clone();
    let denom = values[0].map(|d| {
        let mag = d.abs().max(DENOMINATOR_GUARD);
        if d < 0.0 {
            -mag
        } else {
            mag
        }
    });
    let keys = values
        .iter()
        .map(|v| v.component_mul(&query).component_div(&denom) + v)
        .collect();
    Ok(KeyValueQuery {
        keys,
        values,
        query,
    })
}

/// Softmax attention over the region index with a residual shortcut:
/// column i is `α_i·v_i + v_i`, `α = softmax_i(⟨q, k_i⟩/√n)`.
pub fn self_attend(kqv: &KeyValueQuery) -> Result<DMatrix<f64>> {
    let p = kqv.keys.len();
    let n = kqv.query.len();
    if p == 0 || kqv.values.len() != p {
        return Err(Error::InvalidConfig("keys and values must be non-empty and equal in number".into()));
    }
    if kqv.keys.iter().chain(&kqv.values).any(|v| v.len() != n) {
        return Err(Error::InvalidConfig("key/value length differs from query".into()));
    }
    let scale = (n as f64).sqrt();
    let logits: Vec<f64> = kqv
        .keys
        .iter()
        .map(|k| order_free_dot(&kqv.query, k) / scale)
        .collect();
    let weights = softmax(&logits);
    let mut out = DMatrix::zeros(n, p);
    for (i, (v, a)) in kqv.values.iter().zip(&weights).enumerate() {
        out.set_column(i, &(v * (1.0 + a)));
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("region attention"));
    }
    Ok(out)
}

/// Dot product summed in sorted order, so relabelling channels cannot change
/// the rounded result.
fn order_free_dot(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let mut terms: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x * y).collect();
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Full transform: pyramid pooling, encoding, attention, concatenation.
pub fn rsspp(f: &FeatureMap, p: usize) -> Result<DMatrix<f64>> {
    let levels = pyramid_pool(f, p)?;
    let kqv = encode_kqv(&levels)?;
    self_attend(&kqv)
}
