use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// One region matrix `X*` with its class index.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: DMatrix<f64>,
    pub label: usize,
}

impl Sample {
    pub fn new(features: DMatrix<f64>, label: usize) -> Self {
        Self { features, label }
    }
}

/// A c-way k_S-shot task. Query labels are only read when scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    support: Vec<Sample>,
    query: Vec<Sample>,
    ways: usize,
    shots: usize,
    queries: usize,
}

impl Episode {
    /// Validates class balance and shapes; `shots` and `queries` are
    /// inferred from the set sizes.
    pub fn new(ways: usize, support: Vec<Sample>, query: Vec<Sample>) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidEpisode(msg));
        if ways == 0 {
            return bad("ways must be at least 1".into());
        }
        if support.is_empty() || !support.len().is_multiple_of(ways) {
            return bad(format!("{} support samples do not split over {ways} classes", support.len()));
        }
        if !query.len().is_multiple_of(ways) {
            return bad(format!("{} query samples do not split over {ways} classes", query.len()));
        }
        let shots = support.len() / ways;
        let queries = query.len() / ways;
        let shape = support[0].features.shape();
        if shape.0 == 0 || shape.1 == 0 {
            return bad("empty feature matrix".into());
        }
        for s in support.iter().chain(&query) {
            if s.label >= ways {
                return bad(format!("label {} out of range for {ways} ways", s.label));
            }
            if s.features.shape() != shape {
                return Err(Error::ShapeMismatch {
                    expected: shape,
                    actual: s.features.shape(),
                });
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("episode features"));
            }
        }
        for k in 0..ways {
            let ns = support.iter().filter(|s| s.label == k).count();
            let nq = query.iter().filter(|s| s.label == k).count();
            if ns != shots || nq != queries {
                return bad(format!(
                    "class {k} has {ns} support / {nq} query samples, expected {shots} / {queries}"
                ));
            }
        }
        Ok(Self {
            support,
            query,
            ways,
            shots,
            queries,
        })
    }

    pub fn support(&self) -> &[Sample] {
        &self.support
    }

    pub fn query(&self) -> &[Sample] {
        &self.query
    }

    pub fn ways(&self) -> usize {
        self.ways
    }

    pub fn shots(&self) -> usize {
        self.shots
    }

    pub fn queries_per_class(&self) -> usize {
        self.queries
    }

    /// `(n, p)` of every feature matrix.
    pub fn feature_shape(&self) -> (usize, usize) {
        self.support[0].features.shape()
    }

    /// Support then query, the sample order used by posterior tensors.
    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.support.iter().chain(&self.query)
    }

    pub fn query_labels(&self) -> Vec<usize> {
        self.query.iter().map(|s| s.label).collect()
    }
}
