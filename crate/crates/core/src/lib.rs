//! Transductive few-shot classification on the oblique manifold.
//!
//! Feature maps are turned into region matrices by [`rsspp`], embedded on the
//! oblique manifold (matrices with unit-norm columns, see [`geometry`]) and
//! classified by a distance-based classifier ([`odc`]) whose class weights and
//! tangent anchors are fine-tuned per episode with Riemannian SGD ([`rsgd`]).
//! [`harness`] samples and scores episodes from stored or synthetic features.

pub mod cli;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod odc;
pub mod rsgd;
pub mod rsspp;

pub use error::{Error, Result};
pub use geometry::{GeometryMode, OMPoint, TangentVector};
pub use odc::{ClassifierConfig, Episode, Sample};
pub use rsgd::{fit, FitReport};
