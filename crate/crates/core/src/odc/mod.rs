//! Oblique distance-based classifier: initialization, tangent-space
//! posteriors, losses and prediction.

mod config;
mod episode;
mod init;
mod loss;
mod posterior;

pub use config::{AnchorInit, ClassifierConfig, WeightFn, WeightInit};
pub use episode::{Episode, Sample};
pub use init::{init_anchors, init_weights, random_anchors, random_weights, AnchorSet, WeightSet};
pub use loss::{ce_loss, mi_loss, predict, total_loss, weight_factor, LOG_FLOOR};
pub use posterior::{class_posteriors, PosteriorTensor};

pub(crate) use loss::total_loss_grad;
pub(crate) use posterior::{forward, ForwardPass};
