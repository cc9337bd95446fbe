//! Episodic evaluation over feature stores.

mod eval;
mod sampling;
mod store;
mod synth;

pub use eval::{episode_seeds, evaluate, mean_ci95, run_episode, sweep, EvalReport, Protocol, SweepAxes};
pub use sampling::{draw_episode, sample_episode, EpisodeDraw};
pub use store::{FeatureStore, StoreClass, StoreLayout, FLAG_POOLED, FLAG_SPLIT_HALVES, MAGIC, VERSION};
pub use synth::{synth_store, SynthParams};
