//! Reinforced attention learning for residual image classifiers.
//!
//! Attention modules act as continuous-action actors on each block's
//! feature state, per-stage recurrent critics estimate the value of every
//! attention map, and a bypass reward (how much the true-class probability
//! drops when one block's map is flattened to its mean) trains the critics.
//! Backbone, actors and critics are updated from different losses.

pub mod actors;
pub mod backbone;
pub mod critic;
pub mod data;
mod error;
pub mod layers;
pub mod optim;
pub mod oracle;
pub mod params;
pub mod reward;
pub mod trainer;

pub use backbone::{build_network, AttentionKind, BlockId, BlockOverride, Network, NetworkConfig, Overrides, Prediction};
pub use error::{Error, Result};
pub use params::{ParamGroup, ParamId, ParamStore};
