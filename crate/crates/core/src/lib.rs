//! Kernel preference models and Shapley explanations of their preferences.
//!
//! Typical flow: load or generate a [`Dataset`], fit a [`PreferenceModel`]
//! with [`models::train_model`], then attribute its preferences to features
//! with the functions in [`shapley`].

pub mod data;
pub mod error;
pub mod kernel;
pub mod linalg;
pub mod models;
pub mod shapley;
pub mod valuefns;

pub use data::{Dataset, FeatureTable, Match};
pub use error::{PrefShapError, Result};
pub use kernel::{CoalitionMask, FeatureKind, KernelParams};
pub use models::{ModelKind, PreferenceModel, Query, TrainConfig};
pub use shapley::{ExplainConfig, ExplainMode, Explanation};
pub use valuefns::{CmeConfig, CmeSolver, Reference, ValueBatch};

/// Version stamped into every file this crate writes.
pub const FORMAT_VERSION: u32 = 1;
