//! Recycling transferable out-of-distribution data for class-mismatched
//! semi-supervised learning.
//!
//! A labeled pool covers only a subset of the classes present in a much
//! larger unlabeled pool. The pipeline trains a feature extractor `F`,
//! classifier `C`, and domain discriminator `D` together: temporally
//! ensembled softmax scores split the unlabeled pool into in-distribution
//! and out-of-distribution subsets, each OOD example is weighed by a
//! transferability score, and the transferable ones are pulled into the
//! known-class feature space through a weighted adversarial game played
//! across a gradient reversal layer.
//!
//! Crate features: `parallel` (default) fans per-example work out over
//! rayon; disabling it yields a fully sequential build with identical
//! numerical results.

pub mod adversarial;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod exec;
pub mod metrics;
pub mod net;
pub mod rng;
pub mod scoring;
pub mod ssl;
pub mod trainer;

pub use error::{Error, Result};
