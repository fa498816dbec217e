//! Group-relative policy optimization with text-similarity rewards.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar for the common case.

pub mod checkpoint;
pub mod eval;
pub mod gradcheck;
pub mod grpo;
pub mod harness;
pub mod metrics;
pub mod optim;
pub mod policy;
pub mod scalar;
pub mod seeding;
pub mod sft;
pub mod tasks;
pub mod training;
pub mod vocab;

pub use grpo::TrainConfig;
pub use metrics::{MetricError, MetricId, MetricScore};
pub use scalar::Real;
pub use sft::SftConfig;
pub use training::{StepRecord, TrainError, TrainOutcome};
pub use vocab::{TokenId, TokenSequence, Vocabulary};

pub type NeuralPolicy64 = policy::NeuralPolicy<f64>;
pub type NeuralPolicy32 = policy::NeuralPolicy<f32>;
pub type TabularPolicy64 = policy::TabularPolicy<f64>;
pub type TabularPolicy32 = policy::TabularPolicy<f32>;
pub type AnyPolicy64 = policy::AnyPolicy<f64>;
pub type AdamW64 = optim::AdamW<f64>;
pub type Checkpoint64 = checkpoint::Checkpoint<f64>;
