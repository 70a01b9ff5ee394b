//! Feed-forward regression networks trained with Lipschitz adaptive learning
//! rates for MAE and quantile (check) losses.
//!
//! The learning rate for each epoch is the inverse of an upper bound on the
//! output-layer gradient, computed from the largest penultimate activation
//! over the training set. See [`lipschitz`] for the bound itself and
//! [`trainer::train`] for how it drives mini-batch gradient descent.

pub mod baselines;
pub mod bench;
pub mod data;
mod error;
pub mod lipschitz;
pub mod losses;
pub mod nn;
pub mod presets;
pub mod trainer;

pub use error::{Error, Result};
pub use lipschitz::{learning_rate, lipschitz_constant, penultimate_max, LipschitzInputs, LrPolicy, StepSize};
pub use losses::LossSpec;
pub use nn::{ActivationKind, HiddenLayer, Mode, Network, NetworkSpec};
pub use trainer::{train, RunRecord, TrainConfig};
