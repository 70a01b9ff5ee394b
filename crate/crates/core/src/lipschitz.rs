//! Lipschitz adaptive learning rates.
//!
//! For MAE and check loss the gradient of the loss with respect to any
//! output-layer weight is bounded by
//!
//! ```text
//!   max |∂E/∂W[L]| ≤ max|∂E/∂a[L]| · max|∂a[L]/∂z[L]| · max|a[L-1]|
//! ```
//!
//! With `|∂a/∂z| ≤ 1` at the output and `K_z = max |a[L-1]|` this gives
//! `L = K_z / (m·n)` for MAE and `L = K_z · max(τ, 1−τ) / (m·n)` for the check
//! loss, where `m` is the batch size and `n` the number of labels. The adaptive
//! step is `η = 1 / L`, recomputed at the start of every epoch.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::nn::{Mode, Network};

pub const DEFAULT_ETA_MAX: f64 = 10.0;
pub const DEFAULT_ETA_MIN: f64 = 1e-4;

/// Largest absolute penultimate activation over `x`, with dropout disabled.
///
/// For a network without hidden layers the penultimate activations are the
/// input features themselves.
pub fn penultimate_max(net: &Network, x: ArrayView2<'_, f64>) -> Result<f64> {
    if x.nrows() == 0 {
        return Err(Error::EmptyData("K_z needs at least one training row".into()));
    }
    let trace = net.forward(x, Mode::Eval)?;
    Ok(max_abs(trace.penultimate().view()))
}

pub(crate) fn max_abs(a: ArrayView2<'_, f64>) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzInputs {
    /// `K_z`, the largest absolute penultimate activation.
    pub kz: f64,
    /// Configured batch size `m`.
    pub batch_size: usize,
    /// Number of labels `n`.
    pub labels: usize,
    pub loss: LossSpec,
}

pub fn lipschitz_constant(inp: &LipschitzInputs) -> Result<f64> {
    if inp.batch_size == 0 || inp.labels == 0 {
        return Err(Error::InvalidConfig(
            "batch size and label count must be positive".into(),
        ));
    }
    if !(inp.kz >= 0.0 && inp.kz.is_finite()) {
        return Err(Error::InvalidConfig(format!("K_z must be finite and ≥ 0, got {}", inp.kz)));
    }
    let per_entry = inp.kz / (inp.batch_size as f64 * inp.labels as f64);
    match inp.loss {
        LossSpec::Mae => Ok(per_entry),
        LossSpec::Check { tau } => Ok(per_entry * tau.max(1.0 - tau)),
        LossSpec::Mse => Err(Error::UnsupportedLoss("mse")),
    }
}

/// Step-size policy, evaluated once per epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LrPolicy {
    Constant {
        eta: f64,
    },
    /// `η = clamp(1/L, eta_min, eta_max)`.
    Lalr {
        #[serde(default = "default_eta_max")]
        eta_max: f64,
        #[serde(default = "default_eta_min")]
        eta_min: f64,
    },
}

fn default_eta_max() -> f64 {
    DEFAULT_ETA_MAX
}

fn default_eta_min() -> f64 {
    DEFAULT_ETA_MIN
}

impl Default for LrPolicy {
    fn default() -> Self {
        LrPolicy::lalr()
    }
}

impl LrPolicy {
    pub fn constant(eta: f64) -> Self {
        LrPolicy::Constant { eta }
    }

    pub fn lalr() -> Self {
        LrPolicy::Lalr {
            eta_max: DEFAULT_ETA_MAX,
            eta_min: DEFAULT_ETA_MIN,
        }
    }

    pub fn is_adaptive(&self) -> bool {
        matches!(self, LrPolicy::Lalr { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LrPolicy::Constant { eta } if eta.is_finite() && eta >= 0.0 => Ok(()),
            LrPolicy::Constant { eta } => Err(Error::InvalidLearningRate(eta)),
            LrPolicy::Lalr { eta_max, eta_min }
                if eta_min > 0.0 && eta_min <= eta_max && eta_max.is_finite() =>
            {
                Ok(())
            }
            LrPolicy::Lalr { eta_max, eta_min } => Err(Error::InvalidConfig(format!(
                "LALR bounds need 0 < eta_min ≤ eta_max, got [{eta_min}, {eta_max}]"
            ))),
        }
    }
}

/// A learning rate together with whether clamping changed it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSize {
    pub eta: f64,
    pub clamped: bool,
}

pub fn learning_rate(policy: &LrPolicy, lipschitz: f64) -> StepSize {
    match *policy {
        LrPolicy::Constant { eta } => StepSize { eta, clamped: false },
        LrPolicy::Lalr { eta_max, eta_min } => {
            if !(lipschitz > 0.0) {
                return StepSize {
                    eta: eta_max,
                    clamped: true,
                };
            }
            let raw = 1.0 / lipschitz;
            let eta = raw.clamp(eta_min, eta_max);
            StepSize {
                eta,
                clamped: eta != raw,
            }
        }
    }
}
