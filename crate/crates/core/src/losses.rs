//! Regression losses and their gradients with respect to the prediction.
//!
//! All losses average over every entry of the `m × n` prediction matrix
//! (batch rows times labels). Residuals are oriented `e = target − pred`.
//!
//! The check loss for multi-output targets is normalized by `m·n`, extending
//! the single-output `1/m` convention the same way multivariate MAE does.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LossSpec {
    Mae,
    Mse,
    /// Pinball loss for the `tau` quantile, `0 < tau < 1`.
    Check { tau: f64 },
}

impl LossSpec {
    pub fn check(tau: f64) -> Result<Self> {
        validate_tau(tau)?;
        Ok(LossSpec::Check { tau })
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossSpec::Mae => "mae",
            LossSpec::Mse => "mse",
            LossSpec::Check { .. } => "check",
        }
    }

    pub fn tau(&self) -> Option<f64> {
        match self {
            LossSpec::Check { tau } => Some(*tau),
            _ => None,
        }
    }

    pub fn value(&self, pred: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> Result<f64> {
        match *self {
            LossSpec::Mae => mae(pred, target),
            LossSpec::Mse => mse(pred, target),
            LossSpec::Check { tau } => check_loss(pred, target, tau),
        }
    }

    pub fn gradient(
        &self,
        pred: ArrayView2<'_, f64>,
        target: ArrayView2<'_, f64>,
    ) -> Result<Array2<f64>> {
        match *self {
            LossSpec::Mae => mae_grad(pred, target),
            LossSpec::Mse => mse_grad(pred, target),
            LossSpec::Check { tau } => check_grad(pred, target, tau),
        }
    }
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossSpec::Check { tau } => write!(f, "check:{tau}"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for LossSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.split_once(':') {
            None if lower == "mae" => Ok(LossSpec::Mae),
            None if lower == "mse" => Ok(LossSpec::Mse),
            Some(("check" | "quantile", tau)) => {
                let tau: f64 = tau
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("bad quantile `{tau}`")))?;
                LossSpec::check(tau)
            }
            _ => Err(Error::InvalidConfig(format!(
                "unknown loss `{s}` (expected mae, mse or check:<tau>)"
            ))),
        }
    }
}

impl TryFrom<String> for LossSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LossSpec> for String {
    fn from(loss: LossSpec) -> String {
        loss.to_string()
    }
}

pub(crate) fn validate_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("quantile must lie in (0, 1), got {tau}")))
    }
}

fn check_shapes(pred: &ArrayView2<'_, f64>, target: &ArrayView2<'_, f64>) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(Error::shape(
            format!("{:?}", pred.dim()),
            format!("{:?}", target.dim()),
        ));
    }
    if pred.is_empty() {
        return Err(Error::EmptyData("loss over an empty batch".into()));
    }
    Ok(pred.len() as f64)
}

/// Pinball loss of a single residual `e = target − pred`.
#[inline]
pub fn rho(e: f64, tau: f64) -> f64 {
    if e >= 0.0 {
        tau * e
    } else {
        -(1.0 - tau) * e
    }
}

pub fn mae(pred: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> Result<f64> {
    let count = check_shapes(&pred, &target)?;
    let sum = Zip::from(&pred)
        .and(&target)
        .fold(0.0, |acc, &p, &y| acc + (p - y).abs());
    Ok(sum / count)
}

/// `sign(pred − target) / (m·n)`, with `sign(0) = 0`.
pub fn mae_grad(pred: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let count = check_shapes(&pred, &target)?;
    let scale = 1.0 / count;
    Ok(Zip::from(&pred).and(&target).map_collect(|&p, &y| {
        let d = p - y;
        if d > 0.0 {
            scale
        } else if d < 0.0 {
            -scale
        } else {
            0.0
        }
    }))
}

pub fn check_loss(pred: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>, tau: f64) -> Result<f64> {
    validate_tau(tau)?;
    let count = check_shapes(&pred, &target)?;
    let sum = Zip::from(&pred)
        .and(&target)
        .fold(0.0, |acc, &p, &y| acc + rho(y - p, tau));
    Ok(sum / count)
}

/// `∂/∂pred` of the check loss: `−τ/(m·n)` where `e ≥ 0`, `(1 − τ)/(m·n)` where `e < 0`.
pub fn check_grad(
    pred: ArrayView2<'_, f64>,
    target: ArrayView2<'_, f64>,
    tau: f64,
) -> Result<Array2<f64>> {
    validate_tau(tau)?;
    let count = check_shapes(&pred, &target)?;
    let above = -tau / count;
    let below = (1.0 - tau) / count;
    Ok(Zip::from(&pred)
        .and(&target)
        .map_collect(|&p, &y| if y - p >= 0.0 { above } else { below }))
}

pub fn mse(pred: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> Result<f64> {
    let count = check_shapes(&pred, &target)?;
    let sum = Zip::from(&pred)
        .and(&target)
        .fold(0.0, |acc, &p, &y| acc + (p - y) * (p - y));
    Ok(sum / count)
}

pub fn mse_grad(pred: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let count = check_shapes(&pred, &target)?;
    Ok(Zip::from(&pred)
        .and(&target)
        .map_collect(|&p, &y| 2.0 * (p - y) / count))
}
