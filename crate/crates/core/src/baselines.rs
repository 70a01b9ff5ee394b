//! Linear reference models: OLS thresholds, linear quantile regression and
//! AIC under the asymmetric Laplace likelihood.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::lipschitz::{learning_rate, lipschitz_constant, penultimate_max, LipschitzInputs, LrPolicy};
use crate::losses::{self, rho, LossSpec};
use crate::nn::{ActivationKind, Dense, Mode, Network, NetworkSpec};
use crate::trainer::RunRecord;

/// Diagonal jitter added to the normal equations when they are singular.
pub const RIDGE_JITTER: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FitKind {
    Ols,
    QuantileSubgradient { tau: f64 },
}

/// Affine model `y = [1, x] · weights`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    /// `(d + 1) × labels`, intercept in row 0.
    pub weights: Array2<f64>,
    pub fit_kind: FitKind,
    /// Optimizer iterations (0 for closed-form fits).
    pub iterations: usize,
}

impl LinearModel {
    pub fn intercept(&self) -> ndarray::ArrayView1<'_, f64> {
        self.weights.row(0)
    }

    pub fn slopes(&self) -> ArrayView2<'_, f64> {
        self.weights.slice(ndarray::s![1.., ..])
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() + 1 != self.weights.nrows() {
            return Err(Error::shape(
                format!("{} features", self.weights.nrows() - 1),
                format!("{} features", x.ncols()),
            ));
        }
        Ok(x.dot(&self.slopes()) + &self.intercept())
    }

    /// Parameter count, used as `k` in AIC.
    pub fn parameter_count(&self) -> usize {
        self.weights.len()
    }
}

fn check_design(x: &ArrayView2<'_, f64>, y: &ArrayView2<'_, f64>) -> Result<()> {
    if x.nrows() != y.nrows() {
        return Err(Error::shape(format!("{} target rows", x.nrows()), format!("{} target rows", y.nrows())));
    }
    if y.ncols() == 0 {
        return Err(Error::EmptyData("no target columns".into()));
    }
    if x.nrows() < x.ncols() + 1 {
        return Err(Error::EmptyData(format!(
            "{} rows cannot determine {} coefficients",
            x.nrows(),
            x.ncols() + 1
        )));
    }
    Ok(())
}

/// Least squares with an intercept, one independent fit per label column.
pub fn ols_fit(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<LinearModel> {
    check_design(&x, &y)?;
    let (n, d) = x.dim();
    let p = d + 1;
    let design = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { x[[i, j - 1]] });
    let gram = design.transpose() * &design;
    let chol = match gram.clone().cholesky() {
        Some(c) => c,
        None => {
            let mut jittered = gram;
            for j in 0..p {
                jittered[(j, j)] += RIDGE_JITTER;
            }
            jittered.cholesky().ok_or(Error::RankDeficient)?
        }
    };
    let mut weights = Array2::zeros((p, y.ncols()));
    for (k, col) in y.axis_iter(Axis(1)).enumerate() {
        let rhs = design.transpose() * DVector::from_iterator(n, col.iter().copied());
        let w = chol.solve(&rhs);
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::RankDeficient);
        }
        for j in 0..p {
            weights[[j, k]] = w[j];
        }
    }
    Ok(LinearModel { weights, fit_kind: FitKind::Ols, iterations: 0 })
}

/// MAE of the OLS fit on `train`; the epochs-to-threshold target.
pub fn ols_threshold(train: &Dataset) -> Result<f64> {
    let model = ols_fit(train.x.view(), train.y.view())?;
    let pred = model.predict(train.x.view())?;
    losses::mae(pred.view(), train.y.view())
}

/// Smallest training loss seen in `record`.
pub fn min_loss_threshold(record: &RunRecord) -> Result<f64> {
    record
        .rows
        .iter()
        .map(|r| r.train_loss)
        .reduce(f64::min)
        .ok_or_else(|| Error::EmptyData("run record has no epochs".into()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantileFitOptions {
    pub max_iterations: usize,
    /// Stop once a step moves the weights less than this, or once the best loss
    /// improves by less than `tolerance` (relative) over `stall_window` iterations.
    pub tolerance: f64,
    pub stall_window: usize,
}

impl Default for QuantileFitOptions {
    fn default() -> Self {
        Self { max_iterations: 100_000, tolerance: 1e-7, stall_window: 1_000 }
    }
}

/// Linear quantile regression by full-batch subgradient descent on a network
/// without hidden layers.
///
/// The base step is the LALR rate for a batch of all rows; iteration `t` uses
/// `η / √t`, and the best iterate is returned, since a fixed step never
/// settles on a piecewise-linear objective.
pub fn linear_qr_fit(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, tau: f64) -> Result<LinearModel> {
    linear_qr_fit_with(x, y, tau, &QuantileFitOptions::default())
}

pub fn linear_qr_fit_with(
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    tau: f64,
    opts: &QuantileFitOptions,
) -> Result<LinearModel> {
    let loss = LossSpec::check(tau)?;
    check_design(&x, &y)?;
    let (n, d) = x.dim();
    let labels = y.ncols();
    let spec = NetworkSpec::new(d, labels, ActivationKind::Linear);
    let mut net = Network::from_layers(
        spec,
        vec![Dense { weights: Array2::zeros((d, labels)), bias: Array1::zeros(labels) }],
    )?;

    let l = lipschitz_constant(&LipschitzInputs {
        kz: penultimate_max(&net, x)?,
        batch_size: n,
        labels,
        loss,
    })?;
    let base = learning_rate(&LrPolicy::lalr(), l).eta;

    let mut best = net.layers()[0].clone();
    let mut best_loss = f64::INFINITY;
    let mut checkpoint = f64::INFINITY;
    let mut grad_norm = f64::INFINITY;
    for t in 1..=opts.max_iterations {
        let trace = net.forward(x, Mode::Eval)?;
        let current = loss.value(trace.output().view(), y)?;
        if current < best_loss {
            best_loss = current;
            best = net.layers()[0].clone();
        }
        if t % opts.stall_window == 0 {
            if checkpoint.is_finite() && checkpoint - best_loss <= opts.tolerance * checkpoint.abs() {
                return Ok(to_linear(&best, tau, t));
            }
            checkpoint = best_loss;
        }
        let d_out = loss.gradient(trace.output().view(), y)?;
        let grads = net.backward(&trace, d_out.view())?;
        let eta = base / (t as f64).sqrt();
        grad_norm = grads.l2_norm();
        if eta * grad_norm < opts.tolerance {
            return Ok(to_linear(&best, tau, t));
        }
        net.apply_update(&grads, eta)?;
    }
    Err(Error::NotConverged { iterations: opts.max_iterations, grad_norm })
}

fn to_linear(layer: &Dense, tau: f64, iterations: usize) -> LinearModel {
    let (d, labels) = layer.weights.dim();
    let mut weights = Array2::zeros((d + 1, labels));
    weights.row_mut(0).assign(&layer.bias);
    weights.slice_mut(ndarray::s![1.., ..]).assign(&layer.weights);
    LinearModel { weights, fit_kind: FitKind::QuantileSubgradient { tau }, iterations }
}

/// AIC of a quantile fit under the asymmetric Laplace likelihood with the
/// scale profiled out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AicReport {
    /// `None` when every residual is zero: the profiled likelihood is unbounded.
    pub aic: Option<f64>,
    pub tau: f64,
    pub k: usize,
    pub n_obs: usize,
    pub mean_check_loss: f64,
}

/// `σ̂ = mean ρ_τ(e)`, `log L = n·log(τ(1−τ)) − n·log σ̂ − n`, `AIC = −2 log L + 2k`.
pub fn aic_ald(residuals: &[f64], tau: f64, k: usize) -> Result<AicReport> {
    crate::losses::validate_tau(tau)?;
    let n = residuals.len();
    if n == 0 {
        return Err(Error::EmptyData("AIC needs at least one residual".into()));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidConfig(format!("AIC needs 1 ≤ k ≤ n, got k={k}, n={n}")));
    }
    let sigma = residuals.iter().map(|&e| rho(e, tau)).sum::<f64>() / n as f64;
    let aic = (sigma > 0.0).then(|| {
        let nf = n as f64;
        let log_l = nf * (tau * (1.0 - tau)).ln() - nf * sigma.ln() - nf;
        -2.0 * log_l + 2.0 * k as f64
    });
    Ok(AicReport { aic, tau, k, n_obs: n, mean_check_loss: sigma })
}

/// Residuals `target − pred`, flattened row-major.
pub fn residuals(pred: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    if pred.dim() != target.dim() {
        return Err(Error::shape(format!("{:?}", target.dim()), format!("{:?}", pred.dim())));
    }
    Ok(target.iter().zip(pred.iter()).map(|(y, p)| y - p).collect())
}
