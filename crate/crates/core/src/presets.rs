//! Named experiment specs for the benchmark families, mirrored by the TOML
//! files under `presets/`.

use crate::bench::{Architecture, ExperimentSpec, ThresholdSource};
use crate::losses::LossSpec;
use crate::nn::ActivationKind;

/// Quantile levels of the real-data quantile comparisons.
pub const QUANTILE_TAUS: [f64; 2] = [0.05, 0.95];
/// Quantile levels of the synthetic coverage study.
pub const COVERAGE_TAUS: [f64; 5] = [0.05, 0.3, 0.5, 0.7, 0.95];

fn relu_softsign(widths: &[usize]) -> Architecture {
    Architecture::new(widths, ActivationKind::Relu, ActivationKind::SoftSign)
}

pub fn california_mae() -> ExperimentSpec {
    ExperimentSpec::new("california-mae", "california_housing", relu_softsign(&[20, 15]), LossSpec::Mae, 256, 2500)
}

/// [`california_mae`] on a fixed 25% row subsample, for quicker checks.
pub fn california_mae_quarter() -> ExperimentSpec {
    let mut spec = california_mae();
    spec.name = "california-mae-quarter".into();
    spec.subsample = Some(0.25);
    spec
}

pub fn boston_mae() -> ExperimentSpec {
    let mut spec = ExperimentSpec::new("boston-mae", "boston_housing", relu_softsign(&[20]), LossSpec::Mae, 8, 1000);
    spec.threshold = ThresholdSource::MinLossHeuristic;
    spec
}

/// Two-target regression; the data file is not bundled.
pub fn energy_mae() -> ExperimentSpec {
    let mut spec = ExperimentSpec::new("energy-mae", "energy_efficiency", relu_softsign(&[50]), LossSpec::Mae, 64, 2000);
    spec.threshold = ThresholdSource::MinLossHeuristic;
    spec
}

fn quantile(mut spec: ExperimentSpec, name: &str, epochs: usize) -> ExperimentSpec {
    spec.name = name.into();
    spec.loss = LossSpec::Check { tau: 0.5 };
    spec.epochs = epochs;
    spec.threshold = ThresholdSource::MinLossHeuristic;
    spec
}

/// Check-loss comparison; the loss's `tau` is replaced per quantile level.
pub fn california_quantiles() -> ExperimentSpec {
    quantile(california_mae(), "california-check", 1000)
}

pub fn california_quantiles_quarter() -> ExperimentSpec {
    let mut spec = quantile(california_mae_quarter(), "california-check-quarter", 1000);
    spec.subsample = Some(0.25);
    spec
}

/// Narrower than the MAE network, with larger batches; the deeper one overfits here.
pub fn boston_quantiles() -> ExperimentSpec {
    let mut spec = quantile(boston_mae(), "boston-check", 1000);
    spec.architecture = relu_softsign(&[15]);
    spec.batch_size = 256;
    spec
}

pub fn energy_quantiles() -> ExperimentSpec {
    quantile(energy_mae(), "energy-check", 2000)
}

/// Coverage study: 10⁴ training and 10⁴ test rows, held out as the validation half.
pub fn synthetic_quantiles() -> ExperimentSpec {
    let arch = Architecture::new(&[10, 5], ActivationKind::SoftPlus, ActivationKind::Linear);
    let mut spec = ExperimentSpec::new("synthetic-check", "synthetic", arch, LossSpec::Check { tau: 0.5 }, 64, 3000);
    spec.threshold = ThresholdSource::MinLossHeuristic;
    spec.validation_fraction = 0.5;
    spec
}

/// [`california_mae`] with the 15-hidden-layer dropout network.
pub fn deep15() -> ExperimentSpec {
    let mut spec = california_mae();
    spec.name = "california-deep15".into();
    spec.architecture = Architecture::deep15();
    spec
}

/// Every preset, keyed by the file stem of its TOML mirror.
pub fn all() -> Vec<(&'static str, ExperimentSpec)> {
    vec![
        ("california_mae", california_mae()),
        ("california_mae_quarter", california_mae_quarter()),
        ("boston_mae", boston_mae()),
        ("energy_mae", energy_mae()),
        ("california_quantiles", california_quantiles()),
        ("california_quantiles_quarter", california_quantiles_quarter()),
        ("boston_quantiles", boston_quantiles()),
        ("energy_quantiles", energy_quantiles()),
        ("synthetic_quantiles", synthetic_quantiles()),
        ("deep15", deep15()),
    ]
}
