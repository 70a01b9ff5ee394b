//! Paired constant-vs-adaptive experiments and their reports.
//!
//! Every seed initializes one network; the constant and the adaptive run both
//! start from a clone of it, so any difference comes from the step-size policy.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{aic_ald, min_loss_threshold, ols_threshold, residuals, AicReport};
use crate::data::{gen_heteroscedastic, split, standardize, Dataset, SynthFunction};
use crate::error::{Error, Result};
use crate::lipschitz::{penultimate_max, LrPolicy, DEFAULT_ETA_MAX, DEFAULT_ETA_MIN};
use crate::losses::LossSpec;
use crate::nn::{ActivationKind, HiddenLayer, Network, NetworkSpec};
use crate::trainer::{self, RunRecord, RunSummary, TrainConfig, DEFAULT_VALIDATION_FRACTION};

pub const DEFAULT_CONSTANT_ETA: f64 = 0.1;
pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// Where the epochs-to-threshold target comes from.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ThresholdSource {
    /// MAE of an OLS fit on the training split.
    #[default]
    Ols,
    /// Lowest training loss reached by the constant-rate run of the same seed.
    MinLossHeuristic,
    Explicit(f64),
}

impl fmt::Display for ThresholdSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThresholdSource::Ols => f.write_str("ols"),
            ThresholdSource::MinLossHeuristic => f.write_str("heuristic"),
            ThresholdSource::Explicit(v) => write!(f, "value:{v}"),
        }
    }
}

impl FromStr for ThresholdSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "ols" => Ok(ThresholdSource::Ols),
            "heuristic" => Ok(ThresholdSource::MinLossHeuristic),
            other => match other.strip_prefix("value:").map(str::parse::<f64>) {
                Some(Ok(v)) if v.is_finite() => Ok(ThresholdSource::Explicit(v)),
                _ => Err(Error::InvalidConfig(format!(
                    "unknown threshold source `{s}` (expected ols, heuristic or value:<x>)"
                ))),
            },
        }
    }
}

impl TryFrom<String> for ThresholdSource {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ThresholdSource> for String {
    fn from(t: ThresholdSource) -> String {
        t.to_string()
    }
}

/// Which loss column is compared against the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMetric {
    #[default]
    Train,
    Validation,
}

/// Hidden layers and output activation; input and output widths come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    #[serde(default)]
    pub hidden: Vec<HiddenLayer>,
    pub output_activation: ActivationKind,
}

impl Architecture {
    pub fn new(widths: &[usize], hidden: ActivationKind, output: ActivationKind) -> Self {
        Self {
            hidden: widths.iter().map(|&w| HiddenLayer::new(w, hidden)).collect(),
            output_activation: output,
        }
    }

    /// 15 hidden layers (100 wide, then 14 × 50) with LeakyReLU and 10% dropout.
    pub fn deep15() -> Self {
        let act = ActivationKind::leaky_relu();
        let mut hidden = vec![HiddenLayer::new(100, act).with_dropout(0.1)];
        hidden.extend((0..14).map(|_| HiddenLayer::new(50, act).with_dropout(0.1)));
        Self { hidden, output_activation: ActivationKind::SoftSign }
    }

    pub fn resolve(&self, input_dim: usize, output_dim: usize) -> NetworkSpec {
        NetworkSpec {
            input_dim,
            hidden: self.hidden.clone(),
            output_dim,
            output_activation: self.output_activation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LalrBounds {
    #[serde(default = "default_eta_max")]
    pub eta_max: f64,
    #[serde(default = "default_eta_min")]
    pub eta_min: f64,
}

fn default_eta_max() -> f64 {
    DEFAULT_ETA_MAX
}

fn default_eta_min() -> f64 {
    DEFAULT_ETA_MIN
}

impl Default for LalrBounds {
    fn default() -> Self {
        Self { eta_max: DEFAULT_ETA_MAX, eta_min: DEFAULT_ETA_MIN }
    }
}

impl LalrBounds {
    pub fn policy(&self) -> LrPolicy {
        LrPolicy::Lalr { eta_max: self.eta_max, eta_min: self.eta_min }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    /// Bundled dataset name, or `synthetic`.
    pub dataset: String,
    pub architecture: Architecture,
    pub loss: LossSpec,
    pub batch_size: usize,
    /// Epoch budget per run.
    pub epochs: usize,
    #[serde(default)]
    pub threshold: ThresholdSource,
    #[serde(default)]
    pub threshold_metric: ThresholdMetric,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_constant_eta")]
    pub constant_eta: f64,
    #[serde(default)]
    pub lalr: LalrBounds,
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
    /// Keep only this fraction of rows before splitting.
    #[serde(default)]
    pub subsample: Option<f64>,
    /// End each run once it reaches the threshold instead of using the full budget.
    #[serde(default)]
    pub stop_at_threshold: bool,
}

fn default_seeds() -> Vec<u64> {
    DEFAULT_SEEDS.to_vec()
}

fn default_constant_eta() -> f64 {
    DEFAULT_CONSTANT_ETA
}

fn default_validation_fraction() -> f64 {
    DEFAULT_VALIDATION_FRACTION
}

impl ExperimentSpec {
    pub fn new(
        name: impl Into<String>,
        dataset: impl Into<String>,
        architecture: Architecture,
        loss: LossSpec,
        batch_size: usize,
        epochs: usize,
    ) -> Self {
        Self {
            name: name.into(),
            dataset: dataset.into(),
            architecture,
            loss,
            batch_size,
            epochs,
            threshold: ThresholdSource::Ols,
            threshold_metric: ThresholdMetric::Train,
            seeds: default_seeds(),
            constant_eta: DEFAULT_CONSTANT_ETA,
            lalr: LalrBounds::default(),
            validation_fraction: DEFAULT_VALIDATION_FRACTION,
            split_seed: 0,
            subsample: None,
            stop_at_threshold: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("experiment needs at least one seed".into()));
        }
        let unique: BTreeSet<_> = self.seeds.iter().collect();
        if unique.len() != self.seeds.len() {
            return Err(Error::InvalidConfig("seeds must be distinct".into()));
        }
        if let Some(f) = self.subsample {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidConfig(format!("subsample fraction must be in (0, 1], got {f}")));
            }
        }
        for policy in [LrPolicy::constant(self.constant_eta), self.lalr.policy()] {
            self.train_config(policy, 0).validate()?;
        }
        Ok(())
    }

    pub fn train_config(&self, policy: LrPolicy, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            loss: self.loss,
            lr_policy: policy,
            shuffle_seed: seed,
            threshold: None,
            stop_at_threshold: false,
            validation_fraction: self.validation_fraction,
        }
    }
}

/// Standardized train/validation splits plus the OLS threshold when requested.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub val: Dataset,
    pub ols_threshold: Option<f64>,
}

pub fn prepare(data: &Dataset, spec: &ExperimentSpec) -> Result<Prepared> {
    let base = match spec.subsample {
        Some(f) if f < 1.0 => data.subsample(f, spec.split_seed)?,
        _ => data.clone(),
    };
    let (train, val) = if spec.validation_fraction > 0.0 {
        let (val, train) = split(&base, spec.validation_fraction, spec.split_seed)?;
        (train, val)
    } else {
        let empty = base.select(&[]);
        (base, empty)
    };
    let (train, val) = if val.is_empty() {
        let (train, _, _) = standardize(&train, &[])?;
        let empty = train.select(&[]);
        (train, empty)
    } else {
        let (train, mut others, _) = standardize(&train, &[&val])?;
        (train, others.remove(0))
    };
    let ols = match spec.threshold {
        ThresholdSource::Ols => Some(ols_threshold(&train)?),
        _ => None,
    };
    Ok(Prepared { train, val, ols_threshold: ols })
}

/// Synthetic heteroscedastic data: `train` rows then `test` rows, drawn from one stream.
pub fn synthetic_dataset(train: usize, test: usize, seed: u64) -> Result<Dataset> {
    gen_heteroscedastic(train + test, seed, SynthFunction::SinRamp)
}

/// First 1-based epoch whose training loss is at or below `threshold`.
pub fn epochs_to_threshold(record: &RunRecord, threshold: f64) -> Option<usize> {
    epochs_to_threshold_by(record, threshold, ThresholdMetric::Train)
}

pub fn epochs_to_threshold_by(record: &RunRecord, threshold: f64, metric: ThresholdMetric) -> Option<usize> {
    record
        .rows
        .iter()
        .find(|r| match metric {
            ThresholdMetric::Train => r.train_loss <= threshold,
            ThresholdMetric::Validation => r.val_loss.is_some_and(|v| v <= threshold),
        })
        .map(|r| r.epoch)
}

/// Fraction of entries with `y ≤ prediction`.
pub fn coverage(net: &Network, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyData("coverage needs at least one row".into()));
    }
    let pred = net.predict(data.x.view())?;
    if pred.dim() != data.y.dim() {
        return Err(Error::shape(format!("{:?}", data.y.dim()), format!("{:?}", pred.dim())));
    }
    let below = pred.iter().zip(data.y.iter()).filter(|(p, y)| y <= p).count();
    Ok(below as f64 / pred.len() as f64)
}

/// AIC of `net` on `data` under the asymmetric Laplace likelihood at `tau`.
pub fn network_aic(net: &Network, data: &Dataset, tau: f64) -> Result<AicReport> {
    let pred = net.predict(data.x.view())?;
    aic_ald(&residuals(pred.view(), data.y.view())?, tau, net.parameter_count())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub record: Option<RunRecord>,
    /// Set when the run failed, e.g. by diverging.
    pub error: Option<String>,
    pub epochs_to_threshold: Option<usize>,
    /// Held-out quantile coverage (check loss only).
    pub coverage: Option<f64>,
    /// Training-set AIC (check loss only).
    pub aic: Option<AicReport>,
    #[serde(skip)]
    pub network: Option<Network>,
}

impl RunResult {
    fn failed(e: Error) -> Self {
        Self {
            record: None,
            error: Some(e.to_string()),
            epochs_to_threshold: None,
            coverage: None,
            aic: None,
            network: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedPair {
    pub seed: u64,
    /// Threshold applied to this seed (per-seed under the min-loss heuristic).
    pub threshold: Option<f64>,
    /// `K_z` of the shared initial weights.
    pub initial_kz: f64,
    pub constant: RunResult,
    pub adaptive: RunResult,
    /// Constant epochs over adaptive epochs, when both reached the threshold.
    pub speedup: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub n: usize,
    pub mean: Option<f64>,
    /// Sample standard deviation; absent with fewer than two values.
    pub std: Option<f64>,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { n, mean: None, std: None };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = (n > 1).then(|| {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        });
        Self { n, mean: Some(mean), std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyStats {
    pub final_train_loss: Stat,
    pub final_val_loss: Stat,
    pub epochs_to_threshold: Vec<Option<usize>>,
    /// Median over seeds, counting a miss as never; absent when that median is a miss.
    pub median_epochs: Option<f64>,
    pub reached: usize,
    pub failed: usize,
    pub coverage: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub constant: PolicyStats,
    pub adaptive: PolicyStats,
    /// Ratio of median epochs to threshold, constant over adaptive.
    pub speedup: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRecord {
    pub name: String,
    pub dataset: String,
    pub loss: LossSpec,
    pub batch_size: usize,
    pub epochs: usize,
    pub threshold_source: ThresholdSource,
    pub ols_threshold: Option<f64>,
    pub train_rows: usize,
    pub pairs: Vec<SeedPair>,
    pub aggregates: Aggregates,
}

/// Median where `None` sorts after every value; `None` if the median lands on one.
pub fn median_epochs(values: &[Option<usize>]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v: Vec<Option<usize>> = values.to_vec();
    v.sort_by_key(|e| e.unwrap_or(usize::MAX));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2].map(|e| e as f64)
    } else {
        Some((v[n / 2 - 1]? as f64 + v[n / 2]? as f64) / 2.0)
    }
}

fn policy_stats(runs: &[&RunResult]) -> PolicyStats {
    let train: Vec<f64> = runs.iter().filter_map(|r| r.record.as_ref()?.final_train_loss()).collect();
    let val: Vec<f64> = runs.iter().filter_map(|r| r.record.as_ref()?.final_val_loss()).collect();
    let cov: Vec<f64> = runs.iter().filter_map(|r| r.coverage).collect();
    let epochs: Vec<Option<usize>> = runs.iter().map(|r| r.epochs_to_threshold).collect();
    PolicyStats {
        final_train_loss: Stat::of(&train),
        final_val_loss: Stat::of(&val),
        median_epochs: median_epochs(&epochs),
        reached: epochs.iter().flatten().count(),
        failed: runs.iter().filter(|r| r.error.is_some()).count(),
        epochs_to_threshold: epochs,
        coverage: Stat::of(&cov),
    }
}

fn aggregate(pairs: &[SeedPair]) -> Aggregates {
    let constant = policy_stats(&pairs.iter().map(|p| &p.constant).collect::<Vec<_>>());
    let adaptive = policy_stats(&pairs.iter().map(|p| &p.adaptive).collect::<Vec<_>>());
    let speedup = match (constant.median_epochs, adaptive.median_epochs) {
        (Some(c), Some(a)) if a > 0.0 => Some(c / a),
        _ => None,
    };
    Aggregates { constant, adaptive, speedup }
}

fn run_one(net: Network, prep: &Prepared, cfg: &TrainConfig, seed: u64) -> RunResult {
    match trainer::train(net, &prep.train, &prep.val, cfg, seed) {
        Ok((net, record)) => {
            let (coverage, aic) = match cfg.loss.tau() {
                Some(tau) => (
                    (!prep.val.is_empty()).then(|| coverage(&net, &prep.val).ok()).flatten(),
                    network_aic(&net, &prep.train, tau).ok(),
                ),
                None => (None, None),
            };
            RunResult {
                record: Some(record),
                error: None,
                epochs_to_threshold: None,
                coverage,
                aic,
                network: Some(net),
            }
        }
        Err(e) => {
            log::warn!("seed {seed}, {:?}: {e}", cfg.lr_policy);
            RunResult::failed(e)
        }
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start {jobs} workers: {e}")))
}

/// Loads, splits and standardizes `data`, then runs every seed under both policies.
pub fn paired_run(spec: &ExperimentSpec, data: &Dataset, jobs: usize) -> Result<ComparisonRecord> {
    spec.validate()?;
    let prep = prepare(data, spec)?;
    paired_run_prepared(spec, &prep, jobs)
}

/// [`paired_run`] on data that is already split and standardized.
///
/// At most `jobs` runs execute at once; results do not depend on `jobs`.
pub fn paired_run_prepared(spec: &ExperimentSpec, prep: &Prepared, jobs: usize) -> Result<ComparisonRecord> {
    spec.validate()?;
    let net_spec = spec.architecture.resolve(prep.train.features(), prep.train.labels());
    let inits = spec
        .seeds
        .iter()
        .map(|&s| {
            let net = Network::init(net_spec.clone(), s)?;
            let kz = penultimate_max(&net, prep.train.x.view())?;
            Ok((s, net, kz))
        })
        .collect::<Result<Vec<_>>>()?;

    let policies = [LrPolicy::constant(spec.constant_eta), spec.lalr.policy()];
    let tasks: Vec<(usize, usize)> = (0..inits.len()).flat_map(|i| [(i, 0), (i, 1)]).collect();
    let explicit = match spec.threshold {
        ThresholdSource::Ols => prep.ols_threshold,
        ThresholdSource::Explicit(v) => Some(v),
        ThresholdSource::MinLossHeuristic => None,
    };
    let stop_threshold = spec.stop_at_threshold.then_some(explicit).flatten();
    let results: Vec<RunResult> = pool(jobs)?.install(|| {
        tasks
            .par_iter()
            .map(|&(i, p)| {
                let (seed, net, _) = &inits[i];
                let mut cfg = spec.train_config(policies[p], *seed);
                if spec.threshold_metric == ThresholdMetric::Train {
                    cfg.threshold = stop_threshold;
                    cfg.stop_at_threshold = stop_threshold.is_some();
                }
                run_one(net.clone(), prep, &cfg, *seed)
            })
            .collect()
    });

    let mut results = results.into_iter();
    let mut pairs = Vec::with_capacity(inits.len());
    for (seed, _, initial_kz) in inits {
        let mut constant = results.next().expect("constant result");
        let mut adaptive = results.next().expect("adaptive result");
        let threshold = match spec.threshold {
            ThresholdSource::MinLossHeuristic => {
                constant.record.as_ref().and_then(|r| min_loss_threshold(r).ok())
            }
            _ => explicit,
        };
        if let Some(t) = threshold {
            for run in [&mut constant, &mut adaptive] {
                run.epochs_to_threshold = run
                    .record
                    .as_ref()
                    .and_then(|r| epochs_to_threshold_by(r, t, spec.threshold_metric));
                if let Some(rec) = run.record.as_mut() {
                    rec.reached_threshold = run.epochs_to_threshold;
                }
            }
        }
        let speedup = match (constant.epochs_to_threshold, adaptive.epochs_to_threshold) {
            (Some(c), Some(a)) => Some(c as f64 / a as f64),
            _ => None,
        };
        pairs.push(SeedPair { seed, threshold, initial_kz, constant, adaptive, speedup });
    }

    Ok(ComparisonRecord {
        name: spec.name.clone(),
        dataset: spec.dataset.clone(),
        loss: spec.loss,
        batch_size: spec.batch_size,
        epochs: spec.epochs,
        threshold_source: spec.threshold,
        ols_threshold: prep.ols_threshold,
        train_rows: prep.train.rows(),
        aggregates: aggregate(&pairs),
        pairs,
    })
}

/// One independent paired experiment per quantile level.
pub fn quantile_suite(spec: &ExperimentSpec, taus: &[f64], data: &Dataset, jobs: usize) -> Result<Vec<ComparisonRecord>> {
    if taus.is_empty() {
        return Err(Error::InvalidConfig("quantile list is empty".into()));
    }
    let specs = taus
        .iter()
        .map(|&tau| {
            let mut s = spec.clone();
            s.loss = LossSpec::check(tau)?;
            s.name = format!("{}-q{tau}", spec.name);
            s.validate()?;
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    let prep = prepare(data, spec)?;
    specs.iter().map(|s| paired_run_prepared(s, &prep, jobs)).collect()
}

/// Mean held-out coverage per quantile level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRecord {
    pub taus: Vec<f64>,
    pub constant: Vec<Option<f64>>,
    pub adaptive: Vec<Option<f64>>,
}

impl CoverageRecord {
    pub fn from_records(records: &[ComparisonRecord]) -> Self {
        let mut out = Self { taus: Vec::new(), constant: Vec::new(), adaptive: Vec::new() };
        for r in records {
            if let Some(tau) = r.loss.tau() {
                out.taus.push(tau);
                out.constant.push(r.aggregates.constant.coverage.mean);
                out.adaptive.push(r.aggregates.adaptive.coverage.mean);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub summary: Option<RunSummary>,
    pub error: Option<String>,
    pub epochs_to_threshold: Option<usize>,
    pub coverage: Option<f64>,
    pub aic: Option<AicReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub seed: u64,
    pub threshold: Option<f64>,
    pub initial_kz: f64,
    pub speedup: Option<f64>,
    pub constant: RunEntry,
    pub adaptive: RunEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub dataset: String,
    pub loss: LossSpec,
    pub batch_size: usize,
    pub epochs: usize,
    pub threshold_source: ThresholdSource,
    pub ols_threshold: Option<f64>,
    pub train_rows: usize,
    pub speedup: Option<f64>,
    pub aggregates: Aggregates,
    pub pairs: Vec<PairEntry>,
}

/// Top-level summary document written by [`report`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub format_version: u32,
    pub experiments: Vec<ExperimentSummary>,
    pub coverage: Option<CoverageRecord>,
}

pub const SUMMARY_FORMAT_VERSION: u32 = 1;

impl Summary {
    pub fn from_records(records: &[ComparisonRecord], strip_timing: bool) -> Self {
        let entry = |r: &RunResult| RunEntry {
            summary: r.record.as_ref().map(|rec| rec.summary(strip_timing)),
            error: r.error.clone(),
            epochs_to_threshold: r.epochs_to_threshold,
            coverage: r.coverage,
            aic: r.aic.clone(),
        };
        let experiments = records
            .iter()
            .map(|c| ExperimentSummary {
                name: c.name.clone(),
                dataset: c.dataset.clone(),
                loss: c.loss,
                batch_size: c.batch_size,
                epochs: c.epochs,
                threshold_source: c.threshold_source,
                ols_threshold: c.ols_threshold,
                train_rows: c.train_rows,
                speedup: c.aggregates.speedup,
                aggregates: c.aggregates.clone(),
                pairs: c
                    .pairs
                    .iter()
                    .map(|p| PairEntry {
                        seed: p.seed,
                        threshold: p.threshold,
                        initial_kz: p.initial_kz,
                        speedup: p.speedup,
                        constant: entry(&p.constant),
                        adaptive: entry(&p.adaptive),
                    })
                    .collect(),
            })
            .collect();
        let coverage = CoverageRecord::from_records(records);
        Summary {
            format_version: SUMMARY_FORMAT_VERSION,
            experiments,
            coverage: (!coverage.taus.is_empty()).then_some(coverage),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

/// Paths written by [`report`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReportFiles {
    pub curves: Vec<PathBuf>,
    pub summary: PathBuf,
    pub plot: PathBuf,
}

fn file_stem(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect();
    if s.is_empty() { "experiment".into() } else { s }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Writes `curves/<experiment>/seed<k>_<policy>.csv` per run, `summary.json`,
/// and `plot.csv` (long format: experiment, seed, policy, epoch, metric, value).
pub fn report(records: &[ComparisonRecord], out_dir: &Path, strip_timing: bool) -> Result<ReportFiles> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut files = ReportFiles {
        summary: out_dir.join("summary.json"),
        plot: out_dir.join("plot.csv"),
        ..Default::default()
    };
    let mut plot = create(&files.plot)?;
    let plot_err = |e: std::io::Error| Error::io(&out_dir.join("plot.csv"), e);
    writeln!(plot, "experiment,seed,policy,epoch,metric,value").map_err(plot_err)?;
    for rec in records {
        let dir = out_dir.join("curves").join(file_stem(&rec.name));
        for pair in &rec.pairs {
            for (label, run) in [("constant", &pair.constant), ("adaptive", &pair.adaptive)] {
                let Some(record) = &run.record else { continue };
                fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                let path = dir.join(format!("seed{}_{label}.csv", pair.seed));
                let mut w = create(&path)?;
                record
                    .write_curve_csv(&mut w, strip_timing)
                    .and_then(|_| w.flush())
                    .map_err(|e| Error::io(&path, e))?;
                files.curves.push(path);
                for row in &record.rows {
                    let mut metrics = vec![("train_loss", row.train_loss), ("lr", row.lr), ("kz", row.kz)];
                    if let Some(v) = row.val_loss {
                        metrics.push(("val_loss", v));
                    }
                    for (metric, value) in metrics {
                        writeln!(plot, "{},{},{label},{},{metric},{value:?}", rec.name, pair.seed, row.epoch)
                            .map_err(plot_err)?;
                    }
                }
            }
        }
    }
    plot.flush().map_err(plot_err)?;
    let summary = Summary::from_records(records, strip_timing);
    fs::write(&files.summary, summary.to_json() + "\n").map_err(|e| Error::io(&files.summary, e))?;
    Ok(files)
}
