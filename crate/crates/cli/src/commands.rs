//! Command implementations; `main` only parses arguments and maps errors to exit codes.

use std::fmt::Write as _;
use std::fs;
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use lalr::bench::{self, Summary, ThresholdSource};
use lalr::data::{self, CsvSchema, Dataset, Manifest};
use lalr::{Error, LrPolicy};
use sha2::{Digest, Sha256};

use crate::config::{CliConfig, PolicyChoice};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Diverged(_) => 4,
            CliError::Io(_) => 5,
        }
    }

    /// Classifies a library error; `io` decides what a file-system failure means here.
    fn from_lib(e: Error, io: fn(String) -> CliError) -> CliError {
        let msg = e.to_string();
        match e {
            Error::InvalidSpec(_)
            | Error::InvalidConfig(_)
            | Error::UnsupportedLoss(_)
            | Error::InvalidLearningRate(_) => CliError::Config(msg),
            Error::Diverged { .. } => CliError::Diverged(msg),
            Error::Io { .. } => io(msg),
            _ => CliError::Data(msg),
        }
    }
}

fn data_err(e: Error) -> CliError {
    CliError::from_lib(e, CliError::Data)
}

fn out_err(e: Error) -> CliError {
    CliError::from_lib(e, CliError::Io)
}

/// `--seeds`: a count `N` (seeds `0..N`) or an explicit comma-separated list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedArg(pub Vec<u64>);

impl FromStr for SeedArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if s.contains(',') {
            let seeds = s
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse::<u64>()
                        .map_err(|_| format!("`{p}` is not a seed"))
                })
                .collect::<Result<Vec<_>, _>>()?;
            return Ok(SeedArg(seeds));
        }
        match s.parse::<u64>() {
            Ok(0) => Err("seed count must be at least 1".into()),
            Ok(n) => Ok(SeedArg((0..n).collect())),
            Err(_) => Err(format!(
                "`{s}` is neither a seed count nor a comma-separated list"
            )),
        }
    }
}

/// Flags shared by the experiment commands.
#[derive(Debug, Clone)]
pub struct Common {
    pub config: PathBuf,
    pub dataset: Option<String>,
    pub out: PathBuf,
    pub seeds: Option<SeedArg>,
    pub threshold_source: Option<ThresholdSource>,
    pub jobs: usize,
    pub strip_timing: bool,
}

impl Common {
    /// Reads the config file and applies command-line overrides.
    pub fn load(&self) -> Result<CliConfig, CliError> {
        let mut cfg = CliConfig::load(&self.config).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(d) = &self.dataset {
            cfg.experiment.dataset = d.clone();
        }
        if let Some(SeedArg(s)) = &self.seeds {
            cfg.experiment.seeds = s.clone();
        }
        if let Some(t) = self.threshold_source {
            cfg.experiment.threshold = t;
        }
        if self.jobs == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        cfg.experiment
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

/// Resolves `experiment.dataset`: `synthetic`, a manifest `.json`, a bare `.csv`,
/// or the name of a bundled dataset in `data.dir`.
pub fn load_dataset(cfg: &CliConfig) -> Result<Dataset, CliError> {
    let name = cfg.experiment.dataset.as_str();
    if name == "synthetic" {
        let s = cfg.synthetic;
        return bench::synthetic_dataset(s.train, s.test, s.seed).map_err(data_err);
    }
    let path = Path::new(name);
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or_default();
    match ext {
        "json" => {
            let dir = path.parent().unwrap_or(Path::new("."));
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default();
            data::load_bundled(dir, stem).map_err(data_err)
        }
        "csv" => {
            let targets = if cfg.data.targets.is_empty() {
                vec![last_header_column(path)?]
            } else {
                cfg.data.targets.clone()
            };
            data::load_csv(path, &CsvSchema::with_targets(targets)).map_err(data_err)
        }
        _ => data::load_bundled(Path::new(&cfg.data.dir), name).map_err(data_err),
    }
}

fn last_header_column(path: &Path) -> Result<String, CliError> {
    let file =
        fs::File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut header = String::new();
    std::io::BufReader::new(file)
        .read_line(&mut header)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    header
        .trim_end()
        .rsplit(',')
        .next()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .ok_or_else(|| CliError::Data(format!("{} has no header row", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// One training run; writes `curve.csv` and `run.json` into `out`.
pub fn train(common: &Common) -> Result<String, CliError> {
    let cfg = common.load()?;
    let data = load_dataset(&cfg)?;
    let spec = &cfg.experiment;
    let prep = bench::prepare(&data, spec).map_err(data_err)?;
    let seed = spec.seeds[0];
    let policy = match cfg.train.policy {
        PolicyChoice::Lalr => spec.lalr.policy(),
        PolicyChoice::Constant => LrPolicy::constant(spec.constant_eta),
    };
    let mut tc = spec.train_config(policy, seed);
    let threshold = match spec.threshold {
        ThresholdSource::Ols => prep.ols_threshold,
        ThresholdSource::Explicit(v) => Some(v),
        ThresholdSource::MinLossHeuristic => None,
    };
    tc.threshold = threshold;
    tc.stop_at_threshold = spec.stop_at_threshold && threshold.is_some();
    let net_spec = spec
        .architecture
        .resolve(prep.train.features(), prep.train.labels());
    let net = lalr::Network::init(net_spec, seed).map_err(|e| CliError::Config(e.to_string()))?;
    let (_, record) = lalr::train(net, &prep.train, &prep.val, &tc, seed).map_err(data_err)?;

    create_dir(&common.out)?;
    let mut curve = Vec::new();
    record
        .write_curve_csv(&mut curve, common.strip_timing)
        .map_err(|e| CliError::Io(e.to_string()))?;
    write_file(&common.out.join("curve.csv"), &curve)?;
    let summary = serde_json::to_string_pretty(&record.summary(common.strip_timing))
        .expect("summary serializes");
    write_file(
        &common.out.join("run.json"),
        format!("{summary}\n").as_bytes(),
    )?;

    let mut msg = format!(
        "{}: {} epochs, final train loss {:.6}",
        spec.name,
        record.epochs_run,
        record.final_train_loss().unwrap_or(f64::NAN)
    );
    if let (Some(t), reached) = (threshold, record.reached_threshold) {
        let _ = write!(msg, ", threshold {t:.6} ");
        match reached {
            Some(e) => {
                let _ = write!(msg, "reached at epoch {e}");
            }
            None => msg.push_str("not reached"),
        }
    }
    Ok(msg)
}

fn failures(records: &[bench::ComparisonRecord]) -> Vec<String> {
    records
        .iter()
        .flat_map(|r| {
            r.pairs.iter().flat_map(move |p| {
                [("constant", &p.constant), ("adaptive", &p.adaptive)]
                    .into_iter()
                    .filter_map(move |(label, run)| {
                        run.error
                            .as_ref()
                            .map(|e| format!("{} seed {} {label}: {e}", r.name, p.seed))
                    })
            })
        })
        .collect()
}

fn finish(records: &[bench::ComparisonRecord], common: &Common) -> Result<String, CliError> {
    bench::report(records, &common.out, common.strip_timing).map_err(out_err)?;
    let table = format_tables(&Summary::from_records(records, common.strip_timing));
    let failed = failures(records);
    if failed.is_empty() {
        Ok(table)
    } else {
        print!("{table}");
        Err(CliError::Diverged(failed.join("; ")))
    }
}

/// Paired constant-vs-LALR comparison.
pub fn compare(common: &Common) -> Result<String, CliError> {
    let cfg = common.load()?;
    let data = load_dataset(&cfg)?;
    let rec = bench::paired_run(&cfg.experiment, &data, common.jobs).map_err(data_err)?;
    finish(&[rec], common)
}

/// One paired comparison per quantile level.
pub fn quantiles(common: &Common, taus: Option<Vec<f64>>) -> Result<String, CliError> {
    let cfg = common.load()?;
    let taus = taus.unwrap_or_else(|| cfg.quantiles.taus.clone());
    if taus.is_empty() {
        return Err(CliError::Config("quantile list is empty".into()));
    }
    let data = load_dataset(&cfg)?;
    let records =
        bench::quantile_suite(&cfg.experiment, &taus, &data, common.jobs).map_err(data_err)?;
    finish(&records, common)
}

/// Writes the synthetic data set to `out` plus a manifest next to it.
pub fn synth(count: usize, seed: u64, out: &Path) -> Result<String, CliError> {
    if count == 0 {
        return Err(CliError::Config("--count must be at least 1".into()));
    }
    let ds = bench::synthetic_dataset(count, 0, seed).map_err(data_err)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let mut bytes = Vec::new();
    ds.write_csv(&mut bytes).map_err(out_err)?;
    write_file(out, &bytes)?;
    let digest = hex::encode(Sha256::digest(&bytes));
    let stem = out
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("synthetic")
        .to_string();
    let manifest = Manifest {
        name: stem.clone(),
        file: out
            .file_name()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string(),
        origin: ds.provenance.clone(),
        target_columns: ds.target_names.clone(),
        rows: ds.rows(),
        features: ds.features(),
        description: "Generated by `lalr synth`.".into(),
        sha256: Some(digest.clone()),
    };
    let manifest_path = out.with_extension("json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&manifest_path, format!("{json}\n").as_bytes())?;
    Ok(format!(
        "wrote {count} rows to {} (sha256 {digest})",
        out.display()
    ))
}

/// Prints the tables for an existing `summary.json` (or a directory containing one).
pub fn report(path: &Path) -> Result<String, CliError> {
    let file = if path.is_dir() {
        path.join("summary.json")
    } else {
        path.to_path_buf()
    };
    let summary = Summary::load(&file).map_err(data_err)?;
    Ok(format_tables(&summary))
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map(|x| format!("{x:.digits$}"))
        .unwrap_or_else(|| "-".into())
}

fn stat(s: &bench::Stat) -> String {
    match (s.mean, s.std) {
        (Some(m), Some(sd)) => format!("{m:.4} ± {sd:.4}"),
        (Some(m), None) => format!("{m:.4}"),
        _ => "-".into(),
    }
}

/// Plain-text tables: epochs to threshold and speedup, final losses, and for
/// quantile experiments coverage and AIC.
pub fn format_tables(summary: &Summary) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<28} {:>10} {:>10} {:>10} {:>8}  {:>18} {:>18}",
        "experiment", "threshold", "const ep", "lalr ep", "speedup", "const final", "lalr final"
    );
    for e in &summary.experiments {
        let thr = e
            .pairs
            .iter()
            .filter_map(|p| p.threshold)
            .collect::<Vec<_>>();
        let thr = if thr.is_empty() {
            None
        } else {
            Some(thr.iter().sum::<f64>() / thr.len() as f64)
        };
        let _ = writeln!(
            out,
            "{:<28} {:>10} {:>10} {:>10} {:>8}  {:>18} {:>18}",
            e.name,
            opt(thr, 4),
            opt(e.aggregates.constant.median_epochs, 1),
            opt(e.aggregates.adaptive.median_epochs, 1),
            opt(e.speedup, 2),
            stat(&e.aggregates.constant.final_train_loss),
            stat(&e.aggregates.adaptive.final_train_loss),
        );
    }
    let quantile: Vec<_> = summary
        .experiments
        .iter()
        .filter(|e| e.loss.tau().is_some())
        .collect();
    if !quantile.is_empty() {
        let _ = writeln!(
            out,
            "\n{:<28} {:>6} {:>10} {:>10} {:>12} {:>12}",
            "experiment", "tau", "const cov", "lalr cov", "const AIC", "lalr AIC"
        );
        for e in quantile {
            let mean_aic = |f: &dyn Fn(&bench::PairEntry) -> Option<f64>| {
                let v: Vec<f64> = e.pairs.iter().filter_map(f).collect();
                (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
            };
            let _ = writeln!(
                out,
                "{:<28} {:>6} {:>10} {:>10} {:>12} {:>12}",
                e.name,
                opt(e.loss.tau(), 2),
                opt(e.aggregates.constant.coverage.mean, 3),
                opt(e.aggregates.adaptive.coverage.mean, 3),
                opt(mean_aic(&|p| p.constant.aic.as_ref()?.aic), 2),
                opt(mean_aic(&|p| p.adaptive.aic.as_ref()?.aic), 2),
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_arguments() {
        assert_eq!("3".parse::<SeedArg>().unwrap(), SeedArg(vec![0, 1, 2]));
        assert_eq!("4,9".parse::<SeedArg>().unwrap(), SeedArg(vec![4, 9]));
        assert!("0".parse::<SeedArg>().is_err());
        assert!("a".parse::<SeedArg>().is_err());
        assert!("1,b".parse::<SeedArg>().is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config(String::new()).exit_code(), 2);
        assert_eq!(data_err(Error::EmptyData("x".into())).exit_code(), 3);
        assert_eq!(
            data_err(Error::Diverged {
                epoch: 1,
                lr: 1.0,
                loss: f64::NAN
            })
            .exit_code(),
            4
        );
        let io = Error::Io {
            path: "p".into(),
            source: std::io::Error::other("boom"),
        };
        assert_eq!(data_err(io).exit_code(), 3);
        let io = Error::Io {
            path: "p".into(),
            source: std::io::Error::other("boom"),
        };
        assert_eq!(out_err(io).exit_code(), 5);
        assert_eq!(data_err(Error::UnsupportedLoss("mse")).exit_code(), 2);
    }

    #[test]
    fn empty_summary_table_has_header_only() {
        let s = Summary::from_records(&[], false);
        assert_eq!(format_tables(&s).lines().count(), 1);
    }
}
