//! Datasets: CSV ingestion, standardization, splitting and the synthetic
//! heteroscedastic generator.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Feature matrix `x` (rows × d) and target matrix `y` (rows × n).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub provenance: String,
    pub feature_names: Vec<String>,
    pub target_names: Vec<String>,
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub scaler: Option<ScalerStats>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, x: Array2<f64>, y: Array2<f64>) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(Error::shape(
                format!("{} target rows", x.nrows()),
                format!("{} target rows", y.nrows()),
            ));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Format("dataset contains non-finite values".into()));
        }
        let feature_names = (0..x.ncols()).map(|i| format!("x{i}")).collect();
        let target_names = (0..y.ncols()).map(|i| format!("y{i}")).collect();
        Ok(Self {
            name: name.into(),
            provenance: String::new(),
            feature_names,
            target_names,
            x,
            y,
            scaler: None,
        })
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = provenance.into();
        self
    }

    pub fn rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn features(&self) -> usize {
        self.x.ncols()
    }

    pub fn labels(&self) -> usize {
        self.y.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.rows() == 0
    }

    /// New dataset holding the given rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            provenance: self.provenance.clone(),
            feature_names: self.feature_names.clone(),
            target_names: self.target_names.clone(),
            x: self.x.select(Axis(0), rows),
            y: self.y.select(Axis(0), rows),
            scaler: self.scaler.clone(),
        }
    }

    /// Deterministic random subset of `round(fraction · rows)` rows (at least one).
    pub fn subsample(&self, fraction: f64, seed: u64) -> Result<Dataset> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "subsample fraction must be in (0, 1], got {fraction}"
            )));
        }
        if fraction == 1.0 {
            return Ok(self.clone());
        }
        let keep = ((fraction * self.rows() as f64).round() as usize).max(1);
        let mut idx = permutation(self.rows(), &mut ChaCha8Rng::seed_from_u64(seed));
        idx.truncate(keep);
        idx.sort_unstable();
        let mut out = self.select(&idx);
        out.provenance = format!("{} | subsample {fraction} seed {seed}", self.provenance);
        Ok(out)
    }

    /// Writes the dataset as CSV with a header row, features first.
    ///
    /// Floats use the shortest representation that parses back to the same
    /// value, so a write/load cycle is bit-exact.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let header: Vec<&str> = self
            .feature_names
            .iter()
            .chain(&self.target_names)
            .map(String::as_str)
            .collect();
        w.write_record(&header).map_err(csv_err)?;
        let mut record = Vec::with_capacity(header.len());
        for (xr, yr) in self.x.outer_iter().zip(self.y.outer_iter()) {
            record.clear();
            record.extend(xr.iter().chain(yr.iter()).map(|v| format!("{v:?}")));
            w.write_record(&record).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Format(e.to_string()))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// How to read a CSV file into features and targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    /// Target column names, or zero-based indices when the file has no header.
    pub target_columns: Vec<String>,
    #[serde(default = "yes")]
    pub header: bool,
    #[serde(default = "comma")]
    pub delimiter: char,
}

fn yes() -> bool {
    true
}

fn comma() -> char {
    ','
}

impl CsvSchema {
    pub fn with_targets<S: Into<String>>(targets: impl IntoIterator<Item = S>) -> Self {
        Self {
            target_columns: targets.into_iter().map(Into::into).collect(),
            header: true,
            delimiter: ',',
        }
    }
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut ds = parse_csv(std::io::BufReader::new(file), schema, &name)?;
    ds.provenance = path.display().to_string();
    Ok(ds)
}

/// Parses CSV text into a dataset. Non-target columns become features in file
/// order. Row numbers in errors are 1-based file lines.
pub fn parse_csv<R: Read>(reader: R, schema: &CsvSchema, name: &str) -> Result<Dataset> {
    if !schema.delimiter.is_ascii() {
        return Err(Error::InvalidConfig("delimiter must be a single ASCII character".into()));
    }
    if schema.target_columns.is_empty() {
        return Err(Error::InvalidConfig("at least one target column is required".into()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(schema.delimiter as u8)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();

    let mut line = 0usize;
    let (columns, mut first_row) = if schema.header {
        line += 1;
        match records.next() {
            None => return Err(Error::EmptyData("CSV file is empty".into())),
            Some(rec) => {
                let rec = rec.map_err(|e| parse_err(line, 0, e.to_string()))?;
                (rec.iter().map(|s| s.trim().to_string()).collect::<Vec<_>>(), None)
            }
        }
    } else {
        match records.next() {
            None => return Err(Error::EmptyData("CSV file is empty".into())),
            Some(rec) => {
                let rec = rec.map_err(|e| parse_err(1, 0, e.to_string()))?;
                let cols = (0..rec.len()).map(|i| i.to_string()).collect::<Vec<_>>();
                (cols, Some(rec))
            }
        }
    };

    let mut target_idx = Vec::with_capacity(schema.target_columns.len());
    for t in &schema.target_columns {
        let pos = columns
            .iter()
            .position(|c| c == t)
            .ok_or_else(|| Error::InvalidConfig(format!("target column `{t}` not found")))?;
        if target_idx.contains(&pos) {
            return Err(Error::InvalidConfig(format!("target column `{t}` listed twice")));
        }
        target_idx.push(pos);
    }
    let feature_idx: Vec<usize> = (0..columns.len()).filter(|i| !target_idx.contains(i)).collect();
    if feature_idx.is_empty() {
        return Err(Error::InvalidConfig("no feature columns left after removing targets".into()));
    }

    let width = columns.len();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut rows = 0usize;
    let mut values = vec![0.0; width];
    loop {
        let rec = match first_row.take() {
            Some(r) => r,
            None => match records.next() {
                Some(r) => r.map_err(|e| parse_err(line + 1, 0, e.to_string()))?,
                None => break,
            },
        };
        line += 1;
        if rec.len() == 1 && rec.get(0).is_some_and(|f| f.trim().is_empty()) {
            continue;
        }
        if rec.len() != width {
            return Err(parse_err(
                line,
                rec.len().min(width) + 1,
                format!("expected {width} fields, found {}", rec.len()),
            ));
        }
        for (col, field) in rec.iter().enumerate() {
            let field = field.trim();
            if field.is_empty() {
                return Err(parse_err(line, col + 1, "missing value".into()));
            }
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, col + 1, format!("`{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(line, col + 1, format!("`{field}` is not finite")));
            }
            values[col] = v;
        }
        xs.extend(feature_idx.iter().map(|&i| values[i]));
        ys.extend(target_idx.iter().map(|&i| values[i]));
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::EmptyData("CSV file has no data rows".into()));
    }

    let x = Array2::from_shape_vec((rows, feature_idx.len()), xs).expect("row-major buffer");
    let y = Array2::from_shape_vec((rows, target_idx.len()), ys).expect("row-major buffer");
    Ok(Dataset {
        name: name.to_string(),
        provenance: String::new(),
        feature_names: feature_idx.iter().map(|&i| columns[i].clone()).collect(),
        target_names: target_idx.iter().map(|&i| columns[i].clone()).collect(),
        x,
        y,
        scaler: None,
    })
}

fn parse_err(row: usize, column: usize, message: String) -> Error {
    Error::Parse {
        row,
        column,
        message,
    }
}

/// Per-column mean and (population) standard deviation, from the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerStats {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: Vec<f64>,
    pub y_std: Vec<f64>,
    /// Names of zero-variance feature columns that were dropped.
    pub dropped_features: Vec<String>,
    /// Indices (into the original feature columns) that were kept.
    pub kept_features: Vec<usize>,
}

impl ScalerStats {
    pub fn fit(train: &Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyData("cannot standardize an empty training set".into()));
        }
        let (x_mean, x_std) = column_stats(train.x.view());
        let (y_mean, y_std) = column_stats(train.y.view());
        if let Some(j) = y_std.iter().position(|&s| s == 0.0) {
            return Err(Error::ZeroVariance(train.target_names[j].clone()));
        }
        let mut kept = Vec::new();
        let mut dropped = Vec::new();
        for (j, &s) in x_std.iter().enumerate() {
            if s > 0.0 {
                kept.push(j);
            } else {
                log::warn!("dropping zero-variance feature `{}`", train.feature_names[j]);
                dropped.push(train.feature_names[j].clone());
            }
        }
        Ok(Self {
            x_mean: kept.iter().map(|&j| x_mean[j]).collect(),
            x_std: kept.iter().map(|&j| x_std[j]).collect(),
            y_mean,
            y_std,
            dropped_features: dropped,
            kept_features: kept,
        })
    }

    pub fn transform(&self, data: &Dataset) -> Result<Dataset> {
        let expected = self.kept_features.len() + self.dropped_features.len();
        if data.features() != expected || data.labels() != self.y_mean.len() {
            return Err(Error::shape(
                format!("{expected} features / {} labels", self.y_mean.len()),
                format!("{} features / {} labels", data.features(), data.labels()),
            ));
        }
        let mut x = data.x.select(Axis(1), &self.kept_features);
        x -= &Array1::from(self.x_mean.clone());
        x /= &Array1::from(self.x_std.clone());
        let mut y = data.y.clone();
        y -= &Array1::from(self.y_mean.clone());
        y /= &Array1::from(self.y_std.clone());
        Ok(Dataset {
            name: data.name.clone(),
            provenance: data.provenance.clone(),
            feature_names: self
                .kept_features
                .iter()
                .map(|&j| data.feature_names[j].clone())
                .collect(),
            target_names: data.target_names.clone(),
            x,
            y,
            scaler: Some(self.clone()),
        })
    }

    /// Maps standardized targets back to original units.
    pub fn inverse_targets(&self, y: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = y.to_owned();
        out *= &Array1::from(self.y_std.clone());
        out += &Array1::from(self.y_mean.clone());
        out
    }
}

fn column_stats(a: ArrayView2<'_, f64>) -> (Vec<f64>, Vec<f64>) {
    let n = a.nrows() as f64;
    a.axis_iter(Axis(1))
        .map(|col| {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            (mean, var.sqrt())
        })
        .unzip()
}

/// Standardizes `train` with its own statistics and every dataset in `others`
/// with those same statistics.
pub fn standardize(train: &Dataset, others: &[&Dataset]) -> Result<(Dataset, Vec<Dataset>, ScalerStats)> {
    let stats = ScalerStats::fit(train)?;
    let scaled_train = stats.transform(train)?;
    let scaled_others = others
        .iter()
        .map(|d| stats.transform(d))
        .collect::<Result<Vec<_>>>()?;
    Ok((scaled_train, scaled_others, stats))
}

pub(crate) fn permutation<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

/// Deterministic partition into `round(fraction · rows)` and the remainder.
/// Both parts keep the original row order.
pub fn split(data: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "split fraction must be in (0, 1), got {fraction}"
        )));
    }
    let first = (fraction * data.rows() as f64).round() as usize;
    if first == 0 || first == data.rows() {
        return Err(Error::InvalidConfig(format!(
            "splitting {} rows at {fraction} leaves an empty part",
            data.rows()
        )));
    }
    let perm = permutation(data.rows(), &mut ChaCha8Rng::seed_from_u64(seed));
    let mut a = perm[..first].to_vec();
    let mut b = perm[first..].to_vec();
    a.sort_unstable();
    b.sort_unstable();
    Ok((data.select(&a), data.select(&b)))
}

/// Mean function of the synthetic heteroscedastic data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthFunction {
    /// `f(x) = sin(2πx)·x + 0.5`
    #[default]
    SinRamp,
    /// `f(x) = x`
    Linear,
}

impl SynthFunction {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            SynthFunction::SinRamp => (2.0 * std::f64::consts::PI * x).sin() * x + 0.5,
            SynthFunction::Linear => x,
        }
    }

    fn describe(self) -> &'static str {
        match self {
            SynthFunction::SinRamp => "sin(2*pi*x)*x+0.5",
            SynthFunction::Linear => "x",
        }
    }
}

/// Noise scale of the synthetic data, `σ(x) = 0.1·exp(1 − x)`.
pub fn noise_scale(x: f64) -> f64 {
    0.1 * (1.0 - x).exp()
}

/// `y = f(x) + ε` with `x ~ U[0, 1)` and `ε ~ N(0, σ(x)²)`.
pub fn gen_heteroscedastic(count: usize, seed: u64, f: SynthFunction) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::InvalidConfig("synthetic dataset needs at least one row".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::zeros((count, 1));
    let mut y = Array2::zeros((count, 1));
    for i in 0..count {
        let xi: f64 = rng.random();
        let eps: f64 = rng.sample(StandardNormal);
        x[[i, 0]] = xi;
        y[[i, 0]] = f.eval(xi) + noise_scale(xi) * eps;
    }
    let mut ds = Dataset::new("synthetic", x, y)?;
    ds.feature_names = vec!["x".into()];
    ds.target_names = vec!["y".into()];
    ds.provenance = format!(
        "heteroscedastic count={count} seed={seed} f={} sigma=0.1*exp(1-x) x~U[0,1)",
        f.describe()
    );
    Ok(ds)
}

/// Descriptor shipped next to each bundled CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    pub file: String,
    pub origin: String,
    pub target_columns: Vec<String>,
    pub rows: usize,
    pub features: usize,
    #[serde(default)]
    pub description: String,
    /// Hex SHA-256 of the CSV file; checked on load when present.
    #[serde(default)]
    pub sha256: Option<String>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn schema(&self) -> CsvSchema {
        CsvSchema::with_targets(self.target_columns.iter().cloned())
    }
}

/// Loads `<dir>/<name>.json` and the CSV it points to, checking the row and
/// feature counts against the manifest.
pub fn load_bundled(dir: &Path, name: &str) -> Result<Dataset> {
    let manifest = Manifest::load(&dir.join(format!("{name}.json")))?;
    let csv_path: PathBuf = dir.join(&manifest.file);
    if let Some(expected) = &manifest.sha256 {
        let bytes = fs::read(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        let actual = hex::encode(Sha256::digest(&bytes));
        if !actual.eq_ignore_ascii_case(expected) {
            return Err(Error::Format(format!(
                "{} has sha256 {actual}, manifest says {expected}",
                csv_path.display()
            )));
        }
    }
    let mut ds = load_csv(&csv_path, &manifest.schema())?;
    if ds.rows() != manifest.rows || ds.features() != manifest.features {
        return Err(Error::Format(format!(
            "{} has {} rows × {} features, manifest says {} × {}",
            csv_path.display(),
            ds.rows(),
            ds.features(),
            manifest.rows,
            manifest.features
        )));
    }
    ds.name = manifest.name;
    Ok(ds)
}
