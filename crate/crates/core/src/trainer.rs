//! Deterministic mini-batch gradient descent with per-epoch learning rates.

use std::io::{BufRead, Write};
use std::time::Instant;

use ndarray::Axis;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{permutation, Dataset};
use crate::error::{Error, Result};
use crate::lipschitz::{learning_rate, lipschitz_constant, penultimate_max, LipschitzInputs, LrPolicy};
use crate::losses::LossSpec;
use crate::nn::{Mode, Network};

pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossSpec,
    pub lr_policy: LrPolicy,
    #[serde(default)]
    pub shuffle_seed: u64,
    /// Training-loss target; `reached_threshold` records the first epoch at or below it.
    #[serde(default)]
    pub threshold: Option<f64>,
    /// Stop as soon as the threshold is reached.
    #[serde(default)]
    pub stop_at_threshold: bool,
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
}

fn default_validation_fraction() -> f64 {
    DEFAULT_VALIDATION_FRACTION
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, loss: LossSpec, lr_policy: LrPolicy) -> Self {
        Self {
            epochs,
            batch_size,
            loss,
            lr_policy,
            shuffle_seed: 0,
            threshold: None,
            stop_at_threshold: false,
            validation_fraction: DEFAULT_VALIDATION_FRACTION,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::InvalidConfig(format!(
                "validation fraction must be in [0, 1), got {}",
                self.validation_fraction
            )));
        }
        if let Some(t) = self.threshold {
            if !t.is_finite() {
                return Err(Error::InvalidConfig("threshold must be finite".into()));
            }
        }
        if let LossSpec::Check { tau } = self.loss {
            crate::losses::validate_tau(tau)?;
        }
        if self.lr_policy.is_adaptive() && self.loss == LossSpec::Mse {
            return Err(Error::UnsupportedLoss("mse"));
        }
        self.lr_policy.validate()
    }

    /// SHA-256 of the canonical JSON encoding, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

/// One completed epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    /// 1-based.
    pub epoch: usize,
    /// Mean of the per-batch losses seen during the epoch.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub lr: f64,
    /// Largest penultimate activation at the start of the epoch.
    pub kz: f64,
    pub clamped: bool,
    pub ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub rows: Vec<EpochRow>,
    pub epochs_run: usize,
    pub reached_threshold: Option<usize>,
    pub final_digest: String,
    pub config_hash: String,
    pub seed: u64,
    pub policy: LrPolicy,
    pub loss: LossSpec,
}

/// Terminal fields of a [`RunRecord`], i.e. everything except the per-epoch rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSummary {
    pub epochs_run: usize,
    pub reached_threshold: Option<usize>,
    pub final_digest: String,
    pub config_hash: String,
    pub seed: u64,
    pub policy: LrPolicy,
    pub loss: LossSpec,
    pub final_train_loss: Option<f64>,
    pub final_val_loss: Option<f64>,
    pub clamp_events: usize,
    pub total_ms: f64,
}

pub const CURVE_HEADER: &str = "epoch,train_loss,val_loss,lr,kz,clamped,ms";

impl RunRecord {
    pub fn train_losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.train_loss).collect()
    }

    pub fn final_train_loss(&self) -> Option<f64> {
        self.rows.last().map(|r| r.train_loss)
    }

    pub fn final_val_loss(&self) -> Option<f64> {
        self.rows.last().and_then(|r| r.val_loss)
    }

    pub fn summary(&self, strip_timing: bool) -> RunSummary {
        RunSummary {
            epochs_run: self.epochs_run,
            reached_threshold: self.reached_threshold,
            final_digest: self.final_digest.clone(),
            config_hash: self.config_hash.clone(),
            seed: self.seed,
            policy: self.policy,
            loss: self.loss,
            final_train_loss: self.final_train_loss(),
            final_val_loss: self.final_val_loss(),
            clamp_events: self.rows.iter().filter(|r| r.clamped).count(),
            total_ms: if strip_timing {
                0.0
            } else {
                self.rows.iter().map(|r| r.ms).sum()
            },
        }
    }

    /// Writes the per-epoch curve as CSV (`epoch,train_loss,val_loss,lr,kz,clamped,ms`).
    /// With `strip_timing` the `ms` column is written as `0`.
    pub fn write_curve_csv<W: Write>(&self, mut w: W, strip_timing: bool) -> std::io::Result<()> {
        writeln!(w, "{CURVE_HEADER}")?;
        for r in &self.rows {
            let val = r.val_loss.map(|v| format!("{v:?}")).unwrap_or_default();
            let ms = if strip_timing { 0.0 } else { r.ms };
            writeln!(
                w,
                "{},{:?},{},{:?},{:?},{},{:?}",
                r.epoch, r.train_loss, val, r.lr, r.kz, r.clamped as u8, ms
            )?;
        }
        Ok(())
    }
}

/// Parses a curve CSV produced by [`RunRecord::write_curve_csv`].
pub fn parse_curve_csv<R: BufRead>(reader: R) -> Result<Vec<EpochRow>> {
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::EmptyData("curve file is empty".into()))?
        .map_err(|e| Error::Format(e.to_string()))?;
    if header.trim() != CURVE_HEADER {
        return Err(Error::Format(format!("unexpected curve header `{header}`")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::Format(e.to_string()))?;
        let row = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::Parse {
                row,
                column: fields.len().min(7) + 1,
                message: format!("expected 7 fields, found {}", fields.len()),
            });
        }
        let num = |col: usize| -> Result<f64> {
            fields[col].trim().parse::<f64>().map_err(|_| Error::Parse {
                row,
                column: col + 1,
                message: format!("`{}` is not a number", fields[col]),
            })
        };
        let epoch = fields[0].trim().parse::<usize>().map_err(|_| Error::Parse {
            row,
            column: 1,
            message: format!("`{}` is not an epoch index", fields[0]),
        })?;
        let val_loss = if fields[2].trim().is_empty() { None } else { Some(num(2)?) };
        let clamped = match fields[5].trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Parse {
                    row,
                    column: 6,
                    message: format!("`{other}` is not 0 or 1"),
                })
            }
        };
        rows.push(EpochRow {
            epoch,
            train_loss: num(1)?,
            val_loss,
            lr: num(3)?,
            kz: num(4)?,
            clamped,
            ms: num(6)?,
        });
    }
    Ok(rows)
}

fn mix(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over a combined word
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Row indices of each mini-batch for one epoch. The permutation depends only
/// on `(shuffle_seed, epoch)`; the final batch may be smaller than `m`.
pub fn batches(rows: usize, m: usize, shuffle_seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let m = m.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(mix(shuffle_seed, epoch as u64));
    permutation(rows, &mut rng)
        .chunks(m)
        .map(<[usize]>::to_vec)
        .collect()
}

/// Full-set loss in eval mode.
pub fn evaluate(net: &Network, data: &Dataset, loss: LossSpec) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyData(format!("cannot evaluate on empty `{}`", data.name)));
    }
    if data.labels() != net.spec().output_dim {
        return Err(Error::shape(
            format!("{} labels", net.spec().output_dim),
            format!("{} labels", data.labels()),
        ));
    }
    let pred = net.predict(data.x.view())?;
    loss.value(pred.view(), data.y.view())
}

/// K_z, Lipschitz constant and step size for the upcoming epoch.
fn epoch_step(net: &Network, train: &Dataset, cfg: &TrainConfig) -> Result<(f64, f64, bool)> {
    let kz = penultimate_max(net, train.x.view())?;
    match cfg.lr_policy {
        LrPolicy::Constant { eta } => Ok((kz, eta, false)),
        LrPolicy::Lalr { .. } => {
            let l = lipschitz_constant(&LipschitzInputs {
                kz,
                batch_size: cfg.batch_size,
                labels: train.labels(),
                loss: cfg.loss,
            })?;
            let step = learning_rate(&cfg.lr_policy, l);
            if step.clamped {
                log::debug!("learning rate clamped: 1/L = {} -> {}", 1.0 / l, step.eta);
            }
            Ok((kz, step.eta, step.clamped))
        }
    }
}

/// Trains `net` on `train`, evaluating `val` (when non-empty) after every epoch.
///
/// Each epoch: compute `K_z` on the full training set and the step size, shuffle
/// with `(shuffle_seed, epoch)`, then take one gradient step per mini-batch.
pub fn train(
    mut net: Network,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    init_seed: u64,
) -> Result<(Network, RunRecord)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyData("training set is empty".into()));
    }
    let spec = net.spec();
    if train.features() != spec.input_dim || train.labels() != spec.output_dim {
        return Err(Error::shape(
            format!("{} features / {} labels", spec.input_dim, spec.output_dim),
            format!("{} features / {} labels", train.features(), train.labels()),
        ));
    }
    if !val.is_empty() && (val.features() != spec.input_dim || val.labels() != spec.output_dim) {
        return Err(Error::shape(
            format!("{} features / {} labels", spec.input_dim, spec.output_dim),
            format!("validation {} features / {} labels", val.features(), val.labels()),
        ));
    }
    if cfg.batch_size > train.rows() {
        return Err(Error::InvalidConfig(format!(
            "batch size {} exceeds {} training rows",
            cfg.batch_size,
            train.rows()
        )));
    }

    let mut rows = Vec::with_capacity(cfg.epochs);
    let mut reached = None;
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let (kz, lr, clamped) = epoch_step(&net, train, cfg)?;

        let mut loss_sum = 0.0;
        let plan = batches(train.rows(), cfg.batch_size, cfg.shuffle_seed, epoch);
        let n_batches = plan.len();
        for (b, idx) in plan.into_iter().enumerate() {
            let x = train.x.select(Axis(0), &idx);
            let y = train.y.select(Axis(0), &idx);
            let dropout_seed = mix(mix(cfg.shuffle_seed, epoch as u64), b as u64);
            let trace = net.forward(x.view(), Mode::Train { seed: dropout_seed })?;
            let out = trace.output();
            let batch_loss = cfg.loss.value(out.view(), y.view())?;
            if !batch_loss.is_finite() {
                return Err(Error::Diverged { epoch, lr, loss: batch_loss });
            }
            loss_sum += batch_loss;
            let d_out = cfg.loss.gradient(out.view(), y.view())?;
            let grads = net.backward(&trace, d_out.view())?;
            net.apply_update(&grads, lr)?;
        }
        let train_loss = loss_sum / n_batches as f64;
        let val_loss = if val.is_empty() { None } else { Some(evaluate(&net, val, cfg.loss)?) };
        if !train_loss.is_finite() || val_loss.is_some_and(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                lr,
                loss: if train_loss.is_finite() { val_loss.unwrap_or(f64::NAN) } else { train_loss },
            });
        }

        rows.push(EpochRow {
            epoch,
            train_loss,
            val_loss,
            lr,
            kz,
            clamped,
            ms: started.elapsed().as_secs_f64() * 1e3,
        });
        log::trace!("epoch {epoch}: loss {train_loss:.6} lr {lr:.4} kz {kz:.4}");

        if reached.is_none() && cfg.threshold.is_some_and(|t| train_loss <= t) {
            reached = Some(epoch);
            if cfg.stop_at_threshold {
                break;
            }
        }
    }

    let record = RunRecord {
        epochs_run: rows.len(),
        rows,
        reached_threshold: reached,
        final_digest: net.digest(),
        config_hash: cfg.hash(),
        seed: init_seed,
        policy: cfg.lr_policy,
        loss: cfg.loss,
    };
    Ok((net, record))
}
