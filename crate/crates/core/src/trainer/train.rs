use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::autodiff::Graph;
use crate::checkpoint;
use crate::datagen::PointBudget;
use crate::dataset::{sample_rng, Sample};
use crate::error::{Error, Result};
use crate::eval::{aggregate, evaluate, EvalFlow, EvalOptions};
use crate::metrics::EvalRecord;
use crate::networks::{Model, ModelConfig};
use crate::nn::{clip_global_norm, param_gradients, Adam};

use super::flows::FlowOptions;
use super::losses::{build_loss, Ablation, FlowMode, LossTerms, LossWeights, TERM_COUNT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Cosine decay from the base rate to `final_lr` after warmup.
    Cosine { final_lr: f64 },
}

/// Trainer settings. Every field has a default, so a config file only needs
/// the fields it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Informational; samples of every category in the split are used.
    pub category: String,
    pub batch_size: usize,
    pub iterations: u64,
    pub lr: f64,
    pub warmup: u64,
    pub schedule: LrSchedule,
    pub width_divisor: usize,
    pub seed: u64,
    pub ablation: Ablation,
    pub weights: LossWeights,
    pub clip_norm: f64,
    pub checkpoint_every: u64,
    pub validate_every: u64,
    /// Flow used for the final evaluation. Defaults to C-R unless only the
    /// R-C flow is trained.
    pub eval_flow: Option<EvalFlow>,
    /// Registration in the C-R flow sees completions as constants.
    pub detach_completions: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            category: "all".into(),
            batch_size: 8,
            iterations: 20_000,
            lr: 1e-4,
            warmup: 100,
            schedule: LrSchedule::Constant,
            width_divisor: 1,
            seed: 0,
            ablation: Ablation::default(),
            weights: LossWeights::default(),
            clip_norm: 10.0,
            checkpoint_every: 500,
            validate_every: 500,
            eval_flow: None,
            detach_completions: false,
        }
    }
}

impl TrainConfig {
    /// Tiny widths and a faster, decaying learning rate for overfitting a
    /// handful of pairs on a CPU.
    pub fn tiny_overfit() -> Self {
        Self {
            iterations: 2000,
            lr: 3e-3,
            schedule: LrSchedule::Cosine { final_lr: 1e-5 },
            width_divisor: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(self.lr > 0.0) {
            return bad(format!("learning rate {}", self.lr));
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip norm {}", self.clip_norm));
        }
        if self.weights.to_array().iter().any(|w| !(*w >= 0.0)) {
            return bad("loss weights must be nonnegative".into());
        }
        if let LrSchedule::Cosine { final_lr } = self.schedule {
            if !(final_lr >= 0.0) {
                return bad(format!("final learning rate {final_lr}"));
            }
        }
        Ok(())
    }

    pub fn flow_options(&self) -> FlowOptions {
        FlowOptions {
            detach_completions: self.detach_completions,
        }
    }

    pub fn eval_flow(&self) -> EvalFlow {
        self.eval_flow.unwrap_or(match self.ablation.flow_mode {
            FlowMode::RcOnly => EvalFlow::Rc,
            _ => EvalFlow::Cr,
        })
    }

    /// Learning rate for 0-based step `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        if step < self.warmup {
            return self.lr * (step + 1) as f64 / self.warmup as f64;
        }
        match self.schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine { final_lr } => {
                let span = self.iterations.saturating_sub(self.warmup).max(1) as f64;
                let t = ((step - self.warmup) as f64 / span).min(1.0);
                final_lr + 0.5 * (self.lr - final_lr) * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

/// One training-log line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: u64,
    pub terms: LossTerms,
    pub total: f64,
}

pub const LOG_FILE: &str = "train_log.csv";
pub const VAL_LOG_FILE: &str = "val_log.csv";

pub fn log_header() -> String {
    let mut cols = vec!["iteration"];
    cols.extend(LossTerms::COLUMNS);
    cols.push("total");
    cols.join(",")
}

fn log_line(row: &LogRow) -> String {
    let mut fields = vec![row.iteration.to_string()];
    fields.extend(row.terms.to_array().iter().map(|v| v.to_string()));
    fields.push(row.total.to_string());
    fields.join(",")
}

/// Parses a training log written by [`train`].
pub fn read_log(path: &Path) -> Result<Vec<LogRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(log_header().as_str()) {
        return Err(Error::format(path, format!("expected header {}", log_header())));
    }
    lines
        .enumerate()
        .map(|(k, line)| {
            let v: Vec<f64> = line
                .split(',')
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::format(path, format!("row {}: bad number", k + 1)))?;
            if v.len() != TERM_COUNT + 2 {
                return Err(Error::format(path, format!("row {}: {} fields", k + 1, v.len())));
            }
            Ok(LogRow {
                iteration: v[0] as u64,
                terms: LossTerms::from_array(std::array::from_fn(|i| v[i + 1])),
                total: v[TERM_COUNT + 1],
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub start_iteration: u64,
    pub final_iteration: u64,
    pub log: Vec<LogRow>,
    pub best_val_loss: Option<f64>,
    pub final_eval: Option<EvalRecord>,
    pub final_checkpoint: PathBuf,
}

/// Loss terms and gradients for one sample.
struct SampleStep {
    terms: LossTerms,
    total: f64,
    grads: Vec<Array2<f64>>,
}

fn sample_step(model: &Model, sample: &Sample, config: &TrainConfig, with_grads: bool) -> Result<SampleStep> {
    let mut g = Graph::new();
    let loss = build_loss(&mut g, model, &sample.pair, &config.weights, &config.ablation, config.flow_options())?;
    let total = g.scalar(loss.total);
    let terms = loss.term_values(&g);
    let grads = if with_grads && total.is_finite() {
        param_gradients(&model.store, &g, loss.total)
    } else {
        Vec::new()
    };
    Ok(SampleStep { terms, total, grads })
}

fn mean_terms(steps: &[SampleStep]) -> (LossTerms, f64) {
    let n = steps.len() as f64;
    let mut acc = [0.0; TERM_COUNT];
    let mut total = 0.0;
    for s in steps {
        for (a, v) in acc.iter_mut().zip(s.terms.to_array()) {
            *a += v / n;
        }
        total += s.total / n;
    }
    (LossTerms::from_array(acc), total)
}

/// Indices of the samples in 0-based batch `step`. Each epoch is a fresh
/// seeded permutation, so the sequence is a pure function of the seed.
fn batch_indices(n: usize, batch: usize, step: u64, seed: u64) -> Vec<usize> {
    let start = step as usize * batch;
    (start..start + batch)
        .map(|pos| {
            let epoch = pos / n;
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut sample_rng(seed, epoch as u64));
            perm[pos % n]
        })
        .collect()
}

fn budget_of(samples: &[Sample]) -> Result<PointBudget> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidSpec("empty training split".into()))?
        .meta
        .budget;
    if samples.iter().any(|s| s.meta.budget != first) {
        return Err(Error::Schema("samples use different point budgets".into()));
    }
    Ok(first)
}

fn write_nan_dump(out: &Path, iteration: u64, batch: &[&Sample], steps: &[SampleStep]) -> Result<PathBuf> {
    let entries: Vec<_> = batch
        .iter()
        .zip(steps)
        .map(|(s, st)| {
            serde_json::json!({
                "id": s.meta.id,
                "shape_id": s.meta.shape_id,
                "total": st.total.to_string(),
                "terms": st.terms.to_array().map(|v| v.to_string()),
            })
        })
        .collect();
    let dump = serde_json::json!({ "iteration": iteration, "samples": entries });
    let path = out.join("nan_dump.json");
    fs::write(&path, serde_json::to_string_pretty(&dump)?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Minibatch Adam on the total loss of both networks.
///
/// Writes `train_log.csv`, `val_log.csv`, `checkpoints/iter_NNNNNN`,
/// `checkpoints/best`, `checkpoints/final` and `final_eval.json` under
/// `out`. With `resume`, training continues from that checkpoint's
/// iteration and the existing log is truncated to it.
pub fn train(
    train_set: &[Sample],
    val_set: &[Sample],
    config: &TrainConfig,
    out: &Path,
    resume: Option<&Path>,
) -> Result<TrainReport> {
    config.validate()?;
    let model_config = ModelConfig {
        width_divisor: config.width_divisor,
        budget: budget_of(train_set)?,
    };
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let ckpt_root = out.join("checkpoints");

    let (mut model, mut adam, start) = match resume {
        Some(dir) => {
            let loaded = checkpoint::load_expecting(dir, &model_config)?;
            let adam = loaded.adam.unwrap_or_else(|| Adam::new(&loaded.model.store));
            (loaded.model, adam, loaded.manifest.iteration)
        }
        None => {
            let model = Model::new(model_config, config.seed)?;
            let adam = Adam::new(&model.store);
            (model, adam, 0)
        }
    };
    info!(
        params = model.store.numel(),
        start,
        iterations = config.iterations,
        "training"
    );

    let log_path = out.join(LOG_FILE);
    let mut log: Vec<LogRow> = if resume.is_some() && log_path.exists() {
        read_log(&log_path)?
            .into_iter()
            .filter(|r| r.iteration <= start)
            .collect()
    } else {
        Vec::new()
    };
    let mut log_file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    writeln!(log_file, "{}", log_header()).map_err(|e| Error::io(&log_path, e))?;
    for row in &log {
        writeln!(log_file, "{}", log_line(row)).map_err(|e| Error::io(&log_path, e))?;
    }
    let val_path = out.join(VAL_LOG_FILE);
    let mut val_file = fs::File::create(&val_path).map_err(|e| Error::io(&val_path, e))?;
    writeln!(val_file, "iteration,total").map_err(|e| Error::io(&val_path, e))?;

    let mut best_val: Option<f64> = None;
    for step in start..config.iterations {
        let iteration = step + 1;
        let idx = batch_indices(train_set.len(), config.batch_size, step, config.seed);
        let batch: Vec<&Sample> = idx.iter().map(|&i| &train_set[i]).collect();
        let steps: Vec<SampleStep> = batch
            .par_iter()
            .map(|s| sample_step(&model, s, config, true))
            .collect::<Result<_>>()?;
        let (terms, total) = mean_terms(&steps);
        if !total.is_finite() {
            let dump = write_nan_dump(out, iteration, &batch, &steps)?;
            return Err(Error::NonFiniteLoss {
                iteration,
                detail: format!("batch written to {}", dump.display()),
            });
        }
        let mut grads = model.store.zeros_like();
        let k = 1.0 / steps.len() as f64;
        for s in &steps {
            for (acc, g) in grads.iter_mut().zip(&s.grads) {
                acc.scaled_add(k, g);
            }
        }
        let norm = clip_global_norm(&mut grads, config.clip_norm);
        adam.update(&mut model.store, &grads, config.lr_at(step));

        let row = LogRow {
            iteration,
            terms,
            total,
        };
        writeln!(log_file, "{}", log_line(&row)).map_err(|e| Error::io(&log_path, e))?;
        log.push(row);
        if iteration % 50 == 0 || iteration == config.iterations {
            info!(iteration, total, grad_norm = norm, "step");
        }

        if config.checkpoint_every > 0 && iteration % config.checkpoint_every == 0 {
            let dir = ckpt_root.join(format!("iter_{iteration:06}"));
            checkpoint::save(&dir, &model, config.seed, iteration, Some(&adam))?;
        }
        let validate_now = config.validate_every > 0 && iteration % config.validate_every == 0;
        if !val_set.is_empty() && (validate_now || iteration == config.iterations) {
            let val_steps: Vec<SampleStep> = val_set
                .par_iter()
                .map(|s| sample_step(&model, s, config, false))
                .collect::<Result<_>>()?;
            let (_, val_total) = mean_terms(&val_steps);
            writeln!(val_file, "{iteration},{val_total}").map_err(|e| Error::io(&val_path, e))?;
            info!(iteration, val_total, "validation");
            if best_val.is_none_or(|b| val_total < b) {
                best_val = Some(val_total);
                checkpoint::save(&ckpt_root.join("best"), &model, config.seed, iteration, None)?;
            }
        }
    }

    let final_iteration = config.iterations.max(start);
    let final_dir = ckpt_root.join("final");
    checkpoint::save(&final_dir, &model, config.seed, final_iteration, Some(&adam))?;

    let eval_set = if val_set.is_empty() { train_set } else { val_set };
    let options = EvalOptions {
        flow: config.eval_flow(),
        oracle_registration: false,
    };
    // Score the stored weights so the report matches a later `eval` run.
    let stored = checkpoint::load(&final_dir)?.model;
    let final_eval = match evaluate(&stored, eval_set, &options) {
        Ok(results) => {
            let rows = aggregate(&results);
            let avg = rows.last().expect("aggregate has an average row").record;
            let path = out.join("final_eval.json");
            fs::write(&path, serde_json::to_string_pretty(&rows)?).map_err(|e| Error::io(&path, e))?;
            Some(avg)
        }
        Err(e) => {
            warn!(error = %e, "final evaluation failed");
            None
        }
    };

    Ok(TrainReport {
        start_iteration: start,
        final_iteration,
        log,
        best_val_loss: best_val,
        final_eval,
        final_checkpoint: final_dir,
    })
}
