//! Inference over datasets: error records, per-category aggregation and
//! stress sweeps.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::datagen::{apply_stress, ScanPair, StressSpec};
use crate::dataset::{sample_rng, Sample};
use crate::error::{Error, Result};
use crate::metrics::{eval_completion, eval_registration, CompletionSet, EvalRecord};
use crate::networks::Model;
use crate::pointcloud::PointCloud;
use crate::trainer::{run_cr_flow, run_rc_flow, FlowOptions, FlowOutputs};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalFlow {
    #[default]
    Cr,
    Rc,
}

impl std::str::FromStr for EvalFlow {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cr" => Ok(Self::Cr),
            "rc" => Ok(Self::Rc),
            other => Err(Error::InvalidSpec(format!("unknown flow {other:?} (cr or rc)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub flow: EvalFlow,
    /// Substitute ground-truth transforms for the predicted ones.
    pub oracle_registration: bool,
}

/// Runs one flow in inference mode.
pub fn predict(model: &Model, p1: &PointCloud, p2: &PointCloud, flow: EvalFlow) -> Result<FlowOutputs> {
    let mut g = Graph::new();
    let parts = [g.cloud(p1), g.cloud(p2)];
    let vars = match flow {
        EvalFlow::Cr => run_cr_flow(&mut g, model, parts, FlowOptions::default())?,
        EvalFlow::Rc => run_rc_flow(&mut g, model, parts)?,
    };
    Ok(vars.outputs(&g))
}

/// Errors of one prediction against a pair's ground truth.
pub fn score(out: &FlowOutputs, pair: &ScanPair, options: &EvalOptions) -> Result<EvalRecord> {
    let (m12, m21) = if options.oracle_registration {
        (pair.m12_gt, pair.m21_gt)
    } else {
        (out.m12, out.m21)
    };
    let (e_theta, e_t) = eval_registration(&m12, &m21, &pair.m12_gt, &pair.m21_gt);
    let truth_levels = match options.flow {
        EvalFlow::Cr => &pair.missing_cr,
        EvalFlow::Rc => &pair.missing_rc,
    };
    let full = [pair.full_gt(0), pair.full_gt(1)];
    let generated = CompletionSet {
        levels: [&out.levels[0], &out.levels[1]],
        full: [&out.s[0], &out.s[1]],
    };
    let truth = CompletionSet {
        levels: [&truth_levels[0], &truth_levels[1]],
        full: [&full[0], &full[1]],
    };
    let [e_emd_g, e_emd_f, e_cd_g, e_cd_f] = eval_completion(generated, truth)?;
    Ok(EvalRecord {
        e_theta,
        e_t,
        e_emd_g,
        e_emd_f,
        e_cd_g,
        e_cd_f,
    })
}

pub fn evaluate_pair(model: &Model, pair: &ScanPair, options: &EvalOptions) -> Result<EvalRecord> {
    let out = predict(model, &pair.p1, &pair.p2, options.flow)?;
    score(&out, pair, options)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub id: String,
    pub category: String,
    pub record: EvalRecord,
}

/// Evaluates every sample, in order.
pub fn evaluate(model: &Model, samples: &[Sample], options: &EvalOptions) -> Result<Vec<SampleResult>> {
    samples
        .par_iter()
        .map(|s| {
            Ok(SampleResult {
                id: s.meta.id.clone(),
                category: s.meta.category.clone(),
                record: evaluate_pair(model, &s.pair, options)?,
            })
        })
        .collect()
}

/// One aggregate row: a category (or `average`) with its sample count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub category: String,
    pub record: EvalRecord,
    pub n_samples: usize,
}

/// Per-category means in first-seen order, then the mean over all samples.
pub fn aggregate(results: &[SampleResult]) -> Vec<AggregateRow> {
    let mut categories: Vec<&str> = Vec::new();
    for r in results {
        if !categories.contains(&r.category.as_str()) {
            categories.push(&r.category);
        }
    }
    let mut rows: Vec<AggregateRow> = categories
        .iter()
        .map(|&c| {
            let recs: Vec<EvalRecord> = results
                .iter()
                .filter(|r| r.category == c)
                .map(|r| r.record)
                .collect();
            AggregateRow {
                category: c.to_string(),
                record: EvalRecord::mean(&recs),
                n_samples: recs.len(),
            }
        })
        .collect();
    let all: Vec<EvalRecord> = results.iter().map(|r| r.record).collect();
    rows.push(AggregateRow {
        category: "average".into(),
        record: EvalRecord::mean(&all),
        n_samples: all.len(),
    });
    rows
}

pub const AGGREGATE_HEADER: [&str; 8] = [
    "category", "e_theta", "e_t", "e_emd_g", "e_emd_f", "e_cd_g", "e_cd_f", "n_samples",
];

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::format(path, e.to_string())
}

fn record_fields(r: &EvalRecord) -> Vec<String> {
    r.to_array().iter().map(|v| v.to_string()).collect()
}

pub fn write_aggregate_csv(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(AGGREGATE_HEADER).map_err(|e| csv_error(path, e))?;
    for row in rows {
        let mut fields = vec![row.category.clone()];
        fields.extend(record_fields(&row.record));
        fields.push(row.n_samples.to_string());
        w.write_record(&fields).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_samples_csv(path: &Path, results: &[SampleResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["id", "category"];
    header.extend(EvalRecord::COLUMNS);
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for r in results {
        let mut fields = vec![r.id.clone(), r.category.clone()];
        fields.extend(record_fields(&r.record));
        w.write_record(&fields).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Aggregate errors for one stress setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressRow {
    pub spec: StressSpec,
    pub record: EvalRecord,
    pub n_samples: usize,
}

pub const STRESS_HEADER: [&str; 10] = [
    "noise_level", "outlier_count", "filter", "e_theta", "e_t", "e_emd_g", "e_emd_f", "e_cd_g", "e_cd_f",
    "n_samples",
];

/// Evaluates every setting on perturbed copies of the inputs. Sample `k`
/// draws its perturbations from the same stream under every setting, so
/// settings are compared on paired noise.
pub fn stress_sweep(
    model: &Model,
    samples: &[Sample],
    settings: &[StressSpec],
    options: &EvalOptions,
    seed: u64,
) -> Result<Vec<StressRow>> {
    settings
        .iter()
        .map(|spec| {
            spec.validate()?;
            let records: Vec<EvalRecord> = samples
                .par_iter()
                .enumerate()
                .map(|(k, s)| {
                    let mut rng = sample_rng(seed, k as u64);
                    let p1 = apply_stress(&s.pair.p1, spec, &mut rng)?;
                    let p2 = apply_stress(&s.pair.p2, spec, &mut rng)?;
                    let out = predict(model, &p1, &p2, options.flow)?;
                    score(&out, &s.pair, options)
                })
                .collect::<Result<_>>()?;
            Ok(StressRow {
                spec: *spec,
                record: EvalRecord::mean(&records),
                n_samples: records.len(),
            })
        })
        .collect()
}

pub fn write_stress_csv(path: &Path, rows: &[StressRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(STRESS_HEADER).map_err(|e| csv_error(path, e))?;
    for row in rows {
        let mut fields = vec![
            row.spec.noise_level.to_string(),
            row.spec.outlier_count.to_string(),
            row.spec.filter_enabled.to_string(),
        ];
        fields.extend(record_fields(&row.record));
        fields.push(row.n_samples.to_string());
        w.write_record(&fields).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
