use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use tracing::{info, warn};

use ctf_core::checkpoint;
use ctf_core::datagen::{GenConfig, PointBudget, StressSpec};
use ctf_core::dataset::{generate_samples, sample_rng, BuildSpec, Dataset};
use ctf_core::eval::{
    aggregate, evaluate, stress_sweep, write_aggregate_csv, write_samples_csv, write_stress_csv, EvalFlow,
    EvalOptions,
};
use ctf_core::io::{read_cloud, write_xyz};
use ctf_core::pointcloud::PointCloud;
use ctf_core::shapes::{generate_shape, ShapeFamily};
use ctf_core::trainer::{train, TrainConfig};

use crate::args::{
    BudgetArg, EvalArgs, EvalTarget, FlowArg, GenDataArgs, GenShapesArgs, PresetArg, StressArgs, TrainArgs,
};
use crate::manifest::RunRecorder;
use crate::UsageError;

fn budget(arg: BudgetArg) -> PointBudget {
    match arg {
        BudgetArg::Full => PointBudget::FULL,
        BudgetArg::Small => PointBudget::SMALL,
        BudgetArg::Mini => PointBudget::MINI,
    }
}

fn flow(arg: FlowArg) -> EvalFlow {
    match arg {
        FlowArg::Cr => EvalFlow::Cr,
        FlowArg::Rc => EvalFlow::Rc,
    }
}

pub fn gen_shapes(args: &GenShapesArgs, rec: &mut RunRecorder) -> Result<()> {
    let families: Vec<ShapeFamily> = args
        .families
        .iter()
        .map(|f| f.parse().map_err(|e: ctf_core::Error| UsageError(e.to_string())))
        .collect::<Result<_, _>>()?;
    if args.count == 0 || args.points == 0 {
        return Err(UsageError("--count and --points must be positive".into()).into());
    }
    rec.seed(args.seed).output(&args.out).config(serde_json::json!({
        "families": args.families,
        "count": args.count,
        "points": args.points,
    }));
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut stream = 0u64;
    for family in families {
        for k in 0..args.count {
            let shape = generate_shape(family, args.points, &mut sample_rng(args.seed, stream))?;
            stream += 1;
            write_xyz(args.out.join(format!("{}_{k:03}.xyz", family.name())), &shape)?;
        }
    }
    info!(shapes = stream, out = %args.out.display(), "wrote shapes");
    Ok(())
}

/// Canonical clouds in `dir`, sorted by file name and keyed by file stem.
pub fn read_shapes(dir: &Path) -> Result<Vec<(String, PointCloud)>> {
    let entries = fs::read_dir(dir).with_context(|| format!("reading shapes directory {}", dir.display()))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("xyz" | "pcf")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no .xyz or .pcf shapes in {}", dir.display());
    }
    paths
        .iter()
        .map(|p| {
            let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let cloud = read_cloud(p).with_context(|| format!("reading shape {}", p.display()))?;
            Ok((id, cloud))
        })
        .collect()
}

pub fn gen_data(args: &GenDataArgs, rec: &mut RunRecorder) -> Result<()> {
    if args.count == 0 {
        return Err(UsageError("--count must be positive".into()).into());
    }
    if let Some(eta) = args.overlap {
        if !(0.0..=1.0).contains(&eta) {
            return Err(UsageError(format!("--overlap {eta} is outside [0, 1]")).into());
        }
    }
    let spec = BuildSpec {
        category: args.category.clone(),
        count: args.count,
        seed: args.seed,
        overlap: args.overlap,
        gen: GenConfig::with_budget(budget(args.budget)),
        train_fraction: args.train_fraction,
        val_fraction: args.val_fraction,
    };
    rec.seed(args.seed).input(&args.shapes).output(&args.out).config(serde_json::json!({
        "category": spec.category,
        "count": spec.count,
        "overlap": spec.overlap,
        "gen": spec.gen,
        "train_fraction": spec.train_fraction,
        "val_fraction": spec.val_fraction,
    }));
    let shapes = read_shapes(&args.shapes)?;
    info!(shapes = shapes.len(), count = args.count, "generating pairs");
    let (samples, failed) = generate_samples(&shapes, &spec)?;
    let skipped: Vec<String> = failed
        .iter()
        .map(|(k, e)| {
            warn!(sample = k, error = %e, "skipped");
            format!("{k:05}: {e}")
        })
        .collect();
    if samples.is_empty() {
        bail!("every sample failed to generate");
    }
    let ds = Dataset::write(&args.out, &spec, &samples, skipped)?;
    info!(
        written = samples.len(),
        skipped = failed.len(),
        train = ds.manifest.splits.train.len(),
        val = ds.manifest.splits.val.len(),
        test = ds.manifest.splits.test.len(),
        "dataset written"
    );
    Ok(())
}

pub fn load_train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut config = match (&args.config, args.preset) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?
        }
        (None, Some(PresetArg::TinyOverfit)) => TrainConfig::tiny_overfit(),
        (None, None) => TrainConfig::default(),
    };
    if let Some(n) = args.iterations {
        config.iterations = n;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    config.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(config)
}

pub fn train_cmd(args: &TrainArgs, rec: &mut RunRecorder) -> Result<()> {
    let config = load_train_config(args)?;
    rec.seed(config.seed).config(&config).input(&args.data).output(&args.out);
    if let Some(r) = &args.resume {
        rec.input(r);
    }
    let ds = Dataset::open(&args.data)?;
    let train_set = ds.load(&args.split)?;
    let val_set = if args.split == "train" { ds.load("val")? } else { Vec::new() };
    if train_set.is_empty() {
        bail!("split {:?} of {} is empty", args.split, args.data.display());
    }
    info!(train = train_set.len(), val = val_set.len(), "loaded dataset");
    let report = train(&train_set, &val_set, &config, &args.out, args.resume.as_deref())?;
    if let Some(r) = &report.final_eval {
        info!(
            e_theta = r.e_theta,
            e_t = r.e_t,
            e_emd_f = r.e_emd_f,
            "final evaluation"
        );
    }
    Ok(())
}

fn options(t: &EvalTarget) -> EvalOptions {
    EvalOptions {
        flow: flow(t.flow),
        oracle_registration: t.oracle_registration,
    }
}

fn record_target(t: &EvalTarget, rec: &mut RunRecorder) {
    rec.input(&t.data).input(&t.checkpoint).output(&t.out);
}

pub fn eval_cmd(args: &EvalArgs, rec: &mut RunRecorder) -> Result<()> {
    let t = &args.target;
    let opts = options(t);
    record_target(t, rec);
    rec.config(serde_json::json!({ "options": opts, "split": t.split }));
    let model = checkpoint::load(&t.checkpoint)?.model;
    let ds = Dataset::open(&t.data)?;
    let samples = ds.load(&t.split)?;
    if samples.is_empty() {
        bail!("split {:?} of {} is empty", t.split, t.data.display());
    }
    model.check_budget(ds.manifest.budget)?;
    let results = evaluate(&model, &samples, &opts)?;
    let rows = aggregate(&results);
    fs::create_dir_all(&t.out).with_context(|| format!("creating {}", t.out.display()))?;
    write_samples_csv(&t.out.join("samples.csv"), &results)?;
    write_aggregate_csv(&t.out.join("aggregate.csv"), &rows)?;
    let avg = &rows.last().expect("aggregate ends with the average").record;
    info!(e_theta = avg.e_theta, e_t = avg.e_t, e_emd_f = avg.e_emd_f, "evaluated {} samples", results.len());
    Ok(())
}

pub fn stress_settings(args: &StressArgs, part_points: usize) -> Vec<StressSpec> {
    let radius = args
        .filter_radius
        .unwrap_or_else(|| StressSpec::filter_radius_for(part_points));
    let filters: &[bool] = if args.filter { &[false, true] } else { &[false] };
    let mut out = Vec::new();
    for &noise_level in &args.noise {
        for &outlier_count in &args.outliers {
            for &filter_enabled in filters {
                out.push(StressSpec {
                    noise_level,
                    outlier_count,
                    filter_enabled,
                    filter_radius: radius,
                    filter_min_neighbors: args.filter_min_neighbors,
                });
            }
        }
    }
    out
}

pub fn stress_cmd(args: &StressArgs, rec: &mut RunRecorder) -> Result<()> {
    let t = &args.target;
    let opts = options(t);
    record_target(t, rec);
    let ds = Dataset::open(&t.data)?;
    let settings = stress_settings(args, ds.manifest.budget.part);
    for s in &settings {
        s.validate().map_err(|e| UsageError(e.to_string()))?;
    }
    rec.seed(args.seed)
        .config(serde_json::json!({ "options": opts, "split": t.split, "settings": settings }));
    let model = checkpoint::load(&t.checkpoint)?.model;
    model.check_budget(ds.manifest.budget)?;
    let samples = ds.load(&t.split)?;
    if samples.is_empty() {
        bail!("split {:?} of {} is empty", t.split, t.data.display());
    }
    let rows = stress_sweep(&model, &samples, &settings, &opts, args.seed)?;
    fs::create_dir_all(&t.out).with_context(|| format!("creating {}", t.out.display()))?;
    write_stress_csv(&t.out.join("stress.csv"), &rows)?;
    for r in &rows {
        info!(
            noise = r.spec.noise_level,
            outliers = r.spec.outlier_count,
            filter = r.spec.filter_enabled,
            e_theta = r.record.e_theta,
            "stress setting"
        );
    }
    Ok(())
}
