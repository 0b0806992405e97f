//! Acceptance suite. Prints one PASS/FAIL line per criterion; tolerances and
//! time limits are pinned below.
//!
//! Run with `cargo test -p ctf-core --test acceptance` (the test profile is
//! already optimized). Criteria 6 to 8 share three tiny training runs and
//! take most of the time.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ctf_core::checkpoint;
use ctf_core::datagen::{
    generate_pair, generate_pair_overlap, GenConfig, PointBudget, StressSpec,
};
use ctf_core::dataset::{generate_samples, sample_rng, BuildSpec, Dataset, Sample};
use ctf_core::eval::{aggregate, evaluate, stress_sweep, EvalFlow, EvalOptions};
use ctf_core::geometry::{angle_deg, dist_m, dist_q, random_rotation, random_transform, RigidTransform, Vec3};
use ctf_core::metrics::emd::{emd_approx, emd_exact, DEFAULT_AUCTION_PHASES};
use ctf_core::metrics::EvalRecord;
use ctf_core::networks::{Model, ModelConfig};
use ctf_core::pointcloud::PointCloud;
use ctf_core::shapes::{generate_shape, ShapeFamily};
use ctf_core::trainer::gradcheck::{gradient_check, GradCheckSettings};
use ctf_core::trainer::{
    build_loss, consistency_terms, train, Ablation, FlowMode, FlowOptions, FlowOutputs, LossTerms, LossWeights,
    TrainConfig, TrainReport,
};
use ctf_core::autodiff::Graph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Criterion 1
const GEOMETRY_CASES: usize = 10_000;
const GEOMETRY_TOL: f64 = 1e-9;
const GEOMETRY_LIMIT: Duration = Duration::from_secs(10);
// Criterion 2
const EMD_PAIRS: usize = 200;
const EMD_POINTS: usize = 128;
const EMD_REL_TOL: f64 = 0.02;
const EMD_LIMIT: Duration = Duration::from_secs(120);
// Criterion 3
const DATAGEN_PAIRS: usize = 1000;
const DATAGEN_SHAPES: usize = 24;
const OVERLAP_PAIRS_PER_ETA: usize = 10;
const DATAGEN_LIMIT: Duration = Duration::from_secs(300);
// Criterion 4
const GRADCHECK_PASS_FRACTION: f64 = 0.95;
const GRADCHECK_LIMIT: Duration = Duration::from_secs(600);
// Criterion 5
const CONSISTENCY_TOL: f64 = 1e-12;
// Criterion 6
const OVERFIT_SHAPES: usize = 8;
const OVERFIT_LOSS_DROP: f64 = 0.90;
const OVERFIT_E_THETA: f64 = 10.0;
const OVERFIT_E_T: f64 = 10.0;
const OVERFIT_E_EMD_F: f64 = 10.0;
const OVERFIT_LIMIT: Duration = Duration::from_secs(1800);
/// Loss drop compares the mean total of this many iterations at each end.
const LOSS_WINDOW: usize = 10;
// Criterion 8
const NOISE_LEVELS: [f64; 6] = [0.005, 0.03, 0.06, 0.09, 0.12, 0.15];
/// Outlier counts at 2048 points per part, scaled to the training budget.
const OUTLIERS_AT_FULL: [usize; 2] = [50, 100];
// Criterion 9
const DETERMINISM_ITERATIONS: u64 = 20;
const CURVE_REL_TOL: f64 = 1e-4;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn run(n: usize, name: &str, results: &mut Vec<bool>, f: impl FnOnce() -> Outcome) {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f));
    let elapsed = start.elapsed().as_secs_f64();
    let o = result.unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        outcome(false, format!("panicked: {msg}"))
    });
    let tag = if o.pass { "PASS" } else { "FAIL" };
    println!("criterion {n} {tag} {name} ({elapsed:.1} s): {}", o.detail);
    results.push(o.pass);
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
    (0..n)
        .map(|_| Vec3::from_fn(|_, _| rng.random_range(-0.5..0.5)))
        .collect()
}

fn oracle_quat(q: &ctf_core::geometry::UnitQuaternion) -> nalgebra::UnitQuaternion<f64> {
    let [w, x, y, z] = q.to_array();
    nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z))
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut failures = BTreeMap::<&str, usize>::new();
    let mut fail = |name| *failures.entry(name).or_default() += 1;
    for _ in 0..GEOMETRY_CASES {
        let a = random_rotation(&mut rng);
        let b = random_rotation(&mut rng);
        let ma = random_transform(&mut rng, 1.0);
        let mb = random_transform(&mut rng, 1.0);
        let p = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0));

        let norm: f64 = a.to_array().iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > GEOMETRY_TOL {
            fail("unit norm");
        }
        if dist_q(&a, &a.neg()) != 0.0 {
            fail("antipodal dist_q");
        }
        if angle_deg(&a, &b) != angle_deg(&b, &a) {
            fail("angle symmetry");
        }
        // Hamilton product and rotation against nalgebra.
        let ab = oracle_quat(&a) * oracle_quat(&b);
        let ours = oracle_quat(&a.mul(b));
        if ab.angle_to(&ours) > GEOMETRY_TOL * 10.0 {
            fail("product vs oracle");
        }
        if (a.rotate(&p) - oracle_quat(&a) * p).norm() > GEOMETRY_TOL {
            fail("rotation vs oracle");
        }
        let round = ma.compose(&ma.inverse());
        if dist_m(&round, &RigidTransform::IDENTITY) > GEOMETRY_TOL {
            fail("compose inverse");
        }
        let left = ma.inverse().compose(&ma);
        if dist_m(&left, &RigidTransform::IDENTITY) > GEOMETRY_TOL {
            fail("inverse compose");
        }
        let chained = ma.compose(&mb).apply_point(&p);
        if (chained - ma.apply_point(&mb.apply_point(&p))).norm() > GEOMETRY_TOL {
            fail("compose application");
        }
    }
    let elapsed = start.elapsed();
    let ok = failures.is_empty() && elapsed < GEOMETRY_LIMIT;
    outcome(
        ok,
        format!("{GEOMETRY_CASES} cases, failures {failures:?}, {:.2} s", elapsed.as_secs_f64()),
    )
}

fn brute_force_emd(a: &PointCloud, b: &PointCloud) -> f64 {
    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }
    let n = a.len();
    permutations(n)
        .iter()
        .map(|perm| {
            perm.iter()
                .enumerate()
                .map(|(i, &j)| (a.points()[i] - b.points()[j]).norm())
                .sum::<f64>()
                / n as f64
        })
        .fold(f64::INFINITY, f64::min)
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..EMD_PAIRS {
        let a = random_cloud(&mut rng, EMD_POINTS);
        let b = random_cloud(&mut rng, EMD_POINTS);
        let exact = emd_exact(&a, &b).unwrap().cost;
        let approx = emd_approx(&a, &b, DEFAULT_AUCTION_PHASES).unwrap().cost;
        worst = worst.max((approx - exact).abs() / exact);
    }
    let mut brute_mismatch = 0;
    let mut brute_cases = 0;
    for n in 2..=4 {
        for _ in 0..100 {
            let a = random_cloud(&mut rng, n);
            let b = random_cloud(&mut rng, n);
            let exact = emd_exact(&a, &b).unwrap().cost;
            if (exact - brute_force_emd(&a, &b)).abs() > 1e-12 {
                brute_mismatch += 1;
            }
            brute_cases += 1;
        }
    }
    let elapsed = start.elapsed();
    let ok = worst <= EMD_REL_TOL && brute_mismatch == 0 && elapsed < EMD_LIMIT;
    outcome(
        ok,
        format!(
            "auction worst rel err {worst:.2e} over {EMD_PAIRS} pairs; brute force {brute_mismatch}/{brute_cases} mismatches"
        ),
    )
}

fn procedural_shapes(count: usize, points: usize, seed: u64) -> Vec<PointCloud> {
    (0..count)
        .map(|k| {
            let family = ShapeFamily::ALL[k % ShapeFamily::ALL.len()];
            generate_shape(family, points, &mut sample_rng(seed, k as u64)).unwrap()
        })
        .collect()
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let config = GenConfig::default();
    let budget = config.budget;
    let shapes = procedural_shapes(DATAGEN_SHAPES, budget.shape, 3);
    let min = budget.min_crop_points();
    let results: Vec<Result<Vec<&str>, String>> = {
        use rayon::prelude::*;
        (0..DATAGEN_PAIRS)
            .into_par_iter()
            .map(|k| {
                let shape = &shapes[k % shapes.len()];
                let pair = generate_pair(shape, &mut sample_rng(30, k as u64), &config).map_err(|e| e.to_string())?;
                let mut broken = Vec::new();
                if (pair.crops[0].center() - pair.crops[1].center()).norm() < 0.3 {
                    broken.push("center distance");
                }
                let prov = pair.provenance.as_ref().unwrap();
                for crop in &prov.crops {
                    if crop.len() <= min || shape.len() - crop.len() <= min {
                        broken.push("crop size");
                    }
                }
                if pair.p1.len() != budget.part || pair.p2.len() != budget.part {
                    broken.push("part size");
                }
                if pair.crops.iter().any(|c| !(0.3..=1.3).contains(&c.radius)) {
                    broken.push("radius");
                }
                if dist_m(&pair.m12_gt.compose(&pair.m21_gt), &RigidTransform::IDENTITY) > 1e-6 {
                    broken.push("compose identity");
                }
                Ok(broken)
            })
            .collect()
    };
    let mut generated = 0;
    let mut errors = 0;
    let mut broken = BTreeMap::<&str, usize>::new();
    for r in &results {
        match r {
            Ok(b) => {
                generated += 1;
                for name in b {
                    *broken.entry(name).or_default() += 1;
                }
            }
            Err(_) => errors += 1,
        }
    }

    let overlap_config = GenConfig {
        max_attempts: 400,
        ..GenConfig::default()
    };
    let mut overlap_report = Vec::new();
    let mut overlap_ok = true;
    for eta in [0.0, 0.2, 0.4, 0.6, 0.8] {
        let mut emitted = 0;
        let mut outside = 0;
        for k in 0..OVERLAP_PAIRS_PER_ETA {
            let shape = &shapes[k % shapes.len()];
            let mut rng = sample_rng(31, (eta * 10.0) as u64 * 1000 + k as u64);
            if let Ok(pair) = generate_pair_overlap(shape, eta, &mut rng, &overlap_config) {
                emitted += 1;
                if pair.overlap_iou < 0.9 * eta || pair.overlap_iou > 1.1 * eta {
                    outside += 1;
                }
            }
        }
        overlap_ok &= emitted > 0 && outside == 0;
        overlap_report.push(format!("η={eta}: {emitted} emitted, {outside} outside"));
    }
    let elapsed = start.elapsed();
    let ok = generated == DATAGEN_PAIRS && broken.is_empty() && overlap_ok && elapsed < DATAGEN_LIMIT;
    outcome(
        ok,
        format!(
            "{generated}/{DATAGEN_PAIRS} pairs generated ({errors} rejected shapes), violations {broken:?}; {}",
            overlap_report.join(", ")
        ),
    )
}

fn mini_pair(seed: u64) -> ctf_core::datagen::ScanPair {
    let config = GenConfig::with_budget(PointBudget::MINI);
    let shapes = procedural_shapes(6, PointBudget::MINI.shape, seed);
    (0..)
        .find_map(|k| generate_pair(&shapes[k % 6], &mut sample_rng(seed, k as u64), &config).ok())
        .unwrap()
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let model = Model::new(ModelConfig::tiny(PointBudget::MINI), 4).unwrap();
    let pair = mini_pair(4);
    let settings = GradCheckSettings::default();
    let report = gradient_check(
        &model,
        &pair,
        &LossWeights::default(),
        &Ablation::default(),
        FlowOptions::default(),
        &settings,
    )
    .unwrap();
    let frac = report.pass_fraction();
    let elapsed = start.elapsed();
    outcome(
        frac >= GRADCHECK_PASS_FRACTION && elapsed < GRADCHECK_LIMIT,
        format!(
            "{:.1}% of {} probes within {} relative",
            frac * 100.0,
            report.probes.len(),
            settings.rel_tol
        ),
    )
}

fn criterion_5() -> Outcome {
    let w = LossWeights::default();
    let mut notes = Vec::new();
    let mut ok = true;
    let mut check = |name: &str, got: f64, want: f64| {
        if got != want {
            ok = false;
            notes.push(format!("{name}: {got} != {want}"));
        }
    };
    // Hand-computed weighted sums.
    let t = LossTerms::from_array([0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]);
    check("L_c", t.completion_loss(&w), 0.1 * 1.0 + 0.2 * 3.0 + 0.3 * 0.5 + 0.4 * 1.5);
    check("L_r", t.registration_loss(&w), 0.5 * 3.0 + 0.6 * 9.0);
    check("L_s", t.consistency_loss(&w), 0.7 * 3.0 + 0.8 * 1.0 + 0.9 * 3.0 + 1.0 * 3.0);
    let ones = LossTerms::from_array([1.0; 10]);
    check("sum of weights", ones.weighted_sum(&w.to_array()), 28.0);

    // Identical flows with mutually inverse transforms have zero consistency,
    // up to rounding in the cycle term.
    let model = Model::new(ModelConfig::tiny(PointBudget::MINI), 5).unwrap();
    let pair = mini_pair(5);
    let mut out: FlowOutputs = ctf_core::eval::predict(&model, &pair.p1, &pair.p2, EvalFlow::Cr).unwrap();
    out.m21 = out.m12.inverse();
    let s = consistency_terms(&out, &out.clone(), pair.part_points()).unwrap();
    let consistency = s[0] * w.s_o + s[1] * w.s_c + s[2] * w.s_r + s[3] * w.s_t;
    if consistency > CONSISTENCY_TOL {
        ok = false;
        notes.push(format!("consistency of identical flows is {consistency:e}"));
    }

    // Each flag zeroes exactly its own column.
    let flags: [(usize, fn(&mut Ablation)); 4] = [
        (6, |a| a.no_ls_o = true),
        (7, |a| a.no_ls_c = true),
        (8, |a| a.no_ls_r = true),
        (9, |a| a.no_ls_t = true),
    ];
    let terms = |ablation: &Ablation| {
        let mut g = Graph::new();
        let loss = build_loss(&mut g, &model, &pair, &w, ablation, FlowOptions::default()).unwrap();
        loss.term_values(&g).to_array()
    };
    let base = terms(&Ablation::default());
    for (col, set) in flags {
        let mut ablation = Ablation::default();
        set(&mut ablation);
        let v = terms(&ablation);
        for k in 0..10 {
            let expect_zero = k == col;
            if expect_zero != (v[k] == 0.0) || (!expect_zero && v[k] != base[k]) {
                ok = false;
                notes.push(format!("flag for column {col} changed column {k}"));
            }
        }
    }
    let detail = if notes.is_empty() {
        "weighted sums exact; identical flows give zero consistency; ablation flags isolate their columns".into()
    } else {
        notes.join("; ")
    };
    outcome(ok, detail)
}

struct OverfitFixture {
    dir: tempfile::TempDir,
    samples: Vec<Sample>,
    spec: BuildSpec,
}

impl OverfitFixture {
    fn new() -> Self {
        let budget = PointBudget::SMALL;
        let shapes: Vec<(String, PointCloud)> = (0..OVERFIT_SHAPES)
            .map(|k| {
                let cloud = generate_shape(ShapeFamily::Chair, budget.shape, &mut sample_rng(99, k as u64)).unwrap();
                (format!("chair_{k:02}"), cloud)
            })
            .collect();
        let spec = BuildSpec {
            category: "chair".into(),
            count: OVERFIT_SHAPES,
            seed: 5,
            overlap: None,
            gen: GenConfig::with_budget(budget),
            train_fraction: 1.0,
            val_fraction: 0.0,
        };
        let (samples, failed) = generate_samples(&shapes, &spec).unwrap();
        assert!(failed.is_empty(), "fixture generation failed: {failed:?}");
        Self {
            dir: tempfile::tempdir().unwrap(),
            samples,
            spec,
        }
    }

    fn config(flow_mode: FlowMode) -> TrainConfig {
        TrainConfig {
            ablation: Ablation {
                flow_mode,
                ..Ablation::default()
            },
            checkpoint_every: 0,
            validate_every: 0,
            ..TrainConfig::tiny_overfit()
        }
    }

    fn train(&self, name: &str, config: &TrainConfig) -> (TrainReport, Duration) {
        let start = Instant::now();
        let report = train(&self.samples, &[], config, &self.dir.path().join(name), None).unwrap();
        (report, start.elapsed())
    }
}

fn loss_drop(report: &TrainReport) -> f64 {
    let totals: Vec<f64> = report.log.iter().map(|r| r.total).collect();
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let first = mean(&totals[..LOSS_WINDOW]);
    let last = mean(&totals[totals.len() - LOSS_WINDOW..]);
    1.0 - last / first
}

fn criterion_6(report: &TrainReport, elapsed: Duration) -> Outcome {
    let drop = loss_drop(report);
    let r = report.final_eval.expect("final evaluation");
    let ok = drop >= OVERFIT_LOSS_DROP
        && r.e_theta < OVERFIT_E_THETA
        && r.e_t < OVERFIT_E_T
        && r.e_emd_f < OVERFIT_E_EMD_F
        && elapsed < OVERFIT_LIMIT
        && report.final_iteration <= 2000;
    outcome(
        ok,
        format!(
            "{} iterations in {:.0} s, loss drop {:.1}%, E_θ {:.3}°, E_t {:.3}, E_emd^f {:.3}",
            report.final_iteration,
            elapsed.as_secs_f64(),
            drop * 100.0,
            r.e_theta,
            r.e_t,
            r.e_emd_f
        ),
    )
}

fn criterion_7(full: &EvalRecord, cr: &EvalRecord, rc: &EvalRecord) -> Outcome {
    let ordering = cr.e_theta <= rc.e_theta;
    if !ordering {
        println!(
            "note: C-R-only E_θ {:.3} exceeds R-C-only E_θ {:.3} (not fatal)",
            cr.e_theta, rc.e_theta
        );
    }
    outcome(
        full.e_theta <= cr.e_theta,
        format!(
            "E_θ full {:.3} / C-R only {:.3} / R-C only {:.3}; C-R ≤ R-C {}",
            full.e_theta,
            cr.e_theta,
            rc.e_theta,
            if ordering { "holds" } else { "does not hold" }
        ),
    )
}

fn criterion_8(model: &Model, samples: &[Sample]) -> Outcome {
    let opts = EvalOptions::default();
    let plain = aggregate(&evaluate(model, samples, &opts).unwrap());
    let plain = plain.last().unwrap().record;
    let part = model.part_points();
    let mut noise: Vec<StressSpec> = vec![StressSpec::default()];
    noise.extend(NOISE_LEVELS.iter().map(|&z| StressSpec {
        noise_level: z,
        ..StressSpec::default()
    }));
    let rows = stress_sweep(model, samples, &noise, &opts, 8).unwrap();
    let finite = rows.iter().all(|r| r.record.to_array().iter().all(|v| v.is_finite()));
    let clean_matches = rows[0].record.to_array() == plain.to_array();

    let mut outlier_settings = Vec::new();
    for k in OUTLIERS_AT_FULL {
        let count = (k * part).div_ceil(2048);
        for filter_enabled in [false, true] {
            outlier_settings.push(StressSpec {
                outlier_count: count,
                filter_enabled,
                filter_radius: StressSpec::filter_radius_for(part),
                ..StressSpec::default()
            });
        }
    }
    let outlier_rows = stress_sweep(model, samples, &outlier_settings, &opts, 8).unwrap();
    let mut filter_ok = true;
    let mut pairs = Vec::new();
    for chunk in outlier_rows.chunks(2) {
        let (raw, filtered) = (&chunk[0], &chunk[1]);
        filter_ok &= filtered.record.e_theta <= raw.record.e_theta;
        pairs.push(format!(
            "{} outliers: {:.3}° unfiltered, {:.3}° filtered",
            raw.spec.outlier_count, raw.record.e_theta, filtered.record.e_theta
        ));
    }
    outcome(
        finite && clean_matches && filter_ok,
        format!(
            "{} noise rows finite: {finite}; ζ=0 row bit-identical to eval: {clean_matches}; {}",
            rows.len(),
            pairs.join("; ")
        ),
    )
}

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn criterion_9(fixture: &OverfitFixture) -> Outcome {
    let shapes: Vec<(String, PointCloud)> = procedural_shapes(4, PointBudget::SMALL.shape, 9)
        .into_iter()
        .enumerate()
        .map(|(k, c)| (format!("s{k}"), c))
        .collect();
    let spec = BuildSpec {
        count: 12,
        seed: 9,
        ..fixture.spec.clone()
    };
    let build = |threads: usize, name: &str| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let root = fixture.dir.path().join(name);
        pool.install(|| {
            let (samples, failed) = generate_samples(&shapes, &spec).unwrap();
            let skipped = failed.iter().map(|(k, e)| format!("{k}: {e}")).collect();
            Dataset::write(&root, &spec, &samples, skipped).unwrap();
        });
        snapshot(&root)
    };
    let datasets_equal = build(1, "det_a") == build(3, "det_b");

    let config = TrainConfig {
        iterations: DETERMINISM_ITERATIONS,
        ..OverfitFixture::config(FlowMode::Both)
    };
    let curve = |threads: usize, name: &str| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| fixture.train(name, &config).0.log)
    };
    let a = curve(1, "curve_a");
    let b = curve(3, "curve_b");
    let worst = a
        .iter()
        .zip(&b)
        .flat_map(|(x, y)| {
            let (xs, ys) = (x.terms.to_array(), y.terms.to_array());
            (0..10)
                .map(move |k| (xs[k], ys[k]))
                .chain([(x.total, y.total)])
                .collect::<Vec<_>>()
        })
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(f64::MIN_POSITIVE))
        .fold(0.0f64, f64::max);
    let ok = datasets_equal && a.len() == b.len() && worst <= CURVE_REL_TOL;
    outcome(
        ok,
        format!(
            "datasets byte-identical across worker counts: {datasets_equal}; loss curves worst rel diff {worst:.2e}"
        ),
    )
}

fn main() {
    // Integration-test binaries receive harness flags; none apply here.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut results = Vec::new();
    run(1, "geometry invariants", &mut results, criterion_1);
    run(2, "EMD oracle equivalence", &mut results, criterion_2);
    run(3, "datagen constraints", &mut results, criterion_3);
    run(4, "gradient check", &mut results, criterion_4);
    run(5, "loss algebra", &mut results, criterion_5);

    let fixture = OverfitFixture::new();
    let full = catch_unwind(AssertUnwindSafe(|| fixture.train("full", &OverfitFixture::config(FlowMode::Both))));
    match &full {
        Ok((report, elapsed)) => run(6, "overfit smoke run", &mut results, || criterion_6(report, *elapsed)),
        Err(_) => run(6, "overfit smoke run", &mut results, || outcome(false, "training failed")),
    }
    run(7, "two-flow benefit", &mut results, || {
        let full = full.as_ref().expect("full run").0.final_eval.expect("final eval");
        let cr = fixture.train("cr_only", &OverfitFixture::config(FlowMode::CrOnly)).0;
        let rc = fixture.train("rc_only", &OverfitFixture::config(FlowMode::RcOnly)).0;
        criterion_7(&full, &cr.final_eval.expect("final eval"), &rc.final_eval.expect("final eval"))
    });
    run(8, "stress harness", &mut results, || {
        let (report, _) = full.as_ref().expect("full run");
        let model = checkpoint::load(&report.final_checkpoint).unwrap().model;
        criterion_8(&model, &fixture.samples)
    });
    run(9, "determinism", &mut results, || criterion_9(&fixture));

    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
}
