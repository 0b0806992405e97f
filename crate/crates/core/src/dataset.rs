//! On-disk datasets of scan pairs.
//!
//! ```text
//! <root>/manifest.json
//! <root>/samples/<id>/part1.xyz, part2.xyz, gt.xyz, meta.json
//! <root>/samples/<id>/missing_{cr1,cr2,rc1,rc2}_{n}.xyz
//! ```
//!
//! Level files are named by their point counts (`128/512/2048` at full
//! scale).

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{generate_pair, generate_pair_overlap, CropSpec, GenConfig, Levels, PointBudget, ScanPair};
use crate::error::{Error, Result};
use crate::geometry::{RigidTransform, UnitQuaternion, Vec3};
use crate::io::{read_xyz, write_xyz};
use crate::pointcloud::{fps_indices, PointCloud};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATASET_FORMAT: &str = "ctf-dataset-v1";

/// Per-sample RNG: one ChaCha stream per sample index, so results do not
/// depend on generation order or worker count.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub id: String,
    pub category: String,
    pub shape_id: String,
    pub seed: u64,
    pub stream: u64,
    pub budget: PointBudget,
    pub m1: RigidTransform,
    pub m2: RigidTransform,
    pub m12_gt: RigidTransform,
    pub m21_gt: RigidTransform,
    pub r1o_gt: UnitQuaternion,
    pub r2o_gt: UnitQuaternion,
    pub crops: [CropSpec; 2],
    pub offsets: [[f64; 3]; 2],
    pub overlap_iou: f64,
    pub overlap_target: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Splits {
    /// Shuffles `ids` with `seed` and cuts them by the given fractions.
    /// The test split takes whatever remains.
    pub fn assign(ids: &[String], train: f64, val: f64, seed: u64) -> Result<Self> {
        if !(train >= 0.0 && val >= 0.0 && train + val <= 1.0 + 1e-12) {
            return Err(Error::InvalidSpec(format!("split fractions {train}/{val}")));
        }
        let mut order = ids.to_vec();
        order.shuffle(&mut sample_rng(seed, u64::MAX));
        let n = order.len();
        let n_train = ((n as f64) * train).round() as usize;
        let n_val = (((n as f64) * val).round() as usize).min(n - n_train);
        let test = order.split_off(n_train + n_val);
        let val = order.split_off(n_train);
        Ok(Self {
            train: order,
            val,
            test,
        })
    }

    pub fn get(&self, name: &str) -> Result<Vec<String>> {
        match name {
            "train" => Ok(self.train.clone()),
            "val" => Ok(self.val.clone()),
            "test" => Ok(self.test.clone()),
            "all" => Ok(self
                .train
                .iter()
                .chain(&self.val)
                .chain(&self.test)
                .cloned()
                .collect()),
            other => Err(Error::InvalidSpec(format!(
                "unknown split {other:?} (train, val, test, all)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub category: String,
    pub seed: u64,
    pub budget: PointBudget,
    pub requested: usize,
    pub overlap: Option<f64>,
    pub samples: Vec<String>,
    pub skipped: Vec<String>,
    pub splits: Splits,
}

/// Everything needed to build a dataset from canonical shapes.
#[derive(Debug, Clone)]
pub struct BuildSpec {
    pub category: String,
    pub count: usize,
    pub seed: u64,
    pub overlap: Option<f64>,
    pub gen: GenConfig,
    pub train_fraction: f64,
    pub val_fraction: f64,
}

pub struct Sample {
    pub meta: SampleMeta,
    pub pair: ScanPair,
}

fn level_name(kind: &str, part: usize, n: usize) -> String {
    format!("missing_{kind}{}_{n}.xyz", part + 1)
}

/// Brings a canonical shape to the budget's point count with FPS.
pub fn fit_shape(shape: &PointCloud, budget: PointBudget) -> Result<PointCloud> {
    match shape.len().cmp(&budget.shape) {
        std::cmp::Ordering::Equal => Ok(shape.clone()),
        std::cmp::Ordering::Greater => Ok(shape.select(&fps_indices(shape.points(), budget.shape, 0)?)),
        std::cmp::Ordering::Less => Err(Error::InsufficientPoints {
            needed: budget.shape,
            available: shape.len(),
        }),
    }
}

/// Generates sample `index` from `shapes[index % shapes.len()]`.
pub fn generate_sample(shapes: &[(String, PointCloud)], index: usize, spec: &BuildSpec) -> Result<Sample> {
    let (shape_id, raw) = &shapes[index % shapes.len()];
    let shape = fit_shape(raw, spec.gen.budget)?;
    let mut rng = sample_rng(spec.seed, index as u64);
    let pair = match spec.overlap {
        Some(eta) => generate_pair_overlap(&shape, eta, &mut rng, &spec.gen)?,
        None => generate_pair(&shape, &mut rng, &spec.gen)?,
    };
    let meta = SampleMeta {
        id: format!("{index:05}"),
        category: spec.category.clone(),
        shape_id: shape_id.clone(),
        seed: spec.seed,
        stream: index as u64,
        budget: spec.gen.budget,
        m1: pair.m1,
        m2: pair.m2,
        m12_gt: pair.m12_gt,
        m21_gt: pair.m21_gt,
        r1o_gt: pair.r1o_gt,
        r2o_gt: pair.r2o_gt,
        crops: pair.crops,
        offsets: pair.offsets.map(|o| [o.x, o.y, o.z]),
        overlap_iou: pair.overlap_iou,
        overlap_target: spec.overlap,
    };
    Ok(Sample { meta, pair })
}

/// Generates every sample in parallel. Failed samples are returned as
/// `(index, error)` in the second list.
pub fn generate_samples(
    shapes: &[(String, PointCloud)],
    spec: &BuildSpec,
) -> Result<(Vec<Sample>, Vec<(usize, Error)>)> {
    if shapes.is_empty() {
        return Err(Error::InvalidSpec("no input shapes".into()));
    }
    let results: Vec<_> = (0..spec.count)
        .into_par_iter()
        .map(|k| generate_sample(shapes, k, spec))
        .collect();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => ok.push(s),
            Err(e) => failed.push((k, e)),
        }
    }
    Ok((ok, failed))
}

pub fn write_sample(dir: &Path, sample: &Sample) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let pair = &sample.pair;
    write_xyz(dir.join("part1.xyz"), &pair.p1)?;
    write_xyz(dir.join("part2.xyz"), &pair.p2)?;
    write_xyz(dir.join("gt.xyz"), &pair.gt_shape)?;
    for (kind, sets) in [("cr", &pair.missing_cr), ("rc", &pair.missing_rc)] {
        for (i, levels) in sets.iter().enumerate() {
            for level in levels {
                write_xyz(dir.join(level_name(kind, i, level.len())), level)?;
            }
        }
    }
    let json = serde_json::to_string_pretty(&sample.meta)?;
    let path = dir.join("meta.json");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

fn read_levels(dir: &Path, kind: &str, part: usize, budget: PointBudget) -> Result<Levels> {
    let [a, b, c] = budget.levels();
    let read = |n: usize| -> Result<PointCloud> {
        let pc = read_xyz(dir.join(level_name(kind, part, n)))?;
        if pc.len() != n {
            return Err(Error::Shape(format!(
                "{}: {} points, expected {n}",
                level_name(kind, part, n),
                pc.len()
            )));
        }
        Ok(pc)
    };
    Ok([read(a)?, read(b)?, read(c)?])
}

pub fn read_sample(dir: &Path) -> Result<Sample> {
    let path = dir.join("meta.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: SampleMeta = serde_json::from_str(&text)?;
    let p1 = read_xyz(dir.join("part1.xyz"))?;
    let p2 = read_xyz(dir.join("part2.xyz"))?;
    for p in [&p1, &p2] {
        if p.len() != meta.budget.part {
            return Err(Error::Shape(format!(
                "{}: part has {} points, expected {}",
                dir.display(),
                p.len(),
                meta.budget.part
            )));
        }
    }
    let pair = ScanPair {
        p1,
        p2,
        gt_shape: read_xyz(dir.join("gt.xyz"))?,
        m1: meta.m1,
        m2: meta.m2,
        m12_gt: meta.m12_gt,
        m21_gt: meta.m21_gt,
        r1o_gt: meta.r1o_gt,
        r2o_gt: meta.r2o_gt,
        missing_cr: [
            read_levels(dir, "cr", 0, meta.budget)?,
            read_levels(dir, "cr", 1, meta.budget)?,
        ],
        missing_rc: [
            read_levels(dir, "rc", 0, meta.budget)?,
            read_levels(dir, "rc", 1, meta.budget)?,
        ],
        crops: meta.crops,
        offsets: meta.offsets.map(Vec3::from),
        overlap_iou: meta.overlap_iou,
        provenance: None,
    };
    Ok(Sample { meta, pair })
}

/// A dataset directory with its manifest loaded.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    /// Writes samples and the manifest under `root`.
    pub fn write(root: &Path, spec: &BuildSpec, samples: &[Sample], skipped: Vec<String>) -> Result<Self> {
        let ids: Vec<String> = samples.iter().map(|s| s.meta.id.clone()).collect();
        let splits = Splits::assign(&ids, spec.train_fraction, spec.val_fraction, spec.seed)?;
        for s in samples {
            write_sample(&root.join("samples").join(&s.meta.id), s)?;
        }
        let manifest = DatasetManifest {
            format: DATASET_FORMAT.into(),
            category: spec.category.clone(),
            seed: spec.seed,
            budget: spec.gen.budget,
            requested: spec.count,
            overlap: spec.overlap,
            samples: ids,
            skipped,
            splits,
        };
        let path = root.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        if manifest.format != DATASET_FORMAT {
            return Err(Error::Schema(format!(
                "{}: format {:?}, expected {DATASET_FORMAT:?}",
                path.display(),
                manifest.format
            )));
        }
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn sample_dir(&self, id: &str) -> PathBuf {
        self.root.join("samples").join(id)
    }

    /// Loads every sample of a split (`train`, `val`, `test` or `all`).
    pub fn load(&self, split: &str) -> Result<Vec<Sample>> {
        let ids = self.manifest.splits.get(split)?;
        ids.par_iter().map(|id| read_sample(&self.sample_dir(id))).collect()
    }
}
