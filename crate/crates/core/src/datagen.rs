//! Synthetic scan pairs with full ground truth, plus the noise and outlier
//! perturbations and the radius outlier filter used by the stress tests.
//!
//! Frames: each part `i` is cropped from the canonical shape, downsampled,
//! centered by subtracting its centroid `c_i` and rotated by `R_i`, so
//! `M_i = R_i T_i` maps canonical points into part frame `i`. The "canonical
//! frame" of part `i` is the canonical pose shifted by `-c_i`; ground-truth
//! missing parts are stored there, which is where the completion network's
//! orientation module is supposed to land.

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{random_rotation, RigidTransform, UnitQuaternion, Vec3};
use crate::pointcloud::{bounding_sphere, fps_indices, voxel_iou, PointCloud, DEFAULT_IOU_RESOLUTION};

/// Point counts along the pipeline. Generated missing parts come in three
/// levels of `part/16`, `part/4` and `part` points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointBudget {
    /// Points per input part (N).
    pub part: usize,
    /// Points per canonical shape.
    pub shape: usize,
}

impl PointBudget {
    pub const FULL: Self = Self {
        part: 2048,
        shape: 16_384,
    };
    /// Eight times fewer points everywhere; used for desk-scale training.
    pub const SMALL: Self = Self {
        part: 256,
        shape: 2048,
    };
    /// Miniature configuration for finite-difference gradient checks.
    pub const MINI: Self = Self {
        part: 32,
        shape: 256,
    };

    pub fn levels(&self) -> [usize; 3] {
        [self.part / 16, self.part / 4, self.part]
    }

    /// Crops and their complements must hold strictly more than this many
    /// points before downsampling.
    pub fn min_crop_points(&self) -> usize {
        2 * self.part
    }

    pub fn validate(&self) -> Result<()> {
        if self.part < 16 || self.part % 16 != 0 {
            return Err(Error::InvalidSpec(format!(
                "part size {} must be a positive multiple of 16",
                self.part
            )));
        }
        if self.shape <= 2 * self.min_crop_points() {
            return Err(Error::InvalidSpec(format!(
                "shape size {} too small for parts of {}",
                self.shape, self.part
            )));
        }
        Ok(())
    }
}

impl Default for PointBudget {
    fn default() -> Self {
        Self::FULL
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub budget: PointBudget,
    pub radius_range: (f64, f64),
    pub min_center_distance: f64,
    pub max_attempts: usize,
    pub iou_resolution: usize,
    /// Fixed crop centers used by overlap-controlled generation.
    pub overlap_centers: ([f64; 3], [f64; 3]),
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            budget: PointBudget::FULL,
            radius_range: (0.3, 1.3),
            min_center_distance: 0.3,
            max_attempts: 200,
            iou_resolution: DEFAULT_IOU_RESOLUTION,
            overlap_centers: ([0.0, 0.75, 0.0], [0.0, -0.75, 0.0]),
        }
    }
}

impl GenConfig {
    pub fn with_budget(budget: PointBudget) -> Self {
        Self {
            budget,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropSpec {
    pub center: [f64; 3],
    pub radius: f64,
}

impl CropSpec {
    pub fn center(&self) -> Vec3 {
        Vec3::from(self.center)
    }
}

/// Index partition of a shape by a crop sphere.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CropSplit {
    pub inside: Vec<usize>,
    pub complement: Vec<usize>,
}

pub fn crop_indices(shape: &PointCloud, spec: &CropSpec) -> CropSplit {
    let c = spec.center();
    let r2 = spec.radius * spec.radius;
    let (mut inside, mut complement) = (Vec::new(), Vec::new());
    for (i, p) in shape.iter().enumerate() {
        if (p - c).norm_squared() <= r2 {
            inside.push(i);
        } else {
            complement.push(i);
        }
    }
    CropSplit { inside, complement }
}

/// Splits `shape` into the points inside the crop sphere and the rest.
pub fn crop_by_sphere(shape: &PointCloud, spec: &CropSpec) -> (PointCloud, PointCloud) {
    let split = crop_indices(shape, spec);
    (shape.select(&split.inside), shape.select(&split.complement))
}

/// Coarse-to-fine missing-part levels (`part/16`, `part/4`, `part` points).
pub type Levels = [PointCloud; 3];

/// Indices into the canonical shape that each stored cloud was drawn from.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Provenance {
    pub parts: [Vec<usize>; 2],
    pub crops: [Vec<usize>; 2],
    pub missing_cr: [Vec<usize>; 2],
    pub missing_rc: [Vec<usize>; 2],
}

/// One sample: two posed partial scans and everything needed to supervise
/// and evaluate both flows.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanPair {
    pub p1: PointCloud,
    pub p2: PointCloud,
    /// Canonical complete shape.
    pub gt_shape: PointCloud,
    pub m1: RigidTransform,
    pub m2: RigidTransform,
    /// Maps part-1 frame to part-2 frame.
    pub m12_gt: RigidTransform,
    /// Maps part-2 frame to part-1 frame.
    pub m21_gt: RigidTransform,
    /// Rotations taking each part back into its canonical frame.
    pub r1o_gt: UnitQuaternion,
    pub r2o_gt: UnitQuaternion,
    /// Complement of each single crop, canonical frame of that part.
    pub missing_cr: [Levels; 2],
    /// Complement of the union of both crops, canonical frame of each part.
    pub missing_rc: [Levels; 2],
    pub crops: [CropSpec; 2],
    /// Centroids removed from each downsampled crop.
    pub offsets: [Vec3; 2],
    pub overlap_iou: f64,
    pub provenance: Option<Provenance>,
}

impl ScanPair {
    pub fn part(&self, i: usize) -> &PointCloud {
        if i == 0 {
            &self.p1
        } else {
            &self.p2
        }
    }

    pub fn part_transform(&self, i: usize) -> &RigidTransform {
        if i == 0 {
            &self.m1
        } else {
            &self.m2
        }
    }

    pub fn orientation_gt(&self, i: usize) -> UnitQuaternion {
        if i == 0 {
            self.r1o_gt
        } else {
            self.r2o_gt
        }
    }

    pub fn part_points(&self) -> usize {
        self.p1.len()
    }

    /// Ground-truth completion of part `i` in its own frame: the input part
    /// plus the finest C-R missing level, rotated back into the part frame.
    pub fn full_gt(&self, i: usize) -> PointCloud {
        let rot = self.orientation_gt(i).conjugate();
        let mut points = self.part(i).points().to_vec();
        points.extend(self.missing_cr[i][2].rotated(&rot).into_points());
        PointCloud::new(points)
    }
}

fn sample_unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

/// FPS of `region` (indices into `shape`) to `n` points. Regions smaller
/// than `n` are used whole and padded by cycling; an empty region falls
/// back to `fallback`, then to the whole shape.
fn sample_region<R: Rng + ?Sized>(
    shape: &PointCloud,
    region: &[usize],
    fallback: &[usize],
    n: usize,
    rng: &mut R,
) -> Vec<usize> {
    let everything: Vec<usize>;
    let region = if !region.is_empty() {
        region
    } else if !fallback.is_empty() {
        fallback
    } else {
        everything = (0..shape.len()).collect();
        &everything
    };
    if region.len() >= n {
        let pts: Vec<Vec3> = region.iter().map(|&i| shape.points()[i]).collect();
        let start = rng.random_range(0..pts.len());
        fps_indices(&pts, n, start)
            .expect("region holds enough points")
            .into_iter()
            .map(|k| region[k])
            .collect()
    } else {
        region.iter().copied().cycle().take(n).collect()
    }
}

fn level_clouds(shape: &PointCloud, finest: &[usize], levels: [usize; 3], offset: &Vec3) -> Levels {
    levels.map(|n| shape.select(&finest[..n]).translated(&-offset))
}

struct Accepted {
    crops: [CropSpec; 2],
    splits: [CropSplit; 2],
    union_complement: Vec<usize>,
    iou: f64,
}

fn complement_of_union(n: usize, a: &CropSplit, b: &CropSplit) -> Vec<usize> {
    let mut covered = vec![false; n];
    for &i in a.inside.iter().chain(&b.inside) {
        covered[i] = true;
    }
    (0..n).filter(|&i| !covered[i]).collect()
}

fn assemble<R: Rng + ?Sized>(
    shape: &PointCloud,
    acc: Accepted,
    config: &GenConfig,
    rng: &mut R,
) -> ScanPair {
    let budget = config.budget;
    let levels = budget.levels();
    let n = budget.part;

    let mut parts = Vec::with_capacity(2);
    let mut part_idx = Vec::with_capacity(2);
    let mut offsets = [Vec3::zeros(); 2];
    let mut transforms = [RigidTransform::IDENTITY; 2];
    for (i, split) in acc.splits.iter().enumerate() {
        let idx = sample_region(shape, &split.inside, &split.inside, n, rng);
        let crop = shape.select(&idx);
        let c = crop.centroid().expect("nonempty crop");
        let rot = random_rotation(rng);
        // M = R T with T = translate(-c).
        let m = RigidTransform::new(rot, -rot.rotate(&c));
        parts.push(crop.transformed(&m));
        part_idx.push(idx);
        offsets[i] = c;
        transforms[i] = m;
    }

    let mut missing_cr_idx: [Vec<usize>; 2] = Default::default();
    let mut missing_rc_idx: [Vec<usize>; 2] = Default::default();
    for i in 0..2 {
        missing_cr_idx[i] = sample_region(
            shape,
            &acc.splits[i].complement,
            &acc.splits[i].inside,
            n,
            rng,
        );
        missing_rc_idx[i] = sample_region(
            shape,
            &acc.union_complement,
            &acc.splits[i].complement,
            n,
            rng,
        );
    }

    let [m1, m2] = transforms;
    let p2 = parts.pop().unwrap();
    let p1 = parts.pop().unwrap();
    let missing_cr = [0, 1].map(|i| level_clouds(shape, &missing_cr_idx[i], levels, &offsets[i]));
    let missing_rc = [0, 1].map(|i| level_clouds(shape, &missing_rc_idx[i], levels, &offsets[i]));
    ScanPair {
        p1,
        p2,
        gt_shape: shape.clone(),
        m1,
        m2,
        m12_gt: m2.compose(&m1.inverse()),
        m21_gt: m1.compose(&m2.inverse()),
        r1o_gt: m1.rotation.conjugate(),
        r2o_gt: m2.rotation.conjugate(),
        missing_cr,
        missing_rc,
        crops: acc.crops,
        offsets,
        overlap_iou: acc.iou,
        provenance: Some(Provenance {
            parts: [part_idx[0].clone(), part_idx[1].clone()],
            crops: [acc.splits[0].inside.clone(), acc.splits[1].inside.clone()],
            missing_cr: missing_cr_idx,
            missing_rc: missing_rc_idx,
        }),
    }
}

fn check_shape(shape: &PointCloud, config: &GenConfig) -> Result<()> {
    config.budget.validate()?;
    if shape.len() != config.budget.shape {
        return Err(Error::InvalidSpec(format!(
            "shape has {} points, expected {}",
            shape.len(),
            config.budget.shape
        )));
    }
    if !shape.is_finite() {
        return Err(Error::DegenerateInput("non-finite shape point".into()));
    }
    Ok(())
}

/// Crops two parts on the shape's bounding sphere, rejecting until every
/// count and distance constraint holds, then downsamples, centers and
/// randomly rotates each part.
///
/// Beyond the crop-size constraints, the complement of the union of both
/// crops must hold at least `part` points so the R-C ground truth exists.
pub fn generate_pair<R: Rng + ?Sized>(
    shape: &PointCloud,
    rng: &mut R,
    config: &GenConfig,
) -> Result<ScanPair> {
    check_shape(shape, config)?;
    let (sphere_center, sphere_radius) = bounding_sphere(shape)?;
    let min = config.budget.min_crop_points();
    let (rlo, rhi) = config.radius_range;
    for _ in 0..config.max_attempts {
        let crops = [(); 2].map(|_| {
            let c = sphere_center + sample_unit_vector(rng) * sphere_radius;
            CropSpec {
                center: [c.x, c.y, c.z],
                radius: rng.random_range(rlo..=rhi),
            }
        });
        if (crops[0].center() - crops[1].center()).norm() < config.min_center_distance {
            continue;
        }
        let splits = crops.map(|c| crop_indices(shape, &c));
        if splits
            .iter()
            .any(|s| s.inside.len() <= min || s.complement.len() <= min)
        {
            continue;
        }
        let union_complement = complement_of_union(shape.len(), &splits[0], &splits[1]);
        if union_complement.len() < config.budget.part {
            continue;
        }
        let iou = voxel_iou(
            &shape.select(&splits[0].inside),
            &shape.select(&splits[1].inside),
            config.iou_resolution,
        );
        let acc = Accepted {
            crops,
            splits,
            union_complement,
            iou,
        };
        return Ok(assemble(shape, acc, config, rng));
    }
    Err(Error::Ungeneratable {
        shape: format!("{} points", shape.len()),
        attempts: config.max_attempts,
    })
}

/// Pair with crop centers fixed at `config.overlap_centers` and voxel IoU of
/// the two crops in `[0.9 eta, 1.1 eta]`.
///
/// Only the crop-size constraint of [`generate_pair`] is kept: at high
/// overlap the complements are necessarily small, so missing-part ground
/// truth is padded (or falls back to the single-crop complement) instead.
pub fn generate_pair_overlap<R: Rng + ?Sized>(
    shape: &PointCloud,
    eta: f64,
    rng: &mut R,
    config: &GenConfig,
) -> Result<ScanPair> {
    check_shape(shape, config)?;
    if !(0.0..=0.8).contains(&eta) {
        return Err(Error::InvalidSpec(format!("overlap {eta} outside [0, 0.8]")));
    }
    let (lo, hi) = (0.9 * eta, 1.1 * eta);
    let min = config.budget.min_crop_points();
    let (rlo, rhi) = config.radius_range;
    let centers = [config.overlap_centers.0, config.overlap_centers.1];
    for _ in 0..config.max_attempts {
        let crops = centers.map(|center| CropSpec {
            center,
            radius: rng.random_range(rlo..=rhi),
        });
        let splits = crops.map(|c| crop_indices(shape, &c));
        if splits.iter().any(|s| s.inside.len() <= min) {
            continue;
        }
        let iou = voxel_iou(
            &shape.select(&splits[0].inside),
            &shape.select(&splits[1].inside),
            config.iou_resolution,
        );
        if iou < lo || iou > hi {
            continue;
        }
        let union_complement = complement_of_union(shape.len(), &splits[0], &splits[1]);
        let acc = Accepted {
            crops,
            splits,
            union_complement,
            iou,
        };
        return Ok(assemble(shape, acc, config, rng));
    }
    Err(Error::UngeneratableOverlap {
        lo,
        hi,
        attempts: config.max_attempts,
    })
}

/// Perturbation and filtering settings for one stress run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StressSpec {
    pub noise_level: f64,
    pub outlier_count: usize,
    pub filter_enabled: bool,
    pub filter_radius: f64,
    pub filter_min_neighbors: usize,
}

impl StressSpec {
    pub const DEFAULT_FILTER_RADIUS: f64 = 0.05;
    pub const DEFAULT_FILTER_MIN_NEIGHBORS: usize = 4;

    /// Filter radius scaled so the expected neighbor count matches the
    /// default radius at 2048 points per part.
    pub fn filter_radius_for(part_points: usize) -> f64 {
        Self::DEFAULT_FILTER_RADIUS * (2048.0 / part_points as f64).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_level >= 0.0) {
            return Err(Error::InvalidSpec(format!("noise level {}", self.noise_level)));
        }
        if self.filter_enabled && !(self.filter_radius > 0.0 && self.filter_min_neighbors >= 1) {
            return Err(Error::InvalidSpec("filter needs radius > 0 and min_neighbors >= 1".into()));
        }
        Ok(())
    }
}

impl Default for StressSpec {
    fn default() -> Self {
        Self {
            noise_level: 0.0,
            outlier_count: 0,
            filter_enabled: false,
            filter_radius: Self::DEFAULT_FILTER_RADIUS,
            filter_min_neighbors: Self::DEFAULT_FILTER_MIN_NEIGHBORS,
        }
    }
}

/// Adds an independent `U[0, zeta]` sample to every coordinate.
pub fn add_noise<R: Rng + ?Sized>(pc: &PointCloud, zeta: f64, rng: &mut R) -> Result<PointCloud> {
    if !(zeta >= 0.0) {
        return Err(Error::InvalidSpec(format!("noise level {zeta}")));
    }
    if zeta == 0.0 {
        return Ok(pc.clone());
    }
    Ok(pc
        .iter()
        .map(|p| p + Vec3::from_fn(|_, _| rng.random_range(0.0..=zeta)))
        .collect())
}

/// Displaces `k` distinct points by a uniformly oriented offset of length
/// `U[0.1, 0.5]`.
pub fn add_outliers<R: Rng + ?Sized>(pc: &PointCloud, k: usize, rng: &mut R) -> Result<PointCloud> {
    if k > pc.len() {
        return Err(Error::InvalidSpec(format!(
            "{k} outliers requested from {} points",
            pc.len()
        )));
    }
    let mut out = pc.clone();
    for i in index::sample(rng, pc.len(), k) {
        let dir = sample_unit_vector(rng);
        out.points_mut()[i] += dir * rng.random_range(0.1..=0.5);
    }
    Ok(out)
}

/// Keeps exactly the points with at least `min_neighbors` other points
/// within `radius`.
pub fn radius_outlier_filter(pc: &PointCloud, radius: f64, min_neighbors: usize) -> PointCloud {
    use std::collections::HashMap;

    let cell = |p: &Vec3| -> [i64; 3] { [0, 1, 2].map(|k| (p[k] / radius).floor() as i64) };
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, p) in pc.iter().enumerate() {
        grid.entry(cell(p)).or_default().push(i);
    }
    let r2 = radius * radius;
    let keep = |i: usize, p: &Vec3| -> bool {
        let c = cell(p);
        let mut count = 0;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(bucket) = grid.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) else {
                        continue;
                    };
                    for &j in bucket {
                        if j != i && (pc.points()[j] - p).norm_squared() <= r2 {
                            count += 1;
                            if count >= min_neighbors {
                                return true;
                            }
                        }
                    }
                }
            }
        }
        false
    };
    pc.iter()
        .enumerate()
        .filter(|(i, p)| keep(*i, p))
        .map(|(_, p)| *p)
        .collect()
}

/// Brings a cloud back to exactly `n` points: FPS when larger, cyclic
/// duplication when smaller.
pub fn restore_count(pc: &PointCloud, n: usize) -> Result<PointCloud> {
    if pc.is_empty() {
        return Err(Error::DegenerateInput("every point was filtered out".into()));
    }
    if pc.len() >= n {
        return Ok(pc.select(&fps_indices(pc.points(), n, 0)?));
    }
    Ok(pc.iter().copied().cycle().take(n).collect())
}

/// Applies a stress setting to one input part.
pub fn apply_stress<R: Rng + ?Sized>(pc: &PointCloud, spec: &StressSpec, rng: &mut R) -> Result<PointCloud> {
    spec.validate()?;
    let mut out = add_noise(pc, spec.noise_level, rng)?;
    if spec.outlier_count > 0 {
        out = add_outliers(&out, spec.outlier_count, rng)?;
    }
    if spec.filter_enabled {
        let filtered = radius_outlier_filter(&out, spec.filter_radius, spec.filter_min_neighbors);
        out = restore_count(&filtered, pc.len())?;
    }
    Ok(out)
}
