//! The point-cloud value type and the sampling, normalization and set
//! operations used throughout the pipeline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{RigidTransform, UnitQuaternion, Vec3};

/// Ordered list of 3-D points in normalized model units.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self { points }
    }

    pub fn from_rows(rows: &[[f64; 3]]) -> Self {
        Self::new(rows.iter().map(|r| Vec3::new(r[0], r[1], r[2])).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn points_mut(&mut self) -> &mut [Vec3] {
        &mut self.points
    }

    pub fn into_points(self) -> Vec<Vec3> {
        self.points
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Vec3> {
        self.points.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    /// Points at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self::new(indices.iter().map(|&i| self.points[i]).collect())
    }

    pub fn centroid(&self) -> Option<Vec3> {
        if self.is_empty() {
            return None;
        }
        let sum = self.points.iter().fold(Vec3::zeros(), |acc, p| acc + p);
        Some(sum / self.len() as f64)
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.points.first()?;
        Some(self.points.iter().fold((first, first), |(lo, hi), p| {
            (lo.inf(p), hi.sup(p))
        }))
    }

    pub fn transformed(&self, t: &RigidTransform) -> Self {
        let r = t.rotation.to_matrix();
        Self::new(self.points.iter().map(|p| r * p + t.translation).collect())
    }

    pub fn rotated(&self, q: &UnitQuaternion) -> Self {
        self.transformed(&RigidTransform::from_rotation(*q))
    }

    pub fn translated(&self, offset: &Vec3) -> Self {
        Self::new(self.points.iter().map(|p| p + offset).collect())
    }

    /// Flat row-major `[x0, y0, z0, x1, ...]`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
    }

    pub fn from_flat(flat: &[f64]) -> Self {
        debug_assert_eq!(flat.len() % 3, 0);
        Self::new(
            flat.chunks_exact(3)
                .map(|c| Vec3::new(c[0], c[1], c[2]))
                .collect(),
        )
    }
}

impl FromIterator<Vec3> for PointCloud {
    fn from_iter<I: IntoIterator<Item = Vec3>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

impl<'a> IntoIterator for &'a PointCloud {
    type Item = &'a Vec3;
    type IntoIter = std::slice::Iter<'a, Vec3>;

    fn into_iter(self) -> Self::IntoIter {
        self.points.iter()
    }
}

/// Record of a unit-cube normalization: `normalized = (p - center) * scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub center: [f64; 3],
    pub scale: f64,
}

impl Normalization {
    pub fn apply(&self, pc: &PointCloud) -> PointCloud {
        let c = Vec3::from(self.center);
        pc.iter().map(|p| (p - c) * self.scale).collect()
    }

    pub fn invert(&self, pc: &PointCloud) -> PointCloud {
        let c = Vec3::from(self.center);
        pc.iter().map(|p| p / self.scale + c).collect()
    }
}

/// Uniformly scales and translates `pc` so its bounding box is centered at
/// the origin with longest side exactly 1.
pub fn normalize_unit_cube(pc: &PointCloud) -> Result<(PointCloud, Normalization)> {
    let (lo, hi) = pc
        .bounds()
        .ok_or_else(|| Error::DegenerateInput("empty cloud".into()))?;
    let extent = (hi - lo).max();
    if !(extent > 1e-12) || !extent.is_finite() {
        return Err(Error::DegenerateInput(format!(
            "bounding box extent {extent} cannot be normalized"
        )));
    }
    let center = (lo + hi) * 0.5;
    let norm = Normalization {
        center: [center.x, center.y, center.z],
        scale: 1.0 / extent,
    };
    Ok((norm.apply(pc), norm))
}

/// Moves the centroid to the origin; returns the removed offset.
pub fn center_at_origin(pc: &PointCloud) -> Result<(PointCloud, Vec3)> {
    let c = pc
        .centroid()
        .ok_or_else(|| Error::DegenerateInput("empty cloud".into()))?;
    Ok((pc.translated(&-c), c))
}

/// Farthest-point sampling starting from `start`. Selected points are never
/// re-selected, so duplicates in the input are handled.
pub fn fps_indices(points: &[Vec3], n: usize, start: usize) -> Result<Vec<usize>> {
    if points.len() < n {
        return Err(Error::InsufficientPoints {
            needed: n,
            available: points.len(),
        });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let xs: Vec<f64> = points.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.y).collect();
    let zs: Vec<f64> = points.iter().map(|p| p.z).collect();
    let mut selected = Vec::with_capacity(n);
    let mut min_d2 = vec![f64::INFINITY; points.len()];
    let mut current = start % points.len();
    for _ in 0..n {
        selected.push(current);
        let (cx, cy, cz) = (xs[current], ys[current], zs[current]);
        // Branch-free passes so both loops vectorize.
        for (((d, &x), &y), &z) in min_d2.iter_mut().zip(&xs).zip(&ys).zip(&zs) {
            let (dx, dy, dz) = (x - cx, y - cy, z - cz);
            let v = dx * dx + dy * dy + dz * dz;
            *d = if v < *d { v } else { *d };
        }
        min_d2[current] = f64::NEG_INFINITY;
        // Lane-wise maximum, then the first index holding it.
        let mut lanes = [f64::NEG_INFINITY; 4];
        let chunks = min_d2.chunks_exact(4);
        for &d in chunks.remainder() {
            lanes[0] = if d > lanes[0] { d } else { lanes[0] };
        }
        for c in chunks {
            for k in 0..4 {
                lanes[k] = if c[k] > lanes[k] { c[k] } else { lanes[k] };
            }
        }
        let max = lanes.into_iter().fold(f64::NEG_INFINITY, f64::max);
        current = min_d2.iter().position(|&d| d == max).expect("maximum is present");
    }
    Ok(selected)
}

/// Farthest-point downsampling to exactly `n` points. The seed picks the
/// start point; `n == |pc|` returns the input unchanged.
pub fn downsample_fps(pc: &PointCloud, n: usize, seed: u64) -> Result<PointCloud> {
    if pc.len() < n {
        return Err(Error::InsufficientPoints {
            needed: n,
            available: pc.len(),
        });
    }
    if n == pc.len() {
        return Ok(pc.clone());
    }
    let start = ChaCha8Rng::seed_from_u64(seed).random_range(0..pc.len());
    Ok(pc.select(&fps_indices(pc.points(), n, start)?))
}

/// Concatenation `a` then `b`; both must be nonempty.
pub fn union(a: &PointCloud, b: &PointCloud) -> Result<PointCloud> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::DegenerateInput("union of an empty cloud".into()));
    }
    let mut points = Vec::with_capacity(a.len() + b.len());
    points.extend_from_slice(a.points());
    points.extend_from_slice(b.points());
    Ok(PointCloud::new(points))
}

pub const DEFAULT_IOU_RESOLUTION: usize = 32;

fn occupancy(pc: &PointCloud, resolution: usize) -> Vec<u64> {
    let cells = resolution * resolution * resolution;
    let mut bits = vec![0u64; cells.div_ceil(64)];
    let res = resolution as f64;
    let cell = |v: f64| (((v + 1.0) * 0.5 * res).floor().max(0.0) as usize).min(resolution - 1);
    for p in pc {
        let idx = (cell(p.x) * resolution + cell(p.y)) * resolution + cell(p.z);
        bits[idx / 64] |= 1 << (idx % 64);
    }
    bits
}

/// Intersection over union of the occupied voxels of `a` and `b` on a
/// `resolution^3` grid spanning `[-1, 1]^3`.
pub fn voxel_iou(a: &PointCloud, b: &PointCloud, resolution: usize) -> f64 {
    assert!(resolution > 0, "voxel resolution must be positive");
    let oa = occupancy(a, resolution);
    let ob = occupancy(b, resolution);
    let (mut inter, mut uni) = (0u32, 0u32);
    for (x, y) in oa.iter().zip(&ob) {
        inter += (x & y).count_ones();
        uni += (x | y).count_ones();
    }
    if uni == 0 {
        return 1.0;
    }
    inter as f64 / uni as f64
}

fn farthest_from(pc: &PointCloud, c: &Vec3) -> (usize, f64) {
    pc.iter()
        .enumerate()
        .map(|(i, p)| (i, (p - c).norm_squared()))
        .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a })
}

/// Approximate minimal enclosing sphere. Takes the tighter of Ritter's
/// sphere and a Badoiu-Clarkson core-set iteration; the result always
/// contains every point.
pub fn bounding_sphere(pc: &PointCloud) -> Result<(Vec3, f64)> {
    let first = *pc
        .points()
        .first()
        .ok_or_else(|| Error::DegenerateInput("empty cloud".into()))?;

    // Ritter.
    let (ia, _) = farthest_from(pc, &first);
    let a = pc.points()[ia];
    let (ib, _) = farthest_from(pc, &a);
    let b = pc.points()[ib];
    let mut center = (a + b) * 0.5;
    let mut radius = (b - a).norm() * 0.5;
    for p in pc {
        let d = (p - center).norm();
        if d > radius {
            let grown = 0.5 * (radius + d);
            center += (p - center) * ((grown - radius) / d);
            radius = grown;
        }
    }
    let ritter = (center, farthest_from(pc, &center).1.sqrt());

    let mut c = pc.centroid().unwrap_or(first);
    for i in 1..=400 {
        let (far, _) = farthest_from(pc, &c);
        c += (pc.points()[far] - c) / (i as f64 + 1.0);
    }
    let core = (c, farthest_from(pc, &c).1.sqrt());

    Ok(if core.1 < ritter.1 { core } else { ritter })
}
