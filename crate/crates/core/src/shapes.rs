//! Procedural shape families (boxes, cylinders and furniture-like
//! composites), sampled uniformly by surface area and normalized into the
//! unit cube. They stand in for scanned model collections so the pipeline
//! runs without external data.

use std::f64::consts::TAU;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::pointcloud::{normalize_unit_cube, PointCloud};

pub const SHAPE_POINTS: usize = 16_384;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeFamily {
    Box,
    Cylinder,
    Table,
    Chair,
    Lamp,
    Composite,
}

impl ShapeFamily {
    pub const ALL: [ShapeFamily; 6] = [
        ShapeFamily::Box,
        ShapeFamily::Cylinder,
        ShapeFamily::Table,
        ShapeFamily::Chair,
        ShapeFamily::Lamp,
        ShapeFamily::Composite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeFamily::Box => "box",
            ShapeFamily::Cylinder => "cylinder",
            ShapeFamily::Table => "table",
            ShapeFamily::Chair => "chair",
            ShapeFamily::Lamp => "lamp",
            ShapeFamily::Composite => "composite",
        }
    }
}

impl FromStr for ShapeFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::InvalidSpec(format!("unknown shape family {s:?}")))
    }
}

impl std::fmt::Display for ShapeFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy)]
enum Primitive {
    /// Axis-aligned box surface.
    Cuboid { center: Vec3, half: Vec3 },
    /// Capped cylinder along the y axis.
    Cylinder {
        center: Vec3,
        radius: f64,
        half_height: f64,
    },
}

impl Primitive {
    fn area(&self) -> f64 {
        match *self {
            Primitive::Cuboid { half, .. } => {
                8.0 * (half.x * half.y + half.y * half.z + half.x * half.z)
            }
            Primitive::Cylinder {
                radius,
                half_height,
                ..
            } => TAU * radius * 2.0 * half_height + TAU * radius * radius,
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        match *self {
            Primitive::Cuboid { center, half } => {
                let faces = [half.y * half.z, half.x * half.z, half.x * half.y];
                let total = 2.0 * faces.iter().sum::<f64>();
                let mut pick = rng.random_range(0.0..total);
                let mut axis = 0;
                for (i, a) in faces.iter().enumerate() {
                    if pick < 2.0 * a {
                        axis = i;
                        break;
                    }
                    pick -= 2.0 * a;
                    axis = i;
                }
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let mut local = Vec3::from_fn(|i, _| rng.random_range(-half[i]..=half[i]));
                local[axis] = sign * half[axis];
                center + local
            }
            Primitive::Cylinder {
                center,
                radius,
                half_height,
            } => {
                let side = TAU * radius * 2.0 * half_height;
                let cap = std::f64::consts::PI * radius * radius;
                let theta = rng.random_range(0.0..TAU);
                let pick = rng.random_range(0.0..side + 2.0 * cap);
                if pick < side {
                    let y = rng.random_range(-half_height..=half_height);
                    center + Vec3::new(radius * theta.cos(), y, radius * theta.sin())
                } else {
                    let r = radius * rng.random_range(0.0f64..1.0).sqrt();
                    let y = if pick < side + cap {
                        half_height
                    } else {
                        -half_height
                    };
                    center + Vec3::new(r * theta.cos(), y, r * theta.sin())
                }
            }
        }
    }
}

fn cuboid(center: [f64; 3], half: [f64; 3]) -> Primitive {
    Primitive::Cuboid {
        center: Vec3::from(center),
        half: Vec3::from(half),
    }
}

fn cylinder(center: [f64; 3], radius: f64, half_height: f64) -> Primitive {
    Primitive::Cylinder {
        center: Vec3::from(center),
        radius,
        half_height,
    }
}

fn legs(w: f64, d: f64, y: f64, half_h: f64, t: f64) -> Vec<Primitive> {
    let mut out = Vec::new();
    for sx in [-1.0, 1.0] {
        for sz in [-1.0, 1.0] {
            out.push(cuboid([sx * (w - t), y, sz * (d - t)], [t, half_h, t]));
        }
    }
    out
}

fn build<R: Rng + ?Sized>(family: ShapeFamily, rng: &mut R) -> Vec<Primitive> {
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
    match family {
        ShapeFamily::Box => vec![cuboid([0.0; 3], [u(0.2, 0.5), u(0.2, 0.5), u(0.2, 0.5)])],
        ShapeFamily::Cylinder => vec![cylinder([0.0; 3], u(0.15, 0.4), u(0.2, 0.5))],
        ShapeFamily::Table => {
            let (w, d, h) = (u(0.35, 0.5), u(0.25, 0.45), u(0.25, 0.4));
            let top = u(0.02, 0.05);
            let t = u(0.02, 0.05);
            let mut p = vec![cuboid([0.0, h, 0.0], [w, top, d])];
            p.extend(legs(w, d, 0.0, h - top, t));
            p
        }
        ShapeFamily::Chair => {
            let (w, d, h) = (u(0.2, 0.3), u(0.2, 0.3), u(0.15, 0.25));
            let seat = u(0.02, 0.05);
            let t = u(0.015, 0.04);
            let back_h = u(0.2, 0.35);
            let mut p = vec![
                cuboid([0.0, h, 0.0], [w, seat, d]),
                cuboid([0.0, h + seat + back_h, -d + seat], [w, back_h, seat]),
            ];
            p.extend(legs(w, d, 0.0, h - seat, t));
            p
        }
        ShapeFamily::Lamp => {
            let base_r = u(0.12, 0.25);
            let pole_h = u(0.25, 0.45);
            let shade_r = u(0.15, 0.3);
            let shade_h = u(0.08, 0.18);
            vec![
                cylinder([0.0, -pole_h - 0.03, 0.0], base_r, 0.03),
                cylinder([0.0, 0.0, 0.0], u(0.015, 0.04), pole_h),
                cylinder([0.0, pole_h + shade_h, 0.0], shade_r, shade_h),
            ]
        }
        ShapeFamily::Composite => {
            let parts = rng.random_range(3..=5);
            let mut at = Vec3::zeros();
            let mut out = Vec::new();
            for _ in 0..parts {
                let half = Vec3::from_fn(|_, _| rng.random_range(0.08..0.3));
                let prim = if rng.random_bool(0.5) {
                    Primitive::Cuboid { center: at, half }
                } else {
                    Primitive::Cylinder {
                        center: at,
                        radius: half.x,
                        half_height: half.y,
                    }
                };
                out.push(prim);
                let step = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0));
                at += step.normalize() * rng.random_range(0.15..0.35);
            }
            out
        }
    }
}

/// Samples `n` surface points of a random member of `family`, normalized to
/// the unit cube.
pub fn generate_shape<R: Rng + ?Sized>(
    family: ShapeFamily,
    n: usize,
    rng: &mut R,
) -> Result<PointCloud> {
    let prims = build(family, rng);
    let areas: Vec<f64> = prims.iter().map(Primitive::area).collect();
    let total: f64 = areas.iter().sum();
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let mut pick = rng.random_range(0.0..total);
        let mut chosen = prims.len() - 1;
        for (i, a) in areas.iter().enumerate() {
            if pick < *a {
                chosen = i;
                break;
            }
            pick -= a;
        }
        points.push(prims[chosen].sample(rng));
    }
    normalize_unit_cube(&PointCloud::new(points)).map(|(pc, _)| pc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn every_family_fills_the_unit_cube() {
        for family in ShapeFamily::ALL {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let pc = generate_shape(family, 4096, &mut rng).unwrap();
            assert_eq!(pc.len(), 4096);
            let (lo, hi) = pc.bounds().unwrap();
            assert!(((hi - lo).max() - 1.0).abs() < 1e-9, "{family}");
            assert!(lo.min() >= -0.5 - 1e-9 && hi.max() <= 0.5 + 1e-9);
        }
    }

    #[test]
    fn family_names_parse() {
        for family in ShapeFamily::ALL {
            assert_eq!(family.name().parse::<ShapeFamily>().unwrap(), family);
        }
        assert!("plane".parse::<ShapeFamily>().is_err());
    }
}
