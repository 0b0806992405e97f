//! Point-set distances and the registration/completion error measures.

pub mod emd;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{angle_deg, RigidTransform};
use crate::pointcloud::PointCloud;

pub use emd::{d_emd_multilevel, emd, emd_approx, emd_exact, MatchPlan};

/// Scale applied to translation and EMD errors.
pub const SCALE_E3: f64 = 1e3;
/// Scale applied to chamfer errors.
pub const SCALE_E4: f64 = 1e4;

/// Symmetric chamfer distance with squared nearest-neighbor distances,
/// averaged in each direction and summed.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::DegenerateInput("chamfer of an empty cloud".into()));
    }
    let one_way = |from: &PointCloud, to: &PointCloud| -> f64 {
        let total: f64 = from
            .iter()
            .map(|p| {
                to.iter()
                    .map(|q| (p - q).norm_squared())
                    .fold(f64::INFINITY, f64::min)
            })
            .sum();
        total / from.len() as f64
    };
    Ok(one_way(a, b) + one_way(b, a))
}

/// Mean chamfer over the three levels.
pub fn d_cd_multilevel(generated: &[PointCloud; 3], truth: &[PointCloud; 3]) -> Result<f64> {
    let mut total = 0.0;
    for (g, t) in generated.iter().zip(truth) {
        total += chamfer(g, t)?;
    }
    Ok(total / 3.0)
}

/// One row of evaluation errors (degrees; translation and EMD x1e3; chamfer
/// x1e4).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub e_theta: f64,
    pub e_t: f64,
    pub e_emd_g: f64,
    pub e_emd_f: f64,
    pub e_cd_g: f64,
    pub e_cd_f: f64,
}

impl EvalRecord {
    pub const COLUMNS: [&'static str; 6] = ["e_theta", "e_t", "e_emd_g", "e_emd_f", "e_cd_g", "e_cd_f"];

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.e_theta,
            self.e_t,
            self.e_emd_g,
            self.e_emd_f,
            self.e_cd_g,
            self.e_cd_f,
        ]
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self {
            e_theta: v[0],
            e_t: v[1],
            e_emd_g: v[2],
            e_emd_f: v[3],
            e_cd_g: v[4],
            e_cd_f: v[5],
        }
    }

    pub fn mean(records: &[EvalRecord]) -> EvalRecord {
        if records.is_empty() {
            return EvalRecord::default();
        }
        let mut acc = [0.0; 6];
        for r in records {
            for (a, v) in acc.iter_mut().zip(r.to_array()) {
                *a += v;
            }
        }
        Self::from_array(acc.map(|a| a / records.len() as f64))
    }
}

/// Mean rotation angle error (degrees) and mean translation L2 error
/// (x1e3) over both registration directions.
pub fn eval_registration(
    pred12: &RigidTransform,
    pred21: &RigidTransform,
    gt12: &RigidTransform,
    gt21: &RigidTransform,
) -> (f64, f64) {
    let e_theta =
        (angle_deg(&pred12.rotation, &gt12.rotation) + angle_deg(&pred21.rotation, &gt21.rotation)) / 2.0;
    let e_t = ((pred12.translation - gt12.translation).norm()
        + (pred21.translation - gt21.translation).norm())
        / 2.0
        * SCALE_E3;
    (e_theta, e_t)
}

/// Completion outputs or ground truth for both parts.
#[derive(Debug, Clone, Copy)]
pub struct CompletionSet<'a> {
    pub levels: [&'a [PointCloud; 3]; 2],
    pub full: [&'a PointCloud; 2],
}

/// `(e_emd_g, e_emd_f, e_cd_g, e_cd_f)`, averaged over both parts.
pub fn eval_completion(generated: CompletionSet<'_>, truth: CompletionSet<'_>) -> Result<[f64; 4]> {
    let mut out = [0.0; 4];
    for i in 0..2 {
        let (gf, tf) = (generated.full[i], truth.full[i]);
        if gf.len() != tf.len() {
            return Err(Error::Shape(format!(
                "full completion has {} points, ground truth {}",
                gf.len(),
                tf.len()
            )));
        }
        out[0] += d_emd_multilevel(generated.levels[i], truth.levels[i])?;
        out[1] += emd(gf, tf)?.cost;
        out[2] += d_cd_multilevel(generated.levels[i], truth.levels[i])?;
        out[3] += chamfer(gf, tf)?;
    }
    Ok([
        out[0] / 2.0 * SCALE_E3,
        out[1] / 2.0 * SCALE_E3,
        out[2] / 2.0 * SCALE_E4,
        out[3] / 2.0 * SCALE_E4,
    ])
}
