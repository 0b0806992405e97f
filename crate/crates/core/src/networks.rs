//! The registration and completion networks as functions on a [`Graph`].
//!
//! Encoders are shared per-point MLPs followed by max pooling. Layer widths
//! are divided by `width_divisor`, so `1` gives the full model and `16` the
//! tiny one used for gradient checks and smoke runs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::datagen::PointBudget;
use crate::error::{Error, Result};
use crate::geometry::{RigidTransform, UnitQuaternion, Vec3};
use crate::nn::{Mlp, ParamStore};
use crate::pointcloud::PointCloud;

pub const REG_ENCODER_WIDTHS: [usize; 4] = [64, 128, 256, 512];
pub const GEN_ENCODER_WIDTHS: [usize; 6] = [64, 128, 256, 512, 1024, 1920];
pub const ORIENT_HEAD_WIDTHS: [usize; 2] = [256, 128];
/// Children generated per point when refining one level into the next.
pub const CHILDREN_PER_POINT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub width_divisor: usize,
    pub budget: PointBudget,
}

impl ModelConfig {
    pub const FULL: Self = Self {
        width_divisor: 1,
        budget: PointBudget::FULL,
    };

    pub fn tiny(budget: PointBudget) -> Self {
        Self {
            width_divisor: 16,
            budget,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.budget.validate()?;
        if self.width_divisor == 0 || 64 % self.width_divisor != 0 {
            return Err(Error::InvalidSpec(format!(
                "width divisor {} must divide 64",
                self.width_divisor
            )));
        }
        Ok(())
    }

    fn scaled<const N: usize>(&self, widths: [usize; N]) -> [usize; N] {
        widths.map(|w| (w / self.width_divisor).max(1))
    }
}

/// Per-point MLP and max pooling.
#[derive(Debug, Clone)]
pub struct Encoder {
    mlp: Mlp,
}

impl Encoder {
    fn new(store: &mut ParamStore, name: &str, widths: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut all = vec![3];
        all.extend_from_slice(widths);
        Self {
            mlp: Mlp::new(store, name, &all, 1.0, rng),
        }
    }

    pub fn width(&self) -> usize {
        self.mlp.output_width()
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, points: Var) -> Var {
        let h = self.mlp.forward(g, store, points);
        g.max_rows(h)
    }
}

#[derive(Debug, Clone)]
pub struct RegNet {
    pub encoder: Encoder,
    pub rotation: Mlp,
    pub translation: Mlp,
}

#[derive(Debug, Clone)]
pub struct CompNet {
    pub orient_encoder: Encoder,
    pub orient_head: Mlp,
    pub gen_encoder: Encoder,
    pub head_p: Mlp,
    pub head_s: Mlp,
    pub head_o: Mlp,
}

/// Rotation and translation nodes of a predicted rigid transform.
#[derive(Debug, Clone, Copy)]
pub struct TransformVars {
    pub q: Var,
    pub t: Var,
}

impl TransformVars {
    pub fn value(&self, g: &Graph) -> RigidTransform {
        let q = g.value(self.q);
        let t = g.value(self.t);
        RigidTransform::new(
            UnitQuaternion::normalize([q[[0, 0]], q[[0, 1]], q[[0, 2]], q[[0, 3]]])
                .unwrap_or(UnitQuaternion::IDENTITY),
            Vec3::new(t[[0, 0]], t[[0, 1]], t[[0, 2]]),
        )
    }
}

/// Outputs of the completion network for one input cloud.
#[derive(Debug, Clone, Copy)]
pub struct CompletionVars {
    /// Predicted rotation into the canonical frame.
    pub r_o: Var,
    /// Input rotated into the canonical frame.
    pub p_o: Var,
    /// Missing-part levels in the canonical frame, coarse to fine.
    pub levels: [Var; 3],
    /// `inverse(r_o)` applied to `levels[2] ∪ p_o`, in the input frame.
    pub s: Var,
}

/// All parameters of both networks.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub reg: RegNet,
    pub comp: CompNet,
}

fn quaternion_head(store: &mut ParamStore, name: &str, widths: &[usize], rng: &mut ChaCha8Rng) -> Mlp {
    let mlp = Mlp::new(store, name, widths, 0.1, rng);
    // Start near the identity rotation so normalization is well conditioned.
    let bias = mlp.layers.last().unwrap().bias;
    store.value_mut(bias)[[0, 0]] = 1.0;
    mlp
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();

        let reg_widths = config.scaled(REG_ENCODER_WIDTHS);
        let f = reg_widths[3];
        let encoder = Encoder::new(&mut store, "reg.encoder", &reg_widths, &mut rng);
        let rotation = quaternion_head(&mut store, "reg.rotation", &[2 * f, f, f / 2, 4], &mut rng);
        let translation = Mlp::new(&mut store, "reg.translation", &[2 * f, f, f / 2, 3], 0.5, &mut rng);
        let reg = RegNet {
            encoder,
            rotation,
            translation,
        };

        let orient_encoder = Encoder::new(&mut store, "comp.orient_encoder", &reg_widths, &mut rng);
        let [h1, h2] = config.scaled(ORIENT_HEAD_WIDTHS);
        let orient_head = quaternion_head(&mut store, "comp.orient_head", &[f, h1, h2, 4], &mut rng);
        let gen_widths = config.scaled(GEN_ENCODER_WIDTHS);
        let gf = gen_widths[5];
        let gen_encoder = Encoder::new(&mut store, "comp.gen_encoder", &gen_widths, &mut rng);
        let [l0, l1, l2] = config.budget.levels();
        let head = |store: &mut ParamStore, name: &str, out: usize, gain: f64, rng: &mut ChaCha8Rng| {
            Mlp::new(store, name, &[gf, gf / 2, gf / 4, 3 * out], gain, rng)
        };
        let head_p = head(&mut store, "comp.head_p", l0, 0.5, &mut rng);
        let head_s = head(&mut store, "comp.head_s", l1, 0.1, &mut rng);
        let head_o = head(&mut store, "comp.head_o", l2, 0.1, &mut rng);
        let comp = CompNet {
            orient_encoder,
            orient_head,
            gen_encoder,
            head_p,
            head_s,
            head_o,
        };
        Ok(Self {
            config,
            store,
            reg,
            comp,
        })
    }

    pub fn part_points(&self) -> usize {
        self.config.budget.part
    }

    /// Errors unless `points` has exactly one part's worth of rows.
    pub fn check_input(&self, g: &Graph, points: Var) -> Result<()> {
        let (rows, cols) = g.value(points).dim();
        if rows != self.part_points() || cols != 3 {
            return Err(Error::Shape(format!(
                "expected {} x 3 input, got {rows} x {cols}",
                self.part_points()
            )));
        }
        Ok(())
    }

    /// Fails with a schema error when data was generated for another budget.
    pub fn check_budget(&self, budget: PointBudget) -> Result<()> {
        if budget != self.config.budget {
            return Err(Error::Schema(format!(
                "model expects budget {:?}, data has {:?}",
                self.config.budget, budget
            )));
        }
        Ok(())
    }

    pub fn encode_registration(&self, g: &mut Graph, points: Var) -> Var {
        self.reg.encoder.forward(g, &self.store, points)
    }

    /// Rotation first, then translation between the rotated source and the
    /// target. The result maps `source` onto `target`.
    pub fn register(&self, g: &mut Graph, source: Var, target: Var) -> TransformVars {
        let fs = self.encode_registration(g, source);
        let ft = self.encode_registration(g, target);
        let cat = g.concat_cols(&[fs, ft]);
        let raw = self.reg.rotation.forward(g, &self.store, cat);
        let q = g.quat_normalize(raw);
        let rotated = g.rotate(source, q);
        let fr = self.encode_registration(g, rotated);
        let cat = g.concat_cols(&[fr, ft]);
        let t = self.reg.translation.forward(g, &self.store, cat);
        TransformVars { q, t }
    }

    /// Predicted canonical rotation and the rotated input.
    pub fn orient(&self, g: &mut Graph, points: Var) -> (Var, Var) {
        let f = self.comp.orient_encoder.forward(g, &self.store, points);
        let raw = self.comp.orient_head.forward(g, &self.store, f);
        let r_o = g.quat_normalize(raw);
        let p_o = g.rotate(points, r_o);
        (r_o, p_o)
    }

    /// Coarse-to-fine missing part: each finer level adds learned offsets to
    /// copies of the coarser level's points.
    pub fn generate_missing(&self, g: &mut Graph, p_o: Var) -> [Var; 3] {
        let [l0, l1, l2] = self.config.budget.levels();
        let f = self.comp.gen_encoder.forward(g, &self.store, p_o);
        let raw = self.comp.head_p.forward(g, &self.store, f);
        let g_p = g.reshape(raw, l0, 3);
        let refine = |g: &mut Graph, coarse: Var, head: &Mlp, n: usize| {
            let raw = head.forward(g, &self.store, f);
            let offsets = g.reshape(raw, n, 3);
            let parents = g.repeat_rows(coarse, n / g.value(coarse).nrows());
            g.add(parents, offsets)
        };
        let g_s = refine(g, g_p, &self.comp.head_s, l1);
        let g_o = refine(g, g_s, &self.comp.head_o, l2);
        [g_p, g_s, g_o]
    }

    pub fn complete(&self, g: &mut Graph, points: Var) -> CompletionVars {
        let (r_o, p_o) = self.orient(g, points);
        let levels = self.generate_missing(g, p_o);
        let union = g.concat_rows(&[levels[2], p_o]);
        let s = g.rotate_inverse(union, r_o);
        CompletionVars { r_o, p_o, levels, s }
    }
}

/// Applies a predicted transform to the rows of `points`.
pub fn apply_transform(g: &mut Graph, m: &TransformVars, points: Var) -> Var {
    let rotated = g.rotate(points, m.q);
    g.add_bias(rotated, m.t)
}

/// Reads an `n x 3` node back as a point cloud.
pub fn cloud_value(g: &Graph, v: Var) -> PointCloud {
    PointCloud::from_flat(g.value(v).as_slice().expect("graph values are contiguous"))
}

pub fn quat_value(g: &Graph, v: Var) -> UnitQuaternion {
    let q = g.value(v);
    UnitQuaternion::normalize([q[[0, 0]], q[[0, 1]], q[[0, 2]], q[[0, 3]]])
        .unwrap_or(UnitQuaternion::IDENTITY)
}
