//! Loss terms of both flows, their published weights and ablation masks.
//!
//! Terms are always indexed in log-column order (see [`LossTerms::COLUMNS`]).
//! One coefficient array, produced by [`coefficients`], drives both the
//! plain-value combiner and the graph combiner.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::datagen::{Levels, ScanPair};
use crate::error::Result;
use crate::geometry::{dist_m, dist_q, RigidTransform};
use crate::metrics::emd::{emd_approx, DEFAULT_AUCTION_PHASES};
use crate::networks::{Model, TransformVars};
use crate::pointcloud::{fps_indices, PointCloud};

use super::flows::{run_cr_flow, run_rc_flow, FlowOptions, FlowOutputs, FlowVars};

pub const TERM_COUNT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub c_cr: f64,
    pub o_cr: f64,
    pub c_rc: f64,
    pub o_rc: f64,
    pub r_cr: f64,
    pub r_rc: f64,
    pub s_o: f64,
    pub s_c: f64,
    pub s_r: f64,
    pub s_t: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            c_cr: 1.0,
            o_cr: 3.0,
            c_rc: 0.5,
            o_rc: 1.5,
            r_cr: 3.0,
            r_rc: 9.0,
            s_o: 3.0,
            s_c: 1.0,
            s_r: 3.0,
            s_t: 3.0,
        }
    }
}

impl LossWeights {
    pub fn to_array(&self) -> [f64; TERM_COUNT] {
        [
            self.c_cr, self.o_cr, self.c_rc, self.o_rc, self.r_cr, self.r_rc, self.s_o, self.s_c,
            self.s_r, self.s_t,
        ]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowMode {
    #[default]
    Both,
    CrOnly,
    RcOnly,
}

impl FlowMode {
    pub fn runs_cr(self) -> bool {
        self != FlowMode::RcOnly
    }

    pub fn runs_rc(self) -> bool {
        self != FlowMode::CrOnly
    }
}

/// Which terms are switched off.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub flow_mode: FlowMode,
    pub no_ls_o: bool,
    pub no_ls_c: bool,
    pub no_ls_r: bool,
    pub no_ls_t: bool,
}

impl Ablation {
    pub fn enabled(&self) -> [bool; TERM_COUNT] {
        let cr = self.flow_mode.runs_cr();
        let rc = self.flow_mode.runs_rc();
        let both = cr && rc;
        [
            cr,
            cr,
            rc,
            rc,
            cr,
            rc,
            both && !self.no_ls_o,
            both && !self.no_ls_c,
            both && !self.no_ls_r,
            both && !self.no_ls_t,
        ]
    }
}

/// Published weights with disabled terms set to zero.
pub fn coefficients(weights: &LossWeights, ablation: &Ablation) -> [f64; TERM_COUNT] {
    let enabled = ablation.enabled();
    let w = weights.to_array();
    std::array::from_fn(|i| if enabled[i] { w[i] } else { 0.0 })
}

/// Raw (unweighted) term values; disabled terms are 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub l_c_cr: f64,
    pub l_o_cr: f64,
    pub l_c_rc: f64,
    pub l_o_rc: f64,
    pub l_r_cr: f64,
    pub l_r_rc: f64,
    pub l_s_o: f64,
    pub l_s_c: f64,
    pub l_s_r: f64,
    pub l_s_t: f64,
}

impl LossTerms {
    pub const COLUMNS: [&'static str; TERM_COUNT] = [
        "l_c_cr", "l_o_cr", "l_c_rc", "l_o_rc", "l_r_cr", "l_r_rc", "l_s_o", "l_s_c", "l_s_r", "l_s_t",
    ];

    pub fn to_array(&self) -> [f64; TERM_COUNT] {
        [
            self.l_c_cr, self.l_o_cr, self.l_c_rc, self.l_o_rc, self.l_r_cr, self.l_r_rc, self.l_s_o,
            self.l_s_c, self.l_s_r, self.l_s_t,
        ]
    }

    pub fn from_array(v: [f64; TERM_COUNT]) -> Self {
        Self {
            l_c_cr: v[0],
            l_o_cr: v[1],
            l_c_rc: v[2],
            l_o_rc: v[3],
            l_r_cr: v[4],
            l_r_rc: v[5],
            l_s_o: v[6],
            l_s_c: v[7],
            l_s_r: v[8],
            l_s_t: v[9],
        }
    }

    /// Zeroes every term the ablation disables.
    pub fn masked(&self, ablation: &Ablation) -> Self {
        let enabled = ablation.enabled();
        let v = self.to_array();
        Self::from_array(std::array::from_fn(|i| if enabled[i] { v[i] } else { 0.0 }))
    }

    pub fn weighted_sum(&self, coefficients: &[f64; TERM_COUNT]) -> f64 {
        self.to_array().iter().zip(coefficients).map(|(t, c)| t * c).sum()
    }

    /// `L_c`: completion and orientation terms of both flows.
    pub fn completion_loss(&self, w: &LossWeights) -> f64 {
        w.c_cr * self.l_c_cr + w.o_cr * self.l_o_cr + w.c_rc * self.l_c_rc + w.o_rc * self.l_o_rc
    }

    /// `L_r`: supervised transform terms of both flows.
    pub fn registration_loss(&self, w: &LossWeights) -> f64 {
        w.r_cr * self.l_r_cr + w.r_rc * self.l_r_rc
    }

    /// `L_s`: self-supervised agreement terms.
    pub fn consistency_loss(&self, w: &LossWeights) -> f64 {
        w.s_o * self.l_s_o + w.s_c * self.l_s_c + w.s_r * self.l_s_r + w.s_t * self.l_s_t
    }
}

/// `L = L_c + L_r + L_s`.
pub fn total_loss(completion: f64, registration: f64, consistency: f64) -> f64 {
    completion + registration + consistency
}

fn emd_train(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    Ok(emd_approx(a, b, DEFAULT_AUCTION_PHASES)?.cost)
}

fn fps_cloud(pc: &PointCloud, n: usize) -> Result<PointCloud> {
    if pc.len() == n {
        return Ok(pc.clone());
    }
    Ok(pc.select(&fps_indices(pc.points(), n, 0)?))
}

/// Mean multilevel EMD against `truth` and mean orientation distance, over
/// both parts.
pub fn completion_terms(out: &FlowOutputs, truth: &[Levels; 2], pair: &ScanPair) -> Result<(f64, f64)> {
    let (mut l_c, mut l_o) = (0.0, 0.0);
    for i in 0..2 {
        let mut level_sum = 0.0;
        for (g, t) in out.levels[i].iter().zip(&truth[i]) {
            level_sum += emd_train(g, t)?;
        }
        l_c += level_sum / 3.0;
        l_o += dist_q(&out.r_o[i], &pair.orientation_gt(i));
    }
    Ok((l_c / 2.0, l_o / 2.0))
}

pub fn registration_term(out: &FlowOutputs, pair: &ScanPair) -> f64 {
    (dist_m(&out.m12, &pair.m12_gt) + dist_m(&out.m21, &pair.m21_gt)) / 2.0
}

/// `[L_s^O, L_s^C, L_s^R, L_s^T]` between two flows' outputs.
pub fn consistency_terms(cr: &FlowOutputs, rc: &FlowOutputs, part_points: usize) -> Result<[f64; 4]> {
    let s_o = (dist_q(&cr.r_o[0], &rc.r_o[0]) + dist_q(&cr.r_o[1], &rc.r_o[1])) / 2.0;
    let mut s_c = 0.0;
    for i in 0..2 {
        s_c += emd_train(&fps_cloud(&cr.s[i], part_points)?, &fps_cloud(&rc.s[i], part_points)?)?;
    }
    let s_r = (dist_m(&cr.m12, &rc.m12) + dist_m(&cr.m21, &rc.m21)) / 2.0;
    let cycle = |o: &FlowOutputs| dist_m(&o.m12.compose(&o.m21), &RigidTransform::IDENTITY);
    let s_t = (cycle(cr) + cycle(rc)) / 2.0;
    Ok([s_o, s_c / 2.0, s_r, s_t])
}

/// All terms from plain flow outputs, masked by the ablation.
pub fn evaluate_terms(
    cr: Option<&FlowOutputs>,
    rc: Option<&FlowOutputs>,
    pair: &ScanPair,
    ablation: &Ablation,
) -> Result<LossTerms> {
    let mut v = [0.0; TERM_COUNT];
    if let Some(cr) = cr {
        (v[0], v[1]) = completion_terms(cr, &pair.missing_cr, pair)?;
        v[4] = registration_term(cr, pair);
    }
    if let Some(rc) = rc {
        (v[2], v[3]) = completion_terms(rc, &pair.missing_rc, pair)?;
        v[5] = registration_term(rc, pair);
    }
    if let (Some(cr), Some(rc)) = (cr, rc) {
        let s = consistency_terms(cr, rc, pair.part_points())?;
        v[6..].copy_from_slice(&s);
    }
    Ok(LossTerms::from_array(v).masked(ablation))
}

fn transform_constant(g: &mut Graph, m: &RigidTransform) -> TransformVars {
    let q = g.constant_row(&m.rotation.to_array());
    let t = g.constant_row(m.translation.as_slice());
    TransformVars { q, t }
}

fn graph_dist_m(g: &mut Graph, a: &TransformVars, b: &TransformVars) -> Var {
    let dq = g.dist_q(a.q, b.q);
    let dt = g.sub(a.t, b.t);
    let sq = g.square(dt);
    let mt = g.mean(sq);
    g.add(dq, mt)
}

fn graph_compose(g: &mut Graph, a: &TransformVars, b: &TransformVars) -> TransformVars {
    let q = g.quat_mul(a.q, b.q);
    let rotated = g.rotate(b.t, a.q);
    let t = g.add(rotated, a.t);
    TransformVars { q, t }
}

fn average(g: &mut Graph, a: Var, b: Var) -> Var {
    let s = g.add(a, b);
    g.scale(s, 0.5)
}

fn graph_completion_terms(g: &mut Graph, flow: &FlowVars, truth: &[Levels; 2], pair: &ScanPair) -> (Var, Var) {
    let mut l_c = Vec::new();
    let mut l_o = Vec::new();
    for i in 0..2 {
        let c = &flow.completions[i];
        let mut levels = Vec::new();
        for (k, t) in truth[i].iter().enumerate() {
            let t = g.cloud(t);
            levels.push(g.emd(c.levels[k], t));
        }
        let s = g.add(levels[0], levels[1]);
        let s = g.add(s, levels[2]);
        l_c.push(g.scale(s, 1.0 / 3.0));
        let gt = g.constant_row(&pair.orientation_gt(i).to_array());
        l_o.push(g.dist_q(c.r_o, gt));
    }
    (average(g, l_c[0], l_c[1]), average(g, l_o[0], l_o[1]))
}

fn graph_registration_term(g: &mut Graph, flow: &FlowVars, pair: &ScanPair) -> Var {
    let gt12 = transform_constant(g, &pair.m12_gt);
    let gt21 = transform_constant(g, &pair.m21_gt);
    let a = graph_dist_m(g, &flow.m12, &gt12);
    let b = graph_dist_m(g, &flow.m21, &gt21);
    average(g, a, b)
}

/// Graph of the weighted loss for one pair together with the node of each
/// enabled term.
pub struct GraphLoss {
    pub total: Var,
    pub terms: [Option<Var>; TERM_COUNT],
    pub cr: Option<FlowVars>,
    pub rc: Option<FlowVars>,
}

impl GraphLoss {
    pub fn term_values(&self, g: &Graph) -> LossTerms {
        LossTerms::from_array(self.terms.map(|t| t.map_or(0.0, |v| g.scalar(v))))
    }
}

/// Runs the enabled flows on `pair` and assembles the weighted loss.
pub fn build_loss(
    g: &mut Graph,
    model: &Model,
    pair: &ScanPair,
    weights: &LossWeights,
    ablation: &Ablation,
    options: FlowOptions,
) -> Result<GraphLoss> {
    let enabled = ablation.enabled();
    let coeffs = coefficients(weights, ablation);
    let parts = [g.cloud(&pair.p1), g.cloud(&pair.p2)];
    let cr = if ablation.flow_mode.runs_cr() {
        Some(run_cr_flow(g, model, parts, options)?)
    } else {
        None
    };
    let rc = if ablation.flow_mode.runs_rc() {
        Some(run_rc_flow(g, model, parts)?)
    } else {
        None
    };

    let mut terms: [Option<Var>; TERM_COUNT] = [None; TERM_COUNT];
    if let Some(cr) = &cr {
        let (c, o) = graph_completion_terms(g, cr, &pair.missing_cr, pair);
        terms[0] = Some(c);
        terms[1] = Some(o);
        terms[4] = Some(graph_registration_term(g, cr, pair));
    }
    if let Some(rc) = &rc {
        let (c, o) = graph_completion_terms(g, rc, &pair.missing_rc, pair);
        terms[2] = Some(c);
        terms[3] = Some(o);
        terms[5] = Some(graph_registration_term(g, rc, pair));
    }
    if let (Some(cr), Some(rc)) = (&cr, &rc) {
        let n = model.part_points();
        if enabled[6] {
            let a = g.dist_q(cr.completions[0].r_o, rc.completions[0].r_o);
            let b = g.dist_q(cr.completions[1].r_o, rc.completions[1].r_o);
            terms[6] = Some(average(g, a, b));
        }
        if enabled[7] {
            let mut per_part = Vec::new();
            for i in 0..2 {
                let a = g.fps(cr.completions[i].s, n);
                let b = g.fps(rc.completions[i].s, n);
                per_part.push(g.emd(a, b));
            }
            terms[7] = Some(average(g, per_part[0], per_part[1]));
        }
        if enabled[8] {
            let a = graph_dist_m(g, &cr.m12, &rc.m12);
            let b = graph_dist_m(g, &cr.m21, &rc.m21);
            terms[8] = Some(average(g, a, b));
        }
        if enabled[9] {
            let identity = transform_constant(g, &RigidTransform::IDENTITY);
            let mut cycles = Vec::new();
            for flow in [cr, rc] {
                let c = graph_compose(g, &flow.m12, &flow.m21);
                cycles.push(graph_dist_m(g, &c, &identity));
            }
            terms[9] = Some(average(g, cycles[0], cycles[1]));
        }
    }
    for i in 0..TERM_COUNT {
        if !enabled[i] {
            terms[i] = None;
        }
    }

    let mut total = g.constant_row(&[0.0]);
    for (term, &c) in terms.iter().zip(&coeffs) {
        if let Some(t) = term {
            let weighted = g.scale(*t, c);
            total = g.add(total, weighted);
        }
    }
    Ok(GraphLoss { total, terms, cr, rc })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_published_weights() {
        assert_eq!(
            LossWeights::default().to_array(),
            [1.0, 3.0, 0.5, 1.5, 3.0, 9.0, 3.0, 1.0, 3.0, 3.0]
        );
    }

    #[test]
    fn aggregate_arithmetic() {
        let w = LossWeights::default();
        let ones = LossTerms::from_array([1.0; TERM_COUNT]);
        assert_eq!(ones.completion_loss(&w), 6.0);
        assert_eq!(ones.registration_loss(&w), 12.0);
        assert_eq!(ones.consistency_loss(&w), 10.0);
        assert_eq!(total_loss(6.0, 12.0, 8.0), 26.0);
        assert_eq!(total_loss(0.0, 0.0, 0.0), 0.0);
        let only_o = LossTerms {
            l_o_cr: 0.25,
            ..Default::default()
        };
        assert_eq!(only_o.completion_loss(&w), 0.75);
        let coeffs = coefficients(&w, &Ablation::default());
        assert_eq!(ones.weighted_sum(&coeffs), 28.0);
    }

    #[test]
    fn ablation_masks() {
        let cr_only = Ablation {
            flow_mode: FlowMode::CrOnly,
            ..Default::default()
        };
        assert_eq!(
            cr_only.enabled(),
            [true, true, false, false, true, false, false, false, false, false]
        );
        let no_c = Ablation {
            no_ls_c: true,
            ..Default::default()
        };
        let c = coefficients(&LossWeights::default(), &no_c);
        assert_eq!(c[7], 0.0);
        assert_eq!(c.iter().filter(|&&v| v == 0.0).count(), 1);
    }

    #[test]
    fn config_names() {
        let a: Ablation = serde_json::from_str(r#"{"flow_mode": "rc_only", "no_ls_t": true}"#).unwrap();
        assert_eq!(a.flow_mode, FlowMode::RcOnly);
        assert!(a.no_ls_t && !a.no_ls_o);
    }
}
