//! The complete-then-register (C-R) and register-then-complete (R-C) flows.

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::geometry::{RigidTransform, UnitQuaternion};
use crate::networks::{apply_transform, cloud_value, quat_value, CompletionVars, Model, TransformVars};
use crate::pointcloud::PointCloud;

/// Graph nodes produced by one flow.
#[derive(Debug, Clone, Copy)]
pub struct FlowVars {
    pub completions: [CompletionVars; 2],
    pub m12: TransformVars,
    pub m21: TransformVars,
}

impl FlowVars {
    pub fn outputs(&self, g: &Graph) -> FlowOutputs {
        let c = &self.completions;
        FlowOutputs {
            s: [cloud_value(g, c[0].s), cloud_value(g, c[1].s)],
            levels: [0, 1].map(|i| c[i].levels.map(|l| cloud_value(g, l))),
            r_o: [quat_value(g, c[0].r_o), quat_value(g, c[1].r_o)],
            m12: self.m12.value(g),
            m21: self.m21.value(g),
        }
    }
}

/// Plain values of everything one flow predicts.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowOutputs {
    /// Completed shapes in each part's input frame.
    pub s: [PointCloud; 2],
    /// Missing-part levels per part, canonical frame.
    pub levels: [[PointCloud; 3]; 2],
    pub r_o: [UnitQuaternion; 2],
    pub m12: RigidTransform,
    pub m21: RigidTransform,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FlowOptions {
    /// Stop registration gradients from reaching the completion network in
    /// the C-R flow.
    pub detach_completions: bool,
}

/// Completes each part, downsamples the completions back to the part size
/// and registers them in both directions.
pub fn run_cr_flow(g: &mut Graph, model: &Model, parts: [Var; 2], options: FlowOptions) -> Result<FlowVars> {
    for &p in &parts {
        model.check_input(g, p)?;
    }
    let n = model.part_points();
    let completions = parts.map(|p| model.complete(g, p));
    let d = completions.map(|c| {
        let s = if options.detach_completions { g.detach(c.s) } else { c.s };
        g.fps(s, n)
    });
    let m12 = model.register(g, d[0], d[1]);
    let m21 = model.register(g, d[1], d[0]);
    Ok(FlowVars {
        completions,
        m12,
        m21,
    })
}

/// Registers the raw parts in both directions, then completes each part
/// from its union with the other part mapped into its frame.
pub fn run_rc_flow(g: &mut Graph, model: &Model, parts: [Var; 2]) -> Result<FlowVars> {
    for &p in &parts {
        model.check_input(g, p)?;
    }
    let n = model.part_points();
    let [p1, p2] = parts;
    let m12 = model.register(g, p1, p2);
    let m21 = model.register(g, p2, p1);
    let p2_in_1 = apply_transform(g, &m21, p2);
    let p1_in_2 = apply_transform(g, &m12, p1);
    let u1 = g.concat_rows(&[p1, p2_in_1]);
    let u2 = g.concat_rows(&[p2, p1_in_2]);
    let inputs = [g.fps(u1, n), g.fps(u2, n)];
    let completions = inputs.map(|x| model.complete(g, x));
    Ok(FlowVars {
        completions,
        m12,
        m21,
    })
}
