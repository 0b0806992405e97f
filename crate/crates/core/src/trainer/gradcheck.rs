//! Central finite differences against the analytic gradient of the total
//! loss, with every discrete choice (FPS picks, EMD assignments, max-pool
//! winners) frozen to the unperturbed forward pass.

use rand::Rng;

use crate::autodiff::Graph;
use crate::dataset::sample_rng;
use crate::datagen::ScanPair;
use crate::error::Result;
use crate::networks::Model;
use crate::nn::param_gradients;

use super::flows::FlowOptions;
use super::losses::{build_loss, Ablation, LossWeights};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckSettings {
    pub probes: usize,
    pub step: f64,
    pub rel_tol: f64,
    /// Pairs whose magnitudes both fall below this are counted as agreeing.
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckSettings {
    fn default() -> Self {
        Self {
            probes: 500,
            step: 1e-6,
            rel_tol: 1e-2,
            abs_floor: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub param: String,
    pub index: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub agrees: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub probes: Vec<Probe>,
}

impl GradCheckReport {
    pub fn pass_fraction(&self) -> f64 {
        let ok = self.probes.iter().filter(|p| p.agrees).count();
        ok as f64 / self.probes.len().max(1) as f64
    }
}

pub fn agrees(analytic: f64, numeric: f64, settings: &GradCheckSettings) -> bool {
    let scale = analytic.abs().max(numeric.abs());
    scale < settings.abs_floor || (analytic - numeric).abs() <= settings.rel_tol * scale
}

/// Probes entries drawn uniformly over all scalar parameters.
pub fn gradient_check(
    model: &Model,
    pair: &ScanPair,
    weights: &LossWeights,
    ablation: &Ablation,
    options: FlowOptions,
    settings: &GradCheckSettings,
) -> Result<GradCheckReport> {
    let mut g = Graph::new();
    let loss = build_loss(&mut g, model, pair, weights, ablation, options)?;
    let grads = param_gradients(&model.store, &g, loss.total);
    let decisions = g.decisions().clone();

    let ids: Vec<_> = model.store.ids().collect();
    let sizes: Vec<usize> = ids.iter().map(|&id| model.store.value(id).len()).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = sample_rng(settings.seed, 0);
    let mut probe_model = model.clone();
    let eval = |m: &Model| -> Result<f64> {
        let mut g = Graph::replay(&decisions);
        let loss = build_loss(&mut g, m, pair, weights, ablation, options)?;
        Ok(g.scalar(loss.total))
    };

    let mut probes = Vec::with_capacity(settings.probes);
    for _ in 0..settings.probes {
        let mut flat = rng.random_range(0..total);
        let mut k = 0;
        while flat >= sizes[k] {
            flat -= sizes[k];
            k += 1;
        }
        let id = ids[k];
        let cols = model.store.value(id).ncols();
        let index = (flat / cols, flat % cols);
        let original = model.store.value(id)[index];

        probe_model.store.value_mut(id)[index] = original + settings.step;
        let plus = eval(&probe_model)?;
        probe_model.store.value_mut(id)[index] = original - settings.step;
        let minus = eval(&probe_model)?;
        probe_model.store.value_mut(id)[index] = original;

        let numeric = (plus - minus) / (2.0 * settings.step);
        let analytic = grads[id.0][index];
        probes.push(Probe {
            param: model.store.name(id).to_string(),
            index,
            analytic,
            numeric,
            agrees: agrees(analytic, numeric, settings),
        });
    }
    Ok(GradCheckReport { probes })
}
