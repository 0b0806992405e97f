//! Parameter storage, dense layers and the Adam optimizer.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named parameter tensors in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Array2::len).sum()
    }

    /// Zero-filled tensors shaped like the parameters.
    pub fn zeros_like(&self) -> Vec<Array2<f64>> {
        self.values.iter().map(|v| Array2::zeros(v.raw_dim())).collect()
    }

    /// Replaces every value, checking names and shapes.
    pub fn load(&mut self, named: Vec<(String, Array2<f64>)>) -> Result<()> {
        if named.len() != self.len() {
            return Err(Error::Schema(format!(
                "expected {} tensors, found {}",
                self.len(),
                named.len()
            )));
        }
        for (i, (name, value)) in named.into_iter().enumerate() {
            if name != self.names[i] {
                return Err(Error::Schema(format!(
                    "tensor {i} is {name:?}, expected {:?}",
                    self.names[i]
                )));
            }
            if value.dim() != self.values[i].dim() {
                return Err(Error::Schema(format!(
                    "tensor {name:?} has shape {:?}, expected {:?}",
                    value.dim(),
                    self.values[i].dim()
                )));
            }
            self.values[i] = value;
        }
        Ok(())
    }
}

/// Collects the gradient of every parameter that appears in `graph`.
pub fn param_gradients(store: &ParamStore, graph: &Graph, output: Var) -> Vec<Array2<f64>> {
    let grads = graph.backward(output);
    let mut out = store.zeros_like();
    for (id, var) in graph.param_vars() {
        if let Some(g) = grads.get(var) {
            out[id.0] += g;
        }
    }
    out
}

pub fn global_norm(grads: &[Array2<f64>]) -> f64 {
    grads
        .iter()
        .map(|g| g.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` in place so their joint norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Array2<f64>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            g.mapv_inplace(|v| v * k);
        }
    }
    norm
}

/// Fully connected layer `y = x W + b` with `W: in x out`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// He-uniform weights and zero bias.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = gain * (6.0 / fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).unwrap();
        let w = Array2::from_shape_fn((fan_in, fan_out), |_| dist.sample(rng));
        Self {
            weight: store.add(format!("{name}.weight"), w),
            bias: store.add(format!("{name}.bias"), Array2::zeros((1, fan_out))),
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let h = g.matmul(x, w);
        g.add_bias(h, b)
    }
}

/// Initial bias of hidden layers. A small positive value keeps units off the
/// ReLU kink when their whole input is zero.
pub const HIDDEN_BIAS: f64 = 0.01;

/// Stack of linear layers with ReLU between them (none after the last).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `widths` lists the input width followed by each layer's output width.
    /// The last layer uses `last_gain` for its initialization.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        last_gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let count = widths.len() - 1;
        let layers = (0..count)
            .map(|i| {
                let last = i + 1 == count;
                let gain = if last { last_gain } else { 1.0 };
                let layer = Linear::new(store, &format!("{name}.{i}"), widths[i], widths[i + 1], gain, rng);
                if !last {
                    store.value_mut(layer.bias).fill(HIDDEN_BIAS);
                }
                layer
            })
            .collect();
        Self { layers }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, store, h);
            if i + 1 < self.layers.len() {
                h = g.relu(h);
            }
        }
        h
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out)
    }
}

/// Adam with bias correction. Moments are kept per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: store.zeros_like(),
            v: store.zeros_like(),
        }
    }

    pub fn update(&mut self, store: &mut ParamStore, grads: &[Array2<f64>], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = store.value_mut(ParamId(i));
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn clipping_caps_the_norm() {
        let mut grads = vec![array![[3.0, 4.0]], array![[0.0]]];
        assert_eq!(clip_global_norm(&mut grads, 10.0), 5.0);
        assert_eq!(grads[0], array![[3.0, 4.0]]);
        assert_eq!(clip_global_norm(&mut grads, 1.0), 5.0);
        assert!((global_norm(&grads) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adam_fits_a_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let layer = Linear::new(&mut store, "fit", 1, 1, 1.0, &mut rng);
        let mut adam = Adam::new(&store);
        let xs = array![[0.0], [1.0], [2.0], [3.0]];
        let ys = array![[1.0], [3.0], [5.0], [7.0]];
        for _ in 0..3000 {
            let mut g = Graph::new();
            let x = g.constant(xs.clone());
            let y = g.constant(ys.clone());
            let pred = layer.forward(&mut g, &store, x);
            let d = g.sub(pred, y);
            let sq = g.square(d);
            let loss = g.mean(sq);
            let grads = param_gradients(&store, &g, loss);
            adam.update(&mut store, &grads, 0.01);
        }
        assert!((store.value(layer.weight)[[0, 0]] - 2.0).abs() < 1e-3);
        assert!((store.value(layer.bias)[[0, 0]] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn load_checks_schema() {
        let mut store = ParamStore::new();
        store.add("a", Array2::zeros((2, 2)));
        assert!(store.load(vec![("b".into(), Array2::zeros((2, 2)))]).is_err());
        assert!(store.load(vec![("a".into(), Array2::zeros((1, 2)))]).is_err());
        store.load(vec![("a".into(), Array2::ones((2, 2)))]).unwrap();
        assert_eq!(store.value(ParamId(0)), &Array2::<f64>::ones((2, 2)));
    }
}
