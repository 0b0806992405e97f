//! A small reverse-mode tape over dense `f64` matrices.
//!
//! Every value is an `Array2<f64>`; row vectors are `1 x c`, scalars `1 x 1`.
//! Quaternions are `1 x 4` rows in `(w, x, y, z)` order.
//!
//! Discrete choices made during a forward pass (farthest-point sampling
//! indices and EMD assignments) go through a [`Decisions`] log. A graph built
//! with [`Graph::replay`] reuses a previous log verbatim, which keeps the
//! forward function smooth for finite-difference checks.

use std::collections::HashMap;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

use crate::geometry::Vec3;
use crate::metrics::emd::{auction, DEFAULT_AUCTION_PHASES};
use crate::nn::{ParamId, ParamStore};
use crate::pointcloud::{fps_indices, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    MaxRows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    RepeatRows(Var, usize),
    Sum(Var),
    RowNorms(Var),
    Square(Var),
    Pick(Var, Var, bool),
    QuatNormalize(Var),
    QuatMul(Var, Var),
    QuatConj(Var),
    QuatToMat(Var),
    Transpose(Var),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Log of discrete forward-pass choices, recorded or replayed in order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Decisions {
    entries: Vec<Vec<usize>>,
    cursor: usize,
    replaying: bool,
}

impl Decisions {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn take(&mut self, compute: impl FnOnce() -> Vec<usize>) -> Vec<usize> {
        if self.replaying {
            let entry = self
                .entries
                .get(self.cursor)
                .cloned()
                .expect("replayed graph made more decisions than were recorded");
            self.cursor += 1;
            entry
        } else {
            let entry = compute();
            self.entries.push(entry.clone());
            entry
        }
    }
}

pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    decisions: Decisions,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar with respect to every node of a graph.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }
}

fn quat(a: ArrayView2<f64>) -> [f64; 4] {
    [a[[0, 0]], a[[0, 1]], a[[0, 2]], a[[0, 3]]]
}

fn row(values: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, values.len()), values.to_vec()).unwrap()
}

/// Hamilton product as `L(a) b`: rows of `L(a)`.
fn left_matrix([w, x, y, z]: [f64; 4]) -> [[f64; 4]; 4] {
    [
        [w, -x, -y, -z],
        [x, w, -z, y],
        [y, z, w, -x],
        [z, -y, x, w],
    ]
}

/// Hamilton product as `R(b) a`.
fn right_matrix([w, x, y, z]: [f64; 4]) -> [[f64; 4]; 4] {
    [
        [w, -x, -y, -z],
        [x, w, z, -y],
        [y, -z, w, x],
        [z, y, -x, w],
    ]
}

fn apply4(m: &[[f64; 4]; 4], v: [f64; 4]) -> [f64; 4] {
    std::array::from_fn(|r| (0..4).map(|c| m[r][c] * v[c]).sum())
}

fn apply4_t(m: &[[f64; 4]; 4], v: [f64; 4]) -> [f64; 4] {
    std::array::from_fn(|c| (0..4).map(|r| m[r][c] * v[r]).sum())
}

fn rotation_matrix([w, x, y, z]: [f64; 4]) -> [[f64; 3]; 3] {
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Partial derivatives of [`rotation_matrix`] with respect to w, x, y, z.
fn rotation_partials([w, x, y, z]: [f64; 4]) -> [[[f64; 3]; 3]; 4] {
    let t = 2.0;
    [
        [[0.0, -t * z, t * y], [t * z, 0.0, -t * x], [-t * y, t * x, 0.0]],
        [[0.0, t * y, t * z], [t * y, -2.0 * t * x, -t * w], [t * z, t * w, -2.0 * t * x]],
        [[-2.0 * t * y, t * x, t * w], [t * x, 0.0, t * z], [-t * w, t * z, -2.0 * t * y]],
        [[-2.0 * t * z, -t * w, t * x], [t * w, -2.0 * t * z, t * y], [t * x, t * y, 0.0]],
    ]
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            decisions: Decisions::default(),
        }
    }

    /// A graph that replays the discrete choices of an earlier forward pass.
    pub fn replay(decisions: &Decisions) -> Self {
        let mut g = Self::new();
        g.decisions = Decisions {
            entries: decisions.entries.clone(),
            cursor: 0,
            replaying: true,
        };
        g
    }

    pub fn decisions(&self) -> &Decisions {
        &self.decisions
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A copy of `v` that gradients do not flow through.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn constant_row(&mut self, values: &[f64]) -> Var {
        self.constant(row(values))
    }

    pub fn cloud(&mut self, pc: &PointCloud) -> Var {
        let flat = pc.to_flat();
        self.constant(Array2::from_shape_vec((pc.len(), 3), flat).unwrap())
    }

    /// Leaf bound to a parameter tensor; one node per parameter per graph.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Leaf);
        self.params.insert(id, v);
        v
    }

    pub fn param_vars(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.params.iter().map(|(&id, &v)| (id, v))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    /// `x + b` with the `1 x c` row `b` broadcast over rows.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let value = self.value(x) + self.value(b);
        self.push(value, Op::AddBias(x, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) * k;
        self.push(value, Op::Scale(a, k))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|v| v.max(0.0));
        self.push(value, Op::Relu(a))
    }

    /// Column-wise maximum over rows, giving a `1 x c` row.
    pub fn max_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut arg = vec![0; x.ncols()];
        let mut best = vec![f64::NEG_INFINITY; x.ncols()];
        for (r, line) in x.outer_iter().enumerate() {
            for (c, &v) in line.iter().enumerate() {
                if v > best[c] {
                    best[c] = v;
                    arg[c] = r;
                }
            }
        }
        self.push(row(&best), Op::MaxRows(a, arg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&v| self.value(v).view()).collect();
        let value = concatenate(Axis(1), &views).expect("row counts differ");
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&v| self.value(v).view()).collect();
        let value = concatenate(Axis(0), &views).expect("column counts differ");
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    pub fn gather_rows(&mut self, a: Var, indices: Vec<usize>) -> Var {
        let value = self.value(a).select(Axis(0), &indices);
        self.push(value, Op::GatherRows(a, indices))
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let flat: Vec<f64> = self.value(a).iter().copied().collect();
        let value = Array2::from_shape_vec((rows, cols), flat).expect("reshape size mismatch");
        self.push(value, Op::Reshape(a))
    }

    /// Each row repeated `k` times consecutively.
    pub fn repeat_rows(&mut self, a: Var, k: usize) -> Var {
        let x = self.value(a);
        let idx: Vec<usize> = (0..x.nrows()).flat_map(|r| std::iter::repeat_n(r, k)).collect();
        let value = x.select(Axis(0), &idx);
        self.push(value, Op::RepeatRows(a, k))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = row(&[self.value(a).sum()]);
        self.push(value, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Euclidean norm of each row, as an `n x 1` column.
    pub fn row_norms(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let norms: Vec<f64> = x
            .outer_iter()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let value = Array2::from_shape_vec((norms.len(), 1), norms).unwrap();
        self.push(value, Op::RowNorms(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|v| v * v);
        self.push(value, Op::Square(a))
    }

    /// Elementwise minimum of two scalars.
    pub fn min(&mut self, a: Var, b: Var) -> Var {
        let first = self.scalar(a) <= self.scalar(b);
        let value = if first { self.value(a) } else { self.value(b) }.clone();
        self.push(value, Op::Pick(a, b, first))
    }

    pub fn quat_normalize(&mut self, q: Var) -> Var {
        let v = self.value(q);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        let value = v / n;
        self.push(value, Op::QuatNormalize(q))
    }

    /// Hamilton product `a * b` without renormalization.
    pub fn quat_mul(&mut self, a: Var, b: Var) -> Var {
        let p = apply4(&left_matrix(quat(self.value(a).view())), quat(self.value(b).view()));
        self.push(row(&p), Op::QuatMul(a, b))
    }

    pub fn quat_conj(&mut self, q: Var) -> Var {
        let [w, x, y, z] = quat(self.value(q).view());
        self.push(row(&[w, -x, -y, -z]), Op::QuatConj(q))
    }

    /// The 3x3 rotation matrix of a unit quaternion.
    pub fn quat_to_mat(&mut self, q: Var) -> Var {
        let m = rotation_matrix(quat(self.value(q).view()));
        let value = Array2::from_shape_fn((3, 3), |(r, c)| m[r][c]);
        self.push(value, Op::QuatToMat(q))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        self.push(value, Op::Transpose(a))
    }

    /// Rotates the rows of `points` (`n x 3`) by quaternion `q`.
    pub fn rotate(&mut self, points: Var, q: Var) -> Var {
        let m = self.quat_to_mat(q);
        let mt = self.transpose(m);
        self.matmul(points, mt)
    }

    /// Applies the inverse rotation of `q` to the rows of `points`.
    pub fn rotate_inverse(&mut self, points: Var, q: Var) -> Var {
        let m = self.quat_to_mat(q);
        self.matmul(points, m)
    }

    /// Rows selected by farthest-point sampling from row 0.
    pub fn fps(&mut self, points: Var, n: usize) -> Var {
        let x = self.value(points);
        if x.nrows() == n {
            return points;
        }
        let pts: Vec<Vec3> = x
            .outer_iter()
            .map(|r| Vec3::new(r[0], r[1], r[2]))
            .collect();
        let idx = self
            .decisions
            .take(|| fps_indices(&pts, n, 0).expect("fps size checked by caller"));
        self.gather_rows(points, idx)
    }

    /// Mean matched distance under an auction assignment computed on the
    /// current values. Both inputs are `n x 3`.
    pub fn emd(&mut self, a: Var, b: Var) -> Var {
        let (xa, xb) = (self.value(a).clone(), self.value(b).clone());
        assert_eq!(xa.nrows(), xb.nrows(), "emd needs equal cardinalities");
        let n = xa.nrows();
        let assignment = self.decisions.take(|| {
            let mut cost = Vec::with_capacity(n * n);
            for p in xa.outer_iter() {
                for q in xb.outer_iter() {
                    let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                    cost.push(d.sqrt());
                }
            }
            auction(&cost, n, DEFAULT_AUCTION_PHASES)
        });
        let matched = self.gather_rows(b, assignment);
        let diff = self.sub(a, matched);
        let norms = self.row_norms(diff);
        self.mean(norms)
    }

    /// `min(|q1 - q2|, |q1 + q2|)`.
    pub fn dist_q(&mut self, q1: Var, q2: Var) -> Var {
        let minus = self.sub(q1, q2);
        let plus = self.add(q1, q2);
        let a = self.row_norms(minus);
        let b = self.row_norms(plus);
        self.min(a, b)
    }

    /// Reverse sweep from the scalar `output`.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.value(output).dim(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Array2::ones((1, 1)));

        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot => *slot = Some(g),
            }
        }

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddBias(x, b) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *b, gb);
                    acc(&mut grads, *x, g.clone());
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, -&g);
                    acc(&mut grads, *a, g.clone());
                }
                Op::Scale(a, k) => acc(&mut grads, *a, &g * *k),
                Op::Relu(a) => {
                    let mut ga = g.clone();
                    ga.zip_mut_with(&node.value, |d, &y| {
                        if y <= 0.0 {
                            *d = 0.0
                        }
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::MaxRows(a, arg) => {
                    let mut ga = Array2::zeros(self.value(*a).raw_dim());
                    for (c, &r) in arg.iter().enumerate() {
                        ga[[r, c]] = g[[0, c]];
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        acc(&mut grads, p, g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let h = self.value(p).nrows();
                        acc(&mut grads, p, g.slice(s![start..start + h, ..]).to_owned());
                        start += h;
                    }
                }
                Op::GatherRows(a, idx) => {
                    let mut ga = Array2::zeros(self.value(*a).raw_dim());
                    for (k, &r) in idx.iter().enumerate() {
                        let mut dst = ga.row_mut(r);
                        dst += &g.row(k);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Reshape(a) => {
                    let dim = self.value(*a).raw_dim();
                    let flat: Vec<f64> = g.iter().copied().collect();
                    acc(&mut grads, *a, Array2::from_shape_vec(dim, flat).unwrap());
                }
                Op::RepeatRows(a, k) => {
                    let x = self.value(*a);
                    let mut ga = Array2::zeros(x.raw_dim());
                    for r in 0..x.nrows() {
                        let block = g.slice(s![r * k..(r + 1) * k, ..]).sum_axis(Axis(0));
                        ga.row_mut(r).assign(&block);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let ga = Array2::from_elem(self.value(*a).raw_dim(), g[[0, 0]]);
                    acc(&mut grads, *a, ga);
                }
                Op::RowNorms(a) => {
                    let x = self.value(*a);
                    let mut ga = Array2::zeros(x.raw_dim());
                    for r in 0..x.nrows() {
                        let n = node.value[[r, 0]];
                        // The norm is not differentiable at zero; use 0 there.
                        if n > 1e-12 {
                            let k = g[[r, 0]] / n;
                            ga.row_mut(r).assign(&(&x.row(r) * k));
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Square(a) => acc(&mut grads, *a, &g * &(self.value(*a) * 2.0)),
                Op::Pick(a, b, first) => acc(&mut grads, if *first { *a } else { *b }, g.clone()),
                Op::QuatNormalize(q) => {
                    let v = self.value(*q);
                    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                    let y = &node.value;
                    let dot: f64 = (y * &g).sum();
                    acc(&mut grads, *q, (&g - &(y * dot)) / n);
                }
                Op::QuatMul(a, b) => {
                    let qa = quat(self.value(*a).view());
                    let qb = quat(self.value(*b).view());
                    let gv = quat(g.view());
                    acc(&mut grads, *a, row(&apply4_t(&right_matrix(qb), gv)));
                    acc(&mut grads, *b, row(&apply4_t(&left_matrix(qa), gv)));
                }
                Op::QuatConj(q) => {
                    let [w, x, y, z] = quat(g.view());
                    acc(&mut grads, *q, row(&[w, -x, -y, -z]));
                }
                Op::QuatToMat(q) => {
                    let partials = rotation_partials(quat(self.value(*q).view()));
                    let gq: Vec<f64> = partials
                        .iter()
                        .map(|p| {
                            (0..3)
                                .flat_map(|r| (0..3).map(move |c| (r, c)))
                                .map(|(r, c)| p[r][c] * g[[r, c]])
                                .sum()
                        })
                        .collect();
                    acc(&mut grads, *q, row(&gq));
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
            }
            grads[i] = Some(g);
        }
        Gradients { grads }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::UnitQuaternion;
    use ndarray::array;

    /// Central differences of `f` at every entry of `x` against the tape.
    fn check(x0: Array2<f64>, build: impl Fn(&mut Graph, Var) -> Var) {
        let mut g = Graph::new();
        let x = g.constant(x0.clone());
        let out = build(&mut g, x);
        let grads = g.backward(out);
        let analytic = grads.get(x).cloned().unwrap_or_else(|| Array2::zeros(x0.raw_dim()));
        let decisions = g.decisions().clone();
        let h = 1e-6;
        for idx in 0..x0.len() {
            let eval = |delta: f64| {
                let mut xv = x0.clone();
                let cell = xv.iter_mut().nth(idx).unwrap();
                *cell += delta;
                let mut g = Graph::replay(&decisions);
                let x = g.constant(xv);
                let out = build(&mut g, x);
                g.scalar(out)
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let a = *analytic.iter().nth(idx).unwrap();
            assert!(
                (a - numeric).abs() <= 1e-6 + 1e-5 * numeric.abs().max(a.abs()),
                "entry {idx}: analytic {a} numeric {numeric}"
            );
        }
    }

    fn sample() -> Array2<f64> {
        array![[0.3, -0.2, 0.5], [0.1, 0.7, -0.4], [-0.6, 0.2, 0.9], [0.05, -0.3, 0.2]]
    }

    #[test]
    fn dense_ops() {
        let w = array![[0.2, -0.1], [0.4, 0.3], [-0.5, 0.6]];
        check(sample(), |g, x| {
            let w = g.constant(w.clone());
            let b = g.constant_row(&[0.1, -0.2]);
            let h = g.matmul(x, w);
            let h = g.add_bias(h, b);
            let h = g.relu(h);
            let m = g.max_rows(h);
            let sq = g.square(m);
            g.sum(sq)
        });
        check(sample(), |g, x| {
            let t = g.transpose(x);
            let p = g.matmul(x, t);
            let r = g.reshape(p, 2, 8);
            let rep = g.repeat_rows(r, 3);
            let n = g.row_norms(rep);
            g.mean(n)
        });
        check(sample(), |g, x| {
            let gathered = g.gather_rows(x, vec![2, 0, 2]);
            let cat = g.concat_rows(&[x, gathered]);
            let cols = g.concat_cols(&[cat, cat]);
            let s = g.scale(cols, -0.7);
            let sq = g.square(s);
            g.sum(sq)
        });
    }

    #[test]
    fn quaternion_ops() {
        let q0 = array![[0.9, 0.2, -0.3, 0.4]];
        check(q0.clone(), |g, q| {
            let q = g.quat_normalize(q);
            let other = g.constant_row(&[0.5, 0.5, -0.5, 0.5]);
            let prod = g.quat_mul(q, other);
            let prod2 = g.quat_mul(other, prod);
            let c = g.quat_conj(prod2);
            let d = g.dist_q(c, other);
            let pts = g.constant(sample());
            let rotated = g.rotate(pts, q);
            let back = g.rotate_inverse(rotated, prod);
            let sq = g.square(back);
            let s = g.sum(sq);
            g.add(s, d)
        });
    }

    #[test]
    fn rotation_matches_geometry() {
        let q = UnitQuaternion::normalize([0.9, 0.2, -0.3, 0.4]).unwrap();
        let mut g = Graph::new();
        let qv = g.constant_row(&q.to_array());
        let m = g.quat_to_mat(qv);
        let expected = q.to_matrix();
        for r in 0..3 {
            for c in 0..3 {
                assert!((g.value(m)[[r, c]] - expected[(r, c)]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn emd_and_fps_with_frozen_decisions() {
        let target = array![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        check(sample(), |g, x| {
            let sub = g.fps(x, 3);
            let t = g.constant(target.clone());
            g.emd(sub, t)
        });
    }

    #[test]
    fn replay_reuses_choices() {
        let mut g = Graph::new();
        let x = g.constant(sample());
        let sub = g.fps(x, 2);
        let first = g.value(sub).clone();
        let d = g.decisions().clone();
        assert_eq!(d.len(), 1);

        let mut replayed = Graph::replay(&d);
        let moved = sample().mapv(|v| v * 2.0);
        let x = replayed.constant(moved.clone());
        let sub = replayed.fps(x, 2);
        assert_eq!(replayed.value(sub), &(first * 2.0));
    }
}
