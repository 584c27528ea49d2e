//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters live in a
//! [`ParamStore`] that outlives the tape; calling [`Tape::backward`] on a scalar
//! (1 x 1) node returns per-parameter [`Gradients`]. Every value is a 2-D array,
//! row vectors are `1 x k`, scalars are `1 x 1`.

use std::collections::HashMap;

use ndarray::{s, Array1, Array2, Axis, Zip};
use rand::Rng;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named, ordered collection of trainable matrices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Panics on a duplicate name, which is always a
    /// programming error in model construction.
    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        ParamId(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Array2<f64>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
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

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }
}

/// Per-parameter gradients produced by [`Tape::backward`]. Parameters that did
/// not take part in the forward pass have no entry.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamStore) -> Self {
        Self {
            grads: vec![None; params.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Array2<f64>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Adds `other` scaled by `weight` into `self`.
    pub fn accumulate(&mut self, other: &Gradients, weight: f64) {
        if self.grads.len() < other.grads.len() {
            self.grads.resize(other.grads.len(), None);
        }
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            if let Some(g) = theirs {
                match mine {
                    Some(acc) => acc.scaled_add(weight, g),
                    None => *mine = Some(g * weight),
                }
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Array2<f64>)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(|(_, g)| g.iter().all(|x| x.is_finite()))
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Gather { table: Var, ids: Vec<usize> },
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, scale: f64 },
    MaskMul { x: Var, mask: Array2<f64> },
    Gelu(Var),
    Sigmoid(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<f64>,
        inv_std: Array1<f64>,
    },
    SoftmaxRows(Var),
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    WindowAverage { parts: Vec<(Var, usize)>, inv_counts: Vec<f64> },
    CrossEntropy { probs: Array2<f64>, targets: Vec<usize>, logits: Var },
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
}

const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Records one forward pass.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Copies a 1 x 1 node out as a scalar.
    pub fn scalar(&self, v: Var) -> f64 {
        let value = self.value(v);
        debug_assert_eq!(value.dim(), (1, 1));
        value[[0, 0]]
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

    /// A constant input; receives no gradient.
    pub fn input(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Input)
    }

    /// The node for a parameter. Repeated calls return the same node so that
    /// gradients from every use accumulate in one place.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let v = self.push(self.params.get(id).clone(), Op::Param(id));
        self.param_vars[id.0] = Some(v);
        v
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut out = Array2::zeros((ids.len(), t.ncols()));
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).assign(&t.row(id));
        }
        self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(&self.value(b).t());
        self.push(out, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b))
    }

    /// Adds the `1 x k` row `row` to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        debug_assert_eq!(self.value(row).nrows(), 1);
        let out = self.value(x) + self.value(row);
        self.push(out, Op::AddRow(x, row))
    }

    /// Elementwise product of equally shaped nodes.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) * self.value(b);
        self.push(out, Op::Mul(a, b))
    }

    /// `scale · x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(x).mapv(|v| scale * v + shift);
        self.push(out, Op::Affine { x, scale })
    }

    /// Inverted dropout. A rate of zero returns `x` untouched.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Var {
        if rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - rate;
        let mask = self
            .value(x)
            .mapv(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
        let out = self.value(x) * &mask;
        self.push(out, Op::MaskMul { x, mask })
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self
            .value(x)
            .mapv(|v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v * v * v)).tanh()));
        self.push(out, Op::Gelu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    /// Row-wise layer normalisation with `1 x k` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.dim();
        let mut xhat = Array2::zeros((rows, cols));
        let mut inv_std = Array1::zeros(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.sum() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            Zip::from(xhat.row_mut(r))
                .and(row)
                .for_each(|h, &v| *h = (v - mean) * is);
        }
        let out = &xhat * self.value(gamma) + self.value(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let out = softmax_rows(self.value(x));
        self.push(out, Op::SoftmaxRows(x))
    }

    /// Rows `start .. start + len`.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let out = self.value(x).slice(s![start..start + len, ..]).to_owned();
        self.push(out, Op::SliceRows { x, start })
    }

    /// Columns `start .. start + len`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let out = self.value(x).slice(s![.., start..start + len]).to_owned();
        self.push(out, Op::SliceCols { x, start })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column mismatch");
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row mismatch");
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    /// Overlap-averages window encodings into one `total_rows x c` matrix.
    ///
    /// Each part is `(window_encoding, first_row)`; row `j` of the result is the
    /// mean of every part row that lands on `j`. Parts are summed in the order
    /// given. Every output row must be covered at least once.
    pub fn window_average(&mut self, parts: &[(Var, usize)], total_rows: usize) -> Var {
        let cols = self.value(parts[0].0).ncols();
        let mut sum = Array2::<f64>::zeros((total_rows, cols));
        let mut counts = vec![0usize; total_rows];
        for &(p, offset) in parts {
            let v = self.value(p);
            let rows = v.nrows();
            sum.slice_mut(s![offset..offset + rows, ..]).scaled_add(1.0, v);
            for c in &mut counts[offset..offset + rows] {
                *c += 1;
            }
        }
        assert!(
            counts.iter().all(|&c| c > 0),
            "window_average: uncovered output row"
        );
        let inv_counts: Vec<f64> = counts.iter().map(|&c| 1.0 / c as f64).collect();
        for (mut row, &ic) in sum.rows_mut().into_iter().zip(&inv_counts) {
            row *= ic;
        }
        self.push(
            sum,
            Op::WindowAverage {
                parts: parts.to_vec(),
                inv_counts,
            },
        )
    }

    /// Mean over rows of the softmax cross-entropy between row `r` of `logits`
    /// and class `targets[r]`. Returns a `1 x 1` node.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let probs = softmax_rows(self.value(logits));
        assert_eq!(probs.nrows(), targets.len(), "cross_entropy: target count");
        let total: f64 = targets
            .iter()
            .enumerate()
            .map(|(r, &t)| -log_softmax_at(self.value(logits).row(r), t))
            .sum();
        let loss = total / targets.len() as f64;
        self.push(
            Array2::from_elem((1, 1), loss),
            Op::CrossEntropy {
                probs,
                targets: targets.to_vec(),
                logits,
            },
        )
    }

    /// Back-propagates from the scalar node `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward: loss must be 1 x 1");
        let mut grads: Vec<Option<Array2<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Array2::ones((1, 1)));
        let mut out = Gradients::zeros_like(self.params);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let mut send = |v: Var, d: Array2<f64>| match &mut grads[v.0] {
                Some(acc) => *acc += &d,
                slot @ None => *slot = Some(d),
            };
            match &node.op {
                Op::Input => {}
                Op::Param(id) => out.grads[id.0] = Some(g),
                Op::Gather { table, ids } => {
                    let mut d = Array2::zeros(self.value(*table).dim());
                    for (r, &id) in ids.iter().enumerate() {
                        let mut row = d.row_mut(id);
                        row += &g.row(r);
                    }
                    send(*table, d);
                }
                Op::MatMul(a, b) => {
                    let da = g.dot(&self.value(*b).t());
                    let db = self.value(*a).t().dot(&g);
                    send(*a, da);
                    send(*b, db);
                }
                Op::MatMulT(a, b) => {
                    let da = g.dot(self.value(*b));
                    let db = g.t().dot(self.value(*a));
                    send(*a, da);
                    send(*b, db);
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::AddRow(x, row) => {
                    let drow = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    send(*row, drow);
                    send(*x, g);
                }
                Op::Mul(a, b) => {
                    let da = &g * self.value(*b);
                    let db = &g * self.value(*a);
                    send(*a, da);
                    send(*b, db);
                }
                Op::Affine { x, scale } => send(*x, g * *scale),
                Op::MaskMul { x, mask } => send(*x, g * mask),
                Op::Gelu(x) => {
                    let mut d = g;
                    Zip::from(&mut d).and(self.value(*x)).for_each(|d, &v| {
                        let inner = GELU_C * (v + GELU_A * v * v * v);
                        let t = inner.tanh();
                        let dinner = GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                        *d *= 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner;
                    });
                    send(*x, d);
                }
                Op::Sigmoid(x) => {
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(&node.value)
                        .for_each(|d, &y| *d *= y * (1.0 - y));
                    send(*x, d);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let dbeta = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dgamma = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dxhat = &g * self.value(*gamma);
                    let cols = dxhat.ncols() as f64;
                    let mut dx = Array2::zeros(dxhat.dim());
                    for r in 0..dxhat.nrows() {
                        let dh = dxhat.row(r);
                        let xh = xhat.row(r);
                        let sum_dh = dh.sum();
                        let sum_dh_xh = dh.dot(&xh);
                        let is = inv_std[r];
                        Zip::from(dx.row_mut(r)).and(dh).and(xh).for_each(
                            |o, &dh, &xh| {
                                *o = is / cols * (cols * dh - sum_dh - xh * sum_dh_xh);
                            },
                        );
                    }
                    send(*x, dx);
                    send(*gamma, dgamma);
                    send(*beta, dbeta);
                }
                Op::SoftmaxRows(x) => {
                    let y = &node.value;
                    let mut d = &g * y;
                    for (mut drow, yrow) in d.rows_mut().into_iter().zip(y.rows()) {
                        let dot = drow.sum();
                        Zip::from(&mut drow).and(yrow).for_each(|d, &y| *d -= y * dot);
                    }
                    send(*x, d);
                }
                Op::SliceRows { x, start } => {
                    let mut d = Array2::zeros(self.value(*x).dim());
                    d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    send(*x, d);
                }
                Op::SliceCols { x, start } => {
                    let mut d = Array2::zeros(self.value(*x).dim());
                    d.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    send(*x, d);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let rows = self.value(p).nrows();
                        send(p, g.slice(s![offset..offset + rows, ..]).to_owned());
                        offset += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let cols = self.value(p).ncols();
                        send(p, g.slice(s![.., offset..offset + cols]).to_owned());
                        offset += cols;
                    }
                }
                Op::WindowAverage { parts, inv_counts } => {
                    let mut scaled = g;
                    for (mut row, &ic) in scaled.rows_mut().into_iter().zip(inv_counts) {
                        row *= ic;
                    }
                    for &(p, offset) in parts {
                        let rows = self.value(p).nrows();
                        send(p, scaled.slice(s![offset..offset + rows, ..]).to_owned());
                    }
                }
                Op::CrossEntropy {
                    probs,
                    targets,
                    logits,
                } => {
                    let scale = g[[0, 0]] / targets.len() as f64;
                    let mut d = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        d[[r, t]] -= 1.0;
                    }
                    d *= scale;
                    send(*logits, d);
                }
            }
        }
        out
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

fn log_softmax_at(row: ndarray::ArrayView1<f64>, target: usize) -> f64 {
    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    row[target] - lse
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Central-difference check of every parameter coordinate.
    fn check<F>(params: &ParamStore, f: F)
    where
        F: Fn(&mut Tape) -> Var,
    {
        let mut tape = Tape::new(params);
        let loss = f(&mut tape);
        let grads = tape.backward(loss);
        let eps = 1e-6;
        for id in params.ids() {
            let analytic = grads
                .get(id)
                .cloned()
                .unwrap_or_else(|| Array2::zeros(params.get(id).dim()));
            for (idx, &a) in analytic.indexed_iter() {
                let mut plus = params.clone();
                plus.get_mut(id)[idx] += eps;
                let mut minus = params.clone();
                minus.get_mut(id)[idx] -= eps;
                let lp = {
                    let mut t = Tape::new(&plus);
                    let l = f(&mut t);
                    t.scalar(l)
                };
                let lm = {
                    let mut t = Tape::new(&minus);
                    let l = f(&mut t);
                    t.scalar(l)
                };
                let numeric = (lp - lm) / (2.0 * eps);
                let denom = a.abs().max(numeric.abs()).max(1e-8);
                assert!(
                    (a - numeric).abs() / denom < 1e-5 || (a - numeric).abs() < 1e-9,
                    "{} {:?}: analytic {a} numeric {numeric}",
                    params.name(id),
                    idx
                );
            }
        }
    }

    fn store(entries: &[(&str, Array2<f64>)]) -> ParamStore {
        let mut p = ParamStore::new();
        for (n, v) in entries {
            p.add(*n, v.clone());
        }
        p
    }

    #[test]
    fn matmul_softmax_cross_entropy_gradients() {
        let p = store(&[
            ("a", array![[0.3, -0.2, 0.5], [0.1, 0.4, -0.7]]),
            ("b", array![[0.2, -0.1], [0.6, 0.3], [-0.4, 0.9]]),
        ]);
        check(&p, |t| {
            let a = t.param(ParamId(0));
            let b = t.param(ParamId(1));
            let ab = t.matmul(a, b);
            let abt = t.matmul_t(ab, ab);
            let sm = t.softmax_rows(abt);
            let logits = t.add(sm, ab);
            t.cross_entropy(logits, &[1, 0])
        });
    }

    #[test]
    fn layer_norm_gelu_gradients() {
        let p = store(&[
            ("x", array![[0.3, -1.2, 0.5, 2.0], [0.1, 0.4, -0.7, 0.0]]),
            ("g", array![[1.1, 0.9, -0.5, 1.3]]),
            ("b", array![[0.1, 0.0, -0.2, 0.3]]),
        ]);
        check(&p, |t| {
            let x = t.param(ParamId(0));
            let g = t.param(ParamId(1));
            let b = t.param(ParamId(2));
            let y = t.layer_norm(x, g, b);
            let y = t.gelu(y);
            let y = t.add_row(y, b);
            t.cross_entropy(y, &[3, 2])
        });
    }

    #[test]
    fn slicing_concat_gather_average_gradients() {
        let p = store(&[
            ("table", array![[0.3, -1.2], [0.5, 2.0], [0.1, 0.4], [-0.7, 0.2]]),
            ("s", array![[0.7]]),
        ]);
        check(&p, |t| {
            let table = t.param(ParamId(0));
            let rows = t.gather(table, &[0, 2, 2, 3, 1]);
            let w0 = t.slice_rows(rows, 0, 3);
            let w1 = t.slice_rows(rows, 2, 3);
            let avg = t.window_average(&[(w0, 0), (w1, 1)], 4);
            let c0 = t.slice_cols(avg, 0, 1);
            let c1 = t.slice_cols(avg, 1, 1);
            let swapped = t.concat_cols(&[c1, c0]);
            let both = t.concat_rows(&[swapped, avg]);
            let sc = t.param(ParamId(1));
            let sig = t.sigmoid(sc);
            let ones = t.input(Array2::ones((8, 1)));
            let row = t_row(t, sig);
            let scale = t.matmul(ones, row);
            let prod = t.mul(both, scale);
            let prod = t.affine(prod, 2.0, 0.5);
            t.cross_entropy(prod, &[0, 1, 1, 0, 0, 1, 1, 0])
        });

        // Broadcast the 1x1 sigmoid into a 1x2 row.
        fn t_row(t: &mut Tape, v: Var) -> Var {
            t.concat_cols(&[v, v])
        }
    }

    #[test]
    fn window_average_means_overlaps() {
        let p = ParamStore::new();
        let mut t = Tape::new(&p);
        let a = t.input(array![[1.0], [2.0], [3.0]]);
        let b = t.input(array![[5.0], [7.0]]);
        let avg = t.window_average(&[(a, 0), (b, 2)], 4);
        assert_eq!(t.value(avg), &array![[1.0], [2.0], [4.0], [7.0]]);
    }

    #[test]
    fn cross_entropy_uniform_is_log_k() {
        let p = ParamStore::new();
        let mut t = Tape::new(&p);
        let logits = t.input(Array2::zeros((3, 4)));
        let ce = t.cross_entropy(logits, &[0, 1, 3]);
        assert!((t.scalar(ce) - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn softmax_is_shift_invariant_and_stable() {
        let x = array![[1000.0, 1001.0, 999.0]];
        let y = softmax_rows(&x);
        let z = softmax_rows(&array![[0.0, 1.0, -1.0]]);
        for (a, b) in y.iter().zip(z.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
