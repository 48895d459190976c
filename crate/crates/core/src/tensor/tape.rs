use super::{Activation, Tensor};
use crate::error::{Error, Result};
use std::rc::Rc;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    SumAxis { input: Var, axis: usize },
    SumAll(Var),
    Reshape(Var),
    Transpose(Var),
    Unary(Var, Activation),
    Softmax { input: Var, axis: usize },
    MaskedSoftmax { input: Var },
    PairAggregate { p: Var, q: Var, w: Var, act: Activation },
    PairScore { p: Var, q: Var, v: Var, act: Activation },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(a, _)
            | Op::SumAll(a)
            | Op::Reshape(a)
            | Op::Transpose(a)
            | Op::Unary(a, _) => vec![*a],
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::Slice { input, .. }
            | Op::SumAxis { input, .. }
            | Op::Softmax { input, .. }
            | Op::MaskedSoftmax { input } => vec![*input],
            Op::PairAggregate { p, q, w, .. } => vec![*p, *q, *w],
            Op::PairScore { p, q, v, .. } => vec![*p, *q, *v],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    // Only used by MaskedSoftmax; kept out of `Op` so the enum stays Clone-cheap.
    mask: Option<Rc<[bool]>>,
}

/// Records tensor operations in execution order so that gradients can be
/// propagated back from a scalar output.
///
/// Nodes are appended in topological order by construction; `backward`
/// walks them once in reverse.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar output with respect to every node that requires one.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<Tensor> {
        self.grads[var.0]
            .as_ref()
            .map(|g| Tensor::new(self.shapes[var.0].clone(), g.clone()).expect("gradient shape"))
    }

    /// Gradient buffer, or zeros when the output does not depend on `var`.
    pub fn get_or_zeros(&self, var: Var) -> Tensor {
        self.get(var)
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite value produced by {:?}",
                std::mem::discriminant(&op)
            )));
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            mask: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            mask: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.value(a).dims2()?;
        let (k2, m) = self.value(b).dims2()?;
        if k != k2 {
            return Err(shape_err("matmul", self.shape(a), self.shape(b)));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), n, k, m);
        self.push(Tensor::matrix(n, m, out)?, Op::MatMul(a, b))
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let x = self.value(a);
        let y = self.value(b);
        let data = x.data().iter().zip(y.data()).map(|(p, q)| f(*p, *q)).collect();
        let t = Tensor::new(x.shape().to_vec(), data)?;
        self.push(t, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        self.zip_with(a, b, |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        self.zip_with(a, b, |p, q| p - q, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        self.zip_with(a, b, |p, q| p * q, Op::Mul(a, b))
    }

    /// Adds a length-`m` vector to every row of an `n x m` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (n, m) = self.value(a).dims2()?;
        if self.shape(bias) != [m] {
            return Err(shape_err("add_row", self.shape(a), self.shape(bias)));
        }
        let b = self.value(bias).data();
        let mut out = self.value(a).data().to_vec();
        for r in 0..n {
            for (o, bv) in out[r * m..(r + 1) * m].iter_mut().zip(b) {
                *o += bv;
            }
        }
        self.push(Tensor::matrix(n, m, out)?, Op::AddRow(a, bias))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let x = self.value(a);
        let t = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v * c).collect())?;
        self.push(t, Op::Scale(a, c))
    }

    /// Concatenates 2-D tensors along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        if inputs.is_empty() || axis > 1 {
            return Err(Error::Shape("concat needs inputs and axis 0 or 1".into()));
        }
        let dims: Vec<(usize, usize)> = inputs
            .iter()
            .map(|v| self.value(*v).dims2())
            .collect::<Result<_>>()?;
        let (r0, c0) = dims[0];
        for (i, &(r, c)) in dims.iter().enumerate() {
            if (axis == 0 && c != c0) || (axis == 1 && r != r0) {
                return Err(shape_err("concat", self.shape(inputs[0]), self.shape(inputs[i])));
            }
        }
        let t = if axis == 0 {
            let rows: usize = dims.iter().map(|d| d.0).sum();
            let mut out = Vec::with_capacity(rows * c0);
            for v in inputs {
                out.extend_from_slice(self.value(*v).data());
            }
            Tensor::matrix(rows, c0, out)?
        } else {
            let cols: usize = dims.iter().map(|d| d.1).sum();
            let mut out = Vec::with_capacity(r0 * cols);
            for r in 0..r0 {
                for v in inputs {
                    out.extend_from_slice(self.value(*v).row(r));
                }
            }
            Tensor::matrix(r0, cols, out)?
        };
        self.push(
            t,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        )
    }

    /// Contiguous `len`-wide window of a 2-D tensor along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let (n, m) = self.value(a).dims2()?;
        let extent = if axis == 0 { n } else { m };
        if axis > 1 || len == 0 || start + len > extent {
            return Err(Error::Shape(format!(
                "slice [{start}, {}) on axis {axis} of shape {:?}",
                start + len,
                self.shape(a)
            )));
        }
        let x = self.value(a);
        let t = if axis == 0 {
            Tensor::matrix(len, m, x.data()[start * m..(start + len) * m].to_vec())?
        } else {
            let mut out = Vec::with_capacity(n * len);
            for r in 0..n {
                out.extend_from_slice(&x.row(r)[start..start + len]);
            }
            Tensor::matrix(n, len, out)?
        };
        self.push(t, Op::Slice { input: a, axis, start })
    }

    /// Sums a 2-D tensor over `axis`, dropping that axis.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (n, m) = self.value(a).dims2()?;
        let x = self.value(a);
        let t = match axis {
            0 => {
                let mut out = vec![0.0; m];
                for r in 0..n {
                    for (o, v) in out.iter_mut().zip(x.row(r)) {
                        *o += v;
                    }
                }
                Tensor::vector(out)?
            }
            1 => Tensor::vector((0..n).map(|r| x.row(r).iter().sum()).collect())?,
            _ => return Err(Error::Shape(format!("sum_axis: bad axis {axis}"))),
        };
        self.push(t, Op::SumAxis { input: a, axis })
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).reshape(shape)?;
        self.push(t, Op::Reshape(a))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (n, m) = self.value(a).dims2()?;
        let x = self.value(a).data();
        let mut out = vec![0.0; n * m];
        for r in 0..n {
            for c in 0..m {
                out[c * n + r] = x[r * m + c];
            }
        }
        self.push(Tensor::matrix(m, n, out)?, Op::Transpose(a))
    }

    pub fn unary(&mut self, a: Var, act: Activation) -> Result<Var> {
        let x = self.value(a);
        let t = Tensor::new(
            x.shape().to_vec(),
            x.data().iter().map(|v| act.apply(*v)).collect(),
        )?;
        self.push(t, Op::Unary(a, act))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Activation::Relu)
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Activation::Gelu)
    }

    /// LeakyReLU with negative slope 0.2.
    pub fn leaky_relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Activation::LeakyRelu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Activation::Tanh)
    }

    /// Softmax of a 2-D tensor normalized along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (n, m) = self.value(a).dims2()?;
        if axis > 1 {
            return Err(Error::Shape(format!("softmax: bad axis {axis}")));
        }
        let x = self.value(a).data();
        let mut out = vec![0.0; n * m];
        let (outer, inner, stride_o, stride_i) = if axis == 1 { (n, m, m, 1) } else { (m, n, 1, m) };
        for o in 0..outer {
            let idx = |k: usize| o * stride_o + k * stride_i;
            let mx = (0..inner).map(|k| x[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for k in 0..inner {
                let e = (x[idx(k)] - mx).exp();
                out[idx(k)] = e;
                total += e;
            }
            for k in 0..inner {
                out[idx(k)] /= total;
            }
        }
        self.push(Tensor::matrix(n, m, out)?, Op::Softmax { input: a, axis })
    }

    /// Row-wise softmax restricted to entries where `mask` is true; masked
    /// entries are exactly zero. Every row must keep at least one entry.
    pub fn masked_softmax_rows(&mut self, a: Var, mask: Rc<[bool]>) -> Result<Var> {
        let (n, m) = self.value(a).dims2()?;
        if mask.len() != n * m {
            return Err(Error::Shape(format!(
                "mask of length {} for shape {:?}",
                mask.len(),
                self.shape(a)
            )));
        }
        let x = self.value(a).data();
        let mut out = vec![0.0; n * m];
        for r in 0..n {
            let row = r * m..(r + 1) * m;
            let mx = row
                .clone()
                .filter(|&i| mask[i])
                .map(|i| x[i])
                .fold(f64::NEG_INFINITY, f64::max);
            if mx == f64::NEG_INFINITY {
                return Err(Error::Shape(format!("masked softmax: row {r} fully masked")));
            }
            let mut total = 0.0;
            for i in row.clone().filter(|&i| mask[i]) {
                out[i] = (x[i] - mx).exp();
                total += out[i];
            }
            for i in row {
                out[i] /= total;
            }
        }
        let v = self.push(Tensor::matrix(n, m, out)?, Op::MaskedSoftmax { input: a })?;
        self.nodes[v.0].mask = Some(mask);
        Ok(v)
    }

    /// Weighted pairwise aggregation
    /// `out[i, k] = sum_j w[i, j] * act(p[i, k] + q[j, k])`.
    ///
    /// This is the first layer of a feed-forward block applied to every
    /// concatenated pair `[a_i || b_j]` (its input projection split into
    /// `p = a W_a + bias` and `q = b W_b`), contracted against the pair
    /// weights before the second, linear, layer.
    pub fn pair_aggregate(&mut self, p: Var, q: Var, w: Var, act: Activation) -> Result<Var> {
        let (n, h) = self.value(p).dims2()?;
        let (m, h2) = self.value(q).dims2()?;
        let (wn, wm) = self.value(w).dims2()?;
        if h != h2 || wn != n || wm != m {
            return Err(Error::Shape(format!(
                "pair_aggregate: p {:?}, q {:?}, w {:?}",
                self.shape(p),
                self.shape(q),
                self.shape(w)
            )));
        }
        let (pd, qd, wd) = (self.value(p).data(), self.value(q).data(), self.value(w).data());
        let mut out = vec![0.0; n * h];
        for i in 0..n {
            let pi = &pd[i * h..(i + 1) * h];
            let oi = &mut out[i * h..(i + 1) * h];
            for j in 0..m {
                let wij = wd[i * m + j];
                let qj = &qd[j * h..(j + 1) * h];
                for k in 0..h {
                    oi[k] += wij * act.apply(pi[k] + qj[k]);
                }
            }
        }
        self.push(Tensor::matrix(n, h, out)?, Op::PairAggregate { p, q, w, act })
    }

    /// Pairwise score `out[i, j] = sum_k v[k] * act(p[i, k] + q[j, k])`.
    pub fn pair_score(&mut self, p: Var, q: Var, v: Var, act: Activation) -> Result<Var> {
        let (n, h) = self.value(p).dims2()?;
        let (m, h2) = self.value(q).dims2()?;
        if h != h2 || self.shape(v) != [h] {
            return Err(Error::Shape(format!(
                "pair_score: p {:?}, q {:?}, v {:?}",
                self.shape(p),
                self.shape(q),
                self.shape(v)
            )));
        }
        let (pd, qd, vd) = (self.value(p).data(), self.value(q).data(), self.value(v).data());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let pi = &pd[i * h..(i + 1) * h];
            for j in 0..m {
                let qj = &qd[j * h..(j + 1) * h];
                out[i * m + j] = (0..h).map(|k| vd[k] * act.apply(pi[k] + qj[k])).sum();
            }
        }
        self.push(Tensor::matrix(n, m, out)?, Op::PairScore { p, q, v, act })
    }

    /// Reverse pass from a one-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out_len = self.value(output).len();
        if out_len != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                self.shape(output)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![1.0]);

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let shapes = self.nodes[..=output.0]
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        // Only leaves and intermediate nodes that require grad keep entries.
        for (i, g) in grads.iter_mut().enumerate() {
            if !self.nodes[i].requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
        f(slot);
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (n, k) = self.value(*a).dims2().unwrap();
                let m = self.value(*b).shape()[1];
                let ad = self.value(*a).data();
                let bd = self.value(*b).data();
                self.accumulate(grads, *a, |ga| {
                    // dA = G B^T
                    for i in 0..n {
                        for kk in 0..k {
                            let brow = &bd[kk * m..(kk + 1) * m];
                            let grow = &g[i * m..(i + 1) * m];
                            ga[i * k + kk] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    // dB = A^T G
                    for i in 0..n {
                        for kk in 0..k {
                            let aik = ad[i * k + kk];
                            if aik == 0.0 {
                                continue;
                            }
                            let grow = &g[i * m..(i + 1) * m];
                            for (o, gv) in gb[kk * m..(kk + 1) * m].iter_mut().zip(grow) {
                                *o += aik * gv;
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |ga| add_into(ga, g));
                self.accumulate(grads, *b, |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |ga| add_into(ga, g));
                self.accumulate(grads, *b, |gb| {
                    for (o, v) in gb.iter_mut().zip(g) {
                        *o -= v;
                    }
                });
            }
            Op::Mul(a, b) => {
                let ad = self.value(*a).data();
                let bd = self.value(*b).data();
                self.accumulate(grads, *a, |ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] * bd[i];
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for i in 0..g.len() {
                        gb[i] += g[i] * ad[i];
                    }
                });
            }
            Op::AddRow(a, bias) => {
                self.accumulate(grads, *a, |ga| add_into(ga, g));
                let m = self.value(*bias).len();
                self.accumulate(grads, *bias, |gb| {
                    for row in g.chunks(m) {
                        add_into(gb, row);
                    }
                });
            }
            Op::Scale(a, c) => {
                self.accumulate(grads, *a, |ga| {
                    for (o, v) in ga.iter_mut().zip(g) {
                        *o += c * v;
                    }
                });
            }
            Op::Concat { inputs, axis } => {
                let cols_out = node.value.shape()[1];
                let mut offset = 0;
                for v in inputs {
                    let (r, c) = self.value(*v).dims2().unwrap();
                    if *axis == 0 {
                        let start = offset * cols_out;
                        self.accumulate(grads, *v, |gv| add_into(gv, &g[start..start + r * c]));
                        offset += r;
                    } else {
                        let off = offset;
                        self.accumulate(grads, *v, |gv| {
                            for row in 0..r {
                                let src = &g[row * cols_out + off..row * cols_out + off + c];
                                add_into(&mut gv[row * c..(row + 1) * c], src);
                            }
                        });
                        offset += c;
                    }
                }
            }
            Op::Slice { input, axis, start } => {
                let (_, m) = self.value(*input).dims2().unwrap();
                let (rows, len) = node.value.dims2().unwrap();
                self.accumulate(grads, *input, |gi| {
                    if *axis == 0 {
                        add_into(&mut gi[start * m..(start + rows) * m], g);
                    } else {
                        for r in 0..rows {
                            add_into(&mut gi[r * m + start..r * m + start + len], &g[r * len..(r + 1) * len]);
                        }
                    }
                });
            }
            Op::SumAxis { input, axis } => {
                let (n, m) = self.value(*input).dims2().unwrap();
                self.accumulate(grads, *input, |gi| {
                    for r in 0..n {
                        for c in 0..m {
                            gi[r * m + c] += if *axis == 0 { g[c] } else { g[r] };
                        }
                    }
                });
            }
            Op::SumAll(a) => {
                self.accumulate(grads, *a, |ga| {
                    for o in ga.iter_mut() {
                        *o += g[0];
                    }
                });
            }
            Op::Reshape(a) => self.accumulate(grads, *a, |ga| add_into(ga, g)),
            Op::Transpose(a) => {
                let (n, m) = self.value(*a).dims2().unwrap();
                self.accumulate(grads, *a, |ga| {
                    for r in 0..n {
                        for c in 0..m {
                            ga[r * m + c] += g[c * n + r];
                        }
                    }
                });
            }
            Op::Unary(a, act) => {
                let x = self.value(*a).data();
                self.accumulate(grads, *a, |ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] * act.derivative(x[i]);
                    }
                });
            }
            Op::Softmax { input, axis } => {
                let (n, m) = node.value.dims2().unwrap();
                let y = node.value.data();
                let (outer, inner, so, si) = if *axis == 1 { (n, m, m, 1) } else { (m, n, 1, m) };
                self.accumulate(grads, *input, |gi| {
                    for o in 0..outer {
                        let idx = |k: usize| o * so + k * si;
                        let dot: f64 = (0..inner).map(|k| g[idx(k)] * y[idx(k)]).sum();
                        for k in 0..inner {
                            gi[idx(k)] += y[idx(k)] * (g[idx(k)] - dot);
                        }
                    }
                });
            }
            Op::MaskedSoftmax { input } => {
                let (n, m) = node.value.dims2().unwrap();
                let y = node.value.data();
                self.accumulate(grads, *input, |gi| {
                    for r in 0..n {
                        let row = r * m..(r + 1) * m;
                        let dot: f64 = row.clone().map(|i| g[i] * y[i]).sum();
                        for i in row {
                            gi[i] += y[i] * (g[i] - dot);
                        }
                    }
                });
            }
            Op::PairAggregate { p, q, w, act } => {
                self.pair_aggregate_backward(*p, *q, *w, *act, g, grads);
            }
            Op::PairScore { p, q, v, act } => {
                self.pair_score_backward(*p, *q, *v, *act, g, grads);
            }
        }
    }

    fn pair_aggregate_backward(
        &self,
        p: Var,
        q: Var,
        w: Var,
        act: Activation,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (n, h) = self.value(p).dims2().unwrap();
        let m = self.value(q).shape()[0];
        let (pd, qd, wd) = (self.value(p).data(), self.value(q).data(), self.value(w).data());
        let need_p = self.nodes[p.0].requires_grad;
        let need_q = self.nodes[q.0].requires_grad;
        let need_w = self.nodes[w.0].requires_grad;
        let mut gp = vec![0.0; n * h];
        let mut gq = vec![0.0; m * h];
        let mut gw = vec![0.0; if need_w { n * m } else { 0 }];
        for i in 0..n {
            let pi = &pd[i * h..(i + 1) * h];
            let gi = &g[i * h..(i + 1) * h];
            let gpi = &mut gp[i * h..(i + 1) * h];
            for j in 0..m {
                let wij = wd[i * m + j];
                if wij == 0.0 && !need_w {
                    continue;
                }
                let qj = &qd[j * h..(j + 1) * h];
                let gqj = &mut gq[j * h..(j + 1) * h];
                let mut acc_w = 0.0;
                for k in 0..h {
                    let (s, ds) = act.apply_with_derivative(pi[k] + qj[k]);
                    acc_w += gi[k] * s;
                    let back = wij * ds * gi[k];
                    gpi[k] += back;
                    gqj[k] += back;
                }
                if need_w {
                    gw[i * m + j] = acc_w;
                }
            }
        }
        if need_p {
            self.accumulate(grads, p, |t| add_into(t, &gp));
        }
        if need_q {
            self.accumulate(grads, q, |t| add_into(t, &gq));
        }
        if need_w {
            self.accumulate(grads, w, |t| add_into(t, &gw));
        }
    }

    fn pair_score_backward(
        &self,
        p: Var,
        q: Var,
        v: Var,
        act: Activation,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (n, h) = self.value(p).dims2().unwrap();
        let m = self.value(q).shape()[0];
        let (pd, qd, vd) = (self.value(p).data(), self.value(q).data(), self.value(v).data());
        let need_p = self.nodes[p.0].requires_grad;
        let need_q = self.nodes[q.0].requires_grad;
        let need_v = self.nodes[v.0].requires_grad;
        let mut gp = vec![0.0; n * h];
        let mut gq = vec![0.0; m * h];
        let mut gv = vec![0.0; h];
        for i in 0..n {
            let pi = &pd[i * h..(i + 1) * h];
            for j in 0..m {
                let gij = g[i * m + j];
                if gij == 0.0 {
                    continue;
                }
                let qj = &qd[j * h..(j + 1) * h];
                for k in 0..h {
                    let (s, ds) = act.apply_with_derivative(pi[k] + qj[k]);
                    gv[k] += gij * s;
                    let back = gij * vd[k] * ds;
                    gp[i * h + k] += back;
                    gq[j * h + k] += back;
                }
            }
        }
        if need_p {
            self.accumulate(grads, p, |t| add_into(t, &gp));
        }
        if need_q {
            self.accumulate(grads, q, |t| add_into(t, &gq));
        }
        if need_v {
            self.accumulate(grads, v, |t| add_into(t, &gv));
        }
    }
}

#[inline]
fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for kk in 0..k {
            let aik = a[i * k + kk];
            if aik == 0.0 {
                continue;
            }
            for (o, bv) in orow.iter_mut().zip(&b[kk * m..(kk + 1) * m]) {
                *o += aik * bv;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(r: usize, c: usize, v: &[f64]) -> Tensor {
        Tensor::matrix(r, c, v.to_vec()).unwrap()
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(0.0));
        let y = t.sigmoid(x).unwrap();
        assert_eq!(t.value(y).item().unwrap(), 0.5);
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item().unwrap(), 0.25);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut t = Tape::new();
        let x = t.constant(mat(2, 3, &[1.0, -3.0, 700.0, 0.2, 0.1, 0.0]));
        let y = t.softmax(x, 1).unwrap();
        for r in 0..2 {
            let s: f64 = t.value(y).row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_branch_has_zero_gradient() {
        let mut t = Tape::new();
        let w = t.param(mat(1, 2, &[1.0, 2.0]));
        let c = t.constant(mat(1, 2, &[3.0, 4.0]));
        let s = t.sum_all(c).unwrap();
        let g = t.backward(s).unwrap();
        assert!(g.get(w).is_none());
        assert_eq!(g.get_or_zeros(w).data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let w = t.param(mat(1, 2, &[1.0, 2.0]));
        let y = t.scale(w, 2.0).unwrap();
        assert!(matches!(t.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn shape_error_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(mat(2, 3, &[0.0; 6]));
        let b = t.constant(mat(2, 3, &[0.0; 6]));
        let err = t.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn masked_softmax_zeroes_masked_entries() {
        let mut t = Tape::new();
        let x = t.constant(mat(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let mask: Rc<[bool]> = vec![true, false, true, true].into();
        let y = t.masked_softmax_rows(x, mask).unwrap();
        assert_eq!(t.value(y).row(0), &[1.0, 0.0]);
        let s: f64 = t.value(y).row(1).iter().sum();
        assert!((s - 1.0).abs() < 1e-15);
    }
}
