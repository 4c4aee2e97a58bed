use std::collections::BTreeMap;
use std::sync::Arc;

use super::{AffineMask, Tensor};
use crate::stats::logsumexp;
use crate::{Error, Real, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Caller-chosen identifier for a parameter leaf.
pub type ParamId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Softplus,
    Sin,
    Cos,
    /// `ln(1 - e^{-w})`, defined for `w > 0`.
    Log1mExp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Leaf {
    Param(ParamId),
    Input(usize),
    Constant,
}

#[derive(Clone, Debug)]
enum Op<S> {
    Leaf(Leaf),
    Affine {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        mask: Option<Arc<AffineMask>>,
    },
    Unary(UnaryOp, Var),
    Binary(BinaryOp, Var, Var),
    Scale(Var, S),
    Shift(Var, S),
    Sum(Var),
    SumGroups(Var, usize),
    LogSumExpGroups(Var, usize),
    RepeatInterleave(Var, usize),
    Concat(Var, Var),
}

#[derive(Clone, Debug)]
struct Node<S> {
    op: Op<S>,
    value: Tensor<S>,
    needs_grad: bool,
}

/// Ordered record of executed primitives. Nodes only ever reference
/// earlier nodes, so the record is topologically sorted by construction.
#[derive(Clone, Debug)]
pub struct Tape<S = f64> {
    nodes: Vec<Node<S>>,
    inputs: usize,
    output: Option<Var>,
    consumed: bool,
    #[cfg(test)]
    pub(crate) corrupt: Option<UnaryOp>,
}

impl<S: Real> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// A graph program: builds its output from the given input handles.
pub trait GraphProgram<S: Real>: Fn(&mut Tape<S>, &[Var]) -> Result<Var> {}

impl<S: Real, F> GraphProgram<S> for F where F: Fn(&mut Tape<S>, &[Var]) -> Result<Var> {}

/// Records `program` on a fresh tape whose inputs are tracked leaves
/// 0..inputs.len() and marks its result as the tape output.
pub fn record_forward<S, F>(program: F, inputs: &[Tensor<S>]) -> Result<(Tensor<S>, Tape<S>)>
where
    S: Real,
    F: FnOnce(&mut Tape<S>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let out = program(&mut tape, &vars)?;
    tape.mark_output(out);
    Ok((tape.value(out).clone(), tape))
}

fn dims<S: Real>(op: &'static str, t: &Tensor<S>) -> Result<(usize, usize)> {
    t.matrix_dims()
        .ok_or_else(|| Error::shape(op, format!("expected rank 1 or 2, got {:?}", t.shape())))
}

impl<S: Real> Tape<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            inputs: 0,
            output: None,
            consumed: false,
            #[cfg(test)]
            corrupt: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn mark_output(&mut self, v: Var) {
        self.output = Some(v);
    }

    pub fn output(&self) -> Option<Var> {
        self.output
    }

    fn push(&mut self, op: Op<S>, value: Tensor<S>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn param(&mut self, id: ParamId, value: Tensor<S>) -> Var {
        self.push(Op::Leaf(Leaf::Param(id)), value, true)
    }

    /// Tracked input leaf; inputs are numbered in creation order.
    pub fn input(&mut self, value: Tensor<S>) -> Var {
        let k = self.inputs;
        self.inputs += 1;
        self.push(Op::Leaf(Leaf::Input(k)), value, true)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(Op::Leaf(Leaf::Constant), value, false)
    }

    /// `input · (weight ⊙ mask)ᵀ + bias` with `input: [n, in]`,
    /// `weight: [out, in]`, `bias: [out]`.
    pub fn affine(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        mask: Option<Arc<AffineMask>>,
    ) -> Result<Var> {
        let (n, fan_in) = dims("affine", self.value(input))?;
        let (fan_out, w_in) = dims("affine", self.value(weight))?;
        if w_in != fan_in {
            return Err(Error::shape(
                "affine",
                format!(
                    "input {:?} vs weight {:?}",
                    self.value(input).shape(),
                    self.value(weight).shape()
                ),
            ));
        }
        if let Some(b) = bias {
            if self.value(b).len() != fan_out {
                return Err(Error::shape(
                    "affine",
                    format!("bias {:?} vs {fan_out} outputs", self.value(b).shape()),
                ));
            }
        }
        if let Some(m) = &mask {
            if m.outputs() != fan_out || m.inputs() != fan_in {
                return Err(Error::shape(
                    "affine",
                    format!(
                        "mask [{}, {}] vs weight [{fan_out}, {fan_in}]",
                        m.outputs(),
                        m.inputs()
                    ),
                ));
            }
        }
        let x = self.value(input).data();
        let w = self.value(weight).data();
        let b = bias.map(|b| self.value(b).data());
        let mut out = vec![S::zero(); n * fan_out];
        for r in 0..n {
            let xr = &x[r * fan_in..(r + 1) * fan_in];
            let yr = &mut out[r * fan_out..(r + 1) * fan_out];
            for (o, y) in yr.iter_mut().enumerate() {
                let wo = &w[o * fan_in..(o + 1) * fan_in];
                let mut acc = b.map_or(S::zero(), |b| b[o]);
                match &mask {
                    Some(m) => {
                        for &(a, e) in m.runs(o) {
                            acc += dot(&xr[a..e], &wo[a..e]);
                        }
                    }
                    None => acc += dot(xr, wo),
                }
                *y = acc;
            }
        }
        let needs = self.needs(input) || self.needs(weight) || bias.is_some_and(|b| self.needs(b));
        Ok(self.push(
            Op::Affine {
                input,
                weight,
                bias,
                mask,
            },
            Tensor::matrix(n, fan_out, out),
            needs,
        ))
    }

    pub fn unary(&mut self, f: UnaryOp, input: Var) -> Result<Var> {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| apply_unary(f, v)).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        let needs = self.needs(input);
        Ok(self.push(Op::Unary(f, input), value, needs))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Tanh, x)
    }
    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Sigmoid, x)
    }
    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Exp, x)
    }
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Log, x)
    }
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Softplus, x)
    }
    pub fn sin(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Sin, x)
    }
    pub fn cos(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Cos, x)
    }
    pub fn log1mexp(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Log1mExp, x)
    }

    pub fn binary(&mut self, f: BinaryOp, lhs: Var, rhs: Var) -> Result<Var> {
        let (a, b) = (self.value(lhs), self.value(rhs));
        if a.shape() != b.shape() {
            return Err(Error::shape(
                match f {
                    BinaryOp::Add => "add",
                    BinaryOp::Sub => "sub",
                    BinaryOp::Mul => "mul",
                },
                format!("{:?} vs {:?}", a.shape(), b.shape()),
            ));
        }
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| match f {
                BinaryOp::Add => x + y,
                BinaryOp::Sub => x - y,
                BinaryOp::Mul => x * y,
            })
            .collect();
        let value = Tensor::new(a.shape().to_vec(), data)?;
        let needs = self.needs(lhs) || self.needs(rhs);
        Ok(self.push(Op::Binary(f, lhs, rhs), value, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn scale(&mut self, x: Var, c: S) -> Result<Var> {
        let t = self.value(x);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| v * c).collect())?;
        let needs = self.needs(x);
        Ok(self.push(Op::Scale(x, c), value, needs))
    }

    pub fn shift(&mut self, x: Var, c: S) -> Result<Var> {
        let t = self.value(x);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| v + c).collect())?;
        let needs = self.needs(x);
        Ok(self.push(Op::Shift(x, c), value, needs))
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -S::one())
    }

    /// Sum of all entries, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = crate::stats::neumaier_sum(self.value(x).data().iter().copied());
        let needs = self.needs(x);
        Ok(self.push(Op::Sum(x), Tensor::scalar(s), needs))
    }

    fn grouped(&self, op: &'static str, x: Var, k: usize) -> Result<(usize, usize)> {
        let (r, c) = dims(op, self.value(x))?;
        if k == 0 || c % k != 0 {
            return Err(Error::shape(op, format!("{c} columns not divisible into groups of {k}")));
        }
        Ok((r, c))
    }

    /// Sums contiguous column groups of size `k`: `[r, m·k] → [r, m]`.
    pub fn sum_groups(&mut self, x: Var, k: usize) -> Result<Var> {
        let (r, c) = self.grouped("sum_groups", x, k)?;
        let data = self
            .value(x)
            .data()
            .chunks(k)
            .map(|g| g.iter().copied().sum())
            .collect();
        let needs = self.needs(x);
        Ok(self.push(Op::SumGroups(x, k), Tensor::matrix(r, c / k, data), needs))
    }

    /// Log-sum-exp over contiguous column groups of size `k`.
    pub fn logsumexp_groups(&mut self, x: Var, k: usize) -> Result<Var> {
        let (r, c) = self.grouped("logsumexp_groups", x, k)?;
        let data = self.value(x).data().chunks(k).map(logsumexp).collect();
        let needs = self.needs(x);
        Ok(self.push(Op::LogSumExpGroups(x, k), Tensor::matrix(r, c / k, data), needs))
    }

    /// Repeats every column `k` times in place: `[r, m] → [r, m·k]`.
    pub fn repeat_interleave(&mut self, x: Var, k: usize) -> Result<Var> {
        let (r, c) = dims("repeat_interleave", self.value(x))?;
        if k == 0 {
            return Err(Error::shape("repeat_interleave", "k = 0"));
        }
        let data = self
            .value(x)
            .data()
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, k))
            .collect();
        let needs = self.needs(x);
        Ok(self.push(Op::RepeatInterleave(x, k), Tensor::matrix(r, c * k, data), needs))
    }

    /// Column-wise concatenation of two matrices with equal row counts.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = dims("concat", self.value(a))?;
        let (rb, cb) = dims("concat", self.value(b))?;
        if ra != rb {
            return Err(Error::shape(
                "concat",
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(ra * (ca + cb));
        for r in 0..ra {
            data.extend_from_slice(&da[r * ca..(r + 1) * ca]);
            data.extend_from_slice(&db[r * cb..(r + 1) * cb]);
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Concat(a, b), Tensor::matrix(ra, ca + cb, data), needs))
    }

    /// Propagates `seed` from the marked output. Returns `∂(seed·output)/∂leaf`
    /// for every tracked parameter and input leaf.
    pub fn backward(&mut self, seed: &Tensor<S>) -> Result<GradientBundle<S>> {
        let out = self.output.ok_or(Error::NoOutput)?;
        self.backward_from(out, seed)
    }

    pub fn backward_from(&mut self, output: Var, seed: &Tensor<S>) -> Result<GradientBundle<S>> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if seed.shape() != self.value(output).shape() {
            return Err(Error::shape(
                "backward",
                format!(
                    "seed {:?} vs output {:?}",
                    seed.shape(),
                    self.value(output).shape()
                ),
            ));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<S>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed.data().to_vec());

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            match &self.nodes[idx].op {
                Op::Leaf(_) => {
                    grads[idx] = Some(g);
                }
                Op::Affine {
                    input,
                    weight,
                    bias,
                    mask,
                } => self.affine_backward(&mut grads, &g, *input, *weight, *bias, mask.as_deref()),
                Op::Unary(f, x) => {
                    if self.needs(*x) {
                        let xv = self.value(*x).data();
                        let yv = self.nodes[idx].value.data();
                        #[cfg(test)]
                        let bump = if self.corrupt == Some(*f) { S::lit(1.5) } else { S::one() };
                        #[cfg(not(test))]
                        let bump = S::one();
                        let local: Vec<S> = g
                            .iter()
                            .zip(xv.iter().zip(yv))
                            .map(|(&gi, (&xi, &yi))| gi * unary_partial(*f, xi, yi) * bump)
                            .collect();
                        accumulate(&mut grads, *x, local);
                    }
                }
                Op::Binary(f, a, b) => {
                    let (a, b, f) = (*a, *b, *f);
                    if self.needs(a) {
                        let local = match f {
                            BinaryOp::Add | BinaryOp::Sub => g.clone(),
                            BinaryOp::Mul => mul_elem(&g, self.value(b).data()),
                        };
                        accumulate(&mut grads, a, local);
                    }
                    if self.needs(b) {
                        let local = match f {
                            BinaryOp::Add => g.clone(),
                            BinaryOp::Sub => g.iter().map(|&v| -v).collect(),
                            BinaryOp::Mul => mul_elem(&g, self.value(a).data()),
                        };
                        accumulate(&mut grads, b, local);
                    }
                }
                Op::Scale(x, c) => {
                    let c = *c;
                    accumulate(&mut grads, *x, g.iter().map(|&v| v * c).collect());
                }
                Op::Shift(x, _) => accumulate(&mut grads, *x, g),
                Op::Sum(x) => {
                    let n = self.value(*x).len();
                    accumulate(&mut grads, *x, vec![g[0]; n]);
                }
                Op::SumGroups(x, k) => {
                    let k = *k;
                    let local = g.iter().flat_map(|&v| std::iter::repeat_n(v, k)).collect();
                    accumulate(&mut grads, *x, local);
                }
                Op::LogSumExpGroups(x, k) => {
                    let xv = self.value(*x).data();
                    let yv = self.nodes[idx].value.data();
                    let local = xv
                        .chunks(*k)
                        .zip(yv.iter().zip(&g))
                        .flat_map(|(grp, (&y, &gy))| grp.iter().map(move |&xi| gy * (xi - y).exp()))
                        .collect();
                    accumulate(&mut grads, *x, local);
                }
                Op::RepeatInterleave(x, k) => {
                    let local = g.chunks(*k).map(|c| c.iter().copied().sum()).collect();
                    accumulate(&mut grads, *x, local);
                }
                Op::Concat(a, b) => {
                    let (a, b) = (*a, *b);
                    let (r, ca) = self.value(a).matrix_dims().expect("checked at record");
                    let cb = self.value(b).matrix_dims().expect("checked at record").1;
                    if self.needs(a) {
                        let local = (0..r)
                            .flat_map(|i| g[i * (ca + cb)..i * (ca + cb) + ca].iter().copied())
                            .collect();
                        accumulate(&mut grads, a, local);
                    }
                    if self.needs(b) {
                        let local = (0..r)
                            .flat_map(|i| g[i * (ca + cb) + ca..(i + 1) * (ca + cb)].iter().copied())
                            .collect();
                        accumulate(&mut grads, b, local);
                    }
                }
            }
        }

        let mut bundle = GradientBundle {
            params: BTreeMap::new(),
            inputs: BTreeMap::new(),
        };
        for (idx, node) in self.nodes.iter().enumerate() {
            let Op::Leaf(leaf) = node.op else { continue };
            let shape = node.value.shape().to_vec();
            let g = grads
                .get_mut(idx)
                .and_then(Option::take)
                .unwrap_or_else(|| vec![S::zero(); node.value.len()]);
            let g = Tensor::new(shape, g)?;
            match leaf {
                Leaf::Param(id) => match bundle.params.get_mut(&id) {
                    Some(existing) => {
                        let summed: Vec<S> = existing
                            .data()
                            .iter()
                            .zip(g.data())
                            .map(|(&a, &b)| a + b)
                            .collect();
                        *existing = Tensor::new(existing.shape().to_vec(), summed)?;
                    }
                    None => {
                        bundle.params.insert(id, g);
                    }
                },
                Leaf::Input(k) => {
                    bundle.inputs.insert(k, g);
                }
                Leaf::Constant => {}
            }
        }
        Ok(bundle)
    }

    fn affine_backward(
        &self,
        grads: &mut [Option<Vec<S>>],
        g: &[S],
        input: Var,
        weight: Var,
        bias: Option<Var>,
        mask: Option<&AffineMask>,
    ) {
        let (n, fan_in) = self.value(input).matrix_dims().expect("checked at record");
        let fan_out = self.value(weight).matrix_dims().expect("checked at record").0;
        let x = self.value(input).data();
        let w = self.value(weight).data();
        let full = [(0, fan_in)];
        let runs = |o: usize| -> &[(usize, usize)] {
            match mask {
                Some(m) => m.runs(o),
                None => &full,
            }
        };

        if self.needs(input) {
            let mut dx = vec![S::zero(); n * fan_in];
            for r in 0..n {
                let gr = &g[r * fan_out..(r + 1) * fan_out];
                let dxr = &mut dx[r * fan_in..(r + 1) * fan_in];
                for (o, &go) in gr.iter().enumerate() {
                    let wo = &w[o * fan_in..(o + 1) * fan_in];
                    for &(a, e) in runs(o) {
                        axpy(go, &wo[a..e], &mut dxr[a..e]);
                    }
                }
            }
            accumulate(grads, input, dx);
        }
        if self.needs(weight) {
            let mut dw = vec![S::zero(); fan_out * fan_in];
            for r in 0..n {
                let gr = &g[r * fan_out..(r + 1) * fan_out];
                let xr = &x[r * fan_in..(r + 1) * fan_in];
                for (o, &go) in gr.iter().enumerate() {
                    let dwo = &mut dw[o * fan_in..(o + 1) * fan_in];
                    for &(a, e) in runs(o) {
                        axpy(go, &xr[a..e], &mut dwo[a..e]);
                    }
                }
            }
            accumulate(grads, weight, dw);
        }
        if let Some(b) = bias {
            if self.needs(b) {
                let mut db = vec![S::zero(); fan_out];
                for r in 0..n {
                    for (d, &go) in db.iter_mut().zip(&g[r * fan_out..(r + 1) * fan_out]) {
                        *d += go;
                    }
                }
                accumulate(grads, b, db);
            }
        }
    }
}

#[inline]
fn dot<S: Real>(a: &[S], b: &[S]) -> S {
    let mut acc = S::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[inline]
fn axpy<S: Real>(alpha: S, x: &[S], y: &mut [S]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn mul_elem<S: Real>(a: &[S], b: &[S]) -> Vec<S> {
    a.iter().zip(b).map(|(&x, &y)| x * y).collect()
}

fn accumulate<S: Real>(grads: &mut [Option<Vec<S>>], v: Var, local: Vec<S>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, l) in existing.iter_mut().zip(local) {
                *e += l;
            }
        }
        slot @ None => *slot = Some(local),
    }
}

fn apply_unary<S: Real>(f: UnaryOp, x: S) -> S {
    match f {
        UnaryOp::Tanh => x.tanh(),
        UnaryOp::Sigmoid => x.sigmoid(),
        UnaryOp::Exp => x.exp(),
        UnaryOp::Log => x.ln(),
        UnaryOp::Softplus => x.softplus(),
        UnaryOp::Sin => x.sin(),
        UnaryOp::Cos => x.cos(),
        UnaryOp::Log1mExp => x.log1mexp(),
    }
}

/// d f / d x given input `x` and output `y = f(x)`.
fn unary_partial<S: Real>(f: UnaryOp, x: S, y: S) -> S {
    let one = S::one();
    match f {
        UnaryOp::Tanh => one - y * y,
        UnaryOp::Sigmoid => y * (one - y),
        UnaryOp::Exp => y,
        UnaryOp::Log => one / x,
        UnaryOp::Softplus => x.sigmoid(),
        UnaryOp::Sin => x.cos(),
        UnaryOp::Cos => -x.sin(),
        UnaryOp::Log1mExp => one / x.exp_m1(),
    }
}

/// Gradients for the tracked leaves of one backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle<S = f64> {
    params: BTreeMap<ParamId, Tensor<S>>,
    inputs: BTreeMap<usize, Tensor<S>>,
}

impl<S: Real> GradientBundle<S> {
    pub fn param(&self, id: ParamId) -> Result<&Tensor<S>> {
        self.params
            .get(&id)
            .ok_or_else(|| Error::UntrackedLeaf(format!("param {id}")))
    }

    pub fn input(&self, k: usize) -> Result<&Tensor<S>> {
        self.inputs
            .get(&k)
            .ok_or_else(|| Error::UntrackedLeaf(format!("input {k}")))
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<S>)> {
        self.params.iter().map(|(&k, v)| (k, v))
    }

    pub fn into_params(self) -> BTreeMap<ParamId, Tensor<S>> {
        self.params
    }

    pub fn into_input(mut self, k: usize) -> Result<Tensor<S>> {
        self.inputs
            .remove(&k)
            .ok_or_else(|| Error::UntrackedLeaf(format!("input {k}")))
    }
}
