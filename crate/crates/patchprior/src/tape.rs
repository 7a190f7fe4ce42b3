//! Minimal reverse-mode differentiation over a fixed op set, plus an
//! adaptive-moment (Adam) optimizer.
//!
//! The op set (affine maps, tanh/softplus, exp, log, sums, elementwise
//! products, squared norms, and index plumbing) is exactly what the coupling
//! networks and the patch discriminator need. Every op is smooth, which keeps
//! second-order quantities well-defined: the WGAN gradient penalty derivative
//! is computed forward-over-reverse by running both passes in dual numbers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar abstraction so the same forward/backward code runs in plain f64 and
/// in dual numbers (value, tangent).
pub trait Real:
    Copy
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
{
    fn from_f64(x: f64) -> Self;
    fn primal(self) -> f64;
    fn exp_(self) -> Self;
    fn ln_(self) -> Self;
    fn tanh_(self) -> Self;
    fn softplus_(self) -> Self;
    fn sigmoid_(self) -> Self;
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn primal(self) -> f64 {
        self
    }
    fn exp_(self) -> Self {
        self.exp()
    }
    fn ln_(self) -> Self {
        self.ln()
    }
    fn tanh_(self) -> Self {
        self.tanh()
    }
    fn softplus_(self) -> Self {
        crate::math::softplus(self)
    }
    fn sigmoid_(self) -> Self {
        1.0 / (1.0 + (-self).exp())
    }
}

/// Forward-mode dual number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub t: f64,
}

impl Dual {
    pub fn new(v: f64, t: f64) -> Self {
        Dual { v, t }
    }

    pub fn constant(v: f64) -> Self {
        Dual { v, t: 0.0 }
    }
}

impl std::ops::Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual { v: self.v + o.v, t: self.t + o.t }
    }
}

impl std::ops::Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual { v: self.v - o.v, t: self.t - o.t }
    }
}

impl std::ops::Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual { v: self.v * o.v, t: self.v * o.t + self.t * o.v }
    }
}

impl std::ops::Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        Dual { v: self.v / o.v, t: (self.t * o.v - self.v * o.t) / (o.v * o.v) }
    }
}

impl std::ops::Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual { v: -self.v, t: -self.t }
    }
}

impl Real for Dual {
    fn from_f64(x: f64) -> Self {
        Dual::constant(x)
    }
    fn primal(self) -> f64 {
        self.v
    }
    fn exp_(self) -> Self {
        let e = self.v.exp();
        Dual { v: e, t: self.t * e }
    }
    fn ln_(self) -> Self {
        Dual { v: self.v.ln(), t: self.t / self.v }
    }
    fn tanh_(self) -> Self {
        let y = self.v.tanh();
        Dual { v: y, t: self.t * (1.0 - y * y) }
    }
    fn softplus_(self) -> Self {
        Dual { v: crate::math::softplus(self.v), t: self.t * f64::sigmoid_(self.v) }
    }
    fn sigmoid_(self) -> Self {
        let s = f64::sigmoid_(self.v);
        Dual { v: s, t: self.t * s * (1.0 - s) }
    }
}

/// Dense value container with an explicit shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::invalid(format!(
                "tensor data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

pub type NodeId = usize;

/// Parameter slot handle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Input { slot: usize },
    Param { slot: usize },
    /// weight shape [out, in] (row-major), bias shape [out]
    Affine { weight: usize, bias: usize, input: NodeId },
    Tanh(NodeId),
    Softplus(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Neg(NodeId),
    Scale { input: NodeId, factor: f64 },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Sum(NodeId),
    SquaredNorm(NodeId),
    Concat(NodeId, NodeId),
    Slice { input: NodeId, start: usize, len: usize },
    Gather { input: NodeId, indices: Vec<usize> },
}

/// Topologically ordered op list with declared inputs and a parameter
/// registry. Built once per architecture; executed many times.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    ops: Vec<Op>,
    lens: Vec<usize>,
    input_lens: Vec<usize>,
    param_shapes: Vec<Vec<usize>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn num_params(&self) -> usize {
        self.param_shapes.len()
    }

    pub fn param_shapes(&self) -> &[Vec<usize>] {
        &self.param_shapes
    }

    pub fn node_len(&self, node: NodeId) -> usize {
        self.lens[node]
    }

    fn push(&mut self, op: Op, len: usize) -> NodeId {
        self.ops.push(op);
        self.lens.push(len);
        self.ops.len() - 1
    }

    pub fn input(&mut self, len: usize) -> NodeId {
        let slot = self.input_lens.len();
        self.input_lens.push(len);
        self.push(Op::Input { slot }, len)
    }

    pub fn param(&mut self, shape: Vec<usize>) -> ParamId {
        self.param_shapes.push(shape);
        ParamId(self.param_shapes.len() - 1)
    }

    /// Declares a parameter and exposes it as a node (for direct use, e.g. a
    /// linear readout vector).
    pub fn param_node(&mut self, shape: Vec<usize>) -> (ParamId, NodeId) {
        let id = self.param(shape.clone());
        let len = shape.iter().product();
        let node = self.push(Op::Param { slot: id.0 }, len);
        (id, node)
    }

    pub fn affine(&mut self, weight: ParamId, bias: ParamId, input: NodeId) -> NodeId {
        let wshape = &self.param_shapes[weight.0];
        assert_eq!(wshape.len(), 2, "affine weight must be 2-d");
        let (out, inp) = (wshape[0], wshape[1]);
        assert_eq!(self.param_shapes[bias.0], vec![out], "affine bias shape");
        assert_eq!(self.lens[input], inp, "affine input length");
        self.push(Op::Affine { weight: weight.0, bias: bias.0, input }, out)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let len = self.lens[x];
        self.push(Op::Tanh(x), len)
    }

    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        let len = self.lens[x];
        self.push(Op::Softplus(x), len)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let len = self.lens[x];
        self.push(Op::Exp(x), len)
    }

    pub fn log(&mut self, x: NodeId) -> NodeId {
        let len = self.lens[x];
        self.push(Op::Log(x), len)
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        let len = self.lens[x];
        self.push(Op::Neg(x), len)
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let len = self.lens[x];
        self.push(Op::Scale { input: x, factor }, len)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.lens[a], self.lens[b]);
        let len = self.lens[a];
        self.push(Op::Add(a, b), len)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.lens[a], self.lens[b]);
        let len = self.lens[a];
        self.push(Op::Sub(a, b), len)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.lens[a], self.lens[b]);
        let len = self.lens[a];
        self.push(Op::Mul(a, b), len)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sum(x), 1)
    }

    pub fn squared_norm(&mut self, x: NodeId) -> NodeId {
        self.push(Op::SquaredNorm(x), 1)
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let len = self.lens[a] + self.lens[b];
        self.push(Op::Concat(a, b), len)
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        assert!(start + len <= self.lens[x]);
        self.push(Op::Slice { input: x, start, len }, len)
    }

    /// out[i] = x[indices[i]]
    pub fn gather(&mut self, x: NodeId, indices: Vec<usize>) -> NodeId {
        assert!(indices.iter().all(|&i| i < self.lens[x]));
        let len = indices.len();
        self.push(Op::Gather { input: x, indices }, len)
    }

    fn check_bindings<N: Real>(&self, params: &[Vec<N>], inputs: &[Vec<N>]) -> Result<()> {
        if params.len() != self.param_shapes.len() {
            return Err(Error::invalid(format!(
                "tape expects {} params, got {}",
                self.param_shapes.len(),
                params.len()
            )));
        }
        for (p, shape) in params.iter().zip(&self.param_shapes) {
            let n: usize = shape.iter().product();
            if p.len() != n {
                return Err(Error::invalid(format!(
                    "param length {} does not match shape {:?}",
                    p.len(),
                    shape
                )));
            }
        }
        if inputs.len() != self.input_lens.len() {
            return Err(Error::invalid(format!(
                "tape expects {} inputs, got {}",
                self.input_lens.len(),
                inputs.len()
            )));
        }
        for (x, &len) in inputs.iter().zip(&self.input_lens) {
            if x.len() != len {
                return Err(Error::invalid(format!(
                    "input length {} does not match declared {len}",
                    x.len()
                )));
            }
        }
        Ok(())
    }

    /// Evaluates every node; the result feeds [`Tape::backward`].
    pub fn forward<N: Real>(&self, params: &[Vec<N>], inputs: &[Vec<N>]) -> Result<Vec<Vec<N>>> {
        self.check_bindings(params, inputs)?;
        let mut values: Vec<Vec<N>> = Vec::with_capacity(self.ops.len());
        for op in &self.ops {
            let out: Vec<N> = match op {
                Op::Input { slot } => inputs[*slot].clone(),
                Op::Param { slot } => params[*slot].clone(),
                Op::Affine { weight, bias, input } => {
                    let w = &params[*weight];
                    let b = &params[*bias];
                    let x = &values[*input];
                    let (o, i) = (self.param_shapes[*weight][0], self.param_shapes[*weight][1]);
                    let mut y = Vec::with_capacity(o);
                    for r in 0..o {
                        let mut acc = b[r];
                        let row = &w[r * i..(r + 1) * i];
                        for (wv, xv) in row.iter().zip(x) {
                            acc = acc + *wv * *xv;
                        }
                        y.push(acc);
                    }
                    y
                }
                Op::Tanh(x) => values[*x].iter().map(|v| v.tanh_()).collect(),
                Op::Softplus(x) => values[*x].iter().map(|v| v.softplus_()).collect(),
                Op::Exp(x) => values[*x].iter().map(|v| v.exp_()).collect(),
                Op::Log(x) => values[*x].iter().map(|v| v.ln_()).collect(),
                Op::Neg(x) => values[*x].iter().map(|v| -*v).collect(),
                Op::Scale { input, factor } => {
                    let f = N::from_f64(*factor);
                    values[*input].iter().map(|v| *v * f).collect()
                }
                Op::Add(a, b) => values[*a].iter().zip(&values[*b]).map(|(x, y)| *x + *y).collect(),
                Op::Sub(a, b) => values[*a].iter().zip(&values[*b]).map(|(x, y)| *x - *y).collect(),
                Op::Mul(a, b) => values[*a].iter().zip(&values[*b]).map(|(x, y)| *x * *y).collect(),
                Op::Sum(x) => {
                    let mut acc = N::from_f64(0.0);
                    for v in &values[*x] {
                        acc = acc + *v;
                    }
                    vec![acc]
                }
                Op::SquaredNorm(x) => {
                    let mut acc = N::from_f64(0.0);
                    for v in &values[*x] {
                        acc = acc + *v * *v;
                    }
                    vec![acc]
                }
                Op::Concat(a, b) => {
                    let mut y = values[*a].clone();
                    y.extend_from_slice(&values[*b]);
                    y
                }
                Op::Slice { input, start, len } => values[*input][*start..*start + *len].to_vec(),
                Op::Gather { input, indices } => {
                    indices.iter().map(|&i| values[*input][i]).collect()
                }
            };
            if out.iter().any(|v| !v.primal().is_finite()) {
                return Err(Error::numerics("tape: non-finite intermediate value"));
            }
            values.push(out);
        }
        Ok(values)
    }

    /// Reverse pass from a scalar node. Returns exact gradients with respect
    /// to parameters and inputs.
    #[allow(clippy::type_complexity)]
    pub fn backward<N: Real>(
        &self,
        values: &[Vec<N>],
        params: &[Vec<N>],
        output: NodeId,
        seed: N,
    ) -> Result<(Vec<Vec<N>>, Vec<Vec<N>>)> {
        if values.len() != self.ops.len() {
            return Err(Error::invalid("tape backward: run forward first"));
        }
        if self.lens[output] != 1 {
            return Err(Error::invalid("tape backward: output node must be scalar"));
        }
        let zero = N::from_f64(0.0);
        let mut adj: Vec<Vec<N>> = self.lens.iter().map(|&l| vec![zero; l]).collect();
        let mut param_grads: Vec<Vec<N>> = self
            .param_shapes
            .iter()
            .map(|s| vec![zero; s.iter().product()])
            .collect();
        let mut input_grads: Vec<Vec<N>> = self.input_lens.iter().map(|&l| vec![zero; l]).collect();
        adj[output][0] = seed;

        for id in (0..=output).rev() {
            let a = std::mem::take(&mut adj[id]);
            match &self.ops[id] {
                Op::Input { slot } => {
                    for (g, v) in input_grads[*slot].iter_mut().zip(&a) {
                        *g = *g + *v;
                    }
                }
                Op::Param { slot } => {
                    for (g, v) in param_grads[*slot].iter_mut().zip(&a) {
                        *g = *g + *v;
                    }
                }
                Op::Affine { weight, bias, input } => {
                    let (o, i) = (self.param_shapes[*weight][0], self.param_shapes[*weight][1]);
                    let w = &params[*weight];
                    let x = &values[*input];
                    for r in 0..o {
                        let ar = a[r];
                        param_grads[*bias][r] = param_grads[*bias][r] + ar;
                        let wrow = &w[r * i..(r + 1) * i];
                        let grow = &mut param_grads[*weight][r * i..(r + 1) * i];
                        for c in 0..i {
                            grow[c] = grow[c] + ar * x[c];
                            adj[*input][c] = adj[*input][c] + ar * wrow[c];
                        }
                    }
                }
                Op::Tanh(x) => {
                    for c in 0..a.len() {
                        let y = values[id][c];
                        let one = N::from_f64(1.0);
                        adj[*x][c] = adj[*x][c] + a[c] * (one - y * y);
                    }
                }
                Op::Softplus(x) => {
                    for c in 0..a.len() {
                        adj[*x][c] = adj[*x][c] + a[c] * values[*x][c].sigmoid_();
                    }
                }
                Op::Exp(x) => {
                    for c in 0..a.len() {
                        adj[*x][c] = adj[*x][c] + a[c] * values[id][c];
                    }
                }
                Op::Log(x) => {
                    for c in 0..a.len() {
                        adj[*x][c] = adj[*x][c] + a[c] / values[*x][c];
                    }
                }
                Op::Neg(x) => {
                    for c in 0..a.len() {
                        adj[*x][c] = adj[*x][c] - a[c];
                    }
                }
                Op::Scale { input, factor } => {
                    let f = N::from_f64(*factor);
                    for c in 0..a.len() {
                        adj[*input][c] = adj[*input][c] + a[c] * f;
                    }
                }
                Op::Add(l, r) => {
                    for c in 0..a.len() {
                        adj[*l][c] = adj[*l][c] + a[c];
                        adj[*r][c] = adj[*r][c] + a[c];
                    }
                }
                Op::Sub(l, r) => {
                    for c in 0..a.len() {
                        adj[*l][c] = adj[*l][c] + a[c];
                        adj[*r][c] = adj[*r][c] - a[c];
                    }
                }
                Op::Mul(l, r) => {
                    for c in 0..a.len() {
                        adj[*l][c] = adj[*l][c] + a[c] * values[*r][c];
                        adj[*r][c] = adj[*r][c] + a[c] * values[*l][c];
                    }
                }
                Op::Sum(x) => {
                    for c in 0..self.lens[*x] {
                        adj[*x][c] = adj[*x][c] + a[0];
                    }
                }
                Op::SquaredNorm(x) => {
                    let two = N::from_f64(2.0);
                    for c in 0..self.lens[*x] {
                        adj[*x][c] = adj[*x][c] + two * a[0] * values[*x][c];
                    }
                }
                Op::Concat(l, r) => {
                    let nl = self.lens[*l];
                    for c in 0..nl {
                        adj[*l][c] = adj[*l][c] + a[c];
                    }
                    for c in 0..self.lens[*r] {
                        adj[*r][c] = adj[*r][c] + a[nl + c];
                    }
                }
                Op::Slice { input, start, .. } => {
                    for (c, v) in a.iter().enumerate() {
                        adj[*input][*start + c] = adj[*input][*start + c] + *v;
                    }
                }
                Op::Gather { input, indices } => {
                    for (c, &i) in indices.iter().enumerate() {
                        adj[*input][i] = adj[*input][i] + a[c];
                    }
                }
            }
        }
        Ok((param_grads, input_grads))
    }

    /// Value + parameter/input gradients of a scalar node in one call.
    #[allow(clippy::type_complexity)]
    pub fn grad(
        &self,
        params: &[Vec<f64>],
        inputs: &[Vec<f64>],
        output: NodeId,
    ) -> Result<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let values = self.forward(params, inputs)?;
        let value = values[output][0];
        let (pg, ig) = self.backward(&values, params, output, 1.0)?;
        Ok((value, pg, ig))
    }

    /// WGAN-style gradient penalty (‖∇_x f(x)‖ − 1)² for a scalar-output tape
    /// with a single input, differentiated with respect to the parameters.
    ///
    /// The input gradient g = ∇_x f is produced by the reverse pass; running
    /// forward and reverse passes in dual numbers with input tangent
    /// u = 2(‖g‖−1)/‖g‖·g yields ∇_θ (‖g‖−1)² as the tangents of the
    /// parameter gradients (equality of mixed partials). At g = 0 the
    /// subgradient convention u = 0 applies.
    pub fn gradient_penalty(
        &self,
        params: &[Vec<f64>],
        x: &[f64],
        output: NodeId,
    ) -> Result<(f64, Vec<Vec<f64>>)> {
        if self.input_lens.len() != 1 {
            return Err(Error::invalid("gradient_penalty expects a single-input tape"));
        }
        let inputs = vec![x.to_vec()];
        let values = self.forward(params, &inputs)?;
        let (_, input_grads) = self.backward(&values, params, output, 1.0)?;
        let g = &input_grads[0];
        let norm = crate::math::norm2(g);
        let penalty = (norm - 1.0) * (norm - 1.0);

        let u: Vec<f64> = if norm == 0.0 {
            vec![0.0; g.len()]
        } else {
            let c = 2.0 * (norm - 1.0) / norm;
            g.iter().map(|&v| c * v).collect()
        };

        let dual_params: Vec<Vec<Dual>> = params
            .iter()
            .map(|p| p.iter().map(|&v| Dual::constant(v)).collect())
            .collect();
        let dual_input: Vec<Vec<Dual>> =
            vec![x.iter().zip(&u).map(|(&v, &t)| Dual::new(v, t)).collect()];
        let dual_values = self.forward(&dual_params, &dual_input)?;
        let (dual_pg, _) = self.backward(&dual_values, &dual_params, output, Dual::constant(1.0))?;
        let penalty_grads = dual_pg
            .into_iter()
            .map(|pg| pg.into_iter().map(|d| d.t).collect())
            .collect();
        Ok((penalty, penalty_grads))
    }
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> Self {
        AdamParams { lr, ..Default::default() }
    }
}

/// First/second moment accumulators for one parameter list.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
    pub hyper: AdamParams,
}

impl AdamState {
    pub fn new(param_lens: &[usize], hyper: AdamParams) -> Self {
        AdamState {
            m: param_lens.iter().map(|&l| vec![0.0; l]).collect(),
            v: param_lens.iter().map(|&l| vec![0.0; l]).collect(),
            step: 0,
            hyper,
        }
    }

    pub fn for_params(params: &[Vec<f64>], hyper: AdamParams) -> Self {
        let lens: Vec<usize> = params.iter().map(|p| p.len()).collect();
        AdamState::new(&lens, hyper)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Standard bias-corrected update, in place.
    pub fn step(&mut self, params: &mut [Vec<f64>], grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::invalid("adam: parameter/gradient count mismatch"));
        }
        for ((p, g), (m, v)) in params.iter().zip(grads).zip(self.m.iter().zip(&self.v)) {
            if p.len() != m.len() || g.len() != v.len() || p.len() != g.len() {
                return Err(Error::invalid("adam: parameter/gradient shape mismatch"));
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let AdamParams { lr, beta1, beta2, eps } = self.hyper;
        let bc1 = 1.0 - beta1.powf(t);
        let bc2 = 1.0 - beta2.powf(t);
        for k in 0..params.len() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..params[k].len() {
                let g = grads[k][i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                params[k][i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Activation used inside the MLP helpers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Softplus,
}

/// Fully connected network description: `sizes = [in, h1, ..., out]`, the
/// activation applied after every layer except the last.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct MlpSpec {
    pub sizes: Vec<usize>,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(sizes: Vec<usize>, activation: Activation) -> Self {
        MlpSpec { sizes, activation }
    }

    /// Declares this network's parameter slots on `tape` (weight then bias,
    /// layer by layer) without wiring any ops.
    pub fn declare(&self, tape: &mut Tape) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for l in 0..self.sizes.len() - 1 {
            let (nin, nout) = (self.sizes[l], self.sizes[l + 1]);
            ids.push(tape.param(vec![nout, nin]));
            ids.push(tape.param(vec![nout]));
        }
        ids
    }

    /// Wires the network from `input` using previously declared params.
    pub fn wire(&self, tape: &mut Tape, input: NodeId, ids: &[ParamId]) -> NodeId {
        assert_eq!(ids.len(), 2 * (self.sizes.len() - 1));
        let mut node = input;
        for l in 0..self.sizes.len() - 1 {
            node = tape.affine(ids[2 * l], ids[2 * l + 1], node);
            if l + 2 < self.sizes.len() {
                node = match self.activation {
                    Activation::Tanh => tape.tanh(node),
                    Activation::Softplus => tape.softplus(node),
                };
            }
        }
        node
    }

    /// Declares the parameters on `tape` and wires the network from `input`.
    /// Returns (param ids in declaration order, output node).
    pub fn build(&self, tape: &mut Tape, input: NodeId) -> (Vec<ParamId>, NodeId) {
        let ids = self.declare(tape);
        let node = self.wire(tape, input, &ids);
        (ids, node)
    }

    /// Xavier-style initialization of the parameter list for this spec,
    /// in the same order as [`MlpSpec::build`] declares them.
    pub fn init_params(&self, rng: &mut impl rand::Rng, gain: f64) -> Vec<Vec<f64>> {
        let mut params = Vec::new();
        for l in 0..self.sizes.len() - 1 {
            let (nin, nout) = (self.sizes[l], self.sizes[l + 1]);
            let bound = gain * (6.0 / (nin + nout) as f64).sqrt();
            let w: Vec<f64> = (0..nin * nout).map(|_| rng.random_range(-bound..bound)).collect();
            params.push(w);
            params.push(vec![0.0; nout]);
        }
        params
    }
}
