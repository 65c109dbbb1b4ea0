use super::kernels::{gemm, sigmoid, softmax_in_place, softmax_scaled_in_place};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    Add { a: Var, b: Var },
    AddRow { a: Var, bias: Var },
    Scale { a: Var, factor: f64 },
    Hadamard { a: Var, b: Var },
    Transpose { a: Var },
    SoftmaxRows { a: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    RmsNorm { x: Var, gamma: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Relu { a: Var },
    Swish { a: Var },
    MeanTokens { a: Var, tokens: usize },
    Attention { q: Var, k: Var, v: Var, heads: usize, tokens: usize, probs: Vec<f64> },
    AppendToken { a: Var, token: Var, tokens: usize },
    AddPositional { a: Var, table: Var },
    SelectToken { a: Var, index: usize, tokens: usize },
    Reshape { a: Var },
    Sum { a: Var },
    SrmL1 { pred: Var, target_a: Vec<f64>, target_b: Vec<f64>, lambdas: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records one forward pass so that [`Tape::backward`] can replay it in
/// reverse. Nodes are appended in evaluation order, which is already a
/// topological order of the graph.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    check_finite: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-node gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            check_finite: cfg!(debug_assertions),
        }
    }

    /// Enables or disables the per-op NaN/Inf check.
    pub fn with_finite_checks(mut self, enabled: bool) -> Self {
        self.check_finite = enabled;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A trainable leaf: gradients flow into it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient (inputs, fixed offsets).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Row-stochastic attention maps saved by an [`Tape::attention`] node,
    /// laid out `[batch, heads, tokens, tokens]`.
    pub fn attention_probs(&self, var: Var) -> Option<(&[f64], usize, usize)> {
        match &self.nodes[var.0].op {
            Op::Attention {
                probs,
                heads,
                tokens,
                ..
            } => Some((probs, *heads, *tokens)),
            _ => None,
        }
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, parents: &[Var]) -> Result<Var> {
        if self.check_finite && !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push_raw(value, op, requires_grad))
    }

    fn val(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// `[*, k] x [k, n] -> [*, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.val(a).matmul(self.val(b))?;
        self.push("matmul", out, Op::MatMul { a, b }, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.val(a), self.val(b));
        if x.shape() != y.shape() {
            return Err(Error::shape("add", format!("{:?} + {:?}", x.shape(), y.shape())));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push("add", out, Op::Add { a, b }, &[a, b])
    }

    /// Adds a `[D]` vector to every row of a `[*, D]` tensor.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (x, b) = (self.val(a), self.val(bias));
        let d = x.cols();
        if b.len() != d {
            return Err(Error::shape("add_row", format!("{:?} + {:?}", x.shape(), b.shape())));
        }
        let mut data = x.data().to_vec();
        for row in data.chunks_mut(d) {
            for (v, bv) in row.iter_mut().zip(b.data()) {
                *v += bv;
            }
        }
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push("add_row", out, Op::AddRow { a, bias }, &[a, bias])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let x = self.val(a);
        let out = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v * factor).collect())?;
        self.push("scale", out, Op::Scale { a, factor }, &[a])
    }

    /// Element-wise product.
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.val(a), self.val(b));
        if x.shape() != y.shape() {
            return Err(Error::shape("hadamard", format!("{:?} * {:?}", x.shape(), y.shape())));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push("hadamard", out, Op::Hadamard { a, b }, &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.val(a).transpose()?;
        self.push("transpose", out, Op::Transpose { a }, &[a])
    }

    /// Softmax along the last axis.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.val(a);
        let d = x.cols();
        if d == 0 {
            return Err(Error::shape("softmax_rows", "empty rows"));
        }
        let mut data = x.data().to_vec();
        data.chunks_mut(d).for_each(softmax_in_place);
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push("softmax_rows", out, Op::SoftmaxRows { a }, &[a])
    }

    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (xv, g, b) = (self.val(x), self.val(gamma), self.val(beta));
        let d = xv.cols();
        if d == 0 || g.len() != d || b.len() != d {
            return Err(Error::shape(
                "layernorm",
                format!("x {:?}, gamma {:?}, beta {:?}", xv.shape(), g.shape(), b.shape()),
            ));
        }
        let rows = xv.rows();
        let mut xhat = vec![0.0; xv.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + eps).sqrt();
            rstd[r] = s;
            for j in 0..d {
                let h = (row[j] - mean) * s;
                xhat[r * d + j] = h;
                out[r * d + j] = g.data()[j] * h + b.data()[j];
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        self.push(
            "layernorm",
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        )
    }

    pub fn rmsnorm(&mut self, x: Var, gamma: Var, eps: f64) -> Result<Var> {
        let (xv, g) = (self.val(x), self.val(gamma));
        let d = xv.cols();
        if d == 0 || g.len() != d {
            return Err(Error::shape(
                "rmsnorm",
                format!("x {:?}, gamma {:?}", xv.shape(), g.shape()),
            ));
        }
        let rows = xv.rows();
        let mut xhat = vec![0.0; xv.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv.data()[r * d..(r + 1) * d];
            let ms = row.iter().map(|v| v * v).sum::<f64>() / d as f64;
            let s = 1.0 / (ms + eps).sqrt();
            rstd[r] = s;
            for j in 0..d {
                let h = row[j] * s;
                xhat[r * d + j] = h;
                out[r * d + j] = g.data()[j] * h;
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        self.push("rmsnorm", out, Op::RmsNorm { x, gamma, xhat, rstd }, &[x, gamma])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let x = self.val(a);
        let out = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v.max(0.0)).collect())?;
        self.push("relu", out, Op::Relu { a }, &[a])
    }

    /// `x * sigmoid(x)`.
    pub fn swish(&mut self, a: Var) -> Result<Var> {
        let x = self.val(a);
        let out = Tensor::new(
            x.shape().to_vec(),
            x.data().iter().map(|&v| v * sigmoid(v)).collect(),
        )?;
        self.push("swish", out, Op::Swish { a }, &[a])
    }

    /// Averages over the token axis: `[.., N, D] -> [.., D]`.
    pub fn mean_over_tokens(&mut self, a: Var) -> Result<Var> {
        let x = self.val(a);
        let shape = x.shape();
        if shape.len() < 2 || shape[shape.len() - 2] == 0 {
            return Err(Error::shape("mean_over_tokens", format!("{shape:?} has no token axis")));
        }
        let tokens = shape[shape.len() - 2];
        let d = x.cols();
        let groups = x.rows() / tokens;
        let mut out = vec![0.0; groups * d];
        let inv = 1.0 / tokens as f64;
        for b in 0..groups {
            let dst = &mut out[b * d..(b + 1) * d];
            for t in 0..tokens {
                let src = x.row(b * tokens + t);
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += s;
                }
            }
            dst.iter_mut().for_each(|v| *v *= inv);
        }
        let mut out_shape = shape[..shape.len() - 2].to_vec();
        out_shape.push(d);
        let out = Tensor::new(out_shape, out)?;
        self.push("mean_over_tokens", out, Op::MeanTokens { a, tokens }, &[a])
    }

    /// Multi-head scaled dot-product attention over `[B, N, D]` inputs.
    ///
    /// Head `h` uses feature columns `h*D/H .. (h+1)*D/H` of `q`, `k` and `v`;
    /// head outputs are written back into the same columns, which is the
    /// concatenation that the output projection consumes.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (qv, kv, vv) = (self.val(q), self.val(k), self.val(v));
        let shape = qv.shape().to_vec();
        if shape.len() != 3 || kv.shape() != shape.as_slice() || vv.shape() != shape.as_slice() {
            return Err(Error::shape(
                "attention",
                format!("q {:?}, k {:?}, v {:?}", shape, kv.shape(), vv.shape()),
            ));
        }
        let (batch, n, d) = (shape[0], shape[1], shape[2]);
        if heads == 0 || d % heads != 0 {
            return Err(Error::shape("attention", format!("width {d} not divisible by {heads} heads")));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut probs = vec![0.0; batch * heads * n * n];
        let mut out = vec![0.0; batch * n * d];
        let ld = d as isize;
        for b in 0..batch {
            for h in 0..heads {
                let off = b * n * d + h * dh;
                let p = &mut probs[(b * heads + h) * n * n..(b * heads + h + 1) * n * n];
                // scores = Q_h K_h^T
                gemm(
                    n,
                    dh,
                    n,
                    &qv.data()[off..],
                    (ld, 1),
                    &kv.data()[off..],
                    (1, ld),
                    p,
                    (n as isize, 1),
                    0.0,
                );
                for row in p.chunks_mut(n) {
                    softmax_scaled_in_place(row, scale);
                }
                gemm(
                    n,
                    n,
                    dh,
                    p,
                    (n as isize, 1),
                    &vv.data()[off..],
                    (ld, 1),
                    &mut out[off..],
                    (ld, 1),
                    0.0,
                );
            }
        }
        let out = Tensor::new(shape, out)?;
        self.push(
            "attention",
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                tokens: n,
                probs,
            },
            &[q, k, v],
        )
    }

    /// Appends one `[D]` token to the end of every sequence in `[B, N, D]`.
    pub fn append_token(&mut self, a: Var, token: Var) -> Result<Var> {
        let (x, t) = (self.val(a), self.val(token));
        let shape = x.shape();
        if shape.len() != 3 || t.len() != shape[2] {
            return Err(Error::shape("append_token", format!("{:?} with {:?}", shape, t.shape())));
        }
        let (batch, n, d) = (shape[0], shape[1], shape[2]);
        let mut data = Vec::with_capacity(batch * (n + 1) * d);
        for b in 0..batch {
            data.extend_from_slice(&x.data()[b * n * d..(b + 1) * n * d]);
            data.extend_from_slice(t.data());
        }
        let out = Tensor::new(vec![batch, n + 1, d], data)?;
        self.push("append_token", out, Op::AppendToken { a, token, tokens: n }, &[a, token])
    }

    /// Adds a `[N, D]` table to every sequence in `[B, N, D]`.
    pub fn add_positional(&mut self, a: Var, table: Var) -> Result<Var> {
        let (x, t) = (self.val(a), self.val(table));
        let shape = x.shape();
        if shape.len() != 3 || t.shape() != &shape[1..] {
            return Err(Error::shape("add_positional", format!("{:?} + {:?}", shape, t.shape())));
        }
        let per = t.len();
        let mut data = x.data().to_vec();
        for seq in data.chunks_mut(per) {
            for (v, p) in seq.iter_mut().zip(t.data()) {
                *v += p;
            }
        }
        let out = Tensor::new(shape.to_vec(), data)?;
        self.push("add_positional", out, Op::AddPositional { a, table }, &[a, table])
    }

    /// Picks token `index` of every sequence: `[B, N, D] -> [B, D]`.
    pub fn select_token(&mut self, a: Var, index: usize) -> Result<Var> {
        let x = self.val(a);
        let shape = x.shape();
        if shape.len() != 3 || index >= shape[1] {
            return Err(Error::shape("select_token", format!("index {index} of {shape:?}")));
        }
        let (batch, n, d) = (shape[0], shape[1], shape[2]);
        let mut data = Vec::with_capacity(batch * d);
        for b in 0..batch {
            data.extend_from_slice(x.row(b * n + index));
        }
        let out = Tensor::new(vec![batch, d], data)?;
        self.push("select_token", out, Op::SelectToken { a, index, tokens: n }, &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.val(a).clone().reshape(shape)?;
        self.push("reshape", out, Op::Reshape { a }, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.val(a).sum());
        self.push("sum", out, Op::Sum { a }, &[a])
    }

    /// Batch-mean mixed L1 loss on `[B, 2]` predictions:
    /// `lambda * |pred - a|_1 + (1 - lambda) * |pred - b|_1`.
    pub fn srm_l1(&mut self, pred: Var, target_a: &[f64], target_b: &[f64], lambdas: &[f64]) -> Result<Var> {
        let p = self.val(pred);
        let d = p.cols();
        let batch = p.rows();
        if target_a.len() != p.len() || target_b.len() != p.len() || lambdas.len() != batch || batch == 0 {
            return Err(Error::shape(
                "srm_l1",
                format!("pred {:?}, {} lambdas", p.shape(), lambdas.len()),
            ));
        }
        let mut total = 0.0;
        for r in 0..batch {
            let lam = lambdas[r];
            let mut la = 0.0;
            let mut lb = 0.0;
            for j in 0..d {
                let i = r * d + j;
                la += (p.data()[i] - target_a[i]).abs();
                lb += (p.data()[i] - target_b[i]).abs();
            }
            total += lam * la + (1.0 - lam) * lb;
        }
        let out = Tensor::scalar(total / batch as f64);
        self.push(
            "srm_l1",
            out,
            Op::SrmL1 {
                pred,
                target_a: target_a.to_vec(),
                target_b: target_b.to_vec(),
                lambdas: lambdas.to_vec(),
            },
            &[pred],
        )
    }

    /// Reverse sweep from a scalar output. Gradients of fan-out uses add up.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.val(output).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("output must be scalar, got {:?}", self.val(output).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::filled(self.val(output).shape(), 1.0));
        for i in (0..=output.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.needs(*a) {
                    let da = acc(grads, *a, av.shape());
                    gemm(m, n, k, gd, (n as isize, 1), bv.data(), (1, n as isize), da, (k as isize, 1), 1.0);
                }
                if self.needs(*b) {
                    let db = acc(grads, *b, bv.shape());
                    gemm(k, m, n, av.data(), (1, k as isize), gd, (n as isize, 1), db, (n as isize, 1), 1.0);
                }
            }
            Op::Add { a, b } => {
                for p in [a, b] {
                    if self.needs(*p) {
                        add_into(acc(grads, *p, g.shape()), gd);
                    }
                }
            }
            Op::AddRow { a, bias } => {
                if self.needs(*a) {
                    add_into(acc(grads, *a, g.shape()), gd);
                }
                if self.needs(*bias) {
                    let bshape = self.val(*bias).shape().to_vec();
                    let db = acc(grads, *bias, &bshape);
                    for row in gd.chunks(db.len()) {
                        add_into(db, row);
                    }
                }
            }
            Op::Scale { a, factor } => {
                if self.needs(*a) {
                    let da = acc(grads, *a, g.shape());
                    da.iter_mut().zip(gd).for_each(|(d, x)| *d += factor * x);
                }
            }
            Op::Hadamard { a, b } => {
                let (av, bv) = (self.val(*a), self.val(*b));
                if self.needs(*a) {
                    let da = acc(grads, *a, g.shape());
                    for ((d, x), y) in da.iter_mut().zip(gd).zip(bv.data()) {
                        *d += x * y;
                    }
                }
                if self.needs(*b) {
                    let db = acc(grads, *b, g.shape());
                    for ((d, x), y) in db.iter_mut().zip(gd).zip(av.data()) {
                        *d += x * y;
                    }
                }
            }
            Op::Transpose { a } => {
                if self.needs(*a) {
                    let gt = g.transpose().expect("transpose of recorded 2-D value");
                    add_into(acc(grads, *a, gt.shape()), gt.data());
                }
            }
            Op::SoftmaxRows { a } => {
                if self.needs(*a) {
                    let y = node.value.data();
                    let d = node.value.cols();
                    let da = acc(grads, *a, g.shape());
                    for ((dr, yr), gr) in da.chunks_mut(d).zip(y.chunks(d)).zip(gd.chunks(d)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for j in 0..d {
                            dr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let gam = self.val(*gamma).data();
                let d = gam.len();
                if self.needs(*gamma) {
                    let dg = acc(grads, *gamma, &[d]);
                    for (gr, hr) in gd.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            dg[j] += gr[j] * hr[j];
                        }
                    }
                }
                if self.needs(*beta) {
                    let db = acc(grads, *beta, &[d]);
                    for gr in gd.chunks(d) {
                        add_into(db, gr);
                    }
                }
                if self.needs(*x) {
                    let dx = acc(grads, *x, g.shape());
                    let mut dh = vec![0.0; d];
                    for (r, ((dxr, gr), hr)) in dx.chunks_mut(d).zip(gd.chunks(d)).zip(xhat.chunks(d)).enumerate() {
                        for j in 0..d {
                            dh[j] = gr[j] * gam[j];
                        }
                        let mean_dh = dh.iter().sum::<f64>() / d as f64;
                        let mean_dhh = dh.iter().zip(hr).map(|(p, q)| p * q).sum::<f64>() / d as f64;
                        for j in 0..d {
                            dxr[j] += rstd[r] * (dh[j] - mean_dh - hr[j] * mean_dhh);
                        }
                    }
                }
            }
            Op::RmsNorm { x, gamma, xhat, rstd } => {
                let gam = self.val(*gamma).data();
                let d = gam.len();
                if self.needs(*gamma) {
                    let dg = acc(grads, *gamma, &[d]);
                    for (gr, hr) in gd.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            dg[j] += gr[j] * hr[j];
                        }
                    }
                }
                if self.needs(*x) {
                    let dx = acc(grads, *x, g.shape());
                    let mut dh = vec![0.0; d];
                    for (r, ((dxr, gr), hr)) in dx.chunks_mut(d).zip(gd.chunks(d)).zip(xhat.chunks(d)).enumerate() {
                        for j in 0..d {
                            dh[j] = gr[j] * gam[j];
                        }
                        let mean_dhh = dh.iter().zip(hr).map(|(p, q)| p * q).sum::<f64>() / d as f64;
                        for j in 0..d {
                            dxr[j] += rstd[r] * (dh[j] - hr[j] * mean_dhh);
                        }
                    }
                }
            }
            Op::Relu { a } => {
                if self.needs(*a) {
                    let xv = self.val(*a).data();
                    let da = acc(grads, *a, g.shape());
                    for ((d, x), gv) in da.iter_mut().zip(xv).zip(gd) {
                        if *x > 0.0 {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Swish { a } => {
                if self.needs(*a) {
                    let xv = self.val(*a).data();
                    let da = acc(grads, *a, g.shape());
                    for ((d, &x), gv) in da.iter_mut().zip(xv).zip(gd) {
                        let s = sigmoid(x);
                        *d += gv * s * (1.0 + x * (1.0 - s));
                    }
                }
            }
            Op::MeanTokens { a, tokens } => {
                if self.needs(*a) {
                    let ashape = self.val(*a).shape().to_vec();
                    let d = g.cols();
                    let inv = 1.0 / *tokens as f64;
                    let da = acc(grads, *a, &ashape);
                    for (b, gr) in gd.chunks(d).enumerate() {
                        for t in 0..*tokens {
                            let dst = &mut da[(b * tokens + t) * d..(b * tokens + t + 1) * d];
                            dst.iter_mut().zip(gr).for_each(|(o, x)| *o += x * inv);
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                tokens,
                probs,
            } => self.attention_backward(*q, *k, *v, *heads, *tokens, probs, gd, grads),
            Op::AppendToken { a, token, tokens } => {
                let d = g.cols();
                let n1 = tokens + 1;
                let batch = g.rows() / n1;
                if self.needs(*a) {
                    let ashape = self.val(*a).shape().to_vec();
                    let da = acc(grads, *a, &ashape);
                    for b in 0..batch {
                        add_into(&mut da[b * tokens * d..(b + 1) * tokens * d], &gd[b * n1 * d..(b * n1 + tokens) * d]);
                    }
                }
                if self.needs(*token) {
                    let dt = acc(grads, *token, &[d]);
                    for b in 0..batch {
                        add_into(dt, &gd[(b * n1 + tokens) * d..(b + 1) * n1 * d]);
                    }
                }
            }
            Op::AddPositional { a, table } => {
                if self.needs(*a) {
                    add_into(acc(grads, *a, g.shape()), gd);
                }
                if self.needs(*table) {
                    let tshape = self.val(*table).shape().to_vec();
                    let dt = acc(grads, *table, &tshape);
                    let per = dt.len();
                    for seq in gd.chunks(per) {
                        add_into(dt, seq);
                    }
                }
            }
            Op::SelectToken { a, index, tokens } => {
                if self.needs(*a) {
                    let ashape = self.val(*a).shape().to_vec();
                    let d = g.cols();
                    let da = acc(grads, *a, &ashape);
                    for (b, gr) in gd.chunks(d).enumerate() {
                        let r = b * tokens + index;
                        add_into(&mut da[r * d..(r + 1) * d], gr);
                    }
                }
            }
            Op::Reshape { a } => {
                if self.needs(*a) {
                    let ashape = self.val(*a).shape().to_vec();
                    add_into(acc(grads, *a, &ashape), gd);
                }
            }
            Op::Sum { a } => {
                if self.needs(*a) {
                    let ashape = self.val(*a).shape().to_vec();
                    let seed = gd[0];
                    acc(grads, *a, &ashape).iter_mut().for_each(|d| *d += seed);
                }
            }
            Op::SrmL1 {
                pred,
                target_a,
                target_b,
                lambdas,
            } => {
                if self.needs(*pred) {
                    let p = self.val(*pred);
                    let d = p.cols();
                    let seed = gd[0] / lambdas.len() as f64;
                    let dp = acc(grads, *pred, p.shape());
                    for (i, (dv, pv)) in dp.iter_mut().zip(p.data()).enumerate() {
                        let lam = lambdas[i / d];
                        *dv += seed * (lam * sign(pv - target_a[i]) + (1.0 - lam) * sign(pv - target_b[i]));
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        n: usize,
        probs: &[f64],
        gd: &[f64],
        grads: &mut [Option<Tensor>],
    ) {
        let shape = self.val(q).shape().to_vec();
        let (batch, d) = (shape[0], shape[2]);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let ld = d as isize;
        let nn = n as isize;
        let (qv, kv, vv) = (self.val(q).data(), self.val(k).data(), self.val(v).data());

        let mut dq = if self.needs(q) { take_or_zero(grads, q, &shape) } else { Vec::new() };
        let mut dk = if self.needs(k) { take_or_zero(grads, k, &shape) } else { Vec::new() };
        let mut dv = if self.needs(v) { take_or_zero(grads, v, &shape) } else { Vec::new() };
        let mut dp = vec![0.0; n * n];
        for b in 0..batch {
            for h in 0..heads {
                let off = b * n * d + h * dh;
                let p = &probs[(b * heads + h) * n * n..(b * heads + h + 1) * n * n];
                if !dv.is_empty() {
                    // dV += P^T dO
                    gemm(n, n, dh, p, (1, nn), &gd[off..], (ld, 1), &mut dv[off..], (ld, 1), 1.0);
                }
                if dq.is_empty() && dk.is_empty() {
                    continue;
                }
                // dP = dO V^T
                gemm(n, dh, n, &gd[off..], (ld, 1), &vv[off..], (1, ld), &mut dp, (nn, 1), 0.0);
                // dS = P * (dP - rowsum(dP * P)), folded with the score scale
                for (dr, pr) in dp.chunks_mut(n).zip(p.chunks(n)) {
                    let dot: f64 = dr.iter().zip(pr).map(|(x, y)| x * y).sum();
                    for j in 0..n {
                        dr[j] = pr[j] * (dr[j] - dot) * scale;
                    }
                }
                if !dq.is_empty() {
                    gemm(n, n, dh, &dp, (nn, 1), &kv[off..], (ld, 1), &mut dq[off..], (ld, 1), 1.0);
                }
                if !dk.is_empty() {
                    gemm(n, n, dh, &dp, (1, nn), &qv[off..], (ld, 1), &mut dk[off..], (ld, 1), 1.0);
                }
            }
        }
        for (var, buf) in [(q, dq), (k, dk), (v, dv)] {
            if buf.is_empty() {
                continue;
            }
            match grads[var.0].as_mut() {
                Some(existing) => add_into(existing.data_mut(), &buf),
                None => grads[var.0] = Some(Tensor::new(shape.clone(), buf).expect("attention grad shape")),
            }
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

/// Gradient buffer for `var`, created as zeros on first touch.
fn acc<'a>(grads: &'a mut [Option<Tensor>], var: Var, shape: &[usize]) -> &'a mut [f64] {
    grads[var.0]
        .get_or_insert_with(|| Tensor::zeros(shape))
        .data_mut()
}

fn take_or_zero(grads: &mut [Option<Tensor>], var: Var, shape: &[usize]) -> Vec<f64> {
    grads[var.0]
        .take()
        .map(Tensor::into_data)
        .unwrap_or_else(|| vec![0.0; shape.iter().product()])
}
