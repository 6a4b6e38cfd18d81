//! Reverse-mode differentiation over real `(channels, rows, cols)` tensors.
//!
//! A [`Tape`] owns a flat parameter vector. Convolution nodes read their
//! kernels from it by offset, so several nodes may share one parameter block
//! and their gradients accumulate. Nodes are appended in evaluation order,
//! which is therefore a topological order; [`backward`] sweeps it in reverse.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mrisim::{CoilImageSet, KSpaceSet};
use crate::numkernel::{fft2_centered, ifft2_centered, ComplexImage, C64};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != c * h * w {
            return Err(Error::DimensionMismatch(format!(
                "tensor {c}x{h}x{w} needs {} values, got {}",
                c * h * w,
                data.len()
            )));
        }
        Ok(Self { c, h, w, data })
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            c: 1,
            h: 1,
            w: 1,
            data: vec![v],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.h * self.w;
        &self.data[c * n..(c + 1) * n]
    }

    /// Coil images as `2N` channels, real part at `2i`, imaginary at `2i + 1`.
    pub fn from_coils(set: &CoilImageSet) -> Self {
        let (h, w) = set.shape();
        let n = h * w;
        let mut t = Self::zeros(2 * set.n_coils(), h, w);
        for (i, coil) in set.coils().iter().enumerate() {
            for (p, z) in coil.data().iter().enumerate() {
                t.data[2 * i * n + p] = z.re;
                t.data[(2 * i + 1) * n + p] = z.im;
            }
        }
        t
    }

    pub fn to_coils(&self) -> Result<CoilImageSet> {
        if self.c % 2 != 0 || self.c == 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} channels cannot hold complex coil images",
                self.c
            )));
        }
        let n = self.h * self.w;
        let coils = (0..self.c / 2)
            .map(|i| {
                let re = &self.data[2 * i * n..(2 * i + 1) * n];
                let im = &self.data[(2 * i + 1) * n..(2 * i + 2) * n];
                let data = re.iter().zip(im).map(|(&a, &b)| C64::new(a, b)).collect();
                ComplexImage::from_vec(self.h, self.w, data)
            })
            .collect::<Result<Vec<_>>>()?;
        CoilImageSet::new(coils)
    }
}

/// Kernel location and shape inside the parameter vector. Weights are laid
/// out `[cout][cin][ky][kx]`, followed by `cout` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub offset: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

impl ConvSpec {
    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }

    pub fn len(&self) -> usize {
        self.weight_len() + self.cout
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

enum Op {
    Input,
    Conv(NodeId, ConvSpec),
    Relu(NodeId, Vec<bool>),
    AvgPool(NodeId),
    Upsample(NodeId),
    Concat(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Dc {
        x: NodeId,
        ksp: Arc<KSpaceSet>,
        theta: usize,
    },
    Sos(NodeId),
    Mse {
        x: NodeId,
        target: Arc<Tensor>,
        scale: f64,
    },
    SoftmaxCe {
        x: NodeId,
        labels: Arc<Vec<u8>>,
        probs: Tensor,
    },
    Combine {
        a: NodeId,
        b: NodeId,
        beta: f64,
    },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Regulariser inside the root of the sum-of-squares node, keeping its
/// gradient finite at zero.
pub const SOS_DELTA: f64 = 1e-12;

/// Probability floor of the cross-entropy.
pub const CE_FLOOR: f64 = 1e-12;

/// ReLU activity masks in recording order.
pub type ReluPattern = Vec<Vec<bool>>;

pub struct Tape {
    params: Arc<Vec<f64>>,
    nodes: Vec<Node>,
    consumed: bool,
    frozen: Option<Arc<ReluPattern>>,
    relu_count: usize,
    relu_flips: usize,
}

impl Tape {
    pub fn new(params: Arc<Vec<f64>>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            consumed: false,
            frozen: None,
            relu_count: 0,
            relu_flips: 0,
        }
    }

    /// Tape whose ReLUs use `pattern` instead of the sign of their input, so
    /// nearby parameter values evaluate the same linear piece. Used for
    /// finite-difference checks across activation kinks.
    pub fn with_frozen_relu(params: Arc<Vec<f64>>, pattern: Arc<ReluPattern>) -> Self {
        Self {
            frozen: Some(pattern),
            ..Self::new(params)
        }
    }

    pub fn relu_pattern(&self) -> ReluPattern {
        self.nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::Relu(_, active) => Some(active.clone()),
                _ => None,
            })
            .collect()
    }

    /// Frozen ReLU entries whose input sign disagrees with the pattern.
    pub fn relu_flips(&self) -> usize {
        self.relu_flips
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Input, t)
    }

    pub fn conv(&mut self, x: NodeId, spec: ConvSpec) -> Result<NodeId> {
        let xv = &self.nodes[x].value;
        if xv.c != spec.cin {
            return Err(Error::DimensionMismatch(format!(
                "conv expects {} channels, got {}",
                spec.cin, xv.c
            )));
        }
        if spec.offset + spec.len() > self.params.len() {
            return Err(Error::DimensionMismatch("conv kernel outside parameter vector".into()));
        }
        let y = conv_forward(xv, &self.params[spec.offset..spec.offset + spec.len()], spec);
        Ok(self.push(Op::Conv(x, spec), y))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let mut y = self.nodes[x].value.clone();
        let active: Vec<bool> = match &self.frozen {
            Some(p) => {
                let a = p
                    .get(self.relu_count)
                    .filter(|a| a.len() == y.data.len())
                    .ok_or_else(|| Error::DimensionMismatch("frozen ReLU pattern does not fit".into()))?;
                a.clone()
            }
            None => y.data.iter().map(|&v| v > 0.0).collect(),
        };
        self.relu_count += 1;
        if self.frozen.is_some() {
            self.relu_flips += y.data.iter().zip(&active).filter(|(v, a)| (**v > 0.0) != **a).count();
        }
        for (v, &a) in y.data.iter_mut().zip(&active) {
            if !a {
                *v = 0.0;
            }
        }
        Ok(self.push(Op::Relu(x, active), y))
    }

    /// 2x2 mean pooling; an odd trailing row or column is dropped.
    pub fn avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = &self.nodes[x].value;
        if xv.h < 2 || xv.w < 2 {
            return Err(Error::DimensionTooSmall { rows: xv.h, cols: xv.w });
        }
        let (c, h, w) = (xv.c, xv.h / 2, xv.w / 2);
        let mut y = Tensor::zeros(c, h, w);
        for ch in 0..c {
            let src = xv.plane(ch);
            for r in 0..h {
                for q in 0..w {
                    let i = 2 * r * xv.w + 2 * q;
                    y.data[(ch * h + r) * w + q] =
                        0.25 * (src[i] + src[i + 1] + src[i + xv.w] + src[i + xv.w + 1]);
                }
            }
        }
        Ok(self.push(Op::AvgPool(x), y))
    }

    /// Nearest-neighbour upsampling to `(h, w)`; source index `min(i / 2, last)`.
    pub fn upsample(&mut self, x: NodeId, h: usize, w: usize) -> NodeId {
        let xv = &self.nodes[x].value;
        let mut y = Tensor::zeros(xv.c, h, w);
        for ch in 0..xv.c {
            let src = xv.plane(ch);
            for r in 0..h {
                let sr = (r / 2).min(xv.h - 1);
                for q in 0..w {
                    let sq = (q / 2).min(xv.w - 1);
                    y.data[(ch * h + r) * w + q] = src[sr * xv.w + sq];
                }
            }
        }
        self.push(Op::Upsample(x), y)
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
        if (av.h, av.w) != (bv.h, bv.w) {
            return Err(Error::DimensionMismatch("concat of different spatial sizes".into()));
        }
        let mut data = av.data.clone();
        data.extend_from_slice(&bv.data);
        let y = Tensor::from_vec(av.c + bv.c, av.h, av.w, data)?;
        Ok(self.push(Op::Concat(a, b), y))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
        if av.shape() != bv.shape() {
            return Err(Error::DimensionMismatch("sub of different shapes".into()));
        }
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| x - y).collect();
        let y = Tensor::from_vec(av.c, av.h, av.w, data)?;
        Ok(self.push(Op::Sub(a, b), y))
    }

    /// Data consistency with `lambda = exp(params[theta])`.
    pub fn dc(&mut self, x: NodeId, ksp: Arc<KSpaceSet>, theta: usize) -> Result<NodeId> {
        let lambda = self.params[theta].exp();
        let xs = self.nodes[x].value.to_coils()?;
        let y = super::dc_solve(&xs, &ksp, lambda)?;
        Ok(self.push(Op::Dc { x, ksp, theta }, Tensor::from_coils(&y)))
    }

    /// `sqrt(sum_c x_c^2 + SOS_DELTA)` per pixel.
    pub fn sos(&mut self, x: NodeId) -> NodeId {
        let xv = &self.nodes[x].value;
        let n = xv.h * xv.w;
        let mut y = Tensor::zeros(1, xv.h, xv.w);
        for ch in 0..xv.c {
            for (o, v) in y.data.iter_mut().zip(xv.plane(ch)) {
                *o += v * v;
            }
        }
        y.data.iter_mut().take(n).for_each(|v| *v = (*v + SOS_DELTA).sqrt());
        self.push(Op::Sos(x), y)
    }

    /// `scale * ||x - target||^2`.
    pub fn mse(&mut self, x: NodeId, target: Arc<Tensor>, scale: f64) -> Result<NodeId> {
        let xv = &self.nodes[x].value;
        if xv.shape() != target.shape() {
            return Err(Error::DimensionMismatch("loss target shape differs".into()));
        }
        let s: f64 = xv.data.iter().zip(&target.data).map(|(a, b)| (a - b).powi(2)).sum();
        Ok(self.push(Op::Mse { x, target, scale }, Tensor::scalar(scale * s)))
    }

    /// Pixel-mean of `-ln max(softmax(x)[label], CE_FLOOR)` over the channel axis.
    pub fn softmax_ce(&mut self, x: NodeId, labels: Arc<Vec<u8>>) -> Result<NodeId> {
        let xv = &self.nodes[x].value;
        let n = xv.h * xv.w;
        if labels.len() != n || labels.iter().any(|&l| l as usize >= xv.c) {
            return Err(Error::DimensionMismatch("labels do not match logits".into()));
        }
        let probs = softmax(xv);
        let loss: f64 = labels
            .iter()
            .enumerate()
            .map(|(p, &l)| -probs.data[l as usize * n + p].max(CE_FLOOR).ln())
            .sum::<f64>()
            / n as f64;
        Ok(self.push(Op::SoftmaxCe { x, labels, probs }, Tensor::scalar(loss)))
    }

    /// Scalar `a + beta * b`.
    pub fn combine(&mut self, a: NodeId, b: NodeId, beta: f64) -> Result<NodeId> {
        let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
        if av.data.len() != 1 || bv.data.len() != 1 {
            return Err(Error::DimensionMismatch("combine needs scalar nodes".into()));
        }
        let v = av.data[0] + beta * bv.data[0];
        Ok(self.push(Op::Combine { a, b, beta }, Tensor::scalar(v)))
    }
}

/// Channel softmax of a `(c, h, w)` tensor.
pub fn softmax(x: &Tensor) -> Tensor {
    let n = x.h * x.w;
    let mut out = Tensor::zeros(x.c, x.h, x.w);
    for p in 0..n {
        let mx = (0..x.c).map(|c| x.data[c * n + p]).fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for c in 0..x.c {
            let e = (x.data[c * n + p] - mx).exp();
            out.data[c * n + p] = e;
            z += e;
        }
        for c in 0..x.c {
            out.data[c * n + p] /= z;
        }
    }
    out
}

/// Zero-padded patch matrix of shape `(cin k k) x (h w)`.
fn im2col(x: &Tensor, k: usize) -> Vec<f64> {
    let (h, w) = (x.h, x.w);
    let half = (k / 2) as isize;
    let mut cols = vec![0.0; x.c * k * k * h * w];
    for ci in 0..x.c {
        let src = x.plane(ci);
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * h * w..(row + 1) * h * w];
                let dy = ky as isize - half;
                let dx = kx as isize - half;
                for r in 0..h {
                    let sr = r as isize + dy;
                    if sr < 0 || sr >= h as isize {
                        continue;
                    }
                    let q0 = (-dx).max(0) as usize;
                    let q1 = (w as isize - dx).min(w as isize) as usize;
                    if q0 >= q1 {
                        continue;
                    }
                    let s0 = (sr as usize) * w + (q0 as isize + dx) as usize;
                    dst[r * w + q0..r * w + q1].copy_from_slice(&src[s0..s0 + (q1 - q0)]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
fn col2im(cols: &[f64], c: usize, h: usize, w: usize, k: usize) -> Tensor {
    let half = (k / 2) as isize;
    let mut out = Tensor::zeros(c, h, w);
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * h * w..(row + 1) * h * w];
                let dy = ky as isize - half;
                let dx = kx as isize - half;
                let dst = &mut out.data[ci * h * w..(ci + 1) * h * w];
                for r in 0..h {
                    let sr = r as isize + dy;
                    if sr < 0 || sr >= h as isize {
                        continue;
                    }
                    let q0 = (-dx).max(0) as usize;
                    let q1 = (w as isize - dx).min(w as isize) as usize;
                    if q0 >= q1 {
                        continue;
                    }
                    let s0 = (sr as usize) * w + (q0 as isize + dx) as usize;
                    for (d, s) in dst[s0..s0 + (q1 - q0)].iter_mut().zip(&src[r * w + q0..r * w + q1]) {
                        *d += s;
                    }
                }
            }
        }
    }
    out
}

/// `C = alpha * op(A) op(B) + beta * C` on row-major buffers; `ta`/`tb` transpose.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, beta: f64, c: &mut [f64]) {
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the asserted lengths cover every index reachable with these strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn conv_forward(x: &Tensor, p: &[f64], s: ConvSpec) -> Tensor {
    let hw = x.h * x.w;
    let kk = s.cin * s.k * s.k;
    let (weights, bias) = p.split_at(s.weight_len());
    let mut y = Tensor::zeros(s.cout, x.h, x.w);
    for (co, b) in bias.iter().enumerate() {
        y.data[co * hw..(co + 1) * hw].fill(*b);
    }
    if s.k == 1 {
        gemm(s.cout, kk, hw, weights, false, &x.data, false, 1.0, &mut y.data);
    } else {
        let cols = im2col(x, s.k);
        gemm(s.cout, kk, hw, weights, false, &cols, false, 1.0, &mut y.data);
    }
    y
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(t) => t.data.iter_mut().zip(&g.data).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

/// Gradient of the tape's last (scalar) node, times `seed`, with respect to
/// the parameter vector. Consumes the tape's saved intermediates.
pub fn backward(tape: &mut Tape, seed: f64) -> Result<Vec<f64>> {
    Ok(backward_with_inputs(tape, seed)?.0)
}

/// Like [`backward`], also returning the cotangent of every input node
/// (`None` when the loss does not depend on it), indexed by input order.
pub fn backward_with_inputs(tape: &mut Tape, seed: f64) -> Result<(Vec<f64>, Vec<Option<Tensor>>)> {
    if tape.consumed {
        return Err(Error::TapeConsumed);
    }
    let last = match tape.nodes.last() {
        Some(n) if n.value.data.len() == 1 => tape.nodes.len() - 1,
        _ => return Err(Error::InvalidArgument("tape does not end in a scalar".into())),
    };
    let mut grad = vec![0.0; tape.params.len()];
    let mut adj: Vec<Option<Tensor>> = (0..tape.nodes.len()).map(|_| None).collect();
    adj[last] = Some(Tensor::scalar(seed));
    let input_ids: Vec<NodeId> = (0..tape.nodes.len())
        .filter(|&i| matches!(tape.nodes[i].op, Op::Input))
        .collect();
    let mut inputs: Vec<Option<Tensor>> = vec![None; input_ids.len()];

    for id in (0..tape.nodes.len()).rev() {
        let Some(g) = adj[id].take() else { continue };
        let node = &tape.nodes[id];
        match &node.op {
            Op::Input => {
                let k = input_ids.binary_search(&id).expect("input ids are sorted");
                inputs[k] = Some(g);
            }
            Op::Conv(x, s) => {
                let xv = &tape.nodes[*x].value;
                let hw = xv.h * xv.w;
                let kk = s.cin * s.k * s.k;
                let (gw, gb) = grad[s.offset..s.offset + s.len()].split_at_mut(s.weight_len());
                for (co, b) in gb.iter_mut().enumerate() {
                    *b += g.data[co * hw..(co + 1) * hw].iter().sum::<f64>();
                }
                let weights = &tape.params[s.offset..s.offset + s.weight_len()];
                if s.k == 1 {
                    gemm(s.cout, hw, kk, &g.data, false, &xv.data, true, 1.0, gw);
                    let mut dx = Tensor::zeros(s.cin, xv.h, xv.w);
                    gemm(kk, s.cout, hw, weights, true, &g.data, false, 0.0, &mut dx.data);
                    accumulate(&mut adj[*x], dx);
                } else {
                    let cols = im2col(xv, s.k);
                    gemm(s.cout, hw, kk, &g.data, false, &cols, true, 1.0, gw);
                    let mut dcols = cols;
                    gemm(kk, s.cout, hw, weights, true, &g.data, false, 0.0, &mut dcols);
                    accumulate(&mut adj[*x], col2im(&dcols, s.cin, xv.h, xv.w, s.k));
                }
            }
            Op::Relu(x, active) => {
                let mut dx = g;
                for (d, &a) in dx.data.iter_mut().zip(active) {
                    if !a {
                        *d = 0.0;
                    }
                }
                accumulate(&mut adj[*x], dx);
            }
            Op::AvgPool(x) => {
                let xv = &tape.nodes[*x].value;
                let mut dx = Tensor::zeros(xv.c, xv.h, xv.w);
                let (h, w) = (g.h, g.w);
                for ch in 0..g.c {
                    for r in 0..h {
                        for q in 0..w {
                            let v = 0.25 * g.data[(ch * h + r) * w + q];
                            let i = ch * xv.h * xv.w + 2 * r * xv.w + 2 * q;
                            dx.data[i] += v;
                            dx.data[i + 1] += v;
                            dx.data[i + xv.w] += v;
                            dx.data[i + xv.w + 1] += v;
                        }
                    }
                }
                accumulate(&mut adj[*x], dx);
            }
            Op::Upsample(x) => {
                let xv = &tape.nodes[*x].value;
                let mut dx = Tensor::zeros(xv.c, xv.h, xv.w);
                for ch in 0..g.c {
                    for r in 0..g.h {
                        let sr = (r / 2).min(xv.h - 1);
                        for q in 0..g.w {
                            let sq = (q / 2).min(xv.w - 1);
                            dx.data[(ch * xv.h + sr) * xv.w + sq] += g.data[(ch * g.h + r) * g.w + q];
                        }
                    }
                }
                accumulate(&mut adj[*x], dx);
            }
            Op::Concat(a, b) => {
                let ca = tape.nodes[*a].value.c;
                let split = ca * g.h * g.w;
                let ga = Tensor::from_vec(ca, g.h, g.w, g.data[..split].to_vec())?;
                let gb = Tensor::from_vec(g.c - ca, g.h, g.w, g.data[split..].to_vec())?;
                accumulate(&mut adj[*a], ga);
                accumulate(&mut adj[*b], gb);
            }
            Op::Sub(a, b) => {
                let mut neg = g.clone();
                neg.data.iter_mut().for_each(|v| *v = -*v);
                accumulate(&mut adj[*a], g);
                accumulate(&mut adj[*b], neg);
            }
            Op::Dc { x, ksp, theta } => {
                let lambda = tape.params[*theta].exp();
                let xs = tape.nodes[*x].value.to_coils()?;
                let gy = g.to_coils()?;
                let (dx, dlambda) = dc_backward(&xs, &gy, ksp, lambda);
                grad[*theta] += lambda * dlambda;
                accumulate(&mut adj[*x], Tensor::from_coils(&dx));
            }
            Op::Sos(x) => {
                let xv = &tape.nodes[*x].value;
                let n = xv.h * xv.w;
                let mut dx = Tensor::zeros(xv.c, xv.h, xv.w);
                for ch in 0..xv.c {
                    for p in 0..n {
                        dx.data[ch * n + p] = g.data[p] * xv.data[ch * n + p] / node.value.data[p];
                    }
                }
                accumulate(&mut adj[*x], dx);
            }
            Op::Mse { x, target, scale } => {
                let xv = &tape.nodes[*x].value;
                let f = 2.0 * scale * g.data[0];
                let data = xv.data.iter().zip(&target.data).map(|(a, b)| f * (a - b)).collect();
                accumulate(&mut adj[*x], Tensor::from_vec(xv.c, xv.h, xv.w, data)?);
            }
            Op::SoftmaxCe { x, labels, probs } => {
                let n = probs.h * probs.w;
                let f = g.data[0] / n as f64;
                let mut dx = Tensor::zeros(probs.c, probs.h, probs.w);
                for (p, &l) in labels.iter().enumerate() {
                    // The floor makes the loss locally constant.
                    if probs.data[l as usize * n + p] < CE_FLOOR {
                        continue;
                    }
                    for c in 0..probs.c {
                        let onehot = if c == l as usize { 1.0 } else { 0.0 };
                        dx.data[c * n + p] = f * (probs.data[c * n + p] - onehot);
                    }
                }
                accumulate(&mut adj[*x], dx);
            }
            Op::Combine { a, b, beta } => {
                accumulate(&mut adj[*a], Tensor::scalar(g.data[0]));
                accumulate(&mut adj[*b], Tensor::scalar(beta * g.data[0]));
            }
        }
    }
    tape.nodes.clear();
    tape.nodes.shrink_to_fit();
    tape.consumed = true;
    Ok((grad, inputs))
}

/// Pullback of `y = F^-1[(m b + lambda F x) / (m + lambda)]`: returns the
/// cotangent of `x` and `dL/dlambda`. The x-map is Hermitian, so its adjoint
/// is itself without the data term.
fn dc_backward(x: &CoilImageSet, gy: &CoilImageSet, ksp: &KSpaceSet, lambda: f64) -> (CoilImageSet, f64) {
    let mask = ksp.mask.grid();
    let mut dlambda = 0.0;
    let coils = x
        .coils()
        .iter()
        .zip(gy.coils())
        .zip(&ksp.coils)
        .map(|((xc, gc), bc)| {
            let fx = fft2_centered(xc);
            let mut fg = fft2_centered(gc);
            for (i, fgv) in fg.data_mut().iter_mut().enumerate() {
                let m = mask[i] as f64;
                let denom = m + lambda;
                if m > 0.0 {
                    let dk = (fx.data()[i] - bc.data()[i]) * (m / (denom * denom));
                    dlambda += (fgv.conj() * dk).re;
                }
                *fgv *= lambda / denom;
            }
            ifft2_centered(&fg)
        })
        .collect();
    (CoilImageSet::new(coils).expect("shapes match input"), dlambda)
}
