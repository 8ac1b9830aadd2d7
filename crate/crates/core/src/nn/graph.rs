//! Tape-based reverse-mode differentiation over a fixed set of layer ops.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and backward is a single reverse sweep.

use std::collections::HashMap;

use super::{Gradients, ParamId, ParameterRegistry, Tensor};
use crate::error::{invalid, Result};
use crate::geometry::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Convolution padding mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Valid,
    Same,
}

/// A differentiable operation defined outside this module.
///
/// `backward` returns one gradient buffer per input (same length as that
/// input's values); an empty buffer means "no gradient".
pub trait CustomOp {
    fn name(&self) -> &'static str;
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &[f64]) -> Vec<Vec<f64>>;
}

enum Op {
    Constant,
    Param(ParamId),
    Conv2d { input: Var, weight: Var, bias: Var, pad: usize },
    Relu(Var),
    Sigmoid(Var),
    MaxPool2 { input: Var, argmax: Vec<usize> },
    RoiPool { input: Var, argmax: Vec<usize> },
    Linear { input: Var, weight: Var, bias: Var },
    Softmax { input: Var, axis: usize },
    Mul(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    SumAxis0(Var),
    Sum(Var),
    Bce { input: Var, targets: Vec<f64>, weights: Vec<f64>, eps: f64 },
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp> },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Constant | Op::Param(_) => vec![],
            Op::Conv2d { input, weight, bias, .. } | Op::Linear { input, weight, bias } => {
                vec![*input, *weight, *bias]
            }
            Op::Relu(x) | Op::Sigmoid(x) | Op::Scale(x, _) | Op::SumAxis0(x) | Op::Sum(x) => {
                vec![*x]
            }
            Op::MaxPool2 { input, .. }
            | Op::RoiPool { input, .. }
            | Op::Softmax { input, .. }
            | Op::Bce { input, .. } => vec![*input],
            Op::Mul(a, b) | Op::Add(a, b) => vec![*a, *b],
            Op::Custom { inputs, .. } => inputs.clone(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

/// One forward evaluation recorded for differentiation.
pub struct Graph<'r> {
    registry: &'r ParameterRegistry,
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

impl<'r> Graph<'r> {
    pub fn new(registry: &'r ParameterRegistry) -> Self {
        Graph { registry, nodes: Vec::new(), params: HashMap::new() }
    }

    pub fn registry(&self) -> &ParameterRegistry {
        self.registry
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        debug_assert!(value.is_finite(), "non-finite forward value");
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; carries no gradient to anything upstream.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant)
    }

    /// Leaf for a registered parameter. Repeated references to the same name
    /// share one node, so the gradients of every use are summed.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        let id = self.registry.id(name)?;
        if let Some(&v) = self.params.get(&id) {
            return Ok(v);
        }
        let value = self.registry.param(id).value.clone();
        let v = self.push(value, Op::Param(id));
        self.params.insert(id, v);
        Ok(v)
    }

    /// 2-D convolution of a `[C, H, W]` input with `[O, C, K, K]` weights.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, padding: Padding) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let (c, h, wd) = match x.shape.as_slice() {
            [c, h, w] => (*c, *h, *w),
            s => return invalid(format!("conv2d input must be [C,H,W], got {s:?}")),
        };
        let (o, k) = match w.shape.as_slice() {
            [o, wc, k1, k2] if *wc == c && k1 == k2 => (*o, *k1),
            s => return invalid(format!("conv2d weight {s:?} incompatible with {c} channels")),
        };
        if b.shape != [o] {
            return invalid(format!("conv2d bias shape {:?}, expected [{o}]", b.shape));
        }
        let pad = match padding {
            Padding::Valid => 0,
            Padding::Same => {
                if k % 2 == 0 {
                    return invalid("same padding needs an odd kernel");
                }
                k / 2
            }
        };
        if h + 2 * pad < k || wd + 2 * pad < k {
            return invalid("conv2d kernel larger than padded input");
        }
        let (ho, wo) = (h + 2 * pad - k + 1, wd + 2 * pad - k + 1);
        let mut out = vec![0.0; o * ho * wo];
        for oc in 0..o {
            let dst = &mut out[oc * ho * wo..(oc + 1) * ho * wo];
            dst.iter_mut().for_each(|v| *v = b.data[oc]);
            for ic in 0..c {
                let src = &x.data[ic * h * wd..(ic + 1) * h * wd];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = w.data[((oc * c + ic) * k + ky) * k + kx];
                        let (x_lo, x_hi) = (pad.saturating_sub(kx), wo.min(wd + pad - kx));
                        for oy in 0..ho {
                            let iy = oy + ky;
                            if iy < pad || iy - pad >= h {
                                continue;
                            }
                            let srow = &src[(iy - pad) * wd..];
                            let drow = &mut dst[oy * wo..(oy + 1) * wo];
                            for ox in x_lo..x_hi {
                                drow[ox] += wv * srow[ox + kx - pad];
                            }
                        }
                    }
                }
            }
        }
        let t = Tensor { shape: vec![o, ho, wo], data: out };
        Ok(self.push(t, Op::Conv2d { input, weight, bias, pad }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let t = Tensor { shape: v.shape.clone(), data: v.data.iter().map(|&a| a.max(0.0)).collect() };
        self.push(t, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data = v.data.iter().map(|&a| sigmoid(a)).collect();
        let t = Tensor { shape: v.shape.clone(), data };
        self.push(t, Op::Sigmoid(x))
    }

    /// 2x2 max pooling with stride 2 over a `[C, H, W]` input (odd trailing
    /// rows/columns are dropped).
    pub fn max_pool(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let (c, h, w) = match v.shape.as_slice() {
            [c, h, w] => (*c, *h, *w),
            s => return invalid(format!("max_pool input must be [C,H,W], got {s:?}")),
        };
        let (ho, wo) = (h / 2, w / 2);
        if ho == 0 || wo == 0 {
            return invalid("max_pool input smaller than the window");
        }
        let mut out = Vec::with_capacity(c * ho * wo);
        let mut argmax = Vec::with_capacity(c * ho * wo);
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = (f64::NEG_INFINITY, 0);
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let idx = (ch * h + 2 * oy + dy) * w + 2 * ox + dx;
                        if v.data[idx] > best.0 {
                            best = (v.data[idx], idx);
                        }
                    }
                    out.push(best.0);
                    argmax.push(best.1);
                }
            }
        }
        let t = Tensor { shape: vec![c, ho, wo], data: out };
        Ok(self.push(t, Op::MaxPool2 { input: x, argmax }))
    }

    /// Region max pooling. Boxes are in image coordinates and are mapped onto
    /// the `[C, H, W]` feature map by `spatial_scale`; the result is
    /// `[R, C * bins.0 * bins.1]` with channel-major bin order.
    pub fn roi_pool(
        &mut self,
        features: Var,
        boxes: &[BBox],
        spatial_scale: f64,
        bins: (usize, usize),
    ) -> Result<Var> {
        let v = self.value(features);
        let (c, h, w) = match v.shape.as_slice() {
            [c, h, w] => (*c, *h, *w),
            s => return invalid(format!("roi_pool features must be [C,H,W], got {s:?}")),
        };
        let (bh, bw) = bins;
        if bh == 0 || bw == 0 {
            return invalid("roi_pool needs at least one bin");
        }
        let per_region = c * bh * bw;
        let mut out = Vec::with_capacity(boxes.len() * per_region);
        let mut argmax = Vec::with_capacity(boxes.len() * per_region);
        for b in boxes {
            b.validate()?;
            let (fx1, fy1) = (b.x1 * spatial_scale, b.y1 * spatial_scale);
            let (fx2, fy2) = (b.x2 * spatial_scale, b.y2 * spatial_scale);
            if fx2 <= 0.0 || fy2 <= 0.0 || fx1 >= w as f64 || fy1 >= h as f64 {
                return invalid(format!("box {b:?} lies outside the feature map"));
            }
            let ys: Vec<(usize, usize)> = (0..bh).map(|i| bin_span(fy1, fy2, i, bh, h)).collect();
            let xs: Vec<(usize, usize)> = (0..bw).map(|i| bin_span(fx1, fx2, i, bw, w)).collect();
            for ch in 0..c {
                let plane = &v.data[ch * h * w..(ch + 1) * h * w];
                for &(y0, y1) in &ys {
                    for &(x0, x1) in &xs {
                        let mut best = (f64::NEG_INFINITY, 0);
                        for yy in y0..y1 {
                            for xx in x0..x1 {
                                let val = plane[yy * w + xx];
                                if val > best.0 {
                                    best = (val, ch * h * w + yy * w + xx);
                                }
                            }
                        }
                        out.push(best.0);
                        argmax.push(best.1);
                    }
                }
            }
        }
        let t = Tensor { shape: vec![boxes.len(), per_region], data: out };
        Ok(self.push(t, Op::RoiPool { input: features, argmax }))
    }

    /// `y = x W^T + b` for `x: [R, I]`, `W: [O, I]`, `b: [O]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let (r, i) = match x.shape.as_slice() {
            [r, i] => (*r, *i),
            s => return invalid(format!("linear input must be [R,I], got {s:?}")),
        };
        let o = match w.shape.as_slice() {
            [o, wi] if *wi == i => *o,
            s => return invalid(format!("linear weight {s:?} incompatible with input width {i}")),
        };
        if b.shape != [o] {
            return invalid(format!("linear bias shape {:?}, expected [{o}]", b.shape));
        }
        let mut out = vec![0.0; r * o];
        for row in 0..r {
            let xr = &x.data[row * i..(row + 1) * i];
            for oc in 0..o {
                let wr = &w.data[oc * i..(oc + 1) * i];
                out[row * o + oc] = b.data[oc] + dot(xr, wr);
            }
        }
        let t = Tensor { shape: vec![r, o], data: out };
        Ok(self.push(t, Op::Linear { input, weight, bias }))
    }

    /// Numerically stable softmax of a rank-1 or rank-2 tensor. For rank 2,
    /// `axis = 1` normalizes each row and `axis = 0` each column.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = self.value(x);
        let (rows, cols, axis) = match (v.shape.len(), axis) {
            (1, 0) => (1, v.shape[0], 1),
            (2, 0 | 1) => (v.shape[0], v.shape[1], axis),
            _ => return invalid(format!("softmax axis {axis} invalid for shape {:?}", v.shape)),
        };
        let data = softmax_matrix(&v.data, rows, cols, axis);
        let t = Tensor { shape: v.shape.clone(), data };
        Ok(self.push(t, Op::Softmax { input: x, axis }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape != vb.shape {
            return invalid(format!("mul shape mismatch {:?} vs {:?}", va.shape, vb.shape));
        }
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x * y).collect();
        let t = Tensor { shape: va.shape.clone(), data };
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.data.len() != vb.data.len() || (va.shape != vb.shape && !(va.is_scalar() && vb.is_scalar())) {
            return invalid(format!("add shape mismatch {:?} vs {:?}", va.shape, vb.shape));
        }
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x + y).collect();
        let t = Tensor { shape: va.shape.clone(), data };
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let v = self.value(x);
        let t = Tensor { shape: v.shape.clone(), data: v.data.iter().map(|a| a * factor).collect() };
        self.push(t, Op::Scale(x, factor))
    }

    /// Column sums of a `[R, K]` matrix.
    pub fn sum_axis0(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let (r, k) = match v.shape.as_slice() {
            [r, k] => (*r, *k),
            s => return invalid(format!("sum_axis0 expects a matrix, got {s:?}")),
        };
        let mut out = vec![0.0; k];
        for row in 0..r {
            for (acc, val) in out.iter_mut().zip(&v.data[row * k..(row + 1) * k]) {
                *acc += val;
            }
        }
        Ok(self.push(Tensor::from_vec(out), Op::SumAxis0(x)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Weighted binary cross-entropy of probabilities against `targets`,
    /// with probabilities clamped to `[eps, 1 - eps]`:
    /// `-sum_k w_k (y_k log q_k + (1 - y_k) log(1 - q_k))`.
    pub fn bce(&mut self, probs: Var, targets: Vec<f64>, weights: Vec<f64>, eps: f64) -> Result<Var> {
        let v = self.value(probs);
        if targets.len() != v.len() || weights.len() != v.len() {
            return invalid(format!(
                "bce: {} probabilities, {} targets, {} weights",
                v.len(),
                targets.len(),
                weights.len()
            ));
        }
        let mut loss = 0.0;
        for ((&p, &y), &w) in v.data.iter().zip(&targets).zip(&weights) {
            let q = p.clamp(eps, 1.0 - eps);
            loss -= w * (y * q.ln() + (1.0 - y) * (1.0 - q).ln());
        }
        Ok(self.push(Tensor::scalar(loss), Op::Bce { input: probs, targets, weights, eps }))
    }

    /// Record an externally defined op whose forward value was computed by
    /// the caller.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor, op: Box<dyn CustomOp>) -> Var {
        self.push(output, Op::Custom { inputs: inputs.to_vec(), op })
    }

    /// Parameters whose gradient under `loss` is structurally possible.
    pub fn reachable_params(&self, loss: Var) -> Vec<ParamId> {
        let mut marked = vec![false; self.nodes.len()];
        marked[loss.0] = true;
        let mut out = Vec::new();
        for idx in (0..=loss.0).rev() {
            if !marked[idx] {
                continue;
            }
            let node = &self.nodes[idx];
            if let Op::Param(id) = node.op {
                out.push(id);
            }
            for i in node.op.inputs() {
                marked[i.0] = true;
            }
        }
        out.sort();
        out
    }

    /// Reverse sweep from a scalar `loss`. Parameters not reached by the loss
    /// get `None`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let mut per_param = vec![None; self.registry.len()];
        for (v, g) in self.backward_nodes(loss)? {
            if let Op::Param(id) = self.nodes[v].op {
                per_param[id.0] = Some(g);
            }
        }
        Ok(Gradients { per_param })
    }

    /// Gradient of `loss` with respect to an arbitrary node (zeros if
    /// unreachable).
    pub fn grad_of(&self, loss: Var, wrt: Var) -> Result<Vec<f64>> {
        let n = self.value(wrt).len();
        Ok(self
            .backward_nodes(loss)?
            .into_iter()
            .find(|(v, _)| *v == wrt.0)
            .map(|(_, g)| g)
            .unwrap_or_else(|| vec![0.0; n]))
    }

    fn backward_nodes(&self, loss: Var) -> Result<Vec<(usize, Vec<f64>)>> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return invalid(format!("backward needs a scalar loss, got shape {:?}", lv.shape));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut leaves = Vec::new();
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(_) => {
                    leaves.push((idx, g));
                    continue;
                }
                op => {
                    for (input, ig) in self.local_grads(op, &node.value, &g) {
                        if ig.is_empty() {
                            continue;
                        }
                        match &mut grads[input.0] {
                            Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                            slot @ None => *slot = Some(ig),
                        }
                    }
                }
            }
        }
        Ok(leaves)
    }

    fn local_grads(&self, op: &Op, out: &Tensor, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        match op {
            Op::Constant | Op::Param(_) => vec![],
            Op::Relu(x) => {
                let xv = &self.value(*x).data;
                vec![(*x, xv.iter().zip(g).map(|(&a, &gi)| if a > 0.0 { gi } else { 0.0 }).collect())]
            }
            Op::Sigmoid(x) => {
                vec![(*x, out.data.iter().zip(g).map(|(&s, &gi)| gi * s * (1.0 - s)).collect())]
            }
            Op::Scale(x, f) => vec![(*x, g.iter().map(|gi| gi * f).collect())],
            Op::Sum(x) => vec![(*x, vec![g[0]; self.value(*x).len()])],
            Op::SumAxis0(x) => {
                let r = self.value(*x).shape[0];
                vec![(*x, (0..r).flat_map(|_| g.iter().copied()).collect())]
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&self.value(*a).data, &self.value(*b).data);
                let ga = vb.iter().zip(g).map(|(y, gi)| y * gi).collect();
                let gb = va.iter().zip(g).map(|(x, gi)| x * gi).collect();
                vec![(*a, ga), (*b, gb)]
            }
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Softmax { input, axis } => {
                let (rows, cols) = match out.shape.as_slice() {
                    [n] => (1, *n),
                    s => (s[0], s[1]),
                };
                let mut gx = vec![0.0; out.len()];
                let lines: Vec<Vec<usize>> = if *axis == 1 {
                    (0..rows).map(|r| (0..cols).map(|c| r * cols + c).collect()).collect()
                } else {
                    (0..cols).map(|c| (0..rows).map(|r| r * cols + c).collect()).collect()
                };
                for line in lines {
                    let inner: f64 = line.iter().map(|&k| g[k] * out.data[k]).sum();
                    for k in line {
                        gx[k] = out.data[k] * (g[k] - inner);
                    }
                }
                vec![(*input, gx)]
            }
            Op::MaxPool2 { input, argmax } | Op::RoiPool { input, argmax } => {
                let mut gx = vec![0.0; self.value(*input).len()];
                for (&src, &gi) in argmax.iter().zip(g) {
                    gx[src] += gi;
                }
                vec![(*input, gx)]
            }
            Op::Linear { input, weight, bias } => {
                let (x, w) = (self.value(*input), self.value(*weight));
                let (r, i) = (x.shape[0], x.shape[1]);
                let o = w.shape[0];
                let mut gx = vec![0.0; r * i];
                let mut gw = vec![0.0; o * i];
                let mut gb = vec![0.0; o];
                for row in 0..r {
                    let xr = &x.data[row * i..(row + 1) * i];
                    let gxr = &mut gx[row * i..(row + 1) * i];
                    for oc in 0..o {
                        let go = g[row * o + oc];
                        if go == 0.0 {
                            continue;
                        }
                        gb[oc] += go;
                        let wr = &w.data[oc * i..(oc + 1) * i];
                        let gwr = &mut gw[oc * i..(oc + 1) * i];
                        for k in 0..i {
                            gxr[k] += go * wr[k];
                            gwr[k] += go * xr[k];
                        }
                    }
                }
                vec![(*input, gx), (*weight, gw), (*bias, gb)]
            }
            Op::Conv2d { input, weight, bias, pad } => {
                let (x, w) = (self.value(*input), self.value(*weight));
                let (c, h, wd) = (x.shape[0], x.shape[1], x.shape[2]);
                let (o, k) = (w.shape[0], w.shape[2]);
                let (ho, wo) = (out.shape[1], out.shape[2]);
                let pad = *pad;
                let mut gx = vec![0.0; x.len()];
                let mut gw = vec![0.0; w.len()];
                let mut gb = vec![0.0; o];
                for oc in 0..o {
                    let gplane = &g[oc * ho * wo..(oc + 1) * ho * wo];
                    gb[oc] = gplane.iter().sum();
                    for ic in 0..c {
                        let src = &x.data[ic * h * wd..(ic + 1) * h * wd];
                        let gsrc = &mut gx[ic * h * wd..(ic + 1) * h * wd];
                        for ky in 0..k {
                            for kx in 0..k {
                                let widx = ((oc * c + ic) * k + ky) * k + kx;
                                let wv = w.data[widx];
                                let (x_lo, x_hi) = (pad.saturating_sub(kx), wo.min(wd + pad - kx));
                                let mut acc = 0.0;
                                for oy in 0..ho {
                                    let iy = oy + ky;
                                    if iy < pad || iy - pad >= h {
                                        continue;
                                    }
                                    let base = (iy - pad) * wd + kx;
                                    let grow = &gplane[oy * wo..(oy + 1) * wo];
                                    for ox in x_lo..x_hi {
                                        let gi = grow[ox];
                                        acc += gi * src[base + ox - pad];
                                        gsrc[base + ox - pad] += gi * wv;
                                    }
                                }
                                gw[widx] += acc;
                            }
                        }
                    }
                }
                vec![(*input, gx), (*weight, gw), (*bias, gb)]
            }
            Op::Bce { input, targets, weights, eps } => {
                let p = &self.value(*input).data;
                let gx = p
                    .iter()
                    .zip(targets)
                    .zip(weights)
                    .map(|((&p, &y), &w)| {
                        if p <= *eps || p >= 1.0 - eps {
                            0.0
                        } else {
                            -g[0] * w * (y / p - (1.0 - y) / (1.0 - p))
                        }
                    })
                    .collect();
                vec![(*input, gx)]
            }
            Op::Custom { inputs, op } => {
                let ins: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                inputs.iter().copied().zip(op.backward(&ins, out, g)).collect()
            }
        }
    }
}

fn bin_span(lo: f64, hi: f64, i: usize, n: usize, size: usize) -> (usize, usize) {
    let step = (hi - lo) / n as f64;
    let a = lo + step * i as f64;
    let b = lo + step * (i + 1) as f64;
    let start = (a.floor().max(0.0) as usize).min(size - 1);
    let end = (b.ceil().max(0.0) as usize).min(size).max(start + 1);
    (start, end)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// Softmax of a row-major `rows x cols` buffer along `axis`.
pub fn softmax_matrix(data: &[f64], rows: usize, cols: usize, axis: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    let (lines, len, stride, step) = if axis == 1 { (rows, cols, cols, 1) } else { (cols, rows, 1, cols) };
    for l in 0..lines {
        let idx = |k: usize| l * stride + k * step;
        let m = (0..len).map(|k| data[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for k in 0..len {
            let e = (data[idx(k)] - m).exp();
            out[idx(k)] = e;
            z += e;
        }
        for k in 0..len {
            out[idx(k)] /= z;
        }
    }
    out
}
