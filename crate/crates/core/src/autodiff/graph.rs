//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the tape is a topological order
//! of the computation and `backward` simply walks it in reverse.

use super::tensor::{argmax, Tensor};
use crate::error::{shape_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        padding: usize,
    },
    BiasAdd {
        x: NodeId,
        bias: NodeId,
        axis: usize,
    },
    Relu(NodeId),
    Mul(NodeId, NodeId),
    Sum(NodeId),
    Max {
        x: NodeId,
        index: usize,
    },
    SoftmaxCrossEntropy {
        logits: NodeId,
        label: usize,
        probs: Vec<f64>,
    },
    Reshape(NodeId),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Records a forward computation for later differentiation.
///
/// A graph is built per evaluation and owns all activation buffers, so model
/// weights can be shared immutably between concurrent evaluations.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar output with respect to every differentiable node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `id`, or `None` if the node does not influence the output
    /// or was recorded as a constant.
    pub fn get(&self, id: NodeId) -> Option<Tensor> {
        let g = self.grads.get(id.0)?.as_ref()?;
        Some(Tensor::from_parts(g.clone(), self.shapes[id.0].clone()))
    }

    /// Like [`Gradients::get`], but an unreached node yields zeros.
    pub fn get_or_zeros(&self, id: NodeId) -> Tensor {
        self.get(id)
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[id.0]))
    }
}

fn dims3(t: &Tensor, op: &'static str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(shape_err(op, format!("expected rank 3, got {:?}", t.shape()))),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// A differentiable leaf (an input or a trainable weight).
    pub fn variable(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k, n) = match (av.shape(), bv.shape()) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            (sa, sb) => return Err(shape_err("matmul", format!("{sa:?} x {sb:?}"))),
        };
        let (ad, bd) = (av.data(), bv.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = ad[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                for (o, &b) in row.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                    *o += aip * b;
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul(a, b), Tensor::from_parts(out, vec![m, n]), rg))
    }

    /// Stride-1 2-D convolution (cross-correlation) with symmetric zero padding.
    ///
    /// `input: [C, H, W]`, `kernel: [O, C, KH, KW]` -> `[O, H + 2p - KH + 1, W + 2p - KW + 1]`.
    pub fn conv2d(&mut self, input: NodeId, kernel: NodeId, padding: usize) -> Result<NodeId> {
        let (iv, kv) = (self.value(input), self.value(kernel));
        let (c, h, w) = dims3(iv, "conv2d")?;
        let (o, kc, kh, kw) = match *kv.shape() {
            [o, kc, kh, kw] => (o, kc, kh, kw),
            ref s => return Err(shape_err("conv2d", format!("kernel must be rank 4, got {s:?}"))),
        };
        if kc != c || h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(shape_err(
                "conv2d",
                format!("input {:?} incompatible with kernel {:?} (padding {padding})", iv.shape(), kv.shape()),
            ));
        }
        let (oh, ow) = (h + 2 * padding - kh + 1, w + 2 * padding - kw + 1);
        let plane = oh * ow;
        let mut out = vec![0.0; o * plane];
        let (id, kd) = (iv.data(), kv.data());
        let mut col = vec![0.0; plane];
        for ic in 0..c {
            let src = &id[ic * h * w..(ic + 1) * h * w];
            for ki in 0..kh {
                for kj in 0..kw {
                    tap(src, (h, w), (oh, ow), (ki, kj), padding, &mut col);
                    for oc in 0..o {
                        let wgt = kd[((oc * c + ic) * kh + ki) * kw + kj];
                        for (d, v) in out[oc * plane..(oc + 1) * plane].iter_mut().zip(&col) {
                            *d += wgt * v;
                        }
                    }
                }
            }
        }
        let rg = self.rg(input) || self.rg(kernel);
        Ok(self.push(
            Op::Conv2d {
                input,
                kernel,
                padding,
            },
            Tensor::from_parts(out, vec![o, oh, ow]),
            rg,
        ))
    }

    /// Adds `bias` (rank 1, length `shape[axis]`) broadcast along `axis`.
    pub fn bias_add(&mut self, x: NodeId, bias: NodeId, axis: usize) -> Result<NodeId> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let shape = xv.shape().to_vec();
        if axis >= shape.len() || bv.shape() != [shape[axis]] {
            return Err(shape_err(
                "bias_add",
                format!("bias {:?} along axis {axis} of {:?}", bv.shape(), shape),
            ));
        }
        let inner: usize = shape[axis + 1..].iter().product();
        let len = shape[axis];
        let bd = bv.data();
        let out = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bd[(i / inner) % len])
            .collect();
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(Op::BiasAdd { x, bias, axis }, Tensor::from_parts(out, shape), rg))
    }

    /// Rectifier; the subgradient at exactly zero is zero.
    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let out = xv.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let t = Tensor::from_parts(out, xv.shape().to_vec());
        let rg = self.rg(x);
        self.push(Op::Relu(x), t, rg)
    }

    /// Elementwise product of equally shaped tensors (used for masking).
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let t = self.value(a).hadamard(self.value(b)).map_err(|_| {
            shape_err(
                "mul",
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            )
        })?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Mul(a, b), t, rg))
    }

    /// Sum of all entries, as a rank-0 tensor.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Op::Sum(x), Tensor::scalar(s), rg)
    }

    /// Maximum entry; the gradient flows to the first maximizer.
    pub fn max(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let index = argmax(xv.data()).ok_or_else(|| shape_err("max", "empty input"))?;
        let m = xv.data()[index];
        let rg = self.rg(x);
        Ok(self.push(Op::Max { x, index }, Tensor::scalar(m), rg))
    }

    /// Mean-free cross-entropy of `softmax(logits)` against `label`.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, label: usize) -> Result<NodeId> {
        let lv = self.value(logits).data();
        if label >= lv.len() {
            return Err(shape_err(
                "softmax_cross_entropy",
                format!("label {label} out of range for {} logits", lv.len()),
            ));
        }
        let max = lv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = lv.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let probs: Vec<f64> = exps.iter().map(|e| e / z).collect();
        let loss = z.ln() + max - lv[label];
        let rg = self.rg(logits);
        Ok(self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                probs,
            },
            Tensor::scalar(loss),
            rg,
        ))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(Op::Reshape(x), t, rg))
    }

    /// Reverse pass from a scalar `output`.
    ///
    /// Only leaves keep their gradients; intermediate buffers are dropped as
    /// soon as they have been propagated.
    pub fn backward(&self, output: NodeId) -> Result<Gradients> {
        let out = self.value(output);
        if out.numel() != 1 {
            return Err(Error::NotScalar(out.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        let mut kept: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![1.0]);
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                kept[idx] = Some(g);
            } else {
                self.propagate(&node.op, g, &mut grads);
            }
        }
        Ok(Gradients {
            grads: kept,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, op: &Op, g: Vec<f64>, grads: &mut [Option<Vec<f64>>]) {
    match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.rg(*a) {
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let brow = &bv.data()[p * n..(p + 1) * n];
                            da[i * k + p] =
                                g[i * n..(i + 1) * n].iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    accumulate(grads, *a, da);
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let aip = av.data()[i * k + p];
                            for (d, &gv) in db[p * n..(p + 1) * n].iter_mut().zip(&g[i * n..(i + 1) * n]) {
                                *d += aip * gv;
                            }
                        }
                    }
                    accumulate(grads, *b, db);
                }
            }
            Op::Conv2d {
                input,
                kernel,
                padding,
            } => {
                let (dinput, dkernel) = self.conv2d_backward(*input, *kernel, *padding, &g);
                if let Some(d) = dinput {
                    accumulate(grads, *input, d);
                }
                if let Some(d) = dkernel {
                    accumulate(grads, *kernel, d);
                }
            }
            Op::BiasAdd { x, bias, axis } => {
                if self.rg(*bias) {
                    let shape = self.value(*x).shape();
                    let inner: usize = shape[axis + 1..].iter().product();
                    let len = shape[*axis];
                    let mut db = vec![0.0; len];
                    for (i, gv) in g.iter().enumerate() {
                        db[(i / inner) % len] += gv;
                    }
                    accumulate(grads, *bias, db);
                }
                if self.rg(*x) {
                    accumulate(grads, *x, g);
                }
            }
            Op::Relu(x) => {
                let d = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(&g)
                    .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                    .collect();
                accumulate(grads, *x, d);
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let d = self.value(*b).data().iter().zip(&g).map(|(v, gv)| v * gv).collect();
                    accumulate(grads, *a, d);
                }
                if self.rg(*b) {
                    let d = self.value(*a).data().iter().zip(&g).map(|(v, gv)| v * gv).collect();
                    accumulate(grads, *b, d);
                }
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                accumulate(grads, *x, vec![g[0]; n]);
            }
            Op::Max { x, index } => {
                let mut d = vec![0.0; self.value(*x).numel()];
                d[*index] = g[0];
                accumulate(grads, *x, d);
            }
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                probs,
            } => {
                let mut d: Vec<f64> = probs.iter().map(|p| p * g[0]).collect();
                d[*label] -= g[0];
                accumulate(grads, *logits, d);
            }
            Op::Reshape(x) => accumulate(grads, *x, g),
        }
    }

    fn conv2d_backward(
        &self,
        input: NodeId,
        kernel: NodeId,
        padding: usize,
        g: &[f64],
    ) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
        let (iv, kv) = (self.value(input), self.value(kernel));
        let (c, h, w) = (iv.shape()[0], iv.shape()[1], iv.shape()[2]);
        let (o, kh, kw) = (kv.shape()[0], kv.shape()[2], kv.shape()[3]);
        let (oh, ow) = (h + 2 * padding - kh + 1, w + 2 * padding - kw + 1);
        let (want_in, want_k) = (self.rg(input), self.rg(kernel));
        let mut din = want_in.then(|| vec![0.0; c * h * w]);
        let mut dk = want_k.then(|| vec![0.0; kv.numel()]);
        let plane = oh * ow;
        let (id, kd) = (iv.data(), kv.data());
        let (mut col, mut gcol) = (vec![0.0; plane], vec![0.0; plane]);
        for ic in 0..c {
            let src = &id[ic * h * w..(ic + 1) * h * w];
            for ki in 0..kh {
                for kj in 0..kw {
                    let kidx = |oc: usize| ((oc * c + ic) * kh + ki) * kw + kj;
                    if let Some(dk) = dk.as_mut() {
                        tap(src, (h, w), (oh, ow), (ki, kj), padding, &mut col);
                        for oc in 0..o {
                            let gp = &g[oc * plane..(oc + 1) * plane];
                            dk[kidx(oc)] += gp.iter().zip(&col).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                    if let Some(din) = din.as_mut() {
                        gcol.fill(0.0);
                        for oc in 0..o {
                            let wgt = kd[kidx(oc)];
                            for (d, v) in gcol.iter_mut().zip(&g[oc * plane..(oc + 1) * plane]) {
                                *d += wgt * v;
                            }
                        }
                        untap(&gcol, (h, w), (oh, ow), (ki, kj), padding, &mut din[ic * h * w..(ic + 1) * h * w]);
                    }
                }
            }
        }
        (din, dk)
    }
}

/// Input values under kernel tap `(ki, kj)` at every output position, zero
/// where the tap lands in the padding.
fn tap(src: &[f64], (h, w): (usize, usize), (oh, ow): (usize, usize), (ki, kj): (usize, usize), padding: usize, col: &mut [f64]) {
    col.fill(0.0);
    let (x0, x1) = valid_range(kj, padding, w, ow);
    for oy in 0..oh {
        let iy = oy + ki;
        if iy < padding || iy - padding >= h {
            continue;
        }
        let row = (iy - padding) * w;
        col[oy * ow + x0..oy * ow + x1].copy_from_slice(&src[row + x0 + kj - padding..row + x1 + kj - padding]);
    }
}

/// Adjoint of [`tap`]: adds `col` back onto the input positions it was read from.
fn untap(col: &[f64], (h, w): (usize, usize), (oh, ow): (usize, usize), (ki, kj): (usize, usize), padding: usize, dst: &mut [f64]) {
    let (x0, x1) = valid_range(kj, padding, w, ow);
    for oy in 0..oh {
        let iy = oy + ki;
        if iy < padding || iy - padding >= h {
            continue;
        }
        let row = (iy - padding) * w;
        for (d, v) in dst[row + x0 + kj - padding..row + x1 + kj - padding].iter_mut().zip(&col[oy * ow + x0..oy * ow + x1]) {
            *d += v;
        }
    }
}

/// Output columns `ox` for which `ox + kj - padding` lands inside `[0, w)`.
fn valid_range(kj: usize, padding: usize, w: usize, ow: usize) -> (usize, usize) {
    let lo = padding.saturating_sub(kj);
    let hi = (w + padding).saturating_sub(kj).min(ow);
    (lo, hi.max(lo))
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: NodeId, d: Vec<f64>) {
    match &mut grads[id.0] {
        Some(existing) => {
            for (e, v) in existing.iter_mut().zip(d) {
                *e += v;
            }
        }
        slot @ None => *slot = Some(d),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &Tensor, k: &Tensor, p: usize) -> Vec<f64> {
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (o, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
        let (oh, ow) = (h + 2 * p - kh + 1, w + 2 * p - kw + 1);
        let mut out = vec![0.0; o * oh * ow];
        for oc in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = 0.0;
                    for ic in 0..c {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let iy = (oy + ki) as isize - p as isize;
                                let ix = (ox + kj) as isize - p as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                s += x.data()[(ic * h + iy as usize) * w + ix as usize]
                                    * k.data()[((oc * c + ic) * kh + ki) * kw + kj];
                            }
                        }
                    }
                    out[(oc * oh + oy) * ow + ox] = s;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_loops() {
        let x = Tensor::new((0..2 * 5 * 4).map(|i| (i as f64 * 0.37).sin()).collect(), vec![2, 5, 4]).unwrap();
        let k = Tensor::new((0..3 * 2 * 3 * 3).map(|i| (i as f64 * 0.11).cos()).collect(), vec![3, 2, 3, 3]).unwrap();
        for p in 0..3 {
            let mut g = Graph::new();
            let (xi, ki) = (g.constant(x.clone()), g.constant(k.clone()));
            let y = g.conv2d(xi, ki, p).unwrap();
            let want = naive_conv(&x, &k, p);
            for (a, b) in g.value(y).data().iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_matches_hand_product() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::new(vec![1.0, 2.0, 3.0, 4.0], vec![2, 2]).unwrap());
        let b = g.constant(Tensor::new(vec![5.0, 6.0, 7.0, 8.0], vec![2, 2]).unwrap());
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let b = g.variable(Tensor::vector(vec![3.0, 4.0]).unwrap());
        let p = g.mul(a, b).unwrap();
        let s = g.sum(p);
        let grads = g.backward(s).unwrap();
        assert!(grads.get(a).is_none());
        assert_eq!(grads.get(b).unwrap().data(), &[1.0, 2.0]);
    }
}
