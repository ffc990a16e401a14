use super::kernels::{self, ConvGeom};
use super::{numel, Result, Scalar, Tensor, TensorError};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Relu(Var),
    ScaleChannels {
        x: Var,
        alpha: Var,
    },
    Add(Var, Var),
    MulScalar(Var, T),
    PixelShuffle {
        x: Var,
        s: usize,
    },
    PixelUnshuffle {
        x: Var,
        s: usize,
    },
    LinearNoBias {
        z: Var,
        w: Var,
    },
    L1 {
        pred: Var,
        target: Var,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node<T> {
    shape: Vec<usize>,
    value: Option<Vec<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// Define-by-run recording of a computation.
///
/// Nodes are appended in execution order, so every input precedes its consumer and
/// [`Tape::backward`] can sweep the node list once in reverse. A tape is rebuilt for
/// every forward pass and is not shared across threads.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    inference: bool,
    /// Reused im2col buffer.
    scratch: Vec<T>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            inference: false,
            scratch: Vec::new(),
        }
    }

    /// A tape that never tracks gradients and lets callers [`release`](Self::release)
    /// intermediate values as soon as they are consumed.
    pub fn inference() -> Self {
        Self {
            inference: true,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, tensor: &Tensor<T>, requires_grad: bool) -> Var {
        self.push(
            tensor.shape().to_vec(),
            tensor.data().to_vec(),
            requires_grad && !self.inference,
            Op::Leaf,
        )
    }

    pub fn leaf_owned(&mut self, tensor: Tensor<T>, requires_grad: bool) -> Var {
        let shape = tensor.shape().to_vec();
        self.push(shape, tensor.into_data(), requires_grad && !self.inference, Op::Leaf)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> Result<&[T]> {
        self.nodes[v.0].value.as_deref().ok_or(TensorError::Released)
    }

    pub fn tensor(&self, v: Var) -> Result<Tensor<T>> {
        Tensor::new(self.shape(v).to_vec(), self.value(v)?.to_vec())
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last [`backward`](Self::backward) loss with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Drops the stored value of `v` on an inference tape. No-op when recording gradients.
    pub fn release(&mut self, v: Var) {
        if self.inference {
            self.nodes[v.0].value = None;
        }
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, requires_grad: bool, op: Op<T>) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            shape,
            value: Some(value),
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, name: &'static str, shape: Vec<usize>, value: Vec<T>, inputs: &[Var], op: Op<T>) -> Result<Var> {
        if value.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: name });
        }
        let rg = inputs.iter().any(|&v| self.nodes[v.0].requires_grad);
        Ok(self.push(shape, value, rg, op))
    }

    fn expect_rank(&self, op: &'static str, v: Var, rank: usize) -> Result<&[usize]> {
        let shape = self.shape(v);
        if shape.len() != rank {
            return Err(TensorError::Rank {
                op,
                expected: rank,
                found: shape.to_vec(),
            });
        }
        Ok(shape)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != sb.len() {
            return Err(TensorError::Rank {
                op,
                expected: sa.len(),
                found: sb.to_vec(),
            });
        }
        if let Some((&e, &f)) = sa.iter().zip(sb).find(|(e, f)| e != f) {
            return Err(TensorError::ShapeMismatch {
                op,
                dim: "element shape",
                expected: e,
                found: f,
            });
        }
        Ok(())
    }

    /// 2-D convolution of a `[C_in, H, W]` input with `[C_out, C_in, k, k]` weights,
    /// zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        const OP: &str = "conv2d";
        let xs = self.expect_rank(OP, x, 3)?.to_vec();
        let ws = self.expect_rank(OP, w, 4)?.to_vec();
        let (c_in, h, wd) = (xs[0], xs[1], xs[2]);
        let (c_out, k) = (ws[0], ws[2]);
        if ws[1] != c_in {
            return Err(TensorError::ShapeMismatch {
                op: OP,
                dim: "input channels",
                expected: ws[1],
                found: c_in,
            });
        }
        if ws[3] != k {
            return Err(TensorError::ShapeMismatch {
                op: OP,
                dim: "kernel width",
                expected: k,
                found: ws[3],
            });
        }
        if k % 2 == 0 {
            return Err(TensorError::InvalidArgument {
                op: OP,
                reason: format!("kernel size {k} is not odd"),
            });
        }
        if !(stride == 1 || stride == 2) {
            return Err(TensorError::InvalidArgument {
                op: OP,
                reason: format!("stride {stride} not in {{1, 2}}"),
            });
        }
        if h + 2 * pad < k {
            return Err(TensorError::ShapeMismatch {
                op: OP,
                dim: "padded height",
                expected: k,
                found: h + 2 * pad,
            });
        }
        if wd + 2 * pad < k {
            return Err(TensorError::ShapeMismatch {
                op: OP,
                dim: "padded width",
                expected: k,
                found: wd + 2 * pad,
            });
        }
        if let Some(b) = b {
            let bs = self.expect_rank(OP, b, 1)?;
            if bs[0] != c_out {
                return Err(TensorError::ShapeMismatch {
                    op: OP,
                    dim: "bias length",
                    expected: c_out,
                    found: bs[0],
                });
            }
        }
        let geom = ConvGeom::new(c_in, h, wd, c_out, k, stride, pad);
        let mut out = vec![T::zero(); c_out * geom.h_out * geom.w_out];
        let mut scratch = std::mem::take(&mut self.scratch);
        {
            let bv = match b {
                Some(b) => Some(self.value(b)?),
                None => None,
            };
            kernels::conv2d_forward(self.value(x)?, self.value(w)?, bv, &geom, &mut out, &mut scratch);
        }
        self.scratch = scratch;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push_checked(
            OP,
            vec![c_out, geom.h_out, geom.w_out],
            out,
            &inputs,
            Op::Conv2d { x, w, b, geom },
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x)?.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
        self.push_checked("relu", self.shape(x).to_vec(), out, &[x], Op::Relu(x))
    }

    /// Multiplies channel `c` of a `[C, H, W]` tensor by `alpha[c]`.
    pub fn scale_channels(&mut self, x: Var, alpha: Var) -> Result<Var> {
        const OP: &str = "scale_channels";
        let xs = self.expect_rank(OP, x, 3)?.to_vec();
        let al = self.expect_rank(OP, alpha, 1)?[0];
        if al != xs[0] {
            return Err(TensorError::ShapeMismatch {
                op: OP,
                dim: "alpha length",
                expected: xs[0],
                found: al,
            });
        }
        let plane = xs[1] * xs[2];
        let a = self.value(alpha)?;
        let out = self
            .value(x)?
            .chunks_exact(plane)
            .zip(a)
            .flat_map(|(ch, &s)| ch.iter().map(move |&v| v * s))
            .collect();
        self.push_checked(OP, xs, out, &[x, alpha], Op::ScaleChannels { x, alpha })
    }

    pub fn add(&mut self, x: Var, y: Var) -> Result<Var> {
        self.same_shape("add", x, y)?;
        let out = self.value(x)?.iter().zip(self.value(y)?).map(|(&a, &b)| a + b).collect();
        self.push_checked("add", self.shape(x).to_vec(), out, &[x, y], Op::Add(x, y))
    }

    pub fn mul_scalar(&mut self, x: Var, c: T) -> Result<Var> {
        let out = self.value(x)?.iter().map(|&v| v * c).collect();
        self.push_checked("mul_scalar", self.shape(x).to_vec(), out, &[x], Op::MulScalar(x, c))
    }

    /// `[C*s*s, H, W] -> [C, s*H, s*W]` with `out[c, s*h+i, s*w+j] = x[c*s*s + i*s + j, h, w]`.
    pub fn pixel_shuffle(&mut self, x: Var, s: usize) -> Result<Var> {
        const OP: &str = "pixel_shuffle";
        let xs = self.expect_rank(OP, x, 3)?.to_vec();
        if s == 0 || xs[0] % (s * s) != 0 {
            return Err(TensorError::InvalidArgument {
                op: OP,
                reason: format!("{} channels not divisible by {}", xs[0], s * s),
            });
        }
        let c = xs[0] / (s * s);
        let mut out = vec![T::zero(); numel(&xs)];
        kernels::pixel_shuffle(self.value(x)?, c, xs[1], xs[2], s, false, &mut out);
        self.push_checked(OP, vec![c, xs[1] * s, xs[2] * s], out, &[x], Op::PixelShuffle { x, s })
    }

    /// Inverse of [`pixel_shuffle`](Self::pixel_shuffle).
    pub fn pixel_unshuffle(&mut self, x: Var, s: usize) -> Result<Var> {
        const OP: &str = "pixel_unshuffle";
        let xs = self.expect_rank(OP, x, 3)?.to_vec();
        if s == 0 || xs[1] % s != 0 || xs[2] % s != 0 {
            return Err(TensorError::InvalidArgument {
                op: OP,
                reason: format!("spatial size {}x{} not divisible by {s}", xs[1], xs[2]),
            });
        }
        let (h, w) = (xs[1] / s, xs[2] / s);
        let mut out = vec![T::zero(); numel(&xs)];
        kernels::pixel_shuffle(self.value(x)?, xs[0], h, w, s, true, &mut out);
        self.push_checked(OP, vec![xs[0] * s * s, h, w], out, &[x], Op::PixelUnshuffle { x, s })
    }

    /// `W z` for `W: [M, N]`, `z: [N]`.
    pub fn linear_nobias(&mut self, z: Var, w: Var) -> Result<Var> {
        const OP: &str = "linear_nobias";
        let n = self.expect_rank(OP, z, 1)?[0];
        let ws = self.expect_rank(OP, w, 2)?.to_vec();
        if ws[1] != n {
            return Err(TensorError::ShapeMismatch {
                op: OP,
                dim: "input features",
                expected: ws[1],
                found: n,
            });
        }
        let zv = self.value(z)?;
        let out = self.value(w)?.chunks_exact(n).map(|row| row.iter().zip(zv).map(|(&a, &b)| a * b).sum()).collect();
        self.push_checked(OP, vec![ws[0]], out, &[z, w], Op::LinearNoBias { z, w })
    }

    /// Mean absolute difference, as a one-element tensor.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape("l1_loss", pred, target)?;
        let p = self.value(pred)?;
        let n = T::from_f64(p.len() as f64);
        let total: T = p.iter().zip(self.value(target)?).map(|(&a, &b)| (a - b).abs()).sum();
        self.push_checked("l1_loss", vec![1], vec![total / n], &[pred, target], Op::L1 { pred, target })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x)?.iter().copied().sum();
        self.push_checked("sum", vec![1], vec![total], &[x], Op::Sum(x))
    }

    /// Populates gradients of `loss` with respect to every gradient-requiring leaf.
    ///
    /// Gradients of fan-out uses accumulate. Intermediate gradients are dropped once
    /// they have been propagated; leaf gradients stay readable through [`grad`](Self::grad).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if numel(self.shape(loss)) != 1 {
            return Err(TensorError::NotScalar(self.shape(loss).to_vec()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(TensorError::Detached);
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g)?;
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, f: impl FnOnce(&mut [T])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = numel(&self.nodes[v.0].shape);
        let slot = self.grads[v.0].get_or_insert_with(|| vec![T::zero(); n]);
        f(slot);
    }

    fn propagate(&mut self, i: usize, g: &[T]) -> Result<()> {
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                // Accumulate straight into the gradient slots; they are taken out so
                // the input values can stay borrowed.
                let mut take = |v: Var| -> Option<Vec<T>> {
                    self.nodes[v.0]
                        .requires_grad
                        .then(|| self.grads[v.0].take().unwrap_or_else(|| vec![T::zero(); numel(&self.nodes[v.0].shape)]))
                };
                let mut dx = take(x);
                let mut dw = take(w);
                let mut db = b.and_then(&mut take);
                let xv = self.nodes[x.0].value.as_deref().ok_or(TensorError::Released)?;
                let wv = self.nodes[w.0].value.as_deref().ok_or(TensorError::Released)?;
                kernels::conv2d_backward(
                    xv,
                    wv,
                    &geom,
                    g,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                    &mut self.scratch,
                );
                self.grads[x.0] = dx.or(self.grads[x.0].take());
                self.grads[w.0] = dw.or(self.grads[w.0].take());
                if let Some(b) = b {
                    self.grads[b.0] = db.or(self.grads[b.0].take());
                }
            }
            Op::Relu(x) => {
                let xv = self.value(x)?.to_vec();
                self.accumulate(x, |s| {
                    for ((s, &gv), &xv) in s.iter_mut().zip(g).zip(&xv) {
                        if xv > T::zero() {
                            *s += gv;
                        }
                    }
                });
            }
            Op::ScaleChannels { x, alpha } => {
                let plane = self.shape(x)[1] * self.shape(x)[2];
                let av = self.value(alpha)?.to_vec();
                if self.requires_grad(alpha) {
                    let xv = self.value(x)?;
                    let da: Vec<T> = xv
                        .chunks_exact(plane)
                        .zip(g.chunks_exact(plane))
                        .map(|(xc, gc)| xc.iter().zip(gc).map(|(&a, &b)| a * b).sum())
                        .collect();
                    self.accumulate(alpha, |s| add_into(s, &da));
                }
                self.accumulate(x, |s| {
                    for ((sc, gc), &a) in s.chunks_exact_mut(plane).zip(g.chunks_exact(plane)).zip(&av) {
                        for (s, &gv) in sc.iter_mut().zip(gc) {
                            *s += gv * a;
                        }
                    }
                });
            }
            Op::Add(x, y) => {
                self.accumulate(x, |s| add_into(s, g));
                self.accumulate(y, |s| add_into(s, g));
            }
            Op::MulScalar(x, c) => {
                self.accumulate(x, |s| {
                    for (s, &gv) in s.iter_mut().zip(g) {
                        *s += gv * c;
                    }
                });
            }
            Op::PixelShuffle { x, s } => {
                let xs = self.shape(x).to_vec();
                let mut dx = vec![T::zero(); g.len()];
                kernels::pixel_shuffle(g, xs[0] / (s * s), xs[1], xs[2], s, true, &mut dx);
                self.accumulate(x, |acc| add_into(acc, &dx));
            }
            Op::PixelUnshuffle { x, s } => {
                let xs = self.shape(x).to_vec();
                let mut dx = vec![T::zero(); g.len()];
                kernels::pixel_shuffle(g, xs[0], xs[1] / s, xs[2] / s, s, false, &mut dx);
                self.accumulate(x, |acc| add_into(acc, &dx));
            }
            Op::LinearNoBias { z, w } => {
                let zv = self.value(z)?.to_vec();
                let wv = self.value(w)?.to_vec();
                let n = zv.len();
                self.accumulate(z, |s| {
                    for (row, &gv) in wv.chunks_exact(n).zip(g) {
                        for (s, &wv) in s.iter_mut().zip(row) {
                            *s += gv * wv;
                        }
                    }
                });
                self.accumulate(w, |s| {
                    for (row, &gv) in s.chunks_exact_mut(n).zip(g) {
                        for (s, &zv) in row.iter_mut().zip(&zv) {
                            *s += gv * zv;
                        }
                    }
                });
            }
            Op::L1 { pred, target } => {
                let p = self.value(pred)?;
                let t = self.value(target)?;
                let scale = g[0] / T::from_f64(p.len() as f64);
                // Subgradient 0 at exact ties.
                let sign: Vec<T> = p
                    .iter()
                    .zip(t)
                    .map(|(&a, &b)| {
                        if a > b {
                            scale
                        } else if a < b {
                            -scale
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                self.accumulate(pred, |s| add_into(s, &sign));
                self.accumulate(target, |s| {
                    for (s, &d) in s.iter_mut().zip(&sign) {
                        *s -= d;
                    }
                });
            }
            Op::Sum(x) => {
                let gv = g[0];
                self.accumulate(x, |s| {
                    for s in s.iter_mut() {
                        *s += gv;
                    }
                });
            }
        }
        Ok(())
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn identity_kernel_conv() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]), false);
        let w = tape.leaf(&t(&[1, 1, 1, 1], &[1.0]), false);
        let y = tape.conv2d(x, w, None, 1, 0).unwrap();
        assert_eq!(tape.value(y).unwrap(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn strided_conv_shape() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(&Tensor::zeros([3, 8, 8]), false);
        let w = tape.leaf(&Tensor::zeros([4, 3, 3, 3]), false);
        let y = tape.conv2d(x, w, None, 2, 1).unwrap();
        assert_eq!(tape.shape(y), &[4, 4, 4]);
    }

    #[test]
    fn conv_errors_name_the_dimension() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(&Tensor::zeros([3, 8, 8]), false);
        let w = tape.leaf(&Tensor::zeros([4, 2, 3, 3]), false);
        match tape.conv2d(x, w, None, 1, 1) {
            Err(TensorError::ShapeMismatch { dim, .. }) => assert_eq!(dim, "input channels"),
            other => panic!("unexpected {other:?}"),
        }
        let w = tape.leaf(&Tensor::zeros([4, 3, 2, 2]), false);
        assert!(matches!(tape.conv2d(x, w, None, 1, 0), Err(TensorError::InvalidArgument { .. })));
        let w = tape.leaf(&Tensor::zeros([4, 3, 3, 3]), false);
        assert!(matches!(tape.conv2d(x, w, None, 3, 1), Err(TensorError::InvalidArgument { .. })));
        let b = tape.leaf(&Tensor::zeros([5]), false);
        assert!(matches!(
            tape.conv2d(x, w, Some(b), 1, 1),
            Err(TensorError::ShapeMismatch { dim: "bias length", .. })
        ));
    }

    #[test]
    fn relu_values_and_dead_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[3], &[-1.0, 0.0, 2.0]), true);
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).unwrap(), &[0.0, 0.0, 2.0]);

        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[3], &[-1.0, -2.0, -0.5]), true);
        let y = tape.relu(x).unwrap();
        let l = tape.sum(y).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.value(y).unwrap(), &[0.0; 3]);
        assert_eq!(tape.grad(x).unwrap(), &[0.0; 3]);
    }

    #[test]
    fn scale_channels_cases() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[2, 1, 2], &[1.0, -2.0, 3.0, 4.0]), false);
        let zero = tape.leaf(&t(&[2], &[0.0, 0.0]), false);
        let one = tape.leaf(&t(&[2], &[1.0, 1.0]), false);
        let y0 = tape.scale_channels(x, zero).unwrap();
        let y1 = tape.scale_channels(x, one).unwrap();
        assert!(tape.value(y0).unwrap().iter().all(|&v| v == 0.0));
        assert_eq!(tape.value(y1).unwrap(), tape.value(x).unwrap());

        let a = tape.leaf(&t(&[1, 1, 1], &[4.0]), false);
        let h = tape.leaf(&t(&[1], &[0.5]), false);
        let y = tape.scale_channels(a, h).unwrap();
        assert_eq!(tape.value(y).unwrap(), &[2.0]);

        let bad = tape.leaf(&t(&[3], &[1.0, 1.0, 1.0]), false);
        assert!(matches!(
            tape.scale_channels(x, bad),
            Err(TensorError::ShapeMismatch { dim: "alpha length", .. })
        ));
    }

    #[test]
    fn zero_scaled_residual_is_exact_identity() {
        let mut tape = Tape::new();
        let f = tape.leaf(&t(&[2, 1, 2], &[-3.5, 1e30, 7.25, -1e-30]), false);
        let x = tape.leaf(&t(&[2, 1, 2], &[0.1, -0.0, 0.3, 0.7]), false);
        let zero = tape.leaf(&t(&[2], &[0.0, 0.0]), false);
        let s = tape.scale_channels(f, zero).unwrap();
        let y = tape.add(s, x).unwrap();
        let (yv, xv) = (tape.value(y).unwrap(), tape.value(x).unwrap());
        assert!(yv.iter().zip(xv).all(|(a, b)| a.to_bits() == b.to_bits() || (*a == 0.0 && *b == 0.0)));
    }

    #[test]
    fn add_with_zeros_and_mismatch() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[2], &[1.5, -2.0]), false);
        let z = tape.leaf(&t(&[2], &[0.0, 0.0]), false);
        let y = tape.add(x, z).unwrap();
        assert_eq!(tape.value(y).unwrap(), &[1.5, -2.0]);
        let w = tape.leaf(&t(&[3], &[0.0; 3]), false);
        assert!(tape.add(x, w).is_err());
    }

    #[test]
    fn pixel_shuffle_layout_and_inverse() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[4, 1, 1], &[1.0, 2.0, 3.0, 4.0]), false);
        let y = tape.pixel_shuffle(x, 2).unwrap();
        assert_eq!(tape.shape(y), &[1, 2, 2]);
        assert_eq!(tape.value(y).unwrap(), &[1.0, 2.0, 3.0, 4.0]);

        let data: Vec<f64> = (0..8 * 3 * 5).map(|i| i as f64 * 0.37 - 3.0).collect();
        let x = tape.leaf(&t(&[8, 3, 5], &data), false);
        let y = tape.pixel_shuffle(x, 2).unwrap();
        assert_eq!(tape.shape(y), &[2, 6, 10]);
        let back = tape.pixel_unshuffle(y, 2).unwrap();
        assert_eq!(tape.value(back).unwrap(), &data[..]);

        let odd = tape.leaf(&t(&[3, 1, 1], &[0.0; 3]), false);
        assert!(matches!(tape.pixel_shuffle(odd, 2), Err(TensorError::InvalidArgument { .. })));
    }

    #[test]
    fn linear_nobias_cases() {
        let mut tape = Tape::new();
        let z0 = tape.leaf(&t(&[2], &[0.0, 0.0]), false);
        let w = tape.leaf(&t(&[3, 2], &[1.0, -2.0, 3.5, 4.0, 5.0, 6.0]), false);
        let y = tape.linear_nobias(z0, w).unwrap();
        assert_eq!(tape.value(y).unwrap(), &[0.0; 3]);

        let z = tape.leaf(&t(&[2], &[0.5, 0.6]), false);
        let eye = tape.leaf(&t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]), false);
        let y = tape.linear_nobias(z, eye).unwrap();
        assert_eq!(tape.value(y).unwrap(), &[0.5, 0.6]);

        let z3 = tape.leaf(&t(&[3], &[0.0; 3]), false);
        assert!(tape.linear_nobias(z3, w).is_err());
    }

    #[test]
    fn l1_loss_values() {
        let mut tape = Tape::new();
        let p = tape.leaf(&t(&[2], &[0.0, 2.0]), true);
        let q = tape.leaf(&t(&[2], &[1.0, 0.0]), false);
        let l = tape.l1_loss(p, q).unwrap();
        assert_eq!(tape.value(l).unwrap(), &[1.5]);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(p).unwrap(), &[-0.5, 0.5]);

        let same = tape.l1_loss(p, p).unwrap();
        assert_eq!(tape.value(same).unwrap(), &[0.0]);
        tape.backward(same).unwrap();
        assert_eq!(tape.grad(p).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_sum_and_fan_out() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 9.0]), true);
        let l = tape.sum(x).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 6]);

        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[2], &[1.0, -2.0]), true);
        let y = tape.add(x, x).unwrap();
        let l = tape.sum(y).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn backward_errors() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[2], &[1.0, 2.0]), true);
        assert_eq!(tape.backward(x), Err(TensorError::NotScalar(vec![2])));
        let c = tape.leaf(&t(&[2], &[1.0, 2.0]), false);
        let l = tape.sum(c).unwrap();
        assert_eq!(tape.backward(l), Err(TensorError::Detached));
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[2], &[f64::MAX, 1.0]), false);
        assert_eq!(tape.add(x, x), Err(TensorError::NonFinite { op: "add" }));
    }

    #[test]
    fn inference_tape_releases_values() {
        let mut tape = Tape::<f32>::inference();
        let x = tape.leaf(&Tensor::zeros([2]), true);
        assert!(!tape.requires_grad(x));
        let y = tape.relu(x).unwrap();
        tape.release(x);
        assert_eq!(tape.value(x), Err(TensorError::Released));
        assert!(tape.value(y).is_ok());
    }
}
