//! Reverse-mode autograd tape.
//!
//! Operators append a node holding the forward value; [`Tape::backward`]
//! walks the nodes in reverse and returns gradients for every parameter leaf.

use crate::conv::{conv_out_size, conv_transpose_out_size, Window};
use crate::error::{Result, TensorError};
use crate::float::Float;
use crate::params::{Gradients, ParamId, Params};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Constant,
    Param { set: u64, idx: usize },
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    ConvTranspose2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    ReflectPad { x: Var, pad: usize },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: T },
    Relu { x: Var },
    LeakyRelu { x: Var, slope: T },
    Tanh { x: Var },
    Sigmoid { x: Var },
    Abs { x: Var },
    InstanceNorm { x: Var, rstd: Vec<T> },
    Concat { parts: Vec<Var> },
    Reshape { x: Var },
    Matmul { a: Var, b: Var, ta: bool, tb: bool },
    SoftmaxLast { x: Var },
    ChannelMean { x: Var },
    ChannelMax { x: Var, arg: Vec<u32> },
    SpatialMean { x: Var },
    SpatialMax { x: Var, arg: Vec<u32> },
    Mean { x: Var },
    BceWithLogits { x: Var, target: T },
    MseToConst { x: Var, target: T },
    SpectralNorm { w: Var, u: Vec<T>, v: Vec<T>, sigma: T },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

fn invalid(op: &'static str, shape: &[usize], reason: impl Into<String>) -> TensorError {
    TensorError::InvalidShape {
        op,
        shape: shape.to_vec(),
        reason: reason.into(),
    }
}

/// Strides of `b` when broadcast against `full` (0 on broadcast axes).
fn broadcast_strides(full: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    if full.len() != b.len() {
        return None;
    }
    let mut strides = vec![0; b.len()];
    let mut acc = 1;
    for d in (0..b.len()).rev() {
        if b[d] == full[d] {
            strides[d] = acc;
        } else if b[d] != 1 {
            return None;
        }
        acc *= b[d];
    }
    Some(strides)
}

fn broadcast_index(mut flat: usize, full: &[usize], strides: &[usize]) -> usize {
    let mut idx = 0;
    for d in (0..full.len()).rev() {
        idx += (flat % full[d]) * strides[d];
        flat /= full[d];
    }
    idx
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Param { .. } => true,
            Op::Constant => false,
            _ => parents.iter().any(|p| self.nodes[p.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Constant, &[])
    }

    pub fn param(&mut self, params: &Params<T>, id: ParamId) -> Var {
        let value = params.value(id).clone();
        self.push(
            value,
            Op::Param {
                set: params.set_id(),
                idx: id.0,
            },
            &[],
        )
    }

    // ---------------------------------------------------------------- conv

    fn check_conv_weight(&self, op: &'static str, x: Var, w: Var, in_axis: usize) -> Result<([usize; 4], [usize; 4])> {
        let xd = self.value(x).dims4()?;
        let wd = self.value(w).dims4()?;
        if wd[in_axis] != xd[1] || wd[2] != wd[3] {
            return Err(mismatch(op, &xd, &wd));
        }
        Ok((xd, wd))
    }

    fn check_bias(&self, op: &'static str, b: Option<Var>, channels: usize) -> Result<()> {
        if let Some(b) = b {
            if self.shape(b) != [channels] {
                return Err(mismatch(op, self.shape(b), &[channels]));
            }
        }
        Ok(())
    }

    /// 2D convolution with zero padding. `w` is `[Cout, Cin, k, k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let ([n, cin, h, wd_], [cout, _, k, _]) = self.check_conv_weight("conv2d", x, w, 1)?;
        self.check_bias("conv2d", b, cout)?;
        let (oh, ow) = match (conv_out_size(h, k, stride, pad), conv_out_size(wd_, k, stride, pad)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(invalid("conv2d", self.shape(x), format!("kernel {k} does not fit"))),
        };
        let win = Window { channels: cin, height: h, width: wd_, kernel: k, stride, pad, out_h: oh, out_w: ow };
        let mut out = Tensor::zeros(&[n, cout, oh, ow]);
        let mut cols = vec![T::zero(); win.col_rows() * win.col_cols()];
        let (xs, ws) = (self.value(x).data(), self.value(w).data());
        let plane_in = cin * h * wd_;
        let plane_out = cout * oh * ow;
        for s in 0..n {
            win.im2col(&xs[s * plane_in..(s + 1) * plane_in], &mut cols);
            let dst = &mut out.data_mut()[s * plane_out..(s + 1) * plane_out];
            T::gemm(false, false, cout, oh * ow, win.col_rows(), T::one(), ws, &cols, T::zero(), dst);
            if let Some(b) = b {
                let bs = self.value(b).data();
                for (c, chunk) in dst.chunks_mut(oh * ow).enumerate() {
                    chunk.iter_mut().for_each(|v| *v += bs[c]);
                }
            }
        }
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push(out, Op::Conv2d { x, w, b, stride, pad }, &parents))
    }

    /// Transposed 2D convolution. `w` is `[Cin, Cout, k, k]`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        output_pad: usize,
    ) -> Result<Var> {
        let ([n, cin, h, wd_], [_, cout, k, _]) = self.check_conv_weight("conv_transpose2d", x, w, 0)?;
        self.check_bias("conv_transpose2d", b, cout)?;
        let (oh, ow) = match (
            conv_transpose_out_size(h, k, stride, pad, output_pad),
            conv_transpose_out_size(wd_, k, stride, pad, output_pad),
        ) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(invalid("conv_transpose2d", self.shape(x), "empty output")),
        };
        let win = Window { channels: cout, height: oh, width: ow, kernel: k, stride, pad, out_h: h, out_w: wd_ };
        let mut out = Tensor::zeros(&[n, cout, oh, ow]);
        let mut cols = vec![T::zero(); win.col_rows() * win.col_cols()];
        let (xs, ws) = (self.value(x).data(), self.value(w).data());
        let plane_in = cin * h * wd_;
        let plane_out = cout * oh * ow;
        for s in 0..n {
            T::gemm(true, false, win.col_rows(), h * wd_, cin, T::one(), ws, &xs[s * plane_in..(s + 1) * plane_in], T::zero(), &mut cols);
            let dst = &mut out.data_mut()[s * plane_out..(s + 1) * plane_out];
            win.col2im(&cols, dst);
            if let Some(b) = b {
                let bs = self.value(b).data();
                for (c, chunk) in dst.chunks_mut(oh * ow).enumerate() {
                    chunk.iter_mut().for_each(|v| *v += bs[c]);
                }
            }
        }
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push(out, Op::ConvTranspose2d { x, w, b, stride, pad }, &parents))
    }

    /// Mirror padding without edge repetition on both spatial axes.
    pub fn reflect_pad(&mut self, x: Var, pad: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        if pad >= h || pad >= w {
            return Err(invalid("reflect_pad", self.shape(x), format!("pad {pad} too large")));
        }
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        let src = self.value(x).data();
        let mut out = Tensor::zeros(&[n, c, ph, pw]);
        let dst = out.data_mut();
        for plane in 0..n * c {
            for i in 0..ph {
                let si = reflect(i as isize - pad as isize, h);
                for j in 0..pw {
                    let sj = reflect(j as isize - pad as isize, w);
                    dst[plane * ph * pw + i * pw + j] = src[plane * h * w + si * w + sj];
                }
            }
        }
        Ok(self.push(out, Op::ReflectPad { x, pad }, &[x]))
    }

    // ----------------------------------------------------------- pointwise

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch("add", self.shape(a), self.shape(b)));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(out, Op::Add { a, b }, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch("sub", self.shape(a), self.shape(b)));
        }
        let bv = self.value(b).data();
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().zip(bv).for_each(|(x, &y)| *x -= y);
        Ok(self.push(out, Op::Sub { a, b }, &[a, b]))
    }

    /// Elementwise product; `b` may broadcast along axes where its extent is 1.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let full = self.shape(a).to_vec();
        let strides = broadcast_strides(&full, self.shape(b))
            .ok_or_else(|| mismatch("mul", &full, self.shape(b)))?;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let out = Tensor::from_fn(&full, |i| av[i] * bv[broadcast_index(i, &full, &strides)]);
        Ok(self.push(out, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale { x, c }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(T::zero()));
        self.push(out, Op::Relu { x }, &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { v * slope });
        self.push(out, Op::LeakyRelu { x, slope }, &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.tanh());
        self.push(out, Op::Tanh { x }, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid { x }, &[x])
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.abs());
        self.push(out, Op::Abs { x }, &[x])
    }

    /// Per-sample, per-channel normalization over the spatial extent (no affine).
    pub fn instance_norm(&mut self, x: Var, eps: T) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        let hw = h * w;
        let inv = T::one() / T::lit(hw as f64);
        let src = self.value(x).data();
        let mut out = Tensor::zeros(&[n, c, h, w]);
        let mut rstd = Vec::with_capacity(n * c);
        for (plane, dst) in src.chunks(hw).zip(out.data_mut().chunks_mut(hw)) {
            let mean = plane.iter().copied().sum::<T>() * inv;
            let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv;
            let r = T::one() / (var + eps).sqrt();
            for (d, &v) in dst.iter_mut().zip(plane) {
                *d = (v - mean) * r;
            }
            rstd.push(r);
        }
        Ok(self.push(out, Op::InstanceNorm { x, rstd }, &[x]))
    }

    // ------------------------------------------------------------ structure

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat_channels(&tensors)?;
        Ok(self.push(out, Op::Concat { parts: parts.to_vec() }, parts))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(out, Op::Reshape { x }, &[x]))
    }

    /// Batched product of rank-3 tensors: `op(a)[B,M,K] x op(b)[B,K,N]`.
    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(mismatch("matmul", &sa, &sb));
        }
        let (m, ka) = if ta { (sa[2], sa[1]) } else { (sa[1], sa[2]) };
        let (kb, n) = if tb { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if ka != kb {
            return Err(mismatch("matmul", &sa, &sb));
        }
        let batch = sa[0];
        let mut out = Tensor::zeros(&[batch, m, n]);
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        for s in 0..batch {
            T::gemm(
                ta,
                tb,
                m,
                n,
                ka,
                T::one(),
                &av[s * m * ka..(s + 1) * m * ka],
                &bv[s * ka * n..(s + 1) * ka * n],
                T::zero(),
                &mut out.data_mut()[s * m * n..(s + 1) * m * n],
            );
        }
        Ok(self.push(out, Op::Matmul { a, b, ta, tb }, &[a, b]))
    }

    /// Softmax over the last axis.
    pub fn softmax_last(&mut self, x: Var) -> Result<Var> {
        let last = *self
            .shape(x)
            .last()
            .ok_or_else(|| invalid("softmax", &[], "rank 0"))?;
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(last) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            row.iter_mut().for_each(|v| *v /= sum);
        }
        Ok(self.push(out, Op::SoftmaxLast { x }, &[x]))
    }

    /// Mean over channels: `[N,C,H,W] -> [N,1,H,W]`.
    pub fn channel_mean(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        let hw = h * w;
        let inv = T::one() / T::lit(c as f64);
        let src = self.value(x).data();
        let mut out = Tensor::zeros(&[n, 1, h, w]);
        for s in 0..n {
            let dst = &mut out.data_mut()[s * hw..(s + 1) * hw];
            for ch in 0..c {
                let plane = &src[(s * c + ch) * hw..(s * c + ch + 1) * hw];
                dst.iter_mut().zip(plane).for_each(|(d, &v)| *d += v);
            }
            dst.iter_mut().for_each(|d| *d *= inv);
        }
        Ok(self.push(out, Op::ChannelMean { x }, &[x]))
    }

    /// Max over channels: `[N,C,H,W] -> [N,1,H,W]`.
    pub fn channel_max(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        let hw = h * w;
        let src = self.value(x).data();
        let mut out = Tensor::full(&[n, 1, h, w], T::neg_infinity());
        let mut arg = vec![0u32; n * hw];
        for s in 0..n {
            for ch in 0..c {
                for p in 0..hw {
                    let v = src[(s * c + ch) * hw + p];
                    if v > out.data()[s * hw + p] {
                        out.data_mut()[s * hw + p] = v;
                        arg[s * hw + p] = ch as u32;
                    }
                }
            }
        }
        Ok(self.push(out, Op::ChannelMax { x, arg }, &[x]))
    }

    /// Global average pool: `[N,C,H,W] -> [N,C,1,1]`.
    pub fn spatial_mean(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        let inv = T::one() / T::lit((h * w) as f64);
        let data = self
            .value(x)
            .data()
            .chunks(h * w)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let out = Tensor::from_vec(&[n, c, 1, 1], data)?;
        Ok(self.push(out, Op::SpatialMean { x }, &[x]))
    }

    /// Global max pool: `[N,C,H,W] -> [N,C,1,1]`.
    pub fn spatial_max(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        let mut data = Vec::with_capacity(n * c);
        let mut arg = Vec::with_capacity(n * c);
        for plane in self.value(x).data().chunks(h * w) {
            let (mut best, mut at) = (T::neg_infinity(), 0);
            for (i, &v) in plane.iter().enumerate() {
                if v > best {
                    best = v;
                    at = i;
                }
            }
            data.push(best);
            arg.push(at as u32);
        }
        let out = Tensor::from_vec(&[n, c, 1, 1], data)?;
        Ok(self.push(out, Op::SpatialMax { x, arg }, &[x]))
    }

    // --------------------------------------------------------------- losses

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.sum() / T::lit(v.numel() as f64);
        self.push(Tensor::scalar(m), Op::Mean { x }, &[x])
    }

    /// Mean binary cross-entropy of logits against a constant label.
    pub fn bce_with_logits(&mut self, x: Var, target: T) -> Var {
        let v = self.value(x);
        let total: T = v
            .data()
            .iter()
            .map(|&z| z.max(T::zero()) - z * target + (T::one() + (-z.abs()).exp()).ln())
            .sum();
        let m = total / T::lit(v.numel() as f64);
        self.push(Tensor::scalar(m), Op::BceWithLogits { x, target }, &[x])
    }

    /// Mean squared difference to a constant label.
    pub fn mse_to_const(&mut self, x: Var, target: T) -> Var {
        let v = self.value(x);
        let total: T = v.data().iter().map(|&z| (z - target) * (z - target)).sum();
        let m = total / T::lit(v.numel() as f64);
        self.push(Tensor::scalar(m), Op::MseToConst { x, target }, &[x])
    }

    /// `w / sigma` with `sigma = u^T W v`, `W` being `w` flattened to
    /// `[out, fan_in]`. `u` and `v` are treated as constants.
    pub fn spectral_norm(&mut self, w: Var, u: &[T], v: &[T]) -> Result<Var> {
        let shape = self.shape(w).to_vec();
        let rows = shape[0];
        let cols = self.value(w).numel() / rows.max(1);
        if u.len() != rows || v.len() != cols {
            return Err(mismatch("spectral_norm", &shape, &[u.len(), v.len()]));
        }
        let wv = self.value(w).data();
        let mut sigma = T::zero();
        for r in 0..rows {
            let dot: T = wv[r * cols..(r + 1) * cols].iter().zip(v).map(|(&a, &b)| a * b).sum();
            sigma += u[r] * dot;
        }
        if !(sigma.abs() > T::zero()) {
            return Err(invalid("spectral_norm", &shape, "degenerate sigma"));
        }
        let out = self.value(w).map(|x| x / sigma);
        Ok(self.push(
            out,
            Op::SpectralNorm { w, u: u.to_vec(), v: v.to_vec(), sigma },
            &[w],
        ))
    }

    // ------------------------------------------------------------- backward

    /// Gradients of the scalar `loss` with respect to every parameter leaf.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).numel(), 1, "backward from non-scalar");
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        let mut out = Gradients::default();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.backward_node(i, g, &mut grads, &mut out);
        }
        out
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backward_node(&self, i: usize, g: Tensor<T>, grads: &mut [Option<Tensor<T>>], out: &mut Gradients<T>) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Constant => {}
            Op::Param { set, idx } => match out.by_param.get_mut(&(*set, *idx)) {
                Some(acc) => acc.add_assign(&g),
                None => {
                    out.by_param.insert((*set, *idx), g);
                }
            },
            Op::Conv2d { x, w, b, stride, pad } => {
                let [n, cin, h, wd_] = self.value(*x).dims4().expect("rank checked");
                let [cout, _, k, _] = self.value(*w).dims4().expect("rank checked");
                let [_, _, oh, ow] = y.dims4().expect("rank checked");
                let win = Window { channels: cin, height: h, width: wd_, kernel: k, stride: *stride, pad: *pad, out_h: oh, out_w: ow };
                let (xs, ws, gs) = (self.value(*x).data(), self.value(*w).data(), g.data());
                let (plane_in, plane_out) = (cin * h * wd_, cout * oh * ow);
                let mut cols = vec![T::zero(); win.col_rows() * win.col_cols()];
                let mut dw = Tensor::zeros(self.shape(*w));
                let mut dx = self.wants(*x).then(|| Tensor::zeros(self.shape(*x)));
                for s in 0..n {
                    let gy = &gs[s * plane_out..(s + 1) * plane_out];
                    if self.wants(*w) {
                        win.im2col(&xs[s * plane_in..(s + 1) * plane_in], &mut cols);
                        T::gemm(false, true, cout, win.col_rows(), oh * ow, T::one(), gy, &cols, T::one(), dw.data_mut());
                    }
                    if let Some(dx) = dx.as_mut() {
                        T::gemm(true, false, win.col_rows(), oh * ow, cout, T::one(), ws, gy, T::zero(), &mut cols);
                        win.col2im(&cols, &mut dx.data_mut()[s * plane_in..(s + 1) * plane_in]);
                    }
                }
                if let Some(b) = b {
                    let db = bias_grad(&g, cout, oh * ow);
                    self.accumulate(grads, *b, db);
                }
                self.accumulate(grads, *w, dw);
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::ConvTranspose2d { x, w, b, stride, pad } => {
                let [n, cin, h, wd_] = self.value(*x).dims4().expect("rank checked");
                let [_, cout, k, _] = self.value(*w).dims4().expect("rank checked");
                let [_, _, oh, ow] = y.dims4().expect("rank checked");
                let win = Window { channels: cout, height: oh, width: ow, kernel: k, stride: *stride, pad: *pad, out_h: h, out_w: wd_ };
                let (xs, ws, gs) = (self.value(*x).data(), self.value(*w).data(), g.data());
                let (plane_in, plane_out) = (cin * h * wd_, cout * oh * ow);
                let mut cols = vec![T::zero(); win.col_rows() * win.col_cols()];
                let mut dw = Tensor::zeros(self.shape(*w));
                let mut dx = self.wants(*x).then(|| Tensor::zeros(self.shape(*x)));
                for s in 0..n {
                    win.im2col(&gs[s * plane_out..(s + 1) * plane_out], &mut cols);
                    if self.wants(*w) {
                        T::gemm(false, true, cin, win.col_rows(), h * wd_, T::one(), &xs[s * plane_in..(s + 1) * plane_in], &cols, T::one(), dw.data_mut());
                    }
                    if let Some(dx) = dx.as_mut() {
                        T::gemm(false, false, cin, h * wd_, win.col_rows(), T::one(), ws, &cols, T::zero(), &mut dx.data_mut()[s * plane_in..(s + 1) * plane_in]);
                    }
                }
                if let Some(b) = b {
                    let db = bias_grad(&g, cout, oh * ow);
                    self.accumulate(grads, *b, db);
                }
                self.accumulate(grads, *w, dw);
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::ReflectPad { x, pad } => {
                let [n, c, h, w] = self.value(*x).dims4().expect("rank checked");
                let (ph, pw) = (h + 2 * pad, w + 2 * pad);
                let mut dx = Tensor::zeros(&[n, c, h, w]);
                let (dst, src) = (dx.data_mut(), g.data());
                for plane in 0..n * c {
                    for i in 0..ph {
                        let si = reflect(i as isize - *pad as isize, h);
                        for j in 0..pw {
                            let sj = reflect(j as isize - *pad as isize, w);
                            dst[plane * h * w + si * w + sj] += src[plane * ph * pw + i * pw + j];
                        }
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *b, g.clone());
                self.accumulate(grads, *a, g);
            }
            Op::Sub { a, b } => {
                self.accumulate(grads, *b, g.map(|v| -v));
                self.accumulate(grads, *a, g);
            }
            Op::Mul { a, b } => {
                let full = self.shape(*a).to_vec();
                let bshape = self.shape(*b).to_vec();
                let strides = broadcast_strides(&full, &bshape).expect("checked in forward");
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*b) {
                    let mut db = Tensor::zeros(&bshape);
                    let dbd = db.data_mut();
                    for (i, (&gi, &ai)) in g.data().iter().zip(av).enumerate() {
                        dbd[broadcast_index(i, &full, &strides)] += gi * ai;
                    }
                    self.accumulate(grads, *b, db);
                }
                if self.wants(*a) {
                    let gd = g.data();
                    let da = Tensor::from_fn(&full, |i| gd[i] * bv[broadcast_index(i, &full, &strides)]);
                    self.accumulate(grads, *a, da);
                }
            }
            Op::Scale { x, c } => self.accumulate(grads, *x, g.map(|v| v * *c)),
            Op::Relu { x } => {
                let xv = self.value(*x).data();
                let dx = Tensor::from_fn(g.shape(), |i| if xv[i] > T::zero() { g.data()[i] } else { T::zero() });
                self.accumulate(grads, *x, dx);
            }
            Op::LeakyRelu { x, slope } => {
                let xv = self.value(*x).data();
                let dx = Tensor::from_fn(g.shape(), |i| {
                    if xv[i] > T::zero() { g.data()[i] } else { g.data()[i] * *slope }
                });
                self.accumulate(grads, *x, dx);
            }
            Op::Tanh { x } => {
                let yv = y.data();
                let dx = Tensor::from_fn(g.shape(), |i| g.data()[i] * (T::one() - yv[i] * yv[i]));
                self.accumulate(grads, *x, dx);
            }
            Op::Sigmoid { x } => {
                let yv = y.data();
                let dx = Tensor::from_fn(g.shape(), |i| g.data()[i] * yv[i] * (T::one() - yv[i]));
                self.accumulate(grads, *x, dx);
            }
            Op::Abs { x } => {
                let xv = self.value(*x).data();
                let dx = Tensor::from_fn(g.shape(), |i| {
                    let s = if xv[i] > T::zero() { T::one() } else if xv[i] < T::zero() { -T::one() } else { T::zero() };
                    g.data()[i] * s
                });
                self.accumulate(grads, *x, dx);
            }
            Op::InstanceNorm { x, rstd } => {
                let [_, _, h, w] = y.dims4().expect("rank checked");
                let hw = h * w;
                let inv = T::one() / T::lit(hw as f64);
                let mut dx = Tensor::zeros(y.shape());
                for (p, ((dxp, gp), yp)) in dx
                    .data_mut()
                    .chunks_mut(hw)
                    .zip(g.data().chunks(hw))
                    .zip(y.data().chunks(hw))
                    .enumerate()
                {
                    let mean_g = gp.iter().copied().sum::<T>() * inv;
                    let mean_gy = gp.iter().zip(yp).map(|(&a, &b)| a * b).sum::<T>() * inv;
                    for k in 0..hw {
                        dxp[k] = rstd[p] * (gp[k] - mean_g - yp[k] * mean_gy);
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Concat { parts } => {
                let mut start = 0;
                for p in parts {
                    let c = self.shape(*p)[1];
                    if self.wants(*p) {
                        let piece = g.channel_slice(start, c).expect("shape recorded");
                        self.accumulate(grads, *p, piece);
                    }
                    start += c;
                }
            }
            Op::Reshape { x } => {
                let shape = self.shape(*x).to_vec();
                self.accumulate(grads, *x, g.reshaped(&shape).expect("same numel"));
            }
            Op::Matmul { a, b, ta, tb } => {
                let (sa, sb) = (self.shape(*a).to_vec(), self.shape(*b).to_vec());
                let (m, k) = if *ta { (sa[2], sa[1]) } else { (sa[1], sa[2]) };
                let n = if *tb { sb[1] } else { sb[2] };
                let (av, bv, gv) = (self.value(*a).data(), self.value(*b).data(), g.data());
                if self.wants(*a) {
                    let mut da = Tensor::zeros(&sa);
                    for s in 0..sa[0] {
                        let (gs, bs) = (&gv[s * m * n..(s + 1) * m * n], &bv[s * k * n..(s + 1) * k * n]);
                        let ds = &mut da.data_mut()[s * m * k..(s + 1) * m * k];
                        if *ta {
                            T::gemm(*tb, true, k, m, n, T::one(), bs, gs, T::zero(), ds);
                        } else {
                            T::gemm(false, !*tb, m, k, n, T::one(), gs, bs, T::zero(), ds);
                        }
                    }
                    self.accumulate(grads, *a, da);
                }
                if self.wants(*b) {
                    let mut db = Tensor::zeros(&sb);
                    for s in 0..sa[0] {
                        let (gs, as_) = (&gv[s * m * n..(s + 1) * m * n], &av[s * m * k..(s + 1) * m * k]);
                        let ds = &mut db.data_mut()[s * k * n..(s + 1) * k * n];
                        if *tb {
                            T::gemm(true, *ta, n, k, m, T::one(), gs, as_, T::zero(), ds);
                        } else {
                            T::gemm(!*ta, false, k, n, m, T::one(), as_, gs, T::zero(), ds);
                        }
                    }
                    self.accumulate(grads, *b, db);
                }
            }
            Op::SoftmaxLast { x } => {
                let last = *y.shape().last().expect("rank checked");
                let mut dx = Tensor::zeros(y.shape());
                for ((d, gr), yr) in dx.data_mut().chunks_mut(last).zip(g.data().chunks(last)).zip(y.data().chunks(last)) {
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for k in 0..last {
                        d[k] = yr[k] * (gr[k] - dot);
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::ChannelMean { x } => {
                let [n, c, h, w] = self.value(*x).dims4().expect("rank checked");
                let hw = h * w;
                let inv = T::one() / T::lit(c as f64);
                let gv = g.data();
                let dx = Tensor::from_fn(&[n, c, h, w], |i| {
                    let (s, p) = (i / (c * hw), i % hw);
                    gv[s * hw + p] * inv
                });
                self.accumulate(grads, *x, dx);
            }
            Op::ChannelMax { x, arg } => {
                let [n, c, h, w] = self.value(*x).dims4().expect("rank checked");
                let hw = h * w;
                let mut dx = Tensor::zeros(&[n, c, h, w]);
                for s in 0..n {
                    for p in 0..hw {
                        let ch = arg[s * hw + p] as usize;
                        dx.data_mut()[(s * c + ch) * hw + p] += g.data()[s * hw + p];
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::SpatialMean { x } => {
                let [_, _, h, w] = self.value(*x).dims4().expect("rank checked");
                let hw = h * w;
                let inv = T::one() / T::lit(hw as f64);
                let gv = g.data();
                let dx = Tensor::from_fn(self.shape(*x), |i| gv[i / hw] * inv);
                self.accumulate(grads, *x, dx);
            }
            Op::SpatialMax { x, arg } => {
                let [_, _, h, w] = self.value(*x).dims4().expect("rank checked");
                let hw = h * w;
                let mut dx = Tensor::zeros(self.shape(*x));
                for (plane, &a) in arg.iter().enumerate() {
                    dx.data_mut()[plane * hw + a as usize] += g.data()[plane];
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Mean { x } => {
                let n = T::lit(self.value(*x).numel() as f64);
                let gv = g.data()[0] / n;
                self.accumulate(grads, *x, Tensor::full(self.shape(*x), gv));
            }
            Op::BceWithLogits { x, target } => {
                let xv = self.value(*x);
                let scale = g.data()[0] / T::lit(xv.numel() as f64);
                let dx = xv.map(|z| (sigmoid(z) - *target) * scale);
                self.accumulate(grads, *x, dx);
            }
            Op::MseToConst { x, target } => {
                let xv = self.value(*x);
                let scale = g.data()[0] * T::lit(2.0) / T::lit(xv.numel() as f64);
                let dx = xv.map(|z| (z - *target) * scale);
                self.accumulate(grads, *x, dx);
            }
            Op::SpectralNorm { w, u, v, sigma } => {
                let rows = u.len();
                let cols = v.len();
                let dot: T = g.data().iter().zip(y.data()).map(|(&a, &b)| a * b).sum();
                let gv = g.data();
                let dw = Tensor::from_fn(self.shape(*w), |i| {
                    let (r, c) = (i / cols, i % cols);
                    debug_assert!(r < rows);
                    (gv[i] - dot * u[r] * v[c]) / *sigma
                });
                self.accumulate(grads, *w, dw);
            }
        }
    }
}

fn sigmoid<T: Float>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

fn bias_grad<T: Float>(g: &Tensor<T>, channels: usize, plane: usize) -> Tensor<T> {
    let mut db = Tensor::zeros(&[channels]);
    for (i, chunk) in g.data().chunks(plane).enumerate() {
        db.data_mut()[i % channels] += chunk.iter().copied().sum::<T>();
    }
    db
}
