use std::collections::HashMap;

use ps_core::Scalar;

use crate::params::{Gradients, ParamSet};
use crate::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn k(&self) -> usize {
        self.c * self.kh * self.kw
    }
    fn p(&self) -> usize {
        self.oh * self.ow
    }
}

enum Op<T> {
    Leaf,
    Param { set: usize, index: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    Conv2d { x: Var, w: Var, b: Option<Var>, cols: Vec<T>, g: ConvGeom },
    Upsample { x: Var, factor: usize },
    Relu(Var),
    LeakyRelu(Var, T),
    Tanh(Var),
    Sigmoid(Var),
    InstanceNorm { x: Var, inv_std: Vec<T> },
    ChannelAffine { x: Var, scale: Var, shift: Var },
    AdaptiveMaxPool { x: Var, argmax: Vec<usize> },
    GlobalAvgPool(Var),
    Reshape(Var),
    Concat0(Vec<Var>),
    Slice0 { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    Mean(Var),
    L1Mean(Var, Var),
    Log(Var),
    Clamp(Var, T, T),
    SoftmaxCe { logits: Var, targets: Vec<usize>, probs: Vec<T>, clamped: Vec<bool> },
    KlDiv { student: Var, teacher: Var, p: Vec<T>, q: Vec<T>, clamped: Vec<bool>, row_loss: Vec<T> },
    RowNormalize { x: Var, norms: Vec<T> },
    External { x: Var, grad: Tensor<T> },
    WeightedSum(Vec<(Var, T)>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records one forward pass for reverse-mode differentiation.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    params: HashMap<(usize, usize), Var>,
    frozen: HashMap<(usize, usize), Var>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

const NORM_EPS: f64 = 1e-5;
const PROB_FLOOR: f64 = 1e-12;

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), params: HashMap::new(), frozen: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    pub fn item(&self, v: Var) -> T {
        self.value(v).item()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Copy of `v`'s value with the gradient path cut.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    /// A trainable parameter. Repeated calls for the same parameter share one node.
    pub fn param(&mut self, set: &ParamSet<T>, index: usize) -> Var {
        if let Some(&v) = self.params.get(&(set.id, index)) {
            return v;
        }
        let v = self.push(set.tensors[index].clone(), Op::Param { set: set.id, index }, true);
        self.params.insert((set.id, index), v);
        v
    }

    /// A parameter used read-only: gradients pass through its consumers but
    /// are not collected for it.
    pub fn frozen_param(&mut self, set: &ParamSet<T>, index: usize) -> Var {
        if let Some(&v) = self.frozen.get(&(set.id, index)) {
            return v;
        }
        let v = self.constant(set.tensors[index].clone());
        self.frozen.insert((set.id, index), v);
        v
    }

    pub fn weight(&mut self, set: &ParamSet<T>, index: usize, trainable: bool) -> Var {
        if trainable {
            self.param(set, index)
        } else {
            self.frozen_param(set, index)
        }
    }

    fn binary_same_shape(&self, a: Var, b: Var, op: &str) {
        assert_eq!(self.shape(a), self.shape(b), "{op}: shape mismatch");
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, "add");
        let data = self.value(a).data.iter().zip(&self.value(b).data).map(|(&x, &y)| x + y).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data);
        let ng = self.needs(a) || self.needs(b);
        self.push(t, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, "sub");
        let data = self.value(a).data.iter().zip(&self.value(b).data).map(|(&x, &y)| x - y).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data);
        let ng = self.needs(a) || self.needs(b);
        self.push(t, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, "mul");
        let data = self.value(a).data.iter().zip(&self.value(b).data).map(|(&x, &y)| x * y).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data);
        let ng = self.needs(a) || self.needs(b);
        self.push(t, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let x = self.value(a);
        let t = Tensor::new(x.shape.clone(), x.data.iter().map(|&v| v * s).collect());
        let ng = self.needs(a);
        self.push(t, Op::Scale(a, s), ng)
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let x = self.value(a);
        let t = Tensor::new(x.shape.clone(), x.data.iter().map(|&v| v + s).collect());
        let ng = self.needs(a);
        self.push(t, Op::AddScalar(a), ng)
    }

    /// `x [N, in] * w[out, in]^T + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (n, din) = (self.shape(x)[0], self.shape(x)[1]);
        assert_eq!(self.shape(x).len(), 2, "linear expects [N, in]");
        let (dout, win) = (self.shape(w)[0], self.shape(w)[1]);
        assert_eq!(din, win, "linear: input width {din} vs weight {win}");
        let mut out = vec![T::zero(); n * dout];
        if let Some(b) = b {
            let bias = &self.value(b).data;
            for row in out.chunks_mut(dout) {
                row.copy_from_slice(bias);
            }
        }
        let beta = if b.is_some() { T::one() } else { T::zero() };
        T::gemm(
            n, din, dout, T::one(),
            &self.value(x).data, din as isize, 1,
            &self.value(w).data, 1, din as isize,
            beta, &mut out, dout as isize, 1,
        );
        let ng = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        self.push(Tensor::new(vec![n, dout], out), Op::Linear { x, w, b }, ng)
    }

    /// 2-D convolution, NCHW input, weight `[O, C, kh, kw]`, symmetric zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let (n, c, h, wd) = self.value(x).nchw();
        let (o, wc, kh, kw) = self.value(w).nchw();
        assert_eq!(c, wc, "conv2d: input channels {c} vs weight {wc}");
        assert!(h + 2 * pad >= kh && wd + 2 * pad >= kw, "conv2d: kernel larger than padded input");
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let g = ConvGeom { n, c, h, w: wd, o, kh, kw, oh, ow, stride, pad };
        let (k, p) = (g.k(), g.p());
        let np = n * p;
        // Columns of all images side by side: [K, N * P], one GEMM per layer.
        let mut cols = vec![T::zero(); k * np];
        let xin = &self.value(x).data;
        for i in 0..n {
            im2col(&xin[i * c * h * wd..(i + 1) * c * h * wd], &g, &mut cols, np, i * p);
        }
        let mut prod = vec![T::zero(); o * np];
        T::gemm(
            o, k, np, T::one(),
            &self.value(w).data, k as isize, 1,
            &cols, np as isize, 1,
            T::zero(), &mut prod, np as isize, 1,
        );
        let bias = b.map(|b| &self.value(b).data);
        let mut out = vec![T::zero(); n * o * p];
        for oc in 0..o {
            let bv = bias.map_or(T::zero(), |bb| bb[oc]);
            for i in 0..n {
                let src = &prod[oc * np + i * p..oc * np + (i + 1) * p];
                let dst = &mut out[(i * o + oc) * p..(i * o + oc + 1) * p];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d = v + bv;
                }
            }
        }
        let ng = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        self.push(Tensor::new(vec![n, o, oh, ow], out), Op::Conv2d { x, w, b, cols, g }, ng)
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Var {
        let (n, c, h, w) = self.value(x).nchw();
        let (oh, ow) = (h * factor, w * factor);
        let src = &self.value(x).data;
        let mut out = vec![T::zero(); n * c * oh * ow];
        for plane in 0..n * c {
            let s = &src[plane * h * w..(plane + 1) * h * w];
            let d = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
            for y in 0..oh {
                for xx in 0..ow {
                    d[y * ow + xx] = s[(y / factor) * w + xx / factor];
                }
            }
        }
        let ng = self.needs(x);
        self.push(Tensor::new(vec![n, c, oh, ow], out), Op::Upsample { x, factor }, ng)
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let v = self.value(x);
        let t = Tensor::new(v.shape.clone(), v.data.iter().map(|&a| f(a)).collect());
        let ng = self.needs(x);
        self.push(t, op, ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |a| a.max(T::zero()), Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        self.unary(x, |a| if a > T::zero() { a } else { a * slope }, Op::LeakyRelu(x, slope))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |a| a.tanh(), Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, |a| a.ln(), Op::Log(x))
    }

    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        self.unary(x, |a| a.max(lo).min(hi), Op::Clamp(x, lo, hi))
    }

    /// Normalizes each (sample, channel) plane to zero mean and unit variance.
    pub fn instance_norm(&mut self, x: Var) -> Var {
        let (n, c, h, w) = self.value(x).nchw();
        let hw = h * w;
        let src = &self.value(x).data;
        let mut out = vec![T::zero(); src.len()];
        let mut inv_std = vec![T::zero(); n * c];
        let inv_hw = T::lit(1.0 / hw as f64);
        for plane in 0..n * c {
            let s = &src[plane * hw..(plane + 1) * hw];
            let mean = s.iter().copied().sum::<T>() * inv_hw;
            let var = s.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_hw;
            let is = (var + T::lit(NORM_EPS)).sqrt().recip();
            inv_std[plane] = is;
            for (d, &v) in out[plane * hw..(plane + 1) * hw].iter_mut().zip(s) {
                *d = (v - mean) * is;
            }
        }
        let ng = self.needs(x);
        self.push(Tensor::new(vec![n, c, h, w], out), Op::InstanceNorm { x, inv_std }, ng)
    }

    /// `y[n,c,:,:] = x[n,c,:,:] * scale[n,c] + shift[n,c]`.
    pub fn channel_affine(&mut self, x: Var, scale: Var, shift: Var) -> Var {
        let (n, c, h, w) = self.value(x).nchw();
        assert_eq!(self.shape(scale), &[n, c], "channel_affine scale shape");
        assert_eq!(self.shape(shift), &[n, c], "channel_affine shift shape");
        let hw = h * w;
        let (src, sc, sh) = (&self.value(x).data, &self.value(scale).data, &self.value(shift).data);
        let mut out = vec![T::zero(); src.len()];
        for plane in 0..n * c {
            for (d, &v) in out[plane * hw..(plane + 1) * hw].iter_mut().zip(&src[plane * hw..(plane + 1) * hw]) {
                *d = v * sc[plane] + sh[plane];
            }
        }
        let ng = self.needs(x) || self.needs(scale) || self.needs(shift);
        self.push(Tensor::new(vec![n, c, h, w], out), Op::ChannelAffine { x, scale, shift }, ng)
    }

    /// Max over adaptive bins, matching the usual floor/ceil bin edges.
    pub fn adaptive_max_pool(&mut self, x: Var, out_h: usize, out_w: usize) -> Var {
        let (n, c, h, w) = self.value(x).nchw();
        let src = &self.value(x).data;
        let mut out = vec![T::zero(); n * c * out_h * out_w];
        let mut argmax = vec![0usize; out.len()];
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..out_h {
                let (y0, y1) = ((oy * h) / out_h, ((oy + 1) * h).div_ceil(out_h));
                for ox in 0..out_w {
                    let (x0, x1) = ((ox * w) / out_w, ((ox + 1) * w).div_ceil(out_w));
                    let mut best = base + y0 * w + x0;
                    for y in y0..y1 {
                        for xx in x0..x1 {
                            let idx = base + y * w + xx;
                            if src[idx] > src[best] {
                                best = idx;
                            }
                        }
                    }
                    let o = (plane * out_h + oy) * out_w + ox;
                    out[o] = src[best];
                    argmax[o] = best;
                }
            }
        }
        let ng = self.needs(x);
        self.push(Tensor::new(vec![n, c, out_h, out_w], out), Op::AdaptiveMaxPool { x, argmax }, ng)
    }

    /// Mean over the spatial axes: `[N, C, H, W] -> [N, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let (n, c, h, w) = self.value(x).nchw();
        let hw = h * w;
        let inv = T::lit(1.0 / hw as f64);
        let out = self.value(x).data.chunks(hw).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        let ng = self.needs(x);
        self.push(Tensor::new(vec![n, c], out), Op::GlobalAvgPool(x), ng)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let t = self.value(x).clone().reshaped(shape);
        let ng = self.needs(x);
        self.push(t, Op::Reshape(x), ng)
    }

    /// Concatenation along the leading (batch) axis.
    pub fn concat0(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty());
        let tail = self.shape(xs[0])[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &v in xs {
            assert_eq!(&self.shape(v)[1..], &tail[..], "concat0: trailing shape mismatch");
            rows += self.shape(v)[0];
            data.extend_from_slice(&self.value(v).data);
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        let ng = xs.iter().any(|&v| self.needs(v));
        self.push(Tensor::new(shape, data), Op::Concat0(xs.to_vec()), ng)
    }

    /// Rows `start..start + len` of the leading axis.
    pub fn slice0(&mut self, x: Var, start: usize, len: usize) -> Var {
        let shape = self.shape(x).to_vec();
        assert!(start + len <= shape[0], "slice0 out of range");
        let per: usize = shape[1..].iter().product();
        let data = self.value(x).data[start * per..(start + len) * per].to_vec();
        let mut s = shape;
        s[0] = len;
        let ng = self.needs(x);
        self.push(Tensor::new(s, data), Op::Slice0 { x, start }, ng)
    }

    /// Columns `start..start + len` of a `[N, D]` matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (n, d) = (self.shape(x)[0], self.shape(x)[1]);
        assert!(start + len <= d, "slice_cols out of range");
        let src = &self.value(x).data;
        let mut out = Vec::with_capacity(n * len);
        for r in 0..n {
            out.extend_from_slice(&src[r * d + start..r * d + start + len]);
        }
        let ng = self.needs(x);
        self.push(Tensor::new(vec![n, len], out), Op::SliceCols { x, start }, ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.data.iter().copied().sum::<T>() / T::lit(v.len() as f64);
        let ng = self.needs(x);
        self.push(Tensor::scalar(m), Op::Mean(x), ng)
    }

    /// Mean absolute difference over all elements.
    pub fn l1_mean(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, "l1_mean");
        let (va, vb) = (self.value(a), self.value(b));
        let m = va.data.iter().zip(&vb.data).map(|(&x, &y)| (x - y).abs()).sum::<T>() / T::lit(va.len() as f64);
        let ng = self.needs(a) || self.needs(b);
        self.push(Tensor::scalar(m), Op::L1Mean(a, b), ng)
    }

    /// Batch-mean softmax cross-entropy with `-log p` floored at `p = 1e-12`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let (n, c) = (self.shape(logits)[0], self.shape(logits)[1]);
        assert_eq!(targets.len(), n, "one target per row");
        let probs = softmax_rows(&self.value(logits).data, c);
        let floor = T::lit(PROB_FLOOR.ln());
        let mut total = T::zero();
        let mut clamped = Vec::with_capacity(n);
        for (r, &t) in targets.iter().enumerate() {
            assert!(t < c, "target {t} out of range for {c} classes");
            let lp = log_softmax_at(&self.value(logits).data[r * c..(r + 1) * c], t);
            clamped.push(lp < floor);
            total += -lp.max(floor);
        }
        let ng = self.needs(logits);
        let v = Tensor::scalar(total / T::lit(n as f64));
        self.push(v, Op::SoftmaxCe { logits, targets: targets.to_vec(), probs, clamped }, ng)
    }

    /// Batch-mean `KL(q || p)` with `p = softmax(student)` and `q = softmax(teacher)`.
    pub fn kl_div_logits(&mut self, student: Var, teacher: Var) -> Var {
        self.binary_same_shape(student, teacher, "kl_div_logits");
        let (n, c) = (self.shape(student)[0], self.shape(student)[1]);
        let p = softmax_rows(&self.value(student).data, c);
        let q = softmax_rows(&self.value(teacher).data, c);
        let floor = T::lit(PROB_FLOOR);
        let clamped: Vec<bool> = p.iter().map(|&v| v < floor).collect();
        let mut row_loss = vec![T::zero(); n];
        for r in 0..n {
            for m in 0..c {
                let (qm, pm) = (q[r * c + m], p[r * c + m].max(floor));
                if qm > T::zero() {
                    row_loss[r] += qm * (qm.ln() - pm.ln());
                }
            }
        }
        let total = row_loss.iter().copied().sum::<T>() / T::lit(n as f64);
        let ng = self.needs(student) || self.needs(teacher);
        self.push(Tensor::scalar(total), Op::KlDiv { student, teacher, p, q, clamped, row_loss }, ng)
    }

    /// Scales each row of `[N, D]` to unit L2 norm.
    pub fn row_normalize(&mut self, x: Var) -> Var {
        let d = self.shape(x)[1];
        let src = &self.value(x).data;
        let mut out = vec![T::zero(); src.len()];
        let mut norms = Vec::new();
        for (row, dst) in src.chunks(d).zip(out.chunks_mut(d)) {
            let nrm = row.iter().map(|&v| v * v).sum::<T>().sqrt().max(T::lit(PROB_FLOOR));
            norms.push(nrm);
            for (o, &v) in dst.iter_mut().zip(row) {
                *o = v / nrm;
            }
        }
        let shape = self.shape(x).to_vec();
        let ng = self.needs(x);
        self.push(Tensor::new(shape, out), Op::RowNormalize { x, norms }, ng)
    }

    /// A scalar loss computed outside the tape, with its gradient w.r.t. `x`.
    pub fn external_loss(&mut self, x: Var, value: T, grad: Tensor<T>) -> Var {
        assert_eq!(grad.shape, self.shape(x), "external_loss gradient shape");
        let ng = self.needs(x);
        self.push(Tensor::scalar(value), Op::External { x, grad }, ng)
    }

    /// `sum_i w_i * v_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Var {
        let total = terms.iter().map(|&(v, w)| self.item(v) * w).sum::<T>();
        let ng = terms.iter().any(|&(v, _)| self.needs(v));
        self.push(Tensor::scalar(total), Op::WeightedSum(terms.to_vec()), ng)
    }

    /// Back-propagates from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).len(), 1, "backward from non-scalar");
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

    fn accum(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(t) => t.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn accum_with(&self, grads: &mut [Option<Tensor<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.needs(v) {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(self.shape(v)));
        f(&mut slot.data);
    }

    fn backward_node(&self, i: usize, g: Tensor<T>, grads: &mut [Option<Tensor<T>>], out: &mut Gradients<T>) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Param { set, index } => match out.map.get_mut(&(*set, *index)) {
                Some(t) => t.add_assign(&g),
                None => {
                    out.map.insert((*set, *index), g);
                }
            },
            Op::Add(a, b) => {
                self.accum(grads, *b, g.clone());
                self.accum(grads, *a, g);
            }
            Op::Sub(a, b) => {
                let neg = Tensor::new(g.shape.clone(), g.data.iter().map(|&v| -v).collect());
                self.accum(grads, *b, neg);
                self.accum(grads, *a, g);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&self.value(*a).data, &self.value(*b).data);
                self.accum_with(grads, *a, |d| d.iter_mut().zip(&g.data).zip(vb).for_each(|((d, &gg), &y)| *d += gg * y));
                self.accum_with(grads, *b, |d| d.iter_mut().zip(&g.data).zip(va).for_each(|((d, &gg), &x)| *d += gg * x));
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.accum_with(grads, *a, |d| d.iter_mut().zip(&g.data).for_each(|(d, &gg)| *d += gg * s));
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                let shape = self.shape(*a).to_vec();
                self.accum(grads, *a, g.reshaped(&shape));
            }
            Op::Linear { x, w, b } => {
                let (n, din) = (self.shape(*x)[0], self.shape(*x)[1]);
                let dout = self.shape(*w)[0];
                if let Some(b) = b {
                    self.accum_with(grads, *b, |d| {
                        for row in g.data.chunks(dout) {
                            d.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                        }
                    });
                }
                let wv = &self.value(*w).data;
                self.accum_with(grads, *x, |d| {
                    T::gemm(n, dout, din, T::one(), &g.data, dout as isize, 1, wv, din as isize, 1, T::one(), d, din as isize, 1)
                });
                let xv = &self.value(*x).data;
                self.accum_with(grads, *w, |d| {
                    T::gemm(dout, n, din, T::one(), &g.data, 1, dout as isize, xv, din as isize, 1, T::one(), d, din as isize, 1)
                });
            }
            Op::Conv2d { x, w, b, cols, g: geo } => {
                let (k, p, o, n) = (geo.k(), geo.p(), geo.o, geo.n);
                let np = n * p;
                if let Some(b) = b {
                    self.accum_with(grads, *b, |d| {
                        for (plane, chunk) in g.data.chunks(p).enumerate() {
                            d[plane % o] += chunk.iter().copied().sum::<T>();
                        }
                    });
                }
                // Output gradient rearranged to [O, N * P] to match the column layout.
                let mut gt = vec![T::zero(); o * np];
                for i in 0..n {
                    for oc in 0..o {
                        gt[oc * np + i * p..oc * np + (i + 1) * p].copy_from_slice(&g.data[(i * o + oc) * p..(i * o + oc + 1) * p]);
                    }
                }
                self.accum_with(grads, *w, |d| {
                    T::gemm(
                        k, np, o, T::one(),
                        cols, np as isize, 1,
                        &gt, 1, np as isize,
                        T::one(), d, 1, k as isize,
                    );
                });
                if self.needs(*x) {
                    let wv = &self.value(*w).data;
                    let mut dcols = vec![T::zero(); k * np];
                    T::gemm(
                        k, o, np, T::one(),
                        wv, 1, k as isize,
                        &gt, np as isize, 1,
                        T::zero(), &mut dcols, np as isize, 1,
                    );
                    let chw = geo.c * geo.h * geo.w;
                    self.accum_with(grads, *x, |d| {
                        for i in 0..n {
                            col2im(&dcols, geo, &mut d[i * chw..(i + 1) * chw], np, i * p);
                        }
                    });
                }
            }
            Op::Upsample { x, factor } => {
                let (_, _, h, w) = self.value(*x).nchw();
                let f = *factor;
                let (oh, ow) = (h * f, w * f);
                self.accum_with(grads, *x, |d| {
                    for (plane, gp) in g.data.chunks(oh * ow).enumerate() {
                        let dp = &mut d[plane * h * w..(plane + 1) * h * w];
                        for y in 0..oh {
                            for xx in 0..ow {
                                dp[(y / f) * w + xx / f] += gp[y * ow + xx];
                            }
                        }
                    }
                });
            }
            Op::Relu(x) => {
                let xv = &self.value(*x).data;
                self.accum_with(grads, *x, |d| {
                    d.iter_mut().zip(&g.data).zip(xv).for_each(|((d, &gg), &v)| {
                        if v > T::zero() {
                            *d += gg
                        }
                    })
                });
            }
            Op::LeakyRelu(x, s) => {
                let (xv, s) = (&self.value(*x).data, *s);
                self.accum_with(grads, *x, |d| {
                    d.iter_mut().zip(&g.data).zip(xv).for_each(|((d, &gg), &v)| *d += if v > T::zero() { gg } else { gg * s })
                });
            }
            Op::Tanh(x) => {
                let yv = &node.value.data;
                self.accum_with(grads, *x, |d| {
                    d.iter_mut().zip(&g.data).zip(yv).for_each(|((d, &gg), &y)| *d += gg * (T::one() - y * y))
                });
            }
            Op::Sigmoid(x) => {
                let yv = &node.value.data;
                self.accum_with(grads, *x, |d| {
                    d.iter_mut().zip(&g.data).zip(yv).for_each(|((d, &gg), &y)| *d += gg * y * (T::one() - y))
                });
            }
            Op::Log(x) => {
                let xv = &self.value(*x).data;
                self.accum_with(grads, *x, |d| d.iter_mut().zip(&g.data).zip(xv).for_each(|((d, &gg), &v)| *d += gg / v));
            }
            Op::Clamp(x, lo, hi) => {
                let (xv, lo, hi) = (&self.value(*x).data, *lo, *hi);
                self.accum_with(grads, *x, |d| {
                    d.iter_mut().zip(&g.data).zip(xv).for_each(|((d, &gg), &v)| {
                        if v >= lo && v <= hi {
                            *d += gg
                        }
                    })
                });
            }
            Op::InstanceNorm { x, inv_std } => {
                let (_, _, h, w) = self.value(*x).nchw();
                let hw = h * w;
                let yv = &node.value.data;
                let inv_hw = T::lit(1.0 / hw as f64);
                self.accum_with(grads, *x, |d| {
                    for (plane, &is) in inv_std.iter().enumerate() {
                        let r = plane * hw..(plane + 1) * hw;
                        let (gp, yp) = (&g.data[r.clone()], &yv[r.clone()]);
                        let mg = gp.iter().copied().sum::<T>() * inv_hw;
                        let mgy = gp.iter().zip(yp).map(|(&a, &b)| a * b).sum::<T>() * inv_hw;
                        for ((dv, &gg), &y) in d[r].iter_mut().zip(gp).zip(yp) {
                            *dv += is * (gg - mg - y * mgy);
                        }
                    }
                });
            }
            Op::ChannelAffine { x, scale, shift } => {
                let (_, _, h, w) = self.value(*x).nchw();
                let hw = h * w;
                let (xv, sc) = (&self.value(*x).data, &self.value(*scale).data);
                self.accum_with(grads, *x, |d| {
                    for (plane, &s) in sc.iter().enumerate() {
                        let r = plane * hw..(plane + 1) * hw;
                        d[r.clone()].iter_mut().zip(&g.data[r]).for_each(|(d, &gg)| *d += gg * s);
                    }
                });
                self.accum_with(grads, *scale, |d| {
                    for (plane, dv) in d.iter_mut().enumerate() {
                        let r = plane * hw..(plane + 1) * hw;
                        *dv += g.data[r.clone()].iter().zip(&xv[r]).map(|(&a, &b)| a * b).sum::<T>();
                    }
                });
                self.accum_with(grads, *shift, |d| {
                    for (plane, dv) in d.iter_mut().enumerate() {
                        *dv += g.data[plane * hw..(plane + 1) * hw].iter().copied().sum::<T>();
                    }
                });
            }
            Op::AdaptiveMaxPool { x, argmax } => {
                self.accum_with(grads, *x, |d| {
                    for (&src, &gg) in argmax.iter().zip(&g.data) {
                        d[src] += gg;
                    }
                });
            }
            Op::GlobalAvgPool(x) => {
                let (_, _, h, w) = self.value(*x).nchw();
                let hw = h * w;
                let inv = T::lit(1.0 / hw as f64);
                self.accum_with(grads, *x, |d| {
                    for (plane, &gg) in g.data.iter().enumerate() {
                        d[plane * hw..(plane + 1) * hw].iter_mut().for_each(|v| *v += gg * inv);
                    }
                });
            }
            Op::Concat0(xs) => {
                let mut off = 0;
                for &v in xs {
                    let len = self.value(v).len();
                    let part = Tensor::new(self.shape(v).to_vec(), g.data[off..off + len].to_vec());
                    off += len;
                    self.accum(grads, v, part);
                }
            }
            Op::Slice0 { x, start } => {
                let per: usize = self.shape(*x)[1..].iter().product();
                let off = start * per;
                self.accum_with(grads, *x, |d| {
                    d[off..off + g.len()].iter_mut().zip(&g.data).for_each(|(d, &v)| *d += v)
                });
            }
            Op::SliceCols { x, start } => {
                let d_in = self.shape(*x)[1];
                let len = g.shape[1];
                self.accum_with(grads, *x, |d| {
                    for (r, row) in g.data.chunks(len).enumerate() {
                        d[r * d_in + start..r * d_in + start + len].iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                    }
                });
            }
            Op::Mean(x) => {
                let gg = g.item() / T::lit(self.value(*x).len() as f64);
                self.accum_with(grads, *x, |d| d.iter_mut().for_each(|v| *v += gg));
            }
            Op::L1Mean(a, b) => {
                let gg = g.item() / T::lit(self.value(*a).len() as f64);
                let (va, vb) = (&self.value(*a).data, &self.value(*b).data);
                let sign = |x: T, y: T| {
                    if x > y {
                        gg
                    } else if x < y {
                        -gg
                    } else {
                        T::zero()
                    }
                };
                self.accum_with(grads, *a, |d| d.iter_mut().zip(va.iter().zip(vb)).for_each(|(d, (&x, &y))| *d += sign(x, y)));
                self.accum_with(grads, *b, |d| d.iter_mut().zip(va.iter().zip(vb)).for_each(|(d, (&x, &y))| *d -= sign(x, y)));
            }
            Op::SoftmaxCe { logits, targets, probs, clamped } => {
                let c = self.shape(*logits)[1];
                let gg = g.item() / T::lit(targets.len() as f64);
                self.accum_with(grads, *logits, |d| {
                    for (r, (&t, &cl)) in targets.iter().zip(clamped).enumerate() {
                        if cl {
                            continue;
                        }
                        for m in 0..c {
                            let onehot = if m == t { T::one() } else { T::zero() };
                            d[r * c + m] += gg * (probs[r * c + m] - onehot);
                        }
                    }
                });
            }
            Op::KlDiv { student, teacher, p, q, clamped, row_loss } => {
                let c = self.shape(*student)[1];
                let gg = g.item() / T::lit(row_loss.len() as f64);
                self.accum_with(grads, *student, |d| {
                    for r in 0..row_loss.len() {
                        let live_q: T = (0..c).filter(|&m| !clamped[r * c + m]).map(|m| q[r * c + m]).sum();
                        for k in 0..c {
                            let i = r * c + k;
                            let own = if clamped[i] { T::zero() } else { q[i] };
                            d[i] += gg * (p[i] * live_q - own);
                        }
                    }
                });
                let floor = T::lit(PROB_FLOOR);
                self.accum_with(grads, *teacher, |d| {
                    for (r, &lr) in row_loss.iter().enumerate() {
                        for k in 0..c {
                            let i = r * c + k;
                            if q[i] > T::zero() {
                                d[i] += gg * q[i] * (q[i].ln() - p[i].max(floor).ln() - lr);
                            }
                        }
                    }
                });
            }
            Op::RowNormalize { x, norms } => {
                let dcols = self.shape(*x)[1];
                let yv = &node.value.data;
                self.accum_with(grads, *x, |d| {
                    for (r, &nrm) in norms.iter().enumerate() {
                        let rg = r * dcols..(r + 1) * dcols;
                        let (gr, yr) = (&g.data[rg.clone()], &yv[rg.clone()]);
                        let dotp = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>();
                        for ((dv, &gg), &y) in d[rg].iter_mut().zip(gr).zip(yr) {
                            *dv += (gg - y * dotp) / nrm;
                        }
                    }
                });
            }
            Op::External { x, grad } => {
                let gg = g.item();
                self.accum_with(grads, *x, |d| d.iter_mut().zip(&grad.data).for_each(|(d, &v)| *d += gg * v));
            }
            Op::WeightedSum(terms) => {
                let gg = g.item();
                for &(v, w) in terms {
                    self.accum(grads, v, Tensor::scalar(gg * w));
                }
            }
        }
    }
}

fn sigmoid<T: Scalar>(a: T) -> T {
    if a >= T::zero() {
        (T::one() + (-a).exp()).recip()
    } else {
        let e = a.exp();
        e / (T::one() + e)
    }
}

/// Row-wise max-shifted softmax of a `[N, C]` buffer.
pub fn softmax_rows<T: Scalar>(logits: &[T], c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); logits.len()];
    for (row, dst) in logits.chunks(c).zip(out.chunks_mut(c)) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for (o, &v) in dst.iter_mut().zip(row) {
            *o = (v - m).exp();
            z += *o;
        }
        dst.iter_mut().for_each(|o| *o /= z);
    }
    out
}

fn log_softmax_at<T: Scalar>(row: &[T], t: usize) -> T {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = row.iter().map(|&v| (v - m).exp()).sum::<T>().ln() + m;
    row[t] - lse
}

/// Output columns `ox` whose input column `ox * stride + kx - pad` lies inside the image.
fn valid_cols(g: &ConvGeom, kx: usize) -> (usize, usize) {
    let lo = if kx >= g.pad { 0 } else { (g.pad - kx).div_ceil(g.stride) };
    let hi = if g.w + g.pad <= kx { 0 } else { ((g.w + g.pad - kx - 1) / g.stride + 1).min(g.ow) };
    (lo, hi.max(lo))
}

/// Writes the patch matrix of one image into columns `offset..offset + P`
/// of a `[K, row_len]` buffer.
fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T], row_len: usize, offset: usize) {
    for c in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((c * g.kh + ky) * g.kw + kx) * row_len + offset;
                let (lo, hi) = valid_cols(g, kx);
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let dst = &mut cols[row + oy * g.ow..row + (oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &x[(c * g.h + iy as usize) * g.w..(c * g.h + iy as usize + 1) * g.w];
                    dst[..lo].fill(T::zero());
                    dst[hi..].fill(T::zero());
                    let first = lo * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        dst[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                    } else {
                        for (d, &v) in dst[lo..hi].iter_mut().zip(src[first..].iter().step_by(g.stride)) {
                            *d = v;
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T], row_len: usize, offset: usize) {
    for c in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((c * g.kh + ky) * g.kw + kx) * row_len + offset;
                let (lo, hi) = valid_cols(g, kx);
                if lo == hi {
                    continue;
                }
                let first = lo * g.stride + kx - g.pad;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = (c * g.h + iy as usize) * g.w + first;
                    let src = &cols[row + oy * g.ow + lo..row + oy * g.ow + hi];
                    for (&v, d) in src.iter().zip(dx[base..].iter_mut().step_by(g.stride)) {
                        *d += v;
                    }
                }
            }
        }
    }
}
