use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::kernels::{self, ConvGeom, DeconvGeom};
use super::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which operand of a broadcasting binary op is stretched.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// Small operand is `C×1×1`: one scalar per channel plane.
    Channel,
    /// Small operand is `1×H×W`: one plane shared by all channels.
    Plane,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PadMode {
    /// Mirror without repeating the edge sample.
    Reflect,
    /// Repeat the edge sample.
    Edge,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    StopGradient,
    Conv2d { x: Var, k: Var, geom: ConvGeom },
    Deconv2d { x: Var, k: Var, geom: DeconvGeom },
    Mul { big: Var, small: Var, bc: Broadcast },
    Add { big: Var, small: Var, bc: Broadcast },
    Scale { x: Var, factor: f64 },
    Sigmoid { x: Var },
    Relu { x: Var },
    ConcatChannels { a: Var, b: Var },
    SliceChannels { x: Var, start: usize },
    Linear { x: Var, w: Var, b: Var },
    Sum { x: Var },
    MeanSpatial { x: Var },
    Reshape { x: Var },
    Pad { x: Var, ph: usize, pw: usize, mode: PadMode },
    Depthwise { x: Var, k: Var, stride: usize },
    Subsample { x: Var, stride: usize },
    SoftmaxGroups { x: Var, groups: usize },
    LocalFilter { x: Var, filters: Var, k: usize, groups: usize, stride: usize },
    SoftmaxCrossEntropy { logits: Var, label: usize },
    GaborBank { omega: Var, theta: Var, psi: Var, sigma: Var, k: usize },
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        use Op::*;
        match *self {
            Leaf | StopGradient => vec![],
            Conv2d { x, k, .. } | Deconv2d { x, k, .. } | Depthwise { x, k, .. } => vec![x, k],
            Mul { big, small, .. } | Add { big, small, .. } => vec![big, small],
            ConcatChannels { a, b } => vec![a, b],
            Linear { x, w, b } => vec![x, w, b],
            LocalFilter { x, filters, .. } => vec![x, filters],
            GaborBank { omega, theta, psi, sigma, .. } => vec![omega, theta, psi, sigma],
            Scale { x, .. }
            | Sigmoid { x }
            | Relu { x }
            | SliceChannels { x, .. }
            | Sum { x }
            | MeanSpatial { x }
            | Reshape { x }
            | Pad { x, .. }
            | Subsample { x, .. }
            | SoftmaxGroups { x, .. } => vec![x],
            SoftmaxCrossEntropy { logits, .. } => vec![logits],
        }
    }
}

struct Node<S> {
    value: Tensor<S>,
    grad: Option<Vec<S>>,
    requires_grad: bool,
    /// Some leaf with `requires_grad` is reachable through the parents.
    needs_grad: bool,
    op: Op,
}

/// Define-by-run computation record. Nodes are appended in evaluation order, so
/// every node's parents precede it and backward is a single reverse sweep.
pub struct Graph<S> {
    nodes: Vec<Node<S>>,
    check_finite: bool,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Smallest extent allowed for the sigma of a synthesized Gabor kernel.
pub const GABOR_SIGMA_FLOOR: f64 = 1e-3;

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            check_finite: cfg!(debug_assertions),
        }
    }

    /// Panic on the first NaN or infinity produced by an operation. On by
    /// default in debug builds; callers that report divergence themselves
    /// turn it off.
    pub fn set_finite_check(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op) -> Var {
        if self.check_finite {
            assert!(value.is_finite(), "non-finite value produced by {op:?}");
        }
        let needs_grad = match op {
            Op::Leaf | Op::StopGradient => false,
            ref op => op.parents().iter().any(|p| self.nodes[p.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad: false,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        let v = self.push(value, Op::Leaf);
        let node = &mut self.nodes[v.0];
        node.requires_grad = requires_grad;
        node.needs_grad = requires_grad;
        v
    }

    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf, if backward reached it.
    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn grad_tensor(&self, v: Var) -> Tensor<S> {
        let shape = self.shape(v).to_vec();
        match self.grad(v) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("grad shape"),
            None => Tensor::zeros(shape),
        }
    }

    /// Clears accumulated leaf gradients.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn chw(&self, v: Var) -> Result<(usize, usize, usize)> {
        self.value(v).chw()
    }

    // ---- operations ------------------------------------------------------

    /// Cross-correlation of a `[C_in, H, W]` input with `[C_out, C_in, kh, kw]`
    /// kernels under zero padding.
    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, padding: usize) -> Result<Var> {
        let (c_in, h, w) = self.chw(x)?;
        let ks = self.shape(k).to_vec();
        let [c_out, kc, kh, kw] = ks[..] else {
            return Err(Error::config(format!("conv2d kernel must be rank 4, got {ks:?}")));
        };
        if kc != c_in {
            return Err(Error::config(format!(
                "conv2d: input has {c_in} channels but kernel expects {kc}"
            )));
        }
        if stride == 0 {
            return Err(Error::config("conv2d: stride must be positive"));
        }
        if kh > h + 2 * padding || kw > w + 2 * padding {
            return Err(Error::config(format!(
                "conv2d: kernel {kh}x{kw} exceeds padded input {}x{}",
                h + 2 * padding,
                w + 2 * padding
            )));
        }
        let geom = ConvGeom {
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            pad: padding,
            ho: (h + 2 * padding - kh) / stride + 1,
            wo: (w + 2 * padding - kw) / stride + 1,
        };
        let mut out = vec![S::zero(); c_out * geom.ho * geom.wo];
        kernels::conv2d_forward(&geom, self.value(x).data(), self.value(k).data(), &mut out);
        let t = Tensor::new([c_out, geom.ho, geom.wo], out)?;
        Ok(self.push(t, Op::Conv2d { x, k, geom }))
    }

    /// Transposed convolution producing exactly `stride` times the input extents.
    /// Kernels are `[C_in, C_out, 2*stride, 2*stride]`.
    pub fn deconv2d(&mut self, x: Var, k: Var, stride: usize) -> Result<Var> {
        let (c_in, h, w) = self.chw(x)?;
        let ks = self.shape(k).to_vec();
        let [kc, c_out, kh, kw] = ks[..] else {
            return Err(Error::config(format!("deconv2d kernel must be rank 4, got {ks:?}")));
        };
        if kc != c_in {
            return Err(Error::config(format!(
                "deconv2d: input has {c_in} channels but kernel expects {kc}"
            )));
        }
        if stride == 0 || kh != 2 * stride || kw != 2 * stride {
            return Err(Error::config(format!(
                "deconv2d: kernel must be {0}x{0} for stride {stride}, got {kh}x{kw}",
                2 * stride
            )));
        }
        let geom = DeconvGeom {
            c_in,
            h,
            w,
            c_out,
            k: kh,
            stride,
            crop: stride / 2,
            ho: h * stride,
            wo: w * stride,
        };
        let mut out = vec![S::zero(); c_out * geom.ho * geom.wo];
        kernels::deconv2d_forward(&geom, self.value(x).data(), self.value(k).data(), &mut out);
        let t = Tensor::new([c_out, geom.ho, geom.wo], out)?;
        Ok(self.push(t, Op::Deconv2d { x, k, geom }))
    }

    fn broadcast_pair(&self, a: Var, b: Var, what: &str) -> Result<(Var, Var, Broadcast)> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa == sb {
            return Ok((a, b, Broadcast::Same));
        }
        let classify = |big: &[usize], small: &[usize]| -> Option<Broadcast> {
            match (big, small) {
                ([c, _, _], [cs, 1, 1]) if c == cs => Some(Broadcast::Channel),
                ([_, h, w], [1, hs, ws]) if h == hs && w == ws => Some(Broadcast::Plane),
                _ => None,
            }
        };
        if let Some(bc) = classify(sa, sb) {
            Ok((a, b, bc))
        } else if let Some(bc) = classify(sb, sa) {
            Ok((b, a, bc))
        } else {
            Err(Error::config(format!(
                "{what}: shapes {sa:?} and {sb:?} are not broadcast-compatible \
                 (supported: equal, C×1×1, 1×H×W)"
            )))
        }
    }

    fn broadcast_apply(&self, big: Var, small: Var, bc: Broadcast, f: impl Fn(S, S) -> S) -> Tensor<S> {
        let tb = self.value(big);
        let ts = self.value(small);
        let (bd, sd) = (tb.data(), ts.data());
        let data = match bc {
            Broadcast::Same => bd.iter().zip(sd).map(|(&x, &y)| f(x, y)).collect(),
            Broadcast::Channel => {
                let plane = tb.shape()[1] * tb.shape()[2];
                bd.iter().enumerate().map(|(i, &x)| f(x, sd[i / plane])).collect()
            }
            Broadcast::Plane => {
                let plane = tb.shape()[1] * tb.shape()[2];
                bd.iter().enumerate().map(|(i, &x)| f(x, sd[i % plane])).collect()
            }
        };
        Tensor::new(tb.shape().to_vec(), data).expect("broadcast shape")
    }

    /// Element-wise product with `C×1×1` / `1×H×W` broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (big, small, bc) = self.broadcast_pair(a, b, "mul")?;
        let t = self.broadcast_apply(big, small, bc, |x, y| x * y);
        Ok(self.push(t, Op::Mul { big, small, bc }))
    }

    /// Element-wise sum with `C×1×1` / `1×H×W` broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (big, small, bc) = self.broadcast_pair(a, b, "add")?;
        let t = self.broadcast_apply(big, small, bc, |x, y| x + y);
        Ok(self.push(t, Op::Add { big, small, bc }))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let f = S::lit(factor);
        let t = self.value(x).map(|v| v * f);
        self.push(t, Op::Scale { x, factor })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x).map(sigmoid);
        self.push(t, Op::Sigmoid { x })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| if v > S::zero() { v } else { S::zero() });
        self.push(t, Op::Relu { x })
    }

    /// Same value; contributes nothing to the gradients of `x`'s ancestors.
    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let t = self.value(x).clone();
        self.push(t, Op::StopGradient)
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (c1, h1, w1) = self.chw(a)?;
        let (c2, h2, w2) = self.chw(b)?;
        if (h1, w1) != (h2, w2) {
            return Err(Error::config(format!(
                "concat_channels: spatial extents differ ({h1}x{w1} vs {h2}x{w2})"
            )));
        }
        let mut data = Vec::with_capacity((c1 + c2) * h1 * w1);
        data.extend_from_slice(self.value(a).data());
        data.extend_from_slice(self.value(b).data());
        let t = Tensor::new([c1 + c2, h1, w1], data)?;
        Ok(self.push(t, Op::ConcatChannels { a, b }))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (c, h, w) = self.chw(x)?;
        if start + len > c || len == 0 {
            return Err(Error::config(format!(
                "slice_channels: range {start}..{} outside 0..{c}",
                start + len
            )));
        }
        let plane = h * w;
        let data = self.value(x).data()[start * plane..(start + len) * plane].to_vec();
        let t = Tensor::new([len, h, w], data)?;
        Ok(self.push(t, Op::SliceChannels { x, start }))
    }

    /// `W·x + b` for `x: [N]`, `W: [M, N]`, `b: [M]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        let (n, m) = match (xs, ws, bs) {
            ([n], [m, wn], [bm]) if n == wn && m == bm => (*n, *m),
            _ => {
                return Err(Error::config(format!(
                    "linear: incompatible shapes x {xs:?}, W {ws:?}, b {bs:?}"
                )))
            }
        };
        let (xd, wd, bd) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let data = (0..m)
            .map(|i| {
                let row = &wd[i * n..(i + 1) * n];
                row.iter().zip(xd).map(|(&a, &b)| a * b).sum::<S>() + bd[i]
            })
            .collect();
        let t = Tensor::new([m], data)?;
        Ok(self.push(t, Op::Linear { x, w, b }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: S = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum { x })
    }

    /// Global average over the spatial axes: `[C, H, W] -> [C]`.
    pub fn mean_spatial(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.chw(x)?;
        let plane = h * w;
        let inv = S::one() / S::lit(plane as f64);
        let d = self.value(x).data();
        let data = (0..c)
            .map(|ci| d[ci * plane..(ci + 1) * plane].iter().copied().sum::<S>() * inv)
            .collect();
        let t = Tensor::new([c], data)?;
        Ok(self.push(t, Op::MeanSpatial { x }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.push(t, Op::Reshape { x }))
    }

    pub fn pad(&mut self, x: Var, ph: usize, pw: usize, mode: PadMode) -> Result<Var> {
        let (c, h, w) = self.chw(x)?;
        let (hp, wp) = (h + 2 * ph, w + 2 * pw);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(c * hp * wp);
        for ci in 0..c {
            for y in 0..hp {
                let sy = pad_index(y as isize - ph as isize, h, mode);
                for xx in 0..wp {
                    let sx = pad_index(xx as isize - pw as isize, w, mode);
                    data.push(src[(ci * h + sy) * w + sx]);
                }
            }
        }
        let t = Tensor::new([c, hp, wp], data)?;
        Ok(self.push(t, Op::Pad { x, ph, pw, mode }))
    }

    /// Same `[kh, kw]` kernel applied to every channel independently, no padding.
    pub fn depthwise(&mut self, x: Var, k: Var, stride: usize) -> Result<Var> {
        let (c, h, w) = self.chw(x)?;
        let ks = self.shape(k).to_vec();
        let [kh, kw] = ks[..] else {
            return Err(Error::config(format!("depthwise kernel must be rank 2, got {ks:?}")));
        };
        if stride == 0 || kh > h || kw > w {
            return Err(Error::config(format!(
                "depthwise: kernel {kh}x{kw} / stride {stride} invalid for {h}x{w} input"
            )));
        }
        let (ho, wo) = ((h - kh) / stride + 1, (w - kw) / stride + 1);
        let (xd, kd) = (self.value(x).data(), self.value(k).data());
        let mut out = vec![S::zero(); c * ho * wo];
        for ci in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = S::zero();
                    for ky in 0..kh {
                        let row = (ci * h + oy * stride + ky) * w + ox * stride;
                        for kx in 0..kw {
                            acc += kd[ky * kw + kx] * xd[row + kx];
                        }
                    }
                    out[(ci * ho + oy) * wo + ox] = acc;
                }
            }
        }
        let t = Tensor::new([c, ho, wo], out)?;
        Ok(self.push(t, Op::Depthwise { x, k, stride }))
    }

    /// Keeps every `stride`-th row and column starting at 0: `H' = ceil(H / stride)`.
    pub fn subsample(&mut self, x: Var, stride: usize) -> Result<Var> {
        let (c, h, w) = self.chw(x)?;
        if stride == 0 {
            return Err(Error::config("subsample: stride must be positive"));
        }
        let (ho, wo) = (h.div_ceil(stride), w.div_ceil(stride));
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(c * ho * wo);
        for ci in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    out.push(d[(ci * h + oy * stride) * w + ox * stride]);
                }
            }
        }
        let t = Tensor::new([c, ho, wo], out)?;
        Ok(self.push(t, Op::Subsample { x, stride }))
    }

    /// Softmax across channels inside each of `groups` equal channel blocks,
    /// independently at every spatial site.
    pub fn softmax_groups(&mut self, x: Var, groups: usize) -> Result<Var> {
        let (c, h, w) = self.chw(x)?;
        if groups == 0 || c % groups != 0 {
            return Err(Error::config(format!(
                "softmax_groups: {c} channels not divisible into {groups} groups"
            )));
        }
        let per = c / groups;
        let plane = h * w;
        let d = self.value(x).data();
        let mut out = vec![S::zero(); d.len()];
        for g in 0..groups {
            for p in 0..plane {
                let idx = |j: usize| (g * per + j) * plane + p;
                let m = (0..per).map(|j| d[idx(j)]).fold(S::neg_infinity(), S::max);
                let mut z = S::zero();
                for j in 0..per {
                    let e = (d[idx(j)] - m).exp();
                    out[idx(j)] = e;
                    z += e;
                }
                for j in 0..per {
                    out[idx(j)] /= z;
                }
            }
        }
        let t = Tensor::new([c, h, w], out)?;
        Ok(self.push(t, Op::SoftmaxGroups { x, groups }))
    }

    /// Spatially varying filtering. `x` is the already padded `[C, H+k-1, W+k-1]`
    /// input, `filters` is `[groups*k*k, H, W]`; channel `c` uses the filter field of
    /// group `c * groups / C`. Output sampled every `stride` sites.
    pub fn local_filter(&mut self, x: Var, filters: Var, k: usize, groups: usize, stride: usize) -> Result<Var> {
        let (c, hp, wp) = self.chw(x)?;
        let (fc, h, w) = self.chw(filters)?;
        if fc != groups * k * k || hp != h + k - 1 || wp != w + k - 1 || stride == 0 || c % groups != 0 {
            return Err(Error::config(format!(
                "local_filter: input {c}x{hp}x{wp}, filters {fc}x{h}x{w}, k {k}, groups {groups}, stride {stride} are inconsistent"
            )));
        }
        let (ho, wo) = (h.div_ceil(stride), w.div_ceil(stride));
        let (xd, fd) = (self.value(x).data(), self.value(filters).data());
        let mut out = vec![S::zero(); c * ho * wo];
        for ci in 0..c {
            let g = ci * groups / c;
            for oy in 0..ho {
                for ox in 0..wo {
                    let (y, xx) = (oy * stride, ox * stride);
                    let mut acc = S::zero();
                    for u in 0..k {
                        for v in 0..k {
                            let f = fd[((g * k * k + u * k + v) * h + y) * w + xx];
                            acc += f * xd[(ci * hp + y + u) * wp + xx + v];
                        }
                    }
                    out[(ci * ho + oy) * wo + ox] = acc;
                }
            }
        }
        let t = Tensor::new([c, ho, wo], out)?;
        Ok(self.push(t, Op::LocalFilter { x, filters, k, groups, stride }))
    }

    /// `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let z = self.value(logits);
        if z.rank() != 1 || label >= z.numel() {
            return Err(Error::config(format!(
                "softmax_cross_entropy: label {label} invalid for logits of shape {:?}",
                z.shape()
            )));
        }
        let loss = log_sum_exp(z.data()) - z.data()[label];
        Ok(self.push(Tensor::scalar(loss), Op::SoftmaxCrossEntropy { logits, label }))
    }

    /// Real Gabor kernels `exp(-(x'^2+y'^2)/(2σ^2)) cos(ϖx' + ψ)` for every
    /// `(out, in)` parameter quadruple. Parameters are `[C_out, C_in]`, output is
    /// `[C_out, C_in, k, k]`, offsets measured from the kernel centre.
    pub fn gabor_bank(&mut self, omega: Var, theta: Var, psi: Var, sigma: Var, k: usize) -> Result<Var> {
        let shape = self.shape(omega).to_vec();
        let [c_out, c_in] = shape[..] else {
            return Err(Error::config(format!("gabor_bank: parameters must be [C_out, C_in], got {shape:?}")));
        };
        for v in [theta, psi, sigma] {
            if self.shape(v) != shape.as_slice() {
                return Err(Error::config("gabor_bank: parameter shapes disagree"));
            }
        }
        if k % 2 == 0 {
            return Err(Error::config(format!("gabor_bank: kernel size {k} must be odd")));
        }
        let r = (k / 2) as isize;
        let mut out = Vec::with_capacity(c_out * c_in * k * k);
        for i in 0..c_out * c_in {
            let p = GaborPoint::new(
                self.value(omega).data()[i],
                self.value(theta).data()[i],
                self.value(psi).data()[i],
                self.value(sigma).data()[i],
            );
            for y in -r..=r {
                for x in -r..=r {
                    out.push(p.eval(x, y).value);
                }
            }
        }
        let t = Tensor::new([c_out, c_in, k, k], out)?;
        Ok(self.push(t, Op::GaborBank { omega, theta, psi, sigma, k }))
    }

    // ---- backward --------------------------------------------------------

    /// Reverse sweep from a single-element `loss`. Leaf gradients accumulate
    /// across calls until [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        for n in &mut self.nodes {
            if !matches!(n.op, Op::Leaf) {
                n.grad = None;
            }
        }
        accumulate(&mut self.nodes[loss.0].grad, &[S::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else { continue };
            let contributions = self.local_grads(i, &g);
            for (p, d) in contributions {
                accumulate(&mut self.nodes[p.0].grad, &d);
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Vector-Jacobian products of node `i` for each parent that needs a gradient.
    fn local_grads(&self, i: usize, g: &[S]) -> Vec<(Var, Vec<S>)> {
        let node = &self.nodes[i];
        let mut out = Vec::new();
        match node.op {
            Op::Leaf | Op::StopGradient => {}
            Op::Conv2d { x, k, geom } => {
                let (wx, wk) = (self.wants(x), self.wants(k));
                let mut dx = wx.then(|| vec![S::zero(); self.value(x).numel()]);
                let mut dk = wk.then(|| vec![S::zero(); self.value(k).numel()]);
                kernels::conv2d_backward(
                    &geom,
                    self.value(x).data(),
                    self.value(k).data(),
                    g,
                    dx.as_deref_mut(),
                    dk.as_deref_mut(),
                );
                out.extend(dx.map(|d| (x, d)));
                out.extend(dk.map(|d| (k, d)));
            }
            Op::Deconv2d { x, k, geom } => {
                let (wx, wk) = (self.wants(x), self.wants(k));
                let mut dx = wx.then(|| vec![S::zero(); self.value(x).numel()]);
                let mut dk = wk.then(|| vec![S::zero(); self.value(k).numel()]);
                kernels::deconv2d_backward(
                    &geom,
                    self.value(x).data(),
                    self.value(k).data(),
                    g,
                    dx.as_deref_mut(),
                    dk.as_deref_mut(),
                );
                out.extend(dx.map(|d| (x, d)));
                out.extend(dk.map(|d| (k, d)));
            }
            Op::Mul { big, small, bc } => {
                let (bv, sv) = (self.value(big), self.value(small));
                if self.wants(big) {
                    let d = expand(bc, bv.shape(), sv.data())
                        .into_iter()
                        .zip(g)
                        .map(|(s, &gg)| s * gg)
                        .collect();
                    out.push((big, d));
                }
                if self.wants(small) {
                    let prod: Vec<S> = bv.data().iter().zip(g).map(|(&a, &b)| a * b).collect();
                    out.push((small, reduce(bc, bv.shape(), &prod, sv.numel())));
                }
            }
            Op::Add { big, small, bc } => {
                if self.wants(big) {
                    out.push((big, g.to_vec()));
                }
                if self.wants(small) {
                    let bs = self.shape(big);
                    out.push((small, reduce(bc, bs, g, self.value(small).numel())));
                }
            }
            Op::Scale { x, factor } => {
                let f = S::lit(factor);
                out.push((x, g.iter().map(|&v| v * f).collect()));
            }
            Op::Sigmoid { x } => {
                let y = node.value.data();
                out.push((x, y.iter().zip(g).map(|(&s, &gg)| gg * s * (S::one() - s)).collect()));
            }
            Op::Relu { x } => {
                let xv = self.value(x).data();
                out.push((x, xv.iter().zip(g).map(|(&v, &gg)| if v > S::zero() { gg } else { S::zero() }).collect()));
            }
            Op::ConcatChannels { a, b } => {
                let na = self.value(a).numel();
                if self.wants(a) {
                    out.push((a, g[..na].to_vec()));
                }
                if self.wants(b) {
                    out.push((b, g[na..].to_vec()));
                }
            }
            Op::SliceChannels { x, start } => {
                let xv = self.value(x);
                let plane = xv.shape()[1] * xv.shape()[2];
                let mut d = vec![S::zero(); xv.numel()];
                d[start * plane..start * plane + g.len()].copy_from_slice(g);
                out.push((x, d));
            }
            Op::Linear { x, w, b } => {
                let (xd, wd) = (self.value(x).data(), self.value(w).data());
                let n = xd.len();
                if self.wants(x) {
                    let mut dx = vec![S::zero(); n];
                    for (i, &gi) in g.iter().enumerate() {
                        for (j, d) in dx.iter_mut().enumerate() {
                            *d += wd[i * n + j] * gi;
                        }
                    }
                    out.push((x, dx));
                }
                if self.wants(w) {
                    let dw = g.iter().flat_map(|&gi| xd.iter().map(move |&xj| gi * xj)).collect();
                    out.push((w, dw));
                }
                if self.wants(b) {
                    out.push((b, g.to_vec()));
                }
            }
            Op::Sum { x } => out.push((x, vec![g[0]; self.value(x).numel()])),
            Op::MeanSpatial { x } => {
                let xv = self.value(x);
                let plane = xv.shape()[1] * xv.shape()[2];
                let inv = S::one() / S::lit(plane as f64);
                out.push((x, (0..xv.numel()).map(|i| g[i / plane] * inv).collect()));
            }
            Op::Reshape { x } => out.push((x, g.to_vec())),
            Op::Pad { x, ph, pw, mode } => {
                let (c, h, w) = self.value(x).chw().expect("pad input rank");
                let (hp, wp) = (h + 2 * ph, w + 2 * pw);
                let mut d = vec![S::zero(); c * h * w];
                for ci in 0..c {
                    for y in 0..hp {
                        let sy = pad_index(y as isize - ph as isize, h, mode);
                        for xx in 0..wp {
                            let sx = pad_index(xx as isize - pw as isize, w, mode);
                            d[(ci * h + sy) * w + sx] += g[(ci * hp + y) * wp + xx];
                        }
                    }
                }
                out.push((x, d));
            }
            Op::Depthwise { x, k, stride } => {
                let (c, h, w) = self.value(x).chw().expect("depthwise input rank");
                let (kh, kw) = (self.shape(k)[0], self.shape(k)[1]);
                let (ho, wo) = (node.value.shape()[1], node.value.shape()[2]);
                let (xd, kd) = (self.value(x).data(), self.value(k).data());
                let mut dx = vec![S::zero(); xd.len()];
                let mut dk = vec![S::zero(); kd.len()];
                for ci in 0..c {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let gg = g[(ci * ho + oy) * wo + ox];
                            for ky in 0..kh {
                                let row = (ci * h + oy * stride + ky) * w + ox * stride;
                                for kx in 0..kw {
                                    dx[row + kx] += kd[ky * kw + kx] * gg;
                                    dk[ky * kw + kx] += xd[row + kx] * gg;
                                }
                            }
                        }
                    }
                }
                if self.wants(x) {
                    out.push((x, dx));
                }
                if self.wants(k) {
                    out.push((k, dk));
                }
            }
            Op::Subsample { x, stride } => {
                let (c, h, w) = self.value(x).chw().expect("subsample input rank");
                let (ho, wo) = (h.div_ceil(stride), w.div_ceil(stride));
                let mut d = vec![S::zero(); c * h * w];
                for ci in 0..c {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            d[(ci * h + oy * stride) * w + ox * stride] = g[(ci * ho + oy) * wo + ox];
                        }
                    }
                }
                out.push((x, d));
            }
            Op::SoftmaxGroups { x, groups } => {
                let (c, h, w) = node.value.chw().expect("softmax rank");
                let per = c / groups;
                let plane = h * w;
                let y = node.value.data();
                let mut d = vec![S::zero(); y.len()];
                for gi in 0..groups {
                    for p in 0..plane {
                        let idx = |j: usize| (gi * per + j) * plane + p;
                        let dot: S = (0..per).map(|j| y[idx(j)] * g[idx(j)]).sum();
                        for j in 0..per {
                            d[idx(j)] = y[idx(j)] * (g[idx(j)] - dot);
                        }
                    }
                }
                out.push((x, d));
            }
            Op::LocalFilter { x, filters, k, groups, stride } => {
                let (c, hp, wp) = self.value(x).chw().expect("local filter rank");
                let (_, h, w) = self.value(filters).chw().expect("filter rank");
                let (ho, wo) = (h.div_ceil(stride), w.div_ceil(stride));
                let (xd, fd) = (self.value(x).data(), self.value(filters).data());
                let mut dx = vec![S::zero(); xd.len()];
                let mut df = vec![S::zero(); fd.len()];
                for ci in 0..c {
                    let grp = ci * groups / c;
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let gg = g[(ci * ho + oy) * wo + ox];
                            let (y, xx) = (oy * stride, ox * stride);
                            for u in 0..k {
                                for v in 0..k {
                                    let fi = ((grp * k * k + u * k + v) * h + y) * w + xx;
                                    let xi = (ci * hp + y + u) * wp + xx + v;
                                    dx[xi] += fd[fi] * gg;
                                    df[fi] += xd[xi] * gg;
                                }
                            }
                        }
                    }
                }
                if self.wants(x) {
                    out.push((x, dx));
                }
                if self.wants(filters) {
                    out.push((filters, df));
                }
            }
            Op::SoftmaxCrossEntropy { logits, label } => {
                let z = self.value(logits).data();
                let lse = log_sum_exp(z);
                let d = z
                    .iter()
                    .enumerate()
                    .map(|(j, &zj)| {
                        let p = (zj - lse).exp();
                        let t = if j == label { S::one() } else { S::zero() };
                        (p - t) * g[0]
                    })
                    .collect();
                out.push((logits, d));
            }
            Op::GaborBank { omega, theta, psi, sigma, k } => {
                let n = self.value(omega).numel();
                let r = (k / 2) as isize;
                let mut d = [vec![S::zero(); n], vec![S::zero(); n], vec![S::zero(); n], vec![S::zero(); n]];
                for i in 0..n {
                    let p = GaborPoint::new(
                        self.value(omega).data()[i],
                        self.value(theta).data()[i],
                        self.value(psi).data()[i],
                        self.value(sigma).data()[i],
                    );
                    let mut j = i * k * k;
                    for y in -r..=r {
                        for x in -r..=r {
                            let e = p.eval(x, y);
                            let gg = g[j];
                            d[0][i] += e.d_omega * gg;
                            d[1][i] += e.d_theta * gg;
                            d[2][i] += e.d_psi * gg;
                            d[3][i] += e.d_sigma * gg;
                            j += 1;
                        }
                    }
                }
                let [d_omega, d_theta, d_psi, d_sigma] = d;
                for (v, dv) in [(omega, d_omega), (theta, d_theta), (psi, d_psi), (sigma, d_sigma)] {
                    if self.wants(v) {
                        out.push((v, dv));
                    }
                }
            }
        }
        out
    }
}

fn accumulate<S: Scalar>(slot: &mut Option<Vec<S>>, d: &[S]) {
    match slot {
        Some(acc) => {
            for (a, &v) in acc.iter_mut().zip(d) {
                *a += v;
            }
        }
        None => *slot = Some(d.to_vec()),
    }
}

fn expand<S: Scalar>(bc: Broadcast, big_shape: &[usize], small: &[S]) -> Vec<S> {
    let n: usize = big_shape.iter().product();
    match bc {
        Broadcast::Same => small.to_vec(),
        Broadcast::Channel => {
            let plane = big_shape[1] * big_shape[2];
            (0..n).map(|i| small[i / plane]).collect()
        }
        Broadcast::Plane => {
            let plane = big_shape[1] * big_shape[2];
            (0..n).map(|i| small[i % plane]).collect()
        }
    }
}

fn reduce<S: Scalar>(bc: Broadcast, big_shape: &[usize], g: &[S], small_len: usize) -> Vec<S> {
    match bc {
        Broadcast::Same => g.to_vec(),
        Broadcast::Channel | Broadcast::Plane => {
            let plane = big_shape[1] * big_shape[2];
            let mut d = vec![S::zero(); small_len];
            for (i, &v) in g.iter().enumerate() {
                let j = if bc == Broadcast::Channel { i / plane } else { i % plane };
                d[j] += v;
            }
            d
        }
    }
}

fn pad_index(i: isize, n: usize, mode: PadMode) -> usize {
    match mode {
        PadMode::Reflect => kernels::reflect_index(i, n),
        PadMode::Edge => kernels::edge_index(i, n),
    }
}

pub(crate) fn sigmoid<S: Scalar>(v: S) -> S {
    if v >= S::zero() {
        S::one() / (S::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (S::one() + e)
    }
}

pub(crate) fn log_sum_exp<S: Scalar>(z: &[S]) -> S {
    let m = z.iter().copied().fold(S::neg_infinity(), S::max);
    m + z.iter().map(|&v| (v - m).exp()).sum::<S>().ln()
}

/// One Gabor parameter quadruple, ready to evaluate kernel taps and partials.
struct GaborPoint<S> {
    omega: S,
    psi: S,
    sigma: S,
    sigma_active: bool,
    cos_t: S,
    sin_t: S,
}

struct GaborTap<S> {
    value: S,
    d_omega: S,
    d_theta: S,
    d_psi: S,
    d_sigma: S,
}

impl<S: Scalar> GaborPoint<S> {
    fn new(omega: S, theta: S, psi: S, sigma: S) -> Self {
        let floor = S::lit(GABOR_SIGMA_FLOOR);
        Self {
            omega,
            psi,
            sigma: sigma.max(floor),
            sigma_active: sigma >= floor,
            cos_t: theta.cos(),
            sin_t: theta.sin(),
        }
    }

    fn eval(&self, x: isize, y: isize) -> GaborTap<S> {
        let (x, y) = (S::lit(x as f64), S::lit(y as f64));
        let xr = x * self.cos_t + y * self.sin_t;
        let yr = -x * self.sin_t + y * self.cos_t;
        let r2 = xr * xr + yr * yr;
        let s2 = self.sigma * self.sigma;
        let env = (-r2 / (S::lit(2.0) * s2)).exp();
        let phase = self.omega * xr + self.psi;
        let (sin_p, cos_p) = phase.sin_cos();
        let value = env * cos_p;
        let d_phase = -env * sin_p;
        GaborTap {
            value,
            d_omega: d_phase * xr,
            // d x'/dθ = y'; the envelope depends on x'^2 + y'^2 = x^2 + y^2 only.
            d_theta: d_phase * self.omega * yr,
            d_psi: d_phase,
            d_sigma: if self.sigma_active {
                value * r2 / (s2 * self.sigma)
            } else {
                S::zero()
            },
        }
    }
}
