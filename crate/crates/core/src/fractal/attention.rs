use log::warn;

use crate::autodiff::{Bound, Graph, PadMode, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::fd::{estimate_fd, FdSpec};

pub const DEFAULT_REDUCTION: usize = 8;
pub const FREQUENCY_KERNEL: usize = 7;

/// Per-channel gate from the fractal dimension of each channel plane:
/// `sigmoid(MLP(FD))`, shape `C×1×1`.
#[derive(Clone, Debug)]
pub struct TemporalAttention {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub channels: usize,
    pub hidden: usize,
}

impl TemporalAttention {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        prefix: &str,
        channels: usize,
        reduction: usize,
        seed: u64,
    ) -> Result<Self> {
        if channels == 0 || reduction == 0 {
            return Err(Error::config("temporal attention needs channels and reduction ≥ 1"));
        }
        let hidden = (channels / reduction).max(1);
        Ok(Self {
            w1: store.register_normal(format!("{prefix}.w1"), &[hidden, channels], (2.0 / channels as f64).sqrt(), seed),
            b1: store.register(format!("{prefix}.b1"), Tensor::zeros([hidden])),
            w2: store.register_normal(format!("{prefix}.w2"), &[channels, hidden], (1.0 / hidden as f64).sqrt(), seed),
            b2: store.register(format!("{prefix}.b2"), Tensor::zeros([channels])),
            channels,
            hidden,
        })
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, bound: &Bound, f: Var, spec: &FdSpec) -> Result<Var> {
        let fd = channel_fd(g.value(f), spec)?;
        let fd = g.constant(fd.cast());
        let fd = g.stop_gradient(fd);
        let h = g.linear(fd, bound.var(self.w1), bound.var(self.b1))?;
        let h = g.relu(h);
        let o = g.linear(h, bound.var(self.w2), bound.var(self.b2))?;
        let o = g.sigmoid(o);
        g.reshape(o, &[self.channels, 1, 1])
    }
}

/// Spatial gate from the fractal dimension of the channel profile at each
/// site: `sigmoid(Conv7x7(FDmap))`, shape `1×H×W`.
#[derive(Clone, Debug)]
pub struct FrequencyAttention {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl FrequencyAttention {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, prefix: &str, seed: u64) -> Self {
        let k = FREQUENCY_KERNEL;
        Self {
            weight: store.register_normal(format!("{prefix}.weight"), &[1, 1, k, k], 1.0 / k as f64, seed),
            bias: store.register(format!("{prefix}.bias"), Tensor::zeros([1, 1, 1])),
        }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, bound: &Bound, f: Var, spec: &FdSpec) -> Result<Var> {
        let map = site_fd_map(g.value(f), spec)?;
        let map = g.constant(map.cast());
        let map = g.stop_gradient(map);
        let r = FREQUENCY_KERNEL / 2;
        let padded = g.pad(map, r, r, PadMode::Reflect)?;
        let y = g.conv2d(padded, bound.var(self.weight), 1, 0)?;
        let y = g.add(y, bound.var(self.bias))?;
        Ok(g.sigmoid(y))
    }
}

/// FD of every channel plane of a `[C, H, W]` map.
pub fn channel_fd<S: Scalar>(f: &Tensor<S>, spec: &FdSpec) -> Result<Tensor<f64>> {
    let (c, h, w) = f.chw()?;
    let plane = h * w;
    let fd = (0..c)
        .map(|ci| estimate_fd(&f.data()[ci * plane..(ci + 1) * plane], h, w, spec))
        .collect::<Result<Vec<_>>>()?;
    Tensor::new([c], fd)
}

/// `1×H×W` map of the FD of the length-`C` profile `f[:, h, w]` at each site,
/// treating the profile as a `1×C` map. With fewer than two channels the map is
/// all ones.
pub fn site_fd_map<S: Scalar>(f: &Tensor<S>, spec: &FdSpec) -> Result<Tensor<f64>> {
    let (c, h, w) = f.chw()?;
    if c < 2 {
        warn!("frequency attention on a {c}-channel map: FD profile undefined, using ones");
        return Ok(Tensor::ones([1, h, w]));
    }
    let plane = h * w;
    let mut profile = vec![0.0f64; c];
    let mut out = Vec::with_capacity(plane);
    for p in 0..plane {
        for (ci, v) in profile.iter_mut().enumerate() {
            *v = f.data()[ci * plane + p].as_f64();
        }
        out.push(estimate_fd(&profile, 1, c, spec)?);
    }
    Tensor::new([1, h, w], out)
}

/// Temporal gate, then frequency gate computed from the temporally gated map.
pub fn apply<S: Scalar>(
    g: &mut Graph<S>,
    bound: &Bound,
    f: Var,
    temporal: Option<&TemporalAttention>,
    frequency: Option<&FrequencyAttention>,
    spec: &FdSpec,
) -> Result<Var> {
    let mut f = f;
    if let Some(t) = temporal {
        let m = t.forward(g, bound, f, spec)?;
        f = g.mul(f, m)?;
    }
    if let Some(fr) = frequency {
        let m = fr.forward(g, bound, f, spec)?;
        f = g.mul(f, m)?;
    }
    Ok(f)
}
