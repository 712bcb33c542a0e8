use crate::antialias::{naive_subsample, BlurLayer};
use crate::autodiff::{Bound, Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::fractal::{self, FdSpec, FrequencyAttention, TemporalAttention};
use crate::gabor::{GaborLayer, N_FILTERS};
use crate::scalar::Scalar;

use super::config::BlockConfig;

/// First convolution of a block: a Gabor bank, or an ordinary learned
/// convolution with the same output width when Gabor filtering is ablated.
#[derive(Clone, Debug)]
pub enum FrontConv {
    Gabor(GaborLayer),
    Plain { weight: ParamId, kernel_size: usize },
}

/// One residual block:
///
/// ```text
/// x ─ front(40) ─ down2 ─ conv3x3 ─ relu ─ attention ─┐
/// └──────────────── down2 ───────────────────────────concat ─ blur ─ conv1x1 ─ relu
/// ```
#[derive(Clone, Debug)]
pub struct GrasensBlock {
    pub front: FrontConv,
    /// Fixed factor applied to the front output.
    front_scale: f64,
    down: Option<BlurLayer>,
    conv_w: ParamId,
    conv_b: ParamId,
    temporal: Option<TemporalAttention>,
    frequency: Option<FrequencyAttention>,
    skip_down: Option<BlurLayer>,
    merge_blur: Option<BlurLayer>,
    merge_w: ParamId,
    merge_b: ParamId,
    fd: FdSpec,
    width: usize,
}

fn he<S: Scalar>(store: &mut ParamStore<S>, name: String, shape: &[usize], gain: f64, seed: u64) -> ParamId {
    let fan_in: usize = shape[1..].iter().product();
    store.register_normal(name, shape, (2.0 / (fan_in as f64 * gain)).sqrt(), seed)
}

impl GrasensBlock {
    /// Registers the block's parameters under `prefix`. `c_in` is the channel
    /// count of the incoming map; the block always emits `cfg.width` channels.
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, prefix: &str, c_in: usize, cfg: &BlockConfig, seed: u64) -> Result<Self> {
        let width = cfg.width;
        let t = cfg.toggles;
        let k = cfg.gabor_kernel;
        let (front, front_scale) = if t.use_gabor {
            let layer = GaborLayer::init_grid(store, &format!("{prefix}.gabor"), c_in, k, seed)?;
            if cfg.gabor_frozen {
                layer.freeze(store);
            }
            // A grid-initialized bank is far from variance preserving (its mean
            // energy per filter grows with σ and c_in). Dividing the output by a
            // constant, rather than shrinking the next layer's init, keeps that
            // layer's relative step size independent of the bank.
            let bank = layer.kernel_values(store)?;
            let energy = bank.data().iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>() / N_FILTERS as f64;
            (FrontConv::Gabor(layer), 1.0 / energy.max(1e-6).sqrt())
        } else {
            let weight = he(store, format!("{prefix}.front.weight"), &[N_FILTERS, c_in, k, k], 1.0, seed);
            (FrontConv::Plain { weight, kernel_size: k }, 1.0)
        };
        let blur = |store: &mut ParamStore<S>, name: &str, ch: usize, stride: usize| -> Result<Option<BlurLayer>> {
            if t.use_antialias {
                Ok(Some(BlurLayer::new(store, &format!("{prefix}.{name}"), ch, cfg.blur.with_stride(stride))?))
            } else {
                Ok(None)
            }
        };
        let down = blur(store, "down", N_FILTERS, 2)?;
        let conv_w = he(store, format!("{prefix}.conv.weight"), &[width, N_FILTERS, 3, 3], 2.0, seed.wrapping_add(1));
        let conv_b = store.register(format!("{prefix}.conv.bias"), Tensor::zeros([width, 1, 1]));
        let temporal = if t.use_temporal_att {
            Some(TemporalAttention::new(store, &format!("{prefix}.temporal"), width, cfg.reduction, seed.wrapping_add(2))?)
        } else {
            None
        };
        let frequency = t
            .use_frequency_att
            .then(|| FrequencyAttention::new(store, &format!("{prefix}.frequency"), seed.wrapping_add(3)));
        let skip_down = blur(store, "skip", c_in, 2)?;
        let merge_blur = blur(store, "merge_blur", width + c_in, 1)?;
        let merge_w = he(store, format!("{prefix}.merge.weight"), &[width, width + c_in, 1, 1], 1.0, seed.wrapping_add(4));
        let merge_b = store.register(format!("{prefix}.merge.bias"), Tensor::zeros([width, 1, 1]));
        Ok(Self {
            front,
            front_scale,
            down,
            conv_w,
            conv_b,
            temporal,
            frequency,
            skip_down,
            merge_blur,
            merge_w,
            merge_b,
            fd: cfg.fd.clone(),
            width,
        })
    }

    pub fn gabor(&self) -> Option<&GaborLayer> {
        match &self.front {
            FrontConv::Gabor(l) => Some(l),
            FrontConv::Plain { .. } => None,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `[C_in, H, W]` → `[width, ⌈H/2⌉, ⌈W/2⌉]`.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, bound: &Bound, x: Var) -> Result<Var> {
        let (_, h, w) = g.value(x).chw()?;
        if h < 2 || w < 2 {
            return Err(Error::config(format!("block input {h}x{w} is too small to downsample")));
        }
        let a = match &self.front {
            FrontConv::Gabor(layer) => {
                let a = layer.forward(g, bound, x)?;
                g.scale(a, self.front_scale)
            }
            FrontConv::Plain { weight, kernel_size } => g.conv2d(x, bound.var(*weight), 1, kernel_size / 2)?,
        };
        let a = down2(g, bound, self.down.as_ref(), a)?;
        let a = g.conv2d(a, bound.var(self.conv_w), 1, 1)?;
        let a = g.add(a, bound.var(self.conv_b))?;
        let a = g.relu(a);
        let a = fractal::apply(g, bound, a, self.temporal.as_ref(), self.frequency.as_ref(), &self.fd)?;

        let skip = down2(g, bound, self.skip_down.as_ref(), x)?;
        let cat = g.concat_channels(a, skip)?;
        let cat = match &self.merge_blur {
            Some(b) => b.forward(g, bound, cat)?,
            None => cat,
        };
        let out = g.conv2d(cat, bound.var(self.merge_w), 1, 0)?;
        let out = g.add(out, bound.var(self.merge_b))?;
        Ok(g.relu(out))
    }
}

fn down2<S: Scalar>(g: &mut Graph<S>, bound: &Bound, layer: Option<&BlurLayer>, x: Var) -> Result<Var> {
    match layer {
        Some(b) => b.forward(g, bound, x),
        None => naive_subsample(g, x, 2),
    }
}
