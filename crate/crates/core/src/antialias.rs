//! Low-pass filtering before subsampling.
//!
//! Two filter sources are supported: a fixed normalized binomial kernel applied
//! depthwise, and per-location filters predicted from the input by a 1×1
//! convolution followed by a softmax over the `k²` taps. Both use reflect
//! padding, so the output of stride `s` has `ceil(H/s) × ceil(W/s)` sites.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, Graph, PadMode, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum BlurMode {
    FixedBinomial,
    /// Softmax-normalized filters predicted per location, shared by the
    /// channels of each group.
    Predicted { groups: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlurSpec {
    pub kernel_size: usize,
    pub stride: usize,
    pub mode: BlurMode,
}

impl Default for BlurSpec {
    fn default() -> Self {
        Self {
            kernel_size: 3,
            stride: 1,
            mode: BlurMode::FixedBinomial,
        }
    }
}

impl BlurSpec {
    pub fn with_stride(self, stride: usize) -> Self {
        Self { stride, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return Err(Error::config(format!("blur kernel size {} must be odd", self.kernel_size)));
        }
        if self.stride == 0 {
            return Err(Error::config("blur stride must be positive"));
        }
        if let BlurMode::Predicted { groups: 0 } = self.mode {
            return Err(Error::config("predicted blur needs at least one group"));
        }
        Ok(())
    }
}

/// Row `k-1` of Pascal's triangle.
fn binomial_row(k: usize) -> Vec<f64> {
    let mut row = vec![1.0];
    for _ in 1..k {
        let mut next = vec![1.0; row.len() + 1];
        for i in 1..row.len() {
            next[i] = row[i - 1] + row[i];
        }
        row = next;
    }
    row
}

/// Outer product of the binomial row with itself, normalized to sum 1.
/// For `k = 3` this is `[[1,2,1],[2,4,2],[1,2,1]] / 16`.
pub fn binomial_kernel<S: Scalar>(k: usize) -> Tensor<S> {
    let row = binomial_row(k);
    let total: f64 = row.iter().sum::<f64>().powi(2);
    Tensor::from_fn([k, k], |i| S::lit(row[i / k] * row[i % k] / total))
}

/// Fixed-binomial blur followed by subsampling.
pub fn blur<S: Scalar>(g: &mut Graph<S>, x: Var, spec: &BlurSpec) -> Result<Var> {
    spec.validate()?;
    let r = spec.kernel_size / 2;
    let padded = g.pad(x, r, r, PadMode::Reflect)?;
    let k = g.constant(binomial_kernel(spec.kernel_size));
    g.depthwise(padded, k, spec.stride)
}

/// Plain strided subsampling, the aliasing baseline.
pub fn naive_subsample<S: Scalar>(g: &mut Graph<S>, x: Var, stride: usize) -> Result<Var> {
    g.subsample(x, stride)
}

/// `[1, 2, 1] / 4` smoothing of a vector with edge replication.
///
/// Edge replication keeps the map invertible for every length; reflection would
/// send a length-2 vector to its mean in both entries.
pub fn blur_vector<S: Scalar>(g: &mut Graph<S>, v: Var) -> Result<Var> {
    let n = match g.shape(v) {
        [n] => *n,
        s => return Err(Error::config(format!("blur_vector expects a vector, got {s:?}"))),
    };
    let as_map = g.reshape(v, &[1, 1, n])?;
    let padded = g.pad(as_map, 0, 1, PadMode::Edge)?;
    let row = binomial_row(3);
    let k = g.constant(Tensor::from_fn([1, 3], |i| S::lit(row[i] / 4.0)));
    let out = g.depthwise(padded, k, 1)?;
    g.reshape(out, &[n])
}

/// A blur stage with its optional filter predictor.
#[derive(Clone, Debug)]
pub struct BlurLayer {
    pub spec: BlurSpec,
    predictor: Option<Predictor>,
}

#[derive(Clone, Debug)]
struct Predictor {
    weight: ParamId,
    bias: ParamId,
    groups: usize,
}

impl BlurLayer {
    /// Predictor weights start at zero, i.e. as a uniform box filter.
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, prefix: &str, channels: usize, spec: BlurSpec) -> Result<Self> {
        spec.validate()?;
        let predictor = match spec.mode {
            BlurMode::FixedBinomial => None,
            BlurMode::Predicted { groups } => {
                if channels % groups != 0 {
                    return Err(Error::config(format!(
                        "predicted blur: {channels} channels not divisible into {groups} groups"
                    )));
                }
                let taps = groups * spec.kernel_size * spec.kernel_size;
                Some(Predictor {
                    weight: store.register(format!("{prefix}.predictor.weight"), Tensor::zeros([taps, channels, 1, 1])),
                    bias: store.register(format!("{prefix}.predictor.bias"), Tensor::zeros([taps, 1, 1])),
                    groups,
                })
            }
        };
        Ok(Self { spec, predictor })
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, bound: &Bound, x: Var) -> Result<Var> {
        match &self.predictor {
            None => blur(g, x, &self.spec),
            Some(p) => {
                let filters = self.predict_filters(g, bound, x)?;
                let r = self.spec.kernel_size / 2;
                let padded = g.pad(x, r, r, PadMode::Reflect)?;
                g.local_filter(padded, filters, self.spec.kernel_size, p.groups, self.spec.stride)
            }
        }
    }

    /// Per-location filter field `Ψ`, shape `[groups·k², H, W]`; the `k²` taps of
    /// each group are non-negative and sum to one at every site.
    pub fn predict_filters<S: Scalar>(&self, g: &mut Graph<S>, bound: &Bound, x: Var) -> Result<Var> {
        let p = self
            .predictor
            .as_ref()
            .ok_or_else(|| Error::Usage("predict_filters on a fixed-binomial blur".into()))?;
        let logits = g.conv2d(x, bound.var(p.weight), 1, 0)?;
        let logits = g.add(logits, bound.var(p.bias))?;
        g.softmax_groups(logits, p.groups)
    }
}

/// Cosine similarity of two equally sized value sets.
pub fn cosine_similarity<S: Scalar>(a: &[S], b: &[S]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x.as_f64() * y.as_f64()).sum();
    let na: f64 = a.iter().map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

/// Circular shift along the width axis.
pub fn roll_width<S: Scalar>(x: &Tensor<S>, shift: usize) -> Result<Tensor<S>> {
    let (c, h, w) = x.chw()?;
    let src = x.data();
    Ok(Tensor::from_fn([c, h, w], |i| {
        let col = i % w;
        let row_start = i - col;
        src[row_start + (col + w - shift % w) % w]
    }))
}

/// Shift consistency of a stride-2 downsampler: cosine similarity between the
/// downsampled input and the downsampled input shifted by one pixel along the
/// width. A one-pixel input shift is half an output pixel, which the output
/// grid cannot represent, so both are compared on the same grid. `spec = None`
/// measures naive subsampling.
pub fn shift_consistency<S: Scalar>(x: &Tensor<S>, spec: Option<&BlurSpec>) -> Result<f64> {
    let down = |t: &Tensor<S>| -> Result<Tensor<S>> {
        let mut g = Graph::new();
        let v = g.constant(t.clone());
        let y = match spec {
            Some(s) => blur(&mut g, v, &s.with_stride(2))?,
            None => naive_subsample(&mut g, v, 2)?,
        };
        Ok(g.value(y).clone())
    };
    let a = down(x)?;
    let b = down(&roll_width(x, 1)?)?;
    Ok(cosine_similarity(a.data(), b.data()))
}
