use crate::antialias::blur_vector;
use crate::autodiff::{Bound, Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::gabor::GaborLayer;
use crate::scalar::Scalar;

use super::block::GrasensBlock;
use super::config::ModelConfig;

/// The full classifier: learned upsampling, `λ` residual blocks, global
/// average pooling, a linear classifier and a smoothed logit vector.
#[derive(Clone, Debug)]
pub struct Model<S> {
    pub config: ModelConfig,
    pub store: ParamStore<S>,
    upsample: ParamId,
    blocks: Vec<GrasensBlock>,
    fc_w: ParamId,
    fc_b: ParamId,
}

/// Loss, logits and parameter gradients for one example.
#[derive(Clone, Debug)]
pub struct Evaluation<S> {
    pub loss: S,
    pub logits: Tensor<S>,
    pub grads: Vec<Tensor<S>>,
}

impl<S: Scalar> Model<S> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.block_extents()?;
        let mut store = ParamStore::new();
        let c_in = config.input.channels;
        let s = config.upsample_stride;
        let width = config.block.width;
        let fan = (c_in * 4) as f64;
        let upsample = store.register_normal("upsample.weight", &[c_in, width, 2 * s, 2 * s], (2.0 / fan).sqrt(), config.seed);
        let mut blocks = Vec::with_capacity(config.lambda);
        for mu in 0..config.lambda {
            let block_seed = config.seed.wrapping_add(1000 * (mu as u64 + 1));
            blocks.push(GrasensBlock::new(&mut store, &format!("block{}", mu + 1), width, &config.block, block_seed)?);
        }
        let fc_w = store.register_normal("fc.weight", &[config.classes, width], (1.0 / width as f64).sqrt(), config.seed ^ 0xfc);
        let fc_b = store.register("fc.bias", Tensor::zeros([config.classes]));
        Ok(Self {
            config,
            store,
            upsample,
            blocks,
            fc_w,
            fc_b,
        })
    }

    pub fn blocks(&self) -> &[GrasensBlock] {
        &self.blocks
    }

    /// Gabor layers with their 1-based block numbers.
    pub fn gabor_layers(&self) -> Vec<(usize, &GaborLayer)> {
        self.blocks
            .iter()
            .enumerate()
            .filter_map(|(i, b)| b.gabor().map(|l| (i + 1, l)))
            .collect()
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let i = self.config.input;
        if shape != [i.channels, i.height, i.width] {
            return Err(Error::config(format!(
                "input shape {shape:?} does not match the model's {:?}",
                [i.channels, i.height, i.width]
            )));
        }
        Ok(())
    }

    /// Learned upsampling `[C, H, W]` → `[width, sH, sW]`.
    pub fn generation_stage(&self, g: &mut Graph<S>, bound: &Bound, x: Var) -> Result<Var> {
        g.deconv2d(x, bound.var(self.upsample), self.config.upsample_stride)
    }

    /// Logits for one `[C, H, W]` input.
    pub fn forward(&self, g: &mut Graph<S>, bound: &Bound, x: Var) -> Result<Var> {
        self.check_input(g.shape(x))?;
        let mut f = self.generation_stage(g, bound, x)?;
        for b in &self.blocks {
            f = b.forward(g, bound, f)?;
        }
        let pooled = g.mean_spatial(f)?;
        let logits = g.linear(pooled, bound.var(self.fc_w), bound.var(self.fc_b))?;
        if self.config.task_blur {
            blur_vector(g, logits)
        } else {
            Ok(logits)
        }
    }

    pub fn logits(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut g = Graph::new();
        g.set_finite_check(false);
        let bound = self.store.bind(&mut g);
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, &bound, xv)?;
        Ok(g.value(out).clone())
    }

    pub fn predict(&self, x: &Tensor<S>) -> Result<usize> {
        Ok(argmax(self.logits(x)?.data()))
    }

    /// Cross-entropy of one example scaled by `weight`, with gradients of the
    /// scaled loss. The reported loss is unscaled.
    pub fn evaluate(&self, x: &Tensor<S>, label: usize, weight: f64, finite_check: bool) -> Result<Evaluation<S>> {
        if label >= self.config.classes {
            return Err(Error::config(format!("label {label} out of range for {} classes", self.config.classes)));
        }
        let mut g = Graph::new();
        g.set_finite_check(finite_check);
        let bound = self.store.bind(&mut g);
        let xv = g.constant(x.clone());
        let logits = self.forward(&mut g, &bound, xv)?;
        let loss = g.softmax_cross_entropy(logits, label)?;
        let scaled = g.scale(loss, weight);
        g.backward(scaled)?;
        Ok(Evaluation {
            loss: g.value(loss).item(),
            logits: g.value(logits).clone(),
            grads: self.store.grads(&g, &bound),
        })
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax<S: Scalar>(v: &[S]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Mean softmax cross-entropy of a batch of `(logits, label)` pairs.
pub fn mean_cross_entropy<S: Scalar>(g: &mut Graph<S>, batch: &[(Var, usize)]) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::Empty("cross-entropy over an empty batch".into()));
    }
    let mut total: Option<Var> = None;
    for &(logits, label) in batch {
        let l = g.softmax_cross_entropy(logits, label)?;
        total = Some(match total {
            None => l,
            Some(t) => g.add(t, l)?,
        });
    }
    Ok(g.scale(total.expect("non-empty"), 1.0 / batch.len() as f64))
}
