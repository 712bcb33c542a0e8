use serde::{Deserialize, Serialize};

use crate::antialias::BlurSpec;
use crate::csi::{segment, standardize_channels, CsiGeometry, CsiTensor, CsiTrace, Representation, SegmentSpec};
use crate::error::{Error, Result};
use crate::fractal::{FdSpec, DEFAULT_REDUCTION};
use crate::scalar::Scalar;

/// Which parts of a block are active. Disabling one never changes tensor shapes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockToggles {
    pub use_gabor: bool,
    pub use_antialias: bool,
    pub use_temporal_att: bool,
    pub use_frequency_att: bool,
}

impl Default for BlockToggles {
    fn default() -> Self {
        Self {
            use_gabor: true,
            use_antialias: true,
            use_temporal_att: true,
            use_frequency_att: true,
        }
    }
}

/// Ablation tokens accepted on the command line.
pub const ABLATION_TOKENS: [&str; 4] = ["gabor", "antialias", "temporal-att", "frequency-att"];

impl BlockToggles {
    pub fn all_off() -> Self {
        Self {
            use_gabor: false,
            use_antialias: false,
            use_temporal_att: false,
            use_frequency_att: false,
        }
    }

    /// Turns off the component named by `token` (one of [`ABLATION_TOKENS`]).
    pub fn ablate(&mut self, token: &str) -> Result<()> {
        match token.trim() {
            "gabor" => self.use_gabor = false,
            "antialias" => self.use_antialias = false,
            "temporal-att" => self.use_temporal_att = false,
            "frequency-att" => self.use_frequency_att = false,
            other => {
                return Err(Error::Usage(format!(
                    "unknown ablation {other:?}; valid tokens: {}",
                    ABLATION_TOKENS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn from_ablations(list: &str) -> Result<Self> {
        let mut t = Self::default();
        for tok in list.split(',').filter(|s| !s.trim().is_empty()) {
            t.ablate(tok)?;
        }
        Ok(t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub width: usize,
    pub gabor_kernel: usize,
    /// Keep Gabor parameters at their initial grid values.
    #[serde(default)]
    pub gabor_frozen: bool,
    /// Kernel and mode of every blur in the block; strides are assigned per use.
    pub blur: BlurSpec,
    pub fd: FdSpec,
    pub reduction: usize,
    pub toggles: BlockToggles,
}

impl Default for BlockConfig {
    fn default() -> Self {
        Self {
            width: 32,
            gabor_kernel: 5,
            gabor_frozen: false,
            blur: BlurSpec::default(),
            fd: FdSpec::default(),
            reduction: DEFAULT_REDUCTION,
            toggles: BlockToggles::default(),
        }
    }
}

/// Network input extents `(C, H, W)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// How traces were turned into input tensors; lets a checkpoint validate new data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataConfig {
    pub geometry: CsiGeometry,
    pub segment: SegmentSpec,
    #[serde(default)]
    pub representation: Representation,
    /// Rescale every window channel to zero mean and unit variance.
    #[serde(default = "yes")]
    pub standardize: bool,
}

impl DataConfig {
    pub fn new(geometry: CsiGeometry, segment: SegmentSpec, representation: Representation) -> Self {
        Self {
            geometry,
            segment,
            representation,
            standardize: true,
        }
    }

    /// Network inputs for every window of `trace`.
    pub fn windows<S: Scalar>(&self, trace: &CsiTrace) -> Result<Vec<CsiTensor<S>>> {
        if trace.geometry != self.geometry {
            return Err(Error::config(format!(
                "{}: geometry {} does not match {}",
                trace.id, trace.geometry, self.geometry
            )));
        }
        let mut windows = segment::<S>(trace, &self.segment, self.representation)?;
        if self.standardize {
            windows.iter_mut().for_each(|w| standardize_channels(&mut w.data));
        }
        Ok(windows)
    }

    pub fn input_shape(&self) -> InputShape {
        InputShape {
            channels: self.representation.channels(&self.geometry),
            height: self.geometry.n_sub,
            width: self.segment.phi,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of stacked blocks.
    pub lambda: usize,
    pub classes: usize,
    pub upsample_stride: usize,
    pub seed: u64,
    pub input: InputShape,
    pub block: BlockConfig,
    /// Smooth the logit vector after the classifier.
    #[serde(default = "yes")]
    pub task_blur: bool,
    #[serde(default)]
    pub data: Option<DataConfig>,
}

fn yes() -> bool {
    true
}

impl ModelConfig {
    pub fn new(input: InputShape, classes: usize) -> Self {
        Self {
            lambda: 8,
            classes,
            upsample_stride: 2,
            seed: 0,
            input,
            block: BlockConfig::default(),
            task_blur: true,
            data: None,
        }
    }

    pub fn for_data(data: DataConfig, classes: usize) -> Self {
        Self {
            data: Some(data),
            ..Self::new(data.input_shape(), classes)
        }
    }

    /// Spatial extents entering each block, checked so that every block sees
    /// at least 2×2 before its stride-2 reduction.
    pub fn block_extents(&self) -> Result<Vec<(usize, usize)>> {
        if self.lambda == 0 {
            return Err(Error::config("at least one block is required"));
        }
        if self.classes == 0 || self.block.width == 0 || self.upsample_stride == 0 {
            return Err(Error::config("classes, block width and upsample stride must be positive"));
        }
        let InputShape { channels, height, width } = self.input;
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::config(format!("input shape {:?} must be positive", self.input)));
        }
        if self.block.gabor_kernel % 2 == 0 {
            return Err(Error::config("gabor kernel size must be odd"));
        }
        self.block.blur.validate()?;
        self.block.fd.validate()?;
        let (mut h, mut w) = (height * self.upsample_stride, width * self.upsample_stride);
        let mut out = Vec::with_capacity(self.lambda);
        for mu in 0..self.lambda {
            if h < 2 || w < 2 {
                return Err(Error::config(format!(
                    "block {} would receive a {h}x{w} map and cannot downsample it; \
                     use fewer blocks (λ = {}) or a larger input ({height}x{width})",
                    mu + 1,
                    self.lambda
                )));
            }
            out.push((h, w));
            h = h.div_ceil(2);
            w = w.div_ceil(2);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            momentum: 0.9,
            epochs: 30,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate {} must be finite and non-negative", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum {} must lie in [0, 1)", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        Ok(())
    }
}
