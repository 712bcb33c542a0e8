use std::fs;
use std::path::{Path, PathBuf};

use grasens::csi::{Representation, SegmentSpec};
use grasens::network::{BlockConfig, DataConfig, ModelConfig, TrainConfig};
use grasens::{Error, Result};
use serde::{Deserialize, Serialize};

/// Everything a training run depends on. Written to `config.json` in the run
/// directory; feeding that file back with `--config` repeats the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub segment: SegmentSpec,
    pub representation: Representation,
    pub lambda: usize,
    pub upsample_stride: usize,
    pub task_blur: bool,
    pub model_seed: u64,
    pub block: BlockConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            out: None,
            segment: SegmentSpec { phi: 200, upsilon: 100 },
            representation: Representation::Magnitude,
            lambda: 8,
            upsample_stride: 2,
            task_blur: true,
            model_seed: 0,
            block: BlockConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.into(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            offset: 0,
            message: format!("{}: {e}", path.display()),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::Io {
            path: path.into(),
            source: e,
        })
    }

    pub fn model_config(&self, data: DataConfig, classes: usize) -> ModelConfig {
        let mut m = ModelConfig::for_data(data, classes);
        m.lambda = self.lambda;
        m.upsample_stride = self.upsample_stride;
        m.task_blur = self.task_blur;
        m.seed = self.model_seed;
        m.block = self.block.clone();
        m
    }
}
