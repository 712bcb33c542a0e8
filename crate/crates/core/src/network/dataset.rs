use std::path::Path;

use crate::autodiff::Tensor;
use crate::csi::{read_manifest, read_trace, CsiTrace, Representation, SegmentSpec, Split};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::config::DataConfig;

/// One labelled network input.
#[derive(Clone, Debug)]
pub struct Sample<S> {
    pub x: Tensor<S>,
    pub label: usize,
    pub source: String,
    pub start: usize,
}

/// Segmented windows grouped by split. All traces share one geometry.
#[derive(Clone, Debug)]
pub struct Dataset<S> {
    pub data: DataConfig,
    pub train: Vec<Sample<S>>,
    pub val: Vec<Sample<S>>,
    pub test: Vec<Sample<S>>,
}

impl<S: Scalar> Dataset<S> {
    pub fn new(data: DataConfig) -> Self {
        Self {
            data,
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
        }
    }

    /// Segments `trace` and files every window under `split`.
    pub fn add_trace(&mut self, trace: &CsiTrace, label: usize, split: Split) -> Result<()> {
        let windows = self.data.windows::<S>(trace)?;
        let dst = self.split_mut(split);
        dst.extend(windows.into_iter().map(|w| Sample {
            x: w.data,
            label,
            source: w.source,
            start: w.start,
        }));
        Ok(())
    }

    /// Loads every trace listed in a manifest. The geometry is taken from the
    /// first trace unless `geometry` is given.
    pub fn from_manifest(
        manifest: impl AsRef<Path>,
        segment: SegmentSpec,
        representation: Representation,
        geometry: Option<crate::csi::CsiGeometry>,
    ) -> Result<Self> {
        segment.validate()?;
        let entries = read_manifest(manifest.as_ref())?;
        if entries.is_empty() {
            return Err(Error::Empty(format!("{}: manifest lists no traces", manifest.as_ref().display())));
        }
        let mut ds: Option<Self> = None;
        for e in &entries {
            let trace = read_trace(&e.path)?;
            let ds = ds.get_or_insert_with(|| {
                Self::new(DataConfig::new(geometry.unwrap_or(trace.geometry), segment, representation))
            });
            ds.add_trace(&trace, e.label, e.split)?;
        }
        Ok(ds.expect("non-empty manifest"))
    }

    /// Builds a dataset from in-memory labelled traces (labels taken from the traces).
    pub fn from_corpus(corpus: &[(CsiTrace, Split)], segment: SegmentSpec, representation: Representation) -> Result<Self> {
        let first = corpus.first().ok_or_else(|| Error::Empty("no traces".into()))?;
        let mut ds = Self::new(DataConfig::new(first.0.geometry, segment, representation));
        for (t, split) in corpus {
            let label = t.label.ok_or_else(|| Error::config(format!("{}: trace has no label", t.id)))?;
            ds.add_trace(t, label, *split)?;
        }
        Ok(ds)
    }

    pub fn split(&self, split: Split) -> &[Sample<S>] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    fn split_mut(&mut self, split: Split) -> &mut Vec<Sample<S>> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }

    /// One more than the largest label present.
    pub fn classes(&self) -> usize {
        self.train
            .iter()
            .chain(&self.val)
            .chain(&self.test)
            .map(|s| s.label + 1)
            .max()
            .unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
