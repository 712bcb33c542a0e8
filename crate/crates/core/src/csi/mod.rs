//! CSI traces: geometry, the per-subcarrier channel model, a synthetic
//! activity generator, the GCSI file format, sliding-window segmentation, and
//! the `(antenna pair, subcarrier, time)` tensor layout fed to the network.

mod channel;
mod gcsi;
mod manifest;
mod segment;
mod synth;

use num_complex::Complex32;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use channel::{channel_model, ChannelMatrix};
pub use gcsi::{read_trace, read_trace_bytes, write_trace, write_trace_bytes, HEADER_LEN, MAGIC, VERSION};
pub use manifest::{read_manifest, write_manifest, ManifestEntry, Split};
pub use segment::{layout_tensor, segment, segment_starts, standardize_channels, CsiTensor, Representation, SegmentSpec};
pub use synth::{corpus_split, generate_synthetic, synthetic_corpus, SynthConfig};

/// Antenna and subcarrier counts of a capture.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CsiGeometry {
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_sub: usize,
    /// Packets per second.
    pub sample_rate_hz: u32,
}

impl CsiGeometry {
    pub fn new(n_tx: usize, n_rx: usize, n_sub: usize, sample_rate_hz: u32) -> Result<Self> {
        let g = Self {
            n_tx,
            n_rx,
            n_sub,
            sample_rate_hz,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_tx == 0 || self.n_rx == 0 || self.n_sub == 0 || self.sample_rate_hz == 0 {
            return Err(Error::config(format!("geometry {self} must be strictly positive")));
        }
        Ok(())
    }

    /// Complex values per packet, `N_T·N_R·N_S`.
    pub fn per_packet(&self) -> usize {
        self.n_tx * self.n_rx * self.n_sub
    }

    /// Antenna pairs, the channel count of the magnitude tensor.
    pub fn pairs(&self) -> usize {
        self.n_tx * self.n_rx
    }

    /// Parses `NTxNRxNS`, e.g. `2x2x30`.
    pub fn parse(s: &str, sample_rate_hz: u32) -> Result<Self> {
        let parts: Vec<&str> = s.split(['x', 'X']).collect();
        let nums: Vec<usize> = parts
            .iter()
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Usage(format!("geometry {s:?} is not NTxNRxNS")))?;
        match nums[..] {
            [t, r, n] => Self::new(t, r, n, sample_rate_hz),
            _ => Err(Error::Usage(format!("geometry {s:?} is not NTxNRxNS"))),
        }
    }
}

impl std::fmt::Display for CsiGeometry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}@{}Hz", self.n_tx, self.n_rx, self.n_sub, self.sample_rate_hz)
    }
}

/// Time-ordered CSI packets. Packet `i` is an `N_T×N_R×N_S` complex array
/// stored tx-major, then rx, then subcarrier.
#[derive(Clone, Debug, PartialEq)]
pub struct CsiTrace {
    pub geometry: CsiGeometry,
    values: Vec<Complex32>,
    pub label: Option<usize>,
    /// Provenance (file path or generator key); not serialized.
    pub id: String,
}

impl CsiTrace {
    pub fn new(geometry: CsiGeometry, values: Vec<Complex32>, label: Option<usize>, id: impl Into<String>) -> Result<Self> {
        geometry.validate()?;
        let per = geometry.per_packet();
        if values.is_empty() || values.len() % per != 0 {
            return Err(Error::config(format!(
                "{} CSI values do not form whole {geometry} packets",
                values.len()
            )));
        }
        Ok(Self {
            geometry,
            values,
            label,
            id: id.into(),
        })
    }

    pub fn packet_count(&self) -> usize {
        self.values.len() / self.geometry.per_packet()
    }

    pub fn packet(&self, i: usize) -> &[Complex32] {
        let per = self.geometry.per_packet();
        &self.values[i * per..(i + 1) * per]
    }

    /// Packets `start..start + len` as one contiguous slice.
    pub fn packets(&self, start: usize, len: usize) -> &[Complex32] {
        let per = self.geometry.per_packet();
        &self.values[start * per..(start + len) * per]
    }

    pub fn at(&self, i: usize, tx: usize, rx: usize, sub: usize) -> Complex32 {
        let g = &self.geometry;
        self.values[((i * g.n_tx + tx) * g.n_rx + rx) * g.n_sub + sub]
    }

    pub fn values(&self) -> &[Complex32] {
        &self.values
    }
}
