//! GCSI container, little-endian:
//!
//! ```text
//! offset  size  field
//!      0     4  magic "GCSI"
//!      4     2  version (1)
//!      6     2  N_T
//!      8     2  N_R
//!     10     2  N_S
//!     12     4  sample_rate_hz
//!     16     4  label (i32, -1 = none)
//!     20     8  packet_count
//!     28     …  packet-major, then tx, rx, subcarrier; each value f32 re, f32 im
//! ```

use std::fs;
use std::path::Path;

use num_complex::Complex32;

use crate::error::{Error, Result};

use super::{CsiGeometry, CsiTrace};

pub const MAGIC: &[u8; 4] = b"GCSI";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 28;

fn u16_at(b: &[u8], o: usize) -> u16 {
    u16::from_le_bytes([b[o], b[o + 1]])
}

fn u32_at(b: &[u8], o: usize) -> u32 {
    u32::from_le_bytes(b[o..o + 4].try_into().expect("4 bytes"))
}

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset: offset as u64,
        message: message.into(),
    }
}

pub fn read_trace_bytes(b: &[u8], id: impl Into<String>) -> Result<CsiTrace> {
    if b.len() < 4 || &b[..4] != MAGIC {
        return Err(parse_err(0, "bad magic, expected \"GCSI\""));
    }
    if b.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN as u64,
            actual: b.len() as u64,
        });
    }
    let version = u16_at(b, 4);
    if version != VERSION {
        return Err(parse_err(4, format!("unsupported version {version}")));
    }
    let (n_tx, n_rx, n_sub) = (u16_at(b, 6), u16_at(b, 8), u16_at(b, 10));
    let rate = u32_at(b, 12);
    for (off, v, name) in [(6, n_tx as u32, "N_T"), (8, n_rx as u32, "N_R"), (10, n_sub as u32, "N_S"), (12, rate, "sample rate")] {
        if v == 0 {
            return Err(parse_err(off, format!("{name} must be positive")));
        }
    }
    let label = i32::from_le_bytes(b[16..20].try_into().expect("4 bytes"));
    if label < -1 {
        return Err(parse_err(16, format!("invalid label {label}")));
    }
    let packets = u64::from_le_bytes(b[20..28].try_into().expect("8 bytes"));
    if packets == 0 {
        return Err(parse_err(20, "packet count must be at least 1"));
    }
    let geometry = CsiGeometry::new(n_tx as usize, n_rx as usize, n_sub as usize, rate)?;
    let expected = (packets as u128) * geometry.per_packet() as u128 * 8 + HEADER_LEN as u128;
    let actual = b.len() as u128;
    if actual < expected {
        return Err(Error::Truncated {
            expected: expected.min(u64::MAX as u128) as u64,
            actual: actual as u64,
        });
    }
    if actual > expected {
        return Err(parse_err(
            expected as usize,
            format!("{} trailing bytes after {packets} packets of {geometry}", actual - expected),
        ));
    }
    let values = b[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| {
            Complex32::new(
                f32::from_le_bytes(c[..4].try_into().expect("4 bytes")),
                f32::from_le_bytes(c[4..].try_into().expect("4 bytes")),
            )
        })
        .collect();
    CsiTrace::new(geometry, values, (label >= 0).then_some(label as usize), id)
}

pub fn write_trace_bytes(trace: &CsiTrace) -> Result<Vec<u8>> {
    let g = &trace.geometry;
    let narrow = |v: usize, name: &str| {
        u16::try_from(v).map_err(|_| Error::config(format!("{name} = {v} does not fit the GCSI u16 field")))
    };
    let label = match trace.label {
        None => -1,
        Some(l) => i32::try_from(l).map_err(|_| Error::config(format!("label {l} does not fit i32")))?,
    };
    let mut out = Vec::with_capacity(HEADER_LEN + trace.values().len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&narrow(g.n_tx, "N_T")?.to_le_bytes());
    out.extend_from_slice(&narrow(g.n_rx, "N_R")?.to_le_bytes());
    out.extend_from_slice(&narrow(g.n_sub, "N_S")?.to_le_bytes());
    out.extend_from_slice(&g.sample_rate_hz.to_le_bytes());
    out.extend_from_slice(&label.to_le_bytes());
    out.extend_from_slice(&(trace.packet_count() as u64).to_le_bytes());
    for v in trace.values() {
        out.extend_from_slice(&v.re.to_le_bytes());
        out.extend_from_slice(&v.im.to_le_bytes());
    }
    Ok(out)
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<CsiTrace> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_trace_bytes(&bytes, path.display().to_string())
}

pub fn write_trace(trace: &CsiTrace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_trace_bytes(trace)?).map_err(|e| Error::io(path, e))
}
