//! Synthetic activity traces.
//!
//! Each trace is a static multipath channel per antenna pair whose magnitude
//! is modulated, inside a class-specific subcarrier band, by a chirp whose
//! start frequency and sweep rate are also class-specific. Packets are
//! "sounded" one transmit antenna at a time through [`channel_model`], so the
//! recorded CSI carries receiver noise.

use std::f64::consts::TAU;

use num_complex::{Complex32, Complex64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{channel_model, ChannelMatrix, CsiGeometry, CsiTrace, Split};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub classes: usize,
    /// Receiver noise, per real component.
    pub noise_sigma: f64,
    /// Peak relative magnitude swing inside the class band.
    pub modulation_depth: f64,
    /// Chirp sweep period in packets.
    pub sweep_packets: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            noise_sigma: 0.05,
            modulation_depth: 0.6,
            sweep_packets: 64,
        }
    }
}

/// Multipath taps of the static channel.
const PATHS: usize = 3;

pub fn generate_synthetic(
    geometry: CsiGeometry,
    cfg: &SynthConfig,
    class_id: usize,
    duration_packets: usize,
    seed: u64,
) -> Result<CsiTrace> {
    geometry.validate()?;
    if class_id >= cfg.classes {
        return Err(Error::config(format!(
            "class {class_id} out of range for {} classes",
            cfg.classes
        )));
    }
    if duration_packets == 0 || cfg.sweep_packets == 0 {
        return Err(Error::config("synthetic trace needs at least one packet and a positive sweep"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x2545_f491_4f6c_dd1d) ^ class_id as u64);
    let CsiGeometry { n_tx, n_rx, n_sub, .. } = geometry;
    let k = class_id as f64;
    let kn = cfg.classes as f64;

    // Static channel H[pair][sub]: common gain plus weak delayed paths.
    let mut static_ch = vec![Complex64::new(0.0, 0.0); n_tx * n_rx * n_sub];
    for pair in 0..n_tx * n_rx {
        let gain = Complex64::from_polar(rng.gen_range(0.8..1.2), rng.gen_range(0.0..TAU));
        let taps: Vec<(f64, f64, f64)> = (0..PATHS)
            .map(|_| (rng.gen_range(0.0..0.15), rng.gen_range(0.0..0.5), rng.gen_range(0.0..TAU)))
            .collect();
        for s in 0..n_sub {
            let ripple: Complex64 = taps
                .iter()
                .map(|&(a, delay, ph)| Complex64::from_polar(a, ph - TAU * s as f64 * delay / n_sub as f64 * 4.0))
                .sum();
            static_ch[pair * n_sub + s] = gain * (1.0 + ripple);
        }
    }

    let band_centre = (k + 0.5) / kn * n_sub as f64 + rng.gen_range(-0.25..0.25);
    let band_width = (n_sub as f64 / (2.0 * kn)).max(0.75);
    let f0 = 0.04 + 0.1 * k / kn;
    let rate = 0.03 * (k + 1.0);
    let depth = cfg.modulation_depth * rng.gen_range(0.85..1.15);
    let t0 = rng.gen_range(0..cfg.sweep_packets);
    let phase0 = rng.gen_range(0.0..TAU);
    let sweep = cfg.sweep_packets as f64;

    let mut values = Vec::with_capacity(duration_packets * geometry.per_packet());
    let mut gamma = ChannelMatrix::new(n_rx, n_tx, vec![Complex64::new(0.0, 0.0); n_rx * n_tx])?;
    let mut sounding = vec![Complex64::new(0.0, 0.0); n_tx];
    let mut packet = vec![Complex32::new(0.0, 0.0); geometry.per_packet()];
    for i in 0..duration_packets {
        let tau = ((i + t0) % cfg.sweep_packets) as f64;
        let chirp = TAU * (f0 * tau + 0.5 * rate * tau * tau / sweep) + phase0;
        let swing = 0.5 * (1.0 + chirp.cos());
        for s in 0..n_sub {
            let d = s as f64 - band_centre;
            let env = (-d * d / (2.0 * band_width * band_width)).exp();
            let scale = 1.0 + depth * env * swing;
            for tx in 0..n_tx {
                for rx in 0..n_rx {
                    gamma.data[rx * n_tx + tx] = static_ch[(tx * n_rx + rx) * n_sub + s] * scale;
                }
            }
            for tx in 0..n_tx {
                sounding.iter_mut().enumerate().for_each(|(j, a)| {
                    *a = if j == tx { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) }
                });
                let received = channel_model(&sounding, &gamma, cfg.noise_sigma, &mut rng)?;
                for (rx, b) in received.iter().enumerate() {
                    packet[(tx * n_rx + rx) * n_sub + s] = Complex32::new(b.re as f32, b.im as f32);
                }
            }
        }
        values.extend_from_slice(&packet);
    }
    CsiTrace::new(
        geometry,
        values,
        Some(class_id),
        format!("synthetic/class{class_id}/seed{seed}"),
    )
}

/// Split assigned to the `index`-th trace of a class: every fifth goes to validation.
pub fn corpus_split(index: usize) -> Split {
    if index % 5 == 4 {
        Split::Val
    } else {
        Split::Train
    }
}

/// `traces_per_class` traces for every class, class-major, each with its own
/// seed derived from `seed`, and an 80/20 train/validation assignment.
pub fn synthetic_corpus(
    geometry: CsiGeometry,
    cfg: &SynthConfig,
    traces_per_class: usize,
    duration_packets: usize,
    seed: u64,
) -> Result<Vec<(CsiTrace, Split)>> {
    let mut out = Vec::with_capacity(cfg.classes * traces_per_class);
    for class in 0..cfg.classes {
        for i in 0..traces_per_class {
            let trace_seed = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
            let mut t = generate_synthetic(geometry, cfg, class, duration_packets, trace_seed)?;
            t.id = format!("class{class}_{i:05}");
            out.push((t, corpus_split(i)));
        }
    }
    Ok(out)
}
