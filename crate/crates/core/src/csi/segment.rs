use num_complex::Complex32;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{CsiGeometry, CsiTrace};

/// Sliding window: `phi` packets per window, windows start every `upsilon` packets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub phi: usize,
    pub upsilon: usize,
}

impl SegmentSpec {
    pub fn new(phi: usize, upsilon: usize) -> Result<Self> {
        let s = Self { phi, upsilon };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.upsilon == 0 || self.upsilon > self.phi {
            return Err(Error::config(format!(
                "segment hop {} must satisfy 1 ≤ hop ≤ window {}",
                self.upsilon, self.phi
            )));
        }
        Ok(())
    }
}

/// What each antenna pair contributes to the tensor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Representation {
    /// `C = N_T·N_R` magnitude channels.
    #[default]
    Magnitude,
    /// Magnitudes followed by `C - 1` channels holding the phase of pair `c`
    /// relative to pair 0.
    MagnitudePhaseDiff,
}

impl Representation {
    pub fn channels(self, geometry: &CsiGeometry) -> usize {
        match self {
            Representation::Magnitude => geometry.pairs(),
            Representation::MagnitudePhaseDiff => 2 * geometry.pairs() - 1,
        }
    }
}

/// One window in network layout: `(C, H, W) = (antenna pairs, subcarriers, packets)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CsiTensor<S> {
    pub data: Tensor<S>,
    pub source: String,
    /// First packet of the window within its trace.
    pub start: usize,
    pub label: Option<usize>,
}

/// Shifts and scales each channel of a `[C, H, W]` window to zero mean and
/// unit variance. Constant channels become all zeros.
pub fn standardize_channels<S: Scalar>(x: &mut Tensor<S>) {
    let Ok((c, h, w)) = x.chw() else { return };
    let n = h * w;
    for ch in x.data_mut().chunks_mut(n).take(c) {
        let mean = ch.iter().map(|v| v.as_f64()).sum::<f64>() / n as f64;
        let var = ch.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / n as f64;
        let inv = if var > 1e-24 { 1.0 / var.sqrt() } else { 0.0 };
        for v in ch.iter_mut() {
            *v = S::lit((v.as_f64() - mean) * inv);
        }
    }
}

/// Window start offsets `0, υ, 2υ, …` with `start + φ ≤ packet_count`.
pub fn segment_starts(packet_count: usize, spec: &SegmentSpec) -> Result<Vec<usize>> {
    spec.validate()?;
    if packet_count < spec.phi {
        return Err(Error::Empty(format!(
            "trace has {packet_count} packets, fewer than the window length {}",
            spec.phi
        )));
    }
    Ok((0..=packet_count - spec.phi).step_by(spec.upsilon).collect())
}

pub fn segment<S: Scalar>(trace: &CsiTrace, spec: &SegmentSpec, repr: Representation) -> Result<Vec<CsiTensor<S>>> {
    segment_starts(trace.packet_count(), spec)
        .map_err(|e| match e {
            Error::Empty(m) => Error::Empty(format!("{}: {m}", trace.id)),
            e => e,
        })?
        .into_iter()
        .map(|start| {
            Ok(CsiTensor {
                data: layout_tensor(trace.packets(start, spec.phi), &trace.geometry, repr)?,
                source: trace.id.clone(),
                start,
                label: trace.label,
            })
        })
        .collect()
}

/// Rearranges a packet-major window (`φ × N_T × N_R × N_S`) so that
/// `out[c, h, w] = |window[w, c / N_R, c % N_R, h]|`.
pub fn layout_tensor<S: Scalar>(window: &[Complex32], geometry: &CsiGeometry, repr: Representation) -> Result<Tensor<S>> {
    let per = geometry.per_packet();
    if window.is_empty() || window.len() % per != 0 {
        return Err(Error::config(format!(
            "window of {} values is not whole {geometry} packets",
            window.len()
        )));
    }
    let phi = window.len() / per;
    let (pairs, n_sub) = (geometry.pairs(), geometry.n_sub);
    let channels = repr.channels(geometry);
    let mut out = vec![S::zero(); channels * n_sub * phi];
    for w in 0..phi {
        let packet = &window[w * per..(w + 1) * per];
        for c in 0..pairs {
            for h in 0..n_sub {
                let v = packet[c * n_sub + h];
                out[(c * n_sub + h) * phi + w] = S::lit((v.re as f64).hypot(v.im as f64));
                if repr == Representation::MagnitudePhaseDiff && c > 0 {
                    let rel = v * packet[h].conj();
                    out[((pairs + c - 1) * n_sub + h) * phi + w] = S::lit((rel.im as f64).atan2(rel.re as f64));
                }
            }
        }
    }
    Tensor::new([channels, n_sub, phi], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardized_channels_have_unit_moments() {
        let mut x = Tensor::from_fn([2, 3, 4], |i| if i < 12 { 5.0 + (i as f64).sin() } else { 7.0 });
        standardize_channels(&mut x);
        let c0 = &x.data()[..12];
        let mean = c0.iter().sum::<f64>() / 12.0;
        let var = c0.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 12.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        assert!(x.data()[12..].iter().all(|&v| v == 0.0));
    }
    use proptest::prelude::*;

    fn ramp_trace(n: usize, g: CsiGeometry) -> CsiTrace {
        let values = (0..n * g.per_packet())
            .map(|i| Complex32::new(i as f32, -(i as f32) * 0.5))
            .collect();
        CsiTrace::new(g, values, Some(0), "ramp").unwrap()
    }

    #[test]
    fn window_starts() {
        let s = SegmentSpec::new(200, 100).unwrap();
        assert_eq!(segment_starts(1000, &s).unwrap(), (0..9).map(|i| i * 100).collect::<Vec<_>>());
        let s = SegmentSpec::new(200, 200).unwrap();
        assert_eq!(segment_starts(200, &s).unwrap(), vec![0]);
        assert!(matches!(segment_starts(199, &s), Err(Error::Empty(_))));
        assert!(SegmentSpec::new(10, 11).is_err());
        assert!(SegmentSpec::new(10, 0).is_err());
    }

    #[test]
    fn count_formula() {
        for n in 1..60 {
            for phi in 1..=n.min(12) {
                for ups in 1..=phi {
                    let s = SegmentSpec::new(phi, ups).unwrap();
                    assert_eq!(segment_starts(n, &s).unwrap().len(), (n - phi) / ups + 1);
                }
            }
        }
    }

    #[test]
    fn magnitude_examples() {
        let g = CsiGeometry::new(2, 3, 4, 100).unwrap();
        let ones = vec![Complex32::new(1.0, 0.0); 5 * g.per_packet()];
        let t: Tensor<f64> = layout_tensor(&ones, &g, Representation::Magnitude).unwrap();
        assert_eq!(t.shape(), &[6, 4, 5]);
        assert!(t.data().iter().all(|&v| v == 1.0));

        let mut w = vec![Complex32::new(0.0, 0.0); 2 * g.per_packet()];
        w[0] = Complex32::new(3.0, 4.0);
        let t: Tensor<f64> = layout_tensor(&w, &g, Representation::Magnitude).unwrap();
        assert_eq!(t.at3(0, 0, 0), 5.0);
    }

    #[test]
    fn phase_difference_channels() {
        let g = CsiGeometry::new(1, 2, 1, 100).unwrap();
        let w = vec![Complex32::new(0.0, 1.0), Complex32::new(1.0, 0.0)];
        let t: Tensor<f64> = layout_tensor(&w, &g, Representation::MagnitudePhaseDiff).unwrap();
        assert_eq!(t.shape(), &[3, 1, 1]);
        assert!((t.data()[2] + std::f64::consts::FRAC_PI_2).abs() < 1e-7);
    }

    #[test]
    fn hop_equal_window_tiles_prefix() {
        let g = CsiGeometry::new(1, 2, 3, 100).unwrap();
        let trace = ramp_trace(10, g);
        let spec = SegmentSpec::new(3, 3).unwrap();
        let segs: Vec<CsiTensor<f64>> = segment(&trace, &spec, Representation::Magnitude).unwrap();
        assert_eq!(segs.len(), 3);
        for (k, s) in segs.iter().enumerate() {
            assert_eq!(s.start, 3 * k);
            for c in 0..2 {
                for h in 0..3 {
                    for w in 0..3 {
                        let v = trace.at(3 * k + w, 0, c, h);
                        assert_eq!(s.data.at3(c, h, w), (v.re as f64).hypot(v.im as f64));
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn layout_probes_and_energy(
            n_tx in 1usize..3, n_rx in 1usize..4, n_sub in 1usize..6, phi in 1usize..5,
            vals in proptest::collection::vec((-10.0f32..10.0, -10.0f32..10.0), 120),
            probes in proptest::collection::vec(0usize..10_000, 50),
        ) {
            let g = CsiGeometry::new(n_tx, n_rx, n_sub, 1).unwrap();
            let n = phi * g.per_packet();
            let window: Vec<Complex32> = (0..n).map(|i| { let (a, b) = vals[i % vals.len()]; Complex32::new(a + i as f32 * 0.01, b) }).collect();
            let t: Tensor<f64> = layout_tensor(&window, &g, Representation::Magnitude).unwrap();
            for p in probes {
                let (c, h, w) = (p % g.pairs(), (p / 7) % n_sub, (p / 31) % phi);
                let v = window[((w * n_tx + c / n_rx) * n_rx + c % n_rx) * n_sub + h];
                prop_assert_eq!(t.at3(c, h, w), (v.re as f64).hypot(v.im as f64));
            }
            let energy: f64 = window.iter().map(|v| (v.re as f64).powi(2) + (v.im as f64).powi(2)).sum();
            let tensor_energy: f64 = t.data().iter().map(|v| v * v).sum();
            prop_assert!((energy - tensor_energy).abs() <= 1e-9 * energy.max(1e-300));
        }
    }
}
