//! Differential box counting on gray-level surfaces.
//!
//! The map is min-max normalized to `[0, G-1]`. For a box size `ε` the plane is
//! tiled with `ε×ε` cells (clipped at the border) and each cell contributes
//! `ceil(max/s) - ceil(min/s) + 1` boxes of height `s = ε·G/max(H, W)`
//! (for square maps the usual `ε·G/M`; for a `1×C` profile it keeps the box
//! height on the scale of the profile length). The
//! dimension is the least-squares slope of `log η(ε)` against `log(1/ε)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FdMode {
    #[default]
    SurfaceBoxCount,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FdSpec {
    /// Box sizes in pixels, strictly decreasing.
    pub scales: Vec<usize>,
    pub gray_levels: usize,
    #[serde(default)]
    pub mode: FdMode,
}

impl Default for FdSpec {
    /// A single-pixel cell always holds exactly one box, which drags every
    /// estimate toward the support dimension, so the default stops at `ε = 2`.
    fn default() -> Self {
        Self {
            scales: vec![8, 4, 2],
            gray_levels: 256,
            mode: FdMode::SurfaceBoxCount,
        }
    }
}

impl FdSpec {
    pub fn new(scales: Vec<usize>) -> Result<Self> {
        let spec = Self {
            scales,
            ..Self::default()
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales.len() < 2 {
            return Err(Error::config("fractal dimension needs at least two box sizes"));
        }
        if self.scales.iter().any(|&e| e == 0) || self.scales.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::config(format!(
                "box sizes {:?} must be positive and strictly decreasing",
                self.scales
            )));
        }
        if self.gray_levels < 2 {
            return Err(Error::config("at least two gray levels are required"));
        }
        Ok(())
    }

    /// Box sizes that fit a map whose larger side is `extent`. When fewer than
    /// two remain, falls back to the powers of two up to `extent` (down to 1).
    pub fn usable_scales(&self, extent: usize) -> Vec<usize> {
        let fit: Vec<usize> = self.scales.iter().copied().filter(|&e| e <= extent).collect();
        if fit.len() >= 2 {
            return fit;
        }
        let mut e = 1usize;
        let mut out = Vec::new();
        while e <= extent {
            out.push(e);
            e *= 2;
        }
        out.reverse();
        out
    }
}

/// Box counts `η(ε)` for each usable scale of an `h × w` map.
pub fn box_counts<S: Scalar>(values: &[S], h: usize, w: usize, spec: &FdSpec) -> Result<Vec<(usize, f64)>> {
    spec.validate()?;
    if values.len() != h * w || h == 0 || w == 0 {
        return Err(Error::config(format!("map of {} values is not {h}x{w}", values.len())));
    }
    let scales = spec.usable_scales(h.max(w));
    if scales.len() < 2 {
        return Err(Error::config(format!(
            "a {h}x{w} map is too small for box counting"
        )));
    }
    let g = spec.gray_levels as f64;
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        let v = v.as_f64();
        (lo.min(v), hi.max(v))
    });
    let range = hi - lo;
    let z: Vec<f64> = if range > 0.0 {
        values.iter().map(|v| (v.as_f64() - lo) / range * (g - 1.0)).collect()
    } else {
        vec![0.0; values.len()]
    };
    let side = h.max(w) as f64;
    Ok(scales
        .into_iter()
        .map(|eps| {
            let s = eps as f64 * g / side;
            let mut eta = 0.0;
            for i in (0..h).step_by(eps) {
                for j in (0..w).step_by(eps) {
                    let (mut cmin, mut cmax) = (f64::INFINITY, f64::NEG_INFINITY);
                    for row in z[i * w..(i + eps).min(h) * w].chunks_exact(w) {
                        for &v in &row[j..(j + eps).min(w)] {
                            cmin = cmin.min(v);
                            cmax = cmax.max(v);
                        }
                    }
                    eta += (cmax / s).ceil() - (cmin / s).ceil() + 1.0;
                }
            }
            (eps, eta)
        })
        .collect())
}

/// Least-squares slope of `y` against `x`.
pub fn ls_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Fractal dimension of an `h × w` map (row-major `values`).
pub fn estimate_fd<S: Scalar>(values: &[S], h: usize, w: usize, spec: &FdSpec) -> Result<f64> {
    let counts = box_counts(values, h, w, spec)?;
    let pts: Vec<(f64, f64)> = counts
        .iter()
        // The slope is base-independent; base 2 keeps power-of-two counts exact.
        .map(|&(eps, eta)| (-(eps as f64).log2(), eta.log2()))
        .collect();
    Ok(ls_slope(&pts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_map_is_two() {
        let fd = estimate_fd(&vec![0.7f64; 32 * 32], 32, 32, &FdSpec::default()).unwrap();
        assert_eq!(fd, 2.0);
        let spec = FdSpec::new(vec![8, 4, 2, 1]).unwrap();
        let fd = estimate_fd(&vec![-3.0f64; 32 * 32], 32, 32, &spec).unwrap();
        assert!((fd - 2.0).abs() < 1e-12, "{fd}");
    }

    #[test]
    fn constant_counts_are_cell_counts() {
        let c = box_counts(&vec![1.0f64; 16 * 16], 16, 16, &FdSpec::default()).unwrap();
        assert_eq!(c, vec![(8, 4.0), (4, 16.0), (2, 64.0)]);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(FdSpec::new(vec![4]).is_err());
        assert!(FdSpec::new(vec![2, 4]).is_err());
        assert!(FdSpec::new(vec![4, 0]).is_err());
        assert!(estimate_fd(&[1.0f64], 1, 1, &FdSpec::default()).is_err());
    }

    #[test]
    fn usable_scale_fallback() {
        let spec = FdSpec::default();
        assert_eq!(spec.usable_scales(64), vec![8, 4, 2]);
        assert_eq!(spec.usable_scales(5), vec![4, 2]);
        assert_eq!(spec.usable_scales(3), vec![2, 1]);
        assert_eq!(spec.usable_scales(2), vec![2, 1]);
    }

    #[test]
    fn smoothing_lowers_dimension() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let raw: Vec<f64> = (0..64 * 64).map(|_| rng.gen()).collect();
        let mut smooth = vec![0.0; raw.len()];
        for y in 0..64i32 {
            for x in 0..64i32 {
                let mut acc = 0.0;
                for dy in -2..=2 {
                    for dx in -2..=2 {
                        let yy = (y + dy).clamp(0, 63) as usize;
                        let xx = (x + dx).clamp(0, 63) as usize;
                        acc += raw[yy * 64 + xx];
                    }
                }
                smooth[y as usize * 64 + x as usize] = acc / 25.0;
            }
        }
        let spec = FdSpec::default();
        let a = estimate_fd(&raw, 64, 64, &spec).unwrap();
        let b = estimate_fd(&smooth, 64, 64, &spec).unwrap();
        assert!((2.4..=3.0).contains(&a), "{a}");
        assert!(b < a);
    }

    #[test]
    fn straight_line_is_one_dimensional() {
        let line: Vec<f64> = (0..64).map(|i| i as f64).collect();
        let fd = estimate_fd(&line, 1, 64, &FdSpec::default()).unwrap();
        assert!((fd - 1.0).abs() <= 0.1, "{fd}");
    }

    #[test]
    fn affine_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..32 * 32).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.5 * v + 7.0).collect();
        let spec = FdSpec::default();
        let a = estimate_fd(&x, 32, 32, &spec).unwrap();
        let b = estimate_fd(&y, 32, 32, &spec).unwrap();
        assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
    }

    #[test]
    fn rough_profile_beats_smooth_profile() {
        let spec = FdSpec::default();
        let smooth: Vec<f64> = (0..40).map(|i| (i as f64 * 0.1).sin()).collect();
        let rough: Vec<f64> = (0..40).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let a = estimate_fd(&smooth, 1, 40, &spec).unwrap();
        let b = estimate_fd(&rough, 1, 40, &spec).unwrap();
        assert!(b > a + 0.2, "{a} {b}");
    }
}
