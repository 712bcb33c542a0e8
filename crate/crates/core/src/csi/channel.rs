use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Per-subcarrier channel `γ_s`: `n_rx × n_tx`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelMatrix {
    pub n_rx: usize,
    pub n_tx: usize,
    pub data: Vec<Complex64>,
}

impl ChannelMatrix {
    pub fn new(n_rx: usize, n_tx: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != n_rx * n_tx {
            return Err(Error::config(format!(
                "{} entries do not fill a {n_rx}x{n_tx} channel matrix",
                data.len()
            )));
        }
        Ok(Self { n_rx, n_tx, data })
    }

    pub fn identity(n: usize) -> Self {
        let data = (0..n * n)
            .map(|i| if i / n == i % n { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) })
            .collect();
        Self { n_rx: n, n_tx: n, data }
    }

    pub fn scaled(mut self, s: f64) -> Self {
        for v in &mut self.data {
            *v *= s;
        }
        self
    }
}

/// Received vector `B = γ·A + θ` with θ i.i.d. complex Gaussian, standard
/// deviation `noise_sigma` on each real component. `noise_sigma = 0` draws nothing.
pub fn channel_model<R: Rng + ?Sized>(
    tx: &[Complex64],
    csi: &ChannelMatrix,
    noise_sigma: f64,
    rng: &mut R,
) -> Result<Vec<Complex64>> {
    if tx.len() != csi.n_tx {
        return Err(Error::config(format!(
            "transmit vector has {} entries, channel expects {}",
            tx.len(),
            csi.n_tx
        )));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::config(format!("noise sigma {noise_sigma} must be finite and ≥ 0")));
    }
    let noise = (noise_sigma > 0.0).then(|| Normal::new(0.0, noise_sigma).expect("valid sigma"));
    Ok((0..csi.n_rx)
        .map(|r| {
            let row = &csi.data[r * csi.n_tx..(r + 1) * csi.n_tx];
            let clean: Complex64 = row.iter().zip(tx).map(|(g, a)| g * a).sum();
            match &noise {
                Some(n) => clean + Complex64::new(n.sample(rng), n.sample(rng)),
                None => clean,
            }
        })
        .collect())
}
