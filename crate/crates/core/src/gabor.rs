//! Gabor filter banks whose kernels are re-synthesized from trainable
//! `(ϖ, θ, ψ, σ)` parameters on every forward pass.
//!
//! Kernel taps follow
//! `g(x, y) = exp(-(x'^2 + y'^2) / (2σ^2)) · cos(ϖ x' + ψ)` with
//! `x' = x cosθ + y sinθ`, `y' = -x sinθ + y cosθ`, where `(x, y)` are integer
//! offsets from the kernel centre (`x` along columns, `y` along rows).
//! Convolution is cross-correlation throughout the crate, so an impulse input
//! reproduces the kernel unflipped.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_8, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Frequencies in the initial grid.
pub const N_FREQUENCIES: usize = 5;
/// Orientations in the initial grid.
pub const N_ORIENTATIONS: usize = 8;
/// Output filters of a grid-initialized layer.
pub const N_FILTERS: usize = N_FREQUENCIES * N_ORIENTATIONS;

/// `ϖ_n = (π/2)·√2^-(n-1)`, `n` 1-based.
pub fn grid_frequency(n: usize) -> f64 {
    FRAC_PI_2 * 2f64.sqrt().powi(-(n as i32 - 1))
}

/// `θ_m = (π/8)·(m-1)`, `m` 1-based.
pub fn grid_orientation(m: usize) -> f64 {
    FRAC_PI_8 * (m - 1) as f64
}

/// One filter's parameter quadruple.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaborParams<S> {
    pub omega: S,
    pub theta: S,
    pub psi: S,
    pub sigma: S,
}

/// A Gabor convolution layer: `[C_out, C_in]` parameter quadruples stored as
/// four tensors in a [`ParamStore`], applied with stride 1 and `(k-1)/2` zero
/// padding so spatial extents are preserved.
#[derive(Clone, Debug)]
pub struct GaborLayer {
    pub omega: ParamId,
    pub theta: ParamId,
    pub psi: ParamId,
    pub sigma: ParamId,
    pub c_out: usize,
    pub c_in: usize,
    pub kernel_size: usize,
}

impl GaborLayer {
    /// Registers a 40-filter layer initialized on the frequency × orientation grid.
    /// Filter `f = 8(n-1) + (m-1)` carries `(ϖ_n, θ_m)` for every input channel,
    /// `σ = π/ϖ_n`, and `ψ ~ U(0, π)` drawn independently per `(out, in)` pair.
    pub fn init_grid<S: Scalar>(
        store: &mut ParamStore<S>,
        prefix: &str,
        c_in: usize,
        kernel_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if kernel_size % 2 == 0 || kernel_size == 0 {
            return Err(Error::config(format!("gabor kernel size {kernel_size} must be odd")));
        }
        if c_in == 0 {
            return Err(Error::config("gabor layer needs at least one input channel"));
        }
        let shape = [N_FILTERS, c_in];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut omega = Vec::with_capacity(N_FILTERS * c_in);
        let mut theta = Vec::with_capacity(N_FILTERS * c_in);
        let mut psi = Vec::with_capacity(N_FILTERS * c_in);
        let mut sigma = Vec::with_capacity(N_FILTERS * c_in);
        for n in 1..=N_FREQUENCIES {
            for m in 1..=N_ORIENTATIONS {
                let w = grid_frequency(n);
                for _ in 0..c_in {
                    omega.push(S::lit(w));
                    theta.push(S::lit(grid_orientation(m)));
                    sigma.push(S::lit(PI / w));
                    psi.push(S::lit(rng.gen_range(0.0..PI)));
                }
            }
        }
        let mut reg = |name: &str, data| store.register(format!("{prefix}.{name}"), Tensor::new(shape, data).expect("grid shape"));
        Ok(Self {
            omega: reg("omega", omega),
            theta: reg("theta", theta),
            psi: reg("psi", psi),
            sigma: reg("sigma", sigma),
            c_out: N_FILTERS,
            c_in,
            kernel_size,
        })
    }

    pub fn ids(&self) -> [ParamId; 4] {
        [self.omega, self.theta, self.psi, self.sigma]
    }

    pub fn params<S: Scalar>(&self, store: &ParamStore<S>, filter: usize, in_channel: usize) -> GaborParams<S> {
        let i = filter * self.c_in + in_channel;
        GaborParams {
            omega: store.get(self.omega).data()[i],
            theta: store.get(self.theta).data()[i],
            psi: store.get(self.psi).data()[i],
            sigma: store.get(self.sigma).data()[i],
        }
    }

    /// Excludes the parameters from training; kernels stay at their current values.
    pub fn freeze<S: Scalar>(&self, store: &mut ParamStore<S>) {
        for id in self.ids() {
            store.set_trainable(id, false);
        }
    }

    /// Synthesizes the `[C_out, C_in, k, k]` kernel bank inside `g`.
    pub fn kernels<S: Scalar>(&self, g: &mut Graph<S>, bound: &Bound) -> Result<Var> {
        g.gabor_bank(
            bound.var(self.omega),
            bound.var(self.theta),
            bound.var(self.psi),
            bound.var(self.sigma),
            self.kernel_size,
        )
    }

    /// Current kernel bank as plain values.
    pub fn kernel_values<S: Scalar>(&self, store: &ParamStore<S>) -> Result<Tensor<S>> {
        let mut g = Graph::new();
        let vars: Vec<Var> = self.ids().iter().map(|&id| g.constant(store.get(id).clone())).collect();
        let k = g.gabor_bank(vars[0], vars[1], vars[2], vars[3], self.kernel_size)?;
        Ok(g.value(k).clone())
    }

    /// Gabor convolution: fresh kernels, stride 1, `(k-1)/2` zero padding.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, bound: &Bound, x: Var) -> Result<Var> {
        let k = self.kernels(g, bound)?;
        gabor_conv(g, x, k)
    }
}

/// Convolves `x` with an already synthesized `[C_out, C_in, k, k]` bank.
pub fn gabor_conv<S: Scalar>(g: &mut Graph<S>, x: Var, kernels: Var) -> Result<Var> {
    let k = g.shape(kernels).get(2).copied().unwrap_or(1);
    g.conv2d(x, kernels, 1, k / 2)
}

/// A single `[k, k]` kernel for one parameter quadruple.
pub fn synthesize_kernel<S: Scalar>(p: GaborParams<S>, kernel_size: usize) -> Result<Tensor<S>> {
    let mut g = Graph::new();
    let one = |g: &mut Graph<S>, v: S| g.constant(Tensor::full([1, 1], v));
    let (o, t, ps, s) = (one(&mut g, p.omega), one(&mut g, p.theta), one(&mut g, p.psi), one(&mut g, p.sigma));
    let k = g.gabor_bank(o, t, ps, s, kernel_size)?;
    g.value(k).clone().reshape([kernel_size, kernel_size])
}
