//! Central finite differences against reverse-mode gradients.

use crate::error::Result;

use super::{Graph, Tensor, Var};

#[derive(Clone, Debug)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// `(input index, element index, analytic, numeric)` of the worst element.
    pub worst: Option<(usize, usize, f64, f64)>,
}

#[derive(Clone, Copy, Debug)]
pub struct CheckOptions {
    pub step: f64,
    /// Relative errors are measured against `max(|analytic|, |numeric|, floor)`.
    pub floor: f64,
    /// Check at most this many evenly spaced elements per input (all when `None`).
    pub max_per_input: Option<usize>,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-6,
            max_per_input: None,
        }
    }
}

pub fn relative_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compares the gradient of the scalar `f(inputs)` obtained by [`Graph::backward`]
/// with central differences of `f` evaluated on perturbed copies of `inputs`.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], opts: CheckOptions, f: F) -> Result<GradReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |tensors: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = tensors.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| g.grad_tensor(v)).collect();

    let mut report = GradReport {
        max_rel_err: 0.0,
        checked: 0,
        worst: None,
    };
    let mut work = inputs.to_vec();
    for (ii, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let picks: Vec<usize> = match opts.max_per_input {
            Some(m) if m < n => (0..m).map(|j| j * n / m).collect(),
            _ => (0..n).collect(),
        };
        for j in picks {
            let orig = input.data()[j];
            work[ii].data_mut()[j] = orig + opts.step;
            let plus = eval(&work)?;
            work[ii].data_mut()[j] = orig - opts.step;
            let minus = eval(&work)?;
            work[ii].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic[ii].data()[j];
            let err = relative_error(a, numeric, opts.floor);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((ii, j, a, numeric));
            }
        }
    }
    Ok(report)
}
