//! Central-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Check at most this many randomly chosen coordinates per input.
    pub max_coords: Option<usize>,
    /// Exclude coordinates whose finite differences straddle a kink
    /// (ReLU zero, max-pool switch, hinge boundary).
    pub skip_nonsmooth: bool,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            tolerance: 1e-3,
            max_coords: None,
            skip_nonsmooth: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
    /// (input, flat index, analytic, numeric) of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error < self.tolerance
    }
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Compares the analytic gradient of `f` at `inputs` against
/// `(f(x+e) - f(x-e)) / 2e` per coordinate.
pub fn gradcheck<F>(f: F, inputs: &[Tensor<f64>], opts: &GradcheckOptions) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    if opts.epsilon <= 0.0 {
        return Err(Error::invalid("gradcheck epsilon must be positive"));
    }
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).len() != 1 {
        return Err(Error::shape(format!(
            "gradcheck needs a scalar output, got {:?}",
            g.shape(out)
        )));
    }
    let grads = g.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.get_or_zeros(&g, v)).collect();
    drop(g);

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::<f64>::inference();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
        worst: None,
        tolerance: opts.tolerance,
    };
    for (ii, input) in inputs.iter().enumerate() {
        let n = input.len();
        let coords: Vec<usize> = match opts.max_coords {
            Some(k) if k < n => {
                let mut c = sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        for idx in coords {
            let x0 = input.data()[idx];
            let mut central = |eps: f64| -> Result<f64> {
                work[ii].data_mut()[idx] = x0 + eps;
                let fp = eval(&work)?;
                work[ii].data_mut()[idx] = x0 - eps;
                let fm = eval(&work)?;
                work[ii].data_mut()[idx] = x0;
                Ok((fp - fm) / (2.0 * eps))
            };
            let numeric = central(opts.epsilon)?;
            if opts.skip_nonsmooth {
                let half = central(opts.epsilon / 2.0)?;
                if relative_error(numeric, half) > opts.tolerance {
                    report.skipped += 1;
                    continue;
                }
            }
            let a = analytic[ii].data()[idx];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                if err >= report.max_rel_error {
                    report.worst = Some((ii, idx, a, numeric));
                }
            }
        }
    }
    Ok(report)
}
