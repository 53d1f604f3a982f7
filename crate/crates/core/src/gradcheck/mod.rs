//! Central finite-difference checks of recorded backward rules.

mod suite;

pub use suite::{run_suite, SuiteCase};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Half-width of the central difference.
    pub eps: f64,
    /// Coordinates sampled per input tensor; smaller tensors are checked in full.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { eps: 1e-6, max_coords: 64, seed: 0 }
    }
}

/// Worst disagreement found by [`grad_check`].
#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, flat element index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares analytic gradients of a scalar function against central
/// differences on every input.
///
/// `f` builds the graph from one leaf per input and returns the scalar output.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    grad_check_filtered(f, inputs, cfg, |_, _| true)
}

/// As [`grad_check`], restricted to coordinates accepted by `keep(input, index)`.
pub fn grad_check_filtered<F, K>(f: F, inputs: &[Tensor<f64>], cfg: &GradCheckConfig, keep: K) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    K: Fn(usize, usize) -> bool,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).data()[0])
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let candidates: Vec<usize> = (0..input.len()).filter(|&j| keep(i, j)).collect();
        let picked: Vec<usize> = if candidates.len() <= cfg.max_coords {
            candidates
        } else {
            sample(&mut rng, candidates.len(), cfg.max_coords).into_iter().map(|k| candidates[k]).collect()
        };
        let analytic = grads.get_or_zeros(vars[i], input.shape());
        for j in picked {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + cfg.eps;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - cfg.eps;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.eps);
            let a = analytic.data()[j];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((i, j));
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
