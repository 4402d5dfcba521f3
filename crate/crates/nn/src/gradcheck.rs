//! Central finite-difference checks for graph-built functions.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::graph::{Graph, Mode, Var};
use crate::tensor::Tensor;

/// Denominator floor for the elementwise relative error, so entries whose
/// true gradient is numerically zero are compared absolutely.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub entries_checked: usize,
}

/// `|a - n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares reverse-mode gradients of `build` against central differences
/// with the given step. The scalar objective is `Σ r ⊙ output` for a random
/// projection `r`, so non-scalar outputs are covered too.
pub fn check_gradients<R, F>(
    inputs: &[Tensor<f64>],
    mode: Mode,
    step: f64,
    rng: &mut R,
    build: F,
) -> Result<GradCheckReport>
where
    R: Rng + ?Sized,
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<(Graph<f64>, Vec<Var>, Var)> {
        let mut g = Graph::new(mode);
        let vars: Vec<Var> = xs.iter().map(|x| g.leaf(x.clone(), true)).collect();
        let out = build(&mut g, &vars)?;
        Ok((g, vars, out))
    };
    let (g, vars, out) = eval(inputs)?;
    let proj = Tensor::from_fn(g.value(out).shape(), |_| StandardNormal.sample(rng));
    let objective = |t: &Tensor<f64>| -> f64 {
        t.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
    };
    let grads = g.backward(&[(out, proj.clone())]);
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        entries_checked: 0,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        for j in 0..inputs[i].numel() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + step;
            let (gp, _, op) = eval(&work)?;
            let fp = objective(gp.value(op));
            work[i].data_mut()[j] = orig - step;
            let (gm, _, om) = eval(&work)?;
            let fm = objective(gm.value(om));
            work[i].data_mut()[j] = orig;
            let numeric = (fp - fm) / (2.0 * step);
            let err = relative_error(analytic.data()[j], numeric);
            report.max_relative_error = report.max_relative_error.max(err);
            report.entries_checked += 1;
        }
    }
    Ok(report)
}
