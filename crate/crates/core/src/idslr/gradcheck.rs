//! Central finite-difference verification of reverse-mode gradients.
//!
//! ReLU networks are piecewise smooth. A stencil `p +- h e_i` that straddles
//! an activation kink measures a secant, not the gradient, so callers
//! evaluate the loss with the ReLU pattern of the base point frozen
//! ([`super::Tape::with_frozen_relu`]). Off the kinks this is the plain loss;
//! `kink_params` counts the parameters whose stencil needed the freeze.

use rayon::prelude::*;

use crate::error::Result;

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub kink_params: usize,
    /// Per-parameter relative errors, aligned with the checked indices.
    pub rel_err: Vec<f64>,
}

/// Relative error `|fd - ad| / max(|fd|, |ad|, floor)`. The floor,
/// `1e-6 * max |ad|`, keeps parameters with numerically zero gradient from
/// dividing noise by noise.
pub fn relative_error(fd: f64, ad: f64, floor: f64) -> f64 {
    (fd - ad).abs() / fd.abs().max(ad.abs()).max(floor).max(f64::MIN_POSITIVE)
}

/// `eval(p)` returns the loss at `p` and the number of frozen ReLU entries
/// whose sign disagreed with the frozen pattern.
pub fn gradcheck<F>(params: &[f64], analytic: &[f64], indices: &[usize], step: f64, eval: F) -> Result<GradCheck>
where
    F: Fn(&[f64]) -> Result<(f64, usize)> + Sync,
{
    let floor = 1e-6 * analytic.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let results: Vec<(f64, bool)> = indices
        .par_iter()
        .map(|&i| {
            let mut p = params.to_vec();
            p[i] = params[i] + step;
            let (up, f1) = eval(&p)?;
            p[i] = params[i] - step;
            let (dn, f2) = eval(&p)?;
            let fd = (up - dn) / (2.0 * step);
            Ok((relative_error(fd, analytic[i], floor), f1 + f2 > 0))
        })
        .collect::<Result<_>>()?;
    let mut report = GradCheck {
        checked: indices.len(),
        max_rel_err: 0.0,
        worst_index: indices.first().copied().unwrap_or(0),
        kink_params: results.iter().filter(|r| r.1).count(),
        rel_err: results.iter().map(|r| r.0).collect(),
    };
    for (&i, &(e, _)) in indices.iter().zip(&results) {
        if e > report.max_rel_err {
            report.max_rel_err = e;
            report.worst_index = i;
        }
    }
    Ok(report)
}
