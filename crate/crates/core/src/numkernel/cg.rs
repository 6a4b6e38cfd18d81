use super::{dot, norm, C64};

pub const CG_DEFAULT_TOL: f64 = 1e-8;
pub const CG_DEFAULT_MAX_ITER: usize = 200;

/// Outcome of a conjugate-gradient solve.
///
/// Non-convergence is reported, not raised: `x` is then the last iterate,
/// which has the smallest energy-norm error of all iterates.
#[derive(Debug, Clone)]
pub struct CgReport {
    pub x: Vec<C64>,
    pub iterations: usize,
    /// Final relative residual `||A x - b|| / ||b||`.
    pub residual: f64,
    pub converged: bool,
    /// Relative residual after each iteration, starting with the initial guess.
    pub history: Vec<f64>,
}

/// Solves `A x = rhs` for Hermitian positive (semi)definite `A`, starting from zero.
pub fn cg_solve<F>(apply_op: F, rhs: &[C64], tol: f64, max_iter: usize) -> CgReport
where
    F: Fn(&[C64]) -> Vec<C64>,
{
    let x0 = vec![C64::new(0.0, 0.0); rhs.len()];
    cg_solve_from(apply_op, rhs, x0, tol, max_iter)
}

/// Warm-started variant of [`cg_solve`].
pub fn cg_solve_from<F>(apply_op: F, rhs: &[C64], x0: Vec<C64>, tol: f64, max_iter: usize) -> CgReport
where
    F: Fn(&[C64]) -> Vec<C64>,
{
    assert_eq!(rhs.len(), x0.len(), "initial guess and rhs lengths differ");
    let b_norm = norm(rhs);
    if b_norm == 0.0 {
        let zero = vec![C64::new(0.0, 0.0); rhs.len()];
        return CgReport {
            x: zero,
            iterations: 0,
            residual: 0.0,
            converged: true,
            history: vec![0.0],
        };
    }

    let mut x = x0;
    let ax = apply_op(&x);
    let mut r: Vec<C64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut p = r.clone();
    let mut rs = dot(&r, &r).re;
    let mut history = vec![rs.sqrt() / b_norm];

    let mut res = history[0];
    let mut iterations = 0;

    while iterations < max_iter && res > tol {
        let ap = apply_op(&p);
        let pap = dot(&p, &ap).re;
        if !(pap > 0.0) {
            // direction in the null space of a semidefinite operator
            break;
        }
        let alpha = rs / pap;
        for (xi, pi) in x.iter_mut().zip(&p) {
            *xi += pi * alpha;
        }
        for (ri, api) in r.iter_mut().zip(&ap) {
            *ri -= api * alpha;
        }
        let rs_new = dot(&r, &r).re;
        iterations += 1;
        res = rs_new.sqrt() / b_norm;
        history.push(res);
        let beta = rs_new / rs;
        rs = rs_new;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + *pi * beta;
        }
    }

    CgReport {
        x,
        iterations,
        residual: res,
        converged: res <= tol,
        history,
    }
}
