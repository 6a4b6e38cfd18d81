//! Locally low-rank (CLEAR) reconstruction
//! `min ||A(Gamma) - B||^2 + lambda sum_s ||Gamma_s||_*`, solved by
//! iteratively reweighted least squares.
//!
//! Each round majorises the smoothed nuclear norm
//! `tr((Gamma_s^H Gamma_s + eps I)^(1/2))` at the current iterate by the
//! quadratic `1/2 ||Gamma_s W_s||_F^2 + const`, with
//! `W_s = V diag((sigma^2 + eps)^(-1/4)) V^H`, and minimises the resulting
//! penalised least-squares problem with CG. The columns of `W_s` are
//! inter-coil annihilation filters, so the penalty is a
//! [`FilterbankField`] and its Gram operator is pixelwise.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::locallowrank::{
    extract_patch_matrix, gram_operator, lattice, Filterbank, FilterbankField, DEFAULT_PATCH_SIZE,
};
use crate::mrisim::{adjoint, forward, normal_apply, CoilImageSet, KSpaceSet};
use crate::numkernel::{cg_solve_from, eigh, svd, CgReport, CG_DEFAULT_MAX_ITER, CG_DEFAULT_TOL, C64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClearConfig {
    /// Regularisation weight. Multiplied by `max |A^H B|` when
    /// `lambda_relative` is set, so the same value works at any signal scale.
    pub lambda: f64,
    pub lambda_relative: bool,
    pub patch_size: usize,
    pub n_outer: usize,
    /// Initial smoothing; `None` picks `(largest patch singular value)^2 / 100`.
    pub eps0: Option<f64>,
    pub eps_decay: f64,
    /// Smoothing floor; `None` picks `1e-9 * eps0`.
    pub eps_min: Option<f64>,
    /// Energy fraction defining the reported numerical rank.
    pub rank_rule: f64,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    pub stride: usize,
}

impl Default for ClearConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            lambda_relative: true,
            patch_size: DEFAULT_PATCH_SIZE,
            n_outer: 15,
            eps0: None,
            eps_decay: 2.0,
            eps_min: None,
            rank_rule: 0.95,
            cg_tol: CG_DEFAULT_TOL,
            cg_max_iter: CG_DEFAULT_MAX_ITER,
            stride: 1,
        }
    }
}

impl ClearConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("clear: {m}")));
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad("lambda must be finite and >= 0");
        }
        if self.patch_size < 3 || self.patch_size % 2 == 0 {
            return bad("patch_size must be odd and >= 3");
        }
        if self.eps0.is_some_and(|e| !(e > 0.0)) || self.eps_min.is_some_and(|e| !(e > 0.0)) {
            return bad("eps0 and eps_min must be > 0");
        }
        if !(self.eps_decay > 1.0) {
            return bad("eps_decay must exceed 1");
        }
        if !(self.rank_rule > 0.0 && self.rank_rule < 1.0) {
            return bad("rank_rule must lie in (0, 1)");
        }
        if !(self.cg_tol > 0.0) || self.cg_max_iter == 0 {
            return bad("cg_tol must be > 0 and cg_max_iter >= 1");
        }
        if self.stride == 0 {
            return bad("stride must be >= 1");
        }
        Ok(())
    }

    /// Absolute regularisation weight for this data set.
    pub fn resolve_lambda(&self, ksp: &KSpaceSet) -> f64 {
        if self.lambda_relative {
            let zf = adjoint(ksp);
            let peak = zf
                .coils()
                .iter()
                .flat_map(|c| c.data().iter().map(|z| z.norm()))
                .fold(0.0, f64::max);
            self.lambda * peak
        } else {
            self.lambda
        }
    }
}

/// Diagnostics for one outer round.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceEntry {
    pub eps: f64,
    /// Smoothed objective `||A Gamma - B||^2 + lambda sum_s tr((Gamma_s^H Gamma_s + eps I)^(1/2))`
    /// at the new iterate, using this round's `eps`.
    pub surrogate: f64,
    pub data_residual: f64,
    /// Active quadratic penalty `sum_s ||Gamma_s W_s||^2` at the new iterate.
    pub penalty: f64,
    pub cg_iterations: usize,
    pub cg_residual: f64,
    pub cg_converged: bool,
    /// Mean numerical rank of the patch matrices under `rank_rule`.
    pub mean_rank: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ClearTrace {
    pub lambda: f64,
    pub initial_surrogate: f64,
    pub entries: Vec<TraceEntry>,
}

impl ClearTrace {
    /// Largest increase between consecutive surrogate values (0 when monotone).
    pub fn max_increase(&self) -> f64 {
        let mut prev = self.initial_surrogate;
        let mut worst: f64 = 0.0;
        for e in &self.entries {
            worst = worst.max(e.surrogate - prev);
            prev = e.surrogate;
        }
        worst
    }

    pub fn is_monotone(&self, slack: f64) -> bool {
        self.max_increase() <= slack
    }
}

fn data_residual(gamma: &CoilImageSet, ksp: &KSpaceSet) -> Result<f64> {
    let ag = forward(gamma, &ksp.mask)?;
    Ok(ag
        .coils
        .iter()
        .zip(&ksp.coils)
        .map(|(a, b)| {
            a.data()
                .iter()
                .zip(b.data())
                .zip(ksp.mask.grid())
                .map(|((x, y), &m)| if m == 1 { (x - y).norm_sqr() } else { 0.0 })
                .sum::<f64>()
        })
        .sum())
}

fn check_shapes(gamma: &CoilImageSet, ksp: &KSpaceSet) -> Result<()> {
    if gamma.shape() != ksp.shape() || gamma.n_coils() != ksp.n_coils() {
        return Err(Error::DimensionMismatch(format!(
            "images {}x{:?} vs k-space {}x{:?}",
            gamma.n_coils(),
            gamma.shape(),
            ksp.n_coils(),
            ksp.shape()
        )));
    }
    Ok(())
}

fn patch_singular_values(gamma: &CoilImageSet, cfg: &ClearConfig) -> Result<Vec<Vec<f64>>> {
    let (rows, cols) = gamma.shape();
    lattice(rows, cols, cfg.stride)
        .into_par_iter()
        .map(|s| Ok(svd(&extract_patch_matrix(gamma, s, cfg.patch_size)?.mat)?.s))
        .collect()
}

/// `||A(Gamma) - B||^2 + lambda sum_s ||Gamma_s||_*` over the configured lattice.
pub fn nuclear_objective(gamma: &CoilImageSet, ksp: &KSpaceSet, cfg: &ClearConfig) -> Result<f64> {
    check_shapes(gamma, ksp)?;
    let lambda = cfg.resolve_lambda(ksp);
    let nuc: f64 = patch_singular_values(gamma, cfg)?
        .iter()
        .map(|s| s.iter().sum::<f64>())
        .sum();
    Ok(data_residual(gamma, ksp)? + lambda * nuc)
}

/// `||A(Gamma) - B||^2 + lambda sum_s tr((Gamma_s^H Gamma_s + eps I)^(1/2))`.
pub fn smoothed_objective(
    gamma: &CoilImageSet,
    ksp: &KSpaceSet,
    lambda: f64,
    cfg: &ClearConfig,
    eps: f64,
) -> Result<f64> {
    let n = gamma.n_coils();
    let smooth: f64 = patch_singular_values(gamma, cfg)?
        .iter()
        .map(|s| {
            let zeros = n - s.len();
            s.iter().map(|x| (x * x + eps).sqrt()).sum::<f64>() + zeros as f64 * eps.sqrt()
        })
        .sum();
    Ok(data_residual(gamma, ksp)? + lambda * smooth)
}

/// IRLS weights at the current iterate as a field of inter-coil filters
/// `v_k = V[:, k] (sigma_k^2 + eps)^(-1/4)`, so that each bank's penalty is
/// `||Gamma_s W_s||_F^2`.
pub fn derive_weights(gamma: &CoilImageSet, cfg: &ClearConfig, eps: f64) -> Result<FilterbankField> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps {eps} must be > 0")));
    }
    let (rows, cols) = gamma.shape();
    let n = gamma.n_coils();
    let banks = lattice(rows, cols, cfg.stride)
        .into_par_iter()
        .map(|s| {
            let patch = extract_patch_matrix(gamma, s, cfg.patch_size)?;
            let gram = patch.mat.adjoint().matmul(&patch.mat);
            let (vals, vecs) = eigh(&gram)?;
            let right = (0..n)
                .map(|k| {
                    let w = (vals[k].max(0.0) + eps).powf(-0.25);
                    vecs.column(k).into_iter().map(|z| z * w).collect()
                })
                .collect();
            let mut bank = Filterbank::from_filters(s, cfg.patch_size, n, Vec::new(), right)?;
            bank.rank_used = numerical_rank(&vals, cfg.rank_rule);
            Ok(bank)
        })
        .collect::<Result<Vec<_>>>()?;
    FilterbankField::new(rows, cols, n, cfg.patch_size, cfg.stride, banks)
}

/// Smallest `r` whose leading eigenvalues hold `tau` of the energy.
fn numerical_rank(eigvals: &[f64], tau: f64) -> usize {
    let total: f64 = eigvals.iter().map(|v| v.max(0.0)).sum();
    if total == 0.0 {
        return 0;
    }
    let mut acc = 0.0;
    for (i, v) in eigvals.iter().enumerate() {
        acc += v.max(0.0);
        if acc >= tau * total {
            return i + 1;
        }
    }
    eigvals.len()
}

/// Solves `(A^H A + lambda/2 G) Gamma = A^H B` by CG from `init`, where `G` is
/// the Gram operator of `bank`. The factor 1/2 comes from the majoriser.
pub fn irls_step(
    ksp: &KSpaceSet,
    bank: &FilterbankField,
    cfg: &ClearConfig,
    init: &CoilImageSet,
) -> Result<(CoilImageSet, CgReport)> {
    let lambda = cfg.resolve_lambda(ksp);
    irls_step_with_lambda(ksp, bank, lambda, cfg, init)
}

fn irls_step_with_lambda(
    ksp: &KSpaceSet,
    bank: &FilterbankField,
    lambda: f64,
    cfg: &ClearConfig,
    init: &CoilImageSet,
) -> Result<(CoilImageSet, CgReport)> {
    check_shapes(init, ksp)?;
    bank.check_against(init)?;
    let (rows, cols) = init.shape();
    let n = init.n_coils();
    let rhs = adjoint(ksp).to_flat();
    let g = gram_operator(bank);
    let half = 0.5 * lambda;
    let op = |x: &[C64]| {
        let mut y = normal_apply(x, &ksp.mask);
        if half > 0.0 && !bank.banks.is_empty() {
            for (yi, gi) in y.iter_mut().zip(g.apply_flat(x)) {
                *yi += gi * half;
            }
        }
        y
    };
    let rep = cg_solve_from(op, &rhs, init.to_flat(), cfg.cg_tol, cfg.cg_max_iter);
    let out = CoilImageSet::from_flat(n, rows, cols, &rep.x)?;
    Ok((out, rep))
}

/// Largest singular value over all lattice patches.
fn max_patch_singular_value(gamma: &CoilImageSet, cfg: &ClearConfig) -> Result<f64> {
    Ok(patch_singular_values(gamma, cfg)?
        .iter()
        .filter_map(|s| s.first().copied())
        .fold(0.0, f64::max))
}

/// Full IRLS alternation from the zero-filled image.
pub fn clear_reconstruct(ksp: &KSpaceSet, cfg: &ClearConfig) -> Result<(CoilImageSet, ClearTrace)> {
    cfg.validate()?;
    let lambda = cfg.resolve_lambda(ksp);
    let mut gamma = adjoint(ksp);
    let mut trace = ClearTrace {
        lambda,
        ..Default::default()
    };

    let eps0 = match cfg.eps0 {
        Some(e) => e,
        None => {
            let smax = max_patch_singular_value(&gamma, cfg)?;
            if smax == 0.0 {
                return Ok((gamma, trace));
            }
            smax * smax / 100.0
        }
    };
    let eps_min = cfg.eps_min.unwrap_or(1e-9 * eps0);
    let mut eps = eps0;
    trace.initial_surrogate = smoothed_objective(&gamma, ksp, lambda, cfg, eps)?;

    for _ in 0..cfg.n_outer {
        let field = derive_weights(&gamma, cfg, eps)?;
        let mean_rank =
            field.banks.iter().map(|b| b.rank_used as f64).sum::<f64>() / field.banks.len().max(1) as f64;
        let (next, rep) = irls_step_with_lambda(ksp, &field, lambda, cfg, &gamma)?;
        if !next.is_finite() {
            return Err(Error::Numerical("IRLS iterate became non-finite".into()));
        }
        gamma = next;
        let g = gram_operator(&field);
        let penalty = g.quadratic_form(&gamma.to_flat());
        trace.entries.push(TraceEntry {
            eps,
            surrogate: smoothed_objective(&gamma, ksp, lambda, cfg, eps)?,
            data_residual: data_residual(&gamma, ksp)?,
            penalty,
            cg_iterations: rep.iterations,
            cg_residual: rep.residual,
            cg_converged: rep.converged,
            mean_rank,
        });
        eps = (eps / cfg.eps_decay).max(eps_min);
    }
    Ok((gamma, trace))
}
