use rayon::prelude::*;

use super::{check_patch_size, extract_patch_matrix, lattice, PatchMatrix};
use crate::error::{Error, Result};
use crate::mrisim::CoilImageSet;
use crate::numkernel::{eigh, svd, ComplexMatrix, C64};

/// Annihilation operator `Q_s` at one lattice point, stored in factored form.
///
/// Each left filter `u` contributes `N` rows (`u` replicated block-diagonally
/// over the coils, so row `i` evaluates `u . P_s(gamma_i)`); each right
/// filter `v` contributes `M^2` rows, row `k` being
/// `[v(1) e_k | ... | v(N) e_k]`. With one pair that is `N + M^2` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Filterbank {
    pub center: (usize, usize),
    pub patch_size: usize,
    pub n_coils: usize,
    pub rank_used: usize,
    left: Vec<Vec<C64>>,
    right: Vec<Vec<C64>>,
}

impl Filterbank {
    /// Bank from explicit filters; `left` entries have length `M^2`, `right` entries `N`.
    pub fn from_filters(
        center: (usize, usize),
        patch_size: usize,
        n_coils: usize,
        left: Vec<Vec<C64>>,
        right: Vec<Vec<C64>>,
    ) -> Result<Self> {
        check_patch_size(patch_size)?;
        let m2 = patch_size * patch_size;
        if left.iter().any(|u| u.len() != m2) || right.iter().any(|v| v.len() != n_coils) {
            return Err(Error::DimensionMismatch(format!(
                "filters must have length {m2} (left) and {n_coils} (right)"
            )));
        }
        Ok(Self {
            center,
            patch_size,
            n_coils,
            rank_used: 0,
            left,
            right,
        })
    }

    pub fn left_filters(&self) -> &[Vec<C64>] {
        &self.left
    }

    pub fn right_filters(&self) -> &[Vec<C64>] {
        &self.right
    }

    pub fn row_count(&self) -> usize {
        self.left.len() * self.n_coils + self.right.len() * self.patch_size * self.patch_size
    }

    /// Only the intra-coil rows.
    pub fn intra_only(&self) -> Self {
        Self {
            right: Vec::new(),
            ..self.clone()
        }
    }

    /// `Q_s` materialised, `row_count() x N M^2`, acting on `p_s`.
    pub fn matrix(&self) -> ComplexMatrix {
        let m2 = self.patch_size * self.patch_size;
        let n = self.n_coils;
        let mut q = ComplexMatrix::zeros(self.row_count().max(1), n * m2);
        let mut row = 0;
        for u in &self.left {
            for i in 0..n {
                for (k, &uk) in u.iter().enumerate() {
                    q.set(row, i * m2 + k, uk);
                }
                row += 1;
            }
        }
        for v in &self.right {
            for k in 0..m2 {
                for (j, &vj) in v.iter().enumerate() {
                    q.set(row, j * m2 + k, vj);
                }
                row += 1;
            }
        }
        q
    }

    /// `||Q_s p_s||^2` evaluated on the patch matrix directly.
    pub fn residual_sqr(&self, patch: &PatchMatrix) -> f64 {
        let g = &patch.mat;
        let (m2, n) = (g.rows(), g.cols());
        let mut acc = 0.0;
        for u in &self.left {
            for i in 0..n {
                let mut y = C64::new(0.0, 0.0);
                for k in 0..m2 {
                    y += u[k] * g.get(k, i);
                }
                acc += y.norm_sqr();
            }
        }
        for v in &self.right {
            for k in 0..m2 {
                let row = g.row(k);
                let w: C64 = row.iter().zip(v).map(|(a, b)| a * b).sum();
                acc += w.norm_sqr();
            }
        }
        acc
    }
}

/// Builds `Q_s` from the smallest singular pair of `Gamma_s` (one `u`, one `v`).
pub fn build_filterbank(patch: &PatchMatrix, r: usize) -> Result<Filterbank> {
    build_filterbank_with(patch, r, 1)
}

/// Builds `Q_s` from `multiplicity` null-space directions beyond rank `r`,
/// taken from the smallest singular value upward. Left filters are
/// conjugated eigenvectors of `Gamma_s Gamma_s^H` (smallest eigenvalues
/// first), so `||u_j Gamma_s||` is the matching singular value; the thin SVD
/// leaves those columns arbitrary when singular values vanish. Right filters
/// are `v_j = V[:, j]` with `Gamma_s v_j = s_j U[:, j]`. All have unit norm.
pub fn build_filterbank_with(patch: &PatchMatrix, r: usize, multiplicity: usize) -> Result<Filterbank> {
    let (m2, n) = (patch.mat.rows(), patch.mat.cols());
    let k = m2.min(n);
    if r < 1 || r >= k {
        return Err(Error::InvalidArgument(format!(
            "rank {r} outside 1..{k} for a {m2}x{n} patch matrix"
        )));
    }
    if multiplicity < 1 || multiplicity > k - r {
        return Err(Error::InvalidArgument(format!(
            "multiplicity {multiplicity} outside 1..={}",
            k - r
        )));
    }
    let d = svd(&patch.mat)?;
    let (_, left_vecs) = eigh(&patch.mat.matmul(&patch.mat.adjoint()))?;
    let (left, right) = (0..multiplicity)
        .map(|t| {
            let u = (0..m2).map(|row| left_vecs.get(row, m2 - 1 - t).conj()).collect::<Vec<_>>();
            let v = d.v.column(k - 1 - t);
            (u, v)
        })
        .unzip();
    Ok(Filterbank {
        center: patch.center,
        patch_size: patch.patch_size,
        n_coils: n,
        rank_used: r,
        left,
        right,
    })
}

/// One filterbank per lattice point.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterbankField {
    pub rows: usize,
    pub cols: usize,
    pub n_coils: usize,
    pub patch_size: usize,
    pub stride: usize,
    pub banks: Vec<Filterbank>,
}

impl FilterbankField {
    pub fn new(
        rows: usize,
        cols: usize,
        n_coils: usize,
        patch_size: usize,
        stride: usize,
        banks: Vec<Filterbank>,
    ) -> Result<Self> {
        check_patch_size(patch_size)?;
        for b in &banks {
            if b.patch_size != patch_size || b.n_coils != n_coils {
                return Err(Error::DimensionMismatch(
                    "filterbank geometry differs from its field".into(),
                ));
            }
            if b.center.0 >= rows || b.center.1 >= cols {
                return Err(Error::DimensionMismatch(format!(
                    "bank centre {:?} outside {rows}x{cols}",
                    b.center
                )));
            }
        }
        Ok(Self {
            rows,
            cols,
            n_coils,
            patch_size,
            stride,
            banks,
        })
    }

    /// Field with no filters, i.e. a zero penalty.
    pub fn empty(rows: usize, cols: usize, n_coils: usize, patch_size: usize) -> Self {
        Self {
            rows,
            cols,
            n_coils,
            patch_size,
            stride: 1,
            banks: Vec::new(),
        }
    }

    pub(crate) fn check_against(&self, gamma: &CoilImageSet) -> Result<()> {
        if gamma.shape() != (self.rows, self.cols) || gamma.n_coils() != self.n_coils {
            return Err(Error::DimensionMismatch(format!(
                "filterbank field is {}x{}x{}, images are {}x{}x{}",
                self.n_coils,
                self.rows,
                self.cols,
                gamma.n_coils(),
                gamma.rows(),
                gamma.cols()
            )));
        }
        Ok(())
    }
}

/// Single-pair annihilation banks built from `gamma` at every lattice point.
pub fn build_filterbank_field(
    gamma: &CoilImageSet,
    patch_size: usize,
    stride: usize,
    r: usize,
) -> Result<FilterbankField> {
    check_patch_size(patch_size)?;
    let (rows, cols) = gamma.shape();
    let banks = lattice(rows, cols, stride)
        .into_par_iter()
        .map(|s| build_filterbank(&extract_patch_matrix(gamma, s, patch_size)?, r))
        .collect::<Result<Vec<_>>>()?;
    FilterbankField::new(rows, cols, gamma.n_coils(), patch_size, stride, banks)
}

/// Penalty `sum_s ||Q_s p_s(gamma)||^2` through the lifted patch matrices.
pub fn apply_filterbank(field: &FilterbankField, gamma: &CoilImageSet) -> Result<f64> {
    field.check_against(gamma)?;
    let mut total = 0.0;
    for bank in &field.banks {
        let patch = extract_patch_matrix(gamma, bank.center, bank.patch_size)?;
        total += bank.residual_sqr(&patch);
    }
    Ok(total)
}

/// Same penalty evaluated as spatially varying multichannel convolutions:
/// every row of `Q_s` becomes a flipped `M x M x N` filter `q` and the
/// output at `s` is `sum_i sum_t q_i(t) gamma_i(s - t)` on the mirror-padded
/// images.
pub fn apply_filterbank_conv(field: &FilterbankField, gamma: &CoilImageSet) -> Result<f64> {
    field.check_against(gamma)?;
    let (rows, cols) = (field.rows, field.cols);
    let m = field.patch_size;
    let h = (m / 2) as isize;
    let n = field.n_coils;
    let m2 = m * m;
    let mut total = 0.0;
    for bank in &field.banks {
        let q = bank.matrix();
        let (sr, sc) = (bank.center.0 as isize, bank.center.1 as isize);
        for row in 0..bank.row_count() {
            let taps = q.row(row);
            let mut out = C64::new(0.0, 0.0);
            for i in 0..n {
                let img = gamma.coil(i);
                for ty in -h..=h {
                    for tx in -h..=h {
                        // flipped filter: q_i(t) = row entry at patch offset -t
                        let k = ((-ty + h) as usize) * m + (-tx + h) as usize;
                        let tap = taps[i * m2 + k];
                        if tap.norm_sqr() == 0.0 {
                            continue;
                        }
                        let r = super::mirror_index(sr - ty, rows);
                        let c = super::mirror_index(sc - tx, cols);
                        out += tap * img.get(r, c);
                    }
                }
            }
            total += out.norm_sqr();
        }
    }
    Ok(total)
}
