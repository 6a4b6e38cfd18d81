//! Patch lifting and annihilation filterbanks.
//!
//! At every lattice point `s` the `M x M` patches of the `N` coil images
//! form the columns of `Gamma_s` (`M^2 x N`). Null-space vectors of that
//! matrix give two kinds of annihilating filters: a left vector `u`
//! (length `M^2`) applied to each coil's patch separately, and a right
//! vector `v` (length `N`) combining coils at each patch position.

mod filterbank;
mod gram;

pub use filterbank::{
    apply_filterbank, apply_filterbank_conv, build_filterbank, build_filterbank_field,
    build_filterbank_with, Filterbank, FilterbankField,
};
pub use gram::{gram_operator, GramOperator};

use crate::error::{Error, Result};
use crate::mrisim::CoilImageSet;
use crate::numkernel::{ComplexMatrix, C64};

pub const DEFAULT_PATCH_SIZE: usize = 5;

/// Symmetric (edge-repeating) reflection of `i` into `0..n`.
#[inline]
pub fn mirror_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut j = i.rem_euclid(period);
    if j >= n {
        j = period - 1 - j;
    }
    j as usize
}

/// Pixel indices (row-major, into one coil image) of the `M x M` patch
/// centred at `(sr, sc)`, row-major within the patch, mirror padded.
pub(crate) fn patch_indices(sr: usize, sc: usize, m: usize, rows: usize, cols: usize) -> Vec<usize> {
    let h = (m / 2) as isize;
    let mut idx = Vec::with_capacity(m * m);
    for dy in -h..=h {
        let r = mirror_index(sr as isize + dy, rows);
        for dx in -h..=h {
            let c = mirror_index(sc as isize + dx, cols);
            idx.push(r * cols + c);
        }
    }
    idx
}

pub(crate) fn check_patch_size(m: usize) -> Result<()> {
    if m < 3 || m % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "patch size {m} must be odd and at least 3"
        )));
    }
    Ok(())
}

/// `Gamma_s`: one column per coil, each the vectorised patch around `center`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMatrix {
    pub mat: ComplexMatrix,
    pub center: (usize, usize),
    pub patch_size: usize,
}

impl PatchMatrix {
    pub fn n_coils(&self) -> usize {
        self.mat.cols()
    }

    /// Vertical concatenation of the coil patches, `p_s`.
    pub fn stacked(&self) -> Vec<C64> {
        let mut v = Vec::with_capacity(self.mat.rows() * self.mat.cols());
        for c in 0..self.mat.cols() {
            v.extend(self.mat.column(c));
        }
        v
    }
}

pub fn extract_patch_matrix(
    gamma: &CoilImageSet,
    center: (usize, usize),
    patch_size: usize,
) -> Result<PatchMatrix> {
    check_patch_size(patch_size)?;
    let (rows, cols) = gamma.shape();
    if center.0 >= rows || center.1 >= cols {
        return Err(Error::InvalidArgument(format!(
            "patch center {center:?} outside {rows}x{cols}"
        )));
    }
    let idx = patch_indices(center.0, center.1, patch_size, rows, cols);
    let n = gamma.n_coils();
    let mat = ComplexMatrix::from_fn(idx.len(), n, |k, i| gamma.coil(i).data()[idx[k]]);
    Ok(PatchMatrix {
        mat,
        center,
        patch_size,
    })
}

/// Lattice of patch centres with the given stride.
pub fn lattice(rows: usize, cols: usize, stride: usize) -> Vec<(usize, usize)> {
    let stride = stride.max(1);
    let mut pts = Vec::new();
    for r in (0..rows).step_by(stride) {
        for c in (0..cols).step_by(stride) {
            pts.push((r, c));
        }
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::{svd, ComplexImage};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mirror_is_symmetric_padding() {
        assert_eq!(mirror_index(-1, 5), 0);
        assert_eq!(mirror_index(-2, 5), 1);
        assert_eq!(mirror_index(5, 5), 4);
        assert_eq!(mirror_index(6, 5), 3);
        assert_eq!(mirror_index(2, 5), 2);
        assert_eq!(mirror_index(-12, 5), 1);
        assert_eq!(mirror_index(12, 5), 2);
    }

    #[test]
    fn flat_region_gives_rank_one_columns() {
        let c = [C64::new(1.5, 0.0), C64::new(-0.5, 2.0)];
        let g = CoilImageSet::new(
            c.iter()
                .map(|&v| ComplexImage::from_fn(8, 8, |_, _| v))
                .collect(),
        )
        .unwrap();
        let p = extract_patch_matrix(&g, (3, 4), 3).unwrap();
        assert_eq!((p.mat.rows(), p.mat.cols()), (9, 2));
        for k in 0..9 {
            assert_eq!(p.mat.get(k, 0), c[0]);
            assert_eq!(p.mat.get(k, 1), c[1]);
        }
        let d = svd(&p.mat).unwrap();
        assert!(d.s[1] < 1e-12);
    }

    #[test]
    fn shape_is_m_squared_by_n() {
        let g = CoilImageSet::zeros(12, 20, 20);
        let p = extract_patch_matrix(&g, (0, 19), 5).unwrap();
        assert_eq!((p.mat.rows(), p.mat.cols()), (25, 12));
    }

    #[test]
    fn rejects_even_patch_and_outside_center() {
        let g = CoilImageSet::zeros(2, 8, 8);
        assert!(extract_patch_matrix(&g, (1, 1), 4).is_err());
        assert!(extract_patch_matrix(&g, (1, 1), 1).is_err());
        assert!(extract_patch_matrix(&g, (8, 1), 3).is_err());
    }

    #[test]
    fn constructed_rank_two_patches() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (rows, cols, n) = (16, 16, 5);
        let bases: Vec<ComplexImage> = (0..2)
            .map(|_| {
                ComplexImage::from_fn(rows, cols, |_, _| {
                    C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
                })
            })
            .collect();
        let mix: Vec<[C64; 2]> = (0..n)
            .map(|_| {
                [
                    C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                    C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                ]
            })
            .collect();
        let coils = mix
            .iter()
            .map(|w| {
                ComplexImage::from_fn(rows, cols, |r, c| w[0] * bases[0].get(r, c) + w[1] * bases[1].get(r, c))
            })
            .collect();
        let g = CoilImageSet::new(coils).unwrap();
        for &s in &[(0, 0), (7, 9), (15, 3)] {
            let p = extract_patch_matrix(&g, s, 5).unwrap();
            let d = svd(&p.mat).unwrap();
            assert_eq!(d.s.iter().filter(|&&x| x > 1e-10).count(), 2);
        }
    }
}
