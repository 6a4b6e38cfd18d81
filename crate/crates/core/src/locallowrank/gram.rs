use super::{patch_indices, FilterbankField};
use crate::error::Result;
use crate::mrisim::CoilImageSet;
use crate::numkernel::C64;

/// `G = sum_s P_s^H Q_s^H Q_s P_s` as a linear map on coil stacks.
///
/// Banks made only of inter-coil (right) filters act pixelwise, so for those
/// the operator collapses to one `N x N` Hermitian matrix per pixel; banks
/// with intra-coil filters fall back to scatter/gather over patches.
#[derive(Debug, Clone)]
pub enum GramOperator {
    Pixelwise {
        n_coils: usize,
        rows: usize,
        cols: usize,
        /// row-major `N x N` block per pixel, `out_b = sum_a gamma_a H_ab`
        blocks: Vec<C64>,
    },
    Patchwise {
        field: FilterbankField,
        indices: Vec<Vec<usize>>,
    },
}

pub fn gram_operator(field: &FilterbankField) -> GramOperator {
    if field.banks.iter().all(|b| b.left_filters().is_empty()) {
        GramOperator::pixelwise(field)
    } else {
        GramOperator::patchwise(field)
    }
}

impl GramOperator {
    pub fn pixelwise(field: &FilterbankField) -> Self {
        let (rows, cols, n) = (field.rows, field.cols, field.n_coils);
        let mut blocks = vec![C64::new(0.0, 0.0); rows * cols * n * n];
        let mut outer = vec![C64::new(0.0, 0.0); n * n];
        for bank in &field.banks {
            outer.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
            for v in bank.right_filters() {
                for a in 0..n {
                    for b in 0..n {
                        outer[a * n + b] += v[a] * v[b].conj();
                    }
                }
            }
            for p in patch_indices(bank.center.0, bank.center.1, bank.patch_size, rows, cols) {
                let blk = &mut blocks[p * n * n..(p + 1) * n * n];
                for (d, o) in blk.iter_mut().zip(&outer) {
                    *d += o;
                }
            }
            assert!(
                bank.left_filters().is_empty(),
                "pixelwise Gram requires inter-coil filters only"
            );
        }
        GramOperator::Pixelwise {
            n_coils: n,
            rows,
            cols,
            blocks,
        }
    }

    pub fn patchwise(field: &FilterbankField) -> Self {
        let indices = field
            .banks
            .iter()
            .map(|b| patch_indices(b.center.0, b.center.1, b.patch_size, field.rows, field.cols))
            .collect();
        GramOperator::Patchwise {
            field: field.clone(),
            indices,
        }
    }

    /// Applies `G` to a coil-major flattened stack.
    pub fn apply_flat(&self, x: &[C64]) -> Vec<C64> {
        match self {
            GramOperator::Pixelwise {
                n_coils,
                rows,
                cols,
                blocks,
            } => {
                let n = *n_coils;
                let px = rows * cols;
                let mut out = vec![C64::new(0.0, 0.0); x.len()];
                let mut g = vec![C64::new(0.0, 0.0); n];
                for p in 0..px {
                    for a in 0..n {
                        g[a] = x[a * px + p];
                    }
                    let blk = &blocks[p * n * n..(p + 1) * n * n];
                    for b in 0..n {
                        let mut acc = C64::new(0.0, 0.0);
                        for a in 0..n {
                            acc += g[a] * blk[a * n + b];
                        }
                        out[b * px + p] = acc;
                    }
                }
                out
            }
            GramOperator::Patchwise { field, indices } => {
                let n = field.n_coils;
                let px = field.rows * field.cols;
                let m2 = field.patch_size * field.patch_size;
                let mut out = vec![C64::new(0.0, 0.0); x.len()];
                let mut patch = vec![C64::new(0.0, 0.0); m2 * n];
                let mut w = vec![C64::new(0.0, 0.0); m2];
                for (bank, idx) in field.banks.iter().zip(indices) {
                    for i in 0..n {
                        for (k, &p) in idx.iter().enumerate() {
                            patch[k * n + i] = x[i * px + p];
                        }
                    }
                    for u in bank.left_filters() {
                        for i in 0..n {
                            let y: C64 = (0..m2).map(|k| u[k] * patch[k * n + i]).sum();
                            for (k, &p) in idx.iter().enumerate() {
                                out[i * px + p] += u[k].conj() * y;
                            }
                        }
                    }
                    for v in bank.right_filters() {
                        for k in 0..m2 {
                            w[k] = (0..n).map(|j| patch[k * n + j] * v[j]).sum();
                        }
                        for j in 0..n {
                            let vc = v[j].conj();
                            for (k, &p) in idx.iter().enumerate() {
                                out[j * px + p] += w[k] * vc;
                            }
                        }
                    }
                }
                out
            }
        }
    }

    pub fn apply(&self, gamma: &CoilImageSet) -> Result<CoilImageSet> {
        let out = self.apply_flat(&gamma.to_flat());
        CoilImageSet::from_flat(gamma.n_coils(), gamma.rows(), gamma.cols(), &out)
    }

    /// `<G x, x>`, real for the Hermitian operator.
    pub fn quadratic_form(&self, x: &[C64]) -> f64 {
        crate::numkernel::dot(x, &self.apply_flat(x)).re
    }
}
