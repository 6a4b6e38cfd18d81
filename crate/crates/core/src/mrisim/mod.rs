//! Synthetic multicoil data and the undersampled Cartesian forward model
//! `b_i = S F gamma_i + n_i`.

mod mask;
mod phantom;

pub use mask::{default_center_lines, make_vd_mask, SamplingMask};
pub use phantom::{default_noise_sigma, make_phantom, Phantom, Tissue, CLASS_INTENSITY};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numkernel::{fft2_centered, ifft2_centered, ComplexImage, C64};

/// Stream ids keep the generators seeded from the same integer independent.
pub(crate) mod streams {
    pub const PHANTOM: u64 = 1;
    pub const COILS: u64 = 2;
    pub const MASK: u64 = 3;
    pub const NOISE: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const INIT: u64 = 6;
    pub const KMEANS: u64 = 7;
    pub const AUGMENT: u64 = 8;
}

pub(crate) fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stack of coil images `[gamma_1, ..., gamma_N]` sharing one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CoilImageSet {
    coils: Vec<ComplexImage>,
}

impl CoilImageSet {
    pub fn new(coils: Vec<ComplexImage>) -> Result<Self> {
        let first = coils
            .first()
            .ok_or_else(|| Error::InvalidArgument("coil set needs at least one coil".into()))?;
        let shape = first.shape();
        if let Some(bad) = coils.iter().find(|c| c.shape() != shape) {
            return Err(Error::DimensionMismatch(format!(
                "coil of shape {:?} in a {:?} set",
                bad.shape(),
                shape
            )));
        }
        Ok(Self { coils })
    }

    pub fn zeros(n_coils: usize, rows: usize, cols: usize) -> Self {
        Self {
            coils: (0..n_coils).map(|_| ComplexImage::zeros(rows, cols)).collect(),
        }
    }

    pub fn n_coils(&self) -> usize {
        self.coils.len()
    }

    pub fn rows(&self) -> usize {
        self.coils[0].rows()
    }

    pub fn cols(&self) -> usize {
        self.coils[0].cols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.coils[0].shape()
    }

    pub fn coils(&self) -> &[ComplexImage] {
        &self.coils
    }

    pub fn coils_mut(&mut self) -> &mut [ComplexImage] {
        &mut self.coils
    }

    pub fn coil(&self, i: usize) -> &ComplexImage {
        &self.coils[i]
    }

    /// Coil-major flattening, the layout used by the iterative solvers.
    pub fn to_flat(&self) -> Vec<C64> {
        let mut v = Vec::with_capacity(self.n_coils() * self.rows() * self.cols());
        for c in &self.coils {
            v.extend_from_slice(c.data());
        }
        v
    }

    pub fn from_flat(n_coils: usize, rows: usize, cols: usize, flat: &[C64]) -> Result<Self> {
        let px = rows * cols;
        if flat.len() != n_coils * px {
            return Err(Error::DimensionMismatch(format!(
                "{} samples for {n_coils} coils of {rows}x{cols}",
                flat.len()
            )));
        }
        let coils = flat
            .chunks(px)
            .map(|ch| ComplexImage::from_vec(rows, cols, ch.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(coils)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.coils.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn dot(&self, other: &Self) -> C64 {
        self.coils.iter().zip(&other.coils).map(|(a, b)| a.dot(b)).sum()
    }

    /// `self - other`, elementwise.
    pub fn sub(&self, other: &Self) -> Self {
        Self {
            coils: self
                .coils
                .iter()
                .zip(&other.coils)
                .map(|(a, b)| {
                    let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
                    ComplexImage::from_vec(a.rows(), a.cols(), data).expect("same shape")
                })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.coils.iter().all(|c| c.is_finite())
    }
}

/// Per-coil k-space samples with the mask they were acquired on.
#[derive(Debug, Clone, PartialEq)]
pub struct KSpaceSet {
    pub coils: Vec<ComplexImage>,
    pub mask: SamplingMask,
}

impl KSpaceSet {
    pub fn n_coils(&self) -> usize {
        self.coils.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.mask.shape()
    }
}

fn check_shape(gamma_shape: (usize, usize), mask: &SamplingMask) -> Result<()> {
    if gamma_shape != mask.shape() {
        return Err(Error::DimensionMismatch(format!(
            "images {:?} vs mask {:?}",
            gamma_shape,
            mask.shape()
        )));
    }
    Ok(())
}

/// `b_i = mask * F(gamma_i)`.
pub fn forward(gamma: &CoilImageSet, mask: &SamplingMask) -> Result<KSpaceSet> {
    check_shape(gamma.shape(), mask)?;
    let coils = gamma
        .coils()
        .iter()
        .map(|g| {
            let mut k = fft2_centered(g);
            mask.apply(&mut k);
            k
        })
        .collect();
    Ok(KSpaceSet {
        coils,
        mask: mask.clone(),
    })
}

/// `gamma_i = F^-1(mask * b_i)`, the exact adjoint of [`forward`].
pub fn adjoint(ksp: &KSpaceSet) -> CoilImageSet {
    let coils = ksp
        .coils
        .iter()
        .map(|k| {
            let mut masked = k.clone();
            ksp.mask.apply(&mut masked);
            ifft2_centered(&masked)
        })
        .collect();
    CoilImageSet { coils }
}

/// `A^H A`, i.e. `F^-1 mask F` per coil, on the coil-major flat layout.
pub fn normal_apply(flat: &[C64], mask: &SamplingMask) -> Vec<C64> {
    let (rows, cols) = mask.shape();
    let px = rows * cols;
    let mut out = Vec::with_capacity(flat.len());
    for chunk in flat.chunks(px) {
        let img = ComplexImage::from_vec(rows, cols, chunk.to_vec()).expect("chunk is one coil");
        let mut k = fft2_centered(&img);
        mask.apply(&mut k);
        out.extend_from_slice(ifft2_centered(&k).data());
    }
    out
}

/// Adds circular complex Gaussian noise (std `sigma` per component) at sampled locations.
pub fn add_noise(ksp: &KSpaceSet, sigma: f64, seed: u64) -> Result<KSpaceSet> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("noise sigma {sigma} must be >= 0")));
    }
    let mut out = ksp.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    let mut rng = seeded_rng(seed, streams::NOISE);
    let cols = ksp.mask.cols();
    for coil in &mut out.coils {
        for (idx, z) in coil.data_mut().iter_mut().enumerate() {
            let re = normal.sample(&mut rng);
            let im = normal.sample(&mut rng);
            if ksp.mask.is_sampled(idx / cols, idx % cols) {
                *z += C64::new(re, im);
            }
        }
    }
    Ok(out)
}

/// Pixelwise root-sum-of-squares coil combination.
pub fn sos_image(gamma: &CoilImageSet) -> Vec<f64> {
    let px = gamma.rows() * gamma.cols();
    let mut acc = vec![0.0; px];
    for coil in gamma.coils() {
        for (a, z) in acc.iter_mut().zip(coil.data()) {
            *a += z.norm_sqr();
        }
    }
    acc.iter_mut().for_each(|a| *a = a.sqrt());
    acc
}
