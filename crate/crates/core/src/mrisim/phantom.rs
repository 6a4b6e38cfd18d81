use std::f64::consts::PI;

use rand::Rng;

use super::{seeded_rng, streams, CoilImageSet};
use crate::error::{Error, Result};
use crate::numkernel::{ComplexImage, C64};

/// Tissue classes, in label order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Tissue {
    Background = 0,
    Csf = 1,
    Gm = 2,
    Wm = 3,
}

/// Nominal T1-weighted intensities indexed by label: CSF < GM < WM.
pub const CLASS_INTENSITY: [f64; 4] = [0.0, 0.25, 0.6, 0.9];

/// Seeded brain-like test object with exact tissue labels and coil maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub rows: usize,
    pub cols: usize,
    /// 0 = background, 1 = CSF, 2 = GM, 3 = WM; row-major.
    pub tissue_label: Vec<u8>,
    /// Real-valued magnetisation; zero exactly on background.
    pub magnitude: Vec<f64>,
    /// Sum-of-squares normalised sensitivities.
    pub coil_maps: CoilImageSet,
    pub seed: u64,
}

impl Phantom {
    /// Sensitivity-weighted coil images `c_i * rho`.
    pub fn coil_images(&self) -> CoilImageSet {
        let coils = self
            .coil_maps
            .coils()
            .iter()
            .map(|map| {
                let data = map
                    .data()
                    .iter()
                    .zip(&self.magnitude)
                    .map(|(c, &m)| c * m)
                    .collect();
                ComplexImage::from_vec(self.rows, self.cols, data).expect("same grid")
            })
            .collect();
        CoilImageSet::new(coils).expect("coil maps are consistent")
    }

    /// Mean magnitude per tissue label (NaN for absent classes).
    pub fn class_means(&self) -> [f64; 4] {
        let mut sum = [0.0; 4];
        let mut n = [0usize; 4];
        for (&l, &m) in self.tissue_label.iter().zip(&self.magnitude) {
            sum[l as usize] += m;
            n[l as usize] += 1;
        }
        let mut out = [f64::NAN; 4];
        for k in 0..4 {
            if n[k] > 0 {
                out[k] = sum[k] / n[k] as f64;
            }
        }
        out
    }
}

/// Builds a nested-ellipse brain phantom.
///
/// Geometry: an outer CSF rim, a gray-matter band with a wavy inner
/// boundary, white-matter core and two CSF ventricles. Each class gets a
/// smooth multiplicative modulation of at most 8 %. Coil maps are Gaussian
/// lobes centred around the field of view with linear phase ramps, then
/// normalised to unit sum-of-squares.
pub fn make_phantom(rows: usize, cols: usize, n_coils: usize, seed: u64) -> Result<Phantom> {
    if rows < 32 || cols < 32 {
        return Err(Error::DimensionTooSmall { rows, cols });
    }
    if n_coils < 2 {
        return Err(Error::InvalidArgument(format!(
            "phantom needs at least 2 coils, got {n_coils}"
        )));
    }

    let mut rng = seeded_rng(seed, streams::PHANTOM);
    let mut jitter = |amp: f64| rng.gen_range(-amp..amp);

    let cy = jitter(0.03);
    let cx = jitter(0.03);
    let ay = 0.82 * (1.0 + jitter(0.04));
    let ax = 0.68 * (1.0 + jitter(0.04));
    let tilt = jitter(0.12);
    let wave = [(5.0, jitter(PI), 0.05 + jitter(0.015)), (9.0, jitter(PI), 0.025)];
    let vent_dx = 0.13 + jitter(0.02);
    let vent_dy = -0.05 + jitter(0.03);
    let vent_len = 0.22 + jitter(0.04);
    let vent_wid = 0.07 + jitter(0.015);
    let vent_tilt = 0.25 + jitter(0.1);
    // smooth modulation: per class, two low-order cosines
    let mods: Vec<[(f64, f64, f64); 2]> = (0..4)
        .map(|_| {
            [
                (jitter(1.5), jitter(1.5), jitter(PI)),
                (jitter(2.5), jitter(2.5), jitter(PI)),
            ]
        })
        .collect();

    let (st, ct) = tilt.sin_cos();
    let mut tissue_label = vec![0u8; rows * cols];
    let mut magnitude = vec![0.0; rows * cols];
    for r in 0..rows {
        let y = 2.0 * (r as f64 + 0.5) / rows as f64 - 1.0;
        for c in 0..cols {
            let x = 2.0 * (c as f64 + 0.5) / cols as f64 - 1.0;
            let (dy, dx) = (y - cy, x - cx);
            let u = ct * dy - st * dx;
            let v = st * dy + ct * dx;
            let rho = ((u / ay).powi(2) + (v / ax).powi(2)).sqrt();
            let phi = v.atan2(u);

            let wm_edge = 0.66 + wave.iter().map(|(k, ph, a)| a * (k * phi + ph).sin()).sum::<f64>();
            let label = if rho >= 1.0 {
                Tissue::Background
            } else if rho >= 0.9 {
                Tissue::Csf
            } else if rho >= wm_edge {
                Tissue::Gm
            } else {
                let in_vent = [-1.0, 1.0].iter().any(|&side: &f64| {
                    let (vs, vc) = (side * vent_tilt).sin_cos();
                    let py = u - vent_dy;
                    let px = v - side * vent_dx;
                    let a = vc * py - vs * px;
                    let b = vs * py + vc * px;
                    (a / vent_len).powi(2) + (b / vent_wid).powi(2) < 1.0
                });
                if in_vent {
                    Tissue::Csf
                } else {
                    Tissue::Wm
                }
            };
            let l = label as usize;
            tissue_label[r * cols + c] = label as u8;
            if label != Tissue::Background {
                let m: f64 = mods[l]
                    .iter()
                    .map(|(fy, fx, ph)| (PI * (fy * y + fx * x) + ph).cos())
                    .sum::<f64>();
                magnitude[r * cols + c] = CLASS_INTENSITY[l] * (1.0 + 0.04 * m);
            }
        }
    }

    let coil_maps = make_coil_maps(rows, cols, n_coils, seed);
    Ok(Phantom {
        rows,
        cols,
        tissue_label,
        magnitude,
        coil_maps,
        seed,
    })
}

fn make_coil_maps(rows: usize, cols: usize, n_coils: usize, seed: u64) -> CoilImageSet {
    let mut rng = seeded_rng(seed, streams::COILS);
    let lobes: Vec<(f64, f64, f64, f64, f64, f64)> = (0..n_coils)
        .map(|i| {
            let ang = 2.0 * PI * i as f64 / n_coils as f64 + rng.gen_range(-0.2..0.2);
            let radius = 1.1 + rng.gen_range(-0.1..0.1);
            let width = 0.8 + rng.gen_range(-0.15..0.15);
            let ramp = rng.gen_range(0.5..1.5);
            let ramp_dir = rng.gen_range(0.0..2.0 * PI);
            let phase0 = rng.gen_range(-PI..PI);
            (radius * ang.sin(), radius * ang.cos(), width, ramp, ramp_dir, phase0)
        })
        .collect();

    let mut maps: Vec<ComplexImage> = lobes
        .iter()
        .map(|&(py, px, w, ramp, dir, ph0)| {
            ComplexImage::from_fn(rows, cols, |r, c| {
                let y = 2.0 * (r as f64 + 0.5) / rows as f64 - 1.0;
                let x = 2.0 * (c as f64 + 0.5) / cols as f64 - 1.0;
                let d2 = (y - py).powi(2) + (x - px).powi(2);
                let mag = (-d2 / (2.0 * w * w)).exp();
                let phase = ph0 + ramp * (x * dir.cos() + y * dir.sin());
                C64::from_polar(mag, phase)
            })
        })
        .collect();

    let px = rows * cols;
    for p in 0..px {
        let sos: f64 = maps.iter().map(|m| m.data()[p].norm_sqr()).sum::<f64>().sqrt();
        for m in maps.iter_mut() {
            m.data_mut()[p] /= sos;
        }
    }
    CoilImageSet::new(maps).expect("uniform grid")
}

/// Per-component noise level giving roughly 30 dB SNR on the fully sampled
/// coil stack: `||noise|| / ||gamma|| = 10^(-30/20)`.
pub fn default_noise_sigma(gamma: &CoilImageSet) -> f64 {
    let n = (gamma.n_coils() * gamma.rows() * gamma.cols()) as f64;
    let rms = (gamma.norm_sqr() / n).sqrt();
    rms * 10f64.powf(-30.0 / 20.0) / 2f64.sqrt()
}
