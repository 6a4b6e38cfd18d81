//! Simulated acquisitions and model checkpoints on disk.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::idslr::{DenoiserParams, UnetArch, UnrolledModel};
use crate::mrisim::{
    add_noise, adjoint, default_center_lines, default_noise_sigma, forward, make_phantom, make_vd_mask, seeded_rng,
    sos_image, streams, CoilImageSet, KSpaceSet, SamplingMask,
};
use crate::numkernel::{ComplexImage, C64};
use crate::segjoint::{kmeans_labels, JointSample};

use super::config::ExperimentConfig;
use super::container::{read_container, write_container, Container, Payload};

/// Mask seeds live in their own range so a phantom and its mask never share a seed.
const MASK_SEED_OFFSET: u64 = 1 << 40;

/// One simulated acquisition. The gold standard is the inverse FFT of the
/// fully sampled noisy k-space; the undersampled data are the same noisy
/// samples restricted to the mask, with a mask drawn per phantom.
pub fn simulate(cfg: &ExperimentConfig, phantom_seed: u64) -> Result<JointSample> {
    let p = &cfg.phantom;
    let ph = make_phantom(p.rows, p.cols, p.n_coils, phantom_seed)?;
    let clean = ph.coil_images();
    let sigma = cfg.noise_sigma.unwrap_or_else(|| default_noise_sigma(&clean));
    let full = add_noise(&forward(&clean, &SamplingMask::full(p.rows, p.cols))?, sigma, phantom_seed)?;
    let gold = adjoint(&full);
    let mask = make_mask(cfg, phantom_seed)?;
    let mut coils = full.coils;
    for c in &mut coils {
        mask.apply(c);
    }
    let labels = kmeans_labels(&sos_image(&gold), p.rows, p.cols, cfg.seed)?;
    Ok(JointSample {
        ksp: KSpaceSet { coils, mask },
        gold,
        labels,
    })
}

/// Training-time variant of `s`: a fresh mask and a random global phase per
/// coil, both drawn from `(key, epoch)`. Phase rotation keeps the sample
/// physically valid and leaves the SoS image and labels unchanged.
pub fn augment(cfg: &ExperimentConfig, s: &JointSample, key: u64, epoch: usize) -> Result<JointSample> {
    let draw = key.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (epoch as u64).wrapping_add(1).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    let mut rng = seeded_rng(draw ^ cfg.seed, streams::AUGMENT);
    let coils = s
        .gold
        .coils()
        .iter()
        .map(|c| {
            let z = C64::from_polar(1.0, rng.gen_range(-PI..PI));
            ComplexImage::from_vec(c.rows(), c.cols(), c.data().iter().map(|v| v * z).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let gold = CoilImageSet::new(coils)?;
    let p = &cfg.phantom;
    let centre = cfg.mask.center_lines.unwrap_or_else(|| default_center_lines(p.rows));
    let mask = make_vd_mask(p.rows, p.cols, cfg.mask.acceleration, centre, draw)?;
    Ok(JointSample {
        ksp: forward(&gold, &mask)?,
        gold,
        labels: s.labels.clone(),
    })
}

pub fn make_mask(cfg: &ExperimentConfig, phantom_seed: u64) -> Result<SamplingMask> {
    let p = &cfg.phantom;
    let centre = cfg.mask.center_lines.unwrap_or_else(|| default_center_lines(p.rows));
    make_vd_mask(p.rows, p.cols, cfg.mask.acceleration, centre, phantom_seed.wrapping_add(MASK_SEED_OFFSET))
}

pub fn mask_container(mask: &SamplingMask) -> Container {
    let v = mask.grid().iter().map(|&g| g as i32).collect();
    Container::new("mask", vec![mask.rows(), mask.cols()], Payload::I32(v))
        .expect("grid matches shape")
        .with_meta("acceleration", mask.acceleration())
}

pub fn mask_from_container(c: &Container) -> Result<SamplingMask> {
    match (&c.payload, c.header.shape.as_slice()) {
        (Payload::I32(v), &[r, cols]) => {
            let grid = v
                .iter()
                .map(|&g| match g {
                    0 | 1 => Ok(g as u8),
                    _ => Err(Error::InvalidArgument(format!("mask entry {g}"))),
                })
                .collect::<Result<Vec<_>>>()?;
            let accel = c.header.metadata.get("acceleration").and_then(|a| a.as_f64()).unwrap_or(1.0);
            SamplingMask::from_grid(r, cols, grid, accel)
        }
        _ => Err(Error::CorruptHeader("expected an i32 mask of rank 2".into())),
    }
}

/// Writes `<stem>.ksp`, `<stem>.mask`, `<stem>.gold` and `<stem>.labels`.
pub fn save_sample(dir: &Path, stem: &str, s: &JointSample) -> Result<()> {
    let k = CoilImageSet::new(s.ksp.coils.clone())?;
    write_container(&dir.join(format!("{stem}.ksp")), &Container::from_coils("kspace", &k))?;
    write_container(&dir.join(format!("{stem}.mask")), &mask_container(&s.ksp.mask))?;
    write_container(&dir.join(format!("{stem}.gold")), &Container::from_coils("gold", &s.gold))?;
    write_container(&dir.join(format!("{stem}.labels")), &Container::from_labels("labels", &s.labels))?;
    Ok(())
}

pub fn load_kspace(dir: &Path, stem: &str) -> Result<KSpaceSet> {
    let k = read_container(&dir.join(format!("{stem}.ksp")))?.to_coils()?;
    let mask = mask_from_container(&read_container(&dir.join(format!("{stem}.mask")))?)?;
    if k.shape() != mask.shape() {
        return Err(Error::DimensionMismatch("k-space and mask differ in size".into()));
    }
    Ok(KSpaceSet {
        coils: k.coils().to_vec(),
        mask,
    })
}

pub fn load_sample(dir: &Path, stem: &str) -> Result<JointSample> {
    Ok(JointSample {
        ksp: load_kspace(dir, stem)?,
        gold: read_container(&dir.join(format!("{stem}.gold")))?.to_coils()?,
        labels: read_container(&dir.join(format!("{stem}.labels")))?.to_labels()?,
    })
}

/// Unrolled-model checkpoint: exact parameters plus `k`, channel counts and
/// the architecture signature, which is checked on load.
pub fn save_model(path: &Path, model: &UnrolledModel) -> Result<()> {
    let a = model.denoiser.arch;
    let c = Container::from_f64("unrolled-model", &model.params())
        .with_meta("k", model.k)
        .with_meta("lambda", model.lambda())
        .with_meta("in_channels", a.in_channels)
        .with_meta("width", a.width)
        .with_meta("signature", a.signature());
    write_container(path, &c)
}

pub fn load_model(path: &Path) -> Result<UnrolledModel> {
    let c = read_container(path)?;
    let arch = arch_from_meta(&c, "unrolled-model")?;
    let k = meta_usize(&c, "k")?;
    let mut m = UnrolledModel {
        denoiser: DenoiserParams {
            arch,
            values: vec![0.0; arch.n_params()],
        },
        theta: 0.0,
        k,
    };
    m.set_params(&c.to_f64()?)?;
    m.validate()?;
    Ok(m)
}

pub fn save_seg(path: &Path, params: &DenoiserParams) -> Result<()> {
    let a = params.arch;
    let c = Container::from_f64("segmentation-net", &params.values)
        .with_meta("in_channels", a.in_channels)
        .with_meta("out_channels", a.out_channels)
        .with_meta("width", a.width)
        .with_meta("signature", a.signature());
    write_container(path, &c)
}

pub fn load_seg(path: &Path) -> Result<DenoiserParams> {
    let c = read_container(path)?;
    let arch = arch_from_meta(&c, "segmentation-net")?;
    let p = DenoiserParams {
        arch,
        values: c.to_f64()?,
    };
    p.validate()?;
    Ok(p)
}

fn meta_usize(c: &Container, key: &str) -> Result<usize> {
    c.header
        .metadata
        .get(key)
        .and_then(|v| v.as_u64())
        .map(|v| v as usize)
        .ok_or_else(|| Error::CorruptHeader(format!("checkpoint lacks {key}")))
}

fn arch_from_meta(c: &Container, role: &str) -> Result<UnetArch> {
    if c.header.role != role {
        return Err(Error::CorruptHeader(format!("expected a {role}, found {}", c.header.role)));
    }
    let in_channels = meta_usize(c, "in_channels")?;
    let out_channels = c
        .header
        .metadata
        .get("out_channels")
        .and_then(|v| v.as_u64())
        .map_or(in_channels, |v| v as usize);
    let arch = UnetArch {
        in_channels,
        out_channels,
        width: meta_usize(c, "width")?,
    };
    let sig = c.header.metadata.get("signature").and_then(|v| v.as_str());
    if sig != Some(arch.signature().as_str()) {
        return Err(Error::CorruptHeader("architecture signature mismatch".into()));
    }
    Ok(arch)
}
