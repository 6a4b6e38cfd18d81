//! Unrolled image-domain network: starting from `Gamma_0 = A^H B`, `K` times
//! apply a residual UNET denoiser `D(x) = x - U(x)` and the closed-form
//! data-consistency solve `(A^H A + lambda I)^-1 (A^H B + lambda D(x))`.
//! One denoiser parameter set is shared by all `K` iterations.

pub mod gradcheck;
pub mod optim;
pub mod tape;
pub mod unet;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mrisim::{adjoint, seeded_rng, streams, CoilImageSet, KSpaceSet};
use crate::numkernel::{fft2_centered, ifft2_centered};

pub use optim::{Adam, DEFAULT_BATCH, DEFAULT_LR};
pub use gradcheck::{gradcheck, GradCheck};
pub use tape::{backward, backward_with_inputs, ConvSpec, NodeId, ReluPattern, Tape, Tensor};
pub use unet::{record_unet, UnetArch};

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserParams {
    pub arch: UnetArch,
    pub values: Vec<f64>,
}

impl DenoiserParams {
    /// He-initialised UNET whose output layer is zero, so `D` starts as the identity.
    pub fn init(arch: UnetArch, seed: u64) -> Self {
        let mut rng = seeded_rng(seed, streams::INIT);
        Self {
            values: arch.init(&mut rng, true),
            arch,
        }
    }

    /// Fully random weights including the output layer, scaled by `scale`.
    pub fn random(arch: UnetArch, seed: u64, scale: f64) -> Self {
        let mut rng = seeded_rng(seed, streams::INIT);
        let values = arch.init(&mut rng, false).into_iter().map(|v| v * scale).collect();
        Self { arch, values }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.check()?;
        if self.values.len() != self.arch.n_params() {
            return Err(Error::DimensionMismatch(format!(
                "architecture needs {} parameters, got {}",
                self.arch.n_params(),
                self.values.len()
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite denoiser parameter".into()));
        }
        Ok(())
    }

    pub fn signature(&self) -> String {
        self.arch.signature()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnrolledModel {
    pub denoiser: DenoiserParams,
    /// `lambda = exp(theta)`.
    pub theta: f64,
    pub k: usize,
}

impl UnrolledModel {
    /// Identity-initialised denoiser for `n_coils` coils and `lambda = 1`.
    pub fn new(n_coils: usize, k: usize, seed: u64) -> Self {
        Self {
            denoiser: DenoiserParams::init(UnetArch::new(2 * n_coils, 2 * n_coils), seed),
            theta: 0.0,
            k,
        }
    }

    pub fn lambda(&self) -> f64 {
        self.theta.exp()
    }

    pub fn in_channels(&self) -> usize {
        self.denoiser.arch.in_channels
    }

    /// Denoiser weights followed by `theta`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.denoiser.values.clone();
        p.push(self.theta);
        p
    }

    pub fn n_params(&self) -> usize {
        self.denoiser.values.len() + 1
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(Error::DimensionMismatch(format!(
                "model has {} parameters, got {}",
                self.n_params(),
                p.len()
            )));
        }
        let n = self.denoiser.values.len();
        self.denoiser.values.copy_from_slice(&p[..n]);
        self.theta = p[n];
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.denoiser.validate()?;
        let a = self.denoiser.arch;
        if a.in_channels != a.out_channels || a.in_channels % 2 != 0 {
            return Err(Error::Config(
                "denoiser must map 2N channels to 2N channels".into(),
            ));
        }
        if !self.theta.is_finite() {
            return Err(Error::Numerical("non-finite lambda".into()));
        }
        Ok(())
    }

    fn check_data(&self, ksp: &KSpaceSet) -> Result<()> {
        if self.in_channels() != 2 * ksp.n_coils() {
            return Err(Error::DimensionMismatch(format!(
                "model expects {} coils, data has {}",
                self.in_channels() / 2,
                ksp.n_coils()
            )));
        }
        Ok(())
    }
}

/// Closed-form `(A^H A + lambda I)^-1 (A^H B + lambda x)`, per coil in k-space:
/// `k = (m b + lambda F x) / (m + lambda)`.
pub fn dc_solve(x: &CoilImageSet, ksp: &KSpaceSet, lambda: f64) -> Result<CoilImageSet> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda {lambda} must be finite and > 0")));
    }
    if x.shape() != ksp.shape() || x.n_coils() != ksp.n_coils() {
        return Err(Error::DimensionMismatch("dc_solve: image and k-space differ".into()));
    }
    let mask = ksp.mask.grid();
    let coils = x
        .coils()
        .iter()
        .zip(&ksp.coils)
        .map(|(xc, bc)| {
            let mut k = fft2_centered(xc);
            for (i, kv) in k.data_mut().iter_mut().enumerate() {
                let m = mask[i] as f64;
                *kv = (bc.data()[i] * m + *kv * lambda) / (m + lambda);
            }
            ifft2_centered(&k)
        })
        .collect();
    CoilImageSet::new(coils)
}

/// Records `Gamma_K` on `tape` with denoiser weights at `base` and `theta`
/// at index `theta`. Returns the output node.
pub fn record_unroll(
    tape: &mut Tape,
    model: &UnrolledModel,
    base: usize,
    theta: usize,
    ksp: &Arc<KSpaceSet>,
) -> Result<NodeId> {
    let mut x = tape.input(Tensor::from_coils(&adjoint(ksp)));
    for _ in 0..model.k {
        let u = record_unet(tape, x, &model.denoiser.arch, base)?;
        let d = tape.sub(x, u)?;
        x = tape.dc(d, Arc::clone(ksp), theta)?;
    }
    Ok(x)
}

/// Applies the denoiser `D(x) = x - U(x)`.
pub fn denoise(x: &CoilImageSet, params: &DenoiserParams) -> Result<CoilImageSet> {
    params.validate()?;
    if params.arch.in_channels != 2 * x.n_coils() {
        return Err(Error::DimensionMismatch(format!(
            "denoiser expects {} channels, input has {}",
            params.arch.in_channels,
            2 * x.n_coils()
        )));
    }
    let mut tape = Tape::new(Arc::new(params.values.clone()));
    let xi = tape.input(Tensor::from_coils(x));
    let u = record_unet(&mut tape, xi, &params.arch, 0)?;
    let d = tape.sub(xi, u)?;
    tape.value(d).to_coils()
}

/// Forward pass; the output is the tape's last node.
pub fn unroll_forward(model: &UnrolledModel, ksp: &KSpaceSet) -> Result<(CoilImageSet, Tape)> {
    model.validate()?;
    model.check_data(ksp)?;
    let mut tape = Tape::new(Arc::new(model.params()));
    let ksp = Arc::new(ksp.clone());
    let out = record_unroll(&mut tape, model, 0, model.n_params() - 1, &ksp)?;
    let gamma = tape.value(out).to_coils()?;
    Ok((gamma, tape))
}

/// `||gamma - gold||^2 / (rows cols)`.
pub fn loss_recon(gamma: &CoilImageSet, gold: &CoilImageSet) -> Result<f64> {
    if gamma.shape() != gold.shape() || gamma.n_coils() != gold.n_coils() {
        return Err(Error::DimensionMismatch("loss_recon: shapes differ".into()));
    }
    let (r, c) = gamma.shape();
    Ok(gamma.sub(gold).norm_sqr() / (r * c) as f64)
}

/// Appends `loss_recon(node, gold)` to the tape and returns the loss node.
pub fn push_recon_loss(tape: &mut Tape, node: NodeId, gold: &CoilImageSet) -> Result<NodeId> {
    let t = Tensor::from_coils(gold);
    let scale = 1.0 / (t.h * t.w) as f64;
    tape.mse(node, Arc::new(t), scale)
}

/// Tape ending in `loss_recon(unroll(ksp), gold)`, optionally with frozen ReLUs.
pub fn recon_loss_tape(
    model: &UnrolledModel,
    ksp: &KSpaceSet,
    gold: &CoilImageSet,
    frozen: Option<Arc<ReluPattern>>,
) -> Result<Tape> {
    model.validate()?;
    model.check_data(ksp)?;
    let params = Arc::new(model.params());
    let mut tape = match frozen {
        Some(p) => Tape::with_frozen_relu(params, p),
        None => Tape::new(params),
    };
    let out = record_unroll(&mut tape, model, 0, model.n_params() - 1, &Arc::new(ksp.clone()))?;
    push_recon_loss(&mut tape, out, gold)?;
    Ok(tape)
}

/// Loss and parameter gradient of one training pair.
pub fn recon_sample_gradient(model: &UnrolledModel, ksp: &KSpaceSet, gold: &CoilImageSet) -> Result<(f64, Vec<f64>)> {
    let mut tape = recon_loss_tape(model, ksp, gold, None)?;
    let value = tape.value(tape.len() - 1).data[0];
    Ok((value, backward(&mut tape, 1.0)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub model: UnrolledModel,
    pub adam: Adam,
    pub batch_size: usize,
    pub seed: u64,
    pub epochs_done: usize,
    pub epoch_losses: Vec<f64>,
}

impl TrainState {
    pub fn new(model: UnrolledModel, lr: f64, batch_size: usize, seed: u64) -> Self {
        Self {
            adam: Adam::new(model.n_params(), lr),
            model,
            batch_size,
            seed,
            epochs_done: 0,
            epoch_losses: Vec::new(),
        }
    }
}

/// Minibatch Adam on `loss_recon`.
pub fn train_dslr(
    mut state: TrainState,
    dataset: &[(KSpaceSet, CoilImageSet)],
    epochs: usize,
) -> Result<TrainState> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("train_dslr: empty dataset".into()));
    }
    state.model.validate()?;
    let template = state.model.clone();
    let mut params = state.model.params();
    let losses = optim::run_epochs(
        &mut params,
        &mut state.adam,
        dataset.len(),
        state.batch_size,
        state.seed,
        state.epochs_done,
        epochs,
        |p, i| {
            let mut m = template.clone();
            m.set_params(p)?;
            recon_sample_gradient(&m, &dataset[i].0, &dataset[i].1)
        },
    )?;
    state.model.set_params(&params)?;
    state.epochs_done += epochs;
    state.epoch_losses.extend(losses);
    Ok(state)
}

/// Reconstruction without recording gradients.
pub fn reconstruct(model: &UnrolledModel, ksp: &KSpaceSet) -> Result<CoilImageSet> {
    Ok(unroll_forward(model, ksp)?.0)
}
