//! Tissue segmentation on sum-of-squares images and joint training of the
//! unrolled reconstruction with the segmentation network under
//! `L_total = L_recon + beta L_seg`.

mod kmeans;

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bench::metrics::{snr_db, tissue_dice, MetricsRow};
use crate::error::{Error, Result};
use crate::idslr::optim::{self, Adam};
use crate::idslr::{
    backward, push_recon_loss, record_unet, record_unroll, reconstruct, tape, DenoiserParams, ReluPattern, Tape,
    Tensor, TrainState, UnetArch, UnrolledModel,
};
use crate::mrisim::{adjoint, sos_image, CoilImageSet, KSpaceSet};

pub use kmeans::{kmeans_1d, kmeans_labels, otsu_threshold};

pub const N_CLASSES: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    rows: usize,
    cols: usize,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(rows: usize, cols: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for a {rows}x{cols} grid",
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= N_CLASSES) {
            return Err(Error::InvalidArgument(format!("label {bad} outside 0..=3")));
        }
        Ok(Self { rows, cols, labels })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }
}

/// Per-pixel class probabilities, channel-major `(4, rows, cols)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationMap {
    probs: Tensor,
}

impl SegmentationMap {
    pub fn from_probs(probs: Tensor) -> Result<Self> {
        if probs.c != N_CLASSES {
            return Err(Error::DimensionMismatch(format!("{} channels, expected 4", probs.c)));
        }
        let n = probs.h * probs.w;
        for p in 0..n {
            let s: f64 = (0..N_CLASSES).map(|c| probs.data[c * n + p]).sum();
            if (s - 1.0).abs() > 1e-6 || (0..N_CLASSES).any(|c| !(0.0..=1.0).contains(&probs.data[c * n + p])) {
                return Err(Error::InvalidArgument(format!("pixel {p} is not a distribution")));
            }
        }
        Ok(Self { probs })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.probs.h, self.probs.w)
    }

    pub fn probs(&self) -> &Tensor {
        &self.probs
    }

    pub fn prob(&self, class: usize, pixel: usize) -> f64 {
        self.probs.data[class * self.probs.h * self.probs.w + pixel]
    }

    /// Most probable class per pixel; ties go to the lower class.
    pub fn argmax(&self) -> LabelMap {
        let n = self.probs.h * self.probs.w;
        let labels = (0..n)
            .map(|p| {
                let mut best = 0;
                for c in 1..N_CLASSES {
                    if self.prob(c, p) > self.prob(best, p) {
                        best = c;
                    }
                }
                best as u8
            })
            .collect();
        LabelMap::new(self.probs.h, self.probs.w, labels).expect("argmax labels are valid")
    }
}

pub fn seg_arch() -> UnetArch {
    UnetArch::new(1, N_CLASSES)
}

/// Segmentation network with a zero output layer (uniform probabilities).
pub fn init_seg_params(seed: u64) -> DenoiserParams {
    DenoiserParams::init(seg_arch(), seed)
}

fn check_seg_params(params: &DenoiserParams) -> Result<()> {
    params.validate()?;
    if params.arch.in_channels != 1 || params.arch.out_channels != N_CLASSES {
        return Err(Error::Config("segmentation network must map 1 channel to 4".into()));
    }
    Ok(())
}

fn image_tensor(image: &[f64], rows: usize, cols: usize) -> Result<Tensor> {
    Tensor::from_vec(1, rows, cols, image.to_vec())
}

/// Softmax class probabilities of the segmentation UNET on a magnitude image.
pub fn segment(image: &[f64], rows: usize, cols: usize, params: &DenoiserParams) -> Result<SegmentationMap> {
    check_seg_params(params)?;
    let mut t = Tape::new(Arc::new(params.values.clone()));
    let x = t.input(image_tensor(image, rows, cols)?);
    let logits = record_unet(&mut t, x, &params.arch, 0)?;
    SegmentationMap::from_probs(tape::softmax(t.value(logits)))
}

/// Pixel mean of `-ln max(phi[label], 1e-12)`.
pub fn loss_seg(phi: &SegmentationMap, gold: &LabelMap) -> Result<f64> {
    if phi.shape() != gold.shape() {
        return Err(Error::DimensionMismatch("loss_seg: sizes differ".into()));
    }
    let n = gold.labels.len();
    Ok(gold
        .labels
        .iter()
        .enumerate()
        .map(|(p, &l)| -phi.prob(l as usize, p).max(tape::CE_FLOOR).ln())
        .sum::<f64>()
        / n as f64)
}

pub fn loss_total(l_recon: f64, l_seg: f64, beta: f64) -> Result<f64> {
    if !(beta >= 0.0) {
        return Err(Error::InvalidArgument(format!("beta {beta} must be >= 0")));
    }
    Ok(l_recon + beta * l_seg)
}

/// Tape ending in the cross-entropy of the network on `image`.
pub fn seg_loss_tape(
    image: &Tensor,
    gold: &LabelMap,
    params: &DenoiserParams,
    frozen: Option<Arc<ReluPattern>>,
) -> Result<Tape> {
    check_seg_params(params)?;
    let values = Arc::new(params.values.clone());
    let mut t = match frozen {
        Some(p) => Tape::with_frozen_relu(values, p),
        None => Tape::new(values),
    };
    let x = t.input(image.clone());
    let logits = record_unet(&mut t, x, &params.arch, 0)?;
    t.softmax_ce(logits, Arc::new(gold.labels.clone()))?;
    Ok(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegTrainState {
    pub params: DenoiserParams,
    pub adam: Adam,
    pub batch_size: usize,
    pub seed: u64,
    pub epochs_done: usize,
    pub epoch_losses: Vec<f64>,
}

impl SegTrainState {
    pub fn new(params: DenoiserParams, lr: f64, batch_size: usize, seed: u64) -> Self {
        Self {
            adam: Adam::new(params.values.len(), lr),
            params,
            batch_size,
            seed,
            epochs_done: 0,
            epoch_losses: Vec::new(),
        }
    }
}

/// One pretraining sample: a fully sampled SoS image and its labels.
#[derive(Debug, Clone)]
pub struct SegSample {
    pub image: Tensor,
    pub labels: LabelMap,
}

impl SegSample {
    pub fn new(image: &[f64], labels: LabelMap) -> Result<Self> {
        let (rows, cols) = labels.shape();
        Ok(Self {
            image: image_tensor(image, rows, cols)?,
            labels,
        })
    }
}

/// Minibatch Adam on `loss_seg`.
pub fn pretrain_seg(mut state: SegTrainState, dataset: &[SegSample], epochs: usize) -> Result<SegTrainState> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("pretrain_seg: empty dataset".into()));
    }
    check_seg_params(&state.params)?;
    let arch = state.params.arch;
    let mut values = state.params.values.clone();
    let losses = optim::run_epochs(
        &mut values,
        &mut state.adam,
        dataset.len(),
        state.batch_size,
        state.seed,
        state.epochs_done,
        epochs,
        |p, i| {
            let params = DenoiserParams {
                arch,
                values: p.to_vec(),
            };
            let mut t = seg_loss_tape(&dataset[i].image, &dataset[i].labels, &params, None)?;
            let l = t.value(t.len() - 1).data[0];
            Ok((l, backward(&mut t, 1.0)?))
        },
    )?;
    state.params.values = values;
    state.epochs_done += epochs;
    state.epoch_losses.extend(losses);
    Ok(state)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointModel {
    pub recon: UnrolledModel,
    pub seg: DenoiserParams,
    pub beta: f64,
    pub recon_trained: bool,
    pub seg_trained: bool,
}

impl JointModel {
    /// Joint model initialised from pretrained sub-models; the trained flags
    /// record whether each state ran at least one epoch.
    pub fn from_pretrained(recon: &TrainState, seg: &SegTrainState, beta: f64) -> Self {
        Self {
            recon: recon.model.clone(),
            seg: seg.params.clone(),
            beta,
            recon_trained: recon.epochs_done > 0,
            seg_trained: seg.epochs_done > 0,
        }
    }

    /// Joint model with both trained flags cleared.
    pub fn untrained(recon: UnrolledModel, seg: DenoiserParams, beta: f64) -> Self {
        Self {
            recon,
            seg,
            beta,
            recon_trained: false,
            seg_trained: false,
        }
    }

    /// Reconstruction parameters followed by segmentation parameters.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.recon.params();
        p.extend_from_slice(&self.seg.values);
        p
    }

    pub fn n_params(&self) -> usize {
        self.recon.n_params() + self.seg.values.len()
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(Error::DimensionMismatch(format!(
                "joint model has {} parameters, got {}",
                self.n_params(),
                p.len()
            )));
        }
        let n = self.recon.n_params();
        self.recon.set_params(&p[..n])?;
        self.seg.values.copy_from_slice(&p[n..]);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::Config(format!("beta {} must be finite and >= 0", self.beta)));
        }
        self.recon.validate()?;
        check_seg_params(&self.seg)
    }
}

/// Node ids of the three losses on a joint tape.
#[derive(Debug, Clone, Copy)]
pub struct JointNodes {
    pub recon: usize,
    pub seg: usize,
    pub total: usize,
    /// Output of the unrolled reconstruction.
    pub gamma: usize,
    /// Sum-of-squares image fed to the segmentation network.
    pub sos: usize,
}

/// Tape of `L_recon(Gamma_K) + beta L_seg(seg(SoS(Gamma_K)))`; the total is the last node.
pub fn joint_loss_tape(
    joint: &JointModel,
    ksp: &KSpaceSet,
    gold: &CoilImageSet,
    labels: &LabelMap,
    frozen: Option<Arc<ReluPattern>>,
) -> Result<(Tape, JointNodes)> {
    joint.validate()?;
    if joint.recon.in_channels() != 2 * ksp.n_coils() {
        return Err(Error::DimensionMismatch("joint model and data coil counts differ".into()));
    }
    let params = Arc::new(joint.params());
    let mut t = match frozen {
        Some(p) => Tape::with_frozen_relu(params, p),
        None => Tape::new(params),
    };
    let n_recon = joint.recon.n_params();
    let gamma = record_unroll(&mut t, &joint.recon, 0, n_recon - 1, &Arc::new(ksp.clone()))?;
    let recon = push_recon_loss(&mut t, gamma, gold)?;
    let sos = t.sos(gamma);
    let logits = record_unet(&mut t, sos, &joint.seg.arch, n_recon)?;
    let seg = t.softmax_ce(logits, Arc::new(labels.labels.clone()))?;
    let total = t.combine(recon, seg, joint.beta)?;
    Ok((
        t,
        JointNodes {
            recon,
            seg,
            total,
            gamma,
            sos,
        },
    ))
}

/// One end-to-end training sample.
#[derive(Debug, Clone)]
pub struct JointSample {
    pub ksp: KSpaceSet,
    pub gold: CoilImageSet,
    pub labels: LabelMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E2eState {
    pub joint: JointModel,
    pub adam: Adam,
    pub batch_size: usize,
    pub seed: u64,
    pub epochs_done: usize,
    pub epoch_losses: Vec<f64>,
}

impl E2eState {
    pub fn new(joint: JointModel, lr: f64, batch_size: usize, seed: u64) -> Self {
        Self {
            adam: Adam::new(joint.n_params(), lr),
            joint,
            batch_size,
            seed,
            epochs_done: 0,
            epoch_losses: Vec::new(),
        }
    }
}

/// Minibatch Adam on `L_total` through both networks. Both sub-models must
/// carry their trained flag.
pub fn train_e2e(mut state: E2eState, dataset: &[JointSample], epochs: usize) -> Result<E2eState> {
    if !state.joint.recon_trained || !state.joint.seg_trained {
        return Err(Error::Untrained(
            "end-to-end training needs pretrained reconstruction and segmentation networks".into(),
        ));
    }
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("train_e2e: empty dataset".into()));
    }
    state.joint.validate()?;
    let template = state.joint.clone();
    let mut params = state.joint.params();
    let losses = optim::run_epochs(
        &mut params,
        &mut state.adam,
        dataset.len(),
        state.batch_size,
        state.seed,
        state.epochs_done,
        epochs,
        |p, i| {
            let mut j = template.clone();
            j.set_params(p)?;
            let s = &dataset[i];
            let (mut t, nodes) = joint_loss_tape(&j, &s.ksp, &s.gold, &s.labels, None)?;
            let l = t.value(nodes.total).data[0];
            Ok((l, backward(&mut t, 1.0)?))
        },
    )?;
    state.joint.set_params(&params)?;
    state.epochs_done += epochs;
    state.epoch_losses.extend(losses);
    Ok(state)
}

/// Scores one reconstruction: SNR against `gold`, and tissue Dice of either
/// the segmentation network (when `seg` is given) or k-means labels of the
/// reconstruction's SoS image.
pub fn score(
    method: &str,
    recon: &CoilImageSet,
    gold: &CoilImageSet,
    gold_labels: &LabelMap,
    seg: Option<&DenoiserParams>,
    accel: f64,
    runtime_s: f64,
    kmeans_seed: u64,
) -> Result<(MetricsRow, LabelMap)> {
    let (rows, cols) = recon.shape();
    let sos = sos_image(recon);
    let pred = match seg {
        Some(p) => segment(&sos, rows, cols, p)?.argmax(),
        None => kmeans_labels(&sos, rows, cols, kmeans_seed)?,
    };
    let d = tissue_dice(&pred, gold_labels)?;
    Ok((
        MetricsRow {
            method: method.to_string(),
            accel,
            snr_db: snr_db(recon, gold)?,
            dice_csf: d[0],
            dice_gm: d[1],
            dice_wm: d[2],
            runtime_s,
        },
        pred,
    ))
}

/// Per-sample rows for the zero-filled cascade, the pretrained cascade and,
/// when given, the end-to-end model.
pub fn evaluate_cascade(
    recon_model: &UnrolledModel,
    seg_params: &DenoiserParams,
    e2e: Option<&JointModel>,
    test: &[JointSample],
) -> Result<Vec<MetricsRow>> {
    let mut rows = Vec::new();
    for s in test {
        let accel = s.ksp.mask.acceleration();
        let t0 = Instant::now();
        let zf = adjoint(&s.ksp);
        let ms = t0.elapsed().as_secs_f64();
        rows.push(score("US-SEG", &zf, &s.gold, &s.labels, Some(seg_params), accel, ms, 0)?.0);

        let t0 = Instant::now();
        let r = reconstruct(recon_model, &s.ksp)?;
        let ms = t0.elapsed().as_secs_f64();
        rows.push(score("I-DSLR-SEG", &r, &s.gold, &s.labels, Some(seg_params), accel, ms, 0)?.0);

        if let Some(j) = e2e {
            let t0 = Instant::now();
            let r = reconstruct(&j.recon, &s.ksp)?;
            let ms = t0.elapsed().as_secs_f64();
            rows.push(score("I-DSLR-SEG-E2E", &r, &s.gold, &s.labels, Some(&j.seg), accel, ms, 0)?.0);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests;
