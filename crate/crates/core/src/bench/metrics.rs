//! Reconstruction SNR and per-class Dice.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mrisim::CoilImageSet;
use crate::segjoint::LabelMap;

/// Reported in place of `+inf` when the reconstruction is exact.
pub const SNR_CAP_DB: f64 = 99.0;

/// `20 log10(||gold|| / ||gold - recon||)` over the whole coil stack, capped.
pub fn snr_db(recon: &CoilImageSet, gold: &CoilImageSet) -> Result<f64> {
    if recon.shape() != gold.shape() || recon.n_coils() != gold.n_coils() {
        return Err(Error::DimensionMismatch("snr_db: shapes differ".into()));
    }
    let g = gold.norm();
    if g == 0.0 {
        return Err(Error::InvalidArgument("snr_db: gold image is zero".into()));
    }
    let e = gold.sub(recon).norm();
    if e == 0.0 {
        return Ok(SNR_CAP_DB);
    }
    Ok((20.0 * (g / e).log10()).min(SNR_CAP_DB))
}

/// `2 |P n G| / (|P| + |G|)` for one class; 1 when both sets are empty.
pub fn dice(pred: &LabelMap, gold: &LabelMap, class_id: u8) -> Result<f64> {
    if class_id > 3 {
        return Err(Error::InvalidArgument(format!("class id {class_id} outside 0..=3")));
    }
    if pred.shape() != gold.shape() {
        return Err(Error::DimensionMismatch("dice: label maps differ in size".into()));
    }
    let (mut both, mut p, mut g) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.labels().iter().zip(gold.labels()) {
        let (ia, ib) = (a == class_id, b == class_id);
        both += (ia && ib) as usize;
        p += ia as usize;
        g += ib as usize;
    }
    if p + g == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (p + g) as f64)
}

/// Overlap counts for CSF, GM and WM, summable across images so Dice can be
/// pooled over subjects instead of averaged per image.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DiceCounts {
    pub both: [usize; 3],
    pub pred: [usize; 3],
    pub gold: [usize; 3],
}

impl DiceCounts {
    pub fn from_maps(pred: &LabelMap, gold: &LabelMap) -> Result<Self> {
        if pred.shape() != gold.shape() {
            return Err(Error::DimensionMismatch("dice: label maps differ in size".into()));
        }
        let mut c = Self::default();
        for (&a, &b) in pred.labels().iter().zip(gold.labels()) {
            for k in 0..3 {
                let id = k as u8 + 1;
                c.both[k] += (a == id && b == id) as usize;
                c.pred[k] += (a == id) as usize;
                c.gold[k] += (b == id) as usize;
            }
        }
        Ok(c)
    }

    pub fn add(&mut self, o: &Self) {
        for k in 0..3 {
            self.both[k] += o.both[k];
            self.pred[k] += o.pred[k];
            self.gold[k] += o.gold[k];
        }
    }

    pub fn dice(&self) -> [f64; 3] {
        std::array::from_fn(|k| {
            let d = self.pred[k] + self.gold[k];
            if d == 0 {
                1.0
            } else {
                2.0 * self.both[k] as f64 / d as f64
            }
        })
    }
}

/// Dice for CSF, GM and WM.
pub fn tissue_dice(pred: &LabelMap, gold: &LabelMap) -> Result<[f64; 3]> {
    Ok([dice(pred, gold, 1)?, dice(pred, gold, 2)?, dice(pred, gold, 3)?])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub accel: f64,
    pub snr_db: f64,
    pub dice_csf: f64,
    pub dice_gm: f64,
    pub dice_wm: f64,
    pub runtime_s: f64,
}

impl MetricsRow {
    pub fn mean_dice(&self) -> f64 {
        (self.dice_csf + self.dice_gm + self.dice_wm) / 3.0
    }
}
