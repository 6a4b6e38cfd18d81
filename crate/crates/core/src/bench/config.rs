//! JSON experiment description. Unknown keys are rejected and every field
//! is validated before any data is generated.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clearsolve::ClearConfig;
use crate::error::{Error, Result};
use crate::idslr::DEFAULT_K;

/// Desk-scale learning rate: with only a few hundred optimiser steps the
/// library default of `1e-4` leaves the networks close to initialisation.
pub const DESK_LR: f64 = 1e-3;

pub const ACCELERATIONS: [f64; 5] = [1.0, 2.0, 4.0, 6.0, 8.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "US")]
    Us,
    #[serde(rename = "CLEAR")]
    Clear,
    #[serde(rename = "I-DSLR")]
    Idslr,
    #[serde(rename = "US-SEG")]
    UsSeg,
    #[serde(rename = "CLEAR-SEG")]
    ClearSeg,
    #[serde(rename = "I-DSLR-SEG")]
    IdslrSeg,
    #[serde(rename = "I-DSLR-SEG-E2E")]
    IdslrSegE2e,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Us,
        Method::Clear,
        Method::Idslr,
        Method::UsSeg,
        Method::ClearSeg,
        Method::IdslrSeg,
        Method::IdslrSegE2e,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Us => "US",
            Method::Clear => "CLEAR",
            Method::Idslr => "I-DSLR",
            Method::UsSeg => "US-SEG",
            Method::ClearSeg => "CLEAR-SEG",
            Method::IdslrSeg => "I-DSLR-SEG",
            Method::IdslrSegE2e => "I-DSLR-SEG-E2E",
        }
    }

    /// Labels come from the segmentation network rather than k-means.
    pub fn uses_seg_net(self) -> bool {
        matches!(self, Method::UsSeg | Method::ClearSeg | Method::IdslrSeg | Method::IdslrSegE2e)
    }

    pub fn needs_dslr(self) -> bool {
        matches!(self, Method::Idslr | Method::IdslrSeg | Method::IdslrSegE2e)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.tag() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub rows: usize,
    pub cols: usize,
    pub n_coils: usize,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self { rows: 64, cols: 64, n_coils: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskConfig {
    pub acceleration: f64,
    /// `None` keeps `rows / 16` (at least 4) fully sampled centre lines.
    pub center_lines: Option<usize>,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self { acceleration: 4.0, center_lines: None }
    }
}

/// Phantom seeds of a split are `first_seed .. first_seed + count`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub count: usize,
    pub first_seed: u64,
}

impl SplitConfig {
    pub fn seeds(&self) -> std::ops::Range<u64> {
        self.first_seed..self.first_seed + self.count as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitsConfig {
    pub train: SplitConfig,
    pub val: SplitConfig,
    pub test: SplitConfig,
}

impl Default for SplitsConfig {
    fn default() -> Self {
        Self {
            train: SplitConfig { count: 20, first_seed: 0 },
            val: SplitConfig { count: 2, first_seed: 10_000 },
            test: SplitConfig { count: 5, first_seed: 20_000 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub k: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seg_lr: f64,
    pub seg_epochs: usize,
    pub e2e_lr: f64,
    pub e2e_epochs: usize,
    /// Weight of the segmentation loss in the end-to-end objective.
    pub beta: f64,
    /// Redraw each training sample's mask and coil phases every epoch.
    pub augment: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            lr: DESK_LR,
            batch_size: 1,
            epochs: 30,
            seg_lr: DESK_LR,
            seg_epochs: 30,
            e2e_lr: DESK_LR,
            e2e_epochs: 10,
            beta: 1.0,
            augment: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub phantom: PhantomConfig,
    pub mask: MaskConfig,
    /// Per-component k-space noise; `None` gives about 30 dB on the gold image.
    pub noise_sigma: Option<f64>,
    pub splits: SplitsConfig,
    pub clear: ClearConfig,
    pub training: TrainingConfig,
    pub methods: Vec<Method>,
    /// Seeds weight initialisation, shuffling and k-means.
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            phantom: PhantomConfig::default(),
            mask: MaskConfig::default(),
            noise_sigma: None,
            splits: SplitsConfig::default(),
            clear: ClearConfig::default(),
            training: TrainingConfig::default(),
            methods: vec![Method::Us, Method::Clear, Method::Idslr, Method::IdslrSeg, Method::IdslrSegE2e],
            seed: 1,
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let p = &self.phantom;
        if p.rows < 32 || p.cols < 32 || p.n_coils == 0 {
            return bad(format!("phantom {}x{} with {} coils; need >= 32x32 and >= 1 coil", p.rows, p.cols, p.n_coils));
        }
        if !ACCELERATIONS.contains(&self.mask.acceleration) {
            return bad(format!("acceleration {} not in {ACCELERATIONS:?}", self.mask.acceleration));
        }
        if self.mask.center_lines.is_some_and(|c| c == 0 || c > p.rows) {
            return bad("center_lines must lie in 1..=rows".into());
        }
        if self.noise_sigma.is_some_and(|s| !(s >= 0.0) || !s.is_finite()) {
            return bad("noise_sigma must be finite and >= 0".into());
        }
        self.clear.validate()?;
        let t = &self.training;
        if t.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        for (name, lr) in [("lr", t.lr), ("seg_lr", t.seg_lr), ("e2e_lr", t.e2e_lr)] {
            if !(lr >= 0.0) || !lr.is_finite() {
                return bad(format!("{name} must be finite and >= 0"));
            }
        }
        if !(t.beta >= 0.0) || !t.beta.is_finite() {
            return bad("beta must be finite and >= 0".into());
        }
        if self.methods.is_empty() {
            return bad("no methods selected".into());
        }
        let trains = self.methods.iter().any(|m| m.needs_dslr() || m.uses_seg_net());
        if trains && self.splits.train.count == 0 {
            return bad("learned methods need a non-empty train split".into());
        }
        if self.splits.test.count == 0 {
            return bad("test split is empty".into());
        }
        self.check_splits()
    }

    /// Seed ranges of train, validation and test must not overlap.
    pub fn check_splits(&self) -> Result<()> {
        let s = &self.splits;
        let mut named = Vec::new();
        for (name, sp) in [("train", &s.train), ("val", &s.val), ("test", &s.test)] {
            let end = sp
                .first_seed
                .checked_add(sp.count as u64)
                .ok_or_else(|| Error::Config(format!("{name} seed range overflows")))?;
            named.push((name, sp.first_seed..end));
        }
        for (i, (a, ra)) in named.iter().enumerate() {
            for (b, rb) in &named[i + 1..] {
                if !ra.is_empty() && !rb.is_empty() && ra.start < rb.end && rb.start < ra.end {
                    return Err(Error::Config(format!("{a} and {b} seed ranges overlap")));
                }
            }
        }
        Ok(())
    }
}
