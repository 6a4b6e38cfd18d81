//! Full experiment: simulate splits, train the learned models, reconstruct
//! and segment the test split with every configured method, write artifacts
//! and metrics tables.
//!
//! Output layout under `output_dir`:
//! `config.json`, `data/test_<i>.{ksp,mask,gold,labels}`,
//! `recon/<METHOD>_<i>.c64`, `labels/<METHOD>_<i>.labels`,
//! `checkpoints/*.ckpt`, `training_log.json`, `failures.json`,
//! `metrics_per_sample.csv`, `metrics.csv` and `metrics_dice_pooled.csv`.
//!
//! `metrics.csv` averages each metric over test images. The pooled table
//! keeps the mean SNR but computes Dice from pixel counts summed over all
//! test images.
//!
//! Metrics are computed from the stored (single precision) arrays, so a
//! later pass over the files reproduces every cell except `runtime_s`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clearsolve::clear_reconstruct;
use crate::error::{Error, Result};
use crate::idslr::{loss_recon, reconstruct, train_dslr, TrainState, UnrolledModel};
use crate::mrisim::{adjoint, sos_image, CoilImageSet};
use crate::segjoint::{
    init_seg_params, kmeans_labels, pretrain_seg, segment, train_e2e, E2eState, JointModel, JointSample, LabelMap,
    SegSample, SegTrainState,
};

use super::config::{ExperimentConfig, Method};
use super::container::{read_container, write_container, Container};
use super::data::{augment, load_sample, save_model, save_sample, save_seg, simulate};
use super::metrics::{snr_db, tissue_dice, DiceCounts, MetricsRow};

pub const CSV_HEADER: [&str; 7] = ["method", "accel", "snr_db", "dice_csf", "dice_gm", "dice_wm", "runtime_s"];
pub const METRICS_FILE: &str = "metrics.csv";
pub const PER_SAMPLE_FILE: &str = "metrics_per_sample.csv";
pub const POOLED_DICE_FILE: &str = "metrics_dice_pooled.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub method: String,
    pub sample: Option<usize>,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub dslr_epoch_losses: Vec<f64>,
    pub dslr_val_loss: Option<f64>,
    pub seg_epoch_losses: Vec<f64>,
    pub e2e_epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub output_dir: PathBuf,
    /// `(test sample index, row)` in method-major order.
    pub per_sample: Vec<(usize, MetricsRow)>,
    /// Mean over test samples, one row per method that produced any.
    pub pooled: Vec<MetricsRow>,
    /// As `pooled`, with Dice from pixel counts summed over test samples.
    pub pooled_dice: Vec<MetricsRow>,
    pub failures: Vec<Failure>,
    pub training: TrainingLog,
}

impl ExperimentReport {
    pub fn pooled_row(&self, method: Method) -> Option<&MetricsRow> {
        self.pooled.iter().find(|r| r.method == method.tag())
    }
}

/// Trained models available to the evaluation stage.
struct Models {
    dslr: Option<Result<UnrolledModel>>,
    seg: Option<Result<crate::idslr::DenoiserParams>>,
    e2e: Option<Result<JointModel>>,
}

fn shared<T: Clone>(slot: &Option<Result<T>>, what: &str) -> Result<T> {
    match slot {
        Some(Ok(v)) => Ok(v.clone()),
        Some(Err(e)) => Err(Error::InvalidArgument(format!("{what} unavailable: {e}"))),
        None => Err(Error::InvalidArgument(format!("{what} was not trained"))),
    }
}

fn generate(cfg: &ExperimentConfig, seeds: std::ops::Range<u64>) -> Result<Vec<JointSample>> {
    seeds.collect::<Vec<_>>().par_iter().map(|&s| simulate(cfg, s)).collect()
}

/// Runs `epochs` epochs of `step`, feeding augmented copies of `train`
/// (drawn for epoch `epoch_base + e`) when augmentation is enabled.
fn fit<S>(
    cfg: &ExperimentConfig,
    mut state: S,
    train: &[JointSample],
    epochs: usize,
    epoch_base: usize,
    step: impl Fn(S, &[JointSample]) -> Result<S>,
) -> Result<S> {
    if !cfg.training.augment {
        return step(state, train);
    }
    for e in 0..epochs {
        let data = train
            .par_iter()
            .enumerate()
            .map(|(i, s)| augment(cfg, s, i as u64, epoch_base + e))
            .collect::<Result<Vec<_>>>()?;
        state = step(state, &data)?;
    }
    Ok(state)
}

/// Supervised I-DSLR training as configured.
pub fn fit_dslr(cfg: &ExperimentConfig, state: TrainState, train: &[JointSample]) -> Result<TrainState> {
    let t = &cfg.training;
    let per_call = if t.augment { 1 } else { t.epochs };
    fit(cfg, state, train, t.epochs, 0, |st, data| {
        let pairs: Vec<_> = data.iter().map(|s| (s.ksp.clone(), s.gold.clone())).collect();
        train_dslr(st, &pairs, per_call)
    })
}

/// Segmentation pretraining on gold SoS images (unaffected by augmentation).
pub fn fit_seg(cfg: &ExperimentConfig, train: &[JointSample]) -> Result<SegTrainState> {
    let t = &cfg.training;
    let data = train
        .iter()
        .map(|s| SegSample::new(&sos_image(&s.gold), s.labels.clone()))
        .collect::<Result<Vec<_>>>()?;
    pretrain_seg(SegTrainState::new(init_seg_params(cfg.seed), t.seg_lr, t.batch_size, cfg.seed), &data, t.seg_epochs)
}

/// End-to-end fine-tuning; augmented epochs continue after the I-DSLR ones.
pub fn fit_e2e(cfg: &ExperimentConfig, state: E2eState, train: &[JointSample]) -> Result<E2eState> {
    let t = &cfg.training;
    let per_call = if t.augment { 1 } else { t.e2e_epochs };
    fit(cfg, state, train, t.e2e_epochs, t.epochs, |st, data| train_e2e(st, data, per_call))
}

fn train_models(cfg: &ExperimentConfig, train: &[JointSample], val: &[JointSample], log: &mut TrainingLog) -> Models {
    let t = &cfg.training;
    let need_dslr = cfg.methods.iter().any(|m| m.needs_dslr());
    let need_seg = cfg.methods.iter().any(|m| m.uses_seg_net());
    let need_e2e = cfg.methods.contains(&Method::IdslrSegE2e);

    let mut dslr_state = None;
    let dslr = need_dslr.then(|| {
        let model = UnrolledModel::new(cfg.phantom.n_coils, t.k, cfg.seed);
        let st = fit_dslr(cfg, TrainState::new(model, t.lr, t.batch_size, cfg.seed), train)?;
        log.dslr_epoch_losses = st.epoch_losses.clone();
        if !val.is_empty() {
            let mut sum = 0.0;
            for s in val {
                sum += loss_recon(&reconstruct(&st.model, &s.ksp)?, &s.gold)?;
            }
            log.dslr_val_loss = Some(sum / val.len() as f64);
        }
        let m = st.model.clone();
        dslr_state = Some(st);
        Ok(m)
    });

    let mut seg_state = None;
    let seg = need_seg.then(|| {
        let st = fit_seg(cfg, train)?;
        log.seg_epoch_losses = st.epoch_losses.clone();
        let p = st.params.clone();
        seg_state = Some(st);
        Ok(p)
    });

    let e2e = need_e2e.then(|| {
        let (Some(r), Some(s)) = (&dslr_state, &seg_state) else {
            return Err(Error::Untrained("pretraining failed".into()));
        };
        let joint = JointModel::from_pretrained(r, s, t.beta);
        let st = fit_e2e(cfg, E2eState::new(joint, t.e2e_lr, t.batch_size, cfg.seed), train)?;
        log.e2e_epoch_losses = st.epoch_losses.clone();
        Ok(st.joint)
    });
    Models { dslr, seg, e2e }
}

/// Which reconstruction a method scores; SEG variants share their base engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Engine {
    ZeroFill,
    Clear,
    Dslr,
    E2e,
}

fn engine(m: Method) -> Engine {
    match m {
        Method::Us | Method::UsSeg => Engine::ZeroFill,
        Method::Clear | Method::ClearSeg => Engine::Clear,
        Method::Idslr | Method::IdslrSeg => Engine::Dslr,
        Method::IdslrSegE2e => Engine::E2e,
    }
}

fn run_engine(e: Engine, cfg: &ExperimentConfig, models: &Models, s: &JointSample) -> Result<CoilImageSet> {
    match e {
        Engine::ZeroFill => Ok(adjoint(&s.ksp)),
        Engine::Clear => Ok(clear_reconstruct(&s.ksp, &cfg.clear)?.0),
        Engine::Dslr => reconstruct(&shared(&models.dslr, "I-DSLR model")?, &s.ksp),
        Engine::E2e => reconstruct(&shared(&models.e2e, "end-to-end model")?.recon, &s.ksp),
    }
}

/// Labels of a stored reconstruction for `method`.
fn label(method: Method, recon: &CoilImageSet, models: &Models, kmeans_seed: u64) -> Result<LabelMap> {
    let (rows, cols) = recon.shape();
    let sos = sos_image(recon);
    match method {
        Method::IdslrSegE2e => Ok(segment(&sos, rows, cols, &shared(&models.e2e, "end-to-end model")?.seg)?.argmax()),
        m if m.uses_seg_net() => Ok(segment(&sos, rows, cols, &shared(&models.seg, "segmentation net")?)?.argmax()),
        _ => kmeans_labels(&sos, rows, cols, kmeans_seed),
    }
}

pub fn row_from_artifacts(method: Method, accel: f64, recon: &CoilImageSet, pred: &LabelMap, gold: &CoilImageSet, gold_labels: &LabelMap, runtime_s: f64) -> Result<MetricsRow> {
    let d = tissue_dice(pred, gold_labels)?;
    Ok(MetricsRow {
        method: method.tag().to_string(),
        accel,
        snr_db: snr_db(recon, gold)?,
        dice_csf: d[0],
        dice_gm: d[1],
        dice_wm: d[2],
        runtime_s,
    })
}

fn dirs(out: &Path) -> Result<()> {
    for d in ["data", "recon", "labels", "checkpoints"] {
        fs::create_dir_all(out.join(d))?;
    }
    Ok(())
}

/// Runs the configured experiment. Config errors are fatal; a failure in
/// one (method, sample) cell is recorded and the remaining cells still run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let out = cfg.output_dir.clone();
    dirs(&out)?;
    fs::write(out.join("config.json"), cfg.to_json())?;

    let train = generate(cfg, cfg.splits.train.seeds())?;
    let val = generate(cfg, cfg.splits.val.seeds())?;
    let test = generate(cfg, cfg.splits.test.seeds())?;
    // Scores use the stored copies so they can be recomputed from disk.
    for (i, s) in test.iter().enumerate() {
        save_sample(&out.join("data"), &format!("test_{i}"), s)?;
    }
    let test: Vec<JointSample> = (0..test.len())
        .map(|i| load_sample(&out.join("data"), &format!("test_{i}")))
        .collect::<Result<_>>()?;

    let mut log = TrainingLog::default();
    let models = train_models(cfg, &train, &val, &mut log);
    let mut failures = Vec::new();
    let ckpt = out.join("checkpoints");
    let stage_errors = [
        ("I-DSLR model", models.dslr.as_ref().and_then(|r| r.as_ref().err())),
        ("segmentation net", models.seg.as_ref().and_then(|r| r.as_ref().err())),
        ("end-to-end model", models.e2e.as_ref().and_then(|r| r.as_ref().err())),
    ];
    for (name, e) in stage_errors {
        if let Some(e) = e {
            failures.push(Failure { method: name.into(), sample: None, error: e.to_string() });
        }
    }
    if let Some(Ok(m)) = &models.dslr {
        save_model(&ckpt.join("dslr.ckpt"), m)?;
    }
    if let Some(Ok(p)) = &models.seg {
        save_seg(&ckpt.join("seg.ckpt"), p)?;
    }
    if let Some(Ok(j)) = &models.e2e {
        save_model(&ckpt.join("e2e_recon.ckpt"), &j.recon)?;
        save_seg(&ckpt.join("e2e_seg.ckpt"), &j.seg)?;
    }

    let mut engines: Vec<Engine> = cfg.methods.iter().map(|&m| engine(m)).collect();
    engines.sort();
    engines.dedup();

    // Reconstructions, quantised through the container, with their runtimes.
    let mut recons: BTreeMap<(Engine, usize), Result<(CoilImageSet, f64)>> = BTreeMap::new();
    for &e in &engines {
        let cells: Vec<Result<(CoilImageSet, f64)>> = test
            .par_iter()
            .map(|s| {
                let t0 = Instant::now();
                let r = run_engine(e, cfg, &models, s)?;
                let secs = t0.elapsed().as_secs_f64();
                Ok((Container::from_coils("recon", &r).to_coils()?, secs))
            })
            .collect();
        for (i, c) in cells.into_iter().enumerate() {
            recons.insert((e, i), c);
        }
    }

    let mut per_sample = Vec::new();
    for &m in &cfg.methods {
        let cells: Vec<(usize, Result<MetricsRow>)> = test
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let cell = || -> Result<MetricsRow> {
                    let (recon, secs) = match &recons[&(engine(m), i)] {
                        Ok(v) => v,
                        Err(e) => return Err(Error::InvalidArgument(e.to_string())),
                    };
                    let t0 = Instant::now();
                    let pred = label(m, recon, &models, cfg.seed)?;
                    let secs = secs + t0.elapsed().as_secs_f64();
                    write_container(&out.join("recon").join(format!("{m}_{i}.c64")), &Container::from_coils("recon", recon))?;
                    write_container(&out.join("labels").join(format!("{m}_{i}.labels")), &Container::from_labels("labels", &pred))?;
                    row_from_artifacts(m, s.ksp.mask.acceleration(), recon, &pred, &s.gold, &s.labels, secs)
                };
                (i, cell())
            })
            .collect();
        for (i, c) in cells {
            match c {
                Ok(r) => per_sample.push((i, r)),
                Err(e) => failures.push(Failure { method: m.tag().into(), sample: Some(i), error: e.to_string() }),
            }
        }
    }

    let pooled = pool(&cfg.methods, &per_sample);
    let mut counts: BTreeMap<String, DiceCounts> = BTreeMap::new();
    for (i, r) in &per_sample {
        let pred = read_container(&out.join("labels").join(format!("{}_{i}.labels", r.method)))?.to_labels()?;
        counts.entry(r.method.clone()).or_default().add(&DiceCounts::from_maps(&pred, &test[*i].labels)?);
    }
    let pooled_dice: Vec<MetricsRow> = pooled
        .iter()
        .map(|r| {
            let d = counts[&r.method].dice();
            MetricsRow { dice_csf: d[0], dice_gm: d[1], dice_wm: d[2], ..r.clone() }
        })
        .collect();
    write_per_sample_csv(&out.join(PER_SAMPLE_FILE), &per_sample)?;
    write_metrics_csv(&out.join(METRICS_FILE), &pooled)?;
    write_metrics_csv(&out.join(POOLED_DICE_FILE), &pooled_dice)?;
    fs::write(out.join("training_log.json"), serde_json::to_string_pretty(&log)?)?;
    fs::write(out.join("failures.json"), serde_json::to_string_pretty(&failures)?)?;
    Ok(ExperimentReport { output_dir: out, per_sample, pooled, pooled_dice, failures, training: log })
}

/// Per-method means over the test samples, in method order.
pub fn pool(methods: &[Method], per_sample: &[(usize, MetricsRow)]) -> Vec<MetricsRow> {
    methods
        .iter()
        .filter_map(|m| {
            let rows: Vec<&MetricsRow> = per_sample.iter().map(|p| &p.1).filter(|r| r.method == m.tag()).collect();
            if rows.is_empty() {
                return None;
            }
            let n = rows.len() as f64;
            let mean = |f: fn(&MetricsRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
            Some(MetricsRow {
                method: m.tag().to_string(),
                accel: rows[0].accel,
                snr_db: mean(|r| r.snr_db),
                dice_csf: mean(|r| r.dice_csf),
                dice_gm: mean(|r| r.dice_gm),
                dice_wm: mean(|r| r.dice_wm),
                runtime_s: mean(|r| r.runtime_s),
            })
        })
        .collect()
}

fn record(r: &MetricsRow) -> [String; 7] {
    [
        r.method.clone(),
        r.accel.to_string(),
        r.snr_db.to_string(),
        r.dice_csf.to_string(),
        r.dice_gm.to_string(),
        r.dice_wm.to_string(),
        r.runtime_s.to_string(),
    ]
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record(record(r))?;
    }
    w.flush()?;
    Ok(())
}

/// Same columns as the pooled table, preceded by the test-sample index.
pub fn write_per_sample_csv(path: &Path, rows: &[(usize, MetricsRow)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(std::iter::once("sample").chain(CSV_HEADER))?;
    for (i, r) in rows {
        w.write_record(std::iter::once(i.to_string()).chain(record(r)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut rd = csv::Reader::from_path(path)?;
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::InvalidArgument(format!("unexpected metrics columns {header:?}")));
    }
    Ok(rd.deserialize().collect::<std::result::Result<Vec<MetricsRow>, _>>()?)
}

/// Rescores every stored reconstruction and label map of a finished run.
/// `runtime_s` is taken from the per-sample table since it is not an artifact.
pub fn recompute_metrics(out: &Path) -> Result<Vec<(usize, MetricsRow)>> {
    let mut rd = csv::Reader::from_path(out.join(PER_SAMPLE_FILE))?;
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let i: usize = rec[0].parse().map_err(|_| Error::InvalidArgument("bad sample index".into()))?;
        let m: Method = rec[1].parse()?;
        let runtime: f64 = rec[7].parse().map_err(|_| Error::InvalidArgument("bad runtime".into()))?;
        let s = load_sample(&out.join("data"), &format!("test_{i}"))?;
        let recon = read_container(&out.join("recon").join(format!("{m}_{i}.c64")))?.to_coils()?;
        let pred = read_container(&out.join("labels").join(format!("{m}_{i}.labels")))?.to_labels()?;
        rows.push((i, row_from_artifacts(m, s.ksp.mask.acceleration(), &recon, &pred, &s.gold, &s.labels, runtime)?));
    }
    Ok(rows)
}

/// Largest absolute difference between two metric tables, ignoring
/// `runtime_s`. Row sets must match in method order.
pub fn max_metric_diff(a: &[MetricsRow], b: &[MetricsRow]) -> Result<f64> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.method != y.method) {
        return Err(Error::DimensionMismatch("metric tables list different rows".into()));
    }
    Ok(a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            [
                x.accel - y.accel,
                x.snr_db - y.snr_db,
                x.dice_csf - y.dice_csf,
                x.dice_gm - y.dice_gm,
                x.dice_wm - y.dice_wm,
            ]
        })
        .fold(0.0, |m, d| m.max(d.abs())))
}
