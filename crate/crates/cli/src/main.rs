//! `pmri`: simulate, reconstruct, train, segment and evaluate.
//!
//! Every subcommand starts from the default experiment config, applies
//! `--config <file>` and then any explicit flags. Exit codes: 0 success,
//! 2 configuration or usage error, 3 numerical failure, 4 I/O error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pmri_core::bench::container::{read_container, write_container, Container};
use pmri_core::bench::data::{
    load_kspace, load_model, load_sample, load_seg, make_mask, mask_container, save_model, save_sample, save_seg,
    simulate,
};
use pmri_core::bench::experiment::{
    fit_dslr, fit_e2e, fit_seg, row_from_artifacts, write_metrics_csv, CSV_HEADER, METRICS_FILE,
};
use pmri_core::bench::{run_experiment, ExperimentConfig, Method};
use pmri_core::clearsolve::clear_reconstruct;
use pmri_core::idslr::{reconstruct, TrainState, UnrolledModel};
use pmri_core::mrisim::sos_image;
use pmri_core::segjoint::{kmeans_labels, segment, E2eState, JointModel};
use pmri_core::{Error, Result};

#[derive(Parser)]
#[command(name = "pmri", version, about = "Calibrationless parallel MRI reconstruction and segmentation")]
struct Cli {
    #[command(flatten)]
    cfg: Overrides,
    #[command(subcommand)]
    cmd: Cmd,
}

/// Flags mirroring experiment config keys.
#[derive(Args, Default)]
struct Overrides {
    /// JSON experiment config; flags below override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    rows: Option<usize>,
    #[arg(long, global = true)]
    cols: Option<usize>,
    #[arg(long, global = true)]
    coils: Option<usize>,
    #[arg(long, global = true)]
    acceleration: Option<f64>,
    #[arg(long, global = true)]
    center_lines: Option<usize>,
    #[arg(long, global = true)]
    noise_sigma: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    n_train: Option<usize>,
    #[arg(long, global = true)]
    n_test: Option<usize>,
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    seg_lr: Option<f64>,
    #[arg(long, global = true)]
    seg_epochs: Option<usize>,
    #[arg(long, global = true)]
    e2e_lr: Option<f64>,
    #[arg(long, global = true)]
    e2e_epochs: Option<usize>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long, global = true)]
    augment: Option<bool>,
    #[arg(long, global = true)]
    clear_lambda: Option<f64>,
    #[arg(long, global = true)]
    clear_outer: Option<usize>,
    /// Comma-separated method tags, e.g. `US,CLEAR,I-DSLR`.
    #[arg(long, global = true, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate phantoms; writes `<out>/sample_<seed>.{ksp,mask,gold,labels}`.
    Simulate {
        #[arg(long)]
        first_seed: u64,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write one variable-density sampling mask.
    MaskGen {
        #[arg(long)]
        mask_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// CLEAR reconstruction of `<input>.ksp` / `<input>.mask`.
    ReconClear {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the unrolled network on every sample in a directory.
    TrainDslr {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Unrolled-network reconstruction of `<input>.ksp` / `<input>.mask`.
    ReconDslr {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label a reconstruction with the segmentation net, or k-means without one.
    Segment {
        #[arg(long)]
        recon: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fine-tune reconstruction and segmentation jointly. Pretrains the
    /// segmentation net first unless `--seg-model` is given.
    TrainE2e {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        recon_model: PathBuf,
        #[arg(long)]
        seg_model: Option<PathBuf>,
        /// Directory receiving `seg.ckpt`, `e2e_recon.ckpt` and `e2e_seg.ckpt`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a reconstruction and label map against a sample; prints CSV.
    Evaluate {
        #[arg(long)]
        recon: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        sample: PathBuf,
        #[arg(long)]
        method: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full experiment; writes artifacts and metrics under the output dir.
    Run,
}

impl Overrides {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
            }
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($src:ident => $($dst:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$src.clone() { c.$($dst).+ = v; })*
            };
        }
        set!(
            rows => phantom.rows,
            cols => phantom.cols,
            coils => phantom.n_coils,
            acceleration => mask.acceleration,
            seed => seed,
            n_train => splits.train.count,
            n_test => splits.test.count,
            k => training.k,
            lr => training.lr,
            batch_size => training.batch_size,
            epochs => training.epochs,
            seg_lr => training.seg_lr,
            seg_epochs => training.seg_epochs,
            e2e_lr => training.e2e_lr,
            e2e_epochs => training.e2e_epochs,
            beta => training.beta,
            augment => training.augment,
            clear_lambda => clear.lambda,
            clear_outer => clear.n_outer,
            output_dir => output_dir,
        );
        if self.center_lines.is_some() {
            c.mask.center_lines = self.center_lines;
        }
        if self.noise_sigma.is_some() {
            c.noise_sigma = self.noise_sigma;
        }
        if let Some(ms) = &self.methods {
            c.methods = ms.iter().map(|m| m.parse()).collect::<Result<_>>()?;
        }
        c.validate()?;
        Ok(c)
    }
}

/// Splits `dir/stem` into its parts for the sample loaders.
fn stem(p: &Path) -> Result<(PathBuf, String)> {
    let dir = p.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    let name = p
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::InvalidArgument(format!("bad sample path {}", p.display())))?;
    Ok((dir, name.to_string()))
}

/// Sample stems in `dir`, sorted, found through their `.ksp` files.
fn stems(dir: &Path) -> Result<Vec<String>> {
    let mut out: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            name.strip_suffix(".ksp").map(str::to_string)
        })
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(Error::InvalidArgument(format!("no samples in {}", dir.display())));
    }
    Ok(out)
}

fn load_all(dir: &Path) -> Result<Vec<pmri_core::segjoint::JointSample>> {
    stems(dir)?.iter().map(|s| load_sample(dir, s)).collect()
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = cli.cfg.resolve()?;
    let t = &cfg.training;
    match &cli.cmd {
        Cmd::Simulate { first_seed, count, out } => {
            std::fs::create_dir_all(out)?;
            for seed in *first_seed..*first_seed + *count as u64 {
                save_sample(out, &format!("sample_{seed}"), &simulate(&cfg, seed)?)?;
            }
        }
        Cmd::MaskGen { mask_seed, out } => {
            write_container(out, &mask_container(&make_mask(&cfg, *mask_seed)?))?;
        }
        Cmd::ReconClear { input, out } => {
            let (dir, s) = stem(input)?;
            let (recon, trace) = clear_reconstruct(&load_kspace(&dir, &s)?, &cfg.clear)?;
            let c = Container::from_coils("recon", &recon).with_meta("method", "CLEAR").with_meta("rounds", trace.entries.len());
            write_container(out, &c)?;
        }
        Cmd::TrainDslr { data, out } => {
            let samples = load_all(data)?;
            let model = UnrolledModel::new(samples[0].ksp.n_coils(), t.k, cfg.seed);
            let st = fit_dslr(&cfg, TrainState::new(model, t.lr, t.batch_size, cfg.seed), &samples)?;
            save_model(out, &st.model)?;
            for (e, l) in st.epoch_losses.iter().enumerate() {
                println!("epoch {e} loss {l:.6e}");
            }
        }
        Cmd::ReconDslr { model, input, out } => {
            let (dir, s) = stem(input)?;
            let recon = reconstruct(&load_model(model)?, &load_kspace(&dir, &s)?)?;
            write_container(out, &Container::from_coils("recon", &recon).with_meta("method", "I-DSLR"))?;
        }
        Cmd::Segment { recon, model, out } => {
            let r = read_container(recon)?.to_coils()?;
            let (rows, cols) = r.shape();
            let sos = sos_image(&r);
            let labels = match model {
                Some(m) => segment(&sos, rows, cols, &load_seg(m)?)?.argmax(),
                None => kmeans_labels(&sos, rows, cols, cfg.seed)?,
            };
            write_container(out, &Container::from_labels("labels", &labels))?;
        }
        Cmd::TrainE2e { data, recon_model, seg_model, out } => {
            std::fs::create_dir_all(out)?;
            let samples = load_all(data)?;
            let seg = match seg_model {
                Some(p) => load_seg(p)?,
                None => {
                    let st = fit_seg(&cfg, &samples)?;
                    save_seg(&out.join("seg.ckpt"), &st.params)?;
                    st.params
                }
            };
            // Checkpoints on disk are the output of a training command.
            let joint = JointModel {
                recon: load_model(recon_model)?,
                seg,
                beta: t.beta,
                recon_trained: true,
                seg_trained: true,
            };
            let st = fit_e2e(&cfg, E2eState::new(joint, t.e2e_lr, t.batch_size, cfg.seed), &samples)?;
            save_model(&out.join("e2e_recon.ckpt"), &st.joint.recon)?;
            save_seg(&out.join("e2e_seg.ckpt"), &st.joint.seg)?;
        }
        Cmd::Evaluate { recon, labels, sample, method, out } => {
            let (dir, s) = stem(sample)?;
            let smp = load_sample(&dir, &s)?;
            let m: Method = method.parse()?;
            let r = read_container(recon)?.to_coils()?;
            let l = read_container(labels)?.to_labels()?;
            let row = row_from_artifacts(m, smp.ksp.mask.acceleration(), &r, &l, &smp.gold, &smp.labels, 0.0)?;
            match out {
                Some(p) => write_metrics_csv(p, &[row])?,
                None => print_rows(std::slice::from_ref(&row)),
            }
        }
        Cmd::Run => {
            let rep = run_experiment(&cfg)?;
            print_rows(&rep.pooled);
            for f in &rep.failures {
                eprintln!("failed: {} sample {:?}: {}", f.method, f.sample, f.error);
            }
            eprintln!("wrote {}", rep.output_dir.join(METRICS_FILE).display());
        }
    }
    Ok(())
}

fn print_rows(rows: &[pmri_core::bench::MetricsRow]) {
    println!("{}", CSV_HEADER.join(","));
    for r in rows {
        println!(
            "{},{},{},{},{},{},{}",
            r.method, r.accel, r.snr_db, r.dice_csf, r.dice_gm, r.dice_wm, r.runtime_s
        );
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
