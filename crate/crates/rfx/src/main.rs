//! `rfx` — command-line front end for the refix engine: dataset generation
//! and splitting, semi-supervised training, evaluation, calibration reports,
//! and augmentation previews.
//!
//! Human-readable messages go to standard error; machine-readable output
//! (CSV logs, JSON reports, tensors, checkpoints) goes to files only. Exit
//! codes: 0 success, 2 configuration/usage error, 3 data error, 4 numeric
//! abort.

mod config;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use refix::augment::{self, Image};
use refix::data::{self, Dataset};
use refix::error::{Error, Result};
use refix::metrics;
use refix::models::{self, ModelSpec};
use refix::rng;
use refix::trainer::{self, LogRow};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "rfx", version, about = "semi-supervised image classification engine")]
struct Cli {
    /// Worker threads for data-parallel sections (0 = all cores). Results
    /// are identical for any value.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum DataKind {
    /// Glyph classification corpus (2..=12 classes).
    Shapes,
    /// Two interleaved crescents rendered to images (2 classes).
    Moons,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitMode {
    /// Equal labeled count per class.
    Balanced,
    /// Geometrically decaying class counts with a labeled fraction.
    LongTailed,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum PreviewView {
    Weak,
    Strong,
    Both,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic labeled dataset.
    GenData {
        #[arg(long, value_enum)]
        kind: DataKind,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 16)]
        size: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a labeled dataset into labeled and unlabeled training pools.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "balanced")]
        mode: SplitMode,
        /// Balanced mode: labeled samples kept per class.
        #[arg(long, default_value_t = 4)]
        per_class: usize,
        /// Long-tailed mode: head-class total count N1.
        #[arg(long, default_value_t = 1000)]
        n1: usize,
        /// Long-tailed mode: imbalance ratio between head and tail class.
        #[arg(long, default_value_t = 100.0)]
        lambda: f64,
        /// Long-tailed mode: labeled fraction per class.
        #[arg(long, default_value_t = 0.2)]
        beta: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Train from a key=value config file; writes config.resolved, log.csv,
    /// summary.json and a final checkpoint into the configured out dir.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override one config key, e.g. --set tau=0.9 (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Evaluate a checkpoint on a labeled dataset; writes metrics.json.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        ece_bins: usize,
        #[arg(long, default_value_t = 256)]
        batch: usize,
        /// Evaluate the raw weights instead of the EMA weights.
        #[arg(long)]
        raw_weights: bool,
    },
    /// Evaluate and additionally write reliability and confidence-histogram
    /// CSVs for calibration analysis.
    Calibrate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        ece_bins: usize,
        #[arg(long, default_value_t = 256)]
        batch: usize,
        #[arg(long)]
        raw_weights: bool,
    },
    /// Write one sample's original, weak and strong views as tensor files.
    AugmentPreview {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Iteration key for the augmentation stream.
        #[arg(long, default_value_t = 0)]
        iteration: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value = "both")]
        view: PreviewView,
    },
}

fn main() {
    let cli = Cli::parse();
    if cli.workers > 0 {
        // Ignore the error if a pool already exists; thread count never
        // affects results, only wall time.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.workers).build_global();
    }
    if let Err(e) = run(cli.cmd) {
        eprintln!("error: {e}");
        std::process::exit(match e {
            Error::Contract(_) => 2,
            Error::NonFinite(_) => 4,
            _ => 3,
        });
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenData { kind, classes, n, size, seed, out } => {
            cmd_gen_data(kind, classes, n, size, seed, &out)
        }
        Cmd::Split { data, out, mode, per_class, n1, lambda, beta, seed } => {
            cmd_split(&data, &out, mode, per_class, n1, lambda, beta, seed)
        }
        Cmd::Train { config, sets } => cmd_train(config.as_deref(), &sets),
        Cmd::Eval { checkpoint, data, out, ece_bins, batch, raw_weights } => {
            cmd_eval(&checkpoint, &data, &out, ece_bins, batch, raw_weights, false)
        }
        Cmd::Calibrate { checkpoint, data, out, ece_bins, batch, raw_weights } => {
            cmd_eval(&checkpoint, &data, &out, ece_bins, batch, raw_weights, true)
        }
        Cmd::AugmentPreview { data, out, index, iteration, seed, view } => {
            cmd_augment_preview(&data, &out, index, iteration, seed, view)
        }
    }
}

fn cmd_gen_data(
    kind: DataKind,
    classes: usize,
    n: usize,
    size: usize,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let ds: Dataset<f32> = match kind {
        DataKind::Shapes => data::gen_shapes(seed, n, classes, size)?,
        DataKind::Moons => data::gen_moons(seed, n, classes, size)?,
    };
    fs::create_dir_all(out)?;
    ds.save(out)?;
    eprintln!(
        "wrote {} samples ({} classes, {}x{}) to {}",
        n,
        classes,
        size,
        size,
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_split(
    data_dir: &Path,
    out: &Path,
    mode: SplitMode,
    per_class: usize,
    n1: usize,
    lambda: f64,
    beta: f64,
    seed: u64,
) -> Result<()> {
    let ds: Dataset<f32> = Dataset::load(data_dir)?;
    let labels = ds
        .labels
        .clone()
        .ok_or_else(|| Error::Data(format!("{}: dataset has no labels to split", data_dir.display())))?;
    let (lab_idx, unl_idx) = match mode {
        SplitMode::Balanced => data::balanced_split(&labels, ds.classes, per_class, seed)?,
        SplitMode::LongTailed => {
            data::long_tailed_split(&labels, ds.classes, n1, lambda, beta, seed)?
        }
    };
    let labeled = ds.subset(&lab_idx)?;
    let unlabeled = ds.subset(&unl_idx)?.into_unlabeled();

    let lab_dir = out.join("labeled");
    let unl_dir = out.join("unlabeled");
    fs::create_dir_all(&lab_dir)?;
    fs::create_dir_all(&unl_dir)?;
    labeled.save(&lab_dir)?;
    unlabeled.save(&unl_dir)?;

    let mut report = String::from("class,labeled,unlabeled\n");
    for c in 0..ds.classes {
        let count = |idx: &[usize]| idx.iter().filter(|&&i| labels[i] == c).count();
        report.push_str(&format!("{c},{},{}\n", count(&lab_idx), count(&unl_idx)));
    }
    fs::write(out.join("split_report.csv"), report)?;
    eprintln!(
        "split {}: {} labeled / {} unlabeled (report in split_report.csv)",
        data_dir.display(),
        lab_idx.len(),
        unl_idx.len()
    );
    Ok(())
}

fn cmd_train(config_path: Option<&Path>, sets: &[String]) -> Result<()> {
    let text = match config_path {
        Some(p) => Some(fs::read_to_string(p).map_err(|e| {
            Error::Contract(format!("cannot read config {}: {e}", p.display()))
        })?),
        None => None,
    };
    let cfg = RunConfig::resolve(text.as_deref(), sets)?;
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("config.resolved"), cfg.resolved_document())?;

    let labeled: Dataset<f32> = Dataset::load(&cfg.labeled)?;
    let unlabeled: Dataset<f32> = Dataset::load(&cfg.unlabeled)?;
    let eval: Dataset<f32> = Dataset::load(&cfg.eval)?;
    let sh = labeled.images.shape();
    let spec = ModelSpec {
        arch: cfg.arch.clone(),
        in_channels: sh[1],
        height: sh[2],
        width: sh[3],
        classes: labeled.classes,
    };
    let mut state = models::init::<f32>(&spec, cfg.train.seed)?;

    let mut log = String::from(trainer::CSV_HEADER);
    log.push('\n');
    let outcome = trainer::train(
        &mut state,
        &labeled,
        &unlabeled,
        &eval,
        &cfg.train,
        &mut |row: &LogRow| {
            log.push_str(&row.to_csv());
            log.push('\n');
        },
    );
    // The log is written even when the run aborts, so the diagnostic row
    // from a numeric failure is preserved.
    fs::write(cfg.out.join("log.csv"), &log)?;
    let summary = outcome?;
    fs::write(
        cfg.out.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n",
    )?;
    data::save_checkpoint(&cfg.out.join("checkpoint"), &state, summary.iterations)?;
    eprintln!(
        "done: best top-1 error {:.3}% at iteration {}; final {:.3}% (ece {:.3}); artifacts in {}",
        summary.best_top1_error,
        summary.best_iteration,
        summary.final_top1_error,
        summary.final_ece,
        cfg.out.display()
    );
    Ok(())
}

fn cmd_eval(
    checkpoint: &Path,
    data_dir: &Path,
    out: &Path,
    ece_bins: usize,
    batch: usize,
    raw_weights: bool,
    calibrate: bool,
) -> Result<()> {
    if batch == 0 || ece_bins == 0 {
        return Err(Error::Contract("batch and ece-bins must be at least 1".into()));
    }
    let ckpt = data::load_checkpoint::<f32>(checkpoint)?;
    let ds: Dataset<f32> = Dataset::load(data_dir)?;
    let params = if raw_weights { &ckpt.state.params } else { &ckpt.state.ema };
    let acc = trainer::evaluate(&ckpt.state, params, &ds, batch)?;
    let report = acc.report(ece_bins);
    fs::create_dir_all(out)?;
    fs::write(
        out.join("metrics.json"),
        serde_json::to_string_pretty(&report).expect("report serializes") + "\n",
    )?;
    if calibrate {
        let bins = acc.ece_bins(ece_bins);
        fs::write(out.join("reliability.csv"), metrics::bins_to_csv(&bins))?;
        let mut hist = String::from("bin_lo,bin_hi,count,weight\n");
        for b in &bins {
            hist.push_str(&format!(
                "{},{},{},{}\n",
                b.lo,
                b.hi,
                b.count,
                b.count as f64 / acc.len() as f64
            ));
        }
        fs::write(out.join("confidence_hist.csv"), hist)?;
    }
    eprintln!(
        "evaluated {} samples from checkpoint iteration {}: top-1 error {:.3}%, ece {:.3} ({})",
        acc.len(),
        ckpt.iteration,
        report.top1_error,
        report.ece,
        out.display()
    );
    Ok(())
}

fn cmd_augment_preview(
    data_dir: &Path,
    out: &Path,
    index: usize,
    iteration: u64,
    seed: u64,
    view: PreviewView,
) -> Result<()> {
    let ds: Dataset<f32> = Dataset::load(data_dir)?;
    if index >= ds.len() {
        return Err(Error::Contract(format!(
            "sample index {index} out of range for {} samples",
            ds.len()
        )));
    }
    let img = Image::from_batch(&ds.images, index)?;
    let (h, w) = (img.height(), img.width());
    fs::create_dir_all(out)?;
    data::write_tensor(&out.join("before.rfxt"), &img.to_tensor())?;
    if view != PreviewView::Strong {
        let mut r = rng::stream(seed, rng::DOMAIN_WEAK_UNLABELED, iteration, index as u64);
        let weak = augment::apply_weak(&img, &augment::sample_weak(&mut r, h, w));
        data::write_tensor(&out.join("weak.rfxt"), &weak.to_tensor())?;
    }
    if view != PreviewView::Weak {
        let mut r = rng::stream(seed, rng::DOMAIN_STRONG, iteration, index as u64);
        let plan = augment::sample_strong(&mut r, &augment::StrongConfig::default(), h, w);
        let strong = augment::apply_strong(&img, &plan);
        data::write_tensor(&out.join("strong.rfxt"), &strong.to_tensor())?;
        let ops: Vec<String> = plan
            .ops
            .iter()
            .map(|op| format!("{:?}({:.4})", op.kind, op.magnitude))
            .collect();
        eprintln!("strong plan: {}", ops.join(" -> "));
    }
    eprintln!("wrote preview tensors for sample {index} to {}", out.display());
    Ok(())
}
