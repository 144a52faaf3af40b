//! Flat key=value run configuration for `rfx train`.
//!
//! One document covers the training hyperparameters, the model architecture,
//! and the dataset/output paths. Every key has a default, unknown keys are
//! rejected, `--set key=value` overrides the file, and `RFX_SEED` overrides
//! whichever seed both of those produced. The fully resolved document is
//! written back as `config.resolved` so a run can be replayed exactly.

use std::collections::BTreeMap;
use std::path::PathBuf;

use refix::error::{Error, Result};
use refix::models::Arch;
use refix::objective::{AblationMode, ThresholdMode};
use refix::trainer::TrainConfig;

/// Every config key with its default value and one-line description.
/// Defaults mirror the reference training regime (tau 0.95, T 0.5,
/// lambda_u 1, mu 7, B 64, momentum 0.9, EMA 0.999).
pub const KEYS: &[(&str, &str, &str)] = &[
    ("ablation", "both", "unlabeled loss branches: both | hard_only | soft_only"),
    ("arch", "mlp", "model architecture: mlp | smallconv"),
    ("batch_size", "64", "labeled batch size B"),
    ("conv1", "16", "smallconv: first conv channel count"),
    ("conv2", "32", "smallconv: second conv channel count"),
    ("cutout", "true", "apply cutout after the strong transforms"),
    ("ece_bins", "10", "equal-width confidence bins for calibration error"),
    ("ema_decay", "0.999", "parameter EMA decay (evaluation weights)"),
    ("eval", "data/eval", "evaluation dataset directory"),
    ("eval_batch", "256", "evaluation forward-pass batch size"),
    ("eval_interval", "1000", "iterations between evaluations"),
    ("hidden", "64", "mlp: comma-separated hidden layer widths"),
    ("iterations", "20000", "total optimizer steps K"),
    ("kl_all_samples", "false", "extend the soft term to confident samples"),
    ("labeled", "data/labeled", "labeled dataset directory"),
    ("lambda_u", "1", "weight on the unlabeled objective"),
    ("log_interval", "100", "iterations between progress rows"),
    ("lr", "0.03", "initial learning rate (cosine-decayed)"),
    ("momentum", "0.9", "SGD momentum"),
    ("mu", "7", "unlabeled-to-labeled batch size ratio"),
    ("n_ops", "2", "random transforms per strong augmentation"),
    ("out", "runs/run", "output directory for logs and checkpoints"),
    ("seed", "1", "master seed for all derived random streams"),
    ("tau", "0.95", "confidence threshold between branches"),
    ("temperature", "0.5", "sharpening temperature for soft targets"),
    ("threshold_mode", "fixed", "threshold policy: fixed | cpl"),
    ("unlabeled", "data/unlabeled", "unlabeled dataset directory"),
    ("weight_decay", "0.0005", "L2 weight decay folded into the gradient"),
];

/// Fully typed run configuration plus the resolved key=value map it came
/// from.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub arch: Arch,
    pub labeled: PathBuf,
    pub unlabeled: PathBuf,
    pub eval: PathBuf,
    pub out: PathBuf,
    resolved: BTreeMap<String, String>,
}

fn parse_line(line: &str, lineno: usize) -> Result<Option<(String, String)>> {
    let trimmed = line.trim();
    if trimmed.is_empty() || trimmed.starts_with('#') {
        return Ok(None);
    }
    let (k, v) = trimmed.split_once('=').ok_or_else(|| {
        Error::Contract(format!("config line {lineno}: expected key = value, got {trimmed:?}"))
    })?;
    Ok(Some((k.trim().to_string(), v.trim().to_string())))
}

fn known(key: &str) -> bool {
    KEYS.iter().any(|(k, _, _)| *k == key)
}

fn defaults() -> BTreeMap<String, String> {
    KEYS.iter().map(|(k, d, _)| (k.to_string(), d.to_string())).collect()
}

impl RunConfig {
    /// Builds the effective configuration: defaults, then the file, then
    /// `--set` overrides, then `RFX_SEED` from the environment.
    pub fn resolve(file: Option<&str>, sets: &[String]) -> Result<RunConfig> {
        let mut map = defaults();
        if let Some(text) = file {
            let mut seen = BTreeMap::new();
            for (lineno, line) in text.lines().enumerate() {
                if let Some((k, v)) = parse_line(line, lineno + 1)? {
                    if !known(&k) {
                        return Err(Error::Contract(format!(
                            "config line {}: unknown key {k:?}",
                            lineno + 1
                        )));
                    }
                    if let Some(prev) = seen.insert(k.clone(), lineno + 1) {
                        return Err(Error::Contract(format!(
                            "config line {}: key {k:?} already set on line {prev}",
                            lineno + 1
                        )));
                    }
                    map.insert(k, v);
                }
            }
        }
        for s in sets {
            let (k, v) = s.split_once('=').ok_or_else(|| {
                Error::Contract(format!("--set expects key=value, got {s:?}"))
            })?;
            let (k, v) = (k.trim(), v.trim());
            if !known(k) {
                return Err(Error::Contract(format!("--set: unknown key {k:?}")));
            }
            map.insert(k.to_string(), v.to_string());
        }
        if let Ok(seed) = std::env::var("RFX_SEED") {
            let _: u64 = parse(&seed, "RFX_SEED")?;
            map.insert("seed".to_string(), seed);
        }
        RunConfig::from_map(map)
    }

    fn from_map(map: BTreeMap<String, String>) -> Result<RunConfig> {
        let get = |k: &str| -> &str { map.get(k).map(String::as_str).expect("all keys defaulted") };
        let train = TrainConfig {
            seed: parse(get("seed"), "seed")?,
            iterations: parse(get("iterations"), "iterations")?,
            batch_size: parse(get("batch_size"), "batch_size")?,
            mu: parse(get("mu"), "mu")?,
            lr: parse(get("lr"), "lr")?,
            momentum: parse(get("momentum"), "momentum")?,
            weight_decay: parse(get("weight_decay"), "weight_decay")?,
            ema_decay: parse(get("ema_decay"), "ema_decay")?,
            lambda_u: parse(get("lambda_u"), "lambda_u")?,
            tau: parse(get("tau"), "tau")?,
            temperature: parse(get("temperature"), "temperature")?,
            threshold_mode: match get("threshold_mode") {
                "fixed" => ThresholdMode::Fixed,
                "cpl" => ThresholdMode::Cpl,
                other => {
                    return Err(Error::Contract(format!(
                        "threshold_mode must be fixed or cpl, got {other:?}"
                    )))
                }
            },
            ablation: match get("ablation") {
                "both" => AblationMode::Both,
                "hard_only" => AblationMode::HardOnly,
                "soft_only" => AblationMode::SoftOnly,
                other => {
                    return Err(Error::Contract(format!(
                        "ablation must be both, hard_only or soft_only, got {other:?}"
                    )))
                }
            },
            kl_all_samples: parse(get("kl_all_samples"), "kl_all_samples")?,
            n_ops: parse(get("n_ops"), "n_ops")?,
            cutout: parse(get("cutout"), "cutout")?,
            log_interval: parse(get("log_interval"), "log_interval")?,
            eval_interval: parse(get("eval_interval"), "eval_interval")?,
            eval_batch: parse(get("eval_batch"), "eval_batch")?,
            ece_bins: parse(get("ece_bins"), "ece_bins")?,
        };
        train.validate()?;
        let arch = match get("arch") {
            "mlp" => {
                let hidden = get("hidden")
                    .split(',')
                    .map(|p| parse(p.trim(), "hidden"))
                    .collect::<Result<Vec<usize>>>()?;
                Arch::Mlp { hidden }
            }
            "smallconv" => Arch::SmallConv {
                c1: parse(get("conv1"), "conv1")?,
                c2: parse(get("conv2"), "conv2")?,
            },
            other => {
                return Err(Error::Contract(format!(
                    "arch must be mlp or smallconv, got {other:?}"
                )))
            }
        };
        Ok(RunConfig {
            train,
            arch,
            labeled: PathBuf::from(get("labeled")),
            unlabeled: PathBuf::from(get("unlabeled")),
            eval: PathBuf::from(get("eval")),
            out: PathBuf::from(get("out")),
            resolved: map,
        })
    }

    /// The effective configuration as a replayable key=value document.
    pub fn resolved_document(&self) -> String {
        let mut out = String::from("# effective configuration; replay with: rfx train --config config.resolved\n");
        for (k, v) in &self.resolved {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

fn parse<T: std::str::FromStr>(v: &str, key: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| Error::Contract(format!("config key {key}: bad value {v:?}: {e}")))
}
