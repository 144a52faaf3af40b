//! Training loop: batch scheduling, the per-iteration update, windowed
//! progress logging, and periodic evaluation on EMA weights.
//!
//! Each iteration draws one labeled and one unlabeled batch, weakly augments
//! both, generates branch decisions from an unrecorded forward pass with the
//! current weights, then records a single tape over the labeled batch and the
//! strongly augmented unlabeled batch so both loss terms backpropagate into
//! shared parameter leaves. Progress rows report window means since the
//! previous row, so logging cadence never changes what is measured.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::augment::{self, StrongConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{self, EvalAccumulator};
use crate::models::{self, ModelState};
use crate::objective::{
    self, AblationMode, LossConfig, ThresholdMode, ThresholdPolicy,
};
use crate::ops;
use crate::rng;
use crate::tensor::Scalar;

/// Hyperparameters and schedule settings for one training run.
#[derive(Debug, Clone, Serialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub iterations: u64,
    /// Labeled batch size `B`.
    pub batch_size: usize,
    /// Unlabeled batches are `mu * B` samples.
    pub mu: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub ema_decay: f64,
    /// Weight on the unlabeled objective.
    pub lambda_u: f64,
    /// Confidence threshold separating the two unlabeled branches.
    pub tau: f64,
    /// Sharpening temperature for low-confidence targets.
    pub temperature: f64,
    pub threshold_mode: ThresholdMode,
    pub ablation: AblationMode,
    /// Extend the distribution-matching term to confident samples too.
    pub kl_all_samples: bool,
    /// RandAugment depth for the strong view.
    pub n_ops: usize,
    /// Apply cutout after the strong transforms.
    pub cutout: bool,
    pub log_interval: u64,
    pub eval_interval: u64,
    pub eval_batch: usize,
    pub ece_bins: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 1,
            iterations: 20_000,
            batch_size: 64,
            mu: 7,
            lr: 0.03,
            momentum: 0.9,
            weight_decay: 5e-4,
            ema_decay: 0.999,
            lambda_u: 1.0,
            tau: 0.95,
            temperature: 0.5,
            threshold_mode: ThresholdMode::Fixed,
            ablation: AblationMode::Both,
            kl_all_samples: false,
            n_ops: 2,
            cutout: true,
            log_interval: 100,
            eval_interval: 1000,
            eval_batch: 256,
            ece_bins: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("tau", self.tau),
            ("temperature", self.temperature),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::contract(format!("{name} must be positive, got {v}")));
            }
        }
        if self.tau > 1.0 {
            return Err(Error::contract(format!("tau must be in (0,1], got {}", self.tau)));
        }
        for (name, v) in [("momentum", self.momentum), ("ema_decay", self.ema_decay)] {
            if !(v.is_finite() && (0.0..1.0).contains(&v)) {
                return Err(Error::contract(format!("{name} must be in [0,1), got {v}")));
            }
        }
        if !(self.lambda_u.is_finite() && self.lambda_u >= 0.0) {
            return Err(Error::contract(format!(
                "lambda_u must be nonnegative, got {}",
                self.lambda_u
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::contract(format!(
                "weight_decay must be nonnegative, got {}",
                self.weight_decay
            )));
        }
        for (name, v) in [
            ("iterations", self.iterations),
            ("log_interval", self.log_interval),
            ("eval_interval", self.eval_interval),
        ] {
            if v == 0 {
                return Err(Error::contract(format!("{name} must be at least 1")));
            }
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("mu", self.mu),
            ("n_ops", self.n_ops),
            ("eval_batch", self.eval_batch),
            ("ece_bins", self.ece_bins),
        ] {
            if v == 0 {
                return Err(Error::contract(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    fn loss_config(&self) -> LossConfig {
        LossConfig {
            lambda_u: self.lambda_u,
            temperature: self.temperature,
            mode: self.ablation,
            kl_all_samples: self.kl_all_samples,
        }
    }

    fn strong_config(&self) -> StrongConfig {
        StrongConfig {
            n_ops: self.n_ops,
            cutout: self.cutout,
        }
    }
}

/// Cosine decay without restarts: `lr * cos(7*pi*t / (16*total))`, so the
/// rate ends near a fifth of its initial value rather than at zero.
pub fn cosine_lr(base: f64, step: u64, total: u64) -> f64 {
    base * (7.0 * std::f64::consts::PI * step as f64 / (16.0 * total as f64)).cos()
}

/// Endless shuffled-epoch sampler: every epoch is a fresh permutation of the
/// dataset, batches read it in order, and a batch may span the epoch
/// boundary so no sample is dropped or repeated within an epoch.
pub struct IndexCycler {
    n: usize,
    seed: u64,
    domain: u64,
    epoch: u64,
    perm: Vec<usize>,
    pos: usize,
}

impl IndexCycler {
    pub fn new(n: usize, seed: u64, domain: u64) -> Result<IndexCycler> {
        if n == 0 {
            return Err(Error::contract("cannot cycle over an empty dataset"));
        }
        let mut c = IndexCycler {
            n,
            seed,
            domain,
            epoch: 0,
            perm: Vec::new(),
            pos: 0,
        };
        c.reshuffle();
        Ok(c)
    }

    fn reshuffle(&mut self) {
        let mut r = rng::stream(self.seed, self.domain, self.epoch, 0);
        let mut perm: Vec<usize> = (0..self.n).collect();
        perm.shuffle(&mut r);
        self.perm = perm;
        self.pos = 0;
    }

    pub fn next_batch(&mut self, k: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.pos == self.n {
                self.epoch += 1;
                self.reshuffle();
            }
            out.push(self.perm[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// One progress row. Loss and ratio columns are means over the window since
/// the previous row; evaluation columns are present only on rows where an
/// evaluation ran.
#[derive(Debug, Clone, Serialize)]
pub struct LogRow {
    pub iteration: u64,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_sup: f64,
    pub loss_unsup_ce: f64,
    pub loss_kl: f64,
    pub mask_ratio: f64,
    pub utilization: f64,
    pub pseudo_acc: Option<f64>,
    pub eval_top1: Option<f64>,
    pub eval_top5: Option<f64>,
    pub eval_ece: Option<f64>,
}

pub const CSV_HEADER: &str = "iteration,lr,loss_total,loss_sup,loss_unsup_ce,loss_kl,\
mask_ratio,utilization,pseudo_acc,eval_top1,eval_top5,eval_ece";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl LogRow {
    /// Renders the row in the header's column order; absent optionals render
    /// as empty fields.
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.lr,
            self.loss_total,
            self.loss_sup,
            self.loss_unsup_ce,
            self.loss_kl,
            self.mask_ratio,
            self.utilization,
            opt(self.pseudo_acc),
            opt(self.eval_top1),
            opt(self.eval_top5),
            opt(self.eval_ece),
        )
    }
}

/// Final-run statistics reported alongside the row log.
#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub iterations: u64,
    pub best_top1_error: f64,
    pub best_iteration: u64,
    /// Median top-1 error over the last (up to) 20 evaluation points.
    pub median_top1_last20: f64,
    pub final_top1_error: f64,
    pub final_ece: f64,
    pub wall_seconds: f64,
}

#[derive(Default)]
struct Window {
    iters: u64,
    total: f64,
    sup: f64,
    ce: f64,
    kl: f64,
    hard: u64,
    soft: u64,
    pl_total: u64,
    pl_correct: u64,
}

impl Window {
    fn flush(&mut self, iteration: u64, lr: f64, mode: AblationMode) -> LogRow {
        let n = if self.iters == 0 { 1.0 } else { self.iters as f64 };
        let (mask, utilization) = metrics::mask_and_utilization(self.hard, self.soft, mode);
        let row = LogRow {
            iteration,
            lr,
            loss_total: self.total / n,
            loss_sup: self.sup / n,
            loss_unsup_ce: self.ce / n,
            loss_kl: self.kl / n,
            mask_ratio: mask,
            utilization,
            pseudo_acc: (self.pl_total > 0).then(|| self.pl_correct as f64 / self.pl_total as f64),
            eval_top1: None,
            eval_top5: None,
            eval_ece: None,
        };
        *self = Window::default();
        row
    }
}

/// Runs the whole eval split through an unrecorded forward pass in batches
/// and collects softmax predictions.
pub fn evaluate<S: Scalar>(
    state: &ModelState<S>,
    params: &crate::models::ParamMap<S>,
    ds: &Dataset<S>,
    batch: usize,
) -> Result<EvalAccumulator> {
    let labels = ds
        .labels
        .as_ref()
        .ok_or_else(|| Error::data("evaluation split has no labels"))?;
    let mut acc = EvalAccumulator::new(state.spec.classes);
    let mut start = 0;
    while start < ds.len() {
        let end = (start + batch).min(ds.len());
        let idx: Vec<usize> = (start..end).collect();
        let images = ds.gather_images(&idx)?;
        let logits = models::forward_infer(&state.spec, params, &images)?;
        let probs = ops::softmax(&logits, 1)?;
        acc.push_batch(&probs, &labels[start..end])?;
        start = end;
    }
    Ok(acc)
}

fn check_datasets<S: Scalar>(
    state: &ModelState<S>,
    labeled: &Dataset<S>,
    unlabeled: &Dataset<S>,
    eval: &Dataset<S>,
) -> Result<()> {
    for (name, ds) in [("labeled", labeled), ("unlabeled", unlabeled), ("eval", eval)] {
        ds.validate()?;
        let sh = ds.images.shape();
        let spec = &state.spec;
        if sh[1] != spec.in_channels || sh[2] != spec.height || sh[3] != spec.width {
            return Err(Error::dim(format!(
                "{name} split geometry {:?} does not match model {}x{}x{}",
                &sh[1..],
                spec.in_channels,
                spec.height,
                spec.width
            )));
        }
        if ds.classes != spec.classes {
            return Err(Error::data(format!(
                "{name} split declares {} classes, model has {}",
                ds.classes, spec.classes
            )));
        }
    }
    if labeled.labels.is_none() {
        return Err(Error::data("labeled split has no labels"));
    }
    if unlabeled.labels.is_some() {
        return Err(Error::data(
            "unlabeled split still carries labels; strip them before training",
        ));
    }
    if eval.labels.is_none() {
        return Err(Error::data("evaluation split has no labels"));
    }
    Ok(())
}

/// Trains `state` in place and returns the run summary. Every emitted
/// progress row is passed to `sink` in order (the caller formats or stores
/// them). On a non-finite loss or forward pass the pending window is flushed
/// as a final diagnostic row before the error is returned.
pub fn train<S: Scalar>(
    state: &mut ModelState<S>,
    labeled: &Dataset<S>,
    unlabeled: &Dataset<S>,
    eval: &Dataset<S>,
    cfg: &TrainConfig,
    sink: &mut dyn FnMut(&LogRow),
) -> Result<TrainSummary> {
    cfg.validate()?;
    check_datasets(state, labeled, unlabeled, eval)?;
    let started = Instant::now();

    let labels = labeled.labels.as_ref().expect("checked above");
    let hidden = unlabeled.hidden_labels.as_ref();
    let mut labeled_order =
        IndexCycler::new(labeled.len(), cfg.seed, rng::DOMAIN_LABELED_ORDER)?;
    let mut unlabeled_order =
        IndexCycler::new(unlabeled.len(), cfg.seed, rng::DOMAIN_UNLABELED_ORDER)?;
    let mut policy = ThresholdPolicy::new(cfg.threshold_mode, cfg.tau, state.spec.classes)?;
    let loss_cfg = cfg.loss_config();
    let strong_cfg = cfg.strong_config();
    let unlabeled_batch = cfg.mu * cfg.batch_size;

    let mut window = Window::default();
    let mut evals: Vec<(u64, f64, f64)> = Vec::new();

    for step in 0..cfg.iterations {
        let iteration = step + 1;
        let lr = cosine_lr(cfg.lr, step, cfg.iterations);

        let lab_idx = labeled_order.next_batch(cfg.batch_size);
        let unl_idx = unlabeled_order.next_batch(unlabeled_batch);

        let outcome = (|| -> Result<()> {
            let lab_weak = augment::augment_weak_batch(
                &labeled.gather_images(&lab_idx)?,
                cfg.seed,
                rng::DOMAIN_WEAK_LABELED,
                step,
            )?;
            let unl_images = unlabeled.gather_images(&unl_idx)?;
            let unl_weak = augment::augment_weak_batch(
                &unl_images,
                cfg.seed,
                rng::DOMAIN_WEAK_UNLABELED,
                step,
            )?;
            let unl_strong =
                augment::augment_strong_batch(&unl_images, cfg.seed, step, &strong_cfg)?;

            // Branch decisions come from an unrecorded pass with the current
            // weights; nothing from this pass receives gradient.
            let weak_logits = models::forward_infer(&state.spec, &state.params, &unl_weak)?;
            let weak_probs = ops::softmax(&weak_logits, 1)?;
            let decisions = objective::select_branches(&weak_probs, &mut policy)?;

            let mut tape = crate::tape::Tape::new();
            let taped = models::leaf_params(&mut tape, &state.params);
            let sup_logits = models::forward_train(&state.spec, &mut tape, &taped, &lab_weak)?;
            let strong_logits =
                models::forward_train(&state.spec, &mut tape, &taped, &unl_strong)?;
            let batch_labels: Vec<usize> = lab_idx.iter().map(|&i| labels[i]).collect();
            let (nodes, bd) = objective::build_loss(
                &mut tape,
                sup_logits,
                &batch_labels,
                strong_logits,
                &weak_logits,
                &decisions,
                &loss_cfg,
            )?;
            if !bd.total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss at iteration {iteration}: total={} sup={} ce={} kl={}",
                    bd.total, bd.sup, bd.unsup_ce, bd.kl
                )));
            }

            let grads = tape.backward(nodes.total)?;
            let mut grad_map = crate::models::ParamMap::new();
            for (name, id) in taped.iter() {
                grad_map.insert(name.clone(), grads.get_or_zeros(id));
            }
            models::sgd_step(
                state,
                &grad_map,
                S::from_f64_lossy(lr),
                S::from_f64_lossy(cfg.momentum),
                S::from_f64_lossy(cfg.weight_decay),
            )?;
            models::ema_update(state, S::from_f64_lossy(cfg.ema_decay));

            window.iters += 1;
            window.total += bd.total;
            window.sup += bd.sup;
            window.ce += bd.unsup_ce;
            window.kl += bd.kl;
            window.hard += bd.hard_count as u64;
            window.soft += bd.soft_count as u64;
            if let Some(hidden) = hidden {
                for (d, &i) in decisions.iter().zip(&unl_idx) {
                    if d.branch == objective::Branch::Hard {
                        window.pl_total += 1;
                        if d.class == hidden[i] {
                            window.pl_correct += 1;
                        }
                    }
                }
            }
            Ok(())
        })();

        if let Err(e) = outcome {
            return Err(match e {
                Error::NonFinite(msg) => {
                    let row = window.flush(iteration, lr, cfg.ablation);
                    sink(&row);
                    Error::NonFinite(format!(
                        "aborted at iteration {iteration} (last good iteration {}): {msg}",
                        iteration - 1
                    ))
                }
                other => other,
            });
        }

        let is_final = iteration == cfg.iterations;
        let do_eval = iteration % cfg.eval_interval == 0 || is_final;
        let do_log = iteration % cfg.log_interval == 0 || do_eval;
        if do_log {
            let mut row = window.flush(iteration, lr, cfg.ablation);
            if do_eval {
                let acc = evaluate(state, &state.ema, eval, cfg.eval_batch)?;
                let top1 = acc.top_k_error(1);
                let ece = acc.ece(cfg.ece_bins);
                row.eval_top1 = Some(top1);
                row.eval_top5 = Some(acc.top_k_error(5));
                row.eval_ece = Some(ece);
                evals.push((iteration, top1, ece));
                policy.refresh();
            }
            sink(&row);
        }
    }

    let (best_iteration, best_top1_error) = evals
        .iter()
        .fold(None, |best: Option<(u64, f64)>, &(it, e, _)| match best {
            Some((_, be)) if be <= e => best,
            _ => Some((it, e)),
        })
        .expect("final evaluation always runs");
    let tail: Vec<f64> = evals
        .iter()
        .rev()
        .take(20)
        .map(|&(_, e, _)| e)
        .collect();
    let (_, final_top1_error, final_ece) = *evals.last().expect("final evaluation always runs");

    Ok(TrainSummary {
        iterations: cfg.iterations,
        best_top1_error,
        best_iteration,
        median_top1_last20: median(tail),
        final_top1_error,
        final_ece,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite errors"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data;
    use crate::models::{Arch, ModelSpec};

    #[test]
    fn cosine_schedule_endpoints_and_monotonicity() {
        let total = 1000;
        assert_eq!(cosine_lr(0.03, 0, total), 0.03);
        let last = cosine_lr(0.03, total, total);
        let want = 0.03 * (7.0 * std::f64::consts::PI / 16.0).cos();
        assert!((last - want).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for t in (0..=total).step_by(100) {
            let lr = cosine_lr(0.03, t, total);
            assert!(lr < prev);
            assert!(lr > 0.0);
            prev = lr;
        }
    }

    #[test]
    fn cycler_visits_each_index_once_per_epoch() {
        let mut c = IndexCycler::new(5, 7, rng::DOMAIN_LABELED_ORDER).unwrap();
        // Two batches of 2 plus one of 2 spans the epoch boundary: the first
        // 5 draws are a permutation of 0..5 and the 6th starts epoch 1.
        let draws: Vec<usize> = (0..3).flat_map(|_| c.next_batch(2)).collect();
        let mut first_epoch = draws[..5].to_vec();
        first_epoch.sort_unstable();
        assert_eq!(first_epoch, vec![0, 1, 2, 3, 4]);

        let mut again = IndexCycler::new(5, 7, rng::DOMAIN_LABELED_ORDER).unwrap();
        let replay: Vec<usize> = (0..3).flat_map(|_| again.next_batch(2)).collect();
        assert_eq!(draws, replay);

        let mut other_seed = IndexCycler::new(5, 8, rng::DOMAIN_LABELED_ORDER).unwrap();
        let other: Vec<usize> = (0..3).flat_map(|_| other_seed.next_batch(2)).collect();
        assert_ne!(draws, other);
    }

    #[test]
    fn csv_row_formats_optionals_as_empty() {
        let row = LogRow {
            iteration: 100,
            lr: 0.03,
            loss_total: 1.5,
            loss_sup: 1.0,
            loss_unsup_ce: 0.25,
            loss_kl: 0.25,
            mask_ratio: 0.5,
            utilization: 1.0,
            pseudo_acc: None,
            eval_top1: Some(12.5),
            eval_top5: None,
            eval_ece: None,
        };
        assert_eq!(row.to_csv(), "100,0.03,1.5,1,0.25,0.25,0.5,1,,12.5,,");
        assert_eq!(CSV_HEADER.split(',').count(), row.to_csv().split(',').count());
    }

    #[test]
    fn median_handles_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(vec![5.0]), 5.0);
    }

    fn tiny_setup() -> (ModelState<f32>, Dataset<f32>, Dataset<f32>, Dataset<f32>) {
        let ds: Dataset<f32> = data::gen_shapes(11, 60, 3, 8).unwrap();
        let labels = ds.labels.clone().unwrap();
        let (lab_idx, unl_idx) = data::balanced_split(&labels, 3, 4, 11).unwrap();
        let labeled = ds.subset(&lab_idx).unwrap();
        let unlabeled = ds.subset(&unl_idx).unwrap().into_unlabeled();
        let eval: Dataset<f32> = data::gen_shapes(12, 30, 3, 8).unwrap();
        let spec = ModelSpec {
            arch: Arch::Mlp { hidden: vec![8] },
            in_channels: 1,
            height: 8,
            width: 8,
            classes: 3,
        };
        let state = models::init(&spec, 5).unwrap();
        (state, labeled, unlabeled, eval)
    }

    #[test]
    fn short_run_emits_expected_rows_and_is_deterministic() {
        let run = || {
            let (mut state, labeled, unlabeled, eval) = tiny_setup();
            let cfg = TrainConfig {
                iterations: 6,
                batch_size: 4,
                mu: 2,
                log_interval: 2,
                eval_interval: 3,
                eval_batch: 16,
                ..TrainConfig::default()
            };
            let mut rows = Vec::new();
            let summary = train(
                &mut state,
                &labeled,
                &unlabeled,
                &eval,
                &cfg,
                &mut |r: &LogRow| rows.push(r.to_csv()),
            )
            .unwrap();
            (rows, summary)
        };
        let (rows, summary) = run();
        // Rows at 2 (log), 3 (eval), 4 (log), 6 (log+eval+final).
        let iters: Vec<u64> = rows
            .iter()
            .map(|r| r.split(',').next().unwrap().parse().unwrap())
            .collect();
        assert_eq!(iters, vec![2, 3, 4, 6]);
        let eval_cols: Vec<bool> = rows
            .iter()
            .map(|r| !r.split(',').nth(9).unwrap().is_empty())
            .collect();
        assert_eq!(eval_cols, vec![false, true, false, true]);
        assert_eq!(summary.iterations, 6);
        assert!(summary.final_top1_error >= 0.0 && summary.final_top1_error <= 100.0);
        assert!(summary.best_top1_error <= summary.final_top1_error);

        let (rows2, summary2) = run();
        assert_eq!(rows, rows2);
        assert_eq!(summary.best_top1_error, summary2.best_top1_error);
        assert_eq!(summary.best_iteration, summary2.best_iteration);
    }

    #[test]
    fn rejects_labeled_pool_posing_as_unlabeled() {
        let (mut state, labeled, _unlabeled, eval) = tiny_setup();
        let still_labeled = labeled.clone();
        let cfg = TrainConfig {
            iterations: 1,
            batch_size: 2,
            mu: 1,
            ..TrainConfig::default()
        };
        let err = train(
            &mut state,
            &labeled,
            &still_labeled,
            &eval,
            &cfg,
            &mut |_| {},
        )
        .unwrap_err();
        assert!(err.to_string().contains("unlabeled"));
    }

    #[test]
    fn config_validation_rejects_out_of_range() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            TrainConfig { tau: 0.0, ..TrainConfig::default() },
            TrainConfig { tau: 1.5, ..TrainConfig::default() },
            TrainConfig { temperature: 0.0, ..TrainConfig::default() },
            TrainConfig { momentum: 1.0, ..TrainConfig::default() },
            TrainConfig { lambda_u: -1.0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { iterations: 0, ..TrainConfig::default() },
            TrainConfig { ece_bins: 0, ..TrainConfig::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
