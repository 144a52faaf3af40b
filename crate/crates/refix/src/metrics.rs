//! Evaluation and training-progress metrics.
//!
//! The accumulator stores one record per evaluated sample (probability row
//! plus true label), so merging two accumulators is concatenation and agrees
//! exactly with having streamed every sample through one accumulator —
//! metrics never depend on how evaluation was batched or sharded.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::objective::{AblationMode, Branch, BranchDecision};
use crate::tensor::{Scalar, Tensor};

/// One evaluated sample: its predicted distribution and true label.
#[derive(Debug, Clone, PartialEq)]
pub struct PredRecord {
    pub probs: Vec<f64>,
    pub label: usize,
}

impl PredRecord {
    /// Predicted class: highest probability, first index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (j, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = j;
            }
        }
        best
    }
}

/// Order-preserving store of evaluation records.
#[derive(Debug, Clone, Default)]
pub struct EvalAccumulator {
    classes: usize,
    records: Vec<PredRecord>,
}

/// One reliability-diagram bin.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct BinStat {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub accuracy: f64,
    pub confidence: f64,
}

/// Summary of one evaluation pass.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub samples: usize,
    /// Top-1 error, percent.
    pub top1_error: f64,
    /// Top-5 error, percent (zero when there are five or fewer classes).
    pub top5_error: f64,
    /// Expected calibration error, percent.
    pub ece: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Macro one-vs-rest AUC; absent when no class has both positives and
    /// negatives.
    pub auc: Option<f64>,
}

impl EvalAccumulator {
    pub fn new(classes: usize) -> Self {
        EvalAccumulator {
            classes,
            records: Vec::new(),
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[PredRecord] {
        &self.records
    }

    pub fn push(&mut self, probs: Vec<f64>, label: usize) -> Result<()> {
        if probs.len() != self.classes {
            return Err(Error::dim(format!(
                "record has {} probabilities for {} classes",
                probs.len(),
                self.classes
            )));
        }
        if label >= self.classes {
            return Err(Error::data(format!(
                "label {label} out of range for {} classes",
                self.classes
            )));
        }
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("prediction probabilities".into()));
        }
        self.records.push(PredRecord { probs, label });
        Ok(())
    }

    /// Pushes every row of an `[N,K]` probability tensor.
    pub fn push_batch<S: Scalar>(&mut self, probs: &Tensor<S>, labels: &[usize]) -> Result<()> {
        let sh = probs.shape();
        if sh.len() != 2 || sh[0] != labels.len() {
            return Err(Error::dim(format!(
                "push_batch: probs {:?} vs {} labels",
                sh,
                labels.len()
            )));
        }
        for (row, &label) in probs.data().chunks(sh[1]).zip(labels) {
            self.push(row.iter().map(|p| p.to_f64_lossy()).collect(), label)?;
        }
        Ok(())
    }

    /// Appends another accumulator's records. Equivalent — exactly — to
    /// having pushed those records here in the first place.
    pub fn merge(&mut self, other: EvalAccumulator) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::dim(format!(
                "merging accumulators over {} and {} classes",
                self.classes, other.classes
            )));
        }
        self.records.extend(other.records);
        Ok(())
    }

    /// Percent of samples whose label is not among the `k` highest-scoring
    /// classes (ties broken toward lower class indices).
    pub fn top_k_error(&self, k: usize) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        let k = k.min(self.classes);
        let hits = self
            .records
            .iter()
            .filter(|r| {
                let mut order: Vec<usize> = (0..self.classes).collect();
                order.sort_by(|&a, &b| {
                    r.probs[b]
                        .partial_cmp(&r.probs[a])
                        .expect("probabilities validated finite")
                        .then(a.cmp(&b))
                });
                order[..k].contains(&r.label)
            })
            .count();
        100.0 * (1.0 - hits as f64 / self.records.len() as f64)
    }

    /// Confusion counts `[true_class][predicted_class]`.
    pub fn confusion(&self) -> Vec<Vec<u64>> {
        let mut m = vec![vec![0u64; self.classes]; self.classes];
        for r in &self.records {
            m[r.label][r.argmax()] += 1;
        }
        m
    }

    /// Macro-averaged precision, recall, and F1 over classes; classes with a
    /// zero denominator contribute zero.
    pub fn macro_prf(&self) -> (f64, f64, f64) {
        let m = self.confusion();
        let k = self.classes;
        let (mut sp, mut sr, mut sf) = (0.0, 0.0, 0.0);
        for c in 0..k {
            let tp = m[c][c] as f64;
            let pred: f64 = (0..k).map(|t| m[t][c] as f64).sum();
            let truth: f64 = m[c].iter().map(|&v| v as f64).sum();
            let p = if pred > 0.0 { tp / pred } else { 0.0 };
            let r = if truth > 0.0 { tp / truth } else { 0.0 };
            let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
            sp += p;
            sr += r;
            sf += f;
        }
        (sp / k as f64, sr / k as f64, sf / k as f64)
    }

    /// Macro one-vs-rest AUC via the rank-sum formulation with midranks for
    /// ties (a tied positive/negative pair counts one half). Classes lacking
    /// positives or negatives are skipped; `None` if every class is skipped.
    pub fn ovr_auc(&self) -> Option<f64> {
        let mut sum = 0.0;
        let mut used = 0usize;
        for c in 0..self.classes {
            let scored: Vec<(f64, bool)> = self
                .records
                .iter()
                .map(|r| (r.probs[c], r.label == c))
                .collect();
            if let Some(a) = auc_binary(&scored) {
                sum += a;
                used += 1;
            }
        }
        (used > 0).then(|| sum / used as f64)
    }

    /// Reliability bins: `bins` equal-width confidence intervals over
    /// `[0,1]`. A sample falls into the first bin `m` whose upper edge
    /// `(m+1)/bins` is at or above its confidence, so edge values bin
    /// downward and zero confidence joins the first bin.
    pub fn ece_bins(&self, bins: usize) -> Vec<BinStat> {
        let mut count = vec![0usize; bins];
        let mut acc = vec![0f64; bins];
        let mut conf = vec![0f64; bins];
        for r in &self.records {
            let pred = r.argmax();
            let c = r.probs[pred];
            let mut b = bins - 1;
            for m in 0..bins {
                if c <= (m + 1) as f64 / bins as f64 {
                    b = m;
                    break;
                }
            }
            count[b] += 1;
            conf[b] += c;
            if pred == r.label {
                acc[b] += 1.0;
            }
        }
        (0..bins)
            .map(|m| BinStat {
                lo: m as f64 / bins as f64,
                hi: (m + 1) as f64 / bins as f64,
                count: count[m],
                accuracy: if count[m] > 0 { acc[m] / count[m] as f64 } else { 0.0 },
                confidence: if count[m] > 0 { conf[m] / count[m] as f64 } else { 0.0 },
            })
            .collect()
    }

    /// Expected calibration error in percent over `bins` equal-width bins.
    pub fn ece(&self, bins: usize) -> f64 {
        ece_from_bins(&self.ece_bins(bins), self.records.len())
    }

    /// Full evaluation summary.
    pub fn report(&self, ece_bins: usize) -> EvalReport {
        let (p, r, f) = self.macro_prf();
        EvalReport {
            samples: self.len(),
            top1_error: self.top_k_error(1),
            top5_error: self.top_k_error(5),
            ece: self.ece(ece_bins),
            macro_precision: p,
            macro_recall: r,
            macro_f1: f,
            auc: self.ovr_auc(),
        }
    }
}

/// Recombines bin statistics into the calibration error (percent):
/// `100 * sum_m (count_m/total) * |acc_m - conf_m|`.
pub fn ece_from_bins(bins: &[BinStat], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    100.0
        * bins
            .iter()
            .map(|b| (b.count as f64 / total as f64) * (b.accuracy - b.confidence).abs())
            .sum::<f64>()
}

/// Renders reliability bins as CSV (one header row, then one row per bin).
pub fn bins_to_csv(bins: &[BinStat]) -> String {
    let mut out = String::from("bin_lo,bin_hi,count,accuracy,confidence\n");
    for b in bins {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            b.lo, b.hi, b.count, b.accuracy, b.confidence
        ));
    }
    out
}

fn auc_binary(scored: &[(f64, bool)]) -> Option<f64> {
    let n_pos = scored.iter().filter(|(_, p)| *p).count();
    let n_neg = scored.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[a].0.partial_cmp(&scored[b].0).expect("finite scores"));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scored[order[j]].0 == scored[order[i]].0 {
            j += 1;
        }
        // Tied scores share the mean of ranks i+1..=j.
        let midrank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if scored[idx].1 {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    let n_pos_f = n_pos as f64;
    Some((rank_sum_pos - n_pos_f * (n_pos_f + 1.0) / 2.0) / (n_pos_f * n_neg as f64))
}

/// Accuracy of the confident pseudo-labels against withheld true labels
/// (diagnostics only). `None` when no sample took the confident branch.
pub fn pseudo_label_accuracy(
    decisions: &[BranchDecision],
    hidden_labels: &[usize],
) -> Result<Option<f64>> {
    if decisions.len() != hidden_labels.len() {
        return Err(Error::dim(format!(
            "{} decisions vs {} hidden labels",
            decisions.len(),
            hidden_labels.len()
        )));
    }
    let mut total = 0u64;
    let mut correct = 0u64;
    for (d, &l) in decisions.iter().zip(hidden_labels) {
        if d.branch == Branch::Hard {
            total += 1;
            if d.class == l {
                correct += 1;
            }
        }
    }
    Ok((total > 0).then(|| correct as f64 / total as f64))
}

/// Mask ratio (fraction routed to the soft branch) and batch utilization
/// (fraction of unlabeled samples contributing loss) from integer branch
/// counts. With both branches active every sample is used; single-branch
/// modes use exactly the complement/fraction, computed as `1 - mask` and
/// `mask` so the two sides reconstruct each other bit for bit.
pub fn mask_and_utilization(hard: u64, soft: u64, mode: AblationMode) -> (f64, f64) {
    let total = hard + soft;
    let mask = if total == 0 {
        0.0
    } else {
        soft as f64 / total as f64
    };
    let utilization = match mode {
        AblationMode::Both => 1.0,
        AblationMode::HardOnly => 1.0 - mask,
        AblationMode::SoftOnly => mask,
    };
    (mask, utilization)
}
