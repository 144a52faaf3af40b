//! The semi-supervised objective.
//!
//! Each unlabeled sample is routed by the confidence of its weakly-augmented
//! prediction: at or above the threshold it becomes a hard pseudo-label with
//! a cross-entropy term, below it a temperature-sharpened soft target with a
//! KL term. Both unlabeled terms normalize by the full unlabeled batch size,
//! and the total is `L_sup + lambda_u * (L_ce + L_kl)`. Targets never carry
//! gradient: the weak-view forward runs off-tape and enters the loss only as
//! constants.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::par;
use crate::tape::{NodeId, Tape};
use crate::tensor::{pairwise_sum, Scalar, Tensor};

/// Temperature sharpening over the last axis:
/// `p(k) = exp(z_k/T) / sum_j exp(z_j/T)`, computed with max subtraction.
/// `T = 1` is exactly softmax; `T -> 0` approaches the argmax one-hot.
pub fn sharpen<S: Scalar>(logits: &Tensor<S>, temperature: S) -> Result<Tensor<S>> {
    Ok(sharpen_with_log(logits, temperature)?.0)
}

/// Sharpened probabilities together with their logs. The log values come
/// from the same max-subtracted expression, so `p = exp(log_p)` exactly and
/// `sum_k p_k log(p_k)` can be formed without a second rounding route.
pub fn sharpen_with_log<S: Scalar>(
    logits: &Tensor<S>,
    temperature: S,
) -> Result<(Tensor<S>, Tensor<S>)> {
    if !(temperature > S::zero()) {
        return Err(Error::contract(format!(
            "sharpening temperature must be > 0, got {temperature}"
        )));
    }
    let sh = logits.shape();
    if sh.is_empty() {
        return Err(Error::dim("sharpen: rank-0 tensor has no class axis"));
    }
    let k = sh[sh.len() - 1];
    let rows = logits.numel() / k;
    let zd = logits.data();
    let mut probs = vec![S::zero(); zd.len()];
    let mut logs = vec![S::zero(); zd.len()];
    for r in 0..rows {
        let row = &zd[r * k..(r + 1) * k];
        let mut m = S::neg_infinity();
        for &z in row {
            m = m.max(z);
        }
        let mut sum = S::zero();
        for &z in row {
            sum = sum + ((z - m) / temperature).exp();
        }
        let lse = sum.ln();
        for j in 0..k {
            let scaled = (row[j] - m) / temperature;
            let lp = scaled - lse;
            logs[r * k + j] = lp;
            probs[r * k + j] = lp.exp();
        }
    }
    Ok((
        Tensor::from_vec(sh.to_vec(), probs)?,
        Tensor::from_vec(sh.to_vec(), logs)?,
    ))
}

/// How the effective confidence threshold per class is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// One global threshold `tau` for every class.
    Fixed,
    /// Curriculum thresholds: classes that absorb fewer confident
    /// pseudo-labels get a lower bar, scaled from per-class counts.
    Cpl,
}

/// Per-class effective thresholds plus the running window counts that drive
/// curriculum updates.
#[derive(Debug, Clone)]
pub struct ThresholdPolicy {
    pub mode: ThresholdMode,
    pub tau: f64,
    thresholds: Vec<f64>,
    counts: Vec<u64>,
    unused: u64,
}

impl ThresholdPolicy {
    pub fn new(mode: ThresholdMode, tau: f64, classes: usize) -> Result<Self> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::contract(format!("tau must be in (0,1], got {tau}")));
        }
        if classes == 0 {
            return Err(Error::contract("threshold policy needs >= 1 class"));
        }
        Ok(ThresholdPolicy {
            mode,
            tau,
            thresholds: vec![tau; classes],
            counts: vec![0; classes],
            unused: 0,
        })
    }

    pub fn classes(&self) -> usize {
        self.thresholds.len()
    }

    /// Effective threshold for a predicted class.
    pub fn effective(&self, class: usize) -> f64 {
        match self.mode {
            ThresholdMode::Fixed => self.tau,
            ThresholdMode::Cpl => self.thresholds[class],
        }
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn window_counts(&self) -> (&[u64], u64) {
        (&self.counts, self.unused)
    }

    fn observe(&mut self, class: usize, hard: bool) {
        if hard {
            self.counts[class] += 1;
        } else {
            self.unused += 1;
        }
    }

    /// Applies the curriculum update from the counts gathered since the last
    /// call, then clears the window. In fixed mode only the window resets.
    pub fn refresh(&mut self) {
        if self.mode == ThresholdMode::Cpl {
            if let Some(t) = cpl_thresholds(self.tau, &self.counts, self.unused) {
                self.thresholds = t;
            }
        }
        self.counts.iter_mut().for_each(|c| *c = 0);
        self.unused = 0;
    }
}

/// Curriculum thresholds from per-class confident counts:
/// `beta(c) = counts[c] / max(max_c counts, unused)`, `T(c) = beta(c)*tau`.
/// While `unused` dominates (warm-up) every threshold sits below `tau`;
/// afterwards the best-covered class sits exactly at `tau`. Returns `None`
/// for an empty window (no samples observed), which keeps prior thresholds.
pub fn cpl_thresholds(tau: f64, counts: &[u64], unused: u64) -> Option<Vec<f64>> {
    let max_count = counts.iter().copied().max().unwrap_or(0);
    let denom = max_count.max(unused);
    if denom == 0 {
        return None;
    }
    Some(
        counts
            .iter()
            .map(|&c| (c as f64 / denom as f64) * tau)
            .collect(),
    )
}

/// Which loss branch an unlabeled sample takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// Confident: hard pseudo-label, cross-entropy.
    Hard,
    /// Unconfident: sharpened soft target, KL.
    Soft,
}

/// Routing decision for one unlabeled sample.
#[derive(Debug, Clone)]
pub struct BranchDecision {
    /// argmax class of the weak-view prediction (first index on ties).
    pub class: usize,
    /// max probability of the weak-view prediction.
    pub confidence: f64,
    /// Effective threshold the confidence was compared against.
    pub threshold: f64,
    pub branch: Branch,
}

/// Routes every row of a `[N,K]` probability batch. A confidence exactly at
/// the threshold counts as confident. Rows must sum to 1 within `1e-4`
/// (smaller drift is renormalized away, larger is an error). Counts feed the
/// policy's curriculum window.
pub fn select_branches<S: Scalar>(
    weak_probs: &Tensor<S>,
    policy: &mut ThresholdPolicy,
) -> Result<Vec<BranchDecision>> {
    let sh = weak_probs.shape();
    if sh.len() != 2 || sh[1] != policy.classes() {
        return Err(Error::Dim(format!(
            "select_branches: probs {:?} vs {} classes",
            sh,
            policy.classes()
        )));
    }
    let k = sh[1];
    let mut out = Vec::with_capacity(sh[0]);
    for (b, row) in weak_probs.data().chunks(k).enumerate() {
        let mut sum = 0.0f64;
        let mut best = 0usize;
        let mut best_p = f64::NEG_INFINITY;
        for (j, &p) in row.iter().enumerate() {
            let pf = p.to_f64_lossy();
            if !pf.is_finite() || pf < 0.0 {
                return Err(Error::contract(format!(
                    "row {b} is not a probability vector (entry {j} = {pf})"
                )));
            }
            sum += pf;
            if pf > best_p {
                best_p = pf;
                best = j;
            }
        }
        if (sum - 1.0).abs() > 1e-4 {
            return Err(Error::contract(format!(
                "row {b} sums to {sum}, outside 1e-4 of 1"
            )));
        }
        let confidence = best_p / sum; // renormalized
        let threshold = policy.effective(best);
        let branch = if confidence >= threshold {
            Branch::Hard
        } else {
            Branch::Soft
        };
        policy.observe(best, branch == Branch::Hard);
        out.push(BranchDecision {
            class: best,
            confidence,
            threshold,
            branch,
        });
    }
    Ok(out)
}

/// Which unlabeled loss terms are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    /// Hard pseudo-labels only (the KL term is pinned to zero).
    HardOnly,
    /// Soft targets only (the unlabeled cross-entropy is pinned to zero).
    SoftOnly,
    /// Both branches: the full method.
    Both,
}

/// Loss assembly knobs.
#[derive(Debug, Clone)]
pub struct LossConfig {
    pub lambda_u: f64,
    pub temperature: f64,
    pub mode: AblationMode,
    /// In `SoftOnly` mode, apply the KL term to every sample instead of the
    /// sub-threshold ones only.
    pub kl_all_samples: bool,
}

/// Node handles for the assembled loss terms.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub total: NodeId,
    pub sup: NodeId,
    pub unsup_ce: NodeId,
    pub kl: NodeId,
}

/// Scalar values of the assembled loss, read straight off the tape.
#[derive(Debug, Clone, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub sup: f64,
    pub unsup_ce: f64,
    pub kl: f64,
    pub hard_count: usize,
    pub soft_count: usize,
}

/// Mean cross-entropy of labeled logits against integer labels:
/// `-(1/B) * sum_b log_softmax(z)[b, y_b]`.
pub fn supervised_loss<S: Scalar>(
    tape: &mut Tape<S>,
    logits: NodeId,
    labels: &[usize],
) -> Result<NodeId> {
    let n = tape.value(logits).shape()[0];
    if n != labels.len() {
        return Err(Error::Dim(format!(
            "supervised_loss: {n} logit rows vs {} labels",
            labels.len()
        )));
    }
    if n == 0 {
        return Err(Error::contract("supervised_loss: empty batch"));
    }
    let logp = tape.log_softmax(logits, 1)?;
    let picked = tape.gather_rows(logp, labels.to_vec())?;
    let s = tape.sum(picked);
    Ok(tape.scale(s, S::from_f64_lossy(-1.0 / n as f64)))
}

/// Unlabeled cross-entropy over the confident branch, normalized by the full
/// unlabeled batch size: `-(1/N) * sum_{hard b} log_softmax(strong)[b, q_b]`.
/// Inactive rows participate with weight zero, so an all-soft batch yields
/// an exact zero.
fn unlabeled_ce<S: Scalar>(
    tape: &mut Tape<S>,
    strong_logp: NodeId,
    decisions: &[BranchDecision],
) -> Result<NodeId> {
    let n = decisions.len();
    let classes: Vec<usize> = decisions.iter().map(|d| d.class).collect();
    let weights: Vec<S> = decisions
        .iter()
        .map(|d| {
            if d.branch == Branch::Hard {
                S::one()
            } else {
                S::zero()
            }
        })
        .collect();
    let picked = tape.gather_rows(strong_logp, classes)?;
    let w = tape.leaf(Tensor::from_vec(vec![n], weights)?);
    let masked = tape.mul(picked, w)?;
    let s = tape.sum(masked);
    Ok(tape.scale(s, S::from_f64_lossy(-1.0 / n as f64)))
}

/// KL term over the unconfident branch (or all rows when requested),
/// normalized by the full unlabeled batch size:
/// `(1/N) * sum_b D_KL(sharpen(weak_b, T) || softmax(strong_b))`.
///
/// The target distribution is a constant (no gradient flows into the weak
/// view); only the `-sum p*log q` piece touches the tape. `0*log 0` terms
/// are dropped, and a target identical to the prediction gives exactly zero.
fn unlabeled_kl<S: Scalar>(
    tape: &mut Tape<S>,
    strong_logp: NodeId,
    weak_logits: &Tensor<S>,
    decisions: &[BranchDecision],
    temperature: S,
    include_all: bool,
) -> Result<NodeId> {
    let n = decisions.len();
    let k = weak_logits.shape()[1];
    let (p, logp) = sharpen_with_log(weak_logits, temperature)?;
    let mut masked_p = vec![S::zero(); n * k];
    let mut target_entropy_terms = vec![S::zero(); n * k];
    for (b, d) in decisions.iter().enumerate() {
        if !(include_all || d.branch == Branch::Soft) {
            continue;
        }
        for j in 0..k {
            let pv = p.data()[b * k + j];
            masked_p[b * k + j] = pv;
            if pv > S::zero() {
                target_entropy_terms[b * k + j] = pv * logp.data()[b * k + j];
            }
        }
    }
    // sum_b sum_k p log p over participating rows: a constant on the tape.
    let const_term = pairwise_sum(&target_entropy_terms);
    let const_node = tape.leaf(Tensor::scalar(const_term));
    let p_node = tape.leaf(Tensor::from_vec(vec![n, k], masked_p)?);
    let cross = tape.mul(p_node, strong_logp)?;
    let cross_sum = tape.sum(cross);
    let diff = tape.sub(const_node, cross_sum)?;
    Ok(tape.scale(diff, S::from_f64_lossy(1.0 / n as f64)))
}

/// Assembles the full objective on the tape:
/// `total = sup + lambda_u * (unsup_ce + kl)`, with ablated terms pinned to
/// exact zero leaves so the algebra holds identically in every mode.
pub fn build_loss<S: Scalar>(
    tape: &mut Tape<S>,
    sup_logits: NodeId,
    labels: &[usize],
    strong_logits: NodeId,
    weak_logits: &Tensor<S>,
    decisions: &[BranchDecision],
    cfg: &LossConfig,
) -> Result<(LossNodes, LossBreakdown)> {
    if decisions.is_empty() {
        return Err(Error::contract("build_loss: empty unlabeled batch"));
    }
    if weak_logits.shape() != tape.value(strong_logits).shape() {
        return Err(Error::Dim(format!(
            "weak logits {:?} vs strong logits {:?}",
            weak_logits.shape(),
            tape.value(strong_logits).shape()
        )));
    }
    let sup = supervised_loss(tape, sup_logits, labels)?;
    let strong_logp = tape.log_softmax(strong_logits, 1)?;

    let zero = |tape: &mut Tape<S>| tape.leaf(Tensor::scalar(S::zero()));
    let unsup_ce = match cfg.mode {
        AblationMode::SoftOnly => zero(tape),
        _ => unlabeled_ce(tape, strong_logp, decisions)?,
    };
    let kl = match cfg.mode {
        AblationMode::HardOnly => zero(tape),
        AblationMode::SoftOnly => unlabeled_kl(
            tape,
            strong_logp,
            weak_logits,
            decisions,
            S::from_f64_lossy(cfg.temperature),
            cfg.kl_all_samples,
        )?,
        AblationMode::Both => unlabeled_kl(
            tape,
            strong_logp,
            weak_logits,
            decisions,
            S::from_f64_lossy(cfg.temperature),
            false,
        )?,
    };

    let unsup = tape.add(unsup_ce, kl)?;
    let scaled = tape.scale(unsup, S::from_f64_lossy(cfg.lambda_u));
    let total = tape.add(sup, scaled)?;

    let hard_count = decisions.iter().filter(|d| d.branch == Branch::Hard).count();
    let breakdown = LossBreakdown {
        total: tape.value(total).item()?.to_f64_lossy(),
        sup: tape.value(sup).item()?.to_f64_lossy(),
        unsup_ce: tape.value(unsup_ce).item()?.to_f64_lossy(),
        kl: tape.value(kl).item()?.to_f64_lossy(),
        hard_count,
        soft_count: decisions.len() - hard_count,
    };
    Ok((
        LossNodes {
            total,
            sup,
            unsup_ce,
            kl,
        },
        breakdown,
    ))
}

/// Batched weak/strong forward logits packed for loss assembly, produced
/// off-tape. Convenience for callers that fan per-sample inference out.
pub fn stack_rows<S: Scalar>(rows: &[Tensor<S>]) -> Result<Tensor<S>> {
    if rows.is_empty() {
        return Err(Error::contract("stack_rows: no rows"));
    }
    let k = rows[0].numel();
    let mut data = Vec::with_capacity(rows.len() * k);
    for r in rows {
        if r.numel() != k {
            return Err(Error::dim("stack_rows: ragged rows"));
        }
        data.extend_from_slice(r.data());
    }
    Tensor::from_vec(vec![rows.len(), k], data)
}

/// Parallel-friendly per-row sharpening used by tests and previews; differs
/// from [`sharpen`] only in how work is scheduled, never in values.
pub fn sharpen_rows<S: Scalar>(logits: &Tensor<S>, temperature: S) -> Result<Tensor<S>> {
    let sh = logits.shape().to_vec();
    if sh.len() != 2 {
        return Err(Error::dim(format!("sharpen_rows: shape {sh:?}")));
    }
    let (n, k) = (sh[0], sh[1]);
    let src = logits.clone();
    let rows = par::map_range(n, move |i| {
        let row = Tensor::from_vec(
            vec![k],
            src.data()[i * k..(i + 1) * k].to_vec(),
        )
        .expect("row slice");
        sharpen(&row, temperature).expect("temperature validated by caller")
    });
    stack_rows(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn sharpen_t1_is_softmax_bit_for_bit() {
        let z = t(&[2, 4], &[0.3, -1.0, 2.5, 0.0, 10.0, 10.0, 9.0, -3.0]);
        let s = sharpen(&z, 1.0).unwrap();
        let sm = ops::softmax(&z, 1).unwrap();
        let a: Vec<u64> = s.data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = sm.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn sharpen_two_logit_hand_case() {
        // z = [0, ln 4], T = 0.5: exp(2z) ratio 1:16 -> [1/17, 16/17].
        let z = t(&[1, 2], &[0.0, 4.0f64.ln()]);
        let p = sharpen(&z, 0.5).unwrap();
        assert!((p.data()[0] - 1.0 / 17.0).abs() < 1e-9);
        assert!((p.data()[1] - 16.0 / 17.0).abs() < 1e-9);
    }

    #[test]
    fn sharpen_low_temperature_approaches_one_hot() {
        let z = t(&[1, 3], &[1.0, 2.5, 0.0]); // gap >= 1 between top two
        let p = sharpen(&z, 0.01).unwrap();
        assert!(p.data()[1] > 0.999);
    }

    #[test]
    fn sharpen_rejects_nonpositive_temperature() {
        let z = t(&[1, 2], &[0.0, 1.0]);
        assert!(sharpen(&z, 0.0).is_err());
        assert!(sharpen(&z, -1.0).is_err());
    }

    #[test]
    fn sharpen_output_is_probability_vector_under_extreme_logits() {
        let z = t(&[1, 3], &[1e4, -1e4, 0.0]);
        let p = sharpen(&z, 0.5).unwrap();
        let total: f64 = p.data().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(p.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn cpl_threshold_cases() {
        // Equal counts, unused below max -> every threshold at tau.
        let t1 = cpl_thresholds(0.95, &[10, 10, 10], 5).unwrap();
        assert!(t1.iter().all(|&x| x == 0.95));
        // Warm-up: unused dominates -> everything below tau.
        let t2 = cpl_thresholds(0.95, &[2, 4], 8).unwrap();
        assert_eq!(t2, vec![0.95 * 2.0 / 8.0, 0.95 * 4.0 / 8.0]);
        assert!(t2.iter().all(|&x| x < 0.95));
        // Post warm-up: the best-covered class sits exactly at tau.
        let t3 = cpl_thresholds(0.95, &[3, 12, 6], 4).unwrap();
        assert_eq!(t3[1], 0.95);
        assert!(t3[0] < t3[2] && t3[2] < t3[1]);
        // Empty window keeps previous thresholds.
        assert!(cpl_thresholds(0.95, &[0, 0], 0).is_none());
    }

    #[test]
    fn policy_refresh_uses_window_and_resets_it() {
        let mut p = ThresholdPolicy::new(ThresholdMode::Cpl, 0.9, 2).unwrap();
        assert_eq!(p.effective(0), 0.9); // starts at tau
        let probs = t(&[3, 2], &[0.99, 0.01, 0.98, 0.02, 0.3, 0.7]);
        let d = select_branches(&probs, &mut p).unwrap();
        assert_eq!(
            d.iter().filter(|x| x.branch == Branch::Hard).count(),
            2,
            "two confident rows"
        );
        let (counts, unused) = p.window_counts();
        assert_eq!((counts[0], counts[1], unused), (2, 0, 1));
        p.refresh();
        assert_eq!(p.effective(0), 0.9);
        assert_eq!(p.effective(1), 0.0);
        assert_eq!(p.window_counts(), (&[0u64, 0][..], 0));
    }

    #[test]
    fn branch_boundary_counts_as_hard() {
        let mut p = ThresholdPolicy::new(ThresholdMode::Fixed, 0.95, 2).unwrap();
        let probs = t(&[1, 2], &[0.95, 0.05]);
        let d = select_branches(&probs, &mut p).unwrap();
        assert_eq!(d[0].branch, Branch::Hard);
        assert_eq!(d[0].class, 0);
    }

    #[test]
    fn branch_argmax_ties_take_first_index() {
        let mut p = ThresholdPolicy::new(ThresholdMode::Fixed, 0.3, 2).unwrap();
        let probs = t(&[1, 2], &[0.5, 0.5]);
        let d = select_branches(&probs, &mut p).unwrap();
        assert_eq!(d[0].class, 0);
    }

    #[test]
    fn branch_rejects_non_probability_rows() {
        let mut p = ThresholdPolicy::new(ThresholdMode::Fixed, 0.95, 2).unwrap();
        let bad = t(&[1, 2], &[0.9, 0.2]);
        assert!(select_branches(&bad, &mut p).is_err());
        // Small drift is renormalized instead.
        let ok = t(&[1, 2], &[0.600004, 0.4]);
        assert!(select_branches(&ok, &mut p).is_ok());
    }

    #[test]
    fn kl_of_identical_distributions_is_exactly_zero() {
        // T=1 target from the same logits as the strong view: the log terms
        // cancel bit for bit.
        let z = t(&[2, 3], &[0.2, -0.7, 1.1, 3.0, 2.0, 1.0]);
        let mut tape = Tape::new();
        let strong = tape.leaf(z.clone());
        let strong_logp = tape.log_softmax(strong, 1).unwrap();
        let decisions = vec![
            BranchDecision {
                class: 2,
                confidence: 0.5,
                threshold: 0.95,
                branch: Branch::Soft,
            };
            2
        ];
        let kl = unlabeled_kl(&mut tape, strong_logp, &z, &decisions, 1.0, false).unwrap();
        assert_eq!(tape.value(kl).item().unwrap(), 0.0);
    }

    fn decisions_from(probs: &Tensor<f64>, tau: f64) -> Vec<BranchDecision> {
        let mut p = ThresholdPolicy::new(ThresholdMode::Fixed, tau, probs.shape()[1]).unwrap();
        select_branches(probs, &mut p).unwrap()
    }

    #[test]
    fn all_hard_batch_zeroes_kl_and_all_soft_zeroes_ce() {
        let weak_confident = t(&[2, 2], &[8.0, -8.0, -9.0, 9.0]);
        let weak_unsure = t(&[2, 2], &[0.1, 0.0, 0.0, 0.2]);
        let strong = t(&[2, 2], &[0.5, -0.5, 1.0, 0.3]);
        let labels = [0usize];
        let sup_logits = t(&[1, 2], &[0.3, 0.4]);
        let cfg = LossConfig {
            lambda_u: 1.0,
            temperature: 0.5,
            mode: AblationMode::Both,
            kl_all_samples: false,
        };

        for (weak, expect_zero_kl) in [(weak_confident, true), (weak_unsure, false)] {
            let probs = ops::softmax(&weak, 1).unwrap();
            let decisions = decisions_from(&probs, 0.95);
            let mut tape = Tape::new();
            let sl = tape.leaf(sup_logits.clone());
            let st = tape.leaf(strong.clone());
            let (_, bd) =
                build_loss(&mut tape, sl, &labels, st, &weak, &decisions, &cfg).unwrap();
            if expect_zero_kl {
                assert_eq!(bd.kl, 0.0);
                assert!(bd.unsup_ce > 0.0);
            } else {
                assert_eq!(bd.unsup_ce, 0.0);
                assert!(bd.kl > 0.0);
            }
        }
    }

    #[test]
    fn total_is_exact_composition_of_terms() {
        let weak = t(&[3, 2], &[4.0, -4.0, 0.3, 0.1, -0.2, 0.9]);
        let strong = t(&[3, 2], &[0.5, -0.5, 1.0, 0.3, -0.1, 0.2]);
        let sup_logits = t(&[2, 2], &[0.3, 0.4, -1.0, 0.7]);
        let labels = [0usize, 1];
        let probs = ops::softmax(&weak, 1).unwrap();
        let decisions = decisions_from(&probs, 0.95);
        for lambda_u in [0.0, 0.5, 1.0, 2.0] {
            let cfg = LossConfig {
                lambda_u,
                temperature: 0.5,
                mode: AblationMode::Both,
                kl_all_samples: false,
            };
            let mut tape = Tape::new();
            let sl = tape.leaf(sup_logits.clone());
            let st = tape.leaf(strong.clone());
            let (_, bd) =
                build_loss(&mut tape, sl, &labels, st, &weak, &decisions, &cfg).unwrap();
            assert_eq!(bd.total, bd.sup + lambda_u * (bd.unsup_ce + bd.kl));
        }
    }

    #[test]
    fn supervised_loss_validates_labels() {
        let mut tape = Tape::new();
        let z = tape.leaf(t(&[1, 3], &[0.0, 1.0, 2.0]));
        assert!(supervised_loss(&mut tape, z, &[3]).is_err());
        assert!(supervised_loss(&mut tape, z, &[1, 2]).is_err());
    }

    #[test]
    fn sharpen_rows_matches_sharpen() {
        let z = t(&[5, 3], &[0.1, 0.2, 0.3, -1.0, 2.0, 0.0, 5.0, 5.0, 5.0, -2.0, -3.0, 1.0, 0.0, 0.0, 0.1]);
        let a = sharpen(&z, 0.5).unwrap();
        let b = sharpen_rows(&z, 0.5).unwrap();
        assert_eq!(a.data(), b.data());
    }
}
