//! Loss functions with analytic logit gradients: cross entropy and its
//! statically rebalanced variants, the dynamically recall-weighted cross
//! entropy, focal and OHEM sample mining, soft region losses, and the
//! pathological precision-weighted loss kept for demonstration.
//!
//! Every loss returns the sum-reduced scalar together with the full N×C
//! gradient with respect to the logits. Class weights are always treated as
//! constants of the current step: no gradient flows through the statistics
//! that produced them.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::metrics::ClassStats;
use crate::numeric::{log_softmax, softmax, LogitsBatch, Matrix, ProbBatch};

/// Scalar loss plus its gradient with respect to the logits.
#[derive(Debug, Clone)]
pub struct LossResult {
    pub value: f64,
    pub grad: Matrix,
}

/// Non-negative per-class weight vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights(Vec<f64>);

impl ClassWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        for (c, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::invalid_input(format!(
                    "class weight {w} for class {c} must be finite and non-negative"
                )));
            }
        }
        Ok(ClassWeights(weights))
    }

    pub fn uniform(classes: usize) -> Self {
        ClassWeights(vec![1.0; classes])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, c: usize) -> f64 {
        self.0[c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn validate_labels(labels: &[usize], samples: usize, classes: usize) -> Result<()> {
    if labels.len() != samples {
        return Err(Error::invalid_input(format!(
            "{} labels for {samples} samples",
            labels.len()
        )));
    }
    for &y in labels {
        if y >= classes {
            return Err(Error::invalid_input(format!(
                "label {y} out of range for {classes} classes"
            )));
        }
    }
    Ok(())
}

/// Per-sample negative log-likelihood −log P_n^{y_n}.
pub fn per_sample_ce(logits: &LogitsBatch, labels: &[usize]) -> Result<Vec<f64>> {
    validate_labels(labels, logits.samples(), logits.classes())?;
    let ls = log_softmax(logits);
    Ok(labels.iter().enumerate().map(|(n, &y)| -ls.get(n, y)).collect())
}

/// Sum-reduced cross entropy; gradient row n is softmax(z_n) − onehot(y_n).
pub fn cross_entropy(logits: &LogitsBatch, labels: &[usize]) -> Result<LossResult> {
    validate_labels(labels, logits.samples(), logits.classes())?;
    let ls = log_softmax(logits);
    let probs = softmax(logits);
    let mut value = 0.0;
    let mut grad = probs.matrix().clone();
    for (n, &y) in labels.iter().enumerate() {
        value -= ls.get(n, y);
        let row = grad.row_mut(n);
        row[y] -= 1.0;
    }
    Ok(LossResult { value, grad })
}

/// The grouped form of cross entropy: −Σ_c N_c·log(geometric mean confidence
/// of class c). Equals the sample-wise sum up to float association; a zero
/// true-class probability yields +∞.
pub fn ce_grouped_form(probs: &ProbBatch, labels: &[usize]) -> Result<f64> {
    validate_labels(labels, probs.samples(), probs.classes())?;
    let classes = probs.classes();
    let mut log_mean = vec![0.0f64; classes];
    let mut counts = vec![0u64; classes];
    for (n, &y) in labels.iter().enumerate() {
        log_mean[y] += probs.matrix().get(n, y).ln();
        counts[y] += 1;
    }
    let mut value = 0.0;
    for c in 0..classes {
        if counts[c] > 0 {
            // N_c · log(P^c) with log(P^c) the mean log-probability.
            value -= counts[c] as f64 * (log_mean[c] / counts[c] as f64);
        }
    }
    Ok(value)
}

/// Cross entropy with constant per-class weights on the true class:
/// −Σ_n w_{y_n}·log P_n^{y_n}.
pub fn weighted_ce(
    logits: &LogitsBatch,
    labels: &[usize],
    weights: &ClassWeights,
) -> Result<LossResult> {
    validate_labels(labels, logits.samples(), logits.classes())?;
    if weights.len() != logits.classes() {
        return Err(Error::invalid_input(format!(
            "{} weights for {} classes",
            weights.len(),
            logits.classes()
        )));
    }
    let ls = log_softmax(logits);
    let probs = softmax(logits);
    let mut value = 0.0;
    let mut grad = Matrix::zeros(logits.samples(), logits.classes());
    for (n, &y) in labels.iter().enumerate() {
        let w = weights.get(y);
        value -= w * ls.get(n, y);
        let grow = grad.row_mut(n);
        for (c, &p) in probs.matrix().row(n).iter().enumerate() {
            grow[c] = w * (p - if c == y { 1.0 } else { 0.0 });
        }
    }
    Ok(LossResult { value, grad })
}

/// w_c = 1/N_c for present classes; absent classes get weight 0 so the loss
/// stays finite.
pub fn inverse_frequency_weights(class_counts: &[u64]) -> ClassWeights {
    ClassWeights(
        class_counts
            .iter()
            .map(|&n| if n > 0 { 1.0 / n as f64 } else { 0.0 })
            .collect(),
    )
}

/// Effective-number weights (1−β)/(1−β^{N_c}), normalized to sum to the
/// class count. β→0 recovers plain cross entropy, β→1 inverse frequency.
pub fn effective_number_weights(class_counts: &[u64], beta: f64) -> Result<ClassWeights> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::invalid_input(format!(
            "effective-number beta must lie in [0,1), got {beta}"
        )));
    }
    let raw: Vec<f64> = class_counts
        .iter()
        .map(|&n| {
            if n == 0 {
                0.0
            } else if beta == 0.0 {
                1.0
            } else {
                (1.0 - beta) / (1.0 - beta.powf(n as f64))
            }
        })
        .collect();
    let sum: f64 = raw.iter().sum();
    if sum == 0.0 {
        return Err(Error::invalid_input(
            "effective-number weights need at least one non-empty class",
        ));
    }
    let scale = class_counts.len() as f64 / sum;
    ClassWeights::new(raw.into_iter().map(|w| w * scale).collect())
}

/// Dynamically weighted cross entropy with weights 1−R_{c,t} from the
/// per-class recall statistics of the current step. The weights are
/// constants for the gradient.
pub fn recall_ce(
    logits: &LogitsBatch,
    labels: &[usize],
    recall_weights: &ClassWeights,
) -> Result<LossResult> {
    for (c, &w) in recall_weights.as_slice().iter().enumerate() {
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::invalid_input(format!(
                "recall weight {w} for class {c} must lie in [0,1]"
            )));
        }
    }
    weighted_ce(logits, labels, recall_weights)
}

/// The two-term decomposition of the summed recall-loss gradient for the
/// first logit in a binary problem: a recall-encouraging term
/// FN·(P̄_first|first − 1) and a precision-regularizing term
/// FP·P̄_first|second, with batch-average confidences P̄.
pub fn recall_grad_binary_closed_form(
    probs: &ProbBatch,
    labels: &[usize],
    stats: &ClassStats,
) -> Result<(f64, f64)> {
    if probs.classes() != 2 || stats.classes() != 2 {
        return Err(Error::invalid_input(format!(
            "closed form requires a binary problem, got {} classes",
            probs.classes()
        )));
    }
    validate_labels(labels, probs.samples(), 2)?;
    let expected = crate::metrics::class_stats(&crate::metrics::ConfusionMatrix::from_predictions(
        &probs.argmax_predictions(),
        labels,
        2,
    )?);
    if expected != *stats {
        return Err(Error::invalid_input(
            "class stats are inconsistent with argmax predictions of the given probabilities",
        ));
    }
    let mut sum_first = [0.0f64; 2];
    let mut count = [0u64; 2];
    for (n, &y) in labels.iter().enumerate() {
        sum_first[y] += probs.matrix().get(n, 0);
        count[y] += 1;
    }
    let mean = |c: usize| {
        if count[c] > 0 {
            sum_first[c] / count[c] as f64
        } else {
            0.0
        }
    };
    let recall_term = stats.class(0).false_neg as f64 * (mean(0) - 1.0);
    let precision_term = stats.class(0).false_pos as f64 * mean(1);
    Ok((recall_term, precision_term))
}

/// Focal cross entropy −Σ_n (1−p_n)^γ·log p_n with the full derivative of
/// the modulating factor.
pub fn focal_ce(logits: &LogitsBatch, labels: &[usize], gamma: f64) -> Result<LossResult> {
    if !(gamma >= 0.0) {
        return Err(Error::invalid_input(format!(
            "focal gamma must be >= 0, got {gamma}"
        )));
    }
    validate_labels(labels, logits.samples(), logits.classes())?;
    let ls = log_softmax(logits);
    let probs = softmax(logits);
    let mut value = 0.0;
    let mut grad = Matrix::zeros(logits.samples(), logits.classes());
    for (n, &y) in labels.iter().enumerate() {
        let p = probs.matrix().get(n, y);
        let log_p = ls.get(n, y);
        let one_minus = 1.0 - p;
        let modulation = one_minus.powf(gamma);
        value -= modulation * log_p;
        // d/dz_i [-(1-p)^γ log p] = (m - s)(p_i - δ_iy) with
        // s = γ·p·(1-p)^{γ-1}·log p; s has limit 0 as p -> 1 for γ > 0.
        let s = if gamma == 0.0 || one_minus == 0.0 {
            0.0
        } else {
            gamma * p * one_minus.powf(gamma - 1.0) * log_p
        };
        let coeff = modulation - s;
        let grow = grad.row_mut(n);
        for (c, &pc) in probs.matrix().row(n).iter().enumerate() {
            grow[c] = coeff * (pc - if c == y { 1.0 } else { 0.0 });
        }
    }
    Ok(LossResult { value, grad })
}

/// Online hard example mining: keep the top ⌈keep_fraction·N⌉ samples by
/// per-sample cross entropy (ties keep the lower sample index) and zero out
/// everything else.
pub fn ohem_ce(logits: &LogitsBatch, labels: &[usize], keep_fraction: f64) -> Result<LossResult> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::invalid_input(format!(
            "keep_fraction must lie in (0,1], got {keep_fraction}"
        )));
    }
    validate_labels(labels, logits.samples(), logits.classes())?;
    let sample_losses = per_sample_ce(logits, labels)?;
    let n = logits.samples();
    let keep = ((keep_fraction * n as f64).ceil() as usize).clamp(1, n);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        sample_losses[b]
            .partial_cmp(&sample_losses[a])
            .expect("finite per-sample losses")
            .then(a.cmp(&b))
    });
    let mut kept = order[..keep].to_vec();
    kept.sort_unstable();

    let probs = softmax(logits);
    let mut value = 0.0;
    let mut grad = Matrix::zeros(n, logits.classes());
    for &idx in &kept {
        value += sample_losses[idx];
        let y = labels[idx];
        let grow = grad.row_mut(idx);
        for (c, &p) in probs.matrix().row(idx).iter().enumerate() {
            grow[c] = p - if c == y { 1.0 } else { 0.0 };
        }
    }
    Ok(LossResult { value, grad })
}

/// Region overlap targeted by [`soft_region_loss`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SoftRegionKind {
    Dice,
    Jaccard,
    Tversky,
}

impl FromStr for SoftRegionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dice" => Ok(SoftRegionKind::Dice),
            "jaccard" => Ok(SoftRegionKind::Jaccard),
            "tversky" => Ok(SoftRegionKind::Tversky),
            other => Err(Error::invalid_input(format!(
                "unknown soft region kind '{other}' (expected dice, jaccard or tversky)"
            ))),
        }
    }
}

/// Soft relaxation of the region metrics: per present class, soft counts
/// sTP_c = Σ_{y_n=c} p_n^c, sFP_c = Σ_{y_n≠c} p_n^c, sFN_c = N_c − sTP_c feed
/// the normalized count formula sTP/(sTP + α·sFP + β·sFN) with ε smoothing
/// added to numerator and denominator; the loss is one minus the mean over
/// present classes. Dice is the (½,½) case and Jaccard the (1,1) case, so the
/// Tversky reductions hold exactly.
pub fn soft_region_loss(
    logits: &LogitsBatch,
    labels: &[usize],
    kind: SoftRegionKind,
    alpha: f64,
    beta: f64,
    epsilon: f64,
) -> Result<LossResult> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid_input(format!(
            "epsilon must be > 0, got {epsilon}"
        )));
    }
    if alpha < 0.0 || beta < 0.0 {
        return Err(Error::invalid_input(format!(
            "tversky weights must be non-negative, got alpha={alpha}, beta={beta}"
        )));
    }
    validate_labels(labels, logits.samples(), logits.classes())?;
    let (alpha, beta) = match kind {
        SoftRegionKind::Dice => (0.5, 0.5),
        SoftRegionKind::Jaccard => (1.0, 1.0),
        SoftRegionKind::Tversky => (alpha, beta),
    };

    let samples = logits.samples();
    let classes = logits.classes();
    let probs = softmax(logits);
    let p = probs.matrix();

    let mut soft_tp = vec![0.0f64; classes];
    let mut soft_fp = vec![0.0f64; classes];
    let mut support = vec![0u64; classes];
    for n in 0..samples {
        let y = labels[n];
        support[y] += 1;
        for (c, &pc) in p.row(n).iter().enumerate() {
            if c == y {
                soft_tp[c] += pc;
            } else {
                soft_fp[c] += pc;
            }
        }
    }

    let present: Vec<usize> = (0..classes).filter(|&c| support[c] > 0).collect();
    let k = present.len() as f64;

    let mut numer = vec![0.0f64; classes];
    let mut denom = vec![0.0f64; classes];
    let mut metric_sum = 0.0;
    for &c in &present {
        let soft_fn = support[c] as f64 - soft_tp[c];
        numer[c] = soft_tp[c] + epsilon;
        denom[c] = soft_tp[c] + alpha * soft_fp[c] + beta * soft_fn + epsilon;
        metric_sum += numer[c] / denom[c];
    }
    let value = 1.0 - metric_sum / k;

    // dL/dp_n^c, then the softmax Jacobian per row.
    let mut grad = Matrix::zeros(samples, classes);
    for n in 0..samples {
        let y = labels[n];
        let prow = p.row(n);
        let mut dp = vec![0.0f64; classes];
        for &c in &present {
            let (da, db) = if c == y { (1.0, 1.0 - beta) } else { (0.0, alpha) };
            let dm = (da * denom[c] - numer[c] * db) / (denom[c] * denom[c]);
            dp[c] = -dm / k;
        }
        let dot: f64 = dp.iter().zip(prow).map(|(g, &pc)| g * pc).sum();
        let grow = grad.row_mut(n);
        for c in 0..classes {
            grow[c] = prow[c] * (dp[c] - dot);
        }
    }
    Ok(LossResult { value, grad })
}

/// Weighted cross entropy with weights FP_c/(FP_c+TP_c). Kept only to
/// demonstrate how rewarding false positives makes them explode.
pub fn precision_loss_demo(
    logits: &LogitsBatch,
    labels: &[usize],
    precision_weights: &ClassWeights,
) -> Result<LossResult> {
    for (c, &w) in precision_weights.as_slice().iter().enumerate() {
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::invalid_input(format!(
                "precision weight {w} for class {c} must lie in [0,1]"
            )));
        }
    }
    weighted_ce(logits, labels, precision_weights)
}

/// String identifiers for every loss the CLI and trainer accept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossId {
    Ce,
    WeightedCe,
    BalancedCe,
    Recall,
    Focal,
    Ohem,
    SoftDice,
    SoftJaccard,
    SoftTversky,
    PrecisionDemo,
}

impl LossId {
    pub const ALL: [LossId; 10] = [
        LossId::Ce,
        LossId::WeightedCe,
        LossId::BalancedCe,
        LossId::Recall,
        LossId::Focal,
        LossId::Ohem,
        LossId::SoftDice,
        LossId::SoftJaccard,
        LossId::SoftTversky,
        LossId::PrecisionDemo,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            LossId::Ce => "ce",
            LossId::WeightedCe => "weighted_ce",
            LossId::BalancedCe => "balanced_ce",
            LossId::Recall => "recall",
            LossId::Focal => "focal",
            LossId::Ohem => "ohem",
            LossId::SoftDice => "soft_dice",
            LossId::SoftJaccard => "soft_jaccard",
            LossId::SoftTversky => "soft_tversky",
            LossId::PrecisionDemo => "precision_demo",
        }
    }

    pub fn valid_ids() -> String {
        LossId::ALL
            .iter()
            .map(|id| id.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    }
}

impl fmt::Display for LossId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossId::ALL
            .iter()
            .find(|id| id.as_str() == s)
            .copied()
            .ok_or_else(|| {
                Error::invalid_input(format!(
                    "unknown loss identifier '{s}'; valid identifiers: {}",
                    LossId::valid_ids()
                ))
            })
    }
}
