//! Confusion-matrix construction and per-class region metrics, in both
//! Boolean-count and set representations, plus the aggregate mean accuracy
//! and mean IoU used to score every experiment.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::ProbBatch;

/// C×C count table; rows are ground-truth classes, columns predicted classes.
/// Counts are u64 so pixel tallies over many images cannot overflow.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<u64>,
    classes: usize,
}

impl ConfusionMatrix {
    pub fn zeros(classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![0; classes * classes],
            classes,
        }
    }

    /// Tallies predictions against labels. Both sequences must have equal
    /// length and every id must lie in [0, classes).
    pub fn from_predictions(preds: &[usize], labels: &[usize], classes: usize) -> Result<Self> {
        if preds.len() != labels.len() {
            return Err(Error::invalid_input(format!(
                "length mismatch: {} predictions vs {} labels",
                preds.len(),
                labels.len()
            )));
        }
        let mut cm = ConfusionMatrix::zeros(classes);
        for (&p, &g) in preds.iter().zip(labels) {
            if p >= classes || g >= classes {
                return Err(Error::invalid_input(format!(
                    "class id out of range: pred {p}, label {g}, classes {classes}"
                )));
            }
            cm.counts[g * classes + p] += 1;
        }
        Ok(cm)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds another matrix into this one; parallel workers each build a local
    /// matrix and merge.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.classes != other.classes {
            return Err(Error::invalid_input(format!(
                "cannot merge {}-class into {}-class confusion matrix",
                other.classes, self.classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    fn row_sum(&self, truth: usize) -> u64 {
        (0..self.classes).map(|p| self.get(truth, p)).sum()
    }

    fn col_sum(&self, pred: usize) -> u64 {
        (0..self.classes).map(|g| self.get(g, pred)).sum()
    }
}

/// TP/FP/FN/TN counts for one class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
}

impl ClassCounts {
    /// Class support N_c = TP + FN, the number of ground-truth samples.
    pub fn support(&self) -> u64 {
        self.true_pos + self.false_neg
    }
}

/// Per-class counts derived from a confusion matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassStats {
    per_class: Vec<ClassCounts>,
    total: u64,
}

impl ClassStats {
    pub fn classes(&self) -> usize {
        self.per_class.len()
    }

    pub fn class(&self, c: usize) -> ClassCounts {
        self.per_class[c]
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Recall TP/(TP+FN); `None` when the class has no ground-truth samples.
    pub fn recall(&self, c: usize) -> Option<f64> {
        region_metric(self.class(c), MetricKind::Recall, 0.0, 0.0)
            .expect("recall takes no alpha/beta")
    }

    /// Precision TP/(TP+FP); `None` when the class was never predicted.
    pub fn precision(&self, c: usize) -> Option<f64> {
        region_metric(self.class(c), MetricKind::Precision, 0.0, 0.0)
            .expect("precision takes no alpha/beta")
    }
}

/// TP on the diagonal; FN completes the row, FP the column, TN the rest.
pub fn class_stats(cm: &ConfusionMatrix) -> ClassStats {
    let total = cm.total();
    let per_class = (0..cm.classes())
        .map(|c| {
            let tp = cm.get(c, c);
            let false_neg = cm.row_sum(c) - tp;
            let false_pos = cm.col_sum(c) - tp;
            ClassCounts {
                true_pos: tp,
                false_pos,
                false_neg,
                true_neg: total - tp - false_pos - false_neg,
            }
        })
        .collect();
    ClassStats { per_class, total }
}

/// Region metrics computable from one class's counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Recall,
    Precision,
    Dice,
    Jaccard,
    F1,
    Tversky,
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recall" => Ok(MetricKind::Recall),
            "precision" => Ok(MetricKind::Precision),
            "dice" => Ok(MetricKind::Dice),
            "jaccard" => Ok(MetricKind::Jaccard),
            "f1" => Ok(MetricKind::F1),
            "tversky" => Ok(MetricKind::Tversky),
            other => Err(Error::invalid_input(format!(
                "unknown metric kind '{other}' (expected recall, precision, dice, jaccard, f1 or tversky)"
            ))),
        }
    }
}

/// Boolean-representation region metric. `alpha`/`beta` only affect Tversky.
/// Returns `None` (the undefined marker) when the denominator is zero.
pub fn region_metric(
    counts: ClassCounts,
    kind: MetricKind,
    alpha: f64,
    beta: f64,
) -> Result<Option<f64>> {
    if alpha < 0.0 || beta < 0.0 {
        return Err(Error::invalid_input(format!(
            "tversky weights must be non-negative, got alpha={alpha}, beta={beta}"
        )));
    }
    let tp = counts.true_pos as f64;
    let fp = counts.false_pos as f64;
    let fneg = counts.false_neg as f64;
    let (num, den) = match kind {
        MetricKind::Recall => (tp, tp + fneg),
        MetricKind::Precision => (tp, tp + fp),
        MetricKind::Dice => (2.0 * tp, 2.0 * tp + fp + fneg),
        MetricKind::Jaccard => (tp, tp + fp + fneg),
        MetricKind::F1 => (tp, tp + 0.5 * fp + 0.5 * fneg),
        MetricKind::Tversky => (tp, tp + alpha * fp + beta * fneg),
    };
    Ok(if den == 0.0 { None } else { Some(num / den) })
}

/// Set-representation oracle: the same metrics computed straight from the
/// ground-truth and prediction index sets. F1 and Tversky use the induced
/// TP/FP/FN cardinalities, the canonical count form.
pub fn set_metric_oracle(
    gt_set: &BTreeSet<usize>,
    pred_set: &BTreeSet<usize>,
    universe: usize,
    kind: MetricKind,
    alpha: f64,
    beta: f64,
) -> Result<Option<f64>> {
    for &i in gt_set.iter().chain(pred_set.iter()) {
        if i >= universe {
            return Err(Error::invalid_input(format!(
                "set element {i} outside universe of size {universe}"
            )));
        }
    }
    if alpha < 0.0 || beta < 0.0 {
        return Err(Error::invalid_input(format!(
            "tversky weights must be non-negative, got alpha={alpha}, beta={beta}"
        )));
    }
    let inter = gt_set.intersection(pred_set).count() as f64;
    let g = gt_set.len() as f64;
    let p = pred_set.len() as f64;
    let union = g + p - inter;
    let (num, den) = match kind {
        MetricKind::Recall => (inter, g),
        MetricKind::Precision => (inter, p),
        MetricKind::Dice => (2.0 * inter, g + p),
        MetricKind::Jaccard => (inter, union),
        MetricKind::F1 => (inter, inter + 0.5 * (p - inter) + 0.5 * (g - inter)),
        MetricKind::Tversky => (inter, inter + alpha * (p - inter) + beta * (g - inter)),
    };
    Ok(if den == 0.0 { None } else { Some(num / den) })
}

/// Per-class metric table plus the two aggregate axes. Undefined per-class
/// values are excluded from the means rather than counted as zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub recall: Vec<Option<f64>>,
    pub precision: Vec<Option<f64>>,
    pub dice: Vec<Option<f64>>,
    pub jaccard: Vec<Option<f64>>,
    pub mean_accuracy: Option<f64>,
    pub mean_iou: Option<f64>,
}

fn mean_of_defined(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().filter_map(|v| *v).collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

/// Computes every per-class metric and the unweighted means over classes
/// where the metric is defined.
pub fn aggregate_metrics(cm: &ConfusionMatrix) -> MetricsReport {
    let stats = class_stats(cm);
    let metric = |kind: MetricKind| -> Vec<Option<f64>> {
        (0..stats.classes())
            .map(|c| region_metric(stats.class(c), kind, 0.0, 0.0).expect("no alpha/beta"))
            .collect()
    };
    let recall = metric(MetricKind::Recall);
    let precision = metric(MetricKind::Precision);
    let dice = metric(MetricKind::Dice);
    let jaccard = metric(MetricKind::Jaccard);
    let mean_accuracy = mean_of_defined(&recall);
    let mean_iou = mean_of_defined(&jaccard);
    MetricsReport {
        recall,
        precision,
        dice,
        jaccard,
        mean_accuracy,
        mean_iou,
    }
}

fn push_opt(out: &mut String, v: Option<f64>) {
    match v {
        Some(x) => {
            let _ = write!(out, "{x}");
        }
        None => out.push_str("nan"),
    }
}

impl MetricsReport {
    pub fn classes(&self) -> usize {
        self.recall.len()
    }

    /// CSV header matching [`MetricsReport::csv_row`]:
    /// `recall_<c>,...,precision_<c>,...,dice_<c>,...,iou_<c>,...,mean_accuracy,mean_iou`.
    pub fn csv_header(classes: usize) -> String {
        let mut cols = Vec::new();
        for name in ["recall", "precision", "dice", "iou"] {
            for c in 0..classes {
                cols.push(format!("{name}_{c}"));
            }
        }
        cols.push("mean_accuracy".to_string());
        cols.push("mean_iou".to_string());
        cols.join(",")
    }

    /// One flat CSV row; undefined values serialize as `nan`.
    pub fn csv_row(&self) -> String {
        let mut out = String::new();
        for column in [&self.recall, &self.precision, &self.dice, &self.jaccard] {
            for &v in column.iter() {
                push_opt(&mut out, v);
                out.push(',');
            }
        }
        push_opt(&mut out, self.mean_accuracy);
        out.push(',');
        push_opt(&mut out, self.mean_iou);
        out
    }
}

/// Geometric mean of the true-class probabilities of class `c`, computed in
/// log space. `None` when the class has no samples.
pub fn geometric_mean_confidence(
    probs: &ProbBatch,
    labels: &[usize],
    class: usize,
) -> Result<Option<f64>> {
    if labels.len() != probs.samples() {
        return Err(Error::invalid_input(format!(
            "{} labels for {} samples",
            labels.len(),
            probs.samples()
        )));
    }
    let mut log_sum = 0.0;
    let mut count = 0u64;
    for (n, &y) in labels.iter().enumerate() {
        if y >= probs.classes() {
            return Err(Error::invalid_input(format!(
                "label {y} out of range for {} classes",
                probs.classes()
            )));
        }
        if y == class {
            log_sum += probs.matrix().get(n, y).ln();
            count += 1;
        }
    }
    if count == 0 {
        Ok(None)
    } else {
        Ok(Some((log_sum / count as f64).exp()))
    }
}
