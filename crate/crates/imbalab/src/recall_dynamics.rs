//! Time-dependent per-class performance estimates and the weight
//! trajectories derived from them: the recall-complement weights driving the
//! dynamically weighted loss, the analogous precision-complement weights for
//! the pathology demo, and the per-iteration normalized weight traces.

use crate::error::{Error, Result};
use crate::losses::ClassWeights;
use crate::metrics::{class_stats, ConfusionMatrix};
use crate::numeric::ProbBatch;

/// Running per-class recall estimate R_{c,t} with exponential smoothing.
/// smoothing = 0 keeps the raw per-batch recall; estimates start at zero so
/// the first steps weight every class fully, i.e. behave like plain cross
/// entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct RecallState {
    estimate: Vec<f64>,
    smoothing: f64,
    step: u64,
}

impl RecallState {
    pub fn new(classes: usize, smoothing: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&smoothing) {
            return Err(Error::invalid_input(format!(
                "smoothing must lie in [0,1), got {smoothing}"
            )));
        }
        Ok(RecallState {
            estimate: vec![0.0; classes],
            smoothing,
            step: 0,
        })
    }

    pub fn classes(&self) -> usize {
        self.estimate.len()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn estimates(&self) -> &[f64] {
        &self.estimate
    }

    /// Folds one batch's confusion matrix into the estimates. Classes present
    /// in the batch move toward their batch recall by the smoothing rule;
    /// absent classes keep their previous estimate.
    pub fn update(&mut self, batch_cm: &ConfusionMatrix) -> Result<()> {
        if batch_cm.classes() != self.estimate.len() {
            return Err(Error::invalid_input(format!(
                "confusion matrix has {} classes, state has {}",
                batch_cm.classes(),
                self.estimate.len()
            )));
        }
        let stats = class_stats(batch_cm);
        for (c, est) in self.estimate.iter_mut().enumerate() {
            if let Some(batch_recall) = stats.recall(c) {
                *est = self.smoothing * *est + (1.0 - self.smoothing) * batch_recall;
            }
        }
        self.step += 1;
        Ok(())
    }

    /// Loss weights 1 − R_{c,t}, each in [0,1].
    pub fn weights(&self) -> ClassWeights {
        ClassWeights::new(self.estimate.iter().map(|r| 1.0 - r).collect())
            .expect("estimates stay in [0,1]")
    }
}

/// Precision counterpart of [`RecallState`]: tracks per-class precision and
/// exposes the complement FP/(FP+TP) as weights. Exists solely to drive the
/// false-positive-explosion demonstration.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionState {
    estimate: Vec<f64>,
    smoothing: f64,
    step: u64,
}

impl PrecisionState {
    pub fn new(classes: usize, smoothing: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&smoothing) {
            return Err(Error::invalid_input(format!(
                "smoothing must lie in [0,1), got {smoothing}"
            )));
        }
        Ok(PrecisionState {
            estimate: vec![0.0; classes],
            smoothing,
            step: 0,
        })
    }

    /// Classes predicted at least once in the batch move toward their batch
    /// precision; unpredicted classes keep their previous estimate.
    pub fn update(&mut self, batch_cm: &ConfusionMatrix) -> Result<()> {
        if batch_cm.classes() != self.estimate.len() {
            return Err(Error::invalid_input(format!(
                "confusion matrix has {} classes, state has {}",
                batch_cm.classes(),
                self.estimate.len()
            )));
        }
        let stats = class_stats(batch_cm);
        for (c, est) in self.estimate.iter_mut().enumerate() {
            if let Some(batch_precision) = stats.precision(c) {
                *est = self.smoothing * *est + (1.0 - self.smoothing) * batch_precision;
            }
        }
        self.step += 1;
        Ok(())
    }

    /// Weights FP/(FP+TP) = 1 − precision, each in [0,1].
    pub fn weights(&self) -> ClassWeights {
        ClassWeights::new(self.estimate.iter().map(|p| 1.0 - p).collect())
            .expect("estimates stay in [0,1]")
    }
}

/// w / Σw, summing to one; `None` when every weight is zero (perfect recall
/// everywhere leaves nothing to normalize).
pub fn normalized_weights(weights: &ClassWeights) -> Option<Vec<f64>> {
    let sum: f64 = weights.as_slice().iter().sum();
    if sum > 0.0 {
        Some(weights.as_slice().iter().map(|w| w / sum).collect())
    } else {
        None
    }
}

/// Per-class mean focal weight (1 − p_n)^γ over each class's samples in the
/// batch; `None` for classes absent from the batch.
pub fn focal_class_weights(
    probs: &ProbBatch,
    labels: &[usize],
    gamma: f64,
) -> Result<Vec<Option<f64>>> {
    if !(gamma >= 0.0) {
        return Err(Error::invalid_input(format!(
            "focal gamma must be >= 0, got {gamma}"
        )));
    }
    if labels.len() != probs.samples() {
        return Err(Error::invalid_input(format!(
            "{} labels for {} samples",
            labels.len(),
            probs.samples()
        )));
    }
    let classes = probs.classes();
    let mut sums = vec![0.0f64; classes];
    let mut counts = vec![0u64; classes];
    for (n, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::invalid_input(format!(
                "label {y} out of range for {classes} classes"
            )));
        }
        sums[y] += (1.0 - probs.matrix().get(n, y)).powf(gamma);
        counts[y] += 1;
    }
    Ok((0..classes)
        .map(|c| {
            if counts[c] > 0 {
                Some(sums[c] / counts[c] as f64)
            } else {
                None
            }
        })
        .collect())
}

/// One iteration's weight snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightRecord {
    pub step: u64,
    pub raw_recall_weights: Vec<f64>,
    pub recall_weights_norm: Vec<Option<f64>>,
    pub focal_weights_norm: Vec<Option<f64>>,
    /// Normalized recall weight over normalized focal weight; `None` where
    /// the focal weight is zero or undefined.
    pub ratio: Vec<Option<f64>>,
}

/// Per-iteration record of normalized recall weights, normalized focal
/// weights and their per-class ratio.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightTrace {
    records: Vec<WeightRecord>,
}

impl WeightTrace {
    pub fn new() -> Self {
        WeightTrace::default()
    }

    pub fn records(&self) -> &[WeightRecord] {
        &self.records
    }

    /// Appends one record computed from the recall state snapshot and the
    /// batch focal weights of the same step.
    pub fn record(
        &mut self,
        step: u64,
        state: &RecallState,
        focal_weights: &[Option<f64>],
    ) -> Result<()> {
        if focal_weights.len() != state.classes() {
            return Err(Error::invalid_input(format!(
                "{} focal weights for {} classes",
                focal_weights.len(),
                state.classes()
            )));
        }
        let raw = state.weights();
        let recall_norm: Vec<Option<f64>> = match normalized_weights(&raw) {
            Some(v) => v.into_iter().map(Some).collect(),
            None => vec![None; state.classes()],
        };
        let focal_sum: f64 = focal_weights.iter().flatten().sum();
        let focal_norm: Vec<Option<f64>> = focal_weights
            .iter()
            .map(|w| match w {
                Some(v) if focal_sum > 0.0 => Some(v / focal_sum),
                _ => None,
            })
            .collect();
        let ratio = recall_norm
            .iter()
            .zip(&focal_norm)
            .map(|(r, f)| match (r, f) {
                (Some(r), Some(f)) if *f > 0.0 => Some(r / f),
                _ => None,
            })
            .collect();
        self.records.push(WeightRecord {
            step,
            raw_recall_weights: raw.as_slice().to_vec(),
            recall_weights_norm: recall_norm,
            focal_weights_norm: focal_norm,
            ratio,
        });
        Ok(())
    }

    /// CSV with one row per (step, class):
    /// `step,class_id,recall_weight_norm,focal_weight_norm,ratio`.
    pub fn to_csv(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::from("step,class_id,recall_weight_norm,focal_weight_norm,ratio\n");
        let fmt = |v: &Option<f64>| match v {
            Some(x) => format!("{x}"),
            None => "nan".to_string(),
        };
        for rec in &self.records {
            for c in 0..rec.recall_weights_norm.len() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    rec.step,
                    c,
                    fmt(&rec.recall_weights_norm[c]),
                    fmt(&rec.focal_weights_norm[c]),
                    fmt(&rec.ratio[c]),
                );
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Matrix;
    use crate::rng::Rng;

    fn cm(preds: &[usize], labels: &[usize], classes: usize) -> ConfusionMatrix {
        ConfusionMatrix::from_predictions(preds, labels, classes).unwrap()
    }

    #[test]
    fn raw_batch_recall_with_zero_smoothing() {
        let mut state = RecallState::new(2, 0.0).unwrap();
        // Class 0 perfectly recalled, class 1 fully missed.
        state.update(&cm(&[0, 0, 0], &[0, 0, 1], 2)).unwrap();
        assert_eq!(state.estimates(), &[1.0, 0.0]);
        assert_eq!(state.weights().as_slice(), &[0.0, 1.0]);
        assert_eq!(state.step(), 1);
    }

    #[test]
    fn absent_class_keeps_estimate() {
        let mut state = RecallState::new(2, 0.0).unwrap();
        state.update(&cm(&[0, 1], &[0, 1], 2)).unwrap();
        assert_eq!(state.estimates(), &[1.0, 1.0]);
        // Next batch only contains class 0, missed entirely.
        state.update(&cm(&[1, 1], &[0, 0], 2)).unwrap();
        assert_eq!(state.estimates(), &[0.0, 1.0]);
    }

    #[test]
    fn smoothing_is_convex_combination() {
        let mut state = RecallState::new(1, 0.9).unwrap();
        // Seed the estimate to 0.5 through two literal updates.
        state.update(&cm(&[0], &[0], 1)).unwrap(); // est = 0.1
        state.estimate[0] = 0.5;
        state.update(&cm(&[0], &[0], 1)).unwrap();
        assert!((state.estimates()[0] - 0.55).abs() < 1e-15);
    }

    #[test]
    fn estimates_stay_in_unit_interval() {
        let mut rng = Rng::new(21);
        let mut state = RecallState::new(3, 0.7).unwrap();
        for _ in 0..200 {
            let n = 1 + rng.below(10);
            let preds: Vec<usize> = (0..n).map(|_| rng.below(3)).collect();
            let labels: Vec<usize> = (0..n).map(|_| rng.below(3)).collect();
            state.update(&cm(&preds, &labels, 3)).unwrap();
            for &e in state.estimates() {
                assert!((0.0..=1.0).contains(&e), "estimate {e}");
            }
        }
    }

    #[test]
    fn update_is_deterministic() {
        let batch = cm(&[0, 1, 1], &[0, 0, 1], 2);
        let mut a = RecallState::new(2, 0.5).unwrap();
        let mut b = RecallState::new(2, 0.5).unwrap();
        a.update(&batch).unwrap();
        b.update(&batch).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn state_rejects_bad_smoothing_and_shape() {
        assert!(RecallState::new(2, 1.0).is_err());
        assert!(RecallState::new(2, -0.1).is_err());
        let mut state = RecallState::new(2, 0.0).unwrap();
        assert!(state.update(&cm(&[0], &[0], 1)).is_err());
    }

    #[test]
    fn precision_state_tracks_complement() {
        let mut state = PrecisionState::new(2, 0.0).unwrap();
        // Class 0 predicted twice, once falsely: precision 1/2.
        state.update(&cm(&[0, 0, 1], &[0, 1, 1], 2)).unwrap();
        assert_eq!(state.weights().as_slice(), &[0.5, 0.0]);
    }

    #[test]
    fn normalized_weights_examples() {
        let w = ClassWeights::new(vec![1.0, 1.0]).unwrap();
        assert_eq!(normalized_weights(&w).unwrap(), vec![0.5, 0.5]);
        let w = ClassWeights::new(vec![0.2, 0.3, 0.5]).unwrap();
        assert_eq!(normalized_weights(&w).unwrap(), vec![0.2, 0.3, 0.5]);
        let w = ClassWeights::new(vec![0.0, 0.0]).unwrap();
        assert_eq!(normalized_weights(&w), None);
    }

    #[test]
    fn normalized_weights_scale_invariant() {
        let mut rng = Rng::new(33);
        for _ in 0..20 {
            let raw: Vec<f64> = (0..4).map(|_| rng.uniform(0.01, 5.0)).collect();
            let scale = rng.uniform(0.1, 100.0);
            let scaled: Vec<f64> = raw.iter().map(|w| w * scale).collect();
            let a = normalized_weights(&ClassWeights::new(raw).unwrap()).unwrap();
            let b = normalized_weights(&ClassWeights::new(scaled).unwrap()).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn focal_weights_hand_example() {
        // True-class probabilities 0.9 and 0.7 for class 0, gamma 1 -> 0.2.
        let probs = ProbBatch::new(Matrix::from_vec(2, 2, vec![0.9, 0.1, 0.7, 0.3]).unwrap())
            .unwrap();
        let w = focal_class_weights(&probs, &[0, 0], 1.0).unwrap();
        assert!((w[0].unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(w[1], None);
    }

    #[test]
    fn focal_weights_perfect_probabilities_zero() {
        let probs = ProbBatch::new(Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap())
            .unwrap();
        let w = focal_class_weights(&probs, &[0, 1], 2.0).unwrap();
        assert_eq!(w, vec![Some(0.0), Some(0.0)]);
    }

    #[test]
    fn focal_weights_gamma_one_is_one_minus_mean_confidence() {
        let mut rng = Rng::new(44);
        let n = 24;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let a = rng.uniform(0.05, 0.95);
            rows.extend([a, 1.0 - a]);
            labels.push(rng.below(2));
        }
        let probs = ProbBatch::new(Matrix::from_vec(n, 2, rows).unwrap()).unwrap();
        let w = focal_class_weights(&probs, &labels, 1.0).unwrap();
        for c in 0..2 {
            let member: Vec<f64> = labels
                .iter()
                .enumerate()
                .filter(|(_, &y)| y == c)
                .map(|(i, _)| probs.matrix().get(i, c))
                .collect();
            if member.is_empty() {
                assert_eq!(w[c], None);
            } else {
                let mean = member.iter().sum::<f64>() / member.len() as f64;
                assert!((w[c].unwrap() - (1.0 - mean)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn trace_equal_weights_gives_unit_ratio() {
        let mut state = RecallState::new(2, 0.0).unwrap();
        state.update(&cm(&[0, 1, 1, 0], &[0, 0, 1, 1], 2)).unwrap();
        // Both classes at recall 1/2: recall weights equal.
        let mut trace = WeightTrace::new();
        trace
            .record(1, &state, &[Some(0.3), Some(0.3)])
            .unwrap();
        let rec = &trace.records()[0];
        assert_eq!(rec.recall_weights_norm, vec![Some(0.5), Some(0.5)]);
        assert_eq!(rec.focal_weights_norm, vec![Some(0.5), Some(0.5)]);
        assert_eq!(rec.ratio, vec![Some(1.0), Some(1.0)]);
    }

    #[test]
    fn trace_zero_focal_weight_undefined_ratio() {
        let state = RecallState::new(2, 0.0).unwrap();
        let mut trace = WeightTrace::new();
        trace.record(1, &state, &[Some(0.0), Some(0.4)]).unwrap();
        let rec = &trace.records()[0];
        assert_eq!(rec.ratio[0], None);
        assert!(rec.ratio[1].is_some());
    }

    #[test]
    fn trace_single_class_normalizes_to_one() {
        let state = RecallState::new(1, 0.0).unwrap();
        let mut trace = WeightTrace::new();
        trace.record(1, &state, &[Some(0.7)]).unwrap();
        let rec = &trace.records()[0];
        assert_eq!(rec.recall_weights_norm, vec![Some(1.0)]);
        assert_eq!(rec.focal_weights_norm, vec![Some(1.0)]);
    }

    #[test]
    fn trace_normalized_rows_sum_to_one() {
        let mut state = RecallState::new(3, 0.5).unwrap();
        let mut rng = Rng::new(55);
        let mut trace = WeightTrace::new();
        for step in 1..=50u64 {
            let preds: Vec<usize> = (0..12).map(|_| rng.below(3)).collect();
            let labels: Vec<usize> = (0..12).map(|_| rng.below(3)).collect();
            state.update(&cm(&preds, &labels, 3)).unwrap();
            let focal = vec![Some(rng.next_f64()), Some(rng.next_f64()), Some(rng.next_f64())];
            trace.record(step, &state, &focal).unwrap();
        }
        for rec in trace.records() {
            let recall_sum: f64 = rec.recall_weights_norm.iter().flatten().sum();
            let focal_sum: f64 = rec.focal_weights_norm.iter().flatten().sum();
            if rec.recall_weights_norm.iter().any(|v| v.is_some()) {
                assert!((recall_sum - 1.0).abs() < 1e-9);
            }
            assert!((focal_sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn trace_csv_schema() {
        let state = RecallState::new(2, 0.0).unwrap();
        let mut trace = WeightTrace::new();
        trace.record(1, &state, &[Some(0.5), None]).unwrap();
        let csv = trace.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "step,class_id,recall_weight_norm,focal_weight_norm,ratio"
        );
        assert_eq!(csv.lines().count(), 3);
        let last = csv.lines().last().unwrap();
        assert!(last.starts_with("1,1,"));
        assert!(last.ends_with("nan,nan"));
    }
}
