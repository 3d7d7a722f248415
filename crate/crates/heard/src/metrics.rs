//! General and early-detection-specific evaluation: accuracy, macro F1,
//! Early Rate, Stabilized Early Accuracy, and accuracy over deadline
//! checkpoints.

use serde::{Deserialize, Serialize};

use crate::detector::StepPrediction;
use crate::error::{HeardError, Result};

/// Result of running one instance through the detection pipeline.
///
/// The trail always covers all intervals; entries beyond the stop index
/// exist for stability auditing only. `post_index` is the 1-based index of
/// the last post consumed at the stop, used by post-level metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    pub instance_id: String,
    pub label_hat: u8,
    pub stop_index: usize,
    pub stop_time: f64,
    pub post_index: usize,
    pub trail: Vec<StepPrediction>,
    pub expected_future_inverses: Vec<f64>,
    pub n_posts: usize,
    pub n_intervals: usize,
    /// True when the stream ended before the stopping policy fired.
    pub forced: bool,
}

/// Accuracy and two-class macro F1 of the stop-point predictions.
pub fn accuracy_f1(outcomes: &[DetectionOutcome], labels: &[u8]) -> Result<(f64, f64)> {
    if outcomes.is_empty() || outcomes.len() != labels.len() {
        return Err(HeardError::Validation(format!(
            "outcome/label length mismatch: {} vs {}",
            outcomes.len(),
            labels.len()
        )));
    }
    let mut confusion = [[0usize; 2]; 2];
    for (o, &y) in outcomes.iter().zip(labels) {
        confusion[y as usize][o.label_hat as usize] += 1;
    }
    let correct = confusion[0][0] + confusion[1][1];
    let acc = correct as f64 / outcomes.len() as f64;

    let mut f1_sum = 0.0;
    for class in 0..2 {
        let tp = confusion[class][class];
        let fp = confusion[1 - class][class];
        let fn_ = confusion[class][1 - class];
        let f1 = if tp == 0 {
            0.0
        } else {
            let precision = tp as f64 / (tp + fp) as f64;
            let recall = tp as f64 / (tp + fn_) as f64;
            2.0 * precision * recall / (precision + recall)
        };
        f1_sum += f1;
    }
    Ok((acc, f1_sum / 2.0))
}

/// Mean fraction of posts consumed before the decision. Lower is earlier.
pub fn early_rate(outcomes: &[DetectionOutcome]) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(HeardError::Validation("no outcomes for early rate".into()));
    }
    let sum: f64 = outcomes
        .iter()
        .map(|o| o.post_index as f64 / o.n_posts as f64)
        .sum();
    Ok(sum / outcomes.len() as f64)
}

/// Number of post-stop label flips in the trail.
fn flips_after_stop(outcome: &DetectionOutcome) -> usize {
    outcome
        .trail
        .windows(2)
        .skip(outcome.stop_index - 1)
        .filter(|w| w[0].label != w[1].label)
        .count()
}

/// Stabilized Early Accuracy: the mean of three bounded terms per instance
/// (correctness at the stop point, earliness in posts, and the fraction of
/// unchanged predictions after the stop). An instance that stops at the
/// final interval has no future steps and counts as perfectly stable.
pub fn sea(outcomes: &[DetectionOutcome], labels: &[u8]) -> Result<f64> {
    if outcomes.is_empty() || outcomes.len() != labels.len() {
        return Err(HeardError::Validation(format!(
            "outcome/label length mismatch: {} vs {}",
            outcomes.len(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (o, &y) in outcomes.iter().zip(labels) {
        let correct = f64::from(o.label_hat == y);
        let earliness = 1.0 - o.post_index as f64 / o.n_posts as f64;
        let stability = if o.stop_index == o.n_intervals {
            1.0
        } else {
            let future = (o.n_intervals - o.stop_index) as f64;
            1.0 - flips_after_stop(o) as f64 / future
        };
        total += correct + earliness + stability;
    }
    Ok(total / (3.0 * outcomes.len() as f64))
}

/// Accuracy and mean decision time at one deadline checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdaotPoint {
    pub t: f64,
    pub acc: f64,
    pub avg_t: f64,
}

/// Early detection accuracy over time. At each checkpoint an instance keeps
/// its early decision if the policy fired by then; otherwise it is forced
/// to predict with the last interval before the checkpoint (or the first
/// interval when no data has arrived yet), at the checkpoint time.
pub fn edaot(
    outcomes: &[DetectionOutcome],
    labels: &[u8],
    checkpoints: &[f64],
) -> Result<Vec<EdaotPoint>> {
    if outcomes.is_empty() || outcomes.len() != labels.len() {
        return Err(HeardError::Validation(format!(
            "outcome/label length mismatch: {} vs {}",
            outcomes.len(),
            labels.len()
        )));
    }
    for w in checkpoints.windows(2) {
        if w[1] <= w[0] {
            return Err(HeardError::Validation("checkpoints must be strictly increasing".into()));
        }
    }
    let mut points = Vec::with_capacity(checkpoints.len());
    for &cp in checkpoints {
        let mut correct = 0usize;
        let mut time_sum = 0.0;
        for (o, &y) in outcomes.iter().zip(labels) {
            let (pred, time) = decision_at_checkpoint(o, cp);
            correct += usize::from(pred == y);
            time_sum += time;
        }
        points.push(EdaotPoint {
            t: cp,
            acc: correct as f64 / outcomes.len() as f64,
            avg_t: time_sum / outcomes.len() as f64,
        });
    }
    Ok(points)
}

fn decision_at_checkpoint(outcome: &DetectionOutcome, checkpoint: f64) -> (u8, f64) {
    if !outcome.forced && outcome.stop_time <= checkpoint {
        return (outcome.label_hat, outcome.stop_time);
    }
    let before = outcome
        .trail
        .iter()
        .take_while(|p| p.t <= checkpoint)
        .last()
        .unwrap_or(&outcome.trail[0]);
    (before.label, checkpoint)
}

/// Full metric report emitted by the evaluation command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub acc: f64,
    pub f1: f64,
    pub er: f64,
    pub sea: f64,
    pub edaot: Vec<EdaotPoint>,
}

pub fn report(
    outcomes: &[DetectionOutcome],
    labels: &[u8],
    checkpoints: &[f64],
) -> Result<MetricReport> {
    let (acc, f1) = accuracy_f1(outcomes, labels)?;
    Ok(MetricReport {
        acc,
        f1,
        er: early_rate(outcomes)?,
        sea: sea(outcomes, labels)?,
        edaot: edaot(outcomes, labels, checkpoints)?,
    })
}

/// EDAOT rows as CSV for plotting.
pub fn edaot_csv(points: &[EdaotPoint]) -> String {
    let mut out = String::from("t,acc,avg_t\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.t, p.acc, p.avg_t));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn outcome(labels: &[u8], stop_index: usize, posts_per_interval: usize) -> DetectionOutcome {
        let n_intervals = labels.len();
        let trail: Vec<StepPrediction> = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| StepPrediction {
                probs: if y == 1 { [0.2, 0.8] } else { [0.8, 0.2] },
                label: y,
                t: (i + 1) as f64 * 10.0,
            })
            .collect();
        DetectionOutcome {
            instance_id: "x".into(),
            label_hat: labels[stop_index - 1],
            stop_index,
            stop_time: trail[stop_index - 1].t,
            post_index: stop_index * posts_per_interval,
            expected_future_inverses: vec![0.0; n_intervals],
            n_posts: n_intervals * posts_per_interval,
            n_intervals,
            trail,
            forced: stop_index == n_intervals,
        }
    }

    #[test]
    fn accuracy_and_f1_perfect() {
        let outcomes = vec![outcome(&[1, 1], 1, 1), outcome(&[0, 0], 1, 1)];
        let (acc, f1) = accuracy_f1(&outcomes, &[1, 0]).unwrap();
        assert_eq!(acc, 1.0);
        assert_eq!(f1, 1.0);
    }

    #[test]
    fn all_positive_predictions_give_third_macro_f1() {
        let outcomes = vec![
            outcome(&[1, 1], 1, 1),
            outcome(&[1, 1], 1, 1),
            outcome(&[1, 1], 1, 1),
            outcome(&[1, 1], 1, 1),
        ];
        let (acc, f1) = accuracy_f1(&outcomes, &[1, 1, 0, 0]).unwrap();
        assert_abs_diff_eq!(acc, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(f1, 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn f1_zero_when_class_never_hit() {
        let outcomes = vec![outcome(&[1, 1], 1, 1), outcome(&[1, 1], 1, 1)];
        let (_, f1) = accuracy_f1(&outcomes, &[1, 0]).unwrap();
        // Class 0 has no true positives, so its F1 is zero by convention.
        assert_abs_diff_eq!(f1, 0.5 * (2.0 / 3.0), epsilon = 1e-12);
    }

    #[test]
    fn accuracy_rejects_length_mismatch() {
        let outcomes = vec![outcome(&[1], 1, 1)];
        assert!(accuracy_f1(&outcomes, &[1, 0]).is_err());
    }

    #[test]
    fn early_rate_midpoint() {
        let outcomes = vec![outcome(&[0; 10], 5, 1), outcome(&[1; 10], 5, 1)];
        assert_abs_diff_eq!(early_rate(&outcomes).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn early_rate_boundaries() {
        let first = vec![outcome(&[0; 10], 1, 1)];
        assert_abs_diff_eq!(early_rate(&first).unwrap(), 0.1, epsilon = 1e-12);
        let last = vec![outcome(&[0; 10], 10, 1)];
        assert_abs_diff_eq!(early_rate(&last).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn sea_correct_early_stable() {
        // Correct at the first interval of ten, never flipping afterwards.
        let outcomes = vec![outcome(&[1; 10], 1, 1)];
        let value = sea(&outcomes, &[1]).unwrap();
        assert_abs_diff_eq!(value, (1.0 + 0.9 + 1.0) / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn sea_wrong_latest_decision() {
        let outcomes = vec![outcome(&[1; 10], 10, 1)];
        let value = sea(&outcomes, &[0]).unwrap();
        assert_abs_diff_eq!(value, 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn sea_counts_post_stop_flips() {
        let outcomes = vec![outcome(&[0, 0, 1, 0, 1], 2, 1)];
        // Three transitions after the stop (steps 2->3, 3->4, 4->5), all flips.
        let value = sea(&outcomes, &[0]).unwrap();
        let expect = (1.0 + (1.0 - 2.0 / 5.0) + (1.0 - 3.0 / 3.0)) / 3.0;
        assert_abs_diff_eq!(value, expect, epsilon = 1e-12);
    }

    #[test]
    fn edaot_decisions_freeze_once_made() {
        let outcomes = vec![outcome(&[1, 1, 1, 1], 2, 1)];
        let points = edaot(&outcomes, &[1], &[25.0, 35.0, 45.0]).unwrap();
        assert!(points.iter().all(|p| p.acc == 1.0));
        assert!(points.iter().all(|p| p.avg_t == 20.0));
    }

    #[test]
    fn edaot_forces_prediction_before_stop() {
        // Stops at interval 3 (t = 30); at checkpoint 15 only interval 1 has
        // arrived, so its prediction is forced at the checkpoint time.
        let outcomes = vec![outcome(&[0, 1, 1], 3, 1)];
        let points = edaot(&outcomes, &[1], &[15.0, 40.0]).unwrap();
        assert_eq!(points[0].acc, 0.0);
        assert_eq!(points[0].avg_t, 15.0);
        assert_eq!(points[1].acc, 1.0);
        assert_eq!(points[1].avg_t, 30.0);
    }

    #[test]
    fn edaot_checkpoint_before_all_data_uses_first_interval() {
        let outcomes = vec![outcome(&[1, 0, 0], 3, 1)];
        let points = edaot(&outcomes, &[1], &[5.0]).unwrap();
        assert_eq!(points[0].acc, 1.0);
        assert_eq!(points[0].avg_t, 5.0);
    }

    #[test]
    fn edaot_avg_time_bounded_by_checkpoint() {
        let outcomes = vec![outcome(&[0, 1, 0, 1], 4, 1), outcome(&[1, 1], 1, 1)];
        let cps = [10.0, 20.0, 30.0, 50.0];
        let points = edaot(&outcomes, &[1, 1], &cps).unwrap();
        for p in &points {
            assert!(p.avg_t <= p.t + 1e-12);
        }
    }

    #[test]
    fn edaot_rejects_unsorted_checkpoints() {
        let outcomes = vec![outcome(&[1], 1, 1)];
        assert!(edaot(&outcomes, &[1], &[10.0, 5.0]).is_err());
    }

    #[test]
    fn report_has_expected_schema() {
        let outcomes = vec![outcome(&[1, 1], 1, 2)];
        let r = report(&outcomes, &[1], &[15.0, 25.0]).unwrap();
        let json = serde_json::to_value(&r).unwrap();
        let keys: Vec<&str> = json.as_object().unwrap().keys().map(|s| s.as_str()).collect();
        assert_eq!(keys, vec!["acc", "f1", "er", "sea", "edaot"]);
        let csv = edaot_csv(&r.edaot);
        assert_eq!(csv.lines().count(), 3);
    }
}
