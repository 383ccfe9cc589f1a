//! Pooled multiclass ROC and gating/end-to-end accuracy.

use serde::{Deserialize, Serialize};

use crate::data::Distribution;
use crate::error::{Error, Result};
use crate::metrics::roc::{roc, RocCurve};

/// Micro-averaged one-vs-rest ROC.
///
/// Every sample contributes one `(score, label)` pair per class, positive only
/// for its own class. Rejected samples score zero on every class; samples
/// without a class (out-of-distribution) are negative for all classes.
pub fn normalized_multiclass_roc(
    class_scores: &[Vec<f64>],
    true_class: &[Option<usize>],
    accepted: &[bool],
) -> Result<RocCurve> {
    let n = class_scores.len();
    if true_class.len() != n || accepted.len() != n {
        return Err(Error::Shape(format!(
            "{n} score rows, {} labels, {} acceptance flags",
            true_class.len(),
            accepted.len()
        )));
    }
    let k = class_scores.first().map_or(0, Vec::len);
    if let Some(i) = class_scores.iter().position(|r| r.len() != k) {
        return Err(Error::Shape(format!(
            "score row {i} has {} classes, expected {k}",
            class_scores[i].len()
        )));
    }
    if let Some(i) = true_class.iter().position(|c| c.is_some_and(|c| c >= k)) {
        return Err(Error::Labels(format!(
            "sample {i} has class outside 0..{k}"
        )));
    }
    let mut scores = Vec::with_capacity(n * k);
    let mut labels = Vec::with_capacity(n * k);
    for ((row, &truth), &ok) in class_scores.iter().zip(true_class).zip(accepted) {
        for (class, &s) in row.iter().enumerate() {
            scores.push(if ok { s } else { 0.0 });
            labels.push(truth == Some(class));
        }
    }
    roc(&scores, &labels)
}

/// What the guarded classifier did with one sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub accepted: bool,
    /// Arg-max class when the sample reached the core classifier.
    pub predicted: Option<usize>,
}

/// Ground truth for one sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DualLabel {
    pub class: Option<usize>,
    pub distribution: Distribution,
}

/// Gating quality treating "accepted" as the positive call and IN as the
/// positive truth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatingRates {
    pub true_accepts: usize,
    pub false_accepts: usize,
    pub true_rejects: usize,
    pub false_rejects: usize,
    pub tpr: f64,
    pub fpr: f64,
    pub precision: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub gating: GatingRates,
    pub correct: usize,
    pub total: usize,
    /// Fraction of samples handled correctly: IN samples accepted and
    /// classified right, OUT samples rejected.
    pub end_to_end: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn accuracy_report(decisions: &[Decision], labels: &[DualLabel]) -> Result<AccuracyReport> {
    if decisions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} decisions but {} labels",
            decisions.len(),
            labels.len()
        )));
    }
    let (mut ta, mut fa, mut tr, mut fr, mut correct) = (0, 0, 0, 0, 0);
    for (d, l) in decisions.iter().zip(labels) {
        match (l.distribution, d.accepted) {
            (Distribution::In, true) => {
                ta += 1;
                if l.class.is_some() && d.predicted == l.class {
                    correct += 1;
                }
            }
            (Distribution::In, false) => fr += 1,
            (Distribution::Out, true) => fa += 1,
            (Distribution::Out, false) => {
                tr += 1;
                correct += 1;
            }
        }
    }
    let total = decisions.len();
    Ok(AccuracyReport {
        gating: GatingRates {
            true_accepts: ta,
            false_accepts: fa,
            true_rejects: tr,
            false_rejects: fr,
            tpr: ratio(ta, ta + fr),
            fpr: ratio(fa, fa + tr),
            precision: ratio(ta, ta + fa),
        },
        correct,
        total,
        end_to_end: ratio(correct, total),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot(k: usize, c: usize) -> Vec<f64> {
        (0..k).map(|i| if i == c { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn perfect_and_fully_rejected() {
        let rows: Vec<_> = (0..6).map(|i| one_hot(3, i % 3)).collect();
        let truth: Vec<_> = (0..6).map(|i| Some(i % 3)).collect();
        let c = normalized_multiclass_roc(&rows, &truth, &[true; 6]).unwrap();
        assert_eq!(c.auc, 1.0);
        let c = normalized_multiclass_roc(&rows, &truth, &[false; 6]).unwrap();
        assert_eq!(c.auc, 0.5);
        assert_eq!(c.points.len(), 2);
    }

    #[test]
    fn mismatched_inputs() {
        assert!(normalized_multiclass_roc(&[vec![1.0, 0.0]], &[Some(0), None], &[true]).is_err());
        assert!(normalized_multiclass_roc(&[vec![1.0, 0.0]], &[Some(2)], &[true]).is_err());
        assert!(accuracy_report(
            &[],
            &[DualLabel {
                class: None,
                distribution: Distribution::Out
            }]
        )
        .is_err());
    }

    #[test]
    fn hand_counted_six_samples() {
        use Distribution::*;
        let d = |accepted, predicted| Decision {
            accepted,
            predicted,
        };
        let l = |class, distribution| DualLabel {
            class,
            distribution,
        };
        let decisions = [
            d(true, Some(0)), // IN accepted, right
            d(true, Some(2)), // IN accepted, wrong
            d(false, None),   // IN rejected
            d(true, Some(1)), // OUT accepted
            d(false, None),   // OUT rejected
            d(false, None),   // OUT rejected
        ];
        let labels = [
            l(Some(0), In),
            l(Some(1), In),
            l(Some(2), In),
            l(None, Out),
            l(None, Out),
            l(None, Out),
        ];
        let r = accuracy_report(&decisions, &labels).unwrap();
        assert_eq!(
            (
                r.gating.true_accepts,
                r.gating.false_accepts,
                r.gating.true_rejects,
                r.gating.false_rejects
            ),
            (2, 1, 2, 1)
        );
        assert_eq!(r.gating.tpr, 2.0 / 3.0);
        assert_eq!(r.gating.fpr, 1.0 / 3.0);
        assert_eq!(r.gating.precision, 2.0 / 3.0);
        assert_eq!(r.correct, 3);
        assert_eq!(r.end_to_end, 0.5);
    }

    #[test]
    fn accept_everything_on_one_third_mix() {
        let mut decisions = Vec::new();
        let mut labels = Vec::new();
        for i in 0..30 {
            if i % 3 == 0 {
                decisions.push(Decision {
                    accepted: true,
                    predicted: Some(i % 5),
                });
                labels.push(DualLabel {
                    class: Some(i % 5),
                    distribution: Distribution::In,
                });
            } else {
                decisions.push(Decision {
                    accepted: true,
                    predicted: Some(0),
                });
                labels.push(DualLabel {
                    class: None,
                    distribution: Distribution::Out,
                });
            }
        }
        let r = accuracy_report(&decisions, &labels).unwrap();
        assert_eq!(r.end_to_end, 1.0 / 3.0);
        assert_eq!(r.gating.fpr, 1.0);
    }
}
