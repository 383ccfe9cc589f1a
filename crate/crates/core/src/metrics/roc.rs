//! Binary ROC curves with exact tie handling.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Samples scoring at or above this value are called positive. The first
    /// point carries `+inf`, serialized as `null`.
    #[serde(serialize_with = "ser_threshold", deserialize_with = "de_threshold")]
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

fn ser_threshold<S: Serializer>(t: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if t.is_finite() {
        s.serialize_some(t)
    } else {
        s.serialize_none()
    }
}

fn de_threshold<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub positives: usize,
    pub negatives: usize,
}

/// Builds the curve for "higher score means positive".
///
/// One point per distinct score plus the `+inf` sentinel; samples with equal
/// scores cross together. Rates are integer counts divided by class totals,
/// and the AUC is the trapezoid sum evaluated in integers before a single
/// division, so it matches the pairwise rank statistic exactly.
pub fn roc(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("score {i} is {}", scores[i])));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass {
            positives,
            negatives,
        });
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let rate = |tp: usize, fp: usize| (fp as f64 / negatives as f64, tp as f64 / positives as f64);
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut twice_area: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        twice_area += ((fp - fp0) * (tp + tp0)) as u128;
        let (fpr, tpr) = rate(tp, fp);
        points.push(RocPoint {
            threshold: t,
            fpr,
            tpr,
        });
    }
    let auc = twice_area as f64 / (2 * positives as u128 * negatives as u128) as f64;
    Ok(RocCurve {
        points,
        auc,
        positives,
        negatives,
    })
}

impl RocCurve {
    /// `(threshold, TPR - FPR)` for the point with the largest Youden index.
    pub fn best_youden(&self) -> (f64, f64) {
        self.points
            .iter()
            .map(|p| (p.threshold, p.tpr - p.fpr))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |best, cur| {
                if cur.1 > best.1 {
                    cur
                } else {
                    best
                }
            })
    }

    /// `(fpr, tpr)` when accepting samples that score at least `threshold`.
    pub fn rates_at(&self, threshold: f64) -> (f64, f64) {
        self.points
            .iter()
            .rev()
            .find(|p| p.threshold >= threshold)
            .map(|p| (p.fpr, p.tpr))
            .unwrap_or((0.0, 0.0))
    }

    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "threshold,fpr,tpr")?;
        for p in &self.points {
            writeln!(out, "{},{},{}", fmt_threshold(p.threshold), p.fpr, p.tpr)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn fmt_threshold(t: f64) -> String {
    if t.is_finite() {
        t.to_string()
    } else {
        "inf".to_string()
    }
}
