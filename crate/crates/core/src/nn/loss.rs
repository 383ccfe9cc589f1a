//! Scalar training losses and their gradients with respect to the prediction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Probabilities are clamped into `[LOG_EPS, 1 - LOG_EPS]` before taking logs.
pub const LOG_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Mse,
    CategoricalCrossEntropy,
    BinaryCrossEntropy,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    /// Same shape as the prediction (one-hot rows for categorical cross entropy).
    Dense(Tensor),
    /// One class index per batch row.
    Classes(Vec<usize>),
}

impl From<Tensor> for Target {
    fn from(t: Tensor) -> Self {
        Target::Dense(t)
    }
}

pub fn loss(kind: LossKind, prediction: &Tensor, target: &Target) -> Result<f64> {
    loss_and_grad(kind, prediction, target).map(|(l, _)| l)
}

/// Loss value and `dL/dprediction`.
pub fn loss_and_grad(
    kind: LossKind,
    prediction: &Tensor,
    target: &Target,
) -> Result<(f64, Tensor)> {
    if !prediction.is_finite() {
        return Err(Error::NonFinite("loss prediction".into()));
    }
    let target = dense_target(kind, prediction, target)?;
    let p = prediction.data();
    let t = target.data();
    let mut grad = vec![0.0; p.len()];
    let value = match kind {
        LossKind::Mse => {
            let n = p.len() as f64;
            let mut sum = 0.0;
            for i in 0..p.len() {
                let d = p[i] - t[i];
                sum += d * d;
                grad[i] = 2.0 * d / n;
            }
            sum / n
        }
        LossKind::CategoricalCrossEntropy => {
            let batch = prediction.batch_size() as f64;
            let mut sum = 0.0;
            for i in 0..p.len() {
                if t[i] != 0.0 {
                    let (q, inside) = clamp_prob(p[i]);
                    sum -= t[i] * q.ln();
                    if inside {
                        grad[i] = -t[i] / (q * batch);
                    }
                }
            }
            sum / batch
        }
        LossKind::BinaryCrossEntropy => {
            let batch = prediction.batch_size() as f64;
            let mut sum = 0.0;
            for i in 0..p.len() {
                let (q, inside) = clamp_prob(p[i]);
                sum -= t[i] * q.ln() + (1.0 - t[i]) * (1.0 - q).ln();
                if inside {
                    grad[i] = (-t[i] / q + (1.0 - t[i]) / (1.0 - q)) / batch;
                }
            }
            sum / batch
        }
    };
    if !value.is_finite() {
        return Err(Error::NonFinite("loss value".into()));
    }
    let grad = Tensor::new(prediction.shape().to_vec(), grad)?;
    Ok((value.max(0.0), grad))
}

fn clamp_prob(p: f64) -> (f64, bool) {
    if p < LOG_EPS {
        (LOG_EPS, false)
    } else if p > 1.0 - LOG_EPS {
        (1.0 - LOG_EPS, false)
    } else {
        (p, true)
    }
}

fn dense_target(kind: LossKind, prediction: &Tensor, target: &Target) -> Result<Tensor> {
    let t = match target {
        Target::Dense(t) => {
            if t.shape() != prediction.shape() {
                return Err(Error::Shape(format!(
                    "target shape {:?} does not match prediction {:?}",
                    t.shape(),
                    prediction.shape()
                )));
            }
            t.clone()
        }
        Target::Classes(classes) => {
            if prediction.rank() != 2 || classes.len() != prediction.batch_size() {
                return Err(Error::Shape(format!(
                    "{} class indices for prediction {:?}",
                    classes.len(),
                    prediction.shape()
                )));
            }
            let k = prediction.shape()[1];
            let mut data = vec![0.0; prediction.len()];
            for (row, &c) in classes.iter().enumerate() {
                if c >= k {
                    return Err(Error::Labels(format!(
                        "class {c} out of range for {k} outputs"
                    )));
                }
                data[row * k + c] = 1.0;
            }
            Tensor::new(prediction.shape().to_vec(), data)?
        }
    };
    if !t.is_finite() {
        return Err(Error::NonFinite("loss target".into()));
    }
    match kind {
        LossKind::Mse => {}
        LossKind::CategoricalCrossEntropy => {
            if prediction.rank() != 2 {
                return Err(Error::Shape(format!(
                    "categorical cross entropy needs [batch, classes], got {:?}",
                    prediction.shape()
                )));
            }
            for r in 0..t.batch_size() {
                let row = t.row(r);
                let ones = row.iter().filter(|&&v| v == 1.0).count();
                if ones != 1 || row.iter().any(|&v| v != 0.0 && v != 1.0) {
                    return Err(Error::Labels(format!("target row {r} is not one-hot")));
                }
            }
        }
        LossKind::BinaryCrossEntropy => {
            if t.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Labels("binary targets must lie in [0, 1]".into()));
            }
        }
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_of_identical_is_zero() {
        let x = Tensor::new(vec![2, 3], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        assert_eq!(loss(LossKind::Mse, &x, &x.clone().into()).unwrap(), 0.0);
    }

    #[test]
    fn cce_uniform_is_ln_k() {
        let p = Tensor::filled(vec![3, 4], 0.25);
        let l = loss(
            LossKind::CategoricalCrossEntropy,
            &p,
            &Target::Classes(vec![0, 2, 3]),
        )
        .unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        assert!((l - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn bce_half_is_ln_2() {
        let p = Tensor::new(vec![1, 1], vec![0.5]).unwrap();
        let t = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
        let l = loss(LossKind::BinaryCrossEntropy, &p, &t.into()).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_clamps_zero_probability() {
        let p = Tensor::new(vec![1, 2], vec![0.0, 1.0]).unwrap();
        let l = loss(
            LossKind::CategoricalCrossEntropy,
            &p,
            &Target::Classes(vec![0]),
        )
        .unwrap();
        assert!((l + LOG_EPS.ln()).abs() < 1e-9);
    }

    #[test]
    fn errors() {
        let p = Tensor::filled(vec![2, 2], 0.5);
        let bad = Tensor::filled(vec![2, 3], 0.5);
        assert!(matches!(
            loss(LossKind::Mse, &p, &bad.into()),
            Err(Error::Shape(_))
        ));
        let nan = Tensor::new(vec![1, 2], vec![f64::NAN, 0.5]).unwrap();
        assert!(matches!(
            loss(LossKind::Mse, &nan, &Tensor::filled(vec![1, 2], 0.0).into()),
            Err(Error::NonFinite(_))
        ));
        let not_one_hot = Tensor::filled(vec![2, 2], 0.5);
        assert!(loss(LossKind::CategoricalCrossEntropy, &p, &not_one_hot.into()).is_err());
        assert!(loss(
            LossKind::CategoricalCrossEntropy,
            &p,
            &Target::Classes(vec![0, 2])
        )
        .is_err());
    }
}
