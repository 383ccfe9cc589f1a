//! Central finite-difference check of backpropagated parameter gradients.

use crate::error::{Error, Result};
use crate::nn::loss::{self, LossKind, Target};
use crate::nn::params::ParameterSet;
use crate::nn::spec::NetworkSpec;
use crate::nn::tape::{forward, predict};
use crate::tensor::Tensor;

/// `|a - n| / max(1e-12, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-12)
}

/// Maximum relative error between analytic and finite-difference gradients
/// (extrapolated central differences at `step` and `step / 2`) over every
/// parameter. A network without parameters reports 0.
pub fn grad_check(
    spec: &NetworkSpec,
    params: &ParameterSet,
    batch: &Tensor,
    target: &Target,
    kind: LossKind,
    step: f64,
) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::Config(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let (_, mut tape) = forward(spec, params, batch)?;
    tape.attach_loss(kind, target.clone())?;
    let grads = tape.backward()?;
    let analytic: Vec<f64> = grads
        .tensors()
        .flat_map(|t| t.data().iter().copied())
        .collect();

    let mut probe = params.clone();
    let mut worst = 0.0f64;
    let mut flat = 0;
    let eval = |p: &ParameterSet| -> Result<f64> {
        let out = predict(spec, p, batch)?;
        loss::loss(kind, &out, target)
    };
    let tensor_count = probe.tensor_count();
    for ti in 0..tensor_count {
        let len = probe.tensors().nth(ti).map_or(0, Tensor::len);
        for j in 0..len {
            let original = probe.tensors().nth(ti).expect("index in range").data()[j];
            let mut central = |h: f64| -> Result<f64> {
                set(&mut probe, ti, j, original + h);
                let plus = eval(&probe)?;
                set(&mut probe, ti, j, original - h);
                let minus = eval(&probe)?;
                set(&mut probe, ti, j, original);
                Ok((plus - minus) / (2.0 * h))
            };
            // Richardson extrapolation cancels the h^2 error term.
            let coarse = central(step)?;
            let fine = central(step / 2.0)?;
            let numeric = (4.0 * fine - coarse) / 3.0;
            worst = worst.max(relative_error(analytic[flat], numeric));
            flat += 1;
        }
    }
    Ok(worst)
}

fn set(params: &mut ParameterSet, tensor: usize, index: usize, value: f64) {
    params
        .tensors_mut()
        .nth(tensor)
        .expect("index in range")
        .data_mut()[index] = value;
}
