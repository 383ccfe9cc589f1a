use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::ParameterSet;
use crate::nn::tape::Gradients;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// Momentum for SGD, beta1 for Adam.
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64, momentum: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::SgdMomentum,
            learning_rate,
            beta1: momentum,
            ..Default::default()
        }
    }
}

/// Moment buffers aligned with a parameter set's tensor order.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, params: &ParameterSet) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().map(|t| vec![0.0; t.len()]).collect();
        let second = match config.kind {
            OptimizerKind::Adam => zeros.clone(),
            OptimizerKind::SgdMomentum => Vec::new(),
        };
        OptimizerState {
            config,
            step: 0,
            first: zeros,
            second,
        }
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut ParameterSet, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != params.layers.len() || self.first.len() != params.tensor_count() {
            return Err(Error::Shape(
                "gradients do not align with parameters".into(),
            ));
        }
        for (idx, g) in &grads.layers {
            for (name, t) in [("weight", &g.weight), ("bias", &g.bias)] {
                if !t.is_finite() {
                    return Err(Error::NonFinite(format!("gradient of layer {idx} {name}")));
                }
            }
        }
        let grad_tensors: Vec<_> = grads.tensors().collect();
        for (p, g) in params.tensors().zip(&grad_tensors) {
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "gradient {:?} does not match parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
        }
        self.step += 1;
        let c = self.config;
        match c.kind {
            OptimizerKind::SgdMomentum => {
                for ((p, g), v) in params.tensors_mut().zip(&grad_tensors).zip(&mut self.first) {
                    for ((pi, gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                        *vi = c.beta1 * *vi - c.learning_rate * gi;
                        *pi += *vi;
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let bc1 = 1.0 - c.beta1.powi(t);
                let bc2 = 1.0 - c.beta2.powi(t);
                for (((p, g), m), v) in params
                    .tensors_mut()
                    .zip(&grad_tensors)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    for (((pi, gi), mi), vi) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                    {
                        *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
                        *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
                        let m_hat = *mi / bc1;
                        let v_hat = *vi / bc2;
                        *pi -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::DenseParams;
    use crate::nn::spec::{Layer, NetworkSpec};
    use crate::tensor::Tensor;
    use std::collections::BTreeMap;

    fn scalar_net(p: f64) -> (NetworkSpec, ParameterSet) {
        let spec = NetworkSpec::new(
            vec![1],
            vec![Layer::Dense {
                inputs: 1,
                outputs: 1,
            }],
        )
        .unwrap();
        let mut params = ParameterSet::init(&spec, 0);
        params.layers.get_mut(&0).unwrap().weight = Tensor::new(vec![1, 1], vec![p]).unwrap();
        (spec, params)
    }

    fn grad(g: f64) -> Gradients {
        let mut layers = BTreeMap::new();
        layers.insert(
            0,
            DenseParams {
                weight: Tensor::new(vec![1, 1], vec![g]).unwrap(),
                bias: Tensor::zeros(vec![1]),
            },
        );
        Gradients {
            layers,
            input: None,
        }
    }

    #[test]
    fn sgd_direct_substitution() {
        let (_, mut params) = scalar_net(1.0);
        let mut st = OptimizerState::new(OptimizerConfig::sgd(0.1, 0.0), &params);
        st.step(&mut params, &grad(2.0)).unwrap();
        assert!((params.layers[&0].weight.data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        for cfg in [OptimizerConfig::sgd(0.1, 0.0), OptimizerConfig::default()] {
            let (_, mut params) = scalar_net(0.37);
            let before = params.clone();
            let mut st = OptimizerState::new(cfg, &params);
            st.step(&mut params, &grad(0.0)).unwrap();
            assert_eq!(params, before);
        }
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let (_, mut params) = scalar_net(1.0);
        let mut st = OptimizerState::new(OptimizerConfig::default(), &params);
        st.step(&mut params, &grad(1.0)).unwrap();
        // m_hat = v_hat = 1, so the step is lr / (1 + eps).
        let expected = 1.0 - 0.001 / (1.0 + 1e-8);
        assert!((params.layers[&0].weight.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn momentum_accumulates() {
        let (_, mut params) = scalar_net(0.0);
        let mut st = OptimizerState::new(OptimizerConfig::sgd(0.1, 0.9), &params);
        st.step(&mut params, &grad(1.0)).unwrap();
        st.step(&mut params, &grad(1.0)).unwrap();
        // v1 = -0.1, v2 = 0.9 * -0.1 - 0.1 = -0.19
        assert!((params.layers[&0].weight.data()[0] + 0.29).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let (_, mut params) = scalar_net(1.0);
        let mut st = OptimizerState::new(OptimizerConfig::default(), &params);
        let err = st.step(&mut params, &grad(f64::NAN)).unwrap_err();
        assert!(err.to_string().contains("layer 0 weight"), "{err}");
    }
}
