use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::spec::NetworkSpec;
use crate::rng;
use crate::tensor::Tensor;

/// Weight (`[inputs, outputs]`) and bias (`[outputs]`) of one dense layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Trained (or freshly initialized) weights keyed by dense-layer index.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet {
    pub layers: BTreeMap<usize, DenseParams>,
    pub seed: u64,
    pub epochs: u64,
}

impl ParameterSet {
    /// Scaled uniform initialization, `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`,
    /// biases zero. Layer `i` draws from stream `(seed, i)`.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Self {
        let layers = spec
            .dense_layers()
            .map(|(i, fan_in, fan_out)| {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut r = rng::stream(seed, i as u64);
                let w = (0..fan_in * fan_out)
                    .map(|_| rng::uniform(&mut r, -bound, bound))
                    .collect();
                (
                    i,
                    DenseParams {
                        weight: Tensor::new(vec![fan_in, fan_out], w).expect("sizes are positive"),
                        bias: Tensor::zeros(vec![fan_out]),
                    },
                )
            })
            .collect();
        ParameterSet {
            layers,
            seed,
            epochs: 0,
        }
    }

    pub fn check(&self, spec: &NetworkSpec) -> Result<()> {
        let dense: Vec<_> = spec.dense_layers().collect();
        if dense.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "spec has {} dense layers, parameter set has {}",
                dense.len(),
                self.layers.len()
            )));
        }
        for (i, fan_in, fan_out) in dense {
            let p = self
                .layers
                .get(&i)
                .ok_or_else(|| Error::Shape(format!("no parameters for dense layer {i}")))?;
            if p.weight.shape() != [fan_in, fan_out] {
                return Err(Error::LayerShape {
                    layer: i,
                    expected: vec![fan_in, fan_out],
                    found: p.weight.shape().to_vec(),
                });
            }
            if p.bias.shape() != [fan_out] {
                return Err(Error::LayerShape {
                    layer: i,
                    expected: vec![fan_out],
                    found: p.bias.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// Tensors in file order: weight then bias for each layer by index.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.values().flat_map(|p| [&p.weight, &p.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers
            .values_mut()
            .flat_map(|p| [&mut p.weight, &mut p.bias])
    }

    pub fn tensor_count(&self) -> usize {
        self.layers.len() * 2
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::{Activation, Head};

    #[test]
    fn init_is_seeded_and_bounded() {
        let spec =
            NetworkSpec::mlp(vec![6], &[4, 2], Activation::Tanh, Head::Linear, None).unwrap();
        let a = ParameterSet::init(&spec, 3);
        let b = ParameterSet::init(&spec, 3);
        let c = ParameterSet::init(&spec, 4);
        assert_eq!(a, b);
        assert_ne!(a, c);
        a.check(&spec).unwrap();
        let bound = (6.0f64 / 10.0).sqrt();
        assert!(a.layers[&0].weight.data().iter().all(|w| w.abs() <= bound));
        assert!(a.layers[&0].bias.data().iter().all(|&b| b == 0.0));
    }
}
