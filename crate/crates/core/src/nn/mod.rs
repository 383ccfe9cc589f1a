//! Dense networks with reverse-mode differentiation, losses, optimizers and
//! model persistence.

pub mod gradcheck;
pub mod io;
pub mod loss;
pub mod optim;
pub mod params;
pub mod spec;
pub mod tape;

pub use gradcheck::{grad_check, relative_error};
pub use io::{load_params, save_params};
pub use loss::{loss, LossKind, Target};
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};
pub use params::{DenseParams, ParameterSet};
pub use spec::{Activation, Head, Layer, NetworkSpec};
pub use tape::{forward, predict, GradientTape, Gradients};

use crate::error::Result;
use crate::tensor::Tensor;

/// A network architecture together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub spec: NetworkSpec,
    pub params: ParameterSet,
}

impl Model {
    pub fn init(spec: NetworkSpec, seed: u64) -> Self {
        let params = ParameterSet::init(&spec, seed);
        Model { spec, params }
    }

    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        predict(&self.spec, &self.params, batch)
    }

    /// Forward on a single sample given as a flat slice.
    pub fn predict_one(&self, sample: &[f64]) -> Result<Vec<f64>> {
        let batch = Tensor::stack(&[sample], self.spec.input_shape())?;
        Ok(self.predict(&batch)?.into_data())
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        save_params(&self.spec, &self.params, path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let (spec, params) = load_params(path)?;
        Ok(Model { spec, params })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        io::to_bytes(&self.spec, &self.params)
    }

    /// One optimizer update on a minibatch; returns the batch loss.
    pub fn train_step(
        &mut self,
        optimizer: &mut OptimizerState,
        batch: &Tensor,
        target: Target,
        kind: LossKind,
    ) -> Result<f64> {
        let (value, grads) = {
            let (_, mut tape) = forward(&self.spec, &self.params, batch)?;
            let value = tape.attach_loss(kind, target)?;
            (value, tape.backward()?)
        };
        optimizer.step(&mut self.params, &grads)?;
        Ok(value)
    }
}
