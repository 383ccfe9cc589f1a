//! Forward evaluation with a recorded tape, and reverse-mode backpropagation.
//!
//! The tape stores the input batch and every layer output. Backward walks the
//! layers in reverse, turning the upstream gradient into parameter gradients
//! and, on request, the gradient with respect to the input batch. All kernels
//! use fixed loop orders so results are bitwise reproducible.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::loss::{self, LossKind, Target};
use crate::nn::params::{DenseParams, ParameterSet};
use crate::nn::spec::{Activation, Layer, NetworkSpec};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
struct RecordedLoss {
    kind: LossKind,
    target: Target,
    value: f64,
    grad: Tensor,
}

/// Recorded forward pass; borrow of the network it was produced from.
#[derive(Clone, Debug)]
pub struct GradientTape<'a> {
    spec: &'a NetworkSpec,
    params: &'a ParameterSet,
    /// `values[0]` is the input, `values[i + 1]` the output of layer `i`.
    values: Vec<Tensor>,
    loss: Option<RecordedLoss>,
}

/// Gradients keyed like the parameter set, plus the optional input gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: BTreeMap<usize, DenseParams>,
    pub input: Option<Tensor>,
}

impl Gradients {
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.values().flat_map(|p| [&p.weight, &p.bias])
    }
}

fn check_input(spec: &NetworkSpec, params: &ParameterSet, batch: &Tensor) -> Result<()> {
    params.check(spec)?;
    if batch.rank() < 2 || batch.trailing_shape() != spec.input_shape() {
        let mut expected = vec![batch.shape().first().copied().unwrap_or(1)];
        expected.extend_from_slice(spec.input_shape());
        return Err(Error::LayerShape {
            layer: 0,
            expected,
            found: batch.shape().to_vec(),
        });
    }
    if !batch.is_finite() {
        return Err(Error::NonFinite("input batch".into()));
    }
    Ok(())
}

fn apply_layer(index: usize, layer: &Layer, params: &ParameterSet, x: &Tensor) -> Result<Tensor> {
    let batch = x.batch_size();
    let out = match layer {
        Layer::Dense { inputs, outputs } => {
            let p = &params.layers[&index];
            let y = dense_forward(
                x.data(),
                batch,
                p.weight.data(),
                p.bias.data(),
                *inputs,
                *outputs,
            );
            Tensor::new(vec![batch, *outputs], y)?
        }
        Layer::Activation(a) => x.map(|v| activate(*a, v)),
        Layer::Softmax => {
            let k = x.len() / batch;
            let mut y = x.data().to_vec();
            for row in y.chunks_mut(k) {
                softmax_in_place(row);
            }
            Tensor::new(x.shape().to_vec(), y)?
        }
        Layer::Reshape(shape) => {
            let mut s = vec![batch];
            s.extend_from_slice(shape);
            x.clone().reshape(s)?
        }
    };
    if !out.is_finite() {
        return Err(Error::NonFinite(format!("output of layer {index}")));
    }
    Ok(out)
}

/// Runs the network and records a tape for backpropagation.
pub fn forward<'a>(
    spec: &'a NetworkSpec,
    params: &'a ParameterSet,
    batch: &Tensor,
) -> Result<(Tensor, GradientTape<'a>)> {
    check_input(spec, params, batch)?;
    let mut values = Vec::with_capacity(spec.layers().len() + 1);
    values.push(batch.clone());
    for (i, layer) in spec.layers().iter().enumerate() {
        let next = apply_layer(i, layer, params, values.last().expect("non-empty"))?;
        values.push(next);
    }
    let output = values.last().expect("non-empty").clone();
    Ok((
        output,
        GradientTape {
            spec,
            params,
            values,
            loss: None,
        },
    ))
}

/// Forward pass without recording; same arithmetic as [`forward`].
pub fn predict(spec: &NetworkSpec, params: &ParameterSet, batch: &Tensor) -> Result<Tensor> {
    check_input(spec, params, batch)?;
    let mut cur = batch.clone();
    for (i, layer) in spec.layers().iter().enumerate() {
        cur = apply_layer(i, layer, params, &cur)?;
    }
    Ok(cur)
}

impl<'a> GradientTape<'a> {
    pub fn output(&self) -> &Tensor {
        self.values.last().expect("non-empty")
    }

    pub fn input(&self) -> &Tensor {
        &self.values[0]
    }

    /// Terminates the tape in a scalar loss against `target`.
    pub fn attach_loss(&mut self, kind: LossKind, target: impl Into<Target>) -> Result<f64> {
        let target = target.into();
        let (value, grad) = loss::loss_and_grad(kind, self.output(), &target)?;
        self.loss = Some(RecordedLoss {
            kind,
            target,
            value,
            grad,
        });
        Ok(value)
    }

    pub fn loss_value(&self) -> Option<f64> {
        self.loss.as_ref().map(|l| l.value)
    }

    /// Recomputes the loss from the recorded input.
    pub fn replay(&self) -> Result<f64> {
        let rec = self.loss.as_ref().ok_or(Error::NoLoss)?;
        let out = predict(self.spec, self.params, &self.values[0])?;
        loss::loss(rec.kind, &out, &rec.target)
    }

    /// Parameter gradients of the attached loss.
    pub fn backward(&self) -> Result<Gradients> {
        let rec = self.loss.as_ref().ok_or(Error::NoLoss)?;
        self.backward_from(&rec.grad, false)
    }

    /// Parameter and input gradients of the attached loss.
    pub fn backward_with_input(&self) -> Result<Gradients> {
        let rec = self.loss.as_ref().ok_or(Error::NoLoss)?;
        self.backward_from(&rec.grad, true)
    }

    /// Backpropagates an arbitrary output gradient (a vector-Jacobian product).
    pub fn backward_from(&self, upstream: &Tensor, with_input: bool) -> Result<Gradients> {
        if upstream.shape() != self.output().shape() {
            return Err(Error::Shape(format!(
                "upstream gradient {:?} does not match output {:?}",
                upstream.shape(),
                self.output().shape()
            )));
        }
        if !upstream.is_finite() {
            return Err(Error::NonFinite("upstream gradient".into()));
        }
        let layers = self.spec.layers();
        let mut grad = upstream.data().to_vec();
        let mut out = BTreeMap::new();
        // Earliest layer whose input gradient is needed.
        let first_needed = if with_input {
            0
        } else {
            self.spec
                .dense_layers()
                .next()
                .map_or(layers.len(), |(i, _, _)| i)
        };
        for i in (0..layers.len()).rev() {
            let x = &self.values[i];
            let y = &self.values[i + 1];
            let batch = x.batch_size();
            match &layers[i] {
                Layer::Dense { inputs, outputs } => {
                    let p = &self.params.layers[&i];
                    let (gw, gb) = dense_param_grads(x.data(), &grad, batch, *inputs, *outputs);
                    out.insert(
                        i,
                        DenseParams {
                            weight: Tensor::new(vec![*inputs, *outputs], gw)?,
                            bias: Tensor::new(vec![*outputs], gb)?,
                        },
                    );
                    if !with_input && i <= first_needed {
                        break;
                    }
                    grad = dense_input_grad(&grad, p.weight.data(), batch, *inputs, *outputs);
                }
                Layer::Activation(a) => {
                    for ((g, &xv), &yv) in grad.iter_mut().zip(x.data()).zip(y.data()) {
                        *g *= activation_derivative(*a, xv, yv);
                    }
                }
                Layer::Softmax => {
                    let k = y.len() / batch;
                    for (g, yr) in grad.chunks_mut(k).zip(y.data().chunks(k)) {
                        let dot: f64 = g.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for (gj, &yj) in g.iter_mut().zip(yr) {
                            *gj = yj * (*gj - dot);
                        }
                    }
                }
                Layer::Reshape(_) => {}
            }
        }
        let input = if with_input {
            Some(Tensor::new(self.values[0].shape().to_vec(), grad)?)
        } else {
            None
        };
        let g = Gradients { layers: out, input };
        for t in g.tensors().chain(g.input.iter()) {
            if !t.is_finite() {
                return Err(Error::NonFinite("gradient".into()));
            }
        }
        Ok(g)
    }
}

pub(crate) fn activate(a: Activation, v: f64) -> f64 {
    match a {
        Activation::Relu => v.max(0.0),
        Activation::Sigmoid => sigmoid(v),
        Activation::Tanh => v.tanh(),
    }
}

fn activation_derivative(a: Activation, x: f64, y: f64) -> f64 {
    match a {
        Activation::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Sigmoid => y * (1.0 - y),
        Activation::Tanh => 1.0 - y * y,
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `y = x W + b` for `x: [batch, n_in]`, `W: [n_in, n_out]`.
fn dense_forward(
    x: &[f64],
    batch: usize,
    w: &[f64],
    b: &[f64],
    n_in: usize,
    n_out: usize,
) -> Vec<f64> {
    let mut y = Vec::with_capacity(batch * n_out);
    for _ in 0..batch {
        y.extend_from_slice(b);
    }
    for k in 0..n_in {
        let wk = &w[k * n_out..(k + 1) * n_out];
        for r in 0..batch {
            let xk = x[r * n_in + k];
            if xk == 0.0 {
                continue;
            }
            axpy(xk, wk, &mut y[r * n_out..(r + 1) * n_out]);
        }
    }
    y
}

fn dense_param_grads(
    x: &[f64],
    dy: &[f64],
    batch: usize,
    n_in: usize,
    n_out: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut gw = vec![0.0; n_in * n_out];
    for k in 0..n_in {
        let gk = &mut gw[k * n_out..(k + 1) * n_out];
        for r in 0..batch {
            let xk = x[r * n_in + k];
            if xk == 0.0 {
                continue;
            }
            axpy(xk, &dy[r * n_out..(r + 1) * n_out], gk);
        }
    }
    let mut gb = vec![0.0; n_out];
    for r in 0..batch {
        for (g, d) in gb.iter_mut().zip(&dy[r * n_out..(r + 1) * n_out]) {
            *g += d;
        }
    }
    (gw, gb)
}

fn dense_input_grad(dy: &[f64], w: &[f64], batch: usize, n_in: usize, n_out: usize) -> Vec<f64> {
    let mut dx = vec![0.0; batch * n_in];
    for r in 0..batch {
        let dyr = &dy[r * n_out..(r + 1) * n_out];
        for k in 0..n_in {
            dx[r * n_in + k] = dot(dyr, &w[k * n_out..(k + 1) * n_out]);
        }
    }
    dx
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with eight interleaved accumulators (fixed summation order).
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (ac, bc) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += ac[l] * bc[l];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::Head;

    fn dense_net(
        inputs: usize,
        outputs: usize,
        w: &[&[f64]],
        b: &[f64],
    ) -> (NetworkSpec, ParameterSet) {
        let spec = NetworkSpec::new(vec![inputs], vec![Layer::Dense { inputs, outputs }]).unwrap();
        let mut params = ParameterSet::init(&spec, 0);
        let p = params.layers.get_mut(&0).unwrap();
        p.weight = Tensor::from_rows(w).unwrap();
        p.bias = Tensor::new(vec![outputs], b.to_vec()).unwrap();
        (spec, params)
    }

    #[test]
    fn identity_reshape_network() {
        let spec = NetworkSpec::new(vec![2, 2], vec![Layer::Reshape(vec![2, 2])]).unwrap();
        let params = ParameterSet::init(&spec, 1);
        let x = Tensor::new(vec![3, 2, 2], (0..12).map(|v| v as f64 * 0.5).collect()).unwrap();
        let (y, _) = forward(&spec, &params, &x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn identity_weights() {
        let (spec, params) = dense_net(2, 2, &[&[1.0, 0.0], &[0.0, 1.0]], &[0.0, 0.0]);
        let x = Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap();
        let (y, _) = forward(&spec, &params, &x).unwrap();
        assert_eq!(y.data(), &[3.0, 4.0]);
    }

    #[test]
    fn direct_substitution() {
        let (spec, params) = dense_net(2, 1, &[&[2.0], &[3.0]], &[1.0]);
        let x = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        let (y, _) = forward(&spec, &params, &x).unwrap();
        assert_eq!(y.data(), &[6.0]);
    }

    #[test]
    fn chain_rule_by_hand() {
        // L = (w x)^2 with w = 2, x = 3: dL/dw = 2 (w x) x = 36
        let (spec, params) = dense_net(1, 1, &[&[2.0]], &[0.0]);
        let x = Tensor::new(vec![1, 1], vec![3.0]).unwrap();
        let (_, mut tape) = forward(&spec, &params, &x).unwrap();
        tape.attach_loss(LossKind::Mse, Tensor::zeros(vec![1, 1]))
            .unwrap();
        let g = tape.backward_with_input().unwrap();
        assert_eq!(g.layers[&0].weight.data(), &[36.0]);
        assert_eq!(g.layers[&0].bias.data(), &[12.0]);
        assert_eq!(g.input.unwrap().data(), &[24.0]);
    }

    #[test]
    fn parameter_free_network_has_no_gradients() {
        let spec = NetworkSpec::new(
            vec![3],
            vec![Layer::Activation(Activation::Tanh), Layer::Softmax],
        )
        .unwrap();
        let params = ParameterSet::init(&spec, 0);
        let x = Tensor::new(vec![1, 3], vec![0.1, -0.3, 0.7]).unwrap();
        let (_, mut tape) = forward(&spec, &params, &x).unwrap();
        tape.attach_loss(LossKind::Mse, Tensor::zeros(vec![1, 3]))
            .unwrap();
        let g = tape.backward().unwrap();
        assert!(g.layers.is_empty());
    }

    #[test]
    fn zero_downstream_weights_give_zero_upstream_gradients() {
        let spec =
            NetworkSpec::mlp(vec![3], &[4, 2], Activation::Tanh, Head::Linear, None).unwrap();
        let mut params = ParameterSet::init(&spec, 9);
        let last = params.layers.keys().copied().max().unwrap();
        params
            .layers
            .get_mut(&last)
            .unwrap()
            .weight
            .data_mut()
            .fill(0.0);
        let x = Tensor::new(vec![2, 3], vec![0.2, 0.4, -0.1, 0.9, 0.3, -0.5]).unwrap();
        let (_, mut tape) = forward(&spec, &params, &x).unwrap();
        tape.attach_loss(LossKind::Mse, Tensor::filled(vec![2, 2], 1.0))
            .unwrap();
        let g = tape.backward().unwrap();
        assert!(g.layers[&0].weight.data().iter().all(|&v| v == 0.0));
        assert!(g.layers[&0].bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_requires_loss() {
        let (spec, params) = dense_net(1, 1, &[&[2.0]], &[0.0]);
        let x = Tensor::new(vec![1, 1], vec![3.0]).unwrap();
        let (_, tape) = forward(&spec, &params, &x).unwrap();
        assert!(matches!(tape.backward(), Err(Error::NoLoss)));
        assert!(matches!(tape.replay(), Err(Error::NoLoss)));
    }

    #[test]
    fn replay_reproduces_loss() {
        let spec =
            NetworkSpec::mlp(vec![4], &[5, 3], Activation::Relu, Head::Softmax, None).unwrap();
        let params = ParameterSet::init(&spec, 2);
        let x = Tensor::new(vec![2, 4], vec![0.3, -0.2, 0.5, 0.1, 0.9, 0.0, -0.4, 0.2]).unwrap();
        let (_, mut tape) = forward(&spec, &params, &x).unwrap();
        let l = tape
            .attach_loss(
                LossKind::CategoricalCrossEntropy,
                Target::Classes(vec![1, 2]),
            )
            .unwrap();
        assert_eq!(tape.replay().unwrap().to_bits(), l.to_bits());
    }

    #[test]
    fn input_shape_mismatch_names_layer_zero() {
        let (spec, params) = dense_net(2, 1, &[&[2.0], &[3.0]], &[1.0]);
        let x = Tensor::new(vec![1, 3], vec![1.0, 1.0, 1.0]).unwrap();
        assert!(matches!(
            forward(&spec, &params, &x),
            Err(Error::LayerShape { layer: 0, .. })
        ));
    }

    #[test]
    fn dot_matches_naive_sum_closely() {
        let a: Vec<f64> = (0..37).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..37).map(|i| (i as f64 * 0.11).cos()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }
}
