//! Backpropagated gradients against central finite differences.

use rand::Rng;
use watchdog_core::boundary::{objective_grad, objective_value};
use watchdog_core::data::Image;
use watchdog_core::metrics::{Aggregation, SsimParams};
use watchdog_core::nn::{
    grad_check, relative_error, Activation, Head, LossKind, Model, NetworkSpec, Target,
};
use watchdog_core::rng::{rng_from_seed, WdRng};
use watchdog_core::Tensor;

fn random_instance(r: &mut WdRng) -> (NetworkSpec, Tensor, Target, LossKind) {
    let inputs = r.random_range(2..=6);
    let depth = r.random_range(1..=3);
    let mut widths: Vec<usize> = (0..depth).map(|_| r.random_range(2..=6)).collect();
    let hidden = [Activation::Tanh, Activation::Sigmoid, Activation::Relu][r.random_range(0..3)];
    let batch = r.random_range(1..=4);
    let kind = [
        LossKind::Mse,
        LossKind::CategoricalCrossEntropy,
        LossKind::BinaryCrossEntropy,
    ][r.random_range(0..3)];
    let outputs = match kind {
        LossKind::BinaryCrossEntropy => 1,
        _ => r.random_range(2..=4),
    };
    widths.push(outputs);
    let head = match kind {
        LossKind::Mse if r.random::<bool>() => Head::Linear,
        LossKind::Mse => Head::Activation(Activation::Tanh),
        LossKind::CategoricalCrossEntropy => Head::Softmax,
        LossKind::BinaryCrossEntropy => Head::Activation(Activation::Sigmoid),
    };
    let spec = NetworkSpec::mlp(vec![inputs], &widths, hidden, head, None).unwrap();
    let x = Tensor::new(
        vec![batch, inputs],
        (0..batch * inputs)
            .map(|_| r.random_range(-1.0..1.0))
            .collect(),
    )
    .unwrap();
    let target = match kind {
        LossKind::Mse => Target::Dense(
            Tensor::new(
                vec![batch, outputs],
                (0..batch * outputs)
                    .map(|_| r.random_range(-1.0..1.0))
                    .collect(),
            )
            .unwrap(),
        ),
        LossKind::CategoricalCrossEntropy => {
            Target::Classes((0..batch).map(|_| r.random_range(0..outputs)).collect())
        }
        LossKind::BinaryCrossEntropy => Target::Dense(
            Tensor::new(
                vec![batch, 1],
                (0..batch).map(|_| r.random_range(0..2) as f64).collect(),
            )
            .unwrap(),
        ),
    };
    (spec, x, target, kind)
}

#[test]
fn parameter_gradients_on_random_instances() {
    let mut r = rng_from_seed(2024);
    let mut worst = 0.0f64;
    for i in 0..120 {
        let (spec, x, target, kind) = random_instance(&mut r);
        let mut model = Model::init(spec, 1000 + i);
        // nonzero biases keep ReLU pre-activations off the kink at exactly 0
        for layer in model.params.layers.values_mut() {
            for b in layer.bias.data_mut() {
                *b = r.random_range(-0.5..0.5);
            }
        }
        let err = grad_check(&model.spec, &model.params, &x, &target, kind, 1e-3).unwrap();
        assert!(
            err < 1e-6,
            "instance {i} ({kind:?}): relative error {err:e}"
        );
        worst = worst.max(err);
    }
    eprintln!("worst parameter-gradient relative error {worst:e}");
}

fn small_autoencoder(seed: u64, side: usize) -> Model {
    let n = side * side;
    let spec = NetworkSpec::mlp(
        vec![side, side, 1],
        &[10, n],
        Activation::Tanh,
        Head::Activation(Activation::Sigmoid),
        Some(vec![side, side, 1]),
    )
    .unwrap();
    Model::init(spec, seed)
}

#[test]
fn input_gradient_through_autoencoder_and_ssim() {
    let mut r = rng_from_seed(77);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let side = r.random_range(7..=10);
        let model = small_autoencoder(i, side);
        let data = (0..side * side)
            .map(|_| r.random_range(0.05..0.95))
            .collect();
        let x = Image::new(side, side, 1, data).unwrap();
        let params = if i % 4 == 3 {
            SsimParams {
                aggregation: Aggregation::Global,
                ..Default::default()
            }
        } else {
            SsimParams::default()
        };
        let target = r.random_range(0.5..1.0);
        let (_, _, grad) = objective_grad(&model, &x, target, &params).unwrap();
        let h = 1e-5;
        for p in 0..side * side {
            let at = |d: f64| {
                let mut v = x.data().to_vec();
                v[p] += d;
                objective_value(
                    &model,
                    &Image::new(side, side, 1, v).unwrap(),
                    target,
                    &params,
                )
                .unwrap()
            };
            let numeric = (at(h) - at(-h)) / (2.0 * h);
            let err = relative_error(grad[p], numeric);
            assert!(
                err < 1e-5,
                "instance {i} pixel {p}: {} vs {numeric}",
                grad[p]
            );
            worst = worst.max(err);
        }
    }
    eprintln!("worst input-gradient relative error {worst:e}");
}
