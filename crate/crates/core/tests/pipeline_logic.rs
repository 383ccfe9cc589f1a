//! Cascade behaviour with hand-built networks whose outputs are known.

use std::collections::BTreeMap;

use rand::Rng;
use watchdog_core::classifier::{argmax, classify};
use watchdog_core::data::{
    Dataset, DatasetManifest, Distribution, Image, LabeledSample, Provenance,
};
use watchdog_core::metrics::{ssim, SsimParams};
use watchdog_core::nn::{Activation, DenseParams, Head, Layer, Model, NetworkSpec, ParameterSet};
use watchdog_core::pipeline::{
    compare_report, evaluate, evaluate_detailed, rejection_galleries, write_combined_roc, Outcome,
    Pipeline, PipelineConfig, StageEvaluations,
};
use watchdog_core::rng::rng_from_seed;
use watchdog_core::{Error, Tensor};

const SIDE: usize = 4;
const PIXELS: usize = SIDE * SIDE;

fn dense_model(layers: Vec<Layer>, weights: Vec<(Vec<f64>, Vec<f64>)>) -> Model {
    let spec = NetworkSpec::new(vec![SIDE, SIDE, 1], layers).unwrap();
    let dense: Vec<_> = spec.dense_layers().collect();
    let mut map = BTreeMap::new();
    for ((i, fan_in, fan_out), (w, b)) in dense.into_iter().zip(weights) {
        map.insert(
            i,
            DenseParams {
                weight: Tensor::new(vec![fan_in, fan_out], w).unwrap(),
                bias: Tensor::new(vec![fan_out], b).unwrap(),
            },
        );
    }
    Model {
        spec,
        params: ParameterSet {
            layers: map,
            seed: 0,
            epochs: 0,
        },
    }
}

/// Copies the top half of the image and zeroes the bottom half.
fn half_copy_autoencoder() -> Model {
    let mut w = vec![0.0; PIXELS * PIXELS];
    for i in 0..PIXELS / 2 {
        w[i * PIXELS + i] = 1.0;
    }
    dense_model(
        vec![
            Layer::Reshape(vec![PIXELS]),
            Layer::Dense {
                inputs: PIXELS,
                outputs: PIXELS,
            },
            Layer::Reshape(vec![SIDE, SIDE, 1]),
        ],
        vec![(w, vec![0.0; PIXELS])],
    )
}

/// `p_in = sigmoid(10 (x0 - 0.5))`, or a constant when `constant` is given.
fn binary_stub(constant: Option<f64>) -> Model {
    let mut w = vec![0.0; PIXELS];
    let b = match constant {
        Some(p) => (p / (1.0 - p)).ln(),
        None => {
            w[0] = 10.0;
            -5.0
        }
    };
    dense_model(
        vec![
            Layer::Reshape(vec![PIXELS]),
            Layer::Dense {
                inputs: PIXELS,
                outputs: 1,
            },
            Layer::Activation(Activation::Sigmoid),
        ],
        vec![(w, vec![b])],
    )
}

/// Two classes; class 1 iff pixel 1 exceeds 0.5.
fn core_stub() -> Model {
    let mut w = vec![0.0; PIXELS * 2];
    w[2 + 1] = 10.0;
    dense_model(
        vec![
            Layer::Reshape(vec![PIXELS]),
            Layer::Dense {
                inputs: PIXELS,
                outputs: 2,
            },
            Layer::Softmax,
        ],
        vec![(w, vec![0.0, -5.0])],
    )
}

fn config(tau: f64) -> PipelineConfig {
    PipelineConfig {
        tau,
        ssim: SsimParams::global(),
        ..PipelineConfig::default()
    }
}

fn image(x0: f64, x1: f64, bottom: f64) -> Image {
    let mut d = vec![0.2; PIXELS];
    d[0] = x0;
    d[1] = x1;
    d[PIXELS / 2..].iter_mut().for_each(|v| *v = bottom);
    Image::new(SIDE, SIDE, 1, d).unwrap()
}

fn dataset(samples: Vec<LabeledSample>, classes: usize) -> Dataset {
    Dataset::new(
        DatasetManifest {
            name: "stub".into(),
            count: samples.len(),
            classes,
            width: SIDE,
            height: SIDE,
            channels: 1,
            seed: 0,
            provenance: Provenance::Imported,
            sources: Vec::new(),
        },
        samples,
    )
}

fn in_sample(image: Image, class: usize) -> LabeledSample {
    LabeledSample {
        image,
        class_label: Some(class),
        distribution: Distribution::In,
    }
}

fn out_sample(image: Image) -> LabeledSample {
    LabeledSample {
        image,
        class_label: None,
        distribution: Distribution::Out,
    }
}

#[derive(Debug, PartialEq)]
enum Expect {
    T1,
    T2,
    Class(usize),
}

#[test]
fn hand_traced_cascade() {
    let (ae, bin, core) = (half_copy_autoencoder(), binary_stub(None), core_stub());
    let p = Pipeline::new(config(0.5), Some(&ae), Some(&bin), &core).unwrap();
    let table = [
        (image(1.0, 0.0, 0.0), Expect::Class(0)),
        (image(1.0, 1.0, 0.0), Expect::Class(1)),
        (image(0.0, 1.0, 0.0), Expect::T2),
        (image(1.0, 1.0, 1.0), Expect::T1),
        (image(0.0, 0.0, 0.8), Expect::T1),
        (image(0.0, 0.0, 0.0), Expect::T2),
    ];
    for (img, want) in &table {
        let v = p.guard(img).unwrap();
        let got = match v.outcome {
            Outcome::RejectedTier1 => Expect::T1,
            Outcome::RejectedTier2 => Expect::T2,
            Outcome::Classified { class, .. } => Expect::Class(class),
        };
        assert_eq!(&got, want, "{:?}", img.data());
        // the tier-1 score is SSIM against the half-zeroed copy
        let mut recon = img.data().to_vec();
        recon[PIXELS / 2..].iter_mut().for_each(|v| *v = 0.0);
        let recon = Image::new(SIDE, SIDE, 1, recon).unwrap();
        assert_eq!(
            v.tier1_score,
            Some(ssim(img, &recon, &SsimParams::global()).unwrap())
        );
        assert_eq!(v.tier2_p_in.is_some(), got != Expect::T1);
    }
    assert_eq!(
        p.evaluations(),
        StageEvaluations {
            tier1: 6,
            tier2: 4,
            core: 2
        }
    );
}

fn random_images(n: usize, seed: u64) -> Vec<Image> {
    let mut r = rng_from_seed(seed);
    (0..n)
        .map(|_| {
            Image::new(
                SIDE,
                SIDE,
                1,
                (0..PIXELS).map(|_| r.random::<f64>()).collect(),
            )
            .unwrap()
        })
        .collect()
}

fn random_autoencoder(seed: u64) -> Model {
    let spec = NetworkSpec::mlp(
        vec![SIDE, SIDE, 1],
        &[6, PIXELS],
        Activation::Tanh,
        Head::Activation(Activation::Sigmoid),
        Some(vec![SIDE, SIDE, 1]),
    )
    .unwrap();
    Model::init(spec, seed)
}

#[test]
fn disabled_tiers_match_the_core_classifier() {
    let (ae, bin, core) = (random_autoencoder(1), binary_stub(None), core_stub());
    let open = Pipeline::new(config(0.5).unguarded(), Some(&ae), Some(&bin), &core).unwrap();
    let images = random_images(200, 2);
    for img in &images {
        let v = open.guard(img).unwrap();
        let probs = classify(&core, img).unwrap();
        assert_eq!(
            v.outcome,
            Outcome::Classified {
                class: argmax(&probs),
                probabilities: probs
            }
        );
        assert_eq!((v.tier1_score, v.tier2_p_in), (None, None));
    }
    assert_eq!(
        open.evaluations(),
        StageEvaluations {
            tier1: 0,
            tier2: 0,
            core: 200
        }
    );
    // without networks, only the unguarded configuration is valid
    assert!(Pipeline::new(config(0.5).unguarded(), None, None, &core).is_ok());
    assert!(matches!(
        Pipeline::new(config(0.5), None, Some(&bin), &core),
        Err(Error::Config(_))
    ));
}

#[test]
fn impossible_tau_rejects_everything_at_tier_one() {
    let (ae, bin, core) = (half_copy_autoencoder(), binary_stub(Some(0.9)), core_stub());
    let p = Pipeline::new(config(1.01), Some(&ae), Some(&bin), &core).unwrap();
    for img in random_images(50, 3) {
        assert_eq!(p.guard(&img).unwrap().outcome, Outcome::RejectedTier1);
    }
    assert_eq!(
        p.evaluations(),
        StageEvaluations {
            tier1: 50,
            tier2: 0,
            core: 0
        }
    );
}

#[test]
fn raising_tau_only_shrinks_the_accepted_set() {
    let (ae, bin, core) = (random_autoencoder(4), binary_stub(Some(0.9)), core_stub());
    let images = random_images(300, 5);
    let mut previous: Option<Vec<bool>> = None;
    for i in 0..=20 {
        let tau = -0.2 + i as f64 * 0.06;
        let p = Pipeline::new(config(tau), Some(&ae), Some(&bin), &core).unwrap();
        let accepted: Vec<bool> = images
            .iter()
            .map(|x| p.guard(x).unwrap().accepted())
            .collect();
        if let Some(prev) = &previous {
            assert!(accepted
                .iter()
                .zip(prev)
                .all(|(&now, &before)| !now || before));
        }
        previous = Some(accepted);
    }
}

fn mixed_set() -> Dataset {
    // IN: clean bottom half, pixel 0 bright; OUT: bright bottom half
    let mut samples = Vec::new();
    for i in 0..10 {
        let x1 = if i % 2 == 0 { 0.1 } else { 0.9 };
        samples.push(in_sample(image(0.9, x1, 0.0), i % 2));
    }
    for i in 0..20 {
        samples.push(out_sample(image(
            0.9,
            if i % 3 == 0 { 0.9 } else { 0.1 },
            1.0,
        )));
    }
    dataset(samples, 2)
}

#[test]
fn oracle_tiers_on_a_mixed_set() {
    let (ae, bin, core) = (half_copy_autoencoder(), binary_stub(None), core_stub());
    let p = Pipeline::new(config(0.5), Some(&ae), Some(&bin), &core).unwrap();
    let set = mixed_set();
    let (report, verdicts) = evaluate_detailed(&p, &set).unwrap();
    let hash = set.identity_hash();
    for m in [&report.unguarded, &report.guarded, &report.baseline] {
        assert_eq!(m.dataset_hash, hash);
    }
    assert_eq!(report.baseline.samples, 10);
    let g = &report.guarded;
    assert_eq!(g.counts.rejected_tier1.out_dist, 20);
    assert_eq!(g.counts.classified.in_dist, 10);
    assert_eq!((g.accuracy.gating.tpr, g.accuracy.gating.fpr), (1.0, 0.0));
    assert_eq!(g.accuracy.end_to_end, 1.0);
    assert_eq!(report.baseline.accuracy.end_to_end, 1.0);
    // unguarded accepts everything, so every OUT sample counts as wrong
    assert!((report.unguarded.accuracy.end_to_end - 10.0 / 30.0).abs() < 1e-12);
    assert_eq!(report.unguarded.evaluations.core, 30);
    assert!(report.guarded.auc >= report.unguarded.auc);
    let galleries = rejection_galleries(&set, &verdicts, 4).unwrap();
    assert_eq!(galleries.len(), 1);
    assert_eq!(galleries[0].0, "tier1-rejected");

    let cmp = compare_report(&report.unguarded, &report.guarded, &report.baseline).unwrap();
    assert_eq!(
        cmp.guarded_minus_unguarded_auc,
        report.guarded.auc - report.unguarded.auc
    );
    assert_eq!(cmp.rows.len(), 3);

    let mut csv = Vec::new();
    write_combined_roc(&[&report.unguarded, &report.guarded], &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("curve,threshold,fpr,tpr\nunguarded,inf,0,0\n"));
    assert_eq!(
        text.lines().count(),
        1 + report.unguarded.roc.points.len() + report.guarded.roc.points.len()
    );
}

#[test]
fn all_in_set_with_permissive_tiers_gives_identical_modes() {
    let (ae, bin, core) = (
        half_copy_autoencoder(),
        binary_stub(Some(0.99)),
        core_stub(),
    );
    let p = Pipeline::new(config(0.5), Some(&ae), Some(&bin), &core).unwrap();
    let set = dataset(
        (0..12)
            .map(|i| in_sample(image(0.3, (i % 5) as f64 / 4.0, 0.0), i % 2))
            .collect(),
        2,
    );
    let r = evaluate(&p, &set).unwrap();
    assert_eq!(r.unguarded.roc, r.guarded.roc);
    assert_eq!(r.guarded.roc, r.baseline.roc);
    assert_eq!(r.unguarded.accuracy, r.guarded.accuracy);
    let cmp = compare_report(&r.unguarded, &r.guarded, &r.baseline).unwrap();
    assert_eq!(
        (
            cmp.guarded_minus_unguarded_auc,
            cmp.baseline_minus_guarded_auc,
            cmp.guarded_minus_unguarded_accuracy
        ),
        (0.0, 0.0, 0.0)
    );
}

#[test]
fn reports_from_different_sets_are_refused() {
    let (ae, bin, core) = (half_copy_autoencoder(), binary_stub(None), core_stub());
    let p = Pipeline::new(config(0.5), Some(&ae), Some(&bin), &core).unwrap();
    let a = evaluate(&p, &mixed_set()).unwrap();
    let other = dataset(
        vec![
            in_sample(image(0.9, 0.9, 0.0), 1),
            out_sample(image(0.1, 0.1, 1.0)),
        ],
        2,
    );
    let b = evaluate(&p, &other).unwrap();
    assert!(matches!(
        compare_report(&a.unguarded, &b.guarded, &a.baseline),
        Err(Error::ReportMismatch(_))
    ));
    assert!(evaluate(&p, &dataset(Vec::new(), 2)).is_err());
}
