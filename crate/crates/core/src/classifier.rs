//! Tier 2 (binary in/out classifier) and the core multi-class classifier.

use serde::{Deserialize, Serialize};

use crate::data::{
    augment, AugmentationSpec, Dataset, Distribution, Image, LabeledSample, Provenance,
};
use crate::error::{Error, Result};
use crate::metrics::{roc, RocCurve};
use crate::nn::{loss, Activation, Head, LossKind, Model, NetworkSpec, Target};
use crate::rng::{self, WdRng};
use crate::tensor::Tensor;
use crate::train::{self, History, Task, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BinaryClassifierConfig {
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    /// Minimum `p_in` for the gate to pass.
    pub threshold: f64,
}

impl Default for BinaryClassifierConfig {
    fn default() -> Self {
        BinaryClassifierConfig {
            hidden: vec![128, 32],
            train: TrainConfig {
                epochs: 15,
                validation_fraction: 0.2,
                seed: 2,
                ..Default::default()
            },
            threshold: 0.5,
        }
    }
}

impl BinaryClassifierConfig {
    pub fn network(&self, dims: (usize, usize, usize)) -> Result<NetworkSpec> {
        let mut widths = self.hidden.clone();
        widths.push(1);
        NetworkSpec::mlp(
            vec![dims.0, dims.1, dims.2],
            &widths,
            Activation::Relu,
            Head::Activation(Activation::Sigmoid),
            None,
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "threshold {} must lie in [0, 1]",
                self.threshold
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoreClassifierConfig {
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    pub augmentation: AugmentationSpec,
}

impl Default for CoreClassifierConfig {
    fn default() -> Self {
        CoreClassifierConfig {
            hidden: vec![256, 64],
            train: TrainConfig {
                epochs: 15,
                seed: 4,
                ..Default::default()
            },
            augmentation: AugmentationSpec::standard(),
        }
    }
}

impl CoreClassifierConfig {
    pub fn network(&self, dims: (usize, usize, usize), classes: usize) -> Result<NetworkSpec> {
        if classes < 2 {
            return Err(Error::Config(format!(
                "core classifier needs at least 2 classes, got {classes}"
            )));
        }
        let mut widths = self.hidden.clone();
        widths.push(classes);
        NetworkSpec::mlp(
            vec![dims.0, dims.1, dims.2],
            &widths,
            Activation::Relu,
            Head::Softmax,
            None,
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.augmentation.validate()
    }
}

fn stack(samples: &[&LabeledSample], dims: (usize, usize, usize)) -> Result<Tensor> {
    let rows: Vec<&[f64]> = samples.iter().map(|s| s.image.data()).collect();
    Tensor::stack(&rows, &[dims.0, dims.1, dims.2])
}

fn binary_target(samples: &[&LabeledSample]) -> Result<Tensor> {
    let t = samples
        .iter()
        .map(|s| {
            if s.distribution == Distribution::In {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Tensor::new(vec![samples.len(), 1], t)
}

/// BCE loss and accuracy of `p_in >= threshold` over labelled samples.
fn binary_metrics(model: &Model, samples: &[&LabeledSample], threshold: f64) -> Result<(f64, f64)> {
    let images: Vec<&Image> = samples.iter().map(|s| &s.image).collect();
    let p: Vec<f64> = train::predict_images(model, &images)?
        .into_iter()
        .map(|r| r[0])
        .collect();
    let pred = Tensor::new(vec![p.len(), 1], p.clone())?;
    let l = loss(
        LossKind::BinaryCrossEntropy,
        &pred,
        &Target::Dense(binary_target(samples)?),
    )?;
    let correct = p
        .iter()
        .zip(samples)
        .filter(|(&p, s)| (p >= threshold) == (s.distribution == Distribution::In))
        .count();
    Ok((l, correct as f64 / samples.len() as f64))
}

struct BinaryTask<'a> {
    ins: Vec<&'a LabeledSample>,
    outs: Vec<&'a LabeledSample>,
    val: Vec<&'a LabeledSample>,
    dims: (usize, usize, usize),
    threshold: f64,
}

impl Task for BinaryTask<'_> {
    /// Alternates shuffled IN and generated indices so every contiguous batch
    /// is balanced to within one sample. Indices `>= ins.len()` are generated.
    fn order(&self, _epoch: usize, rng: &mut WdRng) -> Vec<usize> {
        let m = self.ins.len();
        let mut a: Vec<usize> = (0..m).collect();
        let mut b: Vec<usize> = (m..m + self.outs.len()).collect();
        rng::shuffle(&mut a, rng);
        rng::shuffle(&mut b, rng);
        a.into_iter().zip(b).flat_map(|(x, y)| [x, y]).collect()
    }

    fn batch(&self, indices: &[usize], _rng: &mut WdRng) -> Result<(Tensor, Target)> {
        let m = self.ins.len();
        let picked: Vec<&LabeledSample> = indices
            .iter()
            .map(|&i| if i < m { self.ins[i] } else { self.outs[i - m] })
            .collect();
        Ok((
            stack(&picked, self.dims)?,
            Target::Dense(binary_target(&picked)?),
        ))
    }

    fn evaluate(&self, model: &Model) -> Result<(Option<f64>, Option<f64>, Option<f64>)> {
        let train: Vec<&LabeledSample> = self.ins.iter().chain(&self.outs).copied().collect();
        let (_, train_acc) = binary_metrics(model, &train, self.threshold)?;
        if self.val.is_empty() {
            return Ok((None, Some(train_acc), None));
        }
        let (val_loss, val_acc) = binary_metrics(model, &self.val, self.threshold)?;
        Ok((Some(val_loss), Some(train_acc), Some(val_acc)))
    }
}

/// `m` samples chosen by a seeded shuffle.
fn downsample<'a>(set: &'a Dataset, m: usize, rng: &mut WdRng) -> Vec<&'a LabeledSample> {
    let mut idx: Vec<usize> = (0..set.len()).collect();
    rng::shuffle(&mut idx, rng);
    idx.truncate(m);
    idx.into_iter().map(|i| &set.samples()[i]).collect()
}

struct BalancedSplit<'a> {
    ins: Vec<&'a LabeledSample>,
    outs: Vec<&'a LabeledSample>,
    val: Vec<&'a LabeledSample>,
}

/// Downsamples the larger side, then holds out the trailing validation
/// fraction of each side.
fn balanced_split<'a>(
    in_set: &'a Dataset,
    generated: &'a Dataset,
    cfg: &TrainConfig,
) -> BalancedSplit<'a> {
    let m = in_set.len().min(generated.len());
    let mut pick = rng::stream(cfg.seed, 0xD0);
    let ins = downsample(in_set, m, &mut pick);
    let outs = downsample(generated, m, &mut pick);
    let hold = if cfg.validation_fraction > 0.0 {
        ((m as f64 * cfg.validation_fraction).round() as usize).clamp(1, m.saturating_sub(1).max(1))
    } else {
        0
    };
    let keep = m - hold;
    BalancedSplit {
        val: ins[keep..].iter().chain(&outs[keep..]).copied().collect(),
        ins: ins[..keep].to_vec(),
        outs: outs[..keep].to_vec(),
    }
}

/// Scores on the samples [`train_binary`] held out for validation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoldoutReport {
    pub in_samples: usize,
    pub generated_samples: usize,
    pub threshold: f64,
    pub accuracy: f64,
    pub auc: f64,
    pub roc: RocCurve,
}

/// Evaluates `model` on the validation split `train_binary` would hold out
/// for the same sets and config.
pub fn binary_holdout(
    model: &Model,
    in_set: &Dataset,
    generated: &Dataset,
    config: &BinaryClassifierConfig,
) -> Result<HoldoutReport> {
    let split = balanced_split(in_set, generated, &config.train);
    if split.val.is_empty() {
        return Err(Error::Config(
            "binary validation_fraction is 0; nothing held out".into(),
        ));
    }
    let images: Vec<&Image> = split.val.iter().map(|s| &s.image).collect();
    let scores = binary_scores(model, &images)?;
    let labels: Vec<bool> = split
        .val
        .iter()
        .map(|s| s.distribution == Distribution::In)
        .collect();
    let correct = scores
        .iter()
        .zip(&labels)
        .filter(|(&p, &l)| (p >= config.threshold) == l)
        .count();
    let curve = roc(&scores, &labels)?;
    let in_samples = labels.iter().filter(|&&l| l).count();
    Ok(HoldoutReport {
        in_samples,
        generated_samples: labels.len() - in_samples,
        threshold: config.threshold,
        accuracy: correct as f64 / labels.len() as f64,
        auc: curve.auc,
        roc: curve,
    })
}

/// Binary cross entropy on equal numbers of IN and generated samples (the
/// larger side is downsampled). The trailing validation fraction of each
/// side is held out.
pub fn train_binary(
    in_set: &Dataset,
    generated: &Dataset,
    config: &BinaryClassifierConfig,
) -> Result<(Model, History)> {
    config.validate()?;
    if in_set.is_empty() || generated.is_empty() {
        return Err(Error::Dataset(format!(
            "binary training needs both sets non-empty ({} IN, {} generated)",
            in_set.len(),
            generated.len()
        )));
    }
    if in_set.dims() != generated.dims() {
        return Err(Error::Shape(format!(
            "IN set {:?} and generated set {:?} differ",
            in_set.dims(),
            generated.dims()
        )));
    }
    if in_set
        .samples()
        .iter()
        .any(|s| s.distribution != Distribution::In)
    {
        return Err(Error::Dataset("binary IN set contains OUT samples".into()));
    }
    if generated.manifest().provenance != Provenance::GeneratedBoundary
        || generated
            .samples()
            .iter()
            .any(|s| s.distribution != Distribution::Out)
    {
        return Err(Error::Dataset(
            "binary negative set must be generated-boundary OUT data".into(),
        ));
    }
    let split = balanced_split(in_set, generated, &config.train);
    let task = BinaryTask {
        ins: split.ins,
        outs: split.outs,
        val: split.val,
        dims: in_set.dims(),
        threshold: config.threshold,
    };
    let mut model = Model::init(config.network(in_set.dims())?, config.train.seed);
    let history = train::run(
        &mut model,
        &config.train,
        LossKind::BinaryCrossEntropy,
        &task,
    )?;
    Ok((model, history))
}

fn check_input(model: &Model, image: &Image) -> Result<()> {
    if model.spec.input_shape() != image.shape().as_slice() {
        return Err(Error::Shape(format!(
            "image {:?} does not match network input {:?}",
            image.shape(),
            model.spec.input_shape()
        )));
    }
    Ok(())
}

/// Probability that `image` is in-distribution.
pub fn binary_score(model: &Model, image: &Image) -> Result<f64> {
    check_input(model, image)?;
    Ok(model.predict_one(image.data())?[0])
}

pub fn binary_scores(model: &Model, images: &[&Image]) -> Result<Vec<f64>> {
    for i in images {
        check_input(model, i)?;
    }
    Ok(train::predict_images(model, images)?
        .into_iter()
        .map(|r| r[0])
        .collect())
}

struct CoreTask<'a> {
    train: &'a Dataset,
    val: &'a Dataset,
    augmentation: &'a AugmentationSpec,
}

fn labels_of(set: &Dataset) -> Vec<usize> {
    set.samples()
        .iter()
        .map(|s| s.class_label.expect("checked"))
        .collect()
}

/// Cross entropy and accuracy over a labelled set.
fn core_metrics(model: &Model, set: &Dataset) -> Result<(f64, f64)> {
    let images: Vec<&Image> = set.images().collect();
    let probs = train::predict_images(model, &images)?;
    let labels = labels_of(set);
    let k = probs[0].len();
    let pred = Tensor::new(vec![probs.len(), k], probs.concat())?;
    let l = loss(
        LossKind::CategoricalCrossEntropy,
        &pred,
        &Target::Classes(labels.clone()),
    )?;
    let correct = probs
        .iter()
        .zip(&labels)
        .filter(|(p, &c)| argmax(p) == c)
        .count();
    Ok((l, correct as f64 / labels.len() as f64))
}

impl Task for CoreTask<'_> {
    fn order(&self, _epoch: usize, rng: &mut WdRng) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        rng::shuffle(&mut order, rng);
        order
    }

    fn batch(&self, indices: &[usize], rng: &mut WdRng) -> Result<(Tensor, Target)> {
        let images: Vec<Image> = indices
            .iter()
            .map(|&i| augment(&self.train.samples()[i].image, self.augmentation, rng))
            .collect();
        let rows: Vec<&[f64]> = images.iter().map(Image::data).collect();
        let (h, w, c) = self.train.dims();
        let labels = indices
            .iter()
            .map(|&i| self.train.samples()[i].class_label.expect("checked"))
            .collect();
        Ok((Tensor::stack(&rows, &[h, w, c])?, Target::Classes(labels)))
    }

    fn evaluate(&self, model: &Model) -> Result<(Option<f64>, Option<f64>, Option<f64>)> {
        let (_, train_acc) = core_metrics(model, self.train)?;
        if self.val.is_empty() {
            return Ok((None, Some(train_acc), None));
        }
        let (val_loss, val_acc) = core_metrics(model, self.val)?;
        Ok((Some(val_loss), Some(train_acc), Some(val_acc)))
    }
}

/// Augmented categorical cross-entropy training on labelled IN samples.
pub fn train_core(train_set: &Dataset, config: &CoreClassifierConfig) -> Result<(Model, History)> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Dataset("core training set is empty".into()));
    }
    let k = train_set.manifest().classes;
    for (i, s) in train_set.samples().iter().enumerate() {
        match s.class_label {
            Some(c) if c < k && s.distribution == Distribution::In => {}
            _ => {
                return Err(Error::Labels(format!(
                    "sample {i} needs an IN class label in 0..{k}, has {:?}/{}",
                    s.class_label, s.distribution
                )))
            }
        }
    }
    let (fit, val) = train_set.split_tail(config.train.validation_fraction);
    let task = CoreTask {
        train: &fit,
        val: &val,
        augmentation: &config.augmentation,
    };
    let mut model = Model::init(config.network(train_set.dims(), k)?, config.train.seed);
    let history = train::run(
        &mut model,
        &config.train,
        LossKind::CategoricalCrossEntropy,
        &task,
    )?;
    Ok((model, history))
}

/// Class probabilities for one image.
pub fn classify(model: &Model, image: &Image) -> Result<Vec<f64>> {
    check_input(model, image)?;
    model.predict_one(image.data())
}

pub fn classify_many(model: &Model, images: &[&Image]) -> Result<Vec<Vec<f64>>> {
    for i in images {
        check_input(model, i)?;
    }
    train::predict_images(model, images)
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
            if v > best.1 {
                (i, v)
            } else {
                best
            }
        })
        .0
}
