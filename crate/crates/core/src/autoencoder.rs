//! Tier 1: autoencoder reconstruction scored by SSIM, threshold calibration
//! and gating.

use serde::{Deserialize, Serialize};

use crate::data::{augment, netpbm, AugmentationSpec, Dataset, Distribution, Image};
use crate::error::{Error, Result};
use crate::metrics::{roc, ssim, ssim_map, RocCurve, SsimMap, SsimParams};
use crate::nn::{Activation, Head, LossKind, Model, NetworkSpec, Target};
use crate::rng::{self, WdRng};
use crate::tensor::Tensor;
use crate::train::{self, History, Task, TrainConfig};

/// Threshold commonly used for the tier-1 gate on reconstruction SSIM.
pub const REFERENCE_TAU: f64 = 0.85;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoencoderConfig {
    /// Hidden widths between the flattened input and the reconstruction.
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    pub augmentation: AugmentationSpec,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        AutoencoderConfig {
            hidden: vec![256, 64, 256],
            train: TrainConfig {
                epochs: 30,
                ..Default::default()
            },
            augmentation: AugmentationSpec::standard(),
        }
    }
}

impl AutoencoderConfig {
    /// `input -> hidden... -> input` with ReLU inside and a sigmoid output.
    pub fn network(&self, dims: (usize, usize, usize)) -> Result<NetworkSpec> {
        let shape = vec![dims.0, dims.1, dims.2];
        let flat = dims.0 * dims.1 * dims.2;
        let latent = self.hidden.iter().copied().min().unwrap_or(0);
        if latent == 0 || latent >= flat {
            return Err(Error::Config(format!(
                "autoencoder needs a latent layer narrower than the input ({flat}), got {:?}",
                self.hidden
            )));
        }
        let mut widths = self.hidden.clone();
        widths.push(flat);
        NetworkSpec::mlp(
            shape.clone(),
            &widths,
            Activation::Relu,
            Head::Activation(Activation::Sigmoid),
            Some(shape),
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.augmentation.validate()
    }
}

struct ReconstructionTask<'a> {
    train: &'a Dataset,
    val: &'a Dataset,
    augmentation: &'a AugmentationSpec,
}

impl Task for ReconstructionTask<'_> {
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
        let batch = Tensor::stack(&rows, &[h, w, c])?;
        Ok((batch.clone(), Target::Dense(batch)))
    }

    fn evaluate(&self, model: &Model) -> Result<(Option<f64>, Option<f64>, Option<f64>)> {
        if self.val.is_empty() {
            return Ok((None, None, None));
        }
        Ok((Some(reconstruction_mse(model, self.val)?), None, None))
    }
}

/// Mean squared reconstruction error over a dataset.
pub fn reconstruction_mse(model: &Model, set: &Dataset) -> Result<f64> {
    let images: Vec<&Image> = set.images().collect();
    let outputs = train::predict_images(model, &images)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (img, out) in images.iter().zip(&outputs) {
        for (a, b) in img.data().iter().zip(out) {
            sum += (a - b) * (a - b);
        }
        n += out.len();
    }
    Ok(sum / n as f64)
}

/// Trains on the in-distribution samples of `train_set`; the trailing
/// validation fraction is held out for the history.
pub fn train_autoencoder(
    train_set: &Dataset,
    config: &AutoencoderConfig,
) -> Result<(Model, History)> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Dataset("autoencoder training set is empty".into()));
    }
    if train_set
        .samples()
        .iter()
        .any(|s| s.distribution != Distribution::In)
    {
        return Err(Error::Dataset(
            "autoencoder training data must be in-distribution".into(),
        ));
    }
    let spec = config.network(train_set.dims())?;
    let mut model = Model::init(spec, config.train.seed);
    let (fit, val) = train_set.split_tail(config.train.validation_fraction);
    let task = ReconstructionTask {
        train: &fit,
        val: &val,
        augmentation: &config.augmentation,
    };
    let history = train::run(&mut model, &config.train, LossKind::Mse, &task)?;
    Ok((model, history))
}

fn check_image(model: &Model, image: &Image) -> Result<()> {
    if model.spec.input_shape() != image.shape().as_slice() {
        return Err(Error::Shape(format!(
            "image {:?} does not match network input {:?}",
            image.shape(),
            model.spec.input_shape()
        )));
    }
    Ok(())
}

pub fn reconstruct(model: &Model, image: &Image) -> Result<Image> {
    check_image(model, image)?;
    let (h, w, c) = image.dims();
    Image::from_clipped(h, w, c, model.predict_one(image.data())?)
}

/// SSIM between an image and its reconstruction.
pub fn tier1_score(model: &Model, image: &Image, params: &SsimParams) -> Result<f64> {
    ssim(image, &reconstruct(model, image)?, params)
}

/// [`tier1_score`] for many images, batching the forward passes.
pub fn tier1_scores(model: &Model, images: &[&Image], params: &SsimParams) -> Result<Vec<f64>> {
    for img in images {
        check_image(model, img)?;
    }
    let outputs = train::predict_images(model, images)?;
    images
        .iter()
        .zip(outputs)
        .map(|(img, out)| {
            let (h, w, c) = img.dims();
            ssim(img, &Image::from_clipped(h, w, c, out)?, params)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Gate {
    Pass,
    Reject,
}

/// Passes when the score reaches the threshold (inclusive).
pub fn tier1_gate(score: f64, tau: f64) -> Gate {
    if score >= tau {
        Gate::Pass
    } else {
        Gate::Reject
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdConfig {
    /// Fixed operating threshold; `None` uses the calibrated one.
    pub tau: Option<f64>,
    /// Sweep grid spacing over `[0, 1]`; `1 / grid_step` must be an integer.
    pub grid_step: f64,
    /// Grid points whose Youden index is within this of the maximum form the
    /// recommended interval.
    pub band: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig {
            tau: None,
            grid_step: 0.005,
            band: 0.02,
        }
    }
}

impl ThresholdConfig {
    fn grid_len(&self) -> Result<usize> {
        let n = (1.0 / self.grid_step).round();
        if !(self.grid_step > 0.0) || n < 1.0 || ((n * self.grid_step) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "grid_step {} must divide 1 evenly",
                self.grid_step
            )));
        }
        Ok(n as usize)
    }

    /// Grid values `i / n`, so decimal points such as 0.85 are represented
    /// exactly as their literal.
    pub fn grid(&self) -> Result<Vec<f64>> {
        let n = self.grid_len()?;
        Ok((0..=n).map(|i| i as f64 / n as f64).collect())
    }

    pub fn validate(&self) -> Result<()> {
        self.grid_len()?;
        if let Some(t) = self.tau {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("tau {t} must lie in [0, 1]")));
            }
        }
        if !(self.band >= 0.0) {
            return Err(Error::Config(format!(
                "band {} must be non-negative",
                self.band
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub tau: f64,
    pub tpr: f64,
    pub fpr: f64,
}

impl SweepPoint {
    pub fn youden(&self) -> f64 {
        self.tpr - self.fpr
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMean {
    pub group: String,
    pub count: usize,
    pub mean_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    /// ROC with in-distribution as the positive class.
    pub roc: RocCurve,
    pub sweep: Vec<SweepPoint>,
    pub max_youden: f64,
    /// Smallest and largest grid threshold within the band.
    pub interval: (f64, f64),
    /// Grid midpoint of the interval.
    pub calibrated_tau: f64,
    /// Operating threshold: the override when given, else `calibrated_tau`.
    pub chosen_tau: f64,
    pub overridden: bool,
    pub group_means: Vec<GroupMean>,
}

/// Threshold selection from raw scores; higher score means in-distribution.
pub fn calibrate_scores(
    in_scores: &[f64],
    ood_scores: &[f64],
    config: &ThresholdConfig,
) -> Result<CalibrationReport> {
    config.validate()?;
    if in_scores.is_empty() || ood_scores.is_empty() {
        return Err(Error::Dataset(format!(
            "calibration needs both sets non-empty ({} IN, {} OOD)",
            in_scores.len(),
            ood_scores.len()
        )));
    }
    let scores: Vec<f64> = in_scores.iter().chain(ood_scores).copied().collect();
    let labels: Vec<bool> = (0..scores.len()).map(|i| i < in_scores.len()).collect();
    let curve = roc(&scores, &labels)?;

    let frac_at_least =
        |set: &[f64], t: f64| set.iter().filter(|&&s| s >= t).count() as f64 / set.len() as f64;
    let grid = config.grid()?;
    let sweep: Vec<SweepPoint> = grid
        .iter()
        .map(|&tau| SweepPoint {
            tau,
            tpr: frac_at_least(in_scores, tau),
            fpr: frac_at_least(ood_scores, tau),
        })
        .collect();
    let max_youden = sweep
        .iter()
        .map(SweepPoint::youden)
        .fold(f64::NEG_INFINITY, f64::max);
    let in_band: Vec<f64> = sweep
        .iter()
        .filter(|p| p.youden() >= max_youden - config.band)
        .map(|p| p.tau)
        .collect();
    let interval = (in_band[0], *in_band.last().expect("max is in band"));
    let n = grid.len() - 1;
    let mid = (interval.0 + interval.1) / 2.0;
    let calibrated_tau = grid[((mid * n as f64).round() as usize).min(n)];
    let chosen_tau = config.tau.unwrap_or(calibrated_tau);
    Ok(CalibrationReport {
        roc: curve,
        sweep,
        max_youden,
        interval,
        calibrated_tau,
        chosen_tau,
        overridden: config.tau.is_some(),
        group_means: Vec::new(),
    })
}

/// Scores both validation sets with the autoencoder and selects a threshold.
pub fn calibrate(
    model: &Model,
    in_val: &Dataset,
    ood_val: &Dataset,
    config: &ThresholdConfig,
    params: &SsimParams,
) -> Result<CalibrationReport> {
    let in_scores = tier1_scores(model, &in_val.images().collect::<Vec<_>>(), params)?;
    let ood_scores = tier1_scores(model, &ood_val.images().collect::<Vec<_>>(), params)?;
    let mut report = calibrate_scores(&in_scores, &ood_scores, config)?;

    let mut groups: std::collections::BTreeMap<Option<usize>, (usize, f64)> = Default::default();
    for (s, score) in in_val.samples().iter().zip(&in_scores) {
        let e = groups.entry(s.class_label).or_default();
        e.0 += 1;
        e.1 += score;
    }
    report.group_means = groups
        .into_iter()
        .map(|(class, (count, sum))| GroupMean {
            group: class.map_or_else(|| "IN".to_string(), |c| format!("class-{c}")),
            count,
            mean_score: sum / count as f64,
        })
        .collect();
    report.group_means.push(GroupMean {
        group: "OUT".into(),
        count: ood_scores.len(),
        mean_score: ood_scores.iter().sum::<f64>() / ood_scores.len() as f64,
    });
    Ok(report)
}

/// Places a (possibly smaller) SSIM map at the centre of an `h x w` panel.
fn map_panel(map: &SsimMap, h: usize, w: usize) -> Result<Image> {
    let mut data = vec![0.0; h * w];
    if map.rows == 1 && map.cols == 1 {
        data.fill(map.values[0]);
    } else {
        let (oy, ox) = ((h - map.rows) / 2, (w - map.cols) / 2);
        for r in 0..map.rows {
            for c in 0..map.cols {
                data[(oy + r) * w + ox + c] = map.values[r * map.cols + c];
            }
        }
    }
    Image::from_clipped(h, w, 1, data)
}

/// Original, reconstruction and SSIM map side by side.
pub fn triptych(model: &Model, image: &Image, params: &SsimParams) -> Result<Image> {
    let rec = reconstruct(model, image)?;
    let map = ssim_map(image, &rec, params)?;
    let (h, w, _) = image.dims();
    let panels = [image.to_luma(), rec.to_luma(), map_panel(&map, h, w)?];
    netpbm::contact_sheet(&panels, 3, 1.0)
}
