//! Near-threshold sample synthesis: gradient descent on the input image until
//! its reconstruction SSIM hits a target score.
//!
//! The objective is `f(x) = (S(x) - target)^2` with `S(x) = ssim(x, AE(x))`.
//! Its gradient combines the direct SSIM term with the SSIM gradient in the
//! reconstruction pulled back through the autoencoder.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autoencoder::tier1_score;
use crate::data::{Dataset, DatasetManifest, Distribution, Image, LabeledSample, Provenance};
use crate::error::{Error, Result};
use crate::metrics::{ssim, ssim_with_grad, SsimParams};
use crate::nn::{forward, Model};
use crate::rng::{self, WdRng};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeedMode {
    InDistributionImage,
    UniformNoise,
    /// Pixelwise average of a pool image and uniform noise.
    Blend,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub target: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Largest per-pixel change of one step.
    pub step: f64,
    /// Step halvings tried before an iteration counts as stalled.
    pub max_halvings: usize,
    pub seed_mode: SeedMode,
    pub seed: u64,
    /// Failed attempts tolerated by [`batch_generate`] before giving up.
    pub retry_budget: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            target: 0.90,
            tolerance: 0.02,
            max_iterations: 500,
            step: 0.05,
            max_halvings: 10,
            seed_mode: SeedMode::Blend,
            seed: 3,
            retry_budget: 200,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target > 0.0 && self.target <= 1.0) {
            return Err(Error::Config(format!(
                "target {} must lie in (0, 1]",
                self.target
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config(format!(
                "tolerance {} must be positive",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::Config(format!(
                "step {} must be positive",
                self.step
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedSample {
    pub image: Image,
    /// Score from a fresh evaluation of the returned image.
    pub achieved: f64,
    pub iterations: usize,
    /// Pool index of the seed image, if one was used.
    pub seed_index: Option<usize>,
    /// Objective value at the start and after every accepted step.
    pub trace: Vec<f64>,
}

/// `(S(x), f(x), df/dx)` for one image.
pub fn objective_grad(
    model: &Model,
    x: &Image,
    target: f64,
    params: &SsimParams,
) -> Result<(f64, f64, Vec<f64>)> {
    let batch = Tensor::stack(&[x.data()], model.spec.input_shape())?;
    let (out, tape) = forward(&model.spec, &model.params, &batch)?;
    let (h, w, c) = x.dims();
    let y = Image::new(h, w, c, out.data().to_vec())
        .map_err(|_| Error::Config("autoencoder output must lie in [0, 1]".into()))?;
    let (s, mut gx, gy) = ssim_with_grad(x, &y, params)?;
    let upstream = Tensor::new(out.shape().to_vec(), gy)?;
    let pulled = tape
        .backward_from(&upstream, true)?
        .input
        .expect("input gradient requested");
    let scale = 2.0 * (s - target);
    for (g, p) in gx.iter_mut().zip(pulled.data()) {
        *g = scale * (*g + p);
    }
    Ok((s, (s - target) * (s - target), gx))
}

fn objective(model: &Model, x: &Image, target: f64, params: &SsimParams) -> Result<(f64, f64)> {
    let s = tier1_score(model, x, params)?;
    Ok((s, (s - target) * (s - target)))
}

fn starting_image(
    pool: &Dataset,
    mode: SeedMode,
    rng: &mut WdRng,
) -> Result<(Image, Option<usize>)> {
    let (h, w, c) = pool.dims();
    let pick = |rng: &mut WdRng| -> Result<usize> {
        if pool.is_empty() {
            return Err(Error::Dataset("seed pool is empty".into()));
        }
        Ok(rng.random_range(0..pool.len()))
    };
    Ok(match mode {
        SeedMode::InDistributionImage => {
            let i = pick(rng)?;
            (pool.samples()[i].image.clone(), Some(i))
        }
        SeedMode::UniformNoise => {
            let data = (0..h * w * c).map(|_| rng.random::<f64>()).collect();
            (Image::new(h, w, c, data)?, None)
        }
        SeedMode::Blend => {
            let i = pick(rng)?;
            let base = pool.samples()[i].image.data();
            let data = base
                .iter()
                .map(|v| 0.5 * v + 0.5 * rng.random::<f64>())
                .collect();
            (Image::new(h, w, c, data)?, Some(i))
        }
    })
}

/// Optimizes one start image drawn from `pool` according to the seed mode.
pub fn generate_boundary(
    model: &Model,
    pool: &Dataset,
    config: &GeneratorConfig,
    params: &SsimParams,
    rng: &mut WdRng,
) -> Result<GeneratedSample> {
    config.validate()?;
    let (start, seed_index) = starting_image(pool, config.seed_mode, rng)?;
    refine(model, start, seed_index, config, params)
}

/// Descent from a given start image.
pub fn refine(
    model: &Model,
    start: Image,
    seed_index: Option<usize>,
    config: &GeneratorConfig,
    params: &SsimParams,
) -> Result<GeneratedSample> {
    config.validate()?;
    let (h, w, c) = start.dims();
    let mut x = start;
    let (mut score, mut f) = objective(model, &x, config.target, params)?;
    let mut trace = vec![f];
    let mut iterations = 0;
    while (score - config.target).abs() > config.tolerance {
        if iterations == config.max_iterations {
            return Err(Error::GenerationFailed {
                iterations,
                best_score: score,
            });
        }
        iterations += 1;
        let (_, _, grad) = objective_grad(model, &x, config.target, params)?;
        let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gmax == 0.0 || !gmax.is_finite() {
            return Err(Error::GenerationFailed {
                iterations,
                best_score: score,
            });
        }
        let mut eta = config.step / gmax;
        let mut accepted = None;
        for _ in 0..=config.max_halvings {
            let data = x
                .data()
                .iter()
                .zip(&grad)
                .map(|(v, g)| v - eta * g)
                .collect();
            let cand = Image::from_clipped(h, w, c, data)?;
            let (s, fc) = objective(model, &cand, config.target, params)?;
            if fc < f {
                accepted = Some((cand, s, fc));
                break;
            }
            eta *= 0.5;
        }
        match accepted {
            Some((cand, s, fc)) => {
                x = cand;
                score = s;
                f = fc;
                trace.push(f);
            }
            None => {
                return Err(Error::GenerationFailed {
                    iterations,
                    best_score: score,
                })
            }
        }
    }
    let achieved = tier1_score(model, &x, params)?;
    Ok(GeneratedSample {
        image: x,
        achieved,
        iterations,
        seed_index,
        trace,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub attempt: u64,
    pub achieved: f64,
    pub iterations: usize,
    pub seed_index: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationSummary {
    pub requested: usize,
    pub attempts: usize,
    pub failures: usize,
    pub mean_achieved: f64,
    pub mean_iterations: f64,
    pub records: Vec<SampleRecord>,
}

/// Generates `n` samples, attempt `a` drawing from RNG stream `a` of the
/// configured seed. Failed attempts are retried until the budget runs out.
pub fn batch_generate(
    model: &Model,
    pool: &Dataset,
    config: &GeneratorConfig,
    params: &SsimParams,
    n: usize,
) -> Result<(Dataset, GenerationSummary)> {
    config.validate()?;
    if n == 0 {
        return Err(Error::Config("batch_generate needs n >= 1".into()));
    }
    let mut samples = Vec::with_capacity(n);
    let mut records = Vec::with_capacity(n);
    let mut failures = 0;
    let mut attempt = 0u64;
    while samples.len() < n {
        let mut r = rng::stream(config.seed, attempt);
        match generate_boundary(model, pool, config, params, &mut r) {
            Ok(g) => {
                records.push(SampleRecord {
                    attempt,
                    achieved: g.achieved,
                    iterations: g.iterations,
                    seed_index: g.seed_index,
                });
                samples.push(LabeledSample {
                    image: g.image,
                    class_label: None,
                    distribution: Distribution::Out,
                });
            }
            Err(Error::GenerationFailed { .. }) => {
                failures += 1;
                if failures > config.retry_budget {
                    return Err(Error::RetryBudget {
                        produced: samples.len(),
                        requested: n,
                    });
                }
            }
            Err(e) => return Err(e),
        }
        attempt += 1;
    }
    let (h, w, c) = pool.dims();
    let dataset = Dataset::new(
        DatasetManifest {
            name: "generated-boundary".into(),
            count: n,
            classes: pool.manifest().classes,
            width: w,
            height: h,
            channels: c,
            seed: config.seed,
            provenance: Provenance::GeneratedBoundary,
            sources: Vec::new(),
        },
        samples,
    );
    let summary = GenerationSummary {
        requested: n,
        attempts: attempt as usize,
        failures,
        mean_achieved: records.iter().map(|r| r.achieved).sum::<f64>() / n as f64,
        mean_iterations: records.iter().map(|r| r.iterations as f64).sum::<f64>() / n as f64,
        records,
    };
    Ok((dataset, summary))
}

/// Objective value used by the descent, exposed for diagnostics.
pub fn objective_value(model: &Model, x: &Image, target: f64, params: &SsimParams) -> Result<f64> {
    let rec = crate::autoencoder::reconstruct(model, x)?;
    let s = ssim(x, &rec, params)?;
    Ok((s - target) * (s - target))
}
