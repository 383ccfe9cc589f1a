//! The experiment stages. Each one owns a subdirectory of the output
//! directory, rewrites it from scratch, and records its files in the run
//! manifest.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use watchdog_core::autoencoder::{
    calibrate, tier1_scores, train_autoencoder, triptych, CalibrationReport, REFERENCE_TAU,
};
use watchdog_core::boundary::batch_generate;
use watchdog_core::classifier::{argmax, binary_holdout, classify_many, train_binary, train_core};
use watchdog_core::data::{
    load_dataset, mix, netpbm, save_dataset, synth_in_distribution, synth_ood, Dataset,
    Distribution, Image,
};
use watchdog_core::metrics::roc;
use watchdog_core::nn::Model;
use watchdog_core::pipeline::{
    compare_report, evaluate_detailed, rejection_galleries, write_combined_roc, Outcome, Pipeline,
    PipelineConfig,
};
use watchdog_core::rng::{self, derive_seed};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::{checksum, relative, walk, FileRecord, RunManifest, StageRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    SynthData,
    TrainAe,
    Calibrate,
    GenBoundary,
    TrainBinary,
    TrainCore,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::SynthData,
        Stage::TrainAe,
        Stage::Calibrate,
        Stage::GenBoundary,
        Stage::TrainBinary,
        Stage::TrainCore,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::SynthData => "synth-data",
            Stage::TrainAe => "train-ae",
            Stage::Calibrate => "calibrate",
            Stage::GenBoundary => "gen-boundary",
            Stage::TrainBinary => "train-binary",
            Stage::TrainCore => "train-core",
            Stage::Evaluate => "evaluate",
        }
    }

    /// Subdirectory of the output directory the stage owns.
    pub fn dir(self) -> &'static str {
        match self {
            Stage::SynthData => "data",
            Stage::TrainAe => "autoencoder",
            Stage::Calibrate => "calibration",
            Stage::GenBoundary => "boundary",
            Stage::TrainBinary => "binary",
            Stage::TrainCore => "core",
            Stage::Evaluate => "evaluation",
        }
    }
}

pub const MODEL_FILE: &str = "model.nnwd";
pub const DATA_SETS: [&str; 6] = [
    "train-in",
    "val-in",
    "val-ood",
    "eval-in",
    "eval-ood",
    "eval-mixed",
];

/// A configured output directory, locked for the lifetime of the value.
#[derive(Debug)]
pub struct Context {
    pub out: PathBuf,
    pub config: ExperimentConfig,
    pub quiet: bool,
    _lock: File,
}

impl Context {
    pub fn open(out: PathBuf, config: ExperimentConfig, quiet: bool) -> CliResult<Self> {
        let dir_err = |source| CliError::OutputDir {
            path: out.clone(),
            source,
        };
        std::fs::create_dir_all(&out).map_err(dir_err)?;
        let lock_path = out.join(".lock");
        let lock = File::create(&lock_path).map_err(dir_err)?;
        match lock.try_lock() {
            Ok(()) => {}
            Err(std::fs::TryLockError::WouldBlock) => return Err(CliError::Locked(out)),
            Err(std::fs::TryLockError::Error(e)) => return Err(dir_err(e)),
        }
        Ok(Context {
            out,
            config,
            quiet,
            _lock: lock,
        })
    }

    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.out.join(stage.dir())
    }

    pub fn run(&self, stage: Stage) -> CliResult<()> {
        let dir = self.stage_dir(stage);
        let start = Instant::now();
        self.note(format!("[{}] starting", stage.name()));
        // dependencies are checked before anything is removed
        self.check_dependencies(stage)?;
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|source| CliError::OutputDir {
                path: dir.clone(),
                source,
            })?;
        }
        std::fs::create_dir_all(&dir).map_err(|source| CliError::OutputDir {
            path: dir.clone(),
            source,
        })?;
        match stage {
            Stage::SynthData => self.synth_data(&dir),
            Stage::TrainAe => self.train_ae(&dir),
            Stage::Calibrate => self.calibrate(&dir),
            Stage::GenBoundary => self.gen_boundary(&dir),
            Stage::TrainBinary => self.train_binary(&dir),
            Stage::TrainCore => self.train_core(&dir),
            Stage::Evaluate => self.evaluate(&dir),
        }?;
        let seconds = start.elapsed().as_secs_f64();
        let mut files = Vec::new();
        for path in walk(&dir).map_err(|source| CliError::OutputDir {
            path: dir.clone(),
            source,
        })? {
            let (sha256, bytes) = checksum(&path).map_err(|source| CliError::OutputDir {
                path: path.clone(),
                source,
            })?;
            files.push(FileRecord {
                path: relative(&self.out, &path),
                bytes,
                sha256,
            });
        }
        let hash = self.config.hash();
        let mut manifest =
            RunManifest::load(&self.out)?.unwrap_or_else(|| RunManifest::new(hash.clone()));
        manifest.config_hash = hash.clone();
        manifest.tool_version = env!("CARGO_PKG_VERSION").to_string();
        manifest.stages.insert(
            stage.name().to_string(),
            StageRecord {
                config_hash: hash,
                seconds,
                files,
            },
        );
        manifest.save(&self.out)?;
        self.note(format!("[{}] done in {seconds:.1}s", stage.name()));
        Ok(())
    }

    fn check_dependencies(&self, stage: Stage) -> CliResult<()> {
        let data = |name: &str| self.require(Stage::SynthData, &format!("{name}/manifest.json"));
        let model = |s: Stage| self.require(s, MODEL_FILE);
        match stage {
            Stage::SynthData => Ok(()),
            Stage::TrainAe => data("train-in"),
            Stage::Calibrate => {
                model(Stage::TrainAe)?;
                data("val-in")?;
                data("val-ood")
            }
            Stage::GenBoundary => {
                model(Stage::TrainAe)?;
                data("train-in")
            }
            Stage::TrainBinary => {
                model(Stage::TrainAe)?;
                data("train-in")?;
                self.require(Stage::GenBoundary, "samples/manifest.json")
            }
            Stage::TrainCore => data("train-in"),
            Stage::Evaluate => {
                let p = &self.config.pipeline;
                if p.tier1 {
                    model(Stage::TrainAe)?;
                    if self.config.calibration.tau.is_none() {
                        self.require(Stage::Calibrate, "report.json")?;
                    }
                }
                if p.tier2 {
                    model(Stage::TrainBinary)?;
                }
                model(Stage::TrainCore)?;
                data("eval-mixed")
            }
        }
    }

    fn require(&self, stage: Stage, rel: &str) -> CliResult<()> {
        let path = self.stage_dir(stage).join(rel);
        if path.exists() {
            Ok(())
        } else {
            Err(CliError::MissingStage {
                stage: stage.name(),
                path,
            })
        }
    }

    fn dataset(&self, name: &str) -> CliResult<Dataset> {
        Ok(load_dataset(self.stage_dir(Stage::SynthData).join(name))?)
    }

    fn model(&self, stage: Stage) -> CliResult<Model> {
        self.require(stage, MODEL_FILE)?;
        Ok(Model::load(self.stage_dir(stage).join(MODEL_FILE))?)
    }

    fn synth_data(&self, dir: &Path) -> CliResult<()> {
        let d = &self.config.dataset;
        let (train, val, eval) = match &d.import_in {
            Some(path) => split_imported_in(&load_dataset(path)?, d)?,
            None => {
                let spec = &d.synthetic;
                (
                    synth_in_distribution(spec, derive_seed(d.seed, 1), d.train_in)?,
                    synth_in_distribution(spec, derive_seed(d.seed, 2), d.val_in)?,
                    synth_in_distribution(spec, derive_seed(d.seed, 3), d.eval_in)?,
                )
            }
        };
        let dims = train.dims();
        let (val_ood, eval_ood) = match &d.import_ood {
            Some(path) => split_imported_ood(&load_dataset(path)?, d, dims)?,
            None => (
                ood_set(d, dims, d.val_ood, 4)?,
                ood_set(d, dims, d.eval_ood, 5)?,
            ),
        };
        let mut mixed = mix(&eval, &[&eval_ood], derive_seed(d.seed, 6))?;
        mixed.manifest_mut().name = "eval-mixed".into();
        let sets = [train, val, val_ood, eval, eval_ood, mixed];
        for (name, mut set) in DATA_SETS.into_iter().zip(sets) {
            set.manifest_mut().name = name.to_string();
            save_dataset(&set, dir.join(name))?;
            let (i, o) = set.count_by_distribution();
            self.note(format!("  {name}: {i} IN, {o} OUT"));
        }
        Ok(())
    }

    fn train_ae(&self, dir: &Path) -> CliResult<()> {
        let train = self.dataset("train-in")?;
        let cfg = &self.config.autoencoder;
        self.note(format!(
            "  {} images, {} epochs",
            train.len(),
            cfg.train.epochs
        ));
        let (model, history) = train_autoencoder(&train, cfg)?;
        model.save(dir.join(MODEL_FILE))?;
        history.save_csv(dir.join("history.csv"))?;
        let ssim = &self.config.ssim;
        let eval_in = self.dataset("eval-in")?;
        let eval_ood = self.dataset("eval-ood")?;
        let in_scores = tier1_scores(&model, &eval_in.images().collect::<Vec<_>>(), ssim)?;
        let ood_scores = tier1_scores(&model, &eval_ood.images().collect::<Vec<_>>(), ssim)?;
        let scores: Vec<f64> = in_scores.iter().chain(&ood_scores).copied().collect();
        let labels: Vec<bool> = (0..scores.len()).map(|i| i < in_scores.len()).collect();
        let curve = roc(&scores, &labels)?;
        let report = AutoencoderReport {
            epochs: history.len(),
            initial_val_loss: history.initial_val_loss,
            final_train_loss: history.last().map(|r| r.train_loss),
            final_val_loss: history.last().and_then(|r| r.val_loss),
            heldout_in_mean_score: mean(&in_scores),
            heldout_ood_mean_score: mean(&ood_scores),
            heldout_auc: curve.auc,
        };
        self.note(format!("  held-out tier-1 AUC {:.4}", report.heldout_auc));
        write_json(&dir.join("report.json"), &report)?;
        curve.save_csv(dir.join("heldout_roc.csv"))?;
        Ok(())
    }

    fn calibrate(&self, dir: &Path) -> CliResult<()> {
        let model = self.model(Stage::TrainAe)?;
        let report = calibrate(
            &model,
            &self.dataset("val-in")?,
            &self.dataset("val-ood")?,
            &self.config.calibration,
            &self.config.ssim,
        )?;
        self.note(format!(
            "  interval [{}, {}], chosen tau {}{}",
            report.interval.0,
            report.interval.1,
            report.chosen_tau,
            if report.overridden { " (override)" } else { "" }
        ));
        write_json(&dir.join("report.json"), &report)?;
        report.roc.save_csv(dir.join("roc.csv"))?;
        let mut sweep = String::from("tau,tpr,fpr,youden\n");
        for p in &report.sweep {
            sweep.push_str(&format!("{},{},{},{}\n", p.tau, p.tpr, p.fpr, p.youden()));
        }
        write_text(&dir.join("sweep.csv"), &sweep)
    }

    fn gen_boundary(&self, dir: &Path) -> CliResult<()> {
        let model = self.model(Stage::TrainAe)?;
        let pool = self.dataset("train-in")?;
        let n = self.config.dataset.generated;
        self.note(format!("  generating {n} samples"));
        let (mut set, summary) =
            batch_generate(&model, &pool, &self.config.generator, &self.config.ssim, n)?;
        set.manifest_mut().name = "boundary".into();
        save_dataset(&set, dir.join("samples"))?;
        self.note(format!(
            "  {} attempts, {} failures, mean score {:.4}",
            summary.attempts, summary.failures, summary.mean_achieved
        ));
        write_json(&dir.join("summary.json"), &summary)?;
        let shown: Vec<Image> = set.images().take(36).cloned().collect();
        let sheet = netpbm::contact_sheet(&shown, 6, 1.0)?;
        netpbm::write(&sheet, dir.join("gallery.pgm"))?;
        Ok(())
    }

    fn train_binary(&self, dir: &Path) -> CliResult<()> {
        let train = self.dataset("train-in")?;
        let generated = load_dataset(self.stage_dir(Stage::GenBoundary).join("samples"))?;
        let cfg = &self.config.binary;
        let (model, history) = train_binary(&train, &generated, cfg)?;
        model.save(dir.join(MODEL_FILE))?;
        history.save_csv(dir.join("history.csv"))?;
        let holdout = binary_holdout(&model, &train, &generated, cfg)?;
        self.note(format!(
            "  held-out accuracy {:.4}, AUC {:.4}",
            holdout.accuracy, holdout.auc
        ));
        holdout.roc.save_csv(dir.join("roc.csv"))?;
        write_json(&dir.join("report.json"), &holdout)
    }

    fn train_core(&self, dir: &Path) -> CliResult<()> {
        let train = self.dataset("train-in")?;
        let (model, history) = train_core(&train, &self.config.core)?;
        model.save(dir.join(MODEL_FILE))?;
        history.save_csv(dir.join("history.csv"))?;
        let eval = self.dataset("eval-in")?;
        let probs = classify_many(&model, &eval.images().collect::<Vec<_>>())?;
        let correct = probs
            .iter()
            .zip(eval.samples())
            .filter(|(p, s)| Some(argmax(p)) == s.class_label)
            .count();
        let report = CoreReport {
            classes: train.manifest().classes,
            final_val_accuracy: history.last().and_then(|r| r.val_acc),
            eval_in_samples: eval.len(),
            eval_in_accuracy: correct as f64 / eval.len() as f64,
        };
        self.note(format!("  eval IN accuracy {:.4}", report.eval_in_accuracy));
        write_json(&dir.join("report.json"), &report)
    }

    fn optional_model(&self, enabled: bool, stage: Stage) -> CliResult<Option<Model>> {
        if enabled {
            self.model(stage).map(Some)
        } else {
            Ok(None)
        }
    }

    fn evaluate(&self, dir: &Path) -> CliResult<()> {
        let config = pipeline_config(&self.config, &self.out)?;
        let ae = self.optional_model(config.tier1, Stage::TrainAe)?;
        let bin = self.optional_model(config.tier2, Stage::TrainBinary)?;
        let core = self.model(Stage::TrainCore)?;
        let mixed = self.dataset("eval-mixed")?;
        self.note(format!(
            "  tau {}, tier-2 threshold {}, {} samples",
            config.tau,
            config.tier2_threshold,
            mixed.len()
        ));
        let pipeline = Pipeline::new(config, ae.as_ref(), bin.as_ref(), &core)?;
        let (report, verdicts) = evaluate_detailed(&pipeline, &mixed)?;
        let cmp = compare_report(&report.unguarded, &report.guarded, &report.baseline)?;
        for row in &cmp.rows {
            self.note(format!(
                "  {:<10} AUC {:.4}  end-to-end accuracy {:.4}",
                row.curve, row.auc, row.end_to_end
            ));
        }
        write_json(&dir.join("report.json"), &report)?;
        write_json(&dir.join("comparison.json"), &cmp)?;
        let mut csv = Vec::new();
        write_combined_roc(
            &[&report.unguarded, &report.guarded, &report.baseline],
            &mut csv,
        )
        .expect("writing to memory");
        write_bytes(&dir.join("comparison_roc.csv"), &csv)?;
        write_text(&dir.join("verdicts.csv"), &verdict_table(&mixed, &verdicts))?;
        for (name, sheet) in
            rejection_galleries(&mixed, &verdicts, self.config.pipeline.gallery_limit)?
        {
            netpbm::write(&sheet, dir.join(format!("{name}.pgm")))?;
        }
        if let Some(ae) = &ae {
            let n = self.config.pipeline.triptychs;
            for (tag, want) in [("in", Distribution::In), ("out", Distribution::Out)] {
                let picked = mixed
                    .samples()
                    .iter()
                    .filter(|s| s.distribution == want)
                    .take(n);
                for (i, s) in picked.enumerate() {
                    let t = triptych(ae, &s.image, &self.config.ssim)?;
                    netpbm::write(&t, dir.join(format!("triptych-{tag}-{i:03}.pgm")))?;
                }
            }
        }
        Ok(())
    }
}

/// Pipeline settings for an output directory. The tier-1 threshold is the
/// configured override, else the calibrated one; with tier 1 disabled and no
/// calibration it falls back to the reference value.
pub fn pipeline_config(config: &ExperimentConfig, out: &Path) -> CliResult<PipelineConfig> {
    let tau = match config.calibration.tau {
        Some(t) => t,
        None => {
            let path = out.join(Stage::Calibrate.dir()).join("report.json");
            if !path.exists() {
                if config.pipeline.tier1 {
                    return Err(CliError::MissingStage {
                        stage: Stage::Calibrate.name(),
                        path,
                    });
                }
                REFERENCE_TAU
            } else {
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| CliError::BadInput(format!("{}: {e}", path.display())))?;
                serde_json::from_str::<CalibrationReport>(&text)
                    .map_err(|e| CliError::BadInput(format!("{}: {e}", path.display())))?
                    .calibrated_tau
            }
        }
    };
    Ok(PipelineConfig {
        tau,
        tier2_threshold: config.tier2_threshold(),
        tier1: config.pipeline.tier1,
        tier2: config.pipeline.tier2,
        ssim: config.ssim,
    })
}

#[derive(Debug, Serialize)]
struct AutoencoderReport {
    epochs: usize,
    initial_val_loss: Option<f64>,
    final_train_loss: Option<f64>,
    final_val_loss: Option<f64>,
    heldout_in_mean_score: f64,
    heldout_ood_mean_score: f64,
    heldout_auc: f64,
}

#[derive(Debug, Serialize)]
struct CoreReport {
    classes: usize,
    final_val_accuracy: Option<f64>,
    eval_in_samples: usize,
    eval_in_accuracy: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn verdict_table(set: &Dataset, verdicts: &[watchdog_core::pipeline::Verdict]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut s = String::from("index,distribution,class,outcome,predicted,tier1_score,tier2_p_in\n");
    for (i, (sample, v)) in set.samples().iter().zip(verdicts).enumerate() {
        let (outcome, predicted) = match &v.outcome {
            Outcome::RejectedTier1 => ("REJECTED_TIER1", String::new()),
            Outcome::RejectedTier2 => ("REJECTED_TIER2", String::new()),
            Outcome::Classified { class, .. } => ("CLASSIFIED", class.to_string()),
        };
        s.push_str(&format!(
            "{i},{},{},{outcome},{predicted},{},{}\n",
            sample.distribution,
            sample
                .class_label
                .map(|c| c.to_string())
                .unwrap_or_default(),
            opt(v.tier1_score),
            opt(v.tier2_p_in)
        ));
    }
    s
}

/// Shuffles an imported labelled IN directory and cuts train/val/eval.
fn split_imported_in(
    pool: &Dataset,
    d: &crate::config::DatasetSection,
) -> CliResult<(Dataset, Dataset, Dataset)> {
    if pool
        .samples()
        .iter()
        .any(|s| s.distribution != Distribution::In || s.class_label.is_none())
    {
        return Err(CliError::BadInput(
            "import_in must contain only labelled in-distribution images".into(),
        ));
    }
    let parts = take_parts(
        pool,
        &[d.train_in, d.val_in, d.eval_in],
        derive_seed(d.seed, 10),
    )?;
    let mut it = parts.into_iter();
    Ok((it.next().unwrap(), it.next().unwrap(), it.next().unwrap()))
}

fn split_imported_ood(
    pool: &Dataset,
    d: &crate::config::DatasetSection,
    dims: (usize, usize, usize),
) -> CliResult<(Dataset, Dataset)> {
    if pool.dims() != dims {
        return Err(CliError::BadInput(format!(
            "import_ood images are {:?}, IN images are {dims:?}",
            pool.dims()
        )));
    }
    if pool
        .samples()
        .iter()
        .any(|s| s.distribution != Distribution::Out)
    {
        return Err(CliError::BadInput(
            "import_ood must contain only out-of-distribution images".into(),
        ));
    }
    let parts = take_parts(pool, &[d.val_ood, d.eval_ood], derive_seed(d.seed, 11))?;
    let mut it = parts.into_iter();
    Ok((it.next().unwrap(), it.next().unwrap()))
}

fn take_parts(pool: &Dataset, sizes: &[usize], seed: u64) -> CliResult<Vec<Dataset>> {
    let need: usize = sizes.iter().sum();
    if pool.len() < need {
        return Err(CliError::BadInput(format!(
            "{} has {} images, the config needs {need}",
            pool.manifest().name,
            pool.len()
        )));
    }
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    rng::shuffle(&mut idx, &mut rng::rng_from_seed(seed));
    let mut start = 0;
    Ok(sizes
        .iter()
        .map(|&n| {
            let samples = idx[start..start + n]
                .iter()
                .map(|&i| pool.samples()[i].clone())
                .collect();
            start += n;
            let mut manifest = pool.manifest().clone();
            manifest.seed = seed;
            Dataset::new(manifest, samples)
        })
        .collect())
}

/// `n` OOD images split evenly over the configured kinds.
fn ood_set(
    d: &crate::config::DatasetSection,
    dims: (usize, usize, usize),
    n: usize,
    set_index: u64,
) -> CliResult<Dataset> {
    let k = d.ood_kinds.len();
    let mut parts = Vec::with_capacity(k);
    for (i, &kind) in d.ood_kinds.iter().enumerate() {
        let count = n / k + usize::from(i < n % k);
        if count > 0 {
            let seed = derive_seed(derive_seed(d.seed, set_index), i as u64);
            parts.push(synth_ood(kind, seed, count, dims)?);
        }
    }
    let (first, rest) = parts.split_first().expect("n >= 1");
    let rest: Vec<&Dataset> = rest.iter().collect();
    Ok(mix(first, &rest, derive_seed(d.seed, set_index + 100))?)
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes") + "\n";
    write_text(path, &text)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    write_bytes(path, text.as_bytes())
}

fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let fail = |source| CliError::OutputDir {
        path: path.to_path_buf(),
        source,
    };
    let mut f = File::create(path).map_err(fail)?;
    f.write_all(bytes).map_err(fail)
}
