//! The experiment config file (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use watchdog_core::autoencoder::{AutoencoderConfig, ThresholdConfig};
use watchdog_core::boundary::GeneratorConfig;
use watchdog_core::classifier::{BinaryClassifierConfig, CoreClassifierConfig};
use watchdog_core::data::{OodKind, SyntheticSpec};
use watchdog_core::metrics::SsimParams;
use watchdog_core::rng::derive_seed;

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub seed: u64,
    /// In-distribution training images (autoencoder, core, generator seeds).
    pub train_in: usize,
    /// Calibration sets for the tier-1 threshold.
    pub val_in: usize,
    pub val_ood: usize,
    /// Evaluation sets; mixed together for the guarded/unguarded comparison.
    pub eval_in: usize,
    pub eval_ood: usize,
    /// Boundary samples to generate for tier-2 training.
    pub generated: usize,
    /// OOD families, split evenly across every OOD set.
    pub ood_kinds: Vec<OodKind>,
    pub synthetic: SyntheticSpec,
    /// Labelled image directory replacing the synthetic IN data.
    pub import_in: Option<PathBuf>,
    /// Image directory replacing the synthetic OOD data.
    pub import_ood: Option<PathBuf>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            seed: 7,
            train_in: 4000,
            val_in: 500,
            val_ood: 500,
            eval_in: 1000,
            eval_ood: 2000,
            generated: 1500,
            ood_kinds: vec![
                OodKind::TextureNoise,
                OodKind::AlienGlyphs,
                OodKind::Blended,
            ],
            synthetic: SyntheticSpec::default(),
            import_in: None,
            import_ood: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub tier1: bool,
    pub tier2: bool,
    /// Defaults to the binary classifier's own threshold.
    pub tier2_threshold: Option<f64>,
    /// Rejected images shown per tier gallery.
    pub gallery_limit: usize,
    /// Reconstruction triptychs written per distribution.
    pub triptychs: usize,
}

impl Default for PipelineSection {
    fn default() -> Self {
        PipelineSection {
            tier1: true,
            tier2: true,
            tier2_threshold: None,
            gallery_limit: 36,
            triptychs: 6,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Output directory; `--out` takes precedence.
    pub out: Option<PathBuf>,
    pub dataset: DatasetSection,
    pub ssim: SsimParams,
    pub autoencoder: AutoencoderConfig,
    pub calibration: ThresholdConfig,
    pub generator: GeneratorConfig,
    pub binary: BinaryClassifierConfig,
    pub core: CoreClassifierConfig,
    pub pipeline: PipelineSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let de = toml::Deserializer::new(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            let message = e.into_inner().message().trim().to_string();
            if key == "." {
                CliError::Config(message)
            } else {
                CliError::ConfigKey { key, message }
            }
        })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::ConfigRead {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        // relative import paths are relative to the config file
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.dataset.import_in, &mut cfg.dataset.import_ood]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Replaces every seed with one derived from `seed`.
    pub fn reseed(&mut self, seed: u64) {
        self.dataset.seed = seed;
        self.autoencoder.train.seed = derive_seed(seed, 1);
        self.generator.seed = derive_seed(seed, 2);
        self.binary.train.seed = derive_seed(seed, 3);
        self.core.train.seed = derive_seed(seed, 4);
    }

    pub fn validate(&self) -> CliResult<()> {
        let key = |key: &str, e: watchdog_core::Error| CliError::ConfigKey {
            key: key.to_string(),
            message: e.to_string(),
        };
        let d = &self.dataset;
        for (name, n) in [
            ("train_in", d.train_in),
            ("val_in", d.val_in),
            ("val_ood", d.val_ood),
            ("eval_in", d.eval_in),
            ("eval_ood", d.eval_ood),
            ("generated", d.generated),
        ] {
            if n == 0 {
                return Err(CliError::ConfigKey {
                    key: format!("dataset.{name}"),
                    message: "must be at least 1".into(),
                });
            }
        }
        if d.ood_kinds.is_empty() && d.import_ood.is_none() {
            return Err(CliError::ConfigKey {
                key: "dataset.ood_kinds".into(),
                message: "needs at least one kind when no import_ood is given".into(),
            });
        }
        for (name, p) in [("import_in", &d.import_in), ("import_ood", &d.import_ood)] {
            if let Some(p) = p {
                if !p.is_dir() {
                    return Err(CliError::ConfigKey {
                        key: format!("dataset.{name}"),
                        message: format!("{} is not a directory", p.display()),
                    });
                }
            }
        }
        if d.import_in.is_none() {
            d.synthetic
                .validate()
                .map_err(|e| key("dataset.synthetic", e))?;
        }
        self.ssim.validate().map_err(|e| key("ssim", e))?;
        self.autoencoder
            .validate()
            .map_err(|e| key("autoencoder", e))?;
        self.calibration
            .validate()
            .map_err(|e| key("calibration", e))?;
        self.generator.validate().map_err(|e| key("generator", e))?;
        self.binary.validate().map_err(|e| key("binary", e))?;
        self.core.validate().map_err(|e| key("core", e))?;
        if let Some(t) = self.pipeline.tier2_threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(CliError::ConfigKey {
                    key: "pipeline.tier2_threshold".into(),
                    message: format!("{t} must lie in [0, 1]"),
                });
            }
        }
        Ok(())
    }

    pub fn tier2_threshold(&self) -> f64 {
        self.pipeline
            .tier2_threshold
            .unwrap_or(self.binary.threshold)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(json))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
