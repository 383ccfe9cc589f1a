//! The guarded classifier: SSIM gate, then binary gate, then the core
//! classifier, with guarded/unguarded/baseline evaluation.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::autoencoder::{tier1_score, REFERENCE_TAU};
use crate::classifier::{argmax, binary_score, classify};
use crate::data::{netpbm, Dataset, Distribution, Image};
use crate::error::{Error, Result};
use crate::metrics::{
    accuracy_report, fmt_threshold, normalized_multiclass_roc, AccuracyReport, Decision, DualLabel,
    RocCurve, SsimParams,
};
use crate::nn::Model;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Tier-1 threshold on reconstruction SSIM.
    pub tau: f64,
    /// Tier-2 threshold on `p_in`.
    pub tier2_threshold: f64,
    pub tier1: bool,
    pub tier2: bool,
    pub ssim: SsimParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            tau: REFERENCE_TAU,
            tier2_threshold: 0.5,
            tier1: true,
            tier2: true,
            ssim: SsimParams::default(),
        }
    }
}

impl PipelineConfig {
    pub fn unguarded(&self) -> Self {
        PipelineConfig {
            tier1: false,
            tier2: false,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    RejectedTier1,
    RejectedTier2,
    Classified {
        class: usize,
        probabilities: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    #[serde(flatten)]
    pub outcome: Outcome,
    /// Present exactly when tier 1 ran.
    pub tier1_score: Option<f64>,
    /// Present exactly when tier 2 ran.
    pub tier2_p_in: Option<f64>,
}

impl Verdict {
    pub fn accepted(&self) -> bool {
        matches!(self.outcome, Outcome::Classified { .. })
    }

    pub fn decision(&self) -> Decision {
        match &self.outcome {
            Outcome::Classified { class, .. } => Decision {
                accepted: true,
                predicted: Some(*class),
            },
            _ => Decision {
                accepted: false,
                predicted: None,
            },
        }
    }
}

/// How often each stage has been evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageEvaluations {
    pub tier1: usize,
    pub tier2: usize,
    pub core: usize,
}

#[derive(Debug, Default)]
struct Counters {
    tier1: AtomicUsize,
    tier2: AtomicUsize,
    core: AtomicUsize,
}

/// Configured cascade. Networks are borrowed; counters are per instance.
#[derive(Debug)]
pub struct Pipeline<'a> {
    config: PipelineConfig,
    autoencoder: Option<&'a Model>,
    binary: Option<&'a Model>,
    core: &'a Model,
    counters: Counters,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        config: PipelineConfig,
        autoencoder: Option<&'a Model>,
        binary: Option<&'a Model>,
        core: &'a Model,
    ) -> Result<Self> {
        if config.tier1 && autoencoder.is_none() {
            return Err(Error::Config(
                "tier 1 enabled without an autoencoder".into(),
            ));
        }
        if config.tier2 && binary.is_none() {
            return Err(Error::Config(
                "tier 2 enabled without a binary classifier".into(),
            ));
        }
        if !(0.0..=1.0).contains(&config.tier2_threshold) {
            return Err(Error::Config(format!(
                "tier2_threshold {} must lie in [0, 1]",
                config.tier2_threshold
            )));
        }
        if config.tau.is_nan() {
            return Err(Error::Config("tau is NaN".into()));
        }
        config.ssim.validate()?;
        Ok(Pipeline {
            config,
            autoencoder,
            binary,
            core,
            counters: Counters::default(),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    /// Same networks under another configuration, with fresh counters.
    pub fn with_config(&self, config: PipelineConfig) -> Result<Pipeline<'a>> {
        Pipeline::new(config, self.autoencoder, self.binary, self.core)
    }

    pub fn evaluations(&self) -> StageEvaluations {
        StageEvaluations {
            tier1: self.counters.tier1.load(Ordering::Relaxed),
            tier2: self.counters.tier2.load(Ordering::Relaxed),
            core: self.counters.core.load(Ordering::Relaxed),
        }
    }

    /// Runs the enabled tiers in order, stopping at the first rejection.
    pub fn guard(&self, image: &Image) -> Result<Verdict> {
        let mut verdict = Verdict {
            outcome: Outcome::RejectedTier1,
            tier1_score: None,
            tier2_p_in: None,
        };
        if self.config.tier1 {
            let ae = self.autoencoder.expect("checked in new");
            self.counters.tier1.fetch_add(1, Ordering::Relaxed);
            let s = tier1_score(ae, image, &self.config.ssim)?;
            verdict.tier1_score = Some(s);
            if s < self.config.tau {
                return Ok(verdict);
            }
        }
        if self.config.tier2 {
            let bin = self.binary.expect("checked in new");
            self.counters.tier2.fetch_add(1, Ordering::Relaxed);
            let p = binary_score(bin, image)?;
            verdict.tier2_p_in = Some(p);
            if p < self.config.tier2_threshold {
                verdict.outcome = Outcome::RejectedTier2;
                return Ok(verdict);
            }
        }
        self.counters.core.fetch_add(1, Ordering::Relaxed);
        let probabilities = classify(self.core, image)?;
        verdict.outcome = Outcome::Classified {
            class: argmax(&probabilities),
            probabilities,
        };
        Ok(verdict)
    }

    pub fn guard_all(&self, set: &Dataset) -> Result<Vec<Verdict>> {
        set.images().map(|img| self.guard(img)).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCount {
    #[serde(rename = "IN")]
    pub in_dist: usize,
    #[serde(rename = "OUT")]
    pub out_dist: usize,
}

impl SplitCount {
    fn add(&mut self, d: Distribution) {
        match d {
            Distribution::In => self.in_dist += 1,
            Distribution::Out => self.out_dist += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.in_dist + self.out_dist
    }
}

/// Where samples ended up, split by their true distribution label.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub rejected_tier1: SplitCount,
    pub rejected_tier2: SplitCount,
    pub classified: SplitCount,
}

impl OutcomeCounts {
    pub fn total(&self) -> usize {
        self.rejected_tier1.total() + self.rejected_tier2.total() + self.classified.total()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    /// `unguarded`, `guarded` or `baseline`.
    pub mode: String,
    /// Identity hash of the full evaluation set (also for the IN-only baseline).
    pub dataset_hash: String,
    pub samples: usize,
    pub tier1: bool,
    pub tier2: bool,
    pub counts: OutcomeCounts,
    pub accuracy: AccuracyReport,
    pub evaluations: StageEvaluations,
    pub auc: f64,
    pub roc: RocCurve,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub dataset_hash: String,
    pub config: PipelineConfig,
    pub unguarded: ModeReport,
    pub guarded: ModeReport,
    pub baseline: ModeReport,
}

fn mode_report(
    mode: &str,
    pipeline: &Pipeline,
    set: &Dataset,
    hash: &str,
) -> Result<(ModeReport, Vec<Verdict>)> {
    let verdicts = pipeline.guard_all(set)?;
    let mut counts = OutcomeCounts::default();
    let k = set.manifest().classes;
    let mut rows = Vec::with_capacity(set.len());
    for (v, s) in verdicts.iter().zip(set.samples()) {
        match &v.outcome {
            Outcome::RejectedTier1 => counts.rejected_tier1.add(s.distribution),
            Outcome::RejectedTier2 => counts.rejected_tier2.add(s.distribution),
            Outcome::Classified { .. } => counts.classified.add(s.distribution),
        }
        rows.push(match &v.outcome {
            Outcome::Classified { probabilities, .. } => probabilities.clone(),
            _ => vec![0.0; k],
        });
    }
    let truth: Vec<Option<usize>> = set
        .samples()
        .iter()
        .map(|s| match s.distribution {
            Distribution::In => s.class_label,
            Distribution::Out => None,
        })
        .collect();
    let accepted: Vec<bool> = verdicts.iter().map(Verdict::accepted).collect();
    let roc = normalized_multiclass_roc(&rows, &truth, &accepted)?;
    let decisions: Vec<Decision> = verdicts.iter().map(Verdict::decision).collect();
    let labels: Vec<DualLabel> = set
        .samples()
        .iter()
        .map(|s| DualLabel {
            class: s.class_label,
            distribution: s.distribution,
        })
        .collect();
    let report = ModeReport {
        mode: mode.to_string(),
        dataset_hash: hash.to_string(),
        samples: set.len(),
        tier1: pipeline.config.tier1,
        tier2: pipeline.config.tier2,
        counts,
        accuracy: accuracy_report(&decisions, &labels)?,
        evaluations: pipeline.evaluations(),
        auc: roc.auc,
        roc,
    };
    Ok((report, verdicts))
}

/// Evaluation with the guarded per-sample verdicts.
pub fn evaluate_detailed(
    pipeline: &Pipeline,
    mixed: &Dataset,
) -> Result<(EvaluationReport, Vec<Verdict>)> {
    if mixed.is_empty() {
        return Err(Error::Dataset("evaluation set is empty".into()));
    }
    let hash = mixed.identity_hash();
    let open = pipeline.with_config(pipeline.config.unguarded())?;
    let (unguarded, _) = mode_report("unguarded", &open, mixed, &hash)?;
    let guarded_pipeline = pipeline.with_config(pipeline.config.clone())?;
    let (guarded, verdicts) = mode_report("guarded", &guarded_pipeline, mixed, &hash)?;
    let in_only = mixed.filter("in-only", |s| s.distribution == Distribution::In);
    if in_only.is_empty() {
        return Err(Error::Dataset(
            "evaluation set has no in-distribution samples".into(),
        ));
    }
    let ideal = pipeline.with_config(pipeline.config.unguarded())?;
    let (baseline, _) = mode_report("baseline", &ideal, &in_only, &hash)?;
    Ok((
        EvaluationReport {
            dataset_hash: hash,
            config: pipeline.config.clone(),
            unguarded,
            guarded,
            baseline,
        },
        verdicts,
    ))
}

/// Unguarded (tiers off), guarded (as configured) and IN-only baseline runs.
pub fn evaluate(pipeline: &Pipeline, mixed: &Dataset) -> Result<EvaluationReport> {
    evaluate_detailed(pipeline, mixed).map(|(r, _)| r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub curve: String,
    pub samples: usize,
    pub auc: f64,
    pub end_to_end: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub dataset_hash: String,
    pub rows: Vec<ComparisonRow>,
    pub guarded_minus_unguarded_auc: f64,
    pub baseline_minus_guarded_auc: f64,
    pub baseline_minus_unguarded_auc: f64,
    pub guarded_minus_unguarded_accuracy: f64,
}

/// Summary table and AUC deltas; all three reports must come from the same
/// evaluation set.
pub fn compare_report(
    unguarded: &ModeReport,
    guarded: &ModeReport,
    baseline: &ModeReport,
) -> Result<Comparison> {
    for r in [guarded, baseline] {
        if r.dataset_hash != unguarded.dataset_hash {
            return Err(Error::ReportMismatch(format!(
                "{} report was computed on dataset {} but unguarded on {}",
                r.mode, r.dataset_hash, unguarded.dataset_hash
            )));
        }
    }
    let row = |r: &ModeReport| ComparisonRow {
        curve: r.mode.clone(),
        samples: r.samples,
        auc: r.auc,
        end_to_end: r.accuracy.end_to_end,
    };
    Ok(Comparison {
        dataset_hash: unguarded.dataset_hash.clone(),
        rows: vec![row(unguarded), row(guarded), row(baseline)],
        guarded_minus_unguarded_auc: guarded.auc - unguarded.auc,
        baseline_minus_guarded_auc: baseline.auc - guarded.auc,
        baseline_minus_unguarded_auc: baseline.auc - unguarded.auc,
        guarded_minus_unguarded_accuracy: guarded.accuracy.end_to_end
            - unguarded.accuracy.end_to_end,
    })
}

/// `curve,threshold,fpr,tpr` rows for every report's ROC.
pub fn write_combined_roc(reports: &[&ModeReport], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "curve,threshold,fpr,tpr")?;
    for r in reports {
        for p in &r.roc.points {
            writeln!(
                out,
                "{},{},{},{}",
                r.mode,
                fmt_threshold(p.threshold),
                p.fpr,
                p.tpr
            )?;
        }
    }
    Ok(())
}

/// Contact sheets of the samples each tier rejected, at most `limit` each.
/// Tiers that rejected nothing are omitted.
pub fn rejection_galleries(
    set: &Dataset,
    verdicts: &[Verdict],
    limit: usize,
) -> Result<Vec<(String, Image)>> {
    if set.len() != verdicts.len() {
        return Err(Error::Shape(format!(
            "{} samples but {} verdicts",
            set.len(),
            verdicts.len()
        )));
    }
    let mut out = Vec::new();
    for (name, want) in [
        ("tier1-rejected", Outcome::RejectedTier1),
        ("tier2-rejected", Outcome::RejectedTier2),
    ] {
        let picked: Vec<Image> = set
            .samples()
            .iter()
            .zip(verdicts)
            .filter(|(_, v)| v.outcome == want)
            .take(limit)
            .map(|(s, _)| s.image.clone())
            .collect();
        if !picked.is_empty() {
            let columns = (picked.len() as f64).sqrt().ceil() as usize;
            out.push((
                name.to_string(),
                netpbm::contact_sheet(&picked, columns, 1.0)?,
            ));
        }
    }
    Ok(out)
}
