//! Image similarity and classification metrics.

mod report;
mod roc;
mod ssim;

pub use report::{
    accuracy_report, normalized_multiclass_roc, AccuracyReport, Decision, DualLabel, GatingRates,
};
pub(crate) use roc::fmt_threshold;
pub use roc::{roc, RocCurve, RocPoint};
pub use ssim::{rmse, ssim, ssim_map, ssim_with_grad, Aggregation, SsimForm, SsimMap, SsimParams};
