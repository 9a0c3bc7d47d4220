//! Drop metrics and compute accounting.

use serde::{Deserialize, Serialize};

use super::SweepError;
use crate::model::ModelConfig;

/// Baseline minus reduced, both in accuracy points. Negative when the
/// reduced run is better.
pub fn performance_drop(baseline: f64, reduced: f64) -> f64 {
    baseline - reduced
}

/// One measured point of a (model, strategy) curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub tokens: usize,
    /// Drop against the baseline, in points.
    pub drop: f64,
}

/// Smallest measured token length whose drop is within `threshold`. The
/// longest length (the baseline) is returned when nothing qualifies.
pub fn min_tokens_within_drop(curve: &[CurvePoint], threshold: f64) -> Result<usize, SweepError> {
    let longest = curve.iter().map(|p| p.tokens).max().ok_or_else(|| SweepError::Grid("empty curve".into()))?;
    Ok(curve.iter().filter(|p| p.drop <= threshold).map(|p| p.tokens).min().unwrap_or(longest))
}

/// One stage of a training schedule for compute accounting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleStage {
    pub samples: u64,
    pub img_tokens: usize,
    pub txt_tokens: usize,
}

impl ScheduleStage {
    pub fn new(samples: u64, img_tokens: usize, txt_tokens: usize) -> Self {
        Self { samples, img_tokens, txt_tokens }
    }
}

/// Total training compute, `sum(samples * per-sample GFLOPs)`, in units of
/// 1e12 GFLOPs.
pub fn compute_cost(cfg: &ModelConfig, schedule: &[ScheduleStage]) -> f64 {
    schedule
        .iter()
        .map(|s| s.samples as f64 * cfg.flops_estimate(s.img_tokens, s.txt_tokens))
        .sum::<f64>()
        / 1e12
}

/// How many times cheaper schedule `b` is than schedule `a` in FLOPs. A proxy
/// for wall-clock speedup, not a measurement of it.
pub fn speedup_ratio(a: (&ModelConfig, &[ScheduleStage]), b: (&ModelConfig, &[ScheduleStage])) -> f64 {
    compute_cost(a.0, a.1) / compute_cost(b.0, b.1)
}
