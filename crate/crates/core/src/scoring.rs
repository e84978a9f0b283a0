//! Per-dimension scores from run records.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::RunRecord;
use crate::scale::{OptionKind, Scale};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoringError {
    #[error("response value {0} outside 1..=5")]
    OutOfRange(i64),
    #[error("run {run_id} does not belong to scale {scale_id}: {reason}")]
    ScaleMismatch {
        run_id: String,
        scale_id: String,
        reason: String,
    },
    #[error("no valid scores for dimension {0}")]
    EmptyInput(String),
}

/// What to do with dimensions that have unanswered items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    /// Scale the answered mean up to the full item count, provided at least
    /// `min_fraction` of the items were answered.
    Prorate,
    /// Sum what was answered, treating missing items as contributing nothing.
    SumAnswered,
    /// Any missing item removes the dimension score.
    Exclude,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceDivisor {
    Sample,
    Population,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringPolicy {
    #[serde(default = "default_missing")]
    pub missing: MissingPolicy,
    #[serde(default = "default_min_fraction")]
    pub min_fraction: f64,
    #[serde(default = "default_variance")]
    pub variance: VarianceDivisor,
}

fn default_missing() -> MissingPolicy {
    MissingPolicy::Prorate
}

fn default_min_fraction() -> f64 {
    0.8
}

fn default_variance() -> VarianceDivisor {
    VarianceDivisor::Sample
}

impl Default for ScoringPolicy {
    fn default() -> Self {
        Self {
            missing: default_missing(),
            min_fraction: default_min_fraction(),
            variance: default_variance(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionScore {
    pub run_id: String,
    pub dimension_id: String,
    /// Absent when the missing-data policy rejects the dimension.
    pub score: Option<f64>,
    pub answered_items: usize,
    pub total_items: usize,
    pub prorated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunScore {
    pub run_id: String,
    pub scale_id: String,
    pub dimensions: Vec<DimensionScore>,
    pub valid: bool,
}

impl RunScore {
    pub fn dimension(&self, id: &str) -> Option<&DimensionScore> {
        self.dimensions.iter().find(|d| d.dimension_id == id)
    }

    pub fn score(&self, id: &str) -> Option<f64> {
        self.dimension(id).and_then(|d| d.score)
    }
}

pub fn apply_reverse_key(value: i64, reverse: bool) -> Result<i64, ScoringError> {
    if !(1..=5).contains(&value) {
        return Err(ScoringError::OutOfRange(value));
    }
    Ok(if reverse { 6 - value } else { value })
}

fn check_scale(run: &RunRecord, scale: &Scale, kind: OptionKind) -> Result<(), ScoringError> {
    let mismatch = |reason: String| ScoringError::ScaleMismatch {
        run_id: run.run_id.clone(),
        scale_id: scale.id.clone(),
        reason,
    };
    if run.scale_id != scale.id {
        return Err(mismatch(format!("run was administered {}", run.scale_id)));
    }
    if scale.kind() != kind {
        return Err(mismatch(format!("scale is {}", scale.kind())));
    }
    for r in &run.responses {
        if scale.item(r.item_index).is_none() {
            return Err(mismatch(format!("unknown item {}", r.item_index)));
        }
    }
    Ok(())
}

fn finish(
    run: &RunRecord,
    dimension_id: &str,
    total: usize,
    answered: usize,
    sum: f64,
    policy: &ScoringPolicy,
) -> DimensionScore {
    let complete = answered == total;
    let (score, prorated) = if complete {
        (Some(sum), false)
    } else {
        match policy.missing {
            MissingPolicy::Prorate => {
                if answered > 0 && answered as f64 / total as f64 >= policy.min_fraction {
                    (Some(sum / answered as f64 * total as f64), true)
                } else {
                    (None, false)
                }
            }
            MissingPolicy::SumAnswered => (Some(sum), false),
            MissingPolicy::Exclude => (None, false),
        }
    };
    DimensionScore {
        run_id: run.run_id.clone(),
        dimension_id: dimension_id.to_string(),
        score,
        answered_items: answered,
        total_items: total,
        prorated,
    }
}

fn assemble(run: &RunRecord, scale: &Scale, dimensions: Vec<DimensionScore>) -> RunScore {
    let valid = run.valid && dimensions.iter().all(|d| d.score.is_some());
    RunScore {
        run_id: run.run_id.clone(),
        scale_id: scale.id.clone(),
        dimensions,
        valid,
    }
}

/// Reverse-keyed Likert sums per dimension.
pub fn score_likert_run(
    run: &RunRecord,
    scale: &Scale,
    policy: &ScoringPolicy,
) -> Result<RunScore, ScoringError> {
    check_scale(run, scale, OptionKind::Likert)?;
    let mut dims = Vec::with_capacity(scale.dimensions.len());
    for dim in &scale.dimensions {
        let mut total = 0;
        let mut answered = 0;
        let mut sum = 0.0;
        for item in scale.items_in(&dim.id) {
            total += 1;
            let Some(label) = run.response(item.index).and_then(|a| a.label.as_deref()) else {
                continue;
            };
            let value = scale.option_set.ordinal(label).ok_or_else(|| ScoringError::ScaleMismatch {
                run_id: run.run_id.clone(),
                scale_id: scale.id.clone(),
                reason: format!("label {label:?} is not in the option set"),
            })?;
            sum += apply_reverse_key(value as i64, item.is_reverse())? as f64;
            answered += 1;
        }
        dims.push(finish(run, &dim.id, total, answered, sum, policy));
    }
    Ok(assemble(run, scale, dims))
}

/// Counts of answers matching each item's pole key, per dimension.
pub fn score_forced_run(
    run: &RunRecord,
    scale: &Scale,
    policy: &ScoringPolicy,
) -> Result<RunScore, ScoringError> {
    check_scale(run, scale, OptionKind::ForcedChoice)?;
    let mut dims = Vec::with_capacity(scale.dimensions.len());
    for dim in &scale.dimensions {
        let mut total = 0;
        let mut answered = 0;
        let mut hits = 0.0;
        for item in scale.items_in(&dim.id) {
            total += 1;
            let Some(label) = run.response(item.index).and_then(|a| a.label.as_deref()) else {
                continue;
            };
            answered += 1;
            if item.pole_key.as_deref() == Some(label) {
                hits += 1.0;
            }
        }
        dims.push(finish(run, &dim.id, total, answered, hits, policy));
    }
    Ok(assemble(run, scale, dims))
}

pub fn score_run(run: &RunRecord, scale: &Scale, policy: &ScoringPolicy) -> Result<RunScore, ScoringError> {
    match scale.kind() {
        OptionKind::Likert => score_likert_run(run, scale, policy),
        OptionKind::ForcedChoice => score_forced_run(run, scale, policy),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub variance: f64,
    pub n: usize,
    /// Set when n = 1 and the variance is reported as 0 by convention.
    pub single: bool,
}

impl Aggregate {
    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn from_values(values: &[f64], divisor: VarianceDivisor) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        let variance = match (n, divisor) {
            (1, _) => 0.0,
            (_, VarianceDivisor::Sample) => ss / (n - 1) as f64,
            (_, VarianceDivisor::Population) => ss / n as f64,
        };
        Some(Self {
            mean,
            variance,
            n,
            single: n == 1,
        })
    }
}

/// Mean and variance of one dimension over valid runs that carry a score.
pub fn aggregate_runs(
    scores: &[RunScore],
    dimension_id: &str,
    divisor: VarianceDivisor,
) -> Result<Aggregate, ScoringError> {
    let values: Vec<f64> = scores
        .iter()
        .filter(|s| s.valid)
        .filter_map(|s| s.score(dimension_id))
        .collect();
    Aggregate::from_values(&values, divisor).ok_or_else(|| ScoringError::EmptyInput(dimension_id.to_string()))
}
