//! Retest stability: T1/T2 correlations for humans, run distributions for
//! models.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Scored, StudyError};
use crate::gateway::Wave;
use crate::role::RoleId;
use crate::scale::Scale;
use crate::scoring::{Aggregate, VarianceDivisor};
use crate::stats::{normal_density_curve, pearson, StatResult, StatsError};
use crate::variant::VariantId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PearsonCell {
    pub scale_id: String,
    pub variant: VariantId,
    pub dimension: String,
    pub n_subjects: usize,
    pub result: StatResult,
    pub run_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetestTable {
    pub cells: Vec<PearsonCell>,
}

fn find_scale<'a>(scales: &'a [Scale], id: &str) -> Result<&'a Scale, StudyError> {
    scales
        .iter()
        .find(|s| s.id == id)
        .ok_or_else(|| StudyError::UnknownScale(id.to_string()))
}

/// Pearson r between T1 and T2 scores per scale, variant and dimension.
/// Pairs are joined on subject id; a subject seen in only one wave is an
/// error. Role-play administrations are ignored.
pub fn retest_human(scored: &[Scored], scales: &[Scale]) -> Result<RetestTable, StudyError> {
    type Key = (String, VariantId);
    let mut by_form: BTreeMap<Key, BTreeMap<String, [Option<&Scored>; 2]>> = BTreeMap::new();
    for s in scored.iter().filter(|s| s.record.role.is_none()) {
        let Some(wave) = s.record.wave else { continue };
        let slot = by_form
            .entry((s.record.scale_id.clone(), s.record.variant))
            .or_default()
            .entry(s.record.respondent.clone())
            .or_default();
        slot[wave as usize] = Some(s);
    }
    let mut cells = Vec::new();
    for ((scale_id, variant), subjects) in &by_form {
        let scale = find_scale(scales, scale_id)?;
        for (subject, waves) in subjects {
            for (i, w) in waves.iter().enumerate() {
                if w.is_none() {
                    return Err(StudyError::MissingWave {
                        subject: subject.clone(),
                        wave: if i == 0 { Wave::T1 } else { Wave::T2 }.to_string(),
                        scale_id: scale_id.clone(),
                    });
                }
            }
        }
        for dim in &scale.dimensions {
            let mut x = Vec::new();
            let mut y = Vec::new();
            let mut run_ids = Vec::new();
            for [t1, t2] in subjects.values() {
                let (t1, t2) = (t1.unwrap(), t2.unwrap());
                if let (Some(a), Some(b)) = (t1.value(&dim.id), t2.value(&dim.id)) {
                    x.push(a);
                    y.push(b);
                    run_ids.push(t1.record.run_id.clone());
                    run_ids.push(t2.record.run_id.clone());
                }
            }
            let result = pearson(&x, &y)?;
            cells.push(PearsonCell {
                scale_id: scale_id.clone(),
                variant: *variant,
                dimension: dim.id.clone(),
                n_subjects: x.len(),
                result,
                run_ids,
            });
        }
    }
    Ok(RetestTable { cells })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistCell {
    pub respondent: String,
    pub scale_id: String,
    pub variant: VariantId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<RoleId>,
    pub dimension: String,
    pub aggregate: Aggregate,
    /// Mean minus the original form's mean for the same respondent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_mean: Option<f64>,
    /// Variance over the original form's variance; absent when that is 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance_ratio: Option<f64>,
    pub run_ids: Vec<String>,
}

impl DistCell {
    pub fn density(&self, n_points: usize) -> Result<Vec<(f64, f64)>, StatsError> {
        normal_density_curve(self.aggregate.mean, self.aggregate.sd(), n_points)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionTable {
    pub divisor: VarianceDivisor,
    pub cells: Vec<DistCell>,
}

impl DistributionTable {
    pub fn cell(&self, respondent: &str, scale_id: &str, variant: VariantId, dimension: &str) -> Option<&DistCell> {
        self.cells.iter().find(|c| {
            c.respondent == respondent && c.scale_id == scale_id && c.variant == variant && c.dimension == dimension
        })
    }
}

/// Mean and variance per respondent, scale, variant, role and dimension
/// over valid runs. Keeps first-seen order of respondents.
pub fn llm_distribution(
    scored: &[Scored],
    scales: &[Scale],
    divisor: VarianceDivisor,
) -> Result<DistributionTable, StudyError> {
    type Key = (String, String, VariantId, Option<RoleId>);
    let mut order: Vec<Key> = Vec::new();
    let mut groups: BTreeMap<Key, Vec<&Scored>> = BTreeMap::new();
    for s in scored {
        let r = &s.record;
        let key = (r.respondent.clone(), r.scale_id.clone(), r.variant, r.role.clone());
        let entry = groups.entry(key.clone()).or_default();
        if entry.is_empty() {
            order.push(key);
        }
        entry.push(s);
    }
    let mut cells = Vec::new();
    for key in order {
        let runs = &groups[&key];
        let (respondent, scale_id, variant, role) = key;
        let scale = find_scale(scales, &scale_id)?;
        for dim in &scale.dimensions {
            let mut values = Vec::new();
            let mut run_ids = Vec::new();
            for s in runs {
                if let Some(v) = s.value(&dim.id) {
                    values.push(v);
                    run_ids.push(s.record.run_id.clone());
                }
            }
            let aggregate = Aggregate::from_values(&values, divisor).ok_or_else(|| StudyError::InsufficientRuns {
                respondent: respondent.clone(),
                scale_id: scale_id.clone(),
                variant: variant.to_string(),
                dimension: dim.id.clone(),
            })?;
            cells.push(DistCell {
                respondent: respondent.clone(),
                scale_id: scale_id.clone(),
                variant,
                role: role.clone(),
                dimension: dim.id.clone(),
                aggregate,
                delta_mean: None,
                variance_ratio: None,
                run_ids,
            });
        }
    }
    Ok(DistributionTable { divisor, cells })
}
