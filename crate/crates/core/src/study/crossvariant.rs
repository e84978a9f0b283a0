//! Cross-variant consistency: ICC across forms for humans, mean and
//! variance shifts against the original form for models.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::retest::DistributionTable;
use super::{Scored, StudyError};
use crate::gateway::Wave;
use crate::scale::Scale;
use crate::stats::{icc_all, IccConfig, RatingMatrix, StatResult};
use crate::variant::VariantId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IccRow {
    pub scale_id: String,
    pub dimension: String,
    pub conditions: Vec<VariantId>,
    pub n_subjects: usize,
    /// Subjects left out because a form was missing or unscored.
    pub dropped: Vec<String>,
    pub single: StatResult,
    pub average: StatResult,
    pub run_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IccTable {
    pub config: IccConfig,
    pub rows: Vec<IccRow>,
}

/// ICC per scale and dimension over subjects × forms. Uses baseline
/// administrations from `wave` (records without a wave also count).
pub fn crossvariant_human(
    scored: &[Scored],
    scales: &[Scale],
    wave: Wave,
    config: &IccConfig,
) -> Result<IccTable, StudyError> {
    let mut rows = Vec::new();
    for scale in scales {
        let conditions = VariantId::for_kind(scale.kind());
        let mut by_subject: BTreeMap<&str, BTreeMap<VariantId, &Scored>> = BTreeMap::new();
        for s in scored {
            let r = &s.record;
            if r.scale_id != scale.id || r.role.is_some() || r.wave.is_some_and(|w| w != wave) {
                continue;
            }
            by_subject.entry(&r.respondent).or_default().insert(r.variant, s);
        }
        if by_subject.is_empty() {
            continue;
        }
        for dim in &scale.dimensions {
            let mut ids = Vec::new();
            let mut values = Vec::new();
            let mut dropped = Vec::new();
            let mut run_ids = Vec::new();
            for (subject, forms) in &by_subject {
                let row: Option<Vec<f64>> = conditions
                    .iter()
                    .map(|v| forms.get(v).and_then(|s| s.value(&dim.id)))
                    .collect();
                match row {
                    Some(row) => {
                        ids.push(subject.to_string());
                        values.push(row);
                        run_ids.extend(conditions.iter().map(|v| forms[v].record.run_id.clone()));
                    }
                    None => dropped.push(subject.to_string()),
                }
            }
            let matrix = RatingMatrix::new(ids, conditions.iter().map(|v| v.to_string()).collect(), values)?;
            let (single, average) = icc_all(&matrix, config)?;
            rows.push(IccRow {
                scale_id: scale.id.clone(),
                dimension: dim.id.clone(),
                conditions: conditions.clone(),
                n_subjects: matrix.n(),
                dropped,
                single,
                average,
                run_ids,
            });
        }
    }
    Ok(IccTable { config: *config, rows })
}

/// Fills `delta_mean` and `variance_ratio` against the original form of the
/// same respondent, scale, role and dimension.
pub fn with_variant_deltas(table: &mut DistributionTable) {
    let originals: BTreeMap<_, (f64, f64)> = table
        .cells
        .iter()
        .filter(|c| c.variant == VariantId::Original)
        .map(|c| {
            (
                (c.respondent.clone(), c.scale_id.clone(), c.role.clone(), c.dimension.clone()),
                (c.aggregate.mean, c.aggregate.variance),
            )
        })
        .collect();
    for c in &mut table.cells {
        let key = (c.respondent.clone(), c.scale_id.clone(), c.role.clone(), c.dimension.clone());
        if let Some(&(mean, var)) = originals.get(&key) {
            c.delta_mean = Some(c.aggregate.mean - mean);
            c.variance_ratio = (var > 0.0).then(|| c.aggregate.variance / var);
        }
    }
}
