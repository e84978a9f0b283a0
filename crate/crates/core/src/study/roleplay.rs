//! Role-play: group comparisons under each role, deviation amplitudes from
//! baseline, and model-versus-model comparisons.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::plan::FocalDimension;
use super::{Scored, StudyError};
use crate::role::RoleId;
use crate::scoring::DimensionScore;
use crate::stats::{cohen_d, t_test_independent, GroupSummary, TTest, TTestRule};
use crate::variant::VariantId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Introvert,
    Extrovert,
    ExcludedTie,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAssignment {
    pub subject_id: String,
    pub group: Group,
    /// Extraversion-pole count at recruitment.
    pub score: Option<f64>,
}

/// Majority rule on the extraversion pole count: above half the items is
/// extrovert, below is introvert, exactly half (or unscored) is excluded.
pub fn assign_groups(scores: &[(String, DimensionScore)]) -> Vec<GroupAssignment> {
    scores
        .iter()
        .map(|(subject, d)| {
            let mid = d.total_items as f64 / 2.0;
            let group = match d.score {
                Some(s) if s > mid => Group::Extrovert,
                Some(s) if s < mid => Group::Introvert,
                _ => Group::ExcludedTie,
            };
            GroupAssignment {
                subject_id: subject.clone(),
                group,
                score: d.score,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviationKind {
    MinAmplitude,
    MaxAmplitude,
}

impl DeviationKind {
    pub const ALL: [DeviationKind; 2] = [DeviationKind::MinAmplitude, DeviationKind::MaxAmplitude];

    pub fn as_str(self) -> &'static str {
        match self {
            DeviationKind::MinAmplitude => "min_amplitude",
            DeviationKind::MaxAmplitude => "max_amplitude",
        }
    }
}

/// The role whose deviation from baseline defines `kind` for `group`: the
/// like-natured character for the minimum, the opposite extreme for the
/// maximum.
pub fn deviation_role(group: Group, kind: DeviationKind) -> Option<RoleId> {
    match (group, kind) {
        (Group::Introvert, DeviationKind::MinAmplitude) => Some(RoleId::LinDaiyu),
        (Group::Introvert, DeviationKind::MaxAmplitude) => Some(RoleId::VeryExtroverted),
        (Group::Extrovert, DeviationKind::MinAmplitude) => Some(RoleId::SunWukong),
        (Group::Extrovert, DeviationKind::MaxAmplitude) => Some(RoleId::VeryIntroverted),
        (Group::ExcludedTie, _) => None,
    }
}

pub fn deviation_kind(group: Group, role: &RoleId) -> Option<DeviationKind> {
    DeviationKind::ALL
        .into_iter()
        .find(|&k| deviation_role(group, k).as_ref() == Some(role))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationRecord {
    pub subject_id: String,
    pub group: Group,
    pub kind: DeviationKind,
    pub scale_id: String,
    pub variant: VariantId,
    /// Role score minus baseline score.
    pub value: f64,
    pub baseline_run: String,
    pub role_run: String,
}

/// Extrovert group (a) against introvert group (b); MD = a − b.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupComparison {
    pub scale_id: String,
    pub variant: VariantId,
    pub dimension: String,
    /// Role id or deviation kind.
    pub label: String,
    pub test: TTest,
    pub run_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolePlayHuman {
    pub assignments: Vec<GroupAssignment>,
    pub role_tests: Vec<GroupComparison>,
    pub deviations: Vec<DeviationRecord>,
    pub deviation_tests: Vec<GroupComparison>,
}

/// Model b against model a on one condition; MD and d are b − a.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    pub scale_id: String,
    pub variant: VariantId,
    pub dimension: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<RoleId>,
    pub model_a: String,
    pub model_b: String,
    pub a: GroupSummary,
    pub b: GroupSummary,
    pub total: GroupSummary,
    pub student: TTest,
    pub welch: TTest,
    pub md: f64,
    pub d: f64,
    pub run_ids: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RolePlayReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human: Option<RolePlayHuman>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub models: Vec<ModelComparison>,
}

type Cell<'a> = (f64, &'a str);

/// subject -> role (None for baseline) -> (score, run id), for one scale,
/// variant and dimension. Later duplicates do not replace earlier ones.
fn collect<'a>(
    scored: &'a [Scored],
    scale_id: &str,
    variant: VariantId,
    dimension: &str,
) -> BTreeMap<&'a str, BTreeMap<Option<RoleId>, Cell<'a>>> {
    let mut out: BTreeMap<&str, BTreeMap<Option<RoleId>, Cell>> = BTreeMap::new();
    for s in scored {
        let r = &s.record;
        if r.scale_id != scale_id || r.variant != variant {
            continue;
        }
        if let Some(v) = s.value(dimension) {
            out.entry(r.respondent.as_str())
                .or_default()
                .entry(r.role.clone())
                .or_insert((v, r.run_id.as_str()));
        }
    }
    out
}

fn variants_of(scored: &[Scored], scale_id: &str) -> Vec<VariantId> {
    let mut v: Vec<VariantId> = scored
        .iter()
        .filter(|s| s.record.scale_id == scale_id)
        .map(|s| s.record.variant)
        .collect();
    v.sort();
    v.dedup();
    v
}

fn compare(
    extro: &[Cell<'_>],
    intro: &[Cell<'_>],
    alpha: f64,
) -> Result<(TTest, Vec<String>), StudyError> {
    let a: Vec<f64> = extro.iter().map(|c| c.0).collect();
    let b: Vec<f64> = intro.iter().map(|c| c.0).collect();
    let test = t_test_independent(&a, &b, TTestRule::Auto, alpha)?;
    let ids = extro.iter().chain(intro).map(|c| c.1.to_string()).collect();
    Ok((test, ids))
}

/// Group comparisons under every role plus deviation amplitudes, for each
/// focal dimension and every form present.
pub fn roleplay_human(
    scored: &[Scored],
    assignments: &[GroupAssignment],
    focal: &[FocalDimension],
    roles: &[RoleId],
    alpha: f64,
) -> Result<RolePlayHuman, StudyError> {
    for kind in DeviationKind::ALL {
        for group in [Group::Introvert, Group::Extrovert] {
            let role = deviation_role(group, kind).expect("grouped");
            if !roles.contains(&role) {
                return Err(StudyError::MissingRole {
                    role,
                    subject: "plan".into(),
                });
            }
        }
    }
    let group_of: BTreeMap<&str, Group> = assignments
        .iter()
        .map(|a| (a.subject_id.as_str(), a.group))
        .collect();
    let mut role_tests = Vec::new();
    let mut deviations = Vec::new();
    let mut deviation_tests = Vec::new();
    for f in focal {
        for variant in variants_of(scored, &f.scale_id) {
            let data = collect(scored, &f.scale_id, variant, &f.dimension);
            let group_of = &group_of;
            let data = &data;
            let members = move |g: Group| {
                data.iter()
                    .filter(move |(s, _)| group_of.get(*s) == Some(&g))
                    .collect::<Vec<_>>()
            };
            for role in roles {
                let pick = |g| {
                    members(g)
                        .into_iter()
                        .filter_map(|(_, m)| m.get(&Some(role.clone())).copied())
                        .collect::<Vec<_>>()
                };
                let (test, run_ids) = compare(&pick(Group::Extrovert), &pick(Group::Introvert), alpha)?;
                role_tests.push(GroupComparison {
                    scale_id: f.scale_id.clone(),
                    variant,
                    dimension: f.dimension.clone(),
                    label: role.as_str().to_string(),
                    test,
                    run_ids,
                });
            }
            let mut by_kind: BTreeMap<(DeviationKind, Group), Vec<Cell>> = BTreeMap::new();
            for group in [Group::Introvert, Group::Extrovert] {
                for (subject, m) in members(group) {
                    let (base, base_run) = *m
                        .get(&None)
                        .ok_or_else(|| StudyError::MissingBaseline(subject.to_string()))?;
                    for kind in DeviationKind::ALL {
                        let role = deviation_role(group, kind).expect("grouped");
                        let (score, run) = *m.get(&Some(role.clone())).ok_or_else(|| StudyError::MissingRole {
                            role: role.clone(),
                            subject: subject.to_string(),
                        })?;
                        let value = score - base;
                        deviations.push(DeviationRecord {
                            subject_id: subject.to_string(),
                            group,
                            kind,
                            scale_id: f.scale_id.clone(),
                            variant,
                            value,
                            baseline_run: base_run.to_string(),
                            role_run: run.to_string(),
                        });
                        by_kind.entry((kind, group)).or_default().push((value, run));
                    }
                }
            }
            for kind in DeviationKind::ALL {
                let get = |g| by_kind.get(&(kind, g)).cloned().unwrap_or_default();
                let (test, run_ids) = compare(&get(Group::Extrovert), &get(Group::Introvert), alpha)?;
                deviation_tests.push(GroupComparison {
                    scale_id: f.scale_id.clone(),
                    variant,
                    dimension: f.dimension.clone(),
                    label: kind.as_str().to_string(),
                    test,
                    run_ids,
                });
            }
        }
    }
    Ok(RolePlayHuman {
        assignments: assignments.to_vec(),
        role_tests,
        deviations,
        deviation_tests,
    })
}

/// Pairwise comparisons between models, in roster order, for the baseline
/// and each role on every focal dimension and form.
pub fn compare_models(
    scored: &[Scored],
    models: &[String],
    focal: &[FocalDimension],
    roles: &[RoleId],
    alpha: f64,
) -> Result<Vec<ModelComparison>, StudyError> {
    let mut out = Vec::new();
    let conditions: Vec<Option<RoleId>> = std::iter::once(None).chain(roles.iter().cloned().map(Some)).collect();
    for f in focal {
        for variant in variants_of(scored, &f.scale_id) {
            for role in &conditions {
                let mut per_model: Vec<Vec<Cell>> = Vec::new();
                for m in models {
                    let runs: Vec<Cell> = scored
                        .iter()
                        .filter(|s| {
                            let r = &s.record;
                            &r.respondent == m && r.scale_id == f.scale_id && r.variant == variant && &r.role == role
                        })
                        .filter_map(|s| s.value(&f.dimension).map(|v| (v, s.record.run_id.as_str())))
                        .collect();
                    per_model.push(runs);
                }
                for i in 0..models.len() {
                    for j in i + 1..models.len() {
                        let (ca, cb) = (&per_model[i], &per_model[j]);
                        if ca.is_empty() && cb.is_empty() {
                            continue;
                        }
                        let a: Vec<f64> = ca.iter().map(|c| c.0).collect();
                        let b: Vec<f64> = cb.iter().map(|c| c.0).collect();
                        let student = t_test_independent(&b, &a, TTestRule::Student, alpha)?;
                        let welch = t_test_independent(&b, &a, TTestRule::Welch, alpha)?;
                        let d = cohen_d(&a, &b)?;
                        let all: Vec<f64> = a.iter().chain(&b).copied().collect();
                        out.push(ModelComparison {
                            scale_id: f.scale_id.clone(),
                            variant,
                            dimension: f.dimension.clone(),
                            role: role.clone(),
                            model_a: models[i].clone(),
                            model_b: models[j].clone(),
                            a: GroupSummary::of(&a),
                            b: GroupSummary::of(&b),
                            total: GroupSummary::of(&all),
                            md: student.md,
                            student,
                            welch,
                            d,
                            run_ids: ca.iter().chain(cb).map(|c| c.1.to_string()).collect(),
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}
