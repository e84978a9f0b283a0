//! Plan files and the end-to-end study runner.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    assign_groups, compare_models, crossvariant_human, llm_distribution, retest_human, roleplay_human,
    with_variant_deltas, RolePlayReport, Scored, StudyError,
};
use crate::gateway::{
    sanitize, Administrator, BatteryRequest, FileLog, LogSink, RecordedDataset, RecordedRespondent, RefusalLexicon,
    Respondent, RespondentKind, RespondentSpec, RunPolicy, RunRecord, RunRequest, ScriptedRespondent, Wave,
};
use crate::report::{Analysis, Store, StoreError, TableKind};
use crate::role::{RoleId, RoleSpec};
use crate::scale::{load_scale, Scale};
use crate::scoring::{score_run, RunScore, ScoringPolicy};
use crate::stats::IccConfig;
use crate::variant::{render_scale, RenderedScale, VariantId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Retest,
    CrossVariant,
    RolePlay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleEntry {
    /// Scale definition file, relative to the plan file.
    pub path: String,
    /// Forms to administer; every applicable form when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variants: Option<Vec<VariantId>>,
}

/// A respondent given by file or inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RespondentEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<RespondentSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FocalDimension {
    pub scale_id: String,
    pub dimension: String,
}

/// Recorded human answers and how to read them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanPlan {
    /// CSV of answers, relative to the plan file.
    pub dataset: String,
    /// Wave used for cross-variant and recruitment grouping.
    #[serde(default = "first_wave")]
    pub wave: Wave,
    /// Dimension whose pole count splits subjects into introvert and
    /// extrovert groups (role play only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grouping: Option<FocalDimension>,
}

fn first_wave() -> Wave {
    Wave::T1
}

fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyPlan {
    pub id: String,
    pub study: StudyKind,
    pub scales: Vec<ScaleEntry>,
    #[serde(default)]
    pub respondents: Vec<RespondentEntry>,
    /// Runs per respondent, scale form and condition.
    #[serde(default)]
    pub n_runs: usize,
    /// Overrides each respondent's own decoding seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_seed: Option<u64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub roles: Vec<RoleId>,
    /// Texts for custom roles.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub role_specs: Vec<RoleSpec>,
    #[serde(default)]
    pub focal: Vec<FocalDimension>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human: Option<HumanPlan>,
    /// Refusal phrase list, one per line, relative to the plan file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refusal_lexicon: Option<String>,
    #[serde(default)]
    pub policy: RunPolicy,
    #[serde(default)]
    pub scoring: ScoringPolicy,
    #[serde(default)]
    pub icc: IccConfig,
}

impl StudyPlan {
    pub fn from_toml(text: &str) -> Result<Self, StudyError> {
        let plan: StudyPlan = toml::from_str(text).map_err(|e| StudyError::Plan(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, StudyError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), StudyError> {
        let bad = |m: &str| Err(StudyError::Plan(m.to_string()));
        if self.id.trim().is_empty() {
            return bad("id is empty");
        }
        if self.scales.is_empty() {
            return bad("no scales");
        }
        if self.respondents.is_empty() && self.human.is_none() {
            return bad("no respondents and no human dataset");
        }
        if !self.respondents.is_empty() && self.n_runs == 0 {
            return bad("n_runs must be at least 1");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        for r in &self.respondents {
            if r.path.is_some() == r.spec.is_some() {
                return bad("each respondent needs exactly one of path or spec");
            }
        }
        if self.study == StudyKind::RolePlay {
            if self.roles.is_empty() {
                return bad("role play needs at least one role besides the baseline");
            }
            if self.focal.is_empty() {
                return bad("role play needs a focal dimension");
            }
            if let Some(h) = &self.human {
                if h.grouping.is_none() {
                    return bad("human role play needs a grouping dimension");
                }
            }
        }
        for role in &self.roles {
            self.role_spec(role)?;
        }
        self.policy.validate()?;
        Ok(())
    }

    fn role_spec(&self, role: &RoleId) -> Result<RoleSpec, StudyError> {
        if let Some(s) = self.role_specs.iter().find(|s| &s.role_id == role) {
            return Ok(s.clone());
        }
        RoleSpec::built_in(role).ok_or_else(|| StudyError::Plan(format!("custom role {role} has no role_specs entry")))
    }
}

/// Builds live respondents from specs.
pub trait RespondentFactory {
    fn build(&self, spec: &RespondentSpec) -> Result<Box<dyn Respondent>, StudyError>;
}

/// Handles scripted respondents only.
#[derive(Debug, Default, Clone, Copy)]
pub struct DefaultFactory;

impl RespondentFactory for DefaultFactory {
    fn build(&self, spec: &RespondentSpec) -> Result<Box<dyn Respondent>, StudyError> {
        spec.validate()?;
        match spec.kind {
            RespondentKind::Scripted => Ok(Box::new(ScriptedRespondent::new(
                spec.model_name.clone(),
                spec.script.clone().unwrap_or_default(),
            ))),
            other => Err(StudyError::Plan(format!(
                "{other:?} respondents need a factory that supports them"
            ))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StudyOutcome {
    pub plan_id: String,
    pub battery_ids: Vec<String>,
    pub analysis_ids: Vec<String>,
    pub tables: Vec<PathBuf>,
    pub density_series: Vec<PathBuf>,
    /// Dropped subjects, skipped curves and similar.
    pub notes: Vec<String>,
}

struct Context<'a> {
    plan: &'a StudyPlan,
    scales: Vec<Scale>,
    rendered: Vec<RenderedScale>,
    store: &'a Store,
    lexicon: RefusalLexicon,
}

impl Context<'_> {
    fn scale(&self, id: &str) -> Result<&Scale, StudyError> {
        self.scales
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| StudyError::UnknownScale(id.to_string()))
    }

    fn administrator(&self, battery: &str) -> Result<(Administrator, Arc<FileLog>), StudyError> {
        let log = Arc::new(FileLog::open(self.store.raw_log_path(battery))?);
        let admin = Administrator::new(self.plan.policy.clone())
            .with_lexicon(self.lexicon.clone())
            .with_log(log.clone() as Arc<dyn LogSink>);
        Ok((admin, log))
    }

    fn score(&self, records: Vec<RunRecord>) -> Result<(Vec<RunScore>, Vec<Scored>), StudyError> {
        let mut scores = Vec::with_capacity(records.len());
        let mut scored = Vec::with_capacity(records.len());
        for record in records {
            let score = score_run(&record, self.scale(&record.scale_id)?, &self.plan.scoring)?;
            scores.push(score.clone());
            scored.push(Scored { record, score });
        }
        Ok((scores, scored))
    }
}

/// Administers, scores and persists every battery in the plan, then runs
/// the plan's analyses and writes their tables. Relative paths in the plan
/// resolve against `plan_dir`.
pub fn run_study(
    plan: &StudyPlan,
    plan_dir: &Path,
    store: &Store,
    factory: &dyn RespondentFactory,
) -> Result<StudyOutcome, StudyError> {
    plan.validate()?;
    let mut scales = Vec::new();
    let mut rendered = Vec::new();
    for entry in &plan.scales {
        let scale = load_scale(plan_dir.join(&entry.path))?;
        let variants = entry.variants.clone().unwrap_or_else(|| VariantId::for_kind(scale.kind()));
        for v in variants {
            rendered.push(render_scale(&scale, v)?);
        }
        scales.push(scale);
    }
    for f in plan.focal.iter().chain(plan.human.as_ref().and_then(|h| h.grouping.as_ref())) {
        let scale = scales
            .iter()
            .find(|s| s.id == f.scale_id)
            .ok_or_else(|| StudyError::UnknownScale(f.scale_id.clone()))?;
        if scale.dimension(&f.dimension).is_none() {
            return Err(StudyError::Plan(format!("{} has no dimension {}", f.scale_id, f.dimension)));
        }
    }
    let lexicon = match &plan.refusal_lexicon {
        Some(p) => RefusalLexicon::load(plan_dir.join(p))?,
        None => RefusalLexicon::default(),
    };
    let ctx = Context {
        plan,
        scales,
        rendered,
        store,
        lexicon,
    };
    let mut outcome = StudyOutcome {
        plan_id: plan.id.clone(),
        ..StudyOutcome::default()
    };

    let conditions: Vec<Option<RoleSpec>> = match plan.study {
        StudyKind::RolePlay => std::iter::once(Ok(None))
            .chain(plan.roles.iter().map(|r| plan.role_spec(r).map(Some)))
            .collect::<Result<_, _>>()?,
        _ => vec![None],
    };

    let mut model_runs: Vec<Scored> = Vec::new();
    let mut model_names: Vec<String> = Vec::new();
    for entry in &plan.respondents {
        let spec = match (&entry.path, &entry.spec) {
            (Some(p), _) => RespondentSpec::from_toml(&std::fs::read_to_string(plan_dir.join(p))?)?,
            (None, Some(s)) => s.clone(),
            (None, None) => unreachable!("validated"),
        };
        let respondent = factory.build(&spec)?;
        let name = respondent.identity();
        if model_names.contains(&name) {
            return Err(StudyError::Plan(format!("respondent {name} listed twice")));
        }
        model_names.push(name.clone());
        for cond in &conditions {
            let mut battery = format!("{}.{}", plan.id, sanitize(&name));
            if let Some(r) = cond {
                battery.push('.');
                battery.push_str(r.role_id.as_str());
            }
            let (admin, log) = ctx.administrator(&battery)?;
            let mut req = BatteryRequest::for_spec(&battery, &spec, plan.n_runs);
            req.base_seed = plan.base_seed.or(req.base_seed);
            req.role = cond.as_ref();
            let records = admin.administer_battery(&ctx.rendered, respondent.as_ref(), &req)?;
            log.close()?;
            let (scores, scored) = ctx.score(records.clone())?;
            let id = store.persist_battery(&battery, &records, &scores, std::slice::from_ref(&spec))?;
            outcome.battery_ids.push(id);
            model_runs.extend(scored);
        }
    }

    let human_runs = match &plan.human {
        Some(h) => {
            let (id, runs) = administer_humans(&ctx, h, plan_dir)?;
            outcome.battery_ids.push(id);
            runs
        }
        None => Vec::new(),
    };

    let sources = outcome.battery_ids.clone();
    let mut analyses: Vec<(String, Analysis, Vec<TableKind>)> = Vec::new();
    match plan.study {
        StudyKind::Retest => {
            if !human_runs.is_empty() {
                let t = retest_human(&human_runs, &ctx.scales)?;
                analyses.push((format!("{}.retest", plan.id), Analysis::Retest(t), vec![TableKind::RetestPearson]));
            }
            if !model_runs.is_empty() {
                let t = llm_distribution(&model_runs, &ctx.scales, plan.scoring.variance)?;
                analyses.push((
                    format!("{}.distribution", plan.id),
                    Analysis::Distribution(t),
                    vec![TableKind::LlmDistribution],
                ));
            }
        }
        StudyKind::CrossVariant => {
            if !human_runs.is_empty() {
                let wave = plan.human.as_ref().map(|h| h.wave).unwrap_or(Wave::T1);
                let t = crossvariant_human(&human_runs, &ctx.scales, wave, &plan.icc)?;
                for row in &t.rows {
                    if !row.dropped.is_empty() {
                        outcome.notes.push(format!(
                            "{} {}: dropped incomplete subjects {}",
                            row.scale_id,
                            row.dimension,
                            row.dropped.join(", ")
                        ));
                    }
                }
                analyses.push((format!("{}.icc", plan.id), Analysis::Icc(t), vec![TableKind::Icc]));
            }
            if !model_runs.is_empty() {
                let mut t = llm_distribution(&model_runs, &ctx.scales, plan.scoring.variance)?;
                with_variant_deltas(&mut t);
                analyses.push((
                    format!("{}.distribution", plan.id),
                    Analysis::Distribution(t),
                    vec![TableKind::LlmDistribution],
                ));
            }
        }
        StudyKind::RolePlay => {
            let mut report = RolePlayReport::default();
            let mut kinds = Vec::new();
            if let Some(h) = &plan.human {
                let g = h.grouping.as_ref().expect("validated");
                let recruitment: Vec<_> = human_runs
                    .iter()
                    .filter(|s| {
                        let r = &s.record;
                        r.scale_id == g.scale_id
                            && r.variant == VariantId::Original
                            && r.role.is_none()
                            && r.wave == Some(h.wave)
                    })
                    .filter_map(|s| s.score.dimension(&g.dimension).map(|d| (s.record.respondent.clone(), d.clone())))
                    .collect();
                let groups = assign_groups(&recruitment);
                report.human = Some(roleplay_human(&human_runs, &groups, &plan.focal, &plan.roles, plan.alpha)?);
                kinds.push(TableKind::Ttest);
            }
            if model_names.len() >= 2 {
                report.models = compare_models(&model_runs, &model_names, &plan.focal, &plan.roles, plan.alpha)?;
                kinds.push(TableKind::Roleplay);
            } else if !model_names.is_empty() {
                outcome.notes.push("one model only: no model comparison".into());
            }
            analyses.push((format!("{}.roleplay", plan.id), Analysis::RolePlay(report), kinds));
            if !model_runs.is_empty() {
                let t = llm_distribution(&model_runs, &ctx.scales, plan.scoring.variance)?;
                analyses.push((
                    format!("{}.distribution", plan.id),
                    Analysis::Distribution(t),
                    vec![TableKind::LlmDistribution],
                ));
            }
        }
    }

    for (id, analysis, kinds) in analyses {
        let id = store.save_analysis(&id, &analysis, &sources)?;
        for kind in kinds {
            for (_, path) in store.emit_tables(&id, kind)? {
                outcome.tables.push(path);
            }
        }
        if let Analysis::Distribution(t) = &analysis {
            for c in &t.cells {
                match store.emit_density_series(&id, &c.respondent, &c.scale_id, c.variant, c.role.as_ref(), &c.dimension) {
                    Ok(p) => outcome.density_series.push(p),
                    Err(StoreError::DegenerateVariance(why)) => outcome.notes.push(format!(
                        "no density curve for {} {} {} {}: {why}",
                        c.respondent, c.scale_id, c.variant, c.dimension
                    )),
                    Err(e) => return Err(e.into()),
                }
            }
        }
        outcome.analysis_ids.push(id);
    }
    Ok(outcome)
}

/// Replays every recorded session through the gateway as one battery.
fn administer_humans(ctx: &Context<'_>, h: &HumanPlan, plan_dir: &Path) -> Result<(String, Vec<Scored>), StudyError> {
    let dataset = Arc::new(
        RecordedDataset::load_csv(plan_dir.join(&h.dataset)).map_err(|e| StudyError::Plan(format!("{}: {e}", h.dataset)))?,
    );
    let battery = format!("{}.human", ctx.plan.id);
    let (admin, log) = ctx.administrator(&battery)?;
    let mut role_specs: BTreeMap<String, RoleSpec> = BTreeMap::new();
    let mut records = Vec::new();
    for (participant, wave, scale_id, variant, role) in dataset.sessions() {
        let rendered = ctx
            .rendered
            .iter()
            .find(|r| &r.scale_id == scale_id && r.variant == *variant)
            .ok_or_else(|| StudyError::UnknownScale(format!("{scale_id} {variant}")))?;
        let spec = if role.is_empty() {
            None
        } else {
            if !role_specs.contains_key(role) {
                let id: RoleId = role.parse().map_err(StudyError::Plan)?;
                role_specs.insert(role.clone(), ctx.plan.role_spec(&id)?);
            }
            role_specs.get(role)
        };
        let mut run_id = format!(
            "{}.{}.{}.{variant}",
            sanitize(&battery),
            sanitize(participant),
            sanitize(scale_id)
        );
        if !role.is_empty() {
            run_id.push('.');
            run_id.push_str(&sanitize(role));
        }
        run_id.push_str(&format!(".{wave}"));
        let respondent = RecordedRespondent::new(dataset.clone(), participant.clone(), *wave);
        let req = RunRequest {
            run_id,
            run_index: 0,
            respondent_kind: RespondentKind::RecordedHuman,
            seed: None,
            role: spec,
            wave: Some(*wave),
        };
        records.push(admin.administer_run(rendered, &respondent, &req)?);
    }
    log.close()?;
    let (scores, scored) = ctx.score(records.clone())?;
    let id = ctx.store.persist_battery(&battery, &records, &scores, &[])?;
    Ok((id, scored))
}
