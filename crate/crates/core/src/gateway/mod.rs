//! Administers rendered scales to respondents, one item per isolated
//! exchange, and records every reply verbatim.

pub mod parse;
pub mod prompt;
pub mod rawlog;
pub mod recorded;
pub mod scripted;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Clock, SystemClock};
use crate::role::{RoleId, RoleSpec};
use crate::variant::{RenderedScale, VariantId};

pub use parse::{parse_response, AnswerStatus, ParsedAnswer, RefusalLexicon};
pub use prompt::{build_prompt, PromptEnvelope, ANSWER_DIRECTIVE};
pub use rawlog::{FileLog, LogSink, MemoryLog, NullLog, RawLogEntry};
pub use recorded::{RecordedDataset, RecordedRespondent, RecordedRow};
pub use scripted::{AnswerRule, ItemOverride, RefusalInjection, ScriptSpec, ScriptedRespondent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Wave {
    T1,
    T2,
}

impl fmt::Display for Wave {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Wave::T1 => "T1",
            Wave::T2 => "T2",
        })
    }
}

impl FromStr for Wave {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "T1" | "t1" => Ok(Wave::T1),
            "T2" | "t2" => Ok(Wave::T2),
            other => Err(format!("unknown wave {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RespondentKind {
    LlmEndpoint,
    Scripted,
    RecordedHuman,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    #[serde(default = "one")]
    pub temperature: f64,
    #[serde(default = "one")]
    pub top_p: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn one() -> f64 {
    1.0
}

fn default_max_tokens() -> u32 {
    16
}

impl Default for Decoding {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_p: 1.0,
            max_tokens: default_max_tokens(),
            seed: None,
        }
    }
}

/// Respondent configuration as read from a respondent file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RespondentSpec {
    pub kind: RespondentKind,
    pub model_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint_url: Option<String>,
    /// Name of the environment variable holding the API key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credentials_ref: Option<String>,
    #[serde(default)]
    pub decoding: Decoding,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<ScriptSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_ref: Option<String>,
}

impl RespondentSpec {
    pub fn scripted(name: impl Into<String>, script: ScriptSpec, seed: u64) -> Self {
        Self {
            kind: RespondentKind::Scripted,
            model_name: name.into(),
            endpoint_url: None,
            credentials_ref: None,
            decoding: Decoding {
                seed: Some(seed),
                ..Decoding::default()
            },
            script: Some(script),
            dataset_ref: None,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let missing = |what: &str| GatewayError::InvalidSpec(format!("{:?} respondent needs {what}", self.kind));
        match self.kind {
            RespondentKind::LlmEndpoint => {
                if self.endpoint_url.is_none() {
                    return Err(missing("endpoint_url"));
                }
                if self.credentials_ref.is_none() {
                    return Err(missing("credentials_ref"));
                }
            }
            RespondentKind::Scripted if self.script.is_none() => return Err(missing("script")),
            RespondentKind::RecordedHuman if self.dataset_ref.is_none() => {
                return Err(missing("dataset_ref"))
            }
            _ => {}
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, GatewayError> {
        let spec: Self = toml::from_str(text).map_err(|e| GatewayError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("respondent spec serializes")
    }
}

/// Everything a respondent sees for one exchange. Only `prompt` would be
/// sent to a real model; the rest drives simulated respondents.
#[derive(Debug, Clone, Copy)]
pub struct Exchange<'a> {
    pub prompt: &'a str,
    pub scale_id: &'a str,
    pub variant: VariantId,
    pub item_index: usize,
    pub dimension: &'a str,
    pub labels: &'a [String],
    pub attempt: u32,
    pub run_index: usize,
    pub seed: Option<u64>,
    pub role: Option<&'a RoleId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RespondError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("authentication failed: {0}")]
    Auth(String),
}

pub trait Respondent: Send + Sync {
    fn identity(&self) -> String;
    fn respond(&self, exchange: &Exchange<'_>) -> Result<String, RespondError>;
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid respondent spec: {0}")]
    InvalidSpec(String),
    #[error("invalid run policy: {0}")]
    InvalidPolicy(String),
    #[error("n_runs must be at least 1")]
    NoRuns,
    #[error("raw log write failed: {0}")]
    Log(#[from] std::io::Error),
    #[error("transport failure in run {run_id}: {message}")]
    Transport { run_id: String, message: String },
    #[error("authentication failure in run {run_id}: {message}")]
    Auth { run_id: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPolicy {
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_threshold")]
    pub validity_threshold: f64,
    #[serde(default = "yes")]
    pub inter_item_isolation: bool,
    /// Upper bound on runs executing at once.
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
}

fn default_retries() -> u32 {
    3
}

fn default_threshold() -> f64 {
    0.8
}

fn yes() -> bool {
    true
}

fn default_parallelism() -> usize {
    4
}

impl Default for RunPolicy {
    fn default() -> Self {
        Self {
            max_retries: default_retries(),
            validity_threshold: default_threshold(),
            inter_item_isolation: true,
            parallelism: default_parallelism(),
        }
    }
}

impl RunPolicy {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.validity_threshold > 0.0 && self.validity_threshold <= 1.0) {
            return Err(GatewayError::InvalidPolicy(format!(
                "validity_threshold {} outside (0, 1]",
                self.validity_threshold
            )));
        }
        if !self.inter_item_isolation {
            return Err(GatewayError::InvalidPolicy(
                "items must be administered in isolated exchanges".into(),
            ));
        }
        if self.parallelism == 0 {
            return Err(GatewayError::InvalidPolicy("parallelism must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemResponse {
    pub item_index: usize,
    #[serde(flatten)]
    pub answer: ParsedAnswer,
}

/// One complete administration of a rendered scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub respondent: String,
    pub respondent_kind: RespondentKind,
    pub scale_id: String,
    pub scale_version: String,
    pub variant: VariantId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<RoleId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wave: Option<Wave>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub timestamp: DateTime<Utc>,
    pub responses: Vec<ItemResponse>,
    pub completion_ratio: f64,
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort_reason: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusCounts {
    pub answered: usize,
    pub refusal: usize,
    pub invalid_option: usize,
    pub unparseable: usize,
    pub not_administered: usize,
}

impl StatusCounts {
    pub fn total(&self) -> usize {
        self.answered + self.refusal + self.invalid_option + self.unparseable + self.not_administered
    }
}

impl RunRecord {
    pub fn counts(&self) -> StatusCounts {
        let mut c = StatusCounts::default();
        for r in &self.responses {
            match r.answer.status {
                AnswerStatus::Answered => c.answered += 1,
                AnswerStatus::Refusal => c.refusal += 1,
                AnswerStatus::InvalidOption => c.invalid_option += 1,
                AnswerStatus::Unparseable => c.unparseable += 1,
                AnswerStatus::NotAdministered => c.not_administered += 1,
            }
        }
        c
    }

    pub fn response(&self, item_index: usize) -> Option<&ParsedAnswer> {
        self.responses
            .iter()
            .find(|r| r.item_index == item_index)
            .map(|r| &r.answer)
    }

    /// Builds a record from already-classified answers (used for human
    /// sessions), applying the same validity rule as live administration.
    pub fn from_answers(
        meta: RunMeta,
        responses: Vec<ItemResponse>,
        validity_threshold: f64,
    ) -> Self {
        let answered = responses.iter().filter(|r| r.answer.is_answered()).count();
        let completion_ratio = if responses.is_empty() {
            0.0
        } else {
            answered as f64 / responses.len() as f64
        };
        RunRecord {
            run_id: meta.run_id,
            respondent: meta.respondent,
            respondent_kind: meta.respondent_kind,
            scale_id: meta.scale_id,
            scale_version: meta.scale_version,
            variant: meta.variant,
            role: meta.role,
            wave: meta.wave,
            seed: meta.seed,
            timestamp: meta.timestamp,
            responses,
            completion_ratio,
            valid: completion_ratio >= validity_threshold,
            abort_reason: None,
        }
    }
}

/// Identity fields of a run.
#[derive(Debug, Clone)]
pub struct RunMeta {
    pub run_id: String,
    pub respondent: String,
    pub respondent_kind: RespondentKind,
    pub scale_id: String,
    pub scale_version: String,
    pub variant: VariantId,
    pub role: Option<RoleId>,
    pub wave: Option<Wave>,
    pub seed: Option<u64>,
    pub timestamp: DateTime<Utc>,
}

/// Shared settings for a set of runs.
pub struct Administrator {
    pub policy: RunPolicy,
    pub lexicon: RefusalLexicon,
    pub clock: Arc<dyn Clock>,
    pub log: Arc<dyn LogSink>,
}

impl Default for Administrator {
    fn default() -> Self {
        Self {
            policy: RunPolicy::default(),
            lexicon: RefusalLexicon::default(),
            clock: Arc::new(SystemClock),
            log: Arc::new(NullLog),
        }
    }
}

/// Per-run parameters.
#[derive(Debug, Clone)]
pub struct RunRequest<'a> {
    pub run_id: String,
    pub run_index: usize,
    pub respondent_kind: RespondentKind,
    pub seed: Option<u64>,
    pub role: Option<&'a RoleSpec>,
    pub wave: Option<Wave>,
}

/// Battery-level parameters.
#[derive(Debug, Clone)]
pub struct BatteryRequest<'a> {
    pub battery_id: String,
    pub n_runs: usize,
    pub respondent_kind: RespondentKind,
    pub base_seed: Option<u64>,
    pub role: Option<&'a RoleSpec>,
    pub wave: Option<Wave>,
}

impl<'a> BatteryRequest<'a> {
    pub fn for_spec(battery_id: impl Into<String>, spec: &RespondentSpec, n_runs: usize) -> Self {
        Self {
            battery_id: battery_id.into(),
            n_runs,
            respondent_kind: spec.kind,
            base_seed: spec.decoding.seed,
            role: None,
            wave: None,
        }
    }
}

enum ItemOutcome {
    Done(ParsedAnswer),
    Abort(RespondError, ParsedAnswer),
}

impl Administrator {
    pub fn new(policy: RunPolicy) -> Self {
        Self {
            policy,
            ..Self::default()
        }
    }

    pub fn with_log(mut self, log: Arc<dyn LogSink>) -> Self {
        self.log = log;
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_lexicon(mut self, lexicon: RefusalLexicon) -> Self {
        self.lexicon = lexicon;
        self
    }

    fn ask_item(
        &self,
        run_id: &str,
        exchange_base: Exchange<'_>,
        anchors: &[String],
        respondent: &dyn Respondent,
    ) -> Result<ItemOutcome, GatewayError> {
        let max_attempts = self.policy.max_retries + 1;
        let mut last: Option<ParsedAnswer> = None;
        let mut last_err: Option<RespondError> = None;
        let mut made = 0;
        for attempt in 1..=max_attempts {
            made = attempt;
            let exchange = Exchange {
                attempt,
                ..exchange_base
            };
            let sent_at = self.clock.now();
            let reply = respondent.respond(&exchange);
            let received_at = self.clock.now();
            let mut entry = RawLogEntry {
                run_id: run_id.to_string(),
                item_index: exchange.item_index,
                attempt,
                prompt: exchange.prompt.to_string(),
                raw_response: None,
                parsed: None,
                label: None,
                error: None,
                sent_at,
                received_at,
            };
            match reply {
                Ok(raw) => {
                    let mut parsed = parse_response(&raw, exchange.labels, anchors, &self.lexicon);
                    parsed.attempts = attempt;
                    entry.raw_response = Some(raw);
                    entry.parsed = Some(parsed.status);
                    entry.label = parsed.label.clone();
                    self.log.append(entry)?;
                    let done = parsed.is_answered();
                    last = Some(parsed);
                    last_err = None;
                    if done {
                        break;
                    }
                }
                Err(e) => {
                    entry.error = Some(e.to_string());
                    self.log.append(entry)?;
                    let fatal = matches!(e, RespondError::Auth(_));
                    last_err = Some(e);
                    if fatal {
                        break;
                    }
                }
            }
        }
        match (last_err, last) {
            (Some(e), prior) => Ok(ItemOutcome::Abort(
                e,
                ParsedAnswer {
                    status: AnswerStatus::NotAdministered,
                    label: None,
                    raw_text: prior.map(|p| p.raw_text).unwrap_or_default(),
                    attempts: made,
                },
            )),
            (None, Some(p)) => Ok(ItemOutcome::Done(p)),
            (None, None) => unreachable!("at least one attempt is made"),
        }
    }

    /// Administers every item of `rendered` once (plus retries), each in its
    /// own exchange. Transport and auth failures abort the run: the record is
    /// returned marked invalid with the reason, and untouched items are
    /// `not_administered`.
    pub fn administer_run(
        &self,
        rendered: &RenderedScale,
        respondent: &dyn Respondent,
        req: &RunRequest<'_>,
    ) -> Result<RunRecord, GatewayError> {
        self.policy.validate()?;
        let timestamp = self.clock.now();
        let role_text = req.role.map(|r| r.instruction_text.as_str());
        let role_id = req.role.map(|r| &r.role_id);
        let mut responses = Vec::with_capacity(rendered.items.len());
        let mut abort: Option<RespondError> = None;
        for item in &rendered.items {
            if abort.is_some() {
                responses.push(ItemResponse {
                    item_index: item.source_index,
                    answer: ParsedAnswer {
                        status: AnswerStatus::NotAdministered,
                        label: None,
                        raw_text: String::new(),
                        attempts: 0,
                    },
                });
                continue;
            }
            let prompt = build_prompt(&PromptEnvelope::for_item(rendered, item, role_text));
            let exchange = Exchange {
                prompt: &prompt,
                scale_id: &rendered.scale_id,
                variant: rendered.variant,
                item_index: item.source_index,
                dimension: &item.dimension,
                labels: &item.labels,
                attempt: 1,
                run_index: req.run_index,
                seed: req.seed,
                role: role_id,
            };
            let answer = match self.ask_item(&req.run_id, exchange, &item.anchors, respondent)? {
                ItemOutcome::Done(a) => a,
                ItemOutcome::Abort(e, a) => {
                    abort = Some(e);
                    a
                }
            };
            responses.push(ItemResponse {
                item_index: item.source_index,
                answer,
            });
        }
        let meta = RunMeta {
            run_id: req.run_id.clone(),
            respondent: respondent.identity(),
            respondent_kind: req.respondent_kind,
            scale_id: rendered.scale_id.clone(),
            scale_version: rendered.scale_version.clone(),
            variant: rendered.variant,
            role: role_id.cloned(),
            wave: req.wave,
            seed: req.seed,
            timestamp,
        };
        let mut record = RunRecord::from_answers(meta, responses, self.policy.validity_threshold);
        if let Some(e) = abort {
            record.valid = false;
            record.abort_reason = Some(e.to_string());
        }
        Ok(record)
    }

    /// Runs `n_runs` independent administrations of each rendered scale.
    /// Run k is seeded with `base_seed + k`. A failing run is recorded as
    /// invalid and does not stop its siblings. The raw log is flushed before
    /// returning.
    pub fn administer_battery(
        &self,
        rendered_set: &[RenderedScale],
        respondent: &dyn Respondent,
        req: &BatteryRequest<'_>,
    ) -> Result<Vec<RunRecord>, GatewayError> {
        if req.n_runs == 0 {
            return Err(GatewayError::NoRuns);
        }
        self.policy.validate()?;
        let identity = sanitize(&respondent.identity());
        let jobs: Vec<(usize, usize)> = (0..rendered_set.len())
            .flat_map(|s| (0..req.n_runs).map(move |k| (s, k)))
            .collect();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.policy.parallelism)
            .build()
            .map_err(|e| GatewayError::InvalidPolicy(e.to_string()))?;
        let records = pool.install(|| {
            jobs.par_iter()
                .map(|&(s, k)| {
                    let rendered = &rendered_set[s];
                    let mut run_id = format!(
                        "{}.{}.{}.{}",
                        sanitize(&req.battery_id),
                        identity,
                        sanitize(&rendered.scale_id),
                        rendered.variant
                    );
                    if let Some(role) = req.role {
                        run_id.push('.');
                        run_id.push_str(&sanitize(role.role_id.as_str()));
                    }
                    if let Some(w) = req.wave {
                        run_id.push_str(&format!(".{w}"));
                    }
                    run_id.push_str(&format!(".{k:04}"));
                    let run = RunRequest {
                        run_id,
                        run_index: k,
                        respondent_kind: req.respondent_kind,
                        seed: req.base_seed.map(|b| b.wrapping_add(k as u64)),
                        role: req.role,
                        wave: req.wave,
                    };
                    self.administer_run(rendered, respondent, &run)
                })
                .collect::<Result<Vec<_>, _>>()
        })?;
        self.log.flush()?;
        Ok(records)
    }
}

/// Keeps identifiers path- and id-safe.
pub fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_alphanumeric() || c == '-' || c == '_' { c } else { '-' })
        .collect()
}
