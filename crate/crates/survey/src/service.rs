use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};

use chrono::{DateTime, Duration, FixedOffset, Utc};
use psymetric_core::clock::{Clock, SystemClock};
use psymetric_core::gateway::{
    sanitize, AnswerStatus, ItemResponse, ParsedAnswer, RecordedRow, RespondentKind, RespondentSpec, RunMeta,
    RunRecord, Wave,
};
use psymetric_core::report::{Store, StoreError};
use psymetric_core::role::RoleSpec;
use psymetric_core::scale::Scale;
use psymetric_core::scoring::{score_run, ScoringPolicy};
use psymetric_core::variant::{render_scale, RenderedScale, VariantId};
use thiserror::Error;

use crate::model::{
    Answer, AnswerAck, CreateSession, FinalizeReceipt, ItemPayload, NextItem, Participant, ScheduleEntry, Session,
    SessionState, SurveyConfig, SurveyState,
};

#[derive(Debug, Error)]
pub enum SurveyError {
    #[error("participant {0} has not consented")]
    NoConsent(String),
    #[error("{wave} for {participant} on {scale_id} is outside its window: {detail}")]
    OutsideWindow {
        participant: String,
        scale_id: String,
        wave: Wave,
        detail: String,
    },
    #[error("participant {participant} already has a role-play session as {role} today")]
    RoleDayTaken { participant: String, role: String },
    #[error("session {0} already exists for this participant, scale, variant and wave")]
    DuplicateSession(String),
    #[error("session {0} is closed")]
    SessionClosed(String),
    #[error("expected item {expected:?}, got {got}")]
    OutOfOrder { expected: Option<usize>, got: usize },
    #[error("label {label:?} is not one of {allowed:?}")]
    InvalidLabel { label: String, allowed: Vec<String> },
    #[error("session is missing answers for items {0:?}")]
    Incomplete(Vec<usize>),
    #[error("role preparation not yet acknowledged")]
    PreparationPending,
    #[error("preparation time not over; {remaining_seconds}s remaining")]
    TooEarly { remaining_seconds: i64 },
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown scale {0}")]
    UnknownScale(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("internal error: {0}")]
    Internal(String),
}

impl From<std::io::Error> for SurveyError {
    fn from(e: std::io::Error) -> Self {
        SurveyError::Internal(e.to_string())
    }
}

impl From<serde_json::Error> for SurveyError {
    fn from(e: serde_json::Error) -> Self {
        SurveyError::Internal(e.to_string())
    }
}

struct Form {
    scale: Scale,
    rendered: BTreeMap<VariantId, RenderedScale>,
}

pub struct SurveyService {
    store: Arc<Store>,
    forms: BTreeMap<String, Form>,
    config: SurveyConfig,
    clock: Arc<dyn Clock>,
    state: Mutex<SurveyState>,
    state_path: PathBuf,
}

/// Opaque ids only: letters, digits, `-` and `_`.
fn check_participant_id(id: &str) -> Result<(), SurveyError> {
    let ok = !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if ok {
        Ok(())
    } else {
        Err(SurveyError::BadRequest(format!(
            "participant id {id:?} must be 1-64 characters of [A-Za-z0-9_-]"
        )))
    }
}

impl SurveyService {
    /// Opens the service over `store`, restoring any saved session state.
    pub fn open(store: Arc<Store>, scales: Vec<Scale>, config: SurveyConfig) -> Result<Self, SurveyError> {
        Self::with_clock(store, scales, config, Arc::new(SystemClock))
    }

    pub fn with_clock(
        store: Arc<Store>,
        scales: Vec<Scale>,
        config: SurveyConfig,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, SurveyError> {
        if config.t2_open_days < 0 || config.t2_close_days < config.t2_open_days || config.prep_seconds < 0 {
            return Err(SurveyError::BadRequest("inconsistent survey config".into()));
        }
        let mut forms = BTreeMap::new();
        for scale in scales {
            let rendered: BTreeMap<_, _> = VariantId::for_kind(scale.kind())
                .into_iter()
                .filter_map(|v| render_scale(&scale, v).ok().map(|r| (v, r)))
                .collect();
            forms.insert(scale.id.clone(), Form { scale, rendered });
        }
        let dir = store.root().join("survey");
        fs::create_dir_all(&dir)?;
        let state_path = dir.join("state.json");
        let state = if state_path.exists() {
            serde_json::from_slice(&fs::read(&state_path)?)?
        } else {
            SurveyState::default()
        };
        Ok(Self {
            store,
            forms,
            config,
            clock,
            state: Mutex::new(state),
            state_path,
        })
    }

    pub fn config(&self) -> &SurveyConfig {
        &self.config
    }

    fn lock(&self) -> MutexGuard<'_, SurveyState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn save(&self, state: &SurveyState) -> Result<(), SurveyError> {
        let tmp = self.state_path.with_extension("json.tmp");
        let mut bytes = serde_json::to_vec_pretty(state)?;
        bytes.push(b'\n');
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, &self.state_path)?;
        Ok(())
    }

    fn offset(&self) -> FixedOffset {
        FixedOffset::east_opt(self.config.utc_offset_minutes * 60).unwrap_or_else(|| FixedOffset::east_opt(0).unwrap())
    }

    /// The next local midnight after `t`.
    fn end_of_day(&self, t: DateTime<Utc>) -> DateTime<Utc> {
        let local = t.with_timezone(&self.offset());
        let next = local.date_naive().succ_opt().expect("date in range");
        next.and_hms_opt(0, 0, 0)
            .expect("midnight exists")
            .and_local_timezone(self.offset())
            .single()
            .expect("fixed offsets are unambiguous")
            .with_timezone(&Utc)
    }

    fn form(&self, scale_id: &str) -> Result<&Form, SurveyError> {
        self.forms
            .get(scale_id)
            .ok_or_else(|| SurveyError::UnknownScale(scale_id.to_string()))
    }

    fn rendered(&self, session: &Session) -> Result<&RenderedScale, SurveyError> {
        self.form(&session.scale_id)?
            .rendered
            .get(&session.variant)
            .ok_or_else(|| SurveyError::Internal(format!("{} lost variant {}", session.scale_id, session.variant)))
    }

    /// Marks a lapsed open session expired.
    fn touch(&self, session: &mut Session, now: DateTime<Utc>) -> bool {
        if session.state == SessionState::Open && now >= session.expires_at {
            session.state = SessionState::Expired;
            return true;
        }
        false
    }

    pub fn set_consent(&self, participant_id: &str, consent: bool) -> Result<Participant, SurveyError> {
        check_participant_id(participant_id)?;
        let mut st = self.lock();
        let p = Participant {
            participant_id: participant_id.to_string(),
            consent,
        };
        st.participants.insert(p.participant_id.clone(), p.clone());
        self.save(&st)?;
        Ok(p)
    }

    pub fn create_session(&self, req: &CreateSession) -> Result<Session, SurveyError> {
        check_participant_id(&req.participant_id)?;
        let now = self.clock.now();
        let form = self.form(&req.scale_id)?;
        let rendered = form.rendered.get(&req.variant).ok_or_else(|| {
            SurveyError::BadRequest(format!("{} has no {} form", req.scale_id, req.variant))
        })?;
        if let Some(role) = &req.role_id {
            if RoleSpec::built_in(role).is_none() {
                return Err(SurveyError::BadRequest(format!("unknown role {role}")));
            }
        }

        let mut st = self.lock();
        if !st.participants.get(&req.participant_id).is_some_and(|p| p.consent) {
            return Err(SurveyError::NoConsent(req.participant_id.clone()));
        }

        let mut dirty = false;
        for s in st.sessions.values_mut() {
            dirty |= self.touch(s, now);
        }
        let same = |s: &Session| {
            s.participant_id == req.participant_id
                && s.scale_id == req.scale_id
                && s.variant == req.variant
                && s.wave == req.wave
                && s.role == req.role_id
        };
        if let Some(s) = st.sessions.values().find(|s| same(s) && s.state != SessionState::Expired) {
            let id = s.session_id.clone();
            if dirty {
                self.save(&st)?;
            }
            return Err(SurveyError::DuplicateSession(id));
        }

        let mut warnings = Vec::new();
        if req.wave == Wave::T2 {
            let window = st.schedule.iter().find(|e| {
                e.participant_id == req.participant_id
                    && e.scale_id == req.scale_id
                    && e.variant == req.variant
                    && e.wave == Wave::T2
            });
            let outside = |detail: String| SurveyError::OutsideWindow {
                participant: req.participant_id.clone(),
                scale_id: req.scale_id.clone(),
                wave: req.wave,
                detail,
            };
            match window {
                None => return Err(outside("no T1 has been completed".into())),
                Some(w) if now < w.window_open => {
                    return Err(outside(format!("window opens {}", w.window_open.to_rfc3339())))
                }
                Some(w) if now > w.window_close => warnings.push(format!(
                    "T2 started after the window closed at {}",
                    w.window_close.to_rfc3339()
                )),
                Some(_) => {}
            }
        }

        if let Some(role) = &req.role_id {
            let today = now.with_timezone(&self.offset()).date_naive();
            let clash = st.sessions.values().find(|s| {
                s.participant_id == req.participant_id
                    && s.role.as_ref().is_some_and(|r| r != role)
                    && s.created_at.with_timezone(&self.offset()).date_naive() == today
            });
            if let Some(s) = clash {
                return Err(SurveyError::RoleDayTaken {
                    participant: req.participant_id.clone(),
                    role: s.role.as_ref().expect("filtered").to_string(),
                });
            }
        }

        let session = Session {
            session_id: uuid::Uuid::new_v4().simple().to_string(),
            participant_id: req.participant_id.clone(),
            scale_id: req.scale_id.clone(),
            variant: req.variant,
            wave: req.wave,
            role: req.role_id.clone(),
            state: SessionState::Open,
            cursor: rendered.items.first().map(|i| i.source_index),
            total_items: rendered.items.len(),
            answers: Vec::new(),
            created_at: now,
            expires_at: self.end_of_day(now),
            instructions_shown_at: None,
            prepared_at: None,
            run_id: None,
            warnings,
        };
        st.sessions.insert(session.session_id.clone(), session.clone());
        self.save(&st)?;
        Ok(session)
    }

    /// Returns the session, marking it expired if its day is over.
    pub fn session(&self, id: &str) -> Result<Session, SurveyError> {
        let mut st = self.lock();
        let now = self.clock.now();
        let s = st
            .sessions
            .get_mut(id)
            .ok_or_else(|| SurveyError::UnknownSession(id.to_string()))?;
        let changed = self.touch(s, now);
        let out = s.clone();
        if changed {
            self.save(&st)?;
        }
        Ok(out)
    }

    /// Runs `f` on an open session and saves the state afterwards.
    fn with_open<T>(
        &self,
        id: &str,
        f: impl FnOnce(&Self, &mut Session, DateTime<Utc>) -> Result<T, SurveyError>,
    ) -> Result<T, SurveyError> {
        let mut st = self.lock();
        let now = self.clock.now();
        let s = st
            .sessions
            .get_mut(id)
            .ok_or_else(|| SurveyError::UnknownSession(id.to_string()))?;
        if self.touch(s, now) {
            self.save(&st)?;
            return Err(SurveyError::SessionClosed(id.to_string()));
        }
        if s.state != SessionState::Open {
            return Err(SurveyError::SessionClosed(id.to_string()));
        }
        let before = s.clone();
        let out = f(self, s, now);
        if st.sessions.get(id) != Some(&before) {
            self.save(&st)?;
        }
        out
    }

    /// Role instructions for a role session. The first call starts the
    /// preparation countdown.
    pub fn instructions(&self, id: &str) -> Result<(Session, String), SurveyError> {
        self.with_open(id, |svc, s, now| {
            let rendered = svc.rendered(s)?;
            let mut text = rendered.instructions.clone();
            if let Some(role) = &s.role {
                let spec = RoleSpec::built_in(role).expect("validated on create");
                text = format!("{}\n\n{}", spec.instruction_text, text);
                s.instructions_shown_at.get_or_insert(now);
            }
            Ok((s.clone(), text))
        })
    }

    /// Records the participant's preparation acknowledgment, allowed once
    /// `prep_seconds` have passed since the instructions were shown.
    pub fn acknowledge(&self, id: &str) -> Result<Session, SurveyError> {
        self.with_open(id, |svc, s, now| {
            if s.role.is_none() || s.prepared_at.is_some() {
                return Ok(s.clone());
            }
            let Some(shown) = s.instructions_shown_at else {
                return Err(SurveyError::TooEarly {
                    remaining_seconds: svc.config.prep_seconds,
                });
            };
            let elapsed = (now - shown).num_seconds();
            if elapsed < svc.config.prep_seconds {
                return Err(SurveyError::TooEarly {
                    remaining_seconds: svc.config.prep_seconds - elapsed,
                });
            }
            s.prepared_at = Some(now);
            Ok(s.clone())
        })
    }

    pub fn next_item(&self, id: &str) -> Result<NextItem, SurveyError> {
        self.with_open(id, |svc, s, _| {
            if s.needs_preparation() {
                return Err(SurveyError::PreparationPending);
            }
            let rendered = svc.rendered(s)?;
            let pos = s.answers.len();
            let Some(item) = rendered.items.get(pos) else {
                return Ok(NextItem::Done { total: s.total_items });
            };
            Ok(NextItem::Item(ItemPayload {
                item_index: item.source_index,
                position: pos + 1,
                total: s.total_items,
                instructions: rendered.instructions.clone(),
                stem: item.stem.clone(),
                labels: item.labels.clone(),
                anchors: item.anchors.clone(),
                variant: s.variant,
                role: s.role.clone(),
            }))
        })
    }

    pub fn submit_answer(&self, id: &str, item_index: usize, label: &str) -> Result<AnswerAck, SurveyError> {
        self.with_open(id, |svc, s, now| {
            if s.needs_preparation() {
                return Err(SurveyError::PreparationPending);
            }
            if let Some(prev) = s.answers.iter().find(|a| a.item_index == item_index) {
                if prev.label == label {
                    return Ok(AnswerAck {
                        item_index,
                        cursor: s.cursor,
                        answered: s.answers.len(),
                        duplicate: true,
                    });
                }
            }
            if s.cursor != Some(item_index) {
                return Err(SurveyError::OutOfOrder {
                    expected: s.cursor,
                    got: item_index,
                });
            }
            let rendered = svc.rendered(s)?;
            let item = &rendered.items[s.answers.len()];
            if !item.labels.iter().any(|l| l == label) {
                return Err(SurveyError::InvalidLabel {
                    label: label.to_string(),
                    allowed: item.labels.clone(),
                });
            }
            s.answers.push(Answer {
                item_index,
                label: label.to_string(),
                at: now,
            });
            s.cursor = rendered.items.get(s.answers.len()).map(|i| i.source_index);
            Ok(AnswerAck {
                item_index,
                cursor: s.cursor,
                answered: s.answers.len(),
                duplicate: false,
            })
        })
    }

    /// Turns a complete session into a scored run record in the store and,
    /// for T1, opens the T2 window.
    pub fn finalize(&self, id: &str) -> Result<FinalizeReceipt, SurveyError> {
        let mut st = self.lock();
        let now = self.clock.now();
        let s = st
            .sessions
            .get_mut(id)
            .ok_or_else(|| SurveyError::UnknownSession(id.to_string()))?;
        if self.touch(s, now) {
            self.save(&st)?;
            return Err(SurveyError::SessionClosed(id.to_string()));
        }
        if s.state != SessionState::Open {
            return Err(SurveyError::SessionClosed(id.to_string()));
        }
        let rendered = self.rendered(s)?;
        let missing: Vec<usize> = rendered
            .items
            .iter()
            .map(|i| i.source_index)
            .filter(|i| !s.answers.iter().any(|a| a.item_index == *i))
            .collect();
        if !missing.is_empty() {
            return Err(SurveyError::Incomplete(missing));
        }

        let mut battery = format!(
            "survey.{}.{}.{}",
            sanitize(&s.participant_id),
            sanitize(&s.scale_id),
            s.variant
        );
        if let Some(role) = &s.role {
            battery.push('.');
            battery.push_str(&sanitize(role.as_str()));
        }
        battery.push_str(&format!(".{}", s.wave));
        let run_id = format!("{battery}.0000");
        let responses = s
            .answers
            .iter()
            .map(|a| ItemResponse {
                item_index: a.item_index,
                answer: ParsedAnswer {
                    status: AnswerStatus::Answered,
                    label: Some(a.label.clone()),
                    raw_text: a.label.clone(),
                    attempts: 1,
                },
            })
            .collect();
        let meta = RunMeta {
            run_id: run_id.clone(),
            respondent: s.participant_id.clone(),
            respondent_kind: RespondentKind::RecordedHuman,
            scale_id: s.scale_id.clone(),
            scale_version: rendered.scale_version.clone(),
            variant: s.variant,
            role: s.role.clone(),
            wave: Some(s.wave),
            seed: None,
            timestamp: now,
        };
        let record = RunRecord::from_answers(meta, responses, 1.0);
        let scale = &self.form(&s.scale_id)?.scale;
        let score = score_run(&record, scale, &ScoringPolicy::default())
            .map_err(|e| SurveyError::Internal(e.to_string()))?;
        let spec = RespondentSpec {
            kind: RespondentKind::RecordedHuman,
            model_name: s.participant_id.clone(),
            endpoint_url: None,
            credentials_ref: None,
            decoding: Default::default(),
            script: None,
            dataset_ref: Some(format!("survey/state.json#{}", s.session_id)),
        };
        let battery_id = self.store.persist_battery(&battery, std::slice::from_ref(&record), &[score], &[spec])?;

        s.state = SessionState::Finalized;
        s.run_id = Some(run_id.clone());
        let scheduled = (s.wave == Wave::T1 && self.config.retest).then(|| ScheduleEntry {
            participant_id: s.participant_id.clone(),
            scale_id: s.scale_id.clone(),
            variant: s.variant,
            wave: Wave::T2,
            window_open: now + Duration::days(self.config.t2_open_days),
            window_close: now + Duration::days(self.config.t2_close_days),
        });
        if let Some(entry) = &scheduled {
            st.schedule.retain(|e| {
                !(e.participant_id == entry.participant_id
                    && e.scale_id == entry.scale_id
                    && e.variant == entry.variant
                    && e.wave == entry.wave)
            });
            st.schedule.push(entry.clone());
        }
        self.save(&st)?;
        Ok(FinalizeReceipt {
            run_id,
            battery_id,
            completion_ratio: record.completion_ratio,
            valid: record.valid,
            scheduled,
        })
    }

    pub fn schedule(&self, participant_id: &str) -> Vec<ScheduleEntry> {
        self.lock()
            .schedule
            .iter()
            .filter(|e| e.participant_id == participant_id)
            .cloned()
            .collect()
    }

    /// Answers of every finalized session as recorded-dataset rows, ready
    /// for a study plan's `human.dataset`.
    pub fn export_rows(&self) -> Vec<RecordedRow> {
        let st = self.lock();
        let mut rows = Vec::new();
        for s in st.sessions.values().filter(|s| s.state == SessionState::Finalized) {
            for a in &s.answers {
                rows.push(RecordedRow {
                    participant_id: s.participant_id.clone(),
                    wave: s.wave,
                    scale_id: s.scale_id.clone(),
                    variant: s.variant,
                    role: s.role.as_ref().map(|r| r.as_str().to_string()).unwrap_or_default(),
                    item_index: a.item_index,
                    label: a.label.clone(),
                });
            }
        }
        rows.sort_by(|a, b| {
            (&a.participant_id, a.wave, &a.scale_id, a.variant, &a.role, a.item_index).cmp(&(
                &b.participant_id,
                b.wave,
                &b.scale_id,
                b.variant,
                &b.role,
                b.item_index,
            ))
        });
        rows
    }
}
