use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use psymetric_core::gateway::Wave;
use psymetric_core::role::RoleId;
use psymetric_core::variant::VariantId;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyConfig {
    /// Minimum seconds between showing role instructions and the
    /// participant's acknowledgment.
    #[serde(default = "default_prep")]
    pub prep_seconds: i64,
    /// T2 window, in days after T1 finalize.
    #[serde(default = "default_open")]
    pub t2_open_days: i64,
    #[serde(default = "default_close")]
    pub t2_close_days: i64,
    /// Schedule a T2 window on every T1 finalize.
    #[serde(default = "yes")]
    pub retest: bool,
    /// Offset of the participants' local time from UTC; sessions expire at
    /// local midnight.
    #[serde(default)]
    pub utc_offset_minutes: i32,
}

fn default_prep() -> i64 {
    60
}

fn default_open() -> i64 {
    13
}

fn default_close() -> i64 {
    21
}

fn yes() -> bool {
    true
}

impl Default for SurveyConfig {
    fn default() -> Self {
        Self {
            prep_seconds: default_prep(),
            t2_open_days: default_open(),
            t2_close_days: default_close(),
            retest: true,
            utc_offset_minutes: 0,
        }
    }
}

/// A pseudonymous participant. Nothing but the opaque id is stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Participant {
    pub participant_id: String,
    pub consent: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Open,
    Finalized,
    Expired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub item_index: usize,
    pub label: String,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub participant_id: String,
    pub scale_id: String,
    pub variant: VariantId,
    pub wave: Wave,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<RoleId>,
    pub state: SessionState,
    /// Item index of the next unanswered item; `None` once all are answered.
    pub cursor: Option<usize>,
    pub total_items: usize,
    pub answers: Vec<Answer>,
    pub created_at: DateTime<Utc>,
    pub expires_at: DateTime<Utc>,
    /// When the role instructions were first shown.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instructions_shown_at: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prepared_at: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl Session {
    pub fn needs_preparation(&self) -> bool {
        self.role.is_some() && self.prepared_at.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub participant_id: String,
    pub scale_id: String,
    pub variant: VariantId,
    pub wave: Wave,
    pub window_open: DateTime<Utc>,
    pub window_close: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub participant_id: String,
    pub scale_id: String,
    #[serde(default = "original")]
    pub variant: VariantId,
    pub wave: Wave,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role_id: Option<RoleId>,
}

fn original() -> VariantId {
    VariantId::Original
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemPayload {
    pub item_index: usize,
    /// 1-based position in administration order.
    pub position: usize,
    pub total: usize,
    pub instructions: String,
    pub stem: String,
    pub labels: Vec<String>,
    pub anchors: Vec<String>,
    pub variant: VariantId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<RoleId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextItem {
    Item(ItemPayload),
    Done { total: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerAck {
    pub item_index: usize,
    pub cursor: Option<usize>,
    pub answered: usize,
    /// True when the submit repeated an already recorded answer.
    pub duplicate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalizeReceipt {
    pub run_id: String,
    pub battery_id: String,
    pub completion_ratio: f64,
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheduled: Option<ScheduleEntry>,
}

/// Everything the service persists.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub(crate) struct SurveyState {
    pub participants: BTreeMap<String, Participant>,
    pub sessions: BTreeMap<String, Session>,
    pub schedule: Vec<ScheduleEntry>,
}
