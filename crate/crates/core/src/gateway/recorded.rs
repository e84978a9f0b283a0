//! Replays human answers collected elsewhere.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Exchange, RespondError, Respondent, Wave};
use crate::variant::VariantId;

/// One answer row: `participant_id,wave,scale_id,variant,role,item_index,label`.
/// `role` is empty for baseline administrations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordedRow {
    pub participant_id: String,
    pub wave: Wave,
    pub scale_id: String,
    pub variant: VariantId,
    #[serde(default)]
    pub role: String,
    pub item_index: usize,
    pub label: String,
}

type SessionKey = (String, Wave, String, VariantId, String);

#[derive(Debug, Clone, Default)]
pub struct RecordedDataset {
    sessions: BTreeMap<SessionKey, BTreeMap<usize, String>>,
}

impl RecordedDataset {
    pub fn from_rows(rows: impl IntoIterator<Item = RecordedRow>) -> Self {
        let mut sessions: BTreeMap<SessionKey, BTreeMap<usize, String>> = BTreeMap::new();
        for r in rows {
            sessions
                .entry((r.participant_id, r.wave, r.scale_id, r.variant, r.role))
                .or_default()
                .insert(r.item_index, r.label);
        }
        Self { sessions }
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self, csv::Error> {
        let mut reader = csv::Reader::from_path(path)?;
        let rows = reader
            .deserialize::<RecordedRow>()
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::from_rows(rows))
    }

    pub fn write_csv(rows: &[RecordedRow], path: impl AsRef<Path>) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_path(path)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn participants(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.keys().map(|k| k.0.clone()).collect();
        ids.dedup();
        ids
    }

    /// Distinct (participant, wave, scale, variant, role) sessions present.
    pub fn sessions(&self) -> impl Iterator<Item = &SessionKey> {
        self.sessions.keys()
    }

    pub fn answer(
        &self,
        participant: &str,
        wave: Wave,
        scale_id: &str,
        variant: VariantId,
        role: &str,
        item: usize,
    ) -> Option<&str> {
        self.sessions
            .get(&(
                participant.to_string(),
                wave,
                scale_id.to_string(),
                variant,
                role.to_string(),
            ))
            .and_then(|m| m.get(&item))
            .map(String::as_str)
    }
}

pub struct RecordedRespondent {
    dataset: Arc<RecordedDataset>,
    participant: String,
    wave: Wave,
}

impl RecordedRespondent {
    pub fn new(dataset: Arc<RecordedDataset>, participant: impl Into<String>, wave: Wave) -> Self {
        Self {
            dataset,
            participant: participant.into(),
            wave,
        }
    }
}

impl Respondent for RecordedRespondent {
    fn identity(&self) -> String {
        self.participant.clone()
    }

    fn respond(&self, ex: &Exchange<'_>) -> Result<String, RespondError> {
        let role = ex.role.map(|r| r.as_str()).unwrap_or("");
        Ok(self
            .dataset
            .answer(&self.participant, self.wave, ex.scale_id, ex.variant, role, ex.item_index)
            .unwrap_or_default()
            .to_string())
    }
}
