//! The three study protocols: retest stability, cross-variant consistency
//! and role-play deviation, plus the plan-driven orchestrator.

mod crossvariant;
mod plan;
mod retest;
mod roleplay;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{GatewayError, RunRecord};
use crate::report::StoreError;
use crate::role::RoleId;
use crate::scale::ScaleError;
use crate::scoring::{RunScore, ScoringError};
use crate::stats::StatsError;

pub use crossvariant::{crossvariant_human, with_variant_deltas, IccRow, IccTable};
pub use plan::{
    run_study, DefaultFactory, FocalDimension, HumanPlan, RespondentEntry, RespondentFactory, ScaleEntry,
    StudyKind, StudyOutcome, StudyPlan,
};
pub use retest::{llm_distribution, retest_human, DistCell, DistributionTable, PearsonCell, RetestTable};
pub use roleplay::{
    assign_groups, compare_models, deviation_kind, deviation_role, roleplay_human, DeviationKind,
    DeviationRecord, Group, GroupAssignment, GroupComparison, ModelComparison, RolePlayHuman, RolePlayReport,
};

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("subject {subject} lacks wave {wave} for {scale_id}")]
    MissingWave {
        subject: String,
        wave: String,
        scale_id: String,
    },
    #[error("{respondent} has no valid runs for {scale_id} {variant} dimension {dimension}")]
    InsufficientRuns {
        respondent: String,
        scale_id: String,
        variant: String,
        dimension: String,
    },
    #[error("no baseline condition for {0}")]
    MissingBaseline(String),
    #[error("role {role} missing for {subject}")]
    MissingRole { role: RoleId, subject: String },
    #[error("unknown scale {0}")]
    UnknownScale(String),
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Scale(#[from] ScaleError),
    #[error(transparent)]
    Render(#[from] crate::variant::RenderError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A run together with its scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub record: RunRecord,
    pub score: RunScore,
}

impl Scored {
    pub fn value(&self, dimension: &str) -> Option<f64> {
        if !self.score.valid {
            return None;
        }
        self.score.score(dimension)
    }
}
