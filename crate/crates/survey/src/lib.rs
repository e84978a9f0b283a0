//! Session backend for human participants: consent, one-item-at-a-time
//! answering with a server-held cursor, T1/T2 scheduling and role-play
//! preparation gating. Finalized sessions land in the results store as
//! ordinary run records.

pub mod http;
pub mod model;
pub mod service;

pub use http::{router, serve};
pub use model::{
    AnswerAck, CreateSession, FinalizeReceipt, ItemPayload, NextItem, Participant, ScheduleEntry, Session,
    SessionState, SurveyConfig,
};
pub use service::{SurveyError, SurveyService};
