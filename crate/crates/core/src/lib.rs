//! Psychometric test batteries for language models: scale catalog,
//! instruction variants, administration, scoring, statistics, study
//! protocols and a reproducible results store.

pub mod clock;
pub mod gateway;
pub mod role;
pub mod scale;
pub mod variant;
pub mod scoring;
pub mod stats;
pub mod study;
pub mod report;
