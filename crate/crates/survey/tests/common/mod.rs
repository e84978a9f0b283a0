#![allow(dead_code)]

use std::sync::Arc;

use chrono::{DateTime, TimeZone, Utc};
use psymetric_core::clock::ManualClock;
use psymetric_core::gateway::Wave;
use psymetric_core::report::Store;
use psymetric_core::scale::{load_scale, Scale};
use psymetric_core::variant::VariantId;
use psymetric_survey::{CreateSession, SurveyConfig, SurveyService};

pub fn scale(name: &str) -> Scale {
    load_scale(format!("{}/../../data/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

/// 09:00 UTC on a fixed day.
pub fn morning() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2026, 3, 2, 9, 0, 0).unwrap()
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub store: Arc<Store>,
    pub clock: Arc<ManualClock>,
    pub svc: SurveyService,
}

pub fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(Store::open(dir.path().join("store")).unwrap());
    let clock = Arc::new(ManualClock::new(morning()));
    let svc = open(&store, &clock);
    Fixture { dir, store, clock, svc }
}

pub fn open(store: &Arc<Store>, clock: &Arc<ManualClock>) -> SurveyService {
    SurveyService::with_clock(
        store.clone(),
        vec![scale("demo_bfi.toml"), scale("demo_mbti.toml")],
        SurveyConfig::default(),
        clock.clone(),
    )
    .unwrap()
}

pub fn request(participant: &str, wave: Wave) -> CreateSession {
    CreateSession {
        participant_id: participant.into(),
        scale_id: "demo-bfi".into(),
        variant: VariantId::Original,
        wave,
        role_id: None,
    }
}
