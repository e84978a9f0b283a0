//! File-backed store for runs, scores and analyses, plus table and
//! density-series emission.
//!
//! Layout under the store root:
//!
//! ```text
//! manifest.json          batteries and analyses with sha256 of each data file
//! raw/<battery>.ndjson   every exchange, append-only
//! runs/<battery>.ndjson  one RunRecord per line
//! scores/<battery>.csv   one row per run and dimension
//! analyses/<id>.json     serialized Analysis
//! tables/                emitted CSV tables and density series
//! ```

mod density;
mod table;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::{sanitize, RespondentSpec, RunRecord};
use crate::scoring::{DimensionScore, RunScore};
use crate::study::{DistributionTable, IccTable, RetestTable, RolePlayReport};

pub use density::{density_csv, DENSITY_POINTS};
pub use table::{render_table, CellValue, ReportCell, ReportRow, ReportTable, TableKind};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store corruption: {0}")]
    StoreCorruption(String),
    #[error("unknown analysis {0}")]
    UnknownAnalysis(String),
    #[error("unknown battery {0}")]
    UnknownBattery(String),
    #[error("analysis {id} is {actual}, table kind {kind} needs {expected}")]
    WrongKind {
        id: String,
        kind: String,
        expected: String,
        actual: String,
    },
    #[error("{0} already exists")]
    Duplicate(String),
    #[error("empty battery rejected")]
    EmptyBattery,
    #[error("records and scores disagree: {0}")]
    Inconsistent(String),
    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),
    #[error("no cell {0}")]
    UnknownCell(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryEntry {
    pub created: DateTime<Utc>,
    pub n_records: usize,
    pub runs_file: String,
    pub runs_sha256: String,
    pub scores_file: String,
    pub scores_sha256: String,
    pub raw_file: String,
    /// scale id -> version, as administered.
    pub scales: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub respondents: Vec<RespondentSpec>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisEntry {
    pub created: DateTime<Utc>,
    pub kind: String,
    pub file: String,
    pub sha256: String,
    pub sources: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub batteries: BTreeMap<String, BatteryEntry>,
    #[serde(default)]
    pub analyses: BTreeMap<String, AnalysisEntry>,
}

/// A persisted study result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "snake_case")]
pub enum Analysis {
    Retest(RetestTable),
    Distribution(DistributionTable),
    Icc(IccTable),
    RolePlay(RolePlayReport),
}

impl Analysis {
    pub fn kind(&self) -> &'static str {
        match self {
            Analysis::Retest(_) => "retest",
            Analysis::Distribution(_) => "distribution",
            Analysis::Icc(_) => "icc",
            Analysis::RolePlay(_) => "role_play",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ScoreRow {
    run_id: String,
    scale_id: String,
    run_valid: bool,
    dimension: String,
    score: Option<f64>,
    answered: usize,
    total: usize,
    prorated: bool,
}

fn sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes via a sibling temp file and rename so readers never see a
/// partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let n = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    let tmp = path.with_extension(format!("tmp-{}-{n}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

pub struct Store {
    root: PathBuf,
    manifest_lock: Mutex<()>,
}

impl Store {
    /// Opens or initializes a store at `root`.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        for sub in ["raw", "runs", "scores", "analyses", "tables"] {
            fs::create_dir_all(root.join(sub))?;
        }
        let store = Self {
            root,
            manifest_lock: Mutex::new(()),
        };
        if !store.manifest_path().exists() {
            store.write_manifest(&Manifest::default())?;
        }
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    fn write_manifest(&self, m: &Manifest) -> Result<(), StoreError> {
        let mut bytes = serde_json::to_vec_pretty(m)?;
        bytes.push(b'\n');
        write_atomic(&self.manifest_path(), &bytes)?;
        Ok(())
    }

    pub fn manifest(&self) -> Result<Manifest, StoreError> {
        let bytes = fs::read(self.manifest_path())?;
        serde_json::from_slice(&bytes).map_err(|e| StoreError::StoreCorruption(format!("manifest: {e}")))
    }

    fn update_manifest(&self, f: impl FnOnce(&mut Manifest) -> Result<(), StoreError>) -> Result<(), StoreError> {
        let _guard = self.manifest_lock.lock().unwrap_or_else(|e| e.into_inner());
        let mut m = self.manifest()?;
        f(&mut m)?;
        self.write_manifest(&m)
    }

    /// Where the append-only exchange log for `battery_id` lives.
    pub fn raw_log_path(&self, battery_id: &str) -> PathBuf {
        self.root.join("raw").join(format!("{}.ndjson", sanitize(battery_id)))
    }

    pub fn tables_dir(&self) -> PathBuf {
        self.root.join("tables")
    }

    /// Writes runs and scores, reads them back, verifies them and then
    /// records the battery in the manifest. Returns the manifest entry id.
    pub fn persist_battery(
        &self,
        battery_id: &str,
        records: &[RunRecord],
        scores: &[RunScore],
        respondents: &[RespondentSpec],
    ) -> Result<String, StoreError> {
        if records.is_empty() {
            return Err(StoreError::EmptyBattery);
        }
        let id = sanitize(battery_id);
        check_consistent(records, scores)?;
        if self.manifest()?.batteries.contains_key(&id) {
            return Err(StoreError::Duplicate(format!("battery {id}")));
        }

        let runs_file = format!("runs/{id}.ndjson");
        let scores_file = format!("scores/{id}.csv");
        let mut runs_bytes = Vec::new();
        for r in records {
            serde_json::to_writer(&mut runs_bytes, r)?;
            runs_bytes.push(b'\n');
        }
        let scores_bytes = scores_csv(scores)?;
        write_atomic(&self.root.join(&runs_file), &runs_bytes)?;
        write_atomic(&self.root.join(&scores_file), &scores_bytes)?;

        let runs_sha256 = sha256(&runs_bytes);
        let scores_sha256 = sha256(&scores_bytes);
        let back = self.read_runs(&runs_file, &runs_sha256)?;
        if back != records {
            return Err(StoreError::StoreCorruption(format!("{runs_file} differs on read-back")));
        }
        let back = self.read_scores(&scores_file, &scores_sha256)?;
        if back != scores {
            return Err(StoreError::StoreCorruption(format!("{scores_file} differs on read-back")));
        }

        let mut scales = BTreeMap::new();
        for r in records {
            scales.insert(r.scale_id.clone(), r.scale_version.clone());
        }
        let entry = BatteryEntry {
            created: Utc::now(),
            n_records: records.len(),
            runs_file,
            runs_sha256,
            scores_file,
            scores_sha256,
            raw_file: format!("raw/{id}.ndjson"),
            scales,
            respondents: respondents.to_vec(),
            seeds: records.iter().filter_map(|r| r.seed).collect(),
        };
        self.update_manifest(|m| {
            if m.batteries.contains_key(&id) {
                return Err(StoreError::Duplicate(format!("battery {id}")));
            }
            m.batteries.insert(id.clone(), entry);
            Ok(())
        })?;
        Ok(id)
    }

    fn read_verified(&self, file: &str, sha: &str) -> Result<Vec<u8>, StoreError> {
        let bytes = fs::read(self.root.join(file))?;
        if sha256(&bytes) != sha {
            return Err(StoreError::StoreCorruption(format!("checksum mismatch for {file}")));
        }
        Ok(bytes)
    }

    fn read_runs(&self, file: &str, sha: &str) -> Result<Vec<RunRecord>, StoreError> {
        let bytes = self.read_verified(file, sha)?;
        let text = std::str::from_utf8(&bytes).map_err(|e| StoreError::StoreCorruption(format!("{file}: {e}")))?;
        text.lines()
            .filter(|l| !l.is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| StoreError::StoreCorruption(format!("{file}: {e}"))))
            .collect()
    }

    fn read_scores(&self, file: &str, sha: &str) -> Result<Vec<RunScore>, StoreError> {
        let bytes = self.read_verified(file, sha)?;
        let mut out: Vec<RunScore> = Vec::new();
        for row in csv::Reader::from_reader(bytes.as_slice()).deserialize::<ScoreRow>() {
            let row = row.map_err(|e| StoreError::StoreCorruption(format!("{file}: {e}")))?;
            let dim = DimensionScore {
                run_id: row.run_id.clone(),
                dimension_id: row.dimension,
                score: row.score,
                answered_items: row.answered,
                total_items: row.total,
                prorated: row.prorated,
            };
            match out.last_mut() {
                Some(last) if last.run_id == row.run_id => last.dimensions.push(dim),
                _ => out.push(RunScore {
                    run_id: row.run_id,
                    scale_id: row.scale_id,
                    dimensions: vec![dim],
                    valid: row.run_valid,
                }),
            }
        }
        Ok(out)
    }

    fn battery_entry(&self, id: &str) -> Result<BatteryEntry, StoreError> {
        self.manifest()?
            .batteries
            .remove(id)
            .ok_or_else(|| StoreError::UnknownBattery(id.to_string()))
    }

    pub fn load_runs(&self, battery_id: &str) -> Result<Vec<RunRecord>, StoreError> {
        let e = self.battery_entry(battery_id)?;
        let runs = self.read_runs(&e.runs_file, &e.runs_sha256)?;
        if runs.len() != e.n_records {
            return Err(StoreError::StoreCorruption(format!(
                "{} holds {} records, manifest says {}",
                e.runs_file,
                runs.len(),
                e.n_records
            )));
        }
        Ok(runs)
    }

    pub fn load_scores(&self, battery_id: &str) -> Result<Vec<RunScore>, StoreError> {
        let e = self.battery_entry(battery_id)?;
        self.read_scores(&e.scores_file, &e.scores_sha256)
    }

    pub fn batteries(&self) -> Result<Vec<String>, StoreError> {
        Ok(self.manifest()?.batteries.into_keys().collect())
    }

    pub fn save_analysis(&self, id: &str, analysis: &Analysis, sources: &[String]) -> Result<String, StoreError> {
        let id = sanitize(id);
        let file = format!("analyses/{id}.json");
        let mut bytes = serde_json::to_vec_pretty(analysis)?;
        bytes.push(b'\n');
        let entry = AnalysisEntry {
            created: Utc::now(),
            kind: analysis.kind().to_string(),
            file: file.clone(),
            sha256: sha256(&bytes),
            sources: sources.to_vec(),
        };
        self.update_manifest(|m| {
            if m.analyses.contains_key(&id) {
                return Err(StoreError::Duplicate(format!("analysis {id}")));
            }
            write_atomic(&self.root.join(&file), &bytes)?;
            m.analyses.insert(id.clone(), entry);
            Ok(())
        })?;
        Ok(id)
    }

    pub fn load_analysis(&self, id: &str) -> Result<Analysis, StoreError> {
        let e = self
            .manifest()?
            .analyses
            .remove(id)
            .ok_or_else(|| StoreError::UnknownAnalysis(id.to_string()))?;
        let bytes = self.read_verified(&e.file, &e.sha256)?;
        serde_json::from_slice(&bytes).map_err(|e| StoreError::StoreCorruption(format!("analysis {id}: {e}")))
    }

    /// Builds the table of `kind` from a stored analysis and writes its CSV
    /// to `tables/<id>.<kind>.csv`, with cell sources and run ids alongside
    /// in `<id>.<kind>.json`.
    pub fn emit_table(&self, analysis_id: &str, kind: TableKind) -> Result<(ReportTable, PathBuf), StoreError> {
        let analysis = self.load_analysis(analysis_id)?;
        let table = table::build(analysis_id, &analysis, kind, None)?;
        let stem = format!("{}.{}", sanitize(analysis_id), kind.as_str());
        let path = self.write_table(&stem, &table)?;
        Ok((table, path))
    }

    /// Like [`Store::emit_table`], but per-scale kinds (retest correlations
    /// and run distributions) get one table per scale, written to
    /// `tables/<id>.<kind>.<scale>.csv`.
    pub fn emit_tables(&self, analysis_id: &str, kind: TableKind) -> Result<Vec<(ReportTable, PathBuf)>, StoreError> {
        let analysis = self.load_analysis(analysis_id)?;
        let scales = table::split_scales(&analysis, kind);
        if scales.is_empty() {
            return Ok(vec![self.emit_table(analysis_id, kind)?]);
        }
        let mut out = Vec::new();
        for scale in scales {
            let table = table::build(analysis_id, &analysis, kind, Some(&scale))?;
            let stem = format!("{}.{}.{}", sanitize(analysis_id), kind.as_str(), sanitize(&scale));
            let path = self.write_table(&stem, &table)?;
            out.push((table, path));
        }
        Ok(out)
    }

    fn write_table(&self, stem: &str, table: &ReportTable) -> Result<PathBuf, StoreError> {
        let path = self.tables_dir().join(format!("{stem}.csv"));
        write_atomic(&path, &table.to_csv()?)?;
        let mut json = serde_json::to_vec_pretty(table)?;
        json.push(b'\n');
        write_atomic(&self.tables_dir().join(format!("{stem}.json")), &json)?;
        Ok(path)
    }

    /// Writes the fitted normal curve for one distribution cell to
    /// `tables/<id>.density.<respondent>.<scale>.<variant>[.<role>].<dimension>.csv`.
    pub fn emit_density_series(
        &self,
        analysis_id: &str,
        respondent: &str,
        scale_id: &str,
        variant: crate::variant::VariantId,
        role: Option<&crate::role::RoleId>,
        dimension: &str,
    ) -> Result<PathBuf, StoreError> {
        let Analysis::Distribution(t) = self.load_analysis(analysis_id)? else {
            return Err(StoreError::WrongKind {
                id: analysis_id.to_string(),
                kind: "density".into(),
                expected: "distribution".into(),
                actual: "other".into(),
            });
        };
        let cell = t
            .cells
            .iter()
            .find(|c| {
                c.respondent == respondent
                    && c.scale_id == scale_id
                    && c.variant == variant
                    && c.role.as_ref() == role
                    && c.dimension == dimension
            })
            .ok_or_else(|| StoreError::UnknownCell(format!("{respondent} {scale_id} {variant} {dimension}")))?;
        let bytes = density_csv(&cell.aggregate)?;
        let mut name = format!(
            "{}.density.{}.{}.{}",
            sanitize(analysis_id),
            sanitize(respondent),
            sanitize(scale_id),
            variant
        );
        if let Some(r) = role {
            name.push('.');
            name.push_str(&sanitize(r.as_str()));
        }
        name.push_str(&format!(".{}.csv", sanitize(dimension)));
        let path = self.tables_dir().join(name);
        write_atomic(&path, &bytes)?;
        Ok(path)
    }
}

fn check_consistent(records: &[RunRecord], scores: &[RunScore]) -> Result<(), StoreError> {
    let mut seen = BTreeSet::new();
    for r in records {
        if !seen.insert(r.run_id.as_str()) {
            return Err(StoreError::Inconsistent(format!("duplicate run id {}", r.run_id)));
        }
    }
    let scored: BTreeSet<&str> = scores.iter().map(|s| s.run_id.as_str()).collect();
    if scored.len() != scores.len() {
        return Err(StoreError::Inconsistent("duplicate score run id".into()));
    }
    if scored != seen {
        let missing: Vec<_> = seen.symmetric_difference(&scored).take(3).collect();
        return Err(StoreError::Inconsistent(format!("run ids differ, e.g. {missing:?}")));
    }
    for s in scores {
        if s.dimensions.is_empty() {
            return Err(StoreError::Inconsistent(format!("{} has no dimensions", s.run_id)));
        }
    }
    Ok(())
}

fn scores_csv(scores: &[RunScore]) -> Result<Vec<u8>, StoreError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for s in scores {
        for d in &s.dimensions {
            w.serialize(ScoreRow {
                run_id: s.run_id.clone(),
                scale_id: s.scale_id.clone(),
                run_valid: s.valid,
                dimension: d.dimension_id.clone(),
                score: d.score,
                answered: d.answered_items,
                total: d.total_items,
                prorated: d.prorated,
            })?;
        }
    }
    w.into_inner().map_err(|e| StoreError::Io(e.into_error()))
}
