use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use psymetric_core::gateway::{
    Administrator, BatteryRequest, FileLog, LogSink, RecordedDataset, RefusalLexicon, RespondentSpec, RunPolicy,
};
use psymetric_core::report::{render_table, Store, TableKind};
use psymetric_core::role::{RoleId, RoleSpec};
use psymetric_core::scale::{load_scale, Scale, ScaleError};
use psymetric_core::scoring::{aggregate_runs, score_run, ScoringPolicy, VarianceDivisor};
use psymetric_core::study::{run_study, RespondentFactory, StudyPlan};
use psymetric_core::variant::{render_scale, VariantId};
use psymetric_llm::LlmFactory;
use psymetric_survey::{SurveyConfig, SurveyService};

#[derive(Parser)]
#[command(name = "psymetric", version, about = "Personality inventories for language models and people")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scale file and print its layout.
    Validate {
        #[arg(long)]
        scale: PathBuf,
    },
    /// Write one form of a scale.
    Render {
        #[arg(long)]
        scale: PathBuf,
        #[arg(long)]
        variant: VariantId,
        #[arg(long)]
        out: PathBuf,
    },
    /// Administer one form of a scale repeatedly and store the runs.
    Run {
        #[arg(long)]
        scale: PathBuf,
        #[arg(long, default_value = "original")]
        variant: VariantId,
        #[arg(long)]
        respondent: PathBuf,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long)]
        role: Option<RoleId>,
        /// Store directory.
        #[arg(long)]
        out: PathBuf,
        /// Battery id; derived from the respondent, scale and form when absent.
        #[arg(long)]
        battery: Option<String>,
        #[arg(long)]
        max_retries: Option<u32>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        parallelism: Option<usize>,
        /// Refusal phrases, one per line.
        #[arg(long)]
        lexicon: Option<PathBuf>,
    },
    /// Study plans.
    Study {
        #[command(subcommand)]
        command: StudyCommand,
    },
    /// Build a table from a stored analysis.
    Report {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        analysis: String,
        #[arg(long)]
        kind: TableKind,
    },
    /// List batteries and analyses in a store.
    List {
        #[arg(long)]
        store: PathBuf,
    },
    /// Serve the participant session API.
    Serve {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Scale files offered to participants (repeatable); defaults to
        /// every scale file in ./data.
        #[arg(long)]
        scale: Vec<PathBuf>,
        #[arg(long, default_value_t = 60)]
        prep_seconds: i64,
        #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
        utc_offset_minutes: i32,
        /// Do not schedule a T2 window after T1.
        #[arg(long)]
        no_retest: bool,
    },
    /// Write finalized participant sessions as a recorded-answers CSV.
    Export {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum StudyCommand {
    /// Administer, score and analyse everything in a plan.
    Run {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        store: PathBuf,
    },
}

fn scale_file(path: &Path) -> Result<Scale> {
    match load_scale(path) {
        Ok(s) => Ok(s),
        Err(ScaleError::Validation(v)) => {
            for x in &v {
                eprintln!("{x}");
            }
            bail!("{} has {} problem(s)", path.display(), v.len())
        }
        Err(e) => Err(e).with_context(|| format!("reading {}", path.display())),
    }
}

fn validate(path: &Path) -> Result<()> {
    let scale = scale_file(path)?;
    println!("{} {} ({:?}, {} items)", scale.id, scale.version, scale.kind(), scale.items.len());
    for d in &scale.dimensions {
        println!("  {}\t{} items", d.id, scale.items_in(&d.id).count());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run(
    scale: &Path,
    variant: VariantId,
    respondent: &Path,
    n: usize,
    role: Option<RoleId>,
    out: &Path,
    battery: Option<String>,
    policy: RunPolicy,
    lexicon: Option<&Path>,
) -> Result<()> {
    let scale = scale_file(scale)?;
    let rendered = render_scale(&scale, variant)?;
    let text = std::fs::read_to_string(respondent).with_context(|| format!("reading {}", respondent.display()))?;
    let spec = RespondentSpec::from_toml(&text)?;
    let who = LlmFactory.build(&spec)?;
    let role = match role {
        Some(r) => Some(RoleSpec::built_in(&r).with_context(|| format!("{r} is not a built-in role"))?),
        None => None,
    };
    let mut battery = battery.unwrap_or_else(|| format!("run.{}.{}.{}", who.identity(), scale.id, variant));
    if let (Some(r), true) = (&role, battery.starts_with("run.")) {
        battery = format!("{battery}.{}", r.role_id);
    }

    let store = Store::open(out)?;
    let log = Arc::new(FileLog::open(store.raw_log_path(&battery))?);
    let mut admin = Administrator::new(policy).with_log(log.clone() as Arc<dyn LogSink>);
    if let Some(p) = lexicon {
        admin = admin.with_lexicon(RefusalLexicon::load(p).with_context(|| format!("reading {}", p.display()))?);
    }
    let mut req = BatteryRequest::for_spec(&battery, &spec, n);
    req.role = role.as_ref();
    let records = admin.administer_battery(std::slice::from_ref(&rendered), who.as_ref(), &req)?;
    log.close()?;
    let scoring = ScoringPolicy::default();
    let scores = records
        .iter()
        .map(|r| score_run(r, &scale, &scoring))
        .collect::<Result<Vec<_>, _>>()?;
    let id = store.persist_battery(&battery, &records, &scores, &[spec])?;

    let valid = records.iter().filter(|r| r.valid).count();
    println!("battery {id}: {} runs, {valid} valid", records.len());
    for d in &scale.dimensions {
        match aggregate_runs(&scores, &d.id, VarianceDivisor::Sample) {
            Ok(a) => println!("  {}\tmean {:.2}\tvariance {:.2}\tn {}", d.id, a.mean, a.variance, a.n),
            Err(_) => println!("  {}\tno valid scores", d.id),
        }
    }
    Ok(())
}

fn default_scales() -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir("data").context("no --scale given and ./data is not readable")? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "toml") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Validate { scale } => validate(&scale),
        Command::Render { scale, variant, out } => {
            let rendered = render_scale(&scale_file(&scale)?, variant)?;
            std::fs::write(&out, rendered.to_toml()).with_context(|| format!("writing {}", out.display()))?;
            println!("{} items written to {}", rendered.items.len(), out.display());
            Ok(())
        }
        Command::Run {
            scale,
            variant,
            respondent,
            n,
            role,
            out,
            battery,
            max_retries,
            threshold,
            parallelism,
            lexicon,
        } => {
            let mut policy = RunPolicy::default();
            if let Some(m) = max_retries {
                policy.max_retries = m;
            }
            if let Some(t) = threshold {
                policy.validity_threshold = t;
            }
            if let Some(p) = parallelism {
                policy.parallelism = p;
            }
            run(&scale, variant, &respondent, n, role, &out, battery, policy, lexicon.as_deref())
        }
        Command::Study {
            command: StudyCommand::Run { plan, store },
        } => {
            let parsed = StudyPlan::load(&plan).with_context(|| format!("reading {}", plan.display()))?;
            let dir = plan.parent().unwrap_or(Path::new("."));
            let store = Store::open(&store)?;
            let outcome = run_study(&parsed, dir, &store, &LlmFactory)?;
            println!("plan {}", outcome.plan_id);
            for b in &outcome.battery_ids {
                println!("battery  {b}");
            }
            for a in &outcome.analysis_ids {
                println!("analysis {a}");
            }
            for t in &outcome.tables {
                println!("table    {}", t.display());
            }
            println!("density  {} series", outcome.density_series.len());
            for n in &outcome.notes {
                eprintln!("note: {n}");
            }
            Ok(())
        }
        Command::Report { store, analysis, kind } => {
            let store = Store::open(&store)?;
            for (table, path) in store.emit_tables(&analysis, kind)? {
                print!("{}", render_table(&table));
                println!("-> {}\n", path.display());
            }
            Ok(())
        }
        Command::List { store } => {
            let m = Store::open(&store)?.manifest()?;
            for (id, b) in &m.batteries {
                println!("battery  {id}\t{} runs", b.n_records);
            }
            for (id, a) in &m.analyses {
                println!("analysis {id}\t{}", a.kind);
            }
            Ok(())
        }
        Command::Serve {
            store,
            port,
            host,
            scale,
            prep_seconds,
            utc_offset_minutes,
            no_retest,
        } => {
            let files = if scale.is_empty() { default_scales()? } else { scale };
            let scales = files.iter().map(|p| scale_file(p)).collect::<Result<Vec<_>>>()?;
            let config = SurveyConfig {
                prep_seconds,
                utc_offset_minutes,
                retest: !no_retest,
                ..SurveyConfig::default()
            };
            let svc = Arc::new(SurveyService::open(Arc::new(Store::open(&store)?), scales, config)?);
            let addr: SocketAddr = format!("{host}:{port}").parse().context("bad host or port")?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(addr).await?;
                eprintln!("listening on {}", listener.local_addr()?);
                psymetric_survey::http::serve_on(listener, svc).await
            })?;
            Ok(())
        }
        Command::Export { store, out } => {
            let svc = SurveyService::open(Arc::new(Store::open(&store)?), Vec::new(), SurveyConfig::default())?;
            let rows = svc.export_rows();
            RecordedDataset::write_csv(&rows, &out)?;
            println!("{} answers written to {}", rows.len(), out.display());
            Ok(())
        }
    }
}

