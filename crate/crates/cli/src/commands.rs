//! Subcommand bodies. Each writes its result to `out` and returns a
//! [`CliError`] whose exit code the binary propagates.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use asthmon_core::fetcher::{Fetcher, FixtureAdapter, SourceAdapter};
use asthmon_core::report::{render_cohort, ReportFormat, ReportOptions};
use asthmon_core::simulator::{generate_cohort, CohortSpec};
use asthmon_core::{PatientId, PatientProfile, Platform, Season, Stream};
use chrono::{DateTime, NaiveDate, Utc};
use serde::Serialize;

use crate::{ApiConfig, CliError};

fn io_err(e: std::io::Error) -> CliError {
    CliError::Runtime(e.to_string())
}

fn write_json(out: &mut dyn Write, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    writeln!(out, "{text}").map_err(io_err)
}

/// Opens the configured store and registers the configured device tokens.
pub fn open_platform(cfg: &ApiConfig) -> Result<Platform, CliError> {
    let platform = Platform::open(&cfg.store_path, cfg.analysis.clone())?;
    for token in &cfg.tokens {
        platform.gateway().tokens().register(token.clone()).map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(platform)
}

/// Builds a fetcher over the configured fixture sources. Sources sharing a
/// fixture file share one adapter.
pub fn build_fetcher(cfg: &ApiConfig, platform: &Platform, start: DateTime<Utc>) -> Result<Fetcher, CliError> {
    let mut adapters: BTreeMap<PathBuf, Arc<FixtureAdapter>> = BTreeMap::new();
    let mut fetcher = Fetcher::new(platform.store().clone(), start);
    for source in &cfg.fetcher.sources {
        let spec = source.spec().map_err(CliError::Config)?;
        let adapter = match adapters.get(&source.fixture) {
            Some(a) => a.clone(),
            None => {
                let text = std::fs::read_to_string(&source.fixture)
                    .map_err(|e| CliError::Config(format!("fixture {}: {e}", source.fixture.display())))?;
                let (adapter, dropped) = FixtureAdapter::from_ndjson(&text);
                if !dropped.is_empty() {
                    tracing::warn!(fixture = %source.fixture.display(), dropped = dropped.len(), "fixture lines skipped");
                }
                let adapter = Arc::new(adapter);
                adapters.insert(source.fixture.clone(), adapter.clone());
                adapter
            }
        };
        fetcher.add(spec, adapter as Arc<dyn SourceAdapter>, start);
    }
    Ok(fetcher)
}

fn read_input(path: &Path) -> Result<String, CliError> {
    if path == Path::new("-") {
        std::io::read_to_string(std::io::stdin()).map_err(io_err)
    } else {
        std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }
}

fn parse_profiles(text: &str, origin: &Path) -> Result<Vec<PatientProfile>, CliError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::Data(format!("{}:{}: {e}", origin.display(), i + 1)))
        })
        .collect()
}

#[derive(Debug, Default, Serialize)]
pub struct IngestSummary {
    pub patients: usize,
    pub stored: usize,
    pub duplicates: usize,
    pub conflicts: usize,
    pub rejected: Vec<RejectedLine>,
}

#[derive(Debug, Serialize)]
pub struct RejectedLine {
    pub file: PathBuf,
    pub line: usize,
    pub reason: String,
}

/// Imports patient profiles and canonical observation NDJSON. Valid lines are
/// kept even when others are rejected; rejections make the command fail with
/// a data error after the summary is printed.
pub fn ingest(cfg: &ApiConfig, files: &[PathBuf], profiles: &[PathBuf], out: &mut dyn Write) -> Result<(), CliError> {
    let platform = open_platform(cfg)?;
    let mut summary = IngestSummary::default();
    for path in profiles {
        let list = parse_profiles(&read_input(path)?, path)?;
        summary.patients += list.len();
        platform.store().register_patients(list)?;
    }
    for path in files {
        let text = read_input(path)?;
        let (report, rejected) = platform.store().import_ndjson(&text)?;
        summary.stored += report.stored;
        summary.duplicates += report.duplicates;
        summary.conflicts += report.conflicts;
        summary.rejected.extend(rejected.into_iter().map(|(index, reason)| RejectedLine {
            file: path.clone(),
            line: nth_nonblank_line(&text, index),
            reason: reason.to_string(),
        }));
    }
    write_json(out, &summary)?;
    if summary.rejected.is_empty() {
        Ok(())
    } else {
        Err(CliError::Data(format!("{} lines rejected", summary.rejected.len())))
    }
}

/// 1-based file line of the `index`th non-blank line.
fn nth_nonblank_line(text: &str, index: usize) -> usize {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .nth(index)
        .map_or(index + 1, |(i, _)| i + 1)
}

#[derive(Debug, Serialize)]
struct PatientAnalysis {
    summary: asthmon_core::platform::SummaryView,
    triggers: asthmon_core::platform::TriggersView,
}

/// Per-patient summary and trigger reports, or the cohort overview.
pub fn analyze(
    cfg: &ApiConfig,
    patient: Option<&str>,
    learning_end: Option<NaiveDate>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let platform = open_platform(cfg)?;
    match patient {
        Some(id) => {
            let id = PatientId::new(id);
            let analysis = PatientAnalysis { summary: platform.summary(&id)?, triggers: platform.triggers(&id, learning_end)? };
            write_json(out, &analysis)
        }
        None => write_json(out, &platform.cohort_overview()?),
    }
}

pub struct SimulateArgs {
    pub season: Season,
    pub patients: usize,
    pub seed: u64,
    pub days: Option<usize>,
    /// Directory for `observations.ndjson`, `patients.ndjson` and
    /// `truth.json`. Without it, observations go to `out`.
    pub out_dir: Option<PathBuf>,
    /// Also load the cohort into the configured store.
    pub load: bool,
}

pub fn simulate(cfg: &ApiConfig, args: &SimulateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if args.patients == 0 {
        return Err(CliError::Data("--patients must be at least 1".into()));
    }
    let mut spec = CohortSpec::new(args.season, args.patients, args.seed);
    if let Some(days) = args.days {
        if days == 0 {
            return Err(CliError::Data("--days must be at least 1".into()));
        }
        spec.deployment_days = days;
    }
    let cohort = generate_cohort(&spec, &cfg.analysis.seasons, &cfg.analysis.healthy);
    let observations: String = cohort.observations().iter().map(|o| o.to_json_line() + "\n").collect();
    let profiles: String = cohort
        .profiles()
        .iter()
        .map(|p| serde_json::to_string(p).expect("profile serializes") + "\n")
        .collect();

    if args.load {
        let platform = open_platform(cfg)?;
        platform.store().register_patients(cohort.profiles())?;
        platform.store().upsert_batch(cohort.observations())?;
    }
    match &args.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(io_err)?;
            std::fs::write(dir.join("observations.ndjson"), observations).map_err(io_err)?;
            std::fs::write(dir.join("patients.ndjson"), profiles).map_err(io_err)?;
            let truth = serde_json::to_string_pretty(&cohort.patients).map_err(|e| CliError::Runtime(e.to_string()))?;
            std::fs::write(dir.join("truth.json"), truth + "\n").map_err(io_err)?;
            writeln!(out, "{} patients written to {}", cohort.patients.len(), dir.display()).map_err(io_err)
        }
        None if args.load => writeln!(out, "{} patients loaded", cohort.patients.len()).map_err(io_err),
        None => out.write_all(observations.as_bytes()).map_err(io_err),
    }
}

pub enum ReportTarget {
    Patient(String),
    Season(Season),
}

pub fn report(
    cfg: &ApiConfig,
    target: &ReportTarget,
    format: ReportFormat,
    options: &ReportOptions,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let platform = open_platform(cfg)?;
    let text = match target {
        ReportTarget::Patient(id) => platform.report(&PatientId::new(id.as_str()), options)?.render(format),
        ReportTarget::Season(season) => render_cohort(&platform.cohort(*season)?, format),
    };
    write!(out, "{text}").map_err(io_err)?;
    if !text.ends_with('\n') {
        writeln!(out).map_err(io_err)?;
    }
    Ok(())
}

/// Dumps observations (all streams, or one) or patient profiles as NDJSON.
pub fn export(cfg: &ApiConfig, stream: Option<Stream>, patients: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let platform = open_platform(cfg)?;
    let state = platform.store().read();
    let text = if patients {
        state.patients().map(|p| serde_json::to_string(p).expect("profile serializes") + "\n").collect()
    } else {
        match stream {
            Some(s) => state.export_stream(s),
            None => state.observations_ndjson(),
        }
    };
    out.write_all(text.as_bytes()).map_err(io_err)
}

/// Evaluates and stores the alerts for `date`.
pub fn alerts(cfg: &ApiConfig, date: NaiveDate, out: &mut dyn Write) -> Result<(), CliError> {
    let platform = open_platform(cfg)?;
    write_json(out, &platform.run_alerts(date)?)
}

/// Replays the configured fixture sources from `from` up to `until`.
pub fn fetch(cfg: &ApiConfig, from: DateTime<Utc>, until: DateTime<Utc>, out: &mut dyn Write) -> Result<(), CliError> {
    if until < from {
        return Err(CliError::Data(format!("--until {until} is before --from {from}")));
    }
    let platform = open_platform(cfg)?;
    let mut fetcher = build_fetcher(cfg, &platform, from)?;
    let report = fetcher.run_until(until).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_json(out, &report)
}

/// Serves the API until interrupted, polling fixture sources in the
/// background when any are configured.
pub async fn serve(cfg: ApiConfig) -> Result<(), CliError> {
    let platform = open_platform(&cfg)?;
    if !cfg.fetcher.sources.is_empty() {
        let start = cfg.fetch_start.unwrap_or_else(Utc::now);
        let fetcher = build_fetcher(&cfg, &platform, start)?;
        tokio::spawn(poll_sources(fetcher, start, cfg.fetch_interval_secs));
    }
    let listener = tokio::net::TcpListener::bind(cfg.bind)
        .await
        .map_err(|e| CliError::Runtime(format!("cannot bind {}: {e}", cfg.bind)))?;
    tracing::info!(addr = %cfg.bind, store = %cfg.store_path.display(), "serving");
    axum::serve(listener, crate::api::router(crate::api::AppState::new(platform)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(io_err)
}

/// Advances the replay clock by the wall time elapsed since startup, so a
/// historical `fetch_start` replays at real speed.
async fn poll_sources(fetcher: Fetcher, start: DateTime<Utc>, interval_secs: u64) {
    let began = Utc::now();
    let fetcher = Arc::new(std::sync::Mutex::new(fetcher));
    let mut ticker = tokio::time::interval(std::time::Duration::from_secs(interval_secs));
    loop {
        ticker.tick().await;
        let now = start + (Utc::now() - began);
        let fetcher = fetcher.clone();
        let result = tokio::task::spawn_blocking(move || fetcher.lock().unwrap_or_else(|e| e.into_inner()).run_until(now)).await;
        match result {
            Ok(Ok(r)) if !r.unavailable.is_empty() => tracing::warn!(sources = ?r.unavailable, "sources unavailable"),
            Ok(Ok(r)) => tracing::debug!(polled = r.polled.len(), stored = r.stored, "fetch tick"),
            Ok(Err(e)) => tracing::warn!(error = %e, "fetch tick failed"),
            Err(e) => tracing::error!(error = %e, "fetch task panicked"),
        }
    }
}
