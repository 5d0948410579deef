use std::path::PathBuf;
use std::process::ExitCode;

use asthmon_cli::commands::{self, ReportTarget, SimulateArgs};
use asthmon_cli::config::CONFIG_ENV;
use asthmon_cli::{ApiConfig, CliError};
use asthmon_core::report::{ReportFormat, ReportOptions};
use asthmon_core::{Season, Stream};
use chrono::{DateTime, NaiveDate, Utc};
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "asthmon", version, about = "Asthma monitoring: ingest, analyze, simulate, report")]
struct Cli {
    /// Config file (TOML).
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the HTTP API.
    Serve,
    /// Import canonical observation NDJSON ("-" reads stdin).
    Ingest {
        files: Vec<PathBuf>,
        /// Patient profile NDJSON, registered before observations.
        #[arg(long = "profiles")]
        profiles: Vec<PathBuf>,
    },
    /// Summarize and attribute one patient, or every season cohort.
    Analyze {
        #[arg(long)]
        patient: Option<String>,
        #[arg(long)]
        learning_end: Option<NaiveDate>,
    },
    /// Generate a synthetic cohort with planted triggers.
    Simulate {
        #[arg(long)]
        season: Season,
        #[arg(long)]
        patients: usize,
        #[arg(long)]
        seed: u64,
        /// Deployment length in days.
        #[arg(long)]
        days: Option<usize>,
        /// Write observations, profiles and ground truth to this directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Load the cohort into the configured store.
        #[arg(long)]
        load: bool,
    },
    /// Render a patient or season cohort report.
    Report(ReportArgs),
    /// Dump the store as NDJSON.
    Export {
        #[arg(long)]
        stream: Option<Stream>,
        /// Export patient profiles instead of observations.
        #[arg(long, conflicts_with = "stream")]
        patients: bool,
    },
    /// Evaluate and store alerts for one day.
    Alerts {
        #[arg(long)]
        date: NaiveDate,
    },
    /// Replay the configured fixture sources over a time window.
    Fetch {
        #[arg(long)]
        from: DateTime<Utc>,
        #[arg(long)]
        until: DateTime<Utc>,
    },
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long, required_unless_present = "season", conflicts_with = "season")]
    patient: Option<String>,
    #[arg(long)]
    season: Option<Season>,
    #[arg(long, default_value = "markdown")]
    format: ReportFormat,
    #[arg(long)]
    learning_end: Option<NaiveDate>,
    /// Analyze pollen-present and pollen-absent stretches separately.
    #[arg(long)]
    by_pollen_segment: bool,
    /// Learning days per pollen segment.
    #[arg(long, requires = "by_pollen_segment")]
    learning_days: Option<usize>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = ApiConfig::from_env(cli.config.as_deref())?;
    let stdout = std::io::stdout();
    let out = &mut stdout.lock();
    match cli.command {
        Command::Serve => tokio::runtime::Runtime::new()
            .map_err(|e| CliError::Runtime(e.to_string()))?
            .block_on(commands::serve(cfg)),
        Command::Ingest { files, profiles } => commands::ingest(&cfg, &files, &profiles, out),
        Command::Analyze { patient, learning_end } => commands::analyze(&cfg, patient.as_deref(), learning_end, out),
        Command::Simulate { season, patients, seed, days, out: out_dir, load } => {
            commands::simulate(&cfg, &SimulateArgs { season, patients, seed, days, out_dir, load }, out)
        }
        Command::Report(args) => {
            let target = match (args.patient, args.season) {
                (Some(p), _) => ReportTarget::Patient(p),
                (None, Some(s)) => ReportTarget::Season(s),
                (None, None) => unreachable!("clap requires a target"),
            };
            let options = ReportOptions {
                learning_end: args.learning_end,
                by_pollen_segment: args.by_pollen_segment,
                learning_days: args.learning_days,
            };
            commands::report(&cfg, &target, args.format, &options, out)
        }
        Command::Export { stream, patients } => commands::export(&cfg, stream, patients, out),
        Command::Alerts { date } => commands::alerts(&cfg, date, out),
        Command::Fetch { from, until } => commands::fetch(&cfg, from, until, out),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("asthmon: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
