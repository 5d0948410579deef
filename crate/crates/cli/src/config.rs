//! Service configuration, read from a TOML file named by `ASTHMON_CONFIG`.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use asthmon_core::config::AnalysisConfig;
use asthmon_core::fetcher::FetcherConfig;
use asthmon_core::gateway::DeviceToken;
use asthmon_core::season::SeasonConfig;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const CONFIG_ENV: &str = "ASTHMON_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApiConfig {
    pub bind: SocketAddr,
    /// Journal file. Created on first use.
    pub store_path: PathBuf,
    /// Optional TOML file replacing `analysis.seasons`.
    pub seasons_path: Option<PathBuf>,
    pub analysis: AnalysisConfig,
    /// Device tokens accepted by `POST /v1/observations`.
    pub tokens: Vec<DeviceToken>,
    pub fetcher: FetcherConfig,
    /// How often `serve` polls the configured sources.
    pub fetch_interval_secs: u64,
    /// Replay clock origin for fixture sources; defaults to service start.
    pub fetch_start: Option<DateTime<Utc>>,
}

impl Default for ApiConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            store_path: PathBuf::from("asthmon-store.ndjson"),
            seasons_path: None,
            analysis: AnalysisConfig::default(),
            tokens: Vec::new(),
            fetcher: FetcherConfig::default(),
            fetch_interval_secs: 60,
            fetch_start: None,
        }
    }
}

impl ApiConfig {
    /// Loads and validates. Relative paths inside the file resolve against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: ApiConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.store_path = base.join(&cfg.store_path);
        if let Some(seasons) = &mut cfg.seasons_path {
            *seasons = base.join(&*seasons);
        }
        for source in &mut cfg.fetcher.sources {
            source.fixture = base.join(&source.fixture);
        }
        cfg.resolve()
    }

    /// Uses the file named by `explicit` or `ASTHMON_CONFIG`, else defaults.
    pub fn from_env(explicit: Option<&Path>) -> Result<Self, CliError> {
        match explicit.map(Path::to_path_buf).or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from)) {
            Some(path) => Self::load(&path),
            None => Self::default().resolve(),
        }
    }

    fn resolve(mut self) -> Result<Self, CliError> {
        if let Some(path) = &self.seasons_path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            self.analysis.seasons =
                toml::from_str::<SeasonConfig>(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        }
        self.analysis.validate().map_err(CliError::Config)?;
        self.fetcher.specs().map_err(CliError::Config)?;
        if self.fetch_interval_secs == 0 {
            return Err(CliError::Config("fetch_interval_secs must be >= 1".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for t in &self.tokens {
            if t.token.is_empty() {
                return Err(CliError::Config("device token secret is empty".into()));
            }
            if !seen.insert(&t.token) {
                return Err(CliError::Config(format!("device token for {} listed twice", t.bound_patient_id)));
            }
        }
        Ok(self)
    }
}
