//! Scheduled polling of environmental sources through pluggable adapters.
//!
//! Only fixture-backed adapters ship here; a live adapter implements
//! [`SourceAdapter`] and plugs into the same [`Fetcher`].

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::model::{EnvParameter, EnvironmentSample, IndoorAirSample, PatientId};
use crate::observation::{Observation, Payload};
use crate::store::{Store, StoreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Pollen,
    AqiPm25,
    AqiOzone,
    WeatherTempHumidity,
    IndoorAir,
}

impl Source {
    pub const ALL: [Source; 5] =
        [Source::Pollen, Source::AqiPm25, Source::AqiOzone, Source::WeatherTempHumidity, Source::IndoorAir];

    pub fn default_cadence(self) -> Duration {
        match self {
            Source::Pollen => Duration::hours(12),
            Source::AqiPm25 | Source::AqiOzone | Source::WeatherTempHumidity => Duration::hours(1),
            Source::IndoorAir => Duration::minutes(5),
        }
    }

    /// Outdoor parameters this source produces; empty for indoor air.
    pub fn parameters(self) -> &'static [EnvParameter] {
        match self {
            Source::Pollen => &[EnvParameter::Pollen],
            Source::AqiPm25 => &[EnvParameter::Pm25],
            Source::AqiOzone => &[EnvParameter::Ozone],
            Source::WeatherTempHumidity => &[EnvParameter::Temperature, EnvParameter::Humidity],
            Source::IndoorAir => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Region(String),
    Patient(PatientId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceSpec {
    pub source: Source,
    pub cadence: Duration,
    pub scope: Scope,
}

impl SourceSpec {
    pub fn new(source: Source, scope: Scope) -> Self {
        Self { source, cadence: source.default_cadence(), scope }
    }

    pub fn with_cadence(mut self, cadence: Duration) -> Result<Self, String> {
        if cadence <= Duration::zero() {
            return Err(format!("{:?}: cadence must be positive", self.source));
        }
        self.cadence = cadence;
        Ok(self)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FetchError {
    #[error("adapter unavailable: {0}")]
    AdapterUnavailable(String),
    #[error("unparseable sample at line {line}: {message}")]
    AdapterParseError { line: usize, message: String },
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sample {
    Outdoor(EnvironmentSample),
    Indoor(IndoorAirSample),
}

impl Sample {
    pub fn timestamp(&self) -> DateTime<Utc> {
        match self {
            Sample::Outdoor(s) => s.timestamp,
            Sample::Indoor(s) => s.timestamp,
        }
    }

    fn matches(&self, spec: &SourceSpec) -> bool {
        match (self, &spec.scope) {
            (Sample::Outdoor(s), Scope::Region(r)) => s.region == *r && spec.source.parameters().contains(&s.parameter),
            (Sample::Indoor(s), Scope::Patient(p)) => spec.source == Source::IndoorAir && s.patient_id == *p,
            _ => false,
        }
    }

    pub fn into_observation(self, received_at: DateTime<Utc>) -> Observation {
        let payload = match self {
            Sample::Outdoor(s) => Payload::OutdoorEnv(s),
            Sample::Indoor(s) => Payload::IndoorEnv(s),
        };
        Observation::new(payload, received_at)
    }
}

/// Next due time per source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PollPlan {
    next_due: BTreeMap<Source, DateTime<Utc>>,
    cadence: BTreeMap<Source, Duration>,
}

impl PollPlan {
    /// Every source first becomes due at `start`.
    pub fn new<'a>(specs: impl IntoIterator<Item = &'a SourceSpec>, start: DateTime<Utc>) -> Self {
        let mut plan = Self { next_due: BTreeMap::new(), cadence: BTreeMap::new() };
        for spec in specs {
            plan.next_due.insert(spec.source, start);
            plan.cadence.insert(spec.source, spec.cadence);
        }
        plan
    }

    pub fn next_due(&self, source: Source) -> Option<DateTime<Utc>> {
        self.next_due.get(&source).copied()
    }

    pub fn due(&self, now: DateTime<Utc>) -> Vec<Source> {
        self.next_due.iter().filter(|(_, &t)| t <= now).map(|(&s, _)| s).collect()
    }

    pub fn advance(&mut self, source: Source) {
        if let (Some(t), Some(c)) = (self.next_due.get_mut(&source), self.cadence.get(&source)) {
            *t += *c;
        }
    }

    /// Due sources and the plan with each of them advanced by one cadence.
    /// A backlog drains one interval per tick.
    pub fn schedule_tick(&self, now: DateTime<Utc>) -> (Vec<Source>, PollPlan) {
        let due = self.due(now);
        let mut next = self.clone();
        for &s in &due {
            next.advance(s);
        }
        (due, next)
    }
}

pub trait SourceAdapter: Send + Sync {
    /// Samples with `since < timestamp <= until` for the spec's scope.
    fn fetch(&self, spec: &SourceSpec, since: DateTime<Utc>, until: DateTime<Utc>) -> Result<Vec<Sample>, FetchError>;
}

/// Replays samples from an NDJSON fixture. Availability can be toggled to
/// emulate a vendor outage.
#[derive(Debug, Default)]
pub struct FixtureAdapter {
    samples: Vec<Sample>,
    available: AtomicBool,
}

impl FixtureAdapter {
    pub fn new(mut samples: Vec<Sample>) -> Self {
        samples.sort_by_key(Sample::timestamp);
        Self { samples, available: AtomicBool::new(true) }
    }

    /// Parses a fixture, dropping and logging lines that fail to parse.
    pub fn from_ndjson(text: &str) -> (Self, Vec<FetchError>) {
        let mut samples = Vec::new();
        let mut dropped = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            match serde_json::from_str::<Sample>(line) {
                Ok(s) => samples.push(s),
                Err(e) => {
                    warn!(line = i + 1, error = %e, "dropping fixture sample");
                    dropped.push(FetchError::AdapterParseError { line: i + 1, message: e.to_string() });
                }
            }
        }
        (Self::new(samples), dropped)
    }

    pub fn set_available(&self, available: bool) {
        self.available.store(available, Ordering::SeqCst);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

impl SourceAdapter for FixtureAdapter {
    fn fetch(&self, spec: &SourceSpec, since: DateTime<Utc>, until: DateTime<Utc>) -> Result<Vec<Sample>, FetchError> {
        if !self.available.load(Ordering::SeqCst) {
            return Err(FetchError::AdapterUnavailable(format!("{:?} fixture offline", spec.source)));
        }
        let lo = self.samples.partition_point(|s| s.timestamp() <= since);
        let hi = self.samples.partition_point(|s| s.timestamp() <= until);
        Ok(self.samples[lo..hi].iter().filter(|s| s.matches(spec)).cloned().collect())
    }
}

/// Polls one source for the window `(since, now]`.
pub fn poll_source(
    adapter: &dyn SourceAdapter,
    spec: &SourceSpec,
    since: DateTime<Utc>,
    now: DateTime<Utc>,
) -> Result<Vec<Sample>, FetchError> {
    adapter.fetch(spec, since, now)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TickReport {
    pub polled: Vec<Source>,
    pub unavailable: Vec<Source>,
    pub samples: usize,
    pub stored: usize,
}

struct Feed {
    spec: SourceSpec,
    adapter: Arc<dyn SourceAdapter>,
}

/// Drives a [`PollPlan`] against adapters and forwards samples to the store.
/// Each successful poll covers exactly one cadence interval ending at the
/// due time, so catch-up ticks backfill an outage one interval at a time.
pub struct Fetcher {
    feeds: BTreeMap<Source, Vec<Feed>>,
    plan: PollPlan,
    store: Arc<Store>,
}

impl Fetcher {
    pub fn new(store: Arc<Store>, start: DateTime<Utc>) -> Self {
        Self { feeds: BTreeMap::new(), plan: PollPlan::new([], start), store }
    }

    /// Adds a feed. Specs for the same source share one cadence and schedule.
    pub fn add(&mut self, spec: SourceSpec, adapter: Arc<dyn SourceAdapter>, start: DateTime<Utc>) {
        if let std::collections::btree_map::Entry::Vacant(e) = self.plan.next_due.entry(spec.source) {
            e.insert(start);
            self.plan.cadence.insert(spec.source, spec.cadence);
        }
        self.feeds.entry(spec.source).or_default().push(Feed { spec, adapter });
    }

    pub fn plan(&self) -> &PollPlan {
        &self.plan
    }

    pub fn tick(&mut self, now: DateTime<Utc>) -> Result<TickReport, FetchError> {
        let mut report = TickReport::default();
        for source in self.plan.due(now) {
            let due = self.plan.next_due[&source];
            let since = due - self.plan.cadence[&source];
            let mut batch = Vec::new();
            let mut failed = false;
            for feed in self.feeds.get(&source).into_iter().flatten() {
                match poll_source(feed.adapter.as_ref(), &feed.spec, since, due) {
                    Ok(samples) => batch.extend(samples),
                    Err(FetchError::AdapterUnavailable(msg)) => {
                        warn!(?source, %msg, "source unavailable; will retry");
                        failed = true;
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
            if failed {
                report.unavailable.push(source);
                continue;
            }
            report.samples += batch.len();
            let observations = batch.into_iter().map(|s| s.into_observation(now)).collect();
            let outcomes = self.store.upsert_batch(observations)?;
            report.stored += outcomes.iter().filter(|o| !matches!(o, crate::store::UpsertOutcome::Duplicate)).count();
            self.plan.advance(source);
            report.polled.push(source);
        }
        Ok(report)
    }

    /// Ticks until nothing is due at `now`.
    pub fn run_until(&mut self, now: DateTime<Utc>) -> Result<TickReport, FetchError> {
        let mut total = TickReport::default();
        loop {
            let r = self.tick(now)?;
            if r.polled.is_empty() {
                total.unavailable = r.unavailable;
                return Ok(total);
            }
            total.polled.extend(r.polled);
            total.samples += r.samples;
            total.stored += r.stored;
        }
    }
}

/// One `[[sources]]` entry of the fetcher config file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub source: Source,
    #[serde(default)]
    pub region: Option<String>,
    #[serde(default)]
    pub patient_id: Option<PatientId>,
    /// Overrides the default cadence.
    #[serde(default)]
    pub cadence_secs: Option<u64>,
    pub fixture: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FetcherConfig {
    #[serde(default)]
    pub sources: Vec<SourceConfig>,
}

impl SourceConfig {
    pub fn spec(&self) -> Result<SourceSpec, String> {
        let scope = match (self.source, &self.region, &self.patient_id) {
            (Source::IndoorAir, None, Some(p)) => Scope::Patient(p.clone()),
            (Source::IndoorAir, _, _) => return Err("indoor_air needs patient_id and no region".into()),
            (_, Some(r), None) => Scope::Region(r.clone()),
            (s, _, _) => return Err(format!("{s:?} needs region and no patient_id")),
        };
        let spec = SourceSpec::new(self.source, scope);
        match self.cadence_secs {
            Some(secs) => spec.with_cadence(Duration::seconds(secs as i64)),
            None => Ok(spec),
        }
    }
}

impl FetcherConfig {
    pub fn specs(&self) -> Result<Vec<SourceSpec>, String> {
        self.sources.iter().map(SourceConfig::spec).collect()
    }
}
