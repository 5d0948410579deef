//! One entry point over store, gateway and analytics. The HTTP API, the
//! CLI and the Python bindings all go through it, so every surface computes
//! with the same configuration.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alerting::{evaluate_alerts, Alert};
use crate::attribution::{
    cohort_summary, default_periods, learn_and_predict, patient_outcome, period_report, split_at, AttributionError,
    CohortSummary, PatientOutcome, PredictionEvaluation, SeasonAssignment, TriggerReport,
};
use crate::config::AnalysisConfig;
use crate::daily::DayRecord;
use crate::episode::{eligibility, patient_summary, EpisodeFlag, Eligibility, PatientSummary};
use crate::gateway::{Gateway, TokenRegistry};
use crate::model::{DateRange, PatientId, PatientProfile};
use crate::report::{patient_report, PatientReport, ReportError, ReportOptions};
use crate::season::Season;
use crate::store::{Store, StoreError};
use crate::timeline::PatientTimeline;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlatformError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Attribution(#[from] AttributionError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl PlatformError {
    /// Errors caused by the request or the data rather than the service.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, PlatformError::Store(StoreError::StorageUnavailable(_)) | PlatformError::Config(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineView {
    pub patient_id: PatientId,
    pub range: DateRange,
    pub days: Vec<DayRecord>,
    pub flags: Vec<EpisodeFlag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryView {
    pub profile: PatientProfile,
    pub answer_rate: f64,
    pub eligibility: Eligibility,
    pub season: SeasonAssignment,
    pub summary: PatientSummary,
}

/// Reports for a learning/prediction pair. `evaluation` is absent when the
/// learning period is too thin to rank triggers with confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggersView {
    pub learning: TriggerReport,
    pub prediction: Option<TriggerReport>,
    pub evaluation: Option<PredictionEvaluation>,
    pub note: Option<String>,
}

#[derive(Clone)]
pub struct Platform {
    gateway: Gateway,
    cfg: Arc<AnalysisConfig>,
}

impl Platform {
    pub fn new(store: Arc<Store>, tokens: Arc<TokenRegistry>, cfg: AnalysisConfig) -> Result<Self, PlatformError> {
        cfg.validate().map_err(PlatformError::Config)?;
        Ok(Self { gateway: Gateway::new(store, tokens), cfg: Arc::new(cfg) })
    }

    pub fn in_memory(cfg: AnalysisConfig) -> Result<Self, PlatformError> {
        let store = Arc::new(Store::with_clock(cfg.clock));
        Self::new(store, Arc::new(TokenRegistry::new()), cfg)
    }

    pub fn open(path: impl AsRef<Path>, cfg: AnalysisConfig) -> Result<Self, PlatformError> {
        cfg.validate().map_err(PlatformError::Config)?;
        let store = Arc::new(Store::open(path, cfg.clock)?);
        Self::new(store, Arc::new(TokenRegistry::new()), cfg)
    }

    pub fn store(&self) -> &Arc<Store> {
        self.gateway.store()
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn config(&self) -> &AnalysisConfig {
        &self.cfg
    }

    pub fn patients(&self) -> Vec<PatientProfile> {
        self.store().read().patients().cloned().collect()
    }

    pub fn timeline(&self, patient: &PatientId) -> Result<PatientTimeline, PlatformError> {
        Ok(PatientTimeline::load(&self.store().read(), patient, &self.cfg)?)
    }

    pub fn timeline_view(
        &self,
        patient: &PatientId,
        from: Option<NaiveDate>,
        to: Option<NaiveDate>,
    ) -> Result<TimelineView, PlatformError> {
        let tl = self.timeline(patient)?;
        let deployment = tl.deployment();
        let range = DateRange::new(from.unwrap_or(deployment.start), to.unwrap_or(deployment.end));
        Ok(TimelineView {
            patient_id: patient.clone(),
            range,
            days: tl.days.values().filter(|d| range.contains(d.date)).cloned().collect(),
            flags: tl.flags.values().filter(|f| range.contains(f.date)).cloned().collect(),
        })
    }

    pub fn episodes(&self, patient: &PatientId) -> Result<Vec<EpisodeFlag>, PlatformError> {
        Ok(self.timeline(patient)?.flags.into_values().collect())
    }

    pub fn summary(&self, patient: &PatientId) -> Result<SummaryView, PlatformError> {
        let tl = self.timeline(patient)?;
        let deployment = tl.deployment();
        let days: Vec<DayRecord> = tl.days.values().cloned().collect();
        let outcome = patient_outcome(&tl, &self.cfg);
        Ok(SummaryView {
            answer_rate: outcome.answer_rate,
            eligibility: eligibility(outcome.answer_rate, self.cfg.min_answer_rate),
            season: outcome.season,
            summary: patient_summary(patient, deployment, &days, &tl.baselines),
            profile: tl.profile,
        })
    }

    pub fn triggers(&self, patient: &PatientId, learning_end: Option<NaiveDate>) -> Result<TriggersView, PlatformError> {
        let tl = self.timeline(patient)?;
        let (learning, prediction) = match learning_end {
            Some(end) => split_at(&tl, end)?,
            None => default_periods(&tl, &self.cfg)
                .ok_or_else(|| AttributionError::EmptyPeriod(tl.deployment()))?,
        };
        let learning_report = period_report(&tl, &learning, &self.cfg)?;
        let prediction_report = match period_report(&tl, &prediction, &self.cfg) {
            Ok(r) => Some(r),
            Err(AttributionError::EmptyPeriod(_)) => None,
            Err(e) => return Err(e.into()),
        };
        let (evaluation, note) = match learn_and_predict(&tl, &learning, &prediction, &self.cfg) {
            Ok(e) => (Some(e), None),
            Err(e @ AttributionError::InsufficientEpisodes { .. }) => (None, Some(e.to_string())),
            Err(e @ AttributionError::InvalidPeriod(_)) => (None, Some(e.to_string())),
            Err(e) => return Err(e.into()),
        };
        Ok(TriggersView { learning: learning_report, prediction: prediction_report, evaluation, note })
    }

    pub fn outcomes(&self) -> Result<Vec<PatientOutcome>, PlatformError> {
        let state = self.store().read();
        state
            .patients()
            .map(|p| Ok(patient_outcome(&PatientTimeline::load(&state, &p.patient_id, &self.cfg)?, &self.cfg)))
            .collect()
    }

    pub fn cohort(&self, season: Season) -> Result<CohortSummary, PlatformError> {
        Ok(cohort_summary(season, &self.outcomes()?)?)
    }

    pub fn report(&self, patient: &PatientId, options: &ReportOptions) -> Result<PatientReport, PlatformError> {
        Ok(patient_report(&self.timeline(patient)?, &self.cfg, options)?)
    }

    /// Evaluates alerts for every patient deployed on `date` and stores new
    /// ones. Returns the alerts for that date; re-running is a no-op.
    pub fn run_alerts(&self, date: NaiveDate) -> Result<Vec<Alert>, PlatformError> {
        let mut all = Vec::new();
        {
            let state = self.store().read();
            for profile in state.patients() {
                if !profile.deployment().contains(date) {
                    continue;
                }
                let tl = PatientTimeline::load(&state, &profile.patient_id, &self.cfg)?;
                let learned = default_periods(&tl, &self.cfg)
                    .and_then(|(l, _)| period_report(&tl, &l, &self.cfg).ok())
                    .map(|r| r.major_triggers)
                    .unwrap_or_default();
                let forecast = state.daily_aggregate(&profile.region, date);
                let yesterday = state.day_record(&profile.patient_id, &profile.region, date - Duration::days(1));
                all.extend(evaluate_alerts(profile, date, &forecast, &yesterday, &learned, &self.cfg.healthy));
            }
        }
        self.store().put_alerts(all.clone())?;
        Ok(all)
    }

    pub fn alerts(
        &self,
        patient: Option<&PatientId>,
        from: Option<NaiveDate>,
        to: Option<NaiveDate>,
    ) -> Vec<Alert> {
        self.store()
            .read()
            .alerts()
            .filter(|a| patient.is_none_or(|p| a.patient_id == *p))
            .filter(|a| from.is_none_or(|f| a.date >= f) && to.is_none_or(|t| a.date <= t))
            .cloned()
            .collect()
    }

    /// Counts per eligibility and season, used by `analyze` without a
    /// patient.
    pub fn cohort_overview(&self) -> Result<BTreeMap<Season, CohortSummary>, PlatformError> {
        let outcomes = self.outcomes()?;
        let mut out = BTreeMap::new();
        for season in Season::ALL {
            match cohort_summary(season, &outcomes) {
                Ok(s) => {
                    out.insert(season, s);
                }
                Err(AttributionError::EmptyCohort(_)) => {}
                Err(e) => return Err(e.into()),
            }
        }
        Ok(out)
    }
}
