//! Read-only per-patient view used by the analytics: day records over the
//! deployment (plus a look-back window for lagged rules), lung baselines and
//! episode flags.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};

use crate::config::{AnalysisConfig, BaselineWindow};
use crate::daily::{DailyEnvAggregate, DayRecord};
use crate::episode::{detect_episode, Baselines, EpisodeFlag};
use crate::model::{DateRange, PatientProfile, Trigger};
use crate::store::{StoreError, StoreState};

#[derive(Debug, Clone, PartialEq)]
pub struct PatientTimeline {
    pub profile: PatientProfile,
    /// Deployment days plus the look-back days before it.
    pub days: BTreeMap<NaiveDate, DayRecord>,
    pub baselines: Baselines,
    /// Answered deployment days only.
    pub flags: BTreeMap<NaiveDate, EpisodeFlag>,
}

impl PatientTimeline {
    pub fn load(
        state: &StoreState,
        patient: &crate::model::PatientId,
        cfg: &AnalysisConfig,
    ) -> Result<Self, StoreError> {
        let profile = state.patient(patient)?.clone();
        let lookback = i64::from(cfg.prolonged_window.max(1));
        let span = DateRange::new(profile.deployment_start - Duration::days(lookback), profile.deployment_end);
        let days = state
            .day_records(patient, span)?
            .into_iter()
            .map(|d| (d.date, d))
            .collect();
        Ok(Self::from_days(profile, days, cfg))
    }

    /// Builds a timeline from day records, computing baselines and flags.
    pub fn from_days(profile: PatientProfile, days: BTreeMap<NaiveDate, DayRecord>, cfg: &AnalysisConfig) -> Self {
        let deployment = profile.deployment();
        let mut timeline = Self {
            baselines: Baselines::unusable(&profile.patient_id),
            profile,
            days,
            flags: BTreeMap::new(),
        };
        let window = match cfg.baseline_window {
            BaselineWindow::Deployment => Some(deployment),
            BaselineWindow::LearningPeriod => timeline.default_split(cfg).map(|(l, _)| l),
        };
        if let Some(window) = window {
            let in_window = timeline.days.values().filter(|d| window.contains(d.date));
            timeline.baselines = Baselines::from_days(&timeline.profile.patient_id, in_window);
        }
        timeline.flags = timeline
            .days
            .values()
            .filter(|d| deployment.contains(d.date))
            .filter_map(|d| detect_episode(d, &timeline.baselines).ok())
            .map(|f| (f.date, f))
            .collect();
        timeline
    }

    pub fn deployment(&self) -> DateRange {
        self.profile.deployment()
    }

    pub fn day(&self, date: NaiveDate) -> Option<&DayRecord> {
        self.days.get(&date)
    }

    pub fn env(&self, date: NaiveDate) -> Option<&DailyEnvAggregate> {
        self.days.get(&date).map(|d| &d.env)
    }

    pub fn is_answered(&self, date: NaiveDate) -> bool {
        self.days.get(&date).is_some_and(|d| d.answered)
    }

    pub fn is_episode(&self, date: NaiveDate) -> bool {
        self.flags.get(&date).is_some_and(|f| f.is_episode)
    }

    /// Daily maximum of `trigger` outside its healthy range; missing days are
    /// never unhealthy.
    pub fn trigger_unhealthy(&self, cfg: &AnalysisConfig, date: NaiveDate, trigger: Trigger) -> bool {
        self.env(date)
            .and_then(|e| e.trigger_max(trigger))
            .is_some_and(|v| !cfg.healthy.get(trigger).contains(v))
    }

    pub fn answered_in(&self, range: DateRange) -> impl Iterator<Item = &DayRecord> + '_ {
        self.days.values().filter(move |d| d.answered && range.contains(d.date))
    }

    /// First through last answered day within the deployment.
    pub fn analyzed_span(&self) -> Option<DateRange> {
        let mut answered = self.answered_in(self.deployment()).map(|d| d.date);
        let first = answered.next()?;
        let last = answered.last().unwrap_or(first);
        Some(DateRange::new(first, last))
    }

    /// Learning/prediction ranges of the default split of the analyzed span.
    pub fn default_split(&self, cfg: &AnalysisConfig) -> Option<(DateRange, DateRange)> {
        let span = self.analyzed_span()?;
        let learning_days = cfg.learning_split.learning_days(span.len()).max(1);
        let learning_end = span.start + Duration::days(learning_days as i64 - 1);
        Some((
            DateRange::new(span.start, learning_end),
            DateRange::new(learning_end + Duration::days(1), span.end),
        ))
    }
}
