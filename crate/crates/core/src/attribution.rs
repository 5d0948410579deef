//! Environmental trigger attribution.
//!
//! A trigger's daily maximum outside its healthy range on an episode day, or
//! on the calendar day before it, makes that trigger a contributor to the
//! episode. Reports carry both the plain unhealthy-day counts of a period and
//! the episode-conditioned contributor counts; triggers are ranked by the
//! latter.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::AnalysisConfig;
use crate::episode::{eligibility, Eligibility};
use crate::model::{DateRange, EnvParameter, HealthyRanges, PatientId, Trigger};
use crate::season::{Season, SeasonConfig};
use crate::timeline::PatientTimeline;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AttributionError {
    #[error("{0} has no healthy range and is context only")]
    NoHealthyRange(EnvParameter),
    #[error("period {0} contains no answered days")]
    EmptyPeriod(DateRange),
    #[error("learning period has {episode_days} episode days, {required} required")]
    InsufficientEpisodes { episode_days: usize, required: usize },
    #[error("invalid analysis period: {0}")]
    InvalidPeriod(String),
    #[error("no eligible patients in the {0} cohort")]
    EmptyCohort(Season),
}

/// Whether `value` lies outside the healthy range of `parameter`.
pub fn unhealthy(ranges: &HealthyRanges, parameter: EnvParameter, value: f64) -> Result<bool, AttributionError> {
    let trigger = parameter.trigger().ok_or(AttributionError::NoHealthyRange(parameter))?;
    Ok(!ranges.get(trigger).contains(value))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeriodLabel {
    Learning,
    Prediction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisPeriod {
    pub patient_id: PatientId,
    pub label: PeriodLabel,
    pub range: DateRange,
}

impl AnalysisPeriod {
    pub fn new(patient_id: PatientId, label: PeriodLabel, range: DateRange) -> Self {
        Self { patient_id, label, range }
    }

    pub fn learning(patient_id: PatientId, range: DateRange) -> Self {
        Self::new(patient_id, PeriodLabel::Learning, range)
    }

    pub fn prediction(patient_id: PatientId, range: DateRange) -> Self {
        Self::new(patient_id, PeriodLabel::Prediction, range)
    }
}

/// Splits the deployment at `learning_end` (inclusive end of learning).
pub fn split_at(
    timeline: &PatientTimeline,
    learning_end: NaiveDate,
) -> Result<(AnalysisPeriod, AnalysisPeriod), AttributionError> {
    let deployment = timeline.deployment();
    if !deployment.contains(learning_end) {
        return Err(AttributionError::InvalidPeriod(format!(
            "learning end {learning_end} outside deployment {deployment}"
        )));
    }
    let id = timeline.profile.patient_id.clone();
    Ok((
        AnalysisPeriod::learning(id.clone(), DateRange::new(deployment.start, learning_end)),
        AnalysisPeriod::prediction(id, DateRange::new(learning_end + Duration::days(1), deployment.end)),
    ))
}

/// Default split of the analyzed span, see [`crate::config::SplitFraction`].
pub fn default_periods(
    timeline: &PatientTimeline,
    cfg: &AnalysisConfig,
) -> Option<(AnalysisPeriod, AnalysisPeriod)> {
    let (l, p) = timeline.default_split(cfg)?;
    let id = timeline.profile.patient_id.clone();
    Some((AnalysisPeriod::learning(id.clone(), l), AnalysisPeriod::prediction(id, p)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueRange {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerReport {
    pub period: AnalysisPeriod,
    pub answered_days: usize,
    /// Answered days in the period whose daily maximum was unhealthy.
    pub unhealthy_days: BTreeMap<Trigger, usize>,
    pub episode_days: usize,
    /// Episode days with the trigger unhealthy that day or the day before.
    pub contributor_days: BTreeMap<Trigger, usize>,
    /// Episode days with at least one contributor.
    pub explained_days: usize,
    /// Triggers with contributor days, most first; ties go pollen, pm25, ozone.
    pub major_triggers: Vec<Trigger>,
    pub temp_range: Option<ValueRange>,
    pub humidity_range: Option<ValueRange>,
}

impl TriggerReport {
    pub fn top_trigger(&self) -> Option<Trigger> {
        self.major_triggers.first().copied()
    }
}

/// Ranks triggers by count, descending, with the fixed tie-break order.
pub fn rank_triggers(counts: &BTreeMap<Trigger, usize>) -> Vec<Trigger> {
    let mut ranked: Vec<Trigger> = Trigger::ALL.into_iter().filter(|t| counts.get(t).copied().unwrap_or(0) > 0).collect();
    ranked.sort_by(|a, b| counts[b].cmp(&counts[a]).then(a.cmp(b)));
    ranked
}

fn fold_range(acc: Option<ValueRange>, lo: Option<f64>, hi: Option<f64>) -> Option<ValueRange> {
    match (lo, hi) {
        (Some(lo), Some(hi)) => Some(match acc {
            None => ValueRange { min: lo, max: hi },
            Some(r) => ValueRange { min: r.min.min(lo), max: r.max.max(hi) },
        }),
        _ => acc,
    }
}

/// Whether `trigger` was unhealthy on `date` or the calendar day before.
/// The previous day counts even when it was not answered or lies outside the
/// period.
pub fn contributes(timeline: &PatientTimeline, cfg: &AnalysisConfig, date: NaiveDate, trigger: Trigger) -> bool {
    timeline.trigger_unhealthy(cfg, date, trigger) || timeline.trigger_unhealthy(cfg, date - Duration::days(1), trigger)
}

pub fn period_report(
    timeline: &PatientTimeline,
    period: &AnalysisPeriod,
    cfg: &AnalysisConfig,
) -> Result<TriggerReport, AttributionError> {
    if period.patient_id != timeline.profile.patient_id {
        return Err(AttributionError::InvalidPeriod(format!(
            "period belongs to {}, timeline to {}",
            period.patient_id, timeline.profile.patient_id
        )));
    }
    let range = period.range.intersect(&timeline.deployment());
    let mut unhealthy_days: BTreeMap<Trigger, usize> = Trigger::ALL.iter().map(|t| (*t, 0)).collect();
    let mut contributor_days = unhealthy_days.clone();
    let mut answered_days = 0;
    let mut episode_days = 0;
    let mut explained_days = 0;
    let mut temp_range = None;
    let mut humidity_range = None;

    for day in timeline.answered_in(range) {
        answered_days += 1;
        temp_range = fold_range(temp_range, day.env.temp_min, day.env.temp_max);
        humidity_range = fold_range(humidity_range, day.env.humidity_min, day.env.humidity_max);
        for t in Trigger::ALL {
            if timeline.trigger_unhealthy(cfg, day.date, t) {
                *unhealthy_days.get_mut(&t).unwrap() += 1;
            }
        }
        if timeline.is_episode(day.date) {
            episode_days += 1;
            let mut explained = false;
            for t in Trigger::ALL {
                if contributes(timeline, cfg, day.date, t) {
                    *contributor_days.get_mut(&t).unwrap() += 1;
                    explained = true;
                }
            }
            if explained {
                explained_days += 1;
            }
        }
    }
    if answered_days == 0 {
        return Err(AttributionError::EmptyPeriod(period.range));
    }
    let major_triggers = rank_triggers(&contributor_days);
    Ok(TriggerReport {
        period: period.clone(),
        answered_days,
        unhealthy_days,
        episode_days,
        contributor_days,
        explained_days,
        major_triggers,
        temp_range,
        humidity_range,
    })
}

/// Whether at least `prolonged_min` of the `prolonged_window` days strictly
/// before `date` had `trigger` unhealthy. Missing days are not unhealthy.
pub fn prolonged_exposure(timeline: &PatientTimeline, cfg: &AnalysisConfig, date: NaiveDate, trigger: Trigger) -> bool {
    let k = i64::from(cfg.prolonged_window);
    let unhealthy = (1..=k).filter(|back| timeline.trigger_unhealthy(cfg, date - Duration::days(*back), trigger)).count();
    unhealthy >= cfg.prolonged_min as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnexplainedDay {
    pub date: NaiveDate,
    /// Learned triggers with a prolonged run of unhealthy days before this
    /// date. Advisory; never counted as a hit.
    pub prolonged_exposure: Vec<Trigger>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionEvaluation {
    pub learned_triggers: Vec<Trigger>,
    pub learning: TriggerReport,
    pub prediction: TriggerReport,
    pub episode_days: usize,
    pub hit_days: usize,
    pub unexplained_days: Vec<UnexplainedDay>,
    pub false_alarm_days: usize,
}

pub fn learn_and_predict(
    timeline: &PatientTimeline,
    learning: &AnalysisPeriod,
    prediction: &AnalysisPeriod,
    cfg: &AnalysisConfig,
) -> Result<PredictionEvaluation, AttributionError> {
    if learning.label != PeriodLabel::Learning || prediction.label != PeriodLabel::Prediction {
        return Err(AttributionError::InvalidPeriod("periods must be labelled learning then prediction".into()));
    }
    if learning.range.end >= prediction.range.start {
        return Err(AttributionError::InvalidPeriod(format!(
            "learning {} must precede prediction {}",
            learning.range, prediction.range
        )));
    }
    let learned = period_report(timeline, learning, cfg)?;
    if learned.episode_days < cfg.min_learning_episodes || learned.major_triggers.is_empty() {
        return Err(AttributionError::InsufficientEpisodes {
            episode_days: learned.episode_days,
            required: cfg.min_learning_episodes,
        });
    }
    let triggers = learned.major_triggers.clone();
    let predicted = match period_report(timeline, prediction, cfg) {
        Ok(r) => r,
        Err(AttributionError::EmptyPeriod(_)) => TriggerReport {
            period: prediction.clone(),
            answered_days: 0,
            unhealthy_days: Trigger::ALL.iter().map(|t| (*t, 0)).collect(),
            episode_days: 0,
            contributor_days: Trigger::ALL.iter().map(|t| (*t, 0)).collect(),
            explained_days: 0,
            major_triggers: vec![],
            temp_range: None,
            humidity_range: None,
        },
        Err(e) => return Err(e),
    };

    let range = prediction.range.intersect(&timeline.deployment());
    let mut hit_days = 0;
    let mut false_alarm_days = 0;
    let mut unexplained_days = Vec::new();
    for day in timeline.answered_in(range) {
        let covered = triggers.iter().any(|t| contributes(timeline, cfg, day.date, *t));
        if timeline.is_episode(day.date) {
            if covered {
                hit_days += 1;
            } else {
                unexplained_days.push(UnexplainedDay {
                    date: day.date,
                    prolonged_exposure: triggers
                        .iter()
                        .copied()
                        .filter(|t| prolonged_exposure(timeline, cfg, day.date, *t))
                        .collect(),
                });
            }
        } else if covered {
            false_alarm_days += 1;
        }
    }
    Ok(PredictionEvaluation {
        learned_triggers: triggers,
        episode_days: predicted.episode_days,
        learning: learned,
        prediction: predicted,
        hit_days,
        unexplained_days,
        false_alarm_days,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PollenPresence {
    Absent,
    Present,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PollenSegment {
    pub presence: PollenPresence,
    pub range: DateRange,
}

/// Merges runs shorter than `min_run` into their neighbours, shortest and
/// earliest first, until every run is long enough or one run remains.
pub fn smooth_runs(flags: &[bool], min_run: usize) -> Vec<(bool, usize)> {
    let mut runs: Vec<(bool, usize)> = Vec::new();
    for &f in flags {
        match runs.last_mut() {
            Some((v, n)) if *v == f => *n += 1,
            _ => runs.push((f, 1)),
        }
    }
    while runs.len() > 1 {
        let Some((idx, _)) = runs
            .iter()
            .enumerate()
            .filter(|(_, (_, n))| *n < min_run)
            .min_by_key(|(i, (_, n))| (*n, *i))
        else {
            break;
        };
        runs[idx].0 = !runs[idx].0;
        let mut merged: Vec<(bool, usize)> = Vec::with_capacity(runs.len());
        for (v, n) in runs {
            match merged.last_mut() {
                Some((mv, mn)) if *mv == v => *mn += n,
                _ => merged.push((v, n)),
            }
        }
        runs = merged;
    }
    runs
}

pub fn segment_by_pollen(timeline: &PatientTimeline, cfg: &AnalysisConfig) -> Vec<PollenSegment> {
    let deployment = timeline.deployment();
    let flags: Vec<bool> = deployment
        .days()
        .map(|d| timeline.env(d).and_then(|e| e.pollen_max).is_some_and(|p| p > 0.0))
        .collect();
    let mut start = deployment.start;
    smooth_runs(&flags, cfg.pollen_smoothing_days as usize)
        .into_iter()
        .map(|(present, n)| {
            let range = DateRange::new(start, start + Duration::days(n as i64 - 1));
            start += Duration::days(n as i64);
            PollenSegment {
                presence: if present { PollenPresence::Present } else { PollenPresence::Absent },
                range,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeasonAssignment {
    pub season: Season,
    /// Another season covers at least a quarter of the deployment.
    pub spanning: bool,
    pub day_counts: BTreeMap<Season, usize>,
}

/// Season holding most deployment days; a tie goes to the season reached
/// first during the deployment.
pub fn assign_season(deployment: DateRange, seasons: &SeasonConfig) -> SeasonAssignment {
    let mut day_counts: BTreeMap<Season, usize> = BTreeMap::new();
    let mut first_seen: Vec<Season> = Vec::new();
    for d in deployment.days() {
        let s = seasons.season_of(d);
        *day_counts.entry(s).or_insert(0) += 1;
        if !first_seen.contains(&s) {
            first_seen.push(s);
        }
    }
    let best = first_seen
        .iter()
        .copied()
        .fold(None::<Season>, |best, s| match best {
            Some(b) if day_counts[&b] >= day_counts[&s] => Some(b),
            _ => Some(s),
        })
        .unwrap_or(Season::Winter);
    let total = deployment.len();
    let spanning = day_counts.iter().any(|(s, n)| *s != best && n * 4 >= total);
    SeasonAssignment { season: best, spanning, day_counts }
}

/// Per-patient inputs to the cohort view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientOutcome {
    pub patient_id: PatientId,
    pub season: SeasonAssignment,
    pub answer_rate: f64,
    pub eligibility: Eligibility,
    pub episode_days: usize,
    /// Ranking from the learning period of the default split.
    pub major_triggers: Vec<Trigger>,
}

pub fn patient_outcome(timeline: &PatientTimeline, cfg: &AnalysisConfig) -> PatientOutcome {
    let deployment = timeline.deployment();
    let answered = timeline.answered_in(deployment).count();
    let answer_rate = answered as f64 / deployment.len() as f64;
    let major_triggers = default_periods(timeline, cfg)
        .and_then(|(l, _)| period_report(timeline, &l, cfg).ok())
        .map(|r| r.major_triggers)
        .unwrap_or_default();
    PatientOutcome {
        patient_id: timeline.profile.patient_id.clone(),
        season: assign_season(deployment, &cfg.seasons),
        answer_rate,
        eligibility: eligibility(answer_rate, cfg.min_answer_rate),
        episode_days: timeline.flags.values().filter(|f| f.is_episode).count(),
        major_triggers,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub season: Season,
    pub patients_analyzed: usize,
    /// Patients whose learning analysis ranked at least one trigger.
    pub trigger_identified: usize,
    pub major_trigger_counts: BTreeMap<Trigger, usize>,
    /// Top-ranked trigger counts over `trigger_identified`.
    pub major_trigger_distribution: BTreeMap<Trigger, f64>,
    pub no_episode_patients: usize,
    /// Over `patients_analyzed`.
    pub no_episode_fraction: f64,
}

pub fn cohort_summary(season: Season, patients: &[PatientOutcome]) -> Result<CohortSummary, AttributionError> {
    let analyzed: Vec<&PatientOutcome> = patients
        .iter()
        .filter(|p| p.eligibility == Eligibility::Included && p.season.season == season)
        .collect();
    if analyzed.is_empty() {
        return Err(AttributionError::EmptyCohort(season));
    }
    let mut counts: BTreeMap<Trigger, usize> = Trigger::ALL.iter().map(|t| (*t, 0)).collect();
    let mut identified = 0;
    for p in &analyzed {
        if let Some(top) = p.major_triggers.first() {
            identified += 1;
            *counts.get_mut(top).unwrap() += 1;
        }
    }
    let no_episode_patients = analyzed.iter().filter(|p| p.episode_days == 0).count();
    let distribution = counts
        .iter()
        .map(|(t, n)| (*t, if identified == 0 { 0.0 } else { *n as f64 / identified as f64 }))
        .collect();
    Ok(CohortSummary {
        season,
        patients_analyzed: analyzed.len(),
        trigger_identified: identified,
        major_trigger_counts: counts,
        major_trigger_distribution: distribution,
        no_episode_patients,
        no_episode_fraction: no_episode_patients as f64 / analyzed.len() as f64,
    })
}
