//! Daily asthma-episode detection, lung-function baselines, controller
//! compliance, eligibility and per-patient summaries.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::daily::{DayRecord, LungPair};
use crate::model::{DateRange, LungFunctionReading, PatientId, Symptom};

/// Patients answering on fewer than this fraction of deployment days are
/// excluded from analysis.
pub const MIN_ANSWER_RATE: f64 = 0.20;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EpisodeError {
    #[error("day {0} was not answered and cannot be evaluated")]
    UnansweredDay(chrono::NaiveDate),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LungMetric {
    Pef,
    Fev1,
}

impl LungMetric {
    pub fn of(self, pair: &LungPair) -> f64 {
        match self {
            LungMetric::Pef => pair.pef,
            LungMetric::Fev1 => pair.fev1,
        }
    }
}

/// Mean and sample standard deviation of one lung metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LungBaseline {
    pub patient_id: PatientId,
    pub metric: LungMetric,
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl LungBaseline {
    /// Values are sorted before summation so the result does not depend on
    /// reading order, bit for bit.
    pub fn from_values(patient_id: PatientId, metric: LungMetric, values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        if n == 0 {
            return Self { patient_id, metric, mean: 0.0, sd: 0.0, n };
        }
        let mean = sorted.iter().sum::<f64>() / n as f64;
        let sd = if n < 2 {
            0.0
        } else {
            let mut dev: Vec<f64> = sorted.iter().map(|v| (v - mean) * (v - mean)).collect();
            dev.sort_by(f64::total_cmp);
            (dev.iter().sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { patient_id, metric, mean, sd, n }
    }

    /// At least two readings are needed before anything is flagged.
    pub fn usable(&self) -> bool {
        self.n >= 2
    }

    pub fn threshold(&self) -> Option<f64> {
        self.usable().then_some(self.mean - self.sd)
    }

    /// Strictly below mean minus one standard deviation.
    pub fn is_abnormal(&self, value: f64) -> bool {
        self.threshold().is_some_and(|t| value < t)
    }
}

pub fn lung_baseline(patient_id: PatientId, readings: &[LungFunctionReading], metric: LungMetric) -> LungBaseline {
    let values: Vec<f64> = readings
        .iter()
        .map(|r| match metric {
            LungMetric::Pef => r.pef,
            LungMetric::Fev1 => r.fev1,
        })
        .collect();
    LungBaseline::from_values(patient_id, metric, &values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    pub pef: LungBaseline,
    pub fev1: LungBaseline,
}

impl Baselines {
    pub fn from_days<'a>(patient_id: &PatientId, days: impl IntoIterator<Item = &'a DayRecord>) -> Self {
        let pairs: Vec<LungPair> = days.into_iter().flat_map(|d| d.lung_readings.iter().copied()).collect();
        let pef: Vec<f64> = pairs.iter().map(|p| p.pef).collect();
        let fev1: Vec<f64> = pairs.iter().map(|p| p.fev1).collect();
        Self {
            pef: LungBaseline::from_values(patient_id.clone(), LungMetric::Pef, &pef),
            fev1: LungBaseline::from_values(patient_id.clone(), LungMetric::Fev1, &fev1),
        }
    }

    pub fn unusable(patient_id: &PatientId) -> Self {
        Self::from_days(patient_id, std::iter::empty())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EpisodeReason {
    Symptom(Symptom),
    NightAwakening,
    ActivityLimitation,
    RescueMedication,
    AbnormalPef,
    AbnormalFev1,
}

impl fmt::Display for EpisodeReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EpisodeReason::Symptom(s) => write!(f, "symptom:{s}"),
            EpisodeReason::NightAwakening => f.write_str("night_awakening"),
            EpisodeReason::ActivityLimitation => f.write_str("activity_limitation"),
            EpisodeReason::RescueMedication => f.write_str("rescue_medication"),
            EpisodeReason::AbnormalPef => f.write_str("abnormal_pef"),
            EpisodeReason::AbnormalFev1 => f.write_str("abnormal_fev1"),
        }
    }
}

impl FromStr for EpisodeReason {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(name) = s.strip_prefix("symptom:") {
            return Symptom::ALL
                .into_iter()
                .find(|sym| sym.as_str() == name)
                .map(EpisodeReason::Symptom)
                .ok_or_else(|| format!("unknown symptom {name:?}"));
        }
        match s {
            "night_awakening" => Ok(EpisodeReason::NightAwakening),
            "activity_limitation" => Ok(EpisodeReason::ActivityLimitation),
            "rescue_medication" => Ok(EpisodeReason::RescueMedication),
            "abnormal_pef" => Ok(EpisodeReason::AbnormalPef),
            "abnormal_fev1" => Ok(EpisodeReason::AbnormalFev1),
            other => Err(format!("unknown episode reason {other:?}")),
        }
    }
}

impl Serialize for EpisodeReason {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EpisodeReason {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeFlag {
    pub patient_id: PatientId,
    pub date: chrono::NaiveDate,
    pub is_episode: bool,
    pub reasons: BTreeSet<EpisodeReason>,
}

/// Evaluates the episode definition for one answered day.
pub fn detect_episode(day: &DayRecord, baselines: &Baselines) -> Result<EpisodeFlag, EpisodeError> {
    let answers = day.answers().ok_or(EpisodeError::UnansweredDay(day.date))?;
    let mut reasons: BTreeSet<EpisodeReason> =
        answers.symptoms_union.iter().map(|s| EpisodeReason::Symptom(*s)).collect();
    if answers.night_awakening == Some(true) {
        reasons.insert(EpisodeReason::NightAwakening);
    }
    if answers.activity_limited {
        reasons.insert(EpisodeReason::ActivityLimitation);
    }
    if answers.rescue_taken {
        reasons.insert(EpisodeReason::RescueMedication);
    }
    for pair in &day.lung_readings {
        if baselines.pef.is_abnormal(pair.pef) {
            reasons.insert(EpisodeReason::AbnormalPef);
        }
        if baselines.fev1.is_abnormal(pair.fev1) {
            reasons.insert(EpisodeReason::AbnormalFev1);
        }
    }
    Ok(EpisodeFlag {
        patient_id: day.patient_id.clone(),
        date: day.date,
        is_episode: !reasons.is_empty(),
        reasons,
    })
}

/// Flags for every answered day; unanswered days are skipped.
pub fn detect_episodes(days: &[DayRecord], baselines: &Baselines) -> Vec<EpisodeFlag> {
    days.iter().filter_map(|d| detect_episode(d, baselines).ok()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceReport {
    pub patient_id: PatientId,
    pub range: DateRange,
    /// `None` when the controller question was never answered.
    pub controller_compliance: Option<f64>,
    pub answered_days: usize,
    pub controller_answered_days: usize,
    pub compliant_days: usize,
}

/// A day is compliant when any slot reports the controller as taken. The
/// denominator is the days on which the controller question was answered.
pub fn compliance(patient_id: &PatientId, range: DateRange, days: &[DayRecord]) -> ComplianceReport {
    let in_range = || days.iter().filter(|d| range.contains(d.date)).filter_map(|d| d.answers());
    let answered_days = in_range().count();
    let controller_answered_days = in_range().filter(|a| a.controller_asked).count();
    let compliant_days = in_range().filter(|a| a.controller_taken).count();
    ComplianceReport {
        patient_id: patient_id.clone(),
        range,
        controller_compliance: (controller_answered_days > 0)
            .then(|| compliant_days as f64 / controller_answered_days as f64),
        answered_days,
        controller_answered_days,
        compliant_days,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Eligibility {
    Included,
    Excluded,
}

/// Excluded iff the answer rate is strictly below `min_rate`.
pub fn eligibility(answer_rate: f64, min_rate: f64) -> Eligibility {
    if answer_rate < min_rate {
        Eligibility::Excluded
    } else {
        Eligibility::Included
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymptomCount {
    pub symptom: Symptom,
    pub days: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientSummary {
    pub patient_id: PatientId,
    pub range: DateRange,
    pub answered_days: usize,
    pub episode_days: usize,
    /// Most severe first; display order only.
    pub symptoms: Vec<SymptomCount>,
    pub any_symptom_days: usize,
    pub night_awakening_days: usize,
    pub activity_limited_days: usize,
    pub rescue_days: usize,
    pub abnormal_lung_days: usize,
    pub abnormal_pef_days: usize,
    pub abnormal_fev1_days: usize,
    pub compliance: ComplianceReport,
}

pub fn patient_summary(
    patient_id: &PatientId,
    range: DateRange,
    days: &[DayRecord],
    baselines: &Baselines,
) -> PatientSummary {
    let in_range: Vec<&DayRecord> = days.iter().filter(|d| range.contains(d.date) && d.answered).collect();
    let flags: Vec<EpisodeFlag> =
        in_range.iter().filter_map(|d| detect_episode(d, baselines).ok()).collect();
    let count = |pred: &dyn Fn(&EpisodeFlag) -> bool| flags.iter().filter(|f| pred(f)).count();

    let mut symptoms: Vec<SymptomCount> = Symptom::ALL
        .into_iter()
        .map(|s| SymptomCount {
            symptom: s,
            days: count(&|f| f.reasons.contains(&EpisodeReason::Symptom(s))),
        })
        .collect();
    symptoms.sort_by_key(|c| (c.symptom.display_rank(), c.symptom));

    PatientSummary {
        patient_id: patient_id.clone(),
        range,
        answered_days: in_range.len(),
        episode_days: count(&|f| f.is_episode),
        symptoms,
        any_symptom_days: count(&|f| f.reasons.iter().any(|r| matches!(r, EpisodeReason::Symptom(_)))),
        night_awakening_days: count(&|f| f.reasons.contains(&EpisodeReason::NightAwakening)),
        activity_limited_days: count(&|f| f.reasons.contains(&EpisodeReason::ActivityLimitation)),
        rescue_days: count(&|f| f.reasons.contains(&EpisodeReason::RescueMedication)),
        abnormal_lung_days: count(&|f| {
            f.reasons.contains(&EpisodeReason::AbnormalPef) || f.reasons.contains(&EpisodeReason::AbnormalFev1)
        }),
        abnormal_pef_days: count(&|f| f.reasons.contains(&EpisodeReason::AbnormalPef)),
        abnormal_fev1_days: count(&|f| f.reasons.contains(&EpisodeReason::AbnormalFev1)),
        compliance: compliance(patient_id, range, days),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::daily::{DailyEnvAggregate, DayAnswers};
    use chrono::NaiveDate;

    fn pid() -> PatientId {
        "p1".into()
    }

    fn day(answers: Option<DayAnswers>, lung: Vec<LungPair>) -> DayRecord {
        let date = NaiveDate::from_ymd_opt(2018, 1, 1).unwrap();
        DayRecord {
            patient_id: pid(),
            date,
            answered: answers.is_some(),
            answers,
            lung_readings: lung,
            medication_events: vec![],
            env: DailyEnvAggregate::missing("r", date),
        }
    }

    #[test]
    fn constant_series_has_zero_sd() {
        let b = LungBaseline::from_values(pid(), LungMetric::Pef, &[300.0, 300.0, 300.0]);
        assert_eq!((b.mean, b.sd, b.n), (300.0, 0.0, 3));
        assert!(!b.is_abnormal(300.0));
        assert!(b.is_abnormal(299.9));
    }

    #[test]
    fn sample_sd_by_hand() {
        // deviations -50, 0, 50 -> (2500 + 0 + 2500) / (3 - 1) = 2500 -> 50
        let b = LungBaseline::from_values(pid(), LungMetric::Pef, &[250.0, 300.0, 350.0]);
        assert_eq!(b.mean, 300.0);
        assert_eq!(b.sd, 50.0);
        assert_eq!(b.threshold(), Some(250.0));
        assert!(!b.is_abnormal(250.0));
        assert!(b.is_abnormal(249.0));
    }

    #[test]
    fn single_reading_never_flags() {
        let b = LungBaseline::from_values(pid(), LungMetric::Fev1, &[2.1]);
        assert!(!b.usable());
        assert!(!b.is_abnormal(0.1));
        let empty = LungBaseline::from_values(pid(), LungMetric::Fev1, &[]);
        assert!(!empty.is_abnormal(0.1));
    }

    #[test]
    fn rescue_only_day_is_an_episode() {
        let answers = DayAnswers { rescue_taken: true, ..Default::default() };
        let flag = detect_episode(&day(Some(answers), vec![]), &Baselines::unusable(&pid())).unwrap();
        assert!(flag.is_episode);
        assert_eq!(flag.reasons, [EpisodeReason::RescueMedication].into_iter().collect());
    }

    #[test]
    fn quiet_day_at_baseline_mean_is_not_an_episode() {
        let baselines = Baselines {
            pef: LungBaseline::from_values(pid(), LungMetric::Pef, &[250.0, 300.0, 350.0]),
            fev1: LungBaseline::from_values(pid(), LungMetric::Fev1, &[1.5, 2.0, 2.5]),
        };
        let d = day(Some(DayAnswers::default()), vec![LungPair { pef: 300.0, fev1: 2.0 }]);
        assert!(!detect_episode(&d, &baselines).unwrap().is_episode);
    }

    #[test]
    fn low_pef_is_abnormal() {
        let baselines = Baselines {
            pef: LungBaseline::from_values(pid(), LungMetric::Pef, &[250.0, 300.0, 350.0]),
            fev1: LungBaseline::from_values(pid(), LungMetric::Fev1, &[2.0, 2.0]),
        };
        // mean - 1.5 sd = 225
        let d = day(Some(DayAnswers::default()), vec![LungPair { pef: 225.0, fev1: 2.0 }]);
        let flag = detect_episode(&d, &baselines).unwrap();
        assert_eq!(flag.reasons, [EpisodeReason::AbnormalPef].into_iter().collect());
    }

    #[test]
    fn unanswered_day_is_an_error() {
        let d = day(None, vec![]);
        assert!(matches!(detect_episode(&d, &Baselines::unusable(&pid())), Err(EpisodeError::UnansweredDay(_))));
    }

    #[test]
    fn eligibility_boundary() {
        assert_eq!(eligibility(46.0 / 91.0, MIN_ANSWER_RATE), Eligibility::Included);
        assert_eq!(eligibility(0.0, MIN_ANSWER_RATE), Eligibility::Excluded);
        assert_eq!(eligibility(6.0 / 30.0, MIN_ANSWER_RATE), Eligibility::Included);
        assert_eq!(eligibility(0.19, MIN_ANSWER_RATE), Eligibility::Excluded);
    }

    #[test]
    fn reason_strings_round_trip() {
        for r in [
            EpisodeReason::Symptom(Symptom::NoseOpensWide),
            EpisodeReason::NightAwakening,
            EpisodeReason::AbnormalFev1,
        ] {
            assert_eq!(r.to_string().parse::<EpisodeReason>().unwrap(), r);
        }
        assert_eq!(EpisodeReason::Symptom(Symptom::Cough).to_string(), "symptom:cough");
    }

    #[test]
    fn compliance_fraction() {
        let mut days = Vec::new();
        for i in 0..50u32 {
            let mut d = day(
                Some(DayAnswers { controller_asked: true, controller_taken: i % 2 == 0, ..Default::default() }),
                vec![],
            );
            d.date = NaiveDate::from_ymd_opt(2018, 1, 1).unwrap() + chrono::Duration::days(i64::from(i));
            days.push(d);
        }
        let range = DateRange::new(days[0].date, days[49].date);
        let r = compliance(&pid(), range, &days);
        assert_eq!(r.compliant_days, 25);
        assert_eq!(r.controller_compliance, Some(0.5));
        for d in &mut days {
            d.answers.as_mut().unwrap().controller_taken = true;
        }
        assert_eq!(compliance(&pid(), range, &days).controller_compliance, Some(1.0));
    }

    #[test]
    fn summary_orders_chest_tightness_first_and_empty_range_is_zero() {
        let range = DateRange::new(
            NaiveDate::from_ymd_opt(2018, 2, 1).unwrap(),
            NaiveDate::from_ymd_opt(2018, 1, 1).unwrap(),
        );
        let s = patient_summary(&pid(), range, &[], &Baselines::unusable(&pid()));
        assert_eq!(s.symptoms[0].symptom, Symptom::ChestTightness);
        assert_eq!(s.episode_days + s.rescue_days + s.answered_days, 0);
        assert!(s.symptoms.iter().all(|c| c.days == 0));
    }
}
