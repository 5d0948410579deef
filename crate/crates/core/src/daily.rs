//! Multi-rate fusion into calendar days: outdoor daily aggregates and the
//! per-patient day record.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Duration, NaiveDate, NaiveTime};
use serde::{Deserialize, Serialize};

use crate::model::{
    ActivityLimitation, DateRange, EnvParameter, MedicationEvent, PatientId, Slot, Symptom, Trigger,
};
use crate::observation::{Payload, Stream};
use crate::store::{StoreError, StoreState};

/// Daily outdoor summary for one region. `None` marks a parameter with no
/// samples that day; missing values are never zero-filled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyEnvAggregate {
    pub region: String,
    pub date: NaiveDate,
    pub pollen_max: Option<f64>,
    pub pm25_max: Option<f64>,
    pub ozone_max: Option<f64>,
    pub temp_min: Option<f64>,
    pub temp_max: Option<f64>,
    pub humidity_min: Option<f64>,
    pub humidity_max: Option<f64>,
    pub samples_present: BTreeMap<EnvParameter, usize>,
}

impl DailyEnvAggregate {
    pub fn missing(region: impl Into<String>, date: NaiveDate) -> Self {
        Self {
            region: region.into(),
            date,
            pollen_max: None,
            pm25_max: None,
            ozone_max: None,
            temp_min: None,
            temp_max: None,
            humidity_min: None,
            humidity_max: None,
            samples_present: EnvParameter::ALL.iter().map(|p| (*p, 0)).collect(),
        }
    }

    pub fn trigger_max(&self, trigger: Trigger) -> Option<f64> {
        match trigger {
            Trigger::Pollen => self.pollen_max,
            Trigger::Pm25 => self.pm25_max,
            Trigger::Ozone => self.ozone_max,
        }
    }

    pub fn is_missing(&self, parameter: EnvParameter) -> bool {
        self.samples_present.get(&parameter).copied().unwrap_or(0) == 0
    }

    /// Folds one sample in. Used by the store and by fixture generators
    /// that aggregate without a store.
    pub fn add_sample(&mut self, parameter: EnvParameter, value: f64) {
        fn max(slot: &mut Option<f64>, v: f64) {
            *slot = Some(slot.map_or(v, |m| m.max(v)));
        }
        fn min(slot: &mut Option<f64>, v: f64) {
            *slot = Some(slot.map_or(v, |m| m.min(v)));
        }
        match parameter {
            EnvParameter::Pollen => max(&mut self.pollen_max, value),
            EnvParameter::Pm25 => max(&mut self.pm25_max, value),
            EnvParameter::Ozone => max(&mut self.ozone_max, value),
            EnvParameter::Temperature => {
                min(&mut self.temp_min, value);
                max(&mut self.temp_max, value);
            }
            EnvParameter::Humidity => {
                min(&mut self.humidity_min, value);
                max(&mut self.humidity_max, value);
            }
        }
        *self.samples_present.entry(parameter).or_insert(0) += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LungPair {
    pub pef: f64,
    pub fev1: f64,
}

/// Questionnaire-derived fields, present only on answered days.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DayAnswers {
    pub symptoms_union: BTreeSet<Symptom>,
    pub rescue_taken: bool,
    pub controller_asked: bool,
    pub controller_taken: bool,
    pub night_awakening: Option<bool>,
    pub activity_limitation: Option<ActivityLimitation>,
    pub activity_limited: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayRecord {
    pub patient_id: PatientId,
    pub date: NaiveDate,
    pub answered: bool,
    pub answers: Option<DayAnswers>,
    pub lung_readings: Vec<LungPair>,
    pub medication_events: Vec<MedicationEvent>,
    pub env: DailyEnvAggregate,
}

impl DayRecord {
    pub fn answers(&self) -> Option<&DayAnswers> {
        self.answers.as_ref()
    }
}

fn utc_midnight(date: NaiveDate) -> chrono::DateTime<chrono::Utc> {
    date.and_time(NaiveTime::MIN).and_utc()
}

impl StoreState {
    pub fn daily_aggregate(&self, region: &str, date: NaiveDate) -> DailyEnvAggregate {
        let (from, to) = self.clock.day_bounds(date);
        let mut agg = DailyEnvAggregate::missing(region, date);
        for obs in self.range(region, Stream::OutdoorEnv, from, to) {
            if let Payload::OutdoorEnv(s) = obs.payload() {
                agg.add_sample(s.parameter, s.value);
            }
        }
        agg
    }

    fn day_answers(&self, patient: &PatientId, date: NaiveDate) -> Option<DayAnswers> {
        let from = utc_midnight(date);
        let to = from + Duration::days(1);
        let mut answers: Option<DayAnswers> = None;
        for obs in self.range(patient.as_str(), Stream::Questionnaire, from, to) {
            let Payload::Questionnaire(q) = obs.payload() else { continue };
            let a = answers.get_or_insert_with(DayAnswers::default);
            match q.slot {
                Slot::Morning | Slot::Evening => {
                    a.symptoms_union.extend(q.symptoms.iter().copied());
                    if q.rescue_count.is_some_and(|r| r.count > 0) {
                        a.rescue_taken = true;
                    }
                    if let Some(taken) = q.controller_taken {
                        a.controller_asked = true;
                        a.controller_taken |= taken;
                    }
                }
                Slot::Daily => {
                    a.night_awakening = q.night_awakening;
                    a.activity_limitation = q.activity_limitation;
                    a.activity_limited =
                        q.activity_limitation.is_some_and(|l| l != ActivityLimitation::None);
                }
            }
        }
        answers
    }

    pub fn day_record(&self, patient: &PatientId, region: &str, date: NaiveDate) -> DayRecord {
        let answers = self.day_answers(patient, date);
        let (from, to) = self.clock.day_bounds(date);
        let lung_readings = self
            .range(patient.as_str(), Stream::Lung, from, to)
            .filter_map(|o| match o.payload() {
                Payload::Lung(l) => Some(LungPair { pef: l.pef, fev1: l.fev1 }),
                _ => None,
            })
            .collect();
        let medication_events = self
            .range(patient.as_str(), Stream::MedicationEvent, from, to)
            .filter_map(|o| match o.payload() {
                Payload::MedicationEvent(m) => Some(m.clone()),
                _ => None,
            })
            .collect();
        DayRecord {
            patient_id: patient.clone(),
            date,
            answered: answers.is_some(),
            answers,
            lung_readings,
            medication_events,
            env: self.daily_aggregate(region, date),
        }
    }

    /// One record per calendar day of `range`, ordered by date.
    pub fn day_records(&self, patient: &PatientId, range: DateRange) -> Result<Vec<DayRecord>, StoreError> {
        let profile = self.patient(patient)?;
        Ok(range.days().map(|d| self.day_record(patient, &profile.region, d)).collect())
    }

    pub fn answered_days(&self, patient: &PatientId, range: DateRange) -> usize {
        range.days().filter(|d| self.day_answers(patient, *d).is_some()).count()
    }

    /// Answered days divided by deployment days.
    pub fn answer_rate(&self, patient: &PatientId) -> Result<f64, StoreError> {
        let deployment = self.patient(patient)?.deployment();
        let answered = self.answered_days(patient, deployment);
        Ok(answered as f64 / deployment.len() as f64)
    }
}
