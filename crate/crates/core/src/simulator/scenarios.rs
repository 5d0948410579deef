//! Hand-built patient scenarios with exactly known per-day facts.
//!
//! A [`Scenario`] is a list of day specifications that expands into the
//! same observation streams a deployment would produce: questionnaire
//! slots, two lung readings per answered day, 12-hourly pollen and hourly
//! pm2.5, ozone, temperature and humidity.

use std::collections::BTreeSet;

use chrono::{DateTime, Duration, NaiveDate, Utc};

use crate::config::AnalysisConfig;
use crate::model::{
    ActivityLimitation, DateRange, EnrollmentMonths, EnvParameter, EnvironmentSample, LungFunctionReading,
    MedicationClass, MedicationEvent, PatientId, PatientProfile, QuestionnaireResponse, RescueCount, Severity, Slot,
    Symptom, Trigger,
};
use crate::observation::{Observation, Payload};
use crate::store::{Store, StoreError};
use crate::timeline::PatientTimeline;

pub const NORMAL_PEF: f64 = 300.0;
pub const LOW_PEF: f64 = 180.0;
pub const FEV1: f64 = 2.0;

/// Daily extremes for one region-day. `None` leaves the stream empty.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvDay {
    pub pollen: Option<f64>,
    pub pm25: Option<f64>,
    pub ozone: Option<f64>,
    /// (min, max) in °F.
    pub temp: Option<(f64, f64)>,
    /// (min, max) in %.
    pub humidity: Option<(f64, f64)>,
}

impl Default for EnvDay {
    fn default() -> Self {
        Self { pollen: Some(0.0), pm25: Some(30.0), ozone: Some(30.0), temp: Some((40.0, 50.0)), humidity: Some((40.0, 70.0)) }
    }
}

impl EnvDay {
    pub fn set(&mut self, trigger: Trigger, value: f64) {
        match trigger {
            Trigger::Pollen => self.pollen = Some(value),
            Trigger::Pm25 => self.pm25 = Some(value),
            Trigger::Ozone => self.ozone = Some(value),
        }
    }

    /// Leaves `trigger` without samples for the day.
    pub fn set_missing(&mut self, trigger: Trigger) {
        match trigger {
            Trigger::Pollen => self.pollen = None,
            Trigger::Pm25 => self.pm25 = None,
            Trigger::Ozone => self.ozone = None,
        }
    }

    /// Sets `trigger` to a value just outside (`true`) or well inside its
    /// default healthy range.
    pub fn mark(&mut self, trigger: Trigger, unhealthy: bool) {
        let value = match (trigger, unhealthy) {
            (Trigger::Pollen, true) => 6.5,
            (Trigger::Pollen, false) => self.pollen.filter(|p| *p > 0.0).map_or(0.0, |_| 1.5),
            (_, true) => 88.0,
            (_, false) => 30.0,
        };
        self.set(trigger, value);
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Answers {
    pub symptoms: BTreeSet<Symptom>,
    pub rescue: bool,
    pub activity: Option<ActivityLimitation>,
    pub night_awakening: bool,
    /// `None` leaves the controller question unanswered.
    pub controller: Option<bool>,
    pub abnormal_pef: bool,
}

impl Answers {
    pub fn is_episode(&self) -> bool {
        !self.symptoms.is_empty()
            || self.rescue
            || self.night_awakening
            || self.activity.is_some_and(|a| a != ActivityLimitation::None)
            || self.abnormal_pef
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DaySpec {
    pub env: EnvDay,
    pub answers: Option<Answers>,
    pub medications: Vec<(String, MedicationClass)>,
}

impl DaySpec {
    pub fn answered(&self) -> bool {
        self.answers.is_some()
    }

    pub fn answers_mut(&mut self) -> &mut Answers {
        self.answers.get_or_insert_with(Answers::default)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub profile: PatientProfile,
    /// Environment for the days right before the deployment, oldest first.
    pub lead: Vec<EnvDay>,
    /// One entry per deployment day.
    pub days: Vec<DaySpec>,
}

fn at(date: NaiveDate, hour: u32) -> DateTime<Utc> {
    date.and_hms_opt(hour, 0, 0).expect("valid hour").and_utc()
}

fn env_samples(region: &str, date: NaiveDate, env: &EnvDay, out: &mut Vec<Observation>) {
    let mut push = |hour: u32, parameter: EnvParameter, value: f64| {
        let timestamp = at(date, hour);
        let sample = EnvironmentSample { region: region.to_owned(), timestamp, parameter, value };
        out.push(Observation::new(Payload::OutdoorEnv(sample), timestamp + Duration::minutes(5)));
    };
    if let Some(p) = env.pollen {
        push(0, EnvParameter::Pollen, p / 2.0);
        push(12, EnvParameter::Pollen, p);
    }
    for (parameter, max, peak) in [(EnvParameter::Pm25, env.pm25, 14), (EnvParameter::Ozone, env.ozone, 16)] {
        if let Some(max) = max {
            for h in 0..24 {
                push(h, parameter, if h == peak { max } else { (max * 0.5).min(25.0) });
            }
        }
    }
    for (parameter, range, low_hour, high_hour) in
        [(EnvParameter::Temperature, env.temp, 5, 15), (EnvParameter::Humidity, env.humidity, 15, 5)]
    {
        if let Some((lo, hi)) = range {
            for h in 0..24 {
                let v = match h {
                    _ if h == low_hour => lo,
                    _ if h == high_hour => hi,
                    _ => (lo + hi) / 2.0,
                };
                push(h, parameter, v);
            }
        }
    }
}

impl Scenario {
    /// A scenario with `days` unanswered, healthy, pollen-free days and a
    /// week of matching lead days.
    pub fn blank(patient_id: &str, region: &str, start: NaiveDate, days: usize) -> Self {
        let end = start + Duration::days(days as i64 - 1);
        let months = if days > 45 { EnrollmentMonths::Three } else { EnrollmentMonths::One };
        Self {
            profile: PatientProfile {
                patient_id: PatientId::new(patient_id),
                severity: Severity::Moderate,
                rescue_meds: vec!["albuterol".into()],
                controller_meds: vec!["singulair".into()],
                oral_steroid: None,
                region: region.to_owned(),
                deployment_start: start,
                deployment_end: end,
                enrollment_months: months,
            },
            lead: vec![EnvDay::default(); 7],
            days: vec![DaySpec::default(); days],
        }
    }

    pub fn date(&self, index: usize) -> NaiveDate {
        self.profile.deployment_start + Duration::days(index as i64)
    }

    /// Inclusive range of deployment day indices.
    pub fn range(&self, first: usize, last: usize) -> DateRange {
        DateRange::new(self.date(first), self.date(last))
    }

    pub fn answered_indices(&self) -> Vec<usize> {
        self.days.iter().enumerate().filter(|(_, d)| d.answered()).map(|(i, _)| i).collect()
    }

    /// Deterministic observations; `received_at` trails each timestamp by a
    /// few minutes.
    pub fn observations(&self) -> Vec<Observation> {
        let pid = &self.profile.patient_id;
        let region = &self.profile.region;
        let mut out = Vec::new();
        let lead_start = self.profile.deployment_start - Duration::days(self.lead.len() as i64);
        for (i, env) in self.lead.iter().enumerate() {
            env_samples(region, lead_start + Duration::days(i as i64), env, &mut out);
        }
        for (i, day) in self.days.iter().enumerate() {
            let date = self.date(i);
            env_samples(region, date, &day.env, &mut out);
            for (n, (name, class)) in day.medications.iter().enumerate() {
                let timestamp = at(date, 9) + Duration::minutes(n as i64);
                let event = MedicationEvent { patient_id: pid.clone(), timestamp, medication: name.clone(), class: *class };
                out.push(Observation::new(Payload::MedicationEvent(event), timestamp + Duration::minutes(1)));
            }
            let Some(a) = &day.answers else { continue };
            let mut morning = QuestionnaireResponse::new(pid.clone(), date, Slot::Morning);
            morning.symptoms = a.symptoms.clone();
            morning.rescue_count = Some(RescueCount::new(u32::from(a.rescue)));
            morning.controller_taken = a.controller;
            let mut daily = QuestionnaireResponse::new(pid.clone(), date, Slot::Daily);
            daily.activity_limitation = Some(a.activity.unwrap_or(ActivityLimitation::None));
            daily.night_awakening = Some(a.night_awakening);
            out.push(Observation::new(Payload::Questionnaire(morning), at(date, 10)));
            out.push(Observation::new(Payload::Questionnaire(daily), at(date, 21)));
            let pef = if a.abnormal_pef { LOW_PEF } else { NORMAL_PEF };
            for hour in [8, 20] {
                let reading = LungFunctionReading { patient_id: pid.clone(), timestamp: at(date, hour), pef, fev1: FEV1 };
                out.push(Observation::new(Payload::Lung(reading), at(date, hour) + Duration::minutes(2)));
            }
        }
        out
    }

    pub fn load_into(&self, store: &Store) -> Result<(), StoreError> {
        store.register_patients(vec![self.profile.clone()])?;
        store.upsert_batch(self.observations())?;
        Ok(())
    }

    /// Loads into a fresh in-memory store and builds the timeline.
    pub fn timeline(&self, cfg: &AnalysisConfig) -> PatientTimeline {
        let store = Store::with_clock(cfg.clock);
        self.load_into(&store).expect("scenario loads into an in-memory store");
        let state = store.read();
        PatientTimeline::load(&state, &self.profile.patient_id, cfg).expect("scenario patient is registered")
    }
}

fn set_of(symptoms: &[Symptom]) -> BTreeSet<Symptom> {
    symptoms.iter().copied().collect()
}

/// Winter deployment, 13 weeks, with answers stopping after nine. PM2.5 is
/// the only trigger: unhealthy on 21 of 29 answered learning days (24
/// episodes) and on 19 of 21 prediction days (all episodes). The two
/// uncovered prediction episodes follow six and five unhealthy days in the
/// preceding week.
pub fn winter_pm25_case() -> Scenario {
    let mut s = Scenario::blank("winter-pm25", "winter-city", NaiveDate::from_ymd_opt(2017, 12, 4).unwrap(), 91);
    s.profile.severity = Severity::Moderate;
    let learning_unanswered: BTreeSet<usize> = (0..13).map(|k| 1 + 3 * k).collect();
    let pm25_healthy: BTreeSet<usize> = [0, 2, 3, 5, 6, 8, 9, 41, 42, 43].into();
    let quiet: BTreeSet<usize> = [0, 2, 3, 5, 6].into();

    for i in 0..91 {
        let day = &mut s.days[i];
        day.env.temp = Some((30.0, 45.0));
        day.env.humidity = Some((40.0, 80.0));
        day.env.mark(Trigger::Pm25, !pm25_healthy.contains(&i));
        if i <= 62 && !learning_unanswered.contains(&i) {
            day.answers = Some(Answers { controller: Some(false), ..Answers::default() });
        }
    }

    let episode_days: Vec<usize> = (0..=62).filter(|i| s.days[*i].answered() && !quiet.contains(i)).collect();
    debug_assert_eq!(episode_days.len(), 45);
    for (n, &i) in episode_days.iter().enumerate() {
        let a = s.days[i].answers_mut();
        if n < 27 {
            a.symptoms = set_of(&[Symptom::Wheeze]);
        }
        if (21..45).contains(&n) {
            a.rescue = true;
        }
        if n < 15 {
            a.activity = Some(ActivityLimitation::HalfDay);
        }
        a.night_awakening = n == 5;
        a.abnormal_pef = (30..36).contains(&n);
    }
    // Controller taken on half of the 50 answered days.
    for &i in s.answered_indices().iter().step_by(2) {
        s.days[i].answers_mut().controller = Some(true);
    }
    // Temperature and humidity extremes on answered days.
    s.days[14].env.temp = Some((19.0, 40.0));
    s.days[20].env.temp = Some((35.0, 60.0));
    s.days[11].env.humidity = Some((17.0, 60.0));
    s.days[12].env.humidity = Some((50.0, 99.0));
    s.days[50].env.temp = Some((-2.0, 20.0));
    s.days[55].env.temp = Some((40.0, 58.0));
    s.days[45].env.humidity = Some((25.0, 70.0));
    s.days[46].env.humidity = Some((60.0, 99.0));
    s
}

/// Winter-to-spring deployment of 13 weeks: six pollen-free weeks then
/// seven with pollen. 46 of 91 days are answered and every answered day is
/// an episode.
pub fn two_season_pollen_case() -> Scenario {
    let mut s = Scenario::blank("two-season", "spring-city", NaiveDate::from_ymd_opt(2018, 1, 22).unwrap(), 91);
    s.profile.severity = Severity::Severe;
    s.profile.rescue_meds = vec!["albuterol".into(), "atrovent".into()];
    s.profile.controller_meds = vec!["dulera".into(), "singulair".into()];

    // (first day, last day, answered days, pm25 unhealthy, ozone unhealthy,
    // pollen unhealthy) per period; counts refer to answered days.
    let periods = [(0, 27, 21, 20, 1, 0), (28, 41, 5, 5, 0, 0), (42, 69, 17, 14, 0, 17), (70, 90, 3, 2, 1, 3)];
    for (first, last, answered, pm25, ozone, pollen) in periods {
        let answered_days: Vec<usize> = (first..=last).take(answered).collect();
        for i in first..=last {
            let day = &mut s.days[i];
            day.env.pollen = Some(if i >= 42 { 1.5 } else { 0.0 });
        }
        for (n, &i) in answered_days.iter().enumerate() {
            let day = &mut s.days[i];
            day.answers = Some(Answers::default());
            day.env.mark(Trigger::Pm25, n < pm25);
            day.env.mark(Trigger::Ozone, n >= answered - ozone);
            if n < pollen {
                day.env.mark(Trigger::Pollen, true);
            }
        }
    }
    for i in 0..91 {
        let segment_one = i < 42;
        s.days[i].env.temp = Some(if segment_one { (20.0, 40.0) } else { (45.0, 60.0) });
        s.days[i].env.humidity = Some((40.0, 80.0));
    }

    let answered = s.answered_indices();
    debug_assert_eq!(answered.len(), 46);
    let chest: BTreeSet<usize> = [1, 5, 9, 27, 29, 31, 33, 35, 37].into();
    let awake: BTreeSet<usize> = [3, 28, 30, 32, 34, 36, 38].into();
    for (n, &i) in answered.iter().enumerate() {
        let a = s.days[i].answers_mut();
        if n < 39 {
            a.symptoms = set_of(if n % 2 == 0 { &[Symptom::Cough] } else { &[Symptom::Wheeze] });
            if chest.contains(&n) {
                a.symptoms.insert(Symptom::ChestTightness);
            }
        }
        a.rescue = (22..46).contains(&n);
        if (10..36).contains(&n) {
            a.activity = Some(ActivityLimitation::ALittle);
        }
        a.night_awakening = awake.contains(&n);
        a.abnormal_pef = n == 40 || n == 41;
        a.controller = (n < 40).then_some(n < 6);
    }
    let (first, second) = (answered[0], answered[26]);
    s.days[first].env.temp = Some((7.0, 30.0));
    s.days[first + 1].env.temp = Some((30.0, 55.0));
    s.days[first].env.humidity = Some((20.0, 98.0));
    s.days[second].env.temp = Some((30.0, 75.0));
    s.days[second].env.humidity = Some((20.0, 99.0));
    s
}

/// Five and a half fall weeks with pollen, PM2.5 and ozone all active.
/// Pollen leads the learning weeks; in the last eleven days every trigger
/// is often unhealthy while episodes drop to five, after a week of oral
/// steroid and full controller adherence.
pub fn fall_pollen_case() -> Scenario {
    let mut s = Scenario::blank("fall-pollen", "fall-city", NaiveDate::from_ymd_opt(2017, 9, 1).unwrap(), 39);
    s.profile.controller_meds = vec!["symbicort".into(), "singulair".into()];
    s.profile.oral_steroid = Some("prednisone".into());

    let unanswered: BTreeSet<usize> = [3, 7, 11, 15, 19, 23].into();
    let learning_pollen: BTreeSet<usize> = [0, 1, 2, 4, 5, 6, 8, 9, 10, 12, 13].into();
    let learning_pm25: BTreeSet<usize> = [12, 13, 14, 22, 24, 25, 26, 27].into();
    let learning_ozone: BTreeSet<usize> = [16, 17].into();
    let learning_episodes: BTreeSet<usize> = [0, 1, 2, 4, 5, 6, 8, 9, 10, 12, 13, 14].into();

    for i in 0..39 {
        let day = &mut s.days[i];
        day.env.pollen = Some(1.5);
        let learning = i < 28;
        day.env.temp = Some(if learning { (70.0, 80.0) } else { (60.0, 75.0) });
        day.env.humidity = Some(if learning { (75.0, 85.0) } else { (60.0, 90.0) });
        if learning {
            day.env.mark(Trigger::Pollen, learning_pollen.contains(&i));
            day.env.mark(Trigger::Pm25, learning_pm25.contains(&i));
            day.env.mark(Trigger::Ozone, learning_ozone.contains(&i));
        } else {
            day.env.mark(Trigger::Pollen, i <= 37);
            day.env.mark(Trigger::Pm25, i >= 29);
            day.env.mark(Trigger::Ozone, i <= 33);
        }
        if !unanswered.contains(&i) {
            day.answers = Some(Answers::default());
        }
    }
    let episode_days: Vec<usize> =
        (0..39).filter(|i| learning_episodes.contains(i) || (30..=34).contains(i)).collect();
    debug_assert_eq!(episode_days.len(), 17);
    for (n, &i) in episode_days.iter().enumerate() {
        let a = s.days[i].answers_mut();
        if n < 11 {
            a.symptoms = set_of(&[Symptom::Cough, Symptom::Wheeze]);
        }
        if (3..7).contains(&n) {
            a.activity = Some(ActivityLimitation::MostOfDay);
        }
        a.rescue = (6..12).contains(&n);
        a.abnormal_pef = (8..17).contains(&n);
    }
    // Controller: 8 of 18 asked learning days, 9 of 9 asked prediction days.
    let answered = s.answered_indices();
    let (learning, prediction): (Vec<usize>, Vec<usize>) = answered.iter().partition(|i| **i < 28);
    for (n, &i) in learning.iter().take(18).enumerate() {
        s.days[i].answers_mut().controller = Some(n < 8);
    }
    for &i in prediction.iter().take(9) {
        s.days[i].answers_mut().controller = Some(true);
    }
    for i in 10..17 {
        s.days[i].medications.push(("prednisone".into(), MedicationClass::OralSteroid));
    }
    s.days[0].env.temp = Some((65.0, 75.0));
    s.days[1].env.temp = Some((70.0, 85.0));
    s.days[2].env.humidity = Some((70.0, 90.0));
    s.days[28].env.temp = Some((55.0, 80.0));
    s.days[29].env.humidity = Some((50.0, 98.0));
    s
}

/// A short fully answered deployment in `region` where only `trigger` is
/// ever unhealthy. Episodes occur every day unless `episodes` is false.
pub fn single_trigger_case(
    patient_id: &str,
    region: &str,
    start: NaiveDate,
    days: usize,
    trigger: Option<Trigger>,
    episodes: bool,
) -> Scenario {
    let mut s = Scenario::blank(patient_id, region, start, days);
    for env in s.lead.iter_mut().chain(s.days.iter_mut().map(|d| &mut d.env)) {
        if trigger == Some(Trigger::Pollen) {
            env.pollen = Some(1.5);
        }
        if let Some(t) = trigger {
            env.mark(t, true);
        }
    }
    for day in &mut s.days {
        let a = day.answers_mut();
        a.controller = Some(true);
        if episodes {
            a.symptoms = set_of(&[Symptom::Wheeze]);
        }
    }
    s
}

/// Cohort where the top-ranked triggers among trigger-identified patients
/// follow `mix`; `extra_quiet` adds patients without episodes and
/// `extra_ineligible` adds patients answering one day in ten.
pub fn cohort_case(
    label: &str,
    start: NaiveDate,
    mix: &[(Trigger, usize)],
    extra_quiet: usize,
    extra_ineligible: usize,
) -> Vec<Scenario> {
    const DAYS: usize = 10;
    let mut out = Vec::new();
    for (t, n) in mix {
        for k in 0..*n {
            let pid = format!("{label}-{}-{k:03}", t.as_str());
            out.push(single_trigger_case(&pid, &format!("{label}-{}", t.as_str()), start, DAYS, Some(*t), true));
        }
    }
    for k in 0..extra_quiet {
        let pid = format!("{label}-quiet-{k:03}");
        out.push(single_trigger_case(&pid, &format!("{label}-clean"), start, DAYS, None, false));
    }
    for k in 0..extra_ineligible {
        let pid = format!("{label}-sparse-{k:03}");
        let mut s = single_trigger_case(&pid, &format!("{label}-pm25"), start, DAYS, Some(Trigger::Pm25), true);
        for day in s.days.iter_mut().skip(1) {
            day.answers = None;
        }
        out.push(s);
    }
    out
}

/// Winter cohort: ten trigger-identified patients, eight led by PM2.5.
pub fn winter_cohort_case() -> Vec<Scenario> {
    cohort_case(
        "winter",
        NaiveDate::from_ymd_opt(2018, 1, 8).unwrap(),
        &[(Trigger::Pm25, 8), (Trigger::Ozone, 2)],
        2,
        1,
    )
}

/// Spring cohort: one hundred trigger-identified patients, 63 led by
/// pollen and 19 by PM2.5.
pub fn spring_cohort_case() -> Vec<Scenario> {
    cohort_case(
        "spring",
        NaiveDate::from_ymd_opt(2018, 4, 9).unwrap(),
        &[(Trigger::Pollen, 63), (Trigger::Pm25, 19), (Trigger::Ozone, 18)],
        3,
        1,
    )
}
