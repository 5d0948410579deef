//! Deterministic synthetic cohorts with planted trigger sensitivities.
//!
//! Everything here is a pure function of its arguments and a seed, so a
//! generated cohort doubles as ground truth for the attribution engine.

pub mod device;
pub mod scenarios;

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Duration, NaiveDate, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{
    ActivityLimitation, EnrollmentMonths, EnvParameter, EnvironmentSample, HealthyRanges, LungFunctionReading,
    PatientId, PatientProfile, QuestionnaireResponse, RescueCount, Severity, Slot, Symptom, Trigger,
};
use crate::observation::{Observation, Payload};
use crate::season::{Season, SeasonConfig};

/// Share of days on which each trigger's daily maximum is unhealthy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prevalence {
    pub pollen: f64,
    pub pm25: f64,
    pub ozone: f64,
}

impl Prevalence {
    pub fn for_season(season: Season) -> Self {
        match season {
            Season::Winter => Self { pollen: 0.0, pm25: 0.30, ozone: 0.15 },
            Season::Spring => Self { pollen: 0.35, pm25: 0.15, ozone: 0.15 },
            Season::Summer => Self { pollen: 0.20, pm25: 0.15, ozone: 0.30 },
            Season::Fall => Self { pollen: 0.30, pm25: 0.20, ozone: 0.15 },
        }
    }

    pub fn get(&self, t: Trigger) -> f64 {
        match t {
            Trigger::Pollen => self.pollen,
            Trigger::Pm25 => self.pm25,
            Trigger::Ozone => self.ozone,
        }
    }
}

/// Mean length in days of a run of unhealthy days.
const MEAN_RUN_DAYS: f64 = 3.0;

/// Two-state chain whose stationary share of unhealthy days is `p`.
/// Pollution and pollen come in multi-day spells rather than isolated days.
struct UnhealthyRuns {
    bad: bool,
    enter: f64,
    leave: f64,
}

impl UnhealthyRuns {
    fn new(p: f64, rng: &mut ChaCha8Rng) -> Self {
        let leave = 1.0 / MEAN_RUN_DAYS;
        let enter = if p < 1.0 { (p / (1.0 - p) * leave).min(1.0) } else { 1.0 };
        Self { bad: p > 0.0 && rng.gen_bool(p), enter, leave }
    }

    fn step(&mut self, rng: &mut ChaCha8Rng) -> bool {
        let today = self.bad;
        self.bad = if today { !rng.gen_bool(self.leave) } else { rng.gen_bool(self.enter) };
        today
    }
}

fn seasonal_climate(season: Season) -> ((f64, f64), (f64, f64)) {
    // (mean temperature °F, diurnal swing), (mean humidity %, swing)
    match season {
        Season::Winter => ((30.0, 12.0), (70.0, 15.0)),
        Season::Spring => ((55.0, 14.0), (60.0, 20.0)),
        Season::Summer => ((78.0, 12.0), (65.0, 20.0)),
        Season::Fall => ((60.0, 12.0), (70.0, 18.0)),
    }
}

/// Hourly pm2.5, ozone, temperature and humidity plus pollen at 00:00 and
/// 12:00 for `days` days from `start`. Winter traces carry no pollen.
pub fn gen_environment(season: Season, region: &str, start: NaiveDate, days: usize, seed: u64) -> Vec<EnvironmentSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prevalence = Prevalence::for_season(season);
    let ((t_mean, t_swing), (h_mean, h_swing)) = seasonal_climate(season);
    let mut runs = [Trigger::Pollen, Trigger::Pm25, Trigger::Ozone].map(|t| UnhealthyRuns::new(prevalence.get(t), &mut rng));
    let mut out = Vec::with_capacity(days * (2 + 4 * 24));
    for d in 0..days {
        let date = start + Duration::days(d as i64);
        let midnight = date.and_hms_opt(0, 0, 0).expect("midnight").and_utc();
        let mut push = |hour: i64, parameter: EnvParameter, value: f64| {
            out.push(EnvironmentSample {
                region: region.to_owned(),
                timestamp: midnight + Duration::hours(hour),
                parameter,
                value,
            })
        };

        if prevalence.pollen > 0.0 {
            let bad = runs[0].step(&mut rng);
            let present = bad || rng.gen_bool(0.85);
            let (a, b) = match (bad, present) {
                (true, _) => (rng.gen_range(0.5..2.4), rng.gen_range(2.5..11.0)),
                (false, true) => (rng.gen_range(0.1..2.4), rng.gen_range(0.1..2.4)),
                (false, false) => (0.0, 0.0),
            };
            push(0, EnvParameter::Pollen, a);
            push(12, EnvParameter::Pollen, b);
        } else {
            push(0, EnvParameter::Pollen, 0.0);
            push(12, EnvParameter::Pollen, 0.0);
        }

        for (parameter, run) in [(EnvParameter::Pm25, 1), (EnvParameter::Ozone, 2)] {
            let bad = runs[run].step(&mut rng);
            let peak_hour = rng.gen_range(0..24);
            let peak: f64 = if bad { rng.gen_range(51.0..160.0) } else { rng.gen_range(20.0..50.0) };
            for h in 0..24 {
                let v = if h == peak_hour { peak } else { rng.gen_range(2.0..peak.min(50.0)) };
                push(h, parameter, v);
            }
        }

        let day_shift = rng.gen_range(-8.0..8.0);
        for h in 0..24 {
            let phase = ((h as f64 - 9.0) / 24.0 * std::f64::consts::TAU).sin();
            let temp = t_mean + day_shift + t_swing * phase + rng.gen_range(-1.0..1.0);
            let humidity = (h_mean - h_swing * phase + rng.gen_range(-3.0..3.0)).clamp(5.0, 100.0);
            push(h, EnvParameter::Temperature, (temp * 10.0).round() / 10.0);
            push(h, EnvParameter::Humidity, humidity.round());
        }
    }
    out
}

/// Daily unhealthy flags per trigger, from a generated trace.
pub fn unhealthy_days(env: &[EnvironmentSample], ranges: &HealthyRanges) -> BTreeMap<NaiveDate, BTreeSet<Trigger>> {
    let mut max: BTreeMap<(NaiveDate, Trigger), f64> = BTreeMap::new();
    for s in env {
        if let Some(t) = s.parameter.trigger() {
            let slot = max.entry((s.timestamp.date_naive(), t)).or_insert(f64::NEG_INFINITY);
            *slot = slot.max(s.value);
        }
    }
    let mut out: BTreeMap<NaiveDate, BTreeSet<Trigger>> = BTreeMap::new();
    for ((date, t), v) in max {
        let entry = out.entry(date).or_default();
        if !ranges.get(t).contains(v) {
            entry.insert(t);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthPatient {
    pub profile: PatientProfile,
    pub sensitivity: BTreeMap<Trigger, f64>,
    /// Probability that a day's reaction is to the previous day's exposure.
    pub lag_mix: f64,
    pub base_episode_rate: f64,
    pub answer_prob: f64,
    pub controller_prob: f64,
    pub personal_best_pef: f64,
    pub seed: u64,
}

impl GroundTruthPatient {
    pub fn validate(&self) -> Result<(), String> {
        let probs = [
            ("lag_mix", self.lag_mix),
            ("base_episode_rate", self.base_episode_rate),
            ("answer_prob", self.answer_prob),
            ("controller_prob", self.controller_prob),
        ];
        for (name, p) in probs.into_iter().chain(self.sensitivity.iter().map(|(t, w)| (t.as_str(), *w))) {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} = {p} is not a probability"));
            }
        }
        if self.personal_best_pef <= 0.0 {
            return Err("personal_best_pef must be positive".into());
        }
        self.profile.validate()
    }

    /// Trigger with the largest planted sensitivity; ties resolve to the
    /// usual trigger order.
    pub fn planted_trigger(&self) -> Option<Trigger> {
        Trigger::ALL
            .into_iter()
            .filter(|t| self.sensitivity.get(t).copied().unwrap_or(0.0) > 0.0)
            .max_by(|a, b| self.sensitivity[a].total_cmp(&self.sensitivity[b]).then(b.cmp(a)))
    }

    pub fn max_sensitivity(&self) -> f64 {
        self.sensitivity.values().copied().fold(0.0, f64::max)
    }
}

/// Generated patient-side streams plus the true episode days, including
/// days the patient did not answer.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientStream {
    pub observations: Vec<Observation>,
    pub true_episode_days: BTreeSet<NaiveDate>,
    pub answered_days: BTreeSet<NaiveDate>,
}

const EPISODE_SYMPTOMS: [(Symptom, f64); 6] = [
    (Symptom::Cough, 0.55),
    (Symptom::Wheeze, 0.5),
    (Symptom::ChestTightness, 0.2),
    (Symptom::HardFastBreathing, 0.3),
    (Symptom::CantTalkFullSentences, 0.1),
    (Symptom::NoseOpensWide, 0.05),
];

fn stamp(date: NaiveDate, hour: u32, minute: u32) -> DateTime<Utc> {
    date.and_hms_opt(hour, minute, 0).expect("valid time").and_utc()
}

/// Questionnaire and lung streams over the patient's deployment, driven by
/// the unhealthy days in `env`.
pub fn gen_patient_days(gt: &GroundTruthPatient, env: &[EnvironmentSample], ranges: &HealthyRanges) -> PatientStream {
    let mut rng = ChaCha8Rng::seed_from_u64(gt.seed);
    let unhealthy = unhealthy_days(env, ranges);
    let empty = BTreeSet::new();
    let pid = &gt.profile.patient_id;
    let mut stream = PatientStream { observations: vec![], true_episode_days: BTreeSet::new(), answered_days: BTreeSet::new() };

    for date in gt.profile.deployment().days() {
        let today = unhealthy.get(&date).unwrap_or(&empty);
        let yesterday = unhealthy.get(&(date - Duration::days(1))).unwrap_or(&empty);
        let mut p = gt.base_episode_rate;
        for (t, w) in &gt.sensitivity {
            let exposed = if rng.gen_bool(gt.lag_mix) { yesterday.contains(t) } else { today.contains(t) };
            if exposed {
                p += w;
            }
        }
        let episode = rng.gen_bool(p.min(1.0));
        let answered = rng.gen_bool(gt.answer_prob);
        // Draw the manifestation even when unanswered so that dropping answers
        // does not shift later days.
        let mut symptoms: BTreeSet<Symptom> =
            EPISODE_SYMPTOMS.iter().filter(|(_, q)| rng.gen_bool(*q)).map(|(s, _)| *s).collect();
        let rescue = rng.gen_bool(0.5);
        let awakening = rng.gen_bool(0.2);
        let activity = *[ActivityLimitation::ALittle, ActivityLimitation::HalfDay, ActivityLimitation::MostOfDay]
            .choose(&mut rng)
            .expect("non-empty");
        let limited = rng.gen_bool(0.4);
        let low_lung = rng.gen_bool(0.15);
        let controller = rng.gen_bool(gt.controller_prob);
        if episode && symptoms.is_empty() && !rescue && !awakening && !limited && !low_lung {
            symptoms.insert(Symptom::Cough);
        }
        if episode {
            stream.true_episode_days.insert(date);
        }
        if !answered {
            continue;
        }
        stream.answered_days.insert(date);

        let mut morning = QuestionnaireResponse::new(pid.clone(), date, Slot::Morning);
        morning.controller_taken = Some(controller);
        morning.rescue_count = Some(RescueCount::new(0));
        let mut daily = QuestionnaireResponse::new(pid.clone(), date, Slot::Daily);
        daily.activity_limitation = Some(ActivityLimitation::None);
        daily.night_awakening = Some(false);
        if episode {
            morning.symptoms = symptoms;
            if rescue {
                morning.rescue_count = Some(RescueCount::new(rng.gen_range(1..4)));
            }
            if limited {
                daily.activity_limitation = Some(activity);
            }
            daily.night_awakening = Some(awakening);
        }
        let pef = if episode && low_lung { gt.personal_best_pef * 0.6 } else { gt.personal_best_pef };
        let fev1 = pef / 150.0;
        stream.observations.push(Observation::new(Payload::Questionnaire(morning), stamp(date, 9, 30)));
        stream.observations.push(Observation::new(Payload::Questionnaire(daily), stamp(date, 21, 0)));
        for hour in [8, 20] {
            let reading = LungFunctionReading { patient_id: pid.clone(), timestamp: stamp(date, hour, 0), pef, fev1 };
            stream.observations.push(Observation::new(Payload::Lung(reading), stamp(date, hour, 1)));
        }
    }
    stream
}

/// Environment observations as they would arrive from the fetcher.
pub fn env_observations(env: &[EnvironmentSample]) -> Vec<Observation> {
    env.iter()
        .map(|s| {
            let received_at = s.timestamp + Duration::minutes(10);
            Observation::new(Payload::OutdoorEnv(s.clone()), received_at)
        })
        .collect()
}

/// First day of `season` on or after 2017-06-01 under `seasons`.
pub fn season_start(season: Season, seasons: &SeasonConfig) -> NaiveDate {
    let mut d = NaiveDate::from_ymd_opt(2017, 6, 1).expect("valid date");
    while !(seasons.season_of(d) == season && seasons.season_of(d - Duration::days(1)) != season) {
        d += Duration::days(1);
    }
    d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub season: Season,
    pub patients: usize,
    pub seed: u64,
    pub regions: usize,
    pub deployment_days: usize,
}

impl CohortSpec {
    pub fn new(season: Season, patients: usize, seed: u64) -> Self {
        Self { season, patients, seed, regions: 4, deployment_days: 91 }
    }
}

#[derive(Debug, Clone)]
pub struct Cohort {
    pub spec: CohortSpec,
    pub patients: Vec<GroundTruthPatient>,
    pub environment: BTreeMap<String, Vec<EnvironmentSample>>,
    pub streams: Vec<PatientStream>,
}

impl Cohort {
    pub fn profiles(&self) -> Vec<PatientProfile> {
        self.patients.iter().map(|p| p.profile.clone()).collect()
    }

    /// Environment then patient observations, in generation order.
    pub fn observations(&self) -> Vec<Observation> {
        let mut out: Vec<Observation> = self.environment.values().flat_map(|e| env_observations(e)).collect();
        out.extend(self.streams.iter().flat_map(|s| s.observations.iter().cloned()));
        out
    }
}

fn mix_seed(seed: u64, salt: u64) -> u64 {
    // SplitMix64 finalizer.
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A patient with one dominant trigger drawn from those active in the
/// season, weak secondary sensitivities and a low background rate.
pub fn random_patient(
    index: usize,
    season: Season,
    region: &str,
    start: NaiveDate,
    days: usize,
    seed: u64,
) -> GroundTruthPatient {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, index as u64 + 1));
    let prevalence = Prevalence::for_season(season);
    let active: Vec<Trigger> = Trigger::ALL.into_iter().filter(|t| prevalence.get(*t) > 0.0).collect();
    let dominant = *active.choose(&mut rng).expect("every season has an active trigger");
    let sensitivity = Trigger::ALL
        .into_iter()
        .map(|t| (t, if t == dominant { rng.gen_range(0.7..0.95) } else { rng.gen_range(0.0..0.08) }))
        .collect();
    let severity = *[Severity::Mild, Severity::Moderate, Severity::Severe].choose(&mut rng).expect("non-empty");
    GroundTruthPatient {
        profile: PatientProfile {
            patient_id: PatientId::new(format!("sim-{}-{index:04}", season.as_str())),
            severity,
            rescue_meds: vec!["albuterol".into()],
            controller_meds: vec!["singulair".into()],
            oral_steroid: Some("prednisone".into()),
            region: region.to_owned(),
            deployment_start: start,
            deployment_end: start + Duration::days(days as i64 - 1),
            enrollment_months: if days > 45 { EnrollmentMonths::Three } else { EnrollmentMonths::One },
        },
        sensitivity,
        lag_mix: rng.gen_range(0.0..0.5),
        base_episode_rate: rng.gen_range(0.0..0.03),
        answer_prob: rng.gen_range(0.5..0.95),
        controller_prob: rng.gen_range(0.1..0.9),
        personal_best_pef: rng.gen_range(250.0..550.0_f64).round(),
        seed: mix_seed(seed, 0x5EED_0000 + index as u64),
    }
}

pub fn generate_cohort(spec: &CohortSpec, seasons: &SeasonConfig, ranges: &HealthyRanges) -> Cohort {
    let start = season_start(spec.season, seasons);
    let regions: Vec<String> = (0..spec.regions.max(1)).map(|r| format!("{}-region-{r}", spec.season.as_str())).collect();
    let lead = 7;
    let environment: BTreeMap<String, Vec<EnvironmentSample>> = regions
        .iter()
        .enumerate()
        .map(|(r, name)| {
            let env_start = start - Duration::days(lead);
            let env = gen_environment(spec.season, name, env_start, spec.deployment_days + lead as usize, mix_seed(spec.seed, 0xE0 + r as u64));
            (name.clone(), env)
        })
        .collect();
    let patients: Vec<GroundTruthPatient> = (0..spec.patients)
        .map(|i| random_patient(i, spec.season, &regions[i % regions.len()], start, spec.deployment_days, spec.seed))
        .collect();
    let streams = patients.iter().map(|p| gen_patient_days(p, &environment[&p.profile.region], ranges)).collect();
    Cohort { spec: spec.clone(), patients, environment, streams }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observation::Stream;

    fn start() -> NaiveDate {
        NaiveDate::from_ymd_opt(2018, 1, 1).unwrap()
    }

    #[test]
    fn winter_has_no_pollen() {
        let env = gen_environment(Season::Winter, "r", start(), 30, 3);
        assert!(env.iter().filter(|s| s.parameter == EnvParameter::Pollen).all(|s| s.value == 0.0));
    }

    #[test]
    fn environment_is_seed_deterministic() {
        assert_eq!(gen_environment(Season::Fall, "r", start(), 5, 9), gen_environment(Season::Fall, "r", start(), 5, 9));
        assert_ne!(gen_environment(Season::Fall, "r", start(), 5, 9), gen_environment(Season::Fall, "r", start(), 5, 10));
    }

    #[test]
    fn spring_pollen_prevalence_is_in_band() {
        let env = gen_environment(Season::Spring, "r", NaiveDate::from_ymd_opt(2018, 3, 1).unwrap(), 90, 11);
        let days = unhealthy_days(&env, &HealthyRanges::default());
        let bad = days.values().filter(|s| s.contains(&Trigger::Pollen)).count() as f64 / days.len() as f64;
        assert!((0.2..=0.5).contains(&bad), "pollen unhealthy share {bad}");
    }

    #[test]
    fn cadence_matches_fetcher_defaults() {
        let env = gen_environment(Season::Spring, "r", start(), 1, 1);
        let count = |p| env.iter().filter(|s| s.parameter == p).count();
        assert_eq!(count(EnvParameter::Pollen), 2);
        assert_eq!(count(EnvParameter::Pm25), 24);
        assert_eq!(count(EnvParameter::Humidity), 24);
    }

    #[test]
    fn insensitive_patient_has_no_episodes() {
        let mut gt = random_patient(0, Season::Winter, "r", start(), 30, 5);
        gt.sensitivity.values_mut().for_each(|w| *w = 0.0);
        gt.base_episode_rate = 0.0;
        let env = gen_environment(Season::Winter, "r", start(), 30, 5);
        let stream = gen_patient_days(&gt, &env, &HealthyRanges::default());
        assert!(stream.true_episode_days.is_empty());
        assert!(!stream.answered_days.is_empty());
        assert!(stream.observations.iter().all(|o| o.validate().is_ok()));
        assert!(stream.observations.iter().any(|o| o.stream() == Stream::Lung));
    }

    #[test]
    fn planted_trigger_is_argmax() {
        let gt = random_patient(3, Season::Spring, "r", start(), 30, 5);
        gt.validate().unwrap();
        let t = gt.planted_trigger().unwrap();
        assert_eq!(gt.sensitivity[&t], gt.max_sensitivity());
        assert!(gt.max_sensitivity() >= 0.7);
    }

    #[test]
    fn season_start_follows_config() {
        let seasons = SeasonConfig::default();
        assert_eq!(season_start(Season::Winter, &seasons), NaiveDate::from_ymd_opt(2017, 12, 1).unwrap());
        assert_eq!(season_start(Season::Spring, &seasons), NaiveDate::from_ymd_opt(2018, 3, 1).unwrap());
    }
}
