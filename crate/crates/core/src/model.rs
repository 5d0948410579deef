//! Domain types shared by every subsystem: patient profiles, the per-stream
//! payloads, healthy ranges and the calendar helpers.

use std::collections::BTreeSet;
use std::fmt;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

/// Anonymized patient token. Carries no identity semantics.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PatientId(pub String);

impl PatientId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PatientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for PatientId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Mild,
    Moderate,
    Severe,
}

/// Enrollment length in months. Only one- and three-month deployments exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum EnrollmentMonths {
    One,
    Three,
}

impl TryFrom<u8> for EnrollmentMonths {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(Self::One),
            3 => Ok(Self::Three),
            other => Err(format!("enrollment_months must be 1 or 3, got {other}")),
        }
    }
}

impl From<EnrollmentMonths> for u8 {
    fn from(m: EnrollmentMonths) -> u8 {
        match m {
            EnrollmentMonths::One => 1,
            EnrollmentMonths::Three => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientProfile {
    pub patient_id: PatientId,
    pub severity: Severity,
    pub rescue_meds: Vec<String>,
    pub controller_meds: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oral_steroid: Option<String>,
    pub region: String,
    pub deployment_start: NaiveDate,
    /// Inclusive last day of the deployment.
    pub deployment_end: NaiveDate,
    pub enrollment_months: EnrollmentMonths,
}

impl PatientProfile {
    pub fn validate(&self) -> Result<(), String> {
        if self.patient_id.0.trim().is_empty() {
            return Err("patient_id is empty".into());
        }
        if self.deployment_start >= self.deployment_end {
            return Err(format!(
                "deployment_start {} must precede deployment_end {}",
                self.deployment_start, self.deployment_end
            ));
        }
        if self.rescue_meds.is_empty() {
            return Err("rescue_meds must not be empty".into());
        }
        if self.controller_meds.is_empty() {
            return Err("controller_meds must not be empty".into());
        }
        if self.region.trim().is_empty() {
            return Err("region is empty".into());
        }
        Ok(())
    }

    pub fn deployment(&self) -> DateRange {
        DateRange::new(self.deployment_start, self.deployment_end)
    }
}

/// The six questionnaire symptoms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Symptom {
    Cough,
    Wheeze,
    ChestTightness,
    HardFastBreathing,
    CantTalkFullSentences,
    NoseOpensWide,
}

impl Symptom {
    pub const ALL: [Symptom; 6] = [
        Symptom::Cough,
        Symptom::Wheeze,
        Symptom::ChestTightness,
        Symptom::HardFastBreathing,
        Symptom::CantTalkFullSentences,
        Symptom::NoseOpensWide,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Symptom::Cough => "cough",
            Symptom::Wheeze => "wheeze",
            Symptom::ChestTightness => "chest_tightness",
            Symptom::HardFastBreathing => "hard_fast_breathing",
            Symptom::CantTalkFullSentences => "cant_talk_full_sentences",
            Symptom::NoseOpensWide => "nose_opens_wide",
        }
    }

    /// Display rank, lower is more severe. Chest tightness outranks cough
    /// and wheeze. Never used by detection.
    pub fn display_rank(self) -> u8 {
        match self {
            Symptom::ChestTightness => 0,
            Symptom::Cough => 1,
            Symptom::Wheeze => 1,
            Symptom::HardFastBreathing => 2,
            Symptom::CantTalkFullSentences => 2,
            Symptom::NoseOpensWide => 2,
        }
    }
}

impl fmt::Display for Symptom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    Morning,
    Evening,
    Daily,
}

impl Slot {
    pub fn as_str(self) -> &'static str {
        match self {
            Slot::Morning => "morning",
            Slot::Evening => "evening",
            Slot::Daily => "daily",
        }
    }
}

/// Rescue inhaler count. The questionnaire's top answer is "6+", stored as
/// 6 with `saturated` set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RescueCount {
    pub count: u8,
    #[serde(default)]
    pub saturated: bool,
}

impl RescueCount {
    pub const MAX: u8 = 6;

    pub fn new(count: u32) -> Self {
        if count >= u32::from(Self::MAX) {
            Self { count: Self::MAX, saturated: count > u32::from(Self::MAX) }
        } else {
            Self { count: count as u8, saturated: false }
        }
    }

    pub fn six_plus() -> Self {
        Self { count: Self::MAX, saturated: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivityLimitation {
    None,
    ALittle,
    HalfDay,
    MostOfDay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionnaireResponse {
    pub patient_id: PatientId,
    pub date: NaiveDate,
    pub slot: Slot,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub symptoms: BTreeSet<Symptom>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rescue_count: Option<RescueCount>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller_taken: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activity_limitation: Option<ActivityLimitation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub night_awakening: Option<bool>,
}

impl QuestionnaireResponse {
    pub fn new(patient_id: PatientId, date: NaiveDate, slot: Slot) -> Self {
        Self {
            patient_id,
            date,
            slot,
            symptoms: BTreeSet::new(),
            rescue_count: None,
            controller_taken: None,
            activity_limitation: None,
            night_awakening: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self.slot {
            Slot::Morning | Slot::Evening => {
                if self.activity_limitation.is_some() {
                    return Err(format!("activity_limitation not allowed in {} slot", self.slot.as_str()));
                }
                if self.night_awakening.is_some() {
                    return Err(format!("night_awakening not allowed in {} slot", self.slot.as_str()));
                }
            }
            Slot::Daily => {
                if !self.symptoms.is_empty() {
                    return Err("symptoms not allowed in daily slot".into());
                }
                if self.rescue_count.is_some() {
                    return Err("rescue_count not allowed in daily slot".into());
                }
                if self.controller_taken.is_some() {
                    return Err("controller_taken not allowed in daily slot".into());
                }
            }
        }
        if let Some(r) = self.rescue_count {
            if r.count > RescueCount::MAX {
                return Err(format!("rescue_count {} exceeds {}", r.count, RescueCount::MAX));
            }
            if r.saturated && r.count != RescueCount::MAX {
                return Err("saturated rescue_count must be 6".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LungFunctionReading {
    pub patient_id: PatientId,
    pub timestamp: DateTime<Utc>,
    /// Peak expiratory flow, L/min.
    pub pef: f64,
    /// Forced expiratory volume in one second, L.
    pub fev1: f64,
}

impl LungFunctionReading {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.pef.is_finite() && self.pef > 0.0) {
            return Err(format!("pef must be positive, got {}", self.pef));
        }
        if !(self.fev1.is_finite() && self.fev1 > 0.0) {
            return Err(format!("fev1 must be positive, got {}", self.fev1));
        }
        Ok(())
    }
}

/// Outdoor environmental parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvParameter {
    Pollen,
    Pm25,
    Ozone,
    Temperature,
    Humidity,
}

impl EnvParameter {
    pub const ALL: [EnvParameter; 5] = [
        EnvParameter::Pollen,
        EnvParameter::Pm25,
        EnvParameter::Ozone,
        EnvParameter::Temperature,
        EnvParameter::Humidity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EnvParameter::Pollen => "pollen",
            EnvParameter::Pm25 => "pm25",
            EnvParameter::Ozone => "ozone",
            EnvParameter::Temperature => "temperature",
            EnvParameter::Humidity => "humidity",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            EnvParameter::Pollen => "index",
            EnvParameter::Pm25 | EnvParameter::Ozone => "AQI",
            EnvParameter::Temperature => "F",
            EnvParameter::Humidity => "%RH",
        }
    }

    pub fn trigger(self) -> Option<Trigger> {
        match self {
            EnvParameter::Pollen => Some(Trigger::Pollen),
            EnvParameter::Pm25 => Some(Trigger::Pm25),
            EnvParameter::Ozone => Some(Trigger::Ozone),
            _ => None,
        }
    }
}

impl fmt::Display for EnvParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSample {
    pub region: String,
    pub timestamp: DateTime<Utc>,
    pub parameter: EnvParameter,
    pub value: f64,
}

impl EnvironmentSample {
    pub fn validate(&self) -> Result<(), String> {
        if self.region.trim().is_empty() {
            return Err("region is empty".into());
        }
        if !self.value.is_finite() {
            return Err(format!("{} value is not finite", self.parameter));
        }
        match self.parameter {
            EnvParameter::Pollen | EnvParameter::Pm25 | EnvParameter::Ozone if self.value < 0.0 => {
                Err(format!("{} must be >= 0, got {}", self.parameter, self.value))
            }
            EnvParameter::Humidity if !(0.0..=100.0).contains(&self.value) => {
                Err(format!("humidity must be in [0, 100], got {}", self.value))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndoorAirSample {
    pub patient_id: PatientId,
    pub timestamp: DateTime<Utc>,
    pub temperature: f64,
    pub humidity: f64,
    pub particulate_matter: f64,
    pub voc: f64,
    pub co2: f64,
    pub global_pollution_index: f64,
}

impl IndoorAirSample {
    pub fn validate(&self) -> Result<(), String> {
        if !self.temperature.is_finite() {
            return Err("temperature is not finite".into());
        }
        for (name, v) in [
            ("humidity", self.humidity),
            ("particulate_matter", self.particulate_matter),
            ("voc", self.voc),
            ("co2", self.co2),
            ("global_pollution_index", self.global_pollution_index),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{name} must be >= 0, got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivitySleepSample {
    pub patient_id: PatientId,
    pub date: NaiveDate,
    pub steps: u32,
    pub sleep_minutes: u32,
}

impl ActivitySleepSample {
    pub fn validate(&self) -> Result<(), String> {
        if self.sleep_minutes > 1440 {
            return Err(format!("sleep_minutes must be <= 1440, got {}", self.sleep_minutes));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MedicationClass {
    Rescue,
    Controller,
    OralSteroid,
}

/// A recorded medication intake outside the questionnaire, e.g. an oral
/// steroid course.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MedicationEvent {
    pub patient_id: PatientId,
    pub timestamp: DateTime<Utc>,
    pub medication: String,
    pub class: MedicationClass,
}

impl MedicationEvent {
    pub fn validate(&self) -> Result<(), String> {
        if self.medication.trim().is_empty() {
            return Err("medication is empty".into());
        }
        Ok(())
    }
}

/// Environmental parameters with a published healthy range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    Pollen,
    Pm25,
    Ozone,
}

impl Trigger {
    /// Fixed tie-break order: pollen, then pm25, then ozone.
    pub const ALL: [Trigger; 3] = [Trigger::Pollen, Trigger::Pm25, Trigger::Ozone];

    pub fn as_str(self) -> &'static str {
        match self {
            Trigger::Pollen => "pollen",
            Trigger::Pm25 => "pm25",
            Trigger::Ozone => "ozone",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Trigger::Pollen => "Pollen",
            Trigger::Pm25 => "PM2.5",
            Trigger::Ozone => "Ozone",
        }
    }

    pub fn parameter(self) -> EnvParameter {
        match self {
            Trigger::Pollen => EnvParameter::Pollen,
            Trigger::Pm25 => EnvParameter::Pm25,
            Trigger::Ozone => EnvParameter::Ozone,
        }
    }

    pub fn priority(self) -> u8 {
        match self {
            Trigger::Pollen => 0,
            Trigger::Pm25 => 1,
            Trigger::Ozone => 2,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pollen" => Some(Trigger::Pollen),
            "pm25" | "pm2.5" => Some(Trigger::Pm25),
            "ozone" => Some(Trigger::Ozone),
            _ => None,
        }
    }
}

impl PartialOrd for Trigger {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Trigger {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.priority().cmp(&other.priority())
    }
}

impl fmt::Display for Trigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HealthyRange {
    pub parameter: EnvParameter,
    pub lower: f64,
    pub upper: f64,
}

impl HealthyRange {
    pub fn new(parameter: EnvParameter, lower: f64, upper: f64) -> Result<Self, String> {
        if !(lower.is_finite() && upper.is_finite()) || lower > upper {
            return Err(format!("invalid healthy range for {parameter}: [{lower}, {upper}]"));
        }
        Ok(Self { parameter, lower, upper })
    }

    /// Both bounds are inclusive.
    pub fn contains(&self, value: f64) -> bool {
        value >= self.lower && value <= self.upper
    }
}

/// Healthy ranges for the three attributable triggers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HealthyRanges {
    pub pollen: HealthyRange,
    pub pm25: HealthyRange,
    pub ozone: HealthyRange,
}

impl Default for HealthyRanges {
    fn default() -> Self {
        Self {
            pollen: HealthyRange { parameter: EnvParameter::Pollen, lower: 0.0, upper: 2.4 },
            pm25: HealthyRange { parameter: EnvParameter::Pm25, lower: 0.0, upper: 50.0 },
            ozone: HealthyRange { parameter: EnvParameter::Ozone, lower: 0.0, upper: 50.0 },
        }
    }
}

impl HealthyRanges {
    pub fn get(&self, trigger: Trigger) -> &HealthyRange {
        match trigger {
            Trigger::Pollen => &self.pollen,
            Trigger::Pm25 => &self.pm25,
            Trigger::Ozone => &self.ozone,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for t in Trigger::ALL {
            let r = self.get(t);
            if r.parameter != t.parameter() {
                return Err(format!("healthy range for {t} names parameter {}", r.parameter));
            }
            HealthyRange::new(r.parameter, r.lower, r.upper)?;
        }
        Ok(())
    }
}

/// Inclusive calendar date range. `end < start` is the empty range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Self {
        Self { start, end }
    }

    pub fn single(day: NaiveDate) -> Self {
        Self { start: day, end: day }
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }

    pub fn len(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            (self.end - self.start).num_days() as usize + 1
        }
    }

    pub fn contains(&self, day: NaiveDate) -> bool {
        day >= self.start && day <= self.end
    }

    pub fn days(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        let n = self.len();
        (0..n).map(move |i| self.start + Duration::days(i as i64))
    }

    pub fn intersect(&self, other: &DateRange) -> DateRange {
        DateRange { start: self.start.max(other.start), end: self.end.min(other.end) }
    }
}

impl fmt::Display for DateRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..={}", self.start, self.end)
    }
}
