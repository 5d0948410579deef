//! The ingestion envelope: stream tag, idempotency key, typed payload and
//! the canonical NDJSON encoding.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::{
    ActivitySleepSample, EnvironmentSample, IndoorAirSample, LungFunctionReading, MedicationEvent,
    PatientId, QuestionnaireResponse,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    Questionnaire,
    Lung,
    OutdoorEnv,
    IndoorEnv,
    ActivitySleep,
    MedicationEvent,
}

impl Stream {
    pub const ALL: [Stream; 6] = [
        Stream::Questionnaire,
        Stream::Lung,
        Stream::OutdoorEnv,
        Stream::IndoorEnv,
        Stream::ActivitySleep,
        Stream::MedicationEvent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stream::Questionnaire => "questionnaire",
            Stream::Lung => "lung",
            Stream::OutdoorEnv => "outdoor_env",
            Stream::IndoorEnv => "indoor_env",
            Stream::ActivitySleep => "activity_sleep",
            Stream::MedicationEvent => "medication_event",
        }
    }

    /// Whether observations of this stream are keyed by a patient rather
    /// than a region.
    pub fn is_patient_scoped(self) -> bool {
        !matches!(self, Stream::OutdoorEnv)
    }
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stream {
    type Err = Rejection;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stream::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Rejection::UnknownStream(s.to_owned()))
    }
}

/// Why an observation was refused.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum Rejection {
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("identity-bearing field {0:?} in payload")]
    IdentityLeak(String),
    #[error("unknown stream {0:?}")]
    UnknownStream(String),
}

impl Rejection {
    pub fn code(&self) -> &'static str {
        match self {
            Rejection::SchemaViolation(_) => "SchemaViolation",
            Rejection::IdentityLeak(_) => "IdentityLeak",
            Rejection::UnknownStream(_) => "UnknownStream",
        }
    }
}

/// `(subject, stream, timestamp, discriminator)`. The subject is the patient
/// id for patient streams and the region for outdoor environment samples;
/// the discriminator is the slot, parameter or a per-stream constant.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdempotencyKey {
    pub subject: String,
    pub stream: Stream,
    pub timestamp: DateTime<Utc>,
    pub discriminator: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Questionnaire(QuestionnaireResponse),
    Lung(LungFunctionReading),
    OutdoorEnv(EnvironmentSample),
    IndoorEnv(IndoorAirSample),
    ActivitySleep(ActivitySleepSample),
    MedicationEvent(MedicationEvent),
}

fn midnight(date: NaiveDate) -> DateTime<Utc> {
    date.and_time(NaiveTime::MIN).and_utc()
}

impl Payload {
    pub fn stream(&self) -> Stream {
        match self {
            Payload::Questionnaire(_) => Stream::Questionnaire,
            Payload::Lung(_) => Stream::Lung,
            Payload::OutdoorEnv(_) => Stream::OutdoorEnv,
            Payload::IndoorEnv(_) => Stream::IndoorEnv,
            Payload::ActivitySleep(_) => Stream::ActivitySleep,
            Payload::MedicationEvent(_) => Stream::MedicationEvent,
        }
    }

    pub fn key(&self) -> IdempotencyKey {
        let (subject, timestamp, discriminator) = match self {
            Payload::Questionnaire(q) => {
                (q.patient_id.0.clone(), midnight(q.date), q.slot.as_str().to_owned())
            }
            Payload::Lung(l) => (l.patient_id.0.clone(), l.timestamp, "lung".to_owned()),
            Payload::OutdoorEnv(e) => {
                (e.region.clone(), e.timestamp, e.parameter.as_str().to_owned())
            }
            Payload::IndoorEnv(i) => (i.patient_id.0.clone(), i.timestamp, "indoor".to_owned()),
            Payload::ActivitySleep(a) => {
                (a.patient_id.0.clone(), midnight(a.date), "daily".to_owned())
            }
            Payload::MedicationEvent(m) => (m.patient_id.0.clone(), m.timestamp, m.medication.clone()),
        };
        IdempotencyKey { subject, stream: self.stream(), timestamp, discriminator }
    }

    pub fn patient_id(&self) -> Option<&PatientId> {
        match self {
            Payload::Questionnaire(q) => Some(&q.patient_id),
            Payload::Lung(l) => Some(&l.patient_id),
            Payload::OutdoorEnv(_) => None,
            Payload::IndoorEnv(i) => Some(&i.patient_id),
            Payload::ActivitySleep(a) => Some(&a.patient_id),
            Payload::MedicationEvent(m) => Some(&m.patient_id),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            Payload::Questionnaire(q) => q.validate(),
            Payload::Lung(l) => l.validate(),
            Payload::OutdoorEnv(e) => e.validate(),
            Payload::IndoorEnv(i) => i.validate(),
            Payload::ActivitySleep(a) => a.validate(),
            Payload::MedicationEvent(m) => m.validate(),
        }
    }

    pub fn to_value(&self) -> Value {
        let v = match self {
            Payload::Questionnaire(p) => serde_json::to_value(p),
            Payload::Lung(p) => serde_json::to_value(p),
            Payload::OutdoorEnv(p) => serde_json::to_value(p),
            Payload::IndoorEnv(p) => serde_json::to_value(p),
            Payload::ActivitySleep(p) => serde_json::to_value(p),
            Payload::MedicationEvent(p) => serde_json::to_value(p),
        };
        v.expect("payload types always serialize")
    }

    fn from_value(stream: Stream, value: Value) -> Result<Self, serde_json::Error> {
        Ok(match stream {
            Stream::Questionnaire => Payload::Questionnaire(serde_json::from_value(value)?),
            Stream::Lung => Payload::Lung(serde_json::from_value(value)?),
            Stream::OutdoorEnv => Payload::OutdoorEnv(serde_json::from_value(value)?),
            Stream::IndoorEnv => Payload::IndoorEnv(serde_json::from_value(value)?),
            Stream::ActivitySleep => Payload::ActivitySleep(serde_json::from_value(value)?),
            Stream::MedicationEvent => Payload::MedicationEvent(serde_json::from_value(value)?),
        })
    }
}

/// A validated observation. Construct with [`Observation::new`] or parse
/// with [`validate_observation`].
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    key: IdempotencyKey,
    payload: Payload,
    pub received_at: DateTime<Utc>,
}

impl Observation {
    pub fn new(payload: Payload, received_at: DateTime<Utc>) -> Self {
        Self { key: payload.key(), payload, received_at }
    }

    pub fn key(&self) -> &IdempotencyKey {
        &self.key
    }

    pub fn stream(&self) -> Stream {
        self.key.stream
    }

    pub fn payload(&self) -> &Payload {
        &self.payload
    }

    pub fn patient_id(&self) -> Option<&PatientId> {
        self.payload.patient_id()
    }

    /// Same key and payload; `received_at` is ignored.
    pub fn same_content(&self, other: &Observation) -> bool {
        self.key == other.key && self.payload == other.payload
    }

    /// Checks type invariants of an observation built in memory.
    pub fn validate(&self) -> Result<(), Rejection> {
        if self.key != self.payload.key() {
            return Err(Rejection::SchemaViolation("idempotency_key does not match payload".into()));
        }
        self.payload.validate().map_err(Rejection::SchemaViolation)
    }

    fn to_wire(&self) -> WireObservation {
        WireObservation {
            idempotency_key: Some(self.key.clone()),
            stream: self.key.stream.as_str().to_owned(),
            payload: self.payload.to_value(),
            received_at: self.received_at,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&self.to_wire()).expect("observation serializes")
    }
}

impl Serialize for Observation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_wire().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Observation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        validate_observation(v).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireObservation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    idempotency_key: Option<IdempotencyKey>,
    stream: String,
    payload: Value,
    received_at: DateTime<Utc>,
}

const IDENTITY_FIELDS: &[&str] = &[
    "name",
    "patientname",
    "firstname",
    "lastname",
    "fullname",
    "givenname",
    "surname",
    "address",
    "streetaddress",
    "homeaddress",
    "street",
    "birthdate",
    "dateofbirth",
    "dob",
    "ssn",
    "phone",
    "phonenumber",
    "email",
    "mrn",
];

fn is_identity_field(key: &str) -> bool {
    let norm: String =
        key.chars().filter(|c| c.is_ascii_alphanumeric()).map(|c| c.to_ascii_lowercase()).collect();
    IDENTITY_FIELDS.contains(&norm.as_str())
}

fn find_identity_field(v: &Value) -> Option<String> {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                if is_identity_field(k) {
                    return Some(k.clone());
                }
                if let Some(found) = find_identity_field(child) {
                    return Some(found);
                }
            }
            None
        }
        Value::Array(items) => items.iter().find_map(find_identity_field),
        _ => None,
    }
}

/// Parses and validates one raw observation object.
///
/// Identity screening runs before schema checks so that a leaking payload
/// is always reported as such, even when it is also malformed.
pub fn validate_observation(raw: Value) -> Result<Observation, Rejection> {
    if let Some(field) = raw.get("payload").and_then(find_identity_field) {
        return Err(Rejection::IdentityLeak(field));
    }
    let wire: WireObservation =
        serde_json::from_value(raw).map_err(|e| Rejection::SchemaViolation(e.to_string()))?;
    let stream: Stream = wire.stream.parse()?;
    let payload = Payload::from_value(stream, wire.payload)
        .map_err(|e| Rejection::SchemaViolation(format!("{stream} payload: {e}")))?;
    let derived = payload.key();
    if let Some(key) = wire.idempotency_key {
        if key != derived {
            return Err(Rejection::SchemaViolation("idempotency_key does not match payload".into()));
        }
    }
    let obs = Observation { key: derived, payload, received_at: wire.received_at };
    obs.validate()?;
    Ok(obs)
}

/// Parses one NDJSON line.
pub fn parse_observation_line(line: &str) -> Result<Observation, Rejection> {
    let v: Value = serde_json::from_str(line)
        .map_err(|e| Rejection::SchemaViolation(format!("malformed JSON: {e}")))?;
    validate_observation(v)
}

/// Parses an NDJSON document, one result per non-blank line.
pub fn parse_ndjson(text: &str) -> Vec<Result<Observation, Rejection>> {
    text.lines().filter(|l| !l.trim().is_empty()).map(parse_observation_line).collect()
}

pub fn to_ndjson<'a>(obs: impl IntoIterator<Item = &'a Observation>) -> String {
    let mut out = String::new();
    for o in obs {
        out.push_str(&o.to_json_line());
        out.push('\n');
    }
    out
}
