//! Rule-driven alerts: next-day trigger forecasts, controller reminders and
//! clinician flags for oral-steroid intake.

use std::collections::BTreeSet;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::daily::{DailyEnvAggregate, DayRecord};
use crate::model::{HealthyRanges, MedicationClass, PatientId, PatientProfile, Trigger};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertKind {
    TriggerForecast,
    MedicationReminder,
    ClinicianFlag,
}

impl AlertKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AlertKind::TriggerForecast => "trigger_forecast",
            AlertKind::MedicationReminder => "medication_reminder",
            AlertKind::ClinicianFlag => "clinician_flag",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Audience {
    Patient,
    Clinician,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Alert {
    pub patient_id: PatientId,
    pub kind: AlertKind,
    pub date: NaiveDate,
    /// Trigger name, medication name or reason.
    pub detail: String,
    pub audience: Audience,
}

/// Alerts for `date`, given the forecast for that day and the record of the
/// day before. `learned` is the patient's ranked trigger list and may be
/// empty.
pub fn evaluate_alerts(
    profile: &PatientProfile,
    date: NaiveDate,
    forecast: &DailyEnvAggregate,
    yesterday: &DayRecord,
    learned: &[Trigger],
    ranges: &HealthyRanges,
) -> Vec<Alert> {
    let patient_id = &profile.patient_id;
    let mut out: BTreeSet<Alert> = BTreeSet::new();
    let alert = |kind, detail: String, audience| Alert { patient_id: patient_id.clone(), kind, date, detail, audience };

    for t in learned {
        if forecast.trigger_max(*t).is_some_and(|v| !ranges.get(*t).contains(v)) {
            out.insert(alert(AlertKind::TriggerForecast, t.as_str().to_owned(), Audience::Patient));
        }
    }
    if let Some(answers) = yesterday.answers() {
        if !answers.controller_taken {
            let med = profile.controller_meds.join(", ");
            out.insert(alert(AlertKind::MedicationReminder, med, Audience::Patient));
        }
    }
    for event in &yesterday.medication_events {
        let steroid = event.class == MedicationClass::OralSteroid
            || profile.oral_steroid.as_deref() == Some(event.medication.as_str());
        if steroid {
            out.insert(alert(AlertKind::ClinicianFlag, event.medication.clone(), Audience::Clinician));
        }
    }
    out.into_iter().collect()
}
