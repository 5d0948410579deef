//! Learning/prediction tables per patient and the cohort trigger table,
//! rendered as Markdown or CSV from the same cells.

use std::fmt::Write as _;

use chrono::Duration;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::{
    default_periods, period_report, segment_by_pollen, AnalysisPeriod, AttributionError, CohortSummary,
    PollenPresence, TriggerReport, ValueRange,
};
use crate::config::AnalysisConfig;
use crate::model::{DateRange, PatientId, Trigger};
use crate::timeline::PatientTimeline;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReportError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error(transparent)]
    Attribution(#[from] AttributionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    #[default]
    Markdown,
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "markdown" | "md" => Ok(Self::Markdown),
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

/// How a patient's deployment is cut into learning/prediction windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReportOptions {
    /// Last learning day; otherwise the default split of the analyzed span.
    pub learning_end: Option<chrono::NaiveDate>,
    /// Analyze each pollen-absent/present segment separately.
    pub by_pollen_segment: bool,
    /// Learning days per segment; otherwise the split fraction of the
    /// segment length.
    pub learning_days: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSection {
    pub title: String,
    pub learning: TriggerReport,
    pub prediction: Option<TriggerReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientReport {
    pub patient_id: PatientId,
    pub sections: Vec<ReportSection>,
}

fn report_or_empty(
    timeline: &PatientTimeline,
    period: &AnalysisPeriod,
    cfg: &AnalysisConfig,
) -> Result<Option<TriggerReport>, ReportError> {
    if period.range.is_empty() {
        return Ok(None);
    }
    match period_report(timeline, period, cfg) {
        Ok(r) => Ok(Some(r)),
        Err(AttributionError::EmptyPeriod(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn section(
    timeline: &PatientTimeline,
    title: String,
    learning: AnalysisPeriod,
    prediction: AnalysisPeriod,
    cfg: &AnalysisConfig,
) -> Result<ReportSection, ReportError> {
    let Some(learning) = report_or_empty(timeline, &learning, cfg)? else {
        return Err(ReportError::InsufficientData(format!("no answered days in learning period {}", learning.range)));
    };
    let prediction = report_or_empty(timeline, &prediction, cfg)?;
    Ok(ReportSection { title, learning, prediction })
}

pub fn patient_report(
    timeline: &PatientTimeline,
    cfg: &AnalysisConfig,
    options: &ReportOptions,
) -> Result<PatientReport, ReportError> {
    let id = timeline.profile.patient_id.clone();
    if timeline.analyzed_span().is_none() {
        return Err(ReportError::InsufficientData(format!("{id} answered no questionnaire days")));
    }
    let mut sections = Vec::new();
    if options.by_pollen_segment {
        for seg in segment_by_pollen(timeline, cfg) {
            let n = options
                .learning_days
                .unwrap_or_else(|| cfg.learning_split.learning_days(seg.range.len()))
                .clamp(1, seg.range.len());
            let learning_end = seg.range.start + Duration::days(n as i64 - 1);
            let learning = AnalysisPeriod::learning(id.clone(), DateRange::new(seg.range.start, learning_end));
            let prediction =
                AnalysisPeriod::prediction(id.clone(), DateRange::new(learning_end + Duration::days(1), seg.range.end));
            let presence = match seg.presence {
                PollenPresence::Absent => "Pollen absent",
                PollenPresence::Present => "Pollen present",
            };
            match section(timeline, format!("{presence} {}", seg.range), learning, prediction, cfg) {
                Ok(s) => sections.push(s),
                Err(ReportError::InsufficientData(_)) => continue,
                Err(e) => return Err(e),
            }
        }
    } else {
        let (learning, prediction) = match options.learning_end {
            Some(end) => crate::attribution::split_at(timeline, end)?,
            None => default_periods(timeline, cfg)
                .ok_or_else(|| ReportError::InsufficientData(format!("{id} has no analyzed span")))?,
        };
        sections.push(section(timeline, format!("Deployment {}", timeline.deployment()), learning, prediction, cfg)?);
    }
    if sections.is_empty() {
        return Err(ReportError::InsufficientData(format!("{id} has no analyzable segment")));
    }
    Ok(PatientReport { patient_id: id, sections })
}

/// One rendered column.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportColumn {
    pub section: String,
    pub label: &'static str,
    pub range: DateRange,
    pub days: usize,
    pub unhealthy: [usize; 3],
    pub episodes: usize,
    pub temp: Option<ValueRange>,
    pub humidity: Option<ValueRange>,
}

impl PatientReport {
    pub fn columns(&self) -> Vec<ReportColumn> {
        let mut cols = Vec::new();
        for s in &self.sections {
            for (label, r) in [("Learning", Some(&s.learning)), ("Prediction", s.prediction.as_ref())] {
                let Some(r) = r else { continue };
                cols.push(ReportColumn {
                    section: s.title.clone(),
                    label,
                    range: r.period.range,
                    days: r.period.range.len(),
                    unhealthy: Trigger::ALL.map(|t| r.unhealthy_days[&t]),
                    episodes: r.episode_days,
                    temp: r.temp_range,
                    humidity: r.humidity_range,
                });
            }
        }
        cols
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Markdown => self.to_markdown(),
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Json => serde_json::to_string_pretty(self).expect("report serializes"),
        }
    }

    pub fn to_markdown(&self) -> String {
        let cols = self.columns();
        let mut out = format!("# Patient {}\n", self.patient_id);
        for s in &self.sections {
            let mine: Vec<&ReportColumn> = cols.iter().filter(|c| c.section == s.title).collect();
            let _ = write!(out, "\n## {}\n\n|  |", s.title);
            for c in &mine {
                let _ = write!(out, " {} {} ({} days) |", c.label, c.range, c.days);
            }
            out.push_str("\n|---|");
            out.push_str(&"---|".repeat(mine.len()));
            out.push('\n');
            for (i, t) in Trigger::ALL.iter().enumerate() {
                let _ = write!(out, "| {} |", t.label());
                for c in &mine {
                    let _ = write!(out, " {} days |", c.unhealthy[i]);
                }
                out.push('\n');
            }
            out.push_str("| Asthma episodes |");
            for c in &mine {
                let _ = write!(out, " {} days |", c.episodes);
            }
            out.push('\n');
            for (name, unit, pick) in [
                ("Outdoor temperature", "F", (|c: &ReportColumn| c.temp) as fn(&ReportColumn) -> Option<ValueRange>),
                ("Outdoor humidity", "%", |c: &ReportColumn| c.humidity),
            ] {
                let _ = write!(out, "| {name} |");
                for c in &mine {
                    match pick(c) {
                        Some(r) => {
                            let _ = write!(out, " {} to {} {unit} |", r.min, r.max);
                        }
                        None => out.push_str(" n/a |"),
                    }
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "section", "period", "start", "end", "pollen_days", "pm25_days", "ozone_days", "episode_days", "temp_min",
            "temp_max", "humidity_min", "humidity_max",
        ])
        .expect("in-memory csv");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for c in self.columns() {
            w.write_record([
                c.section.clone(),
                c.label.to_lowercase(),
                c.range.start.to_string(),
                c.range.end.to_string(),
                c.unhealthy[0].to_string(),
                c.unhealthy[1].to_string(),
                c.unhealthy[2].to_string(),
                c.episodes.to_string(),
                opt(c.temp.map(|r| r.min)),
                opt(c.temp.map(|r| r.max)),
                opt(c.humidity.map(|r| r.min)),
                opt(c.humidity.map(|r| r.max)),
            ])
            .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("csv is utf-8")
    }
}

fn pct(x: f64) -> String {
    format!("{:.0}%", x * 100.0)
}

pub fn cohort_markdown(summary: &CohortSummary) -> String {
    let mut out = format!(
        "# {} cohort\n\nPatients analyzed: {}\nTrigger identified: {}\nNo episodes: {} ({})\n\n| Major trigger | Patients | Share |\n|---|---|---|\n",
        summary.season,
        summary.patients_analyzed,
        summary.trigger_identified,
        summary.no_episode_patients,
        pct(summary.no_episode_fraction),
    );
    for t in Trigger::ALL {
        let _ = writeln!(out, "| {} | {} | {} |", t.label(), summary.major_trigger_counts[&t], pct(summary.major_trigger_distribution[&t]));
    }
    out
}

pub fn cohort_csv(summary: &CohortSummary) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["season", "trigger", "patients", "share", "trigger_identified", "patients_analyzed"]).expect("csv");
    for t in Trigger::ALL {
        w.write_record([
            summary.season.to_string(),
            t.as_str().to_owned(),
            summary.major_trigger_counts[&t].to_string(),
            summary.major_trigger_distribution[&t].to_string(),
            summary.trigger_identified.to_string(),
            summary.patients_analyzed.to_string(),
        ])
        .expect("csv");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("csv is utf-8")
}

pub fn render_cohort(summary: &CohortSummary, format: ReportFormat) -> String {
    match format {
        ReportFormat::Markdown => cohort_markdown(summary),
        ReportFormat::Csv => cohort_csv(summary),
        ReportFormat::Json => serde_json::to_string_pretty(summary).expect("summary serializes"),
    }
}
