//! Idempotent observation store.
//!
//! Observations are keyed by their [`IdempotencyKey`]. Writes are serialized
//! behind a single writer lock; readers hold a read guard and therefore see
//! either none or all of a batch. When opened on a path, every committed
//! batch is appended to a journal as a single NDJSON line, so a torn final
//! line is the only possible partial write and is discarded on reopen.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::ops::Bound;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Mutex, RwLock, RwLockReadGuard};

use chrono::{DateTime, Duration, NaiveDate, NaiveTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alerting::Alert;
use crate::model::{PatientId, PatientProfile};
use crate::observation::{parse_ndjson, IdempotencyKey, Observation, Rejection, Stream};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("storage unavailable: {0}")]
    StorageUnavailable(String),
    #[error("store corruption at journal line {line}: {message}")]
    Corruption { line: usize, message: String },
    #[error("invalid patient profile: {0}")]
    InvalidPatient(String),
    #[error("unknown patient {0}")]
    UnknownPatient(PatientId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "outcome")]
pub enum UpsertOutcome {
    Stored,
    Duplicate,
    /// Same key, different payload. `replaced` tells whether the incoming
    /// write won.
    Conflict { replaced: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictRecord {
    pub key: IdempotencyKey,
    pub kept_received_at: DateTime<Utc>,
    pub discarded_received_at: DateTime<Utc>,
}

/// Maps timestamps to the local calendar day shared by patients and
/// regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DayClock {
    pub utc_offset_minutes: i32,
}

impl DayClock {
    pub fn utc() -> Self {
        Self::default()
    }

    pub fn local_date(&self, ts: DateTime<Utc>) -> NaiveDate {
        (ts + Duration::minutes(i64::from(self.utc_offset_minutes))).date_naive()
    }

    /// `[start, end)` of the local day in UTC.
    pub fn day_bounds(&self, date: NaiveDate) -> (DateTime<Utc>, DateTime<Utc>) {
        let start = date.and_time(NaiveTime::MIN).and_utc()
            - Duration::minutes(i64::from(self.utc_offset_minutes));
        (start, start + Duration::days(1))
    }
}

#[derive(Debug, Clone, Default)]
pub struct StoreState {
    pub(crate) clock: DayClock,
    observations: BTreeMap<IdempotencyKey, Observation>,
    patients: BTreeMap<PatientId, PatientProfile>,
    alerts: BTreeMap<(PatientId, String, String, NaiveDate), Alert>,
    conflicts: Vec<ConflictRecord>,
}

impl StoreState {
    pub fn clock(&self) -> DayClock {
        self.clock
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn get(&self, key: &IdempotencyKey) -> Option<&Observation> {
        self.observations.get(key)
    }

    pub fn observations(&self) -> impl Iterator<Item = &Observation> {
        self.observations.values()
    }

    pub fn patient(&self, id: &PatientId) -> Result<&PatientProfile, StoreError> {
        self.patients.get(id).ok_or_else(|| StoreError::UnknownPatient(id.clone()))
    }

    pub fn patients(&self) -> impl Iterator<Item = &PatientProfile> {
        self.patients.values()
    }

    pub fn conflicts(&self) -> &[ConflictRecord] {
        &self.conflicts
    }

    /// Observations of one subject and stream with key timestamps in
    /// `[from, to)`, in key order.
    pub fn range(
        &self,
        subject: &str,
        stream: Stream,
        from: DateTime<Utc>,
        to: DateTime<Utc>,
    ) -> impl Iterator<Item = &Observation> {
        let lo = IdempotencyKey {
            subject: subject.to_owned(),
            stream,
            timestamp: from,
            discriminator: String::new(),
        };
        // Included(x)..Excluded(x) is a valid empty range for BTreeMap.
        let hi = IdempotencyKey { timestamp: to.max(from), ..lo.clone() };
        self.observations.range((Bound::Included(lo), Bound::Excluded(hi))).map(|(_, o)| o)
    }

    pub fn alerts(&self) -> impl Iterator<Item = &Alert> {
        self.alerts.values()
    }

    /// Canonical NDJSON of every observation in key order. Two stores with
    /// equal contents produce byte-identical output.
    pub fn observations_ndjson(&self) -> String {
        crate::observation::to_ndjson(self.observations.values())
    }

    pub fn export_stream(&self, stream: Stream) -> String {
        crate::observation::to_ndjson(self.observations.values().filter(|o| o.stream() == stream))
    }

    fn apply(&mut self, obs: Observation) -> UpsertOutcome {
        match self.observations.get(obs.key()) {
            None => {
                self.observations.insert(obs.key().clone(), obs);
                UpsertOutcome::Stored
            }
            Some(existing) if existing.same_content(&obs) => {
                // Keep the latest receipt so a later conflicting write is
                // judged against the same timestamp in any arrival order.
                if obs.received_at > existing.received_at {
                    self.observations.insert(obs.key().clone(), obs);
                }
                UpsertOutcome::Duplicate
            }
            Some(existing) => {
                let incoming_wins = last_writer_wins(existing, &obs);
                let (kept, discarded) = if incoming_wins {
                    (obs.received_at, existing.received_at)
                } else {
                    (existing.received_at, obs.received_at)
                };
                tracing::warn!(key = ?obs.key(), incoming_wins, "conflicting payload for existing key");
                self.conflicts.push(ConflictRecord {
                    key: obs.key().clone(),
                    kept_received_at: kept,
                    discarded_received_at: discarded,
                });
                if incoming_wins {
                    self.observations.insert(obs.key().clone(), obs);
                }
                UpsertOutcome::Conflict { replaced: incoming_wins }
            }
        }
    }

    fn alert_key(a: &Alert) -> (PatientId, String, String, NaiveDate) {
        (a.patient_id.clone(), a.kind.as_str().to_owned(), a.detail.clone(), a.date)
    }
}

/// Later `received_at` wins; equal timestamps fall back to the canonical
/// encoding so the outcome does not depend on arrival order.
fn last_writer_wins(existing: &Observation, incoming: &Observation) -> bool {
    match incoming.received_at.cmp(&existing.received_at) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => incoming.to_json_line() > existing.to_json_line(),
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", content = "items", rename_all = "snake_case")]
enum JournalRecord {
    Observations(Vec<Observation>),
    Patients(Vec<PatientProfile>),
    Alerts(Vec<Alert>),
}

#[derive(Debug)]
struct Journal {
    path: PathBuf,
    file: File,
    len: u64,
}

impl Journal {
    fn append(&mut self, record: &JournalRecord) -> Result<(), StoreError> {
        let mut line = serde_json::to_string(record).expect("journal records serialize");
        line.push('\n');
        match self.file.write_all(line.as_bytes()).and_then(|_| self.file.sync_data()) {
            Ok(()) => {
                self.len += line.len() as u64;
                Ok(())
            }
            Err(e) => {
                // Drop any partial line so later appends stay parseable.
                let _ = self.file.set_len(self.len);
                Err(StoreError::StorageUnavailable(format!("{}: {e}", self.path.display())))
            }
        }
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ImportReport {
    pub stored: usize,
    pub duplicates: usize,
    pub conflicts: usize,
    pub rejected: usize,
}

#[derive(Debug, Default)]
pub struct Store {
    state: RwLock<StoreState>,
    journal: Option<Mutex<Journal>>,
    suspended: AtomicBool,
}

impl Store {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn with_clock(clock: DayClock) -> Self {
        let store = Self::default();
        store.state.write().unwrap().clock = clock;
        store
    }

    /// Opens (or creates) a journal-backed store, replaying its history.
    pub fn open(path: impl AsRef<Path>, clock: DayClock) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let mut state = StoreState { clock, ..Default::default() };
        let mut valid_len: u64 = 0;
        if path.exists() {
            let file = File::open(&path)
                .map_err(|e| StoreError::StorageUnavailable(format!("{}: {e}", path.display())))?;
            let mut reader = BufReader::new(file);
            let mut line_no = 0;
            let mut buf = String::new();
            loop {
                buf.clear();
                let n = reader
                    .read_line(&mut buf)
                    .map_err(|e| StoreError::StorageUnavailable(e.to_string()))?;
                if n == 0 {
                    break;
                }
                line_no += 1;
                let complete = buf.ends_with('\n');
                if !complete {
                    tracing::warn!(line = line_no, "discarding torn journal tail");
                    break;
                }
                let record = serde_json::from_str::<JournalRecord>(buf.trim_end())
                    .map_err(|e| StoreError::Corruption { line: line_no, message: e.to_string() })?;
                apply_record(&mut state, record);
                valid_len += n as u64;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| StoreError::StorageUnavailable(format!("{}: {e}", path.display())))?;
        file.set_len(valid_len).map_err(|e| StoreError::StorageUnavailable(e.to_string()))?;
        Ok(Self {
            state: RwLock::new(state),
            journal: Some(Mutex::new(Journal { path, file, len: valid_len })),
            suspended: AtomicBool::new(false),
        })
    }

    /// Consistent read view. Writers block until the guard is dropped.
    pub fn read(&self) -> RwLockReadGuard<'_, StoreState> {
        self.state.read().unwrap_or_else(|e| e.into_inner())
    }

    /// Makes every write fail with `StorageUnavailable` until [`Store::resume`].
    pub fn suspend(&self) {
        self.suspended.store(true, Ordering::SeqCst);
    }

    pub fn resume(&self) {
        self.suspended.store(false, Ordering::SeqCst);
    }

    fn check_available(&self) -> Result<(), StoreError> {
        if self.suspended.load(Ordering::SeqCst) {
            Err(StoreError::StorageUnavailable("store is suspended".into()))
        } else {
            Ok(())
        }
    }

    fn commit<T>(
        &self,
        record: Option<JournalRecord>,
        apply: impl FnOnce(&mut StoreState) -> T,
    ) -> Result<T, StoreError> {
        self.check_available()?;
        let mut state = self.state.write().unwrap_or_else(|e| e.into_inner());
        if let (Some(journal), Some(record)) = (&self.journal, record.as_ref()) {
            journal.lock().unwrap_or_else(|e| e.into_inner()).append(record)?;
        }
        Ok(apply(&mut state))
    }

    pub fn register_patients(&self, profiles: Vec<PatientProfile>) -> Result<(), StoreError> {
        for p in &profiles {
            p.validate().map_err(|e| StoreError::InvalidPatient(format!("{}: {e}", p.patient_id)))?;
        }
        let record = JournalRecord::Patients(profiles.clone());
        self.commit(Some(record), |state| {
            for p in profiles {
                state.patients.insert(p.patient_id.clone(), p);
            }
        })
    }

    pub fn upsert(&self, obs: Observation) -> Result<UpsertOutcome, StoreError> {
        Ok(self.upsert_batch(vec![obs])?.remove(0))
    }

    /// Applies a batch atomically and returns one outcome per input.
    pub fn upsert_batch(&self, batch: Vec<Observation>) -> Result<Vec<UpsertOutcome>, StoreError> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let changed: Vec<Observation> = {
            let state = self.read();
            batch
                .iter()
                .filter(|o| state.get(o.key()).is_none_or(|e| !e.same_content(o) || o.received_at > e.received_at))
                .cloned()
                .collect()
        };
        let record = (!changed.is_empty()).then_some(JournalRecord::Observations(changed));
        self.commit(record, |state| batch.into_iter().map(|o| state.apply(o)).collect())
    }

    /// Stores alerts, ignoring ones already present for the same
    /// (patient, kind, detail, date). Returns how many were new.
    pub fn put_alerts(&self, alerts: Vec<Alert>) -> Result<usize, StoreError> {
        let fresh: Vec<Alert> = {
            let state = self.read();
            let mut seen = std::collections::BTreeSet::new();
            alerts
                .into_iter()
                .filter(|a| {
                    let k = StoreState::alert_key(a);
                    !state.alerts.contains_key(&k) && seen.insert(k)
                })
                .collect()
        };
        if fresh.is_empty() {
            return Ok(0);
        }
        let n = fresh.len();
        self.commit(Some(JournalRecord::Alerts(fresh.clone())), |state| {
            for a in fresh {
                state.alerts.insert(StoreState::alert_key(&a), a);
            }
        })?;
        Ok(n)
    }

    /// Imports NDJSON in the canonical encoding. Invalid lines are counted
    /// and skipped.
    pub fn import_ndjson(&self, text: &str) -> Result<(ImportReport, Vec<(usize, Rejection)>), StoreError> {
        let mut report = ImportReport::default();
        let mut rejected = Vec::new();
        let mut batch = Vec::new();
        for (i, parsed) in parse_ndjson(text).into_iter().enumerate() {
            match parsed {
                Ok(o) => batch.push(o),
                Err(r) => {
                    report.rejected += 1;
                    rejected.push((i, r));
                }
            }
        }
        for chunk in batch.chunks(10_000) {
            for outcome in self.upsert_batch(chunk.to_vec())? {
                match outcome {
                    UpsertOutcome::Stored => report.stored += 1,
                    UpsertOutcome::Duplicate => report.duplicates += 1,
                    UpsertOutcome::Conflict { .. } => report.conflicts += 1,
                }
            }
        }
        Ok((report, rejected))
    }
}

fn apply_record(state: &mut StoreState, record: JournalRecord) {
    match record {
        JournalRecord::Observations(obs) => {
            for o in obs {
                state.apply(o);
            }
        }
        JournalRecord::Patients(ps) => {
            for p in ps {
                state.patients.insert(p.patient_id.clone(), p);
            }
        }
        JournalRecord::Alerts(alerts) => {
            for a in alerts {
                state.alerts.insert(StoreState::alert_key(&a), a);
            }
        }
    }
}
