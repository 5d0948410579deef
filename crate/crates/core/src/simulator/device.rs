//! Emulated patient device: produces observations over time, buffers them
//! while offline and resyncs through the gateway once the network returns.

use std::collections::VecDeque;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::gateway::{Gateway, GatewayError, IngestReceipt};
use crate::observation::Observation;

/// Half-open `[start, end)` window without connectivity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OfflineInterval {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultSchedule {
    intervals: Vec<OfflineInterval>,
}

impl FaultSchedule {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn new(mut intervals: Vec<OfflineInterval>) -> Result<Self, String> {
        intervals.sort_by_key(|i| i.start);
        for i in &intervals {
            if i.end <= i.start {
                return Err(format!("empty offline interval starting {}", i.start));
            }
        }
        for pair in intervals.windows(2) {
            if pair[1].start < pair[0].end {
                return Err(format!("offline intervals overlap at {}", pair[1].start));
            }
        }
        Ok(Self { intervals })
    }

    pub fn intervals(&self) -> &[OfflineInterval] {
        &self.intervals
    }

    pub fn is_offline(&self, t: DateTime<Utc>) -> bool {
        self.intervals.iter().any(|i| i.start <= t && t < i.end)
    }

    pub fn last_restore(&self) -> Option<DateTime<Utc>> {
        self.intervals.last().map(|i| i.end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum DeliveryEvent {
    Sent { at: DateTime<Utc>, items: usize, receipt: IngestReceipt },
    Buffered { at: DateTime<Utc>, pending: usize },
    Failed { at: DateTime<Utc>, items: usize, error: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DeliveryLog {
    pub events: Vec<DeliveryEvent>,
    pub sent_items: usize,
    pub accepted: usize,
    pub duplicates: usize,
    pub rejected: usize,
}

impl DeliveryLog {
    fn record(&mut self, at: DateTime<Utc>, items: usize, receipt: IngestReceipt) {
        self.sent_items += items;
        self.accepted += receipt.accepted;
        self.duplicates += receipt.duplicates;
        self.rejected += receipt.rejected.len();
        self.events.push(DeliveryEvent::Sent { at, items, receipt });
    }
}

pub struct DeviceEmulator<'g> {
    gateway: &'g Gateway,
    token: String,
    faults: FaultSchedule,
    upcoming: VecDeque<Observation>,
    outbox: Vec<Observation>,
    /// Last acknowledged batch. It is sent again after an outage, as a
    /// device that lost the acknowledgement would.
    last_acked: Vec<Observation>,
    was_offline: bool,
    batch_size: usize,
    log: DeliveryLog,
}

impl<'g> DeviceEmulator<'g> {
    /// Observations are produced at their `received_at` time.
    pub fn new(gateway: &'g Gateway, token: impl Into<String>, mut stream: Vec<Observation>, faults: FaultSchedule) -> Self {
        stream.sort_by_key(|o| o.received_at);
        Self {
            gateway,
            token: token.into(),
            faults,
            upcoming: stream.into(),
            outbox: Vec::new(),
            last_acked: Vec::new(),
            was_offline: false,
            batch_size: 500,
            log: DeliveryLog::default(),
        }
    }

    pub fn with_batch_size(mut self, n: usize) -> Self {
        self.batch_size = n.max(1);
        self
    }

    pub fn pending(&self) -> usize {
        self.outbox.len()
    }

    pub fn log(&self) -> &DeliveryLog {
        &self.log
    }

    /// Produces every observation due by `t`, syncing after each one.
    pub fn advance_to(&mut self, t: DateTime<Utc>) {
        while self.upcoming.front().is_some_and(|o| o.received_at <= t) {
            let obs = self.upcoming.pop_front().expect("front checked");
            let now = obs.received_at;
            self.outbox.push(obs);
            self.sync(now);
        }
        self.sync(t);
    }

    fn sync(&mut self, now: DateTime<Utc>) {
        if self.faults.is_offline(now) {
            self.was_offline = true;
            if !self.outbox.is_empty() {
                self.log.events.push(DeliveryEvent::Buffered { at: now, pending: self.outbox.len() });
            }
            return;
        }
        if std::mem::take(&mut self.was_offline) && !self.last_acked.is_empty() {
            let mut resend = std::mem::take(&mut self.last_acked);
            resend.append(&mut self.outbox);
            self.outbox = resend;
        }
        while !self.outbox.is_empty() {
            let n = self.outbox.len().min(self.batch_size);
            let body: String = self.outbox[..n].iter().map(|o| o.to_json_line() + "\n").collect();
            match self.gateway.ingest_ndjson(&self.token, &body, now) {
                Ok(receipt) => {
                    self.log.record(now, n, receipt);
                    self.last_acked = self.outbox.drain(..n).collect();
                }
                Err(e @ GatewayError::StorageUnavailable(_)) => {
                    self.log.events.push(DeliveryEvent::Failed { at: now, items: n, error: e.to_string() });
                    return;
                }
                Err(e) => {
                    // Not retryable: the batch would fail again.
                    self.log.events.push(DeliveryEvent::Failed { at: now, items: n, error: e.to_string() });
                    self.outbox.drain(..n);
                }
            }
        }
    }

    /// Produces the rest of the stream and syncs once every outage is over.
    pub fn finish(mut self) -> DeliveryLog {
        let end = self.upcoming.back().map(|o| o.received_at);
        if let Some(end) = end {
            self.advance_to(end);
        }
        let restore = self.faults.last_restore().into_iter().chain(end).max();
        if let Some(t) = restore {
            self.sync(t);
        }
        self.log
    }
}

/// Plays `stream` through `gateway` with the given outages.
pub fn replay_device(stream: &[Observation], gateway: &Gateway, token: &str, faults: &FaultSchedule) -> DeliveryLog {
    DeviceEmulator::new(gateway, token, stream.to_vec(), faults.clone()).finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{DeviceToken, TokenRegistry};
    use crate::model::{LungFunctionReading, PatientId};
    use crate::observation::Payload;
    use crate::store::Store;
    use chrono::Duration;
    use std::sync::Arc;

    fn t0() -> DateTime<Utc> {
        "2018-01-01T00:00:00Z".parse().unwrap()
    }

    fn gateway() -> Gateway {
        let tokens = Arc::new(TokenRegistry::new());
        tokens
            .register(DeviceToken { token: "dev".into(), bound_patient_id: "p".into(), expiry: "2030-01-01T00:00:00Z".parse().unwrap() })
            .unwrap();
        Gateway::new(Arc::new(Store::in_memory()), tokens)
    }

    fn stream(hours: i64) -> Vec<Observation> {
        (0..hours)
            .map(|h| {
                let ts = t0() + Duration::hours(h);
                let r = LungFunctionReading { patient_id: PatientId::new("p"), timestamp: ts, pef: 300.0 + h as f64, fev1: 2.0 };
                Observation::new(Payload::Lung(r), ts + Duration::minutes(1))
            })
            .collect()
    }

    #[test]
    fn overlapping_faults_are_rejected() {
        let a = OfflineInterval { start: t0(), end: t0() + Duration::hours(2) };
        let b = OfflineInterval { start: t0() + Duration::hours(1), end: t0() + Duration::hours(3) };
        assert!(FaultSchedule::new(vec![a, b]).is_err());
        assert!(FaultSchedule::new(vec![OfflineInterval { start: t0(), end: t0() }]).is_err());
    }

    #[test]
    fn outage_is_transparent() {
        let s = stream(96);
        let clean = gateway();
        replay_device(&s, &clean, "dev", &FaultSchedule::none());
        let faulty = gateway();
        let outage = OfflineInterval { start: t0() + Duration::hours(24), end: t0() + Duration::hours(72) };
        let log = replay_device(&s, &faulty, "dev", &FaultSchedule::new(vec![outage]).unwrap());
        assert!(log.duplicates > 0);
        assert_eq!(clean.store().read().observations_ndjson(), faulty.store().read().observations_ndjson());
    }

    #[test]
    fn full_outage_catches_up_after_restore() {
        let s = stream(10);
        let g = gateway();
        let outage = OfflineInterval { start: t0() - Duration::hours(1), end: t0() + Duration::hours(20) };
        let mut device = DeviceEmulator::new(&g, "dev", s.clone(), FaultSchedule::new(vec![outage]).unwrap());
        device.advance_to(t0() + Duration::hours(12));
        assert!(g.store().read().is_empty());
        assert_eq!(device.pending(), 10);
        device.finish();
        assert_eq!(g.store().read().len(), 10);
    }

    #[test]
    fn storage_outage_is_retried() {
        let s = stream(6);
        let g = gateway();
        let mut device = DeviceEmulator::new(&g, "dev", s, FaultSchedule::none()).with_batch_size(2);
        g.store().suspend();
        device.advance_to(t0() + Duration::hours(3));
        assert!(g.store().read().is_empty());
        g.store().resume();
        let log = device.finish();
        assert_eq!(g.store().read().len(), 6);
        assert!(log.events.iter().any(|e| matches!(e, DeliveryEvent::Failed { .. })));
    }
}
