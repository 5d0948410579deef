//! Device-facing ingestion: bearer-token authentication and idempotent,
//! at-least-once batch upsert.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::PatientId;
use crate::observation::{validate_observation, Observation, Rejection};
use crate::store::{Store, StoreError, UpsertOutcome};

pub const MAX_BATCH: usize = 10_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GatewayError {
    #[error("unauthorized: {0}")]
    Unauthorized(String),
    #[error("batch of {size} observations exceeds the limit of {max}")]
    BatchTooLarge { size: usize, max: usize },
    #[error("storage unavailable: {0}")]
    StorageUnavailable(String),
    #[error("token {0:?} is already bound to another patient")]
    TokenConflict(String),
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::StorageUnavailable(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceToken {
    pub token: String,
    pub bound_patient_id: PatientId,
    pub expiry: DateTime<Utc>,
}

#[derive(Debug, Default)]
pub struct TokenRegistry {
    tokens: RwLock<HashMap<String, DeviceToken>>,
}

impl TokenRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers or renews a token. A secret can never move to a different
    /// patient.
    pub fn register(&self, token: DeviceToken) -> Result<(), GatewayError> {
        let mut tokens = self.tokens.write().unwrap_or_else(|e| e.into_inner());
        if let Some(existing) = tokens.get(&token.token) {
            if existing.bound_patient_id != token.bound_patient_id {
                return Err(GatewayError::TokenConflict(token.token));
            }
        }
        tokens.insert(token.token.clone(), token);
        Ok(())
    }

    pub fn authenticate(&self, secret: &str, now: DateTime<Utc>) -> Result<PatientId, GatewayError> {
        let tokens = self.tokens.read().unwrap_or_else(|e| e.into_inner());
        match tokens.get(secret) {
            Some(t) if now < t.expiry => Ok(t.bound_patient_id.clone()),
            Some(_) => Err(GatewayError::Unauthorized("token expired".into())),
            None => Err(GatewayError::Unauthorized("unknown token".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedItem {
    pub index: usize,
    pub reason: Rejection,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReceipt {
    /// Stored or conflicting observations; conflicts are also counted in
    /// `conflicts`.
    pub accepted: usize,
    pub duplicates: usize,
    pub conflicts: usize,
    pub rejected: Vec<RejectedItem>,
}

impl IngestReceipt {
    pub fn total(&self) -> usize {
        self.accepted + self.duplicates + self.rejected.len()
    }

    pub fn is_partial(&self) -> bool {
        !self.rejected.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Gateway {
    store: Arc<Store>,
    tokens: Arc<TokenRegistry>,
    max_batch: usize,
}

impl Gateway {
    pub fn new(store: Arc<Store>, tokens: Arc<TokenRegistry>) -> Self {
        Self { store, tokens, max_batch: MAX_BATCH }
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn tokens(&self) -> &TokenRegistry {
        &self.tokens
    }

    pub fn authenticate(&self, secret: &str, now: DateTime<Utc>) -> Result<PatientId, GatewayError> {
        self.tokens.authenticate(secret, now)
    }

    /// Validates and upserts a batch for an authenticated patient. Invalid
    /// items are listed in the receipt; an item addressed to another patient
    /// fails the whole batch.
    pub fn ingest_batch(&self, patient: &PatientId, batch: Vec<Value>) -> Result<IngestReceipt, GatewayError> {
        if batch.len() > self.max_batch {
            return Err(GatewayError::BatchTooLarge { size: batch.len(), max: self.max_batch });
        }
        let mut receipt = IngestReceipt::default();
        let mut valid: Vec<Observation> = Vec::with_capacity(batch.len());
        for (index, raw) in batch.into_iter().enumerate() {
            match validate_observation(raw) {
                Ok(obs) => {
                    if obs.patient_id() != Some(patient) {
                        return Err(GatewayError::Unauthorized(format!(
                            "item {index} ({}) is not addressed to the token's patient",
                            obs.stream()
                        )));
                    }
                    valid.push(obs);
                }
                Err(reason) => receipt.rejected.push(RejectedItem { index, reason }),
            }
        }
        let outcomes = self.store.upsert_batch(valid).map_err(|e| match e {
            StoreError::StorageUnavailable(m) => GatewayError::StorageUnavailable(m),
            other => GatewayError::StorageUnavailable(other.to_string()),
        })?;
        for outcome in outcomes {
            match outcome {
                UpsertOutcome::Stored => receipt.accepted += 1,
                UpsertOutcome::Duplicate => receipt.duplicates += 1,
                UpsertOutcome::Conflict { .. } => {
                    receipt.accepted += 1;
                    receipt.conflicts += 1;
                }
            }
        }
        Ok(receipt)
    }

    /// The wire entry point: bearer token plus an NDJSON body.
    pub fn ingest_ndjson(&self, bearer: &str, body: &str, now: DateTime<Utc>) -> Result<IngestReceipt, GatewayError> {
        let patient = self.authenticate(bearer, now)?;
        let mut values = Vec::new();
        let mut malformed = Vec::new();
        for (index, line) in body.lines().filter(|l| !l.trim().is_empty()).enumerate() {
            match serde_json::from_str::<Value>(line) {
                Ok(v) => values.push((index, v)),
                Err(e) => malformed.push(RejectedItem {
                    index,
                    reason: Rejection::SchemaViolation(format!("malformed JSON: {e}")),
                }),
            }
        }
        let total = values.len() + malformed.len();
        if total > self.max_batch {
            return Err(GatewayError::BatchTooLarge { size: total, max: self.max_batch });
        }
        let (indices, values): (Vec<usize>, Vec<Value>) = values.into_iter().unzip();
        let mut receipt = self.ingest_batch(&patient, values)?;
        for r in &mut receipt.rejected {
            r.index = indices[r.index];
        }
        receipt.rejected.extend(malformed);
        receipt.rejected.sort_by_key(|r| r.index);
        Ok(receipt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn now() -> DateTime<Utc> {
        "2018-01-10T12:00:00Z".parse().unwrap()
    }

    fn gateway() -> Gateway {
        let tokens = Arc::new(TokenRegistry::new());
        tokens
            .register(DeviceToken {
                token: "tok-a".into(),
                bound_patient_id: "p-a".into(),
                expiry: "2018-02-01T00:00:00Z".parse().unwrap(),
            })
            .unwrap();
        tokens
            .register(DeviceToken {
                token: "tok-old".into(),
                bound_patient_id: "p-a".into(),
                expiry: "2018-01-10T12:00:00Z".parse().unwrap(),
            })
            .unwrap();
        Gateway::new(Arc::new(Store::in_memory()), tokens)
    }

    fn lung(patient: &str, minute: u32) -> Value {
        json!({
            "stream": "lung",
            "payload": {"patient_id": patient, "timestamp": format!("2018-01-10T08:{minute:02}:00Z"), "pef": 300.0, "fev1": 2.0},
            "received_at": "2018-01-10T08:30:00Z"
        })
    }

    #[test]
    fn authentication() {
        let g = gateway();
        assert_eq!(g.authenticate("tok-a", now()).unwrap(), PatientId::from("p-a"));
        assert!(matches!(g.authenticate("tok-old", now()), Err(GatewayError::Unauthorized(_))));
        assert!(matches!(g.authenticate("nope", now()), Err(GatewayError::Unauthorized(_))));
        let rebind = DeviceToken {
            token: "tok-a".into(),
            bound_patient_id: "p-b".into(),
            expiry: "2018-02-01T00:00:00Z".parse().unwrap(),
        };
        assert_eq!(g.tokens().register(rebind), Err(GatewayError::TokenConflict("tok-a".into())));
    }

    #[test]
    fn replayed_batch_is_all_duplicates() {
        let g = gateway();
        let batch: Vec<Value> = (0..3).map(|m| lung("p-a", m)).collect();
        let r = g.ingest_batch(&"p-a".into(), batch.clone()).unwrap();
        assert_eq!((r.accepted, r.duplicates, r.rejected.len()), (3, 0, 0));
        let snapshot = g.store().read().observations_ndjson();
        let r = g.ingest_batch(&"p-a".into(), batch).unwrap();
        assert_eq!((r.accepted, r.duplicates, r.rejected.len()), (0, 3, 0));
        assert_eq!(g.store().read().observations_ndjson(), snapshot);
    }

    #[test]
    fn identity_leak_is_rejected_per_item() {
        let g = gateway();
        let mut leaky = lung("p-a", 1);
        leaky["payload"]["patient_name"] = json!("Jane");
        let r = g.ingest_batch(&"p-a".into(), vec![lung("p-a", 0), leaky, lung("p-a", 2)]).unwrap();
        assert_eq!(r.accepted, 2);
        assert_eq!(r.duplicates, 0);
        assert_eq!(r.rejected, vec![RejectedItem { index: 1, reason: Rejection::IdentityLeak("patient_name".into()) }]);
        assert_eq!(r.total(), 3);
    }

    #[test]
    fn cross_patient_write_is_refused() {
        let g = gateway();
        let r = g.ingest_batch(&"p-a".into(), vec![lung("p-a", 0), lung("p-b", 1)]);
        assert!(matches!(r, Err(GatewayError::Unauthorized(_))));
        assert!(g.store().read().is_empty());
    }

    #[test]
    fn oversized_batch_is_rejected_whole() {
        let g = gateway();
        let batch = vec![lung("p-a", 0); MAX_BATCH + 1];
        assert_eq!(
            g.ingest_batch(&"p-a".into(), batch),
            Err(GatewayError::BatchTooLarge { size: MAX_BATCH + 1, max: MAX_BATCH })
        );
    }

    #[test]
    fn storage_outage_is_retryable() {
        let g = gateway();
        g.store().suspend();
        let err = g.ingest_batch(&"p-a".into(), vec![lung("p-a", 0)]).unwrap_err();
        assert!(err.is_retryable());
    }

    #[test]
    fn ndjson_entry_point_keeps_line_indices() {
        let g = gateway();
        let body = format!("{}\nnot json\n{}\n", lung("p-a", 0), lung("p-a", 1));
        let r = g.ingest_ndjson("tok-a", &body, now()).unwrap();
        assert_eq!(r.accepted, 2);
        assert_eq!(r.rejected.len(), 1);
        assert_eq!(r.rejected[0].index, 1);
        assert!(matches!(g.ingest_ndjson("bad", &body, now()), Err(GatewayError::Unauthorized(_))));
    }
}
