//! Multimodal asthma monitoring: idempotent ingestion of patient-reported,
//! lung-function and environmental streams, daily fusion, episode detection
//! and environmental trigger attribution.

pub mod alerting;
pub mod attribution;
pub mod config;
pub mod daily;
pub mod episode;
pub mod fetcher;
pub mod gateway;
pub mod model;
pub mod observation;
pub mod platform;
pub mod report;
pub mod season;
pub mod simulator;
pub mod store;
pub mod timeline;

pub use config::AnalysisConfig;
pub use model::{DateRange, PatientId, PatientProfile, Trigger};
pub use observation::{Observation, Payload, Rejection, Stream};
pub use platform::{Platform, PlatformError};
pub use season::Season;
pub use store::{Store, StoreError, StoreState};
pub use timeline::PatientTimeline;
