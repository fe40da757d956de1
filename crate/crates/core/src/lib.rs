//! Discrete-event digital twin of a device-edge-cloud-HPC continuum.
//!
//! The crate is organised bottom-up:
//!
//! - [`twin`]: state model, routing, power and the append-only event log.
//! - [`scenario`]: scenario documents, validation, synthesis and fixtures.
//! - [`scheduler`]: the decision contract, heuristics, the weighted scorer
//!   and the external-agent adapter.
//! - [`engine`]: the virtual-time loop, KPI computation and forecasting.
//! - [`training`]: population-based tuning of weighted schedulers.
//! - [`manager`]: the live loop, ingest, persistence and the query API.

pub mod engine;
pub mod manager;
pub mod rng;
pub mod scenario;
pub mod scheduler;
pub mod training;
pub mod twin;

pub use engine::{EngineConfig, KpiReport};
pub use scenario::{Scenario, ScenarioEvent};
pub use scheduler::{Decision, Scheduler, WeightVector};
pub use twin::{JobSpec, LinkSpec, Millis, NodeSpec, Tier, Topology, TwinState};
