//! Deterministic agent-based simulator of an Urban Air Mobility network.
//!
//! The crate models the full service chain - demand, mode choice, mission
//! planning, fleet allocation, vertidrome slot scheduling, airspace
//! deconfliction, and economics - around a single authoritative world state
//! ([`scenario::WorldState`]). Domain components are pure document
//! processors behind a black-box bus (`uam-bus`), dispatchable in-process
//! or over sockets, serially or with parallel fan-out; the orchestrator
//! drives the event loop and is the world's only writer.

pub mod airspace;
pub mod config;
pub mod demand;
pub mod economics;
pub mod fleet;
pub mod geo;
pub mod ids;
pub mod mode_choice;
pub mod orchestrator;
pub mod planning;
pub mod reporting;
pub mod rng;
pub mod scenario;
pub mod stages;
pub mod testutil;
pub mod vertidrome;

pub use config::ScenarioConfig;
pub use orchestrator::{run_day, RunOptions, RunReport};
pub use scenario::WorldState;
