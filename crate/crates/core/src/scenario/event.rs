//! The append-only mutation record. Every state change flows through one of
//! these events; replaying a log from the init record reproduces the state.

use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::demand::TravelRequest;
use crate::ids::{FlightId, RequestId, SlotId, VehicleId, VertiportId};
use crate::scenario::{Flight, Itinerary, RejectionReason};
use crate::airspace::Trajectory4D;
use crate::vertidrome::Slot;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum WorldEvent {
    Init {
        at: i64,
        config: ScenarioConfig,
    },
    RequestSubmitted {
        at: i64,
        request: TravelRequest,
    },
    SlotCommitted {
        at: i64,
        slot: Slot,
    },
    SlotReleased {
        at: i64,
        vertiport: VertiportId,
        slot: SlotId,
    },
    TrajectoryCommitted {
        at: i64,
        trajectory: Trajectory4D,
    },
    FlightScheduled {
        at: i64,
        flight: Flight,
    },
    SeatAssigned {
        at: i64,
        flight: FlightId,
        request: RequestId,
    },
    ItineraryCommitted {
        at: i64,
        itinerary: Itinerary,
    },
    RequestRejected {
        at: i64,
        request: RequestId,
        reason: RejectionReason,
    },
    ChoseGround {
        at: i64,
        request: RequestId,
    },
    ChargeApplied {
        at: i64,
        vehicle: VehicleId,
        kwh: f64,
    },
    FlightDeparted {
        at: i64,
        flight: FlightId,
    },
    FlightArrived {
        at: i64,
        flight: FlightId,
    },
    RunCompleted {
        at: i64,
    },
}

impl WorldEvent {
    pub fn at(&self) -> i64 {
        match self {
            WorldEvent::Init { at, .. }
            | WorldEvent::RequestSubmitted { at, .. }
            | WorldEvent::SlotCommitted { at, .. }
            | WorldEvent::SlotReleased { at, .. }
            | WorldEvent::TrajectoryCommitted { at, .. }
            | WorldEvent::FlightScheduled { at, .. }
            | WorldEvent::SeatAssigned { at, .. }
            | WorldEvent::ItineraryCommitted { at, .. }
            | WorldEvent::RequestRejected { at, .. }
            | WorldEvent::ChoseGround { at, .. }
            | WorldEvent::ChargeApplied { at, .. }
            | WorldEvent::FlightDeparted { at, .. }
            | WorldEvent::FlightArrived { at, .. }
            | WorldEvent::RunCompleted { at } => *at,
        }
    }
}

/// One event per line, canonical JSON. Bit-exact across runs with equal
/// histories, which is what the determinism and grouping checks compare.
pub fn to_jsonl(events: &[WorldEvent]) -> String {
    let mut out = String::new();
    for ev in events {
        out.push_str(&serde_json::to_string(ev).expect("event serializes"));
        out.push('\n');
    }
    out
}

pub fn from_jsonl(text: &str) -> Result<Vec<WorldEvent>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}
