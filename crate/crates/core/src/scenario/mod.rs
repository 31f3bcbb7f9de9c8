//! The authoritative world state.
//!
//! One instance owns all entities, the simulation clock, and the event log.
//! Planning never mutates it; bookings go through [`WorldState::commit_booking`]
//! under an optimistic version token, and the clock moves only through
//! [`WorldState::advance_clock`], which realizes the committed schedule
//! (nominal execution: no deviations). Every mutation is recorded as a
//! [`WorldEvent`] carrying all data needed to re-apply it, so a replay of
//! the log reproduces the state field for field.

pub mod event;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::airspace::{Trajectory4D, TrajectoryPath};
use crate::config::{ConfigError, Layout, PricingConfig, ScenarioConfig, VehicleTypeConfig};
use crate::demand::TravelRequest;
use crate::geo::GeoPoint;
use crate::ids::{
    FlightId, ItineraryId, RequestId, SlotId, TrajectoryId, VehicleId, VertiportId,
};
use crate::vertidrome::{SlotCalendar, SlotOffer};

pub use event::WorldEvent;

const ENERGY_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("simulation invariant violated: {0}")]
    InvariantViolation(String),
    #[error("replay: {0}")]
    Replay(String),
}

/// Commit failures the caller is expected to handle.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum CommitError {
    /// The plan was built against an older state version; re-plan.
    #[error("state version changed since the offer was made")]
    ConflictRetry,
    /// The booking itself is invalid (for instance seat capacity exceeded).
    #[error("booking rejected: {0}")]
    RejectBooking(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vertiport {
    pub id: VertiportId,
    pub name: String,
    pub position: GeoPoint,
    pub fato_count: u32,
    pub layout: Layout,
    pub turnaround_s: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub id: VehicleId,
    pub vtype: String,
    pub home: VertiportId,
    /// Execution-tracked energy; planning uses the schedule walk instead.
    pub energy_kwh: f64,
    /// Time of the last energy mutation (charge accrues from here).
    pub energy_checkpoint_s: i64,
    /// Where the vehicle is parked; `None` while airborne.
    pub parked_at: Option<VertiportId>,
    /// Committed flights in departure order.
    pub schedule: Vec<FlightId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlightKind {
    Revenue,
    Deadhead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlightStatus {
    Scheduled,
    Departed,
    Arrived,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flight {
    pub id: FlightId,
    pub vehicle: VehicleId,
    pub origin: VertiportId,
    pub destination: VertiportId,
    pub departure_slot: SlotId,
    pub arrival_slot: SlotId,
    pub trajectory: TrajectoryId,
    pub manifest: Vec<RequestId>,
    pub kind: FlightKind,
    pub distance_km: f64,
    pub energy_kwh: f64,
    pub departure_s: i64,
    pub arrival_s: i64,
    pub status: FlightStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionReason {
    /// No feasible route decomposition (includes origin = destination).
    NoRoute,
    /// No vehicle can serve the mission within energy/schedule limits.
    NoVehicle,
    /// No FATO slot within the search horizon.
    NoSlot,
    /// No conflict-free departure within the delay budget.
    Congested,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum RequestStatus {
    Open,
    BookedUam { itinerary: ItineraryId },
    ChoseGround,
    Rejected { reason: RejectionReason },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub request: TravelRequest,
    pub status: RequestStatus,
}

/// The committed multi-leg plan answering one request. Legs reference the
/// passenger-carrying flights only; deadheads belong to the vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Itinerary {
    pub id: ItineraryId,
    pub request: RequestId,
    pub legs: Vec<FlightId>,
    pub fare_eur: f64,
    pub departure_s: i64,
    pub arrival_s: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Counters {
    pub requests: u64,
    pub uam_passengers: u64,
    pub flights: u64,
    pub deadhead_flights: u64,
    pub revenue_eur: f64,
    pub energy_debited_kwh: f64,
}

/// One sampled row of the run metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsFrame {
    pub timestamp_s: i64,
    pub cumulative_requests: u64,
    pub cumulative_uam_passengers: u64,
    pub flights_airborne: u64,
    pub cumulative_flights: u64,
    pub cumulative_deadheads: u64,
    pub mode_share: f64,
}

/// A new flight to be committed (revenue leg or deadhead).
#[derive(Debug, Clone, PartialEq)]
pub struct MissionPlan {
    pub vehicle: VehicleId,
    pub origin: VertiportId,
    pub destination: VertiportId,
    pub takeoff: SlotOffer,
    pub landing: SlotOffer,
    pub trajectory: TrajectoryPath,
    pub kind: FlightKind,
    pub distance_km: f64,
    pub energy_kwh: f64,
    pub departure_s: i64,
    pub arrival_s: i64,
}

/// One leg of a booking: pool onto an existing flight or fly a new mission
/// (optionally preceded by a deadhead repositioning the vehicle).
#[derive(Debug, Clone, PartialEq)]
pub enum LegPlan {
    Pool { flight: FlightId },
    New {
        deadhead: Option<MissionPlan>,
        mission: MissionPlan,
    },
}

/// A fully planned booking, valid against `version_token`.
#[derive(Debug, Clone, PartialEq)]
pub struct BookingPlan {
    pub version_token: u64,
    pub request: RequestId,
    pub legs: Vec<LegPlan>,
    pub fare_eur: f64,
    pub departure_s: i64,
    pub arrival_s: i64,
}

/// Execution occurrences realized by `advance_clock`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimEvent {
    pub at_s: i64,
    pub kind: SimEventKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimEventKind {
    Arrived(FlightId),
    FullyCharged(VehicleId),
    Departed(FlightId),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorldState {
    pub clock_s: i64,
    /// Bumped once per booking commit; offers carry it as their token.
    pub version: u64,
    pub rng_seed: u64,
    pub start_s: i64,
    pub end_s: i64,
    pub vertiports: BTreeMap<VertiportId, Vertiport>,
    pub vehicle_types: BTreeMap<String, VehicleTypeConfig>,
    pub vehicles: BTreeMap<VehicleId, Vehicle>,
    pub flights: BTreeMap<FlightId, Flight>,
    pub requests: BTreeMap<RequestId, RequestRecord>,
    pub itineraries: BTreeMap<ItineraryId, Itinerary>,
    pub calendars: BTreeMap<VertiportId, SlotCalendar>,
    pub trajectories: BTreeMap<TrajectoryId, Trajectory4D>,
    pub price_params: PricingConfig,
    pub counters: Counters,
    next_flight_id: u64,
    next_slot_id: u64,
    next_trajectory_id: u64,
    next_itinerary_id: u64,
    pub event_log: Vec<WorldEvent>,
}

impl WorldState {
    fn empty() -> WorldState {
        WorldState {
            clock_s: 0,
            version: 0,
            rng_seed: 0,
            start_s: 0,
            end_s: 0,
            vertiports: BTreeMap::new(),
            vehicle_types: BTreeMap::new(),
            vehicles: BTreeMap::new(),
            flights: BTreeMap::new(),
            requests: BTreeMap::new(),
            itineraries: BTreeMap::new(),
            calendars: BTreeMap::new(),
            trajectories: BTreeMap::new(),
            price_params: PricingConfig::default(),
            counters: Counters::default(),
            next_flight_id: 0,
            next_slot_id: 0,
            next_trajectory_id: 0,
            next_itinerary_id: 0,
            event_log: Vec::new(),
        }
    }

    /// Builds the initial state: every vehicle fully charged, parked at its
    /// home vertiport, with an empty schedule; the log holds only the init
    /// record.
    pub fn init_scenario(config: &ScenarioConfig) -> Result<WorldState, SimError> {
        config.validate()?;
        let mut world = WorldState::empty();
        world.record(WorldEvent::Init {
            at: config.scenario.start_s,
            config: config.clone(),
        })?;
        Ok(world)
    }

    /// Rebuilds a state by re-applying a recorded log (which must start
    /// with the init record). The clock lands on the last event's time.
    pub fn replay(events: &[WorldEvent]) -> Result<WorldState, SimError> {
        match events.first() {
            Some(WorldEvent::Init { .. }) => {}
            _ => return Err(SimError::Replay("log must start with the init record".into())),
        }
        let mut world = WorldState::empty();
        for ev in events {
            world.record(ev.clone())?;
        }
        Ok(world)
    }

    fn record(&mut self, ev: WorldEvent) -> Result<(), SimError> {
        self.apply(&ev)?;
        self.event_log.push(ev);
        Ok(())
    }

    /// FNV-1a digest over the canonical JSON of the state; used by replay
    /// checks.
    pub fn digest(&self) -> u64 {
        let bytes = serde_json::to_vec(self).expect("state serializes");
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for b in bytes {
            hash ^= u64::from(b);
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        hash
    }

    pub fn vehicle_type_of(&self, vehicle: VehicleId) -> &VehicleTypeConfig {
        let v = &self.vehicles[&vehicle];
        &self.vehicle_types[&v.vtype]
    }

    pub fn pax_capacity_of_flight(&self, flight: &Flight) -> u32 {
        self.vehicle_type_of(flight.vehicle).pax_capacity
    }

    /// The single mechanical mutation path, shared by live execution and
    /// replay. Events carry every computed value; nothing is decided here.
    fn apply(&mut self, ev: &WorldEvent) -> Result<(), SimError> {
        self.clock_s = self.clock_s.max(ev.at());
        match ev {
            WorldEvent::Init { at, config } => {
                self.clock_s = *at;
                self.start_s = config.scenario.start_s;
                self.end_s = config.scenario.end_s;
                self.rng_seed = config.scenario.seed;
                self.price_params = config.pricing.clone();
                for vp in &config.vertiports {
                    let id = VertiportId(vp.id);
                    self.vertiports.insert(
                        id,
                        Vertiport {
                            id,
                            name: vp.name.clone(),
                            position: GeoPoint::new(vp.lat, vp.lon),
                            fato_count: vp.fato_count,
                            layout: vp.layout,
                            turnaround_s: vp.turnaround_s,
                        },
                    );
                    self.calendars.insert(
                        id,
                        SlotCalendar::new(
                            id,
                            vp.layout,
                            vp.fato_count,
                            config.vertidrome.slot_duration_s,
                            config.vertidrome.interdependence_buffer_s,
                        ),
                    );
                }
                for t in &config.vehicle_types {
                    self.vehicle_types.insert(t.name.clone(), t.clone());
                }
                for (id, vtype, home) in config.expand_fleet() {
                    let capacity = self.vehicle_types[&vtype].battery_capacity_kwh;
                    self.vehicles.insert(
                        id,
                        Vehicle {
                            id,
                            vtype,
                            home,
                            energy_kwh: capacity,
                            energy_checkpoint_s: *at,
                            parked_at: Some(home),
                            schedule: Vec::new(),
                        },
                    );
                }
            }
            WorldEvent::RequestSubmitted { request, .. } => {
                if self.requests.contains_key(&request.id) {
                    return Err(SimError::InvariantViolation(format!(
                        "request {} submitted twice",
                        request.id
                    )));
                }
                self.requests.insert(
                    request.id,
                    RequestRecord {
                        request: request.clone(),
                        status: RequestStatus::Open,
                    },
                );
                self.counters.requests += 1;
            }
            WorldEvent::SlotCommitted { slot, .. } => {
                self.next_slot_id = self.next_slot_id.max(slot.id.0 + 1);
                let calendar = self.calendars.get_mut(&slot.vertiport).ok_or_else(|| {
                    SimError::InvariantViolation(format!("unknown vertiport {}", slot.vertiport))
                })?;
                calendar.insert(slot.clone());
            }
            WorldEvent::SlotReleased { vertiport, slot, .. } => {
                let calendar = self.calendars.get_mut(vertiport).ok_or_else(|| {
                    SimError::InvariantViolation(format!("unknown vertiport {vertiport}"))
                })?;
                calendar.release(*slot).map_err(|e| {
                    SimError::InvariantViolation(format!("release of slot {slot}: {e}"))
                })?;
            }
            WorldEvent::TrajectoryCommitted { trajectory, .. } => {
                self.next_trajectory_id = self.next_trajectory_id.max(trajectory.id.0 + 1);
                self.trajectories.insert(trajectory.id, trajectory.clone());
            }
            WorldEvent::FlightScheduled { flight, .. } => {
                self.next_flight_id = self.next_flight_id.max(flight.id.0 + 1);
                let vehicle = self.vehicles.get_mut(&flight.vehicle).ok_or_else(|| {
                    SimError::InvariantViolation(format!("unknown vehicle {}", flight.vehicle))
                })?;
                vehicle.schedule.push(flight.id);
                self.flights.insert(flight.id, flight.clone());
                self.counters.flights += 1;
                if flight.kind == FlightKind::Deadhead {
                    self.counters.deadhead_flights += 1;
                }
            }
            WorldEvent::SeatAssigned { flight, request, .. } => {
                let capacity = self.pax_capacity_of_flight(&self.flights[flight]);
                let f = self.flights.get_mut(flight).unwrap();
                if f.kind == FlightKind::Deadhead {
                    return Err(SimError::InvariantViolation(format!(
                        "seat assigned on deadhead flight {flight}"
                    )));
                }
                f.manifest.push(*request);
                if f.manifest.len() as u32 > capacity {
                    return Err(SimError::InvariantViolation(format!(
                        "flight {flight} manifest exceeds capacity {capacity}"
                    )));
                }
            }
            WorldEvent::ItineraryCommitted { itinerary, .. } => {
                self.next_itinerary_id = self.next_itinerary_id.max(itinerary.id.0 + 1);
                self.itineraries.insert(itinerary.id, itinerary.clone());
                let record = self.requests.get_mut(&itinerary.request).ok_or_else(|| {
                    SimError::InvariantViolation(format!("unknown request {}", itinerary.request))
                })?;
                record.status = RequestStatus::BookedUam {
                    itinerary: itinerary.id,
                };
                self.counters.uam_passengers += 1;
                self.counters.revenue_eur += itinerary.fare_eur;
                self.version += 1;
            }
            WorldEvent::RequestRejected { request, reason, .. } => {
                let record = self.requests.get_mut(request).ok_or_else(|| {
                    SimError::InvariantViolation(format!("unknown request {request}"))
                })?;
                record.status = RequestStatus::Rejected { reason: *reason };
            }
            WorldEvent::ChoseGround { request, .. } => {
                let record = self.requests.get_mut(request).ok_or_else(|| {
                    SimError::InvariantViolation(format!("unknown request {request}"))
                })?;
                record.status = RequestStatus::ChoseGround;
            }
            WorldEvent::ChargeApplied { at, vehicle, kwh } => {
                let capacity = {
                    let v = &self.vehicles[vehicle];
                    self.vehicle_types[&v.vtype].battery_capacity_kwh
                };
                let v = self.vehicles.get_mut(vehicle).unwrap();
                v.energy_kwh += kwh;
                v.energy_checkpoint_s = *at;
                if v.energy_kwh > capacity + ENERGY_EPS {
                    return Err(SimError::InvariantViolation(format!(
                        "vehicle {vehicle} charged beyond capacity: {} > {capacity}",
                        v.energy_kwh
                    )));
                }
            }
            WorldEvent::FlightDeparted { at, flight } => {
                let f = self.flights.get_mut(flight).ok_or_else(|| {
                    SimError::InvariantViolation(format!("unknown flight {flight}"))
                })?;
                f.status = FlightStatus::Departed;
                let vehicle = f.vehicle;
                let v = self.vehicles.get_mut(&vehicle).unwrap();
                v.parked_at = None;
                v.energy_checkpoint_s = *at;
            }
            WorldEvent::FlightArrived { at, flight } => {
                let (vehicle, destination, energy, min_reserve) = {
                    let f = &self.flights[flight];
                    let reserve = self.vehicle_type_of(f.vehicle).min_reserve_kwh;
                    (f.vehicle, f.destination, f.energy_kwh, reserve)
                };
                let f = self.flights.get_mut(flight).unwrap();
                f.status = FlightStatus::Arrived;
                let v = self.vehicles.get_mut(&vehicle).unwrap();
                v.energy_kwh -= energy;
                v.parked_at = Some(destination);
                v.energy_checkpoint_s = *at;
                self.counters.energy_debited_kwh += energy;
                if v.energy_kwh < min_reserve - ENERGY_EPS {
                    return Err(SimError::InvariantViolation(format!(
                        "vehicle {vehicle} landed below reserve: {} < {min_reserve}",
                        v.energy_kwh
                    )));
                }
            }
            WorldEvent::RunCompleted { .. } => {}
        }
        Ok(())
    }

    // ------------------------------------------------------------------
    // Request lifecycle records (no version bump: they reserve nothing).
    // ------------------------------------------------------------------

    pub fn submit_request(&mut self, request: TravelRequest) -> Result<(), SimError> {
        self.record(WorldEvent::RequestSubmitted {
            at: self.clock_s,
            request,
        })
    }

    pub fn reject_request(
        &mut self,
        request: RequestId,
        reason: RejectionReason,
    ) -> Result<(), SimError> {
        self.record(WorldEvent::RequestRejected {
            at: self.clock_s,
            request,
            reason,
        })
    }

    pub fn record_ground_choice(&mut self, request: RequestId) -> Result<(), SimError> {
        self.record(WorldEvent::ChoseGround {
            at: self.clock_s,
            request,
        })
    }

    pub fn complete_run(&mut self, at: i64) -> Result<(), SimError> {
        self.record(WorldEvent::RunCompleted { at })
    }

    // ------------------------------------------------------------------
    // Booking commit
    // ------------------------------------------------------------------

    /// Atomically commits seats, slots, trajectories, and flights for one
    /// itinerary. The plan must have been built against the current state
    /// version; a stale token forces a re-plan.
    pub fn commit_booking(&mut self, plan: &BookingPlan) -> Result<ItineraryId, CommitError> {
        if plan.version_token != self.version {
            return Err(CommitError::ConflictRetry);
        }
        self.validate_plan(plan)?;

        let at = self.clock_s;
        let mut leg_flights = Vec::with_capacity(plan.legs.len());
        let mut staged: Vec<WorldEvent> = Vec::new();

        for leg in &plan.legs {
            match leg {
                LegPlan::Pool { flight } => {
                    staged.push(WorldEvent::SeatAssigned {
                        at,
                        flight: *flight,
                        request: plan.request,
                    });
                    leg_flights.push(*flight);
                }
                LegPlan::New { deadhead, mission } => {
                    if let Some(dh) = deadhead {
                        self.stage_mission(dh, at, &mut staged);
                    }
                    let flight_id = self.stage_mission(mission, at, &mut staged);
                    staged.push(WorldEvent::SeatAssigned {
                        at,
                        flight: flight_id,
                        request: plan.request,
                    });
                    leg_flights.push(flight_id);
                }
            }
        }

        let itinerary = Itinerary {
            id: ItineraryId(self.next_itinerary_id),
            request: plan.request,
            legs: leg_flights,
            fare_eur: plan.fare_eur,
            departure_s: plan.departure_s,
            arrival_s: plan.arrival_s,
        };
        let itinerary_id = itinerary.id;
        staged.push(WorldEvent::ItineraryCommitted { at, itinerary });

        for ev in staged {
            self.record(ev).map_err(|e| {
                CommitError::RejectBooking(format!("commit failed mid-apply: {e}"))
            })?;
        }
        Ok(itinerary_id)
    }

    /// Allocates ids for one new mission and stages its commit events.
    fn stage_mission(&mut self, m: &MissionPlan, at: i64, staged: &mut Vec<WorldEvent>) -> FlightId {
        use crate::vertidrome::{Slot, SlotState};

        let takeoff_id = SlotId(self.next_slot_id);
        self.next_slot_id += 1;
        let landing_id = SlotId(self.next_slot_id);
        self.next_slot_id += 1;
        let trajectory_id = TrajectoryId(self.next_trajectory_id);
        self.next_trajectory_id += 1;
        let flight_id = FlightId(self.next_flight_id);
        self.next_flight_id += 1;

        let mk_slot = |offer: &SlotOffer, id: SlotId| Slot {
            id,
            vertiport: offer.vertiport,
            fato_index: offer.fato_index,
            kind: offer.kind,
            start_s: offer.start_s,
            end_s: offer.end_s,
            state: SlotState::Committed,
        };
        staged.push(WorldEvent::SlotCommitted {
            at,
            slot: mk_slot(&m.takeoff, takeoff_id),
        });
        staged.push(WorldEvent::SlotCommitted {
            at,
            slot: mk_slot(&m.landing, landing_id),
        });
        staged.push(WorldEvent::TrajectoryCommitted {
            at,
            trajectory: Trajectory4D {
                id: trajectory_id,
                flight: flight_id,
                path: m.trajectory.clone(),
            },
        });
        staged.push(WorldEvent::FlightScheduled {
            at,
            flight: Flight {
                id: flight_id,
                vehicle: m.vehicle,
                origin: m.origin,
                destination: m.destination,
                departure_slot: takeoff_id,
                arrival_slot: landing_id,
                trajectory: trajectory_id,
                manifest: Vec::new(),
                kind: m.kind,
                distance_km: m.distance_km,
                energy_kwh: m.energy_kwh,
                departure_s: m.departure_s,
                arrival_s: m.arrival_s,
                status: FlightStatus::Scheduled,
            },
        });
        flight_id
    }

    /// Re-validates a plan against the live state. With a matching version
    /// token this cannot fail unless the planner itself is buggy, so any
    /// violation maps back to a retry or a rejection.
    fn validate_plan(&self, plan: &BookingPlan) -> Result<(), CommitError> {
        let mut scratch_calendars: BTreeMap<VertiportId, SlotCalendar> = BTreeMap::new();
        let mut appended: BTreeMap<VehicleId, Vec<&MissionPlan>> = BTreeMap::new();

        for leg in &plan.legs {
            match leg {
                LegPlan::Pool { flight } => {
                    let f = self
                        .flights
                        .get(flight)
                        .ok_or(CommitError::ConflictRetry)?;
                    if f.kind != FlightKind::Revenue {
                        return Err(CommitError::RejectBooking(
                            "cannot pool onto a deadhead".into(),
                        ));
                    }
                    if f.manifest.len() as u32 >= self.pax_capacity_of_flight(f) {
                        return Err(CommitError::RejectBooking("flight is full".into()));
                    }
                }
                LegPlan::New { deadhead, mission } => {
                    for m in deadhead.iter().chain(std::iter::once(mission)) {
                        for offer in [&m.takeoff, &m.landing] {
                            let calendar = scratch_calendars
                                .entry(offer.vertiport)
                                .or_insert_with(|| self.calendars[&offer.vertiport].clone());
                            if !calendar.offer_fits(offer) {
                                return Err(CommitError::ConflictRetry);
                            }
                            calendar
                                .commit(offer, SlotId(u64::MAX))
                                .map_err(|_| CommitError::ConflictRetry)?;
                        }
                        appended.entry(m.vehicle).or_default().push(m);
                    }
                }
            }
        }

        // Vehicle chaining and energy feasibility across the appended tail.
        for (vehicle_id, missions) in &appended {
            let vehicle = self
                .vehicles
                .get(vehicle_id)
                .ok_or(CommitError::ConflictRetry)?;
            let vtype = &self.vehicle_types[&vehicle.vtype];
            let mut walk = crate::fleet::ScheduleWalk::over(self, vehicle);
            for m in missions {
                if m.origin != walk.position {
                    return Err(CommitError::ConflictRetry);
                }
                if m.departure_s < walk.ready_s {
                    return Err(CommitError::ConflictRetry);
                }
                walk.fly(vtype, m.departure_s, m.arrival_s, m.energy_kwh, m.destination,
                         self.vertiports[&m.destination].turnaround_s);
                if walk.energy_kwh < vtype.min_reserve_kwh - ENERGY_EPS {
                    return Err(CommitError::ConflictRetry);
                }
            }
        }
        Ok(())
    }

    // ------------------------------------------------------------------
    // Clock
    // ------------------------------------------------------------------

    /// Executes every departure, arrival, and charging completion scheduled
    /// in `(clock, to]`, in (time, kind, entity id) order; arrivals precede
    /// charge completions precede departures at equal instants. Energy is
    /// debited per flight on arrival and credited by charging while parked.
    pub fn advance_clock(&mut self, to: i64) -> Result<Vec<SimEvent>, SimError> {
        if to < self.clock_s {
            return Err(SimError::InvariantViolation(format!(
                "advance_clock to {} behind clock {}",
                to, self.clock_s
            )));
        }
        let mut executed = Vec::new();
        loop {
            let next = self.next_occurrence(to);
            let occurrence = match next {
                Some(o) => o,
                None => break,
            };
            match occurrence.kind {
                SimEventKind::Arrived(flight) => {
                    self.record(WorldEvent::FlightArrived {
                        at: occurrence.at_s,
                        flight,
                    })?;
                }
                SimEventKind::FullyCharged(vehicle) => {
                    let v = &self.vehicles[&vehicle];
                    let capacity = self.vehicle_types[&v.vtype].battery_capacity_kwh;
                    let kwh = capacity - v.energy_kwh;
                    self.record(WorldEvent::ChargeApplied {
                        at: occurrence.at_s,
                        vehicle,
                        kwh,
                    })?;
                }
                SimEventKind::Departed(flight) => {
                    let vehicle_id = self.flights[&flight].vehicle;
                    let v = &self.vehicles[&vehicle_id];
                    let vtype = &self.vehicle_types[&v.vtype];
                    let dt_h = (occurrence.at_s - v.energy_checkpoint_s) as f64 / 3600.0;
                    let credit = (vtype.battery_capacity_kwh - v.energy_kwh)
                        .min(vtype.charge_rate_kwh_per_h * dt_h)
                        .max(0.0);
                    if credit > ENERGY_EPS {
                        self.record(WorldEvent::ChargeApplied {
                            at: occurrence.at_s,
                            vehicle: vehicle_id,
                            kwh: credit,
                        })?;
                    }
                    self.record(WorldEvent::FlightDeparted {
                        at: occurrence.at_s,
                        flight,
                    })?;
                }
            }
            executed.push(occurrence);
        }
        self.clock_s = self.clock_s.max(to);
        Ok(executed)
    }

    /// The earliest pending occurrence in `(clock, to]`.
    fn next_occurrence(&self, to: i64) -> Option<SimEvent> {
        // Rank: arrivals 0, charge completions 1, departures 2.
        let mut best: Option<(i64, u8, u64, SimEventKind)> = None;
        let mut consider = |at: i64, rank: u8, id: u64, kind: SimEventKind| {
            if at > to {
                return;
            }
            let key = (at, rank, id);
            if best.map_or(true, |(a, r, i, _)| key < (a, r, i)) {
                best = Some((at, rank, id, kind));
            }
        };

        // Pending-ness is tracked by entity status, not by comparing times
        // against the clock: two occurrences at the same instant must both
        // execute even after the first one pulls the clock onto it.
        for f in self.flights.values() {
            match f.status {
                FlightStatus::Departed => {
                    consider(f.arrival_s, 0, f.id.0, SimEventKind::Arrived(f.id));
                }
                FlightStatus::Scheduled => {
                    consider(f.departure_s, 2, f.id.0, SimEventKind::Departed(f.id));
                }
                FlightStatus::Arrived => {}
            }
        }
        for v in self.vehicles.values() {
            if v.parked_at.is_none() {
                continue;
            }
            let vtype = &self.vehicle_types[&v.vtype];
            let missing = vtype.battery_capacity_kwh - v.energy_kwh;
            if missing <= ENERGY_EPS {
                continue;
            }
            let secs = (missing / vtype.charge_rate_kwh_per_h * 3600.0).ceil() as i64;
            let t_full = v.energy_checkpoint_s + secs.max(1);
            consider(t_full, 1, v.id.0, SimEventKind::FullyCharged(v.id));
        }

        best.map(|(at, _, _, kind)| SimEvent { at_s: at, kind })
    }

    // ------------------------------------------------------------------
    // Metrics
    // ------------------------------------------------------------------

    /// Pure read of the current frame.
    pub fn snapshot_metrics(&self) -> MetricsFrame {
        let airborne = self
            .flights
            .values()
            .filter(|f| f.status == FlightStatus::Departed)
            .count() as u64;
        MetricsFrame {
            timestamp_s: self.clock_s,
            cumulative_requests: self.counters.requests,
            cumulative_uam_passengers: self.counters.uam_passengers,
            flights_airborne: airborne,
            cumulative_flights: self.counters.flights,
            cumulative_deadheads: self.counters.deadhead_flights,
            mode_share: self.counters.uam_passengers as f64
                / (self.counters.requests.max(1)) as f64,
        }
    }

    // ------------------------------------------------------------------
    // Post-run audits (exhaustive, brute force)
    // ------------------------------------------------------------------

    /// Pairwise re-checks of every committed slot, trajectory, manifest,
    /// schedule chain, and energy bound. Returns human-readable violations.
    pub fn audit(&self, airspace: &crate::config::AirspaceConfig) -> Vec<String> {
        let mut violations = Vec::new();

        for calendar in self.calendars.values() {
            violations.extend(calendar.audit());
        }

        let trajectories: Vec<&Trajectory4D> = self.trajectories.values().collect();
        for (i, a) in trajectories.iter().enumerate() {
            for b in trajectories.iter().skip(i + 1) {
                let hits = crate::airspace::detect_conflicts(&a.path, &[b], airspace);
                if !hits.is_empty() {
                    violations.push(format!(
                        "trajectories {} and {} conflict at t={}",
                        a.id, b.id, hits[0].at_s
                    ));
                }
            }
        }

        for f in self.flights.values() {
            let capacity = self.pax_capacity_of_flight(f);
            if f.manifest.len() as u32 > capacity {
                violations.push(format!("flight {} manifest exceeds capacity", f.id));
            }
            if f.kind == FlightKind::Deadhead && !f.manifest.is_empty() {
                violations.push(format!("deadhead flight {} carries passengers", f.id));
            }
            if f.departure_s >= f.arrival_s {
                violations.push(format!("flight {} departs after arriving", f.id));
            }
            let direct = crate::geo::great_circle_km(
                self.vertiports[&f.origin].position,
                self.vertiports[&f.destination].position,
            );
            if f.distance_km < direct - 1e-9 {
                violations.push(format!(
                    "flight {} distance {} below great-circle {direct}",
                    f.id, f.distance_km
                ));
            }
        }

        // Accepted passengers sit in exactly one manifest per itinerary leg.
        for record in self.requests.values() {
            if let RequestStatus::BookedUam { itinerary } = &record.status {
                let itinerary = &self.itineraries[itinerary];
                for flight_id in &itinerary.legs {
                    let seats = self.flights[flight_id]
                        .manifest
                        .iter()
                        .filter(|r| **r == record.request.id)
                        .count();
                    if seats != 1 {
                        violations.push(format!(
                            "request {} appears {seats} times on flight {flight_id}",
                            record.request.id
                        ));
                    }
                }
            }
        }
        for itinerary in self.itineraries.values() {
            let total: f64 = itinerary
                .legs
                .iter()
                .map(|f| self.flights[f].distance_km)
                .sum();
            let expected = self.price_params.base_fare_eur
                + self.price_params.price_per_km_eur * total;
            if (itinerary.fare_eur - expected).abs() > 1e-6 {
                violations.push(format!(
                    "itinerary {} fare {} != fare formula {expected}",
                    itinerary.id, itinerary.fare_eur
                ));
            }
        }

        for v in self.vehicles.values() {
            let vtype = &self.vehicle_types[&v.vtype];
            if v.energy_kwh > vtype.battery_capacity_kwh + ENERGY_EPS {
                violations.push(format!("vehicle {} above battery capacity", v.id));
            }
            let mut pos = v.home;
            let mut prev_arrival: Option<(i64, i64)> = None;
            for fid in &v.schedule {
                let f = &self.flights[fid];
                if f.origin != pos {
                    violations.push(format!(
                        "vehicle {} schedule breaks spatial chain at flight {}",
                        v.id, f.id
                    ));
                }
                if let Some((arr, turnaround)) = prev_arrival {
                    if f.departure_s < arr + turnaround {
                        violations.push(format!(
                            "vehicle {} flight {} departs during turnaround",
                            v.id, f.id
                        ));
                    }
                }
                pos = f.destination;
                prev_arrival = Some((f.arrival_s, self.vertiports[&f.destination].turnaround_s));
            }
        }

        violations
    }
}

#[cfg(test)]
mod tests;
