//! The simulation driver: merges the timed request stream with the event
//! clock, batches requests within a configurable interval, dispatches
//! pipeline stages over the component bus (serially or with parallel
//! fan-out), and commits results to the world state as its single writer.
//!
//! Batches are planned speculatively against the snapshot at batch start;
//! plans are committed in strict emission order and only while the world
//! version still matches their token. A stale plan is re-planned serially
//! through the same stage components against fresh state, which is exactly
//! what an interval-0 run would have computed - the committed event log is
//! therefore invariant to the grouping interval.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use uam_bus::{BusError, ComponentDescriptor, Doc, Node, Registry};

use crate::config::{ConfigError, ScenarioConfig};
use crate::demand::TravelRequest;
use crate::economics::{ConvergenceReport, EconError, PriceParams, RunLedger};
use crate::fleet::{LegAllocation, ScheduleWalk, VehicleSnapshot};
use crate::ids::{FlightId, RequestId, VertiportId};
use crate::planning::{
    enumerate_decompositions, select_itinerary, try_pool, CandidateLeg, LegAssignment,
    MissionCandidate,
};
use crate::reporting;
use crate::scenario::{
    event, BookingPlan, CommitError, LegPlan, MetricsFrame, RejectionReason, SimError, WorldEvent,
    WorldState,
};
use crate::stages::routing::{outcome_from_response, routing_request, RoutedLeg, RoutingItem, RoutingOutcome, RoutingQuery};
use crate::stages::{docs, StageContext, ALL_STAGES, STAGE_ALLOCATION, STAGE_DEMAND, STAGE_ECONOMICS, STAGE_MODE_CHOICE, STAGE_ROUTING};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("stage '{stage}'{} failed: {message}", item.map(|i| format!(" (request {i})")).unwrap_or_default())]
    Stage {
        stage: String,
        item: Option<RequestId>,
        message: String,
    },
    #[error("run aborted after {batches_done} batches; checkpoint written")]
    Aborted { batches_done: usize },
    #[error("cannot resume: {0}")]
    ResumeMismatch(String),
    #[error(transparent)]
    Econ(#[from] EconError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispatchMode {
    Serial,
    ParallelFanOut,
}

/// How one stage is dispatched and where its endpoints live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePipeline {
    pub mode: DispatchMode,
    pub instances: usize,
    /// Remote endpoint addresses; empty means in-process endpoints.
    #[serde(default)]
    pub endpoints: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub stages: BTreeMap<String, StagePipeline>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let mut stages = BTreeMap::new();
        stages.insert(
            STAGE_DEMAND.to_string(),
            StagePipeline {
                mode: DispatchMode::Serial,
                instances: 1,
                endpoints: vec![],
            },
        );
        stages.insert(
            STAGE_ALLOCATION.to_string(),
            StagePipeline {
                mode: DispatchMode::ParallelFanOut,
                instances: 8,
                endpoints: vec![],
            },
        );
        stages.insert(
            STAGE_ROUTING.to_string(),
            StagePipeline {
                mode: DispatchMode::ParallelFanOut,
                instances: 8,
                endpoints: vec![],
            },
        );
        stages.insert(
            STAGE_MODE_CHOICE.to_string(),
            StagePipeline {
                mode: DispatchMode::Serial,
                instances: 1,
                endpoints: vec![],
            },
        );
        stages.insert(
            STAGE_ECONOMICS.to_string(),
            StagePipeline {
                mode: DispatchMode::Serial,
                instances: 1,
                endpoints: vec![],
            },
        );
        PipelineConfig { stages }
    }
}

impl PipelineConfig {
    fn stage(&self, name: &str) -> StagePipeline {
        self.stages.get(name).cloned().unwrap_or(StagePipeline {
            mode: DispatchMode::Serial,
            instances: 1,
            endpoints: vec![],
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Grouping interval for request batches; 0 means one request per batch.
    pub batch_interval_s: i64,
    pub pipeline: PipelineConfig,
    /// Output directory for the event log, checkpoint, metrics, and views.
    pub out_dir: Option<PathBuf>,
    /// Continue from the checkpoint in `out_dir` instead of starting fresh.
    pub resume: bool,
    /// Abort (with a checkpoint) after this many batches; exercised by the
    /// resumability tests and useful for drills.
    pub abort_after_batches: Option<usize>,
    pub run_id: String,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            batch_interval_s: 0,
            pipeline: PipelineConfig::default(),
            out_dir: None,
            resume: false,
            abort_after_batches: None,
            run_id: "run".to_string(),
        }
    }
}

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub world: WorldState,
    pub frames: Vec<MetricsFrame>,
    pub ledger: RunLedger,
    /// Price parameters proposed by the economics stage at end of run.
    pub proposed_price_params: PriceParams,
    pub rejections: BTreeMap<RejectionReason, u64>,
    pub wall_time_s: f64,
}

/// A batch of requests sharing one aligned grouping window.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestBatch {
    pub window_start_s: i64,
    pub window_end_s: i64,
    pub requests: Vec<TravelRequest>,
}

/// Groups the emission-ordered stream into aligned windows
/// `[k*interval, (k+1)*interval)`; interval 0 degenerates to one request
/// per batch. Within a batch requests keep (emission, id) order.
pub fn batch_requests(stream: &[TravelRequest], interval_s: i64) -> Vec<RequestBatch> {
    let mut batches: Vec<RequestBatch> = Vec::new();
    for request in stream {
        let (start, end) = if interval_s <= 0 {
            (request.emission_s, request.emission_s)
        } else {
            let k = request.emission_s.div_euclid(interval_s);
            (k * interval_s, (k + 1) * interval_s)
        };
        match batches.last_mut() {
            Some(last)
                if interval_s > 0 && last.window_start_s == start =>
            {
                last.requests.push(request.clone());
            }
            _ => batches.push(RequestBatch {
                window_start_s: start,
                window_end_s: end,
                requests: vec![request.clone()],
            }),
        }
    }
    batches
}

/// Registers in-process endpoints (instances per the stage policy) or
/// connects the configured remote endpoints, per stage.
pub fn build_registry(ctx: &Arc<StageContext>, pipeline: &PipelineConfig) -> Result<Registry, RunError> {
    let registry = Registry::new(
        uam_bus::HandshakeInfo::new(crate::stages::stage_schema_fingerprint(), "abs-core"),
        ALL_STAGES.iter().map(|s| s.to_string()),
    );
    for stage in ALL_STAGES {
        let policy = pipeline.stage(stage);
        if policy.endpoints.is_empty() {
            let count = match policy.mode {
                DispatchMode::Serial => 1,
                DispatchMode::ParallelFanOut => policy.instances.max(1),
            };
            for i in 0..count {
                registry.register_in_process(
                    ComponentDescriptor::in_process(stage, format!("{stage}-local-{i}")),
                    ctx.handler(stage),
                )?;
            }
        } else {
            for (i, address) in policy.endpoints.iter().enumerate() {
                registry.register_remote(ComponentDescriptor::remote(
                    stage,
                    format!("{stage}-remote-{i}"),
                    address,
                ))?;
            }
        }
    }
    Ok(registry)
}

/// Runs a full scenario with a default registry.
pub fn run_day(config: &ScenarioConfig, options: &RunOptions) -> Result<RunReport, RunError> {
    let ctx = Arc::new(StageContext::new(config.clone()));
    let registry = build_registry(&ctx, &options.pipeline)?;
    run_day_with(&ctx, &registry, options)
}

/// Runs a full scenario against a caller-supplied registry (used by the
/// remote-transport and fault-injection tests).
pub fn run_day_with(
    ctx: &Arc<StageContext>,
    registry: &Registry,
    options: &RunOptions,
) -> Result<RunReport, RunError> {
    let started = std::time::Instant::now();
    let mut engine = Engine {
        ctx: Arc::clone(ctx),
        registry,
        options,
        world: WorldState::init_scenario(&ctx.config)?,
        flushed_events: 0,
        batches_done: 0,
    };

    // Demand stage: the full timed request stream.
    let requests = engine.fetch_demand()?;
    let batches = batch_requests(&requests, options.batch_interval_s);

    if options.resume {
        engine.restore_checkpoint()?;
    }

    for index in 0..batches.len() {
        if index < engine.batches_done {
            continue;
        }
        engine.process_batch(&batches[index])?;
        engine.batches_done = index + 1;
        engine.flush_checkpoint()?;
        if options.abort_after_batches == Some(engine.batches_done) && index + 1 < batches.len() {
            return Err(RunError::Aborted {
                batches_done: engine.batches_done,
            });
        }
    }

    // Realize the remaining schedule, then close the run.
    let last_arrival = engine
        .world
        .flights
        .values()
        .map(|f| f.arrival_s)
        .max()
        .unwrap_or(engine.world.end_s);
    let final_clock = engine.world.end_s.max(last_arrival);
    engine.world.advance_clock(final_clock)?;
    engine.world.complete_run(final_clock)?;
    engine.flush_checkpoint()?;

    // End-of-run economics exchange over the bus.
    let ledger = crate::economics::evaluate_run(&engine.world, &ctx.config.economics);
    let proposed = engine.economics_stage(&ledger)?;

    let frames = reporting::frames_from_log(
        &engine.world.event_log,
        ctx.config.scenario.metrics_cadence_s,
    );
    let rejections = reporting::rejection_counts(&engine.world.event_log);
    let report = RunReport {
        world: engine.world,
        frames,
        ledger,
        proposed_price_params: proposed,
        rejections,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    write_outputs(&report, options)?;
    Ok(report)
}

/// Runs the iterative price loop: full runs with updated price parameters
/// until convergence, then one final run (with outputs) at the result.
pub fn run_price_loop(
    config: &ScenarioConfig,
    options: &RunOptions,
) -> Result<(RunReport, ConvergenceReport), RunError> {
    let econ = config.economics.clone();
    let loop_options = RunOptions {
        out_dir: None,
        resume: false,
        abort_after_batches: None,
        ..options.clone()
    };
    let report = crate::economics::converge_prices(
        |params: &PriceParams| {
            let mut cfg = config.clone();
            cfg.pricing = params.clone();
            run_day(&cfg, &loop_options)
                .map(|r| r.ledger)
                .map_err(|e| e.to_string())
        },
        &config.pricing,
        econ.tolerance,
        econ.max_iterations,
        econ.target_margin,
        econ.damping,
    )?;
    let mut final_cfg = config.clone();
    final_cfg.pricing = report.params.clone();
    let final_run = run_day(&final_cfg, options)?;
    Ok((final_run, report))
}

// ---------------------------------------------------------------------
// Engine
// ---------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct Checkpoint {
    batches_done: usize,
    events_len: usize,
    clock_s: i64,
    version: u64,
}

/// One planned outcome, valid while the world version matches the token.
#[derive(Debug, Clone)]
struct Planned {
    token: u64,
    action: Action,
}

#[derive(Debug, Clone)]
enum Action {
    Book(BookingPlan),
    Ground,
    Reject(RejectionReason),
}

/// The itinerary skeleton chosen before vehicles and slots are involved.
#[derive(Debug, Clone)]
struct ChosenPlan {
    legs: Vec<LegChoice>,
}

#[derive(Debug, Clone)]
enum LegChoice {
    Pooled {
        flight: FlightId,
        departure_s: i64,
        arrival_s: i64,
        distance_km: f64,
    },
    NeedsVehicle {
        origin: VertiportId,
        destination: VertiportId,
        earliest_departure_s: i64,
        distance_km: f64,
    },
    /// A NeedsVehicle leg after the slot/trajectory stage routed it.
    Routed(RoutedLeg),
}

struct Engine<'a> {
    ctx: Arc<StageContext>,
    registry: &'a Registry,
    options: &'a RunOptions,
    world: WorldState,
    flushed_events: usize,
    batches_done: usize,
}

impl<'a> Engine<'a> {
    fn stage_error(stage: &str, item: Option<RequestId>, e: impl ToString) -> RunError {
        RunError::Stage {
            stage: stage.to_string(),
            item,
            message: e.to_string(),
        }
    }

    fn fetch_demand(&self) -> Result<Vec<TravelRequest>, RunError> {
        let doc = docs::demand_request(&self.ctx);
        let endpoints = self.registry.endpoints(STAGE_DEMAND)?;
        let response = endpoints[0]
            .invoke(&doc)
            .map_err(|e| Self::stage_error(STAGE_DEMAND, None, e))?;
        docs::requests_from_demand_response(&response)
            .map_err(|e| Self::stage_error(STAGE_DEMAND, None, e))
    }

    fn economics_stage(&self, ledger: &RunLedger) -> Result<PriceParams, RunError> {
        let doc = docs::economics_request(&self.ctx, ledger, &self.world.price_params);
        let endpoints = self.registry.endpoints(STAGE_ECONOMICS)?;
        let response = endpoints[0]
            .invoke(&doc)
            .map_err(|e| Self::stage_error(STAGE_ECONOMICS, None, e))?;
        let node = docs::response_for(&response, RequestId(0))
            .map_err(|e| Self::stage_error(STAGE_ECONOMICS, None, e))?;
        docs::price_params_from_response(&node)
            .map_err(|e| Self::stage_error(STAGE_ECONOMICS, None, e))
    }

    // --------------------------------------------------------------
    // Batch processing
    // --------------------------------------------------------------

    fn process_batch(&mut self, batch: &RequestBatch) -> Result<(), RunError> {
        let speculative = self.plan_requests(&batch.requests)?;
        for (request, planned) in batch.requests.iter().zip(speculative) {
            self.world.advance_clock(request.emission_s)?;
            self.world.submit_request(request.clone())?;

            let action = if planned.token == self.world.version {
                planned.action
            } else {
                // Stale: re-plan serially through the same stage components
                // against fresh state.
                let fresh = self.plan_requests(std::slice::from_ref(request))?;
                fresh.into_iter().next().expect("one plan per request").action
            };

            match action {
                Action::Reject(reason) => self.world.reject_request(request.id, reason)?,
                Action::Ground => self.world.record_ground_choice(request.id)?,
                Action::Book(plan) => match self.world.commit_booking(&plan) {
                    Ok(_) => {}
                    Err(CommitError::ConflictRetry) => {
                        // A fresh token cannot conflict: nothing mutates the
                        // world between re-planning and this commit.
                        return Err(RunError::Sim(SimError::InvariantViolation(
                            "commit conflicted immediately after re-planning".into(),
                        )));
                    }
                    Err(CommitError::RejectBooking(message)) => {
                        return Err(RunError::Sim(SimError::InvariantViolation(format!(
                            "commit rejected a freshly planned booking: {message}"
                        ))));
                    }
                },
            }
        }
        Ok(())
    }

    /// Plans a group of requests against the current snapshot: pooling and
    /// candidate selection locally, then allocation, routing, and mode
    /// choice through the bus. Pure with respect to the world.
    fn plan_requests(&self, requests: &[TravelRequest]) -> Result<Vec<Planned>, RunError> {
        let token = self.world.version;
        let mut results: BTreeMap<RequestId, Action> = BTreeMap::new();

        // Local skeleton choice (decomposition + pooling priority).
        let mut chosen: BTreeMap<RequestId, ChosenPlan> = BTreeMap::new();
        for request in requests {
            match self.choose_skeleton(request) {
                Ok(plan) => {
                    chosen.insert(request.id, plan);
                }
                Err(reason) => {
                    results.insert(request.id, Action::Reject(reason));
                }
            }
        }

        // Vehicle allocation for legs that need a new mission.
        let needy: Vec<&TravelRequest> = requests
            .iter()
            .filter(|r| {
                chosen
                    .get(&r.id)
                    .map(|p| p.legs.iter().any(|l| matches!(l, LegChoice::NeedsVehicle { .. })))
                    .unwrap_or(false)
            })
            .collect();

        let mut allocations: BTreeMap<RequestId, Vec<LegAllocation>> = BTreeMap::new();
        if !needy.is_empty() {
            let vehicles = self.vehicle_snapshots();
            let items: Vec<docs::AllocationItem> = needy
                .iter()
                .map(|r| docs::AllocationItem {
                    query: self.allocation_query(r, &chosen[&r.id]),
                })
                .collect();
            let ids: Vec<RequestId> = needy.iter().map(|r| r.id).collect();
            let responses = self.dispatch(STAGE_ALLOCATION, &ids, |subset| {
                let subset_items: Vec<docs::AllocationItem> = items
                    .iter()
                    .filter(|i| subset.contains(&i.query.request))
                    .cloned()
                    .collect();
                docs::allocation_request(&self.ctx, &vehicles, &subset_items)
            })?;
            for (id, node) in &responses {
                match docs::allocation_from_response(node)
                    .map_err(|e| Self::stage_error(STAGE_ALLOCATION, Some(*id), e))?
                {
                    Some(allocs) => {
                        allocations.insert(*id, allocs);
                    }
                    None => {
                        results.insert(*id, Action::Reject(RejectionReason::NoVehicle));
                        chosen.remove(id);
                    }
                }
            }

            // Routing for requests that got vehicles.
            let routed_ids: Vec<RequestId> = needy
                .iter()
                .map(|r| r.id)
                .filter(|id| allocations.contains_key(id))
                .collect();
            if !routed_ids.is_empty() {
                let queries: BTreeMap<RequestId, RoutingQuery> = routed_ids
                    .iter()
                    .map(|id| {
                        let request = requests.iter().find(|r| r.id == *id).unwrap();
                        (
                            *id,
                            self.routing_query(request, &chosen[id], &allocations[id], &vehicles),
                        )
                    })
                    .collect();
                let active: Vec<&crate::airspace::Trajectory4D> =
                    self.world.trajectories.values().collect();
                let responses = self.dispatch(STAGE_ROUTING, &routed_ids, |subset| {
                    let subset_queries: Vec<RoutingQuery> = subset
                        .iter()
                        .map(|id| queries[id].clone())
                        .collect();
                    routing_request(&self.ctx, &self.world.calendars, &active, &subset_queries)
                })?;
                for (id, node) in &responses {
                    match outcome_from_response(node)
                        .map_err(|e| Self::stage_error(STAGE_ROUTING, Some(*id), e))?
                    {
                        RoutingOutcome::Rejected { reason } => {
                            results.insert(*id, Action::Reject(reason));
                            chosen.remove(id);
                        }
                        RoutingOutcome::Planned { legs } => {
                            merge_routed_legs(chosen.get_mut(id).unwrap(), legs);
                        }
                    }
                }
            }
        }

        // Mode choice for every request that still has a full offer.
        let offered: Vec<&TravelRequest> = requests
            .iter()
            .filter(|r| chosen.contains_key(&r.id) && !results.contains_key(&r.id))
            .collect();
        if !offered.is_empty() {
            let items: Vec<docs::ModeChoiceItem> = offered
                .iter()
                .map(|r| self.mode_choice_item(r, &chosen[&r.id]))
                .collect();
            let ids: Vec<RequestId> = offered.iter().map(|r| r.id).collect();
            let responses = self.dispatch(STAGE_MODE_CHOICE, &ids, |subset| {
                let subset_items: Vec<docs::ModeChoiceItem> = items
                    .iter()
                    .filter(|i| subset.contains(&i.request))
                    .cloned()
                    .collect();
                docs::mode_choice_request(&self.ctx, &subset_items)
            })?;
            for request in &offered {
                let node = responses.get(&request.id).ok_or_else(|| {
                    Self::stage_error(STAGE_MODE_CHOICE, Some(request.id), "missing response")
                })?;
                let result = docs::mode_choice_from_response(node)
                    .map_err(|e| Self::stage_error(STAGE_MODE_CHOICE, Some(request.id), e))?;
                let action = if result.chose_uam {
                    Action::Book(self.booking_plan(token, request, &chosen[&request.id]))
                } else {
                    Action::Ground
                };
                results.insert(request.id, action);
            }
        }

        Ok(requests
            .iter()
            .map(|r| Planned {
                token,
                action: results
                    .get(&r.id)
                    .cloned()
                    .unwrap_or(Action::Reject(RejectionReason::NoRoute)),
            })
            .collect())
    }

    /// Decomposition, pooling, and candidate selection for one request.
    fn choose_skeleton(&self, request: &TravelRequest) -> Result<ChosenPlan, RejectionReason> {
        let origin = request.plan.origin_vertiport;
        let destination = request.plan.destination_vertiport;
        if origin == destination {
            return Err(RejectionReason::NoRoute);
        }
        let cfg = &self.ctx.config;
        let positions: Vec<(VertiportId, crate::geo::GeoPoint)> = cfg
            .vertiports
            .iter()
            .map(|v| (VertiportId(v.id), crate::geo::GeoPoint::new(v.lat, v.lon)))
            .collect();
        let max_range = cfg
            .vehicle_types
            .iter()
            .map(|t| t.max_leg_km())
            .fold(0.0, f64::max);
        let decompositions = enumerate_decompositions(
            origin,
            destination,
            &self.ctx.network,
            &positions,
            max_range,
            cfg.planner.max_legs,
        )
        .map_err(|_| RejectionReason::NoRoute)?;

        // Fastest feasible type per leg gives the time estimate.
        let best_speed = |distance: f64| {
            cfg.vehicle_types
                .iter()
                .filter(|t| t.max_leg_km() >= distance)
                .map(|t| t.cruise_speed_kmh)
                .fold(0.0, f64::max)
        };

        let mut candidates = Vec::new();
        let mut skeletons = Vec::new();
        for legs in &decompositions {
            let mut chain = request.plan.earliest_vertiport_arrival_s;
            let mut first_departure = None;
            let mut candidate_legs = Vec::new();
            let mut leg_choices = Vec::new();
            let mut distances = Vec::new();
            for (leg_origin, leg_destination) in legs {
                let pooled = if cfg.planner.pooling_enabled {
                    try_pool(
                        *leg_origin,
                        *leg_destination,
                        chain,
                        cfg.planner.pooling_window_s,
                        &self.world,
                    )
                } else {
                    None
                };
                match pooled {
                    Some(flight_id) => {
                        let flight = &self.world.flights[&flight_id];
                        first_departure.get_or_insert(flight.departure_s);
                        chain = flight.arrival_s;
                        distances.push(flight.distance_km);
                        candidate_legs.push(CandidateLeg {
                            origin: *leg_origin,
                            destination: *leg_destination,
                            assignment: LegAssignment::PoolOnto(flight_id),
                            distance_km: flight.distance_km,
                        });
                        leg_choices.push(LegChoice::Pooled {
                            flight: flight_id,
                            departure_s: flight.departure_s,
                            arrival_s: flight.arrival_s,
                            distance_km: flight.distance_km,
                        });
                    }
                    None => {
                        let o_pos = self.ctx.vertiport_position(*leg_origin);
                        let d_pos = self.ctx.vertiport_position(*leg_destination);
                        let distance = self
                            .ctx
                            .network
                            .distance_km((*leg_origin, o_pos), (*leg_destination, d_pos));
                        let speed = best_speed(distance);
                        if speed <= 0.0 {
                            // No type can fly this leg; the decomposition
                            // enumerator should have filtered it.
                            candidate_legs.clear();
                            break;
                        }
                        let departure = chain;
                        let arrival =
                            departure + (distance / speed * 3600.0).round() as i64;
                        first_departure.get_or_insert(departure);
                        chain = arrival;
                        distances.push(distance);
                        candidate_legs.push(CandidateLeg {
                            origin: *leg_origin,
                            destination: *leg_destination,
                            assignment: LegAssignment::NewMission,
                            distance_km: distance,
                        });
                        leg_choices.push(LegChoice::NeedsVehicle {
                            origin: *leg_origin,
                            destination: *leg_destination,
                            earliest_departure_s: departure,
                            distance_km: distance,
                        });
                    }
                }
            }
            if candidate_legs.is_empty() {
                continue;
            }
            let fare = crate::economics::compute_fare(&distances, &self.world.price_params);
            candidates.push(MissionCandidate {
                legs: candidate_legs,
                estimated_departure_s: first_departure.unwrap_or(chain),
                estimated_arrival_s: chain,
                estimated_fare_eur: fare,
            });
            skeletons.push(ChosenPlan { legs: leg_choices });
        }

        let index = select_itinerary(&candidates).map_err(|_| RejectionReason::NoRoute)?;
        Ok(skeletons.swap_remove(index))
    }

    /// Planning views of the whole fleet from committed data.
    fn vehicle_snapshots(&self) -> Vec<VehicleSnapshot> {
        self.world
            .vehicles
            .values()
            .map(|v| {
                let walk = ScheduleWalk::over(&self.world, v);
                VehicleSnapshot {
                    id: v.id,
                    vtype: v.vtype.clone(),
                    ready_s: walk.ready_s,
                    position: walk.position,
                    energy_kwh: walk.energy_at(walk.ready_s),
                    deadhead_km: Vec::new(),
                }
            })
            .collect()
    }

    fn allocation_query(
        &self,
        request: &TravelRequest,
        plan: &ChosenPlan,
    ) -> crate::fleet::AllocationQuery {
        let legs = plan
            .legs
            .iter()
            .filter_map(|leg| match leg {
                LegChoice::NeedsVehicle {
                    origin,
                    destination,
                    earliest_departure_s,
                    distance_km,
                } => Some(crate::fleet::LegQuery {
                    origin: *origin,
                    destination: *destination,
                    earliest_departure_s: *earliest_departure_s,
                    estimated_pax: 1,
                    distance_km: *distance_km,
                }),
                LegChoice::Pooled { .. } | LegChoice::Routed(_) => None,
            })
            .collect();
        crate::fleet::AllocationQuery {
            request: request.id,
            not_before_s: request.emission_s,
            legs,
        }
    }

    fn routing_query(
        &self,
        request: &TravelRequest,
        plan: &ChosenPlan,
        allocations: &[LegAllocation],
        vehicles: &[VehicleSnapshot],
    ) -> RoutingQuery {
        let mut items = Vec::new();
        let mut alloc_iter = allocations.iter();
        for leg in &plan.legs {
            match leg {
                LegChoice::Pooled { arrival_s, .. } => {
                    items.push(RoutingItem::FixedLeg {
                        arrival_s: *arrival_s,
                    });
                }
                LegChoice::Routed(r) => {
                    items.push(RoutingItem::FixedLeg {
                        arrival_s: r.mission.arrival_s,
                    });
                }
                LegChoice::NeedsVehicle {
                    origin,
                    destination,
                    earliest_departure_s,
                    ..
                } => {
                    let alloc = alloc_iter.next().expect("allocation per needy leg");
                    let snapshot = vehicles
                        .iter()
                        .find(|v| v.id == alloc.vehicle)
                        .expect("allocated vehicle snapshotted");
                    items.push(RoutingItem::NewLeg {
                        origin: *origin,
                        destination: *destination,
                        vehicle: alloc.vehicle,
                        vtype: alloc.vtype.clone(),
                        pax_earliest_s: *earliest_departure_s,
                        vehicle_ready_s: snapshot.ready_s,
                        vehicle_energy_kwh: snapshot.energy_kwh,
                        deadhead: alloc.deadhead.clone(),
                    });
                }
            }
        }
        RoutingQuery {
            request: request.id,
            not_before_s: request.emission_s,
            items,
        }
    }

    /// Passenger-side departure, arrival, and fared leg distances of a
    /// fully planned itinerary.
    fn itinerary_shape(&self, plan: &ChosenPlan) -> (i64, i64, Vec<f64>) {
        let mut departure = None;
        let mut arrival = 0;
        let mut distances = Vec::new();
        for leg in &plan.legs {
            match leg {
                LegChoice::Pooled {
                    departure_s,
                    arrival_s,
                    distance_km,
                    ..
                } => {
                    departure.get_or_insert(*departure_s);
                    arrival = *arrival_s;
                    distances.push(*distance_km);
                }
                LegChoice::Routed(r) => {
                    departure.get_or_insert(r.mission.departure_s);
                    arrival = r.mission.arrival_s;
                    distances.push(r.mission.distance_km);
                }
                LegChoice::NeedsVehicle { .. } => {
                    unreachable!("routing replaced every NeedsVehicle leg")
                }
            }
        }
        (departure.unwrap_or(0), arrival, distances)
    }

    fn mode_choice_item(&self, request: &TravelRequest, plan: &ChosenPlan) -> docs::ModeChoiceItem {
        let (departure, arrival, distances) = self.itinerary_shape(plan);
        let fare = crate::economics::compute_fare(&distances, &self.world.price_params);
        docs::ModeChoiceItem {
            request: request.id,
            uam_departure_s: departure,
            uam_arrival_s: arrival,
            fare_eur: fare,
            access_s: request.plan.access_s,
            egress_s: request.plan.egress_s,
            access_km: request.plan.access_km,
            egress_km: request.plan.egress_km,
            earliest_vertiport_arrival_s: request.plan.earliest_vertiport_arrival_s,
            trip_origin: request.trip.origin,
            trip_destination: request.trip.destination,
        }
    }

    fn booking_plan(&self, token: u64, request: &TravelRequest, plan: &ChosenPlan) -> BookingPlan {
        let (departure, arrival, distances) = self.itinerary_shape(plan);
        let legs = plan
            .legs
            .iter()
            .map(|leg| match leg {
                LegChoice::Pooled { flight, .. } => LegPlan::Pool { flight: *flight },
                LegChoice::Routed(r) => LegPlan::New {
                    deadhead: r.deadhead.clone(),
                    mission: r.mission.clone(),
                },
                LegChoice::NeedsVehicle { .. } => {
                    unreachable!("routing replaced every NeedsVehicle leg")
                }
            })
            .collect();
        let fare = crate::economics::compute_fare(&distances, &self.world.price_params);
        BookingPlan {
            version_token: token,
            request: request.id,
            legs,
            fare_eur: fare,
            departure_s: departure,
            arrival_s: arrival,
        }
    }

    // --------------------------------------------------------------
    // Dispatch
    // --------------------------------------------------------------

    /// Serial: one invocation carrying the whole group. Fan-out: one
    /// invocation per item across at most `instances` endpoints; results
    /// are keyed back to their request ids so commits stay in batch order
    /// regardless of completion order.
    fn dispatch(
        &self,
        stage: &str,
        items: &[RequestId],
        build: impl Fn(&[RequestId]) -> Doc + Sync,
    ) -> Result<BTreeMap<RequestId, Node>, RunError> {
        if items.is_empty() {
            return Ok(BTreeMap::new());
        }
        let policy = self.options.pipeline.stage(stage);
        let endpoints = self.registry.endpoints(stage)?;
        let mut responses: BTreeMap<RequestId, Node> = BTreeMap::new();

        match policy.mode {
            DispatchMode::Serial => {
                let doc = build(items);
                let response = endpoints[0]
                    .invoke(&doc)
                    .map_err(|e| Self::stage_error(stage, items.first().copied(), e))?;
                for item in items {
                    let node = docs::response_for(&response, *item)
                        .map_err(|e| Self::stage_error(stage, Some(*item), e))?;
                    responses.insert(*item, node);
                }
            }
            DispatchMode::ParallelFanOut => {
                let lanes = policy.instances.max(1).min(endpoints.len());
                // Item documents are built up front; worker threads only
                // carry documents, never world state.
                let docs_in: Vec<Doc> = items
                    .iter()
                    .map(|id| build(std::slice::from_ref(id)))
                    .collect();
                let mut results: Vec<Option<Result<Doc, BusError>>> =
                    (0..items.len()).map(|_| None).collect();

                std::thread::scope(|scope| {
                    let mut slots: Vec<&mut Option<Result<Doc, BusError>>> =
                        results.iter_mut().collect();
                    let mut lane_work: Vec<Vec<(usize, &Doc, &mut Option<Result<Doc, BusError>>)>> =
                        (0..lanes).map(|_| Vec::new()).collect();
                    for (i, slot) in slots.drain(..).enumerate() {
                        lane_work[i % lanes].push((i, &docs_in[i], slot));
                    }
                    for (lane, work) in lane_work.into_iter().enumerate() {
                        let endpoint = Arc::clone(&endpoints[lane]);
                        scope.spawn(move || {
                            for (_, doc, slot) in work {
                                *slot = Some(endpoint.invoke(doc));
                            }
                        });
                    }
                });

                for (i, item) in items.iter().enumerate() {
                    let response = results[i]
                        .take()
                        .expect("every fan-out item answered")
                        .map_err(|e| Self::stage_error(stage, Some(*item), e))?;
                    let node = docs::response_for(&response, *item)
                        .map_err(|e| Self::stage_error(stage, Some(*item), e))?;
                    responses.insert(*item, node);
                }
            }
        }
        Ok(responses)
    }

    // --------------------------------------------------------------
    // Checkpointing
    // --------------------------------------------------------------

    fn paths(&self) -> Option<(PathBuf, PathBuf)> {
        self.options.out_dir.as_ref().map(|dir| {
            (
                dir.join(format!("{}_events.jsonl", self.options.run_id)),
                dir.join(format!("{}_checkpoint.json", self.options.run_id)),
            )
        })
    }

    fn flush_checkpoint(&mut self) -> Result<(), RunError> {
        let Some((events_path, checkpoint_path)) = self.paths() else {
            return Ok(());
        };
        std::fs::create_dir_all(events_path.parent().unwrap())?;
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&events_path)?;
        for ev in &self.world.event_log[self.flushed_events..] {
            let line = serde_json::to_string(ev).expect("event serializes");
            file.write_all(line.as_bytes())?;
            file.write_all(b"\n")?;
        }
        file.flush()?;
        self.flushed_events = self.world.event_log.len();

        let checkpoint = Checkpoint {
            batches_done: self.batches_done,
            events_len: self.flushed_events,
            clock_s: self.world.clock_s,
            version: self.world.version,
        };
        std::fs::write(
            checkpoint_path,
            serde_json::to_string_pretty(&checkpoint).expect("checkpoint serializes"),
        )?;
        Ok(())
    }

    fn restore_checkpoint(&mut self) -> Result<(), RunError> {
        let Some((events_path, checkpoint_path)) = self.paths() else {
            return Err(RunError::ResumeMismatch(
                "resume requires an output directory".into(),
            ));
        };
        let checkpoint: Checkpoint =
            serde_json::from_str(&std::fs::read_to_string(&checkpoint_path).map_err(|e| {
                RunError::ResumeMismatch(format!("no checkpoint at {checkpoint_path:?}: {e}"))
            })?)
            .map_err(|e| RunError::ResumeMismatch(e.to_string()))?;
        let text = std::fs::read_to_string(&events_path)?;
        let events = event::from_jsonl(&text)
            .map_err(|e| RunError::ResumeMismatch(format!("event log unreadable: {e}")))?;
        if events.len() != checkpoint.events_len {
            return Err(RunError::ResumeMismatch(format!(
                "event log has {} records, checkpoint expects {}",
                events.len(),
                checkpoint.events_len
            )));
        }
        match events.first() {
            Some(WorldEvent::Init { config, .. }) if *config == self.ctx.config => {}
            _ => {
                return Err(RunError::ResumeMismatch(
                    "checkpointed scenario differs from the requested one".into(),
                ))
            }
        }
        let world = WorldState::replay(&events)?;
        self.world = world;
        self.world.advance_clock(checkpoint.clock_s)?;
        if self.world.version != checkpoint.version {
            return Err(RunError::ResumeMismatch(format!(
                "replayed version {} != checkpointed {}",
                self.world.version, checkpoint.version
            )));
        }
        self.flushed_events = checkpoint.events_len;
        self.batches_done = checkpoint.batches_done;
        Ok(())
    }
}

/// Replaces `NeedsVehicle` legs with their routed missions (in place).
fn merge_routed_legs(plan: &mut ChosenPlan, routed: Vec<RoutedLeg>) {
    let mut routed_iter = routed.into_iter();
    for leg in &mut plan.legs {
        if let LegChoice::NeedsVehicle { .. } = leg {
            let r = routed_iter.next().expect("routed leg per needy leg");
            *leg = LegChoice::Routed(r);
        }
    }
}

fn write_outputs(report: &RunReport, options: &RunOptions) -> Result<(), RunError> {
    let Some(dir) = options.out_dir.as_ref() else {
        return Ok(());
    };
    std::fs::create_dir_all(dir)?;
    let id = &options.run_id;
    std::fs::write(
        dir.join(format!("{id}_metrics.csv")),
        reporting::metrics_csv(&report.frames),
    )?;
    std::fs::write(
        dir.join(format!("{id}_ledger.csv")),
        reporting::ledger_csv(&report.ledger),
    )?;
    let occupancy = reporting::occupancy_series(&report.world.event_log, 60);
    std::fs::write(
        dir.join(format!("{id}_occupancy.csv")),
        reporting::occupancy_csv(&occupancy),
    )?;
    let histogram = reporting::range_histogram(
        &report.world.event_log,
        5.0,
        reporting::RangeFilter::All,
    );
    std::fs::write(
        dir.join(format!("{id}_mission_ranges.csv")),
        reporting::histogram_csv(&histogram),
    )?;
    let summary = serde_json::json!({
        "requests": report.world.counters.requests,
        "uam_passengers": report.world.counters.uam_passengers,
        "mode_share": report.world.snapshot_metrics().mode_share,
        "flights": report.world.counters.flights,
        "deadhead_flights": report.world.counters.deadhead_flights,
        "revenue_eur": report.world.counters.revenue_eur,
        "rejections": report.rejections.iter().map(|(k, v)| (format!("{k:?}"), v)).collect::<BTreeMap<_, _>>(),
        "proposed_price_per_km": report.proposed_price_params.price_per_km_eur,
        "wall_time_s": report.wall_time_s,
    });
    std::fs::write(
        dir.join(format!("{id}_summary.json")),
        serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    Ok(())
}
