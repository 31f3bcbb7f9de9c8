//! The combined vertidrome/trajectory stage: for each new mission of a
//! request it finds a take-off slot, proposes candidate trajectories,
//! resolves conflicts by shifting departure, and pairs the arrival with a
//! landing slot - the co-invoked slot-and-trajectory workflow.

use std::collections::BTreeMap;

use uam_bus::{Doc, Node};

use crate::airspace::{
    detect_conflicts, match_arrival_slot, propose_trajectories, resolve_by_delay, AirspaceError,
    Trajectory4D, TrajectoryPath,
};
use crate::fleet::DeadheadPlan;
use crate::ids::{FlightId, RequestId, TrajectoryId, VehicleId, VertiportId};
use crate::scenario::{FlightKind, MissionPlan, RejectionReason};
use crate::vertidrome::{SlotCalendar, SlotKind, SlotOffer};

use super::docs::{
    calendar_from_excerpt, int_node, num_node, path_from_node, path_node, rejection_node,
    rejection_of, req_child, req_int, req_num, req_text, req_uid, requests_of,
    response_doc, trajectory_from_node, trajectory_node, turnaround_of_excerpt,
    vertiport_excerpt,
};
use super::StageContext;

/// One element of a request's mission chain, in execution order.
#[derive(Debug, Clone, PartialEq)]
pub enum RoutingItem {
    /// A pooled leg with committed times; only constrains the chain.
    FixedLeg { arrival_s: i64 },
    /// A new mission to route, with the allocated vehicle's planning view.
    NewLeg {
        origin: VertiportId,
        destination: VertiportId,
        vehicle: VehicleId,
        vtype: String,
        pax_earliest_s: i64,
        vehicle_ready_s: i64,
        vehicle_energy_kwh: f64,
        deadhead: Option<DeadheadPlan>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutingQuery {
    pub request: RequestId,
    pub not_before_s: i64,
    pub items: Vec<RoutingItem>,
}

/// A routed new leg: the optional deadhead plus the revenue mission.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutedLeg {
    pub deadhead: Option<MissionPlan>,
    pub mission: MissionPlan,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RoutingOutcome {
    Planned { legs: Vec<RoutedLeg> },
    Rejected { reason: RejectionReason },
}

/// Builds the request document: the queries plus excerpts of every involved
/// vertiport calendar and the trajectories still relevant to the planning
/// window.
pub fn routing_request(
    ctx: &StageContext,
    calendars: &BTreeMap<VertiportId, SlotCalendar>,
    active: &[&Trajectory4D],
    queries: &[RoutingQuery],
) -> Doc {
    let mut involved: Vec<VertiportId> = Vec::new();
    let mut horizon_floor = i64::MAX;
    for q in queries {
        horizon_floor = horizon_floor.min(q.not_before_s);
        for item in &q.items {
            if let RoutingItem::NewLeg {
                origin,
                destination,
                deadhead,
                ..
            } = item
            {
                for vp in [*origin, *destination]
                    .into_iter()
                    .chain(deadhead.iter().map(|d| d.from))
                {
                    if !involved.contains(&vp) {
                        involved.push(vp);
                    }
                }
            }
        }
    }
    involved.sort();

    let vertiports = Node::new("vertiports").children_from(
        involved
            .iter()
            .map(|vp| vertiport_excerpt(ctx, &calendars[vp])),
    );
    // Trajectories already landed before the planning window cannot
    // conflict with anything planned at or after it.
    let trajectories = Node::new("trajectories").children_from(
        active
            .iter()
            .filter(|t| horizon_floor == i64::MAX || t.path.arrival_s() >= horizon_floor)
            .map(|t| trajectory_node(t)),
    );

    let requests = Node::new("requests").children_from(queries.iter().map(|q| {
        Node::new("request")
            .uid(q.request.0)
            .child(num_node("notBefore", q.not_before_s as f64, "s"))
            .child(
                Node::new("items").children_from(q.items.iter().enumerate().map(|(i, item)| {
                    let node = Node::new("item").uid(i as u64);
                    match item {
                        RoutingItem::FixedLeg { arrival_s } => node
                            .child(Node::new("kind").text("fixed"))
                            .child(num_node("arrivalTime", *arrival_s as f64, "s")),
                        RoutingItem::NewLeg {
                            origin,
                            destination,
                            vehicle,
                            vtype,
                            pax_earliest_s,
                            vehicle_ready_s,
                            vehicle_energy_kwh,
                            deadhead,
                        } => {
                            let mut node = node
                                .child(Node::new("kind").text("new"))
                                .child(int_node("originVertiport", origin.0 as i64))
                                .child(int_node("destinationVertiport", destination.0 as i64))
                                .child(int_node("vehicleID", vehicle.0 as i64))
                                .child(Node::new("vehicleType").text(vtype))
                                .child(num_node("paxEarliest", *pax_earliest_s as f64, "s"))
                                .child(num_node("vehicleReady", *vehicle_ready_s as f64, "s"))
                                .child(num_node("vehicleEnergy", *vehicle_energy_kwh, "kWh"));
                            if let Some(dh) = deadhead {
                                node = node.child(
                                    Node::new("deadhead")
                                        .child(int_node("from", dh.from.0 as i64))
                                        .child(num_node("distance", dh.distance_km, "km"))
                                        .child(num_node(
                                            "earliestDeparture",
                                            dh.earliest_departure_s as f64,
                                            "s",
                                        )),
                                );
                            }
                            node
                        }
                    }
                })),
            )
    }));

    super::docs::request_doc_with_header(
        super::STAGE_ROUTING,
        ctx.config.scenario.seed,
        vec![Node::new("networkFingerprint").text(ctx.network_fingerprint())],
        vec![Node::new("flights")
            .child(vertiports)
            .child(trajectories)
            .child(requests)],
    )
}

pub fn handle_routing(ctx: &StageContext, doc: &Doc) -> Result<Doc, String> {
    let fingerprint = req_text(req_child(doc.root(), "header")?, "networkFingerprint")?;
    if fingerprint != ctx.network_fingerprint() {
        return Err("route network fingerprint mismatch: host configured for a different scenario".into());
    }
    let flights = req_child(doc.root(), "flights")?;

    let mut calendars: BTreeMap<VertiportId, SlotCalendar> = BTreeMap::new();
    let mut turnarounds: BTreeMap<VertiportId, i64> = BTreeMap::new();
    for vp in req_child(flights, "vertiports")?.find_all("vertiport") {
        let calendar = calendar_from_excerpt(vp)?;
        let (id, turnaround) = turnaround_of_excerpt(vp)?;
        calendars.insert(calendar.vertiport, calendar);
        turnarounds.insert(id, turnaround);
    }
    let mut active: Vec<Trajectory4D> = Vec::new();
    for t in req_child(flights, "trajectories")?.find_all("trajectory") {
        active.push(trajectory_from_node(t)?);
    }

    let mut responses = Vec::new();
    for request in requests_of(doc)? {
        let query = query_from_node(request)?;
        // Requests in one document are planned independently against the
        // same snapshot, exactly like fan-out instances would.
        let mut local_calendars = calendars.clone();
        let mut local_active = active.clone();
        let outcome = plan_query(
            ctx,
            &query,
            &mut local_calendars,
            &mut local_active,
            &turnarounds,
        );
        responses.push(outcome_node(query.request, &outcome));
    }
    response_doc(responses)
}

fn query_from_node(request: &Node) -> Result<RoutingQuery, String> {
    let request_id = RequestId(req_uid(request)?);
    let not_before_s = req_int(request, "notBefore")?;
    let mut items = Vec::new();
    for item in req_child(request, "items")?.find_all("item") {
        match req_text(item, "kind")?.as_str() {
            "fixed" => items.push(RoutingItem::FixedLeg {
                arrival_s: req_int(item, "arrivalTime")?,
            }),
            "new" => {
                let deadhead = match item.find("deadhead") {
                    Some(dh) => Some(DeadheadPlan {
                        from: VertiportId(req_int(dh, "from")? as u64),
                        distance_km: req_num(dh, "distance")?,
                        earliest_departure_s: req_int(dh, "earliestDeparture")?,
                    }),
                    None => None,
                };
                items.push(RoutingItem::NewLeg {
                    origin: VertiportId(req_int(item, "originVertiport")? as u64),
                    destination: VertiportId(req_int(item, "destinationVertiport")? as u64),
                    vehicle: VehicleId(req_int(item, "vehicleID")? as u64),
                    vtype: req_text(item, "vehicleType")?,
                    pax_earliest_s: req_int(item, "paxEarliest")?,
                    vehicle_ready_s: req_int(item, "vehicleReady")?,
                    vehicle_energy_kwh: req_num(item, "vehicleEnergy")?,
                    deadhead,
                });
            }
            other => return Err(format!("unknown routing item kind '{other}'")),
        }
    }
    Ok(RoutingQuery {
        request: request_id,
        not_before_s,
        items,
    })
}

fn outcome_node(request: RequestId, outcome: &RoutingOutcome) -> Node {
    let node = Node::new("response").uid(request.0);
    match outcome {
        RoutingOutcome::Rejected { reason } => node.child(rejection_node(*reason)),
        RoutingOutcome::Planned { legs } => node.child(Node::new("items").children_from(
            legs.iter().enumerate().map(|(i, leg)| {
                let mut item = Node::new("item")
                    .uid(i as u64)
                    .child(mission_node("mission", &leg.mission));
                if let Some(dh) = &leg.deadhead {
                    item = item.child(mission_node("deadheadMission", dh));
                }
                item
            }),
        )),
    }
}

fn mission_node(name: &str, m: &MissionPlan) -> Node {
    Node::new(name)
        .child(int_node("vehicleID", m.vehicle.0 as i64))
        .child(int_node("originVertiport", m.origin.0 as i64))
        .child(int_node("destinationVertiport", m.destination.0 as i64))
        .child(slot_offer_node("takeoffSlot", &m.takeoff))
        .child(slot_offer_node("landingSlot", &m.landing))
        .child(path_node("trajectory", &m.trajectory))
        .child(Node::new("kind").text(match m.kind {
            FlightKind::Revenue => "revenue",
            FlightKind::Deadhead => "deadhead",
        }))
        .child(num_node("distance", m.distance_km, "km"))
        .child(num_node("energy", m.energy_kwh, "kWh"))
        .child(num_node("departure", m.departure_s as f64, "s"))
        .child(num_node("arrival", m.arrival_s as f64, "s"))
}

fn slot_offer_node(name: &str, offer: &SlotOffer) -> Node {
    Node::new(name)
        .child(int_node("vertiportID", offer.vertiport.0 as i64))
        .child(int_node("fatoIndex", offer.fato_index as i64))
        .child(Node::new("slotKind").text(match offer.kind {
            SlotKind::TakeOff => "takeoff",
            SlotKind::Landing => "landing",
        }))
        .child(num_node("start", offer.start_s as f64, "s"))
        .child(num_node("end", offer.end_s as f64, "s"))
}

fn slot_offer_from_node(node: &Node) -> Result<SlotOffer, String> {
    Ok(SlotOffer {
        vertiport: VertiportId(req_int(node, "vertiportID")? as u64),
        fato_index: req_int(node, "fatoIndex")? as u32,
        kind: match req_text(node, "slotKind")?.as_str() {
            "takeoff" => SlotKind::TakeOff,
            "landing" => SlotKind::Landing,
            other => return Err(format!("unknown slot kind '{other}'")),
        },
        start_s: req_int(node, "start")?,
        end_s: req_int(node, "end")?,
    })
}

fn mission_from_node(node: &Node) -> Result<MissionPlan, String> {
    Ok(MissionPlan {
        vehicle: VehicleId(req_int(node, "vehicleID")? as u64),
        origin: VertiportId(req_int(node, "originVertiport")? as u64),
        destination: VertiportId(req_int(node, "destinationVertiport")? as u64),
        takeoff: slot_offer_from_node(req_child(node, "takeoffSlot")?)?,
        landing: slot_offer_from_node(req_child(node, "landingSlot")?)?,
        trajectory: path_from_node(req_child(node, "trajectory")?)?,
        kind: match req_text(node, "kind")?.as_str() {
            "revenue" => FlightKind::Revenue,
            "deadhead" => FlightKind::Deadhead,
            other => return Err(format!("unknown flight kind '{other}'")),
        },
        distance_km: req_num(node, "distance")?,
        energy_kwh: req_num(node, "energy")?,
        departure_s: req_int(node, "departure")?,
        arrival_s: req_int(node, "arrival")?,
    })
}

pub fn outcome_from_response(node: &Node) -> Result<RoutingOutcome, String> {
    if let Some(reason) = rejection_of(node)? {
        return Ok(RoutingOutcome::Rejected { reason });
    }
    let mut legs = Vec::new();
    for item in req_child(node, "items")?.find_all("item") {
        let mission = mission_from_node(req_child(item, "mission")?)?;
        let deadhead = match item.find("deadheadMission") {
            Some(dh) => Some(mission_from_node(dh)?),
            None => None,
        };
        legs.push(RoutedLeg { deadhead, mission });
    }
    Ok(RoutingOutcome::Planned { legs })
}

// ---------------------------------------------------------------------
// The planner proper
// ---------------------------------------------------------------------

/// Plans every item of one query against local copies of the calendars and
/// active set, accumulating its own missions so intra-request legs stay
/// conflict-free among themselves.
fn plan_query(
    ctx: &StageContext,
    query: &RoutingQuery,
    calendars: &mut BTreeMap<VertiportId, SlotCalendar>,
    active: &mut Vec<Trajectory4D>,
    turnarounds: &BTreeMap<VertiportId, i64>,
) -> RoutingOutcome {
    let mut chain_s = query.not_before_s;
    let mut legs = Vec::new();
    // Per-vehicle energy tracking across this request's own missions.
    let mut energy: BTreeMap<VehicleId, (i64, f64)> = BTreeMap::new();

    for item in &query.items {
        match item {
            RoutingItem::FixedLeg { arrival_s } => {
                chain_s = chain_s.max(*arrival_s);
            }
            RoutingItem::NewLeg {
                origin,
                destination,
                vehicle,
                vtype,
                pax_earliest_s,
                vehicle_ready_s,
                vehicle_energy_kwh,
                deadhead,
            } => {
                let vtype_cfg = match ctx.config.vehicle_type(vtype) {
                    Some(t) => t.clone(),
                    None => {
                        return RoutingOutcome::Rejected {
                            reason: RejectionReason::NoVehicle,
                        }
                    }
                };
                let (mut ready_s, mut energy_kwh) = energy
                    .get(vehicle)
                    .copied()
                    .unwrap_or((*vehicle_ready_s, *vehicle_energy_kwh));

                // Deadhead repositioning first, when the vehicle is elsewhere.
                let mut deadhead_mission = None;
                if let Some(dh) = deadhead {
                    let earliest = dh.earliest_departure_s.max(ready_s).max(query.not_before_s);
                    let planned = match plan_mission(
                        ctx,
                        calendars,
                        active,
                        *vehicle,
                        dh.from,
                        *origin,
                        earliest,
                        &vtype_cfg,
                        FlightKind::Deadhead,
                    ) {
                        Ok(m) => m,
                        Err(reason) => return RoutingOutcome::Rejected { reason },
                    };
                    energy_kwh = charge_between(&vtype_cfg, energy_kwh, ready_s, planned.departure_s)
                        - planned.energy_kwh;
                    ready_s =
                        planned.arrival_s + turnarounds.get(origin).copied().unwrap_or(0);
                    deadhead_mission = Some(planned);
                }

                let earliest = (*pax_earliest_s)
                    .max(chain_s)
                    .max(ready_s)
                    .max(query.not_before_s);
                let mission = match plan_mission(
                    ctx,
                    calendars,
                    active,
                    *vehicle,
                    *origin,
                    *destination,
                    earliest,
                    &vtype_cfg,
                    FlightKind::Revenue,
                ) {
                    Ok(m) => m,
                    Err(reason) => return RoutingOutcome::Rejected { reason },
                };
                energy_kwh = charge_between(&vtype_cfg, energy_kwh, ready_s, mission.departure_s)
                    - mission.energy_kwh;
                if energy_kwh < vtype_cfg.min_reserve_kwh - 1e-9 {
                    return RoutingOutcome::Rejected {
                        reason: RejectionReason::NoVehicle,
                    };
                }
                let next_ready =
                    mission.arrival_s + turnarounds.get(destination).copied().unwrap_or(0);
                energy.insert(*vehicle, (next_ready, energy_kwh));
                chain_s = mission.arrival_s;
                legs.push(RoutedLeg {
                    deadhead: deadhead_mission,
                    mission,
                });
            }
        }
    }
    RoutingOutcome::Planned { legs }
}

fn charge_between(
    vtype: &crate::config::VehicleTypeConfig,
    energy_kwh: f64,
    from_s: i64,
    to_s: i64,
) -> f64 {
    if to_s <= from_s {
        return energy_kwh;
    }
    let dt_h = (to_s - from_s) as f64 / 3600.0;
    (energy_kwh + vtype.charge_rate_kwh_per_h * dt_h).min(vtype.battery_capacity_kwh)
}

/// One mission through the slot/trajectory workflow:
/// take-off slot -> candidate trajectories -> departure-delay deconfliction
/// (with the shifted departure re-validated against the origin calendar) ->
/// arrival slot matching. Successful plans are committed into the local
/// scratch state.
#[allow(clippy::too_many_arguments)]
fn plan_mission(
    ctx: &StageContext,
    calendars: &mut BTreeMap<VertiportId, SlotCalendar>,
    active: &mut Vec<Trajectory4D>,
    vehicle: VehicleId,
    origin: VertiportId,
    destination: VertiportId,
    earliest_s: i64,
    vtype: &crate::config::VehicleTypeConfig,
    kind: FlightKind,
) -> Result<MissionPlan, RejectionReason> {
    let airspace = &ctx.config.airspace;
    let horizon = ctx.config.vertidrome.search_horizon_s;
    let origin_pos = ctx.vertiport_position(origin);
    let destination_pos = ctx.vertiport_position(destination);

    let takeoff = calendars
        .get(&origin)
        .ok_or(RejectionReason::NoSlot)?
        .next_free_slot(SlotKind::TakeOff, earliest_s, horizon)
        .map_err(|_| RejectionReason::NoSlot)?;

    let candidates = propose_trajectories(
        (origin, origin_pos),
        (destination, destination_pos),
        takeoff.start_s,
        &ctx.network,
        vtype.cruise_speed_kmh,
        airspace.k_paths,
    )
    .map_err(|_| RejectionReason::NoRoute)?;

    // Deconflict each candidate; delayed departures must still have their
    // exact take-off instant free at the origin.
    let active_refs: Vec<&Trajectory4D> = active.iter().collect();
    let mut viable: Vec<(TrajectoryPath, SlotOffer)> = Vec::new();
    let mut saw_congestion = false;
    for candidate in &candidates {
        match resolve_by_delay(candidate, &active_refs, airspace) {
            Ok((resolved, delay)) => {
                let takeoff_offer = if delay == 0 {
                    Some(takeoff)
                } else {
                    match calendars
                        .get(&origin)
                        .ok_or(RejectionReason::NoSlot)?
                        .next_free_slot(SlotKind::TakeOff, resolved.departure_s(), 0)
                    {
                        Ok(offer) if offer.start_s == resolved.departure_s() => Some(offer),
                        _ => None,
                    }
                };
                if let Some(offer) = takeoff_offer {
                    viable.push((resolved, offer));
                }
            }
            Err(AirspaceError::TrajectoryCongested) => saw_congestion = true,
            Err(_) => {}
        }
    }
    if viable.is_empty() {
        return Err(if saw_congestion {
            RejectionReason::Congested
        } else {
            RejectionReason::NoSlot
        });
    }

    viable.sort_by_key(|(path, _)| path.arrival_s());
    let paths: Vec<TrajectoryPath> = viable.iter().map(|(p, _)| p.clone()).collect();
    let destination_calendar = calendars.get(&destination).ok_or(RejectionReason::NoSlot)?;
    let (chosen, landing) = match_arrival_slot(&paths, destination_calendar, horizon)
        .map_err(|_| RejectionReason::NoSlot)?;
    let (trajectory, takeoff) = viable.swap_remove(chosen);

    debug_assert!(
        detect_conflicts(&trajectory, &active_refs, airspace).is_empty(),
        "resolved trajectory must be conflict-free"
    );
    drop(active_refs);

    // Commit into the scratch state so later legs of this request see it.
    // Scratch ids live at the top of the id space, far above real ones.
    let scratch = u64::MAX - 2 * active.len() as u64;
    let scratch_id = TrajectoryId(scratch);
    calendars
        .get_mut(&origin)
        .unwrap()
        .commit(&takeoff, crate::ids::SlotId(scratch))
        .map_err(|_| RejectionReason::NoSlot)?;
    calendars
        .get_mut(&destination)
        .unwrap()
        .commit(&landing, crate::ids::SlotId(scratch - 1))
        .map_err(|_| RejectionReason::NoSlot)?;
    active.push(Trajectory4D {
        id: scratch_id,
        flight: FlightId(u64::MAX),
        path: trajectory.clone(),
    });

    let distance_km = trajectory.distance_km;
    Ok(MissionPlan {
        vehicle,
        origin,
        destination,
        takeoff,
        landing,
        trajectory,
        kind,
        distance_km,
        energy_kwh: vtype.leg_energy_kwh(distance_km),
        departure_s: takeoff.start_s,
        arrival_s: landing.start_s,
    })
}
