//! Interchange document shapes and the simple stage handlers.
//!
//! Element names follow the vertiport interface excerpt (`vertiport`,
//! `positionNorth`, `departureTimes`, `uID`, unit-annotated values); the
//! rest of the vocabulary extends it for the UAM pipeline.

use std::collections::BTreeMap;

use uam_bus::{Doc, Node};

use crate::config::Layout;
use crate::demand::{AccessPlan, TravelRequest, Trip};
use crate::economics::{update_price_params, PriceParams, RunLedger};
use crate::fleet::{allocate_vehicle, AllocationQuery, DeadheadPlan, FleetSnapshot, LegAllocation, LegQuery, VehicleSnapshot};
use crate::geo::{great_circle_km, GeoPoint};
use crate::ids::{FlightId, RequestId, SlotId, TripId, VehicleId, VertiportId};
use crate::mode_choice::{
    build_car_alternative, complete_uam_chain, draw_choice, logit_probabilities, LogitParams,
    Mode, TravelOffer, UamFlightOffer,
};
use crate::scenario::RejectionReason;
use crate::vertidrome::{Slot, SlotCalendar, SlotKind, SlotState};
use crate::airspace::{EdgeUse, TrajPoint, Trajectory4D, TrajectoryPath};

use super::StageContext;

// ---------------------------------------------------------------------
// Small node helpers
// ---------------------------------------------------------------------

pub fn int_node(name: &str, v: i64) -> Node {
    Node::new(name).number(v as f64)
}

pub fn num_node(name: &str, v: f64, unit: &str) -> Node {
    Node::new(name).number(v).unit(unit)
}

pub fn req_child<'a>(node: &'a Node, name: &str) -> Result<&'a Node, String> {
    node.find(name)
        .ok_or_else(|| format!("missing <{name}> under <{}>", node.name()))
}

pub fn req_num(node: &Node, name: &str) -> Result<f64, String> {
    req_child(node, name)?
        .as_number()
        .ok_or_else(|| format!("<{name}> is not a number"))
}

pub fn req_int(node: &Node, name: &str) -> Result<i64, String> {
    Ok(req_num(node, name)? as i64)
}

pub fn req_text(node: &Node, name: &str) -> Result<String, String> {
    req_child(node, name)?
        .as_text()
        .ok_or_else(|| format!("<{name}> is not text"))
}

pub fn req_numbers(node: &Node, name: &str) -> Result<Vec<f64>, String> {
    Ok(req_child(node, name)?
        .as_numbers()
        .ok_or_else(|| format!("<{name}> is not a number list"))?
        .to_vec())
}

pub fn req_uid(node: &Node) -> Result<u64, String> {
    node.get_uid()
        .ok_or_else(|| format!("<{}> lacks a uID", node.name()))?
        .parse::<u64>()
        .map_err(|e| format!("uID of <{}>: {e}", node.name()))
}

pub fn request_doc(stage: &str, seed: u64, body: Vec<Node>) -> Doc {
    request_doc_with_header(stage, seed, Vec::new(), body)
}

pub fn request_doc_with_header(
    stage: &str,
    seed: u64,
    header_extra: Vec<Node>,
    body: Vec<Node>,
) -> Doc {
    let header = Node::new("header")
        .child(Node::new("stage").text(stage))
        .child(int_node("scenarioSeed", seed as i64))
        .children_from(header_extra);
    Doc::new(Node::new("cpacs").child(header).children_from(body)).expect("stage doc is valid")
}

pub fn response_doc(responses: Vec<Node>) -> Result<Doc, String> {
    Doc::new(Node::new("responses").children_from(responses)).map_err(|e| e.to_string())
}

pub fn header_stage(doc: &Doc) -> Result<String, String> {
    let header = req_child(doc.root(), "header")?;
    req_text(header, "stage")
}

pub fn requests_of(doc: &Doc) -> Result<Vec<&Node>, String> {
    let requests = match doc.root().find("flights") {
        Some(flights) => req_child(flights, "requests")?,
        None => req_child(doc.root(), "requests")?,
    };
    Ok(requests.find_all("request").collect())
}

pub fn responses_of(doc: &Doc) -> Result<Vec<&Node>, String> {
    if doc.root().name() != "responses" {
        return Err(format!("expected <responses> root, found <{}>", doc.root().name()));
    }
    Ok(doc.root().find_all("response").collect())
}

/// Finds the response for one request id in a response doc.
pub fn response_for(doc: &Doc, request: RequestId) -> Result<Node, String> {
    for node in responses_of(doc)? {
        if req_uid(node)? == request.0 {
            return Ok(node.clone());
        }
    }
    Err(format!("no response for request {request}"))
}

fn reason_to_text(reason: RejectionReason) -> &'static str {
    match reason {
        RejectionReason::NoRoute => "no_route",
        RejectionReason::NoVehicle => "no_vehicle",
        RejectionReason::NoSlot => "no_slot",
        RejectionReason::Congested => "congested",
    }
}

fn reason_from_text(text: &str) -> Result<RejectionReason, String> {
    match text {
        "no_route" => Ok(RejectionReason::NoRoute),
        "no_vehicle" => Ok(RejectionReason::NoVehicle),
        "no_slot" => Ok(RejectionReason::NoSlot),
        "congested" => Ok(RejectionReason::Congested),
        other => Err(format!("unknown rejection reason '{other}'")),
    }
}

pub fn rejection_node(reason: RejectionReason) -> Node {
    Node::new("rejection").child(Node::new("reason").text(reason_to_text(reason)))
}

pub fn rejection_of(node: &Node) -> Result<Option<RejectionReason>, String> {
    match node.find("rejection") {
        Some(r) => Ok(Some(reason_from_text(&req_text(r, "reason")?)?)),
        None => Ok(None),
    }
}

// ---------------------------------------------------------------------
// Vertiport calendar excerpts (the vertiport interface shape)
// ---------------------------------------------------------------------

pub fn vertiport_excerpt(ctx: &StageContext, calendar: &SlotCalendar) -> Node {
    let vp = ctx
        .config
        .vertiports
        .iter()
        .find(|v| v.id == calendar.vertiport.0)
        .expect("calendar belongs to a configured vertiport");

    let mut departure_times: Vec<f64> = Vec::new();
    let mut arrival_times: Vec<f64> = Vec::new();
    let mut fatos = Vec::new();
    for fato in 0..calendar.fato_count {
        let mut takeoffs = Vec::new();
        let mut landings = Vec::new();
        for slot in calendar.committed().filter(|s| s.fato_index == fato) {
            match slot.kind {
                SlotKind::TakeOff => takeoffs.push(slot.start_s as f64),
                SlotKind::Landing => landings.push(slot.start_s as f64),
            }
        }
        takeoffs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        landings.sort_by(|a, b| a.partial_cmp(b).unwrap());
        departure_times.extend(&takeoffs);
        arrival_times.extend(&landings);
        fatos.push(
            Node::new("fato")
                .uid(fato)
                .child(Node::new("takeoffStarts").unit("s").numbers(takeoffs))
                .child(Node::new("landingStarts").unit("s").numbers(landings)),
        );
    }
    departure_times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    arrival_times.sort_by(|a, b| a.partial_cmp(b).unwrap());

    Node::new("vertiport")
        .uid(calendar.vertiport.0)
        .child(int_node("vertiportID", calendar.vertiport.0 as i64))
        .child(Node::new("name").text(&vp.name))
        .child(num_node("positionNorth", vp.lat, "deg"))
        .child(num_node("positionEast", vp.lon, "deg"))
        .child(int_node("fatoCount", calendar.fato_count as i64))
        .child(Node::new("layout").text(match calendar.layout {
            Layout::OneDirectional => "one_directional",
            Layout::BiDirectional => "bi_directional",
        }))
        .child(num_node("turnaroundTime", vp.turnaround_s as f64, "s"))
        .child(num_node("slotDuration", calendar.slot_duration_s as f64, "s"))
        .child(num_node(
            "interdependenceBuffer",
            calendar.interdependence_buffer_s as f64,
            "s",
        ))
        .child(Node::new("departureTimes").unit("s").numbers(departure_times))
        .child(Node::new("arrivalTimes").unit("s").numbers(arrival_times))
        .child(Node::new("fatos").children_from(fatos))
}

pub fn calendar_from_excerpt(node: &Node) -> Result<SlotCalendar, String> {
    let vertiport = VertiportId(req_uid(node)?);
    let layout = match req_text(node, "layout")?.as_str() {
        "one_directional" => Layout::OneDirectional,
        "bi_directional" => Layout::BiDirectional,
        other => return Err(format!("unknown layout '{other}'")),
    };
    let fato_count = req_int(node, "fatoCount")? as u32;
    let slot_duration = req_int(node, "slotDuration")?;
    let buffer = req_int(node, "interdependenceBuffer")?;
    let mut calendar = SlotCalendar::new(vertiport, layout, fato_count, slot_duration, buffer);

    let mut next_id = 0u64;
    for fato in req_child(node, "fatos")?.find_all("fato") {
        let index = req_uid(fato)? as u32;
        for (name, kind) in [
            ("takeoffStarts", SlotKind::TakeOff),
            ("landingStarts", SlotKind::Landing),
        ] {
            for start in req_numbers(fato, name)? {
                calendar.insert(Slot {
                    id: SlotId(next_id),
                    vertiport,
                    fato_index: index,
                    kind,
                    start_s: start as i64,
                    end_s: start as i64 + slot_duration,
                    state: SlotState::Committed,
                });
                next_id += 1;
            }
        }
    }
    Ok(calendar)
}

pub fn turnaround_of_excerpt(node: &Node) -> Result<(VertiportId, i64), String> {
    Ok((VertiportId(req_uid(node)?), req_int(node, "turnaroundTime")?))
}

// ---------------------------------------------------------------------
// Trajectories
// ---------------------------------------------------------------------

pub fn trajectory_node(t: &Trajectory4D) -> Node {
    path_node("trajectory", &t.path)
        .uid(t.id.0)
        .child(int_node("flightID", t.flight.0 as i64))
}

pub fn path_node(name: &str, path: &TrajectoryPath) -> Node {
    let lats: Vec<f64> = path.points.iter().map(|p| p.pos.lat_deg).collect();
    let lons: Vec<f64> = path.points.iter().map(|p| p.pos.lon_deg).collect();
    let times: Vec<f64> = path.points.iter().map(|p| p.time_s as f64).collect();
    let edge_ids: Vec<f64> = path.edges.iter().map(|e| e.edge as f64).collect();
    let entries: Vec<f64> = path.edges.iter().map(|e| e.entry_s as f64).collect();
    let exits: Vec<f64> = path.edges.iter().map(|e| e.exit_s as f64).collect();
    Node::new(name)
        .child(Node::new("latitudes").unit("deg").numbers(lats))
        .child(Node::new("longitudes").unit("deg").numbers(lons))
        .child(Node::new("passageTimes").unit("s").numbers(times))
        .child(Node::new("edgeIDs").numbers(edge_ids))
        .child(Node::new("edgeEntries").unit("s").numbers(entries))
        .child(Node::new("edgeExits").unit("s").numbers(exits))
        .child(num_node("totalDistance", path.distance_km, "km"))
}

pub fn path_from_node(node: &Node) -> Result<TrajectoryPath, String> {
    let lats = req_numbers(node, "latitudes")?;
    let lons = req_numbers(node, "longitudes")?;
    let times = req_numbers(node, "passageTimes")?;
    if lats.len() != lons.len() || lats.len() != times.len() {
        return Err("trajectory coordinate lists disagree in length".into());
    }
    let points = lats
        .iter()
        .zip(&lons)
        .zip(&times)
        .map(|((lat, lon), t)| TrajPoint {
            pos: GeoPoint::new(*lat, *lon),
            time_s: *t as i64,
        })
        .collect();
    let edge_ids = req_numbers(node, "edgeIDs")?;
    let entries = req_numbers(node, "edgeEntries")?;
    let exits = req_numbers(node, "edgeExits")?;
    if edge_ids.len() != entries.len() || edge_ids.len() != exits.len() {
        return Err("trajectory edge lists disagree in length".into());
    }
    let edges = edge_ids
        .iter()
        .zip(&entries)
        .zip(&exits)
        .map(|((e, en), ex)| EdgeUse {
            edge: *e as u32,
            entry_s: *en as i64,
            exit_s: *ex as i64,
        })
        .collect();
    Ok(TrajectoryPath {
        points,
        edges,
        distance_km: req_num(node, "totalDistance")?,
    })
}

pub fn trajectory_from_node(node: &Node) -> Result<Trajectory4D, String> {
    Ok(Trajectory4D {
        id: crate::ids::TrajectoryId(req_uid(node)?),
        flight: FlightId(req_int(node, "flightID")? as u64),
        path: path_from_node(node)?,
    })
}

// ---------------------------------------------------------------------
// Demand stage
// ---------------------------------------------------------------------

pub fn demand_request(ctx: &StageContext) -> Doc {
    request_doc(
        super::STAGE_DEMAND,
        ctx.config.scenario.seed,
        vec![Node::new("requests").child(Node::new("request").uid(0u32))],
    )
}

pub fn handle_demand(ctx: &StageContext, doc: &Doc) -> Result<Doc, String> {
    let _ = requests_of(doc)?;
    let trips = match &ctx.config.demand {
        crate::config::DemandConfig::Synthetic { .. } => crate::demand::synthesize_trips(&ctx.config),
        crate::config::DemandConfig::File { path } => {
            let file = std::fs::File::open(path)
                .map_err(|e| format!("trip dataset '{path}': {e}"))?;
            crate::demand::load_trips(file).map_err(|e| e.to_string())?
        }
    };
    let vertiports: Vec<crate::scenario::Vertiport> = ctx
        .config
        .vertiports
        .iter()
        .map(|v| crate::scenario::Vertiport {
            id: VertiportId(v.id),
            name: v.name.clone(),
            position: GeoPoint::new(v.lat, v.lon),
            fato_count: v.fato_count,
            layout: v.layout,
            turnaround_s: v.turnaround_s,
        })
        .collect();
    let plans: Vec<AccessPlan> = trips
        .iter()
        .map(|t| crate::demand::build_access_plan(t, &vertiports, ctx.config.access.ground_speed_kmh))
        .collect();
    let requests = crate::demand::emit_requests(
        &trips,
        &plans,
        ctx.config.access.lead_time_s,
        ctx.config.scenario.start_s,
    );

    let nodes: Vec<Node> = requests
        .iter()
        .map(|r| {
            Node::new("response")
                .uid(r.id.0)
                .child(num_node("originLat", r.trip.origin.lat_deg, "deg"))
                .child(num_node("originLon", r.trip.origin.lon_deg, "deg"))
                .child(num_node("destLat", r.trip.destination.lat_deg, "deg"))
                .child(num_node("destLon", r.trip.destination.lon_deg, "deg"))
                .child(num_node("journeyStart", r.trip.journey_start_s as f64, "s"))
                .child(int_node("originVertiport", r.plan.origin_vertiport.0 as i64))
                .child(int_node(
                    "destinationVertiport",
                    r.plan.destination_vertiport.0 as i64,
                ))
                .child(num_node("accessTime", r.plan.access_s as f64, "s"))
                .child(num_node("egressTime", r.plan.egress_s as f64, "s"))
                .child(num_node("accessDistance", r.plan.access_km, "km"))
                .child(num_node("egressDistance", r.plan.egress_km, "km"))
                .child(num_node(
                    "earliestVertiportArrival",
                    r.plan.earliest_vertiport_arrival_s as f64,
                    "s",
                ))
                .child(num_node("emission", r.emission_s as f64, "s"))
        })
        .collect();
    response_doc(nodes)
}

pub fn requests_from_demand_response(doc: &Doc) -> Result<Vec<TravelRequest>, String> {
    let mut out = Vec::new();
    for node in responses_of(doc)? {
        let id = req_uid(node)?;
        out.push(TravelRequest {
            id: RequestId(id),
            trip: Trip {
                id: TripId(id),
                origin: GeoPoint::new(req_num(node, "originLat")?, req_num(node, "originLon")?),
                destination: GeoPoint::new(req_num(node, "destLat")?, req_num(node, "destLon")?),
                journey_start_s: req_int(node, "journeyStart")?,
            },
            plan: AccessPlan {
                trip: TripId(id),
                origin_vertiport: VertiportId(req_int(node, "originVertiport")? as u64),
                destination_vertiport: VertiportId(
                    req_int(node, "destinationVertiport")? as u64,
                ),
                access_s: req_int(node, "accessTime")?,
                egress_s: req_int(node, "egressTime")?,
                access_km: req_num(node, "accessDistance")?,
                egress_km: req_num(node, "egressDistance")?,
                earliest_vertiport_arrival_s: req_int(node, "earliestVertiportArrival")?,
            },
            emission_s: req_int(node, "emission")?,
        });
    }
    // Canonical documents order children by uID; restore stream order.
    out.sort_by_key(|r| (r.emission_s, r.trip.id));
    Ok(out)
}

// ---------------------------------------------------------------------
// Vehicle allocation stage
// ---------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct AllocationItem {
    pub query: AllocationQuery,
}

pub fn allocation_request(
    ctx: &StageContext,
    vehicles: &[VehicleSnapshot],
    items: &[AllocationItem],
) -> Doc {
    let fleet = Node::new("fleet").children_from(vehicles.iter().map(|v| {
        Node::new("vehicle")
            .uid(v.id.0)
            .child(Node::new("vehicleType").text(&v.vtype))
            .child(num_node("ready", v.ready_s as f64, "s"))
            .child(int_node("position", v.position.0 as i64))
            .child(num_node("energy", v.energy_kwh, "kWh"))
    }));
    let requests = Node::new("requests").children_from(items.iter().map(|item| {
        Node::new("request")
            .uid(item.query.request.0)
            .child(num_node("notBefore", item.query.not_before_s as f64, "s"))
            .child(
                Node::new("items").children_from(item.query.legs.iter().enumerate().map(
                    |(i, leg)| {
                        Node::new("item")
                            .uid(i as u64)
                            .child(int_node("origin", leg.origin.0 as i64))
                            .child(int_node("destination", leg.destination.0 as i64))
                            .child(num_node(
                                "earliestDeparture",
                                leg.earliest_departure_s as f64,
                                "s",
                            ))
                            .child(int_node("estimatedPax", leg.estimated_pax as i64))
                            .child(num_node("distance", leg.distance_km, "km"))
                    },
                )),
            )
    }));
    request_doc(
        super::STAGE_ALLOCATION,
        ctx.config.scenario.seed,
        vec![fleet, requests],
    )
}

pub fn handle_allocation(ctx: &StageContext, doc: &Doc) -> Result<Doc, String> {
    let fleet_node = req_child(doc.root(), "fleet")?;
    let mut vehicles = Vec::new();
    for v in fleet_node.find_all("vehicle") {
        vehicles.push(VehicleSnapshot {
            id: VehicleId(req_uid(v)?),
            vtype: req_text(v, "vehicleType")?,
            ready_s: req_int(v, "ready")?,
            position: VertiportId(req_int(v, "position")? as u64),
            energy_kwh: req_num(v, "energy")?,
            deadhead_km: Vec::new(),
        });
    }
    let vtypes: BTreeMap<String, crate::config::VehicleTypeConfig> = ctx
        .config
        .vehicle_types
        .iter()
        .map(|t| (t.name.clone(), t.clone()))
        .collect();
    let turnarounds: BTreeMap<VertiportId, i64> = ctx
        .config
        .vertiports
        .iter()
        .map(|v| (VertiportId(v.id), v.turnaround_s))
        .collect();

    let mut responses = Vec::new();
    for request in requests_of(doc)? {
        let request_id = RequestId(req_uid(request)?);
        let not_before_s = req_int(request, "notBefore")?;
        let mut legs = Vec::new();
        for item in req_child(request, "items")?.find_all("item") {
            legs.push(LegQuery {
                origin: VertiportId(req_int(item, "origin")? as u64),
                destination: VertiportId(req_int(item, "destination")? as u64),
                earliest_departure_s: req_int(item, "earliestDeparture")?,
                estimated_pax: req_int(item, "estimatedPax")? as u32,
                distance_km: req_num(item, "distance")?,
            });
        }
        // Legs are allocated sequentially: once a leg engages a vehicle,
        // the local fleet view carries it to the leg's destination with the
        // mission's time and energy spent, so a later leg reusing it sees a
        // consistent position (and no spurious deadhead on a chained leg).
        let mut local: Vec<VehicleSnapshot> = vehicles.clone();
        let mut response = Node::new("response").uid(request_id.0);
        let mut items_out = Vec::new();
        let mut failed = false;
        for (i, leg) in legs.iter().enumerate() {
            let snapshot = FleetSnapshot {
                vehicles: local
                    .iter()
                    .map(|v| {
                        let mut v = v.clone();
                        v.deadhead_km = vec![ctx.network.distance_km(
                            (v.position, ctx.vertiport_position(v.position)),
                            (leg.origin, ctx.vertiport_position(leg.origin)),
                        )];
                        v
                    })
                    .collect(),
                vtypes: vtypes.clone(),
                turnarounds: turnarounds.clone(),
            };
            let query = AllocationQuery {
                request: request_id,
                not_before_s,
                legs: vec![leg.clone()],
            };
            match allocate_vehicle(&query, 0, &snapshot) {
                Ok(alloc) => {
                    let vtype = &vtypes[&alloc.vtype];
                    let spent = alloc
                        .deadhead
                        .as_ref()
                        .map(|d| vtype.leg_energy_kwh(d.distance_km))
                        .unwrap_or(0.0)
                        + vtype.leg_energy_kwh(leg.distance_km);
                    let arrival_est =
                        alloc.achievable_departure_s + vtype.flight_time_s(leg.distance_km);
                    let v = local
                        .iter_mut()
                        .find(|v| v.id == alloc.vehicle)
                        .expect("allocated vehicle in snapshot");
                    v.position = leg.destination;
                    v.ready_s =
                        arrival_est + turnarounds.get(&leg.destination).copied().unwrap_or(0);
                    v.energy_kwh = (v.energy_kwh - spent).max(0.0);
                    items_out.push(allocation_node(i as u64, &alloc));
                }
                Err(_) => {
                    failed = true;
                    break;
                }
            }
        }
        if failed {
            response = response.child(rejection_node(RejectionReason::NoVehicle));
        } else {
            response = response.child(Node::new("items").children_from(items_out));
        }
        responses.push(response);
    }
    response_doc(responses)
}

fn allocation_node(leg_index: u64, alloc: &LegAllocation) -> Node {
    let mut node = Node::new("item")
        .uid(leg_index)
        .child(int_node("vehicleID", alloc.vehicle.0 as i64))
        .child(Node::new("vehicleType").text(&alloc.vtype))
        .child(num_node(
            "achievableDeparture",
            alloc.achievable_departure_s as f64,
            "s",
        ));
    if let Some(dh) = &alloc.deadhead {
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

pub fn allocation_from_response(node: &Node) -> Result<Option<Vec<LegAllocation>>, String> {
    if rejection_of(node)?.is_some() {
        return Ok(None);
    }
    let mut out = Vec::new();
    for item in req_child(node, "items")?.find_all("item") {
        let deadhead = match item.find("deadhead") {
            Some(dh) => Some(DeadheadPlan {
                from: VertiportId(req_int(dh, "from")? as u64),
                distance_km: req_num(dh, "distance")?,
                earliest_departure_s: req_int(dh, "earliestDeparture")?,
            }),
            None => None,
        };
        out.push(LegAllocation {
            vehicle: VehicleId(req_int(item, "vehicleID")? as u64),
            vtype: req_text(item, "vehicleType")?,
            deadhead,
            achievable_departure_s: req_int(item, "achievableDeparture")?,
        });
    }
    Ok(Some(out))
}

// ---------------------------------------------------------------------
// Mode choice stage (serial batches: several requests per document)
// ---------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ModeChoiceItem {
    pub request: RequestId,
    pub uam_departure_s: i64,
    pub uam_arrival_s: i64,
    pub fare_eur: f64,
    pub access_s: i64,
    pub egress_s: i64,
    pub access_km: f64,
    pub egress_km: f64,
    pub earliest_vertiport_arrival_s: i64,
    pub trip_origin: GeoPoint,
    pub trip_destination: GeoPoint,
}

pub fn mode_choice_request(ctx: &StageContext, items: &[ModeChoiceItem]) -> Doc {
    let requests = Node::new("requests").children_from(items.iter().map(|i| {
        Node::new("request")
            .uid(i.request.0)
            .child(num_node("uamDeparture", i.uam_departure_s as f64, "s"))
            .child(num_node("uamArrival", i.uam_arrival_s as f64, "s"))
            .child(num_node("fare", i.fare_eur, "EUR"))
            .child(num_node("accessTime", i.access_s as f64, "s"))
            .child(num_node("egressTime", i.egress_s as f64, "s"))
            .child(num_node("accessDistance", i.access_km, "km"))
            .child(num_node("egressDistance", i.egress_km, "km"))
            .child(num_node(
                "earliestVertiportArrival",
                i.earliest_vertiport_arrival_s as f64,
                "s",
            ))
            .child(num_node("originLat", i.trip_origin.lat_deg, "deg"))
            .child(num_node("originLon", i.trip_origin.lon_deg, "deg"))
            .child(num_node("destLat", i.trip_destination.lat_deg, "deg"))
            .child(num_node("destLon", i.trip_destination.lon_deg, "deg"))
    }));
    request_doc(
        super::STAGE_MODE_CHOICE,
        ctx.config.scenario.seed,
        vec![requests],
    )
}

pub fn handle_mode_choice(ctx: &StageContext, doc: &Doc) -> Result<Doc, String> {
    let header = req_child(doc.root(), "header")?;
    let seed = req_int(header, "scenarioSeed")? as u64;
    let mc = &ctx.config.mode_choice;
    let params = LogitParams::from(mc);

    let mut responses = Vec::new();
    for request in requests_of(doc)? {
        let request_id = RequestId(req_uid(request)?);
        let plan = AccessPlan {
            trip: TripId(request_id.0),
            origin_vertiport: VertiportId(0),
            destination_vertiport: VertiportId(0),
            access_s: req_int(request, "accessTime")?,
            egress_s: req_int(request, "egressTime")?,
            access_km: req_num(request, "accessDistance")?,
            egress_km: req_num(request, "egressDistance")?,
            earliest_vertiport_arrival_s: req_int(request, "earliestVertiportArrival")?,
        };
        let offer = UamFlightOffer {
            departure_s: req_int(request, "uamDeparture")?,
            arrival_s: req_int(request, "uamArrival")?,
            fare_eur: req_num(request, "fare")?,
        };
        let uam = complete_uam_chain(&offer, &plan, mc.ground_cost_per_km)
            .map_err(|e| e.to_string())?;
        let trip = Trip {
            id: TripId(request_id.0),
            origin: GeoPoint::new(req_num(request, "originLat")?, req_num(request, "originLon")?),
            destination: GeoPoint::new(req_num(request, "destLat")?, req_num(request, "destLon")?),
            journey_start_s: 0,
        };
        let car = build_car_alternative(
            &trip,
            mc.car_speed_kmh,
            mc.car_cost_per_km,
            mc.car_detour_factor,
        );
        let offers = [uam, car];
        let probs = logit_probabilities(&offers, &params);
        let choice = draw_choice(&probs, seed, request_id);
        responses.push(
            Node::new("response")
                .uid(request_id.0)
                .child(Node::new("mode").text(match offers[choice].mode {
                    Mode::UamIntermodal => "uam",
                    Mode::Car => "car",
                }))
                .child(Node::new("probabilities").numbers(probs))
                .child(num_node("uamTotalTime", uam.total_time_s as f64, "s"))
                .child(num_node("uamTotalCost", uam.total_cost_eur, "EUR"))
                .child(num_node("carTotalTime", car.total_time_s as f64, "s"))
                .child(num_node("carTotalCost", car.total_cost_eur, "EUR")),
        );
    }
    response_doc(responses)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeChoiceResult {
    pub chose_uam: bool,
    pub probabilities: Vec<f64>,
    pub uam_offer: TravelOffer,
    pub car_offer: TravelOffer,
}

pub fn mode_choice_from_response(node: &Node) -> Result<ModeChoiceResult, String> {
    let mode = req_text(node, "mode")?;
    Ok(ModeChoiceResult {
        chose_uam: mode == "uam",
        probabilities: req_numbers(node, "probabilities")?,
        uam_offer: TravelOffer {
            mode: Mode::UamIntermodal,
            total_time_s: req_int(node, "uamTotalTime")?,
            total_cost_eur: req_num(node, "uamTotalCost")?,
        },
        car_offer: TravelOffer {
            mode: Mode::Car,
            total_time_s: req_int(node, "carTotalTime")?,
            total_cost_eur: req_num(node, "carTotalCost")?,
        },
    })
}

// ---------------------------------------------------------------------
// Economics stage (end of run)
// ---------------------------------------------------------------------

pub fn economics_request(ctx: &StageContext, ledger: &RunLedger, params: &PriceParams) -> Doc {
    let ledger_node = Node::new("ledger")
        .child(num_node("revenue", ledger.revenue_eur, "EUR"))
        .child(num_node("operatingCost", ledger.operating_cost_eur, "EUR"))
        .child(int_node("fleetSize", ledger.fleet_size as i64))
        .child(Node::new("deadheadShare").number(ledger.deadhead_share))
        .child(num_node("totalEnergy", ledger.total_energy_kwh, "kWh"))
        .child(Node::new("loadFactor").number(ledger.load_factor))
        .child(int_node("flights", ledger.flights as i64));
    let params_node = Node::new("priceParams")
        .child(num_node("baseFare", params.base_fare_eur, "EUR"))
        .child(num_node("pricePerKm", params.price_per_km_eur, "EUR/km"));
    let requests = Node::new("requests").child(
        Node::new("request")
            .uid(0u32)
            .child(ledger_node)
            .child(params_node),
    );
    request_doc(super::STAGE_ECONOMICS, ctx.config.scenario.seed, vec![requests])
}

pub fn handle_economics(ctx: &StageContext, doc: &Doc) -> Result<Doc, String> {
    let mut responses = Vec::new();
    for request in requests_of(doc)? {
        let ledger_node = req_child(request, "ledger")?;
        let ledger = RunLedger {
            revenue_eur: req_num(ledger_node, "revenue")?,
            operating_cost_eur: req_num(ledger_node, "operatingCost")?,
            fleet_size: req_int(ledger_node, "fleetSize")? as u64,
            deadhead_share: req_num(ledger_node, "deadheadShare")?,
            total_energy_kwh: req_num(ledger_node, "totalEnergy")?,
            load_factor: req_num(ledger_node, "loadFactor")?,
            flights: req_int(ledger_node, "flights")? as u64,
        };
        let params_node = req_child(request, "priceParams")?;
        let params = PriceParams {
            base_fare_eur: req_num(params_node, "baseFare")?,
            price_per_km_eur: req_num(params_node, "pricePerKm")?,
        };
        let updated = update_price_params(
            &ledger,
            &params,
            ctx.config.economics.target_margin,
            ctx.config.economics.damping,
        );
        responses.push(
            Node::new("response").uid(req_uid(request)?).child(
                Node::new("priceParams")
                    .child(num_node("baseFare", updated.base_fare_eur, "EUR"))
                    .child(num_node("pricePerKm", updated.price_per_km_eur, "EUR/km")),
            ),
        );
    }
    response_doc(responses)
}

pub fn price_params_from_response(node: &Node) -> Result<PriceParams, String> {
    let params_node = req_child(node, "priceParams")?;
    Ok(PriceParams {
        base_fare_eur: req_num(params_node, "baseFare")?,
        price_per_km_eur: req_num(params_node, "pricePerKm")?,
    })
}

/// Great-circle trip distance used by the car alternative; exposed so the
/// orchestrator and the stage agree on one definition.
pub fn trip_direct_km(origin: GeoPoint, destination: GeoPoint) -> f64 {
    great_circle_km(origin, destination)
}
