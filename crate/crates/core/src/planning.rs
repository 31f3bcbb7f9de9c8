//! Mission planning: decomposes a request into candidate leg sequences,
//! pools passengers onto existing scheduled flights where seats allow, and
//! selects the itinerary to pursue.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::airspace::RouteNetwork;
use crate::ids::{FlightId, VertiportId};
use crate::scenario::{FlightKind, FlightStatus, WorldState};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlanningError {
    #[error("no feasible route decomposition for the request")]
    NoRouteAvailable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LegAssignment {
    PoolOnto(FlightId),
    NewMission,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateLeg {
    pub origin: VertiportId,
    pub destination: VertiportId,
    pub assignment: LegAssignment,
    pub distance_km: f64,
}

/// One way to serve the request, with pre-routing estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionCandidate {
    pub legs: Vec<CandidateLeg>,
    pub estimated_departure_s: i64,
    pub estimated_arrival_s: i64,
    pub estimated_fare_eur: f64,
}

impl MissionCandidate {
    fn leg_id_key(&self) -> Vec<(u64, u64)> {
        self.legs
            .iter()
            .map(|l| (l.origin.0, l.destination.0))
            .collect()
    }
}

/// Leg sequences serving origin -> destination: the direct leg first when
/// any vehicle type can fly it, then multi-leg chains (up to `max_legs`)
/// through intermediate vertiports, each leg within some type's range.
/// Ordered by total distance ascending.
pub fn enumerate_decompositions(
    origin: VertiportId,
    destination: VertiportId,
    network: &RouteNetwork,
    vertiport_positions: &[(VertiportId, crate::geo::GeoPoint)],
    max_leg_range_km: f64,
    max_legs: u32,
) -> Result<Vec<Vec<(VertiportId, VertiportId)>>, PlanningError> {
    if origin == destination {
        return Err(PlanningError::NoRouteAvailable);
    }
    let pos = |vp: VertiportId| {
        vertiport_positions
            .iter()
            .find(|(id, _)| *id == vp)
            .map(|(_, p)| *p)
            .expect("vertiport known")
    };
    let leg_km = |a: VertiportId, b: VertiportId| network.distance_km((a, pos(a)), (b, pos(b)));

    let mut sequences: Vec<(f64, Vec<(VertiportId, VertiportId)>)> = Vec::new();

    let direct_km = leg_km(origin, destination);
    if direct_km <= max_leg_range_km {
        sequences.push((direct_km, vec![(origin, destination)]));
    }

    if max_legs >= 2 {
        for (via, _) in vertiport_positions {
            if *via == origin || *via == destination {
                continue;
            }
            let first = leg_km(origin, *via);
            let second = leg_km(*via, destination);
            if first <= max_leg_range_km && second <= max_leg_range_km {
                sequences.push((first + second, vec![(origin, *via), (*via, destination)]));
            }
        }
    }

    if sequences.is_empty() {
        return Err(PlanningError::NoRouteAvailable);
    }
    sequences.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then_with(|| leg_key(&a.1).cmp(&leg_key(&b.1)))
    });
    Ok(sequences.into_iter().map(|(_, legs)| legs).collect())
}

fn leg_key(legs: &[(VertiportId, VertiportId)]) -> Vec<(u64, u64)> {
    legs.iter().map(|(a, b)| (a.0, b.0)).collect()
}

/// The earliest-departing scheduled revenue flight matching the leg with a
/// free seat, departing within `[earliest, earliest + window]`.
pub fn try_pool(
    origin: VertiportId,
    destination: VertiportId,
    earliest_s: i64,
    window_s: i64,
    world: &WorldState,
) -> Option<FlightId> {
    let mut best: Option<(i64, FlightId)> = None;
    for f in world.flights.values() {
        if f.kind != FlightKind::Revenue
            || f.status != FlightStatus::Scheduled
            || f.origin != origin
            || f.destination != destination
        {
            continue;
        }
        if f.departure_s < earliest_s || f.departure_s > earliest_s + window_s {
            continue;
        }
        if (f.manifest.len() as u32) >= world.pax_capacity_of_flight(f) {
            continue;
        }
        let key = (f.departure_s, f.id);
        if best.map_or(true, |b| key < b) {
            best = Some(key);
        }
    }
    best.map(|(_, id)| id)
}

/// Deterministic itinerary selection: minimal estimated arrival, then fewer
/// legs, then lower fare, then the lexicographically smallest leg sequence.
pub fn select_itinerary(candidates: &[MissionCandidate]) -> Result<usize, PlanningError> {
    if candidates.is_empty() {
        return Err(PlanningError::NoRouteAvailable);
    }
    let mut indices: Vec<usize> = (0..candidates.len()).collect();
    indices.sort_by(|&a, &b| selection_key(&candidates[a]).partial_cmp(&selection_key(&candidates[b])).unwrap());
    Ok(indices[0])
}

fn selection_key(c: &MissionCandidate) -> (i64, usize, f64, Vec<(u64, u64)>) {
    (
        c.estimated_arrival_s,
        c.legs.len(),
        c.estimated_fare_eur,
        c.leg_id_key(),
    )
}
