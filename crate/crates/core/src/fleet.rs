//! Vehicle allocation: picks the vehicle for each new mission considering
//! schedule, position, energy, and capacity match, and decides deadhead
//! repositioning when no vehicle is at the origin.
//!
//! Allocation is a pure function over a fleet snapshot derived from
//! committed data only (the schedule walk), never from execution artifacts,
//! so its result is independent of how far the execution clock has caught
//! up - the property the grouped-execution equivalence rests on.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::VehicleTypeConfig;
use crate::ids::{RequestId, VehicleId, VertiportId};
use crate::scenario::{Vehicle, WorldState};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AllocationError {
    #[error("no vehicle can serve the mission within schedule and energy limits")]
    NoVehicleAvailable,
    #[error("energy reservation would breach the reserve floor")]
    EnergyInfeasible,
}

/// Walks a vehicle's committed schedule: charging while parked (clamped at
/// capacity), full debit per flight at arrival. Ends at the point where the
/// vehicle becomes available for a new mission.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleWalk {
    pub ready_s: i64,
    pub position: VertiportId,
    pub energy_kwh: f64,
    checkpoint_s: i64,
    battery_capacity_kwh: f64,
    charge_rate_kwh_per_h: f64,
}

impl ScheduleWalk {
    pub fn over(world: &WorldState, vehicle: &Vehicle) -> ScheduleWalk {
        let vtype = &world.vehicle_types[&vehicle.vtype];
        let mut walk = ScheduleWalk {
            ready_s: world.start_s,
            position: vehicle.home,
            energy_kwh: vtype.battery_capacity_kwh,
            checkpoint_s: world.start_s,
            battery_capacity_kwh: vtype.battery_capacity_kwh,
            charge_rate_kwh_per_h: vtype.charge_rate_kwh_per_h,
        };
        for fid in &vehicle.schedule {
            let f = &world.flights[fid];
            let turnaround = world.vertiports[&f.destination].turnaround_s;
            walk.fly(vtype, f.departure_s, f.arrival_s, f.energy_kwh, f.destination, turnaround);
        }
        walk
    }

    /// Charge accrued while parked up to `t` (no-op for past times).
    pub fn charge_to(&mut self, t: i64) {
        if t > self.checkpoint_s {
            let dt_h = (t - self.checkpoint_s) as f64 / 3600.0;
            self.energy_kwh = (self.energy_kwh + self.charge_rate_kwh_per_h * dt_h)
                .min(self.battery_capacity_kwh);
            self.checkpoint_s = t;
        }
    }

    pub fn fly(
        &mut self,
        _vtype: &VehicleTypeConfig,
        departure_s: i64,
        arrival_s: i64,
        energy_kwh: f64,
        destination: VertiportId,
        turnaround_s: i64,
    ) {
        self.charge_to(departure_s);
        self.energy_kwh -= energy_kwh;
        self.checkpoint_s = arrival_s;
        self.position = destination;
        self.ready_s = arrival_s + turnaround_s;
    }

    /// Projected energy at a future instant, assuming the vehicle stays
    /// parked until then.
    pub fn energy_at(&self, t: i64) -> f64 {
        let mut copy = *self;
        copy.charge_to(t);
        copy.energy_kwh
    }
}

/// Boundary check for one reservation:
/// available - already-reserved - requested >= floor (inclusive).
/// Returns the remaining headroom above the floor.
pub fn reserve_energy(
    available_kwh: f64,
    reserved_kwh: f64,
    mission_kwh: f64,
    floor_kwh: f64,
) -> Result<f64, AllocationError> {
    let headroom = available_kwh - reserved_kwh - mission_kwh - floor_kwh;
    if headroom < -1e-9 {
        return Err(AllocationError::EnergyInfeasible);
    }
    Ok(headroom.max(0.0))
}

/// One leg a vehicle is being sought for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegQuery {
    pub origin: VertiportId,
    pub destination: VertiportId,
    /// Earliest passenger-side departure (vertiport arrival chain).
    pub earliest_departure_s: i64,
    pub estimated_pax: u32,
    /// Expected flown distance under the active airspace mode.
    pub distance_km: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationQuery {
    pub request: RequestId,
    /// Scheduling floor: nothing may depart before this instant (the
    /// request's emission time).
    pub not_before_s: i64,
    pub legs: Vec<LegQuery>,
}

/// Per-vehicle planning view derived from committed data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleSnapshot {
    pub id: VehicleId,
    pub vtype: String,
    pub ready_s: i64,
    pub position: VertiportId,
    /// Projected energy at `ready_s` per the schedule walk.
    pub energy_kwh: f64,
    /// Distance from `position` to each query leg's origin, in leg order.
    pub deadhead_km: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetSnapshot {
    pub vehicles: Vec<VehicleSnapshot>,
    pub vtypes: BTreeMap<String, VehicleTypeConfig>,
    pub turnarounds: BTreeMap<VertiportId, i64>,
}

/// The allocator's verdict for one leg.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegAllocation {
    pub vehicle: VehicleId,
    pub vtype: String,
    /// Set when the vehicle must reposition first.
    pub deadhead: Option<DeadheadPlan>,
    pub achievable_departure_s: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeadheadPlan {
    pub from: VertiportId,
    pub distance_km: f64,
    pub earliest_departure_s: i64,
}

/// Picks the vehicle for one leg. Candidates must be free for the window
/// and keep `energy - required >= reserve` including the deadhead energy
/// when positioned elsewhere. Scoring is lexicographic: earliest achievable
/// departure, then no-deadhead preferred, then closest capacity match, then
/// lowest vehicle id.
pub fn allocate_vehicle(
    query: &AllocationQuery,
    leg_index: usize,
    snapshot: &FleetSnapshot,
) -> Result<LegAllocation, AllocationError> {
    let leg = &query.legs[leg_index];
    let mut best: Option<((i64, u8, u32, u64), LegAllocation)> = None;

    for v in &snapshot.vehicles {
        let vtype = &snapshot.vtypes[&v.vtype];
        if vtype.max_leg_km() < leg.distance_km {
            continue;
        }
        let (deadhead, achievable, required_kwh, basis_kwh) = if v.position == leg.origin {
            let achievable = leg.earliest_departure_s.max(v.ready_s).max(query.not_before_s);
            let basis = project(v, vtype, achievable);
            (None, achievable, vtype.leg_energy_kwh(leg.distance_km), basis)
        } else {
            let dh_km = v.deadhead_km[leg_index];
            if vtype.max_leg_km() < dh_km {
                continue;
            }
            let dh_dep = v.ready_s.max(query.not_before_s);
            let dh_arr = dh_dep + vtype.flight_time_s(dh_km);
            let turnaround = snapshot.turnarounds.get(&leg.origin).copied().unwrap_or(0);
            let achievable = leg.earliest_departure_s.max(dh_arr + turnaround);
            let basis = project(v, vtype, dh_dep);
            (
                Some(DeadheadPlan {
                    from: v.position,
                    distance_km: dh_km,
                    earliest_departure_s: dh_dep,
                }),
                achievable,
                vtype.leg_energy_kwh(dh_km) + vtype.leg_energy_kwh(leg.distance_km),
                basis,
            )
        };

        if reserve_energy(basis_kwh, 0.0, required_kwh, vtype.min_reserve_kwh).is_err() {
            continue;
        }

        let capacity_gap = vtype.pax_capacity.abs_diff(leg.estimated_pax);
        let key = (
            achievable,
            u8::from(deadhead.is_some()),
            capacity_gap,
            v.id.0,
        );
        let candidate = LegAllocation {
            vehicle: v.id,
            vtype: v.vtype.clone(),
            deadhead,
            achievable_departure_s: achievable,
        };
        if best.as_ref().map_or(true, |(k, _)| key < *k) {
            best = Some((key, candidate));
        }
    }

    best.map(|(_, alloc)| alloc)
        .ok_or(AllocationError::NoVehicleAvailable)
}

fn project(v: &VehicleSnapshot, vtype: &VehicleTypeConfig, t: i64) -> f64 {
    if t <= v.ready_s {
        return v.energy_kwh;
    }
    let dt_h = (t - v.ready_s) as f64 / 3600.0;
    (v.energy_kwh + vtype.charge_rate_kwh_per_h * dt_h).min(vtype.battery_capacity_kwh)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vtype(name: &str, capacity: u32) -> VehicleTypeConfig {
        VehicleTypeConfig {
            name: name.into(),
            pax_capacity: capacity,
            cruise_speed_kmh: 120.0,
            battery_capacity_kwh: 160.0,
            cruise_energy_rate_kwh_per_km: 0.8,
            hover_energy_per_cycle_kwh: 1.0,
            min_reserve_kwh: 16.0,
            charge_rate_kwh_per_h: 80.0,
        }
    }

    fn snapshot(vehicles: Vec<VehicleSnapshot>) -> FleetSnapshot {
        let mut vtypes = BTreeMap::new();
        vtypes.insert("t3".to_string(), vtype("t3", 3));
        vtypes.insert("t6".to_string(), vtype("t6", 6));
        let mut turnarounds = BTreeMap::new();
        for vp in 0..5 {
            turnarounds.insert(VertiportId(vp), 120);
        }
        FleetSnapshot {
            vehicles,
            vtypes,
            turnarounds,
        }
    }

    fn vehicle(id: u64, vtype: &str, pos: u64, ready: i64, energy: f64) -> VehicleSnapshot {
        VehicleSnapshot {
            id: VehicleId(id),
            vtype: vtype.into(),
            ready_s: ready,
            position: VertiportId(pos),
            energy_kwh: energy,
            deadhead_km: vec![12.0],
        }
    }

    fn query(origin: u64, earliest: i64) -> AllocationQuery {
        AllocationQuery {
            request: RequestId(0),
            not_before_s: 0,
            legs: vec![LegQuery {
                origin: VertiportId(origin),
                destination: VertiportId(1),
                earliest_departure_s: earliest,
                estimated_pax: 1,
                distance_km: 20.0,
            }],
        }
    }

    #[test]
    fn idle_vehicle_at_origin_needs_no_deadhead() {
        let snap = snapshot(vec![vehicle(0, "t3", 0, 0, 160.0)]);
        let alloc = allocate_vehicle(&query(0, 1000), 0, &snap).unwrap();
        assert_eq!(alloc.vehicle, VehicleId(0));
        assert!(alloc.deadhead.is_none());
        assert_eq!(alloc.achievable_departure_s, 1000);
    }

    #[test]
    fn remote_vehicle_gets_deadhead_and_later_departure() {
        let snap = snapshot(vec![vehicle(0, "t3", 2, 500, 160.0)]);
        let alloc = allocate_vehicle(&query(0, 0), 0, &snap).unwrap();
        let dh = alloc.deadhead.expect("deadhead needed");
        assert_eq!(dh.from, VertiportId(2));
        assert_eq!(dh.earliest_departure_s, 500);
        // deadhead arrival (500 + 12km at 120 km/h = 360 s) + 120 s turnaround
        assert_eq!(alloc.achievable_departure_s, 500 + 360 + 120);
        // A later passenger dominates the repositioning time.
        let late = allocate_vehicle(&query(0, 5000), 0, &snap).unwrap();
        assert_eq!(late.achievable_departure_s, 5000);
    }

    #[test]
    fn capacity_match_breaks_departure_ties() {
        // Both at origin, both ready: for 3 estimated pax the 3-seater wins
        // even though the 6-seater has a lower id.
        let snap = snapshot(vec![
            vehicle(0, "t6", 0, 0, 160.0),
            vehicle(1, "t3", 0, 0, 160.0),
        ]);
        let mut q = query(0, 1000);
        q.legs[0].estimated_pax = 3;
        let alloc = allocate_vehicle(&q, 0, &snap).unwrap();
        assert_eq!(alloc.vehicle, VehicleId(1));

        // Oracle: re-rank all candidates under the stated lexicographic key.
        let mut keys: Vec<(i64, u8, u32, u64)> = snap
            .vehicles
            .iter()
            .map(|v| {
                let cap = snap.vtypes[&v.vtype].pax_capacity;
                (1000, 0, cap.abs_diff(3), v.id.0)
            })
            .collect();
        keys.sort();
        assert_eq!(keys[0].3, alloc.vehicle.0);
    }

    #[test]
    fn depleted_vehicle_is_skipped() {
        // 20 km leg needs 18 kWh + 16 reserve; 30 kWh on board fails.
        let snap = snapshot(vec![vehicle(0, "t3", 0, 0, 30.0)]);
        assert_eq!(
            allocate_vehicle(&query(0, 0), 0, &snap),
            Err(AllocationError::NoVehicleAvailable)
        );
        // But charging until a later departure makes it feasible.
        let alloc = allocate_vehicle(&query(0, 3600), 0, &snap).unwrap();
        assert_eq!(alloc.vehicle, VehicleId(0));
    }

    #[test]
    fn reserve_energy_arithmetic() {
        // 100 available, 20 floor, request 50 -> accepted with 30 headroom.
        assert_eq!(reserve_energy(100.0, 0.0, 50.0, 20.0), Ok(30.0));
        // Request exactly to the floor: accepted (boundary inclusive).
        assert_eq!(reserve_energy(100.0, 0.0, 80.0, 20.0), Ok(0.0));
        // A second reservation exceeding headroom fails.
        assert_eq!(
            reserve_energy(100.0, 50.0, 40.0, 20.0),
            Err(AllocationError::EnergyInfeasible)
        );
    }

    #[test]
    fn allocation_is_deterministic() {
        let snap = snapshot(vec![
            vehicle(0, "t3", 0, 0, 160.0),
            vehicle(1, "t3", 0, 0, 160.0),
        ]);
        let a = allocate_vehicle(&query(0, 100), 0, &snap).unwrap();
        let b = allocate_vehicle(&query(0, 100), 0, &snap).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.vehicle, VehicleId(0)); // lowest id wins the tie
    }
}
