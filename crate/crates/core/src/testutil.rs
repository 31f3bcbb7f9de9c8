//! Scenario builders shared by the unit and integration test suites.

use crate::airspace::{TrajPoint, TrajectoryPath};
use crate::config::{
    DemandConfig, FleetConfig, Layout, ScenarioConfig, ScenarioInfo, VehicleTypeConfig,
    VertiportConfig,
};
use crate::demand::{AccessPlan, TravelRequest, Trip};
use crate::ids::{RequestId, TripId, VehicleId, VertiportId};
use crate::scenario::{BookingPlan, FlightKind, LegPlan, MissionPlan, WorldState};
use crate::vertidrome::{SlotKind, SlotOffer};

// Kilometres per degree of latitude at the WGS84 mean radius.
pub const KM_PER_DEG_LAT: f64 = 111.194_926_644_558_73;

/// The stock three-seat tiltrotor used across tests.
pub fn tiltrotor3() -> VehicleTypeConfig {
    VehicleTypeConfig {
        name: "tiltrotor-3".into(),
        pax_capacity: 3,
        cruise_speed_kmh: 120.0,
        battery_capacity_kwh: 160.0,
        cruise_energy_rate_kwh_per_km: 0.8,
        hover_energy_per_cycle_kwh: 1.0,
        min_reserve_kwh: 16.0,
        charge_rate_kwh_per_h: 80.0,
    }
}

/// `n` vertiports on a ring around Hamburg, `m` vehicles homed round-robin,
/// synthetic demand disabled (zero trips) unless the test overrides it.
pub fn small_config(n_vertiports: u32, n_vehicles: u32) -> ScenarioConfig {
    let vertiports: Vec<VertiportConfig> = (0..n_vertiports)
        .map(|i| {
            let angle = i as f64 / n_vertiports as f64 * std::f64::consts::TAU;
            VertiportConfig {
                id: i as u64,
                name: format!("VP-{i:02}"),
                lat: 53.55 + 0.12 * angle.sin(),
                lon: 9.99 + 0.20 * angle.cos(),
                fato_count: 1,
                layout: Layout::OneDirectional,
                turnaround_s: 120,
            }
        })
        .collect();

    ScenarioConfig {
        scenario: ScenarioInfo {
            name: "test-ring".into(),
            start_s: 0,
            end_s: 14_400,
            seed: 42,
            metrics_cadence_s: 600,
        },
        vertiports,
        vehicle_types: vec![tiltrotor3()],
        fleet: vec![FleetConfig {
            vtype: "tiltrotor-3".into(),
            count: n_vehicles,
            homes: vec![],
        }],
        demand: DemandConfig::Synthetic {
            trips: 0,
            clusters: vec![],
            cluster_sigma_km: 2.0,
            peaks: vec![],
        },
        access: Default::default(),
        mode_choice: Default::default(),
        planner: Default::default(),
        vertidrome: Default::default(),
        airspace: Default::default(),
        pricing: Default::default(),
        economics: Default::default(),
    }
}

/// Like [`small_config`] but with `trips` synthetic requests.
pub fn demand_config(n_vertiports: u32, n_vehicles: u32, trips: u32) -> ScenarioConfig {
    let mut cfg = small_config(n_vertiports, n_vehicles);
    cfg.demand = DemandConfig::Synthetic {
        trips,
        clusters: vec![],
        cluster_sigma_km: 2.0,
        peaks: vec![],
    };
    cfg
}

/// The demonstration-scale scenario: 20 vertiports over the metro area,
/// 30 three-seat vehicles, 2 EUR/km, slot-based airspace, and a 4-hour
/// synthetic demand window of ~1200 requests with a bimodal profile.
pub fn paper_shape_config(seed: u64) -> ScenarioConfig {
    let center = (53.5511, 9.9937);
    let ring = |count: u32, radius_km: f64, offset: f64, first_id: u64| {
        (0..count)
            .map(move |i| {
                let angle = offset + i as f64 / count as f64 * std::f64::consts::TAU;
                let lat = center.0 + radius_km / 111.19 * angle.sin();
                let lon =
                    center.1 + radius_km / (111.19 * center.0.to_radians().cos()) * angle.cos();
                VertiportConfig {
                    id: first_id + i as u64,
                    name: format!("HAM-{:02}", first_id + i as u64),
                    lat,
                    lon,
                    fato_count: 1,
                    layout: Layout::OneDirectional,
                    turnaround_s: 120,
                }
            })
            .collect::<Vec<_>>()
    };
    let mut vertiports = vec![VertiportConfig {
        id: 0,
        name: "HAM-00".into(),
        lat: center.0,
        lon: center.1,
        fato_count: 1,
        layout: Layout::OneDirectional,
        turnaround_s: 120,
    }];
    vertiports.extend(ring(7, 6.0, 0.3, 1));
    vertiports.extend(ring(12, 14.0, 0.0, 8));

    ScenarioConfig {
        scenario: ScenarioInfo {
            name: "metro-demo".into(),
            start_s: 0,
            end_s: 14_400,
            seed,
            metrics_cadence_s: 300,
        },
        vertiports,
        vehicle_types: vec![tiltrotor3()],
        fleet: vec![FleetConfig {
            vtype: "tiltrotor-3".into(),
            count: 30,
            homes: vec![],
        }],
        demand: DemandConfig::Synthetic {
            trips: 1200,
            clusters: vec![],
            cluster_sigma_km: 2.5,
            peaks: vec![],
        },
        access: Default::default(),
        mode_choice: Default::default(),
        planner: Default::default(),
        vertidrome: Default::default(),
        airspace: Default::default(),
        pricing: Default::default(),
        economics: Default::default(),
    }
}

/// A request between two vertiports with zero ground legs, arriving at the
/// origin vertiport at `emission` (no lead time).
pub fn direct_request(world: &WorldState, id: u64, origin: u64, dest: u64, emission: i64) -> TravelRequest {
    let o = world.vertiports[&VertiportId(origin)].position;
    let d = world.vertiports[&VertiportId(dest)].position;
    TravelRequest {
        id: RequestId(id),
        trip: Trip {
            id: TripId(id),
            origin: o,
            destination: d,
            journey_start_s: emission,
        },
        plan: AccessPlan {
            trip: TripId(id),
            origin_vertiport: VertiportId(origin),
            destination_vertiport: VertiportId(dest),
            access_s: 0,
            egress_s: 0,
            access_km: 0.0,
            egress_km: 0.0,
            earliest_vertiport_arrival_s: emission,
        },
        emission_s: emission,
    }
}

/// A direct free-route revenue mission with slot times on the 90 s grid.
pub fn direct_mission(world: &WorldState, vehicle: u64, origin: u64, dest: u64, dep: i64) -> MissionPlan {
    let o = VertiportId(origin);
    let d = VertiportId(dest);
    let o_pos = world.vertiports[&o].position;
    let d_pos = world.vertiports[&d].position;
    let distance = crate::geo::great_circle_km(o_pos, d_pos);
    let vtype = &world.vehicle_types[&world.vehicles[&VehicleId(vehicle)].vtype];
    let flight_s = vtype.flight_time_s(distance);
    let raw = dep + flight_s;
    let arr = if raw % 90 == 0 { raw } else { raw + 90 - raw % 90 };
    MissionPlan {
        vehicle: VehicleId(vehicle),
        origin: o,
        destination: d,
        takeoff: SlotOffer {
            vertiport: o,
            fato_index: 0,
            kind: SlotKind::TakeOff,
            start_s: dep,
            end_s: dep + 90,
        },
        landing: SlotOffer {
            vertiport: d,
            fato_index: 0,
            kind: SlotKind::Landing,
            start_s: arr,
            end_s: arr + 90,
        },
        trajectory: TrajectoryPath {
            points: vec![
                TrajPoint { pos: o_pos, time_s: dep },
                TrajPoint { pos: d_pos, time_s: dep + flight_s },
            ],
            edges: Vec::new(),
            distance_km: distance,
        },
        kind: FlightKind::Revenue,
        distance_km: distance,
        energy_kwh: vtype.leg_energy_kwh(distance),
        departure_s: dep,
        arrival_s: arr,
    }
}

/// A single-leg booking for `direct_mission` output at 2 EUR/km.
pub fn direct_booking(world: &WorldState, request: u64, mission: MissionPlan) -> BookingPlan {
    BookingPlan {
        version_token: world.version,
        request: RequestId(request),
        legs: vec![LegPlan::New {
            deadhead: None,
            mission: mission.clone(),
        }],
        fare_eur: 2.0 * mission.distance_km,
        departure_s: mission.departure_s,
        arrival_s: mission.arrival_s,
    }
}
