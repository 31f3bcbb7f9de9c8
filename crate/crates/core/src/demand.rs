//! Trip demand: CSV ingestion, a synthetic generator, nearest-vertiport
//! access planning, and timed request emission.

use std::io::Read;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{DemandConfig, ScenarioConfig};
use crate::geo::{great_circle_km, GeoPoint};
use crate::ids::{RequestId, TripId, VertiportId};
use crate::rng::substream;
use crate::scenario::Vertiport;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read trip dataset: {0}")]
    Io(#[from] std::io::Error),
    #[error("trip dataset row {line}: {message}")]
    Row { line: usize, message: String },
    #[error("trip dataset: {0}")]
    Format(String),
}

/// One person's trip: where and when they want to travel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trip {
    pub id: TripId,
    pub origin: GeoPoint,
    pub destination: GeoPoint,
    pub journey_start_s: i64,
}

/// First/last-mile plan for one trip: the nearest vertiports and the ground
/// times to reach them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessPlan {
    pub trip: TripId,
    pub origin_vertiport: VertiportId,
    pub destination_vertiport: VertiportId,
    pub access_s: i64,
    pub egress_s: i64,
    pub access_km: f64,
    pub egress_km: f64,
    pub earliest_vertiport_arrival_s: i64,
}

/// A trip turned into a timed flight request. Shares the trip's numeric id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TravelRequest {
    pub id: RequestId,
    pub trip: Trip,
    pub plan: AccessPlan,
    pub emission_s: i64,
}

const CSV_HEADER: [&str; 6] = [
    "trip_id",
    "origin_lat",
    "origin_lon",
    "dest_lat",
    "dest_lon",
    "start_time_s",
];

/// Loads trips from CSV (`trip_id, origin_lat, origin_lon, dest_lat,
/// dest_lon, start_time_s`; header required). Trips come back sorted by
/// journey start (ties by id). An empty dataset is a warning, not an error.
pub fn load_trips(reader: impl Read) -> Result<Vec<Trip>, IngestError> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers = csv_reader
        .headers()
        .map_err(|e| IngestError::Format(e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(IngestError::Format(format!(
            "expected header {:?}, found {:?}",
            CSV_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut trips = Vec::new();
    for (idx, record) in csv_reader.records().enumerate() {
        let line = idx + 2; // header is line 1
        let record = record.map_err(|e| IngestError::Row {
            line,
            message: e.to_string(),
        })?;
        let field = |i: usize| -> Result<f64, IngestError> {
            record
                .get(i)
                .ok_or_else(|| IngestError::Row {
                    line,
                    message: format!("missing column {}", CSV_HEADER[i]),
                })?
                .parse::<f64>()
                .map_err(|e| IngestError::Row {
                    line,
                    message: format!("column {}: {e}", CSV_HEADER[i]),
                })
        };
        let id = record
            .get(0)
            .and_then(|s| s.parse::<u64>().ok())
            .ok_or_else(|| IngestError::Row {
                line,
                message: "trip_id must be an unsigned integer".into(),
            })?;
        let origin = GeoPoint::new(field(1)?, field(2)?);
        let destination = GeoPoint::new(field(3)?, field(4)?);
        let start = field(5)? as i64;
        if !origin.is_valid() || !destination.is_valid() {
            return Err(IngestError::Row {
                line,
                message: format!(
                    "coordinates out of bounds: ({}, {}) -> ({}, {})",
                    origin.lat_deg, origin.lon_deg, destination.lat_deg, destination.lon_deg
                ),
            });
        }
        if origin == destination {
            return Err(IngestError::Row {
                line,
                message: "origin equals destination".into(),
            });
        }
        trips.push(Trip {
            id: TripId(id),
            origin,
            destination,
            journey_start_s: start,
        });
    }

    if trips.is_empty() {
        log::warn!("trip dataset is empty");
    }
    trips.sort_by_key(|t| (t.journey_start_s, t.id));
    Ok(trips)
}

/// Generates a clustered, bimodal synthetic trip set. Origins and
/// destinations are drawn around cluster centers (default: the vertiports);
/// start times from a mixture of Gaussian peaks, clamped to the scenario
/// window.
pub fn synthesize_trips(config: &ScenarioConfig) -> Vec<Trip> {
    let (count, clusters, sigma_km, peaks) = match &config.demand {
        DemandConfig::Synthetic {
            trips,
            clusters,
            cluster_sigma_km,
            peaks,
        } => (*trips, clusters.clone(), *cluster_sigma_km, peaks.clone()),
        DemandConfig::File { .. } => return Vec::new(),
    };

    let start = config.scenario.start_s;
    let end = config.scenario.end_s;
    let centers: Vec<(GeoPoint, f64)> = if clusters.is_empty() {
        config
            .vertiports
            .iter()
            .map(|v| (GeoPoint::new(v.lat, v.lon), 1.0))
            .collect()
    } else {
        clusters
            .iter()
            .map(|c| (GeoPoint::new(c.lat, c.lon), c.weight))
            .collect()
    };
    let peaks: Vec<(i64, f64, f64)> = if peaks.is_empty() {
        // Default bimodal profile: peaks at 1/4 and 3/4 of the window.
        let span = end - start;
        vec![
            (start + span / 4, span as f64 / 10.0, 1.0),
            (start + 3 * span / 4, span as f64 / 10.0, 1.0),
        ]
    } else {
        peaks.iter().map(|p| (p.time_s, p.sigma_s, p.weight)).collect()
    };

    let mut rng = substream(config.scenario.seed, "demand", 0);
    let mut trips = Vec::with_capacity(count as usize);
    for i in 0..count {
        let origin = sample_clustered(&mut rng, &centers, sigma_km);
        let mut destination = sample_clustered(&mut rng, &centers, sigma_km);
        while great_circle_km(origin, destination) < 0.5 {
            destination = sample_clustered(&mut rng, &centers, sigma_km);
        }
        let (peak_t, peak_sigma, _) = *weighted_pick(&mut rng, &peaks, |p| p.2);
        let gauss: f64 = sample_standard_normal(&mut rng);
        let t = (peak_t as f64 + gauss * peak_sigma).round() as i64;
        let journey_start_s = t.clamp(start, end - 1);
        trips.push(Trip {
            id: TripId(i as u64),
            origin,
            destination,
            journey_start_s,
        });
    }
    trips.sort_by_key(|t| (t.journey_start_s, t.id));
    trips
}

fn sample_clustered(
    rng: &mut impl Rng,
    centers: &[(GeoPoint, f64)],
    sigma_km: f64,
) -> GeoPoint {
    let (center, _) = *weighted_pick(rng, centers, |c| c.1);
    let dlat = sample_standard_normal(rng) * sigma_km / 111.32;
    let dlon = sample_standard_normal(rng) * sigma_km
        / (111.32 * center.lat_deg.to_radians().cos());
    GeoPoint::new(
        (center.lat_deg + dlat).clamp(-90.0, 90.0),
        (center.lon_deg + dlon).clamp(-180.0, 180.0),
    )
}

fn weighted_pick<'a, T>(rng: &mut impl Rng, items: &'a [T], weight: impl Fn(&T) -> f64) -> &'a T {
    let total: f64 = items.iter().map(&weight).sum();
    let mut u = rng.gen::<f64>() * total;
    for item in items {
        u -= weight(item);
        if u <= 0.0 {
            return item;
        }
    }
    &items[items.len() - 1]
}

/// Box-Muller, kept local so the generator depends on nothing but the
/// substream's uniform draws.
fn sample_standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-12);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Maps a trip to its nearest origin/destination vertiports by great-circle
/// distance (ties resolved by lower vertiport id) and derives ground access
/// and egress times at the configured speed.
pub fn build_access_plan(trip: &Trip, vertiports: &[Vertiport], ground_speed_kmh: f64) -> AccessPlan {
    let nearest = |point: GeoPoint| -> (VertiportId, f64) {
        vertiports
            .iter()
            .map(|v| (v.id, great_circle_km(point, v.position)))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)))
            .expect("at least one vertiport")
    };
    let (origin_vertiport, access_km) = nearest(trip.origin);
    let (destination_vertiport, egress_km) = nearest(trip.destination);
    let access_s = (access_km / ground_speed_kmh * 3600.0).round() as i64;
    let egress_s = (egress_km / ground_speed_kmh * 3600.0).round() as i64;
    AccessPlan {
        trip: trip.id,
        origin_vertiport,
        destination_vertiport,
        access_s,
        egress_s,
        access_km,
        egress_km,
        earliest_vertiport_arrival_s: trip.journey_start_s + access_s,
    }
}

/// Emits one request per trip, `lead_time_s` ahead of the earliest
/// vertiport arrival (clamped to the scenario start), ordered by emission
/// time then trip id.
pub fn emit_requests(
    trips: &[Trip],
    plans: &[AccessPlan],
    lead_time_s: i64,
    scenario_start_s: i64,
) -> Vec<TravelRequest> {
    assert_eq!(trips.len(), plans.len());
    let mut requests: Vec<TravelRequest> = trips
        .iter()
        .zip(plans.iter())
        .map(|(trip, plan)| TravelRequest {
            id: RequestId(trip.id.0),
            trip: trip.clone(),
            plan: plan.clone(),
            emission_s: (plan.earliest_vertiport_arrival_s - lead_time_s).max(scenario_start_s),
        })
        .collect();
    requests.sort_by_key(|r| (r.emission_s, r.trip.id));
    requests
}
