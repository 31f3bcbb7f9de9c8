//! Post-processing of run artifacts into analysis views. Every view is
//! computed from the event log alone, so reports can be regenerated from a
//! log file without the in-memory state.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::scenario::{FlightKind, MetricsFrame, RejectionReason, WorldEvent};

/// Cumulative requests and UAM acceptances sampled at `cadence_s`
/// (the mode-share-over-time view).
pub fn mode_share_series(events: &[WorldEvent], cadence_s: i64) -> Vec<MetricsFrame> {
    frames_from_log(events, cadence_s)
}

/// Full metrics frames at a fixed cadence, derived purely from the log.
/// The final frame matches `snapshot_metrics` of the final state.
pub fn frames_from_log(events: &[WorldEvent], cadence_s: i64) -> Vec<MetricsFrame> {
    assert!(cadence_s > 0, "cadence must be positive");
    let (start, end) = match events.first() {
        Some(WorldEvent::Init { config, .. }) => {
            (config.scenario.start_s, config.scenario.end_s)
        }
        _ => return Vec::new(),
    };
    let final_clock = events.last().map(|e| e.at()).unwrap_or(end).max(end);

    let mut sample_points: Vec<i64> = Vec::new();
    let mut t = start;
    while t < final_clock {
        sample_points.push(t);
        t += cadence_s;
    }
    sample_points.push(final_clock);

    // Sweep events and sample points in one ordered pass. Events at time t
    // count into the frame at t (frames close after processing the instant).
    let mut frames = Vec::with_capacity(sample_points.len());
    let mut requests = 0u64;
    let mut passengers = 0u64;
    let mut flights = 0u64;
    let mut deadheads = 0u64;
    let mut airborne: BTreeMap<u64, i64> = BTreeMap::new(); // flight -> arrival
    let mut departures: Vec<(i64, i64)> = Vec::new(); // (dep, arr) pairs
    let mut flight_times: BTreeMap<u64, (i64, i64)> = BTreeMap::new();

    for ev in events {
        match ev {
            WorldEvent::FlightScheduled { flight, .. } => {
                flight_times.insert(flight.id.0, (flight.departure_s, flight.arrival_s));
            }
            WorldEvent::FlightDeparted { flight, .. } => {
                if let Some((dep, arr)) = flight_times.get(&flight.0) {
                    departures.push((*dep, *arr));
                    airborne.insert(flight.0, *arr);
                }
            }
            _ => {}
        }
    }

    let mut event_idx = 0usize;
    for sample in sample_points {
        while event_idx < events.len() && events[event_idx].at() <= sample {
            match &events[event_idx] {
                WorldEvent::RequestSubmitted { .. } => requests += 1,
                WorldEvent::ItineraryCommitted { .. } => passengers += 1,
                WorldEvent::FlightScheduled { flight, .. } => {
                    flights += 1;
                    if flight.kind == FlightKind::Deadhead {
                        deadheads += 1;
                    }
                }
                _ => {}
            }
            event_idx += 1;
        }
        let flights_airborne = departures
            .iter()
            .filter(|(dep, arr)| *dep <= sample && sample < *arr)
            .count() as u64;
        frames.push(MetricsFrame {
            timestamp_s: sample,
            cumulative_requests: requests,
            cumulative_uam_passengers: passengers,
            flights_airborne,
            cumulative_flights: flights,
            cumulative_deadheads: deadheads,
            mode_share: passengers as f64 / requests.max(1) as f64,
        });
    }
    frames
}

/// Count of flights with departure <= t < arrival per sample instant.
pub fn occupancy_series(events: &[WorldEvent], step_s: i64) -> Vec<(i64, u64)> {
    assert!(step_s > 0, "step must be positive");
    let mut intervals: Vec<(i64, i64)> = Vec::new();
    let mut start = i64::MAX;
    let mut end = i64::MIN;
    for ev in events {
        if let WorldEvent::Init { config, .. } = ev {
            start = config.scenario.start_s;
            end = config.scenario.end_s;
        }
        if let WorldEvent::FlightScheduled { flight, .. } = ev {
            intervals.push((flight.departure_s, flight.arrival_s));
        }
    }
    if start == i64::MAX {
        return Vec::new();
    }
    let last = intervals.iter().map(|(_, a)| *a).max().unwrap_or(end).max(end);
    let mut series = Vec::new();
    let mut t = start;
    while t <= last {
        let count = intervals.iter().filter(|(d, a)| *d <= t && t < *a).count() as u64;
        series.push((t, count));
        t += step_s;
    }
    series
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RangeFilter {
    Revenue,
    Deadhead,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RangeHistogram {
    pub bin_edges_km: Vec<f64>,
    pub counts: Vec<u64>,
}

impl RangeHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Missions binned by distance flown, with contiguous `bin_width_km` bins
/// from zero to the longest mission.
pub fn range_histogram(events: &[WorldEvent], bin_width_km: f64, filter: RangeFilter) -> RangeHistogram {
    assert!(bin_width_km > 0.0, "bin width must be positive");
    let distances: Vec<f64> = events
        .iter()
        .filter_map(|ev| match ev {
            WorldEvent::FlightScheduled { flight, .. } => {
                let keep = match filter {
                    RangeFilter::All => true,
                    RangeFilter::Revenue => flight.kind == FlightKind::Revenue,
                    RangeFilter::Deadhead => flight.kind == FlightKind::Deadhead,
                };
                keep.then_some(flight.distance_km)
            }
            _ => None,
        })
        .collect();

    if distances.is_empty() {
        return RangeHistogram {
            bin_edges_km: vec![0.0],
            counts: Vec::new(),
        };
    }
    let max = distances.iter().cloned().fold(0.0, f64::max);
    let bins = ((max / bin_width_km).floor() as usize) + 1;
    let mut counts = vec![0u64; bins];
    for d in &distances {
        let idx = ((d / bin_width_km).floor() as usize).min(bins - 1);
        counts[idx] += 1;
    }
    RangeHistogram {
        bin_edges_km: (0..=bins).map(|i| i as f64 * bin_width_km).collect(),
        counts,
    }
}

/// Terminal status tallies per rejection reason.
pub fn rejection_counts(events: &[WorldEvent]) -> BTreeMap<RejectionReason, u64> {
    let mut counts = BTreeMap::new();
    for ev in events {
        if let WorldEvent::RequestRejected { reason, .. } = ev {
            *counts.entry(*reason).or_insert(0) += 1;
        }
    }
    counts
}

// ---------------------------------------------------------------------
// CSV emission (RFC 4180 via the csv writer)
// ---------------------------------------------------------------------

pub fn metrics_csv(frames: &[MetricsFrame]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "timestamp_s",
        "cumulative_requests",
        "cumulative_uam_passengers",
        "flights_airborne",
        "cumulative_flights",
        "cumulative_deadheads",
        "mode_share",
    ])
    .expect("csv header");
    for f in frames {
        w.write_record([
            f.timestamp_s.to_string(),
            f.cumulative_requests.to_string(),
            f.cumulative_uam_passengers.to_string(),
            f.flights_airborne.to_string(),
            f.cumulative_flights.to_string(),
            f.cumulative_deadheads.to_string(),
            format!("{}", f.mode_share),
        ])
        .expect("csv row");
    }
    String::from_utf8(w.into_inner().expect("csv flush")).expect("csv utf8")
}

pub fn occupancy_csv(series: &[(i64, u64)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["timestamp_s", "flights_airborne"]).expect("csv header");
    for (t, n) in series {
        w.write_record([t.to_string(), n.to_string()]).expect("csv row");
    }
    String::from_utf8(w.into_inner().expect("csv flush")).expect("csv utf8")
}

pub fn histogram_csv(histogram: &RangeHistogram) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["bin_start_km", "bin_end_km", "missions"]).expect("csv header");
    for (i, count) in histogram.counts.iter().enumerate() {
        w.write_record([
            format!("{}", histogram.bin_edges_km[i]),
            format!("{}", histogram.bin_edges_km[i + 1]),
            count.to_string(),
        ])
        .expect("csv row");
    }
    String::from_utf8(w.into_inner().expect("csv flush")).expect("csv utf8")
}

pub fn ledger_csv(ledger: &crate::economics::RunLedger) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "revenue_eur",
        "operating_cost_eur",
        "fleet_size",
        "deadhead_share",
        "total_energy_kwh",
        "load_factor",
        "flights",
    ])
    .expect("csv header");
    w.write_record([
        format!("{}", ledger.revenue_eur),
        format!("{}", ledger.operating_cost_eur),
        ledger.fleet_size.to_string(),
        format!("{}", ledger.deadhead_share),
        format!("{}", ledger.total_energy_kwh),
        format!("{}", ledger.load_factor),
        ledger.flights.to_string(),
    ])
    .expect("csv row");
    String::from_utf8(w.into_inner().expect("csv flush")).expect("csv utf8")
}
