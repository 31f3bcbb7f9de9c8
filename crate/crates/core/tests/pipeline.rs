//! End-to-end orchestrator behaviour on small scenarios.

use uam_core::config::DemandConfig;
use uam_core::ids::RequestId;
use uam_core::orchestrator::{batch_requests, run_day, RunOptions};
use uam_core::scenario::{FlightKind, RequestStatus};
use uam_core::testutil::{demand_config, small_config};

#[test]
fn empty_demand_produces_empty_run() {
    let cfg = small_config(3, 2);
    let report = run_day(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(report.world.counters.requests, 0);
    assert_eq!(report.world.counters.flights, 0);
    assert_eq!(report.ledger.revenue_eur, 0.0);
    assert!(report.ledger.operating_cost_eur > 0.0); // fixed fleet cost
}

#[test]
fn single_request_happy_path_flies_the_passenger() {
    let mut cfg = small_config(4, 2);
    // A single synthetic trip; force acceptance so the flight happens.
    cfg.demand = DemandConfig::Synthetic {
        trips: 1,
        clusters: vec![],
        cluster_sigma_km: 2.0,
        peaks: vec![],
    };
    cfg.mode_choice.asc_uam = 50.0; // acceptance certain
    let report = run_day(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(report.world.counters.requests, 1);
    assert_eq!(report.world.counters.uam_passengers, 1);
    let revenue = report.world.counters.flights - report.world.counters.deadhead_flights;
    assert_eq!(revenue, 1);
    let status = &report.world.requests[&RequestId(0)].status;
    assert!(
        matches!(status, RequestStatus::BookedUam { .. }),
        "{status:?}"
    );
    // Everything committed was executed by end of run.
    for f in report.world.flights.values() {
        assert_eq!(f.status, uam_core::scenario::FlightStatus::Arrived);
    }
}

#[test]
fn every_request_reaches_a_terminal_status() {
    let mut cfg = demand_config(5, 3, 60);
    cfg.mode_choice.asc_uam = 2.0; // healthy acceptance mix
    let report = run_day(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(report.world.counters.requests, 60);
    let mut flown = 0u64;
    let mut ground = 0u64;
    let mut rejected = 0u64;
    for record in report.world.requests.values() {
        match record.status {
            RequestStatus::BookedUam { .. } => flown += 1,
            RequestStatus::ChoseGround => ground += 1,
            RequestStatus::Rejected { .. } => rejected += 1,
            RequestStatus::Open => panic!("request left open"),
        }
    }
    assert_eq!(flown + ground + rejected, 60);
    assert_eq!(flown, report.world.counters.uam_passengers);
    let audit = report.world.audit(&cfg.airspace);
    assert!(audit.is_empty(), "audit violations: {audit:?}");
}

#[test]
fn pooling_reduces_flights_without_losing_passengers() {
    // Certain acceptance makes the paired-run comparison exact: the same
    // passengers fly in both runs, pooling only packs them differently.
    // A tight demand peak bunches same-pair arrivals into shared windows;
    // generous FATO and fleet capacity keeps both runs rejection-free so
    // the comparison is not confounded by contention.
    let mut cfg = demand_config(3, 12, 40);
    cfg.demand = DemandConfig::Synthetic {
        trips: 40,
        clusters: vec![],
        cluster_sigma_km: 1.0,
        peaks: vec![uam_core::config::PeakConfig {
            time_s: 7200,
            sigma_s: 180.0,
            weight: 1.0,
        }],
    };
    for vp in &mut cfg.vertiports {
        vp.fato_count = 6;
    }
    cfg.mode_choice.asc_uam = 50.0;
    cfg.planner.pooling_window_s = 1800;

    let pooled = run_day(&cfg, &RunOptions::default()).unwrap();
    let mut cfg_off = cfg.clone();
    cfg_off.planner.pooling_enabled = false;
    let unpooled = run_day(&cfg_off, &RunOptions::default()).unwrap();

    // Same-vertiport trips reject as NoRoute identically in both runs; no
    // contention-driven rejections may differ between them.
    assert_eq!(pooled.rejections, unpooled.rejections);

    let pooled_served: u64 = pooled
        .world
        .flights
        .values()
        .map(|f| f.manifest.len() as u64)
        .sum();
    let unpooled_served: u64 = unpooled
        .world
        .flights
        .values()
        .map(|f| f.manifest.len() as u64)
        .sum();
    assert!(pooled_served > 0);
    assert_eq!(pooled.world.counters.uam_passengers, pooled_served);
    assert_eq!(
        pooled.world.counters.uam_passengers,
        unpooled.world.counters.uam_passengers,
        "price-insensitive passengers must fly in both runs"
    );
    let pooled_revenue = pooled.world.counters.flights - pooled.world.counters.deadhead_flights;
    let unpooled_revenue =
        unpooled.world.counters.flights - unpooled.world.counters.deadhead_flights;
    assert!(
        pooled_revenue <= unpooled_revenue,
        "pooling must not add flights: {pooled_revenue} vs {unpooled_revenue}"
    );
    // At least one flight actually pooled.
    assert!(
        pooled
            .world
            .flights
            .values()
            .any(|f| f.manifest.len() > 1),
        "expected at least one pooled flight"
    );
    assert_eq!(unpooled_served, unpooled.world.counters.uam_passengers);
}

#[test]
fn deadheads_reposition_when_fleet_is_elsewhere() {
    // All vehicles homed at vertiport 0; demand from other vertiports
    // forces repositioning flights.
    let mut cfg = demand_config(4, 3, 25);
    cfg.fleet[0].homes = vec![0];
    cfg.mode_choice.asc_uam = 50.0;
    let report = run_day(&cfg, &RunOptions::default()).unwrap();
    assert!(
        report.world.counters.deadhead_flights > 0,
        "expected deadheads with a clustered fleet"
    );
    for f in report.world.flights.values() {
        if f.kind == FlightKind::Deadhead {
            assert!(f.manifest.is_empty());
        }
    }
    let audit = report.world.audit(&cfg.airspace);
    assert!(audit.is_empty(), "audit violations: {audit:?}");
}

#[test]
fn batch_window_arithmetic() {
    let mk = |id: u64, t: i64| {
        let cfg = small_config(3, 1);
        let mut c = cfg;
        c.demand = DemandConfig::Synthetic {
            trips: 0,
            clusters: vec![],
            cluster_sigma_km: 2.0,
            peaks: vec![],
        };
        let world = uam_core::WorldState::init_scenario(&c).unwrap();
        let origin = world.vertiports.values().next().unwrap().position;
        let destination = world.vertiports.values().nth(1).unwrap().position;
        uam_core::demand::TravelRequest {
            id: RequestId(id),
            trip: uam_core::demand::Trip {
                id: uam_core::ids::TripId(id),
                origin,
                destination,
                journey_start_s: t,
            },
            plan: uam_core::demand::AccessPlan {
                trip: uam_core::ids::TripId(id),
                origin_vertiport: uam_core::ids::VertiportId(0),
                destination_vertiport: uam_core::ids::VertiportId(1),
                access_s: 0,
                egress_s: 0,
                access_km: 0.0,
                egress_km: 0.0,
                earliest_vertiport_arrival_s: t + 1800,
            },
            emission_s: t,
        }
    };
    // Requests at 10, 70, 80 s with a 60 s interval -> windows {10}, {70, 80}.
    let stream = vec![mk(0, 10), mk(1, 70), mk(2, 80)];
    let batches = batch_requests(&stream, 60);
    assert_eq!(batches.len(), 2);
    assert_eq!(batches[0].requests.len(), 1);
    assert_eq!(batches[1].requests.len(), 2);
    assert_eq!(batches[0].window_start_s, 0);
    assert_eq!(batches[1].window_start_s, 60);

    // Interval 0: one request per batch.
    let batches = batch_requests(&stream, 0);
    assert_eq!(batches.len(), 3);

    // One wide window: a single batch.
    let batches = batch_requests(&stream, 3600);
    assert_eq!(batches.len(), 1);
    assert_eq!(batches[0].requests.len(), 3);
}

#[test]
fn rejections_carry_reason_codes() {
    // Demand clustered on a single vertiport: origin == destination
    // vertiport trips are emitted but rejected as unroutable.
    let mut cfg = small_config(2, 1);
    cfg.demand = DemandConfig::Synthetic {
        trips: 10,
        clusters: vec![uam_core::config::ClusterConfig {
            lat: cfg.vertiports[0].lat,
            lon: cfg.vertiports[0].lon,
            weight: 1.0,
        }],
        cluster_sigma_km: 0.5,
        peaks: vec![],
    };
    let report = run_day(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(report.world.counters.requests, 10);
    let rejected: u64 = report.rejections.values().sum();
    assert!(rejected > 0, "clustered demand must hit the no-route path");
}

#[test]
fn file_demand_is_ingested_with_access_plans() {
    use std::io::Write;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trips.csv");
    let mut f = std::fs::File::create(&path).unwrap();
    writeln!(f, "trip_id,origin_lat,origin_lon,dest_lat,dest_lon,start_time_s").unwrap();
    // Around two ring vertiports of the 4-ring test layout.
    writeln!(f, "0,53.56,10.18,53.66,9.98,3600").unwrap();
    writeln!(f, "1,53.67,10.00,53.54,9.80,5400").unwrap();
    drop(f);

    let mut cfg = small_config(4, 2);
    cfg.demand = DemandConfig::File {
        path: path.to_string_lossy().into_owned(),
    };
    cfg.mode_choice.asc_uam = 50.0;
    let report = run_day(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(report.world.counters.requests, 2);
    assert_eq!(report.world.counters.uam_passengers, 2);
}

#[test]
fn fan_out_instance_counts_do_not_change_results() {
    // 8-instance fan-out vs a single instance: identical event logs.
    let mut cfg = demand_config(5, 4, 60);
    cfg.mode_choice.asc_uam = 2.0;
    let mut options_one = RunOptions::default();
    for stage in [
        uam_core::stages::STAGE_ROUTING,
        uam_core::stages::STAGE_ALLOCATION,
    ] {
        options_one.pipeline.stages.get_mut(stage).unwrap().instances = 1;
    }
    let eight = run_day(&cfg, &RunOptions::default()).unwrap();
    let one = run_day(&cfg, &options_one).unwrap();
    assert_eq!(
        uam_core::scenario::event::to_jsonl(&eight.world.event_log),
        uam_core::scenario::event::to_jsonl(&one.world.event_log),
    );
}

#[test]
fn artificial_endpoint_latency_does_not_change_the_committed_state() {
    use std::sync::Arc;
    use uam_bus::ComponentDescriptor;

    let mut cfg = demand_config(5, 4, 60);
    cfg.mode_choice.asc_uam = 2.0;
    let baseline = run_day(&cfg, &RunOptions::default()).unwrap();

    // Same handlers wrapped with per-item pseudo-random sleeps, so fan-out
    // completions land in scrambled order.
    let ctx = Arc::new(uam_core::stages::StageContext::new(cfg.clone()));
    let options = RunOptions::default();
    let registry = uam_core::orchestrator::build_registry(&ctx, &options.pipeline).unwrap();
    let jittery = uam_bus::Registry::new(
        uam_bus::HandshakeInfo::new(uam_core::stages::stage_schema_fingerprint(), "jitter"),
        uam_core::stages::ALL_STAGES.iter().map(|s| s.to_string()),
    );
    let _ = registry; // default registry unused beyond sanity
    for stage in uam_core::stages::ALL_STAGES {
        let policy = options.pipeline.stages[stage].clone();
        let count = match policy.mode {
            uam_core::orchestrator::DispatchMode::Serial => 1,
            uam_core::orchestrator::DispatchMode::ParallelFanOut => policy.instances.max(1),
        };
        for i in 0..count {
            let inner = ctx.handler(stage);
            let wrapped: uam_bus::InProcessFn = Arc::new(move |doc: &uam_bus::Doc| {
                let jitter = (doc.encode().len() % 7) as u64 * 3;
                std::thread::sleep(std::time::Duration::from_millis(jitter));
                inner(doc)
            });
            jittery
                .register_in_process(
                    ComponentDescriptor::in_process(stage, format!("{stage}-jitter-{i}")),
                    wrapped,
                )
                .unwrap();
        }
    }
    let delayed = uam_core::orchestrator::run_day_with(&ctx, &jittery, &options).unwrap();
    assert_eq!(
        uam_core::scenario::event::to_jsonl(&baseline.world.event_log),
        uam_core::scenario::event::to_jsonl(&delayed.world.event_log),
        "completion order leaked into the committed state"
    );
}

#[test]
fn component_failure_aborts_with_a_resumable_checkpoint() {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;
    use uam_bus::ComponentDescriptor;
    use uam_core::orchestrator::{run_day_with, RunError};

    let mut cfg = demand_config(5, 4, 60);
    cfg.mode_choice.asc_uam = 2.0;
    let options_base = RunOptions {
        batch_interval_s: 60,
        ..RunOptions::default()
    };
    let baseline = run_day(&cfg, &options_base).unwrap();

    // A registry whose routing endpoints suffer an outage after a while.
    let ctx = Arc::new(uam_core::stages::StageContext::new(cfg.clone()));
    let flaky = uam_bus::Registry::new(
        uam_bus::HandshakeInfo::new(uam_core::stages::stage_schema_fingerprint(), "flaky"),
        uam_core::stages::ALL_STAGES.iter().map(|s| s.to_string()),
    );
    let calls = Arc::new(AtomicUsize::new(0));
    for stage in uam_core::stages::ALL_STAGES {
        let policy = options_base.pipeline.stages[stage].clone();
        let count = match policy.mode {
            uam_core::orchestrator::DispatchMode::Serial => 1,
            uam_core::orchestrator::DispatchMode::ParallelFanOut => policy.instances.max(1),
        };
        for i in 0..count {
            let inner = ctx.handler(stage);
            let is_routing = stage == uam_core::stages::STAGE_ROUTING;
            let calls = Arc::clone(&calls);
            let wrapped: uam_bus::InProcessFn = Arc::new(move |doc: &uam_bus::Doc| {
                if is_routing && calls.fetch_add(1, Ordering::SeqCst) >= 25 {
                    return Err("simulated tool outage".into());
                }
                inner(doc)
            });
            flaky
                .register_in_process(
                    ComponentDescriptor::in_process(stage, format!("{stage}-flaky-{i}")),
                    wrapped,
                )
                .unwrap();
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let options = RunOptions {
        out_dir: Some(dir.path().to_path_buf()),
        run_id: "outage".into(),
        ..options_base.clone()
    };
    let err = run_day_with(&ctx, &flaky, &options).expect_err("outage must abort the run");
    match err {
        RunError::Stage { stage, item, .. } => {
            assert_eq!(stage, uam_core::stages::STAGE_ROUTING);
            assert!(item.is_some(), "stage errors carry item attribution");
        }
        other => panic!("expected a stage error, got {other:?}"),
    }

    // Resume from the last batch checkpoint with healthy endpoints.
    let resume = RunOptions {
        resume: true,
        ..options
    };
    let resumed = run_day(&cfg, &resume).unwrap();
    assert_eq!(
        uam_core::scenario::event::to_jsonl(&resumed.world.event_log),
        uam_core::scenario::event::to_jsonl(&baseline.world.event_log),
        "resume after a component failure must reproduce the clean run"
    );
}
