//! Fares, run evaluation, and the iterative price loop.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{EconomicsConfig, PricingConfig};
use crate::scenario::{FlightKind, WorldState};

/// Ticket price parameters: a base fare per itinerary plus a rate on the
/// actual distance flown.
pub type PriceParams = PricingConfig;

#[derive(Debug, Error)]
pub enum EconError {
    #[error("price iteration {iteration} failed: {message}")]
    RunFailed { iteration: u32, message: String },
}

/// Whole-run economics, computed from committed and executed data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLedger {
    pub revenue_eur: f64,
    pub operating_cost_eur: f64,
    pub fleet_size: u64,
    pub deadhead_share: f64,
    pub total_energy_kwh: f64,
    pub load_factor: f64,
    pub flights: u64,
}

/// Fare for one itinerary: one base fare plus the rate times the summed
/// actual leg distances.
pub fn compute_fare(leg_distances_km: &[f64], params: &PriceParams) -> f64 {
    let total_km: f64 = leg_distances_km.iter().sum();
    params.base_fare_eur + params.price_per_km_eur * total_km
}

/// Evaluates a completed run from the live counters and entity stores. The
/// event-log replay route recomputes the same figures independently (see
/// the replay tests).
pub fn evaluate_run(world: &WorldState, cost_model: &EconomicsConfig) -> RunLedger {
    let fleet_size = world.vehicles.len() as u64;
    let flights = world.counters.flights;
    let deadheads = world.counters.deadhead_flights;
    let total_energy_kwh: f64 = world.flights.values().map(|f| f.energy_kwh).sum();

    let mut seat_utilization = 0.0;
    let mut revenue_flights = 0u64;
    for f in world.flights.values() {
        if f.kind == FlightKind::Revenue {
            revenue_flights += 1;
            seat_utilization +=
                f.manifest.len() as f64 / world.pax_capacity_of_flight(f) as f64;
        }
    }
    let load_factor = if revenue_flights > 0 {
        seat_utilization / revenue_flights as f64
    } else {
        0.0
    };

    RunLedger {
        revenue_eur: world.counters.revenue_eur,
        operating_cost_eur: cost_model.fixed_cost_per_vehicle_eur * fleet_size as f64
            + cost_model.energy_price_eur_per_kwh * total_energy_kwh
            + cost_model.per_flight_cost_eur * flights as f64,
        fleet_size,
        deadhead_share: if flights > 0 {
            deadheads as f64 / flights as f64
        } else {
            0.0
        },
        total_energy_kwh,
        load_factor,
        flights,
    }
}

/// Damped multiplicative cost-recovery update:
/// `proposed = price * cost * (1 + margin) / max(revenue, eps)`,
/// `new = damping * proposed + (1 - damping) * old`. The base fare is held
/// fixed; zero-flight runs leave the parameters unchanged.
pub fn update_price_params(
    ledger: &RunLedger,
    params: &PriceParams,
    target_margin: f64,
    damping: f64,
) -> PriceParams {
    if ledger.flights == 0 {
        return params.clone();
    }
    let target = ledger.operating_cost_eur * (1.0 + target_margin);
    let proposed = params.price_per_km_eur * target / ledger.revenue_eur.max(1e-9);
    PriceParams {
        base_fare_eur: params.base_fare_eur,
        price_per_km_eur: damping * proposed + (1.0 - damping) * params.price_per_km_eur,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub params: PriceParams,
    pub iterations: u32,
    pub converged: bool,
    pub ledgers: Vec<RunLedger>,
}

/// Repeats full simulation runs, updating the price parameters after each,
/// until the relative change of the per-km price falls below `tol` or the
/// iteration budget runs out. Non-convergence is reported, not hidden.
pub fn converge_prices(
    mut run: impl FnMut(&PriceParams) -> Result<RunLedger, String>,
    params0: &PriceParams,
    tol: f64,
    max_iters: u32,
    target_margin: f64,
    damping: f64,
) -> Result<ConvergenceReport, EconError> {
    let mut params = params0.clone();
    let mut ledgers = Vec::new();
    for iteration in 1..=max_iters {
        let ledger = run(&params).map_err(|message| EconError::RunFailed {
            iteration,
            message,
        })?;
        let next = update_price_params(&ledger, &params, target_margin, damping);
        let delta = (next.price_per_km_eur - params.price_per_km_eur).abs()
            / params.price_per_km_eur.max(1e-9);
        ledgers.push(ledger);
        params = next;
        if delta < tol {
            return Ok(ConvergenceReport {
                params,
                iterations: iteration,
                converged: true,
                ledgers,
            });
        }
    }
    Ok(ConvergenceReport {
        params,
        iterations: max_iters,
        converged: false,
        ledgers,
    })
}
