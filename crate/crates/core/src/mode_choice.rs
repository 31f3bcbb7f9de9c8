//! Passenger mode choice: completes the intermodal travel chain, builds the
//! ground-only alternative, computes multinomial-logit probabilities over
//! door-to-door time and cost, and draws the choice from a per-request
//! substream.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ModeChoiceConfig;
use crate::demand::{AccessPlan, Trip};
use crate::geo::great_circle_km;
use crate::ids::RequestId;
use crate::rng::substream;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OfferError {
    #[error("offered departure precedes the earliest vertiport arrival")]
    InvalidOffer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    UamIntermodal,
    Car,
}

/// One complete door-to-door alternative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TravelOffer {
    pub mode: Mode,
    pub total_time_s: i64,
    pub total_cost_eur: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogitParams {
    pub beta_time: f64,
    pub beta_cost: f64,
    pub asc_uam: f64,
}

impl From<&ModeChoiceConfig> for LogitParams {
    fn from(cfg: &ModeChoiceConfig) -> LogitParams {
        LogitParams {
            beta_time: cfg.beta_time,
            beta_cost: cfg.beta_cost,
            asc_uam: cfg.asc_uam,
        }
    }
}

/// The confirmed flight offer handed over by the planner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UamFlightOffer {
    pub departure_s: i64,
    pub arrival_s: i64,
    pub fare_eur: f64,
}

/// Completes the UAM chain: access + wait at the vertiport + flight +
/// egress, and fare plus first/last-mile cost.
pub fn complete_uam_chain(
    offer: &UamFlightOffer,
    plan: &AccessPlan,
    ground_cost_per_km: f64,
) -> Result<TravelOffer, OfferError> {
    if offer.departure_s < plan.earliest_vertiport_arrival_s {
        return Err(OfferError::InvalidOffer);
    }
    let wait_s = offer.departure_s - plan.earliest_vertiport_arrival_s;
    let flight_s = offer.arrival_s - offer.departure_s;
    let total_time_s = plan.access_s + wait_s + flight_s + plan.egress_s;
    let total_cost_eur = offer.fare_eur + (plan.access_km + plan.egress_km) * ground_cost_per_km;
    Ok(TravelOffer {
        mode: Mode::UamIntermodal,
        total_time_s,
        total_cost_eur,
    })
}

/// The ground-only route: great-circle distance stretched by the detour
/// factor, driven at the configured speed and cost rate.
pub fn build_car_alternative(
    trip: &Trip,
    car_speed_kmh: f64,
    car_cost_per_km: f64,
    detour_factor: f64,
) -> TravelOffer {
    let road_km = great_circle_km(trip.origin, trip.destination) * detour_factor;
    TravelOffer {
        mode: Mode::Car,
        total_time_s: (road_km / car_speed_kmh * 3600.0).round() as i64,
        total_cost_eur: road_km * car_cost_per_km,
    }
}

pub fn utility(offer: &TravelOffer, params: &LogitParams) -> f64 {
    let asc = match offer.mode {
        Mode::UamIntermodal => params.asc_uam,
        Mode::Car => 0.0,
    };
    params.beta_time * offer.total_time_s as f64 + params.beta_cost * offer.total_cost_eur + asc
}

/// Softmax over offer utilities, computed with max-utility subtraction.
pub fn logit_probabilities(offers: &[TravelOffer], params: &LogitParams) -> Vec<f64> {
    let utilities: Vec<f64> = offers.iter().map(|o| utility(o, params)).collect();
    softmax(&utilities)
}

pub fn softmax(utilities: &[f64]) -> Vec<f64> {
    let max = utilities.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = utilities.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Inverse-CDF draw from the per-request substream keyed by
/// (run seed, request id): the same request always draws the same way, no
/// matter when or where it is processed.
pub fn draw_choice(probs: &[f64], run_seed: u64, request: RequestId) -> usize {
    let mut rng = substream(run_seed, "mode-choice", request.0);
    let u: f64 = rng.gen();
    let mut cumulative = 0.0;
    for (i, p) in probs.iter().enumerate() {
        cumulative += p;
        if u < cumulative {
            return i;
        }
    }
    probs.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::GeoPoint;
    use crate::ids::{TripId, VertiportId};

    fn plan(access_s: i64, egress_s: i64, access_km: f64, egress_km: f64, earliest: i64) -> AccessPlan {
        AccessPlan {
            trip: TripId(0),
            origin_vertiport: VertiportId(0),
            destination_vertiport: VertiportId(1),
            access_s,
            egress_s,
            access_km,
            egress_km,
            earliest_vertiport_arrival_s: earliest,
        }
    }

    #[test]
    fn chain_times_are_additive() {
        // access 10 min + wait 5 min + flight 15 min + egress 10 min = 40 min
        let p = plan(600, 600, 5.0, 5.0, 1000);
        let offer = UamFlightOffer {
            departure_s: 1300,
            arrival_s: 1300 + 900,
            fare_eur: 40.0,
        };
        let chain = complete_uam_chain(&offer, &p, 0.0).unwrap();
        assert_eq!(chain.total_time_s, 2400);
    }

    #[test]
    fn chain_cost_adds_ground_legs() {
        // 40 EUR fare + 4 km of ground legs at 0.5 EUR/km = 42 EUR
        let p = plan(0, 0, 2.0, 2.0, 0);
        let offer = UamFlightOffer {
            departure_s: 0,
            arrival_s: 600,
            fare_eur: 40.0,
        };
        let chain = complete_uam_chain(&offer, &p, 0.5).unwrap();
        assert!((chain.total_cost_eur - 42.0).abs() < 1e-12);
    }

    #[test]
    fn zero_ground_legs_reduce_to_flight_only() {
        let p = plan(0, 0, 0.0, 0.0, 500);
        let offer = UamFlightOffer {
            departure_s: 500,
            arrival_s: 1400,
            fare_eur: 40.0,
        };
        let chain = complete_uam_chain(&offer, &p, 0.5).unwrap();
        assert_eq!(chain.total_time_s, 900);
        assert_eq!(chain.total_cost_eur, 40.0);
    }

    #[test]
    fn departure_before_earliest_arrival_is_invalid() {
        let p = plan(0, 0, 0.0, 0.0, 1000);
        let offer = UamFlightOffer {
            departure_s: 999,
            arrival_s: 2000,
            fare_eur: 40.0,
        };
        assert_eq!(
            complete_uam_chain(&offer, &p, 0.5).unwrap_err(),
            OfferError::InvalidOffer
        );
    }

    #[test]
    fn car_alternative_arithmetic() {
        // 30 km great-circle, detour 1.3 -> 39 km; 40 km/h -> 58.5 min;
        // 0.3 EUR/km -> 11.70 EUR.
        let trip = Trip {
            id: TripId(0),
            origin: GeoPoint::new(53.5, 9.9),
            destination: GeoPoint::new(53.5 + 30.0 / 111.19492664455873, 9.9),
            journey_start_s: 0,
        };
        let d = great_circle_km(trip.origin, trip.destination);
        assert!((d - 30.0).abs() < 0.01, "setup distance {d}");
        let offer = build_car_alternative(&trip, 40.0, 0.3, 1.3);
        assert!((offer.total_cost_eur - d * 1.3 * 0.3).abs() < 1e-12);
        assert_eq!(offer.total_time_s, (d * 1.3 / 40.0 * 3600.0).round() as i64);
        assert!((offer.total_time_s as f64 - 58.5 * 60.0).abs() < 3.0);
    }

    #[test]
    fn detour_factor_one_keeps_great_circle() {
        let trip = Trip {
            id: TripId(0),
            origin: GeoPoint::new(53.5, 9.9),
            destination: GeoPoint::new(53.6, 9.9),
            journey_start_s: 0,
        };
        let d = great_circle_km(trip.origin, trip.destination);
        let offer = build_car_alternative(&trip, 40.0, 1.0, 1.0);
        assert!((offer.total_cost_eur - d).abs() < 1e-12);
    }

    #[test]
    fn zero_distance_trip_is_free_and_instant() {
        let p = GeoPoint::new(53.5, 9.9);
        let trip = Trip {
            id: TripId(0),
            origin: p,
            destination: p,
            journey_start_s: 0,
        };
        let offer = build_car_alternative(&trip, 40.0, 0.3, 1.3);
        assert_eq!(offer.total_time_s, 0);
        assert_eq!(offer.total_cost_eur, 0.0);
    }

    #[test]
    fn equal_utilities_split_evenly() {
        let probs = softmax(&[1.7, 1.7]);
        assert_eq!(probs, vec![0.5, 0.5]);
    }

    #[test]
    fn closed_form_softmax() {
        // V = [0, ln 3] -> [0.25, 0.75]
        let probs = softmax(&[0.0, 3.0f64.ln()]);
        assert!((probs[0] - 0.25).abs() < 1e-12);
        assert!((probs[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn shift_invariance() {
        let base = softmax(&[-1.2, 0.3, 2.9]);
        let shifted = softmax(&[-1.2 + 17.0, 0.3 + 17.0, 2.9 + 17.0]);
        for (a, b) in base.iter().zip(shifted.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let sum: f64 = base.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn higher_uam_cost_never_raises_uam_probability() {
        let params = LogitParams {
            beta_time: -0.0006,
            beta_cost: -0.05,
            asc_uam: 0.0,
        };
        let car = TravelOffer {
            mode: Mode::Car,
            total_time_s: 3000,
            total_cost_eur: 10.0,
        };
        let mut last = f64::INFINITY;
        for cost in [10.0, 20.0, 40.0, 80.0] {
            let uam = TravelOffer {
                mode: Mode::UamIntermodal,
                total_time_s: 2000,
                total_cost_eur: cost,
            };
            let p = logit_probabilities(&[uam, car], &params)[0];
            assert!(p <= last + 1e-15);
            last = p;
        }
    }

    #[test]
    fn certain_probability_always_picked() {
        for request in 0..50u64 {
            assert_eq!(draw_choice(&[1.0, 0.0], 42, RequestId(request)), 0);
        }
    }

    #[test]
    fn draw_matches_probability_in_frequency() {
        let mut hits = 0u32;
        let n = 100_000u64;
        for request in 0..n {
            if draw_choice(&[0.25, 0.75], 7, RequestId(request)) == 1 {
                hits += 1;
            }
        }
        let share = hits as f64 / n as f64;
        assert!((share - 0.75).abs() < 0.01, "share {share}");
    }

    #[test]
    fn same_seed_and_request_id_always_draw_the_same() {
        let probs = [0.5, 0.5];
        let first = draw_choice(&probs, 42, RequestId(7));
        for _ in 0..10 {
            assert_eq!(draw_choice(&probs, 42, RequestId(7)), first);
        }
    }
}
