//! Scenario configuration: the human-readable TOML file that fully
//! describes a simulation run (vertiports, fleet, vehicle types, airspace
//! mode, pricing, demand, seeds).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::GeoPoint;
use crate::ids::{VehicleId, VertiportId};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config invalid: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    OneDirectional,
    BiDirectional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AirspaceMode {
    SlotBased,
    TrajectoryBased,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertiportConfig {
    pub id: u64,
    pub name: String,
    pub lat: f64,
    pub lon: f64,
    #[serde(default = "default_fato_count")]
    pub fato_count: u32,
    #[serde(default = "default_layout")]
    pub layout: Layout,
    #[serde(default = "default_turnaround_s")]
    pub turnaround_s: i64,
}

fn default_fato_count() -> u32 {
    1
}
fn default_layout() -> Layout {
    Layout::OneDirectional
}
fn default_turnaround_s() -> i64 {
    120
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleTypeConfig {
    pub name: String,
    /// Seats excluding the pilot.
    pub pax_capacity: u32,
    pub cruise_speed_kmh: f64,
    pub battery_capacity_kwh: f64,
    pub cruise_energy_rate_kwh_per_km: f64,
    /// Energy per take-off or landing.
    pub hover_energy_per_cycle_kwh: f64,
    pub min_reserve_kwh: f64,
    pub charge_rate_kwh_per_h: f64,
}

impl VehicleTypeConfig {
    /// Longest leg the type can fly starting from a full battery while
    /// keeping the reserve.
    pub fn max_leg_km(&self) -> f64 {
        let usable =
            self.battery_capacity_kwh - self.min_reserve_kwh - 2.0 * self.hover_energy_per_cycle_kwh;
        (usable / self.cruise_energy_rate_kwh_per_km).max(0.0)
    }

    pub fn leg_energy_kwh(&self, distance_km: f64) -> f64 {
        self.cruise_energy_rate_kwh_per_km * distance_km + 2.0 * self.hover_energy_per_cycle_kwh
    }

    pub fn flight_time_s(&self, distance_km: f64) -> i64 {
        (distance_km / self.cruise_speed_kmh * 3600.0).round() as i64
    }
}

/// Fleet block: `count` vehicles of one type, homed round-robin across all
/// vertiports or at an explicit home list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetConfig {
    pub vtype: String,
    pub count: u32,
    #[serde(default)]
    pub homes: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source")]
pub enum DemandConfig {
    /// Read trips from a CSV file (trip_id, origin_lat, origin_lon,
    /// dest_lat, dest_lon, start_time_s).
    File { path: String },
    /// Generate trips: origins/destinations clustered around the given
    /// centers (default: the vertiports), start times drawn from a bimodal
    /// profile.
    Synthetic {
        trips: u32,
        #[serde(default)]
        clusters: Vec<ClusterConfig>,
        #[serde(default = "default_cluster_sigma_km")]
        cluster_sigma_km: f64,
        #[serde(default)]
        peaks: Vec<PeakConfig>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub lat: f64,
    pub lon: f64,
    #[serde(default = "default_cluster_weight")]
    pub weight: f64,
}

fn default_cluster_weight() -> f64 {
    1.0
}
fn default_cluster_sigma_km() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakConfig {
    pub time_s: i64,
    pub sigma_s: f64,
    #[serde(default = "default_cluster_weight")]
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessConfig {
    #[serde(default = "default_ground_speed")]
    pub ground_speed_kmh: f64,
    /// Requests are emitted this long before the earliest vertiport arrival.
    #[serde(default = "default_lead_time")]
    pub lead_time_s: i64,
}

fn default_ground_speed() -> f64 {
    30.0
}
fn default_lead_time() -> i64 {
    1800
}

impl Default for AccessConfig {
    fn default() -> Self {
        AccessConfig {
            ground_speed_kmh: default_ground_speed(),
            lead_time_s: default_lead_time(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeChoiceConfig {
    /// Utility per second; must be <= 0.
    #[serde(default = "default_beta_time")]
    pub beta_time: f64,
    /// Utility per EUR; must be <= 0.
    #[serde(default = "default_beta_cost")]
    pub beta_cost: f64,
    /// Alternative-specific constant added to the intermodal utility.
    #[serde(default)]
    pub asc_uam: f64,
    #[serde(default = "default_car_speed")]
    pub car_speed_kmh: f64,
    #[serde(default = "default_car_cost")]
    pub car_cost_per_km: f64,
    #[serde(default = "default_detour")]
    pub car_detour_factor: f64,
    /// First/last-mile cost rate for the intermodal chain.
    #[serde(default = "default_ground_cost")]
    pub ground_cost_per_km: f64,
}

fn default_beta_time() -> f64 {
    -0.0006
}
fn default_beta_cost() -> f64 {
    -0.1
}
fn default_car_speed() -> f64 {
    40.0
}
fn default_car_cost() -> f64 {
    0.3
}
fn default_detour() -> f64 {
    1.3
}
fn default_ground_cost() -> f64 {
    0.5
}

impl Default for ModeChoiceConfig {
    fn default() -> Self {
        ModeChoiceConfig {
            beta_time: default_beta_time(),
            beta_cost: default_beta_cost(),
            asc_uam: 0.0,
            car_speed_kmh: default_car_speed(),
            car_cost_per_km: default_car_cost(),
            car_detour_factor: default_detour(),
            ground_cost_per_km: default_ground_cost(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    #[serde(default = "default_max_legs")]
    pub max_legs: u32,
    #[serde(default = "default_pooling_window")]
    pub pooling_window_s: i64,
    #[serde(default = "default_true")]
    pub pooling_enabled: bool,
}

fn default_max_legs() -> u32 {
    2
}
fn default_pooling_window() -> i64 {
    900
}
fn default_true() -> bool {
    true
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            max_legs: default_max_legs(),
            pooling_window_s: default_pooling_window(),
            pooling_enabled: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertidromeConfig {
    #[serde(default = "default_slot_duration")]
    pub slot_duration_s: i64,
    /// Buffer around landing slots that take-off slots must clear on
    /// bi-directional layouts.
    #[serde(default = "default_interdependence_buffer")]
    pub interdependence_buffer_s: i64,
    #[serde(default = "default_search_horizon")]
    pub search_horizon_s: i64,
}

fn default_slot_duration() -> i64 {
    90
}
fn default_interdependence_buffer() -> i64 {
    60
}
fn default_search_horizon() -> i64 {
    86_400
}

impl Default for VertidromeConfig {
    fn default() -> Self {
        VertidromeConfig {
            slot_duration_s: default_slot_duration(),
            interdependence_buffer_s: default_interdependence_buffer(),
            search_horizon_s: default_search_horizon(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AirspaceConfig {
    #[serde(default = "default_airspace_mode")]
    pub mode: AirspaceMode,
    #[serde(default = "default_separation")]
    pub separation_km: f64,
    /// Sampling step for free-route conflict probing.
    #[serde(default = "default_sample_step")]
    pub sample_step_s: i64,
    #[serde(default = "default_delay_step")]
    pub delay_step_s: i64,
    #[serde(default = "default_max_delay")]
    pub max_delay_s: i64,
    #[serde(default = "default_k_paths")]
    pub k_paths: usize,
    /// Corridor lattice spacing for the slot-based network.
    #[serde(default = "default_grid_step")]
    pub grid_step_km: f64,
}

fn default_airspace_mode() -> AirspaceMode {
    AirspaceMode::SlotBased
}
fn default_separation() -> f64 {
    1.0
}
fn default_sample_step() -> i64 {
    10
}
fn default_delay_step() -> i64 {
    30
}
fn default_max_delay() -> i64 {
    1800
}
fn default_k_paths() -> usize {
    3
}
fn default_grid_step() -> f64 {
    4.0
}

impl Default for AirspaceConfig {
    fn default() -> Self {
        AirspaceConfig {
            mode: default_airspace_mode(),
            separation_km: default_separation(),
            sample_step_s: default_sample_step(),
            delay_step_s: default_delay_step(),
            max_delay_s: default_max_delay(),
            k_paths: default_k_paths(),
            grid_step_km: default_grid_step(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricingConfig {
    #[serde(default)]
    pub base_fare_eur: f64,
    #[serde(default = "default_price_per_km")]
    pub price_per_km_eur: f64,
}

fn default_price_per_km() -> f64 {
    2.0
}

impl Default for PricingConfig {
    fn default() -> Self {
        PricingConfig {
            base_fare_eur: 0.0,
            price_per_km_eur: default_price_per_km(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EconomicsConfig {
    #[serde(default = "default_fixed_per_vehicle")]
    pub fixed_cost_per_vehicle_eur: f64,
    #[serde(default = "default_energy_price")]
    pub energy_price_eur_per_kwh: f64,
    #[serde(default = "default_per_flight_cost")]
    pub per_flight_cost_eur: f64,
    #[serde(default = "default_target_margin")]
    pub target_margin: f64,
    #[serde(default = "default_damping")]
    pub damping: f64,
    #[serde(default = "default_tol")]
    pub tolerance: f64,
    #[serde(default = "default_max_iters")]
    pub max_iterations: u32,
}

fn default_fixed_per_vehicle() -> f64 {
    400.0
}
fn default_energy_price() -> f64 {
    0.30
}
fn default_per_flight_cost() -> f64 {
    25.0
}
fn default_target_margin() -> f64 {
    0.2
}
fn default_damping() -> f64 {
    0.5
}
fn default_tol() -> f64 {
    0.01
}
fn default_max_iters() -> u32 {
    8
}

impl Default for EconomicsConfig {
    fn default() -> Self {
        EconomicsConfig {
            fixed_cost_per_vehicle_eur: default_fixed_per_vehicle(),
            energy_price_eur_per_kwh: default_energy_price(),
            per_flight_cost_eur: default_per_flight_cost(),
            target_margin: default_target_margin(),
            damping: default_damping(),
            tolerance: default_tol(),
            max_iterations: default_max_iters(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioInfo {
    pub name: String,
    #[serde(default)]
    pub start_s: i64,
    pub end_s: i64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_metrics_cadence")]
    pub metrics_cadence_s: i64,
}

fn default_seed() -> u64 {
    42
}
fn default_metrics_cadence() -> i64 {
    300
}

/// The complete scenario description. Serialized into the init record of
/// every event log, so two runs comparing logs must share it verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: ScenarioInfo,
    pub vertiports: Vec<VertiportConfig>,
    pub vehicle_types: Vec<VehicleTypeConfig>,
    pub fleet: Vec<FleetConfig>,
    pub demand: DemandConfig,
    #[serde(default)]
    pub access: AccessConfig,
    #[serde(default)]
    pub mode_choice: ModeChoiceConfig,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub vertidrome: VertidromeConfig,
    #[serde(default)]
    pub airspace: AirspaceConfig,
    #[serde(default)]
    pub pricing: PricingConfig,
    #[serde(default)]
    pub economics: EconomicsConfig,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<ScenarioConfig, ConfigError> {
        let config: ScenarioConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario config serializes")
    }

    pub fn vertiport_position(&self, id: VertiportId) -> Option<GeoPoint> {
        self.vertiports
            .iter()
            .find(|v| v.id == id.0)
            .map(|v| GeoPoint::new(v.lat, v.lon))
    }

    /// Expands fleet blocks into concrete (vehicle id, type, home) triples.
    /// Vehicle ids are assigned in block order; round-robin homing walks the
    /// vertiport list in declaration order.
    pub fn expand_fleet(&self) -> Vec<(VehicleId, String, VertiportId)> {
        let mut out = Vec::new();
        let mut next_id = 0u64;
        for block in &self.fleet {
            for i in 0..block.count {
                let home = if block.homes.is_empty() {
                    self.vertiports[(i as usize) % self.vertiports.len()].id
                } else {
                    block.homes[(i as usize) % block.homes.len()]
                };
                out.push((
                    VehicleId(next_id),
                    block.vtype.clone(),
                    VertiportId(home),
                ));
                next_id += 1;
            }
        }
        out
    }

    pub fn vehicle_type(&self, name: &str) -> Option<&VehicleTypeConfig> {
        self.vehicle_types.iter().find(|t| t.name == name)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.vertiports.len() < 2 {
            return Err(ConfigError::Invalid(
                "a scenario needs at least 2 vertiports".into(),
            ));
        }
        let mut seen = BTreeMap::new();
        for vp in &self.vertiports {
            if seen.insert(vp.id, ()).is_some() {
                return Err(ConfigError::Invalid(format!(
                    "duplicate vertiport id {}",
                    vp.id
                )));
            }
            if !GeoPoint::new(vp.lat, vp.lon).is_valid() {
                return Err(ConfigError::Invalid(format!(
                    "vertiport {} position out of bounds: ({}, {})",
                    vp.id, vp.lat, vp.lon
                )));
            }
            if vp.fato_count < 1 {
                return Err(ConfigError::Invalid(format!(
                    "vertiport {} needs at least one FATO",
                    vp.id
                )));
            }
            if vp.turnaround_s < 0 {
                return Err(ConfigError::Invalid(format!(
                    "vertiport {} has negative turnaround",
                    vp.id
                )));
            }
        }

        let mut type_names = BTreeMap::new();
        for t in &self.vehicle_types {
            if type_names.insert(t.name.clone(), ()).is_some() {
                return Err(ConfigError::Invalid(format!(
                    "duplicate vehicle type '{}'",
                    t.name
                )));
            }
            let positive = [
                t.pax_capacity as f64,
                t.cruise_speed_kmh,
                t.battery_capacity_kwh,
                t.cruise_energy_rate_kwh_per_km,
                t.hover_energy_per_cycle_kwh,
                t.min_reserve_kwh,
                t.charge_rate_kwh_per_h,
            ];
            if positive.iter().any(|v| *v <= 0.0) {
                return Err(ConfigError::Invalid(format!(
                    "vehicle type '{}' has a non-positive numeric field",
                    t.name
                )));
            }
            if t.min_reserve_kwh >= t.battery_capacity_kwh {
                return Err(ConfigError::Invalid(format!(
                    "vehicle type '{}': min reserve must be below battery capacity",
                    t.name
                )));
            }
        }

        let total: u32 = self.fleet.iter().map(|b| b.count).sum();
        if total == 0 {
            return Err(ConfigError::Invalid("fleet is empty".into()));
        }
        for block in &self.fleet {
            if self.vehicle_type(&block.vtype).is_none() {
                return Err(ConfigError::Invalid(format!(
                    "fleet references unknown vehicle type '{}'",
                    block.vtype
                )));
            }
            for home in &block.homes {
                if !seen.contains_key(home) {
                    return Err(ConfigError::Invalid(format!(
                        "vehicle homed at unknown vertiport {home}"
                    )));
                }
            }
        }

        if self.scenario.end_s <= self.scenario.start_s {
            return Err(ConfigError::Invalid("scenario end before start".into()));
        }
        if self.mode_choice.beta_time > 0.0 || self.mode_choice.beta_cost > 0.0 {
            return Err(ConfigError::Invalid(
                "logit betas must be non-positive (disutilities)".into(),
            ));
        }
        if self.mode_choice.car_detour_factor < 1.0 {
            return Err(ConfigError::Invalid("car detour factor must be >= 1".into()));
        }
        if self.pricing.base_fare_eur < 0.0 || self.pricing.price_per_km_eur < 0.0 {
            return Err(ConfigError::Invalid("price parameters must be >= 0".into()));
        }
        if self.vertidrome.slot_duration_s <= 0 {
            return Err(ConfigError::Invalid("slot duration must be positive".into()));
        }
        if self.airspace.separation_km <= 0.0 {
            return Err(ConfigError::Invalid("separation must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::small_config;

    #[test]
    fn small_config_validates() {
        small_config(2, 1).validate().unwrap();
    }

    #[test]
    fn zero_vehicles_rejected() {
        let mut cfg = small_config(2, 1);
        cfg.fleet[0].count = 0;
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn duplicate_vertiport_id_rejected() {
        let mut cfg = small_config(3, 1);
        cfg.vertiports[2].id = cfg.vertiports[0].id;
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn unknown_home_rejected() {
        let mut cfg = small_config(2, 1);
        cfg.fleet[0].homes = vec![999];
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn toml_round_trip() {
        let cfg = small_config(3, 2);
        let text = cfg.to_toml();
        let back = ScenarioConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
