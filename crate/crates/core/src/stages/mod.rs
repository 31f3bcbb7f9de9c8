//! The black-box component surface.
//!
//! Each pipeline stage is a pure document processor: request documents
//! carry every dynamic input (state excerpts, queries), static scenario
//! data comes from the [`StageContext`] both ends share, and the response
//! document carries the full result. The same handlers back in-process
//! endpoints and the `component-host` executable, which is what makes the
//! two transports observably equivalent.

pub mod docs;
pub mod routing;

use std::sync::Arc;

use uam_bus::{schema_fingerprint, Doc, InProcessFn};

use crate::airspace::RouteNetwork;
use crate::config::ScenarioConfig;
use crate::geo::GeoPoint;
use crate::ids::VertiportId;

pub const STAGE_DEMAND: &str = "demand";
pub const STAGE_ALLOCATION: &str = "vehicle-allocation";
pub const STAGE_ROUTING: &str = "vertiport-trajectory";
pub const STAGE_MODE_CHOICE: &str = "mode-choice";
pub const STAGE_ECONOMICS: &str = "economics";

pub const ALL_STAGES: [&str; 5] = [
    STAGE_DEMAND,
    STAGE_ALLOCATION,
    STAGE_ROUTING,
    STAGE_MODE_CHOICE,
    STAGE_ECONOMICS,
];

/// Element vocabulary pinned by the handshake fingerprint; a schema change
/// that touches the wire shape must extend this list and thereby break
/// mismatched pairings fast.
const SCHEMA_VOCABULARY: [&str; 42] = [
    "cpacs",
    "header",
    "stage",
    "scenarioSeed",
    "networkFingerprint",
    "flights",
    "vertiports",
    "vertiport",
    "vertiportID",
    "name",
    "positionNorth",
    "positionEast",
    "fatoCount",
    "layout",
    "turnaroundTime",
    "slotDuration",
    "interdependenceBuffer",
    "departureTimes",
    "arrivalTimes",
    "fatos",
    "fato",
    "takeoffStarts",
    "landingStarts",
    "trajectories",
    "trajectory",
    "flightID",
    "latitudes",
    "longitudes",
    "passageTimes",
    "edgeIDs",
    "edgeEntries",
    "edgeExits",
    "totalDistance",
    "requests",
    "request",
    "responses",
    "response",
    "items",
    "item",
    "fleet",
    "vehicle",
    "ledger",
];

pub fn stage_schema_fingerprint() -> String {
    schema_fingerprint(&SCHEMA_VOCABULARY)
}

/// Static data shared by the orchestrator and every component host:
/// the scenario configuration and the route network derived from it.
pub struct StageContext {
    pub config: ScenarioConfig,
    pub network: RouteNetwork,
}

impl StageContext {
    pub fn new(config: ScenarioConfig) -> StageContext {
        let vertiports: Vec<(VertiportId, GeoPoint)> = config
            .vertiports
            .iter()
            .map(|v| (VertiportId(v.id), GeoPoint::new(v.lat, v.lon)))
            .collect();
        let network = RouteNetwork::build(
            config.airspace.mode,
            &vertiports,
            config.airspace.grid_step_km,
        );
        StageContext { config, network }
    }

    pub fn vertiport_position(&self, id: VertiportId) -> GeoPoint {
        self.config
            .vertiport_position(id)
            .expect("vertiport known to the scenario")
    }

    /// Deterministic fingerprint of the corridor network, carried in
    /// routing requests so a host configured with a different scenario
    /// fails loudly instead of planning nonsense.
    pub fn network_fingerprint(&self) -> String {
        let mut desc = format!("{:?}|{}", self.config.airspace.mode, self.network.nodes.len());
        for e in &self.network.edges {
            desc.push_str(&format!("|{}-{}", e.from, e.to));
        }
        schema_fingerprint(&[&desc])
    }

    /// The document handler for one stage, as registered on the bus.
    pub fn handler(self: &Arc<Self>, stage: &str) -> InProcessFn {
        let ctx = Arc::clone(self);
        let stage = stage.to_string();
        Arc::new(move |doc: &Doc| handle(&ctx, &stage, doc))
    }
}

/// Routes a request document to its stage implementation. Every stage
/// accepts a batch of requests per invocation and answers them in order.
pub fn handle(ctx: &StageContext, stage: &str, doc: &Doc) -> Result<Doc, String> {
    let declared = docs::header_stage(doc)?;
    if declared != stage {
        return Err(format!(
            "document addressed to stage '{declared}' reached handler '{stage}'"
        ));
    }
    match stage {
        STAGE_DEMAND => docs::handle_demand(ctx, doc),
        STAGE_ALLOCATION => docs::handle_allocation(ctx, doc),
        STAGE_ROUTING => routing::handle_routing(ctx, doc),
        STAGE_MODE_CHOICE => docs::handle_mode_choice(ctx, doc),
        STAGE_ECONOMICS => docs::handle_economics(ctx, doc),
        other => Err(format!("unknown stage '{other}'")),
    }
}
