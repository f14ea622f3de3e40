//! Proof-of-location protocol: session codes, ledger payloads, the two party
//! state machines, claim validation and the session orchestrator.

mod explore;
mod machine;
mod payload;
mod session;
mod validate;

use thiserror::Error;

pub use explore::{explore, explore_with, ExploreLimits, ExploreReport, StepFn};
pub use machine::{
    platform_step, uav_step, AbortReason, Action, Event, Party, PlatformConfig, PolSession, RangingPlan, State,
    Transition, MAX_RETRIES, RETRY_TIMEOUT_NS,
};
pub use payload::{generate_codes, payload_session, LocationClaim, PolRequest, PolVerdict, POL_REQUEST, POL_VERDICT};
pub use session::{
    run_session, Injection, SessionParties, SessionReport, TraceEntry, FRAME_LATENCY_NS, LEDGER_LATENCY_NS,
};
pub use validate::{
    claim_distance, likelihood, request_asset_id, validate_location, verdict_asset_id, PolContract, Verdict,
    DEFAULT_BUFFER_M,
};

use crate::codec::CodecError;
use crate::geo::GeoError;
use crate::ledger::LedgerError;
use crate::uwb::UwbError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolError {
    #[error("protocol violation: {party} in state {state} cannot handle {event}")]
    ProtocolViolation {
        party: Party,
        state: State,
        event: &'static str,
    },
    #[error("validation unavailable: position estimate did not converge")]
    ValidationUnavailable,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("malformed payload: {0}")]
    Payload(#[from] CodecError),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Uwb(#[from] UwbError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("session did not settle within {0} steps")]
    Stalled(usize),
}
