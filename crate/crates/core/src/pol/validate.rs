//! Claim validation and the contract that records requests and verdicts.

use serde::{Deserialize, Serialize};

use super::payload::{LocationClaim, PolRequest, PolVerdict, POL_REQUEST, POL_VERDICT};
use super::PolError;
use crate::geo::{Dimension, EstimateResult, Position};
use crate::ids::{AuthCode, SessionId};
use crate::ledger::{Chaincode, ChaincodeError, Role, TxContext, WorldState};

pub const DEFAULT_BUFFER_M: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub accepted: bool,
    pub claim_to_estimate_distance: f64,
    pub error_radius: f64,
    pub buffer: f64,
    pub likelihood: f64,
}

impl Verdict {
    pub fn to_payload(&self, session_id: SessionId) -> PolVerdict {
        PolVerdict {
            session_id,
            accepted: self.accepted,
            distance_m: self.claim_to_estimate_distance,
            error_radius_m: self.error_radius,
            buffer_m: self.buffer,
            likelihood: self.likelihood,
        }
    }

    pub fn from_payload(v: &PolVerdict) -> Self {
        Self {
            accepted: v.accepted,
            claim_to_estimate_distance: v.distance_m,
            error_radius: v.error_radius_m,
            buffer: v.buffer_m,
            likelihood: v.likelihood,
        }
    }
}

/// Distance between claim and estimate in the solved coordinates. A planar
/// fix carries no height information, so only x and y are compared.
pub fn claim_distance(claim: &Position, estimate: &Position, dimension: Dimension) -> f64 {
    match dimension {
        Dimension::Two => (claim.x - estimate.x).hypot(claim.y - estimate.y),
        Dimension::Three => claim.distance_to(estimate),
    }
}

/// `exp(-d^2 / (2 (sigma_model^2 + r^2)))`; a zero spread gives 1 at `d = 0`
/// and 0 elsewhere.
pub fn likelihood(distance: f64, sigma_model: f64, error_radius: f64) -> f64 {
    let spread = sigma_model * sigma_model + error_radius * error_radius;
    if spread == 0.0 {
        return if distance == 0.0 { 1.0 } else { 0.0 };
    }
    (-distance * distance / (2.0 * spread)).exp()
}

/// Accepts the claim iff it lies within `buffer` of the UWB estimate.
pub fn validate_location(
    claim: &LocationClaim,
    estimate: &EstimateResult,
    buffer: f64,
    sigma_model: f64,
    dimension: Dimension,
) -> Result<Verdict, PolError> {
    if !(buffer > 0.0) || !buffer.is_finite() {
        return Err(PolError::InvalidParameter(format!("buffer {buffer}")));
    }
    if !(sigma_model >= 0.0) || !sigma_model.is_finite() {
        return Err(PolError::InvalidParameter(format!("sigma_model {sigma_model}")));
    }
    if !claim.position.is_finite() {
        return Err(PolError::InvalidParameter("claim position is not finite".into()));
    }
    if !estimate.converged || !estimate.position.is_finite() || !estimate.error_radius.is_finite() {
        return Err(PolError::ValidationUnavailable);
    }
    let d = claim_distance(&claim.position, &estimate.position, dimension);
    Ok(Verdict {
        accepted: d <= buffer,
        claim_to_estimate_distance: d,
        error_radius: estimate.error_radius,
        buffer,
        likelihood: likelihood(d, sigma_model, estimate.error_radius),
    })
}

pub fn request_asset_id(session: &SessionId) -> String {
    format!("pol-req-{session}")
}

pub fn verdict_asset_id(session: &SessionId) -> String {
    format!("pol-verdict-{session}")
}

fn code_asset_id(code: &AuthCode) -> String {
    format!("pol-code-{code}")
}

/// Contract hosting the protocol's ledger records.
///
/// POL_REQUEST stores the request and burns both codes, so neither a session
/// id nor a code can ever be used twice. POL_VERDICT is accepted once per
/// open request, only from the platform the request names, and only if its
/// fields obey the verdict rule.
#[derive(Debug, Default, Clone, Copy)]
pub struct PolContract;

impl Chaincode for PolContract {
    fn name(&self) -> &str {
        "pol"
    }

    fn handles(&self, tx_type: &str) -> bool {
        tx_type == POL_REQUEST || tx_type == POL_VERDICT
    }

    fn execute(&self, state: &mut WorldState, tx: &TxContext<'_>) -> Result<(), ChaincodeError> {
        match tx.tx_type {
            POL_REQUEST => execute_request(state, tx),
            _ => execute_verdict(state, tx),
        }
    }
}

fn malformed(e: impl std::fmt::Display) -> ChaincodeError {
    ChaincodeError::Malformed(e.to_string())
}

fn execute_request(state: &mut WorldState, tx: &TxContext<'_>) -> Result<(), ChaincodeError> {
    let req = PolRequest::decode(tx.payload).map_err(malformed)?;
    if tx.submitter_role != Role::Uav {
        return Err(ChaincodeError::Rejected("only a UAV may open a session".into()));
    }
    if !req.claim.is_finite() || !req.claim_timestamp_ns.is_finite() {
        return Err(ChaincodeError::Rejected("claim is not finite".into()));
    }
    if req.code_uav == req.code_platform {
        return Err(ChaincodeError::Rejected("session codes must differ".into()));
    }
    for code in [&req.code_uav, &req.code_platform] {
        state
            .create(&code_asset_id(code), req.session_id.0.to_vec(), tx.submitter)
            .map_err(|_| ChaincodeError::Rejected(format!("code {code} was already used")))?;
    }
    state.create(&request_asset_id(&req.session_id), tx.payload.to_vec(), tx.submitter)
}

fn execute_verdict(state: &mut WorldState, tx: &TxContext<'_>) -> Result<(), ChaincodeError> {
    let v = PolVerdict::decode(tx.payload).map_err(malformed)?;
    let req_id = request_asset_id(&v.session_id);
    let req = state
        .get(&req_id)
        .ok_or_else(|| ChaincodeError::NotFound(req_id.clone()))?;
    let req = PolRequest::decode(&req.data).map_err(malformed)?;
    if tx.submitter != req.platform_id {
        return Err(ChaincodeError::Unauthorized {
            asset_id: req_id,
            submitter: tx.submitter.to_string(),
        });
    }
    let finite = [v.distance_m, v.error_radius_m, v.buffer_m, v.likelihood]
        .iter()
        .all(|x| x.is_finite());
    if !finite || v.distance_m < 0.0 || v.error_radius_m < 0.0 || !(v.buffer_m > 0.0) {
        return Err(ChaincodeError::Rejected("verdict fields out of range".into()));
    }
    if !(0.0..=1.0).contains(&v.likelihood) {
        return Err(ChaincodeError::Rejected("likelihood outside [0, 1]".into()));
    }
    if v.accepted != (v.distance_m <= v.buffer_m) {
        return Err(ChaincodeError::Rejected("accepted flag contradicts distance and buffer".into()));
    }
    state.create(&verdict_asset_id(&v.session_id), tx.payload.to_vec(), tx.submitter)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn estimate(p: Position, r: f64) -> EstimateResult {
        EstimateResult {
            position: p,
            residual_rms: 0.0,
            error_radius: r,
            iterations: 3,
            converged: true,
            warnings: vec![],
        }
    }

    #[test]
    fn exact_claim_is_accepted_with_full_likelihood() {
        let claim = LocationClaim::new(Position::planar(3.95, 2.705), 0);
        let v = validate_location(&claim, &estimate(claim.position, 0.0), 1.0, 0.0, Dimension::Two).unwrap();
        assert!(v.accepted);
        assert_eq!((v.claim_to_estimate_distance, v.likelihood), (0.0, 1.0));
    }

    #[test]
    fn boundary_and_displacement() {
        let claim = LocationClaim::new(Position::planar(3.95, 2.705), 0);
        let at_buffer = estimate(Position::planar(3.95, 3.705), 0.05);
        let v = validate_location(&claim, &at_buffer, 1.0, 0.05, Dimension::Two).unwrap();
        assert!(v.accepted);
        let far = estimate(Position::planar(5.95, 2.705), 0.05);
        let v = validate_location(&claim, &far, 1.0, 0.05, Dimension::Two).unwrap();
        assert!(!v.accepted);
        assert!((v.claim_to_estimate_distance - 2.0).abs() < 1e-12);
        // exp(-4 / (2 * 0.005))
        assert!((v.likelihood / (-400.0f64).exp() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn planar_fix_ignores_height() {
        let claim = LocationClaim::new(Position::new(1.0, 1.0, 30.0), 0);
        let est = estimate(Position::planar(1.0, 1.0), 0.01);
        assert!(validate_location(&claim, &est, 1.0, 0.05, Dimension::Two).unwrap().accepted);
        assert!(!validate_location(&claim, &est, 1.0, 0.05, Dimension::Three).unwrap().accepted);
    }

    #[test]
    fn unavailable_and_invalid() {
        let claim = LocationClaim::new(Position::ORIGIN, 0);
        let mut est = estimate(Position::ORIGIN, 0.1);
        est.converged = false;
        assert_eq!(
            validate_location(&claim, &est, 1.0, 0.05, Dimension::Two),
            Err(PolError::ValidationUnavailable)
        );
        est.converged = true;
        assert!(validate_location(&claim, &est, 0.0, 0.05, Dimension::Two).is_err());
        assert!(validate_location(&claim, &est, 1.0, -1.0, Dimension::Two).is_err());
    }

    #[test]
    fn likelihood_limits() {
        assert_eq!(likelihood(0.0, 0.0, 0.0), 1.0);
        assert_eq!(likelihood(0.1, 0.0, 0.0), 0.0);
        assert!((likelihood(1.0, 1.0, 0.0) - (-0.5f64).exp()).abs() < 1e-15);
    }
}
