//! Session codes and the canonical ledger payloads of the protocol.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::codec::{CodecError, Reader, Writer};
use crate::geo::Position;
use crate::ids::{AuthCode, SessionId};

pub const POL_REQUEST: &str = "POL_REQUEST";
pub const POL_VERDICT: &str = "POL_VERDICT";

/// Draws a `(code_uav, code_platform)` pair. The two codes always differ.
pub fn generate_codes<R: RngCore + ?Sized>(rng: &mut R) -> (AuthCode, AuthCode) {
    let code_uav = AuthCode::random(rng);
    loop {
        let code_platform = AuthCode::random(rng);
        if code_platform != code_uav {
            return (code_uav, code_platform);
        }
    }
}

/// Position a UAV broadcasts about itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationClaim {
    pub position: Position,
    pub timestamp_ns: u64,
    pub source_tag: String,
}

impl LocationClaim {
    pub fn new(position: Position, timestamp_ns: u64) -> Self {
        Self {
            position,
            timestamp_ns,
            source_tag: "gnss-sim".into(),
        }
    }
}

/// Step 1 notification: opens a session and shares both codes with the
/// channel members.
#[derive(Debug, Clone, PartialEq)]
pub struct PolRequest {
    pub session_id: SessionId,
    pub uav_id: String,
    pub platform_id: String,
    pub code_uav: AuthCode,
    pub code_platform: AuthCode,
    pub claim: Position,
    /// Claim time in nanoseconds, carried as a float like every other
    /// numeric field of the payload.
    pub claim_timestamp_ns: f64,
}

impl PolRequest {
    pub fn encode(&self) -> Vec<u8> {
        Writer::new()
            .fixed(&self.session_id.0)
            .str(&self.uav_id)
            .str(&self.platform_id)
            .fixed(&self.code_uav.0)
            .fixed(&self.code_platform.0)
            .f64(self.claim.x)
            .f64(self.claim.y)
            .f64(self.claim.z)
            .f64(self.claim_timestamp_ns)
            .finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(bytes);
        let req = Self {
            session_id: SessionId(r.fixed()?),
            uav_id: r.str()?,
            platform_id: r.str()?,
            code_uav: AuthCode(r.fixed()?),
            code_platform: AuthCode(r.fixed()?),
            claim: Position::new(r.f64()?, r.f64()?, r.f64()?),
            claim_timestamp_ns: r.f64()?,
        };
        r.finish()?;
        Ok(req)
    }
}

/// Validation outcome committed by the platform.
#[derive(Debug, Clone, PartialEq)]
pub struct PolVerdict {
    pub session_id: SessionId,
    pub accepted: bool,
    pub distance_m: f64,
    pub error_radius_m: f64,
    pub buffer_m: f64,
    pub likelihood: f64,
}

impl PolVerdict {
    pub fn encode(&self) -> Vec<u8> {
        Writer::new()
            .fixed(&self.session_id.0)
            .u8(u8::from(self.accepted))
            .f64(self.distance_m)
            .f64(self.error_radius_m)
            .f64(self.buffer_m)
            .f64(self.likelihood)
            .finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(bytes);
        let session_id = SessionId(r.fixed()?);
        let accepted = match r.u8()? {
            0 => false,
            1 => true,
            _ => return Err(CodecError::Invalid("accepted flag")),
        };
        let v = Self {
            session_id,
            accepted,
            distance_m: r.f64()?,
            error_radius_m: r.f64()?,
            buffer_m: r.f64()?,
            likelihood: r.f64()?,
        };
        r.finish()?;
        Ok(v)
    }
}

/// Session id of a POL_REQUEST or POL_VERDICT payload, without decoding the
/// rest.
pub fn payload_session(bytes: &[u8]) -> Option<SessionId> {
    bytes.get(..16).map(|b| SessionId(b.try_into().unwrap()))
}
