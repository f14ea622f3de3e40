//! UAV-side and platform-side protocol machines.
//!
//! Both are pure functions from `(session, event)` to `(session', actions)`.
//! The orchestrator owns the sessions, performs the actions and feeds the
//! resulting ledger events, frames, ranging results and timer expiries back in.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::payload::{payload_session, LocationClaim, PolRequest, PolVerdict, POL_REQUEST, POL_VERDICT};
use super::validate::{validate_location, Verdict};
use super::PolError;
use crate::geo::{multilaterate, AnchorSet, Dimension, EstimateResult, RangeMeasurement};
use crate::ids::{AuthCode, SessionId};
use crate::ledger::ChannelEvent;
use crate::uwb::{FrameType, RangingFrame};
use rand::RngCore;

/// Retry timer period in simulated time.
pub const RETRY_TIMEOUT_NS: u64 = 500_000_000;
/// Expiries tolerated in one waiting state before aborting.
pub const MAX_RETRIES: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum State {
    Init,
    Requested,
    Polling,
    Ranging,
    Validating,
    Authorized,
    Rejected,
    Aborted,
}

impl State {
    pub fn is_terminal(self) -> bool {
        matches!(self, State::Authorized | State::Rejected | State::Aborted)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            State::Init => "INIT",
            State::Requested => "REQUESTED",
            State::Polling => "POLLING",
            State::Ranging => "RANGING",
            State::Validating => "VALIDATING",
            State::Authorized => "AUTHORIZED",
            State::Rejected => "REJECTED",
            State::Aborted => "ABORTED",
        }
    }

    fn waits_on_timer(self) -> bool {
        matches!(self, State::Polling | State::Ranging | State::Validating)
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AbortReason {
    CodeMismatch,
    IdentityMismatch,
    Timeout,
    ValidationUnavailable,
}

impl fmt::Display for AbortReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AbortReason::CodeMismatch => "code-mismatch",
            AbortReason::IdentityMismatch => "identity-mismatch",
            AbortReason::Timeout => "timeout",
            AbortReason::ValidationUnavailable => "validation-unavailable",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Party {
    Uav,
    Platform,
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Party::Uav => "uav",
            Party::Platform => "platform",
        })
    }
}

/// One party's view of a proof-of-location session.
#[derive(Debug, Clone, PartialEq)]
pub struct PolSession {
    pub party: Party,
    /// This party's own identity and radio id.
    pub self_id: String,
    pub session_id: SessionId,
    pub uav_id: String,
    pub platform_id: String,
    pub code_uav: AuthCode,
    pub code_platform: AuthCode,
    pub state: State,
    pub claim: Option<LocationClaim>,
    pub estimate: Option<EstimateResult>,
    pub verdict: Option<Verdict>,
    pub abort_reason: Option<AbortReason>,
    pub timer_gen: u64,
    pub retries: u32,
}

impl PolSession {
    /// UAV-side session with a fresh session id and code pair.
    pub fn uav<R: RngCore + ?Sized>(uav_id: &str, platform_id: &str, claim: LocationClaim, rng: &mut R) -> Self {
        let session_id = SessionId::random(rng);
        let (code_uav, code_platform) = super::generate_codes(rng);
        Self {
            party: Party::Uav,
            self_id: uav_id.to_string(),
            session_id,
            uav_id: uav_id.to_string(),
            platform_id: platform_id.to_string(),
            code_uav,
            code_platform,
            state: State::Init,
            claim: Some(claim),
            estimate: None,
            verdict: None,
            abort_reason: None,
            timer_gen: 0,
            retries: 0,
        }
    }

    /// Platform-side session; everything else is learned from the request.
    pub fn platform(platform_id: &str) -> Self {
        Self {
            party: Party::Platform,
            self_id: platform_id.to_string(),
            session_id: SessionId::default(),
            uav_id: String::new(),
            platform_id: platform_id.to_string(),
            code_uav: AuthCode::default(),
            code_platform: AuthCode::default(),
            state: State::Init,
            claim: None,
            estimate: None,
            verdict: None,
            abort_reason: None,
            timer_gen: 0,
            retries: 0,
        }
    }

    pub fn request(&self) -> Option<PolRequest> {
        let claim = self.claim.as_ref()?;
        Some(PolRequest {
            session_id: self.session_id,
            uav_id: self.uav_id.clone(),
            platform_id: self.platform_id.clone(),
            code_uav: self.code_uav,
            code_platform: self.code_platform,
            claim: claim.position,
            claim_timestamp_ns: claim.timestamp_ns as f64,
        })
    }

    fn frame(&self, frame_type: FrameType, dst: &str, code: AuthCode) -> RangingFrame {
        RangingFrame {
            frame_type,
            session_id: self.session_id,
            src_id: self.self_id.clone(),
            dst_id: dst.to_string(),
            code,
            tx_timestamp_ns: 0,
        }
    }

    fn enter(&mut self, state: State, acts: &mut Vec<Action>) {
        if state != self.state {
            self.retries = 0;
        }
        self.state = state;
        if state.waits_on_timer() {
            self.arm(acts);
        }
    }

    fn arm(&mut self, acts: &mut Vec<Action>) {
        self.timer_gen += 1;
        acts.push(Action::SetTimer {
            gen: self.timer_gen,
            after_ns: RETRY_TIMEOUT_NS,
        });
    }

    fn abort(&mut self, reason: AbortReason) {
        self.state = State::Aborted;
        self.abort_reason = Some(reason);
        self.timer_gen += 1;
    }
}

/// Platform-side inputs not carried by the session.
#[derive(Debug, Clone, PartialEq)]
pub struct PlatformConfig {
    pub anchors: AnchorSet,
    pub dimension: Dimension,
    pub buffer: f64,
    pub sigma_model: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Start,
    /// A committed transaction. `submitter_verified` is the receiver's own
    /// check of the submitter's certificate at delivery time.
    Ledger {
        event: ChannelEvent,
        submitter_verified: bool,
    },
    UwbFrame(RangingFrame),
    RangingResult {
        measurements: Vec<RangeMeasurement>,
        codes_received: Vec<(String, AuthCode)>,
    },
    Timeout {
        gen: u64,
    },
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::Start => "start",
            Event::Ledger { .. } => "ledger_event",
            Event::UwbFrame(_) => "uwb_frame",
            Event::RangingResult { .. } => "ranging_result",
            Event::Timeout { .. } => "timeout",
        }
    }
}

/// Codes the platform's anchors embed while ranging the UAV.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RangingPlan {
    pub session_id: SessionId,
    pub poll_code: AuthCode,
    pub expected_reply: AuthCode,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    SubmitTransaction { tx_type: &'static str, payload: Vec<u8> },
    SendUwbFrame(RangingFrame),
    StartRanging(RangingPlan),
    SetTimer { gen: u64, after_ns: u64 },
    RecordVerdict(Verdict),
}

pub type Transition = (PolSession, Vec<Action>);

fn violation(s: &PolSession, ev: &Event) -> PolError {
    PolError::ProtocolViolation {
        party: s.party,
        state: s.state,
        event: ev.kind(),
    }
}

fn for_session(s: &PolSession, ev: &ChannelEvent) -> bool {
    payload_session(&ev.payload) == Some(s.session_id)
}

pub fn uav_step(s: &PolSession, ev: &Event) -> Result<Transition, PolError> {
    let mut n = s.clone();
    let mut acts = Vec::new();
    if s.state.is_terminal() {
        return Ok((n, acts));
    }
    match ev {
        Event::Start => {
            if s.state != State::Init {
                return Err(violation(s, ev));
            }
            let req = s.request().ok_or_else(|| violation(s, ev))?;
            acts.push(Action::SubmitTransaction {
                tx_type: POL_REQUEST,
                payload: req.encode(),
            });
            n.enter(State::Requested, &mut acts);
        }
        Event::Ledger {
            event,
            submitter_verified,
        } => {
            if !for_session(s, event) {
                return Ok((n, acts));
            }
            match (event.tx_type.as_str(), s.state) {
                (POL_REQUEST, State::Requested) => n.enter(State::Polling, &mut acts),
                (POL_VERDICT, State::Ranging | State::Validating) => {
                    if !submitter_verified || event.submitter != s.platform_id {
                        n.abort(AbortReason::IdentityMismatch);
                    } else {
                        let v = Verdict::from_payload(&PolVerdict::decode(&event.payload)?);
                        n.verdict = Some(v);
                        acts.push(Action::RecordVerdict(v));
                        n.state = if v.accepted { State::Authorized } else { State::Rejected };
                        n.timer_gen += 1;
                    }
                }
                _ => {}
            }
        }
        Event::UwbFrame(f) => {
            if f.dst_id != s.self_id {
                return Ok((n, acts));
            }
            let genuine = f.session_id == s.session_id && f.code == s.code_platform && f.src_id == s.platform_id;
            match (f.frame_type, s.state) {
                (FrameType::Poll, State::Polling | State::Ranging) => {
                    if !genuine {
                        n.abort(AbortReason::CodeMismatch);
                    } else {
                        acts.push(Action::SendUwbFrame(s.frame(
                            FrameType::Response,
                            &s.platform_id,
                            s.code_uav,
                        )));
                        if s.state == State::Polling {
                            n.enter(State::Ranging, &mut acts);
                        } else {
                            n.arm(&mut acts);
                        }
                    }
                }
                (FrameType::Final, State::Ranging) => {
                    if !genuine {
                        n.abort(AbortReason::CodeMismatch);
                    } else {
                        n.enter(State::Validating, &mut acts);
                    }
                }
                _ => {}
            }
        }
        Event::RangingResult { .. } => return Err(violation(s, ev)),
        Event::Timeout { gen } => {
            if *gen == s.timer_gen && s.state.waits_on_timer() {
                if s.retries < MAX_RETRIES {
                    n.retries += 1;
                    n.arm(&mut acts);
                } else {
                    n.abort(AbortReason::Timeout);
                }
            }
        }
    }
    Ok((n, acts))
}

pub fn platform_step(s: &PolSession, cfg: &PlatformConfig, ev: &Event) -> Result<Transition, PolError> {
    let mut n = s.clone();
    let mut acts = Vec::new();
    if s.state.is_terminal() {
        return Ok((n, acts));
    }
    let poll = |n: &PolSession| Action::SendUwbFrame(n.frame(FrameType::Poll, &n.uav_id, n.code_platform));
    let ranging = |n: &PolSession| {
        Action::StartRanging(RangingPlan {
            session_id: n.session_id,
            poll_code: n.code_platform,
            expected_reply: n.code_uav,
        })
    };
    match ev {
        Event::Start => {
            if s.state != State::Init {
                return Err(violation(s, ev));
            }
            n.enter(State::Requested, &mut acts);
        }
        Event::Ledger {
            event,
            submitter_verified,
        } => match (event.tx_type.as_str(), s.state) {
            (POL_REQUEST, State::Requested) => {
                let req = PolRequest::decode(&event.payload)?;
                if req.platform_id != s.self_id {
                    return Ok((n, acts));
                }
                n.session_id = req.session_id;
                n.uav_id = req.uav_id.clone();
                n.code_uav = req.code_uav;
                n.code_platform = req.code_platform;
                n.claim = Some(LocationClaim {
                    position: req.claim,
                    timestamp_ns: req.claim_timestamp_ns as u64,
                    source_tag: "ledger".into(),
                });
                if !submitter_verified || event.submitter != req.uav_id {
                    n.abort(AbortReason::IdentityMismatch);
                } else {
                    acts.push(poll(&n));
                    n.enter(State::Polling, &mut acts);
                }
            }
            (POL_VERDICT, State::Validating) if for_session(s, event) => {
                if *submitter_verified && event.submitter == s.self_id {
                    let v = Verdict::from_payload(&PolVerdict::decode(&event.payload)?);
                    n.verdict = Some(v);
                    acts.push(Action::RecordVerdict(v));
                    n.state = if v.accepted { State::Authorized } else { State::Rejected };
                    n.timer_gen += 1;
                }
            }
            _ => {}
        },
        Event::UwbFrame(f) => {
            if f.dst_id != s.self_id || f.frame_type != FrameType::Response {
                return Ok((n, acts));
            }
            let genuine = f.session_id == s.session_id && f.code == s.code_uav && f.src_id == s.uav_id;
            match s.state {
                State::Polling if genuine => {
                    acts.push(ranging(&n));
                    n.enter(State::Ranging, &mut acts);
                }
                State::Polling | State::Ranging if !genuine => n.abort(AbortReason::CodeMismatch),
                _ => {}
            }
        }
        Event::RangingResult {
            measurements,
            codes_received,
        } => {
            if s.state != State::Ranging {
                return Err(violation(s, ev));
            }
            if codes_received.is_empty() || codes_received.iter().any(|(_, c)| *c != s.code_uav) {
                n.abort(AbortReason::CodeMismatch);
                return Ok((n, acts));
            }
            let claim = s.claim.as_ref().ok_or_else(|| violation(s, ev))?;
            let verdict = multilaterate(&cfg.anchors, measurements, cfg.dimension, None)
                .map_err(PolError::from)
                .and_then(|est| {
                    let v = validate_location(claim, &est, cfg.buffer, cfg.sigma_model, cfg.dimension)?;
                    Ok((est, v))
                });
            match verdict {
                Ok((est, v)) => {
                    n.estimate = Some(est);
                    n.verdict = Some(v);
                    acts.push(Action::SubmitTransaction {
                        tx_type: POL_VERDICT,
                        payload: v.to_payload(s.session_id).encode(),
                    });
                    acts.push(Action::SendUwbFrame(s.frame(FrameType::Final, &s.uav_id, s.code_platform)));
                    n.enter(State::Validating, &mut acts);
                }
                Err(PolError::InvalidParameter(m)) => return Err(PolError::InvalidParameter(m)),
                Err(_) => n.abort(AbortReason::ValidationUnavailable),
            }
        }
        Event::Timeout { gen } => {
            if *gen == s.timer_gen && s.state.waits_on_timer() {
                if s.retries < MAX_RETRIES {
                    n.retries += 1;
                    match s.state {
                        State::Polling => acts.push(poll(&n)),
                        State::Ranging => acts.push(ranging(&n)),
                        _ => {}
                    }
                    n.arm(&mut acts);
                } else {
                    n.abort(AbortReason::Timeout);
                }
            }
        }
    }
    Ok((n, acts))
}
