//! Exhaustive adversarial exploration of the two protocol machines.
//!
//! The environment may deliver any pending or adversarial input to either
//! party in any order, any number of times: honest ledger events and frames
//! can be duplicated, delayed or dropped, timers can fire early, and an
//! outsider who knows the session id (but not the codes) can inject frames,
//! forged-certificate ledger events and spoofed ranging responses. Ghost
//! flags record, from the concrete inputs each machine acted on, whether the
//! safety preconditions of AUTHORIZED actually held.

use std::collections::hash_map::DefaultHasher;
use std::collections::{HashSet, VecDeque};
use std::hash::{Hash, Hasher};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::machine::{platform_step, uav_step, Action, Event, PlatformConfig, PolSession, State, Transition};
use super::payload::{LocationClaim, PolRequest, PolVerdict, POL_REQUEST, POL_VERDICT};
use super::PolError;
use crate::geo::{distance, Anchor, AnchorSet, Dimension, Position, RangeMeasurement};
use crate::ids::{AuthCode, SessionId, TxId};
use crate::ledger::ChannelEvent;
use crate::uwb::{FrameType, RangingFrame};

pub type StepFn = fn(&PolSession, &PlatformConfig, &Event) -> Result<Transition, PolError>;

const UAV: &str = "uav-1";
const PAD: &str = "pad-1";
const MALLORY: &str = "mallory";

#[derive(Debug, Clone, Copy)]
pub struct ExploreLimits {
    pub max_states: usize,
}

impl Default for ExploreLimits {
    fn default() -> Self {
        Self { max_states: 100_000 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExploreReport {
    /// Distinct joint states visited.
    pub states: usize,
    /// Event deliveries tried.
    pub transitions: usize,
    pub max_depth: usize,
    pub uav_authorized_states: usize,
    pub platform_authorized_states: usize,
    pub rejected_states: usize,
    pub aborted_states: usize,
    pub violations: Vec<String>,
    /// True if the state cap was hit before the frontier emptied.
    pub truncated: bool,
}

/// Facts about what each machine really acted on.
#[derive(Debug, Clone, Copy, Default, Hash, PartialEq, Eq)]
struct Ghost {
    /// Platform opened the session on a verified request submitted by the UAV.
    request_genuine: bool,
    /// UAV left POLLING on a POLL carrying the true platform code.
    uav_matched: bool,
    /// Platform left POLLING on a RESPONSE carrying the true UAV code.
    platform_matched: bool,
    /// Platform validated a ranging result whose codes all were the true UAV code.
    ranging_genuine: bool,
    /// The verdict the UAV acted on was verified, from the platform, accepted.
    uav_verdict_ok: bool,
    /// The verdict the platform acted on was its own, verified and accepted.
    platform_verdict_ok: bool,
}

#[derive(Clone)]
struct World {
    uav: PolSession,
    platform: PolSession,
    log: Vec<ChannelEvent>,
    air: Vec<RangingFrame>,
    ranging_requested: bool,
    ghost: Ghost,
    depth: usize,
    violation: Option<String>,
}

impl World {
    fn fingerprint(&self) -> u64 {
        // Timer generations only matter relative to the environment, which
        // always addresses the current one, so they are left out.
        let norm = |s: &PolSession| {
            let mut s = s.clone();
            s.timer_gen = 0;
            format!("{s:?}")
        };
        let mut h = DefaultHasher::new();
        norm(&self.uav).hash(&mut h);
        norm(&self.platform).hash(&mut h);
        format!("{:?}", self.log).hash(&mut h);
        format!("{:?}", self.air).hash(&mut h);
        self.ranging_requested.hash(&mut h);
        self.ghost.hash(&mut h);
        self.violation.hash(&mut h);
        h.finish()
    }
}

#[derive(Debug, Clone)]
enum Input {
    Uav(Event),
    Platform(Event),
}

struct Fixture {
    config: PlatformConfig,
    truth: PolSession,
    adversary_ledger: Vec<(ChannelEvent, bool)>,
    adversary_frames: Vec<RangingFrame>,
    honest_accept: Vec<RangeMeasurement>,
    honest_reject: Vec<RangeMeasurement>,
}

fn ledger_event(tx_type: &str, payload: Vec<u8>, submitter: &str, height: u64) -> ChannelEvent {
    ChannelEvent {
        channel: "pol".into(),
        height,
        tx_type: tx_type.into(),
        payload,
        tx_id: TxId([height as u8; 16]),
        submitter: submitter.into(),
        timestamp_ns: 0,
    }
}

fn exact_ranges(anchors: &AnchorSet, target: &Position) -> Vec<RangeMeasurement> {
    anchors
        .anchors()
        .iter()
        .map(|a| RangeMeasurement::new(a.id.clone(), distance(&a.position, target), 0.05, 0))
        .collect()
}

fn fixture() -> Fixture {
    let anchors = AnchorSet::with_dimension(
        vec![
            Anchor::new("A1", Position::planar(2.5, 0.6)),
            Anchor::new("A2", Position::planar(2.5, 1.15)),
            Anchor::new("A3", Position::planar(2.85, 1.15)),
            Anchor::new("A4", Position::planar(2.85, 0.6)),
        ],
        Dimension::Two,
    )
    .expect("fixed layout is valid");
    let claim = Position::planar(3.95, 2.705);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5afe);
    let truth = PolSession::uav(UAV, PAD, LocationClaim::new(claim, 1_000), &mut rng);
    let sid = truth.session_id;
    let fake = AuthCode::random(&mut rng);
    let old_session = SessionId::random(&mut rng);
    let old_code = AuthCode::random(&mut rng);

    let forged_request = |submitter: &str| {
        let payload = PolRequest {
            session_id: sid,
            uav_id: UAV.into(),
            platform_id: PAD.into(),
            code_uav: fake,
            code_platform: AuthCode([0xee; 16]),
            claim,
            claim_timestamp_ns: 1_000.0,
        }
        .encode();
        ledger_event(POL_REQUEST, payload, submitter, 90)
    };
    let forged_verdict = |submitter: &str| {
        let payload = PolVerdict {
            session_id: sid,
            accepted: true,
            distance_m: 0.0,
            error_radius_m: 0.0,
            buffer_m: 1.0,
            likelihood: 1.0,
        }
        .encode();
        ledger_event(POL_VERDICT, payload, submitter, 91)
    };
    let frame = |frame_type, session_id, src: &str, dst: &str, code| RangingFrame {
        frame_type,
        session_id,
        src_id: src.into(),
        dst_id: dst.into(),
        code,
        tx_timestamp_ns: 0,
    };

    Fixture {
        honest_accept: exact_ranges(&anchors, &claim),
        honest_reject: exact_ranges(&anchors, &claim.offset(&Position::planar(2.0, 0.0))),
        config: PlatformConfig {
            anchors,
            dimension: Dimension::Two,
            buffer: 1.0,
            sigma_model: 0.05,
        },
        adversary_ledger: vec![
            // An enrolled insider re-submits the request under its own name.
            (forged_request(MALLORY), true),
            // The UAV's name on a certificate the registry does not vouch for.
            (forged_request(UAV), false),
            (forged_verdict(MALLORY), true),
            (forged_verdict(PAD), false),
        ],
        adversary_frames: vec![
            frame(FrameType::Poll, sid, PAD, UAV, fake),
            frame(FrameType::Poll, old_session, PAD, UAV, old_code),
            frame(FrameType::Final, sid, PAD, UAV, fake),
            frame(FrameType::Response, sid, UAV, PAD, fake),
        ],
        truth,
    }
}

fn inputs(fx: &Fixture, w: &World) -> Vec<Input> {
    let mut out = vec![Input::Uav(Event::Start), Input::Platform(Event::Start)];
    for ev in &w.log {
        let e = Event::Ledger {
            event: ev.clone(),
            submitter_verified: true,
        };
        out.push(Input::Uav(e.clone()));
        out.push(Input::Platform(e));
    }
    for (ev, verified) in &fx.adversary_ledger {
        let e = Event::Ledger {
            event: ev.clone(),
            submitter_verified: *verified,
        };
        out.push(Input::Uav(e.clone()));
        out.push(Input::Platform(e));
    }
    for f in w.air.iter().chain(&fx.adversary_frames) {
        let e = Event::UwbFrame(f.clone());
        out.push(if f.dst_id == UAV {
            Input::Uav(e)
        } else {
            Input::Platform(e)
        });
    }
    for s in [&w.uav, &w.platform] {
        for gen in [s.timer_gen, s.timer_gen.wrapping_sub(1)] {
            let e = Event::Timeout { gen };
            out.push(if s.party == super::Party::Uav {
                Input::Uav(e)
            } else {
                Input::Platform(e)
            });
        }
    }
    if w.ranging_requested {
        let genuine: Vec<(String, AuthCode)> = fx
            .config
            .anchors
            .anchors()
            .iter()
            .map(|a| (a.id.clone(), fx.truth.code_uav))
            .collect();
        let spoofed: Vec<(String, AuthCode)> = genuine.iter().map(|(a, _)| (a.clone(), AuthCode([0x5a; 16]))).collect();
        // The UAV radio answers with the true code only while it is ranging.
        if w.uav.state == State::Ranging {
            for m in [&fx.honest_accept, &fx.honest_reject] {
                out.push(Input::Platform(Event::RangingResult {
                    measurements: m.clone(),
                    codes_received: genuine.clone(),
                }));
            }
        }
        out.push(Input::Platform(Event::RangingResult {
            measurements: fx.honest_accept.clone(),
            codes_received: spoofed,
        }));
    }
    out
}

fn is_genuine_honest_event(w: &World, ev: &ChannelEvent, verified: bool) -> bool {
    verified && w.log.contains(ev)
}

fn apply(fx: &Fixture, w: &World, input: &Input, uav_fn: StepFn, platform_fn: StepFn) -> Option<World> {
    let (is_uav, ev) = match input {
        Input::Uav(e) => (true, e),
        Input::Platform(e) => (false, e),
    };
    let before = if is_uav { &w.uav } else { &w.platform };
    let (after, actions) = if is_uav {
        uav_fn(before, &fx.config, ev).ok()?
    } else {
        platform_fn(before, &fx.config, ev).ok()?
    };
    let mut n = w.clone();
    n.depth += 1;
    let truth = &fx.truth;

    // Ghost bookkeeping from the concrete input that caused a transition.
    let (from, to) = (before.state, after.state);
    if from != to {
        match (is_uav, from, to, ev) {
            (false, State::Requested, State::Polling, Event::Ledger { event, submitter_verified }) => {
                n.ghost.request_genuine = is_genuine_honest_event(w, event, *submitter_verified)
                    && event.submitter == UAV
                    && event.tx_type == POL_REQUEST;
            }
            (true, State::Polling, State::Ranging, Event::UwbFrame(f)) => {
                n.ghost.uav_matched = f.code == truth.code_platform && f.session_id == truth.session_id;
            }
            (false, State::Polling, State::Ranging, Event::UwbFrame(f)) => {
                n.ghost.platform_matched = f.code == truth.code_uav && f.session_id == truth.session_id;
            }
            (false, State::Ranging, State::Validating, Event::RangingResult { codes_received, .. }) => {
                n.ghost.ranging_genuine =
                    !codes_received.is_empty() && codes_received.iter().all(|(_, c)| *c == truth.code_uav);
            }
            (_, _, State::Authorized | State::Rejected, Event::Ledger { event, submitter_verified }) => {
                let ok = is_genuine_honest_event(w, event, *submitter_verified)
                    && event.submitter == PAD
                    && PolVerdict::decode(&event.payload).is_ok_and(|v| v.accepted);
                if is_uav {
                    n.ghost.uav_verdict_ok = ok;
                } else {
                    n.ghost.platform_verdict_ok = ok;
                }
            }
            _ => {}
        }
    }

    // A RESPONSE must never answer a POLL that lacked the true code.
    if is_uav {
        if let Event::UwbFrame(f) = ev {
            let answered = actions
                .iter()
                .any(|a| matches!(a, Action::SendUwbFrame(r) if r.frame_type == FrameType::Response));
            if answered && (f.frame_type != FrameType::Poll || f.code != truth.code_platform) {
                n.violation = Some(format!("depth {}: RESPONSE sent to a POLL without the session code", n.depth));
                return Some(n);
            }
        }
    }

    let height = n.log.len() as u64 + 1;
    let who = after.self_id.clone();
    for a in actions {
        match a {
            Action::SubmitTransaction { tx_type, payload } => {
                n.log.push(ledger_event(tx_type, payload, &who, height));
            }
            Action::SendUwbFrame(f) => {
                if !n.air.contains(&f) {
                    n.air.push(f);
                }
            }
            Action::StartRanging(_) => n.ranging_requested = true,
            Action::SetTimer { .. } | Action::RecordVerdict(_) => {}
        }
    }
    if is_uav {
        n.uav = after;
    } else {
        n.platform = after;
    }
    Some(n)
}

fn check(w: &World, report: &mut ExploreReport) {
    if let Some(v) = &w.violation {
        report.violations.push(v.clone());
        return;
    }
    let g = w.ghost;
    let common = g.request_genuine && g.uav_matched && g.platform_matched && g.ranging_genuine;
    if w.uav.state == State::Authorized {
        report.uav_authorized_states += 1;
        if !(common && g.uav_verdict_ok) {
            report
                .violations
                .push(format!("depth {}: UAV AUTHORIZED with {g:?}", w.depth));
        }
    }
    if w.platform.state == State::Authorized {
        report.platform_authorized_states += 1;
        if !(common && g.platform_verdict_ok) {
            report
                .violations
                .push(format!("depth {}: platform AUTHORIZED with {g:?}", w.depth));
        }
    }
    if w.uav.state == State::Rejected || w.platform.state == State::Rejected {
        report.rejected_states += 1;
    }
    if w.uav.state == State::Aborted || w.platform.state == State::Aborted {
        report.aborted_states += 1;
    }
}

fn real_uav(s: &PolSession, _: &PlatformConfig, ev: &Event) -> Result<Transition, PolError> {
    uav_step(s, ev)
}

/// Explores the shipped machines.
pub fn explore(limits: ExploreLimits) -> ExploreReport {
    explore_with(limits, real_uav, platform_step)
}

/// Explores arbitrary step functions against the same adversarial
/// environment; used to confirm the explorer catches broken machines.
pub fn explore_with(limits: ExploreLimits, uav_fn: StepFn, platform_fn: StepFn) -> ExploreReport {
    let fx = fixture();
    let start = World {
        uav: fx.truth.clone(),
        platform: PolSession::platform(PAD),
        log: Vec::new(),
        air: Vec::new(),
        ranging_requested: false,
        ghost: Ghost::default(),
        depth: 0,
        violation: None,
    };
    let mut report = ExploreReport::default();
    let mut seen = HashSet::new();
    seen.insert(start.fingerprint());
    let mut frontier = VecDeque::from([start]);
    while let Some(w) = frontier.pop_front() {
        report.states += 1;
        report.max_depth = report.max_depth.max(w.depth);
        check(&w, &mut report);
        if w.violation.is_some() || (w.uav.state.is_terminal() && w.platform.state.is_terminal()) {
            continue;
        }
        for input in inputs(&fx, &w) {
            report.transitions += 1;
            let Some(next) = apply(&fx, &w, &input, uav_fn, platform_fn) else {
                continue;
            };
            if seen.insert(next.fingerprint()) {
                if seen.len() > limits.max_states {
                    report.truncated = true;
                    return report;
                }
                frontier.push_back(next);
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_ranges_decide_as_intended() {
        let fx = fixture();
        assert_eq!(fx.honest_accept.len(), 4);
        assert!(fx.honest_reject[0].distance > fx.honest_accept[0].distance);
    }
}
