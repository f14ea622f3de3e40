//! Discrete-event orchestration of one session across the ledger and radio
//! planes.

use std::collections::BTreeMap;

use super::machine::{platform_step, uav_step, AbortReason, Action, Event, Party, PlatformConfig, PolSession, State};
use super::PolError;
use crate::geo::RangeMeasurement;
use crate::ledger::{Identity, Ledger, Receipt, Subscription};
use crate::uwb::{
    decode_frame, encode_frame, measure_target, ChannelModel, ExchangeRequest, MismatchAudit, RadioNode, RangingFrame,
    UwbError,
};

/// Commit-to-delivery delay of channel events.
pub const LEDGER_LATENCY_NS: u64 = 2_000_000;
/// Delivery delay of handshake frames.
pub const FRAME_LATENCY_NS: u64 = 200_000;
const MAX_STEPS: usize = 10_000;

/// The participants and radio world of one session.
pub struct SessionParties<'a> {
    pub ledger: &'a Ledger,
    pub channel: &'a str,
    pub uav: &'a Identity,
    pub platform: &'a Identity,
    /// The UAV's radio at its true position.
    pub uav_radio: &'a RadioNode,
    pub anchors: &'a [RadioNode],
    pub config: &'a PlatformConfig,
}

/// Attacker frame delivered to `to` the moment `when.0` enters `when.1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Injection {
    pub when: (Party, State),
    pub to: Party,
    pub frame: RangingFrame,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub t_ns: u64,
    pub party: Party,
    pub event: String,
    pub from: State,
    pub to: State,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionReport {
    pub uav: PolSession,
    pub platform: PolSession,
    /// ABORTED if either side aborted, else the UAV's final state.
    pub outcome: State,
    /// Reason of the first abort on either side.
    pub abort_reason: Option<AbortReason>,
    pub trace: Vec<TraceEntry>,
    /// Every frame put on the air, handshake and ranging alike.
    pub frames: Vec<RangingFrame>,
    pub measurements: Vec<RangeMeasurement>,
    pub audits: Vec<MismatchAudit>,
    pub ranging_started: bool,
    pub request_tx: Option<Receipt>,
    pub verdict_tx: Option<Receipt>,
    pub end_ns: u64,
}

struct Queued {
    to: Party,
    event: Event,
    label: String,
}

struct Run<'a, 'b> {
    p: &'b SessionParties<'a>,
    radio: &'b mut ChannelModel,
    queue: BTreeMap<(u64, u64), Queued>,
    seq: u64,
    subs: [(Party, Subscription); 2],
    report: SessionReport,
    injections: Vec<Option<Injection>>,
}

impl Run<'_, '_> {
    fn push(&mut self, at: u64, to: Party, event: Event, label: String) {
        self.seq += 1;
        self.queue.insert((at, self.seq), Queued { to, event, label });
    }

    fn session(&self, party: Party) -> &PolSession {
        match party {
            Party::Uav => &self.report.uav,
            Party::Platform => &self.report.platform,
        }
    }

    fn identity(&self, party: Party) -> &Identity {
        match party {
            Party::Uav => self.p.uav,
            Party::Platform => self.p.platform,
        }
    }

    fn trace(&mut self, t_ns: u64, party: Party, event: String, from: State, to: State, note: Option<String>) {
        self.report.trace.push(TraceEntry {
            t_ns,
            party,
            event,
            from,
            to,
            note,
        });
    }

    fn deliver(&mut self, t: u64, q: Queued) -> Result<(), PolError> {
        let before = self.session(q.to).clone();
        let step = match q.to {
            Party::Uav => uav_step(&before, &q.event),
            Party::Platform => platform_step(&before, self.p.config, &q.event),
        };
        let (after, actions) = match step {
            Ok(t) => t,
            Err(e) => {
                self.trace(t, q.to, q.label, before.state, before.state, Some(e.to_string()));
                return Ok(());
            }
        };

        // Submissions go first: if the ledger refuses one, the whole step is
        // rolled back.
        for a in &actions {
            if let Action::SubmitTransaction { tx_type, payload } = a {
                self.p.ledger.advance_to(t);
                let submitted =
                    self.p
                        .ledger
                        .submit_transaction(self.identity(q.to), self.p.channel, tx_type, payload.clone());
                match submitted {
                    Ok(receipt) => {
                        if *tx_type == super::POL_REQUEST {
                            self.report.request_tx = Some(receipt);
                        } else {
                            self.report.verdict_tx = Some(receipt);
                        }
                    }
                    Err(e) => {
                        let note = format!("{tx_type} rejected: {e}");
                        self.trace(t, q.to, q.label, before.state, before.state, Some(note));
                        return Ok(());
                    }
                }
            }
        }

        if after.state == State::Aborted && before.state != State::Aborted && self.report.abort_reason.is_none() {
            self.report.abort_reason = after.abort_reason;
        }
        let (from, to) = (before.state, after.state);
        match q.to {
            Party::Uav => self.report.uav = after,
            Party::Platform => self.report.platform = after,
        }
        self.trace(t, q.to, q.label, from, to, None);

        for a in actions {
            match a {
                Action::SubmitTransaction { .. } => self.fan_out(t)?,
                Action::SendUwbFrame(frame) => self.send(t, frame, false)?,
                Action::StartRanging(plan) => self.range(t, plan)?,
                Action::SetTimer { gen, after_ns } => {
                    self.push(t + after_ns, q.to, Event::Timeout { gen }, format!("timeout gen {gen}"))
                }
                Action::RecordVerdict(_) => {}
            }
        }

        if from != to {
            for slot in &mut self.injections {
                if slot.as_ref().is_some_and(|i| i.when == (q.to, to)) {
                    let inj = slot.take().unwrap();
                    let label = frame_label(&inj.frame, true);
                    self.report.frames.push(inj.frame.clone());
                    self.seq += 1;
                    self.queue.insert(
                        (t, self.seq),
                        Queued {
                            to: inj.to,
                            event: Event::UwbFrame(inj.frame),
                            label,
                        },
                    );
                }
            }
        }
        Ok(())
    }

    fn fan_out(&mut self, t: u64) -> Result<(), PolError> {
        let mut pending = Vec::new();
        for (party, sub) in &self.subs {
            for ev in sub.drain() {
                pending.push((*party, ev));
            }
        }
        for (party, ev) in pending {
            let label = format!("ledger {} h={} from {}", ev.tx_type, ev.height, ev.submitter);
            self.push(
                t + LEDGER_LATENCY_NS,
                party,
                Event::Ledger {
                    event: ev,
                    submitter_verified: false,
                },
                label,
            );
        }
        Ok(())
    }

    fn send(&mut self, t: u64, mut frame: RangingFrame, injected: bool) -> Result<(), PolError> {
        frame.tx_timestamp_ns = t;
        let wire = encode_frame(&frame).map_err(UwbError::from)?;
        self.report.frames.push(frame.clone());
        if self.radio.message_lost(&frame.src_id, &frame.dst_id) {
            return Ok(());
        }
        let frame = decode_frame(&wire).map_err(UwbError::from)?;
        let to = if frame.dst_id == self.report.uav.self_id {
            Party::Uav
        } else if frame.dst_id == self.report.platform.self_id {
            Party::Platform
        } else {
            return Ok(());
        };
        let label = frame_label(&frame, injected);
        self.push(t + FRAME_LATENCY_NS, to, Event::UwbFrame(frame), label);
        Ok(())
    }

    fn range(&mut self, t: u64, plan: super::RangingPlan) -> Result<(), PolError> {
        self.report.ranging_started = true;
        let uav = &self.report.uav;
        // The UAV radio only answers while its session is ranging.
        if uav.state != State::Ranging {
            return Ok(());
        }
        let req = ExchangeRequest {
            session_id: plan.session_id,
            poll_code: plan.poll_code,
            responder_expects: uav.code_platform,
            reply_code: uav.code_uav,
            start_ns: t,
        };
        match measure_target(self.p.anchors, self.p.uav_radio, self.radio, &req, self.p.config.dimension) {
            Ok(survey) => {
                self.report.frames.extend(survey.frames);
                self.report.audits.extend(survey.audits);
                self.report.measurements = survey.measurements.clone();
                let label = format!("ranging {} ranges", survey.measurements.len());
                self.push(
                    survey.end_ns,
                    Party::Platform,
                    Event::RangingResult {
                        measurements: survey.measurements,
                        codes_received: survey.codes_received,
                    },
                    label,
                );
            }
            Err(UwbError::InsufficientRanges { survey, .. }) => {
                self.report.frames.extend(survey.frames);
                self.report.audits.extend(survey.audits);
            }
            Err(e) => return Err(e.into()),
        }
        Ok(())
    }
}

fn frame_label(f: &RangingFrame, injected: bool) -> String {
    format!(
        "uwb {:?} {}->{}{}",
        f.frame_type,
        f.src_id,
        f.dst_id,
        if injected { " (injected)" } else { "" }
    )
}

/// Drives both machines from INIT until both are terminal or no further
/// event is pending.
///
/// A submission the ledger refuses undoes the step that produced it, so an
/// unenrolled UAV never leaves INIT. Channel events are re-verified against
/// the membership registry on delivery.
pub fn run_session(
    parties: &SessionParties<'_>,
    radio: &mut ChannelModel,
    uav: PolSession,
    start_ns: u64,
    injections: Vec<Injection>,
) -> Result<SessionReport, PolError> {
    let platform = PolSession::platform(parties.platform.name());
    let subs = [
        (Party::Uav, parties.ledger.subscribe(parties.channel, None)?),
        (Party::Platform, parties.ledger.subscribe(parties.channel, None)?),
    ];
    let mut run = Run {
        p: parties,
        radio,
        queue: BTreeMap::new(),
        seq: 0,
        subs,
        report: SessionReport {
            uav,
            platform,
            outcome: State::Init,
            abort_reason: None,
            trace: Vec::new(),
            frames: Vec::new(),
            measurements: Vec::new(),
            audits: Vec::new(),
            ranging_started: false,
            request_tx: None,
            verdict_tx: None,
            end_ns: start_ns,
        },
        injections: injections.into_iter().map(Some).collect(),
    };
    run.push(start_ns, Party::Platform, Event::Start, "start".into());
    run.push(start_ns, Party::Uav, Event::Start, "start".into());

    let mut steps = 0;
    while let Some(((t, _), mut q)) = run.queue.pop_first() {
        if run.report.uav.state.is_terminal() && run.report.platform.state.is_terminal() {
            break;
        }
        steps += 1;
        if steps > MAX_STEPS {
            return Err(PolError::Stalled(MAX_STEPS));
        }
        if let Event::Ledger {
            event,
            submitter_verified,
        } = &mut q.event
        {
            parties.ledger.advance_to(t);
            *submitter_verified = parties
                .ledger
                .certificate_of(&event.submitter)
                .is_some_and(|c| parties.ledger.verify_identity(&c).is_valid());
        }
        run.report.end_ns = t;
        run.deliver(t, q)?;
    }

    let r = &mut run.report;
    r.outcome = if r.abort_reason.is_some() {
        State::Aborted
    } else {
        r.uav.state
    };
    Ok(run.report)
}
