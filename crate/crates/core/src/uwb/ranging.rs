use serde::{Deserialize, Serialize};

use super::channel::ChannelModel;
use super::frame::{check_node_id, decode_frame, encode_frame, FrameType, RangingFrame};
use super::UwbError;
use crate::geo::{distance, round_trip_ns, twr_distance, Dimension, Position, RangeMeasurement, SPEED_OF_LIGHT};
use crate::ids::{AuthCode, SessionId};

/// Default responder turnaround, 300 us.
pub const DEFAULT_REPLY_DELAY_NS: f64 = 300_000.0;

/// Spacing between consecutive exchanges of one survey.
pub const EXCHANGE_SLOT_NS: u64 = 1_000_000;

/// Measurements always carry a strictly positive sigma; a noiseless channel
/// reports this floor.
pub const MIN_RANGE_SIGMA: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadioNode {
    pub node_id: String,
    pub position: Position,
    /// Offset of this node's local clock from simulation time, ns.
    pub clock_offset_ns: f64,
    pub reply_delay_ns: f64,
}

impl RadioNode {
    pub fn new(node_id: impl Into<String>, position: Position) -> Self {
        Self {
            node_id: node_id.into(),
            position,
            clock_offset_ns: 0.0,
            reply_delay_ns: DEFAULT_REPLY_DELAY_NS,
        }
    }

    pub fn with_clock_offset(mut self, offset_ns: f64) -> Self {
        self.clock_offset_ns = offset_ns;
        self
    }

    pub fn validate(&self) -> Result<(), UwbError> {
        check_node_id(&self.node_id)?;
        if !(self.reply_delay_ns > 0.0 && self.reply_delay_ns.is_finite()) {
            return Err(UwbError::InvalidNode(format!(
                "{}: reply delay must be > 0",
                self.node_id
            )));
        }
        if !self.position.is_finite() || !self.clock_offset_ns.is_finite() {
            return Err(UwbError::InvalidNode(format!("{}: non-finite state", self.node_id)));
        }
        Ok(())
    }

    fn local_time(&self, sim_ns: f64) -> f64 {
        sim_ns + self.clock_offset_ns
    }
}

/// Codes and timing for one poll/response exchange.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExchangeRequest {
    pub session_id: SessionId,
    /// Code the initiator embeds in its POLL.
    pub poll_code: AuthCode,
    /// Code the responder requires before it answers.
    pub responder_expects: AuthCode,
    /// Code the responder returns in its RESPONSE.
    pub reply_code: AuthCode,
    /// Simulation time at which the POLL leaves the initiator.
    pub start_ns: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimeoutCause {
    PollLost,
    ResponseLost,
    OutOfRange,
    /// The responder stayed silent, e.g. because the POLL code did not match.
    NoReply,
}

/// Responder-side record of a POLL that was refused.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchAudit {
    pub responder: String,
    pub initiator: String,
    pub session_id: SessionId,
    pub received_code: AuthCode,
    pub at_ns: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExchangeOutcome {
    Ranged {
        measurement: RangeMeasurement,
        code_received: AuthCode,
    },
    /// What the initiator observes whenever no valid RESPONSE arrives.
    Timeout(TimeoutCause),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exchange {
    pub outcome: ExchangeOutcome,
    pub audit: Option<MismatchAudit>,
    /// Frames that went on air, in order.
    pub frames: Vec<RangingFrame>,
}

impl Exchange {
    fn timeout(cause: TimeoutCause, frames: Vec<RangingFrame>) -> Self {
        Self {
            outcome: ExchangeOutcome::Timeout(cause),
            audit: None,
            frames,
        }
    }
}

/// One SS-TWR poll/response exchange; the initiator's id is the anchor id of
/// the resulting measurement.
///
/// The responder only answers a POLL whose embedded code equals
/// `responder_expects`; otherwise it stays silent and logs a
/// [`MismatchAudit`]. The initiator sees that as a timeout.
pub fn ranging_exchange(
    initiator: &RadioNode,
    responder: &RadioNode,
    channel: &mut ChannelModel,
    req: &ExchangeRequest,
) -> Result<Exchange, UwbError> {
    initiator.validate()?;
    responder.validate()?;
    let true_distance = distance(&initiator.position, &responder.position);
    let t0 = req.start_ns as f64;
    let poll_tx_local = initiator.local_time(t0);

    let poll = RangingFrame {
        frame_type: FrameType::Poll,
        session_id: req.session_id,
        src_id: initiator.node_id.clone(),
        dst_id: responder.node_id.clone(),
        code: req.poll_code,
        tx_timestamp_ns: poll_tx_local.max(0.0) as u64,
    };
    let wire = encode_frame(&poll)?;
    let mut frames = vec![poll];

    if true_distance > channel.params().max_range {
        return Ok(Exchange::timeout(TimeoutCause::OutOfRange, frames));
    }
    if channel.message_lost(&initiator.node_id, &responder.node_id) {
        return Ok(Exchange::timeout(TimeoutCause::PollLost, frames));
    }

    // Responder side: parse what arrived and gate on the code.
    let received = decode_frame(&wire)?;
    let tof_ns = true_distance / SPEED_OF_LIGHT * 1e9;
    let poll_rx_local = responder.local_time(t0 + tof_ns);
    if received.dst_id != responder.node_id
        || received.session_id != req.session_id
        || received.code != req.responder_expects
    {
        return Ok(Exchange {
            outcome: ExchangeOutcome::Timeout(TimeoutCause::NoReply),
            audit: Some(MismatchAudit {
                responder: responder.node_id.clone(),
                initiator: received.src_id.clone(),
                session_id: received.session_id,
                received_code: received.code,
                at_ns: (t0 + tof_ns) as u64,
            }),
            frames,
        });
    }
    let resp_tx_local = poll_rx_local + responder.reply_delay_ns;
    let response = RangingFrame {
        frame_type: FrameType::Response,
        session_id: req.session_id,
        src_id: responder.node_id.clone(),
        dst_id: initiator.node_id.clone(),
        code: req.reply_code,
        tx_timestamp_ns: resp_tx_local.max(0.0) as u64,
    };
    let wire = encode_frame(&response)?;
    frames.push(response);
    if channel.message_lost(&responder.node_id, &initiator.node_id) {
        return Ok(Exchange::timeout(TimeoutCause::ResponseLost, frames));
    }
    let response = decode_frame(&wire)?;

    // Timing jitter is expressed in distance units and folded into the flight
    // time seen by the initiator.
    let measured_path = (true_distance + channel.range_error()).max(0.0);
    let flight_ns = round_trip_ns(measured_path, SPEED_OF_LIGHT);
    let resp_rx_local = initiator.local_time(t0 + flight_ns + responder.reply_delay_ns);

    let t_round = resp_rx_local - poll_tx_local;
    let t_reply = resp_tx_local - poll_rx_local;
    let d = twr_distance(t_round.max(t_reply), t_reply, SPEED_OF_LIGHT)?;

    Ok(Exchange {
        outcome: ExchangeOutcome::Ranged {
            measurement: RangeMeasurement::new(
                initiator.node_id.clone(),
                d,
                channel.params().noise_sigma.max(MIN_RANGE_SIGMA),
                req.start_ns,
            ),
            code_received: response.code,
        },
        audit: None,
        frames,
    })
}

/// Everything observed while ranging one target from an anchor array.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RangeSurvey {
    pub measurements: Vec<RangeMeasurement>,
    /// Code carried by each successful RESPONSE, keyed by anchor id.
    pub codes_received: Vec<(String, AuthCode)>,
    pub timeouts: Vec<(String, TimeoutCause)>,
    pub audits: Vec<MismatchAudit>,
    pub frames: Vec<RangingFrame>,
    /// Simulation time after the last exchange slot.
    pub end_ns: u64,
}

/// Ranges `target` from every anchor in array order, one exchange each,
/// spaced [`EXCHANGE_SLOT_NS`] apart. Lost exchanges are left out.
pub fn measure_target(
    anchors: &[RadioNode],
    target: &RadioNode,
    channel: &mut ChannelModel,
    template: &ExchangeRequest,
    dimension: Dimension,
) -> Result<RangeSurvey, UwbError> {
    if anchors.is_empty() {
        return Err(UwbError::NoAnchors);
    }
    let mut survey = RangeSurvey::default();
    for (i, anchor) in anchors.iter().enumerate() {
        let req = ExchangeRequest {
            start_ns: template.start_ns + i as u64 * EXCHANGE_SLOT_NS,
            ..*template
        };
        let ex = ranging_exchange(anchor, target, channel, &req)?;
        survey.frames.extend(ex.frames);
        survey.audits.extend(ex.audit);
        match ex.outcome {
            ExchangeOutcome::Ranged {
                measurement,
                code_received,
            } => {
                survey.codes_received.push((anchor.node_id.clone(), code_received));
                survey.measurements.push(measurement);
            }
            ExchangeOutcome::Timeout(cause) => survey.timeouts.push((anchor.node_id.clone(), cause)),
        }
    }
    survey.end_ns = template.start_ns + anchors.len() as u64 * EXCHANGE_SLOT_NS;
    let needed = dimension.min_anchors();
    if survey.measurements.len() < needed {
        return Err(UwbError::InsufficientRanges {
            got: survey.measurements.len(),
            needed,
            survey: Box::new(survey),
        });
    }
    Ok(survey)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uwb::ChannelParams;

    fn quiet() -> ChannelParams {
        ChannelParams {
            noise_sigma: 0.0,
            bias: 0.0,
            loss_prob: 0.0,
            max_range: 60.0,
        }
    }

    fn request(code: AuthCode) -> ExchangeRequest {
        ExchangeRequest {
            session_id: SessionId([7; 16]),
            poll_code: code,
            responder_expects: AuthCode([1; 16]),
            reply_code: AuthCode([2; 16]),
            start_ns: 1_000,
        }
    }

    fn fig4_anchors() -> Vec<RadioNode> {
        [(2.5, 0.6), (2.5, 1.15), (2.85, 1.15), (2.85, 0.6)]
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| RadioNode::new(format!("A{i}"), Position::planar(x, y)))
            .collect()
    }

    #[test]
    fn noise_free_exchange_is_exact() {
        let a = RadioNode::new("A0", Position::ORIGIN);
        let b = RadioNode::new("uav-1", Position::planar(10.0, 0.0));
        let mut ch = ChannelModel::new(quiet(), 1).unwrap();
        let ex = ranging_exchange(&a, &b, &mut ch, &request(AuthCode([1; 16]))).unwrap();
        match ex.outcome {
            ExchangeOutcome::Ranged {
                measurement,
                code_received,
            } => {
                assert!((measurement.distance - 10.0).abs() < 1e-9);
                assert_eq!(measurement.anchor_id, "A0");
                assert_eq!(code_received, AuthCode([2; 16]));
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(ex.frames.len(), 2);
        assert!(ex.audit.is_none());
    }

    #[test]
    fn wrong_code_gets_no_reply_and_is_audited() {
        let a = RadioNode::new("A0", Position::ORIGIN);
        let b = RadioNode::new("uav-1", Position::planar(10.0, 0.0));
        let mut ch = ChannelModel::new(quiet(), 1).unwrap();
        let ex = ranging_exchange(&a, &b, &mut ch, &request(AuthCode([9; 16]))).unwrap();
        assert_eq!(ex.outcome, ExchangeOutcome::Timeout(TimeoutCause::NoReply));
        assert_eq!(ex.frames.len(), 1);
        let audit = ex.audit.unwrap();
        assert_eq!(audit.responder, "uav-1");
        assert_eq!(audit.received_code, AuthCode([9; 16]));
    }

    #[test]
    fn out_of_range_times_out() {
        let a = RadioNode::new("A0", Position::ORIGIN);
        let b = RadioNode::new("uav-1", Position::planar(61.0, 0.0));
        let mut ch = ChannelModel::new(quiet(), 1).unwrap();
        let ex = ranging_exchange(&a, &b, &mut ch, &request(AuthCode([1; 16]))).unwrap();
        assert_eq!(ex.outcome, ExchangeOutcome::Timeout(TimeoutCause::OutOfRange));
    }

    #[test]
    fn clock_offsets_cancel() {
        let target = Position::planar(7.0, 3.0);
        let mut base = ChannelModel::new(ChannelParams::default(), 3).unwrap();
        let mut shifted = base.clone();
        let a = RadioNode::new("A0", Position::ORIGIN);
        let b = RadioNode::new("uav-1", target);
        let a2 = a.clone().with_clock_offset(123_456_789.0);
        let b2 = b.clone().with_clock_offset(-987_654.25);
        for _ in 0..50 {
            let req = request(AuthCode([1; 16]));
            let x = ranging_exchange(&a, &b, &mut base, &req).unwrap();
            let y = ranging_exchange(&a2, &b2, &mut shifted, &req).unwrap();
            match (x.outcome, y.outcome) {
                (
                    ExchangeOutcome::Ranged { measurement: m1, .. },
                    ExchangeOutcome::Ranged { measurement: m2, .. },
                ) => assert!((m1.distance - m2.distance).abs() < 1e-6),
                (o1, o2) => assert_eq!(o1, o2),
            }
        }
    }

    #[test]
    fn survey_counts_and_exact_distances() {
        let anchors = fig4_anchors();
        let uav = RadioNode::new("uav-1", Position::planar(3.95, 2.705));
        let mut ch = ChannelModel::new(quiet(), 1).unwrap();
        let req = request(AuthCode([1; 16]));
        let s = measure_target(&anchors, &uav, &mut ch, &req, Dimension::Two).unwrap();
        assert_eq!(s.measurements.len(), 4);
        // Hand-computed from the anchor and claim coordinates.
        let expected = [2.556_076_094_328_962, 2.126_152_628_575_851, 1.904_737_514_724_798_2, 2.375_084_209_033_439_6];
        for (m, e) in s.measurements.iter().zip(expected) {
            assert!((m.distance - e).abs() < 1e-9, "{} vs {e}", m.distance);
        }

        for a in &anchors {
            ch.block_link(&a.node_id, "uav-1");
        }
        let err = measure_target(&anchors, &uav, &mut ch, &req, Dimension::Two).unwrap_err();
        assert!(matches!(err, UwbError::InsufficientRanges { got: 0, needed: 3, .. }));
    }

    #[test]
    fn one_lost_poll_drops_one_measurement() {
        let anchors = fig4_anchors();
        let uav = RadioNode::new("uav-1", Position::planar(3.95, 2.705));
        let mut ch = ChannelModel::new(quiet(), 1).unwrap();
        ch.block_link("A2", "uav-1");
        let s = measure_target(&anchors, &uav, &mut ch, &request(AuthCode([1; 16])), Dimension::Two).unwrap();
        assert_eq!(s.measurements.len(), 3);
        assert!(s.measurements.iter().all(|m| m.anchor_id != "A2"));
        assert_eq!(s.timeouts, vec![("A2".to_string(), TimeoutCause::PollLost)]);
    }

    #[test]
    fn empty_array_is_rejected() {
        let uav = RadioNode::new("uav-1", Position::ORIGIN);
        let mut ch = ChannelModel::new(quiet(), 1).unwrap();
        assert!(matches!(
            measure_target(&[], &uav, &mut ch, &request(AuthCode([1; 16])), Dimension::Two),
            Err(UwbError::NoAnchors)
        ));
    }
}
