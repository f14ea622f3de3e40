//! Simulated UWB radio layer: frame codec, stochastic channel and the SS-TWR
//! poll/response exchange with embedded authentication codes.

mod channel;
mod frame;
mod ranging;

use thiserror::Error;

pub use channel::{ChannelModel, ChannelParams};
pub use frame::{
    check_node_id, decode_frame, encode_frame, FrameError, FrameType, RangingFrame, FRAME_LEN, NODE_ID_LEN,
};
pub use ranging::{
    measure_target, ranging_exchange, Exchange, ExchangeOutcome, ExchangeRequest, MismatchAudit, RadioNode,
    RangeSurvey, TimeoutCause, DEFAULT_REPLY_DELAY_NS, EXCHANGE_SLOT_NS, MIN_RANGE_SIGMA,
};

use crate::geo::GeoError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UwbError {
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("invalid channel parameters: {0}")]
    InvalidChannel(String),
    #[error("invalid radio node: {0}")]
    InvalidNode(String),
    #[error("anchor array is empty")]
    NoAnchors,
    #[error("only {got} successful exchanges, need {needed}")]
    InsufficientRanges {
        got: usize,
        needed: usize,
        survey: Box<RangeSurvey>,
    },
}
