//! Fixed 58-byte ranging frame.
//!
//! ```text
//! 0       frame type (0x01 POLL, 0x02 RESPONSE, 0x03 FINAL)
//! 1..17   session id
//! 17..25  source id, UTF-8, zero padded
//! 25..33  destination id, UTF-8, zero padded
//! 33..49  authentication code
//! 49..57  tx timestamp, ns, big-endian u64
//! 57      reserved, 0x00
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{AuthCode, SessionId};

pub const FRAME_LEN: usize = 58;
pub const NODE_ID_LEN: usize = 8;

const SESSION_AT: usize = 1;
const SRC_AT: usize = 17;
const DST_AT: usize = 25;
const CODE_AT: usize = 33;
const TS_AT: usize = 49;
const RESERVED_AT: usize = 57;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("node id `{0}` must be 1..=8 bytes of UTF-8 without NUL")]
    BadNodeId(String),
    #[error("source and destination are both `{0}`")]
    SameEndpoints(String),
    #[error("frame is {0} bytes, expected 58")]
    BadLength(usize),
    #[error("unknown frame type 0x{0:02x}")]
    UnknownType(u8),
    #[error("reserved byte is 0x{0:02x}, expected 0x00")]
    Reserved(u8),
    #[error("malformed {0} id field")]
    BadIdField(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FrameType {
    Poll,
    Response,
    Final,
}

impl FrameType {
    pub fn to_byte(self) -> u8 {
        match self {
            FrameType::Poll => 0x01,
            FrameType::Response => 0x02,
            FrameType::Final => 0x03,
        }
    }

    pub fn from_byte(b: u8) -> Result<Self, FrameError> {
        match b {
            0x01 => Ok(FrameType::Poll),
            0x02 => Ok(FrameType::Response),
            0x03 => Ok(FrameType::Final),
            other => Err(FrameError::UnknownType(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RangingFrame {
    pub frame_type: FrameType,
    pub session_id: SessionId,
    pub src_id: String,
    pub dst_id: String,
    pub code: AuthCode,
    pub tx_timestamp_ns: u64,
}

/// Node ids travel in 8 zero-padded bytes, so they must be non-empty, at
/// most 8 bytes and free of NUL.
pub fn check_node_id(id: &str) -> Result<(), FrameError> {
    if id.is_empty() || id.len() > NODE_ID_LEN || id.bytes().any(|b| b == 0) {
        return Err(FrameError::BadNodeId(id.to_string()));
    }
    Ok(())
}

impl RangingFrame {
    pub fn validate(&self) -> Result<(), FrameError> {
        check_node_id(&self.src_id)?;
        check_node_id(&self.dst_id)?;
        if self.src_id == self.dst_id {
            return Err(FrameError::SameEndpoints(self.src_id.clone()));
        }
        Ok(())
    }
}

pub fn encode_frame(frame: &RangingFrame) -> Result<[u8; FRAME_LEN], FrameError> {
    frame.validate()?;
    let mut out = [0u8; FRAME_LEN];
    out[0] = frame.frame_type.to_byte();
    out[SESSION_AT..SRC_AT].copy_from_slice(frame.session_id.as_bytes());
    out[SRC_AT..SRC_AT + frame.src_id.len()].copy_from_slice(frame.src_id.as_bytes());
    out[DST_AT..DST_AT + frame.dst_id.len()].copy_from_slice(frame.dst_id.as_bytes());
    out[CODE_AT..TS_AT].copy_from_slice(frame.code.as_bytes());
    out[TS_AT..RESERVED_AT].copy_from_slice(&frame.tx_timestamp_ns.to_be_bytes());
    Ok(out)
}

fn decode_id(field: &[u8], name: &'static str) -> Result<String, FrameError> {
    let len = field.iter().position(|&b| b == 0).unwrap_or(field.len());
    // Padding must be all zero, otherwise two byte strings would decode to
    // the same frame.
    if len == 0 || field[len..].iter().any(|&b| b != 0) {
        return Err(FrameError::BadIdField(name));
    }
    String::from_utf8(field[..len].to_vec()).map_err(|_| FrameError::BadIdField(name))
}

pub fn decode_frame(bytes: &[u8]) -> Result<RangingFrame, FrameError> {
    if bytes.len() != FRAME_LEN {
        return Err(FrameError::BadLength(bytes.len()));
    }
    let frame_type = FrameType::from_byte(bytes[0])?;
    if bytes[RESERVED_AT] != 0 {
        return Err(FrameError::Reserved(bytes[RESERVED_AT]));
    }
    let mut session = [0u8; 16];
    session.copy_from_slice(&bytes[SESSION_AT..SRC_AT]);
    let mut code = [0u8; 16];
    code.copy_from_slice(&bytes[CODE_AT..TS_AT]);
    let mut ts = [0u8; 8];
    ts.copy_from_slice(&bytes[TS_AT..RESERVED_AT]);
    let frame = RangingFrame {
        frame_type,
        session_id: SessionId(session),
        src_id: decode_id(&bytes[SRC_AT..DST_AT], "source")?,
        dst_id: decode_id(&bytes[DST_AT..CODE_AT], "destination")?,
        code: AuthCode(code),
        tx_timestamp_ns: u64::from_be_bytes(ts),
    };
    frame.validate()?;
    Ok(frame)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn poll() -> RangingFrame {
        RangingFrame {
            frame_type: FrameType::Poll,
            session_id: SessionId([0; 16]),
            src_id: "A0".into(),
            dst_id: "uav-1".into(),
            code: AuthCode([0; 16]),
            tx_timestamp_ns: 0,
        }
    }

    #[test]
    fn poll_layout() {
        let bytes = encode_frame(&poll()).unwrap();
        assert_eq!(bytes.len(), 58);
        assert_eq!(bytes[0], 0x01);
        assert_eq!(&bytes[17..19], b"A0");
        assert_eq!(bytes[19..25], [0; 6]);
        assert_eq!(bytes[57], 0);
    }

    #[test]
    fn truncated_input_is_rejected() {
        let bytes = encode_frame(&poll()).unwrap();
        assert_eq!(decode_frame(&bytes[..10]), Err(FrameError::BadLength(10)));
    }

    #[test]
    fn bad_ids_do_not_encode() {
        let mut f = poll();
        f.src_id = "too-long-id".into();
        assert!(matches!(encode_frame(&f), Err(FrameError::BadNodeId(_))));
        let mut f = poll();
        f.dst_id = "A0".into();
        assert!(matches!(encode_frame(&f), Err(FrameError::SameEndpoints(_))));
        let mut f = poll();
        f.src_id = String::new();
        assert!(encode_frame(&f).is_err());
    }

    #[test]
    fn junk_in_padding_is_rejected() {
        let mut bytes = encode_frame(&poll()).unwrap();
        bytes[23] = b'x';
        assert_eq!(decode_frame(&bytes), Err(FrameError::BadIdField("source")));
        let mut bytes = encode_frame(&poll()).unwrap();
        bytes[57] = 1;
        assert_eq!(decode_frame(&bytes), Err(FrameError::Reserved(1)));
        let mut bytes = encode_frame(&poll()).unwrap();
        bytes[0] = 0x04;
        assert_eq!(decode_frame(&bytes), Err(FrameError::UnknownType(4)));
    }

    fn node_id() -> impl Strategy<Value = String> {
        "[a-zA-Z0-9_-]{1,8}"
    }

    fn frame() -> impl Strategy<Value = RangingFrame> {
        (
            prop_oneof![Just(FrameType::Poll), Just(FrameType::Response), Just(FrameType::Final)],
            any::<[u8; 16]>(),
            node_id(),
            node_id(),
            any::<[u8; 16]>(),
            any::<u64>(),
        )
            .prop_filter("distinct endpoints", |t| t.2 != t.3)
            .prop_map(|(ft, s, src, dst, c, ts)| RangingFrame {
                frame_type: ft,
                session_id: SessionId(s),
                src_id: src,
                dst_id: dst,
                code: AuthCode(c),
                tx_timestamp_ns: ts,
            })
    }

    proptest! {
        #[test]
        fn round_trip(f in frame()) {
            let bytes = encode_frame(&f).unwrap();
            prop_assert_eq!(decode_frame(&bytes).unwrap(), f);
        }

        /// Whatever decodes must re-encode to the exact same bytes, so no
        /// byte string is misparsed into a frame it does not represent.
        #[test]
        fn decode_is_injective(bytes in proptest::collection::vec(any::<u8>(), 0..70)) {
            if let Ok(f) = decode_frame(&bytes) {
                prop_assert_eq!(encode_frame(&f).unwrap().to_vec(), bytes);
            }
        }

        #[test]
        fn mutated_frames_never_misparse(f in frame(), idx in 0usize..58, flip in 1u8..=255) {
            let mut bytes = encode_frame(&f).unwrap();
            bytes[idx] ^= flip;
            if let Ok(g) = decode_frame(&bytes) {
                prop_assert_ne!(&g, &f);
                prop_assert_eq!(encode_frame(&g).unwrap(), bytes);
            }
        }
    }
}
