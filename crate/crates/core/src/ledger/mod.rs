//! Simulated permissioned ledger: certificate-based membership, channels
//! with a total transaction order, a chaincode host and channel events.

mod audit;
mod bridge;
mod chaincode;
mod identity;
mod store;

use thiserror::Error;

pub use audit::{replay, AuditLog, ReplayError, ReplayFailure, ReplaySummary};
pub use bridge::{BridgePublisher, BridgeSubscriber, DroppedMessage, Route, TopicMessage};
pub use chaincode::{
    Asset, AssetChaincode, AssetOp, Chaincode, ChaincodeError, TxContext, WorldState, CREATE_ASSET, DELETE_ASSET,
    UPDATE_ASSET,
};
pub use identity::{verify_signature, Authority, CertRejection, CertStatus, Certificate, Identity, Role};
pub use store::{
    ChannelEvent, Ledger, Proposal, Receipt, Subscription, Transaction, DEFAULT_CHANNEL, DEFAULT_VALIDITY_NS,
};

use crate::ids::TxId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LedgerError {
    #[error("`{0}` is already enrolled")]
    AlreadyEnrolled(String),
    #[error("invalid {0}")]
    InvalidName(String),
    #[error("unauthorized: {0}")]
    Unauthorized(CertRejection),
    #[error("transaction signature does not verify")]
    BadTransactionSignature,
    #[error("no such channel `{0}`")]
    NoSuchChannel(String),
    #[error("channel `{0}` already exists")]
    ChannelExists(String),
    #[error("duplicate transaction id {0}")]
    DuplicateTx(TxId),
    #[error("asset `{asset_id}` not found on channel `{channel}`")]
    AssetNotFound { channel: String, asset_id: String },
    #[error(transparent)]
    Chaincode(#[from] ChaincodeError),
}
