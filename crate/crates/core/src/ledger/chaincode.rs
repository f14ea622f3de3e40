use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::identity::Role;
use crate::codec::{Reader, Writer};
use crate::ids::TxId;

pub const CREATE_ASSET: &str = "CREATE_ASSET";
pub const UPDATE_ASSET: &str = "UPDATE_ASSET";
pub const DELETE_ASSET: &str = "DELETE_ASSET";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChaincodeError {
    #[error("asset `{0}` not found")]
    NotFound(String),
    #[error("asset `{0}` already exists")]
    Conflict(String),
    #[error("`{submitter}` may not modify asset `{asset_id}`")]
    Unauthorized { asset_id: String, submitter: String },
    #[error("malformed payload: {0}")]
    Malformed(String),
    #[error("rejected: {0}")]
    Rejected(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Asset {
    pub asset_id: String,
    pub data: Vec<u8>,
    pub owner: String,
    pub version: u64,
}

/// Committed key/value state of one channel.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WorldState {
    assets: BTreeMap<String, Asset>,
}

impl WorldState {
    pub fn get(&self, asset_id: &str) -> Option<&Asset> {
        self.assets.get(asset_id)
    }

    pub fn contains(&self, asset_id: &str) -> bool {
        self.assets.contains_key(asset_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Asset> {
        self.assets.values()
    }

    pub fn len(&self) -> usize {
        self.assets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assets.is_empty()
    }

    /// Creates a version-1 asset owned by `owner`.
    pub fn create(&mut self, asset_id: &str, data: Vec<u8>, owner: &str) -> Result<(), ChaincodeError> {
        check_asset_id(asset_id)?;
        if self.assets.contains_key(asset_id) {
            return Err(ChaincodeError::Conflict(asset_id.to_string()));
        }
        self.assets.insert(
            asset_id.to_string(),
            Asset {
                asset_id: asset_id.to_string(),
                data,
                owner: owner.to_string(),
                version: 1,
            },
        );
        Ok(())
    }

    pub fn update(&mut self, asset_id: &str, data: Vec<u8>, submitter: &str) -> Result<(), ChaincodeError> {
        let asset = self
            .assets
            .get_mut(asset_id)
            .ok_or_else(|| ChaincodeError::NotFound(asset_id.to_string()))?;
        if asset.owner != submitter {
            return Err(ChaincodeError::Unauthorized {
                asset_id: asset_id.to_string(),
                submitter: submitter.to_string(),
            });
        }
        asset.data = data;
        asset.version += 1;
        Ok(())
    }

    pub fn delete(&mut self, asset_id: &str, submitter: &str) -> Result<(), ChaincodeError> {
        let asset = self
            .assets
            .get(asset_id)
            .ok_or_else(|| ChaincodeError::NotFound(asset_id.to_string()))?;
        if asset.owner != submitter {
            return Err(ChaincodeError::Unauthorized {
                asset_id: asset_id.to_string(),
                submitter: submitter.to_string(),
            });
        }
        self.assets.remove(asset_id);
        Ok(())
    }

    /// Inserts an asset verbatim; used when loading recorded state.
    pub(crate) fn restore(&mut self, asset: Asset) {
        self.assets.insert(asset.asset_id.clone(), asset);
    }
}

/// Asset ids are written into tab-separated audit logs, so they must be
/// non-empty and free of control characters.
fn check_asset_id(id: &str) -> Result<(), ChaincodeError> {
    if id.is_empty() || id.chars().any(char::is_control) {
        return Err(ChaincodeError::Malformed(format!("invalid asset id {id:?}")));
    }
    Ok(())
}

/// Read-only view of the transaction being executed.
#[derive(Debug, Clone, Copy)]
pub struct TxContext<'a> {
    pub channel: &'a str,
    pub height: u64,
    pub tx_id: TxId,
    pub tx_type: &'a str,
    pub payload: &'a [u8],
    pub submitter: &'a str,
    pub submitter_role: Role,
    pub timestamp_ns: u64,
}

/// Deterministic contract run on commit of the transaction types it handles.
/// An error rejects the transaction and leaves the state untouched.
pub trait Chaincode: Send + Sync {
    fn name(&self) -> &str;
    fn handles(&self, tx_type: &str) -> bool;
    fn execute(&self, state: &mut WorldState, tx: &TxContext<'_>) -> Result<(), ChaincodeError>;
}

/// Payload of the generic asset transactions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssetOp {
    pub asset_id: String,
    pub data: Vec<u8>,
}

impl AssetOp {
    pub fn encode(&self) -> Vec<u8> {
        Writer::new().str(&self.asset_id).bytes(&self.data).finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ChaincodeError> {
        let bad = |e: crate::codec::CodecError| ChaincodeError::Malformed(e.to_string());
        let mut r = Reader::new(bytes);
        let asset_id = r.str().map_err(bad)?;
        let data = r.bytes().map_err(bad)?.to_vec();
        r.finish().map_err(bad)?;
        Ok(Self { asset_id, data })
    }
}

/// Generic create/update/delete of opaque assets; queries bypass the ledger.
#[derive(Debug, Default, Clone, Copy)]
pub struct AssetChaincode;

impl Chaincode for AssetChaincode {
    fn name(&self) -> &str {
        "assets"
    }

    fn handles(&self, tx_type: &str) -> bool {
        matches!(tx_type, CREATE_ASSET | UPDATE_ASSET | DELETE_ASSET)
    }

    fn execute(&self, state: &mut WorldState, tx: &TxContext<'_>) -> Result<(), ChaincodeError> {
        let op = AssetOp::decode(tx.payload)?;
        match tx.tx_type {
            CREATE_ASSET => state.create(&op.asset_id, op.data, tx.submitter),
            UPDATE_ASSET => state.update(&op.asset_id, op.data, tx.submitter),
            DELETE_ASSET => state.delete(&op.asset_id, tx.submitter),
            other => Err(ChaincodeError::Rejected(format!("unhandled tx type {other}"))),
        }
    }
}
