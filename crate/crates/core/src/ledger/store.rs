use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::audit::AuditLog;
use super::chaincode::{
    Asset, AssetChaincode, AssetOp, Chaincode, TxContext, WorldState, CREATE_ASSET, DELETE_ASSET, UPDATE_ASSET,
};
use super::identity::{verify_signature, Authority, CertRejection, CertStatus, Certificate, Identity, Role};
use super::LedgerError;
use crate::codec::Writer;
use crate::ids::TxId;

/// Channel created by [`Ledger::new`], open to UAVs and platforms.
pub const DEFAULT_CHANNEL: &str = "pol";

/// Certificate lifetime granted at enrollment: one year.
pub const DEFAULT_VALIDITY_NS: u64 = 365 * 24 * 3600 * 1_000_000_000;

/// Names and tx types end up in tab-separated audit records.
pub(crate) fn check_token(kind: &'static str, s: &str) -> Result<(), LedgerError> {
    if s.is_empty() || s.chars().any(char::is_control) {
        return Err(LedgerError::InvalidName(format!("{kind} {s:?}")));
    }
    Ok(())
}

/// A committed transaction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub height: u64,
    pub tx_id: TxId,
    pub channel: String,
    pub tx_type: String,
    pub payload: Vec<u8>,
    pub submitter: String,
    pub timestamp_ns: u64,
    pub signature: [u8; 64],
}

impl Transaction {
    /// Bytes covered by the submitter's signature.
    pub fn signing_bytes(channel: &str, tx_type: &str, payload: &[u8], timestamp_ns: u64) -> Vec<u8> {
        Writer::new()
            .str("uwb-pol/tx/v1")
            .str(channel)
            .str(tx_type)
            .bytes(payload)
            .u64(timestamp_ns)
            .finish()
    }

    pub fn compute_id(channel: &str, height: u64, submitter: &str, signing_bytes: &[u8]) -> TxId {
        let digest = Sha256::new()
            .chain_update(channel.as_bytes())
            .chain_update([0])
            .chain_update(height.to_be_bytes())
            .chain_update(submitter.as_bytes())
            .chain_update([0])
            .chain_update(signing_bytes)
            .finalize();
        TxId(digest[..16].try_into().unwrap())
    }

    pub fn own_signing_bytes(&self) -> Vec<u8> {
        Self::signing_bytes(&self.channel, &self.tx_type, &self.payload, self.timestamp_ns)
    }
}

/// A client-signed request to append a transaction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Proposal {
    pub certificate: Certificate,
    pub channel: String,
    pub tx_type: String,
    pub payload: Vec<u8>,
    pub timestamp_ns: u64,
    pub signature: [u8; 64],
}

impl Proposal {
    pub fn sign(identity: &Identity, channel: &str, tx_type: &str, payload: Vec<u8>, timestamp_ns: u64) -> Self {
        let signature = identity.sign(&Transaction::signing_bytes(channel, tx_type, &payload, timestamp_ns));
        Self {
            certificate: identity.certificate().clone(),
            channel: channel.to_string(),
            tx_type: tx_type.to_string(),
            payload,
            timestamp_ns,
            signature,
        }
    }
}

/// Notification of one committed transaction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelEvent {
    pub channel: String,
    pub height: u64,
    pub tx_type: String,
    pub payload: Vec<u8>,
    pub tx_id: TxId,
    pub submitter: String,
    pub timestamp_ns: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Receipt {
    pub height: u64,
    pub tx_id: TxId,
}

/// Ordered stream of events from one channel, starting at the height current
/// when it was opened.
#[derive(Debug)]
pub struct Subscription {
    channel: String,
    rx: Receiver<ChannelEvent>,
}

impl Subscription {
    pub fn channel(&self) -> &str {
        &self.channel
    }

    pub fn try_next(&self) -> Option<ChannelEvent> {
        self.rx.try_recv().ok()
    }

    /// Everything delivered so far.
    pub fn drain(&self) -> Vec<ChannelEvent> {
        self.rx.try_iter().collect()
    }

    /// Blocks up to `timeout`; `None` on timeout or when the ledger is gone.
    pub fn next_timeout(&self, timeout: Duration) -> Option<ChannelEvent> {
        self.rx.recv_timeout(timeout).ok()
    }
}

struct Subscriber {
    filter: Option<String>,
    tx: Sender<ChannelEvent>,
}

struct Channel {
    admitted: BTreeSet<Role>,
    height: u64,
    state: WorldState,
    tx_ids: HashSet<TxId>,
    subscribers: Vec<Subscriber>,
}

struct Inner {
    authority: Authority,
    keygen: ChaCha8Rng,
    now_ns: u64,
    validity_ns: u64,
    registry: BTreeMap<String, Certificate>,
    channels: BTreeMap<String, Channel>,
    log: Vec<Transaction>,
}

/// In-process permissioned ledger with a single ordering service and
/// immediate finality.
///
/// All methods take `&self`; submissions are serialised by an internal lock
/// so concurrent submitters observe one total order per channel.
pub struct Ledger {
    inner: Mutex<Inner>,
    chaincodes: Vec<Arc<dyn Chaincode>>,
}

impl std::fmt::Debug for Ledger {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.lock();
        f.debug_struct("Ledger")
            .field("members", &inner.registry.len())
            .field("transactions", &inner.log.len())
            .finish_non_exhaustive()
    }
}

impl Ledger {
    /// Ledger hosting only the generic asset chaincode.
    pub fn new(seed: u64) -> Self {
        Self::with_chaincodes(seed, vec![Arc::new(AssetChaincode)])
    }

    /// Keys (authority and members) are drawn from `seed`, so two ledgers
    /// built with the same seed and call sequence are byte-identical.
    pub fn with_chaincodes(seed: u64, chaincodes: Vec<Arc<dyn Chaincode>>) -> Self {
        let mut keygen = ChaCha8Rng::seed_from_u64(seed);
        let mut ca_seed = [0u8; 32];
        keygen.fill_bytes(&mut ca_seed);
        let mut channels = BTreeMap::new();
        channels.insert(DEFAULT_CHANNEL.to_string(), Channel::new([Role::Uav, Role::Platform]));
        Self {
            inner: Mutex::new(Inner {
                authority: Authority::from_seed(ca_seed),
                keygen,
                now_ns: 0,
                validity_ns: DEFAULT_VALIDITY_NS,
                registry: BTreeMap::new(),
                channels,
                log: Vec::new(),
            }),
            chaincodes,
        }
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn chaincodes(&self) -> &[Arc<dyn Chaincode>] {
        &self.chaincodes
    }

    pub fn authority_key(&self) -> [u8; 32] {
        self.lock().authority.verifying_key().to_bytes()
    }

    pub fn now(&self) -> u64 {
        self.lock().now_ns
    }

    /// Moves simulated time forward; earlier instants are ignored.
    pub fn advance_to(&self, t_ns: u64) {
        let mut inner = self.lock();
        inner.now_ns = inner.now_ns.max(t_ns);
    }

    pub fn set_validity(&self, validity_ns: u64) {
        self.lock().validity_ns = validity_ns;
    }

    pub fn create_channel(&self, name: &str, admitted: &[Role]) -> Result<(), LedgerError> {
        check_token("channel", name)?;
        let mut inner = self.lock();
        if inner.channels.contains_key(name) {
            return Err(LedgerError::ChannelExists(name.to_string()));
        }
        inner
            .channels
            .insert(name.to_string(), Channel::new(admitted.iter().copied()));
        Ok(())
    }

    pub fn channels(&self) -> Vec<String> {
        self.lock().channels.keys().cloned().collect()
    }

    pub fn enroll_identity(&self, name: &str, role: Role) -> Result<Identity, LedgerError> {
        check_token("name", name)?;
        let mut inner = self.lock();
        if inner.registry.contains_key(name) {
            return Err(LedgerError::AlreadyEnrolled(name.to_string()));
        }
        let mut key_seed = [0u8; 32];
        inner.keygen.fill_bytes(&mut key_seed);
        let from = inner.now_ns;
        let to = from.saturating_add(inner.validity_ns);
        let identity = inner.authority.enroll(name, role, key_seed, from, to);
        inner.registry.insert(name.to_string(), identity.certificate().clone());
        Ok(identity)
    }

    pub fn verify_identity(&self, cert: &Certificate) -> CertStatus {
        self.lock().verify(cert)
    }

    /// Certificate currently registered for `name`.
    pub fn certificate_of(&self, name: &str) -> Option<Certificate> {
        self.lock().registry.get(name).cloned()
    }

    /// Signs with `identity` at the current ledger time and submits.
    pub fn submit_transaction(
        &self,
        identity: &Identity,
        channel: &str,
        tx_type: &str,
        payload: Vec<u8>,
    ) -> Result<Receipt, LedgerError> {
        let now = self.now();
        self.submit_proposal(Proposal::sign(identity, channel, tx_type, payload, now))
    }

    /// Validates and commits a signed proposal. Nothing is mutated unless
    /// every check and the chaincode succeed.
    pub fn submit_proposal(&self, p: Proposal) -> Result<Receipt, LedgerError> {
        check_token("tx type", &p.tx_type)?;
        let mut guard = self.lock();
        let inner = &mut *guard;
        if let CertStatus::Invalid(reason) = inner.verify(&p.certificate) {
            return Err(LedgerError::Unauthorized(reason));
        }
        let signing = Transaction::signing_bytes(&p.channel, &p.tx_type, &p.payload, p.timestamp_ns);
        if !verify_signature(&p.certificate.public_key, &signing, &p.signature) {
            return Err(LedgerError::BadTransactionSignature);
        }
        let channel = inner
            .channels
            .get_mut(&p.channel)
            .ok_or_else(|| LedgerError::NoSuchChannel(p.channel.clone()))?;
        if !channel.admitted.contains(&p.certificate.role) {
            return Err(LedgerError::Unauthorized(CertRejection::NotAdmitted));
        }

        let height = channel.height + 1;
        let tx_id = Transaction::compute_id(&p.channel, height, &p.certificate.subject, &signing);
        if channel.tx_ids.contains(&tx_id) {
            return Err(LedgerError::DuplicateTx(tx_id));
        }
        let ctx = TxContext {
            channel: &p.channel,
            height,
            tx_id,
            tx_type: &p.tx_type,
            payload: &p.payload,
            submitter: &p.certificate.subject,
            submitter_role: p.certificate.role,
            timestamp_ns: p.timestamp_ns,
        };
        if let Some(state) = run_chaincodes(&self.chaincodes, &channel.state, &ctx)? {
            channel.state = state;
        }
        channel.height = height;
        channel.tx_ids.insert(tx_id);

        let event = ChannelEvent {
            channel: p.channel.clone(),
            height,
            tx_type: p.tx_type.clone(),
            payload: p.payload.clone(),
            tx_id,
            submitter: p.certificate.subject.clone(),
            timestamp_ns: p.timestamp_ns,
        };
        channel.subscribers.retain(|s| {
            if s.filter.as_deref().is_some_and(|f| f != event.tx_type) {
                return true;
            }
            s.tx.send(event.clone()).is_ok()
        });
        inner.log.push(Transaction {
            height,
            tx_id,
            channel: p.channel,
            tx_type: p.tx_type,
            payload: p.payload,
            submitter: p.certificate.subject,
            timestamp_ns: p.timestamp_ns,
            signature: p.signature,
        });
        Ok(Receipt { height, tx_id })
    }

    pub fn subscribe(&self, channel: &str, tx_type_filter: Option<&str>) -> Result<Subscription, LedgerError> {
        let mut inner = self.lock();
        let ch = inner
            .channels
            .get_mut(channel)
            .ok_or_else(|| LedgerError::NoSuchChannel(channel.to_string()))?;
        let (tx, rx) = mpsc::channel();
        ch.subscribers.push(Subscriber {
            filter: tx_type_filter.map(str::to_string),
            tx,
        });
        Ok(Subscription {
            channel: channel.to_string(),
            rx,
        })
    }

    pub fn height(&self, channel: &str) -> Result<u64, LedgerError> {
        self.lock()
            .channels
            .get(channel)
            .map(|c| c.height)
            .ok_or_else(|| LedgerError::NoSuchChannel(channel.to_string()))
    }

    /// All committed transactions in commit order.
    pub fn transactions(&self) -> Vec<Transaction> {
        self.lock().log.clone()
    }

    pub fn world_state(&self, channel: &str) -> Result<WorldState, LedgerError> {
        self.lock()
            .channels
            .get(channel)
            .map(|c| c.state.clone())
            .ok_or_else(|| LedgerError::NoSuchChannel(channel.to_string()))
    }

    pub fn create_asset(&self, identity: &Identity, channel: &str, asset_id: &str, data: Vec<u8>) -> Result<Receipt, LedgerError> {
        self.asset_tx(identity, channel, CREATE_ASSET, asset_id, data)
    }

    pub fn update_asset(&self, identity: &Identity, channel: &str, asset_id: &str, data: Vec<u8>) -> Result<Receipt, LedgerError> {
        self.asset_tx(identity, channel, UPDATE_ASSET, asset_id, data)
    }

    pub fn delete_asset(&self, identity: &Identity, channel: &str, asset_id: &str) -> Result<Receipt, LedgerError> {
        self.asset_tx(identity, channel, DELETE_ASSET, asset_id, Vec::new())
    }

    /// Reads committed state without creating a transaction.
    pub fn query_asset(&self, channel: &str, asset_id: &str) -> Result<Asset, LedgerError> {
        let inner = self.lock();
        let ch = inner
            .channels
            .get(channel)
            .ok_or_else(|| LedgerError::NoSuchChannel(channel.to_string()))?;
        ch.state.get(asset_id).cloned().ok_or_else(|| LedgerError::AssetNotFound {
            channel: channel.to_string(),
            asset_id: asset_id.to_string(),
        })
    }

    fn asset_tx(&self, identity: &Identity, channel: &str, tx_type: &str, asset_id: &str, data: Vec<u8>) -> Result<Receipt, LedgerError> {
        let payload = AssetOp {
            asset_id: asset_id.to_string(),
            data,
        }
        .encode();
        self.submit_transaction(identity, channel, tx_type, payload)
    }

    /// Snapshot of everything needed to audit and replay this ledger.
    pub fn audit_log(&self) -> AuditLog {
        let inner = self.lock();
        AuditLog {
            authority_key: inner.authority.verifying_key().to_bytes(),
            identities: inner.registry.values().cloned().collect(),
            channels: inner
                .channels
                .iter()
                .map(|(name, c)| (name.clone(), c.admitted.iter().copied().collect()))
                .collect(),
            transactions: inner.log.clone(),
            assets: inner
                .channels
                .iter()
                .flat_map(|(name, c)| c.state.iter().map(move |a| (name.clone(), a.clone())))
                .collect(),
        }
    }
}

/// Runs the chaincode registered for the transaction type on a copy of the
/// state. `Ok(None)` means no chaincode handles this type.
pub(crate) fn run_chaincodes(
    chaincodes: &[Arc<dyn Chaincode>],
    state: &WorldState,
    ctx: &TxContext<'_>,
) -> Result<Option<WorldState>, LedgerError> {
    match chaincodes.iter().find(|c| c.handles(ctx.tx_type)) {
        None => Ok(None),
        Some(cc) => {
            let mut staged = state.clone();
            cc.execute(&mut staged, ctx)?;
            Ok(Some(staged))
        }
    }
}

impl Channel {
    fn new(admitted: impl IntoIterator<Item = Role>) -> Self {
        Self {
            admitted: admitted.into_iter().collect(),
            height: 0,
            state: WorldState::default(),
            tx_ids: HashSet::new(),
            subscribers: Vec::new(),
        }
    }
}

impl Inner {
    fn verify(&self, cert: &Certificate) -> CertStatus {
        let ca = self.authority.verifying_key();
        let reason = if cert.issuer_key != ca.to_bytes() {
            CertRejection::UnknownIssuer
        } else if !cert.signature_valid(&ca) {
            CertRejection::BadSignature
        } else if self.now_ns < cert.valid_from_ns {
            CertRejection::NotYetValid
        } else if self.now_ns >= cert.valid_to_ns {
            CertRejection::Expired
        } else {
            match self.registry.get(&cert.subject) {
                None => CertRejection::NotEnrolled,
                Some(registered) if registered != cert => CertRejection::RegistryMismatch,
                Some(_) => return CertStatus::Valid,
            }
        };
        CertStatus::Invalid(reason)
    }
}
