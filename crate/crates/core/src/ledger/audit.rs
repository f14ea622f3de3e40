//! Append-only audit log and its replay.
//!
//! One record per line, tab-separated. Transaction records carry exactly
//! `height, tx_id (hex), channel, tx_type, submitter, timestamp_ns,
//! payload (base64), signature (base64)`. Lines starting with `#` hold the
//! membership material needed to check signatures and the asset snapshot that
//! replay must reproduce:
//!
//! ```text
//! #uwb-pol-audit  v1
//! #authority      <ed25519 key, hex>
//! #identity       <certificate, base64>
//! #channel        <name>  <ROLE,ROLE>
//! <transaction records>
//! #asset          <channel> <asset_id> <owner> <version> <data, base64>
//! #end            <transaction count>
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use ed25519_dalek::VerifyingKey;
use thiserror::Error;

use super::chaincode::{Asset, Chaincode, ChaincodeError, TxContext, WorldState};
use super::identity::{verify_signature, Certificate, Role};
use super::store::{run_chaincodes, Transaction};
use super::LedgerError;
use crate::ids::TxId;

const MAGIC: &str = "#uwb-pol-audit";
const VERSION: &str = "v1";

/// Everything needed to audit a ledger offline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditLog {
    pub authority_key: [u8; 32],
    pub identities: Vec<Certificate>,
    pub channels: Vec<(String, Vec<Role>)>,
    pub transactions: Vec<Transaction>,
    /// Final asset state as `(channel, asset)`.
    pub assets: Vec<(String, Asset)>,
}

impl AuditLog {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut line = |fields: &[&str]| {
            out.push_str(&fields.join("\t"));
            out.push('\n');
        };
        line(&[MAGIC, VERSION]);
        line(&["#authority", &hex::encode(self.authority_key)]);
        for cert in &self.identities {
            line(&["#identity", &B64.encode(cert.encode())]);
        }
        for (name, roles) in &self.channels {
            let roles: Vec<&str> = roles.iter().map(|r| r.as_str()).collect();
            line(&["#channel", name, &roles.join(",")]);
        }
        for tx in &self.transactions {
            line(&[
                &tx.height.to_string(),
                &tx.tx_id.to_hex(),
                &tx.channel,
                &tx.tx_type,
                &tx.submitter,
                &tx.timestamp_ns.to_string(),
                &B64.encode(&tx.payload),
                &B64.encode(tx.signature),
            ]);
        }
        for (channel, a) in &self.assets {
            line(&[
                "#asset",
                channel,
                &a.asset_id,
                &a.owner,
                &a.version.to_string(),
                &B64.encode(&a.data),
            ]);
        }
        line(&["#end", &self.transactions.len().to_string()]);
        out
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReplayFailure {
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("unexpected end of log")]
    UnexpectedEnd,
    #[error("certificate for `{0}` was not issued by the recorded authority")]
    BadCertificate(String),
    #[error("submitter `{0}` is not a recorded member")]
    UnknownSubmitter(String),
    #[error("certificate of `{0}` is not valid at the transaction time")]
    CertificateNotValid(String),
    #[error("role {role} of `{submitter}` is not admitted to the channel")]
    NotAdmitted { submitter: String, role: Role },
    #[error("signature does not verify")]
    BadSignature,
    #[error("transaction id does not match its content")]
    TxIdMismatch,
    #[error("expected height {expected}, found {found}")]
    HeightGap { expected: u64, found: u64 },
    #[error("unknown channel `{0}`")]
    UnknownChannel(String),
    #[error("chaincode rejected the transaction: {0}")]
    Chaincode(ChaincodeError),
    #[error("replayed state differs from recorded assets: {0}")]
    StateMismatch(String),
    #[error("log declares {declared} transactions but holds {found}")]
    CountMismatch { declared: usize, found: usize },
}

/// First problem found while replaying, with the height of the offending
/// transaction when there is one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayError {
    pub line: usize,
    pub height: Option<u64>,
    pub failure: ReplayFailure,
}

impl fmt::Display for ReplayError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.height {
            Some(h) => write!(f, "height {h} (line {}): {}", self.line, self.failure),
            None => write!(f, "line {}: {}", self.line, self.failure),
        }
    }
}

impl std::error::Error for ReplayError {}

/// Result of a clean replay.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplaySummary {
    pub transactions: usize,
    pub states: BTreeMap<String, WorldState>,
}

struct Replayer<'a> {
    chaincodes: &'a [Arc<dyn Chaincode>],
    authority: Option<VerifyingKey>,
    members: BTreeMap<String, Certificate>,
    channels: BTreeMap<String, (BTreeSet<Role>, u64, WorldState)>,
    recorded: BTreeMap<String, WorldState>,
    tx_count: usize,
    line: usize,
}

fn fail(line: usize, height: Option<u64>, failure: ReplayFailure) -> ReplayError {
    ReplayError { line, height, failure }
}

fn b64(field: &str, what: &str) -> Result<Vec<u8>, ReplayFailure> {
    B64.decode(field)
        .map_err(|_| ReplayFailure::Malformed(format!("{what} is not base64")))
}

impl<'a> Replayer<'a> {
    fn err(&self, failure: ReplayFailure) -> ReplayError {
        fail(self.line, None, failure)
    }

    fn meta(&mut self, fields: &[&str]) -> Result<(), ReplayError> {
        let malformed = |m: &str| ReplayFailure::Malformed(m.to_string());
        match (fields[0], fields.len()) {
            ("#authority", 2) => {
                let key: [u8; 32] = hex::decode(fields[1])
                    .ok()
                    .and_then(|v| v.try_into().ok())
                    .ok_or_else(|| self.err(malformed("authority key")))?;
                let key = VerifyingKey::from_bytes(&key).map_err(|_| self.err(malformed("authority key")))?;
                self.authority = Some(key);
            }
            ("#identity", 2) => {
                let bytes = b64(fields[1], "certificate").map_err(|f| self.err(f))?;
                let cert = Certificate::decode(&bytes).map_err(|e| self.err(ReplayFailure::Malformed(e.to_string())))?;
                let ca = self.authority.ok_or_else(|| self.err(malformed("identity before authority")))?;
                if !cert.signature_valid(&ca) {
                    return Err(self.err(ReplayFailure::BadCertificate(cert.subject)));
                }
                self.members.insert(cert.subject.clone(), cert);
            }
            ("#channel", 3) => {
                let roles = fields[2]
                    .split(',')
                    .filter(|s| !s.is_empty())
                    .map(|s| Role::parse(s).ok_or_else(|| self.err(malformed("role"))))
                    .collect::<Result<BTreeSet<_>, _>>()?;
                self.channels
                    .insert(fields[1].to_string(), (roles, 0, WorldState::default()));
            }
            ("#asset", 6) => {
                let version = fields[4].parse().map_err(|_| self.err(malformed("asset version")))?;
                let data = b64(fields[5], "asset data").map_err(|f| self.err(f))?;
                self.recorded.entry(fields[1].to_string()).or_default().restore(Asset {
                    asset_id: fields[2].to_string(),
                    owner: fields[3].to_string(),
                    version,
                    data,
                });
            }
            (tag, _) => return Err(self.err(ReplayFailure::Malformed(format!("unexpected record {tag}")))),
        }
        Ok(())
    }

    fn transaction(&mut self, fields: &[&str]) -> Result<(), ReplayError> {
        let height: u64 = fields[0]
            .parse()
            .map_err(|_| self.err(ReplayFailure::Malformed("height".into())))?;
        let at = |f: ReplayFailure| fail(self.line, Some(height), f);
        if fields.len() != 8 {
            return Err(at(ReplayFailure::Malformed(format!("{} fields, expected 8", fields.len()))));
        }
        let tx_id = TxId::from_hex(fields[1]).ok_or_else(|| at(ReplayFailure::Malformed("tx id".into())))?;
        let timestamp_ns: u64 = fields[5]
            .parse()
            .map_err(|_| at(ReplayFailure::Malformed("timestamp".into())))?;
        let payload = b64(fields[6], "payload").map_err(at)?;
        let signature: [u8; 64] = b64(fields[7], "signature")
            .map_err(at)?
            .try_into()
            .map_err(|_| at(ReplayFailure::Malformed("signature length".into())))?;
        let tx = Transaction {
            height,
            tx_id,
            channel: fields[2].to_string(),
            tx_type: fields[3].to_string(),
            payload,
            submitter: fields[4].to_string(),
            timestamp_ns,
            signature,
        };

        let cert = self
            .members
            .get(&tx.submitter)
            .ok_or_else(|| at(ReplayFailure::UnknownSubmitter(tx.submitter.clone())))?;
        let signing = tx.own_signing_bytes();
        if !verify_signature(&cert.public_key, &signing, &tx.signature) {
            return Err(at(ReplayFailure::BadSignature));
        }
        if Transaction::compute_id(&tx.channel, height, &tx.submitter, &signing) != tx.tx_id {
            return Err(at(ReplayFailure::TxIdMismatch));
        }
        if !cert.valid_at(tx.timestamp_ns) {
            return Err(at(ReplayFailure::CertificateNotValid(tx.submitter.clone())));
        }
        let role = cert.role;
        let (admitted, last, state) = self
            .channels
            .get_mut(&tx.channel)
            .ok_or_else(|| at(ReplayFailure::UnknownChannel(tx.channel.clone())))?;
        if !admitted.contains(&role) {
            return Err(at(ReplayFailure::NotAdmitted {
                submitter: tx.submitter.clone(),
                role,
            }));
        }
        if height != *last + 1 {
            return Err(at(ReplayFailure::HeightGap {
                expected: *last + 1,
                found: height,
            }));
        }
        let ctx = TxContext {
            channel: &tx.channel,
            height,
            tx_id,
            tx_type: &tx.tx_type,
            payload: &tx.payload,
            submitter: &tx.submitter,
            submitter_role: role,
            timestamp_ns,
        };
        match run_chaincodes(self.chaincodes, state, &ctx) {
            Ok(Some(next)) => *state = next,
            Ok(None) => {}
            Err(LedgerError::Chaincode(e)) => return Err(at(ReplayFailure::Chaincode(e))),
            Err(e) => return Err(at(ReplayFailure::Malformed(e.to_string()))),
        }
        *last = height;
        self.tx_count += 1;
        Ok(())
    }
}

/// Replays an audit log: checks every certificate and signature, re-executes
/// the chaincodes and compares the result with the recorded assets.
pub fn replay(text: &str, chaincodes: &[Arc<dyn Chaincode>]) -> Result<ReplaySummary, ReplayError> {
    let mut r = Replayer {
        chaincodes,
        authority: None,
        members: BTreeMap::new(),
        channels: BTreeMap::new(),
        recorded: BTreeMap::new(),
        tx_count: 0,
        line: 0,
    };
    let mut lines = text.split('\n');
    match lines.next() {
        Some(first) if first == format!("{MAGIC}\t{VERSION}") => {}
        Some("") | None => return Err(fail(1, None, ReplayFailure::UnexpectedEnd)),
        Some(_) => return Err(fail(1, None, ReplayFailure::Malformed("missing header".into()))),
    }
    r.line = 1;
    let mut declared = None;
    for raw in lines {
        r.line += 1;
        if declared.is_some() {
            if raw.is_empty() {
                continue;
            }
            return Err(r.err(ReplayFailure::Malformed("records after #end".into())));
        }
        if raw.is_empty() {
            // Only a final newline may be empty, and it must follow #end.
            return Err(r.err(ReplayFailure::UnexpectedEnd));
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields[0] == "#end" {
            let n = fields
                .get(1)
                .and_then(|s| s.parse::<usize>().ok())
                .filter(|_| fields.len() == 2)
                .ok_or_else(|| r.err(ReplayFailure::Malformed("#end record".into())))?;
            declared = Some(n);
        } else if fields[0].starts_with('#') {
            r.meta(&fields)?;
        } else {
            r.transaction(&fields)?;
        }
    }
    let declared = declared.ok_or_else(|| r.err(ReplayFailure::UnexpectedEnd))?;
    if declared != r.tx_count {
        return Err(r.err(ReplayFailure::CountMismatch {
            declared,
            found: r.tx_count,
        }));
    }

    let states: BTreeMap<String, WorldState> = r
        .channels
        .into_iter()
        .map(|(name, (_, _, state))| (name, state))
        .collect();
    for (name, state) in &states {
        let recorded = r.recorded.get(name).cloned().unwrap_or_default();
        if &recorded != state {
            return Err(fail(
                r.line,
                None,
                ReplayFailure::StateMismatch(format!("channel `{name}`")),
            ));
        }
    }
    if let Some(extra) = r.recorded.keys().find(|k| !states.contains_key(*k)) {
        return Err(fail(r.line, None, ReplayFailure::UnknownChannel(extra.clone())));
    }
    Ok(ReplaySummary {
        transactions: r.tx_count,
        states,
    })
}
