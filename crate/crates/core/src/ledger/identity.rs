use std::fmt;

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use serde::{Deserialize, Serialize};

use crate::codec::{CodecError, Reader, Writer};

const CERT_DOMAIN: &str = "uwb-pol/cert/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Role {
    Uav,
    Platform,
    Authority,
}

impl Role {
    pub fn to_byte(self) -> u8 {
        match self {
            Role::Uav => 1,
            Role::Platform => 2,
            Role::Authority => 3,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            1 => Some(Role::Uav),
            2 => Some(Role::Platform),
            3 => Some(Role::Authority),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Uav => "UAV",
            Role::Platform => "PLATFORM",
            Role::Authority => "AUTHORITY",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "UAV" => Some(Role::Uav),
            "PLATFORM" => Some(Role::Platform),
            "AUTHORITY" => Some(Role::Authority),
            _ => None,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Membership certificate binding a name and role to an Ed25519 key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate {
    pub subject: String,
    pub role: Role,
    pub public_key: [u8; 32],
    /// Key of the authority that signed this certificate.
    pub issuer_key: [u8; 32],
    pub valid_from_ns: u64,
    pub valid_to_ns: u64,
    pub issuer_signature: [u8; 64],
}

impl Certificate {
    /// Canonical encoding of every field except the issuer signature.
    pub fn signed_bytes(&self) -> Vec<u8> {
        Writer::new()
            .str(CERT_DOMAIN)
            .str(&self.subject)
            .u8(self.role.to_byte())
            .fixed(&self.public_key)
            .fixed(&self.issuer_key)
            .u64(self.valid_from_ns)
            .u64(self.valid_to_ns)
            .finish()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.signed_bytes();
        out.extend_from_slice(&self.issuer_signature);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(bytes);
        if r.str()? != CERT_DOMAIN {
            return Err(CodecError::Invalid("certificate domain tag"));
        }
        let subject = r.str()?;
        let role = Role::from_byte(r.u8()?).ok_or(CodecError::Invalid("role"))?;
        let cert = Certificate {
            subject,
            role,
            public_key: r.fixed()?,
            issuer_key: r.fixed()?,
            valid_from_ns: r.u64()?,
            valid_to_ns: r.u64()?,
            issuer_signature: r.fixed()?,
        };
        r.finish()?;
        Ok(cert)
    }

    /// Checks only the issuer signature against `issuer_key`.
    pub fn signature_valid(&self, issuer: &VerifyingKey) -> bool {
        self.issuer_key == issuer.to_bytes()
            && issuer
                .verify(&self.signed_bytes(), &Signature::from_bytes(&self.issuer_signature))
                .is_ok()
    }

    pub fn valid_at(&self, now_ns: u64) -> bool {
        self.valid_from_ns <= now_ns && now_ns < self.valid_to_ns
    }
}

/// Why a certificate was refused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertRejection {
    UnknownIssuer,
    BadSignature,
    NotYetValid,
    Expired,
    NotEnrolled,
    /// The subject is enrolled under a different certificate.
    RegistryMismatch,
    /// The identity's role is not admitted to the channel.
    NotAdmitted,
}

impl fmt::Display for CertRejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CertRejection::UnknownIssuer => "unknown-issuer",
            CertRejection::BadSignature => "bad-signature",
            CertRejection::NotYetValid => "not-yet-valid",
            CertRejection::Expired => "expired",
            CertRejection::NotEnrolled => "not-enrolled",
            CertRejection::RegistryMismatch => "registry-mismatch",
            CertRejection::NotAdmitted => "not-admitted",
        };
        f.write_str(s)
    }
}

/// Outcome of certificate verification: valid, or invalid with a reason.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertStatus {
    Valid,
    Invalid(CertRejection),
}

impl CertStatus {
    pub fn is_valid(self) -> bool {
        matches!(self, CertStatus::Valid)
    }

    pub fn reason(self) -> Option<CertRejection> {
        match self {
            CertStatus::Valid => None,
            CertStatus::Invalid(r) => Some(r),
        }
    }
}

/// Certificate-issuing key.
#[derive(Clone)]
pub struct Authority {
    key: SigningKey,
}

impl fmt::Debug for Authority {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Authority({})", hex::encode(self.key.verifying_key().to_bytes()))
    }
}

impl Authority {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        Self {
            key: SigningKey::from_bytes(&seed),
        }
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        self.key.verifying_key()
    }

    pub fn issue(&self, subject: &str, role: Role, public_key: [u8; 32], from_ns: u64, to_ns: u64) -> Certificate {
        let mut cert = Certificate {
            subject: subject.to_string(),
            role,
            public_key,
            issuer_key: self.key.verifying_key().to_bytes(),
            valid_from_ns: from_ns,
            valid_to_ns: to_ns,
            issuer_signature: [0; 64],
        };
        cert.issuer_signature = self.key.sign(&cert.signed_bytes()).to_bytes();
        cert
    }

    /// Generates a key pair from `key_seed` and certifies it.
    pub fn enroll(&self, subject: &str, role: Role, key_seed: [u8; 32], from_ns: u64, to_ns: u64) -> Identity {
        let key = SigningKey::from_bytes(&key_seed);
        let certificate = self.issue(subject, role, key.verifying_key().to_bytes(), from_ns, to_ns);
        Identity { certificate, key }
    }
}

/// A member's certificate together with its signing key.
#[derive(Clone)]
pub struct Identity {
    certificate: Certificate,
    key: SigningKey,
}

impl fmt::Debug for Identity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Identity")
            .field("name", &self.certificate.subject)
            .field("role", &self.certificate.role)
            .finish_non_exhaustive()
    }
}

impl Identity {
    /// Pairs an arbitrary certificate with a signing key. Nothing checks that
    /// they belong together; the ledger does that on use.
    pub fn from_parts(certificate: Certificate, key_seed: [u8; 32]) -> Self {
        Self {
            certificate,
            key: SigningKey::from_bytes(&key_seed),
        }
    }

    pub fn name(&self) -> &str {
        &self.certificate.subject
    }

    pub fn role(&self) -> Role {
        self.certificate.role
    }

    pub fn public_key(&self) -> [u8; 32] {
        self.key.verifying_key().to_bytes()
    }

    pub fn certificate(&self) -> &Certificate {
        &self.certificate
    }

    pub fn sign(&self, msg: &[u8]) -> [u8; 64] {
        self.key.sign(msg).to_bytes()
    }
}

/// Verifies a detached Ed25519 signature.
pub fn verify_signature(public_key: &[u8; 32], msg: &[u8], signature: &[u8; 64]) -> bool {
    VerifyingKey::from_bytes(public_key)
        .map(|k| k.verify(msg, &Signature::from_bytes(signature)).is_ok())
        .unwrap_or(false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn issued_certificates_verify_and_round_trip() {
        let ca = Authority::from_seed([1; 32]);
        let id = ca.enroll("alice", Role::Uav, [2; 32], 0, 100);
        let cert = id.certificate();
        assert!(cert.signature_valid(&ca.verifying_key()));
        assert_eq!(cert.public_key, id.public_key());
        assert_eq!(Certificate::decode(&cert.encode()).unwrap(), *cert);
    }

    #[test]
    fn any_flipped_byte_breaks_the_certificate() {
        let ca = Authority::from_seed([1; 32]);
        let cert = ca.enroll("alice", Role::Uav, [2; 32], 0, 100).certificate().clone();
        let encoded = cert.encode();
        for i in 0..encoded.len() {
            let mut bytes = encoded.clone();
            bytes[i] ^= 0x01;
            if let Ok(c) = Certificate::decode(&bytes) {
                assert!(!c.signature_valid(&ca.verifying_key()), "byte {i}");
            }
        }
    }

    #[test]
    fn foreign_authority_is_not_accepted() {
        let ca = Authority::from_seed([1; 32]);
        let rogue = Authority::from_seed([3; 32]);
        let cert = rogue.enroll("mallory", Role::Uav, [4; 32], 0, 100).certificate().clone();
        assert!(!cert.signature_valid(&ca.verifying_key()));
    }

    #[test]
    fn detached_signatures() {
        let ca = Authority::from_seed([1; 32]);
        let id = ca.enroll("alice", Role::Uav, [2; 32], 0, 100);
        let sig = id.sign(b"hello");
        assert!(verify_signature(&id.public_key(), b"hello", &sig));
        assert!(!verify_signature(&id.public_key(), b"hellp", &sig));
    }
}
