//! Sharded ledger: signed transactions, hash-linked blocks, a model chain,
//! a reputation chain and one side chain per cluster.

mod chain;
pub mod codec;
mod dump;
mod merkle;
mod sign;
mod tx;

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::constellation::{ClusterId, SatId};

pub use chain::{Block, BlockHeader, BlockStatus, Chain, ChainSet, RoundArtifacts};
pub use dump::{dump_chains, load_chains, verify_dump, DumpIndex, DumpReport};
pub use merkle::{merkle_root, prove, verify_proof, MerkleProof, Side};
pub use sign::{HmacSigner, KeyRegistry, Signer};
pub use tx::{ModelRecord, Payload, Transaction, TxKind};

pub const DIGEST_ALGORITHM: &str = "sha256";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LedgerError {
    #[error("unknown account {0}")]
    UnknownAccount(SatId),
    #[error("invalid signature on {kind:?} tx from {sender} in round {round}")]
    BadSignature { kind: TxKind, sender: SatId, round: u64 },
    #[error("payload digest mismatch on tx from {0}")]
    PayloadMismatch(SatId),
    #[error("chain corruption: {0}")]
    Corruption(String),
    #[error("round {round} already recorded (last {last})")]
    Replay { round: u64, last: u64 },
    #[error("transaction not found")]
    NotFound,
    #[error("decode error: {0}")]
    Decode(String),
    #[error("side chain for cluster {cluster} received a tx from {sender}")]
    ForeignTx { cluster: ClusterId, sender: SatId },
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for LedgerError {
    fn from(e: std::io::Error) -> Self {
        LedgerError::Io(e.to_string())
    }
}

/// 32-byte SHA-256 digest; serialized as lowercase hex.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0; 32]);

    pub fn of(bytes: &[u8]) -> Digest {
        Digest(Sha256::digest(bytes).into())
    }

    pub fn of_pair(left: &Digest, right: &Digest) -> Digest {
        let mut h = Sha256::new();
        h.update(left.0);
        h.update(right.0);
        Digest(h.finalize().into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Digest, LedgerError> {
        let bytes = hex::decode(s).map_err(|e| LedgerError::Decode(e.to_string()))?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| LedgerError::Decode(format!("digest {s} is not 32 bytes")))?;
        Ok(Digest(arr))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..12])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).map_err(serde::de::Error::custom)
    }
}
