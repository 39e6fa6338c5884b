use serde::{Deserialize, Serialize};

use super::codec::{Decoder, Encoder};
use super::{Digest, LedgerError, Signer};
use crate::constellation::{ClusterId, SatId};
use crate::fl::ParamVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TxKind {
    LocalModel,
    MinerVote,
    ClusterModel,
    HeadBallot,
    ReputationUpdate,
    GlobalModel,
}

impl TxKind {
    pub fn tag(self) -> u8 {
        match self {
            TxKind::LocalModel => 1,
            TxKind::MinerVote => 2,
            TxKind::ClusterModel => 3,
            TxKind::HeadBallot => 4,
            TxKind::ReputationUpdate => 5,
            TxKind::GlobalModel => 6,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self, LedgerError> {
        Ok(match tag {
            1 => TxKind::LocalModel,
            2 => TxKind::MinerVote,
            3 => TxKind::ClusterModel,
            4 => TxKind::HeadBallot,
            5 => TxKind::ReputationUpdate,
            6 => TxKind::GlobalModel,
            t => return Err(LedgerError::Decode(format!("unknown tx kind tag {t}"))),
        })
    }
}

/// A model either stored in full or committed to by digest only.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelRecord {
    Full(ParamVector),
    Digest(Digest),
}

impl ModelRecord {
    pub fn digest(&self) -> Digest {
        match self {
            ModelRecord::Full(w) => Digest::of(&w.to_be_bytes()),
            ModelRecord::Digest(d) => *d,
        }
    }

    fn encode(&self, e: &mut Encoder) {
        match self {
            ModelRecord::Full(w) => {
                e.u8(0).bytes(&w.to_be_bytes());
            }
            ModelRecord::Digest(d) => {
                e.u8(1).bytes(&d.0);
            }
        }
    }

    fn decode(d: &mut Decoder) -> Result<Self, LedgerError> {
        match d.u8()? {
            0 => {
                let raw = d.bytes()?;
                Ok(ModelRecord::Full(param_from_bytes(raw)?))
            }
            1 => Ok(ModelRecord::Digest(digest_from(d.bytes()?)?)),
            t => Err(LedgerError::Decode(format!("unknown model record tag {t}"))),
        }
    }
}

fn param_from_bytes(raw: &[u8]) -> Result<ParamVector, LedgerError> {
    let mut d = Decoder::new(raw);
    let n = d.count(8)?;
    let mut v = Vec::with_capacity(n);
    for _ in 0..n {
        v.push(d.f64()?);
    }
    d.finish()?;
    Ok(ParamVector::from_vec(v))
}

fn digest_from(raw: &[u8]) -> Result<Digest, LedgerError> {
    let arr: [u8; 32] = raw
        .try_into()
        .map_err(|_| LedgerError::Decode(format!("digest of {} bytes", raw.len())))?;
    Ok(Digest(arr))
}

/// Typed transaction contents, encoded canonically in declared field order.
#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    LocalModel {
        cluster: ClusterId,
        model: ModelRecord,
        samples: u64,
    },
    MinerVote {
        cluster: ClusterId,
        choice: Option<Digest>,
        score: f64,
        suspects: Vec<SatId>,
    },
    ClusterModel {
        cluster: ClusterId,
        model: ModelRecord,
        score: f64,
        suspects: Vec<SatId>,
    },
    HeadBallot {
        cluster: ClusterId,
        approvals: Vec<(ClusterId, bool)>,
        scores: Vec<(ClusterId, f64)>,
    },
    ReputationUpdate {
        deltas: Vec<(SatId, f64)>,
        reputations: Vec<(SatId, f64)>,
    },
    GlobalModel {
        model: ModelRecord,
        accepted: Vec<ClusterId>,
        suspects: Vec<SatId>,
        global_loss: f64,
        failed: bool,
    },
}

fn put_ids(e: &mut Encoder, ids: &[u32]) {
    e.len_prefix(ids.len());
    for &id in ids {
        e.u32(id);
    }
}

fn get_ids(d: &mut Decoder) -> Result<Vec<u32>, LedgerError> {
    let n = d.count(4)?;
    (0..n).map(|_| d.u32()).collect()
}

fn put_reals(e: &mut Encoder, pairs: &[(u32, f64)]) {
    e.len_prefix(pairs.len());
    for &(id, v) in pairs {
        e.u32(id).f64(v);
    }
}

fn get_reals(d: &mut Decoder) -> Result<Vec<(u32, f64)>, LedgerError> {
    let n = d.count(12)?;
    (0..n).map(|_| Ok((d.u32()?, d.f64()?))).collect()
}

impl Payload {
    pub fn kind(&self) -> TxKind {
        match self {
            Payload::LocalModel { .. } => TxKind::LocalModel,
            Payload::MinerVote { .. } => TxKind::MinerVote,
            Payload::ClusterModel { .. } => TxKind::ClusterModel,
            Payload::HeadBallot { .. } => TxKind::HeadBallot,
            Payload::ReputationUpdate { .. } => TxKind::ReputationUpdate,
            Payload::GlobalModel { .. } => TxKind::GlobalModel,
        }
    }

    /// Cluster the payload belongs to, when it has one.
    pub fn cluster(&self) -> Option<ClusterId> {
        match self {
            Payload::LocalModel { cluster, .. }
            | Payload::MinerVote { cluster, .. }
            | Payload::ClusterModel { cluster, .. }
            | Payload::HeadBallot { cluster, .. } => Some(*cluster),
            _ => None,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        match self {
            Payload::LocalModel {
                cluster,
                model,
                samples,
            } => {
                e.u32(*cluster);
                model.encode(&mut e);
                e.u64(*samples);
            }
            Payload::MinerVote {
                cluster,
                choice,
                score,
                suspects,
            } => {
                e.u32(*cluster);
                match choice {
                    Some(c) => e.u8(1).bytes(&c.0),
                    None => e.u8(0),
                };
                e.f64(*score);
                put_ids(&mut e, suspects);
            }
            Payload::ClusterModel {
                cluster,
                model,
                score,
                suspects,
            } => {
                e.u32(*cluster);
                model.encode(&mut e);
                e.f64(*score);
                put_ids(&mut e, suspects);
            }
            Payload::HeadBallot {
                cluster,
                approvals,
                scores,
            } => {
                e.u32(*cluster);
                e.len_prefix(approvals.len());
                for &(c, a) in approvals {
                    e.u32(c).bool(a);
                }
                put_reals(&mut e, scores);
            }
            Payload::ReputationUpdate { deltas, reputations } => {
                put_reals(&mut e, deltas);
                put_reals(&mut e, reputations);
            }
            Payload::GlobalModel {
                model,
                accepted,
                suspects,
                global_loss,
                failed,
            } => {
                model.encode(&mut e);
                put_ids(&mut e, accepted);
                put_ids(&mut e, suspects);
                e.f64(*global_loss).bool(*failed);
            }
        }
        e.finish()
    }

    pub fn decode(kind: TxKind, bytes: &[u8]) -> Result<Payload, LedgerError> {
        let mut d = Decoder::new(bytes);
        let p = match kind {
            TxKind::LocalModel => Payload::LocalModel {
                cluster: d.u32()?,
                model: ModelRecord::decode(&mut d)?,
                samples: d.u64()?,
            },
            TxKind::MinerVote => Payload::MinerVote {
                cluster: d.u32()?,
                choice: match d.u8()? {
                    0 => None,
                    1 => Some(digest_from(d.bytes()?)?),
                    t => return Err(LedgerError::Decode(format!("invalid option tag {t}"))),
                },
                score: d.f64()?,
                suspects: get_ids(&mut d)?,
            },
            TxKind::ClusterModel => Payload::ClusterModel {
                cluster: d.u32()?,
                model: ModelRecord::decode(&mut d)?,
                score: d.f64()?,
                suspects: get_ids(&mut d)?,
            },
            TxKind::HeadBallot => {
                let cluster = d.u32()?;
                let n = d.count(5)?;
                let approvals = (0..n)
                    .map(|_| Ok((d.u32()?, d.bool()?)))
                    .collect::<Result<_, LedgerError>>()?;
                Payload::HeadBallot {
                    cluster,
                    approvals,
                    scores: get_reals(&mut d)?,
                }
            }
            TxKind::ReputationUpdate => Payload::ReputationUpdate {
                deltas: get_reals(&mut d)?,
                reputations: get_reals(&mut d)?,
            },
            TxKind::GlobalModel => Payload::GlobalModel {
                model: ModelRecord::decode(&mut d)?,
                accepted: get_ids(&mut d)?,
                suspects: get_ids(&mut d)?,
                global_loss: d.f64()?,
                failed: d.bool()?,
            },
        };
        d.finish()?;
        Ok(p)
    }
}

/// A signed protocol message.
#[derive(Clone, Debug, PartialEq)]
pub struct Transaction {
    pub kind: TxKind,
    pub sender: SatId,
    pub round: u64,
    pub payload: Vec<u8>,
    pub payload_digest: Digest,
    pub signature: Vec<u8>,
}

fn signing_message(kind: TxKind, sender: SatId, round: u64, digest: &Digest) -> Vec<u8> {
    let mut e = Encoder::new();
    e.u8(kind.tag()).u32(sender).u64(round).bytes(&digest.0);
    e.finish()
}

impl Transaction {
    pub fn new(payload: &Payload, sender: SatId, round: u64, signer: &dyn Signer) -> Result<Self, LedgerError> {
        let bytes = payload.encode();
        let payload_digest = Digest::of(&bytes);
        let kind = payload.kind();
        let signature = signer.sign(sender, &signing_message(kind, sender, round, &payload_digest))?;
        Ok(Self {
            kind,
            sender,
            round,
            payload: bytes,
            payload_digest,
            signature,
        })
    }

    pub fn decode_payload(&self) -> Result<Payload, LedgerError> {
        Payload::decode(self.kind, &self.payload)
    }

    /// Checks the payload commitment and the sender's signature.
    pub fn verify(&self, signer: &dyn Signer) -> Result<(), LedgerError> {
        if Digest::of(&self.payload) != self.payload_digest {
            return Err(LedgerError::PayloadMismatch(self.sender));
        }
        let msg = signing_message(self.kind, self.sender, self.round, &self.payload_digest);
        if !signer.verify(self.sender, &msg, &self.signature)? {
            return Err(LedgerError::BadSignature {
                kind: self.kind,
                sender: self.sender,
                round: self.round,
            });
        }
        self.decode_payload().map(|_| ())
    }

    pub fn encode_into(&self, e: &mut Encoder) {
        e.u8(self.kind.tag())
            .u32(self.sender)
            .u64(self.round)
            .bytes(&self.payload)
            .bytes(&self.payload_digest.0)
            .bytes(&self.signature);
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        self.encode_into(&mut e);
        e.finish()
    }

    pub fn decode_from(d: &mut Decoder) -> Result<Self, LedgerError> {
        Ok(Self {
            kind: TxKind::from_tag(d.u8()?)?,
            sender: d.u32()?,
            round: d.u64()?,
            payload: d.bytes()?.to_vec(),
            payload_digest: digest_from(d.bytes()?)?,
            signature: d.bytes()?.to_vec(),
        })
    }

    /// Leaf digest used in Merkle trees.
    pub fn digest(&self) -> Digest {
        Digest::of(&self.encode())
    }
}
