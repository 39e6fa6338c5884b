use std::collections::BTreeMap;

use super::codec::{Decoder, Encoder};
use super::merkle::{merkle_root, prove, MerkleProof};
use super::{Digest, LedgerError, Signer, Transaction};
use crate::constellation::{ClusterId, SatId};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockHeader {
    pub height: u64,
    pub prev_digest: Digest,
    pub merkle_root: Digest,
    pub round: u64,
    pub producer: SatId,
}

impl BlockHeader {
    pub fn encode_into(&self, e: &mut Encoder) {
        e.u64(self.height)
            .bytes(&self.prev_digest.0)
            .bytes(&self.merkle_root.0)
            .u64(self.round)
            .u32(self.producer);
    }

    pub fn decode_from(d: &mut Decoder) -> Result<Self, LedgerError> {
        let height = d.u64()?;
        let prev = d.bytes()?;
        let root = d.bytes()?;
        let fix = |b: &[u8]| -> Result<Digest, LedgerError> {
            Ok(Digest(
                b.try_into()
                    .map_err(|_| LedgerError::Decode("header digest length".into()))?,
            ))
        };
        Ok(Self {
            height,
            prev_digest: fix(prev)?,
            merkle_root: fix(root)?,
            round: d.u64()?,
            producer: d.u32()?,
        })
    }

    pub fn digest(&self) -> Digest {
        let mut e = Encoder::new();
        self.encode_into(&mut e);
        Digest::of(&e.finish())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub header: BlockHeader,
    pub transactions: Vec<Transaction>,
}

fn canonical_order(txs: &mut [Transaction]) {
    txs.sort_by_cached_key(|t| (t.sender, t.kind.tag(), t.digest()));
}

impl Block {
    /// Builds the next block after `prev` (genesis when `None`).
    ///
    /// Transactions are verified first, then sorted by sender, kind and digest.
    pub fn build(
        mut transactions: Vec<Transaction>,
        prev: Option<&BlockHeader>,
        round: u64,
        producer: SatId,
        signer: &dyn Signer,
    ) -> Result<Block, LedgerError> {
        for tx in &transactions {
            tx.verify(signer)?;
        }
        canonical_order(&mut transactions);
        let leaves: Vec<Digest> = transactions.iter().map(Transaction::digest).collect();
        let header = BlockHeader {
            height: prev.map_or(0, |p| p.height + 1),
            prev_digest: prev.map_or(Digest::ZERO, BlockHeader::digest),
            merkle_root: merkle_root(&leaves),
            round,
            producer,
        };
        Ok(Block { header, transactions })
    }

    pub fn leaves(&self) -> Vec<Digest> {
        self.transactions.iter().map(Transaction::digest).collect()
    }

    pub fn recompute_root(&self) -> Digest {
        merkle_root(&self.leaves())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        self.header.encode_into(&mut e);
        e.len_prefix(self.transactions.len());
        for tx in &self.transactions {
            tx.encode_into(&mut e);
        }
        e.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Block, LedgerError> {
        let mut d = Decoder::new(bytes);
        let header = BlockHeader::decode_from(&mut d)?;
        let n = d.count(1)?;
        let transactions = (0..n)
            .map(|_| Transaction::decode_from(&mut d))
            .collect::<Result<_, _>>()?;
        d.finish()?;
        Ok(Block { header, transactions })
    }
}

/// Per-block verification outcome.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockStatus {
    pub height: u64,
    pub root_ok: bool,
    pub link_ok: bool,
    pub transactions_ok: bool,
}

impl BlockStatus {
    pub fn ok(&self) -> bool {
        self.root_ok && self.link_ok && self.transactions_ok
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Chain {
    pub blocks: Vec<Block>,
}

impl Chain {
    pub fn tip(&self) -> Option<&BlockHeader> {
        self.blocks.last().map(|b| &b.header)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn headers(&self) -> Vec<BlockHeader> {
        self.blocks.iter().map(|b| b.header.clone()).collect()
    }

    /// Appends a block that links to the current tip.
    pub fn append(&mut self, block: Block) -> Result<(), LedgerError> {
        let expected_height = self.blocks.len() as u64;
        let expected_prev = self.tip().map_or(Digest::ZERO, BlockHeader::digest);
        if block.header.height != expected_height || block.header.prev_digest != expected_prev {
            return Err(LedgerError::Corruption(format!(
                "block at height {} does not extend tip at height {}",
                block.header.height, expected_height
            )));
        }
        self.blocks.push(block);
        Ok(())
    }

    pub fn statuses(&self, signer: &dyn Signer) -> Vec<BlockStatus> {
        let mut prev = Digest::ZERO;
        self.blocks
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let status = BlockStatus {
                    height: b.header.height,
                    root_ok: b.recompute_root() == b.header.merkle_root,
                    link_ok: b.header.prev_digest == prev && b.header.height == i as u64,
                    transactions_ok: b.transactions.iter().all(|t| t.verify(signer).is_ok()),
                };
                prev = b.header.digest();
                status
            })
            .collect()
    }

    pub fn verify(&self, signer: &dyn Signer) -> Result<(), LedgerError> {
        match self.statuses(signer).into_iter().find(|s| !s.ok()) {
            None => Ok(()),
            Some(s) => Err(LedgerError::Corruption(format!(
                "block {} failed (root {}, link {}, txs {})",
                s.height, s.root_ok, s.link_ok, s.transactions_ok
            ))),
        }
    }

    /// Inclusion proof for the transaction with leaf digest `tx`, and the
    /// height of its block.
    pub fn prove_inclusion(&self, tx: &Digest) -> Result<(u64, MerkleProof), LedgerError> {
        for b in &self.blocks {
            let leaves = b.leaves();
            if let Some(i) = leaves.iter().position(|l| l == tx) {
                return Ok((b.header.height, prove(&leaves, i).expect("index in range")));
            }
        }
        Err(LedgerError::NotFound)
    }
}

/// Everything one round contributes to the ledger.
#[derive(Clone, Debug, Default)]
pub struct RoundArtifacts {
    pub round: u64,
    pub model_producer: SatId,
    pub model_txs: Vec<Transaction>,
    pub reputation_producer: SatId,
    pub reputation_txs: Vec<Transaction>,
    /// Per cluster: block producer and the cluster's own transactions.
    pub side: BTreeMap<ClusterId, (SatId, Vec<Transaction>)>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChainSet {
    pub model: Chain,
    pub reputation: Chain,
    pub side: BTreeMap<ClusterId, Chain>,
}

impl ChainSet {
    pub fn last_round(&self) -> Option<u64> {
        self.model.tip().map(|h| h.round)
    }

    /// Appends one block to every chain. Nothing is appended when any block
    /// fails to build.
    pub fn append_round(&mut self, artifacts: RoundArtifacts, signer: &dyn Signer) -> Result<(), LedgerError> {
        if let Some(last) = self.last_round() {
            if artifacts.round <= last {
                return Err(LedgerError::Replay {
                    round: artifacts.round,
                    last,
                });
            }
        }
        let round = artifacts.round;
        for (&cluster, (_, txs)) in &artifacts.side {
            for tx in txs {
                if tx.decode_payload()?.cluster() != Some(cluster) {
                    return Err(LedgerError::ForeignTx {
                        cluster,
                        sender: tx.sender,
                    });
                }
            }
        }
        let model = Block::build(
            artifacts.model_txs,
            self.model.tip(),
            round,
            artifacts.model_producer,
            signer,
        )?;
        let reputation = Block::build(
            artifacts.reputation_txs,
            self.reputation.tip(),
            round,
            artifacts.reputation_producer,
            signer,
        )?;
        let mut side = Vec::new();
        for (cluster, (producer, txs)) in artifacts.side {
            let tip = self.side.get(&cluster).and_then(Chain::tip);
            side.push((cluster, Block::build(txs, tip, round, producer, signer)?));
        }
        self.model.append(model)?;
        self.reputation.append(reputation)?;
        for (cluster, block) in side {
            self.side.entry(cluster).or_default().append(block)?;
        }
        Ok(())
    }

    pub fn chains(&self) -> Vec<(String, &Chain)> {
        let mut out = vec![
            ("model".to_string(), &self.model),
            ("reputation".to_string(), &self.reputation),
        ];
        for (c, chain) in &self.side {
            out.push((format!("side-{c}"), chain));
        }
        out
    }

    pub fn verify(&self, signer: &dyn Signer) -> Result<(), LedgerError> {
        for (name, chain) in self.chains() {
            chain
                .verify(signer)
                .map_err(|e| LedgerError::Corruption(format!("{name}: {e}")))?;
        }
        for (&cluster, chain) in &self.side {
            for b in &chain.blocks {
                for tx in &b.transactions {
                    if tx.decode_payload()?.cluster() != Some(cluster) {
                        return Err(LedgerError::ForeignTx {
                            cluster,
                            sender: tx.sender,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}
