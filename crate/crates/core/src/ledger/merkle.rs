use serde::{Deserialize, Serialize};

use super::{BlockHeader, Digest};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

/// Inclusion path from a leaf to the root; each step names the sibling and
/// which side it sits on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MerkleProof {
    pub leaf: Digest,
    pub path: Vec<(Digest, Side)>,
    pub root: Digest,
}

fn next_level(level: &[Digest]) -> Vec<Digest> {
    level
        .chunks(2)
        .map(|pair| Digest::of_pair(&pair[0], pair.get(1).unwrap_or(&pair[0])))
        .collect()
}

/// Root over `leaves`; odd levels duplicate their last node. Empty gives zero.
pub fn merkle_root(leaves: &[Digest]) -> Digest {
    if leaves.is_empty() {
        return Digest::ZERO;
    }
    let mut level = leaves.to_vec();
    while level.len() > 1 {
        level = next_level(&level);
    }
    level[0]
}

pub fn prove(leaves: &[Digest], index: usize) -> Option<MerkleProof> {
    if index >= leaves.len() {
        return None;
    }
    let mut path = Vec::new();
    let mut level = leaves.to_vec();
    let mut i = index;
    while level.len() > 1 {
        let sibling = if i.is_multiple_of(2) {
            (*level.get(i + 1).unwrap_or(&level[i]), Side::Right)
        } else {
            (level[i - 1], Side::Left)
        };
        path.push(sibling);
        level = next_level(&level);
        i /= 2;
    }
    Some(MerkleProof {
        leaf: leaves[index],
        path,
        root: level[0],
    })
}

/// Folds the path and checks it against the header's root.
pub fn verify_proof(header: &BlockHeader, proof: &MerkleProof) -> bool {
    let folded = proof.path.iter().fold(proof.leaf, |acc, (sib, side)| match side {
        Side::Left => Digest::of_pair(sib, &acc),
        Side::Right => Digest::of_pair(&acc, sib),
    });
    folded == proof.root && proof.root == header.merkle_root
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaves(n: usize) -> Vec<Digest> {
        (0..n).map(|i| Digest::of(&[i as u8])).collect()
    }

    fn header(root: Digest) -> BlockHeader {
        BlockHeader {
            height: 0,
            prev_digest: Digest::ZERO,
            merkle_root: root,
            round: 0,
            producer: 0,
        }
    }

    #[test]
    fn single_leaf_is_root() {
        let l = leaves(1);
        assert_eq!(merkle_root(&l), l[0]);
        let p = prove(&l, 0).unwrap();
        assert!(p.path.is_empty());
        assert!(verify_proof(&header(l[0]), &p));
    }

    #[test]
    fn three_leaves_duplicate_last() {
        let l = leaves(3);
        let expected = Digest::of_pair(&Digest::of_pair(&l[0], &l[1]), &Digest::of_pair(&l[2], &l[2]));
        assert_eq!(merkle_root(&l), expected);
    }

    #[test]
    fn proofs_length_and_validity() {
        for n in 1..=9 {
            let l = leaves(n);
            let root = merkle_root(&l);
            let depth = (n as f64).log2().ceil() as usize;
            for i in 0..n {
                let p = prove(&l, i).unwrap();
                assert_eq!(p.path.len(), depth);
                assert!(verify_proof(&header(root), &p));
                assert!(!verify_proof(&header(Digest::of(b"other")), &p));
            }
        }
        assert!(prove(&leaves(2), 2).is_none());
    }
}
