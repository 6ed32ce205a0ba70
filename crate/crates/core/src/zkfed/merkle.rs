use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

pub type Digest = [u8; 32];

const LEAF: u8 = 0x00;
const NODE: u8 = 0x01;
const EMPTY: u8 = 0x02;

/// Leaf for one accepted client.
pub fn leaf_hash(client_id: u32, commitment_digest: &Digest) -> Digest {
    let mut h = Sha256::new();
    h.update([LEAF]);
    h.update(client_id.to_le_bytes());
    h.update(commitment_digest);
    h.finalize().into()
}

fn node_hash(left: &Digest, right: &Digest) -> Digest {
    let mut h = Sha256::new();
    h.update([NODE]);
    h.update(left);
    h.update(right);
    h.finalize().into()
}

/// Which side the sibling sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

/// Binary hash tree. An unpaired node at the end of a level moves up unchanged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MerkleTree {
    levels: Vec<Vec<Digest>>,
}

impl MerkleTree {
    pub fn new(leaves: Vec<Digest>) -> Self {
        let mut levels = vec![leaves];
        while levels.last().map_or(false, |l| l.len() > 1) {
            let prev = levels.last().unwrap();
            let next = prev
                .chunks(2)
                .map(|pair| match pair {
                    [l, r] => node_hash(l, r),
                    [single] => *single,
                    _ => unreachable!(),
                })
                .collect();
            levels.push(next);
        }
        Self { levels }
    }

    pub fn len(&self) -> usize {
        self.levels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels[0].is_empty()
    }

    pub fn root(&self) -> Digest {
        match self.levels.last().and_then(|l| l.first()) {
            Some(r) => *r,
            None => Sha256::digest([EMPTY]).into(),
        }
    }

    pub fn path(&self, index: usize) -> Option<InclusionPath> {
        if index >= self.len() {
            return None;
        }
        let mut steps = Vec::new();
        let mut i = index;
        for level in &self.levels[..self.levels.len() - 1] {
            let sibling = i ^ 1;
            if sibling < level.len() {
                let side = if sibling < i { Side::Left } else { Side::Right };
                steps.push((side, level[sibling]));
            }
            i /= 2;
        }
        Some(InclusionPath { steps })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InclusionPath {
    pub steps: Vec<(Side, Digest)>,
}

impl InclusionPath {
    pub fn root_from(&self, leaf: Digest) -> Digest {
        self.steps.iter().fold(leaf, |acc, (side, sib)| match side {
            Side::Left => node_hash(sib, &acc),
            Side::Right => node_hash(&acc, sib),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaves(n: u32) -> Vec<Digest> {
        (0..n).map(|i| leaf_hash(i, &[i as u8; 32])).collect()
    }

    #[test]
    fn every_leaf_proves_membership() {
        for n in 1..=17 {
            let tree = MerkleTree::new(leaves(n));
            for (i, leaf) in leaves(n).into_iter().enumerate() {
                let p = tree.path(i).unwrap();
                assert_eq!(p.root_from(leaf), tree.root(), "n={n} i={i}");
                assert!(p.steps.len() <= 5);
            }
            assert!(tree.path(n as usize).is_none());
        }
    }

    #[test]
    fn two_leaf_root_by_hand() {
        let l = leaves(2);
        assert_eq!(MerkleTree::new(l.clone()).root(), node_hash(&l[0], &l[1]));
        assert_eq!(MerkleTree::new(vec![l[0]]).root(), l[0]);
    }

    #[test]
    fn foreign_leaf_rejected() {
        let tree = MerkleTree::new(leaves(5));
        let outsider = leaf_hash(9, &[9; 32]);
        for i in 0..5 {
            assert_ne!(tree.path(i).unwrap().root_from(outsider), tree.root());
        }
    }

    #[test]
    fn dropping_a_leaf_changes_root() {
        let all = MerkleTree::new(leaves(4)).root();
        let mut l = leaves(4);
        l.remove(2);
        assert_ne!(MerkleTree::new(l).root(), all);
        assert_ne!(MerkleTree::new(Vec::new()).root(), all);
    }
}
