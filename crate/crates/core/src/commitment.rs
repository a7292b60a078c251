//! Hashing, append-only Merkle trees and the key-value state trie.
//!
//! Every commitment in the simulator is a SHA-256 [`Digest`]. Both tree
//! shapes share one binary Merkle construction: leaves are hashed under a
//! leaf tag, pairs are hashed under a node tag, and an odd node at the end of
//! a level is paired with itself. The final root binds the leaf count so that
//! duplicating the last leaf (the classic Bitcoin-style padding ambiguity)
//! yields a different root.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

const LEAF_TAG: u8 = 0x00;
const NODE_TAG: u8 = 0x01;

/// A 32-byte SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = hex::decode(s).ok()?;
        let arr: [u8; 32] = bytes.try_into().ok()?;
        Some(Digest(arr))
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
        Digest::from_hex(&s).ok_or_else(|| serde::de::Error::custom("expected 64 hex chars"))
    }
}

/// SHA-256 of a raw byte string.
pub fn hash_bytes(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// Appends `field` to `buf` as an 8-byte big-endian length followed by the bytes.
pub fn encode_field(buf: &mut Vec<u8>, field: &[u8]) {
    buf.extend_from_slice(&(field.len() as u64).to_be_bytes());
    buf.extend_from_slice(field);
}

/// Length-prefixed encoding of an ordered field list.
pub fn encode_tuple<F: AsRef<[u8]>>(fields: &[F]) -> Vec<u8> {
    let mut buf = Vec::new();
    for field in fields {
        encode_field(&mut buf, field.as_ref());
    }
    buf
}

/// Hashes an ordered tuple of byte strings. Field boundaries are unambiguous,
/// so `["a", "b"]` and `["ab", ""]` hash differently.
pub fn hash_tuple<F: AsRef<[u8]>>(fields: &[F]) -> Digest {
    hash_bytes(&encode_tuple(fields))
}

/// Root of a structure with no leaves.
pub fn empty_root() -> Digest {
    hash_bytes(b"")
}

fn leaf_node(data: &[u8]) -> Digest {
    let mut h = Sha256::new();
    h.update([LEAF_TAG]);
    h.update(data);
    Digest(h.finalize().into())
}

fn inner_node(left: &Digest, right: &Digest) -> Digest {
    let mut h = Sha256::new();
    h.update([NODE_TAG]);
    h.update(left.0);
    h.update(right.0);
    Digest(h.finalize().into())
}

fn bind_count(domain: &[u8], count: usize, top: &Digest) -> Digest {
    hash_tuple(&[domain, &(count as u64).to_be_bytes(), &top.0])
}

/// Reduces a non-empty level of node hashes to the top hash.
fn merkle_top(mut level: Vec<Digest>) -> Digest {
    debug_assert!(!level.is_empty());
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|pair| inner_node(&pair[0], pair.get(1).unwrap_or(&pair[0])))
            .collect();
    }
    level[0]
}

/// Sibling hashes needed to climb from `index` to the top. Levels where the
/// node is paired with itself contribute no sibling.
fn merkle_path(mut level: Vec<Digest>, mut index: usize) -> Vec<Digest> {
    let mut path = Vec::new();
    while level.len() > 1 {
        let sibling = index ^ 1;
        if sibling < level.len() {
            path.push(level[sibling]);
        }
        level = level
            .chunks(2)
            .map(|pair| inner_node(&pair[0], pair.get(1).unwrap_or(&pair[0])))
            .collect();
        index /= 2;
    }
    path
}

/// Recomputes the top hash from a node, its position and its path. Returns
/// `None` if the path length does not fit the tree shape.
fn climb(mut node: Digest, mut index: u64, mut width: u64, path: &[Digest]) -> Option<Digest> {
    let mut siblings = path.iter();
    while width > 1 {
        let sibling_pos = index ^ 1;
        node = if sibling_pos < width {
            let sibling = siblings.next()?;
            if index.is_multiple_of(2) {
                inner_node(&node, sibling)
            } else {
                inner_node(sibling, &node)
            }
        } else {
            inner_node(&node, &node)
        };
        index /= 2;
        width = width.div_ceil(2);
    }
    if siblings.next().is_some() {
        return None;
    }
    Some(node)
}

const APPEND_DOMAIN: &[u8] = b"append-tree";
const TRIE_DOMAIN: &[u8] = b"state-trie";

/// Insert-only Merkle tree over digests, used for the trigger and action trees.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppendTree {
    leaves: Vec<Digest>,
    root: Digest,
}

impl Default for AppendTree {
    fn default() -> Self {
        Self::new()
    }
}

impl AppendTree {
    pub fn new() -> Self {
        AppendTree {
            leaves: Vec::new(),
            root: empty_root(),
        }
    }

    pub fn from_leaves<I: IntoIterator<Item = Digest>>(leaves: I) -> Self {
        let mut tree = AppendTree {
            leaves: leaves.into_iter().collect(),
            root: empty_root(),
        };
        tree.root = Self::compute_root(&tree.leaves);
        tree
    }

    /// Root of a leaf sequence under the append-tree rule.
    pub fn compute_root(leaves: &[Digest]) -> Digest {
        if leaves.is_empty() {
            return empty_root();
        }
        let level = leaves.iter().map(|l| leaf_node(&l.0)).collect();
        bind_count(APPEND_DOMAIN, leaves.len(), &merkle_top(level))
    }

    pub fn insert(&mut self, leaf: Digest) {
        self.leaves.push(leaf);
        self.root = Self::compute_root(&self.leaves);
    }

    /// Value-style insert: returns the extended tree.
    pub fn inserted(mut self, leaf: Digest) -> Self {
        self.insert(leaf);
        self
    }

    pub fn root(&self) -> Digest {
        self.root
    }

    pub fn leaves(&self) -> &[Digest] {
        &self.leaves
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CommitmentError {
    #[error("key {0} is not present in the trie")]
    AbsentKey(String),
}

/// Key-value store committed as a binary Merkle tree over entries sorted by
/// `hash(key)`. The root depends only on the set of entries.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StateTrie {
    entries: BTreeMap<Digest, (Vec<u8>, Vec<u8>)>,
}

impl StateTrie {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_map<'a, I>(entries: I) -> Self
    where
        I: IntoIterator<Item = (&'a Vec<u8>, &'a Vec<u8>)>,
    {
        let mut trie = StateTrie::new();
        for (k, v) in entries {
            trie.set(k.clone(), v.clone());
        }
        trie
    }

    pub fn set(&mut self, key: Vec<u8>, value: Vec<u8>) {
        self.entries.insert(hash_bytes(&key), (key, value));
    }

    /// Value-style set.
    pub fn with(mut self, key: Vec<u8>, value: Vec<u8>) -> Self {
        self.set(key, value);
        self
    }

    pub fn remove(&mut self, key: &[u8]) {
        self.entries.remove(&hash_bytes(key));
    }

    pub fn get(&self, key: &[u8]) -> Option<&[u8]> {
        self.entries.get(&hash_bytes(key)).map(|(_, v)| v.as_slice())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn leaf_level(&self) -> Vec<Digest> {
        self.entries
            .values()
            .map(|(k, v)| leaf_node(&encode_tuple(&[k, v])))
            .collect()
    }

    pub fn root(&self) -> Digest {
        if self.entries.is_empty() {
            return empty_root();
        }
        bind_count(TRIE_DOMAIN, self.entries.len(), &merkle_top(self.leaf_level()))
    }

    pub fn prove(&self, key: &[u8]) -> Result<MembershipProof, CommitmentError> {
        let hk = hash_bytes(key);
        let index = self
            .entries
            .keys()
            .position(|k| *k == hk)
            .ok_or_else(|| CommitmentError::AbsentKey(String::from_utf8_lossy(key).into_owned()))?;
        let (k, v) = &self.entries[&hk];
        Ok(MembershipProof {
            key: k.clone(),
            value: v.clone(),
            index: index as u64,
            leaf_count: self.entries.len() as u64,
            siblings: merkle_path(self.leaf_level(), index),
        })
    }
}

/// Functional alias of [`StateTrie::with`].
pub fn trie_set(trie: StateTrie, key: Vec<u8>, value: Vec<u8>) -> StateTrie {
    trie.with(key, value)
}

pub fn trie_root(trie: &StateTrie) -> Digest {
    trie.root()
}

pub fn prove_member(trie: &StateTrie, key: &[u8]) -> Result<MembershipProof, CommitmentError> {
    trie.prove(key)
}

pub fn verify_member(root: &Digest, proof: &MembershipProof) -> bool {
    proof.verify(root)
}

/// Proof that `(key, value)` is an entry of a [`StateTrie`] with a given root.
/// `index` and `leaf_count` fix the position bits of every sibling.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MembershipProof {
    #[serde(with = "hex_bytes")]
    pub key: Vec<u8>,
    #[serde(with = "hex_bytes")]
    pub value: Vec<u8>,
    pub index: u64,
    pub leaf_count: u64,
    pub siblings: Vec<Digest>,
}

impl MembershipProof {
    pub fn verify(&self, root: &Digest) -> bool {
        if self.leaf_count == 0 || self.index >= self.leaf_count {
            return false;
        }
        let leaf = leaf_node(&encode_tuple(&[&self.key, &self.value]));
        match climb(leaf, self.index, self.leaf_count, &self.siblings) {
            Some(top) => bind_count(TRIE_DOMAIN, self.leaf_count as usize, &top) == *root,
            None => false,
        }
    }

    /// Canonical byte encoding, used for transport and mutation testing.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        encode_field(&mut out, &self.key);
        encode_field(&mut out, &self.value);
        out.extend_from_slice(&self.index.to_be_bytes());
        out.extend_from_slice(&self.leaf_count.to_be_bytes());
        out.extend_from_slice(&(self.siblings.len() as u64).to_be_bytes());
        for s in &self.siblings {
            out.extend_from_slice(&s.0);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        let mut r = Reader(bytes);
        let key = r.field()?;
        let value = r.field()?;
        let index = r.u64()?;
        let leaf_count = r.u64()?;
        let n = r.u64()?;
        if n > 64 {
            return None;
        }
        let mut siblings = Vec::with_capacity(n as usize);
        for _ in 0..n {
            siblings.push(Digest(r.take(32)?.try_into().ok()?));
        }
        if !r.0.is_empty() {
            return None;
        }
        Some(MembershipProof {
            key,
            value,
            index,
            leaf_count,
            siblings,
        })
    }
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.0.len() < n {
            return None;
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Some(head)
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_be_bytes(self.take(8)?.try_into().ok()?))
    }

    fn field(&mut self) -> Option<Vec<u8>> {
        let len = usize::try_from(self.u64()?).ok()?;
        Some(self.take(len)?.to_vec())
    }
}

pub(crate) mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}
