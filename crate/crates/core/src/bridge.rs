//! Header relay between the two L1 chains and verification of the other
//! VSM's attributes against relayed headers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::commitment::{Digest, MembershipProof};
use crate::l1vsm::{L1Chain, VsmSnapshot};
use crate::model::RollupId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelayedHeader {
    pub source: RollupId,
    pub round: u64,
    pub digest: Digest,
}

/// Membership proofs of snapshot attributes against the header of
/// `header_round`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeProofs {
    pub header_round: u64,
    pub proofs: Vec<MembershipProof>,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum BridgeError {
    #[error("header of round {round} is not final at round {now}")]
    NotFinal { round: u64, now: u64 },
    #[error("no header for round {0}")]
    UnknownRound(u64),
    #[error("expected {expected} attribute proofs, got {got}")]
    ProofCount { expected: usize, got: usize },
    #[error("attribute {0} is not proven")]
    Unproven(String),
}

/// Read-only view of one source chain's headers as seen from the other
/// chain at the current round.
#[derive(Clone, Copy, Debug)]
pub struct BridgeView<'a> {
    source: RollupId,
    headers: &'a [Digest],
    now: u64,
    delay: u64,
}

impl<'a> BridgeView<'a> {
    pub fn new(source: RollupId, headers: &'a [Digest], now: u64, delay: u64) -> Self {
        BridgeView {
            source,
            headers,
            now,
            delay,
        }
    }

    /// Header of `round`, once it is `delay` rounds old.
    pub fn relay(&self, round: u64) -> Result<RelayedHeader, BridgeError> {
        if round.saturating_add(self.delay) > self.now {
            return Err(BridgeError::NotFinal { round, now: self.now });
        }
        let digest = *self
            .headers
            .get(round as usize)
            .ok_or(BridgeError::UnknownRound(round))?;
        Ok(RelayedHeader {
            source: self.source,
            round,
            digest,
        })
    }

    /// Every claimed attribute must come with a proof against the relayed
    /// header, in claim order.
    pub fn ver_attributes(&self, snapshot: &VsmSnapshot, proofs: &AttributeProofs) -> Result<(), BridgeError> {
        let header = self.relay(proofs.header_round)?;
        let claims = snapshot.claims();
        if claims.len() != proofs.proofs.len() {
            return Err(BridgeError::ProofCount {
                expected: claims.len(),
                got: proofs.proofs.len(),
            });
        }
        for ((key, value), proof) in claims.iter().zip(&proofs.proofs) {
            if proof.key != *key || proof.value != *value || !proof.verify(&header.digest) {
                return Err(BridgeError::Unproven(String::from_utf8_lossy(key).into_owned()));
            }
        }
        Ok(())
    }
}

/// Snapshot of `chain`'s VSM as of `round` with proofs against that round's
/// header. `decision_at` adds the decision entry for that index, if any.
pub fn snapshot_with_proofs(
    chain: &L1Chain,
    round: u64,
    decision_at: Option<&Digest>,
) -> Option<(VsmSnapshot, AttributeProofs)> {
    let state = chain.state_at(round)?;
    let snap = state.snapshot(decision_at);
    let trie = state.trie();
    let proofs = snap
        .claims()
        .iter()
        .map(|(k, _)| trie.prove(k).expect("claimed key is in the VSM trie"))
        .collect();
    Some((
        snap,
        AttributeProofs {
            header_round: round,
            proofs,
        },
    ))
}
