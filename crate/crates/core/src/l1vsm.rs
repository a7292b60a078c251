//! Simulated L1 chains hosting the validator contract (VSM) that accepts
//! rollup state digests, with the leader-based two-phase commit between
//! the two VSMs.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bridge::{AttributeProofs, BridgeError, BridgeView};
use crate::commitment::{hash_tuple, Digest, MembershipProof, StateTrie};
use crate::gsc::Attribute;
use crate::model::RollupId;
use crate::rollup::{Store, WriteSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VsmStatus {
    Free,
    Paired,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Commit,
    Abort,
}

impl Decision {
    fn byte(self) -> u8 {
        match self {
            Decision::Commit => 1,
            Decision::Abort => 2,
        }
    }
}

/// Keys of the VSM's own state, as committed in the L1 header.
pub mod keys {
    pub const STATUS: &[u8] = b"status";
    pub const INDEX: &[u8] = b"index";
    pub const DIGEST: &[u8] = b"digest";
    pub const TEMP_DIGEST: &[u8] = b"temp_digest";
    pub const TRIG_ROOT: &[u8] = b"trig_root'";
    pub const ACT_ROOT: &[u8] = b"act_root'";
    pub const SESSION_NONCE: &[u8] = b"session_nonce'";
    pub const ENTRY_NONCE: &[u8] = b"entry_nonce'";

    pub fn decision(index: &crate::commitment::Digest) -> Vec<u8> {
        let mut k = b"decision/".to_vec();
        k.extend_from_slice(index.as_bytes());
        k
    }
}

fn opt_digest_bytes(d: &Option<Digest>) -> Vec<u8> {
    d.map(|d| d.as_bytes().to_vec()).unwrap_or_default()
}

/// Attributes of a VSM as claimed by evidence. Every field is checked
/// against a bridge-relayed header before use.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VsmSnapshot {
    pub id: RollupId,
    pub status: VsmStatus,
    pub index: Option<Digest>,
    pub digest: Digest,
    pub temp_digest: Option<Digest>,
    pub trig_root: Digest,
    pub act_root: Digest,
    pub session_nonce: u64,
    pub entry_nonce: u64,
    /// A decision entry, when the evidence relies on one.
    pub decision: Option<(Digest, Decision)>,
}

impl VsmSnapshot {
    /// `(key, value)` pairs this snapshot asserts about the VSM state.
    pub fn claims(&self) -> Vec<(Vec<u8>, Vec<u8>)> {
        let mut out = vec![
            (keys::STATUS.to_vec(), vec![status_byte(self.status)]),
            (keys::INDEX.to_vec(), opt_digest_bytes(&self.index)),
            (keys::DIGEST.to_vec(), self.digest.as_bytes().to_vec()),
            (keys::TEMP_DIGEST.to_vec(), opt_digest_bytes(&self.temp_digest)),
            (keys::TRIG_ROOT.to_vec(), self.trig_root.as_bytes().to_vec()),
            (keys::ACT_ROOT.to_vec(), self.act_root.as_bytes().to_vec()),
            (keys::SESSION_NONCE.to_vec(), self.session_nonce.to_be_bytes().to_vec()),
            (keys::ENTRY_NONCE.to_vec(), self.entry_nonce.to_be_bytes().to_vec()),
        ];
        if let Some((idx, d)) = &self.decision {
            out.push((keys::decision(idx), vec![d.byte()]));
        }
        out
    }
}

fn status_byte(s: VsmStatus) -> u8 {
    match s {
        VsmStatus::Free => 0,
        VsmStatus::Paired => 1,
    }
}

/// Old and new GSC roots plus the new session and entry nonces, each with a
/// proof against the current (old roots) or proposed (everything else)
/// rollup digest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocEvd {
    pub trig_root: Digest,
    pub act_root: Digest,
    pub new_trig_root: Digest,
    pub new_act_root: Digest,
    pub new_session_nonce: u64,
    pub new_entry_nonce: u64,
    pub proofs: LocProofs,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocProofs {
    pub trig_root: MembershipProof,
    pub act_root: MembershipProof,
    pub new_trig_root: MembershipProof,
    pub new_act_root: MembershipProof,
    pub new_session_nonce: MembershipProof,
    pub new_entry_nonce: MembershipProof,
}

impl LocProofs {
    pub const COUNT: usize = 6;
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PcEvd {
    pub other: VsmSnapshot,
    pub proofs: AttributeProofs,
    /// The other rollup's proposed digest.
    pub other_new_digest: Digest,
}

/// Evidence for commit and abort: a proven snapshot of the other VSM.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionEvd {
    pub other: VsmSnapshot,
    pub proofs: AttributeProofs,
}

pub type CEvd = DecisionEvd;
pub type AbEvd = DecisionEvd;

/// Stand-in for a validity proof: the batch's pre-state and write-sets,
/// checked by replay.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidityProof {
    pub pre_state: Store,
    pub writes: Vec<WriteSet>,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum VsmError {
    #[error("status is {0:?}")]
    WrongStatus(VsmStatus),
    #[error("validity proof: {0}")]
    Validity(String),
    #[error("local evidence: {0}")]
    LocalEvidence(String),
    #[error("bridge: {0}")]
    Bridge(#[from] BridgeError),
    #[error("pre-commit evidence missing")]
    MissingEvidence,
    #[error("evidence about {0}, expected the paired VSM")]
    WrongCounterparty(RollupId),
    #[error("{0}")]
    Check(String),
    #[error("decision for this index already recorded")]
    DecisionExists,
    #[error("chain {0} already executed a call this round")]
    RoundBusy(RollupId),
}

fn check(cond: bool, reason: &str) -> Result<(), VsmError> {
    if cond {
        Ok(())
    } else {
        Err(VsmError::Check(reason.to_owned()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateOutcome {
    AcceptedLocal,
    PreCommitted,
}

/// Hash of the four sorted digests naming one 2PC instance.
pub fn get_index(d1: &Digest, d1_new: &Digest, d2: &Digest, d2_new: &Digest) -> Digest {
    let mut ds = [*d1, *d1_new, *d2, *d2_new];
    ds.sort();
    hash_tuple(&ds.map(|d| d.0))
}

/// Smaller id when the low bit of the index's first byte is 0, else larger.
pub fn get_leader(index: &Digest, a: RollupId, b: RollupId) -> RollupId {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    if index.0[0] & 1 == 0 {
        lo
    } else {
        hi
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VsmState {
    pub id: RollupId,
    pub other: RollupId,
    pub digest: Digest,
    pub temp_digest: Option<Digest>,
    pub status: VsmStatus,
    pub index: Option<Digest>,
    pub trig_root: Digest,
    pub act_root: Digest,
    pub session_nonce: u64,
    pub entry_nonce: u64,
    pub decisions: BTreeMap<Digest, Decision>,
}

impl VsmState {
    pub fn new(id: RollupId, genesis: Digest) -> Self {
        VsmState {
            id,
            other: id.other(),
            digest: genesis,
            temp_digest: None,
            status: VsmStatus::Free,
            index: None,
            trig_root: Digest::default(),
            act_root: Digest::default(),
            session_nonce: 0,
            entry_nonce: 0,
            decisions: BTreeMap::new(),
        }
    }

    pub fn trie(&self) -> StateTrie {
        let mut t = StateTrie::new();
        let snap = self.snapshot(None);
        for (k, v) in snap.claims() {
            t.set(k, v);
        }
        for (idx, d) in &self.decisions {
            t.set(keys::decision(idx), vec![d.byte()]);
        }
        t
    }

    /// Snapshot of this state, optionally claiming the decision at `index`.
    pub fn snapshot(&self, decision_at: Option<&Digest>) -> VsmSnapshot {
        VsmSnapshot {
            id: self.id,
            status: self.status,
            index: self.index,
            digest: self.digest,
            temp_digest: self.temp_digest,
            trig_root: self.trig_root,
            act_root: self.act_root,
            session_nonce: self.session_nonce,
            entry_nonce: self.entry_nonce,
            decision: decision_at.and_then(|i| self.decisions.get(i).map(|d| (*i, *d))),
        }
    }

    pub fn leader(&self) -> Option<RollupId> {
        self.index.map(|i| get_leader(&i, self.id, self.other))
    }

    /// Validity proof check by replay from the current digest.
    pub fn ver_val_proof(&self, new_digest: &Digest, proof: &ValidityProof) -> Result<(), VsmError> {
        let pre = StateTrie::from_map(&proof.pre_state).root();
        if pre != self.digest {
            return Err(VsmError::Validity("pre-state does not match current digest".into()));
        }
        let mut state = proof.pre_state.clone();
        for ws in &proof.writes {
            for w in ws {
                match &w.value {
                    Some(v) => state.insert(w.key.clone(), v.clone()),
                    None => state.remove(&w.key),
                };
            }
        }
        if StateTrie::from_map(&state).root() != *new_digest {
            return Err(VsmError::Validity("replay does not reach the proposed digest".into()));
        }
        Ok(())
    }

    /// Verifies the local evidence, stores the new attributes, and reports
    /// whether both tree roots are unchanged.
    pub fn is_local(&mut self, new_digest: &Digest, loc: &LocEvd) -> Result<bool, VsmError> {
        let p = &loc.proofs;
        let expect = |proof: &MembershipProof, attr: Attribute, value: Vec<u8>, root: &Digest, what: &str| {
            if proof.key != attr.key() || proof.value != value || !proof.verify(root) {
                Err(VsmError::LocalEvidence(format!("{what} proof does not verify")))
            } else {
                Ok(())
            }
        };
        expect(&p.trig_root, Attribute::TrigRoot, loc.trig_root.as_bytes().to_vec(), &self.digest, "trig_root")?;
        expect(&p.act_root, Attribute::ActRoot, loc.act_root.as_bytes().to_vec(), &self.digest, "act_root")?;
        expect(&p.new_trig_root, Attribute::TrigRoot, loc.new_trig_root.as_bytes().to_vec(), new_digest, "trig_root'")?;
        expect(&p.new_act_root, Attribute::ActRoot, loc.new_act_root.as_bytes().to_vec(), new_digest, "act_root'")?;
        expect(
            &p.new_session_nonce,
            Attribute::SessionNonce,
            loc.new_session_nonce.to_be_bytes().to_vec(),
            new_digest,
            "session_nonce'",
        )?;
        expect(
            &p.new_entry_nonce,
            Attribute::EntryNonce,
            loc.new_entry_nonce.to_be_bytes().to_vec(),
            new_digest,
            "entry_nonce'",
        )?;
        self.trig_root = loc.new_trig_root;
        self.act_root = loc.new_act_root;
        self.session_nonce = loc.new_session_nonce;
        self.entry_nonce = loc.new_entry_nonce;
        Ok(loc.trig_root == loc.new_trig_root && loc.act_root == loc.new_act_root)
    }

    fn verify_other(&self, bridge: &BridgeView<'_>, other: &VsmSnapshot, proofs: &AttributeProofs) -> Result<(), VsmError> {
        if other.id != self.other {
            return Err(VsmError::WrongCounterparty(other.id));
        }
        bridge.ver_attributes(other, proofs)?;
        Ok(())
    }

    pub fn ver_precom_evd(&mut self, bridge: &BridgeView<'_>, new_digest: &Digest, pc: &PcEvd) -> Result<(), VsmError> {
        self.verify_other(bridge, &pc.other, &pc.proofs)?;
        let index = get_index(&self.digest, new_digest, &pc.other.digest, &pc.other_new_digest);
        self.index = Some(index);
        if get_leader(&index, self.id, self.other) == self.id {
            check(pc.other.status == VsmStatus::Free, "leader requires the other VSM to be free")
        } else {
            check(pc.other.status == VsmStatus::Paired, "follower requires the leader to be paired")?;
            check(pc.other.index == Some(index), "leader is paired under a different index")
        }
    }

    /// Roots cross-match and the entry nonces of both sides add up to the
    /// shared session nonce.
    pub fn committable(&self, other: &VsmSnapshot) -> bool {
        self.trig_root == other.act_root
            && self.act_root == other.trig_root
            && self.entry_nonce.checked_add(other.entry_nonce) == Some(self.session_nonce)
            && other.session_nonce == self.session_nonce
    }

    fn record(&mut self, index: Digest, d: Decision) -> Result<(), VsmError> {
        if self.decisions.contains_key(&index) {
            return Err(VsmError::DecisionExists);
        }
        self.decisions.insert(index, d);
        Ok(())
    }

    pub fn ver_com_evd(&mut self, bridge: &BridgeView<'_>, c: &CEvd) -> Result<(), VsmError> {
        self.verify_other(bridge, &c.other, &c.proofs)?;
        let index = self.index.ok_or_else(|| VsmError::Check("no active index".into()))?;
        if get_leader(&index, self.id, self.other) == self.id {
            check(c.other.status == VsmStatus::Paired, "other VSM is not paired")?;
            check(c.other.index == Some(index), "other VSM is paired under a different index")?;
            check(self.trig_root == c.other.act_root, "trigger root does not match the other action root")?;
            check(self.act_root == c.other.trig_root, "action root does not match the other trigger root")?;
            check(
                self.entry_nonce.checked_add(c.other.entry_nonce) == Some(self.session_nonce),
                "entry nonces do not add up to the session nonce",
            )?;
            check(c.other.session_nonce == self.session_nonce, "session nonces differ")?;
            self.record(index, Decision::Commit)
        } else {
            check(
                c.other.decision == Some((index, Decision::Commit)),
                "leader has not recorded a commit",
            )
        }
    }

    pub fn ver_ab_evd(&mut self, bridge: &BridgeView<'_>, ab: &AbEvd) -> Result<(), VsmError> {
        self.verify_other(bridge, &ab.other, &ab.proofs)?;
        let index = self.index.ok_or_else(|| VsmError::Check("no active index".into()))?;
        if get_leader(&index, self.id, self.other) == self.id {
            if ab.other.status == VsmStatus::Paired && ab.other.index == Some(index) {
                check(!self.committable(&ab.other), "instance is committable")?;
            }
            self.record(index, Decision::Abort)
        } else {
            check(
                ab.other.decision == Some((index, Decision::Abort)),
                "leader has not recorded an abort",
            )
        }
    }

    pub fn update_digest(
        &mut self,
        bridge: &BridgeView<'_>,
        new_digest: Digest,
        v_proof: &ValidityProof,
        loc: &LocEvd,
        pc: Option<&PcEvd>,
    ) -> Result<UpdateOutcome, VsmError> {
        self.transact(|s| {
            if s.status != VsmStatus::Free {
                return Err(VsmError::WrongStatus(s.status));
            }
            s.ver_val_proof(&new_digest, v_proof)?;
            if s.is_local(&new_digest, loc)? {
                s.digest = new_digest;
                return Ok(UpdateOutcome::AcceptedLocal);
            }
            let pc = pc.ok_or(VsmError::MissingEvidence)?;
            s.ver_precom_evd(bridge, &new_digest, pc)?;
            s.temp_digest = Some(new_digest);
            s.status = VsmStatus::Paired;
            Ok(UpdateOutcome::PreCommitted)
        })
    }

    pub fn commit(&mut self, bridge: &BridgeView<'_>, c: &CEvd) -> Result<(), VsmError> {
        self.transact(|s| {
            if s.status != VsmStatus::Paired {
                return Err(VsmError::WrongStatus(s.status));
            }
            s.ver_com_evd(bridge, c)?;
            s.digest = s.temp_digest.take().expect("paired VSM holds a temp digest");
            s.status = VsmStatus::Free;
            Ok(())
        })
    }

    pub fn abort(&mut self, bridge: &BridgeView<'_>, ab: &AbEvd) -> Result<(), VsmError> {
        self.transact(|s| {
            if s.status != VsmStatus::Paired {
                return Err(VsmError::WrongStatus(s.status));
            }
            s.ver_ab_evd(bridge, ab)?;
            s.temp_digest = None;
            s.status = VsmStatus::Free;
            Ok(())
        })
    }

    /// Applies `f` to a copy and keeps it only on success.
    fn transact<T>(&mut self, f: impl FnOnce(&mut VsmState) -> Result<T, VsmError>) -> Result<T, VsmError> {
        let mut next = self.clone();
        let out = f(&mut next)?;
        debug_assert!(self.decisions.iter().all(|(k, v)| next.decisions.get(k) == Some(v)));
        *self = next;
        Ok(out)
    }
}

/// One L1 chain: the hosted VSM and its finalized headers, one per round.
#[derive(Clone, Debug)]
pub struct L1Chain {
    pub vsm: VsmState,
    /// `history[r]` is the VSM state at the end of round `r`.
    history: Vec<VsmState>,
    headers: Vec<Digest>,
}

impl L1Chain {
    fn new(vsm: VsmState) -> Self {
        let header = vsm.trie().root();
        L1Chain {
            history: vec![vsm.clone()],
            headers: vec![header],
            vsm,
        }
    }

    pub fn headers(&self) -> &[Digest] {
        &self.headers
    }

    pub fn state_at(&self, round: u64) -> Option<&VsmState> {
        self.history.get(round as usize)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VsmOp {
    UpdateDigest,
    Commit,
    Abort,
}

impl fmt::Display for VsmOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VsmOp::UpdateDigest => "update_digest",
            VsmOp::Commit => "commit",
            VsmOp::Abort => "abort",
        })
    }
}

/// The two L1 chains advancing in lockstep. Round 0 is genesis; calls made
/// during round `r` are finalized in header `r` when the round ends.
#[derive(Clone, Debug)]
pub struct L1Network {
    chains: [L1Chain; 2],
    round: u64,
    finality_delay: u64,
    busy: [bool; 2],
}

impl L1Network {
    pub fn new(genesis: [Digest; 2], finality_delay: u64) -> Self {
        L1Network {
            chains: [
                L1Chain::new(VsmState::new(RollupId::R1, genesis[0])),
                L1Chain::new(VsmState::new(RollupId::R2, genesis[1])),
            ],
            round: 1,
            finality_delay,
            busy: [false; 2],
        }
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn finality_delay(&self) -> u64 {
        self.finality_delay
    }

    pub fn chain(&self, id: RollupId) -> &L1Chain {
        &self.chains[id.index()]
    }

    pub fn vsm(&self, id: RollupId) -> &VsmState {
        &self.chains[id.index()].vsm
    }

    /// What chain `dest` can see of the other chain.
    pub fn bridge_for(&self, dest: RollupId) -> BridgeView<'_> {
        BridgeView::new(dest.other(), self.chains[dest.other().index()].headers(), self.round, self.finality_delay)
    }

    /// Newest header round of `source` visible to the other chain now.
    pub fn latest_final_round(&self) -> Option<u64> {
        self.round.checked_sub(self.finality_delay)
    }

    fn run<T>(
        &mut self,
        id: RollupId,
        f: impl FnOnce(&mut VsmState, &BridgeView<'_>) -> Result<T, VsmError>,
    ) -> Result<T, VsmError> {
        if self.busy[id.index()] {
            return Err(VsmError::RoundBusy(id));
        }
        self.busy[id.index()] = true;
        let (a, b) = self.chains.split_at_mut(1);
        let (mine, theirs) = match id {
            RollupId::R1 => (&mut a[0], &b[0]),
            RollupId::R2 => (&mut b[0], &a[0]),
        };
        let view = BridgeView::new(id.other(), theirs.headers(), self.round, self.finality_delay);
        f(&mut mine.vsm, &view)
    }

    pub fn update_digest(
        &mut self,
        id: RollupId,
        new_digest: Digest,
        v_proof: &ValidityProof,
        loc: &LocEvd,
        pc: Option<&PcEvd>,
    ) -> Result<UpdateOutcome, VsmError> {
        self.run(id, |v, b| v.update_digest(b, new_digest, v_proof, loc, pc))
    }

    pub fn commit(&mut self, id: RollupId, c: &CEvd) -> Result<(), VsmError> {
        self.run(id, |v, b| v.commit(b, c))
    }

    pub fn abort(&mut self, id: RollupId, ab: &AbEvd) -> Result<(), VsmError> {
        self.run(id, |v, b| v.abort(b, ab))
    }

    /// Finalizes the current round's headers and starts the next round.
    pub fn end_round(&mut self) -> [Digest; 2] {
        for c in self.chains.iter_mut() {
            let h = c.vsm.trie().root();
            c.headers.push(h);
            c.history.push(c.vsm.clone());
        }
        self.busy = [false; 2];
        self.round += 1;
        [self.chains[0].headers[self.round as usize - 1], self.chains[1].headers[self.round as usize - 1]]
    }
}
