//! The shared executor: recursive off-chain execution of CRTs across both
//! rollups, batch assembly, adversarial dispatch orders, and the client side
//! of the L1 two-phase commit.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::apps;
use crate::bridge::snapshot_with_proofs;
use crate::commitment::{Digest, StateTrie};
use crate::gsc::{Attribute, GscState, GscVariant, LeafRecord, TriggerEvent};
use crate::l1vsm::{
    get_index, get_leader, DecisionEvd, L1Network, LocEvd, LocProofs, PcEvd, UpdateOutcome, ValidityProof,
    VsmError, VsmOp, VsmStatus,
};
use crate::model::{
    compile_chain_crt, compile_chain_crt_with, compile_dag_crt, Address, ChainCrt, Crt, DagAction, DagCrt, GscCall,
    RollupId, TriggerRoute, Tx,
};
use crate::rollup::{Checkpoint, Rollup, TxStatus, WriteSet};
use crate::trace::{Trace, TraceEvent};

/// Bound on nested trigger/action hops for one CRT.
pub const MAX_XEVM_DEPTH: usize = 64;

/// Both rollups as seen by the executor.
#[derive(Clone, Debug)]
pub struct World {
    rollups: [Rollup; 2],
}

impl World {
    pub fn new(variant: GscVariant) -> Self {
        World {
            rollups: [Rollup::new(RollupId::R1, variant), Rollup::new(RollupId::R2, variant)],
        }
    }

    pub fn from_rollups(rollups: [Rollup; 2]) -> Self {
        assert_eq!(rollups[0].id(), RollupId::R1);
        assert_eq!(rollups[1].id(), RollupId::R2);
        World { rollups }
    }

    pub fn variant(&self) -> GscVariant {
        self.rollups[0].variant()
    }

    pub fn rollup(&self, id: RollupId) -> &Rollup {
        &self.rollups[id.index()]
    }

    pub fn rollup_mut(&mut self, id: RollupId) -> &mut Rollup {
        &mut self.rollups[id.index()]
    }

    pub fn rollups_mut(&mut self) -> &mut [Rollup; 2] {
        &mut self.rollups
    }

    pub fn digests(&self) -> [Digest; 2] {
        [self.rollups[0].compute_digest(), self.rollups[1].compute_digest()]
    }

    /// Rollup hosting `addr`: the deployment that has it, else the address
    /// suffix.
    pub fn locate(&self, addr: &Address) -> Option<RollupId> {
        let hosts: Vec<RollupId> = RollupId::ALL
            .into_iter()
            .filter(|r| self.rollup(*r).has_contract(addr))
            .collect();
        match hosts.as_slice() {
            [one] => Some(*one),
            [] => apps::rollup_of(addr),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "honest")]
    Honest,
    /// Run the third piece before the source action.
    #[serde(rename = "fig2_reorder")]
    Fig2Reorder,
    #[serde(rename = "full_reverse")]
    FullReverse,
    /// Skip the dispatch of action `i` (0-based).
    #[serde(rename = "drop_action")]
    DropAction(usize),
    /// Source action calls `trigger` directly instead of opening a session.
    #[serde(rename = "nonce_forgery")]
    NonceForgery,
    /// Split one DAG action's sub-action list over two action calls.
    #[serde(rename = "split_action_dag")]
    SplitActionDag,
    /// Follower pre-commit pairs the leader's old digest instead of its new one.
    #[serde(rename = "cross_pair_2pc")]
    CrossPair2PC,
}

impl Strategy {
    /// Every strategy kind, with `DropAction` at index `drop`.
    pub fn all(drop: usize) -> [Strategy; 7] {
        [
            Strategy::Honest,
            Strategy::Fig2Reorder,
            Strategy::FullReverse,
            Strategy::DropAction(drop),
            Strategy::NonceForgery,
            Strategy::SplitActionDag,
            Strategy::CrossPair2PC,
        ]
    }

    fn is_off_chain(&self) -> bool {
        !matches!(self, Strategy::Honest | Strategy::CrossPair2PC)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Honest => f.write_str("honest"),
            Strategy::Fig2Reorder => f.write_str("fig2_reorder"),
            Strategy::FullReverse => f.write_str("full_reverse"),
            Strategy::DropAction(i) => write!(f, "drop_action({i})"),
            Strategy::NonceForgery => f.write_str("nonce_forgery"),
            Strategy::SplitActionDag => f.write_str("split_action_dag"),
            Strategy::CrossPair2PC => f.write_str("cross_pair_2pc"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error("configuration: {0}")]
    Config(String),
}

fn config(msg: impl Into<String>) -> ExecError {
    ExecError::Config(msg.into())
}

/// One unit of user work in a batch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorkItem {
    Crt { crt: Crt },
    Local { tx: Tx },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchEntry {
    pub position: usize,
    pub tx: Tx,
    pub status: TxStatus,
    pub events: Vec<TriggerEvent>,
    pub inserts: Vec<LeafRecord>,
    pub writes: WriteSet,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ItemRun {
    pub item: usize,
    pub work: WorkItem,
    pub ok: bool,
    pub adversarial: bool,
}

/// What one batch did to both rollups, before 2PC.
#[derive(Clone, Debug)]
pub struct PendingBatch {
    pub id: u64,
    pub strategy: Strategy,
    pub pre: [Checkpoint; 2],
    pub pre_digests: [Digest; 2],
    pub post_digests: [Digest; 2],
    pub entries: [Vec<BatchEntry>; 2],
    pub items: Vec<ItemRun>,
    pub cross_pair: bool,
    /// Whether an off-chain strategy found a CRT to act on.
    pub strategy_applied: bool,
}

impl PendingBatch {
    pub fn entries(&self, r: RollupId) -> &[BatchEntry] {
        &self.entries[r.index()]
    }

    pub fn validity_proof(&self, r: RollupId) -> ValidityProof {
        ValidityProof {
            pre_state: self.pre[r.index()].store().clone(),
            writes: self.entries[r.index()].iter().map(|e| e.writes.clone()).collect(),
        }
    }
}

/// A transaction to replay as-is, or an action call whose session id is
/// chosen from the target's state at dispatch time.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Planned {
    pub tx: Tx,
    pub adaptive_sid: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VsmResult {
    AcceptedLocal,
    Committed,
    Aborted,
    Rejected,
    Stuck,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointOutcome {
    Committed,
    LocalAccepted,
    /// No non-local digest was accepted.
    Aborted,
    Stuck,
    Inconsistent,
}

impl JointOutcome {
    pub fn name(self) -> &'static str {
        match self {
            JointOutcome::Committed => "committed",
            JointOutcome::LocalAccepted => "local_accepted",
            JointOutcome::Aborted => "aborted",
            JointOutcome::Stuck => "stuck",
            JointOutcome::Inconsistent => "inconsistent",
        }
    }
}

impl VsmResult {
    pub fn name(self) -> &'static str {
        match self {
            VsmResult::AcceptedLocal => "accepted_local",
            VsmResult::Committed => "committed",
            VsmResult::Aborted => "aborted",
            VsmResult::Rejected => "rejected",
            VsmResult::Stuck => "stuck",
        }
    }

    pub fn accepted(self) -> bool {
        matches!(self, VsmResult::AcceptedLocal | VsmResult::Committed)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwoPcReport {
    pub batch: u64,
    pub outcome: JointOutcome,
    pub per_vsm: [VsmResult; 2],
    pub leader: Option<RollupId>,
    pub rounds: u64,
    /// Rounds from the leader's pre-commit (inclusive) to the end.
    pub rounds_after_precommit: u64,
}

fn joint(per: [VsmResult; 2]) -> JointOutcome {
    use VsmResult::*;
    match per {
        [Committed, Committed] => JointOutcome::Committed,
        [AcceptedLocal, AcceptedLocal] => JointOutcome::LocalAccepted,
        [Stuck, _] | [_, Stuck] => JointOutcome::Stuck,
        [Committed, _] | [_, Committed] => JointOutcome::Inconsistent,
        _ => JointOutcome::Aborted,
    }
}

/// Chain CRT in DAG form: each action has one sub-action.
pub fn chain_as_dag(c: &ChainCrt) -> DagCrt {
    DagCrt {
        user: c.user.clone(),
        actions: c
            .actions
            .iter()
            .map(|a| DagAction {
                descs: vec![a.desc.clone()],
                descs_next: a.desc_next.iter().cloned().collect(),
            })
            .collect(),
    }
}

pub struct Executor {
    world: World,
    batch: [Vec<BatchEntry>; 2],
    tx_log: Vec<Tx>,
    trace: Trace,
    next_batch: u64,
}

impl Executor {
    pub fn new(world: World) -> Self {
        Executor {
            world,
            batch: [Vec::new(), Vec::new()],
            tx_log: Vec::new(),
            trace: Trace::new(),
            next_batch: 0,
        }
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn world_mut(&mut self) -> &mut World {
        &mut self.world
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn trace_mut(&mut self) -> &mut Trace {
        &mut self.trace
    }

    pub fn into_trace(self) -> Trace {
        self.trace
    }

    /// Transactions executed so far, in global order, including failed ones.
    pub fn tx_log(&self) -> &[Tx] {
        &self.tx_log
    }

    pub fn batch(&self, r: RollupId) -> &[BatchEntry] {
        &self.batch[r.index()]
    }

    /// Source transaction of `crt` for this world's GSC flavor.
    pub fn compile(&self, crt: &Crt) -> Result<Tx, ExecError> {
        let variant = self.world.variant();
        let tx = match (crt, variant) {
            (Crt::Chain(c), GscVariant::Svs | GscVariant::Chain) => compile_chain_crt(c),
            (Crt::Chain(c), GscVariant::Dag) => compile_dag_crt(&chain_as_dag(c)),
            (Crt::Dag(c), GscVariant::Dag) => compile_dag_crt(c),
            (Crt::Dag(_), v) => return Err(config(format!("DAG CRT needs the dag GSC, world runs {v}"))),
        };
        tx.map_err(|e| config(e.to_string()))
    }

    /// Source transaction that skips session opening.
    pub fn compile_forged(&self, crt: &Crt) -> Result<Tx, ExecError> {
        let honest = self.compile(crt)?;
        match self.world.variant() {
            GscVariant::Svs => Err(config("nonce forgery needs a session-based GSC")),
            GscVariant::Chain => match crt {
                Crt::Chain(c) => compile_chain_crt_with(c, TriggerRoute::Direct).map_err(|e| config(e.to_string())),
                Crt::Dag(_) => unreachable!("compile rejects DAG CRTs on the chain GSC"),
            },
            GscVariant::Dag => match honest.gsc_call() {
                Some(GscCall::StartSession { addr, calldata }) => {
                    Ok(Tx::new(honest.rollup, honest.from.clone(), addr, calldata))
                }
                _ => Err(config("DAG source is not a startSession call")),
            },
        }
    }

    /// Executes one transaction and appends it to the batch.
    pub fn execute_recorded(&mut self, tx: &Tx) -> BatchEntry {
        let r = tx.rollup;
        let out = self.world.rollup_mut(r).execute_tx(tx);
        let entry = BatchEntry {
            position: self.batch[r.index()].len(),
            tx: tx.clone(),
            status: out.status,
            events: out.events,
            inserts: out.inserts,
            writes: out.writes,
        };
        let reason = match &entry.status {
            TxStatus::Success => None,
            TxStatus::Failure(why) => Some(why.clone()),
        };
        self.trace.push(TraceEvent::TxExecuted {
            rollup: r,
            position: entry.position,
            from: tx.from.clone(),
            to: tx.to.clone(),
            selector: tx.calldata.selector.clone(),
            ok: reason.is_none(),
            reason,
            triggers: entry.events.len(),
        });
        for ins in &entry.inserts {
            self.trace.push(TraceEvent::TreeInsert {
                rollup: r,
                tree: ins.tree,
                nonce: ins.nonce,
                sid: ins.sid,
                leaf: ins.leaf,
            });
        }
        self.tx_log.push(tx.clone());
        self.batch[r.index()].push(entry.clone());
        entry
    }

    /// Session id for an action call on `target`: open the next session
    /// for the first hop, continue the current one afterwards.
    fn sid_for(&self, target: RollupId, depth: usize) -> Option<u64> {
        let g = self.world.rollup(target).gsc();
        match g.variant {
            GscVariant::Svs => None,
            _ if depth == 0 => Some(g.session_nonce + 1),
            _ => Some(g.session_nonce),
        }
    }

    fn adaptive_sid(&self, target: RollupId) -> Option<u64> {
        let g = self.world.rollup(target).gsc();
        match g.variant {
            GscVariant::Svs => None,
            _ if g.session_active => Some(g.session_nonce),
            _ => Some(g.session_nonce + 1),
        }
    }

    fn assertion(&mut self, rollup: RollupId, reason: impl Into<String>) -> bool {
        self.trace.push(TraceEvent::Assertion {
            rollup,
            reason: reason.into(),
        });
        false
    }

    /// Runs `tx`, then the action call carrying its triggers on the other
    /// rollup, recursively. Returns whether every hop succeeded.
    pub fn xevm(&mut self, tx: &Tx) -> bool {
        let mut tx = tx.clone();
        for depth in 0..MAX_XEVM_DEPTH {
            let entry = self.execute_recorded(&tx);
            if !entry.status.is_success() {
                return false;
            }
            if entry.events.is_empty() {
                return true;
            }
            let src = tx.rollup;
            if self.world.variant() != GscVariant::Dag && entry.events.len() > 1 {
                return self.assertion(src, "more than one trigger in a chain-model transaction");
            }
            let mut target = None;
            for e in &entry.events {
                match self.world.locate(&e.addr) {
                    Some(t) if t != src && target.is_none_or(|x| x == t) => target = Some(t),
                    _ => return self.assertion(src, format!("trigger to {} does not target the other rollup", e.addr)),
                }
            }
            let target = target.expect("at least one event");
            let items = entry.events.iter().map(TriggerEvent::data).collect();
            let sid = self.sid_for(target, depth);
            tx = Tx::new(
                target,
                Address::executor(),
                Address::gsc(),
                GscCall::Action { items, sid }.to_calldata(),
            );
        }
        self.assertion(tx.rollup, "trigger chain too deep")
    }

    /// Runs a CRT from its source transaction; on failure both rollups and
    /// the batch are restored.
    pub fn entry_point(&mut self, tx: &Tx) -> bool {
        let cps = [self.world.rollups[0].checkpoint(), self.world.rollups[1].checkpoint()];
        let lens = [self.batch[0].len(), self.batch[1].len()];
        if self.xevm(tx) {
            return true;
        }
        for (i, cp) in cps.iter().enumerate() {
            self.world.rollups[i].restore(cp);
            self.batch[i].truncate(lens[i]);
        }
        false
    }

    /// Replays planned transactions without any rollback.
    pub fn replay(&mut self, plan: &[Planned]) -> Vec<bool> {
        plan.iter()
            .map(|p| {
                let mut tx = p.tx.clone();
                if p.adaptive_sid {
                    if let Some(GscCall::Action { items, .. }) = tx.gsc_call() {
                        let sid = self.adaptive_sid(tx.rollup);
                        tx.calldata = GscCall::Action { items, sid }.to_calldata();
                    }
                }
                self.execute_recorded(&tx).status.is_success()
            })
            .collect()
    }

    /// Transactions of an honest run of `crt` from the current state, one
    /// per action, computed on a scratch copy. `None` if the honest run
    /// fails.
    pub fn honest_pieces(&self, crt: &Crt) -> Result<Option<Vec<Tx>>, ExecError> {
        let tx = self.compile(crt)?;
        let mut scratch = Executor::new(self.world.clone());
        if scratch.entry_point(&tx) {
            Ok(Some(scratch.tx_log))
        } else {
            Ok(None)
        }
    }

    /// Dispatch plan for `strategy` on `crt`, or `None` if it does not apply
    /// to this CRT.
    pub fn adversarial_plan(&self, crt: &Crt, strategy: &Strategy) -> Result<Option<Vec<Planned>>, ExecError> {
        let Some(pieces) = self.honest_pieces(crt)? else {
            return Ok(None);
        };
        let fixed = |txs: Vec<Tx>| txs.into_iter().map(|tx| Planned { tx, adaptive_sid: false }).collect();
        let plan = match strategy {
            Strategy::Fig2Reorder if pieces.len() >= 3 => {
                let mut p = pieces;
                let third = p.remove(2);
                p.insert(0, third);
                fixed(p)
            }
            Strategy::FullReverse if pieces.len() >= 2 => {
                let mut p = pieces;
                p.reverse();
                fixed(p)
            }
            Strategy::DropAction(i) if *i < pieces.len() => {
                let mut p = pieces;
                p.remove(*i);
                fixed(p)
            }
            Strategy::SplitActionDag if self.world.variant() == GscVariant::Dag => {
                let at = pieces.iter().position(|tx| {
                    matches!(tx.gsc_call(), Some(GscCall::Action { ref items, .. }) if items.len() >= 2)
                });
                let Some(k) = at else { return Ok(None) };
                let mut plan: Vec<Planned> = fixed(pieces.clone());
                let Some(GscCall::Action { items, sid }) = pieces[k].gsc_call() else {
                    unreachable!()
                };
                let cut = items.len() / 2;
                let mk = |items: Vec<_>, sid| Tx::new(
                    pieces[k].rollup,
                    Address::executor(),
                    Address::gsc(),
                    GscCall::Action { items, sid }.to_calldata(),
                );
                plan[k] = Planned { tx: mk(items[..cut].to_vec(), sid), adaptive_sid: false };
                plan.insert(k + 1, Planned { tx: mk(items[cut..].to_vec(), sid), adaptive_sid: true });
                plan
            }
            _ => return Ok(None),
        };
        Ok(Some(plan))
    }

    /// As [`Executor::run_batch`], but a strategy that fits no CRT of the
    /// batch is a configuration error.
    pub fn apply_strategy(&mut self, strategy: &Strategy, items: &[WorkItem]) -> Result<PendingBatch, ExecError> {
        let p = self.run_batch(items, strategy)?;
        if !p.strategy_applied {
            return Err(config(format!("strategy {strategy} applies to no CRT of the batch")));
        }
        Ok(p)
    }

    /// Runs one batch of work items. An off-chain strategy is applied to the
    /// first CRT it fits; the rest run honestly.
    pub fn run_batch(&mut self, items: &[WorkItem], strategy: &Strategy) -> Result<PendingBatch, ExecError> {
        let id = self.next_batch;
        self.next_batch += 1;
        self.trace.push(TraceEvent::BatchStart {
            batch: id,
            strategy: strategy.to_string(),
        });
        let pre = [self.world.rollups[0].checkpoint(), self.world.rollups[1].checkpoint()];
        let pre_digests = [pre[0].digest(), pre[1].digest()];
        let mut applied = !strategy.is_off_chain();
        let mut runs = Vec::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            let (ok, adversarial) = match item {
                WorkItem::Local { tx } => (self.execute_recorded(tx).status.is_success(), false),
                WorkItem::Crt { crt } if !applied => match self.run_adversarial(id, i, crt, strategy)? {
                    Some(ok) => {
                        applied = true;
                        (ok, true)
                    }
                    None => (self.entry_point(&self.compile(crt)?), false),
                },
                WorkItem::Crt { crt } => (self.entry_point(&self.compile(crt)?), false),
            };
            self.trace.push(TraceEvent::ItemResult { batch: id, item: i, ok });
            runs.push(ItemRun {
                item: i,
                work: item.clone(),
                ok,
                adversarial,
            });
        }
        let entries = [std::mem::take(&mut self.batch[0]), std::mem::take(&mut self.batch[1])];
        let post_digests = self.world.digests();
        for r in RollupId::ALL {
            let i = r.index();
            self.trace.push(TraceEvent::BatchSealed {
                batch: id,
                rollup: r,
                txs: entries[i].len(),
                inserts: entries[i].iter().map(|e| e.inserts.len()).sum(),
                pre_digest: pre_digests[i],
                post_digest: post_digests[i],
                local: roots_unchanged(pre[i].gsc(), self.world.rollup(r).gsc()),
            });
        }
        Ok(PendingBatch {
            id,
            strategy: strategy.clone(),
            pre,
            pre_digests,
            post_digests,
            entries,
            items: runs,
            cross_pair: *strategy == Strategy::CrossPair2PC,
            strategy_applied: applied,
        })
    }

    fn run_adversarial(&mut self, batch: u64, item: usize, crt: &Crt, strategy: &Strategy) -> Result<Option<bool>, ExecError> {
        if *strategy == Strategy::NonceForgery {
            if self.world.variant() == GscVariant::Svs {
                return Ok(None);
            }
            let tx = self.compile_forged(crt)?;
            self.trace.push(TraceEvent::StrategyApplied {
                batch,
                item,
                detail: "source action triggers without opening a session".into(),
            });
            return Ok(Some(self.entry_point(&tx)));
        }
        let Some(plan) = self.adversarial_plan(crt, strategy)? else {
            return Ok(None);
        };
        self.trace.push(TraceEvent::StrategyApplied {
            batch,
            item,
            detail: format!("{strategy}: {} dispatches", plan.len()),
        });
        Ok(Some(self.replay(&plan).iter().all(|ok| *ok)))
    }

    /// Old and new GSC attributes of rollup `r` with their proofs.
    pub fn loc_evd(&self, p: &PendingBatch, r: RollupId) -> LocEvd {
        let pre = &p.pre[r.index()];
        let post = self.world.rollup(r);
        let pre_trie = StateTrie::from_map(pre.store());
        let post_trie = post.trie();
        let old = |a: Attribute| pre_trie.prove(&a.key()).expect("GSC attributes are mirrored");
        let new = |a: Attribute| post_trie.prove(&a.key()).expect("GSC attributes are mirrored");
        LocEvd {
            trig_root: pre.gsc().trig_tree.root(),
            act_root: pre.gsc().act_tree.root(),
            new_trig_root: post.gsc().trig_tree.root(),
            new_act_root: post.gsc().act_tree.root(),
            new_session_nonce: post.gsc().session_nonce,
            new_entry_nonce: post.gsc().entry_nonce,
            proofs: LocProofs {
                trig_root: old(Attribute::TrigRoot),
                act_root: old(Attribute::ActRoot),
                new_trig_root: new(Attribute::TrigRoot),
                new_act_root: new(Attribute::ActRoot),
                new_session_nonce: new(Attribute::SessionNonce),
                new_entry_nonce: new(Attribute::EntryNonce),
            },
        }
    }

    fn relay_snapshot(
        &mut self,
        net: &L1Network,
        dest: RollupId,
        decision_at: Option<Digest>,
    ) -> Option<(crate::l1vsm::VsmSnapshot, crate::bridge::AttributeProofs)> {
        let h = net.latest_final_round()?;
        let source = dest.other();
        let header = *net.chain(source).headers().get(h as usize)?;
        self.trace.push(TraceEvent::BridgeRelay {
            dest,
            source,
            header_round: h,
            header,
        });
        snapshot_with_proofs(net.chain(source), h, decision_at.as_ref())
    }

    /// One VSM call with freshly assembled evidence, traced. Does not end
    /// the round.
    fn vsm_call(
        &mut self,
        net: &mut L1Network,
        p: &PendingBatch,
        id: RollupId,
        op: VsmOp,
    ) -> Result<Option<UpdateOutcome>, VsmError> {
        self.trace.set_round(net.round());
        let (res, local_proofs, bridge_proofs) = match op {
            VsmOp::UpdateDigest => {
                let loc = self.loc_evd(p, id);
                let vp = p.validity_proof(id);
                let pc = self.relay_snapshot(net, id, None).map(|(other, proofs)| {
                    let other_new_digest = if p.cross_pair && Some(id) != self.leader_of(p) {
                        p.pre_digests[id.other().index()]
                    } else {
                        p.post_digests[id.other().index()]
                    };
                    PcEvd {
                        other,
                        proofs,
                        other_new_digest,
                    }
                });
                let bridge = pc.as_ref().map_or(0, |pc| pc.proofs.proofs.len());
                let res = net.update_digest(id, p.post_digests[id.index()], &vp, &loc, pc.as_ref());
                let used = if res == Ok(UpdateOutcome::PreCommitted) { bridge } else { 0 };
                (res.map(Some), LocProofs::COUNT, used)
            }
            VsmOp::Commit | VsmOp::Abort => {
                let index = net.vsm(id).index;
                let evd = self.relay_snapshot(net, id, index).map(|(other, proofs)| DecisionEvd { other, proofs });
                let res = match (&evd, op) {
                    (None, _) => Err(VsmError::MissingEvidence),
                    (Some(e), VsmOp::Commit) => net.commit(id, e),
                    (Some(e), _) => net.abort(id, e),
                };
                let n = evd.as_ref().map_or(0, |e| e.proofs.proofs.len());
                (res.map(|_| None), 0, n)
            }
        };
        self.trace.push(TraceEvent::VsmCall {
            batch: p.id,
            chain: id,
            op: op.to_string(),
            ok: res.is_ok(),
            result: match &res {
                Ok(Some(UpdateOutcome::AcceptedLocal)) => Some("accepted_local".into()),
                Ok(Some(UpdateOutcome::PreCommitted)) => Some("pre_committed".into()),
                Ok(None) => Some(op.to_string()),
                Err(_) => None,
            },
            error: res.as_ref().err().map(|e| e.to_string()),
            local_proofs: if res.is_ok() { local_proofs } else { 0 },
            bridge_proofs: if res.is_ok() { bridge_proofs } else { 0 },
        });
        res
    }

    fn end_round(&mut self, net: &mut L1Network, rounds: &mut u64) {
        let headers = net.end_round();
        self.trace.push(TraceEvent::RoundEnd { headers });
        *rounds += 1;
        self.trace.set_round(net.round());
    }

    /// One call per round, retried once in the next round.
    fn step(
        &mut self,
        net: &mut L1Network,
        p: &PendingBatch,
        id: RollupId,
        op: VsmOp,
        rounds: &mut u64,
    ) -> Result<Option<UpdateOutcome>, VsmError> {
        let first = self.vsm_call(net, p, id, op);
        self.end_round(net, rounds);
        if first.is_ok() {
            return first;
        }
        let retry = self.vsm_call(net, p, id, op);
        self.end_round(net, rounds);
        retry
    }

    fn leader_of(&self, p: &PendingBatch) -> Option<RollupId> {
        let index = get_index(&p.pre_digests[0], &p.post_digests[0], &p.pre_digests[1], &p.post_digests[1]);
        Some(get_leader(&index, RollupId::R1, RollupId::R2))
    }

    /// Drives both VSMs through digest update and, for a non-local batch,
    /// the leader-first commit or abort.
    pub fn drive_2pc(&mut self, net: &mut L1Network, p: &PendingBatch) -> TwoPcReport {
        let mut rounds = 0;
        let mut per = [VsmResult::Rejected; 2];
        let local = [
            roots_unchanged(p.pre[0].gsc(), self.world.rollups[0].gsc()),
            roots_unchanged(p.pre[1].gsc(), self.world.rollups[1].gsc()),
        ];
        let mut leader = None;
        let mut precommit_round = None;
        if local[0] && local[1] {
            for r in RollupId::ALL {
                if let Ok(Some(UpdateOutcome::AcceptedLocal)) = self.vsm_call(net, p, r, VsmOp::UpdateDigest) {
                    per[r.index()] = VsmResult::AcceptedLocal;
                }
            }
            self.end_round(net, &mut rounds);
        } else {
            let l = self.leader_of(p).expect("leader is defined");
            let f = l.other();
            leader = Some(l);
            for r in [l, f] {
                match self.step(net, p, r, VsmOp::UpdateDigest, &mut rounds) {
                    Ok(Some(UpdateOutcome::AcceptedLocal)) => per[r.index()] = VsmResult::AcceptedLocal,
                    Ok(Some(UpdateOutcome::PreCommitted)) => {
                        precommit_round.get_or_insert(rounds);
                    }
                    _ => {}
                }
            }
            // The leader decides; a follower left paired beside a leader that
            // never pre-committed decides alone and can only abort.
            if let Some(d) = [l, f].into_iter().find(|r| net.vsm(*r).status == VsmStatus::Paired) {
                let o = d.other();
                let other_paired =
                    net.vsm(o).status == VsmStatus::Paired && net.vsm(o).index == net.vsm(d).index;
                let committable = other_paired && net.vsm(d).committable(&net.vsm(o).snapshot(None));
                let mut decided = None;
                if committable && self.step(net, p, d, VsmOp::Commit, &mut rounds).is_ok() {
                    decided = Some(VsmOp::Commit);
                }
                if decided.is_none() && self.step(net, p, d, VsmOp::Abort, &mut rounds).is_ok() {
                    decided = Some(VsmOp::Abort);
                }
                let result_of = |op| match op {
                    VsmOp::Commit => VsmResult::Committed,
                    _ => VsmResult::Aborted,
                };
                if let Some(op) = decided {
                    per[d.index()] = result_of(op);
                    if net.vsm(o).status == VsmStatus::Paired && self.step(net, p, o, op, &mut rounds).is_ok() {
                        per[o.index()] = result_of(op);
                    }
                }
            }
        }
        for r in RollupId::ALL {
            if net.vsm(r).status == VsmStatus::Paired {
                per[r.index()] = VsmResult::Stuck;
            }
        }
        let outcome = joint(per);
        let rounds_after_precommit = precommit_round.map_or(0, |pr| rounds - pr + 1);
        self.trace.push(TraceEvent::TwoPcResult {
            batch: p.id,
            outcome: outcome.name().into(),
            r1: per[0].name().into(),
            r2: per[1].name().into(),
            rounds,
            rounds_after_precommit,
        });
        TwoPcReport {
            batch: p.id,
            outcome,
            per_vsm: per,
            leader,
            rounds,
            rounds_after_precommit,
        }
    }

    /// Restores rollups whose digest was not accepted. Returns whether each
    /// rollup's digest now equals its VSM's.
    pub fn settle(&mut self, net: &L1Network, p: &PendingBatch, report: &TwoPcReport) -> [bool; 2] {
        let mut agree = [false; 2];
        for r in RollupId::ALL {
            let accepted = report.per_vsm[r.index()].accepted();
            if !accepted {
                self.world.rollups[r.index()].restore(&p.pre[r.index()]);
            }
            let digest = self.world.rollup(r).compute_digest();
            agree[r.index()] = digest == net.vsm(r).digest;
            self.trace.push(TraceEvent::Settled {
                batch: p.id,
                rollup: r,
                accepted,
                digest,
            });
        }
        agree
    }
}

/// Both tree roots unchanged between two GSC states.
pub fn roots_unchanged(before: &GscState, after: &GscState) -> bool {
    before.trig_tree.root() == after.trig_tree.root() && before.act_tree.root() == after.act_tree.root()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apps::{addr, install_steps, step_chain_crt};

    fn exec(v: GscVariant) -> Executor {
        let mut w = World::new(v);
        install_steps(w.rollups_mut());
        Executor::new(w)
    }

    fn user() -> Address {
        Address::new("alice")
    }

    fn net_for(e: &Executor) -> L1Network {
        L1Network::new(e.world().digests(), 1)
    }

    #[test]
    fn local_tx_has_no_recursion() {
        let mut e = exec(GscVariant::Chain);
        let tx = Tx::new(
            RollupId::R1,
            user(),
            addr("step", RollupId::R1),
            crate::apps::step_exec(7, &[]),
        );
        assert!(e.xevm(&tx));
        assert_eq!(e.batch(RollupId::R1).len(), 1);
        assert!(e.batch(RollupId::R2).is_empty());
    }

    #[test]
    fn three_action_chain_batches() {
        let mut e = exec(GscVariant::Chain);
        let crt = Crt::Chain(step_chain_crt(&user(), RollupId::R1, 3, 100, false));
        let tx = e.compile(&crt).unwrap();
        assert!(e.entry_point(&tx));
        assert_eq!(e.batch(RollupId::R1).len(), 2);
        assert_eq!(e.batch(RollupId::R2).len(), 1);
        let b1 = e.batch(RollupId::R1);
        assert_eq!(b1[0].tx.to, addr("step", RollupId::R1));
        assert!(matches!(b1[1].tx.gsc_call(), Some(GscCall::Action { sid: Some(1), .. })));
    }

    #[test]
    fn failing_crt_restores_both() {
        let mut e = exec(GscVariant::Chain);
        let before = e.world().digests();
        let crt = Crt::Chain(step_chain_crt(&user(), RollupId::R1, 4, 0, true));
        let tx = e.compile(&crt).unwrap();
        assert!(!e.entry_point(&tx));
        assert_eq!(e.world().digests(), before);
        assert!(e.batch(RollupId::R1).is_empty() && e.batch(RollupId::R2).is_empty());
    }

    #[test]
    fn honest_commit_takes_four_rounds() {
        let mut e = exec(GscVariant::Chain);
        let mut net = net_for(&e);
        let crt = Crt::Chain(step_chain_crt(&user(), RollupId::R1, 3, 0, false));
        let p = e.run_batch(&[WorkItem::Crt { crt }], &Strategy::Honest).unwrap();
        let rep = e.drive_2pc(&mut net, &p);
        assert_eq!(rep.outcome, JointOutcome::Committed);
        assert_eq!(rep.rounds, 4);
        assert_eq!(e.settle(&net, &p, &rep), [true, true]);
    }

    #[test]
    fn local_batch_takes_one_round() {
        let mut e = exec(GscVariant::Chain);
        let mut net = net_for(&e);
        let tx = Tx::new(RollupId::R2, user(), addr("step", RollupId::R2), crate::apps::step_exec(1, &[]));
        let p = e.run_batch(&[WorkItem::Local { tx }], &Strategy::Honest).unwrap();
        let rep = e.drive_2pc(&mut net, &p);
        assert_eq!(rep.outcome, JointOutcome::LocalAccepted);
        assert_eq!(rep.rounds, 1);
        assert_eq!(net.vsm(RollupId::R2).digest, p.post_digests[1]);
    }

    #[test]
    fn dropped_action_aborts_and_restores() {
        let mut e = exec(GscVariant::Chain);
        let mut net = net_for(&e);
        let before = e.world().digests();
        let crt = Crt::Chain(step_chain_crt(&user(), RollupId::R1, 3, 0, false));
        let p = e.run_batch(&[WorkItem::Crt { crt }], &Strategy::DropAction(2)).unwrap();
        let rep = e.drive_2pc(&mut net, &p);
        assert_eq!(rep.outcome, JointOutcome::Aborted);
        assert_eq!(e.settle(&net, &p, &rep), [true, true]);
        assert_eq!(e.world().digests(), before);
    }

    #[test]
    fn cross_pair_is_rejected() {
        let mut e = exec(GscVariant::Chain);
        let mut net = net_for(&e);
        let crt = Crt::Chain(step_chain_crt(&user(), RollupId::R1, 2, 0, false));
        let p = e.run_batch(&[WorkItem::Crt { crt }], &Strategy::CrossPair2PC).unwrap();
        let rep = e.drive_2pc(&mut net, &p);
        assert_ne!(rep.outcome, JointOutcome::Committed);
        assert!(!matches!(rep.outcome, JointOutcome::Stuck | JointOutcome::Inconsistent));
        assert_eq!(e.settle(&net, &p, &rep), [true, true]);
    }

    #[test]
    fn inapplicable_strategy_is_config_error() {
        let mut e = exec(GscVariant::Chain);
        let crt = Crt::Chain(step_chain_crt(&user(), RollupId::R1, 2, 0, false));
        assert!(e.apply_strategy(&Strategy::Fig2Reorder, &[WorkItem::Crt { crt }]).is_err());
    }

    #[test]
    fn strategy_serde_names() {
        let s: Strategy = serde_json::from_str(r#"{"drop_action":2}"#).unwrap();
        assert_eq!(s, Strategy::DropAction(2));
        assert_eq!(serde_json::to_string(&Strategy::CrossPair2PC).unwrap(), r#""cross_pair_2pc""#);
    }
}
