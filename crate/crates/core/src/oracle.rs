//! Ground-truth predicates over executed batches: atomic execution of a CRT,
//! membership of actions in the GSC trees, and exhaustive characterization
//! of dispatch orders on small instances.
//!
//! Predicates here are evaluated from recorded transactions, write-sets and
//! leaf records only. Replay, leaf hashing and order matching are written
//! out again on purpose rather than borrowed from the rollup or GSC code.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::commitment::{hash_tuple, AppendTree, Digest, StateTrie};
use crate::executor::{BatchEntry, Executor, Planned, World};
use crate::gsc::{GscState, GscVariant, LeafRecord, TreeKind};
use crate::model::{ActionDesc, Address, Arg, Calldata, Crt, DagCrt, GscCall, RollupId, TriggerData, TriggerRoute, Tx};
use crate::rollup::{Store, TxStatus};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("instance too large for enumeration: {0}")]
    TooLarge(String),
    #[error("honest execution of the instance fails")]
    HonestFails,
    #[error("{0}")]
    Unsupported(String),
}

/// One rollup's side of an accepted digest transition.
#[derive(Clone, Copy, Debug)]
pub struct RollupView<'a> {
    pub pre: &'a Store,
    pub post: Digest,
    pub entries: &'a [BatchEntry],
}

/// Applies the write-sets of successful entries to `pre`.
pub fn replay(pre: &Store, entries: &[BatchEntry]) -> Store {
    let mut state = pre.clone();
    for e in entries.iter().filter(|e| e.status == TxStatus::Success) {
        for w in &e.writes {
            match &w.value {
                Some(v) => {
                    state.insert(w.key.clone(), v.clone());
                }
                None => {
                    state.remove(&w.key);
                }
            }
        }
    }
    state
}

pub fn replay_digest(pre: &Store, entries: &[BatchEntry]) -> Digest {
    StateTrie::from_map(&replay(pre, entries)).root()
}

/// Sub-action descriptions an executed transaction carried out, if it ran
/// user code: a direct call, a session opener, or an action call.
fn executed_descs(tx: &Tx) -> Option<Vec<(Address, Calldata)>> {
    if tx.to.0 != crate::model::GSC_ADDRESS {
        return Some(vec![(tx.to.clone(), tx.calldata.clone())]);
    }
    match GscCall::from_calldata(&tx.calldata).ok()? {
        GscCall::StartSession { addr, calldata } => Some(vec![(addr, calldata)]),
        GscCall::Action { items, .. } => Some(items.into_iter().map(|t| (t.addr, t.calldata)).collect()),
        GscCall::Trigger { .. } => None,
    }
}

fn desc_key(descs: &[&ActionDesc]) -> Vec<(Address, Calldata)> {
    descs.iter().map(|d| (d.addr.clone(), d.calldata.clone())).collect()
}

/// Positions of successful entries whose executed descriptions equal those
/// of action `i`.
fn positions_of(crt: &Crt, i: usize, entries: &[BatchEntry]) -> Vec<usize> {
    let want = desc_key(&crt.descs_of(i));
    entries
        .iter()
        .filter(|e| e.status == TxStatus::Success)
        .filter(|e| executed_descs(&e.tx).as_deref() == Some(want.as_slice()))
        .map(|e| e.position)
        .collect()
}

/// Action `i` of `crt` is in the batch and the batch replays from the pre
/// state to the post digest.
pub fn action_exec(crt: &Crt, i: usize, view: &RollupView<'_>) -> bool {
    !positions_of(crt, i, view.entries).is_empty() && replay_digest(view.pre, view.entries) == view.post
}

/// All actions absent, or all present with each rollup's actions in CRT
/// order.
pub fn atom_exec(crt: &Crt, views: [RollupView<'_>; 2]) -> bool {
    let n = crt.len();
    let Some(rollups) = (0..n).map(|i| crt.rollup_of(i)).collect::<Option<Vec<_>>>() else {
        return false;
    };
    let present: Vec<bool> = (0..n).map(|i| action_exec(crt, i, &views[rollups[i].index()])).collect();
    if present.iter().all(|p| !p) {
        return true;
    }
    if !present.iter().all(|p| *p) {
        return false;
    }
    // Greedy earliest match decides whether an order-respecting embedding
    // exists on each rollup.
    for r in RollupId::ALL {
        let mut after: Option<usize> = None;
        for i in (0..n).filter(|i| rollups[*i] == r) {
            let next = positions_of(crt, i, views[r.index()].entries)
                .into_iter()
                .find(|p| after.is_none_or(|a| *p > a));
            match next {
                Some(p) => after = Some(p),
                None => return false,
            }
        }
    }
    true
}

/// Leaf records of successful entries, split by tree, in insertion order.
pub fn leaf_records(entries: &[BatchEntry]) -> (Vec<LeafRecord>, Vec<LeafRecord>) {
    let mut trig = Vec::new();
    let mut act = Vec::new();
    for e in entries.iter().filter(|e| e.status == TxStatus::Success) {
        for l in &e.inserts {
            match l.tree {
                TreeKind::Trig => trig.push(l.clone()),
                TreeKind::Act => act.push(l.clone()),
            }
        }
    }
    (trig, act)
}

/// Leaf digest recomputed from a record's fields.
pub fn record_leaf(r: &LeafRecord) -> Digest {
    let cd = r.calldata.encode();
    let nonce = r.nonce.to_be_bytes();
    match r.sid {
        Some(s) => hash_tuple(&[r.sender.as_bytes(), r.addr.as_bytes(), &cd[..], &nonce[..], &s.to_be_bytes()[..]]),
        None => hash_tuple(&[r.sender.as_bytes(), r.addr.as_bytes(), &cd[..], &nonce[..]]),
    }
}

/// Root of a tree holding exactly `records`.
pub fn root_of_records(records: &[LeafRecord]) -> Digest {
    let leaves: Vec<Digest> = records.iter().map(record_leaf).collect();
    AppendTree::compute_root(&leaves)
}

/// `descs` occur in `records` as a contiguous run that is exactly the set of
/// leaves sharing one nonce.
pub fn contained_star(descs: &[&ActionDesc], records: &[LeafRecord]) -> bool {
    if descs.is_empty() {
        return true;
    }
    let want = desc_key(descs);
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        groups.entry(r.nonce).or_default().push(i);
    }
    groups.values().any(|idx| {
        let contiguous = idx.windows(2).all(|w| w[1] == w[0] + 1);
        let got: Vec<(Address, Calldata)> = idx
            .iter()
            .map(|&i| (records[i].addr.clone(), records[i].calldata.clone()))
            .collect();
        contiguous && got == want
    })
}

/// Chain model: `desc` has an action leaf and `desc_next` a trigger leaf.
pub fn chain_membership(crt: &Crt, i: usize, trig: &[LeafRecord], act: &[LeafRecord]) -> bool {
    let has = |recs: &[LeafRecord], d: &ActionDesc| recs.iter().any(|r| r.addr == d.addr && r.calldata == d.calldata);
    let descs = crt.descs_of(i);
    let in_act = i == 0 || descs.iter().all(|d| has(act, d));
    let in_trig = crt.next_of(i).iter().all(|d| has(trig, d));
    in_act && in_trig
}

/// DAG model: descriptions and triggered descriptions each form one
/// same-nonce contiguous group.
pub fn dag_membership(crt: &Crt, i: usize, trig: &[LeafRecord], act: &[LeafRecord]) -> bool {
    let in_act = i == 0 || contained_star(&crt.descs_of(i), act);
    in_act && contained_star(&crt.next_of(i), trig)
}

// ---------------------------------------------------------------------------
// Exhaustive dispatch-order characterization

/// How a wrapped action picks its session id at dispatch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SidChoice {
    Current,
    Next,
}

/// Per-rollup orders of piece indices.
pub type Orders = [Vec<usize>; 2];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub orders: Orders,
    pub sids: Vec<SidChoice>,
    pub route: TriggerRoute,
    pub failed: usize,
    /// (I) trigger and action roots match crosswise.
    pub roots_match: bool,
    /// (II) entry nonces add up to a common session nonce.
    pub nonce_sum: bool,
    /// (III) at most one side holds an active session.
    pub one_inactive: bool,
    pub preserved: bool,
    pub reversed: bool,
    pub atom_exec: bool,
}

impl RunRecord {
    pub fn passes_all(&self, variant: GscVariant) -> bool {
        match variant {
            GscVariant::Svs => self.roots_match,
            _ => self.roots_match && self.nonce_sum && self.one_inactive,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharacterizationReport {
    pub variant: GscVariant,
    pub actions: usize,
    pub honest: Orders,
    pub runs: Vec<RunRecord>,
}

impl CharacterizationReport {
    fn orders_where(&self, f: impl Fn(&RunRecord) -> bool) -> BTreeSet<Orders> {
        self.runs.iter().filter(|r| f(r)).map(|r| r.orders.clone()).collect()
    }

    pub fn interleavings(&self) -> BTreeSet<Orders> {
        self.orders_where(|_| true)
    }

    /// Interleavings with at least one run passing the root check.
    pub fn passing_root_check(&self) -> BTreeSet<Orders> {
        self.orders_where(|r| r.roots_match)
    }

    /// Interleavings with at least one run passing every check of the
    /// variant.
    pub fn passing_all(&self) -> BTreeSet<Orders> {
        let v = self.variant;
        self.orders_where(|r| r.passes_all(v))
    }

    pub fn honest_and_reversed(&self) -> BTreeSet<Orders> {
        let rev = [
            self.honest[0].iter().rev().copied().collect(),
            self.honest[1].iter().rev().copied().collect(),
        ];
        [self.honest.clone(), rev].into_iter().collect()
    }

    /// Runs accepted by all checks have atomic execution; runs without it
    /// fail some check.
    pub fn checks_imply_atomicity(&self) -> bool {
        let v = self.variant;
        self.runs.iter().all(|r| !r.passes_all(v) || r.atom_exec)
    }
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

fn check_size(crt: &Crt) -> Result<(), OracleError> {
    match crt {
        Crt::Chain(c) if c.actions.len() > 5 => Err(OracleError::TooLarge(format!("{} chain actions", c.actions.len()))),
        Crt::Dag(d) if d.actions.len() > 4 || d.actions.iter().any(|a| a.descs.len() > 3) => {
            Err(OracleError::TooLarge("more than 4 actions or 3 sub-actions".into()))
        }
        _ => Ok(()),
    }
}

fn with_sid(tx: &Tx, sid: Option<u64>) -> Tx {
    let mut tx = tx.clone();
    if let Some(GscCall::Action { items, .. }) = tx.gsc_call() {
        tx.calldata = GscCall::Action { items, sid }.to_calldata();
    }
    tx
}

fn direct_source(tx: &Tx, variant: GscVariant) -> Tx {
    match variant {
        GscVariant::Dag => match tx.gsc_call() {
            Some(GscCall::StartSession { addr, calldata }) => Tx::new(tx.rollup, tx.from.clone(), addr, calldata),
            _ => tx.clone(),
        },
        _ => Tx {
            route: TriggerRoute::Direct,
            ..tx.clone()
        },
    }
}

fn session_checks(g1: &GscState, g2: &GscState) -> (bool, bool, bool) {
    let roots = g1.trig_tree.root() == g2.act_tree.root() && g2.trig_tree.root() == g1.act_tree.root();
    let sum = g1.session_nonce == g2.session_nonce && g1.entry_nonce + g2.entry_nonce == g1.session_nonce;
    let inactive = !(g1.session_active && g2.session_active);
    (roots, sum, inactive)
}

/// Executes `pieces` on a copy of `world`, each rollup in `orders`, with
/// session ids chosen at dispatch. Returns per-rollup entries.
fn run_orders(
    world: &World,
    pieces: &[Tx],
    orders: &Orders,
    sids: &[SidChoice],
    route: TriggerRoute,
) -> (World, [Vec<BatchEntry>; 2]) {
    let mut w = world.clone();
    let variant = w.variant();
    let mut entries: [Vec<BatchEntry>; 2] = [Vec::new(), Vec::new()];
    for r in RollupId::ALL {
        for &k in &orders[r.index()] {
            let rollup = w.rollup_mut(r);
            let tx = if k == 0 {
                match route {
                    TriggerRoute::StartSession => pieces[0].clone(),
                    TriggerRoute::Direct => direct_source(&pieces[0], variant),
                }
            } else {
                let g = rollup.gsc();
                let sid = match (variant, sids[k - 1]) {
                    (GscVariant::Svs, _) => None,
                    (_, SidChoice::Current) => Some(g.session_nonce),
                    (_, SidChoice::Next) => Some(g.session_nonce + 1),
                };
                with_sid(&pieces[k], sid)
            };
            let out = rollup.execute_tx(&tx);
            let position = entries[r.index()].len();
            entries[r.index()].push(BatchEntry {
                position,
                tx,
                status: out.status,
                events: out.events,
                inserts: out.inserts,
                writes: out.writes,
            });
        }
    }
    (w, entries)
}

/// Enumerates every per-rollup order of the honest pieces of `crt`, and for
/// session-based variants every session-id choice per action call and both
/// source routes, recording which checks each run passes.
pub fn brute_force_characterize(world: &World, crt: &Crt) -> Result<CharacterizationReport, OracleError> {
    check_size(crt)?;
    let variant = world.variant();
    let exec = Executor::new(world.clone());
    let pieces = exec
        .honest_pieces(crt)
        .map_err(|e| OracleError::Unsupported(e.to_string()))?
        .ok_or(OracleError::HonestFails)?;
    let mut honest: Orders = [Vec::new(), Vec::new()];
    for (k, p) in pieces.iter().enumerate() {
        honest[p.rollup.index()].push(k);
    }
    let sid_space: Vec<Vec<SidChoice>> = if variant == GscVariant::Svs {
        vec![vec![SidChoice::Current; pieces.len() - 1]]
    } else {
        (0..1u32 << (pieces.len() - 1))
            .map(|m| {
                (0..pieces.len() - 1)
                    .map(|b| if m >> b & 1 == 1 { SidChoice::Next } else { SidChoice::Current })
                    .collect()
            })
            .collect()
    };
    let routes: &[TriggerRoute] = if variant == GscVariant::Svs {
        &[TriggerRoute::StartSession]
    } else {
        &[TriggerRoute::StartSession, TriggerRoute::Direct]
    };
    let pre = [world.rollup(RollupId::R1).store().clone(), world.rollup(RollupId::R2).store().clone()];
    let mut runs = Vec::new();
    for o1 in permutations(&honest[0]) {
        for o2 in permutations(&honest[1]) {
            let orders: Orders = [o1.clone(), o2.clone()];
            let preserved = orders == honest;
            let reversed = orders[0].iter().rev().eq(honest[0].iter()) && orders[1].iter().rev().eq(honest[1].iter());
            for sids in &sid_space {
                for &route in routes {
                    let (w, entries) = run_orders(world, &pieces, &orders, sids, route);
                    let g1 = w.rollup(RollupId::R1).gsc();
                    let g2 = w.rollup(RollupId::R2).gsc();
                    let (roots_match, nonce_sum, one_inactive) = session_checks(g1, g2);
                    let views = [
                        RollupView {
                            pre: &pre[0],
                            post: w.rollup(RollupId::R1).compute_digest(),
                            entries: &entries[0],
                        },
                        RollupView {
                            pre: &pre[1],
                            post: w.rollup(RollupId::R2).compute_digest(),
                            entries: &entries[1],
                        },
                    ];
                    runs.push(RunRecord {
                        orders: orders.clone(),
                        sids: sids.clone(),
                        route,
                        failed: entries.iter().flatten().filter(|e| !e.status.is_success()).count(),
                        roots_match,
                        nonce_sum,
                        one_inactive,
                        preserved,
                        reversed,
                        atom_exec: atom_exec(crt, views),
                    });
                }
            }
        }
    }
    Ok(CharacterizationReport {
        variant,
        actions: crt.len(),
        honest,
        runs,
    })
}

// ---------------------------------------------------------------------------
// DAG sub-action constructions

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Construction {
    Honest,
    /// Action's sub-actions cut into a prefix call and a suffix call.
    Partition { action: usize, cut: usize },
    /// Sub-actions assigned to two calls by `mask` (bit set: first call) in
    /// a way that is not a prefix cut.
    MixedNonces { action: usize, mask: u32 },
    /// An extra sub-action inserted at `at` in the action's single call.
    ExtraSubAction { action: usize, at: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstructionResult {
    pub construction: Construction,
    /// Membership check result per action.
    pub membership: Vec<bool>,
    /// Atomic execution by desc identity and order.
    pub atom_exec: bool,
}

fn action_tx(rollup: RollupId, items: Vec<TriggerData>, sid: Option<u64>) -> Tx {
    Tx::new(rollup, Address::executor(), Address::gsc(), GscCall::Action { items, sid }.to_calldata())
}

/// The honest run of a DAG CRT plus every partition, mixed-nonce and
/// extra-sub-action variant of each non-source action, each executed from
/// `world` with the membership check evaluated for every action.
pub fn dag_constructions(world: &World, crt: &DagCrt) -> Result<Vec<ConstructionResult>, OracleError> {
    if world.variant() != GscVariant::Dag {
        return Err(OracleError::Unsupported("constructions need the dag GSC".into()));
    }
    let wrapped = Crt::Dag(crt.clone());
    check_size(&wrapped)?;
    let exec = Executor::new(world.clone());
    let pieces = exec
        .honest_pieces(&wrapped)
        .map_err(|e| OracleError::Unsupported(e.to_string()))?
        .ok_or(OracleError::HonestFails)?;
    if pieces.len() != crt.actions.len() {
        return Err(OracleError::Unsupported("some action triggers nothing".into()));
    }
    let mut plans: Vec<(Construction, Vec<Planned>)> = Vec::new();
    let fixed = |txs: &[Tx]| -> Vec<Planned> {
        txs.iter()
            .map(|tx| Planned {
                tx: tx.clone(),
                adaptive_sid: false,
            })
            .collect()
    };
    plans.push((Construction::Honest, fixed(&pieces)));
    for k in 1..pieces.len() {
        let Some(GscCall::Action { items, sid }) = pieces[k].gsc_call() else {
            continue;
        };
        let r = pieces[k].rollup;
        let m = items.len();
        let split = |first: Vec<TriggerData>, second: Vec<TriggerData>| {
            let mut plan = fixed(&pieces);
            plan[k].tx = action_tx(r, first, sid);
            plan.insert(
                k + 1,
                Planned {
                    tx: action_tx(r, second, sid),
                    adaptive_sid: true,
                },
            );
            plan
        };
        for mask in 1..(1u32 << m) - 1 {
            let first: Vec<TriggerData> = (0..m).filter(|b| mask >> b & 1 == 1).map(|b| items[b].clone()).collect();
            let second: Vec<TriggerData> = (0..m).filter(|b| mask >> b & 1 == 0).map(|b| items[b].clone()).collect();
            let prefix = (0..m).all(|b| (mask >> b & 1 == 1) == (b < first.len()));
            let c = if prefix {
                Construction::Partition { action: k, cut: first.len() }
            } else {
                Construction::MixedNonces { action: k, mask }
            };
            plans.push((c, split(first, second)));
        }
        for at in 0..=m {
            let mut with_extra = items.clone();
            with_extra.insert(
                at,
                TriggerData {
                    sender: items[0].sender.clone(),
                    addr: crate::apps::addr("step", r),
                    calldata: Calldata::new("exec", vec![Arg::Uint(900_000 + (k * 10 + at) as u64), Arg::List(vec![])]),
                },
            );
            let mut plan = fixed(&pieces);
            plan[k].tx = action_tx(r, with_extra, sid);
            plans.push((Construction::ExtraSubAction { action: k, at }, plan));
        }
    }
    let pre = [world.rollup(RollupId::R1).store().clone(), world.rollup(RollupId::R2).store().clone()];
    let mut out = Vec::with_capacity(plans.len());
    for (construction, plan) in plans {
        let mut e = Executor::new(world.clone());
        e.replay(&plan);
        let entries = [e.batch(RollupId::R1).to_vec(), e.batch(RollupId::R2).to_vec()];
        let recs = [leaf_records(&entries[0]), leaf_records(&entries[1])];
        let membership = (0..crt.actions.len())
            .map(|i| {
                let r = wrapped.rollup_of(i).expect("valid CRT").index();
                dag_membership(&wrapped, i, &recs[r].0, &recs[r].1)
            })
            .collect();
        let views = [
            RollupView {
                pre: &pre[0],
                post: e.world().rollup(RollupId::R1).compute_digest(),
                entries: &entries[0],
            },
            RollupView {
                pre: &pre[1],
                post: e.world().rollup(RollupId::R2).compute_digest(),
                entries: &entries[1],
            },
        ];
        out.push(ConstructionResult {
            construction,
            membership,
            atom_exec: atom_exec(&wrapped, views),
        });
    }
    Ok(out)
}
