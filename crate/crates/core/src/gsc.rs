//! The General System Contract: trigger and action trees plus session
//! tracking, in the baseline, chain and DAG flavors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::commitment::{hash_tuple, AppendTree, Digest};
use crate::model::{storage_key, Address, Calldata, GscCall, Revert, TriggerData};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GscVariant {
    /// Session-less baseline. Vulnerable to reordering.
    Svs,
    /// One trigger per transaction, session nonces.
    Chain,
    /// Many triggers per transaction sharing one trigger nonce.
    Dag,
}

impl GscVariant {
    pub fn uses_sessions(self) -> bool {
        !matches!(self, GscVariant::Svs)
    }
}

impl fmt::Display for GscVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GscVariant::Svs => "svs",
            GscVariant::Chain => "chain",
            GscVariant::Dag => "dag",
        })
    }
}

impl FromStr for GscVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "svs" => Ok(GscVariant::Svs),
            "chain" => Ok(GscVariant::Chain),
            "dag" => Ok(GscVariant::Dag),
            other => Err(format!("unknown gsc variant {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GscState {
    pub variant: GscVariant,
    pub trig_tree: AppendTree,
    pub act_tree: AppendTree,
    pub t_nonce: u64,
    pub a_nonce: u64,
    pub session_nonce: u64,
    pub entry_nonce: u64,
    pub session_active: bool,
    // Transaction-scoped; the rollup VM clears these between transactions.
    pub trigger_called: bool,
    pub action_called: bool,
    pub x_sender: Option<Address>,
}

impl GscState {
    pub fn new(variant: GscVariant) -> Self {
        GscState {
            variant,
            trig_tree: AppendTree::new(),
            act_tree: AppendTree::new(),
            t_nonce: 0,
            a_nonce: 0,
            session_nonce: 0,
            entry_nonce: 0,
            session_active: false,
            trigger_called: false,
            action_called: false,
            x_sender: None,
        }
    }

    pub fn reset_transient(&mut self) {
        self.trigger_called = false;
        self.action_called = false;
        self.x_sender = None;
    }

    /// Persistent fields as `(store key, value)` pairs, mirrored into the
    /// rollup store so they are covered by the state digest.
    pub fn mirrored_entries(&self) -> Vec<(Vec<u8>, Vec<u8>)> {
        let mut out: Vec<(Vec<u8>, Vec<u8>)> = Attribute::ALL
            .iter()
            .map(|a| (a.key(), self.attribute_value(*a)))
            .collect();
        let gsc = Address::gsc();
        out.push((storage_key(&gsc, b"t_nonce"), self.t_nonce.to_be_bytes().to_vec()));
        out.push((storage_key(&gsc, b"a_nonce"), self.a_nonce.to_be_bytes().to_vec()));
        out
    }

    pub fn attribute_value(&self, attr: Attribute) -> Vec<u8> {
        match attr {
            Attribute::TrigRoot => self.trig_tree.root().as_bytes().to_vec(),
            Attribute::ActRoot => self.act_tree.root().as_bytes().to_vec(),
            Attribute::SessionNonce => self.session_nonce.to_be_bytes().to_vec(),
            Attribute::EntryNonce => self.entry_nonce.to_be_bytes().to_vec(),
            Attribute::SessionActive => vec![u8::from(self.session_active)],
        }
    }
}

/// Provable GSC fields.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    TrigRoot,
    ActRoot,
    SessionNonce,
    EntryNonce,
    SessionActive,
}

impl Attribute {
    pub const ALL: [Attribute; 5] = [
        Attribute::TrigRoot,
        Attribute::ActRoot,
        Attribute::SessionNonce,
        Attribute::EntryNonce,
        Attribute::SessionActive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::TrigRoot => "trig_root",
            Attribute::ActRoot => "act_root",
            Attribute::SessionNonce => "session_nonce",
            Attribute::EntryNonce => "entry_nonce",
            Attribute::SessionActive => "session_active",
        }
    }

    pub fn key(self) -> Vec<u8> {
        storage_key(&Address::gsc(), self.name().as_bytes())
    }
}

impl FromStr for Attribute {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Attribute::ALL
            .iter()
            .copied()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown attribute {s:?}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeKind {
    Trig,
    Act,
}

/// `emit T(sender, addr, cdata, tNonce)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerEvent {
    pub sender: Address,
    pub addr: Address,
    pub calldata: Calldata,
    pub t_nonce: u64,
}

impl TriggerEvent {
    pub fn data(&self) -> TriggerData {
        TriggerData {
            sender: self.sender.clone(),
            addr: self.addr.clone(),
            calldata: self.calldata.clone(),
        }
    }
}

/// The preimage fields of one tree leaf, kept so tree contents can be
/// checked without inverting hashes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeafRecord {
    pub tree: TreeKind,
    pub sender: Address,
    pub addr: Address,
    pub calldata: Calldata,
    pub nonce: u64,
    pub sid: Option<u64>,
    pub leaf: Digest,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GscEvent {
    Trigger(TriggerEvent),
    Insert(LeafRecord),
}

/// `H(sender, addr, cdata, nonce[, sid])`. The baseline contract omits `sid`.
pub fn leaf_hash(
    sender: &Address,
    addr: &Address,
    calldata: &Calldata,
    nonce: u64,
    sid: Option<u64>,
) -> Digest {
    let cd = calldata.encode();
    let nonce = nonce.to_be_bytes();
    match sid {
        Some(sid) => {
            let sid = sid.to_be_bytes();
            hash_tuple(&[sender.as_bytes(), addr.as_bytes(), &cd, &nonce, &sid])
        }
        None => hash_tuple(&[sender.as_bytes(), addr.as_bytes(), &cd, &nonce]),
    }
}

/// What the GSC needs from the surrounding VM.
pub trait GscHost {
    fn gsc(&mut self) -> &mut GscState;
    /// Calls `addr` with `msg.sender` set to the GSC.
    fn dispatch(&mut self, addr: &Address, calldata: &Calldata) -> Result<(), Revert>;
    fn emit(&mut self, event: GscEvent);
}

fn require(cond: bool, reason: &str) -> Result<(), Revert> {
    if cond {
        Ok(())
    } else {
        Err(Revert::new(reason))
    }
}

fn insert<H: GscHost>(
    h: &mut H,
    tree: TreeKind,
    sender: &Address,
    addr: &Address,
    calldata: &Calldata,
    nonce: u64,
    sid: Option<u64>,
) {
    let leaf = leaf_hash(sender, addr, calldata, nonce, sid);
    let g = h.gsc();
    match tree {
        TreeKind::Trig => g.trig_tree.insert(leaf),
        TreeKind::Act => g.act_tree.insert(leaf),
    }
    h.emit(GscEvent::Insert(LeafRecord {
        tree,
        sender: sender.clone(),
        addr: addr.clone(),
        calldata: calldata.clone(),
        nonce,
        sid,
        leaf,
    }));
}

/// Entry point for any call whose target is the GSC.
pub fn handle<H: GscHost>(h: &mut H, caller: &Address, calldata: &Calldata) -> Result<(), Revert> {
    match GscCall::from_calldata(calldata)? {
        GscCall::StartSession { addr, calldata } => start_session(h, caller, &addr, &calldata),
        GscCall::Trigger { addr, calldata } => trigger(h, caller, &addr, &calldata),
        GscCall::Action { items, sid } => action(h, caller, &items, sid),
    }
}

/// Opens a new session. The chain flavor emits the session trigger itself;
/// the DAG flavor runs the source call and requires that it triggered. The
/// baseline has no sessions and treats this as a plain trigger.
pub fn start_session<H: GscHost>(
    h: &mut H,
    caller: &Address,
    addr: &Address,
    calldata: &Calldata,
) -> Result<(), Revert> {
    let variant = h.gsc().variant;
    if variant == GscVariant::Svs {
        return trigger(h, caller, addr, calldata);
    }
    let g = h.gsc();
    require(!g.action_called, "startSession: called during action")?;
    g.entry_nonce += 1;
    g.session_nonce += 1;
    g.session_active = true;
    g.trigger_called = false;
    match variant {
        GscVariant::Chain => trigger_internal(h, caller, addr, calldata),
        _ => {
            h.dispatch(addr, calldata)?;
            require(h.gsc().trigger_called, "startSession: source action did not trigger")
        }
    }
}

fn trigger_internal<H: GscHost>(
    h: &mut H,
    sender: &Address,
    addr: &Address,
    calldata: &Calldata,
) -> Result<(), Revert> {
    let g = h.gsc();
    require(!g.trigger_called, "trigger: only one trigger per tx")?;
    g.trigger_called = true;
    let sid = g.session_nonce;
    g.t_nonce += 1;
    let t_nonce = g.t_nonce;
    emit_trigger(h, sender, addr, calldata, t_nonce);
    insert(h, TreeKind::Trig, sender, addr, calldata, t_nonce, Some(sid));
    Ok(())
}

fn emit_trigger<H: GscHost>(h: &mut H, sender: &Address, addr: &Address, calldata: &Calldata, t_nonce: u64) {
    h.emit(GscEvent::Trigger(TriggerEvent {
        sender: sender.clone(),
        addr: addr.clone(),
        calldata: calldata.clone(),
        t_nonce,
    }));
}

pub fn trigger<H: GscHost>(
    h: &mut H,
    caller: &Address,
    addr: &Address,
    calldata: &Calldata,
) -> Result<(), Revert> {
    match h.gsc().variant {
        GscVariant::Svs => {
            let g = h.gsc();
            g.t_nonce += 1;
            let t_nonce = g.t_nonce;
            emit_trigger(h, caller, addr, calldata, t_nonce);
            insert(h, TreeKind::Trig, caller, addr, calldata, t_nonce, None);
            Ok(())
        }
        GscVariant::Chain => trigger_internal(h, caller, addr, calldata),
        GscVariant::Dag => {
            let g = h.gsc();
            if !g.trigger_called {
                g.t_nonce += 1;
            }
            g.trigger_called = true;
            let sid = g.session_nonce;
            let t_nonce = g.t_nonce;
            emit_trigger(h, caller, addr, calldata, t_nonce);
            insert(h, TreeKind::Trig, caller, addr, calldata, t_nonce, Some(sid));
            Ok(())
        }
    }
}

/// `sid` must continue the active session or open the next one.
pub fn check_session_id(g: &mut GscState, sid: u64) -> Result<(), Revert> {
    if sid == g.session_nonce {
        require(g.session_active, "checkSessionID: session not active")
    } else if Some(sid) == g.session_nonce.checked_add(1) {
        g.session_active = true;
        g.session_nonce += 1;
        Ok(())
    } else {
        Err(Revert::new(format!(
            "checkSessionID: sid {sid} does not match session nonce {}",
            g.session_nonce
        )))
    }
}

/// Executes triggered calls on behalf of the executor.
pub fn action<H: GscHost>(
    h: &mut H,
    caller: &Address,
    items: &[TriggerData],
    sid: Option<u64>,
) -> Result<(), Revert> {
    require(*caller == Address::executor(), "action: caller is not the executor")?;
    match h.gsc().variant {
        GscVariant::Svs => {
            require(sid.is_none(), "action: baseline takes no session id")?;
            require(items.len() == 1, "action: expects exactly one trigger")?;
            let t = &items[0];
            h.gsc().x_sender = Some(t.sender.clone());
            h.dispatch(&t.addr, &t.calldata)?;
            h.gsc().x_sender = None;
            let g = h.gsc();
            g.a_nonce += 1;
            let nonce = g.a_nonce;
            insert(h, TreeKind::Act, &t.sender, &t.addr, &t.calldata, nonce, None);
            Ok(())
        }
        GscVariant::Chain => {
            let sid = sid.ok_or_else(|| Revert::new("action: missing session id"))?;
            require(items.len() == 1, "action: expects exactly one trigger")?;
            let t = &items[0];
            let g = h.gsc();
            g.action_called = true;
            check_session_id(g, sid)?;
            g.trigger_called = false;
            g.x_sender = Some(t.sender.clone());
            h.dispatch(&t.addr, &t.calldata)?;
            let g = h.gsc();
            g.x_sender = None;
            g.a_nonce += 1;
            let nonce = g.a_nonce;
            insert(h, TreeKind::Act, &t.sender, &t.addr, &t.calldata, nonce, Some(sid));
            finish_action(h.gsc());
            Ok(())
        }
        GscVariant::Dag => {
            let sid = sid.ok_or_else(|| Revert::new("action: missing session id"))?;
            let g = h.gsc();
            check_session_id(g, sid)?;
            g.action_called = true;
            g.trigger_called = false;
            require(!items.is_empty(), "action: empty trigger list")?;
            g.a_nonce += 1;
            let nonce = g.a_nonce;
            for t in items {
                h.gsc().x_sender = Some(t.sender.clone());
                h.dispatch(&t.addr, &t.calldata)?;
                insert(h, TreeKind::Act, &t.sender, &t.addr, &t.calldata, nonce, Some(sid));
                h.gsc().x_sender = None;
            }
            finish_action(h.gsc());
            Ok(())
        }
    }
}

fn finish_action(g: &mut GscState) {
    if !g.trigger_called {
        g.session_active = false;
    }
    g.action_called = false;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Arg;

    /// Host whose callees are scripted: each dispatched address maps to a
    /// list of nested GSC calls to make.
    struct Mock {
        gsc: GscState,
        events: Vec<GscEvent>,
        nested: Vec<(Address, Vec<(Address, Calldata)>)>,
        fail: Vec<Address>,
    }

    impl Mock {
        fn new(variant: GscVariant) -> Self {
            Mock {
                gsc: GscState::new(variant),
                events: Vec::new(),
                nested: Vec::new(),
                fail: Vec::new(),
            }
        }

        fn on(mut self, callee: &str, triggers: &[&str]) -> Self {
            let t = triggers
                .iter()
                .map(|a| (Address::new(*a), Calldata::new("f", vec![])))
                .collect();
            self.nested.push((Address::new(callee), t));
            self
        }

        fn leaves(&self, tree: TreeKind) -> Vec<&LeafRecord> {
            self.events
                .iter()
                .filter_map(|e| match e {
                    GscEvent::Insert(r) if r.tree == tree => Some(r),
                    _ => None,
                })
                .collect()
        }

        /// Runs a top-level call with VM-style rollback and flag reset.
        fn tx(&mut self, f: impl FnOnce(&mut Self) -> Result<(), Revert>) -> Result<(), Revert> {
            let saved = (self.gsc.clone(), self.events.len());
            self.gsc.reset_transient();
            let r = f(self);
            if r.is_err() {
                self.gsc = saved.0;
                self.events.truncate(saved.1);
            }
            self.gsc.reset_transient();
            r
        }
    }

    impl GscHost for Mock {
        fn gsc(&mut self) -> &mut GscState {
            &mut self.gsc
        }

        fn dispatch(&mut self, addr: &Address, _cd: &Calldata) -> Result<(), Revert> {
            if self.fail.contains(addr) {
                return Err(Revert::new("callee failed"));
            }
            let nested = self
                .nested
                .iter()
                .find(|(a, _)| a == addr)
                .map(|(_, t)| t.clone())
                .unwrap_or_default();
            for (target, cd) in nested {
                trigger(self, addr, &target, &cd)?;
            }
            Ok(())
        }

        fn emit(&mut self, event: GscEvent) {
            self.events.push(event);
        }
    }

    fn a(s: &str) -> Address {
        Address::new(s)
    }

    fn cd() -> Calldata {
        Calldata::new("f", vec![])
    }

    fn item(sender: &str, addr: &str) -> TriggerData {
        TriggerData {
            sender: a(sender),
            addr: a(addr),
            calldata: cd(),
        }
    }

    #[test]
    fn fresh_start_session() {
        let mut m = Mock::new(GscVariant::Chain);
        m.tx(|m| start_session(m, &a("src"), &a("dst"), &cd())).unwrap();
        assert_eq!(m.gsc.entry_nonce, 1);
        assert_eq!(m.gsc.session_nonce, 1);
        assert!(m.gsc.session_active);
        let trig = m.leaves(TreeKind::Trig);
        assert_eq!(trig.len(), 1);
        assert_eq!((trig[0].nonce, trig[0].sid), (1, Some(1)));
        assert_eq!(m.gsc.trig_tree.leaves(), &[leaf_hash(&a("src"), &a("dst"), &cd(), 1, Some(1))]);
    }

    #[test]
    fn two_sessions_in_two_txs() {
        let mut m = Mock::new(GscVariant::Chain);
        m.tx(|m| start_session(m, &a("src"), &a("dst"), &cd())).unwrap();
        m.tx(|m| start_session(m, &a("src"), &a("dst"), &cd())).unwrap();
        assert_eq!((m.gsc.entry_nonce, m.gsc.session_nonce), (2, 2));
    }

    #[test]
    fn start_session_inside_action_reverts() {
        let mut m = Mock::new(GscVariant::Chain);
        let before = m.gsc.clone();
        let r = m.tx(|m| {
            m.gsc.action_called = true;
            start_session(m, &a("src"), &a("dst"), &cd())
        });
        assert!(r.is_err());
        assert_eq!(m.gsc, before);
    }

    #[test]
    fn second_trigger_in_one_tx_reverts() {
        let mut m = Mock::new(GscVariant::Chain);
        let r = m.tx(|m| {
            trigger(m, &a("c"), &a("x"), &cd())?;
            trigger(m, &a("c"), &a("y"), &cd())
        });
        assert!(r.is_err());
        assert_eq!(m.gsc.t_nonce, 0);
        assert!(m.events.is_empty());
    }

    #[test]
    fn trigger_in_action_carries_current_sid() {
        let mut m = Mock::new(GscVariant::Chain).on("callee", &["next"]);
        m.gsc.session_nonce = 2;
        m.tx(|m| action(m, &Address::executor(), &[item("s", "callee")], Some(3))).unwrap();
        let trig = m.leaves(TreeKind::Trig);
        assert_eq!((trig[0].nonce, trig[0].sid), (1, Some(3)));
        assert!(m.gsc.session_active);
    }

    #[test]
    fn same_trigger_in_two_sessions_differs() {
        let x = leaf_hash(&a("c"), &a("d"), &cd(), 1, Some(1));
        let y = leaf_hash(&a("c"), &a("d"), &cd(), 1, Some(2));
        assert_ne!(x, y);
    }

    #[test]
    fn action_opening_session_that_triggers() {
        let mut m = Mock::new(GscVariant::Chain).on("callee", &["next"]);
        m.tx(|m| action(m, &Address::executor(), &[item("s", "callee")], Some(1))).unwrap();
        assert_eq!(m.gsc.session_nonce, 1);
        assert!(m.gsc.session_active);
        let act = m.leaves(TreeKind::Act);
        let trig = m.leaves(TreeKind::Trig);
        assert_eq!((act.len(), trig.len()), (1, 1));
        assert_eq!((act[0].sid, trig[0].sid), (Some(1), Some(1)));
    }

    #[test]
    fn action_with_stale_sid_reverts() {
        let mut m = Mock::new(GscVariant::Chain);
        assert!(m.tx(|m| action(m, &Address::executor(), &[item("s", "c")], Some(0))).is_err());
        assert!(m.tx(|m| action(m, &Address::executor(), &[item("s", "c")], Some(2))).is_err());
        assert_eq!(m.gsc, GscState::new(GscVariant::Chain));
    }

    #[test]
    fn terminal_action_closes_session() {
        let mut m = Mock::new(GscVariant::Chain);
        m.tx(|m| action(m, &Address::executor(), &[item("s", "leaf")], Some(1))).unwrap();
        assert!(!m.gsc.session_active);
        assert_eq!(m.gsc.a_nonce, 1);
    }

    #[test]
    fn action_requires_executor() {
        let mut m = Mock::new(GscVariant::Chain);
        assert!(m.tx(|m| action(m, &a("mallory"), &[item("s", "c")], Some(1))).is_err());
    }

    #[test]
    fn x_sender_visible_only_during_dispatch() {
        struct Probe {
            gsc: GscState,
            seen: Option<Address>,
        }
        impl GscHost for Probe {
            fn gsc(&mut self) -> &mut GscState {
                &mut self.gsc
            }
            fn dispatch(&mut self, _: &Address, _: &Calldata) -> Result<(), Revert> {
                self.seen = self.gsc.x_sender.clone();
                Ok(())
            }
            fn emit(&mut self, _: GscEvent) {}
        }
        let mut p = Probe {
            gsc: GscState::new(GscVariant::Chain),
            seen: None,
        };
        action(&mut p, &Address::executor(), &[item("origin", "c")], Some(1)).unwrap();
        assert_eq!(p.seen, Some(a("origin")));
        assert_eq!(p.gsc.x_sender, None);
    }

    #[test]
    fn dag_triggers_share_nonce() {
        let mut m = Mock::new(GscVariant::Dag).on("src", &["x", "y"]);
        m.tx(|m| start_session(m, &a("user"), &a("src"), &cd())).unwrap();
        let trig = m.leaves(TreeKind::Trig);
        assert_eq!(trig.len(), 2);
        assert!(trig.iter().all(|r| r.nonce == 1 && r.sid == Some(1)));
        assert_eq!(trig[0].sender, a("src"));
    }

    #[test]
    fn dag_start_session_requires_trigger() {
        let mut m = Mock::new(GscVariant::Dag);
        assert!(m.tx(|m| start_session(m, &a("user"), &a("quiet"), &cd())).is_err());
        assert_eq!(m.gsc.session_nonce, 0);
    }

    #[test]
    fn dag_action_list_shares_nonce() {
        let mut m = Mock::new(GscVariant::Dag);
        let items = [item("s", "p"), item("s", "q")];
        m.tx(|m| action(m, &Address::executor(), &items, Some(1))).unwrap();
        let act = m.leaves(TreeKind::Act);
        assert_eq!(act.len(), 2);
        assert!(act.iter().all(|r| r.nonce == 1 && r.sid == Some(1)));
        assert_eq!(m.gsc.a_nonce, 1);
    }

    #[test]
    fn dag_empty_action_reverts() {
        let mut m = Mock::new(GscVariant::Dag);
        assert!(m.tx(|m| action(m, &Address::executor(), &[], Some(1))).is_err());
        assert_eq!(m.gsc, GscState::new(GscVariant::Dag));
    }

    #[test]
    fn dag_failed_sub_action_reverts_all() {
        let mut m = Mock::new(GscVariant::Dag);
        m.fail.push(a("q"));
        let items = [item("s", "p"), item("s", "q")];
        assert!(m.tx(|m| action(m, &Address::executor(), &items, Some(1))).is_err());
        assert!(m.events.is_empty());
        assert_eq!(m.gsc.act_tree.len(), 0);
    }

    #[test]
    fn svs_trigger_matches_remote_action() {
        let mut src = Mock::new(GscVariant::Svs);
        let mut dst = Mock::new(GscVariant::Svs);
        src.tx(|m| trigger(m, &a("c1"), &a("c2"), &cd())).unwrap();
        let ev = match &src.events[0] {
            GscEvent::Trigger(t) => t.data(),
            _ => unreachable!(),
        };
        dst.tx(|m| action(m, &Address::executor(), &[ev], None)).unwrap();
        assert_eq!(src.gsc.trig_tree.root(), dst.gsc.act_tree.root());
    }

    #[test]
    fn svs_untriggered_action_diverges() {
        let src = Mock::new(GscVariant::Svs);
        let mut dst = Mock::new(GscVariant::Svs);
        dst.tx(|m| action(m, &Address::executor(), &[item("c1", "c2")], None)).unwrap();
        assert_ne!(src.gsc.trig_tree.root(), dst.gsc.act_tree.root());
    }

    #[test]
    fn attribute_names_round_trip() {
        for attr in Attribute::ALL {
            assert_eq!(attr.name().parse::<Attribute>(), Ok(attr));
        }
        assert!("digest".parse::<Attribute>().is_err());
    }

    #[test]
    fn handle_decodes_calls() {
        let mut m = Mock::new(GscVariant::Chain);
        let call = GscCall::Trigger {
            addr: a("x"),
            calldata: Calldata::new("g", vec![Arg::Uint(1)]),
        };
        m.tx(|m| handle(m, &a("c"), &call.to_calldata())).unwrap();
        assert_eq!(m.gsc.t_nonce, 1);
        assert!(m.tx(|m| handle(m, &a("c"), &Calldata::new("nope", vec![]))).is_err());
    }
}
