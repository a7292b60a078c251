//! The L2 state machine: native contracts over a key-value store, with
//! transaction-level rollback and a Merkle state digest.

use std::collections::BTreeMap;
use std::fmt;
use std::panic::{self, AssertUnwindSafe};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::commitment::{CommitmentError, Digest, MembershipProof, StateTrie};
use crate::gsc::{self, Attribute, GscEvent, GscHost, GscState, GscVariant, LeafRecord, TriggerEvent};
use crate::model::{storage_key, Address, Calldata, Revert, RollupId, Tx, TriggerRoute};

pub type Store = BTreeMap<Vec<u8>, Vec<u8>>;

const MAX_CALL_DEPTH: usize = 64;

/// A deterministic native contract.
pub trait Contract: Send + Sync {
    fn call(&self, ctx: &mut CallCtx<'_, '_>, calldata: &Calldata) -> Result<(), Revert>;
}

/// One store mutation; `value = None` deletes the key.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Write {
    #[serde(with = "crate::commitment::hex_bytes")]
    pub key: Vec<u8>,
    #[serde(with = "opt_hex")]
    pub value: Option<Vec<u8>>,
}

mod opt_hex {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(b) => s.serialize_some(&hex::encode(b)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<u8>>, D::Error> {
        Option::<String>::deserialize(d)?
            .map(|s| hex::decode(s).map_err(serde::de::Error::custom))
            .transpose()
    }
}

/// Sorted by key; the difference between two stores.
pub type WriteSet = Vec<Write>;

pub fn diff_stores(before: &Store, after: &Store) -> WriteSet {
    let mut out = Vec::new();
    for (k, v) in after {
        if before.get(k) != Some(v) {
            out.push(Write {
                key: k.clone(),
                value: Some(v.clone()),
            });
        }
    }
    for k in before.keys() {
        if !after.contains_key(k) {
            out.push(Write {
                key: k.clone(),
                value: None,
            });
        }
    }
    out.sort_by(|a, b| a.key.cmp(&b.key));
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum TxStatus {
    Success,
    Failure(String),
}

impl TxStatus {
    pub fn is_success(&self) -> bool {
        matches!(self, TxStatus::Success)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TxOutcome {
    pub status: TxStatus,
    /// Trigger events in emission order.
    pub events: Vec<TriggerEvent>,
    pub inserts: Vec<LeafRecord>,
    pub writes: WriteSet,
}

impl TxOutcome {
    fn failure(reason: impl Into<String>) -> Self {
        TxOutcome {
            status: TxStatus::Failure(reason.into()),
            events: Vec::new(),
            inserts: Vec::new(),
            writes: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Checkpoint {
    store: Store,
    gsc: GscState,
}

impl Checkpoint {
    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn gsc(&self) -> &GscState {
        &self.gsc
    }

    pub fn digest(&self) -> Digest {
        StateTrie::from_map(&self.store).root()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RollupError {
    #[error("unknown attribute {0:?}")]
    UnknownAttribute(String),
    #[error(transparent)]
    Commitment(#[from] CommitmentError),
}

#[derive(Clone)]
pub struct Rollup {
    id: RollupId,
    store: Store,
    gsc: GscState,
    contracts: BTreeMap<Address, Arc<dyn Contract>>,
}

impl fmt::Debug for Rollup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Rollup")
            .field("id", &self.id)
            .field("variant", &self.gsc.variant)
            .field("contracts", &self.contracts.keys().collect::<Vec<_>>())
            .field("store_len", &self.store.len())
            .finish()
    }
}

impl Rollup {
    pub fn new(id: RollupId, variant: GscVariant) -> Self {
        let mut r = Rollup {
            id,
            store: Store::new(),
            gsc: GscState::new(variant),
            contracts: BTreeMap::new(),
        };
        r.mirror_gsc();
        r
    }

    pub fn id(&self) -> RollupId {
        self.id
    }

    pub fn variant(&self) -> GscVariant {
        self.gsc.variant
    }

    pub fn gsc(&self) -> &GscState {
        &self.gsc
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn deploy(&mut self, addr: Address, contract: Arc<dyn Contract>) {
        self.contracts.insert(addr, contract);
    }

    pub fn has_contract(&self, addr: &Address) -> bool {
        self.contracts.contains_key(addr)
    }

    pub fn contract_addresses(&self) -> impl Iterator<Item = &Address> {
        self.contracts.keys()
    }

    /// Genesis storage write.
    pub fn set_storage(&mut self, addr: &Address, slot: &[u8], value: Vec<u8>) {
        self.store.insert(storage_key(addr, slot), value);
    }

    pub fn storage(&self, addr: &Address, slot: &[u8]) -> Option<&[u8]> {
        self.store.get(&storage_key(addr, slot)).map(Vec::as_slice)
    }

    pub fn storage_u64(&self, addr: &Address, slot: &[u8]) -> u64 {
        self.storage(addr, slot).map(decode_u64).unwrap_or(0)
    }

    fn mirror_gsc(&mut self) {
        for (k, v) in self.gsc.mirrored_entries() {
            self.store.insert(k, v);
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            store: self.store.clone(),
            gsc: self.gsc.clone(),
        }
    }

    pub fn restore(&mut self, cp: &Checkpoint) {
        self.store = cp.store.clone();
        self.gsc = cp.gsc.clone();
    }

    pub fn compute_digest(&self) -> Digest {
        StateTrie::from_map(&self.store).root()
    }

    pub fn trie(&self) -> StateTrie {
        StateTrie::from_map(&self.store)
    }

    pub fn prove_attribute(&self, attr: Attribute) -> Result<MembershipProof, RollupError> {
        Ok(self.trie().prove(&attr.key())?)
    }

    pub fn prove_attribute_named(&self, name: &str) -> Result<MembershipProof, RollupError> {
        let attr: Attribute = name
            .parse()
            .map_err(|_| RollupError::UnknownAttribute(name.to_owned()))?;
        self.prove_attribute(attr)
    }

    /// Runs one top-level transaction. Any revert or handler panic rolls
    /// back this transaction only and yields a failure status.
    pub fn execute_tx(&mut self, tx: &Tx) -> TxOutcome {
        if tx.rollup != self.id {
            return TxOutcome::failure(format!("transaction targets {}, not {}", tx.rollup, self.id));
        }
        let cp = self.checkpoint();
        self.gsc.reset_transient();
        let result = {
            let mut m = Machine {
                rollup: self,
                start_pending: tx.route == TriggerRoute::StartSession,
                events: Vec::new(),
                depth: 0,
            };
            let r = panic::catch_unwind(AssertUnwindSafe(|| m.call(&tx.from, &tx.to, &tx.calldata)));
            let events = std::mem::take(&mut m.events);
            match r {
                Ok(Ok(())) => Ok(events),
                Ok(Err(revert)) => Err(revert.0),
                Err(payload) => Err(panic_reason(payload)),
            }
        };
        self.gsc.reset_transient();
        match result {
            Ok(events) => {
                self.mirror_gsc();
                let mut triggers = Vec::new();
                let mut inserts = Vec::new();
                for e in events {
                    match e {
                        GscEvent::Trigger(t) => triggers.push(t),
                        GscEvent::Insert(r) => inserts.push(r),
                    }
                }
                TxOutcome {
                    status: TxStatus::Success,
                    events: triggers,
                    inserts,
                    writes: diff_stores(&cp.store, &self.store),
                }
            }
            Err(reason) => {
                self.restore(&cp);
                TxOutcome::failure(reason)
            }
        }
    }
}

fn panic_reason(payload: Box<dyn std::any::Any + Send>) -> String {
    let msg = payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into());
    format!("handler panicked: {msg}")
}

pub fn decode_u64(b: &[u8]) -> u64 {
    let mut buf = [0u8; 8];
    let n = b.len().min(8);
    buf[8 - n..].copy_from_slice(&b[b.len() - n..]);
    u64::from_be_bytes(buf)
}

struct Machine<'a> {
    rollup: &'a mut Rollup,
    /// The next trigger opens a session (compiled chain source action).
    start_pending: bool,
    events: Vec<GscEvent>,
    depth: usize,
}

impl Machine<'_> {
    fn call(&mut self, sender: &Address, to: &Address, calldata: &Calldata) -> Result<(), Revert> {
        if self.depth >= MAX_CALL_DEPTH {
            return Err(Revert::new("call depth exceeded"));
        }
        self.depth += 1;
        let r = if *to == Address::gsc() {
            gsc::handle(self, sender, calldata)
        } else {
            match self.rollup.contracts.get(to).cloned() {
                Some(contract) => {
                    let mut ctx = CallCtx {
                        m: self,
                        this: to.clone(),
                        sender: sender.clone(),
                    };
                    contract.call(&mut ctx, calldata)
                }
                None => Err(Revert::new(format!("no contract at {to}"))),
            }
        };
        self.depth -= 1;
        r
    }
}

impl GscHost for Machine<'_> {
    fn gsc(&mut self) -> &mut GscState {
        &mut self.rollup.gsc
    }

    fn dispatch(&mut self, addr: &Address, calldata: &Calldata) -> Result<(), Revert> {
        self.call(&Address::gsc(), addr, calldata)
    }

    fn emit(&mut self, event: GscEvent) {
        self.events.push(event);
    }
}

/// What a running contract can see and do.
pub struct CallCtx<'m, 'a> {
    m: &'m mut Machine<'a>,
    this: Address,
    sender: Address,
}

impl CallCtx<'_, '_> {
    /// `msg.sender`.
    pub fn sender(&self) -> &Address {
        &self.sender
    }

    /// `address(this)`.
    pub fn this(&self) -> &Address {
        &self.this
    }

    pub fn rollup(&self) -> RollupId {
        self.m.rollup.id
    }

    /// Cross-rollup sender published by the GSC during an action.
    pub fn x_sender(&self) -> Option<&Address> {
        self.m.rollup.gsc.x_sender.as_ref()
    }

    pub fn load(&self, slot: &[u8]) -> Option<Vec<u8>> {
        self.load_at(&self.this, slot)
    }

    /// Read-only access to another contract's storage (a view call).
    pub fn load_at(&self, addr: &Address, slot: &[u8]) -> Option<Vec<u8>> {
        self.m.rollup.store.get(&storage_key(addr, slot)).cloned()
    }

    pub fn load_u64(&self, slot: &[u8]) -> u64 {
        self.load(slot).map(|v| decode_u64(&v)).unwrap_or(0)
    }

    pub fn load_u64_at(&self, addr: &Address, slot: &[u8]) -> u64 {
        self.load_at(addr, slot).map(|v| decode_u64(&v)).unwrap_or(0)
    }

    pub fn store(&mut self, slot: &[u8], value: Vec<u8>) {
        let key = storage_key(&self.this, slot);
        self.m.rollup.store.insert(key, value);
    }

    pub fn store_u64(&mut self, slot: &[u8], v: u64) {
        self.store(slot, v.to_be_bytes().to_vec());
    }

    pub fn clear(&mut self, slot: &[u8]) {
        let key = storage_key(&self.this, slot);
        self.m.rollup.store.remove(&key);
    }

    /// Nested call with `msg.sender = this`.
    pub fn call(&mut self, to: &Address, calldata: &Calldata) -> Result<(), Revert> {
        let this = self.this.clone();
        self.m.call(&this, to, calldata)
    }

    /// `gsc.trigger(addr, cdata)`. In a compiled chain source transaction the
    /// first trigger goes through `startSession` instead.
    pub fn trigger(&mut self, addr: &Address, calldata: &Calldata) -> Result<(), Revert> {
        let this = self.this.clone();
        self.m.depth += 1;
        let r = if std::mem::take(&mut self.m.start_pending) {
            gsc::start_session(self.m, &this, addr, calldata)
        } else {
            gsc::trigger(self.m, &this, addr, calldata)
        };
        self.m.depth -= 1;
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Arg;

    /// Minimal ledger: `credit(n)`, `debit(n)`, `ping(addr)` triggers, `boom` panics.
    struct Ledger;

    impl Contract for Ledger {
        fn call(&self, ctx: &mut CallCtx<'_, '_>, cd: &Calldata) -> Result<(), Revert> {
            match cd.selector.as_str() {
                "credit" => {
                    let v = ctx.load_u64(b"bal") + cd.uint(0)?;
                    ctx.store_u64(b"bal", v);
                    Ok(())
                }
                "debit" => {
                    let bal = ctx.load_u64(b"bal");
                    let n = cd.uint(0)?;
                    if n > bal {
                        return Err(Revert::new("insufficient balance"));
                    }
                    ctx.store_u64(b"bal", bal - n);
                    Ok(())
                }
                "ping" => ctx.trigger(cd.addr(0)?, &Calldata::new("credit", vec![Arg::Uint(1)])),
                "boom" => panic!("boom"),
                other => Err(Revert::new(format!("unknown selector {other}"))),
            }
        }
    }

    fn rollup() -> Rollup {
        let mut r = Rollup::new(RollupId::R1, GscVariant::Chain);
        r.deploy(Address::new("ledger"), Arc::new(Ledger));
        r.set_storage(&Address::new("ledger"), b"bal", 10u64.to_be_bytes().to_vec());
        r
    }

    fn tx(sel: &str, args: Vec<Arg>) -> Tx {
        Tx::new(RollupId::R1, Address::new("user"), Address::new("ledger"), Calldata::new(sel, args))
    }

    #[test]
    fn successful_tx_updates_store() {
        let mut r = rollup();
        let out = r.execute_tx(&tx("debit", vec![Arg::Uint(4)]));
        assert_eq!(out.status, TxStatus::Success);
        assert_eq!(r.storage_u64(&Address::new("ledger"), b"bal"), 6);
        assert_eq!(out.writes.len(), 1);
    }

    #[test]
    fn failing_tx_leaves_digest() {
        let mut r = rollup();
        let before = r.compute_digest();
        let out = r.execute_tx(&tx("debit", vec![Arg::Uint(11)]));
        assert!(!out.status.is_success());
        assert_eq!(r.compute_digest(), before);
    }

    #[test]
    fn unknown_selector_and_panic_are_failures() {
        let mut r = rollup();
        let before = r.compute_digest();
        assert!(!r.execute_tx(&tx("nope", vec![])).status.is_success());
        assert!(!r.execute_tx(&tx("boom", vec![])).status.is_success());
        assert_eq!(r.compute_digest(), before);
    }

    #[test]
    fn trigger_tx_emits_one_event() {
        let mut r = rollup();
        let out = r.execute_tx(&tx("ping", vec![Arg::Addr(Address::new("far"))]));
        assert!(out.status.is_success());
        assert_eq!(out.events.len(), 1);
        assert_eq!(out.events[0].sender, Address::new("ledger"));
        assert_eq!(r.gsc().t_nonce, 1);
        assert_eq!(r.storage_u64(&Address::gsc(), b"t_nonce"), 1);
    }

    #[test]
    fn start_session_route() {
        let mut r = rollup();
        let mut t = tx("ping", vec![Arg::Addr(Address::new("far"))]);
        t.route = TriggerRoute::StartSession;
        assert!(r.execute_tx(&t).status.is_success());
        assert_eq!((r.gsc().entry_nonce, r.gsc().session_nonce), (1, 1));
        assert!(!r.gsc().trigger_called);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut r = rollup();
        let cp = r.checkpoint();
        let d0 = r.compute_digest();
        r.execute_tx(&tx("credit", vec![Arg::Uint(1)]));
        assert_ne!(r.compute_digest(), d0);
        r.restore(&cp);
        assert_eq!(r.compute_digest(), d0);
        r.restore(&cp);
        assert_eq!(r.compute_digest(), d0);
    }

    #[test]
    fn attribute_proofs() {
        let mut r = rollup();
        let p = r.prove_attribute_named("trig_root").unwrap();
        assert!(p.verify(&r.compute_digest()));
        r.execute_tx(&tx("credit", vec![Arg::Uint(1)]));
        assert!(!p.verify(&r.compute_digest()));
        assert!(matches!(r.prove_attribute_named("bogus"), Err(RollupError::UnknownAttribute(_))));
    }

    #[test]
    fn wrong_rollup_is_failure() {
        let mut r = rollup();
        let mut t = tx("credit", vec![Arg::Uint(1)]);
        t.rollup = RollupId::R2;
        assert!(!r.execute_tx(&t).status.is_success());
    }

    #[test]
    fn decode_u64_pads() {
        assert_eq!(decode_u64(&[1, 0]), 256);
        assert_eq!(decode_u64(&7u64.to_be_bytes()), 7);
    }
}
