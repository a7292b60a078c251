//! Actions, cross-rollup transactions and their user-side compilation.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::commitment::encode_field;

/// One of the two rollups. Each rollup settles on its own L1 chain, so the
/// same identifier also names the L1 chain and its VSM.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum RollupId {
    R1,
    R2,
}

impl RollupId {
    pub const ALL: [RollupId; 2] = [RollupId::R1, RollupId::R2];

    pub fn other(self) -> RollupId {
        match self {
            RollupId::R1 => RollupId::R2,
            RollupId::R2 => RollupId::R1,
        }
    }

    pub fn index(self) -> usize {
        match self {
            RollupId::R1 => 0,
            RollupId::R2 => 1,
        }
    }

    pub fn number(self) -> u8 {
        self.index() as u8 + 1
    }
}

impl TryFrom<u8> for RollupId {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(RollupId::R1),
            2 => Ok(RollupId::R2),
            other => Err(format!("rollup id must be 1 or 2, got {other}")),
        }
    }
}

impl From<RollupId> for u8 {
    fn from(r: RollupId) -> u8 {
        r.number()
    }
}

impl fmt::Display for RollupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rollup{}", self.number())
    }
}

/// Contract or account address.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Address(pub String);

impl Address {
    pub fn new(s: impl Into<String>) -> Self {
        Address(s.into())
    }

    pub fn as_bytes(&self) -> &[u8] {
        self.0.as_bytes()
    }

    /// The General System Contract, deployed at the same address on every rollup.
    pub fn gsc() -> Self {
        Address::new(GSC_ADDRESS)
    }

    /// Privileged identity allowed to call the GSC action entry.
    pub fn executor() -> Self {
        Address::new(EXECUTOR_ADDRESS)
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub const GSC_ADDRESS: &str = "gsc";
pub const EXECUTOR_ADDRESS: &str = "executor";

/// Store key of `slot` in the storage of contract `addr`.
pub fn storage_key(addr: &Address, slot: &[u8]) -> Vec<u8> {
    let mut key = Vec::with_capacity(addr.0.len() + 1 + slot.len());
    key.extend_from_slice(addr.as_bytes());
    key.push(0);
    key.extend_from_slice(slot);
    key
}

/// A typed calldata argument.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arg {
    Uint(u64),
    Int(i64),
    Addr(Address),
    Bytes(#[serde(with = "crate::commitment::hex_bytes")] Vec<u8>),
    Call(Address, Calldata),
    List(Vec<Arg>),
}

impl Arg {
    fn encode_into(&self, out: &mut Vec<u8>) {
        match self {
            Arg::Uint(v) => {
                out.push(0);
                out.extend_from_slice(&v.to_be_bytes());
            }
            Arg::Int(v) => {
                out.push(1);
                out.extend_from_slice(&v.to_be_bytes());
            }
            Arg::Addr(a) => {
                out.push(2);
                encode_field(out, a.as_bytes());
            }
            Arg::Bytes(b) => {
                out.push(3);
                encode_field(out, b);
            }
            Arg::Call(a, cd) => {
                out.push(4);
                encode_field(out, a.as_bytes());
                encode_field(out, &cd.encode());
            }
            Arg::List(items) => {
                out.push(5);
                out.extend_from_slice(&(items.len() as u64).to_be_bytes());
                for item in items {
                    let mut inner = Vec::new();
                    item.encode_into(&mut inner);
                    encode_field(out, &inner);
                }
            }
        }
    }
}

/// Function selector plus arguments. The byte encoding is length-prefixed and
/// is what gets hashed into trigger and action leaves.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Calldata {
    pub selector: String,
    #[serde(default)]
    pub args: Vec<Arg>,
}

impl Calldata {
    pub fn new(selector: impl Into<String>, args: Vec<Arg>) -> Self {
        Calldata {
            selector: selector.into(),
            args,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        encode_field(&mut out, self.selector.as_bytes());
        out.extend_from_slice(&(self.args.len() as u64).to_be_bytes());
        for arg in &self.args {
            let mut inner = Vec::new();
            arg.encode_into(&mut inner);
            encode_field(&mut out, &inner);
        }
        out
    }

    pub fn arg(&self, i: usize) -> Result<&Arg, Revert> {
        self.args
            .get(i)
            .ok_or_else(|| Revert::new(format!("{}: missing argument {i}", self.selector)))
    }

    pub fn uint(&self, i: usize) -> Result<u64, Revert> {
        match self.arg(i)? {
            Arg::Uint(v) => Ok(*v),
            _ => Err(Revert::new(format!("{}: argument {i} is not uint", self.selector))),
        }
    }

    pub fn int(&self, i: usize) -> Result<i64, Revert> {
        match self.arg(i)? {
            Arg::Int(v) => Ok(*v),
            _ => Err(Revert::new(format!("{}: argument {i} is not int", self.selector))),
        }
    }

    pub fn addr(&self, i: usize) -> Result<&Address, Revert> {
        match self.arg(i)? {
            Arg::Addr(a) => Ok(a),
            _ => Err(Revert::new(format!("{}: argument {i} is not an address", self.selector))),
        }
    }

    pub fn call(&self, i: usize) -> Result<(&Address, &Calldata), Revert> {
        match self.arg(i)? {
            Arg::Call(a, cd) => Ok((a, cd)),
            _ => Err(Revert::new(format!("{}: argument {i} is not a call", self.selector))),
        }
    }

    pub fn list(&self, i: usize) -> Result<&[Arg], Revert> {
        match self.arg(i)? {
            Arg::List(items) => Ok(items),
            _ => Err(Revert::new(format!("{}: argument {i} is not a list", self.selector))),
        }
    }
}

impl fmt::Display for Calldata {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.selector, self.args.len())
    }
}

/// Failed `Require` inside contract execution. Rolls back the whole
/// top-level transaction.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("revert: {0}")]
pub struct Revert(pub String);

impl Revert {
    pub fn new(reason: impl Into<String>) -> Self {
        Revert(reason.into())
    }
}

/// `(rollup, addr, cdata)`: what to call and where.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionDesc {
    pub rollup: RollupId,
    pub addr: Address,
    pub calldata: Calldata,
}

impl ActionDesc {
    pub fn new(rollup: RollupId, addr: impl Into<String>, calldata: Calldata) -> Self {
        ActionDesc {
            rollup,
            addr: Address::new(addr),
            calldata,
        }
    }
}

/// Chain-model action. The code trace is not stored: handlers are
/// deterministic, so `desc` fixes it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainAction {
    pub desc: ActionDesc,
    pub desc_next: Option<ActionDesc>,
}

/// DAG-model action: an ordered list of sub-actions on one rollup and the
/// ordered list of sub-actions they trigger on the other.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DagAction {
    pub descs: Vec<ActionDesc>,
    pub descs_next: Vec<ActionDesc>,
}

impl DagAction {
    pub fn rollup(&self) -> Option<RollupId> {
        self.descs.first().map(|d| d.rollup)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainCrt {
    /// Account that signs the source action.
    pub user: Address,
    pub actions: Vec<ChainAction>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DagCrt {
    pub user: Address,
    pub actions: Vec<DagAction>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum Crt {
    Chain(ChainCrt),
    Dag(DagCrt),
}

impl Crt {
    pub fn len(&self) -> usize {
        match self {
            Crt::Chain(c) => c.actions.len(),
            Crt::Dag(c) => c.actions.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn user(&self) -> &Address {
        match self {
            Crt::Chain(c) => &c.user,
            Crt::Dag(c) => &c.user,
        }
    }

    /// Rollup of action `i`.
    pub fn rollup_of(&self, i: usize) -> Option<RollupId> {
        match self {
            Crt::Chain(c) => c.actions.get(i).map(|a| a.desc.rollup),
            Crt::Dag(c) => c.actions.get(i).and_then(|a| a.rollup()),
        }
    }

    /// Sub-action descriptions of action `i` (one element for chain actions).
    pub fn descs_of(&self, i: usize) -> Vec<&ActionDesc> {
        match self {
            Crt::Chain(c) => c.actions.get(i).map(|a| vec![&a.desc]).unwrap_or_default(),
            Crt::Dag(c) => c.actions.get(i).map(|a| a.descs.iter().collect()).unwrap_or_default(),
        }
    }

    /// Triggered descriptions of action `i`.
    pub fn next_of(&self, i: usize) -> Vec<&ActionDesc> {
        match self {
            Crt::Chain(c) => c
                .actions
                .get(i)
                .and_then(|a| a.desc_next.as_ref())
                .map(|d| vec![d])
                .unwrap_or_default(),
            Crt::Dag(c) => c
                .actions
                .get(i)
                .map(|a| a.descs_next.iter().collect())
                .unwrap_or_default(),
        }
    }

    pub fn validate(&self) -> Result<(), CrtViolation> {
        match self {
            Crt::Chain(c) => validate_chain(c),
            Crt::Dag(c) => validate_dag(c),
        }
    }
}

/// How the source action's trigger reaches the GSC.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerRoute {
    /// Trigger calls go straight to `GSC.trigger`.
    #[default]
    Direct,
    /// The first trigger of the transaction opens a session through
    /// `GSC.startSession`. This is how a compiled chain source action runs.
    StartSession,
}

/// A top-level transaction submitted to one rollup.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tx {
    pub rollup: RollupId,
    pub from: Address,
    pub to: Address,
    pub calldata: Calldata,
    #[serde(default)]
    pub route: TriggerRoute,
}

impl Tx {
    pub fn new(rollup: RollupId, from: Address, to: Address, calldata: Calldata) -> Self {
        Tx {
            rollup,
            from,
            to,
            calldata,
            route: TriggerRoute::Direct,
        }
    }

    pub fn gsc_call(&self) -> Option<GscCall> {
        if self.to.0 == GSC_ADDRESS {
            GscCall::from_calldata(&self.calldata).ok()
        } else {
            None
        }
    }
}

/// `(sender, addr, cdata)` as carried by a trigger event and replayed by
/// `GSC.action`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerData {
    pub sender: Address,
    pub addr: Address,
    pub calldata: Calldata,
}

/// Decoded GSC entry points.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GscCall {
    StartSession { addr: Address, calldata: Calldata },
    Trigger { addr: Address, calldata: Calldata },
    /// One item for the chain and baseline contracts, one or more for DAG.
    /// `sid` is absent for the baseline contract.
    Action { items: Vec<TriggerData>, sid: Option<u64> },
}

pub const SEL_START_SESSION: &str = "startSession";
pub const SEL_TRIGGER: &str = "trigger";
pub const SEL_ACTION: &str = "action";

impl GscCall {
    pub fn to_calldata(&self) -> Calldata {
        match self {
            GscCall::StartSession { addr, calldata } => Calldata::new(
                SEL_START_SESSION,
                vec![Arg::Call(addr.clone(), calldata.clone())],
            ),
            GscCall::Trigger { addr, calldata } => {
                Calldata::new(SEL_TRIGGER, vec![Arg::Call(addr.clone(), calldata.clone())])
            }
            GscCall::Action { items, sid } => {
                let list = items
                    .iter()
                    .map(|t| {
                        Arg::List(vec![
                            Arg::Addr(t.sender.clone()),
                            Arg::Call(t.addr.clone(), t.calldata.clone()),
                        ])
                    })
                    .collect();
                let mut args = vec![Arg::List(list)];
                if let Some(sid) = sid {
                    args.push(Arg::Uint(*sid));
                }
                Calldata::new(SEL_ACTION, args)
            }
        }
    }

    pub fn from_calldata(cd: &Calldata) -> Result<Self, Revert> {
        match cd.selector.as_str() {
            SEL_START_SESSION => {
                let (addr, calldata) = cd.call(0)?;
                Ok(GscCall::StartSession {
                    addr: addr.clone(),
                    calldata: calldata.clone(),
                })
            }
            SEL_TRIGGER => {
                let (addr, calldata) = cd.call(0)?;
                Ok(GscCall::Trigger {
                    addr: addr.clone(),
                    calldata: calldata.clone(),
                })
            }
            SEL_ACTION => {
                let mut items = Vec::new();
                for entry in cd.list(0)? {
                    match entry {
                        Arg::List(pair) => match pair.as_slice() {
                            [Arg::Addr(sender), Arg::Call(addr, calldata)] => items.push(TriggerData {
                                sender: sender.clone(),
                                addr: addr.clone(),
                                calldata: calldata.clone(),
                            }),
                            _ => return Err(Revert::new("action: malformed trigger data")),
                        },
                        _ => return Err(Revert::new("action: malformed trigger data")),
                    }
                }
                let sid = match cd.args.get(1) {
                    Some(Arg::Uint(s)) => Some(*s),
                    Some(_) => return Err(Revert::new("action: sid is not uint")),
                    None => None,
                };
                Ok(GscCall::Action { items, sid })
            }
            other => Err(Revert::new(format!("gsc: unknown selector {other}"))),
        }
    }
}

/// First well-formedness problem found in a CRT.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("action {index}: {reason}")]
pub struct CrtViolation {
    pub index: usize,
    pub reason: String,
}

fn violation(index: usize, reason: impl Into<String>) -> CrtViolation {
    CrtViolation {
        index,
        reason: reason.into(),
    }
}

fn validate_chain(crt: &ChainCrt) -> Result<(), CrtViolation> {
    if crt.actions.is_empty() {
        return Err(violation(0, "empty CRT"));
    }
    let last = crt.actions.len() - 1;
    for (i, a) in crt.actions.iter().enumerate() {
        match (&a.desc_next, i == last) {
            (Some(_), true) => return Err(violation(i, "last action must not trigger")),
            (None, false) => return Err(violation(i, "desc_next is null before the last action")),
            (Some(next), false) => {
                if *next != crt.actions[i + 1].desc {
                    return Err(violation(i, "desc_next does not match the next action"));
                }
                if next.rollup == a.desc.rollup {
                    return Err(violation(i, "trigger does not cross rollups"));
                }
            }
            (None, true) => {}
        }
    }
    Ok(())
}

fn validate_dag(crt: &DagCrt) -> Result<(), CrtViolation> {
    if crt.actions.is_empty() {
        return Err(violation(0, "empty CRT"));
    }
    let last = crt.actions.len() - 1;
    for (i, a) in crt.actions.iter().enumerate() {
        let Some(rollup) = a.rollup() else {
            return Err(violation(i, "action has no sub-actions"));
        };
        if a.descs.iter().any(|d| d.rollup != rollup) {
            return Err(violation(i, "sub-actions span both rollups"));
        }
        if a.descs_next.iter().any(|d| d.rollup == rollup) {
            return Err(violation(i, "triggered sub-action does not cross rollups"));
        }
        if i == last {
            if !a.descs_next.is_empty() {
                return Err(violation(i, "last action must not trigger"));
            }
        } else {
            if a.descs_next.is_empty() {
                return Err(violation(i, "descs_next is empty before the last action"));
            }
            if a.descs_next != crt.actions[i + 1].descs {
                return Err(violation(i, "descs_next does not match the next action's descs"));
            }
        }
    }
    Ok(())
}

pub fn validate_crt(crt: &Crt) -> Result<(), CrtViolation> {
    crt.validate()
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum CompileError {
    #[error("invalid CRT: {0}")]
    Invalid(#[from] CrtViolation),
    #[error("a chain CRT needs at least two actions, got {0}")]
    TooShort(usize),
    #[error("the DAG source action must have exactly one sub-action, got {0}")]
    SourceArity(usize),
}

/// Builds the user-signed source transaction `a1'`: it runs `a1` and opens a
/// session whose trigger carries `a2`'s description.
pub fn compile_chain_crt(crt: &ChainCrt) -> Result<Tx, CompileError> {
    compile_chain_crt_with(crt, TriggerRoute::StartSession)
}

/// As [`compile_chain_crt`] with an explicit route. `Direct` is what a
/// baseline (session-less) deployment expects.
pub fn compile_chain_crt_with(crt: &ChainCrt, route: TriggerRoute) -> Result<Tx, CompileError> {
    validate_chain(crt)?;
    if crt.actions.len() < 2 {
        return Err(CompileError::TooShort(crt.actions.len()));
    }
    let src = &crt.actions[0].desc;
    Ok(Tx {
        rollup: src.rollup,
        from: crt.user.clone(),
        to: src.addr.clone(),
        calldata: src.calldata.clone(),
        route,
    })
}

/// Routes the DAG source action through the DAG GSC's `startSession`.
pub fn compile_dag_crt(crt: &DagCrt) -> Result<Tx, CompileError> {
    validate_dag(crt)?;
    let src = &crt.actions[0];
    if src.descs.len() != 1 {
        return Err(CompileError::SourceArity(src.descs.len()));
    }
    let d = &src.descs[0];
    Ok(Tx::new(
        d.rollup,
        crt.user.clone(),
        Address::gsc(),
        GscCall::StartSession {
            addr: d.addr.clone(),
            calldata: d.calldata.clone(),
        }
        .to_calldata(),
    ))
}
