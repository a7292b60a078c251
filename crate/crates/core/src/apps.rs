//! Contracts deployed on the simulated rollups and builders for the CRTs
//! that drive them.
//!
//! Every contract is deployed under `<name>.r<n>` on rollup `n`, so an
//! address alone tells which rollup it lives on.

use std::sync::Arc;

use rand::Rng;

use crate::model::{
    Address, ActionDesc, Arg, Calldata, ChainAction, ChainCrt, DagAction, DagCrt, Revert, RollupId,
};
use crate::rollup::{CallCtx, Contract, Rollup};

pub fn addr(name: &str, r: RollupId) -> Address {
    Address::new(format!("{name}.r{}", r.number()))
}

/// Rollup an address is deployed on, from its suffix.
pub fn rollup_of(a: &Address) -> Option<RollupId> {
    match a.0.rsplit_once(".r")?.1 {
        "1" => Some(RollupId::R1),
        "2" => Some(RollupId::R2),
        _ => None,
    }
}

fn require(cond: bool, reason: &str) -> Result<(), Revert> {
    if cond {
        Ok(())
    } else {
        Err(Revert::new(reason))
    }
}

fn unknown(cd: &Calldata) -> Revert {
    Revert::new(format!("unknown selector {}", cd.selector))
}

/// Generic CRT building block. `exec(tag, nexts)` appends `tag` to a log and
/// triggers every call in `nexts`; `fail(tag)` always reverts.
pub struct Step;

impl Contract for Step {
    fn call(&self, ctx: &mut CallCtx<'_, '_>, cd: &Calldata) -> Result<(), Revert> {
        match cd.selector.as_str() {
            "exec" => {
                let tag = cd.uint(0)?;
                let n = ctx.load_u64(b"n");
                ctx.store(format!("log/{n}").as_bytes(), tag.to_be_bytes().to_vec());
                ctx.store_u64(b"n", n + 1);
                for next in cd.list(1)? {
                    match next {
                        Arg::Call(a, c) => ctx.trigger(a, c)?,
                        _ => return Err(Revert::new("exec: next is not a call")),
                    }
                }
                Ok(())
            }
            "fail" => Err(Revert::new(format!("step {} failed on purpose", cd.uint(0)?))),
            _ => Err(unknown(cd)),
        }
    }
}

pub fn step_exec(tag: u64, nexts: &[ActionDesc]) -> Calldata {
    let list = nexts
        .iter()
        .map(|d| Arg::Call(d.addr.clone(), d.calldata.clone()))
        .collect();
    Calldata::new("exec", vec![Arg::Uint(tag), Arg::List(list)])
}

/// Burn-then-mint token. `mint` is only reachable through a GSC action whose
/// cross-rollup sender is the token on the other rollup.
pub struct Token {
    pub other: Address,
    /// Account allowed to move balances directly (the arbitrage stub).
    pub operator: Option<Address>,
}

fn bal_slot(a: &Address) -> Vec<u8> {
    format!("bal/{a}").into_bytes()
}

pub const SUPPLY_SLOT: &[u8] = b"supply";

impl Token {
    fn sub(ctx: &mut CallCtx<'_, '_>, from: &Address, amount: u64) -> Result<(), Revert> {
        let bal = ctx.load_u64(&bal_slot(from));
        let left = bal
            .checked_sub(amount)
            .ok_or_else(|| Revert::new(format!("token: {from} has {bal}, needs {amount}")))?;
        ctx.store_u64(&bal_slot(from), left);
        Ok(())
    }

    fn add(ctx: &mut CallCtx<'_, '_>, to: &Address, amount: u64) -> Result<(), Revert> {
        let bal = ctx.load_u64(&bal_slot(to));
        let v = bal.checked_add(amount).ok_or_else(|| Revert::new("token: overflow"))?;
        ctx.store_u64(&bal_slot(to), v);
        Ok(())
    }

    fn adjust_supply(ctx: &mut CallCtx<'_, '_>, add: u64, sub: u64) -> Result<(), Revert> {
        let s = ctx.load_u64(SUPPLY_SLOT);
        let s = s
            .checked_add(add)
            .and_then(|s| s.checked_sub(sub))
            .ok_or_else(|| Revert::new("token: supply out of range"))?;
        ctx.store_u64(SUPPLY_SLOT, s);
        Ok(())
    }
}

impl Contract for Token {
    fn call(&self, ctx: &mut CallCtx<'_, '_>, cd: &Calldata) -> Result<(), Revert> {
        match cd.selector.as_str() {
            "transfer" => {
                let from = ctx.sender().clone();
                let amount = cd.uint(1)?;
                Token::sub(ctx, &from, amount)?;
                Token::add(ctx, cd.addr(0)?, amount)
            }
            "burn" => {
                let from = ctx.sender().clone();
                let to = cd.addr(0)?.clone();
                let amount = cd.uint(1)?;
                Token::sub(ctx, &from, amount)?;
                Token::adjust_supply(ctx, 0, amount)?;
                ctx.trigger(&self.other, &token_mint(&to, amount))
            }
            "mint" => {
                require(*ctx.sender() == Address::gsc(), "token: only GSC")?;
                require(
                    ctx.x_sender() == Some(&self.other),
                    "token: only the other token can trigger mint",
                )?;
                let amount = cd.uint(1)?;
                Token::add(ctx, cd.addr(0)?, amount)?;
                Token::adjust_supply(ctx, amount, 0)
            }
            "move" => {
                require(
                    self.operator.as_ref() == Some(ctx.sender()),
                    "token: only the operator can move balances",
                )?;
                let amount = cd.uint(2)?;
                let from = cd.addr(0)?.clone();
                Token::sub(ctx, &from, amount)?;
                Token::add(ctx, cd.addr(1)?, amount)
            }
            _ => Err(unknown(cd)),
        }
    }
}

pub fn token_transfer(to: &Address, amount: u64) -> Calldata {
    Calldata::new("transfer", vec![Arg::Addr(to.clone()), Arg::Uint(amount)])
}

pub fn token_burn(to: &Address, amount: u64) -> Calldata {
    Calldata::new("burn", vec![Arg::Addr(to.clone()), Arg::Uint(amount)])
}

pub fn token_mint(to: &Address, amount: u64) -> Calldata {
    Calldata::new("mint", vec![Arg::Addr(to.clone()), Arg::Uint(amount)])
}

pub fn balance_of(r: &Rollup, holder: &Address) -> u64 {
    r.storage_u64(&addr("token", r.id()), &bal_slot(holder))
}

pub fn total_supply(r: &Rollup) -> u64 {
    r.storage_u64(&addr("token", r.id()), SUPPLY_SLOT)
}

/// Cross-rollup flash loan pool: `init` lends on the source rollup,
/// `react` bounces on the far side and `complete` checks repayment.
pub struct FlashLoan {
    pub token: Address,
    pub other: Address,
}

pub const BUSY_SLOT: &[u8] = b"busy";

impl Contract for FlashLoan {
    fn call(&self, ctx: &mut CallCtx<'_, '_>, cd: &Calldata) -> Result<(), Revert> {
        let busy = ctx.load_u64(BUSY_SLOT) != 0;
        match cd.selector.as_str() {
            "init" => {
                let borrower = ctx.sender().clone();
                require(!busy, "flash loan: busy")?;
                ctx.store_u64(BUSY_SLOT, 1);
                let this = ctx.this().clone();
                let bal_before = ctx.load_u64_at(&self.token, &bal_slot(&this));
                let amount = cd.uint(0)?;
                ctx.call(&self.token, &token_transfer(&borrower, amount))?;
                let (target, cd_target) = cd.call(1)?;
                ctx.call(target, cd_target)?;
                let react = Calldata::new(
                    "react",
                    vec![Arg::Addr(this), Arg::Addr(borrower), Arg::Uint(bal_before)],
                );
                ctx.trigger(&self.other, &react)
            }
            "react" => {
                require(*ctx.sender() == Address::gsc(), "flash loan: only GSC")?;
                require(ctx.x_sender() == Some(&self.other), "flash loan: bad cross-rollup sender")?;
                require(!busy, "flash loan: busy")?;
                let complete = Calldata::new(
                    "complete",
                    vec![Arg::Addr(cd.addr(1)?.clone()), Arg::Uint(cd.uint(2)?)],
                );
                let origin = cd.addr(0)?.clone();
                ctx.trigger(&origin, &complete)
            }
            "complete" => {
                require(*ctx.sender() == Address::gsc(), "flash loan: only GSC")?;
                require(ctx.x_sender() == Some(&self.other), "flash loan: bad cross-rollup sender")?;
                require(busy, "flash loan: not busy")?;
                let this = ctx.this().clone();
                let bal_after = ctx.load_u64_at(&self.token, &bal_slot(&this));
                require(bal_after >= cd.uint(1)?, "flash loan: loan not repaid")?;
                ctx.store_u64(BUSY_SLOT, 0);
                Ok(())
            }
            _ => Err(unknown(cd)),
        }
    }
}

pub fn is_busy(r: &Rollup) -> bool {
    r.storage_u64(&addr("fl", r.id()), BUSY_SLOT) != 0
}

/// The borrower's contract pair. `simpleXFL` starts the loan; `step1` sends
/// the funds across, `step2` runs the arbitrage and sends everything back,
/// `step3` repays the pool.
pub struct UserFl {
    pub token: Address,
    pub fl: Address,
    pub other: Address,
}

impl Contract for UserFl {
    fn call(&self, ctx: &mut CallCtx<'_, '_>, cd: &Calldata) -> Result<(), Revert> {
        match cd.selector.as_str() {
            "simpleXFL" => {
                let amount = cd.uint(0)?;
                let arb = cd.arg(1)?.clone();
                let step1 = Calldata::new("step1", vec![Arg::Uint(amount), arb]);
                let init = Calldata::new(
                    "init",
                    vec![Arg::Uint(amount), Arg::Call(ctx.this().clone(), step1)],
                );
                ctx.call(&self.fl, &init)
            }
            "step1" => {
                let amount = cd.uint(0)?;
                ctx.call(&self.token, &token_burn(&self.other, amount))?;
                let step2 = Calldata::new("step2", vec![Arg::Uint(amount), cd.arg(1)?.clone()]);
                ctx.trigger(&self.other, &step2)
            }
            "step2" => {
                require(ctx.x_sender() == Some(&self.other), "user: bad cross-rollup sender")?;
                let amount = cd.uint(0)?;
                let (arb, cd_arb) = cd.call(1)?;
                ctx.call(arb, cd_arb)?;
                let this = ctx.this().clone();
                let bal = ctx.load_u64_at(&self.token, &bal_slot(&this));
                ctx.call(&self.token, &token_burn(&self.other, bal))?;
                ctx.trigger(&self.other, &Calldata::new("step3", vec![Arg::Uint(amount)]))
            }
            "step3" => {
                require(ctx.x_sender() == Some(&self.other), "user: bad cross-rollup sender")?;
                let this = ctx.this().clone();
                let bal = ctx.load_u64_at(&self.token, &bal_slot(&this));
                let repay = bal.min(cd.uint(0)?);
                ctx.call(&self.token, &token_transfer(&self.fl, repay))
            }
            _ => Err(unknown(cd)),
        }
    }
}

/// Arbitrage stand-in: `run(beneficiary, delta)` moves `|delta|` tokens to
/// (positive) or from (negative) the beneficiary using its operator right.
pub struct Arbitrage {
    pub token: Address,
}

impl Contract for Arbitrage {
    fn call(&self, ctx: &mut CallCtx<'_, '_>, cd: &Calldata) -> Result<(), Revert> {
        match cd.selector.as_str() {
            "run" => {
                let who = cd.addr(0)?.clone();
                let delta = cd.int(1)?;
                let this = ctx.this().clone();
                let (from, to) = if delta >= 0 { (this, who) } else { (who, this) };
                let mv = Calldata::new(
                    "move",
                    vec![Arg::Addr(from), Arg::Addr(to), Arg::Uint(delta.unsigned_abs())],
                );
                ctx.call(&self.token, &mv)
            }
            _ => Err(unknown(cd)),
        }
    }
}

pub fn install_steps(rollups: &mut [Rollup; 2]) {
    for r in rollups.iter_mut() {
        let id = r.id();
        r.deploy(addr("step", id), Arc::new(Step));
    }
}

/// Deploys the token pair and credits genesis balances.
pub fn install_tokens(rollups: &mut [Rollup; 2], balances: &[(RollupId, Address, u64)]) {
    for r in rollups.iter_mut() {
        let id = r.id();
        let token = addr("token", id);
        r.deploy(
            token.clone(),
            Arc::new(Token {
                other: addr("token", id.other()),
                operator: Some(addr("arb", id)),
            }),
        );
        let mut supply = 0u64;
        for (rid, holder, amount) in balances {
            if *rid == id {
                let cur = r.storage_u64(&token, &bal_slot(holder));
                r.set_storage(&token, &bal_slot(holder), (cur + amount).to_be_bytes().to_vec());
                supply += amount;
            }
        }
        r.set_storage(&token, SUPPLY_SLOT, supply.to_be_bytes().to_vec());
    }
}

/// Genesis of the flash-loan deployment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlashLoanSetup {
    /// Pool liquidity on rollup 1.
    pub pool: u64,
    /// Arbitrage stub liquidity on rollup 2.
    pub arb_liquidity: u64,
}

pub fn install_flash_loan(rollups: &mut [Rollup; 2], setup: &FlashLoanSetup) {
    install_tokens(
        rollups,
        &[
            (RollupId::R1, addr("fl", RollupId::R1), setup.pool),
            (RollupId::R2, addr("arb", RollupId::R2), setup.arb_liquidity),
        ],
    );
    for r in rollups.iter_mut() {
        let id = r.id();
        r.deploy(
            addr("fl", id),
            Arc::new(FlashLoan {
                token: addr("token", id),
                other: addr("fl", id.other()),
            }),
        );
        r.deploy(
            addr("userfl", id),
            Arc::new(UserFl {
                token: addr("token", id),
                fl: addr("fl", id),
                other: addr("userfl", id.other()),
            }),
        );
        r.deploy(addr("arb", id), Arc::new(Arbitrage { token: addr("token", id) }));
    }
}

/// Three-action DAG CRT for a loan of `amount` on rollup 1 with arbitrage
/// result `delta` on rollup 2. The balances before the loan are needed to
/// spell out the amounts carried by the triggered calls.
pub fn flash_loan_crt(user: &Address, amount: u64, delta: i64, pool_before: u64, user2_before: u64) -> DagCrt {
    let (r1, r2) = (RollupId::R1, RollupId::R2);
    let arb = Arg::Call(
        addr("arb", r2),
        Calldata::new("run", vec![Arg::Addr(addr("userfl", r2)), Arg::Int(delta)]),
    );
    let back = (user2_before as i128 + amount as i128 + delta as i128).max(0) as u64;
    let a1 = vec![ActionDesc {
        rollup: r1,
        addr: addr("userfl", r1),
        calldata: Calldata::new("simpleXFL", vec![Arg::Uint(amount), arb.clone()]),
    }];
    let a2 = vec![
        ActionDesc {
            rollup: r2,
            addr: addr("token", r2),
            calldata: token_mint(&addr("userfl", r2), amount),
        },
        ActionDesc {
            rollup: r2,
            addr: addr("userfl", r2),
            calldata: Calldata::new("step2", vec![Arg::Uint(amount), arb]),
        },
        ActionDesc {
            rollup: r2,
            addr: addr("fl", r2),
            calldata: Calldata::new(
                "react",
                vec![
                    Arg::Addr(addr("fl", r1)),
                    Arg::Addr(addr("userfl", r1)),
                    Arg::Uint(pool_before),
                ],
            ),
        },
    ];
    let a3 = vec![
        ActionDesc {
            rollup: r1,
            addr: addr("token", r1),
            calldata: token_mint(&addr("userfl", r1), back),
        },
        ActionDesc {
            rollup: r1,
            addr: addr("userfl", r1),
            calldata: Calldata::new("step3", vec![Arg::Uint(amount)]),
        },
        ActionDesc {
            rollup: r1,
            addr: addr("fl", r1),
            calldata: Calldata::new(
                "complete",
                vec![Arg::Addr(addr("userfl", r1)), Arg::Uint(pool_before)],
            ),
        },
    ];
    DagCrt {
        user: user.clone(),
        actions: vec![
            DagAction { descs: a1, descs_next: a2.clone() },
            DagAction { descs: a2, descs_next: a3.clone() },
            DagAction { descs: a3, descs_next: vec![] },
        ],
    }
}

/// Two-action burn/mint chain CRT moving `amount` from `from` on `src` to
/// `to` on the other rollup.
pub fn xtoken_crt(src: RollupId, from: &Address, to: &Address, amount: u64) -> ChainCrt {
    let mint = ActionDesc {
        rollup: src.other(),
        addr: addr("token", src.other()),
        calldata: token_mint(to, amount),
    };
    ChainCrt {
        user: from.clone(),
        actions: vec![
            ChainAction {
                desc: ActionDesc {
                    rollup: src,
                    addr: addr("token", src),
                    calldata: token_burn(to, amount),
                },
                desc_next: Some(mint.clone()),
            },
            ChainAction { desc: mint, desc_next: None },
        ],
    }
}

/// Alternating chain CRT of `len` step actions starting on `start`. Tags are
/// `tag_base + i`. With `fail_last` the final action reverts.
pub fn step_chain_crt(user: &Address, start: RollupId, len: usize, tag_base: u64, fail_last: bool) -> ChainCrt {
    let rollup_at = |i: usize| if i.is_multiple_of(2) { start } else { start.other() };
    let mut descs: Vec<ActionDesc> = Vec::with_capacity(len);
    for i in (0..len).rev() {
        let r = rollup_at(i);
        let tag = tag_base + i as u64;
        let calldata = if fail_last && i + 1 == len {
            Calldata::new("fail", vec![Arg::Uint(tag)])
        } else {
            step_exec(tag, descs.first().map(std::slice::from_ref).unwrap_or(&[]))
        };
        descs.insert(0, ActionDesc { rollup: r, addr: addr("step", r), calldata });
    }
    ChainCrt {
        user: user.clone(),
        actions: (0..len)
            .map(|i| ChainAction {
                desc: descs[i].clone(),
                desc_next: descs.get(i + 1).cloned(),
            })
            .collect(),
    }
}

/// DAG CRT of step sub-actions. `shape[i]` is the number of sub-actions of
/// action `i` (`shape[0]` must be 1). Each action's triggered list is split
/// into contiguous, possibly empty, groups, one per sub-action, at random
/// cut points.
pub fn step_dag_crt<R: Rng>(user: &Address, start: RollupId, shape: &[usize], tag_base: u64, rng: &mut R) -> DagCrt {
    assert!(!shape.is_empty() && shape[0] == 1, "source action must have one sub-action");
    assert!(shape.iter().all(|&k| k > 0), "every action needs a sub-action");
    let n = shape.len();
    let rollup_at = |i: usize| if i.is_multiple_of(2) { start } else { start.other() };
    let mut levels: Vec<Vec<ActionDesc>> = vec![Vec::new(); n];
    for i in (0..n).rev() {
        let r = rollup_at(i);
        let k = shape[i];
        let nexts: &[ActionDesc] = if i + 1 < n { &levels[i + 1] } else { &[] };
        let mut cuts: Vec<usize> = (0..k.saturating_sub(1)).map(|_| rng.gen_range(0..=nexts.len())).collect();
        cuts.sort_unstable();
        let mut bounds = vec![0];
        bounds.extend(cuts);
        bounds.push(nexts.len());
        levels[i] = (0..k)
            .map(|j| ActionDesc {
                rollup: r,
                addr: addr("step", r),
                calldata: step_exec(tag_base + (i * 10 + j) as u64, &nexts[bounds[j]..bounds[j + 1]]),
            })
            .collect();
    }
    DagCrt {
        user: user.clone(),
        actions: (0..n)
            .map(|i| DagAction {
                descs: levels[i].clone(),
                descs_next: levels.get(i + 1).cloned().unwrap_or_default(),
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gsc::GscVariant;
    use crate::model::{Crt, Tx};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pair(v: GscVariant) -> [Rollup; 2] {
        [Rollup::new(RollupId::R1, v), Rollup::new(RollupId::R2, v)]
    }

    #[test]
    fn address_suffix() {
        assert_eq!(rollup_of(&addr("token", RollupId::R2)), Some(RollupId::R2));
        assert_eq!(rollup_of(&Address::new("alice")), None);
    }

    #[test]
    fn transfer_and_overdraft() {
        let mut rs = pair(GscVariant::Dag);
        let alice = Address::new("alice");
        let bob = Address::new("bob");
        install_tokens(&mut rs, &[(RollupId::R1, alice.clone(), 100)]);
        let t = |amt| Tx::new(RollupId::R1, alice.clone(), addr("token", RollupId::R1), token_transfer(&bob, amt));
        assert!(rs[0].execute_tx(&t(30)).status.is_success());
        assert_eq!((balance_of(&rs[0], &alice), balance_of(&rs[0], &bob)), (70, 30));
        let d = rs[0].compute_digest();
        assert!(!rs[0].execute_tx(&t(71)).status.is_success());
        assert_eq!(rs[0].compute_digest(), d);
        assert_eq!(total_supply(&rs[0]), 100);
    }

    #[test]
    fn direct_mint_is_rejected() {
        let mut rs = pair(GscVariant::Dag);
        install_tokens(&mut rs, &[]);
        let tx = Tx::new(
            RollupId::R2,
            Address::new("mallory"),
            addr("token", RollupId::R2),
            token_mint(&Address::new("mallory"), 5),
        );
        assert!(!rs[1].execute_tx(&tx).status.is_success());
    }

    #[test]
    fn step_chain_is_valid() {
        for len in 2..=5 {
            let c = step_chain_crt(&Address::new("u"), RollupId::R1, len, 0, false);
            assert_eq!(Crt::Chain(c).validate(), Ok(()));
        }
    }

    #[test]
    fn step_dag_is_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let n = rng.gen_range(2..=4);
            let mut shape = vec![1];
            shape.extend((1..n).map(|_| rng.gen_range(1..=3)));
            let c = step_dag_crt(&Address::new("u"), RollupId::R2, &shape, 100, &mut rng);
            assert_eq!(Crt::Dag(c).validate(), Ok(()));
        }
    }

    #[test]
    fn flash_loan_crt_is_valid() {
        let c = flash_loan_crt(&Address::new("u"), 1000, 50, 5000, 0);
        assert_eq!(Crt::Dag(c).validate(), Ok(()));
    }
}
