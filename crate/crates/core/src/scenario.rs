//! Declarative scenarios: world setup, a list of batches with their
//! strategies, and the expected outcomes. A scenario runs the whole
//! pipeline (execution, two-phase commit, settlement, oracle verdicts) and
//! reports every expectation it failed.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::apps::{self, FlashLoanSetup};
use crate::commitment::Digest;
use crate::executor::{Executor, JointOutcome, PendingBatch, Strategy, TwoPcReport, WorkItem, World};
use crate::gsc::GscVariant;
use crate::l1vsm::L1Network;
use crate::model::{Address, Crt, RollupId, Tx};
use crate::oracle::{atom_exec, RollupView};
use crate::rollup::Store;
use crate::trace::{emit_metrics, Metrics, Trace, TraceEvent};

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    pub name: String,
    pub gsc: GscVariant,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_delay")]
    pub bridge_delay: u64,
    #[serde(default)]
    pub apps: AppsSpec,
    #[serde(rename = "batch", default)]
    pub batches: Vec<BatchSpec>,
    #[serde(default)]
    pub expect: FinalExpect,
}

fn default_delay() -> u64 {
    1
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppsSpec {
    #[serde(default = "yes")]
    pub steps: bool,
    #[serde(default)]
    pub tokens: Vec<Balance>,
    #[serde(default)]
    pub flash_loan: Option<FlashLoanSpec>,
}

impl Default for AppsSpec {
    fn default() -> Self {
        AppsSpec {
            steps: true,
            tokens: Vec::new(),
            flash_loan: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Balance {
    pub rollup: RollupId,
    pub holder: String,
    pub amount: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlashLoanSpec {
    pub pool: u64,
    pub arb_liquidity: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchSpec {
    #[serde(default = "honest")]
    pub strategy: Strategy,
    /// Let a strategy that fits no CRT fall back to honest execution.
    #[serde(default)]
    pub allow_inapplicable: bool,
    #[serde(default)]
    pub work: Vec<WorkSpec>,
    #[serde(default)]
    pub expect: BatchExpect,
}

fn honest() -> Strategy {
    Strategy::Honest
}

fn alice() -> String {
    "alice".into()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WorkSpec {
    /// Alternating chain CRT of step actions.
    StepChain {
        start: RollupId,
        len: usize,
        #[serde(default)]
        fail_last: bool,
        #[serde(default = "alice")]
        user: String,
    },
    /// DAG CRT of step sub-actions; `shape[i]` sub-actions in action `i`.
    StepDag {
        start: RollupId,
        shape: Vec<usize>,
        #[serde(default = "alice")]
        user: String,
    },
    /// Local step call.
    Step {
        rollup: RollupId,
        #[serde(default = "alice")]
        user: String,
    },
    Xtoken {
        src: RollupId,
        from: String,
        to: String,
        amount: u64,
    },
    Transfer {
        rollup: RollupId,
        from: String,
        to: String,
        amount: u64,
    },
    FlashLoan {
        amount: u64,
        delta: i64,
        #[serde(default = "alice")]
        user: String,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchExpect {
    pub outcome: Option<JointOutcome>,
    /// Trigger and action roots match crosswise after execution.
    pub roots_match: Option<bool>,
    /// Oracle verdict over the executed batch, for every CRT.
    pub atom_exec: Option<bool>,
    /// Oracle verdict over what was accepted, for every CRT.
    pub accepted_atom_exec: Option<bool>,
    pub rounds: Option<u64>,
    pub items_ok: Option<Vec<bool>>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinalExpect {
    pub supply_conserved: Option<bool>,
    pub flash_loan_idle: Option<bool>,
    /// Both rollup digests equal their genesis values.
    pub digests_unchanged: Option<bool>,
    #[serde(default)]
    pub balances: Vec<Balance>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("configuration: {0}")]
    Config(String),
}

pub fn parse_scenario(text: &str, path: &str) -> Result<Scenario, ScenarioError> {
    let sc: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse {
        path: path.to_owned(),
        msg: e.to_string(),
    })?;
    if sc.version != SCENARIO_VERSION {
        return Err(ScenarioError::Parse {
            path: path.to_owned(),
            msg: format!("unsupported version {} (expected {SCENARIO_VERSION})", sc.version),
        });
    }
    Ok(sc)
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Parse {
        path: shown.clone(),
        msg: e.to_string(),
    })?;
    parse_scenario(&text, &shown)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemVerdict {
    pub item: usize,
    pub is_crt: bool,
    pub ok: bool,
    pub atom_exec: bool,
    pub accepted_atom_exec: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchReport {
    pub batch: u64,
    pub strategy: Strategy,
    pub strategy_applied: bool,
    pub roots_match: bool,
    pub two_pc: TwoPcReport,
    pub items: Vec<ItemVerdict>,
    /// Rollup digests equal the VSM digests after settlement.
    pub settled: bool,
}

impl BatchReport {
    /// Accepted state contains a non-atomic CRT execution.
    pub fn safety_violation(&self) -> bool {
        self.items.iter().any(|i| i.is_crt && !i.accepted_atom_exec)
    }
}

#[derive(Clone, Debug)]
pub struct ScenarioReport {
    pub name: String,
    pub seed: u64,
    pub batches: Vec<BatchReport>,
    pub genesis: [Digest; 2],
    pub final_digests: [Digest; 2],
    pub failures: Vec<String>,
    pub trace: Trace,
    pub metrics: Metrics,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn build_world(sc: &Scenario) -> Result<World, ScenarioError> {
    let mut w = World::new(sc.gsc);
    let rollups = w.rollups_mut();
    if sc.apps.steps {
        apps::install_steps(rollups);
    }
    match (&sc.apps.flash_loan, sc.apps.tokens.is_empty()) {
        (Some(_), false) => {
            return Err(ScenarioError::Config(
                "flash_loan installs its own tokens; drop apps.tokens".into(),
            ))
        }
        (Some(f), true) => apps::install_flash_loan(
            rollups,
            &FlashLoanSetup {
                pool: f.pool,
                arb_liquidity: f.arb_liquidity,
            },
        ),
        (None, false) => {
            let balances: Vec<_> = sc
                .apps
                .tokens
                .iter()
                .map(|b| (b.rollup, Address::new(b.holder.clone()), b.amount))
                .collect();
            apps::install_tokens(rollups, &balances);
        }
        (None, true) => {}
    }
    Ok(w)
}

fn require_contract(w: &World, r: RollupId, name: &str) -> Result<(), ScenarioError> {
    if w.rollup(r).has_contract(&apps::addr(name, r)) {
        Ok(())
    } else {
        Err(ScenarioError::Config(format!("no {name} contract deployed on {r}")))
    }
}

/// Turns a work spec into a work item against the current state.
fn build_item(w: &World, spec: &WorkSpec, tag_base: u64, rng: &mut ChaCha8Rng) -> Result<WorkItem, ScenarioError> {
    let bad = |m: String| ScenarioError::Config(m);
    Ok(match spec {
        WorkSpec::StepChain {
            start,
            len,
            fail_last,
            user,
        } => {
            require_contract(w, *start, "step")?;
            if *len < 2 {
                return Err(bad(format!("step_chain needs len >= 2, got {len}")));
            }
            WorkItem::Crt {
                crt: Crt::Chain(apps::step_chain_crt(&Address::new(user.clone()), *start, *len, tag_base, *fail_last)),
            }
        }
        WorkSpec::StepDag { start, shape, user } => {
            require_contract(w, *start, "step")?;
            if shape.len() < 2 || shape[0] != 1 || shape.contains(&0) {
                return Err(bad(format!("step_dag shape {shape:?}: need >= 2 actions, one source sub-action")));
            }
            WorkItem::Crt {
                crt: Crt::Dag(apps::step_dag_crt(&Address::new(user.clone()), *start, shape, tag_base, rng)),
            }
        }
        WorkSpec::Step { rollup, user } => {
            require_contract(w, *rollup, "step")?;
            WorkItem::Local {
                tx: Tx::new(
                    *rollup,
                    Address::new(user.clone()),
                    apps::addr("step", *rollup),
                    apps::step_exec(tag_base, &[]),
                ),
            }
        }
        WorkSpec::Xtoken { src, from, to, amount } => {
            require_contract(w, *src, "token")?;
            WorkItem::Crt {
                crt: Crt::Chain(apps::xtoken_crt(*src, &Address::new(from.clone()), &Address::new(to.clone()), *amount)),
            }
        }
        WorkSpec::Transfer {
            rollup,
            from,
            to,
            amount,
        } => {
            require_contract(w, *rollup, "token")?;
            WorkItem::Local {
                tx: Tx::new(
                    *rollup,
                    Address::new(from.clone()),
                    apps::addr("token", *rollup),
                    apps::token_transfer(&Address::new(to.clone()), *amount),
                ),
            }
        }
        WorkSpec::FlashLoan { amount, delta, user } => {
            require_contract(w, RollupId::R1, "fl")?;
            let r1 = w.rollup(RollupId::R1);
            let r2 = w.rollup(RollupId::R2);
            let pool = apps::balance_of(r1, &apps::addr("fl", RollupId::R1));
            let user2 = apps::balance_of(r2, &apps::addr("userfl", RollupId::R2));
            WorkItem::Crt {
                crt: Crt::Dag(apps::flash_loan_crt(&Address::new(user.clone()), *amount, *delta, pool, user2)),
            }
        }
    })
}

fn crosswise_roots(w: &World) -> bool {
    let g1 = w.rollup(RollupId::R1).gsc();
    let g2 = w.rollup(RollupId::R2).gsc();
    g1.trig_tree.root() == g2.act_tree.root() && g2.trig_tree.root() == g1.act_tree.root()
}

fn supply_sum(w: &World) -> u64 {
    RollupId::ALL.iter().map(|r| apps::total_supply(w.rollup(*r))).sum()
}

fn verdicts(p: &PendingBatch, rep: &TwoPcReport) -> Vec<ItemVerdict> {
    let pre: [&Store; 2] = [p.pre[0].store(), p.pre[1].store()];
    let executed = |i: usize| RollupView {
        pre: pre[i],
        post: p.post_digests[i],
        entries: &p.entries[i],
    };
    let accepted = |i: usize| {
        if rep.per_vsm[i].accepted() {
            executed(i)
        } else {
            RollupView {
                pre: pre[i],
                post: p.pre_digests[i],
                entries: &[],
            }
        }
    };
    p.items
        .iter()
        .map(|run| match &run.work {
            WorkItem::Crt { crt } => ItemVerdict {
                item: run.item,
                is_crt: true,
                ok: run.ok,
                atom_exec: atom_exec(crt, [executed(0), executed(1)]),
                accepted_atom_exec: atom_exec(crt, [accepted(0), accepted(1)]),
            },
            WorkItem::Local { .. } => ItemVerdict {
                item: run.item,
                is_crt: false,
                ok: run.ok,
                atom_exec: true,
                accepted_atom_exec: true,
            },
        })
        .collect()
}

fn check<T: PartialEq + std::fmt::Debug>(failures: &mut Vec<String>, what: String, want: Option<T>, got: T) {
    if let Some(w) = want {
        if w != got {
            failures.push(format!("{what}: expected {w:?}, got {got:?}"));
        }
    }
}

/// Runs a scenario end to end. `seed` overrides the scenario's seed.
pub fn run_scenario(sc: &Scenario, seed: Option<u64>) -> Result<ScenarioReport, ScenarioError> {
    let seed = seed.unwrap_or(sc.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let world = build_world(sc)?;
    let genesis = world.digests();
    let genesis_supply = supply_sum(&world);
    let mut exec = Executor::new(world);
    let mut net = L1Network::new(genesis, sc.bridge_delay);
    exec.trace_mut().set_round(net.round());
    let mut failures = Vec::new();
    let mut batches = Vec::new();
    let mut tag_base = 1000;
    for (bi, spec) in sc.batches.iter().enumerate() {
        let mut items = Vec::with_capacity(spec.work.len());
        for w in &spec.work {
            items.push(build_item(exec.world(), w, tag_base, &mut rng)?);
            tag_base += 1000;
        }
        let p = exec
            .run_batch(&items, &spec.strategy)
            .map_err(|e| ScenarioError::Config(format!("batch {bi}: {e}")))?;
        if !p.strategy_applied && !spec.allow_inapplicable {
            return Err(ScenarioError::Config(format!(
                "batch {bi}: strategy {} applies to no CRT of the batch",
                spec.strategy
            )));
        }
        let roots_match = crosswise_roots(exec.world());
        let rep = exec.drive_2pc(&mut net, &p);
        let settled = exec.settle(&net, &p, &rep) == [true, true];
        let items = verdicts(&p, &rep);
        for v in items.iter().filter(|v| v.is_crt) {
            exec.trace_mut().push(TraceEvent::OracleVerdict {
                batch: p.id,
                item: v.item,
                atom_exec: v.atom_exec,
                accepted_atom_exec: v.accepted_atom_exec,
                roots_match,
            });
        }
        let e = &spec.expect;
        let crts: Vec<&ItemVerdict> = items.iter().filter(|v| v.is_crt).collect();
        check(&mut failures, format!("batch {bi} outcome"), e.outcome, rep.outcome);
        check(&mut failures, format!("batch {bi} roots_match"), e.roots_match, roots_match);
        check(&mut failures, format!("batch {bi} rounds"), e.rounds, rep.rounds);
        check(
            &mut failures,
            format!("batch {bi} items_ok"),
            e.items_ok.clone(),
            items.iter().map(|v| v.ok).collect::<Vec<_>>(),
        );
        if let Some(want) = e.atom_exec {
            if let Some(v) = crts.iter().find(|v| v.atom_exec != want) {
                failures.push(format!("batch {bi} item {} atom_exec: expected {want}, got {}", v.item, v.atom_exec));
            }
        }
        if let Some(want) = e.accepted_atom_exec {
            if let Some(v) = crts.iter().find(|v| v.accepted_atom_exec != want) {
                failures.push(format!(
                    "batch {bi} item {} accepted_atom_exec: expected {want}, got {}",
                    v.item, v.accepted_atom_exec
                ));
            }
        }
        if !settled {
            failures.push(format!("batch {bi}: rollup digests disagree with the VSMs after settlement"));
        }
        batches.push(BatchReport {
            batch: p.id,
            strategy: spec.strategy.clone(),
            strategy_applied: p.strategy_applied,
            roots_match,
            two_pc: rep,
            items,
            settled,
        });
    }
    let w = exec.world();
    let final_digests = w.digests();
    let fe = &sc.expect;
    check(&mut failures, "supply_conserved".into(), fe.supply_conserved, supply_sum(w) == genesis_supply);
    check(
        &mut failures,
        "flash_loan_idle".into(),
        fe.flash_loan_idle,
        RollupId::ALL.iter().all(|r| !apps::is_busy(w.rollup(*r))),
    );
    check(&mut failures, "digests_unchanged".into(), fe.digests_unchanged, final_digests == genesis);
    for b in &fe.balances {
        let got = apps::balance_of(w.rollup(b.rollup), &Address::new(b.holder.clone()));
        check(&mut failures, format!("balance of {} on {}", b.holder, b.rollup), Some(b.amount), got);
    }
    let trace = exec.into_trace();
    let metrics = emit_metrics(trace.records());
    Ok(ScenarioReport {
        name: sc.name.clone(),
        seed,
        batches,
        genesis,
        final_digests,
        failures,
        trace,
        metrics,
    })
}

/// Random adversarial scenario over the session-based GSCs: one to three
/// batches, each with a random strategy and a few CRTs and local calls.
pub fn fuzz_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gsc = if rng.gen_bool(0.5) { GscVariant::Chain } else { GscVariant::Dag };
    let start = |rng: &mut ChaCha8Rng| if rng.gen_bool(0.5) { RollupId::R1 } else { RollupId::R2 };
    let batches = (0..rng.gen_range(1..=3))
        .map(|_| {
            let strategy = Strategy::all(rng.gen_range(0..4))[rng.gen_range(0..7)].clone();
            let work = (0..rng.gen_range(1..=3))
                .map(|_| match rng.gen_range(0..10) {
                    0..=4 => WorkSpec::StepChain {
                        start: start(&mut rng),
                        len: rng.gen_range(2..=5),
                        fail_last: rng.gen_bool(0.1),
                        user: alice(),
                    },
                    5..=7 if gsc == GscVariant::Dag => {
                        let len = rng.gen_range(2..=4);
                        let mut shape = vec![1];
                        shape.extend((1..len).map(|_| rng.gen_range(1..=3)));
                        WorkSpec::StepDag {
                            start: start(&mut rng),
                            shape,
                            user: alice(),
                        }
                    }
                    _ => WorkSpec::Step {
                        rollup: start(&mut rng),
                        user: alice(),
                    },
                })
                .collect();
            BatchSpec {
                strategy,
                allow_inapplicable: true,
                work,
                expect: BatchExpect::default(),
            }
        })
        .collect();
    Scenario {
        version: SCENARIO_VERSION,
        name: format!("fuzz-{seed}"),
        gsc,
        seed,
        bridge_delay: 1,
        apps: AppsSpec::default(),
        batches,
        expect: FinalExpect::default(),
    }
}
