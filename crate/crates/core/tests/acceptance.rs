//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero if
//! any criterion fails.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate_core::apps::{install_steps, step_chain_crt, step_dag_crt};
use crate_core::bridge::snapshot_with_proofs;
use crate_core::commitment::{hash_bytes, StateTrie};
use crate_core::executor::{Executor, JointOutcome, Strategy, WorkItem, World};
use crate_core::gsc::GscVariant;
use crate_core::l1vsm::{L1Network, VsmStatus};
use crate_core::model::{Address, Crt, RollupId};
use crate_core::oracle::{brute_force_characterize, dag_constructions, Construction};
use crate_core::scenario::{fuzz_scenario, load_scenario, run_scenario, ScenarioReport};

const FUZZ_SCENARIOS: u64 = 500;
const LIVENESS_BUDGET: u64 = 8;

struct Verdict {
    ok: bool,
    detail: String,
}

fn verdict(ok: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        ok,
        detail: detail.into(),
    }
}

fn scenario(name: &str) -> ScenarioReport {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "scenarios", &format!("{name}.toml")]
        .iter()
        .collect();
    let sc = load_scenario(&path).unwrap_or_else(|e| panic!("{e}"));
    run_scenario(&sc, None).unwrap_or_else(|e| panic!("{e}"))
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed())
}

fn world(v: GscVariant) -> World {
    let mut w = World::new(v);
    install_steps(w.rollups_mut());
    w
}

fn user() -> Address {
    Address::new("alice")
}

fn start_of(rng: &mut ChaCha8Rng) -> RollupId {
    if rng.gen_bool(0.5) {
        RollupId::R1
    } else {
        RollupId::R2
    }
}

fn c1_attack_reproduction() -> Verdict {
    let (rep, t) = timed(|| scenario("fig2_attack_svs"));
    let b = &rep.batches[0];
    let atom = b.items[0].atom_exec;
    let ok = b.strategy_applied && b.roots_match && !atom && rep.passed() && t < Duration::from_secs(1);
    verdict(
        ok,
        format!("roots match crosswise: {}, AtomExec: {atom}, {t:.2?}", b.roots_match),
    )
}

fn c2_defense() -> Verdict {
    let (rep, t) = timed(|| scenario("fig2_attack_crate"));
    let b = &rep.batches[0];
    let reverted = b.items.iter().any(|i| !i.ok);
    let ended = b.two_pc.outcome == JointOutcome::Aborted || reverted;
    let safe = !b.safety_violation();
    verdict(
        b.strategy_applied && ended && safe && t < Duration::from_secs(1),
        format!("outcome {}, off-chain revert: {reverted}, accepted AtomExec holds: {safe}, {t:.2?}", b.two_pc.outcome.name()),
    )
}

fn c3_all_or_nothing() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut crts: Vec<Crt> = Vec::new();
    for len in 2..=5 {
        for start in RollupId::ALL {
            crts.push(Crt::Chain(step_chain_crt(&user(), start, len, 0, false)));
        }
    }
    for k in 0..50u64 {
        let len = rng.gen_range(2..=5);
        crts.push(Crt::Chain(step_chain_crt(&user(), start_of(&mut rng), len, 1000 * (k + 1), false)));
    }
    let (mut cases, mut diverged) = (0, 0);
    for crt in &crts {
        for i in 0..crt.len() {
            let mut e = Executor::new(world(GscVariant::Chain));
            let p = e
                .run_batch(&[WorkItem::Crt { crt: crt.clone() }], &Strategy::DropAction(i))
                .expect("batch runs");
            assert!(p.strategy_applied);
            let g1 = e.world().rollup(RollupId::R1).gsc();
            let g2 = e.world().rollup(RollupId::R2).gsc();
            let matching = g1.trig_tree.root() == g2.act_tree.root() && g2.trig_tree.root() == g1.act_tree.root();
            cases += 1;
            diverged += usize::from(!matching);
        }
    }
    verdict(diverged == cases, format!("{diverged}/{cases} drops diverge ({} CRTs)", crts.len()))
}

fn characterization(variant: GscVariant) -> (bool, String, Duration) {
    let t = Instant::now();
    let mut ok = true;
    let mut counts = Vec::new();
    let mut runs = 0;
    for n in 2..=5 {
        for start in RollupId::ALL {
            let crt = Crt::Chain(step_chain_crt(&user(), start, n, 0, false));
            let rep = brute_force_characterize(&world(variant), &crt).expect("within bounds");
            runs += rep.runs.len();
            let (got, want) = match variant {
                GscVariant::Svs => (rep.passing_root_check(), rep.honest_and_reversed()),
                _ => (rep.passing_all(), [rep.honest.clone()].into_iter().collect()),
            };
            ok &= got == want && (variant == GscVariant::Svs || rep.checks_imply_atomicity());
            counts.push(format!("n={n}/r{}:{}", start.number(), got.len()));
        }
    }
    (ok, format!("{} ({runs} runs)", counts.join(" ")), t.elapsed())
}

fn c4_baseline_orders() -> Verdict {
    let (ok, detail, t) = characterization(GscVariant::Svs);
    verdict(ok && t < Duration::from_secs(10), format!("passing = {{honest, reversed}}: {detail}, {t:.2?}"))
}

fn c5_session_orders() -> Verdict {
    let (ok, detail, t) = characterization(GscVariant::Chain);
    verdict(ok && t < Duration::from_secs(10), format!("passing = {{honest}}: {detail}, {t:.2?}"))
}

fn shapes() -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for len in 2..=4usize {
        let tail = len - 1;
        for code in 0..3usize.pow(tail as u32) {
            let mut shape = vec![1];
            let mut c = code;
            for _ in 0..tail {
                shape.push(c % 3 + 1);
                c /= 3;
            }
            out.push(shape);
        }
    }
    out
}

fn c6_dag_membership() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut honest, mut partition, mut mixed, mut extra, mut bad) = (0, 0, 0, 0, 0);
    let mut instances = 0;
    for shape in shapes() {
        for start in RollupId::ALL {
            for _ in 0..3 {
                let crt = step_dag_crt(&user(), start, &shape, 0, &mut rng);
                let results = dag_constructions(&world(GscVariant::Dag), &crt).expect("constructions run");
                instances += 1;
                for r in results {
                    let broken = |k: usize| !r.membership[k];
                    let fine = match r.construction {
                        Construction::Honest => {
                            honest += 1;
                            r.membership.iter().all(|m| *m) && r.atom_exec
                        }
                        Construction::Partition { action, .. } => {
                            partition += 1;
                            broken(action)
                        }
                        Construction::MixedNonces { action, .. } => {
                            mixed += 1;
                            broken(action)
                        }
                        Construction::ExtraSubAction { action, .. } => {
                            extra += 1;
                            broken(action)
                        }
                    };
                    bad += usize::from(!fine);
                }
            }
        }
    }
    verdict(
        bad == 0 && partition > 0 && mixed > 0 && extra > 0,
        format!(
            "{instances} CRTs: honest {honest}, partitioned {partition}, mixed nonces {mixed}, extra sub-action {extra}, unexpected {bad}"
        ),
    )
}

fn c7_latency() -> Verdict {
    let honest = scenario("honest_chain");
    let local = scenario("local_only");
    let h = &honest.metrics.instances[0];
    let l = &local.metrics.instances[0];
    let ok = h.outcome == "committed" && h.rounds == 4 && l.outcome == "local_accepted" && l.rounds == 1;
    verdict(ok, format!("non-local commit {} rounds, local accept {} round(s)", h.rounds, l.rounds))
}

struct FuzzStats {
    instances: usize,
    committed: usize,
    aborted: usize,
    local: usize,
    over_budget: usize,
    deadlocks: usize,
    violations: usize,
    max_after_precommit: u64,
    errors: usize,
    elapsed: Duration,
}

fn fuzz() -> FuzzStats {
    let t = Instant::now();
    let mut s = FuzzStats {
        instances: 0,
        committed: 0,
        aborted: 0,
        local: 0,
        over_budget: 0,
        deadlocks: 0,
        violations: 0,
        max_after_precommit: 0,
        errors: 0,
        elapsed: Duration::ZERO,
    };
    for seed in 0..FUZZ_SCENARIOS {
        let rep = match run_scenario(&fuzz_scenario(seed), None) {
            Ok(r) => r,
            Err(_) => {
                s.errors += 1;
                continue;
            }
        };
        for b in &rep.batches {
            s.instances += 1;
            match b.two_pc.outcome {
                JointOutcome::Committed => s.committed += 1,
                JointOutcome::Aborted => s.aborted += 1,
                JointOutcome::LocalAccepted => s.local += 1,
                JointOutcome::Stuck | JointOutcome::Inconsistent => s.deadlocks += 1,
            }
            s.deadlocks += usize::from(!b.settled);
            s.max_after_precommit = s.max_after_precommit.max(b.two_pc.rounds_after_precommit);
            s.over_budget += usize::from(b.two_pc.rounds_after_precommit > LIVENESS_BUDGET);
            s.violations += usize::from(b.safety_violation());
        }
    }
    s.elapsed = t.elapsed();
    s
}

fn c8_liveness(s: &FuzzStats) -> Verdict {
    verdict(
        s.errors == 0 && s.deadlocks == 0 && s.over_budget == 0 && s.elapsed < Duration::from_secs(60),
        format!(
            "{FUZZ_SCENARIOS} scenarios, {} instances: {} committed, {} aborted, {} local; deadlocks {}, max rounds after pre-commit {}, {:.2?}",
            s.instances, s.committed, s.aborted, s.local, s.deadlocks, s.max_after_precommit, s.elapsed
        ),
    )
}

fn c9_safety(s: &FuzzStats) -> Verdict {
    verdict(
        s.errors == 0 && s.violations == 0,
        format!("{} accepted instances violating AtomExec out of {}", s.violations, s.instances),
    )
}

fn c10_flash_loan() -> Verdict {
    let (good, t1) = timed(|| scenario("flash_loan_success"));
    let (bad, t2) = timed(|| scenario("flash_loan_fail"));
    let supply = |r: &ScenarioReport| r.passed();
    let restored = bad.final_digests == bad.genesis;
    let ok = supply(&good)
        && good.batches[0].two_pc.outcome == JointOutcome::Committed
        && supply(&bad)
        && restored
        && t1 < Duration::from_secs(1)
        && t2 < Duration::from_secs(1);
    verdict(
        ok,
        format!(
            "success: {} ({t1:.2?}); failing repay restores both digests: {restored} ({t2:.2?})",
            good.batches[0].two_pc.outcome.name()
        ),
    )
}

fn c11_commitment_soundness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut false_accepts = 0;
    let trials = 1000;
    for _ in 0..trials {
        let n = rng.gen_range(1..40);
        let mut trie = StateTrie::new();
        for i in 0..n {
            trie.set(format!("k{i}").into_bytes(), rng.gen::<[u8; 8]>().to_vec());
        }
        let key = format!("k{}", rng.gen_range(0..n)).into_bytes();
        let root = trie.root();
        let honest = trie.prove(&key).unwrap();
        assert!(honest.verify(&root));
        let mut p = honest.clone();
        match rng.gen_range(0..6) {
            0 => {
                let i = rng.gen_range(0..p.key.len());
                p.key[i] ^= 1 << rng.gen_range(0..8);
            }
            1 => {
                let i = rng.gen_range(0..p.value.len());
                p.value[i] ^= 1 << rng.gen_range(0..8);
            }
            2 => p.index = (p.index + rng.gen_range(1..=p.leaf_count as u64 + 1)) % (p.leaf_count as u64 + 2),
            3 => p.leaf_count += rng.gen_range(1..4),
            4 if !p.siblings.is_empty() => {
                let i = rng.gen_range(0..p.siblings.len());
                p.siblings[i].0[rng.gen_range(0..32)] ^= 1 << rng.gen_range(0..8);
            }
            _ => p.siblings.push(hash_bytes(&rng.gen::<[u8; 8]>())),
        }
        if p != honest && p.verify(&root) {
            false_accepts += 1;
        }
    }
    // Bridge snapshots: forge one claimed attribute of a proven VSM snapshot.
    let mut e = Executor::new(world(GscVariant::Chain));
    let mut net = L1Network::new(e.world().digests(), 1);
    let crt = Crt::Chain(step_chain_crt(&user(), RollupId::R1, 3, 0, false));
    let p = e.run_batch(&[WorkItem::Crt { crt }], &Strategy::Honest).unwrap();
    let _ = e.drive_2pc(&mut net, &p);
    let last = net.latest_final_round().unwrap();
    let mut bridge_false = 0;
    for _ in 0..trials {
        let round = rng.gen_range(0..=last);
        let (honest, proofs) = snapshot_with_proofs(net.chain(RollupId::R2), round, None).unwrap();
        let view = net.bridge_for(RollupId::R1);
        assert!(view.ver_attributes(&honest, &proofs).is_ok());
        let mut s = honest.clone();
        let mut pr = proofs.clone();
        match rng.gen_range(0..7) {
            0 => {
                s.status = match s.status {
                    VsmStatus::Free => VsmStatus::Paired,
                    VsmStatus::Paired => VsmStatus::Free,
                }
            }
            1 => s.digest.0[rng.gen_range(0..32)] ^= 1,
            2 => s.trig_root.0[rng.gen_range(0..32)] ^= 1,
            3 => s.act_root.0[rng.gen_range(0..32)] ^= 1,
            4 => s.session_nonce += rng.gen_range(1..5),
            5 => s.entry_nonce += rng.gen_range(1..5),
            _ => {
                let i = rng.gen_range(0..pr.proofs.len());
                pr.proofs[i].value.push(0);
            }
        }
        if (s != honest || pr != proofs) && view.ver_attributes(&s, &pr).is_ok() {
            bridge_false += 1;
        }
    }
    verdict(
        false_accepts == 0 && bridge_false == 0,
        format!("{trials} proof mutations: {false_accepts} accepted; {trials} snapshot forgeries: {bridge_false} accepted"),
    )
}

fn main() {
    let mut all_ok = true;
    let mut report = |n: u32, name: &str, v: Verdict| {
        all_ok &= v.ok;
        println!("{} criterion {n:>2} {name}: {}", if v.ok { "PASS" } else { "FAIL" }, v.detail);
    };
    report(1, "attack reproduction", c1_attack_reproduction());
    report(2, "defense", c2_defense());
    report(3, "all-or-nothing", c3_all_or_nothing());
    report(4, "baseline order characterization", c4_baseline_orders());
    report(5, "session order characterization", c5_session_orders());
    report(6, "DAG sub-action membership", c6_dag_membership());
    report(7, "latency", c7_latency());
    let stats = fuzz();
    report(8, "liveness fuzz", c8_liveness(&stats));
    report(9, "safety fuzz", c9_safety(&stats));
    report(10, "flash loan", c10_flash_loan());
    report(11, "commitment soundness", c11_commitment_soundness());
    if !all_ok {
        std::process::exit(1);
    }
}
