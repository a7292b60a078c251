//! Structured run trace (one JSON object per line) and the metrics derived
//! from it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::commitment::Digest;
use crate::gsc::TreeKind;
use crate::model::{Address, RollupId};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    BatchStart {
        batch: u64,
        strategy: String,
    },
    StrategyApplied {
        batch: u64,
        item: usize,
        detail: String,
    },
    TxExecuted {
        rollup: RollupId,
        position: usize,
        from: Address,
        to: Address,
        selector: String,
        ok: bool,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        reason: Option<String>,
        triggers: usize,
    },
    TreeInsert {
        rollup: RollupId,
        tree: TreeKind,
        nonce: u64,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        sid: Option<u64>,
        leaf: Digest,
    },
    Assertion {
        rollup: RollupId,
        reason: String,
    },
    ItemResult {
        batch: u64,
        item: usize,
        ok: bool,
    },
    BatchSealed {
        batch: u64,
        rollup: RollupId,
        txs: usize,
        inserts: usize,
        pre_digest: Digest,
        post_digest: Digest,
        local: bool,
    },
    BridgeRelay {
        dest: RollupId,
        source: RollupId,
        header_round: u64,
        header: Digest,
    },
    VsmCall {
        batch: u64,
        chain: RollupId,
        op: String,
        ok: bool,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        result: Option<String>,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        error: Option<String>,
        local_proofs: usize,
        bridge_proofs: usize,
    },
    RoundEnd {
        headers: [Digest; 2],
    },
    TwoPcResult {
        batch: u64,
        outcome: String,
        r1: String,
        r2: String,
        rounds: u64,
        rounds_after_precommit: u64,
    },
    Settled {
        batch: u64,
        rollup: RollupId,
        accepted: bool,
        digest: Digest,
    },
    OracleVerdict {
        batch: u64,
        item: usize,
        /// Over the batch as executed.
        atom_exec: bool,
        /// Over what the VSMs accepted.
        accepted_atom_exec: bool,
        roots_match: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub seq: u64,
    pub round: u64,
    #[serde(flatten)]
    pub event: TraceEvent,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    records: Vec<TraceRecord>,
    round: u64,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_round(&mut self, round: u64) {
        self.round = round;
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn push(&mut self, event: TraceEvent) {
        self.records.push(TraceRecord {
            seq: self.records.len() as u64,
            round: self.round,
            event,
        });
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn truncate(&mut self, len: usize) {
        self.records.truncate(len);
    }

    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("trace records serialize"));
            out.push('\n');
        }
        out
    }
}

/// Per-2PC-instance figures.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceMetrics {
    pub batch: u64,
    pub outcome: String,
    pub rounds: u64,
    pub rounds_after_precommit: u64,
    /// Membership proofs checked by VSM calls, keyed by L1 round.
    pub proofs_per_round: BTreeMap<u64, usize>,
    /// Tree insertions in the batch, per rollup.
    pub tree_inserts: [usize; 2],
    pub txs: [usize; 2],
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    pub instances: Vec<InstanceMetrics>,
}

impl Metrics {
    pub fn total_rounds(&self) -> u64 {
        self.instances.iter().map(|i| i.rounds).sum()
    }
}

pub fn emit_metrics(records: &[TraceRecord]) -> Metrics {
    let mut by_batch: BTreeMap<u64, InstanceMetrics> = BTreeMap::new();
    for r in records {
        match &r.event {
            TraceEvent::BatchSealed {
                batch, rollup, txs, inserts, ..
            } => {
                let m = slot(&mut by_batch, *batch);
                m.txs[rollup.index()] = *txs;
                m.tree_inserts[rollup.index()] = *inserts;
            }
            TraceEvent::VsmCall {
                batch,
                local_proofs,
                bridge_proofs,
                ok: true,
                ..
            } => {
                let m = slot(&mut by_batch, *batch);
                *m.proofs_per_round.entry(r.round).or_default() += local_proofs + bridge_proofs;
            }
            TraceEvent::TwoPcResult {
                batch,
                outcome,
                rounds,
                rounds_after_precommit,
                ..
            } => {
                let m = slot(&mut by_batch, *batch);
                m.outcome = outcome.clone();
                m.rounds = *rounds;
                m.rounds_after_precommit = *rounds_after_precommit;
            }
            _ => {}
        }
    }
    Metrics {
        instances: by_batch.into_values().collect(),
    }
}

fn slot(m: &mut BTreeMap<u64, InstanceMetrics>, batch: u64) -> &mut InstanceMetrics {
    m.entry(batch).or_insert_with(|| InstanceMetrics {
        batch,
        ..Default::default()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ndjson_one_line_per_record() {
        let mut t = Trace::new();
        t.set_round(3);
        t.push(TraceEvent::Assertion {
            rollup: RollupId::R1,
            reason: "x".into(),
        });
        t.push(TraceEvent::RoundEnd {
            headers: [Digest::default(); 2],
        });
        let s = t.to_ndjson();
        assert_eq!(s.lines().count(), 2);
        let first: TraceRecord = serde_json::from_str(s.lines().next().unwrap()).unwrap();
        assert_eq!((first.seq, first.round), (0, 3));
    }

    #[test]
    fn metrics_group_by_batch() {
        let mut t = Trace::new();
        t.set_round(1);
        t.push(TraceEvent::VsmCall {
            batch: 0,
            chain: RollupId::R1,
            op: "update_digest".into(),
            ok: true,
            result: None,
            error: None,
            local_proofs: 6,
            bridge_proofs: 8,
        });
        t.push(TraceEvent::TwoPcResult {
            batch: 0,
            outcome: "committed".into(),
            r1: "committed".into(),
            r2: "committed".into(),
            rounds: 4,
            rounds_after_precommit: 4,
        });
        let m = emit_metrics(t.records());
        assert_eq!(m.instances.len(), 1);
        assert_eq!(m.instances[0].rounds, 4);
        assert_eq!(m.instances[0].proofs_per_round[&1], 14);
    }
}
