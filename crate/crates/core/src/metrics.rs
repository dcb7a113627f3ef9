//! Message-bit accounting, decision-round tables and per-scenario reports.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::epistemic::System;
use crate::error::{Error, Result};
use crate::model::{RunRecord, Scenario, Value};
use crate::simulator::generate_run;
use crate::verification::Verdict;

/// Bits put on the wire before the adversary acts; a broadcast counts once
/// per recipient, the sender included.
pub fn bits_sent(run: &RunRecord) -> usize {
    let n = run.n();
    (0..run.horizon())
        .flat_map(|m| (0..n).map(move |i| (m, i)))
        .filter_map(|(m, i)| run.sent(m, i))
        .map(|msg| msg.payload.bits() * n)
        .sum()
}

/// First-decision rounds of nonfaulty agents across a run set.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct RoundTable {
    pub protocol: String,
    /// round -> number of (run, agent) pairs deciding first in that round
    pub rounds: BTreeMap<usize, usize>,
    pub undecided: usize,
}

impl RoundTable {
    pub fn max_round(&self) -> Option<usize> {
        self.rounds.keys().next_back().copied()
    }
}

pub fn round_table(runs: &[RunRecord]) -> RoundTable {
    let mut table = RoundTable {
        protocol: runs.first().map(|r| r.header.protocol.clone()).unwrap_or_default(),
        ..RoundTable::default()
    };
    for run in runs {
        for i in run.nonfaulty().iter() {
            match run.first_decision(i) {
                Some((_, round)) => *table.rounds.entry(round).or_default() += 1,
                None => table.undecided += 1,
            }
        }
    }
    table
}

pub fn decision_round_table(system: &System) -> RoundTable {
    round_table(system.runs())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AgentOutcome {
    pub agent: usize,
    pub nonfaulty: bool,
    pub decision: Option<Value>,
    pub round: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RoundTraffic {
    pub round: usize,
    /// Messages sent, counting each recipient.
    pub sent: usize,
    pub delivered: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub scenario: serde_json::Value,
    pub agents: Vec<AgentOutcome>,
    pub bits_sent: usize,
    pub traffic: Vec<RoundTraffic>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub verdicts: Vec<Verdict>,
}

impl Report {
    pub fn for_run(run: &RunRecord) -> Report {
        let n = run.n();
        let nf = run.nonfaulty();
        let agents = (0..n)
            .map(|i| {
                let first = run.first_decision(i);
                AgentOutcome {
                    agent: i + 1,
                    nonfaulty: nf.contains(i),
                    decision: first.map(|(v, _)| v),
                    round: first.map(|(_, r)| r),
                }
            })
            .collect();
        let traffic = (0..run.horizon())
            .map(|m| {
                let senders = (0..n).filter(|&i| run.sent(m, i).is_some());
                let sent = senders.clone().count() * n;
                let delivered = senders
                    .map(|i| (0..n).filter(|&j| run.pattern.deliver(m, i, j)).count())
                    .sum();
                RoundTraffic {
                    round: m + 1,
                    sent,
                    delivered,
                }
            })
            .collect();
        let scenario = serde_json::from_str(&run.scenario().to_json()).expect("scenario JSON round-trips");
        Report {
            scenario,
            agents,
            bits_sent: bits_sent(run),
            traffic,
            verdicts: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn run_scenario_str(text: &str) -> Result<(RunRecord, Report)> {
    let scenario = Scenario::from_json(text)?;
    let run = generate_run(&scenario)?;
    let report = Report::for_run(&run);
    Ok((run, report))
}

pub fn run_scenario(path: &Path) -> Result<(RunRecord, Report)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidScenario(format!("cannot read {}: {e}", path.display())))?;
    run_scenario_str(&text)
}
