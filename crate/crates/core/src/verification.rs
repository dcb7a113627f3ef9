//! Checks over run sets: the four agreement properties, 0-chains, the
//! implements relation, domination and the safety condition.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::epistemic::{Formula, System};
use crate::error::{Error, Result};
use crate::exchange::MessageClass;
use crate::model::{ContextId, Params, RunRecord, Value};
use crate::protocols::{Action, ActionProtocol, Kbp, KbpEvaluation};
use crate::simulator::{enumerate_lockstep, enumerate_runs, EnumerationLimits};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
}

/// Where a property breaks; `scenario` replays the run on its own.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Witness {
    pub run: usize,
    pub time: usize,
    /// One-based agent numbers.
    pub agents: Vec<usize>,
    pub detail: String,
    pub scenario: String,
}

impl Witness {
    fn new(run_index: usize, run: &RunRecord, time: usize, agents: &[usize], detail: String) -> Witness {
        Witness {
            run: run_index,
            time,
            agents: agents.iter().map(|a| a + 1).collect(),
            detail,
            scenario: run.scenario().to_json(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub property: String,
    pub pass: bool,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Verdict {
    fn pass(property: &str) -> Verdict {
        Verdict {
            property: property.to_string(),
            pass: true,
            status: Status::Pass,
            witness: None,
            note: None,
        }
    }

    fn fail(property: &str, witness: Witness) -> Verdict {
        Verdict {
            property: property.to_string(),
            pass: false,
            status: Status::Fail,
            witness: Some(witness),
            note: None,
        }
    }

    fn from_witness(property: &str, witness: Option<Witness>) -> Verdict {
        match witness {
            Some(w) => Verdict::fail(property, w),
            None => Verdict::pass(property),
        }
    }

    fn with_note(mut self, note: String) -> Verdict {
        self.note = Some(note);
        self
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = match self.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Inconclusive => "INCONCLUSIVE",
        };
        write!(f, "{status} {}", self.property)?;
        if let Some(note) = &self.note {
            write!(f, " ({note})")?;
        }
        if let Some(w) = &self.witness {
            write!(f, ": run {} time {} agents {:?}: {}", w.run, w.time, w.agents, w.detail)?;
        }
        Ok(())
    }
}

pub const UNIQUE_DECISION: &str = "unique-decision";
pub const AGREEMENT: &str = "agreement";
pub const VALIDITY: &str = "validity";
pub const TERMINATION: &str = "termination";

/// The four properties over a complete run set.
pub fn check_eba(system: &System) -> Result<Vec<Verdict>> {
    if !system.is_complete() {
        return Err(Error::IncompleteSystem);
    }
    check_eba_runs(system.runs(), system.params())
}

/// The four properties over any list of runs.  Termination is checked as
/// "every nonfaulty agent has decided by time t + 2".
pub fn check_eba_runs(runs: &[RunRecord], params: Params) -> Result<Vec<Verdict>> {
    let Params { n, t } = params;
    let mut unique = None;
    let mut agreement = None;
    let mut validity = None;
    let mut termination = None;
    let mut max_round = 0;
    for (r, run) in runs.iter().enumerate() {
        let h = run.horizon();
        if h < t + 2 {
            return Err(Error::InvalidScenario(format!(
                "horizon {h} cannot show termination by round t+2={}",
                t + 2
            )));
        }
        let nf = run.nonfaulty();
        if unique.is_none() {
            'agents: for i in 0..n {
                let mut first: Option<Value> = None;
                for m in 0..h {
                    if let Action::Decide(v) = run.action(m, i) {
                        match first {
                            None => first = Some(v),
                            Some(_) => {
                                unique = Some(Witness::new(
                                    r,
                                    run,
                                    m,
                                    &[i],
                                    format!("agent {} decides again ({v}) in round {}", i + 1, m + 1),
                                ));
                                break 'agents;
                            }
                        }
                    }
                }
            }
        }
        if agreement.is_none() {
            'times: for m in 0..=h {
                for i in nf.iter() {
                    for j in nf.iter().filter(|&j| j > i) {
                        if let (Some(a), Some(b)) = (run.decided(m, i), run.decided(m, j)) {
                            if a != b {
                                agreement = Some(Witness::new(
                                    r,
                                    run,
                                    m,
                                    &[i, j],
                                    format!(
                                        "nonfaulty agents {} and {} decided {a} and {b}",
                                        i + 1,
                                        j + 1
                                    ),
                                ));
                                break 'times;
                            }
                        }
                    }
                }
            }
        }
        for i in nf.iter() {
            if validity.is_none() {
                if let Some(v) = run.decided(h, i).filter(|v| !run.inits.contains(v)) {
                    validity = Some(Witness::new(
                        r,
                        run,
                        h,
                        &[i],
                        format!("agent {} decided {v}, which is nobody's initial value", i + 1),
                    ));
                }
            }
            match run.first_decision(i) {
                Some((_, round)) if round <= t + 2 => max_round = max_round.max(round),
                other => {
                    if let Some((_, round)) = other {
                        max_round = max_round.max(round);
                    }
                    if termination.is_none() {
                        termination = Some(Witness::new(
                            r,
                            run,
                            t + 2,
                            &[i],
                            format!("nonfaulty agent {} undecided after round {}", i + 1, t + 2),
                        ));
                    }
                }
            }
        }
    }
    Ok(vec![
        Verdict::from_witness(UNIQUE_DECISION, unique),
        Verdict::from_witness(AGREEMENT, agreement),
        Verdict::from_witness(VALIDITY, validity),
        Verdict::from_witness(TERMINATION, termination).with_note(format!("max decision round {max_round}")),
    ])
}

/// Agents with their decision times: `(agent, time)` means the agent
/// decides 0 in round `time + 1`.
pub type Chain = Vec<(usize, usize)>;

fn first_decides_zero_at(run: &RunRecord, i: usize) -> Option<usize> {
    match run.first_decision(i) {
        Some((Value::Zero, round)) => Some(round - 1),
        _ => None,
    }
}

/// All maximal 0-chains of a run.
///
/// A successor must first decide 0 exactly one round after its
/// predecessor and must have received the predecessor's decision message
/// (in every shipped context that is how an agent learns a decision was
/// just taken).
pub fn detect_zero_chains(run: &RunRecord) -> Vec<Chain> {
    let n = run.n();
    let zero_time: Vec<Option<usize>> = (0..n).map(|i| first_decides_zero_at(run, i)).collect();
    let extends = |prev: usize, next: usize| -> bool {
        match (zero_time[prev], zero_time[next]) {
            (Some(a), Some(b)) if b == a + 1 => run
                .delivered(a, prev, next)
                .is_some_and(|m| m.class == MessageClass::M0),
            _ => false,
        }
    };
    let mut chains = Vec::new();
    let mut stack: Vec<Chain> = (0..n)
        .filter(|&i| run.inits[i] == Value::Zero && zero_time[i] == Some(0))
        .map(|i| vec![(i, 0)])
        .collect();
    while let Some(chain) = stack.pop() {
        let &(last, time) = chain.last().expect("chains are non-empty");
        let successors: Vec<usize> = (0..n).filter(|&j| extends(last, j)).collect();
        if successors.is_empty() {
            chains.push(chain);
        } else {
            for j in successors {
                let mut longer = chain.clone();
                longer.push((j, time + 1));
                stack.push(longer);
            }
        }
    }
    chains.sort();
    chains
}

/// Times at which each agent receives a 0-chain.
pub fn chain_arrivals(run: &RunRecord) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); run.n()];
    for chain in detect_zero_chains(run) {
        for (i, m) in chain {
            if !out[i].contains(&m) {
                out[i].push(m);
            }
        }
    }
    out
}

pub const ZERO_CHAINS: &str = "zero-chains";

/// Every 0-decision is the arrival of a 0-chain at the deciding agent.
pub fn check_zero_chains_runs(runs: &[RunRecord]) -> Verdict {
    for (r, run) in runs.iter().enumerate() {
        let arrivals = chain_arrivals(run);
        for i in 0..run.n() {
            if let Some(m) = first_decides_zero_at(run, i) {
                if !arrivals[i].contains(&m) {
                    return Verdict::fail(
                        ZERO_CHAINS,
                        Witness::new(
                            r,
                            run,
                            m,
                            &[i],
                            format!("agent {} decides 0 in round {} without receiving a 0-chain", i + 1, m + 1),
                        ),
                    );
                }
            }
        }
    }
    Verdict::pass(ZERO_CHAINS)
}

pub const IMPLEMENTS: &str = "implements";

/// Point-wise action equality between a knowledge-based program and the
/// concrete protocol that generated `system`, at every time before the
/// horizon.
pub fn check_implements_on(system: &System, kbp: Kbp) -> Result<Verdict> {
    let eval = KbpEvaluation::new(kbp, system)?;
    let Params { n, .. } = system.params();
    for (r, run) in system.runs().iter().enumerate() {
        for m in 0..system.horizon() {
            for i in 0..n {
                let expected = eval.action(system, r, m, i)?;
                let actual = run.action(m, i);
                if expected != actual {
                    return Ok(Verdict::fail(
                        IMPLEMENTS,
                        Witness::new(
                            r,
                            run,
                            m,
                            &[i],
                            format!(
                                "{} takes {actual} but {} prescribes {expected}",
                                run.header.protocol,
                                kbp.id()
                            ),
                        ),
                    ));
                }
            }
        }
    }
    Ok(Verdict::pass(IMPLEMENTS))
}

pub fn check_implements(
    protocol: Arc<dyn ActionProtocol>,
    kbp: Kbp,
    context: ContextId,
    params: Params,
    horizon: usize,
) -> Result<Verdict> {
    let system = enumerate_runs(protocol, context, params, horizon, None)?;
    check_implements_on(&system, kbp)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase", tag = "relation")]
pub enum Domination {
    /// Neither protocol ever decides before the other.
    Equal,
    /// The first protocol strictly dominates the second.
    Dominates,
    /// The second protocol strictly dominates the first.
    Dominated,
    Incomparable,
    /// A protocol failed an agreement property, so domination is moot.
    Disqualified { protocol: String, property: String },
}

impl fmt::Display for Domination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Domination::Equal => f.write_str("equal"),
            Domination::Dominates => f.write_str("dominates"),
            Domination::Dominated => f.write_str("dominated"),
            Domination::Incomparable => f.write_str("incomparable"),
            Domination::Disqualified { protocol, property } => {
                write!(f, "disqualified: {protocol} fails {property}")
            }
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DominationReport {
    pub a: String,
    pub b: String,
    pub outcome: Domination,
    /// A run where `b` decides before `a`, if any.
    pub b_faster: Option<Witness>,
    /// A run where `a` decides before `b`, if any.
    pub a_faster: Option<Witness>,
    pub eba: Vec<(String, Vec<Verdict>)>,
}

/// A run where some nonfaulty agent decides with `fast` strictly before
/// `slow` decides.
fn earlier_decision(fast: &[RunRecord], slow: &[RunRecord]) -> Option<Witness> {
    for (r, (rf, rs)) in fast.iter().zip(slow).enumerate() {
        for i in rf.nonfaulty().iter() {
            let first_fast = (0..rf.horizon()).find(|&m| matches!(rf.action(m, i), Action::Decide(_)));
            let Some(mf) = first_fast else { continue };
            for m in mf + 1..rs.horizon() {
                if matches!(rs.action(m, i), Action::Decide(_)) {
                    return Some(Witness::new(
                        r,
                        rs,
                        m,
                        &[i],
                        format!(
                            "agent {} decides in round {} with {} but in round {} with {}",
                            i + 1,
                            mf + 1,
                            rf.header.protocol,
                            m + 1,
                            rs.header.protocol
                        ),
                    ));
                }
            }
        }
    }
    None
}

/// Compares two protocols over corresponding runs of a joint enumeration.
pub fn check_domination(
    a: Arc<dyn ActionProtocol>,
    b: Arc<dyn ActionProtocol>,
    context: ContextId,
    params: Params,
    horizon: usize,
) -> Result<DominationReport> {
    let (a_id, b_id) = (a.id().to_string(), b.id().to_string());
    let mut runs = enumerate_lockstep(&[a, b], context, params, horizon, None, EnumerationLimits::default())?;
    let runs_b = runs.pop().expect("two protocols");
    let runs_a = runs.pop().expect("two protocols");
    let eba_a = check_eba_runs(&runs_a, params)?;
    let eba_b = check_eba_runs(&runs_b, params)?;
    let disqualified = [(&a_id, &eba_a), (&b_id, &eba_b)]
        .into_iter()
        .find_map(|(id, verdicts)| {
            verdicts.iter().find(|v| !v.pass).map(|v| Domination::Disqualified {
                protocol: id.clone(),
                property: v.property.clone(),
            })
        });
    let b_faster = earlier_decision(&runs_b, &runs_a);
    let a_faster = earlier_decision(&runs_a, &runs_b);
    let outcome = disqualified.unwrap_or(match (&a_faster, &b_faster) {
        (None, None) => Domination::Equal,
        (Some(_), None) => Domination::Dominates,
        (None, Some(_)) => Domination::Dominated,
        (Some(_), Some(_)) => Domination::Incomparable,
    });
    Ok(DominationReport {
        a: a_id.clone(),
        b: b_id.clone(),
        outcome,
        b_faster,
        a_faster,
        eba: vec![(a_id, eba_a), (b_id, eba_b)],
    })
}

pub const SAFETY_CLAUSE_1: &str = "safety-clause-1";
pub const SAFETY_CLAUSE_2: &str = "safety-clause-2";

/// The safety condition for the run set of an implementation of the
/// 0-chain program.
///
/// Clause 1: an agent that has not received a 0-chain cannot tell its
/// state apart from some all-1 point.  Clause 2: when an undecided agent
/// does not know that nobody is deciding 0, it considers possible a run
/// where it is nonfaulty and a nonfaulty agent is deciding 0, and (after
/// time 0) that agent in turn considers possible a run in which two
/// nonfaulty agents include one that just decided 0.  A missing second
/// witness is reported as inconclusive.
pub fn check_safety_on(system: &System) -> Result<Vec<Verdict>> {
    let Params { n, .. } = system.params();
    let h = system.horizon();
    let runs = system.runs();
    let all_one: Vec<bool> = runs.iter().map(|r| r.inits.iter().all(|&v| v == Value::One)).collect();
    let arrivals: Vec<Vec<Vec<usize>>> = runs.iter().map(chain_arrivals).collect();

    let mut clause1 = None;
    'c1: for (r, run) in runs.iter().enumerate() {
        for m in 0..=h {
            for i in 0..n {
                if arrivals[r][i].iter().any(|&x| x <= m) {
                    continue;
                }
                let p = system.point_index(r, m)?;
                let covered = system
                    .class_members(i, p)
                    .iter()
                    .any(|&q| all_one[system.point(q as usize).0]);
                if !covered {
                    clause1 = Some(Witness::new(
                        r,
                        run,
                        m,
                        &[i],
                        format!(
                            "agent {} has received no 0-chain yet every indistinguishable point has an initial 0",
                            i + 1
                        ),
                    ));
                    break 'c1;
                }
            }
        }
    }

    let deciding_zero = |run: &RunRecord, m: usize, j: usize| {
        m < run.horizon() && run.decided(m, j).is_none() && run.decided(m + 1, j) == Some(Value::Zero)
    };
    let mut clause2_fail = None;
    let mut clause2_open = None;
    for i in 0..n {
        let no_one_deciding = Formula::k(
            i,
            Formula::and(
                (0..n)
                    .map(|j| Formula::not(Formula::Deciding(j, Value::Zero)))
                    .collect(),
            ),
        );
        let knows = system.eval_all(&no_one_deciding)?;
        for (r, run) in runs.iter().enumerate() {
            for m in 0..h {
                let p = system.point_index(r, m)?;
                if knows[p] != Some(false) || run.decided(m, i).is_some() {
                    continue;
                }
                let mut found_first = false;
                let mut found_both = false;
                for &q in system.class_members(i, p) {
                    let (r1, _) = system.point(q as usize);
                    let run1 = &runs[r1];
                    if !run1.nonfaulty().contains(i) {
                        continue;
                    }
                    for j in run1.nonfaulty().iter().filter(|&j| deciding_zero(run1, m, j)) {
                        found_first = true;
                        if m == 0 {
                            found_both = true;
                            break;
                        }
                        let q1 = system.point_index(r1, m)?;
                        found_both = system.class_members(j, q1).iter().any(|&q2| {
                            let run2 = &runs[system.point(q2 as usize).0];
                            let nf2 = run2.nonfaulty();
                            nf2.contains(j)
                                && nf2.iter().any(|j2| run2.action(m - 1, j2) == Action::Decide(Value::Zero))
                        });
                        if found_both {
                            break;
                        }
                    }
                    if found_both {
                        break;
                    }
                }
                if !found_first && clause2_fail.is_none() {
                    clause2_fail = Some(Witness::new(
                        r,
                        run,
                        m,
                        &[i],
                        format!(
                            "agent {} considers a 0-decision possible but no run with it and the decider nonfaulty",
                            i + 1
                        ),
                    ));
                } else if found_first && !found_both && clause2_open.is_none() {
                    clause2_open = Some(Witness::new(
                        r,
                        run,
                        m,
                        &[i],
                        "no second witness run found in the enumerated set".to_string(),
                    ));
                }
            }
        }
    }
    let clause2 = match (clause2_fail, clause2_open) {
        (Some(w), _) => Verdict::fail(SAFETY_CLAUSE_2, w),
        (None, Some(w)) => Verdict {
            property: SAFETY_CLAUSE_2.to_string(),
            pass: false,
            status: Status::Inconclusive,
            witness: Some(w),
            note: None,
        },
        (None, None) => Verdict::pass(SAFETY_CLAUSE_2),
    };
    Ok(vec![Verdict::from_witness(SAFETY_CLAUSE_1, clause1), clause2])
}

pub fn check_safety(
    protocol: Arc<dyn ActionProtocol>,
    context: ContextId,
    params: Params,
    horizon: usize,
) -> Result<Vec<Verdict>> {
    let system = enumerate_runs(protocol, context, params, horizon, None)?;
    check_safety_on(&system)
}
