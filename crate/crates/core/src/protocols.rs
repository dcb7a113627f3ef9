//! Action protocols: the concrete decision rules, the naive 0-eager rule
//! and the knowledge-based programs evaluated against a run set.

use std::fmt;
use std::sync::Arc;

use serde::{Serialize, Serializer};

use crate::commgraph::{FipRule, GraphAnalysis, View};
use crate::epistemic::{Formula, System, Truth};
use crate::error::{Error, Result};
use crate::exchange::LocalState;
use crate::model::{ContextId, Decision, Params, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    Noop,
    Decide(Value),
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Noop => f.write_str("noop"),
            Action::Decide(v) => write!(f, "decide({v})"),
        }
    }
}

impl Serialize for Action {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// A deterministic map from local states to actions.
pub trait ActionProtocol: Send + Sync {
    fn id(&self) -> &str;

    fn supports(&self, context: ContextId) -> bool;

    /// `decided` is the ledger value, needed where the state omits it.
    fn action(&self, state: &LocalState, decided: Decision, params: Params) -> Action;
}

pub fn pmin_action(time: usize, init: Value, decided: Decision, rd: Option<Value>, t: usize) -> Action {
    if decided.is_some() {
        Action::Noop
    } else if init == Value::Zero || rd == Some(Value::Zero) {
        Action::Decide(Value::Zero)
    } else if time == t + 1 {
        Action::Decide(Value::One)
    } else {
        Action::Noop
    }
}

pub fn pbasic_action(
    time: usize,
    init: Value,
    decided: Decision,
    rd: Option<Value>,
    count1: usize,
    n: usize,
) -> Action {
    if decided.is_some() {
        Action::Noop
    } else if init == Value::Zero || rd == Some(Value::Zero) {
        Action::Decide(Value::Zero)
    } else if count1 + time > n || rd == Some(Value::One) {
        Action::Decide(Value::One)
    } else {
        Action::Noop
    }
}

/// Runs in the minimal and basic contexts; the count of the basic context
/// is ignored.
pub struct PMin;

impl ActionProtocol for PMin {
    fn id(&self) -> &str {
        "pmin"
    }

    fn supports(&self, context: ContextId) -> bool {
        context != ContextId::Fip
    }

    fn action(&self, state: &LocalState, _decided: Decision, params: Params) -> Action {
        match state {
            LocalState::Min(s) => pmin_action(s.time, s.init, s.decided, s.rd, params.t),
            LocalState::Basic(s) => pmin_action(s.time, s.init, s.decided, s.rd, params.t),
            LocalState::Fip(_) => panic!("pmin does not run in the fip context"),
        }
    }
}

pub struct PBasic;

impl ActionProtocol for PBasic {
    fn id(&self) -> &str {
        "pbasic"
    }

    fn supports(&self, context: ContextId) -> bool {
        context == ContextId::Basic
    }

    fn action(&self, state: &LocalState, _decided: Decision, params: Params) -> Action {
        match state {
            LocalState::Basic(s) => pbasic_action(s.time, s.init, s.decided, s.rd, s.count1, params.n),
            _ => panic!("pbasic runs only in the basic context"),
        }
    }
}

/// Evaluates a full-information rule on the owner's graph.
pub fn fip_action(rule: &dyn FipRule, state: &LocalState, decided: Decision, params: Params) -> Action {
    let LocalState::Fip(s) = state else {
        panic!("full-information rule applied to a non-fip state")
    };
    let analysis = GraphAnalysis::with_rule(&s.graph, params, rule);
    rule.decide(&analysis.view(s.graph.owner(), s.graph.time(), decided))
}

/// The optimal full-information protocol.
pub struct POpt;

impl FipRule for POpt {
    fn decide(&self, view: &View<'_>) -> Action {
        if view.decided().is_some() {
            Action::Noop
        } else if view.common(Value::Zero) {
            Action::Decide(Value::Zero)
        } else if view.common(Value::One) {
            Action::Decide(Value::One)
        } else if view.cond0() {
            Action::Decide(Value::Zero)
        } else if view.cond1() {
            Action::Decide(Value::One)
        } else {
            Action::Noop
        }
    }
}

impl ActionProtocol for POpt {
    fn id(&self) -> &str {
        "popt"
    }

    fn supports(&self, context: ContextId) -> bool {
        context == ContextId::Fip
    }

    fn action(&self, state: &LocalState, decided: Decision, params: Params) -> Action {
        fip_action(self, state, decided, params)
    }
}

/// Decides 0 as soon as it knows some agent started with 0, and 1 at time
/// t+1 otherwise.  Needs to see preferences, so it runs only with full
/// information.
pub struct Naive0;

impl FipRule for Naive0 {
    fn decide(&self, view: &View<'_>) -> Action {
        if view.decided().is_some() {
            Action::Noop
        } else if view.values(view.agent(), view.time()).contains(Value::Zero) {
            Action::Decide(Value::Zero)
        } else if view.time() == view.params().t + 1 {
            Action::Decide(Value::One)
        } else {
            Action::Noop
        }
    }
}

impl ActionProtocol for Naive0 {
    fn id(&self) -> &str {
        "naive0"
    }

    fn supports(&self, context: ContextId) -> bool {
        context == ContextId::Fip
    }

    fn action(&self, state: &LocalState, decided: Decision, params: Params) -> Action {
        fip_action(self, state, decided, params)
    }
}

/// Knowledge-based programs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Kbp {
    P0,
    P1,
}

impl Kbp {
    pub fn id(self) -> &'static str {
        match self {
            Kbp::P0 => "kbp-p0",
            Kbp::P1 => "kbp-p1",
        }
    }
}

/// Entry of the protocol registry.
#[derive(Clone)]
pub enum ProtocolRef {
    Concrete(Arc<dyn ActionProtocol>),
    Kbp(Kbp),
}

pub const PROTOCOL_IDS: [&str; 6] = ["pmin", "pbasic", "popt", "naive0", "kbp-p0", "kbp-p1"];

pub fn lookup(id: &str) -> Result<ProtocolRef> {
    Ok(match id {
        "pmin" => ProtocolRef::Concrete(Arc::new(PMin)),
        "pbasic" => ProtocolRef::Concrete(Arc::new(PBasic)),
        "popt" => ProtocolRef::Concrete(Arc::new(POpt)),
        "naive0" => ProtocolRef::Concrete(Arc::new(Naive0)),
        "kbp-p0" | "p0" | "P0" => ProtocolRef::Kbp(Kbp::P0),
        "kbp-p1" | "p1" | "P1" => ProtocolRef::Kbp(Kbp::P1),
        other => return Err(Error::UnknownProtocol(other.to_string())),
    })
}

/// Resolves a concrete protocol and checks it runs in `context`.
pub fn concrete(id: &str, context: ContextId) -> Result<Arc<dyn ActionProtocol>> {
    match lookup(id)? {
        ProtocolRef::Concrete(p) if p.supports(context) => Ok(p),
        ProtocolRef::Concrete(_) => Err(Error::ContextMismatch {
            protocol: id.to_string(),
            context,
        }),
        ProtocolRef::Kbp(_) => Err(Error::Unsupported(format!(
            "`{id}` is a knowledge-based program; it can only be evaluated against the run set \
             of a concrete protocol (see `check implements`)"
        ))),
    }
}

/// Guard formulas of a knowledge-based program for one agent, in program
/// order, each with the action it selects.
pub fn kbp_guards(kbp: Kbp, agent: usize, n: usize) -> Vec<(Formula, Action)> {
    let i = agent;
    let zero_rule = Formula::or(vec![
        Formula::Init(i, Value::Zero),
        Formula::k(
            i,
            Formula::or((0..n).map(|j| Formula::JDecided(j, Value::Zero)).collect()),
        ),
    ]);
    let one_rule = Formula::k(
        i,
        Formula::and(
            (0..n)
                .map(|j| Formula::not(Formula::Deciding(j, Value::Zero)))
                .collect(),
        ),
    );
    let mut guards = Vec::new();
    if kbp == Kbp::P1 {
        for v in Value::BOTH {
            let body = Formula::and(vec![
                Formula::TFaulty,
                Formula::NoDecidedN(v.other()),
                Formula::Exists(v),
            ]);
            guards.push((Formula::k(i, Formula::c(body)), Action::Decide(v)));
        }
    }
    guards.push((zero_rule, Action::Decide(Value::Zero)));
    guards.push((one_rule, Action::Decide(Value::One)));
    guards
}

/// A knowledge-based program's actions at every point of a run set.
pub struct KbpEvaluation {
    kbp: Kbp,
    n: usize,
    /// Per agent, per guard, truth at every point.
    guards: Vec<Vec<(Vec<Truth>, Action)>>,
}

impl KbpEvaluation {
    pub fn new(kbp: Kbp, system: &System) -> Result<KbpEvaluation> {
        let n = system.params().n;
        let mut guards = Vec::with_capacity(n);
        for i in 0..n {
            let mut row = Vec::new();
            for (phi, action) in kbp_guards(kbp, i, n) {
                row.push((system.eval_all(&phi)?, action));
            }
            guards.push(row);
        }
        Ok(KbpEvaluation { kbp, n, guards })
    }

    pub fn kbp(&self) -> Kbp {
        self.kbp
    }

    /// Action of `agent` at `(run, time)`; the ledger guard comes first.
    pub fn action(&self, system: &System, run: usize, time: usize, agent: usize) -> Result<Action> {
        assert!(agent < self.n);
        let p = system.point_index(run, time)?;
        if system.run(run).decided(time, agent).is_some() {
            return Ok(Action::Noop);
        }
        for (truth, action) in &self.guards[agent] {
            match truth[p] {
                Some(true) => return Ok(*action),
                Some(false) => {}
                None => return Err(Error::Undefined { run, time }),
            }
        }
        Ok(Action::Noop)
    }
}

/// Single-point evaluation of a knowledge-based program.
pub fn kbp_action(kbp: Kbp, system: &System, run: usize, time: usize, agent: usize) -> Result<Action> {
    KbpEvaluation::new(kbp, system)?.action(system, run, time, agent)
}
