//! Communication graphs: the compact form of a full-information view, and
//! the knowledge predicates read off them.
//!
//! A graph owned by agent `i` at time `m` has a vertex `(j, m')` for every
//! agent and every `m' <= m`.  The edge `(j, m'-1) -> (k, m')` carries the
//! delivery label of j's round-m' message to k.  Vertex ids are `m' * n + j`.

use std::fmt::{self, Write as _};

use crate::error::{Error, Result};
use crate::model::{AgentSet, Decision, Params, Value};
use crate::protocols::Action;

/// Tri-state delivery label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Unknown,
    Omitted,
    Delivered,
}

impl Label {
    fn join(self, other: Label) -> Option<Label> {
        match (self, other) {
            (Label::Unknown, x) | (x, Label::Unknown) => Some(x),
            (a, b) if a == b => Some(a),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Unknown => "?",
            Label::Omitted => "0",
            Label::Delivered => "1",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CommGraph {
    n: u8,
    owner: u8,
    time: u16,
    prefs: Vec<Option<Value>>,
    labels: Vec<Label>,
}

impl CommGraph {
    /// The time-0 graph of `owner`: only its own preference is known.
    pub fn new(n: usize, owner: usize, init: Value) -> CommGraph {
        let mut prefs = vec![None; n];
        prefs[owner] = Some(init);
        CommGraph {
            n: n as u8,
            owner: owner as u8,
            time: 0,
            prefs,
            labels: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n as usize
    }

    pub fn owner(&self) -> usize {
        self.owner as usize
    }

    pub fn time(&self) -> usize {
        self.time as usize
    }

    pub fn pref(&self, j: usize) -> Option<Value> {
        self.prefs[j]
    }

    fn slot(&self, from: usize, to: usize, round: usize) -> usize {
        let n = self.n();
        debug_assert!(round >= 1 && round <= self.time());
        ((round - 1) * n + from) * n + to
    }

    /// Label of the edge `(from, round-1) -> (to, round)`, for `1 <= round <= time`.
    pub fn label(&self, from: usize, to: usize, round: usize) -> Label {
        self.labels[self.slot(from, to, round)]
    }

    /// Overwrites one label; used to build fixtures.
    pub fn set_label(&mut self, from: usize, to: usize, round: usize, label: Label) {
        let s = self.slot(from, to, round);
        self.labels[s] = label;
    }

    /// Overwrites one preference label; used to build fixtures.
    pub fn set_pref(&mut self, j: usize, pref: Option<Value>) {
        self.prefs[j] = pref;
    }

    /// Serialized size: two bits per label.
    pub fn bit_size(&self) -> usize {
        2 * self.n() * self.n() * self.time()
    }

    /// Graphviz rendering with vertices `(j,m)` one-based in `j`.
    pub fn to_dot(&self) -> String {
        let n = self.n();
        let mut out = String::new();
        let _ = writeln!(out, "digraph G_{}_{} {{", self.owner() + 1, self.time());
        let _ = writeln!(out, "  rankdir=LR;");
        for m in 0..=self.time() {
            for j in 0..n {
                let pref = match (m, self.prefs[j]) {
                    (0, Some(v)) => format!(" p={v}"),
                    (0, None) => " p=?".to_string(),
                    _ => String::new(),
                };
                let _ = writeln!(
                    out,
                    "  \"({},{})\" [label=\"({},{}){}\"];",
                    j + 1,
                    m,
                    j + 1,
                    m,
                    pref
                );
            }
        }
        for round in 1..=self.time() {
            for from in 0..n {
                for to in 0..n {
                    let _ = writeln!(
                        out,
                        "  \"({},{})\" -> \"({},{})\" [label={}];",
                        from + 1,
                        round - 1,
                        to + 1,
                        round,
                        self.label(from, to, round)
                    );
                }
            }
        }
        out.push_str("}\n");
        out
    }
}

/// Full-information transition: joins the owner's graph with every graph
/// received this round and appends the new round's edges.
///
/// `inbox[j]` is the graph delivered from `j`, or `None` when j's message
/// was dropped.  New edges into the owner are labelled by receipt; all other
/// new edges are unknown.
pub fn merge_graphs(own: &CommGraph, inbox: &[Option<&CommGraph>]) -> Result<CommGraph> {
    let n = own.n();
    if inbox.len() != n {
        return Err(Error::InboxArity {
            expected: n,
            got: inbox.len(),
        });
    }
    let mut prefs = own.prefs.clone();
    let mut labels = own.labels.clone();
    for g in inbox.iter().flatten() {
        if g.n() != n || g.time() != own.time() {
            return Err(Error::GraphShape(format!(
                "received graph covers n={}, time={}; own graph n={}, time={}",
                g.n(),
                g.time(),
                n,
                own.time()
            )));
        }
        for (j, p) in g.prefs.iter().enumerate() {
            match (prefs[j], *p) {
                (_, None) => {}
                (None, Some(v)) => prefs[j] = Some(v),
                (Some(a), Some(b)) if a == b => {}
                _ => {
                    return Err(Error::LabelConflict {
                        from_agent: j + 1,
                        from_time: 0,
                        to_agent: j + 1,
                        to_time: 0,
                    })
                }
            }
        }
        for (s, l) in g.labels.iter().enumerate() {
            labels[s] = labels[s].join(*l).ok_or_else(|| {
                let round = s / (n * n) + 1;
                let from = s / n % n;
                let to = s % n;
                Error::LabelConflict {
                    from_agent: from + 1,
                    from_time: round - 1,
                    to_agent: to + 1,
                    to_time: round,
                }
            })?;
        }
    }
    let owner = own.owner();
    let base = labels.len();
    labels.resize(base + n * n, Label::Unknown);
    for (j, g) in inbox.iter().enumerate() {
        labels[base + j * n + owner] = if g.is_some() {
            Label::Delivered
        } else {
            Label::Omitted
        };
    }
    Ok(CommGraph {
        n: own.n,
        owner: own.owner,
        time: own.time + 1,
        prefs,
        labels,
    })
}

/// Subset of {0, 1}.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct ValueSet(u8);

impl ValueSet {
    pub fn contains(self, v: Value) -> bool {
        self.0 >> v.bit() & 1 == 1
    }

    pub fn insert(&mut self, v: Value) {
        self.0 |= 1 << v.bit();
    }

    pub fn union(self, other: ValueSet) -> ValueSet {
        ValueSet(self.0 | other.0)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn to_vec(self) -> Vec<Value> {
        Value::BOTH.into_iter().filter(|&v| self.contains(v)).collect()
    }
}

/// A deterministic full-information decision rule, evaluated on a view.
pub trait FipRule: Send + Sync {
    fn decide(&self, view: &View<'_>) -> Action;
}

/// Everything derivable from one graph: hears-from sets, known-faulty sets,
/// known values and, given a rule, the replayed action of every vertex the
/// owner has heard from.
pub struct GraphAnalysis<'g> {
    g: &'g CommGraph,
    words: usize,
    /// Vertices each vertex hears from, computed from delivered edges.
    hf: Vec<u64>,
    faulty: Vec<AgentSet>,
    values: Vec<ValueSet>,
    actions: Vec<Option<Action>>,
    params: Params,
}

impl<'g> GraphAnalysis<'g> {
    /// Structural analysis without replayed actions.
    pub fn new(g: &'g CommGraph, params: Params) -> GraphAnalysis<'g> {
        let n = g.n();
        let vertices = n * (g.time() + 1);
        let words = vertices.div_ceil(64);
        let mut hf = vec![0u64; vertices * words];
        let mut faulty = vec![AgentSet::EMPTY; vertices];
        let mut values = vec![ValueSet::default(); vertices];
        for j in 0..n {
            hf[j * words + j / 64] |= 1 << (j % 64);
            if let Some(v) = g.pref(j) {
                values[j].insert(v);
            }
        }
        for m in 1..=g.time() {
            for j in 0..n {
                let v = m * n + j;
                let prev = (m - 1) * n + j;
                let mut set = hf[prev * words..(prev + 1) * words].to_vec();
                set[v / 64] |= 1 << (v % 64);
                let mut f = faulty[prev];
                let mut vals = values[prev];
                for k in 0..n {
                    let src = (m - 1) * n + k;
                    match g.label(k, j, m) {
                        Label::Delivered => {
                            for w in 0..words {
                                set[w] |= hf[src * words + w];
                            }
                            f = f.union(faulty[src]);
                            vals = vals.union(values[src]);
                        }
                        Label::Omitted => f.insert(k),
                        Label::Unknown => {}
                    }
                }
                hf[v * words..(v + 1) * words].copy_from_slice(&set);
                faulty[v] = f;
                values[v] = vals;
            }
        }
        GraphAnalysis {
            g,
            words,
            hf,
            faulty,
            values,
            actions: vec![None; vertices],
            params,
        }
    }

    /// Full analysis: replays `rule` bottom-up at every vertex the owner has
    /// heard from.  Each vertex's action only depends on vertices it hears
    /// from, which are all earlier in the replay order.
    pub fn with_rule(g: &'g CommGraph, params: Params, rule: &dyn FipRule) -> GraphAnalysis<'g> {
        let mut a = GraphAnalysis::new(g, params);
        let n = g.n();
        let root = a.vertex(g.owner(), g.time());
        for m in 0..=g.time() {
            for j in 0..n {
                let v = a.vertex(j, m);
                if !a.hears(root, v) {
                    continue;
                }
                let decided = a.replayed_decision(j, m);
                let action = rule.decide(&a.view(j, m, decided));
                a.actions[v] = Some(action);
            }
        }
        a
    }

    pub fn graph(&self) -> &CommGraph {
        self.g
    }

    pub fn params(&self) -> Params {
        self.params
    }

    fn vertex(&self, j: usize, m: usize) -> usize {
        m * self.g.n() + j
    }

    fn hears(&self, dst: usize, src: usize) -> bool {
        self.hf[dst * self.words + src / 64] >> (src % 64) & 1 == 1
    }

    /// Decision of `j` before round m+1 according to the replayed actions.
    fn replayed_decision(&self, j: usize, m: usize) -> Decision {
        let mut d = None;
        for x in 0..m {
            if let Some(Action::Decide(v)) = self.actions[self.vertex(j, x)] {
                d = Some(v);
            }
        }
        d
    }

    /// The view of vertex `(j, m)` with the given decision ledger value.
    pub fn view(&self, j: usize, m: usize, decided: Decision) -> View<'_> {
        View {
            a: self,
            agent: j,
            time: m,
            decided,
        }
    }

    /// The owner's view at the graph's time, with the replayed ledger.
    pub fn root_view(&self) -> View<'_> {
        let (i, m) = (self.g.owner(), self.g.time());
        self.view(i, m, self.replayed_decision(i, m))
    }

    /// Replayed action at `(j, m)`; `None` when the owner has not heard
    /// from that vertex or no rule was replayed.
    pub fn action(&self, j: usize, m: usize) -> Option<Action> {
        self.actions[self.vertex(j, m)]
    }
}

/// The graph as seen from one of its vertices.  Queries about vertices the
/// view's agent has not heard from return their "unknown" value.
pub struct View<'a> {
    a: &'a GraphAnalysis<'a>,
    agent: usize,
    time: usize,
    decided: Decision,
}

impl<'a> View<'a> {
    pub fn agent(&self) -> usize {
        self.agent
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn decided(&self) -> Decision {
        self.decided
    }

    pub fn params(&self) -> Params {
        self.a.params
    }

    pub fn n(&self) -> usize {
        self.a.g.n()
    }

    /// Own initial preference.
    pub fn init(&self) -> Value {
        self.a.g.pref(self.agent).expect("preference of a heard-from agent")
    }

    pub fn label(&self, from: usize, to: usize, round: usize) -> Label {
        self.a.g.label(from, to, round)
    }

    /// Whether this view's vertex hears from `(j, m)`.
    pub fn heard(&self, j: usize, m: usize) -> bool {
        m <= self.time && self.a.hears(self.a.vertex(self.agent, self.time), self.a.vertex(j, m))
    }

    /// Known action of `j` in round m+1 (`None` is "?").
    pub fn d(&self, j: usize, m: usize) -> Option<Action> {
        if m < self.time && self.heard(j, m) {
            self.a.actions[self.a.vertex(j, m)]
        } else {
            None
        }
    }

    /// Agents `(j, m)` knows to be faulty.
    pub fn f(&self, j: usize, m: usize) -> AgentSet {
        self.a.faulty[self.a.vertex(j, m)]
    }

    /// Values `(j, m)` is known to know about; empty when not heard from.
    pub fn values(&self, j: usize, m: usize) -> ValueSet {
        if self.heard(j, m) {
            self.a.values[self.a.vertex(j, m)]
        } else {
            ValueSet::default()
        }
    }

    /// Latest time at which this vertex hears from `j`.
    pub fn last_heard(&self, j: usize) -> Option<usize> {
        (0..=self.time).rev().find(|&m| self.heard(j, m))
    }

    /// End time of the longest 0-chain visible from this vertex, counting
    /// only decisions strictly before the view's time.
    pub fn longest_known_chain(&self) -> Option<usize> {
        let n = self.n();
        let mut reach = vec![false; n];
        let mut best = None;
        for m in 0..self.time {
            let mut next = vec![false; n];
            for (j, slot) in next.iter_mut().enumerate() {
                if self.d(j, m) != Some(Action::Decide(Value::Zero)) {
                    continue;
                }
                *slot = if m == 0 {
                    self.a.g.pref(j) == Some(Value::Zero)
                } else {
                    (0..n).any(|k| reach[k] && self.label(k, j, m) == Label::Delivered)
                };
            }
            if next.iter().any(|&b| b) {
                best = Some(m);
            }
            reach = next;
        }
        best
    }

    /// Agents possibly nonfaulty from this vertex's standpoint.
    pub fn possibly_nonfaulty(&self) -> AgentSet {
        self.f(self.agent, self.time).complement(self.n())
    }

    /// Common knowledge among the nonfaulty that exactly t agents are
    /// faulty, nobody nonfaulty decided 1 - v and some agent started with v.
    pub fn common(&self, v: Value) -> bool {
        let m = self.time;
        if m == 0 {
            return false;
        }
        let fbar = self.possibly_nonfaulty();
        let dist = fbar
            .iter()
            .fold(AgentSet::EMPTY, |acc, k| acc.union(self.f(k, m - 1)));
        if dist.len() != self.params().t {
            return false;
        }
        let opposite = Some(Action::Decide(v.other()));
        if fbar.iter().any(|j| (0..m).any(|x| self.d(j, x) == opposite)) {
            return false;
        }
        dist.complement(self.n())
            .iter()
            .any(|j| self.values(j, m - 1).contains(v))
    }

    /// This vertex just learned of a 0-decision, or starts with 0.
    pub fn cond0(&self) -> bool {
        let m = self.time;
        if m == 0 {
            return self.init() == Value::Zero;
        }
        (0..self.n()).any(|j| {
            self.label(j, self.agent, m) == Label::Delivered
                && self.d(j, m - 1) == Some(Action::Decide(Value::Zero))
        })
    }

    /// No 0-chain can reach this time unseen.
    ///
    /// A hidden chain would extend the longest visible one (ending at `len`)
    /// with distinct agents `j_k` deciding at times `k = len+1 ..= m`, each
    /// not heard from at or after time `k` and seen undecided so far.  Such
    /// agents exist iff for every `m''` in `(len, m]` at least `m'' - len`
    /// candidates were last heard from before `m''`.
    pub fn cond1(&self) -> bool {
        let m = self.time;
        if m == 0 {
            return false;
        }
        let len = self.longest_known_chain().map_or(-1, |l| l as i64);
        let mut last_of_candidates = Vec::new();
        for j in 0..self.n() {
            match self.last_heard(j) {
                None => last_of_candidates.push(-1),
                Some(last) => {
                    let undecided =
                        (0..=last).all(|x| !matches!(self.d(j, x), Some(Action::Decide(_))));
                    if undecided && last < m {
                        last_of_candidates.push(last as i64);
                    }
                }
            }
        }
        ((len + 1)..=(m as i64)).any(|target| {
            let count = last_of_candidates.iter().filter(|&&l| l < target).count() as i64;
            count < target - len
        })
    }
}

fn checked_view<'a>(a: &'a GraphAnalysis<'a>, i: usize, m: usize) -> View<'a> {
    let decided = a.replayed_decision(i, m);
    a.view(i, m, decided)
}

/// `f(j, m', G)`: agents `(j, m')` is known to know are faulty.
pub fn known_faulty(j: usize, m: usize, g: &CommGraph, params: Params) -> AgentSet {
    GraphAnalysis::new(g, params).root_view().f(j, m)
}

/// `D(S, m', G)`: union of the known-faulty sets of the members of `S`.
pub fn dist_known_faulty(s: AgentSet, m: usize, g: &CommGraph, params: Params) -> AgentSet {
    let a = GraphAnalysis::new(g, params);
    let view = a.root_view();
    s.iter().fold(AgentSet::EMPTY, |acc, k| acc.union(view.f(k, m)))
}

/// `d(j, m', G)`: the action of `j` in round m'+1 as reconstructed by the
/// owner, or `None` ("?") when the owner has not heard from `(j, m')`.
pub fn known_action(
    j: usize,
    m: usize,
    g: &CommGraph,
    params: Params,
    rule: &dyn FipRule,
) -> Option<Action> {
    GraphAnalysis::with_rule(g, params, rule).action(j, m)
}

/// `V(j, m', G)`.
pub fn known_values(j: usize, m: usize, g: &CommGraph, params: Params) -> ValueSet {
    GraphAnalysis::new(g, params).root_view().values(j, m)
}

/// Hears-from between two vertices, using delivered edges and timelines.
pub fn hears_from(src: (usize, usize), dst: (usize, usize), g: &CommGraph) -> bool {
    let a = GraphAnalysis::new(g, Params { n: g.n(), t: 0 });
    dst.1 <= g.time() && src.1 <= g.time() && a.hears(a.vertex(dst.0, dst.1), a.vertex(src.0, src.1))
}

/// `last_{ij}` for the owner `i`, `-1` when never heard from.
pub fn last_heard(j: usize, g: &CommGraph) -> i64 {
    GraphAnalysis::new(g, Params { n: g.n(), t: 0 })
        .root_view()
        .last_heard(j)
        .map_or(-1, |m| m as i64)
}

/// End time of the longest 0-chain visible to the owner (`None` if none).
pub fn longest_known_chain(g: &CommGraph, params: Params, rule: &dyn FipRule) -> Option<usize> {
    GraphAnalysis::with_rule(g, params, rule)
        .root_view()
        .longest_known_chain()
}

pub fn common_v(i: usize, m: usize, g: &CommGraph, v: Value, params: Params, rule: &dyn FipRule) -> bool {
    let a = GraphAnalysis::with_rule(g, params, rule);
    checked_view(&a, i, m).common(v)
}

pub fn cond0(i: usize, m: usize, g: &CommGraph, params: Params, rule: &dyn FipRule) -> bool {
    let a = GraphAnalysis::with_rule(g, params, rule);
    checked_view(&a, i, m).cond0()
}

pub fn cond1(i: usize, m: usize, g: &CommGraph, params: Params, rule: &dyn FipRule) -> bool {
    let a = GraphAnalysis::with_rule(g, params, rule);
    checked_view(&a, i, m).cond1()
}
