//! Agents, values, failure patterns, scenarios and run records.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::exchange::{LocalState, Message};
use crate::protocols::Action;

/// Largest supported number of agents (agent sets are 32-bit masks).
pub const MAX_AGENTS: usize = 32;

/// An agent, stored zero-based and rendered one-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AgentId(u8);

impl AgentId {
    /// Builds an agent from its one-based number, checked against `n`.
    pub fn new(number: usize, n: usize) -> Result<Self> {
        if number == 0 || number > n {
            return Err(Error::InvalidScenario(format!(
                "agent {number} is outside 1..={n}"
            )));
        }
        Ok(AgentId((number - 1) as u8))
    }

    pub fn from_index(index: usize) -> Self {
        debug_assert!(index < MAX_AGENTS);
        AgentId(index as u8)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn number(self) -> usize {
        self.0 as usize + 1
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

impl Serialize for AgentId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u64(self.number() as u64)
    }
}

/// A binary preference or decision value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Zero,
    One,
}

impl Value {
    pub const BOTH: [Value; 2] = [Value::Zero, Value::One];

    pub fn from_bit(bit: u64) -> Option<Value> {
        match bit {
            0 => Some(Value::Zero),
            1 => Some(Value::One),
            _ => None,
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            Value::Zero => 0,
            Value::One => 1,
        }
    }

    pub fn other(self) -> Value {
        match self {
            Value::Zero => Value::One,
            Value::One => Value::Zero,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.bit())
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.bit())
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let bit = u64::deserialize(d)?;
        Value::from_bit(bit)
            .ok_or_else(|| serde::de::Error::custom(format!("value must be 0 or 1, got {bit}")))
    }
}

/// `None` is the undecided value ⊥.
pub type Decision = Option<Value>;

/// A set of agents as a bit mask over zero-based indices.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AgentSet(u32);

impl AgentSet {
    pub const EMPTY: AgentSet = AgentSet(0);

    pub fn all(n: usize) -> AgentSet {
        if n >= 32 {
            AgentSet(u32::MAX)
        } else {
            AgentSet((1u32 << n) - 1)
        }
    }

    pub fn from_bits(bits: u32) -> AgentSet {
        AgentSet(bits)
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn singleton(i: usize) -> AgentSet {
        AgentSet(1 << i)
    }

    pub fn contains(self, i: usize) -> bool {
        self.0 >> i & 1 == 1
    }

    pub fn insert(&mut self, i: usize) {
        self.0 |= 1 << i;
    }

    pub fn remove(&mut self, i: usize) {
        self.0 &= !(1 << i);
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn union(self, other: AgentSet) -> AgentSet {
        AgentSet(self.0 | other.0)
    }

    pub fn intersection(self, other: AgentSet) -> AgentSet {
        AgentSet(self.0 & other.0)
    }

    pub fn complement(self, n: usize) -> AgentSet {
        AgentSet(!self.0 & AgentSet::all(n).0)
    }

    pub fn is_subset(self, other: AgentSet) -> bool {
        self.0 & !other.0 == 0
    }

    /// Zero-based members in increasing order.
    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..32).filter(move |&i| self.contains(i))
    }

    /// One-based agent numbers, for rendering.
    pub fn numbers(self) -> Vec<usize> {
        self.iter().map(|i| i + 1).collect()
    }
}

impl FromIterator<usize> for AgentSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        let mut s = AgentSet::EMPTY;
        for i in iter {
            s.insert(i);
        }
        s
    }
}

impl Serialize for AgentSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.numbers().serialize(s)
    }
}

impl fmt::Display for AgentSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.numbers().iter().map(|k| k.to_string()).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

/// Information-exchange context.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextId {
    Min,
    Basic,
    Fip,
}

impl ContextId {
    pub fn name(self) -> &'static str {
        match self {
            ContextId::Min => "min",
            ContextId::Basic => "basic",
            ContextId::Fip => "fip",
        }
    }
}

impl fmt::Display for ContextId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ContextId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min" => Ok(ContextId::Min),
            "basic" => Ok(ContextId::Basic),
            "fip" => Ok(ContextId::Fip),
            other => Err(Error::InvalidScenario(format!(
                "unknown context `{other}` (expected min, basic or fip)"
            ))),
        }
    }
}

/// The adversary: who is nonfaulty and which messages get through.
///
/// `deliver(m, i, j)` governs the message from `i` to `j` in round `m + 1`.
/// Rounds at or beyond the horizon are not represented.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FailurePattern {
    n: usize,
    horizon: usize,
    nonfaulty: AgentSet,
    /// Omission bits, one per (m, i, j); a set bit means the message is dropped.
    omitted: Vec<u64>,
}

impl FailurePattern {
    /// Every message delivered, with `faulty` marked faulty.
    pub fn new(n: usize, horizon: usize, faulty: AgentSet) -> Self {
        let bits = horizon * n * n;
        FailurePattern {
            n,
            horizon,
            nonfaulty: faulty.complement(n),
            omitted: vec![0; bits.div_ceil(64)],
        }
    }

    pub fn failure_free(n: usize, horizon: usize) -> Self {
        Self::new(n, horizon, AgentSet::EMPTY)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn nonfaulty(&self) -> AgentSet {
        self.nonfaulty
    }

    pub fn faulty(&self) -> AgentSet {
        self.nonfaulty.complement(self.n)
    }

    fn bit(&self, m: usize, i: usize, j: usize) -> usize {
        assert!(
            m < self.horizon && i < self.n && j < self.n,
            "delivery index ({m},{i},{j}) outside the pattern"
        );
        (m * self.n + i) * self.n + j
    }

    pub fn deliver(&self, m: usize, i: usize, j: usize) -> bool {
        let b = self.bit(m, i, j);
        self.omitted[b / 64] >> (b % 64) & 1 == 0
    }

    pub fn set_deliver(&mut self, m: usize, i: usize, j: usize, delivered: bool) {
        let b = self.bit(m, i, j);
        if delivered {
            self.omitted[b / 64] &= !(1 << (b % 64));
        } else {
            self.omitted[b / 64] |= 1 << (b % 64);
        }
    }

    /// Marks every message of `i` from round `from_m + 1` on as dropped.
    pub fn silence(&mut self, i: usize, from_m: usize) {
        for m in from_m..self.horizon {
            for j in 0..self.n {
                self.set_deliver(m, i, j, false);
            }
        }
    }

    /// All dropped messages as zero-based (m, sender, receiver), in index order.
    pub fn omissions(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for m in 0..self.horizon {
            for i in 0..self.n {
                for j in 0..self.n {
                    if !self.deliver(m, i, j) {
                        out.push((m, i, j));
                    }
                }
            }
        }
        out
    }
}

/// Why a failure pattern is outside SO(t).
#[derive(Clone, Debug, PartialEq, Eq, Error, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PatternViolation {
    #[error("pattern covers n={got_n}, horizon={got_horizon}; expected n={n}, horizon={horizon}")]
    Shape {
        n: usize,
        horizon: usize,
        got_n: usize,
        got_horizon: usize,
    },
    #[error("nonfaulty agent {sender} omits its round {round} message to agent {receiver}")]
    OmissionByNonfaulty {
        /// Round index m (the message belongs to round m + 1).
        m: usize,
        round: usize,
        sender: usize,
        receiver: usize,
    },
    #[error("{faulty} faulty agents exceed t={t}")]
    TooManyFaulty { faulty: usize, t: usize },
}

/// Checks the two SO(t) conditions, reporting the first offending omission
/// (in (m, sender, receiver) order) before an oversized faulty set.
pub fn validate_failure_pattern(
    pattern: &FailurePattern,
    n: usize,
    t: usize,
    horizon: usize,
) -> std::result::Result<(), PatternViolation> {
    if pattern.n != n || pattern.horizon != horizon {
        return Err(PatternViolation::Shape {
            n,
            horizon,
            got_n: pattern.n,
            got_horizon: pattern.horizon,
        });
    }
    for (m, i, j) in pattern.omissions() {
        if pattern.nonfaulty.contains(i) {
            return Err(PatternViolation::OmissionByNonfaulty {
                m,
                round: m + 1,
                sender: i + 1,
                receiver: j + 1,
            });
        }
    }
    let faulty = pattern.faulty().len();
    if faulty > t {
        return Err(PatternViolation::TooManyFaulty { faulty, t });
    }
    Ok(())
}

/// True iff once a sender drops a message, every later-round message it
/// sends is dropped too.
pub fn is_crash_pattern(pattern: &FailurePattern) -> bool {
    for i in 0..pattern.n {
        let first = (0..pattern.horizon)
            .find(|&m| (0..pattern.n).any(|j| !pattern.deliver(m, i, j)));
        if let Some(m0) = first {
            for m in m0 + 1..pattern.horizon {
                if (0..pattern.n).any(|j| pattern.deliver(m, i, j)) {
                    return false;
                }
            }
        }
    }
    true
}

/// A fully specified execution request.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scenario {
    pub n: usize,
    pub t: usize,
    pub context: ContextId,
    pub protocol: String,
    pub inits: Vec<Value>,
    pub pattern: FailurePattern,
    pub horizon: usize,
    /// Skips the `t <= n - 2` and `horizon >= t + 3` checks.
    pub relax_bounds: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    n: usize,
    t: usize,
    context: ContextId,
    protocol: String,
    inits: Vec<Value>,
    #[serde(default)]
    faulty: Vec<usize>,
    #[serde(default)]
    omissions: Vec<[usize; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    relax_bounds: bool,
}

impl Scenario {
    pub fn default_horizon(t: usize) -> usize {
        t + 3
    }

    /// Parses the flat JSON scenario format and validates it.
    pub fn from_json(text: &str) -> Result<Scenario> {
        let file: ScenarioFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Scenario::from_file(file)
    }

    fn from_file(file: ScenarioFile) -> Result<Scenario> {
        let n = file.n;
        if n == 0 || n > MAX_AGENTS {
            return Err(Error::InvalidScenario(format!(
                "n must lie in 1..={MAX_AGENTS}, got {n}"
            )));
        }
        let horizon = file.horizon.unwrap_or(Self::default_horizon(file.t));
        let mut faulty = AgentSet::EMPTY;
        for &k in &file.faulty {
            faulty.insert(AgentId::new(k, n)?.index());
        }
        let mut pattern = FailurePattern::new(n, horizon, faulty);
        for &[m, s, r] in &file.omissions {
            if m >= horizon {
                return Err(Error::InvalidScenario(format!(
                    "omission [{m},{s},{r}] lies beyond horizon {horizon}"
                )));
            }
            let s = AgentId::new(s, n)?;
            let r = AgentId::new(r, n)?;
            pattern.set_deliver(m, s.index(), r.index(), false);
        }
        let scenario = Scenario {
            n,
            t: file.t,
            context: file.context,
            protocol: file.protocol,
            inits: file.inits,
            pattern,
            horizon,
            relax_bounds: file.relax_bounds,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_json(&self) -> String {
        let file = ScenarioFile {
            n: self.n,
            t: self.t,
            context: self.context,
            protocol: self.protocol.clone(),
            inits: self.inits.clone(),
            faulty: self.pattern.faulty().numbers(),
            omissions: self
                .pattern
                .omissions()
                .into_iter()
                .map(|(m, i, j)| [m, i + 1, j + 1])
                .collect(),
            horizon: Some(self.horizon),
            relax_bounds: self.relax_bounds,
        };
        serde_json::to_string(&file).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n > MAX_AGENTS {
            return Err(Error::InvalidScenario(format!(
                "n must lie in 1..={MAX_AGENTS}, got {}",
                self.n
            )));
        }
        if self.inits.len() != self.n {
            return Err(Error::InvalidScenario(format!(
                "{} initial values given for n={}",
                self.inits.len(),
                self.n
            )));
        }
        if !self.relax_bounds {
            if self.t + 2 > self.n {
                return Err(Error::InvalidScenario(format!(
                    "t={} exceeds n-2 for n={}",
                    self.t, self.n
                )));
            }
            if self.horizon < self.t + 3 {
                return Err(Error::InvalidScenario(format!(
                    "horizon {} is shorter than t+3={}",
                    self.horizon,
                    self.t + 3
                )));
            }
        }
        validate_failure_pattern(&self.pattern, self.n, self.t, self.horizon)?;
        Ok(())
    }
}

/// System size and failure bound.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct Params {
    pub n: usize,
    pub t: usize,
}

/// Parameters shared by every run of one generated system.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct RunHeader {
    pub n: usize,
    pub t: usize,
    pub context: ContextId,
    pub protocol: String,
    pub horizon: usize,
}

/// A complete run: local states at times 0..=horizon, and for every round
/// the actions taken and the messages sent before the adversary acts.
///
/// The action at time m is the one performed in round m + 1.  Every shipped
/// information-exchange protocol broadcasts the same message to all
/// recipients, so one message per sender and round is kept; what a receiver
/// got follows from the failure pattern.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub header: Arc<RunHeader>,
    pub inits: Vec<Value>,
    pub pattern: FailurePattern,
    pub(crate) states: Vec<LocalState>,
    pub(crate) actions: Vec<Action>,
    pub(crate) sent: Vec<Option<Message>>,
    pub(crate) decided: Vec<Decision>,
}

/// What makes two runs observably identical: the nonfaulty set, the
/// initial values and every local state and decision.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TrajectoryKey {
    pub nonfaulty: AgentSet,
    pub inits: Vec<Value>,
    pub states: Vec<LocalState>,
    pub decided: Vec<Decision>,
}

impl RunHeader {
    pub fn params(&self) -> Params {
        Params {
            n: self.n,
            t: self.t,
        }
    }
}

impl RunRecord {
    pub fn n(&self) -> usize {
        self.header.n
    }

    pub fn horizon(&self) -> usize {
        self.header.horizon
    }

    pub fn nonfaulty(&self) -> AgentSet {
        self.pattern.nonfaulty()
    }

    pub fn state(&self, m: usize, i: usize) -> &LocalState {
        &self.states[m * self.n() + i]
    }

    /// Action of agent `i` in round `m + 1`.
    pub fn action(&self, m: usize, i: usize) -> Action {
        self.actions[m * self.n() + i]
    }

    /// Message broadcast by `i` in round `m + 1`, before the adversary.
    pub fn sent(&self, m: usize, i: usize) -> Option<&Message> {
        self.sent[m * self.n() + i].as_ref()
    }

    /// Message from `i` that reached `j` in round `m + 1`.
    pub fn delivered(&self, m: usize, i: usize, j: usize) -> Option<&Message> {
        self.sent(m, i).filter(|_| self.pattern.deliver(m, i, j))
    }

    /// Decision ledger value of `i` at time `m`.
    pub fn decided(&self, m: usize, i: usize) -> Decision {
        self.decided[m * self.n() + i]
    }

    /// First decision of `i` as (value, round); the round is one more than
    /// the time at which the decide action was taken.
    pub fn first_decision(&self, i: usize) -> Option<(Value, usize)> {
        (0..self.horizon()).find_map(|m| match self.action(m, i) {
            Action::Decide(v) => Some((v, m + 1)),
            Action::Noop => None,
        })
    }

    pub fn scenario(&self) -> Scenario {
        Scenario {
            n: self.header.n,
            t: self.header.t,
            context: self.header.context,
            protocol: self.header.protocol.clone(),
            inits: self.inits.clone(),
            pattern: self.pattern.clone(),
            horizon: self.header.horizon,
            relax_bounds: true,
        }
    }

    pub fn trajectory_key(&self) -> TrajectoryKey {
        TrajectoryKey {
            nonfaulty: self.nonfaulty(),
            inits: self.inits.clone(),
            states: self.states.clone(),
            decided: self.decided.clone(),
        }
    }
}
