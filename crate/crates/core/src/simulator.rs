//! Synchronous round engine and exhaustive enumeration of adversaries.

use std::collections::HashSet;
use std::sync::Arc;

use rayon::prelude::*;
use serde_json::json;

use crate::epistemic::System;
use crate::error::{Error, Result};
use crate::exchange::{Exchange, LocalState, Message};
use crate::model::{
    validate_failure_pattern, AgentSet, ContextId, Decision, FailurePattern, Params, RunHeader,
    RunRecord, Scenario, Value,
};
use crate::protocols::{self, Action, ActionProtocol};

/// Agent states plus the decision ledger at one time.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GlobalState {
    pub locals: Vec<LocalState>,
    pub decided: Vec<Decision>,
}

/// What every agent does and sends in one round, before the adversary.
#[derive(Clone, Debug)]
pub struct RoundPlan {
    pub actions: Vec<Action>,
    pub sent: Vec<Option<Message>>,
}

/// One action protocol running on one exchange protocol.
#[derive(Clone, Copy)]
pub struct Engine<'p> {
    pub exchange: Exchange,
    pub protocol: &'p dyn ActionProtocol,
    pub params: Params,
}

impl<'p> Engine<'p> {
    pub fn new(context: ContextId, protocol: &'p dyn ActionProtocol, params: Params) -> Result<Self> {
        if !protocol.supports(context) {
            return Err(Error::ContextMismatch {
                protocol: protocol.id().to_string(),
                context,
            });
        }
        Ok(Engine {
            exchange: Exchange::new(context, params.n),
            protocol,
            params,
        })
    }

    pub fn initial(&self, inits: &[Value]) -> GlobalState {
        GlobalState {
            locals: inits
                .iter()
                .enumerate()
                .map(|(i, &v)| self.exchange.initial_state(i, v))
                .collect(),
            decided: vec![None; inits.len()],
        }
    }

    pub fn plan(&self, g: &GlobalState) -> RoundPlan {
        let actions: Vec<Action> = g
            .locals
            .iter()
            .zip(&g.decided)
            .map(|(s, &d)| self.protocol.action(s, d, self.params))
            .collect();
        let sent = g
            .locals
            .iter()
            .zip(&actions)
            .map(|(s, &a)| self.exchange.broadcast(s, a))
            .collect();
        RoundPlan { actions, sent }
    }

    /// Applies the plan under `deliver(i, j)` for this round.
    pub fn advance(
        &self,
        g: &GlobalState,
        plan: &RoundPlan,
        deliver: impl Fn(usize, usize) -> bool,
    ) -> Result<GlobalState> {
        let n = self.params.n;
        let mut locals = Vec::with_capacity(n);
        let mut decided = Vec::with_capacity(n);
        for j in 0..n {
            let inbox: Vec<Option<&Message>> = (0..n)
                .map(|i| plan.sent[i].as_ref().filter(|_| deliver(i, j)))
                .collect();
            locals.push(self.exchange.apply_transition(&g.locals[j], plan.actions[j], &inbox)?);
            decided.push(match plan.actions[j] {
                Action::Decide(v) => Some(v),
                Action::Noop => g.decided[j],
            });
        }
        Ok(GlobalState { locals, decided })
    }

    /// One full round `m + 1` under the pattern.
    pub fn step_round(
        &self,
        pattern: &FailurePattern,
        g: &GlobalState,
        m: usize,
    ) -> Result<(GlobalState, RoundPlan)> {
        let plan = self.plan(g);
        let next = self.advance(g, &plan, |i, j| pattern.deliver(m, i, j))?;
        Ok((next, plan))
    }
}

/// A run under construction; arrays grow one time step at a time.
#[derive(Clone)]
struct Track {
    states: Vec<LocalState>,
    actions: Vec<Action>,
    sent: Vec<Option<Message>>,
    decided: Vec<Decision>,
}

impl Track {
    fn start(g: &GlobalState) -> Track {
        Track {
            states: g.locals.clone(),
            actions: Vec::new(),
            sent: Vec::new(),
            decided: g.decided.clone(),
        }
    }

    fn current(&self, n: usize) -> GlobalState {
        let from = self.states.len() - n;
        GlobalState {
            locals: self.states[from..].to_vec(),
            decided: self.decided[from..].to_vec(),
        }
    }

    fn push(&mut self, plan: &RoundPlan, next: GlobalState) {
        self.actions.extend_from_slice(&plan.actions);
        self.sent.extend(plan.sent.iter().cloned());
        self.states.extend(next.locals);
        self.decided.extend(next.decided);
    }

    fn finish(self, header: Arc<RunHeader>, inits: Vec<Value>, pattern: FailurePattern) -> RunRecord {
        RunRecord {
            header,
            inits,
            pattern,
            states: self.states,
            actions: self.actions,
            sent: self.sent,
            decided: self.decided,
        }
    }
}

fn header(context: ContextId, protocol: &str, params: Params, horizon: usize) -> Arc<RunHeader> {
    Arc::new(RunHeader {
        n: params.n,
        t: params.t,
        context,
        protocol: protocol.to_string(),
        horizon,
    })
}

/// Runs `protocol` from `inits` under `pattern` to the pattern's horizon.
pub fn run_with(
    context: ContextId,
    protocol: &dyn ActionProtocol,
    t: usize,
    inits: &[Value],
    pattern: &FailurePattern,
) -> Result<RunRecord> {
    let params = Params { n: inits.len(), t };
    let horizon = pattern.horizon();
    validate_failure_pattern(pattern, params.n, t, horizon)?;
    let engine = Engine::new(context, protocol, params)?;
    let mut g = engine.initial(inits);
    let mut track = Track::start(&g);
    for m in 0..horizon {
        let (next, plan) = engine.step_round(pattern, &g, m)?;
        track.push(&plan, next.clone());
        g = next;
    }
    Ok(track.finish(
        header(context, protocol.id(), params, horizon),
        inits.to_vec(),
        pattern.clone(),
    ))
}

pub fn generate_run(scenario: &Scenario) -> Result<RunRecord> {
    scenario.validate()?;
    let protocol = protocols::concrete(&scenario.protocol, scenario.context)?;
    run_with(
        scenario.context,
        protocol.as_ref(),
        scenario.t,
        &scenario.inits,
        &scenario.pattern,
    )
}

/// The run of `other` from the same initial values under the same pattern.
pub fn corresponding_run(run: &RunRecord, other: &dyn ActionProtocol) -> Result<RunRecord> {
    run_with(run.header.context, other, run.header.t, &run.inits, &run.pattern)
}

/// Largest `n` enumerated per context.
#[derive(Clone, Copy, Debug)]
pub struct EnumerationLimits {
    pub max_n_min_basic: usize,
    pub max_n_fip: usize,
}

impl Default for EnumerationLimits {
    fn default() -> Self {
        EnumerationLimits {
            max_n_min_basic: 4,
            max_n_fip: 3,
        }
    }
}

/// log2 of the number of raw (initial values, faulty set, F-table) choices.
pub fn raw_log2_estimate(params: Params, horizon: usize) -> f64 {
    let Params { n, t } = params;
    let mut total = 0f64;
    let mut binom = 1f64;
    for k in 0..=t.min(n) {
        if k > 0 {
            binom = binom * (n - k + 1) as f64 / k as f64;
        }
        total += binom * 2f64.powf((k * n * horizon) as f64);
    }
    n as f64 + total.log2()
}

fn check_limits(context: ContextId, params: Params, horizon: usize, limits: EnumerationLimits) -> Result<()> {
    let max_n = match context {
        ContextId::Fip => limits.max_n_fip,
        _ => limits.max_n_min_basic,
    };
    if params.n > max_n {
        return Err(Error::BoundExceeded {
            n: params.n,
            t: params.t,
            horizon,
            context,
            log2_estimate: raw_log2_estimate(params, horizon),
            max_n,
        });
    }
    Ok(())
}

/// All initial configurations, or just the filter.
fn init_configs(n: usize, filter: Option<&[Value]>) -> Vec<Vec<Value>> {
    match filter {
        Some(f) => vec![f.to_vec()],
        None => (0..1u32 << n)
            .map(|mask| {
                (0..n)
                    .map(|i| if mask >> i & 1 == 1 { Value::One } else { Value::Zero })
                    .collect()
            })
            .collect(),
    }
}

/// Faulty sets of size at most t, smallest first.
pub fn faulty_sets(n: usize, t: usize) -> Vec<AgentSet> {
    let mut sets: Vec<AgentSet> = (0..1u32 << n)
        .map(AgentSet::from_bits)
        .filter(|s| s.len() <= t)
        .collect();
    sets.sort_by_key(|s| (s.len(), s.bits()));
    sets
}

struct Lockstep<'a> {
    engines: Vec<Engine<'a>>,
    headers: Vec<Arc<RunHeader>>,
    horizon: usize,
}

impl Lockstep<'_> {
    fn explore(
        &self,
        m: usize,
        inits: &[Value],
        pattern: &mut FailurePattern,
        tracks: Vec<Track>,
        out: &mut Vec<Vec<RunRecord>>,
    ) -> Result<()> {
        let n = inits.len();
        if m == self.horizon {
            for ((track, header), runs) in tracks.into_iter().zip(&self.headers).zip(out.iter_mut()) {
                runs.push(track.finish(Arc::clone(header), inits.to_vec(), pattern.clone()));
            }
            return Ok(());
        }
        let globals: Vec<GlobalState> = tracks.iter().map(|tr| tr.current(n)).collect();
        let plans: Vec<RoundPlan> = self
            .engines
            .iter()
            .zip(&globals)
            .map(|(e, g)| e.plan(g))
            .collect();
        let faulty = pattern.faulty();
        let bits: Vec<(usize, usize)> = faulty
            .iter()
            .filter(|&i| plans.iter().any(|p| p.sent[i].is_some()))
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .collect();
        let mut seen = HashSet::new();
        for mask in 0u64..1 << bits.len() {
            for (b, &(i, j)) in bits.iter().enumerate() {
                pattern.set_deliver(m, i, j, mask >> b & 1 == 1);
            }
            let mut nexts = Vec::with_capacity(self.engines.len());
            for ((e, g), plan) in self.engines.iter().zip(&globals).zip(&plans) {
                nexts.push(e.advance(g, plan, |i, j| pattern.deliver(m, i, j))?);
            }
            if !seen.insert(nexts.clone()) {
                continue;
            }
            let mut branch = tracks.clone();
            for ((tr, plan), next) in branch.iter_mut().zip(&plans).zip(nexts) {
                tr.push(plan, next);
            }
            self.explore(m + 1, inits, pattern, branch, out)?;
        }
        for &(i, j) in &bits {
            pattern.set_deliver(m, i, j, true);
        }
        Ok(())
    }
}

/// Enumerates all runs of several protocols under shared adversaries.
///
/// The adversary branches only on messages that some protocol actually
/// sends from a faulty agent, and branches leading to identical global
/// states are merged, so each returned run stands for one observable
/// trajectory (with one representative pattern).  The i-th output vector
/// belongs to the i-th protocol and runs at equal positions correspond.
pub fn enumerate_lockstep(
    protocols: &[Arc<dyn ActionProtocol>],
    context: ContextId,
    params: Params,
    horizon: usize,
    init_filter: Option<&[Value]>,
    limits: EnumerationLimits,
) -> Result<Vec<Vec<RunRecord>>> {
    check_limits(context, params, horizon, limits)?;
    if let Some(f) = init_filter {
        if f.len() != params.n {
            return Err(Error::InvalidScenario(format!(
                "init filter has {} values for n={}",
                f.len(),
                params.n
            )));
        }
    }
    let engines = protocols
        .iter()
        .map(|p| Engine::new(context, p.as_ref(), params))
        .collect::<Result<Vec<_>>>()?;
    let lock = Lockstep {
        headers: protocols
            .iter()
            .map(|p| header(context, p.id(), params, horizon))
            .collect(),
        engines,
        horizon,
    };
    let jobs: Vec<(Vec<Value>, AgentSet)> = init_configs(params.n, init_filter)
        .into_iter()
        .flat_map(|inits| {
            faulty_sets(params.n, params.t)
                .into_iter()
                .map(move |f| (inits.clone(), f))
        })
        .collect();
    let parts = jobs
        .par_iter()
        .map(|(inits, faulty)| {
            let mut pattern = FailurePattern::new(params.n, horizon, *faulty);
            let tracks = lock
                .engines
                .iter()
                .map(|e| Track::start(&e.initial(inits)))
                .collect();
            let mut out = vec![Vec::new(); protocols.len()];
            lock.explore(0, inits, &mut pattern, tracks, &mut out)?;
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut merged = vec![Vec::new(); protocols.len()];
    for part in parts {
        for (dst, src) in merged.iter_mut().zip(part) {
            dst.extend(src);
        }
    }
    Ok(merged)
}

/// The complete run set of one protocol.  With an init filter the result
/// is marked incomplete, since knowledge depends on all configurations.
pub fn enumerate_runs(
    protocol: Arc<dyn ActionProtocol>,
    context: ContextId,
    params: Params,
    horizon: usize,
    init_filter: Option<&[Value]>,
) -> Result<System> {
    enumerate_runs_with_limits(protocol, context, params, horizon, init_filter, EnumerationLimits::default())
}

pub fn enumerate_runs_with_limits(
    protocol: Arc<dyn ActionProtocol>,
    context: ContextId,
    params: Params,
    horizon: usize,
    init_filter: Option<&[Value]>,
    limits: EnumerationLimits,
) -> Result<System> {
    let mut runs = enumerate_lockstep(&[protocol], context, params, horizon, init_filter, limits)?;
    let runs = runs.pop().expect("one protocol");
    Ok(System::new(runs, context, params, horizon, init_filter.is_none()))
}

/// One JSON object per time index, for line-oriented trace dumps.
pub fn trace_lines(run: &RunRecord) -> Vec<String> {
    let n = run.n();
    (0..=run.horizon())
        .map(|m| {
            let states: Vec<_> = (0..n).map(|i| run.state(m, i).to_json()).collect();
            let decided: Vec<_> = (0..n).map(|i| run.decided(m, i).map(|v| v.bit())).collect();
            let mut obj = json!({
                "time": m,
                "states": states,
                "decided": decided,
            });
            if m < run.horizon() {
                let actions: Vec<String> = (0..n).map(|i| run.action(m, i).to_string()).collect();
                let sent: Vec<_> = (0..n)
                    .map(|i| run.sent(m, i).map(|msg| format!("{:?}", msg.class)))
                    .collect();
                let delivered: Vec<Vec<u8>> = (0..n)
                    .map(|i| (0..n).map(|j| u8::from(run.delivered(m, i, j).is_some())).collect())
                    .collect();
                obj["round"] = json!(m + 1);
                obj["actions"] = json!(actions);
                obj["sent"] = json!(sent);
                obj["delivered"] = json!(delivered);
            }
            obj.to_string()
        })
        .collect()
}
