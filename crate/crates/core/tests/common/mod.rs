#![allow(dead_code)]

use std::sync::Arc;

use eba_core::commgraph::CommGraph;
use eba_core::exchange::LocalState;
use eba_core::protocols::{ActionProtocol, POpt};
use eba_core::simulator::run_with;
use eba_core::{AgentSet, ContextId, FailurePattern, RunRecord, Value};

pub fn vals(bits: &[u8]) -> Vec<Value> {
    bits.iter().map(|&b| Value::from_bit(b.into()).unwrap()).collect()
}

/// Zero-based agent set from one-based numbers.
pub fn agents(numbers: &[usize]) -> AgentSet {
    numbers.iter().map(|k| k - 1).collect()
}

pub fn run(context: ContextId, protocol: &dyn ActionProtocol, t: usize, inits: &[u8], pattern: &FailurePattern) -> RunRecord {
    run_with(context, protocol, t, &vals(inits), pattern).unwrap()
}

pub fn fip_run(t: usize, inits: &[u8], pattern: &FailurePattern) -> RunRecord {
    run(ContextId::Fip, &POpt, t, inits, pattern)
}

pub fn graph(run: &RunRecord, m: usize, i: usize) -> Arc<CommGraph> {
    match run.state(m, i) {
        LocalState::Fip(s) => Arc::clone(&s.graph),
        other => panic!("not a full-information state: {other:?}"),
    }
}

/// Ground-truth hears-from on a full-information run, where every agent
/// sends in every round.
pub fn hears_in_run(run: &RunRecord, src: (usize, usize), dst: (usize, usize)) -> bool {
    let n = run.n();
    if src.1 > dst.1 {
        return false;
    }
    let mut reach = vec![false; n];
    reach[src.0] = true;
    for m in src.1..dst.1 {
        let mut next = reach.clone();
        for k in 0..n {
            for j in 0..n {
                if reach[k] && run.pattern.deliver(m, k, j) {
                    next[j] = true;
                }
            }
        }
        reach = next;
    }
    reach[dst.0]
}
