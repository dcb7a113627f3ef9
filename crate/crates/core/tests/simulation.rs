mod common;

use std::collections::HashSet;

use common::*;
use eba_core::exchange::LocalState;
use eba_core::model::{validate_failure_pattern, TrajectoryKey};
use eba_core::protocols::{concrete, Action, ActionProtocol, PBasic, PMin, POpt};
use eba_core::simulator::*;
use eba_core::{AgentSet, ContextId, Error, FailurePattern, Params, Scenario, Value};

fn first_rounds(run: &eba_core::RunRecord) -> Vec<Option<usize>> {
    (0..run.n()).map(|i| run.first_decision(i).map(|(_, r)| r)).collect()
}

#[test]
fn min_context_all_one_sends_nothing_in_round_one() {
    let mut p = FailurePattern::new(3, 4, agents(&[2]));
    p.silence(1, 0);
    let run = run(ContextId::Min, &PMin, 1, &[1, 1, 1], &p);
    for i in 0..3 {
        assert!(run.sent(0, i).is_none());
        let LocalState::Min(s) = run.state(1, i) else { panic!() };
        assert_eq!((s.time, s.init, s.decided, s.rd), (1, Value::One, None, None));
    }
}

#[test]
fn min_context_zero_spreads_in_round_two() {
    let run = run(ContextId::Min, &PMin, 1, &[0, 1, 1], &FailurePattern::failure_free(3, 4));
    assert_eq!(run.action(0, 0), Action::Decide(Value::Zero));
    assert!(run.sent(0, 0).is_some());
    for i in 1..3 {
        assert_eq!(run.state(1, i).rd(), Some(Value::Zero));
        assert_eq!(run.action(1, i), Action::Decide(Value::Zero));
    }
    assert_eq!(first_rounds(&run), vec![Some(1), Some(2), Some(2)]);
}

#[test]
fn fip_graph_grows_each_round() {
    let run = fip_run(1, &[1, 0, 1], &FailurePattern::failure_free(3, 4));
    for m in 0..=4 {
        for i in 0..3 {
            assert_eq!(graph(&run, m, i).time(), m);
        }
    }
}

#[test]
fn two_agents_deciding_zero_at_once() {
    let run = run(ContextId::Min, &PMin, 0, &[0, 0], &FailurePattern::failure_free(2, 3));
    assert_eq!(first_rounds(&run), vec![Some(1), Some(1)]);
}

fn silent_half(n: usize, t: usize) -> FailurePattern {
    let mut p = FailurePattern::new(n, t + 3, (0..t).collect());
    for k in 0..t {
        p.silence(k, 0);
    }
    p
}

#[test]
fn twenty_agents_half_silent() {
    let (n, t) = (20, 10);
    let p = silent_half(n, t);
    let ones = vec![1; n];
    let opt = fip_run(t, &ones, &p);
    let min = run(ContextId::Min, &PMin, t, &ones, &p);
    let basic = run(ContextId::Basic, &PBasic, t, &ones, &p);
    for i in t..n {
        assert_eq!(opt.first_decision(i), Some((Value::One, 3)));
        assert_eq!(min.first_decision(i), Some((Value::One, 12)));
        assert_eq!(basic.first_decision(i), Some((Value::One, 12)));
    }
}

#[test]
fn generate_run_is_deterministic() {
    let text = r#"{"n":3,"t":1,"context":"fip","protocol":"popt","inits":[0,1,1],
        "faulty":[1],"omissions":[[0,1,2],[1,1,3]]}"#;
    let scenario = Scenario::from_json(text).unwrap();
    let a = generate_run(&scenario).unwrap();
    let b = generate_run(&scenario).unwrap();
    assert_eq!(a.trajectory_key(), b.trajectory_key());
    assert_eq!(trace_lines(&a), trace_lines(&b));
    assert_eq!(a.scenario().to_json(), b.scenario().to_json());
}

#[test]
fn generate_run_rejects_bad_scenarios() {
    let text = r#"{"n":3,"t":1,"context":"min","protocol":"popt","inits":[0,1,1]}"#;
    let s = Scenario::from_json(text).unwrap();
    assert!(matches!(generate_run(&s), Err(Error::ContextMismatch { .. })));
    let text = r#"{"n":3,"t":1,"context":"min","protocol":"pmin","inits":[0,1,1],"omissions":[[0,1,2]]}"#;
    assert!(matches!(Scenario::from_json(text), Err(Error::Pattern(_))));
}

#[test]
fn trace_has_one_line_per_time() {
    let run = run(ContextId::Basic, &PBasic, 1, &[1, 1, 0], &FailurePattern::failure_free(3, 4));
    let lines = trace_lines(&run);
    assert_eq!(lines.len(), 5);
    for (m, line) in lines.iter().enumerate() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["time"], m);
        assert_eq!(v["states"].as_array().unwrap().len(), 3);
        assert_eq!(v.get("actions").is_some(), m < 4);
    }
}

#[test]
fn two_agents_no_faults_give_four_runs() {
    for (context, p) in [
        (ContextId::Min, concrete("pmin", ContextId::Min).unwrap()),
        (ContextId::Basic, concrete("pbasic", ContextId::Basic).unwrap()),
        (ContextId::Fip, concrete("popt", ContextId::Fip).unwrap()),
    ] {
        let sys = enumerate_runs(p, context, Params { n: 2, t: 0 }, 3, None).unwrap();
        assert_eq!(sys.runs().len(), 4, "{context:?}");
    }
}

#[test]
fn enumerated_patterns_are_valid() {
    let params = Params { n: 4, t: 2 };
    let sys = enumerate_runs(concrete("pmin", ContextId::Min).unwrap(), ContextId::Min, params, 5, None).unwrap();
    for run in sys.runs() {
        assert_eq!(validate_failure_pattern(&run.pattern, 4, 2, 5), Ok(()));
    }
    let keys: HashSet<_> = sys.runs().iter().map(|r| r.trajectory_key()).collect();
    assert_eq!(keys.len(), sys.runs().len());
}

/// Every raw failure table with at most one faulty agent, deduplicated.
fn brute_force(context: ContextId, protocol: &dyn ActionProtocol) -> HashSet<TrajectoryKey> {
    let (n, t, h) = (3, 1, 4);
    let mut out = HashSet::new();
    for mask in 0..1u32 << n {
        let inits: Vec<Value> = (0..n).map(|i| if mask >> i & 1 == 1 { Value::One } else { Value::Zero }).collect();
        let ff = FailurePattern::failure_free(n, h);
        out.insert(run_with(context, protocol, t, &inits, &ff).unwrap().trajectory_key());
        for f in 0..n {
            for table in 0..1u32 << (n * h) {
                let mut p = FailurePattern::new(n, h, AgentSet::singleton(f));
                for m in 0..h {
                    for j in 0..n {
                        p.set_deliver(m, f, j, table >> (m * n + j) & 1 == 0);
                    }
                }
                out.insert(run_with(context, protocol, t, &inits, &p).unwrap().trajectory_key());
            }
        }
    }
    out
}

#[test]
fn reactive_enumeration_matches_brute_force() {
    let params = Params { n: 3, t: 1 };
    for (context, id) in [(ContextId::Min, "pmin"), (ContextId::Basic, "pbasic"), (ContextId::Basic, "pmin")] {
        let p = concrete(id, context).unwrap();
        let sys = enumerate_runs(p.clone(), context, params, 4, None).unwrap();
        let reactive: HashSet<_> = sys.runs().iter().map(|r| r.trajectory_key()).collect();
        assert_eq!(reactive.len(), sys.runs().len());
        let raw = brute_force(context, p.as_ref());
        assert_eq!(reactive, raw, "{id} in {context:?}");
    }
}

#[test]
fn bound_exceeded_is_refused() {
    let p = concrete("pmin", ContextId::Min).unwrap();
    match enumerate_runs(p, ContextId::Min, Params { n: 5, t: 1 }, 4, None) {
        Err(Error::BoundExceeded { n: 5, max_n: 4, log2_estimate, .. }) => assert!(log2_estimate > 20.0),
        _ => panic!("expected a bound refusal"),
    }
    let p = concrete("popt", ContextId::Fip).unwrap();
    assert!(matches!(
        enumerate_runs(p, ContextId::Fip, Params { n: 4, t: 1 }, 4, None),
        Err(Error::BoundExceeded { max_n: 3, .. })
    ));
}

#[test]
fn filtered_enumeration_is_incomplete() {
    let p = concrete("pmin", ContextId::Min).unwrap();
    let inits = vals(&[1, 1, 1]);
    let sys = enumerate_runs(p, ContextId::Min, Params { n: 3, t: 1 }, 4, Some(&inits)).unwrap();
    assert!(!sys.is_complete());
    assert!(sys.runs().iter().all(|r| r.inits == inits));
}

#[test]
fn corresponding_run_of_itself_is_identical() {
    let mut p = FailurePattern::new(3, 4, agents(&[2]));
    p.set_deliver(1, 1, 0, false);
    let a = run(ContextId::Basic, &PBasic, 1, &[1, 1, 0], &p);
    let b = corresponding_run(&a, &PBasic).unwrap();
    assert_eq!(trace_lines(&a), trace_lines(&b));
}

#[test]
fn fip_corresponding_runs_share_states() {
    let sys = enumerate_runs(
        concrete("naive0", ContextId::Fip).unwrap(),
        ContextId::Fip,
        Params { n: 3, t: 1 },
        4,
        None,
    )
    .unwrap();
    let mut differing = 0;
    for run in sys.runs().iter().step_by(97) {
        let other = corresponding_run(run, &POpt).unwrap();
        for m in 0..=4 {
            for i in 0..3 {
                assert_eq!(run.state(m, i), other.state(m, i));
            }
        }
        if (0..3).any(|i| run.first_decision(i) != other.first_decision(i)) {
            differing += 1;
        }
    }
    assert!(differing > 0);
}

#[test]
fn limited_exchange_states_diverge_with_decisions() {
    let a = run(ContextId::Basic, &PBasic, 1, &[1, 1, 1], &FailurePattern::failure_free(3, 4));
    let b = corresponding_run(&a, &PMin).unwrap();
    assert_eq!(a.state(1, 0), b.state(1, 0));
    assert_ne!(a.state(2, 0), b.state(2, 0));
}
