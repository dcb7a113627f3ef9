mod common;

use common::*;
use eba_core::commgraph::*;
use eba_core::protocols::{Action, POpt};
use eba_core::verification::detect_zero_chains;
use eba_core::{AgentSet, Error, FailurePattern, Params, Value};

const P31: Params = Params { n: 3, t: 1 };

#[test]
fn merge_labels_missing_sender_as_omitted() {
    let own = CommGraph::new(3, 0, Value::One);
    let other = CommGraph::new(3, 2, Value::Zero);
    let g = merge_graphs(&own, &[Some(&own), None, Some(&other)]).unwrap();
    assert_eq!(g.time(), 1);
    assert_eq!(g.label(1, 0, 1), Label::Omitted);
    assert_eq!(g.label(0, 0, 1), Label::Delivered);
    assert_eq!(g.label(2, 0, 1), Label::Delivered);
    assert_eq!(g.pref(2), Some(Value::Zero));
    assert_eq!(g.pref(1), None);
}

#[test]
fn merge_with_nothing_received() {
    let own = CommGraph::new(3, 1, Value::One);
    let g = merge_graphs(&own, &[None, None, None]).unwrap();
    for from in 0..3 {
        for to in 0..3 {
            let expected = if to == 1 { Label::Omitted } else { Label::Unknown };
            assert_eq!(g.label(from, to, 1), expected, "{from}->{to}");
        }
    }
}

#[test]
fn merge_rejects_conflicts_and_bad_shapes() {
    let a = CommGraph::new(3, 0, Value::One);
    let b = CommGraph::new(3, 1, Value::One);
    let mut a1 = merge_graphs(&a, &[Some(&a), Some(&b), None]).unwrap();
    let b1 = merge_graphs(&b, &[Some(&a), Some(&b), None]).unwrap();
    // b1 says 2's round-1 message reached 2; a forged a1 claims otherwise.
    a1.set_label(1, 1, 1, Label::Omitted);
    assert!(matches!(
        merge_graphs(&a1, &[Some(&a1), Some(&b1), None]),
        Err(Error::LabelConflict { from_agent: 2, from_time: 0, to_agent: 2, to_time: 1 })
    ));
    assert!(matches!(merge_graphs(&a1, &[Some(&a)]), Err(Error::InboxArity { expected: 3, got: 1 })));
    assert!(matches!(
        merge_graphs(&a1, &[Some(&a), None, None]),
        Err(Error::GraphShape(_))
    ));
}

#[test]
fn relay_reveals_remote_delivery() {
    // Agent 3 is faulty and silent to agent 1 in round 1, so agent 1 learns
    // about 3's round-1 message to 2 only from 2's graph in round 2.
    let mut p = FailurePattern::new(3, 4, agents(&[3]));
    p.set_deliver(0, 2, 0, false);
    let run = fip_run(1, &[1, 1, 1], &p);
    let g1 = graph(&run, 1, 0);
    assert_eq!(g1.label(2, 1, 1), Label::Unknown);
    assert_eq!(g1.label(2, 0, 1), Label::Omitted);
    let g2 = graph(&run, 2, 0);
    assert_eq!(g2.label(2, 1, 1), Label::Delivered);
    assert_eq!(g2.time(), 2);
    assert_eq!(g2.bit_size(), 2 * 9 * 2);
}

#[test]
fn known_faulty_examples() {
    let p = FailurePattern::failure_free(3, 4);
    let run = fip_run(1, &[0, 1, 1], &p);
    for i in 0..3 {
        for j in 0..3 {
            assert!(known_faulty(j, 0, &graph(&run, 3, i), P31).is_empty());
        }
    }

    let mut p = FailurePattern::new(3, 4, agents(&[2]));
    p.silence(1, 0);
    let run = fip_run(1, &[1, 1, 1], &p);
    for i in 0..3 {
        assert!(known_faulty(i, 1, &graph(&run, 1, i), P31).contains(1));
    }

    // 1 is silent to 2 only in round 1; 3 learns of it through 2's graph.
    let mut p = FailurePattern::new(3, 4, agents(&[1]));
    p.set_deliver(0, 0, 1, false);
    let run = fip_run(1, &[1, 1, 1], &p);
    let g = graph(&run, 2, 2);
    assert!(known_faulty(1, 1, &g, P31).contains(0));
    assert!(known_faulty(2, 2, &g, P31).contains(0));
    assert!(!known_faulty(2, 1, &g, P31).contains(0));
}

#[test]
fn dist_known_faulty_examples() {
    let params = Params { n: 4, t: 2 };
    let mut p = FailurePattern::new(4, 5, agents(&[1, 2]));
    p.silence(0, 0);
    p.silence(1, 0);
    let run = eba_core::simulator::run_with(
        eba_core::ContextId::Fip,
        &POpt,
        2,
        &vals(&[1, 1, 1, 1]),
        &p,
    )
    .unwrap();
    let g = graph(&run, 2, 2);
    assert!(dist_known_faulty(AgentSet::EMPTY, 1, &g, params).is_empty());
    for k in 0..4 {
        assert_eq!(
            dist_known_faulty(AgentSet::singleton(k), 1, &g, params),
            known_faulty(k, 1, &g, params)
        );
    }
    assert_eq!(dist_known_faulty(run.nonfaulty(), 1, &g, params), agents(&[1, 2]));
}

#[test]
fn known_action_examples() {
    let p = FailurePattern::failure_free(3, 4);
    let run = fip_run(1, &[0, 1, 1], &p);
    let g = graph(&run, 1, 1);
    assert_eq!(known_action(0, 0, &g, P31, &POpt), Some(Action::Decide(Value::Zero)));
    // (2, 1) is not heard from by (1, 1).
    assert_eq!(known_action(2, 1, &g, P31, &POpt), None);

    let run = fip_run(1, &[1, 1, 1], &p);
    for i in 0..3 {
        let g = graph(&run, 1, i);
        for j in 0..3 {
            assert_eq!(known_action(j, 0, &g, P31, &POpt), Some(Action::Noop));
        }
    }
}

#[test]
fn known_values_examples() {
    let p = FailurePattern::failure_free(3, 4);
    let run = fip_run(1, &[0, 1, 1], &p);
    assert_eq!(known_values(2, 0, &graph(&run, 0, 2), P31).to_vec(), vec![Value::One]);
    assert!(known_values(1, 1, &graph(&run, 1, 0), P31).is_empty());
    assert_eq!(known_values(1, 1, &graph(&run, 1, 1), P31).to_vec(), Value::BOTH.to_vec());
}

#[test]
fn hears_from_examples() {
    let mut p = FailurePattern::new(3, 4, agents(&[1]));
    // 1 reaches 3 only through 2.
    p.set_deliver(0, 0, 2, false);
    p.set_deliver(1, 0, 2, false);
    let run = fip_run(1, &[1, 1, 1], &p);
    let g = graph(&run, 2, 2);
    assert!(hears_from((2, 0), (2, 2), &g));
    assert!(hears_from((2, 1), (2, 2), &g));
    assert!(hears_from((1, 0), (2, 1), &g));
    assert!(!hears_from((0, 0), (2, 1), &g));
    assert!(hears_from((0, 0), (2, 2), &g));
    assert!(!hears_from((0, 1), (2, 2), &g));
}

#[test]
fn last_heard_examples() {
    let p = FailurePattern::failure_free(3, 4);
    let run = fip_run(1, &[1, 1, 1], &p);
    assert_eq!(last_heard(1, &graph(&run, 0, 0)), -1);
    for m in 1..=4 {
        let g = graph(&run, m, 0);
        assert_eq!(last_heard(0, &g), m as i64);
        assert_eq!(last_heard(1, &g), m as i64 - 1);
    }

    let mut p = FailurePattern::new(3, 4, agents(&[2]));
    p.silence(1, 1);
    let run = fip_run(1, &[1, 1, 1], &p);
    assert_eq!(last_heard(1, &graph(&run, 3, 0)), 0);

    let mut p = FailurePattern::new(3, 4, agents(&[2]));
    for m in 1..4 {
        p.set_deliver(m, 1, 0, false);
    }
    let run = fip_run(1, &[1, 1, 1], &p);
    assert_eq!(last_heard(1, &graph(&run, 3, 0)), 1);
}

#[test]
fn longest_known_chain_examples() {
    let p = FailurePattern::failure_free(3, 4);
    let run = fip_run(1, &[1, 1, 1], &p);
    assert_eq!(longest_known_chain(&graph(&run, 3, 0), P31, &POpt), None);

    let run = fip_run(1, &[0, 1, 1], &p);
    assert_eq!(longest_known_chain(&graph(&run, 1, 1), P31, &POpt), Some(0));

    // 1 (init 0, faulty) tells only 2 in round 1; 2 relays its decision.
    let mut p = FailurePattern::new(3, 4, agents(&[1]));
    p.silence(0, 0);
    p.set_deliver(0, 0, 1, true);
    let run = fip_run(1, &[0, 1, 1], &p);
    let chains = detect_zero_chains(&run);
    assert_eq!(chains, vec![vec![(0, 0), (1, 1), (2, 2)]]);
    assert_eq!(longest_known_chain(&graph(&run, 2, 2), P31, &POpt), Some(1));
    assert_eq!(longest_known_chain(&graph(&run, 3, 2), P31, &POpt), Some(2));
}

#[test]
fn cond0_examples() {
    let p = FailurePattern::failure_free(3, 4);
    let run = fip_run(1, &[0, 1, 1], &p);
    assert!(cond0(0, 0, &graph(&run, 0, 0), P31, &POpt));
    assert!(!cond0(1, 0, &graph(&run, 0, 1), P31, &POpt));
    assert!(cond0(1, 1, &graph(&run, 1, 1), P31, &POpt));
    let run = fip_run(1, &[1, 1, 1], &p);
    assert!(!cond0(1, 1, &graph(&run, 1, 1), P31, &POpt));
}

#[test]
fn cond1_examples() {
    let p = FailurePattern::failure_free(3, 4);
    let run = fip_run(1, &[1, 1, 1], &p);
    assert!(!cond1(0, 0, &graph(&run, 0, 0), P31, &POpt));
    for i in 0..3 {
        assert!(cond1(i, 1, &graph(&run, 1, i), P31, &POpt));
        assert_eq!(run.action(1, i), Action::Decide(Value::One));
    }

    // Silent faulty agent 1 could be hiding a 0 from everyone at time 1.
    let mut p = FailurePattern::new(3, 4, agents(&[1]));
    p.silence(0, 0);
    let run = fip_run(1, &[1, 1, 1], &p);
    assert!(!cond1(1, 1, &graph(&run, 1, 1), P31, &POpt));
    assert_eq!(run.action(1, 1), Action::Noop);
}

#[test]
fn common_examples() {
    let p = FailurePattern::failure_free(3, 4);
    let run = fip_run(1, &[1, 1, 1], &p);
    for v in Value::BOTH {
        assert!(!common_v(0, 0, &graph(&run, 0, 0), v, P31, &POpt));
        assert!(!common_v(0, 1, &graph(&run, 1, 0), v, P31, &POpt));
    }

    let (n, t) = (20, 10);
    let params = Params { n, t };
    let mut p = FailurePattern::new(n, t + 3, (0..t).collect());
    for k in 0..t {
        p.silence(k, 0);
    }
    let run = eba_core::simulator::run_with(
        eba_core::ContextId::Fip,
        &POpt,
        t,
        &vec![Value::One; n],
        &p,
    )
    .unwrap();
    for i in t..n {
        let g = graph(&run, 2, i);
        assert!(common_v(i, 2, &g, Value::One, params, &POpt));
        assert!(!common_v(i, 2, &g, Value::Zero, params, &POpt));
        assert!(!common_v(i, 1, &graph(&run, 1, i), Value::One, params, &POpt));
    }
}

#[test]
fn dot_rendering() {
    let own = CommGraph::new(2, 0, Value::Zero);
    let g = merge_graphs(&own, &[Some(&own), None]).unwrap();
    let dot = g.to_dot();
    assert!(dot.starts_with("digraph G_1_1 {"));
    assert!(dot.contains("\"(1,0)\" [label=\"(1,0) p=0\"];"));
    assert!(dot.contains("\"(2,0)\" [label=\"(2,0) p=?\"];"));
    assert!(dot.contains("\"(2,0)\" -> \"(1,1)\" [label=0];"));
    assert!(dot.contains("\"(1,0)\" -> \"(2,1)\" [label=?];"));
    assert!(dot.trim_end().ends_with('}'));
}
