mod common;

use common::*;
use eba_core::commgraph::{known_faulty, GraphAnalysis, Label};
use eba_core::epistemic::Formula;
use eba_core::exchange::{LocalState, MessageClass};
use eba_core::metrics::{bits_sent, run_scenario_str};
use eba_core::model::{is_crash_pattern, validate_failure_pattern};
use eba_core::protocols::{Action, POpt};
use eba_core::simulator::{generate_run, trace_lines};
use eba_core::{AgentSet, ContextId, FailurePattern, Params, RunRecord, Scenario, Value};
use proptest::prelude::*;

fn value() -> impl Strategy<Value = Value> {
    prop_oneof![Just(Value::Zero), Just(Value::One)]
}

/// A valid scenario: faulty agents drop arbitrary messages, nonfaulty
/// agents drop none.
fn scenario(max_n: usize, contexts: Vec<ContextId>) -> impl Strategy<Value = Scenario> {
    (2..=max_n, proptest::sample::select(contexts))
        .prop_flat_map(|(n, context)| (Just(n), 0..=n - 2, Just(context)))
        .prop_flat_map(|(n, t, context)| {
            let h = t + 3;
            let protocols = match context {
                ContextId::Min => vec!["pmin"],
                ContextId::Basic => vec!["pbasic", "pmin"],
                ContextId::Fip => vec!["popt", "naive0"],
            };
            (
                Just((n, t, context)),
                proptest::sample::select(protocols),
                proptest::collection::vec(value(), n),
                proptest::sample::subsequence((0..n).collect::<Vec<_>>(), 0..=t),
                proptest::collection::vec(any::<bool>(), h * n * n),
            )
        })
        .prop_map(|((n, t, context), protocol, inits, faulty, drops)| {
            let h = t + 3;
            let faulty: AgentSet = faulty.into_iter().collect();
            let mut pattern = FailurePattern::new(n, h, faulty);
            for m in 0..h {
                for i in faulty.iter() {
                    for j in 0..n {
                        if drops[(m * n + i) * n + j] {
                            pattern.set_deliver(m, i, j, false);
                        }
                    }
                }
            }
            Scenario {
                n,
                t,
                context,
                protocol: protocol.to_string(),
                inits,
                pattern,
                horizon: h,
                relax_bounds: false,
            }
        })
}

fn any_scenario() -> impl Strategy<Value = Scenario> {
    scenario(5, vec![ContextId::Min, ContextId::Basic, ContextId::Fip])
}

fn fip_scenario() -> impl Strategy<Value = Scenario> {
    scenario(4, vec![ContextId::Fip])
}

fn formula() -> impl Strategy<Value = Formula> {
    let leaf = prop_oneof![
        Just(Formula::True),
        Just(Formula::False),
        Just(Formula::TFaulty),
        Just(Formula::DistTFaulty),
        (0..4usize, value()).prop_map(|(i, v)| Formula::Init(i, v)),
        (0..4usize, proptest::option::of(value())).prop_map(|(i, d)| Formula::Decided(i, d)),
        (0..6usize).prop_map(Formula::Time),
        (0..4usize).prop_map(Formula::Nonfaulty),
        (0..4usize, value()).prop_map(|(i, v)| Formula::JDecided(i, v)),
        (0..4usize, value()).prop_map(|(i, v)| Formula::Deciding(i, v)),
        value().prop_map(Formula::Exists),
        value().prop_map(Formula::NoDecidedN),
    ];
    leaf.prop_recursive(4, 32, 3, |inner| {
        prop_oneof![
            inner.clone().prop_map(Formula::not),
            proptest::collection::vec(inner.clone(), 1..4).prop_map(Formula::and),
            proptest::collection::vec(inner.clone(), 1..4).prop_map(Formula::or),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Formula::implies(a, b)),
            (0..4usize, inner.clone()).prop_map(|(i, p)| Formula::k(i, p)),
            inner.clone().prop_map(Formula::e),
            inner.clone().prop_map(Formula::c),
            inner.clone().prop_map(Formula::next),
            inner.prop_map(Formula::prev),
        ]
    })
}

fn class_of(action: Action) -> MessageClass {
    match action {
        Action::Decide(Value::Zero) => MessageClass::M0,
        Action::Decide(Value::One) => MessageClass::M1,
        Action::Noop => MessageClass::M2,
    }
}

fn graph_at(run: &RunRecord, m: usize, i: usize) -> std::sync::Arc<eba_core::commgraph::CommGraph> {
    graph(run, m, i)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn generated_patterns_validate(s in any_scenario()) {
        prop_assert_eq!(validate_failure_pattern(&s.pattern, s.n, s.t, s.horizon), Ok(()));
        let back = Scenario::from_json(&s.to_json()).unwrap();
        prop_assert_eq!(back, s);
    }

    #[test]
    fn crash_patterns_validate(n in 2usize..7, crash in proptest::collection::vec(proptest::option::of(0usize..5), 6)) {
        let t = n - 2;
        let h = t + 3;
        let faulty: AgentSet = (0..n).filter(|&i| crash[i].is_some()).take(t).collect();
        let mut p = FailurePattern::new(n, h, faulty);
        for i in faulty.iter() {
            p.silence(i, crash[i].unwrap().min(h));
        }
        prop_assert!(is_crash_pattern(&p));
        prop_assert_eq!(validate_failure_pattern(&p, n, t, h), Ok(()));
    }

    #[test]
    fn runs_are_deterministic_and_synchronous(s in any_scenario()) {
        let a = generate_run(&s).unwrap();
        let b = generate_run(&s).unwrap();
        prop_assert_eq!(trace_lines(&a), trace_lines(&b));
        for m in 0..=s.horizon {
            for i in 0..s.n {
                prop_assert_eq!(a.state(m, i).time(), m);
                prop_assert_eq!(a.state(m, i).init(), s.inits[i]);
            }
        }
    }

    #[test]
    fn decisions_are_unique_and_timely(s in any_scenario()) {
        let run = generate_run(&s).unwrap();
        for i in 0..s.n {
            let decides = (0..s.horizon).filter(|&m| run.action(m, i) != Action::Noop).count();
            prop_assert!(decides <= 1);
            if run.nonfaulty().contains(i) {
                let round = run.first_decision(i).map(|(_, r)| r);
                prop_assert!(round.is_some_and(|r| r <= s.t + 2), "agent {} round {:?}", i + 1, round);
            }
        }
    }

    #[test]
    fn message_classes_follow_actions(s in any_scenario()) {
        let run = generate_run(&s).unwrap();
        for m in 0..s.horizon {
            for i in 0..s.n {
                let action = run.action(m, i);
                match run.sent(m, i) {
                    Some(msg) => prop_assert_eq!(msg.class, class_of(action)),
                    None => prop_assert_eq!(action, Action::Noop),
                }
                if s.context != ContextId::Fip && run.decided(m, i).is_some() {
                    prop_assert!(run.sent(m, i).is_none());
                }
            }
        }
    }

    #[test]
    fn rd_records_last_round_decisions(s in scenario(6, vec![ContextId::Min, ContextId::Basic])) {
        let run = generate_run(&s).unwrap();
        for m in 0..s.horizon {
            for j in 0..s.n {
                let classes: Vec<MessageClass> = (0..s.n).filter_map(|i| run.delivered(m, i, j)).map(|msg| msg.class).collect();
                let expected = if classes.contains(&MessageClass::M0) {
                    Some(Value::Zero)
                } else if classes.contains(&MessageClass::M1) {
                    Some(Value::One)
                } else {
                    None
                };
                prop_assert_eq!(run.state(m + 1, j).rd(), expected);
            }
        }
    }

    #[test]
    fn pmin_sends_n_squared_bits(s in scenario(6, vec![ContextId::Min])) {
        let run = generate_run(&s).unwrap();
        prop_assert_eq!(bits_sent(&run), s.n * s.n);
    }

    #[test]
    fn graphs_grow_monotonically(s in fip_scenario()) {
        let run = generate_run(&s).unwrap();
        for i in 0..s.n {
            for m in 1..=s.horizon {
                let (old, new) = (graph_at(&run, m - 1, i), graph_at(&run, m, i));
                for j in 0..s.n {
                    if let Some(v) = old.pref(j) {
                        prop_assert_eq!(new.pref(j), Some(v));
                    }
                }
                for round in 1..m {
                    for a in 0..s.n {
                        for b in 0..s.n {
                            let l = old.label(a, b, round);
                            if l != Label::Unknown {
                                prop_assert_eq!(new.label(a, b, round), l);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn graphs_agree_with_the_run(s in fip_scenario()) {
        let run = generate_run(&s).unwrap();
        let params = Params { n: s.n, t: s.t };
        for i in 0..s.n {
            for m in 0..=s.horizon {
                let g = graph_at(&run, m, i);
                let a = GraphAnalysis::with_rule(&g, params, &POpt);
                let view = a.view(i, m, None);
                for k in 0..s.n {
                    for mk in 0..=m {
                        prop_assert_eq!(view.heard(k, mk), hears_in_run(&run, (k, mk), (i, m)));
                    }
                    prop_assert_eq!(g.pref(k).is_some(), view.heard(k, 0));
                    if let Some(v) = g.pref(k) {
                        prop_assert_eq!(v, s.inits[k]);
                    }
                }
                for round in 1..=m {
                    for a in 0..s.n {
                        for b in 0..s.n {
                            match g.label(a, b, round) {
                                Label::Unknown => prop_assert!(!view.heard(b, round)),
                                Label::Delivered => prop_assert!(run.pattern.deliver(round - 1, a, b)),
                                Label::Omitted => prop_assert!(!run.pattern.deliver(round - 1, a, b)),
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn known_faulty_is_sound_and_monotone(s in fip_scenario()) {
        let run = generate_run(&s).unwrap();
        let params = Params { n: s.n, t: s.t };
        let nf = run.nonfaulty();
        for i in 0..s.n {
            let g = graph_at(&run, s.horizon, i);
            for j in 0..s.n {
                let mut prev = AgentSet::EMPTY;
                for m in 0..=s.horizon {
                    let f = known_faulty(j, m, &g, params);
                    prop_assert!(prev.is_subset(f));
                    prop_assert!(f.intersection(nf).is_empty());
                    prev = f;
                }
            }
        }
    }

    #[test]
    fn fip_states_ignore_the_protocol(s in fip_scenario()) {
        let a = generate_run(&s).unwrap();
        let other = if s.protocol == "popt" { "naive0" } else { "popt" };
        let b = generate_run(&Scenario { protocol: other.to_string(), ..s.clone() }).unwrap();
        for m in 0..=s.horizon {
            for i in 0..s.n {
                let (LocalState::Fip(x), LocalState::Fip(y)) = (a.state(m, i), b.state(m, i)) else { unreachable!() };
                prop_assert_eq!(x, y);
            }
        }
    }

    #[test]
    fn reports_are_byte_identical(s in any_scenario()) {
        let text = s.to_json();
        let (_, a) = run_scenario_str(&text).unwrap();
        let (_, b) = run_scenario_str(&text).unwrap();
        prop_assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn formulas_round_trip(phi in formula()) {
        let text = phi.to_string();
        prop_assert_eq!(Formula::parse(&text).unwrap(), phi);
    }
}
