//! The minimal, basic and full-information exchange protocols: local
//! states, message selection and state transition.

use std::sync::Arc;

use serde::Serialize;

use crate::commgraph::{merge_graphs, CommGraph};
use crate::error::{Error, Result};
use crate::model::{ContextId, Decision, Value};
use crate::protocols::Action;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct MinLocalState {
    pub time: usize,
    pub init: Value,
    pub decided: Decision,
    pub rd: Option<Value>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct BasicLocalState {
    pub time: usize,
    pub init: Value,
    pub decided: Decision,
    pub rd: Option<Value>,
    pub count1: usize,
}

/// Full-information state.  Decisions are not part of it; they live in the
/// run's decision ledger.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FipLocalState {
    pub time: usize,
    pub init: Value,
    pub graph: Arc<CommGraph>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum LocalState {
    Min(MinLocalState),
    Basic(BasicLocalState),
    Fip(Arc<FipLocalState>),
}

impl LocalState {
    pub fn time(&self) -> usize {
        match self {
            LocalState::Min(s) => s.time,
            LocalState::Basic(s) => s.time,
            LocalState::Fip(s) => s.time,
        }
    }

    pub fn init(&self) -> Value {
        match self {
            LocalState::Min(s) => s.init,
            LocalState::Basic(s) => s.init,
            LocalState::Fip(s) => s.init,
        }
    }

    /// The `decided` field, absent from full-information states.
    pub fn decided(&self) -> Option<Decision> {
        match self {
            LocalState::Min(s) => Some(s.decided),
            LocalState::Basic(s) => Some(s.decided),
            LocalState::Fip(_) => None,
        }
    }

    pub fn rd(&self) -> Option<Value> {
        match self {
            LocalState::Min(s) => s.rd,
            LocalState::Basic(s) => s.rd,
            LocalState::Fip(_) => None,
        }
    }

    pub fn context(&self) -> ContextId {
        match self {
            LocalState::Min(_) => ContextId::Min,
            LocalState::Basic(_) => ContextId::Basic,
            LocalState::Fip(_) => ContextId::Fip,
        }
    }

    /// Compact JSON rendering for traces.
    pub fn to_json(&self) -> serde_json::Value {
        match self {
            LocalState::Min(s) => serde_json::to_value(s).expect("state serializes"),
            LocalState::Basic(s) => serde_json::to_value(s).expect("state serializes"),
            LocalState::Fip(s) => serde_json::json!({
                "time": s.time,
                "init": s.init,
                "graph_bits": s.graph.bit_size(),
            }),
        }
    }
}

/// Message classes: M0 and M1 announce a decision on 0 or 1, M2 is
/// everything else.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum MessageClass {
    M0,
    M1,
    M2,
}

impl MessageClass {
    fn of_action(action: Action) -> MessageClass {
        match action {
            Action::Decide(Value::Zero) => MessageClass::M0,
            Action::Decide(Value::One) => MessageClass::M1,
            Action::Noop => MessageClass::M2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Payload {
    Decision(Value),
    InitOne,
    Graph(Arc<CommGraph>),
}

impl Payload {
    pub fn bits(&self) -> usize {
        match self {
            Payload::Decision(_) => 1,
            Payload::InitOne => 2,
            Payload::Graph(g) => g.bit_size(),
        }
    }
}

/// A non-⊥ message; ⊥ is represented by `None` wherever messages appear.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Message {
    pub class: MessageClass,
    pub payload: Payload,
}

/// One information-exchange protocol instantiated for `n` agents.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Exchange {
    pub context: ContextId,
    pub n: usize,
}

impl Exchange {
    pub fn new(context: ContextId, n: usize) -> Exchange {
        Exchange { context, n }
    }

    pub fn initial_state(&self, agent: usize, init: Value) -> LocalState {
        match self.context {
            ContextId::Min => LocalState::Min(MinLocalState {
                time: 0,
                init,
                decided: None,
                rd: None,
            }),
            ContextId::Basic => LocalState::Basic(BasicLocalState {
                time: 0,
                init,
                decided: None,
                rd: None,
                count1: 0,
            }),
            ContextId::Fip => LocalState::Fip(Arc::new(FipLocalState {
                time: 0,
                init,
                graph: Arc::new(CommGraph::new(self.n, agent, init)),
            })),
        }
    }

    /// The message every recipient is sent, or `None` for ⊥.
    pub fn broadcast(&self, state: &LocalState, action: Action) -> Option<Message> {
        match (state, action) {
            (LocalState::Min(_) | LocalState::Basic(_), Action::Decide(v)) => Some(Message {
                class: MessageClass::of_action(action),
                payload: Payload::Decision(v),
            }),
            (LocalState::Min(_), Action::Noop) => None,
            (LocalState::Basic(s), Action::Noop) => {
                let eligible = s.init == Value::One && s.decided.is_none() && s.rd.is_none();
                eligible.then_some(Message {
                    class: MessageClass::M2,
                    payload: Payload::InitOne,
                })
            }
            (LocalState::Fip(s), _) => Some(Message {
                class: MessageClass::of_action(action),
                payload: Payload::Graph(Arc::clone(&s.graph)),
            }),
        }
    }

    /// The μ tuple: one message (or ⊥) per recipient, the sender included.
    pub fn select_messages(&self, state: &LocalState, action: Action) -> Vec<Option<Message>> {
        vec![self.broadcast(state, action); self.n]
    }

    /// δ: `inbox[j]` is what arrived from `j` this round.
    pub fn apply_transition(
        &self,
        state: &LocalState,
        action: Action,
        inbox: &[Option<&Message>],
    ) -> Result<LocalState> {
        if inbox.len() != self.n {
            return Err(Error::InboxArity {
                expected: self.n,
                got: inbox.len(),
            });
        }
        let rd = if inbox.iter().flatten().any(|m| m.class == MessageClass::M0) {
            Some(Value::Zero)
        } else if inbox.iter().flatten().any(|m| m.class == MessageClass::M1) {
            Some(Value::One)
        } else {
            None
        };
        let decide = |old: Decision| match action {
            Action::Decide(v) => Some(v),
            Action::Noop => old,
        };
        Ok(match state {
            LocalState::Min(s) => LocalState::Min(MinLocalState {
                time: s.time + 1,
                init: s.init,
                decided: decide(s.decided),
                rd,
            }),
            LocalState::Basic(s) => {
                let decided = decide(s.decided);
                let count1 = if decided.is_none() && rd.is_none() {
                    inbox
                        .iter()
                        .flatten()
                        .filter(|m| m.payload == Payload::InitOne)
                        .count()
                } else {
                    0
                };
                LocalState::Basic(BasicLocalState {
                    time: s.time + 1,
                    init: s.init,
                    decided,
                    rd,
                    count1,
                })
            }
            LocalState::Fip(s) => {
                let graphs: Vec<Option<&CommGraph>> = inbox
                    .iter()
                    .map(|m| {
                        m.map(|msg| match &msg.payload {
                            Payload::Graph(g) => Ok(g.as_ref()),
                            _ => Err(Error::GraphShape(
                                "full-information state received a non-graph message".into(),
                            )),
                        })
                        .transpose()
                    })
                    .collect::<Result<_>>()?;
                LocalState::Fip(Arc::new(FipLocalState {
                    time: s.time + 1,
                    init: s.init,
                    graph: Arc::new(merge_graphs(&s.graph, &graphs)?),
                }))
            }
        })
    }
}
