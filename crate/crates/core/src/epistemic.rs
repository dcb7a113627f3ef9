//! Epistemic and temporal formulas evaluated over complete run sets.
//!
//! Truth values are three-valued: `None` marks points where a formula
//! refers past the horizon through `next`.

use std::collections::HashMap;
use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{AgentSet, ContextId, Decision, Params, RunRecord, Value};

pub type Truth = Option<bool>;

/// Agent indices are zero-based; the textual syntax is one-based.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Formula {
    True,
    False,
    Init(usize, Value),
    Decided(usize, Decision),
    Time(usize),
    Nonfaulty(usize),
    /// `decided = v` now and undecided one step earlier.
    JDecided(usize, Value),
    /// undecided now and `decided = v` one step later.
    Deciding(usize, Value),
    Exists(Value),
    NoDecidedN(Value),
    /// Exactly t agents are faulty.
    TFaulty,
    /// The nonfaulty agents jointly know of at least t faulty agents.
    DistTFaulty,
    Not(Box<Formula>),
    And(Vec<Formula>),
    Or(Vec<Formula>),
    Implies(Box<Formula>, Box<Formula>),
    K(usize, Box<Formula>),
    EN(Box<Formula>),
    CN(Box<Formula>),
    Next(Box<Formula>),
    /// False at time 0.
    Prev(Box<Formula>),
}

impl Formula {
    pub fn not(phi: Formula) -> Formula {
        Formula::Not(Box::new(phi))
    }

    pub fn and(parts: Vec<Formula>) -> Formula {
        Formula::And(parts)
    }

    pub fn or(parts: Vec<Formula>) -> Formula {
        Formula::Or(parts)
    }

    pub fn implies(a: Formula, b: Formula) -> Formula {
        Formula::Implies(Box::new(a), Box::new(b))
    }

    pub fn k(i: usize, phi: Formula) -> Formula {
        Formula::K(i, Box::new(phi))
    }

    pub fn e(phi: Formula) -> Formula {
        Formula::EN(Box::new(phi))
    }

    pub fn c(phi: Formula) -> Formula {
        Formula::CN(Box::new(phi))
    }

    pub fn next(phi: Formula) -> Formula {
        Formula::Next(Box::new(phi))
    }

    pub fn prev(phi: Formula) -> Formula {
        Formula::Prev(Box::new(phi))
    }

    /// Largest agent index mentioned, if any.
    fn max_agent(&self) -> Option<usize> {
        use Formula::*;
        match self {
            True | False | Time(_) | Exists(_) | NoDecidedN(_) | TFaulty | DistTFaulty => None,
            Init(i, _) | Decided(i, _) | Nonfaulty(i) | JDecided(i, _) | Deciding(i, _) => Some(*i),
            K(i, phi) => Some((*i).max(phi.max_agent().unwrap_or(0))),
            Not(phi) | EN(phi) | CN(phi) | Next(phi) | Prev(phi) => phi.max_agent(),
            And(ps) | Or(ps) => ps.iter().filter_map(Formula::max_agent).max(),
            Implies(a, b) => a.max_agent().max(b.max_agent()),
        }
    }

    pub fn parse(text: &str) -> Result<Formula> {
        let tokens = tokenize(text);
        let mut pos = 0;
        let phi = parse_expr(&tokens, &mut pos)?;
        if pos != tokens.len() {
            return Err(Error::Formula(format!(
                "unexpected `{}` after the formula",
                tokens[pos]
            )));
        }
        Ok(phi)
    }
}

fn tokenize(text: &str) -> Vec<String> {
    text.replace('(', " ( ")
        .replace(')', " ) ")
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

fn parse_expr(tokens: &[String], pos: &mut usize) -> Result<Formula> {
    let tok = tokens
        .get(*pos)
        .ok_or_else(|| Error::Formula("unexpected end of input".into()))?;
    *pos += 1;
    match tok.as_str() {
        "true" => Ok(Formula::True),
        "false" => Ok(Formula::False),
        "tfaulty" => Ok(Formula::TFaulty),
        "(" => {
            let head = tokens
                .get(*pos)
                .ok_or_else(|| Error::Formula("unexpected end of input".into()))?
                .clone();
            *pos += 1;
            let phi = parse_form(&head, tokens, pos)?;
            expect(tokens, pos, ")")?;
            Ok(phi)
        }
        other => Err(Error::Formula(format!("unexpected `{other}`"))),
    }
}

fn expect(tokens: &[String], pos: &mut usize, want: &str) -> Result<()> {
    match tokens.get(*pos) {
        Some(t) if t == want => {
            *pos += 1;
            Ok(())
        }
        Some(t) => Err(Error::Formula(format!("expected `{want}`, found `{t}`"))),
        None => Err(Error::Formula(format!("expected `{want}`, found end of input"))),
    }
}

fn word(tokens: &[String], pos: &mut usize) -> Result<String> {
    let t = tokens
        .get(*pos)
        .ok_or_else(|| Error::Formula("unexpected end of input".into()))?;
    *pos += 1;
    Ok(t.clone())
}

fn agent(tokens: &[String], pos: &mut usize) -> Result<usize> {
    let t = word(tokens, pos)?;
    match t.parse::<usize>() {
        Ok(k) if k >= 1 => Ok(k - 1),
        _ => Err(Error::Formula(format!("expected an agent number, found `{t}`"))),
    }
}

fn value(tokens: &[String], pos: &mut usize) -> Result<Value> {
    let t = word(tokens, pos)?;
    match t.as_str() {
        "0" => Ok(Value::Zero),
        "1" => Ok(Value::One),
        _ => Err(Error::Formula(format!("expected 0 or 1, found `{t}`"))),
    }
}

fn group(tokens: &[String], pos: &mut usize) -> Result<()> {
    let t = word(tokens, pos)?;
    if t == "N" {
        Ok(())
    } else {
        Err(Error::Formula(format!("expected the group `N`, found `{t}`")))
    }
}

fn parse_form(head: &str, tokens: &[String], pos: &mut usize) -> Result<Formula> {
    let sub = |pos: &mut usize| parse_expr(tokens, pos);
    Ok(match head {
        "init" => Formula::Init(agent(tokens, pos)?, value(tokens, pos)?),
        "decided" => {
            let i = agent(tokens, pos)?;
            let d = if tokens.get(*pos).map(String::as_str) == Some("bot") {
                *pos += 1;
                None
            } else {
                Some(value(tokens, pos)?)
            };
            Formula::Decided(i, d)
        }
        "time" => {
            let t = word(tokens, pos)?;
            Formula::Time(
                t.parse()
                    .map_err(|_| Error::Formula(format!("expected a time, found `{t}`")))?,
            )
        }
        "nonfaulty" => Formula::Nonfaulty(agent(tokens, pos)?),
        "jdecided" => Formula::JDecided(agent(tokens, pos)?, value(tokens, pos)?),
        "deciding" => Formula::Deciding(agent(tokens, pos)?, value(tokens, pos)?),
        "exists" => Formula::Exists(value(tokens, pos)?),
        "nodecided" => {
            group(tokens, pos)?;
            Formula::NoDecidedN(value(tokens, pos)?)
        }
        "dist" => {
            group(tokens, pos)?;
            let t = word(tokens, pos)?;
            if t != "tfaulty" {
                return Err(Error::Formula(format!("expected `tfaulty`, found `{t}`")));
            }
            Formula::DistTFaulty
        }
        "not" => Formula::not(sub(pos)?),
        "and" | "or" => {
            let mut parts = Vec::new();
            while tokens.get(*pos).map(String::as_str) != Some(")") {
                parts.push(sub(pos)?);
            }
            if head == "and" {
                Formula::And(parts)
            } else {
                Formula::Or(parts)
            }
        }
        "implies" => {
            let a = sub(pos)?;
            Formula::implies(a, sub(pos)?)
        }
        "K" => {
            let i = agent(tokens, pos)?;
            Formula::k(i, sub(pos)?)
        }
        "E" => {
            group(tokens, pos)?;
            Formula::e(sub(pos)?)
        }
        "C" => {
            group(tokens, pos)?;
            Formula::c(sub(pos)?)
        }
        "next" => Formula::next(sub(pos)?),
        "prev" => Formula::prev(sub(pos)?),
        other => return Err(Error::Formula(format!("unknown operator `{other}`"))),
    })
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Formula::*;
        let list = |f: &mut fmt::Formatter<'_>, head: &str, ps: &[Formula]| {
            write!(f, "({head}")?;
            for p in ps {
                write!(f, " {p}")?;
            }
            write!(f, ")")
        };
        match self {
            True => write!(f, "true"),
            False => write!(f, "false"),
            Init(i, v) => write!(f, "(init {} {v})", i + 1),
            Decided(i, Some(v)) => write!(f, "(decided {} {v})", i + 1),
            Decided(i, None) => write!(f, "(decided {} bot)", i + 1),
            Time(k) => write!(f, "(time {k})"),
            Nonfaulty(i) => write!(f, "(nonfaulty {})", i + 1),
            JDecided(i, v) => write!(f, "(jdecided {} {v})", i + 1),
            Deciding(i, v) => write!(f, "(deciding {} {v})", i + 1),
            Exists(v) => write!(f, "(exists {v})"),
            NoDecidedN(v) => write!(f, "(nodecided N {v})"),
            TFaulty => write!(f, "tfaulty"),
            DistTFaulty => write!(f, "(dist N tfaulty)"),
            Not(p) => write!(f, "(not {p})"),
            And(ps) => list(f, "and", ps),
            Or(ps) => list(f, "or", ps),
            Implies(a, b) => write!(f, "(implies {a} {b})"),
            K(i, p) => write!(f, "(K {} {p})", i + 1),
            EN(p) => write!(f, "(E N {p})"),
            CN(p) => write!(f, "(C N {p})"),
            Next(p) => write!(f, "(next {p})"),
            Prev(p) => write!(f, "(prev {p})"),
        }
    }
}

/// Indistinguishability classes of one agent, in compressed row form.
struct Classes {
    of_point: Vec<u32>,
    start: Vec<u32>,
    points: Vec<u32>,
}

impl Classes {
    fn build(runs: &[RunRecord], horizon: usize, agent: usize) -> Classes {
        let mut ids = HashMap::new();
        let mut of_point = Vec::with_capacity(runs.len() * (horizon + 1));
        for run in runs {
            for m in 0..=horizon {
                let next = ids.len() as u32;
                of_point.push(*ids.entry(run.state(m, agent)).or_insert(next));
            }
        }
        let classes = ids.len();
        let mut start = vec![0u32; classes + 1];
        for &c in &of_point {
            start[c as usize + 1] += 1;
        }
        for c in 0..classes {
            start[c + 1] += start[c];
        }
        let mut fill = start.clone();
        let mut points = vec![0u32; of_point.len()];
        for (p, &c) in of_point.iter().enumerate() {
            points[fill[c as usize] as usize] = p as u32;
            fill[c as usize] += 1;
        }
        Classes {
            of_point,
            start,
            points,
        }
    }

    fn members(&self, class: u32) -> &[u32] {
        &self.points[self.start[class as usize] as usize..self.start[class as usize + 1] as usize]
    }

    fn count(&self) -> usize {
        self.start.len() - 1
    }
}

/// A set of runs together with the indistinguishability relations.
pub struct System {
    runs: Vec<RunRecord>,
    context: ContextId,
    params: Params,
    horizon: usize,
    complete: bool,
    classes: Vec<Classes>,
}

impl System {
    pub fn new(runs: Vec<RunRecord>, context: ContextId, params: Params, horizon: usize, complete: bool) -> System {
        for r in &runs {
            assert_eq!(r.horizon(), horizon, "runs of one system share the horizon");
            assert_eq!(r.n(), params.n, "runs of one system share n");
        }
        let classes = (0..params.n)
            .into_par_iter()
            .map(|i| Classes::build(&runs, horizon, i))
            .collect();
        System {
            runs,
            context,
            params,
            horizon,
            complete,
            classes,
        }
    }

    pub fn runs(&self) -> &[RunRecord] {
        &self.runs
    }

    pub fn run(&self, r: usize) -> &RunRecord {
        &self.runs[r]
    }

    pub fn context(&self) -> ContextId {
        self.context
    }

    pub fn params(&self) -> Params {
        self.params
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn is_complete(&self) -> bool {
        self.complete
    }

    pub fn point_count(&self) -> usize {
        self.runs.len() * (self.horizon + 1)
    }

    pub fn point_index(&self, run: usize, time: usize) -> Result<usize> {
        if run >= self.runs.len() || time > self.horizon {
            return Err(Error::NoSuchPoint { run, time });
        }
        Ok(run * (self.horizon + 1) + time)
    }

    /// (run, time) of a point index.
    pub fn point(&self, p: usize) -> (usize, usize) {
        (p / (self.horizon + 1), p % (self.horizon + 1))
    }

    /// Number of distinct local states of `agent`.
    pub fn class_count(&self, agent: usize) -> usize {
        self.classes[agent].count()
    }

    pub fn indistinguishable(&self, agent: usize, p: (usize, usize), q: (usize, usize)) -> bool {
        let c = &self.classes[agent].of_point;
        let pi = p.0 * (self.horizon + 1) + p.1;
        let qi = q.0 * (self.horizon + 1) + q.1;
        c[pi] == c[qi]
    }

    /// Points `agent` cannot tell apart from point index `p`.
    pub fn class_members(&self, agent: usize, p: usize) -> &[u32] {
        let c = &self.classes[agent];
        c.members(c.of_point[p])
    }

    /// Index of the run with the same observable trajectory.
    pub fn find_run(&self, run: &RunRecord) -> Option<usize> {
        let key = run.trajectory_key();
        self.runs.iter().position(|r| r.trajectory_key() == key)
    }

    /// Truth of `phi` at every point; refuses incomplete run sets.
    pub fn eval_all(&self, phi: &Formula) -> Result<Vec<Truth>> {
        if !self.complete {
            return Err(Error::IncompleteSystem);
        }
        if let Some(i) = phi.max_agent() {
            if i >= self.params.n {
                return Err(Error::Formula(format!(
                    "agent {} does not exist for n={}",
                    i + 1,
                    self.params.n
                )));
            }
        }
        Ok(self.ev(phi))
    }

    pub fn eval(&self, phi: &Formula, run: usize, time: usize) -> Result<bool> {
        let p = self.point_index(run, time)?;
        self.eval_all(phi)?[p].ok_or(Error::Undefined { run, time })
    }

    pub fn eval_dist_tfaulty(&self, run: usize, time: usize) -> Result<bool> {
        self.eval(&Formula::DistTFaulty, run, time)
    }

    fn atom(&self, f: impl Fn(&RunRecord, usize) -> Truth + Sync) -> Vec<Truth> {
        let h = self.horizon + 1;
        (0..self.point_count())
            .into_par_iter()
            .map(|p| f(&self.runs[p / h], p % h))
            .collect()
    }

    fn knows(&self, i: usize, v: &[Truth]) -> Vec<Truth> {
        let c = &self.classes[i];
        let per_class: Vec<Truth> = (0..c.count() as u32)
            .map(|k| {
                let mut all = Some(true);
                for &p in c.members(k) {
                    match v[p as usize] {
                        None => return None,
                        Some(false) => all = Some(false),
                        Some(true) => {}
                    }
                }
                all
            })
            .collect();
        c.of_point.iter().map(|&k| per_class[k as usize]).collect()
    }

    fn everyone_knows(&self, v: &[Truth]) -> Vec<Truth> {
        let ks: Vec<Vec<Truth>> = (0..self.params.n).into_par_iter().map(|i| self.knows(i, v)).collect();
        let h = self.horizon + 1;
        (0..self.point_count())
            .map(|p| {
                let nf = self.runs[p / h].nonfaulty();
                and_all(nf.iter().map(|j| ks[j][p]))
            })
            .collect()
    }

    fn ev(&self, phi: &Formula) -> Vec<Truth> {
        use Formula::*;
        let h = self.horizon;
        match phi {
            True => vec![Some(true); self.point_count()],
            False => vec![Some(false); self.point_count()],
            Init(i, v) => self.atom(|r, _| Some(r.inits[*i] == *v)),
            Decided(i, d) => self.atom(|r, m| Some(r.decided(m, *i) == *d)),
            Time(k) => self.atom(|_, m| Some(m == *k)),
            Nonfaulty(i) => self.atom(|r, _| Some(r.nonfaulty().contains(*i))),
            JDecided(i, v) => self.atom(|r, m| {
                Some(r.decided(m, *i) == Some(*v) && m > 0 && r.decided(m - 1, *i).is_none())
            }),
            Deciding(i, v) => self.atom(|r, m| {
                (m < h).then(|| r.decided(m, *i).is_none() && r.decided(m + 1, *i) == Some(*v))
            }),
            Exists(v) => self.atom(|r, _| Some(r.inits.contains(v))),
            NoDecidedN(v) => self.atom(|r, m| {
                Some(r.nonfaulty().iter().all(|j| r.decided(m, j) != Some(*v)))
            }),
            TFaulty => self.atom(|r, _| Some(r.pattern.faulty().len() == self.params.t)),
            DistTFaulty => {
                let n = self.params.n;
                // known[a][j]: j knows that a is faulty
                let known: Vec<Vec<Vec<Truth>>> = (0..n)
                    .map(|a| {
                        let faulty_a = self.atom(|r, _| Some(!r.nonfaulty().contains(a)));
                        (0..n).map(|j| self.knows(j, &faulty_a)).collect()
                    })
                    .collect();
                let hp = h + 1;
                (0..self.point_count())
                    .map(|p| {
                        let nf = self.runs[p / hp].nonfaulty();
                        let count = (0..n)
                            .filter(|&a| nf.iter().any(|j| known[a][j][p] == Some(true)))
                            .count();
                        Some(count >= self.params.t)
                    })
                    .collect()
            }
            Not(p) => self.ev(p).into_iter().map(|x| x.map(|b| !b)).collect(),
            And(ps) => {
                let vs: Vec<Vec<Truth>> = ps.iter().map(|p| self.ev(p)).collect();
                (0..self.point_count())
                    .map(|k| and_all(vs.iter().map(|v| v[k])))
                    .collect()
            }
            Or(ps) => {
                let vs: Vec<Vec<Truth>> = ps.iter().map(|p| self.ev(p)).collect();
                (0..self.point_count())
                    .map(|k| or_all(vs.iter().map(|v| v[k])))
                    .collect()
            }
            Implies(a, b) => {
                let (va, vb) = (self.ev(a), self.ev(b));
                va.iter()
                    .zip(&vb)
                    .map(|(x, y)| or_all([x.map(|b| !b), *y]))
                    .collect()
            }
            K(i, p) => self.knows(*i, &self.ev(p)),
            EN(p) => self.everyone_knows(&self.ev(p)),
            CN(p) => {
                let body = self.ev(p);
                let mut x = vec![Some(true); self.point_count()];
                loop {
                    let conj: Vec<Truth> = body.iter().zip(&x).map(|(a, b)| and_all([*a, *b])).collect();
                    let y = self.everyone_knows(&conj);
                    if y == x {
                        return x;
                    }
                    x = y;
                }
            }
            Next(p) => {
                let v = self.ev(p);
                (0..self.point_count())
                    .map(|k| if k % (h + 1) < h { v[k + 1] } else { None })
                    .collect()
            }
            Prev(p) => {
                let v = self.ev(p);
                (0..self.point_count())
                    .map(|k| if k % (h + 1) > 0 { v[k - 1] } else { Some(false) })
                    .collect()
            }
        }
    }
}

/// Kleene conjunction.
fn and_all(xs: impl IntoIterator<Item = Truth>) -> Truth {
    let mut out = Some(true);
    for x in xs {
        match x {
            Some(false) => return Some(false),
            None => out = None,
            Some(true) => {}
        }
    }
    out
}

/// Kleene disjunction.
fn or_all(xs: impl IntoIterator<Item = Truth>) -> Truth {
    let mut out = Some(false);
    for x in xs {
        match x {
            Some(true) => return Some(true),
            None => out = None,
            Some(false) => {}
        }
    }
    out
}

/// Agents known faulty by some nonfaulty agent, per point.
pub fn jointly_known_faulty(system: &System, run: usize, time: usize) -> Result<AgentSet> {
    let n = system.params().n;
    let mut out = AgentSet::EMPTY;
    for a in 0..n {
        let phi = Formula::or(
            system
                .run(run)
                .nonfaulty()
                .iter()
                .map(|j| Formula::k(j, Formula::not(Formula::Nonfaulty(a))))
                .collect(),
        );
        if system.eval(&phi, run, time)? {
            out.insert(a);
        }
    }
    Ok(out)
}
