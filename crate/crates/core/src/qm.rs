//! Queue machines: direct simulation and their encoding into a pair of session
//! types whose composition mirrors the machine's run.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lts::{derivative_seq, Dir, Label, Mode};
use crate::types::{Branch, Branches, Node, SessionType, Tag};

pub type Symbol = char;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QmError {
    #[error("malformed machine: {0}")]
    Json(String),
    #[error("`{0}` is not a single symbol")]
    NotASymbol(String),
    #[error("the initial symbol `{0}` must be in the queue alphabet and not in the input alphabet")]
    BadDollar(Symbol),
    #[error("input symbol `{0}` is not in the queue alphabet")]
    SigmaNotInGamma(Symbol),
    #[error("unknown state `{0}`")]
    UnknownState(String),
    #[error("no transition for state `{0}` and symbol `{1}`")]
    MissingDelta(String, Symbol),
    #[error("bad transition key `{0}`, expected `state,symbol`")]
    BadKey(String),
    #[error("symbol `{0}` is outside the alphabet")]
    Outside(Symbol),
}

#[derive(Deserialize, Serialize)]
struct RawMachine {
    states: Vec<String>,
    sigma: Vec<String>,
    gamma: Vec<String>,
    dollar: String,
    start: String,
    delta: BTreeMap<String, (String, String)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueueMachine {
    pub states: Vec<String>,
    pub sigma: Vec<Symbol>,
    pub gamma: Vec<Symbol>,
    pub dollar: Symbol,
    pub start: String,
    /// Total on states × gamma.
    pub delta: HashMap<(String, Symbol), (String, Vec<Symbol>)>,
}

fn symbol(s: &str) -> Result<Symbol, QmError> {
    let mut it = s.chars();
    match (it.next(), it.next()) {
        (Some(c), None) => Ok(c),
        _ => Err(QmError::NotASymbol(s.into())),
    }
}

impl QueueMachine {
    pub fn from_json(text: &str) -> Result<Self, QmError> {
        let raw: RawMachine = serde_json::from_str(text).map_err(|e| QmError::Json(e.to_string()))?;
        let sigma = raw.sigma.iter().map(|s| symbol(s)).collect::<Result<Vec<_>, _>>()?;
        let gamma = raw.gamma.iter().map(|s| symbol(s)).collect::<Result<Vec<_>, _>>()?;
        let dollar = symbol(&raw.dollar)?;
        let mut delta = HashMap::new();
        for (key, (to, out)) in &raw.delta {
            let (p, a) = key.rsplit_once(',').ok_or_else(|| QmError::BadKey(key.clone()))?;
            let out = out.chars().collect();
            delta.insert((p.to_string(), symbol(a)?), (to.clone(), out));
        }
        let m = QueueMachine { states: raw.states, sigma, gamma, dollar, start: raw.start, delta };
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        let mut delta = BTreeMap::new();
        for ((p, a), (q, out)) in &self.delta {
            delta.insert(format!("{p},{a}"), (q.clone(), out.iter().collect::<String>()));
        }
        let raw = RawMachine {
            states: self.states.clone(),
            sigma: self.sigma.iter().map(|c| c.to_string()).collect(),
            gamma: self.gamma.iter().map(|c| c.to_string()).collect(),
            dollar: self.dollar.to_string(),
            start: self.start.clone(),
            delta,
        };
        serde_json::to_string(&raw).expect("plain data serializes")
    }

    fn validate(&self) -> Result<(), QmError> {
        if !self.gamma.contains(&self.dollar) || self.sigma.contains(&self.dollar) {
            return Err(QmError::BadDollar(self.dollar));
        }
        if let Some(&c) = self.sigma.iter().find(|c| !self.gamma.contains(c)) {
            return Err(QmError::SigmaNotInGamma(c));
        }
        let known = |s: &String| self.states.contains(s);
        if !known(&self.start) {
            return Err(QmError::UnknownState(self.start.clone()));
        }
        for ((p, a), (q, out)) in &self.delta {
            for s in [p, q] {
                if !known(s) {
                    return Err(QmError::UnknownState(s.clone()));
                }
            }
            if let Some(&c) = std::iter::once(a).chain(out).find(|c| !self.gamma.contains(c)) {
                return Err(QmError::Outside(c));
            }
        }
        for p in &self.states {
            for &a in &self.gamma {
                if !self.delta.contains_key(&(p.clone(), a)) {
                    return Err(QmError::MissingDelta(p.clone(), a));
                }
            }
        }
        Ok(())
    }

    /// The configuration `(start, input $)`.
    pub fn initial(&self, input: &[Symbol]) -> Result<QmConfig, QmError> {
        if let Some(&c) = input.iter().find(|c| !self.sigma.contains(c)) {
            return Err(QmError::Outside(c));
        }
        let mut queue: VecDeque<Symbol> = input.iter().copied().collect();
        queue.push_back(self.dollar);
        Ok(QmConfig { state: self.start.clone(), queue })
    }

    /// One transition; `None` when the queue is empty.
    pub fn step(&self, c: &QmConfig) -> Option<QmConfig> {
        let mut queue = c.queue.clone();
        let a = queue.pop_front()?;
        let (q, out) = &self.delta[&(c.state.clone(), a)];
        queue.extend(out.iter().copied());
        Some(QmConfig { state: q.clone(), queue })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct QmConfig {
    pub state: String,
    pub queue: VecDeque<Symbol>,
}

impl QmConfig {
    pub fn is_accepting(&self) -> bool {
        self.queue.is_empty()
    }
}

impl fmt::Display for QmConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.state, self.queue.iter().collect::<String>())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum QmOutcome {
    /// The queue emptied after this many steps.
    Accepted(usize),
    Running(QmConfig),
}

/// Run from `(start, input $)` for at most `max_steps` transitions.
pub fn simulate_qm(m: &QueueMachine, input: &[Symbol], max_steps: usize) -> Result<QmOutcome, QmError> {
    let trace = run_trace(m, input, max_steps)?;
    let last = trace.last().expect("trace holds the initial configuration");
    Ok(if last.is_accepting() { QmOutcome::Accepted(trace.len() - 1) } else { QmOutcome::Running(last.clone()) })
}

/// Every configuration of the run, the initial one included.
pub fn run_trace(m: &QueueMachine, input: &[Symbol], max_steps: usize) -> Result<Vec<QmConfig>, QmError> {
    let mut trace = vec![m.initial(input)?];
    for _ in 0..max_steps {
        match m.step(trace.last().unwrap()) {
            Some(next) => trace.push(next),
            None => break,
        }
    }
    Ok(trace)
}

/// Node tables for the encoding, shared by all queue contents.
pub struct Encoding<'m> {
    m: &'m QueueMachine,
    nodes: Vec<Node>,
    control: HashMap<String, usize>,
}

const QUEUE: usize = 0;

fn tag(c: Symbol) -> Tag {
    Tag::from(c.to_string())
}

fn single(internal: bool, c: Symbol, cont: usize) -> Node {
    let bs = Branches::from([(tag(c), Branch { measure: 0, cont })]);
    if internal {
        Node::Plus(bs)
    } else {
        Node::With(bs)
    }
}

impl<'m> Encoding<'m> {
    pub fn new(m: &'m QueueMachine) -> Self {
        // 0 is the empty queue, then one output node per symbol
        let mut nodes = vec![Node::One];
        let mut bs = Branches::new();
        for &a in &m.gamma {
            nodes.push(single(true, a, QUEUE));
            bs.insert(tag(a), Branch { measure: 0, cont: nodes.len() - 1 });
        }
        nodes[QUEUE] = Node::With(bs);
        let control: HashMap<String, usize> = m.states.iter().enumerate().map(|(i, s)| (s.clone(), nodes.len() + i)).collect();
        nodes.extend(m.states.iter().map(|_| Node::One));
        let mut enc = Encoding { m, nodes, control };
        for p in &m.states {
            let mut bs = Branches::new();
            for &a in &m.gamma {
                let (q, out) = &m.delta[&(p.clone(), a)];
                let cont = enc.chain(out, enc.control[q]);
                bs.insert(tag(a), Branch { measure: 0, cont });
            }
            let at = enc.control[p];
            enc.nodes[at] = Node::With(bs);
        }
        enc
    }

    /// Outputs of `word` in order, then `end`.
    fn chain(&mut self, word: &[Symbol], end: usize) -> usize {
        word.iter().rev().fold(end, |cont, &c| {
            self.nodes.push(single(true, c, cont));
            self.nodes.len() - 1
        })
    }

    fn build(&self, root: usize, extra: Vec<Node>) -> SessionType {
        let mut nodes = self.nodes.clone();
        nodes.extend(extra);
        SessionType::from_parts(nodes, root).expect("encoding indices are in range").canonicalize()
    }

    /// The queue holding `content`.
    pub fn queue(&self, content: &[Symbol]) -> SessionType {
        let mut extra = Vec::new();
        let base = self.nodes.len();
        let mut cont = QUEUE;
        for &c in content.iter().rev() {
            extra.push(single(true, c, cont));
            cont = base + extra.len() - 1;
        }
        self.build(cont, extra)
    }

    /// The control type of state `q`.
    pub fn control(&self, q: &str) -> Option<SessionType> {
        self.control.get(q).map(|&i| self.build(i, Vec::new()))
    }

    /// Check one machine transition against the transitions of the types:
    /// the queue outputs the head and inputs the appended word, the control
    /// does the converse.
    pub fn check_step(&self, from: &QmConfig, to: &QmConfig) -> Result<(), String> {
        let head = *from.queue.front().ok_or("no transition from an empty queue")?;
        let (q, out) = &self.m.delta[&(from.state.clone(), head)];
        if q != &to.state {
            return Err(format!("machine moved to {} instead of {q}", to.state));
        }
        let seq = |first: Dir| {
            let mut ls = vec![Label::tag(first, tag(head), 0)];
            ls.extend(out.iter().map(|&b| Label::tag(first.flip(), tag(b), 0)));
            ls
        };
        let content = |c: &QmConfig| c.queue.iter().copied().collect::<Vec<_>>();
        let qfrom = self.queue(&content(from));
        let qto = self.queue(&content(to));
        match derivative_seq(&qfrom, &seq(Dir::Out), Mode::Full) {
            Some(d) if d == qto => {}
            Some(d) => return Err(format!("queue derivative {d} differs from {qto}")),
            None => return Err(format!("queue {} cannot perform the step from {from}", qfrom.render())),
        }
        let sfrom = self.control(&from.state).ok_or("unknown state")?;
        let sto = self.control(&to.state).ok_or("unknown state")?;
        match derivative_seq(&sfrom, &seq(Dir::In), Mode::Full) {
            Some(d) if d == sto => Ok(()),
            Some(_) => Err(format!("control derivative differs from state {}", to.state)),
            None => Err(format!("control of {} cannot perform the step", from.state)),
        }
    }
}

/// The queue type for `input $` and the control type of the start state.
pub fn encode(m: &QueueMachine, input: &[Symbol]) -> Result<(SessionType, SessionType), QmError> {
    let init = m.initial(input)?;
    let enc = Encoding::new(m);
    let content: Vec<Symbol> = init.queue.iter().copied().collect();
    Ok((enc.queue(&content), enc.control(&m.start).expect("start state is known")))
}

/// A random total machine with at most 3 states and 3 queue symbols, and an
/// input word of length at most 4.
pub fn random_machine(rng: &mut impl Rng) -> (QueueMachine, Vec<Symbol>) {
    const SYMBOLS: [Symbol; 2] = ['a', 'b'];
    let states: Vec<String> = (0..rng.gen_range(1..=3)).map(|i| format!("q{i}")).collect();
    let sigma: Vec<Symbol> = SYMBOLS[..rng.gen_range(1..=2)].to_vec();
    let mut gamma = sigma.clone();
    gamma.push('$');
    let mut delta = HashMap::new();
    for p in &states {
        for &a in &gamma {
            let q = states.choose(rng).unwrap().clone();
            let out: Vec<Symbol> = (0..rng.gen_range(0..=2)).map(|_| *gamma.choose(rng).unwrap()).collect();
            delta.insert((p.clone(), a), (q, out));
        }
    }
    let input = (0..rng.gen_range(0..=4)).map(|_| *sigma.choose(rng).unwrap()).collect();
    let m = QueueMachine { start: states[0].clone(), states, sigma, gamma, dollar: '$', delta };
    (m, input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relation::{compose, Budget, Verdict};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const DRAIN: &str = r#"{"states": ["s"], "sigma": ["a", "b"], "gamma": ["a", "b", "$"], "dollar": "$", "start": "s",
        "delta": {"s,a": ["s", ""], "s,b": ["s", ""], "s,$": ["s", ""]}}"#;
    const LOOP: &str = r#"{"states": ["s"], "sigma": ["a"], "gamma": ["a", "$"], "dollar": "$", "start": "s",
        "delta": {"s,a": ["s", "a"], "s,$": ["s", "$"]}}"#;

    fn word(s: &str) -> Vec<Symbol> {
        s.chars().collect()
    }

    #[test]
    fn drain_accepts_after_three_steps() {
        let m = QueueMachine::from_json(DRAIN).unwrap();
        assert_eq!(simulate_qm(&m, &word("ab"), 100).unwrap(), QmOutcome::Accepted(3));
    }

    #[test]
    fn reenqueueing_never_accepts() {
        let m = QueueMachine::from_json(LOOP).unwrap();
        for budget in [0, 1, 10, 1000] {
            match simulate_qm(&m, &word("a"), budget).unwrap() {
                QmOutcome::Running(c) => assert_eq!(c.queue.len(), 2),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn empty_input_starts_at_dollar() {
        let m = QueueMachine::from_json(DRAIN).unwrap();
        let c = m.initial(&[]).unwrap();
        assert_eq!(c.to_string(), "(s, $)");
        let (q, _) = encode(&m, &[]).unwrap();
        let enc = Encoding::new(&m);
        assert_eq!(q, SessionType::plus([("$", 0, enc.queue(&[]))]));
    }

    #[test]
    fn one_state_encoding_matches_the_equations() {
        let m = QueueMachine::from_json(
            r#"{"states": ["s"], "sigma": ["a"], "gamma": ["a", "$"], "dollar": "$", "start": "s",
                "delta": {"s,a": ["s", ""], "s,$": ["s", ""]}}"#,
        )
        .unwrap();
        let (q, s) = encode(&m, &word("a")).unwrap();
        let expected_q = SessionType::parse(
            "type Q0 = +{a: +{$: Q}} type Q = &{a: +{a: Q}, $: +{$: Q}}",
        )
        .unwrap();
        assert_eq!(q, expected_q);
        assert_eq!(s, SessionType::parse("type S = &{a: S, $: S}").unwrap());
    }

    #[test]
    fn errors_are_reported() {
        let bad = DRAIN.replace(r#""s,$": ["s", ""]"#, r#""s,$": ["t", ""]"#);
        assert_eq!(QueueMachine::from_json(&bad), Err(QmError::UnknownState("t".into())));
        let partial = DRAIN.replace(r#", "s,$": ["s", ""]"#, "");
        assert_eq!(QueueMachine::from_json(&partial), Err(QmError::MissingDelta("s".into(), '$')));
        let m = QueueMachine::from_json(DRAIN).unwrap();
        assert_eq!(simulate_qm(&m, &word("c"), 5), Err(QmError::Outside('c')));
    }

    #[test]
    fn json_round_trips() {
        let m = QueueMachine::from_json(DRAIN).unwrap();
        assert_eq!(QueueMachine::from_json(&m.to_json()).unwrap(), m);
    }

    #[test]
    fn steps_correspond_to_derivatives() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let (m, input) = random_machine(&mut rng);
            let enc = Encoding::new(&m);
            let trace = run_trace(&m, &input, 30).unwrap();
            for w in trace.windows(2) {
                enc.check_step(&w[0], &w[1]).unwrap();
            }
        }
    }

    #[test]
    fn accepted_drain_does_not_compose() {
        let m = QueueMachine::from_json(DRAIN).unwrap();
        let (q, s) = encode(&m, &word("a")).unwrap();
        assert_ne!(compose(&q, &s, Budget::default()).verdict, Verdict::Yes);
    }

    proptest::proptest! {
        #[test]
        fn simulation_is_monotone_in_budget(seed in 0u64..500, k in 0usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (m, input) = random_machine(&mut rng);
            let short = run_trace(&m, &input, k).unwrap();
            let long = run_trace(&m, &input, k + 10).unwrap();
            proptest::prop_assert_eq!(&long[..short.len()], &short[..]);
        }
    }
}
