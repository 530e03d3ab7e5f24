//! Labelled transitions of session types: immediate (must) transitions,
//! inductive may-transitions, and the full fair relation obtained as the
//! greatest fixed point of the rules restricted to the least fixed point of the
//! rules plus corules.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

use crate::lex::{Cursor, SyntaxError, Tok};
use crate::types::{parse, Node, NodeId, SessionType, Tag, TypeError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Dir {
    In,
    Out,
}

impl Dir {
    pub fn flip(self) -> Dir {
        match self {
            Dir::In => Dir::Out,
            Dir::Out => Dir::In,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Message {
    /// Termination signal.
    Star,
    Tag { tag: Tag, measure: u32 },
    /// A channel whose type is the (canonical) payload.
    Chan(SessionType),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Label {
    pub dir: Dir,
    pub msg: Message,
}

impl Label {
    pub fn new(dir: Dir, msg: Message) -> Self {
        let msg = match msg {
            Message::Chan(t) => Message::Chan(t.canonicalize()),
            m => m,
        };
        Label { dir, msg }
    }

    pub fn tag(dir: Dir, tag: impl Into<Tag>, measure: u32) -> Self {
        Label { dir, msg: Message::Tag { tag: tag.into(), measure } }
    }

    pub fn star(dir: Dir) -> Self {
        Label { dir, msg: Message::Star }
    }

    pub fn chan(dir: Dir, payload: &SessionType) -> Self {
        Label::new(dir, Message::Chan(payload.clone()))
    }

    pub fn is_first_order(&self) -> bool {
        !matches!(self.msg, Message::Chan(_))
    }

    /// Swap the direction, dualizing a channel payload.
    pub fn dual(&self) -> Label {
        let msg = match &self.msg {
            Message::Chan(t) => Message::Chan(t.dual()),
            m => m.clone(),
        };
        Label { dir: self.dir.flip(), msg }
    }

    pub fn parse(text: &str) -> Result<Label, LabelError> {
        let mut cur = Cursor::new(text).map_err(TypeError::from)?;
        let dir = if cur.eat_punct('?') {
            Dir::In
        } else if cur.eat_punct('!') {
            Dir::Out
        } else {
            return Err(LabelError::Syntax(cur.unexpected("`?` or `!`")));
        };
        let msg = match cur.peek().clone() {
            Tok::Punct('*') => {
                cur.bump();
                Message::Star
            }
            Tok::Punct('(') => {
                cur.bump();
                let e = parse::parse_expr(&mut cur)?;
                cur.expect_punct(')').map_err(TypeError::from)?;
                Message::Chan(parse::resolve_expr(&Default::default(), &e)?)
            }
            Tok::Word(tag) => {
                cur.bump();
                let measure = if cur.eat_punct('@') {
                    let w = cur.expect_word("a natural number").map_err(TypeError::from)?;
                    w.parse().map_err(|_| LabelError::Syntax(SyntaxError::new(cur.pos(), "bad measure")))?
                } else {
                    0
                };
                Message::Tag { tag: tag.into(), measure }
            }
            _ => return Err(LabelError::Syntax(cur.unexpected("a message"))),
        };
        if !cur.at_eof() {
            return Err(LabelError::Syntax(cur.unexpected("end of label")));
        }
        Ok(Label::new(dir, msg))
    }
}

impl std::str::FromStr for Label {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Label::parse(s)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = match self.dir {
            Dir::In => '?',
            Dir::Out => '!',
        };
        match &self.msg {
            Message::Star => write!(f, "{d}*"),
            Message::Tag { tag, measure: 0 } => write!(f, "{d}{tag}"),
            Message::Tag { tag, measure } => write!(f, "{d}{tag}@{measure}"),
            Message::Chan(t) => write!(f, "{d}({t})"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LabelError {
    #[error("bad label: {0}")]
    Syntax(SyntaxError),
    #[error(transparent)]
    Type(#[from] TypeError),
}

/// Which transition relation to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Immediate transitions only.
    Must,
    /// Least fixed point of immediate and may rules.
    Ind,
    /// Fair transitions: the generalized inference system.
    Full,
}

/// How a node can derive the label under consideration.
enum Rule {
    Axiom(NodeId),
    /// All premises must hold; for choice nodes these are the branch
    /// continuations and the corule needs only one of them.
    May { premises: Vec<NodeId>, choice: bool },
    None,
}

struct Analysis<'a> {
    t: &'a SessionType,
    rules: Vec<Rule>,
    /// For each node, the may-rule nodes using it as a premise (with
    /// multiplicity).
    users: Vec<Vec<NodeId>>,
}

impl<'a> Analysis<'a> {
    fn new(t: &'a SessionType, l: &Label) -> Self {
        let mut payloads: HashMap<NodeId, SessionType> = HashMap::new();
        let mut same_payload = |p: NodeId, want: &SessionType| {
            payloads.entry(p).or_insert_with(|| t.at(p)) == want
        };
        let rules: Vec<Rule> = (0..t.len())
            .map(|n| match (t.node(n), l.dir, &l.msg) {
                (Node::One, Dir::Out, Message::Star) | (Node::Bot, Dir::In, Message::Star) => Rule::Axiom(n),
                (Node::Plus(bs), Dir::Out, Message::Tag { tag, measure })
                | (Node::With(bs), Dir::In, Message::Tag { tag, measure }) => match bs.get(tag) {
                    Some(b) if b.measure == *measure => Rule::Axiom(b.cont),
                    _ => Rule::None,
                },
                (Node::Times(p, c), Dir::Out, Message::Chan(s)) | (Node::Par(p, c), Dir::In, Message::Chan(s)) => {
                    if same_payload(*p, s) {
                        Rule::Axiom(*c)
                    } else {
                        Rule::None
                    }
                }
                (Node::Plus(bs), Dir::In, _) | (Node::With(bs), Dir::Out, _) => {
                    Rule::May { premises: bs.values().map(|b| b.cont).collect(), choice: true }
                }
                (Node::Times(_, c), Dir::In, _) | (Node::Par(_, c), Dir::Out, _) => {
                    Rule::May { premises: vec![*c], choice: false }
                }
                _ => Rule::None,
            })
            .collect();
        let mut users = vec![Vec::new(); t.len()];
        for (n, r) in rules.iter().enumerate() {
            if let Rule::May { premises, .. } = r {
                for &p in premises {
                    users[p].push(n);
                }
            }
        }
        Analysis { t, rules, users }
    }

    /// Least fixed point of the rules, optionally with the fairness corules.
    fn least(&self, corules: bool) -> Vec<bool> {
        let n = self.t.len();
        let mut s = vec![false; n];
        let mut count = vec![0usize; n];
        let mut work = Vec::new();
        for (x, r) in self.rules.iter().enumerate() {
            let base = match r {
                Rule::Axiom(_) => true,
                Rule::May { premises, .. } => premises.is_empty(),
                Rule::None => false,
            };
            if base {
                s[x] = true;
                work.push(x);
            }
        }
        while let Some(p) = work.pop() {
            for &x in &self.users[p] {
                if s[x] {
                    continue;
                }
                count[x] += 1;
                let Rule::May { premises, choice } = &self.rules[x] else { continue };
                if count[x] == premises.len() || (corules && *choice) {
                    s[x] = true;
                    work.push(x);
                }
            }
        }
        s
    }

    /// Greatest fixed point of the rules inside `bound`.
    fn greatest_within(&self, bound: Vec<bool>) -> Vec<bool> {
        let mut s = bound;
        for (x, keep) in s.iter_mut().enumerate() {
            if matches!(self.rules[x], Rule::None) {
                *keep = false;
            }
        }
        let mut work: Vec<NodeId> = (0..s.len()).filter(|&x| !s[x]).collect();
        while let Some(p) = work.pop() {
            for &x in &self.users[p] {
                if s[x] {
                    s[x] = false;
                    work.push(x);
                }
            }
        }
        s
    }

    fn enabled_set(&self, mode: Mode) -> Vec<bool> {
        match mode {
            Mode::Must => (0..self.t.len()).map(|n| matches!(self.rules[n], Rule::Axiom(_))).collect(),
            Mode::Ind => self.least(false),
            Mode::Full => self.greatest_within(self.least(true)),
        }
    }


    /// Rebuild the derivative over (node, stepped) pairs and canonicalize.
    fn derivative(&self) -> SessionType {
        let t = self.t;
        let mut d = Rebuild { nodes: t.nodes().to_vec(), stepped: HashMap::new(), work: Vec::new() };
        let root = d.step(&self.rules, t.root());
        while let Some(x) = d.work.pop() {
            let node = match t.node(x) {
                Node::Plus(bs) | Node::With(bs) => {
                    let mut out = bs.clone();
                    for b in out.values_mut() {
                        b.cont = d.step(&self.rules, b.cont);
                    }
                    if matches!(t.node(x), Node::Plus(_)) {
                        Node::Plus(out)
                    } else {
                        Node::With(out)
                    }
                }
                Node::Times(p, c) => Node::Times(*p, d.step(&self.rules, *c)),
                Node::Par(p, c) => Node::Par(*p, d.step(&self.rules, *c)),
                _ => unreachable!("only may-rule nodes are rebuilt"),
            };
            let slot = d.stepped[&x];
            d.nodes[slot] = node;
        }
        SessionType::from_parts(d.nodes, root)
            .expect("rebuilt table is closed")
            .canonicalize()
    }
}

struct Rebuild {
    nodes: Vec<Node>,
    stepped: HashMap<NodeId, NodeId>,
    work: Vec<NodeId>,
}

impl Rebuild {
    /// Id of the derivative of node `x`: the axiom target, or a fresh copy.
    fn step(&mut self, rules: &[Rule], x: NodeId) -> NodeId {
        if let Rule::Axiom(target) = rules[x] {
            return target;
        }
        if let Some(&id) = self.stepped.get(&x) {
            return id;
        }
        self.nodes.push(Node::One);
        let id = self.nodes.len() - 1;
        self.stepped.insert(x, id);
        self.work.push(x);
        id
    }
}

/// The derivative of `t` along `l`, if `l` is enabled under `mode`.
pub fn enabled(t: &SessionType, l: &Label, mode: Mode) -> Option<SessionType> {
    let a = Analysis::new(t, l);
    let set = a.enabled_set(mode);
    set[t.root()].then(|| a.derivative())
}

pub fn is_enabled(t: &SessionType, l: &Label, mode: Mode) -> bool {
    let a = Analysis::new(t, l);
    a.enabled_set(mode)[t.root()]
}

/// Follow a sequence of labels; `None` as soon as one is not enabled.
pub fn derivative_seq(t: &SessionType, labels: &[Label], mode: Mode) -> Option<SessionType> {
    labels.iter().try_fold(t.clone(), |cur, l| enabled(&cur, l, mode))
}

/// Candidate labels of one direction: `*`, every tag of a reachable choice
/// (with its measure) and every reachable channel payload.  Must axioms only
/// emit these messages and the other rules never invent new ones; a label
/// outside this set can only be enabled through empty choices.
pub fn candidate_labels(t: &SessionType, dir: Dir) -> BTreeSet<LabelKey> {
    let mut out = BTreeSet::from([LabelKey(Label::star(dir))]);
    for n in t.reachable() {
        match t.node(n) {
            Node::Plus(bs) | Node::With(bs) => {
                for (tag, b) in bs {
                    out.insert(LabelKey(Label::tag(dir, tag.clone(), b.measure)));
                }
            }
            Node::Times(p, _) | Node::Par(p, _) => {
                out.insert(LabelKey(Label::chan(dir, &t.at(*p))));
            }
            _ => {}
        }
    }
    out
}

/// Labels in a fixed order: `*`, then tags, then channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelKey(pub Label);

impl LabelKey {
    fn sort_key(&self) -> (u8, String, u32) {
        match &self.0.msg {
            Message::Star => (0, String::new(), 0),
            Message::Tag { tag, measure } => (1, tag.to_string(), *measure),
            Message::Chan(t) => (2, t.render(), 0),
        }
    }
}

impl PartialOrd for LabelKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for LabelKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.0.dir, self.sort_key()).cmp(&(other.0.dir, other.sort_key()))
    }
}

/// Enabled labels of the given direction with their derivatives.
pub fn enumerate_labels(t: &SessionType, dir: Dir, mode: Mode) -> Vec<(Label, SessionType)> {
    candidate_labels(t, dir)
        .into_iter()
        .filter_map(|LabelKey(l)| enabled(t, &l, mode).map(|d| (l, d)))
        .collect()
}

/// Decide a fair transition directly from its characterization: no infinite
/// fair run of immediate transitions in the opposite direction, and every
/// point where such runs stop derives the label by an axiom (an empty choice
/// counts, its may rule having no premises).
pub fn fas_oracle(t: &SessionType, l: &Label) -> bool {
    let a = Analysis::new(t, l);
    let other = l.dir.flip();
    let succ = |n: NodeId| -> Option<Vec<NodeId>> {
        match (t.node(n), other) {
            (Node::One, Dir::Out) | (Node::Bot, Dir::In) => Some(vec![n]),
            (Node::Plus(bs), Dir::Out) | (Node::With(bs), Dir::In) if !bs.is_empty() => {
                Some(bs.values().map(|b| b.cont).collect())
            }
            (Node::Times(_, c), Dir::Out) | (Node::Par(_, c), Dir::In) => Some(vec![*c]),
            _ => None,
        }
    };
    // nodes with an infinite fair run: greatest set closed under successors
    let mut inf: Vec<bool> = (0..t.len()).map(|n| succ(n).is_some()).collect();
    loop {
        let mut changed = false;
        for n in 0..t.len() {
            if inf[n] && !succ(n).unwrap().iter().all(|&c| inf[c]) {
                inf[n] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let mut seen = vec![false; t.len()];
    let mut stack = vec![t.root()];
    seen[t.root()] = true;
    while let Some(n) = stack.pop() {
        if inf[n] {
            return false;
        }
        match succ(n) {
            Some(cs) => {
                for c in cs {
                    if !seen[c] {
                        seen[c] = true;
                        stack.push(c);
                    }
                }
            }
            None => {
                let stops_well = match &a.rules[n] {
                    Rule::Axiom(_) => true,
                    Rule::May { premises, choice: true } => premises.is_empty(),
                    _ => false,
                };
                if !stops_well {
                    return false;
                }
            }
        }
    }
    true
}

/// Check that every enabled input/output pair commutes up to bisimilarity.
/// Returns the first offending pair.
pub fn diamond_violation(t: &SessionType) -> Option<(Label, Label)> {
    let ins = enumerate_labels(t, Dir::In, Mode::Full);
    let outs = enumerate_labels(t, Dir::Out, Mode::Full);
    for (li, ti) in &ins {
        for (lo, to) in &outs {
            let a = enabled(ti, lo, Mode::Full);
            let b = enabled(to, li, Mode::Full);
            match (a, b) {
                (Some(a), Some(b)) if a == b => {}
                _ => return Some((li.clone(), lo.clone())),
            }
        }
    }
    None
}
