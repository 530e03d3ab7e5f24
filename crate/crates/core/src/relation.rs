//! Coinductive game solvers for correct asynchronous composition and the
//! subtyping relations, with certificate and counterexample checking.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;

use serde_json::{json, Value};
use thiserror::Error;

use crate::lts::{candidate_labels, enabled, Dir, Label, LabelKey, Message, Mode};
use crate::types::{Node, SessionType};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RelationKind {
    /// Correct asynchronous composition.
    Compose,
    /// Fair asynchronous subtyping.
    FairSub,
    SyncSub,
    AsyncSub,
    /// The subtyping that also preserves fair termination of the composition.
    BzFairSub,
    /// Must challenges, fair responses, no extra condition.
    AuxSub,
}

impl RelationKind {
    pub fn name(self) -> &'static str {
        match self {
            RelationKind::Compose => "compose",
            RelationKind::FairSub => "fair",
            RelationKind::SyncSub => "sync",
            RelationKind::AsyncSub => "async",
            RelationKind::BzFairSub => "bzfair",
            RelationKind::AuxSub => "aux",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "compose" => RelationKind::Compose,
            "fair" => RelationKind::FairSub,
            "sync" => RelationKind::SyncSub,
            "async" => RelationKind::AsyncSub,
            "bzfair" => RelationKind::BzFairSub,
            "aux" => RelationKind::AuxSub,
            _ => return None,
        })
    }

    fn first_order_only(self) -> bool {
        !matches!(self, RelationKind::Compose | RelationKind::FairSub)
    }

    /// Transition modes of challenges and responses.
    fn modes(self) -> (Mode, Mode) {
        match self {
            RelationKind::Compose | RelationKind::FairSub => (Mode::Full, Mode::Full),
            RelationKind::SyncSub => (Mode::Must, Mode::Must),
            RelationKind::AsyncSub => (Mode::Must, Mode::Ind),
            RelationKind::BzFairSub | RelationKind::AuxSub => (Mode::Must, Mode::Full),
        }
    }
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Budget {
    pub max_pairs: usize,
    /// Largest type (in nodes) a pair may contain.
    pub max_nodes: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Budget { max_pairs: 2000, max_nodes: 256 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Verdict {
    Yes,
    No,
    Unknown,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Yes => "yes",
            Verdict::No => "no",
            Verdict::Unknown => "unknown",
        })
    }
}

/// Clause of a relation definition, used in counterexample traces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Clause {
    Polarity,
    /// Composition: an output of the left type needs an input on the right.
    OutLeft,
    OutRight,
    ChanOutLeft,
    ChanOutRight,
    /// Subtyping: an input of the supertype needs an input of the subtype.
    Input,
    /// Subtyping: an output of the subtype needs an output of the supertype.
    Output,
    ChanInput,
    ChanOutput,
    /// The extra output condition of the fair-termination preserving relation.
    Anticipation,
}

impl Clause {
    pub fn name(self) -> &'static str {
        match self {
            Clause::Polarity => "polarity",
            Clause::OutLeft => "out-left",
            Clause::OutRight => "out-right",
            Clause::ChanOutLeft => "chan-out-left",
            Clause::ChanOutRight => "chan-out-right",
            Clause::Input => "input",
            Clause::Output => "output",
            Clause::ChanInput => "chan-input",
            Clause::ChanOutput => "chan-output",
            Clause::Anticipation => "anticipation",
        }
    }

    pub fn from_name(s: &str) -> Option<Clause> {
        ALL_CLAUSES.iter().copied().find(|c| c.name() == s)
    }
}

const ALL_CLAUSES: [Clause; 10] = [
    Clause::Polarity,
    Clause::OutLeft,
    Clause::OutRight,
    Clause::ChanOutLeft,
    Clause::ChanOutRight,
    Clause::Input,
    Clause::Output,
    Clause::ChanInput,
    Clause::ChanOutput,
    Clause::Anticipation,
];

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Why a clause failed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Reason {
    Polarity,
    MissingTransition,
    /// The responder has the tag, but with a different measure.
    MeasureMismatch,
    /// An output reachable after inputs in the supertype is not immediate in
    /// the subtype.
    Anticipation,
}

impl Reason {
    pub fn name(self) -> &'static str {
        match self {
            Reason::Polarity => "polarity",
            Reason::MissingTransition => "missing-transition",
            Reason::MeasureMismatch => "measure-mismatch",
            Reason::Anticipation => "anticipation",
        }
    }
}

pub type Pair = (SessionType, SessionType);

/// One step of a counterexample: at `pair`, the challenge `(clause, label)`.
/// Intermediate steps follow the successor; `payload` selects the payload
/// pair of a channel challenge instead of the continuation pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Step {
    pub pair: Pair,
    pub clause: Clause,
    pub label: Option<Label>,
    pub payload: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Stats {
    pub pairs_explored: usize,
    pub pairs_discovered: usize,
    pub max_type_nodes: usize,
    /// Why the search stopped short, when it did.
    pub budget_hit: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationVerdict {
    pub relation: RelationKind,
    pub verdict: Verdict,
    /// On Yes: a set of pairs closed under the clauses of `witness_kind`.
    pub witness: Option<Vec<Pair>>,
    /// Clause set the witness is closed under; differs from `relation` only
    /// for fair subtyping certified through the auxiliary relation.
    pub witness_kind: RelationKind,
    pub counterexample: Option<Vec<Step>>,
    pub reason: Option<Reason>,
    pub stats: Stats,
}

impl RelationVerdict {
    pub fn to_json(&self) -> Value {
        let pair = |p: &Pair| json!([p.0.render(), p.1.render()]);
        let mut v = json!({
            "relation": self.relation.name(),
            "verdict": self.verdict.to_string(),
            "stats": {
                "pairs_explored": self.stats.pairs_explored,
                "pairs_discovered": self.stats.pairs_discovered,
                "max_type_nodes": self.stats.max_type_nodes,
                "budget_hit": self.stats.budget_hit,
            },
        });
        if let Some(w) = &self.witness {
            v["witness"] = Value::Array(w.iter().map(pair).collect());
            v["witness_kind"] = json!(self.witness_kind.name());
        }
        if let Some(cx) = &self.counterexample {
            v["counterexample"] = Value::Array(
                cx.iter()
                    .map(|s| {
                        let mut o = json!({
                            "pair": pair(&s.pair),
                            "clause": s.clause.name(),
                            "label": s.label.as_ref().map(|l| l.to_string()),
                        });
                        if s.payload {
                            o["via"] = json!("payload");
                        }
                        o
                    })
                    .collect(),
            );
        }
        if let Some(r) = self.reason {
            v["reason"] = json!(r.name());
        }
        v
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RelationError {
    #[error("the {0} relation is defined on first-order types only")]
    NotFirstOrder(RelationKind),
}

/// A challenge issued at a pair.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct Challenge {
    clause: Clause,
    label: Option<Label>,
}

/// Successors required by one challenge, in order (payload pair first).
enum Response {
    Ok(Vec<Pair>),
    Fail(Reason),
    /// Several channel responses with different continuations.
    Ambiguous,
}

const MEMO_LIMIT: usize = 4096;

/// Transition results of one game, keyed by canonical type.
#[derive(Default)]
struct Memo {
    steps: HashMap<(SessionType, Label, Mode), Option<SessionType>>,
    labels: HashMap<(SessionType, Dir), BTreeSet<LabelKey>>,
}

impl Memo {
    fn enabled(&mut self, t: &SessionType, l: &Label, mode: Mode) -> Option<SessionType> {
        let key = (t.clone(), l.clone(), mode);
        if let Some(d) = self.steps.get(&key) {
            return d.clone();
        }
        let d = enabled(t, l, mode);
        // growing games would otherwise keep every large derivative alive
        if self.steps.len() >= MEMO_LIMIT {
            self.steps.clear();
            self.labels.clear();
        }
        self.steps.insert(key, d.clone());
        d
    }

    fn labels(&mut self, t: &SessionType, dir: Dir) -> BTreeSet<LabelKey> {
        self.labels.entry((t.clone(), dir)).or_insert_with(|| candidate_labels(t, dir)).clone()
    }
}

/// Labels a challenger may perform: candidates of both types, plus one fresh
/// tag standing for all tags neither type mentions when an empty choice could
/// enable them.
fn challenge_labels(memo: &mut Memo, a: &SessionType, b: &SessionType, dir: Dir) -> Vec<Label> {
    let mut set: BTreeSet<LabelKey> = memo.labels(a, dir);
    set.extend(memo.labels(b, dir));
    let has_empty = |t: &SessionType| {
        t.reachable()
            .iter()
            .any(|&n| matches!(t.node(n), Node::Plus(bs) | Node::With(bs) if bs.is_empty()))
    };
    if has_empty(a) || has_empty(b) {
        let used: HashSet<String> = set
            .iter()
            .filter_map(|k| match &k.0.msg {
                Message::Tag { tag, .. } => Some(tag.to_string()),
                _ => None,
            })
            .collect();
        let fresh = (0..).map(|i| format!("fresh{i}")).find(|t| !used.contains(t)).unwrap();
        set.insert(LabelKey(Label::tag(dir, fresh, 0)));
    }
    set.into_iter().map(|k| k.0).collect()
}

fn challenges(memo: &mut Memo, kind: RelationKind, a: &SessionType, b: &SessionType) -> Vec<Challenge> {
    let (cm, _) = kind.modes();
    let mut out = vec![Challenge { clause: Clause::Polarity, label: None }];
    // (challenger, direction, first-order clause, channel clause)
    let sides: [(&SessionType, Dir, Clause, Clause); 2] = match kind {
        RelationKind::Compose => [
            (a, Dir::Out, Clause::OutLeft, Clause::ChanOutLeft),
            (b, Dir::Out, Clause::OutRight, Clause::ChanOutRight),
        ],
        _ => [
            (b, Dir::In, Clause::Input, Clause::ChanInput),
            (a, Dir::Out, Clause::Output, Clause::ChanOutput),
        ],
    };
    for (who, dir, fo, ch) in sides {
        for l in challenge_labels(memo, a, b, dir) {
            if memo.enabled(who, &l, cm).is_some() {
                let clause = if l.is_first_order() { fo } else { ch };
                out.push(Challenge { clause, label: Some(l) });
            }
        }
    }
    out
}

fn missing(memo: &mut Memo, responder: &SessionType, wanted: &Label, mode: Mode) -> Reason {
    if let Message::Tag { tag, .. } = &wanted.msg {
        let other_measure = memo.labels(responder, wanted.dir).into_iter().any(|k| {
            matches!(&k.0.msg, Message::Tag { tag: t, .. } if t == tag) && memo.enabled(responder, &k.0, mode).is_some()
        });
        if other_measure {
            return Reason::MeasureMismatch;
        }
    }
    Reason::MissingTransition
}

fn respond(memo: &mut Memo, kind: RelationKind, a: &SessionType, b: &SessionType, ch: &Challenge) -> Response {
    let (cm, rm) = kind.modes();
    let Some(l) = &ch.label else {
        let ok = match kind {
            RelationKind::Compose => a.is_positive() || b.is_positive(),
            _ => a.is_positive() || b.is_negative(),
        };
        return if ok { Response::Ok(vec![]) } else { Response::Fail(Reason::Polarity) };
    };
    // challenger side, responder side, label the responder must perform
    let (chal, resp, want, chal_is_a) = match ch.clause {
        Clause::OutLeft | Clause::ChanOutLeft => (a, b, l.dual_dir(), true),
        Clause::OutRight | Clause::ChanOutRight => (b, a, l.dual_dir(), false),
        Clause::Input | Clause::ChanInput => (b, a, l.clone(), false),
        Clause::Output | Clause::ChanOutput => (a, b, l.clone(), true),
        Clause::Polarity | Clause::Anticipation => unreachable!("handled separately"),
    };
    let Some(chal2) = memo.enabled(chal, l, cm) else {
        return Response::Fail(Reason::MissingTransition);
    };
    let order = |c: SessionType, r: SessionType| if chal_is_a { (c, r) } else { (r, c) };
    if l.is_first_order() {
        return match memo.enabled(resp, &want, rm) {
            Some(resp2) => Response::Ok(vec![order(chal2, resp2)]),
            None => Response::Fail(missing(memo, resp, &want, rm)),
        };
    }
    // channel challenge: the responder picks its own payload
    let Message::Chan(p) = &l.msg else { unreachable!() };
    // the pair that is always related: dual payloads for composition,
    // equal payloads for subtyping
    let preferred = if kind == RelationKind::Compose { p.dual() } else { p.clone() };
    let mut options: Vec<(SessionType, SessionType)> = Vec::new();
    let mut payloads: Vec<SessionType> = vec![preferred.clone()];
    for k in memo.labels(resp, want.dir) {
        if let Message::Chan(q) = k.0.msg {
            if !payloads.contains(&q) {
                payloads.push(q);
            }
        }
    }
    for q in payloads {
        if let Some(r2) = memo.enabled(resp, &Label::chan(want.dir, &q), rm) {
            options.push((q, r2));
        }
    }
    let Some(first) = options.first().cloned() else {
        return Response::Fail(Reason::MissingTransition);
    };
    if options.iter().any(|(_, r2)| r2 != &first.1) {
        return Response::Ambiguous;
    }
    let (q, r2) = options.into_iter().find(|(q, _)| q == &preferred).unwrap_or(first);
    Response::Ok(vec![order(p.clone(), q), order(chal2, r2)])
}

impl Label {
    /// The same message in the opposite direction (no payload dualization).
    fn dual_dir(&self) -> Label {
        Label { dir: self.dir.flip(), msg: self.msg.clone() }
    }
}

/// For the fair-termination preserving relation: an output `!τ` that `t`
/// reaches through must inputs but `s` cannot perform immediately.
fn anticipation_gap(memo: &mut Memo, s: &SessionType, t: &SessionType) -> Option<Label> {
    let mut seen: HashSet<SessionType> = HashSet::new();
    let mut queue = VecDeque::from([t.clone()]);
    seen.insert(t.clone());
    while let Some(u) = queue.pop_front() {
        for k in memo.labels(&u, Dir::Out) {
            if memo.enabled(&u, &k.0, Mode::Must).is_some() && memo.enabled(s, &k.0, Mode::Must).is_none() {
                return Some(k.0);
            }
        }
        for k in memo.labels(&u, Dir::In) {
            if let Some(v) = memo.enabled(&u, &k.0, Mode::Must) {
                if seen.insert(v.clone()) {
                    queue.push_back(v);
                }
            }
        }
    }
    None
}

fn all_challenges(memo: &mut Memo, kind: RelationKind, a: &SessionType, b: &SessionType) -> Vec<Challenge> {
    let mut cs = challenges(memo, kind, a, b);
    if kind == RelationKind::BzFairSub && cs.iter().any(|c| c.clause == Clause::Output) {
        cs.push(Challenge { clause: Clause::Anticipation, label: None });
    }
    cs
}

fn respond_any(memo: &mut Memo, kind: RelationKind, a: &SessionType, b: &SessionType, ch: &Challenge) -> Response {
    if ch.clause == Clause::Anticipation {
        return match anticipation_gap(memo, a, b) {
            None => Response::Ok(vec![]),
            Some(_) => Response::Fail(Reason::Anticipation),
        };
    }
    respond(memo, kind, a, b, ch)
}

/// Run the game for one clause set.
fn solve(kind: RelationKind, s: &SessionType, t: &SessionType, budget: Budget) -> RelationVerdict {
    let memo = &mut Memo::default();
    let root = (s.canonicalize(), t.canonicalize());
    let mut pairs: Vec<Pair> = vec![root.clone()];
    let mut index: HashMap<Pair, usize> = HashMap::from([(root, 0)]);
    let mut parent: Vec<Option<(usize, Challenge, bool)>> = vec![None];
    let mut queue = VecDeque::from([0usize]);
    let mut stats = Stats { max_type_nodes: s.len().max(t.len()), ..Stats::default() };
    while let Some(i) = queue.pop_front() {
        stats.pairs_explored += 1;
        let (a, b) = pairs[i].clone();
        for ch in all_challenges(memo, kind, &a, &b) {
            match respond_any(memo, kind, &a, &b, &ch) {
                Response::Fail(reason) => {
                    let mut trace = vec![Step { pair: pairs[i].clone(), clause: ch.clause, label: ch.label, payload: false }];
                    let mut cur = i;
                    while let Some((p, c, payload)) = &parent[cur] {
                        trace.push(Step { pair: pairs[*p].clone(), clause: c.clause, label: c.label.clone(), payload: *payload });
                        cur = *p;
                    }
                    trace.reverse();
                    stats.pairs_discovered = pairs.len();
                    return RelationVerdict {
                        relation: kind,
                        verdict: Verdict::No,
                        witness: None,
                        witness_kind: kind,
                        counterexample: Some(trace),
                        reason: Some(reason),
                        stats,
                    };
                }
                Response::Ambiguous => {
                    stats.budget_hit.get_or_insert_with(|| "ambiguous channel response".into());
                }
                Response::Ok(succ) => {
                    let two = succ.len() == 2;
                    for (k, p) in succ.into_iter().enumerate() {
                        if index.contains_key(&p) {
                            continue;
                        }
                        let size = p.0.len().max(p.1.len());
                        if size > budget.max_nodes {
                            stats.budget_hit.get_or_insert_with(|| format!("type larger than {} nodes", budget.max_nodes));
                            continue;
                        }
                        if pairs.len() >= budget.max_pairs {
                            stats.budget_hit.get_or_insert_with(|| format!("more than {} pairs", budget.max_pairs));
                            continue;
                        }
                        stats.max_type_nodes = stats.max_type_nodes.max(size);
                        index.insert(p.clone(), pairs.len());
                        parent.push(Some((i, ch.clone(), two && k == 0)));
                        pairs.push(p);
                        queue.push_back(pairs.len() - 1);
                    }
                }
            }
        }
    }
    stats.pairs_discovered = pairs.len();
    let complete = stats.budget_hit.is_none();
    RelationVerdict {
        relation: kind,
        verdict: if complete { Verdict::Yes } else { Verdict::Unknown },
        witness: complete.then_some(pairs),
        witness_kind: kind,
        counterexample: None,
        reason: None,
        stats,
    }
}

fn is_ffst(t: &SessionType) -> bool {
    t.is_first_order() && t.is_fairly_terminating()
}

/// Decide `kind` on `(s, t)` within `budget`.  For subtyping relations `s` is
/// the candidate subtype.
pub fn check(kind: RelationKind, s: &SessionType, t: &SessionType, budget: Budget) -> Result<RelationVerdict, RelationError> {
    if kind.first_order_only() && !(s.is_first_order() && t.is_first_order()) {
        return Err(RelationError::NotFirstOrder(kind));
    }
    if kind == RelationKind::FairSub && is_ffst(s) && is_ffst(t) {
        // On first-order fairly terminating types the auxiliary relation is
        // contained in fair subtyping and its game only follows immediate
        // challenges, so it often closes where the direct game diverges.
        let aux = solve(RelationKind::AuxSub, s, t, budget);
        if aux.verdict == Verdict::Yes {
            return Ok(RelationVerdict { relation: kind, ..aux });
        }
    }
    Ok(solve(kind, s, t, budget))
}

pub fn compose(s: &SessionType, t: &SessionType, budget: Budget) -> RelationVerdict {
    solve(RelationKind::Compose, s, t, budget)
}

pub fn fair_sub(s: &SessionType, t: &SessionType, budget: Budget) -> RelationVerdict {
    check(RelationKind::FairSub, s, t, budget).expect("fair subtyping accepts any types")
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WitnessError {
    #[error("pair {0} violates clause {1} on label {2}")]
    Violation(usize, Clause, String),
    #[error("pair {0} needs a successor outside the set")]
    NotClosed(usize),
    #[error("channel response at pair {0} is ambiguous")]
    Ambiguous(usize),
    #[error("the root pair is not in the witness")]
    MissingRoot,
    #[error("a {0} witness cannot certify {1}")]
    WrongKind(RelationKind, RelationKind),
    #[error("a certificate through the auxiliary relation needs first-order fairly terminating types")]
    NotFfst,
}

/// Check that `pairs` is closed under the clauses of `kind`.
pub fn validate_witness(kind: RelationKind, pairs: &[Pair]) -> Result<(), WitnessError> {
    let memo = &mut Memo::default();
    let set: HashSet<Pair> = pairs.iter().map(|(a, b)| (a.canonicalize(), b.canonicalize())).collect();
    for (i, (a, b)) in pairs.iter().enumerate() {
        let (a, b) = (a.canonicalize(), b.canonicalize());
        for ch in all_challenges(memo, kind, &a, &b) {
            match respond_any(memo, kind, &a, &b, &ch) {
                Response::Fail(_) => {
                    let l = ch.label.as_ref().map(|l| l.to_string()).unwrap_or_default();
                    return Err(WitnessError::Violation(i, ch.clause, l));
                }
                Response::Ambiguous => return Err(WitnessError::Ambiguous(i)),
                Response::Ok(succ) => {
                    if succ.iter().any(|p| !set.contains(p)) {
                        return Err(WitnessError::NotClosed(i));
                    }
                }
            }
        }
    }
    Ok(())
}

/// Validate the certificate of a Yes verdict for `(s, t)`.
pub fn validate_yes(v: &RelationVerdict, s: &SessionType, t: &SessionType) -> Result<(), WitnessError> {
    let w = v.witness.as_deref().unwrap_or(&[]);
    let root = (s.canonicalize(), t.canonicalize());
    if !w.contains(&root) {
        return Err(WitnessError::MissingRoot);
    }
    if v.witness_kind != v.relation {
        if !(v.relation == RelationKind::FairSub && v.witness_kind == RelationKind::AuxSub) {
            return Err(WitnessError::WrongKind(v.witness_kind, v.relation));
        }
        if !w.iter().all(|(a, b)| is_ffst(a) && is_ffst(b)) {
            return Err(WitnessError::NotFfst);
        }
    }
    validate_witness(v.witness_kind, w)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReplayError {
    #[error("empty counterexample")]
    Empty,
    #[error("step {0} does not start at the expected pair")]
    WrongPair(usize),
    #[error("step {0} challenge is not available")]
    NoChallenge(usize),
    #[error("step {0} does not lead to the next pair")]
    BadSuccessor(usize),
    #[error("the final step does not violate its clause")]
    NoViolation,
}

/// Re-run a counterexample trace from `(s, t)` against the transition system.
pub fn replay_counterexample(kind: RelationKind, s: &SessionType, t: &SessionType, trace: &[Step]) -> Result<(), ReplayError> {
    let memo = &mut Memo::default();
    let mut cur = (s.canonicalize(), t.canonicalize());
    let (last, init) = trace.split_last().ok_or(ReplayError::Empty)?;
    for (i, step) in init.iter().enumerate() {
        if step.pair != cur {
            return Err(ReplayError::WrongPair(i));
        }
        let ch = Challenge { clause: step.clause, label: step.label.clone() };
        if !all_challenges(memo, kind, &cur.0, &cur.1).contains(&ch) {
            return Err(ReplayError::NoChallenge(i));
        }
        match respond_any(memo, kind, &cur.0, &cur.1, &ch) {
            Response::Ok(succ) => {
                let pick = if step.payload { succ.first() } else { succ.last() };
                cur = pick.cloned().ok_or(ReplayError::BadSuccessor(i))?;
            }
            _ => return Err(ReplayError::BadSuccessor(i)),
        }
    }
    if last.pair != cur {
        return Err(ReplayError::WrongPair(init.len()));
    }
    let ch = Challenge { clause: last.clause, label: last.label.clone() };
    if !all_challenges(memo, kind, &cur.0, &cur.1).contains(&ch) {
        return Err(ReplayError::NoChallenge(init.len()));
    }
    match respond_any(memo, kind, &cur.0, &cur.1, &ch) {
        Response::Fail(_) => Ok(()),
        _ => Err(ReplayError::NoViolation),
    }
}

/// Check any verdict: Yes certificates close, No traces replay.
pub fn validate_verdict(v: &RelationVerdict, s: &SessionType, t: &SessionType) -> Result<(), String> {
    match v.verdict {
        Verdict::Yes => validate_yes(v, s, t).map_err(|e| e.to_string()),
        Verdict::No => {
            let cx = v.counterexample.as_deref().unwrap_or(&[]);
            replay_counterexample(v.relation, s, t, cx).map_err(|e| e.to_string())
        }
        Verdict::Unknown => Ok(()),
    }
}

/// Result of comparing composition against fair subtyping with the dual.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CrossCheck {
    pub compose: RelationVerdict,
    pub fair_sub_dual: RelationVerdict,
    pub consistent: bool,
}

impl CrossCheck {
    pub fn to_json(&self) -> Value {
        json!({
            "compose": self.compose.to_json(),
            "fair_sub_dual": self.fair_sub_dual.to_json(),
            "consistent": self.consistent,
        })
    }
}

/// Composition of `(s, t)` and fair subtyping `s ≤ dual(t)` must never give
/// opposite definitive answers.
pub fn compose_vs_fairsub(s: &SessionType, t: &SessionType, budget: Budget) -> CrossCheck {
    let c = compose(s, t, budget);
    let f = fair_sub(s, &t.dual(), budget);
    let consistent = !matches!(
        (c.verdict, f.verdict),
        (Verdict::Yes, Verdict::No) | (Verdict::No, Verdict::Yes)
    );
    CrossCheck { compose: c, fair_sub_dual: f, consistent }
}

/// Outcome of the duality closure check of a fair subtyping verdict.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DualClosure {
    /// The original verdict was not Yes; nothing to check.
    NotApplicable,
    /// `dual t ≤ dual s` was decided Yes and the dualized witness validates.
    Holds,
    /// The dual verdict was not Yes, or the dualized witness failed.
    Fails(String),
}

/// Dualize every pair `(a, b)` to `(dual b, dual a)`.
pub fn dualize_witness(pairs: &[Pair]) -> Vec<Pair> {
    pairs.iter().map(|(a, b)| (b.dual(), a.dual())).collect()
}

pub fn dual_closure_check(s: &SessionType, t: &SessionType, v: &RelationVerdict, budget: Budget) -> DualClosure {
    if v.verdict != Verdict::Yes {
        return DualClosure::NotApplicable;
    }
    let back = fair_sub(&t.dual(), &s.dual(), budget);
    if back.verdict != Verdict::Yes {
        return DualClosure::Fails(format!("dual verdict is {}", back.verdict));
    }
    let dualized = RelationVerdict { witness: v.witness.as_deref().map(dualize_witness), ..v.clone() };
    match validate_yes(&dualized, &t.dual(), &s.dual()) {
        Ok(()) => DualClosure::Holds,
        Err(e) => DualClosure::Fails(format!("dualized witness: {e}")),
    }
}
