//! Configurations: a cut tree whose nodes carry the outputs already emitted
//! and not yet consumed.  Structural moves are applied eagerly by `norm`, so
//! redexes can be read off the tree directly.

use std::hash::{Hash, Hasher};

use thiserror::Error;

use super::{CutTypes, Name, NameSupply, Proc, Program};
use crate::lts::{enumerate_labels, Dir, Message, Mode};
use crate::types::{SessionType, Tag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum OutItem {
    Tag { chan: Name, tag: Tag },
    Chan { chan: Name, bound: Name, payload: Box<Tree> },
}

impl OutItem {
    pub fn chan(&self) -> &str {
        match self {
            OutItem::Tag { chan, .. } | OutItem::Chan { chan, .. } => chan,
        }
    }
}

/// A node of the cut tree.  `buffer` holds outputs in emission order; below a
/// cut on `x`, a normalized child buffers only items on `x`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Tree {
    pub buffer: Vec<OutItem>,
    pub kind: TreeKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum TreeKind {
    /// A thread whose guard is never an output, a call or a cut.
    Thread(Proc),
    Cut { chan: Name, types: Option<CutTypes>, left: Box<Tree>, right: Box<Tree> },
}

impl Tree {
    fn thread(p: Proc) -> Tree {
        Tree { buffer: Vec::new(), kind: TreeKind::Thread(p) }
    }

    pub fn mentions(&self, x: &str) -> bool {
        let in_buffer = self.buffer.iter().any(|item| match item {
            OutItem::Tag { chan, .. } => chan == x,
            OutItem::Chan { chan, bound, payload } => chan == x || (bound != x && payload.mentions(x)),
        });
        in_buffer
            || match &self.kind {
                TreeKind::Thread(p) => p.mentions(x),
                TreeKind::Cut { chan, left, right, .. } => chan != x && (left.mentions(x) || right.mentions(x)),
            }
    }

    pub(super) fn at(&self, path: &[Side]) -> Option<&Tree> {
        let mut t = self;
        for &s in path {
            match &t.kind {
                TreeKind::Cut { left, right, .. } => t = if s == Side::Left { left } else { right },
                TreeKind::Thread(_) => return None,
            }
        }
        Some(t)
    }

    fn at_mut(&mut self, path: &[Side]) -> Option<&mut Tree> {
        let mut t = self;
        for &s in path {
            match &mut t.kind {
                TreeKind::Cut { left, right, .. } => t = if s == Side::Left { left } else { right },
                TreeKind::Thread(_) => return None,
            }
        }
        Some(t)
    }

    /// Path to the first thread whose guard satisfies `pred`.
    fn find_thread(&self, pred: &dyn Fn(&Proc) -> bool) -> Option<Vec<Side>> {
        match &self.kind {
            TreeKind::Thread(g) => pred(g).then(Vec::new),
            TreeKind::Cut { left, right, .. } => [(Side::Left, left), (Side::Right, right)].into_iter().find_map(|(s, c)| {
                c.find_thread(pred).map(|mut p| {
                    p.insert(0, s);
                    p
                })
            }),
        }
    }

    fn rename_one(&self, from: &str, to: &str, names: &mut NameSupply) -> Tree {
        let buffer = self
            .buffer
            .iter()
            .map(|item| match item {
                OutItem::Tag { chan, tag } => OutItem::Tag { chan: swap(chan, from, to), tag: tag.clone() },
                OutItem::Chan { chan, bound, payload } => {
                    let chan = swap(chan, from, to);
                    if bound == from {
                        OutItem::Chan { chan, bound: bound.clone(), payload: payload.clone() }
                    } else if bound == to {
                        let b = names.fresh(bound);
                        let payload = payload.rename_one(bound, &b, names).rename_one(from, to, names);
                        OutItem::Chan { chan, bound: b, payload: Box::new(payload) }
                    } else {
                        OutItem::Chan { chan, bound: bound.clone(), payload: Box::new(payload.rename_one(from, to, names)) }
                    }
                }
            })
            .collect();
        let kind = match &self.kind {
            TreeKind::Thread(p) => TreeKind::Thread(p.rename_one(from, to, names)),
            TreeKind::Cut { chan, types, left, right } if chan == from => {
                TreeKind::Cut { chan: chan.clone(), types: types.clone(), left: left.clone(), right: right.clone() }
            }
            TreeKind::Cut { chan, types, left, right } => TreeKind::Cut {
                chan: chan.clone(),
                types: types.clone(),
                left: Box::new(left.rename_one(from, to, names)),
                right: Box::new(right.rename_one(from, to, names)),
            },
        };
        Tree { buffer, kind }
    }

    /// The process term this configuration stands for.
    pub fn readback(&self) -> Proc {
        let mut p = match &self.kind {
            TreeKind::Thread(g) => g.clone(),
            TreeKind::Cut { chan, types, left, right } => Proc::Cut {
                chan: chan.clone(),
                types: types.clone(),
                left: Box::new(left.readback()),
                right: Box::new(right.readback()),
            },
        };
        for item in self.buffer.iter().rev() {
            p = match item {
                OutItem::Tag { chan, tag } => Proc::Select(chan.clone(), tag.clone(), Box::new(p)),
                OutItem::Chan { chan, bound, payload } => Proc::Fork {
                    chan: chan.clone(),
                    bound: bound.clone(),
                    payload: Box::new(payload.readback()),
                    cont: Box::new(p),
                },
            };
        }
        p
    }

    fn count_threads(&self) -> usize {
        match &self.kind {
            TreeKind::Thread(_) => 1,
            TreeKind::Cut { left, right, .. } => left.count_threads() + right.count_threads(),
        }
    }
}

fn swap(n: &Name, from: &str, to: &str) -> Name {
    if n == from {
        to.to_string()
    } else {
        n.clone()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StepError {
    #[error("redex is not enabled in this configuration")]
    Stale,
    #[error("channel `{0}` is used after being delegated")]
    Linearity(Name),
    #[error("call to undefined process `{0}`")]
    UnknownDef(Name),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum RedexKind {
    Choice,
    Close,
    Select,
    Fork,
    Link,
}

impl RedexKind {
    pub fn rule(&self) -> &'static str {
        match self {
            RedexKind::Choice => "r-choice",
            RedexKind::Close => "r-close",
            RedexKind::Select => "r-select",
            RedexKind::Fork => "r-fork",
            RedexKind::Link => "r-link",
        }
    }
}

/// An enabled reduction.  `at` is the path to the choosing thread or to the
/// cut; `side` is the branch taken, or the side of the closer, sender or link.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Redex {
    pub kind: RedexKind,
    pub at: Vec<Side>,
    pub side: Side,
    /// The session channel involved, if any.
    pub channel: Option<Name>,
    /// The tag moved by a select.
    pub message: Option<String>,
}

/// A running program.  Equality and hashing ignore the name supply.
#[derive(Clone, Debug)]
pub struct Config {
    pub root: Tree,
    names: NameSupply,
}

impl PartialEq for Config {
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root
    }
}

impl Eq for Config {}

impl Hash for Config {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.root.hash(state)
    }
}

impl Config {
    pub fn new(prog: &Program, main: &Proc) -> Result<Config, StepError> {
        let mut names = NameSupply::default();
        for n in main.free_names() {
            names.reserve(&n);
        }
        let root = norm(Tree::thread(main.clone()), prog, &mut names)?;
        Ok(Config { root, names })
    }

    /// The configuration of a program's main process.
    pub fn of_program(prog: &Program) -> Option<Result<Config, StepError>> {
        prog.main.as_ref().map(|m| Config::new(prog, m))
    }

    pub fn is_done(&self) -> bool {
        self.root.buffer.is_empty() && self.root.kind == TreeKind::Thread(Proc::Done)
    }

    pub fn readback(&self) -> Proc {
        self.root.readback()
    }

    pub fn threads(&self) -> usize {
        self.root.count_threads()
    }

    pub fn redexes(&self) -> Vec<Redex> {
        let mut out = Vec::new();
        collect(&self.root, &mut Vec::new(), &mut out);
        out
    }

    pub fn step(&self, prog: &Program, r: &Redex) -> Result<Config, StepError> {
        if !self.redexes().contains(r) {
            return Err(StepError::Stale);
        }
        let mut next = self.clone();
        let names = &mut next.names;
        let node = next.root.at_mut(&r.at).ok_or(StepError::Stale)?;
        let taken = std::mem::replace(node, Tree::thread(Proc::Done));
        *node = match r.kind {
            RedexKind::Choice => {
                let Tree { buffer, kind: TreeKind::Thread(Proc::Choice(p, q)) } = taken else {
                    return Err(StepError::Stale);
                };
                let g = if r.side == Side::Left { *p } else { *q };
                Tree { buffer, kind: TreeKind::Thread(g) }
            }
            _ => {
                let Tree { buffer, kind: TreeKind::Cut { chan, types, left, right } } = taken else {
                    return Err(StepError::Stale);
                };
                let (mine, other) = if r.side == Side::Left { (*left, *right) } else { (*right, *left) };
                contract(&r.kind, buffer, chan, types, r.side, mine, other, names)?
            }
        };
        let root = std::mem::replace(&mut next.root, Tree::thread(Proc::Done));
        next.root = norm(root, prog, &mut next.names)?;
        Ok(next)
    }
}

fn collect(t: &Tree, path: &mut Vec<Side>, out: &mut Vec<Redex>) {
    let kind = |k| Redex { kind: k, at: path.clone(), side: Side::Left, channel: None, message: None };
    match &t.kind {
        TreeKind::Thread(Proc::Choice(..)) => {
            for side in [Side::Left, Side::Right] {
                out.push(Redex { side, ..kind(RedexKind::Choice) });
            }
        }
        TreeKind::Thread(_) => {}
        TreeKind::Cut { chan: x, left, right, .. } => {
            for side in [Side::Left, Side::Right] {
                let (c, o) = if side == Side::Left { (left, right) } else { (right, left) };
                let found = |pred: &dyn Fn(&Proc) -> bool| o.find_thread(pred).is_some();
                let mk = |k, message| Redex { side, channel: Some(x.clone()), message, ..kind(k) };
                match (c.buffer.first(), &c.kind) {
                    (None, TreeKind::Thread(Proc::Close(y))) if y == x => {
                        if o.buffer.is_empty() && found(&|g| matches!(g, Proc::Wait(y, _) if y == x)) {
                            out.push(mk(RedexKind::Close, None));
                        }
                    }
                    (None, TreeKind::Thread(Proc::Link(a, b))) if a != b && (a == x || b == x) => {
                        out.push(mk(RedexKind::Link, None));
                    }
                    (Some(OutItem::Tag { tag, .. }), _) => {
                        let ok = found(&|g| matches!(g, Proc::Case(y, bs) if y == x && bs.iter().any(|(t, _)| t == tag)));
                        if ok {
                            out.push(mk(RedexKind::Select, Some(tag.to_string())));
                        }
                    }
                    (Some(OutItem::Chan { .. }), _) if found(&|g| matches!(g, Proc::Join { chan, .. } if chan == x)) => {
                        out.push(mk(RedexKind::Fork, None));
                    }
                    _ => {}
                }
            }
            for (side, c) in [(Side::Left, left), (Side::Right, right)] {
                path.push(side);
                collect(c, path, out);
                path.pop();
            }
        }
    }
}

/// The derivative of an endpoint type along the first enabled label of
/// direction `dir` accepted by `pick`.
fn advance(t: &SessionType, dir: Dir, pick: impl Fn(&Message) -> bool) -> Option<(Message, SessionType)> {
    enumerate_labels(t, dir, Mode::Full).into_iter().find(|(l, _)| pick(&l.msg)).map(|(l, d)| (l.msg, d))
}

/// Apply a communication at a cut.  `mine` is the closer, sender or link side.
#[allow(clippy::too_many_arguments)]
fn contract(
    kind: &RedexKind,
    outer: Vec<OutItem>,
    x: Name,
    types: Option<CutTypes>,
    side: Side,
    mut mine: Tree,
    mut other: Tree,
    names: &mut NameSupply,
) -> Result<Tree, StepError> {
    let orient = |t: Option<CutTypes>| t.map(|t| if side == Side::Left { (t.left, t.right) } else { (t.right, t.left) });
    let rebuild = |m: Tree, o: Tree, ts: Option<(SessionType, SessionType)>| {
        let types = ts.map(|(a, b)| if side == Side::Left { CutTypes { left: a, right: b } } else { CutTypes { left: b, right: a } });
        let (left, right) = if side == Side::Left { (m, o) } else { (o, m) };
        TreeKind::Cut { chan: x.clone(), types, left: Box::new(left), right: Box::new(right) }
    };
    match kind {
        RedexKind::Close => {
            let path = other.find_thread(&|g| matches!(g, Proc::Wait(y, _) if *y == x)).ok_or(StepError::Stale)?;
            let th = other.at_mut(&path).ok_or(StepError::Stale)?;
            let TreeKind::Thread(Proc::Wait(_, cont)) = &th.kind else { return Err(StepError::Stale) };
            th.kind = TreeKind::Thread((**cont).clone());
            let mut buffer = outer;
            buffer.append(&mut other.buffer);
            Ok(Tree { buffer, kind: other.kind })
        }
        RedexKind::Select => {
            let Some(OutItem::Tag { tag, .. }) = mine.buffer.first().cloned() else { return Err(StepError::Stale) };
            mine.buffer.remove(0);
            let pred = |g: &Proc| matches!(g, Proc::Case(y, bs) if *y == x && bs.iter().any(|(t, _)| *t == tag));
            let path = other.find_thread(&pred).ok_or(StepError::Stale)?;
            let th = other.at_mut(&path).ok_or(StepError::Stale)?;
            let TreeKind::Thread(Proc::Case(_, bs)) = &th.kind else { return Err(StepError::Stale) };
            let cont = bs.iter().find(|(t, _)| *t == tag).map(|(_, p)| p.clone()).ok_or(StepError::Stale)?;
            th.kind = TreeKind::Thread(cont);
            let is_tag = |m: &Message| matches!(m, Message::Tag { tag: t, .. } if *t == tag);
            let ts = orient(types).and_then(|(s, r)| Some((advance(&s, Dir::Out, is_tag)?.1, advance(&r, Dir::In, is_tag)?.1)));
            Ok(Tree { buffer: outer, kind: rebuild(mine, other, ts) })
        }
        RedexKind::Fork => {
            let Some(OutItem::Chan { bound, payload, .. }) = mine.buffer.first().cloned() else { return Err(StepError::Stale) };
            mine.buffer.remove(0);
            let path = other.find_thread(&|g| matches!(g, Proc::Join { chan, .. } if *chan == x)).ok_or(StepError::Stale)?;
            let th = other.at_mut(&path).ok_or(StepError::Stale)?;
            let TreeKind::Thread(Proc::Join { bound: w, cont, .. }) = &th.kind else { return Err(StepError::Stale) };
            let fresh = names.fresh(&bound);
            let cont = cont.rename_one(w, &fresh, names);
            th.kind = TreeKind::Thread(cont);
            let payload = payload.rename_one(&bound, &fresh, names);
            let is_chan = |m: &Message| matches!(m, Message::Chan(_));
            let mut payload_types = None;
            let ts = orient(types).and_then(|(s, r)| {
                let (Message::Chan(u), s2) = advance(&s, Dir::Out, is_chan)? else { return None };
                let (Message::Chan(v), r2) = advance(&r, Dir::In, is_chan)? else { return None };
                payload_types = Some(CutTypes { left: u, right: v });
                Some((s2, r2))
            });
            let inner = Tree { buffer: Vec::new(), kind: rebuild(mine, other, ts) };
            Ok(Tree {
                buffer: outer,
                kind: TreeKind::Cut { chan: fresh, types: payload_types, left: Box::new(payload), right: Box::new(inner) },
            })
        }
        RedexKind::Link => {
            let TreeKind::Thread(Proc::Link(a, b)) = &mine.kind else { return Err(StepError::Stale) };
            let y = if *a == x { b.clone() } else { a.clone() };
            let renamed = other.rename_one(&x, &y, names);
            let mut buffer = outer;
            buffer.extend(renamed.buffer);
            Ok(Tree { buffer, kind: renamed.kind })
        }
        RedexKind::Choice => Err(StepError::Stale),
    }
}

/// Apply structural moves until the tree is normal: outputs become buffer
/// items, calls and cuts in guard position are unfolded, and buffered items
/// float up to the cut of their channel.
fn norm(t: Tree, prog: &Program, names: &mut NameSupply) -> Result<Tree, StepError> {
    let Tree { mut buffer, kind } = t;
    let mut p = match kind {
        TreeKind::Cut { chan, types, left, right } => return norm_cut(buffer, chan, types, *left, *right, prog, names),
        TreeKind::Thread(p) => p,
    };
    loop {
        p = match p {
            Proc::Select(x, tag, cont) => {
                buffer.push(OutItem::Tag { chan: x, tag });
                *cont
            }
            Proc::Fork { chan, bound, payload, cont } => {
                let payload = norm(Tree::thread(*payload), prog, names)?;
                buffer.push(OutItem::Chan { chan, bound, payload: Box::new(payload) });
                *cont
            }
            Proc::Call(a, args) => prog.unfold(&a, &args, names).ok_or(StepError::UnknownDef(a))?,
            Proc::Cut { chan, types, left, right } => {
                let x = names.fresh(&chan);
                let left = Tree::thread(left.rename_one(&chan, &x, names));
                let right = Tree::thread(right.rename_one(&chan, &x, names));
                return norm_cut(buffer, x, types, left, right, prog, names);
            }
            guard => return Ok(Tree { buffer, kind: TreeKind::Thread(guard) }),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn norm_cut(
    mut out: Vec<OutItem>,
    x: Name,
    types: Option<CutTypes>,
    left: Tree,
    right: Tree,
    prog: &Program,
    names: &mut NameSupply,
) -> Result<Tree, StepError> {
    let mut kids = [norm(left, prog, names)?, norm(right, prog, names)?];
    for i in 0..2 {
        let items = std::mem::take(&mut kids[i].buffer);
        let mut keep = Vec::new();
        let mut absorber = None;
        for item in items {
            if absorber.is_some() {
                if item.chan() == x || matches!(&item, OutItem::Chan { payload, .. } if payload.mentions(&x)) {
                    return Err(StepError::Linearity(x));
                }
                out.push(item);
            } else if item.chan() == x {
                keep.push(item);
            } else if matches!(&item, OutItem::Chan { bound, payload, .. } if *bound != x && payload.mentions(&x)) {
                absorber = Some(out.len());
                out.push(item);
            } else {
                out.push(item);
            }
        }
        let Some(k) = absorber else {
            kids[i].buffer = keep;
            continue;
        };
        // the endpoint x travels inside a channel output on another session:
        // x-items emitted before it and the peer of x move into its payload
        if kids[i].mentions(&x) {
            return Err(StepError::Linearity(x));
        }
        let [l, r] = kids;
        let (mine, peer) = if i == 0 { (l, r) } else { (r, l) };
        let OutItem::Chan { chan, bound, payload } = out[k].clone() else { unreachable!() };
        let mut inner = *payload;
        keep.append(&mut inner.buffer);
        inner.buffer = keep;
        let (pl, pr) = if i == 0 { (inner, peer) } else { (peer, inner) };
        let payload = norm_cut(Vec::new(), x, types, pl, pr, prog, names)?;
        out[k] = OutItem::Chan { chan, bound, payload: Box::new(payload) };
        return Ok(Tree { buffer: out, kind: mine.kind });
    }
    let [l, r] = kids;
    Ok(Tree { buffer: out, kind: TreeKind::Cut { chan: x, types, left: Box::new(l), right: Box::new(r) } })
}

/// Number of buffered items per channel.
#[cfg(test)]
pub(crate) fn channels_of(t: &Tree) -> std::collections::HashMap<String, usize> {
    use std::collections::HashMap;
    let mut out = HashMap::new();
    fn walk(t: &Tree, out: &mut HashMap<String, usize>) {
        for item in &t.buffer {
            *out.entry(item.chan().to_string()).or_default() += 1;
        }
        if let TreeKind::Cut { left, right, .. } = &t.kind {
            walk(left, out);
            walk(right, out);
        }
    }
    walk(t, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cap::{parse_process, parse_program};

    fn cfg(src: &str) -> (Program, Config) {
        let prog = parse_program(src).unwrap();
        let c = Config::of_program(&prog).unwrap().unwrap();
        (prog, c)
    }

    fn kinds(c: &Config) -> Vec<RedexKind> {
        c.redexes().into_iter().map(|r| r.kind).collect()
    }

    #[test]
    fn outputs_become_buffer_items() {
        let (_, c) = cfg("x!a.x!b.wait y.done");
        assert_eq!(c.root.buffer.len(), 2);
        assert_eq!(c.root.buffer[1], OutItem::Tag { chan: "x".into(), tag: "b".into() });
        assert!(matches!(&c.root.kind, TreeKind::Thread(Proc::Wait(y, _)) if y == "y"));
        let (_, d) = cfg("done");
        assert!(d.is_done());
    }

    #[test]
    fn close_meets_wait() {
        let (prog, c) = cfg("new x : end! >< end? { close x || wait x.done }");
        assert_eq!(kinds(&c), vec![RedexKind::Close]);
        let d = c.step(&prog, &c.redexes()[0]).unwrap();
        assert!(d.is_done());
    }

    #[test]
    fn select_reaches_a_case_under_its_own_outputs() {
        let (prog, c) = cfg("new x : +{a: &{m: end?}} >< &{a: +{m: end!}} { x!a.case x {m: wait x.done} || x!m.case x {a: close x} }");
        let rs = c.redexes();
        assert_eq!(rs.len(), 2, "{rs:?}");
        let r = rs.iter().find(|r| r.side == Side::Left).unwrap();
        assert_eq!(r.message.as_deref(), Some("a"));
        let d = c.step(&prog, r).unwrap();
        let Some(TreeKind::Cut { types: Some(t), .. }) = Some(&d.root.kind) else { panic!() };
        assert_eq!(t.left.to_string(), "&{m: end?}");
        assert_eq!(t.right.to_string(), "+{m: end!}");
    }

    #[test]
    fn no_close_under_a_buffer() {
        let (_, c) = cfg("new x : end! >< end? { x!a.close x || wait x.done }");
        assert!(c.redexes().is_empty());
    }

    #[test]
    fn choice_steps_to_either_side() {
        let (prog, c) = cfg("done (+) x!a.close x");
        let rs = c.redexes();
        assert_eq!(rs.len(), 2);
        assert!(c.step(&prog, &rs[0]).unwrap().is_done());
        let right = c.step(&prog, &rs[1]).unwrap();
        assert_eq!(right.readback(), parse_process("x!a.close x").unwrap());
    }

    #[test]
    fn link_renames_the_peer() {
        let (prog, c) = cfg("new x : end? >< end! { link x y || x!a.close x }");
        let rs = c.redexes();
        assert_eq!(kinds(&c), vec![RedexKind::Link]);
        let d = c.step(&prog, &rs[0]).unwrap();
        assert_eq!(d.readback(), parse_process("y!a.close y").unwrap());
    }

    #[test]
    fn fork_opens_a_new_session() {
        let src = "new x : !(end!).end! >< ?(end?).end? { x!(z){close z}.close x || x?(w).wait w.wait x.done }";
        let (prog, mut c) = cfg(src);
        assert_eq!(kinds(&c), vec![RedexKind::Fork]);
        c = c.step(&prog, &c.redexes()[0]).unwrap();
        let TreeKind::Cut { chan, types: Some(t), .. } = &c.root.kind else { panic!() };
        assert_eq!(chan, "z");
        assert_eq!((t.left.to_string().as_str(), t.right.to_string().as_str()), ("end!", "end?"));
        let mut steps = 0;
        while !c.is_done() {
            let rs = c.redexes();
            assert!(!rs.is_empty(), "stuck at {}", c.readback());
            c = c.step(&prog, &rs[0]).unwrap();
            steps += 1;
        }
        assert_eq!(steps, 2);
    }

    #[test]
    fn split_tasks_accumulate() {
        let src = "type S = +{task@1: S, stop: T}\ntype T = &{res: T, stop: end?}\ntype U = &{task@1: +{res: U}, stop: +{stop: end!}}
            def Split(x, y) = y!task.Split(x, y) (+) y!stop.Gather(x, y)
            def Gather(x, y) = case y {res: Gather(x, y), stop: wait y.x!resp.close x}
            def Worker(y) = case y {task: y!res.Worker(y), stop: y!stop.close y}
            new x : +{resp: end!} >< &{resp: end?} { new y : S >< U { Split(x, y) || Worker(y) } || case x {resp: wait x.done} }";
        let (prog, mut c) = cfg(src);
        for _ in 0..3 {
            let r = c.redexes().into_iter().find(|r| r.kind == RedexKind::Choice && r.side == Side::Left).unwrap();
            c = c.step(&prog, &r).unwrap();
        }
        assert_eq!(channels_of(&c.root).get("y"), Some(&3));
    }

    #[test]
    fn delegated_endpoints_take_their_peer_along() {
        // z's endpoint is sent over x before z is used
        let src = "new x : !(end?).end! >< ?(end!).end? {
                new z : end? >< end! { x!(w){link w z}.close x || close z }
              || x?(v).wait x.wait v.done }";
        let (prog, mut c) = cfg(src);
        let TreeKind::Cut { chan, .. } = &c.root.kind else { panic!() };
        assert_eq!(chan, "x");
        let mut steps = 0;
        while !c.is_done() {
            let rs = c.redexes();
            assert!(!rs.is_empty(), "stuck at {}", c.readback());
            c = c.step(&prog, &rs[0]).unwrap();
            steps += 1;
            assert!(steps < 20);
        }
    }

    #[test]
    fn deadlock_is_stuck() {
        let (_, c) = cfg("new x : end! >< end? { close y || wait x.done }");
        assert!(c.redexes().is_empty());
        assert!(!c.is_done());
    }

    #[test]
    fn stale_redexes_are_rejected() {
        let (prog, c) = cfg("done (+) done");
        let mut r = c.redexes()[0].clone();
        r.kind = RedexKind::Close;
        assert_eq!(c.step(&prog, &r).unwrap_err(), StepError::Stale);
    }
}
