//! The CaP process calculus: syntax, a buffered-configuration semantics and
//! schedulers for running closed programs.

mod config;
mod parse;
mod sched;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use thiserror::Error;

use crate::lex::{Pos, SyntaxError};
use crate::types::{SessionType, Tag, TypeError, TypeSource};

pub use config::{Config, OutItem, Redex, RedexKind, Side, StepError, Tree, TreeKind};
pub use parse::{parse_process, parse_program};
pub use sched::{probe, proxy_measures, run, Outcome, RunResult, Scheduler, TraceEntry};

pub type Name = String;

/// Annotation of a cut: the types of the left and right endpoints.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CutTypes {
    pub left: SessionType,
    pub right: SessionType,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Proc {
    Done,
    Link(Name, Name),
    Close(Name),
    Wait(Name, Box<Proc>),
    Select(Name, Tag, Box<Proc>),
    /// Branches keep their source order.
    Case(Name, Vec<(Tag, Proc)>),
    Fork { chan: Name, bound: Name, payload: Box<Proc>, cont: Box<Proc> },
    Join { chan: Name, bound: Name, cont: Box<Proc> },
    Choice(Box<Proc>, Box<Proc>),
    Cut { chan: Name, types: Option<CutTypes>, left: Box<Proc>, right: Box<Proc> },
    Call(Name, Vec<Name>),
}

impl Proc {
    pub fn free_names(&self) -> BTreeSet<Name> {
        let mut out = BTreeSet::new();
        self.collect_free(&mut out);
        out
    }

    fn collect_free(&self, out: &mut BTreeSet<Name>) {
        match self {
            Proc::Done => {}
            Proc::Link(x, y) => {
                out.insert(x.clone());
                out.insert(y.clone());
            }
            Proc::Close(x) => {
                out.insert(x.clone());
            }
            Proc::Wait(x, p) | Proc::Select(x, _, p) => {
                out.insert(x.clone());
                p.collect_free(out);
            }
            Proc::Case(x, bs) => {
                out.insert(x.clone());
                for (_, p) in bs {
                    p.collect_free(out);
                }
            }
            Proc::Fork { chan, bound, payload, cont } => {
                out.insert(chan.clone());
                let mut inner = payload.free_names();
                inner.remove(bound);
                out.extend(inner);
                cont.collect_free(out);
            }
            Proc::Join { chan, bound, cont } => {
                let mut inner = cont.free_names();
                inner.remove(bound);
                out.extend(inner);
                out.insert(chan.clone());
            }
            Proc::Choice(p, q) => {
                p.collect_free(out);
                q.collect_free(out);
            }
            Proc::Cut { chan, left, right, .. } => {
                let mut inner = left.free_names();
                right.collect_free(&mut inner);
                inner.remove(chan);
                out.extend(inner);
            }
            Proc::Call(_, args) => out.extend(args.iter().cloned()),
        }
    }

    pub fn mentions(&self, x: &str) -> bool {
        self.free_names().contains(x)
    }

    /// Capture-avoiding renaming of free names; binders that would capture a
    /// target name are renamed to fresh ones drawn from `names`.
    pub fn rename(&self, map: &HashMap<Name, Name>, names: &mut NameSupply) -> Proc {
        if map.is_empty() {
            return self.clone();
        }
        let r = |n: &Name| map.get(n).cloned().unwrap_or_else(|| n.clone());
        match self {
            Proc::Done => Proc::Done,
            Proc::Link(x, y) => Proc::Link(r(x), r(y)),
            Proc::Close(x) => Proc::Close(r(x)),
            Proc::Wait(x, p) => Proc::Wait(r(x), Box::new(p.rename(map, names))),
            Proc::Select(x, t, p) => Proc::Select(r(x), t.clone(), Box::new(p.rename(map, names))),
            Proc::Case(x, bs) => {
                Proc::Case(r(x), bs.iter().map(|(t, p)| (t.clone(), p.rename(map, names))).collect())
            }
            Proc::Fork { chan, bound, payload, cont } => {
                let (bound, inner) = rebind(bound, map, names);
                Proc::Fork {
                    chan: r(chan),
                    bound,
                    payload: Box::new(payload.rename(&inner, names)),
                    cont: Box::new(cont.rename(map, names)),
                }
            }
            Proc::Join { chan, bound, cont } => {
                let (bound, inner) = rebind(bound, map, names);
                Proc::Join { chan: r(chan), bound, cont: Box::new(cont.rename(&inner, names)) }
            }
            Proc::Choice(p, q) => Proc::Choice(Box::new(p.rename(map, names)), Box::new(q.rename(map, names))),
            Proc::Cut { chan, types, left, right } => {
                let (chan, inner) = rebind(chan, map, names);
                Proc::Cut {
                    chan,
                    types: types.clone(),
                    left: Box::new(left.rename(&inner, names)),
                    right: Box::new(right.rename(&inner, names)),
                }
            }
            Proc::Call(a, args) => Proc::Call(a.clone(), args.iter().map(r).collect()),
        }
    }

    pub fn rename_one(&self, from: &str, to: &str, names: &mut NameSupply) -> Proc {
        if from == to {
            return self.clone();
        }
        self.rename(&HashMap::from([(from.to_string(), to.to_string())]), names)
    }
}

/// The map to use under a binder `b`: it shadows `b`, and if `b` collides with
/// a target name it is renamed first.
fn rebind(b: &Name, map: &HashMap<Name, Name>, names: &mut NameSupply) -> (Name, HashMap<Name, Name>) {
    let mut inner = map.clone();
    inner.remove(b);
    if inner.values().any(|v| v == b) {
        let fresh = names.fresh(b);
        inner.insert(b.clone(), fresh.clone());
        (fresh, inner)
    } else {
        (b.clone(), inner)
    }
}

/// Source of channel names that have not been used before.
#[derive(Clone, Debug, Default)]
pub struct NameSupply {
    used: HashSet<Name>,
}

impl NameSupply {
    pub fn reserve(&mut self, n: &str) {
        self.used.insert(n.to_string());
    }

    /// `base` itself if unused, otherwise `base'k` for the least free `k`.
    pub fn fresh(&mut self, base: &str) -> Name {
        let stem = base.split('\'').next().unwrap_or(base);
        let mut cand = stem.to_string();
        let mut k = 1;
        while self.used.contains(&cand) {
            k += 1;
            cand = format!("{stem}'{k}");
        }
        self.used.insert(cand.clone());
        cand
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Def {
    pub name: Name,
    pub params: Vec<Name>,
    pub body: Proc,
    pub pos: Pos,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sig {
    pub name: Name,
    pub params: Vec<(Name, SessionType)>,
    pub pos: Pos,
}

#[derive(Clone, Debug, Default)]
pub struct Program {
    pub types: TypeSource,
    pub sigs: Vec<Sig>,
    pub defs: Vec<Def>,
    pub main: Option<Proc>,
}

impl Program {
    pub fn def(&self, name: &str) -> Option<&Def> {
        self.defs.iter().find(|d| d.name == name)
    }

    pub fn sig(&self, name: &str) -> Option<&Sig> {
        self.sigs.iter().find(|s| s.name == name)
    }

    /// Add the signatures (and the types they use) of another file.
    pub fn merge_sigs(&mut self, other: Program) -> Result<(), CapError> {
        for d in other.types.decls {
            if self.types.get(&d.name).is_none() {
                self.types.decls.push(d);
            }
        }
        for s in other.sigs {
            if self.sig(&s.name).is_some() {
                return Err(CapError::Duplicate { what: "signature", name: s.name, pos: s.pos });
            }
            self.sigs.push(s);
        }
        Ok(())
    }

    /// The body of `A(args)` with parameters replaced by the arguments.
    pub fn unfold(&self, name: &str, args: &[Name], names: &mut NameSupply) -> Option<Proc> {
        let def = self.def(name)?;
        if def.params.len() != args.len() {
            return None;
        }
        let map: HashMap<Name, Name> =
            def.params.iter().cloned().zip(args.iter().cloned()).filter(|(p, a)| p != a).collect();
        // parameters are substituted simultaneously, so route through fresh
        // names when a parameter is also an argument
        if map.keys().any(|k| map.values().any(|v| v == k)) {
            let tmp: HashMap<Name, Name> = map.keys().map(|k| (k.clone(), names.fresh("$tmp"))).collect();
            let back: HashMap<Name, Name> = tmp.iter().map(|(k, t)| (t.clone(), map[k].clone())).collect();
            return Some(def.body.rename(&tmp, names).rename(&back, names));
        }
        Some(def.body.rename(&map, names))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CapError {
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error(transparent)]
    Type(#[from] TypeError),
    #[error("duplicate {what} `{name}` at {pos}")]
    Duplicate { what: &'static str, name: Name, pos: Pos },
    #[error("call to undefined process `{0}`")]
    UnknownDef(Name),
    #[error("`{name}` expects {expected} arguments, found {found}")]
    Arity { name: Name, expected: usize, found: usize },
    #[error("unguarded invocation of `{0}`")]
    Unguarded(Name),
    #[error("free names of `{name}` are {{{found}}} but its parameters are {{{expected}}}")]
    FreeNames { name: Name, expected: String, found: String },
    #[error("more than one main process")]
    TwoMains,
}

impl fmt::Display for Proc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Proc::Done => write!(f, "done"),
            Proc::Link(x, y) => write!(f, "link {x} {y}"),
            Proc::Close(x) => write!(f, "close {x}"),
            Proc::Wait(x, p) => write!(f, "wait {x}.{}", Guarded(p)),
            Proc::Select(x, t, p) => write!(f, "{x}!{t}.{}", Guarded(p)),
            Proc::Case(x, bs) => {
                write!(f, "case {x} {{")?;
                for (i, (t, p)) in bs.iter().enumerate() {
                    let sep = if i == 0 { "" } else { ", " };
                    write!(f, "{sep}{t}: {p}")?;
                }
                write!(f, "}}")
            }
            Proc::Fork { chan, bound, payload, cont } => write!(f, "{chan}!({bound}){{{payload}}}.{}", Guarded(cont)),
            Proc::Join { chan, bound, cont } => write!(f, "{chan}?({bound}).{}", Guarded(cont)),
            Proc::Choice(p, q) => write!(f, "{} (+) {}", Guarded(p), Guarded(q)),
            Proc::Cut { chan, types, left, right } => {
                write!(f, "new {chan}")?;
                if let Some(CutTypes { left, right }) = types {
                    write!(f, " : {} >< {}", left.render_inline(), right.render_inline())?;
                }
                write!(f, " {{ {left} || {right} }}")
            }
            Proc::Call(a, args) => write!(f, "{a}({})", args.join(", ")),
        }
    }
}

/// Parenthesizes choices in positions that bind tighter than `(+)`.
struct Guarded<'a>(&'a Proc);

impl fmt::Display for Guarded<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Proc::Choice(..) => write!(f, "({})", self.0),
            p => write!(f, "{p}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_names_respect_binders() {
        let p = parse_process("new y : end! >< end? { close y || wait y.x!(z){close z}.close x }").unwrap();
        assert_eq!(p.free_names().into_iter().collect::<Vec<_>>(), vec!["x".to_string()]);
    }

    #[test]
    fn renaming_avoids_capture() {
        let p = parse_process("x?(y).link x y").unwrap();
        let mut names = NameSupply::default();
        names.reserve("x");
        names.reserve("y");
        let q = p.rename_one("x", "y", &mut names);
        // the bound y must not capture the renamed x
        let Proc::Join { chan, bound, cont } = &q else { panic!("{q}") };
        assert_eq!(chan, "y");
        assert_ne!(bound, "y");
        assert_eq!(**cont, Proc::Link("y".into(), bound.clone()));
    }

    #[test]
    fn fresh_names_extend_the_stem() {
        let mut names = NameSupply::default();
        assert_eq!(names.fresh("y"), "y");
        assert_eq!(names.fresh("y"), "y'2");
        assert_eq!(names.fresh("y'2"), "y'3");
    }

    #[test]
    fn unfolding_swaps_arguments_simultaneously() {
        let prog = parse_program("def A(x, y) = x!a.y!b.A(x, y)\nA(y, x)").unwrap();
        let mut names = NameSupply::default();
        let body = prog.unfold("A", &["y".into(), "x".into()], &mut names).unwrap();
        assert_eq!(body.to_string(), "y!a.x!b.A(y, x)");
    }

    #[test]
    fn printing_round_trips() {
        let src = "case x {req: new y : +{a: end!} >< &{a: end?} { y!a.close y || case y {a: wait y.done} } (+) done}";
        let p = parse_process(src).unwrap();
        assert_eq!(parse_process(&p.to_string()).unwrap(), p);
    }
}
