//! Type checking of CaP programs against declared signatures, with measure
//! inference and the cut and link side conditions discharged by the relation
//! checker.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::{self, Write as _};

use serde_json::{json, Value};

use crate::cap::{CutTypes, Name, Proc, Program};
use crate::measure::{solve, Expr, Measure, DEFAULT_CAP};
use crate::relation::{check, Budget, RelationKind, RelationVerdict, Verdict};
use crate::types::{Node, SessionType};

type Ctx = BTreeMap<Name, SessionType>;

#[derive(Clone, Debug)]
pub struct CheckOptions {
    /// Obligation ids (`cut-y`, `link-x-y`, ...) to accept without checking.
    pub assume: BTreeSet<String>,
    pub budget: Budget,
    pub cap: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions { assume: BTreeSet::new(), budget: Budget::default(), cap: DEFAULT_CAP }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ObligationKind {
    /// `Compose(S, T)` for a cut annotated `S >< T`.
    Cut,
    /// `FairSub(dual S, T)` for `link x y` with `x : S, y : T`.
    Link,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ObligationVerdict {
    Yes,
    No,
    Unknown,
    Assumed,
}

impl ObligationVerdict {
    pub fn name(self) -> &'static str {
        match self {
            ObligationVerdict::Yes => "yes",
            ObligationVerdict::No => "no",
            ObligationVerdict::Unknown => "unknown",
            ObligationVerdict::Assumed => "assumed",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Obligation {
    pub id: String,
    pub kind: ObligationKind,
    /// Definition containing the site, or `main`.
    pub owner: Name,
    pub left: SessionType,
    pub right: SessionType,
    pub verdict: ObligationVerdict,
    pub detail: Option<RelationVerdict>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Overall {
    WellTyped,
    IllTyped(Vec<String>),
    /// Ids of the obligations that are not `Yes`.
    Conditional(Vec<String>),
}

#[derive(Clone, Debug)]
pub struct TypeReport {
    pub measures: Vec<(Name, Measure)>,
    pub main_measure: Option<Measure>,
    pub obligations: Vec<Obligation>,
    /// Typing rules used by the derivations, by name.
    pub rules: BTreeSet<&'static str>,
    pub overall: Overall,
}

impl TypeReport {
    pub fn measure(&self, def: &str) -> Option<Measure> {
        self.measures.iter().find(|(n, _)| n == def).map(|(_, m)| *m)
    }

    pub fn is_ill_typed(&self) -> bool {
        matches!(self.overall, Overall::IllTyped(_))
    }

    /// 0 when every obligation holds or is assumed, 1 when ill typed, 2 when
    /// some obligation is undecided.
    pub fn exit_code(&self) -> i32 {
        match &self.overall {
            Overall::WellTyped => 0,
            Overall::IllTyped(_) => 1,
            Overall::Conditional(_) => {
                if self.obligations.iter().any(|o| o.verdict == ObligationVerdict::Unknown) {
                    2
                } else {
                    0
                }
            }
        }
    }

    pub fn to_json(&self) -> Value {
        let (status, items) = match &self.overall {
            Overall::WellTyped => ("well-typed", Vec::new()),
            Overall::IllTyped(r) => ("ill-typed", r.clone()),
            Overall::Conditional(ids) => ("conditional", ids.clone()),
        };
        json!({
            "overall": status,
            "reasons": if matches!(self.overall, Overall::IllTyped(_)) { json!(items) } else { json!([]) },
            "pending": if matches!(self.overall, Overall::Conditional(_)) { json!(items) } else { json!([]) },
            "measures": self.measures.iter().map(|(n, m)| (n.clone(), json!(m.to_string()))).collect::<serde_json::Map<_, _>>(),
            "main_measure": self.main_measure.map(|m| m.to_string()),
            "obligations": self.obligations.iter().map(|o| json!({
                "id": o.id,
                "kind": match o.kind { ObligationKind::Cut => "compose", ObligationKind::Link => "fair-subtype" },
                "owner": o.owner,
                "left": o.left.render(),
                "right": o.right.render(),
                "verdict": o.verdict.name(),
                "pairs_explored": o.detail.as_ref().map(|d| d.stats.pairs_explored),
            })).collect::<Vec<_>>(),
            "rules": self.rules.iter().collect::<Vec<_>>(),
        })
    }
}

impl fmt::Display for TypeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.overall {
            Overall::WellTyped => writeln!(f, "well typed")?,
            Overall::IllTyped(rs) => {
                writeln!(f, "ill typed")?;
                for r in rs {
                    writeln!(f, "  error: {r}")?;
                }
            }
            Overall::Conditional(ids) => writeln!(f, "well typed under {} pending obligation(s): {}", ids.len(), ids.join(", "))?,
        }
        for (n, m) in &self.measures {
            writeln!(f, "  measure {n} = {m}")?;
        }
        if let Some(m) = self.main_measure {
            writeln!(f, "  measure main = {m}")?;
        }
        for o in &self.obligations {
            let what = match o.kind {
                ObligationKind::Cut => "compose",
                ObligationKind::Link => "fair subtype",
            };
            writeln!(f, "  {} ({what}, in {}): {}", o.id, o.owner, o.verdict.name())?;
        }
        Ok(())
    }
}

/// A checker that remembers relation verdicts across programs.
#[derive(Default)]
pub struct Typechecker {
    pub opts: CheckOptions,
    cache: HashMap<(RelationKind, SessionType, SessionType), RelationVerdict>,
}

pub fn typecheck(prog: &Program, opts: &CheckOptions) -> TypeReport {
    Typechecker::new(opts.clone()).check(prog)
}

/// Measures for the least-measure scheduler: the inferred ones when every
/// definition has a signature and the program is not ill typed, otherwise the
/// estimate computed from the bodies alone.
pub fn scheduler_measures(prog: &Program, report: &TypeReport) -> HashMap<Name, Measure> {
    let typed = prog.defs.iter().all(|d| prog.sig(&d.name).is_some()) && !report.is_ill_typed();
    if typed {
        report.measures.iter().cloned().collect()
    } else {
        crate::cap::proxy_measures(prog)
    }
}

impl Typechecker {
    pub fn new(opts: CheckOptions) -> Self {
        Typechecker { opts, cache: HashMap::new() }
    }

    pub fn check(&mut self, prog: &Program) -> TypeReport {
        self.check_main(prog, prog.main.as_ref())
    }

    /// Check the definitions of `prog` and `main` in the empty context.
    pub fn check_main(&mut self, prog: &Program, main: Option<&Proc>) -> TypeReport {
        let mut errors = Vec::new();
        let mut run = Run { prog, opts: &self.opts, cache: &mut self.cache, obligations: Vec::new(), ids: HashMap::new(), rules: BTreeSet::new(), owner: String::new() };
        let mut eqs = Vec::new();
        for d in &prog.defs {
            run.owner = d.name.clone();
            let ctx = match prog.sig(&d.name) {
                None => {
                    errors.push(format!("no signature for `{}`", d.name));
                    None
                }
                Some(sig) if sig.params.len() != d.params.len() => {
                    errors.push(format!("signature of `{}` has {} channels, definition has {}", d.name, sig.params.len(), d.params.len()));
                    None
                }
                Some(sig) => Some(d.params.iter().cloned().zip(sig.params.iter().map(|(_, t)| t.clone())).collect::<Ctx>()),
            };
            let e = match ctx.map(|c| run.check(&d.body, c)) {
                Some(Ok(e)) => e,
                Some(Err(msg)) => {
                    errors.push(format!("in `{}`: {msg}", d.name));
                    Expr::Const(0)
                }
                None => Expr::Const(0),
            };
            eqs.push(e);
        }
        let main_expr = main.map(|m| {
            run.owner = "main".into();
            run.check(m, Ctx::new()).unwrap_or_else(|msg| {
                errors.push(format!("in main: {msg}"));
                Expr::Const(0)
            })
        });
        let sol = solve(&eqs, self.opts.cap);
        let measures: Vec<(Name, Measure)> = prog.defs.iter().map(|d| d.name.clone()).zip(sol.iter().copied()).collect();
        let main_measure = main_expr.map(|e| e.eval(&sol));
        for (n, m) in &measures {
            if !m.is_finite() {
                errors.push(format!("`{n}` has no finite measure"));
            }
        }
        if main_measure == Some(Measure::Infinity) {
            errors.push("main has no finite measure".into());
        }
        let obligations = run.obligations;
        let rules = run.rules;
        for o in &obligations {
            if o.verdict == ObligationVerdict::No {
                errors.push(format!("{} does not hold ({} in `{}`)", o.id, o.left, o.owner));
            }
        }
        let overall = if !errors.is_empty() {
            Overall::IllTyped(errors)
        } else {
            let pending: Vec<String> = obligations.iter().filter(|o| o.verdict != ObligationVerdict::Yes).map(|o| o.id.clone()).collect();
            if pending.is_empty() {
                Overall::WellTyped
            } else {
                Overall::Conditional(pending)
            }
        };
        TypeReport { measures, main_measure, obligations, rules, overall }
    }
}

struct Run<'a> {
    prog: &'a Program,
    opts: &'a CheckOptions,
    cache: &'a mut HashMap<(RelationKind, SessionType, SessionType), RelationVerdict>,
    obligations: Vec<Obligation>,
    ids: HashMap<String, usize>,
    rules: BTreeSet<&'static str>,
    owner: Name,
}

fn show(ctx: &Ctx) -> String {
    let mut s = String::from("{");
    for (i, (x, t)) in ctx.iter().enumerate() {
        let sep = if i == 0 { "" } else { ", " };
        let _ = write!(s, "{sep}{x}: {t}");
    }
    s.push('}');
    s
}

fn lookup<'c>(ctx: &'c Ctx, x: &str, what: &str) -> Result<&'c SessionType, String> {
    ctx.get(x).ok_or_else(|| format!("{what}: `{x}` is not in context {}", show(ctx)))
}

/// Split `rest` between a process with free names `fv` and the remainder.
fn split(rest: Ctx, fv: &BTreeSet<Name>) -> (Ctx, Ctx) {
    rest.into_iter().partition(|(n, _)| fv.contains(n))
}

impl Run<'_> {
    fn obligation(&mut self, kind: ObligationKind, base: String, left: SessionType, right: SessionType) {
        let k = self.ids.entry(base.clone()).or_insert(0);
        *k += 1;
        let id = if *k == 1 { base } else { format!("{base}-{k}") };
        let (verdict, detail) = if self.opts.assume.contains(&id) {
            (ObligationVerdict::Assumed, None)
        } else {
            let (rel, s, t) = match kind {
                ObligationKind::Cut => (RelationKind::Compose, left.clone(), right.clone()),
                ObligationKind::Link => (RelationKind::FairSub, left.dual(), right.clone()),
            };
            let budget = self.opts.budget;
            let v = self
                .cache
                .entry((rel, s.clone(), t.clone()))
                .or_insert_with(|| check(rel, &s, &t, budget).expect("composition and fair subtyping accept any types"))
                .clone();
            let verdict = match v.verdict {
                Verdict::Yes => ObligationVerdict::Yes,
                Verdict::No => ObligationVerdict::No,
                Verdict::Unknown => ObligationVerdict::Unknown,
            };
            (verdict, Some(v))
        };
        self.obligations.push(Obligation { id, kind, owner: self.owner.clone(), left, right, verdict, detail });
    }

    /// The measure of `p` in `ctx`, as an expression over definition measures.
    fn check(&mut self, p: &Proc, mut ctx: Ctx) -> Result<Expr, String> {
        match p {
            Proc::Done => {
                self.rules.insert("done");
                if ctx.is_empty() {
                    Ok(Expr::Const(0))
                } else {
                    Err(format!("done in non-empty context {}", show(&ctx)))
                }
            }
            Proc::Close(x) => {
                self.rules.insert("one");
                match (ctx.len(), ctx.get(x).map(|t| t.top_node())) {
                    (1, Some(Node::One)) => Ok(Expr::Const(1)),
                    _ => Err(format!("close {x} needs context {{{x}: end!}}, found {}", show(&ctx))),
                }
            }
            Proc::Wait(x, q) => {
                self.rules.insert("bot");
                let t = lookup(&ctx, x, "wait")?;
                if !matches!(t.top_node(), Node::Bot) {
                    return Err(format!("wait {x} on type {t}"));
                }
                ctx.remove(x);
                self.check(q, ctx)
            }
            Proc::Select(x, tag, q) => {
                self.rules.insert("plus");
                let t = lookup(&ctx, x, "select")?.clone();
                let Node::Plus(bs) = t.top_node() else { return Err(format!("{x}!{tag} on type {t}")) };
                let b = bs.get(tag).ok_or_else(|| format!("tag `{tag}` not offered by {t}"))?;
                let m = b.measure as u64;
                ctx.insert(x.clone(), t.at(b.cont));
                Ok(Expr::Const(1 + m).plus(self.check(q, ctx)?))
            }
            Proc::Case(x, branches) => {
                self.rules.insert("with");
                let t = lookup(&ctx, x, "case")?.clone();
                let Node::With(bs) = t.top_node() else { return Err(format!("case {x} on type {t}")) };
                let mut parts = Vec::new();
                for (tag, b) in bs {
                    let q = branches
                        .iter()
                        .find(|(u, _)| u == tag)
                        .map(|(_, q)| q)
                        .ok_or_else(|| format!("case {x} lacks a branch for `{tag}` required by {t}"))?;
                    let mut c = ctx.clone();
                    c.insert(x.clone(), t.at(b.cont));
                    parts.push(Expr::SubSat(Box::new(self.check(q, c)?), b.measure as u64));
                }
                Ok(Expr::Max(parts))
            }
            Proc::Fork { chan: x, bound: y, payload, cont } => {
                self.rules.insert("times");
                let t = lookup(&ctx, x, "channel output")?.clone();
                let Node::Times(pay, rest) = *t.top_node() else { return Err(format!("{x}!({y}) on type {t}")) };
                ctx.remove(x);
                let mut fv = payload.free_names();
                fv.remove(y);
                if fv.contains(x) {
                    return Err(format!("`{x}` used both in the payload and after {x}!({y})"));
                }
                let (mut cp, mut cq) = split(ctx, &fv);
                cp.insert(y.clone(), t.at(pay));
                cq.insert(x.clone(), t.at(rest));
                let a = self.check(payload, cp)?;
                let b = self.check(cont, cq)?;
                Ok(Expr::Const(1).plus(a).plus(b))
            }
            Proc::Join { chan: x, bound: y, cont } => {
                self.rules.insert("par");
                let t = lookup(&ctx, x, "channel input")?.clone();
                let Node::Par(pay, rest) = *t.top_node() else { return Err(format!("{x}?({y}) on type {t}")) };
                if y == x || ctx.contains_key(y) {
                    return Err(format!("bound name `{y}` is already in use"));
                }
                ctx.insert(x.clone(), t.at(rest));
                ctx.insert(y.clone(), t.at(pay));
                self.check(cont, ctx)
            }
            Proc::Choice(a, b) => {
                self.rules.insert("choice");
                let l = self.check(a, ctx.clone())?;
                let r = self.check(b, ctx)?;
                Ok(Expr::Const(1).plus(Expr::Min(vec![l, r])))
            }
            Proc::Link(x, y) => {
                self.rules.insert("link");
                match (ctx.len(), ctx.get(x), ctx.get(y)) {
                    (2, Some(s), Some(t)) if x != y => {
                        let (s, t) = (s.clone(), t.clone());
                        self.obligation(ObligationKind::Link, format!("link-{x}-{y}"), s, t);
                        Ok(Expr::Const(1))
                    }
                    _ => Err(format!("link {x} {y} in context {}", show(&ctx))),
                }
            }
            Proc::Cut { chan: x, types, left, right } => {
                self.rules.insert("cut");
                let Some(CutTypes { left: s, right: t }) = types else {
                    return Err(format!("cut on `{x}` has no type annotation"));
                };
                if ctx.contains_key(x) {
                    return Err(format!("cut name `{x}` is already in use"));
                }
                let mut fv = left.free_names();
                fv.remove(x);
                let (mut cl, mut cr) = split(ctx, &fv);
                cl.insert(x.clone(), s.clone());
                cr.insert(x.clone(), t.clone());
                self.obligation(ObligationKind::Cut, format!("cut-{x}"), s.clone(), t.clone());
                let a = self.check(left, cl)?;
                let b = self.check(right, cr)?;
                Ok(a.plus(b))
            }
            Proc::Call(a, args) => {
                self.rules.insert("call");
                let sig = self.prog.sig(a).ok_or_else(|| format!("no signature for `{a}`"))?;
                if sig.params.len() != args.len() {
                    return Err(format!("`{a}` expects {} channels, found {}", sig.params.len(), args.len()));
                }
                let want: Ctx = args.iter().cloned().zip(sig.params.iter().map(|(_, t)| t.clone())).collect();
                if want.len() != args.len() {
                    return Err(format!("repeated argument in {a}({})", args.join(", ")));
                }
                if want != ctx {
                    return Err(format!("{a}({}) needs context {}, found {}", args.join(", "), show(&want), show(&ctx)));
                }
                let i = self.prog.defs.iter().position(|d| d.name == *a).ok_or_else(|| format!("no definition for `{a}`"))?;
                Ok(Expr::Var(i))
            }
        }
    }
}
