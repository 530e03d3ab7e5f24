use std::collections::{HashMap, HashSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::{Config, Name, Proc, Program, Redex, RedexKind, Side, StepError};
use crate::measure::{solve, Expr, Measure, DEFAULT_CAP};

#[derive(Clone, Debug)]
pub enum Scheduler {
    /// Uniform over enabled redexes, reproducible from the seed.
    Random(u64),
    /// Communicate whenever possible; resolve choices towards the branch of
    /// least measure, with calls measured by the given table.
    MinMeasure(HashMap<Name, Measure>),
    /// Fire the redex class that has waited longest; alternate choice sides.
    RoundRobinFair,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    DoneReached,
    StuckNotDone,
    BudgetExhausted,
}

impl Outcome {
    pub fn name(&self) -> &'static str {
        match self {
            Outcome::DoneReached => "done",
            Outcome::StuckNotDone => "stuck",
            Outcome::BudgetExhausted => "budget",
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub outcome: Outcome,
    pub steps: usize,
    pub last: Config,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEntry {
    pub step: usize,
    pub rule: &'static str,
    pub channel: Option<Name>,
    pub message: Option<String>,
    pub decision: String,
}

impl TraceEntry {
    pub fn to_json(&self) -> Value {
        json!({
            "step": self.step,
            "rule": self.rule,
            "channel": self.channel,
            "message": self.message,
            "decision": self.decision,
        })
    }
}

struct State {
    rng: ChaCha8Rng,
    /// Last step at which each redex class fired, and how often.
    fired: HashMap<String, (usize, usize)>,
}

fn class(r: &Redex) -> String {
    match r.kind {
        RedexKind::Choice => format!("choice@{:?}", r.at),
        _ => format!("{}@{}", r.kind.rule(), r.channel.as_deref().unwrap_or("")),
    }
}

fn pick(s: &Scheduler, st: &mut State, c: &Config, rs: &[Redex]) -> (usize, String) {
    match s {
        Scheduler::Random(_) => {
            let i = st.rng.gen_range(0..rs.len());
            (i, format!("random {} of {}", i + 1, rs.len()))
        }
        Scheduler::MinMeasure(table) => {
            if let Some(i) = rs.iter().position(|r| r.kind != RedexKind::Choice) {
                return (i, "communicate".into());
            }
            let thread = c.root_thread(&rs[0].at);
            let side = match thread {
                Some(Proc::Choice(p, q)) if branch_measure(q, table) < branch_measure(p, table) => Side::Right,
                _ => Side::Left,
            };
            let i = rs.iter().position(|r| r.at == rs[0].at && r.side == side).unwrap_or(0);
            (i, format!("least measure: {}", side.name()))
        }
        Scheduler::RoundRobinFair => {
            let key = |r: &Redex| st.fired.get(&class(r)).map_or((0, 0), |&(last, _)| (1, last));
            let best = rs.iter().map(key).min().unwrap_or((0, 0));
            let first = rs.iter().position(|r| key(r) == best).unwrap_or(0);
            let r = &rs[first];
            let mut i = first;
            if r.kind == RedexKind::Choice {
                let count = st.fired.get(&class(r)).map_or(0, |&(_, n)| n);
                let side = if count.is_multiple_of(2) { Side::Left } else { Side::Right };
                i = rs.iter().position(|q| q.at == r.at && q.kind == RedexKind::Choice && q.side == side).unwrap_or(first);
            }
            (i, format!("longest waiting: {}", class(&rs[i])))
        }
    }
}

/// Run until `done`, a stuck configuration, or `max_steps` reductions.
pub fn run(
    prog: &Program,
    start: Config,
    sched: &Scheduler,
    max_steps: usize,
    mut on_trace: impl FnMut(&TraceEntry, &Config),
) -> Result<RunResult, StepError> {
    let seed = if let Scheduler::Random(seed) = sched { *seed } else { 0 };
    let mut st = State { rng: ChaCha8Rng::seed_from_u64(seed), fired: HashMap::new() };
    let mut c = start;
    for step in 0..max_steps {
        if c.is_done() {
            return Ok(RunResult { outcome: Outcome::DoneReached, steps: step, last: c });
        }
        let rs = c.redexes();
        if rs.is_empty() {
            return Ok(RunResult { outcome: Outcome::StuckNotDone, steps: step, last: c });
        }
        let (i, decision) = pick(sched, &mut st, &c, &rs);
        let r = &rs[i];
        let e = st.fired.entry(class(r)).or_insert((0, 0));
        *e = (step, e.1 + 1);
        c = c.step(prog, r)?;
        let entry = TraceEntry {
            step: step + 1,
            rule: r.kind.rule(),
            channel: r.channel.clone(),
            message: r.message.clone(),
            decision,
        };
        on_trace(&entry, &c);
    }
    let outcome = if c.is_done() {
        Outcome::DoneReached
    } else if c.redexes().is_empty() {
        Outcome::StuckNotDone
    } else {
        Outcome::BudgetExhausted
    };
    Ok(RunResult { outcome, steps: max_steps, last: c })
}

/// Search for a finite run to `done`: the least-measure strategy first, then
/// breadth first over at most `budget` distinct configurations.
pub fn probe(prog: &Program, start: &Config, measures: &HashMap<Name, Measure>, budget: usize) -> bool {
    let greedy = run(prog, start.clone(), &Scheduler::MinMeasure(measures.clone()), budget, |_, _| {});
    if matches!(greedy, Ok(RunResult { outcome: Outcome::DoneReached, .. })) {
        return true;
    }
    let mut seen: HashSet<Config> = HashSet::from([start.clone()]);
    let mut queue = VecDeque::from([start.clone()]);
    while let Some(c) = queue.pop_front() {
        if c.is_done() {
            return true;
        }
        for r in c.redexes() {
            let Ok(d) = c.step(prog, &r) else { continue };
            if seen.len() >= budget {
                return false;
            }
            if seen.insert(d.clone()) {
                queue.push_back(d);
            }
        }
    }
    false
}

/// Upper estimate of the outputs a process performs before terminating,
/// ignoring tag annotations.
fn proxy(p: &Proc, call: &dyn Fn(&str) -> Expr) -> Expr {
    let one = || Expr::Const(1);
    match p {
        Proc::Done => Expr::Const(0),
        Proc::Link(..) | Proc::Close(_) => one(),
        Proc::Wait(_, q) | Proc::Join { cont: q, .. } => proxy(q, call),
        Proc::Select(_, _, q) => one().plus(proxy(q, call)),
        Proc::Case(_, bs) => Expr::Max(bs.iter().map(|(_, q)| proxy(q, call)).collect()),
        Proc::Fork { payload, cont, .. } => one().plus(proxy(payload, call)).plus(proxy(cont, call)),
        Proc::Choice(a, b) => one().plus(Expr::Min(vec![proxy(a, call), proxy(b, call)])),
        Proc::Cut { left, right, .. } => proxy(left, call).plus(proxy(right, call)),
        Proc::Call(a, _) => call(a),
    }
}

fn branch_measure(p: &Proc, table: &HashMap<Name, Measure>) -> Measure {
    let vars: Vec<Name> = table.keys().cloned().collect();
    let env: Vec<Measure> = vars.iter().map(|v| table[v]).collect();
    let call = |a: &str| vars.iter().position(|v| v == a).map_or(Expr::Const(u64::MAX), Expr::Var);
    proxy(p, &call).eval(&env)
}

/// Measures for every definition computed from the bodies alone.  Used when
/// no typing is available; typed programs should use the checker's table.
pub fn proxy_measures(prog: &Program) -> HashMap<Name, Measure> {
    let index = |a: &str| prog.defs.iter().position(|d| d.name == a);
    let call = |a: &str| index(a).map_or(Expr::Const(u64::MAX), Expr::Var);
    let eqs: Vec<Expr> = prog.defs.iter().map(|d| proxy(&d.body, &call)).collect();
    let sol = solve(&eqs, DEFAULT_CAP);
    prog.defs.iter().map(|d| d.name.clone()).zip(sol).collect()
}

impl Config {
    /// The guard of the thread at `path`.
    fn root_thread(&self, path: &[Side]) -> Option<&Proc> {
        let t = self.root.at(path)?;
        match &t.kind {
            super::TreeKind::Thread(p) => Some(p),
            super::TreeKind::Cut { .. } => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cap::parse_program;

    fn start(src: &str) -> (Program, Config) {
        let prog = parse_program(src).unwrap();
        let c = Config::of_program(&prog).unwrap().unwrap();
        (prog, c)
    }

    #[test]
    fn omega_exhausts_the_budget() {
        let (prog, c) = start("def Omega() = Omega() (+) Omega()\nOmega()");
        for s in [Scheduler::Random(1), Scheduler::RoundRobinFair, Scheduler::MinMeasure(proxy_measures(&prog))] {
            let r = run(&prog, c.clone(), &s, 50, |_, _| {}).unwrap();
            assert_eq!(r.outcome, Outcome::BudgetExhausted);
        }
        assert_eq!(proxy_measures(&prog)["Omega"], Measure::Infinity);
    }

    #[test]
    fn probe_examples() {
        let (prog, c) = start("def Omega() = Omega() (+) Omega()\nOmega() (+) done");
        assert!(probe(&prog, &c, &proxy_measures(&prog), 100));
        let (prog, c) = start("def Omega() = Omega() (+) Omega()\nOmega()");
        assert!(!probe(&prog, &c, &proxy_measures(&prog), 10_000));
        let (prog, c) = start("done");
        assert!(probe(&prog, &c, &HashMap::new(), 1));
    }

    #[test]
    fn deadlock_is_reported() {
        let (prog, c) = start("new x : end! >< end? { close y || wait x.done }");
        let r = run(&prog, c, &Scheduler::RoundRobinFair, 10, |_, _| {}).unwrap();
        assert_eq!(r.outcome, Outcome::StuckNotDone);
    }

    #[test]
    fn random_runs_are_reproducible() {
        let src = "def L(x) = x!more.L(x) (+) x!stop.close x\ndef R(x) = case x {more: R(x), stop: wait x.done}
            new x : end! >< end? { L(x) || R(x) }";
        let (prog, c) = start(src);
        let trace = |seed| {
            let mut out = Vec::new();
            run(&prog, c.clone(), &Scheduler::Random(seed), 500, |e, _| out.push(e.clone())).unwrap();
            out
        };
        assert_eq!(trace(4), trace(4));
        let t = trace(4);
        assert!(t.iter().any(|e| e.rule == "r-select"));
        assert_eq!(t.last().unwrap().rule, "r-close");
    }

    #[test]
    fn fair_scheduler_alternates_choices() {
        let (prog, c) = start("def A() = A() (+) done\nA()");
        let r = run(&prog, c, &Scheduler::RoundRobinFair, 10, |_, _| {}).unwrap();
        assert_eq!(r.outcome, Outcome::DoneReached);
        assert_eq!(r.steps, 2);
    }

    #[test]
    fn trace_lines_are_json() {
        let (prog, c) = start("new x : end! >< end? { close x || wait x.done }");
        let mut lines = Vec::new();
        run(&prog, c, &Scheduler::RoundRobinFair, 10, |e, _| lines.push(e.to_json())).unwrap();
        assert_eq!(lines[0]["rule"], "r-close");
        assert_eq!(lines[0]["channel"], "x");
    }
}
