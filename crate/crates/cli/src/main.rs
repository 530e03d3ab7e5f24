//! `kit`: command line front end for the session type toolkit.
//!
//! Exit codes: 0 yes/ok, 1 no/ill typed/stuck, 2 unknown/budget, 3 error.

use std::fmt::{self, Write as _};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use fairkit::cap::{parse_program, probe, run, Config, Outcome, Program};
use fairkit::corpus;
use fairkit::lts::{enabled, enumerate_labels, Dir, Label, Mode};
use fairkit::qm::{encode, simulate_qm, QmOutcome, QueueMachine};
use fairkit::relation::{check, compose_vs_fairsub, Budget, RelationKind, RelationVerdict, Verdict};
use fairkit::typecheck::{scheduler_measures, typecheck, CheckOptions};
use fairkit::types::{parse_types, resolve, TypeSource};
use fairkit::SessionType;

#[derive(Parser)]
#[command(name = "kit", version, about = "Fair asynchronous session subtyping and the CaP calculus")]
struct Cli {
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone, Copy)]
struct BudgetArgs {
    #[arg(long, default_value_t = Budget::default().max_pairs)]
    max_pairs: usize,
    #[arg(long, default_value_t = Budget::default().max_nodes)]
    max_nodes: usize,
}

impl From<BudgetArgs> for Budget {
    fn from(b: BudgetArgs) -> Budget {
        Budget { max_pairs: b.max_pairs, max_nodes: b.max_nodes }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DirArg {
    In,
    Out,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Must,
    Ind,
    Full,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Must => Mode::Must,
            ModeArg::Ind => Mode::Ind,
            ModeArg::Full => Mode::Full,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SchedArg {
    Random,
    Minmeasure,
    Fair,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print every type declared in a file in canonical form.
    Parse { file: PathBuf },
    /// Print the dual of a declared type.
    Dual { file: PathBuf, name: String },
    /// List the enabled labels of a type with their derivatives.
    Labels {
        file: PathBuf,
        name: String,
        /// Only this direction; both when omitted.
        #[arg(long, value_enum)]
        dir: Option<DirArg>,
        #[arg(long, value_enum, default_value = "full")]
        mode: ModeArg,
    },
    /// Follow one label, e.g. `--label '?a'` or `--label '!b@1'`.
    Step {
        file: PathBuf,
        name: String,
        #[arg(long, allow_hyphen_values = true)]
        label: String,
        #[arg(long, value_enum, default_value = "full")]
        mode: ModeArg,
    },
    /// Decide correct composition of two types.
    Compose {
        file: PathBuf,
        s: String,
        t: String,
        #[command(flatten)]
        budget: BudgetArgs,
    },
    /// Decide a subtyping relation, `s` being the candidate subtype.
    Subtype {
        /// fair, sync, async, bzfair or aux.
        #[arg(long, default_value = "fair")]
        rel: String,
        file: PathBuf,
        s: String,
        t: String,
        #[command(flatten)]
        budget: BudgetArgs,
    },
    /// Compare composition of `s` and `t` with fair subtyping of `s` and the dual of `t`.
    Crosscheck {
        file: PathBuf,
        s: String,
        t: String,
        #[command(flatten)]
        budget: BudgetArgs,
    },
    /// Type check a process file.
    Typecheck {
        file: PathBuf,
        /// Extra file with `type` and `sig` declarations.
        #[arg(long)]
        sig: Option<PathBuf>,
        /// Obligation to accept without checking, e.g. `cut-y`.
        #[arg(long)]
        assume: Vec<String>,
        /// Pair budget for each obligation.
        #[arg(long, default_value_t = Budget::default().max_pairs)]
        budget: usize,
    },
    /// Run the main process of a file.
    Run {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "fair")]
        scheduler: SchedArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        max_steps: usize,
        /// Write one JSON object per step to this file.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Search for a terminating run of the main process.
    Probe {
        file: PathBuf,
        /// Largest number of configurations to visit.
        #[arg(long, default_value_t = 10_000)]
        budget: usize,
    },
    /// Encode a queue machine and its input as a pair of types.
    QmEncode {
        machine: PathBuf,
        #[arg(long, default_value = "")]
        input: String,
    },
    /// Simulate a queue machine.
    QmSim {
        machine: PathBuf,
        #[arg(long, default_value = "")]
        input: String,
        #[arg(long, default_value_t = 1000)]
        max_steps: usize,
    },
    /// The bundled fixtures.
    Corpus {
        #[command(subcommand)]
        action: CorpusCmd,
    },
}

#[derive(Subcommand)]
enum CorpusCmd {
    List,
    /// Run every fixture, or those whose name contains the filter.
    Run { filter: Option<String> },
    /// Print a bundled file.
    Show { file: String },
}

#[derive(Debug)]
enum CliError {
    Io(PathBuf, std::io::Error),
    Input(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Io(p, e) => write!(f, "{}: {e}", p.display()),
            CliError::Input(m) => f.write_str(m),
        }
    }
}

// Output is collected and written once, so a closed pipe cannot abort a
// command halfway; writing to a String does not fail.
macro_rules! out {
    ($w:expr, $($t:tt)*) => {{
        let _ = write!($w, $($t)*);
    }};
}

macro_rules! outln {
    ($w:expr, $($t:tt)*) => {{
        let _ = writeln!($w, $($t)*);
    }};
}

fn input(e: impl fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

const OK: u8 = 0;
const NO: u8 = 1;
const UNKNOWN: u8 = 2;
const ERROR: u8 = 3;

/// Read a file, falling back to the bundled copy for `fixtures/NAME` paths
/// that do not exist on disk.
fn read(path: &Path) -> Result<String, CliError> {
    match fs::read_to_string(path) {
        Ok(s) => Ok(s),
        Err(e) => {
            let bundled = path
                .parent()
                .filter(|p| p.ends_with("fixtures"))
                .and(path.file_name())
                .and_then(|f| corpus::source(&f.to_string_lossy()));
            bundled.map(str::to_string).ok_or(CliError::Io(path.to_path_buf(), e))
        }
    }
}

fn types_of(path: &Path) -> Result<TypeSource, CliError> {
    parse_types(&read(path)?).map_err(input)
}

fn named(src: &TypeSource, name: &str) -> Result<SessionType, CliError> {
    resolve(src, name).map_err(input)
}

fn program(path: &Path) -> Result<Program, CliError> {
    parse_program(&read(path)?).map_err(input)
}

fn start(prog: &Program) -> Result<Config, CliError> {
    Config::of_program(prog).ok_or_else(|| input("the file has no main process"))?.map_err(input)
}

fn word(s: &str) -> Vec<char> {
    s.chars().collect()
}

fn verdict_code(v: Verdict) -> u8 {
    match v {
        Verdict::Yes => OK,
        Verdict::No => NO,
        Verdict::Unknown => UNKNOWN,
    }
}

fn print_relation(o: &mut String, v: &RelationVerdict, json: bool) {
    if json {
        outln!(o, "{}", v.to_json());
        return;
    }
    outln!(o, "{} {}", v.relation, v.verdict);
    if let Some(r) = v.reason {
        outln!(o, "reason: {}", r.name());
    }
    outln!(o, "pairs explored: {}, discovered: {}", v.stats.pairs_explored, v.stats.pairs_discovered);
    if let Some(b) = &v.stats.budget_hit {
        outln!(o, "stopped: {b}");
    }
    if let Some(w) = &v.witness {
        outln!(o, "witness ({} pairs, closed under {}):", w.len(), v.witness_kind);
        for (a, b) in w {
            outln!(o, "  {}  |  {}", a.render(), b.render());
        }
    }
    if let Some(cx) = &v.counterexample {
        outln!(o, "counterexample:");
        for s in cx {
            let label = s.label.as_ref().map(|l| l.to_string()).unwrap_or_default();
            let via = if s.payload { " (payload)" } else { "" };
            outln!(o, "  {} {label}{via} at {}  |  {}", s.clause.name(), s.pair.0.render(), s.pair.1.render());
        }
    }
}

fn execute(o: &mut String, cli: Cli) -> Result<u8, CliError> {
    let json = cli.json;
    match cli.cmd {
        Cmd::Parse { file } => {
            let src = types_of(&file)?;
            let mut out = serde_json::Map::new();
            for name in src.names() {
                let t = named(&src, name)?;
                if !json {
                    outln!(o, "{name} = {}", t.render());
                }
                out.insert(name.to_string(), json!(t.render()));
            }
            if json {
                outln!(o, "{}", Value::Object(out));
            }
            Ok(OK)
        }
        Cmd::Dual { file, name } => {
            let d = named(&types_of(&file)?, &name)?.dual();
            if json {
                outln!(o, "{}", json!({ "name": name, "dual": d.render() }));
            } else {
                outln!(o, "{}", d.render());
            }
            Ok(OK)
        }
        Cmd::Labels { file, name, dir, mode } => {
            let t = named(&types_of(&file)?, &name)?;
            let dirs = match dir {
                Some(DirArg::In) => vec![Dir::In],
                Some(DirArg::Out) => vec![Dir::Out],
                None => vec![Dir::In, Dir::Out],
            };
            let labels: Vec<(Label, SessionType)> = dirs.into_iter().flat_map(|d| enumerate_labels(&t, d, mode.into())).collect();
            if json {
                let items: Vec<Value> = labels.iter().map(|(l, d)| json!({ "label": l.to_string(), "derivative": d.render() })).collect();
                outln!(o, "{}", Value::Array(items));
            } else {
                for (l, d) in &labels {
                    outln!(o, "{l} -> {}", d.render());
                }
            }
            Ok(OK)
        }
        Cmd::Step { file, name, label, mode } => {
            let t = named(&types_of(&file)?, &name)?;
            let l = Label::parse(&label).map_err(input)?;
            let d = enabled(&t, &l, mode.into());
            if json {
                outln!(o, "{}", json!({ "label": l.to_string(), "enabled": d.is_some(), "derivative": d.as_ref().map(|d| d.render()) }));
            } else {
                match &d {
                    Some(d) => outln!(o, "{}", d.render()),
                    None => outln!(o, "{l} is not enabled"),
                }
            }
            Ok(if d.is_some() { OK } else { NO })
        }
        Cmd::Compose { file, s, t, budget } => relation_cmd(o, RelationKind::Compose, &file, &s, &t, budget, json),
        Cmd::Subtype { rel, file, s, t, budget } => {
            let kind = RelationKind::from_name(&rel)
                .filter(|k| *k != RelationKind::Compose)
                .ok_or_else(|| input(format!("unknown relation `{rel}`, expected fair, sync, async, bzfair or aux")))?;
            relation_cmd(o, kind, &file, &s, &t, budget, json)
        }
        Cmd::Crosscheck { file, s, t, budget } => {
            let src = types_of(&file)?;
            let c = compose_vs_fairsub(&named(&src, &s)?, &named(&src, &t)?, budget.into());
            if json {
                outln!(o, "{}", c.to_json());
            } else {
                outln!(o, "compose: {}", c.compose.verdict);
                outln!(o, "fair subtype of the dual: {}", c.fair_sub_dual.verdict);
                outln!(o, "{}", if c.consistent { "consistent" } else { "INCONSISTENT" });
            }
            Ok(if c.consistent { OK } else { NO })
        }
        Cmd::Typecheck { file, sig, assume, budget } => {
            let mut prog = program(&file)?;
            if let Some(sig) = sig {
                let extra = program(&sig)?;
                prog.merge_sigs(extra).map_err(input)?;
            }
            let opts = CheckOptions {
                assume: assume.into_iter().collect(),
                budget: Budget { max_pairs: budget, ..Budget::default() },
                ..CheckOptions::default()
            };
            let r = typecheck(&prog, &opts);
            if json {
                outln!(o, "{}", r.to_json());
            } else {
                out!(o, "{r}");
            }
            Ok(r.exit_code() as u8)
        }
        Cmd::Run { file, scheduler, seed, max_steps, trace } => {
            let prog = program(&file)?;
            let name = match scheduler {
                SchedArg::Random => "random",
                SchedArg::Minmeasure => "minmeasure",
                SchedArg::Fair => "fair",
            };
            let sched = corpus::scheduler_by_name(name, seed, &prog).expect("known scheduler");
            let mut sink = match &trace {
                Some(p) => Some(BufWriter::new(fs::File::create(p).map_err(|e| CliError::Io(p.clone(), e))?)),
                None => None,
            };
            let mut io_error = None;
            let r = run(&prog, start(&prog)?, &sched, max_steps, |e, _| {
                if let Some(w) = sink.as_mut() {
                    if let Err(err) = writeln!(w, "{}", e.to_json()) {
                        io_error.get_or_insert(err);
                    }
                }
            })
            .map_err(input)?;
            if let Some(w) = sink.as_mut() {
                if let Err(err) = w.flush() {
                    io_error.get_or_insert(err);
                }
            }
            if let (Some(e), Some(p)) = (io_error, trace) {
                return Err(CliError::Io(p, e));
            }
            let last = r.last.readback().to_string();
            if json {
                outln!(o, "{}", json!({ "outcome": r.outcome.name(), "steps": r.steps, "final": last }));
            } else {
                outln!(o, "{} after {} steps", r.outcome.name(), r.steps);
                outln!(o, "final: {last}");
            }
            Ok(match r.outcome {
                Outcome::DoneReached => OK,
                Outcome::StuckNotDone => NO,
                Outcome::BudgetExhausted => UNKNOWN,
            })
        }
        Cmd::Probe { file, budget } => {
            let prog = program(&file)?;
            let report = typecheck(&prog, &CheckOptions::default());
            let found = probe(&prog, &start(&prog)?, &scheduler_measures(&prog, &report), budget);
            if json {
                outln!(o, "{}", json!({ "terminating_run": found, "budget": budget }));
            } else if found {
                outln!(o, "a terminating run exists");
            } else {
                outln!(o, "no terminating run found within {budget} configurations");
            }
            Ok(if found { OK } else { UNKNOWN })
        }
        Cmd::QmEncode { machine, input: w } => {
            let m = QueueMachine::from_json(&read(&machine)?).map_err(input)?;
            let (q, s) = encode(&m, &word(&w)).map_err(input)?;
            if json {
                outln!(o, "{}", json!({ "queue": q.render(), "control": s.render() }));
            } else {
                outln!(o, "queue: {}", q.render());
                outln!(o, "control: {}", s.render());
            }
            Ok(OK)
        }
        Cmd::QmSim { machine, input: w, max_steps } => {
            let m = QueueMachine::from_json(&read(&machine)?).map_err(input)?;
            let out = simulate_qm(&m, &word(&w), max_steps).map_err(input)?;
            let (text, code, value) = match &out {
                QmOutcome::Accepted(n) => (format!("accepted after {n} steps"), OK, json!({ "outcome": "accepted", "steps": n })),
                QmOutcome::Running(c) => (format!("running at {c}"), UNKNOWN, json!({ "outcome": "running", "config": c.to_string() })),
            };
            outln!(o, "{}", if json { value.to_string() } else { text });
            Ok(code)
        }
        Cmd::Corpus { action } => corpus_cmd(o, action, json),
    }
}

fn relation_cmd(o: &mut String, kind: RelationKind, file: &Path, s: &str, t: &str, budget: BudgetArgs, json: bool) -> Result<u8, CliError> {
    let src = types_of(file)?;
    let v = check(kind, &named(&src, s)?, &named(&src, t)?, budget.into()).map_err(input)?;
    print_relation(o, &v, json);
    Ok(verdict_code(v.verdict))
}

fn corpus_cmd(o: &mut String, action: CorpusCmd, json: bool) -> Result<u8, CliError> {
    let all = corpus::fixtures();
    match action {
        CorpusCmd::List => {
            if json {
                let items: Vec<Value> = all
                    .iter()
                    .map(|f| json!({ "name": f.name, "file": f.file, "check": f.kind(), "expected": f.expected, "about": f.about }))
                    .collect();
                outln!(o, "{}", Value::Array(items));
            } else {
                for f in &all {
                    outln!(o, "{:<22} {:<11} {:<21} {:<14} {}", f.name, f.kind(), f.file, f.expected, f.about);
                }
            }
            Ok(OK)
        }
        CorpusCmd::Run { filter } => {
            let chosen: Vec<_> = all.into_iter().filter(|f| filter.as_ref().is_none_or(|p| f.name.contains(p.as_str()))).collect();
            let results = corpus::run_all(&chosen);
            let failed = results.iter().filter(|r| !r.pass).count();
            if json {
                let items: Vec<Value> = results
                    .iter()
                    .map(|r| json!({ "name": r.name, "expected": r.expected, "actual": r.actual, "pass": r.pass, "problems": r.problems }))
                    .collect();
                outln!(o, "{}", json!({ "results": items, "failed": failed }));
            } else {
                for r in &results {
                    outln!(o, "{r}");
                }
                outln!(o, "{} fixtures, {failed} failed", results.len());
            }
            Ok(if failed == 0 { OK } else { NO })
        }
        CorpusCmd::Show { file } => {
            let text = corpus::source(&file).ok_or_else(|| input(format!("no bundled file `{file}`")))?;
            out!(o, "{text}");
            Ok(OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { ERROR } else { OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let mut text = String::new();
    let result = execute(&mut text, cli);
    let mut stdout = std::io::stdout().lock();
    // a reader that stops early, like `head`, is not an error
    let _ = stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush());
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(ERROR)
        }
    }
}
