//! The bundled fixture corpus: worked examples with their expected outcomes.

use std::collections::BTreeMap;
use std::fmt;

use serde::Deserialize;
use thiserror::Error;

use crate::cap::{parse_program, probe, run, Config, Scheduler};
use crate::qm::{encode, simulate_qm, QmOutcome, QueueMachine};
use crate::relation::{check, compose, validate_verdict, Budget, RelationKind};
use crate::typecheck::{scheduler_measures, typecheck, CheckOptions, Overall};
use crate::types::resolve_str;

const MANIFEST: &str = include_str!("../fixtures/manifest.json");

const FILES: [(&str, &str); 17] = [
    ("anticipation.st", include_str!("../fixtures/anticipation.st")),
    ("async-bounded.st", include_str!("../fixtures/async-bounded.st")),
    ("batch-stream.cap", include_str!("../fixtures/batch-stream.cap")),
    ("deadlock.cap", include_str!("../fixtures/deadlock.cap")),
    ("delegation.cap", include_str!("../fixtures/delegation.cap")),
    ("failed-variance.st", include_str!("../fixtures/failed-variance.st")),
    ("link-subsumption.cap", include_str!("../fixtures/link-subsumption.cap")),
    ("omega-or-done.cap", include_str!("../fixtures/omega-or-done.cap")),
    ("omega.cap", include_str!("../fixtures/omega.cap")),
    ("qm-drain.json", include_str!("../fixtures/qm-drain.json")),
    ("qm-loop.json", include_str!("../fixtures/qm-loop.json")),
    ("satellite.st", include_str!("../fixtures/satellite.st")),
    ("server.cap", include_str!("../fixtures/server.cap")),
    ("serverworker.st", include_str!("../fixtures/serverworker.st")),
    ("slot-machine.st", include_str!("../fixtures/slot-machine.st")),
    ("stream-batch.cap", include_str!("../fixtures/stream-batch.cap")),
    ("stream-stream.cap", include_str!("../fixtures/stream-stream.cap")),
];

/// Contents of a bundled fixture file.
pub fn source(file: &str) -> Option<&'static str> {
    FILES.iter().find(|(f, _)| *f == file).map(|(_, s)| *s)
}

pub fn files() -> impl Iterator<Item = &'static str> {
    FILES.iter().map(|(f, _)| *f)
}

#[derive(Clone, Debug, Deserialize, PartialEq, Eq)]
#[serde(tag = "check", rename_all = "kebab-case")]
pub enum Check {
    Relation {
        relation: String,
        left: String,
        right: String,
        max_witness: Option<usize>,
    },
    Typecheck {
        #[serde(default)]
        assume: Vec<String>,
        /// Expected inferred measures, `inf` for divergent ones.
        #[serde(default)]
        measures: BTreeMap<String, String>,
    },
    Run {
        scheduler: String,
        seed: Option<u64>,
        max_steps: usize,
    },
    Probe {
        budget: usize,
    },
    QmSim {
        input: String,
        max_steps: usize,
    },
    QmCompose {
        input: String,
    },
}

#[derive(Clone, Debug, Deserialize, PartialEq, Eq)]
pub struct Fixture {
    pub name: String,
    pub file: String,
    pub about: String,
    /// Accepted outcomes, separated by `|`.
    pub expected: String,
    #[serde(flatten)]
    pub check: Check,
}

impl Fixture {
    pub fn kind(&self) -> &'static str {
        match self.check {
            Check::Relation { .. } => "relation",
            Check::Typecheck { .. } => "typecheck",
            Check::Run { .. } => "run",
            Check::Probe { .. } => "probe",
            Check::QmSim { .. } => "qm-sim",
            Check::QmCompose { .. } => "qm-compose",
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("fixture `{0}` has an empty expected outcome")]
    EmptyExpected(String),
    #[error("fixture `{0}` refers to missing file `{1}`")]
    MissingFile(String, String),
    #[error("fixture name `{0}` is used twice")]
    Duplicate(String),
}

/// Parse and validate a manifest against the bundled files.
pub fn parse_manifest(text: &str) -> Result<Vec<Fixture>, CorpusError> {
    let fixtures: Vec<Fixture> = serde_json::from_str(text)?;
    let mut seen = std::collections::HashSet::new();
    for f in &fixtures {
        if f.expected.trim().is_empty() {
            return Err(CorpusError::EmptyExpected(f.name.clone()));
        }
        if source(&f.file).is_none() {
            return Err(CorpusError::MissingFile(f.name.clone(), f.file.clone()));
        }
        if !seen.insert(f.name.as_str()) {
            return Err(CorpusError::Duplicate(f.name.clone()));
        }
    }
    Ok(fixtures)
}

pub fn fixtures() -> Vec<Fixture> {
    parse_manifest(MANIFEST).expect("the bundled manifest is valid")
}

#[derive(Clone, Debug)]
pub struct FixtureResult {
    pub name: String,
    pub expected: String,
    pub actual: String,
    pub pass: bool,
    /// Extra failures beyond the outcome, such as a measure mismatch or a
    /// certificate that does not validate.
    pub problems: Vec<String>,
}

impl fmt::Display for FixtureResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mark = if self.pass { "ok  " } else { "FAIL" };
        write!(f, "{mark} {:<22} expected {:<14} got {}", self.name, self.expected, self.actual)?;
        for p in &self.problems {
            write!(f, "\n     {p}")?;
        }
        Ok(())
    }
}

/// The scheduler named on the command line or in a fixture.
pub fn scheduler_by_name(name: &str, seed: u64, prog: &crate::cap::Program) -> Option<Scheduler> {
    Some(match name {
        "random" => Scheduler::Random(seed),
        "fair" => Scheduler::RoundRobinFair,
        "minmeasure" => {
            let report = typecheck(prog, &CheckOptions::default());
            Scheduler::MinMeasure(scheduler_measures(prog, &report))
        }
        _ => return None,
    })
}

fn outcome(f: &Fixture, problems: &mut Vec<String>) -> Result<String, String> {
    let text = source(&f.file).ok_or("missing file")?;
    let err = |e: &dyn fmt::Display| e.to_string();
    match &f.check {
        Check::Relation { relation, left, right, max_witness } => {
            let kind = RelationKind::from_name(relation).ok_or(format!("unknown relation `{relation}`"))?;
            let s = resolve_str(text, left).map_err(|e| err(&e))?;
            let t = resolve_str(text, right).map_err(|e| err(&e))?;
            let v = check(kind, &s, &t, Budget::default()).map_err(|e| err(&e))?;
            if let Err(e) = validate_verdict(&v, &s, &t) {
                problems.push(format!("verdict does not validate: {e}"));
            }
            if let (Some(max), Some(w)) = (max_witness, &v.witness) {
                if w.len() > *max {
                    problems.push(format!("witness has {} pairs, more than {max}", w.len()));
                }
            }
            Ok(v.verdict.to_string())
        }
        Check::Typecheck { assume, measures } => {
            let prog = parse_program(text).map_err(|e| err(&e))?;
            let opts = CheckOptions { assume: assume.iter().cloned().collect(), ..CheckOptions::default() };
            let r = typecheck(&prog, &opts);
            for (def, want) in measures {
                let got = r.measure(def).map(|m| m.to_string()).unwrap_or_else(|| "none".into());
                if &got != want {
                    problems.push(format!("measure of {def} is {got}, expected {want}"));
                }
            }
            Ok(match r.overall {
                Overall::WellTyped => "well-typed",
                Overall::IllTyped(_) => "ill-typed",
                Overall::Conditional(_) => "conditional",
            }
            .into())
        }
        Check::Run { scheduler, seed, max_steps } => {
            let prog = parse_program(text).map_err(|e| err(&e))?;
            let sched = scheduler_by_name(scheduler, seed.unwrap_or(0), &prog).ok_or(format!("unknown scheduler `{scheduler}`"))?;
            let start = Config::of_program(&prog).ok_or("no main process")?.map_err(|e| err(&e))?;
            let r = run(&prog, start, &sched, *max_steps, |_, _| {}).map_err(|e| err(&e))?;
            Ok(r.outcome.name().into())
        }
        Check::Probe { budget } => {
            let prog = parse_program(text).map_err(|e| err(&e))?;
            let start = Config::of_program(&prog).ok_or("no main process")?.map_err(|e| err(&e))?;
            let report = typecheck(&prog, &CheckOptions::default());
            let ok = probe(&prog, &start, &scheduler_measures(&prog, &report), *budget);
            Ok(if ok { "yes" } else { "no" }.into())
        }
        Check::QmSim { input, max_steps } => {
            let m = QueueMachine::from_json(text).map_err(|e| err(&e))?;
            let w: Vec<char> = input.chars().collect();
            Ok(match simulate_qm(&m, &w, *max_steps).map_err(|e| err(&e))? {
                QmOutcome::Accepted(n) => format!("accepted({n})"),
                QmOutcome::Running(_) => "running".into(),
            })
        }
        Check::QmCompose { input } => {
            let m = QueueMachine::from_json(text).map_err(|e| err(&e))?;
            let w: Vec<char> = input.chars().collect();
            let (q, s) = encode(&m, &w).map_err(|e| err(&e))?;
            let v = compose(&q, &s, Budget::default());
            if let Err(e) = validate_verdict(&v, &q, &s) {
                problems.push(format!("verdict does not validate: {e}"));
            }
            Ok(v.verdict.to_string())
        }
    }
}

pub fn run_fixture(f: &Fixture) -> FixtureResult {
    let mut problems = Vec::new();
    let actual = outcome(f, &mut problems).unwrap_or_else(|e| format!("error: {e}"));
    let matches = f.expected.split('|').any(|e| e.trim() == actual);
    FixtureResult {
        name: f.name.clone(),
        expected: f.expected.clone(),
        pass: matches && problems.is_empty(),
        actual,
        problems,
    }
}

/// Run every fixture, in parallel, keeping manifest order.
pub fn run_all(fixtures: &[Fixture]) -> Vec<FixtureResult> {
    std::thread::scope(|s| {
        let handles: Vec<_> = fixtures.iter().map(|f| s.spawn(move || run_fixture(f))).collect();
        handles.into_iter().map(|h| h.join().expect("fixture thread panicked")).collect()
    })
}
