use std::collections::BTreeSet;

use fairkit::cap::{parse_program, run, Config, Outcome, Program, Scheduler};
use fairkit::corpus::{files, source};
use fairkit::relation::Budget;
use fairkit::typecheck::{scheduler_measures, typecheck, CheckOptions, Overall, Typechecker};

fn load(file: &str) -> Program {
    parse_program(source(file).unwrap()).unwrap()
}

/// Re-check the term read back from every configuration of a run.
fn subject_reduction(file: &str, sched: Scheduler) -> usize {
    let prog = load(file);
    let opts = CheckOptions { budget: Budget { max_pairs: 200, ..Budget::default() }, ..CheckOptions::default() };
    let mut checker = Typechecker::new(opts);
    assert!(!checker.check(&prog).is_ill_typed(), "{file} must type check to begin with");
    let mut residuals = Vec::new();
    let start = Config::of_program(&prog).unwrap().unwrap();
    let r = run(&prog, start, &sched, 5000, |_, c| residuals.push(c.readback())).unwrap();
    assert_eq!(r.outcome, Outcome::DoneReached);
    for (i, p) in residuals.iter().enumerate() {
        let report = checker.check_main(&prog, Some(p));
        assert!(!report.is_ill_typed(), "{file}, step {}: {p}\n{report}", i + 1);
    }
    residuals.len()
}

#[test]
fn server_residuals_stay_typable() {
    let steps: usize = (0..10).map(|seed| subject_reduction("server.cap", Scheduler::Random(seed))).sum();
    assert!(steps > 50);
}

#[test]
fn delegation_and_batch_residuals_stay_typable() {
    for seed in 0..10 {
        subject_reduction("delegation.cap", Scheduler::Random(seed));
        subject_reduction("batch-stream.cap", Scheduler::Random(seed));
    }
    subject_reduction("batch-stream.cap", Scheduler::RoundRobinFair);
}

#[test]
fn every_typing_rule_is_exercised_by_the_corpus() {
    let mut used = BTreeSet::new();
    for file in files().filter(|f| f.ends_with(".cap")) {
        used.extend(typecheck(&load(file), &CheckOptions::default()).rules);
    }
    let all = ["done", "one", "bot", "plus", "with", "times", "par", "choice", "link", "cut", "call"];
    let missing: Vec<_> = all.iter().filter(|r| !used.contains(*r)).collect();
    assert!(missing.is_empty(), "rules without a fixture: {missing:?}");
}

#[test]
fn typed_closed_programs_terminate_within_a_multiple_of_their_measure() {
    for file in ["server.cap", "delegation.cap", "batch-stream.cap"] {
        let prog = load(file);
        let report = typecheck(&prog, &CheckOptions::default());
        let main = report.main_measure.and_then(|m| m.finite()).unwrap();
        let sched = Scheduler::MinMeasure(scheduler_measures(&prog, &report));
        let r = run(&prog, Config::of_program(&prog).unwrap().unwrap(), &sched, 1000, |_, _| {}).unwrap();
        assert_eq!(r.outcome, Outcome::DoneReached, "{file}");
        // each unit of measure pays for one output plus the steps around it
        assert!(r.steps as u64 <= 3 * main.max(1), "{file}: {} steps for measure {main}", r.steps);
    }
}

#[test]
fn ill_typed_fixtures_are_rejected_for_the_right_reason() {
    let r = typecheck(&load("deadlock.cap"), &CheckOptions::default());
    match r.overall {
        Overall::IllTyped(reasons) => assert!(reasons[0].contains("close y"), "{reasons:?}"),
        other => panic!("{other:?}"),
    }
    let r = typecheck(&load("omega.cap"), &CheckOptions::default());
    assert!(r.is_ill_typed());
}
