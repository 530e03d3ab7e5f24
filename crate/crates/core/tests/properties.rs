use fairkit::cap::{parse_process, parse_program, run, Config, Scheduler};
use fairkit::corpus::{files, source};
use fairkit::gen::{random_ffst_pair, random_type, GenConfig};
use fairkit::lts::{candidate_labels, Dir, Label};
use fairkit::relation::{compose, fair_sub, validate_verdict, Budget, Verdict};
use fairkit::types::Polarity;
use fairkit::SessionType;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn ty(seed: u64, higher_order: bool) -> SessionType {
    let cfg = GenConfig { max_nodes: 6, higher_order, measure_rate: 0.3, ..GenConfig::default() };
    random_type(&mut ChaCha8Rng::seed_from_u64(seed), &cfg)
}

fn small() -> Budget {
    Budget { max_pairs: 300, ..Budget::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dual_is_an_involution(seed in any::<u64>(), ho in any::<bool>()) {
        let t = ty(seed, ho);
        prop_assert_eq!(t.dual().dual(), t);
    }

    #[test]
    fn dual_flips_polarity(seed in any::<u64>(), ho in any::<bool>()) {
        let t = ty(seed, ho);
        let flipped = match t.polarity() { Polarity::Pos => Polarity::Neg, Polarity::Neg => Polarity::Pos };
        prop_assert_eq!(t.dual().polarity(), flipped);
    }

    #[test]
    fn printed_types_parse_back(seed in any::<u64>(), ho in any::<bool>()) {
        let t = ty(seed, ho);
        let back = SessionType::parse(&t.render()).unwrap();
        prop_assert_eq!(&back, &t);
        let inline = SessionType::parse(&t.render_inline()).unwrap();
        prop_assert_eq!(inline, t);
    }

    #[test]
    fn labels_print_and_parse_back(seed in any::<u64>()) {
        let t = ty(seed, false);
        for dir in [Dir::In, Dir::Out] {
            for k in candidate_labels(&t, dir) {
                let l: Label = k.0;
                prop_assert_eq!(Label::parse(&l.to_string()).unwrap(), l);
            }
        }
    }

    #[test]
    fn fair_subtyping_verdicts_carry_valid_certificates(seed in any::<u64>()) {
        let (s, t) = random_ffst_pair(&mut ChaCha8Rng::seed_from_u64(seed), 5);
        let v = fair_sub(&s, &t, small());
        prop_assert!(validate_verdict(&v, &s, &t).is_ok(), "{} <= {}", s.render(), t.render());
        let c = compose(&s, &t, small());
        prop_assert!(validate_verdict(&c, &s, &t).is_ok());
    }

    #[test]
    fn fair_subtyping_is_never_refuted_on_the_diagonal(seed in any::<u64>(), ho in any::<bool>()) {
        let t = ty(seed, ho);
        prop_assert_ne!(fair_sub(&t, &t, small()).verdict, Verdict::No);
    }

    #[test]
    fn composition_does_not_depend_on_order(seed in any::<u64>()) {
        let s = ty(seed, false);
        let t = ty(seed.wrapping_add(1), false).dual();
        let a = compose(&s, &t, small()).verdict;
        let b = compose(&t, &s, small()).verdict;
        prop_assert!(!matches!((a, b), (Verdict::Yes, Verdict::No) | (Verdict::No, Verdict::Yes)));
    }

    #[test]
    fn random_runs_replay_from_their_seed(seed in any::<u64>()) {
        let prog = parse_program(source("server.cap").unwrap()).unwrap();
        let go = || {
            let mut rules = Vec::new();
            let start = Config::of_program(&prog).unwrap().unwrap();
            let r = run(&prog, start, &Scheduler::Random(seed), 2000, |e, _| rules.push(e.to_json().to_string())).unwrap();
            (r.outcome, r.steps, rules)
        };
        prop_assert_eq!(go(), go());
    }
}

#[test]
fn printed_definitions_parse_back() {
    let mut seen = 0;
    for file in files().filter(|f| f.ends_with(".cap")) {
        let prog = parse_program(source(file).unwrap()).unwrap();
        for d in &prog.defs {
            let back = parse_process(&d.body.to_string()).unwrap_or_else(|e| panic!("{file} {}: {e}", d.name));
            assert_eq!(back, d.body, "{file} {}", d.name);
            seen += 1;
        }
    }
    assert!(seen > 10);
}
