//! Seeded generators of random session types, used by property tests and the
//! acceptance harness.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::types::{Branch, Branches, Node, SessionType, Tag};

const TAGS: [&str; 3] = ["a", "b", "c"];

#[derive(Clone, Copy, Debug)]
pub struct GenConfig {
    pub max_nodes: usize,
    pub higher_order: bool,
    /// Allow `+{}` and `&{}`.
    pub empty_choices: bool,
    /// Chance that a tag carries a nonzero measure.
    pub measure_rate: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig { max_nodes: 8, higher_order: false, empty_choices: true, measure_rate: 0.0 }
    }
}

/// A random automaton with at most `cfg.max_nodes` nodes, canonicalized.
pub fn random_type(rng: &mut impl Rng, cfg: &GenConfig) -> SessionType {
    let n = rng.gen_range(1..=cfg.max_nodes.max(1));
    let mut nodes = Vec::with_capacity(n);
    for _ in 0..n {
        let roll = rng.gen_range(0..100);
        let node = match roll {
            0..=9 => Node::One,
            10..=19 => Node::Bot,
            20..=59 => Node::Plus(branches(rng, n, cfg)),
            60..=99 if !cfg.higher_order || roll < 85 => Node::With(branches(rng, n, cfg)),
            _ => {
                let (p, c) = (rng.gen_range(0..n), rng.gen_range(0..n));
                if rng.gen_bool(0.5) {
                    Node::Times(p, c)
                } else {
                    Node::Par(p, c)
                }
            }
        };
        nodes.push(node);
    }
    SessionType::from_parts(nodes, 0).expect("indices in range").canonicalize()
}

fn branches(rng: &mut impl Rng, n: usize, cfg: &GenConfig) -> Branches {
    let lo = if cfg.empty_choices { 0 } else { 1 };
    // empty choices are rare even when allowed
    let k = if lo == 0 && rng.gen_bool(0.9) { rng.gen_range(1..=3) } else { rng.gen_range(lo..=3) };
    let mut tags = TAGS.to_vec();
    tags.shuffle(rng);
    tags.into_iter()
        .take(k)
        .map(|t| {
            let measure = if rng.gen_bool(cfg.measure_rate) { rng.gen_range(1..=3) } else { 0 };
            (Tag::from(t), Branch { measure, cont: rng.gen_range(0..n) })
        })
        .collect()
}

/// A random first-order, fairly terminating type without empty choices.
pub fn random_ffst(rng: &mut impl Rng, max_nodes: usize) -> SessionType {
    let cfg = GenConfig { max_nodes, higher_order: false, empty_choices: false, measure_rate: 0.0 };
    loop {
        let t = random_type(rng, &cfg);
        if t.is_fairly_terminating() {
            return t;
        }
    }
}

/// A variant of `t` obtained by dropping output branches and adding input
/// branches at random; with positive probability it is a subtype of `t`.
pub fn narrow(rng: &mut impl Rng, t: &SessionType) -> SessionType {
    let n = t.len();
    let nodes = t
        .nodes()
        .iter()
        .map(|node| match node {
            Node::Plus(bs) if bs.len() > 1 && rng.gen_bool(0.4) => {
                let mut bs = bs.clone();
                let drop = bs.keys().nth(rng.gen_range(0..bs.len())).cloned().unwrap();
                bs.remove(&drop);
                Node::Plus(bs)
            }
            Node::With(bs) if bs.len() < TAGS.len() && rng.gen_bool(0.4) => {
                let mut bs = bs.clone();
                let free: Vec<_> = TAGS.iter().filter(|t| !bs.contains_key(**t)).collect();
                let tag = free[rng.gen_range(0..free.len())].to_string();
                bs.insert(tag.into(), Branch { measure: 0, cont: rng.gen_range(0..n) });
                Node::With(bs)
            }
            other => other.clone(),
        })
        .collect();
    SessionType::from_parts(nodes, t.root()).expect("indices in range").canonicalize()
}

/// A pair for relation comparisons: half unrelated, half `(narrow(t), t)`.
pub fn random_ffst_pair(rng: &mut impl Rng, max_nodes: usize) -> (SessionType, SessionType) {
    let t = random_ffst(rng, max_nodes);
    if rng.gen_bool(0.5) {
        let s = narrow(rng, &t);
        if s.is_fairly_terminating() {
            return (s, t);
        }
    }
    (random_ffst(rng, max_nodes), t)
}
