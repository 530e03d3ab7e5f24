//! Measures and least solutions of monotone measure equations.

use std::cmp::Ordering;
use std::fmt;

/// Default bound above which an iterated value counts as divergent.
pub const DEFAULT_CAP: u64 = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Measure {
    Finite(u64),
    Infinity,
}

impl std::ops::Add for Measure {
    type Output = Measure;

    fn add(self, other: Measure) -> Measure {
        match (self, other) {
            (Measure::Finite(a), Measure::Finite(b)) => Measure::Finite(a.saturating_add(b)),
            _ => Measure::Infinity,
        }
    }
}

impl Measure {
    pub const ZERO: Measure = Measure::Finite(0);

    /// `max(0, self - k)`; infinity stays infinite.
    pub fn sub_sat(self, k: u64) -> Measure {
        match self {
            Measure::Finite(a) => Measure::Finite(a.saturating_sub(k)),
            Measure::Infinity => Measure::Infinity,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Measure::Finite(_))
    }

    pub fn finite(self) -> Option<u64> {
        match self {
            Measure::Finite(n) => Some(n),
            Measure::Infinity => None,
        }
    }
}

impl PartialOrd for Measure {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Measure {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Measure::Finite(a), Measure::Finite(b)) => a.cmp(b),
            (Measure::Finite(_), Measure::Infinity) => Ordering::Less,
            (Measure::Infinity, Measure::Finite(_)) => Ordering::Greater,
            (Measure::Infinity, Measure::Infinity) => Ordering::Equal,
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Measure::Finite(n) => write!(f, "{n}"),
            Measure::Infinity => write!(f, "inf"),
        }
    }
}

/// A monotone expression over unknowns `Var(i)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Expr {
    Const(u64),
    Var(usize),
    Add(Vec<Expr>),
    Min(Vec<Expr>),
    Max(Vec<Expr>),
    /// `max(0, e - k)`
    SubSat(Box<Expr>, u64),
}

impl Expr {
    pub fn eval(&self, env: &[Measure]) -> Measure {
        match self {
            Expr::Const(n) => Measure::Finite(*n),
            Expr::Var(i) => env[*i],
            Expr::Add(es) => es.iter().fold(Measure::ZERO, |acc, e| acc + e.eval(env)),
            Expr::Min(es) => es.iter().map(|e| e.eval(env)).min().unwrap_or(Measure::Infinity),
            Expr::Max(es) => es.iter().map(|e| e.eval(env)).max().unwrap_or(Measure::ZERO),
            Expr::SubSat(e, k) => e.eval(env).sub_sat(*k),
        }
    }

    pub fn plus(self, other: Expr) -> Expr {
        match (self, other) {
            (Expr::Const(0), e) | (e, Expr::Const(0)) => e,
            (Expr::Const(a), Expr::Const(b)) => Expr::Const(a + b),
            (Expr::Add(mut v), e) => {
                v.push(e);
                Expr::Add(v)
            }
            (a, b) => Expr::Add(vec![a, b]),
        }
    }
}

/// Least solution of `x_i = eqs[i](x)` by Kleene iteration from zero.  A value
/// exceeding `cap` is fixed at infinity, which keeps the iteration finite.
pub fn solve(eqs: &[Expr], cap: u64) -> Vec<Measure> {
    let mut env = vec![Measure::ZERO; eqs.len()];
    loop {
        let mut changed = false;
        for (i, e) in eqs.iter().enumerate() {
            let mut v = e.eval(&env);
            if matches!(v, Measure::Finite(n) if n > cap) {
                v = Measure::Infinity;
            }
            if v != env[i] {
                debug_assert!(v > env[i], "iteration must be monotone");
                env[i] = v;
                changed = true;
            }
        }
        if !changed {
            return env;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn split_equation_solves_to_four() {
        // m = 1 + min(1 + m, 3)
        let eq = Expr::Const(1).plus(Expr::Min(vec![Expr::Const(1).plus(Expr::Var(0)), Expr::Const(3)]));
        assert_eq!(solve(&[eq], DEFAULT_CAP), vec![Measure::Finite(4)]);
    }

    #[test]
    fn unsatisfiable_equation_diverges() {
        // n = max(1 + n, 2)
        let eq = Expr::Max(vec![Expr::Const(1).plus(Expr::Var(0)), Expr::Const(2)]);
        assert_eq!(solve(&[eq], 1000), vec![Measure::Infinity]);
    }

    #[test]
    fn discharge_recovers_a_finite_measure() {
        // n = max(max(0, (1 + n) - 1), 2)
        let eq = Expr::Max(vec![Expr::SubSat(Box::new(Expr::Const(1).plus(Expr::Var(0))), 1), Expr::Const(2)]);
        assert_eq!(solve(&[eq], DEFAULT_CAP), vec![Measure::Finite(2)]);
    }

    #[test]
    fn infinity_absorbs_addition_only() {
        let inf = Measure::Infinity;
        assert_eq!(inf + Measure::Finite(1), inf);
        assert_eq!(Expr::Min(vec![Expr::Var(0), Expr::Const(3)]).eval(&[inf]), Measure::Finite(3));
        assert!(Measure::Finite(u64::MAX) < inf);
    }

    fn arb_expr(vars: usize) -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![(0u64..4).prop_map(Expr::Const), (0..vars).prop_map(Expr::Var)];
        leaf.prop_recursive(3, 12, 3, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 1..3).prop_map(Expr::Add),
                prop::collection::vec(inner.clone(), 1..3).prop_map(Expr::Min),
                prop::collection::vec(inner.clone(), 1..3).prop_map(Expr::Max),
                (inner, 0u64..3).prop_map(|(e, k)| Expr::SubSat(Box::new(e), k)),
            ]
        })
    }

    proptest! {
        #[test]
        fn solutions_are_fixed_points(eqs in prop::collection::vec(arb_expr(3), 3)) {
            let sol = solve(&eqs, 200);
            for (i, e) in eqs.iter().enumerate() {
                let v = e.eval(&sol);
                // infinite entries only need to stay above the cap
                match sol[i] {
                    Measure::Finite(_) => prop_assert_eq!(v, sol[i]),
                    Measure::Infinity => prop_assert!(v > Measure::Finite(200) || v == Measure::Infinity),
                }
            }
        }

        #[test]
        fn solutions_are_least(eqs in prop::collection::vec(arb_expr(2), 2), guess in prop::collection::vec(0u64..8, 2)) {
            // any finite pre-fixed point bounds the least solution
            let g: Vec<Measure> = guess.iter().map(|&n| Measure::Finite(n)).collect();
            if eqs.iter().enumerate().all(|(i, e)| e.eval(&g) <= g[i]) {
                let sol = solve(&eqs, 200);
                for i in 0..2 {
                    prop_assert!(sol[i] <= g[i]);
                }
            }
        }
    }
}
