use super::{Node, NodeId, SessionType};

/// Outcome of the fair termination analysis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FairTermination {
    pub fairly_terminating: bool,
    /// Some reachable node is 0 or ⊤; those count as terminated, vacuously.
    pub vacuous_nodes: bool,
}

/// A type is fairly terminating when every reachable node (payloads included)
/// can reach 1, ⊥, 0 or ⊤ through immediate transitions.  Under strong
/// fairness the set of nodes visited infinitely often is closed under
/// successors, so this is the same as asking that every maximal fair run
/// ends.
pub(super) fn analyse(t: &SessionType) -> FairTermination {
    let n = t.nodes().len();
    let terminal = |node: &Node| match node {
        Node::One | Node::Bot => true,
        Node::Plus(bs) | Node::With(bs) => bs.is_empty(),
        _ => false,
    };
    let vacuous = t
        .reachable()
        .iter()
        .any(|&i| matches!(t.node(i), Node::Plus(bs) | Node::With(bs) if bs.is_empty()));

    // backwards closure from terminal nodes over transition edges
    let mut preds: Vec<Vec<NodeId>> = vec![Vec::new(); n];
    for (i, node) in t.nodes().iter().enumerate() {
        for s in steps(node) {
            preds[s].push(i);
        }
    }
    let mut good = vec![false; n];
    let mut stack: Vec<NodeId> = (0..n).filter(|&i| terminal(t.node(i))).collect();
    for &i in &stack {
        good[i] = true;
    }
    while let Some(i) = stack.pop() {
        for &p in &preds[i] {
            if !good[p] {
                good[p] = true;
                stack.push(p);
            }
        }
    }
    FairTermination {
        fairly_terminating: t.reachable().into_iter().all(|i| good[i]),
        vacuous_nodes: vacuous,
    }
}

/// Targets of immediate transitions (payloads are not transition targets).
fn steps(node: &Node) -> Vec<NodeId> {
    match node {
        Node::One | Node::Bot => vec![],
        Node::Plus(bs) | Node::With(bs) => bs.values().map(|b| b.cont).collect(),
        Node::Times(_, c) | Node::Par(_, c) => vec![*c],
    }
}
