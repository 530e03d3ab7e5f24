use super::{Branches, Node, NodeId, SessionType};

pub(super) fn render(t: &SessionType) -> String {
    let named = named_nodes(t);
    if named.is_empty() {
        return expr(t, t.root(), &named, true);
    }
    let mut order = vec![t.root()];
    order.extend(named.iter().copied().filter(|&n| n != t.root()));
    order
        .iter()
        .map(|&n| format!("type {} = {}", name(t, n), expr(t, n, &named, true)))
        .collect::<Vec<_>>()
        .join(" ")
}

/// One expression; a node is bound with `rec` only when something below it
/// refers back to it.  Shared acyclic parts are printed once per use.
pub(super) fn render_inline(t: &SessionType) -> String {
    inline(t, t.root(), &mut Vec::new())
}

/// `path` holds the nodes being expanded and whether each was referred to.
fn inline(t: &SessionType, n: NodeId, path: &mut Vec<(NodeId, bool)>) -> String {
    if let Some(entry) = path.iter_mut().find(|(m, _)| *m == n) {
        entry.1 = true;
        return format!("X{n}");
    }
    path.push((n, false));
    let mut branches = |bs: &Branches| {
        bs.iter()
            .map(|(tag, b)| {
                let body = inline(t, b.cont, path);
                if b.measure == 0 {
                    format!("{tag}: {body}")
                } else {
                    format!("{tag}@{}: {body}", b.measure)
                }
            })
            .collect::<Vec<_>>()
            .join(", ")
    };
    let body = match t.node(n) {
        Node::One => "end!".into(),
        Node::Bot => "end?".into(),
        Node::Plus(bs) => format!("+{{{}}}", branches(bs)),
        Node::With(bs) => format!("&{{{}}}", branches(bs)),
        Node::Times(p, c) => format!("!({}).{}", inline(t, *p, path), inline(t, *c, path)),
        Node::Par(p, c) => format!("?({}).{}", inline(t, *p, path), inline(t, *c, path)),
    };
    match path.pop() {
        Some((_, true)) => format!("rec X{n}. {body}"),
        _ => body,
    }
}

fn name(t: &SessionType, n: NodeId) -> String {
    // keep the root first so a re-parse resolves it
    if n == t.root() {
        "X0".into()
    } else {
        format!("X{}", if n < t.root() { n + 1 } else { n })
    }
}

/// Targets of back edges in a depth-first walk, plus the root when there are
/// any.  Naming these is enough to print every cycle finitely.
fn named_nodes(t: &SessionType) -> Vec<NodeId> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Open,
        Closed,
    }
    let mut mark = vec![Mark::New; t.len()];
    let mut named = vec![false; t.len()];
    // explicit stack of (node, next child index)
    let mut stack = vec![(t.root(), 0usize)];
    mark[t.root()] = Mark::Open;
    while let Some(&mut (n, ref mut i)) = stack.last_mut() {
        let kids = t.node(n).children();
        if *i < kids.len() {
            let c = kids[*i];
            *i += 1;
            match mark[c] {
                Mark::New => {
                    mark[c] = Mark::Open;
                    stack.push((c, 0));
                }
                Mark::Open => named[c] = true,
                Mark::Closed => {}
            }
        } else {
            mark[n] = Mark::Closed;
            stack.pop();
        }
    }
    let mut out: Vec<NodeId> = (0..t.len()).filter(|&n| named[n]).collect();
    if !out.is_empty() && !named[t.root()] {
        out.insert(0, t.root());
    }
    out
}

fn expr(t: &SessionType, n: NodeId, named: &[NodeId], top: bool) -> String {
    if !top && named.contains(&n) {
        return name(t, n);
    }
    let sub = |c: NodeId| expr(t, c, named, false);
    let branches = |bs: &Branches| {
        bs.iter()
            .map(|(tag, b)| {
                if b.measure == 0 {
                    format!("{tag}: {}", sub(b.cont))
                } else {
                    format!("{tag}@{}: {}", b.measure, sub(b.cont))
                }
            })
            .collect::<Vec<_>>()
            .join(", ")
    };
    match t.node(n) {
        Node::One => "end!".into(),
        Node::Bot => "end?".into(),
        Node::Plus(bs) => format!("+{{{}}}", branches(bs)),
        Node::With(bs) => format!("&{{{}}}", branches(bs)),
        Node::Times(p, c) => format!("!({}).{}", sub(*p), sub(*c)),
        Node::Par(p, c) => format!("?({}).{}", sub(*p), sub(*c)),
    }
}
