//! Session types as finite automata (regular trees), with canonical forms,
//! duality, polarity and fair termination.

mod fair;
pub(crate) mod parse;
mod print;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::sync::Arc;

use thiserror::Error;

use crate::lex::{Pos, SyntaxError};

pub use fair::FairTermination;
pub use parse::{parse_types, resolve, resolve_expr, resolve_str, BranchExpr, Decl, TypeExpr, TypeSource};

pub type Tag = Arc<str>;
pub type NodeId = usize;

/// A branch of a choice: tag annotation plus continuation.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Branch {
    pub measure: u32,
    pub cont: NodeId,
}

pub type Branches = BTreeMap<Tag, Branch>;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Node {
    One,
    Bot,
    Plus(Branches),
    With(Branches),
    /// Channel output: payload, continuation.
    Times(NodeId, NodeId),
    /// Channel input: payload, continuation.
    Par(NodeId, NodeId),
}

impl Node {
    /// Successor node ids, payload before continuation, branches in tag order.
    pub fn children(&self) -> Vec<NodeId> {
        match self {
            Node::One | Node::Bot => vec![],
            Node::Plus(bs) | Node::With(bs) => bs.values().map(|b| b.cont).collect(),
            Node::Times(p, c) | Node::Par(p, c) => vec![*p, *c],
        }
    }

    pub fn polarity(&self) -> Polarity {
        match self {
            Node::One | Node::Plus(_) | Node::Times(..) => Polarity::Pos,
            Node::Bot | Node::With(_) | Node::Par(..) => Polarity::Neg,
        }
    }

    fn map_children(&self, f: impl Fn(NodeId) -> NodeId) -> Node {
        let mb = |bs: &Branches| {
            bs.iter()
                .map(|(t, b)| (t.clone(), Branch { measure: b.measure, cont: f(b.cont) }))
                .collect()
        };
        match self {
            Node::One => Node::One,
            Node::Bot => Node::Bot,
            Node::Plus(bs) => Node::Plus(mb(bs)),
            Node::With(bs) => Node::With(mb(bs)),
            Node::Times(p, c) => Node::Times(f(*p), f(*c)),
            Node::Par(p, c) => Node::Par(f(*p), f(*c)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Polarity {
    Pos,
    Neg,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TypeError {
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error("duplicate declaration of `{name}` at {pos}")]
    DuplicateDecl { name: String, pos: Pos },
    #[error("duplicate tag `{tag}` at {pos}")]
    DuplicateTag { tag: String, pos: Pos },
    #[error("unknown type name `{0}`")]
    UnknownName(String),
    #[error("unguarded recursion through `{0}`")]
    Unguarded(String),
    #[error("malformed automaton: {0}")]
    Malformed(String),
}

/// A session type: a node table plus a root.  Values produced by this crate
/// are canonical (minimal, numbered breadth first from the root) so that `==`
/// coincides with bisimilarity.
/// The node table is shared, so clones are cheap; the structural hash is
/// computed once on construction.
#[derive(Clone)]
pub struct SessionType {
    nodes: Arc<[Node]>,
    root: NodeId,
    hash: u64,
}

impl PartialEq for SessionType {
    fn eq(&self, other: &Self) -> bool {
        self.hash == other.hash && self.root == other.root && self.nodes == other.nodes
    }
}

impl Eq for SessionType {}

impl Hash for SessionType {
    fn hash<H: Hasher>(&self, state: &mut H) {
        state.write_u64(self.hash);
    }
}

impl fmt::Debug for SessionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl SessionType {
    /// Build from a raw table, checking that every reference is in range.
    /// The result is not canonicalized.
    pub fn from_parts(nodes: Vec<Node>, root: NodeId) -> Result<Self, TypeError> {
        let n = nodes.len();
        if root >= n {
            return Err(TypeError::Malformed(format!("root {root} out of range")));
        }
        for (i, node) in nodes.iter().enumerate() {
            if let Some(c) = node.children().into_iter().find(|&c| c >= n) {
                return Err(TypeError::Malformed(format!("node {i} refers to missing node {c}")));
            }
        }
        Ok(SessionType::make(nodes, root))
    }

    fn make(nodes: Vec<Node>, root: NodeId) -> Self {
        let mut h = DefaultHasher::new();
        nodes.hash(&mut h);
        root.hash(&mut h);
        SessionType { nodes: nodes.into(), root, hash: h.finish() }
    }

    fn leaf(node: Node) -> Self {
        SessionType::make(vec![node], 0)
    }

    pub fn one() -> Self {
        Self::leaf(Node::One)
    }

    pub fn bot() -> Self {
        Self::leaf(Node::Bot)
    }

    /// The empty internal choice.
    pub fn zero() -> Self {
        Self::leaf(Node::Plus(Branches::new()))
    }

    /// The empty external choice.
    pub fn top() -> Self {
        Self::leaf(Node::With(Branches::new()))
    }

    pub fn plus<I, S>(branches: I) -> Self
    where
        I: IntoIterator<Item = (S, u32, SessionType)>,
        S: Into<Tag>,
    {
        Self::choice(true, branches)
    }

    pub fn with<I, S>(branches: I) -> Self
    where
        I: IntoIterator<Item = (S, u32, SessionType)>,
        S: Into<Tag>,
    {
        Self::choice(false, branches)
    }

    fn choice<I, S>(internal: bool, branches: I) -> Self
    where
        I: IntoIterator<Item = (S, u32, SessionType)>,
        S: Into<Tag>,
    {
        let mut nodes = vec![Node::One];
        let mut bs = Branches::new();
        for (tag, measure, t) in branches {
            let cont = append(&mut nodes, &t);
            bs.insert(tag.into(), Branch { measure, cont });
        }
        nodes[0] = if internal { Node::Plus(bs) } else { Node::With(bs) };
        SessionType::make(nodes, 0).canonicalize()
    }

    pub fn times(payload: &SessionType, cont: &SessionType) -> Self {
        Self::pair(true, payload, cont)
    }

    pub fn par(payload: &SessionType, cont: &SessionType) -> Self {
        Self::pair(false, payload, cont)
    }

    fn pair(out: bool, payload: &SessionType, cont: &SessionType) -> Self {
        let mut nodes = vec![Node::One];
        let p = append(&mut nodes, payload);
        let c = append(&mut nodes, cont);
        nodes[0] = if out { Node::Times(p, c) } else { Node::Par(p, c) };
        SessionType::make(nodes, 0).canonicalize()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn top_node(&self) -> &Node {
        &self.nodes[self.root]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// The same table rooted elsewhere, canonicalized.
    pub fn at(&self, id: NodeId) -> SessionType {
        SessionType { nodes: self.nodes.clone(), root: id, hash: 0 }.canonicalize()
    }

    pub fn polarity(&self) -> Polarity {
        self.top_node().polarity()
    }

    pub fn is_positive(&self) -> bool {
        self.polarity() == Polarity::Pos
    }

    pub fn is_negative(&self) -> bool {
        self.polarity() == Polarity::Neg
    }

    /// True when no channel payload is reachable.
    pub fn is_first_order(&self) -> bool {
        self.reachable()
            .into_iter()
            .all(|i| !matches!(self.nodes[i], Node::Times(..) | Node::Par(..)))
    }

    /// Nodes reachable from the root (payload edges included), in BFS order.
    pub fn reachable(&self) -> Vec<NodeId> {
        let mut seen = vec![false; self.nodes.len()];
        let mut order = Vec::new();
        let mut queue = VecDeque::from([self.root]);
        seen[self.root] = true;
        while let Some(n) = queue.pop_front() {
            order.push(n);
            for c in self.nodes[n].children() {
                if !seen[c] {
                    seen[c] = true;
                    queue.push_back(c);
                }
            }
        }
        order
    }

    /// Swap 1/⊥, ⊕/& and ⊗/⅋ everywhere; annotations are kept.
    pub fn dual(&self) -> SessionType {
        let nodes = self
            .nodes
            .iter()
            .map(|n| match n {
                Node::One => Node::Bot,
                Node::Bot => Node::One,
                Node::Plus(bs) => Node::With(bs.clone()),
                Node::With(bs) => Node::Plus(bs.clone()),
                Node::Times(p, c) => Node::Par(*p, *c),
                Node::Par(p, c) => Node::Times(*p, *c),
            })
            .collect();
        SessionType::make(nodes, self.root).canonicalize()
    }

    pub fn equiv(&self, other: &SessionType) -> bool {
        self.canonicalize() == other.canonicalize()
    }

    /// Minimize by partition refinement, then renumber breadth first from the
    /// root visiting children in their fixed order.
    pub fn canonicalize(&self) -> SessionType {
        let reach = self.reachable();
        let mut local = vec![usize::MAX; self.nodes.len()];
        for (i, &n) in reach.iter().enumerate() {
            local[n] = i;
        }
        let block = self.partition(&reach, &local);
        let nblocks = block.iter().max().map_or(0, |b| b + 1);
        let block_of = |n: NodeId| block[local[n]];
        // one representative per block, numbered in BFS order
        let mut rep = vec![usize::MAX; nblocks];
        for &n in &reach {
            if rep[block_of(n)] == usize::MAX {
                rep[block_of(n)] = n;
            }
        }
        let mut new_id = vec![usize::MAX; nblocks];
        let mut order = Vec::with_capacity(nblocks);
        let mut queue = VecDeque::from([block_of(self.root)]);
        new_id[block_of(self.root)] = 0;
        let mut next = 1;
        while let Some(b) = queue.pop_front() {
            order.push(b);
            for c in self.nodes[rep[b]].children() {
                let cb = block_of(c);
                if new_id[cb] == usize::MAX {
                    new_id[cb] = next;
                    next += 1;
                    queue.push_back(cb);
                }
            }
        }
        let nodes = order
            .iter()
            .map(|&b| self.nodes[rep[b]].map_children(|c| new_id[block_of(c)]))
            .collect();
        SessionType::make(nodes, 0)
    }

    /// Coarsest partition of `reach` (indexed through `local`) that respects
    /// node shapes and is stable under every child position, by Hopcroft's
    /// algorithm with the child position as the letter.
    fn partition(&self, reach: &[NodeId], local: &[usize]) -> Vec<usize> {
        let m = reach.len();
        let kids: Vec<Vec<usize>> = reach
            .iter()
            .map(|&n| self.nodes[n].children().iter().map(|&c| local[c]).collect())
            .collect();
        let arity = kids.iter().map(Vec::len).max().unwrap_or(0);
        let mut preds = vec![vec![Vec::new(); m]; arity];
        for (n, ks) in kids.iter().enumerate() {
            for (a, &c) in ks.iter().enumerate() {
                preds[a][c].push(n);
            }
        }
        let mut shapes: HashMap<Shape<'_>, usize> = HashMap::new();
        let mut block: Vec<usize> = reach
            .iter()
            .map(|&n| {
                let next = shapes.len();
                *shapes.entry(shape(&self.nodes[n])).or_insert(next)
            })
            .collect();
        let nb = shapes.len();
        // blocks are contiguous ranges of `elems`
        let mut elems: Vec<usize> = (0..m).collect();
        elems.sort_by_key(|&i| block[i]);
        let mut pos = vec![0; m];
        let (mut start, mut end) = (vec![0; nb], vec![0; nb]);
        for (p, &e) in elems.iter().enumerate() {
            pos[e] = p;
            let b = block[e];
            if p == 0 || block[elems[p - 1]] != b {
                start[b] = p;
            }
            end[b] = p + 1;
        }
        let mut marked = vec![0usize; nb];
        let mut in_work = vec![vec![true; arity]; nb];
        let mut work: Vec<(usize, usize)> = (0..nb).flat_map(|b| (0..arity).map(move |a| (b, a))).collect();
        while let Some((b, a)) = work.pop() {
            in_work[b][a] = false;
            let mut touched = Vec::new();
            let members: Vec<usize> = elems[start[b]..end[b]].to_vec();
            for c in members {
                for &n in &preds[a][c] {
                    let y = block[n];
                    let front = start[y] + marked[y];
                    if pos[n] >= front {
                        let other = elems[front];
                        elems.swap(pos[n], front);
                        pos[other] = pos[n];
                        pos[n] = front;
                        if marked[y] == 0 {
                            touched.push(y);
                        }
                        marked[y] += 1;
                    }
                }
            }
            for y in touched {
                let k = std::mem::take(&mut marked[y]);
                if k == end[y] - start[y] {
                    continue;
                }
                // the marked prefix becomes block z
                let z = start.len();
                start.push(start[y]);
                end.push(start[y] + k);
                start[y] += k;
                marked.push(0);
                in_work.push(vec![false; arity]);
                for p in start[z]..end[z] {
                    block[elems[p]] = z;
                }
                let smaller = if k <= end[y] - start[y] { z } else { y };
                for a2 in 0..arity {
                    let pick = if in_work[y][a2] { z } else { smaller };
                    if !in_work[pick][a2] {
                        in_work[pick][a2] = true;
                        work.push((pick, a2));
                    }
                }
            }
        }
        block
    }

    pub fn fair_termination(&self) -> FairTermination {
        fair::analyse(self)
    }

    pub fn is_fairly_terminating(&self) -> bool {
        self.fair_termination().fairly_terminating
    }

    /// Render in the surface grammar; cyclic types come out as a list of
    /// declarations whose first one is the root.
    pub fn render(&self) -> String {
        print::render(self)
    }

    /// Render as a single expression, using `rec` binders for cycles.  Used
    /// where a declaration list cannot appear, such as cut annotations.
    pub fn render_inline(&self) -> String {
        print::render_inline(self)
    }

    /// Parse either a bare type expression or a declaration list whose first
    /// declaration is the root.
    pub fn parse(text: &str) -> Result<SessionType, TypeError> {
        parse::parse_rendered(text)
    }
}

impl fmt::Display for SessionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl std::str::FromStr for SessionType {
    type Err = TypeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SessionType::parse(s)
    }
}

/// Copy `t`'s table into `nodes`, returning the id of its root.
fn append(nodes: &mut Vec<Node>, t: &SessionType) -> NodeId {
    let off = nodes.len();
    nodes.extend(t.nodes.iter().map(|n| n.map_children(|c| c + off)));
    t.root + off
}

/// A node with its successors erased.
#[derive(PartialEq, Eq, Hash)]
enum Shape<'a> {
    One,
    Bot,
    Plus(Vec<(&'a str, u32)>),
    With(Vec<(&'a str, u32)>),
    Times,
    Par,
}

fn labels(bs: &Branches) -> Vec<(&str, u32)> {
    bs.iter().map(|(t, b)| (&**t, b.measure)).collect()
}

fn shape(n: &Node) -> Shape<'_> {
    match n {
        Node::One => Shape::One,
        Node::Bot => Shape::Bot,
        Node::Plus(bs) => Shape::Plus(labels(bs)),
        Node::With(bs) => Shape::With(labels(bs)),
        Node::Times(..) => Shape::Times,
        Node::Par(..) => Shape::Par,
    }
}
