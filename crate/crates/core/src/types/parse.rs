use std::collections::{BTreeMap, HashMap, HashSet};

use super::{Branch, Node, NodeId, SessionType, Tag, TypeError};
use crate::lex::{Cursor, Pos, Tok};

/// Surface syntax of a type expression.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TypeExpr {
    One,
    Bot,
    Plus(Vec<BranchExpr>),
    With(Vec<BranchExpr>),
    Times(Box<TypeExpr>, Box<TypeExpr>),
    Par(Box<TypeExpr>, Box<TypeExpr>),
    Name(String, Pos),
    /// `dual(T)`: convenience form so cut annotations can name both ends.
    Dual(Box<TypeExpr>),
    /// `rec X. T`, a local recursive binder.
    Rec(String, Box<TypeExpr>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BranchExpr {
    pub tag: Tag,
    pub measure: u32,
    pub body: TypeExpr,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decl {
    pub name: String,
    pub body: TypeExpr,
    pub pos: Pos,
}

/// A parsed list of `type` declarations.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TypeSource {
    pub decls: Vec<Decl>,
}

impl TypeSource {
    pub fn get(&self, name: &str) -> Option<&Decl> {
        self.decls.iter().find(|d| d.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.decls.iter().map(|d| d.name.as_str())
    }

    /// Add a declaration, rejecting duplicates.
    pub(crate) fn push(&mut self, decl: Decl) -> Result<(), TypeError> {
        if self.get(&decl.name).is_some() {
            return Err(TypeError::DuplicateDecl { name: decl.name, pos: decl.pos });
        }
        self.decls.push(decl);
        Ok(())
    }

    /// Reject declarations that reach themselves without passing a constructor.
    pub(crate) fn check_guarded(&self) -> Result<(), TypeError> {
        for d in &self.decls {
            let mut seen = HashSet::from([d.name.as_str()]);
            let mut e = &d.body;
            loop {
                match e {
                    TypeExpr::Dual(inner) | TypeExpr::Rec(_, inner) => e = inner,
                    TypeExpr::Name(n, _) => match self.get(n) {
                        Some(next) => {
                            if !seen.insert(next.name.as_str()) {
                                return Err(TypeError::Unguarded(d.name.clone()));
                            }
                            e = &next.body;
                        }
                        None => break,
                    },
                    _ => break,
                }
            }
        }
        Ok(())
    }
}

pub fn parse_types(text: &str) -> Result<TypeSource, TypeError> {
    let mut cur = Cursor::new(text)?;
    let mut src = TypeSource::default();
    while !cur.at_eof() {
        let decl = parse_decl(&mut cur)?;
        src.push(decl)?;
    }
    src.check_guarded()?;
    Ok(src)
}

/// `type NAME = T`, with the cursor on `type`.
pub(crate) fn parse_decl(cur: &mut Cursor) -> Result<Decl, TypeError> {
    if !cur.eat_word("type") {
        return Err(cur.unexpected("`type`").into());
    }
    let pos = cur.pos();
    let name = cur.expect_ident("a type name")?;
    cur.expect_punct('=')?;
    let body = parse_expr(cur)?;
    Ok(Decl { name, body, pos })
}

pub(crate) fn parse_expr(cur: &mut Cursor) -> Result<TypeExpr, TypeError> {
    let pos = cur.pos();
    match cur.peek().clone() {
        Tok::Word(w) if w == "end" => {
            cur.bump();
            if cur.eat_punct('!') {
                Ok(TypeExpr::One)
            } else if cur.eat_punct('?') {
                Ok(TypeExpr::Bot)
            } else {
                Err(cur.unexpected("`!` or `?` after `end`").into())
            }
        }
        Tok::Word(w) if w == "rec" && matches!(cur.peek_at(1), Tok::Word(_)) && cur.peek_at(2) == &Tok::Punct('.') => {
            cur.bump();
            let var = cur.expect_ident("a type variable")?;
            cur.expect_punct('.')?;
            let body = parse_expr(cur)?;
            Ok(TypeExpr::Rec(var, Box::new(body)))
        }
        Tok::Word(w) if w == "dual" && cur.peek_at(1) == &Tok::Punct('(') => {
            cur.bump();
            cur.bump();
            let inner = parse_expr(cur)?;
            cur.expect_punct(')')?;
            Ok(TypeExpr::Dual(Box::new(inner)))
        }
        Tok::Word(_) => {
            let name = cur.expect_ident("a type")?;
            Ok(TypeExpr::Name(name, pos))
        }
        Tok::Punct('+') | Tok::Punct('&') => {
            let internal = cur.bump() == Tok::Punct('+');
            cur.expect_punct('{')?;
            let branches = parse_branches(cur)?;
            Ok(if internal { TypeExpr::Plus(branches) } else { TypeExpr::With(branches) })
        }
        Tok::Punct('!') | Tok::Punct('?') => {
            let out = cur.bump() == Tok::Punct('!');
            cur.expect_punct('(')?;
            let payload = parse_expr(cur)?;
            cur.expect_punct(')')?;
            cur.expect_punct('.')?;
            let cont = parse_expr(cur)?;
            let (p, c) = (Box::new(payload), Box::new(cont));
            Ok(if out { TypeExpr::Times(p, c) } else { TypeExpr::Par(p, c) })
        }
        Tok::Punct('(') => {
            cur.bump();
            let inner = parse_expr(cur)?;
            cur.expect_punct(')')?;
            Ok(inner)
        }
        _ => Err(cur.unexpected("a type").into()),
    }
}

fn parse_branches(cur: &mut Cursor) -> Result<Vec<BranchExpr>, TypeError> {
    let mut out: Vec<BranchExpr> = Vec::new();
    if cur.eat_punct('}') {
        return Ok(out);
    }
    loop {
        let pos = cur.pos();
        let tag = cur.expect_word("a tag")?;
        let measure = if cur.eat_punct('@') { parse_nat(cur)? } else { 0 };
        cur.expect_punct(':')?;
        let body = parse_expr(cur)?;
        if out.iter().any(|b| *b.tag == *tag) {
            return Err(TypeError::DuplicateTag { tag, pos });
        }
        out.push(BranchExpr { tag: tag.into(), measure, body });
        if cur.eat_punct(',') {
            continue;
        }
        cur.expect_punct('}')?;
        return Ok(out);
    }
}

fn parse_nat(cur: &mut Cursor) -> Result<u32, TypeError> {
    let pos = cur.pos();
    let w = cur.expect_word("a natural number")?;
    w.parse()
        .map_err(|_| crate::lex::SyntaxError::new(pos, format!("`{w}` is not a natural number")).into())
}

pub fn resolve(src: &TypeSource, name: &str) -> Result<SessionType, TypeError> {
    resolve_expr(src, &TypeExpr::Name(name.to_string(), Pos::default()))
}

pub fn resolve_str(text: &str, name: &str) -> Result<SessionType, TypeError> {
    resolve(&parse_types(text)?, name)
}

/// Build the automaton of an arbitrary expression whose names refer to `src`.
pub fn resolve_expr(src: &TypeSource, expr: &TypeExpr) -> Result<SessionType, TypeError> {
    let mut b = Builder { src, raws: Vec::new(), decl_raw: HashMap::new(), locals: Vec::new() };
    let root = b.build(expr)?;
    b.finish(root)
}

pub(super) fn parse_rendered(text: &str) -> Result<SessionType, TypeError> {
    let mut cur = Cursor::new(text)?;
    if cur.is_word("type") {
        let src = parse_types(text)?;
        let first = src.decls.first().map(|d| d.name.clone());
        return resolve(&src, &first.unwrap_or_default());
    }
    let e = parse_expr(&mut cur)?;
    if !cur.at_eof() {
        return Err(cur.unexpected("end of input").into());
    }
    resolve_expr(&TypeSource::default(), &e)
}

enum Raw {
    Pending,
    Alias(usize, String),
    Dual(usize),
    One,
    Bot,
    Plus(Vec<(Tag, u32, usize)>),
    With(Vec<(Tag, u32, usize)>),
    Times(usize, usize),
    Par(usize, usize),
}

struct Builder<'a> {
    src: &'a TypeSource,
    raws: Vec<Raw>,
    decl_raw: HashMap<String, usize>,
    /// `rec` binders in scope, innermost last.
    locals: Vec<(String, usize)>,
}

impl Builder<'_> {
    fn push(&mut self, r: Raw) -> usize {
        self.raws.push(r);
        self.raws.len() - 1
    }

    fn build(&mut self, e: &TypeExpr) -> Result<usize, TypeError> {
        Ok(match e {
            TypeExpr::One => self.push(Raw::One),
            TypeExpr::Bot => self.push(Raw::Bot),
            TypeExpr::Plus(bs) | TypeExpr::With(bs) => {
                let mut out = Vec::new();
                for b in bs {
                    out.push((b.tag.clone(), b.measure, self.build(&b.body)?));
                }
                let r = if matches!(e, TypeExpr::Plus(_)) { Raw::Plus(out) } else { Raw::With(out) };
                self.push(r)
            }
            TypeExpr::Times(p, c) | TypeExpr::Par(p, c) => {
                let (p, c) = (self.build(p)?, self.build(c)?);
                let r = if matches!(e, TypeExpr::Times(..)) { Raw::Times(p, c) } else { Raw::Par(p, c) };
                self.push(r)
            }
            TypeExpr::Dual(inner) => {
                let i = self.build(inner)?;
                self.push(Raw::Dual(i))
            }
            TypeExpr::Rec(var, body) => {
                let id = self.push(Raw::Pending);
                self.locals.push((var.clone(), id));
                let inner = self.build(body);
                self.locals.pop();
                self.raws[id] = Raw::Alias(inner?, var.clone());
                id
            }
            TypeExpr::Name(n, _) => {
                if let Some(&(_, id)) = self.locals.iter().rev().find(|(v, _)| v == n) {
                    return Ok(id);
                }
                if let Some(&id) = self.decl_raw.get(n) {
                    return Ok(id);
                }
                let decl = self.src.get(n).ok_or_else(|| TypeError::UnknownName(n.clone()))?;
                let id = self.push(Raw::Pending);
                self.decl_raw.insert(n.clone(), id);
                // declarations never see the binders of the use site
                let outer = std::mem::take(&mut self.locals);
                let body = self.build(&decl.body);
                self.locals = outer;
                self.raws[id] = Raw::Alias(body?, n.clone());
                id
            }
        })
    }

    /// Follow aliases and duals down to a constructor.
    fn chase(&self, mut r: usize, mut flip: bool) -> Result<(usize, bool), TypeError> {
        let mut seen = HashSet::new();
        loop {
            if !seen.insert(r) {
                let name = match &self.raws[r] {
                    Raw::Alias(_, n) => n.clone(),
                    _ => "?".into(),
                };
                return Err(TypeError::Unguarded(name));
            }
            match &self.raws[r] {
                Raw::Alias(x, _) => r = *x,
                Raw::Dual(x) => {
                    r = *x;
                    flip = !flip;
                }
                Raw::Pending => return Err(TypeError::Malformed("unfinished declaration".into())),
                _ => return Ok((r, flip)),
            }
        }
    }

    fn finish(&self, root: usize) -> Result<SessionType, TypeError> {
        let mut ids: HashMap<(usize, bool), NodeId> = HashMap::new();
        let mut nodes: Vec<Node> = Vec::new();
        let mut work = Vec::new();
        let start = self.chase(root, false)?;
        ids.insert(start, 0);
        nodes.push(Node::One);
        work.push(start);
        while let Some((r, flip)) = work.pop() {
            let mut child = |x: usize| -> Result<NodeId, TypeError> {
                let key = self.chase(x, flip)?;
                if let Some(&id) = ids.get(&key) {
                    return Ok(id);
                }
                let id = nodes.len();
                nodes.push(Node::One);
                ids.insert(key, id);
                work.push(key);
                Ok(id)
            };
            let mut branches = |bs: &[(Tag, u32, usize)]| -> Result<BTreeMap<Tag, Branch>, TypeError> {
                bs.iter()
                    .map(|(t, m, x)| Ok((t.clone(), Branch { measure: *m, cont: child(*x)? })))
                    .collect()
            };
            let node = match &self.raws[r] {
                Raw::One => Node::One,
                Raw::Bot => Node::Bot,
                Raw::Plus(bs) => Node::Plus(branches(bs)?),
                Raw::With(bs) => Node::With(branches(bs)?),
                Raw::Times(p, c) => Node::Times(child(*p)?, child(*c)?),
                Raw::Par(p, c) => Node::Par(child(*p)?, child(*c)?),
                _ => unreachable!("chase stops at constructors"),
            };
            let node = if flip { dual_node(node) } else { node };
            nodes[ids[&(r, flip)]] = node;
        }
        Ok(SessionType::from_parts(nodes, 0)?.canonicalize())
    }
}

fn dual_node(n: Node) -> Node {
    match n {
        Node::One => Node::Bot,
        Node::Bot => Node::One,
        Node::Plus(bs) => Node::With(bs),
        Node::With(bs) => Node::Plus(bs),
        Node::Times(p, c) => Node::Par(p, c),
        Node::Par(p, c) => Node::Times(p, c),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SATELLITE: &str = "
        type S = +{cmd: S, stop: T}
        type T = &{data: T, stop: end?}
        type U = &{data: U, stop: V}
        type V = +{cmd: V, stop: end?}
    ";

    #[test]
    fn satellite_decls_parse() {
        let src = parse_types(SATELLITE).unwrap();
        assert_eq!(src.names().collect::<Vec<_>>(), ["S", "T", "U", "V"]);
        let s = resolve(&src, "S").unwrap();
        assert_eq!(s.len(), 3);
        assert!(matches!(s.top_node(), Node::Plus(bs) if bs.len() == 2));
    }

    #[test]
    fn measures_parse() {
        let t = resolve_str("type S = +{a@2: end!}", "S").unwrap();
        match t.top_node() {
            Node::Plus(bs) => assert_eq!(bs["a"].measure, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unguarded_recursion_is_rejected() {
        assert_eq!(parse_types("type S = S"), Err(TypeError::Unguarded("S".into())));
        assert!(matches!(parse_types("type A = B type B = dual(A)"), Err(TypeError::Unguarded(_))));
    }

    #[test]
    fn duplicates_are_rejected() {
        assert!(matches!(parse_types("type A = end! type A = end?"), Err(TypeError::DuplicateDecl { .. })));
        assert!(matches!(parse_types("type A = +{a: end!, a: end!}"), Err(TypeError::DuplicateTag { .. })));
    }

    #[test]
    fn unknown_names_fail_at_resolution() {
        let src = parse_types("type A = +{a: B}").unwrap();
        assert_eq!(resolve(&src, "A"), Err(TypeError::UnknownName("B".into())));
        assert_eq!(resolve(&src, "Z"), Err(TypeError::UnknownName("Z".into())));
    }

    #[test]
    fn resolving_twice_is_stable() {
        let src = parse_types(SATELLITE).unwrap();
        assert_eq!(resolve(&src, "U").unwrap(), resolve(&src, "U").unwrap());
    }

    #[test]
    fn aliases_and_dual_forms() {
        let src = parse_types("type A = B type B = +{a: A} type C = dual(B)").unwrap();
        assert_eq!(resolve(&src, "A").unwrap(), resolve(&src, "B").unwrap());
        assert_eq!(resolve(&src, "C").unwrap(), resolve(&src, "B").unwrap().dual());
        // a dual taken inside its own declaration
        let t = resolve_str("type S = +{a: dual(S)}", "S").unwrap();
        assert_eq!(t, SessionType::parse("type X = +{a: &{a: X}}").unwrap());
    }

    #[test]
    fn syntax_errors_carry_positions() {
        match parse_types("type S = +{a end!}") {
            Err(TypeError::Syntax(e)) => assert_eq!((e.pos.line, e.pos.col), (1, 14)),
            other => panic!("unexpected {other:?}"),
        }
    }
}
