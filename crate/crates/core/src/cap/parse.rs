use std::collections::{BTreeSet, HashMap};

use super::{CapError, CutTypes, Def, Name, Proc, Program, Sig};
use crate::lex::{Cursor, Tok};
use crate::types::parse::{parse_decl, parse_expr};
use crate::types::{resolve_expr, Tag, TypeSource};

const KEYWORDS: [&str; 9] = ["def", "sig", "type", "done", "link", "close", "wait", "case", "new"];

/// Parse a program: `type` and `sig` declarations, definitions and at most one
/// main process, in any order except that types are declared before use.
pub fn parse_program(text: &str) -> Result<Program, CapError> {
    let mut cur = Cursor::new(text)?;
    let mut prog = Program::default();
    while !cur.at_eof() {
        if cur.is_word("type") {
            let decl = parse_decl(&mut cur)?;
            prog.types.push(decl)?;
        } else if cur.eat_word("sig") {
            let pos = cur.pos();
            let name = cur.expect_ident("a process name")?;
            cur.expect_punct('(')?;
            let mut params = Vec::new();
            if !cur.is_punct(')') {
                loop {
                    let x = cur.expect_ident("a channel name")?;
                    cur.expect_punct(':')?;
                    let t = parse_expr(&mut cur)?;
                    params.push((x, resolve_expr(&prog.types, &t)?));
                    if !cur.eat_punct(',') {
                        break;
                    }
                }
            }
            cur.expect_punct(')')?;
            if prog.sig(&name).is_some() {
                return Err(CapError::Duplicate { what: "signature", name, pos });
            }
            prog.sigs.push(Sig { name, params, pos });
        } else if cur.eat_word("def") {
            let pos = cur.pos();
            let name = cur.expect_ident("a process name")?;
            let params = names(&mut cur)?;
            cur.expect_punct('=')?;
            let body = Parser { cur: &mut cur, types: &prog.types }.choice()?;
            if prog.def(&name).is_some() {
                return Err(CapError::Duplicate { what: "definition", name, pos });
            }
            prog.defs.push(Def { name, params, body, pos });
        } else {
            let p = Parser { cur: &mut cur, types: &prog.types }.choice()?;
            if prog.main.replace(p).is_some() {
                return Err(CapError::TwoMains);
            }
        }
        prog.types.check_guarded()?;
    }
    validate(&prog)?;
    Ok(prog)
}

/// Parse a single process with no definitions or type declarations.
pub fn parse_process(text: &str) -> Result<Proc, CapError> {
    let mut cur = Cursor::new(text)?;
    let types = TypeSource::default();
    let p = Parser { cur: &mut cur, types: &types }.choice()?;
    if !cur.at_eof() {
        return Err(cur.unexpected("end of input").into());
    }
    Ok(p)
}

fn names(cur: &mut Cursor) -> Result<Vec<Name>, CapError> {
    cur.expect_punct('(')?;
    let mut out = Vec::new();
    if !cur.is_punct(')') {
        loop {
            out.push(cur.expect_ident("a channel name")?);
            if !cur.eat_punct(',') {
                break;
            }
        }
    }
    cur.expect_punct(')')?;
    Ok(out)
}

struct Parser<'a> {
    cur: &'a mut Cursor,
    types: &'a TypeSource,
}

impl Parser<'_> {
    fn at_choice(&self) -> bool {
        self.cur.is_punct('(') && self.cur.peek_at(1) == &Tok::Punct('+') && self.cur.peek_at(2) == &Tok::Punct(')')
    }

    /// `P (+) P (+) ...`, associating to the left.
    fn choice(&mut self) -> Result<Proc, CapError> {
        let mut p = self.prefix()?;
        while self.at_choice() {
            for _ in 0..3 {
                self.cur.bump();
            }
            let q = self.prefix()?;
            p = Proc::Choice(Box::new(p), Box::new(q));
        }
        Ok(p)
    }

    fn channel(&mut self) -> Result<Name, CapError> {
        let pos = self.cur.pos();
        let x = self.cur.expect_ident("a channel name")?;
        if KEYWORDS.contains(&x.as_str()) {
            return Err(crate::lex::SyntaxError::new(pos, format!("`{x}` is a keyword")).into());
        }
        Ok(x)
    }

    fn tag(&mut self) -> Result<Tag, CapError> {
        Ok(Tag::from(self.cur.expect_word("a tag")?))
    }

    fn prefix(&mut self) -> Result<Proc, CapError> {
        if self.cur.eat_punct('(') {
            let p = self.choice()?;
            self.cur.expect_punct(')')?;
            return Ok(p);
        }
        if self.cur.eat_word("done") {
            return Ok(Proc::Done);
        }
        if self.cur.eat_word("link") {
            let x = self.channel()?;
            let y = self.channel()?;
            return Ok(Proc::Link(x, y));
        }
        if self.cur.eat_word("close") {
            return Ok(Proc::Close(self.channel()?));
        }
        if self.cur.eat_word("wait") {
            let x = self.channel()?;
            self.cur.expect_punct('.')?;
            return Ok(Proc::Wait(x, Box::new(self.prefix()?)));
        }
        if self.cur.eat_word("case") {
            let x = self.channel()?;
            self.cur.expect_punct('{')?;
            let mut bs: Vec<(Tag, Proc)> = Vec::new();
            if !self.cur.is_punct('}') {
                loop {
                    let pos = self.cur.pos();
                    let t = self.tag()?;
                    if bs.iter().any(|(u, _)| *u == t) {
                        return Err(crate::types::TypeError::DuplicateTag { tag: t.to_string(), pos }.into());
                    }
                    self.cur.expect_punct(':')?;
                    bs.push((t, self.choice()?));
                    if !self.cur.eat_punct(',') {
                        break;
                    }
                }
            }
            self.cur.expect_punct('}')?;
            return Ok(Proc::Case(x, bs));
        }
        if self.cur.eat_word("new") {
            let x = self.channel()?;
            let types = if self.cur.eat_punct(':') {
                let s = parse_expr(self.cur)?;
                self.cur.expect_punct('>')?;
                self.cur.expect_punct('<')?;
                let t = parse_expr(self.cur)?;
                Some(CutTypes { left: resolve_expr(self.types, &s)?, right: resolve_expr(self.types, &t)? })
            } else {
                None
            };
            self.cur.expect_punct('{')?;
            let left = self.choice()?;
            self.cur.expect_punct('|')?;
            self.cur.expect_punct('|')?;
            let right = self.choice()?;
            self.cur.expect_punct('}')?;
            return Ok(Proc::Cut { chan: x, types, left: Box::new(left), right: Box::new(right) });
        }
        let pos = self.cur.pos();
        let head = self.channel()?;
        match self.cur.peek() {
            Tok::Punct('(') => {
                let args = names(self.cur)?;
                Ok(Proc::Call(head, args))
            }
            Tok::Punct('!') => {
                self.cur.bump();
                if self.cur.eat_punct('(') {
                    let bound = self.channel()?;
                    self.cur.expect_punct(')')?;
                    self.cur.expect_punct('{')?;
                    let payload = self.choice()?;
                    self.cur.expect_punct('}')?;
                    self.cur.expect_punct('.')?;
                    let cont = self.prefix()?;
                    Ok(Proc::Fork { chan: head, bound, payload: Box::new(payload), cont: Box::new(cont) })
                } else {
                    let t = self.tag()?;
                    self.cur.expect_punct('.')?;
                    Ok(Proc::Select(head, t, Box::new(self.prefix()?)))
                }
            }
            Tok::Punct('?') => {
                self.cur.bump();
                self.cur.expect_punct('(')?;
                let bound = self.channel()?;
                self.cur.expect_punct(')')?;
                self.cur.expect_punct('.')?;
                Ok(Proc::Join { chan: head, bound, cont: Box::new(self.prefix()?) })
            }
            _ => Err(crate::lex::SyntaxError::new(pos, format!("expected a process, found `{head}`")).into()),
        }
    }
}

/// Check calls, arities, free names of definitions and guardedness.
fn validate(prog: &Program) -> Result<(), CapError> {
    let arity: HashMap<&str, usize> = prog.defs.iter().map(|d| (d.name.as_str(), d.params.len())).collect();
    let mut unguarded: HashMap<&str, Vec<Name>> = HashMap::new();
    for d in &prog.defs {
        check_calls(&d.body, &arity)?;
        let fv = d.body.free_names();
        let params: BTreeSet<Name> = d.params.iter().cloned().collect();
        if fv != params || params.len() != d.params.len() {
            let join = |s: &BTreeSet<Name>| s.iter().cloned().collect::<Vec<_>>().join(", ");
            return Err(CapError::FreeNames { name: d.name.clone(), expected: join(&params), found: join(&fv) });
        }
        let mut calls = Vec::new();
        unguarded_calls(&d.body, &mut calls);
        unguarded.insert(&d.name, calls);
    }
    if let Some(m) = &prog.main {
        check_calls(m, &arity)?;
    }
    // a cycle among unguarded calls means unfolding never reaches a guard
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Open,
        Done,
    }
    fn visit<'a>(
        n: &'a str,
        graph: &'a HashMap<&'a str, Vec<Name>>,
        mark: &mut HashMap<&'a str, Mark>,
    ) -> Result<(), CapError> {
        match mark.get(n).copied().unwrap_or(Mark::New) {
            Mark::Done => return Ok(()),
            Mark::Open => return Err(CapError::Unguarded(n.to_string())),
            Mark::New => {}
        }
        mark.insert(n, Mark::Open);
        for m in graph.get(n).into_iter().flatten() {
            visit(m, graph, mark)?;
        }
        mark.insert(n, Mark::Done);
        Ok(())
    }
    let mut mark = HashMap::new();
    for d in &prog.defs {
        visit(&d.name, &unguarded, &mut mark)?;
    }
    Ok(())
}

fn check_calls(p: &Proc, arity: &HashMap<&str, usize>) -> Result<(), CapError> {
    match p {
        Proc::Done | Proc::Link(..) | Proc::Close(_) => Ok(()),
        Proc::Wait(_, q) | Proc::Select(_, _, q) | Proc::Join { cont: q, .. } => check_calls(q, arity),
        Proc::Case(_, bs) => bs.iter().try_for_each(|(_, q)| check_calls(q, arity)),
        Proc::Fork { payload, cont, .. } => {
            check_calls(payload, arity)?;
            check_calls(cont, arity)
        }
        Proc::Choice(a, b) | Proc::Cut { left: a, right: b, .. } => {
            check_calls(a, arity)?;
            check_calls(b, arity)
        }
        Proc::Call(a, args) => match arity.get(a.as_str()) {
            None => Err(CapError::UnknownDef(a.clone())),
            Some(&n) if n != args.len() => Err(CapError::Arity { name: a.clone(), expected: n, found: args.len() }),
            Some(_) => Ok(()),
        },
    }
}

/// Calls reachable without passing an action prefix or a choice.
fn unguarded_calls(p: &Proc, out: &mut Vec<Name>) {
    match p {
        Proc::Call(a, _) => out.push(a.clone()),
        Proc::Cut { left, right, .. } => {
            unguarded_calls(left, out);
            unguarded_calls(right, out);
        }
        _ => {}
    }
}
