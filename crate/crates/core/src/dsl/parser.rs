//! Recursive-descent parser for the expression grammar.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?          (right-associative)
//! primary := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Positions in error messages are 1-based character offsets; the end of the
//! input is reported as `len + 1`.

use std::sync::Arc;

use super::ast::{BinOp, Constant, Expr, Func, Var};
use super::Dims;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
    End,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokenize(text: &'a str) -> Result<Vec<(Tok, usize)>> {
        let mut lx = Lexer {
            src: text.as_bytes(),
            pos: 0,
        };
        let mut out = Vec::new();
        loop {
            let (tok, at) = lx.next()?;
            let done = tok == Tok::End;
            out.push((tok, at));
            if done {
                return Ok(out);
            }
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn next(&mut self) -> Result<(Tok, usize)> {
        while matches!(self.peek(), Some(c) if c.is_ascii_whitespace()) {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(c) = self.peek() else {
            return Ok((Tok::End, start + 1));
        };
        if c.is_ascii_digit() || c == b'.' {
            return self.number(start);
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == b'_') {
                self.pos += 1;
            }
            let name = std::str::from_utf8(&self.src[start..self.pos])
                .expect("ascii identifier")
                .to_string();
            return Ok((Tok::Ident(name), start + 1));
        }
        if b"+-*/^(),".contains(&c) {
            self.pos += 1;
            return Ok((Tok::Sym(c as char), start + 1));
        }
        Err(Error::Syntax {
            pos: start + 1,
            msg: format!("unexpected character `{}`", c as char),
        })
    }

    fn number(&mut self, start: usize) -> Result<(Tok, usize)> {
        let digits = |lx: &mut Lexer<'_>| {
            let s = lx.pos;
            while matches!(lx.peek(), Some(c) if c.is_ascii_digit()) {
                lx.pos += 1;
            }
            lx.pos - s
        };
        let mut count = digits(self);
        if self.peek() == Some(b'.') {
            self.pos += 1;
            count += digits(self);
        }
        if count == 0 {
            return Err(Error::Syntax {
                pos: start + 1,
                msg: "malformed number".into(),
            });
        }
        // exponent only if followed by digits, so `2e` lexes as `2` then `e`
        if matches!(self.peek(), Some(b'e' | b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if digits(self) == 0 {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii number");
        let v: f64 = text.parse().map_err(|_| Error::Syntax {
            pos: start + 1,
            msg: format!("malformed number `{text}`"),
        })?;
        Ok((Tok::Num(v), start + 1))
    }
}

pub(super) struct Parser<'d> {
    toks: Vec<(Tok, usize)>,
    i: usize,
    dims: &'d Dims,
}

impl<'d> Parser<'d> {
    pub(super) fn parse(text: &str, dims: &'d Dims) -> Result<Expr> {
        if text.trim().is_empty() {
            return Err(Error::Syntax {
                pos: 1,
                msg: "empty expression".into(),
            });
        }
        let mut p = Parser {
            toks: Lexer::tokenize(text)?,
            i: 0,
            dims,
        };
        let e = p.expr()?;
        match p.peek() {
            Tok::End => Ok(e),
            tok => Err(p.unexpected(tok.clone())),
        }
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.i].0
    }

    fn pos(&self) -> usize {
        self.toks[self.i].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.i].clone();
        if self.i + 1 < self.toks.len() {
            self.i += 1;
        }
        t
    }

    fn unexpected(&self, tok: Tok) -> Error {
        let msg = match tok {
            Tok::End => "unexpected end of input".to_string(),
            Tok::Num(v) => format!("unexpected number {v}"),
            Tok::Ident(s) => format!("unexpected identifier `{s}`"),
            Tok::Sym(c) => format!("unexpected `{c}`"),
        };
        Error::Syntax {
            pos: self.pos(),
            msg,
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if *self.peek() == Tok::Sym(c) {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected(self.peek().clone()))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Sym('+') => BinOp::Add,
                Tok::Sym('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            lhs = Expr::bin(op, lhs, self.term()?);
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Sym('*') => BinOp::Mul,
                Tok::Sym('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            lhs = Expr::bin(op, lhs, self.unary()?);
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if *self.peek() == Tok::Sym('-') {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        if *self.peek() == Tok::Sym('^') {
            self.bump();
            let exp = self.unary()?;
            return Ok(Expr::pow(base, exp));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr> {
        match self.peek() {
            Tok::Num(_) | Tok::Sym('(') | Tok::Ident(_) => {}
            tok => return Err(self.unexpected(tok.clone())),
        }
        let (tok, pos) = self.bump();
        match tok {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::Sym('(') => {
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if *self.peek() == Tok::Sym('(') {
                    let func = Func::from_name(&name).ok_or(Error::UnknownIdentifier {
                        name: name.clone(),
                        pos,
                    })?;
                    self.bump();
                    let mut args = vec![self.expr()?];
                    while *self.peek() == Tok::Sym(',') {
                        self.bump();
                        args.push(self.expr()?);
                    }
                    self.expect(')')?;
                    let (lo, hi) = func.arity();
                    if args.len() < lo || args.len() > hi {
                        return Err(Error::Syntax {
                            pos,
                            msg: format!("{} takes {lo} argument(s), got {}", name, args.len()),
                        });
                    }
                    return Ok(Expr::Call(func, args));
                }
                self.resolve(&name, pos)
            }
            _ => unreachable!("checked above"),
        }
    }

    fn resolve(&self, name: &str, pos: usize) -> Result<Expr> {
        if let Some(index) = self.dims.aux.iter().position(|a| a == name) {
            return Ok(Expr::Var(Var::Aux {
                index,
                name: Arc::from(name),
            }));
        }
        match name {
            "t" => return Ok(Expr::Var(Var::T)),
            "e" => return Ok(Expr::Const(Constant::E)),
            "pi" => return Ok(Expr::Const(Constant::Pi)),
            _ => {}
        }
        let (head, rest) = name.split_at(1);
        let limit = match head {
            "x" => Some(self.dims.n),
            "d" => Some(self.dims.m),
            "u" => Some(self.dims.k),
            _ => None,
        };
        let index = (!rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
            .then(|| rest.parse::<usize>().ok())
            .flatten();
        match (limit, index) {
            (Some(limit), Some(i)) if i >= 1 && i <= limit => Ok(Expr::Var(match head {
                "x" => Var::X(i - 1),
                "d" => Var::D(i - 1),
                _ => Var::U(i - 1),
            })),
            (Some(limit), Some(_)) => Err(Error::IndexOutOfRange {
                name: name.to_string(),
                pos,
                limit,
            }),
            _ => Err(Error::UnknownIdentifier {
                name: name.to_string(),
                pos,
            }),
        }
    }
}
