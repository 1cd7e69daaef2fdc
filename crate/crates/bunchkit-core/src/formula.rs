//! BI formulas: abstract syntax, parsing, printing, size.
//!
//! The surface syntax is ASCII: `top`, `bot`, `emp` (the multiplicative
//! unit), `/\`, `\/`, `->`, `*`, `--*` (with `-*` accepted as an alias).
//! `/\`, `\/` and `*` share one precedence level and bind tighter than
//! `->` and `--*`, which share the next level. Within a level, chains of
//! one connective associate (left for `/\`, `\/`, `*`; right for `->`,
//! `--*`), while mixing two distinct connectives of the same level without
//! parentheses is rejected as ambiguous.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// A propositional BI formula.
///
/// Structural equality is syntactic; no associativity or commutativity is
/// applied at the formula level.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Formula {
    /// Propositional variable. Names match `[a-z][a-z0-9_]*`.
    Atom(Arc<str>),
    /// Additive truth `top`.
    Top,
    /// Falsity `bot`.
    Bot,
    /// Multiplicative truth `emp`.
    MTop,
    /// Additive conjunction `/\`.
    And(Box<Formula>, Box<Formula>),
    /// Disjunction `\/`.
    Or(Box<Formula>, Box<Formula>),
    /// Additive (intuitionistic) implication `->`.
    Imp(Box<Formula>, Box<Formula>),
    /// Multiplicative conjunction `*`.
    Star(Box<Formula>, Box<Formula>),
    /// Multiplicative implication `--*`.
    Wand(Box<Formula>, Box<Formula>),
}

impl Formula {
    pub fn atom(name: &str) -> Formula {
        Formula::Atom(Arc::from(name))
    }

    pub fn and(l: Formula, r: Formula) -> Formula {
        Formula::And(Box::new(l), Box::new(r))
    }

    pub fn or(l: Formula, r: Formula) -> Formula {
        Formula::Or(Box::new(l), Box::new(r))
    }

    pub fn imp(l: Formula, r: Formula) -> Formula {
        Formula::Imp(Box::new(l), Box::new(r))
    }

    pub fn star(l: Formula, r: Formula) -> Formula {
        Formula::Star(Box::new(l), Box::new(r))
    }

    pub fn wand(l: Formula, r: Formula) -> Formula {
        Formula::Wand(Box::new(l), Box::new(r))
    }

    /// Formula size: 1 for atoms and nullary connectives, otherwise
    /// `size(l) + size(r) + 1`. Used as the cut rank.
    pub fn size(&self) -> usize {
        match self {
            Formula::Atom(_) | Formula::Top | Formula::Bot | Formula::MTop => 1,
            Formula::And(l, r)
            | Formula::Or(l, r)
            | Formula::Imp(l, r)
            | Formula::Star(l, r)
            | Formula::Wand(l, r) => l.size() + r.size() + 1,
        }
    }

    fn binop(&self) -> Option<(Op, &Formula, &Formula)> {
        match self {
            Formula::And(l, r) => Some((Op::And, l, r)),
            Formula::Or(l, r) => Some((Op::Or, l, r)),
            Formula::Imp(l, r) => Some((Op::Imp, l, r)),
            Formula::Star(l, r) => Some((Op::Star, l, r)),
            Formula::Wand(l, r) => Some((Op::Wand, l, r)),
            _ => None,
        }
    }
}

/// Parses a formula; the whole input must be consumed.
pub fn parse_formula(text: &str) -> Result<Formula, ParseError> {
    let mut p = Parser::new(text);
    let f = p.formula()?;
    p.expect_end()?;
    Ok(f)
}

/// Renders with minimal parentheses, inverse to [`parse_formula`].
pub fn print_formula(f: &Formula) -> String {
    let mut out = String::new();
    write_formula(&mut out, f, None, Side::Root);
    out
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_formula(self))
    }
}

impl fmt::Debug for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_formula(self))
    }
}

#[derive(Copy, Clone, PartialEq, Eq, Debug)]
enum Op {
    And,
    Or,
    Star,
    Imp,
    Wand,
}

impl Op {
    fn prec(self) -> u8 {
        match self {
            Op::And | Op::Or | Op::Star => 2,
            Op::Imp | Op::Wand => 1,
        }
    }

    fn token(self) -> &'static str {
        match self {
            Op::And => "/\\",
            Op::Or => "\\/",
            Op::Star => "*",
            Op::Imp => "->",
            Op::Wand => "--*",
        }
    }

    fn left_assoc(self) -> bool {
        self.prec() == 2
    }
}

#[derive(Copy, Clone, PartialEq, Eq)]
enum Side {
    Root,
    Left,
    Right,
}

fn write_formula(out: &mut String, f: &Formula, parent: Option<Op>, side: Side) {
    match f.binop() {
        None => {
            let s = match f {
                Formula::Atom(name) => name,
                Formula::Top => "top",
                Formula::Bot => "bot",
                Formula::MTop => "emp",
                _ => unreachable!(),
            };
            out.push_str(s);
        }
        Some((op, l, r)) => {
            let parens = match parent {
                None => false,
                Some(p) => {
                    if op.prec() < p.prec() {
                        true
                    } else if op.prec() > p.prec() {
                        false
                    } else if op != p {
                        // same level, distinct connective: always disambiguate
                        true
                    } else {
                        // self-chain: parens only on the non-associating side
                        match side {
                            Side::Left => !op.left_assoc(),
                            Side::Right => op.left_assoc(),
                            Side::Root => false,
                        }
                    }
                }
            };
            if parens {
                out.push('(');
            }
            write_formula(out, l, Some(op), Side::Left);
            out.push(' ');
            out.push_str(op.token());
            out.push(' ');
            write_formula(out, r, Some(op), Side::Right);
            if parens {
                out.push(')');
            }
        }
    }
}

/// Syntax error with a 0-based byte offset into the input.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at byte {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

impl ParseError {
    fn new(offset: usize, message: impl Into<String>) -> ParseError {
        ParseError { offset, message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Token {
    Ident(String),
    Op(Op2),
    LParen,
    RParen,
    Semi,
    Comma,
    Turnstile,
}

#[derive(Debug, Copy, Clone, PartialEq, Eq)]
pub(crate) enum Op2 {
    And,
    Or,
    Star,
    Imp,
    Wand,
}

impl Op2 {
    fn op(self) -> Op {
        match self {
            Op2::And => Op::And,
            Op2::Or => Op::Or,
            Op2::Star => Op::Star,
            Op2::Imp => Op::Imp,
            Op2::Wand => Op::Wand,
        }
    }
}

pub(crate) struct Parser<'a> {
    input: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    pub(crate) fn new(text: &'a str) -> Parser<'a> {
        Parser { input: text.as_bytes(), pos: 0 }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.input.len() && self.input[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    /// Byte offset of the next token.
    pub(crate) fn offset(&mut self) -> usize {
        self.skip_ws();
        self.pos
    }

    pub(crate) fn peek(&mut self) -> Result<Option<Token>, ParseError> {
        let save = self.pos;
        let t = self.next_token()?;
        self.pos = save;
        Ok(t)
    }

    pub(crate) fn next_token(&mut self) -> Result<Option<Token>, ParseError> {
        self.skip_ws();
        if self.pos >= self.input.len() {
            return Ok(None);
        }
        let start = self.pos;
        let b = self.input[self.pos];
        let tok = match b {
            b'(' => {
                self.pos += 1;
                Token::LParen
            }
            b')' => {
                self.pos += 1;
                Token::RParen
            }
            b';' => {
                self.pos += 1;
                Token::Semi
            }
            b',' => {
                self.pos += 1;
                Token::Comma
            }
            b'*' => {
                self.pos += 1;
                Token::Op(Op2::Star)
            }
            b'/' => {
                if self.input.get(self.pos + 1) == Some(&b'\\') {
                    self.pos += 2;
                    Token::Op(Op2::And)
                } else {
                    return Err(ParseError::new(start, "expected `/\\`"));
                }
            }
            b'\\' => {
                if self.input.get(self.pos + 1) == Some(&b'/') {
                    self.pos += 2;
                    Token::Op(Op2::Or)
                } else {
                    return Err(ParseError::new(start, "expected `\\/`"));
                }
            }
            b'-' => {
                if self.input.get(self.pos + 1) == Some(&b'>') {
                    self.pos += 2;
                    Token::Op(Op2::Imp)
                } else if self.input.get(self.pos + 1) == Some(&b'-')
                    && self.input.get(self.pos + 2) == Some(&b'*')
                {
                    self.pos += 3;
                    Token::Op(Op2::Wand)
                } else if self.input.get(self.pos + 1) == Some(&b'*') {
                    self.pos += 2;
                    Token::Op(Op2::Wand)
                } else {
                    return Err(ParseError::new(start, "expected `->`, `--*` or `-*`"));
                }
            }
            b'|' => {
                if self.input.get(self.pos + 1) == Some(&b'-') {
                    self.pos += 2;
                    Token::Turnstile
                } else {
                    return Err(ParseError::new(start, "expected `|-`"));
                }
            }
            b'a'..=b'z' => {
                let mut end = self.pos + 1;
                while end < self.input.len()
                    && (self.input[end].is_ascii_lowercase()
                        || self.input[end].is_ascii_digit()
                        || self.input[end] == b'_')
                {
                    end += 1;
                }
                let name = std::str::from_utf8(&self.input[self.pos..end]).unwrap().to_string();
                self.pos = end;
                Token::Ident(name)
            }
            _ => {
                return Err(ParseError::new(start, format!("unexpected character `{}`", b as char)))
            }
        };
        Ok(Some(tok))
    }

    pub(crate) fn expect_end(&mut self) -> Result<(), ParseError> {
        let off = self.offset();
        match self.peek()? {
            None => Ok(()),
            Some(_) => Err(ParseError::new(off, "trailing input")),
        }
    }

    /// Formula at the `->`/`--*` level (the whole formula grammar).
    pub(crate) fn formula(&mut self) -> Result<Formula, ParseError> {
        let first = self.formula_primary()?;
        self.formula_with_first(first)
    }

    /// Continues formula parsing after an already-parsed first primary.
    pub(crate) fn formula_with_first(&mut self, first: Formula) -> Result<Formula, ParseError> {
        let lhs = self.formula_chain(2, first)?;
        self.formula_chain(1, lhs)
    }

    /// Parses an operator chain at precedence `level` (1 = implications,
    /// 2 = `/\ \/ *`), starting from an already-parsed first item.
    fn formula_chain(&mut self, level: u8, first: Formula) -> Result<Formula, ParseError> {
        let mut items = vec![first];
        let mut chain_op: Option<Op> = None;
        loop {
            let off = self.offset();
            match self.peek()? {
                Some(Token::Op(o2)) if o2.op().prec() == level => {
                    let op = o2.op();
                    match chain_op {
                        None => chain_op = Some(op),
                        Some(prev) if prev == op => {}
                        Some(prev) => {
                            return Err(ParseError::new(
                                off,
                                format!(
                                    "ambiguous mix of `{}` and `{}` at the same precedence; parenthesize",
                                    prev.token(),
                                    op.token()
                                ),
                            ));
                        }
                    }
                    self.next_token()?;
                    let item = {
                        let p = self.formula_primary()?;
                        if level == 2 {
                            p
                        } else {
                            self.formula_chain(2, p)?
                        }
                    };
                    items.push(item);
                }
                _ => break,
            }
        }
        let op = match chain_op {
            None => return Ok(items.pop().unwrap()),
            Some(op) => op,
        };
        let build = |op: Op, l: Formula, r: Formula| match op {
            Op::And => Formula::and(l, r),
            Op::Or => Formula::or(l, r),
            Op::Star => Formula::star(l, r),
            Op::Imp => Formula::imp(l, r),
            Op::Wand => Formula::wand(l, r),
        };
        if op.left_assoc() {
            let mut it = items.into_iter();
            let mut acc = it.next().unwrap();
            for x in it {
                acc = build(op, acc, x);
            }
            Ok(acc)
        } else {
            let mut it = items.into_iter().rev();
            let mut acc = it.next().unwrap();
            for x in it {
                acc = build(op, x, acc);
            }
            Ok(acc)
        }
    }

    fn formula_primary(&mut self) -> Result<Formula, ParseError> {
        let off = self.offset();
        match self.next_token()? {
            Some(Token::Ident(name)) => match name.as_str() {
                "top" => Ok(Formula::Top),
                "bot" => Ok(Formula::Bot),
                "emp" => Ok(Formula::MTop),
                _ => Ok(Formula::Atom(Arc::from(name.as_str()))),
            },
            Some(Token::LParen) => {
                let f = self.formula()?;
                let off2 = self.offset();
                match self.next_token()? {
                    Some(Token::RParen) => Ok(f),
                    _ => Err(ParseError::new(off2, "expected `)`")),
                }
            }
            _ => Err(ParseError::new(off, "expected a formula")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Formula {
        parse_formula(s).unwrap()
    }

    #[test]
    fn precedence_groups() {
        assert_eq!(
            p("p /\\ q -> r"),
            Formula::imp(Formula::and(Formula::atom("p"), Formula::atom("q")), Formula::atom("r"))
        );
        assert_eq!(p("emp"), Formula::MTop);
        assert_eq!(
            p("p * q * r"),
            Formula::star(
                Formula::star(Formula::atom("p"), Formula::atom("q")),
                Formula::atom("r")
            )
        );
    }

    #[test]
    fn implications_right_associate() {
        assert_eq!(
            p("p -> q -> r"),
            Formula::imp(Formula::atom("p"), Formula::imp(Formula::atom("q"), Formula::atom("r")))
        );
        assert_eq!(p("p --* q --* r"), p("p --* (q --* r)"));
        assert_eq!(p("p -* q"), p("p --* q"));
    }

    #[test]
    fn same_group_mixing_rejected() {
        assert!(parse_formula("p /\\ q \\/ r").is_err());
        assert!(parse_formula("p * q /\\ r").is_err());
        assert!(parse_formula("p -> q --* r").is_err());
        assert!(parse_formula("p /\\ (q \\/ r)").is_ok());
    }

    #[test]
    fn error_offsets() {
        let err = parse_formula("p /\\ q \\/ r").unwrap_err();
        assert_eq!(err.offset, 7);
        let err = parse_formula("p @ q").unwrap_err();
        assert_eq!(err.offset, 2);
    }

    #[test]
    fn printing_minimal_parens() {
        assert_eq!(print_formula(&p("p /\\ q")), "p /\\ q");
        assert_eq!(print_formula(&Formula::imp(p("p /\\ q"), p("r"))), "p /\\ q -> r");
        assert_eq!(
            print_formula(&Formula::star(p("p"), Formula::star(p("q"), p("r")))),
            "p * (q * r)"
        );
        assert_eq!(print_formula(&Formula::and(p("p"), p("q \\/ r"))), "p /\\ (q \\/ r)");
        assert_eq!(print_formula(&Formula::imp(p("p -> q"), p("r"))), "(p -> q) -> r");
    }

    #[test]
    fn formula_size() {
        assert_eq!(p("p").size(), 1);
        assert_eq!(p("emp").size(), 1);
        assert_eq!(p("p * q --* r").size(), 5);
        assert_eq!(p("p /\\ q").size(), 3);
    }
}
