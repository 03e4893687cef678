//! Text format for knowledge bases.
//!
//! One formula per line: `weight | clause`, where weight is a decimal number
//! or `inf` for a hard constraint. Clauses use `!` (negation), `&`
//! (conjunction) and `->` (implication, right-associative), with `!` binding
//! tightest. Atom arguments starting with a lowercase letter are variables;
//! anything else is a constant. Blank lines and `#` comments are skipped.

use crate::error::{Error, Result};
use crate::mln::{Clause, Formula, PredicateDecl, PredicateKind, Term, Weight};

/// A parsed knowledge base: inferred predicate declarations plus formulas.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    pub predicates: Vec<PredicateDecl>,
    pub formulas: Vec<Formula>,
}

/// Predicates with fixed built-in meanings; everything else parses as a
/// query predicate.
const EVIDENCE_PREDS: &[(&str, usize)] =
    &[("Room", 1), ("Corr", 1), ("Hall", 1), ("Adj", 2), ("Irr", 2)];

pub fn parse_kb(text: &str) -> Result<KnowledgeBase> {
    let mut formulas = Vec::new();
    let mut predicates: Vec<PredicateDecl> = Vec::new();
    let mut offset = 0usize;
    for line in text.split_inclusive('\n') {
        let line_start = offset;
        offset += line.len();
        let body = line.trim_end_matches('\n');
        let content = match body.find('#') {
            Some(i) => &body[..i],
            None => body,
        };
        if content.trim().is_empty() {
            continue;
        }
        let (weight_text, clause_text) = content.split_once('|').ok_or_else(|| {
            Error::format("expected `weight | clause`", line_start)
        })?;
        let weight = parse_weight(weight_text.trim(), line_start)?;
        let clause_offset = line_start + weight_text.len() + 1;
        let clause = Parser::new(clause_text, clause_offset).parse_clause_complete()?;
        register_predicates(&clause, &mut predicates, line_start)?;
        formulas.push(Formula { weight, clause });
    }
    Ok(KnowledgeBase { predicates, formulas })
}

fn parse_weight(text: &str, offset: usize) -> Result<Weight> {
    if text.eq_ignore_ascii_case("inf") {
        return Ok(Weight::Hard);
    }
    let w: f64 = text
        .parse()
        .map_err(|_| Error::format(format!("invalid weight `{text}`"), offset))?;
    if !w.is_finite() {
        return Err(Error::format(
            "soft weights must be finite; use `inf` for hard formulas",
            offset,
        ));
    }
    Ok(Weight::Soft(w))
}

fn register_predicates(
    clause: &Clause,
    predicates: &mut Vec<PredicateDecl>,
    offset: usize,
) -> Result<()> {
    let mut result = Ok(());
    let mut check = |pred: &str, args: &[Term]| {
        if result.is_err() {
            return;
        }
        let builtin = EVIDENCE_PREDS.iter().find(|(n, _)| *n == pred);
        let (arity, kind) = match builtin {
            Some(&(_, a)) => (a, PredicateKind::Evidence),
            None => (args.len(), PredicateKind::Query),
        };
        if args.len() != arity {
            result = Err(Error::format(
                format!("predicate {pred} used with {} arguments, expected {arity}", args.len()),
                offset,
            ));
            return;
        }
        match predicates.iter().find(|d| d.name == pred) {
            Some(existing) if existing.arity != args.len() => {
                result = Err(Error::format(
                    format!(
                        "predicate {pred} used with {} arguments, earlier with {}",
                        args.len(),
                        existing.arity
                    ),
                    offset,
                ));
            }
            Some(_) => {}
            None => predicates.push(PredicateDecl::new(pred, arity, kind)),
        }
    };
    walk_atoms(clause, &mut check);
    result
}

fn walk_atoms(clause: &Clause, f: &mut impl FnMut(&str, &[Term])) {
    match clause {
        Clause::Atom { pred, args } => f(pred, args),
        Clause::Not(c) => walk_atoms(c, f),
        Clause::And(a, b) | Clause::Implies(a, b) => {
            walk_atoms(a, f);
            walk_atoms(b, f);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    Bang,
    Amp,
    Arrow,
    LParen,
    RParen,
    Comma,
}

struct Parser {
    tokens: Vec<(Token, usize)>,
    pos: usize,
    end_offset: usize,
}

impl Parser {
    fn new(text: &str, base_offset: usize) -> Parser {
        let mut tokens = Vec::new();
        let bytes = text.as_bytes();
        let mut i = 0usize;
        while i < bytes.len() {
            let at = base_offset + i;
            match bytes[i] {
                b' ' | b'\t' | b'\r' => i += 1,
                b'!' => {
                    tokens.push((Token::Bang, at));
                    i += 1;
                }
                b'&' => {
                    tokens.push((Token::Amp, at));
                    i += 1;
                }
                b'(' => {
                    tokens.push((Token::LParen, at));
                    i += 1;
                }
                b')' => {
                    tokens.push((Token::RParen, at));
                    i += 1;
                }
                b',' => {
                    tokens.push((Token::Comma, at));
                    i += 1;
                }
                b'-' if i + 1 < bytes.len() && bytes[i + 1] == b'>' => {
                    tokens.push((Token::Arrow, at));
                    i += 2;
                }
                c if c.is_ascii_alphanumeric() || c == b'_' => {
                    let start = i;
                    while i < bytes.len()
                        && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                    {
                        i += 1;
                    }
                    tokens.push((Token::Ident(text[start..i].to_string()), at));
                }
                c => {
                    // Poison token: surface the error lazily from parse.
                    tokens.push((Token::Ident(format!("\u{0}{}", c as char)), at));
                    i += 1;
                }
            }
        }
        Parser { tokens, pos: 0, end_offset: base_offset + text.len() }
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map(|(_, o)| *o).unwrap_or(self.end_offset)
    }

    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(t, _)| t)
    }

    fn advance(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).map(|(t, _)| t.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn parse_clause_complete(mut self) -> Result<Clause> {
        let clause = self.parse_implication()?;
        if let Some(t) = self.peek() {
            return Err(Error::format(format!("unexpected token {t:?}"), self.offset()));
        }
        Ok(clause)
    }

    fn parse_implication(&mut self) -> Result<Clause> {
        let left = self.parse_conjunction()?;
        if self.peek() == Some(&Token::Arrow) {
            self.advance();
            let right = self.parse_implication()?;
            return Ok(Clause::implies(left, right));
        }
        Ok(left)
    }

    fn parse_conjunction(&mut self) -> Result<Clause> {
        let mut left = self.parse_unary()?;
        while self.peek() == Some(&Token::Amp) {
            self.advance();
            let right = self.parse_unary()?;
            left = Clause::and(left, right);
        }
        Ok(left)
    }

    fn parse_unary(&mut self) -> Result<Clause> {
        let at = self.offset();
        match self.advance() {
            Some(Token::Bang) => Ok(Clause::not(self.parse_unary()?)),
            Some(Token::LParen) => {
                let inner = self.parse_implication()?;
                match self.advance() {
                    Some(Token::RParen) => Ok(inner),
                    _ => Err(Error::format("expected `)`", self.offset())),
                }
            }
            Some(Token::Ident(name)) if !name.starts_with('\u{0}') => self.parse_atom(name, at),
            Some(Token::Ident(poison)) => Err(Error::format(
                format!("unexpected character `{}`", &poison[1..]),
                at,
            )),
            other => Err(Error::format(format!("expected atom, got {other:?}"), at)),
        }
    }

    fn parse_atom(&mut self, pred: String, at: usize) -> Result<Clause> {
        if !pred.chars().next().is_some_and(|c| c.is_ascii_uppercase()) {
            return Err(Error::format(
                format!("predicate name `{pred}` must start with an uppercase letter"),
                at,
            ));
        }
        if self.advance() != Some(Token::LParen) {
            return Err(Error::format(format!("expected `(` after {pred}"), self.offset()));
        }
        let mut args = Vec::new();
        loop {
            let at = self.offset();
            match self.advance() {
                Some(Token::Ident(name)) if !name.starts_with('\u{0}') => {
                    let first = name.chars().next().unwrap();
                    if first.is_ascii_lowercase() {
                        args.push(Term::Var(name));
                    } else {
                        args.push(Term::Const(name));
                    }
                }
                _ => return Err(Error::format("expected argument name", at)),
            }
            match self.advance() {
                Some(Token::Comma) => continue,
                Some(Token::RParen) => break,
                _ => return Err(Error::format("expected `,` or `)`", self.offset())),
            }
        }
        Ok(Clause::Atom { pred, args })
    }
}
