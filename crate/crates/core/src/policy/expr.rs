//! Compact infix syntax for policies, used on the command line:
//!
//! ```text
//! (age gte 18) and ((university eq "TU Delft") or (issuer eq me))
//! ```
//!
//! Parentheses around a single rule are optional, so `age gte 18 and
//! level eq gold` is accepted too.
//!
//! `and` binds tighter than `or`; runs of the same operator nest to the
//! right. Literals are integers, decimals, `YYYY-MM-DD` dates, quoted
//! strings, or bare words (taken as strings). Operators may be written as
//! keywords or as `= != < <= > >=`.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{AttributeRule, BranchOp, Operator, PolicyNode};
use crate::value::{Date, Value};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("policy expression error at offset {position}: {reason}")]
pub struct ExprError {
    pub position: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Open,
    Close,
    Word(String),
    Quoted(String),
    Sym(Operator),
}

fn tokenize(src: &str) -> Result<Vec<(usize, Tok)>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'(' => {
                out.push((i, Tok::Open));
                i += 1;
            }
            b')' => {
                out.push((i, Tok::Close));
                i += 1;
            }
            b'"' => {
                let start = i;
                i += 1;
                let mut s = String::new();
                loop {
                    match src[i..].chars().next() {
                        None => {
                            return Err(ExprError {
                                position: start,
                                reason: "unterminated string".into(),
                            })
                        }
                        Some('"') => {
                            i += 1;
                            break;
                        }
                        Some('\\') => {
                            let esc = src[i + 1..].chars().next().ok_or(ExprError {
                                position: i,
                                reason: "dangling escape".into(),
                            })?;
                            s.push(esc);
                            i += 1 + esc.len_utf8();
                        }
                        Some(ch) => {
                            s.push(ch);
                            i += ch.len_utf8();
                        }
                    }
                }
                out.push((start, Tok::Quoted(s)));
            }
            b'=' | b'!' | b'<' | b'>' => {
                let two = bytes.get(i + 1) == Some(&b'=');
                let op = match (c, two) {
                    (b'=', true) | (b'=', false) => Operator::Eq,
                    (b'!', true) => Operator::Neq,
                    (b'<', false) => Operator::Lt,
                    (b'<', true) => Operator::Lte,
                    (b'>', false) => Operator::Gt,
                    (b'>', true) => Operator::Gte,
                    _ => {
                        return Err(ExprError {
                            position: i,
                            reason: "unexpected '!'".into(),
                        })
                    }
                };
                out.push((i, Tok::Sym(op)));
                i += if two { 2 } else { 1 };
            }
            _ => {
                let start = i;
                while let Some(ch) = src[i..].chars().next() {
                    if ch.is_whitespace() || "()\"=!<>".contains(ch) {
                        break;
                    }
                    i += ch.len_utf8();
                }
                if i == start {
                    // non-ASCII whitespace
                    i += src[i..].chars().next().map_or(1, char::len_utf8);
                    continue;
                }
                out.push((start, Tok::Word(src[start..i].into())));
            }
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(o, _)| *o)
    }

    fn err<T>(&self, reason: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError {
            position: self.offset(),
            reason: reason.into(),
        })
    }

    fn keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Word(w)) if w.eq_ignore_ascii_case(kw))
    }

    fn expr(&mut self) -> Result<PolicyNode, ExprError> {
        let mut terms = Vec::from([self.conj()?]);
        while self.keyword("or") {
            self.pos += 1;
            terms.push(self.conj()?);
        }
        Ok(fold_right(terms, BranchOp::Or))
    }

    fn conj(&mut self) -> Result<PolicyNode, ExprError> {
        let mut terms = Vec::from([self.atom()?]);
        while self.keyword("and") {
            self.pos += 1;
            terms.push(self.atom()?);
        }
        Ok(fold_right(terms, BranchOp::And))
    }

    fn at_rule(&self) -> bool {
        matches!(self.peek(), Some(Tok::Word(_)))
            && match self.toks.get(self.pos + 1).map(|(_, t)| t) {
                Some(Tok::Sym(_)) => true,
                Some(Tok::Word(w)) => Operator::from_keyword(&w.to_ascii_lowercase()).is_some(),
                _ => false,
            }
    }

    fn atom(&mut self) -> Result<PolicyNode, ExprError> {
        if self.at_rule() {
            return self.rule();
        }
        if self.peek() != Some(&Tok::Open) {
            return self.err("expected '(' or a rule");
        }
        self.pos += 1;
        let node = if self.at_rule() { self.rule()? } else { self.expr()? };
        if self.peek() != Some(&Tok::Close) {
            return self.err("expected ')'");
        }
        self.pos += 1;
        Ok(node)
    }

    fn rule(&mut self) -> Result<PolicyNode, ExprError> {
        let start = self.offset();
        let Some(Tok::Word(attr)) = self.peek().cloned() else {
            return self.err("expected attribute name");
        };
        self.pos += 1;
        let operator = match self.peek().cloned() {
            Some(Tok::Sym(op)) => op,
            Some(Tok::Word(w)) => match Operator::from_keyword(&w.to_ascii_lowercase()) {
                Some(op) => op,
                None => return self.err(format!("unknown operator {w:?}")),
            },
            _ => return self.err("expected operator"),
        };
        self.pos += 1;
        let value = match self.peek().cloned() {
            Some(Tok::Quoted(s)) => Value::Str(s),
            Some(Tok::Word(w)) => literal(&w),
            _ => return self.err("expected value"),
        };
        self.pos += 1;
        let rule = AttributeRule {
            attribute: attr,
            operator,
            value,
        };
        rule.validate().map_err(|e| ExprError {
            position: start,
            reason: e.to_string(),
        })?;
        Ok(PolicyNode::Leaf(rule))
    }
}

fn literal(word: &str) -> Value {
    if let Some(d) = Date::parse(word) {
        return Value::Date(d);
    }
    if let Ok(i) = word.parse::<i64>() {
        return Value::Int(i);
    }
    let numeric_start = word.starts_with(|c: char| c.is_ascii_digit() || c == '-' || c == '.');
    if numeric_start {
        if let Ok(f) = word.parse::<f64>() {
            if f.is_finite() {
                return Value::Decimal(f);
            }
        }
    }
    Value::Str(word.into())
}

fn fold_right(mut terms: Vec<PolicyNode>, op: BranchOp) -> PolicyNode {
    let mut acc = terms.pop().expect("at least one term");
    while let Some(t) = terms.pop() {
        acc = PolicyNode::branch(op, t, acc);
    }
    acc
}

pub fn parse_expr(src: &str) -> Result<PolicyNode, ExprError> {
    let toks = tokenize(src)?;
    let mut p = Parser {
        toks,
        pos: 0,
        end: src.len(),
    };
    let node = p.expr()?;
    if p.pos != p.toks.len() {
        return p.err("trailing input");
    }
    Ok(node)
}

/// Fully parenthesized rendering; `parse_expr(format_expr(n)) == n`.
pub fn format_expr(node: &PolicyNode) -> String {
    match node {
        PolicyNode::Leaf(rule) => format!(
            "({} {} {})",
            rule.attribute,
            rule.operator.keyword(),
            format_literal(&rule.value)
        ),
        PolicyNode::Branch { op, left, right } => {
            let side = |n: &PolicyNode| match n {
                PolicyNode::Leaf(_) => format_expr(n),
                PolicyNode::Branch { .. } => format!("({})", format_expr(n)),
            };
            format!("{} {} {}", side(left), op.keyword(), side(right))
        }
    }
}

fn format_literal(v: &Value) -> String {
    match v {
        Value::Str(s) if is_bare_word(s) => s.clone(),
        Value::Str(s) => {
            let mut out = String::from("\"");
            for ch in s.chars() {
                if ch == '"' || ch == '\\' {
                    out.push('\\');
                }
                out.push(ch);
            }
            out.push('"');
            out
        }
        Value::Decimal(d) => {
            let s = v.to_string();
            if s.contains(['.', 'e', 'E']) || !d.is_finite() {
                s
            } else {
                format!("{s}.0")
            }
        }
        other => other.to_string(),
    }
}

fn is_bare_word(s: &str) -> bool {
    !s.is_empty()
        && !s.chars().any(|c| c.is_whitespace() || "()\"=!<>\\".contains(c))
        && matches!(literal(s), Value::Str(_))
        && Operator::from_keyword(&s.to_ascii_lowercase()).is_none()
        && !s.eq_ignore_ascii_case("and")
        && !s.eq_ignore_ascii_case("or")
}
