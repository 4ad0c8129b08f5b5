//! Boolean predicates over a single sample value `x`.
//!
//! ```text
//! or      := and ("or" and)*
//! and     := primary ("and" primary)*
//! primary := "(" or ")" | operand cmp operand
//! operand := "x" | number
//! cmp     := "<" | "<=" | ">" | ">=" | "==" | "!="
//! ```

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparator {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl Comparator {
    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
            Comparator::Eq => "==",
            Comparator::Ne => "!=",
        }
    }

    pub fn apply(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Comparator::Lt => lhs < rhs,
            Comparator::Le => lhs <= rhs,
            Comparator::Gt => lhs > rhs,
            Comparator::Ge => lhs >= rhs,
            Comparator::Eq => lhs == rhs,
            Comparator::Ne => lhs != rhs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Operand {
    Var,
    Num(f64),
}

impl Operand {
    fn value(self, x: f64) -> f64 {
        match self {
            Operand::Var => x,
            Operand::Num(n) => n,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FilterExpr {
    Cmp(Comparator, Operand, Operand),
    And(Box<FilterExpr>, Box<FilterExpr>),
    Or(Box<FilterExpr>, Box<FilterExpr>),
}

impl FilterExpr {
    pub fn eval(&self, x: f64) -> bool {
        if x.is_nan() {
            return false;
        }
        self.eval_inner(x)
    }

    fn eval_inner(&self, x: f64) -> bool {
        match self {
            FilterExpr::Cmp(op, l, r) => op.apply(l.value(x), r.value(x)),
            FilterExpr::And(a, b) => a.eval_inner(x) && b.eval_inner(x),
            FilterExpr::Or(a, b) => a.eval_inner(x) || b.eval_inner(x),
        }
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Var => f.write_str("x"),
            Operand::Num(n) => write!(f, "{n}"),
        }
    }
}

impl fmt::Display for FilterExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FilterExpr::Cmp(op, l, r) => write!(f, "{l} {} {r}", op.symbol()),
            FilterExpr::And(a, b) => write!(f, "({a} and {b})"),
            FilterExpr::Or(a, b) => write!(f, "({a} or {b})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FilterError {
    #[error("empty filter expression")]
    Empty,
    #[error("unknown identifier {name} at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    X,
    Num(f64),
    Cmp(Comparator),
    And,
    Or,
    LParen,
    RParen,
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, FilterError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'(' => {
                out.push((Tok::LParen, start));
                i += 1;
            }
            b')' => {
                out.push((Tok::RParen, start));
                i += 1;
            }
            b'<' | b'>' | b'=' | b'!' => {
                let eq = bytes.get(i + 1) == Some(&b'=');
                let op = match (c, eq) {
                    (b'<', true) => Comparator::Le,
                    (b'<', false) => Comparator::Lt,
                    (b'>', true) => Comparator::Ge,
                    (b'>', false) => Comparator::Gt,
                    (b'=', true) => Comparator::Eq,
                    (b'!', true) => Comparator::Ne,
                    _ => {
                        return Err(FilterError::Syntax {
                            offset: start,
                            message: format!("unexpected character {:?}", c as char),
                        })
                    }
                };
                i += if eq { 2 } else { 1 };
                out.push((Tok::Cmp(op), start));
            }
            b'0'..=b'9' | b'.' | b'-' | b'+' => {
                i += 1;
                while i < bytes.len() {
                    let d = bytes[i];
                    let exp_sign =
                        (d == b'-' || d == b'+') && matches!(bytes[i - 1], b'e' | b'E');
                    if d.is_ascii_digit() || d == b'.' || d == b'e' || d == b'E' || exp_sign {
                        i += 1;
                    } else {
                        break;
                    }
                }
                let lit = &text[start..i];
                let value: f64 = lit.parse().map_err(|_| FilterError::Syntax {
                    offset: start,
                    message: format!("invalid number {lit:?}"),
                })?;
                if !value.is_finite() {
                    return Err(FilterError::Syntax {
                        offset: start,
                        message: format!("number out of range {lit:?}"),
                    });
                }
                out.push((Tok::Num(value), start));
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                let word = &text[start..i];
                let tok = match word {
                    "x" => Tok::X,
                    "and" => Tok::And,
                    "or" => Tok::Or,
                    _ => {
                        return Err(FilterError::UnknownIdentifier {
                            name: word.to_owned(),
                            offset: start,
                        })
                    }
                };
                out.push((tok, start));
            }
            _ => {
                let ch = text[start..].chars().next().unwrap_or('?');
                return Err(FilterError::Syntax {
                    offset: start,
                    message: format!("unexpected character {ch:?}"),
                });
            }
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(_, o)| *o)
    }

    fn syntax(&self, message: impl Into<String>) -> FilterError {
        FilterError::Syntax {
            offset: self.offset(),
            message: message.into(),
        }
    }

    fn or(&mut self) -> Result<FilterExpr, FilterError> {
        let mut lhs = self.and()?;
        while self.peek() == Some(&Tok::Or) {
            self.pos += 1;
            let rhs = self.and()?;
            lhs = FilterExpr::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<FilterExpr, FilterError> {
        let mut lhs = self.primary()?;
        while self.peek() == Some(&Tok::And) {
            self.pos += 1;
            let rhs = self.primary()?;
            lhs = FilterExpr::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn primary(&mut self) -> Result<FilterExpr, FilterError> {
        if self.peek() == Some(&Tok::LParen) {
            self.pos += 1;
            let inner = self.or()?;
            if self.peek() != Some(&Tok::RParen) {
                return Err(self.syntax("expected ')'"));
            }
            self.pos += 1;
            return Ok(inner);
        }
        let lhs = self.operand()?;
        let op = match self.peek() {
            Some(Tok::Cmp(op)) => *op,
            _ => return Err(self.syntax("expected a comparison operator")),
        };
        self.pos += 1;
        let rhs = self.operand()?;
        Ok(FilterExpr::Cmp(op, lhs, rhs))
    }

    fn operand(&mut self) -> Result<Operand, FilterError> {
        let op = match self.peek() {
            Some(Tok::X) => Operand::Var,
            Some(Tok::Num(n)) => Operand::Num(*n),
            _ => return Err(self.syntax("expected x or a number")),
        };
        self.pos += 1;
        Ok(op)
    }
}

pub fn parse_filter(text: &str) -> Result<FilterExpr, FilterError> {
    if text.trim().is_empty() {
        return Err(FilterError::Empty);
    }
    let toks = lex(text)?;
    let mut parser = Parser {
        toks,
        pos: 0,
        end: text.len(),
    };
    let expr = parser.or()?;
    if parser.pos != parser.toks.len() {
        return Err(parser.syntax("unexpected trailing input"));
    }
    Ok(expr)
}

pub fn eval_filter(filter: &FilterExpr, value: f64) -> bool {
    filter.eval(value)
}
