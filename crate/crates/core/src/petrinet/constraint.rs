//! Data constraints: boolean expressions over case variables.
//!
//! Grammar:
//!
//! ```text
//! or   := and ("or" and)*
//! and  := not ("and" not)*
//! not  := "not" not | cmp
//! cmp  := atom (("==" | "!=" | "<" | "<=" | ">" | ">=") atom)?
//! atom := integer | decimal | "string" | true | false | ident | "(" or ")"
//! ```
//!
//! Integers and decimals compare numerically with each other; every other
//! comparison needs operands of the same type, and ordering is not defined
//! for booleans.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use rust_decimal::Decimal;
use thiserror::Error;

use super::value::{Value, ValueType};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConstraintError {
    #[error("parse error at {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("undeclared variable `{0}`")]
    UndeclaredVariable(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Lit(Value),
    Var(String),
    Not(Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Cmp(CmpOp, Box<Expr>, Box<Expr>),
}

/// A parsed constraint together with its source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstraintExpr {
    source: String,
    expr: Expr,
}

impl ConstraintExpr {
    pub fn parse(source: &str) -> Result<Self, ConstraintError> {
        let tokens = tokenize(source)?;
        let mut parser = Parser { tokens, pos: 0 };
        let expr = parser.or_expr()?;
        if let Some((pos, tok)) = parser.tokens.get(parser.pos) {
            return Err(ConstraintError::Parse { pos: *pos, msg: format!("unexpected {tok:?}") });
        }
        Ok(Self { source: source.to_string(), expr })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    /// Static check against declared variable types; the expression must be boolean.
    pub fn type_check(&self, decls: &BTreeMap<String, ValueType>) -> Result<(), ConstraintError> {
        match type_of(&self.expr, decls)? {
            Ty::Bool => Ok(()),
            other => Err(ConstraintError::TypeMismatch(format!(
                "constraint `{}` has type {other:?}, expected boolean",
                self.source
            ))),
        }
    }

    pub fn evaluate(&self, values: &BTreeMap<String, Value>) -> Result<bool, ConstraintError> {
        match eval(&self.expr, values)? {
            Value::Boolean(b) => Ok(b),
            other => Err(ConstraintError::TypeMismatch(format!(
                "constraint `{}` evaluated to {other}",
                self.source
            ))),
        }
    }
}

impl fmt::Display for ConstraintExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

/// Evaluates `constraint` against `values`.
pub fn evaluate(constraint: &ConstraintExpr, values: &BTreeMap<String, Value>) -> Result<bool, ConstraintError> {
    constraint.evaluate(values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ty {
    Num,
    Str,
    Bool,
}

fn ty_of_value(t: ValueType) -> Ty {
    match t {
        ValueType::Integer | ValueType::Decimal => Ty::Num,
        ValueType::String => Ty::Str,
        ValueType::Boolean => Ty::Bool,
    }
}

fn type_of(expr: &Expr, decls: &BTreeMap<String, ValueType>) -> Result<Ty, ConstraintError> {
    match expr {
        Expr::Lit(v) => Ok(ty_of_value(v.value_type())),
        Expr::Var(name) => decls
            .get(name)
            .map(|t| ty_of_value(*t))
            .ok_or_else(|| ConstraintError::UndeclaredVariable(name.clone())),
        Expr::Not(inner) => expect_bool(type_of(inner, decls)?, "not"),
        Expr::And(a, b) | Expr::Or(a, b) => {
            expect_bool(type_of(a, decls)?, "and/or")?;
            expect_bool(type_of(b, decls)?, "and/or")
        }
        Expr::Cmp(op, a, b) => {
            let (ta, tb) = (type_of(a, decls)?, type_of(b, decls)?);
            if ta != tb {
                return Err(ConstraintError::TypeMismatch(format!("{ta:?} {op} {tb:?}")));
            }
            if ta == Ty::Bool && !matches!(op, CmpOp::Eq | CmpOp::Ne) {
                return Err(ConstraintError::TypeMismatch(format!("ordering {op} on booleans")));
            }
            Ok(Ty::Bool)
        }
    }
}

fn expect_bool(t: Ty, ctx: &str) -> Result<Ty, ConstraintError> {
    if t == Ty::Bool {
        Ok(Ty::Bool)
    } else {
        Err(ConstraintError::TypeMismatch(format!("`{ctx}` needs boolean operands, got {t:?}")))
    }
}

fn eval(expr: &Expr, values: &BTreeMap<String, Value>) -> Result<Value, ConstraintError> {
    Ok(match expr {
        Expr::Lit(v) => v.clone(),
        Expr::Var(name) => values
            .get(name)
            .cloned()
            .ok_or_else(|| ConstraintError::UndeclaredVariable(name.clone()))?,
        Expr::Not(inner) => Value::Boolean(!as_bool(eval(inner, values)?)?),
        Expr::And(a, b) => {
            let lhs = as_bool(eval(a, values)?)?;
            let rhs = as_bool(eval(b, values)?)?;
            Value::Boolean(lhs && rhs)
        }
        Expr::Or(a, b) => {
            let lhs = as_bool(eval(a, values)?)?;
            let rhs = as_bool(eval(b, values)?)?;
            Value::Boolean(lhs || rhs)
        }
        Expr::Cmp(op, a, b) => {
            let (va, vb) = (eval(a, values)?, eval(b, values)?);
            let ord = compare(&va, &vb, *op)?;
            Value::Boolean(match op {
                CmpOp::Eq => ord == Ordering::Equal,
                CmpOp::Ne => ord != Ordering::Equal,
                CmpOp::Lt => ord == Ordering::Less,
                CmpOp::Le => ord != Ordering::Greater,
                CmpOp::Gt => ord == Ordering::Greater,
                CmpOp::Ge => ord != Ordering::Less,
            })
        }
    })
}

fn as_bool(v: Value) -> Result<bool, ConstraintError> {
    match v {
        Value::Boolean(b) => Ok(b),
        other => Err(ConstraintError::TypeMismatch(format!("expected boolean, got {other}"))),
    }
}

fn numeric(v: &Value) -> Option<Decimal> {
    match v {
        Value::Integer(i) => Some(Decimal::from(*i)),
        Value::Decimal(d) => Some(*d),
        _ => None,
    }
}

fn compare(a: &Value, b: &Value, op: CmpOp) -> Result<Ordering, ConstraintError> {
    match (a, b) {
        (Value::Integer(x), Value::Integer(y)) => Ok(x.cmp(y)),
        (Value::String(x), Value::String(y)) => Ok(x.as_bytes().cmp(y.as_bytes())),
        (Value::Boolean(x), Value::Boolean(y)) if matches!(op, CmpOp::Eq | CmpOp::Ne) => Ok(x.cmp(y)),
        _ => match (numeric(a), numeric(b)) {
            (Some(x), Some(y)) => Ok(x.cmp(&y)),
            _ => Err(ConstraintError::TypeMismatch(format!("cannot compare {a} {op} {b}"))),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(i64),
    Dec(Decimal),
    Str(String),
    Op(CmpOp),
    LParen,
    RParen,
}

fn tokenize(src: &str) -> Result<Vec<(usize, Tok)>, ConstraintError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let err = |pos: usize, msg: &str| ConstraintError::Parse { pos, msg: msg.to_string() };
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'(' => {
                out.push((start, Tok::LParen));
                i += 1;
            }
            b')' => {
                out.push((start, Tok::RParen));
                i += 1;
            }
            b'=' | b'!' | b'<' | b'>' => {
                let next_eq = bytes.get(i + 1) == Some(&b'=');
                let op = match (c, next_eq) {
                    (b'=', true) => CmpOp::Eq,
                    (b'!', true) => CmpOp::Ne,
                    (b'<', true) => CmpOp::Le,
                    (b'>', true) => CmpOp::Ge,
                    (b'<', false) => CmpOp::Lt,
                    (b'>', false) => CmpOp::Gt,
                    _ => return Err(err(start, "expected `==` or `!=`")),
                };
                i += if next_eq { 2 } else { 1 };
                out.push((start, Tok::Op(op)));
            }
            b'"' => {
                i += 1;
                let mut s = String::new();
                loop {
                    match bytes.get(i) {
                        None => return Err(err(start, "unterminated string")),
                        Some(b'"') => {
                            i += 1;
                            break;
                        }
                        Some(b'\\') => {
                            match bytes.get(i + 1) {
                                Some(b'"') => s.push('"'),
                                Some(b'\\') => s.push('\\'),
                                _ => return Err(err(i, "bad escape")),
                            }
                            i += 2;
                        }
                        Some(_) => {
                            let ch = src[i..].chars().next().expect("in bounds");
                            s.push(ch);
                            i += ch.len_utf8();
                        }
                    }
                }
                out.push((start, Tok::Str(s)));
            }
            b'-' | b'0'..=b'9' => {
                i += 1;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                let text = &src[start..i];
                if text == "-" {
                    return Err(err(start, "dangling minus"));
                }
                let tok = if text.contains('.') {
                    Tok::Dec(text.parse::<Decimal>().map_err(|_| err(start, "bad decimal"))?.normalize())
                } else {
                    Tok::Int(text.parse::<i64>().map_err(|_| err(start, "bad integer"))?)
                };
                out.push((start, tok));
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((start, Tok::Ident(src[start..i].to_string())));
            }
            _ => return Err(err(start, "unexpected character")),
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(usize, Tok)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s == kw)
    }

    fn end_pos(&self) -> usize {
        self.tokens.get(self.pos).map(|(p, _)| *p).unwrap_or(usize::MAX)
    }

    fn or_expr(&mut self) -> Result<Expr, ConstraintError> {
        let mut lhs = self.and_expr()?;
        while self.at_keyword("or") {
            self.pos += 1;
            let rhs = self.and_expr()?;
            lhs = Expr::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Expr, ConstraintError> {
        let mut lhs = self.not_expr()?;
        while self.at_keyword("and") {
            self.pos += 1;
            let rhs = self.not_expr()?;
            lhs = Expr::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn not_expr(&mut self) -> Result<Expr, ConstraintError> {
        if self.at_keyword("not") {
            self.pos += 1;
            return Ok(Expr::Not(Box::new(self.not_expr()?)));
        }
        self.cmp_expr()
    }

    fn cmp_expr(&mut self) -> Result<Expr, ConstraintError> {
        let lhs = self.atom()?;
        if let Some(Tok::Op(op)) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.atom()?;
            return Ok(Expr::Cmp(op, Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn atom(&mut self) -> Result<Expr, ConstraintError> {
        let pos = self.end_pos();
        let tok = self
            .peek()
            .cloned()
            .ok_or(ConstraintError::Parse { pos, msg: "unexpected end of input".into() })?;
        self.pos += 1;
        match tok {
            Tok::Int(i) => Ok(Expr::Lit(Value::Integer(i))),
            Tok::Dec(d) => Ok(Expr::Lit(Value::Decimal(d))),
            Tok::Str(s) => Ok(Expr::Lit(Value::String(s))),
            Tok::Ident(s) => match s.as_str() {
                "true" => Ok(Expr::Lit(Value::Boolean(true))),
                "false" => Ok(Expr::Lit(Value::Boolean(false))),
                "and" | "or" | "not" => Err(ConstraintError::Parse { pos, msg: format!("unexpected keyword `{s}`") }),
                _ => Ok(Expr::Var(s)),
            },
            Tok::LParen => {
                let inner = self.or_expr()?;
                match self.peek() {
                    Some(Tok::RParen) => {
                        self.pos += 1;
                        Ok(inner)
                    }
                    _ => Err(ConstraintError::Parse { pos: self.end_pos(), msg: "expected `)`".into() }),
                }
            }
            other => Err(ConstraintError::Parse { pos, msg: format!("unexpected {other:?}") }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vals(pairs: &[(&str, Value)]) -> BTreeMap<String, Value> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    fn eval_src(src: &str, values: &BTreeMap<String, Value>) -> Result<bool, ConstraintError> {
        ConstraintExpr::parse(src)?.evaluate(values)
    }

    #[test]
    fn literal_true() {
        assert_eq!(eval_src("true", &BTreeMap::new()), Ok(true));
    }

    #[test]
    fn boundary_le() {
        let v = vals(&[("x", Value::Integer(10))]);
        assert_eq!(eval_src("x <= 10", &v), Ok(true));
        assert_eq!(eval_src("x < 10", &v), Ok(false));
    }

    // Hand-evaluated table for `(x > 0) and (status == "open")`.
    #[test]
    fn conjunction_table() {
        let src = r#"(x > 0) and (status == "open")"#;
        let cases = [
            (1, "open", true),
            (0, "open", false),
            (1, "closed", false),
            (-3, "closed", false),
        ];
        for (x, status, expected) in cases {
            let v = vals(&[("x", Value::Integer(x)), ("status", Value::String(status.into()))]);
            assert_eq!(eval_src(src, &v), Ok(expected), "x={x} status={status}");
        }
    }

    #[test]
    fn precedence_not_and_or() {
        let v = vals(&[("a", Value::Boolean(true)), ("b", Value::Boolean(false))]);
        // not binds tighter than and, and tighter than or
        assert_eq!(eval_src("not a or b", &v), Ok(false));
        assert_eq!(eval_src("a or b and false", &v), Ok(true));
        assert_eq!(eval_src("not (a and b)", &v), Ok(true));
        assert_eq!(eval_src("a == true and b != true", &v), Ok(true));
    }

    #[test]
    fn mixed_numeric_comparison() {
        let v = vals(&[("amount", Value::parse_decimal("9.99").unwrap())]);
        assert_eq!(eval_src("amount < 10", &v), Ok(true));
        assert_eq!(eval_src("amount >= 9.990", &v), Ok(true));
        assert_eq!(eval_src("amount > -1", &v), Ok(true));
    }

    #[test]
    fn errors() {
        assert!(matches!(
            eval_src("y > 1", &BTreeMap::new()),
            Err(ConstraintError::UndeclaredVariable(_))
        ));
        let v = vals(&[("s", Value::String("a".into()))]);
        assert!(matches!(eval_src("s > 1", &v), Err(ConstraintError::TypeMismatch(_))));
        assert!(matches!(eval_src("true < false", &v), Err(ConstraintError::TypeMismatch(_))));
        assert!(matches!(ConstraintExpr::parse("(x > 1"), Err(ConstraintError::Parse { .. })));
        assert!(matches!(ConstraintExpr::parse("x = 1"), Err(ConstraintError::Parse { .. })));
        assert!(matches!(ConstraintExpr::parse("x > 1 y"), Err(ConstraintError::Parse { .. })));
        assert!(matches!(ConstraintExpr::parse("\"open"), Err(ConstraintError::Parse { .. })));
    }

    #[test]
    fn type_check_against_declarations() {
        let decls: BTreeMap<String, ValueType> =
            [("x".to_string(), ValueType::Integer), ("ok".to_string(), ValueType::Boolean)].into();
        assert!(ConstraintExpr::parse("x <= 10 and ok").unwrap().type_check(&decls).is_ok());
        assert!(ConstraintExpr::parse("x").unwrap().type_check(&decls).is_err());
        assert!(ConstraintExpr::parse("x == \"a\"").unwrap().type_check(&decls).is_err());
        assert!(ConstraintExpr::parse("z == 1").unwrap().type_check(&decls).is_err());
    }

    #[test]
    fn string_escapes_and_unicode() {
        let v = vals(&[("s", Value::String("é\"q".into()))]);
        assert_eq!(eval_src(r#"s == "é\"q""#, &v), Ok(true));
    }
}
