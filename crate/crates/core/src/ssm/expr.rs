//! Scalar expression language for model components.
//!
//! Grammar, lowest precedence first:
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' INTEGER)*
//! primary := NUMBER | VARIABLE | FUNCTION '(' sum ')' | '(' sum ')'
//! ```
//!
//! Variables are `x1..xn` (state) and `u1..um` (input). Exponents are
//! integer literals in `0..=8`.

use std::fmt;

use thiserror::Error;

pub const MAX_EXPONENT: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Tanh,
    Abs,
}

impl Func {
    pub const ALL: [Func; 8] = [
        Func::Sin,
        Func::Cos,
        Func::Tan,
        Func::Exp,
        Func::Log,
        Func::Sqrt,
        Func::Tanh,
        Func::Abs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Tanh => "tanh",
            Func::Abs => "abs",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Tan => v.tan(),
            Func::Exp => v.exp(),
            Func::Log => v.ln(),
            Func::Sqrt => v.sqrt(),
            Func::Tanh => v.tanh(),
            Func::Abs => v.abs(),
        }
    }
}

/// Expression AST. Variable indices are zero-based.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    State(usize),
    Input(usize),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, u32),
    Call(Func, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: expected {}, found {found}", expected.join(" or "))]
    Syntax {
        offset: usize,
        expected: Vec<&'static str>,
        found: String,
    },
    #[error("unknown function `{name}` at offset {offset}")]
    UnknownFunction { offset: usize, name: String },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { offset: usize, name: String },
    #[error("variable `{name}` at offset {offset} is out of range (dimension {dim})")]
    VariableOutOfRange {
        offset: usize,
        name: String,
        dim: usize,
    },
    #[error(
        "exponent `{text}` at offset {offset} must be an integer literal in 0..={MAX_EXPONENT}"
    )]
    BadExponent { offset: usize, text: String },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. }
            | ParseError::UnknownFunction { offset, .. }
            | ParseError::UnknownIdentifier { offset, .. }
            | ParseError::VariableOutOfRange { offset, .. }
            | ParseError::BadExponent { offset, .. } => *offset,
        }
    }
}

/// A non-finite value produced while evaluating an expression.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("subexpression `{subexpr}` evaluated to {value}")]
pub struct EvalError {
    pub subexpr: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Caret => "`^`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::End => "end of input".into(),
        }
    }
}

struct Token {
    tok: Tok,
    offset: usize,
    text: String,
}

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let single = match c {
            b'+' => Some(Tok::Plus),
            b'-' => Some(Tok::Minus),
            b'*' => Some(Tok::Star),
            b'/' => Some(Tok::Slash),
            b'^' => Some(Tok::Caret),
            b'(' => Some(Tok::LParen),
            b')' => Some(Tok::RParen),
            _ => None,
        };
        if let Some(tok) = single {
            i += 1;
            out.push(Token {
                tok,
                offset: start,
                text: src[start..i].to_string(),
            });
            continue;
        }
        if c.is_ascii_digit() || c == b'.' {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i < bytes.len() && bytes[i] == b'.' {
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text = &src[start..i];
            let value: f64 = text.parse().map_err(|_| ParseError::Syntax {
                offset: start,
                expected: vec!["number"],
                found: format!("`{text}`"),
            })?;
            out.push(Token {
                tok: Tok::Num(value),
                offset: start,
                text: text.to_string(),
            });
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident(src[start..i].to_string()),
                offset: start,
                text: src[start..i].to_string(),
            });
            continue;
        }
        let ch = src[start..].chars().next().unwrap_or('?');
        return Err(ParseError::Syntax {
            offset: start,
            expected: vec!["an operator, number, variable, function or parenthesis"],
            found: format!("`{ch}`"),
        });
    }
    out.push(Token {
        tok: Tok::End,
        offset: src.len(),
        text: String::new(),
    });
    Ok(out)
}

const OPERAND: &[&str] = &["number", "variable", "function call", "`(`", "`-`"];

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    state_dim: usize,
    input_dim: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn bump(&mut self) -> &Token {
        let t = &self.tokens[self.pos];
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn syntax(&self, expected: &[&'static str]) -> ParseError {
        let t = self.peek();
        ParseError::Syntax {
            offset: t.offset,
            expected: expected.to_vec(),
            found: t.tok.describe(),
        }
    }

    fn sum(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.product()?;
        loop {
            let op = match self.peek().tok {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.product()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn product(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek().tok {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.peek().tok == Tok::Minus {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let mut base = self.primary()?;
        while self.peek().tok == Tok::Caret {
            self.bump();
            let t = self.peek();
            let (offset, text) = (t.offset, t.text.clone());
            let exponent = match t.tok {
                Tok::Num(_) => text
                    .parse::<u32>()
                    .ok()
                    .filter(|e| *e <= MAX_EXPONENT)
                    .ok_or(ParseError::BadExponent { offset, text })?,
                Tok::End => return Err(self.syntax(&["integer exponent"])),
                _ => {
                    return Err(ParseError::BadExponent {
                        offset,
                        text: if text.is_empty() { "?".into() } else { text },
                    })
                }
            };
            self.bump();
            base = Expr::Pow(Box::new(base), exponent);
        }
        Ok(base)
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        if self.peek().tok != Tok::RParen {
            return Err(self.syntax(&["`)`", "operator"]));
        }
        self.bump();
        Ok(())
    }

    fn variable(&self, name: &str, offset: usize) -> Option<Result<Expr, ParseError>> {
        let (kind, digits) = name.split_at(1);
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let (dim, ctor): (usize, fn(usize) -> Expr) = match kind {
            "x" => (self.state_dim, Expr::State),
            "u" => (self.input_dim, Expr::Input),
            _ => return None,
        };
        let index: usize = digits.parse().unwrap_or(usize::MAX);
        Some(if index >= 1 && index <= dim {
            Ok(ctor(index - 1))
        } else {
            Err(ParseError::VariableOutOfRange {
                offset,
                name: name.to_string(),
                dim,
            })
        })
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let t = self.peek();
        let offset = t.offset;
        match t.tok.clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::Num(v))
            }
            Tok::LParen => {
                self.bump();
                let e = self.sum()?;
                self.expect_rparen()?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.bump();
                if let Some(var) = self.variable(&name, offset) {
                    return var;
                }
                if self.peek().tok != Tok::LParen {
                    return Err(ParseError::UnknownIdentifier { offset, name });
                }
                let func =
                    Func::from_name(&name).ok_or(ParseError::UnknownFunction { offset, name })?;
                self.bump();
                let arg = self.sum()?;
                self.expect_rparen()?;
                Ok(Expr::Call(func, Box::new(arg)))
            }
            _ => Err(self.syntax(OPERAND)),
        }
    }
}

/// Parses `text` against `state_dim` state and `input_dim` input variables.
pub fn parse_expr(text: &str, state_dim: usize, input_dim: usize) -> Result<Expr, ParseError> {
    let mut p = Parser {
        tokens: lex(text)?,
        pos: 0,
        state_dim,
        input_dim,
    };
    let e = p.sum()?;
    if p.peek().tok != Tok::End {
        return Err(p.syntax(&["operator", "end of input"]));
    }
    Ok(e)
}

impl Expr {
    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(op, ..) => op.precedence(),
            Expr::Neg(_) => 3,
            Expr::Pow(..) => 4,
            _ => 5,
        }
    }

    /// Largest referenced state and input counts (one-based).
    pub fn arity(&self) -> (usize, usize) {
        match self {
            Expr::Num(_) => (0, 0),
            Expr::State(i) => (i + 1, 0),
            Expr::Input(i) => (0, i + 1),
            Expr::Neg(e) | Expr::Pow(e, _) | Expr::Call(_, e) => e.arity(),
            Expr::Binary(_, a, b) => {
                let (a, b) = (a.arity(), b.arity());
                (a.0.max(b.0), a.1.max(b.1))
            }
        }
    }

    /// Evaluates without finiteness checks. Out-of-range variables read NaN.
    pub fn eval_unchecked(&self, x: &[f64], u: &[f64]) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::State(i) => x.get(*i).copied().unwrap_or(f64::NAN),
            Expr::Input(i) => u.get(*i).copied().unwrap_or(f64::NAN),
            Expr::Neg(e) => -e.eval_unchecked(x, u),
            Expr::Binary(op, a, b) => {
                let (a, b) = (a.eval_unchecked(x, u), b.eval_unchecked(x, u));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                }
            }
            Expr::Pow(e, k) => e.eval_unchecked(x, u).powi(*k as i32),
            Expr::Call(f, e) => f.apply(e.eval_unchecked(x, u)),
        }
    }

    /// Evaluates at state `x` and input `u`, reporting the innermost
    /// subexpression that produced a non-finite value.
    pub fn eval(&self, x: &[f64], u: &[f64]) -> Result<f64, EvalError> {
        let v = match self {
            Expr::Num(v) => *v,
            Expr::State(i) => x.get(*i).copied().unwrap_or(f64::NAN),
            Expr::Input(i) => u.get(*i).copied().unwrap_or(f64::NAN),
            Expr::Neg(e) => -e.eval(x, u)?,
            Expr::Binary(op, a, b) => {
                let (a, b) = (a.eval(x, u)?, b.eval(x, u)?);
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                }
            }
            Expr::Pow(e, k) => e.eval(x, u)?.powi(*k as i32),
            Expr::Call(f, e) => f.apply(e.eval(x, u)?),
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError {
                subexpr: self.to_string(),
                value: v,
            })
        }
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, e: &Expr, parens: bool) -> fmt::Result {
    if parens {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) => write!(f, "({v:?})"),
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::State(i) => write!(f, "x{}", i + 1),
            Expr::Input(i) => write!(f, "u{}", i + 1),
            Expr::Neg(e) => {
                f.write_str("-")?;
                write_child(f, e, e.precedence() < 3)
            }
            Expr::Binary(op, a, b) => {
                let p = op.precedence();
                write_child(f, a, a.precedence() < p)?;
                write!(f, " {} ", op.symbol())?;
                write_child(f, b, b.precedence() <= p)
            }
            Expr::Pow(e, k) => {
                write_child(f, e, e.precedence() < 4)?;
                write!(f, "^{k}")
            }
            Expr::Call(func, e) => write!(f, "{}({e})", func.name()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Expr {
        parse_expr(s, 3, 2).unwrap()
    }

    #[test]
    fn ungm_drift_at_origin() {
        let e = parse_expr("0.5*x1 + 25*x1/(1+x1^2)", 1, 0).unwrap();
        assert_eq!(e.eval(&[0.0], &[]).unwrap(), 0.0);
        let e = parse_expr("25*x1/(1+x1^2)", 1, 0).unwrap();
        assert_eq!(e.eval(&[1.0], &[]).unwrap(), 12.5);
    }

    #[test]
    fn simple_evaluations() {
        assert_eq!(
            parse_expr("x1+x2", 2, 0)
                .unwrap()
                .eval(&[2.0, 3.0], &[])
                .unwrap(),
            5.0
        );
        assert_eq!(
            parse_expr("sin(x1)", 1, 0)
                .unwrap()
                .eval(&[0.0], &[])
                .unwrap(),
            0.0
        );
        assert_eq!(p("2^3^2").eval(&[], &[]).unwrap(), 64.0);
        assert_eq!(p("-2^2").eval(&[], &[]).unwrap(), -4.0);
        assert_eq!(p("8 / 4 / 2").eval(&[], &[]).unwrap(), 1.0);
        assert_eq!(p("1 - 2 - 3").eval(&[], &[]).unwrap(), -4.0);
        assert_eq!(p("2 * -u2").eval(&[], &[0.0, 1.5]).unwrap(), -3.0);
        assert_eq!(p("1.5e1 + .5").eval(&[], &[]).unwrap(), 15.5);
        assert_eq!(p("abs(-x1)*x1^0").eval(&[-2.0], &[]).unwrap(), 2.0);
    }

    #[test]
    fn unclosed_call_reports_offset() {
        match parse_expr("sin(", 1, 0) {
            Err(ParseError::Syntax {
                offset, expected, ..
            }) => {
                assert_eq!(offset, 4);
                assert!(expected.contains(&"number"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn error_kinds() {
        assert!(matches!(
            parse_expr("x3", 2, 0),
            Err(ParseError::VariableOutOfRange { offset: 0, .. })
        ));
        assert!(matches!(
            parse_expr("x0", 2, 0),
            Err(ParseError::VariableOutOfRange { .. })
        ));
        assert!(matches!(
            parse_expr("u1", 2, 0),
            Err(ParseError::VariableOutOfRange { .. })
        ));
        assert!(matches!(
            parse_expr("1 + foo(x1)", 1, 0),
            Err(ParseError::UnknownFunction { offset: 4, .. })
        ));
        assert!(matches!(
            parse_expr("y + 1", 1, 0),
            Err(ParseError::UnknownIdentifier { .. })
        ));
        assert!(matches!(
            parse_expr("x1^9", 1, 0),
            Err(ParseError::BadExponent { .. })
        ));
        assert!(matches!(
            parse_expr("x1^1.5", 1, 0),
            Err(ParseError::BadExponent { .. })
        ));
        assert!(matches!(
            parse_expr("x1^x1", 1, 0),
            Err(ParseError::BadExponent { .. })
        ));
        assert!(matches!(
            parse_expr("(x1", 1, 0),
            Err(ParseError::Syntax { offset: 3, .. })
        ));
        assert!(matches!(
            parse_expr("x1 x1", 1, 0),
            Err(ParseError::Syntax { offset: 3, .. })
        ));
        assert!(matches!(
            parse_expr("x1 # 2", 1, 0),
            Err(ParseError::Syntax { offset: 3, .. })
        ));
        assert!(matches!(
            parse_expr("", 1, 0),
            Err(ParseError::Syntax { offset: 0, .. })
        ));
    }

    #[test]
    fn eval_reports_offending_subexpression() {
        let e = parse_expr("1 + log(x1 - 1)", 1, 0).unwrap();
        let err = e.eval(&[1.0], &[]).unwrap_err();
        assert_eq!(err.subexpr, "log(x1 - 1.0)");
        let e = parse_expr("x1 / (x1 - x1)", 1, 0).unwrap();
        assert!(e.eval(&[0.0], &[]).is_err());
        assert!(e.eval_unchecked(&[0.0], &[]).is_nan());
    }

    #[test]
    fn printing_is_minimal_and_reparses() {
        for (src, printed) in [
            ("(x1 + x2) * x3", "(x1 + x2) * x3"),
            ("x1 - (x2 - x3)", "x1 - (x2 - x3)"),
            ("x1 - x2 - x3", "x1 - x2 - x3"),
            ("-(x1 * x2)", "-(x1 * x2)"),
            ("(-x1)^2", "(-x1)^2"),
            ("sin(x1)^2", "sin(x1)^2"),
        ] {
            let e = p(src);
            assert_eq!(e.to_string(), printed);
            assert_eq!(p(&e.to_string()), e);
        }
    }

    #[test]
    fn arity_tracks_highest_index() {
        assert_eq!(p("x1 + 3*x3 - u2").arity(), (3, 2));
    }
}
