//! Index and angle expressions used inside circuit documents.
//!
//! Both grammars share one tokenizer and one precedence-climbing parser:
//! unary minus binds tighter than `*`, `/`, `//`, `%`, which bind tighter
//! than `+` and `-`. Index expressions are integer-valued (floor division,
//! modulo with the sign of the divisor); angle expressions are real-valued
//! and may reference `inputs[..]`, `weights[.., ..]` and the constant `pi`.

use std::fmt;

use thiserror::Error;

/// Identifiers that can never name a loop variable.
pub const RESERVED: &[&str] = &["pi", "inputs", "weights", "n_qubits"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message} (at character {offset} of `{source_text}`)")]
pub struct ExprError {
    pub message: String,
    /// Byte offset inside the expression text.
    pub offset: usize,
    pub source_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Mod => "%",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div | BinOp::Mod => 2,
        }
    }
}

/// Integer expression over literals and loop variables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IndexExpr {
    Lit(i64),
    Var(String),
    Neg(Box<IndexExpr>),
    Bin(BinOp, Box<IndexExpr>, Box<IndexExpr>),
}

/// Real expression over literals, `pi`, loop variables, inputs and weights.
#[derive(Debug, Clone, PartialEq)]
pub enum AngleExpr {
    Lit(f64),
    Pi,
    /// A loop variable used as a number (substituted during unrolling).
    Var(String),
    Input(IndexExpr),
    Weight(Vec<IndexExpr>),
    Neg(Box<AngleExpr>),
    Bin(BinOp, Box<AngleExpr>, Box<AngleExpr>),
}

impl From<i64> for IndexExpr {
    fn from(v: i64) -> Self {
        IndexExpr::Lit(v)
    }
}

impl From<f64> for AngleExpr {
    fn from(v: f64) -> Self {
        AngleExpr::Lit(v)
    }
}

/// Integer division rounding toward negative infinity.
pub fn floor_div(a: i64, b: i64) -> Option<i64> {
    if b == 0 {
        return None;
    }
    let q = a.checked_div(b)?;
    if (a % b != 0) && ((a < 0) != (b < 0)) {
        Some(q - 1)
    } else {
        Some(q)
    }
}

/// Modulo whose result takes the sign of the divisor.
pub fn floor_mod(a: i64, b: i64) -> Option<i64> {
    if b == 0 {
        return None;
    }
    let r = a.checked_rem(b)?;
    if r != 0 && ((r < 0) != (b < 0)) {
        Some(r + b)
    } else {
        Some(r)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("division by zero in `{0}`")]
    DivisionByZero(String),
    #[error("integer overflow in `{0}`")]
    Overflow(String),
}

impl IndexExpr {
    pub fn var(name: &str) -> Self {
        IndexExpr::Var(name.to_string())
    }

    pub fn eval(&self, lookup: &dyn Fn(&str) -> Option<i64>) -> Result<i64, EvalError> {
        match self {
            IndexExpr::Lit(v) => Ok(*v),
            IndexExpr::Var(name) => {
                lookup(name).ok_or_else(|| EvalError::UnknownVariable(name.clone()))
            }
            IndexExpr::Neg(inner) => inner
                .eval(lookup)?
                .checked_neg()
                .ok_or_else(|| EvalError::Overflow(self.to_string())),
            IndexExpr::Bin(op, a, b) => {
                let (x, y) = (a.eval(lookup)?, b.eval(lookup)?);
                let out = match op {
                    BinOp::Add => x.checked_add(y),
                    BinOp::Sub => x.checked_sub(y),
                    BinOp::Mul => x.checked_mul(y),
                    BinOp::Div | BinOp::Mod if y == 0 => {
                        return Err(EvalError::DivisionByZero(self.to_string()))
                    }
                    BinOp::Div => floor_div(x, y),
                    BinOp::Mod => floor_mod(x, y),
                };
                out.ok_or_else(|| EvalError::Overflow(self.to_string()))
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            IndexExpr::Bin(op, ..) => op.precedence(),
            IndexExpr::Neg(_) => 3,
            _ => 4,
        }
    }
}

impl AngleExpr {
    pub fn input(index: IndexExpr) -> Self {
        AngleExpr::Input(index)
    }

    pub fn weight(indices: Vec<IndexExpr>) -> Self {
        AngleExpr::Weight(indices)
    }

    fn precedence(&self) -> u8 {
        match self {
            AngleExpr::Bin(op, ..) => op.precedence(),
            AngleExpr::Neg(_) => 3,
            _ => 4,
        }
    }
}

fn write_operand<T: fmt::Display>(
    f: &mut fmt::Formatter<'_>,
    operand: &T,
    operand_prec: u8,
    min_prec: u8,
) -> fmt::Result {
    if operand_prec < min_prec {
        write!(f, "({operand})")
    } else {
        write!(f, "{operand}")
    }
}

impl fmt::Display for IndexExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IndexExpr::Lit(v) if *v < 0 => write!(f, "({v})"),
            IndexExpr::Lit(v) => write!(f, "{v}"),
            IndexExpr::Var(name) => f.write_str(name),
            IndexExpr::Neg(inner) => {
                f.write_str("-")?;
                write_operand(f, inner.as_ref(), inner.precedence(), 4)
            }
            IndexExpr::Bin(op, a, b) => {
                let p = op.precedence();
                write_operand(f, a.as_ref(), a.precedence(), p)?;
                write!(f, " {} ", op.symbol())?;
                // left-associative: the right operand needs strictly higher precedence
                write_operand(f, b.as_ref(), b.precedence(), p + 1)
            }
        }
    }
}

// Debug formatting is the shortest representation that round-trips.
fn fmt_real(v: f64) -> String {
    format!("{v:?}")
}

impl fmt::Display for AngleExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AngleExpr::Lit(v) if v.is_sign_negative() => write!(f, "({})", fmt_real(*v)),
            AngleExpr::Lit(v) => f.write_str(&fmt_real(*v)),
            AngleExpr::Pi => f.write_str("pi"),
            AngleExpr::Var(name) => f.write_str(name),
            AngleExpr::Input(idx) => write!(f, "inputs[{idx}]"),
            AngleExpr::Weight(idx) => {
                f.write_str("weights[")?;
                for (k, i) in idx.iter().enumerate() {
                    if k > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{i}")?;
                }
                f.write_str("]")
            }
            AngleExpr::Neg(inner) => {
                f.write_str("-")?;
                write_operand(f, inner.as_ref(), inner.precedence(), 4)
            }
            AngleExpr::Bin(op, a, b) => {
                let p = op.precedence();
                write_operand(f, a.as_ref(), a.precedence(), p)?;
                write!(f, " {} ", op.symbol())?;
                write_operand(f, b.as_ref(), b.precedence(), p + 1)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Tokenizer and parser

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Int(i64),
    Real(f64),
    Ident(String),
    Op(BinOp),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
}

struct Lexer<'a> {
    src: &'a str,
    toks: Vec<(Tok, usize)>,
}

impl<'a> Lexer<'a> {
    fn run(src: &'a str) -> Result<Vec<(Tok, usize)>, ExprError> {
        let mut lx = Lexer {
            src,
            toks: Vec::new(),
        };
        let bytes = src.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            let c = bytes[i] as char;
            let start = i;
            match c {
                ' ' | '\t' | '\n' | '\r' => {
                    i += 1;
                    continue;
                }
                '+' => lx.push(Tok::Op(BinOp::Add), start),
                '-' => lx.push(Tok::Op(BinOp::Sub), start),
                '*' => lx.push(Tok::Op(BinOp::Mul), start),
                '%' => lx.push(Tok::Op(BinOp::Mod), start),
                '/' => {
                    // `//` is accepted as a spelling of integer division
                    if bytes.get(i + 1) == Some(&b'/') {
                        i += 1;
                    }
                    lx.push(Tok::Op(BinOp::Div), start)
                }
                '(' => lx.push(Tok::LParen, start),
                ')' => lx.push(Tok::RParen, start),
                '[' => lx.push(Tok::LBracket, start),
                ']' => lx.push(Tok::RBracket, start),
                ',' => lx.push(Tok::Comma, start),
                '0'..='9' | '.' => {
                    i = lx.number(start)?;
                    continue;
                }
                c if c.is_ascii_alphabetic() || c == '_' => {
                    while i < bytes.len()
                        && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
                    {
                        i += 1;
                    }
                    lx.push(Tok::Ident(src[start..i].to_string()), start);
                    continue;
                }
                _ => {
                    let ch = src[start..].chars().next().unwrap_or('?');
                    return Err(lx.error(format!("unexpected character `{ch}`"), start));
                }
            }
            i += 1;
        }
        Ok(lx.toks)
    }

    fn push(&mut self, tok: Tok, at: usize) {
        self.toks.push((tok, at));
    }

    fn error(&self, message: String, offset: usize) -> ExprError {
        ExprError {
            message,
            offset,
            source_text: self.src.to_string(),
        }
    }

    fn number(&mut self, start: usize) -> Result<usize, ExprError> {
        let bytes = self.src.as_bytes();
        let mut i = start;
        let mut is_real = false;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'.' {
            is_real = true;
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
                is_real = true;
                i = j;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
        }
        let text = &self.src[start..i];
        if text == "." {
            return Err(self.error("malformed number `.`".into(), start));
        }
        let tok = if is_real {
            Tok::Real(
                text.parse()
                    .map_err(|_| self.error(format!("malformed number `{text}`"), start))?,
            )
        } else {
            Tok::Int(
                text.parse()
                    .map_err(|_| self.error(format!("integer `{text}` out of range"), start))?,
            )
        };
        self.push(tok, start);
        Ok(i)
    }
}

/// Untyped parse tree; converted to [`IndexExpr`] or [`AngleExpr`] afterwards
/// so that context-specific mistakes get precise messages.
#[derive(Debug, Clone)]
enum Raw {
    Int(i64),
    Real(f64, usize),
    Ident(String, usize),
    Subscript(String, Vec<Raw>, usize),
    Neg(Box<Raw>),
    Bin(BinOp, Box<Raw>, Box<Raw>, usize),
}

struct Parser<'a> {
    src: &'a str,
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Result<Self, ExprError> {
        Ok(Parser {
            src,
            toks: Lexer::run(src)?,
            pos: 0,
        })
    }

    fn error(&self, message: impl Into<String>, offset: usize) -> ExprError {
        ExprError {
            message: message.into(),
            offset,
            source_text: self.src.to_string(),
        }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn here(&self) -> usize {
        self.toks
            .get(self.pos)
            .map(|(_, o)| *o)
            .unwrap_or(self.src.len())
    }

    fn parse_all(&mut self) -> Result<Raw, ExprError> {
        if self.toks.is_empty() {
            return Err(self.error("empty expression", 0));
        }
        let e = self.expr(1)?;
        if let Some((tok, at)) = self.toks.get(self.pos) {
            return Err(self.error(format!("unexpected {}", describe(tok)), *at));
        }
        Ok(e)
    }

    fn expr(&mut self, min_prec: u8) -> Result<Raw, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Op(op)) if op.precedence() >= min_prec => *op,
                _ => break,
            };
            let at = self.here();
            self.pos += 1;
            let rhs = self.expr(op.precedence() + 1)?;
            lhs = Raw::Bin(op, Box::new(lhs), Box::new(rhs), at);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Raw, ExprError> {
        if let Some(Tok::Op(BinOp::Sub)) = self.peek() {
            self.pos += 1;
            let inner = self.unary()?;
            return Ok(Raw::Neg(Box::new(inner)));
        }
        if let Some(Tok::Op(BinOp::Add)) = self.peek() {
            self.pos += 1;
            return self.unary();
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Raw, ExprError> {
        let at = self.here();
        let Some((tok, _)) = self.toks.get(self.pos).cloned() else {
            return Err(self.error("unexpected end of expression", at));
        };
        self.pos += 1;
        match tok {
            Tok::Int(v) => Ok(Raw::Int(v)),
            Tok::Real(v) => Ok(Raw::Real(v, at)),
            Tok::LParen => {
                let e = self.expr(1)?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if let Some(Tok::LBracket) = self.peek() {
                    self.pos += 1;
                    let mut args = vec![self.expr(1)?];
                    while let Some(Tok::Comma) = self.peek() {
                        self.pos += 1;
                        args.push(self.expr(1)?);
                    }
                    self.expect(Tok::RBracket, "`]`")?;
                    Ok(Raw::Subscript(name, args, at))
                } else {
                    Ok(Raw::Ident(name, at))
                }
            }
            other => Err(self.error(format!("unexpected {}", describe(&other)), at)),
        }
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ExprError> {
        match self.toks.get(self.pos) {
            Some((t, _)) if *t == want => {
                self.pos += 1;
                Ok(())
            }
            Some((t, at)) => Err(self.error(format!("expected {what}, found {}", describe(t)), *at)),
            None => Err(self.error(format!("expected {what} before end of expression"), self.src.len())),
        }
    }
}

fn describe(tok: &Tok) -> String {
    match tok {
        Tok::Int(v) => format!("number `{v}`"),
        Tok::Real(v) => format!("number `{v}`"),
        Tok::Ident(s) => format!("identifier `{s}`"),
        Tok::Op(op) => format!("operator `{}`", op.symbol()),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::LBracket => "`[`".into(),
        Tok::RBracket => "`]`".into(),
        Tok::Comma => "`,`".into(),
    }
}

fn raw_to_index(raw: Raw, p: &Parser<'_>) -> Result<IndexExpr, ExprError> {
    Ok(match raw {
        Raw::Int(v) => IndexExpr::Lit(v),
        Raw::Real(v, at) => {
            return Err(p.error(format!("index expressions must be integers, found `{v}`"), at))
        }
        Raw::Ident(name, at) => match name.as_str() {
            "pi" | "inputs" | "weights" => {
                return Err(p.error(format!("`{name}` cannot be used in an index expression"), at))
            }
            _ => IndexExpr::Var(name),
        },
        Raw::Subscript(name, _, at) => {
            return Err(p.error(format!("`{name}[..]` cannot be used in an index expression"), at))
        }
        Raw::Neg(inner) => IndexExpr::Neg(Box::new(raw_to_index(*inner, p)?)),
        Raw::Bin(op, a, b, _) => IndexExpr::Bin(
            op,
            Box::new(raw_to_index(*a, p)?),
            Box::new(raw_to_index(*b, p)?),
        ),
    })
}

fn raw_to_angle(raw: Raw, p: &Parser<'_>) -> Result<AngleExpr, ExprError> {
    Ok(match raw {
        Raw::Int(v) => AngleExpr::Lit(v as f64),
        Raw::Real(v, _) => AngleExpr::Lit(v),
        Raw::Ident(name, at) => match name.as_str() {
            "pi" => AngleExpr::Pi,
            "inputs" | "weights" => {
                return Err(p.error(format!("`{name}` must be indexed, e.g. `{name}[0]`"), at))
            }
            _ => AngleExpr::Var(name),
        },
        Raw::Subscript(name, args, at) => match name.as_str() {
            "inputs" => {
                if args.len() != 1 {
                    return Err(p.error(
                        format!("`inputs` takes exactly one index, found {}", args.len()),
                        at,
                    ));
                }
                let idx = args.into_iter().next().expect("one index");
                AngleExpr::Input(raw_to_index(idx, p)?)
            }
            "weights" => AngleExpr::Weight(
                args.into_iter()
                    .map(|a| raw_to_index(a, p))
                    .collect::<Result<_, _>>()?,
            ),
            other => {
                return Err(p.error(
                    format!("unknown array `{other}`; only `inputs` and `weights` can be indexed"),
                    at,
                ))
            }
        },
        Raw::Neg(inner) => AngleExpr::Neg(Box::new(raw_to_angle(*inner, p)?)),
        Raw::Bin(BinOp::Mod, _, _, at) => {
            return Err(p.error("`%` is only allowed in index expressions", at))
        }
        Raw::Bin(op, a, b, _) => AngleExpr::Bin(
            op,
            Box::new(raw_to_angle(*a, p)?),
            Box::new(raw_to_angle(*b, p)?),
        ),
    })
}

pub fn parse_index(src: &str) -> Result<IndexExpr, ExprError> {
    let mut p = Parser::new(src)?;
    let raw = p.parse_all()?;
    raw_to_index(raw, &p)
}

pub fn parse_angle(src: &str) -> Result<AngleExpr, ExprError> {
    let mut p = Parser::new(src)?;
    let raw = p.parse_all()?;
    raw_to_angle(raw, &p)
}
