//! Formula language: cell addresses, the expression tree, a recursive-descent
//! parser, a canonical printer and static reference extraction.
//!
//! Precedence, loosest first: comparison, additive, multiplicative, unary
//! minus, `^` (right associative). Unlike Excel, `-3^2` is `-(3^2)`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::value::format_number;

pub const MAX_COL: u32 = 16_384;
pub const MAX_ROW: u32 = 1_048_576;

/// Absolute cell address. Columns use bijective base-26 (`A` = 1, `AA` = 27).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CellAddr {
    pub col: u32,
    pub row: u32,
}

impl CellAddr {
    pub fn new(col: u32, row: u32) -> Option<Self> {
        ((1..=MAX_COL).contains(&col) && (1..=MAX_ROW).contains(&row)).then_some(Self { col, row })
    }
}

// Row-major ordering, which is also the iteration order of ranges.
impl Ord for CellAddr {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.row, self.col).cmp(&(other.row, other.col))
    }
}

impl PartialOrd for CellAddr {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

pub fn column_name(mut col: u32) -> String {
    let mut out = Vec::new();
    while col > 0 {
        let rem = (col - 1) % 26;
        out.push(b'A' + rem as u8);
        col = (col - 1) / 26;
    }
    out.reverse();
    String::from_utf8(out).expect("ascii")
}

impl fmt::Display for CellAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", column_name(self.col), self.row)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid cell address `{0}`")]
pub struct AddrError(pub String);

/// Parses `[A-Z]+[1-9][0-9]*` within the sheet bounds.
pub fn parse_addr(text: &str) -> Result<CellAddr, AddrError> {
    let err = || AddrError(text.to_string());
    let bytes = text.as_bytes();
    let letters = bytes.iter().take_while(|b| b.is_ascii_uppercase()).count();
    let digits = &bytes[letters..];
    if letters == 0 || digits.is_empty() || digits[0] == b'0' || !digits.iter().all(u8::is_ascii_digit) {
        return Err(err());
    }
    let mut col: u64 = 0;
    for &b in &bytes[..letters] {
        col = col * 26 + u64::from(b - b'A' + 1);
        if col > u64::from(MAX_COL) {
            return Err(err());
        }
    }
    let mut row: u64 = 0;
    for &b in digits {
        row = row * 10 + u64::from(b - b'0');
        if row > u64::from(MAX_ROW) {
            return Err(err());
        }
    }
    CellAddr::new(col as u32, row as u32).ok_or_else(err)
}

impl FromStr for CellAddr {
    type Err = AddrError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_addr(s)
    }
}

/// Rectangular range; corners are normalized so `top_left <= bottom_right`
/// component-wise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RangeAddr {
    pub top_left: CellAddr,
    pub bottom_right: CellAddr,
}

impl RangeAddr {
    pub fn new(a: CellAddr, b: CellAddr) -> Self {
        Self {
            top_left: CellAddr { col: a.col.min(b.col), row: a.row.min(b.row) },
            bottom_right: CellAddr { col: a.col.max(b.col), row: a.row.max(b.row) },
        }
    }

    pub fn single(addr: CellAddr) -> Self {
        Self { top_left: addr, bottom_right: addr }
    }

    pub fn width(&self) -> u32 {
        self.bottom_right.col - self.top_left.col + 1
    }

    pub fn height(&self) -> u32 {
        self.bottom_right.row - self.top_left.row + 1
    }

    pub fn contains(&self, addr: CellAddr) -> bool {
        (self.top_left.col..=self.bottom_right.col).contains(&addr.col)
            && (self.top_left.row..=self.bottom_right.row).contains(&addr.row)
    }

    pub fn intersects(&self, other: &RangeAddr) -> bool {
        self.top_left.col <= other.bottom_right.col
            && other.top_left.col <= self.bottom_right.col
            && self.top_left.row <= other.bottom_right.row
            && other.top_left.row <= self.bottom_right.row
    }

    /// Cells in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = CellAddr> + '_ {
        let (c0, c1) = (self.top_left.col, self.bottom_right.col);
        (self.top_left.row..=self.bottom_right.row).flat_map(move |row| (c0..=c1).map(move |col| CellAddr { col, row }))
    }
}

impl fmt::Display for RangeAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.top_left, self.bottom_right)
    }
}

impl FromStr for RangeAddr {
    type Err = AddrError;

    /// Accepts `A3:C22` or a single address.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            Some((a, b)) => Ok(RangeAddr::new(parse_addr(a)?, parse_addr(b)?)),
            None => parse_addr(s).map(RangeAddr::single),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Pow => "^",
            BinaryOp::Eq => "=",
            BinaryOp::Ne => "<>",
            BinaryOp::Lt => "<",
            BinaryOp::Le => "<=",
            BinaryOp::Gt => ">",
            BinaryOp::Ge => ">=",
        }
    }

    pub fn is_comparison(self) -> bool {
        matches!(self, BinaryOp::Eq | BinaryOp::Ne | BinaryOp::Lt | BinaryOp::Le | BinaryOp::Gt | BinaryOp::Ge)
    }

    fn precedence(self) -> u8 {
        match self {
            _ if self.is_comparison() => PREC_CMP,
            BinaryOp::Add | BinaryOp::Sub => PREC_ADD,
            BinaryOp::Mul | BinaryOp::Div => PREC_MUL,
            _ => PREC_POW,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Function {
    Sum,
    Count,
    Average,
    Min,
    Max,
    If,
    And,
    Or,
    Not,
    Match,
    Abs,
    Window,
}

impl Function {
    pub const ALL: [Function; 12] = [
        Function::Sum,
        Function::Count,
        Function::Average,
        Function::Min,
        Function::Max,
        Function::If,
        Function::And,
        Function::Or,
        Function::Not,
        Function::Match,
        Function::Abs,
        Function::Window,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Function::Sum => "SUM",
            Function::Count => "COUNT",
            Function::Average => "AVERAGE",
            Function::Min => "MIN",
            Function::Max => "MAX",
            Function::If => "IF",
            Function::And => "AND",
            Function::Or => "OR",
            Function::Not => "NOT",
            Function::Match => "MATCH",
            Function::Abs => "ABS",
            Function::Window => "WINDOW",
        }
    }

    /// Case-insensitive lookup.
    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name().eq_ignore_ascii_case(name))
    }

    /// Inclusive bounds on the argument count; `None` means variadic.
    pub fn arity(self) -> (usize, Option<usize>) {
        match self {
            Function::Sum | Function::Count | Function::Average | Function::Min | Function::Max => (1, None),
            Function::And | Function::Or => (1, None),
            Function::If => (2, Some(3)),
            Function::Not | Function::Abs => (1, Some(1)),
            Function::Match | Function::Window => (2, Some(2)),
        }
    }

    pub fn is_aggregate(self) -> bool {
        matches!(self, Function::Sum | Function::Count | Function::Average | Function::Min | Function::Max)
    }
}

impl fmt::Display for Function {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Formula syntax tree. Number literals are finite and non-negative; a
/// leading minus is always a `Unary` node.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Number(f64),
    Text(String),
    Bool(bool),
    Cell(CellAddr),
    Range(RangeAddr),
    StreamAttr { stream: String, attr: String },
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Call(Function, Vec<Expr>),
}

/// Static read of a formula.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Reference {
    Cell(CellAddr),
    Range(RangeAddr),
    StreamAttr { stream: String, attr: String },
}

impl fmt::Display for Reference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reference::Cell(a) => a.fmt(f),
            Reference::Range(r) => r.fmt(f),
            Reference::StreamAttr { stream, attr } => write!(f, "{stream}.{attr}"),
        }
    }
}

impl Expr {
    /// The window declaration if this expression is a `WINDOW(stream.attr, span)` call.
    pub fn as_window(&self) -> Option<(&str, &str, u64)> {
        match self {
            Expr::Call(Function::Window, args) => match args.as_slice() {
                [Expr::StreamAttr { stream, attr }, Expr::Number(span)] => Some((stream, attr, *span as u64)),
                _ => None,
            },
            _ => None,
        }
    }
}

/// Exactly the static reads of `expr`; ranges are not flattened.
pub fn references(expr: &Expr) -> BTreeSet<Reference> {
    fn walk(expr: &Expr, out: &mut BTreeSet<Reference>) {
        match expr {
            Expr::Number(_) | Expr::Text(_) | Expr::Bool(_) => {}
            Expr::Cell(a) => {
                out.insert(Reference::Cell(*a));
            }
            Expr::Range(r) => {
                out.insert(Reference::Range(*r));
            }
            Expr::StreamAttr { stream, attr } => {
                out.insert(Reference::StreamAttr { stream: stream.clone(), attr: attr.clone() });
            }
            Expr::Unary(_, e) => walk(e, out),
            Expr::Binary(_, l, r) => {
                walk(l, out);
                walk(r, out);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| walk(a, out)),
        }
    }
    let mut out = BTreeSet::new();
    walk(expr, &mut out);
    out
}

const PREC_CMP: u8 = 1;
const PREC_ADD: u8 = 2;
const PREC_MUL: u8 = 3;
const PREC_NEG: u8 = 4;
const PREC_POW: u8 = 5;
const PREC_ATOM: u8 = 6;

fn precedence(expr: &Expr) -> u8 {
    match expr {
        Expr::Binary(op, _, _) => op.precedence(),
        Expr::Unary(..) => PREC_NEG,
        _ => PREC_ATOM,
    }
}

fn write_expr(expr: &Expr, min_prec: u8, out: &mut String) {
    let wrap = precedence(expr) < min_prec;
    if wrap {
        out.push('(');
    }
    match expr {
        Expr::Number(n) => out.push_str(&format_number(*n)),
        Expr::Text(s) => {
            out.push('"');
            out.push_str(&s.replace('"', "\"\""));
            out.push('"');
        }
        Expr::Bool(b) => out.push_str(if *b { "TRUE" } else { "FALSE" }),
        Expr::Cell(a) => out.push_str(&a.to_string()),
        Expr::Range(r) => out.push_str(&r.to_string()),
        Expr::StreamAttr { stream, attr } => {
            out.push_str(stream);
            out.push('.');
            out.push_str(attr);
        }
        Expr::Unary(UnaryOp::Neg, e) => {
            out.push('-');
            write_expr(e, PREC_NEG, out);
        }
        Expr::Binary(op, l, r) => {
            let (lp, rp) = match op.precedence() {
                PREC_CMP => (PREC_ADD, PREC_ADD),
                PREC_ADD => (PREC_ADD, PREC_MUL),
                PREC_MUL => (PREC_MUL, PREC_NEG),
                _ => (PREC_ATOM, PREC_NEG),
            };
            write_expr(l, lp, out);
            out.push_str(op.symbol());
            write_expr(r, rp, out);
        }
        Expr::Call(f, args) => {
            out.push_str(f.name());
            out.push('(');
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_expr(a, PREC_CMP, out);
            }
            out.push(')');
        }
    }
    if wrap {
        out.push(')');
    }
}

/// Canonical formula text, including the leading `=`.
pub fn format(expr: &Expr) -> String {
    let mut out = String::from("=");
    write_expr(expr, PREC_CMP, &mut out);
    out
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format(self))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("at byte {offset}: {message}")]
pub struct FormulaError {
    pub offset: usize,
    pub message: String,
}

fn err<T>(offset: usize, message: impl Into<String>) -> Result<T, FormulaError> {
    Err(FormulaError { offset, message: message.into() })
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Str(String),
    Ident(String),
    LParen,
    RParen,
    Comma,
    Colon,
    Dot,
    Op(BinaryOp),
    Eof,
}

fn lex(src: &str, base: usize) -> Result<Vec<(Tok, usize)>, FormulaError> {
    let bytes = src.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let start = i;
        let at = base + start;
        let b = bytes[i];
        let tok = match b {
            b' ' | b'\t' | b'\r' | b'\n' => {
                i += 1;
                continue;
            }
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b',' => Tok::Comma,
            b':' => Tok::Colon,
            b'.' => Tok::Dot,
            b'+' => Tok::Op(BinaryOp::Add),
            b'-' => Tok::Op(BinaryOp::Sub),
            b'*' => Tok::Op(BinaryOp::Mul),
            b'/' => Tok::Op(BinaryOp::Div),
            b'^' => Tok::Op(BinaryOp::Pow),
            b'=' => Tok::Op(BinaryOp::Eq),
            b'<' => match bytes.get(i + 1) {
                Some(b'>') => {
                    i += 1;
                    Tok::Op(BinaryOp::Ne)
                }
                Some(b'=') => {
                    i += 1;
                    Tok::Op(BinaryOp::Le)
                }
                _ => Tok::Op(BinaryOp::Lt),
            },
            b'>' => match bytes.get(i + 1) {
                Some(b'=') => {
                    i += 1;
                    Tok::Op(BinaryOp::Ge)
                }
                _ => Tok::Op(BinaryOp::Gt),
            },
            b'$' => return err(at, "`$` references are not supported; all references are absolute"),
            b'"' => {
                let mut s = String::new();
                i += 1;
                loop {
                    match src[i..].find('"') {
                        None => return err(at, "unterminated string literal"),
                        Some(j) => {
                            s.push_str(&src[i..i + j]);
                            i += j + 1;
                            if bytes.get(i) == Some(&b'"') {
                                s.push('"');
                                i += 1;
                            } else {
                                break;
                            }
                        }
                    }
                }
                toks.push((Tok::Str(s), at));
                continue;
            }
            b'0'..=b'9' => {
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if bytes.get(i) == Some(&b'.') {
                    i += 1;
                    let frac = i;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                    if i == frac {
                        return err(at, "expected digits after decimal point");
                    }
                }
                if matches!(bytes.get(i), Some(b'e' | b'E')) {
                    let mut j = i + 1;
                    if matches!(bytes.get(j), Some(b'+' | b'-')) {
                        j += 1;
                    }
                    if bytes.get(j).is_some_and(u8::is_ascii_digit) {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let n: f64 = src[start..i]
                    .parse()
                    .map_err(|_| FormulaError { offset: at, message: "malformed number".into() })?;
                if !n.is_finite() {
                    return err(at, "number out of range");
                }
                toks.push((Tok::Num(n), at));
                continue;
            }
            b if b.is_ascii_alphabetic() || b == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                toks.push((Tok::Ident(src[start..i].to_string()), at));
                continue;
            }
            _ => {
                let ch = src[i..].chars().next().unwrap_or('?');
                return err(at, format!("unexpected character `{ch}`"));
            }
        };
        toks.push((tok, at));
        i += 1;
    }
    toks.push((Tok::Eof, base + src.len()));
    Ok(toks)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    window_calls: Vec<usize>,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn peek_at(&self, n: usize) -> &Tok {
        let i = (self.pos + n).min(self.toks.len() - 1);
        &self.toks[i].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), FormulaError> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            err(self.offset(), format!("expected {what}"))
        }
    }

    fn expr(&mut self) -> Result<Expr, FormulaError> {
        let lhs = self.add()?;
        if let Tok::Op(op) = *self.peek() {
            if op.is_comparison() {
                self.bump();
                let rhs = self.add()?;
                return Ok(Expr::Binary(op, Box::new(lhs), Box::new(rhs)));
            }
        }
        Ok(lhs)
    }

    fn add(&mut self) -> Result<Expr, FormulaError> {
        let mut lhs = self.mul()?;
        while let Tok::Op(op @ (BinaryOp::Add | BinaryOp::Sub)) = *self.peek() {
            self.bump();
            let rhs = self.mul()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn mul(&mut self) -> Result<Expr, FormulaError> {
        let mut lhs = self.neg()?;
        while let Tok::Op(op @ (BinaryOp::Mul | BinaryOp::Div)) = *self.peek() {
            self.bump();
            let rhs = self.neg()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn neg(&mut self) -> Result<Expr, FormulaError> {
        if *self.peek() == Tok::Op(BinaryOp::Sub) {
            self.bump();
            let e = self.neg()?;
            return Ok(Expr::Unary(UnaryOp::Neg, Box::new(e)));
        }
        self.pow()
    }

    fn pow(&mut self) -> Result<Expr, FormulaError> {
        let base = self.atom()?;
        if *self.peek() == Tok::Op(BinaryOp::Pow) {
            self.bump();
            let exp = self.neg()?;
            return Ok(Expr::Binary(BinaryOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn cell_ref(&mut self) -> Result<CellAddr, FormulaError> {
        let at = self.offset();
        match self.bump().0 {
            Tok::Ident(name) => parse_addr(&name)
                .map_err(|_| FormulaError { offset: at, message: format!("invalid cell reference `{name}`") }),
            _ => err(at, "expected cell reference"),
        }
    }

    fn atom(&mut self) -> Result<Expr, FormulaError> {
        let at = self.offset();
        match self.bump().0 {
            Tok::Num(n) => Ok(Expr::Number(n)),
            Tok::Str(s) => Ok(Expr::Text(s)),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => match self.peek() {
                Tok::LParen => self.call(&name, at),
                Tok::Dot => {
                    err(at, format!("stream reference `{name}.…` is only allowed as the first argument of WINDOW"))
                }
                _ if name.eq_ignore_ascii_case("TRUE") => Ok(Expr::Bool(true)),
                _ if name.eq_ignore_ascii_case("FALSE") => Ok(Expr::Bool(false)),
                _ => {
                    let Ok(first) = parse_addr(&name) else {
                        return err(at, format!("unknown name `{name}`"));
                    };
                    if *self.peek() == Tok::Colon {
                        self.bump();
                        let second = self.cell_ref()?;
                        Ok(Expr::Range(RangeAddr::new(first, second)))
                    } else {
                        Ok(Expr::Cell(first))
                    }
                }
            },
            Tok::Eof => err(at, "unexpected end of formula"),
            other => err(at, format!("unexpected token {}", describe(&other))),
        }
    }

    fn stream_attr(&mut self) -> Result<Option<Expr>, FormulaError> {
        if let (Tok::Ident(stream), Tok::Dot, Tok::Ident(attr)) = (self.peek(), self.peek_at(1), self.peek_at(2)) {
            if matches!(self.peek_at(3), Tok::Comma | Tok::RParen) {
                let e = Expr::StreamAttr { stream: stream.clone(), attr: attr.clone() };
                self.pos += 3;
                return Ok(Some(e));
            }
        }
        Ok(None)
    }

    fn call(&mut self, name: &str, at: usize) -> Result<Expr, FormulaError> {
        let Some(func) = Function::from_name(name) else {
            return err(at, format!("unknown function `{name}`"));
        };
        self.expect(Tok::LParen, "`(`")?;
        let mut args = Vec::new();
        if *self.peek() != Tok::RParen {
            loop {
                let arg_at = self.offset();
                let arg = match (func, args.len()) {
                    (Function::Window, 0) => match self.stream_attr()? {
                        Some(e) => e,
                        None => {
                            return err(arg_at, "WINDOW expects a stream attribute `stream.attr` as its first argument")
                        }
                    },
                    _ => self.expr()?,
                };
                if func == Function::Window && args.len() == 1 {
                    match arg {
                        Expr::Number(n) if n >= 1.0 && n.fract() == 0.0 && n <= 9_007_199_254_740_992.0 => {}
                        _ => return err(arg_at, "WINDOW span must be a positive integer number of milliseconds"),
                    }
                }
                args.push(arg);
                match self.peek() {
                    Tok::Comma => {
                        self.bump();
                    }
                    Tok::RParen => break,
                    _ => return err(self.offset(), "expected `,` or `)`"),
                }
            }
        }
        self.expect(Tok::RParen, "`)`")?;
        let (lo, hi) = func.arity();
        if args.len() < lo || hi.is_some_and(|hi| args.len() > hi) {
            let want = match hi {
                Some(hi) if hi == lo => format!("{lo}"),
                Some(hi) => format!("{lo} to {hi}"),
                None => format!("at least {lo}"),
            };
            return err(at, format!("{func} expects {want} argument(s), got {}", args.len()));
        }
        if func == Function::Window {
            self.window_calls.push(at);
        }
        Ok(Expr::Call(func, args))
    }
}

fn describe(tok: &Tok) -> String {
    match tok {
        Tok::Num(n) => format!("number {n}"),
        Tok::Str(_) => "string".into(),
        Tok::Ident(s) => format!("`{s}`"),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::Comma => "`,`".into(),
        Tok::Colon => "`:`".into(),
        Tok::Dot => "`.`".into(),
        Tok::Op(op) => format!("`{}`", op.symbol()),
        Tok::Eof => "end of formula".into(),
    }
}

/// Parses formula text (which must start with `=`). Function names are
/// case-insensitive. WINDOW may only appear as the whole formula.
pub fn parse_formula(text: &str) -> Result<Expr, FormulaError> {
    let Some(body) = text.strip_prefix('=') else {
        return err(0, "formula must start with `=`");
    };
    let mut p = Parser { toks: lex(body, 1)?, pos: 0, window_calls: Vec::new() };
    let expr = p.expr()?;
    if *p.peek() != Tok::Eof {
        return err(p.offset(), format!("unexpected token {}", describe(p.peek())));
    }
    let root_is_window = matches!(expr, Expr::Call(Function::Window, _));
    match p.window_calls.as_slice() {
        [] => {}
        [_] if root_is_window => {}
        calls => {
            let at = if root_is_window { calls[0] } else { *calls.last().unwrap() };
            return err(at, "WINDOW must be the entire formula of its cell");
        }
    }
    Ok(expr)
}

impl FromStr for Expr {
    type Err = FormulaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_formula(s)
    }
}
