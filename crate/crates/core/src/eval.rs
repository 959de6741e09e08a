//! Formula evaluation over a read-only view of cells and window stores.
//!
//! Errors live in the value domain. Error arguments propagate leftmost
//! first, before any coercion failure. A window handle may only be consumed
//! by SUM, COUNT, AVERAGE, MIN and MAX; every other use yields `#VALUE!`.

use std::cmp::Ordering;

use crate::formula::{BinaryOp, CellAddr, Expr, Function, RangeAddr, UnaryOp};
use crate::value::{ErrorCode, Value, WindowId};
use crate::window::WindowStore;

pub trait EvalContext {
    /// Current value of `addr`; undefined cells are blank.
    fn cell(&self, addr: CellAddr) -> &Value;
    fn window(&self, id: WindowId) -> Option<&WindowStore>;
}

pub(crate) static BLANK: Value = Value::Blank;

type Eval<T> = Result<T, ErrorCode>;

/// Evaluates `expr` to a scalar. A `WINDOW(...)` call is only meaningful as
/// the root of a window cell and evaluates to `#VALUE!` here.
pub fn evaluate(expr: &Expr, ctx: &dyn EvalContext) -> Value {
    match scalar(expr, ctx) {
        Ok(v) => v,
        Err(e) => Value::Error(e),
    }
}

fn raw(expr: &Expr, ctx: &dyn EvalContext) -> Eval<Value> {
    Ok(match expr {
        Expr::Number(n) => Value::number(*n),
        Expr::Text(s) => Value::Text(s.clone()),
        Expr::Bool(b) => Value::Bool(*b),
        Expr::Cell(a) => ctx.cell(*a).clone(),
        Expr::Range(_) | Expr::StreamAttr { .. } => return Err(ErrorCode::Value),
        Expr::Unary(UnaryOp::Neg, e) => {
            let v = scalar(e, ctx)?;
            Value::number(-to_number(&v)?)
        }
        Expr::Binary(op, l, r) => {
            let l = scalar(l, ctx)?;
            let r = scalar(r, ctx)?;
            binary(*op, &l, &r)?
        }
        Expr::Call(f, args) => call(*f, args, ctx)?,
    })
}

/// Evaluates and rejects window handles. Error values become `Err`.
fn scalar(expr: &Expr, ctx: &dyn EvalContext) -> Eval<Value> {
    match raw(expr, ctx)? {
        Value::Error(e) => Err(e),
        Value::Window(_) => Err(ErrorCode::Value),
        v => Ok(v),
    }
}

fn to_number(v: &Value) -> Eval<f64> {
    match v {
        Value::Number(n) => Ok(*n),
        Value::Blank => Ok(0.0),
        Value::Bool(b) => Ok(if *b { 1.0 } else { 0.0 }),
        Value::Text(_) | Value::Window(_) => Err(ErrorCode::Value),
        Value::Error(e) => Err(*e),
    }
}

fn truth(v: &Value) -> Eval<bool> {
    match v {
        Value::Bool(b) => Ok(*b),
        Value::Number(n) => Ok(*n != 0.0),
        Value::Blank => Ok(false),
        Value::Text(_) | Value::Window(_) => Err(ErrorCode::Value),
        Value::Error(e) => Err(*e),
    }
}

fn finite(n: f64) -> Eval<Value> {
    match Value::number(n) {
        Value::Error(e) => Err(e),
        v => Ok(v),
    }
}

fn type_rank(v: &Value) -> u8 {
    match v {
        Value::Number(_) => 0,
        Value::Text(_) => 1,
        Value::Bool(_) => 2,
        _ => 3,
    }
}

/// Spreadsheet ordering: numbers < text < booleans; blank takes the type of
/// the other side. Text compares case-sensitively.
fn compare(l: &Value, r: &Value) -> Ordering {
    let blank_as = |other: &Value| match other {
        Value::Text(_) => Value::Text(String::new()),
        Value::Bool(_) => Value::Bool(false),
        _ => Value::Number(0.0),
    };
    let (l, r) = match (l, r) {
        (Value::Blank, Value::Blank) => return Ordering::Equal,
        (Value::Blank, other) => (blank_as(other), other.clone()),
        (other, Value::Blank) => (other.clone(), blank_as(other)),
        _ => (l.clone(), r.clone()),
    };
    match (&l, &r) {
        (Value::Number(a), Value::Number(b)) => a.partial_cmp(b).unwrap_or(Ordering::Equal),
        (Value::Text(a), Value::Text(b)) => a.cmp(b),
        (Value::Bool(a), Value::Bool(b)) => a.cmp(b),
        _ => type_rank(&l).cmp(&type_rank(&r)),
    }
}

fn binary(op: BinaryOp, l: &Value, r: &Value) -> Eval<Value> {
    if op.is_comparison() {
        let ord = compare(l, r);
        let b = match op {
            BinaryOp::Eq => ord == Ordering::Equal,
            BinaryOp::Ne => ord != Ordering::Equal,
            BinaryOp::Lt => ord == Ordering::Less,
            BinaryOp::Le => ord != Ordering::Greater,
            BinaryOp::Gt => ord == Ordering::Greater,
            _ => ord != Ordering::Less,
        };
        return Ok(Value::Bool(b));
    }
    let a = to_number(l)?;
    let b = to_number(r)?;
    match op {
        BinaryOp::Add => finite(a + b),
        BinaryOp::Sub => finite(a - b),
        BinaryOp::Mul => finite(a * b),
        BinaryOp::Div if b == 0.0 => Err(ErrorCode::Div0),
        BinaryOp::Div => finite(a / b),
        BinaryOp::Pow if a == 0.0 && b < 0.0 => Err(ErrorCode::Div0),
        BinaryOp::Pow => finite(a.powf(b)),
        _ => unreachable!("comparisons handled above"),
    }
}

#[derive(Debug, Clone, Copy)]
struct Acc {
    sum: f64,
    count: usize,
    min: f64,
    max: f64,
}

impl Acc {
    fn new() -> Self {
        Acc { sum: 0.0, count: 0, min: f64::INFINITY, max: f64::NEG_INFINITY }
    }

    fn push(&mut self, v: f64) {
        self.sum += v;
        self.count += 1;
        self.min = self.min.min(v);
        self.max = self.max.max(v);
    }

    fn merge(&mut self, w: &WindowStore) {
        if w.count() == 0 {
            return;
        }
        self.sum += w.sum();
        self.count += w.count();
        self.min = self.min.min(w.min());
        self.max = self.max.max(w.max());
    }
}

fn reference_cells(expr: &Expr) -> Option<RangeAddr> {
    match expr {
        Expr::Range(r) => Some(*r),
        Expr::Cell(a) => Some(RangeAddr::single(*a)),
        _ => None,
    }
}

fn aggregate(f: Function, args: &[Expr], ctx: &dyn EvalContext) -> Eval<Value> {
    let mut acc = Acc::new();
    for arg in args {
        match reference_cells(arg) {
            // references aggregate like ranges: only numbers and windows count
            Some(range) => {
                for addr in range.cells() {
                    match ctx.cell(addr) {
                        Value::Number(n) => acc.push(*n),
                        Value::Error(e) => return Err(*e),
                        Value::Window(id) => acc.merge(ctx.window(*id).ok_or(ErrorCode::Ref)?),
                        _ => {}
                    }
                }
            }
            None => {
                let v = scalar(arg, ctx)?;
                acc.push(to_number(&v)?);
            }
        }
    }
    match f {
        Function::Sum => finite(acc.sum),
        Function::Count => Ok(Value::Number(acc.count as f64)),
        Function::Average if acc.count == 0 => Err(ErrorCode::Div0),
        Function::Average => finite(acc.sum / acc.count as f64),
        Function::Min => Ok(Value::number(if acc.count == 0 { 0.0 } else { acc.min })),
        Function::Max => Ok(Value::number(if acc.count == 0 { 0.0 } else { acc.max })),
        _ => unreachable!("not an aggregate"),
    }
}

fn logical(f: Function, args: &[Expr], ctx: &dyn EvalContext) -> Eval<Value> {
    let mut vals = Vec::with_capacity(args.len());
    for arg in args {
        match arg {
            Expr::Range(r) => {
                for addr in r.cells() {
                    match ctx.cell(addr) {
                        v @ (Value::Number(_) | Value::Bool(_) | Value::Error(_)) => vals.push(v.clone()),
                        Value::Window(_) => vals.push(Value::Error(ErrorCode::Value)),
                        _ => {}
                    }
                }
            }
            _ => vals.push(raw(arg, ctx)?),
        }
    }
    if let Some(Value::Error(e)) = vals.iter().find(|v| v.is_error()) {
        return Err(*e);
    }
    if vals.is_empty() {
        return Err(ErrorCode::Value);
    }
    let mut result = f == Function::And;
    for v in &vals {
        let b = truth(v)?;
        if f == Function::And && !b {
            result = false;
            break;
        }
        if f == Function::Or && b {
            result = true;
            break;
        }
    }
    Ok(Value::Bool(result))
}

fn lookup(args: &[Expr], ctx: &dyn EvalContext) -> Eval<Value> {
    let needle = scalar(&args[0], ctx)?;
    let hay: Vec<Value> = match reference_cells(&args[1]) {
        Some(range) => range.cells().map(|a| ctx.cell(a).clone()).collect(),
        None => vec![scalar(&args[1], ctx)?],
    };
    if let Some(Value::Error(e)) = hay.iter().find(|v| v.is_error()) {
        return Err(*e);
    }
    if hay.iter().any(|v| matches!(v, Value::Window(_))) {
        return Err(ErrorCode::Value);
    }
    let pos = hay.iter().position(|v| match (&needle, v) {
        (Value::Number(a), Value::Number(b)) => a == b,
        (Value::Text(a), Value::Text(b)) => a == b,
        (Value::Bool(a), Value::Bool(b)) => a == b,
        _ => false,
    });
    match pos {
        Some(i) => Ok(Value::Number((i + 1) as f64)),
        None => Err(ErrorCode::NA),
    }
}

fn call(f: Function, args: &[Expr], ctx: &dyn EvalContext) -> Eval<Value> {
    match f {
        _ if f.is_aggregate() => aggregate(f, args, ctx),
        Function::If => {
            let cond = scalar(&args[0], ctx)?;
            if truth(&cond)? {
                scalar(&args[1], ctx)
            } else {
                match args.get(2) {
                    Some(e) => scalar(e, ctx),
                    None => Ok(Value::Bool(false)),
                }
            }
        }
        Function::And | Function::Or => logical(f, args, ctx),
        Function::Not => {
            let v = scalar(&args[0], ctx)?;
            Ok(Value::Bool(!truth(&v)?))
        }
        Function::Abs => {
            let v = scalar(&args[0], ctx)?;
            finite(to_number(&v)?.abs())
        }
        Function::Match => lookup(args, ctx),
        _ => Err(ErrorCode::Value),
    }
}
