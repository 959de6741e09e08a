//! Materialized sheet instances.
//!
//! A [`Program`] is the compiled, immutable form of a model: formulas in a
//! fixed topological order plus, per stream, the exact list of formula cells
//! reachable from that stream's bound regions and windows. An
//! [`EngineInstance`] holds the mutable state (cell values, window stores)
//! and applies tuples by evaluating that precomputed list once, in order.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use thiserror::Error;

use crate::eval::{self, EvalContext, BLANK};
use crate::formula::{self, CellAddr, Expr, Reference};
use crate::model::{self, AttrType, BindingKind, CellDef, Diagnostic, ExportDecl, SheetModel};
use crate::value::{Value, WindowId};
use crate::window::{WindowSpec, WindowStore};

#[derive(Debug, Clone)]
struct Formula {
    addr: CellAddr,
    ast: Expr,
    window: Option<WindowId>,
}

#[derive(Debug, Clone)]
struct WindowDef {
    addr: CellAddr,
    spec: WindowSpec,
    attr: usize,
}

#[derive(Debug, Clone)]
struct BoundRegion {
    binding: usize,
    columns: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
struct StreamPlan {
    regions: Vec<BoundRegion>,
    windows: Vec<WindowId>,
    /// Positions into `Program::formulas`, ascending (= topological order).
    affected: Vec<usize>,
}

/// Compiled model shared by every instance built from it.
#[derive(Debug, Clone)]
pub struct Program {
    model: SheetModel,
    formulas: Vec<Formula>,
    position: HashMap<CellAddr, usize>,
    windows: Vec<WindowDef>,
    plans: Vec<StreamPlan>,
    export_set: HashSet<CellAddr>,
}

/// Finds one cycle among `remaining` nodes, each of which has at least one
/// remaining dependency, by walking dependencies until a node repeats.
fn find_cycle(start: usize, deps: &[Vec<usize>], remaining: &[bool]) -> Vec<usize> {
    let mut path = vec![start];
    let mut seen = HashMap::from([(start, 0usize)]);
    let mut node = start;
    loop {
        node = *deps[node].iter().find(|&&d| remaining[d]).expect("remaining node has a remaining dependency");
        if let Some(&i) = seen.get(&node) {
            let mut cycle = path.split_off(i);
            cycle.push(node);
            return cycle;
        }
        seen.insert(node, path.len());
        path.push(node);
    }
}

impl Program {
    /// Validates and compiles `model`. Dependency cycles are rejected here.
    pub fn compile(model: SheetModel) -> Result<Program, Vec<Diagnostic>> {
        let diags = model::validate(&model);
        if !diags.is_empty() {
            return Err(diags);
        }

        let mut cells: Vec<&CellDef> = model.cells.iter().collect();
        cells.sort_by_key(|c| c.addr);
        let n = cells.len();
        let slot: HashMap<CellAddr, usize> = cells.iter().enumerate().map(|(i, c)| (c.addr, i)).collect();

        // deps[i]: formula cells read by i; readers[j]: formula cells reading j
        let mut deps: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut readers: Vec<Vec<usize>> = vec![Vec::new(); n];
        let refs: Vec<BTreeSet<Reference>> = cells.iter().map(|c| formula::references(&c.ast)).collect();
        for (i, rs) in refs.iter().enumerate() {
            let mut ds = BTreeSet::new();
            for r in rs {
                match r {
                    Reference::Cell(a) => ds.extend(slot.get(a).copied()),
                    Reference::Range(range) => {
                        ds.extend(cells.iter().enumerate().filter(|(_, c)| range.contains(c.addr)).map(|(j, _)| j));
                    }
                    Reference::StreamAttr { .. } => {}
                }
            }
            for &d in &ds {
                readers[d].push(i);
            }
            deps[i] = ds.into_iter().collect();
        }

        // Kahn's algorithm; ties resolved by row-major address for determinism
        let mut indegree: Vec<usize> = deps.iter().map(Vec::len).collect();
        let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = ready.pop_first() {
            order.push(i);
            for &r in &readers[i] {
                indegree[r] -= 1;
                if indegree[r] == 0 {
                    ready.insert(r);
                }
            }
        }
        if order.len() < n {
            let mut remaining = vec![true; n];
            for &i in &order {
                remaining[i] = false;
            }
            let start = (0..n).find(|&i| remaining[i]).expect("cycle exists");
            let cycle = find_cycle(start, &deps, &remaining);
            let text: Vec<String> = cycle.iter().map(|&i| cells[i].addr.to_string()).collect();
            return Err(vec![Diagnostic::new(
                format!("cell {}", cells[start].addr),
                format!("dependency cycle: {}", text.join(" → ")),
            )]);
        }

        let mut topo_pos = vec![0; n];
        for (pos, &i) in order.iter().enumerate() {
            topo_pos[i] = pos;
        }

        let mut windows = Vec::new();
        let mut formulas = Vec::with_capacity(n);
        for &i in &order {
            let c = cells[i];
            let window = c.ast.as_window().map(|(stream, attr, span_ms)| {
                let decl = model.stream(stream).expect("validated stream");
                let id = WindowId(windows.len() as u32);
                windows.push(WindowDef {
                    addr: c.addr,
                    spec: WindowSpec { stream: stream.to_string(), attr: attr.to_string(), span_ms },
                    attr: decl.attr_index(attr).expect("validated attr"),
                });
                id
            });
            formulas.push(Formula { addr: c.addr, ast: c.ast.clone(), window });
        }
        let position: HashMap<CellAddr, usize> = formulas.iter().enumerate().map(|(p, f)| (f.addr, p)).collect();

        let mut plans = Vec::with_capacity(model.streams.len());
        for decl in &model.streams {
            let mut plan = StreamPlan::default();
            let mut seeds = Vec::new();
            for (bi, b) in model.bindings.iter().enumerate().filter(|(_, b)| b.stream == decl.name) {
                plan.regions.push(BoundRegion {
                    binding: bi,
                    columns: b.projection.iter().map(|p| decl.attr_index(p).expect("validated projection")).collect(),
                });
                for (i, rs) in refs.iter().enumerate() {
                    let reads = rs.iter().any(|r| match r {
                        Reference::Cell(a) => b.region.contains(*a),
                        Reference::Range(range) => range.intersects(&b.region),
                        Reference::StreamAttr { .. } => false,
                    });
                    if reads {
                        seeds.push(i);
                    }
                }
            }
            for (wi, w) in windows.iter().enumerate().filter(|(_, w)| w.spec.stream == decl.name) {
                plan.windows.push(WindowId(wi as u32));
                seeds.push(slot[&w.addr]);
            }
            let mut reached = vec![false; n];
            while let Some(i) = seeds.pop() {
                if !reached[i] {
                    reached[i] = true;
                    seeds.extend(readers[i].iter().copied());
                }
            }
            plan.affected = (0..n).filter(|&i| reached[i]).map(|i| topo_pos[i]).collect();
            plan.affected.sort_unstable();
            plans.push(plan);
        }

        let export_set = model.exports.iter().map(|e| e.addr).collect();
        Ok(Program { model, formulas, position, windows, plans, export_set })
    }

    pub fn model(&self) -> &SheetModel {
        &self.model
    }

    /// Formula cells in evaluation order.
    pub fn topo_order(&self) -> Vec<CellAddr> {
        self.formulas.iter().map(|f| f.addr).collect()
    }

    /// Formula cells re-evaluated when a tuple of `stream` arrives, in order.
    pub fn affected(&self, stream: &str) -> Vec<CellAddr> {
        self.model
            .stream_index(stream)
            .map(|s| self.plans[s].affected.iter().map(|&p| self.formulas[p].addr).collect())
            .unwrap_or_default()
    }

    pub fn is_formula(&self, addr: CellAddr) -> bool {
        self.position.contains_key(&addr)
    }

    pub fn window_cells(&self) -> impl Iterator<Item = CellAddr> + '_ {
        self.windows.iter().map(|w| w.addr)
    }

    /// Applies a formula edit to a copy of the model and recompiles it.
    /// An empty `text` removes the cell's formula.
    pub fn with_formula(&self, addr: CellAddr, text: &str) -> Result<Program, Vec<Diagnostic>> {
        let loc = format!("cell {addr}");
        if let Some(b) = self.model.binding_at(addr) {
            return Err(vec![Diagnostic::new(
                loc,
                format!("cell is stream-bound (inside {} region {})", b.stream, b.region),
            )]);
        }
        let mut model = self.model.clone();
        if text.trim().is_empty() {
            model.cells.retain(|c| c.addr != addr);
        } else {
            let ast =
                formula::parse_formula(text).map_err(|e| vec![Diagnostic::new(&loc, format!("formula error {e}"))])?;
            let def = CellDef { addr, source: text.to_string(), ast };
            match model.cells.iter_mut().find(|c| c.addr == addr) {
                Some(c) => *c = def,
                None => model.cells.push(def),
            }
        }
        Program::compile(model)
    }

    /// Adds, renames or removes the export at `addr`.
    pub fn with_export(&self, addr: CellAddr, name: &str, on: bool) -> Result<Program, Vec<Diagnostic>> {
        let mut model = self.model.clone();
        match (on, model.exports.iter().position(|e| e.addr == addr)) {
            (true, Some(i)) => model.exports[i].name = name.to_string(),
            (true, None) => model.exports.push(ExportDecl { addr, name: name.to_string() }),
            (false, Some(i)) => {
                model.exports.remove(i);
            }
            (false, None) => {}
        }
        Program::compile(model)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellChange {
    pub addr: CellAddr,
    pub old: Value,
    pub new: Value,
}

/// Cell changes produced by one tuple or one edit.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChangeSet {
    pub changed: Vec<CellChange>,
    pub exports_changed: bool,
    /// Window cells whose store received a value. Their handle value does not
    /// change, so they never appear in `changed`.
    pub windows_touched: Vec<CellAddr>,
}

impl ChangeSet {
    pub fn is_empty(&self) -> bool {
        self.changed.is_empty() && self.windows_touched.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ApplyError {
    #[error("unknown stream `{0}`")]
    UnknownStream(String),
    #[error("stream `{stream}` expects {expected} values, got {got}")]
    Arity { stream: String, expected: usize, got: usize },
    #[error("stream `{stream}` attribute `{attr}` expects a {expected} value, got {got:?}")]
    Type { stream: String, attr: String, expected: AttrType, got: Value },
    #[error("stream `{stream}` timestamp {ts} precedes the last applied timestamp {last}")]
    OutOfOrder { stream: String, ts: u64, last: u64 },
}

pub fn check_tuple(decl: &model::StreamDecl, tuple: &[Value]) -> Result<(), ApplyError> {
    if tuple.len() != decl.attrs.len() {
        return Err(ApplyError::Arity { stream: decl.name.clone(), expected: decl.attrs.len(), got: tuple.len() });
    }
    for (a, v) in decl.attrs.iter().zip(tuple) {
        let ok = match (a.ty, v) {
            (AttrType::Number, Value::Number(_)) => true,
            (AttrType::Text, Value::Text(_)) => true,
            (AttrType::Timestamp, Value::Number(n)) => *n >= 0.0 && n.fract() == 0.0,
            _ => false,
        };
        if !ok {
            return Err(ApplyError::Type {
                stream: decl.name.clone(),
                attr: a.name.clone(),
                expected: a.ty,
                got: v.clone(),
            });
        }
    }
    Ok(())
}

/// One materialized sheet.
#[derive(Debug, Clone)]
pub struct EngineInstance {
    program: Arc<Program>,
    cells: HashMap<CellAddr, Value>,
    windows: Vec<WindowStore>,
    last_ts: Vec<Option<u64>>,
    primed: bool,
    tuples: u64,
    passes: u64,
    evaluations: u64,
}

/// Validates, compiles and instantiates `model`.
pub fn build(model: SheetModel) -> Result<EngineInstance, Vec<Diagnostic>> {
    Program::compile(model).map(|p| EngineInstance::new(Arc::new(p)))
}

impl EvalContext for EngineInstance {
    fn cell(&self, addr: CellAddr) -> &Value {
        self.cells.get(&addr).unwrap_or(&BLANK)
    }

    fn window(&self, id: WindowId) -> Option<&WindowStore> {
        self.windows.get(id.0 as usize)
    }
}

impl EngineInstance {
    /// Fresh instance: every cell blank, every window empty.
    pub fn new(program: Arc<Program>) -> Self {
        let windows = program.windows.iter().map(|w| WindowStore::new(w.spec.clone())).collect();
        let last_ts = vec![None; program.model.streams.len()];
        Self { program, cells: HashMap::new(), windows, last_ts, primed: false, tuples: 0, passes: 0, evaluations: 0 }
    }

    pub fn program(&self) -> &Arc<Program> {
        &self.program
    }

    pub fn model(&self) -> &SheetModel {
        &self.program.model
    }

    pub fn read_cell(&self, addr: CellAddr) -> Value {
        self.cell(addr).clone()
    }

    pub fn window_at(&self, addr: CellAddr) -> Option<&WindowStore> {
        match self.cell(addr) {
            Value::Window(id) => self.windows.get(id.0 as usize),
            _ => None,
        }
    }

    /// Exported values in model export order.
    pub fn exports(&self) -> Vec<(String, Value)> {
        self.program.model.exports.iter().map(|e| (e.name.clone(), self.read_cell(e.addr))).collect()
    }

    /// Non-blank cells in row-major order.
    pub fn cells(&self) -> Vec<(CellAddr, &Value)> {
        let mut out: Vec<_> = self.cells.iter().filter(|(_, v)| **v != Value::Blank).map(|(a, v)| (*a, v)).collect();
        out.sort_by_key(|(a, _)| *a);
        out
    }

    pub fn tuples_applied(&self) -> u64 {
        self.tuples
    }

    /// Number of tuple-triggered evaluation passes.
    pub fn passes(&self) -> u64 {
        self.passes
    }

    /// Total formula-cell evaluations performed.
    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    fn write(&mut self, addr: CellAddr, new: Value, out: &mut ChangeSet) {
        let old = self.cells.get(&addr).unwrap_or(&BLANK);
        if *old != new {
            let old = if new == Value::Blank {
                self.cells.remove(&addr).unwrap_or_default()
            } else {
                self.cells.insert(addr, new.clone()).unwrap_or_default()
            };
            if self.program.export_set.contains(&addr) {
                out.exports_changed = true;
            }
            out.changed.push(CellChange { addr, old, new });
        }
    }

    fn evaluate_at(&mut self, pos: usize, out: &mut ChangeSet) {
        let program = Arc::clone(&self.program);
        let f = &program.formulas[pos];
        let v = match f.window {
            Some(id) => Value::Window(id),
            None => eval::evaluate(&f.ast, self),
        };
        self.evaluations += 1;
        self.write(f.addr, v, out);
    }

    fn full_pass(&mut self, out: &mut ChangeSet) {
        for pos in 0..self.program.formulas.len() {
            self.evaluate_at(pos, out);
        }
        self.primed = true;
    }

    /// Applies one tuple: shifts scroll regions, overwrites latest rows,
    /// feeds windows, then re-evaluates every formula cell reachable from the
    /// stream once, in topological order. The very first tuple evaluates all
    /// formula cells. On error the instance is unchanged.
    pub fn apply_tuple(&mut self, stream: &str, tuple: &[Value], ts: u64) -> Result<ChangeSet, ApplyError> {
        let program = Arc::clone(&self.program);
        let si = program.model.stream_index(stream).ok_or_else(|| ApplyError::UnknownStream(stream.to_string()))?;
        let decl = &program.model.streams[si];
        check_tuple(decl, tuple)?;
        if let Some(last) = self.last_ts[si] {
            if ts < last {
                return Err(ApplyError::OutOfOrder { stream: stream.to_string(), ts, last });
            }
        }
        self.last_ts[si] = Some(ts);
        self.tuples += 1;

        let plan = &program.plans[si];
        let mut out = ChangeSet::default();
        for region in &plan.regions {
            let binding = &program.model.bindings[region.binding];
            let r = binding.region;
            let left = r.top_left.col;
            let bottom = r.bottom_right.row;
            if let BindingKind::Scroll { .. } = binding.kind {
                for row in r.top_left.row..bottom {
                    for col in left..left + r.width() {
                        let below = self.read_cell(CellAddr { col, row: row + 1 });
                        self.write(CellAddr { col, row }, below, &mut out);
                    }
                }
            }
            for (k, &attr) in region.columns.iter().enumerate() {
                let addr = CellAddr { col: left + k as u32, row: bottom };
                self.write(addr, tuple[attr].clone(), &mut out);
            }
        }
        for &id in &plan.windows {
            let def = &program.windows[id.0 as usize];
            let v = tuple[def.attr].as_number().expect("window attribute is numeric");
            self.windows[id.0 as usize].insert(ts, v);
            out.windows_touched.push(def.addr);
        }

        if self.primed {
            for &pos in &plan.affected {
                self.evaluate_at(pos, &mut out);
            }
        } else {
            self.full_pass(&mut out);
        }
        self.passes += 1;
        Ok(out)
    }

    /// Switches to a recompiled program, keeping bound values and the stores
    /// of windows whose cell and spec are unchanged, then re-evaluates every
    /// formula cell.
    pub fn rebind(&mut self, program: Arc<Program>) -> ChangeSet {
        let mut out = ChangeSet::default();
        let mut old_windows: HashMap<(CellAddr, WindowSpec), WindowStore> = self
            .program
            .windows
            .iter()
            .zip(std::mem::take(&mut self.windows))
            .map(|(def, store)| ((def.addr, def.spec.clone()), store))
            .collect();
        self.windows = program
            .windows
            .iter()
            .map(|def| {
                old_windows.remove(&(def.addr, def.spec.clone())).unwrap_or_else(|| WindowStore::new(def.spec.clone()))
            })
            .collect();
        let old = std::mem::replace(&mut self.program, program);
        let dropped: Vec<CellAddr> =
            old.formulas.iter().map(|f| f.addr).filter(|a| !self.program.is_formula(*a)).collect();
        for addr in dropped {
            self.write(addr, Value::Blank, &mut out);
        }
        // a renamed or added export changes the output even if no value does
        if old.model.exports != self.program.model.exports {
            out.exports_changed = true;
        }
        self.full_pass(&mut out);
        out
    }

    /// Replaces (or with empty text, removes) the formula at `addr`. On any
    /// parse, validation or cycle error the instance is unchanged.
    pub fn set_formula(&mut self, addr: CellAddr, text: &str) -> Result<ChangeSet, Vec<Diagnostic>> {
        let program = self.program.with_formula(addr, text)?;
        Ok(self.rebind(Arc::new(program)))
    }

    pub fn set_export(&mut self, addr: CellAddr, name: &str, on: bool) -> Result<ChangeSet, Vec<Diagnostic>> {
        let program = self.program.with_export(addr, name, on)?;
        Ok(self.rebind(Arc::new(program)))
    }
}
