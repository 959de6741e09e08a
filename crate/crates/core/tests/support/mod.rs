//! Generators and reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use sheetstream_core::eval::{evaluate, EvalContext};
use sheetstream_core::window::{WindowSpec, WindowStore};
use sheetstream_core::{load_model, CellAddr, EngineInstance, SheetModel, Value, WindowId};

pub const SYMBOLS: [&str; 3] = ["ACME", "IBM", "MSFT"];

/// One input tuple: stream name, values in attribute order, timestamp.
pub type Tuple = (String, Vec<Value>, u64);

struct Pools {
    scalars: Vec<String>,
    ranges: Vec<String>,
}

fn number_literal<R: Rng + ?Sized>(rng: &mut R) -> String {
    match rng.gen_range(0..4) {
        0 => "0".into(),
        1 => rng.gen_range(1..10).to_string(),
        2 => format!("{}.{}", rng.gen_range(0..100), rng.gen_range(1..10)),
        _ => rng.gen_range(10..1000).to_string(),
    }
}

fn gen_expr<R: Rng + ?Sized>(rng: &mut R, pools: &Pools, depth: u32) -> String {
    let leaf = depth == 0 || rng.gen_bool(0.3);
    if leaf {
        return match rng.gen_range(0..10) {
            0..=2 => number_literal(rng),
            3 => {
                if rng.gen() {
                    "TRUE".into()
                } else {
                    "FALSE".into()
                }
            }
            4 => "\"ACME\"".into(),
            _ => pools.scalars.choose(rng).cloned().unwrap_or_else(|| "1".into()),
        };
    }
    let d = depth - 1;
    match rng.gen_range(0..9) {
        0 | 1 => {
            let op = ["+", "-", "*", "/", "^", "=", "<>", "<", "<=", ">", ">="].choose(rng).unwrap();
            let (a, b) = (gen_expr(rng, pools, d), gen_expr(rng, pools, d));
            format!("({a}{op}{b})")
        }
        2 => format!("-{}", gen_expr(rng, pools, d)),
        3 | 4 => {
            let f = ["SUM", "COUNT", "AVERAGE", "MIN", "MAX"].choose(rng).unwrap();
            let n = rng.gen_range(1..=3);
            let args: Vec<String> = (0..n)
                .map(|_| match (rng.gen_range(0..3), pools.ranges.choose(rng)) {
                    (0, Some(r)) | (1, Some(r)) => r.clone(),
                    _ => gen_expr(rng, pools, d),
                })
                .collect();
            format!("{f}({})", args.join(","))
        }
        5 => {
            if rng.gen() {
                format!("IF({},{},{})", gen_expr(rng, pools, d), gen_expr(rng, pools, d), gen_expr(rng, pools, d))
            } else {
                format!("IF({},{})", gen_expr(rng, pools, d), gen_expr(rng, pools, d))
            }
        }
        6 => {
            let f = ["AND", "OR"].choose(rng).unwrap();
            format!("{f}({},{})", gen_expr(rng, pools, d), gen_expr(rng, pools, d))
        }
        7 => format!("{}({})", ["NOT", "ABS"].choose(rng).unwrap(), gen_expr(rng, pools, d)),
        _ => match pools.ranges.choose(rng) {
            Some(r) => format!("MATCH({},{r})", gen_expr(rng, pools, d)),
            None => gen_expr(rng, pools, d),
        },
    }
}

fn cell_name(col: u32, row: u32) -> String {
    CellAddr::new(col + 1, row + 1).unwrap().to_string()
}

/// A random valid model with at most `max_cells` bound plus formula cells.
/// Stream `s0` carries `(sym, x, y, ts)`; an optional `s1` carries `(z, ts)`.
pub fn random_model(rng: &mut impl Rng, max_cells: usize) -> SheetModel {
    let two_streams = rng.gen_bool(0.5);
    let mut streams = vec![
        r#"{"name":"s0","attrs":[{"name":"sym","type":"text"},{"name":"x","type":"number"},{"name":"y","type":"number"},{"name":"ts","type":"timestamp"}],"ts_attr":"ts"}"#.to_string(),
    ];
    if two_streams {
        streams.push(
            r#"{"name":"s1","attrs":[{"name":"z","type":"number"},{"name":"ts","type":"timestamp"}],"ts_attr":"ts"}"#
                .to_string(),
        );
    }
    let mut pools = Pools { scalars: Vec::new(), ranges: Vec::new() };
    let mut bindings = Vec::new();
    let mut used = 0;

    // s0 in columns A.., rows 1..
    let mut proj = vec!["sym", "x", "y"];
    proj.shuffle(rng);
    proj.truncate(rng.gen_range(1..=3));
    let rows = if rng.gen_bool(0.3) { 1 } else { rng.gen_range(1..=4) };
    let scroll = rows > 1 || rng.gen_bool(0.5);
    let region = format!("A1:{}", cell_name(proj.len() as u32 - 1, rows - 1));
    let kind = if scroll { format!(r#""kind":"scroll","rows":{rows}"#) } else { r#""kind":"latest""#.to_string() };
    let proj_json: Vec<String> = proj.iter().map(|p| format!("\"{p}\"")).collect();
    bindings.push(format!(r#"{{"stream":"s0",{kind},"region":"{region}","projection":[{}]}}"#, proj_json.join(",")));
    for r in 0..rows {
        for c in 0..proj.len() as u32 {
            pools.scalars.push(cell_name(c, r));
            used += 1;
        }
    }
    pools.ranges.push(region);
    if proj.len() > 1 {
        pools.ranges.push(format!("A1:A{rows}"));
    }
    if two_streams {
        let rows = rng.gen_range(1..=3);
        let kind =
            if rows > 1 { format!(r#""kind":"scroll","rows":{rows}"#) } else { r#""kind":"latest""#.to_string() };
        let region = format!("D1:D{rows}");
        bindings.push(format!(r#"{{"stream":"s1",{kind},"region":"{region}","projection":["z"]}}"#));
        for r in 0..rows {
            pools.scalars.push(cell_name(3, r));
            used += 1;
        }
        pools.ranges.push(region);
    }

    let mut cells = Vec::new();
    let windows = rng.gen_range(0..=2);
    for w in 0..windows {
        let (s, a) = if two_streams && rng.gen() { ("s1", "z") } else { ("s0", if rng.gen() { "x" } else { "y" }) };
        let span = [1u64, 5, 20, 100, 1000][rng.gen_range(0..5)];
        let addr = cell_name(4, w);
        cells.push(format!(r#"{{"addr":"{addr}","formula":"=WINDOW({s}.{a}, {span})"}}"#));
        pools.scalars.push(addr);
        used += 1;
    }
    if windows > 0 {
        pools.ranges.push(format!("E1:E{windows}"));
    }
    // cells never defined read blank
    pools.scalars.push("K1".into());
    pools.ranges.push("K1:K3".into());

    let mut area: Vec<(u32, u32)> = (5..10).flat_map(|c| (0..10).map(move |r| (c, r))).collect();
    area.shuffle(rng);
    let budget = max_cells.saturating_sub(used).min(area.len());
    let n = rng.gen_range(budget.min(3)..=budget);
    let mut formula_addrs = Vec::new();
    for &(c, r) in area.iter().take(n) {
        let depth = rng.gen_range(0..=3);
        let text = gen_expr(rng, &pools, depth);
        let addr = cell_name(c, r);
        cells.push(format!(r#"{{"addr":"{addr}","formula":"={}"}}"#, text.replace('"', "\\\"")));
        pools.scalars.push(addr.clone());
        formula_addrs.push(addr);
    }
    let exports: Vec<String> =
        formula_addrs.iter().take(3).enumerate().map(|(i, a)| format!(r#"{{"addr":"{a}","name":"out{i}"}}"#)).collect();

    let doc = format!(
        r#"{{"streams":[{}],"bindings":[{}],"cells":[{}],"exports":[{}]}}"#,
        streams.join(","),
        bindings.join(","),
        cells.join(","),
        exports.join(",")
    );
    load_model(&doc).unwrap_or_else(|d| panic!("generated model does not load: {d:?}\n{doc}"))
}

fn random_number(rng: &mut impl Rng) -> f64 {
    match rng.gen_range(0..5) {
        0 => 0.0,
        1 => -(rng.gen_range(1..50) as f64),
        2 => rng.gen_range(1..100) as f64 / 4.0,
        _ => rng.gen_range(1..1000) as f64,
    }
}

/// Random tuples for the streams of [`random_model`], timestamps non-decreasing.
pub fn random_tuples(rng: &mut impl Rng, model: &SheetModel, n: usize) -> Vec<Tuple> {
    let mut ts = 0u64;
    (0..n)
        .map(|_| {
            ts += rng.gen_range(0..40);
            let decl = model.streams.choose(rng).unwrap();
            let values = if decl.name == "s0" {
                vec![
                    Value::text(*SYMBOLS.choose(rng).unwrap()),
                    Value::Number(random_number(rng)),
                    Value::Number(random_number(rng)),
                    Value::Number(ts as f64),
                ]
            } else {
                vec![Value::Number(random_number(rng)), Value::Number(ts as f64)]
            };
            (decl.name.clone(), values, ts)
        })
        .collect()
}

struct Scratch<'a> {
    values: HashMap<CellAddr, Value>,
    windows: HashMap<u32, &'a WindowStore>,
}

static BLANK: Value = Value::Blank;

impl EvalContext for Scratch<'_> {
    fn cell(&self, addr: CellAddr) -> &Value {
        self.values.get(&addr).unwrap_or(&BLANK)
    }

    fn window(&self, id: WindowId) -> Option<&WindowStore> {
        self.windows.get(&id.0).copied()
    }
}

/// Re-evaluates every formula of `inst` from its bound cells and window stores
/// by plain fixpoint iteration, ignoring dependency order, and lists cells
/// whose value differs from the instance's.
pub fn scratch_mismatches(inst: &EngineInstance) -> Vec<String> {
    let model = inst.model();
    let mut ctx = Scratch { values: HashMap::new(), windows: HashMap::new() };
    for b in &model.bindings {
        for a in b.region.cells() {
            ctx.values.insert(a, inst.read_cell(a));
        }
    }
    let mut formulas = Vec::new();
    for c in &model.cells {
        if c.ast.as_window().is_some() {
            let v = inst.read_cell(c.addr);
            if let Value::Window(id) = v {
                ctx.windows.insert(id.0, inst.window_at(c.addr).expect("window store"));
            }
            ctx.values.insert(c.addr, v);
        } else {
            formulas.push(c);
        }
    }
    for _ in 0..=formulas.len() {
        let mut changed = false;
        for c in &formulas {
            let v = evaluate(&c.ast, &ctx);
            if ctx.cell(c.addr) != &v {
                ctx.values.insert(c.addr, v);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    formulas
        .iter()
        .filter_map(|c| {
            let (want, got) = (ctx.cell(c.addr).clone(), inst.read_cell(c.addr));
            (want != got).then(|| format!("{} {}: incremental {got:?}, from scratch {want:?}", c.addr, c.source))
        })
        .collect()
}

/// Neumaier sum, used as the reference for window sums.
pub fn reference_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = s + v;
        if s.abs() >= v.abs() {
            c += (s - t) + v;
        } else {
            c += (v - t) + s;
        }
        s = t;
    }
    s + c
}

/// Drives one random monotonic stream of `inserts` values through a
/// [`WindowStore`] and compares every aggregate after every insert with a
/// brute-force recompute over an independently maintained buffer.
pub fn window_oracle_stream(rng: &mut impl Rng, inserts: usize) -> Result<(), String> {
    // span log-uniform over [1, 10^6] ms; gaps sized for a few to ~1000 retained values
    let span = 10f64.powf(rng.gen_range(0.0..=6.0)).round().max(1.0) as u64;
    let target = 10f64.powf(rng.gen_range(0.0..=3.0));
    let mean_gap = (span as f64 / target).max(0.5);
    let max_gap = (2.0 * mean_gap).round() as u64;
    let scale = 10f64.powi(rng.gen_range(-3..=6));
    let mut store = WindowStore::new(WindowSpec { stream: "s".into(), attr: "v".into(), span_ms: span });
    let mut reference: VecDeque<(u64, f64)> = VecDeque::new();
    let mut ts = rng.gen_range(0..1000u64);
    for i in 0..inserts {
        ts += rng.gen_range(0..=max_gap);
        let v = match rng.gen_range(0..10) {
            0 => 0.0,
            1 => rng.gen_range(-5..5) as f64,
            _ => rng.gen_range(-1.0..1.0) * scale,
        };
        store.insert(ts, v);
        reference.push_back((ts, v));
        while reference.front().is_some_and(|&(t, _)| t + span <= ts) {
            reference.pop_front();
        }
        let n = reference.len();
        let fail = |what: &str, got: String, want: String| {
            let mut m = String::new();
            let _ = write!(m, "span {span}, insert {i} at ts {ts}: {what} = {got}, expected {want}");
            Err(m)
        };
        if store.count() != n {
            return fail("count", store.count().to_string(), n.to_string());
        }
        let min = reference.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
        let max = reference.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
        if store.min() != min {
            return fail("min", store.min().to_string(), min.to_string());
        }
        if store.max() != max {
            return fail("max", store.max().to_string(), max.to_string());
        }
        let sum = reference_sum(reference.iter().map(|e| e.1));
        let abs: f64 = reference.iter().map(|e| e.1.abs()).sum();
        if (store.sum() - sum).abs() > 1e-9 * abs {
            return fail("sum", store.sum().to_string(), sum.to_string());
        }
        let avg = store.avg().as_number().unwrap_or(f64::NAN);
        if (avg - sum / n as f64).abs() > 1e-9 * abs / n as f64 {
            return fail("avg", avg.to_string(), (sum / n as f64).to_string());
        }
    }
    Ok(())
}

/// CSV inputs for the VWAP models: `(trades, quotes)` over the given symbols.
pub fn vwap_inputs(rng: &mut impl Rng, trades: usize, quotes: usize, symbols: &[&str]) -> (String, String) {
    let mut t = String::from("sym,price,vol,ts\n");
    let mut q = String::from("sym,price,ts\n");
    let total = trades + quotes;
    let (mut nt, mut nq) = (0, 0);
    let mut ts = 0u64;
    let mut price = 100.0f64;
    for _ in 0..total {
        ts += rng.gen_range(0..5);
        let sym = symbols.choose(rng).unwrap();
        price = (price + rng.gen_range(-20..=20) as f64 / 100.0).max(1.0);
        let p = (price * 100.0).round() / 100.0;
        let is_trade = nq == quotes || (nt < trades && rng.gen_range(0..total) < trades);
        if is_trade {
            let _ = writeln!(t, "{sym},{p},{},{ts}", rng.gen_range(1..=50) * 100);
            nt += 1;
        } else {
            let _ = writeln!(q, "{sym},{p},{ts}");
            nq += 1;
        }
    }
    (t, q)
}

pub const VWAP_MODEL: &str = include_str!("../../../cli/fixtures/vwap/vwap.sheet.json");
pub const VWAP_PARTITIONED_MODEL: &str = include_str!("../../../cli/fixtures/vwap/vwap_partitioned.sheet.json");

/// Runs `program` over in-memory CSV inputs and returns the CSV output.
pub fn run_csv(
    program: std::sync::Arc<sheetstream_core::Program>,
    inputs: &[(&str, &str)],
) -> Result<(String, sheetstream_core::io::RunStats), String> {
    use sheetstream_core::io::{run, CsvSink, Format, MergedCursor, RunConfig};
    let readers = inputs
        .iter()
        .map(|(name, text)| {
            let r: Box<dyn std::io::Read> = Box::new(std::io::Cursor::new(text.as_bytes().to_vec()));
            (name.to_string(), (r, Format::Csv))
        })
        .collect();
    let cursor = MergedCursor::from_readers(program.model(), readers).map_err(|e| e.to_string())?;
    let mut sink = CsvSink::new(Vec::new());
    let stats = run(program, cursor, &mut sink, &RunConfig::default()).map_err(|e| e.to_string())?;
    Ok((String::from_utf8(sink.into_inner()).expect("utf-8 output"), stats))
}

/// The partitioned model with PARTITION replaced by SELECT on `key`.
pub fn select_variant(partitioned: &SheetModel, key: &str) -> SheetModel {
    let mut m = partitioned.clone();
    for s in &mut m.streams {
        let attr = s.partition_by.take().expect("partitioned stream");
        s.select =
            Some(sheetstream_core::model::Select { attr, value: sheetstream_core::model::Literal::Text(key.into()) });
    }
    m
}

/// Rows of a keyed CSV output belonging to `key`, with the key column removed.
pub fn rows_for_key(keyed: &str, key: &str) -> String {
    let mut lines = keyed.lines();
    let header = lines.next().expect("header");
    let mut out = format!("{}\n", header.strip_prefix("__key,").expect("keyed header"));
    for l in lines {
        if let Some(rest) = l.strip_prefix(key).and_then(|r| r.strip_prefix(',')) {
            out.push_str(rest);
            out.push('\n');
        }
    }
    out
}
