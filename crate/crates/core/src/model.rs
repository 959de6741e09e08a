//! Sheet models: stream schemas, region bindings, cell formulas and exports,
//! loaded from and saved to the `.sheet.json` document format.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::formula::{self, CellAddr, Expr, RangeAddr, Reference};
use crate::partition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttrType {
    Number,
    Text,
    Timestamp,
}

impl fmt::Display for AttrType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttrType::Number => "number",
            AttrType::Text => "text",
            AttrType::Timestamp => "timestamp",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Attr {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: AttrType,
}

/// Literal used by a SELECT clause.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Literal {
    Number(f64),
    Text(String),
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Number(n) => f.write_str(&crate::value::format_number(*n)),
            Literal::Text(s) => write!(f, "{s:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Select {
    pub attr: String,
    pub value: Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamDecl {
    pub name: String,
    pub attrs: Vec<Attr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ts_attr: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub select: Option<Select>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition_by: Option<String>,
}

impl StreamDecl {
    pub fn attr_index(&self, name: &str) -> Option<usize> {
        self.attrs.iter().position(|a| a.name == name)
    }

    pub fn attr(&self, name: &str) -> Option<&Attr> {
        self.attrs.iter().find(|a| a.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BindingKind {
    /// Region always holds the last `rows` tuples, newest in the bottom row.
    Scroll { rows: u32 },
    /// One-row region overwritten by every tuple.
    Latest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Binding {
    pub stream: String,
    pub kind: BindingKind,
    pub region: RangeAddr,
    pub projection: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellDef {
    pub addr: CellAddr,
    pub source: String,
    pub ast: Expr,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExportDecl {
    pub addr: CellAddr,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SheetModel {
    pub streams: Vec<StreamDecl>,
    pub bindings: Vec<Binding>,
    pub cells: Vec<CellDef>,
    pub exports: Vec<ExportDecl>,
}

impl SheetModel {
    /// True iff any stream declares `partition_by`.
    pub fn partitioned(&self) -> bool {
        self.streams.iter().any(|s| s.partition_by.is_some())
    }

    pub fn stream(&self, name: &str) -> Option<&StreamDecl> {
        self.streams.iter().find(|s| s.name == name)
    }

    pub fn stream_index(&self, name: &str) -> Option<usize> {
        self.streams.iter().position(|s| s.name == name)
    }

    pub fn cell(&self, addr: CellAddr) -> Option<&CellDef> {
        self.cells.iter().find(|c| c.addr == addr)
    }

    pub fn binding_at(&self, addr: CellAddr) -> Option<&Binding> {
        self.bindings.iter().find(|b| b.region.contains(addr))
    }

    pub fn has_window(&self) -> bool {
        self.cells.iter().any(|c| c.ast.as_window().is_some())
    }

    pub fn to_json(&self) -> String {
        let raw = RawModel {
            streams: self.streams.clone(),
            bindings: self
                .bindings
                .iter()
                .map(|b| RawBinding {
                    stream: b.stream.clone(),
                    kind: match b.kind {
                        BindingKind::Scroll { .. } => "scroll".into(),
                        BindingKind::Latest => "latest".into(),
                    },
                    region: b.region.to_string(),
                    rows: match b.kind {
                        BindingKind::Scroll { rows } => Some(rows),
                        BindingKind::Latest => None,
                    },
                    projection: b.projection.clone(),
                })
                .collect(),
            cells: self.cells.iter().map(|c| RawCell { addr: c.addr.to_string(), formula: c.source.clone() }).collect(),
            exports: self
                .exports
                .iter()
                .map(|e| RawExport { addr: e.addr.to_string(), name: e.name.clone() })
                .collect(),
        };
        serde_json::to_string_pretty(&raw).expect("model serializes")
    }
}

/// A problem found while loading, validating or building a model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub location: String,
    pub message: String,
}

impl Diagnostic {
    pub fn new(location: impl Into<String>, message: impl Into<String>) -> Self {
        Self { location: location.into(), message: message.into() }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.location.is_empty() {
            f.write_str(&self.message)
        } else {
            write!(f, "{}: {}", self.location, self.message)
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    streams: Vec<StreamDecl>,
    #[serde(default)]
    bindings: Vec<RawBinding>,
    #[serde(default)]
    cells: Vec<RawCell>,
    #[serde(default)]
    exports: Vec<RawExport>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBinding {
    stream: String,
    kind: String,
    region: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rows: Option<u32>,
    projection: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCell {
    addr: String,
    formula: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExport {
    addr: String,
    name: String,
}

fn binding_location(i: usize, b: &Binding) -> String {
    format!("bindings[{i}] ({} {})", b.stream, b.region)
}

/// Parses a model document. Either every formula parses and the structure is
/// sound, or one diagnostic per problem is returned.
pub fn load_model(document: &str) -> Result<SheetModel, Vec<Diagnostic>> {
    let raw: RawModel = serde_json::from_str(document)
        .map_err(|e| vec![Diagnostic::new(format!("line {}, column {}", e.line(), e.column()), e.to_string())])?;

    let mut diags = Vec::new();
    let mut model = SheetModel { streams: raw.streams, ..Default::default() };

    for (i, rb) in raw.bindings.into_iter().enumerate() {
        let loc = format!("bindings[{i}]");
        let region = match rb.region.parse::<RangeAddr>() {
            Ok(r) => r,
            Err(e) => {
                diags.push(Diagnostic::new(&loc, e.to_string()));
                continue;
            }
        };
        let kind = match (rb.kind.as_str(), rb.rows) {
            ("scroll", Some(rows)) => BindingKind::Scroll { rows },
            ("scroll", None) => {
                diags.push(Diagnostic::new(&loc, "scroll binding requires `rows`"));
                continue;
            }
            ("latest", None) => BindingKind::Latest,
            ("latest", Some(_)) => {
                diags.push(Diagnostic::new(&loc, "latest binding does not take `rows`"));
                continue;
            }
            (other, _) => {
                diags
                    .push(Diagnostic::new(&loc, format!("unknown binding kind `{other}` (expected scroll or latest)")));
                continue;
            }
        };
        if model.stream(&rb.stream).is_none() {
            diags.push(Diagnostic::new(&loc, format!("unknown stream `{}`", rb.stream)));
            continue;
        }
        model.bindings.push(Binding { stream: rb.stream, kind, region, projection: rb.projection });
    }

    for (i, a) in model.bindings.iter().enumerate() {
        for (j, b) in model.bindings.iter().enumerate().skip(i + 1) {
            if a.region.intersects(&b.region) {
                diags.push(Diagnostic::new(
                    binding_location(j, b),
                    format!("overlapping bindings: region intersects {}", binding_location(i, a)),
                ));
            }
        }
    }

    let mut seen = HashSet::new();
    for (i, rc) in raw.cells.into_iter().enumerate() {
        let loc = format!("cells[{i}] ({})", rc.addr);
        let addr = match formula::parse_addr(&rc.addr) {
            Ok(a) => a,
            Err(e) => {
                diags.push(Diagnostic::new(&loc, e.to_string()));
                continue;
            }
        };
        if !seen.insert(addr) {
            diags.push(Diagnostic::new(&loc, format!("duplicate definition of cell {addr}")));
            continue;
        }
        match formula::parse_formula(&rc.formula) {
            Ok(ast) => model.cells.push(CellDef { addr, source: rc.formula, ast }),
            Err(e) => diags.push(Diagnostic::new(&loc, format!("formula error {e}"))),
        }
    }

    for (i, re) in raw.exports.into_iter().enumerate() {
        let loc = format!("exports[{i}] ({})", re.name);
        match formula::parse_addr(&re.addr) {
            Ok(addr) => model.exports.push(ExportDecl { addr, name: re.name }),
            Err(e) => diags.push(Diagnostic::new(&loc, e.to_string())),
        }
    }

    if diags.is_empty() {
        Ok(model)
    } else {
        Err(diags)
    }
}

/// Byte-level entry point: non-UTF-8 input yields a diagnostic.
pub fn load_model_bytes(document: &[u8]) -> Result<SheetModel, Vec<Diagnostic>> {
    match std::str::from_utf8(document) {
        Ok(s) => load_model(s),
        Err(e) => Err(vec![Diagnostic::new(format!("byte {}", e.valid_up_to()), "document is not valid UTF-8")]),
    }
}

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    chars.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

pub const RESERVED_OUTPUT_NAMES: [&str; 2] = ["__seq", "__key"];

fn literal_fits(lit: &Literal, ty: AttrType) -> bool {
    match (lit, ty) {
        (Literal::Text(_), AttrType::Text) => true,
        (Literal::Number(_), AttrType::Number) => true,
        (Literal::Number(n), AttrType::Timestamp) => *n >= 0.0 && n.fract() == 0.0,
        _ => false,
    }
}

fn validate_streams(model: &SheetModel, diags: &mut Vec<Diagnostic>) {
    let mut names = HashSet::new();
    for (i, s) in model.streams.iter().enumerate() {
        let loc = format!("streams[{i}] ({})", s.name);
        if !is_identifier(&s.name) {
            diags.push(Diagnostic::new(&loc, "stream name must be an identifier"));
        }
        if !names.insert(s.name.as_str()) {
            diags.push(Diagnostic::new(&loc, format!("duplicate stream `{}`", s.name)));
        }
        if s.attrs.is_empty() {
            diags.push(Diagnostic::new(&loc, "stream declares no attributes"));
        }
        let mut attrs = HashSet::new();
        for a in &s.attrs {
            if !is_identifier(&a.name) {
                diags.push(Diagnostic::new(&loc, format!("attribute name `{}` must be an identifier", a.name)));
            }
            if !attrs.insert(a.name.as_str()) {
                diags.push(Diagnostic::new(&loc, format!("duplicate attribute `{}`", a.name)));
            }
        }
        if let Some(ts) = &s.ts_attr {
            match s.attr(ts) {
                None => diags.push(Diagnostic::new(&loc, format!("ts_attr `{ts}` is not a declared attribute"))),
                Some(a) if a.ty != AttrType::Timestamp => {
                    diags.push(Diagnostic::new(&loc, format!("ts_attr `{ts}` must have type timestamp, not {}", a.ty)))
                }
                Some(_) => {}
            }
        }
        if let Some(sel) = &s.select {
            match s.attr(&sel.attr) {
                None => diags.push(Diagnostic::new(&loc, format!("select attribute `{}` is not declared", sel.attr))),
                Some(a) if !literal_fits(&sel.value, a.ty) => diags.push(Diagnostic::new(
                    &loc,
                    format!("select value {} does not match type {} of `{}`", sel.value, a.ty, a.name),
                )),
                Some(_) => {}
            }
            if s.partition_by.is_some() {
                diags.push(Diagnostic::new(&loc, "a stream cannot declare both select and partition_by"));
            }
        }
        if let Some(key) = &s.partition_by {
            if s.attr(key).is_none() {
                diags.push(Diagnostic::new(&loc, format!("partition_by attribute `{key}` is not declared")));
            }
        }
    }
}

fn validate_bindings(model: &SheetModel, diags: &mut Vec<Diagnostic>) {
    for (i, b) in model.bindings.iter().enumerate() {
        let loc = binding_location(i, b);
        let Some(stream) = model.stream(&b.stream) else {
            diags.push(Diagnostic::new(&loc, format!("unknown stream `{}`", b.stream)));
            continue;
        };
        if b.projection.is_empty() {
            diags.push(Diagnostic::new(&loc, "projection is empty"));
        }
        for p in &b.projection {
            if stream.attr(p).is_none() {
                diags.push(Diagnostic::new(
                    &loc,
                    format!("projected attribute `{p}` is not declared by `{}`", b.stream),
                ));
            }
        }
        if b.region.width() as usize != b.projection.len() {
            diags.push(Diagnostic::new(
                &loc,
                format!("region width {} does not match projection length {}", b.region.width(), b.projection.len()),
            ));
        }
        match b.kind {
            BindingKind::Scroll { rows: 0 } => diags.push(Diagnostic::new(&loc, "scroll rows must be positive")),
            BindingKind::Scroll { rows } if rows != b.region.height() => diags.push(Diagnostic::new(
                &loc,
                format!("scroll region height {} does not match rows {rows}", b.region.height()),
            )),
            BindingKind::Latest if b.region.height() != 1 => {
                diags.push(Diagnostic::new(&loc, "latest region must be exactly one row high"))
            }
            _ => {}
        }
    }
    for (i, a) in model.bindings.iter().enumerate() {
        for (j, b) in model.bindings.iter().enumerate().skip(i + 1) {
            if a.region.intersects(&b.region) {
                diags.push(Diagnostic::new(
                    binding_location(j, b),
                    format!("overlapping bindings: region intersects {}", binding_location(i, a)),
                ));
            }
        }
    }
}

/// Checks a single formula cell against the model's streams and bindings.
pub(crate) fn validate_cell(model: &SheetModel, cell: &CellDef) -> Vec<Diagnostic> {
    let loc = format!("cell {}", cell.addr);
    let mut diags = Vec::new();
    if let Some(b) = model.binding_at(cell.addr) {
        diags.push(Diagnostic::new(&loc, format!("cell is stream-bound (inside {} region {})", b.stream, b.region)));
    }
    for r in formula::references(&cell.ast) {
        let Reference::StreamAttr { stream, attr } = r else { continue };
        let Some(s) = model.stream(&stream) else {
            diags.push(Diagnostic::new(&loc, format!("WINDOW refers to unknown stream `{stream}`")));
            continue;
        };
        match s.attr(&attr) {
            None => diags.push(Diagnostic::new(&loc, format!("WINDOW refers to unknown attribute `{stream}.{attr}`"))),
            Some(a) if a.ty != AttrType::Number => diags.push(Diagnostic::new(
                &loc,
                format!("WINDOW requires a number attribute; `{stream}.{attr}` has type {}", a.ty),
            )),
            Some(_) => {}
        }
        if s.ts_attr.is_none() {
            diags.push(Diagnostic::new(&loc, format!("WINDOW over `{stream}` requires the stream to declare ts_attr")));
        }
    }
    diags
}

fn validate_cells(model: &SheetModel, diags: &mut Vec<Diagnostic>) {
    let mut seen = HashSet::new();
    for c in &model.cells {
        if !seen.insert(c.addr) {
            diags.push(Diagnostic::new(format!("cell {}", c.addr), "duplicate definition"));
        }
        diags.extend(validate_cell(model, c));
    }
}

fn validate_exports(model: &SheetModel, diags: &mut Vec<Diagnostic>) {
    let mut names = BTreeMap::new();
    for (i, e) in model.exports.iter().enumerate() {
        let loc = format!("exports[{i}] ({})", e.name);
        if !is_identifier(&e.name) {
            diags.push(Diagnostic::new(&loc, "export name must be an identifier"));
        }
        if RESERVED_OUTPUT_NAMES.contains(&e.name.as_str()) {
            diags.push(Diagnostic::new(&loc, format!("export name `{}` is reserved", e.name)));
        }
        if let Some(prev) = names.insert(e.name.as_str(), i) {
            diags.push(Diagnostic::new(&loc, format!("duplicate export name (also exports[{prev}])")));
        }
        match model.cell(e.addr) {
            Some(c) if c.ast.as_window().is_some() => diags
                .push(Diagnostic::new(&loc, format!("{} is a WINDOW cell; export an aggregate of it instead", e.addr))),
            Some(_) => {}
            None if model.binding_at(e.addr).is_some() => {}
            None => diags.push(Diagnostic::new(&loc, format!("{} is neither a formula cell nor stream-bound", e.addr))),
        }
    }
}

/// Every violated model invariant, one diagnostic each. References to cells
/// that are neither bound nor defined are allowed; they read as blank.
pub fn validate(model: &SheetModel) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    validate_streams(model, &mut diags);
    diags.extend(partition::check_keys(model));
    validate_bindings(model, &mut diags);
    validate_cells(model, &mut diags);
    validate_exports(model, &mut diags);
    diags
}
