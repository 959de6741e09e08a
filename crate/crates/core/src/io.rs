//! Tuple ingestion, deterministic multi-stream merge, and output emission.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::engine::Program;
use crate::model::{AttrType, SheetModel, StreamDecl};
use crate::partition::{Key, Operator, Outcome, RouteError, DEFAULT_MAX_PARTITIONS};
use crate::value::{format_number, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    /// `.jsonl`, `.ndjson` and `.json` are JSON lines; anything else is CSV.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "ndjson" | "json") => Format::Jsonl,
            _ => Format::Csv,
        }
    }
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "jsonl" => Ok(Format::Jsonl),
            other => Err(format!("unknown format `{other}` (expected csv or jsonl)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Source {
    pub path: PathBuf,
    pub format: Format,
}

impl Source {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        let path = path.into();
        let format = Format::from_path(&path);
        Self { path, format }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TupleRecord {
    pub stream: String,
    pub values: Vec<Value>,
    pub ts: u64,
    /// 0-based position in merge order across all streams.
    pub seq: u64,
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("no input source for stream `{0}`")]
    MissingSource(String),
    #[error("input source given for undeclared stream `{0}`")]
    UnknownStream(String),
    #[error("stream `{stream}` has no ts_attr; only a single-stream model without WINDOW may omit timestamps")]
    MissingTimestamp { stream: String },
    #[error("cannot open {}: {source}", path.display())]
    Open { path: PathBuf, source: io::Error },
    #[error("stream `{stream}`: header {found:?} does not match schema {expected:?}")]
    Header { stream: String, expected: Vec<String>, found: Vec<String> },
    #[error("stream `{stream}` row {row}, column `{column}`: {message}")]
    Value { stream: String, row: u64, column: String, message: String },
    #[error("stream `{stream}` row {row}: {message}")]
    Row { stream: String, row: u64, message: String },
    #[error("stream `{stream}` row {row}: timestamp {ts} is older than the previous timestamp {last}")]
    OutOfOrder { stream: String, row: u64, ts: u64, last: u64 },
}

enum RowSource {
    Csv(csv::Reader<Box<dyn Read>>),
    Jsonl { lines: io::Lines<Box<dyn BufRead>>, line: u64 },
}

struct StreamReader {
    decl: StreamDecl,
    ts_index: Option<usize>,
    rows: RowSource,
    row_index: u64,
    last_ts: Option<u64>,
    head: Option<(u64, Vec<Value>)>,
    done: bool,
}

fn parse_field(decl: &StreamDecl, row: u64, attr: usize, text: &str) -> Result<Value, IoError> {
    let a = &decl.attrs[attr];
    let bad = |message: String| IoError::Value { stream: decl.name.clone(), row, column: a.name.clone(), message };
    match a.ty {
        AttrType::Text => Ok(Value::Text(text.to_string())),
        AttrType::Number => match text.trim().parse::<f64>() {
            Ok(n) if n.is_finite() => Ok(Value::number(n)),
            _ => Err(bad(format!("`{text}` is not a finite number"))),
        },
        AttrType::Timestamp => match text.trim().parse::<u64>() {
            Ok(n) => Ok(Value::Number(n as f64)),
            Err(_) => Err(bad(format!("`{text}` is not a non-negative integer millisecond timestamp"))),
        },
    }
}

fn json_field(decl: &StreamDecl, row: u64, attr: usize, v: &serde_json::Value) -> Result<Value, IoError> {
    let a = &decl.attrs[attr];
    let bad = |message: String| IoError::Value { stream: decl.name.clone(), row, column: a.name.clone(), message };
    match (a.ty, v) {
        (AttrType::Text, serde_json::Value::String(s)) => Ok(Value::Text(s.clone())),
        (AttrType::Number, serde_json::Value::Number(n)) => {
            n.as_f64().filter(|f| f.is_finite()).map(Value::number).ok_or_else(|| bad(format!("{n} is out of range")))
        }
        (AttrType::Timestamp, serde_json::Value::Number(n)) => n
            .as_u64()
            .map(|t| Value::Number(t as f64))
            .ok_or_else(|| bad(format!("{n} is not a non-negative integer millisecond timestamp"))),
        (ty, other) => Err(bad(format!("expected a {ty} value, got {other}"))),
    }
}

impl StreamReader {
    fn open(decl: &StreamDecl, reader: Box<dyn Read>, format: Format) -> Result<Self, IoError> {
        let names: Vec<String> = decl.attrs.iter().map(|a| a.name.clone()).collect();
        let rows = match format {
            Format::Csv => {
                let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
                let header: Vec<String> = r
                    .headers()
                    .map_err(|e| IoError::Row { stream: decl.name.clone(), row: 1, message: e.to_string() })?
                    .iter()
                    .map(str::to_string)
                    .collect();
                if header != names {
                    return Err(IoError::Header { stream: decl.name.clone(), expected: names, found: header });
                }
                RowSource::Csv(r)
            }
            Format::Jsonl => {
                let buffered: Box<dyn BufRead> = Box::new(BufReader::new(reader));
                RowSource::Jsonl { lines: buffered.lines(), line: 0 }
            }
        };
        let ts_index = decl.ts_attr.as_deref().and_then(|t| decl.attr_index(t));
        Ok(Self { decl: decl.clone(), ts_index, rows, row_index: 0, last_ts: None, head: None, done: false })
    }

    /// Reads the next tuple as `(ts, values)`.
    fn read(&mut self) -> Result<Option<(u64, Vec<Value>)>, IoError> {
        let stream = self.decl.name.clone();
        let (row, values) = match &mut self.rows {
            RowSource::Csv(r) => {
                let mut rec = csv::StringRecord::new();
                let more = r.read_record(&mut rec).map_err(|e| IoError::Row {
                    stream: stream.clone(),
                    row: e.position().map_or(0, |p| p.line()),
                    message: e.to_string(),
                })?;
                if !more {
                    return Ok(None);
                }
                let row = rec.position().map_or(0, |p| p.line());
                if rec.len() != self.decl.attrs.len() {
                    return Err(IoError::Row {
                        stream,
                        row,
                        message: format!("expected {} fields, found {}", self.decl.attrs.len(), rec.len()),
                    });
                }
                let values = rec.iter().enumerate().map(|(i, f)| parse_field(&self.decl, row, i, f)).collect::<Result<
                    Vec<_>,
                    _,
                >>(
                )?;
                (row, values)
            }
            RowSource::Jsonl { lines, line } => loop {
                let Some(text) = lines.next() else { return Ok(None) };
                *line += 1;
                let row = *line;
                let text = text.map_err(|e| IoError::Row { stream: stream.clone(), row, message: e.to_string() })?;
                if text.trim().is_empty() {
                    continue;
                }
                let obj: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&text)
                    .map_err(|e| IoError::Row { stream: stream.clone(), row, message: e.to_string() })?;
                if let Some(extra) = obj.keys().find(|k| self.decl.attr(k).is_none()) {
                    return Err(IoError::Row { stream, row, message: format!("unknown attribute `{extra}`") });
                }
                let mut values = Vec::with_capacity(self.decl.attrs.len());
                for (i, a) in self.decl.attrs.iter().enumerate() {
                    let v = obj.get(&a.name).ok_or_else(|| IoError::Value {
                        stream: stream.clone(),
                        row,
                        column: a.name.clone(),
                        message: "missing".into(),
                    })?;
                    values.push(json_field(&self.decl, row, i, v)?);
                }
                break (row, values);
            },
        };
        let ts = match self.ts_index {
            Some(i) => values[i].as_number().expect("timestamp parsed as number") as u64,
            None => self.row_index,
        };
        self.row_index += 1;
        if let Some(last) = self.last_ts {
            if ts < last {
                return Err(IoError::OutOfOrder { stream, row, ts, last });
            }
        }
        self.last_ts = Some(ts);
        Ok(Some((ts, values)))
    }

    fn fill(&mut self) -> Result<(), IoError> {
        if self.head.is_none() && !self.done {
            match self.read()? {
                Some(t) => self.head = Some(t),
                None => self.done = true,
            }
        }
        Ok(())
    }
}

/// Merges per-stream readers: ascending timestamp, ties broken by stream
/// declaration order, then by order within the source.
pub struct MergedCursor {
    readers: Vec<StreamReader>,
    seq: u64,
    failed: bool,
}

impl MergedCursor {
    /// Builds a cursor from already-open readers, keyed by stream name.
    pub fn from_readers(
        model: &SheetModel,
        mut inputs: BTreeMap<String, (Box<dyn Read>, Format)>,
    ) -> Result<Self, IoError> {
        if let Some(name) = inputs.keys().find(|n| model.stream(n).is_none()) {
            return Err(IoError::UnknownStream(name.clone()));
        }
        let needs_ts = model.streams.len() > 1 || model.has_window();
        let mut readers = Vec::with_capacity(model.streams.len());
        for decl in &model.streams {
            if decl.ts_attr.is_none() && needs_ts {
                return Err(IoError::MissingTimestamp { stream: decl.name.clone() });
            }
            let (reader, format) =
                inputs.remove(&decl.name).ok_or_else(|| IoError::MissingSource(decl.name.clone()))?;
            readers.push(StreamReader::open(decl, reader, format)?);
        }
        Ok(Self { readers, seq: 0, failed: false })
    }

    fn try_next(&mut self) -> Result<Option<TupleRecord>, IoError> {
        for r in &mut self.readers {
            r.fill()?;
        }
        let Some(best) = self
            .readers
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.head.as_ref().map(|(ts, _)| (*ts, i)))
            .min()
            .map(|(_, i)| i)
        else {
            return Ok(None);
        };
        let reader = &mut self.readers[best];
        let (ts, values) = reader.head.take().expect("head present");
        let seq = self.seq;
        self.seq += 1;
        Ok(Some(TupleRecord { stream: reader.decl.name.clone(), values, ts, seq }))
    }
}

impl Iterator for MergedCursor {
    type Item = Result<TupleRecord, IoError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        match self.try_next() {
            Ok(r) => r.map(Ok),
            Err(e) => {
                self.failed = true;
                Some(Err(e))
            }
        }
    }
}

/// Opens one source file per declared stream and merges them.
pub fn open_inputs(model: &SheetModel, sources: &BTreeMap<String, Source>) -> Result<MergedCursor, IoError> {
    let mut inputs = BTreeMap::new();
    for (name, src) in sources {
        if model.stream(name).is_none() {
            return Err(IoError::UnknownStream(name.clone()));
        }
        let file = File::open(&src.path).map_err(|e| IoError::Open { path: src.path.clone(), source: e })?;
        let reader: Box<dyn Read> = Box::new(BufReader::with_capacity(1 << 16, file));
        inputs.insert(name.clone(), (reader, src.format));
    }
    MergedCursor::from_readers(model, inputs)
}

/// One emitted output tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputRecord {
    pub key: Option<Key>,
    /// Sequence number of the input tuple that triggered the emission.
    pub seq: u64,
    pub exports: Vec<(String, Value)>,
}

pub trait OutputSink {
    fn begin(&mut self, export_names: &[String], keyed: bool) -> io::Result<()>;
    fn emit(&mut self, record: &OutputRecord) -> io::Result<()>;
    fn finish(&mut self) -> io::Result<()>;
}

pub struct CsvSink<W: Write> {
    writer: csv::Writer<W>,
}

impl<W: Write> CsvSink<W> {
    pub fn new(out: W) -> Self {
        let writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        Self { writer }
    }

    pub fn into_inner(self) -> W {
        self.writer.into_inner().map_err(|e| e.into_error()).expect("flushed")
    }
}

fn csv_err(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

impl<W: Write> OutputSink for CsvSink<W> {
    fn begin(&mut self, export_names: &[String], keyed: bool) -> io::Result<()> {
        let mut header: Vec<&str> = Vec::with_capacity(export_names.len() + 2);
        if keyed {
            header.push("__key");
        }
        header.push("__seq");
        header.extend(export_names.iter().map(String::as_str));
        self.writer.write_record(&header).map_err(csv_err)
    }

    fn emit(&mut self, record: &OutputRecord) -> io::Result<()> {
        let mut fields: Vec<String> = Vec::with_capacity(record.exports.len() + 2);
        if let Some(k) = &record.key {
            fields.push(k.to_string());
        }
        fields.push(record.seq.to_string());
        fields.extend(record.exports.iter().map(|(_, v)| v.to_string()));
        self.writer.write_record(&fields).map_err(csv_err)
    }

    fn finish(&mut self) -> io::Result<()> {
        self.writer.flush()
    }
}

pub struct JsonlSink<W: Write> {
    out: W,
}

impl<W: Write> JsonlSink<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// JSON text for an output value: errors as their code strings, blank as null.
pub fn value_json(v: &Value) -> String {
    match v {
        Value::Number(n) => format_number(*n),
        Value::Text(s) => serde_json::to_string(s).expect("string serializes"),
        Value::Bool(b) => b.to_string(),
        Value::Blank => "null".into(),
        Value::Error(_) | Value::Window(_) => serde_json::to_string(&v.to_string()).expect("string serializes"),
    }
}

impl<W: Write> OutputSink for JsonlSink<W> {
    fn begin(&mut self, _export_names: &[String], _keyed: bool) -> io::Result<()> {
        Ok(())
    }

    fn emit(&mut self, record: &OutputRecord) -> io::Result<()> {
        let mut line = String::from("{");
        if let Some(k) = &record.key {
            line.push_str("\"__key\":");
            line.push_str(&value_json(&k.to_value()));
            line.push(',');
        }
        line.push_str(&format!("\"__seq\":{}", record.seq));
        for (name, v) in &record.exports {
            line.push(',');
            line.push_str(&serde_json::to_string(name).expect("string serializes"));
            line.push(':');
            line.push_str(&value_json(v));
        }
        line.push_str("}\n");
        self.out.write_all(line.as_bytes())
    }

    fn finish(&mut self) -> io::Result<()> {
        self.out.flush()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    pub max_partitions: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { max_partitions: DEFAULT_MAX_PARTITIONS }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunStats {
    pub tuples_in: u64,
    pub tuples_dropped_by_select: u64,
    pub outputs_emitted: u64,
    pub partitions_created: u64,
}

impl std::fmt::Display for RunStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "tuples_in={} tuples_dropped_by_select={} outputs_emitted={} partitions_created={}",
            self.tuples_in, self.tuples_dropped_by_select, self.outputs_emitted, self.partitions_created
        )
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("input #{seq}: {source}")]
    Input { seq: u64, source: IoError },
    #[error("input #{seq}: {source}")]
    Route { seq: u64, source: RouteError },
    #[error("writing output: {0}")]
    Output(#[from] io::Error),
}

/// Runs `operator` over `cursor`, emitting one output record per input tuple
/// that changes any exported cell.
pub fn run_operator(
    operator: &mut Operator,
    cursor: impl IntoIterator<Item = Result<TupleRecord, IoError>>,
    sink: &mut dyn OutputSink,
) -> Result<RunStats, RunError> {
    let names: Vec<String> = operator.model().exports.iter().map(|e| e.name.clone()).collect();
    sink.begin(&names, operator.model().partitioned())?;
    let mut stats = RunStats::default();
    for record in cursor {
        let record = record.map_err(|source| RunError::Input { seq: stats.tuples_in, source })?;
        stats.tuples_in += 1;
        let outcome = operator
            .process(&record.stream, &record.values, record.ts)
            .map_err(|source| RunError::Route { seq: record.seq, source })?;
        match outcome {
            Outcome::Dropped => stats.tuples_dropped_by_select += 1,
            Outcome::Applied { key, changes } if changes.exports_changed => {
                let instance = operator.instance(key.as_ref()).expect("instance just applied");
                sink.emit(&OutputRecord { seq: record.seq, exports: instance.exports(), key })?;
                stats.outputs_emitted += 1;
            }
            Outcome::Applied { .. } => {}
        }
    }
    sink.finish()?;
    stats.partitions_created = operator.partitions() as u64;
    Ok(stats)
}

pub fn run(
    program: Arc<Program>,
    cursor: impl IntoIterator<Item = Result<TupleRecord, IoError>>,
    sink: &mut dyn OutputSink,
    config: &RunConfig,
) -> Result<RunStats, RunError> {
    let mut operator = Operator::new(program, config.max_partitions);
    run_operator(&mut operator, cursor, sink)
}
