//! `check` and `run`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use sheetstream_core::io::{self as sio, CsvSink, Format, JsonlSink, OutputSink, RunConfig, Source};
use sheetstream_core::{load_model, Diagnostic, Program, SheetModel};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_IO: i32 = 2;

#[derive(Debug)]
pub enum LoadError {
    Io(PathBuf, io::Error),
    Invalid(Vec<Diagnostic>),
}

impl LoadError {
    pub fn exit_code(&self) -> i32 {
        match self {
            LoadError::Io(..) => EXIT_IO,
            LoadError::Invalid(_) => EXIT_FAILED,
        }
    }

    pub fn report(&self, err: &mut dyn Write) {
        match self {
            LoadError::Io(path, e) => {
                let _ = writeln!(err, "error: cannot read {}: {e}", path.display());
            }
            LoadError::Invalid(diags) => {
                for d in diags {
                    let _ = writeln!(err, "error: {d}");
                }
                let _ = writeln!(err, "{} problem(s) found", diags.len());
            }
        }
    }
}

pub fn load(path: &Path) -> Result<SheetModel, LoadError> {
    let text = fs::read_to_string(path).map_err(|e| LoadError::Io(path.to_path_buf(), e))?;
    load_model(&text).map_err(LoadError::Invalid)
}

/// Loads, validates and compiles a model file.
pub fn compile(path: &Path) -> Result<Program, LoadError> {
    Program::compile(load(path)?).map_err(LoadError::Invalid)
}

pub fn check(path: &Path, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match compile(path) {
        Ok(p) => {
            let m = p.model();
            let _ = writeln!(
                out,
                "ok: {} stream(s), {} binding(s), {} formula cell(s), {} export(s)",
                m.streams.len(),
                m.bindings.len(),
                m.cells.len(),
                m.exports.len()
            );
            EXIT_OK
        }
        Err(e) => {
            e.report(err);
            e.exit_code()
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunArgs {
    pub model: PathBuf,
    pub inputs: Vec<(String, PathBuf)>,
    /// Standard output when absent.
    pub output: Option<PathBuf>,
    pub format: Format,
    pub max_partitions: usize,
}

pub fn sources(inputs: &[(String, PathBuf)]) -> Result<BTreeMap<String, Source>, String> {
    let mut map = BTreeMap::new();
    for (name, path) in inputs {
        if map.insert(name.clone(), Source::new(path)).is_some() {
            return Err(format!("stream `{name}` given more than one --input"));
        }
    }
    Ok(map)
}

/// Parses `NAME=PATH`.
pub fn parse_input(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        _ => Err(format!("expected NAME=PATH, got `{s}`")),
    }
}

fn sink_for<'a, W: Write + 'a>(format: Format, w: W) -> Box<dyn OutputSink + 'a> {
    match format {
        Format::Csv => Box::new(CsvSink::new(w)),
        Format::Jsonl => Box::new(JsonlSink::new(w)),
    }
}

pub fn run(args: &RunArgs, err: &mut dyn Write) -> i32 {
    let program = match compile(&args.model) {
        Ok(p) => Arc::new(p),
        Err(e) => {
            e.report(err);
            return e.exit_code();
        }
    };
    let sources = match sources(&args.inputs) {
        Ok(s) => s,
        Err(msg) => {
            let _ = writeln!(err, "error: {msg}");
            return EXIT_FAILED;
        }
    };
    let cursor = match sio::open_inputs(program.model(), &sources) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_FAILED;
        }
    };
    let config = RunConfig { max_partitions: args.max_partitions };
    let result = match &args.output {
        Some(path) => {
            let file = match File::create(path) {
                Ok(f) => f,
                Err(e) => {
                    let _ = writeln!(err, "error: cannot create {}: {e}", path.display());
                    return EXIT_IO;
                }
            };
            let mut sink = sink_for(args.format, BufWriter::new(file));
            let r = sio::run(program, cursor, sink.as_mut(), &config);
            drop(sink);
            if r.is_err() {
                let _ = fs::remove_file(path);
            }
            r
        }
        None => {
            let stdout = io::stdout();
            let mut sink = sink_for(args.format, BufWriter::new(stdout.lock()));
            sio::run(program, cursor, sink.as_mut(), &config)
        }
    };
    match result {
        Ok(stats) => {
            let _ = writeln!(err, "{stats}");
            EXIT_OK
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_FAILED
        }
    }
}
