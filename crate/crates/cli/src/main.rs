use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sheetstream::commands::{self, RunArgs, EXIT_FAILED, EXIT_IO};
use sheetstream::serve::{self, ServeConfig, ServeError};
use sheetstream_core::io::Format;

#[derive(Parser)]
#[command(name = "sheetstream", version, about = "Spreadsheet-defined operators over timestamped streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a model file.
    Check { model: PathBuf },
    /// Run a model over input files and write the exported cells.
    Run {
        model: PathBuf,
        /// Input file for one stream, as NAME=PATH (.jsonl/.ndjson read as JSON lines, else CSV).
        #[arg(long = "input", value_name = "NAME=PATH", value_parser = commands::parse_input)]
        inputs: Vec<(String, PathBuf)>,
        /// Output file; standard output when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value = "csv", value_parser = ["csv", "jsonl"])]
        format: String,
        #[arg(long, default_value_t = 10_000)]
        max_partitions: usize,
    },
    /// Replay inputs into a live session served over HTTP and websocket.
    Serve {
        model: PathBuf,
        /// Input file for one stream, as NAME=PATH
        #[arg(long = "input", value_name = "NAME=PATH", value_parser = commands::parse_input)]
        inputs: Vec<(String, PathBuf)>,
        #[arg(long, default_value_t = 8080, value_parser = clap::value_parser!(u16).range(1..))]
        port: u16,
        /// 0 replays as fast as possible, 1 in timestamp time, 2 twice as fast.
        #[arg(long, default_value_t = 0.0, value_parser = parse_speed)]
        replay_speed: f64,
        /// Start with replay paused.
        #[arg(long)]
        paused: bool,
        /// Directory holding the browser UI; a placeholder page is served otherwise.
        #[arg(long)]
        static_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        max_partitions: usize,
    },
}

fn parse_speed(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(x) if x.is_finite() && x >= 0.0 => Ok(x),
        _ => Err(format!("expected a finite number >= 0, got `{s}`")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Check { model } => commands::check(&model, &mut io::stdout(), &mut io::stderr()),
        Command::Run { model, inputs, output, format, max_partitions } => {
            let format: Format = format.parse().expect("clap restricts the format");
            commands::run(&RunArgs { model, inputs, output, format, max_partitions }, &mut io::stderr())
        }
        Command::Serve { model, inputs, port, replay_speed, paused, static_dir, max_partitions } => {
            serve_cmd(model, inputs, port, replay_speed, paused, static_dir, max_partitions)
        }
    };
    ExitCode::from(code as u8)
}

fn serve_cmd(
    model: PathBuf,
    inputs: Vec<(String, PathBuf)>,
    port: u16,
    replay_speed: f64,
    paused: bool,
    static_dir: Option<PathBuf>,
    max_partitions: usize,
) -> i32 {
    let program = match commands::compile(&model) {
        Ok(p) => p,
        Err(e) => {
            e.report(&mut io::stderr());
            return e.exit_code();
        }
    };
    let sources = match commands::sources(&inputs) {
        Ok(s) => s,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_FAILED;
        }
    };
    let config = ServeConfig { sources, port, replay_speed, paused, static_dir, max_partitions };
    let runtime = tokio::runtime::Runtime::new().expect("tokio runtime");
    // Register the handler before the listening line goes out.
    #[cfg(unix)]
    let shutdown = {
        use tokio::signal::unix::{signal, SignalKind};
        let _guard = runtime.enter();
        let mut int = signal(SignalKind::interrupt()).expect("signal handler");
        let mut term = signal(SignalKind::terminate()).expect("signal handler");
        async move {
            tokio::select! {
                _ = int.recv() => {}
                _ = term.recv() => {}
            }
        }
    };
    #[cfg(not(unix))]
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    match runtime.block_on(serve::serve(program, config, shutdown)) {
        Ok(outcome) => {
            println!("{}", outcome.model.to_json());
            0
        }
        Err(e @ ServeError::Bind { .. }) => {
            eprintln!("error: {e}");
            EXIT_IO
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILED
        }
    }
}
