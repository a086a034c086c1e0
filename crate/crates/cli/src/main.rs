mod args;
mod commands;
mod interactive;

use std::process::ExitCode;

use clap::Parser;
use insertkit_adapters::AdapterError;
use insertkit_eval::EvalError;
use insertkit_pipeline::PipelineError;

use args::{Cli, Command};
use commands::Diverged;

const EXIT_FAILURE: u8 = 1;
const EXIT_MISSING_WEIGHTS: u8 = 3;
const EXIT_DIVERGED: u8 = 4;

fn missing_weights(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        matches!(e.downcast_ref::<AdapterError>(), Some(AdapterError::MissingWeights { .. }))
    })
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if missing_weights(err) {
        EXIT_MISSING_WEIGHTS
    } else if err.chain().any(|e| {
        e.is::<Diverged>() || matches!(e.downcast_ref::<PipelineError>(), Some(PipelineError::ReplayMismatch(_)))
    }) {
        EXIT_DIVERGED
    } else {
        EXIT_FAILURE
    }
}

/// Pipeline stage named by the error, if any.
fn failed_stage(err: &anyhow::Error) -> Option<String> {
    err.chain().find_map(|e| {
        let p = e
            .downcast_ref::<PipelineError>()
            .or_else(|| match e.downcast_ref::<EvalError>() {
                Some(EvalError::Pipeline(p)) => Some(p),
                _ => None,
            })?;
        p.stage().map(str::to_string)
    })
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Insert(_) => "insert",
        Command::GenerateBg(_) => "generate-bg",
        Command::Colorize(_) => "colorize",
        Command::Segment(_) => "segment",
        Command::Evaluate(_) => "evaluate",
        Command::BenchAssemble(_) => "bench-assemble",
        Command::StudyBundle(_) => "study-bundle",
        Command::FetchModels(_) => "fetch-models",
        Command::Serve(_) => "serve",
        Command::Replay(_) => "replay",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();

    let name = command_name(&cli.command);
    let result = match cli.command {
        Command::Insert(a) => commands::insert(a),
        Command::GenerateBg(a) => commands::generate_bg(a),
        Command::Colorize(a) => commands::colorize(a),
        Command::Segment(a) => commands::segment(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::BenchAssemble(a) => commands::bench_assemble(a),
        Command::StudyBundle(a) => commands::study_bundle(a),
        Command::FetchModels(a) => commands::fetch(a),
        Command::Serve(a) => commands::serve(a),
        Command::Replay(a) => commands::replay_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let label = failed_stage(&err).unwrap_or_else(|| name.to_string());
            eprintln!("error [{label}]: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
