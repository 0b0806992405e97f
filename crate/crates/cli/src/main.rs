mod args;
mod commands;
mod manifest;
mod plot;

use std::io::IsTerminal;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;
use tracing::error;
use tracing_subscriber::EnvFilter;

use args::{Cli, Command};
use manifest::RunRecorder;

/// Bad flags or arguments; maps to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

const EXIT_RUNTIME: u8 = 1;
const EXIT_USAGE: u8 = 2;

fn init_logging(quiet: bool, json: bool) {
    let default = if quiet { "warn" } else { "info" };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default));
    let builder = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_ansi(std::io::stderr().is_terminal())
        .with_writer(std::io::stderr);
    if json {
        builder.json().init();
    } else {
        builder.init();
    }
}

fn init_workers() -> Result<()> {
    let Ok(raw) = std::env::var("CTF_NUM_WORKERS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| UsageError(format!("CTF_NUM_WORKERS={raw:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the worker pool")
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::GenShapes(_) => "gen-shapes",
        Command::GenData(_) => "gen-data",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Stress(_) => "stress",
        Command::Plot(_) => "plot",
        Command::Rerun(_) => "rerun",
    }
}

/// Directory that receives the run manifest.
fn run_dir(cmd: &Command) -> Option<PathBuf> {
    match cmd {
        Command::GenShapes(a) => Some(a.out.clone()),
        Command::GenData(a) => Some(a.out.clone()),
        Command::Train(a) => Some(a.out.clone()),
        Command::Eval(a) => Some(a.target.out.clone()),
        Command::Stress(a) => Some(a.target.out.clone()),
        Command::Plot(a) => Some(
            a.out
                .parent()
                .filter(|d| !d.as_os_str().is_empty())
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from(".")),
        ),
        Command::Rerun(_) => None,
    }
}

fn dispatch(cli: &Cli, argv: &[String]) -> Result<()> {
    if let Command::Rerun(a) = &cli.command {
        let m = manifest::read(&a.manifest)?;
        let replay = Cli::try_parse_from(&m.argv).map_err(|e| UsageError(format!("recorded argv: {e}")))?;
        if matches!(replay.command, Command::Rerun(_)) {
            return Err(UsageError("a manifest cannot replay another rerun".into()).into());
        }
        return dispatch(&replay, &m.argv);
    }
    let mut rec = RunRecorder::new(command_name(&cli.command), argv);
    let result = match &cli.command {
        Command::GenShapes(a) => commands::gen_shapes(a, &mut rec),
        Command::GenData(a) => commands::gen_data(a, &mut rec),
        Command::Train(a) => commands::train_cmd(a, &mut rec),
        Command::Eval(a) => commands::eval_cmd(a, &mut rec),
        Command::Stress(a) => commands::stress_cmd(a, &mut rec),
        Command::Plot(a) => plot::plot(a, &mut rec).map(|_| ()),
        Command::Rerun(_) => unreachable!(),
    };
    let usage = result.as_ref().err().is_some_and(|e| e.is::<UsageError>());
    if let (Some(dir), false) = (run_dir(&cli.command), usage) {
        let status = match &result {
            Ok(()) => "ok".to_string(),
            Err(e) => format!("failed: {e:#}"),
        };
        rec.finish(&dir, &status)?;
    }
    result
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    init_logging(cli.quiet, cli.json_logs);
    match init_workers().and_then(|()| dispatch(&cli, &argv)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(e) => {
            error!("{e:#}");
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
