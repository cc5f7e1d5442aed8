use std::ffi::OsString;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

mod commands;
mod config;
mod render;

use commands::*;

/// Stamp verification and detection with ranked K-means filters.
#[derive(Parser, Debug)]
#[command(name = "stampfeat", version)]
struct Cli {
    /// Read default flags from a `key = value` file; explicit flags win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<std::path::PathBuf>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Render a synthetic dataset: stamp pages, non-stamp crops and a manifest.
    Synth(SynthArgs),
    /// Learn whitening, dictionary and atom ranking from the stamp rows of a manifest.
    LearnDict(LearnArgs),
    /// Re-rank a model's atoms and reselect the subset.
    Rank(RankArgs),
    /// Write verification features of every manifest row to CSV.
    Extract(ExtractArgs),
    /// Train the linear SVM on the training split of a manifest.
    Train(TrainArgs),
    /// Evaluate the model's SVM on the held-out split of a manifest.
    Eval(EvalArgs),
    /// Locate the stamp on each page.
    Detect(DetectArgs),
    /// Compare ranked, full, Gabor and random filter sets on one split.
    Bench(BenchArgs),
    /// Write atoms and the ranked atom mosaic as PNG files.
    DumpAtoms(DumpArgs),
}

fn parse(args: Vec<OsString>) -> Result<Cli, clap::Error> {
    let cmd = Cli::command().mut_subcommands(|s| s.args_override_self(true));
    let matches = cmd.try_get_matches_from(args)?;
    Cli::from_arg_matches(&matches)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Cmd::Synth(a) => synth(a),
        Cmd::LearnDict(a) => learn_dict(a),
        Cmd::Rank(a) => rank(a),
        Cmd::Extract(a) => extract(a),
        Cmd::Train(a) => train(a),
        Cmd::Eval(a) => eval(a),
        Cmd::Detect(a) => detect(a),
        Cmd::Bench(a) => bench(a),
        Cmd::DumpAtoms(a) => dump_atoms(a),
    }
}

fn one_line(msg: &str) -> String {
    msg.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Context chain joined by ": ", skipping causes whose text the previous
/// message already contains.
fn chain(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if out.contains(&msg) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&msg);
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match config::expand(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {}", one_line(&format!("{e:#}")));
            return ExitCode::from(2);
        }
    };
    let cli = match parse(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("{}", one_line(first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&chain(&e)));
            ExitCode::FAILURE
        }
    }
}
