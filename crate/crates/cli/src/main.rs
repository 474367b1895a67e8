//! Command-line interface for point-cloud dataset distillation.

mod commands;
mod config;
mod manifest;

use clap::{Parser, Subcommand};
use pcdistill::Error;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "pcdistill", version, about = "Distill labeled point-cloud datasets into small synthetic sets")]
struct Cli {
    /// Worker threads for parallel sections (per-class losses, eval repeats).
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic-shape dataset.
    GenToy(commands::GenToyArgs),
    /// Import a directory of OFF meshes as a dataset.
    ImportOff(commands::ImportOffArgs),
    /// Select a representative subset of a dataset.
    Coreset(commands::CoresetArgs),
    /// Distill a dataset into a small learned synthetic set.
    Distill(commands::DistillArgs),
    /// Train a classifier on one dataset and score another.
    Eval(commands::EvalArgs),
    /// Export dataset clouds as colored PLY files.
    ExportPly(commands::ExportPlyArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(commands::GradcheckArgs),
}

/// Maps an error to the stderr domain tag and the process exit code.
fn describe(err: &Error) -> (&'static str, u8) {
    match err {
        Error::Io { .. } => ("io", 1),
        Error::Parse { .. } => ("format", 1),
        Error::Config(_) => ("config", 1),
        Error::Invalid(_) => ("data", 1),
        Error::Diverged(_) => ("diverge", 2),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    if cli.jobs == 0 {
        eprintln!("ERROR config: --jobs must be at least 1");
        return ExitCode::from(1);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global() {
        eprintln!("ERROR config: cannot configure {} worker threads: {e}", cli.jobs);
        return ExitCode::from(1);
    }

    let result = match &cli.command {
        Command::GenToy(args) => commands::cmd_gen_toy(args),
        Command::ImportOff(args) => commands::cmd_import_off(args),
        Command::Coreset(args) => commands::cmd_coreset(args),
        Command::Distill(args) => commands::cmd_distill(args),
        Command::Eval(args) => commands::cmd_eval(args),
        Command::ExportPly(args) => commands::cmd_export_ply(args),
        Command::Gradcheck(args) => commands::cmd_gradcheck(args),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (domain, code) = describe(&e);
            let message = e.to_string().replace('\n', " ");
            eprintln!("ERROR {domain}: {message}");
            ExitCode::from(code)
        }
    }
}
