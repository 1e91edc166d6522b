use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use truncheck_cli::{cmd_corpus, cmd_reproduce, cmd_run, parse_kind, Settings};
use truncheck_core::ReplaySpec;

/// Concolic detector for numeric truncation bugs in a small assembly
/// dialect.
#[derive(Parser)]
#[command(name = "truncheck", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct AnalysisFlags {
    /// Candidate assignments the solver may enumerate per job.
    #[arg(long, default_value_t = 1 << 20)]
    solver_budget: u64,
    /// Solver worker threads; 1 solves inline.
    #[arg(long, default_value_t = 1)]
    solver_workers: usize,
    /// Executed-instruction cap per program run.
    #[arg(long, default_value_t = 1_000_000)]
    step_limit: u64,
    /// Directory for witness input files.
    #[arg(long, default_value = "truncheck-out")]
    out: PathBuf,
    /// Directory for SMT-LIB scripts of undecided jobs.
    #[arg(long)]
    smt2_dir: Option<PathBuf>,
    /// Also report unsat and unknown warnings, and print run statistics.
    #[arg(long, short)]
    verbose: bool,
}

impl AnalysisFlags {
    fn settings(&self) -> Settings {
        Settings {
            solver_budget: self.solver_budget,
            solver_workers: self.solver_workers,
            step_limit: self.step_limit,
            out_dir: self.out.clone(),
            smt2_dir: self.smt2_dir.clone(),
            verbose: self.verbose,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Analyze one program and print confirmed truncation warnings as
    /// JSON lines.
    Run {
        /// Assembly program to analyze.
        program: PathBuf,
        /// Seed input bytes; defaults to an empty input.
        #[arg(long)]
        input: Option<PathBuf>,
        #[command(flatten)]
        flags: AnalysisFlags,
    },
    /// Re-run a program on a witness input and check that the flagged
    /// instruction really drops meaningful bits.
    Reproduce {
        /// Assembly program the warning came from.
        program: PathBuf,
        /// Witness input bytes.
        #[arg(long)]
        input: PathBuf,
        /// Instruction index of the warning.
        #[arg(long)]
        insn: usize,
        /// Warning kind: signed or unsigned.
        #[arg(long)]
        kind: String,
        /// Lowest dropped bit.
        #[arg(long)]
        low: u32,
        /// Highest dropped bit.
        #[arg(long)]
        high: u32,
        /// Executed-instruction cap.
        #[arg(long, default_value_t = 1_000_000)]
        step_limit: u64,
    },
    /// Run a corpus manifest and print per-case verdicts plus accuracy.
    Corpus {
        /// Manifest listing programs, seeds, and expectations.
        manifest: PathBuf,
        #[command(flatten)]
        flags: AnalysisFlags,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            program,
            input,
            flags,
        } => cmd_run(program, input.as_deref(), &flags.settings()),
        Command::Reproduce {
            program,
            input,
            insn,
            kind,
            low,
            high,
            step_limit,
        } => parse_kind(kind).and_then(|kind| {
            let spec = ReplaySpec {
                insn: *insn,
                kind,
                low: *low,
                high: *high,
            };
            cmd_reproduce(program, input, &spec, *step_limit)
        }),
        Command::Corpus { manifest, flags } => cmd_corpus(manifest, &flags.settings()),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(3)
        }
    }
}
