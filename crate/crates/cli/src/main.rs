use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rsmp_cli::{
    evaluate, format_itr, itr, report, rsq, simulate, EvaluateArgs, Failure, ItrArgs, ReportArgs, RsqArgs, SimulateArgs,
};

/// Simulate, decode and score rapid serial multimodal presentation P300 sessions.
#[derive(Debug, Parser)]
#[command(name = "rsmp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic recordings and stimulus schedules.
    Simulate(SimulateArgs),
    /// Decode simulated sessions (leave-one-out or train/test).
    Evaluate(EvaluateArgs),
    /// Information transfer rates from an accuracy table.
    Itr(ItrArgs),
    /// r² maps, significance masks and grand averages.
    Rsq(RsqArgs),
    /// evaluate, itr and rsq in one output directory.
    Report(ReportArgs),
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("RSMP_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(format!("RSMP_THREADS must be a positive integer, got '{value}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Usage(e.to_string()))
}

fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    match cli.command {
        Command::Simulate(args) => {
            for p in simulate(&args)? {
                println!("{}: {} trials, {} events, {} samples", p.phase, p.n_trials, p.n_events, p.n_samples);
            }
        }
        Command::Evaluate(args) => {
            let report = evaluate(&args)?;
            for a in &report.per_repetition {
                println!("R={:<2} {:>3}/{:<3} {:.1}%", a.repetitions, a.correct, a.total, 100.0 * a.accuracy);
            }
        }
        Command::Itr(args) => print!("{}", format_itr(&itr(&args)?)),
        Command::Rsq(args) => {
            let s = rsq(&args)?;
            println!("{} of {} cells significant at alpha {}", s.n_significant, s.n_cells, s.alpha);
            if let Some(p) = s.peak_significant {
                println!("peak: {} at {:.3} s, r² = {:.3}", p.channel, p.time_s, p.rsq);
            }
        }
        Command::Report(args) => {
            let r = report(&args)?;
            let last = r.evaluation.per_repetition.last();
            if let Some(a) = last {
                println!("accuracy at R={}: {:.1}%", a.repetitions, 100.0 * a.accuracy);
            }
            print!("{}", format_itr(&r.itr));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
