use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use chainflow_core::engine::Design;
use chainflow_sim::batch::{run_batch, Mode};
use chainflow_sim::oracle;
use chainflow_sim::{generate, metrics, run, RunReport, Scenario};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "simctl", about = "Deterministic multi-node workflow network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Random,
    Race,
    Mirrored,
    Latency,
    Fork,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file and evaluate its assertions.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the event trace as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write run metrics as CSV.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Override every node's engine design.
        #[arg(long)]
        design: Option<Design>,
    },
    /// Generate and run a numbered batch of scenarios.
    Suite {
        kind: Kind,
        #[arg(long, default_value_t = 100)]
        count: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Run on one thread even when parallel execution is available.
        #[arg(long)]
        sequential: bool,
        /// Override every node's engine design.
        #[arg(long)]
        design: Option<Design>,
    },
    /// Print a generated scenario as canonical JSON.
    Generate {
        kind: Kind,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        index: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check reachability against exhaustive enumeration on random nets.
    Oracle {
        #[arg(long, default_value_t = 500)]
        nets: usize,
        #[arg(long, default_value_t = 4)]
        queries: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn generated(kind: Kind, index: u64, seed: u64) -> Scenario {
    match kind {
        Kind::Random => generate::random(index, seed),
        Kind::Race => generate::deferred_choice_race(seed.wrapping_add(index), Design::Actions),
        Kind::Mirrored => generate::mirrored(index, seed),
        Kind::Latency => generate::latency([0, 2, 6][index as usize % 3], 0.05, 220, seed, Design::Actions),
        Kind::Fork => generate::forced_fork(seed.wrapping_add(index)),
    }
}

fn print_report(r: &RunReport) {
    println!(
        "{} seed={} design={} ticks={} quiescent={} blocks={} reorgs={}",
        r.scenario, r.seed, r.design, r.ticks, r.quiescent, r.metrics.blocks_mined, r.metrics.reorgs
    );
    for a in &r.assertions {
        println!("  {} {}: {}", if a.passed { "PASS" } else { "FAIL" }, a.name, a.evidence);
    }
}

fn write_metrics(path: &PathBuf, reports: &[&RunReport]) -> Result<(), String> {
    let f = File::create(path).map_err(|e| format!("{}: {e}", path.display()))?;
    metrics::write_csv(BufWriter::new(f), reports).map_err(|e| e.to_string())
}

fn main_inner(cli: Cli) -> Result<bool, String> {
    match cli.command {
        Command::Run { scenario, seed, trace, metrics, design } => {
            let mut s = Scenario::load(&scenario).map_err(|e| e.to_string())?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            if let Some(d) = design {
                s = s.with_design(d);
            }
            let report = run(&s).map_err(|e| e.to_string())?;
            if let Some(path) = trace {
                std::fs::write(&path, report.trace_jsonl()).map_err(|e| format!("{}: {e}", path.display()))?;
            }
            if let Some(path) = metrics {
                write_metrics(&path, &[&report])?;
            }
            print_report(&report);
            Ok(report.passed())
        }
        Command::Suite { kind, count, seed, metrics, sequential, design } => {
            let scenarios: Vec<Scenario> = (0..count)
                .map(|i| generated(kind, i, seed))
                .map(|s| match design {
                    Some(d) => s.with_design(d),
                    None => s,
                })
                .collect();
            let mode = if sequential { Mode::Sequential } else { Mode::best() };
            let results = run_batch(&scenarios, mode);
            let mut ok = true;
            let mut reports = Vec::new();
            for (s, r) in scenarios.iter().zip(&results) {
                match r {
                    Ok(r) => {
                        if !r.passed() {
                            print_report(r);
                            ok = false;
                        }
                        reports.push(r);
                    }
                    Err(e) => {
                        println!("{}: error: {e}", s.name);
                        ok = false;
                    }
                }
            }
            let passed = reports.iter().filter(|r| r.passed()).count();
            println!("{passed}/{count} scenarios passed");
            if let Some(path) = metrics {
                write_metrics(&path, &reports)?;
            }
            Ok(ok)
        }
        Command::Generate { kind, seed, index, out } => {
            let bytes = generated(kind, index, seed).to_canonical();
            match out {
                Some(path) => std::fs::write(&path, &bytes).map_err(|e| format!("{}: {e}", path.display()))?,
                None => {
                    let mut stdout = io::stdout().lock();
                    stdout.write_all(&bytes).and_then(|_| stdout.write_all(b"\n")).map_err(|e| e.to_string())?;
                }
            }
            Ok(true)
        }
        Command::Oracle { nets, queries, seed } => {
            let r = oracle::sweep(nets, queries, seed, Mode::best());
            println!("{} nets, {} queries ({} reachable), {} mismatches", r.nets, r.queries, r.reachable_queries, r.mismatches.len());
            for m in r.mismatches.iter().take(10) {
                println!("  net {}: {:?} -> {:?} expected {} got {}", m.net, m.from, m.to, m.expected, m.got);
            }
            Ok(r.mismatches.is_empty())
        }
    }
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("simctl: {e}");
            ExitCode::from(2)
        }
    }
}
