use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fasim::config::ScenarioConfig;
use fasim::sim::{self, RunOptions, RunOutcome, SimError};
use fasim::trace::{read_trace, Trace};
use fasim::Mode;

/// Overrides the output directory of `run`, `record` and `replay`.
const OUT_ENV: &str = "FASIM_OUT_DIR";

#[derive(Parser)]
#[command(name = "fasim", version, about = "Deterministic FTL simulator: stream-writes-by-time vs FlashAlloc")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Run a scenario and write windows.csv and report.json.
    Run(ScenarioArgs),
    /// Run a scenario and also save the issued command trace.
    Record {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        trace: PathBuf,
    },
    /// Re-execute a recorded trace.
    Replay(TraceArgs),
    /// Replay a trace through the engine and the reference model and compare.
    Check(TraceArgs),
    /// Recompute the report of a trace and print it as JSON.
    Report(TraceArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TraceArgs {
    #[arg(long)]
    trace: PathBuf,
    /// `vanilla` drops the FlashAlloc records.
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    /// Bad config or trace input: exit 2.
    Input(String),
    /// The simulation itself failed: exit 3.
    Sim(String),
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(c) => Failure::Input(c.to_string()),
            e => match e.seq() {
                Some(seq) => Failure::Sim(format!("{e} (seq {seq})")),
                None => Failure::Sim(e.to_string()),
            },
        }
    }
}

fn io_fail(path: &Path, e: io::Error) -> Failure {
    Failure::Sim(format!("{}: {e}", path.display()))
}

fn out_dir(flag: Option<PathBuf>, configured: Option<PathBuf>, fallback: &str) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .or(configured)
        .unwrap_or_else(|| PathBuf::from("fasim-out").join(fallback))
}

fn load_scenario(a: &ScenarioArgs) -> Result<ScenarioConfig, Failure> {
    let mut cfg = ScenarioConfig::load(&a.config).map_err(|e| Failure::Input(e.to_string()))?;
    if let Some(m) = a.mode {
        cfg.mode = m;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn load_trace(path: &Path) -> Result<Trace, Failure> {
    let f = File::open(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    read_trace(BufReader::new(f)).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn finish(mut outcome: RunOutcome, dir: &Path) -> Result<(), Failure> {
    sim::write_outputs(&mut outcome, dir).map_err(|e| io_fail(dir, e))?;
    let r = &outcome.report;
    println!(
        "{} {} seed={} end_waf={:.4} steady_waf={:.4} copybacks={} erases={} out={}",
        r.scenario,
        r.mode,
        r.seed,
        r.end_waf,
        r.steady_waf,
        r.counters.copyback_programs,
        r.counters.erases,
        dir.display()
    );
    Ok(())
}

fn execute(verb: Verb) -> Result<(), Failure> {
    match verb {
        Verb::Run(a) => {
            let cfg = load_scenario(&a)?;
            let outcome = sim::run(&cfg, &RunOptions::default())?;
            finish(outcome, &out_dir(a.out, cfg.output.dir.clone(), &cfg.name()))
        }
        Verb::Record { scenario, trace } => {
            let cfg = load_scenario(&scenario)?;
            let f = File::create(&trace).map_err(|e| io_fail(&trace, e))?;
            let mut w = BufWriter::new(f);
            let outcome = sim::record(&cfg, &RunOptions::default(), &mut w)?;
            w.flush().map_err(|e| io_fail(&trace, e))?;
            finish(outcome, &out_dir(scenario.out, cfg.output.dir.clone(), &cfg.name()))
        }
        Verb::Replay(a) => {
            let trace = load_trace(&a.trace)?;
            let outcome = sim::replay(&trace, a.mode, &RunOptions::default())?;
            finish(outcome, &out_dir(a.out, None, "replay"))
        }
        Verb::Check(a) => {
            let trace = load_trace(&a.trace)?;
            match sim::check(&trace, a.mode) {
                Ok(digest) => {
                    println!("equivalent: {} commands, digest {digest}", sim::replay_commands(&trace, a.mode).count());
                    Ok(())
                }
                Err(d) => {
                    let seq = sim::replay_commands(&trace, a.mode).nth(d.index).map_or(0, |r| r.seq);
                    Err(Failure::Sim(format!("engines diverge at seq {seq}: {}", d.detail)))
                }
            }
        }
        Verb::Report(a) => {
            let trace = load_trace(&a.trace)?;
            let outcome = sim::replay(&trace, a.mode, &RunOptions::default())?;
            let json = serde_json::to_string_pretty(&outcome.report).expect("report serializes");
            println!("{json}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse().verb) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("fasim: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Sim(msg)) => {
            eprintln!("fasim: {msg}");
            ExitCode::from(3)
        }
    }
}
