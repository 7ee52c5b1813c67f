use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Parser, Subcommand, ValueEnum};
use umf::classifier::{audit, load_descriptors};
use umf::consensus::{run_election, ElectionError, NetConfig};
use umf::scenario::{load_scenario, run_scenario, ScenarioRun};

#[derive(Parser)]
#[command(name = "umf", version, about = "Core-agent scenarios, descriptor classification and leader election")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run scenario files and check their assertions.
    Run {
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the trace as JSON lines (single scenario only).
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write memory stores as JSON (single scenario only).
        #[arg(long)]
        memory_dump: Option<PathBuf>,
        /// Scenarios run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Classify agent descriptors as active, passive or not an agent.
    Classify {
        file: PathBuf,
        /// Include audit totals and findings.
        #[arg(long)]
        report: bool,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Simulate a leader election over a lossy network.
    Elect {
        #[arg(long, default_value_t = 5)]
        nodes: usize,
        #[arg(long, default_value_t = 0.0)]
        drop: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        max_ticks: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Text,
}

const EXIT_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenarios,
            seed,
            trace,
            memory_dump,
            jobs,
        } => run(&scenarios, seed, trace.as_deref(), memory_dump.as_deref(), jobs),
        Command::Classify { file, report, format } => classify(&file, report, format),
        Command::Elect {
            nodes,
            drop,
            seed,
            max_ticks,
        } => elect(nodes, drop, seed, max_ticks),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_FAILED),
        Err(e) => {
            eprintln!("umf: {e}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

type CliResult = Result<bool, Box<dyn std::error::Error>>;

fn run_one(path: &Path, seed: Option<u64>) -> Result<ScenarioRun, String> {
    let spec = load_scenario(path).map_err(|e| format!("{}: {e}", path.display()))?;
    run_scenario(&spec, seed).map_err(|e| format!("{}: {e}", path.display()))
}

fn run(paths: &[PathBuf], seed: Option<u64>, trace: Option<&Path>, dump: Option<&Path>, jobs: usize) -> CliResult {
    if paths.len() > 1 && (trace.is_some() || dump.is_some()) {
        return Err("--trace and --memory-dump take a single scenario".into());
    }
    let slots: Vec<Mutex<Option<Result<ScenarioRun, String>>>> = paths.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, paths.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= paths.len() {
                    break;
                }
                let res = run_one(&paths[i], seed);
                *slots[i].lock().expect("slot lock") = Some(res);
            });
        }
    });
    let mut all_passed = true;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for slot in slots {
        let run = slot.into_inner().expect("slot lock").expect("every scenario ran")?;
        for r in &run.results {
            writeln!(out, "{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.description, r.detail)?;
        }
        if let Some(err) = &run.error {
            writeln!(out, "ERROR {err}")?;
        }
        let passed = run.results.iter().filter(|r| r.passed).count();
        writeln!(
            out,
            "{} {} (seed {}): {}/{} assertions, {} events",
            if run.passed() { "ok" } else { "FAILED" },
            run.scenario_id,
            run.seed,
            passed,
            run.results.len(),
            run.trace.len()
        )?;
        if let Some(path) = trace {
            run.trace.write_jsonl(BufWriter::new(File::create(path)?))?;
        }
        if let Some(path) = dump {
            let mut w = BufWriter::new(File::create(path)?);
            serde_json::to_writer_pretty(&mut w, &run.memory)?;
            w.write_all(b"\n")?;
        }
        all_passed &= run.passed();
    }
    Ok(all_passed)
}

fn classify(file: &Path, report: bool, format: Format) -> CliResult {
    let descriptors = load_descriptors(file)?;
    let audit = audit(&descriptors);
    match (format, report) {
        (Format::Json, true) => println!("{}", serde_json::to_string_pretty(&audit)?),
        (Format::Json, false) => println!("{}", serde_json::to_string_pretty(&audit.rows)?),
        (Format::Text, true) => print!("{}", audit.render_text()),
        (Format::Text, false) => {
            for r in &audit.rows {
                println!("{} {} {}", r.agent_id, r.variant_id, r.category);
            }
        }
    }
    Ok(true)
}

fn elect(nodes: usize, drop: f64, seed: u64, max_ticks: u64) -> CliResult {
    if !(0.0..=1.0).contains(&drop) {
        return Err(format!("--drop must lie in [0, 1], got {drop}").into());
    }
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match run_election(nodes, NetConfig::lossy(drop), seed, max_ticks) {
        Ok(o) => {
            for e in &o.events {
                writeln!(out, "{}", serde_json::to_string(e)?)?;
            }
            let summary = serde_json::json!({
                "outcome": "elected",
                "leader": o.leader,
                "term": o.term,
                "ticks": o.ticks_elapsed,
            });
            writeln!(out, "{summary}")?;
            Ok(true)
        }
        Err(ElectionError::ElectionTimeout { max_ticks, events }) => {
            for e in &events {
                writeln!(out, "{}", serde_json::to_string(e)?)?;
            }
            writeln!(out, "{}", serde_json::json!({ "outcome": "timeout", "max_ticks": max_ticks }))?;
            Ok(false)
        }
        Err(e) => Err(e.into()),
    }
}
