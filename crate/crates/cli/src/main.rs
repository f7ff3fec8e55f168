use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use glance_core::alignment::DetectionNoise;
use glance_core::bridge::{serve, ServerConfig};
use glance_core::harness::{compare_methods, run_scenario, sweep_alignment, HarnessError, RunOptions};
use glance_core::scenario::{apply_overrides, Scenario, ScenarioError};
use glance_core::traceio::{write_csv, write_trace, ParamsFile, Recording, TraceIoError};
use glance_core::Method;

#[derive(Parser)]
#[command(name = "glance", version, about = "Gaze intent inference and shared-control simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write metrics, trace and recording.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        params: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Disable shared control before the command (interaction scenarios).
        #[arg(long)]
        no_shared: bool,
    },
    /// Run a recorded gaze + scene stream through a method.
    Replay {
        #[arg(long)]
        recording: PathBuf,
        #[arg(long, default_value = "sticky")]
        method: Method,
        #[arg(long)]
        params: Option<PathBuf>,
        /// Trace file to write; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare all methods over every scenario in a directory.
    Compare {
        /// Directory of `.scn` files.
        #[arg(long)]
        scenario: PathBuf,
        /// Restrict to one method.
        #[arg(long)]
        method: Option<Method>,
        /// First seed; `--seeds` consecutive seeds are used.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long)]
        params: Option<PathBuf>,
        /// Output directory for report.csv and report.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Alignment accuracy over viewing distance and angle.
    SweepAlignment {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [0.4, 0.6, 0.8])]
        distances: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 90.0, 180.0])]
        angles: Vec<f64>,
        /// CSV file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Start the live session server.
    Serve {
        #[arg(long, default_value_t = 7878)]
        port: u16,
        #[arg(long)]
        params: Option<PathBuf>,
        /// Scenario for clients whose hello carries none.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
}

/// Validation failures exit 1, everything else 2.
enum Failure {
    Validation(String),
    Runtime(String),
}

impl Failure {
    fn validation(e: impl Display) -> Self {
        Failure::Validation(e.to_string())
    }

    fn runtime(e: impl Display) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Io { .. } => Failure::runtime(e),
            _ => Failure::validation(e),
        }
    }
}

impl From<TraceIoError> for Failure {
    fn from(e: TraceIoError) -> Self {
        match e {
            TraceIoError::Io { .. } | TraceIoError::Csv(_) => Failure::runtime(e),
            _ => Failure::validation(e),
        }
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Scenario(s) => s.into(),
            HarnessError::Invalid(_) => Failure::validation(e),
            _ => Failure::runtime(e),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run { scenario, method, seed, params, out, no_shared } => {
            run(&scenario, method, seed, params.as_deref(), out.as_deref(), no_shared)
        }
        Command::Replay { recording, method, params, out } => replay(&recording, method, params.as_deref(), out.as_deref()),
        Command::Compare { scenario, method, seed, seeds, params, out } => {
            compare(&scenario, method, seed, seeds, params.as_deref(), out.as_deref())
        }
        Command::SweepAlignment { seed, trials, distances, angles, out } => {
            let rows = sweep_alignment(&distances, &angles, trials, seed, &DetectionNoise::default());
            match out {
                Some(path) => write_csv(&path, &rows)?,
                None => {
                    println!("distance_m,angle_deg,trials,accuracy");
                    for r in rows {
                        println!("{},{},{},{}", r.distance_m, r.angle_deg, r.trials, r.accuracy);
                    }
                }
            }
            Ok(())
        }
        Command::Serve { port, params, scenario } => {
            let p = ParamsFile::resolve(params.as_deref())?;
            let default_scenario = scenario.map(|path| load_scenario(&path, params.as_deref())).transpose()?;
            let config = ServerConfig { intent: p.intent(), control: p.control(), default_scenario, ..ServerConfig::default() };
            let server = serve(("127.0.0.1", port), config).map_err(Failure::runtime)?;
            eprintln!("listening on {}", server.local_addr());
            server.join();
            Ok(())
        }
    }
}

fn options(s: &Scenario, params: Option<&Path>) -> Result<RunOptions, Failure> {
    let p = ParamsFile::resolve(params)?;
    let (intent, control, _) = apply_overrides(&s.params, p.intent(), p.control(), s.expand);
    Ok(RunOptions { intent, control, ..RunOptions::for_scenario(s) })
}

fn load_scenario(path: &Path, params: Option<&Path>) -> Result<Scenario, Failure> {
    let mut s = Scenario::load(path)?;
    // a params file outranks the scenario's own expand, a scenario override outranks both
    if s.params.radius_expand.is_none() && ParamsFile::source(params).is_some() {
        s.expand = ParamsFile::resolve(params)?.radius_expand;
    }
    Ok(s)
}

fn run(
    path: &Path,
    method: Option<Method>,
    seed: Option<u64>,
    params: Option<&Path>,
    out: Option<&Path>,
    no_shared: bool,
) -> Result<(), Failure> {
    let s = load_scenario(path, params)?;
    let mut opts = options(&s, params)?;
    if let Some(m) = method {
        opts.method = m;
    }
    if let Some(seed) = seed {
        opts.seed = seed;
    }
    if no_shared {
        opts.shared = Some(false);
    }
    let result = run_scenario(&s, &opts)?;
    let metrics = serde_json::to_string_pretty(&result.metrics).expect("metrics serialize");
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(Failure::runtime)?;
        std::fs::write(dir.join("metrics.json"), format!("{metrics}\n")).map_err(Failure::runtime)?;
        write_csv(&dir.join("metrics.csv"), std::slice::from_ref(&result.metrics))?;
        write_trace(&dir.join("trace.jsonl"), opts.method, &path.display().to_string(), &result.trace)?;
        result.recording.write(&dir.join("recording.jsonl"))?;
    }
    println!("{metrics}");
    Ok(())
}

fn replay(path: &Path, method: Method, params: Option<&Path>, out: Option<&Path>) -> Result<(), Failure> {
    let p = ParamsFile::resolve(params)?;
    let rec = Recording::read(path)?;
    let trace = rec.replay(method, p.intent())?;
    match out {
        Some(file) => write_trace(file, method, &path.display().to_string(), &trace)?,
        None => {
            for r in &trace {
                println!("{}", serde_json::to_string(r).expect("record serializes"));
            }
        }
    }
    Ok(())
}

fn compare(
    dir: &Path,
    method: Option<Method>,
    seed: u64,
    seeds: u64,
    params: Option<&Path>,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Failure::validation(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "scn"))
        .collect();
    paths.sort();
    let mut scenarios = Vec::new();
    for p in &paths {
        let mut s = load_scenario(p, params)?;
        let opts = options(&s, params)?;
        // bake resolved parameters into the scenario so every job sees them
        s.params.dt = Some(opts.intent.dt);
        s.params.c_min = Some(opts.intent.c_min);
        s.params.tau_px = Some(opts.intent.tau);
        s.params.decay_enabled = Some(opts.intent.decay.is_some());
        scenarios.push(s);
    }
    let methods: Vec<Method> = method.map_or_else(|| Method::ALL.to_vec(), |m| vec![m]);
    let seed_list: Vec<u64> = (seed..seed + seeds).collect();
    let report = compare_methods(&scenarios, &methods, &seed_list)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(Failure::runtime)?;
        write_csv(&dir.join("report.csv"), &report.rows)?;
        write_csv(&dir.join("runs.csv"), &report.runs)?;
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        std::fs::write(dir.join("report.json"), format!("{json}\n")).map_err(Failure::runtime)?;
    }
    let fmt = |m: Option<f64>, sd: Option<f64>| match (m, sd) {
        (Some(m), Some(sd)) => format!("{m:.3} ± {sd:.3}"),
        _ => "-".to_string(),
    };
    println!("{:<14} {:>5} {:>16} {:>16} {:>11}", "method", "runs", "tracking", "selection", "min_samples");
    for r in &report.rows {
        println!(
            "{:<14} {:>5} {:>16} {:>16} {:>11}",
            r.method.name(),
            r.runs,
            fmt(r.tracking_rate_mean, r.tracking_rate_sd),
            fmt(r.selection_accuracy_mean, r.selection_accuracy_sd),
            r.min_samples.map_or("-".into(), |n| n.to_string())
        );
    }
    Ok(())
}
