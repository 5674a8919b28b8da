use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use helitrack::analysis::{analyze, LinearizeRequest};
use helitrack::control::{BrcGains, ControlLaw, SprGains};
use helitrack::harness::{self, parse_json, RunLog, Scenario};
use helitrack::trajectory::{compress_poly, flip_solve, flip_transcribe, CompressOptions, FlipSpec};
use helitrack::{Error, Result};

#[derive(Parser)]
#[command(name = "helitrack", version, about = "Attitude tracking simulator for aerobatic helicopters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write its log as CSV.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a built-in scenario.
    Preset {
        /// One of the preset names, or fig3 .. fig6.
        name: String,
        #[arg(long)]
        out: PathBuf,
        /// Replace the preset's control law (default gains).
        #[arg(long, value_enum)]
        controller: Option<LawChoice>,
        /// Also write the resolved scenario as JSON.
        #[arg(long)]
        scenario_out: Option<PathBuf>,
    },
    /// Open-loop rotor damping of a 360 deg/s roll rate.
    DampingDemo {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Linearize and classify the equilibria of the SPR loop.
    Linearize {
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve a minimum-effort flip and compress it to piecewise polynomials.
    OptimizeFlip {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Polynomial JSON path (defaults to the CSV path with `.poly.json`).
        #[arg(long)]
        poly: Option<PathBuf>,
    },
    /// Run every `*.json` scenario of a directory; logs go next to them.
    Batch {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum LawChoice {
    OpenLoop,
    Nominal,
    Brc,
    Spr,
}

impl LawChoice {
    fn law(self) -> ControlLaw {
        match self {
            LawChoice::OpenLoop => ControlLaw::OpenLoop,
            LawChoice::Nominal => ControlLaw::Nominal(BrcGains::default()),
            LawChoice::Brc => ControlLaw::Brc(BrcGains::default()),
            LawChoice::Spr => ControlLaw::Spr(SprGains::default()),
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    parse_json(&fs::read_to_string(path)?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

/// Writes the log (including rows before a divergence) and then reports
/// the divergence as an error.
fn finish_run(log: RunLog, out: &Path) -> Result<()> {
    harness::write_csv(&log, out)?;
    log.into_result().map(|_| ())
}

fn simulate(scenario: &Scenario, out: &Path) -> Result<()> {
    let started = std::time::Instant::now();
    let log = harness::run(scenario)?;
    info!("{}: {} rows in {:.2?}", scenario.name, log.rows.len(), started.elapsed());
    finish_run(log, out)
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Simulate { scenario, out } => simulate(&harness::read_scenario(&scenario)?, &out),
        Command::Preset { name, out, controller, scenario_out } => {
            let mut scenario = harness::preset(&name)?;
            if let Some(choice) = controller {
                scenario.controller = choice.law();
            }
            if let Some(path) = scenario_out {
                write_text(&path, &scenario.to_json())?;
            }
            simulate(&scenario, &out)
        }
        Command::DampingDemo { out } => {
            let (log, summary) = harness::damping_demo()?;
            if let Some(path) = out {
                harness::write_csv(&log, &path)?;
            }
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            Ok(())
        }
        Command::Linearize { params, out } => {
            let request = match params {
                Some(path) => read_json(&path)?,
                None => LinearizeRequest::default(),
            };
            let report = analyze(&request)?;
            write_text(&out, &serde_json::to_string_pretty(&report).expect("report serializes"))
        }
        Command::OptimizeFlip { spec, out, poly } => {
            let spec: FlipSpec = read_json(&spec)?;
            let nlp = flip_transcribe(&spec, &Default::default())?;
            let sol = flip_solve(&nlp)?;
            info!(
                "objective {:.6e}, max violation {:.3e}, |theta|_inf {:.3} deg",
                sol.objective,
                sol.max_violation,
                sol.theta_inf_norm().to_degrees()
            );
            sol.write_csv_file(&out)?;
            let pp = compress_poly(&sol, &spec, &CompressOptions::default())?;
            let poly = poly.unwrap_or_else(|| out.with_extension("poly.json"));
            write_text(&poly, &serde_json::to_string_pretty(&pp).expect("polynomial serializes"))
        }
        Command::Batch { dir, jobs } => {
            let files = harness::scenario_files(&dir)?;
            let scenarios = files.iter().map(|f| harness::read_scenario(f)).collect::<Result<Vec<_>>>()?;
            let results = harness::batch(&scenarios, jobs)?;
            let mut worst: Option<Error> = None;
            for (file, result) in files.iter().zip(results) {
                let out = file.with_extension("csv");
                match result.and_then(|log| finish_run(log, &out)) {
                    Ok(()) => println!("{} -> {}", file.display(), out.display()),
                    Err(e) => {
                        eprintln!("{}: {e}", file.display());
                        if worst.as_ref().is_none_or(|w| e.exit_code() > w.exit_code()) {
                            worst = Some(e);
                        }
                    }
                }
            }
            worst.map_or(Ok(()), Err)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
