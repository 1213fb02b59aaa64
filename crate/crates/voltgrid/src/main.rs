use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use voltgrid::csvio::{write_summaries, write_sweep, write_time_series};
use voltgrid::scn::load_scenario;
use voltgrid::study::{scalability_study, sweep_gamma};
use voltgrid::threaded::ThreadedSolver;
use voltgrid_core::experiment::{ends_settled_and_feasible, summarize, verify_run, StudyMode, STEP_CAP};
use voltgrid_core::scenario::Scenario;
use voltgrid_core::sim::{run_simulation_with, InnerSolver, RunOptions};

const EXIT_PARSE: u8 = 2;
const EXIT_SIM: u8 = 3;
const EXIT_VERIFY: u8 = 4;
const EXIT_IO: u8 = 5;

#[derive(Parser)]
#[command(name = "voltgrid", version, about = "Distributed Volt/VAr control experiments on radial feeders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write its time series and summary.
    Run {
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Overrides the transport (and noise) seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Check the final set-points against the centralized optimum.
        #[arg(long)]
        verify: bool,
        /// Run the inner loop on one OS thread per agent.
        #[arg(long)]
        threaded: bool,
    },
    /// Steps to convergence over a grid of inner step sizes and counts.
    SweepGamma {
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        gammas: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        ks: Vec<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = STEP_CAP)]
        cap: usize,
    },
    /// Steps to convergence as dummy agents lengthen the network.
    Scale {
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "3,7,10,30,100")]
        sizes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "deep,interleaved")]
        modes: Vec<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = STEP_CAP)]
        cap: usize,
    },
}

enum Failure {
    Parse(anyhow::Error),
    Sim(anyhow::Error),
    Verify(String),
    Io(anyhow::Error),
}

impl Failure {
    fn report(self) -> ExitCode {
        let (code, msg) = match self {
            Failure::Parse(e) => (EXIT_PARSE, format!("parse error: {e:#}")),
            Failure::Sim(e) => (EXIT_SIM, format!("simulation error: {e:#}")),
            Failure::Verify(m) => (EXIT_VERIFY, format!("verification failed: {m}")),
            Failure::Io(e) => (EXIT_IO, format!("output error: {e:#}")),
        };
        eprintln!("voltgrid: {msg}");
        ExitCode::from(code)
    }
}

fn load(path: &Path) -> Result<Scenario, Failure> {
    load_scenario(path).map_err(|e| Failure::Parse(e.into()))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(Failure::Io)?;
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .with_context(|| format!("creating {}", path.display()))
        .map_err(Failure::Io)
}

fn run(path: &Path, out: &Path, seed: Option<u64>, verify: bool, threaded: bool) -> Result<(), Failure> {
    let scenario = load(path)?;
    let setup = scenario.setup().map_err(|e| Failure::Parse(e.into()))?;
    let opts = RunOptions {
        seed,
        ..RunOptions::default()
    };
    let mut threads = ThreadedSolver;
    let solver: Option<&mut dyn InnerSolver> = if threaded { Some(&mut threads) } else { None };
    let result = run_simulation_with(&scenario, &setup, &opts, solver).map_err(|e| Failure::Sim(e.into()))?;
    let summary = summarize(&scenario.name, mode_name(&scenario), &setup, &result);

    let ts = create(out, &format!("{}_timeseries.csv", scenario.name))?;
    write_time_series(ts, &result.rows).map_err(|e| Failure::Io(e.into()))?;
    let sm = create(out, &format!("{}_summary.csv", scenario.name))?;
    write_summaries(sm, std::slice::from_ref(&summary)).map_err(|e| Failure::Io(e.into()))?;
    println!(
        "{}: {} steps, converged={} feasible={} act_steps={} final q = {:?} kVAr",
        scenario.name, result.epochs, summary.converged, summary.feasible, summary.act_steps, result.final_q
    );

    if verify {
        if !ends_settled_and_feasible(&setup, &result) {
            println!("verify: skipped, the run did not end settled inside the voltage limits");
            return Ok(());
        }
        let v = verify_run(&setup, &result).map_err(|e| Failure::Sim(e.into()))?;
        println!(
            "verify: centralized q = {:?} kVAr, largest gap {:.4} kVAr",
            v.reference, v.max_deviation_kvar
        );
        if !v.passed() {
            return Err(Failure::Verify(format!(
                "largest set-point gap {:.4} kVAr exceeds 0.01 kVAr",
                v.max_deviation_kvar
            )));
        }
    }
    Ok(())
}

fn mode_name(s: &Scenario) -> &'static str {
    use voltgrid_core::scenario::ControlMode;
    match s.controller.mode {
        ControlMode::Off => "off",
        ControlMode::Droop => "droop",
        ControlMode::Distributed => "distributed",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario,
            out,
            seed,
            verify,
            threaded,
        } => run(&scenario, &out, seed, verify, threaded),
        Command::SweepGamma {
            scenario,
            gammas,
            ks,
            out,
            cap,
        } => (|| {
            let base = load(&scenario)?;
            let points = sweep_gamma(&base, &gammas, &ks, cap).map_err(|e| Failure::Sim(e.into()))?;
            for p in &points {
                println!(
                    "gamma={:<8} K={:<6} act_steps={:<6} converged={} diverged={}",
                    p.gamma, p.k, p.summary.act_steps, p.summary.converged, p.summary.diverged
                );
            }
            let w = create(&out, &format!("{}_gamma_sweep.csv", base.name))?;
            write_sweep(w, &points).map_err(|e| Failure::Io(e.into()))
        })(),
        Command::Scale {
            scenario,
            sizes,
            modes,
            out,
            cap,
        } => (|| {
            let base = load(&scenario)?;
            let modes = modes
                .iter()
                .map(|m| {
                    StudyMode::parse(m)
                        .ok_or_else(|| Failure::Parse(anyhow::anyhow!("unknown mode `{m}` (deep, interleaved)")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let runs = scalability_study(&base, &sizes, &modes, cap).map_err(|e| Failure::Sim(e.into()))?;
            for r in &runs {
                println!(
                    "{:<20} N={:<4} comm_steps={:<7} act_steps={:<6} converged={}",
                    r.run_id, r.n_agents, r.comm_steps, r.act_steps, r.converged
                );
            }
            let w = create(&out, &format!("{}_scale.csv", base.name))?;
            write_summaries(w, &runs).map_err(|e| Failure::Io(e.into()))
        })(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.report(),
    }
}
