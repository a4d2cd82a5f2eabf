use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sprayer_core::config::{DEMO_MISSION_TOML, STRAIGHT_MISSION_TOML};
use sprayer_core::mission::{CSV_FILE, REPORT_FILE, STEPS_FILE};
use sprayer_core::{montecarlo, run_mission_to_dir, verify_table1, Execution, MissionConfig, MissionError};

const EXIT_CONFIG: u8 = 1;
const EXIT_ACCEPTANCE: u8 = 2;
const EXIT_TIMEOUT: u8 = 3;

const MONTECARLO_FILE: &str = "montecarlo.json";

#[derive(Parser)]
#[command(name = "sprayer", version, about = "Crop-spraying robot mission simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one mission and write steps.jsonl and report.json.
    Run {
        config: PathBuf,
        /// Override the seed from the config file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Also write path.csv with true/estimated path and error traces.
        #[arg(long)]
        csv: bool,
    },
    /// Recompute the RTK survey point errors and compare with the field figures.
    VerifyTable1,
    /// Run N seeds of a mission and write an aggregate report.
    Montecarlo {
        config: PathBuf,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        /// Spread runs over all cores.
        #[arg(long)]
        parallel: bool,
        /// First seed; runs use seed, seed + 1, ...
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Print a bundled mission file.
    PrintConfig {
        #[arg(value_enum)]
        mission: Bundled,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Bundled {
    Demo,
    Straight,
}

fn load(path: &Path, seed: Option<u64>) -> Result<MissionConfig, ExitCode> {
    let mut config = MissionConfig::load(path).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(EXIT_CONFIG)
    })?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Err(e) = config.resolve() {
        eprintln!("error: {e}");
        return Err(ExitCode::from(EXIT_CONFIG));
    }
    Ok(config)
}

fn run(config: &Path, seed: Option<u64>, out_dir: &Path, csv: bool) -> ExitCode {
    let config = match load(config, seed) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let report = match run_mission_to_dir(&config, out_dir, csv) {
        Ok(r) => r,
        Err(MissionError::Config(e)) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    println!(
        "{} (seed {}): {} ticks, {:.2} s simulated",
        report.mission, report.seed, report.ticks, report.sim_duration_s
    );
    println!(
        "cross-track: mean {:.4} m, variance {:.6} m^2, max {:.4} m",
        report.cross_track.mean_m, report.cross_track.variance_m2, report.cross_track.max_m
    );
    println!(
        "plants sprayed: {}/{}, tank {:.0} of {:.0} ml used, gps fixes rejected: {}",
        report.plants_sprayed,
        report.plants.len(),
        report.tank.consumed_ml,
        report.tank.capacity_ml,
        report.gps.rejected
    );
    let mut written = vec![STEPS_FILE, REPORT_FILE];
    if csv {
        written.push(CSV_FILE);
    }
    println!("wrote {} in {}", written.join(", "), out_dir.display());
    if report.timed_out {
        eprintln!("mission timed out before the path was completed");
        return ExitCode::from(EXIT_TIMEOUT);
    }
    ExitCode::SUCCESS
}

fn run_montecarlo(config: &Path, runs: usize, parallel: bool, seed: Option<u64>, out_dir: &Path) -> ExitCode {
    if runs == 0 {
        eprintln!("error: --runs must be at least 1");
        return ExitCode::from(EXIT_CONFIG);
    }
    let config = match load(config, seed) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let execution = if parallel {
        Execution::Parallel
    } else {
        Execution::Sequential
    };
    let report = match montecarlo(&config, runs, config.seed, execution, false) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let path = out_dir.join(MONTECARLO_FILE);
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    if let Err(e) = fs::create_dir_all(out_dir).and_then(|_| fs::write(&path, json)) {
        eprintln!("error: writing {}: {e}", path.display());
        return ExitCode::FAILURE;
    }
    println!(
        "{}: {} runs from seed {}, {} timed out",
        report.mission, runs, report.base_seed, report.failed_runs
    );
    println!(
        "cross-track mean: avg {:.4} m, p95 {:.4} m; runs below 10 cm: {:.1}%",
        report.cross_track_mean.mean,
        report.cross_track_mean.p95,
        100.0 * report.fraction_mean_below_10cm
    );
    if let Some(n) = &report.nees {
        println!(
            "NEES at t = {:.0} s: {:.3}, 95% band [{:.3}, {:.3}] -> {}",
            n.eval_time_s,
            n.mean_at_eval,
            n.lower_95,
            n.upper_95,
            if n.consistent { "consistent" } else { "inconsistent" }
        );
        println!(
            "NEES per second inside band: {:.1}%; time-averaged {:.3}; last tick {:.3}",
            100.0 * n.fraction_of_seconds_inside,
            n.time_averaged_mean,
            n.final_tick_mean
        );
    }
    println!("wrote {}", path.display());
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            seed,
            out_dir,
            csv,
        } => run(&config, seed, &out_dir, csv),
        Command::VerifyTable1 => {
            let v = verify_table1();
            print!("{}", v.render());
            if v.pass() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_ACCEPTANCE)
            }
        }
        Command::Montecarlo {
            config,
            runs,
            parallel,
            seed,
            out_dir,
        } => run_montecarlo(&config, runs, parallel, seed, &out_dir),
        Command::PrintConfig { mission } => {
            print!(
                "{}",
                match mission {
                    Bundled::Demo => DEMO_MISSION_TOML,
                    Bundled::Straight => STRAIGHT_MISSION_TOML,
                }
            );
            ExitCode::SUCCESS
        }
    }
}
