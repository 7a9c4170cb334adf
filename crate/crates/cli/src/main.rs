use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use sttk::scenario::{bundled, BUNDLED};
use sttk::{audit, mc_avoidance, Scenario, TrajectoryLog};

const EXIT_OK: u8 = 0;
const EXIT_FAIL: u8 = 1;
const EXIT_INVARIANT: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "sttk", version, about = "Spatiotemporal tubes among uncertain moving obstacles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario file (or bundled scenario name) without running it.
    Validate { scenario: String },
    /// Simulate a scenario and write its trajectory log.
    Run {
        /// Scenario file or bundled scenario name.
        #[arg(required_unless_present = "all", conflicts_with = "all")]
        scenario: Option<String>,
        /// Output log (default: <scenario name>.jsonl). With --all, an output directory.
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        horizon: Option<f64>,
        /// Run every *.toml in a directory, in parallel.
        #[arg(long, value_name = "DIR")]
        all: Option<PathBuf>,
    },
    /// Audit a log against its scenario and certify avoidance by Monte Carlo.
    Verify {
        log: PathBuf,
        scenario: String,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 100)]
        times: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Skip the Monte Carlo check.
        #[arg(long)]
        no_mc: bool,
        /// Write the JSON report here.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Convert a trajectory log.
    Export {
        log: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Output file (default: stdout).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// List the bundled scenarios.
    List,
    /// Print the TOML of a bundled scenario.
    Show { name: String },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
}

fn load_scenario(arg: &str) -> Result<Scenario, String> {
    let path = Path::new(arg);
    if path.exists() {
        return Scenario::load(path).map_err(|e| format!("{arg}: {e}"));
    }
    if BUNDLED.iter().any(|(n, _)| *n == arg) {
        return bundled(arg).map_err(|e| e.to_string());
    }
    Err(format!("{arg}: no such file or bundled scenario"))
}

fn cmd_validate(arg: &str) -> u8 {
    let sc = match load_scenario(arg) {
        Ok(sc) => sc,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_FAIL;
        }
    };
    let problems = sttk::validate(&sc);
    if problems.is_empty() {
        println!("{}: ok", sc.name);
        EXIT_OK
    } else {
        println!("{}: {} problem(s)", sc.name, problems.len());
        for p in problems {
            println!("  - {p}");
        }
        EXIT_FAIL
    }
}

struct Overrides {
    seed: Option<u64>,
    dt: Option<f64>,
    horizon: Option<f64>,
}

fn run_one(mut sc: Scenario, out: &Path, ov: &Overrides) -> (u8, String) {
    if let Some(seed) = ov.seed {
        sc.seed = seed;
    }
    if let Some(dt) = ov.dt {
        sc.dt = dt;
    }
    if let Some(h) = ov.horizon {
        sc.horizon = h;
    }
    let outcome = match sttk::run(&sc) {
        Ok(o) => o,
        Err(e) => return (EXIT_FAIL, format!("{}: {e}", sc.name)),
    };
    if let Err(e) = outcome.log.save(out) {
        return (EXIT_FAIL, format!("{}: {e}", sc.name));
    }
    let s = &outcome.log.summary;
    let reach = s.t_reach.map_or("never".to_string(), |t| format!("{t:.3} s"));
    let mut msg = format!(
        "{}: {} steps, reached {reach}, stay {}, step latency mean {:.1} us / max {:.1} us -> {}",
        sc.name,
        outcome.log.steps.len(),
        if s.stay_satisfied { "ok" } else { "not satisfied" },
        outcome.mean_step_latency.as_secs_f64() * 1e6,
        outcome.max_step_latency.as_secs_f64() * 1e6,
        out.display()
    );
    let code = match &s.failure {
        None => EXIT_OK,
        Some(f) => {
            msg.push_str(&format!("\n  failed at step {} (t = {}): {}", f.step, f.t, f.message));
            if f.class == "invariant" {
                EXIT_INVARIANT
            } else {
                EXIT_NUMERICAL
            }
        }
    };
    (code, msg)
}

fn cmd_run(scenario: Option<String>, output: Option<PathBuf>, all: Option<PathBuf>, ov: Overrides) -> u8 {
    if let Some(dir) = all {
        let mut files: Vec<PathBuf> = match std::fs::read_dir(&dir) {
            Ok(rd) => rd
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "toml"))
                .collect(),
            Err(e) => {
                eprintln!("error: {}: {e}", dir.display());
                return EXIT_FAIL;
            }
        };
        files.sort();
        let out_dir = output.unwrap_or_else(|| PathBuf::from("."));
        if let Err(e) = std::fs::create_dir_all(&out_dir) {
            eprintln!("error: {}: {e}", out_dir.display());
            return EXIT_FAIL;
        }
        let results: Vec<(u8, String)> = files
            .par_iter()
            .map(|f| match Scenario::load(f) {
                Ok(sc) => {
                    let stem = f.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                    run_one(sc, &out_dir.join(format!("{stem}.jsonl")), &ov)
                }
                Err(e) => (EXIT_FAIL, format!("{}: {e}", f.display())),
            })
            .collect();
        let mut worst = EXIT_OK;
        for (code, msg) in results {
            println!("{msg}");
            worst = worst.max(code);
        }
        return worst;
    }

    let arg = scenario.expect("clap enforces a scenario without --all");
    let sc = match load_scenario(&arg) {
        Ok(sc) => sc,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_FAIL;
        }
    };
    let out = output.unwrap_or_else(|| PathBuf::from(format!("{}.jsonl", sc.name)));
    let (code, msg) = run_one(sc, &out, &ov);
    if code == EXIT_FAIL {
        eprintln!("error: {msg}");
    } else {
        println!("{msg}");
    }
    code
}

#[allow(clippy::too_many_arguments)]
fn cmd_verify(
    log: &Path,
    scenario: &str,
    samples: usize,
    times: usize,
    seed: u64,
    no_mc: bool,
    output: Option<PathBuf>,
) -> u8 {
    let sc = match load_scenario(scenario) {
        Ok(sc) => sc,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_FAIL;
        }
    };
    let log = match TrajectoryLog::load(log) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_FAIL;
        }
    };
    let mut report = audit(&log, &sc);
    if !no_mc && !log.steps.is_empty() {
        match mc_avoidance(&log, &sc.world, samples, times, seed) {
            Ok(mc) => report.monte_carlo = Some(mc),
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_FAIL;
            }
        }
    }
    print!("{}", report.summary());
    if let Some(path) = output {
        if let Err(e) = std::fs::write(&path, report.to_json() + "\n") {
            eprintln!("error: {}: {e}", path.display());
            return EXIT_FAIL;
        }
    }
    if report.passed() {
        EXIT_OK
    } else {
        EXIT_FAIL
    }
}

fn cmd_export(log: &Path, output: Option<PathBuf>) -> u8 {
    let log = match TrajectoryLog::load(log) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_FAIL;
        }
    };
    let written = match output {
        Some(path) => std::fs::File::create(&path)
            .map_err(sttk::Error::from)
            .and_then(|f| log.write_csv(std::io::BufWriter::new(f))),
        None => log.write_csv(std::io::stdout().lock()),
    };
    match written {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAIL
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Validate { scenario } => cmd_validate(&scenario),
        Command::Run {
            scenario,
            output,
            seed,
            dt,
            horizon,
            all,
        } => cmd_run(scenario, output, all, Overrides { seed, dt, horizon }),
        Command::Verify {
            log,
            scenario,
            samples,
            times,
            seed,
            no_mc,
            output,
        } => cmd_verify(&log, &scenario, samples, times, seed, no_mc, output),
        Command::Export { log, format: Format::Csv, output } => cmd_export(&log, output),
        Command::List => {
            for (name, src) in BUNDLED {
                let desc = sttk::ScenarioFile::parse(src).map(|f| f.description).unwrap_or_default();
                println!("{name:<30} {desc}");
            }
            EXIT_OK
        }
        Command::Show { name } => match sttk::scenario::bundled_source(&name) {
            Some(src) => {
                print!("{src}");
                EXIT_OK
            }
            None => {
                eprintln!("error: no bundled scenario named `{name}`");
                EXIT_FAIL
            }
        },
    };
    ExitCode::from(code)
}
