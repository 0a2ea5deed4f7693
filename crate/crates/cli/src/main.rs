mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use redgrid::adaptive::{modal_report, AdaptiveConfig, Scenario, NO_REDUCTION};
use redgrid::bench::{compare, CompareConfig, DEFAULT_METHODS, FULL};
use redgrid::powerflow::{solve_power_flow, DEFAULT_MAX_ITER, DEFAULT_TOL};
use redgrid::reduction::{Registry, Truncation};
use redgrid::smallsignal::Excitation;
use redgrid::sysmodel::{FaultSpec, PowerSystem};
use serde::Serialize;
use serde_json::json;

use config::{FileConfig, FlagConfig, RunConfig};

/// Transient-stability simulation with adaptive reduction of the external
/// area.
#[derive(Debug, Parser)]
#[command(name = "redgrid", version)]
struct Cli {
    /// TOML file with run settings; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log level: error, warn, info, debug or trace.
    #[arg(long, global = true)]
    log_level: Option<String>,
    /// Report failures on stderr as a JSON object.
    #[arg(long, global = true)]
    json_errors: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the power flow and print it as JSON.
    Pf {
        #[arg(long)]
        system: PathBuf,
    },
    /// Integrate one scenario and write states.csv and summary.json.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, value_enum, default_value_t = Mode::Full)]
        mode: Mode,
        #[command(flatten)]
        settings: Settings,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Write the reduction report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Eigenvalues and participation of the external area as JSON.
    Modal {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        fault: Option<PathBuf>,
        #[command(flatten)]
        settings: Settings,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the reduced external model used at fault clearing.
    Reduce {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, value_enum)]
        method: Method,
        #[command(flatten)]
        settings: Settings,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run full, linear, rotor and pf and score them against full.
    Compare {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        settings: Settings,
        /// Accuracy report; timings go to `<stem>.timing.json` next to it.
        #[arg(long)]
        out: PathBuf,
        /// Write `<method>.csv` trajectories here.
        #[arg(long)]
        csv_dir: Option<PathBuf>,
        /// Timed runs per method.
        #[arg(long)]
        repeats: Option<usize>,
    },
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    #[arg(long)]
    system: PathBuf,
    #[arg(long)]
    fault: PathBuf,
}

#[derive(Debug, Args)]
struct Settings {
    /// Step size, seconds [default: 0.01].
    #[arg(long)]
    h: Option<f64>,
    /// End time, seconds [default: 16].
    #[arg(long)]
    t_end: Option<f64>,
    /// Participation threshold [default: 0.5].
    #[arg(long)]
    p_max: Option<f64>,
    /// Rotor-angle threshold, degrees [default: 10].
    #[arg(long)]
    delta_threshold: Option<f64>,
    /// Number of dominant modes [default: 2].
    #[arg(long)]
    dominant_count: Option<usize>,
    /// Highest dominant-mode frequency, Hz [default: 1].
    #[arg(long)]
    f_max: Option<f64>,
    /// Mode excitation measure [default: peak-observability].
    #[arg(long, value_parser = parse_excitation)]
    excitation: Option<Excitation>,
    /// Balanced truncation of the linear block [default: auto].
    #[arg(long, value_parser = parse_truncation)]
    truncation: Option<Truncation>,
    /// Relative Hankel singular value cut-off [default: 1e-4].
    #[arg(long)]
    bt_tol: Option<f64>,
}

fn parse_excitation(s: &str) -> Result<Excitation, String> {
    Excitation::parse(s).map_err(|e| e.to_string())
}

fn parse_truncation(s: &str) -> Result<Truncation, String> {
    Truncation::parse(s).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Full,
    Pf,
    Rotor,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Pf,
    Rotor,
    Linear,
}

impl Mode {
    fn engine_name(self) -> &'static str {
        match self {
            Mode::Full => NO_REDUCTION,
            Mode::Pf => "pf",
            Mode::Rotor => "rotor",
            Mode::Linear => "linear",
        }
    }
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Pf => "pf",
            Method::Rotor => "rotor",
            Method::Linear => "linear",
        }
    }
}

enum Failure {
    Engine(redgrid::Error),
    Usage(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Engine(e) if e.is_numerical() => 2,
            _ => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Failure::Engine(e) => e.kind(),
            Failure::Usage(_) => "UsageError",
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Engine(e) => write!(f, "{e}"),
            Failure::Usage(m) => f.write_str(m),
        }
    }
}

impl From<redgrid::Error> for Failure {
    fn from(e: redgrid::Error) -> Self {
        Failure::Engine(e)
    }
}

type CliResult<T> = Result<T, Failure>;

impl Settings {
    fn flags(&self) -> FlagConfig {
        FlagConfig {
            h: self.h,
            t_end: self.t_end,
            p_max: self.p_max,
            delta_threshold: self.delta_threshold,
            dominant_count: self.dominant_count,
            f_max: self.f_max,
            excitation: self.excitation,
            truncation: self.truncation,
            bt_tol: self.bt_tol,
            repeats: None,
        }
    }
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    fs::write(path, text).map_err(|source| io_error(path, source))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|source| io_error(dir, source))
}

fn io_error(path: &Path, source: std::io::Error) -> Failure {
    Failure::Engine(redgrid::Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output serializes");
    s.push('\n');
    s
}

fn threads() -> CliResult<usize> {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var("REDGRID_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n.min(available.max(1))),
            _ => Err(Failure::Usage(format!(
                "REDGRID_THREADS must be a positive integer, got `{v}`"
            ))),
        },
        Err(_) => Ok(available),
    }
}

fn load_scenario(args: &ScenarioArgs) -> CliResult<(PowerSystem, FaultSpec)> {
    let sys = PowerSystem::load(&args.system)?;
    let fault = FaultSpec::load(&args.fault)?;
    Ok((sys, fault))
}

fn run(cli: &Cli, file: &FileConfig) -> CliResult<()> {
    match &cli.command {
        Command::Pf { system } => {
            let sys = PowerSystem::load(system)?;
            let sol = solve_power_flow(&sys, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
            let buses: Vec<_> = sys.buses.iter().map(|b| b.id).collect();
            let gens: Vec<_> = sys.machines.iter().map(|m| m.bus).collect();
            print!(
                "{}",
                to_json(&json!({
                    "buses": buses,
                    "vm": sol.vm,
                    "va": sol.va,
                    "generators": gens,
                    "p_gen": sol.p_gen,
                    "q_gen": sol.q_gen,
                    "iterations": sol.iterations,
                    "max_mismatch": sol.max_mismatch,
                }))
            );
        }
        Command::Simulate {
            scenario,
            mode,
            settings,
            out,
            report,
        } => {
            let (sys, fault) = load_scenario(scenario)?;
            let rc = RunConfig::merge(&settings.flags(), file);
            let cfg = AdaptiveConfig {
                method: mode.engine_name().to_string(),
                reduction: rc.reduction,
                h: rc.h,
                t_end: rc.t_end,
            };
            let (res, rep) = redgrid::adaptive::run_adaptive(&sys, &fault, &cfg)?;
            create_dir(out)?;
            res.write_csv(&out.join("states.csv"))?;
            let summary = json!({
                "mode": format!("{mode:?}").to_lowercase(),
                "h": rc.h,
                "t_end": rc.t_end,
                "steps": res.times.len() - 1,
                "wall_clock": res.wall_clock,
                "events": res.events,
            });
            write_file(&out.join("summary.json"), &to_json(&summary))?;
            if let Some(path) = report {
                write_file(path, &to_json(&rep))?;
            }
            info!("{} steps in {:.3} s", res.times.len() - 1, res.wall_clock);
        }
        Command::Modal {
            system,
            fault,
            settings,
            out,
        } => {
            let sys = PowerSystem::load(system)?;
            let fault = fault.as_deref().map(FaultSpec::load).transpose()?;
            let rc = RunConfig::merge(&settings.flags(), file);
            let report = modal_report(&sys, fault.as_ref(), &rc.reduction, rc.h)?;
            match out {
                Some(path) => write_file(path, &to_json(&report))?,
                None => print!("{}", to_json(&report)),
            }
        }
        Command::Reduce {
            scenario,
            method,
            settings,
            out,
        } => {
            let (sys, fault) = load_scenario(scenario)?;
            let rc = RunConfig::merge(&settings.flags(), file);
            AdaptiveConfig {
                method: method.name().into(),
                reduction: rc.reduction.clone(),
                h: rc.h,
                t_end: rc.t_end,
            }
            .validate()?;
            let sc = Scenario::new(&sys, &fault, rc.h, rc.t_end)?;
            let (model, selection) =
                sc.reduce(method.name(), &rc.reduction, &Registry::default())?;
            let doc = json!({
                "method": method.name(),
                "settings": rc.reduction,
                "selection": selection,
                "model": model,
            });
            write_file(out, &to_json(&doc))?;
        }
        Command::Compare {
            scenario,
            settings,
            out,
            csv_dir,
            repeats,
        } => {
            let (sys, fault) = load_scenario(scenario)?;
            let mut flags = settings.flags();
            flags.repeats = *repeats;
            let rc = RunConfig::merge(&flags, file);
            let cfg = CompareConfig {
                h: rc.h,
                t_end: rc.t_end,
                reduction: rc.reduction,
                methods: DEFAULT_METHODS.iter().map(|s| s.to_string()).collect(),
                repeats: rc.repeats,
                threads: threads()?,
            };
            let cmp = compare(&sys, &fault, &cfg)?;
            write_file(out, &format!("{}\n", cmp.report.to_json()))?;
            write_file(&timing_path(out), &to_json(&cmp.timing))?;
            if let Some(dir) = csv_dir {
                create_dir(dir)?;
                for (method, res) in &cmp.results {
                    res.write_csv(&dir.join(format!("{method}.csv")))?;
                }
            }
            for row in &cmp.report.methods {
                let wall = cmp.timing.wall_clock(&row.method).unwrap_or(f64::NAN);
                info!(
                    "{:>6}: delta rmse {:.4} deg, {:.4} s",
                    row.method, row.rmse[0].rmse, wall
                );
            }
            debug_assert!(cmp.report.row(FULL).is_some());
        }
    }
    Ok(())
}

/// `report.json` -> `report.timing.json`.
fn timing_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map_or_else(|| "report".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.timing.json"))
}

fn fail(err: &Failure, json_errors: bool) -> ExitCode {
    let code = err.exit_code();
    if json_errors {
        eprintln!(
            "{}",
            json!({ "error": err.kind(), "message": err.to_string(), "exit_code": code })
        );
    } else {
        eprintln!("error: {err}");
    }
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let json_errors = std::env::args().any(|a| a == "--json-errors");
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            if json_errors {
                return fail(&Failure::Usage(e.to_string().trim().to_string()), true);
            }
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let file = match cli.config.as_deref().map(FileConfig::load).transpose() {
        Ok(f) => f.unwrap_or_default(),
        Err(msg) => return fail(&Failure::Usage(msg), cli.json_errors),
    };
    let level = cli
        .log_level
        .clone()
        .or_else(|| file.log_level.clone())
        .unwrap_or_else(|| "warn".into());
    if level.parse::<log::LevelFilter>().is_err() {
        return fail(
            &Failure::Usage(format!("unknown log level `{level}`")),
            cli.json_errors,
        );
    }
    env_logger::Builder::new()
        .parse_filters(&level)
        .format_timestamp(None)
        .init();
    match run(&cli, &file) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e, cli.json_errors),
    }
}
