//! Command-line front end for simulations, rate studies and diagnostics.

mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use nlch::harness::{epsilon_sweep, kinetic_sweep_infinity, kinetic_sweep_zero, RateStudy, SweepBase};
use nlch::potentials::{check_assumptions, eps_star};
use nlch::stepper::{ledger_csv, snapshot_csv};
use nlch::{KernelOps, Simulator};

use config::Config;

#[derive(Parser, Debug)]
#[command(name = "nlch", version, about = "Nonlocal Cahn–Hilliard with dynamic boundary conditions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Overrides the initial-data seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Single simulation: ledger and trajectory snapshots.
    Run,
    /// Regularization rate study.
    SweepEps,
    /// Kinetic rate study towards `L = 0`.
    SweepLZero,
    /// Kinetic rate study towards `L = ∞`.
    SweepLInf,
    /// Kernel constants, assumption margins, spectrum and admissible `ε`.
    Diagnostics,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("config-not-found: {0}")]
    ConfigNotFound(String),
    #[error("config-invalid: {0}")]
    ConfigInvalid(String),
    #[error("assumption-violation: {0}")]
    Assumption(String),
    #[error("solver-failure: {0}")]
    Solver(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::ConfigNotFound(_) | CliError::ConfigInvalid(_) => 2,
            CliError::Assumption(_) => 3,
            CliError::Solver(_) => 4,
        }
    }
}

impl From<nlch::Error> for CliError {
    fn from(e: nlch::Error) -> Self {
        use nlch::Error as E;
        let msg = e.to_string().replace('\n', " ");
        match e {
            E::Assumption { .. } => CliError::Assumption(msg),
            E::InvalidGrid(_)
            | E::GridMismatch(_)
            | E::InvalidKernel(_)
            | E::InvalidPotential(_)
            | E::InvalidArgument(_)
            | E::DegenerateFit(_) => CliError::ConfigInvalid(msg),
            _ => CliError::Solver(msg),
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Solver(format!("cannot write {}: {e}", path.display()))
}

#[derive(Serialize)]
struct Timings {
    wall_seconds: f64,
}

/// Written to every output directory.
#[derive(Serialize)]
struct RunManifest<'a> {
    command: Command,
    config_path: String,
    output_dir: String,
    seed: u64,
    tool_version: &'static str,
    timings: Timings,
    config: &'a Config,
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<Config, CliError> {
    let path = path.ok_or_else(|| CliError::ConfigNotFound("--config is required".into()))?;
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::ConfigNotFound(format!("{}: {e}", path.display())))?;
    let mut cfg: Config = toml::from_str(&text)
        .map_err(|e| CliError::ConfigInvalid(e.to_string().replace('\n', " ")))?;
    if let Some(s) = seed {
        cfg.initial.seed = s;
    }
    Ok(cfg)
}

struct Output {
    dir: PathBuf,
}

impl Output {
    fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    fn write(&self, name: &str, contents: &str) -> Result<(), CliError> {
        let p = self.dir.join(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
        }
        fs::write(&p, contents).map_err(|e| io_error(&p, e))
    }
}

fn sweep_base(cfg: &Config) -> Result<SweepBase, CliError> {
    let grid = cfg.grid()?;
    let ops = Arc::new(KernelOps::build(cfg.kernels.bulk.spec(), cfg.kernels.surface.spec(), &grid)?);
    Ok(SweepBase {
        ops,
        pot: cfg.potential.pair(),
        cfg: cfg.time.sim_config()?,
        phi0: cfg.initial.build(&grid)?,
        seed: cfg.initial.seed,
    })
}

fn cmd_run(cfg: &Config, out: &Output) -> Result<(), CliError> {
    let base = sweep_base(cfg)?;
    let sim = Simulator::new(base.ops, base.pot, base.cfg)?;
    let s0 = sim.initial_state(&base.phi0)?;
    let run = sim.run(&s0)?;
    out.write("ledger.csv", &ledger_csv(&run.ledger))?;
    let mut index = String::from("index,t\n");
    for (k, t) in run.trajectory.times.iter().enumerate() {
        let _ = writeln!(index, "{k},{t:.16e}");
        out.write(&format!("trajectory/phi_{k:05}.csv"), &snapshot_csv(sim.grid(), &run.trajectory.phi[k]))?;
        out.write(&format!("trajectory/mu_{k:05}.csv"), &snapshot_csv(sim.grid(), &run.trajectory.mu[k]))?;
    }
    out.write("trajectory/index.csv", &index)?;
    Ok(())
}

fn write_study(out: &Output, study: &RateStudy) -> Result<(), CliError> {
    out.write("rate_study.csv", &study.to_csv())?;
    println!("slope {:.6} residual {:.6}", study.fit.slope, study.fit.residual);
    Ok(())
}

fn cmd_sweep(cfg: &Config, out: &Output, command: Command) -> Result<(), CliError> {
    let base = sweep_base(cfg)?;
    let s = &cfg.sweep;
    let study = match command {
        Command::SweepEps => epsilon_sweep(&base, &s.eps_list, s.resolved_eps_ref())?,
        Command::SweepLZero => kinetic_sweep_zero(&base, &s.l_zero_list)?,
        _ => kinetic_sweep_infinity(&base, &s.l_inf_list, s.l_min)?,
    };
    write_study(out, &study)
}

fn cmd_diagnostics(cfg: &Config, out: &Output) -> Result<(), CliError> {
    let grid = cfg.grid()?;
    let ops = KernelOps::build(cfg.kernels.bulk.spec(), cfg.kernels.surface.spec(), &grid)?;
    let pot = cfg.potential.pair();
    let c = &ops.constants;
    let r = check_assumptions(&pot, &ops);
    let mut hs = ops.hs_diagnostics(cfg.diagnostics.hs_modes)?;
    let mut s = String::from("key,value\n");
    let mut row = |k: &str, v: String| {
        let _ = writeln!(s, "{k},{v}");
    };
    let f = |v: f64| format!("{v:.16e}");
    row("a_lower", f(c.a_lower));
    row("a_upper", f(c.a_upper));
    row("b", f(c.b));
    row("a_lower_surf", f(c.a_lower_surf));
    row("a_upper_surf", f(c.a_upper_surf));
    row("b_surf", f(c.b_surf));
    row("j_l1_plane", f(ops.j_l1_plane()));
    row("eps_star", f(eps_star(&pot, c)));
    row("a1", r.a1.to_string());
    row("a1_margin_bulk", f(r.a1_margin.0));
    row("a1_margin_surf", f(r.a1_margin.1));
    row("a2", r.a2.to_string());
    row("a3", r.a3.to_string());
    row("a3_margin_bulk", f(r.a3_margin.0));
    row("a3_margin_surf", f(r.a3_margin.1));
    row("a6", r.a6.to_string());
    row("a6_margin_bulk", f(r.a6_margin.0));
    row("a6_margin_surf", f(r.a6_margin.1));
    row("a7", r.a7.to_string());
    row("a8", r.a8.to_string());
    row("a8_kappa_bulk", f(r.kappa.0));
    row("a8_kappa_surf", f(r.kappa.1));
    row("a9", r.a9.to_string());
    row("a9_constant_bulk", f(r.a9_constant.0));
    row("a9_constant_surf", f(r.a9_constant.1));
    row("a10", r.a10.to_string());
    row("hs_frobenius", f(hs.frobenius));
    row("hs_tail_norm", f(hs.tail_norm));
    print!("{s}");
    out.write("diagnostics.csv", &s)?;
    hs.singular_values.truncate(cfg.diagnostics.hs_modes);
    out.write("hs_spectrum.csv", &hs.to_csv())?;
    Ok(())
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(cli.config.as_deref(), cli.seed)?;
    if cli.jobs == 0 {
        return Err(CliError::ConfigInvalid("--jobs must be at least 1".into()));
    }
    // a second initialization in the same process is harmless
    let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global();
    let out = Output::new(&cli.out)?;
    let start = Instant::now();
    match cli.command {
        Command::Run => cmd_run(&cfg, &out)?,
        Command::SweepEps | Command::SweepLZero | Command::SweepLInf => cmd_sweep(&cfg, &out, cli.command)?,
        Command::Diagnostics => cmd_diagnostics(&cfg, &out)?,
    }
    let manifest = RunManifest {
        command: cli.command,
        config_path: cli.config.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
        output_dir: cli.out.display().to_string(),
        seed: cfg.initial.seed,
        tool_version: env!("CARGO_PKG_VERSION"),
        timings: Timings {
            wall_seconds: start.elapsed().as_secs_f64(),
        },
        config: &cfg,
    };
    let text = toml::to_string(&manifest).map_err(|e| CliError::Solver(format!("manifest: {e}")))?;
    out.write("manifest.toml", &text)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
