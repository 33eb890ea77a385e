//! `envelope`: capacity of constant-envelope signaling over 2×2 Gaussian
//! MIMO channels, from the command line.
//!
//! Exit codes: 0 success, 1 invalid input (including a distribution that
//! fails verification), 2 computation failure.

mod commands;
mod config;
mod output;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use config::{Format, RunConfig, Settings};

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Computation(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Computation(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Computation(m) => f.write_str(m),
        }
    }
}

impl From<envelope_core::Error> for CliError {
    fn from(e: envelope_core::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Computation(e.to_string())
        }
    }
}

#[derive(Parser)]
#[command(name = "envelope", version, about = "Constant-envelope MIMO capacity solver")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

/// Every value is taken as text and validated by the configuration layer, so
/// file and flag inputs share one set of error messages.
#[derive(Args)]
struct GlobalArgs {
    /// `key = value` configuration file; flags override it
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory [default: $ENVELOPE_OUT_DIR or .]
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<String>,
    /// json or csv (tabular commands default to csv)
    #[arg(long, global = true)]
    format: Option<String>,
    /// Display information quantities in bits (files stay in nats)
    #[arg(long, global = true)]
    bits: bool,
    #[arg(long, global = true)]
    kkt_tol: Option<String>,
    #[arg(long, global = true)]
    max_atoms: Option<String>,
    #[arg(long, global = true)]
    max_iterations: Option<String>,
    #[arg(long, global = true)]
    theta_grid_size: Option<String>,
    #[arg(long, global = true)]
    radial_nodes: Option<String>,
    #[arg(long, global = true)]
    angular_nodes: Option<String>,
    #[arg(long, global = true)]
    v_max: Option<String>,
    /// Any configuration key, e.g. `--set warm_start=false`
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Capacity and optimal input at one (λ, R)
    Solve {
        #[arg(long)]
        lambda: Option<String>,
        #[arg(long)]
        radius: Option<String>,
    },
    /// Capacity over an increasing list of radii
    Sweep {
        #[arg(long)]
        lambda: Option<String>,
        /// Comma-separated radii
        #[arg(long)]
        radii: Option<String>,
        /// start:stop:count
        #[arg(long)]
        radius_range: Option<String>,
    },
    /// Norm threshold against the water-filling activation level
    Threshold {
        /// Repeatable
        #[arg(long)]
        lambda: Vec<String>,
        /// Comma-separated
        #[arg(long)]
        lambdas: Option<String>,
    },
    /// Capacity bounds for an n×n channel
    Bounds {
        #[arg(long)]
        n: Option<String>,
        /// |det H|
        #[arg(long)]
        det: Option<String>,
        /// Repeatable
        #[arg(long)]
        radius: Vec<String>,
        #[arg(long)]
        radii: Option<String>,
    },
    /// Water-filling power split and capacity
    Waterfill {
        #[arg(long)]
        lambda: Option<String>,
        /// Repeatable
        #[arg(long)]
        radius: Vec<String>,
        #[arg(long)]
        radii: Option<String>,
    },
    /// Degrees-of-freedom check with a uniform input on the sphere
    Dof {
        #[arg(long)]
        n: Option<String>,
        #[arg(long)]
        lambda: Option<String>,
        /// Repeatable
        #[arg(long)]
        radius: Vec<String>,
        #[arg(long)]
        radii: Option<String>,
        #[arg(long)]
        samples: Option<String>,
        #[arg(long)]
        seed: Option<String>,
    },
    /// Check the optimality conditions for a distribution file
    Verify {
        /// JSON with `lambda`, `radius` and `atoms: [{theta, prob}]`
        file: PathBuf,
    },
}

struct Flags(Settings);

impl Flags {
    fn one(&mut self, key: &str, value: Option<String>) -> Result<(), CliError> {
        match value {
            Some(v) => self.0.set(key, v),
            None => Ok(()),
        }
    }

    fn many(&mut self, key: &str, values: Vec<String>) -> Result<(), CliError> {
        if values.is_empty() {
            return Ok(());
        }
        self.0.set(key, values.join(","))
    }
}

fn settings(global: GlobalArgs, command: &mut Command) -> Result<(Settings, &'static str, Format), CliError> {
    let mut layered = match &global.config {
        Some(path) => Settings::from_file(path)?,
        None => Settings::default(),
    };
    let mut f = Flags(Settings::default());
    f.one("out_dir", global.out_dir)?;
    f.one("format", global.format)?;
    if global.bits {
        f.one("bits", Some("true".into()))?;
    }
    f.one("kkt_tol", global.kkt_tol)?;
    f.one("max_atoms", global.max_atoms)?;
    f.one("max_iterations", global.max_iterations)?;
    f.one("theta_grid_size", global.theta_grid_size)?;
    f.one("radial_nodes", global.radial_nodes)?;
    f.one("angular_nodes", global.angular_nodes)?;
    f.one("v_max", global.v_max)?;
    for pair in &global.set {
        f.0.set_pair(pair)?;
    }
    let (name, format) = match command {
        Command::Solve { lambda, radius } => {
            f.one("lambda", lambda.take())?;
            f.one("radius", radius.take())?;
            ("solve", Format::Json)
        }
        Command::Sweep { lambda, radii, radius_range } => {
            f.one("lambda", lambda.take())?;
            f.one("radii", radii.take())?;
            f.one("radius_range", radius_range.take())?;
            ("sweep", Format::Csv)
        }
        Command::Threshold { lambda, lambdas } => {
            f.many("lambdas", std::mem::take(lambda))?;
            f.one("lambdas", lambdas.take())?;
            ("threshold", Format::Csv)
        }
        Command::Bounds { n, det, radius, radii } => {
            f.one("n", n.take())?;
            f.one("det", det.take())?;
            f.many("radii", std::mem::take(radius))?;
            f.one("radii", radii.take())?;
            ("bounds", Format::Csv)
        }
        Command::Waterfill { lambda, radius, radii } => {
            f.one("lambda", lambda.take())?;
            f.many("radii", std::mem::take(radius))?;
            f.one("radii", radii.take())?;
            ("waterfill", Format::Csv)
        }
        Command::Dof {
            n,
            lambda,
            radius,
            radii,
            samples,
            seed,
        } => {
            f.one("n", n.take())?;
            f.one("lambda", lambda.take())?;
            f.many("radii", std::mem::take(radius))?;
            f.one("radii", radii.take())?;
            f.one("samples", samples.take())?;
            f.one("seed", seed.take())?;
            ("dof", Format::Csv)
        }
        Command::Verify { .. } => ("verify", Format::Json),
    };
    layered.merge(f.0);
    Ok((layered, name, format))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let Cli { global, mut command } = cli;
    let (settings, name, default_format) = settings(global, &mut command)?;
    let mut cfg = RunConfig::resolve(name, default_format, &settings)?;
    match command {
        Command::Solve { .. } => commands::solve(&cfg),
        Command::Sweep { .. } => commands::sweep(&cfg),
        Command::Threshold { .. } => commands::threshold(&cfg),
        Command::Bounds { .. } => commands::bounds(&cfg),
        Command::Waterfill { .. } => commands::waterfill(&cfg),
        Command::Dof { .. } => commands::dof(&cfg),
        Command::Verify { file } => {
            cfg.distribution = Some(file);
            commands::verify(&cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            let ok = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            return ExitCode::from(if ok { 0 } else { 1 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
