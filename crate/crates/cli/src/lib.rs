//! Command-line driver: dataset synthesis, training, evaluation, restoration,
//! spatiotemporal slices and two-arm sweeps.

pub mod commands;
pub mod config;
pub mod report;

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub use config::{RunConfig, SynthConfig, Variant};

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(or2_core::Error),
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use or2_core::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Core(E::NonFiniteParameter { .. } | E::NonFiniteGradient(_) | E::EmptyScene) => {
                EXIT_NUMERIC
            }
            CliError::Core(_) => EXIT_DATA,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Data(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<or2_core::Error> for CliError {
    fn from(e: or2_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(format!("csv: {e}"))
    }
}

const KEYS_HELP: &str = "\
Every configuration key can be given as a flag: `--frames 10`, \
`--noise-sigma 0.01`, `--eval-cameras 3,5`, `--use-residual-maps false`. \
Boolean keys also accept `--key` and `--no-key`; `--no-residual` disables \
residual maps. Flags override values from `--config FILE` (TOML).";

#[derive(Parser, Debug)]
#[command(name = "or2", version, about = "Online dynamic Gaussian splatting with residual maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic fixture: clean and noisy datasets plus seed points.
    #[command(after_help = KEYS_HELP)]
    Synth(Passthrough),
    /// Train a stream; writes one checkpoint per frame and metrics.csv.
    #[command(after_help = KEYS_HELP)]
    Train(Passthrough),
    /// Score held-out views; `--baseline RUN_DIR` adds a delta table.
    #[command(after_help = KEYS_HELP)]
    Eval(Passthrough),
    /// Subtract residual maps from the observations and score the result.
    #[command(after_help = KEYS_HELP)]
    Restore(Passthrough),
    /// Spatiotemporal slice: `--frames-dir DIR --column X --out FILE`.
    Slice(Passthrough),
    /// Baseline and residual arms: train, eval and restore each.
    #[command(after_help = KEYS_HELP)]
    Sweep(Passthrough),
}

#[derive(clap::Args, Debug)]
struct Passthrough {
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OPTIONS")]
    args: Vec<String>,
}

/// Removes `--name VALUE` (or `--name=VALUE`) from `args`.
fn take_option(args: &mut Vec<String>, name: &str) -> Result<Option<String>, CliError> {
    let flag = format!("--{name}");
    let prefix = format!("--{name}=");
    if let Some(i) = args.iter().position(|a| *a == flag) {
        if i + 1 >= args.len() {
            return Err(CliError::Usage(format!("{flag} needs a value")));
        }
        let v = args.remove(i + 1);
        args.remove(i);
        return Ok(Some(v));
    }
    if let Some(i) = args.iter().position(|a| a.starts_with(&prefix)) {
        let v = args.remove(i)[prefix.len()..].to_string();
        return Ok(Some(v));
    }
    Ok(None)
}

fn load_config(args: &mut Vec<String>, cwd: &Path) -> Result<RunConfig, CliError> {
    let file = take_option(args, "config")?.map(PathBuf::from);
    RunConfig::load(file.as_deref(), args, cwd)
}

/// Sets the global worker count from `OR2_THREADS` when present.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("OR2_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("OR2_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))
}

/// Runs the command line and returns the process exit code.
pub fn run(argv: impl IntoIterator<Item = String>) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("or2: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    configure_threads()?;
    let cwd = std::env::current_dir().map_err(|e| CliError::Data(format!("current dir: {e}")))?;
    match command {
        Command::Synth(mut p) => commands::synth(&load_config(&mut p.args, &cwd)?),
        Command::Train(mut p) => commands::train(&load_config(&mut p.args, &cwd)?).map(|_| ()),
        Command::Eval(mut p) => {
            let baseline = take_option(&mut p.args, "baseline")?.map(|b| cwd.join(b));
            let cfg = load_config(&mut p.args, &cwd)?;
            let summary = commands::eval(&cfg)?;
            if let Some(dir) = baseline {
                let base = report::read_summary(&dir.join(report::SUMMARY_FILE))?;
                let delta = report::delta_table(&summary, &base);
                report::write_delta(&cfg.output.join(report::DELTA_FILE), &delta)?;
                print!("{}", report::format_delta(&delta));
            }
            Ok(())
        }
        Command::Restore(mut p) => commands::restore(&load_config(&mut p.args, &cwd)?).map(|_| ()),
        Command::Slice(mut p) => {
            let dir = take_option(&mut p.args, "frames-dir")?
                .ok_or_else(|| CliError::Usage("--frames-dir is required".into()))?;
            let out = take_option(&mut p.args, "out")?
                .ok_or_else(|| CliError::Usage("--out is required".into()))?;
            let column = take_option(&mut p.args, "column")?
                .ok_or_else(|| CliError::Usage("--column is required".into()))?;
            let column: usize = column
                .parse()
                .map_err(|_| CliError::Usage(format!("--column: expected an integer, got '{column}'")))?;
            if let Some(extra) = p.args.first() {
                return Err(CliError::Usage(format!("unexpected argument '{extra}'")));
            }
            commands::slice(&cwd.join(dir), column, &cwd.join(out))
        }
        Command::Sweep(mut p) => commands::sweep(&load_config(&mut p.args, &cwd)?).map(|_| ()),
    }
}
