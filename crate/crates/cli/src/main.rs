mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "ktmpc", version, about = "Koopman tracking MPC: fit, tighten, simulate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PlantArg {
    NumericalExample,
    Unicycle,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ExampleArg {
    /// Numerical example, nominal.
    A1,
    /// Numerical example with bounded disturbances.
    A2,
    /// Unicycle square course with an EDMD model.
    Unicycle,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a lifted linear model to trajectory data.
    Fit {
        /// Trajectory CSV (`traj_id, t, x_*, u_*`).
        data: PathBuf,
        /// Lifting JSON, e.g. `{"kind": "polynomial", "params": {"max_degree": 2}}`.
        lifting: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = ktmpc::koopman::DEFAULT_RIDGE)]
        ridge: f64,
        /// Sets the model output matrix from a benchmark plant.
        #[arg(long, value_enum)]
        plant: Option<PlantArg>,
        /// Fraction of trajectories held out for the error report.
        #[arg(long, default_value_t = 0.1)]
        holdout: f64,
    },
    /// Compute the tightened constraint schedule of a scenario.
    Tighten {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the closed loop and write the log and metrics.
    Simulate {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Stream indices `a..b` (or `a..=b`) run in parallel.
        #[arg(long)]
        seeds: Option<String>,
        /// Output directory; defaults to the scenario's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Omit the timestamp and runtime from the metrics.
        #[arg(long)]
        deterministic: bool,
    },
    /// Print the lifted-model and plant steady targets for a reference.
    Steady {
        scenario: PathBuf,
        /// Comma-separated reference output.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        yt: Vec<f64>,
    },
    /// Generate open-loop training trajectories.
    Generate {
        #[arg(long, value_enum)]
        plant: PlantArg,
        #[arg(long)]
        n_traj: usize,
        #[arg(long)]
        traj_len: usize,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        state_lower: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        state_upper: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        input_lower: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        input_upper: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a built-in scenario as JSON.
    Example {
        #[arg(value_enum)]
        name: ExampleArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Fit {
            data,
            lifting,
            out,
            ridge,
            plant,
            holdout,
        } => commands::fit(&data, &lifting, &out, ridge, plant, holdout),
        Command::Tighten { scenario, out } => commands::tighten(&scenario, &out),
        Command::Simulate {
            scenario,
            seed,
            seeds,
            out,
            deterministic,
        } => commands::simulate(&scenario, seed, seeds.as_deref(), out, deterministic),
        Command::Steady { scenario, yt } => commands::steady(&scenario, &yt),
        Command::Generate {
            plant,
            n_traj,
            traj_len,
            state_lower,
            state_upper,
            input_lower,
            input_upper,
            seed,
            out,
        } => commands::generate(
            plant,
            n_traj,
            traj_len,
            (&state_lower, &state_upper),
            (&input_lower, &input_upper),
            seed,
            &out,
        ),
        Command::Example { name, out } => commands::example(name, out.as_deref()),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
