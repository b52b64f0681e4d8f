use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use werner_core::scenario::{
    cavity_compare, figure_1a, figure_1b, four_particle_scenario, log_grid,
    run_scenario, werner_report, ConfigError, ResultTable, ScenarioConfig, ScenarioError,
};

/// Driven collective decay of two-level atoms and Werner-state generation.
///
/// All times are in units of 1/Γ and all rates in units of Γ, where Γ is the
/// collective decay constant (Γ = g²/κ for the cavity model).
#[derive(Parser, Debug)]
#[command(name = "werner", version, about, long_about)]
struct Cli {
    /// Emit JSON instead of CSV.
    #[arg(long, global = true)]
    json: bool,

    /// Write results to this file instead of stdout.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    /// Print worst trace and positivity diagnostics to stderr.
    #[arg(long, global = true)]
    tol_report: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario config file.
    Run { config: PathBuf },
    /// Normalized Ψ⁺ weight and Bell weights of the driven pair over time.
    Fig1a {
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        theta: f64,
        /// Drive strength |Ω|/Γ.
        #[arg(long, default_value_t = 5.0)]
        drive: f64,
        /// Final time in 1/Γ.
        #[arg(long, default_value_t = 20.0)]
        tfinal: f64,
    },
    /// Steady-state entropy term β over a log-spaced drive grid.
    Fig1b {
        #[arg(long, default_value_t = 0.05)]
        grid_min: f64,
        #[arg(long, default_value_t = 100.0)]
        grid_max: f64,
        #[arg(long, default_value_t = 60)]
        points: usize,
    },
    /// Four atoms driven towards a generalized Werner state.
    FourParticle {
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        theta: f64,
        /// Drive strength |Ω|/Γ.
        #[arg(long, default_value_t = 1000.0)]
        drive: f64,
        /// Final time in 1/Γ.
        #[arg(long, default_value_t = 50.0)]
        tfinal: f64,
    },
    /// Full atom–cavity model against the reduced collective-decay model.
    CavityCompare {
        #[arg(long, default_value_t = 0.05)]
        g: f64,
        #[arg(long, default_value_t = 1.0)]
        kappa: f64,
        #[arg(long, default_value_t = std::f64::consts::FRAC_PI_4, allow_hyphen_values = true)]
        xi: f64,
        #[arg(long, default_value_t = 2)]
        nmax: usize,
        /// Final time in 1/Γ.
        #[arg(long, default_value_t = 5.0)]
        tfinal: f64,
        /// Output spacing in 1/Γ.
        #[arg(long, default_value_t = 0.05)]
        dt: f64,
    },
    /// Werner state matrix, classification and entropy for a singlet fidelity.
    Werner {
        #[arg(long)]
        fidelity: f64,
    },
    /// Parse and check a scenario config without running it.
    Validate { config: PathBuf },
}

fn read_config(path: &Path) -> Result<ScenarioConfig, ScenarioError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError {
        field: path.display().to_string(),
        constraint: format!("cannot read file: {e}"),
        line: None,
    })?;
    Ok(ScenarioConfig::parse(&text)?)
}

enum Output {
    Tables(Vec<ResultTable>),
    Message(String),
}

fn execute(cli: &Cli) -> Result<Output, ScenarioError> {
    let one = |t: ResultTable| Output::Tables(vec![t]);
    Ok(match &cli.command {
        Command::Run { config } => one(run_scenario(&read_config(config)?)?),
        Command::Validate { config } => {
            let c = read_config(config)?;
            Output::Message(format!(
                "ok: {} model, {} atoms, initial state {}, t_final {} (1/Γ)\n",
                c.model.name(),
                c.n_atoms(),
                c.initial_state.name(),
                c.t_final
            ))
        }
        Command::Fig1a { theta, drive, tfinal } => one(figure_1a(*theta, *drive, *tfinal)?),
        Command::Fig1b { grid_min, grid_max, points } => {
            if !(*grid_min > 0.0 && grid_max >= grid_min) || *points == 0 {
                return Err(ConfigError {
                    field: "grid".into(),
                    constraint: "need 0 < grid-min ≤ grid-max and points ≥ 1".into(),
                    line: None,
                }
                .into());
            }
            let grid = log_grid(*grid_min, *grid_max, *points);
            one(figure_1b(&grid)?)
        }
        Command::FourParticle { theta, drive, tfinal } => {
            let r = four_particle_scenario(*theta, *drive, *tfinal)?;
            Output::Tables(vec![r.trajectory, r.populations])
        }
        Command::CavityCompare { g, kappa, xi, nmax, tfinal, dt } => {
            one(cavity_compare(*g, *kappa, *xi, *nmax, *tfinal, *dt)?)
        }
        Command::Werner { fidelity } => one(werner_report(*fidelity)?),
    })
}

fn render(output: &Output, json: bool) -> String {
    match output {
        Output::Message(m) => m.clone(),
        Output::Tables(tables) if json => {
            if let [t] = tables.as_slice() {
                format!("{}\n", t.to_json())
            } else {
                let parts: Vec<String> = tables.iter().map(|t| t.to_json()).collect();
                format!("[\n{}\n]\n", parts.join(",\n"))
            }
        }
        Output::Tables(tables) => {
            let parts: Vec<String> = tables.iter().map(|t| t.to_csv()).collect();
            parts.join("\n")
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let output = match execute(&cli) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if cli.tol_report {
        if let Output::Tables(tables) = &output {
            for t in tables {
                eprintln!("{}", t.tolerance_report());
            }
        }
    }
    let text = render(&output, cli.json);
    match &cli.out {
        Some(path) => {
            if let Err(e) = fs::write(path, text) {
                eprintln!("error: cannot write {}: {e}", path.display());
                return ExitCode::from(1);
            }
        }
        None => print!("{text}"),
    }
    ExitCode::SUCCESS
}
