use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use steamgen::simctl::{export_to_dir, load_config, run, RunError, RunLog, ScenarioConfig};

#[derive(Parser)]
#[command(name = "simctl", version, about = "Hierarchical control of a steam generator ensemble")]
struct Cli {
    /// error, warn, info, debug or trace
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bootstrap, simulate and write the log and CSV files.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Simulated seconds, rounded up to whole high-level periods.
        #[arg(long)]
        until: Option<f64>,
    },
    /// Validate a configuration file.
    Check {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write CSV files for a channel selection of a saved log.
    Export {
        /// Saved run log; defaults to `<out-dir>/log.json`.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Comma-separated channels such as `ml.u_bar,p_b1` or table names.
        #[arg(long, value_delimiter = ',')]
        channels: Vec<String>,
    },
}

fn report(cfg: &ScenarioConfig) {
    let t = &cfg.timing;
    println!("config ok");
    println!("  boilers: {}", cfg.boilers.iter().map(|b| b.name.as_str()).collect::<Vec<_>>().join(", "));
    println!("  tau = {} s, T_M = {} s, T_H = {} s", t.tau, t.t_m, t.t_h);
    println!("  mu = {}, plant steps per ML step = {}", t.mu(), t.plant_steps());
    println!("  N_M = {}, N_H = {}, duration = {} s, seed = {}", t.n_m, t.n_h, cfg.duration, cfg.seed);
}

fn execute(command: Command) -> Result<(), RunError> {
    match command {
        Command::Run { config, out_dir, seed, until } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let log = run(&cfg, &out_dir, until)?;
            let steps = log.ml.rows.len();
            let flagged = ["viol_u_bar", "viol_unit", "viol_rate", "viol_y"]
                .iter()
                .filter_map(|c| log.ml.series(c))
                .map(|s| s.iter().filter(|&&v| v != 0.0).count())
                .sum::<usize>();
            println!("{steps} medium-level steps, {flagged} constraint flags, output in {}", out_dir.display());
            Ok(())
        }
        Command::Check { config } => {
            report(&load_config(&config)?);
            Ok(())
        }
        Command::Export { log, out_dir, channels } => {
            let path = log.unwrap_or_else(|| out_dir.join("log.json"));
            let text = std::fs::read_to_string(&path)
                .map_err(|e| RunError::Io { path: path.display().to_string(), message: e.to_string() })?;
            let log = RunLog::from_json(&text)?;
            for p in export_to_dir(&log, &channels, Path::new(&out_dir))? {
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log_level).init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
