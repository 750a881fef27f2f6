use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tbqkd_cli::{load_config, run, ExperimentConfig, Mode, Override, Report};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "tbqkd", version, about = "Time-bin plug-and-play QKD simulator with error filtration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Visibility versus phase-noise variance, Monte Carlo against closed form.
    Sweep(Flags),
    /// BB84 sessions: sifted error rate, confidence interval and verdict.
    Qkd(Flags),
    /// Random-replacement eavesdropper against the noise channel.
    Eve(Flags),
}

#[derive(clap::Args)]
struct Flags {
    /// Config file (`key = value`, dotted sections).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "U64", allow_hyphen_values = true)]
    seed: Option<String>,
    /// Single noise variance, replacing the configured grid.
    #[arg(long, value_name = "F", allow_hyphen_values = true)]
    sigma2: Option<String>,
    #[arg(long, value_name = "N", allow_hyphen_values = true)]
    trials: Option<String>,
    #[arg(long, value_name = "N", allow_hyphen_values = true)]
    rounds: Option<String>,
    #[arg(long, value_name = "BOOL")]
    filtration: Option<String>,
    #[arg(long = "n-pairs", value_name = "N", allow_hyphen_values = true)]
    n_pairs: Option<String>,
    /// CSV destination; the summary goes next to it. Defaults to stdout.
    #[arg(long, value_name = "PATH")]
    out: Option<String>,
    /// Worker threads (results do not depend on it).
    #[arg(long, value_name = "N", allow_hyphen_values = true)]
    threads: Option<String>,
}

impl Flags {
    fn overrides(&self) -> Vec<Override> {
        let pairs = [
            ("seed", "seed", &self.seed),
            ("sigma2", "noise.sigma2_grid", &self.sigma2),
            ("trials", "trials", &self.trials),
            ("rounds", "rounds", &self.rounds),
            ("filtration", "apparatus.filtration", &self.filtration),
            ("n-pairs", "apparatus.n_pairs", &self.n_pairs),
            ("out", "output", &self.out),
            ("threads", "threads", &self.threads),
        ];
        pairs
            .into_iter()
            .filter_map(|(flag, key, v)| v.as_ref().map(|v| Override::new(flag, key, v.clone())))
            .collect()
    }
}

/// `out.csv` -> `out.summary.txt`.
fn summary_path(out: &Path) -> PathBuf {
    out.with_extension("summary.txt")
}

fn write_report(cfg: &ExperimentConfig, report: &Report) -> std::io::Result<()> {
    match &cfg.output {
        Some(path) => {
            std::fs::write(path, &report.csv)?;
            std::fs::write(summary_path(path), &report.summary)
        }
        None => {
            print!("{}", report.csv);
            eprint!("{}", report.summary);
            Ok(())
        }
    }
}

fn execute(cfg: &ExperimentConfig) -> Result<Report, String> {
    let go = || run(cfg).map_err(|e| e.to_string());
    match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| e.to_string())?
            .install(go),
        None => go(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, flags) = match &cli.command {
        Command::Sweep(f) => (Mode::Sweep, f),
        Command::Qkd(f) => (Mode::Qkd, f),
        Command::Eve(f) => (Mode::Eve, f),
    };
    let cfg = match load_config(mode, flags.config.as_deref(), &flags.overrides()) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let report = match execute(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    };
    if let Err(e) = write_report(&cfg, &report) {
        eprintln!("error: cannot write output: {e}");
        return ExitCode::from(EXIT_RUNTIME);
    }
    ExitCode::SUCCESS
}
