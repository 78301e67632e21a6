use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use momsand_cli::{run, CliError, CommandKind, ExperimentConfig, THREADS_ENV};

#[derive(Parser)]
#[command(name = "momsand", version, about = "Two-sided moment bounds for sums weighted by random products")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print E|X|^q for each q in --q
    Moments(Flags),
    /// Fit the hypotheses and print the constants with their trace
    Certify(Flags),
    /// Check the two-sided bound on one or more coefficient draws
    Verify(Flags),
    /// Torus integrals of Riesz products against the product-path side
    Riesz(Flags),
    /// Bracket (1/n) E|S_n|^p for the partial sums of a perpetuity
    Perpetuity(Flags),
    /// Random signs: the growth that rules out a uniform upper constant
    Counterexample(Flags),
}

#[derive(Args)]
struct Flags {
    /// Law of X, e.g. twopoint:a=0.5,b=1.5,pa=0.5
    #[arg(long)]
    dist: Option<String>,
    #[arg(long)]
    p: Option<f64>,
    /// Number of terms (or a comma list for perpetuity and counterexample)
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    #[arg(long)]
    dim: Option<usize>,
    /// l1, l2 or sup
    #[arg(long)]
    norm: Option<String>,
    /// Flat comma list, or random:count=N,scale=S,seed=K
    #[arg(long, allow_hyphen_values = true)]
    coeffs: Option<String>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    grid_a: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    grid_q: Option<Vec<f64>>,
    /// Moment orders for `moments`
    #[arg(long, value_delimiter = ',')]
    q: Option<Vec<f64>>,
    #[arg(long)]
    draws: Option<usize>,
    /// Law of B; components of a vector B separated by ';'
    #[arg(long)]
    bdist: Option<String>,
    /// independent, affine:offset=..,slope=.. or power:scale=..,exponent=..
    #[arg(long)]
    coupling: Option<String>,
    /// Lacunary frequencies as a comma list
    #[arg(long, value_delimiter = ',')]
    seq: Option<Vec<u64>>,
    #[arg(long)]
    term: Option<usize>,
    /// Grid points for torus integrals
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    fixed_point_demo: bool,
    #[arg(long, value_delimiter = ',')]
    lower_c: Option<Vec<f64>>,
    /// Write Monte Carlo samples as CSV
    #[arg(long)]
    csv: Option<String>,
    /// Write the JSON report here instead of stdout
    #[arg(long)]
    out: Option<String>,
    /// JSON file with the same keys as the flags; flags win
    #[arg(long)]
    config: Option<String>,
}

impl Flags {
    fn into_config(self, command: CommandKind) -> (ExperimentConfig, Option<String>) {
        let cfg = ExperimentConfig {
            command: Some(command),
            dist: self.dist,
            p: self.p,
            n: self.n,
            dim: self.dim,
            norm: self.norm,
            coeffs: self.coeffs,
            reps: self.reps,
            seed: self.seed,
            grid_a: self.grid_a,
            grid_q: self.grid_q,
            q: self.q,
            draws: self.draws,
            bdist: self.bdist,
            coupling: self.coupling,
            seq: self.seq,
            term: self.term,
            points: self.points,
            fixed_point_demo: self.fixed_point_demo.then_some(true),
            lower_c: self.lower_c,
            csv: self.csv,
            out: self.out,
        };
        (cfg, self.config)
    }
}

fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot size the thread pool: {e}")))
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    init_threads()?;
    let (flags_cfg, config_path) = match cli.command {
        Command::Moments(f) => f.into_config(CommandKind::Moments),
        Command::Certify(f) => f.into_config(CommandKind::Certify),
        Command::Verify(f) => f.into_config(CommandKind::Verify),
        Command::Riesz(f) => f.into_config(CommandKind::Riesz),
        Command::Perpetuity(f) => f.into_config(CommandKind::Perpetuity),
        Command::Counterexample(f) => f.into_config(CommandKind::Counterexample),
    };
    let cfg = match config_path {
        Some(path) => ExperimentConfig::from_file(&path)?.overridden_by(&flags_cfg),
        None => flags_cfg,
    };
    let out = cfg.out.clone();
    // the destination is not part of the experiment
    let outcome = run(&ExperimentConfig { out: None, ..cfg })?;
    for line in &outcome.lines {
        eprintln!("{line}");
    }
    let json = outcome.report.to_json();
    match out {
        Some(path) => std::fs::write(&path, json + "\n").map_err(|e| CliError::Io(format!("{path}: {e}")))?,
        None => println!("{json}"),
    }
    Ok(outcome.report.exit_code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("momsand: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
