use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use hdbandit_cli::{parse_config, run, to_toml, Mode, Overrides};
use hdbandit_core::policy::Variant;
use hdbandit_core::replay::synthetic::{write_synthetic_file, SyntheticConfig};

#[derive(Parser)]
#[command(name = "hdbandit", version, about = "Sparse contextual bandit simulations, replays and regret bounds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every requested variant on synthetic worlds.
    Simulate(Common),
    /// Compare CHD against its alternatives on synthetic worlds.
    Compare(Common),
    /// Sweep w, s and kappa one at a time (or as a product).
    Sensitivity {
        #[command(flatten)]
        common: Common,
        /// Take the full Cartesian product of the sweep lists.
        #[arg(long)]
        product: bool,
    },
    /// Replay a logged interaction CSV.
    Replay {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Column mapping file (TOML or JSON).
        #[arg(long)]
        schema: Option<PathBuf>,
        /// Vendor ids (comma-separated) or a count of most frequent vendors.
        #[arg(long)]
        vendors: Option<String>,
        #[arg(long)]
        subsample_runs: Option<usize>,
    },
    /// Evaluate the regret envelopes on a grid of horizons.
    Bounds {
        #[command(flatten)]
        common: Common,
        /// Comma-separated horizons.
        #[arg(long, value_delimiter = ',')]
        t_grid: Option<Vec<u64>>,
    },
    /// Write a synthetic interaction log in the default replay layout.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = SyntheticConfig::default().n_rows)]
        rows: usize,
        #[arg(long, default_value_t = SyntheticConfig::default().n_vendors)]
        vendors: usize,
        #[arg(long, default_value_t = SyntheticConfig::default().n_customers)]
        customers: usize,
        #[arg(long, default_value_t = SyntheticConfig::default().loyalty)]
        loyalty: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct Common {
    /// TOML or JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    n_sim: Option<usize>,
    /// Horizon.
    #[arg(long = "T")]
    horizon: Option<u64>,
    /// Comma-separated variant names.
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<Variant>>,
}

impl Common {
    fn overrides(&self, mode: Mode) -> Overrides {
        Overrides {
            mode: Some(mode),
            seed: self.seed,
            out: self.out.clone(),
            n_sim: self.n_sim,
            horizon: self.horizon,
            variants: self.variants.clone(),
            ..Overrides::default()
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let (common, overrides) = match cli.command {
        Command::Simulate(c) => {
            let o = c.overrides(Mode::Simulate);
            (c, o)
        }
        Command::Compare(c) => {
            let o = c.overrides(Mode::Compare);
            (c, o)
        }
        Command::Sensitivity { common, product } => {
            let o = Overrides { product: product.then_some(true), ..common.overrides(Mode::Sensitivity) };
            (common, o)
        }
        Command::Replay { common, data, schema, vendors, subsample_runs } => {
            let o = Overrides { data, schema, vendors, subsample_runs, ..common.overrides(Mode::Replay) };
            (common, o)
        }
        Command::Bounds { common, t_grid } => {
            let o = Overrides { t_grid, ..common.overrides(Mode::Bounds) };
            (common, o)
        }
        Command::SynthData { out, rows, vendors, customers, loyalty, seed } => {
            let config = SyntheticConfig { n_rows: rows, n_vendors: vendors, n_customers: customers, loyalty, seed };
            write_synthetic_file(&out, &config).with_context(|| format!("cannot write {}", out.display()))?;
            println!("wrote {rows} rows to {}", out.display());
            return Ok(());
        }
    };
    let config = parse_config(common.config.as_deref(), &overrides)?;
    print!("{}", to_toml(&config)?);
    let report = run(&config)?;
    for f in &report.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
