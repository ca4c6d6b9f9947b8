use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crt_filling::experiments::{self, Lemma, RunConfig, Stages};

#[derive(Parser)]
#[command(name = "crt-filling", version, about = "Simulate Brownian trees, build filling weights and deformed metrics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the replica trees.
    Simulate(Common),
    /// Build nested nets and the filling graph.
    Nets(Common),
    /// Compute event weights and the filling machinery.
    Weights(Common),
    /// Build the deformed metric.
    Deform(Common),
    /// Box-counting dimensions before and after deformation.
    Dimension(Common),
    /// Run one statistical check.
    Verify {
        /// One of: tail-law, ball-volume, iid-cover, subtree-probability,
        /// robustness, admissibility, comparison, event-probability,
        /// expectation-bound.
        lemma: String,
        #[command(flatten)]
        common: Common,
    },
    /// Everything, in order.
    All(Common),
}

#[derive(Args)]
struct Common {
    /// TOML file; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    eta_exponent: Option<f64>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long)]
    grid_size: Option<usize>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    n_max: Option<usize>,
    #[arg(long)]
    carrier_cap: Option<usize>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> crt_filling::Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! over {
            ($($flag:ident => $field:ident),*) => {$(if let Some(v) = self.$flag.clone() { c.$field = v; })*};
        }
        over!(alpha => alpha, eta_exponent => eta_exponent, p => p, zeta => zeta, grid_size => grid_size,
              horizon => horizon_t, n_max => n_max, carrier_cap => carrier_cap, replicas => replicas,
              seed => master_seed, out => output_dir);
        c.validate()?;
        Ok(c)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, stages) = match &cli.command {
        Command::Simulate(c) => (c, Stages::Simulate),
        Command::Nets(c) => (c, Stages::Nets),
        Command::Weights(c) => (c, Stages::Weights),
        Command::Deform(c) => (c, Stages::Deform),
        Command::Dimension(c) => (c, Stages::Dimension),
        Command::All(c) => (c, Stages::All),
        Command::Verify { lemma, common } => match Lemma::parse(lemma) {
            Some(l) => (common, Stages::Verify(l)),
            None => {
                let names: Vec<&str> = Lemma::ALL.iter().map(|l| l.name()).collect();
                eprintln!("unknown check {lemma:?}; expected one of {}", names.join(", "));
                return ExitCode::from(1);
            }
        },
    };
    let cfg = match common.config() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("invalid configuration: {e}");
            return ExitCode::from(1);
        }
    };
    match experiments::run(&cfg, stages) {
        Ok(out) => {
            for r in &out.reports {
                println!("{r}");
            }
            println!("manifest: {}", out.manifest.display());
            if out.all_pass() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(3)
            }
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
    }
}
