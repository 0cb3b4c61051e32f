use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use bindelta_cli::runner::{self, EvalSplit, Sweep};
use bindelta_cli::selftest::{self, Fault, SuiteSize};
use bindelta_cli::{ExperimentConfig, RunError, EXIT_OK, EXIT_SELFTEST, EXIT_USAGE};

#[derive(Parser, Debug)]
#[command(name = "bindelta", version, about = "Bin-and-delta 3D rotation estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit K-means dictionaries and report their quantization floors.
    Discretize(Common),
    /// Train one model per category and report validation metrics.
    Train(Common),
    /// Score the bundles of a finished train run.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Output directory of the train run.
        #[arg(long)]
        bundle: PathBuf,
        /// `val` or `all`.
        #[arg(long, default_value = "val")]
        split: EvalSplit,
    },
    /// Sweep K or alpha over several seeds.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// `K=4,16,64` or `alpha=0.1,1,10`.
        #[arg(long)]
        sweep: Sweep,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Run the property suite.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random parameter points per variant in the gradient checks.
        #[arg(long, default_value_t = 100)]
        gradient_points: usize,
        /// Deliberately break a component (`log-near-pi`).
        #[arg(long, default_value = "none")]
        inject_fault: Fault,
    },
}

/// Flags that override the config file.
#[derive(Args, Debug)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    variant: Option<String>,
    /// Dictionary size; a comma-separated list for `discretize`.
    #[arg(long = "K", value_delimiter = ',')]
    k: Vec<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Output directory (default: `$BINDELTA_OUT/<command>` or `runs/<command>`).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self, list_k: bool) -> Result<ExperimentConfig, RunError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = &self.variant {
            cfg.variant = v.clone();
        }
        match (self.k.as_slice(), list_k) {
            ([], _) => {}
            (ks, true) => cfg.k_values = ks.to_vec(),
            ([k], false) => cfg.k = Some(*k),
            _ => return Err(RunError::Usage("--K takes a single value here".into())),
        }
        if self.alpha.is_some() {
            cfg.alpha = self.alpha;
        }
        if self.gamma.is_some() {
            cfg.gamma = self.gamma;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if self.out.is_some() {
            cfg.out = self.out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cmd: Command) -> Result<i32, RunError> {
    match cmd {
        Command::Discretize(common) => {
            let cfg = common.resolve(true)?;
            let out = cfg.output_dir("discretize");
            for r in runner::cmd_discretize(&cfg, &out)? {
                println!(
                    "category {} K={}: floor median {:.2} deg, mean {:.2} deg (n={})",
                    r.category, r.k, r.median_deg, r.mean_deg, r.n
                );
            }
            println!("wrote {}", out.display());
        }
        Command::Train(common) => {
            let cfg = common.resolve(false)?;
            let out = cfg.output_dir(&format!("train-{}-seed{}", cfg.variant, cfg.seed));
            let run = runner::cmd_train(&cfg, &out)?;
            print!("{}", run.report.to_csv());
            println!("wrote {}", out.display());
        }
        Command::Eval {
            common,
            bundle,
            split,
        } => {
            let data_cfg = match &common.config {
                Some(_) => Some(common.resolve(false)?),
                None => None,
            };
            let report = runner::cmd_eval(&bundle, data_cfg.as_ref(), split)?;
            print!("{}", report.to_csv());
        }
        Command::Ablate {
            common,
            sweep,
            trials,
        } => {
            let mut cfg = common.resolve(false)?;
            if let Some(t) = trials {
                cfg.trials = t;
            }
            let out = cfg.output_dir(&format!("ablate-{}", cfg.variant));
            let points = runner::cmd_ablate(&cfg, &sweep, &out)?;
            print!("{}", runner::ablation_table(&points));
            println!("wrote {}", out.display());
        }
        Command::Selftest {
            seed,
            gradient_points,
            inject_fault,
        } => {
            let size = SuiteSize {
                gradient_points,
                ..SuiteSize::default()
            };
            let report = selftest::run_suite(inject_fault, size, seed)?;
            for c in &report.checks {
                println!("{c}");
            }
            if !report.passed() {
                let names: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
                eprintln!("selftest failed: {}", names.join(", "));
                return Ok(EXIT_SELFTEST);
            }
            println!("selftest passed ({} checks)", report.checks.len());
        }
    }
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE as u8),
            };
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
