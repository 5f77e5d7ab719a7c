use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use eoslab::exec::init_thread_pool_from_env;
use eoslab::harness::experiment::{run_experiment, ExperimentConfig, ExperimentKind, OutputFormat, SchedKind};

#[derive(Parser)]
#[command(name = "eoslab", version, about = "GD with weight decay on scale-invariant losses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Linear regression with batch normalization.
    Linreg(Common),
    /// Rank-2 matrix completion with batch normalization.
    Matcom(Common),
    /// The three-dimensional example.
    Example3d(Common),
    /// Frozen-gradient drift process; `--eta` is the base rate `η`.
    Driftsim {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        c_b: Option<f64>,
        #[arg(long)]
        grad_norm_sq: Option<f64>,
        #[arg(long)]
        h0: Option<f64>,
        #[arg(long)]
        u0: Option<f64>,
    },
    /// Runs the acceptance checks.
    Check(Common),
}

#[derive(Args)]
struct Common {
    /// Learning rate `η̂`.
    #[arg(long)]
    eta: Option<f64>,
    /// Weight decay `λ̂`.
    #[arg(long)]
    wd: Option<f64>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for the trace and `report.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long)]
    record_every: Option<u64>,
    #[arg(long)]
    project_every: Option<u64>,
    #[arg(long, value_enum, default_value_t = Sched::Gdwd)]
    sched: Sched,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Sched {
    Gdwd,
    ScalarRms,
}

impl Common {
    fn config(&self, kind: ExperimentKind) -> ExperimentConfig {
        let mut c = ExperimentConfig::default_for(kind);
        c.eta_hat = self.eta.unwrap_or(c.eta_hat);
        c.lambda_hat = self.wd.unwrap_or(c.lambda_hat);
        c.steps = self.steps.unwrap_or(c.steps);
        c.seed = self.seed;
        c.out = self.out.clone();
        c.format = match self.format {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        };
        c.record_every = self.record_every.unwrap_or(c.record_every);
        c.project_every = self.project_every.unwrap_or(c.project_every);
        c.dense_until = c.dense_until.min(c.steps);
        c.sched = match self.sched {
            Sched::Gdwd => SchedKind::Gdwd,
            Sched::ScalarRms => SchedKind::ScalarRms,
        };
        c
    }
}

fn main() -> ExitCode {
    init_thread_pool_from_env();
    let cli = Cli::parse();
    let config = match &cli.command {
        Command::Linreg(c) => c.config(ExperimentKind::Linreg),
        Command::Matcom(c) => c.config(ExperimentKind::Matcom),
        Command::Example3d(c) => c.config(ExperimentKind::Example3d),
        Command::Check(c) => c.config(ExperimentKind::Check),
        Command::Driftsim { common, c_b, grad_norm_sq, h0, u0 } => {
            let mut cfg = common.config(ExperimentKind::Driftsim);
            let d = &mut cfg.drift;
            d.c_b = c_b.unwrap_or(d.c_b);
            d.grad_norm_sq = grad_norm_sq.unwrap_or(d.grad_norm_sq);
            d.h0 = h0.unwrap_or(d.h0);
            d.u0 = u0.unwrap_or(d.u0);
            cfg
        }
    };
    let out = match run_experiment(&config) {
        Ok(out) => out,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let r = &out.report;
    for c in &r.checks {
        println!("{}", c.line());
    }
    if config.kind != ExperimentKind::Check {
        println!("eos_entry_step: {:?}", r.eos_entry_step);
        println!("period2_fraction: {:?}", r.period2_fraction);
        for (k, v) in &r.metrics {
            println!("{k}: {v:.6e}");
        }
    }
    if let Some(d) = &r.diverged {
        eprintln!("diverged: {d}");
    }
    if r.all_passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
