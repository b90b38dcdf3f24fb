use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dpens::accountant::{
    account_pipeline, calibrate_scale, split_delta, DpGuarantee, SubsampleScope, Subsampling, SubsamplingSpec,
    DEFAULT_ORDERS,
};
use dpens::mechanisms::{MechanismSpec, NoiseFamily};
use dpens::pipeline::{emit_report, load_datasets, run_experiment, ExperimentConfig, ExperimentReport};
use dpens::{Error, Result};

#[derive(Parser)]
#[command(name = "dpens", version, about = "Differentially private teacher ensembles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Find the smallest noise scale that keeps a query batch within budget.
    Calibrate {
        #[arg(long)]
        target_eps: f64,
        #[arg(long)]
        delta: f64,
        /// Subsampling rate; 1 disables amplification.
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long)]
        queries: u64,
        /// Comma-separated Rényi orders.
        #[arg(long, value_delimiter = ',')]
        orders: Option<Vec<f64>>,
        #[arg(long, value_enum, default_value_t = Family::Gaussian)]
        family: Family,
        /// Defaults to the probability-simplex sensitivity of the family.
        #[arg(long)]
        sensitivity: Option<f64>,
        /// `shared`: one subsample covers every query. `fresh`: a new
        /// subsample per query.
        #[arg(long, value_enum, default_value_t = Scope::Shared)]
        scope: Scope,
    },
    /// Run an experiment and write its JSON report.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed from the config file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a JSON report.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Md)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Gaussian,
    Laplace,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scope {
    Shared,
    Fresh,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
    Md,
}

fn calibrate(
    target: DpGuarantee,
    gamma: f64,
    queries: u64,
    orders: &[f64],
    family: NoiseFamily,
    sensitivity: Option<f64>,
    scope: Scope,
) -> Result<()> {
    let spec = SubsamplingSpec::new(gamma)?;
    let subsampling = (gamma < 1.0).then(|| Subsampling {
        spec,
        scope: match scope {
            Scope::Shared => SubsampleScope::Shared,
            Scope::Fresh => SubsampleScope::FreshPerQuery,
        },
    });
    let sensitivity = sensitivity.unwrap_or(family.simplex_sensitivity());
    let scale = calibrate_scale(target, queries, family, sensitivity, subsampling, orders)?;
    let mech = MechanismSpec::new(family, scale, sensitivity)?;
    let spent = account_pipeline(queries, &mech, subsampling, split_delta(target.delta, queries), orders)?;
    println!("family={}", family.name());
    println!("scale={scale:?}");
    println!("sensitivity={sensitivity:?}");
    println!("epsilon={:?}", spent.epsilon);
    println!("delta={:?}", spent.delta);
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Calibrate { target_eps, delta, gamma, queries, orders, family, sensitivity, scope } => {
            let target = DpGuarantee::new(target_eps, delta)?;
            let orders = orders.unwrap_or_else(|| DEFAULT_ORDERS.to_vec());
            let family = match family {
                Family::Gaussian => NoiseFamily::Gaussian,
                Family::Laplace => NoiseFamily::Laplace,
            };
            calibrate(target, gamma, queries, &orders, family, sensitivity, scope)
        }
        Command::Run { config, seed, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let (private, public) = load_datasets(&cfg)?;
            let report = run_experiment(&cfg, &private, &public)?;
            emit_report(&report, &out)?;
            for r in &report.results {
                if let Some(e) = &r.error {
                    eprintln!("{} (fold {}): {e}", r.method, r.fold);
                }
            }
            Ok(())
        }
        Command::Report { input, format } => {
            let report = ExperimentReport::read(&input)?;
            let text = match format {
                Format::Json => String::from_utf8(report.to_canonical_json()?)
                    .map_err(|e| Error::Report(e.to_string()))?,
                Format::Csv => report.to_csv(),
                Format::Md => report.to_markdown(),
            };
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
