use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use corecov::io::{observations_from_rows, read_matrix_csv, write_json, FitDocument, KcdDocument};
use corecov::kcd::{kcd, SquareRootKind};
use corecov::matops::Dims;
use corecov::picse::{fit, FitConfig};
use corecov::sim::{run_experiment, write_outputs, ExperimentConfig, Model};
use corecov::Error;

#[derive(Parser)]
#[command(name = "corecov", version, about = "Core covariance decomposition and shrinkage estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    M1,
    M2,
}

#[derive(Clone, Copy, ValueEnum)]
enum SqrtArg {
    Sym,
    Chol,
}

#[derive(Clone, Copy, ValueEnum)]
enum SqrtSet {
    Sym,
    Chol,
    Both,
}

impl From<SqrtArg> for SquareRootKind {
    fn from(s: SqrtArg) -> Self {
        match s {
            SqrtArg::Sym => SquareRootKind::Symmetric,
            SqrtArg::Chol => SquareRootKind::Cholesky,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a seeded replication study; writes results.csv and summary.json.
    Simulate {
        #[arg(long, value_enum, default_value = "m1")]
        model: ModelArg,
        #[arg(long, default_value_t = 4)]
        p1: usize,
        #[arg(long, default_value_t = 3)]
        p2: usize,
        #[arg(long, default_value_t = 3)]
        rank: usize,
        #[arg(long, default_value_t = 0.2)]
        lambda: f64,
        /// Sample size; repeat for several (default 2·p1·p2).
        #[arg(long = "n")]
        n: Vec<usize>,
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "both")]
        sqrt: SqrtSet,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 200)]
        max_iter: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the partial-isotropy estimator to observations stored one vec(Y) per CSV row.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        p1: usize,
        #[arg(long)]
        p2: usize,
        #[arg(long)]
        rank: usize,
        #[arg(long, value_enum, default_value = "sym")]
        sqrt: SqrtArg,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 200)]
        max_iter: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Kronecker-core decomposition of a p×p covariance stored as CSV.
    Kcd {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        p1: usize,
        #[arg(long)]
        p2: usize,
        #[arg(long, value_enum, default_value = "sym")]
        sqrt: SqrtArg,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cmd: Command) -> corecov::Result<()> {
    match cmd {
        Command::Simulate {
            model,
            p1,
            p2,
            rank,
            lambda,
            n,
            reps,
            seed,
            sqrt,
            tol,
            max_iter,
            out,
        } => {
            let h_kinds = match sqrt {
                SqrtSet::Sym => vec![SquareRootKind::Symmetric],
                SqrtSet::Chol => vec![SquareRootKind::Cholesky],
                SqrtSet::Both => vec![SquareRootKind::Symmetric, SquareRootKind::Cholesky],
            };
            let cfg = ExperimentConfig {
                model: match model {
                    ModelArg::M1 => Model::M1,
                    ModelArg::M2 => Model::M2,
                },
                p1,
                p2,
                rank,
                lambda,
                n_list: if n.is_empty() { vec![2 * p1 * p2] } else { n },
                reps,
                seed,
                h_kinds,
                tol,
                max_iter,
            };
            let (records, summary) = run_experiment(&cfg)?;
            write_outputs(&out, &records, &summary)?;
            eprintln!("wrote {} records to {}", records.len(), out.display());
        }
        Command::Fit {
            input,
            p1,
            p2,
            rank,
            sqrt,
            tol,
            max_iter,
            out,
        } => {
            let dims = Dims::with_rank(p1, p2, rank)?;
            let ys = observations_from_rows(&read_matrix_csv(&input)?, dims)?;
            if ys.len() < 2 {
                return Err(Error::InvalidConfig("at least two observations are required".into()));
            }
            let cfg = FitConfig {
                tol,
                max_iter,
                ..FitConfig::with_h(sqrt.into())
            };
            let (tau, sigma, trace) = fit(&ys, dims, rank, &cfg)?;
            write_json(&out, &FitDocument::new(&tau, &sigma, trace, ys.len()))?;
        }
        Command::Kcd {
            input,
            p1,
            p2,
            sqrt,
            out,
        } => {
            let dims = Dims::new(p1, p2)?;
            let sigma = read_matrix_csv(&input)?;
            let r = kcd(&sigma, dims, sqrt.into())?;
            write_json(&out, &KcdDocument::new(&r, dims))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
