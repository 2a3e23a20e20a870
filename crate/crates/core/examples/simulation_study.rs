//! Small replication study comparing the Kronecker MLE, the base core
//! estimator and the partial-isotropy estimator.

use corecov::kcd::SquareRootKind;
use corecov::sim::{run_experiment, ExperimentConfig, Model};

fn main() -> corecov::Result<()> {
    let cfg = ExperimentConfig {
        model: Model::M1,
        p1: 4,
        p2: 3,
        rank: 3,
        lambda: 0.2,
        n_list: vec![12, 24, 48],
        reps: 5,
        seed: 1,
        h_kinds: vec![SquareRootKind::Symmetric, SquareRootKind::Cholesky],
        tol: 1e-6,
        max_iter: 200,
    };
    let (_, summary) = run_experiment(&cfg)?;
    println!("{:>4}  {:<11} {:>9} {:>9} {:>9}", "n", "estimator", "Sigma", "K", "core");
    for c in &summary.cells {
        let m = |s: &Option<corecov::sim::Stat>| s.as_ref().map_or(f64::NAN, |s| s.mean);
        println!(
            "{:>4}  {:<11} {:>9.4} {:>9.4} {:>9.4}",
            c.n,
            c.estimator,
            m(&c.sigma_err),
            m(&c.k_err),
            m(&c.c_err)
        );
    }
    Ok(())
}
