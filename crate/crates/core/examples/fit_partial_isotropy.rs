//! Fits the partial-isotropy estimator to simulated data and compares it with
//! the Kronecker MLE.

use corecov::kcd::SquareRootKind;
use corecov::matops::Dims;
use corecov::picse::{fit, kmle_estimator, FitConfig};
use corecov::sim::{gen_data, gen_truth, rel_spec_norm, Model};

fn main() -> corecov::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let model = if args.get(2).map(String::as_str) == Some("m2") { Model::M2 } else { Model::M1 };
    let (p1, p2, r) = (6, 4, 3);
    let dims = Dims::with_rank(p1, p2, r)?;
    let truth = gen_truth(model, dims, 0.2, seed)?;
    let ys = gen_data(&truth.sigma, dims, 2 * dims.p(), seed + 1)?;

    let kmle = kmle_estimator(&ys, dims)?;
    println!("KMLE   error {:.4}", rel_spec_norm(&kmle, &truth.sigma)?);
    for h in [SquareRootKind::Symmetric, SquareRootKind::Cholesky] {
        let start = std::time::Instant::now();
        let (tau, sigma, trace) = fit(&ys, dims, r, &FitConfig::with_h(h))?;
        println!(
            "PICSE-{:<4} error {:.4}  lambda {:.3}  sweeps {}  {}  ({:.2?})",
            h.label(),
            rel_spec_norm(&sigma, &truth.sigma)?,
            tau.lambda,
            trace.sweeps(),
            trace.termination.as_str(),
            start.elapsed()
        );
        println!("  objective {:.6} -> {:.6}", trace.objectives[0], trace.objectives.last().unwrap());
    }
    Ok(())
}
