//! Coordinate updates and the alternating minimization loop.

use crate::core_geometry::{balance, horizontal_basis, CoreFactor, RankTangentSpace};
use crate::error::Result;
use crate::kcd::{core_given, flip_flop, FlipFlopConfig};
use crate::matops::{inner, mat, sym, sym_eigen_desc, vec, Dims, Mat, Vector};

use super::calculus::{ABlock, Block, FactorCalculus};
use super::likelihood::{nll, update_lambda, update_nu};
use super::{
    init, top_r_factor, FitConfig, FitTrace, NewtonDamping, PicseParams, SampleCov, StepNorms,
    Termination,
};

/// Coordinates of `−H†g` for a symmetric `h`, dropping eigenvalues below
/// `rel_tol · max|eig|`.
pub fn newton_coords(g: &Vector, h: &Mat, rel_tol: f64) -> Vector {
    let (mu, q) = sym_eigen_desc(&sym(h));
    let cut = rel_tol * mu.amax();
    let qg = q.transpose() * g;
    let scaled = Vector::from_iterator(
        mu.len(),
        mu.iter()
            .zip(qg.iter())
            .map(|(&m, &x)| if m.abs() > cut && m != 0.0 { -x / m } else { 0.0 }),
    );
    q * scaled
}

/// Gradient coordinates and Hessian matrix of a quadratic model in some basis.
struct Model {
    g: Vector,
    h: Mat,
}

impl Model {
    fn newton(&self, damping: &NewtonDamping) -> Option<Vector> {
        let c = newton_coords(&self.g, &self.h, damping.pinv_tol);
        (c.dot(&self.g) < 0.0).then_some(c)
    }

    /// Steepest-descent coordinates with a Cauchy-point length when the model
    /// is convex along the gradient.
    fn descent(&self) -> Vector {
        let curv = self.g.dot(&(&self.h * &self.g));
        let gg = self.g.norm_squared();
        let step = if curv > 0.0 { gg / curv } else { 1.0 };
        -&self.g * step
    }
}

/// Tries the Newton step, halving it up to the configured count, then the
/// steepest-descent step. `trial(coords, t)` returns the candidate and its
/// objective, or `None` when the retraction is infeasible.
fn damped_step<T>(
    model: &Model,
    f0: f64,
    damping: &NewtonDamping,
    mut trial: impl FnMut(&Vector, f64) -> Option<(T, f64)>,
) -> Option<(T, f64)> {
    if model.g.amax() == 0.0 {
        return None;
    }
    if let Some(c) = model.newton(damping) {
        let mut t = 1.0;
        for _ in 0..=damping.newton_halvings {
            if let Some((x, f)) = trial(&c, t) {
                if f < f0 {
                    return Some((x, f));
                }
            }
            t *= 0.5;
        }
    }
    let d = model.descent();
    let mut t = 1.0;
    for _ in 0..=damping.descent_halvings {
        if let Some((x, f)) = trial(&d, t) {
            if f < f0 {
                return Some((x, f));
            }
        }
        t *= 0.5;
    }
    None
}

/// One Riemannian Newton update of `K̄1` or `K̄2` on its unit-determinant
/// manifold, followed by the exponential map. Returns the updated parameters
/// and objective; the parameters are unchanged when no decrease was found.
pub fn update_k(
    block: Block,
    tau: &PicseParams,
    ys: &[Mat],
    s: &SampleCov,
    cfg: &FitConfig,
) -> Result<(PicseParams, f64)> {
    let f0 = nll(tau, s)?;
    let geom = tau.geometry();
    let x = match block {
        Block::K1 => &tau.k1bar,
        Block::K2 => &tau.k2bar,
        Block::A => return update_a(tau, s, cfg),
    };
    let fc = FactorCalculus::new(tau, ys, block)?;
    let egrad = fc.grad();
    let basis = geom.tangent_basis(x)?;
    let d = basis.len();
    let g = Vector::from_iterator(d, basis.iter().map(|b| inner(&egrad, b)));
    let mut h = Mat::zeros(d, d);
    for (l, bl) in basis.iter().enumerate() {
        let (_, rh) = geom.grad_hess(x, &egrad, &fc.hess(bl), bl)?;
        for (k, bk) in basis.iter().enumerate() {
            h[(k, l)] = geom.inner(x, bk, &rh)?;
        }
    }
    let model = Model { g, h: sym(&h) };
    let step = damped_step(&model, f0, &cfg.newton_damping, |c, t| {
        let v = basis
            .iter()
            .zip(c.iter())
            .fold(Mat::zeros(x.nrows(), x.ncols()), |acc, (b, &ck)| acc + b * ck);
        let xn = geom.exp(x, &v, t).ok()?;
        let mut cand = tau.clone();
        match block {
            Block::K1 => cand.k1bar = xn,
            _ => cand.k2bar = xn,
        }
        let f = nll(&cand, s).ok()?;
        f.is_finite().then_some((cand, f))
    });
    Ok(step.unwrap_or_else(|| (tau.clone(), f0)))
}

/// Maps `A` and a horizontal direction `V` to a new core factor: the core of
/// `AAᵀ + AVᵀ + VAᵀ`, truncated to its top `r` eigenpairs and rebalanced.
pub fn retract_a(tau: &PicseParams, v: &Mat) -> Option<CoreFactor> {
    let a = &tau.a.a;
    let dims: Dims = tau.a.dims;
    let d = sym(&(a * a.transpose() + a * v.transpose() + v * a.transpose()));
    let lenient = FlipFlopConfig {
        strict: false,
        ..FlipFlopConfig::default()
    };
    let (k, _) = flip_flop(&d, dims, &lenient).ok()?;
    let core = core_given(&d, &k, tau.h_kind).ok()?;
    let top = top_r_factor(&core, a.ncols())?;
    let balanced = balance(&top, dims, 1e-12, 200).ok()?;
    Some(CoreFactor::new_unchecked(balanced, dims))
}

/// One Newton update of `A` over the horizontal space of the fixed-rank core
/// factor manifold (Euclidean metric), retracted by [`retract_a`].
pub fn update_a(tau: &PicseParams, s: &SampleCov, cfg: &FitConfig) -> Result<(PicseParams, f64)> {
    let f0 = nll(tau, s)?;
    let dims = tau.a.dims;
    let (p, r) = (dims.p(), tau.a.r());
    let space = RankTangentSpace::new(&tau.a.a, dims)?;
    let basis = horizontal_basis(&tau.a.a, &space);
    let ab = ABlock::new(tau, &s.s)?;
    let egrad = ab.grad();
    let g = basis.transpose() * vec(&egrad);
    let d = basis.ncols();
    let mut h = Mat::zeros(d, d);
    for l in 0..d {
        let v = mat(&basis.column(l).into_owned(), p, r)?;
        let (_, rh) = space.rgrad_hess(&egrad, &ab.hess(&v), &v)?;
        h.set_column(l, &(basis.transpose() * vec(&rh)));
    }
    let model = Model { g, h: sym(&h) };
    let step = damped_step(&model, f0, &cfg.newton_damping, |c, t| {
        let v = mat(&(&basis * c * t), p, r).ok()?;
        let a = retract_a(tau, &v)?;
        let mut cand = tau.clone();
        cand.a = a;
        let f = nll(&cand, s).ok()?;
        f.is_finite().then_some((cand, f))
    });
    Ok(step.unwrap_or_else(|| (tau.clone(), f0)))
}

/// Runs the alternating minimization from the sample-based starting point.
pub fn fit(
    ys: &[Mat],
    dims: Dims,
    r: usize,
    cfg: &FitConfig,
) -> Result<(PicseParams, Mat, FitTrace)> {
    let s = SampleCov::from_data(ys, dims)?;
    let tau0 = init(&s, r, cfg)?;
    fit_from(ys, &s, tau0, cfg)
}

/// Runs the alternating minimization from a given starting point. Numerical
/// failures stop the loop and are recorded in the trace.
pub fn fit_from(
    ys: &[Mat],
    s: &SampleCov,
    tau0: PicseParams,
    cfg: &FitConfig,
) -> Result<(PicseParams, Mat, FitTrace)> {
    cfg.validate()?;
    let mut tau = tau0;
    let mut obj = nll(&tau, s)?;
    let mut trace = FitTrace {
        objectives: vec![obj],
        steps: Vec::new(),
        termination: Termination::MaxIter,
        failure: None,
    };
    for _ in 0..cfg.max_iter {
        match sweep(&tau, ys, s, cfg) {
            Ok((next, f, steps)) => {
                tau = next;
                let prev = obj;
                obj = f;
                trace.objectives.push(obj);
                trace.steps.push(steps);
                if (prev - obj).abs() <= cfg.tol * obj.abs() {
                    trace.termination = Termination::Converged;
                    break;
                }
            }
            Err(e) => {
                trace.termination = Termination::Numerical;
                trace.failure = Some(e.to_string());
                break;
            }
        }
    }
    let sigma = tau.sigma();
    Ok((tau, sigma, trace))
}

fn sweep(
    tau: &PicseParams,
    ys: &[Mat],
    s: &SampleCov,
    cfg: &FitConfig,
) -> Result<(PicseParams, f64, StepNorms)> {
    let mut steps = StepNorms::default();
    let (t, _) = update_k(Block::K1, tau, ys, s, cfg)?;
    steps.k1 = (&t.k1bar - &tau.k1bar).norm();
    let (t2, _) = update_k(Block::K2, &t, ys, s, cfg)?;
    steps.k2 = (&t2.k2bar - &t.k2bar).norm();
    let mut t = t2;

    let nu = update_nu(&t, s)?;
    steps.nu = (nu - t.nu).abs();
    t.nu = nu;

    let (t3, _) = update_a(&t, s, cfg)?;
    steps.a = (&t3.a.a * t3.a.a.transpose() - &t.a.a * t.a.a.transpose()).norm();
    let mut t = t3;

    let lambda = update_lambda(&t, s, cfg.lambda_bracket)?;
    steps.lambda = (lambda - t.lambda).abs();
    t.lambda = lambda;
    let f = nll(&t, s)?;
    Ok((t, f, steps))
}
