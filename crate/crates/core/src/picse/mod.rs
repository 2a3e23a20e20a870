//! Partial-isotropy core shrinkage estimation: a separable part times a core of
//! the form `(1 − λ)AAᵀ + λI`, fitted by alternating Riemannian Newton updates.

pub mod calculus;
pub mod fit;
pub mod likelihood;

use serde::{Deserialize, Serialize};

use crate::core_geometry::{balance, CoreFactor};
use crate::error::{Error, Result};
use crate::kcd::{core_given, flip_flop, kronecker_mle, FlipFlopConfig, SquareRootKind};
use crate::matops::{kron, sym, sym_eigen_desc, vec, Dims, Mat};
use crate::spd::UnitDetGeometry;

pub use calculus::{euclid_calculus, Block};
pub use fit::{fit, fit_from, newton_coords, update_a, update_k};
pub use likelihood::{nll, update_lambda, update_nu};

/// Parameters `(K̄1, K̄2, ν, A, λ)`; the covariance is
/// `ν² K̄ ((1 − λ)AAᵀ + λI) K̄ᵀ` with `K̄ = K̄2 ⊗ K̄1`.
#[derive(Debug, Clone)]
pub struct PicseParams {
    pub k1bar: Mat,
    pub k2bar: Mat,
    pub nu: f64,
    pub a: CoreFactor,
    pub lambda: f64,
    pub h_kind: SquareRootKind,
}

impl PicseParams {
    pub fn dims(&self) -> Dims {
        self.a.dims
    }

    pub fn geometry(&self) -> UnitDetGeometry {
        geometry_for(self.h_kind)
    }

    /// `(1 − λ)AAᵀ + λI`.
    pub fn core(&self) -> Mat {
        let p = self.a.a.nrows();
        sym(&(self.a.gram() * (1.0 - self.lambda) + Mat::identity(p, p) * self.lambda))
    }

    /// `ν (K̄2 ⊗ K̄1)`.
    pub fn root(&self) -> Mat {
        kron(&self.k2bar, &self.k1bar) * self.nu
    }

    pub fn sigma(&self) -> Mat {
        let r = self.root();
        sym(&(&r * self.core() * r.transpose()))
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        let g = self.geometry();
        g.validate(&self.k1bar, tol)?;
        g.validate(&self.k2bar, tol)?;
        CoreFactor::new(self.a.a.clone(), self.a.dims, tol)?;
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::Structure(format!("λ = {} is outside (0, 1)", self.lambda)));
        }
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::Structure(format!("ν = {} is not positive", self.nu)));
        }
        Ok(())
    }
}

pub fn geometry_for(h: SquareRootKind) -> UnitDetGeometry {
    match h {
        SquareRootKind::Symmetric => UnitDetGeometry::AffineInvariant,
        SquareRootKind::Cholesky => UnitDetGeometry::Cholesky,
    }
}

/// Sample second-moment matrix `S = (1/n) Σᵢ vec(Yᵢ) vec(Yᵢ)ᵀ`.
#[derive(Debug, Clone)]
pub struct SampleCov {
    pub s: Mat,
    pub n: usize,
    pub dims: Dims,
}

impl SampleCov {
    pub fn from_data(ys: &[Mat], dims: Dims) -> Result<Self> {
        if ys.is_empty() {
            return Err(Error::InvalidConfig("no observations".into()));
        }
        let p = dims.p();
        let mut s = Mat::zeros(p, p);
        for y in ys {
            if y.shape() != (dims.p1, dims.p2) {
                return Err(Error::DimensionMismatch(format!(
                    "observation is {}x{}, expected {}x{}",
                    y.nrows(),
                    y.ncols(),
                    dims.p1,
                    dims.p2
                )));
            }
            let v = vec(y);
            s += &v * v.transpose();
        }
        Ok(SampleCov {
            s: sym(&(s / ys.len() as f64)),
            n: ys.len(),
            dims,
        })
    }
}

/// Settings of the Newton-type updates.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NewtonDamping {
    /// Step halvings tried on the Newton direction before falling back.
    pub newton_halvings: usize,
    /// Step halvings tried on the steepest-descent fallback.
    pub descent_halvings: usize,
    /// Relative eigenvalue cutoff of the Hessian pseudo-inverse.
    pub pinv_tol: f64,
}

impl Default for NewtonDamping {
    fn default() -> Self {
        NewtonDamping {
            newton_halvings: 10,
            descent_halvings: 30,
            pinv_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FitConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub h_kind: SquareRootKind,
    pub lambda_bracket: (f64, f64),
    pub newton_damping: NewtonDamping,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            tol: 1e-6,
            max_iter: 200,
            h_kind: SquareRootKind::Symmetric,
            lambda_bracket: (1e-4, 1.0 - 1e-4),
            newton_damping: NewtonDamping::default(),
        }
    }
}

impl FitConfig {
    pub fn with_h(h_kind: SquareRootKind) -> Self {
        FitConfig {
            h_kind,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.lambda_bracket;
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig("tol must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        if !(lo > 0.0 && lo < hi && hi < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "λ bracket ({lo}, {hi}) must lie inside (0, 1)"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIter,
    Numerical,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::MaxIter => "max_iter",
            Termination::Numerical => "numerical",
        }
    }
}

/// Frobenius norms of the parameter changes within one sweep.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct StepNorms {
    pub k1: f64,
    pub k2: f64,
    pub nu: f64,
    pub a: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitTrace {
    /// Objective at the initialization followed by one value per sweep.
    pub objectives: Vec<f64>,
    pub steps: Vec<StepNorms>,
    pub termination: Termination,
    /// Message of the error that stopped the fit, if any.
    pub failure: Option<String>,
}

impl FitTrace {
    pub fn sweeps(&self) -> usize {
        self.steps.len()
    }

    /// Largest increase between consecutive objective values, relative to their scale.
    pub fn max_increase(&self) -> f64 {
        self.objectives
            .windows(2)
            .map(|w| (w[1] - w[0]) / w[0].abs().max(1.0))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Top-`r` factor `Γ Λ^{1/2}` of a symmetric matrix, or `None` when fewer than
/// `r` eigenvalues are positive.
pub(crate) fn top_r_factor(m: &Mat, r: usize) -> Option<Mat> {
    let (mu, u) = sym_eigen_desc(m);
    if !(mu[r - 1] > 1e-12 * mu[0].abs().max(f64::MIN_POSITIVE)) {
        return None;
    }
    let mut a = u.columns(0, r).into_owned();
    for j in 0..r {
        a.column_mut(j).scale_mut(mu[j].sqrt());
    }
    Some(a)
}

/// Starting point built from the sample Kronecker MLE and the eigen-structure
/// of the sample core.
pub fn init(s: &SampleCov, r: usize, cfg: &FitConfig) -> Result<PicseParams> {
    cfg.validate()?;
    let dims = Dims::with_rank(s.dims.p1, s.dims.p2, r)?;
    let h = cfg.h_kind;
    let kt = kronecker_mle(&s.s, dims, &FlipFlopConfig::default())?;
    let (r1, r2) = kt.root_factors(h)?;
    let geom = geometry_for(h);
    let (k1bar, k2bar, nu) = {
        let ld2 = match h {
            SquareRootKind::Symmetric => crate::matops::log_det_spd(&r2)?,
            SquareRootKind::Cholesky => r2.diagonal().iter().map(|d| d.ln()).sum(),
        };
        let nu = (ld2 / dims.p2 as f64).exp();
        let k1 = match geom {
            UnitDetGeometry::AffineInvariant => crate::spd::normalize_spd_unit_det(&r1)?,
            UnitDetGeometry::Cholesky => crate::spd::normalize_chol_unit_det(&r1),
        };
        (k1, &r2 / nu, nu)
    };
    let c_sample = core_given(&s.s, &kt, h)?;

    let p = dims.p();
    let (mu, u) = sym_eigen_desc(&c_sample);
    let top: f64 = mu.iter().take(r).sum();
    let lambda = initial_lambda(top, p, r, cfg.lambda_bracket);

    let mut c_r = Mat::zeros(p, p);
    for j in 0..r {
        let uj = u.column(j);
        c_r += uj * uj.transpose() * mu[j];
    }
    let a0 = initial_factor(&c_r, dims, r, h).or_else(|_| {
        let mut a = u.columns(0, r).into_owned();
        for j in 0..r {
            a.column_mut(j).scale_mut(mu[j].max(f64::MIN_POSITIVE).sqrt());
        }
        balance(&a, dims, 1e-12, 200)
    })?;
    let a = CoreFactor::new(a0, dims, 1e-8)?;
    Ok(PicseParams {
        k1bar,
        k2bar,
        nu,
        a,
        lambda,
        h_kind: h,
    })
}

/// `(p − Σ_{j≤r} μ_j) / (p − r)` clamped into `bracket`, where `μ_j` are the
/// leading eigenvalues of the sample core (whose trace is `p`).
pub fn initial_lambda(top_sum: f64, p: usize, r: usize, bracket: (f64, f64)) -> f64 {
    if p <= r {
        return bracket.0;
    }
    ((p as f64 - top_sum) / (p - r) as f64).clamp(bracket.0, bracket.1)
}

fn initial_factor(c_r: &Mat, dims: Dims, r: usize, h: SquareRootKind) -> Result<Mat> {
    let lenient = FlipFlopConfig {
        strict: false,
        ..FlipFlopConfig::default()
    };
    let (k, _) = flip_flop(c_r, dims, &lenient)?;
    let core = core_given(c_r, &k, h)?;
    let a = top_r_factor(&core, r)
        .ok_or_else(|| Error::NumericalRank("rank-r sample core is degenerate".into()))?;
    balance(&a, dims, 1e-12, 200)
}

/// Sample Kronecker MLE as a full covariance.
pub fn kmle_estimator(ys: &[Mat], dims: Dims) -> Result<Mat> {
    let s = SampleCov::from_data(ys, dims)?;
    Ok(kronecker_mle(&s.s, dims, &FlipFlopConfig::default())?.full())
}

/// Covariance assembled from the starting point of the fit.
pub fn base_estimator(ys: &[Mat], dims: Dims, r: usize, h: SquareRootKind) -> Result<Mat> {
    let s = SampleCov::from_data(ys, dims)?;
    Ok(init(&s, r, &FitConfig::with_h(h))?.sigma())
}
