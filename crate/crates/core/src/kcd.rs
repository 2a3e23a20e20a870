//! Kronecker map `k`, core map `c` and the Kronecker-core decomposition
//! `Σ = h(k(Σ)) c(Σ) h(k(Σ))ᵀ`, with the differentials of `h`, `k`, `c` and `g`.

use nalgebra::SymmetricEigen;

use crate::error::{Error, Result};
use crate::matops::{
    chol, half, kron, lower_inverse, partial_trace_1, partial_trace_2, spd_inverse, sym,
    sym_basis, sym_inv_sqrt, sym_sqrt, traceless_sym_basis, BlockPartition, Dims, Mat,
};

/// Square-root convention `h` for separable covariances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum SquareRootKind {
    Symmetric,
    Cholesky,
}

impl SquareRootKind {
    /// Square root of a single SPD factor.
    pub fn root(&self, m: &Mat) -> Result<Mat> {
        match self {
            SquareRootKind::Symmetric => sym_sqrt(m),
            SquareRootKind::Cholesky => chol(m),
        }
    }

    /// Inverse of a root produced by [`SquareRootKind::root`].
    pub fn root_inverse(&self, r: &Mat) -> Result<Mat> {
        match self {
            SquareRootKind::Symmetric => spd_inverse(r),
            SquareRootKind::Cholesky => Ok(lower_inverse(r)),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            SquareRootKind::Symmetric => "AI",
            SquareRootKind::Cholesky => "Chol",
        }
    }
}

/// `K = K2 ⊗ K1` with `|K1| = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparableCovariance {
    pub k1: Mat,
    pub k2: Mat,
}

impl SeparableCovariance {
    /// Builds a separable covariance from arbitrary SPD factors, moving the
    /// scale of `k1` onto `k2`.
    pub fn from_factors(k1: &Mat, k2: &Mat) -> Result<Self> {
        let ld = crate::matops::log_det_spd(k1)?;
        crate::matops::check_pd(k2)?;
        let c = (ld / k1.nrows() as f64).exp();
        Ok(SeparableCovariance {
            k1: sym(&(k1 / c)),
            k2: sym(&(k2 * c)),
        })
    }

    pub fn dims(&self) -> Result<Dims> {
        Dims::new(self.k1.nrows(), self.k2.nrows())
    }

    pub fn full(&self) -> Mat {
        kron(&self.k2, &self.k1)
    }

    /// `(h(K1), h(K2))`.
    pub fn root_factors(&self, h: SquareRootKind) -> Result<(Mat, Mat)> {
        Ok((h.root(&self.k1)?, h.root(&self.k2)?))
    }

    /// `h(K) = h(K2) ⊗ h(K1)`.
    pub fn root(&self, h: SquareRootKind) -> Result<Mat> {
        let (r1, r2) = self.root_factors(h)?;
        Ok(kron(&r2, &r1))
    }

    /// `h(K)⁻¹`.
    pub fn root_inverse(&self, h: SquareRootKind) -> Result<Mat> {
        let (r1, r2) = self.root_factors(h)?;
        Ok(kron(&h.root_inverse(&r2)?, &h.root_inverse(&r1)?))
    }
}

/// A tangent vector `(U1, U2)` to the separable manifold in the unit-determinant
/// parameterization, representing `U2 ⊗ K1 + K2 ⊗ U1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparableTangent {
    pub u1: Mat,
    pub u2: Mat,
}

impl SeparableTangent {
    pub fn zeros(dims: Dims) -> Self {
        SeparableTangent {
            u1: Mat::zeros(dims.p1, dims.p1),
            u2: Mat::zeros(dims.p2, dims.p2),
        }
    }

    pub fn full(&self, base: &SeparableCovariance) -> Mat {
        kron(&self.u2, &base.k1) + kron(&base.k2, &self.u1)
    }

    pub fn norm(&self) -> f64 {
        (self.u1.norm_squared() + self.u2.norm_squared()).sqrt()
    }
}

/// Output of [`kcd`].
#[derive(Debug, Clone)]
pub struct KcdResult {
    pub k: SeparableCovariance,
    pub core: Mat,
    pub h_kind: SquareRootKind,
}

impl KcdResult {
    /// `h(K) C h(K)ᵀ`.
    pub fn reconstruct(&self) -> Result<Mat> {
        let h = self.k.root(self.h_kind)?;
        Ok(sym(&(&h * &self.core * h.transpose())))
    }
}

/// Settings for the block-coordinate computation of the Kronecker MLE.
#[derive(Debug, Clone, Copy)]
pub struct FlipFlopConfig {
    /// Relative objective decrease below which a run that hit the sweep cap is
    /// still accepted.
    pub tol: f64,
    /// Relative factor change that counts as converged.
    pub factor_tol: f64,
    pub max_iter: usize,
    /// Condition number of a factor beyond which the iterates are declared
    /// degenerate.
    pub max_condition: f64,
    /// When false, a run that reaches the sweep cap returns its last iterate
    /// instead of being checked for a still-decreasing objective.
    pub strict: bool,
}

impl Default for FlipFlopConfig {
    fn default() -> Self {
        FlipFlopConfig {
            tol: 1e-10,
            factor_tol: 1e-12,
            max_iter: 500,
            max_condition: 1e12,
            strict: true,
        }
    }
}

/// Diagnostics of a flip-flop run.
#[derive(Debug, Clone)]
pub struct FlipFlopReport {
    pub sweeps: usize,
    pub objectives: Vec<f64>,
    pub converged: bool,
}

fn condition(m: &Mat) -> f64 {
    let e = SymmetricEigen::new(sym(m)).eigenvalues;
    let (lo, hi) = (e.min(), e.max());
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

fn check_symmetric(m: &Mat) -> Result<()> {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    if (m - m.transpose()).amax() > 1e-10 * scale {
        return Err(Error::Structure("input matrix is not symmetric".into()));
    }
    Ok(())
}

fn check_psd(m: &Mat) -> Result<()> {
    let e = SymmetricEigen::new(sym(m)).eigenvalues;
    let (lo, hi) = (e.min(), e.max());
    if hi <= 0.0 || lo < -1e-10 * hi || !lo.is_finite() {
        return Err(Error::NotPositiveDefinite {
            min_eig: lo,
            max_eig: hi,
        });
    }
    Ok(())
}

/// Kronecker MLE `k(Σ)`: the separable covariance minimizing
/// `tr(ΣK⁻¹) + p1 log|K2| + p2 log|K1|`.
pub fn kronecker_mle(sigma: &Mat, dims: Dims, cfg: &FlipFlopConfig) -> Result<SeparableCovariance> {
    dims.check_square(sigma, "covariance")?;
    check_symmetric(sigma)?;
    check_psd(sigma)?;
    flip_flop(sigma, dims, cfg).map(|(k, _)| k)
}

/// Block-coordinate minimization of the Kronecker objective. Accepts any
/// symmetric input whose partial traces stay positive definite along the
/// iteration; positivity of the input is checked by the callers that need it.
pub fn flip_flop(
    sigma: &Mat,
    dims: Dims,
    cfg: &FlipFlopConfig,
) -> Result<(SeparableCovariance, FlipFlopReport)> {
    let (p1, p2) = (dims.p1, dims.p2);
    let blocks = BlockPartition::new(&sym(sigma), dims)?;
    let degenerate = |what: &str| Error::NoKroneckerMle(what.to_string());

    let mut k1 = Mat::identity(p1, p1);
    let mut k2 = Mat::identity(p2, p2);
    let mut objectives = Vec::new();
    let mut last_rel_decrease = f64::INFINITY;

    for sweep in 1..=cfg.max_iter {
        let k2inv = spd_inverse(&k2).map_err(|_| degenerate("column factor lost definiteness"))?;
        let mut n1 = Mat::zeros(p1, p1);
        for j in 0..p2 {
            for i in 0..p2 {
                n1 += blocks.block(i, j) * k2inv[(j, i)];
            }
        }
        let n1 = sym(&(n1 / p2 as f64));
        let k1inv = spd_inverse(&n1).map_err(|_| degenerate("row factor lost definiteness"))?;
        let n2 = sym(&Mat::from_fn(p2, p2, |i, j| {
            k1inv.dot(blocks.block(i, j)) / p1 as f64
        }));
        // move the scale of the row factor onto the column factor
        let ld1 = crate::matops::log_det_spd(&n1).map_err(|_| degenerate("row factor lost definiteness"))?;
        let c = (ld1 / p1 as f64).exp();
        let new_k1 = n1 / c;
        let new_k2 = n2 * c;

        let ld2 = crate::matops::log_det_spd(&new_k2)
            .map_err(|_| degenerate("column factor lost definiteness"))?;
        // after the column update tr(ΣK⁻¹) = p exactly
        let obj = dims.p() as f64 + p1 as f64 * ld2;
        if !obj.is_finite() {
            return Err(degenerate("objective is not finite"));
        }
        if condition(&new_k1) > cfg.max_condition || condition(&new_k2) > cfg.max_condition {
            return Err(degenerate("a Kronecker factor became numerically singular"));
        }

        let change = ((&new_k1 - &k1).norm() / new_k1.norm())
            .max((&new_k2 - &k2).norm() / new_k2.norm());
        if let Some(&prev) = objectives.last() {
            let prev: f64 = prev;
            last_rel_decrease = (prev - obj) / prev.abs().max(1.0);
        }
        objectives.push(obj);
        k1 = new_k1;
        k2 = new_k2;

        if change < cfg.factor_tol {
            return Ok((
                SeparableCovariance { k1, k2 },
                FlipFlopReport {
                    sweeps: sweep,
                    objectives,
                    converged: true,
                },
            ));
        }
    }

    if cfg.strict && last_rel_decrease > cfg.tol {
        return Err(degenerate(
            "objective still decreasing at the sweep cap; the infimum is not attained",
        ));
    }
    Ok((
        SeparableCovariance { k1, k2 },
        FlipFlopReport {
            sweeps: cfg.max_iter,
            objectives,
            converged: false,
        },
    ))
}

/// Core `h(K)⁻¹ Σ h(K)⁻ᵀ` of `sigma` relative to a given separable part.
pub fn core_given(sigma: &Mat, k: &SeparableCovariance, h: SquareRootKind) -> Result<Mat> {
    let hinv = k.root_inverse(h)?;
    Ok(sym(&(&hinv * sigma * hinv.transpose())))
}

/// Kronecker-core decomposition.
pub fn kcd(sigma: &Mat, dims: Dims, h: SquareRootKind) -> Result<KcdResult> {
    let k = kronecker_mle(sigma, dims, &FlipFlopConfig::default())?;
    let core = core_given(sigma, &k, h)?;
    Ok(KcdResult { k, core, h_kind: h })
}

/// Core component `c(Σ)`.
pub fn core(sigma: &Mat, dims: Dims, h: SquareRootKind) -> Result<Mat> {
    Ok(kcd(sigma, dims, h)?.core)
}

/// Differential of the square-root map `h` at `K` in an arbitrary symmetric
/// direction `u` (a `p × p` matrix).
pub fn dh_full(k: &SeparableCovariance, u: &Mat, h: SquareRootKind) -> Result<Mat> {
    match h {
        SquareRootKind::Cholesky => {
            let (l1, l2) = k.root_factors(h)?;
            let l = kron(&l2, &l1);
            let linv = kron(&lower_inverse(&l2), &lower_inverse(&l1));
            Ok(&l * half(&(&linv * u * linv.transpose()))?)
        }
        SquareRootKind::Symmetric => {
            let e1 = SymmetricEigen::new(sym(&k.k1));
            let e2 = SymmetricEigen::new(sym(&k.k2));
            let gamma = kron(&e2.eigenvectors, &e1.eigenvectors);
            let (p1, p2) = (k.k1.nrows(), k.k2.nrows());
            let mut s = Vec::with_capacity(p1 * p2);
            for b in 0..p2 {
                for a in 0..p1 {
                    let v = e2.eigenvalues[b] * e1.eigenvalues[a];
                    if v <= 0.0 {
                        return Err(Error::NotPositiveDefinite {
                            min_eig: v,
                            max_eig: f64::NAN,
                        });
                    }
                    s.push(v.sqrt());
                }
            }
            let ut = gamma.transpose() * u * &gamma;
            let p = p1 * p2;
            let mut x = Mat::zeros(p, p);
            for j in 0..p {
                for i in 0..p {
                    let d = s[i] + s[j];
                    if d < 1e-14 {
                        return Err(Error::NotPositiveDefinite {
                            min_eig: d,
                            max_eig: f64::NAN,
                        });
                    }
                    x[(i, j)] = ut[(i, j)] / d;
                }
            }
            Ok(sym(&(&gamma * x * gamma.transpose())))
        }
    }
}

/// Differential of `h` at `K` along the separable tangent `U2 ⊗ K1 + K2 ⊗ U1`.
pub fn dh(k: &SeparableCovariance, u: &SeparableTangent, h: SquareRootKind) -> Result<Mat> {
    dh_full(k, &u.full(k), h)
}

struct RcFrame {
    s1: Mat,
    s2: Mat,
    s1i: Mat,
    s2i: Mat,
}

impl RcFrame {
    fn new(base: &SeparableCovariance) -> Result<Self> {
        Ok(RcFrame {
            s1: sym_sqrt(&base.k1)?,
            s2: sym_sqrt(&base.k2)?,
            s1i: sym_inv_sqrt(&base.k1)?,
            s2i: sym_inv_sqrt(&base.k2)?,
        })
    }
}

fn rc_apply_frame(
    blocks: &BlockPartition,
    base: &SeparableCovariance,
    f: &RcFrame,
    w: &SeparableTangent,
    dims: Dims,
) -> SeparableTangent {
    let (p1, p2) = (dims.p1 as f64, dims.p2 as f64);
    let x1 = &f.s1i * &w.u1 * &f.s1i;
    let x2 = &f.s2i * &w.u2 * &f.s2i;
    let mut m1 = Mat::zeros(dims.p1, dims.p1);
    for j in 0..dims.p2 {
        for i in 0..dims.p2 {
            m1 += blocks.block(j, i) * x2[(i, j)];
        }
    }
    let m2 = Mat::from_fn(dims.p2, dims.p2, |i, j| {
        (blocks.block(i, j) * &x1).trace()
    });
    SeparableTangent {
        u1: sym(&(&w.u1 + &f.s1 * m1 * &f.s1 / p2 - &base.k1 * (x2.trace() / p2))),
        u2: sym(&(&w.u2 + &f.s2 * m2 * &f.s2 / p1)),
    }
}

/// The operator `R_C` on the tangent space of `(K1, K2)` with `|K1| = 1`.
/// `c` must be the core relative to the symmetric square root of `base`.
pub fn rc_apply(
    c: &Mat,
    base: &SeparableCovariance,
    w: &SeparableTangent,
) -> Result<SeparableTangent> {
    let dims = base.dims()?;
    let blocks = BlockPartition::new(c, dims)?;
    let f = RcFrame::new(base)?;
    Ok(rc_apply_frame(&blocks, base, &f, w, dims))
}

/// Orthonormal basis of the tangent space at `(K1, K2)`, expressed through
/// `K1^{1/2} E K1^{1/2}` with traceless `E` and `K2^{1/2} E K2^{1/2}`.
fn rc_basis(f: &RcFrame, dims: Dims) -> Vec<SeparableTangent> {
    let mut out = Vec::new();
    for e in traceless_sym_basis(dims.p1) {
        out.push(SeparableTangent {
            u1: sym(&(&f.s1 * e * &f.s1)),
            u2: Mat::zeros(dims.p2, dims.p2),
        });
    }
    for e in sym_basis(dims.p2) {
        out.push(SeparableTangent {
            u1: Mat::zeros(dims.p1, dims.p1),
            u2: sym(&(&f.s2 * e * &f.s2)),
        });
    }
    out
}

fn rc_coords(f: &RcFrame, w: &SeparableTangent, dims: Dims) -> nalgebra::DVector<f64> {
    let x1 = &f.s1i * &w.u1 * &f.s1i;
    let x2 = &f.s2i * &w.u2 * &f.s2i;
    let mut c: Vec<f64> = traceless_sym_basis(dims.p1)
        .iter()
        .map(|e| e.dot(&x1))
        .collect();
    c.extend(sym_basis(dims.p2).iter().map(|e| e.dot(&x2)));
    nalgebra::DVector::from_vec(c)
}

/// Solves `R_C(W) = rhs` as a dense linear system over an orthonormal tangent basis.
pub fn rc_solve(
    c: &Mat,
    base: &SeparableCovariance,
    rhs: &SeparableTangent,
) -> Result<SeparableTangent> {
    let dims = base.dims()?;
    let blocks = BlockPartition::new(c, dims)?;
    let f = RcFrame::new(base)?;
    let basis = rc_basis(&f, dims);
    let n = basis.len();
    let mut m = Mat::zeros(n, n);
    for (l, b) in basis.iter().enumerate() {
        m.set_column(l, &rc_coords(&f, &rc_apply_frame(&blocks, base, &f, b, dims), dims));
    }
    let coords = m
        .lu()
        .solve(&rc_coords(&f, rhs, dims))
        .ok_or_else(|| Error::NumericalRank("the operator R_C is singular".into()))?;
    let mut out = SeparableTangent::zeros(dims);
    for (b, x) in basis.iter().zip(coords.iter()) {
        out.u1 += &b.u1 * *x;
        out.u2 += &b.u2 * *x;
    }
    Ok(out)
}

/// Right-hand side of the linear system defining `dk`, built from
/// `Ṽ = K^{-1/2} V K^{-1/2}` with the symmetric root.
fn dk_rhs(base: &SeparableCovariance, f: &RcFrame, v: &Mat, dims: Dims) -> Result<SeparableTangent> {
    let (p1, p2) = (dims.p1 as f64, dims.p2 as f64);
    let kis = kron(&f.s2i, &f.s1i);
    let vt = sym(&(&kis * v * &kis));
    let t1 = partial_trace_1(&vt, dims)?;
    let t2 = partial_trace_2(&vt, dims)?;
    let tr = vt.trace();
    let _ = base;
    Ok(SeparableTangent {
        u1: sym(&(&f.s1 * (t1 - Mat::identity(dims.p1, dims.p1) * (tr / p1)) * &f.s1 / p2)),
        u2: sym(&(&f.s2 * t2 * &f.s2 / p1)),
    })
}

/// Differential of the Kronecker map along `v`, as the tangent pair `(U1, U2)`
/// at `k(Σ)`. Also returns `k(Σ)`.
pub fn dk_tangent(sigma: &Mat, v: &Mat, dims: Dims) -> Result<(SeparableCovariance, SeparableTangent)> {
    let k = kronecker_mle(sigma, dims, &FlipFlopConfig::default())?;
    let c = core_given(sigma, &k, SquareRootKind::Symmetric)?;
    let f = RcFrame::new(&k)?;
    let rhs = dk_rhs(&k, &f, &sym(v), dims)?;
    let u = rc_solve(&c, &k, &rhs)?;
    Ok((k, u))
}

/// `dk(Σ)[V] = U2 ⊗ K1 + K2 ⊗ U1`.
pub fn dk(sigma: &Mat, v: &Mat, dims: Dims) -> Result<Mat> {
    let (k, u) = dk_tangent(sigma, v, dims)?;
    Ok(u.full(&k))
}

/// Closed form of `dk` at a separable point, where `R_C` is the identity.
pub fn dk_separable(k: &SeparableCovariance, v: &Mat) -> Result<SeparableTangent> {
    let dims = k.dims()?;
    let f = RcFrame::new(k)?;
    dk_rhs(k, &f, &sym(v), dims)
}

/// Differential of the core map along `v`.
pub fn dc(sigma: &Mat, v: &Mat, dims: Dims, h: SquareRootKind) -> Result<Mat> {
    let (k, u) = dk_tangent(sigma, v, dims)?;
    let hinv = k.root_inverse(h)?;
    let c = sym(&(&hinv * sigma * hinv.transpose()));
    let dhk = dh(&k, &u, h)?;
    let a = &hinv * &dhk * &c;
    Ok(sym(&(&hinv * sym(v) * hinv.transpose())) - &a - a.transpose())
}

/// Differential of `g(K, C) = h(K) C h(K)ᵀ` along `(U, W)`.
pub fn dg(
    k: &SeparableCovariance,
    c: &Mat,
    u: &SeparableTangent,
    w: &Mat,
    h: SquareRootKind,
) -> Result<Mat> {
    let hk = k.root(h)?;
    let d = dh(k, u, h)?;
    let b = &d * c * hk.transpose();
    Ok(&hk * w * hk.transpose() + &b + b.transpose())
}
