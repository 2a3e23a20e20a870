//! Geometry of the SPD cone under the affine-invariant metric and of the
//! Cholesky space under the Cholesky metric, plus their unit-determinant
//! submanifolds.
//!
//! Points and tangent vectors are plain `Mat`s. A point on the SPD cone is a
//! symmetric positive definite matrix; a point in the Cholesky space is a
//! lower-triangular matrix with positive diagonal.

use crate::error::{Error, Result};
use crate::matops::{
    check_pd, diag_part, inner, lower_inverse, strict_lower, sym, sym_apply, sym_inv_sqrt,
    sym_sqrt, traceless_sym_basis, zero_sum_basis, Mat,
};

fn check_same(a: &Mat, b: &Mat, what: &str) -> Result<()> {
    if a.shape() != b.shape() || a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{what}: base is {:?}, argument is {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Affine-invariant geodesic `Σ^{1/2} exp(t Σ^{-1/2} V Σ^{-1/2}) Σ^{1/2}`.
pub fn ai_exp(sigma: &Mat, v: &Mat, t: f64) -> Result<Mat> {
    check_same(sigma, v, "ai_exp")?;
    let s = sym_sqrt(sigma)?;
    let si = sym_inv_sqrt(sigma)?;
    let e = sym_apply(&(&si * sym(v) * &si * t), f64::exp);
    Ok(sym(&(&s * e * &s)))
}

/// `tr(Σ⁻¹ U Σ⁻¹ V)`.
pub fn ai_inner(sigma: &Mat, u: &Mat, v: &Mat) -> Result<f64> {
    let si = crate::matops::spd_inverse(sigma)?;
    Ok((&si * u * &si * v).trace())
}

/// Riemannian gradient and Hessian-vector product under the affine-invariant metric.
pub fn ai_grad_hess(sigma: &Mat, egrad: &Mat, ehess_v: &Mat, v: &Mat) -> Result<(Mat, Mat)> {
    check_same(sigma, egrad, "ai_grad_hess")?;
    check_same(sigma, ehess_v, "ai_grad_hess")?;
    check_same(sigma, v, "ai_grad_hess")?;
    let rgrad = sym(&(sigma * egrad * sigma));
    let rhess = sym(&(sigma * ehess_v * sigma)) + sym(&(v * egrad * sigma));
    Ok((rgrad, rhess))
}

/// AI-orthogonal projection onto `{V : tr(Σ⁻¹V) = 0}`.
pub fn proj_unitdet_spd(sigma: &Mat, v: &Mat) -> Result<Mat> {
    check_same(sigma, v, "proj_unitdet_spd")?;
    let q = sigma.nrows() as f64;
    let t = (crate::matops::spd_inverse(sigma)? * sym(v)).trace();
    Ok(sym(v) - sigma * (t / q))
}

/// Cholesky geodesic `⌊L⌋ + t⌊V⌋ + D(L) exp(t D(V) D(L)⁻¹)`.
pub fn chol_exp(l: &Mat, v: &Mat, t: f64) -> Mat {
    let mut out = strict_lower(l) + strict_lower(v) * t;
    for i in 0..l.nrows() {
        out[(i, i)] = l[(i, i)] * (t * v[(i, i)] / l[(i, i)]).exp();
    }
    out
}

/// `⟨⌊U⌋,⌊V⌋⟩ + ⟨D(L)⁻¹D(U), D(L)⁻¹D(V)⟩`.
pub fn chol_inner(l: &Mat, u: &Mat, v: &Mat) -> f64 {
    let mut s = inner(&strict_lower(u), &strict_lower(v));
    for i in 0..l.nrows() {
        s += u[(i, i)] * v[(i, i)] / (l[(i, i)] * l[(i, i)]);
    }
    s
}

/// Riemannian gradient and Hessian-vector product under the Cholesky metric.
pub fn chol_grad_hess(l: &Mat, egrad: &Mat, ehess_v: &Mat, v: &Mat) -> (Mat, Mat) {
    let dl = diag_part(l);
    let dl2 = &dl * &dl;
    let rgrad = &dl2 * diag_part(egrad) + strict_lower(egrad);
    let rhess =
        &dl2 * diag_part(ehess_v) + strict_lower(ehess_v) + &dl * diag_part(egrad) * diag_part(v);
    (rgrad, rhess)
}

/// Cholesky-metric orthogonal projection onto `{V : tr(L⁻¹V) = 0}`.
pub fn proj_unitdet_chol(l: &Mat, v: &Mat) -> Mat {
    let q = l.nrows() as f64;
    let t: f64 = (0..l.nrows()).map(|i| v[(i, i)] / l[(i, i)]).sum();
    let v = v.lower_triangle();
    v - diag_part(l) * (t / q)
}

/// Scales an SPD matrix to determinant one.
pub fn normalize_spd_unit_det(m: &Mat) -> Result<Mat> {
    let ld = crate::matops::log_det_spd(m)?;
    Ok(m * (-ld / m.nrows() as f64).exp())
}

/// Scales a lower-triangular matrix with positive diagonal to determinant one.
pub fn normalize_chol_unit_det(l: &Mat) -> Mat {
    let ld: f64 = l.diagonal().iter().map(|x| x.ln()).sum();
    l * (-ld / l.nrows() as f64).exp()
}

/// One of the two unit-determinant manifolds used for the normalized Kronecker
/// square-root factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum UnitDetGeometry {
    /// Unit-determinant SPD matrices, affine-invariant metric.
    AffineInvariant,
    /// Unit-determinant lower-triangular matrices with positive diagonal, Cholesky metric.
    Cholesky,
}

impl UnitDetGeometry {
    pub fn inner(&self, x: &Mat, u: &Mat, v: &Mat) -> Result<f64> {
        match self {
            UnitDetGeometry::AffineInvariant => ai_inner(x, u, v),
            UnitDetGeometry::Cholesky => Ok(chol_inner(x, u, v)),
        }
    }

    pub fn project(&self, x: &Mat, v: &Mat) -> Result<Mat> {
        match self {
            UnitDetGeometry::AffineInvariant => proj_unitdet_spd(x, v),
            UnitDetGeometry::Cholesky => Ok(proj_unitdet_chol(x, v)),
        }
    }

    /// Exponential map on the unit-determinant submanifold: the tangent is
    /// projected first and the result renormalized to determinant one.
    pub fn exp(&self, x: &Mat, v: &Mat, t: f64) -> Result<Mat> {
        let v = self.project(x, v)?;
        match self {
            UnitDetGeometry::AffineInvariant => normalize_spd_unit_det(&ai_exp(x, &v, t)?),
            UnitDetGeometry::Cholesky => Ok(normalize_chol_unit_det(&chol_exp(x, &v, t))),
        }
    }

    /// Riemannian gradient and Hessian-vector product on the submanifold, from
    /// the Euclidean ones (already passed through `sym` or `lower`).
    pub fn grad_hess(&self, x: &Mat, egrad: &Mat, ehess_v: &Mat, v: &Mat) -> Result<(Mat, Mat)> {
        let (g, h) = match self {
            UnitDetGeometry::AffineInvariant => ai_grad_hess(x, egrad, ehess_v, v)?,
            UnitDetGeometry::Cholesky => chol_grad_hess(x, egrad, ehess_v, v),
        };
        Ok((self.project(x, &g)?, self.project(x, &h)?))
    }

    /// Metric-orthonormal basis of the unit-determinant tangent space at `x`.
    pub fn tangent_basis(&self, x: &Mat) -> Result<Vec<Mat>> {
        let q = x.nrows();
        match self {
            UnitDetGeometry::AffineInvariant => {
                let s = sym_sqrt(x)?;
                Ok(traceless_sym_basis(q)
                    .into_iter()
                    .map(|e| sym(&(&s * e * &s)))
                    .collect())
            }
            UnitDetGeometry::Cholesky => {
                let mut out = Vec::with_capacity(q * (q + 1) / 2 - 1);
                for c in zero_sum_basis(q) {
                    out.push(Mat::from_fn(q, q, |i, j| {
                        if i == j {
                            c[i] * x[(i, i)]
                        } else {
                            0.0
                        }
                    }));
                }
                for j in 0..q {
                    for i in (j + 1)..q {
                        let mut e = Mat::zeros(q, q);
                        e[(i, j)] = 1.0;
                        out.push(e);
                    }
                }
                Ok(out)
            }
        }
    }

    /// Checks that `x` is a point of the manifold (up to `tol` on the determinant).
    pub fn validate(&self, x: &Mat, tol: f64) -> Result<()> {
        let logdet = match self {
            UnitDetGeometry::AffineInvariant => {
                check_pd(x)?;
                crate::matops::log_det_spd(x)?
            }
            UnitDetGeometry::Cholesky => {
                if strict_lower(&x.transpose()).amax() > 0.0 {
                    return Err(Error::Structure("Cholesky point has a non-zero upper triangle".into()));
                }
                if x.diagonal().iter().any(|&d| d <= 0.0) {
                    return Err(Error::Structure("Cholesky point has a non-positive diagonal".into()));
                }
                x.diagonal().iter().map(|d| d.ln()).sum()
            }
        };
        if (logdet.exp() - 1.0).abs() > tol {
            return Err(Error::Structure(format!(
                "determinant {} is not one",
                logdet.exp()
            )));
        }
        Ok(())
    }
}

/// `tr(L⁻¹V)` for a lower-triangular `L`.
pub fn chol_trace_inv(l: &Mat, v: &Mat) -> f64 {
    (lower_inverse(l) * v).trace()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matops::{chol, log_det_spd};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn rand_mat(rng: &mut ChaCha20Rng, q: usize) -> Mat {
        Mat::from_fn(q, q, |_, _| rng.random_range(-1.0..1.0))
    }

    fn rand_spd(rng: &mut ChaCha20Rng, q: usize) -> Mat {
        let x = rand_mat(rng, q);
        &x * x.transpose() + Mat::identity(q, q) * 0.5
    }

    fn rand_unit_spd(rng: &mut ChaCha20Rng, q: usize) -> Mat {
        normalize_spd_unit_det(&rand_spd(rng, q)).unwrap()
    }

    #[test]
    fn ai_exp_basics() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let s = rand_spd(&mut rng, 3);
        assert_relative_eq!(ai_exp(&s, &Mat::zeros(3, 3), 0.7).unwrap(), s, epsilon = 1e-12);
        assert_relative_eq!(ai_exp(&s, &sym(&rand_mat(&mut rng, 3)), 0.0).unwrap(), s, epsilon = 1e-12);
        let v = sym(&rand_mat(&mut rng, 3));
        let expv = sym_apply(&v, f64::exp);
        assert_relative_eq!(ai_exp(&Mat::identity(3, 3), &v, 1.0).unwrap(), expv, epsilon = 1e-12);
        let eps = 1e-5;
        let fd = (ai_exp(&s, &v, eps).unwrap() - ai_exp(&s, &v, -eps).unwrap()) / (2.0 * eps);
        assert!((fd - &v).amax() < 1e-6);
    }

    #[test]
    fn ai_gradient_matches_log_det_derivative() {
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let s = rand_spd(&mut rng, 4);
        let v = sym(&rand_mat(&mut rng, 4));
        // f = log det, Euclidean gradient Σ⁻¹
        let eg = crate::matops::spd_inverse(&s).unwrap();
        let (rg, _) = ai_grad_hess(&s, &eg, &Mat::zeros(4, 4), &v).unwrap();
        let lhs = ai_inner(&s, &rg, &v).unwrap();
        let eps = 1e-5;
        let f = |t: f64| log_det_spd(&ai_exp(&s, &v, t).unwrap()).unwrap();
        let fd = (f(eps) - f(-eps)) / (2.0 * eps);
        assert!((lhs - fd).abs() < 1e-6);

        let (g0, h0) = ai_grad_hess(&s, &Mat::zeros(4, 4), &Mat::zeros(4, 4), &v).unwrap();
        assert_eq!(g0.amax(), 0.0);
        assert_eq!(h0.amax(), 0.0);
        let i4 = Mat::identity(4, 4);
        let h = sym(&rand_mat(&mut rng, 4));
        let (g1, h1) = ai_grad_hess(&i4, &eg, &h, &v).unwrap();
        assert_relative_eq!(g1, eg, epsilon = 1e-14);
        assert_relative_eq!(h1, &h + sym(&(&v * &eg)), epsilon = 1e-14);
    }

    #[test]
    fn ai_hessian_matches_second_derivative_along_geodesic() {
        // f(Σ) = tr(MΣ) + tr(Σ⁻¹N): gradient M − Σ⁻¹NΣ⁻¹, Hessian Σ⁻¹VΣ⁻¹NΣ⁻¹ + Σ⁻¹NΣ⁻¹VΣ⁻¹
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let s = rand_spd(&mut rng, 3);
        let m = sym(&rand_mat(&mut rng, 3));
        let n = rand_spd(&mut rng, 3);
        let v = sym(&rand_mat(&mut rng, 3));
        let si = crate::matops::spd_inverse(&s).unwrap();
        let eg = &m - &si * &n * &si;
        let eh = sym(&(&si * &v * &si * &n * &si * 2.0));
        let (_, rh) = ai_grad_hess(&s, &eg, &eh, &v).unwrap();
        let f = |x: &Mat| (&m * x).trace() + (crate::matops::spd_inverse(x).unwrap() * &n).trace();
        let eps = 1e-4;
        let fd = (f(&ai_exp(&s, &v, eps).unwrap()) - 2.0 * f(&s) + f(&ai_exp(&s, &v, -eps).unwrap()))
            / (eps * eps);
        let lhs = ai_inner(&s, &rh, &v).unwrap();
        assert!((lhs - fd).abs() < 1e-4 * fd.abs().max(1.0), "{lhs} vs {fd}");
    }

    #[test]
    fn spd_projection() {
        let mut rng = ChaCha20Rng::seed_from_u64(14);
        let s = rand_spd(&mut rng, 4);
        assert!(proj_unitdet_spd(&s, &s).unwrap().amax() < 1e-12);
        let v = sym(&rand_mat(&mut rng, 4));
        let pv = proj_unitdet_spd(&s, &v).unwrap();
        let si = crate::matops::spd_inverse(&s).unwrap();
        assert!((&si * &pv).trace().abs() < 1e-12);
        assert_relative_eq!(proj_unitdet_spd(&s, &pv).unwrap(), pv.clone(), epsilon = 1e-12);
        let w = proj_unitdet_spd(&s, &sym(&rand_mat(&mut rng, 4))).unwrap();
        assert!(ai_inner(&s, &(&v - &pv), &w).unwrap().abs() < 1e-10);
    }

    #[test]
    fn chol_exp_basics() {
        let mut rng = ChaCha20Rng::seed_from_u64(15);
        let l = chol(&rand_spd(&mut rng, 3)).unwrap();
        let v = rand_mat(&mut rng, 3).lower_triangle();
        assert_eq!(chol_exp(&l, &Mat::zeros(3, 3), 0.3), l);
        let mut expect = strict_lower(&v);
        for i in 0..3 {
            expect[(i, i)] = v[(i, i)].exp();
        }
        assert_relative_eq!(chol_exp(&Mat::identity(3, 3), &v, 1.0), expect, epsilon = 1e-14);
        let eps = 1e-5;
        let fd = (chol_exp(&l, &v, eps) - chol_exp(&l, &v, -eps)) / (2.0 * eps);
        assert!((fd - &v).amax() < 1e-6);
        let far = chol_exp(&l, &(v * -50.0), 1.0);
        assert!(far.diagonal().iter().all(|&d| d > 0.0));
    }

    #[test]
    fn chol_gradient_matches_log_diag_derivative() {
        let mut rng = ChaCha20Rng::seed_from_u64(16);
        let l = chol(&rand_spd(&mut rng, 4)).unwrap();
        let v = rand_mat(&mut rng, 4).lower_triangle();
        let eg = Mat::from_diagonal(&l.diagonal().map(|d| 1.0 / d));
        let (rg, _) = chol_grad_hess(&l, &eg, &Mat::zeros(4, 4), &v);
        let f = |x: &Mat| x.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let eps = 1e-5;
        let fd = (f(&chol_exp(&l, &v, eps)) - f(&chol_exp(&l, &v, -eps))) / (2.0 * eps);
        assert!((chol_inner(&l, &rg, &v) - fd).abs() < 1e-6);
        let i4 = Mat::identity(4, 4);
        let g = rand_mat(&mut rng, 4).lower_triangle();
        assert_relative_eq!(chol_grad_hess(&i4, &g, &g, &v).0, g, epsilon = 1e-15);
    }

    #[test]
    fn chol_hessian_matches_second_derivative_along_geodesic() {
        // f(L) = tr(M L) + Σ L_ii³ on lower-triangular arguments
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        let l = chol(&rand_spd(&mut rng, 3)).unwrap();
        let m = rand_mat(&mut rng, 3);
        let v = rand_mat(&mut rng, 3).lower_triangle();
        let eg = (m.transpose() + Mat::from_diagonal(&l.diagonal().map(|d| 3.0 * d * d))).lower_triangle();
        let eh = Mat::from_fn(3, 3, |i, j| if i == j { 6.0 * l[(i, i)] * v[(i, i)] } else { 0.0 });
        let (_, rh) = chol_grad_hess(&l, &eg, &eh, &v);
        let f = |x: &Mat| (&m * x).trace() + x.diagonal().iter().map(|d| d.powi(3)).sum::<f64>();
        let eps = 1e-4;
        let fd = (f(&chol_exp(&l, &v, eps)) - 2.0 * f(&l) + f(&chol_exp(&l, &v, -eps))) / (eps * eps);
        let lhs = chol_inner(&l, &rh, &v);
        assert!((lhs - fd).abs() < 1e-4 * fd.abs().max(1.0), "{lhs} vs {fd}");
    }

    #[test]
    fn chol_projection() {
        let mut rng = ChaCha20Rng::seed_from_u64(18);
        let l = chol(&rand_spd(&mut rng, 4)).unwrap();
        assert!(proj_unitdet_chol(&l, &diag_part(&l)).amax() < 1e-14);
        let v = rand_mat(&mut rng, 4).lower_triangle();
        let pv = proj_unitdet_chol(&l, &v);
        assert!(chol_trace_inv(&l, &pv).abs() < 1e-12);
        assert_relative_eq!(proj_unitdet_chol(&l, &pv), pv.clone(), epsilon = 1e-14);
        let w = proj_unitdet_chol(&l, &rand_mat(&mut rng, 4).lower_triangle());
        assert!(chol_inner(&l, &(&v - &pv), &w).abs() < 1e-10);
    }

    #[test]
    fn geodesics_stay_on_unit_determinant() {
        let mut rng = ChaCha20Rng::seed_from_u64(19);
        for _ in 0..20 {
            let s = rand_unit_spd(&mut rng, 3);
            let v = proj_unitdet_spd(&s, &sym(&rand_mat(&mut rng, 3))).unwrap();
            for t in [0.0, 0.25, 0.5, 1.0] {
                let e = ai_exp(&s, &v, t).unwrap();
                assert!((e.determinant() - 1.0).abs() < 1e-8);
            }
            let l = normalize_chol_unit_det(&chol(&rand_spd(&mut rng, 3)).unwrap());
            let v = proj_unitdet_chol(&l, &rand_mat(&mut rng, 3).lower_triangle());
            for t in [0.0, 0.25, 0.5, 1.0] {
                let e = chol_exp(&l, &v, t);
                assert!((e.determinant() - 1.0).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn tangent_bases_are_orthonormal_and_tangent() {
        let mut rng = ChaCha20Rng::seed_from_u64(20);
        let s = rand_unit_spd(&mut rng, 3);
        let l = normalize_chol_unit_det(&chol(&rand_spd(&mut rng, 3)).unwrap());
        for (g, x) in [
            (UnitDetGeometry::AffineInvariant, s),
            (UnitDetGeometry::Cholesky, l),
        ] {
            g.validate(&x, 1e-10).unwrap();
            let b = g.tangent_basis(&x).unwrap();
            assert_eq!(b.len(), 5);
            for (i, u) in b.iter().enumerate() {
                assert!((g.project(&x, u).unwrap() - u).amax() < 1e-12);
                for (j, w) in b.iter().enumerate() {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((g.inner(&x, u, w).unwrap() - expect).abs() < 1e-10);
                }
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn projections_are_self_adjoint(seed in 0u64..1000, q in 2usize..8) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let s = rand_spd(&mut rng, q);
            let u = sym(&rand_mat(&mut rng, q));
            let w = sym(&rand_mat(&mut rng, q));
            let a = ai_inner(&s, &proj_unitdet_spd(&s, &u).unwrap(), &w).unwrap();
            let b = ai_inner(&s, &u, &proj_unitdet_spd(&s, &w).unwrap()).unwrap();
            proptest::prop_assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()));

            let l = chol(&s).unwrap();
            let u = rand_mat(&mut rng, q).lower_triangle();
            let w = rand_mat(&mut rng, q).lower_triangle();
            let a = chol_inner(&l, &proj_unitdet_chol(&l, &u), &w);
            let b = chol_inner(&l, &u, &proj_unitdet_chol(&l, &w));
            proptest::prop_assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()));
        }

        #[test]
        fn riemannian_hessians_are_symmetric(seed in 0u64..1000) {
            // f(Σ) = tr(Σ⁻¹N): ehess[V] = 2 sym(Σ⁻¹VΣ⁻¹NΣ⁻¹)
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let s = rand_spd(&mut rng, 3);
            let n = rand_spd(&mut rng, 3);
            let si = crate::matops::spd_inverse(&s).unwrap();
            let eg = -(&si * &n * &si);
            let eh = |v: &Mat| sym(&(&si * v * &si * &n * &si * 2.0));
            let v = sym(&rand_mat(&mut rng, 3));
            let w = sym(&rand_mat(&mut rng, 3));
            let (_, hv) = ai_grad_hess(&s, &eg, &eh(&v), &v).unwrap();
            let (_, hw) = ai_grad_hess(&s, &eg, &eh(&w), &w).unwrap();
            let a = ai_inner(&s, &hv, &w).unwrap();
            let b = ai_inner(&s, &hw, &v).unwrap();
            proptest::prop_assert!((a - b).abs() < 1e-8 * (1.0 + a.abs()));
        }
    }
}
