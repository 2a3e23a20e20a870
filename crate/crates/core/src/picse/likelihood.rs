//! Negative log-likelihood of the partial-isotropy core model and its
//! closed-form / one-dimensional coordinate updates.

use crate::error::{Error, Result};
use crate::matops::{kron, sym, Mat, Vector};

use super::{PicseParams, SampleCov};

/// Spectral summary of `C̃ = (1 − λ)AAᵀ + λI` through the thin SVD of `A`.
#[derive(Debug, Clone)]
pub struct CoreSpectrum {
    /// Left singular vectors `u_j` of `A` (`p × r`).
    pub u: Mat,
    /// Squared singular values `σ_j²`.
    pub sigma2: Vector,
}

impl CoreSpectrum {
    pub fn new(a: &Mat) -> Self {
        let svd = a.clone().svd(true, false);
        let u = svd.u.expect("requested U");
        let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
        idx.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
        let cols: Vec<_> = idx.iter().map(|&k| u.column(k).into_owned()).collect();
        let sigma2 = Vector::from_iterator(idx.len(), idx.iter().map(|&k| svd.singular_values[k].powi(2)));
        CoreSpectrum {
            u: Mat::from_columns(&cols),
            sigma2,
        }
    }

    /// `α_j = σ_j² / ((1 − λ)σ_j² + λ)`.
    pub fn alphas(&self, lambda: f64) -> Vector {
        self.sigma2.map(|s| s / ((1.0 - lambda) * s + lambda))
    }

    /// `C̃⁻¹ = (I − (1 − λ) Σ α_j u_j u_jᵀ) / λ`.
    pub fn core_inverse(&self, lambda: f64) -> Mat {
        let p = self.u.nrows();
        let al = self.alphas(lambda);
        let w = &self.u * Mat::from_diagonal(&al) * self.u.transpose();
        sym(&((Mat::identity(p, p) - w * (1.0 - lambda)) / lambda))
    }

    pub fn log_det(&self, lambda: f64) -> f64 {
        let p = self.u.nrows();
        let r = self.sigma2.len();
        self.sigma2
            .iter()
            .map(|s| ((1.0 - lambda) * s + lambda).ln())
            .sum::<f64>()
            + (p - r) as f64 * lambda.ln()
    }

    /// `tr(M C̃⁻¹)` from `tr M` and the projections `u_jᵀ M u_j`.
    pub fn trace_against(&self, m: &Mat, lambda: f64) -> f64 {
        let (tr, s) = self.projections(m);
        trace_from_projections(tr, &s, &self.sigma2, lambda)
    }

    fn projections(&self, m: &Mat) -> (f64, Vector) {
        let mu = m * &self.u;
        let s = Vector::from_iterator(self.u.ncols(), (0..self.u.ncols()).map(|j| self.u.column(j).dot(&mu.column(j))));
        (m.trace(), s)
    }
}

fn trace_from_projections(tr: f64, s: &Vector, sigma2: &Vector, lambda: f64) -> f64 {
    let mut out = (tr - s.sum()) / lambda;
    for (sj, sg) in s.iter().zip(sigma2.iter()) {
        out += sj / ((1.0 - lambda) * sg + lambda);
    }
    out
}

/// `K̄⁻¹ S K̄⁻ᵀ` with `K̄ = K̄2 ⊗ K̄1` (no `ν` scaling).
pub fn whiten(tau: &PicseParams, s: &Mat) -> Result<Mat> {
    let k1i = crate::matops::inverse(&tau.k1bar)?;
    let k2i = crate::matops::inverse(&tau.k2bar)?;
    let ki = kron(&k2i, &k1i);
    Ok(sym(&(&ki * s * ki.transpose())))
}

/// `S̃ = K̄⁻¹ S K̄⁻ᵀ / ν²`.
pub fn s_tilde(tau: &PicseParams, s: &Mat) -> Result<Mat> {
    Ok(whiten(tau, s)? / (tau.nu * tau.nu))
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::NotPositiveDefinite {
            min_eig: lambda,
            max_eig: 1.0,
        });
    }
    Ok(())
}

/// Negative log-likelihood
/// `tr(K̄⁻¹SK̄⁻ᵀ C̃⁻¹)/ν² + log|C̃| + 2p log ν`.
pub fn nll(tau: &PicseParams, s: &SampleCov) -> Result<f64> {
    check_lambda(tau.lambda)?;
    let spec = CoreSpectrum::new(&tau.a.a);
    let w = whiten(tau, &s.s)?;
    Ok(nll_with(tau, &spec, &w))
}

pub(crate) fn nll_with(tau: &PicseParams, spec: &CoreSpectrum, whitened: &Mat) -> f64 {
    let p = whitened.nrows() as f64;
    spec.trace_against(whitened, tau.lambda) / (tau.nu * tau.nu)
        + spec.log_det(tau.lambda)
        + 2.0 * p * tau.nu.ln()
}

/// Closed-form minimizer in `ν`: `sqrt(tr(K̄⁻¹SK̄⁻ᵀ C̃⁻¹) / p)`.
pub fn update_nu(tau: &PicseParams, s: &SampleCov) -> Result<f64> {
    check_lambda(tau.lambda)?;
    let spec = CoreSpectrum::new(&tau.a.a);
    let w = whiten(tau, &s.s)?;
    let t = spec.trace_against(&w, tau.lambda);
    Ok((t / w.nrows() as f64).sqrt())
}

/// One-dimensional minimizer in `λ` over `bracket`, by bounded Brent search on
/// the O(r)-per-probe spectral form. Never returns a worse value than the
/// current `λ`.
pub fn update_lambda(tau: &PicseParams, s: &SampleCov, bracket: (f64, f64)) -> Result<f64> {
    let spec = CoreSpectrum::new(&tau.a.a);
    let st = s_tilde(tau, &s.s)?;
    let (tr, proj) = spec.projections(&st);
    let p = st.nrows();
    let r = spec.sigma2.len();
    let f = |lambda: f64| {
        trace_from_projections(tr, &proj, &spec.sigma2, lambda)
            + spec
                .sigma2
                .iter()
                .map(|sg| ((1.0 - lambda) * sg + lambda).ln())
                .sum::<f64>()
            + (p - r) as f64 * lambda.ln()
    };
    let (x, fx) = brent_bounded(&f, bracket.0, bracket.1, 1e-8);
    let cur = tau.lambda.clamp(bracket.0, bracket.1);
    if cur == tau.lambda && f(cur) <= fx {
        return Ok(cur);
    }
    Ok(x)
}

/// Bounded scalar minimization (golden section with parabolic interpolation).
/// Returns `(argmin, min)`.
pub fn brent_bounded(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, xtol: f64) -> (f64, f64) {
    let golden = 0.5 * (3.0 - 5f64.sqrt());
    let sqrt_eps = f64::EPSILON.sqrt();
    let (mut a, mut b) = (lo, hi);
    let mut v = a + golden * (b - a);
    let (mut w, mut x) = (v, v);
    let mut fx = f(x);
    let (mut fv, mut fw) = (fx, fx);
    let (mut d, mut e) = (0.0f64, 0.0f64);
    for _ in 0..500 {
        let xm = 0.5 * (a + b);
        let tol1 = sqrt_eps * x.abs() + xtol / 3.0;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden_step = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let q = (x - v) * (fx - fw);
            let mut pp = (x - v) * q - (x - w) * r;
            let mut qq = 2.0 * (q - r);
            if qq > 0.0 {
                pp = -pp;
            }
            qq = qq.abs();
            let etemp = e;
            e = d;
            if pp.abs() < (0.5 * qq * etemp).abs() && pp > qq * (a - x) && pp < qq * (b - x) {
                d = pp / qq;
                let u = x + d;
                if (u - a) < tol2 || (b - u) < tol2 {
                    d = if xm >= x { tol1 } else { -tol1 };
                }
                golden_step = false;
            }
        }
        if golden_step {
            e = if x >= xm { a - x } else { b - x };
            d = golden * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d > 0.0 {
            x + tol1
        } else {
            x - tol1
        };
        let fu = f(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    // the endpoints are admissible too
    let mut best = (x, fx);
    for end in [lo, hi] {
        let fe = f(end);
        if fe < best.1 {
            best = (end, fe);
        }
    }
    best
}
