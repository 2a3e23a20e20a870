//! Euclidean gradients and Hessian-vector products of the negative
//! log-likelihood in `K̄1`, `K̄2` and `A`, written with the per-observation
//! quantities `W₁,ᵢ`, `W₁,ᵢ,ⱼ`, `W₂,ᵢ`, `W₂,ᵢ,ⱼ`.

use crate::error::{Error, Result};
use crate::kcd::SquareRootKind;
use crate::matops::{inverse, mat, sym, Mat};

use super::likelihood::{s_tilde, CoreSpectrum};
use super::PicseParams;

/// Which parameter block a derivative refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    K1,
    K2,
    A,
}

/// `sym` for the symmetric parameterization, lower triangle for the Cholesky one.
pub fn selector(h: SquareRootKind, m: &Mat) -> Mat {
    match h {
        SquareRootKind::Symmetric => sym(m),
        SquareRootKind::Cholesky => m.lower_triangle(),
    }
}

/// Gradient and Hessian-vector products in one Kronecker factor `K`, with the
/// whitened observations `Zᵢ = K̄1⁻¹ Yᵢ K̄2⁻ᵀ` oriented so that
/// `W_i = K⁻ᵀ Zᵢ Zᵢᵀ` and `W_{i,j} = U_j Zᵢᵀ` (transposed for `K̄2`).
pub struct FactorCalculus {
    k: Mat,
    kit: Mat,
    z: Vec<Mat>,
    us: Vec<Mat>,
    alpha: Vec<f64>,
    coef: f64,
    one_minus: f64,
    h: SquareRootKind,
}

impl FactorCalculus {
    pub fn new(tau: &PicseParams, ys: &[Mat], block: Block) -> Result<Self> {
        let dims = tau.a.dims;
        let k1i = inverse(&tau.k1bar)?;
        let k2i = inverse(&tau.k2bar)?;
        let spec = CoreSpectrum::new(&tau.a.a);
        let mut z: Vec<Mat> = ys.iter().map(|y| &k1i * y * k2i.transpose()).collect();
        let mut us = (0..spec.u.ncols())
            .map(|j| mat(&spec.u.column(j).into_owned(), dims.p1, dims.p2))
            .collect::<Result<Vec<_>>>()?;
        let k = match block {
            Block::K1 => tau.k1bar.clone(),
            Block::K2 => {
                z.iter_mut().for_each(|m| *m = m.transpose());
                us.iter_mut().for_each(|m| *m = m.transpose());
                tau.k2bar.clone()
            }
            Block::A => {
                return Err(Error::InvalidConfig(
                    "factor calculus needs a Kronecker factor block".into(),
                ))
            }
        };
        let kit = inverse(&k)?.transpose();
        Ok(FactorCalculus {
            k,
            kit,
            z,
            us,
            alpha: spec.alphas(tau.lambda).iter().copied().collect(),
            coef: 2.0 / (ys.len() as f64 * tau.lambda * tau.nu * tau.nu),
            one_minus: 1.0 - tau.lambda,
            h: tau.h_kind,
        })
    }

    pub fn grad(&self) -> Mat {
        let q = self.k.nrows();
        let mut g = Mat::zeros(q, q);
        for zi in &self.z {
            g -= &self.kit * zi * zi.transpose();
            for (uj, aj) in self.us.iter().zip(&self.alpha) {
                let wij = uj * zi.transpose();
                g += &self.kit * &wij * (self.one_minus * aj * wij.trace());
            }
        }
        selector(self.h, &(g * self.coef))
    }

    pub fn hess(&self, v: &Mat) -> Mat {
        let q = self.k.nrows();
        let kit = &self.kit;
        let kkt = kit * kit.transpose();
        let vt = v.transpose();
        let mut hv = Mat::zeros(q, q);
        for zi in &self.z {
            let wi = kit * zi * zi.transpose();
            hv += kit * &vt * &wi + &wi * &vt * kit + &kkt * v * self.k.transpose() * &wi;
            for (uj, aj) in self.us.iter().zip(&self.alpha) {
                let wij = uj * zi.transpose();
                let t = wij.trace();
                let kw = kit * &wij;
                let dt = (&wij * &vt * kit).trace();
                hv -= &kw * (self.one_minus * aj * dt);
                hv -= (kit * &vt * &kw + &kw * &vt * kit) * (self.one_minus * aj * t);
            }
        }
        selector(self.h, &(hv * self.coef))
    }
}

/// Euclidean gradient in `K̄1` and optionally the Hessian applied to `v`.
pub fn k1_derivatives(
    tau: &PicseParams,
    ys: &[Mat],
    v: Option<&Mat>,
) -> Result<(Mat, Option<Mat>)> {
    let fc = FactorCalculus::new(tau, ys, Block::K1)?;
    Ok((fc.grad(), v.map(|v| fc.hess(v))))
}

pub fn k2_derivatives(
    tau: &PicseParams,
    ys: &[Mat],
    v: Option<&Mat>,
) -> Result<(Mat, Option<Mat>)> {
    let fc = FactorCalculus::new(tau, ys, Block::K2)?;
    Ok((fc.grad(), v.map(|v| fc.hess(v))))
}

/// Cached quantities for the `A` block.
pub struct ABlock {
    pub cinv: Mat,
    pub cinv_s_cinv: Mat,
    pub lambda: f64,
    pub a: Mat,
}

impl ABlock {
    pub fn new(tau: &PicseParams, s: &Mat) -> Result<Self> {
        let st = s_tilde(tau, s)?;
        let spec = CoreSpectrum::new(&tau.a.a);
        let cinv = spec.core_inverse(tau.lambda);
        let cinv_s_cinv = sym(&(&cinv * st * &cinv));
        Ok(ABlock {
            cinv,
            cinv_s_cinv,
            lambda: tau.lambda,
            a: tau.a.a.clone(),
        })
    }

    /// `2(1 − λ)(C̃⁻¹ − C̃⁻¹S̃C̃⁻¹)A`.
    pub fn grad(&self) -> Mat {
        (&self.cinv - &self.cinv_s_cinv) * &self.a * (2.0 * (1.0 - self.lambda))
    }

    pub fn hess(&self, v: &Mat) -> Mat {
        let l1 = 1.0 - self.lambda;
        let e = &self.a * v.transpose() + v * self.a.transpose();
        let ci = &self.cinv;
        let csc = &self.cinv_s_cinv;
        (ci - csc) * v * (2.0 * l1)
            + (ci * &e * csc * &self.a + csc * &e * ci * &self.a - ci * &e * ci * &self.a)
                * (2.0 * l1 * l1)
    }
}

/// Dispatches to the block-specific Euclidean gradient and Hessian-vector product.
pub fn euclid_calculus(
    block: Block,
    tau: &PicseParams,
    ys: &[Mat],
    s: &Mat,
    v: &Mat,
) -> Result<(Mat, Mat)> {
    match block {
        Block::K1 => {
            let (g, h) = k1_derivatives(tau, ys, Some(v))?;
            Ok((g, h.expect("requested Hessian")))
        }
        Block::K2 => {
            let (g, h) = k2_derivatives(tau, ys, Some(v))?;
            Ok((g, h.expect("requested Hessian")))
        }
        Block::A => {
            let b = ABlock::new(tau, s)?;
            Ok((b.grad(), b.hess(v)))
        }
    }
}
