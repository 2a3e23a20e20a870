//! Geometry of core covariance manifolds: the constraint Jacobian `J`,
//! tangent projections for full-rank cores and fixed-rank core factors,
//! quotient (vertical/horizontal) projections, and helpers to sample and
//! decompose core factors.

use nalgebra::DVector;
use petgraph::graph::UnGraph;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::matops::{
    binom2, commutation_matrix, kron, mat, null_space, partial_trace_1, partial_trace_2,
    sym, sym_eigen_desc, sym_inv_sqrt, vec, Dims, Mat,
};

/// Largest `p·r` for which the dense constraint Jacobian is assembled.
pub const J_CAPACITY: usize = 4096;

/// Relative singular-value cutoff used for `J†`.
pub const J_PINV_TOL: f64 = 1e-10;

/// A `p × r` matrix `A` whose Gram matrix `AAᵀ` is a rank-`r` core.
#[derive(Debug, Clone, PartialEq)]
pub struct CoreFactor {
    pub a: Mat,
    pub dims: Dims,
}

impl CoreFactor {
    /// Wraps `a`, checking the core constraints to `tol` and full column rank.
    pub fn new(a: Mat, dims: Dims, tol: f64) -> Result<Self> {
        let r = dims.r()?;
        if a.nrows() != dims.p() || a.ncols() != r {
            return Err(Error::DimensionMismatch(format!(
                "core factor is {}x{}, expected {}x{r}",
                a.nrows(),
                a.ncols(),
                dims.p()
            )));
        }
        let f = CoreFactor { a, dims };
        let (e1, e2) = f.constraint_residuals();
        if e1 > tol || e2 > tol {
            return Err(Error::Structure(format!(
                "core constraints violated: residuals {e1:.3e}, {e2:.3e}"
            )));
        }
        let sv = f.a.clone().svd(false, false).singular_values;
        if sv.min() <= 1e-10 * sv.max() {
            return Err(Error::NumericalRank("core factor is rank deficient".into()));
        }
        Ok(f)
    }

    /// Wraps `a` without validation.
    pub fn new_unchecked(a: Mat, dims: Dims) -> Self {
        CoreFactor { a, dims }
    }

    pub fn r(&self) -> usize {
        self.a.ncols()
    }

    /// Slice `A_i = mat(a_i)`, a `p1 × p2` matrix.
    pub fn slice(&self, i: usize) -> Mat {
        slice_of(&self.a, i, self.dims)
    }

    pub fn slices(&self) -> Vec<Mat> {
        (0..self.r()).map(|i| self.slice(i)).collect()
    }

    pub fn gram(&self) -> Mat {
        sym(&(&self.a * self.a.transpose()))
    }

    /// `(Σᵢ AᵢAᵢᵀ, Σᵢ AᵢᵀAᵢ)`.
    pub fn slice_grams(&self) -> (Mat, Mat) {
        slice_grams(&self.a, self.dims)
    }

    /// Max-abs residuals of `Σᵢ AᵢAᵢᵀ = p2 I` and `Σᵢ AᵢᵀAᵢ = p1 I`.
    pub fn constraint_residuals(&self) -> (f64, f64) {
        let (r, c) = self.slice_grams();
        let (p1, p2) = (self.dims.p1, self.dims.p2);
        (
            (r - Mat::identity(p1, p1) * p2 as f64).amax(),
            (c - Mat::identity(p2, p2) * p1 as f64).amax(),
        )
    }
}

fn slice_of(a: &Mat, i: usize, dims: Dims) -> Mat {
    Mat::from_column_slice(dims.p1, dims.p2, a.column(i).as_slice())
}

fn slice_grams(a: &Mat, dims: Dims) -> (Mat, Mat) {
    let (p1, p2) = (dims.p1, dims.p2);
    let mut rg = Mat::zeros(p1, p1);
    let mut cg = Mat::zeros(p2, p2);
    for i in 0..a.ncols() {
        let s = slice_of(a, i, dims);
        rg += &s * s.transpose();
        cg += s.transpose() * &s;
    }
    (sym(&rg), sym(&cg))
}

/// The constraint map whose zero set (together with `‖A‖² = p`) defines core
/// factors; `J` is its derivative.
pub fn constraint_map(a: &Mat, dims: Dims) -> (Mat, Mat, f64) {
    let (p1, p2, p) = (dims.p1 as f64, dims.p2 as f64, dims.p() as f64);
    let (rg, cg) = slice_grams(a, dims);
    let n2 = a.norm_squared();
    (
        rg / p - Mat::identity(dims.p1, dims.p1) * (n2 / (p1 * p1 * p2)),
        cg / p - Mat::identity(dims.p2, dims.p2) * (n2 / (p1 * p2 * p2)),
        n2 - p,
    )
}

/// Dense constraint Jacobian `J(A)` of size `(p1² + p2² + 1) × (p·r)`.
///
/// The column blocks use `A_1, …, A_r` in turn; a printed variant of this
/// operator repeats `A_r` in every block, which would not be the derivative of
/// the constraints.
pub fn j_operator(a: &Mat, dims: Dims) -> Result<Mat> {
    let (p1, p2, p) = (dims.p1, dims.p2, dims.p());
    let r = a.ncols();
    if a.nrows() != p {
        return Err(Error::DimensionMismatch(format!(
            "factor has {} rows, expected {p}",
            a.nrows()
        )));
    }
    if p * r > J_CAPACITY {
        return Err(Error::Capacity(format!(
            "p·r = {} exceeds the dense Jacobian limit {J_CAPACITY}",
            p * r
        )));
    }
    let (fp1, fp2, fp) = (p1 as f64, p2 as f64, p as f64);
    let rows = p1 * p1 + p2 * p2 + 1;
    let mut j = Mat::zeros(rows, p * r);
    let k11 = commutation_matrix(p1, p1);
    let k22 = commutation_matrix(p2, p2);
    let vi1 = vec(&Mat::identity(p1, p1));
    let vi2 = vec(&Mat::identity(p2, p2));
    let i1 = Mat::identity(p1, p1);
    let i2 = Mat::identity(p2, p2);
    for i in 0..r {
        let ai = slice_of(a, i, dims);
        let av = a.column(i).into_owned();
        let b1 = kron(&ai, &i1);
        let b1 = (&b1 + k11.apply_rows(&b1)) / fp - &vi1 * av.transpose() * (2.0 / (fp1 * fp1 * fp2));
        let b2 = kron(&i2, &ai.transpose());
        let b2 = (&b2 + k22.apply_rows(&b2)) / fp - &vi2 * av.transpose() * (2.0 / (fp1 * fp2 * fp2));
        j.view_mut((0, i * p), (p1 * p1, p)).copy_from(&b1);
        j.view_mut((p1 * p1, i * p), (p2 * p2, p)).copy_from(&b2);
        j.view_mut((rows - 1, i * p), (1, p)).copy_from(&(av.transpose() * 2.0));
    }
    Ok(j)
}

/// Expected rank of `J` away from canonically decomposable factors.
pub fn expected_j_rank(dims: Dims) -> usize {
    binom2(dims.p1 + 1) + binom2(dims.p2 + 1) - 1
}

/// Dimensions of the core manifolds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct ManifoldDims {
    /// Full-rank cores.
    pub full_rank: usize,
    /// Rank-`r` core factors `A` (before the right-rotation quotient), when a rank is set.
    pub factor: Option<usize>,
    /// Rank-`r` PSD cores `AAᵀ`, when a rank is set.
    pub psd: Option<usize>,
}

pub fn manifold_dims(dims: Dims) -> Result<ManifoldDims> {
    let p = dims.p();
    let sep = expected_j_rank(dims);
    let factor = dims.rank.map(|r| p * r - sep);
    Ok(ManifoldDims {
        full_rank: binom2(p + 1) - sep,
        factor,
        psd: factor.zip(dims.rank).map(|(f, r)| f - binom2(r)),
    })
}

/// Orthogonal projection `G` onto symmetric matrices with zero partial traces.
pub fn tangent_project_full(v: &Mat, dims: Dims) -> Result<Mat> {
    let (p1, p2, p) = (dims.p1, dims.p2, dims.p());
    let v = sym(v);
    let t1 = partial_trace_1(&v, dims)?;
    let t2 = partial_trace_2(&v, dims)?;
    Ok(&v
        - kron(&Mat::identity(p2, p2), &t1) / p2 as f64
        - kron(&t2, &Mat::identity(p1, p1)) / p1 as f64
        + Mat::identity(p, p) * (v.trace() / p as f64))
}

/// Riemannian gradient and Hessian-vector product on full-rank cores.
pub fn rgrad_hess_full(egrad: &Mat, ehess_v: &Mat, dims: Dims) -> Result<(Mat, Mat)> {
    Ok((
        tangent_project_full(egrad, dims)?,
        tangent_project_full(ehess_v, dims)?,
    ))
}

/// Tangent space of the fixed-rank core factor manifold at `A`: `J`, `J†` and
/// the projector `I − J†J`.
#[derive(Debug, Clone)]
pub struct RankTangentSpace {
    pub dims: Dims,
    pub j: Mat,
    pub j_pinv: Mat,
    pub projector: Mat,
    pub j_rank: usize,
}

impl RankTangentSpace {
    pub fn new(a: &Mat, dims: Dims) -> Result<Self> {
        let j = j_operator(a, dims)?;
        let n = j.ncols();
        let svd = j.clone().svd(true, true);
        let u = svd.u.as_ref().expect("requested U");
        let vt = svd.v_t.as_ref().expect("requested V^T");
        let smax = svd.singular_values.max();
        let mut j_pinv = Mat::zeros(n, j.nrows());
        let mut row_proj = Mat::zeros(n, n);
        let mut j_rank = 0;
        for (k, &s) in svd.singular_values.iter().enumerate() {
            if s > J_PINV_TOL * smax && s > 0.0 {
                j_rank += 1;
                let v = vt.row(k).transpose();
                j_pinv += &v * u.column(k).transpose() / s;
                row_proj += &v * v.transpose();
            }
        }
        Ok(RankTangentSpace {
            dims,
            j,
            j_pinv,
            projector: Mat::identity(n, n) - row_proj,
            j_rank,
        })
    }

    fn shape(&self) -> (usize, usize) {
        (self.dims.p(), self.j.ncols() / self.dims.p())
    }

    pub fn project(&self, v: &Mat) -> Mat {
        let (p, r) = self.shape();
        let out = &self.projector * vec(v);
        mat(&out, p, r).expect("shape preserved")
    }

    /// Riemannian gradient and Hessian-vector product under the Euclidean metric.
    pub fn rgrad_hess(&self, egrad: &Mat, ehess_v: &Mat, v: &Mat) -> Result<(Mat, Mat)> {
        let (p, r) = self.shape();
        let g = vec(egrad);
        let rg = &self.projector * &g;
        let jv = j_operator(v, self.dims)?;
        let mu = self.j_pinv.transpose() * (&self.j_pinv * (&self.j * &g));
        let rh = &self.projector * (vec(ehess_v) - jv.transpose() * mu);
        Ok((mat(&rg, p, r)?, mat(&rh, p, r)?))
    }
}

/// `mat((I − J†J) vec(V))`.
pub fn tangent_project_rank(a: &CoreFactor, v: &Mat) -> Result<Mat> {
    Ok(RankTangentSpace::new(&a.a, a.dims)?.project(v))
}

/// Riemannian gradient and Hessian-vector product on the fixed-rank factor manifold.
pub fn rgrad_hess_rank(
    a: &CoreFactor,
    egrad: &Mat,
    ehess_v: &Mat,
    v: &Mat,
) -> Result<(Mat, Mat)> {
    RankTangentSpace::new(&a.a, a.dims)?.rgrad_hess(egrad, ehess_v, v)
}

/// Solves `Y E + E Y = V` for SPD `E`.
pub fn sylvester_solve(e: &Mat, v: &Mat) -> Result<Mat> {
    crate::matops::check_pd(e)?;
    let (lam, q) = sym_eigen_desc(e);
    let vt = q.transpose() * v * &q;
    let y = Mat::from_fn(vt.nrows(), vt.ncols(), |i, j| vt[(i, j)] / (lam[i] + lam[j]));
    Ok(&q * y * q.transpose())
}

/// Vertical projection `A T⁻¹_{AᵀA}(2 skew(AᵀW))` for the right-rotation quotient.
pub fn vertical_project(a: &Mat, w: &Mat) -> Result<Mat> {
    let ata = sym(&(a.transpose() * a));
    let atw = a.transpose() * w;
    let s = &atw - atw.transpose();
    Ok(a * sylvester_solve(&ata, &s)?)
}

pub fn horizontal_project(a: &Mat, w: &Mat) -> Result<Mat> {
    Ok(w - vertical_project(a, w)?)
}

/// Orthonormal basis (as columns of `vec`s) of the horizontal part of the
/// tangent space at `A`: `J vec(W) = 0` and `AᵀW` symmetric.
pub fn horizontal_basis(a: &Mat, space: &RankTangentSpace) -> Mat {
    let (p, r) = (a.nrows(), a.ncols());
    // tangent basis: orthonormal complement of the row space of J
    let tangent = null_space(&space.j, J_PINV_TOL);
    if r < 2 {
        return tangent;
    }
    let mut h = Mat::zeros(binom2(r), p * r);
    let mut row = 0;
    for k in 0..r {
        for l in (k + 1)..r {
            // (AᵀW)_{kl} − (AᵀW)_{lk} = a_kᵀ w_l − a_lᵀ w_k
            for x in 0..p {
                h[(row, l * p + x)] += a[(x, k)];
                h[(row, k * p + x)] -= a[(x, l)];
            }
            row += 1;
        }
    }
    let ht = h * &tangent;
    let inner = null_space(&ht, 1e-9);
    tangent * inner
}

/// Connectivity of the bipartite graph with an edge `(s_j, q_k)` whenever
/// `|(P Aᵢ Q⁻¹)_{jk}| > zero_tol` for some slice. A disconnected graph
/// certifies canonical decomposability.
pub fn is_connected_bipartite(
    slices: &[Mat],
    p: Option<&Mat>,
    q: Option<&Mat>,
    zero_tol: f64,
) -> Result<bool> {
    let first = slices
        .first()
        .ok_or_else(|| Error::InvalidConfig("at least one slice is required".into()))?;
    let (p1, p2) = first.shape();
    let pm = p.cloned().unwrap_or_else(|| Mat::identity(p1, p1));
    let qinv = match q {
        Some(q) => crate::matops::inverse(q)?,
        None => Mat::identity(p2, p2),
    };
    if pm.clone().try_inverse().is_none() {
        return Err(Error::NumericalRank("P is singular".into()));
    }
    let mut g = UnGraph::<(), ()>::new_undirected();
    let rows: Vec<_> = (0..p1).map(|_| g.add_node(())).collect();
    let cols: Vec<_> = (0..p2).map(|_| g.add_node(())).collect();
    for s in slices {
        if s.shape() != (p1, p2) {
            return Err(Error::DimensionMismatch("slices differ in shape".into()));
        }
        let t = &pm * s * &qinv;
        for j in 0..p1 {
            for k in 0..p2 {
                if t[(j, k)].abs() > zero_tol {
                    g.update_edge(rows[j], cols[k], ());
                }
            }
        }
    }
    Ok(petgraph::algo::connected_components(&g) == 1)
}

/// Rescales rows and columns of the slices until `Σᵢ AᵢAᵢᵀ = p2 I` and
/// `Σᵢ AᵢᵀAᵢ = p1 I` hold to `tol`. Right-rotation equivariant.
pub fn balance(a: &Mat, dims: Dims, tol: f64, max_iter: usize) -> Result<Mat> {
    let (p1, p2) = (dims.p1, dims.p2);
    let mut a = a.clone();
    for _ in 0..max_iter {
        let (rg, _) = slice_grams(&a, dims);
        let m = sym_inv_sqrt(&(rg / p2 as f64))?;
        a = kron(&Mat::identity(p2, p2), &m) * a;
        let (_, cg) = slice_grams(&a, dims);
        let n = sym_inv_sqrt(&(cg / p1 as f64))?;
        a = kron(&n, &Mat::identity(p1, p1)) * a;
        let f = CoreFactor::new_unchecked(a.clone(), dims);
        let (e1, e2) = f.constraint_residuals();
        if e1 < tol && e2 < tol {
            return Ok(a);
        }
        if !e1.is_finite() || !e2.is_finite() {
            break;
        }
    }
    Err(Error::Convergence(
        "row/column balancing of the core factor did not converge".into(),
    ))
}

/// Random core factor: Gaussian entries, balanced to the core constraints.
pub fn random_core_factor(dims: Dims, seed: u64) -> Result<CoreFactor> {
    let r = dims.r()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for _ in 0..5 {
        let g = Mat::from_fn(dims.p(), r, |_, _| StandardNormal.sample(&mut rng));
        let Ok(a) = balance(&g, dims, 1e-12, 200) else {
            continue;
        };
        let Ok(f) = CoreFactor::new(a, dims, 1e-10) else {
            continue;
        };
        if is_connected_bipartite(&f.slices(), None, None, 1e-12)? {
            return Ok(f);
        }
    }
    Err(Error::Convergence(
        "could not draw a balanced core factor in 5 attempts".into(),
    ))
}

/// Splits a full-rank core `C = (1 − λ)AAᵀ + λI` into `λ` and a rank-`r` factor.
pub fn partial_isotropy_decompose(c: &Mat, dims: Dims) -> Result<(f64, CoreFactor)> {
    let r = dims.r()?;
    dims.check_square(c, "core")?;
    let p = dims.p();
    let (mu, u) = sym_eigen_desc(c);
    let tail: Vec<f64> = mu.iter().skip(r).copied().collect();
    let lambda = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
    if tail.is_empty() || tail.iter().any(|&x| (x - lambda).abs() > 1e-6 * lambda.abs()) {
        return Err(Error::Structure(
            "trailing eigenvalues are not constant".into(),
        ));
    }
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::Structure(format!(
            "isotropic level {lambda} is outside (0, 1)"
        )));
    }
    if mu[r - 1] <= lambda * (1.0 + 1e-6) {
        return Err(Error::Structure("spiked part has fewer than r directions".into()));
    }
    let scale = DVector::from_iterator(r, (0..r).map(|i| ((mu[i] - lambda) / (1.0 - lambda)).sqrt()));
    let a = u.columns(0, r) * Mat::from_diagonal(&scale);
    debug_assert_eq!(a.nrows(), p);
    Ok((lambda, CoreFactor::new_unchecked(a, dims)))
}
