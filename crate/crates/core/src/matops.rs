//! Structural matrix operators: vec/mat reshaping, Kronecker products,
//! commutation permutations, partial traces and triangular splits.
//!
//! Everything here uses column-stacking `vec`, so that
//! `vec(B X Aᵀ) = (A ⊗ B) vec(X)`, and a `p × p` matrix is viewed as a
//! `p2 × p2` grid of `p1 × p1` blocks, with block `[i, j]` of `B ⊗ A`
//! equal to `b_ij A`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative threshold used to accept a symmetric matrix as positive definite:
/// the smallest eigenvalue must exceed this fraction of the largest.
pub const PD_REL_TOL: f64 = 1e-10;

/// Problem shape of a `p1 × p2` matrix-variate model, optionally with a rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Dims {
    pub p1: usize,
    pub p2: usize,
    pub rank: Option<usize>,
}

impl Dims {
    pub fn new(p1: usize, p2: usize) -> Result<Self> {
        if p1 < 2 || p2 < 2 {
            return Err(Error::InvalidDims(format!(
                "p1 and p2 must both be at least 2 (got {p1}, {p2})"
            )));
        }
        Ok(Dims { p1, p2, rank: None })
    }

    /// Shape with a rank in the regime `p1/p2 + p2/p1 < r <= p`.
    pub fn with_rank(p1: usize, p2: usize, r: usize) -> Result<Self> {
        let mut d = Dims::new(p1, p2)?;
        // r > p1/p2 + p2/p1  <=>  r p1 p2 > p1² + p2²
        if r * p1 * p2 <= p1 * p1 + p2 * p2 {
            return Err(Error::InvalidDims(format!(
                "rank {r} must exceed p1/p2 + p2/p1 = {:.4}",
                p1 as f64 / p2 as f64 + p2 as f64 / p1 as f64
            )));
        }
        if r > p1 * p2 {
            return Err(Error::InvalidDims(format!(
                "rank {r} exceeds p = {}",
                p1 * p2
            )));
        }
        d.rank = Some(r);
        Ok(d)
    }

    #[inline]
    pub fn p(&self) -> usize {
        self.p1 * self.p2
    }

    pub fn r(&self) -> Result<usize> {
        self.rank
            .ok_or_else(|| Error::InvalidDims("a rank is required for this operation".into()))
    }

    pub(crate) fn check_square(&self, m: &Mat, what: &str) -> Result<()> {
        let p = self.p();
        if m.nrows() != p || m.ncols() != p {
            return Err(Error::DimensionMismatch(format!(
                "{what} is {}x{}, expected {p}x{p} for (p1, p2) = ({}, {})",
                m.nrows(),
                m.ncols(),
                self.p1,
                self.p2
            )));
        }
        Ok(())
    }
}

/// Column-stacking vectorization.
pub fn vec(m: &Mat) -> Vector {
    Vector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec`] for a `rows × cols` target.
pub fn mat(u: &Vector, rows: usize, cols: usize) -> Result<Mat> {
    if u.len() != rows * cols {
        return Err(Error::DimensionMismatch(format!(
            "cannot reshape a vector of length {} into {rows}x{cols}",
            u.len()
        )));
    }
    Ok(Mat::from_column_slice(rows, cols, u.as_slice()))
}

/// Kronecker product `B ⊗ A`.
pub fn kron(b: &Mat, a: &Mat) -> Mat {
    b.kronecker(a)
}

/// The commutation matrix `K_{m,n}`, stored as a permutation: `K_{m,n} vec(Bᵀ) = vec(B)`
/// for every `m × n` matrix `B`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Commutation {
    pub m: usize,
    pub n: usize,
    /// `(K x)[k] = x[perm[k]]`.
    perm: Vec<usize>,
}

pub fn commutation_matrix(m: usize, n: usize) -> Commutation {
    let mut perm = vec![0; m * n];
    for j in 0..n {
        for i in 0..m {
            perm[i + m * j] = j + n * i;
        }
    }
    Commutation { m, n, perm }
}

impl Commutation {
    pub fn size(&self) -> usize {
        self.m * self.n
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    pub fn apply(&self, x: &Vector) -> Vector {
        Vector::from_iterator(self.size(), self.perm.iter().map(|&k| x[k]))
    }

    /// Left-multiplies the rows of `x` by `K_{m,n}`.
    pub fn apply_rows(&self, x: &Mat) -> Mat {
        Mat::from_fn(self.size(), x.ncols(), |i, j| x[(self.perm[i], j)])
    }

    pub fn to_dense(&self) -> Mat {
        let s = self.size();
        let mut k = Mat::zeros(s, s);
        for (row, &col) in self.perm.iter().enumerate() {
            k[(row, col)] = 1.0;
        }
        k
    }
}

/// A `p × p` matrix viewed as a `p2 × p2` grid of `p1 × p1` blocks.
#[derive(Debug, Clone)]
pub struct BlockPartition {
    dims: Dims,
    blocks: Vec<Mat>,
}

impl BlockPartition {
    pub fn new(m: &Mat, dims: Dims) -> Result<Self> {
        dims.check_square(m, "matrix")?;
        let (p1, p2) = (dims.p1, dims.p2);
        let mut blocks = Vec::with_capacity(p2 * p2);
        for j in 0..p2 {
            for i in 0..p2 {
                blocks.push(m.view((i * p1, j * p1), (p1, p1)).into_owned());
            }
        }
        Ok(BlockPartition { dims, blocks })
    }

    /// Block `M_[i,j]`, zero-based.
    pub fn block(&self, i: usize, j: usize) -> &Mat {
        &self.blocks[i + self.dims.p2 * j]
    }

    pub fn reassemble(&self) -> Mat {
        let (p1, p2) = (self.dims.p1, self.dims.p2);
        let mut m = Mat::zeros(p1 * p2, p1 * p2);
        for j in 0..p2 {
            for i in 0..p2 {
                m.view_mut((i * p1, j * p1), (p1, p1))
                    .copy_from(self.block(i, j));
            }
        }
        m
    }
}

/// `tr_1(M) = Σ_i M_[i,i]`, a `p1 × p1` matrix.
pub fn partial_trace_1(m: &Mat, dims: Dims) -> Result<Mat> {
    dims.check_square(m, "partial trace input")?;
    let p1 = dims.p1;
    let mut out = Mat::zeros(p1, p1);
    for i in 0..dims.p2 {
        out += m.view((i * p1, i * p1), (p1, p1));
    }
    Ok(out)
}

/// `tr_2(M)_{ij} = trace(M_[i,j])`, a `p2 × p2` matrix.
pub fn partial_trace_2(m: &Mat, dims: Dims) -> Result<Mat> {
    dims.check_square(m, "partial trace input")?;
    let (p1, p2) = (dims.p1, dims.p2);
    Ok(Mat::from_fn(p2, p2, |i, j| {
        (0..p1).map(|k| m[(i * p1 + k, j * p1 + k)]).sum()
    }))
}

fn check_square_any(m: &Mat) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

pub fn sym(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn skew(m: &Mat) -> Mat {
    (m - m.transpose()) * 0.5
}

/// Strictly lower-triangular part `⌊M⌋`.
pub fn strict_lower(m: &Mat) -> Mat {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| if i > j { m[(i, j)] } else { 0.0 })
}

/// Diagonal part `D(M)` as a square matrix.
pub fn diag_part(m: &Mat) -> Mat {
    Mat::from_diagonal(&m.diagonal())
}

/// `⌊M⌋ + D(M)/2`.
pub fn half(m: &Mat) -> Result<Mat> {
    check_square_any(m)?;
    Ok(Mat::from_fn(m.nrows(), m.ncols(), |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Greater => m[(i, j)],
        std::cmp::Ordering::Equal => 0.5 * m[(i, j)],
        std::cmp::Ordering::Less => 0.0,
    }))
}

/// `⌊M⌋ + D(M)`.
pub fn lower(m: &Mat) -> Result<Mat> {
    check_square_any(m)?;
    Ok(m.lower_triangle())
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// descending order. Returns `(eigenvalues, eigenvectors)`.
pub fn sym_eigen_desc(m: &Mat) -> (Vector, Mat) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(sym(m));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = Vector::from_iterator(n, idx.iter().map(|&k| eig.eigenvalues[k]));
    let mut vecs = Mat::zeros(n, n);
    for (dst, &src) in idx.iter().enumerate() {
        vecs.set_column(dst, &eig.eigenvectors.column(src));
    }
    (vals, vecs)
}

/// Applies `f` to the spectrum of a symmetric matrix.
pub fn sym_apply(m: &Mat, f: impl Fn(f64) -> f64) -> Mat {
    let eig = SymmetricEigen::new(sym(m));
    let d = eig.eigenvalues.map(f);
    let v = &eig.eigenvectors;
    sym(&(v * Mat::from_diagonal(&d) * v.transpose()))
}

/// Errors unless `m` is symmetric positive definite under [`PD_REL_TOL`].
pub fn check_pd(m: &Mat) -> Result<()> {
    check_square_any(m)?;
    let eig = SymmetricEigen::new(sym(m));
    let max_eig = eig.eigenvalues.max();
    let min_eig = eig.eigenvalues.min();
    if !(min_eig > PD_REL_TOL * max_eig.abs()) || !min_eig.is_finite() || max_eig <= 0.0 {
        return Err(Error::NotPositiveDefinite { min_eig, max_eig });
    }
    Ok(())
}

fn spd_eigen(m: &Mat) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    check_square_any(m)?;
    let eig = SymmetricEigen::new(sym(m));
    let max_eig = eig.eigenvalues.max();
    let min_eig = eig.eigenvalues.min();
    if !(min_eig > PD_REL_TOL * max_eig.abs()) || max_eig <= 0.0 {
        return Err(Error::NotPositiveDefinite { min_eig, max_eig });
    }
    Ok(eig)
}

/// Symmetric positive definite square root.
pub fn sym_sqrt(m: &Mat) -> Result<Mat> {
    let eig = spd_eigen(m)?;
    let d = eig.eigenvalues.map(f64::sqrt);
    let v = &eig.eigenvectors;
    Ok(sym(&(v * Mat::from_diagonal(&d) * v.transpose())))
}

/// Inverse of the symmetric square root.
pub fn sym_inv_sqrt(m: &Mat) -> Result<Mat> {
    let eig = spd_eigen(m)?;
    let d = eig.eigenvalues.map(|x| 1.0 / x.sqrt());
    let v = &eig.eigenvectors;
    Ok(sym(&(v * Mat::from_diagonal(&d) * v.transpose())))
}

/// Lower-triangular Cholesky factor with positive diagonal.
pub fn chol(m: &Mat) -> Result<Mat> {
    check_pd(m)?;
    let c = nalgebra::Cholesky::new(sym(m)).ok_or_else(|| {
        let eig = SymmetricEigen::new(sym(m));
        Error::NotPositiveDefinite {
            min_eig: eig.eigenvalues.min(),
            max_eig: eig.eigenvalues.max(),
        }
    })?;
    Ok(c.unpack())
}

/// Inverse of a symmetric positive definite matrix, symmetrized.
pub fn spd_inverse(m: &Mat) -> Result<Mat> {
    let l = chol(m)?;
    let linv = lower_inverse(&l);
    Ok(sym(&(linv.transpose() * linv)))
}

/// Inverse of a lower-triangular matrix with non-zero diagonal.
pub fn lower_inverse(l: &Mat) -> Mat {
    let n = l.nrows();
    let mut inv = Mat::identity(n, n);
    l.solve_lower_triangular_mut(&mut inv);
    inv.lower_triangle()
}

/// General inverse via LU.
pub fn inverse(m: &Mat) -> Result<Mat> {
    check_square_any(m)?;
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::NumericalRank("matrix is singular".into()))
}

/// `log det` of an SPD matrix.
pub fn log_det_spd(m: &Mat) -> Result<f64> {
    let l = chol(m)?;
    Ok(2.0 * l.diagonal().iter().map(|x| x.ln()).sum::<f64>())
}

/// Largest singular value.
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.nrows() == m.ncols() && (m - m.transpose()).amax() <= 1e-14 * m.amax().max(1.0) {
        let eig = SymmetricEigen::new(sym(m));
        return eig.eigenvalues.amax();
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Frobenius inner product `tr(AᵀB)`.
pub fn inner(a: &Mat, b: &Mat) -> f64 {
    a.dot(b)
}

pub fn binom2(n: usize) -> usize {
    n * (n.saturating_sub(1)) / 2
}

/// Orthonormal (Frobenius) basis of the symmetric `q × q` matrices.
pub fn sym_basis(q: usize) -> Vec<Mat> {
    let mut out = Vec::with_capacity(q * (q + 1) / 2);
    for j in 0..q {
        for i in j..q {
            let mut e = Mat::zeros(q, q);
            if i == j {
                e[(i, i)] = 1.0;
            } else {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                e[(i, j)] = s;
                e[(j, i)] = s;
            }
            out.push(e);
        }
    }
    out
}

/// Orthonormal basis of `{c ∈ R^q : Σ c = 0}` (Helmert contrasts).
pub fn zero_sum_basis(q: usize) -> Vec<Vector> {
    (1..q)
        .map(|k| {
            let norm = ((k * (k + 1)) as f64).sqrt();
            Vector::from_fn(q, |i, _| {
                if i < k {
                    1.0 / norm
                } else if i == k {
                    -(k as f64) / norm
                } else {
                    0.0
                }
            })
        })
        .collect()
}

/// Orthonormal (Frobenius) basis of the traceless symmetric `q × q` matrices.
pub fn traceless_sym_basis(q: usize) -> Vec<Mat> {
    let mut out: Vec<Mat> = zero_sum_basis(q)
        .into_iter()
        .map(|c| Mat::from_diagonal(&c))
        .collect();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for j in 0..q {
        for i in (j + 1)..q {
            let mut e = Mat::zeros(q, q);
            e[(i, j)] = s;
            e[(j, i)] = s;
            out.push(e);
        }
    }
    out
}

/// Orthonormal basis of the null space of `m` (right singular vectors with
/// singular value at most `rel_tol · σ_max`).
pub fn null_space(m: &Mat, rel_tol: f64) -> Mat {
    let ncols = m.ncols();
    // Pad to at least square so the SVD exposes a full set of right singular vectors.
    let padded = if m.nrows() < ncols {
        let mut p = Mat::zeros(ncols, ncols);
        p.view_mut((0, 0), (m.nrows(), ncols)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.max();
    let cols: Vec<Vector> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= rel_tol * smax)
        .map(|(k, _)| vt.row(k).transpose())
        .collect();
    if cols.is_empty() {
        return Mat::zeros(ncols, 0);
    }
    Mat::from_columns(&cols)
}

/// Moore–Penrose pseudoinverse with singular values below `rel_tol · σ_max` dropped.
/// Also returns the retained rank.
pub fn pinv(m: &Mat, rel_tol: f64) -> (Mat, usize) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let vt = svd.v_t.as_ref().expect("requested V^T");
    let smax = svd.singular_values.max();
    let mut out = Mat::zeros(m.ncols(), m.nrows());
    let mut rank = 0;
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > rel_tol * smax && s > 0.0 {
            rank += 1;
            out += vt.row(k).transpose() * u.column(k).transpose() / s;
        }
    }
    (out, rank)
}

/// Numerical rank: number of singular values above `rel_tol · σ_max`.
pub fn numerical_rank(m: &Mat, rel_tol: f64) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.max();
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn rand_mat(rng: &mut ChaCha20Rng, r: usize, c: usize) -> Mat {
        Mat::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn rand_spd(rng: &mut ChaCha20Rng, q: usize) -> Mat {
        let x = rand_mat(rng, q, q);
        &x * x.transpose() + Mat::identity(q, q) * 0.5
    }

    #[test]
    fn vec_column_stacks() {
        let m = Mat::from_row_slice(2, 2, &[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(vec(&m).as_slice(), &[1.0, 2.0, 3.0, 4.0]);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let m = rand_mat(&mut rng, 3, 2);
        assert_eq!(mat(&vec(&m), 3, 2).unwrap(), m);
        assert!(mat(&vec(&m), 2, 2).is_err());
    }

    #[test]
    fn vec_kron_identity() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let (a, b, x) = (
            rand_mat(&mut rng, 2, 2),
            rand_mat(&mut rng, 2, 2),
            rand_mat(&mut rng, 2, 2),
        );
        let lhs = vec(&(&b * &x * a.transpose()));
        // direct multiplication oracle, element by element
        let mut rhs = Vector::zeros(4);
        for (col, xv) in vec(&x).iter().enumerate() {
            let (xi, xj) = (col % 2, col / 2);
            for row in 0..4 {
                let (i, j) = (row % 2, row / 2);
                rhs[row] += b[(i, xi)] * a[(j, xj)] * xv;
            }
        }
        assert_relative_eq!(lhs, rhs, epsilon = 1e-14);
        assert_relative_eq!(kron(&a, &b) * vec(&x), lhs, epsilon = 1e-14);
    }

    #[test]
    fn kron_examples() {
        assert_eq!(kron(&Mat::identity(2, 2), &Mat::identity(3, 3)), Mat::identity(6, 6));
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let a = rand_mat(&mut rng, 3, 2);
        assert_eq!(kron(&Mat::from_element(1, 1, 2.0), &a), &a * 2.0);
        let (b, a, d, c) = (
            rand_mat(&mut rng, 2, 2),
            rand_mat(&mut rng, 2, 2),
            rand_mat(&mut rng, 2, 2),
            rand_mat(&mut rng, 2, 2),
        );
        assert_relative_eq!(
            kron(&b, &a) * kron(&d, &c),
            kron(&(&b * &d), &(&a * &c)),
            epsilon = 1e-13
        );
    }

    #[test]
    fn commutation_examples() {
        let k = commutation_matrix(2, 2);
        let x = Vector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(k.apply(&x).as_slice(), &[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(commutation_matrix(1, 5).to_dense(), Mat::identity(5, 5));

        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let b = rand_mat(&mut rng, 2, 3);
        let k23 = commutation_matrix(2, 3);
        assert_eq!(k23.apply(&vec(&b.transpose())), vec(&b));
        assert_eq!(k23.to_dense() * vec(&b.transpose()), vec(&b));
        // orthogonality
        let k32 = commutation_matrix(3, 2);
        assert_eq!(k23.to_dense() * k32.to_dense(), Mat::identity(6, 6));
        let dense = k23.to_dense();
        for i in 0..6 {
            assert_eq!(dense.row(i).sum(), 1.0);
            assert_eq!(dense.column(i).sum(), 1.0);
        }
    }

    #[test]
    fn partial_traces() {
        let d = Dims::new(2, 3).unwrap();
        let id = Mat::identity(6, 6);
        assert_eq!(partial_trace_1(&id, d).unwrap(), Mat::identity(2, 2) * 3.0);
        assert_eq!(partial_trace_2(&id, d).unwrap(), Mat::identity(3, 3) * 2.0);

        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let a = rand_spd(&mut rng, 2);
        let b = rand_spd(&mut rng, 3);
        let m = kron(&b, &a);
        // block-sum oracle straight from the definition
        let mut t1 = Mat::zeros(2, 2);
        let mut t2 = Mat::zeros(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                let blk = m.view((i * 2, j * 2), (2, 2));
                if i == j {
                    t1 += blk;
                }
                t2[(i, j)] = blk.trace();
            }
        }
        assert_relative_eq!(partial_trace_1(&m, d).unwrap(), t1, epsilon = 1e-13);
        assert_relative_eq!(partial_trace_2(&m, d).unwrap(), t2, epsilon = 1e-13);
        assert_relative_eq!(t1, &a * b.trace(), epsilon = 1e-12);
        assert_relative_eq!(t2, &b * a.trace(), epsilon = 1e-12);

        let wrong = Mat::identity(5, 5);
        assert!(partial_trace_1(&wrong, d).is_err());
    }

    #[test]
    fn partial_trace_kron_identity_factors() {
        let d = Dims::new(2, 3).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let u1 = sym(&rand_mat(&mut rng, 2, 2));
        let u2 = sym(&rand_mat(&mut rng, 3, 3));
        let a = kron(&Mat::identity(3, 3), &u1);
        assert_relative_eq!(partial_trace_1(&a, d).unwrap(), &u1 * 3.0, epsilon = 1e-13);
        let b = kron(&u2, &Mat::identity(2, 2));
        assert_relative_eq!(partial_trace_2(&b, d).unwrap(), &u2 * 2.0, epsilon = 1e-13);
        // tr(C (B ⊗ I)) = tr(tr_2(sym C) B)
        let c = rand_mat(&mut rng, 6, 6);
        let lhs = (&c * &b).trace();
        let rhs = (partial_trace_2(&sym(&c), d).unwrap() * &u2).trace();
        assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
    }

    #[test]
    fn block_partition_round_trip() {
        let d = Dims::new(2, 3).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let m = rand_spd(&mut rng, 6);
        let bp = BlockPartition::new(&m, d).unwrap();
        assert_eq!(bp.reassemble(), m);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(bp.block(i, j), &bp.block(j, i).transpose());
            }
        }
        let a = rand_mat(&mut rng, 2, 2);
        let b = rand_mat(&mut rng, 3, 3);
        let bp = BlockPartition::new(&kron(&b, &a), d).unwrap();
        assert_relative_eq!(bp.block(2, 1).clone(), &a * b[(2, 1)], epsilon = 1e-14);
    }

    #[test]
    fn triangular_operators() {
        assert_eq!(half(&(Mat::identity(3, 3) * 2.0)).unwrap(), Mat::identity(3, 3));
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let a = rand_mat(&mut rng, 4, 4);
        assert_relative_eq!(sym(&a) + skew(&a), a, epsilon = 1e-15);
        let s = sym(&rand_mat(&mut rng, 3, 3));
        let h = half(&s).unwrap();
        assert_relative_eq!(&h + h.transpose(), s, epsilon = 1e-15);
        for i in 0..3 {
            for j in (i + 1)..3 {
                assert_eq!(h[(i, j)], 0.0);
            }
        }
        let l = lower(&a).unwrap();
        assert_eq!(l, a.lower_triangle());
        assert!(half(&rand_mat(&mut rng, 2, 3)).is_err());
    }

    #[test]
    fn roots() {
        let i4 = Mat::identity(4, 4);
        assert_relative_eq!(sym_sqrt(&i4).unwrap(), i4, epsilon = 1e-15);
        assert_relative_eq!(chol(&i4).unwrap(), i4, epsilon = 1e-15);
        assert_relative_eq!(
            sym_sqrt(&(Mat::identity(2, 2) * 4.0)).unwrap(),
            Mat::identity(2, 2) * 2.0,
            epsilon = 1e-14
        );
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let s = rand_spd(&mut rng, 5);
        let l = chol(&s).unwrap();
        assert!((&l * l.transpose() - &s).norm() <= 1e-10 * s.norm());
        assert!(l.diagonal().iter().all(|&x| x > 0.0));
        let r = sym_sqrt(&s).unwrap();
        assert!((&r * &r - &s).norm() <= 1e-10 * s.norm());
        assert_eq!(r, r.transpose());

        let mut sing = Mat::identity(3, 3);
        sing[(2, 2)] = 0.0;
        assert!(matches!(chol(&sing), Err(Error::NotPositiveDefinite { .. })));
        assert!(matches!(sym_sqrt(&sing), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn null_space_and_pinv() {
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let m = rand_mat(&mut rng, 3, 5);
        let n = null_space(&m, 1e-10);
        assert_eq!(n.ncols(), 2);
        assert!((&m * &n).amax() < 1e-12);
        let (pi, rank) = pinv(&m, 1e-10);
        assert_eq!(rank, 3);
        assert_relative_eq!(&m * &pi * &m, m, epsilon = 1e-12);
    }

    #[test]
    fn traceless_basis_is_orthonormal() {
        let b = traceless_sym_basis(4);
        assert_eq!(b.len(), 9);
        for (i, x) in b.iter().enumerate() {
            assert!(x.trace().abs() < 1e-15);
            for (j, y) in b.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((inner(x, y) - expect).abs() < 1e-14);
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn partial_traces_preserve_trace(seed in 0u64..500, p1 in 2usize..5, p2 in 2usize..5) {
            let d = Dims::new(p1, p2).unwrap();
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let m = sym(&rand_mat(&mut rng, d.p(), d.p()));
            let t = m.trace();
            let t1 = partial_trace_1(&m, d).unwrap().trace();
            let t2 = partial_trace_2(&m, d).unwrap().trace();
            let scale = m.abs().sum().max(1.0);
            proptest::prop_assert!((t1 - t).abs() <= 1e-12 * scale);
            proptest::prop_assert!((t2 - t).abs() <= 1e-12 * scale);
        }

        #[test]
        fn half_is_linear(seed in 0u64..500) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let a = rand_mat(&mut rng, 4, 4);
            let b = rand_mat(&mut rng, 4, 4);
            let c: f64 = rng.random_range(-2.0..2.0);
            let lhs = half(&(&a * c + &b)).unwrap();
            let rhs = half(&a).unwrap() * c + half(&b).unwrap();
            proptest::prop_assert!((lhs - rhs).amax() < 1e-14);
        }
    }
}
