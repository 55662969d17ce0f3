//! Dense symmetric kernels shared by every other module.
//!
//! The eigensolver is the classic two-phase scheme: Householder reduction to
//! tridiagonal form followed by the implicit-shift QL iteration. Output is
//! deterministic: eigenvalues ascending, each eigenvector oriented so that its
//! largest-magnitude entry is positive.

use nalgebra::{DMatrix, DVector};

use crate::error::{CqrError, Result};

/// Default relative threshold for numerical rank and nullspace decisions.
pub const DEFAULT_TOL_NULL: f64 = 1e-8;

/// Relative asymmetry tolerated on input to the symmetric routines.
const SYMMETRY_TOL: f64 = 1e-12;

/// Full spectral decomposition `A = V diag(values) Vᵀ`.
#[derive(Debug, Clone)]
pub struct EigenDecomp {
    /// Eigenvalues, ascending.
    pub values: DVector<f64>,
    /// Orthonormal eigenvectors stored as columns.
    pub vectors: DMatrix<f64>,
}

impl EigenDecomp {
    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Rebuilds `V diag(values) Vᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let scaled = &self.vectors * DMatrix::from_diagonal(&self.values);
        &scaled * self.vectors.transpose()
    }
}

/// Orthonormal basis of a right nullspace.
#[derive(Debug, Clone)]
pub struct NullspaceBasis {
    pub basis: DMatrix<f64>,
    /// Numerical rank of the input matrix.
    pub rank: usize,
}

impl NullspaceBasis {
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }
}

/// Failed Cholesky factorization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NotPositiveDefinite {
    /// Zero-based index of the first nonpositive pivot.
    pub index: usize,
    pub pivot: f64,
}

/// Linear system with no solution at the requested tolerance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inconsistent {
    pub residual: f64,
}

pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

pub fn check_symmetric(a: &DMatrix<f64>) -> Result<()> {
    if !a.is_square() {
        return Err(CqrError::InvalidInput(format!(
            "expected a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let n = a.nrows();
    let scale = max_abs(a).max(1.0);
    for j in 0..n {
        for i in (j + 1)..n {
            if (a[(i, j)] - a[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(CqrError::InvalidInput(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(CqrError::InvalidInput("matrix has non-finite entries".into()));
    }
    Ok(())
}

/// `(A + Aᵀ) / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub fn sym_eigen(a: &DMatrix<f64>) -> Result<EigenDecomp> {
    check_symmetric(a)?;
    let n = a.nrows();
    if n == 0 {
        return Ok(EigenDecomp {
            values: DVector::zeros(0),
            vectors: DMatrix::zeros(0, 0),
        });
    }
    let mut work = Tridiagonal::reduce(a, true);
    let cols = work.ql(true)?;
    let cols = cols.expect("vectors requested");

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| work.d[i].total_cmp(&work.d[j]).then(i.cmp(&j)));

    let values = DVector::from_iterator(n, order.iter().map(|&i| work.d[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (out, &src) in order.iter().enumerate() {
        let col = &cols[src * n..(src + 1) * n];
        let mut pivot = 0;
        for k in 1..n {
            if col[k].abs() > col[pivot].abs() {
                pivot = k;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for k in 0..n {
            vectors[(k, out)] = sign * col[k];
        }
    }
    Ok(EigenDecomp { values, vectors })
}

/// Eigenvalues only, ascending. Skips eigenvector accumulation.
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_symmetric(a)?;
    let n = a.nrows();
    if n == 0 {
        return Ok(DVector::zeros(0));
    }
    let mut work = Tridiagonal::reduce(a, false);
    work.ql(false)?;
    let mut d = work.d;
    d.sort_by(|x, y| x.total_cmp(y));
    Ok(DVector::from_vec(d))
}

pub fn min_psd_eig(a: &DMatrix<f64>) -> Result<f64> {
    if a.nrows() == 0 {
        return Ok(f64::INFINITY);
    }
    Ok(sym_eigenvalues(a)?[0])
}

/// Lower-triangular `L` with `L Lᵀ = A`, or the first failing pivot.
pub fn cholesky(a: &DMatrix<f64>) -> std::result::Result<DMatrix<f64>, NotPositiveDefinite> {
    let n = a.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > 0.0) {
            return Err(NotPositiveDefinite { index: j, pivot: diag });
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut v = a[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / ljj;
        }
    }
    Ok(l)
}

/// Thresholded singular value decomposition giving the full right singular basis.
struct FullSvd {
    singular: Vec<f64>,
    u: DMatrix<f64>,
    v: DMatrix<f64>,
}

fn full_svd(a: &DMatrix<f64>) -> FullSvd {
    let (m, n) = a.shape();
    // nalgebra returns a thin factorization; pad wide inputs with zero rows
    // so that every right singular vector is produced.
    let padded = if m < n {
        let mut p = DMatrix::zeros(n, n);
        p.view_mut((0, 0), (m, n)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = padded.svd(true, true);
    let u = svd.u.expect("u requested");
    let v = svd.v_t.expect("v_t requested").transpose();
    FullSvd {
        singular: svd.singular_values.iter().copied().collect(),
        u: u.rows(0, m).into_owned(),
        v,
    }
}

pub fn nullspace(a: &DMatrix<f64>, tol_null: f64) -> NullspaceBasis {
    let (m, n) = a.shape();
    if n == 0 {
        return NullspaceBasis { basis: DMatrix::zeros(0, 0), rank: 0 };
    }
    if m == 0 {
        return NullspaceBasis { basis: DMatrix::identity(n, n), rank: 0 };
    }
    let svd = full_svd(a);
    let smax = svd.singular.iter().fold(0.0_f64, |x, &y| x.max(y));
    let threshold = tol_null * smax;
    let mut keep = Vec::new();
    let mut rank = 0;
    for (i, &s) in svd.singular.iter().enumerate() {
        if smax > 0.0 && s > threshold {
            rank += 1;
        } else {
            keep.push(i);
        }
    }
    // When the padded square has more columns than singular values reported
    // (never for square input) the loop above already covers every column.
    let mut basis = DMatrix::zeros(n, keep.len());
    for (out, &i) in keep.iter().enumerate() {
        let mut col = svd.v.column(i).into_owned();
        orient(&mut col);
        basis.set_column(out, &col);
    }
    NullspaceBasis { basis, rank }
}

/// Minimum-norm least-squares solution with singular values below
/// `tol_null * sigma_max` treated as zero. Returns the solution and the
/// residual norm `‖Ax - b‖`.
pub fn pseudo_solve(a: &DMatrix<f64>, b: &DVector<f64>, tol_null: f64) -> (DVector<f64>, f64) {
    let (m, n) = a.shape();
    assert_eq!(b.len(), m, "right-hand side length");
    if n == 0 {
        return (DVector::zeros(0), b.norm());
    }
    if m == 0 {
        return (DVector::zeros(n), 0.0);
    }
    let svd = full_svd(a);
    let smax = svd.singular.iter().fold(0.0_f64, |x, &y| x.max(y));
    let mut x = DVector::zeros(n);
    for (i, &s) in svd.singular.iter().enumerate() {
        if smax > 0.0 && s > tol_null * smax && i < svd.u.ncols() {
            let coef = svd.u.column(i).dot(b) / s;
            x.axpy(coef, &svd.v.column(i), 1.0);
        }
    }
    let residual = (a * &x - b).norm();
    (x, residual)
}

pub fn min_norm_solve(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    tol_null: f64,
) -> std::result::Result<DVector<f64>, Inconsistent> {
    let (x, residual) = pseudo_solve(a, b, tol_null);
    let scale = a.norm() * x.norm() + b.norm();
    if residual <= tol_null * scale.max(f64::MIN_POSITIVE) || residual == 0.0 {
        Ok(x)
    } else {
        Err(Inconsistent { residual })
    }
}

/// Flips `v` so that its largest-magnitude entry is positive.
pub fn orient(v: &mut DVector<f64>) {
    if v.is_empty() {
        return;
    }
    let mut pivot = 0;
    for k in 1..v.len() {
        if v[k].abs() > v[pivot].abs() {
            pivot = k;
        }
    }
    if v[pivot] < 0.0 {
        v.neg_mut();
    }
}

/// Working storage for the Householder / QL eigensolver.
///
/// `v` is row-major during the reduction; the QL phase works on the
/// transpose so that the Givens rotations touch contiguous memory.
struct Tridiagonal {
    n: usize,
    d: Vec<f64>,
    e: Vec<f64>,
    v: Vec<f64>,
}

impl Tridiagonal {
    fn reduce(a: &DMatrix<f64>, vectors: bool) -> Self {
        let n = a.nrows();
        let mut v = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                v[i * n + j] = 0.5 * (a[(i, j)] + a[(j, i)]);
            }
        }
        let mut d = vec![0.0; n];
        let mut e = vec![0.0; n];
        let at = |i: usize, j: usize| i * n + j;

        for j in 0..n {
            d[j] = v[at(n - 1, j)];
        }
        for i in (1..n).rev() {
            let mut scale = 0.0;
            let mut h = 0.0;
            for x in &d[..i] {
                scale += x.abs();
            }
            if scale == 0.0 {
                e[i] = d[i - 1];
                for j in 0..i {
                    d[j] = v[at(i - 1, j)];
                    v[at(i, j)] = 0.0;
                    v[at(j, i)] = 0.0;
                }
            } else {
                for x in &mut d[..i] {
                    *x /= scale;
                    h += *x * *x;
                }
                let mut f = d[i - 1];
                let mut g = h.sqrt();
                if f > 0.0 {
                    g = -g;
                }
                e[i] = scale * g;
                h -= f * g;
                d[i - 1] = f - g;
                for ej in e.iter_mut().take(i) {
                    *ej = 0.0;
                }
                for j in 0..i {
                    f = d[j];
                    v[at(j, i)] = f;
                    g = e[j] + v[at(j, j)] * f;
                    for k in (j + 1)..i {
                        g += v[at(k, j)] * d[k];
                        e[k] += v[at(k, j)] * f;
                    }
                    e[j] = g;
                }
                f = 0.0;
                for j in 0..i {
                    e[j] /= h;
                    f += e[j] * d[j];
                }
                let hh = f / (h + h);
                for j in 0..i {
                    e[j] -= hh * d[j];
                }
                for j in 0..i {
                    f = d[j];
                    g = e[j];
                    for k in j..i {
                        v[at(k, j)] -= f * e[k] + g * d[k];
                    }
                    d[j] = v[at(i - 1, j)];
                    v[at(i, j)] = 0.0;
                }
            }
            d[i] = h;
        }

        if vectors {
            for i in 0..n.saturating_sub(1) {
                v[at(n - 1, i)] = v[at(i, i)];
                v[at(i, i)] = 1.0;
                let h = d[i + 1];
                if h != 0.0 {
                    for k in 0..=i {
                        d[k] = v[at(k, i + 1)] / h;
                    }
                    for j in 0..=i {
                        let mut g = 0.0;
                        for k in 0..=i {
                            g += v[at(k, i + 1)] * v[at(k, j)];
                        }
                        for k in 0..=i {
                            v[at(k, j)] -= g * d[k];
                        }
                    }
                }
                for k in 0..=i {
                    v[at(k, i + 1)] = 0.0;
                }
            }
            for j in 0..n {
                d[j] = v[at(n - 1, j)];
                v[at(n - 1, j)] = 0.0;
            }
            v[at(n - 1, n - 1)] = 1.0;
        } else {
            // Without accumulation the tridiagonal diagonal sits on the
            // diagonal of the work array.
            for j in 0..n {
                d[j] = v[at(j, j)];
            }
        }
        e[0] = 0.0;
        Tridiagonal { n, d, e, v }
    }

    /// Implicit QL on the tridiagonal `(d, e)`. When `vectors` is set the
    /// eigenvectors are returned column-contiguous (column `i` occupies
    /// `[i*n, (i+1)*n)`).
    fn ql(&mut self, vectors: bool) -> Result<Option<Vec<f64>>> {
        let n = self.n;
        let d = &mut self.d;
        let e = &mut self.e;
        let mut w = if vectors {
            let mut w = vec![0.0; n * n];
            for k in 0..n {
                for i in 0..n {
                    w[i * n + k] = self.v[k * n + i];
                }
            }
            Some(w)
        } else {
            None
        };

        for i in 1..n {
            e[i - 1] = e[i];
        }
        e[n - 1] = 0.0;

        let cap = 30 * n.max(1);
        let mut sweeps = 0usize;
        let mut f = 0.0;
        let mut tst1 = 0.0_f64;
        let eps = f64::EPSILON;
        for l in 0..n {
            tst1 = tst1.max(d[l].abs() + e[l].abs());
            let mut m = l;
            while m < n {
                if e[m].abs() <= eps * tst1 {
                    break;
                }
                m += 1;
            }
            if m > l {
                loop {
                    sweeps += 1;
                    if sweeps > cap {
                        return Err(CqrError::NoConvergence { sweeps: cap });
                    }
                    let mut g = d[l];
                    let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                    let mut r = p.hypot(1.0);
                    if p < 0.0 {
                        r = -r;
                    }
                    d[l] = e[l] / (p + r);
                    d[l + 1] = e[l] * (p + r);
                    let dl1 = d[l + 1];
                    let mut h = g - d[l];
                    for di in d.iter_mut().take(n).skip(l + 2) {
                        *di -= h;
                    }
                    f += h;

                    p = d[m];
                    let mut c = 1.0;
                    let mut c2 = c;
                    let mut c3 = c;
                    let el1 = e[l + 1];
                    let mut s = 0.0;
                    let mut s2 = 0.0;
                    for i in (l..m).rev() {
                        c3 = c2;
                        c2 = c;
                        s2 = s;
                        g = c * e[i];
                        h = c * p;
                        r = p.hypot(e[i]);
                        e[i + 1] = s * r;
                        s = e[i] / r;
                        c = p / r;
                        p = c * d[i] - s * g;
                        d[i + 1] = h + s * (c * g + s * d[i]);
                        if let Some(w) = w.as_mut() {
                            let (lo, hi) = w.split_at_mut((i + 1) * n);
                            let col_i = &mut lo[i * n..];
                            let col_next = &mut hi[..n];
                            for k in 0..n {
                                let hk = col_next[k];
                                col_next[k] = s * col_i[k] + c * hk;
                                col_i[k] = c * col_i[k] - s * hk;
                            }
                        }
                    }
                    p = -s * s2 * c3 * el1 * e[l] / dl1;
                    e[l] = s * p;
                    d[l] = c * p;
                    if e[l].abs() <= eps * tst1 {
                        break;
                    }
                }
            }
            d[l] += f;
            e[l] = 0.0;
        }
        Ok(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn random_symmetric(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        symmetrize(&a)
    }

    #[test]
    fn identity_eigenvalues() {
        let e = sym_eigen(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(e.values.as_slice(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn diagonal_eigenpairs_are_permuted_identity() {
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -1.0]);
        let e = sym_eigen(&a).unwrap();
        assert_eq!(e.values.as_slice(), &[-1.0, 3.0]);
        assert_relative_eq!(e.vectors, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
    }

    #[test]
    fn random_reconstruction_and_orthonormality() {
        for &(n, seed) in &[(20usize, 1u64), (50, 2), (7, 3), (1, 4)] {
            let a = random_symmetric(n, seed);
            let e = sym_eigen(&a).unwrap();
            let scale = max_abs(&a).max(1.0);
            let resid = &a * &e.vectors - &e.vectors * DMatrix::from_diagonal(&e.values);
            assert!(max_abs(&resid) <= 1e-10 * scale, "n={n}: {}", max_abs(&resid));
            let ortho = e.vectors.transpose() * &e.vectors - DMatrix::identity(n, n);
            assert!(max_abs(&ortho) <= 1e-12, "n={n}: {}", max_abs(&ortho));
            for w in e.values.as_slice().windows(2) {
                assert!(w[0] <= w[1]);
            }
            let vals = sym_eigenvalues(&a).unwrap();
            assert_relative_eq!(vals, e.values, epsilon = 1e-12 * scale);
        }
    }

    #[test]
    fn eigen_is_bitwise_deterministic() {
        let a = random_symmetric(15, 9);
        let e1 = sym_eigen(&a).unwrap();
        let e2 = sym_eigen(&a).unwrap();
        assert_eq!(e1.values, e2.values);
        assert_eq!(e1.vectors, e2.vectors);
    }

    #[test]
    fn eigenvector_sign_convention() {
        let e = sym_eigen(&random_symmetric(10, 5)).unwrap();
        for j in 0..10 {
            let col = e.vectors.column(j);
            let pivot = col.iamax();
            assert!(col[pivot] > 0.0);
        }
    }

    #[test]
    fn rejects_nonsymmetric() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(sym_eigen(&a), Err(CqrError::InvalidInput(_))));
    }

    #[test]
    fn cholesky_examples() {
        assert_eq!(cholesky(&DMatrix::identity(3, 3)).unwrap(), DMatrix::identity(3, 3));
        let l = cholesky(&DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 2.0])).unwrap();
        assert_relative_eq!(l, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 1.0]));
        let err = cholesky(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).unwrap_err();
        assert_eq!(err.index, 1);
        assert!(err.pivot < 0.0);
    }

    #[test]
    fn cholesky_agrees_with_min_eig() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for trial in 0..40 {
            let n = 2 + trial % 6;
            let a = random_symmetric(n, 100 + trial as u64);
            let shift = rng.gen_range(-1.5..1.5);
            let a = a + DMatrix::identity(n, n) * shift;
            let lmin = min_psd_eig(&a).unwrap();
            let norm2 = sym_eigen(&a).unwrap().values.amax();
            if lmin.abs() <= 1e-10 * norm2 {
                continue;
            }
            assert_eq!(cholesky(&a).is_ok(), lmin > 0.0, "trial {trial}");
            if let Ok(l) = cholesky(&a) {
                assert!(max_abs(&(&l * l.transpose() - &a)) <= 1e-12 * max_abs(&a).max(1.0));
            }
        }
    }

    #[test]
    fn min_psd_eig_examples() {
        assert_eq!(min_psd_eig(&DMatrix::identity(2, 2)).unwrap(), 1.0);
        let a = DMatrix::from_row_slice(2, 2, &[-2.0, 0.0, 0.0, 5.0]);
        assert_eq!(min_psd_eig(&a).unwrap(), -2.0);
    }

    #[test]
    fn nullspace_of_zero_matrix() {
        let ns = nullspace(&DMatrix::zeros(2, 3), DEFAULT_TOL_NULL);
        assert_eq!(ns.rank, 0);
        assert_eq!(ns.basis, DMatrix::identity(3, 3));
    }

    #[test]
    fn nullspace_of_single_row() {
        let s = 1.0 / 2f64.sqrt();
        let ns = nullspace(&DMatrix::from_row_slice(1, 2, &[s, s]), DEFAULT_TOL_NULL);
        assert_eq!(ns.rank, 1);
        assert_eq!(ns.dim(), 1);
        let b = ns.basis.column(0);
        assert_relative_eq!(b[0].abs(), s, epsilon = 1e-14);
        assert_relative_eq!(b[0], -b[1], epsilon = 1e-14);
    }

    #[test]
    fn nullspace_of_constructed_rank_three() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let left = DMatrix::from_fn(5, 3, |_, _| rng.gen_range(-1.0..1.0));
        let right = DMatrix::from_fn(3, 7, |_, _| rng.gen_range(-1.0..1.0));
        let a = left * right;
        let ns = nullspace(&a, DEFAULT_TOL_NULL);
        assert_eq!(ns.rank, 3);
        assert_eq!(ns.dim(), 4);
        assert!(max_abs(&(&a * &ns.basis)) <= 1e-10);
        let gram = ns.basis.transpose() * &ns.basis - DMatrix::identity(4, 4);
        assert!(max_abs(&gram) <= 1e-12);
    }

    #[test]
    fn min_norm_solve_examples() {
        let x = min_norm_solve(&DMatrix::identity(2, 2), &DVector::from_vec(vec![1.0, 0.0]), 1e-8)
            .unwrap();
        assert_relative_eq!(x, DVector::from_vec(vec![1.0, 0.0]), epsilon = 1e-14);

        let x = min_norm_solve(
            &DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            &DVector::from_vec(vec![2.0]),
            1e-8,
        )
        .unwrap();
        assert_relative_eq!(x, DVector::from_vec(vec![1.0, 1.0]), epsilon = 1e-14);

        let err = min_norm_solve(&DMatrix::zeros(2, 2), &DVector::from_vec(vec![1.0, 0.0]), 1e-8);
        assert!(err.is_err());
    }
}
