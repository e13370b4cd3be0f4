//! Sparse and dense linear algebra: CSR storage, Jacobi-preconditioned CG,
//! dense/iterative dispatch for SPD and saddle systems, and a rank-revealing
//! solver for equality-constrained quadratic minimization.
//!
//! Everything here is sequential and deterministic; repeated solves of the
//! same system produce bitwise-identical results.

use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Dense solves are used below this dimension; larger SPD systems go to CG.
pub const DENSE_LIMIT: usize = 3000;

/// Compressed sparse row matrix. Rows hold strictly increasing column
/// indices; duplicate triplets are summed during construction.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_triplets(nrows: usize, ncols: usize, mut t: Vec<(usize, usize, f64)>) -> Self {
        t.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_count = vec![0usize; nrows];
        let mut col_idx = Vec::with_capacity(t.len());
        let mut values = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in t {
            debug_assert!(r < nrows && c < ncols);
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_count[r] += 1;
                last = Some((r, c));
            }
        }
        let mut row_ptr = vec![0usize; nrows + 1];
        for r in 0..nrows {
            row_ptr[r + 1] = row_ptr[r] + row_count[r];
        }
        SparseMatrix { nrows, ncols, row_ptr, col_idx, values }
    }

    pub fn matvec(&self, x: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(x.len(), self.ncols);
        let mut y = DVector::zeros(self.nrows);
        for r in 0..self.nrows {
            let mut s = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            y[r] = s;
        }
        y
    }

    pub fn matvec_transpose(&self, x: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(x.len(), self.nrows);
        let mut y = DVector::zeros(self.ncols);
        for r in 0..self.nrows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                y[self.col_idx[k]] += self.values[k] * x[r];
            }
        }
        y
    }

    pub fn diagonal(&self) -> DVector<f64> {
        let mut d = DVector::zeros(self.nrows.min(self.ncols));
        for r in 0..d.len() {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.col_idx[k] == r {
                    d[r] = self.values[k];
                }
            }
        }
        d
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                m[(r, self.col_idx[k])] += self.values[k];
            }
        }
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Visit every stored entry as (row, col, value).
    pub fn for_each_entry(&self, mut f: impl FnMut(usize, usize, f64)) {
        for r in 0..self.nrows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                f(r, self.col_idx[k], self.values[k]);
            }
        }
    }

    /// Max-norm symmetry defect relative to the largest entry.
    pub fn symmetry_defect(&self) -> f64 {
        let mut defect = 0.0f64;
        for r in 0..self.nrows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k];
                let mut vt = 0.0;
                for k2 in self.row_ptr[c]..self.row_ptr[c + 1] {
                    if self.col_idx[k2] == r {
                        vt = self.values[k2];
                    }
                }
                defect = defect.max((self.values[k] - vt).abs());
            }
        }
        let scale = self.max_abs();
        if scale == 0.0 {
            0.0
        } else {
            defect / scale
        }
    }

    pub fn is_symmetric(&self) -> bool {
        self.nrows == self.ncols && self.symmetry_defect() <= 1e-12
    }
}

/// Jacobi-preconditioned conjugate gradients. Returns the solution and the
/// achieved relative residual.
pub fn cg_jacobi(a: &SparseMatrix, b: &DVector<f64>, tol: f64, max_iter: usize) -> (DVector<f64>, f64) {
    let n = b.len();
    let bnorm = b.norm();
    if bnorm == 0.0 {
        return (DVector::zeros(n), 0.0);
    }
    let diag = a.diagonal();
    let minv = diag.map(|d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 });
    let mut x = DVector::zeros(n);
    let mut r = b.clone();
    let mut z = r.component_mul(&minv);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    for _ in 0..max_iter {
        let ap = a.matvec(&p);
        let alpha = rz / p.dot(&ap);
        x += alpha * &p;
        r -= alpha * &ap;
        if r.norm() <= tol * bnorm {
            break;
        }
        z = r.component_mul(&minv);
        let rz_new = r.dot(&z);
        p = &z + (rz_new / rz) * p;
        rz = rz_new;
    }
    let res = (b - a.matvec(&x)).norm() / bnorm;
    (x, res)
}

/// SPD solve: dense Cholesky below `DENSE_LIMIT`, Jacobi-CG above.
pub fn solve_spd(a: &SparseMatrix, b: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows != a.ncols || a.nrows != b.len() {
        return Err(Error::InvalidArgument("solve_spd shape mismatch".into()));
    }
    if a.nrows < DENSE_LIMIT {
        let dense = a.to_dense();
        let chol = dense
            .cholesky()
            .ok_or_else(|| Error::Solve("matrix not positive definite".into()))?;
        Ok(chol.solve(b))
    } else {
        let (x, res) = cg_jacobi(a, b, 1e-13, 20 * a.nrows);
        if res > 1e-10 {
            return Err(Error::Solve(format!("CG stalled at relative residual {res:.3e}")));
        }
        Ok(x)
    }
}

/// Saddle system  [M B^T; B 0] [x; y] = [b; g]  with M SPD, solved through
/// the Schur complement in the multiplier: (B M^-1 B^T) y = B M^-1 b - g.
/// Dense path factors M once; the iterative path nests CG solves with M
/// inside an outer CG on the Schur operator, whose residual is exactly the
/// constraint residual B x - g.
pub fn solve_saddle(
    m: &SparseMatrix,
    b_mat: &SparseMatrix,
    b: &DVector<f64>,
    g: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = m.nrows;
    let k = b_mat.nrows;
    if m.ncols != n || b_mat.ncols != n || b.len() != n || g.len() != k {
        return Err(Error::InvalidArgument("solve_saddle shape mismatch".into()));
    }
    if n < DENSE_LIMIT {
        let md = m.to_dense();
        let chol = md
            .cholesky()
            .ok_or_else(|| Error::Solve("saddle block M not positive definite".into()))?;
        let bd = b_mat.to_dense();
        let minv_bt = chol.solve(&bd.transpose());
        let schur = &bd * &minv_bt;
        let rhs = &bd * chol.solve(b) - g;
        let y = schur
            .cholesky()
            .ok_or_else(|| Error::Solve("Schur complement not positive definite".into()))?
            .solve(&rhs);
        let x = chol.solve(&(b - bd.transpose() * &y));
        Ok((x, y))
    } else {
        let inner = |rhs: &DVector<f64>| -> Result<DVector<f64>> {
            let (x, res) = cg_jacobi(m, rhs, 1e-13, 20 * n);
            if res > 1e-9 {
                return Err(Error::Solve(format!("inner CG residual {res:.3e}")));
            }
            Ok(x)
        };
        let minv_b = inner(b)?;
        let rhs = b_mat.matvec(&minv_b) - g;
        // Outer CG on the SPD Schur operator.
        let mut y = DVector::zeros(k);
        let mut r = rhs.clone();
        let rhs_norm = rhs.norm().max(1e-300);
        let mut p = r.clone();
        let mut rr = r.dot(&r);
        for _ in 0..(20 * k) {
            if r.norm() <= 1e-12 * rhs_norm {
                break;
            }
            let sp = b_mat.matvec(&inner(&b_mat.matvec_transpose(&p))?);
            let alpha = rr / p.dot(&sp);
            y += alpha * &p;
            r -= alpha * &sp;
            let rr_new = r.dot(&r);
            p = &r + (rr_new / rr) * p;
            rr = rr_new;
        }
        let x = inner(&(b - b_mat.matvec_transpose(&y)))?;
        Ok((x, y))
    }
}

/// Pivoted Cholesky of a symmetric positive semidefinite matrix. Returns
/// the permutation, the lower-trapezoidal factor (full size, rank columns
/// meaningful), and the numerical rank at the given relative pivot drop
/// tolerance.
pub fn pivoted_cholesky(s: &DMatrix<f64>, rel_tol: f64) -> (Vec<usize>, DMatrix<f64>, usize) {
    let n = s.nrows();
    let mut a = s.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let max_diag0 = (0..n).fold(0.0f64, |m, i| m.max(a[(i, i)]));
    let threshold = rel_tol * max_diag0.max(1e-300);
    let mut rank = 0;
    for j in 0..n {
        // Select the largest remaining diagonal as pivot.
        let (piv, dmax) = (j..n).map(|i| (i, a[(i, i)])).fold((j, f64::MIN), |acc, c| {
            if c.1 > acc.1 {
                c
            } else {
                acc
            }
        });
        if dmax <= threshold {
            break;
        }
        a.swap_rows(j, piv);
        a.swap_columns(j, piv);
        perm.swap(j, piv);
        let ljj = dmax.sqrt();
        a[(j, j)] = ljj;
        for i in j + 1..n {
            a[(i, j)] /= ljj;
        }
        // Update the full trailing block, not just its lower triangle: later
        // pivot swaps exchange whole rows and columns, so the block must stay
        // symmetric-valid on both sides of the diagonal.
        for c in j + 1..n {
            for i in j + 1..n {
                let delta = a[(i, j)] * a[(c, j)];
                a[(i, c)] -= delta;
            }
        }
        rank = j + 1;
    }
    let mut l = DMatrix::zeros(n, rank);
    for j in 0..rank {
        for i in j..n {
            l[(i, j)] = a[(i, j)];
        }
    }
    (perm, l, rank)
}

/// Equality-constrained quadratic minimization
///   min 1/2 x^T M x - b^T x   subject to   C x = g
/// with M symmetric positive definite and possibly redundant (but
/// consistent) constraint rows. Solved by eliminating x through a Cholesky
/// factorization of M and a rank-revealing pivoted Cholesky of the
/// constraint Schur complement C M^-1 C^T.
#[derive(Debug, Clone)]
pub struct ConstrainedQuadratic {
    pub m: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DMatrix<f64>,
    pub g: DVector<f64>,
}

/// Minimizer plus solve diagnostics. `nullspace_dim` counts dropped
/// (dependent) constraint rows; the residuals are relative.
#[derive(Debug, Clone)]
pub struct CqSolution {
    pub x: DVector<f64>,
    pub multiplier: DVector<f64>,
    pub nullspace_dim: usize,
    pub constraint_residual: f64,
    pub stationarity_residual: f64,
}

/// Relative pivot drop tolerance for dependent constraint rows. Dependent
/// rows of the constraint Schur complement show pivots at roundoff scale,
/// many orders below this threshold.
pub const CONSTRAINT_PIVOT_TOL: f64 = 1e-10;

impl ConstrainedQuadratic {
    pub fn solve(&self) -> Result<CqSolution> {
        let n = self.m.nrows();
        let k = self.c.nrows();
        if self.m.ncols() != n || self.b.len() != n || self.c.ncols() != n || self.g.len() != k {
            return Err(Error::InvalidArgument("constrained quadratic shape mismatch".into()));
        }
        let chol = self
            .m
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Solve("objective matrix not positive definite".into()))?;
        if k == 0 {
            let x = chol.solve(&self.b);
            let stat = (&self.m * &x - &self.b).norm() / (1.0 + self.b.norm());
            return Ok(CqSolution {
                x,
                multiplier: DVector::zeros(0),
                nullspace_dim: 0,
                constraint_residual: 0.0,
                stationarity_residual: stat,
            });
        }
        let minv_ct = chol.solve(&self.c.transpose());
        let schur = &self.c * &minv_ct;
        let w = &self.c * chol.solve(&self.b) - &self.g;
        let (perm, l, rank) = pivoted_cholesky(&schur, CONSTRAINT_PIVOT_TOL);
        // Solve on the independent pivot rows; consistency of the dropped
        // rows is verified through the constraint residual below.
        let mut lambda = DVector::zeros(k);
        if rank > 0 {
            let lr = l.view((0, 0), (rank, rank));
            let mut wp = DVector::zeros(rank);
            for i in 0..rank {
                wp[i] = w[perm[i]];
            }
            let z = lr.solve_lower_triangular(&wp).ok_or_else(|| Error::Solve("singular pivot block".into()))?;
            let lam_p = lr
                .transpose()
                .solve_upper_triangular(&z)
                .ok_or_else(|| Error::Solve("singular pivot block".into()))?;
            for i in 0..rank {
                lambda[perm[i]] = lam_p[i];
            }
        }
        let x = chol.solve(&(&self.b - self.c.transpose() * &lambda));
        let constraint_residual = (&self.c * &x - &self.g).norm() / (1.0 + self.g.norm());
        let stationarity_residual =
            (&self.m * &x - &self.b + self.c.transpose() * &lambda).norm() / (1.0 + self.b.norm());
        Ok(CqSolution {
            x,
            multiplier: lambda,
            nullspace_dim: k - rank,
            constraint_residual,
            stationarity_residual,
        })
    }
}

/// Orthonormal basis of the (right) null space of a dense matrix at the
/// given relative singular value tolerance. Columns of the result span
/// {x : A x = 0}.
pub fn nullspace(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let n = a.ncols();
    // Pad wide matrices with zero rows: the thin SVD of a square matrix
    // carries the complete right singular basis, so no kernel direction is
    // dropped, and padding leaves singular values untouched.
    let padded = if a.nrows() < n {
        let mut p = DMatrix::zeros(n, n);
        p.view_mut((0, 0), (a.nrows(), n)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("svd requested v_t");
    let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let tol = rel_tol * smax.max(1e-300);
    let kernel: Vec<usize> =
        (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] <= tol).collect();
    let mut out = DMatrix::zeros(n, kernel.len());
    for (j, &i) in kernel.iter().enumerate() {
        out.set_column(j, &v_t.row(i).transpose());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csr_roundtrip_and_symmetry() {
        let t = vec![(0, 0, 2.0), (0, 1, -1.0), (1, 0, -1.0), (1, 1, 2.0), (0, 1, 0.5), (1, 0, 0.5)];
        let a = SparseMatrix::from_triplets(2, 2, t);
        let d = a.to_dense();
        assert_eq!(d[(0, 1)], -0.5);
        assert!(a.is_symmetric());
        let x = DVector::from_vec(vec![1.0, 2.0]);
        let y = a.matvec(&x);
        assert!((y[0] - 1.0).abs() < 1e-15);
        assert!((y[1] - 3.5).abs() < 1e-15);
    }

    #[test]
    fn cg_matches_dense() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 40;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 4.0 + rng.gen::<f64>()));
            if i + 1 < n {
                let v = rng.gen::<f64>() - 0.5;
                t.push((i, i + 1, v));
                t.push((i + 1, i, v));
            }
        }
        let a = SparseMatrix::from_triplets(n, n, t);
        let b = DVector::from_fn(n, |i, _| (i as f64 * 0.37).sin());
        let (x, res) = cg_jacobi(&a, &b, 1e-14, 10 * n);
        assert!(res < 1e-12);
        let xd = a.to_dense().cholesky().unwrap().solve(&b);
        assert!((x - xd).norm() < 1e-10);
    }

    #[test]
    fn saddle_two_by_two_oracle() {
        // min 1/2|x|^2 - (1,0).x  s.t.  x1 + x2 = 1/3  has minimizer (2/3, -1/3).
        let m = SparseMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (1, 1, 1.0)]);
        let b_mat = SparseMatrix::from_triplets(1, 2, vec![(0, 0, 1.0), (0, 1, 1.0)]);
        let b = DVector::from_vec(vec![1.0, 0.0]);
        let g = DVector::from_vec(vec![1.0 / 3.0]);
        let (x, _) = solve_saddle(&m, &b_mat, &b, &g).unwrap();
        assert!((x[0] - 2.0 / 3.0).abs() < 1e-14);
        assert!((x[1] + 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn pivoted_cholesky_detects_rank() {
        // Rank-2 PSD matrix assembled from two independent rows.
        let c = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let s = &c * c.transpose();
        let (_, _, rank) = pivoted_cholesky(&s, 1e-10);
        assert_eq!(rank, 2);
    }

    #[test]
    fn pivoted_cholesky_survives_late_pivot_swaps() {
        // Rank-3 PSD matrix whose diagonal ordering forces pivot swaps
        // after elimination has begun; the permuted factor must still
        // reproduce the matrix and the rank must be exact.
        let b = DMatrix::from_row_slice(
            5,
            3,
            &[
                0.1, 0.0, 0.0, //
                0.0, 0.2, 0.0, //
                1.0, 1.0, 1.0, //
                0.3, -0.4, 0.5, //
                2.0, -1.0, 0.7,
            ],
        );
        let s = &b * b.transpose();
        let (perm, l, rank) = pivoted_cholesky(&s, 1e-10);
        assert_eq!(rank, 3);
        let n = 5;
        let mut ps = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                ps[(i, j)] = s[(perm[i], perm[j])];
            }
        }
        let diff = &ps - &l * l.transpose();
        assert!(diff.norm() <= 1e-12 * s.norm(), "factor error {:.3e}", diff.norm());
    }

    #[test]
    fn constrained_quadratic_with_redundant_rows() {
        // Same oracle as the saddle test, with the constraint duplicated.
        let cq = ConstrainedQuadratic {
            m: DMatrix::identity(2, 2),
            b: DVector::from_vec(vec![1.0, 0.0]),
            c: DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 1.0, 2.0, 2.0]),
            g: DVector::from_vec(vec![1.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0]),
        };
        let sol = cq.solve().unwrap();
        assert!((sol.x[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((sol.x[1] + 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(sol.nullspace_dim, 2);
        assert!(sol.constraint_residual < 1e-12);
        assert!(sol.stationarity_residual < 1e-12);
    }

    #[test]
    fn nullspace_of_rank_deficient() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0]);
        let ns = nullspace(&a, 1e-12);
        assert_eq!(ns.ncols(), 1);
        let r = &a * &ns;
        assert!(r.norm() < 1e-12);
    }
}
