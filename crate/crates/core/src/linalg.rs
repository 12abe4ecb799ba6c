//! Small dense complex linear-algebra helpers on top of nalgebra.
//!
//! Everything in the toolkit works with `DMatrix<Complex64>`, so the aliases
//! and routines here (sorted Hermitian eigendecomposition, pseudo-inverse with
//! rank/condition reporting, principal PSD square root, positive-definite
//! solves with a least-squares fallback) keep the numerical conventions in one
//! place.

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;

pub type Cx = Complex64;
pub type CMat = DMatrix<Cx>;
pub type CVec = DVector<Cx>;
pub type RMat = DMatrix<f64>;
pub type RVec = DVector<f64>;

/// j2π as a complex constant; steering vectors and DFT kernels use it everywhere.
pub const J_TWO_PI: Cx = Cx::new(0.0, 2.0 * std::f64::consts::PI);

/// Hermitian eigendecomposition with eigenvalues sorted in descending order.
///
/// The input is symmetrized as (A + A^H)/2 first so that sample covariances
/// with rounding-level asymmetry are handled without surprises. Returns the
/// eigenvalues and the matching eigenvector columns.
pub fn eigh(a: &CMat) -> (Vec<f64>, CMat) {
    let h = hermitian_part(a);
    let eig = nalgebra::SymmetricEigen::new(h);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMat::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// (A + A^H)/2.
pub fn hermitian_part(a: &CMat) -> CMat {
    (a + a.adjoint()).scale(0.5)
}

/// Moore–Penrose pseudo-inverse together with the numerical rank and the
/// condition number of the retained part.
pub struct Pinv {
    pub inv: CMat,
    pub rank: usize,
    /// Ratio of the largest singular value to the smallest one (before
    /// truncation); infinite when the matrix is exactly rank deficient.
    pub cond: f64,
}

/// Pseudo-inverse with singular values below `rel_tol * s_max` treated as
/// zero; pass 0.0 to use a machine-precision default.
///
/// Computed from the Hermitian eigendecomposition of the Gram matrix on the
/// thin side (A⁺ = V Λ⁺ V^H A^H or A^H U Λ⁺ U^H): nalgebra's complex SVD can
/// silently return non-converged singular vectors, while its Hermitian
/// eigensolver is dependable. Squaring halves the usable precision, so the
/// cutoff is floored at sqrt(eps)-level — directions that weak are below the
/// Gram noise floor and not resolvable anyway.
pub fn pinv(a: &CMat, rel_tol: f64) -> Pinv {
    let (rows, cols) = a.shape();
    let thin = rows.min(cols);
    let gram = if rows >= cols { a.adjoint() * a } else { a * a.adjoint() };
    let (lams, vecs) = eigh(&gram);
    let sigmas: Vec<f64> = lams.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let s_max = sigmas.first().copied().unwrap_or(0.0);
    let requested = if rel_tol > 0.0 {
        rel_tol * s_max
    } else {
        rows.max(cols) as f64 * f64::EPSILON * s_max
    };
    let floor = (rows.max(cols) as f64 * f64::EPSILON).sqrt() * s_max;
    let tol = requested.max(floor);
    let rank = sigmas.iter().filter(|&&s| s > tol).count();
    let s_min = sigmas.last().copied().unwrap_or(0.0);
    let cond = if s_min > 0.0 { s_max / s_min } else { f64::INFINITY };
    if rank == 0 {
        return Pinv { inv: CMat::zeros(cols, rows), rank, cond };
    }
    // W = V_r Λ_r⁻¹ V_r^H on the thin side, then one product with A^H.
    let mut w = CMat::zeros(thin, thin);
    for k in 0..rank {
        let scale = Cx::new(1.0 / lams[k], 0.0);
        for i in 0..thin {
            for j in 0..thin {
                w[(i, j)] += vecs[(i, k)] * scale * vecs[(j, k)].conj();
            }
        }
    }
    let inv = if rows >= cols { w * a.adjoint() } else { a.adjoint() * w };
    Pinv { inv, rank, cond }
}

/// Principal square root of a Hermitian PSD matrix. Eigenvalues that dip
/// below zero from rounding are clamped to zero.
pub fn hermitian_sqrt(a: &CMat) -> CMat {
    let (values, vectors) = eigh(a);
    let n = values.len();
    let mut scaled = vectors.clone();
    for (k, &lam) in values.iter().enumerate() {
        let root = if lam > 0.0 { lam.sqrt() } else { 0.0 };
        let mut col = scaled.column_mut(k);
        col *= Cx::new(root, 0.0);
    }
    let mut out = &scaled * vectors.adjoint();
    out = hermitian_part(&out);
    let _ = n;
    out
}

/// Solve A X = B for Hermitian positive semidefinite A.
///
/// Uses Cholesky when A is positive definite and falls back to an
/// eigendecomposition-based least-squares solve when it is singular (the
/// noiseless rank-deficient case).
pub fn solve_psd(a: &CMat, b: &CMat) -> CMat {
    if let Some(chol) = Cholesky::new(hermitian_part(a)) {
        // A numerically singular matrix can survive the factorization on
        // roundoff-positive pivots; the squared diagonal ratio of the factor
        // bounds the condition number, so gate on it before trusting the
        // solve.
        let diag = chol.l_dirty().diagonal();
        let dmax = diag.iter().map(|v| v.re).fold(0.0f64, f64::max);
        let dmin = diag.iter().map(|v| v.re).fold(f64::INFINITY, f64::min);
        if dmin > 1e-8 * dmax {
            return chol.solve(b);
        }
    }
    // V diag(1/λ) V^H B over the retained part of the spectrum.
    let (values, vectors) = eigh(a);
    let lam_max = values.first().copied().unwrap_or(0.0).max(0.0);
    let tol = a.nrows() as f64 * f64::EPSILON * lam_max;
    let mut scaled = vectors.adjoint() * b;
    for (k, &lam) in values.iter().enumerate() {
        let w = if lam > tol { Cx::new(1.0 / lam, 0.0) } else { Cx::new(0.0, 0.0) };
        for entry in scaled.row_mut(k).iter_mut() {
            *entry *= w;
        }
    }
    &vectors * scaled
}

/// min ‖Ax − b‖ over x ≥ 0, phrased on the normal equations: `gram` = AᵀA
/// (or Re(A^H A) for complex A with real x) and `rhs` = Aᵀb.
///
/// Lawson–Hanson active set. Passive subsystems go through a pseudo-solve so
/// exactly duplicated columns cannot stall the iteration. Interior solutions
/// match plain least squares, so on well-posed problems this is a drop-in; on
/// near-dependent columns it never produces the huge ± coefficient pairs an
/// unconstrained solve would.
pub fn nnls(gram: &RMat, rhs: &RVec) -> Vec<f64> {
    let n = rhs.len();
    if n == 0 {
        return Vec::new();
    }
    let scale = rhs.amax().max(gram.amax()).max(1e-300);
    let tol = n as f64 * f64::EPSILON * scale;
    let mut x = RVec::zeros(n);
    let mut passive = vec![false; n];
    for _ in 0..3 * n {
        // Most positive gradient among the clamped coordinates enters.
        let w = rhs - gram * &x;
        let entering = (0..n)
            .filter(|&i| !passive[i] && w[i] > tol)
            .max_by(|&a, &b| w[a].partial_cmp(&w[b]).unwrap());
        let Some(j) = entering else { break };
        passive[j] = true;
        for _ in 0..=n {
            let idx: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
            let z = solve_passive(gram, rhs, &idx);
            if z.iter().all(|&v| v > 0.0) {
                x.fill(0.0);
                for (&i, &v) in idx.iter().zip(&z) {
                    x[i] = v;
                }
                break;
            }
            // Back off along x→z until the first passive coordinate reaches
            // zero, then release everything that landed there.
            let mut alpha = 1.0f64;
            for (&i, &zi) in idx.iter().zip(&z) {
                if zi <= 0.0 && x[i] - zi > 0.0 {
                    alpha = alpha.min(x[i] / (x[i] - zi));
                }
            }
            for (&i, &zi) in idx.iter().zip(&z) {
                x[i] += alpha * (zi - x[i]);
            }
            let drop_floor = 1e-12 * x.amax();
            for &i in &idx {
                if x[i] <= drop_floor {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
        }
    }
    x.iter().copied().collect()
}

/// Least-squares solution of the passive-set normal equations.
fn solve_passive(gram: &RMat, rhs: &RVec, idx: &[usize]) -> Vec<f64> {
    let k = idx.len();
    let sub = RMat::from_fn(k, k, |r, c| gram[(idx[r], idx[c])]);
    let b = RVec::from_fn(k, |r, _| rhs[idx[r]]);
    if let Some(chol) = Cholesky::new(sub.clone()) {
        let diag = chol.l_dirty().diagonal();
        let dmax = diag.iter().fold(0.0f64, |a, &v| a.max(v));
        let dmin = diag.iter().fold(f64::INFINITY, |a, &v| a.min(v));
        if dmin > 1e-8 * dmax {
            return chol.solve(&b).iter().copied().collect();
        }
    }
    let eig = nalgebra::SymmetricEigen::new(sub);
    let lam_max = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v));
    let tol = k as f64 * f64::EPSILON * lam_max;
    let mut out = RVec::zeros(k);
    for (c, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > tol {
            let coef = eig.eigenvectors.column(c).dot(&b) / lam;
            out += eig.eigenvectors.column(c).scale(coef);
        }
    }
    out.iter().copied().collect()
}

/// Frobenius norm of the difference of two matrices.
pub fn frob_diff(a: &CMat, b: &CMat) -> f64 {
    (a - b).norm()
}

/// Outer product x y^H.
pub fn outer(x: &CVec, y: &CVec) -> CMat {
    x * y.adjoint()
}

/// Complex exponential e^{j phase}.
pub fn cis(phase: f64) -> Cx {
    Cx::new(phase.cos(), phase.sin())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sample_hermitian() -> CMat {
        let b = CMat::from_fn(4, 3, |i, j| Cx::new((i + 2 * j) as f64, (i as f64) - (j as f64)));
        &b * b.adjoint()
    }

    #[test]
    fn eigh_sorts_descending_and_reconstructs() {
        let a = sample_hermitian();
        let (values, vectors) = eigh(&a);
        assert!(values.windows(2).all(|w| w[0] >= w[1]));
        let diag = CMat::from_fn(4, 4, |i, j| {
            if i == j { Cx::new(values[i], 0.0) } else { Cx::new(0.0, 0.0) }
        });
        let rebuilt = &vectors * diag * vectors.adjoint();
        assert_abs_diff_eq!(frob_diff(&rebuilt, &a), 0.0, epsilon = 1e-9 * a.norm());
    }

    #[test]
    fn pinv_satisfies_moore_penrose_on_rank_deficient_input() {
        // 4x4 of rank 2.
        let b = CMat::from_fn(4, 2, |i, j| Cx::new((i * j + 1) as f64, i as f64 * 0.5));
        let a = &b * b.adjoint();
        let p = pinv(&a, 0.0);
        assert_eq!(p.rank, 2);
        let aa = &a * &p.inv * &a;
        assert_abs_diff_eq!(frob_diff(&aa, &a), 0.0, epsilon = 1e-9 * a.norm());
    }

    #[test]
    fn hermitian_sqrt_squares_back() {
        let a = sample_hermitian();
        let r = hermitian_sqrt(&a);
        assert_abs_diff_eq!(frob_diff(&(&r * &r), &a), 0.0, epsilon = 1e-8 * a.norm());
    }

    #[test]
    fn solve_psd_falls_back_to_least_squares() {
        // Rank-1 PSD system with a consistent right-hand side.
        let x = CVec::from_fn(3, |i, _| Cx::new(1.0 + i as f64, -(i as f64)));
        let a = outer(&x, &x);
        let b = &a * CMat::identity(3, 3);
        let sol = solve_psd(&a, &b);
        assert_abs_diff_eq!(frob_diff(&(&a * sol), &b), 0.0, epsilon = 1e-9 * b.norm());
    }

    #[test]
    fn nnls_matches_least_squares_when_interior() {
        // A well-conditioned system whose unconstrained solution is positive.
        let a = RMat::from_row_slice(4, 2, &[1.0, 0.1, 0.2, 1.0, 0.5, 0.3, 0.1, 0.9]);
        let truth = RVec::from_column_slice(&[0.7, 1.3]);
        let b = &a * &truth;
        let sol = nnls(&(a.transpose() * &a), &(a.transpose() * b));
        assert_abs_diff_eq!(sol[0], 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(sol[1], 1.3, epsilon = 1e-12);
    }

    #[test]
    fn nnls_clamps_instead_of_producing_sign_pairs() {
        // Nearly parallel columns: unconstrained LS would explode into a huge
        // +/- pair; the constrained fit must stay bounded and nonnegative.
        let a = RMat::from_row_slice(3, 2, &[1.0, 1.0 + 1e-9, 1.0, 1.0, 1.0, 1.0 - 1e-9]);
        let b = RVec::from_column_slice(&[2.0, 2.0 + 1e-4, 2.0]);
        let sol = nnls(&(a.transpose() * &a), &(a.transpose() * b));
        assert!(sol.iter().all(|&v| v >= 0.0));
        let total: f64 = sol.iter().sum();
        assert!((total - 2.0).abs() < 1e-2, "mass {total} strays from the fit");
    }

    #[test]
    fn nnls_handles_exactly_duplicated_columns() {
        let a = RMat::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 1.0, 1.0, 0.5, 0.0, 0.0, 1.0]);
        let b = RVec::from_column_slice(&[3.0, 3.5, 1.0]);
        let sol = nnls(&(a.transpose() * &a), &(a.transpose() * b));
        assert!(sol.iter().all(|&v| v >= 0.0));
        // Columns 0 and 1 are identical; only their sum is identifiable.
        assert_abs_diff_eq!(sol[0] + sol[1], 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sol[2], 1.0, epsilon = 1e-9);
    }
}
