//! Dense kernels shared by every solver in the crate.
//!
//! All Gram-matrix inverses are Moore–Penrose pseudo-inverses with an
//! eigenvalue cutoff relative to the largest eigenvalue, so rank-deficient
//! views (latent dimension smaller than the feature dimension) are handled
//! the same way as full-rank ones.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{contract, Result};

pub type Matrix = DMatrix<f64>;

/// Default relative eigenvalue cutoff for pseudo-inverses.
pub const DEFAULT_RANK_RTOL: f64 = 1e-10;

const SYMMETRY_RTOL: f64 = 1e-10;

/// Eigendecomposition of a symmetric matrix with a canonical ordering.
///
/// Eigenvalues are sorted descending (ties keep their original order) and
/// every eigenvector is sign-fixed so that its entry of largest magnitude is
/// positive, the lowest index winning a magnitude tie.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenResult {
    pub eigenvalues: DVector<f64>,
    /// Eigenvectors stored as columns, in the same order as `eigenvalues`.
    pub eigenvectors: Matrix,
}

impl EigenResult {
    /// The first `d` eigenvectors as rows of a `d x n` matrix.
    pub fn top_rows(&self, d: usize) -> Matrix {
        self.eigenvectors.columns(0, d).transpose()
    }
}

/// Pseudo-inverse of a symmetric PSD matrix together with its numerical rank.
#[derive(Debug, Clone)]
pub struct GramInverse {
    pub inverse: Matrix,
    pub rank: usize,
}

impl GramInverse {
    pub fn is_zero_rank(&self) -> bool {
        self.rank == 0
    }
}

/// Orthogonal projector onto the row space of a matrix.
#[derive(Debug, Clone)]
pub struct Projector {
    pub matrix: Matrix,
    pub rank: usize,
}

pub fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(contract(format!("{what} contains non-finite entries")))
    }
}

fn check_symmetric(a: &Matrix, what: &str) -> Result<()> {
    if !a.is_square() {
        return Err(contract(format!(
            "{what} must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    ensure_finite(a, what)?;
    let scale = a.amax().max(1.0);
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (a[(i, j)] - a[(j, i)]).abs() > SYMMETRY_RTOL * scale {
                return Err(contract(format!(
                    "{what} is not symmetric at ({i}, {j}): {} vs {}",
                    a[(i, j)],
                    a[(j, i)]
                )));
            }
        }
    }
    Ok(())
}

/// `m * m^T`, symmetrized to remove rounding asymmetry.
pub fn gram(m: &Matrix) -> Matrix {
    let g = m * m.transpose();
    symmetrize(&g)
}

pub fn symmetrize(a: &Matrix) -> Matrix {
    (a + a.transpose()) * 0.5
}

pub fn sym_eig(a: &Matrix) -> Result<EigenResult> {
    check_symmetric(a, "sym_eig input")?;
    let n = a.nrows();
    if n == 0 {
        return Ok(EigenResult {
            eigenvalues: DVector::zeros(0),
            eigenvectors: Matrix::zeros(0, 0),
        });
    }
    let eig = SymmetricEigen::new(symmetrize(a));

    let mut order: Vec<usize> = (0..n).collect();
    // stable sort: equal eigenvalues keep the solver's index order
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut eigenvectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(src).clone_owned();
        let norm = v.norm();
        if norm > 0.0 {
            v /= norm;
        }
        let mut pivot = 0;
        for k in 1..n {
            if v[k].abs() > v[pivot].abs() {
                pivot = k;
            }
        }
        if v[pivot] < 0.0 {
            v.neg_mut();
        }
        eigenvectors.set_column(dst, &v);
    }
    Ok(EigenResult {
        eigenvalues,
        eigenvectors,
    })
}

fn check_rtol(rank_rtol: f64) -> Result<()> {
    if !(rank_rtol > 0.0 && rank_rtol < 1.0) {
        return Err(contract(format!("rank_rtol must lie in (0, 1), got {rank_rtol}")));
    }
    Ok(())
}

/// Indices of eigenvalues kept by the relative cutoff.
fn kept(eig: &EigenResult, rank_rtol: f64) -> Vec<usize> {
    let lmax = eig.eigenvalues.iter().copied().fold(0.0_f64, f64::max);
    if lmax <= 0.0 {
        return Vec::new();
    }
    (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] > rank_rtol * lmax)
        .collect()
}

pub fn pinv_gram(g: &Matrix, rank_rtol: f64) -> Result<GramInverse> {
    check_rtol(rank_rtol)?;
    let eig = sym_eig(g)?;
    let n = g.nrows();
    let keep = kept(&eig, rank_rtol);
    let mut inverse = Matrix::zeros(n, n);
    for &i in &keep {
        let v = eig.eigenvectors.column(i);
        inverse += (v * v.transpose()) / eig.eigenvalues[i];
    }
    Ok(GramInverse {
        inverse: symmetrize(&inverse),
        rank: keep.len(),
    })
}

/// Orthonormal basis (as rows) of the row space of `x`, computed from the
/// eigendecomposition of `x x^T`.
pub fn rowspace_basis(x: &Matrix, rank_rtol: f64) -> Result<Matrix> {
    check_rtol(rank_rtol)?;
    ensure_finite(x, "rowspace input")?;
    let eig = sym_eig(&gram(x))?;
    let keep = kept(&eig, rank_rtol);
    let mut basis = Matrix::zeros(keep.len(), x.ncols());
    for (r, &i) in keep.iter().enumerate() {
        let row = eig.eigenvectors.column(i).transpose() * x / eig.eigenvalues[i].sqrt();
        basis.set_row(r, &row);
    }
    Ok(basis)
}

/// `X^T (X X^T)^+ X`, the orthogonal projector onto the row space of `X`.
pub fn rowspace_projector(x: &Matrix, rank_rtol: f64) -> Result<Projector> {
    let basis = rowspace_basis(x, rank_rtol)?;
    let matrix = symmetrize(&(basis.transpose() * &basis));
    Ok(Projector {
        matrix,
        rank: basis.nrows(),
    })
}

/// Squared Frobenius norm.
pub fn fro2(m: &Matrix) -> f64 {
    m.iter().map(|v| v * v).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn pinv_identity() {
        let g = Matrix::identity(3, 3);
        let p = pinv_gram(&g, 1e-10).unwrap();
        assert_relative_eq!(p.inverse, g, epsilon = 1e-14);
        assert_eq!(p.rank, 3);
    }

    #[test]
    fn pinv_singular_diagonal() {
        let g = Matrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.0]));
        let p = pinv_gram(&g, 1e-12).unwrap();
        let want = Matrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.0]));
        assert_relative_eq!(p.inverse, want, epsilon = 1e-14);
        assert_eq!(p.rank, 1);
    }

    #[test]
    fn pinv_zero_matrix_is_flagged() {
        let p = pinv_gram(&Matrix::zeros(3, 3), 1e-10).unwrap();
        assert!(p.is_zero_rank());
        assert_eq!(p.inverse, Matrix::zeros(3, 3));
    }

    #[test]
    fn pinv_rank_two_projector_identity() {
        let x = random(15, 2, 1) * random(2, 20, 2);
        let g = gram(&x);
        let gp = pinv_gram(&g, 1e-10).unwrap();
        assert_eq!(gp.rank, 2);
        let back = &x * (x.transpose() * &gp.inverse * &x);
        assert!((back - &x).amax() <= 1e-8 * x.amax().max(1.0));
        let ggg = &g * &gp.inverse * &g;
        assert!((ggg - &g).amax() <= 1e-8 * g.amax());
    }

    #[test]
    fn pinv_rejects_bad_input() {
        assert!(pinv_gram(&random(2, 3, 0), 1e-10).is_err());
        let mut a = Matrix::identity(2, 2);
        a[(0, 1)] = 0.5;
        assert!(pinv_gram(&a, 1e-10).is_err());
        assert!(pinv_gram(&Matrix::identity(2, 2), 0.0).is_err());
    }

    #[test]
    fn pinv_is_involutive_on_psd() {
        let g = gram(&random(4, 4, 9));
        let once = pinv_gram(&g, 1e-12).unwrap().inverse;
        let twice = pinv_gram(&once, 1e-12).unwrap().inverse;
        assert!((twice - &g).amax() <= 1e-6 * g.amax());
    }

    #[test]
    fn eig_diagonal_ordering() {
        let a = Matrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0, 2.0]));
        let e = sym_eig(&a).unwrap();
        assert_eq!(e.eigenvalues.as_slice(), &[3.0, 2.0, 1.0]);
        let want = Matrix::from_row_slice(3, 3, &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_relative_eq!(e.eigenvectors, want, epsilon = 1e-14);
    }

    #[test]
    fn eig_degenerate_identity() {
        let e = sym_eig(&Matrix::identity(2, 2)).unwrap();
        assert_eq!(e.eigenvalues.as_slice(), &[1.0, 1.0]);
        assert_relative_eq!(e.eigenvectors, Matrix::identity(2, 2), epsilon = 1e-14);
    }

    #[test]
    fn eig_reconstructs_and_is_deterministic() {
        let a = symmetrize(&random(5, 5, 3));
        let e = sym_eig(&a).unwrap();
        let lambda = Matrix::from_diagonal(&e.eigenvalues);
        let rec = &e.eigenvectors * lambda * e.eigenvectors.transpose();
        assert!((rec - &a).norm() <= 1e-8 * a.norm().max(1.0));
        for w in e.eigenvalues.as_slice().windows(2) {
            assert!(w[0] >= w[1]);
        }
        let vtv = e.eigenvectors.transpose() * &e.eigenvectors;
        assert!((vtv - Matrix::identity(5, 5)).amax() < 1e-12);
        for c in e.eigenvectors.column_iter() {
            let imax = c.iamax();
            assert!(c[imax] > 0.0);
        }
        assert_eq!(sym_eig(&a).unwrap(), e);
    }

    #[test]
    fn eig_rejects_asymmetric() {
        let mut a = Matrix::identity(3, 3);
        a[(2, 0)] = 1.0;
        assert!(sym_eig(&a).is_err());
    }

    #[test]
    fn projector_full_rank_is_identity() {
        let p = rowspace_projector(&Matrix::identity(2, 2), 1e-10).unwrap();
        assert_relative_eq!(p.matrix, Matrix::identity(2, 2), epsilon = 1e-14);
    }

    #[test]
    fn projector_single_row() {
        let s = 0.5_f64.sqrt();
        let x = Matrix::from_row_slice(1, 2, &[s, s]);
        let p = rowspace_projector(&x, 1e-10).unwrap();
        assert_relative_eq!(p.matrix, Matrix::from_element(2, 2, 0.5), epsilon = 1e-14);
        assert_eq!(p.rank, 1);
    }

    #[test]
    fn projector_of_zero_has_rank_zero() {
        let p = rowspace_projector(&Matrix::zeros(3, 4), 1e-10).unwrap();
        assert_eq!(p.rank, 0);
        assert_eq!(p.matrix, Matrix::zeros(4, 4));
    }

    #[test]
    fn projector_invariant_to_row_mixing() {
        let x = random(3, 8, 5);
        let a = random(3, 3, 6) + Matrix::identity(3, 3) * 2.0;
        let p1 = rowspace_projector(&x, 1e-10).unwrap().matrix;
        let p2 = rowspace_projector(&(a * &x), 1e-10).unwrap().matrix;
        assert!((&p1 - &p2).norm() <= 1e-6 * 8.0);
        assert!((&p1 * &p1 - &p1).amax() <= 1e-8);
        let e = sym_eig(&p1).unwrap();
        for v in e.eigenvalues.iter() {
            assert!(v.abs() < 1e-6 || (v - 1.0).abs() < 1e-6);
        }
    }
}
