//! Two-view CCA in regression form.
//!
//! Minimizes `||U X - S||_F^2 + ||V Y - S||_F^2` subject to `S S^T = I`.
//! The rows of the optimal `S` are the top eigenvectors of the sum of the two
//! row-space projectors; `U` and `V` are then least-squares fits onto `S`.
//! The `update_*` functions are the individual block updates reused by the
//! alternating solver, where `Y` is replaced by the aligned view `Y P`.

use crate::error::{contract, parameter, Result};
use crate::linalg::{ensure_finite, fro2, gram, pinv_gram, rowspace_projector, sym_eig, Matrix};

/// Two views sharing `N` columns.
#[derive(Debug, Clone)]
pub struct DatasetPair {
    pub x: Matrix,
    pub y: Matrix,
    pub x_centered: bool,
    pub y_centered: bool,
}

impl DatasetPair {
    /// Wraps two raw views without centering them.
    pub fn new(x: Matrix, y: Matrix) -> Result<Self> {
        ensure_finite(&x, "view X")?;
        ensure_finite(&y, "view Y")?;
        if x.ncols() != y.ncols() {
            return Err(parameter(format!(
                "views must share the sample count: X is {}x{}, Y is {}x{}",
                x.nrows(),
                x.ncols(),
                y.nrows(),
                y.ncols()
            )));
        }
        if x.ncols() < 2 {
            return Err(parameter(format!("need at least 2 samples, got {}", x.ncols())));
        }
        if x.nrows() == 0 || y.nrows() == 0 {
            return Err(parameter("views must have at least one feature row"));
        }
        Ok(Self {
            x,
            y,
            x_centered: false,
            y_centered: false,
        })
    }

    /// Wraps two views and removes the row means of both.
    pub fn centered(x: Matrix, y: Matrix) -> Result<Self> {
        let raw = Self::new(x, y)?;
        Ok(Self {
            x: center_columns(&raw.x),
            y: center_columns(&raw.y),
            x_centered: true,
            y_centered: true,
        })
    }

    pub fn n(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_centered(&self) -> bool {
        self.x_centered && self.y_centered
    }

    pub(crate) fn require_centered(&self) -> Result<()> {
        if !self.is_centered() {
            return Err(contract("views must be centered before fitting"));
        }
        let tol = 1e-8 * self.n() as f64;
        for (name, m) in [("X", &self.x), ("Y", &self.y)] {
            for (i, row) in m.row_iter().enumerate() {
                let s = row.sum();
                // scale by row magnitude so large-valued inputs are not rejected
                let scale = row.amax().max(1.0);
                if s.abs() > tol * scale {
                    return Err(contract(format!(
                        "view {name} row {i} sums to {s}, expected centered data"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Projections `U`, `V` and shared embedding `S` (orthonormal rows).
#[derive(Debug, Clone)]
pub struct CcaModel {
    pub u: Matrix,
    pub v: Matrix,
    pub s: Matrix,
}

impl CcaModel {
    pub fn d(&self) -> usize {
        self.s.nrows()
    }

    /// `max |S S^T - I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let d = self.d();
        (&self.s * self.s.transpose() - Matrix::identity(d, d)).amax()
    }
}

/// Subtracts each row's mean.
pub fn center_columns(x: &Matrix) -> Matrix {
    let n = x.ncols().max(1) as f64;
    let mut out = x.clone();
    for mut row in out.row_iter_mut() {
        let mean = row.sum() / n;
        row.add_scalar_mut(-mean);
    }
    out
}

/// Rows of the returned `d x N` matrix are the top-`d` eigenvectors of
/// `proj(X) + proj(Y_aligned)`.
pub fn update_s(x: &Matrix, y_aligned: &Matrix, d: usize, rank_rtol: f64) -> Result<Matrix> {
    let n = x.ncols();
    if y_aligned.ncols() != n {
        return Err(parameter(format!(
            "column mismatch: X has {n}, aligned Y has {}",
            y_aligned.ncols()
        )));
    }
    if d == 0 || d > n {
        return Err(parameter(format!("latent dimension d={d} must lie in 1..={n}")));
    }
    let m = rowspace_projector(x, rank_rtol)?.matrix + rowspace_projector(y_aligned, rank_rtol)?.matrix;
    Ok(sym_eig(&m)?.top_rows(d))
}

/// `U = S X^T (X X^T)^+`, the least-squares solution of `min ||U X - S||`.
pub fn update_u(x: &Matrix, s: &Matrix, rank_rtol: f64) -> Result<Matrix> {
    if s.ncols() != x.ncols() {
        return Err(parameter(format!(
            "S has {} columns but the view has {}",
            s.ncols(),
            x.ncols()
        )));
    }
    let gi = pinv_gram(&gram(x), rank_rtol)?;
    Ok(s * x.transpose() * gi.inverse)
}

/// `V = S (Y P)^T (Y P P^T Y^T)^+`.
pub fn update_v(y: &Matrix, p: &Matrix, s: &Matrix, rank_rtol: f64) -> Result<Matrix> {
    if p.nrows() != y.ncols() || !p.is_square() {
        return Err(parameter(format!(
            "alignment must be {n}x{n}, got {}x{}",
            p.nrows(),
            p.ncols(),
            n = y.ncols()
        )));
    }
    update_u(&(y * p), s, rank_rtol)
}

/// `||U X - S||^2 + ||V Y_aligned - S||^2`.
pub fn cca_objective(model: &CcaModel, x: &Matrix, y_aligned: &Matrix) -> f64 {
    fro2(&(&model.u * x - &model.s)) + fro2(&(&model.v * y_aligned - &model.s))
}

/// Closed-form global optimum for aligned, centered views.
pub fn classical_cca(data: &DatasetPair, d: usize, rank_rtol: f64) -> Result<CcaModel> {
    data.require_centered()?;
    let s = update_s(&data.x, &data.y, d, rank_rtol)?;
    let u = update_u(&data.x, &s, rank_rtol)?;
    let v = update_u(&data.y, &s, rank_rtol)?;
    Ok(CcaModel { u, v, s })
}
