//! Optimization over the relaxed permutation matrix `P`.
//!
//! Every row of `P` is a probability vector whose Shannon entropy is capped
//! by `lambda`. The objective is
//!
//! ```text
//! ||A P - S||_F^2 + g1 ||P P^T - I||_F^2 + g2 ||P^T P - I||_F^2
//! ```
//!
//! where `A = V Y` during alternating fits and `A = Y~`, `S = X~` for the
//! direct-matching initializer. It is minimized by projected gradient descent
//! with Armijo backtracking; feasibility is restored row by row with a
//! Euclidean simplex projection followed by temperature sharpening.

use serde::{Deserialize, Serialize};

use crate::cca::DatasetPair;
use crate::error::{contract, parameter, Result};
use crate::linalg::{fro2, rowspace_basis, Matrix};

pub const ENTRY_TOL: f64 = 1e-8;
pub const ROW_SUM_TOL: f64 = 1e-6;
pub const ENTROPY_TOL: f64 = 1e-4;

/// Slack allowed on the entropy bound right after sharpening.
const SHARPEN_TOL: f64 = 1e-6;
const SHARPEN_BISECTIONS: usize = 60;
const ARMIJO_SIGMA: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

/// Residuals of the three row constraints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub max_row_sum_deviation: f64,
    pub min_entry: f64,
    pub max_entry: f64,
    pub max_row_entropy: f64,
}

impl FeasibilityReport {
    pub fn of(p: &Matrix) -> Self {
        let mut report = FeasibilityReport {
            max_row_sum_deviation: 0.0,
            min_entry: f64::INFINITY,
            max_entry: f64::NEG_INFINITY,
            max_row_entropy: 0.0,
        };
        for row in p.row_iter() {
            let sum: f64 = row.iter().sum();
            report.max_row_sum_deviation = report.max_row_sum_deviation.max((sum - 1.0).abs());
            let h: f64 = row.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum();
            report.max_row_entropy = report.max_row_entropy.max(h);
            for &v in row.iter() {
                report.min_entry = report.min_entry.min(v);
                report.max_entry = report.max_entry.max(v);
            }
        }
        report
    }

    pub fn satisfies(&self, lambda: f64) -> bool {
        self.min_entry >= -ENTRY_TOL
            && self.max_entry <= 1.0 + ENTRY_TOL
            && self.max_row_sum_deviation <= ROW_SUM_TOL
            && self.max_row_entropy <= lambda + ENTROPY_TOL
    }
}

/// A row-stochastic, entropy-bounded estimate of the column alignment.
#[derive(Debug, Clone)]
pub struct AlignmentMatrix {
    p: Matrix,
    report: FeasibilityReport,
}

impl AlignmentMatrix {
    /// Wraps `p` after checking it is square, finite and feasible for `lambda`.
    pub fn new(p: Matrix, lambda: f64) -> Result<Self> {
        let a = Self::unchecked(p)?;
        a.check(lambda)?;
        Ok(a)
    }

    /// Wraps a square finite matrix without checking the row constraints.
    pub fn unchecked(p: Matrix) -> Result<Self> {
        if !p.is_square() || p.nrows() == 0 {
            return Err(contract(format!(
                "alignment must be a non-empty square matrix, got {}x{}",
                p.nrows(),
                p.ncols()
            )));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(contract("alignment contains non-finite entries"));
        }
        let report = FeasibilityReport::of(&p);
        Ok(Self { p, report })
    }

    pub fn identity(n: usize) -> Self {
        Self::unchecked(Matrix::identity(n, n)).expect("identity is square")
    }

    pub fn check(&self, lambda: f64) -> Result<()> {
        if self.report.satisfies(lambda) {
            Ok(())
        } else {
            Err(contract(format!(
                "alignment violates the row constraints for lambda={lambda}: {:?}",
                self.report
            )))
        }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.p
    }

    pub fn into_matrix(self) -> Matrix {
        self.p
    }

    pub fn report(&self) -> &FeasibilityReport {
        &self.report
    }

    pub fn n(&self) -> usize {
        self.p.nrows()
    }

    pub fn mean_row_entropy(&self) -> f64 {
        let total: f64 = self
            .p
            .row_iter()
            .map(|r| r.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum::<f64>())
            .sum();
        total / self.n() as f64
    }
}

/// Stopping rules for the inner projected-gradient solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverTol {
    /// Stop when the gradient-mapping norm `||P - P_next|| / step` falls below this.
    pub grad_tol: f64,
    /// Stop when an accepted step changes no entry by more than this.
    pub step_tol: f64,
    pub max_iters: usize,
}

impl Default for SolverTol {
    fn default() -> Self {
        Self {
            grad_tol: 1e-6,
            step_tol: 1e-12,
            max_iters: 200,
        }
    }
}

/// The P-subproblem: `A` and `S` fixed, penalties and entropy bound given.
#[derive(Debug, Clone)]
pub struct PStepProblem {
    pub a: Matrix,
    pub s: Matrix,
    pub gamma1: f64,
    pub gamma2: f64,
    pub lambda: f64,
    pub tol: SolverTol,
}

impl PStepProblem {
    pub fn new(a: Matrix, s: Matrix, gamma1: f64, gamma2: f64, lambda: f64, tol: SolverTol) -> Result<Self> {
        if a.nrows() != s.nrows() || a.ncols() != s.ncols() {
            return Err(parameter(format!(
                "A is {}x{} but S is {}x{}",
                a.nrows(),
                a.ncols(),
                s.nrows(),
                s.ncols()
            )));
        }
        validate_penalties(gamma1, gamma2)?;
        validate_lambda(lambda, a.ncols())?;
        Ok(Self {
            a,
            s,
            gamma1,
            gamma2,
            lambda,
            tol,
        })
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }
}

pub(crate) fn validate_penalties(gamma1: f64, gamma2: f64) -> Result<()> {
    if !(gamma1 >= 0.0 && gamma1.is_finite() && gamma2 >= 0.0 && gamma2.is_finite()) {
        return Err(parameter(format!(
            "penalty weights must be finite and nonnegative, got gamma1={gamma1}, gamma2={gamma2}"
        )));
    }
    Ok(())
}

/// `lambda` must lie in `(0, ln N]`; the uniform row attains `ln N`.
pub fn validate_lambda(lambda: f64, n: usize) -> Result<()> {
    let max = (n as f64).ln();
    if !(lambda > 0.0 && lambda <= max + 1e-12) {
        return Err(parameter(format!(
            "entropy bound lambda={lambda} must lie in (0, ln N = {max:.6}] for N={n}"
        )));
    }
    Ok(())
}

/// Shannon entropy in nats with `0 ln 0 = 0`.
pub fn row_entropy(p: &[f64]) -> Result<f64> {
    if let Some(v) = p.iter().find(|v| v.is_nan() || **v < 0.0) {
        return Err(contract(format!("probability vector has negative or NaN entry {v}")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOL {
        return Err(contract(format!("probability vector sums to {sum}, expected 1")));
    }
    Ok(entropy(p))
}

fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum()
}

fn check_square(p: &Matrix, n: usize) -> Result<()> {
    if p.nrows() != n || p.ncols() != n {
        return Err(parameter(format!("P must be {n}x{n}, got {}x{}", p.nrows(), p.ncols())));
    }
    Ok(())
}

/// `||P P^T - I||_F^2` and `||P^T P - I||_F^2`.
pub fn orthogonality_penalties(p: &Matrix) -> (f64, f64) {
    let n = p.nrows();
    let eye = Matrix::identity(n, n);
    (fro2(&(p * p.transpose() - &eye)), fro2(&(p.transpose() * p - &eye)))
}

pub fn p_objective(p: &Matrix, prob: &PStepProblem) -> Result<f64> {
    check_square(p, prob.n())?;
    Ok(objective(p, prob))
}

fn objective(p: &Matrix, prob: &PStepProblem) -> f64 {
    let (row_pen, col_pen) = orthogonality_penalties(p);
    fro2(&(&prob.a * p - &prob.s)) + prob.gamma1 * row_pen + prob.gamma2 * col_pen
}

/// `2 A^T (A P - S) + 4 g1 (P P^T - I) P + 4 g2 P (P^T P - I)`.
pub fn p_gradient(p: &Matrix, prob: &PStepProblem) -> Result<Matrix> {
    check_square(p, prob.n())?;
    Ok(gradient(p, prob))
}

fn gradient(p: &Matrix, prob: &PStepProblem) -> Matrix {
    let n = p.nrows();
    let eye = Matrix::identity(n, n);
    let mut g = prob.a.transpose() * (&prob.a * p - &prob.s) * 2.0;
    if prob.gamma1 != 0.0 {
        g += (p * p.transpose() - &eye) * p * (4.0 * prob.gamma1);
    }
    if prob.gamma2 != 0.0 {
        g += p * (p.transpose() * p - &eye) * (4.0 * prob.gamma2);
    }
    g
}

/// Euclidean projection onto the probability simplex (sort-based).
fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cumsum += ui;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    let mut out: Vec<f64> = v.iter().map(|&vi| (vi - theta).max(0.0)).collect();
    // renormalize away rounding drift
    let s: f64 = out.iter().sum();
    if s > 0.0 {
        out.iter_mut().for_each(|x| *x /= s);
    }
    out
}

/// `p^beta / sum(p^beta)` evaluated in log space; zero entries stay zero.
fn temper(p: &[f64], beta: f64) -> Vec<f64> {
    let max_log = p
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|v| v.ln())
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = p
        .iter()
        .map(|&v| {
            if v > 0.0 {
                ((v.ln() - max_log) * beta).exp()
            } else {
                0.0
            }
        })
        .collect();
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= s);
    out
}

fn mix_toward(p: &[f64], k: usize, alpha: f64) -> Vec<f64> {
    p.iter()
        .enumerate()
        .map(|(j, &v)| (1.0 - alpha) * v + if j == k { alpha } else { 0.0 })
        .collect()
}

/// Lowers the entropy of a probability vector to at most `lambda`.
///
/// A unique maximum is sharpened by the power transform `p^(1/t)` with the
/// temperature found by bisection; a tied maximum whose limiting entropy
/// `ln(#ties)` is still above the bound is pulled toward the lowest-index
/// argmax instead.
fn sharpen(p: Vec<f64>, lambda: f64) -> Vec<f64> {
    if entropy(&p) <= lambda {
        return p;
    }
    let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let first = p.iter().position(|&v| v == max).unwrap_or(0);
    let ties = p.iter().filter(|&&v| v == max).count();

    if ties == 1 || (ties as f64).ln() <= lambda - SHARPEN_TOL {
        let mut lo = 1.0_f64;
        let mut hi = 2.0_f64;
        let mut bracketed = false;
        for _ in 0..1100 {
            if !hi.is_finite() {
                break;
            }
            if entropy(&temper(&p, hi)) <= lambda {
                bracketed = true;
                break;
            }
            lo = hi;
            hi *= 2.0;
        }
        if bracketed {
            for _ in 0..SHARPEN_BISECTIONS {
                let mid = 0.5 * (lo + hi);
                if entropy(&temper(&p, mid)) > lambda {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return temper(&p, hi);
        }
    }

    // tied maximum: bisect on the mixing weight toward the first argmax
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..SHARPEN_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if entropy(&mix_toward(&p, first, mid)) > lambda {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    mix_toward(&p, first, hi)
}

/// Maps an arbitrary vector to a feasible row: nonnegative, summing to one,
/// with entropy at most `lambda` (within 1e-6).
pub fn project_row_feasible(v: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if lambda.is_nan() || lambda <= 0.0 {
        return Err(parameter(format!("entropy bound must be positive, got {lambda}")));
    }
    if v.is_empty() {
        return Err(parameter("cannot project an empty row"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(contract("row contains non-finite entries"));
    }
    Ok(sharpen(project_simplex(v), lambda))
}

fn project_rows(m: &Matrix, lambda: f64) -> Matrix {
    let n = m.nrows();
    let mut out = Matrix::zeros(n, m.ncols());
    let mut buf = vec![0.0; m.ncols()];
    for i in 0..n {
        for (j, b) in buf.iter_mut().enumerate() {
            *b = m[(i, j)];
        }
        let row = sharpen(project_simplex(&buf), lambda);
        for (j, v) in row.into_iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    out
}

/// Applies [`project_row_feasible`] to every row.
pub fn project_feasible(m: &Matrix, lambda: f64) -> Result<AlignmentMatrix> {
    if lambda.is_nan() || lambda <= 0.0 {
        return Err(parameter(format!("entropy bound must be positive, got {lambda}")));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(contract("matrix contains non-finite entries"));
    }
    AlignmentMatrix::unchecked(project_rows(m, lambda))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PStepStatus {
    Converged,
    /// No step along the projected path decreased the objective.
    LineSearchExhausted,
    MaxIters,
}

#[derive(Debug, Clone)]
pub struct PStepOutcome {
    pub alignment: AlignmentMatrix,
    /// Objective at the start followed by the value after each accepted step.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub status: PStepStatus,
}

impl PStepOutcome {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace holds the starting value")
    }
}

/// Projected gradient descent on the P-subproblem, warm-started at `p0`.
///
/// Steps are accepted only if they satisfy the Armijo condition and do not
/// increase the objective, so the returned objective never exceeds the
/// starting one.
pub fn solve_p_step(p0: &AlignmentMatrix, prob: &PStepProblem) -> Result<PStepOutcome> {
    check_square(p0.matrix(), prob.n())?;
    p0.check(prob.lambda)?;

    let mut p = p0.matrix().clone();
    let mut f = objective(&p, prob);
    let mut trace = vec![f];
    let mut status = PStepStatus::MaxIters;
    let mut iterations = 0;

    for _ in 0..prob.tol.max_iters {
        iterations += 1;
        let g = gradient(&p, prob);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let candidate = project_rows(&(&p - &g * step), prob.lambda);
            let fc = objective(&candidate, prob);
            let decrease = g.dot(&(&candidate - &p));
            if fc <= f && fc <= f + ARMIJO_SIGMA * decrease {
                accepted = Some((candidate, fc));
                break;
            }
            step *= 0.5;
        }
        let Some((next, fnext)) = accepted else {
            status = PStepStatus::LineSearchExhausted;
            break;
        };
        let delta = &next - &p;
        let moved = delta.amax();
        let mapping_norm = delta.norm() / step;
        p = next;
        f = fnext;
        trace.push(f);
        if mapping_norm <= prob.tol.grad_tol || moved <= prob.tol.step_tol {
            status = PStepStatus::Converged;
            break;
        }
    }

    Ok(PStepOutcome {
        alignment: AlignmentMatrix::unchecked(p)?,
        objective_trace: trace,
        iterations,
        status,
    })
}

/// How the two views are brought to a common `r x N` representation before
/// direct matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Reconcile {
    /// Use `X` and `Y` as given; requires `D_x == D_y`.
    Raw,
    /// Principal coordinates `sigma_i v_i^T` of the top `r` right-singular directions.
    Principal,
    /// Whitened principal coordinates rotated into a moment-defined frame,
    /// which makes the two representations agree up to the column permutation
    /// whenever the views are linear images of the same latent samples.
    #[default]
    CanonicalFrame,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitOptions {
    pub reconcile: Reconcile,
    /// Number of entropy-bound stages from `ln N` down to `lambda`.
    pub anneal_stages: usize,
    pub tol: SolverTol,
}

impl Default for InitOptions {
    fn default() -> Self {
        Self {
            reconcile: Reconcile::default(),
            anneal_stages: 8,
            tol: SolverTol {
                max_iters: 300,
                ..SolverTol::default()
            },
        }
    }
}

/// Common `r x N` representations of the two views used by the initializer.
pub fn reconcile_views(data: &DatasetPair, mode: Reconcile, rank_rtol: f64) -> Result<(Matrix, Matrix)> {
    match mode {
        Reconcile::Raw => {
            if data.x.nrows() != data.y.nrows() {
                return Err(parameter(format!(
                    "raw matching needs equal feature counts, got D_x={} and D_y={}",
                    data.x.nrows(),
                    data.y.nrows()
                )));
            }
            Ok((data.x.clone(), data.y.clone()))
        }
        Reconcile::Principal | Reconcile::CanonicalFrame => {
            let bx = rowspace_basis(&data.x, rank_rtol)?;
            let by = rowspace_basis(&data.y, rank_rtol)?;
            let r = bx.nrows().min(by.nrows());
            if r == 0 {
                return Err(parameter("both views must have nonzero rank"));
            }
            if mode == Reconcile::Principal {
                // basis rows are v_i^T = u_i^T X / sigma_i, so u_i^T X recovers sigma_i v_i^T
                let px = principal_coords(&data.x, &bx, r);
                let py = principal_coords(&data.y, &by, r);
                Ok((px, py))
            } else {
                let scale = (data.n() as f64).sqrt();
                let cx = canonical_frame(&(bx.rows(0, r) * scale));
                let cy = canonical_frame(&(by.rows(0, r) * scale));
                Ok((cx, cy))
            }
        }
    }
}

/// `sigma_i v_i^T` for the first `r` basis rows `v_i^T`, with `sigma_i = ||X v_i||`.
fn principal_coords(view: &Matrix, basis: &Matrix, r: usize) -> Matrix {
    let mut out = basis.rows(0, r).clone_owned();
    for mut row in out.row_iter_mut() {
        let sigma = (view * row.transpose()).norm();
        row *= sigma;
    }
    out
}

/// Rotates whitened coordinates `c` (`r x N`) into a frame built from
/// rotation-equivariant third-order moments, so that `canonical_frame(R c)`
/// equals `canonical_frame(c)` for any orthogonal `R`.
fn canonical_frame(c: &Matrix) -> Matrix {
    let r = c.nrows();
    let n = c.ncols() as f64;
    let mut frame: Vec<nalgebra::DVector<f64>> = Vec::with_capacity(r);
    // m_1 = mean ||c_j||^2 c_j
    let mut v = nalgebra::DVector::zeros(r);
    for col in c.column_iter() {
        v += col * col.norm_squared();
    }
    v /= n;
    for k in 0..r {
        for f in &frame {
            let proj = v.dot(f);
            v -= f * proj;
        }
        let norm = v.norm();
        if norm > 1e-10 {
            v /= norm;
        } else {
            v = fallback_axis(&frame, r);
        }
        frame.push(v.clone());
        if k + 1 < r {
            // m_{k+1} = mean (v_k . c_j)^2 c_j
            let mut next = nalgebra::DVector::zeros(r);
            for col in c.column_iter() {
                let t = col.dot(&v);
                next += col * (t * t);
            }
            v = next / n;
        }
    }
    let mut rot = Matrix::zeros(r, r);
    for (i, f) in frame.iter().enumerate() {
        rot.set_row(i, &f.transpose());
    }
    rot * c
}

fn fallback_axis(frame: &[nalgebra::DVector<f64>], r: usize) -> nalgebra::DVector<f64> {
    for axis in 0..r {
        let mut e = nalgebra::DVector::zeros(r);
        e[axis] = 1.0;
        for f in frame {
            let proj = e.dot(f);
            e -= f * proj;
        }
        let norm = e.norm();
        if norm > 1e-6 {
            return e / norm;
        }
    }
    nalgebra::DVector::zeros(r)
}

/// Entropy-bound schedule from `ln N` down to `lambda`, geometric in between.
fn anneal_schedule(n: usize, lambda: f64, stages: usize) -> Vec<f64> {
    let top = (n as f64).ln();
    if stages <= 1 || lambda >= top {
        return vec![lambda];
    }
    (0..stages)
        .map(|k| {
            if k + 1 == stages {
                lambda
            } else {
                top * (lambda / top).powf(k as f64 / (stages - 1) as f64)
            }
        })
        .collect()
}

/// Direct matching of the two views, ignoring the canonical correlation:
/// minimizes `||X~ - Y~ P||^2` plus the orthogonality penalties under the
/// row constraints, starting from the uniform matrix and tightening the
/// entropy bound in stages.
pub fn initialize_alignment(
    data: &DatasetPair,
    gamma1: f64,
    gamma2: f64,
    lambda: f64,
    rank_rtol: f64,
    opts: &InitOptions,
) -> Result<AlignmentMatrix> {
    data.require_centered()?;
    let n = data.n();
    validate_lambda(lambda, n)?;
    validate_penalties(gamma1, gamma2)?;
    let (xt, yt) = reconcile_views(data, opts.reconcile, rank_rtol)?;

    let mut p = Matrix::from_element(n, n, 1.0 / n as f64);
    for stage_lambda in anneal_schedule(n, lambda, opts.anneal_stages) {
        let start = project_feasible(&p, stage_lambda)?;
        let prob = PStepProblem::new(yt.clone(), xt.clone(), gamma1, gamma2, stage_lambda, opts.tol)?;
        p = solve_p_step(&start, &prob)?.alignment.into_matrix();
    }
    let out = AlignmentMatrix::unchecked(p)?;
    out.check(lambda)?;
    Ok(out)
}

/// Greedy hard rounding: repeatedly take the largest remaining entry and
/// exclude its row and column. Ties go to the lowest (row, column) index.
pub fn round_to_permutation(p: &AlignmentMatrix) -> Matrix {
    let n = p.n();
    let m = p.matrix();
    let mut row_used = vec![false; n];
    let mut col_used = vec![false; n];
    let mut out = Matrix::zeros(n, n);
    for _ in 0..n {
        let mut best: Option<(usize, usize)> = None;
        for i in (0..n).filter(|&i| !row_used[i]) {
            for j in (0..n).filter(|&j| !col_used[j]) {
                if best.is_none_or(|(bi, bj)| m[(i, j)] > m[(bi, bj)]) {
                    best = Some((i, j));
                }
            }
        }
        let (i, j) = best.expect("a free cell remains");
        row_used[i] = true;
        col_used[j] = true;
        out[(i, j)] = 1.0;
    }
    out
}
