//! Alternating optimization of the aligned CCA objective.
//!
//! Each outer iteration updates `S`, then `U`, then `V` in closed form for the
//! current alignment, and finally runs the P-step warm-started at the current
//! `P`. Every block step is non-increasing in the full objective, so the
//! recorded loss trace is monotone.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{
    orthogonality_penalties, solve_p_step, validate_lambda, validate_penalties, AlignmentMatrix, InitOptions,
    PStepProblem, SolverTol,
};
use crate::cca::{update_s, update_u, update_v, CcaModel, DatasetPair};
use crate::error::{parameter, AccaError, Result};
use crate::linalg::{fro2, DEFAULT_RANK_RTOL};

/// Number of consecutive low-improvement iterations that count as a stall.
const STALL_WINDOW: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Latent dimension of the shared embedding.
    pub d: usize,
    pub gamma1: f64,
    pub gamma2: f64,
    /// Per-row entropy bound on `P`, in nats.
    pub lambda: f64,
    pub outer_max_iters: usize,
    pub loss_threshold: f64,
    pub loss_rel_tol: f64,
    pub rank_rtol: f64,
    pub seed: u64,
    /// Inner solver settings for the P-step.
    pub p_step: SolverTol,
    pub init: InitOptions,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            d: 7,
            gamma1: 1e-4,
            gamma2: 1e-4,
            lambda: 0.1,
            outer_max_iters: 100,
            loss_threshold: 1e-8,
            loss_rel_tol: 1e-6,
            rank_rtol: DEFAULT_RANK_RTOL,
            seed: 0,
            p_step: SolverTol {
                max_iters: 100,
                ..SolverTol::default()
            },
            init: InitOptions::default(),
        }
    }
}

impl HyperParams {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.d == 0 || self.d > n {
            return Err(parameter(format!("latent dimension d={} must lie in 1..={n}", self.d)));
        }
        validate_penalties(self.gamma1, self.gamma2)?;
        validate_lambda(self.lambda, n)?;
        if !(self.rank_rtol > 0.0 && self.rank_rtol < 1.0) {
            return Err(parameter(format!(
                "rank_rtol must lie in (0, 1), got {}",
                self.rank_rtol
            )));
        }
        if self.outer_max_iters == 0 {
            return Err(parameter("outer_max_iters must be at least 1"));
        }
        if !(self.loss_threshold >= 0.0 && self.loss_rel_tol >= 0.0) {
            return Err(parameter("loss thresholds must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Threshold,
    MaxIters,
    Stalled,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: CcaModel,
    pub alignment: AlignmentMatrix,
    pub loss_trace: Vec<f64>,
    pub iterations_run: usize,
    pub stop_reason: StopReason,
}

/// State at the end of one outer iteration, handed to fit observers.
#[derive(Debug)]
pub struct IterationSnapshot<'a> {
    pub iteration: usize,
    pub loss: f64,
    pub model: &'a CcaModel,
    pub alignment: &'a AlignmentMatrix,
}

/// The full four-term objective.
pub fn acca_loss(model: &CcaModel, p: &AlignmentMatrix, data: &DatasetPair, gamma1: f64, gamma2: f64) -> Result<f64> {
    let n = data.n();
    if p.n() != n {
        return Err(parameter(format!(
            "alignment is {0}x{0} but the views have {n} columns",
            p.n()
        )));
    }
    if model.u.ncols() != data.x.nrows() || model.v.ncols() != data.y.nrows() || model.s.ncols() != n {
        return Err(parameter("model dimensions do not match the views"));
    }
    let yp = &data.y * p.matrix();
    let (row_pen, col_pen) = orthogonality_penalties(p.matrix());
    Ok(
        fro2(&(&model.u * &data.x - &model.s))
            + fro2(&(&model.v * yp - &model.s))
            + gamma1 * row_pen
            + gamma2 * col_pen,
    )
}

pub fn fit_acca(data: &DatasetPair, hp: &HyperParams, p_init: &AlignmentMatrix) -> Result<FitResult> {
    fit_acca_observed(data, hp, p_init, |_| {})
}

/// [`fit_acca`] with a callback invoked after every outer iteration.
pub fn fit_acca_observed<F>(
    data: &DatasetPair,
    hp: &HyperParams,
    p_init: &AlignmentMatrix,
    mut observe: F,
) -> Result<FitResult>
where
    F: FnMut(&IterationSnapshot<'_>),
{
    data.require_centered()?;
    let n = data.n();
    hp.validate(n)?;
    if p_init.n() != n {
        return Err(parameter(format!(
            "initial alignment is {0}x{0} but the views have {n} columns",
            p_init.n()
        )));
    }
    p_init.check(hp.lambda)?;

    let mut alignment = p_init.clone();
    let mut model = None;
    let mut trace: Vec<f64> = Vec::new();
    let mut low_improvement = 0;
    let mut stop_reason = StopReason::MaxIters;

    for iteration in 1..=hp.outer_max_iters {
        let p = alignment.matrix();
        let yp = &data.y * p;
        let s = update_s(&data.x, &yp, hp.d, hp.rank_rtol)?;
        let u = update_u(&data.x, &s, hp.rank_rtol)?;
        let v = update_v(&data.y, p, &s, hp.rank_rtol)?;

        let prob = PStepProblem::new(&v * &data.y, s.clone(), hp.gamma1, hp.gamma2, hp.lambda, hp.p_step)?;
        alignment = solve_p_step(&alignment, &prob)?.alignment;
        let current = CcaModel { u, v, s };

        let loss = acca_loss(&current, &alignment, data, hp.gamma1, hp.gamma2)?;
        if !loss.is_finite() {
            return Err(AccaError::Numerical {
                iteration,
                msg: format!("loss evaluated to {loss}"),
            });
        }
        observe(&IterationSnapshot {
            iteration,
            loss,
            model: &current,
            alignment: &alignment,
        });
        model = Some(current);

        if let Some(&prev) = trace.last() {
            let rel = (prev - loss) / prev.abs().max(f64::MIN_POSITIVE);
            if rel < hp.loss_rel_tol {
                low_improvement += 1;
            } else {
                low_improvement = 0;
            }
        }
        trace.push(loss);

        if loss <= hp.loss_threshold {
            stop_reason = StopReason::Threshold;
            break;
        }
        if low_improvement >= STALL_WINDOW {
            stop_reason = StopReason::Stalled;
            break;
        }
    }

    Ok(FitResult {
        model: model.expect("at least one outer iteration runs"),
        alignment,
        iterations_run: trace.len(),
        loss_trace: trace,
        stop_reason,
    })
}

/// Runs `job` for every seed on the rayon pool; results come back in seed order.
pub fn par_map_seeds<T, F>(seeds: &[u64], job: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    seeds.par_iter().map(|&s| job(s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cca::{cca_objective, classical_cca};
    use crate::linalg::Matrix;
    use crate::synth::{plant_identity, GenConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gauss(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
    }

    #[test]
    fn loss_vanishes_on_perfect_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = gauss(4, 8, &mut rng);
        let data = DatasetPair::centered(x.clone(), x).unwrap();
        let model = classical_cca(&data, 3, 1e-10).unwrap();
        let loss = acca_loss(&model, &AlignmentMatrix::identity(8), &data, 0.5, 0.5).unwrap();
        assert!(loss < 1e-10);
    }

    #[test]
    fn zero_alignment_pays_penalties() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = DatasetPair::centered(gauss(3, 6, &mut rng), gauss(2, 6, &mut rng)).unwrap();
        let model = classical_cca(&data, 2, 1e-10).unwrap();
        let zero = AlignmentMatrix::unchecked(Matrix::zeros(6, 6)).unwrap();
        let with = acca_loss(&model, &zero, &data, 0.3, 0.2).unwrap();
        let without = acca_loss(&model, &zero, &data, 0.0, 0.0).unwrap();
        assert!((with - without - 0.5 * 6.0).abs() < 1e-12);
    }

    #[test]
    fn loss_matches_term_by_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = DatasetPair::centered(gauss(3, 5, &mut rng), gauss(4, 5, &mut rng)).unwrap();
        let model = CcaModel {
            u: gauss(2, 3, &mut rng),
            v: gauss(2, 4, &mut rng),
            s: gauss(2, 5, &mut rng),
        };
        let p = gauss(5, 5, &mut rng);
        let (g1, g2) = (0.1, 0.7);
        let mut want = 0.0;
        let ux = &model.u * &data.x;
        let vyp = &model.v * &data.y * &p;
        for i in 0..2 {
            for j in 0..5 {
                want += (ux[(i, j)] - model.s[(i, j)]).powi(2) + (vyp[(i, j)] - model.s[(i, j)]).powi(2);
            }
        }
        for i in 0..5 {
            for j in 0..5 {
                let e = if i == j { 1.0 } else { 0.0 };
                let ppt: f64 = (0..5).map(|k| p[(i, k)] * p[(j, k)]).sum();
                let ptp: f64 = (0..5).map(|k| p[(k, i)] * p[(k, j)]).sum();
                want += g1 * (ppt - e).powi(2) + g2 * (ptp - e).powi(2);
            }
        }
        let got = acca_loss(&model, &AlignmentMatrix::unchecked(p).unwrap(), &data, g1, g2).unwrap();
        assert!((got - want).abs() < 1e-10 * want);
    }

    #[test]
    fn aligned_instance_is_a_fixed_point() {
        let inst = plant_identity(&GenConfig::default().with_seed(4)).unwrap();
        let hp = HyperParams::default();
        let fit = fit_acca(&inst.data, &hp, &AlignmentMatrix::identity(20)).unwrap();
        let cca = classical_cca(&inst.data, hp.d, hp.rank_rtol).unwrap();
        let residual = cca_objective(&cca, &inst.data.x, &inst.data.y);
        assert!((fit.loss_trace[0] - residual).abs() < 1e-8);
        assert_eq!(fit.stop_reason, StopReason::Stalled);
        assert_eq!(fit.iterations_run, STALL_WINDOW + 1);
        assert!((fit.alignment.matrix() - Matrix::identity(20, 20)).amax() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let inst = plant_identity(&GenConfig::default()).unwrap();
        let hp = HyperParams::default();
        let bad = AlignmentMatrix::unchecked(Matrix::from_element(20, 20, 0.5)).unwrap();
        assert!(matches!(fit_acca(&inst.data, &hp, &bad), Err(AccaError::Contract(_))));
        let too_big = HyperParams { lambda: 3.5, ..hp };
        assert!(matches!(
            fit_acca(&inst.data, &too_big, &AlignmentMatrix::identity(20)),
            Err(AccaError::Parameter(_))
        ));
        let raw = DatasetPair::new(inst.data.x.add_scalar(1.0), inst.data.y.clone()).unwrap();
        assert!(fit_acca(&raw, &hp, &AlignmentMatrix::identity(20)).is_err());
    }

    #[test]
    fn threshold_stop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = gauss(4, 8, &mut rng);
        let data = DatasetPair::centered(x.clone(), x).unwrap();
        let hp = HyperParams {
            d: 3,
            ..HyperParams::default()
        };
        let fit = fit_acca(&data, &hp, &AlignmentMatrix::identity(8)).unwrap();
        assert_eq!(fit.stop_reason, StopReason::Threshold);
        assert_eq!(fit.iterations_run, 1);
    }

    #[test]
    fn parallel_map_keeps_seed_order() {
        let seeds: Vec<u64> = (0..32).collect();
        assert_eq!(
            par_map_seeds(&seeds, |s| s * 2),
            seeds.iter().map(|s| s * 2).collect::<Vec<_>>()
        );
    }
}
