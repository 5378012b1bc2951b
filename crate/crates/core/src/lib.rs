//! Aligned canonical correlation analysis.
//!
//! Jointly estimates a shared low-dimensional embedding of two data views and
//! the unknown one-to-one correspondence between their columns. The
//! correspondence is relaxed to a row-stochastic matrix whose rows have
//! bounded entropy, and the problem is solved by alternating closed-form CCA
//! updates with a projected-gradient step on the alignment.
//!
//! ```no_run
//! use acca::{generate, initialize_alignment, fit_acca, GenConfig, HyperParams};
//!
//! let inst = generate(&GenConfig::default()).unwrap();
//! let hp = HyperParams::default();
//! let p0 = initialize_alignment(&inst.data, hp.gamma1, hp.gamma2, hp.lambda, hp.rank_rtol, &hp.init).unwrap();
//! let fit = fit_acca(&inst.data, &hp, &p0).unwrap();
//! println!("final loss {}", fit.loss_trace.last().unwrap());
//! ```

pub mod align;
pub mod cca;
pub mod driver;
pub mod error;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod synth;

pub use align::{
    initialize_alignment, p_gradient, p_objective, project_row_feasible, round_to_permutation, row_entropy,
    solve_p_step, AlignmentMatrix, FeasibilityReport, InitOptions, PStepProblem, Reconcile, SolverTol,
};
pub use cca::{center_columns, classical_cca, update_s, update_u, update_v, CcaModel, DatasetPair};
pub use driver::{acca_loss, fit_acca, fit_acca_observed, FitResult, HyperParams, StopReason};
pub use error::{AccaError, Result};
pub use linalg::{pinv_gram, rowspace_projector, sym_eig, EigenResult, Matrix};
pub use metrics::{baseline_accuracy, monte_carlo, topk_accuracy, MonteCarloReport, TopKReport};
pub use synth::{generate, plant_identity, GenConfig, SyntheticInstance};
