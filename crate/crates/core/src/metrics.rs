//! Top-k matching accuracy and Monte Carlo aggregation.

use serde::{Deserialize, Serialize};

use crate::align::initialize_alignment;
use crate::driver::{fit_acca, par_map_seeds, HyperParams, StopReason};
use crate::error::{contract, parameter, Result};
use crate::linalg::Matrix;
use crate::synth::{generate, GenConfig};

/// Column index of the single one in each row of a permutation matrix.
pub fn permutation_targets(p_true: &Matrix) -> Result<Vec<usize>> {
    let n = p_true.nrows();
    if !p_true.is_square() {
        return Err(contract(format!(
            "ground truth must be square, got {}x{}",
            p_true.nrows(),
            p_true.ncols()
        )));
    }
    let mut targets = Vec::with_capacity(n);
    let mut col_seen = vec![false; n];
    for (i, row) in p_true.row_iter().enumerate() {
        let mut hit = None;
        for (j, &v) in row.iter().enumerate() {
            if v == 1.0 {
                if hit.is_some() {
                    return Err(contract(format!("ground truth row {i} has more than one 1")));
                }
                hit = Some(j);
            } else if v != 0.0 {
                return Err(contract(format!("ground truth entry ({i}, {j}) = {v} is not binary")));
            }
        }
        let j = hit.ok_or_else(|| contract(format!("ground truth row {i} has no 1")))?;
        if col_seen[j] {
            return Err(contract(format!("ground truth column {j} is hit twice")));
        }
        col_seen[j] = true;
        targets.push(j);
    }
    Ok(targets)
}

/// Indices of the `k` largest entries of `row`, ties to the lowest index.
fn top_k_indices(row: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    // stable: equal values keep ascending index order
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
    idx.truncate(k);
    idx
}

/// Fraction of rows of `p` whose `k` largest entries include the true column.
pub fn topk_accuracy(p: &Matrix, p_true: &Matrix, k: usize) -> Result<f64> {
    let targets = permutation_targets(p_true)?;
    topk_against(p, &targets, k)
}

fn topk_against(p: &Matrix, targets: &[usize], k: usize) -> Result<f64> {
    let n = targets.len();
    if p.nrows() != n || p.ncols() != n {
        return Err(parameter(format!(
            "estimate is {}x{}, expected {n}x{n}",
            p.nrows(),
            p.ncols()
        )));
    }
    if k == 0 || k > n {
        return Err(parameter(format!("k={k} must lie in 1..={n}")));
    }
    let mut row = vec![0.0; n];
    let mut hits = 0usize;
    for (i, &target) in targets.iter().enumerate() {
        for (j, r) in row.iter_mut().enumerate() {
            *r = p[(i, j)];
        }
        if top_k_indices(&row, k).contains(&target) {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}

/// Expected top-k accuracy of a uniformly random guess.
pub fn baseline_accuracy(n: usize, k: usize) -> f64 {
    k as f64 / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKReport {
    pub k_values: Vec<usize>,
    pub accuracy_mean: Vec<f64>,
    pub accuracy_std: Vec<f64>,
    pub baseline: Vec<f64>,
    pub replicates: usize,
}

impl TopKReport {
    /// Aggregates per-replicate accuracy rows (`rows[r][i]` is replicate `r` at `k_values[i]`).
    pub fn from_rows(n: usize, k_values: &[usize], rows: &[Vec<f64>]) -> Self {
        let (accuracy_mean, accuracy_std) = (0..k_values.len()).map(|i| mean_std(rows.iter().map(|r| r[i]))).unzip();
        Self {
            k_values: k_values.to_vec(),
            accuracy_mean,
            accuracy_std,
            baseline: k_values.iter().map(|&k| baseline_accuracy(n, k)).collect(),
            replicates: rows.len(),
        }
    }

    pub fn mean_at(&self, k: usize) -> Option<f64> {
        self.k_values
            .iter()
            .position(|&v| v == k)
            .map(|i| self.accuracy_mean[i])
    }
}

/// Population mean and standard deviation, accumulated in iteration order.
pub fn mean_std(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-replicate record kept in Monte Carlo reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub seed: u64,
    pub iterations: usize,
    pub stop_reason: StopReason,
    pub loss_trace: Vec<f64>,
    pub initial_accuracy: Vec<f64>,
    pub accuracy: Vec<f64>,
    pub mean_row_entropy: f64,
    #[serde(skip)]
    pub alignment: Matrix,
    #[serde(skip)]
    pub p_true: Matrix,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub topk: TopKReport,
    /// Accuracy of the direct-matching initializer alone.
    pub initial_topk: TopKReport,
    pub loss_mean: Vec<f64>,
    pub loss_std: Vec<f64>,
    pub mean_row_entropy: f64,
    pub failures: usize,
    pub failure_messages: Vec<String>,
    pub outcomes: Vec<ReplicateOutcome>,
}

/// Runs one generate → initialize → fit → score replicate.
pub fn run_replicate(hp: &HyperParams, config: &GenConfig, k_values: &[usize]) -> Result<ReplicateOutcome> {
    let inst = generate(config)?;
    let init = initialize_alignment(&inst.data, hp.gamma1, hp.gamma2, hp.lambda, hp.rank_rtol, &hp.init)?;
    let targets = permutation_targets(&inst.p_true)?;
    let initial_accuracy = k_values
        .iter()
        .map(|&k| topk_against(init.matrix(), &targets, k))
        .collect::<Result<Vec<_>>>()?;
    let fit = fit_acca(&inst.data, hp, &init)?;
    let accuracy = k_values
        .iter()
        .map(|&k| topk_against(fit.alignment.matrix(), &targets, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(ReplicateOutcome {
        seed: config.seed,
        iterations: fit.iterations_run,
        stop_reason: fit.stop_reason,
        mean_row_entropy: fit.alignment.mean_row_entropy(),
        loss_trace: fit.loss_trace,
        initial_accuracy,
        accuracy,
        alignment: fit.alignment.into_matrix(),
        p_true: inst.p_true,
    })
}

/// Replicate `r` uses generator seed `config.seed + r`. Replicates run in
/// parallel; aggregation happens in seed order, so results do not depend on
/// scheduling. Loss traces are right-padded with their final value before
/// averaging.
pub fn monte_carlo(
    hp: &HyperParams,
    config: &GenConfig,
    replicates: usize,
    k_values: &[usize],
) -> Result<MonteCarloReport> {
    if replicates == 0 {
        return Err(parameter("need at least one replicate"));
    }
    config.validate()?;
    hp.validate(config.n)?;
    for &k in k_values {
        if k == 0 || k > config.n {
            return Err(parameter(format!("k={k} must lie in 1..={}", config.n)));
        }
    }
    let seeds: Vec<u64> = (0..replicates as u64).map(|r| config.seed + r).collect();
    let results = par_map_seeds(&seeds, |seed| run_replicate(hp, &config.with_seed(seed), k_values));

    let mut outcomes = Vec::new();
    let mut failure_messages = Vec::new();
    for (seed, res) in seeds.iter().zip(results) {
        match res {
            Ok(o) => outcomes.push(o),
            Err(e) => failure_messages.push(format!("seed {seed}: {e}")),
        }
    }
    if outcomes.is_empty() {
        return Err(crate::error::AccaError::Numerical {
            iteration: 0,
            msg: format!("every replicate failed: {}", failure_messages.join("; ")),
        });
    }

    let len = outcomes.iter().map(|o| o.loss_trace.len()).max().unwrap_or(0);
    let padded: Vec<Vec<f64>> = outcomes
        .iter()
        .map(|o| {
            let mut t = o.loss_trace.clone();
            let last = *t.last().expect("non-empty trace");
            t.resize(len, last);
            t
        })
        .collect();
    let (loss_mean, loss_std) = (0..len).map(|i| mean_std(padded.iter().map(|t| t[i]))).unzip();

    let acc_rows: Vec<Vec<f64>> = outcomes.iter().map(|o| o.accuracy.clone()).collect();
    let init_rows: Vec<Vec<f64>> = outcomes.iter().map(|o| o.initial_accuracy.clone()).collect();
    let (mean_row_entropy, _) = mean_std(outcomes.iter().map(|o| o.mean_row_entropy));

    Ok(MonteCarloReport {
        topk: TopKReport::from_rows(config.n, k_values, &acc_rows),
        initial_topk: TopKReport::from_rows(config.n, k_values, &init_rows),
        loss_mean,
        loss_std,
        mean_row_entropy,
        failures: failure_messages.len(),
        failure_messages,
        outcomes,
    })
}
