//! Monte Carlo checks of the three stochastic consensus modes: convergence
//! of the mean state, vanishing exceedance probability of the max-min gap,
//! and pathwise monotone decay of that gap.
//!
//! Runs are independent ChaCha streams of one master seed and aggregate in
//! run order, so every statistic is reproducible regardless of how the runs
//! are scheduled.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{SamplingScheme, StateVector};
use crate::switching::{self, SwitchingEnsemble};
use crate::{analysis, Error, Result};

/// Terminal-gap threshold used when the caller does not supply one.
pub const DEFAULT_TERMINAL_GAP: f64 = 1e-6;

/// Pathwise slack for the gap monotonicity check, absorbing rounding in the
/// convex-combination update.
const MONOTONE_TOLERANCE: f64 = 1e-12;

/// Five-number summary of the max-min gap across runs at one dwell
/// boundary. Quantiles are nearest-rank from the sorted sample.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GapQuantiles {
    /// Dwell boundary index (0 = initial state).
    pub interval: usize,
    /// Time of that boundary.
    pub time: f64,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

/// Empirical `P{gap >= epsilon}` at one dwell boundary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Exceedance {
    pub interval: usize,
    pub epsilon: f64,
    pub probability: f64,
}

/// Aggregated outcome of a batch of seeded runs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnsembleStats {
    pub n_runs: usize,
    /// Number of dwell intervals per run.
    pub horizon: usize,
    pub seed: u64,
    /// Per-agent empirical mean of the terminal states.
    pub mean_state: Vec<f64>,
    /// Per-agent standard error of that mean (runs are the samples).
    pub std_error: Vec<f64>,
    /// `pi' x0` when the expected transition admits a stationary vector.
    pub predicted_consensus: Option<f64>,
    /// Largest per-agent deviation of `mean_state` from the prediction.
    pub max_mean_deviation: Option<f64>,
    /// Gap summaries at evenly spaced dwell boundaries, always including
    /// the initial state and the horizon.
    pub gap_quantiles: Vec<GapQuantiles>,
    /// One row per checkpoint per requested epsilon.
    pub prob_exceed: Vec<Exceedance>,
    /// Whether each run's gap sequence was nonincreasing at every boundary.
    pub per_run_monotone: Vec<bool>,
    pub monotone_violations: usize,
    /// Times each ensemble graph was drawn, totalled over all runs.
    pub switch_counts: Vec<u64>,
    /// Largest terminal gap over all runs.
    pub terminal_gap_max: f64,
    pub terminal_gap_threshold: f64,
    /// Runs whose terminal gap fell below the threshold.
    pub runs_below_threshold: usize,
}

fn gap_of(x: &DVector<f64>) -> f64 {
    let mut max = f64::NEG_INFINITY;
    let mut min = f64::INFINITY;
    for &v in x.iter() {
        max = max.max(v);
        min = min.min(v);
    }
    max - min
}

/// Dwell boundaries at which gap statistics are recorded: every boundary up
/// to a horizon of 20, then about 20 evenly spaced ones, always with both
/// endpoints.
fn checkpoint_intervals(horizon: usize) -> Vec<usize> {
    if horizon <= 20 {
        (0..=horizon).collect()
    } else {
        let step = horizon.div_ceil(20);
        let mut cps: Vec<usize> = (0..=horizon).step_by(step).collect();
        if *cps.last().expect("nonempty") != horizon {
            cps.push(horizon);
        }
        cps
    }
}

struct RunOutcome {
    terminal: Vec<f64>,
    checkpoint_gaps: Vec<f64>,
    monotone: bool,
    counts: Vec<u32>,
}

/// Full-control Monte Carlo entry point behind the three convenience
/// wrappers: any combination of exceedance levels and terminal-gap
/// threshold. Runs execute in parallel but are reduced in run order, so the
/// result depends only on the arguments.
pub fn run_monte_carlo(
    ensemble: &SwitchingEnsemble,
    scheme: &SamplingScheme,
    x0: &StateVector,
    n_runs: usize,
    horizon: usize,
    seed: u64,
    epsilons: &[f64],
    terminal_gap_threshold: f64,
) -> Result<EnsembleStats> {
    if n_runs == 0 {
        return Err(Error::InvalidArgument("need at least one run".into()));
    }
    if x0.n() != ensemble.n() {
        return Err(Error::DimensionMismatch(format!(
            "initial state has {} agents but ensemble has {}",
            x0.n(),
            ensemble.n()
        )));
    }
    for &eps in epsilons {
        if !eps.is_finite() || eps <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "exceedance level {eps} must be positive"
            )));
        }
    }
    if !terminal_gap_threshold.is_finite() || terminal_gap_threshold <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "terminal-gap threshold {terminal_gap_threshold} must be positive"
        )));
    }

    let transitions = switching::dwell_transitions(ensemble, scheme)?;
    let n = ensemble.n();
    let n_graphs = ensemble.len();
    let probs = ensemble.probs().to_vec();
    let checkpoints = checkpoint_intervals(horizon);

    let outcomes: Vec<RunOutcome> = (0..n_runs)
        .into_par_iter()
        .map_init(
            || (DVector::<f64>::zeros(n), DVector::<f64>::zeros(n)),
            |(x, next), run| {
                let mut rng = switching::run_stream(seed, run as u64);
                x.copy_from(x0.x());
                let mut prev_gap = gap_of(x);
                let mut monotone = true;
                let mut checkpoint_gaps = vec![0.0; checkpoints.len()];
                checkpoint_gaps[0] = prev_gap;
                let mut cp = 1;
                let mut counts = vec![0u32; n_graphs];
                for interval in 0..horizon {
                    let idx = switching::draw_index(&mut rng, &probs);
                    counts[idx] += 1;
                    next.gemv(1.0, &transitions[idx], x, 0.0);
                    std::mem::swap(x, next);
                    let g = gap_of(x);
                    if g > prev_gap + MONOTONE_TOLERANCE {
                        monotone = false;
                    }
                    prev_gap = g;
                    if cp < checkpoints.len() && checkpoints[cp] == interval + 1 {
                        checkpoint_gaps[cp] = g;
                        cp += 1;
                    }
                }
                RunOutcome {
                    terminal: x.as_slice().to_vec(),
                    checkpoint_gaps,
                    monotone,
                    counts,
                }
            },
        )
        .collect();

    let mut mean_state = vec![0.0; n];
    for outcome in &outcomes {
        for (m, &v) in mean_state.iter_mut().zip(&outcome.terminal) {
            *m += v;
        }
    }
    for m in &mut mean_state {
        *m /= n_runs as f64;
    }
    let mut std_error = vec![0.0; n];
    if n_runs > 1 {
        for outcome in &outcomes {
            for i in 0..n {
                let d = outcome.terminal[i] - mean_state[i];
                std_error[i] += d * d;
            }
        }
        for s in &mut std_error {
            *s = (*s / (n_runs as f64 * (n_runs - 1) as f64)).sqrt();
        }
    }

    let mut gap_quantiles = Vec::with_capacity(checkpoints.len());
    let mut prob_exceed = Vec::with_capacity(checkpoints.len() * epsilons.len());
    let mut terminal_gap_max = 0.0f64;
    let mut runs_below_threshold = 0;
    let mut column = vec![0.0; n_runs];
    for (c, &interval) in checkpoints.iter().enumerate() {
        for (run, outcome) in outcomes.iter().enumerate() {
            column[run] = outcome.checkpoint_gaps[c];
        }
        for &epsilon in epsilons {
            let hits = column.iter().filter(|&&g| g >= epsilon).count();
            prob_exceed.push(Exceedance {
                interval,
                epsilon,
                probability: hits as f64 / n_runs as f64,
            });
        }
        if interval == horizon {
            terminal_gap_max = column.iter().fold(0.0f64, |a, &g| a.max(g));
            runs_below_threshold = column.iter().filter(|&&g| g < terminal_gap_threshold).count();
        }
        column.sort_unstable_by(|a, b| a.partial_cmp(b).expect("gaps are finite"));
        let last = n_runs - 1;
        gap_quantiles.push(GapQuantiles {
            interval,
            time: x0.t() + interval as f64 * scheme.delta_t(),
            min: column[0],
            q25: column[last / 4],
            median: column[last / 2],
            q75: column[3 * last / 4],
            max: column[last],
        });
    }

    let per_run_monotone: Vec<bool> = outcomes.iter().map(|o| o.monotone).collect();
    let monotone_violations = per_run_monotone.iter().filter(|&&m| !m).count();
    let mut switch_counts = vec![0u64; n_graphs];
    for outcome in &outcomes {
        for (total, &c) in switch_counts.iter_mut().zip(&outcome.counts) {
            *total += u64::from(c);
        }
    }

    let predicted_consensus = analysis::expected_transition(ensemble, scheme)
        .and_then(|w| analysis::stationary_vector(&w))
        .and_then(|pi| analysis::consensus_value(&pi, x0))
        .ok();
    let max_mean_deviation = predicted_consensus.map(|p| {
        mean_state
            .iter()
            .map(|&m| (m - p).abs())
            .fold(0.0f64, f64::max)
    });

    Ok(EnsembleStats {
        n_runs,
        horizon,
        seed,
        mean_state,
        std_error,
        predicted_consensus,
        max_mean_deviation,
        gap_quantiles,
        prob_exceed,
        per_run_monotone,
        monotone_violations,
        switch_counts,
        terminal_gap_max,
        terminal_gap_threshold,
        runs_below_threshold,
    })
}

/// Estimates the limit of the expected state: runs `n_runs` seeded paths
/// for `horizon` dwell intervals and reports per-agent terminal means,
/// standard errors, and the deviation from the predicted consensus value
/// `pi' x0` when one is available.
pub fn estimate_mean_consensus(
    ensemble: &SwitchingEnsemble,
    scheme: &SamplingScheme,
    x0: &StateVector,
    n_runs: usize,
    horizon: usize,
    seed: u64,
) -> Result<EnsembleStats> {
    run_monte_carlo(
        ensemble,
        scheme,
        x0,
        n_runs,
        horizon,
        seed,
        &[],
        DEFAULT_TERMINAL_GAP,
    )
}

/// Estimates `P{gap >= epsilon}` at each checkpoint for each requested
/// level. The gap is pathwise nonincreasing, so these probabilities fall
/// with the horizon up to sampling noise.
pub fn estimate_probability_consensus(
    ensemble: &SwitchingEnsemble,
    scheme: &SamplingScheme,
    x0: &StateVector,
    n_runs: usize,
    horizon: usize,
    seed: u64,
    epsilons: &[f64],
) -> Result<EnsembleStats> {
    if epsilons.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least one exceedance level".into(),
        ));
    }
    run_monte_carlo(
        ensemble,
        scheme,
        x0,
        n_runs,
        horizon,
        seed,
        epsilons,
        DEFAULT_TERMINAL_GAP,
    )
}

/// Checks the pathwise behavior behind almost-sure consensus: every run's
/// gap sequence must be nonincreasing at dwell boundaries, and the caller
/// asserts on how many runs finished below the terminal threshold.
pub fn check_almost_sure(
    ensemble: &SwitchingEnsemble,
    scheme: &SamplingScheme,
    x0: &StateVector,
    n_runs: usize,
    horizon: usize,
    seed: u64,
    terminal_gap_threshold: f64,
) -> Result<EnsembleStats> {
    run_monte_carlo(
        ensemble,
        scheme,
        x0,
        n_runs,
        horizon,
        seed,
        &[],
        terminal_gap_threshold,
    )
}
