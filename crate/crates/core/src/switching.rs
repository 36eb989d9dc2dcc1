//! Randomly switching topologies: a finite graph ensemble with switching
//! probabilities, the two-agent fault scenario that generates one, seeded
//! switching signals, and trajectory simulation under them.

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{self, SamplingScheme, StateVector};
use crate::graph::{FaultSpec, Graph};
use crate::{Error, Result};

/// Which direction of communication a faulty agent loses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaultKind {
    /// The agent stops receiving: its adjacency row drops out.
    Receive,
    /// The agent stops sending: its adjacency column drops out.
    Send,
}

/// A finite set of candidate graphs with switching probabilities. At every
/// dwell interval one graph is drawn independently with these weights;
/// `base_index` marks the fault-free topology the others perturb.
#[derive(Clone, Debug, PartialEq)]
pub struct SwitchingEnsemble {
    graphs: Vec<Graph>,
    probs: Vec<f64>,
    base_index: usize,
}

impl SwitchingEnsemble {
    /// Validates and wraps an ensemble. Probabilities must be strictly
    /// positive and sum to one, which leaves the degenerate single-graph
    /// ensemble (probability exactly one) available for fault-free runs.
    pub fn new(graphs: Vec<Graph>, probs: Vec<f64>, base_index: usize) -> Result<Self> {
        if graphs.is_empty() {
            return Err(Error::InvalidEnsemble("ensemble needs a graph".into()));
        }
        if graphs.len() != probs.len() {
            return Err(Error::InvalidEnsemble(format!(
                "{} graphs but {} probabilities",
                graphs.len(),
                probs.len()
            )));
        }
        let n = graphs[0].n();
        if graphs.iter().any(|g| g.n() != n) {
            return Err(Error::InvalidEnsemble(
                "all graphs must share the same agent count".into(),
            ));
        }
        if base_index >= graphs.len() {
            return Err(Error::InvalidEnsemble(format!(
                "base index {base_index} out of range for {} graphs",
                graphs.len()
            )));
        }
        for &p in &probs {
            if !p.is_finite() || p <= 0.0 || p > 1.0 {
                return Err(Error::InvalidEnsemble(format!(
                    "probability {p} must lie in (0, 1]"
                )));
            }
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidEnsemble(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(SwitchingEnsemble {
            graphs,
            probs,
            base_index,
        })
    }

    /// The two-faulty-agent scenario: graphs `[only a faulty, only b faulty,
    /// both faulty, fault free]` drawn with probabilities
    /// `[alpha, beta, gamma, theta]`. The base graph must be undirected and
    /// connected, and every probability strictly inside `(0, 1)`.
    pub fn scenario(
        base: &Graph,
        kind: FaultKind,
        agents: (usize, usize),
        probs: [f64; 4],
    ) -> Result<Self> {
        let (a, b) = agents;
        if a == b {
            return Err(Error::InvalidEnsemble(
                "the two faulty agents must be distinct".into(),
            ));
        }
        if !base.is_undirected() {
            return Err(Error::InvalidEnsemble(
                "fault scenario needs an undirected base graph".into(),
            ));
        }
        if !base.is_strongly_connected() {
            return Err(Error::InvalidEnsemble(
                "fault scenario needs a connected base graph".into(),
            ));
        }
        for &p in &probs {
            if !p.is_finite() || p <= 0.0 || p >= 1.0 {
                return Err(Error::InvalidEnsemble(format!(
                    "scenario probability {p} must lie strictly inside (0, 1)"
                )));
            }
        }
        let fault = |agents: &[usize]| match kind {
            FaultKind::Receive => FaultSpec::receive(agents),
            FaultKind::Send => FaultSpec::send(agents),
        };
        let graphs = vec![
            base.apply_fault(&fault(&[a]))?,
            base.apply_fault(&fault(&[b]))?,
            base.apply_fault(&fault(&[a, b]))?,
            base.clone(),
        ];
        SwitchingEnsemble::new(graphs, probs.to_vec(), 3)
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn base_index(&self) -> usize {
        self.base_index
    }

    pub fn base_graph(&self) -> &Graph {
        &self.graphs[self.base_index]
    }

    pub fn n(&self) -> usize {
        self.graphs[0].n()
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Largest in-degree across the ensemble; the sampling period must stay
    /// below its reciprocal for every candidate graph.
    pub fn max_degree(&self) -> f64 {
        self.graphs
            .iter()
            .map(Graph::max_degree)
            .fold(0.0, f64::max)
    }

    /// Probability-weighted average of the adjacency matrices.
    pub fn expected_graph(&self) -> Graph {
        let n = self.n();
        let mut adj = DMatrix::<f64>::zeros(n, n);
        for (g, &p) in self.graphs.iter().zip(&self.probs) {
            adj += p * g.adj();
        }
        Graph::new(adj).expect("convex combination of adjacencies is valid")
    }

    /// Checks the sampling period against every graph in the ensemble.
    pub fn validate_scheme(&self, scheme: &SamplingScheme) -> Result<()> {
        scheme.validate_degree(self.max_degree())
    }
}

/// Per-graph dwell transitions, indexed like the ensemble.
pub fn dwell_transitions(
    ensemble: &SwitchingEnsemble,
    scheme: &SamplingScheme,
) -> Result<Vec<DMatrix<f64>>> {
    ensemble
        .graphs()
        .iter()
        .map(|g| dynamics::dwell_transition(&g.laplacian(), scheme))
        .collect()
}

/// RNG for one Monte Carlo run: all runs share the master seed and each run
/// takes its own ChaCha stream, so runs are independent yet individually
/// reproducible.
pub(crate) fn run_stream(master_seed: u64, run_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(run_index);
    rng
}

/// Draws an index with the given weights from one uniform variate.
pub(crate) fn draw_index(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Switching signal for run `run_index` under the given master seed: one
/// independently drawn graph index per dwell interval.
pub fn switch_sequence_for_run(
    ensemble: &SwitchingEnsemble,
    n_intervals: usize,
    master_seed: u64,
    run_index: u64,
) -> Vec<usize> {
    let mut rng = run_stream(master_seed, run_index);
    (0..n_intervals)
        .map(|_| draw_index(&mut rng, ensemble.probs()))
        .collect()
}

/// Switching signal for a single run; identical to run index 0 of the same
/// seed.
pub fn sample_switch_sequence(
    ensemble: &SwitchingEnsemble,
    n_intervals: usize,
    seed: u64,
) -> Vec<usize> {
    switch_sequence_for_run(ensemble, n_intervals, seed, 0)
}

/// A simulated path: states at every recorded time plus the switching
/// signal that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<nalgebra::DVector<f64>>,
    switch_log: Vec<usize>,
    steps_per_dwell: usize,
}

impl Trajectory {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[nalgebra::DVector<f64>] {
        &self.states
    }

    /// Graph index chosen for each dwell interval, in order.
    pub fn switch_log(&self) -> &[usize] {
        &self.switch_log
    }

    pub fn n(&self) -> usize {
        self.states[0].len()
    }

    /// Number of recorded states, including the initial one.
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Graph index in effect from the row's timestamp until the next row;
    /// the final row repeats the last interval.
    pub fn graph_index_at_row(&self, row: usize) -> usize {
        let interval = (row / self.steps_per_dwell).min(self.switch_log.len() - 1);
        self.switch_log[interval]
    }

    /// Spread `max - min` of the state at each recorded row.
    pub fn gaps(&self) -> Vec<f64> {
        self.states
            .iter()
            .map(|x| {
                let max = x.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
                let min = x.iter().fold(f64::INFINITY, |a, &v| a.min(v));
                max - min
            })
            .collect()
    }

    /// Writes `t, x_0, ..., x_{n-1}, graph_index` rows; floats are printed
    /// with round-trip precision.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "t")?;
        for i in 0..self.n() {
            write!(out, ", x_{i}")?;
        }
        writeln!(out, ", graph_index")?;
        for (row, (t, x)) in self.times.iter().zip(&self.states).enumerate() {
            write!(out, "{t}")?;
            for v in x.iter() {
                write!(out, ", {v}")?;
            }
            writeln!(out, ", {}", self.graph_index_at_row(row))?;
        }
        Ok(())
    }
}

/// Runs the protocol under a switching signal drawn from `seed`. In sampled
/// mode every delta-operator sample is recorded and the states are exactly
/// those produced by repeated [`dynamics::delta_step`]; in the continuous
/// limit one state per dwell interval is recorded.
pub fn simulate(
    ensemble: &SwitchingEnsemble,
    scheme: &SamplingScheme,
    x0: &StateVector,
    n_intervals: usize,
    seed: u64,
) -> Result<Trajectory> {
    let sequence = sample_switch_sequence(ensemble, n_intervals, seed);
    replay(ensemble, scheme, x0, &sequence)
}

/// Runs the protocol under an explicit switching signal, one graph index
/// per dwell interval.
pub fn replay(
    ensemble: &SwitchingEnsemble,
    scheme: &SamplingScheme,
    x0: &StateVector,
    sequence: &[usize],
) -> Result<Trajectory> {
    if x0.n() != ensemble.n() {
        return Err(Error::DimensionMismatch(format!(
            "initial state has {} agents but ensemble has {}",
            x0.n(),
            ensemble.n()
        )));
    }
    if sequence.is_empty() {
        return Err(Error::InvalidEnsemble(
            "switching signal needs at least one interval".into(),
        ));
    }
    for &idx in sequence {
        if idx >= ensemble.len() {
            return Err(Error::InvalidEnsemble(format!(
                "switching signal index {idx} out of range for {} graphs",
                ensemble.len()
            )));
        }
    }
    ensemble.validate_scheme(scheme)?;

    let capacity = sequence.len() * scheme.steps_per_dwell() + 1;
    let mut times = Vec::with_capacity(capacity);
    let mut states = Vec::with_capacity(capacity);
    times.push(x0.t());
    states.push(x0.x().clone());

    if scheme.is_continuous() {
        let transitions = dwell_transitions(ensemble, scheme)?;
        let mut x = x0.x().clone();
        let mut t = x0.t();
        for &idx in sequence {
            x = &transitions[idx] * &x;
            t += scheme.delta_t();
            times.push(t);
            states.push(x.clone());
        }
    } else {
        let laplacians: Vec<_> = ensemble.graphs().iter().map(Graph::laplacian).collect();
        let h = scheme.h().expect("sampled scheme has h");
        let mut state = x0.clone();
        for &idx in sequence {
            for _ in 0..scheme.steps_per_dwell() {
                state = dynamics::delta_step(&state, &laplacians[idx], h)?;
                times.push(state.t());
                states.push(state.x().clone());
            }
        }
    }

    Ok(Trajectory {
        times,
        states,
        switch_log: sequence.to_vec(),
        steps_per_dwell: scheme.steps_per_dwell(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::delta_step;

    fn ring_scenario() -> SwitchingEnsemble {
        SwitchingEnsemble::scenario(
            &Graph::ring(5),
            FaultKind::Receive,
            (0, 1),
            [0.3, 0.3, 0.2, 0.2],
        )
        .unwrap()
    }

    #[test]
    fn ensemble_validation_rejects_bad_inputs() {
        let g = Graph::ring(3);
        assert!(SwitchingEnsemble::new(vec![], vec![], 0).is_err());
        assert!(SwitchingEnsemble::new(vec![g.clone()], vec![0.5, 0.5], 0).is_err());
        assert!(SwitchingEnsemble::new(vec![g.clone(), Graph::ring(4)], vec![0.5, 0.5], 0).is_err());
        assert!(SwitchingEnsemble::new(vec![g.clone()], vec![0.9], 0).is_err());
        assert!(SwitchingEnsemble::new(vec![g.clone(), g.clone()], vec![1.1, -0.1], 0).is_err());
        assert!(SwitchingEnsemble::new(vec![g.clone()], vec![1.0], 1).is_err());
        assert!(SwitchingEnsemble::new(vec![g], vec![1.0], 0).is_ok());
    }

    #[test]
    fn scenario_builds_the_four_fault_patterns() {
        let e = ring_scenario();
        assert_eq!(e.len(), 4);
        assert_eq!(e.base_index(), 3);
        assert_eq!(e.probs(), &[0.3, 0.3, 0.2, 0.2]);
        // Graph 0: agent 0 deaf; graph 1: agent 1 deaf; graph 2: both.
        assert!(e.graphs()[0].adj().row(0).iter().all(|&w| w == 0.0));
        assert!(e.graphs()[0].adj().row(1).iter().sum::<f64>() > 0.0);
        assert!(e.graphs()[1].adj().row(1).iter().all(|&w| w == 0.0));
        assert!(e.graphs()[2].adj().row(0).iter().all(|&w| w == 0.0));
        assert!(e.graphs()[2].adj().row(1).iter().all(|&w| w == 0.0));
        assert_eq!(e.graphs()[3], Graph::ring(5));
    }

    #[test]
    fn scenario_send_faults_zero_columns() {
        let e = SwitchingEnsemble::scenario(
            &Graph::ring(4),
            FaultKind::Send,
            (1, 3),
            [0.25, 0.25, 0.25, 0.25],
        )
        .unwrap();
        assert!(e.graphs()[0].adj().column(1).iter().all(|&w| w == 0.0));
        assert!(e.graphs()[2].adj().column(3).iter().all(|&w| w == 0.0));
    }

    #[test]
    fn scenario_rejects_invalid_setups() {
        let base = Graph::ring(5);
        let p = [0.3, 0.3, 0.2, 0.2];
        assert!(SwitchingEnsemble::scenario(&base, FaultKind::Receive, (2, 2), p).is_err());
        assert!(SwitchingEnsemble::scenario(&base, FaultKind::Receive, (0, 1), [0.5, 0.5, 0.0, 0.0])
            .is_err());
        assert!(
            SwitchingEnsemble::scenario(&base, FaultKind::Receive, (0, 1), [0.5, 0.3, 0.1, 0.2])
                .is_err()
        );
        let directed =
            Graph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0)], false).unwrap();
        assert!(SwitchingEnsemble::scenario(&directed, FaultKind::Receive, (0, 1), p).is_err());
        let disconnected = Graph::from_edges(4, &[(0, 1, 1.0), (2, 3, 1.0)], true).unwrap();
        assert!(SwitchingEnsemble::scenario(&disconnected, FaultKind::Receive, (0, 1), p).is_err());
    }

    #[test]
    fn expected_graph_weights_rows_by_uptime() {
        let e = ring_scenario();
        let expected = e.expected_graph();
        // Agent 0 hears its neighbors unless graph 0 or 2 is active.
        assert!((expected.adj()[(0, 1)] - 0.5).abs() < 1e-15);
        assert!((expected.adj()[(0, 4)] - 0.5).abs() < 1e-15);
        // Agent 1 likewise misses graphs 1 and 2.
        assert!((expected.adj()[(1, 0)] - 0.5).abs() < 1e-15);
        // Healthy agents always listen.
        assert!((expected.adj()[(2, 3)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn switch_sequences_are_seeded_and_stream_separated() {
        let e = ring_scenario();
        let a = sample_switch_sequence(&e, 100, 7);
        let b = sample_switch_sequence(&e, 100, 7);
        assert_eq!(a, b);
        let c = sample_switch_sequence(&e, 100, 8);
        assert_ne!(a, c);
        let run0 = switch_sequence_for_run(&e, 100, 7, 0);
        let run1 = switch_sequence_for_run(&e, 100, 7, 1);
        assert_eq!(a, run0);
        assert_ne!(run0, run1);
        assert!(a.iter().all(|&idx| idx < 4));
    }

    #[test]
    fn switch_frequencies_match_probabilities() {
        let e = ring_scenario();
        let n = 100_000;
        let seq = sample_switch_sequence(&e, n, 12345);
        let mut counts = [0usize; 4];
        for &idx in &seq {
            counts[idx] += 1;
        }
        for (i, &p) in e.probs().iter().enumerate() {
            let freq = counts[i] as f64 / n as f64;
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!(
                (freq - p).abs() < 4.0 * sigma,
                "graph {i}: frequency {freq} vs probability {p}"
            );
        }
    }

    #[test]
    fn single_graph_simulate_matches_repeated_delta_step() {
        let g = Graph::path(4);
        let e = SwitchingEnsemble::new(vec![g.clone()], vec![1.0], 0).unwrap();
        let scheme = SamplingScheme::sampled(0.3, 5).unwrap();
        let x0 = StateVector::from_slice(&[1.0, -0.5, 0.25, 2.0]).unwrap();
        let traj = simulate(&e, &scheme, &x0, 4, 99).unwrap();

        let l = g.laplacian();
        let mut state = x0;
        for row in 1..traj.len() {
            state = delta_step(&state, &l, 0.3).unwrap();
            assert_eq!(traj.states()[row], *state.x(), "row {row}");
            assert_eq!(traj.times()[row], state.t());
        }
    }

    #[test]
    fn trajectory_shape_and_switch_log() {
        let e = ring_scenario();
        let scheme = SamplingScheme::sampled(0.05, 4).unwrap();
        let x0 = StateVector::from_slice(&[0.2, 0.8, 0.4, -1.0, -2.0]).unwrap();
        let traj = simulate(&e, &scheme, &x0, 6, 11).unwrap();
        assert_eq!(traj.len(), 6 * 4 + 1);
        assert_eq!(traj.switch_log().len(), 6);
        assert_eq!(traj.graph_index_at_row(0), traj.switch_log()[0]);
        assert_eq!(traj.graph_index_at_row(4), traj.switch_log()[1]);
        assert_eq!(traj.graph_index_at_row(24), traj.switch_log()[5]);
        for w in traj.times().windows(2) {
            assert!((w[1] - w[0] - 0.05).abs() < 1e-12);
        }
    }

    #[test]
    fn continuous_trajectory_records_one_state_per_dwell() {
        let e = ring_scenario();
        let scheme = SamplingScheme::continuous(0.1).unwrap();
        let x0 = StateVector::from_slice(&[0.2, 0.8, 0.4, -1.0, -2.0]).unwrap();
        let traj = simulate(&e, &scheme, &x0, 10, 5).unwrap();
        assert_eq!(traj.len(), 11);
        for w in traj.times().windows(2) {
            assert!((w[1] - w[0] - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn replay_reproduces_simulate() {
        let e = ring_scenario();
        let scheme = SamplingScheme::sampled(0.1, 2).unwrap();
        let x0 = StateVector::from_slice(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let seq = sample_switch_sequence(&e, 8, 42);
        let from_seed = simulate(&e, &scheme, &x0, 8, 42).unwrap();
        let from_seq = replay(&e, &scheme, &x0, &seq).unwrap();
        assert_eq!(from_seed, from_seq);
    }

    #[test]
    fn replay_rejects_bad_signals() {
        let e = ring_scenario();
        let scheme = SamplingScheme::sampled(0.1, 2).unwrap();
        let x0 = StateVector::from_slice(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert!(replay(&e, &scheme, &x0, &[]).is_err());
        assert!(replay(&e, &scheme, &x0, &[0, 4]).is_err());
        let short = StateVector::from_slice(&[1.0, 2.0]).unwrap();
        assert!(replay(&e, &scheme, &short, &[0]).is_err());
    }

    #[test]
    fn gap_is_nonincreasing_at_dwell_boundaries() {
        let e = ring_scenario();
        let scheme = SamplingScheme::sampled(0.1, 3).unwrap();
        let x0 = StateVector::from_slice(&[0.2, 0.8, 0.4, -1.0, -2.0]).unwrap();
        let traj = simulate(&e, &scheme, &x0, 50, 17).unwrap();
        let gaps = traj.gaps();
        for interval in 0..50 {
            let before = gaps[interval * 3];
            let after = gaps[(interval + 1) * 3];
            assert!(after <= before + 1e-12);
        }
    }

    #[test]
    fn csv_has_expected_header_and_rows() {
        let e = ring_scenario();
        let scheme = SamplingScheme::sampled(0.1, 2).unwrap();
        let x0 = StateVector::from_slice(&[0.2, 0.8, 0.4, -1.0, -2.0]).unwrap();
        let traj = simulate(&e, &scheme, &x0, 3, 1).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t, x_0, x_1, x_2, x_3, x_4, graph_index");
        assert_eq!(lines.len(), 1 + traj.len());
        let first: Vec<&str> = lines[1].split(", ").collect();
        assert_eq!(first.len(), 7);
        assert_eq!(first[0], "0");
        assert_eq!(first[1], "0.2");
        let last_index: usize = lines.last().unwrap().split(", ").last().unwrap().parse().unwrap();
        assert!(last_index < 4);
    }
}
