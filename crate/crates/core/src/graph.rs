//! Weighted directed communication graphs, their Laplacians, and the
//! row/column fault maps that model agents losing the ability to receive
//! or send.

use std::collections::BTreeSet;

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{linalg, Error, Result};

/// A weighted digraph on agents `0..n`. `adj[(i, j)]` is the weight agent
/// `i` places on information received from agent `j`, so row `i` lists the
/// in-neighbors of `i`. Weights are nonnegative and the diagonal is zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    n: usize,
    adj: DMatrix<f64>,
}

impl Graph {
    /// Wraps an adjacency matrix, validating shape, a zero diagonal, and
    /// nonnegative finite weights.
    pub fn new(adj: DMatrix<f64>) -> Result<Self> {
        if !adj.is_square() {
            return Err(Error::InvalidGraph(format!(
                "adjacency must be square, got {}x{}",
                adj.nrows(),
                adj.ncols()
            )));
        }
        let n = adj.nrows();
        if n == 0 {
            return Err(Error::InvalidGraph("graph needs at least one agent".into()));
        }
        for i in 0..n {
            if adj[(i, i)] != 0.0 {
                return Err(Error::InvalidGraph(format!("self-loop at agent {i}")));
            }
            for j in 0..n {
                let w = adj[(i, j)];
                if !w.is_finite() || w < 0.0 {
                    return Err(Error::InvalidGraph(format!(
                        "weight ({i}, {j}) = {w} must be finite and nonnegative"
                    )));
                }
            }
        }
        Ok(Graph { n, adj })
    }

    /// Builds a graph from `(i, j, w)` entries, each setting `adj[(i, j)]`.
    /// With `undirected` every entry also sets the mirror weight. Duplicate
    /// entries for the same ordered pair are rejected rather than summed.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)], undirected: bool) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidGraph("graph needs at least one agent".into()));
        }
        let mut adj = DMatrix::<f64>::zeros(n, n);
        let mut place = |i: usize, j: usize, w: f64| -> Result<()> {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, n });
            }
            if j >= n {
                return Err(Error::IndexOutOfRange { index: j, n });
            }
            if i == j {
                return Err(Error::InvalidGraph(format!("self-loop at agent {i}")));
            }
            if adj[(i, j)] != 0.0 {
                return Err(Error::InvalidGraph(format!("duplicate edge ({i}, {j})")));
            }
            adj[(i, j)] = w;
            Ok(())
        };
        for &(i, j, w) in edges {
            if !w.is_finite() || w <= 0.0 {
                return Err(Error::InvalidGraph(format!(
                    "edge ({i}, {j}) weight {w} must be finite and positive"
                )));
            }
            place(i, j, w)?;
            if undirected {
                place(j, i, w)?;
            }
        }
        Graph::new(adj)
    }

    /// Graph with `n` agents and no links.
    pub fn empty(n: usize) -> Self {
        assert!(n >= 1, "graph needs at least one agent");
        Graph {
            n,
            adj: DMatrix::zeros(n, n),
        }
    }

    /// Complete undirected graph with unit weights.
    pub fn complete(n: usize) -> Self {
        assert!(n >= 1, "graph needs at least one agent");
        let adj = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 });
        Graph { n, adj }
    }

    /// Undirected path `0 - 1 - ... - n-1` with unit weights.
    pub fn path(n: usize) -> Self {
        assert!(n >= 1, "graph needs at least one agent");
        let edges: Vec<_> = (0..n.saturating_sub(1)).map(|i| (i, i + 1, 1.0)).collect();
        Graph::from_edges(n, &edges, true).expect("path edges are valid")
    }

    /// Undirected cycle with unit weights; needs at least three agents.
    pub fn ring(n: usize) -> Self {
        assert!(n >= 3, "a ring needs at least three agents");
        let mut edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1, 1.0)).collect();
        edges.push((n - 1, 0, 1.0));
        Graph::from_edges(n, &edges, true).expect("ring edges are valid")
    }

    /// Random connected undirected graph: a uniform random attachment tree
    /// plus each remaining pair independently with probability
    /// `extra_edge_prob`. Deterministic in `seed`.
    pub fn random_connected(n: usize, extra_edge_prob: f64, seed: u64) -> Self {
        assert!(n >= 1, "graph needs at least one agent");
        assert!(
            (0.0..=1.0).contains(&extra_edge_prob),
            "edge probability must lie in [0, 1]"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut adj = DMatrix::<f64>::zeros(n, n);
        for i in 1..n {
            let parent = rng.gen_range(0..i);
            adj[(i, parent)] = 1.0;
            adj[(parent, i)] = 1.0;
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if adj[(i, j)] == 0.0 && rng.gen::<f64>() < extra_edge_prob {
                    adj[(i, j)] = 1.0;
                    adj[(j, i)] = 1.0;
                }
            }
        }
        Graph { n, adj }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn adj(&self) -> &DMatrix<f64> {
        &self.adj
    }

    /// True when the adjacency matrix is exactly symmetric.
    pub fn is_undirected(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.adj[(i, j)] == self.adj[(j, i)]))
    }

    /// In-degree Laplacian `L = D - A` with `D = diag(row sums of A)`.
    pub fn laplacian(&self) -> Laplacian {
        let degrees = DVector::from_iterator(
            self.n,
            self.adj.row_iter().map(|row| row.iter().sum::<f64>()),
        );
        let mut mat = -self.adj.clone();
        for i in 0..self.n {
            mat[(i, i)] = degrees[i];
        }
        Laplacian { mat, degrees }
    }

    /// Largest in-degree, the quantity that caps the sampling period.
    pub fn max_degree(&self) -> f64 {
        self.adj
            .row_iter()
            .map(|row| row.iter().sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Applies a fault pattern: agents that cannot receive lose their entire
    /// adjacency row, agents that cannot send lose their entire column.
    pub fn apply_fault(&self, fault: &FaultSpec) -> Result<Graph> {
        for &agent in fault.receive.iter().chain(fault.send.iter()) {
            if agent >= self.n {
                return Err(Error::IndexOutOfRange {
                    index: agent,
                    n: self.n,
                });
            }
        }
        let mut adj = self.adj.clone();
        for &agent in &fault.receive {
            adj.row_mut(agent).fill(0.0);
        }
        for &agent in &fault.send {
            adj.column_mut(agent).fill(0.0);
        }
        Ok(Graph { n: self.n, adj })
    }

    /// True when every agent can reach every other through directed links.
    pub fn is_strongly_connected(&self) -> bool {
        // Strong connectivity is preserved under arc reversal, so sweeping
        // rows and columns from agent 0 covers both directions.
        self.sweep_reaches_all(true) && self.sweep_reaches_all(false)
    }

    fn sweep_reaches_all(&self, rows: bool) -> bool {
        let mut seen = vec![false; self.n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for v in 0..self.n {
                let w = if rows {
                    self.adj[(u, v)]
                } else {
                    self.adj[(v, u)]
                };
                if w > 0.0 && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Laplacian of a graph together with its in-degree diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct Laplacian {
    mat: DMatrix<f64>,
    degrees: DVector<f64>,
}

impl Laplacian {
    pub fn mat(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn degrees(&self) -> &DVector<f64> {
        &self.degrees
    }

    pub fn n(&self) -> usize {
        self.degrees.len()
    }

    pub fn max_degree(&self) -> f64 {
        self.degrees.iter().fold(0.0, |acc, &d| acc.max(d))
    }

    /// Eigenvalues sorted by real part, then imaginary part. Every row sums
    /// to zero, so 0 is always present; for a connected undirected graph it
    /// is simple and the rest are positive.
    pub fn spectrum(&self) -> Result<Vec<Complex<f64>>> {
        let mut eigs = linalg::complex_eigenvalues(&self.mat)?;
        eigs.sort_by(|p, q| (p.re, p.im).partial_cmp(&(q.re, q.im)).expect("finite"));
        Ok(eigs)
    }
}

/// Sets of agents whose receiving or sending links are down. Receive faults
/// zero Laplacian rows (the agent stops reacting); send faults zero
/// adjacency columns (everyone stops hearing the agent).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FaultSpec {
    receive: BTreeSet<usize>,
    send: BTreeSet<usize>,
}

impl FaultSpec {
    pub fn new(receive: &[usize], send: &[usize]) -> Self {
        FaultSpec {
            receive: receive.iter().copied().collect(),
            send: send.iter().copied().collect(),
        }
    }

    /// Fault where the given agents cannot receive.
    pub fn receive(agents: &[usize]) -> Self {
        FaultSpec::new(agents, &[])
    }

    /// Fault where the given agents cannot send.
    pub fn send(agents: &[usize]) -> Self {
        FaultSpec::new(&[], agents)
    }

    pub fn receive_set(&self) -> &BTreeSet<usize> {
        &self.receive
    }

    pub fn send_set(&self) -> &BTreeSet<usize> {
        &self.send
    }

    pub fn is_empty(&self) -> bool {
        self.receive.is_empty() && self.send.is_empty()
    }
}

/// One edge entry in the on-disk graph format: `[i, j, w]`, or `[i, j]` for
/// unit weight.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EdgeEntry {
    Weighted(usize, usize, f64),
    Unit(usize, usize),
}

/// Serialized form of a graph:
/// `{"n": 5, "edges": [[0, 1, 1.0], ...], "undirected": true}`.
/// Each edge `[i, j, w]` sets the weight agent `i` places on agent `j`;
/// with `undirected` the mirror weight is set as well.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GraphFile {
    pub n: usize,
    pub edges: Vec<EdgeEntry>,
    pub undirected: bool,
}

impl GraphFile {
    pub fn to_graph(&self) -> Result<Graph> {
        let edges: Vec<_> = self
            .edges
            .iter()
            .map(|e| match *e {
                EdgeEntry::Weighted(i, j, w) => (i, j, w),
                EdgeEntry::Unit(i, j) => (i, j, 1.0),
            })
            .collect();
        Graph::from_edges(self.n, &edges, self.undirected)
    }

    /// Captures a graph for serialization. Symmetric graphs are written in
    /// undirected form with each link listed once.
    pub fn from_graph(graph: &Graph) -> GraphFile {
        let undirected = graph.is_undirected();
        let mut edges = Vec::new();
        for i in 0..graph.n() {
            let start = if undirected { i + 1 } else { 0 };
            for j in start..graph.n() {
                let w = graph.adj()[(i, j)];
                if w > 0.0 {
                    edges.push(EdgeEntry::Weighted(i, j, w));
                }
            }
        }
        GraphFile {
            n: graph.n(),
            edges,
            undirected,
        }
    }
}
