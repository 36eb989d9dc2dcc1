//! Where the switching system converges and how far faults push it:
//! expected dwell transitions, their stationary vectors, group-inverse
//! perturbation machinery, and closed-form bounds on the consensus error.
//!
//! Norms follow the squared conventions used throughout the derivations:
//! `norm_sq_vec(x) = x' x`, `norm_sq_mat(A) = lambda_max(A' A)`, and
//! `lambda_bar(A) = max_i |lambda_i|^2`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dynamics::{SamplingScheme, StateVector};
use crate::switching::{self, FaultKind, SwitchingEnsemble};
use crate::{linalg, Error, Result};

/// Squared Euclidean length `x' x`.
pub fn norm_sq_vec(x: &DVector<f64>) -> f64 {
    x.norm_squared()
}

/// Squared spectral norm `lambda_max(A' A)`.
pub fn norm_sq_mat(a: &DMatrix<f64>) -> Result<f64> {
    linalg::spectral_norm_sq(a)
}

/// Largest squared eigenvalue modulus. For symmetric matrices this equals
/// [`norm_sq_mat`]; in general it can be smaller.
pub fn lambda_bar(a: &DMatrix<f64>) -> Result<f64> {
    assert!(a.is_square(), "lambda_bar requires a square matrix");
    linalg::max_abs_eigenvalue_sq(a)
}

/// Whether the dwell transition was accumulated from delta-operator samples
/// or taken in the continuous limit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransitionMode {
    Sampled,
    ContinuousLimit,
}

/// Probability-weighted average of the per-graph dwell transitions,
/// together with the components that formed it.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpectedTransition {
    w: DMatrix<f64>,
    mode: TransitionMode,
    components: Vec<DMatrix<f64>>,
    probs: Vec<f64>,
    base_index: usize,
}

impl ExpectedTransition {
    /// The expected transition matrix, row stochastic by construction.
    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn mode(&self) -> TransitionMode {
        self.mode
    }

    /// Per-graph dwell transitions, indexed like the source ensemble.
    pub fn components(&self) -> &[DMatrix<f64>] {
        &self.components
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn base_index(&self) -> usize {
        self.base_index
    }

    /// Dwell transition of the fault-free base graph.
    pub fn base_component(&self) -> &DMatrix<f64> {
        &self.components[self.base_index]
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    /// Probability-weighted deviation of the fault transitions from the
    /// base transition. Its rows sum to zero, and `w = base + deviation`.
    pub fn deviation(&self) -> DMatrix<f64> {
        let base = self.base_component();
        let mut d = DMatrix::<f64>::zeros(self.n(), self.n());
        for (i, (t, &p)) in self.components.iter().zip(&self.probs).enumerate() {
            if i != self.base_index {
                d += p * (t - base);
            }
        }
        d
    }
}

/// Expected one-dwell transition `E[T]` over the switching ensemble.
pub fn expected_transition(
    ensemble: &SwitchingEnsemble,
    scheme: &SamplingScheme,
) -> Result<ExpectedTransition> {
    ensemble.validate_scheme(scheme)?;
    let components = switching::dwell_transitions(ensemble, scheme)?;
    let n = ensemble.n();
    let mut w = DMatrix::<f64>::zeros(n, n);
    for (t, &p) in components.iter().zip(ensemble.probs()) {
        w += p * t;
    }
    Ok(ExpectedTransition {
        w,
        mode: if scheme.is_continuous() {
            TransitionMode::ContinuousLimit
        } else {
            TransitionMode::Sampled
        },
        components,
        probs: ensemble.probs().to_vec(),
        base_index: ensemble.base_index(),
    })
}

fn check_stochastic(t: &DMatrix<f64>) -> Result<()> {
    if !t.is_square() {
        return Err(Error::DimensionMismatch(
            "transition matrix must be square".into(),
        ));
    }
    for (i, row) in t.row_iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::NotStochastic(format!("row {i} sums to {sum}")));
        }
        if let Some(v) = row.iter().find(|&&v| v < -1e-12) {
            return Err(Error::NotStochastic(format!(
                "row {i} has negative entry {v}"
            )));
        }
    }
    Ok(())
}

/// Primitivity of a row-stochastic matrix: some power is entrywise
/// positive. Checked at the Wielandt exponent `n^2 - 2n + 2`, which is
/// sufficient for every primitive matrix.
pub fn is_primitive(t: &DMatrix<f64>) -> Result<bool> {
    check_stochastic(t)?;
    let n = t.nrows();
    let power = linalg::matrix_power(t, (n * n - 2 * n + 2) as u64);
    Ok(power.iter().all(|&v| v > 0.0))
}

/// Positive left eigenvector at eigenvalue 1, normalized to sum one.
#[derive(Clone, Debug, PartialEq)]
pub struct StationaryVector {
    pi: DVector<f64>,
    residual: f64,
}

impl StationaryVector {
    pub fn pi(&self) -> &DVector<f64> {
        &self.pi
    }

    /// Defect `||pi' W - pi'||_2` of the computed vector; kept below 1e-10.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn n(&self) -> usize {
        self.pi.len()
    }
}

/// Stationary vector of an arbitrary primitive row-stochastic matrix.
///
/// Solved via least squares on `(W' - I) pi = 0` stacked with the
/// normalization row, then cross-validated against the limit of `W^(2^k)`
/// computed by repeated squaring; disagreement beyond 1e-8 is an error.
pub fn stationary_of_matrix(t: &DMatrix<f64>) -> Result<StationaryVector> {
    if !is_primitive(t)? {
        return Err(Error::NotPrimitive(
            "no Wielandt power is entrywise positive".into(),
        ));
    }
    let n = t.nrows();

    let mut system = DMatrix::<f64>::zeros(n + 1, n);
    system.view_mut((0, 0), (n, n)).copy_from(&t.transpose());
    for i in 0..n {
        system[(i, i)] -= 1.0;
    }
    system.row_mut(n).fill(1.0);
    let mut rhs = DVector::<f64>::zeros(n + 1);
    rhs[n] = 1.0;
    let mut pi = linalg::least_squares(&system, &rhs)?;

    let total = pi.sum();
    if !total.is_finite() || (total - 1.0).abs() > 1e-12 {
        return Err(Error::Stationary(format!(
            "normalization failed: entries sum to {total}"
        )));
    }
    pi /= total;
    if let Some(min) = pi.iter().copied().reduce(f64::min) {
        if min <= 0.0 {
            return Err(Error::Stationary(format!("nonpositive entry {min}")));
        }
    }

    // Independent route: W^(2^k) converges to the rank-one matrix 1 pi'.
    let mut power = t.clone();
    let mut spread = f64::INFINITY;
    for _ in 0..40 {
        spread = (0..n)
            .map(|j| {
                let col = power.column(j);
                col.max() - col.min()
            })
            .fold(0.0f64, f64::max);
        if spread < 1e-12 {
            break;
        }
        power = &power * &power;
    }
    let limit_row = power.row_sum() / n as f64;
    let disagreement = (0..n)
        .map(|j| (pi[j] - limit_row[j]).abs())
        .fold(0.0f64, f64::max);
    if disagreement > 1e-8 {
        return Err(Error::Stationary(format!(
            "least-squares and matrix-power routes disagree by {disagreement} \
             (power spread {spread})"
        )));
    }

    let residual = (pi.transpose() * t - pi.transpose()).norm();
    if residual > 1e-10 {
        return Err(Error::Stationary(format!("residual {residual} too large")));
    }
    Ok(StationaryVector { pi, residual })
}

/// Stationary vector of an expected transition; requires primitivity, which
/// holds whenever the expected graph is strongly connected.
pub fn stationary_vector(w: &ExpectedTransition) -> Result<StationaryVector> {
    stationary_of_matrix(w.w())
}

/// Predicted common limit of the expected state: `pi' x0`.
pub fn consensus_value(pi: &StationaryVector, x0: &StateVector) -> Result<f64> {
    if pi.n() != x0.n() {
        return Err(Error::DimensionMismatch(format!(
            "stationary vector has {} agents but state has {}",
            pi.n(),
            x0.n()
        )));
    }
    Ok(pi.pi().dot(x0.x()))
}

/// Series term cap for the group inverse; geometric decay makes hitting it
/// a hypothesis violation, not a tolerance problem.
const GROUP_INVERSE_MAX_TERMS: usize = 100_000;

/// Squared-Frobenius cutoff for series terms. Terms below 1e-11 in norm
/// leave the defining identities satisfied to 1e-9 with margin; the
/// Frobenius norm dominates the spectral norm, so stopping on it is
/// conservative.
const GROUP_INVERSE_TERM_CUTOFF: f64 = 1e-22;

/// Group inverse of `A = I - T` for a regular (primitive stochastic) chain,
/// summed as `sum_k (T^k - T_inf)` with `T_inf = 1 pi'`. The three defining
/// identities `A A# A = A`, `A# A A# = A#`, `A A# = A# A` are verified to
/// 1e-9 before returning.
pub fn group_inverse(t: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let pi = stationary_of_matrix(t)?;
    let n = t.nrows();
    let t_inf = DMatrix::from_fn(n, n, |_, j| pi.pi()[j]);

    let mut sharp = DMatrix::<f64>::identity(n, n) - &t_inf;
    let mut t_power = t.clone();
    let mut converged = false;
    for _ in 1..GROUP_INVERSE_MAX_TERMS {
        let term = &t_power - &t_inf;
        if term.norm_squared() < GROUP_INVERSE_TERM_CUTOFF {
            converged = true;
            break;
        }
        sharp += &term;
        t_power = &t_power * t;
    }
    if !converged {
        return Err(Error::SeriesDivergence(GROUP_INVERSE_MAX_TERMS));
    }

    let a = DMatrix::<f64>::identity(n, n) - t;
    let asa = (&a * &sharp * &a - &a).amax();
    let sas = (&sharp * &a * &sharp - &sharp).amax();
    let commute = (&a * &sharp - &sharp * &a).amax();
    let worst = asa.max(sas).max(commute);
    if worst > 1e-9 {
        return Err(Error::GroupInverseIdentity(worst));
    }
    Ok(sharp)
}

/// First-order-exact stationary shift `s - s_tilde` between the chains `T`
/// and `T_tilde = T - E`, from the closed form `s' E A# (I + E A#)^{-1}`
/// with `A#` the group inverse of `I - T`. The perturbation must preserve
/// row sums (`E 1 = 0`) and both chains must be regular.
pub fn perturbation_shift(t: &DMatrix<f64>, pert: &DMatrix<f64>) -> Result<DVector<f64>> {
    if t.shape() != pert.shape() {
        return Err(Error::DimensionMismatch(format!(
            "transition is {:?} but perturbation is {:?}",
            t.shape(),
            pert.shape()
        )));
    }
    let row_sum_defect = pert
        .row_iter()
        .map(|row| row.iter().sum::<f64>().abs())
        .fold(0.0, f64::max);
    if row_sum_defect > 1e-12 {
        return Err(Error::PerturbationRowSums(row_sum_defect));
    }
    let perturbed = t - pert;
    if !is_primitive(&perturbed)? {
        return Err(Error::NotPrimitive(
            "perturbed chain T - E is not primitive".into(),
        ));
    }

    let s = stationary_of_matrix(t)?;
    let sharp = group_inverse(t)?;
    let e_sharp = pert * &sharp;
    let n = t.nrows();
    let inverse = (DMatrix::<f64>::identity(n, n) + &e_sharp)
        .try_inverse()
        .ok_or_else(|| Error::Singular("I + E A# is not invertible".into()))?;
    let shift_row = s.pi().transpose() * e_sharp * inverse;
    Ok(shift_row.transpose())
}

/// Which closed-form result produced a [`BoundReport`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundKind {
    /// General perturbation bound on the sampled expected transition.
    PerturbationSampled,
    /// The same bound in the continuous dwell limit.
    PerturbationContinuous,
    /// Closed form for two receive-faulty agents with a one-sample dwell.
    ReceiveFault,
    /// Closed form for two send-faulty agents with a one-sample dwell.
    SendFault,
}

impl std::fmt::Display for BoundKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            BoundKind::PerturbationSampled => "perturbation-sampled",
            BoundKind::PerturbationContinuous => "perturbation-continuous",
            BoundKind::ReceiveFault => "receive-fault",
            BoundKind::SendFault => "send-fault",
        };
        f.write_str(name)
    }
}

/// One computed error bound next to the directly measured quantity it
/// dominates. All norms are squared, matching the library-wide convention:
/// `bound_e` and `measured_e` refer to `||pi - 1/n||` in the squared sense.
#[derive(Clone, Debug, Serialize)]
pub struct BoundReport {
    /// Which bound produced the report.
    pub kind: BoundKind,
    /// `norm_sq_mat` of the expected deviation `D` from the base transition.
    pub d_norm: f64,
    /// Contraction factor `lambda_bar(W_base - 1 1'/n)`, strictly below 1.
    pub lambda_bar: f64,
    /// Bound on the squared stationary deviation `||pi - 1/n||`.
    pub bound_e: f64,
    /// Variant of `bound_e` using the alternative probability factor
    /// `max{(alpha+beta)^2, (beta+gamma)^2}`; reported for the closed-form
    /// fault bounds, whose two published factor forms disagree.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound_e_statement: Option<f64>,
    /// Directly computed `norm_sq_vec(pi - 1/n)` for the soundness check.
    pub measured_e: f64,
    /// `n * bound_e * norm_sq_vec(x0)`: induced bound on the squared
    /// deviation of the expected limit state from the initial average.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound_state: Option<f64>,
}

fn uniform_deviation_sq(pi: &StationaryVector) -> f64 {
    let n = pi.n() as f64;
    let centered = pi.pi().map(|v| v - 1.0 / n);
    norm_sq_vec(&centered)
}

fn check_base_hypotheses(ensemble: &SwitchingEnsemble) -> Result<()> {
    if !ensemble.base_graph().is_undirected() {
        return Err(Error::InvalidEnsemble(
            "perturbation bound needs an undirected base graph".into(),
        ));
    }
    if !ensemble.base_graph().is_strongly_connected() {
        return Err(Error::NotStronglyConnected("base graph".into()));
    }
    if !ensemble.expected_graph().is_strongly_connected() {
        return Err(Error::NotStronglyConnected("expected graph".into()));
    }
    Ok(())
}

fn contraction_factor(base_transition: &DMatrix<f64>) -> Result<f64> {
    let n = base_transition.nrows();
    let centered = base_transition - DMatrix::<f64>::from_element(n, n, 1.0 / n as f64);
    let lam = lambda_bar(&centered)?;
    if !(lam < 1.0) {
        return Err(Error::ContractionFactor(lam));
    }
    Ok(lam)
}

/// Perturbation bound on the stationary deviation: the expected transition
/// differs from the base transition by `D`, and
/// `bound_e = norm_sq_mat(D) / (1 - lambda_bar)`. Valid for an undirected
/// connected base graph and a strongly connected expected graph, in either
/// sampling mode. With `x0` the induced state-level bound
/// `n * bound_e * norm_sq_vec(x0)` is attached.
pub fn perturbation_bound(
    ensemble: &SwitchingEnsemble,
    scheme: &SamplingScheme,
    x0: Option<&StateVector>,
) -> Result<BoundReport> {
    if let Some(x) = x0 {
        if x.n() != ensemble.n() {
            return Err(Error::DimensionMismatch(format!(
                "initial state has {} agents but ensemble has {}",
                x.n(),
                ensemble.n()
            )));
        }
    }
    check_base_hypotheses(ensemble)?;
    let expected = expected_transition(ensemble, scheme)?;
    let lam = contraction_factor(expected.base_component())?;
    let deviation = expected.deviation();
    let d_norm = norm_sq_mat(&deviation)?;
    let bound_e = d_norm / (1.0 - lam);
    let measured_e = uniform_deviation_sq(&stationary_vector(&expected)?);
    Ok(BoundReport {
        kind: match expected.mode() {
            TransitionMode::Sampled => BoundKind::PerturbationSampled,
            TransitionMode::ContinuousLimit => BoundKind::PerturbationContinuous,
        },
        d_norm,
        lambda_bar: lam,
        bound_e,
        bound_e_statement: None,
        measured_e,
        bound_state: x0.map(|x| ensemble.n() as f64 * bound_e * norm_sq_vec(x.x())),
    })
}

/// The two-faulty-agent structure recovered from an ensemble: agent
/// indices with `a < b`, and the probabilities of the solo and joint
/// faults. The fault-free probability is implied by the other three.
struct ScenarioShape {
    a: usize,
    b: usize,
    alpha: f64,
    beta: f64,
    gamma: f64,
}

fn links_removed(graph: &crate::graph::Graph, agent: usize, kind: FaultKind) -> bool {
    let adj = graph.adj();
    match kind {
        FaultKind::Receive => adj.row(agent).iter().all(|&w| w == 0.0),
        FaultKind::Send => adj.column(agent).iter().all(|&w| w == 0.0),
    }
}

fn detect_scenario(ensemble: &SwitchingEnsemble, kind: FaultKind) -> Result<ScenarioShape> {
    let fail = |msg: &str| Err(Error::ScenarioStructure(msg.into()));
    if ensemble.len() != 4 {
        return fail("expected exactly four graphs: two solo faults, both, and the base");
    }
    let base = ensemble.base_graph();
    if !base.is_undirected() {
        return fail("base graph must be undirected");
    }
    if !base.is_strongly_connected() {
        return fail("base graph must be connected");
    }
    let n = ensemble.n();

    let mut solo: Vec<(usize, f64)> = Vec::new();
    let mut pair: Option<(Vec<usize>, f64)> = None;
    for (i, graph) in ensemble.graphs().iter().enumerate() {
        if i == ensemble.base_index() {
            continue;
        }
        let faulty: Vec<usize> = (0..n)
            .filter(|&agent| {
                links_removed(graph, agent, kind) && !links_removed(base, agent, kind)
            })
            .collect();
        let spec = match kind {
            FaultKind::Receive => crate::graph::FaultSpec::receive(&faulty),
            FaultKind::Send => crate::graph::FaultSpec::send(&faulty),
        };
        if base.apply_fault(&spec)? != *graph {
            return fail("a graph is not a pure fault copy of the base");
        }
        match faulty.len() {
            1 => solo.push((faulty[0], ensemble.probs()[i])),
            2 if pair.is_none() => pair = Some((faulty, ensemble.probs()[i])),
            _ => return fail("fault patterns must be two solo faults and one joint fault"),
        }
    }
    let (pair_agents, gamma) = match (solo.len(), pair) {
        (2, Some(p)) => p,
        _ => return fail("fault patterns must be two solo faults and one joint fault"),
    };
    solo.sort_by_key(|&(agent, _)| agent);
    let (a, alpha) = solo[0];
    let (b, beta) = solo[1];
    if a == b || pair_agents != vec![a, b] {
        return fail("the joint fault must combine the two solo faults");
    }
    Ok(ScenarioShape {
        a,
        b,
        alpha,
        beta,
        gamma,
    })
}

fn closed_form_fault_bound(
    ensemble: &SwitchingEnsemble,
    scheme: &SamplingScheme,
    kind: FaultKind,
) -> Result<BoundReport> {
    if scheme.is_continuous() || scheme.k_bar() != Some(1) {
        return Err(Error::InvalidSampling(
            "closed-form fault bounds need a one-sample dwell (k_bar = 1)".into(),
        ));
    }
    let shape = detect_scenario(ensemble, kind)?;
    check_base_hypotheses(ensemble)?;
    let expected = expected_transition(ensemble, scheme)?;
    let lam = contraction_factor(expected.base_component())?;

    let h = scheme.h().expect("sampled scheme has h");
    let laplacian = ensemble.base_graph().laplacian();
    let sq_sum = |agent: usize| -> f64 {
        match kind {
            FaultKind::Receive => laplacian.mat().row(agent).iter().map(|v| v * v).sum(),
            FaultKind::Send => laplacian.mat().column(agent).iter().map(|v| v * v).sum(),
        }
    };
    let c = h * h * sq_sum(shape.a).max(sq_sum(shape.b));
    let prefactor = match kind {
        FaultKind::Receive => 2.0,
        FaultKind::Send => 4.0,
    };

    // The derivations yield the factor max{(alpha+gamma)^2, (beta+gamma)^2}
    // while the stated forms use max{(alpha+beta)^2, (beta+gamma)^2}; the
    // former is what soundness holds for, the latter rides along.
    let factor_derived = (shape.alpha + shape.gamma)
        .powi(2)
        .max((shape.beta + shape.gamma).powi(2));
    let factor_statement = (shape.alpha + shape.beta)
        .powi(2)
        .max((shape.beta + shape.gamma).powi(2));
    let scale = prefactor * c / (1.0 - lam);

    let deviation = expected.deviation();
    Ok(BoundReport {
        kind: match kind {
            FaultKind::Receive => BoundKind::ReceiveFault,
            FaultKind::Send => BoundKind::SendFault,
        },
        d_norm: norm_sq_mat(&deviation)?,
        lambda_bar: lam,
        bound_e: scale * factor_derived,
        bound_e_statement: Some(scale * factor_statement),
        measured_e: uniform_deviation_sq(&stationary_vector(&expected)?),
        bound_state: None,
    })
}

/// Closed-form bound for two receive-faulty agents with a one-sample dwell:
/// `bound_e = 2 c max{(alpha+gamma)^2, (beta+gamma)^2} / (1 - lambda_bar)`
/// with `c = h^2 max` of the squared-entry sums of the two agents' base
/// Laplacian rows.
pub fn receive_fault_bound(
    ensemble: &SwitchingEnsemble,
    scheme: &SamplingScheme,
) -> Result<BoundReport> {
    closed_form_fault_bound(ensemble, scheme, FaultKind::Receive)
}

/// Closed-form bound for two send-faulty agents: as
/// [`receive_fault_bound`] but over base Laplacian columns and with
/// prefactor 4.
pub fn send_fault_bound(
    ensemble: &SwitchingEnsemble,
    scheme: &SamplingScheme,
) -> Result<BoundReport> {
    closed_form_fault_bound(ensemble, scheme, FaultKind::Send)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    fn ring5_receive_scenario() -> SwitchingEnsemble {
        SwitchingEnsemble::scenario(
            &Graph::ring(5),
            FaultKind::Receive,
            (0, 1),
            [0.3, 0.3, 0.2, 0.2],
        )
        .unwrap()
    }

    #[test]
    fn squared_norm_conventions() {
        assert_eq!(norm_sq_vec(&DVector::from_row_slice(&[3.0, 4.0])), 25.0);
        let eye = DMatrix::<f64>::identity(3, 3);
        assert!((norm_sq_mat(&eye).unwrap() - 1.0).abs() < 1e-14);
        let shear = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 0.0, 0.0]);
        assert!((norm_sq_mat(&shear).unwrap() - 4.0).abs() < 1e-14);
        let d = DMatrix::from_diagonal(&DVector::from_row_slice(&[0.0, 0.5]));
        assert!((lambda_bar(&d).unwrap() - 0.25).abs() < 1e-14);
        assert_eq!(lambda_bar(&DMatrix::<f64>::zeros(3, 3)).unwrap(), 0.0);
    }

    #[test]
    fn lambda_bar_of_centered_pair_transition() {
        let scheme = SamplingScheme::sampled(0.25, 1).unwrap();
        let t =
            crate::dynamics::dwell_transition(&Graph::complete(2).laplacian(), &scheme).unwrap();
        let centered = &t - DMatrix::<f64>::from_element(2, 2, 0.5);
        assert!((lambda_bar(&centered).unwrap() - 0.25).abs() < 1e-14);
    }

    #[test]
    fn expected_transition_of_single_graph_is_its_dwell_transition() {
        let g = Graph::path(4);
        let e = SwitchingEnsemble::new(vec![g.clone()], vec![1.0], 0).unwrap();
        let scheme = SamplingScheme::sampled(0.2, 3).unwrap();
        let expected = expected_transition(&e, &scheme).unwrap();
        let direct = crate::dynamics::dwell_transition(&g.laplacian(), &scheme).unwrap();
        assert_eq!(expected.w(), &direct);
        assert_eq!(expected.mode(), TransitionMode::Sampled);
    }

    #[test]
    fn expected_transition_of_identical_graphs_has_zero_deviation() {
        let g = Graph::ring(4);
        let e = SwitchingEnsemble::new(vec![g.clone(); 4], vec![0.25; 4], 3).unwrap();
        let scheme = SamplingScheme::sampled(0.1, 2).unwrap();
        let expected = expected_transition(&e, &scheme).unwrap();
        assert_eq!(expected.deviation(), DMatrix::<f64>::zeros(4, 4));
        let direct = crate::dynamics::dwell_transition(&g.laplacian(), &scheme).unwrap();
        assert!((expected.w() - direct).amax() < 1e-15);
    }

    #[test]
    fn expected_transition_matches_convex_combination_oracle() {
        let e = ring5_receive_scenario();
        let scheme = SamplingScheme::sampled(0.05, 4).unwrap();
        let expected = expected_transition(&e, &scheme).unwrap();
        // Independent accumulation, entry by entry.
        let mut oracle = DMatrix::<f64>::zeros(5, 5);
        for (g, &p) in e.graphs().iter().zip(e.probs()) {
            let t = crate::dynamics::dwell_transition(&g.laplacian(), &scheme).unwrap();
            for i in 0..5 {
                for j in 0..5 {
                    oracle[(i, j)] += p * t[(i, j)];
                }
            }
        }
        assert!((expected.w() - oracle).amax() < 1e-15);
        for row in expected.w().row_iter() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        // W = base + deviation.
        let rebuilt = expected.base_component() + expected.deviation();
        assert!((expected.w() - rebuilt).amax() < 1e-15);
        // Rows of the deviation sum to zero.
        for row in expected.deviation().row_iter() {
            assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn stationary_of_doubly_stochastic_is_uniform() {
        let e = SwitchingEnsemble::new(vec![Graph::ring(5)], vec![1.0], 0).unwrap();
        let scheme = SamplingScheme::sampled(0.2, 3).unwrap();
        let expected = expected_transition(&e, &scheme).unwrap();
        let pi = stationary_vector(&expected).unwrap();
        for &v in pi.pi().iter() {
            assert!((v - 0.2).abs() < 1e-12);
        }
        assert!(pi.residual() < 1e-10);
    }

    #[test]
    fn stationary_of_two_state_chain_matches_closed_form() {
        let (a, b) = (0.3, 0.1);
        let t = DMatrix::from_row_slice(2, 2, &[1.0 - a, a, b, 1.0 - b]);
        let pi = stationary_of_matrix(&t).unwrap();
        assert!((pi.pi()[0] - b / (a + b)).abs() < 1e-12);
        assert!((pi.pi()[1] - a / (a + b)).abs() < 1e-12);
    }

    #[test]
    fn stationary_matches_high_matrix_power() {
        let e = ring5_receive_scenario();
        let scheme = SamplingScheme::sampled(0.01, 10).unwrap();
        let expected = expected_transition(&e, &scheme).unwrap();
        let pi = stationary_vector(&expected).unwrap();
        let power = linalg::matrix_power(expected.w(), 2048);
        for i in 0..5 {
            for j in 0..5 {
                assert!((power[(i, j)] - pi.pi()[j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn stationary_rejects_non_primitive_chains() {
        let eye = DMatrix::<f64>::identity(3, 3);
        assert!(matches!(
            stationary_of_matrix(&eye),
            Err(Error::NotPrimitive(_))
        ));
        let flip = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(stationary_of_matrix(&flip).is_err());
        let not_stochastic = DMatrix::from_row_slice(2, 2, &[0.5, 0.4, 0.5, 0.5]);
        assert!(matches!(
            stationary_of_matrix(&not_stochastic),
            Err(Error::NotStochastic(_))
        ));
    }

    #[test]
    fn consensus_value_basics() {
        let e = SwitchingEnsemble::new(vec![Graph::ring(5)], vec![1.0], 0).unwrap();
        let scheme = SamplingScheme::sampled(0.2, 3).unwrap();
        let pi = stationary_vector(&expected_transition(&e, &scheme).unwrap()).unwrap();
        let x0 = StateVector::from_slice(&[0.2, 0.8, 0.4, -1.0, -2.0]).unwrap();
        let mean = x0.x().sum() / 5.0;
        assert!((consensus_value(&pi, &x0).unwrap() - mean).abs() < 1e-12);
        let flat = StateVector::from_slice(&[0.7; 5]).unwrap();
        assert!((consensus_value(&pi, &flat).unwrap() - 0.7).abs() < 1e-12);
        let short = StateVector::from_slice(&[1.0, 2.0]).unwrap();
        assert!(consensus_value(&pi, &short).is_err());
    }

    #[test]
    fn group_inverse_of_rank_one_projection() {
        // T = 1 1'/2 gives idempotent A = I - T, whose group inverse is A
        // itself; the series truncates after the k = 0 term.
        let t = DMatrix::from_element(2, 2, 0.5);
        let sharp = group_inverse(&t).unwrap();
        let a = DMatrix::<f64>::identity(2, 2) - &t;
        assert!((sharp - a).amax() < 1e-12);
    }

    #[test]
    fn group_inverse_rejects_identity() {
        let eye = DMatrix::<f64>::identity(3, 3);
        assert!(group_inverse(&eye).is_err());
    }

    #[test]
    fn group_inverse_matches_fundamental_matrix_oracle() {
        let t = DMatrix::from_row_slice(
            4,
            4,
            &[
                0.5, 0.2, 0.2, 0.1, //
                0.1, 0.6, 0.1, 0.2, //
                0.3, 0.1, 0.4, 0.2, //
                0.2, 0.2, 0.2, 0.4,
            ],
        );
        let sharp = group_inverse(&t).unwrap();
        // Independent route: A# = (A + 1 pi')^{-1} - 1 pi'.
        let pi = stationary_of_matrix(&t).unwrap();
        let t_inf = DMatrix::from_fn(4, 4, |_, j| pi.pi()[j]);
        let a = DMatrix::<f64>::identity(4, 4) - &t;
        let oracle = (&a + &t_inf).try_inverse().unwrap() - &t_inf;
        assert!((&sharp - oracle).amax() < 1e-8);

        let asa = (&a * &sharp * &a - &a).amax();
        let sas = (&sharp * &a * &sharp - &sharp).amax();
        let commute = (&a * &sharp - &sharp * &a).amax();
        assert!(asa < 1e-9 && sas < 1e-9 && commute < 1e-9);
    }

    #[test]
    fn perturbation_shift_of_zero_is_zero() {
        let t = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let shift = perturbation_shift(&t, &DMatrix::zeros(2, 2)).unwrap();
        assert!(shift.amax() < 1e-15);
    }

    #[test]
    fn perturbation_shift_matches_two_state_closed_form() {
        // T with a = b = 0.5; shrinking a by 0.1 moves the stationary
        // vector from (1/2, 1/2) to (5/9, 4/9).
        let t = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let e = DMatrix::from_row_slice(2, 2, &[-0.1, 0.1, 0.0, 0.0]);
        let shift = perturbation_shift(&t, &e).unwrap();
        assert!((shift[0] - (0.5 - 5.0 / 9.0)).abs() < 1e-12);
        assert!((shift[1] - (0.5 - 4.0 / 9.0)).abs() < 1e-12);
    }

    #[test]
    fn perturbation_shift_matches_direct_stationary_difference() {
        let ensemble = ring5_receive_scenario();
        let scheme = SamplingScheme::sampled(0.01, 10).unwrap();
        let expected = expected_transition(&ensemble, &scheme).unwrap();
        let base = expected.base_component().clone();
        let pert = &base - expected.w();
        let shift = perturbation_shift(&base, &pert).unwrap();
        let direct =
            stationary_of_matrix(&base).unwrap().pi() - stationary_vector(&expected).unwrap().pi();
        assert!((shift - direct).amax() < 1e-9);
    }

    #[test]
    fn perturbation_shift_rejects_row_sum_violations() {
        let t = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let e = DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.0, 0.0]);
        assert!(matches!(
            perturbation_shift(&t, &e),
            Err(Error::PerturbationRowSums(_))
        ));
    }

    #[test]
    fn perturbation_bound_is_zero_for_identical_graphs() {
        let g = Graph::ring(5);
        let e = SwitchingEnsemble::new(vec![g.clone(); 4], vec![0.25; 4], 3).unwrap();
        let scheme = SamplingScheme::sampled(0.1, 2).unwrap();
        let report = perturbation_bound(&e, &scheme, None).unwrap();
        assert_eq!(report.bound_e, 0.0);
        assert_eq!(report.d_norm, 0.0);
        assert!(report.measured_e < 1e-10);
        assert_eq!(report.kind, BoundKind::PerturbationSampled);
    }

    #[test]
    fn perturbation_bound_reference_instance() {
        // Ring of five, receive faults on two adjacent agents,
        // probabilities (0.3, 0.3, 0.2, 0.2), h = 0.01, k_bar = 10.
        let e = ring5_receive_scenario();
        let scheme = SamplingScheme::sampled(0.01, 10).unwrap();
        let x0 = StateVector::from_slice(&[0.2, 0.8, 0.4, -1.0, -2.0]).unwrap();
        let report = perturbation_bound(&e, &scheme, Some(&x0)).unwrap();
        assert!((report.lambda_bar - 0.757053910431516).abs() < 1e-9);
        assert!((report.d_norm - 1.740403947223801e-2).abs() < 1e-9);
        assert!((report.bound_e - 0.071637454643336).abs() < 1e-9);
        assert!((report.measured_e - 0.028056345125274).abs() < 1e-9);
        assert!((report.bound_state.unwrap() - 2.091813675585398).abs() < 1e-8);
        assert!(report.bound_e >= report.measured_e);
        assert!(report.bound_e_statement.is_none());
    }

    #[test]
    fn perturbation_bound_continuous_reference_instance() {
        let e = ring5_receive_scenario();
        let scheme = SamplingScheme::continuous(0.1).unwrap();
        let report = perturbation_bound(&e, &scheme, None).unwrap();
        assert_eq!(report.kind, BoundKind::PerturbationContinuous);
        assert!((report.lambda_bar - 0.758514622461).abs() < 1e-9);
        assert!((report.bound_e - 0.069662745146).abs() < 1e-9);
        assert!((report.measured_e - 0.028421768734).abs() < 1e-9);
        assert!(report.bound_e >= report.measured_e);
    }

    #[test]
    fn receive_fault_bound_path_example() {
        // P3, faults on agents 0 and 1, alpha = beta = gamma = 0.2,
        // theta = 0.4, h = 0.1. By hand: rows of L have squared sums 2 and
        // 6, so c = 0.01 * 6 = 0.06; the Laplacian spectrum {0, 1, 3}
        // gives lambda_bar = max(0.9, 0.7)^2 = 0.81; both probability
        // factors are (0.2 + 0.2)^2 = 0.16.
        let e = SwitchingEnsemble::scenario(
            &Graph::path(3),
            FaultKind::Receive,
            (0, 1),
            [0.2, 0.2, 0.2, 0.4],
        )
        .unwrap();
        let scheme = SamplingScheme::sampled(0.1, 1).unwrap();
        let report = receive_fault_bound(&e, &scheme).unwrap();
        let expected = 2.0 * 0.06 * 0.16 / (1.0 - 0.81);
        assert!((report.bound_e - expected).abs() < 1e-12, "{}", report.bound_e);
        assert!((report.bound_e_statement.unwrap() - expected).abs() < 1e-12);
        assert!((report.lambda_bar - 0.81).abs() < 1e-12);
        assert!(report.bound_e >= report.measured_e);
        assert_eq!(report.kind, BoundKind::ReceiveFault);
    }

    #[test]
    fn fault_bound_factor_variants_differ_for_asymmetric_probabilities() {
        let e = SwitchingEnsemble::scenario(
            &Graph::path(3),
            FaultKind::Receive,
            (0, 1),
            [0.3, 0.2, 0.1, 0.4],
        )
        .unwrap();
        let scheme = SamplingScheme::sampled(0.1, 1).unwrap();
        let report = receive_fault_bound(&e, &scheme).unwrap();
        let scale = 2.0 * 0.06 / (1.0 - 0.81);
        // Derived factor: max{(0.3+0.1)^2, (0.2+0.1)^2} = 0.16.
        assert!((report.bound_e - scale * 0.16).abs() < 1e-12);
        // Statement factor: max{(0.3+0.2)^2, (0.2+0.1)^2} = 0.25.
        assert!((report.bound_e_statement.unwrap() - scale * 0.25).abs() < 1e-12);
    }

    #[test]
    fn send_fault_bound_is_exactly_twice_the_receive_bound_on_undirected_bases() {
        for (n, agents) in [(3usize, (0usize, 1usize)), (5, (0, 2)), (6, (1, 4))] {
            let base = if n == 3 { Graph::path(3) } else { Graph::ring(n) };
            let probs = [0.25, 0.3, 0.15, 0.3];
            let scheme = SamplingScheme::sampled(0.1, 1).unwrap();
            let recv =
                SwitchingEnsemble::scenario(&base, FaultKind::Receive, agents, probs).unwrap();
            let send = SwitchingEnsemble::scenario(&base, FaultKind::Send, agents, probs).unwrap();
            let r = receive_fault_bound(&recv, &scheme).unwrap();
            let s = send_fault_bound(&send, &scheme).unwrap();
            assert_eq!(s.bound_e, 2.0 * r.bound_e);
            assert_eq!(s.bound_e_statement, r.bound_e_statement.map(|v| 2.0 * v));
            assert!(s.bound_e >= s.measured_e);
        }
    }

    #[test]
    fn fault_bounds_reject_wrong_structure() {
        let scheme = SamplingScheme::sampled(0.1, 1).unwrap();
        let recv = ring5_receive_scenario();
        // Receive scenario fed to the send-fault bound.
        assert!(matches!(
            send_fault_bound(&recv, &scheme),
            Err(Error::ScenarioStructure(_))
        ));
        // Multi-sample dwell.
        let multi = SamplingScheme::sampled(0.1, 2).unwrap();
        assert!(matches!(
            receive_fault_bound(&recv, &multi),
            Err(Error::InvalidSampling(_))
        ));
        // Continuous limit.
        let cont = SamplingScheme::continuous(0.1).unwrap();
        assert!(matches!(
            receive_fault_bound(&recv, &cont),
            Err(Error::InvalidSampling(_))
        ));
        // Not a four-graph ensemble.
        let single = SwitchingEnsemble::new(vec![Graph::ring(5)], vec![1.0], 0).unwrap();
        assert!(matches!(
            receive_fault_bound(&single, &scheme),
            Err(Error::ScenarioStructure(_))
        ));
    }

    #[test]
    fn primitivity_check_examples() {
        let eye = DMatrix::<f64>::identity(3, 3);
        assert!(!is_primitive(&eye).unwrap());
        let flip = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(!is_primitive(&flip).unwrap());
        let mixing = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.5, 0.5]);
        assert!(is_primitive(&mixing).unwrap());
    }
}
