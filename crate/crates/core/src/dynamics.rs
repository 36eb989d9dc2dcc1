//! Delta-operator consensus dynamics on a fixed graph: the per-sample
//! update `x(t + h) = x(t) - h L x(t)`, the transition accumulated over one
//! dwell interval, and the Lyapunov decrement that certifies contraction.

use nalgebra::{DMatrix, DVector};

use crate::graph::Laplacian;
use crate::{linalg, Error, Result};

/// Magnitude below which a negative transition entry is treated as rounding
/// noise from the matrix exponential and clamped to zero.
const NEGATIVE_CLAMP: f64 = 1e-12;

/// How the dwell interval of length `delta_t` is traversed: either `k_bar`
/// explicit delta-operator samples of period `h`, or the continuous limit
/// `exp(-L delta_t)` reached as `h -> 0` with `k_bar h` held fixed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplingScheme {
    h: f64,
    k_bar: u64,
    delta_t: f64,
    continuous: bool,
}

impl SamplingScheme {
    /// Sampled scheme with period `h > 0` and `k_bar >= 1` samples per
    /// dwell, so the dwell length is `k_bar * h`.
    pub fn sampled(h: f64, k_bar: u64) -> Result<Self> {
        if !h.is_finite() || h <= 0.0 {
            return Err(Error::InvalidSampling(format!(
                "sampling period h = {h} must be positive and finite"
            )));
        }
        if k_bar == 0 {
            return Err(Error::InvalidSampling(
                "a dwell interval needs at least one sample".into(),
            ));
        }
        Ok(SamplingScheme {
            h,
            k_bar,
            delta_t: k_bar as f64 * h,
            continuous: false,
        })
    }

    /// Continuous-limit scheme with dwell length `delta_t > 0`.
    pub fn continuous(delta_t: f64) -> Result<Self> {
        if !delta_t.is_finite() || delta_t <= 0.0 {
            return Err(Error::InvalidSampling(format!(
                "dwell length delta_t = {delta_t} must be positive and finite"
            )));
        }
        Ok(SamplingScheme {
            h: 0.0,
            k_bar: 0,
            delta_t,
            continuous: true,
        })
    }

    /// Sampling period, absent in the continuous limit.
    pub fn h(&self) -> Option<f64> {
        (!self.continuous).then_some(self.h)
    }

    /// Samples per dwell interval, absent in the continuous limit.
    pub fn k_bar(&self) -> Option<u64> {
        (!self.continuous).then_some(self.k_bar)
    }

    /// Dwell interval length.
    pub fn delta_t(&self) -> f64 {
        self.delta_t
    }

    pub fn is_continuous(&self) -> bool {
        self.continuous
    }

    /// States recorded per dwell interval when simulating.
    pub fn steps_per_dwell(&self) -> usize {
        if self.continuous {
            1
        } else {
            self.k_bar as usize
        }
    }

    /// Time advance per recorded state.
    pub fn step_length(&self) -> f64 {
        if self.continuous {
            self.delta_t
        } else {
            self.h
        }
    }

    /// Checks the stability condition `h < 1 / d_max`. Trivially satisfied
    /// in the continuous limit and for degree-zero graphs.
    pub fn validate_degree(&self, max_degree: f64) -> Result<()> {
        if !self.continuous && max_degree > 0.0 && self.h * max_degree >= 1.0 {
            return Err(Error::SamplingPeriod {
                h: self.h,
                limit: 1.0 / max_degree,
            });
        }
        Ok(())
    }
}

/// Joint state of all agents at a point in time.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    x: DVector<f64>,
    t: f64,
}

impl StateVector {
    pub fn new(x: DVector<f64>, t: f64) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::DimensionMismatch("state must be nonempty".into()));
        }
        if !t.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::DimensionMismatch(
                "state entries and time must be finite".into(),
            ));
        }
        Ok(StateVector { x, t })
    }

    /// State at time zero.
    pub fn from_slice(values: &[f64]) -> Result<Self> {
        StateVector::new(DVector::from_row_slice(values), 0.0)
    }

    pub fn x(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    /// Spread `max_i x_i - min_i x_i`, the distance from exact consensus.
    pub fn gap(&self) -> f64 {
        let max = self.x.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let min = self.x.iter().fold(f64::INFINITY, |a, &v| a.min(v));
        max - min
    }
}

fn check_dims(x: &StateVector, laplacian: &Laplacian) -> Result<()> {
    if x.n() != laplacian.n() {
        return Err(Error::DimensionMismatch(format!(
            "state has {} agents but Laplacian has {}",
            x.n(),
            laplacian.n()
        )));
    }
    Ok(())
}

fn check_step(h: f64, laplacian: &Laplacian) -> Result<()> {
    if !h.is_finite() || h <= 0.0 {
        return Err(Error::InvalidSampling(format!(
            "sampling period h = {h} must be positive and finite"
        )));
    }
    let d_max = laplacian.max_degree();
    if d_max > 0.0 && h * d_max >= 1.0 {
        return Err(Error::SamplingPeriod {
            h,
            limit: 1.0 / d_max,
        });
    }
    Ok(())
}

/// One delta-operator sample of the consensus protocol:
/// `x(t + h) = (I - h L) x(t)`. Requires `h < 1 / d_max`, which makes the
/// update a convex combination of neighbor states.
pub fn delta_step(x: &StateVector, laplacian: &Laplacian, h: f64) -> Result<StateVector> {
    check_dims(x, laplacian)?;
    check_step(h, laplacian)?;
    let next = x.x() - h * (laplacian.mat() * x.x());
    StateVector::new(next, x.t() + h)
}

/// Transition matrix over one dwell interval: `(I - h L)^k_bar` when
/// sampled, `exp(-L delta_t)` in the continuous limit. Both are row
/// stochastic; exponential entries a hair below zero are clamped, anything
/// more negative is an error.
pub fn dwell_transition(laplacian: &Laplacian, scheme: &SamplingScheme) -> Result<DMatrix<f64>> {
    scheme.validate_degree(laplacian.max_degree())?;
    let n = laplacian.n();
    let mut transition = if scheme.is_continuous() {
        linalg::expm(&(-scheme.delta_t() * laplacian.mat()))
    } else {
        let h = scheme.h().expect("sampled scheme has h");
        let step = DMatrix::<f64>::identity(n, n) - h * laplacian.mat();
        linalg::matrix_power(&step, scheme.k_bar().expect("sampled scheme has k_bar"))
    };
    for i in 0..n {
        for j in 0..n {
            let v = transition[(i, j)];
            if v < 0.0 {
                if v < -NEGATIVE_CLAMP {
                    return Err(Error::NegativeEntry {
                        row: i,
                        col: j,
                        value: v,
                    });
                }
                transition[(i, j)] = 0.0;
            }
        }
    }
    Ok(transition)
}

/// Lyapunov decrement of `V = nu' nu`, `nu = x - (1 1'/n) x`, over one
/// delta-operator sample: returns `(V(t + h) - V(t)) / h`.
///
/// The value is computed as that difference quotient and cross-checked
/// against the closed form `nu' (-2L + h L' L) nu`; disagreement beyond
/// `1e-10 * max(1, V)` is reported as [`Error::LyapunovMismatch`]. The
/// identity, and hence this routine, requires a weight-balanced graph
/// (column sums of `L` zero), which every undirected graph satisfies.
pub fn lyapunov_delta(x: &StateVector, laplacian: &Laplacian, h: f64) -> Result<f64> {
    check_dims(x, laplacian)?;
    check_step(h, laplacian)?;
    let l = laplacian.mat();
    let n = x.n() as f64;
    for j in 0..laplacian.n() {
        let col_sum: f64 = l.column(j).iter().sum();
        if col_sum.abs() > 1e-12 {
            return Err(Error::InvalidGraph(format!(
                "Lyapunov decrement needs a weight-balanced graph; column {j} sums to {col_sum}"
            )));
        }
    }

    let disagreement = |v: &DVector<f64>| -> DVector<f64> {
        let mean = v.sum() / n;
        v.map(|e| e - mean)
    };
    let nu = disagreement(x.x());
    let v_now = nu.dot(&nu);

    let next = delta_step(x, laplacian, h)?;
    let nu_next = disagreement(next.x());
    let quotient = (nu_next.dot(&nu_next) - v_now) / h;

    let l_nu = l * &nu;
    let form = -2.0 * nu.dot(&l_nu) + h * l_nu.dot(&l_nu);

    if (quotient - form).abs() > 1e-10 * v_now.max(1.0) {
        return Err(Error::LyapunovMismatch { quotient, form });
    }
    Ok(quotient)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    fn k2() -> Laplacian {
        Graph::complete(2).laplacian()
    }

    #[test]
    fn sampled_scheme_validation() {
        assert!(SamplingScheme::sampled(0.0, 1).is_err());
        assert!(SamplingScheme::sampled(-0.1, 1).is_err());
        assert!(SamplingScheme::sampled(f64::NAN, 1).is_err());
        assert!(SamplingScheme::sampled(0.1, 0).is_err());
        let s = SamplingScheme::sampled(0.01, 10).unwrap();
        assert_eq!(s.h(), Some(0.01));
        assert_eq!(s.k_bar(), Some(10));
        assert_eq!(s.delta_t(), 0.1);
        assert!(!s.is_continuous());
        assert_eq!(s.steps_per_dwell(), 10);
    }

    #[test]
    fn continuous_scheme_validation() {
        assert!(SamplingScheme::continuous(0.0).is_err());
        assert!(SamplingScheme::continuous(f64::INFINITY).is_err());
        let s = SamplingScheme::continuous(0.5).unwrap();
        assert_eq!(s.h(), None);
        assert_eq!(s.k_bar(), None);
        assert_eq!(s.delta_t(), 0.5);
        assert!(s.is_continuous());
        assert_eq!(s.steps_per_dwell(), 1);
        assert_eq!(s.step_length(), 0.5);
    }

    #[test]
    fn degree_bound_is_strict() {
        let s = SamplingScheme::sampled(0.5, 1).unwrap();
        assert!(matches!(
            s.validate_degree(2.0),
            Err(Error::SamplingPeriod { .. })
        ));
        assert!(SamplingScheme::sampled(0.49, 1)
            .unwrap()
            .validate_degree(2.0)
            .is_ok());
        assert!(s.validate_degree(0.0).is_ok());
        assert!(SamplingScheme::continuous(10.0)
            .unwrap()
            .validate_degree(100.0)
            .is_ok());
    }

    #[test]
    fn delta_step_on_pair_contracts_toward_mean() {
        let x = StateVector::from_slice(&[1.0, -1.0]).unwrap();
        let next = delta_step(&x, &k2(), 0.1).unwrap();
        assert_eq!(next.x().as_slice(), &[0.8, -0.8]);
        assert_eq!(next.t(), 0.1);
    }

    #[test]
    fn delta_step_preserves_mean_on_undirected_graphs() {
        let g = Graph::random_connected(6, 0.4, 3);
        let l = g.laplacian();
        let mut x = StateVector::from_slice(&[0.2, 0.8, 0.4, -1.0, -2.0, 0.5]).unwrap();
        let mean0 = x.x().sum() / 6.0;
        for _ in 0..50 {
            x = delta_step(&x, &l, 0.2).unwrap();
        }
        assert!((x.x().sum() / 6.0 - mean0).abs() < 1e-12);
    }

    #[test]
    fn delta_step_rejects_unstable_period() {
        let x = StateVector::from_slice(&[1.0, -1.0]).unwrap();
        assert!(matches!(
            delta_step(&x, &k2(), 1.0),
            Err(Error::SamplingPeriod { .. })
        ));
        let ring = Graph::ring(5).laplacian();
        let x5 = StateVector::from_slice(&[1.0, 0.0, 0.0, 0.0, -1.0]).unwrap();
        assert!(delta_step(&x5, &ring, 0.5).is_err());
        assert!(delta_step(&x5, &ring, 0.49).is_ok());
    }

    #[test]
    fn dwell_transition_sampled_pair_is_exact() {
        // I - 0.25 L = [[0.75, 0.25], [0.25, 0.75]]; squaring gives
        // [[0.625, 0.375], [0.375, 0.625]] exactly in binary floats.
        let s = SamplingScheme::sampled(0.25, 2).unwrap();
        let t = dwell_transition(&k2(), &s).unwrap();
        assert_eq!(t, DMatrix::from_row_slice(2, 2, &[0.625, 0.375, 0.375, 0.625]));
    }

    #[test]
    fn dwell_transition_continuous_pair_matches_closed_form() {
        // exp(-L delta) on two agents has off-diagonal (1 - e^{-2 delta})/2;
        // delta = ln(2)/2 makes that exactly 1/4.
        let s = SamplingScheme::continuous(0.5 * std::f64::consts::LN_2).unwrap();
        let t = dwell_transition(&k2(), &s).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.75, 0.25, 0.25, 0.75]);
        assert!((t - expected).amax() < 1e-14);
    }

    #[test]
    fn sampled_dwell_approaches_continuous_limit() {
        let l = Graph::path(3).laplacian();
        let continuous = dwell_transition(&l, &SamplingScheme::continuous(1.0).unwrap()).unwrap();
        let coarse =
            dwell_transition(&l, &SamplingScheme::sampled(0.1, 10).unwrap()).unwrap();
        let fine =
            dwell_transition(&l, &SamplingScheme::sampled(0.001, 1000).unwrap()).unwrap();
        let coarse_err = (&coarse - &continuous).amax();
        let fine_err = (&fine - &continuous).amax();
        assert!(coarse_err > fine_err, "{coarse_err} vs {fine_err}");
        assert!(fine_err < 2e-3);
        assert!(coarse_err < 0.2);
    }

    #[test]
    fn dwell_transition_is_row_stochastic() {
        let l = Graph::ring(5).laplacian();
        for scheme in [
            SamplingScheme::sampled(0.4, 25).unwrap(),
            SamplingScheme::continuous(3.0).unwrap(),
        ] {
            let t = dwell_transition(&l, &scheme).unwrap();
            for row in t.row_iter() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn dwell_transition_rejects_unstable_period() {
        let l = Graph::ring(5).laplacian();
        let s = SamplingScheme::sampled(0.5, 10).unwrap();
        assert!(matches!(
            dwell_transition(&l, &s),
            Err(Error::SamplingPeriod { .. })
        ));
    }

    #[test]
    fn lyapunov_pair_matches_hand_computation() {
        // V = 2, next state [0.8, -0.8], V' = 1.28, quotient -7.2; the
        // quadratic form gives -2 * 4 + 0.1 * 8 = -7.2 as well.
        let x = StateVector::from_slice(&[1.0, -1.0]).unwrap();
        let dv = lyapunov_delta(&x, &k2(), 0.1).unwrap();
        assert!((dv + 7.2).abs() < 1e-12, "got {dv}");
    }

    #[test]
    fn lyapunov_is_negative_off_consensus_and_zero_at_consensus() {
        let l = Graph::path(4).laplacian();
        let x = StateVector::from_slice(&[1.0, 0.5, -0.25, 0.75]).unwrap();
        assert!(lyapunov_delta(&x, &l, 0.3).unwrap() < 0.0);
        let flat = StateVector::from_slice(&[0.7, 0.7, 0.7, 0.7]).unwrap();
        assert_eq!(lyapunov_delta(&flat, &l, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn lyapunov_rejects_unbalanced_digraphs() {
        let g = Graph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0)], false).unwrap();
        // Directed cycles are balanced, so this one passes.
        let x = StateVector::from_slice(&[1.0, 0.0, -1.0]).unwrap();
        assert!(lyapunov_delta(&x, &g.laplacian(), 0.3).is_ok());
        // A one-way chain is not.
        let chain = Graph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)], false).unwrap();
        assert!(matches!(
            lyapunov_delta(&x, &chain.laplacian(), 0.3),
            Err(Error::InvalidGraph(_))
        ));
    }
}
