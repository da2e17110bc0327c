//! Two-state discrete-time Markov model of primary transmitter activity.
//!
//! The primary is either idle or active at each step. From idle it starts
//! transmitting with probability `lambda`; from active it stops with
//! probability `mu`. Everything here is a plain value type except the random
//! source, which callers pass explicitly.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SimRng;

/// Tolerance on `p_idle + p_active = 1`.
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarkovError {
    #[error("{name} = {value} is not a probability in [0, 1]")]
    InvalidProbability { name: &'static str, value: f64 },
    #[error("invalid state distribution ({p_idle}, {p_active}): components must lie in [0, 1] and sum to 1")]
    InvalidDistribution { p_idle: f64, p_active: f64 },
    #[error("degenerate chain (lambda = mu = 0) has no unique stationary distribution")]
    DegenerateChain,
    #[error("trace has {len} observation(s); at least 2 are required")]
    TraceTooShort { len: usize },
    #[error("{parameter} unidentifiable: no observed transition starts in the {origin} state")]
    InsufficientData {
        parameter: &'static str,
        origin: ChannelState,
    },
}

/// Primary activity at one time step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum ChannelState {
    Idle = 0,
    Active = 1,
}

impl ChannelState {
    pub fn is_active(self) -> bool {
        self == ChannelState::Active
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for ChannelState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChannelState::Idle => "idle",
            ChannelState::Active => "active",
        })
    }
}

impl TryFrom<u8> for ChannelState {
    type Error = u8;

    fn try_from(v: u8) -> Result<Self, u8> {
        match v {
            0 => Ok(ChannelState::Idle),
            1 => Ok(ChannelState::Active),
            other => Err(other),
        }
    }
}

/// Per-step transition probabilities of the primary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MarkovParams {
    lambda: f64,
    mu: f64,
}

impl MarkovParams {
    /// `lambda`: idle to active; `mu`: active to idle.
    pub fn new(lambda: f64, mu: f64) -> Result<Self, MarkovError> {
        check_probability("lambda", lambda)?;
        check_probability("mu", mu)?;
        Ok(Self { lambda, mu })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn is_degenerate(&self) -> bool {
        self.lambda + self.mu == 0.0
    }

    /// Second eigenvalue of the transition matrix, `1 - lambda - mu`. Its
    /// magnitude is the geometric rate at which any initial distribution
    /// approaches the stationary one.
    pub fn mixing_factor(&self) -> f64 {
        1.0 - self.lambda - self.mu
    }
}

impl<'de> Deserialize<'de> for MarkovParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            lambda: f64,
            mu: f64,
        }
        let raw = Raw::deserialize(d)?;
        MarkovParams::new(raw.lambda, raw.mu).map_err(serde::de::Error::custom)
    }
}

fn check_probability(name: &'static str, value: f64) -> Result<(), MarkovError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(MarkovError::InvalidProbability { name, value })
    }
}

/// Probability mass over the two states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StateDistribution {
    p_idle: f64,
    p_active: f64,
}

impl StateDistribution {
    pub fn new(p_idle: f64, p_active: f64) -> Result<Self, MarkovError> {
        let ok = (0.0..=1.0).contains(&p_idle)
            && (0.0..=1.0).contains(&p_active)
            && (p_idle + p_active - 1.0).abs() <= DISTRIBUTION_TOLERANCE;
        if ok {
            Ok(Self { p_idle, p_active })
        } else {
            Err(MarkovError::InvalidDistribution { p_idle, p_active })
        }
    }

    /// Distribution concentrated on `state`.
    pub fn certain(state: ChannelState) -> Self {
        match state {
            ChannelState::Idle => Self {
                p_idle: 1.0,
                p_active: 0.0,
            },
            ChannelState::Active => Self {
                p_idle: 0.0,
                p_active: 1.0,
            },
        }
    }

    pub fn p_idle(&self) -> f64 {
        self.p_idle
    }

    pub fn p_active(&self) -> f64 {
        self.p_active
    }
}

/// How `X_0` is chosen.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub enum InitialState {
    Fixed(ChannelState),
    Distribution(StateDistribution),
    /// The chain's own stationary distribution.
    #[default]
    Stationary,
}

impl InitialState {
    /// Resolves to a concrete distribution for `params`.
    pub fn distribution(&self, params: &MarkovParams) -> Result<StateDistribution, MarkovError> {
        match *self {
            InitialState::Fixed(s) => Ok(StateDistribution::certain(s)),
            InitialState::Distribution(d) => Ok(d),
            InitialState::Stationary => stationary_distribution(params),
        }
    }

    /// Draws `X_0`. A fixed state consumes no variate; otherwise exactly one.
    pub fn draw(&self, params: &MarkovParams, rng: &mut SimRng) -> Result<ChannelState, MarkovError> {
        match *self {
            InitialState::Fixed(s) => Ok(s),
            _ => {
                let dist = self.distribution(params)?;
                Ok(if rng.chance(dist.p_active) {
                    ChannelState::Active
                } else {
                    ChannelState::Idle
                })
            }
        }
    }
}

/// Long-run distribution `(mu, lambda) / (lambda + mu)`.
pub fn stationary_distribution(params: &MarkovParams) -> Result<StateDistribution, MarkovError> {
    if params.is_degenerate() {
        return Err(MarkovError::DegenerateChain);
    }
    let total = params.lambda + params.mu;
    let p_idle = params.mu / total;
    Ok(StateDistribution {
        p_idle,
        p_active: 1.0 - p_idle,
    })
}

/// One transition. Consumes exactly one uniform variate.
#[inline]
pub fn step(current: ChannelState, params: &MarkovParams, rng: &mut SimRng) -> ChannelState {
    match current {
        ChannelState::Idle => {
            if rng.chance(params.lambda) {
                ChannelState::Active
            } else {
                ChannelState::Idle
            }
        }
        ChannelState::Active => {
            if rng.chance(params.mu) {
                ChannelState::Idle
            } else {
                ChannelState::Active
            }
        }
    }
}

/// Returns `X_1..X_N`; `X_0` itself is not part of the output.
pub fn sample_path(
    params: &MarkovParams,
    initial: InitialState,
    n_steps: usize,
    rng: &mut SimRng,
) -> Result<Vec<ChannelState>, MarkovError> {
    let mut path = Vec::with_capacity(n_steps);
    sample_path_into(params, initial, n_steps, rng, &mut path)?;
    Ok(path)
}

/// Like [`sample_path`] but reuses `out`, clearing it first.
pub fn sample_path_into(
    params: &MarkovParams,
    initial: InitialState,
    n_steps: usize,
    rng: &mut SimRng,
    out: &mut Vec<ChannelState>,
) -> Result<(), MarkovError> {
    out.clear();
    let mut state = initial.draw(params, rng)?;
    out.extend((0..n_steps).map(|_| {
        state = step(state, params, rng);
        state
    }));
    Ok(())
}

/// Applies the transition matrix once.
#[inline]
pub fn propagate(dist: StateDistribution, params: &MarkovParams) -> StateDistribution {
    let p_active = dist.p_idle * params.lambda + dist.p_active * (1.0 - params.mu);
    StateDistribution {
        p_idle: 1.0 - p_active,
        p_active,
    }
}

/// Exact n-step distribution by repeated application of the transition rule.
pub fn evolve_distribution(initial: StateDistribution, params: &MarkovParams, n_steps: usize) -> StateDistribution {
    (0..n_steps).fold(initial, |d, _| propagate(d, params))
}

/// `Pr{X_n = Active}` for n = 1..=n_steps.
pub fn occupancy_probabilities(initial: StateDistribution, params: &MarkovParams, n_steps: usize) -> Vec<f64> {
    let mut dist = initial;
    (0..n_steps)
        .map(|_| {
            dist = propagate(dist, params);
            dist.p_active
        })
        .collect()
}

/// Observed primary states at uniform time steps.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct OccupancyTrace {
    states: Vec<ChannelState>,
}

impl OccupancyTrace {
    pub fn new(states: Vec<ChannelState>) -> Self {
        Self { states }
    }

    pub fn states(&self) -> &[ChannelState] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

impl From<Vec<ChannelState>> for OccupancyTrace {
    fn from(states: Vec<ChannelState>) -> Self {
        Self::new(states)
    }
}

/// Counts of consecutive `(from, to)` pairs in a trace.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct TransitionCounts {
    pub idle_idle: u64,
    pub idle_active: u64,
    pub active_idle: u64,
    pub active_active: u64,
}

impl TransitionCounts {
    pub fn from_trace(trace: &OccupancyTrace) -> Self {
        let mut c = Self::default();
        for w in trace.states.windows(2) {
            match (w[0], w[1]) {
                (ChannelState::Idle, ChannelState::Idle) => c.idle_idle += 1,
                (ChannelState::Idle, ChannelState::Active) => c.idle_active += 1,
                (ChannelState::Active, ChannelState::Idle) => c.active_idle += 1,
                (ChannelState::Active, ChannelState::Active) => c.active_active += 1,
            }
        }
        c
    }

    pub fn from_idle(&self) -> u64 {
        self.idle_idle + self.idle_active
    }

    pub fn from_active(&self) -> u64 {
        self.active_idle + self.active_active
    }
}

/// Estimator variant for [`estimate_params`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Smoothing {
    /// Raw maximum-likelihood transition frequencies.
    #[default]
    None,
    /// Adds one pseudo-count to every transition cell, which keeps both
    /// parameters defined (and strictly inside (0, 1)) on short traces.
    AddOne,
}

/// Maximum-likelihood transition-counting estimate of `(lambda, mu)`.
pub fn estimate_params(trace: &OccupancyTrace, smoothing: Smoothing) -> Result<MarkovParams, MarkovError> {
    estimate_with_counts(trace, smoothing).map(|(p, _)| p)
}

/// [`estimate_params`] that also returns the transition counts it used.
pub fn estimate_with_counts(
    trace: &OccupancyTrace,
    smoothing: Smoothing,
) -> Result<(MarkovParams, TransitionCounts), MarkovError> {
    if trace.len() < 2 {
        return Err(MarkovError::TraceTooShort { len: trace.len() });
    }
    let c = TransitionCounts::from_trace(trace);
    let (lambda, mu) = match smoothing {
        Smoothing::None => {
            if c.from_idle() == 0 {
                return Err(MarkovError::InsufficientData {
                    parameter: "lambda",
                    origin: ChannelState::Idle,
                });
            }
            if c.from_active() == 0 {
                return Err(MarkovError::InsufficientData {
                    parameter: "mu",
                    origin: ChannelState::Active,
                });
            }
            (
                c.idle_active as f64 / c.from_idle() as f64,
                c.active_idle as f64 / c.from_active() as f64,
            )
        }
        Smoothing::AddOne => (
            (c.idle_active + 1) as f64 / (c.from_idle() + 2) as f64,
            (c.active_idle + 1) as f64 / (c.from_active() + 2) as f64,
        ),
    };
    Ok((MarkovParams::new(lambda, mu)?, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use ChannelState::{Active, Idle};

    fn params(l: f64, m: f64) -> MarkovParams {
        MarkovParams::new(l, m).unwrap()
    }

    fn trace(bits: &[u8]) -> OccupancyTrace {
        bits.iter()
            .map(|&b| ChannelState::try_from(b).unwrap())
            .collect::<Vec<_>>()
            .into()
    }

    #[test]
    fn rejects_out_of_range_probabilities() {
        assert!(MarkovParams::new(1.5, 0.2).is_err());
        assert!(MarkovParams::new(0.2, -0.1).is_err());
        assert!(MarkovParams::new(f64::NAN, 0.2).is_err());
        assert!(MarkovParams::new(0.0, 0.0).is_ok());
    }

    #[test]
    fn stationary_examples() {
        let d = stationary_distribution(&params(0.2, 0.3)).unwrap();
        assert!((d.p_idle() - 0.6).abs() < 1e-15);
        assert!((d.p_active() - 0.4).abs() < 1e-15);

        let d = stationary_distribution(&params(0.0, 1.0)).unwrap();
        assert_eq!((d.p_idle(), d.p_active()), (1.0, 0.0));

        let d = stationary_distribution(&params(0.5, 0.5)).unwrap();
        assert_eq!((d.p_idle(), d.p_active()), (0.5, 0.5));
    }

    #[test]
    fn degenerate_chain_has_no_stationary_distribution() {
        assert_eq!(
            stationary_distribution(&params(0.0, 0.0)),
            Err(MarkovError::DegenerateChain)
        );
    }

    #[test]
    fn step_certain_transitions() {
        let mut rng = SimRng::new(1);
        for _ in 0..1000 {
            assert_eq!(step(Idle, &params(0.0, 0.5), &mut rng), Idle);
            assert_eq!(step(Active, &params(0.3, 1.0), &mut rng), Idle);
        }
    }

    #[test]
    fn step_consumes_exactly_one_variate() {
        let p = params(0.2, 0.3);
        let mut a = SimRng::new(9);
        let mut b = SimRng::new(9);
        step(Idle, &p, &mut a);
        b.uniform();
        assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
    }

    #[test]
    fn step_idle_to_active_frequency() {
        let p = params(0.2, 0.3);
        let mut rng = SimRng::new(2024);
        let n = 1_000_000;
        let fired = (0..n).filter(|_| step(Idle, &p, &mut rng) == Active).count();
        let freq = fired as f64 / n as f64;
        assert!((freq - 0.2).abs() <= 0.002, "freq = {freq}");
    }

    #[test]
    fn sample_path_deterministic_cases() {
        let mut rng = SimRng::new(5);
        let path = sample_path(&params(1.0, 1.0), InitialState::Fixed(Idle), 4, &mut rng).unwrap();
        assert_eq!(path, vec![Active, Idle, Active, Idle]);

        let path = sample_path(&params(0.0, 0.0), InitialState::Fixed(Active), 3, &mut rng).unwrap();
        assert_eq!(path, vec![Active, Active, Active]);
    }

    #[test]
    fn sample_path_stationary_idle_fraction() {
        let p = params(0.2, 0.3);
        let mut rng = SimRng::new(11);
        let path = sample_path(&p, InitialState::Stationary, 1_000_000, &mut rng).unwrap();
        let idle = path.iter().filter(|s| **s == Idle).count() as f64 / path.len() as f64;
        assert!((idle - 0.6).abs() <= 0.01, "idle = {idle}");
    }

    #[test]
    fn sample_path_stationary_start_on_degenerate_chain_fails() {
        let mut rng = SimRng::new(0);
        assert_eq!(
            sample_path(&params(0.0, 0.0), InitialState::Stationary, 3, &mut rng),
            Err(MarkovError::DegenerateChain)
        );
    }

    #[test]
    fn sample_path_replays_with_same_seed() {
        let p = params(0.37, 0.12);
        let a = sample_path(&p, InitialState::Stationary, 5000, &mut SimRng::new(77)).unwrap();
        let b = sample_path(&p, InitialState::Stationary, 5000, &mut SimRng::new(77)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn evolve_examples() {
        let p = params(0.2, 0.3);
        let d = evolve_distribution(StateDistribution::certain(Idle), &p, 1);
        assert!((d.p_idle() - 0.8).abs() < 1e-15);
        assert!((d.p_active() - 0.2).abs() < 1e-15);

        let start = StateDistribution::certain(Idle);
        assert_eq!(evolve_distribution(start, &p, 0), start);

        let d = evolve_distribution(start, &p, 50);
        assert!((d.p_idle() - 0.6).abs() < 1e-9);
    }

    /// Brute-force 2x2 matrix powering, independent of `propagate`.
    fn matrix_power_oracle(lambda: f64, mu: f64, n: u32, start: [f64; 2]) -> [f64; 2] {
        let p = [[1.0 - lambda, lambda], [mu, 1.0 - mu]];
        let mut acc = [[1.0, 0.0], [0.0, 1.0]];
        for _ in 0..n {
            let mut next = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    next[i][j] = (0..2).map(|k| acc[i][k] * p[k][j]).sum();
                }
            }
            acc = next;
        }
        [
            start[0] * acc[0][0] + start[1] * acc[1][0],
            start[0] * acc[0][1] + start[1] * acc[1][1],
        ]
    }

    #[test]
    fn evolve_matches_matrix_powering() {
        let p = params(0.2, 0.3);
        for n in 0..=60 {
            let d = evolve_distribution(StateDistribution::certain(Idle), &p, n as usize);
            let o = matrix_power_oracle(0.2, 0.3, n, [1.0, 0.0]);
            assert!((d.p_active() - o[1]).abs() < 1e-12, "n = {n}");
        }
    }

    #[test]
    fn estimate_examples() {
        let p = estimate_params(&trace(&[0, 0, 1, 1, 0, 0]), Smoothing::None).unwrap();
        assert!((p.lambda() - 1.0 / 3.0).abs() < 1e-15);
        assert!((p.mu() - 0.5).abs() < 1e-15);

        let p = estimate_params(&trace(&[0, 1, 0, 1, 0, 1]), Smoothing::None).unwrap();
        assert_eq!((p.lambda(), p.mu()), (1.0, 1.0));
    }

    #[test]
    fn estimate_counts_pairs() {
        let (_, c) = estimate_with_counts(&trace(&[0, 0, 1, 1, 0, 0]), Smoothing::None).unwrap();
        assert_eq!(
            c,
            TransitionCounts {
                idle_idle: 2,
                idle_active: 1,
                active_idle: 1,
                active_active: 1
            }
        );
    }

    #[test]
    fn estimate_reports_unidentifiable_parameter() {
        match estimate_params(&trace(&[0, 0, 0, 0]), Smoothing::None) {
            Err(MarkovError::InsufficientData { parameter, .. }) => assert_eq!(parameter, "mu"),
            other => panic!("unexpected {other:?}"),
        }
        match estimate_params(&trace(&[1, 1, 1]), Smoothing::None) {
            Err(MarkovError::InsufficientData { parameter, .. }) => assert_eq!(parameter, "lambda"),
            other => panic!("unexpected {other:?}"),
        }
        // The final observation is never a pair origin.
        match estimate_params(&trace(&[0, 0, 1]), Smoothing::None) {
            Err(MarkovError::InsufficientData { parameter, .. }) => assert_eq!(parameter, "mu"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(
            estimate_params(&trace(&[1]), Smoothing::None),
            Err(MarkovError::TraceTooShort { len: 1 })
        );
    }

    #[test]
    fn add_one_smoothing_handles_constant_trace() {
        let p = estimate_params(&trace(&[0, 0, 0, 0]), Smoothing::AddOne).unwrap();
        assert!((p.lambda() - 1.0 / 5.0).abs() < 1e-15);
        assert!((p.mu() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn estimate_recovers_generating_params() {
        let p = params(0.2, 0.3);
        let path = sample_path(&p, InitialState::Stationary, 1_000_000, &mut SimRng::new(31)).unwrap();
        let est = estimate_params(&path.into(), Smoothing::None).unwrap();
        assert!((est.lambda() - 0.2).abs() <= 0.005);
        assert!((est.mu() - 0.3).abs() <= 0.005);
    }

    proptest! {
        #[test]
        fn stationary_sums_to_one(l in 0.0f64..=1.0, m in 0.0f64..=1.0) {
            prop_assume!(l + m > 0.0);
            let d = stationary_distribution(&params(l, m)).unwrap();
            prop_assert!((d.p_idle() + d.p_active() - 1.0).abs() <= 1e-12);
            prop_assert!(d.p_idle() >= 0.0 && d.p_active() >= 0.0);
        }

        #[test]
        fn stationary_is_fixed_point(l in 0.001f64..=1.0, m in 0.001f64..=1.0, k in 0usize..=1000) {
            let p = params(l, m);
            let s = stationary_distribution(&p).unwrap();
            let e = evolve_distribution(s, &p, k);
            prop_assert!((e.p_active() - s.p_active()).abs() <= 1e-10);
            prop_assert!((e.p_idle() - s.p_idle()).abs() <= 1e-10);
        }

        #[test]
        fn evolve_keeps_a_distribution(l in 0.0f64..=1.0, m in 0.0f64..=1.0, p0 in 0.0f64..=1.0, k in 0usize..200) {
            let d = evolve_distribution(StateDistribution::new(1.0 - p0, p0).unwrap(), &params(l, m), k);
            prop_assert!(StateDistribution::new(d.p_idle(), d.p_active()).is_ok());
        }
    }
}
