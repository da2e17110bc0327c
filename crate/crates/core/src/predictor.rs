//! Availability timelines for secondary users sharing one primary.
//!
//! Losses are evaluated once per user before the time loop (geometry is
//! static), which also fixes each user's [`RangeClass`]. Monte Carlo
//! prediction then draws one primary path per replica and maps it through the
//! threshold rule for every in-range user; out-of-range users are always free
//! and never reach the comparison. Analytic prediction propagates
//! `Pr{X_n = Active}` through the transition matrix instead of sampling.
//!
//! Replica `r` draws from [`SimRng::substream`]`(seed, r)`, so output is a
//! function of `(scenario, seed)` alone regardless of worker count.

use std::collections::HashSet;
use std::io;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::availability::{
    channel_state, classify_range, received_power, AvailabilityError, AvailabilityState, RadioParams, RangeClass,
};
use crate::markov::{self, ChannelState, InitialState, MarkovError, MarkovParams};
use crate::propagation::{LinkGeometry, PathLossResult, PropagationError, PropagationModel};
use crate::rng::SimRng;

/// Default cap on `n_steps * users * replicas` for in-memory reports.
pub const DEFAULT_MAX_CELLS: u64 = 100_000_000;

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("scenario has no users")]
    NoUsers,
    #[error("n_steps must be at least 1")]
    ZeroSteps,
    #[error("n_replicas must be at least 1")]
    ZeroReplicas,
    #[error("duplicate user id `{0}`")]
    DuplicateUser(String),
    #[error("user `{user_id}`: {source}")]
    Propagation {
        user_id: String,
        #[source]
        source: PropagationError,
    },
    #[error(transparent)]
    Radio(#[from] AvailabilityError),
    #[error(transparent)]
    Markov(#[from] MarkovError),
    #[error("operation requires {expected} mode")]
    WrongMode { expected: &'static str },
    #[error("{cells} timeline cells exceed the in-memory limit of {limit}; use the streaming predictor")]
    TooLarge { cells: u64, limit: u64 },
    #[error("worker pool: {0}")]
    Pool(String),
    #[error("timeline sink: {0}")]
    Sink(#[source] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecondaryUser {
    pub id: String,
    pub geometry: LinkGeometry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictionMode {
    MonteCarlo { seed: u64, replicas: u32 },
    Analytic,
}

impl PredictionMode {
    pub fn name(&self) -> &'static str {
        match self {
            PredictionMode::MonteCarlo { .. } => "monte_carlo",
            PredictionMode::Analytic => "analytic",
        }
    }
}

/// Everything one prediction run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub markov: MarkovParams,
    pub radio: RadioParams,
    pub model: PropagationModel,
    pub users: Vec<SecondaryUser>,
    pub n_steps: usize,
    pub mode: PredictionMode,
    pub initial: InitialState,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), PredictError> {
        if self.users.is_empty() {
            return Err(PredictError::NoUsers);
        }
        if self.n_steps == 0 {
            return Err(PredictError::ZeroSteps);
        }
        if let PredictionMode::MonteCarlo { replicas: 0, .. } = self.mode {
            return Err(PredictError::ZeroReplicas);
        }
        let mut seen = HashSet::with_capacity(self.users.len());
        for u in &self.users {
            if !seen.insert(u.id.as_str()) {
                return Err(PredictError::DuplicateUser(u.id.clone()));
            }
        }
        self.radio.validate()?;
        Ok(())
    }

    fn replicas(&self) -> u32 {
        match self.mode {
            PredictionMode::MonteCarlo { replicas, .. } => replicas,
            PredictionMode::Analytic => 1,
        }
    }

    /// Timeline cells a full in-memory Monte Carlo report would hold.
    pub fn cell_count(&self) -> u64 {
        self.n_steps as u64 * self.users.len() as u64 * self.replicas() as u64
    }
}

/// Execution knobs that never affect results.
#[derive(Debug, Clone, Copy)]
pub struct ExecOptions {
    /// Worker threads; `None` uses the machine's parallelism.
    pub workers: Option<usize>,
    pub max_cells: u64,
}

impl Default for ExecOptions {
    fn default() -> Self {
        Self {
            workers: None,
            max_cells: DEFAULT_MAX_CELLS,
        }
    }
}

impl ExecOptions {
    pub fn with_workers(workers: usize) -> Self {
        Self {
            workers: Some(workers),
            ..Self::default()
        }
    }

    fn run<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T, PredictError> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(w) = self.workers {
            builder = builder.num_threads(w.max(1));
        }
        let pool = builder.build().map_err(|e| PredictError::Pool(e.to_string()))?;
        Ok(pool.install(f))
    }
}

/// A user's precomputed link.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserLink {
    pub user_id: String,
    pub loss: PathLossResult,
    pub p_rx_dbm: f64,
    pub range: RangeClass,
}

/// Counters observed during a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RunStats {
    pub loss_evaluations: u64,
    /// Threshold comparisons made inside the time loop.
    pub threshold_comparisons: u64,
}

/// One loss evaluation per user, in scenario order.
pub fn precompute_losses(scenario: &Scenario) -> Result<Vec<UserLink>, PredictError> {
    precompute_counted(scenario).map(|(links, _)| links)
}

fn precompute_counted(scenario: &Scenario) -> Result<(Vec<UserLink>, u64), PredictError> {
    let mut evaluations = 0u64;
    let links = scenario
        .users
        .iter()
        .map(|u| {
            evaluations += 1;
            let loss = scenario
                .model
                .evaluate(&u.geometry)
                .map_err(|source| PredictError::Propagation {
                    user_id: u.id.clone(),
                    source,
                })?;
            Ok(UserLink {
                user_id: u.id.clone(),
                loss,
                p_rx_dbm: received_power(&scenario.radio, &loss),
                range: classify_range(&scenario.radio, &loss),
            })
        })
        .collect::<Result<Vec<_>, PredictError>>()?;
    Ok((links, evaluations))
}

/// One replica's primary path and per-user availability.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplicaTimelines {
    pub replica: u32,
    /// `X_1..X_N`.
    pub primary: Vec<ChannelState>,
    /// `Y_1..Y_N` per user, in scenario order.
    pub states: Vec<Vec<AvailabilityState>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Timelines {
    MonteCarlo(Vec<ReplicaTimelines>),
    /// Per-user occupancy probabilities for steps 1..N.
    Analytic(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserSummary {
    pub user_id: String,
    pub range: RangeClass,
    pub loss: PathLossResult,
    pub p_rx_dbm: f64,
    /// Free cells over all cells (Monte Carlo) or mean of `1 - p` (analytic).
    pub availability_fraction: f64,
    /// Longest run over all replicas; absent for analytic runs.
    pub longest_free_run: Option<usize>,
    pub longest_occupied_run: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetadata {
    pub mode: &'static str,
    pub seed: Option<u64>,
    pub replicas: u32,
    pub n_steps: usize,
    pub basic_model: &'static str,
    pub clutter_model: &'static str,
    #[serde(skip)]
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionSummary {
    pub metadata: RunMetadata,
    pub users: Vec<UserSummary>,
    pub stats: RunStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionReport {
    pub summary: PredictionSummary,
    pub timelines: Timelines,
}

impl PredictionReport {
    pub fn user_index(&self, user_id: &str) -> Option<usize> {
        self.summary.users.iter().position(|u| u.user_id == user_id)
    }
}

/// Runs whichever predictor the scenario's mode selects.
pub fn predict(scenario: &Scenario, opts: &ExecOptions) -> Result<PredictionReport, PredictError> {
    match scenario.mode {
        PredictionMode::MonteCarlo { .. } => predict_monte_carlo(scenario, opts),
        PredictionMode::Analytic => predict_analytic(scenario),
    }
}

struct Prepared<'a> {
    scenario: &'a Scenario,
    links: Vec<UserLink>,
    seed: u64,
    replicas: u32,
    loss_evaluations: u64,
}

impl<'a> Prepared<'a> {
    fn new(scenario: &'a Scenario) -> Result<Self, PredictError> {
        scenario.validate()?;
        let PredictionMode::MonteCarlo { seed, replicas } = scenario.mode else {
            return Err(PredictError::WrongMode {
                expected: "monte_carlo",
            });
        };
        // Surface a degenerate stationary start before spawning work.
        scenario.initial.distribution(&scenario.markov)?;
        let (links, loss_evaluations) = precompute_counted(scenario)?;
        Ok(Self {
            scenario,
            links,
            seed,
            replicas,
            loss_evaluations,
        })
    }

    fn replica(&self, replica: u32) -> Result<ReplicaOutput, MarkovError> {
        let s = self.scenario;
        let mut rng = SimRng::substream(self.seed, u64::from(replica));
        let primary = markov::sample_path(&s.markov, s.initial, s.n_steps, &mut rng)?;
        let p_th = s.radio.p_th_dbm;
        let states: Vec<Vec<AvailabilityState>> = self
            .links
            .par_iter()
            .map(|link| match link.range {
                RangeClass::OutOfRange => vec![AvailabilityState::Free; primary.len()],
                RangeClass::InRange => primary.iter().map(|&x| channel_state(x, link.p_rx_dbm, p_th)).collect(),
            })
            .collect();
        // In-range rows are frequently identical; only rescan a row that
        // differs from the last one scanned.
        let mut last: Option<(&[AvailabilityState], RowStats)> = None;
        let stats = states
            .iter()
            .zip(&self.links)
            .map(|(row, link)| match last {
                _ if link.range == RangeClass::OutOfRange => RowStats::all_free(row.len()),
                Some((prev, st)) if prev == row.as_slice() => st,
                _ => {
                    let st = RowStats::of(row);
                    last = Some((row, st));
                    st
                }
            })
            .collect();
        let comparisons =
            self.links.iter().filter(|l| l.range == RangeClass::InRange).count() as u64 * primary.len() as u64;
        Ok(ReplicaOutput {
            timelines: ReplicaTimelines {
                replica,
                primary,
                states,
            },
            stats,
            comparisons,
        })
    }

    /// Replicas in index order, computed `batch` at a time in parallel.
    fn for_each_replica(
        &self,
        opts: &ExecOptions,
        mut sink: impl FnMut(ReplicaTimelines) -> Result<(), PredictError> + Send,
    ) -> Result<(Vec<RunTally>, u64), PredictError> {
        let mut comparisons = 0u64;
        let mut tallies = vec![RunTally::default(); self.links.len()];
        let result: Result<(), PredictError> = opts.run(|| {
            let batch = (rayon::current_num_threads().max(1) * 4) as u32;
            let mut start = 0u32;
            while start < self.replicas {
                let end = start.saturating_add(batch).min(self.replicas);
                let done: Vec<_> = (start..end).into_par_iter().map(|r| self.replica(r)).collect();
                for item in done {
                    let out = item?;
                    comparisons += out.comparisons;
                    for (tally, stats) in tallies.iter_mut().zip(&out.stats) {
                        tally.add(stats);
                    }
                    sink(out.timelines)?;
                }
                start = end;
            }
            Ok(())
        })?;
        result?;
        Ok((tallies, comparisons))
    }

    fn metadata(&self, wall_time: Duration) -> RunMetadata {
        metadata(self.scenario, wall_time)
    }
}

fn metadata(scenario: &Scenario, wall_time: Duration) -> RunMetadata {
    let (seed, replicas) = match scenario.mode {
        PredictionMode::MonteCarlo { seed, replicas } => (Some(seed), replicas),
        PredictionMode::Analytic => (None, 1),
    };
    RunMetadata {
        mode: scenario.mode.name(),
        seed,
        replicas,
        n_steps: scenario.n_steps,
        basic_model: scenario.model.basic.name(),
        clutter_model: scenario.model.clutter.name(),
        wall_time,
    }
}

struct ReplicaOutput {
    timelines: ReplicaTimelines,
    stats: Vec<RowStats>,
    comparisons: u64,
}

/// Free-cell count and longest runs of one timeline row.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct RowStats {
    free: u64,
    len: u64,
    longest_free: usize,
    longest_occupied: usize,
}

impl RowStats {
    fn all_free(len: usize) -> Self {
        Self {
            free: len as u64,
            len: len as u64,
            longest_free: len,
            longest_occupied: 0,
        }
    }

    fn of(row: &[AvailabilityState]) -> Self {
        let len = row.len() as u64;
        let occupied: u64 = row.iter().map(|s| s.as_u8() as u64).sum();
        // Branch-free run tracking: state changes are unpredictable.
        let (mut run, mut prev) = (0usize, usize::MAX);
        let (mut longest_free, mut longest_occupied) = (0usize, 0usize);
        for s in row {
            let b = s.as_u8() as usize;
            let keep = 0usize.wrapping_sub((b == prev) as usize);
            run = (run & keep) + 1;
            prev = b;
            let occ = 0usize.wrapping_sub(b);
            longest_free = longest_free.max(run & !occ);
            longest_occupied = longest_occupied.max(run & occ);
        }
        Self {
            free: len - occupied,
            len,
            longest_free,
            longest_occupied,
        }
    }
}

/// Running per-user statistics across replicas.
#[derive(Debug, Clone, Default)]
struct RunTally {
    free_cells: u64,
    total_cells: u64,
    longest_free: usize,
    longest_occupied: usize,
}

impl RunTally {
    fn add(&mut self, row: &RowStats) {
        self.free_cells += row.free;
        self.total_cells += row.len;
        self.longest_free = self.longest_free.max(row.longest_free);
        self.longest_occupied = self.longest_occupied.max(row.longest_occupied);
    }

    fn summary(&self, link: &UserLink) -> UserSummary {
        UserSummary {
            user_id: link.user_id.clone(),
            range: link.range,
            loss: link.loss,
            p_rx_dbm: link.p_rx_dbm,
            availability_fraction: self.free_cells as f64 / self.total_cells as f64,
            longest_free_run: Some(self.longest_free),
            longest_occupied_run: Some(self.longest_occupied),
        }
    }
}

/// Monte Carlo prediction with every replica's timelines kept in memory.
pub fn predict_monte_carlo(scenario: &Scenario, opts: &ExecOptions) -> Result<PredictionReport, PredictError> {
    let started = Instant::now();
    let prepared = Prepared::new(scenario)?;
    let cells = scenario.cell_count();
    if cells > opts.max_cells {
        return Err(PredictError::TooLarge {
            cells,
            limit: opts.max_cells,
        });
    }
    let mut replicas = Vec::with_capacity(prepared.replicas as usize);
    let (tallies, comparisons) = prepared.for_each_replica(opts, |t| {
        replicas.push(t);
        Ok(())
    })?;
    let users = prepared.links.iter().zip(&tallies).map(|(l, t)| t.summary(l)).collect();
    Ok(PredictionReport {
        summary: PredictionSummary {
            metadata: prepared.metadata(started.elapsed()),
            users,
            stats: RunStats {
                loss_evaluations: prepared.loss_evaluations,
                threshold_comparisons: comparisons,
            },
        },
        timelines: Timelines::MonteCarlo(replicas),
    })
}

/// Monte Carlo prediction handing each replica to `sink` in replica order
/// instead of keeping it; memory stays at one batch of replicas.
pub fn predict_monte_carlo_streaming(
    scenario: &Scenario,
    opts: &ExecOptions,
    mut sink: impl FnMut(&ReplicaTimelines) -> io::Result<()> + Send,
) -> Result<PredictionSummary, PredictError> {
    let started = Instant::now();
    let prepared = Prepared::new(scenario)?;
    let (tallies, comparisons) = prepared.for_each_replica(opts, |t| sink(&t).map_err(PredictError::Sink))?;
    let users = prepared.links.iter().zip(&tallies).map(|(l, t)| t.summary(l)).collect();
    Ok(PredictionSummary {
        metadata: prepared.metadata(started.elapsed()),
        users,
        stats: RunStats {
            loss_evaluations: prepared.loss_evaluations,
            threshold_comparisons: comparisons,
        },
    })
}

/// Per-step occupancy probabilities; no randomness.
pub fn predict_analytic(scenario: &Scenario) -> Result<PredictionReport, PredictError> {
    let started = Instant::now();
    scenario.validate()?;
    if scenario.mode != PredictionMode::Analytic {
        return Err(PredictError::WrongMode { expected: "analytic" });
    }
    let initial = scenario.initial.distribution(&scenario.markov)?;
    let (links, loss_evaluations) = precompute_counted(scenario)?;
    let active = markov::occupancy_probabilities(initial, &scenario.markov, scenario.n_steps);
    let mut comparisons = 0u64;
    let probs: Vec<Vec<f64>> = links
        .iter()
        .map(|l| match l.range {
            RangeClass::InRange => {
                comparisons += active.len() as u64;
                active.clone()
            }
            RangeClass::OutOfRange => vec![0.0; active.len()],
        })
        .collect();
    let users = links
        .iter()
        .zip(&probs)
        .map(|(l, p)| UserSummary {
            user_id: l.user_id.clone(),
            range: l.range,
            loss: l.loss,
            p_rx_dbm: l.p_rx_dbm,
            availability_fraction: p.iter().map(|p| 1.0 - p).sum::<f64>() / p.len() as f64,
            longest_free_run: None,
            longest_occupied_run: None,
        })
        .collect();
    Ok(PredictionReport {
        summary: PredictionSummary {
            metadata: metadata(scenario, started.elapsed()),
            users,
            stats: RunStats {
                loss_evaluations,
                threshold_comparisons: comparisons,
            },
        },
        timelines: Timelines::Analytic(probs),
    })
}

/// Per-user, per-step count of occupied replicas.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnsembleCounter {
    replicas: u32,
    occupied: Vec<Vec<u32>>,
}

impl EnsembleCounter {
    pub fn new(users: usize, n_steps: usize) -> Self {
        Self {
            replicas: 0,
            occupied: vec![vec![0; n_steps]; users],
        }
    }

    pub fn add(&mut self, replica: &ReplicaTimelines) {
        self.replicas += 1;
        for (counts, row) in self.occupied.iter_mut().zip(&replica.states) {
            for (c, s) in counts.iter_mut().zip(row) {
                *c += s.as_u8() as u32;
            }
        }
    }

    pub fn replicas(&self) -> u32 {
        self.replicas
    }

    /// Occupied fraction per user and step.
    pub fn frequencies(&self) -> Vec<Vec<f64>> {
        let r = f64::from(self.replicas.max(1));
        self.occupied
            .iter()
            .map(|row| row.iter().map(|&c| f64::from(c) / r).collect())
            .collect()
    }
}

/// Fraction of replicas in which each user is occupied at each step.
pub fn ensemble_availability(report: &PredictionReport) -> Result<Vec<Vec<f64>>, PredictError> {
    let Timelines::MonteCarlo(replicas) = &report.timelines else {
        return Err(PredictError::WrongMode {
            expected: "monte_carlo",
        });
    };
    let mut counter = EnsembleCounter::new(report.summary.users.len(), report.summary.metadata.n_steps);
    for r in replicas {
        counter.add(r);
    }
    Ok(counter.frequencies())
}


#[cfg(test)]
mod row_stats_tests {
    use super::*;
    use proptest::prelude::*;

    fn naive_longest(row: &[AvailabilityState], target: AvailabilityState) -> usize {
        row.split(|s| *s != target).map(|r| r.len()).max().unwrap_or(0)
    }

    proptest! {
        #[test]
        fn matches_naive_scan(bits in prop::collection::vec(any::<bool>(), 0..300)) {
            let row: Vec<_> = bits
                .iter()
                .map(|&b| if b { AvailabilityState::Occupied } else { AvailabilityState::Free })
                .collect();
            let st = RowStats::of(&row);
            prop_assert_eq!(st.len, row.len() as u64);
            prop_assert_eq!(st.free, row.iter().filter(|s| s.is_free()).count() as u64);
            prop_assert_eq!(st.longest_free, naive_longest(&row, AvailabilityState::Free));
            prop_assert_eq!(st.longest_occupied, naive_longest(&row, AvailabilityState::Occupied));
        }
    }

    #[test]
    fn all_free_matches_scan() {
        let row = vec![AvailabilityState::Free; 17];
        assert_eq!(RowStats::all_free(17), RowStats::of(&row));
    }
}
