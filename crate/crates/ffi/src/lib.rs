//! C ABI for `specpredict`.
//!
//! Every fallible function returns an [`SpStatus`]. On failure a message is
//! kept per thread and can be read with [`sp_last_error_message`]. Handles are
//! opaque; free them with the matching `*_free` function. Buffers are always
//! caller-owned.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use specpredict::availability::{interference_range, RangeClass, RangeOutcome};
use specpredict::markov::{
    estimate_params, stationary_distribution, ChannelState, MarkovError, MarkovParams, OccupancyTrace, Smoothing,
};
use specpredict::predictor::{self, ExecOptions, PredictError, PredictionReport, Scenario, Timelines};
use specpredict::propagation::{self, ClutterEnv, LinkGeometry, PropagationError};
use specpredict::scenario::{ScenarioError, ScenarioFile};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument is malformed (bad UTF-8, index out of bounds, short buffer).
    InvalidArgument = 2,
    /// Scenario JSON could not be parsed or failed validation.
    InvalidScenario = 3,
    /// Parameters are well-formed but the computation is undefined for them.
    Domain = 4,
    /// File system failure.
    Io = 5,
    /// The call panicked; the library state is unaffected.
    Internal = 6,
}

/// Answer of [`sp_scenario_interference_range`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpRangeKind {
    Crossing = 0,
    AlwaysIn = 1,
    AlwaysOut = 2,
}

/// Surroundings of a secondary receiver.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpClutterEnv {
    Open = 0,
    Suburban = 1,
    Urban = 2,
}

impl From<SpClutterEnv> for ClutterEnv {
    fn from(e: SpClutterEnv) -> Self {
        match e {
            SpClutterEnv::Open => ClutterEnv::Open,
            SpClutterEnv::Suburban => ClutterEnv::Suburban,
            SpClutterEnv::Urban => ClutterEnv::Urban,
        }
    }
}

/// Link description passed by value.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SpLinkGeometry {
    pub distance_km: f64,
    pub h_tx_m: f64,
    pub h_rx_m: f64,
    pub freq_mhz: f64,
    pub time_pct: f64,
    pub clutter_env: SpClutterEnv,
    pub loc_pct: f64,
}

impl From<SpLinkGeometry> for LinkGeometry {
    fn from(g: SpLinkGeometry) -> Self {
        LinkGeometry {
            distance_km: g.distance_km,
            h_tx_m: g.h_tx_m,
            h_rx_m: g.h_rx_m,
            freq_mhz: g.freq_mhz,
            time_pct: g.time_pct,
            clutter_env: g.clutter_env.into(),
            loc_pct: g.loc_pct,
        }
    }
}

/// A validated scenario.
pub struct SpScenario {
    scenario: Scenario,
}

/// Result of [`sp_predict`].
pub struct SpReport {
    report: PredictionReport,
    user_ids: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl ToString) {
    let text = message.to_string().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

struct Failure(SpStatus, String);

type FfiResult<T = ()> = Result<T, Failure>;

fn fail<T>(status: SpStatus, message: impl ToString) -> FfiResult<T> {
    Err(Failure(status, message.to_string()))
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        let status = match e {
            ScenarioError::Io { .. } => SpStatus::Io,
            _ => SpStatus::InvalidScenario,
        };
        Failure(status, e.to_string())
    }
}

impl From<MarkovError> for Failure {
    fn from(e: MarkovError) -> Self {
        let status = match e {
            MarkovError::InvalidProbability { .. } | MarkovError::InvalidDistribution { .. } => {
                SpStatus::InvalidArgument
            }
            _ => SpStatus::Domain,
        };
        Failure(status, e.to_string())
    }
}

impl From<PropagationError> for Failure {
    fn from(e: PropagationError) -> Self {
        let status = match e {
            PropagationError::InvalidGeometry { .. } => SpStatus::InvalidArgument,
            _ => SpStatus::Domain,
        };
        Failure(status, e.to_string())
    }
}

impl From<PredictError> for Failure {
    fn from(e: PredictError) -> Self {
        let status = match e {
            PredictError::Pool(_) => SpStatus::Internal,
            PredictError::Sink(_) => SpStatus::Io,
            _ => SpStatus::Domain,
        };
        Failure(status, e.to_string())
    }
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> FfiResult) -> SpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SpStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SpStatus::Internal
        }
    }
}

unsafe fn out_ref<'a, T>(p: *mut T, name: &str) -> FfiResult<&'a mut T> {
    p.as_mut()
        .map_or_else(|| fail(SpStatus::NullPointer, format!("{name} is null")), Ok)
}

unsafe fn in_ref<'a, T>(p: *const T, name: &str) -> FfiResult<&'a T> {
    p.as_ref()
        .map_or_else(|| fail(SpStatus::NullPointer, format!("{name} is null")), Ok)
}

unsafe fn in_str<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return fail(SpStatus::NullPointer, format!("{name} is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .or_else(|_| fail(SpStatus::InvalidArgument, format!("{name} is not valid UTF-8")))
}

unsafe fn out_slice<'a, T>(p: *mut T, len: usize, needed: usize, name: &str) -> FfiResult<&'a mut [T]> {
    if len < needed {
        return fail(
            SpStatus::InvalidArgument,
            format!("{name} holds {len} elements, {needed} required"),
        );
    }
    if needed == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return fail(SpStatus::NullPointer, format!("{name} is null"));
    }
    Ok(std::slice::from_raw_parts_mut(p, needed))
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn sp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

fn build_scenario(file: ScenarioFile, base_dir: &Path) -> FfiResult<Box<SpScenario>> {
    Ok(Box::new(SpScenario {
        scenario: file.to_scenario(base_dir)?,
    }))
}

/// Parses and validates a scenario document. Relative loss-table paths are
/// resolved against `base_dir`, which may be null for the working directory.
#[no_mangle]
pub unsafe extern "C" fn sp_scenario_from_json(
    json: *const c_char,
    base_dir: *const c_char,
    out: *mut *mut SpScenario,
) -> SpStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let text = in_str(json, "json")?;
        let base = if base_dir.is_null() {
            PathBuf::from(".")
        } else {
            PathBuf::from(in_str(base_dir, "base_dir")?)
        };
        let file = ScenarioFile::from_json_str(text)?;
        *out = Box::into_raw(build_scenario(file, &base)?);
        Ok(())
    })
}

/// Loads a scenario file; relative table paths resolve against its directory.
#[no_mangle]
pub unsafe extern "C" fn sp_scenario_load(path: *const c_char, out: *mut *mut SpScenario) -> SpStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let path = Path::new(in_str(path, "path")?);
        let file = ScenarioFile::load(path)?;
        let base = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        *out = Box::into_raw(build_scenario(file, base)?);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sp_scenario_free(scenario: *mut SpScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

#[no_mangle]
pub unsafe extern "C" fn sp_scenario_user_count(scenario: *const SpScenario, out: *mut usize) -> SpStatus {
    guard(|| {
        *out_ref(out, "out")? = in_ref(scenario, "scenario")?.scenario.users.len();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sp_scenario_n_steps(scenario: *const SpScenario, out: *mut usize) -> SpStatus {
    guard(|| {
        *out_ref(out, "out")? = in_ref(scenario, "scenario")?.scenario.n_steps;
        Ok(())
    })
}

/// Replaces the Monte Carlo seed (no effect on analytic scenarios).
#[no_mangle]
pub unsafe extern "C" fn sp_scenario_set_seed(scenario: *mut SpScenario, seed: u64) -> SpStatus {
    guard(|| {
        let s = out_ref(scenario, "scenario")?;
        if let predictor::PredictionMode::MonteCarlo { replicas, .. } = s.scenario.mode {
            s.scenario.mode = predictor::PredictionMode::MonteCarlo { seed, replicas };
        }
        Ok(())
    })
}

/// Exclusion distance for the scenario's primary, using user `user_index` as
/// the receiver template. `out_km` is written only for a crossing.
#[no_mangle]
pub unsafe extern "C" fn sp_scenario_interference_range(
    scenario: *const SpScenario,
    user_index: usize,
    d_min_km: f64,
    d_max_km: f64,
    out_kind: *mut SpRangeKind,
    out_km: *mut f64,
) -> SpStatus {
    guard(|| {
        let s = in_ref(scenario, "scenario")?;
        let kind = out_ref(out_kind, "out_kind")?;
        let km = out_ref(out_km, "out_km")?;
        let Some(user) = s.scenario.users.get(user_index) else {
            return fail(
                SpStatus::InvalidArgument,
                format!("user index {user_index} out of bounds"),
            );
        };
        let outcome = interference_range(&s.scenario.model, &s.scenario.radio, &user.geometry, d_min_km, d_max_km)
            .or_else(|e| fail(SpStatus::InvalidArgument, e))?;
        *kind = match outcome {
            RangeOutcome::Crossing { distance_km } => {
                *km = distance_km;
                SpRangeKind::Crossing
            }
            RangeOutcome::AlwaysIn => SpRangeKind::AlwaysIn,
            RangeOutcome::AlwaysOut => SpRangeKind::AlwaysOut,
        };
        Ok(())
    })
}

/// Runs the scenario. `workers == 0` uses all available cores; the worker
/// count never changes results.
#[no_mangle]
pub unsafe extern "C" fn sp_predict(scenario: *const SpScenario, workers: u32, out: *mut *mut SpReport) -> SpStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let s = in_ref(scenario, "scenario")?;
        let opts = ExecOptions {
            workers: (workers > 0).then_some(workers as usize),
            ..ExecOptions::default()
        };
        let report = predictor::predict(&s.scenario, &opts)?;
        let user_ids = report
            .summary
            .users
            .iter()
            .map(|u| CString::new(u.user_id.as_str()).expect("user ids contain no NUL"))
            .collect();
        *out = Box::into_raw(Box::new(SpReport { report, user_ids }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sp_report_free(report: *mut SpReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Sizes of a report. Analytic reports have zero replicas.
#[no_mangle]
pub unsafe extern "C" fn sp_report_shape(
    report: *const SpReport,
    out_users: *mut usize,
    out_steps: *mut usize,
    out_replicas: *mut usize,
) -> SpStatus {
    guard(|| {
        let r = in_ref(report, "report")?;
        *out_ref(out_users, "out_users")? = r.user_ids.len();
        *out_ref(out_steps, "out_steps")? = r.report.summary.metadata.n_steps;
        *out_ref(out_replicas, "out_replicas")? = match &r.report.timelines {
            Timelines::MonteCarlo(reps) => reps.len(),
            Timelines::Analytic(_) => 0,
        };
        Ok(())
    })
}

/// User id, or null for an out-of-bounds index. Owned by the report.
#[no_mangle]
pub unsafe extern "C" fn sp_report_user_id(report: *const SpReport, user_index: usize) -> *const c_char {
    match report.as_ref().and_then(|r| r.user_ids.get(user_index)) {
        Some(id) => id.as_ptr(),
        None => ptr::null(),
    }
}

unsafe fn user_summary<'a>(report: *const SpReport, user_index: usize) -> FfiResult<&'a predictor::UserSummary> {
    let r: &'a SpReport = in_ref(report, "report")?;
    r.report.summary.users.get(user_index).map_or_else(
        || {
            fail(
                SpStatus::InvalidArgument,
                format!("user index {user_index} out of bounds"),
            )
        },
        Ok,
    )
}

/// Whether the user lies inside the primary's interference range, and the
/// fraction of free cells (Monte Carlo) or mean free probability (analytic).
#[no_mangle]
pub unsafe extern "C" fn sp_report_user_summary(
    report: *const SpReport,
    user_index: usize,
    out_in_range: *mut bool,
    out_availability: *mut f64,
    out_p_rx_dbm: *mut f64,
) -> SpStatus {
    guard(|| {
        let u = user_summary(report, user_index)?;
        *out_ref(out_in_range, "out_in_range")? = u.range == RangeClass::InRange;
        *out_ref(out_availability, "out_availability")? = u.availability_fraction;
        *out_ref(out_p_rx_dbm, "out_p_rx_dbm")? = u.p_rx_dbm;
        Ok(())
    })
}

unsafe fn replica<'a>(report: *const SpReport, index: usize) -> FfiResult<&'a predictor::ReplicaTimelines> {
    let r: &'a SpReport = in_ref(report, "report")?;
    match &r.report.timelines {
        Timelines::MonteCarlo(reps) => reps.get(index).map_or_else(
            || fail(SpStatus::InvalidArgument, format!("replica {index} out of bounds")),
            Ok,
        ),
        Timelines::Analytic(_) => fail(SpStatus::Domain, "analytic report has no sampled timelines"),
    }
}

/// Copies primary states `X_1..X_N` (0 idle, 1 active) into `buf`.
#[no_mangle]
pub unsafe extern "C" fn sp_report_primary(
    report: *const SpReport,
    replica_index: usize,
    buf: *mut u8,
    len: usize,
) -> SpStatus {
    guard(|| {
        let rep = replica(report, replica_index)?;
        let dst = out_slice(buf, len, rep.primary.len(), "buf")?;
        for (d, s) in dst.iter_mut().zip(&rep.primary) {
            *d = s.as_u8();
        }
        Ok(())
    })
}

/// Copies a user's availability timeline (0 free, 1 occupied) into `buf`.
#[no_mangle]
pub unsafe extern "C" fn sp_report_states(
    report: *const SpReport,
    replica_index: usize,
    user_index: usize,
    buf: *mut u8,
    len: usize,
) -> SpStatus {
    guard(|| {
        let rep = replica(report, replica_index)?;
        let Some(row) = rep.states.get(user_index) else {
            return fail(
                SpStatus::InvalidArgument,
                format!("user index {user_index} out of bounds"),
            );
        };
        let dst = out_slice(buf, len, row.len(), "buf")?;
        for (d, s) in dst.iter_mut().zip(row) {
            *d = s.as_u8();
        }
        Ok(())
    })
}

/// Copies per-step occupancy: exact probabilities for analytic reports,
/// ensemble frequencies over replicas for Monte Carlo reports.
#[no_mangle]
pub unsafe extern "C" fn sp_report_occupancy(
    report: *const SpReport,
    user_index: usize,
    buf: *mut f64,
    len: usize,
) -> SpStatus {
    guard(|| {
        let r = in_ref(report, "report")?;
        if user_index >= r.user_ids.len() {
            return fail(
                SpStatus::InvalidArgument,
                format!("user index {user_index} out of bounds"),
            );
        }
        let row = match &r.report.timelines {
            Timelines::Analytic(p) => p[user_index].clone(),
            Timelines::MonteCarlo(_) => predictor::ensemble_availability(&r.report)?.swap_remove(user_index),
        };
        out_slice(buf, len, row.len(), "buf")?.copy_from_slice(&row);
        Ok(())
    })
}

/// Stationary idle/active probabilities.
#[no_mangle]
pub unsafe extern "C" fn sp_stationary(lambda: f64, mu: f64, out_idle: *mut f64, out_active: *mut f64) -> SpStatus {
    guard(|| {
        let idle = out_ref(out_idle, "out_idle")?;
        let active = out_ref(out_active, "out_active")?;
        let d = stationary_distribution(&MarkovParams::new(lambda, mu)?)?;
        *idle = d.p_idle();
        *active = d.p_active();
        Ok(())
    })
}

/// Estimates transition probabilities from `len` states (each 0 or 1).
#[no_mangle]
pub unsafe extern "C" fn sp_estimate(
    states: *const u8,
    len: usize,
    add_one: bool,
    out_lambda: *mut f64,
    out_mu: *mut f64,
) -> SpStatus {
    guard(|| {
        let lambda = out_ref(out_lambda, "out_lambda")?;
        let mu = out_ref(out_mu, "out_mu")?;
        let raw: &[u8] = if len == 0 {
            &[]
        } else if states.is_null() {
            return fail(SpStatus::NullPointer, "states is null");
        } else {
            std::slice::from_raw_parts(states, len)
        };
        let trace = raw
            .iter()
            .enumerate()
            .map(|(i, &b)| {
                ChannelState::try_from(b)
                    .or_else(|v| fail(SpStatus::InvalidArgument, format!("states[{i}] = {v} is not 0 or 1")))
            })
            .collect::<FfiResult<Vec<_>>>()?;
        let smoothing = if add_one { Smoothing::AddOne } else { Smoothing::None };
        let p = estimate_params(&OccupancyTrace::new(trace), smoothing)?;
        *lambda = p.lambda();
        *mu = p.mu();
        Ok(())
    })
}

/// Free-space loss for `geometry`, dB.
#[no_mangle]
pub unsafe extern "C" fn sp_free_space_loss(geometry: SpLinkGeometry, out_db: *mut f64) -> SpStatus {
    guard(|| {
        let out = out_ref(out_db, "out_db")?;
        let g = LinkGeometry::from(geometry);
        g.validate()?;
        *out = propagation::free_space_loss(&g);
        Ok(())
    })
}
