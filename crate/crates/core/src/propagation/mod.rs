//! Path loss between the primary transmitter and a secondary receiver.
//!
//! Total loss is the sum of a basic transmission loss (spreading,
//! diffraction, scatter) and a clutter loss from obstructions around the
//! receiver. Both parts are pluggable: the built-in models are free space, a
//! smooth-earth model with a linear beyond-horizon term, a statistical
//! clutter model, and distance tables for losses computed elsewhere.

mod table;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

pub use table::{LossTable, LossTableError, TABLE_HEADER};

/// Valid carrier range of the smooth-earth model, MHz.
pub const SMOOTH_EARTH_FREQ_MHZ: (f64, f64) = (125.0, 15_500.0);
/// Longest path the smooth-earth model accepts, km.
pub const SMOOTH_EARTH_MAX_DISTANCE_KM: f64 = 1000.0;
/// Valid carrier range of the statistical clutter model, MHz.
pub const CLUTTER_FREQ_MHZ: (f64, f64) = (500.0, 67_000.0);

/// Radio horizon coefficient for `4.12 * (sqrt(h_tx) + sqrt(h_rx))` km with
/// heights in metres (4/3 effective earth radius).
const HORIZON_KM_PER_SQRT_M: f64 = 4.12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PropagationError {
    #[error("invalid geometry: {field} = {value} ({requirement})")]
    InvalidGeometry {
        field: &'static str,
        value: f64,
        requirement: &'static str,
    },
    #[error("{model}: frequency {freq_mhz} MHz outside [{min_mhz}, {max_mhz}] MHz")]
    FrequencyOutOfRange {
        model: &'static str,
        freq_mhz: f64,
        min_mhz: f64,
        max_mhz: f64,
    },
    #[error("{model}: distance {distance_km} km outside [{min_km}, {max_km}] km")]
    DistanceOutOfRange {
        model: &'static str,
        distance_km: f64,
        min_km: f64,
        max_km: f64,
    },
    #[error("{model}: clutter environment `{env}` is not supported")]
    EnvironmentUnsupported { model: &'static str, env: ClutterEnv },
    #[error("free-space loss is negative at {distance_km} km, {freq_mhz} MHz (near field)")]
    NearField { distance_km: f64, freq_mhz: f64 },
}

/// Surroundings of the secondary receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClutterEnv {
    Open,
    Suburban,
    Urban,
}

impl fmt::Display for ClutterEnv {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClutterEnv::Open => "open",
            ClutterEnv::Suburban => "suburban",
            ClutterEnv::Urban => "urban",
        })
    }
}

/// Primary-to-secondary link description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkGeometry {
    /// Ground separation, km.
    pub distance_km: f64,
    pub h_tx_m: f64,
    pub h_rx_m: f64,
    pub freq_mhz: f64,
    /// Time percentage in (0, 100) for the basic loss.
    pub time_pct: f64,
    pub clutter_env: ClutterEnv,
    /// Location percentage in (0, 100) for the clutter loss.
    pub loc_pct: f64,
}

impl LinkGeometry {
    pub fn validate(&self) -> Result<(), PropagationError> {
        let bad = |field, value, requirement| {
            Err(PropagationError::InvalidGeometry {
                field,
                value,
                requirement,
            })
        };
        if !(self.distance_km > 0.0 && self.distance_km.is_finite()) {
            return bad("distance_km", self.distance_km, "must be > 0");
        }
        if !(self.h_tx_m >= 1.0 && self.h_tx_m.is_finite()) {
            return bad("h_tx_m", self.h_tx_m, "must be >= 1 m");
        }
        if !(self.h_rx_m >= 1.0 && self.h_rx_m.is_finite()) {
            return bad("h_rx_m", self.h_rx_m, "must be >= 1 m");
        }
        if !(self.freq_mhz > 0.0 && self.freq_mhz.is_finite()) {
            return bad("freq_mhz", self.freq_mhz, "must be > 0");
        }
        if !(self.time_pct > 0.0 && self.time_pct < 100.0) {
            return bad("time_pct", self.time_pct, "must lie in (0, 100)");
        }
        if !(self.loc_pct > 0.0 && self.loc_pct < 100.0) {
            return bad("loc_pct", self.loc_pct, "must lie in (0, 100)");
        }
        Ok(())
    }

    pub fn with_distance(&self, distance_km: f64) -> Self {
        Self { distance_km, ..*self }
    }

    /// Straight-line path length used for spreading loss, km. Equals the
    /// ground distance for equal antenna heights.
    pub fn path_length_km(&self) -> f64 {
        let dh_km = (self.h_tx_m - self.h_rx_m) / 1000.0;
        if dh_km == 0.0 {
            self.distance_km
        } else {
            self.distance_km.hypot(dh_km)
        }
    }

    /// Smooth-earth radio horizon, km.
    pub fn radio_horizon_km(&self) -> f64 {
        HORIZON_KM_PER_SQRT_M * (self.h_tx_m.sqrt() + self.h_rx_m.sqrt())
    }
}

/// Loss decomposition in dB, `total = basic + clutter`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLossResult {
    pub l_basic_db: f64,
    pub l_clutter_db: f64,
    pub l_total_db: f64,
}

impl PathLossResult {
    pub fn from_components(l_basic_db: f64, l_clutter_db: f64) -> Self {
        Self {
            l_basic_db,
            l_clutter_db,
            l_total_db: l_basic_db + l_clutter_db,
        }
    }
}

/// Tunables of the smooth-earth basic loss model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmoothEarthParams {
    /// Extra attenuation per km beyond the radio horizon.
    pub beyond_horizon_db_per_km: f64,
    /// Spread of the time-variability term; `time_pct = 50` contributes zero.
    pub time_sigma_db: f64,
}

impl Default for SmoothEarthParams {
    fn default() -> Self {
        Self {
            beyond_horizon_db_per_km: 0.5,
            time_sigma_db: 3.0,
        }
    }
}

/// Log-normal clutter loss parameters per environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClutterParams {
    pub urban_median_db: f64,
    pub urban_sigma_db: f64,
    pub suburban_median_db: f64,
    pub suburban_sigma_db: f64,
}

impl Default for ClutterParams {
    fn default() -> Self {
        Self {
            urban_median_db: 20.0,
            urban_sigma_db: 6.0,
            suburban_median_db: 12.0,
            suburban_sigma_db: 6.0,
        }
    }
}

impl ClutterParams {
    /// `(median, sigma)` for `env`; `None` for open terrain.
    pub fn for_env(&self, env: ClutterEnv) -> Option<(f64, f64)> {
        match env {
            ClutterEnv::Open => None,
            ClutterEnv::Suburban => Some((self.suburban_median_db, self.suburban_sigma_db)),
            ClutterEnv::Urban => Some((self.urban_median_db, self.urban_sigma_db)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BasicModel {
    FreeSpace,
    SmoothEarth(SmoothEarthParams),
    Table(Arc<LossTable>),
}

impl BasicModel {
    pub fn name(&self) -> &'static str {
        match self {
            BasicModel::FreeSpace => "free_space",
            BasicModel::SmoothEarth(_) => "smooth_earth",
            BasicModel::Table(_) => "table",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClutterModel {
    None,
    Statistical(ClutterParams),
    Table(Arc<LossTable>),
}

impl ClutterModel {
    pub fn name(&self) -> &'static str {
        match self {
            ClutterModel::None => "none",
            ClutterModel::Statistical(_) => "statistical",
            ClutterModel::Table(_) => "table",
        }
    }
}

/// A basic model paired with a clutter model.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationModel {
    pub basic: BasicModel,
    pub clutter: ClutterModel,
}

impl PropagationModel {
    pub fn new(basic: BasicModel, clutter: ClutterModel) -> Self {
        Self { basic, clutter }
    }

    pub fn free_space() -> Self {
        Self::new(BasicModel::FreeSpace, ClutterModel::None)
    }

    /// Distance span over which both components accept a link, ignoring
    /// frequency limits.
    pub fn distance_span_km(&self) -> (f64, f64) {
        let mut span = (0.0, f64::INFINITY);
        let mut clip = |(lo, hi): (f64, f64)| {
            span.0 = f64::max(span.0, lo);
            span.1 = f64::min(span.1, hi);
        };
        match &self.basic {
            BasicModel::FreeSpace => {}
            BasicModel::SmoothEarth(_) => clip((0.0, SMOOTH_EARTH_MAX_DISTANCE_KM)),
            BasicModel::Table(t) => clip(t.span_km()),
        }
        if let ClutterModel::Table(t) = &self.clutter {
            clip(t.span_km());
        }
        span
    }

    /// Total loss for `geometry`; pure.
    pub fn evaluate(&self, geometry: &LinkGeometry) -> Result<PathLossResult, PropagationError> {
        total_loss(self, geometry)
    }
}

/// Friis free-space loss in dB: `20 log10(d_km) + 20 log10(f_MHz) + 32.45`,
/// over [`LinkGeometry::path_length_km`].
pub fn free_space_loss(geometry: &LinkGeometry) -> f64 {
    20.0 * geometry.path_length_km().log10() + 20.0 * geometry.freq_mhz.log10() + 32.45
}

fn checked_free_space(geometry: &LinkGeometry) -> Result<f64, PropagationError> {
    let l = free_space_loss(geometry);
    if l < 0.0 {
        return Err(PropagationError::NearField {
            distance_km: geometry.distance_km,
            freq_mhz: geometry.freq_mhz,
        });
    }
    Ok(l)
}

fn std_normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Time-variability credit of the smooth-earth model, dB. Positive above
/// `time_pct = 50`, where it lowers the predicted loss.
pub fn time_variability_db(params: &SmoothEarthParams, time_pct: f64) -> f64 {
    params.time_sigma_db * std_normal_quantile(time_pct / 100.0)
}

fn check_band(model: &'static str, freq_mhz: f64, (min_mhz, max_mhz): (f64, f64)) -> Result<(), PropagationError> {
    if (min_mhz..=max_mhz).contains(&freq_mhz) {
        Ok(())
    } else {
        Err(PropagationError::FrequencyOutOfRange {
            model,
            freq_mhz,
            min_mhz,
            max_mhz,
        })
    }
}

fn table_lookup(model: &'static str, table: &LossTable, distance_km: f64) -> Result<f64, PropagationError> {
    table.interpolate(distance_km).ok_or_else(|| {
        let (min_km, max_km) = table.span_km();
        PropagationError::DistanceOutOfRange {
            model,
            distance_km,
            min_km,
            max_km,
        }
    })
}

/// Basic transmission loss, dB.
pub fn basic_loss(model: &BasicModel, geometry: &LinkGeometry) -> Result<f64, PropagationError> {
    geometry.validate()?;
    match model {
        BasicModel::FreeSpace => checked_free_space(geometry),
        BasicModel::SmoothEarth(params) => {
            check_band("smooth_earth", geometry.freq_mhz, SMOOTH_EARTH_FREQ_MHZ)?;
            if geometry.distance_km > SMOOTH_EARTH_MAX_DISTANCE_KM {
                return Err(PropagationError::DistanceOutOfRange {
                    model: "smooth_earth",
                    distance_km: geometry.distance_km,
                    min_km: 0.0,
                    max_km: SMOOTH_EARTH_MAX_DISTANCE_KM,
                });
            }
            let fsl = checked_free_space(geometry)?;
            let beyond_km = (geometry.distance_km - geometry.radio_horizon_km()).max(0.0);
            let diffraction = params.beyond_horizon_db_per_km * beyond_km;
            let adjusted = fsl + diffraction - time_variability_db(params, geometry.time_pct);
            // Never predict less than free-space spreading.
            Ok(adjusted.max(fsl))
        }
        BasicModel::Table(table) => table_lookup("basic table", table, geometry.distance_km),
    }
}

/// Clutter loss at the receiver, dB.
pub fn clutter_loss(model: &ClutterModel, geometry: &LinkGeometry) -> Result<f64, PropagationError> {
    geometry.validate()?;
    match model {
        ClutterModel::None => Ok(0.0),
        ClutterModel::Statistical(params) => {
            check_band("statistical_clutter", geometry.freq_mhz, CLUTTER_FREQ_MHZ)?;
            let (median, sigma) =
                params
                    .for_env(geometry.clutter_env)
                    .ok_or(PropagationError::EnvironmentUnsupported {
                        model: "statistical_clutter",
                        env: geometry.clutter_env,
                    })?;
            let q = median + sigma * std_normal_quantile(geometry.loc_pct / 100.0);
            Ok(q.max(0.0))
        }
        ClutterModel::Table(table) => table_lookup("clutter table", table, geometry.distance_km),
    }
}

pub fn total_loss(model: &PropagationModel, geometry: &LinkGeometry) -> Result<PathLossResult, PropagationError> {
    let basic = basic_loss(&model.basic, geometry)?;
    let clutter = clutter_loss(&model.clutter, geometry)?;
    Ok(PathLossResult::from_components(basic, clutter))
}
