//! Link budget and the per-step availability decision.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::markov::ChannelState;
use crate::propagation::{LinkGeometry, PathLossResult, PropagationError, PropagationModel};

/// Bisection stops once the bracket is narrower than this (1 m).
pub const RANGE_TOLERANCE_KM: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AvailabilityError {
    #[error("invalid search bracket [{d_min_km}, {d_max_km}] km")]
    InvalidBracket { d_min_km: f64, d_max_km: f64 },
    #[error("radio parameter {field} = {value} is not finite")]
    NonFinite { field: &'static str, value: f64 },
    #[error(transparent)]
    Propagation(#[from] PropagationError),
}

/// Primary transmitter and secondary receiver radio characteristics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioParams {
    pub p_tx_dbm: f64,
    #[serde(default)]
    pub g_t_dbi: f64,
    #[serde(default)]
    pub g_r_dbi: f64,
    /// Received primary power at or above this level makes the channel unusable.
    pub p_th_dbm: f64,
}

impl RadioParams {
    pub fn validate(&self) -> Result<(), AvailabilityError> {
        for (field, value) in [
            ("p_tx_dbm", self.p_tx_dbm),
            ("g_t_dbi", self.g_t_dbi),
            ("g_r_dbi", self.g_r_dbi),
            ("p_th_dbm", self.p_th_dbm),
        ] {
            if !value.is_finite() {
                return Err(AvailabilityError::NonFinite { field, value });
            }
        }
        Ok(())
    }

    /// Largest total loss at which the primary still reaches the threshold.
    pub fn max_tolerable_loss_db(&self) -> f64 {
        self.p_tx_dbm + self.g_t_dbi + self.g_r_dbi - self.p_th_dbm
    }
}

/// Channel availability for the secondary user at one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum AvailabilityState {
    Free = 0,
    Occupied = 1,
}

impl AvailabilityState {
    pub fn is_free(self) -> bool {
        self == AvailabilityState::Free
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeClass {
    InRange,
    OutOfRange,
}

/// `P_rx = P_tx + G_t + G_r - L_total`, dBm.
pub fn received_power(radio: &RadioParams, loss: &PathLossResult) -> f64 {
    radio.p_tx_dbm + radio.g_t_dbi + radio.g_r_dbi - loss.l_total_db
}

/// Occupied iff the primary is active and its signal is at or above the
/// threshold.
#[inline]
pub fn channel_state(x: ChannelState, p_rx_dbm: f64, p_th_dbm: f64) -> AvailabilityState {
    if x == ChannelState::Active && p_rx_dbm >= p_th_dbm {
        AvailabilityState::Occupied
    } else {
        AvailabilityState::Free
    }
}

pub fn classify_range(radio: &RadioParams, loss: &PathLossResult) -> RangeClass {
    if received_power(radio, loss) >= radio.p_th_dbm {
        RangeClass::InRange
    } else {
        RangeClass::OutOfRange
    }
}

/// Answer of [`interference_range`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeOutcome {
    /// Distance at which received power falls through the threshold.
    Crossing { distance_km: f64 },
    /// The threshold is reached everywhere in the bracket.
    AlwaysIn,
    /// The threshold is reached nowhere in the bracket.
    AlwaysOut,
}

/// Exclusion radius of the primary: the distance where received power drops
/// below the threshold, found by bisection over `[d_min_km, d_max_km]` to
/// [`RANGE_TOLERANCE_KM`].
///
/// Assumes loss is non-decreasing in distance, which holds for every built-in
/// model and for tables whose losses do not decrease.
pub fn interference_range(
    model: &PropagationModel,
    radio: &RadioParams,
    template: &LinkGeometry,
    d_min_km: f64,
    d_max_km: f64,
) -> Result<RangeOutcome, AvailabilityError> {
    let ordered = d_min_km.is_finite() && d_max_km.is_finite() && d_min_km > 0.0 && d_min_km < d_max_km;
    if !ordered {
        return Err(AvailabilityError::InvalidBracket { d_min_km, d_max_km });
    }
    radio.validate()?;
    let margin = |d: f64| -> Result<f64, AvailabilityError> {
        let loss = model.evaluate(&template.with_distance(d))?;
        Ok(received_power(radio, &loss) - radio.p_th_dbm)
    };

    if margin(d_min_km)? < 0.0 {
        return Ok(RangeOutcome::AlwaysOut);
    }
    if margin(d_max_km)? >= 0.0 {
        return Ok(RangeOutcome::AlwaysIn);
    }
    // Invariant: margin(lo) >= 0 > margin(hi).
    let (mut lo, mut hi) = (d_min_km, d_max_km);
    while hi - lo > RANGE_TOLERANCE_KM {
        let mid = 0.5 * (lo + hi);
        if margin(mid)? >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(RangeOutcome::Crossing {
        distance_km: 0.5 * (lo + hi),
    })
}
