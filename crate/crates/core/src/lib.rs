//! Spectrum availability prediction for secondary users.
//!
//! A two-state Markov chain models when the primary transmitter is active;
//! a path-loss model and link budget decide where its signal is strong enough
//! to occupy the channel. [`predictor`] combines both into per-user
//! availability timelines, either by Monte Carlo sampling or by propagating
//! state probabilities.

pub mod availability;
pub mod cli;
pub mod markov;
pub mod predictor;
pub mod propagation;
pub mod rng;
pub mod scenario;

pub use availability::{
    channel_state, classify_range, interference_range, received_power, AvailabilityError, AvailabilityState,
    RadioParams, RangeClass, RangeOutcome,
};
pub use markov::{
    estimate_params, evolve_distribution, sample_path, stationary_distribution, step, ChannelState, InitialState,
    MarkovError, MarkovParams, OccupancyTrace, Smoothing, StateDistribution,
};
pub use predictor::{
    ensemble_availability, precompute_losses, predict, predict_analytic, predict_monte_carlo, ExecOptions,
    PredictError, PredictionMode, PredictionReport, Scenario, SecondaryUser, Timelines,
};
pub use propagation::{
    basic_loss, clutter_loss, free_space_loss, total_loss, BasicModel, ClutterEnv, ClutterModel, LinkGeometry,
    LossTable, PathLossResult, PropagationError, PropagationModel,
};
pub use rng::SimRng;
