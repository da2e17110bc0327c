//! JSON scenario files.
//!
//! ```json
//! {
//!   "markov": { "lambda": 0.2, "mu": 0.3 },
//!   "radio": { "p_tx_dbm": 30, "g_t_dbi": 0, "g_r_dbi": 0, "p_th_dbm": -90 },
//!   "propagation": { "basic_model": "free_space", "clutter_model": "none" },
//!   "primary": { "h_tx_m": 30, "freq_mhz": 1000, "time_pct": 50 },
//!   "users": [ { "id": "u1", "distance_km": 1.0, "h_rx_m": 10, "clutter_env": "open", "loc_pct": 50 } ],
//!   "run": { "n_steps": 1000, "mode": "monte_carlo", "seed": 42, "n_replicas": 1, "initial": "stationary" }
//! }
//! ```
//!
//! Unknown keys are rejected. Every validation error carries the JSON path of
//! the offending field. Table paths are resolved relative to the scenario
//! file's directory.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::availability::RadioParams;
use crate::markov::{ChannelState, InitialState, MarkovParams};
use crate::predictor::{PredictionMode, Scenario, SecondaryUser};
use crate::propagation::{
    BasicModel, ClutterEnv, ClutterModel, ClutterParams, LinkGeometry, LossTable, PropagationError, PropagationModel,
    SmoothEarthParams,
};

/// Keys that would describe a moving user; only static geometry is supported.
const MOBILITY_KEYS: [&str; 4] = ["trajectory", "waypoints", "velocity_mps", "heading_deg"];

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

impl ScenarioError {
    pub fn invalid(path: impl Into<String>, message: impl fmt::Display) -> Self {
        ScenarioError::Invalid {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// JSON path of the offending field, for validation errors.
    pub fn path(&self) -> Option<&str> {
        match self {
            ScenarioError::Invalid { path, .. } => Some(path),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkovSection {
    pub lambda: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasicModelKind {
    FreeSpace,
    SmoothEarth,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClutterModelKind {
    None,
    Statistical,
    Table,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParameters {
    pub smooth_earth: SmoothEarthParams,
    pub clutter: ClutterParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropagationSection {
    pub basic_model: BasicModelKind,
    pub clutter_model: ClutterModelKind,
    #[serde(default)]
    pub parameters: ModelParameters,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basic_table: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clutter_table: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimarySection {
    pub h_tx_m: f64,
    pub freq_mhz: f64,
    #[serde(default = "median_pct")]
    pub time_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSection {
    pub id: String,
    pub distance_km: f64,
    pub h_rx_m: f64,
    #[serde(default = "open_env")]
    pub clutter_env: ClutterEnv,
    #[serde(default = "median_pct")]
    pub loc_pct: f64,
}

fn median_pct() -> f64 {
    50.0
}

fn open_env() -> ClutterEnv {
    ClutterEnv::Open
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeKind {
    MonteCarlo,
    Analytic,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    #[default]
    Stationary,
    Idle,
    Active,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub n_steps: u64,
    pub mode: ModeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "one")]
    pub n_replicas: u32,
    #[serde(default)]
    pub initial: InitialKind,
}

fn one() -> u32 {
    1
}

/// The on-disk scenario document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub markov: MarkovSection,
    pub radio: RadioParams,
    pub propagation: PropagationSection,
    pub primary: PrimarySection,
    pub users: Vec<UserSection>,
    pub run: RunSection,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Overrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_steps: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<ModeKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_replicas: Option<u32>,
}

impl Overrides {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}

impl ScenarioFile {
    pub fn from_json_str(text: &str) -> Result<Self, ScenarioError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ScenarioError::Syntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        reject_mobility(&value)?;
        serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            ScenarioError::invalid(path, e.into_inner())
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(seed) = overrides.seed {
            self.run.seed = Some(seed);
        }
        if let Some(n) = overrides.n_steps {
            self.run.n_steps = n;
        }
        if let Some(mode) = overrides.mode {
            self.run.mode = mode;
        }
        if let Some(r) = overrides.n_replicas {
            self.run.n_replicas = r;
        }
    }

    pub fn markov_params(&self) -> Result<MarkovParams, ScenarioError> {
        for (name, v) in [("lambda", self.markov.lambda), ("mu", self.markov.mu)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ScenarioError::invalid(
                    format!("markov.{name}"),
                    format_args!("{v} is not a probability in [0, 1]"),
                ));
            }
        }
        MarkovParams::new(self.markov.lambda, self.markov.mu).map_err(|e| ScenarioError::invalid("markov", e))
    }

    /// Propagation model with tables resolved against `base_dir`.
    pub fn propagation_model(&self, base_dir: &Path) -> Result<PropagationModel, ScenarioError> {
        let p = &self.propagation;
        let load = |field: &str, path: &Option<PathBuf>| -> Result<Arc<LossTable>, ScenarioError> {
            let json_path = format!("propagation.{field}");
            let rel = path
                .as_ref()
                .ok_or_else(|| ScenarioError::invalid(&json_path, "required when the model is `table`"))?;
            LossTable::load(base_dir.join(rel))
                .map(Arc::new)
                .map_err(|e| ScenarioError::invalid(&json_path, e))
        };
        let basic = match p.basic_model {
            BasicModelKind::FreeSpace => BasicModel::FreeSpace,
            BasicModelKind::SmoothEarth => {
                let se = p.parameters.smooth_earth;
                check_non_negative(
                    "propagation.parameters.smooth_earth.beyond_horizon_db_per_km",
                    se.beyond_horizon_db_per_km,
                )?;
                check_non_negative("propagation.parameters.smooth_earth.time_sigma_db", se.time_sigma_db)?;
                BasicModel::SmoothEarth(se)
            }
            BasicModelKind::Table => BasicModel::Table(load("basic_table", &p.basic_table)?),
        };
        let clutter = match p.clutter_model {
            ClutterModelKind::None => ClutterModel::None,
            ClutterModelKind::Statistical => {
                let c = p.parameters.clutter;
                for (name, v) in [
                    ("urban_median_db", c.urban_median_db),
                    ("urban_sigma_db", c.urban_sigma_db),
                    ("suburban_median_db", c.suburban_median_db),
                    ("suburban_sigma_db", c.suburban_sigma_db),
                ] {
                    check_non_negative(&format!("propagation.parameters.clutter.{name}"), v)?;
                }
                ClutterModel::Statistical(c)
            }
            ClutterModelKind::Table => ClutterModel::Table(load("clutter_table", &p.clutter_table)?),
        };
        Ok(PropagationModel::new(basic, clutter))
    }

    pub fn initial_state(&self) -> InitialState {
        match self.run.initial {
            InitialKind::Stationary => InitialState::Stationary,
            InitialKind::Idle => InitialState::Fixed(ChannelState::Idle),
            InitialKind::Active => InitialState::Fixed(ChannelState::Active),
        }
    }

    /// Geometry of user `index`.
    pub fn user_geometry(&self, index: usize) -> LinkGeometry {
        let u = &self.users[index];
        LinkGeometry {
            distance_km: u.distance_km,
            h_tx_m: self.primary.h_tx_m,
            h_rx_m: u.h_rx_m,
            freq_mhz: self.primary.freq_mhz,
            time_pct: self.primary.time_pct,
            clutter_env: u.clutter_env,
            loc_pct: u.loc_pct,
        }
    }

    /// Validates everything and builds the engine scenario.
    pub fn to_scenario(&self, base_dir: &Path) -> Result<Scenario, ScenarioError> {
        let markov = self.markov_params()?;
        self.radio.validate().map_err(|e| ScenarioError::invalid("radio", e))?;
        let model = self.propagation_model(base_dir)?;

        if self.users.is_empty() {
            return Err(ScenarioError::invalid("users", "at least one user is required"));
        }
        let mut users = Vec::with_capacity(self.users.len());
        for (i, u) in self.users.iter().enumerate() {
            validate_user_id(&u.id).map_err(|m| ScenarioError::invalid(format!("users[{i}].id"), m))?;
            if let Some(j) = self.users[..i].iter().position(|o| o.id == u.id) {
                return Err(ScenarioError::invalid(
                    format!("users[{i}].id"),
                    format_args!("duplicate id `{}` (also users[{j}])", u.id),
                ));
            }
            let geometry = self.user_geometry(i);
            geometry
                .validate()
                .map_err(|e| ScenarioError::invalid(self.geometry_path(i, &e), e))?;
            // Model preconditions (bands, table spans, clutter environment).
            model
                .evaluate(&geometry)
                .map_err(|e| ScenarioError::invalid(self.geometry_path(i, &e), e))?;
            users.push(SecondaryUser {
                id: u.id.clone(),
                geometry,
            });
        }

        if self.run.n_steps == 0 {
            return Err(ScenarioError::invalid("run.n_steps", "must be at least 1"));
        }
        let n_steps = usize::try_from(self.run.n_steps)
            .map_err(|_| ScenarioError::invalid("run.n_steps", "too large for this platform"))?;
        let mode = match self.run.mode {
            ModeKind::Analytic => PredictionMode::Analytic,
            ModeKind::MonteCarlo => {
                let seed = self
                    .run
                    .seed
                    .ok_or_else(|| ScenarioError::invalid("run.seed", "required for monte_carlo mode"))?;
                if self.run.n_replicas == 0 {
                    return Err(ScenarioError::invalid("run.n_replicas", "must be at least 1"));
                }
                PredictionMode::MonteCarlo {
                    seed,
                    replicas: self.run.n_replicas,
                }
            }
        };
        let initial = self.initial_state();
        if initial == InitialState::Stationary && markov.is_degenerate() {
            return Err(ScenarioError::invalid(
                "run.initial",
                "stationary start needs lambda + mu > 0 (degenerate chain)",
            ));
        }
        Ok(Scenario {
            markov,
            radio: self.radio,
            model,
            users,
            n_steps,
            mode,
            initial,
        })
    }

    fn geometry_path(&self, user: usize, err: &PropagationError) -> String {
        match err {
            PropagationError::InvalidGeometry { field, .. } => match *field {
                "h_tx_m" | "time_pct" => format!("primary.{field}"),
                "freq_mhz" => "primary.freq_mhz".into(),
                other => format!("users[{user}].{other}"),
            },
            PropagationError::FrequencyOutOfRange { .. } => "primary.freq_mhz".into(),
            PropagationError::DistanceOutOfRange { .. } | PropagationError::NearField { .. } => {
                format!("users[{user}].distance_km")
            }
            PropagationError::EnvironmentUnsupported { .. } => format!("users[{user}].clutter_env"),
        }
    }
}

fn check_non_negative(path: &str, v: f64) -> Result<(), ScenarioError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ScenarioError::invalid(
            path,
            format_args!("{v} must be a finite value >= 0"),
        ))
    }
}

/// User ids become file names, so they are restricted to a portable set.
pub fn validate_user_id(id: &str) -> Result<(), String> {
    if id.is_empty() || id.len() > 128 {
        return Err("must be 1 to 128 characters".into());
    }
    if id.starts_with('.') {
        return Err("must not start with `.`".into());
    }
    if let Some(c) = id
        .chars()
        .find(|c| !(c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.')))
    {
        return Err(format!(
            "character `{c}` not allowed (use letters, digits, `-`, `_`, `.`)"
        ));
    }
    Ok(())
}

fn reject_mobility(value: &serde_json::Value) -> Result<(), ScenarioError> {
    let Some(users) = value.get("users").and_then(|u| u.as_array()) else {
        return Ok(());
    };
    for (i, u) in users.iter().enumerate() {
        if let Some(key) = MOBILITY_KEYS.iter().find(|k| u.get(**k).is_some()) {
            return Err(ScenarioError::invalid(
                format!("users[{i}].{key}"),
                "mobile geometry is not supported; users must be static",
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
        "markov": { "lambda": 0.2, "mu": 0.3 },
        "radio": { "p_tx_dbm": 30, "g_t_dbi": 0, "g_r_dbi": 0, "p_th_dbm": -90 },
        "propagation": { "basic_model": "free_space", "clutter_model": "none" },
        "primary": { "h_tx_m": 30, "freq_mhz": 1000, "time_pct": 50 },
        "users": [ { "id": "u1", "distance_km": 1.0, "h_rx_m": 30, "clutter_env": "open", "loc_pct": 50 } ],
        "run": { "n_steps": 100, "mode": "monte_carlo", "seed": 42 }
    }"#;

    fn edit(f: impl FnOnce(&mut serde_json::Value)) -> String {
        let mut v: serde_json::Value = serde_json::from_str(BASE).unwrap();
        f(&mut v);
        v.to_string()
    }

    fn invalid_path(text: &str) -> String {
        let err = ScenarioFile::from_json_str(text)
            .and_then(|f| f.to_scenario(Path::new(".")))
            .unwrap_err();
        err.path().unwrap_or_else(|| panic!("no path in {err}")).to_string()
    }

    #[test]
    fn parses_base_scenario() {
        let f = ScenarioFile::from_json_str(BASE).unwrap();
        let s = f.to_scenario(Path::new(".")).unwrap();
        assert_eq!(s.users.len(), 1);
        assert_eq!(s.mode, PredictionMode::MonteCarlo { seed: 42, replicas: 1 });
        assert_eq!(s.initial, InitialState::Stationary);
        assert_eq!(s.users[0].geometry.h_tx_m, 30.0);
    }

    #[test]
    fn lambda_out_of_range_names_path() {
        let text = edit(|v| v["markov"]["lambda"] = 1.5.into());
        assert_eq!(invalid_path(&text), "markov.lambda");
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = edit(|v| v["radio"]["bogus"] = 1.into());
        let err = ScenarioFile::from_json_str(&text).unwrap_err();
        assert_eq!(err.path(), Some("radio.bogus"));
        assert!(err.to_string().contains("bogus"), "{err}");

        let text = edit(|v| v["extra"] = 1.into());
        assert!(ScenarioFile::from_json_str(&text).is_err());
    }

    #[test]
    fn type_errors_carry_paths() {
        let text = edit(|v| v["users"][0]["distance_km"] = "far".into());
        assert_eq!(invalid_path(&text), "users[0].distance_km");
        let text = edit(|v| v["run"]["n_steps"] = (-5).into());
        assert_eq!(invalid_path(&text), "run.n_steps");
    }

    #[test]
    fn range_checks_carry_paths() {
        assert_eq!(
            invalid_path(&edit(|v| v["users"][0]["h_rx_m"] = 0.5.into())),
            "users[0].h_rx_m"
        );
        assert_eq!(
            invalid_path(&edit(|v| v["primary"]["time_pct"] = 100.into())),
            "primary.time_pct"
        );
        assert_eq!(invalid_path(&edit(|v| v["run"]["n_steps"] = 0.into())), "run.n_steps");
        assert_eq!(
            invalid_path(&edit(|v| v["run"]["n_replicas"] = 0.into())),
            "run.n_replicas"
        );
        assert_eq!(
            invalid_path(&edit(|v| v["run"]
                .as_object_mut()
                .unwrap()
                .remove("seed")
                .map(|_| ())
                .unwrap())),
            "run.seed"
        );
        assert_eq!(
            invalid_path(&edit(|v| v["users"][0]["id"] = "a/b".into())),
            "users[0].id"
        );
        assert_eq!(invalid_path(&edit(|v| v["users"] = serde_json::json!([]))), "users");
    }

    #[test]
    fn model_preconditions_checked_per_user() {
        let text = edit(|v| {
            v["propagation"]["basic_model"] = "smooth_earth".into();
            v["primary"]["freq_mhz"] = 50.into();
        });
        assert_eq!(invalid_path(&text), "primary.freq_mhz");
        let text = edit(|v| v["propagation"]["clutter_model"] = "statistical".into());
        assert_eq!(invalid_path(&text), "users[0].clutter_env");
    }

    #[test]
    fn duplicate_ids() {
        let text = edit(|v| {
            let u = v["users"][0].clone();
            v["users"].as_array_mut().unwrap().push(u);
        });
        assert_eq!(invalid_path(&text), "users[1].id");
    }

    #[test]
    fn degenerate_stationary_start() {
        let text = edit(|v| {
            v["markov"]["lambda"] = 0.into();
            v["markov"]["mu"] = 0.into();
        });
        assert_eq!(invalid_path(&text), "run.initial");
    }

    #[test]
    fn mobile_users_rejected() {
        let text = edit(|v| v["users"][0]["trajectory"] = serde_json::json!([[0, 0]]));
        let err = ScenarioFile::from_json_str(&text).unwrap_err();
        assert_eq!(err.path(), Some("users[0].trajectory"));
        assert!(err.to_string().contains("mobile"));
    }

    #[test]
    fn table_model_requires_path() {
        let text = edit(|v| v["propagation"]["basic_model"] = "table".into());
        assert_eq!(invalid_path(&text), "propagation.basic_table");
    }

    #[test]
    fn table_paths_resolve_against_base_dir() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("basic.csv"), "distance_km,loss_db\n0.5,90\n2,110\n").unwrap();
        let text = edit(|v| {
            v["propagation"]["basic_model"] = "table".into();
            v["propagation"]["basic_table"] = "basic.csv".into();
        });
        let s = ScenarioFile::from_json_str(&text)
            .unwrap()
            .to_scenario(dir.path())
            .unwrap();
        assert_eq!(s.model.basic.name(), "table");

        let text = edit(|v| {
            v["propagation"]["basic_model"] = "table".into();
            v["propagation"]["basic_table"] = "basic.csv".into();
            v["users"][0]["distance_km"] = 5.into();
        });
        let err = ScenarioFile::from_json_str(&text)
            .unwrap()
            .to_scenario(dir.path())
            .unwrap_err();
        assert_eq!(err.path(), Some("users[0].distance_km"));
    }

    #[test]
    fn overrides_apply_and_round_trip() {
        let mut f = ScenarioFile::from_json_str(BASE).unwrap();
        f.apply(&Overrides {
            seed: Some(7),
            n_steps: Some(10),
            mode: Some(ModeKind::Analytic),
            n_replicas: Some(3),
        });
        assert_eq!(f.run.seed, Some(7));
        assert_eq!(f.run.n_steps, 10);
        let back = ScenarioFile::from_json_str(&f.to_json_pretty()).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn syntax_errors_report_position() {
        match ScenarioFile::from_json_str("{\n  \"markov\": ,\n}") {
            Err(ScenarioError::Syntax { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
