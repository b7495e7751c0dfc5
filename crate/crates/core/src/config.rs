//! Simulation configuration and the flat `key = value` file format.
//!
//! Every [`SimConfig`] field has a key of the same name. Files are line based:
//! blank lines and `#` comments are ignored, list values are comma separated,
//! and a scalar given for a per-task-type list is broadcast to every type.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Speed of light, m/s.
pub const LIGHT_SPEED: f64 = 3.0e8;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid configuration field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ConfigError {
    fn invalid(field: &str, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}

/// Parses `key = value` lines. Keys keep their spelling; values are trimmed.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: i + 1,
            reason: format!("expected `key = value`, found `{line}`"),
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(ConfigError::Syntax {
                line: i + 1,
                reason: "empty key".into(),
            });
        }
        out.push((key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}

pub(crate) fn parse_f64(field: &str, value: &str) -> Result<f64, ConfigError> {
    value
        .trim()
        .parse::<f64>()
        .map_err(|_| ConfigError::invalid(field, format!("`{value}` is not a number")))
}

pub(crate) fn parse_usize(field: &str, value: &str) -> Result<usize, ConfigError> {
    value
        .trim()
        .parse::<usize>()
        .map_err(|_| ConfigError::invalid(field, format!("`{value}` is not a non-negative integer")))
}

pub(crate) fn parse_f64_list(field: &str, value: &str) -> Result<Vec<f64>, ConfigError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_f64(field, s))
        .collect()
}

fn parse_pair(field: &str, value: &str) -> Result<(f64, f64), ConfigError> {
    match parse_f64_list(field, value)?.as_slice() {
        [a, b] => Ok((*a, *b)),
        [a] => Ok((*a, *a)),
        _ => Err(ConfigError::invalid(field, "expected `min,max`")),
    }
}

pub(crate) fn parse_bool(field: &str, value: &str) -> Result<bool, ConfigError> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(ConfigError::invalid(field, format!("`{other}` is not a boolean"))),
    }
}

/// Converts a power in dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) * 1e-3
}

/// All tunables of one simulation run. Units are SI unless the name says otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_vehicles: usize,
    pub n_task_types: usize,
    /// Uplink channel bandwidth, Hz.
    pub bandwidth_w: f64,
    /// Vehicle transmit power, W.
    pub tx_power_p: f64,
    /// Channel noise power, W.
    pub noise_rho2: f64,
    pub carrier_fc: f64,
    /// Vehicle CPU frequency, cycles/s.
    pub vehicle_cpu_fv: f64,
    /// Total edge server CPU frequency, cycles/s.
    pub server_cpu_fe: f64,
    pub n_cores_ne: usize,
    /// Cycles needed per byte, one entry per task type.
    pub cycles_per_byte_ck: Vec<f64>,
    /// Task size bounds in bytes, inclusive.
    pub task_size_range: (f64, f64),
    /// Deadline per task type, s.
    pub max_delay_tmax: Vec<f64>,
    pub slot_dt: f64,
    pub kappa_ve: f64,
    pub kappa_se: f64,
    /// Drift-plus-penalty tradeoff weight.
    pub beta: f64,
    /// Reward weight for the unallocated-capacity penalty; `None` means `1 / f_E`.
    pub eta: Option<f64>,
    pub gamma: f64,
    pub soft_update_lambda: f64,
    /// Twin frequency estimation bias applied to every (vehicle, type) pair, cycles/s.
    pub est_bias_df: f64,
    /// Half-width of an optional zero-mean uniform jitter on the bias, cycles/s.
    pub est_bias_jitter: f64,
    pub road_length: f64,
    pub bs_position: f64,
    pub bs_elevation: f64,
    pub speed_range: (f64, f64),
    pub shadow_sigma_db: f64,
    /// Lower clip for every resource fraction.
    pub alpha_min: f64,
    /// Charge uplink time for `ω·|D|` instead of the full task size.
    pub tx_scaled_by_omega: bool,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let k = 3;
        Self {
            n_vehicles: 10,
            n_task_types: k,
            bandwidth_w: 20e6,
            tx_power_p: 0.2,
            noise_rho2: dbm_to_watts(-110.0),
            carrier_fc: 2e9,
            vehicle_cpu_fv: 5e9,
            server_cpu_fe: 400e9,
            n_cores_ne: 10,
            cycles_per_byte_ck: vec![0.25e6; k],
            task_size_range: (1000.0, 1500.0),
            max_delay_tmax: vec![0.15; k],
            slot_dt: 0.1,
            kappa_ve: 1e-28,
            kappa_se: 1.0 / (400e9f64).powi(3),
            beta: 1.0,
            eta: None,
            gamma: 0.95,
            soft_update_lambda: 0.01,
            est_bias_df: 0.0,
            est_bias_jitter: 0.0,
            road_length: 1000.0,
            bs_position: 500.0,
            bs_elevation: 10.0,
            speed_range: (10.0, 15.0),
            shadow_sigma_db: 8.0,
            alpha_min: 0.005,
            tx_scaled_by_omega: false,
            seed: 1,
        }
    }
}

impl SimConfig {
    /// Keys accepted by [`SimConfig::set`], in file order.
    pub const KEYS: &'static [&'static str] = &[
        "n_vehicles",
        "n_task_types",
        "bandwidth_w",
        "tx_power_p",
        "noise_rho2",
        "noise_rho2_dbm",
        "carrier_fc",
        "vehicle_cpu_fv",
        "server_cpu_fE",
        "n_cores_NE",
        "cycles_per_byte_ck",
        "task_size_range",
        "max_delay_Tmax",
        "slot_dt",
        "kappa_ve",
        "kappa_se",
        "beta",
        "eta",
        "gamma",
        "soft_update_lambda",
        "est_bias_df",
        "est_bias_ghz",
        "est_bias_jitter",
        "road_length",
        "bs_position",
        "bs_elevation",
        "speed_range",
        "shadow_sigma_db",
        "alpha_min",
        "tx_scaled_by_omega",
        "seed",
    ];

    /// Default parameters with `n` vehicles and `k` task types.
    pub fn with_shape(n: usize, k: usize) -> Self {
        let mut cfg = Self::default();
        cfg.n_vehicles = n;
        cfg.resize_task_types(k);
        cfg
    }

    /// Changes K, broadcasting the first entry of every per-type list.
    pub fn resize_task_types(&mut self, k: usize) {
        self.n_task_types = k;
        let ck = self.cycles_per_byte_ck.first().copied().unwrap_or(0.25e6);
        let tmax = self.max_delay_tmax.first().copied().unwrap_or(0.15);
        self.cycles_per_byte_ck = vec![ck; k];
        self.max_delay_tmax = vec![tmax; k];
    }

    pub fn eta(&self) -> f64 {
        self.eta.unwrap_or(1.0 / self.server_cpu_fe)
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "n_vehicles" => self.n_vehicles = parse_usize(key, value)?,
            "n_task_types" => {
                let k = parse_usize(key, value)?;
                if k != self.n_task_types {
                    self.resize_task_types(k);
                }
            }
            "bandwidth_w" => self.bandwidth_w = parse_f64(key, value)?,
            "tx_power_p" => self.tx_power_p = parse_f64(key, value)?,
            "noise_rho2" => self.noise_rho2 = parse_f64(key, value)?,
            "noise_rho2_dbm" => self.noise_rho2 = dbm_to_watts(parse_f64(key, value)?),
            "carrier_fc" => self.carrier_fc = parse_f64(key, value)?,
            "vehicle_cpu_fv" => self.vehicle_cpu_fv = parse_f64(key, value)?,
            "server_cpu_fE" => self.server_cpu_fe = parse_f64(key, value)?,
            "n_cores_NE" => self.n_cores_ne = parse_usize(key, value)?,
            "cycles_per_byte_ck" => {
                self.cycles_per_byte_ck = self.per_type_list(key, value)?;
            }
            "task_size_range" => self.task_size_range = parse_pair(key, value)?,
            "max_delay_Tmax" => self.max_delay_tmax = self.per_type_list(key, value)?,
            "slot_dt" => self.slot_dt = parse_f64(key, value)?,
            "kappa_ve" => self.kappa_ve = parse_f64(key, value)?,
            "kappa_se" => self.kappa_se = parse_f64(key, value)?,
            "beta" => self.beta = parse_f64(key, value)?,
            "eta" => {
                self.eta = if value.trim().eq_ignore_ascii_case("auto") {
                    None
                } else {
                    Some(parse_f64(key, value)?)
                }
            }
            "gamma" => self.gamma = parse_f64(key, value)?,
            "soft_update_lambda" => self.soft_update_lambda = parse_f64(key, value)?,
            "est_bias_df" => self.est_bias_df = parse_f64(key, value)?,
            "est_bias_ghz" => self.est_bias_df = parse_f64(key, value)? * 1e9,
            "est_bias_jitter" => self.est_bias_jitter = parse_f64(key, value)?,
            "road_length" => self.road_length = parse_f64(key, value)?,
            "bs_position" => self.bs_position = parse_f64(key, value)?,
            "bs_elevation" => self.bs_elevation = parse_f64(key, value)?,
            "speed_range" => self.speed_range = parse_pair(key, value)?,
            "shadow_sigma_db" => self.shadow_sigma_db = parse_f64(key, value)?,
            "alpha_min" => self.alpha_min = parse_f64(key, value)?,
            "tx_scaled_by_omega" => self.tx_scaled_by_omega = parse_bool(key, value)?,
            "seed" => {
                self.seed = value
                    .trim()
                    .parse()
                    .map_err(|_| ConfigError::invalid(key, format!("`{value}` is not a seed")))?
            }
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    fn per_type_list(&self, key: &str, value: &str) -> Result<Vec<f64>, ConfigError> {
        let list = parse_f64_list(key, value)?;
        match list.len() {
            0 => Err(ConfigError::invalid(key, "empty list")),
            1 => Ok(vec![list[0]; self.n_task_types]),
            _ => Ok(list),
        }
    }

    /// Applies `key = value` text on top of `self`. `n_task_types` is applied
    /// first so that scalar per-type entries broadcast to the final K.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        let pairs = parse_key_values(text)?;
        for (k, v) in pairs.iter().filter(|(k, _)| k == "n_task_types") {
            self.set(k, v)?;
        }
        for (k, v) in pairs.iter().filter(|(k, _)| k != "n_task_types") {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_text(&text)
    }

    /// Renders the configuration in the same format [`SimConfig::from_text`] reads.
    pub fn to_text(&self) -> String {
        fn list(v: &[f64]) -> String {
            v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
        }
        let mut s = String::new();
        let _ = writeln!(s, "n_vehicles = {}", self.n_vehicles);
        let _ = writeln!(s, "n_task_types = {}", self.n_task_types);
        let _ = writeln!(s, "bandwidth_w = {}", self.bandwidth_w);
        let _ = writeln!(s, "tx_power_p = {}", self.tx_power_p);
        let _ = writeln!(s, "noise_rho2 = {}", self.noise_rho2);
        let _ = writeln!(s, "carrier_fc = {}", self.carrier_fc);
        let _ = writeln!(s, "vehicle_cpu_fv = {}", self.vehicle_cpu_fv);
        let _ = writeln!(s, "server_cpu_fE = {}", self.server_cpu_fe);
        let _ = writeln!(s, "n_cores_NE = {}", self.n_cores_ne);
        let _ = writeln!(s, "cycles_per_byte_ck = {}", list(&self.cycles_per_byte_ck));
        let _ = writeln!(
            s,
            "task_size_range = {},{}",
            self.task_size_range.0, self.task_size_range.1
        );
        let _ = writeln!(s, "max_delay_Tmax = {}", list(&self.max_delay_tmax));
        let _ = writeln!(s, "slot_dt = {}", self.slot_dt);
        let _ = writeln!(s, "kappa_ve = {}", self.kappa_ve);
        let _ = writeln!(s, "kappa_se = {}", self.kappa_se);
        let _ = writeln!(s, "beta = {}", self.beta);
        match self.eta {
            Some(eta) => {
                let _ = writeln!(s, "eta = {eta}");
            }
            None => {
                let _ = writeln!(s, "eta = auto");
            }
        }
        let _ = writeln!(s, "gamma = {}", self.gamma);
        let _ = writeln!(s, "soft_update_lambda = {}", self.soft_update_lambda);
        let _ = writeln!(s, "est_bias_df = {}", self.est_bias_df);
        let _ = writeln!(s, "est_bias_jitter = {}", self.est_bias_jitter);
        let _ = writeln!(s, "road_length = {}", self.road_length);
        let _ = writeln!(s, "bs_position = {}", self.bs_position);
        let _ = writeln!(s, "bs_elevation = {}", self.bs_elevation);
        let _ = writeln!(s, "speed_range = {},{}", self.speed_range.0, self.speed_range.1);
        let _ = writeln!(s, "shadow_sigma_db = {}", self.shadow_sigma_db);
        let _ = writeln!(s, "alpha_min = {}", self.alpha_min);
        let _ = writeln!(s, "tx_scaled_by_omega = {}", self.tx_scaled_by_omega);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }

    /// Checks every invariant; the error names the first offending field.
    pub fn validate(&self) -> Result<(), ConfigError> {
        fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(ConfigError::invalid(field, format!("must be > 0, got {v}")))
            }
        }
        fn nonneg(field: &str, v: f64) -> Result<(), ConfigError> {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(ConfigError::invalid(field, format!("must be >= 0, got {v}")))
            }
        }
        if self.n_vehicles == 0 {
            return Err(ConfigError::invalid("n_vehicles", "must be >= 1"));
        }
        if self.n_task_types == 0 {
            return Err(ConfigError::invalid("n_task_types", "must be >= 1"));
        }
        positive("bandwidth_w", self.bandwidth_w)?;
        positive("tx_power_p", self.tx_power_p)?;
        positive("noise_rho2", self.noise_rho2)?;
        positive("carrier_fc", self.carrier_fc)?;
        positive("vehicle_cpu_fv", self.vehicle_cpu_fv)?;
        positive("server_cpu_fE", self.server_cpu_fe)?;
        if self.n_cores_ne == 0 {
            return Err(ConfigError::invalid("n_cores_NE", "must be >= 1"));
        }
        if self.cycles_per_byte_ck.len() != self.n_task_types {
            return Err(ConfigError::invalid(
                "cycles_per_byte_ck",
                format!(
                    "expected {} entries, got {}",
                    self.n_task_types,
                    self.cycles_per_byte_ck.len()
                ),
            ));
        }
        for &c in &self.cycles_per_byte_ck {
            positive("cycles_per_byte_ck", c)?;
        }
        let (lo, hi) = self.task_size_range;
        positive("task_size_range", lo)?;
        if !(hi.is_finite() && lo <= hi) {
            return Err(ConfigError::invalid("task_size_range", "min must be <= max"));
        }
        if lo.ceil() > hi.floor() {
            return Err(ConfigError::invalid(
                "task_size_range",
                "range contains no whole byte count",
            ));
        }
        if self.max_delay_tmax.len() != self.n_task_types {
            return Err(ConfigError::invalid(
                "max_delay_Tmax",
                format!(
                    "expected {} entries, got {}",
                    self.n_task_types,
                    self.max_delay_tmax.len()
                ),
            ));
        }
        for &t in &self.max_delay_tmax {
            positive("max_delay_Tmax", t)?;
        }
        positive("slot_dt", self.slot_dt)?;
        positive("kappa_ve", self.kappa_ve)?;
        positive("kappa_se", self.kappa_se)?;
        nonneg("beta", self.beta)?;
        if let Some(eta) = self.eta {
            nonneg("eta", eta)?;
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(ConfigError::invalid("gamma", "must lie in (0, 1)"));
        }
        if !(self.soft_update_lambda >= 0.0 && self.soft_update_lambda <= 1.0) {
            return Err(ConfigError::invalid("soft_update_lambda", "must lie in [0, 1]"));
        }
        if !self.est_bias_df.is_finite() {
            return Err(ConfigError::invalid("est_bias_df", "must be finite"));
        }
        nonneg("est_bias_jitter", self.est_bias_jitter)?;
        positive("road_length", self.road_length)?;
        if !(self.bs_position >= 0.0 && self.bs_position <= self.road_length) {
            return Err(ConfigError::invalid("bs_position", "must lie on the road"));
        }
        nonneg("bs_elevation", self.bs_elevation)?;
        let (vmin, vmax) = self.speed_range;
        nonneg("speed_range", vmin)?;
        if !(vmax.is_finite() && vmin <= vmax) {
            return Err(ConfigError::invalid("speed_range", "min must be <= max"));
        }
        nonneg("shadow_sigma_db", self.shadow_sigma_db)?;
        positive("alpha_min", self.alpha_min)?;
        if self.alpha_min > 1.0 {
            return Err(ConfigError::invalid("alpha_min", "must be <= 1"));
        }
        Ok(())
    }

    /// Maximum total resource fraction allowed by the server capacity constraint
    /// once the twin bias of every pair is accounted for.
    pub fn capacity_budget(&self, total_bias: f64) -> f64 {
        1.0 - total_bias / self.server_cpu_fe
    }
}
