//! Per-vehicle observation and its normalised feature row.
//!
//! Each row has K+3 entries: task sizes over the largest possible size,
//! position over road length, speed over the top speed, and the standardised
//! log10 channel gain.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelSample;
use crate::config::SimConfig;
use crate::scenario::{TaskMatrix, VehicleState};

/// Centre and spread of `log10 g` over the default road geometry.
pub const LOG_GAIN_MEAN: f64 = -9.0;
pub const LOG_GAIN_STD: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub task_sizes: Vec<f64>,
    pub position: f64,
    pub speed: f64,
    pub channel_gain: f64,
}

impl Observation {
    pub fn features(&self, config: &SimConfig) -> Vec<f64> {
        let max_size = config.task_size_range.1;
        let mut row: Vec<f64> = self.task_sizes.iter().map(|s| s / max_size).collect();
        row.push(self.position / config.road_length);
        row.push(self.speed / config.speed_range.1);
        row.push(normalise_gain(self.channel_gain));
        row
    }
}

pub fn normalise_gain(g: f64) -> f64 {
    (g.max(1e-30).log10() - LOG_GAIN_MEAN) / LOG_GAIN_STD
}

pub fn feature_width(k: usize) -> usize {
    k + 3
}

pub fn observations(tasks: &TaskMatrix, vehicles: &[VehicleState], channels: &[ChannelSample]) -> Vec<Observation> {
    vehicles
        .iter()
        .zip(channels)
        .enumerate()
        .map(|(n, (v, c))| Observation {
            task_sizes: tasks.row(n).iter().map(|t| t.size_bytes).collect(),
            position: v.position_l,
            speed: v.speed_v,
            channel_gain: c.gain_g,
        })
        .collect()
}

/// The N×(K+3) normalised state matrix.
pub fn state_matrix(config: &SimConfig, obs: &[Observation]) -> Array2<f64> {
    let k = obs.first().map_or(config.n_task_types, |o| o.task_sizes.len());
    let mut m = Array2::zeros((obs.len(), feature_width(k)));
    for (n, o) in obs.iter().enumerate() {
        for (j, x) in o.features(config).into_iter().enumerate() {
            m[[n, j]] = x;
        }
    }
    m
}
