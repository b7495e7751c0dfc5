//! World state: vehicles on a ring road around one base station, per-slot task
//! generation, mobility and digital-twin synchronisation.
//!
//! Every vehicle owns a ChaCha stream derived from `(seed, vehicle id)`, so the
//! first `n` vehicles of a run are identical whatever the total vehicle count.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{self, ChannelError, ChannelSample};
use crate::config::{ConfigError, SimConfig};
use crate::queueing::QueueState;

/// Index of a vehicle within a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VehicleId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: VehicleId,
    /// Position along the road, m.
    pub position_l: f64,
    /// Speed, m/s; constant within an episode.
    pub speed_v: f64,
    pub small_scale_s: Complex64,
    /// Shadowing, dB; constant within an episode.
    pub shadow_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub size_bytes: f64,
    /// Deadline, s.
    pub max_delay: f64,
    pub type_index: usize,
}

/// The N×K tasks generated in one slot, row-major by vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMatrix {
    n: usize,
    k: usize,
    tasks: Vec<Task>,
}

impl TaskMatrix {
    pub fn new(n: usize, k: usize, tasks: Vec<Task>) -> Self {
        assert_eq!(tasks.len(), n * k, "task matrix must hold n*k tasks");
        Self { n, k, tasks }
    }

    /// Builds a matrix from sizes with one deadline per type.
    pub fn from_sizes(sizes: &[Vec<f64>], max_delay: &[f64]) -> Self {
        let n = sizes.len();
        let k = max_delay.len();
        let mut tasks = Vec::with_capacity(n * k);
        for row in sizes {
            assert_eq!(row.len(), k, "every row needs one size per task type");
            for (type_index, (&size_bytes, &max_delay)) in row.iter().zip(max_delay).enumerate() {
                tasks.push(Task {
                    size_bytes,
                    max_delay,
                    type_index,
                });
            }
        }
        Self { n, k, tasks }
    }

    pub fn n_vehicles(&self) -> usize {
        self.n
    }

    pub fn n_types(&self) -> usize {
        self.k
    }

    pub fn get(&self, vehicle: usize, task_type: usize) -> &Task {
        &self.tasks[vehicle * self.k + task_type]
    }

    pub fn size(&self, vehicle: usize, task_type: usize) -> f64 {
        self.get(vehicle, task_type).size_bytes
    }

    pub fn row(&self, vehicle: usize) -> &[Task] {
        &self.tasks[vehicle * self.k..(vehicle + 1) * self.k]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Task> {
        self.tasks.iter()
    }
}

/// Cloud-side replica of one vehicle for the current slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinModel {
    pub vehicle_info: VehicleState,
    pub task_vector: Vec<Task>,
    /// Frequency estimation bias per task type, cycles/s.
    pub est_bias: Vec<f64>,
}

/// How the twin's frequency estimation bias is realised.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BiasModel {
    /// The same signed offset for every (vehicle, type) pair.
    Constant(f64),
    /// `center + U(-half_width, half_width)`, drawn per pair and slot.
    UniformJitter { center: f64, half_width: f64 },
}

impl BiasModel {
    pub fn from_config(config: &SimConfig) -> Self {
        if config.est_bias_jitter > 0.0 {
            BiasModel::UniformJitter {
                center: config.est_bias_df,
                half_width: config.est_bias_jitter,
            }
        } else {
            BiasModel::Constant(config.est_bias_df)
        }
    }
}

/// Mirrors a vehicle and its tasks into a twin. Intra-twin communication is
/// free, so nothing here advances time.
pub fn sync_twin<R: Rng + ?Sized>(
    vehicle: &VehicleState,
    tasks: &[Task],
    bias: BiasModel,
    rng: &mut R,
) -> TwinModel {
    let est_bias = match bias {
        BiasModel::Constant(df) => vec![df; tasks.len()],
        BiasModel::UniformJitter { center, half_width } => tasks
            .iter()
            .map(|_| center + half_width * (2.0 * rng.random::<f64>() - 1.0))
            .collect(),
    };
    TwinModel {
        vehicle_info: vehicle.clone(),
        task_vector: tasks.to_vec(),
        est_bias,
    }
}

/// Mutable state of one simulation run.
#[derive(Debug, Clone)]
pub struct ScenarioState {
    pub config: SimConfig,
    pub vehicles: Vec<VehicleState>,
    pub queues: QueueState,
    pub slot: u64,
    rngs: Vec<ChaCha8Rng>,
}

/// Per-vehicle stream derived from the run seed.
fn vehicle_rng(seed: u64, id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id as u64 + 1);
    rng
}

/// Places the vehicles, draws speeds, fading and shadowing, and empties the queues.
pub fn init_scenario(config: SimConfig) -> Result<ScenarioState, ConfigError> {
    config.validate()?;
    let mut vehicles = Vec::with_capacity(config.n_vehicles);
    let mut rngs = Vec::with_capacity(config.n_vehicles);
    let (vmin, vmax) = config.speed_range;
    for id in 0..config.n_vehicles {
        let mut rng = vehicle_rng(config.seed, id);
        let position_l = rng.random::<f64>() * config.road_length;
        let speed_v = vmin + (vmax - vmin) * rng.random::<f64>();
        let small_scale_s = channel::sample_unit_complex(&mut rng);
        let shadow_db = channel::sample_shadowing(&mut rng, config.shadow_sigma_db);
        vehicles.push(VehicleState {
            id: VehicleId(id),
            position_l,
            speed_v,
            small_scale_s,
            shadow_db,
        });
        rngs.push(rng);
    }
    let queues = QueueState::new(config.n_task_types);
    Ok(ScenarioState {
        config,
        vehicles,
        queues,
        slot: 0,
        rngs,
    })
}

impl ScenarioState {
    pub fn n_vehicles(&self) -> usize {
        self.vehicles.len()
    }

    pub fn n_types(&self) -> usize {
        self.config.n_task_types
    }

    /// Draws this slot's N×K tasks: whole-byte sizes uniform in the configured range.
    pub fn generate_tasks(&mut self) -> TaskMatrix {
        let (lo, hi) = self.config.task_size_range;
        let (lo, hi) = (lo.ceil() as u64, hi.floor() as u64);
        let k = self.config.n_task_types;
        let mut tasks = Vec::with_capacity(self.vehicles.len() * k);
        for rng in self.rngs.iter_mut() {
            for type_index in 0..k {
                tasks.push(Task {
                    size_bytes: rng.random_range(lo..=hi) as f64,
                    max_delay: self.config.max_delay_tmax[type_index],
                    type_index,
                });
            }
        }
        TaskMatrix::new(self.vehicles.len(), k, tasks)
    }

    /// Moves every vehicle by `v·dt`, wrapping around the road.
    pub fn advance_vehicles(&mut self, dt: f64) {
        let road = self.config.road_length;
        for v in self.vehicles.iter_mut() {
            v.position_l = (v.position_l + v.speed_v * dt).rem_euclid(road);
            // rem_euclid can round up to exactly `road` for tiny negative inputs
            if v.position_l >= road {
                v.position_l = 0.0;
            }
        }
    }

    /// Advances each vehicle's small-scale fading by one slot of length `dt`.
    pub fn evolve_fading(&mut self, dt: f64) {
        let fc = self.config.carrier_fc;
        for (v, rng) in self.vehicles.iter_mut().zip(self.rngs.iter_mut()) {
            let kappa = channel::doppler_correlation(v.speed_v, fc, dt);
            v.small_scale_s = channel::step_small_scale(v.small_scale_s, kappa, rng);
        }
    }

    /// Mirrors every vehicle into its twin for the current slot.
    pub fn sync_twins(&mut self, tasks: &TaskMatrix) -> Vec<TwinModel> {
        let bias = BiasModel::from_config(&self.config);
        self.vehicles
            .iter()
            .zip(self.rngs.iter_mut())
            .enumerate()
            .map(|(n, (v, rng))| sync_twin(v, tasks.row(n), bias, rng))
            .collect()
    }

    pub fn sample_channels(&self) -> Result<Vec<ChannelSample>, ChannelError> {
        self.vehicles
            .iter()
            .map(|v| channel::sample_channel(&self.config, v.position_l, v.shadow_db, v.small_scale_s))
            .collect()
    }
}
