//! Cartesian sweeps over policy × vehicle count × bias × seed.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::episode::run_episode;
use super::policies::{build_policy, PolicyOptions};
use super::HarnessError;
use crate::config::{self, parse_bool, parse_f64, parse_f64_list, parse_usize, ConfigError, SimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub vehicle_counts: Vec<usize>,
    pub bias_ghz: Vec<f64>,
    pub policies: Vec<String>,
    pub seeds: Vec<u64>,
    pub horizon: usize,
    /// Parallel cells; 0 means one per available core.
    pub workers: usize,
    /// Record wall-clock time per cell. Off keeps the results file a pure
    /// function of the spec.
    pub timing: bool,
    pub base: SimConfig,
    pub options: PolicyOptions,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            vehicle_counts: vec![2, 4, 6, 8, 10],
            bias_ghz: vec![-0.5, 0.5],
            policies: vec!["llm".into(), "uniform".into(), "greedy".into()],
            seeds: vec![1, 2, 3],
            horizon: 1000,
            workers: 0,
            timing: false,
            base: SimConfig::default(),
            options: PolicyOptions::default(),
        }
    }
}

fn list<T>(key: &str, value: &str, f: impl Fn(&str) -> Option<T>) -> Result<Vec<T>, ConfigError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            f(s).ok_or_else(|| ConfigError::Invalid {
                field: key.into(),
                reason: format!("`{s}` is not valid"),
            })
        })
        .collect()
}

impl SweepSpec {
    /// Same `key = value` format as the simulation config; list keys take
    /// comma-separated values and any other key sets the base config.
    pub fn from_text(text: &str) -> Result<Self, HarnessError> {
        let mut s = Self::default();
        for (key, value) in config::parse_key_values(text)? {
            let v = value.as_str();
            let k = key.as_str();
            match k {
                "vehicle_counts" => s.vehicle_counts = list(k, v, |x| x.parse().ok())?,
                "bias_ghz" | "bias_values" => s.bias_ghz = parse_f64_list(k, v)?,
                "policies" => s.policies = list(k, v, |x| Some(x.to_string()))?,
                "seeds" => s.seeds = list(k, v, |x| x.parse().ok())?,
                "horizon" => s.horizon = parse_usize(k, v)?,
                "workers" => s.workers = parse_usize(k, v)?,
                "timing" => s.timing = parse_bool(k, v)?,
                "backend" => s.options.backend = v.parse().map_err(HarnessError::Spec)?,
                "model" => s.options.model = v.to_string(),
                "case_file" => s.options.case_file = Some(v.into()),
                "case_source" => s.options.case_source = v.to_string(),
                "case_slots" => s.options.case_slots = Some(parse_usize(k, v)?),
                "marl_checkpoint" => s.options.marl_checkpoint = Some(v.into()),
                "sarl_checkpoint" => s.options.sarl_checkpoint = Some(v.into()),
                "learner_episodes" => s.options.learner_episodes = parse_usize(k, v)?,
                "token_budget" => s.options.llm.token_budget = parse_usize(k, v)?,
                "max_retries" => s.options.llm.max_retries = parse_usize(k, v)?,
                "learn_online" => s.options.llm.learn_online = parse_bool(k, v)?,
                "n_vehicles" | "seed" | "est_bias_df" | "est_bias_ghz" => {
                    return Err(HarnessError::Spec(format!(
                        "`{k}` is a sweep axis; use vehicle_counts, seeds or bias_ghz"
                    )))
                }
                _ => s.base.set(k, v)?,
            }
        }
        s.validate()?;
        Ok(s)
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(HarnessError::io(path))?;
        Self::from_text(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let empty = |what: &str| Err(HarnessError::Spec(format!("sweep axis `{what}` is empty")));
        if self.vehicle_counts.is_empty() {
            return empty("vehicle_counts");
        }
        if self.bias_ghz.is_empty() {
            return empty("bias_ghz");
        }
        if self.policies.is_empty() {
            return empty("policies");
        }
        if self.seeds.is_empty() {
            return empty("seeds");
        }
        if self.vehicle_counts.contains(&0) {
            return Err(HarnessError::Spec("vehicle counts must be positive".into()));
        }
        if self.bias_ghz.iter().any(|b| !b.is_finite()) {
            return Err(HarnessError::Spec("bias values must be finite".into()));
        }
        Ok(())
    }

    /// Cells in output order: policy, then vehicle count, then bias, then seed.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for p in &self.policies {
            for &n in &self.vehicle_counts {
                for &b in &self.bias_ghz {
                    for &seed in &self.seeds {
                        out.push(Cell {
                            policy: p.clone(),
                            n_vehicles: n,
                            bias_ghz: b,
                            seed,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn cell_config(&self, cell: &Cell) -> SimConfig {
        let mut c = self.base.clone();
        c.n_vehicles = cell.n_vehicles;
        c.est_bias_df = cell.bias_ghz * 1e9;
        c.seed = cell.seed;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub policy: String,
    pub n_vehicles: usize,
    pub bias_ghz: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub policy: String,
    pub n_vehicles: usize,
    pub bias_ghz: f64,
    pub seed: u64,
    pub mean_energy_j: f64,
    pub mean_delay_s: f64,
    pub mean_qos: f64,
    pub mean_edge_energy_j: f64,
    pub mean_alpha_sum: f64,
    pub stable: bool,
    pub runtime_s: Option<f64>,
}

impl SweepRow {
    pub const HEADER: &'static str = "policy,n_vehicles,bias_ghz,seed,mean_energy_j,mean_delay_s,mean_qos,mean_edge_energy_j,mean_alpha_sum,stable,runtime_s";

    pub fn metric(&self, name: &str) -> Option<f64> {
        Some(match name {
            "mean_energy_j" => self.mean_energy_j,
            "mean_delay_s" => self.mean_delay_s,
            "mean_qos" => self.mean_qos,
            "mean_edge_energy_j" => self.mean_edge_energy_j,
            "mean_alpha_sum" => self.mean_alpha_sum,
            _ => return None,
        })
    }
}

pub const METRICS: [&str; 5] = [
    "mean_energy_j",
    "mean_delay_s",
    "mean_qos",
    "mean_edge_energy_j",
    "mean_alpha_sum",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub cell: Cell,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<CellFailure>,
}

/// Seed-averaged metrics of one (policy, N, bias) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub policy: String,
    pub n_vehicles: usize,
    pub bias_ghz: f64,
    pub n_seeds: usize,
    /// `(mean, sample std)` per entry of [`METRICS`].
    pub stats: Vec<(f64, f64)>,
    pub stable_fraction: f64,
}

impl Aggregate {
    pub fn mean(&self, metric: &str) -> Option<f64> {
        METRICS.iter().position(|m| *m == metric).map(|i| self.stats[i].0)
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Groups rows by (policy, N, bias) in first-appearance order. Within a group
/// rows are taken in seed order, so the result does not depend on row order.
pub fn aggregate(rows: &[SweepRow]) -> Vec<Aggregate> {
    let mut keys: Vec<(String, usize, f64)> = Vec::new();
    for r in rows {
        let k = (r.policy.clone(), r.n_vehicles, r.bias_ghz);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(policy, n, b)| {
            let mut group: Vec<&SweepRow> = rows
                .iter()
                .filter(|r| r.policy == policy && r.n_vehicles == n && r.bias_ghz == b)
                .collect();
            group.sort_by_key(|r| r.seed);
            let stats = METRICS
                .iter()
                .map(|m| mean_std(&group.iter().map(|r| r.metric(m).expect("known metric")).collect::<Vec<_>>()))
                .collect();
            Aggregate {
                n_seeds: group.len(),
                stable_fraction: group.iter().filter(|r| r.stable).count() as f64 / group.len() as f64,
                policy,
                n_vehicles: n,
                bias_ghz: b,
                stats,
            }
        })
        .collect()
}

fn run_cell(spec: &SweepSpec, cell: &Cell) -> Result<SweepRow, HarnessError> {
    let cfg = spec.cell_config(cell);
    let mut policy = build_policy(&cell.policy, &cfg, spec.horizon, &spec.options)?;
    let r = run_episode(&cfg, policy.as_mut(), spec.horizon)?;
    Ok(SweepRow {
        policy: cell.policy.clone(),
        n_vehicles: cell.n_vehicles,
        bias_ghz: cell.bias_ghz,
        seed: cell.seed,
        mean_energy_j: r.mean_energy(),
        mean_delay_s: r.mean_delay(),
        mean_qos: r.mean_qos(),
        mean_edge_energy_j: r.mean_edge_energy(),
        mean_alpha_sum: r.mean_alpha_sum(),
        stable: r.is_stable(),
        runtime_s: spec.timing.then_some(r.runtime_s),
    })
}

/// Runs every cell; a failing cell is recorded and the sweep goes on. Rows
/// come back in [`SweepSpec::cells`] order whatever the worker count.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult, HarnessError> {
    spec.validate()?;
    let cells = spec.cells();
    let workers = match spec.workers {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        w => w,
    }
    .min(cells.len())
    .max(1);
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, cells) = (&next, &cells);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cell) = cells.get(i) else { break };
                let out = run_cell(spec, cell).map_err(|e| e.to_string());
                if tx.send((i, out)).is_err() {
                    break;
                }
            });
        }
    });
    drop(tx);
    let mut slots: Vec<Option<Result<SweepRow, String>>> = vec![None; cells.len()];
    for (i, out) in rx {
        slots[i] = Some(out);
    }
    let mut result = SweepResult {
        rows: Vec::new(),
        failures: Vec::new(),
    };
    for (cell, out) in cells.into_iter().zip(slots) {
        match out.expect("every cell reports") {
            Ok(row) => result.rows.push(row),
            Err(error) => {
                warn!("cell {cell:?} failed: {error}");
                result.failures.push(CellFailure { cell, error });
            }
        }
    }
    info!("sweep done: {} rows, {} failures", result.rows.len(), result.failures.len());
    Ok(result)
}

fn check(x: f64, what: &str) -> Result<f64, HarnessError> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(HarnessError::NonFinite { what: what.into() })
    }
}

/// One line per cell; floats at full round-trip precision.
pub fn rows_csv(rows: &[SweepRow]) -> Result<String, HarnessError> {
    let mut s = String::from(SweepRow::HEADER);
    s.push('\n');
    for r in rows {
        let _ = write!(s, "{},{},{},{}", r.policy, r.n_vehicles, check(r.bias_ghz, "bias_ghz")?, r.seed);
        for m in METRICS {
            let _ = write!(s, ",{}", check(r.metric(m).expect("known metric"), m)?);
        }
        let _ = write!(s, ",{},", r.stable);
        if let Some(t) = r.runtime_s {
            let _ = write!(s, "{}", check(t, "runtime_s")?);
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn summary_csv(rows: &[SweepRow]) -> Result<String, HarnessError> {
    let mut s = String::from("policy,n_vehicles,bias_ghz,n_seeds");
    for m in METRICS {
        let _ = write!(s, ",{m},std_{}", m.trim_start_matches("mean_"));
    }
    s.push_str(",stable_fraction\n");
    for a in aggregate(rows) {
        let _ = write!(s, "{},{},{},{}", a.policy, a.n_vehicles, a.bias_ghz, a.n_seeds);
        for (m, (mean, std)) in METRICS.iter().zip(&a.stats) {
            let _ = write!(s, ",{},{}", check(*mean, m)?, check(*std, m)?);
        }
        let _ = writeln!(s, ",{}", a.stable_fraction);
    }
    Ok(s)
}

pub fn failures_csv(failures: &[CellFailure]) -> String {
    let mut s = String::from("policy,n_vehicles,bias_ghz,seed,error\n");
    for f in failures {
        let c = &f.cell;
        let msg = f.error.replace(['"', '\n'], " ");
        let _ = writeln!(s, "{},{},{},{},\"{msg}\"", c.policy, c.n_vehicles, c.bias_ghz, c.seed);
    }
    s
}

/// Parses a file written by [`rows_csv`].
pub fn parse_rows_csv(text: &str) -> Result<Vec<SweepRow>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == SweepRow::HEADER => {}
        Some(h) => return Err(format!("unexpected header `{h}`")),
        None => return Err("empty file".into()),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 11 {
            return Err(format!("line {}: {} fields, expected 11", i + 2, f.len()));
        }
        let num = |j: usize| {
            parse_f64(SweepRow::HEADER.split(',').nth(j).unwrap_or("?"), f[j]).map_err(|e| format!("line {}: {e}", i + 2))
        };
        rows.push(SweepRow {
            policy: f[0].to_string(),
            n_vehicles: f[1].parse().map_err(|_| format!("line {}: bad n_vehicles", i + 2))?,
            bias_ghz: num(2)?,
            seed: f[3].parse().map_err(|_| format!("line {}: bad seed", i + 2))?,
            mean_energy_j: num(4)?,
            mean_delay_s: num(5)?,
            mean_qos: num(6)?,
            mean_edge_energy_j: num(7)?,
            mean_alpha_sum: num(8)?,
            stable: f[9].parse().map_err(|_| format!("line {}: bad stable flag", i + 2))?,
            runtime_s: if f[10].is_empty() { None } else { Some(num(10)?) },
        });
    }
    Ok(rows)
}
