//! Per-slot and backlog CSVs, and plot-data series derived from sweep results.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::episode::EpisodeResult;
use super::sweep::{aggregate, parse_rows_csv};
use super::HarnessError;

/// Figure name and the sweep metric it plots against the vehicle count.
pub const FIGURES: [(&str, &str); 5] = [
    ("energy", "mean_energy_j"),
    ("delay", "mean_delay_s"),
    ("qos", "mean_qos"),
    ("edge_energy", "mean_edge_energy_j"),
    ("alpha_sum", "mean_alpha_sum"),
];

fn fin(x: f64, what: &str, slot: u64) -> Result<f64, HarnessError> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(HarnessError::NonFinite {
            what: format!("{what} at slot {slot}"),
        })
    }
}

pub const SLOT_HEADER: &str =
    "slot,qos_system,mean_delay_s,e_local_j,e_edge_j,e_system_j,alpha_sum,p1,p2,drift,drift_bound,violations,fallback";

/// One row per slot; floats at full round-trip precision.
pub fn slot_csv(result: &EpisodeResult) -> Result<String, HarnessError> {
    let mut s = String::from(SLOT_HEADER);
    s.push('\n');
    for r in &result.slots {
        let m = &r.metrics;
        let vals = [
            ("qos_system", m.qos_system),
            ("mean_delay_s", m.mean_delay()),
            ("e_local_j", m.e_local),
            ("e_edge_j", m.e_edge),
            ("e_system_j", m.e_system),
            ("alpha_sum", r.action.alpha_sum()),
            ("p1", r.objective.p1),
            ("p2", r.objective.p2),
            ("drift", r.drift),
            ("drift_bound", r.drift_bound),
        ];
        let _ = write!(s, "{}", r.slot);
        for (what, v) in vals {
            let _ = write!(s, ",{}", fin(v, what, r.slot)?);
        }
        let _ = writeln!(s, ",{},{}", r.objective.constraint_violations.len(), r.used_fallback);
    }
    Ok(s)
}

pub fn backlog_csv(result: &EpisodeResult) -> Result<String, HarnessError> {
    let k = result.config.n_task_types;
    let mut s = String::from("slot");
    for name in ["q", "z", "phi"] {
        for j in 0..k {
            let _ = write!(s, ",{name}_{j}");
        }
    }
    s.push('\n');
    for b in &result.backlog {
        let _ = write!(s, "{}", b.slot);
        for (name, v) in [("q", &b.q), ("z", &b.z), ("phi", &b.phi)] {
            for &x in v {
                let _ = write!(s, ",{}", fin(x, name, b.slot)?);
            }
        }
        s.push('\n');
    }
    Ok(s)
}

fn write_file(path: &Path, text: &str) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;
    }
    fs::write(path, text).map_err(HarnessError::io(path))
}

pub fn write_slot_csv(path: &Path, result: &EpisodeResult) -> Result<(), HarnessError> {
    write_file(path, &slot_csv(result)?)
}

pub fn write_backlog_csv(path: &Path, result: &EpisodeResult) -> Result<(), HarnessError> {
    write_file(path, &backlog_csv(result)?)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    write_file(path, text)
}

fn file_component(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') { c } else { '_' })
        .collect()
}

/// Series file name for one (figure, policy, bias) combination.
pub fn series_name(figure: &str, policy: &str, bias_ghz: f64) -> String {
    format!("{figure}__{}__bias{}.dat", file_component(policy), bias_ghz)
}

/// Reads a sweep results CSV and writes one two-column `x y` file per figure,
/// policy and bias: x is the vehicle count, y the seed-averaged metric.
/// Returns the written paths in order.
pub fn write_report(results_csv: &Path, out_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let text = fs::read_to_string(results_csv).map_err(HarnessError::io(results_csv))?;
    let rows = parse_rows_csv(&text).map_err(|reason| HarnessError::Results {
        path: results_csv.display().to_string(),
        reason,
    })?;
    let aggs = aggregate(&rows);
    let mut series: Vec<(String, f64)> = Vec::new();
    for a in &aggs {
        let key = (a.policy.clone(), a.bias_ghz);
        if !series.contains(&key) {
            series.push(key);
        }
    }
    fs::create_dir_all(out_dir).map_err(HarnessError::io(out_dir))?;
    let mut written = Vec::new();
    for (figure, metric) in FIGURES {
        for (policy, bias) in &series {
            let mut points: Vec<(usize, f64)> = aggs
                .iter()
                .filter(|a| &a.policy == policy && a.bias_ghz == *bias)
                .map(|a| (a.n_vehicles, a.mean(metric).expect("known metric")))
                .collect();
            points.sort_by_key(|p| p.0);
            let mut body = format!("# {figure}: {metric} vs n_vehicles, policy {policy}, bias {bias} GHz\n");
            for (x, y) in points {
                let _ = writeln!(body, "{x} {}", fin(y, metric, 0)?);
            }
            let path = out_dir.join(series_name(figure, policy, *bias));
            fs::write(&path, body).map_err(HarnessError::io(&path))?;
            written.push(path);
        }
    }
    Ok(written)
}
