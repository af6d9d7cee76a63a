//! Energy arithmetic over execution records under a per-function power model.
//!
//! All energies are joules, times are nanoseconds, powers are watts.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runtime::{Backend, ExecutionRecord};

#[derive(Clone, Debug, Error, PartialEq)]
pub enum EnergyError {
    #[error("{function}: transfer time {transfer_ns} ns exceeds wall time {wall_ns} ns")]
    InvalidRecord { function: String, transfer_ns: f64, wall_ns: f64 },
    #[error("power `{0}` must be positive and finite")]
    NonPositivePower(&'static str),
    #[error("{0}: cpu energy is zero")]
    ZeroCpuEnergy(String),
    #[error("empty record group")]
    EmptyGroup,
}

/// Platform power while each backend phase is active.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerModel {
    pub p_cpu: f64,
    pub p_accel: f64,
    pub p_transfer: f64,
    /// Baseline draw; every record already includes it in the phase powers.
    pub p_idle: f64,
}

impl Default for PowerModel {
    fn default() -> Self {
        PowerModel { p_cpu: 12.0, p_accel: 7.5, p_transfer: 8.0, p_idle: 4.0 }
    }
}

impl PowerModel {
    pub fn validate(&self) -> Result<(), EnergyError> {
        for (name, v) in [("p_cpu", self.p_cpu), ("p_accel", self.p_accel), ("p_transfer", self.p_transfer), ("p_idle", self.p_idle)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(EnergyError::NonPositivePower(name));
            }
        }
        Ok(())
    }
}

/// A default model plus per-function overrides.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "PowerTable", into = "PowerTable")]
pub struct PowerConfig {
    pub default: PowerModel,
    pub overrides: BTreeMap<String, PowerModel>,
}

/// Flat on-disk form of [`PowerConfig`]; `flatten` would bypass `deny_unknown_fields`.
#[derive(Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PowerTable {
    p_cpu: f64,
    p_accel: f64,
    p_transfer: f64,
    p_idle: f64,
    overrides: BTreeMap<String, PowerModel>,
}

impl Default for PowerTable {
    fn default() -> Self {
        PowerConfig::default().into()
    }
}

impl From<PowerTable> for PowerConfig {
    fn from(t: PowerTable) -> Self {
        PowerConfig {
            default: PowerModel { p_cpu: t.p_cpu, p_accel: t.p_accel, p_transfer: t.p_transfer, p_idle: t.p_idle },
            overrides: t.overrides,
        }
    }
}

impl From<PowerConfig> for PowerTable {
    fn from(c: PowerConfig) -> Self {
        let d = c.default;
        PowerTable { p_cpu: d.p_cpu, p_accel: d.p_accel, p_transfer: d.p_transfer, p_idle: d.p_idle, overrides: c.overrides }
    }
}

impl PowerConfig {
    pub fn model_for(&self, function: &str) -> &PowerModel {
        self.overrides.get(function).unwrap_or(&self.default)
    }

    pub fn validate(&self) -> Result<(), EnergyError> {
        self.default.validate()?;
        self.overrides.values().try_for_each(PowerModel::validate)
    }
}

/// Energy of one record: cpu time at `p_cpu`, or transfer time at
/// `p_transfer` plus the remaining accelerator time at `p_accel`.
pub fn energy_of(r: &ExecutionRecord, m: &PowerModel) -> Result<f64, EnergyError> {
    if r.transfer_ns > r.wall_ns || r.transfer_ns < 0.0 {
        return Err(EnergyError::InvalidRecord { function: r.function.clone(), transfer_ns: r.transfer_ns, wall_ns: r.wall_ns });
    }
    let nj = match r.backend {
        Backend::Cpu => r.wall_ns * m.p_cpu,
        Backend::Accel => r.transfer_ns * m.p_transfer + (r.wall_ns - r.transfer_ns) * m.p_accel,
    };
    Ok(nj * 1e-9)
}

/// Mean and unbiased standard deviation of a sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Zero when `n == 1`; see `single_sample`.
    pub std: f64,
    pub single_sample: bool,
}

pub fn summarize(values: &[f64]) -> Result<Summary, EnergyError> {
    let n = values.len();
    if n == 0 {
        return Err(EnergyError::EmptyGroup);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(Summary { n, mean, std, single_sample: n == 1 })
}

/// Statistics of one `(function, backend)` group.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub function: String,
    pub backend: Backend,
    pub wall_ns: Summary,
    pub energy_j: Summary,
}

impl Aggregate {
    /// Mean energy over mean wall time.
    pub fn mean_power_w(&self) -> f64 {
        if self.wall_ns.mean > 0.0 {
            self.energy_j.mean / (self.wall_ns.mean * 1e-9)
        } else {
            0.0
        }
    }
}

/// Groups records by `(function, backend)`, in that order.
pub fn aggregate(records: &[ExecutionRecord], power: &PowerConfig) -> Result<Vec<Aggregate>, EnergyError> {
    let mut groups: BTreeMap<(&str, Backend), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in records {
        let e = energy_of(r, power.model_for(&r.function))?;
        let g = groups.entry((&r.function, r.backend)).or_default();
        g.0.push(r.wall_ns);
        g.1.push(e);
    }
    groups
        .into_iter()
        .map(|((f, b), (walls, energies))| {
            Ok(Aggregate { function: f.to_string(), backend: b, wall_ns: summarize(&walls)?, energy_j: summarize(&energies)? })
        })
        .collect()
}

/// Mean accelerator energy over mean cpu energy.
pub fn fraction_vs_cpu(cpu: &Aggregate, accel: &Aggregate) -> Result<f64, EnergyError> {
    if cpu.energy_j.n == 0 || accel.energy_j.n == 0 {
        return Err(EnergyError::EmptyGroup);
    }
    if cpu.energy_j.mean == 0.0 {
        return Err(EnergyError::ZeroCpuEnergy(cpu.function.clone()));
    }
    Ok(accel.energy_j.mean / cpu.energy_j.mean)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyRow {
    pub aggregate: Aggregate,
    /// Set on accelerator rows whose function also has cpu records.
    pub fraction_vs_cpu: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EnergyReport {
    pub rows: Vec<EnergyRow>,
}

pub const REPORT_CSV_HEADER: &str =
    "function,backend,samples,mean_wall_ms,std_wall_ms,std_note,mean_power_w,mean_energy_mj,std_energy_mj,energy_fraction_vs_cpu";

impl EnergyReport {
    pub fn build(records: &[ExecutionRecord], power: &PowerConfig) -> Result<Self, EnergyError> {
        let aggs = aggregate(records, power)?;
        let mut rows = Vec::with_capacity(aggs.len());
        for a in &aggs {
            let fraction = match a.backend {
                Backend::Cpu => None,
                Backend::Accel => aggs
                    .iter()
                    .find(|c| c.function == a.function && c.backend == Backend::Cpu)
                    .map(|c| fraction_vs_cpu(c, a))
                    .transpose()?,
            };
            rows.push(EnergyRow { aggregate: a.clone(), fraction_vs_cpu: fraction });
        }
        Ok(EnergyReport { rows })
    }

    pub fn row(&self, function: &str, backend: Backend) -> Option<&EnergyRow> {
        self.rows.iter().find(|r| r.aggregate.function == function && r.aggregate.backend == backend)
    }

    fn cells(r: &EnergyRow) -> [String; 10] {
        let a = &r.aggregate;
        [
            a.function.clone(),
            a.backend.as_str().to_string(),
            a.wall_ns.n.to_string(),
            format!("{:.6}", a.wall_ns.mean * 1e-6),
            format!("{:.6}", a.wall_ns.std * 1e-6),
            if a.wall_ns.single_sample { "n=1".to_string() } else { String::new() },
            format!("{:.4}", a.mean_power_w()),
            format!("{:.6}", a.energy_j.mean * 1e3),
            format!("{:.6}", a.energy_j.std * 1e3),
            r.fraction_vs_cpu.map(|f| format!("{f:.6}")).unwrap_or_default(),
        ]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(REPORT_CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&Self::cells(r).join(","));
            s.push('\n');
        }
        s
    }

    /// Aligned text with the same columns as the CSV.
    pub fn to_table(&self) -> String {
        let header: Vec<String> = REPORT_CSV_HEADER.split(',').map(str::to_string).collect();
        let body: Vec<[String; 10]> = self.rows.iter().map(Self::cells).collect();
        let mut width: Vec<usize> = header.iter().map(String::len).collect();
        for cells in &body {
            for (w, c) in width.iter_mut().zip(cells) {
                *w = (*w).max(c.len());
            }
        }
        let mut s = String::new();
        let line = |s: &mut String, cells: &[String]| {
            let parts: Vec<String> = cells.iter().zip(&width).map(|(c, w)| format!("{c:<w$}")).collect();
            let _ = writeln!(s, "{}", parts.join("  ").trim_end());
        };
        line(&mut s, &header);
        for cells in &body {
            line(&mut s, cells);
        }
        s
    }
}
