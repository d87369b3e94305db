//! Grid scenario: the unit of work for every command, stored as versioned TOML.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::devices::{DeviceKind, GflDevice, GfmDevice, ModeThresholds, SecurityLimits};
use crate::error::{Error, Issue, Result};
use crate::netmodel::{Bus, FaultSpec, Line, LoadZ};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integration {
    #[default]
    Rk4,
    Trapezoidal,
}

fn default_dt() -> f64 {
    1e-4
}
fn default_detection_tau() -> f64 {
    0.02
}
fn default_decimation() -> usize {
    10
}
fn default_resync_tau() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSettings {
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Horizon; defaults to the latest clearance plus 0.6 s.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(default)]
    pub integration: Integration,
    #[serde(default = "default_detection_tau")]
    pub detection_tau: f64,
    #[serde(default = "default_decimation")]
    pub record_decimation: usize,
    /// Time constant of grid-forming phase resynchronisation in recovery.
    #[serde(default = "default_resync_tau")]
    pub resync_tau: f64,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            dt: default_dt(),
            t_end: None,
            integration: Integration::Rk4,
            detection_tau: default_detection_tau(),
            record_decimation: default_decimation(),
            resync_tau: default_resync_tau(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetSharing {
    #[default]
    PerFault,
    Shared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoltageRef {
    pub bus: u32,
    pub v: f64,
}

fn default_x_min() -> f64 {
    0.05
}
fn default_x_max() -> f64 {
    1.0
}
fn default_b_max() -> f64 {
    20.0
}
fn default_weights() -> [f64; 3] {
    [1.0, 1.0, 1.0]
}
fn default_guard() -> f64 {
    0.05
}
fn default_starts() -> usize {
    3
}
fn default_seed() -> u64 {
    7
}
fn default_max_iter() -> usize {
    300
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptSettings {
    #[serde(default = "default_x_min")]
    pub x_min: f64,
    #[serde(default = "default_x_max")]
    pub x_max: f64,
    #[serde(default = "default_b_max")]
    pub b_max: f64,
    /// Weights of the τ1, τ2, τ3 deviation terms.
    #[serde(default = "default_weights")]
    pub moment_weights: [f64; 3],
    #[serde(default)]
    pub preset_sharing: PresetSharing,
    /// Objective reference voltages; monitored buses not listed use their
    /// pre-fault voltage.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub v_ref: Vec<VoltageRef>,
    /// Distance kept from the mode-switch thresholds at device buses so the
    /// simulated controllers take the modes the analytic model assumes.
    #[serde(default = "default_guard")]
    pub mode_guard: f64,
    #[serde(default = "default_starts")]
    pub starts: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

impl Default for OptSettings {
    fn default() -> Self {
        Self {
            x_min: default_x_min(),
            x_max: default_x_max(),
            b_max: default_b_max(),
            moment_weights: default_weights(),
            preset_sharing: PresetSharing::PerFault,
            v_ref: Vec::new(),
            mode_guard: default_guard(),
            starts: default_starts(),
            seed: default_seed(),
            max_iter: default_max_iter(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub limits: SecurityLimits,
    #[serde(default)]
    pub modes: ModeThresholds,
    #[serde(default)]
    pub sim: SimSettings,
    #[serde(default)]
    pub opt: OptSettings,
    #[serde(default, rename = "bus")]
    pub buses: Vec<Bus>,
    #[serde(default, rename = "line")]
    pub lines: Vec<Line>,
    #[serde(default, rename = "load")]
    pub loads: Vec<LoadZ>,
    #[serde(default)]
    pub gfm: Vec<GfmDevice>,
    #[serde(default)]
    pub gfl: Vec<GflDevice>,
    #[serde(default, rename = "fault")]
    pub faults: Vec<FaultSpec>,
}

/// Flat view of one inverter; devices are ordered grid-forming first, each
/// group in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceRef {
    pub kind: DeviceKind,
    /// Position within its own kind (`scenario.gfm[k]` or `scenario.gfl[k]`).
    pub k: usize,
    pub id: String,
    pub bus: u32,
    pub i_max: f64,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Err(Error::Schema("empty scenario document".into()));
        }
        let raw: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Schema(e.to_string()))?;
        match raw.get("schema_version").and_then(|v| v.as_integer()) {
            Some(v) if v == SCHEMA_VERSION as i64 => {}
            Some(v) => {
                return Err(Error::Schema(format!(
                    "schema_version {v} is not supported (expected {SCHEMA_VERSION})"
                )))
            }
            None => return Err(Error::Schema("missing integer field `schema_version`".into())),
        }
        let sc: Scenario = toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario is always representable as TOML")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml_string()).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn devices(&self) -> Vec<DeviceRef> {
        let gfm = self.gfm.iter().enumerate().map(|(k, d)| DeviceRef {
            kind: DeviceKind::Gfm,
            k,
            id: d.id.clone(),
            bus: d.bus,
            i_max: d.i_max,
        });
        let gfl = self.gfl.iter().enumerate().map(|(k, d)| DeviceRef {
            kind: DeviceKind::Gfl,
            k,
            id: d.id.clone(),
            bus: d.bus,
            i_max: d.i_max,
        });
        gfm.chain(gfl).collect()
    }

    pub fn monitored_buses(&self) -> Vec<u32> {
        self.buses.iter().filter(|b| b.monitored).map(|b| b.id).collect()
    }

    pub fn fault(&self, id: &str) -> Option<&FaultSpec> {
        self.faults.iter().find(|f| f.id == id)
    }

    pub fn t_end(&self) -> f64 {
        self.sim.t_end.unwrap_or_else(|| {
            self.faults.iter().map(|f| f.t_clear).fold(0.0, f64::max) + 0.6
        })
    }

    /// Collects every problem instead of stopping at the first.
    pub fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();
        let mut push = |path: String, message: String| issues.push(Issue { path, message });

        if self.schema_version != SCHEMA_VERSION {
            push("schema_version".into(), format!("expected {SCHEMA_VERSION}"));
        }
        let mut bus_ids = BTreeSet::new();
        for (k, b) in self.buses.iter().enumerate() {
            if !bus_ids.insert(b.id) {
                push(format!("bus[{k}].id"), format!("duplicate bus id {}", b.id));
            }
        }
        if self.buses.is_empty() {
            push("bus".into(), "scenario has no buses".into());
        }
        if !self.buses.iter().any(|b| b.monitored) {
            push("bus".into(), "at least one bus must be monitored".into());
        }
        let known = |id: u32| bus_ids.contains(&id);
        for (k, l) in self.lines.iter().enumerate() {
            for (field, id) in [("from", l.from), ("to", l.to)] {
                if !known(id) {
                    push(format!("line[{k}].{field}"), format!("unknown bus id {id}"));
                }
            }
            if l.from == l.to {
                push(format!("line[{k}]"), "from and to must differ".into());
            }
            if l.r * l.r + l.x * l.x <= 0.0 {
                push(format!("line[{k}].x"), "zero series impedance".into());
            }
        }
        for (k, l) in self.loads.iter().enumerate() {
            if !known(l.bus) {
                push(format!("load[{k}].bus"), format!("unknown bus id {}", l.bus));
            }
        }

        let mut dev_ids = BTreeSet::new();
        for (k, d) in self.gfm.iter().enumerate() {
            let path = format!("gfm[{k}]");
            if !known(d.bus) {
                push(format!("{path}.bus"), format!("unknown bus id {}", d.bus));
            }
            if !dev_ids.insert(d.id.clone()) {
                push(format!("{path}.id"), format!("duplicate device id {}", d.id));
            }
            for i in d.validate(&path) {
                push(i.path, i.message);
            }
        }
        for (k, d) in self.gfl.iter().enumerate() {
            let path = format!("gfl[{k}]");
            if !known(d.bus) {
                push(format!("{path}.bus"), format!("unknown bus id {}", d.bus));
            }
            if !dev_ids.insert(d.id.clone()) {
                push(format!("{path}.id"), format!("duplicate device id {}", d.id));
            }
            for i in d.validate(&path) {
                push(i.path, i.message);
            }
        }
        if self.gfm.is_empty() && self.gfl.is_empty() {
            push("gfm".into(), "scenario needs at least one device".into());
        }
        if self.gfm.is_empty() {
            push("gfm".into(), "at least one grid-forming device is needed as the angle reference".into());
        }
        let mut v_set: BTreeMap<u32, f64> = BTreeMap::new();
        for (k, d) in self.gfm.iter().enumerate() {
            if let Some(&v) = v_set.get(&d.bus) {
                if (v - d.v_set).abs() > 1e-12 {
                    push(format!("gfm[{k}].v_set"), format!("conflicts with another device at bus {}", d.bus));
                }
            } else {
                v_set.insert(d.bus, d.v_set);
            }
        }

        let mut fault_ids = BTreeSet::new();
        for (k, f) in self.faults.iter().enumerate() {
            let path = format!("fault[{k}]");
            if !fault_ids.insert(f.id.clone()) {
                push(format!("{path}.id"), format!("duplicate fault id {}", f.id));
            }
            if !known(f.bus) {
                push(format!("{path}.bus"), format!("fault {} at unknown bus id {}", f.id, f.bus));
            }
            for i in f.validate(&path) {
                push(i.path, i.message);
            }
        }

        for i in self.limits.validate("limits") {
            push(i.path, i.message);
        }
        let m = &self.modes;
        if !(0.0 < m.v_enter && m.v_enter < m.v_exit) {
            push("modes".into(), "need 0 < v_enter < v_exit".into());
        }
        if !(m.tau_rec > 0.0 && m.recovery_tolerance > 0.0) {
            push("modes".into(), "tau_rec and recovery_tolerance must be positive".into());
        }

        let s = &self.sim;
        if !(s.dt > 0.0) {
            push("sim.dt".into(), "must be positive".into());
        }
        if !(s.detection_tau > 0.0) {
            push("sim.detection_tau".into(), "must be positive".into());
        }
        if s.record_decimation == 0 {
            push("sim.record_decimation".into(), "must be at least 1".into());
        }
        if !(s.resync_tau > 0.0) {
            push("sim.resync_tau".into(), "must be positive".into());
        }
        if let Some(t_end) = s.t_end {
            let last = self.faults.iter().map(|f| f.t_clear).fold(0.0, f64::max);
            if !(t_end > last + 0.5) {
                push("sim.t_end".into(), format!("must exceed the last clearance ({last}) by more than 0.5 s"));
            }
        }

        let o = &self.opt;
        if !(0.0 < o.x_min && o.x_min < o.x_max) {
            push("opt.x_min".into(), "need 0 < x_min < x_max".into());
        }
        if !(o.b_max > 0.0) {
            push("opt.b_max".into(), "must be positive".into());
        }
        if o.moment_weights.iter().any(|&w| w < 0.0) || o.moment_weights.iter().all(|&w| w == 0.0) {
            push("opt.moment_weights".into(), "weights must be non-negative and not all zero".into());
        }
        for (k, r) in o.v_ref.iter().enumerate() {
            if !self.buses.iter().any(|b| b.id == r.bus && b.monitored) {
                push(format!("opt.v_ref[{k}].bus"), format!("bus {} is not a monitored bus", r.bus));
            }
        }
        if o.mode_guard < 0.0 {
            push("opt.mode_guard".into(), "must be non-negative".into());
        }
        if o.starts == 0 || o.max_iter == 0 {
            push("opt.starts".into(), "starts and max_iter must be at least 1".into());
        }

        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(issues))
        }
    }
}

/// Scenarios shipped with the toolkit.
pub mod bundled {
    pub const TWO_DEVICE: &str = include_str!("../scenarios/two_device.scn");
    pub const IEEE14_IBR: &str = include_str!("../scenarios/ieee14_ibr.scn");

    pub fn by_name(name: &str) -> Option<&'static str> {
        match name {
            "two_device" => Some(TWO_DEVICE),
            "ieee14_ibr" => Some(IEEE14_IBR),
            _ => None,
        }
    }
}
