//! Tunings file: virtual impedances plus frozen ride-through presets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::critmoments::Tunings;
use crate::devices::DeviceKind;
use crate::error::{Error, Issue, Result};
use crate::scalar::{xy, Phasor};
use crate::scenario::{PresetSharing, Scenario, SCHEMA_VERSION};

/// Fault id used for presets shared by every contingency.
pub const SHARED_FAULT: &str = "*";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GfmTuning {
    pub id: String,
    pub x_virtual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GflTuning {
    pub id: String,
    pub b_virtual: f64,
    /// `1/b'`, absent when the correction is disabled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_virtual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preset {
    pub fault: String,
    pub device: String,
    /// xy components; authoritative.
    pub x: f64,
    pub y: f64,
    /// Polar form, informational.
    pub mag: f64,
    pub angle: f64,
    /// Grid-following only: controller-frame components at the pre-fault PLL angle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
}

impl Preset {
    pub fn new(fault: &str, device: &str, value: Phasor<f64>, dq: Option<[f64; 2]>) -> Self {
        Self {
            fault: fault.into(),
            device: device.into(),
            x: value.re,
            y: value.im,
            mag: value.norm(),
            angle: value.arg(),
            d: dq.map(|v| v[0]),
            q: dq.map(|v| v[1]),
        }
    }

    pub fn phasor(&self) -> Phasor<f64> {
        xy(self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningFile {
    pub schema_version: u32,
    pub scenario: String,
    pub preset_sharing: PresetSharing,
    #[serde(default)]
    pub gfm: Vec<GfmTuning>,
    #[serde(default)]
    pub gfl: Vec<GflTuning>,
    #[serde(default, rename = "preset")]
    pub presets: Vec<Preset>,
}

impl TuningFile {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Err(Error::Schema("empty tunings document".into()));
        }
        let tf: TuningFile = toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        if tf.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                tf.schema_version
            )));
        }
        Ok(tf)
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
        toml::to_string(self).expect("tunings are always representable as TOML")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml_string()).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Builds a tunings file from per-device values and per-fault presets
    /// (`presets[f][k]` in device order; one row when shared).
    pub fn build(
        scenario: &Scenario,
        tunings: &Tunings<f64>,
        sharing: PresetSharing,
        presets: &[Vec<Phasor<f64>>],
        gfl_dq: impl Fn(usize, Phasor<f64>) -> [f64; 2],
    ) -> Self {
        let fault_ids: Vec<String> = match sharing {
            PresetSharing::Shared => vec![SHARED_FAULT.to_string()],
            PresetSharing::PerFault => scenario.faults.iter().map(|f| f.id.clone()).collect(),
        };
        Self::build_for(scenario, tunings, sharing, &fault_ids, presets, gfl_dq)
    }

    /// As [`TuningFile::build`] with explicit preset group names (a subset
    /// of the scenario's faults, or [`SHARED_FAULT`]).
    pub fn build_for(
        scenario: &Scenario,
        tunings: &Tunings<f64>,
        sharing: PresetSharing,
        fault_ids: &[String],
        presets: &[Vec<Phasor<f64>>],
        gfl_dq: impl Fn(usize, Phasor<f64>) -> [f64; 2],
    ) -> Self {
        let devices = scenario.devices();
        let mut out = Vec::new();
        for (fid, row) in fault_ids.iter().zip(presets) {
            for (d, &p) in devices.iter().zip(row) {
                let dq = (d.kind == DeviceKind::Gfl).then(|| gfl_dq(d.k, p));
                out.push(Preset::new(fid, &d.id, p, dq));
            }
        }
        Self {
            schema_version: SCHEMA_VERSION,
            scenario: scenario.name.clone(),
            preset_sharing: sharing,
            gfm: scenario
                .gfm
                .iter()
                .zip(&tunings.x_gfm)
                .map(|(g, &x)| GfmTuning {
                    id: g.id.clone(),
                    x_virtual: x,
                })
                .collect(),
            gfl: scenario
                .gfl
                .iter()
                .zip(&tunings.b_gfl)
                .map(|(g, &b)| GflTuning {
                    id: g.id.clone(),
                    b_virtual: b,
                    x_virtual: (b >= 1e-6).then(|| b.recip()),
                })
                .collect(),
            presets: out,
        }
    }

    /// Checks the file against a scenario and its optimisation bounds.
    pub fn validate(&self, scenario: &Scenario) -> Result<()> {
        let mut issues = Vec::new();
        let mut push = |path: String, message: String| issues.push(Issue { path, message });
        let o = &scenario.opt;
        let slack = 1e-9;
        if self.gfm.len() != scenario.gfm.len() {
            push("gfm".into(), format!("{} entries for {} devices", self.gfm.len(), scenario.gfm.len()));
        }
        if self.gfl.len() != scenario.gfl.len() {
            push("gfl".into(), format!("{} entries for {} devices", self.gfl.len(), scenario.gfl.len()));
        }
        for (k, t) in self.gfm.iter().enumerate() {
            if !scenario.gfm.iter().any(|g| g.id == t.id) {
                push(format!("gfm[{k}].id"), format!("unknown grid-forming device {}", t.id));
            }
            if !(t.x_virtual >= o.x_min - slack && t.x_virtual <= o.x_max + slack) {
                push(
                    format!("gfm[{k}].x_virtual"),
                    format!("{} outside [{}, {}]", t.x_virtual, o.x_min, o.x_max),
                );
            }
        }
        for (k, t) in self.gfl.iter().enumerate() {
            if !scenario.gfl.iter().any(|g| g.id == t.id) {
                push(format!("gfl[{k}].id"), format!("unknown grid-following device {}", t.id));
            }
            if !(t.b_virtual >= -slack && t.b_virtual <= o.b_max + slack) {
                push(
                    format!("gfl[{k}].b_virtual"),
                    format!("{} outside [0, {}]", t.b_virtual, o.b_max),
                );
            }
        }
        for (k, p) in self.presets.iter().enumerate() {
            if p.fault != SHARED_FAULT && scenario.fault(&p.fault).is_none() {
                push(format!("preset[{k}].fault"), format!("unknown fault {}", p.fault));
            }
            if !scenario.devices().iter().any(|d| d.id == p.device) {
                push(format!("preset[{k}].device"), format!("unknown device {}", p.device));
            }
            if !(p.x.is_finite() && p.y.is_finite()) {
                push(format!("preset[{k}]"), "non-finite preset".into());
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(issues))
        }
    }

    /// Tunings in scenario order.
    pub fn tunings(&self, scenario: &Scenario) -> Result<Tunings<f64>> {
        let x_gfm = scenario
            .gfm
            .iter()
            .map(|g| {
                self.gfm
                    .iter()
                    .find(|t| t.id == g.id)
                    .map(|t| t.x_virtual)
                    .ok_or_else(|| Error::invalid("gfm", format!("no tuning for {}", g.id)))
            })
            .collect::<Result<_>>()?;
        let b_gfl = scenario
            .gfl
            .iter()
            .map(|g| {
                self.gfl
                    .iter()
                    .find(|t| t.id == g.id)
                    .map(|t| t.b_virtual.max(0.0))
                    .ok_or_else(|| Error::invalid("gfl", format!("no tuning for {}", g.id)))
            })
            .collect::<Result<_>>()?;
        Ok(Tunings { x_gfm, b_gfl })
    }

    /// Presets for one fault in device order, falling back to shared presets.
    pub fn presets_for(&self, scenario: &Scenario, fault: &str) -> Result<Vec<Phasor<f64>>> {
        scenario
            .devices()
            .iter()
            .map(|d| {
                self.presets
                    .iter()
                    .find(|p| p.device == d.id && p.fault == fault)
                    .or_else(|| {
                        self.presets
                            .iter()
                            .find(|p| p.device == d.id && p.fault == SHARED_FAULT)
                    })
                    .map(Preset::phasor)
                    .ok_or_else(|| Error::invalid("preset", format!("no preset for device {} under fault {fault}", d.id)))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::bundled;

    fn sample() -> (Scenario, TuningFile) {
        let sc = Scenario::from_toml_str(bundled::TWO_DEVICE).unwrap();
        let tun = Tunings {
            x_gfm: vec![0.2],
            b_gfl: vec![0.5],
        };
        let presets = vec![vec![xy(0.88, 0.0), xy(0.3, 0.9)]];
        let tf = TuningFile::build(&sc, &tun, PresetSharing::PerFault, &presets, |_, p| [p.re, -p.im]);
        (sc, tf)
    }

    #[test]
    fn round_trip_and_lookup() {
        let (sc, tf) = sample();
        let back = TuningFile::from_toml_str(&tf.to_toml_string()).unwrap();
        assert_eq!(back, tf);
        back.validate(&sc).unwrap();
        assert_eq!(back.gfl[0].x_virtual, Some(2.0));
        let p = back.presets_for(&sc, "F1").unwrap();
        assert_eq!(p[0], xy(0.88, 0.0));
        assert_eq!(back.presets[0].mag, 0.88);
        assert_eq!(back.presets[0].angle, 0.0);
        assert!(back.presets_for(&sc, "F9").is_err());
    }

    #[test]
    fn disabled_correction_has_no_reactance() {
        let sc = Scenario::from_toml_str(bundled::TWO_DEVICE).unwrap();
        let tun = Tunings {
            x_gfm: vec![0.2],
            b_gfl: vec![0.0],
        };
        let tf = TuningFile::build(&sc, &tun, PresetSharing::Shared, &[vec![xy(1.0, 0.0); 2]], |_, _| [0.0; 2]);
        assert_eq!(tf.gfl[0].x_virtual, None);
        assert_eq!(tf.presets_for(&sc, "F1").unwrap().len(), 2);
    }

    #[test]
    fn out_of_bounds_reactance_is_rejected() {
        let (sc, mut tf) = sample();
        tf.gfm[0].x_virtual = 5.0;
        let err = tf.validate(&sc).unwrap_err();
        assert_eq!(err.issues()[0].path, "gfm[0].x_virtual");
    }
}
