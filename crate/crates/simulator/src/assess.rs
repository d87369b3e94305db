//! Ride-through assessment of a finished trajectory.

use serde::{Deserialize, Serialize};
use stvs_core::devices::SecurityLimits;
use stvs_core::Scalar;

use crate::trajectory::Trajectory;

/// Distance to a ride-through limit below which a device is marginal.
pub const MARGINAL_BAND: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskKind {
    Undervoltage,
    Overvoltage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskInterval {
    pub kind: RiskKind,
    pub start: f64,
    pub end: f64,
    pub duration: f64,
    /// Deepest dip or highest swell inside the interval.
    pub extreme: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Secure,
    Marginal,
    AtRisk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceAssessment {
    pub device: String,
    pub min_v: f64,
    pub max_v: f64,
    pub intervals: Vec<RiskInterval>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RideThroughReport {
    pub devices: Vec<DeviceAssessment>,
}

impl RideThroughReport {
    pub fn secure(&self) -> bool {
        self.devices.iter().all(|d| d.verdict != Verdict::AtRisk)
    }
}

/// Flags every stretch of samples where a device's terminal voltage leaves
/// `[v_lvrt_th, v_hvrt_th]`.
pub fn ride_through_assessment<T: Scalar>(traj: &Trajectory<T>, limits: &SecurityLimits) -> RideThroughReport {
    let dt = traj.sample_interval();
    let devices = traj
        .device_ids
        .iter()
        .enumerate()
        .map(|(k, id)| {
            let row = traj.device_bus[k];
            let mut intervals: Vec<RiskInterval> = Vec::new();
            let mut open: Option<RiskInterval> = None;
            let (mut min_v, mut max_v) = (f64::INFINITY, f64::NEG_INFINITY);
            for (s, t) in traj.t.iter().enumerate() {
                let t = t.to_f64_lossy();
                let v = traj.vmag[s][row].to_f64_lossy();
                min_v = min_v.min(v);
                max_v = max_v.max(v);
                let kind = if v < limits.v_lvrt_th {
                    Some(RiskKind::Undervoltage)
                } else if v > limits.v_hvrt_th {
                    Some(RiskKind::Overvoltage)
                } else {
                    None
                };
                match (&mut open, kind) {
                    (Some(iv), Some(k)) if iv.kind == k => {
                        iv.end = t;
                        iv.extreme = match k {
                            RiskKind::Undervoltage => iv.extreme.min(v),
                            RiskKind::Overvoltage => iv.extreme.max(v),
                        };
                    }
                    (_, k) => {
                        if let Some(mut iv) = open.take() {
                            iv.duration = iv.end - iv.start + dt;
                            intervals.push(iv);
                        }
                        open = k.map(|kind| RiskInterval {
                            kind,
                            start: t,
                            end: t,
                            duration: 0.0,
                            extreme: v,
                        });
                    }
                }
            }
            if let Some(mut iv) = open {
                iv.duration = iv.end - iv.start + dt;
                intervals.push(iv);
            }
            let verdict = if !intervals.is_empty() {
                Verdict::AtRisk
            } else if min_v < limits.v_lvrt_th + MARGINAL_BAND || max_v > limits.v_hvrt_th - MARGINAL_BAND {
                Verdict::Marginal
            } else {
                Verdict::Secure
            };
            DeviceAssessment {
                device: id.clone(),
                min_v,
                max_v,
                intervals,
                verdict,
            }
        })
        .collect();
    RideThroughReport { devices }
}
