//! Inverter controller models: synchronous-machine emulation inner loops,
//! the conventional ride-through comparators, normal-mode outer loops and the
//! fault-ride-through mode machine.

use serde::{Deserialize, Serialize};

use crate::error::Issue;

pub mod gfl;
pub mod gfm;
pub mod modes;
pub mod sm;

pub use gfl::{
    controller_frame, from_controller_frame, from_paper_dq, gfl_inner_reference, gfl_lvrt_baseline,
    gfl_norton_phasor, gfl_outer_derivatives, paper_dq, GflOuterDerivatives, GflOuterMeasurements,
    GflOuterState, LvrtParams,
};
pub use gfm::{
    gfm_current_from_voltage, gfm_droop_derivatives, gfm_terminal_voltage, resync_tracking, DroopDerivatives,
    DroopMeasurements, DroopState, ResyncGains,
};
pub use modes::{frt_mode_step, recovery_reference, ControlMode, ModeKind, ModeThresholds, Transition};
pub use sm::{sm_norton_current, SmTransientModel};

/// Rated angular frequency (rad/s) used by the droop and PLL dynamics.
pub const OMEGA0: f64 = 2.0 * std::f64::consts::PI * 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiGains {
    pub kp: f64,
    pub ki: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PllGains {
    pub kp: f64,
    pub ki: f64,
}

impl Default for PllGains {
    fn default() -> Self {
        Self { kp: 50.0, ki: 900.0 }
    }
}

fn default_outer() -> PiGains {
    PiGains { kp: 0.5, ki: 20.0 }
}

fn default_i_max() -> f64 {
    1.2
}

fn default_track_tau() -> f64 {
    0.002
}

fn default_k_q() -> f64 {
    2.0
}

fn default_gfl_b() -> f64 {
    0.0
}

/// Grid-following inverter (PLL-synchronised current source).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GflDevice {
    pub id: String,
    pub bus: u32,
    pub p_sp: f64,
    #[serde(default)]
    pub q_sp: f64,
    #[serde(default = "default_i_max")]
    pub i_max: f64,
    /// Virtual susceptance `b' = 1/x'`; `0` disables the correction.
    #[serde(default = "default_gfl_b")]
    pub b_virtual: f64,
    #[serde(default)]
    pub pll: PllGains,
    #[serde(default = "default_outer")]
    pub outer: PiGains,
    #[serde(default = "default_track_tau")]
    pub i_track_tau: f64,
    /// Reactive-current gain of the conventional ride-through controller.
    #[serde(default = "default_k_q")]
    pub k_q: f64,
}

impl GflDevice {
    pub fn validate(&self, path: &str) -> Vec<Issue> {
        let mut out = Vec::new();
        let mut check = |ok: bool, field: &str, msg: &str| {
            if !ok {
                out.push(Issue {
                    path: format!("{path}.{field}"),
                    message: msg.into(),
                });
            }
        };
        check(self.i_max > 0.0, "i_max", "must be positive");
        check(self.b_virtual >= 0.0, "b_virtual", "must be non-negative");
        check(self.i_track_tau > 0.0, "i_track_tau", "must be positive");
        check(self.pll.kp > 0.0 && self.pll.ki > 0.0, "pll", "gains must be positive");
        check(self.outer.kp >= 0.0 && self.outer.ki > 0.0, "outer", "gains must be non-negative with ki > 0");
        check(self.k_q >= 0.0, "k_q", "must be non-negative");
        out
    }
}

fn default_v_set() -> f64 {
    1.0
}

fn default_m_p() -> f64 {
    0.02
}

fn default_n_q() -> f64 {
    0.05
}

fn default_tau_e() -> f64 {
    0.02
}

fn default_x_virtual() -> f64 {
    0.3
}

/// Grid-forming inverter (droop-controlled voltage source behind `x'`).
///
/// `p_sp` and `v_set` fix the pre-fault dispatch; the droop references `q_sp`
/// and `e0` are taken from the resulting operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GfmDevice {
    pub id: String,
    pub bus: u32,
    #[serde(default)]
    pub p_sp: f64,
    #[serde(default = "default_v_set")]
    pub v_set: f64,
    #[serde(default = "default_m_p")]
    pub m_p: f64,
    #[serde(default = "default_n_q")]
    pub n_q: f64,
    #[serde(default = "default_tau_e")]
    pub tau_e: f64,
    #[serde(default = "default_i_max")]
    pub i_max: f64,
    #[serde(default = "default_x_virtual")]
    pub x_virtual: f64,
    #[serde(default = "default_track_tau")]
    pub i_track_tau: f64,
}

impl GfmDevice {
    pub fn validate(&self, path: &str) -> Vec<Issue> {
        let mut out = Vec::new();
        let mut check = |ok: bool, field: &str, msg: &str| {
            if !ok {
                out.push(Issue {
                    path: format!("{path}.{field}"),
                    message: msg.into(),
                });
            }
        };
        check(self.i_max > 0.0, "i_max", "must be positive");
        check(self.x_virtual > 0.0, "x_virtual", "must be positive");
        check(self.m_p > 0.0 && self.n_q > 0.0, "m_p", "droop gains must be positive");
        check(self.tau_e > 0.0, "tau_e", "must be positive");
        check(self.v_set > 0.0, "v_set", "must be positive");
        check(self.i_track_tau > 0.0, "i_track_tau", "must be positive");
        out
    }
}

fn default_lvrt() -> f64 {
    0.2
}

fn default_hvrt() -> f64 {
    1.2
}

/// Ride-through voltage window; current limits live on each device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecurityLimits {
    #[serde(default = "default_lvrt")]
    pub v_lvrt_th: f64,
    #[serde(default = "default_hvrt")]
    pub v_hvrt_th: f64,
}

impl Default for SecurityLimits {
    fn default() -> Self {
        Self {
            v_lvrt_th: default_lvrt(),
            v_hvrt_th: default_hvrt(),
        }
    }
}

impl SecurityLimits {
    pub fn validate(&self, path: &str) -> Vec<Issue> {
        if 0.0 < self.v_lvrt_th && self.v_lvrt_th < 1.0 && 1.0 < self.v_hvrt_th {
            Vec::new()
        } else {
            vec![Issue {
                path: path.into(),
                message: format!(
                    "need 0 < v_lvrt_th < 1 < v_hvrt_th, got {} and {}",
                    self.v_lvrt_th, self.v_hvrt_th
                ),
            }]
        }
    }
}

/// Kind of inverter, used for ordering and reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceKind {
    Gfm,
    Gfl,
}
