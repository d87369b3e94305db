//! Fault-ride-through mode machine and recovery reference shaping.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ModeKind {
    /// Mode 1: normal outer-loop control.
    Normal,
    /// Mode 2: outer loops frozen, preset references tracked.
    Frt,
    /// Mode 3: references decay back toward their pre-freeze values.
    Recovery,
}

impl ModeKind {
    /// Numeric code used in trajectory output (1, 2, 3).
    pub fn code(self) -> u8 {
        match self {
            ModeKind::Normal => 1,
            ModeKind::Frt => 2,
            ModeKind::Recovery => 3,
        }
    }

    pub fn can_enter(self, to: ModeKind) -> bool {
        use ModeKind::*;
        matches!((self, to), (Normal, Frt) | (Frt, Recovery) | (Recovery, Normal) | (Recovery, Frt))
    }
}

impl fmt::Display for ModeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModeKind::Normal => "NORMAL",
            ModeKind::Frt => "FRT",
            ModeKind::Recovery => "RECOVERY",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlMode<T> {
    pub kind: ModeKind,
    /// Time the current mode was entered (s).
    pub since: T,
    /// Outer-loop references captured when the outer loops were frozen.
    pub snapshot: Option<[T; 2]>,
}

impl<T: Scalar> ControlMode<T> {
    pub fn normal() -> Self {
        Self {
            kind: ModeKind::Normal,
            since: T::zero(),
            snapshot: None,
        }
    }

    /// Moves to `to`, refusing anything the state machine does not allow.
    pub fn transition(&self, to: ModeKind, t: T) -> Result<Self> {
        if !self.kind.can_enter(to) {
            return Err(Error::IllegalTransition {
                from: self.kind.to_string(),
                to: to.to_string(),
            });
        }
        Ok(Self {
            kind: to,
            since: t,
            snapshot: self.snapshot,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition<T> {
    pub from: ModeKind,
    pub to: ModeKind,
    pub t: T,
    pub cause: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeThresholds {
    pub v_enter: f64,
    pub v_exit: f64,
    pub recovery_tolerance: f64,
    pub tau_rec: f64,
}

impl Default for ModeThresholds {
    fn default() -> Self {
        Self {
            v_enter: 0.8,
            v_exit: 0.85,
            recovery_tolerance: 1e-3,
            tau_rec: 0.05,
        }
    }
}

/// Advances the mode machine by one sample.
///
/// `ref_gap` is the distance between the transitioning references and their
/// pre-freeze values; it only matters in recovery.
pub fn frt_mode_step<T: Scalar>(
    mode: &ControlMode<T>,
    v_mag_filtered: T,
    t: T,
    thresholds: &ModeThresholds,
    ref_gap: T,
) -> Result<(ControlMode<T>, Option<Transition<T>>)> {
    let v_enter = T::lit(thresholds.v_enter);
    let v_exit = T::lit(thresholds.v_exit);
    let next = match mode.kind {
        ModeKind::Normal if v_mag_filtered < v_enter => Some((
            ModeKind::Frt,
            format!("filtered |V| {v_mag_filtered:.4} below {}", thresholds.v_enter),
        )),
        ModeKind::Frt if v_mag_filtered > v_exit => Some((
            ModeKind::Recovery,
            format!("filtered |V| {v_mag_filtered:.4} above {}", thresholds.v_exit),
        )),
        ModeKind::Recovery if v_mag_filtered < v_enter => Some((
            ModeKind::Frt,
            format!("re-fault: filtered |V| {v_mag_filtered:.4} below {}", thresholds.v_enter),
        )),
        ModeKind::Recovery if ref_gap < T::lit(thresholds.recovery_tolerance) => Some((
            ModeKind::Normal,
            format!("reference gap {:.2e} within {}", ref_gap.to_f64_lossy(), thresholds.recovery_tolerance),
        )),
        _ => None,
    };
    match next {
        None => Ok((*mode, None)),
        Some((to, cause)) => {
            let new = mode.transition(to, t)?;
            Ok((
                new,
                Some(Transition {
                    from: mode.kind,
                    to,
                    t,
                    cause,
                }),
            ))
        }
    }
}

/// `frozen + (1 − e^(−dt/τ))·(prefreeze − frozen)`
pub fn recovery_reference<T: Scalar>(ref_frozen: T, ref_prefreeze: T, dt_since_clear: T, tau_rec: T) -> T {
    let w = T::one() - (-dt_since_clear.max(T::zero()) / tau_rec).exp();
    ref_frozen + w * (ref_prefreeze - ref_frozen)
}
