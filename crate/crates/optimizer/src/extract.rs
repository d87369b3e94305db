//! Reading tunings and presets back out of a solved program.

use stvs_core::critmoments::{Study, Tunings};
use stvs_core::devices::{gfl, DeviceKind};
use stvs_core::tuning::TuningFile;
use stvs_core::{xy, Phasor, Scalar};

use crate::assemble::{NlpLayout, OptimizationConfig};
use crate::error::{OptError, OptResult};
use crate::ipm::NlpSolution;

/// Below this susceptance the grid-following correction counts as disabled.
pub const B_DISABLED: f64 = 1e-6;

/// `x' = 1/b'`, or `None` when the correction is disabled.
pub fn gfl_reactance(b: f64) -> Option<f64> {
    (b >= B_DISABLED).then(|| b.recip())
}

/// Internal-voltage preset of a grid-forming device in polar form.
pub fn gfm_preset_polar(e: Phasor<f64>) -> (f64, f64) {
    (e.norm(), e.arg())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedTunings {
    pub tunings: Tunings<f64>,
    pub groups: Vec<String>,
    /// Per group, per device (xy).
    pub presets: Vec<Vec<Phasor<f64>>>,
    pub file: TuningFile,
}

impl ExtractedTunings {
    /// Presets applying to contingency `fault` (index into the config).
    pub fn presets_for(&self, config: &OptimizationConfig, fault: usize) -> &[Phasor<f64>] {
        &self.presets[config.group_of(fault)]
    }
}

pub fn extract_tunings<T: Scalar>(
    solution: &NlpSolution<T>,
    study: &Study<T>,
    config: &OptimizationConfig,
    layout: &NlpLayout,
) -> OptResult<ExtractedTunings> {
    if !solution.is_optimal() {
        return Err(OptError::NotOptimal {
            status: solution.status,
            detail: format!(
                "violation {:.3e}, worst constraint {}",
                solution.max_constraint_violation.to_f64_lossy(),
                solution.certificate.as_deref().unwrap_or("n/a")
            ),
        });
    }
    let x: Vec<f64> = solution.x.iter().map(|v| v.to_f64_lossy()).collect();
    let mut tunings = layout.tunings(&x);
    // Interior-point iterates sit a hair inside the bounds.
    for b in &mut tunings.b_gfl {
        *b = b.max(0.0);
    }
    let presets: Vec<Vec<Phasor<f64>>> = (0..layout.groups.len())
        .map(|g| layout.presets(&x, g).into_iter().map(|p| xy(p.re, p.im)).collect())
        .collect();
    let sources = study.sources(&tunings.cast::<T>())?;
    let theta0: Vec<f64> = sources.theta0_pll.iter().map(|t| t.to_f64_lossy()).collect();
    let gfl_count = study.devices.iter().filter(|d| d.kind == DeviceKind::Gfl).count();
    debug_assert_eq!(theta0.len(), gfl_count);
    let file = TuningFile::build_for(
        &study.scenario,
        &tunings,
        config.preset_sharing,
        &layout.groups,
        &presets,
        |k, p| gfl::controller_frame(p, theta0[k]),
    );
    Ok(ExtractedTunings {
        tunings,
        groups: layout.groups.clone(),
        presets,
        file,
    })
}
