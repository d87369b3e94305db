//! Seeded generator of meshed test grids for scaling studies.
//!
//! Devices sit on a meshed transmission core; the remaining buses form radial
//! feeders hanging off the core, each feeder bus carrying a small load.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::devices::{GflDevice, GfmDevice, ModeThresholds, PiGains, PllGains, SecurityLimits};
use crate::netmodel::{Bus, FaultSpec, Line, LoadZ};
use crate::scenario::{OptSettings, Scenario, SimSettings, SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub n_bus: usize,
    pub n_core: usize,
    pub n_gfm: usize,
    pub n_gfl: usize,
    pub n_faults: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// 57 buses, 4 grid-forming and 4 grid-following devices, 3 faults.
    pub fn bus57() -> Self {
        Self {
            n_bus: 57,
            n_core: 12,
            n_gfm: 4,
            n_gfl: 4,
            n_faults: 3,
            seed: 57,
        }
    }
}

pub fn synthetic_grid(spec: &SyntheticSpec) -> Scenario {
    assert!(spec.n_core >= 3 && spec.n_core <= spec.n_bus);
    assert!(spec.n_gfm >= 1 && spec.n_gfm + spec.n_gfl <= spec.n_core);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let core = spec.n_core as u32;
    let n = spec.n_bus as u32;

    let mut lines = Vec::new();
    for i in 1..=core {
        let j = i % core + 1;
        lines.push(Line {
            from: i,
            to: j,
            r: 0.005,
            x: rng.gen_range(0.03..0.06),
            b_sh: 0.02,
        });
    }
    for i in 1..=core / 2 {
        let j = i + core / 2;
        if j <= core && j != i % core + 1 {
            lines.push(Line {
                from: i,
                to: j,
                r: 0.008,
                x: rng.gen_range(0.06..0.1),
                b_sh: 0.02,
            });
        }
    }

    let mut loads = Vec::new();
    let mut attach = 1u32;
    let mut prev = None;
    let mut depth = 0;
    for b in (core + 1)..=n {
        let parent = match prev {
            Some(p) if depth < 4 => p,
            _ => {
                depth = 0;
                let a = attach;
                attach = attach % core + 1;
                a
            }
        };
        lines.push(Line {
            from: parent,
            to: b,
            r: 0.01,
            x: rng.gen_range(0.04..0.08),
            b_sh: 0.0,
        });
        let p = rng.gen_range(0.02..0.05);
        loads.push(LoadZ { bus: b, p, q: 0.3 * p });
        prev = Some(b);
        depth += 1;
    }
    let feeder_load: f64 = loads.iter().map(|l| l.p).sum();
    for i in 1..=core {
        let p = rng.gen_range(0.1..0.2);
        loads.push(LoadZ { bus: i, p, q: 0.3 * p });
    }
    let total: f64 = loads.iter().map(|l| l.p).sum::<f64>().max(feeder_load);

    let n_dev = spec.n_gfm + spec.n_gfl;
    let stride = spec.n_core / n_dev;
    let dev_bus = |k: usize| (k * stride + 1) as u32;
    let share = total / n_dev as f64;
    let gfm = (0..spec.n_gfm)
        .map(|k| GfmDevice {
            id: format!("GFM{}", k + 1),
            bus: dev_bus(2 * k.min(spec.n_gfl) + k.saturating_sub(spec.n_gfl)),
            p_sp: share,
            v_set: 1.03,
            m_p: 0.02,
            n_q: 0.05,
            tau_e: 0.02,
            i_max: 1.2,
            x_virtual: 0.3,
            i_track_tau: 0.002,
        })
        .collect::<Vec<_>>();
    let gfl = (0..spec.n_gfl)
        .map(|k| GflDevice {
            id: format!("GFL{}", k + 1),
            bus: dev_bus(2 * k + 1),
            p_sp: share,
            q_sp: 0.1,
            i_max: 1.2 * (share + 0.3),
            b_virtual: 0.0,
            pll: PllGains::default(),
            outer: PiGains { kp: 0.5, ki: 20.0 },
            i_track_tau: 0.002,
            k_q: 2.0,
        })
        .collect::<Vec<_>>();

    let buses = (1..=n)
        .map(|id| Bus {
            id,
            base_kv: if id <= core { 230.0 } else { 69.0 },
            monitored: id == 2 || id == core / 2 + 1 || id == n,
        })
        .collect();
    let faults = (0..spec.n_faults)
        .map(|k| FaultSpec {
            id: format!("F{}", k + 1),
            bus: (k * spec.n_core / spec.n_faults.max(1) + 2) as u32,
            r_f: 0.0,
            x_f: 0.1,
            t_fault: 0.1,
            t_clear: 0.25,
        })
        .collect();

    Scenario {
        schema_version: SCHEMA_VERSION,
        name: format!("synthetic{}", spec.n_bus),
        limits: SecurityLimits::default(),
        modes: ModeThresholds::default(),
        sim: SimSettings::default(),
        opt: OptSettings::default(),
        buses,
        lines,
        loads,
        gfm,
        gfl,
        faults,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_valid() {
        let a = synthetic_grid(&SyntheticSpec::bus57());
        let b = synthetic_grid(&SyntheticSpec::bus57());
        assert_eq!(a, b);
        a.validate().unwrap();
        assert_eq!(a.buses.len(), 57);
        assert_eq!(a.devices().len(), 8);
        let mut buses: Vec<u32> = a.devices().iter().map(|d| d.bus).collect();
        buses.sort_unstable();
        buses.dedup();
        assert_eq!(buses.len(), 8);
    }
}
