//! Algebraic evaluation of the three critical moments of a fault.
//!
//! Fast inner loops are treated as instantaneous and slow outer loops as
//! frozen, so each moment is one linear network solve:
//!
//! | moment | network   | internal sources            |
//! |--------|-----------|-----------------------------|
//! | τ1     | faulted   | pre-fault `E⁰`, `I'⁰`       |
//! | τ2     | faulted   | frozen presets              |
//! | τ3     | pre-fault | frozen presets              |

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::devices::{gfl, DeviceKind, SecurityLimits};
use crate::error::{Error, Result};
use crate::netmodel::{aggregate_devices, DeviceInjection, FactoredNetwork, FaultSpec, NetworkModel, NetworkSolution};
use crate::powerflow::{solve_power_flow, Dispatch};
use crate::scalar::{mul_j, Phasor, Scalar};
use crate::scenario::{DeviceRef, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MomentTag {
    #[serde(rename = "tau1")]
    Tau1,
    #[serde(rename = "tau2")]
    Tau2,
    #[serde(rename = "tau3")]
    Tau3,
}

impl MomentTag {
    pub const ALL: [MomentTag; 3] = [MomentTag::Tau1, MomentTag::Tau2, MomentTag::Tau3];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn faulted(self) -> bool {
        !matches!(self, MomentTag::Tau3)
    }

    pub fn uses_presets(self) -> bool {
        !matches!(self, MomentTag::Tau1)
    }
}

impl fmt::Display for MomentTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MomentTag::Tau1 => "tau1",
            MomentTag::Tau2 => "tau2",
            MomentTag::Tau3 => "tau3",
        })
    }
}

/// Virtual reactances of grid-forming devices and virtual susceptances of
/// grid-following devices, each in its own kind's order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tunings<T> {
    pub x_gfm: Vec<T>,
    pub b_gfl: Vec<T>,
}

impl Tunings<f64> {
    /// The values written in the scenario file.
    pub fn from_scenario(scenario: &Scenario) -> Self {
        Self {
            x_gfm: scenario.gfm.iter().map(|g| g.x_virtual).collect(),
            b_gfl: scenario.gfl.iter().map(|g| g.b_virtual).collect(),
        }
    }
}

impl<T: Scalar> Tunings<T> {
    pub fn cast<U: Scalar>(&self) -> Tunings<U> {
        Tunings {
            x_gfm: self.x_gfm.iter().map(|x| U::lit(x.to_f64_lossy())).collect(),
            b_gfl: self.b_gfl.iter().map(|x| U::lit(x.to_f64_lossy())).collect(),
        }
    }
}

/// Pre-fault internal phasors consistent with the dispatch.
#[derive(Debug, Clone, PartialEq)]
pub struct InternalSources<T> {
    pub e0: Vec<Phasor<T>>,
    pub delta0: Vec<T>,
    pub i0: Vec<Phasor<T>>,
    pub theta0_pll: Vec<T>,
}

impl<T: Scalar> InternalSources<T> {
    /// Internal phasors in device order (grid-forming `E⁰`, then `I'⁰`).
    pub fn device_sources(&self) -> Vec<Phasor<T>> {
        self.e0.iter().chain(&self.i0).copied().collect()
    }

    /// Grid-following internal currents in the paper dq frame at `θ⁰_pll`.
    pub fn gfl_dq(&self) -> Vec<[T; 2]> {
        self.i0
            .iter()
            .zip(&self.theta0_pll)
            .map(|(&i, &th)| gfl::paper_dq(i, th))
            .collect()
    }
}

/// `E⁰ = V⁰ + j·x'·I⁰` for grid-forming devices and `I'⁰ = I⁰ − j·b'·V⁰` for
/// grid-following ones.
pub fn backsolve_internal_sources<T: Scalar>(
    dispatch: &Dispatch<T>,
    devices: &[DeviceRef],
    tunings: &Tunings<T>,
) -> Result<InternalSources<T>> {
    if dispatch.device_v.len() != devices.len() || dispatch.device_i.len() != devices.len() {
        return Err(Error::invalid(
            "dispatch",
            format!("{} dispatch entries for {} devices", dispatch.device_v.len(), devices.len()),
        ));
    }
    let mut out = InternalSources {
        e0: Vec::new(),
        delta0: Vec::new(),
        i0: Vec::new(),
        theta0_pll: Vec::new(),
    };
    for (k, d) in devices.iter().enumerate() {
        let (v, i) = (dispatch.device_v[k], dispatch.device_i[k]);
        match d.kind {
            DeviceKind::Gfm => {
                let x = *tunings
                    .x_gfm
                    .get(d.k)
                    .ok_or_else(|| Error::invalid(format!("tunings.gfm[{}]", d.k), "missing virtual reactance"))?;
                let e = v + mul_j(i) * x;
                out.delta0.push(e.arg());
                out.e0.push(e);
            }
            DeviceKind::Gfl => {
                let b = *tunings
                    .b_gfl
                    .get(d.k)
                    .ok_or_else(|| Error::invalid(format!("tunings.gfl[{}]", d.k), "missing virtual susceptance"))?;
                out.i0.push(i - mul_j(v) * b);
                out.theta0_pll.push(v.arg());
            }
        }
    }
    Ok(out)
}

/// Scenario prepared for moment evaluation: pre-fault network and dispatch.
#[derive(Debug, Clone)]
pub struct Study<T> {
    pub scenario: Scenario,
    pub devices: Vec<DeviceRef>,
    pub net: NetworkModel<T>,
    pub dispatch: Dispatch<T>,
    /// Row of each device's bus.
    pub device_bus: Vec<usize>,
    /// Rows of monitored buses.
    pub monitored: Vec<usize>,
}

impl<T: Scalar> Study<T> {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let net = NetworkModel::build(&scenario.buses, &scenario.lines, &scenario.loads)?;
        let dispatch = solve_power_flow(scenario, &net)?;
        let devices = scenario.devices();
        let device_bus = devices
            .iter()
            .map(|d| net.bus_index(d.bus).expect("validated"))
            .collect();
        let monitored = scenario
            .monitored_buses()
            .iter()
            .map(|&b| net.bus_index(b).expect("validated"))
            .collect();
        Ok(Self {
            scenario: scenario.clone(),
            devices,
            net,
            dispatch,
            device_bus,
            monitored,
        })
    }

    pub fn n_dev(&self) -> usize {
        self.devices.len()
    }

    pub fn sources(&self, tunings: &Tunings<T>) -> Result<InternalSources<T>> {
        backsolve_internal_sources(&self.dispatch, &self.devices, tunings)
    }

    /// Network seen at `moment`: faulted for τ1/τ2, pre-fault otherwise.
    pub fn network_at(&self, fault: Option<&FaultSpec>, moment: MomentTag) -> Result<NetworkModel<T>> {
        match fault {
            Some(f) if moment.faulted() => self.net.apply_fault(f),
            _ => Ok(self.net.clone()),
        }
    }

    /// Builds the device Norton terms for the given internal phasors.
    pub fn injections(&self, tunings: &Tunings<T>, sources: &[Phasor<T>]) -> Vec<DeviceInjection<T>> {
        self.devices
            .iter()
            .zip(sources)
            .map(|(d, &s)| match d.kind {
                DeviceKind::Gfm => DeviceInjection::VoltageBehindReactance {
                    bus: d.bus,
                    e: s,
                    x: tunings.x_gfm[d.k],
                },
                DeviceKind::Gfl => DeviceInjection::CurrentWithShunt {
                    bus: d.bus,
                    i_int: s,
                    b: tunings.b_gfl[d.k],
                },
            })
            .collect()
    }

    /// Factors the moment network once so many source vectors can be tried.
    pub fn factor_moment(
        &self,
        fault: Option<&FaultSpec>,
        tunings: &Tunings<T>,
        moment: MomentTag,
    ) -> Result<FactoredNetwork<T>> {
        let net = self.network_at(fault, moment)?;
        let zero = vec![Phasor::new(T::zero(), T::zero()); self.n_dev()];
        aggregate_devices(&net, &self.injections(tunings, &zero))?.factor()
    }

    /// Norton source currents for internal phasors (`E/(jx')` or `I'`).
    pub fn norton_sources(&self, tunings: &Tunings<T>, internal: &[Phasor<T>]) -> Vec<Phasor<T>> {
        self.devices
            .iter()
            .zip(internal)
            .map(|(d, &s)| match d.kind {
                DeviceKind::Gfm => -mul_j(s) / tunings.x_gfm[d.k],
                DeviceKind::Gfl => s,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticalMomentState<T> {
    pub moment: MomentTag,
    pub fault: Option<String>,
    pub v: Vec<Phasor<T>>,
    pub v_mag: Vec<T>,
    pub theta: Vec<T>,
    /// Injected current per device.
    pub i: Vec<Phasor<T>>,
    /// Internal phasors used (`E` or `I'`).
    pub sources: Vec<Phasor<T>>,
    pub residual: T,
}

impl<T: Scalar> CriticalMomentState<T> {
    pub fn from_solution(
        moment: MomentTag,
        fault: Option<&FaultSpec>,
        sol: NetworkSolution<T>,
        sources: Vec<Phasor<T>>,
    ) -> Self {
        Self {
            moment,
            fault: fault.map(|f| f.id.clone()),
            v: sol.v,
            v_mag: sol.vmag,
            theta: sol.theta,
            i: sol.device_currents,
            sources,
            residual: sol.residual,
        }
    }
}

/// Evaluates one critical moment. `presets` are the frozen internal phasors
/// (`E_opt∠δ_opt` or `I_opt`, xy) in device order; τ1 ignores them.
pub fn eval_moment<T: Scalar>(
    study: &Study<T>,
    fault: Option<&FaultSpec>,
    tunings: &Tunings<T>,
    sources: &InternalSources<T>,
    presets: &[Phasor<T>],
    moment: MomentTag,
) -> Result<CriticalMomentState<T>> {
    let internal = if moment.uses_presets() {
        if presets.len() != study.n_dev() {
            return Err(Error::invalid(
                "presets",
                format!("{} presets for {} devices", presets.len(), study.n_dev()),
            ));
        }
        presets.to_vec()
    } else {
        sources.device_sources()
    };
    let factored = study.factor_moment(fault, tunings, moment)?;
    let sol = factored.solve_sources(&study.norton_sources(tunings, &internal));
    Ok(CriticalMomentState::from_solution(moment, fault, sol, internal))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Overcurrent,
    Undervoltage,
    Overvoltage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub fault: Option<String>,
    pub moment: MomentTag,
    pub device: String,
    pub kind: ViolationKind,
    pub value: f64,
    pub limit: f64,
    /// Signed distance to the limit; negative when violated.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SecurityReport {
    pub violations: Vec<Violation>,
    /// Smallest current and voltage margins seen over all states.
    pub min_current_margin: f64,
    pub min_voltage_margin: f64,
}

impl SecurityReport {
    pub fn is_secure(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks `|I|² ≤ i_max²` and `V_lvrt ≤ |V| ≤ V_hvrt` at every device for
/// every state, with absolute slack `tol`.
pub fn check_security<T: Scalar>(
    states: &[CriticalMomentState<T>],
    devices: &[DeviceRef],
    device_bus: &[usize],
    limits: &SecurityLimits,
    tol: f64,
) -> SecurityReport {
    let mut rep = SecurityReport {
        violations: Vec::new(),
        min_current_margin: f64::INFINITY,
        min_voltage_margin: f64::INFINITY,
    };
    for st in states {
        for (k, d) in devices.iter().enumerate() {
            let i2 = st.i[k].norm_sqr().to_f64_lossy();
            let cur_margin = d.i_max * d.i_max - i2;
            rep.min_current_margin = rep.min_current_margin.min(cur_margin);
            if cur_margin < -tol {
                rep.violations.push(Violation {
                    fault: st.fault.clone(),
                    moment: st.moment,
                    device: d.id.clone(),
                    kind: ViolationKind::Overcurrent,
                    value: i2.sqrt(),
                    limit: d.i_max,
                    margin: d.i_max - i2.sqrt(),
                });
            }
            let v = st.v_mag[device_bus[k]].to_f64_lossy();
            let (lo, hi) = (v - limits.v_lvrt_th, limits.v_hvrt_th - v);
            rep.min_voltage_margin = rep.min_voltage_margin.min(lo.min(hi));
            let kind = if lo < -tol {
                Some((ViolationKind::Undervoltage, limits.v_lvrt_th, lo))
            } else if hi < -tol {
                Some((ViolationKind::Overvoltage, limits.v_hvrt_th, hi))
            } else {
                None
            };
            if let Some((kind, limit, margin)) = kind {
                rep.violations.push(Violation {
                    fault: st.fault.clone(),
                    moment: st.moment,
                    device: d.id.clone(),
                    kind,
                    value: v,
                    limit,
                    margin,
                });
            }
        }
    }
    rep
}

/// Simulated bus voltage magnitudes sampled at the three moments of a fault.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MomentSamples {
    pub fault: String,
    pub vmag: [Option<Vec<f64>>; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentErrorRow {
    pub fault: String,
    pub moment: MomentTag,
    pub max: f64,
    pub mean: f64,
    pub per_bus: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentErrorReport {
    pub rows: Vec<MomentErrorRow>,
    /// Max and mean over all faults and buses, indexed by moment.
    pub max: [f64; 3],
    pub mean: [f64; 3],
}

/// Per-bus `||V|_analytic − |V|_sim|` at each moment of each fault.
pub fn moment_error_report<T: Scalar>(
    analytic: &[CriticalMomentState<T>],
    sims: &[MomentSamples],
) -> Result<MomentErrorReport> {
    let mut rows = Vec::new();
    let mut max = [0.0f64; 3];
    let mut sum = [0.0f64; 3];
    let mut count = [0usize; 3];
    for st in analytic {
        let fid = st.fault.clone().unwrap_or_default();
        let m = st.moment.index();
        let samples = sims
            .iter()
            .find(|s| s.fault == fid)
            .and_then(|s| s.vmag[m].as_ref())
            .ok_or_else(|| {
                Error::invalid(
                    format!("trajectory[{fid}]"),
                    format!("no simulated sample for moment {}", st.moment),
                )
            })?;
        if samples.len() != st.v_mag.len() {
            return Err(Error::invalid(
                format!("trajectory[{fid}]"),
                format!("{} bus samples, expected {}", samples.len(), st.v_mag.len()),
            ));
        }
        let per_bus: Vec<f64> = st
            .v_mag
            .iter()
            .zip(samples)
            .map(|(a, s)| (a.to_f64_lossy() - s).abs())
            .collect();
        let row_max = per_bus.iter().copied().fold(0.0, f64::max);
        let row_mean = per_bus.iter().sum::<f64>() / per_bus.len().max(1) as f64;
        max[m] = max[m].max(row_max);
        sum[m] += per_bus.iter().sum::<f64>();
        count[m] += per_bus.len();
        rows.push(MomentErrorRow {
            fault: fid,
            moment: st.moment,
            max: row_max,
            mean: row_mean,
            per_bus,
        });
    }
    let mean = [0, 1, 2].map(|m| if count[m] > 0 { sum[m] / count[m] as f64 } else { 0.0 });
    Ok(MomentErrorReport { rows, max, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::xy;
    use crate::scenario::bundled;
    use num_complex::Complex64;

    fn study() -> Study<f64> {
        Study::new(&Scenario::from_toml_str(bundled::TWO_DEVICE).unwrap()).unwrap()
    }

    #[test]
    fn backsolve_examples() {
        let dispatch = Dispatch {
            v: vec![xy(1.0, 0.0); 2],
            device_v: vec![xy(1.0, 0.0), xy(1.0, 0.0)],
            device_i: vec![xy(0.5, 0.2), xy(1.0, 0.0)],
            device_s: vec![xy(0.0, 0.0); 2],
            iterations: 0,
            mismatch: 0.0,
        };
        let study = study();
        let tun = Tunings {
            x_gfm: vec![1e-12],
            b_gfl: vec![0.5],
        };
        let s = backsolve_internal_sources(&dispatch, &study.devices, &tun).unwrap();
        assert!((s.e0[0] - xy(1.0, 0.0)).norm() < 1e-11);
        assert!((s.i0[0] - xy(1.0, -0.5)).norm() < 1e-15);
        let tun = Tunings {
            x_gfm: vec![0.3],
            b_gfl: vec![0.0],
        };
        let s = backsolve_internal_sources(&dispatch, &study.devices, &tun).unwrap();
        assert_eq!(s.i0[0], xy(1.0, 0.0));

        let short = Dispatch {
            device_v: vec![xy(1.0, 0.0)],
            ..dispatch
        };
        assert!(backsolve_internal_sources(&short, &study.devices, &tun).is_err());
    }

    #[test]
    fn unfaulted_tau1_reproduces_dispatch() {
        let st = study();
        let tun = Tunings {
            x_gfm: vec![0.37],
            b_gfl: vec![1.3],
        };
        let src = st.sources(&tun).unwrap();
        let s = eval_moment(&st, None, &tun, &src, &[], MomentTag::Tau1).unwrap();
        for (a, b) in s.v.iter().zip(&st.dispatch.v) {
            assert!((a - b).norm() < 1e-10);
        }
        for (a, b) in s.i.iter().zip(&st.dispatch.device_i) {
            assert!((a - b).norm() < 1e-10);
        }
        assert!(s.residual <= 1e-10);
    }

    #[test]
    fn single_gfm_fault_divider() {
        let text = r#"
schema_version = 1
name = "div"
[[bus]]
id = 1
[[bus]]
id = 2
monitored = true
[[line]]
from = 1
to = 2
x = 1e-6
[[load]]
bus = 2
p = 1.0
[[gfm]]
id = "G"
bus = 1
x_virtual = 0.1
[[fault]]
id = "F"
bus = 2
x_f = 0.01
t_fault = 0.1
t_clear = 0.2
"#;
        let sc = Scenario::from_toml_str(text).unwrap();
        let st = Study::<f64>::new(&sc).unwrap();
        let tun = Tunings::from_scenario(&sc);
        let mut src = st.sources(&tun).unwrap();
        src.e0[0] = xy(1.0, 0.0);
        let s = eval_moment(&st, Some(&sc.faults[0]), &tun, &src, &[], MomentTag::Tau1).unwrap();
        // divider oracle with Z = 1 ∥ j0.01 and a 1e-6 line
        let z_load = (Complex64::new(1.0, 0.0).inv() + Complex64::new(0.0, 0.01).inv()).inv();
        let z_line = Complex64::new(0.0, 1e-6);
        let v2 = Complex64::new(1.0, 0.0) * z_load / (z_load + z_line + Complex64::new(0.0, 0.1));
        assert!((s.v[1] - v2).norm() < 1e-10);
        assert!((s.v_mag[1] - v2.norm()).abs() < 1e-10);
    }

    #[test]
    fn moments_use_the_right_networks_and_sources() {
        let st = study();
        let sc = &st.scenario;
        let tun = Tunings::from_scenario(sc);
        let src = st.sources(&tun).unwrap();
        let f = &sc.faults[0];
        let presets = src.device_sources();
        let t1 = eval_moment(&st, Some(f), &tun, &src, &presets, MomentTag::Tau1).unwrap();
        let t2 = eval_moment(&st, Some(f), &tun, &src, &presets, MomentTag::Tau2).unwrap();
        let t3 = eval_moment(&st, Some(f), &tun, &src, &presets, MomentTag::Tau3).unwrap();
        // presets equal to pre-fault sources: τ1 ≡ τ2 and τ3 ≡ dispatch
        for k in 0..3 {
            assert!((t1.v[k] - t2.v[k]).norm() < 1e-12);
            assert!((t3.v[k] - st.dispatch.v[k]).norm() < 1e-10);
        }
        assert!(t1.v_mag[2] < 0.7);
        assert_eq!(t2.fault.as_deref(), Some("F1"));
    }

    #[test]
    fn homogeneous_in_sources() {
        let st = study();
        let tun = Tunings::from_scenario(&st.scenario);
        let src = st.sources(&tun).unwrap();
        let k = Complex64::new(0.7, -0.4);
        let base: Vec<_> = src.device_sources();
        let scaled: Vec<_> = base.iter().map(|s| s * k).collect();
        let f = &st.scenario.faults[0];
        let a = eval_moment(&st, Some(f), &tun, &src, &base, MomentTag::Tau2).unwrap();
        let b = eval_moment(&st, Some(f), &tun, &src, &scaled, MomentTag::Tau2).unwrap();
        for (x, y) in a.v.iter().zip(&b.v) {
            assert!((x * k - y).norm() < 1e-12);
        }
        for (x, y) in a.i.iter().zip(&b.i) {
            assert!((x * k - y).norm() < 1e-12);
        }
    }

    fn state(i: f64, v: f64) -> CriticalMomentState<f64> {
        CriticalMomentState {
            moment: MomentTag::Tau2,
            fault: Some("F".into()),
            v: vec![xy(v, 0.0); 3],
            v_mag: vec![v; 3],
            theta: vec![0.0; 3],
            i: vec![xy(0.0, i); 2],
            sources: vec![],
            residual: 0.0,
        }
    }

    #[test]
    fn security_examples() {
        let st = study();
        let lim = SecurityLimits::default();
        let check = |s| check_security(&[s], &st.devices, &st.device_bus, &lim, 0.0);
        assert!(check(state(0.0, 1.0)).is_secure());
        assert!(check(state(1.2, 1.0)).is_secure());
        let r = check(state(1.0, 0.179));
        assert_eq!(r.violations.len(), 2);
        assert!(r.violations.iter().all(|v| v.kind == ViolationKind::Undervoltage));
        assert!((r.violations[0].margin + 0.021).abs() < 1e-12);
        let r = check(state(1.3, 1.0));
        assert!(r.violations.iter().all(|v| v.kind == ViolationKind::Overcurrent));
    }

    #[test]
    fn error_report_examples() {
        let a = vec![state(0.0, 0.5)];
        let own = MomentSamples {
            fault: "F".into(),
            vmag: [None, Some(vec![0.5; 3]), None],
        };
        let r = moment_error_report(&a, &[own]).unwrap();
        assert_eq!(r.max, [0.0; 3]);
        let off = MomentSamples {
            fault: "F".into(),
            vmag: [None, Some(vec![0.501; 3]), None],
        };
        let r = moment_error_report(&a, &[off]).unwrap();
        assert!((r.max[1] - 1e-3).abs() < 1e-12);
        assert!((r.mean[1] - 1e-3).abs() < 1e-12);
        let missing = MomentSamples {
            fault: "F".into(),
            vmag: [Some(vec![0.5; 3]), None, None],
        };
        assert!(moment_error_report(&a, &[missing]).is_err());
    }
}
