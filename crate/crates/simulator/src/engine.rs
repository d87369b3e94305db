//! Hybrid time loop: controller states, algebraic network, mode machine.
//!
//! Each step runs in a fixed order:
//! 1. integrate the differential states over `[t, t + dt]` with the network
//!    topology and control modes of `t`;
//! 2. apply fault overlays due at `t + dt` and solve the network;
//! 3. resynchronise grid-forming angles in recovery and advance the mode
//!    machines on the filtered voltages;
//! 4. record the sample and detect events.

use std::cell::Cell;

use stvs_core::critmoments::{MomentSamples, MomentTag, Study, Tunings};
use stvs_core::devices::{
    controller_frame, from_controller_frame, frt_mode_step, gfl_lvrt_baseline, gfl_outer_derivatives,
    gfm_droop_derivatives, recovery_reference, resync_tracking, ControlMode, DeviceKind, DroopMeasurements,
    DroopState, GflOuterMeasurements, GflOuterState, LvrtParams, ModeKind, ModeThresholds, PiGains, PllGains,
    ResyncGains, Transition, OMEGA0,
};
use stvs_core::linalg::DenseMatrix;
use stvs_core::netmodel::{FactoredNetwork, FaultSpec};
use stvs_core::scenario::{Integration, Scenario};
use stvs_core::{polar, Phasor, Scalar};

use crate::error::{SimError, SimResult};
use crate::events::{detect_events, EventContext, EventKind, EventLog, StepSample};
use crate::integrate::integrate_step;
use crate::trajectory::Trajectory;

/// Which ride-through controllers the devices run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlScheme {
    /// Virtual-impedance inner loops; presets tracked in FRT mode.
    Proposed,
    /// Conventional comparators: reactive-priority LVRT for grid-following
    /// devices, constant internal voltage for grid-forming ones.
    Baseline,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    pub integration: Integration,
    pub detection_tau: f64,
    pub record_decimation: usize,
    pub resync_tau: f64,
    pub scheme: ControlScheme,
    pub current_limiter: bool,
    pub modes: ModeThresholds,
}

impl SimConfig {
    pub fn from_scenario(sc: &Scenario) -> Self {
        Self {
            dt: sc.sim.dt,
            t_end: sc.t_end(),
            integration: sc.sim.integration,
            detection_tau: sc.sim.detection_tau,
            record_decimation: sc.sim.record_decimation.max(1),
            resync_tau: sc.sim.resync_tau,
            scheme: ControlScheme::Proposed,
            current_limiter: true,
            modes: sc.modes,
        }
    }

    pub fn with_scheme(mut self, scheme: ControlScheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn validate(&self, fault: Option<&FaultSpec>) -> SimResult<()> {
        let bad = |m: String| Err(SimError::Setup(m));
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.detection_tau > 0.0 && self.resync_tau > 0.0 && self.modes.tau_rec > 0.0) {
            return bad("filter and recovery time constants must be positive".into());
        }
        if self.record_decimation == 0 {
            return bad("record_decimation must be at least 1".into());
        }
        if let Some(f) = fault {
            if !(f.t_clear > f.t_fault && f.t_fault >= 0.0) {
                return bad(format!("fault {}: need 0 <= t_fault < t_clear", f.id));
            }
            if !(self.t_end > f.t_clear + 0.5) {
                return bad(format!(
                    "t_end = {} must exceed the clearance of {} ({}) by more than 0.5 s",
                    self.t_end, f.id, f.t_clear
                ));
            }
        } else if !(self.t_end > 0.0) {
            return bad("t_end must be positive".into());
        }
        Ok(())
    }
}

/// Relative slack before the limiter scales a source down.
const LIMIT_SLACK: f64 = 1e-9;
/// Re-solves the limiter may take per network solution.
const LIMITER_PASSES: usize = 8;
/// Excess over `i_max` counted as an overcurrent step in the statistics.
pub const OVERCURRENT_TOL: f64 = 1e-3;

#[derive(Debug, Clone)]
struct GfmCtl<T> {
    m_p: T,
    n_q: T,
    tau_e: T,
    tau_i: T,
    p_sp: T,
    q_sp: T,
    e0: T,
    /// Pre-fault `δ − θ_V`, kept across resynchronisation.
    offset0: T,
}

#[derive(Debug, Clone)]
struct GflCtl<T> {
    outer: PiGains,
    pll: PllGains,
    k_q: T,
    tau_i: T,
    p_sp: T,
    q_sp: T,
}

#[derive(Debug, Clone)]
enum Ctl<T> {
    Gfm(GfmCtl<T>),
    Gfl(GflCtl<T>),
}

// State offsets within a device block.
const GFM_DELTA: usize = 0;
const GFM_E: usize = 1;
const GFM_SRC: usize = 2;
const GFM_LEN: usize = 7;
const GFL_THETA: usize = 0;
const GFL_ZETA: usize = 1;
const GFL_XI: usize = 2;
const GFL_SRC: usize = 4;
const GFL_LEN: usize = 9;

#[derive(Debug, Clone)]
struct Device<T> {
    id: String,
    row: usize,
    i_max: T,
    off: usize,
    ctl: Ctl<T>,
}

impl<T: Scalar> Device<T> {
    fn len(&self) -> usize {
        match self.ctl {
            Ctl::Gfm(_) => GFM_LEN,
            Ctl::Gfl(_) => GFL_LEN,
        }
    }

    fn src(&self) -> usize {
        self.off
            + match self.ctl {
                Ctl::Gfm(_) => GFM_SRC,
                Ctl::Gfl(_) => GFL_SRC,
            }
    }

    /// Filtered `|V|`, `P`, `Q` sit at the end of every block.
    fn filt(&self) -> usize {
        self.off + self.len() - 3
    }
}

/// A factored network plus its response to a unit source at each device.
struct Topology<T> {
    fac: FactoredNetwork<T>,
    shunt: Vec<Phasor<T>>,
    /// `z[k]`: bus voltages for a unit Norton source at device `k`.
    z: Vec<Vec<Phasor<T>>>,
}

impl<T: Scalar> Topology<T> {
    fn new(fac: FactoredNetwork<T>) -> Self {
        let shunt: Vec<Phasor<T>> = fac.system().devices.iter().map(|d| d.shunt).collect();
        let n = shunt.len();
        let z = (0..n)
            .map(|k| {
                let mut unit = vec![Phasor::new(T::zero(), T::zero()); n];
                unit[k] = Phasor::new(T::one(), T::zero());
                fac.solve_sources(&unit).v
            })
            .collect();
        Self { fac, shunt, z }
    }

    /// Extra injections at the saturated devices `set` that make their
    /// output currents equal `target`.
    fn limit_injection(
        &self,
        set: &[usize],
        target: &[Option<Phasor<T>>],
        src: &[Phasor<T>],
        v0: &[Phasor<T>],
        devices: &[Device<T>],
    ) -> SimResult<Vec<Phasor<T>>> {
        // (I - Y_s Z_ss) d = I_target - S_s + Y_s V0_s, split into real rows.
        let m = set.len();
        let mut a = DenseMatrix::zeros(2 * m, 2 * m);
        let mut rhs = vec![T::zero(); 2 * m];
        for (r, &i) in set.iter().enumerate() {
            let row = devices[i].row;
            for (c, &j) in set.iter().enumerate() {
                let eye = if r == c { T::one() } else { T::zero() };
                let e = Phasor::new(eye, T::zero()) - self.shunt[i] * self.z[j][row];
                a[(r, c)] = e.re;
                a[(r, c + m)] = -e.im;
                a[(r + m, c)] = e.im;
                a[(r + m, c + m)] = e.re;
            }
            let b = target[i].expect("saturated device") - src[i] + self.shunt[i] * v0[row];
            rhs[r] = b.re;
            rhs[r + m] = b.im;
        }
        let lu = a.lu().map_err(|e| SimError::Setup(format!("current limiter: {e}")))?;
        let d = lu.solve(&rhs);
        Ok((0..m).map(|r| Phasor::new(d[r], d[r + m])).collect())
    }
}

#[derive(Debug, Clone, Copy)]
struct ModeState<T> {
    mode: ControlMode<T>,
    /// GFM: `(e, δ)` at freeze. GFL: outer-loop `I'_dq` at freeze.
    snap: [T; 2],
    /// Command held when the current mode was entered.
    frozen: Phasor<T>,
    /// GFL: controller-frame command at recovery entry.
    rec_dq: [T; 2],
    /// GFM internal frequency deviation (rad/s).
    omega: T,
}

/// Network solution at one instant.
#[derive(Debug, Clone)]
pub struct AlgebraicState<T> {
    pub v: Vec<Phasor<T>>,
    pub vmag: Vec<T>,
    pub i: Vec<Phasor<T>>,
    pub limited: Vec<bool>,
    pub residual: T,
}

#[derive(Debug, Clone)]
pub struct SimOutput<T> {
    pub trajectory: Trajectory<T>,
    pub events: EventLog,
    /// Bus voltage magnitudes at the three critical-moment steps.
    pub moments: MomentSamples,
    /// Device current magnitudes at the same steps.
    pub moment_currents: [Option<Vec<f64>>; 3],
    pub steps: usize,
    pub max_residual: f64,
    /// Over every step, not only recorded samples.
    pub max_current: Vec<f64>,
    /// Longest run of consecutive steps with `|I| > i_max + OVERCURRENT_TOL`.
    pub longest_overcurrent: Vec<usize>,
    pub limiter_steps: Vec<usize>,
    /// Smallest and largest terminal voltage over every step.
    pub v_term_range: Vec<(f64, f64)>,
}

/// Stepper for one run. Construct with [`Simulation::new`], then call
/// [`Simulation::step`] or [`Simulation::run`].
pub struct Simulation<'a, T: Scalar> {
    study: &'a Study<T>,
    tunings: Tunings<T>,
    presets: Option<Vec<Phasor<T>>>,
    fault: Option<FaultSpec>,
    cfg: SimConfig,
    devices: Vec<Device<T>>,
    pre: Topology<T>,
    faulted: Option<Topology<T>>,
    k_fault: usize,
    k_clear: usize,
    n: usize,
    x: Vec<T>,
    modes: Vec<ModeState<T>>,
    alg: AlgebraicState<T>,
    pcc_angle: Vec<T>,
    max_residual: Cell<f64>,
}

fn step_index(t: f64, dt: f64) -> usize {
    (t / dt - 1e-9).ceil().max(0.0) as usize
}

fn wrap<T: Scalar>(a: T) -> T {
    let two_pi = T::TAU();
    a - two_pi * ((a + T::PI()) / two_pi).floor()
}

impl<'a, T: Scalar> Simulation<'a, T> {
    /// Sets every state to the pre-fault equilibrium of `tunings`.
    pub fn new(
        study: &'a Study<T>,
        tunings: &Tunings<T>,
        presets: Option<&[Phasor<T>]>,
        fault: Option<&FaultSpec>,
        cfg: &SimConfig,
    ) -> SimResult<Self> {
        cfg.validate(fault)?;
        let sc = &study.scenario;
        if cfg.scheme == ControlScheme::Proposed && fault.is_some() {
            match presets {
                Some(p) if p.len() == study.n_dev() => {}
                Some(p) => return Err(SimError::Setup(format!("{} presets for {} devices", p.len(), study.n_dev()))),
                None => return Err(SimError::Setup("the proposed scheme needs presets".into())),
            }
        }
        let sources = study.sources(tunings)?;
        let factor = |f: Option<&FaultSpec>, t: f64| -> SimResult<Topology<T>> {
            let moment = if f.is_some() { MomentTag::Tau1 } else { MomentTag::Tau3 };
            let fac = study.factor_moment(f, tunings, moment).map_err(|source| SimError::Network {
                t,
                context: if f.is_some() { "fault application".into() } else { "pre-fault setup".into() },
                source,
            })?;
            Ok(Topology::new(fac))
        };
        let pre = factor(None, 0.0)?;
        let faulted = fault.map(|f| factor(Some(f), f.t_fault)).transpose()?;

        let mut devices = Vec::with_capacity(study.n_dev());
        let mut x = Vec::new();
        for (k, d) in study.devices.iter().enumerate() {
            let off = x.len();
            let ctl = match d.kind {
                DeviceKind::Gfm => {
                    let g = &sc.gfm[d.k];
                    let e = sources.e0[d.k];
                    x.extend([e.arg(), e.norm(), e.re, e.im, T::zero(), T::zero(), T::zero()]);
                    Ctl::Gfm(GfmCtl {
                        m_p: T::lit(g.m_p),
                        n_q: T::lit(g.n_q),
                        tau_e: T::lit(g.tau_e),
                        tau_i: T::lit(g.i_track_tau),
                        p_sp: T::zero(),
                        q_sp: T::zero(),
                        e0: e.norm(),
                        offset0: T::zero(),
                    })
                }
                DeviceKind::Gfl => {
                    let g = &sc.gfl[d.k];
                    let i = sources.i0[d.k];
                    let th = sources.theta0_pll[d.k];
                    let xi = controller_frame(i, th);
                    x.extend([th, T::zero(), xi[0], xi[1], i.re, i.im, T::zero(), T::zero(), T::zero()]);
                    Ctl::Gfl(GflCtl {
                        outer: g.outer,
                        pll: g.pll,
                        k_q: T::lit(g.k_q),
                        tau_i: T::lit(g.i_track_tau),
                        p_sp: T::zero(),
                        q_sp: T::zero(),
                    })
                }
            };
            devices.push(Device {
                id: d.id.clone(),
                row: study.device_bus[k],
                i_max: T::lit(d.i_max),
                off,
                ctl,
            });
        }
        let n_dev = devices.len();
        let mode0 = ModeState {
            mode: ControlMode::normal(),
            snap: [T::zero(); 2],
            frozen: Phasor::new(T::zero(), T::zero()),
            rec_dq: [T::zero(); 2],
            omega: T::zero(),
        };
        let (k_fault, k_clear) = match fault {
            Some(f) => (step_index(f.t_fault, cfg.dt), step_index(f.t_clear, cfg.dt)),
            None => (usize::MAX, usize::MAX),
        };
        let mut sim = Self {
            study,
            tunings: tunings.clone(),
            presets: presets.map(<[_]>::to_vec),
            fault: fault.cloned(),
            cfg: cfg.clone(),
            devices,
            pre,
            faulted,
            k_fault,
            k_clear,
            n: 0,
            x,
            modes: vec![mode0; n_dev],
            alg: AlgebraicState {
                v: Vec::new(),
                vmag: Vec::new(),
                i: Vec::new(),
                limited: Vec::new(),
                residual: T::zero(),
            },
            pcc_angle: Vec::new(),
            max_residual: Cell::new(0.0),
        };
        // Measurements and setpoints from the initial network solution make
        // every derivative vanish at t = 0.
        let alg = sim.solve(&sim.x, sim.fault_active(0))?;
        for k in 0..n_dev {
            let d = &sim.devices[k];
            let v = alg.v[d.row];
            let s = v * alg.i[k].conj();
            let f = d.filt();
            sim.x[f] = v.norm();
            sim.x[f + 1] = s.re;
            sim.x[f + 2] = s.im;
            let off = d.off;
            match &mut sim.devices[k].ctl {
                Ctl::Gfm(g) => {
                    g.p_sp = s.re;
                    g.q_sp = s.im;
                    g.offset0 = wrap(sim.x[off + GFM_DELTA] - v.arg());
                }
                Ctl::Gfl(g) => {
                    g.p_sp = s.re;
                    g.q_sp = s.im;
                }
            }
        }
        sim.pcc_angle = sim.devices.iter().map(|d| alg.v[d.row].arg()).collect();
        sim.alg = alg;
        Ok(sim)
    }

    pub fn time(&self) -> T {
        self.t_of(self.n)
    }

    fn t_of(&self, n: usize) -> T {
        T::lit(n as f64 * self.cfg.dt)
    }

    pub fn step_count(&self) -> usize {
        self.n
    }

    pub fn states(&self) -> &[T] {
        &self.x
    }

    pub fn algebraic(&self) -> &AlgebraicState<T> {
        &self.alg
    }

    pub fn modes(&self) -> Vec<ModeKind> {
        self.modes.iter().map(|m| m.mode.kind).collect()
    }

    pub fn fault_active(&self, n: usize) -> bool {
        self.fault.is_some() && n >= self.k_fault && n < self.k_clear
    }

    /// Network in force at step `n`, including any fault shunt.
    pub fn network_at_step(&self, n: usize) -> SimResult<stvs_core::netmodel::NetworkModel<T>> {
        let f = if self.fault_active(n) { self.fault.as_ref() } else { None };
        Ok(self.study.network_at(f, MomentTag::Tau1)?)
    }

    pub fn max_residual(&self) -> f64 {
        self.max_residual.get()
    }

    fn internal(&self, x: &[T]) -> Vec<Phasor<T>> {
        self.devices
            .iter()
            .map(|d| Phasor::new(x[d.src()], x[d.src() + 1]))
            .collect()
    }

    /// Network solution for the internal phasors held in `x`, with the
    /// current limiter applied.
    fn solve(&self, x: &[T], faulted: bool) -> SimResult<AlgebraicState<T>> {
        let topo = if faulted { self.faulted.as_ref().expect("faulted factor") } else { &self.pre };
        let src = self.study.norton_sources(&self.tunings, &self.internal(x));
        let sol = topo.fac.solve_sources(&src);
        self.note_residual(sol.residual);
        let n_dev = self.devices.len();
        let mut out = AlgebraicState {
            v: sol.v,
            vmag: sol.vmag,
            i: sol.device_currents,
            limited: vec![false; n_dev],
            residual: sol.residual,
        };
        if !self.cfg.current_limiter {
            return Ok(out);
        }
        // Saturated devices inject a fixed current along the angle of their
        // unsaturated current; the extra injection is found by superposing
        // unit-source responses.
        let v0 = out.v.clone();
        let mut target: Vec<Option<Phasor<T>>> = vec![None; n_dev];
        for _ in 0..LIMITER_PASSES {
            let mut any = false;
            for (k, d) in self.devices.iter().enumerate() {
                let mag = out.i[k].norm();
                if target[k].is_none() && mag > d.i_max * (T::one() + T::lit(LIMIT_SLACK)) {
                    target[k] = Some(out.i[k] * (d.i_max / mag));
                    any = true;
                }
            }
            if !any {
                break;
            }
            let set: Vec<usize> = (0..n_dev).filter(|&k| target[k].is_some()).collect();
            let delta = topo.limit_injection(&set, &target, &src, &v0, &self.devices)?;
            out.v = v0.clone();
            for (&k, dk) in set.iter().zip(&delta) {
                for (v, z) in out.v.iter_mut().zip(&topo.z[k]) {
                    *v += *z * *dk;
                }
            }
            let mut extra = vec![Phasor::new(T::zero(), T::zero()); n_dev];
            for (&k, dk) in set.iter().zip(&delta) {
                extra[k] = *dk;
            }
            for (k, d) in self.devices.iter().enumerate() {
                out.i[k] = src[k] + extra[k] - topo.shunt[k] * out.v[d.row];
            }
            out.vmag = out.v.iter().map(|v| v.norm()).collect();
        }
        for k in 0..n_dev {
            out.limited[k] = target[k].is_some();
        }
        Ok(out)
    }

    fn note_residual(&self, r: T) {
        let r = r.to_f64_lossy();
        let r = if r.is_nan() { f64::INFINITY } else { r };
        if r > self.max_residual.get() {
            self.max_residual.set(r);
        }
    }

    fn gfl_outer_ref(&self, d: &Device<T>, g: &GflCtl<T>, x: &[T]) -> [T; 2] {
        let f = d.filt();
        let kp = T::lit(g.outer.kp);
        [
            x[d.off + GFL_XI] + kp * (g.p_sp - x[f + 1]),
            x[d.off + GFL_XI + 1] + kp * (g.q_sp - x[f + 2]),
        ]
    }

    fn since(&self, k: usize, t: T) -> T {
        t - self.modes[k].mode.since
    }

    /// Internal phasor the inner loop of device `k` is tracking.
    fn command(&self, k: usize, x: &[T], t: T) -> Phasor<T> {
        let d = &self.devices[k];
        let m = &self.modes[k];
        let tau_rec = T::lit(self.cfg.modes.tau_rec);
        match (&d.ctl, m.mode.kind) {
            (Ctl::Gfm(_), ModeKind::Normal) => polar(x[d.off + GFM_E], x[d.off + GFM_DELTA]),
            (Ctl::Gfm(_), ModeKind::Frt) => match (self.cfg.scheme, &self.presets) {
                (ControlScheme::Proposed, Some(p)) => p[k],
                _ => m.frozen,
            },
            (Ctl::Gfm(_), ModeKind::Recovery) => {
                let mag = recovery_reference(m.frozen.norm(), m.snap[0], self.since(k, t), tau_rec);
                polar(mag, x[d.off + GFM_DELTA])
            }
            (Ctl::Gfl(g), ModeKind::Normal) => from_controller_frame(self.gfl_outer_ref(d, g, x), x[d.off + GFL_THETA]),
            (Ctl::Gfl(g), ModeKind::Frt) => match (self.cfg.scheme, &self.presets) {
                (ControlScheme::Proposed, Some(p)) => p[k],
                _ => {
                    let params = LvrtParams {
                        k_q: g.k_q,
                        i_max: d.i_max,
                        i_d_pre: m.snap[0],
                    };
                    let dq = gfl_lvrt_baseline(x[d.filt()], &params);
                    from_controller_frame(dq, x[d.off + GFL_THETA])
                }
            },
            (Ctl::Gfl(_), ModeKind::Recovery) => {
                let s = self.since(k, t);
                let dq = [0, 1].map(|c| recovery_reference(m.rec_dq[c], m.snap[c], s, tau_rec));
                from_controller_frame(dq, x[d.off + GFL_THETA])
            }
        }
    }

    fn derivative(&self, t: T, x: &[T], faulted: bool) -> SimResult<Vec<T>> {
        let alg = self.solve(x, faulted)?;
        let mut dx = vec![T::zero(); x.len()];
        let tau_d = T::lit(self.cfg.detection_tau);
        for (k, d) in self.devices.iter().enumerate() {
            let v = alg.v[d.row];
            let s = v * alg.i[k].conj();
            let f = d.filt();
            dx[f] = (v.norm() - x[f]) / tau_d;
            dx[f + 1] = (s.re - x[f + 1]) / tau_d;
            dx[f + 2] = (s.im - x[f + 2]) / tau_d;
            let mode = self.modes[k].mode.kind;
            let cmd = self.command(k, x, t);
            match &d.ctl {
                Ctl::Gfm(g) => {
                    if mode == ModeKind::Normal {
                        let st = DroopState {
                            delta: x[d.off + GFM_DELTA],
                            e: x[d.off + GFM_E],
                        };
                        let meas = DroopMeasurements {
                            p: x[f + 1],
                            q: x[f + 2],
                            p_sp: g.p_sp,
                            q_sp: g.q_sp,
                            e0: g.e0,
                        };
                        let dd = gfm_droop_derivatives(&st, &meas, T::lit(OMEGA0), g.m_p, g.n_q, g.tau_e);
                        dx[d.off + GFM_DELTA] = dd.d_delta;
                        dx[d.off + GFM_E] = dd.d_e;
                    }
                    let src = d.src();
                    dx[src] = (cmd.re - x[src]) / g.tau_i;
                    dx[src + 1] = (cmd.im - x[src + 1]) / g.tau_i;
                }
                Ctl::Gfl(g) => {
                    let pll_running = match mode {
                        ModeKind::Normal | ModeKind::Recovery => true,
                        ModeKind::Frt => self.cfg.scheme == ControlScheme::Baseline,
                    };
                    let theta = x[d.off + GFL_THETA];
                    let st = GflOuterState {
                        xi_d: x[d.off + GFL_XI],
                        xi_q: x[d.off + GFL_XI + 1],
                        theta,
                        zeta: x[d.off + GFL_ZETA],
                    };
                    let meas = GflOuterMeasurements {
                        p: x[f + 1],
                        q: x[f + 2],
                        p_sp: g.p_sp,
                        q_sp: g.q_sp,
                        v_q: controller_frame(v, theta)[1],
                    };
                    let od = gfl_outer_derivatives(&st, &meas, &g.outer, &g.pll);
                    if pll_running {
                        dx[d.off + GFL_THETA] = od.d_theta;
                        dx[d.off + GFL_ZETA] = od.d_zeta;
                    }
                    if mode == ModeKind::Normal {
                        dx[d.off + GFL_XI] = od.d_xi_d;
                        dx[d.off + GFL_XI + 1] = od.d_xi_q;
                    }
                    let src = d.src();
                    dx[src] = (cmd.re - x[src]) / g.tau_i;
                    dx[src + 1] = (cmd.im - x[src + 1]) / g.tau_i;
                }
            }
        }
        Ok(dx)
    }

    /// Distance between the recovering references and their pre-freeze
    /// values; infinite outside recovery.
    fn ref_gap(&self, k: usize, t: T) -> T {
        let d = &self.devices[k];
        let m = &self.modes[k];
        if m.mode.kind != ModeKind::Recovery {
            return T::infinity();
        }
        match &d.ctl {
            Ctl::Gfm(g) => {
                let mag = recovery_reference(m.frozen.norm(), m.snap[0], self.since(k, t), T::lit(self.cfg.modes.tau_rec));
                let target = self.pcc_angle[k] + g.offset0;
                (mag - m.snap[0]).abs().max(wrap(self.x[d.off + GFM_DELTA] - target).abs())
            }
            Ctl::Gfl(_) => {
                let cmd = self.command(k, &self.x, t);
                let dq = controller_frame(cmd, self.x[d.off + GFL_THETA]);
                (dq[0] - m.snap[0]).abs().max((dq[1] - m.snap[1]).abs())
            }
        }
    }

    fn on_transition(&mut self, k: usize, tr: &Transition<T>, held: Phasor<T>) {
        let d = self.devices[k].clone();
        let x = &mut self.x;
        let m = &mut self.modes[k];
        match (tr.from, tr.to) {
            (ModeKind::Normal, ModeKind::Frt) => {
                m.snap = match &d.ctl {
                    Ctl::Gfm(_) => [x[d.off + GFM_E], x[d.off + GFM_DELTA]],
                    Ctl::Gfl(_) => controller_frame(held, x[d.off + GFL_THETA]),
                };
                m.frozen = held;
            }
            (ModeKind::Frt, ModeKind::Recovery) => {
                m.frozen = held;
                match &d.ctl {
                    Ctl::Gfm(_) => {
                        x[d.off + GFM_DELTA] = held.arg();
                        m.omega = T::zero();
                    }
                    Ctl::Gfl(_) => m.rec_dq = controller_frame(held, x[d.off + GFL_THETA]),
                }
            }
            (ModeKind::Recovery, ModeKind::Frt) => m.frozen = held,
            (ModeKind::Recovery, ModeKind::Normal) => {
                if let Ctl::Gfm(_) = d.ctl {
                    x[d.off + GFM_E] = m.snap[0];
                }
            }
            _ => {}
        }
    }

    fn sample(&self, n: usize) -> StepSample {
        StepSample {
            t: n as f64 * self.cfg.dt,
            fault_active: self.fault_active(n),
            modes: self.modes(),
            i_mag: self.alg.i.iter().map(|i| i.norm().to_f64_lossy()).collect(),
            v_term: self.devices.iter().map(|d| self.alg.vmag[d.row].to_f64_lossy()).collect(),
        }
    }

    /// Advances one step; returns the mode transitions it caused.
    pub fn step(&mut self) -> SimResult<Vec<(usize, Transition<T>)>> {
        let n = self.n;
        let t = self.t_of(n);
        let dt = T::lit(self.cfg.dt);
        let faulted = self.fault_active(n);
        let x0 = self.x.clone();
        let next = integrate_step(self.cfg.integration, t, &x0, dt, None, |tt, xx| self.derivative(tt, xx, faulted))?;
        if let Some(i) = next.iter().position(|v| !v.is_finite()) {
            return Err(SimError::NonFinite {
                t: self.t_of(n + 1).to_f64_lossy(),
                detail: format!("state {i} of {}", next.len()),
                last_good: x0.iter().map(|v| v.to_f64_lossy()).collect(),
            });
        }
        self.x = next;
        self.n = n + 1;
        let t1 = self.t_of(self.n);
        self.alg = self.solve(&self.x, self.fault_active(self.n))?;

        let gains = ResyncGains {
            tau_angle: T::lit(self.cfg.resync_tau),
            tau_freq: T::lit(self.cfg.resync_tau),
        };
        for k in 0..self.devices.len() {
            let d = &self.devices[k];
            let angle = self.alg.v[d.row].arg();
            let freq = wrap(angle - self.pcc_angle[k]) / dt;
            self.pcc_angle[k] = angle;
            if let (Ctl::Gfm(g), ModeKind::Recovery) = (&d.ctl, self.modes[k].mode.kind) {
                let i = d.off + GFM_DELTA;
                let target = angle + g.offset0;
                // Unwrap the target next to δ so the decay takes the short way.
                let target = self.x[i] + wrap(target - self.x[i]);
                let (delta, omega) = resync_tracking(self.x[i], self.modes[k].omega, target, freq, dt, &gains);
                self.x[i] = delta;
                self.modes[k].omega = omega;
            }
        }

        let mut transitions = Vec::new();
        for k in 0..self.devices.len() {
            let gap = self.ref_gap(k, t1);
            let vf = self.x[self.devices[k].filt()];
            let held = self.command(k, &self.x, t1);
            let (mode, tr) = frt_mode_step(&self.modes[k].mode, vf, t1, &self.cfg.modes, gap)?;
            self.modes[k].mode = mode;
            if let Some(tr) = tr {
                self.on_transition(k, &tr, held);
                transitions.push((k, tr));
            }
        }
        Ok(transitions)
    }

    /// Runs to `t_end`, recording every `record_decimation`-th step.
    pub fn run(mut self) -> SimResult<SimOutput<T>> {
        let net_ids = self.study.net.bus_ids().to_vec();
        let n_dev = self.devices.len();
        let mut traj = Trajectory::new(
            net_ids,
            self.devices.iter().map(|d| d.id.clone()).collect(),
            self.devices.iter().map(|d| d.row).collect(),
        );
        let ctx = EventContext {
            devices: traj.device_ids.clone(),
            fault: self.fault.as_ref().map(|f| f.id.clone()),
            i_max: self.devices.iter().map(|d| d.i_max.to_f64_lossy()).collect(),
            v_lvrt: self.study.scenario.limits.v_lvrt_th,
            v_hvrt: self.study.scenario.limits.v_hvrt_th,
        };
        let mut out = SimOutput {
            trajectory: Trajectory::new(Vec::new(), Vec::new(), Vec::new()),
            events: EventLog::default(),
            moments: MomentSamples {
                fault: self.fault.as_ref().map(|f| f.id.clone()).unwrap_or_default(),
                vmag: [None, None, None],
            },
            moment_currents: [None, None, None],
            steps: 0,
            max_residual: 0.0,
            max_current: vec![0.0; n_dev],
            longest_overcurrent: vec![0; n_dev],
            limiter_steps: vec![0; n_dev],
            v_term_range: vec![(f64::INFINITY, f64::NEG_INFINITY); n_dev],
        };
        let mut run = vec![0usize; n_dev];
        let n_steps = (self.cfg.t_end / self.cfg.dt).round() as usize;
        let mut prev = self.sample(0);
        self.observe(0, &mut traj, &mut out, &mut run);
        for _ in 0..n_steps {
            let transitions = self.step()?;
            let n = self.n;
            let curr = self.sample(n);
            for mut e in detect_events(&prev, &curr, &ctx) {
                if e.kind == EventKind::ModeSwitch {
                    if let Some((_, tr)) = transitions.iter().find(|(k, _)| ctx.devices[*k] == e.subject) {
                        e.detail = format!("{}: {}", e.detail, tr.cause);
                    }
                }
                out.events.push(e);
            }
            self.observe(n, &mut traj, &mut out, &mut run);
            prev = curr;
        }
        out.steps = n_steps;
        out.max_residual = self.max_residual();
        out.trajectory = traj;
        Ok(out)
    }

    fn observe(&self, n: usize, traj: &mut Trajectory<T>, out: &mut SimOutput<T>, run: &mut [usize]) {
        let alg = &self.alg;
        for (k, d) in self.devices.iter().enumerate() {
            let mag = alg.i[k].norm().to_f64_lossy();
            out.max_current[k] = out.max_current[k].max(mag);
            if mag > d.i_max.to_f64_lossy() + OVERCURRENT_TOL {
                run[k] += 1;
                out.longest_overcurrent[k] = out.longest_overcurrent[k].max(run[k]);
            } else {
                run[k] = 0;
            }
            if alg.limited[k] {
                out.limiter_steps[k] += 1;
            }
            let v = alg.vmag[d.row].to_f64_lossy();
            let r = &mut out.v_term_range[k];
            *r = (r.0.min(v), r.1.max(v));
        }
        if self.fault.is_some() {
            let slot = if n == self.k_fault {
                Some(MomentTag::Tau1)
            } else if n + 1 == self.k_clear {
                Some(MomentTag::Tau2)
            } else if n == self.k_clear {
                Some(MomentTag::Tau3)
            } else {
                None
            };
            if let Some(m) = slot {
                out.moments.vmag[m.index()] = Some(alg.vmag.iter().map(|v| v.to_f64_lossy()).collect());
                out.moment_currents[m.index()] = Some(alg.i.iter().map(|i| i.norm().to_f64_lossy()).collect());
            }
        }
        if n % self.cfg.record_decimation == 0 {
            let t = self.t_of(n);
            let x = &self.x;
            traj.t.push(t);
            traj.v.push(alg.v.clone());
            traj.vmag.push(alg.vmag.clone());
            traj.i.push(alg.i.clone());
            traj.imag.push(alg.i.iter().map(|i| i.norm()).collect());
            traj.mode.push(self.modes());
            traj.reference.push((0..self.devices.len()).map(|k| self.command(k, x, t)).collect());
            let s: Vec<Phasor<T>> = self
                .devices
                .iter()
                .enumerate()
                .map(|(k, d)| alg.v[d.row] * alg.i[k].conj())
                .collect();
            traj.p.push(s.iter().map(|z| z.re).collect());
            traj.q.push(s.iter().map(|z| z.im).collect());
        }
    }
}

/// Simulates one fault (or none) from the pre-fault equilibrium.
pub fn run_simulation<T: Scalar>(
    study: &Study<T>,
    tunings: &Tunings<T>,
    presets: Option<&[Phasor<T>]>,
    fault: Option<&FaultSpec>,
    cfg: &SimConfig,
) -> SimResult<SimOutput<T>> {
    Simulation::new(study, tunings, presets, fault, cfg)?.run()
}

/// Tunings of the conventional comparators: scenario reactances and no
/// grid-following virtual susceptance.
pub fn baseline_tunings(scenario: &Scenario) -> Tunings<f64> {
    let mut t = Tunings::from_scenario(scenario);
    t.b_gfl.iter_mut().for_each(|b| *b = 0.0);
    t
}
