//! The tuning problem as a quadratically constrained program.
//!
//! Linking variables: device tunings (`x'` for grid-forming, `b' = 1/x'` for
//! grid-following), pre-fault internal phasors and the frozen presets. One
//! block per (fault, moment) holds that moment's xy bus voltages, device
//! currents, voltage magnitudes and objective slacks.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stvs_core::critmoments::{eval_moment, MomentTag, Study, Tunings};
use stvs_core::devices::modes::ModeThresholds;
use stvs_core::devices::{DeviceKind, SecurityLimits};
use stvs_core::netmodel::FaultSpec;
use stvs_core::scenario::PresetSharing;
use stvs_core::tuning::SHARED_FAULT;
use stvs_core::{polar, xy, Error, Issue, Phasor, Result, Scalar};

use crate::problem::NlpProblem;
use crate::quad::QuadExpr;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationConfig {
    pub contingencies: Vec<FaultSpec>,
    pub monitored: Vec<u32>,
    /// Objective reference per monitored bus.
    pub v_ref: Vec<f64>,
    pub moment_weights: [f64; 3],
    pub x_min: f64,
    pub x_max: f64,
    pub b_max: f64,
    pub preset_sharing: PresetSharing,
    pub limits: SecurityLimits,
    pub modes: ModeThresholds,
    /// Margin from the mode thresholds at device buses; `None` drops the
    /// mode-consistency bounds.
    pub mode_guard: Option<f64>,
}

impl OptimizationConfig {
    /// Settings from the scenario, with unlisted references set to the
    /// pre-fault voltage.
    pub fn from_study<T: Scalar>(study: &Study<T>) -> Self {
        let sc = &study.scenario;
        let monitored = sc.monitored_buses();
        let v_ref = monitored
            .iter()
            .zip(&study.monitored)
            .map(|(&id, &row)| {
                sc.opt
                    .v_ref
                    .iter()
                    .find(|r| r.bus == id)
                    .map_or_else(|| study.dispatch.v[row].norm().to_f64_lossy(), |r| r.v)
            })
            .collect();
        Self {
            contingencies: sc.faults.clone(),
            monitored,
            v_ref,
            moment_weights: sc.opt.moment_weights,
            x_min: sc.opt.x_min,
            x_max: sc.opt.x_max,
            b_max: sc.opt.b_max,
            preset_sharing: sc.opt.preset_sharing,
            limits: sc.limits.clone(),
            modes: sc.modes.clone(),
            mode_guard: (sc.opt.mode_guard >= 0.0).then_some(sc.opt.mode_guard),
        }
    }

    /// Keeps only the named contingencies, in the given order.
    pub fn with_faults(mut self, ids: &[&str]) -> Result<Self> {
        let mut out = Vec::new();
        for id in ids {
            let f = self
                .contingencies
                .iter()
                .find(|f| f.id == *id)
                .ok_or_else(|| Error::invalid("contingencies", format!("unknown fault {id}")))?;
            out.push(f.clone());
        }
        self.contingencies = out;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();
        let mut bad = |path: &str, message: String| issues.push(Issue { path: path.into(), message });
        if self.contingencies.is_empty() {
            bad("contingencies", "contingency set is empty".into());
        }
        if self.monitored.is_empty() {
            bad("monitored_buses", "no monitored bus".into());
        }
        if self.v_ref.len() != self.monitored.len() {
            bad("v_ref", format!("{} references for {} monitored buses", self.v_ref.len(), self.monitored.len()));
        }
        if self.moment_weights.iter().any(|w| !(*w >= 0.0)) || self.moment_weights.iter().all(|w| *w == 0.0) {
            bad("moment_weights", "weights must be non-negative and not all zero".into());
        }
        if !(self.x_min > 0.0 && self.x_min < self.x_max) {
            bad("x_min", format!("need 0 < x_min < x_max, got [{}, {}]", self.x_min, self.x_max));
        }
        if !(self.b_max > 0.0) {
            bad("b_max", format!("b_max must be positive, got {}", self.b_max));
        }
        if let Some(g) = self.mode_guard {
            if !(g >= 0.0) {
                bad("mode_guard", "guard must be non-negative".into());
            }
        }
        for (k, f) in self.contingencies.iter().enumerate() {
            issues.extend(f.validate(&format!("contingencies[{k}]")));
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(issues))
        }
    }

    /// Preset group names: fault ids, or the single shared group.
    pub fn groups(&self) -> Vec<String> {
        match self.preset_sharing {
            PresetSharing::PerFault => self.contingencies.iter().map(|f| f.id.clone()).collect(),
            PresetSharing::Shared => vec![SHARED_FAULT.to_string()],
        }
    }

    pub fn group_of(&self, fault: usize) -> usize {
        match self.preset_sharing {
            PresetSharing::PerFault => fault,
            PresetSharing::Shared => 0,
        }
    }

    pub fn mid_tunings<T: Scalar>(&self, study: &Study<T>) -> Tunings<T> {
        Tunings {
            x_gfm: vec![T::lit(0.5 * (self.x_min + self.x_max)); study.scenario.gfm.len()],
            b_gfl: vec![T::lit(0.5 * self.b_max); study.scenario.gfl.len()],
        }
    }

    /// Device-bus voltage window at `moment`: ride-through limits, narrowed
    /// so that every device is in the mode the moment assumes.
    pub fn device_voltage_window(&self, moment: MomentTag) -> (f64, f64) {
        let (mut lo, mut hi) = (self.limits.v_lvrt_th, self.limits.v_hvrt_th);
        if let Some(g) = self.mode_guard {
            match moment {
                MomentTag::Tau1 => hi = hi.min(self.modes.v_enter - g),
                MomentTag::Tau2 => hi = hi.min(self.modes.v_exit - g),
                MomentTag::Tau3 => lo = lo.max(self.modes.v_exit + g),
            }
        }
        (lo, hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentBlock {
    pub fault: usize,
    pub moment: MomentTag,
    pub vars: Range<usize>,
    /// `[x, y]` voltage variables per bus row.
    pub v: Vec<[usize; 2]>,
    /// `[x, y]` current variables per device.
    pub i: Vec<[usize; 2]>,
    /// `(bus row, variable)` magnitude pairs.
    pub mag: Vec<(usize, usize)>,
    /// `(monitored position, variable)` epigraph slacks.
    pub slack: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NlpLayout {
    pub x_gfm: Vec<usize>,
    pub b_gfl: Vec<usize>,
    /// Pre-fault internal phasor per device.
    pub source0: Vec<[usize; 2]>,
    pub groups: Vec<String>,
    /// Frozen preset per group, per device.
    pub presets: Vec<Vec<[usize; 2]>>,
    pub blocks: Vec<MomentBlock>,
    pub monitored_rows: Vec<usize>,
}

impl NlpLayout {
    pub fn block(&self, fault: usize, moment: MomentTag) -> &MomentBlock {
        &self.blocks[3 * fault + moment.index()]
    }

    pub fn tunings<T: Scalar>(&self, x: &[T]) -> Tunings<T> {
        Tunings {
            x_gfm: self.x_gfm.iter().map(|&k| x[k]).collect(),
            b_gfl: self.b_gfl.iter().map(|&k| x[k]).collect(),
        }
    }

    pub fn phasor<T: Scalar>(x: &[T], idx: [usize; 2]) -> Phasor<T> {
        xy(x[idx[0]], x[idx[1]])
    }

    pub fn presets<T: Scalar>(&self, x: &[T], group: usize) -> Vec<Phasor<T>> {
        self.presets[group].iter().map(|&p| Self::phasor(x, p)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssembledNlp<T> {
    pub problem: NlpProblem<T>,
    pub layout: NlpLayout,
}

/// Variable and constraint counts of the assembled program.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tally {
    pub vars: usize,
    pub eq: usize,
    pub ineq: usize,
}

/// Closed-form counts. `n_mag` is the number of buses that are monitored or
/// host a device; `n_weighted` the number of moments with nonzero weight.
pub fn tally(
    n_bus: usize,
    n_gfm: usize,
    n_gfl: usize,
    n_mon: usize,
    n_mag: usize,
    n_faults: usize,
    n_groups: usize,
    n_weighted: usize,
) -> Tally {
    let n_dev = n_gfm + n_gfl;
    let per_moment = 2 * n_bus + 2 * n_dev + n_mag;
    Tally {
        vars: n_dev + 2 * n_dev + 2 * n_dev * n_groups + n_faults * (3 * per_moment + n_weighted * n_mon),
        eq: 2 * n_dev + 3 * n_faults * per_moment,
        ineq: n_faults * (3 * n_dev + 2 * n_weighted * n_mon),
    }
}

/// Builds the program and its default start (moments evaluated at mid-bound
/// tunings with presets equal to the pre-fault sources).
pub fn assemble_nlp<T: Scalar>(study: &Study<T>, config: &OptimizationConfig) -> Result<AssembledNlp<T>> {
    config.validate()?;
    let net = &study.net;
    let n_bus = net.n_bus();
    let n_dev = study.n_dev();
    if study.dispatch.device_v.len() != n_dev {
        return Err(Error::invalid("dispatch", "device bus without dispatch"));
    }
    let mut monitored_rows = Vec::new();
    for (k, &id) in config.monitored.iter().enumerate() {
        monitored_rows.push(net.require_bus(id, &format!("monitored_buses[{k}]"))?);
    }
    for f in &config.contingencies {
        net.require_bus(f.bus, &format!("fault[{}].bus", f.id))?;
    }
    let mut mag_rows: Vec<usize> = monitored_rows.iter().chain(&study.device_bus).copied().collect();
    mag_rows.sort_unstable();
    mag_rows.dedup();

    let lit = |v: f64| T::lit(v);
    let inf = T::infinity();
    let groups = config.groups();
    let devices = &study.devices;
    let label = |d: usize| devices[d].id.as_str();

    let mut n_global = 0;
    let mut p = NlpProblem::new(0);
    let mut x_gfm = Vec::new();
    let mut b_gfl = Vec::new();
    for d in devices {
        match d.kind {
            DeviceKind::Gfm => x_gfm.push(p.add_var(format!("x[{}]", d.id), lit(config.x_min), lit(config.x_max), T::zero())),
            DeviceKind::Gfl => b_gfl.push(p.add_var(format!("b[{}]", d.id), T::zero(), lit(config.b_max), T::zero())),
        }
    }
    let source0: Vec<[usize; 2]> = (0..n_dev)
        .map(|d| {
            [
                p.add_var(format!("src0x[{}]", label(d)), -inf, inf, T::zero()),
                p.add_var(format!("src0y[{}]", label(d)), -inf, inf, T::zero()),
            ]
        })
        .collect();
    let presets: Vec<Vec<[usize; 2]>> = groups
        .iter()
        .map(|g| {
            (0..n_dev)
                .map(|d| {
                    [
                        p.add_var(format!("preset_x[{g}/{}]", label(d)), -inf, inf, T::zero()),
                        p.add_var(format!("preset_y[{g}/{}]", label(d)), -inf, inf, T::zero()),
                    ]
                })
                .collect()
        })
        .collect();
    n_global += p.n();
    p.n_global = n_global;

    // Steady-state consistency with the dispatch.
    for (d, dev) in devices.iter().enumerate() {
        let (v0, i0) = (study.dispatch.device_v[d], study.dispatch.device_i[d]);
        let [sx, sy] = source0[d];
        match dev.kind {
            DeviceKind::Gfm => {
                let x = x_gfm[dev.k];
                // E⁰ = V⁰ + j x' I⁰
                p.add_eq(format!("steady_x[{}]", dev.id), QuadExpr::new().lin(sx, T::one()).lin(x, i0.im).with_constant(-v0.re));
                p.add_eq(format!("steady_y[{}]", dev.id), QuadExpr::new().lin(sy, T::one()).lin(x, -i0.re).with_constant(-v0.im));
            }
            DeviceKind::Gfl => {
                let b = b_gfl[dev.k];
                // I'⁰ = I⁰ − j b' V⁰
                p.add_eq(format!("steady_x[{}]", dev.id), QuadExpr::new().lin(sx, T::one()).lin(b, -v0.im).with_constant(-i0.re));
                p.add_eq(format!("steady_y[{}]", dev.id), QuadExpr::new().lin(sy, T::one()).lin(b, v0.re).with_constant(-i0.im));
            }
        }
    }

    let mut blocks = Vec::new();
    for (fi, fault) in config.contingencies.iter().enumerate() {
        let y = study.net.apply_fault(fault)?;
        for moment in MomentTag::ALL {
            let tag = format!("{}/{}", fault.id, moment);
            let yn = if moment.faulted() { &y } else { &study.net };
            let start = p.n();
            let v: Vec<[usize; 2]> = (0..n_bus)
                .map(|r| {
                    let id = net.bus_ids()[r];
                    [
                        p.add_var(format!("{tag}/Vx[{id}]"), -inf, inf, T::zero()),
                        p.add_var(format!("{tag}/Vy[{id}]"), -inf, inf, T::zero()),
                    ]
                })
                .collect();
            let i: Vec<[usize; 2]> = (0..n_dev)
                .map(|d| {
                    [
                        p.add_var(format!("{tag}/Ix[{}]", label(d)), -inf, inf, T::zero()),
                        p.add_var(format!("{tag}/Iy[{}]", label(d)), -inf, inf, T::zero()),
                    ]
                })
                .collect();
            let (dlo, dhi) = config.device_voltage_window(moment);
            let mag: Vec<(usize, usize)> = mag_rows
                .iter()
                .map(|&r| {
                    let (lo, hi) = if study.device_bus.contains(&r) { (lit(dlo), lit(dhi)) } else { (T::zero(), inf) };
                    (r, p.add_var(format!("{tag}/V[{}]", net.bus_ids()[r]), lo, hi, T::zero()))
                })
                .collect();
            let w = config.moment_weights[moment.index()];
            let slack: Vec<(usize, usize)> = if w > 0.0 {
                config
                    .monitored
                    .iter()
                    .enumerate()
                    .map(|(k, id)| (k, p.add_var(format!("{tag}/t[{id}]"), T::zero(), inf, T::zero())))
                    .collect()
            } else {
                Vec::new()
            };
            let block = MomentBlock { fault: fi, moment, vars: start..p.n(), v, i, mag, slack };

            let src = if moment.uses_presets() { &presets[config.group_of(fi)] } else { &source0 };
            for (d, dev) in devices.iter().enumerate() {
                let [vx, vy] = block.v[study.device_bus[d]];
                let [ix, iy] = block.i[d];
                let [sx, sy] = src[d];
                match dev.kind {
                    DeviceKind::Gfm => {
                        let x = x_gfm[dev.k];
                        // V = E − j x' I
                        p.add_eq(
                            format!("{tag}/law_x[{}]", dev.id),
                            QuadExpr::new().lin(vx, T::one()).lin(sx, -T::one()).bilin(x, iy, -T::one()),
                        );
                        p.add_eq(
                            format!("{tag}/law_y[{}]", dev.id),
                            QuadExpr::new().lin(vy, T::one()).lin(sy, -T::one()).bilin(x, ix, T::one()),
                        );
                    }
                    DeviceKind::Gfl => {
                        let b = b_gfl[dev.k];
                        // I = I' + j b' V
                        p.add_eq(
                            format!("{tag}/law_x[{}]", dev.id),
                            QuadExpr::new().lin(ix, T::one()).lin(sx, -T::one()).bilin(b, vy, T::one()),
                        );
                        p.add_eq(
                            format!("{tag}/law_y[{}]", dev.id),
                            QuadExpr::new().lin(iy, T::one()).lin(sy, -T::one()).bilin(b, vx, -T::one()),
                        );
                    }
                }
                let i_max = lit(dev.i_max);
                p.add_ineq(
                    format!("{tag}/current[{}]", dev.id),
                    QuadExpr::new().bilin(ix, ix, T::one()).bilin(iy, iy, T::one()).with_constant(-i_max * i_max),
                );
            }
            // Y V = Σ device currents
            for r in 0..n_bus {
                let mut ex = QuadExpr::new();
                let mut ey = QuadExpr::new();
                for c in 0..n_bus {
                    let (g, b) = (yn.g()[(r, c)], yn.b()[(r, c)]);
                    let [vx, vy] = block.v[c];
                    ex.add_lin(vx, g);
                    ex.add_lin(vy, -b);
                    ey.add_lin(vx, b);
                    ey.add_lin(vy, g);
                }
                for d in (0..n_dev).filter(|&d| study.device_bus[d] == r) {
                    ex.add_lin(block.i[d][0], -T::one());
                    ey.add_lin(block.i[d][1], -T::one());
                }
                let id = net.bus_ids()[r];
                p.add_eq(format!("{tag}/balance_x[{id}]"), ex);
                p.add_eq(format!("{tag}/balance_y[{id}]"), ey);
            }
            for &(r, m) in &block.mag {
                let [vx, vy] = block.v[r];
                p.add_eq(
                    format!("{tag}/magnitude[{}]", net.bus_ids()[r]),
                    QuadExpr::new().bilin(m, m, T::one()).bilin(vx, vx, -T::one()).bilin(vy, vy, -T::one()),
                );
            }
            for &(k, t) in &block.slack {
                let m = block.mag.iter().find(|e| e.0 == monitored_rows[k]).expect("monitored bus has magnitude").1;
                let v_ref = lit(config.v_ref[k]);
                let id = config.monitored[k];
                p.add_ineq(format!("{tag}/dev_lo[{id}]"), QuadExpr::new().lin(m, -T::one()).lin(t, -T::one()).with_constant(v_ref));
                p.add_ineq(format!("{tag}/dev_hi[{id}]"), QuadExpr::new().lin(m, T::one()).lin(t, -T::one()).with_constant(-v_ref));
                p.objective.add_lin(t, lit(w));
            }
            p.blocks.push(block.vars.clone());
            blocks.push(block);
        }
    }

    let layout = NlpLayout { x_gfm, b_gfl, source0, groups, presets, blocks, monitored_rows };
    p.check_structure().map_err(|m| Error::invalid("nlp", m))?;
    let mut out = AssembledNlp { problem: p, layout };
    out.problem.x0 = start_point(study, config, &out.layout, Start::MidBound)?;
    Ok(out)
}

/// Starting points for the local solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Start {
    /// Mid-bound tunings, presets at the pre-fault sources, moments solved.
    MidBound,
    /// Scenario tunings clipped to the bounds, otherwise as `MidBound`.
    PreFault,
    /// Mid-bound tunings, unit voltages, zero currents.
    Flat,
    /// Random tunings and perturbed presets, moments solved.
    Random(u64),
}

/// Fills every variable for the given tunings and presets, solving each
/// moment's network.
pub fn point_from<T: Scalar>(
    study: &Study<T>,
    config: &OptimizationConfig,
    layout: &NlpLayout,
    tunings: &Tunings<T>,
    presets: &[Vec<Phasor<T>>],
) -> Result<Vec<T>> {
    let n = layout.blocks.last().map_or(0, |b| b.vars.end);
    let mut x = vec![T::zero(); n];
    for (k, &v) in layout.x_gfm.iter().enumerate() {
        x[v] = tunings.x_gfm[k];
    }
    for (k, &v) in layout.b_gfl.iter().enumerate() {
        x[v] = tunings.b_gfl[k];
    }
    let sources = study.sources(tunings)?;
    let set = |x: &mut Vec<T>, idx: [usize; 2], p: Phasor<T>| {
        x[idx[0]] = p.re;
        x[idx[1]] = p.im;
    };
    for (d, s) in sources.device_sources().into_iter().enumerate() {
        set(&mut x, layout.source0[d], s);
    }
    for (g, pre) in presets.iter().enumerate() {
        for (d, &s) in pre.iter().enumerate() {
            set(&mut x, layout.presets[g][d], s);
        }
    }
    for b in &layout.blocks {
        let fault = &config.contingencies[b.fault];
        let st = eval_moment(study, Some(fault), tunings, &sources, &presets[config.group_of(b.fault)], b.moment)?;
        for (r, &idx) in b.v.iter().enumerate() {
            set(&mut x, idx, st.v[r]);
        }
        for (d, &idx) in b.i.iter().enumerate() {
            set(&mut x, idx, st.i[d]);
        }
        fill_derived(config, layout, b, &mut x);
    }
    Ok(x)
}

fn fill_derived<T: Scalar>(config: &OptimizationConfig, layout: &NlpLayout, b: &MomentBlock, x: &mut [T]) {
    for &(r, m) in &b.mag {
        x[m] = NlpLayout::phasor(x, b.v[r]).norm();
    }
    for &(k, t) in &b.slack {
        let row = layout.monitored_rows[k];
        let m = b.mag.iter().find(|e| e.0 == row).expect("monitored magnitude").1;
        x[t] = (T::lit(config.v_ref[k]) - x[m]).abs();
    }
}

pub fn start_point<T: Scalar>(
    study: &Study<T>,
    config: &OptimizationConfig,
    layout: &NlpLayout,
    start: Start,
) -> Result<Vec<T>> {
    let clip = |v: T, lo: f64, hi: f64| v.max(T::lit(lo)).min(T::lit(hi));
    let mid = config.mid_tunings(study);
    let prefault_presets = |t: &Tunings<T>| -> Result<Vec<Vec<Phasor<T>>>> {
        let s = study.sources(t)?.device_sources();
        Ok(vec![s; layout.groups.len()])
    };
    match start {
        Start::MidBound => point_from(study, config, layout, &mid, &prefault_presets(&mid)?),
        Start::PreFault => {
            let sc = Tunings::from_scenario(&study.scenario).cast::<T>();
            let t = Tunings {
                x_gfm: sc.x_gfm.iter().map(|&v| clip(v, config.x_min, config.x_max)).collect(),
                b_gfl: sc.b_gfl.iter().map(|&v| clip(v, 0.0, config.b_max)).collect(),
            };
            point_from(study, config, layout, &t, &prefault_presets(&t)?)
        }
        Start::Flat => {
            let pre = prefault_presets(&mid)?;
            let mut x = point_from(study, config, layout, &mid, &pre)?;
            let unit = polar(T::one(), T::zero());
            for g in &layout.presets {
                for (d, idx) in g.iter().enumerate() {
                    let s = match study.devices[d].kind {
                        DeviceKind::Gfm => unit,
                        DeviceKind::Gfl => Phasor::new(T::zero(), T::zero()),
                    };
                    x[idx[0]] = s.re;
                    x[idx[1]] = s.im;
                }
            }
            for b in &layout.blocks {
                for idx in &b.v {
                    x[idx[0]] = T::one();
                    x[idx[1]] = T::zero();
                }
                for idx in &b.i {
                    x[idx[0]] = T::zero();
                    x[idx[1]] = T::zero();
                }
                fill_derived(config, layout, b, &mut x);
            }
            Ok(x)
        }
        Start::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = Tunings {
                x_gfm: mid.x_gfm.iter().map(|_| T::lit(rng.gen_range(config.x_min..config.x_max))).collect(),
                // The ride-through currents cap useful susceptances well
                // below b_max, so sample the lower part of the range.
                b_gfl: mid.b_gfl.iter().map(|_| T::lit(rng.gen_range(0.0..config.b_max * 0.25))).collect(),
            };
            let base = study.sources(&t)?.device_sources();
            let presets: Vec<Vec<Phasor<T>>> = (0..layout.groups.len())
                .map(|_| {
                    base.iter()
                        .map(|&s| {
                            let scale = T::lit(rng.gen_range(0.7..1.1));
                            let turn = polar(T::one(), T::lit(rng.gen_range(-0.3..0.3)));
                            s * turn * scale
                        })
                        .collect()
                })
                .collect();
            point_from(study, config, layout, &t, &presets)
        }
    }
}
