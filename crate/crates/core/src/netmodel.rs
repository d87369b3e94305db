//! Nodal admittance model of the grid and the linear phasor network solve.
//!
//! Loads are constant shunt admittances, faults are shunt overlays and
//! inverters enter as Norton equivalents, so every network evaluation is a
//! single real `2n × 2n` linear solve of
//!
//! ```text
//! [ G  -B ] [Vx]   [Ix]
//! [ B   G ] [Vy] = [Iy]
//! ```

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Issue, Result};
use crate::linalg::{DenseMatrix, LuFactors};
use crate::scalar::{xy, Phasor, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: u32,
    #[serde(default)]
    pub base_kv: f64,
    /// Weak-point bus whose voltage deviation enters the tuning objective.
    #[serde(default)]
    pub monitored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: u32,
    pub to: u32,
    #[serde(default)]
    pub r: f64,
    pub x: f64,
    /// Total line-charging susceptance, split equally between both ends.
    #[serde(default)]
    pub b_sh: f64,
}

/// Constant-impedance load, `y = (p - jq) / |V_nom|²` with `|V_nom| = 1`.
///
/// A negative `q` with zero `p` models a fixed capacitor bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadZ {
    pub bus: u32,
    pub p: f64,
    #[serde(default)]
    pub q: f64,
}

impl LoadZ {
    pub fn admittance<T: Scalar>(&self) -> Phasor<T> {
        // |V_nom| = 1.0 p.u.
        xy(T::lit(self.p), T::lit(-self.q))
    }
}

pub const DEFAULT_FAULT_REACTANCE: f64 = 0.01;

fn default_fault_reactance() -> f64 {
    DEFAULT_FAULT_REACTANCE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub id: String,
    pub bus: u32,
    #[serde(default)]
    pub r_f: f64,
    #[serde(default = "default_fault_reactance")]
    pub x_f: f64,
    pub t_fault: f64,
    pub t_clear: f64,
}

impl FaultSpec {
    pub fn admittance<T: Scalar>(&self) -> Result<Phasor<T>> {
        let z = xy(T::lit(self.r_f), T::lit(self.x_f));
        if z.norm_sqr() <= T::zero() {
            return Err(Error::invalid(
                format!("fault[{}]", self.id),
                "r_f = x_f = 0; bolted faults need a small nonzero impedance",
            ));
        }
        Ok(z.inv())
    }

    pub fn validate(&self, path: &str) -> Vec<Issue> {
        let mut out = Vec::new();
        if !(self.t_clear > self.t_fault) {
            out.push(Issue {
                path: format!("{path}.t_clear"),
                message: format!("t_clear ({}) must exceed t_fault ({})", self.t_clear, self.t_fault),
            });
        }
        if self.r_f * self.r_f + self.x_f * self.x_f <= 0.0 {
            out.push(Issue {
                path: format!("{path}.x_f"),
                message: "fault impedance must be nonzero".into(),
            });
        }
        if self.r_f < 0.0 {
            out.push(Issue {
                path: format!("{path}.r_f"),
                message: "fault resistance must be non-negative".into(),
            });
        }
        out
    }
}

/// Passive nodal admittance `Y = G + jB` with its bus indexing.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel<T> {
    g: DenseMatrix<T>,
    b: DenseMatrix<T>,
    bus_ids: Vec<u32>,
    index: BTreeMap<u32, usize>,
}

impl<T: Scalar> NetworkModel<T> {
    /// Builds `Y` from lines and constant-impedance loads.
    pub fn build(buses: &[Bus], lines: &[Line], loads: &[LoadZ]) -> Result<Self> {
        let mut issues = Vec::new();
        let mut index = BTreeMap::new();
        for (k, bus) in buses.iter().enumerate() {
            if index.insert(bus.id, k).is_some() {
                issues.push(Issue {
                    path: format!("buses[{k}].id"),
                    message: format!("duplicate bus id {}", bus.id),
                });
            }
        }
        let n = buses.len();
        let mut net = Self {
            g: DenseMatrix::zeros(n, n),
            b: DenseMatrix::zeros(n, n),
            bus_ids: buses.iter().map(|b| b.id).collect(),
            index,
        };

        for (k, line) in lines.iter().enumerate() {
            let path = format!("lines[{k}]");
            let (Some(i), Some(j)) = (net.index.get(&line.from).copied(), net.index.get(&line.to).copied())
            else {
                issues.push(Issue {
                    path,
                    message: format!("unknown bus id in {} -> {}", line.from, line.to),
                });
                continue;
            };
            if i == j {
                issues.push(Issue {
                    path,
                    message: "line connects a bus to itself".into(),
                });
                continue;
            }
            if line.r * line.r + line.x * line.x <= 0.0 {
                issues.push(Issue {
                    path,
                    message: "zero series impedance".into(),
                });
                continue;
            }
            let y = xy(T::lit(line.r), T::lit(line.x)).inv();
            let half_sh = xy(T::zero(), T::lit(line.b_sh * 0.5));
            net.add(i, i, y + half_sh);
            net.add(j, j, y + half_sh);
            net.add(i, j, -y);
            net.add(j, i, -y);
        }

        for (k, load) in loads.iter().enumerate() {
            match net.index.get(&load.bus) {
                Some(&i) => net.add(i, i, load.admittance()),
                None => issues.push(Issue {
                    path: format!("loads[{k}].bus"),
                    message: format!("unknown bus id {}", load.bus),
                }),
            }
        }

        if issues.is_empty() {
            Ok(net)
        } else {
            Err(Error::Validation(issues))
        }
    }

    #[inline]
    fn add(&mut self, i: usize, j: usize, y: Phasor<T>) {
        self.g[(i, j)] += y.re;
        self.b[(i, j)] += y.im;
    }

    pub fn n_bus(&self) -> usize {
        self.bus_ids.len()
    }

    pub fn bus_ids(&self) -> &[u32] {
        &self.bus_ids
    }

    pub fn bus_index(&self, id: u32) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn require_bus(&self, id: u32, path: &str) -> Result<usize> {
        self.bus_index(id)
            .ok_or_else(|| Error::invalid(path, format!("unknown bus id {id}")))
    }

    pub fn g(&self) -> &DenseMatrix<T> {
        &self.g
    }

    pub fn b(&self) -> &DenseMatrix<T> {
        &self.b
    }

    pub fn admittance(&self, i: usize, j: usize) -> Phasor<T> {
        xy(self.g[(i, j)], self.b[(i, j)])
    }

    /// Returns a copy with an extra shunt admittance at `bus`.
    pub fn with_shunt(&self, bus: u32, y: Phasor<T>) -> Result<Self> {
        let i = self.require_bus(bus, "shunt.bus")?;
        let mut out = self.clone();
        out.add(i, i, y);
        Ok(out)
    }

    /// Returns a copy with the fault shunt `1/(r_f + j x_f)` at the faulted bus.
    pub fn apply_fault(&self, fault: &FaultSpec) -> Result<Self> {
        let y = fault.admittance()?;
        self.require_bus(fault.bus, &format!("fault[{}].bus", fault.id))?;
        self.with_shunt(fault.bus, y)
    }

    /// `I = Y V` for a nodal voltage vector.
    pub fn current(&self, v: &[Phasor<T>]) -> Vec<Phasor<T>> {
        let n = self.n_bus();
        (0..n)
            .map(|i| {
                (0..n).fold(Phasor::new(T::zero(), T::zero()), |acc, j| {
                    acc + self.admittance(i, j) * v[j]
                })
            })
            .collect()
    }
}

/// How one inverter enters the nodal equations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeviceInjection<T> {
    /// Internal voltage `e` behind virtual reactance `x` (grid-forming).
    VoltageBehindReactance { bus: u32, e: Phasor<T>, x: T },
    /// Internal current `i_int` plus the virtual shunt `b` (grid-following),
    /// i.e. `I = I' + j·b·V`.
    CurrentWithShunt { bus: u32, i_int: Phasor<T>, b: T },
    /// Ideal current source (used while a device sits on its current limit).
    Current { bus: u32, i: Phasor<T> },
}

impl<T: Scalar> DeviceInjection<T> {
    pub fn bus(&self) -> u32 {
        match *self {
            DeviceInjection::VoltageBehindReactance { bus, .. }
            | DeviceInjection::CurrentWithShunt { bus, .. }
            | DeviceInjection::Current { bus, .. } => bus,
        }
    }

    /// Norton shunt admittance and source current.
    pub fn norton(&self) -> Result<(Phasor<T>, Phasor<T>)> {
        let zero = Phasor::new(T::zero(), T::zero());
        match *self {
            DeviceInjection::VoltageBehindReactance { bus, e, x } => {
                if !(x > T::zero()) {
                    return Err(Error::invalid(
                        format!("device@{bus}.x_virtual"),
                        "grid-forming virtual reactance must be positive",
                    ));
                }
                // 1/(jx) = -j/x
                let y = xy(T::zero(), -x.recip());
                Ok((y, e * y))
            }
            DeviceInjection::CurrentWithShunt { bus, i_int, b } => {
                if b < T::zero() {
                    return Err(Error::invalid(
                        format!("device@{bus}.b_virtual"),
                        "grid-following virtual susceptance must be non-negative",
                    ));
                }
                Ok((xy(T::zero(), -b), i_int))
            }
            DeviceInjection::Current { i, .. } => Ok((zero, i)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NortonTerm<T> {
    pub bus_index: usize,
    pub shunt: Phasor<T>,
    pub source: Phasor<T>,
}

/// Network plus folded-in device Norton equivalents.
#[derive(Debug, Clone)]
pub struct AugmentedSystem<T> {
    pub g: DenseMatrix<T>,
    pub b: DenseMatrix<T>,
    pub injection: Vec<Phasor<T>>,
    pub devices: Vec<NortonTerm<T>>,
    bus_ids: Vec<u32>,
}

/// Folds device Norton shunts into `Y` and their sources into the injection
/// vector. Devices sharing a bus superpose.
pub fn aggregate_devices<T: Scalar>(
    net: &NetworkModel<T>,
    devices: &[DeviceInjection<T>],
) -> Result<AugmentedSystem<T>> {
    let n = net.n_bus();
    let mut g = net.g.clone();
    let mut b = net.b.clone();
    let mut injection = vec![Phasor::new(T::zero(), T::zero()); n];
    let mut terms = Vec::with_capacity(devices.len());
    for (k, dev) in devices.iter().enumerate() {
        let i = net.require_bus(dev.bus(), &format!("devices[{k}].bus"))?;
        let (shunt, source) = dev.norton()?;
        g[(i, i)] += shunt.re;
        b[(i, i)] += shunt.im;
        injection[i] += source;
        terms.push(NortonTerm {
            bus_index: i,
            shunt,
            source,
        });
    }
    Ok(AugmentedSystem {
        g,
        b,
        injection,
        devices: terms,
        bus_ids: net.bus_ids.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSolution<T> {
    pub v: Vec<Phasor<T>>,
    pub vmag: Vec<T>,
    pub theta: Vec<T>,
    /// Current injected into the grid by each device, in input order.
    pub device_currents: Vec<Phasor<T>>,
    /// `‖I_inj − Y_aug V‖∞`
    pub residual: T,
}

/// LU-factored augmented system, reusable for many source vectors.
#[derive(Debug, Clone)]
pub struct FactoredNetwork<T> {
    lu: LuFactors<T>,
    system: AugmentedSystem<T>,
}

impl<T: Scalar> AugmentedSystem<T> {
    pub fn n_bus(&self) -> usize {
        self.bus_ids.len()
    }

    pub fn bus_ids(&self) -> &[u32] {
        &self.bus_ids
    }

    fn real_matrix(&self) -> DenseMatrix<T> {
        let n = self.n_bus();
        let mut a = DenseMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                let (gv, bv) = (self.g[(i, j)], self.b[(i, j)]);
                a[(i, j)] = gv;
                a[(i, n + j)] = -bv;
                a[(n + i, j)] = bv;
                a[(n + i, n + j)] = gv;
            }
        }
        a
    }

    /// Reports the first connected component with no path to ground.
    fn check_islands(&self) -> Result<()> {
        let n = self.n_bus();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        let mut scale = T::zero();
        for i in 0..n {
            for j in 0..n {
                let mag = self.g[(i, j)].abs() + self.b[(i, j)].abs();
                scale = scale.max(mag);
                if i != j && mag > T::zero() {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    if ri != rj {
                        parent[ri] = rj;
                    }
                }
            }
        }
        let mut ground: BTreeMap<usize, T> = BTreeMap::new();
        let mut first_bus: BTreeMap<usize, usize> = BTreeMap::new();
        for i in 0..n {
            let root = find(&mut parent, i);
            let (mut gs, mut bs) = (T::zero(), T::zero());
            for j in 0..n {
                gs += self.g[(i, j)];
                bs += self.b[(i, j)];
            }
            *ground.entry(root).or_insert(T::zero()) += gs.abs() + bs.abs();
            first_bus.entry(root).or_insert(i);
        }
        let tol = T::tiny() * scale.max(T::one()) * T::lit(n as f64);
        for (root, shunt) in ground {
            if !(shunt > tol) {
                let bus = self.bus_ids[first_bus[&root]];
                return Err(Error::SingularNetwork {
                    bus,
                    detail: "island without any shunt path to ground".into(),
                });
            }
        }
        Ok(())
    }

    pub fn factor(self) -> Result<FactoredNetwork<T>> {
        self.check_islands()?;
        let lu = self.real_matrix().lu().map_err(|e| {
            let bus = self.bus_ids[e.column % self.n_bus().max(1)];
            Error::SingularNetwork {
                bus,
                detail: format!("zero pivot in column {}", e.column),
            }
        })?;
        Ok(FactoredNetwork { lu, system: self })
    }
}

impl<T: Scalar> FactoredNetwork<T> {
    pub fn system(&self) -> &AugmentedSystem<T> {
        &self.system
    }

    /// Solves with the factored matrix and the given per-device Norton
    /// sources (same order as at aggregation).
    pub fn solve_sources(&self, sources: &[Phasor<T>]) -> NetworkSolution<T> {
        let sys = &self.system;
        assert_eq!(sources.len(), sys.devices.len());
        let n = sys.n_bus();
        let mut injection = vec![Phasor::new(T::zero(), T::zero()); n];
        for (term, &s) in sys.devices.iter().zip(sources) {
            injection[term.bus_index] += s;
        }
        self.solve_injection(&injection, sources)
    }

    fn solve_injection(&self, injection: &[Phasor<T>], sources: &[Phasor<T>]) -> NetworkSolution<T> {
        let sys = &self.system;
        let n = sys.n_bus();
        let mut rhs = vec![T::zero(); 2 * n];
        for (i, inj) in injection.iter().enumerate() {
            rhs[i] = inj.re;
            rhs[n + i] = inj.im;
        }
        self.lu.solve_in_place(&mut rhs);
        let v: Vec<Phasor<T>> = (0..n).map(|i| xy(rhs[i], rhs[n + i])).collect();

        let mut residual = T::zero();
        for i in 0..n {
            let mut acc = Phasor::new(T::zero(), T::zero());
            for j in 0..n {
                acc += xy(sys.g[(i, j)], sys.b[(i, j)]) * v[j];
            }
            let r = injection[i] - acc;
            residual = residual.max(r.re.abs()).max(r.im.abs());
        }
        record_residual(residual.to_f64_lossy());

        let device_currents = sys
            .devices
            .iter()
            .zip(sources)
            .map(|(term, &s)| s - term.shunt * v[term.bus_index])
            .collect();
        NetworkSolution {
            vmag: v.iter().map(|z| z.norm()).collect(),
            theta: v.iter().map(|z| z.im.atan2(z.re)).collect(),
            v,
            device_currents,
            residual,
        }
    }
}

/// One-shot factor and solve of an augmented system.
pub fn solve_network<T: Scalar>(system: &AugmentedSystem<T>) -> Result<NetworkSolution<T>> {
    let sources: Vec<Phasor<T>> = system.devices.iter().map(|d| d.source).collect();
    let injection = system.injection.clone();
    let factored = system.clone().factor()?;
    Ok(factored.solve_injection(&injection, &sources))
}

static SOLVE_COUNT: AtomicU64 = AtomicU64::new(0);
static MAX_RESIDUAL_BITS: AtomicU64 = AtomicU64::new(0);

fn record_residual(r: f64) {
    SOLVE_COUNT.fetch_add(1, Ordering::Relaxed);
    let r = if r.is_nan() { f64::INFINITY } else { r };
    let mut cur = MAX_RESIDUAL_BITS.load(Ordering::Relaxed);
    while f64::from_bits(cur) < r {
        match MAX_RESIDUAL_BITS.compare_exchange_weak(cur, r.to_bits(), Ordering::Relaxed, Ordering::Relaxed) {
            Ok(_) => break,
            Err(actual) => cur = actual,
        }
    }
}

/// Process-wide `(solve count, worst residual)` over every network solve.
pub fn residual_stats() -> (u64, f64) {
    (
        SOLVE_COUNT.load(Ordering::Relaxed),
        f64::from_bits(MAX_RESIDUAL_BITS.load(Ordering::Relaxed)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn buses(n: u32) -> Vec<Bus> {
        (1..=n)
            .map(|id| Bus {
                id,
                base_kv: 1.0,
                monitored: id == n,
            })
            .collect()
    }

    fn line(from: u32, to: u32, r: f64, x: f64) -> Line {
        Line {
            from,
            to,
            r,
            x,
            b_sh: 0.0,
        }
    }

    fn fault(bus: u32, r_f: f64, x_f: f64) -> FaultSpec {
        FaultSpec {
            id: "F".into(),
            bus,
            r_f,
            x_f,
            t_fault: 0.1,
            t_clear: 0.3,
        }
    }

    #[test]
    fn empty_network_is_zero() {
        let net = NetworkModel::<f64>::build(&buses(2), &[], &[]).unwrap();
        assert_eq!(net.g().max_abs(), 0.0);
        assert_eq!(net.b().max_abs(), 0.0);
        assert_eq!(net.n_bus(), 2);
    }

    #[test]
    fn single_reactive_line() {
        let net = NetworkModel::<f64>::build(&buses(2), &[line(1, 2, 0.0, 0.1)], &[]).unwrap();
        // oracle: 1/(j0.1)
        let y = Complex64::new(0.0, 0.1).inv();
        assert!((y.im + 10.0).abs() < 1e-12);
        assert!((net.b()[(0, 0)] - y.im).abs() < 1e-12);
        assert!((net.b()[(0, 1)] + y.im).abs() < 1e-12);
        assert!((net.b()[(1, 0)] - 10.0).abs() < 1e-12);
        assert!((net.b()[(1, 1)] + 10.0).abs() < 1e-12);
        assert_eq!(net.g().max_abs(), 0.0);
    }

    #[test]
    fn load_adds_conductance() {
        let load = LoadZ { bus: 2, p: 1.0, q: 0.0 };
        let net = NetworkModel::<f64>::build(&buses(2), &[line(1, 2, 0.0, 0.1)], &[load]).unwrap();
        assert!((net.g()[(1, 1)] - 1.0).abs() < 1e-15);
        assert_eq!(net.g()[(0, 0)], 0.0);
    }

    #[test]
    fn unknown_bus_and_zero_impedance_are_rejected() {
        let err = NetworkModel::<f64>::build(&buses(2), &[line(1, 7, 0.0, 0.1)], &[]).unwrap_err();
        assert!(err.issues()[0].path.starts_with("lines[0]"));
        let err = NetworkModel::<f64>::build(&buses(2), &[line(1, 2, 0.0, 0.0)], &[]).unwrap_err();
        assert!(err.to_string().contains("zero series impedance"));
        let err = NetworkModel::<f64>::build(&buses(2), &[], &[LoadZ { bus: 9, p: 1.0, q: 0.0 }]).unwrap_err();
        assert_eq!(err.issues()[0].path, "loads[0].bus");
    }

    #[test]
    fn fault_overlays() {
        let base = NetworkModel::<f64>::build(&buses(2), &[line(1, 2, 0.0, 0.1)], &[]).unwrap();
        let f = base.apply_fault(&fault(2, 0.0, 0.01)).unwrap();
        assert!((f.b()[(1, 1)] - (base.b()[(1, 1)] - 100.0)).abs() < 1e-9);
        let f = base.apply_fault(&fault(2, 0.01, 0.0)).unwrap();
        assert!((f.g()[(1, 1)] - 100.0).abs() < 1e-9);
        // huge impedance is a no-op
        let f = base.apply_fault(&fault(2, 0.0, 1e15)).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((f.b()[(i, j)] - base.b()[(i, j)]).abs() < 1e-12);
            }
        }
        assert!(base.apply_fault(&fault(2, 0.0, 0.0)).is_err());
        assert!(base.apply_fault(&fault(5, 0.0, 0.1)).is_err());
        // original untouched
        assert!((base.b()[(1, 1)] + 10.0).abs() < 1e-12);
    }

    #[test]
    fn fault_then_remove_restores() {
        let base = NetworkModel::<f64>::build(
            &buses(3),
            &[line(1, 2, 0.02, 0.1), line(2, 3, 0.01, 0.3)],
            &[LoadZ { bus: 3, p: 0.8, q: 0.2 }],
        )
        .unwrap();
        let f = fault(3, 0.003, 0.02);
        let y = f.admittance::<f64>().unwrap();
        let back = base.apply_fault(&f).unwrap().with_shunt(3, -y).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((back.g()[(i, j)] - base.g()[(i, j)]).abs() <= 1e-14);
                assert!((back.b()[(i, j)] - base.b()[(i, j)]).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn gfm_norton_terms() {
        let dev = DeviceInjection::VoltageBehindReactance {
            bus: 1,
            e: xy(1.0, 0.0),
            x: 0.1,
        };
        let (shunt, src): (Phasor<f64>, Phasor<f64>) = dev.norton().unwrap();
        assert!((shunt.im + 10.0).abs() < 1e-12 && shunt.re == 0.0);
        assert!((src.im + 10.0).abs() < 1e-12 && src.re.abs() < 1e-12);
        let bad = DeviceInjection::VoltageBehindReactance {
            bus: 1,
            e: xy(1.0, 0.0),
            x: 0.0,
        };
        let net = NetworkModel::<f64>::build(&buses(1), &[], &[]).unwrap();
        assert!(aggregate_devices(&net, &[bad]).is_err());
    }

    #[test]
    fn gfl_without_shunt_is_pure_source_and_devices_superpose() {
        let net = NetworkModel::<f64>::build(&buses(2), &[line(1, 2, 0.0, 0.1)], &[]).unwrap();
        let a = DeviceInjection::CurrentWithShunt {
            bus: 2,
            i_int: xy(0.5, 0.1),
            b: 0.0,
        };
        let b = DeviceInjection::VoltageBehindReactance {
            bus: 2,
            e: xy(1.0, 0.0),
            x: 0.2,
        };
        let only_a = aggregate_devices(&net, &[a]).unwrap();
        assert_eq!(only_a.b[(1, 1)], net.b()[(1, 1)]);
        let both = aggregate_devices(&net, &[a, b]).unwrap();
        assert!((both.b[(1, 1)] - (net.b()[(1, 1)] - 5.0)).abs() < 1e-12);
        let expect = xy(0.5, 0.1) + xy(1.0, 0.0) / xy(0.0, 0.2);
        assert!((both.injection[1] - expect).norm() < 1e-12);
    }

    #[test]
    fn zero_injection_gives_zero_voltage() {
        let net = NetworkModel::<f64>::build(&buses(2), &[line(1, 2, 0.0, 0.1)], &[LoadZ { bus: 2, p: 1.0, q: 0.0 }])
            .unwrap();
        let dev = DeviceInjection::VoltageBehindReactance {
            bus: 1,
            e: xy(0.0, 0.0),
            x: 0.1,
        };
        let sol = solve_network(&aggregate_devices(&net, &[dev]).unwrap()).unwrap();
        assert!(sol.vmag.iter().all(|&v| v == 0.0));
    }

    fn divider_case(extra_fault: Option<Complex64>) -> (NetworkSolution<f64>, Complex64) {
        let mut net = NetworkModel::<f64>::build(&buses(1), &[], &[LoadZ { bus: 1, p: 1.0, q: 0.0 }]).unwrap();
        let mut z_load = Complex64::new(1.0, 0.0);
        if let Some(yf) = extra_fault {
            net = net.with_shunt(1, yf).unwrap();
            z_load = (z_load.inv() + yf).inv();
        }
        let e = Complex64::new(1.0, 0.0);
        let dev = DeviceInjection::VoltageBehindReactance { bus: 1, e, x: 0.1 };
        let sol = solve_network(&aggregate_devices(&net, &[dev]).unwrap()).unwrap();
        // voltage divider oracle E·Z/(Z + jx)
        let expect = e * z_load / (z_load + Complex64::new(0.0, 0.1));
        (sol, expect)
    }

    #[test]
    fn voltage_divider_oracle() {
        let (sol, expect) = divider_case(None);
        assert!((sol.v[0] - expect).norm() < 1e-12);
        assert!((sol.v[0].re - 0.990099).abs() < 1e-6);
        assert!((sol.v[0].im + 0.099010).abs() < 1e-6);
        assert!((sol.vmag[0] - 0.995037).abs() < 1e-6);
        assert!(sol.residual <= 1e-10);

        let (sol, expect) = divider_case(Some(Complex64::new(0.0, -100.0)));
        assert!((sol.v[0] - expect).norm() < 1e-12);
        assert!(sol.residual <= 1e-10);
    }

    #[test]
    fn islanded_bus_is_named() {
        // bus 2 has only a pure current source and no shunt
        let net = NetworkModel::<f64>::build(&buses(2), &[], &[LoadZ { bus: 1, p: 1.0, q: 0.0 }]).unwrap();
        let dev = DeviceInjection::Current { bus: 2, i: xy(1.0, 0.0) };
        let err = solve_network(&aggregate_devices(&net, &[dev]).unwrap()).unwrap_err();
        match err {
            Error::SingularNetwork { bus, .. } => assert_eq!(bus, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn norton_and_thevenin_agree() {
        let net = NetworkModel::<f64>::build(
            &buses(3),
            &[line(1, 2, 0.01, 0.1), line(2, 3, 0.02, 0.15)],
            &[LoadZ { bus: 3, p: 0.9, q: 0.3 }],
        )
        .unwrap();
        let e = xy(1.03, 0.12);
        let devs = [
            DeviceInjection::VoltageBehindReactance { bus: 1, e, x: 0.17 },
            DeviceInjection::CurrentWithShunt {
                bus: 2,
                i_int: xy(0.4, -0.3),
                b: 2.0,
            },
        ];
        let sol = solve_network(&aggregate_devices(&net, &devs).unwrap()).unwrap();
        let back = e - xy(0.0, 0.17) * sol.device_currents[0];
        assert!((back - sol.v[0]).norm() < 1e-12);
        let gfl = xy(0.4, -0.3) + xy(0.0, 2.0) * sol.v[1];
        assert!((gfl - sol.device_currents[1]).norm() < 1e-12);
    }
}
