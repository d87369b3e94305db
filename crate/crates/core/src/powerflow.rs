//! Pre-fault AC power flow (Newton–Raphson, polar form).
//!
//! Loads are already part of `Y`, so only device injections are specified.
//! The first grid-forming device's bus is the slack, other grid-forming buses
//! are PV and everything else is PQ.

use crate::devices::DeviceKind;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::netmodel::NetworkModel;
use crate::scalar::{polar, Phasor, Scalar};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BusType {
    Slack,
    Pv,
    Pq,
}

/// Converged pre-fault operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct Dispatch<T> {
    pub v: Vec<Phasor<T>>,
    /// Per device, in [`Scenario::devices`] order.
    pub device_v: Vec<Phasor<T>>,
    pub device_i: Vec<Phasor<T>>,
    pub device_s: Vec<Phasor<T>>,
    pub iterations: usize,
    pub mismatch: T,
}

pub const MAX_ITER: usize = 30;

/// Solves the pre-fault power flow of `scenario` on `net`.
pub fn solve_power_flow<T: Scalar>(scenario: &Scenario, net: &NetworkModel<T>) -> Result<Dispatch<T>> {
    let n = net.n_bus();
    let devices = scenario.devices();
    let mut kind = vec![BusType::Pq; n];
    let mut v_mag = vec![T::one(); n];
    let mut p_sp = vec![T::zero(); n];
    let mut q_sp = vec![T::zero(); n];
    let mut gfm_count = vec![0usize; n];

    let slack_bus = scenario.gfm.first().map(|g| g.bus);
    for g in &scenario.gfm {
        let i = net.require_bus(g.bus, "gfm.bus")?;
        kind[i] = if Some(g.bus) == slack_bus { BusType::Slack } else { BusType::Pv };
        v_mag[i] = T::lit(g.v_set);
        p_sp[i] += T::lit(g.p_sp);
        gfm_count[i] += 1;
    }
    for d in &scenario.gfl {
        let i = net.require_bus(d.bus, "gfl.bus")?;
        p_sp[i] += T::lit(d.p_sp);
        q_sp[i] += T::lit(d.q_sp);
    }
    let slack = kind
        .iter()
        .position(|&k| k == BusType::Slack)
        .ok_or_else(|| Error::invalid("gfm", "power flow needs a grid-forming slack device"))?;

    let pv_pq: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let pq: Vec<usize> = (0..n).filter(|&i| kind[i] == BusType::Pq).collect();
    let n_eq = pv_pq.len() + pq.len();
    let mut theta = vec![T::zero(); n];
    let tol = T::lit(1e-12).max(T::epsilon() * T::lit(1e3));

    let mut iterations = 0;
    let mut mismatch;
    loop {
        let (p, q) = injections(net, &v_mag, &theta);
        let mut f = Vec::with_capacity(n_eq);
        for &i in &pv_pq {
            f.push(p_sp[i] - p[i]);
        }
        for &i in &pq {
            f.push(q_sp[i] - q[i]);
        }
        mismatch = f.iter().fold(T::zero(), |m, x| m.max(x.abs()));
        if mismatch <= tol {
            break;
        }
        if iterations >= MAX_ITER || !mismatch.is_finite() {
            return Err(Error::PowerFlow {
                iterations,
                mismatch: mismatch.to_f64_lossy(),
            });
        }
        let jac = jacobian(net, &v_mag, &theta, &p, &q, &pv_pq, &pq);
        let lu = jac.lu().map_err(|e| Error::SingularNetwork {
            bus: net.bus_ids()[slack],
            detail: format!("power-flow Jacobian singular in column {}", e.column),
        })?;
        let dx = lu.solve(&f);
        for (k, &i) in pv_pq.iter().enumerate() {
            theta[i] += dx[k];
        }
        for (k, &i) in pq.iter().enumerate() {
            v_mag[i] += dx[pv_pq.len() + k];
        }
        iterations += 1;
    }

    let v: Vec<Phasor<T>> = (0..n).map(|i| polar(v_mag[i], theta[i])).collect();
    let (p, q) = injections(net, &v_mag, &theta);

    let mut device_v = Vec::with_capacity(devices.len());
    let mut device_s = Vec::with_capacity(devices.len());
    let mut first_gfm_seen = vec![false; n];
    for d in &devices {
        let i = net.require_bus(d.bus, "device.bus")?;
        let s = match d.kind {
            DeviceKind::Gfl => {
                let g = &scenario.gfl[d.k];
                Phasor::new(T::lit(g.p_sp), T::lit(g.q_sp))
            }
            DeviceKind::Gfm => {
                let gfl_at_bus = scenario.gfl.iter().filter(|g| g.bus == d.bus);
                let (pl, ql) = gfl_at_bus.fold((T::zero(), T::zero()), |(a, b), g| {
                    (a + T::lit(g.p_sp), b + T::lit(g.q_sp))
                });
                let share = T::lit(gfm_count[i] as f64);
                let q_dev = (q[i] - ql) / share;
                let p_dev = if i == slack && !first_gfm_seen[i] {
                    let others: T = scenario
                        .gfm
                        .iter()
                        .filter(|g| g.bus == d.bus)
                        .skip(1)
                        .map(|g| T::lit(g.p_sp))
                        .sum();
                    p[i] - pl - others
                } else {
                    T::lit(scenario.gfm[d.k].p_sp)
                };
                first_gfm_seen[i] = true;
                Phasor::new(p_dev, q_dev)
            }
        };
        device_v.push(v[i]);
        device_s.push(s);
    }
    let device_i = device_s.iter().zip(&device_v).map(|(s, v)| (s / v).conj()).collect();

    Ok(Dispatch {
        v,
        device_v,
        device_i,
        device_s,
        iterations,
        mismatch,
    })
}

fn injections<T: Scalar>(net: &NetworkModel<T>, v: &[T], th: &[T]) -> (Vec<T>, Vec<T>) {
    let n = net.n_bus();
    let (g, b) = (net.g(), net.b());
    let mut p = vec![T::zero(); n];
    let mut q = vec![T::zero(); n];
    for i in 0..n {
        for j in 0..n {
            let (s, c) = (th[i] - th[j]).sin_cos();
            let vv = v[i] * v[j];
            p[i] += vv * (g[(i, j)] * c + b[(i, j)] * s);
            q[i] += vv * (g[(i, j)] * s - b[(i, j)] * c);
        }
    }
    (p, q)
}

fn jacobian<T: Scalar>(
    net: &NetworkModel<T>,
    v: &[T],
    th: &[T],
    p: &[T],
    q: &[T],
    pv_pq: &[usize],
    pq: &[usize],
) -> DenseMatrix<T> {
    let (g, b) = (net.g(), net.b());
    let na = pv_pq.len();
    let mut jac = DenseMatrix::zeros(na + pq.len(), na + pq.len());
    // rows: P at pv_pq, Q at pq; cols: θ at pv_pq, |V| at pq
    let dp_dth = |i: usize, j: usize| {
        if i == j {
            -q[i] - b[(i, i)] * v[i] * v[i]
        } else {
            let (s, c) = (th[i] - th[j]).sin_cos();
            v[i] * v[j] * (g[(i, j)] * s - b[(i, j)] * c)
        }
    };
    let dp_dv = |i: usize, j: usize| {
        if i == j {
            p[i] / v[i] + g[(i, i)] * v[i]
        } else {
            let (s, c) = (th[i] - th[j]).sin_cos();
            v[i] * (g[(i, j)] * c + b[(i, j)] * s)
        }
    };
    let dq_dth = |i: usize, j: usize| {
        if i == j {
            p[i] - g[(i, i)] * v[i] * v[i]
        } else {
            let (s, c) = (th[i] - th[j]).sin_cos();
            -v[i] * v[j] * (g[(i, j)] * c + b[(i, j)] * s)
        }
    };
    let dq_dv = |i: usize, j: usize| {
        if i == j {
            q[i] / v[i] - b[(i, i)] * v[i]
        } else {
            let (s, c) = (th[i] - th[j]).sin_cos();
            v[i] * (g[(i, j)] * s - b[(i, j)] * c)
        }
    };
    for (r, &i) in pv_pq.iter().enumerate() {
        for (c, &j) in pv_pq.iter().enumerate() {
            jac[(r, c)] = dp_dth(i, j);
        }
        for (c, &j) in pq.iter().enumerate() {
            jac[(r, na + c)] = dp_dv(i, j);
        }
    }
    for (r, &i) in pq.iter().enumerate() {
        for (c, &j) in pv_pq.iter().enumerate() {
            jac[(na + r, c)] = dq_dth(i, j);
        }
        for (c, &j) in pq.iter().enumerate() {
            jac[(na + r, na + c)] = dq_dv(i, j);
        }
    }
    jac
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::bundled;

    fn two_device() -> (Scenario, NetworkModel<f64>) {
        let sc = Scenario::from_toml_str(bundled::TWO_DEVICE).unwrap();
        let net = NetworkModel::build(&sc.buses, &sc.lines, &sc.loads).unwrap();
        (sc, net)
    }

    #[test]
    fn two_device_converges_and_balances() {
        let (sc, net) = two_device();
        let d = solve_power_flow(&sc, &net).unwrap();
        assert!(d.iterations <= 10);
        assert!((d.v[0].norm() - 1.0).abs() < 1e-12);
        assert!(d.v[0].im.abs() < 1e-15);
        // Kirchhoff: Y V equals the summed device currents
        let i_net = net.current(&d.v);
        let mut inj = vec![Phasor::new(0.0, 0.0); 3];
        for (k, dev) in sc.devices().iter().enumerate() {
            inj[net.bus_index(dev.bus).unwrap()] += d.device_i[k];
        }
        for (a, b) in i_net.iter().zip(&inj) {
            assert!((a - b).norm() < 1e-10);
        }
        // GFL delivers its setpoint
        assert!((d.device_s[1] - Phasor::new(0.8, 0.0)).norm() < 1e-15);
        let s = d.device_v[1] * d.device_i[1].conj();
        assert!((s - Phasor::new(0.8, 0.0)).norm() < 1e-10);
    }

    #[test]
    fn single_bus_slack_feeds_load() {
        let text = r#"
schema_version = 1
name = "one"
[[bus]]
id = 1
monitored = true
[[load]]
bus = 1
p = 0.5
q = 0.2
[[gfm]]
id = "G"
bus = 1
v_set = 1.05
"#;
        let sc = Scenario::from_toml_str(text).unwrap();
        let net = NetworkModel::<f64>::build(&sc.buses, &sc.lines, &sc.loads).unwrap();
        let d = solve_power_flow(&sc, &net).unwrap();
        let s_oracle = Phasor::new(0.5, 0.2) * 1.05 * 1.05;
        assert!((d.device_s[0] - s_oracle).norm() < 1e-12);
    }
}
