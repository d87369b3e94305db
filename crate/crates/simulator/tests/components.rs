use proptest::prelude::*;
use stvs_core::devices::{ModeKind, SecurityLimits};
use stvs_core::xy;
use stvs_sim::integrate::{rk4_step, trapezoidal_step};
use stvs_sim::{detect_events, ride_through_assessment, EventContext, EventKind, RiskKind, StepSample, Trajectory, Verdict};

fn decay_error(dt: f64, trapezoidal: bool) -> f64 {
    let steps = (1.0 / dt).round() as usize;
    let mut x = vec![1.0];
    for n in 0..steps {
        let f = |_t: f64, x: &[f64]| Ok(vec![-x[0]]);
        x = if trapezoidal {
            trapezoidal_step(n as f64 * dt, &x, dt, None, f).unwrap()
        } else {
            rk4_step(n as f64 * dt, &x, dt, None, f).unwrap()
        };
    }
    (x[0] - (-1.0f64).exp()).abs()
}

#[test]
fn rk4_error_falls_sixteenfold_when_the_step_halves() {
    let ratio = decay_error(0.1, false) / decay_error(0.05, false);
    assert!((ratio - 16.0).abs() < 1.0, "ratio {ratio}");
}

#[test]
fn trapezoidal_error_falls_fourfold_when_the_step_halves() {
    let ratio = decay_error(0.1, true) / decay_error(0.05, true);
    assert!((ratio - 4.0).abs() < 0.2, "ratio {ratio}");
}

proptest! {
    #[test]
    fn rk4_on_a_linear_system_is_the_fourth_order_taylor_polynomial(a in -5.0f64..5.0, h in 1e-4f64..0.2, x0 in -3.0f64..3.0) {
        let x = rk4_step(0.0, &[x0], h, None, |_t, x: &[f64]| Ok(vec![a * x[0]])).unwrap();
        let z = a * h;
        let taylor = x0 * (1.0 + z + z * z / 2.0 + z * z * z / 6.0 + z * z * z * z / 24.0);
        prop_assert!((x[0] - taylor).abs() <= 1e-12 * (1.0 + taylor.abs()));
    }

    #[test]
    fn trapezoidal_on_a_linear_system_is_the_pade_ratio(a in -5.0f64..0.0, h in 1e-4f64..0.1, x0 in -3.0f64..3.0) {
        let x = trapezoidal_step(0.0, &[x0], h, None, |_t, x: &[f64]| Ok(vec![a * x[0]])).unwrap();
        let pade = x0 * (1.0 + a * h / 2.0) / (1.0 - a * h / 2.0);
        prop_assert!((x[0] - pade).abs() <= 1e-12 * (1.0 + pade.abs()));
    }
}

fn ctx() -> EventContext {
    EventContext {
        devices: vec!["G".into(), "L".into()],
        fault: Some("F".into()),
        i_max: vec![1.2, 1.2],
        v_lvrt: 0.2,
        v_hvrt: 1.2,
    }
}

fn sample(t: f64, fault: bool, modes: [ModeKind; 2], i: [f64; 2], v: [f64; 2]) -> StepSample {
    StepSample {
        t,
        fault_active: fault,
        modes: modes.to_vec(),
        i_mag: i.to_vec(),
        v_term: v.to_vec(),
    }
}

#[test]
fn events_are_raised_on_edges_only() {
    use ModeKind::*;
    let a = sample(0.0, false, [Normal, Normal], [1.0, 0.8], [1.0, 1.0]);
    let b = sample(0.1, true, [Normal, Frt], [1.3, 0.8], [0.5, 0.179]);
    let ev = detect_events(&a, &b, &ctx());
    let kinds: Vec<_> = ev.iter().map(|e| (e.kind, e.subject.as_str())).collect();
    assert_eq!(
        kinds,
        vec![
            (EventKind::FaultOn, "F"),
            (EventKind::CurrentLimit, "G"),
            (EventKind::ModeSwitch, "L"),
            (EventKind::DisconnectRisk, "L"),
        ]
    );
    assert_eq!(ev[2].detail, "NORMAL -> FRT");
    let c = sample(0.2, true, [Normal, Frt], [1.3, 0.8], [0.5, 0.17]);
    assert!(detect_events(&b, &c, &ctx()).is_empty());
    let d = sample(0.3, false, [Normal, Frt], [1.0, 0.8], [1.0, 1.25]);
    let ev = detect_events(&c, &d, &ctx());
    assert_eq!(ev[0].kind, EventKind::FaultClear);
    assert!(ev.iter().any(|e| e.kind == EventKind::DisconnectRisk && e.detail.contains("above")));
}

fn one_bus_trajectory(v: &[f64]) -> Trajectory<f64> {
    let mut tr = Trajectory::new(vec![1], vec!["G".into()], vec![0]);
    for (n, &m) in v.iter().enumerate() {
        tr.t.push(n as f64 * 0.01);
        tr.v.push(vec![xy(m, 0.0)]);
        tr.vmag.push(vec![m]);
        tr.i.push(vec![xy(0.0, 0.0)]);
        tr.imag.push(vec![0.0]);
        tr.mode.push(vec![ModeKind::Normal]);
        tr.reference.push(vec![xy(0.0, 0.0)]);
        tr.p.push(vec![0.0]);
        tr.q.push(vec![0.0]);
    }
    tr
}

#[test]
fn a_sag_to_0179_is_at_risk() {
    let tr = one_bus_trajectory(&[1.0, 0.179, 0.18, 0.5, 1.0]);
    let rep = ride_through_assessment(&tr, &SecurityLimits::default());
    let d = &rep.devices[0];
    assert_eq!(d.verdict, Verdict::AtRisk);
    assert_eq!(d.intervals.len(), 1);
    let iv = &d.intervals[0];
    assert_eq!(iv.kind, RiskKind::Undervoltage);
    assert!((iv.start - 0.01).abs() < 1e-12 && (iv.duration - 0.02).abs() < 1e-12);
    assert!((iv.extreme - 0.179).abs() < 1e-12);
    assert!(!rep.secure());
}

#[test]
fn a_swell_just_under_the_limit_is_marginal() {
    let tr = one_bus_trajectory(&[1.0, 1.195, 1.0]);
    let rep = ride_through_assessment(&tr, &SecurityLimits::default());
    assert_eq!(rep.devices[0].verdict, Verdict::Marginal);
    assert!(rep.secure());
    let calm = one_bus_trajectory(&[1.0, 0.9, 1.05]);
    assert_eq!(ride_through_assessment(&calm, &SecurityLimits::default()).devices[0].verdict, Verdict::Secure);
}
