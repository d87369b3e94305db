use stvs_core::critmoments::{eval_moment, MomentTag, Study, Tunings};
use stvs_core::devices::ModeKind;
use stvs_core::scenario::{bundled, Integration, Scenario};
use stvs_core::{polar, Phasor};
use stvs_sim::{baseline_tunings, run_simulation, ControlScheme, SimConfig, SimError, Simulation};

fn two_device() -> Study<f64> {
    Study::new(&Scenario::from_toml_str(bundled::TWO_DEVICE).unwrap()).unwrap()
}

/// Presets that hold each device at a fixed fraction of its pre-fault source.
fn scaled_presets(s: &Study<f64>, t: &Tunings<f64>) -> Vec<Phasor<f64>> {
    s.sources(t).unwrap().device_sources().iter().map(|z| z * 0.9).collect()
}

fn proposed(s: &Study<f64>) -> (Tunings<f64>, Vec<Phasor<f64>>) {
    let t = Tunings::from_scenario(&s.scenario);
    let p = scaled_presets(s, &t);
    (t, p)
}

#[test]
fn equilibrium_holds_without_a_fault() {
    let s = two_device();
    let (t, _) = proposed(&s);
    let mut cfg = SimConfig::from_scenario(&s.scenario);
    cfg.t_end = 1.0;
    let mut sim = Simulation::new(&s, &t, None, None, &cfg).unwrap();
    let x0 = sim.states().to_vec();
    let v0 = sim.algebraic().vmag.clone();
    for _ in 0..10_000 {
        assert!(sim.step().unwrap().is_empty());
    }
    let drift = x0.iter().zip(sim.states()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(drift < 1e-8, "state drift {drift}");
    for (a, b) in v0.iter().zip(&sim.algebraic().vmag) {
        assert!((a - b).abs() < 1e-8);
    }
    assert!(sim.modes().iter().all(|m| *m == ModeKind::Normal));
}

#[test]
fn fault_run_passes_through_every_mode_and_back() {
    let s = two_device();
    let (t, p) = proposed(&s);
    let cfg = SimConfig::from_scenario(&s.scenario);
    let out = run_simulation(&s, &t, Some(&p), Some(&s.scenario.faults[0]), &cfg).unwrap();
    for d in &s.devices {
        assert_eq!(
            out.events.mode_timeline(&d.id),
            vec![ModeKind::Normal, ModeKind::Frt, ModeKind::Recovery, ModeKind::Normal],
            "{}",
            d.id
        );
    }
    let kinds: Vec<_> = out.events.events().iter().map(|e| e.kind).collect();
    assert_eq!(kinds.first(), Some(&stvs_sim::EventKind::FaultOn));
    assert!(kinds.contains(&stvs_sim::EventKind::FaultClear));
    assert!(out.max_residual <= 1e-10, "residual {}", out.max_residual);
}

#[test]
fn samples_at_the_moments_match_the_algebraic_model() {
    let s = two_device();
    let (t, p) = proposed(&s);
    let cfg = SimConfig::from_scenario(&s.scenario);
    let f = &s.scenario.faults[0];
    let out = run_simulation(&s, &t, Some(&p), Some(f), &cfg).unwrap();
    let src = s.sources(&t).unwrap();
    for (m, tol) in [(MomentTag::Tau1, 5e-3), (MomentTag::Tau2, 1e-3), (MomentTag::Tau3, 5e-3)] {
        let st = eval_moment(&s, Some(f), &t, &src, &p, m).unwrap();
        let sim = out.moments.vmag[m.index()].as_ref().unwrap();
        for (a, b) in st.v_mag.iter().zip(sim) {
            assert!((a - b).abs() <= tol, "{m:?}: {a} vs {b}");
        }
    }
}

#[test]
fn halving_the_step_barely_moves_the_steady_fault_voltages() {
    let s = two_device();
    let (t, p) = proposed(&s);
    let f = &s.scenario.faults[0];
    let cfg = SimConfig::from_scenario(&s.scenario);
    let fine = SimConfig { dt: cfg.dt / 2.0, ..cfg.clone() };
    let a = run_simulation(&s, &t, Some(&p), Some(f), &cfg).unwrap();
    let b = run_simulation(&s, &t, Some(&p), Some(f), &fine).unwrap();
    let (va, vb) = (a.moments.vmag[1].as_ref().unwrap(), b.moments.vmag[1].as_ref().unwrap());
    for (x, y) in va.iter().zip(vb) {
        assert!((x - y).abs() < 1e-6, "{x} vs {y}");
    }
}

#[test]
fn baseline_current_source_holds_its_current_when_the_fault_lands() {
    let s = two_device();
    let t = baseline_tunings(&s.scenario);
    let cfg = SimConfig::from_scenario(&s.scenario).with_scheme(ControlScheme::Baseline);
    let f = &s.scenario.faults[0];
    let mut sim = Simulation::new(&s, &t, None, Some(f), &cfg).unwrap();
    let k = s.devices.iter().position(|d| d.id == "GFL1").unwrap();
    let before = sim.algebraic().i[k];
    while !sim.fault_active(sim.step_count()) {
        sim.step().unwrap();
    }
    let after = sim.algebraic().i[k];
    assert!((after - before).norm() < 1e-10, "{before} -> {after}");
}

#[test]
fn device_power_equals_network_absorption() {
    let s = two_device();
    let (t, p) = proposed(&s);
    let cfg = SimConfig::from_scenario(&s.scenario);
    let f = &s.scenario.faults[0];
    let mut sim = Simulation::new(&s, &t, Some(&p), Some(f), &cfg).unwrap();
    for n in 0..3500 {
        sim.step().unwrap();
        if n % 250 != 0 {
            continue;
        }
        let alg = sim.algebraic();
        let net = sim.network_at_step(sim.step_count()).unwrap();
        let absorbed: Phasor<f64> = net.current(&alg.v).iter().zip(&alg.v).map(|(i, v)| v * i.conj()).sum();
        let injected: Phasor<f64> = (0..s.n_dev()).map(|k| alg.v[s.device_bus[k]] * alg.i[k].conj()).sum();
        assert!((absorbed - injected).norm() < 1e-8, "step {n}: {absorbed} vs {injected}");
    }
}

#[test]
fn repeated_runs_write_identical_csv() {
    let s = two_device();
    let (t, p) = proposed(&s);
    let cfg = SimConfig::from_scenario(&s.scenario);
    let f = &s.scenario.faults[0];
    let a = run_simulation(&s, &t, Some(&p), Some(f), &cfg).unwrap();
    let b = run_simulation(&s, &t, Some(&p), Some(f), &cfg).unwrap();
    assert_eq!(a.trajectory.to_csv(), b.trajectory.to_csv());
    assert_eq!(a.events, b.events);
}

#[test]
fn trapezoidal_run_agrees_with_rk4() {
    let s = two_device();
    let (t, p) = proposed(&s);
    let f = &s.scenario.faults[0];
    let rk = SimConfig::from_scenario(&s.scenario);
    let tr = SimConfig {
        integration: Integration::Trapezoidal,
        ..rk.clone()
    };
    let a = run_simulation(&s, &t, Some(&p), Some(f), &rk).unwrap();
    let b = run_simulation(&s, &t, Some(&p), Some(f), &tr).unwrap();
    for m in 0..3 {
        for (x, y) in a.moments.vmag[m].as_ref().unwrap().iter().zip(b.moments.vmag[m].as_ref().unwrap()) {
            assert!((x - y).abs() < 1e-4);
        }
    }
}

#[test]
fn decimation_thins_the_record() {
    let s = two_device();
    let (t, p) = proposed(&s);
    let f = &s.scenario.faults[0];
    let mut cfg = SimConfig::from_scenario(&s.scenario);
    cfg.record_decimation = 1;
    let full = run_simulation(&s, &t, Some(&p), Some(f), &cfg).unwrap();
    cfg.record_decimation = 10;
    let thin = run_simulation(&s, &t, Some(&p), Some(f), &cfg).unwrap();
    assert_eq!(full.trajectory.len(), full.steps + 1);
    assert_eq!(thin.trajectory.len(), full.steps / 10 + 1);
    assert_eq!(full.moments, thin.moments);
}

#[test]
fn limiter_keeps_currents_at_the_rating() {
    let s = two_device();
    let t = Tunings::from_scenario(&s.scenario);
    // Presets far beyond the rating force the limiter to act.
    let p: Vec<Phasor<f64>> = s.sources(&t).unwrap().device_sources().iter().map(|z| z * 3.0).collect();
    let cfg = SimConfig::from_scenario(&s.scenario);
    let out = run_simulation(&s, &t, Some(&p), Some(&s.scenario.faults[0]), &cfg).unwrap();
    for (k, d) in s.devices.iter().enumerate() {
        assert!(out.max_current[k] <= d.i_max * (1.0 + 1e-8), "{} {}", d.id, out.max_current[k]);
        assert_eq!(out.longest_overcurrent[k], 0);
    }
    assert!(out.limiter_steps.iter().any(|&n| n > 0));
}

#[test]
fn setup_errors_are_reported() {
    let s = two_device();
    let t = Tunings::from_scenario(&s.scenario);
    let f = &s.scenario.faults[0];
    let cfg = SimConfig::from_scenario(&s.scenario);
    assert!(matches!(run_simulation(&s, &t, None, Some(f), &cfg), Err(SimError::Setup(_))));
    let short = SimConfig { t_end: f.t_clear + 0.1, ..cfg.clone() };
    let p = vec![polar(1.0, 0.0); s.n_dev()];
    assert!(matches!(run_simulation(&s, &t, Some(&p), Some(f), &short), Err(SimError::Setup(_))));
    let bad = SimConfig { dt: 0.0, ..cfg };
    assert!(run_simulation(&s, &t, Some(&p), Some(f), &bad).is_err());
}

#[test]
fn csv_has_the_documented_columns() {
    let s = two_device();
    let (t, p) = proposed(&s);
    let cfg = SimConfig::from_scenario(&s.scenario);
    let out = run_simulation(&s, &t, Some(&p), Some(&s.scenario.faults[0]), &cfg).unwrap();
    let csv = out.trajectory.to_csv();
    let header = csv.lines().next().unwrap();
    assert_eq!(
        header,
        "t,vmag_1,vmag_2,vmag_3,imag_GFM1,p_GFM1,q_GFM1,mode_GFM1,imag_GFL1,p_GFL1,q_GFL1,mode_GFL1"
    );
    let first: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(first[0], "0");
    assert_eq!(first[7], "1");
}
