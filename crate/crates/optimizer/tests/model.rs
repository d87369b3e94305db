use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stvs_core::critmoments::{eval_moment, MomentTag, Study};
use stvs_core::scenario::{bundled, Scenario};
use stvs_optimizer::assemble::{start_point, tally};
use stvs_optimizer::{assemble_nlp, extract_tunings, solve_interior_point, AssembledNlp, IpmOptions, OptimizationConfig, QuadExpr, Start};

const SINGLE_GFM: &str = r#"
schema_version = 1
name = "single_gfm"

[[bus]]
id = 1
base_kv = 0.69

[[bus]]
id = 2
base_kv = 0.69
monitored = true

[[line]]
from = 1
to = 2
x = 0.1

[[load]]
bus = 2
p = 0.5
q = 0.1

[[gfm]]
id = "G"
bus = 1
v_set = 1.0
i_max = 1.2
x_virtual = 0.2

[[fault]]
id = "F"
bus = 2
x_f = 0.5
t_fault = 0.1
t_clear = 0.2
"#;

fn study(text: &str) -> Study<f64> {
    Study::new(&Scenario::from_toml_str(text).unwrap()).unwrap()
}

fn assembled(s: &Study<f64>) -> (OptimizationConfig, AssembledNlp<f64>) {
    let cfg = OptimizationConfig::from_study(s);
    let nlp = assemble_nlp(s, &cfg).unwrap();
    (cfg, nlp)
}

fn all_exprs(nlp: &AssembledNlp<f64>) -> Vec<&QuadExpr<f64>> {
    let p = &nlp.problem;
    std::iter::once(&p.objective).chain(&p.eq).chain(&p.ineq).collect()
}

#[test]
fn counts_match_hand_arithmetic_for_one_inverter() {
    let s = study(SINGLE_GFM);
    let (_, nlp) = assembled(&s);
    let p = &nlp.problem;
    // vars: x, E0 (2), preset (2), then per moment V (4), I (2), |V| at
    // buses 1 and 2 (2), and one slack per weighted moment (3).
    // eq: steady law (2), per moment balance (4), law (2), magnitudes (2).
    // ineq: one current limit per moment, two epigraph rows per slack.
    assert_eq!(p.n(), 1 + 2 + 2 + 3 * 8 + 3);
    assert_eq!(p.eq.len(), 2 + 3 * 8);
    assert_eq!(p.ineq.len(), 3 + 2 * 3);
    let t = tally(2, 1, 0, 1, 2, 1, 1, 3);
    assert_eq!((t.vars, t.eq, t.ineq), (p.n(), p.eq.len(), p.ineq.len()));
    p.check_structure().unwrap();
}

#[test]
fn bundled_counts_follow_the_formula() {
    for text in [bundled::TWO_DEVICE, bundled::IEEE14_IBR] {
        let s = study(text);
        let (cfg, nlp) = assembled(&s);
        let mut mag: Vec<usize> = s.monitored.iter().chain(&s.device_bus).copied().collect();
        mag.sort_unstable();
        mag.dedup();
        let t = tally(
            s.net.n_bus(),
            s.scenario.gfm.len(),
            s.scenario.gfl.len(),
            s.monitored.len(),
            mag.len(),
            cfg.contingencies.len(),
            cfg.groups().len(),
            cfg.moment_weights.iter().filter(|w| **w > 0.0).count(),
        );
        let p = &nlp.problem;
        assert_eq!((t.vars, t.eq, t.ineq), (p.n(), p.eq.len(), p.ineq.len()));
    }
}

fn random_point(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()
}

#[test]
fn hessian_is_the_same_at_two_random_points() {
    let s = study(bundled::TWO_DEVICE);
    let (_, nlp) = assembled(&s);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = nlp.problem.n();
    let (a, b) = (random_point(&mut rng, n), random_point(&mut rng, n));
    for e in all_exprs(&nlp) {
        // grad(a) - grad(b) = H (a - b) holds for every a, b only if H is constant.
        let mut diff = vec![0.0; n];
        for (i, g) in e.gradient(&a) {
            diff[i] += g;
        }
        for (i, g) in e.gradient(&b) {
            diff[i] -= g;
        }
        let mut hd = vec![0.0; n];
        for (i, j, h) in e.hessian() {
            hd[i] += h * (a[j] - b[j]);
            if i != j {
                hd[j] += h * (a[i] - b[i]);
            }
        }
        for k in 0..n {
            assert!((diff[k] - hd[k]).abs() < 1e-11, "var {k}: {} vs {}", diff[k], hd[k]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn every_row_is_exactly_quadratic_along_lines(seed in any::<u64>(), t in -3.0f64..3.0) {
        let s = study(bundled::TWO_DEVICE);
        let (_, nlp) = assembled(&s);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = nlp.problem.n();
        let x = random_point(&mut rng, n);
        let d = random_point(&mut rng, n);
        let xt: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
        for e in all_exprs(&nlp) {
            let slope: f64 = e.gradient(&x).into_iter().map(|(i, g)| g * d[i]).sum();
            let curv: f64 = e
                .hessian()
                .into_iter()
                .map(|(i, j, h)| if i == j { h * d[i] * d[i] } else { 2.0 * h * d[i] * d[j] })
                .sum();
            let model = e.eval(&x) + t * slope + 0.5 * t * t * curv;
            let got = e.eval(&xt);
            prop_assert!((got - model).abs() <= 1e-10 * (1.0 + got.abs()), "{} vs {}", got, model);
        }
    }

    #[test]
    fn objective_is_nonnegative_within_bounds(seed in any::<u64>()) {
        let s = study(bundled::TWO_DEVICE);
        let (_, nlp) = assembled(&s);
        let p = &nlp.problem;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..p.n())
            .map(|i| {
                let lo = if p.lb[i].is_finite() { p.lb[i] } else { -5.0 };
                let hi = if p.ub[i].is_finite() { p.ub[i] } else { lo.max(0.0) + 5.0 };
                rng.gen_range(lo..=hi)
            })
            .collect();
        prop_assert!(p.objective.eval(&x) >= 0.0);
    }

    #[test]
    fn moment_solves_satisfy_every_equality(seed in 0u64..1000) {
        let s = study(bundled::TWO_DEVICE);
        let (cfg, nlp) = assembled(&s);
        let x = start_point(&s, &cfg, &nlp.layout, Start::Random(seed)).unwrap();
        for (k, g) in nlp.problem.eq.iter().enumerate() {
            prop_assert!(g.eval(&x).abs() < 1e-9, "{}", nlp.problem.eq_labels[k]);
        }
        prop_assert!(nlp.problem.objective.eval(&x) >= 0.0);
    }
}

#[test]
fn solution_reproduces_moments_and_slacks() {
    let s = study(bundled::TWO_DEVICE);
    let (cfg, nlp) = assembled(&s);
    let sol = solve_interior_point(&nlp.problem, &IpmOptions::default());
    assert!(sol.is_optimal(), "{:?}", sol.status);
    let ext = extract_tunings(&sol, &s, &cfg, &nlp.layout).unwrap();
    let src = s.sources(&ext.tunings).unwrap();
    for (f, fault) in cfg.contingencies.iter().enumerate() {
        let pre = ext.presets_for(&cfg, f);
        for m in MomentTag::ALL {
            let st = eval_moment(&s, Some(fault), &ext.tunings, &src, pre, m).unwrap();
            let block = nlp.layout.block(f, m);
            if m == MomentTag::Tau2 {
                for (row, idx) in block.v.iter().enumerate() {
                    let v = stvs_optimizer::NlpLayout::phasor(&sol.x, *idx);
                    assert!((v - st.v[row]).norm() < 1e-8, "row {row}: {v} vs {}", st.v[row]);
                }
            }
            for &(k, t) in &block.slack {
                let row = nlp.layout.monitored_rows[k];
                let dev = (cfg.v_ref[k] - st.v_mag[row]).abs();
                assert!((sol.x[t] - dev).abs() < 1e-7, "slack {} vs |dev| {}", sol.x[t], dev);
            }
        }
    }
}

#[test]
fn extraction_refuses_unsolved_programs() {
    let s = study(bundled::TWO_DEVICE);
    let (cfg, nlp) = assembled(&s);
    let opts = IpmOptions {
        max_iter: 1,
        ..IpmOptions::default()
    };
    let sol = solve_interior_point(&nlp.problem, &opts);
    assert!(!sol.is_optimal());
    assert!(extract_tunings(&sol, &s, &cfg, &nlp.layout).is_err());
}

#[test]
fn tunings_file_round_trips_through_validation() {
    let s = study(bundled::TWO_DEVICE);
    let (cfg, nlp) = assembled(&s);
    let sol = solve_interior_point(&nlp.problem, &IpmOptions::default());
    let ext = extract_tunings(&sol, &s, &cfg, &nlp.layout).unwrap();
    let text = ext.file.to_toml_string();
    let back = stvs_core::tuning::TuningFile::from_toml_str(&text).unwrap();
    back.validate(&s.scenario).unwrap();
    let t = back.tunings(&s.scenario).unwrap();
    assert!((t.x_gfm[0] - ext.tunings.x_gfm[0]).abs() < 1e-12);
    let pre = back.presets_for(&s.scenario, "F1").unwrap();
    for (a, b) in pre.iter().zip(&ext.presets[0]) {
        assert!((a - b).norm() < 1e-12);
    }
}
