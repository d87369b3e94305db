//! Primal-dual interior-point solver for quadratically constrained programs.
//!
//! Inequalities `h(x) ≤ 0` (box bounds included) receive slacks `z > 0` and
//! multipliers `μ`; equalities `g(x) = 0` receive `λ`. Each iteration takes a
//! Newton step on the barrier-perturbed KKT conditions (`z∘μ = γ`), globalised
//! by a filter line search on infeasibility and barrier objective. The barrier parameter shrinks once
//! the current centering problem is solved. All constraints are quadratic, so
//! the Lagrangian Hessian is a fixed list of entries re-weighted by the
//! current multipliers.

use std::fmt;
use std::time::Instant;

use stvs_core::Scalar;

use crate::kkt::BlockKkt;
use crate::problem::{HessSlot, Multiplier, NlpProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Optimal => "OPTIMAL",
            Self::Infeasible => "INFEASIBLE",
            Self::MaxIter => "MAX_ITER",
        }
    }
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IpmOptions {
    pub max_iter: usize,
    /// Absolute constraint violation.
    pub feas_tol: f64,
    /// `‖∇L‖∞ / (1 + max(‖λ‖∞, ‖μ‖∞))`
    pub grad_tol: f64,
    /// `max z_i·μ_i`
    pub comp_tol: f64,
    /// Initial barrier parameter.
    pub gamma0: f64,
    /// Barrier reduction factor per centering step.
    pub gamma_factor: f64,
    /// Violation above which a stalled run is declared infeasible.
    pub infeasible_violation: f64,
    pub stall_window: usize,
    pub stall_after: usize,
}

impl Default for IpmOptions {
    fn default() -> Self {
        Self {
            max_iter: 300,
            feas_tol: 1e-9,
            grad_tol: 1e-7,
            comp_tol: 1e-9,
            gamma0: 0.1,
            gamma_factor: 0.2,
            infeasible_violation: 1e-5,
            stall_window: 30,
            stall_after: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NlpSolution<T> {
    pub x: Vec<T>,
    pub objective: T,
    pub max_constraint_violation: T,
    pub kkt_residual: T,
    pub iterations: usize,
    pub wall_time_s: f64,
    pub status: SolveStatus,
    /// Equality multipliers.
    pub lambda: Vec<T>,
    /// Multipliers of the problem's own inequalities (bounds excluded).
    pub mu: Vec<T>,
    /// Label of the worst-violated constraint when not optimal.
    pub certificate: Option<String>,
    /// Number of KKT solves that needed regularisation.
    pub regularizations: usize,
}

impl<T: Scalar> NlpSolution<T> {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

#[derive(Debug, Clone, Copy)]
struct BoundRow<T> {
    var: usize,
    /// `h = sign·x_var − c`
    sign: T,
    c: T,
}

fn inf_norm<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, a| m.max(a.abs()))
}

fn one_norm<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, a| m + a.abs())
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

struct Model<'a, T> {
    p: &'a NlpProblem<T>,
    bounds: Vec<BoundRow<T>>,
    slots: Vec<HessSlot<T>>,
}

struct Eval<T> {
    f: T,
    g: Vec<T>,
    h: Vec<T>,
}

impl<T: Scalar> Model<'_, T> {
    fn n_gen(&self) -> usize {
        self.p.ineq.len()
    }

    fn n_ineq(&self) -> usize {
        self.p.ineq.len() + self.bounds.len()
    }

    fn eval(&self, x: &[T]) -> Eval<T> {
        let mut h: Vec<T> = self.p.ineq.iter().map(|e| e.eval(x)).collect();
        h.extend(self.bounds.iter().map(|b| b.sign * x[b.var] - b.c));
        Eval {
            f: self.p.objective.eval(x),
            g: self.p.eq.iter().map(|e| e.eval(x)).collect(),
            h,
        }
    }

    /// `θ = ‖g‖₁ + ‖h + z‖₁`
    fn theta(&self, e: &Eval<T>, z: &[T]) -> T {
        one_norm(&e.g) + e.h.iter().zip(z).fold(T::zero(), |s, (&h, &z)| s + (h + z).abs())
    }

    /// `φ = f − γ Σ ln z`
    fn phi(&self, e: &Eval<T>, z: &[T], gamma: T) -> T {
        e.f - gamma * z.iter().fold(T::zero(), |s, &zi| s + zi.ln())
    }

    /// `∇²L · v` from the constant entries.
    fn hess_vec(&self, lam: &[T], mu: &[T], v: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); v.len()];
        for s in &self.slots {
            let w = self.weight(s, lam, mu) * s.value;
            out[s.i] += w * v[s.j];
            if s.i != s.j {
                out[s.j] += w * v[s.i];
            }
        }
        out
    }

    fn weight(&self, s: &HessSlot<T>, lam: &[T], mu: &[T]) -> T {
        match s.source {
            Multiplier::Objective => T::one(),
            Multiplier::Eq(k) => lam[k],
            Multiplier::Ineq(k) => mu[k],
        }
    }

    fn jh_dot(&self, jh: &[Vec<(usize, T)>], k: usize, d: &[T]) -> T {
        if k < self.n_gen() {
            jh[k].iter().fold(T::zero(), |s, &(i, v)| s + v * d[i])
        } else {
            let b = self.bounds[k - self.n_gen()];
            b.sign * d[b.var]
        }
    }
}

/// Largest step in `(0, 1]` keeping `v + α·dv ≥ (1 − τ)·v`.
fn fraction_to_boundary<T: Scalar>(v: &[T], dv: &[T], tau: T) -> T {
    let mut a = T::one();
    for (&vi, &di) in v.iter().zip(dv) {
        if di < T::zero() {
            a = a.min(tau * vi / -di);
        }
    }
    a
}

/// Solves `problem` from `problem.x0`.
pub fn solve_interior_point<T: Scalar>(problem: &NlpProblem<T>, opts: &IpmOptions) -> NlpSolution<T> {
    let started = Instant::now();
    let n = problem.n();
    let n_eq = problem.eq.len();
    let lit = |v: f64| T::lit(v);

    let finish = |x: Vec<T>, lam: Vec<T>, mu: Vec<T>, kkt: T, it: usize, status, regs| {
        let (viol, label) = problem.max_violation(&x);
        NlpSolution {
            objective: problem.objective.eval(&x),
            max_constraint_violation: viol,
            kkt_residual: kkt,
            iterations: it,
            wall_time_s: started.elapsed().as_secs_f64(),
            certificate: if status == SolveStatus::Optimal { None } else { label },
            status,
            x,
            lambda: lam,
            mu,
            regularizations: regs,
        }
    };

    if let Some(k) = (0..n).find(|&k| problem.lb[k] > problem.ub[k]) {
        let mut sol = finish(
            problem.x0.clone(),
            vec![T::zero(); n_eq],
            vec![T::zero(); problem.ineq.len()],
            T::infinity(),
            0,
            SolveStatus::Infeasible,
            0,
        );
        sol.certificate = Some(format!("{}: empty bound interval", problem.var_labels[k]));
        return sol;
    }

    let mut bounds = Vec::new();
    for k in 0..n {
        if problem.lb[k].is_finite() {
            bounds.push(BoundRow { var: k, sign: -T::one(), c: -problem.lb[k] });
        }
        if problem.ub[k].is_finite() {
            bounds.push(BoundRow { var: k, sign: T::one(), c: problem.ub[k] });
        }
    }
    let model = Model { p: problem, slots: problem.hessian_slots(), bounds };
    let n_gen = model.n_gen();
    let n_ineq = model.n_ineq();
    let mut kkt = BlockKkt::new(problem);

    // Start strictly inside the box where it has room.
    let mut x: Vec<T> = (0..n)
        .map(|k| {
            let (lb, ub) = (problem.lb[k], problem.ub[k]);
            let mut v = problem.x0[k];
            let push = lit(1e-2);
            if lb.is_finite() && ub.is_finite() {
                let room = (ub - lb) * lit(0.5);
                let d = (push * T::one().max(lb.abs())).min(room);
                v = v.max(lb + d).min(ub - d);
            } else if lb.is_finite() {
                v = v.max(lb + push * T::one().max(lb.abs()));
            } else if ub.is_finite() {
                v = v.min(ub - push * T::one().max(ub.abs()));
            }
            v
        })
        .collect();
    let mut gamma = lit(opts.gamma0);
    let gamma_min = lit(opts.comp_tol.min(opts.feas_tol) / 10.0);
    let mut ev = model.eval(&x);
    let mut z: Vec<T> = ev.h.iter().map(|&h| (-h).max(T::one())).collect();
    let mut mu: Vec<T> = z.iter().map(|&z| gamma / z).collect();
    let mut lam = vec![T::zero(); n_eq];
    let mut filter: Vec<(T, T)> = Vec::new();
    let (mut theta_max, mut theta_min) = (T::infinity(), T::zero());
    let mut delta_w = T::zero();

    let mut history: Vec<T> = Vec::new();
    let mut best: Option<(T, Vec<T>, Vec<T>, Vec<T>, T)> = None;
    let mut regs = 0usize;

    for iter in 0..=opts.max_iter {
        let jg: Vec<Vec<(usize, T)>> = problem.eq.iter().map(|e| e.gradient(&x)).collect();
        let jh: Vec<Vec<(usize, T)>> = problem.ineq.iter().map(|e| e.gradient(&x)).collect();

        let mut grad_f = vec![T::zero(); n];
        for (i, v) in problem.objective.gradient(&x) {
            grad_f[i] += v;
        }
        let mut lx = grad_f.clone();
        for (row, &l) in jg.iter().zip(&lam) {
            for &(i, v) in row {
                lx[i] += l * v;
            }
        }
        for (row, &m) in jh.iter().zip(&mu) {
            for &(i, v) in row {
                lx[i] += m * v;
            }
        }
        for (b, &m) in model.bounds.iter().zip(&mu[n_gen..]) {
            lx[b.var] += m * b.sign;
        }

        let viol = ev.g.iter().map(|v| v.abs()).chain(ev.h.iter().copied()).fold(T::zero(), T::max);
        let dual_scale = T::one() + inf_norm(&lam).max(inf_norm(&mu));
        let gradcond = inf_norm(&lx) / dual_scale;
        let compcond = z.iter().zip(&mu).fold(T::zero(), |m, (&a, &b)| m.max(a * b));
        let kkt_res = gradcond.max(compcond);
        log::trace!(
            "ipm {iter}: f {:.6e} viol {:.2e} grad {:.2e} comp {:.2e} gamma {:.1e}",
            ev.f.to_f64_lossy(),
            viol.to_f64_lossy(),
            gradcond.to_f64_lossy(),
            compcond.to_f64_lossy(),
            gamma.to_f64_lossy()
        );

        let score = viol.max(kkt_res);
        if best.as_ref().map_or(true, |b| score < b.0) {
            best = Some((score, x.clone(), lam.clone(), mu[..n_gen].to_vec(), kkt_res));
        }
        if viol <= lit(opts.feas_tol) && gradcond <= lit(opts.grad_tol) && compcond <= lit(opts.comp_tol) {
            return finish(x, lam, mu[..n_gen].to_vec(), kkt_res, iter, SolveStatus::Optimal, regs);
        }
        history.push(viol);
        if iter >= opts.stall_after.max(opts.stall_window) && viol > lit(opts.infeasible_violation) {
            let past = history[iter - opts.stall_window];
            if viol > past * lit(0.5) {
                return finish(x, lam, mu[..n_gen].to_vec(), kkt_res, iter, SolveStatus::Infeasible, regs);
            }
        }
        if iter == opts.max_iter {
            break;
        }

        // Shrink the barrier while the centering problem is already solved.
        loop {
            let cent = ev
                .g
                .iter()
                .map(|v| v.abs())
                .chain(ev.h.iter().zip(&z).map(|(&h, &z)| (h + z).abs()))
                .chain(z.iter().zip(&mu).map(|(&z, &m)| (z * m - gamma).abs()))
                .fold(gradcond, T::max);
            if gamma > gamma_min && cent <= lit(10.0) * gamma {
                gamma = gamma_min.max((lit(opts.gamma_factor) * gamma).min(gamma.powf(lit(1.5))));
                filter.clear();
            } else {
                break;
            }
        }

        // M = ∇²L + J_hᵀ diag(μ/z) J_h,  N = ∇L + J_hᵀ ((γ + μ∘h)/z)
        kkt.clear();
        for s in &model.slots {
            kkt.add_sym(s.i, s.j, s.value * model.weight(s, &lam, &mu));
        }
        let mut nvec = lx.clone();
        for (k, row) in jh.iter().enumerate() {
            let d = mu[k] / z[k];
            let r = (gamma + mu[k] * ev.h[k]) / z[k];
            for (a, &(i, gi)) in row.iter().enumerate() {
                nvec[i] += gi * r;
                for &(j, gj) in &row[a..] {
                    kkt.add_sym(i, j, d * gi * gj);
                }
            }
        }
        for (q, b) in model.bounds.iter().enumerate() {
            let k = n_gen + q;
            kkt.add_sym(b.var, b.var, mu[k] / z[k]);
            nvec[b.var] += b.sign * (gamma + mu[k] * ev.h[k]) / z[k];
        }
        let rhs_x: Vec<T> = nvec.iter().map(|&v| -v).collect();
        let rhs_e: Vec<T> = ev.g.iter().map(|&v| -v).collect();

        // Curvature test stands in for an inertia check: the step must see
        // positive curvature, else the Hessian block is shifted.
        let scale = T::one() + kkt.max_abs_m();
        let mut shift = if delta_w > T::zero() { (delta_w / lit(3.0)).max(lit(1e-20)) } else { T::zero() };
        let mut reg_e = T::zero();
        let mut first = true;
        let (dx, dlam, dz) = loop {
            if !first {
                regs += 1;
            }
            first = false;
            let attempt = kkt.solve(&jg, &rhs_x, &rhs_e, shift, reg_e);
            let ok = match attempt {
                Ok((dx, dl)) if dx.iter().chain(dl.iter()).all(|v| v.is_finite()) => {
                    let dz: Vec<T> = (0..n_ineq).map(|k| -ev.h[k] - z[k] - model.jh_dot(&jh, k, &dx)).collect();
                    let hv = model.hess_vec(&lam, &mu, &dx);
                    let curv = dot(&dx, &hv)
                        + (0..n_ineq).fold(T::zero(), |s, k| s + mu[k] / z[k] * dz[k] * dz[k])
                        + shift * dot(&dx, &dx);
                    let size = dot(&dx, &dx) + dot(&dz, &dz);
                    if curv >= lit(1e-8) * size {
                        Some((dx, dl, dz))
                    } else {
                        None
                    }
                }
                Ok(_) => None,
                Err(e) => {
                    if reg_e == T::zero() {
                        reg_e = lit(1e-8) * gamma.powf(lit(0.25)).max(lit(1e-4));
                        log::warn!("singular KKT system at iteration {iter} ({e:?}); regularising");
                    }
                    None
                }
            };
            if let Some(step) = ok {
                break step;
            }
            shift = if shift == T::zero() { lit(1e-4) } else { shift * lit(8.0) };
            if shift > lit(1e20) * scale {
                return finish(x, lam, mu[..n_gen].to_vec(), kkt_res, iter, SolveStatus::MaxIter, regs);
            }
        };
        delta_w = shift;

        // dμ = −μ + (γ − μ∘dz)/z
        let dmu: Vec<T> = (0..n_ineq).map(|k| -mu[k] + (gamma - mu[k] * dz[k]) / z[k]).collect();
        let tau = lit(0.99).max(T::one() - gamma);
        let ap_max = fraction_to_boundary(&z, &dz, tau);
        let ad = fraction_to_boundary(&mu, &dmu, tau);

        // Filter line search on (θ, φ): infeasibility and barrier objective.
        let theta0 = model.theta(&ev, &z);
        let phi0 = model.phi(&ev, &z, gamma);
        if filter.is_empty() {
            theta_max = lit(1e4) * T::one().max(theta0);
            theta_min = lit(1e-4) * T::one().max(theta0);
        }
        let slope = dot(&grad_f, &dx) - (0..n_ineq).fold(T::zero(), |s, k| s + gamma * dz[k] / z[k]);
        let roundoff = lit(10.0) * T::epsilon() * T::one().max(phi0.abs());
        let tiny = x.iter().zip(&dx).all(|(&xi, &di)| di.abs() <= lit(10.0) * T::epsilon() * (T::one() + xi.abs()));
        let mut ap = ap_max;
        let mut accepted = None;
        for _ in 0..50 {
            let xt: Vec<T> = x.iter().zip(&dx).map(|(&a, &d)| a + ap * d).collect();
            let zt: Vec<T> = z.iter().zip(&dz).map(|(&a, &d)| a + ap * d).collect();
            let et = model.eval(&xt);
            let (tt, pt) = (model.theta(&et, &zt), model.phi(&et, &zt, gamma));
            let ok = if tiny {
                true
            } else if !(tt.is_finite() && pt.is_finite()) || tt > theta_max {
                false
            } else if filter.iter().any(|&(tf, pf)| tt >= tf && pt >= pf) {
                false
            } else if slope < T::zero()
                && theta0 <= theta_min
                && ap * (-slope).powf(lit(2.3)) > theta0.powf(lit(1.1))
            {
                // f-type: Armijo on the barrier objective alone.
                if pt <= phi0 + lit(1e-4) * ap * slope + roundoff {
                    accepted = Some((xt, zt, et, true));
                    break;
                }
                false
            } else {
                tt <= (T::one() - lit(1e-5)) * theta0 || pt <= phi0 - lit(1e-8) * theta0 + roundoff
            };
            if ok {
                accepted = Some((xt, zt, et, tiny));
                break;
            }
            ap = ap * lit(0.5);
        }
        let (xt, zt, et) = match accepted {
            Some((xt, zt, et, f_type)) => {
                if !f_type {
                    filter.push((theta0 * (T::one() - lit(1e-5)), phi0 - lit(1e-8) * theta0));
                }
                (xt, zt, et)
            }
            None => {
                // No acceptable point along the step: take a short step and
                // forget the filter rather than stall.
                filter.clear();
                ap = ap_max * lit(1e-2);
                let xt: Vec<T> = x.iter().zip(&dx).map(|(&a, &d)| a + ap * d).collect();
                let zt: Vec<T> = z.iter().zip(&dz).map(|(&a, &d)| a + ap * d).collect();
                let et = model.eval(&xt);
                (xt, zt, et)
            }
        };
        x = xt;
        z = zt;
        ev = et;
        for k in 0..n_eq {
            lam[k] += ap * dlam[k];
        }
        let kappa = lit(1e10);
        for k in 0..n_ineq {
            let m = mu[k] + ad * dmu[k];
            mu[k] = m.max(gamma / (kappa * z[k])).min(kappa * gamma / z[k]);
        }
        if !x.iter().all(|v| v.is_finite()) {
            break;
        }
    }

    let (_, x, lam, mu, kkt_best) = best.expect("at least one iterate evaluated");
    finish(x, lam, mu, kkt_best, opts.max_iter, SolveStatus::MaxIter, regs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::QuadExpr;

    fn dist_objective(a: &[f64]) -> QuadExpr<f64> {
        let mut f = QuadExpr::new();
        for (i, &ai) in a.iter().enumerate() {
            f.add_quad(i, i, 1.0);
            f.add_lin(i, -2.0 * ai);
            f.constant += ai * ai;
        }
        f
    }

    fn free_problem(n: usize) -> NlpProblem<f64> {
        let mut p = NlpProblem::new(n);
        for k in 0..n {
            p.add_var(format!("x{k}"), f64::NEG_INFINITY, f64::INFINITY, 0.0);
        }
        p
    }

    #[test]
    fn unconstrained_distance() {
        let a = [1.0, -2.0, 0.5];
        let mut p = free_problem(3);
        p.objective = dist_objective(&a);
        let s = solve_interior_point(&p, &IpmOptions::default());
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!(s.iterations <= 2, "{} iterations", s.iterations);
        for k in 0..3 {
            assert!((s.x[k] - a[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_onto_disc() {
        // min (x−2)² + y²  s.t. x² + y² ≤ 1  → (1, 0), multiplier 1
        let mut p = free_problem(2);
        p.objective = dist_objective(&[2.0, 0.0]);
        p.add_ineq("disc", QuadExpr::new().bilin(0, 0, 1.0).bilin(1, 1, 1.0).with_constant(-1.0));
        let s = solve_interior_point(&p, &IpmOptions::default());
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.x[0] - 1.0).abs() < 1e-8 && s.x[1].abs() < 1e-8);
        assert!((s.mu[0] - 1.0).abs() < 1e-6);
        assert!((s.objective - 1.0).abs() < 1e-8);
    }

    #[test]
    fn equality_circle_with_bounds() {
        // min x + y  s.t. x² + y² = 2, x, y ∈ [−5, 5]  → (−1, −1)
        let mut p = NlpProblem::<f64>::new(2);
        p.add_var("x", -5.0, 5.0, 0.5);
        p.add_var("y", -5.0, 5.0, -0.3);
        p.objective = QuadExpr::new().lin(0, 1.0).lin(1, 1.0);
        p.add_eq("circle", QuadExpr::new().bilin(0, 0, 1.0).bilin(1, 1, 1.0).with_constant(-2.0));
        let s = solve_interior_point(&p, &IpmOptions::default());
        assert_eq!(s.status, SolveStatus::Optimal, "{s:?}");
        assert!((s.x[0] + 1.0).abs() < 1e-7 && (s.x[1] + 1.0).abs() < 1e-7);
        assert!(s.max_constraint_violation <= 1e-8);
        assert!(s.kkt_residual <= 1e-6);
    }

    #[test]
    fn crossed_bounds_are_infeasible() {
        let mut p = NlpProblem::<f64>::new(1);
        p.add_var("v", 0.99, 0.75, 0.8);
        let s = solve_interior_point(&p, &IpmOptions::default());
        assert_eq!(s.status, SolveStatus::Infeasible);
        assert!(s.certificate.unwrap().starts_with("v"));
    }

    #[test]
    fn contradictory_constraints_are_infeasible() {
        // x ≥ 1 and x² ≤ 0.25
        let mut p = NlpProblem::<f64>::new(1);
        p.add_var("x", 1.0, f64::INFINITY, 1.0);
        p.objective = QuadExpr::new().lin(0, 1.0);
        p.add_ineq("small", QuadExpr::new().bilin(0, 0, 1.0).with_constant(-0.25));
        let s = solve_interior_point(&p, &IpmOptions::default());
        assert_ne!(s.status, SolveStatus::Optimal);
        assert!(s.max_constraint_violation > 1e-3);
        assert!(s.certificate.is_some());
    }

    #[test]
    fn f32_instance() {
        let mut p = NlpProblem::<f32>::new(2);
        p.add_var("x", -1.0, 1.0, 0.0);
        p.add_var("y", f32::NEG_INFINITY, f32::INFINITY, 0.0);
        p.objective = QuadExpr::new().bilin(0, 0, 1.0).bilin(1, 1, 1.0).lin(0, -4.0);
        let opts = IpmOptions { feas_tol: 1e-5, grad_tol: 1e-4, comp_tol: 1e-5, ..Default::default() };
        let s = solve_interior_point(&p, &opts);
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.x[0] - 1.0).abs() < 1e-3);
    }
}
