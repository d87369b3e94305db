//! Multistart driver and the end-to-end tuning entry point.

use std::sync::Mutex;

use stvs_core::critmoments::Study;
use stvs_core::Scalar;

use crate::assemble::{assemble_nlp, start_point, AssembledNlp, OptimizationConfig, Start};
use crate::error::OptResult;
use crate::extract::{extract_tunings, ExtractedTunings};
use crate::ipm::{solve_interior_point, IpmOptions, NlpSolution};

/// Objective spread below which local optima are taken to agree.
pub const AGREEMENT_TOL: f64 = 1e-5;

/// `n` starts: scenario values, flat, then seeded random points.
pub fn default_starts(n: usize, seed: u64) -> Vec<Start> {
    let mut out = vec![Start::PreFault, Start::Flat];
    out.extend((0..n.saturating_sub(2) as u64).map(|k| Start::Random(seed.wrapping_add(k))));
    out.truncate(n);
    out
}

#[derive(Debug, Clone)]
pub struct MultistartReport<T> {
    pub runs: Vec<(Start, NlpSolution<T>)>,
    /// Run with the lowest objective among optimal ones, or else the one
    /// closest to feasibility.
    pub best: usize,
}

impl<T: Scalar> MultistartReport<T> {
    pub fn best_solution(&self) -> &NlpSolution<T> {
        &self.runs[self.best].1
    }

    pub fn n_optimal(&self) -> usize {
        self.runs.iter().filter(|r| r.1.is_optimal()).count()
    }

    /// Largest minus smallest objective over optimal runs.
    pub fn spread(&self) -> Option<f64> {
        let objs: Vec<f64> = self
            .runs
            .iter()
            .filter(|r| r.1.is_optimal())
            .map(|r| r.1.objective.to_f64_lossy())
            .collect();
        let lo = objs.iter().copied().reduce(f64::min)?;
        let hi = objs.iter().copied().reduce(f64::max)?;
        Some(hi - lo)
    }

    pub fn agree(&self) -> bool {
        self.n_optimal() == self.runs.len() && self.spread().is_some_and(|s| s <= AGREEMENT_TOL)
    }
}

fn rank<T: Scalar>(s: &NlpSolution<T>) -> (bool, f64) {
    if s.is_optimal() {
        (false, s.objective.to_f64_lossy())
    } else {
        (true, s.max_constraint_violation.to_f64_lossy())
    }
}

/// Solves the assembled program from each start, `threads` at a time.
pub fn multistart<T: Scalar>(
    study: &Study<T>,
    config: &OptimizationConfig,
    nlp: &AssembledNlp<T>,
    starts: &[Start],
    opts: &IpmOptions,
    threads: usize,
) -> OptResult<MultistartReport<T>> {
    assert!(!starts.is_empty(), "at least one start");
    let mut problems = Vec::with_capacity(starts.len());
    for &s in starts {
        let mut p = nlp.problem.clone();
        p.x0 = start_point(study, config, &nlp.layout, s)?;
        problems.push(p);
    }
    let results: Mutex<Vec<Option<NlpSolution<T>>>> = Mutex::new(vec![None; starts.len()]);
    let threads = threads.clamp(1, starts.len());
    let next = Mutex::new(0usize);
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let k = {
                    let mut n = next.lock().expect("start counter");
                    let k = *n;
                    *n += 1;
                    k
                };
                let Some(p) = problems.get(k) else { break };
                let sol = solve_interior_point(p, opts);
                log::debug!("start {:?}: {} after {} iterations", starts[k], sol.status, sol.iterations);
                results.lock().expect("results")[k] = Some(sol);
            });
        }
    });
    let runs: Vec<(Start, NlpSolution<T>)> = starts
        .iter()
        .copied()
        .zip(results.into_inner().expect("results").into_iter().map(|s| s.expect("every start solved")))
        .collect();
    let best = (0..runs.len())
        .min_by(|&a, &b| rank(&runs[a].1).partial_cmp(&rank(&runs[b].1)).unwrap_or(std::cmp::Ordering::Equal))
        .expect("non-empty");
    Ok(MultistartReport { runs, best })
}

#[derive(Debug, Clone)]
pub struct OptimizeOutcome<T> {
    pub nlp: AssembledNlp<T>,
    pub report: MultistartReport<T>,
    /// Present when the best run is optimal.
    pub tunings: Option<ExtractedTunings>,
}

impl<T: Scalar> OptimizeOutcome<T> {
    pub fn solution(&self) -> &NlpSolution<T> {
        self.report.best_solution()
    }
}

/// Assembles, solves from every start and extracts the best tunings.
pub fn optimize<T: Scalar>(
    study: &Study<T>,
    config: &OptimizationConfig,
    opts: &IpmOptions,
    starts: &[Start],
    threads: usize,
) -> OptResult<OptimizeOutcome<T>> {
    let nlp = assemble_nlp(study, config)?;
    let report = multistart(study, config, &nlp, starts, opts, threads)?;
    let best = report.best_solution();
    let tunings = if best.is_optimal() {
        Some(extract_tunings(best, study, config, &nlp.layout)?)
    } else {
        None
    };
    Ok(OptimizeOutcome { nlp, report, tunings })
}
