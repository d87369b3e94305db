//! Co-tuning of inverter virtual impedances and ride-through presets as a
//! quadratically constrained program, with the interior-point solver, a
//! brute-force grid oracle and multistart driver.

pub mod assemble;
pub mod error;
pub mod extract;
pub mod ipm;
pub mod kkt;
pub mod oracle;
pub mod problem;
pub mod quad;
pub mod multistart;

pub use assemble::{assemble_nlp, AssembledNlp, NlpLayout, OptimizationConfig, Start, Tally};
pub use error::{OptError, OptResult};
pub use extract::{extract_tunings, ExtractedTunings};
pub use ipm::{solve_interior_point, IpmOptions, NlpSolution, SolveStatus};
pub use oracle::{grid_search_oracle, OracleGrid, OracleResult};
pub use multistart::{multistart, optimize, MultistartReport, OptimizeOutcome};
pub use problem::NlpProblem;
pub use quad::QuadExpr;

pub type Problem = NlpProblem<f64>;
pub type Solution = NlpSolution<f64>;
