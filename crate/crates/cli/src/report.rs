//! Machine-readable run summaries.

use std::path::Path;

use serde::Serialize;
use stvs_sim::DeviceAssessment;

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub command: String,
    pub scenario: String,
    pub verdicts: Vec<FaultVerdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub moment_errors: Vec<MomentErrorEntry>,
    pub outputs: Vec<String>,
}

impl RunReport {
    pub fn new(command: &str, scenario: &str) -> Self {
        Self {
            command: command.into(),
            scenario: scenario.into(),
            verdicts: Vec::new(),
            optimizer: None,
            moment_errors: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn secure(&self) -> bool {
        self.verdicts.iter().all(|v| v.secure)
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serialises");
        std::fs::write(path, text + "\n")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FaultVerdict {
    pub fault: String,
    pub scheme: String,
    pub secure: bool,
    /// Security of the three algebraic moments, when they were evaluated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub analytic_secure: Option<bool>,
    pub max_current: Vec<f64>,
    pub longest_overcurrent_steps: Vec<usize>,
    pub devices: Vec<DeviceAssessment>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimizerSummary {
    pub status: String,
    pub objective: f64,
    pub constraint_violation: f64,
    pub kkt_residual: f64,
    pub solution_time_s: f64,
    pub iterations: usize,
    pub variables: usize,
    pub equalities: usize,
    pub inequalities: usize,
    pub starts: usize,
    pub optimal_starts: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective_spread: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentErrorEntry {
    pub fault: String,
    pub moment: String,
    pub max: f64,
    pub mean: f64,
}

/// Objective, violation, time and iterations in fixed-width columns.
pub fn table1(system: usize, s: &OptimizerSummary) -> String {
    format!(
        "{:<8} {:>12} {:>22} {:>17} {:>10}\n{:<8} {:>12.4e} {:>22.3e} {:>17.4} {:>10}\n",
        "System",
        "Objective",
        "Constraint violation",
        "Solution time/s",
        "Iteration",
        system,
        s.objective,
        s.constraint_violation,
        s.solution_time_s,
        s.iterations
    )
}
