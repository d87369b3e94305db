//! Phasor-domain time simulation of inverter fault ride-through.
//!
//! Controllers are integrated as ODEs while the network is re-solved
//! algebraically at every derivative evaluation.

pub mod assess;
pub mod engine;
pub mod error;
pub mod events;
pub mod integrate;
pub mod trajectory;

pub use assess::{ride_through_assessment, DeviceAssessment, RideThroughReport, RiskInterval, RiskKind, Verdict};
pub use engine::{
    baseline_tunings, run_simulation, AlgebraicState, ControlScheme, SimConfig, SimOutput, Simulation,
    OVERCURRENT_TOL,
};
pub use error::{SimError, SimResult};
pub use events::{detect_events, Event, EventContext, EventKind, EventLog, StepSample};
pub use trajectory::Trajectory;

pub type Output = SimOutput<f64>;
pub type Traj = Trajectory<f64>;
