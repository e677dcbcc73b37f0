//! Queue-based grid simulator, demand profiles, trip metrics and classical controllers.

pub mod control;
pub mod flow;
pub mod metrics;
pub mod state;

pub use control::{max_pressure_actions, FixedTime};
pub use flow::{FlowPattern, FlowProfile, FlowSpec, GaussianComponent};
pub use metrics::{compute_adt, compute_att};
pub use state::{SignalState, SimState, Simulation, Vehicle, CONTROL_STEP_S, EPISODE_S, ROLLOUT_STEPS, YELLOW_S};
