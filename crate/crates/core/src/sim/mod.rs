//! Desk-scale arterial corridor simulator.

mod engine;
pub mod fixtures;
mod log;
mod sampler;
mod scenario;
mod signal;

pub use engine::{run_scenario, run_scenario_with, run_with_stats, sample_speed_factor, SimOptions, SimStats};
pub use log::{
    aggregate_detector_counts, count_matrix, extract_travel_times, DetectorEvent, LogHeader, Origin,
    SimulationLog, VehicleRecord, LOG_SCHEMA_VERSION,
};
pub use sampler::{SamplerRanges, ScenarioSampler, Span, TmcMode, REAL_TMC};
pub use scenario::{
    Approach, CorridorSpec, Demand, Direction, DrivingBehavior, Movement, PhaseTiming, Scenario,
    SideDemand, TimingPlan, TurningRatios, DEFAULT_RING1, DEFAULT_RING2,
};
pub use signal::{signal_state, Indication, PhaseSet, SignalTable};
