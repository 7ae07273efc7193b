//! Stochastic density-shift collapse: state model, walk engine, event
//! sequencing, measurement scenarios and signaling checks.

pub mod collapse;
pub mod error;
pub mod experiment;
pub mod oracle;
pub mod rng;
pub mod scenario;
pub mod sequencer;
pub mod signaling;
pub mod state;
pub mod stats;
pub mod tolerance;

pub use collapse::{
    apply_shift, run_collapse, run_fixed_steps, ClampMode, CollapseEngine, CollapseOutcome, Direction, Interaction,
    InteractionStream, Shift, ShiftParams, StepDistribution, StepRecord, WalkEnd, WalkTrace,
};
pub use error::{Error, Result};
pub use experiment::{predict, run_experiment, ExperimentConfig, Prediction, RunOutput, RunReport};
pub use rng::{Draws, KeyedDraws, Purpose, TrialRng};
pub use scenario::{build_scenario, Scenario, ScenarioConfig, ScenarioKind};
pub use sequencer::{sequence_events, EventPoset, SequencerPolicy, SpacetimeEvent};
pub use signaling::{marginal_gap, ProbabilityRule, SignalingReport};
pub use state::{BasisRotation, Bifurcation, BranchSet, EntangledState};
