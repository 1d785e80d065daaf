//! Age of Incorrect Information under a transmission-rate budget: model,
//! Lagrangian threshold solver, rate analysis, value iteration and simulation.

pub mod error;
pub mod lagrangian;
pub mod model;
pub mod optimizer;
pub mod rate;
pub mod rvi;
pub mod sim;

pub use error::{AoiiError, Result};
pub use lagrangian::{
    g_for_threshold, g_wait, optimal_threshold, sigma_series, value_at, LagrangianEvaluator, LagrangianSolution,
    SeriesConfig, SigmaSeries, Threshold,
};
pub use model::{
    gamma, transition_dist, validate_boundedness, Action, ChannelModel, Combining, GammaPair, Penalty, PenaltyKind,
    SourceModel, State,
};
pub use optimizer::{
    exact_mixing_weight, linear_mixing_weight, mixture_rate, solve_cmdp, CmdpSolution, Diagnostics, Regime,
    SolverConfig, TracePoint,
};
pub use rate::{
    achieved_rate, m_table, mixed_chain_analysis, MTable, MixedAnalysis, RateAnalysis, RateConfig, StationaryDist,
    ThresholdRates,
};
pub use rvi::{check_structure, extract_thresholds, rvi_solve, RviConfig, RviSolution, StructureReport};
pub use sim::{replicate, simulate, split, Policy, SimReport};
