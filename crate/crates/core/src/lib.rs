//! Noise-robust distributed dual gradient tracking for economic dispatch
//! over directed communication graphs.

pub mod engine;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod network;
pub mod noise;

pub use engine::{
    monte_carlo, run, run_trial, AlgoState, Algorithm, EngineError, HyperParams, MonteCarloResult, NoisePair, Problem,
    RunOptions, RunSpec, Trace, TrialSummary,
};
pub use metrics::IterationRecord;
pub use model::{solve_centralized, AgentCost, CentralSolution, EdpInstance, LocalCost, ModelError};
pub use network::{build_weights, mixing_diagnostics, perron_vectors, CommGraph, MixingReport, NetworkError, WeightPair};
pub use noise::{quantize, NoiseModel};
