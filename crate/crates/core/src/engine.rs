//! Iteration state machines for RDDGT, its momentum variant and the noisy
//! gradient-tracking baseline, plus the single-run and Monte Carlo drivers.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{self, IterationRecord};
use crate::model::{solve_centralized, AgentCost, CentralSolution, EdpInstance, LocalCost, ModelError};
use crate::network::{build_weights, perron_vectors, CommGraph, NetworkError, PerronVectors, WeightPair};
use crate::noise::{NoiseModel, RngStream, StreamId, UpdateSite};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid parameter {field}: {reason}")]
    InvalidParams { field: &'static str, reason: String },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("unknown algorithm `{0}` (expected rddgt, rddgt_n or baseline_gt)")]
    UnknownAlgorithm(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Rddgt,
    RddgtN,
    BaselineGt,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Rddgt, Algorithm::RddgtN, Algorithm::BaselineGt];

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Rddgt => "rddgt",
            Algorithm::RddgtN => "rddgt_n",
            Algorithm::BaselineGt => "baseline_gt",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| EngineError::UnknownAlgorithm(s.to_string()))
    }
}

pub const DEFAULT_SUPPRESSION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub alpha: f64,
    pub eta: f64,
    pub gamma: f64,
    pub beta: f64,
    pub iterations: usize,
}

impl HyperParams {
    pub fn new(alpha: f64, iterations: usize) -> Self {
        Self { alpha, eta: DEFAULT_SUPPRESSION, gamma: DEFAULT_SUPPRESSION, beta: 0.0, iterations }
    }

    pub fn with_suppression(mut self, eta: f64, gamma: f64) -> Self {
        self.eta = eta;
        self.gamma = gamma;
        self
    }

    pub fn with_momentum(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |field, reason: &str| Err(EngineError::InvalidParams { field, reason: reason.into() });
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return bad("alpha", "stepsize must be positive");
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return bad("eta", "suppression outside (0,1]");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma", "suppression outside (0,1]");
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return bad("beta", "momentum must be >= 0");
        }
        if self.iterations == 0 {
            return bad("K", "iteration budget must be positive");
        }
        Ok(())
    }
}

/// Disturbance models for the dual (pull) and auxiliary (push) exchanges.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NoisePair {
    pub dual: NoiseModel,
    pub aux: NoiseModel,
}

impl NoisePair {
    pub fn both(model: NoiseModel) -> Self {
        Self { dual: model.clone(), aux: model }
    }

    pub fn silent() -> Self {
        Self::both(NoiseModel::None)
    }
}

/// Iterates of every agent, stacked as `n x p` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgoState {
    pub x: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub s_prev: DMatrix<f64>,
    pub x_hat: DMatrix<f64>,
    /// Gradient tracker of the baseline method; unused by RDDGT.
    pub y: DMatrix<f64>,
    pub k: usize,
}

/// Disturbances injected during one iteration, exactly as applied.
#[derive(Debug, Clone, PartialEq)]
pub struct StepNoiseLog {
    pub xi: DMatrix<f64>,
    pub eps: DMatrix<f64>,
    pub clamps: u64,
}

/// `x = w = 0`, `s = d`, previous auxiliary zero.
pub fn init_state<C: LocalCost>(instance: &EdpInstance<C>) -> AlgoState {
    let (n, p) = (instance.n(), instance.dim());
    let zeros = DMatrix::zeros(n, p);
    AlgoState {
        x: zeros.clone(),
        w: zeros.clone(),
        s: instance.demands().clone(),
        s_prev: zeros.clone(),
        x_hat: zeros.clone(),
        y: zeros,
        k: 0,
    }
}

/// Baseline start: tracker initialised to the true dual gradient at `x = 0`.
pub fn init_baseline_state<C: LocalCost>(instance: &EdpInstance<C>) -> AlgoState {
    let mut state = init_state(instance);
    state.y = dual_gradients(instance, &state.x);
    state
}

/// Row `i` is `d_i - argmin_w f_i(w) + w x_i`.
pub fn dual_gradients<C: LocalCost>(instance: &EdpInstance<C>, x: &DMatrix<f64>) -> DMatrix<f64> {
    instance.demands() - instance.primal_response(x)
}

/// Per-agent random streams for both exchange sites of one trial.
#[derive(Debug, Clone)]
pub struct AgentStreams {
    dual: Vec<RngStream>,
    aux: Vec<RngStream>,
}

impl AgentStreams {
    pub fn new(seed: u64, trial: u32, n: usize) -> Self {
        let make = |site| {
            (0..n)
                .map(|agent| RngStream::new(seed, StreamId { trial, agent: agent as u32, site }))
                .collect()
        };
        Self { dual: make(UpdateSite::Dual), aux: make(UpdateSite::Aux) }
    }
}

/// `mix * v` plus the disturbance drawn for each agent's received row.
fn noisy_mix(
    mix: &DMatrix<f64>,
    v: &DMatrix<f64>,
    model: &NoiseModel,
    streams: &mut [RngStream],
) -> (DMatrix<f64>, DMatrix<f64>, u64) {
    let mixed = mix * v;
    let (n, p) = mixed.shape();
    let mut delta = DMatrix::zeros(n, p);
    let mut clamps = 0;
    if !matches!(model, NoiseModel::None) {
        let mut payload = vec![0.0; p];
        let mut out = vec![0.0; p];
        for (i, stream) in streams.iter_mut().enumerate() {
            for c in 0..p {
                payload[c] = mixed[(i, c)];
            }
            clamps += model.sample_disturbance(&payload, stream, &mut out);
            for c in 0..p {
                delta[(i, c)] = out[c];
            }
        }
    }
    (mixed, delta, clamps)
}

fn check_shapes<C: LocalCost>(
    state: &AlgoState,
    instance: &EdpInstance<C>,
    weights: &WeightPair,
    streams: &AgentStreams,
) -> Result<(), EngineError> {
    let n = instance.n();
    let shape = (n, instance.dim());
    if weights.r.shape() != (n, n) || weights.c.shape() != (n, n) {
        return Err(EngineError::ShapeMismatch(format!("weights are {:?} for {n} agents", weights.r.shape())));
    }
    for (name, m) in [("x", &state.x), ("s", &state.s), ("s_prev", &state.s_prev), ("x_hat", &state.x_hat), ("y", &state.y)] {
        if m.shape() != shape {
            return Err(EngineError::ShapeMismatch(format!("state.{name} is {:?}, expected {shape:?}", m.shape())));
        }
    }
    if streams.dual.len() != n || streams.aux.len() != n {
        return Err(EngineError::ShapeMismatch(format!("{} random streams for {n} agents", streams.dual.len())));
    }
    Ok(())
}

/// Suppressed, noisy dual step `(1-eta) X + eta (R X + Xi) - alpha (S - S_prev)`.
fn dual_candidate(
    state: &AlgoState,
    weights: &WeightPair,
    params: &HyperParams,
    noise: &NoiseModel,
    streams: &mut AgentStreams,
) -> (DMatrix<f64>, DMatrix<f64>, u64) {
    let (mixed, xi, clamps) = noisy_mix(&weights.r, &state.x, noise, &mut streams.dual);
    let x_new = &state.x * (1.0 - params.eta) + (mixed + &xi) * params.eta - (&state.s - &state.s_prev) * params.alpha;
    (x_new, xi, clamps)
}

/// Primal recovery and the noise-tracing auxiliary update for a given `X+`.
#[allow(clippy::too_many_arguments)]
fn finish_step<C: LocalCost>(
    state: &AlgoState,
    instance: &EdpInstance<C>,
    weights: &WeightPair,
    params: &HyperParams,
    noise: &NoiseModel,
    streams: &mut AgentStreams,
    x_new: DMatrix<f64>,
    x_hat: DMatrix<f64>,
) -> (AlgoState, DMatrix<f64>, u64) {
    let w_new = instance.primal_response(&x_new);
    let (mixed, eps, clamps) = noisy_mix(&weights.c, &state.s, noise, &mut streams.aux);
    let s_new = &state.s * (1.0 - params.gamma) + (mixed + &eps) * params.gamma - &w_new + instance.demands();
    let next = AlgoState {
        x: x_new,
        w: w_new,
        s: s_new,
        s_prev: state.s.clone(),
        x_hat,
        y: state.y.clone(),
        k: state.k + 1,
    };
    (next, eps, clamps)
}

/// One RDDGT iteration (dual, primal, auxiliary updates).
pub fn rddgt_step<C: LocalCost>(
    state: &AlgoState,
    instance: &EdpInstance<C>,
    weights: &WeightPair,
    params: &HyperParams,
    noise: &NoisePair,
    streams: &mut AgentStreams,
) -> Result<(AlgoState, StepNoiseLog), EngineError> {
    check_shapes(state, instance, weights, streams)?;
    let (x_new, xi, c1) = dual_candidate(state, weights, params, &noise.dual, streams);
    let x_hat = x_new.clone();
    let (next, eps, c2) = finish_step(state, instance, weights, params, &noise.aux, streams, x_new, x_hat);
    Ok((next, StepNoiseLog { xi, eps, clamps: c1 + c2 }))
}

/// RDDGT with Nesterov extrapolation on the dual iterate.
pub fn rddgt_n_step<C: LocalCost>(
    state: &AlgoState,
    instance: &EdpInstance<C>,
    weights: &WeightPair,
    params: &HyperParams,
    noise: &NoisePair,
    streams: &mut AgentStreams,
) -> Result<(AlgoState, StepNoiseLog), EngineError> {
    check_shapes(state, instance, weights, streams)?;
    let (x_hat, xi, c1) = dual_candidate(state, weights, params, &noise.dual, streams);
    let x_new = if params.beta == 0.0 { x_hat.clone() } else { &x_hat + (&x_hat - &state.x_hat) * params.beta };
    let (next, eps, c2) = finish_step(state, instance, weights, params, &noise.aux, streams, x_new, x_hat);
    Ok((next, StepNoiseLog { xi, eps, clamps: c1 + c2 }))
}

/// Noisy push-pull gradient tracking, the comparison method.
pub fn baseline_gt_step<C: LocalCost>(
    state: &AlgoState,
    instance: &EdpInstance<C>,
    weights: &WeightPair,
    params: &HyperParams,
    noise: &NoisePair,
    streams: &mut AgentStreams,
) -> Result<(AlgoState, StepNoiseLog), EngineError> {
    check_shapes(state, instance, weights, streams)?;
    let (mixed, xi, c1) = noisy_mix(&weights.r, &state.x, &noise.dual, &mut streams.dual);
    let x_new = mixed + &xi - &state.y * params.alpha;
    let grad_old = dual_gradients(instance, &state.x);
    let w_new = instance.primal_response(&x_new);
    let grad_new = instance.demands() - &w_new;
    let (mixed, eps, c2) = noisy_mix(&weights.c, &state.y, &noise.aux, &mut streams.aux);
    let y_new = mixed + &eps + grad_new - grad_old;
    let next = AlgoState {
        x_hat: x_new.clone(),
        x: x_new,
        w: w_new,
        s: state.s.clone(),
        s_prev: state.s_prev.clone(),
        y: y_new,
        k: state.k + 1,
    };
    Ok((next, StepNoiseLog { xi, eps, clamps: c1 + c2 }))
}

/// Everything fixed across runs on one instance and topology.
#[derive(Debug, Clone)]
pub struct Problem<C = AgentCost> {
    pub instance: EdpInstance<C>,
    pub graph: CommGraph,
    pub weights: WeightPair,
    pub perron: PerronVectors,
    pub solution: CentralSolution,
}

impl<C: LocalCost> Problem<C> {
    pub fn new(instance: EdpInstance<C>, graph: CommGraph) -> Result<Self, EngineError> {
        if graph.n() != instance.n() {
            return Err(EngineError::ShapeMismatch(format!(
                "graph has {} agents, instance has {}",
                graph.n(),
                instance.n()
            )));
        }
        let weights = build_weights(&graph)?;
        let perron = perron_vectors(&weights)?;
        let solution = solve_centralized(&instance)?;
        Ok(Self { instance, graph, weights, perron, solution })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunOptions {
    /// Keep every iteration's injected disturbances.
    pub record_noise: bool,
    /// Keep every iterate (index 0 is the initial state).
    pub record_states: bool,
    /// Stop once the power mismatch drops below this value.
    pub early_stop_mismatch: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub algorithm: Algorithm,
    pub params: HyperParams,
    pub noise: NoisePair,
    pub seed: u64,
    /// Weights `(a, b)` of the optimality and consensus terms in `M(k)`.
    pub m_weights: (f64, f64),
    pub options: RunOptions,
}

impl RunSpec {
    pub fn new(algorithm: Algorithm, params: HyperParams, noise: NoisePair, seed: u64) -> Self {
        Self { algorithm, params, noise, seed, m_weights: (1.0, 1.0), options: RunOptions::default() }
    }
}

/// Metric series of one run, or the trial-wise mean of a Monte Carlo batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub records: Vec<IterationRecord>,
    /// Standard errors across trials (all zero for a single run).
    pub stderr: Vec<IterationRecord>,
    pub trials: usize,
    pub noise_log: Vec<StepNoiseLog>,
    pub states: Vec<AlgoState>,
    pub clamp_count: u64,
}

impl Trace {
    pub fn series(&self, pick: impl Fn(&IterationRecord) -> f64) -> Vec<f64> {
        self.records.iter().map(pick).collect()
    }

    pub fn last(&self) -> &IterationRecord {
        self.records.last().expect("trace has at least one record")
    }
}

struct Recorder<'a, C> {
    problem: &'a Problem<C>,
    totals: Vec<f64>,
    ones: DVector<f64>,
    m_weights: (f64, f64),
    m_sum: f64,
}

impl<'a, C: LocalCost> Recorder<'a, C> {
    fn new(problem: &'a Problem<C>, m_weights: (f64, f64)) -> Self {
        Self {
            problem,
            totals: problem.instance.total_demand(),
            ones: DVector::from_element(problem.instance.n(), 1.0),
            m_weights,
            m_sum: 0.0,
        }
    }

    fn record(&mut self, prev: &AlgoState, state: &AlgoState, algorithm: Algorithm) -> IterationRecord {
        let inst = &self.problem.instance;
        let n = inst.n() as f64;
        let means = metrics::weighted_mean(&state.x, &self.problem.perron.u).expect("shape checked");
        let consensus_err = metrics::consensus_error(&state.x, &self.problem.perron.u).expect("shape checked");
        let consensus_err_plain = metrics::consensus_error(&state.x, &self.ones).expect("shape checked");

        // grad F(xbar) = sum_i d_i - w_i(xbar)
        let mut grad_norm_sq = 0.0;
        for (c, &xbar) in means.weighted.iter().enumerate() {
            let out: f64 = inst.agents().iter().map(|a| a.primal_update(xbar)).sum();
            grad_norm_sq += (self.totals[c] - out).powi(2);
        }

        let tracker = match algorithm {
            Algorithm::BaselineGt => state.y.row_sum(),
            _ => state.s.row_sum() - prev.s.row_sum(),
        };
        let true_grad = (inst.demands() - &state.w).row_sum();
        let tracking_sq = (tracker - true_grad).map(|v| v / n).norm_squared();

        let (a, b) = self.m_weights;
        self.m_sum += a * grad_norm_sq + b * consensus_err * consensus_err;
        IterationRecord {
            k: state.k,
            consensus_err,
            consensus_err_plain,
            grad_norm_sq,
            mismatch: metrics::power_mismatch(&state.w, &self.totals),
            err_to_opt: metrics::error_to_opt(&state.w, &self.problem.solution.w_star).expect("shape checked"),
            m_running: self.m_sum / state.k as f64,
            n_metric: metrics::n_metric(&state.w, inst),
            tracking_sq,
        }
    }
}

/// Executes one seeded trial of `spec`.
pub fn run_trial<C: LocalCost>(problem: &Problem<C>, spec: &RunSpec, trial: u32) -> Result<Trace, EngineError> {
    spec.params.validate()?;
    spec.noise.dual.validate().map_err(|e| EngineError::InvalidParams { field: "noise_dual", reason: e.to_string() })?;
    spec.noise.aux.validate().map_err(|e| EngineError::InvalidParams { field: "noise_aux", reason: e.to_string() })?;
    if !problem.graph.is_strongly_connected() {
        return Err(NetworkError::NotStronglyConnected.into());
    }
    let inst = &problem.instance;
    let mut streams = AgentStreams::new(spec.seed, trial, inst.n());
    let mut state = match spec.algorithm {
        Algorithm::BaselineGt => init_baseline_state(inst),
        _ => init_state(inst),
    };
    let step = match spec.algorithm {
        Algorithm::Rddgt => rddgt_step::<C>,
        Algorithm::RddgtN => rddgt_n_step::<C>,
        Algorithm::BaselineGt => baseline_gt_step::<C>,
    };
    let mut recorder = Recorder::new(problem, spec.m_weights);
    let k_max = spec.params.iterations;
    let mut records = Vec::with_capacity(k_max);
    let mut noise_log = Vec::new();
    let mut states = Vec::new();
    let mut clamp_count = 0;
    if spec.options.record_states {
        states.push(state.clone());
    }
    for _ in 0..k_max {
        let (next, log) = step(&state, inst, &problem.weights, &spec.params, &spec.noise, &mut streams)?;
        let record = recorder.record(&state, &next, spec.algorithm);
        clamp_count += log.clamps;
        if spec.options.record_noise {
            noise_log.push(log);
        }
        if spec.options.record_states {
            states.push(next.clone());
        }
        records.push(record);
        state = next;
        if spec.options.early_stop_mismatch.is_some_and(|tol| record.mismatch < tol) {
            break;
        }
    }
    let stderr = records.iter().map(|r| IterationRecord { k: r.k, ..Default::default() }).collect();
    Ok(Trace { records, stderr, trials: 1, noise_log, states, clamp_count })
}

/// Single seeded run (trial 0).
pub fn run<C: LocalCost>(problem: &Problem<C>, spec: &RunSpec) -> Result<Trace, EngineError> {
    run_trial(problem, spec, 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialSummary {
    pub trial: u32,
    pub final_err_to_opt: f64,
    pub min_err_to_opt: f64,
    pub final_mismatch: f64,
    pub steady_state_err: f64,
    pub clamp_count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloResult {
    /// Trial-wise mean records with their standard errors.
    pub trace: Trace,
    pub summaries: Vec<TrialSummary>,
}

/// Fraction of trailing iterations averaged for steady-state summaries.
pub const STEADY_STATE_FRACTION: f64 = 0.1;

/// Runs `trials` independent replicas (trial `t` uses streams keyed by
/// `(seed, t)`) in parallel and reduces them in trial order.
pub fn monte_carlo<C: LocalCost + Sync>(problem: &Problem<C>, spec: &RunSpec, trials: usize) -> Result<MonteCarloResult, EngineError> {
    if trials == 0 {
        return Err(EngineError::InvalidParams { field: "trials", reason: "need at least one trial".into() });
    }
    let mut light = spec.clone();
    light.options.record_noise = false;
    light.options.record_states = false;
    let traces = (0..trials as u32)
        .into_par_iter()
        .map(|t| run_trial(problem, &light, t))
        .collect::<Result<Vec<_>, _>>()?;

    let summaries = traces
        .iter()
        .enumerate()
        .map(|(t, tr)| {
            let errs = tr.series(|r| r.err_to_opt);
            TrialSummary {
                trial: t as u32,
                final_err_to_opt: tr.last().err_to_opt,
                min_err_to_opt: errs.iter().copied().fold(f64::INFINITY, f64::min),
                final_mismatch: tr.last().mismatch,
                steady_state_err: metrics::tail_mean(&errs, STEADY_STATE_FRACTION),
                clamp_count: tr.clamp_count,
            }
        })
        .collect();
    let clamp_count = traces.iter().map(|t| t.clamp_count).sum();
    let all: Vec<Vec<IterationRecord>> = traces.into_iter().map(|t| t.records).collect();
    let (records, stderr) = metrics::aggregate(&all);
    Ok(MonteCarloResult {
        trace: Trace { records, stderr, trials, noise_log: Vec::new(), states: Vec::new(), clamp_count },
        summaries,
    })
}
