//! JSON run configuration.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::presets::{self, TOPOLOGY_SEED};
use super::HarnessError;
use crate::engine::{Algorithm, EngineError, HyperParams, NoisePair, Problem, RunOptions, RunSpec, DEFAULT_SUPPRESSION};
use crate::model::{AgentCost, EdpInstance};
use crate::network::CommGraph;
use crate::noise::NoiseModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSpec {
    pub agents: Vec<AgentCost>,
    pub demands: Vec<f64>,
}

/// Communication topology source.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySpec {
    /// The preset's topology (ring plus seeded chords for inline instances).
    #[default]
    Preset,
    /// 1-indexed `j i` edge-list file.
    EdgeList(PathBuf),
    /// Directed ring plus `shortcuts` seeded chords.
    Random { shortcuts: usize, seed: u64 },
}

fn default_suppression() -> f64 {
    DEFAULT_SUPPRESSION
}

fn default_trials() -> usize {
    1
}

fn default_threshold() -> f64 {
    0.1
}

fn default_m_weights() -> [f64; 2] {
    [1.0, 1.0]
}

/// A validated experiment description. Serialising it yields the full
/// snapshot with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<InstanceSpec>,
    #[serde(default)]
    pub topology: TopologySpec,
    pub algorithm: String,
    pub alpha: f64,
    #[serde(default = "default_suppression")]
    pub eta: f64,
    #[serde(default = "default_suppression")]
    pub gamma: f64,
    #[serde(default)]
    pub beta: f64,
    #[serde(rename = "K")]
    pub iterations: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub noise_dual: NoiseModel,
    #[serde(default)]
    pub noise_aux: NoiseModel,
    /// Fraction of the first-iteration error used for iterations-to-threshold.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_m_weights")]
    pub m_weights: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub early_stop_mismatch: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

fn invalid(field: &str, reason: impl Into<String>) -> HarnessError {
    HarnessError::Validation { field: field.to_string(), reason: reason.into() }
}

/// Parses and validates a JSON configuration document.
pub fn load_config(document: &str) -> Result<RunConfig, HarnessError> {
    let config: RunConfig = serde_json::from_str(document).map_err(|e| HarnessError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    config.validate()?;
    Ok(config)
}

impl RunConfig {
    /// Config for a preset with the documented defaults.
    pub fn for_preset(preset: &str, algorithm: Algorithm, alpha: f64, iterations: usize, seed: u64) -> Self {
        Self {
            preset: Some(preset.to_string()),
            instance: None,
            topology: TopologySpec::Preset,
            algorithm: algorithm.name().to_string(),
            alpha,
            eta: DEFAULT_SUPPRESSION,
            gamma: DEFAULT_SUPPRESSION,
            beta: 0.0,
            iterations,
            trials: 1,
            seed,
            noise_dual: NoiseModel::default(),
            noise_aux: NoiseModel::default(),
            threshold: default_threshold(),
            m_weights: default_m_weights(),
            early_stop_mismatch: None,
            out: None,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        match (&self.preset, &self.instance) {
            (Some(_), Some(_)) => return Err(invalid("preset", "give either preset or instance, not both")),
            (None, None) => return Err(invalid("preset", "a preset name or an inline instance is required")),
            (Some(name), None) if !presets::PRESET_NAMES.contains(&name.as_str()) => {
                return Err(HarnessError::UnknownPreset(name.clone()))
            }
            (None, Some(spec)) => {
                EdpInstance::new(spec.agents.clone(), spec.demands.clone())
                    .map_err(|e| invalid("instance", e.to_string()))?;
            }
            _ => {}
        }
        self.algorithm()?;
        self.params().validate().map_err(|e| match e {
            EngineError::InvalidParams { field, reason } => invalid(field, reason),
            other => invalid("params", other.to_string()),
        })?;
        if self.trials == 0 {
            return Err(invalid("trials", "at least one trial is required"));
        }
        for (field, model) in [("noise_dual", &self.noise_dual), ("noise_aux", &self.noise_aux)] {
            model.validate().map_err(|e| invalid(field, e.to_string()))?;
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(invalid("threshold", "must lie in (0,1)"));
        }
        if !self.m_weights.iter().all(|w| w.is_finite() && *w > 0.0) {
            return Err(invalid("m_weights", "weights must be positive"));
        }
        if let TopologySpec::EdgeList(path) = &self.topology {
            if !path.is_file() {
                return Err(invalid("topology", format!("edge list {} does not exist", path.display())));
            }
        }
        Ok(())
    }

    pub fn algorithm(&self) -> Result<Algorithm, HarnessError> {
        self.algorithm.parse().map_err(|e: EngineError| invalid("algorithm", e.to_string()))
    }

    pub fn params(&self) -> HyperParams {
        HyperParams {
            alpha: self.alpha,
            eta: self.eta,
            gamma: self.gamma,
            beta: self.beta,
            iterations: self.iterations,
        }
    }

    pub fn noise(&self) -> NoisePair {
        NoisePair { dual: self.noise_dual.clone(), aux: self.noise_aux.clone() }
    }

    pub fn run_spec(&self) -> Result<RunSpec, HarnessError> {
        let mut spec = RunSpec::new(self.algorithm()?, self.params(), self.noise(), self.seed);
        spec.m_weights = (self.m_weights[0], self.m_weights[1]);
        spec.options = RunOptions { early_stop_mismatch: self.early_stop_mismatch, ..RunOptions::default() };
        Ok(spec)
    }

    pub fn instance(&self) -> Result<EdpInstance, HarnessError> {
        match (&self.preset, &self.instance) {
            (Some(name), _) => Ok(presets::preset(name)?.0),
            (None, Some(spec)) => EdpInstance::new(spec.agents.clone(), spec.demands.clone())
                .map_err(|e| invalid("instance", e.to_string())),
            (None, None) => Err(invalid("preset", "a preset name or an inline instance is required")),
        }
    }

    pub fn graph(&self, n: usize) -> Result<CommGraph, HarnessError> {
        match &self.topology {
            TopologySpec::Preset => match &self.preset {
                Some(name) => Ok(presets::preset(name)?.1),
                None => Ok(presets::default_topology(n, TOPOLOGY_SEED)),
            },
            TopologySpec::EdgeList(path) => {
                let text = std::fs::read_to_string(path)?;
                Ok(CommGraph::parse_edge_list(&text, Some(n))?)
            }
            TopologySpec::Random { shortcuts, seed } => Ok(CommGraph::ring_with_shortcuts(n, *shortcuts, *seed)),
        }
    }

    pub fn problem(&self) -> Result<Problem, HarnessError> {
        let instance = self.instance()?;
        let graph = self.graph(instance.n())?;
        Ok(Problem::new(instance, graph)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }
}
