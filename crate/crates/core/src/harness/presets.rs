//! Named experiment instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::HarnessError;
use crate::model::{AgentCost, EdpInstance};
use crate::network::CommGraph;

pub const PRESET_NAMES: [&str; 3] = ["ieee14", "ieee57", "toy1"];

/// Seed for the preset communication topologies.
pub const TOPOLOGY_SEED: u64 = 2024;
/// Seed for the synthetic 57-bus generator fleet.
pub const IEEE57_SEED: u64 = 57;

pub const IEEE14_TOTAL_DEMAND: f64 = 231.0;

/// Generator data of the 14-bus case: `(bus, a, b, c, w_lo, w_hi)`.
pub const IEEE14_GENERATORS: [(usize, f64, f64, f64, f64, f64); 5] = [
    (1, 0.04, 2.0, 0.0, 0.0, 80.0),
    (2, 0.03, 3.0, 0.0, 0.0, 90.0),
    (3, 0.035, 4.0, 0.0, 0.0, 70.0),
    (6, 0.03, 4.0, 0.0, 0.0, 70.0),
    (8, 0.04, 2.5, 0.0, 0.0, 80.0),
];

const IEEE57_GENERATOR_BUSES: [usize; 7] = [1, 2, 3, 6, 8, 9, 12];

/// Directed ring with `ceil(n/4)` seeded shortcut chords.
pub fn default_topology(n: usize, seed: u64) -> CommGraph {
    CommGraph::ring_with_shortcuts(n, n.div_ceil(4), seed)
}

/// 14 buses, generators per the table above, 16.5 MW of load on every bus.
pub fn ieee14() -> EdpInstance {
    let mut agents = vec![AgentCost::load_only(); 14];
    for (bus, a, b, c, lo, hi) in IEEE14_GENERATORS {
        agents[bus - 1] = AgentCost { a, b, c, w_lo: lo, w_hi: hi };
    }
    EdpInstance::new(agents, vec![IEEE14_TOTAL_DEMAND / 14.0; 14]).expect("preset data is valid")
}

/// 57 buses with seven synthetic generators; load is 60 % of total capacity,
/// spread evenly.
pub fn ieee57_with_seed(seed: u64) -> EdpInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agents = vec![AgentCost::load_only(); 57];
    for bus in IEEE57_GENERATOR_BUSES {
        let a = rng.random_range(0.02..=0.05);
        let b = rng.random_range(2.0..=4.5);
        let cap = rng.random_range(50.0..=100.0);
        agents[bus - 1] = AgentCost { a, b, c: 0.0, w_lo: 0.0, w_hi: cap };
    }
    let capacity: f64 = agents.iter().map(|a| a.w_hi).sum();
    EdpInstance::new(agents, vec![0.6 * capacity / 57.0; 57]).expect("preset data is valid")
}

pub fn ieee57() -> EdpInstance {
    ieee57_with_seed(IEEE57_SEED)
}

/// One agent, `f(w) = 0.5 w^2` on `[0, 10]`, demand 4.
pub fn toy1() -> EdpInstance {
    EdpInstance::new(vec![AgentCost { a: 0.5, b: 0.0, c: 0.0, w_lo: 0.0, w_hi: 10.0 }], vec![4.0])
        .expect("preset data is valid")
}

pub fn preset(name: &str) -> Result<(EdpInstance, CommGraph), HarnessError> {
    let instance = match name {
        "ieee14" => ieee14(),
        "ieee57" => ieee57(),
        "toy1" => toy1(),
        other => return Err(HarnessError::UnknownPreset(other.to_string())),
    };
    let graph = default_topology(instance.n(), TOPOLOGY_SEED);
    Ok((instance, graph))
}
