//! Directed communication graphs, push/pull weight matrices, Perron vectors
//! and spectral step-size diagnostics.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("communication graph is not strongly connected")]
    NotStronglyConnected,
    #[error("edge ({from}, {to}) references an agent outside 1..={n}")]
    VertexOutOfRange { from: usize, to: usize, n: usize },
    #[error("self-loop on agent {0} (self weights are implicit)")]
    SelfLoop(usize),
    #[error("edge list line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("power iteration did not converge within {0} iterations")]
    NoConvergence(usize),
    #[error("graph needs at least one vertex")]
    Empty,
}

/// Directed graph over agents `0..n`. An edge `(j, i)` means `j` can send to `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommGraph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl CommGraph {
    pub fn new(n: usize) -> Self {
        Self { n, edges: BTreeSet::new() }
    }

    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, NetworkError> {
        let mut g = Self::new(n);
        for (j, i) in edges {
            g.add_edge(j, i)?;
        }
        Ok(g)
    }

    /// Adds `from -> to` (0-indexed). Duplicate edges are ignored.
    pub fn add_edge(&mut self, from: usize, to: usize) -> Result<(), NetworkError> {
        if from >= self.n || to >= self.n {
            return Err(NetworkError::VertexOutOfRange { from: from + 1, to: to + 1, n: self.n });
        }
        if from == to {
            return Err(NetworkError::SelfLoop(from + 1));
        }
        self.edges.insert((from, to));
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.edges.contains(&(from, to))
    }

    pub fn in_neighbors(&self, i: usize) -> Vec<usize> {
        self.edges.iter().filter(|e| e.1 == i).map(|e| e.0).collect()
    }

    pub fn out_neighbors(&self, i: usize) -> Vec<usize> {
        self.edges.iter().filter(|e| e.0 == i).map(|e| e.1).collect()
    }

    /// Directed ring `0 -> 1 -> ... -> n-1 -> 0`.
    pub fn directed_ring(n: usize) -> Self {
        let mut g = Self::new(n);
        if n > 1 {
            for i in 0..n {
                g.edges.insert((i, (i + 1) % n));
            }
        }
        g
    }

    /// Directed ring plus `shortcuts` distinct random chords, drawn from a
    /// seeded generator. The ring alone guarantees strong connectivity.
    pub fn ring_with_shortcuts(n: usize, shortcuts: usize, seed: u64) -> Self {
        let mut g = Self::directed_ring(n);
        let mut candidates: Vec<(usize, usize)> = (0..n)
            .flat_map(|j| (0..n).map(move |i| (j, i)))
            .filter(|&(j, i)| j != i && !g.has_edge(j, i))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        candidates.shuffle(&mut rng);
        g.edges.extend(candidates.into_iter().take(shortcuts));
        g
    }

    /// Parses `j i` pairs, 1-indexed, one per line; `#` starts a comment.
    /// The agent count is the largest index seen unless `n` is given.
    pub fn parse_edge_list(text: &str, n: Option<usize>) -> Result<Self, NetworkError> {
        let mut pairs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |reason: &str| NetworkError::Parse { line: lineno + 1, reason: reason.to_string() };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 2 {
                return Err(parse_err("expected two vertex indices"));
            }
            let j: usize = fields[0].parse().map_err(|_| parse_err("invalid source index"))?;
            let i: usize = fields[1].parse().map_err(|_| parse_err("invalid target index"))?;
            if j == 0 || i == 0 {
                return Err(parse_err("indices are 1-based"));
            }
            pairs.push((j - 1, i - 1));
        }
        let n = n.unwrap_or_else(|| pairs.iter().map(|&(j, i)| j.max(i) + 1).max().unwrap_or(0));
        if n == 0 {
            return Err(NetworkError::Empty);
        }
        Self::from_edges(n, pairs)
    }

    pub fn to_edge_list(&self) -> String {
        let mut out = format!("# {} agents\n", self.n);
        for (j, i) in &self.edges {
            let _ = writeln!(out, "{} {}", j + 1, i + 1);
        }
        out
    }

    pub fn is_strongly_connected(&self) -> bool {
        is_strongly_connected(self)
    }
}

fn reaches_all(n: usize, adj: &[Vec<usize>]) -> bool {
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    let mut count = 1;
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                count += 1;
                stack.push(w);
            }
        }
    }
    count == n
}

/// Forward and reverse reachability from vertex 0.
pub fn is_strongly_connected(graph: &CommGraph) -> bool {
    let n = graph.n;
    if n <= 1 {
        return true;
    }
    let mut fwd = vec![Vec::new(); n];
    let mut rev = vec![Vec::new(); n];
    for &(j, i) in &graph.edges {
        fwd[j].push(i);
        rev[i].push(j);
    }
    reaches_all(n, &fwd) && reaches_all(n, &rev)
}

/// Row-stochastic pull matrix `R` and column-stochastic push matrix `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightPair {
    pub r: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl WeightPair {
    pub fn n(&self) -> usize {
        self.r.nrows()
    }

    /// `(1 - eta) I + eta R`
    pub fn r_eta(&self, eta: f64) -> DMatrix<f64> {
        lazy(&self.r, eta)
    }

    /// `(1 - gamma) I + gamma C`
    pub fn c_gamma(&self, gamma: f64) -> DMatrix<f64> {
        lazy(&self.c, gamma)
    }
}

fn lazy(m: &DMatrix<f64>, weight: f64) -> DMatrix<f64> {
    let n = m.nrows();
    DMatrix::identity(n, n) * (1.0 - weight) + m * weight
}

/// `r_ij = 1/(|N_i^in| + 1)` for in-neighbours, `c_ji = 1/(|N_i^out| + 1)`
/// for out-neighbours, diagonals take the remaining mass.
pub fn build_weights(graph: &CommGraph) -> Result<WeightPair, NetworkError> {
    if graph.n == 0 {
        return Err(NetworkError::Empty);
    }
    if !graph.is_strongly_connected() {
        return Err(NetworkError::NotStronglyConnected);
    }
    let n = graph.n;
    let mut r = DMatrix::zeros(n, n);
    let mut c = DMatrix::zeros(n, n);
    for i in 0..n {
        let ins = graph.in_neighbors(i);
        let share = 1.0 / (ins.len() as f64 + 1.0);
        for &j in &ins {
            r[(i, j)] = share;
        }
        r[(i, i)] = 1.0 - share * ins.len() as f64;

        let outs = graph.out_neighbors(i);
        let share = 1.0 / (outs.len() as f64 + 1.0);
        for &j in &outs {
            c[(j, i)] = share;
        }
        c[(i, i)] = 1.0 - share * outs.len() as f64;
    }
    Ok(WeightPair { r, c })
}

/// Left Perron vector `u` of `R` and right Perron vector `v` of `C`, each
/// normalised to sum to `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerronVectors {
    pub u: DVector<f64>,
    pub v: DVector<f64>,
}

pub const PERRON_TOL: f64 = 1e-12;
pub const PERRON_MAX_ITERS: usize = 1_000_000;

/// Power iteration on the lazy matrix `(I + A) / 2`, which shares the Perron
/// vector of `A` and is aperiodic even when `A` is not.
fn perron(a: &DMatrix<f64>) -> Result<DVector<f64>, NetworkError> {
    let n = a.nrows();
    let lazy = lazy(a, 0.5);
    let mut x = DVector::from_element(n, 1.0);
    for _ in 0..PERRON_MAX_ITERS {
        let mut next = &lazy * &x;
        let total = next.sum();
        next *= n as f64 / total;
        let change = (&next - &x).amax();
        x = next;
        if change < PERRON_TOL {
            return Ok(x);
        }
    }
    Err(NetworkError::NoConvergence(PERRON_MAX_ITERS))
}

pub fn perron_vectors(weights: &WeightPair) -> Result<PerronVectors, NetworkError> {
    let u = perron(&weights.r.transpose())?;
    let v = perron(&weights.c)?;
    Ok(PerronVectors { u, v })
}

/// Advisory mixing and step-size report.
///
/// The contraction factors are stood in for by spectral radii of the deflated
/// matrices `R_eta - 1u'/n` and `C_gamma - v1'/n` (equal to the SLEMs); all
/// other norms are spectral 2-norms with unit equivalence constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MixingReport {
    pub slem_r_eta: f64,
    pub slem_c_gamma: f64,
    pub rho_surrogate: f64,
    pub stable: bool,
}

fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn norm2(m: &DMatrix<f64>) -> f64 {
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

pub fn mixing_diagnostics(
    weights: &WeightPair,
    eta: f64,
    gamma: f64,
    alpha: f64,
    lipschitz: f64,
) -> Result<MixingReport, NetworkError> {
    let n = weights.n();
    let nf = n as f64;
    let pv = perron_vectors(weights)?;
    let ones = DVector::from_element(n, 1.0);
    let eye = DMatrix::<f64>::identity(n, n);
    let proj_u = &ones * pv.u.transpose() / nf;
    let proj_v = &pv.v * ones.transpose() / nf;

    let tau_r = spectral_radius(&(weights.r_eta(eta) - &proj_u));
    let tau_c = spectral_radius(&(weights.c_gamma(gamma) - &proj_v));

    let p11 = (1.0 + tau_r * tau_r) / 2.0;
    let rho = if tau_r >= 1.0 || tau_c >= 1.0 {
        // no contraction in one block: P11 or P22 already reaches 1
        p11.max((1.0 + tau_c * tau_c) / 2.0)
    } else {
        let tau_u2 = (1.0 + tau_r * tau_r) / (1.0 - tau_r * tau_r) * norm2(&(&eye - &proj_u)).powi(2);
        let tau_v2 = (1.0 + tau_c * tau_c) / (1.0 - tau_c * tau_c) * norm2(&(&eye - &proj_v)).powi(2);
        let l2 = lipschitz * lipschitz;
        let r_minus_i = norm2(&(&weights.r - &eye)).powi(2);
        let p12 = 2.0 * alpha * alpha * tau_u2;
        let p21 = 3.0 * l2 * eta * eta * tau_v2 * r_minus_i;
        let p22 = 3.0 * l2 * tau_v2 * alpha * alpha + (1.0 + tau_c * tau_c) / 2.0;
        // nonnegative 2x2: the Perron root is the larger real eigenvalue
        0.5 * (p11 + p22 + ((p11 - p22).powi(2) + 4.0 * p12 * p21).sqrt())
    };
    Ok(MixingReport { slem_r_eta: tau_r, slem_c_gamma: tau_c, rho_surrogate: rho, stable: rho < 1.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn three_cycle() -> CommGraph {
        CommGraph::from_edges(3, [(0, 1), (1, 2), (2, 0)]).unwrap()
    }

    #[test]
    fn connectivity_examples() {
        let five = CommGraph::directed_ring(5);
        assert!(is_strongly_connected(&five));
        assert!(!is_strongly_connected(&CommGraph::new(2)));
        assert!(is_strongly_connected(&CommGraph::new(1)));
        let path = CommGraph::from_edges(3, [(0, 1), (1, 2)]).unwrap();
        assert!(!path.is_strongly_connected());
    }

    #[test]
    fn rejects_self_loops_and_out_of_range() {
        let mut g = CommGraph::new(3);
        assert_eq!(g.add_edge(1, 1), Err(NetworkError::SelfLoop(2)));
        assert!(matches!(g.add_edge(0, 3), Err(NetworkError::VertexOutOfRange { .. })));
    }

    #[test]
    fn three_cycle_weights() {
        let w = build_weights(&three_cycle()).unwrap();
        let expected_r = DMatrix::from_row_slice(3, 3, &[0.5, 0.0, 0.5, 0.5, 0.5, 0.0, 0.0, 0.5, 0.5]);
        let expected_c = DMatrix::from_row_slice(3, 3, &[0.5, 0.0, 0.5, 0.5, 0.5, 0.0, 0.0, 0.5, 0.5]);
        assert_eq!(w.r, expected_r);
        assert_eq!(w.c, expected_c);
    }

    #[test]
    fn two_node_and_single_node_weights() {
        let g = CommGraph::from_edges(2, [(0, 1), (1, 0)]).unwrap();
        let w = build_weights(&g).unwrap();
        assert_eq!(w.r, DMatrix::from_element(2, 2, 0.5));
        assert_eq!(w.c, DMatrix::from_element(2, 2, 0.5));
        let w = build_weights(&CommGraph::new(1)).unwrap();
        assert_eq!(w.r, DMatrix::from_element(1, 1, 1.0));
        assert_eq!(w.c, DMatrix::from_element(1, 1, 1.0));
        let pv = perron_vectors(&w).unwrap();
        assert_eq!(pv.u[0], 1.0);
        assert_eq!(pv.v[0], 1.0);
    }

    #[test]
    fn disconnected_graph_is_rejected() {
        assert_eq!(build_weights(&CommGraph::new(2)), Err(NetworkError::NotStronglyConnected));
    }

    #[test]
    fn doubly_stochastic_perron_is_uniform() {
        let pv = perron_vectors(&build_weights(&three_cycle()).unwrap()).unwrap();
        for k in 0..3 {
            assert_abs_diff_eq!(pv.u[k], 1.0, epsilon = 1e-10);
            assert_abs_diff_eq!(pv.v[k], 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn hand_solved_left_perron_vector() {
        let g = CommGraph::from_edges(3, [(0, 1), (1, 2), (2, 0), (0, 2)]).unwrap();
        let w = build_weights(&g).unwrap();
        let third = 1.0 / 3.0;
        let expected = DMatrix::from_row_slice(3, 3, &[0.5, 0.0, 0.5, 0.5, 0.5, 0.0, third, third, third]);
        assert_abs_diff_eq!(w.r, expected, epsilon = 1e-15);
        let pv = perron_vectors(&w).unwrap();
        assert_abs_diff_eq!(pv.u[0], 4.0 / 3.0, epsilon = 1e-10);
        assert_abs_diff_eq!(pv.u[1], 2.0 / 3.0, epsilon = 1e-10);
        assert_abs_diff_eq!(pv.u[2], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn edge_list_round_trip() {
        let text = "# ring\n1 2\n2 3 # chord\n\n3 1\n";
        let g = CommGraph::parse_edge_list(text, None).unwrap();
        assert_eq!(g, three_cycle());
        assert_eq!(CommGraph::parse_edge_list(&g.to_edge_list(), None).unwrap(), g);
        assert!(matches!(CommGraph::parse_edge_list("1 x\n", None), Err(NetworkError::Parse { line: 1, .. })));
        assert!(matches!(CommGraph::parse_edge_list("0 1\n", None), Err(NetworkError::Parse { .. })));
    }

    #[test]
    fn identity_mixing_is_flagged() {
        let w = build_weights(&three_cycle()).unwrap();
        let report = mixing_diagnostics(&w, 0.0, 0.0, 0.01, 12.5).unwrap();
        assert_abs_diff_eq!(report.slem_r_eta, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(report.slem_c_gamma, 1.0, epsilon = 1e-9);
        assert!(!report.stable);
        assert!(report.rho_surrogate.is_finite());
    }

    #[test]
    fn small_steps_are_stable() {
        let g = CommGraph::ring_with_shortcuts(14, 4, 3);
        let w = build_weights(&g).unwrap();
        let report = mixing_diagnostics(&w, 0.5, 0.5, 1e-7, 12.5).unwrap();
        assert!(report.slem_r_eta < 1.0 && report.slem_c_gamma < 1.0);
        assert!(report.stable, "{report:?}");
    }

    #[test]
    fn three_cycle_surrogate_values() {
        // hand evaluation: tau = 1/2, |I - J/3| = 1, |R - I|^2 = 3/4, so
        // P = [[0.625, 3.33e-4], [585.9, 0.7031]] with spectral radius ~1.107
        let w = build_weights(&three_cycle()).unwrap();
        let report = mixing_diagnostics(&w, 1.0, 1.0, 0.01, 12.5).unwrap();
        assert_abs_diff_eq!(report.slem_r_eta, 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(report.slem_c_gamma, 0.5, epsilon = 1e-9);
        let p11: f64 = 0.625;
        let tau_sq = 1.25 / 0.75;
        let p12 = 2.0 * 1e-4 * tau_sq;
        let p21 = 3.0 * 12.5f64.powi(2) * tau_sq * 0.75;
        let p22 = 3.0 * 12.5f64.powi(2) * tau_sq * 1e-4 + 0.625;
        let rho = 0.5 * (p11 + p22 + ((p11 - p22).powi(2) + 4.0 * p12 * p21).sqrt());
        assert_abs_diff_eq!(report.rho_surrogate, rho, epsilon = 1e-9);
        assert!(!report.stable);
        assert!(mixing_diagnostics(&w, 1.0, 1.0, 0.005, 12.5).unwrap().stable);
    }

    #[test]
    fn symmetric_regular_graph_gives_transposed_pair() {
        let mut g = CommGraph::directed_ring(6);
        for i in 0..6 {
            g.add_edge((i + 1) % 6, i).unwrap();
        }
        let w = build_weights(&g).unwrap();
        assert_abs_diff_eq!(w.r, w.c.transpose(), epsilon = 1e-15);
    }

    fn arb_connected_graph() -> impl Strategy<Value = CommGraph> {
        (1usize..=30, 0usize..40, any::<u64>())
            .prop_map(|(n, extra, seed)| CommGraph::ring_with_shortcuts(n, extra, seed))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn weights_are_stochastic(g in arb_connected_graph(), eta in 0.01f64..=1.0, gamma in 0.01f64..=1.0) {
            let w = build_weights(&g).unwrap();
            let n = g.n();
            let r_eta = w.r_eta(eta);
            let c_gamma = w.c_gamma(gamma);
            for k in 0..n {
                prop_assert!((w.r.row(k).sum() - 1.0).abs() < 1e-12);
                prop_assert!((w.c.column(k).sum() - 1.0).abs() < 1e-12);
                prop_assert!((r_eta.row(k).sum() - 1.0).abs() < 1e-12);
                prop_assert!((c_gamma.column(k).sum() - 1.0).abs() < 1e-12);
            }
            prop_assert!(w.r.iter().all(|&x| x >= 0.0) && w.c.iter().all(|&x| x >= 0.0));
            // sparsity follows the neighbour sets
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        prop_assert_eq!(w.r[(i, j)] > 0.0, g.has_edge(j, i));
                        prop_assert_eq!(w.c[(j, i)] > 0.0, g.has_edge(i, j));
                    }
                }
            }
        }

        #[test]
        fn perron_residuals(g in arb_connected_graph()) {
            let w = build_weights(&g).unwrap();
            let pv = perron_vectors(&w).unwrap();
            let n = g.n() as f64;
            prop_assert!((pv.u.sum() - n).abs() < 1e-9);
            prop_assert!((pv.v.sum() - n).abs() < 1e-9);
            prop_assert!((w.r.transpose() * &pv.u - &pv.u).amax() < 1e-9);
            prop_assert!((&w.c * &pv.v - &pv.v).amax() < 1e-9);
            prop_assert!(pv.u.iter().all(|&x| x >= 0.0) && pv.v.iter().all(|&x| x >= 0.0));
            prop_assert!(pv.u.dot(&pv.v) > 0.0);
        }
    }
}
