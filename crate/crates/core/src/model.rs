//! Economic dispatch problem data, the per-agent primal and dual maps, and a
//! centralized bisection solver used as ground truth.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("agent {agent}: {reason}")]
    InvalidCost { agent: usize, reason: String },
    #[error("demand vector has {demands} rows but there are {agents} agents")]
    DemandLength { agents: usize, demands: usize },
    #[error("instance has no agents")]
    Empty,
    #[error("decision dimension must be positive")]
    ZeroDimension,
    #[error("total demand {demand} outside the capacity range [{lower}, {upper}]")]
    InfeasibleDemand { demand: f64, lower: f64, upper: f64 },
}

/// A strictly convex, differentiable local cost restricted to a capacity box.
///
/// Only `value`, `gradient` and `bounds` are required. The default
/// [`LocalCost::primal_update`] solves the box-constrained subproblem by
/// bisection on the gradient, which works for any strictly increasing
/// gradient; quadratic costs override it with the closed form.
pub trait LocalCost {
    fn value(&self, w: f64) -> f64;
    fn gradient(&self, w: f64) -> f64;
    fn bounds(&self) -> (f64, f64);

    /// `argmin_{w in box} f(w) + w * x`.
    fn primal_update(&self, x: f64) -> f64 {
        let (lo, hi) = self.bounds();
        let target = -x;
        if lo >= hi || self.gradient(lo) >= target {
            return lo;
        }
        if self.gradient(hi) <= target {
            return hi;
        }
        let (mut a, mut b) = (lo, hi);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            if self.gradient(mid) < target {
                a = mid;
            } else {
                b = mid;
            }
        }
        0.5 * (a + b)
    }

    /// Gradient of the local dual function `F_i(x) = f*(-x) + x d`.
    fn dual_gradient(&self, demand: f64, x: f64) -> f64 {
        demand - self.primal_update(x)
    }

    /// Convex conjugate over the box, `sup_w (w * lambda - f(w))`.
    fn conjugate(&self, lambda: f64) -> f64 {
        let w = self.primal_update(-lambda);
        w * lambda - self.value(w)
    }

    /// True when the box is non-degenerate (the bus carries a generator).
    fn is_generator(&self) -> bool {
        let (lo, hi) = self.bounds();
        lo < hi
    }
}

/// Quadratic generation cost `a w^2 + b w + c` on `[w_lo, w_hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentCost {
    pub a: f64,
    pub b: f64,
    #[serde(default)]
    pub c: f64,
    pub w_lo: f64,
    pub w_hi: f64,
}

impl AgentCost {
    pub fn new(a: f64, b: f64, c: f64, w_lo: f64, w_hi: f64) -> Result<Self, ModelError> {
        let cost = Self { a, b, c, w_lo, w_hi };
        cost.validate(0)?;
        Ok(cost)
    }

    /// A bus without a generator: `w_lo = w_hi = 0`.
    pub fn load_only() -> Self {
        Self { a: 1.0, b: 0.0, c: 0.0, w_lo: 0.0, w_hi: 0.0 }
    }

    pub fn validate(&self, agent: usize) -> Result<(), ModelError> {
        let bad = |reason: &str| ModelError::InvalidCost { agent, reason: reason.to_string() };
        if !(self.a.is_finite() && self.a > 0.0) {
            return Err(bad("curvature a must be positive and finite"));
        }
        if !self.b.is_finite() || !self.c.is_finite() {
            return Err(bad("cost coefficients must be finite"));
        }
        if !(self.w_lo.is_finite() && self.w_hi.is_finite()) || self.w_lo > self.w_hi {
            return Err(bad("capacity box requires finite w_lo <= w_hi"));
        }
        Ok(())
    }

    /// Strong convexity modulus `mu = 2a`.
    pub fn strong_convexity(&self) -> f64 {
        2.0 * self.a
    }

    /// Lipschitz constant of the dual gradient, `1 / mu`.
    pub fn dual_lipschitz(&self) -> f64 {
        1.0 / self.strong_convexity()
    }

    pub fn marginal_cost(&self, w: f64) -> f64 {
        marginal_cost(self, w)
    }
}

impl LocalCost for AgentCost {
    fn value(&self, w: f64) -> f64 {
        self.a * w * w + self.b * w + self.c
    }

    fn gradient(&self, w: f64) -> f64 {
        2.0 * self.a * w + self.b
    }

    fn bounds(&self) -> (f64, f64) {
        (self.w_lo, self.w_hi)
    }

    fn primal_update(&self, x: f64) -> f64 {
        primal_update(self, x)
    }
}

pub fn marginal_cost(cost: &AgentCost, w: f64) -> f64 {
    2.0 * cost.a * w + cost.b
}

/// Closed-form primal recovery: `clamp((-x - b) / 2a, w_lo, w_hi)`.
pub fn primal_update(cost: &AgentCost, x: f64) -> f64 {
    ((-x - cost.b) / (2.0 * cost.a)).clamp(cost.w_lo, cost.w_hi)
}

pub fn dual_gradient(cost: &AgentCost, demand: f64, x: f64) -> f64 {
    -primal_update(cost, x) + demand
}

/// Problem data: one local cost per agent and an `n x p` demand matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EdpInstance<C = AgentCost> {
    agents: Vec<C>,
    demands: DMatrix<f64>,
}

impl EdpInstance<AgentCost> {
    /// Scalar (`p = 1`) instance with validated quadratic costs.
    pub fn new(agents: Vec<AgentCost>, demands: Vec<f64>) -> Result<Self, ModelError> {
        for (i, agent) in agents.iter().enumerate() {
            agent.validate(i)?;
        }
        let n = demands.len();
        Self::with_demand_matrix(agents, DMatrix::from_vec(n, 1, demands))
    }

    /// Largest dual-gradient Lipschitz constant over generator agents.
    pub fn dual_lipschitz(&self) -> f64 {
        self.agents
            .iter()
            .filter(|a| a.is_generator())
            .map(AgentCost::dual_lipschitz)
            .fold(0.0, f64::max)
    }
}

impl<C: LocalCost> EdpInstance<C> {
    pub fn with_demand_matrix(agents: Vec<C>, demands: DMatrix<f64>) -> Result<Self, ModelError> {
        if agents.is_empty() {
            return Err(ModelError::Empty);
        }
        if demands.nrows() != agents.len() {
            return Err(ModelError::DemandLength { agents: agents.len(), demands: demands.nrows() });
        }
        if demands.ncols() == 0 {
            return Err(ModelError::ZeroDimension);
        }
        Ok(Self { agents, demands })
    }

    pub fn n(&self) -> usize {
        self.agents.len()
    }

    pub fn dim(&self) -> usize {
        self.demands.ncols()
    }

    pub fn agents(&self) -> &[C] {
        &self.agents
    }

    pub fn demands(&self) -> &DMatrix<f64> {
        &self.demands
    }

    /// Column sums of the demand matrix, one total per decision component.
    pub fn total_demand(&self) -> Vec<f64> {
        self.demands.column_iter().map(|c| c.sum()).collect()
    }

    pub fn capacity_range(&self) -> (f64, f64) {
        self.agents.iter().fold((0.0, 0.0), |(lo, hi), a| {
            let (l, h) = a.bounds();
            (lo + l, hi + h)
        })
    }

    /// Strict feasibility: every component's total demand lies strictly
    /// inside the aggregate capacity range.
    pub fn satisfies_slater(&self) -> bool {
        let (lo, hi) = self.capacity_range();
        self.total_demand().iter().all(|&d| lo < d && d < hi)
    }

    /// Applies the primal map row-wise and componentwise to an `n x p` matrix
    /// of dual iterates.
    pub fn primal_response(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, c| self.agents[i].primal_update(x[(i, c)]))
    }

    /// Total cost of an `n x p` generation matrix.
    pub fn cost(&self, w: &DMatrix<f64>) -> f64 {
        let mut total = 0.0;
        for (i, agent) in self.agents.iter().enumerate() {
            for c in 0..w.ncols() {
                total += agent.value(w[(i, c)]);
            }
        }
        total
    }

    /// Dual objective `sum_i f_i*(-x) + x d_i` at a common scalar multiplier
    /// per component.
    pub fn dual_value(&self, x: &[f64]) -> f64 {
        let mut total = 0.0;
        for (i, agent) in self.agents.iter().enumerate() {
            for (c, &xc) in x.iter().enumerate() {
                total += agent.conjugate(-xc) + xc * self.demands[(i, c)];
            }
        }
        total
    }
}

/// Ground-truth optimum of the dispatch problem.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CentralSolution {
    /// `n x p` optimal generations.
    pub w_star: DMatrix<f64>,
    /// Optimal marginal price, one per component.
    pub lambda_star: Vec<f64>,
    pub f_star: f64,
}

impl CentralSolution {
    /// Price of the first component (the only one for scalar instances).
    pub fn price(&self) -> f64 {
        self.lambda_star[0]
    }

    pub fn generation(&self) -> Vec<f64> {
        self.w_star.column(0).iter().copied().collect()
    }
}

/// Solves the dispatch problem by bisection on the common price `lambda`
/// over the monotone aggregate response `sum_i clamp(grad^-1 f_i(lambda))`.
pub fn solve_centralized<C: LocalCost>(instance: &EdpInstance<C>) -> Result<CentralSolution, ModelError> {
    let (cap_lo, cap_hi) = instance.capacity_range();
    let n = instance.n();
    let p = instance.dim();
    let mut w_star = DMatrix::zeros(n, p);
    let mut lambda_star = Vec::with_capacity(p);

    for (c, demand) in instance.total_demand().into_iter().enumerate() {
        if !(cap_lo..=cap_hi).contains(&demand) {
            return Err(ModelError::InfeasibleDemand { demand, lower: cap_lo, upper: cap_hi });
        }
        let response = |lambda: f64| -> f64 {
            instance.agents.iter().map(|a| a.primal_update(-lambda)).sum()
        };
        // every agent sits at w_lo below `lo` and at w_hi above `hi`
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for agent in instance.agents.iter().filter(|a| a.is_generator()) {
            let (l, h) = agent.bounds();
            lo = lo.min(agent.gradient(l));
            hi = hi.max(agent.gradient(h));
        }
        if !lo.is_finite() {
            // no generators: demand must be the fixed aggregate output
            lo = 0.0;
            hi = 0.0;
        }
        let tol = 1e-9 * demand.abs().max(1.0);
        let mut lambda = 0.5 * (lo + hi);
        if (response(hi) - demand).abs() < tol {
            lambda = hi;
        } else if (response(lo) - demand).abs() < tol {
            lambda = lo;
        } else {
            for _ in 0..500 {
                lambda = 0.5 * (lo + hi);
                let gap = response(lambda) - demand;
                if gap.abs() < tol || lambda <= lo || lambda >= hi {
                    break;
                }
                if gap < 0.0 {
                    lo = lambda;
                } else {
                    hi = lambda;
                }
            }
        }
        for (i, agent) in instance.agents.iter().enumerate() {
            w_star[(i, c)] = agent.primal_update(-lambda);
        }
        lambda_star.push(lambda);
    }

    let f_star = instance.cost(&w_star);
    Ok(CentralSolution { w_star, lambda_star, f_star })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn bus1() -> AgentCost {
        AgentCost::new(0.04, 2.0, 0.0, 0.0, 80.0).unwrap()
    }

    fn table_one() -> EdpInstance {
        let gens = [
            (0, 0.04, 2.0, 80.0),
            (1, 0.03, 3.0, 90.0),
            (2, 0.035, 4.0, 70.0),
            (5, 0.03, 4.0, 70.0),
            (7, 0.04, 2.5, 80.0),
        ];
        let mut agents = vec![AgentCost::load_only(); 14];
        for (i, a, b, hi) in gens {
            agents[i] = AgentCost::new(a, b, 0.0, 0.0, hi).unwrap();
        }
        EdpInstance::new(agents, vec![16.5; 14]).unwrap()
    }

    #[test]
    fn marginal_cost_examples() {
        assert_abs_diff_eq!(marginal_cost(&bus1(), 50.0), 6.0, epsilon = 1e-12);
        assert_eq!(marginal_cost(&bus1(), 0.0), 2.0);
        let bus8 = AgentCost::new(0.04, 2.5, 0.0, 0.0, 80.0).unwrap();
        assert_abs_diff_eq!(marginal_cost(&bus8, 48.11), 6.3488, epsilon = 1e-9);
    }

    #[test]
    fn primal_update_examples() {
        assert_abs_diff_eq!(primal_update(&bus1(), -6.0), 50.0, epsilon = 1e-12);
        assert_eq!(primal_update(&bus1(), -2.0), 0.0);
        assert_eq!(primal_update(&bus1(), -20.0), 80.0);
    }

    #[test]
    fn dual_gradient_examples() {
        assert_abs_diff_eq!(dual_gradient(&bus1(), 16.5, -6.0), -33.5, epsilon = 1e-12);
        assert_eq!(dual_gradient(&bus1(), 16.5, -2.0), 16.5);
        assert_eq!(dual_gradient(&bus1(), 80.0, -100.0), 0.0);
    }

    #[test]
    fn rejects_invalid_costs() {
        assert!(AgentCost::new(0.0, 1.0, 0.0, 0.0, 1.0).is_err());
        assert!(AgentCost::new(1.0, 1.0, 0.0, 2.0, 1.0).is_err());
        assert!(AgentCost::new(1.0, f64::NAN, 0.0, 0.0, 1.0).is_err());
        assert!(matches!(
            EdpInstance::new(vec![bus1()], vec![1.0, 2.0]),
            Err(ModelError::DemandLength { .. })
        ));
    }

    #[test]
    fn load_only_bus_is_pinned_at_zero() {
        let bus = AgentCost::load_only();
        for x in [-100.0, -1.0, 0.0, 5.0] {
            assert_eq!(bus.primal_update(x), 0.0);
        }
        assert!(!bus.is_generator());
    }

    #[test]
    fn ieee14_oracle() {
        let sol = solve_centralized(&table_one()).unwrap();
        assert_abs_diff_eq!(sol.price(), 6.349, epsilon = 1e-3);
        let w = sol.generation();
        let expected = [(0, 54.36), (1, 55.82), (2, 33.56), (5, 39.15), (7, 48.11)];
        for (i, v) in expected {
            assert_abs_diff_eq!(w[i], v, epsilon = 0.01);
        }
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 231.0, epsilon = 1e-6);
    }

    #[test]
    fn single_agent_takes_whole_demand() {
        let inst = EdpInstance::new(vec![AgentCost::new(0.5, 0.0, 0.0, 0.0, 10.0).unwrap()], vec![4.0]).unwrap();
        let sol = solve_centralized(&inst).unwrap();
        assert_abs_diff_eq!(sol.w_star[(0, 0)], 4.0, epsilon = 1e-8);
        assert_abs_diff_eq!(sol.price(), 4.0, epsilon = 1e-8);
    }

    #[test]
    fn all_caps_binding_at_full_capacity() {
        let agents = vec![bus1(), AgentCost::new(0.03, 3.0, 0.0, 0.0, 90.0).unwrap()];
        let inst = EdpInstance::new(agents, vec![100.0, 70.0]).unwrap();
        let sol = solve_centralized(&inst).unwrap();
        assert_eq!(sol.generation(), vec![80.0, 90.0]);
    }

    #[test]
    fn infeasible_demand_is_reported() {
        let inst = EdpInstance::new(vec![bus1()], vec![81.0]).unwrap();
        assert!(matches!(solve_centralized(&inst), Err(ModelError::InfeasibleDemand { .. })));
        assert!(!inst.satisfies_slater());
    }

    #[test]
    fn strong_duality_on_table_one() {
        let inst = table_one();
        let sol = solve_centralized(&inst).unwrap();
        let dual = inst.dual_value(&[-sol.price()]);
        assert_abs_diff_eq!(dual, -sol.f_star, epsilon = 1e-6);
    }

    /// Non-quadratic cost exercising the generic bisection path.
    struct ExpCost {
        a: f64,
        e: f64,
        hi: f64,
    }

    impl LocalCost for ExpCost {
        fn value(&self, w: f64) -> f64 {
            self.a * w * w + self.e * (w / 10.0).exp()
        }
        fn gradient(&self, w: f64) -> f64 {
            2.0 * self.a * w + self.e / 10.0 * (w / 10.0).exp()
        }
        fn bounds(&self) -> (f64, f64) {
            (0.0, self.hi)
        }
    }

    #[test]
    fn generic_costs_solve_by_bisection() {
        let agents = vec![ExpCost { a: 0.02, e: 3.0, hi: 60.0 }, ExpCost { a: 0.05, e: 1.0, hi: 40.0 }];
        let inst = EdpInstance::with_demand_matrix(agents, DMatrix::from_vec(2, 1, vec![25.0, 25.0])).unwrap();
        let sol = solve_centralized(&inst).unwrap();
        let w = sol.generation();
        assert_abs_diff_eq!(w[0] + w[1], 50.0, epsilon = 1e-6);
        let g0 = inst.agents()[0].gradient(w[0]);
        let g1 = inst.agents()[1].gradient(w[1]);
        assert_abs_diff_eq!(g0, g1, epsilon = 1e-6);
    }

    fn arb_cost() -> impl Strategy<Value = AgentCost> {
        (0.001f64..1.0, -10.0f64..10.0, -50.0f64..50.0, 0.0f64..100.0)
            .prop_map(|(a, b, lo, width)| AgentCost { a, b, c: 0.0, w_lo: lo, w_hi: lo + width })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn primal_update_stays_in_box(cost in arb_cost(), x in -1e4f64..1e4) {
            let w = primal_update(&cost, x);
            prop_assert!(w >= cost.w_lo && w <= cost.w_hi);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1_000))]
        #[test]
        fn primal_update_beats_grid_search(cost in arb_cost(), x in -50.0f64..50.0) {
            let objective = |w: f64| cost.value(w) + w * x;
            let w = primal_update(&cost, x);
            let best = objective(w);
            let steps = 100_000;
            let width = cost.w_hi - cost.w_lo;
            for s in 0..=steps {
                let g = cost.w_lo + width * s as f64 / steps as f64;
                prop_assert!(objective(g) >= best - 1e-8);
            }
        }

        #[test]
        fn generic_bisection_matches_closed_form(cost in arb_cost(), x in -50.0f64..50.0) {
            struct Generic(AgentCost);
            impl LocalCost for Generic {
                fn value(&self, w: f64) -> f64 { self.0.value(w) }
                fn gradient(&self, w: f64) -> f64 { self.0.gradient(w) }
                fn bounds(&self) -> (f64, f64) { self.0.bounds() }
            }
            let generic = Generic(cost).primal_update(x);
            prop_assert!((generic - primal_update(&cost, x)).abs() < 1e-9 * (1.0 + generic.abs()));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn centralized_solution_meets_kkt(
            costs in prop::collection::vec(arb_cost(), 1..12),
            frac in 0.05f64..0.95,
        ) {
            let (lo, hi): (f64, f64) = costs.iter().fold((0.0, 0.0), |(l, h), c| (l + c.w_lo, h + c.w_hi));
            prop_assume!(hi - lo > 1e-3);
            let total = lo + frac * (hi - lo);
            let n = costs.len();
            let inst = EdpInstance::new(costs, vec![total / n as f64; n]).unwrap();
            let sol = solve_centralized(&inst).unwrap();
            let w = sol.generation();
            prop_assert!((w.iter().sum::<f64>() - total).abs() < 1e-6);
            for (agent, &wi) in inst.agents().iter().zip(&w) {
                if wi > agent.w_lo + 1e-6 && wi < agent.w_hi - 1e-6 {
                    prop_assert!((agent.marginal_cost(wi) - sol.price()).abs() < 1e-6);
                }
            }
            let dual = inst.dual_value(&[-sol.price()]);
            prop_assert!((dual + sol.f_star).abs() < 1e-6 * (1.0 + sol.f_star.abs()));
        }
    }
}
