use nalgebra::DMatrix;
use proptest::prelude::*;
use rddgt::engine::{dual_gradients, monte_carlo, run, run_trial, Algorithm, HyperParams, NoisePair, Problem, RunSpec};
use rddgt::harness::presets;
use rddgt::noise::NoiseModel;

fn problem(name: &str) -> Problem {
    let (inst, graph) = presets::preset(name).unwrap();
    Problem::new(inst, graph).unwrap()
}

fn col_sum(m: &DMatrix<f64>) -> f64 {
    m.column(0).sum()
}

fn traced(algorithm: Algorithm, params: HyperParams, noise: NoisePair, seed: u64) -> RunSpec {
    let mut spec = RunSpec::new(algorithm, params, noise, seed);
    spec.options.record_noise = true;
    spec.options.record_states = true;
    spec
}

#[test]
fn noise_tracing_identity_holds_every_iteration() {
    let p = problem("ieee14");
    let n = p.instance.n() as f64;
    for seed in 0..10 {
        let params = HyperParams::new(0.01, 400).with_suppression(0.7, 0.4);
        let spec = traced(Algorithm::Rddgt, params, NoisePair::both(NoiseModel::Gaussian { sigma: 1.0 }), seed);
        let trace = run(&p, &spec).unwrap();
        for k in 0..trace.noise_log.len() {
            let (prev, next) = (&trace.states[k], &trace.states[k + 1]);
            let lhs = (col_sum(&next.s) - col_sum(&prev.s)) / n;
            let grad = dual_gradients(&p.instance, &next.x);
            let rhs = col_sum(&grad) / n + params.gamma * col_sum(&trace.noise_log[k].eps) / n;
            assert!((lhs - rhs).abs() <= 1e-9, "seed {seed} k {k}: {lhs} vs {rhs}");
            // conservation of the column sum
            let conserved = col_sum(&prev.s) + col_sum(&(p.instance.demands() - &next.w)) + params.gamma * col_sum(&trace.noise_log[k].eps);
            assert!((col_sum(&next.s) - conserved).abs() <= 1e-10 * n * col_sum(&next.s).abs().max(1.0));
        }
    }
}

#[test]
fn baseline_tracker_accumulates_noise() {
    let p = problem("ieee14");
    let spec = traced(Algorithm::BaselineGt, HyperParams::new(0.01, 300), NoisePair::both(NoiseModel::default()), 5);
    let trace = run(&p, &spec).unwrap();
    let mut acc = 0.0;
    for k in 1..trace.states.len() {
        acc += col_sum(&trace.noise_log[k - 1].eps);
        let s = &trace.states[k];
        let gap = col_sum(&s.y) - col_sum(&dual_gradients(&p.instance, &s.x));
        assert!((gap - acc).abs() <= 1e-9 * (1.0 + k as f64), "k {k}: {gap} vs {acc}");
    }

    let quiet = traced(Algorithm::BaselineGt, HyperParams::new(0.01, 200), NoisePair::silent(), 5);
    for s in run(&p, &quiet).unwrap().states {
        let gap = col_sum(&s.y) - col_sum(&dual_gradients(&p.instance, &s.x));
        assert!(gap.abs() < 1e-9);
    }
}

#[test]
fn single_agent_baseline_matches_rddgt() {
    let p = problem("toy1");
    let params = HyperParams::new(0.1, 100).with_suppression(1.0, 1.0);
    let a = traced(Algorithm::Rddgt, params, NoisePair::silent(), 0);
    let b = traced(Algorithm::BaselineGt, params, NoisePair::silent(), 0);
    let (ta, tb) = (run(&p, &a).unwrap(), run(&p, &b).unwrap());
    for (sa, sb) in ta.states.iter().zip(&tb.states).skip(1) {
        assert!((sa.x[(0, 0)] - sb.x[(0, 0)]).abs() < 1e-12);
        assert!((sa.w[(0, 0)] - sb.w[(0, 0)]).abs() < 1e-12);
        assert!(((&sa.s - &sa.s_prev)[(0, 0)] - sb.y[(0, 0)]).abs() < 1e-12);
    }
}

#[test]
fn toy_run_reaches_demand() {
    let p = problem("toy1");
    let trace = run(&p, &traced(Algorithm::Rddgt, HyperParams::new(0.1, 500), NoisePair::silent(), 0)).unwrap();
    assert!((trace.states.last().unwrap().w[(0, 0)] - 4.0).abs() < 1e-6);
    assert!(trace.last().mismatch < 1e-6);
}

#[test]
fn momentum_zero_is_bit_identical() {
    let p = problem("ieee14");
    let params = HyperParams::new(0.01, 200);
    let noise = NoisePair::both(NoiseModel::default());
    let a = run(&p, &traced(Algorithm::Rddgt, params, noise.clone(), 11)).unwrap();
    let b = run(&p, &traced(Algorithm::RddgtN, params, noise, 11)).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.states, b.states);
}

#[test]
fn runs_are_deterministic() {
    let p = problem("ieee14");
    for algorithm in [Algorithm::Rddgt, Algorithm::RddgtN, Algorithm::BaselineGt] {
        let params = HyperParams::new(0.01, 150).with_momentum(0.4);
        let spec = traced(algorithm, params, NoisePair::both(NoiseModel::default()), 3);
        let (a, b) = (run(&p, &spec).unwrap(), run(&p, &spec).unwrap());
        assert_eq!(a, b);
        let other = run(&p, &traced(algorithm, params, NoisePair::both(NoiseModel::default()), 4)).unwrap();
        assert_ne!(a.records, other.records);
    }
}

#[test]
fn monte_carlo_is_schedule_independent() {
    let p = problem("ieee14");
    let spec = RunSpec::new(Algorithm::Rddgt, HyperParams::new(0.01, 200), NoisePair::both(NoiseModel::default()), 8);
    let in_pool = |threads| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| monte_carlo(&p, &spec, 12).unwrap())
    };
    let (one, many) = (in_pool(1), in_pool(4));
    assert_eq!(one, many);
    assert_eq!(one.summaries.len(), 12);
}

#[test]
fn monte_carlo_reductions() {
    let p = problem("ieee14");
    let spec = RunSpec::new(Algorithm::Rddgt, HyperParams::new(0.01, 100), NoisePair::both(NoiseModel::default()), 2);
    let single = run_trial(&p, &spec, 0).unwrap();
    let mc = monte_carlo(&p, &spec, 1).unwrap();
    assert_eq!(mc.trace.records, single.records);
    assert!(mc.trace.stderr.iter().all(|r| r.err_to_opt == 0.0));

    let quiet = RunSpec::new(Algorithm::Rddgt, HyperParams::new(0.01, 100), NoisePair::silent(), 2);
    let mc = monte_carlo(&p, &quiet, 10).unwrap();
    assert!(mc.trace.stderr.iter().all(|r| r.values().iter().all(|v| *v == 0.0)));
    assert_eq!(mc.trace.records, run(&p, &quiet).unwrap().records);
}

#[test]
fn standard_error_shrinks_with_trials() {
    let p = problem("ieee14");
    let spec = RunSpec::new(Algorithm::Rddgt, HyperParams::new(0.01, 300), NoisePair::both(NoiseModel::default()), 6);
    let few = monte_carlo(&p, &spec, 25).unwrap();
    let many = monte_carlo(&p, &spec, 100).unwrap();
    // 1/sqrt(100) against 1/sqrt(25): ratio 1/2, averaged over the tail
    let tail = |t: &rddgt::Trace| t.stderr[200..].iter().map(|r| r.err_to_opt).sum::<f64>();
    let ratio = tail(&many.trace) / tail(&few.trace);
    assert!((0.35..0.7).contains(&ratio), "ratio {ratio}");
}

#[test]
fn disconnected_graph_is_rejected() {
    let (inst, _) = presets::preset("ieee14").unwrap();
    let graph = rddgt::CommGraph::new(14);
    assert!(Problem::new(inst, graph).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn primal_iterates_stay_in_box(
        seed in any::<u64>(),
        eta in 0.05f64..=1.0,
        gamma in 0.05f64..=1.0,
        beta in 0.0f64..0.5,
        alg in 0usize..3,
        quantized in any::<bool>(),
    ) {
        let p = problem("ieee14");
        let noise = if quantized {
            "gaussian:2+quantizer:-40:40:6".parse().unwrap()
        } else {
            NoiseModel::Gaussian { sigma: 3.0 }
        };
        let algorithm = Algorithm::ALL[alg];
        let params = HyperParams::new(0.02, 60).with_suppression(eta, gamma).with_momentum(beta);
        let trace = run(&p, &traced(algorithm, params, NoisePair::both(noise), seed)).unwrap();
        for s in trace.states.iter().skip(1) {
            for (i, agent) in p.instance.agents().iter().enumerate() {
                prop_assert!(s.w[(i, 0)] >= agent.w_lo && s.w[(i, 0)] <= agent.w_hi);
            }
        }
        for (k, s) in trace.states.iter().enumerate() {
            prop_assert_eq!(s.k, k);
        }
    }
}
