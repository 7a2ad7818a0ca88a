//! Cross-cutting identity battery: every simulated trace, across scaling
//! regimes, system sizes, and policies, must satisfy the exact path
//! identities — conservation counts, the bitwise clock decomposition,
//! allocation consistency, the netput decomposition, and (for
//! work-conserving policies on a model in exact heavy traffic) agreement
//! between the workload and the reflected netput.

use mmq_core::model::{two_class_two_state_demo, PriorityOrder, ScalingRegime};
use mmq_core::policy::{
    validate_admissibility, CmuStarPolicy, DynamicCmuPolicy, Policy, StaticPriorityPolicy,
};
use mmq_core::sim::{
    diffusion_netput, simulate, RecordLevel, SimulationRequest, NETPUT_DECOMPOSITION_TOL,
    WORKLOAD_REFLECTION_TOL,
};

/// Processor sharing across nonempty classes — a fractional-allocation
/// stand-in for policies outside the priority family.
struct EqualSplit;

impl Policy for EqualSplit {
    fn name(&self) -> &str {
        "equal-split"
    }
    fn decide(&self, queues: &[u64], _y: usize, _t: f64, alloc: &mut [f64]) {
        let nonempty = queues.iter().filter(|&&q| q > 0).count();
        for (a, &q) in alloc.iter_mut().zip(queues) {
            *a = if q > 0 { 1.0 / nonempty as f64 } else { 0.0 };
        }
    }
}

#[test]
fn every_trace_satisfies_the_path_identities() {
    // One representative modulation speed per scaling case.
    let regimes = [1.0, 0.25, 0.0, -0.5];
    let sizes = [4u64, 25, 100];
    for &nu in &regimes {
        let model = two_class_two_state_demo(ScalingRegime::with_auto_alpha(nu).unwrap());
        let (_, mu_star) = model.limit_rates();
        let (_, mu_n) = model.rates_at(25).unwrap();
        let policies: Vec<Box<dyn Policy>> = vec![
            Box::new(CmuStarPolicy::new(model.holding_costs(), &mu_star)),
            Box::new(DynamicCmuPolicy::new(model.holding_costs(), &mu_n)),
            Box::new(StaticPriorityPolicy::new(PriorityOrder::explicit(vec![1, 0]).unwrap())),
            Box::new(EqualSplit),
        ];
        for &n in &sizes {
            for policy in &policies {
                let req = SimulationRequest {
                    model: &model,
                    n,
                    policy: policy.as_ref(),
                    horizon: 1.0,
                    master_seed: 2024,
                    replication: n, // vary the stream with the size
                    initial_env: None,
                    record_level: RecordLevel::Events,
                };
                let trace = simulate(&req).unwrap();
                let label = format!("ν = {nu}, n = {n}, policy = {}", policy.name());
                assert!(trace.events() > 0, "{label}: empty trace");

                let report = validate_admissibility(&trace);
                assert!(report.pass(), "{label}: {:?}", report.first_failure());

                let netput = diffusion_netput(&trace, &model).unwrap();
                assert!(
                    netput.max_decomposition_residual() < NETPUT_DECOMPOSITION_TOL,
                    "{label}: decomposition residual {}",
                    netput.max_decomposition_residual()
                );
                // All four policies serve at full rate whenever work is
                // present, and the demo model is in exact heavy traffic, so
                // the workload must be the reflected netput.
                assert!(
                    netput.workload_reflection_residual() < WORKLOAD_REFLECTION_TOL,
                    "{label}: reflection residual {}",
                    netput.workload_reflection_residual()
                );
            }
        }
    }
}

#[test]
fn replications_are_reproducible_and_distinct_across_the_matrix() {
    let model = two_class_two_state_demo(ScalingRegime::with_auto_alpha(0.5).unwrap());
    let (_, mu_star) = model.limit_rates();
    let policy = CmuStarPolicy::new(model.holding_costs(), &mu_star);
    let mut first_times: Vec<Vec<f64>> = Vec::new();
    for rep in 0..4 {
        let req = SimulationRequest {
            model: &model,
            n: 25,
            policy: &policy,
            horizon: 0.5,
            master_seed: 7,
            replication: rep,
            initial_env: Some(0),
            record_level: RecordLevel::Events,
        };
        let a = simulate(&req).unwrap();
        let b = simulate(&req).unwrap();
        assert_eq!(a, b, "rep {rep}: reruns must be bitwise identical");
        first_times.push(a.times);
    }
    for i in 0..first_times.len() {
        for j in (i + 1)..first_times.len() {
            assert_ne!(
                first_times[i], first_times[j],
                "replications {i} and {j} produced identical event times"
            );
        }
    }
}
