//! Property tests over randomly generated models: the structural
//! invariants — stationary laws, priority orderings, path identities, and
//! cost linearity — hold for arbitrary valid inputs, not just the shipped
//! example configuration.

use proptest::prelude::*;

use mmq_core::chain::{GeneratorMatrix, RateFunction};
use mmq_core::cost::discounted_cost_of_trace;
use mmq_core::model::{NetworkModel, RateFamily, ScalingRegime};
use mmq_core::policy::{validate_admissibility, CmuStarPolicy};
use mmq_core::sim::{
    diffusion_netput, simulate, RecordLevel, SimulationRequest, NETPUT_DECOMPOSITION_TOL,
};

/// Raw ingredients for a random model: sizes, generator off-diagonals,
/// rate tables, and a modulation speed picked from one case per regime.
#[derive(Debug, Clone)]
struct ModelSeed {
    l: usize,
    k: usize,
    gen_offdiag: Vec<f64>,
    lam_base: Vec<f64>,
    lam_sqrt: Vec<f64>,
    mu_base: Vec<f64>,
    mu_sqrt: Vec<f64>,
    c: Vec<f64>,
    nu: f64,
}

fn arb_model_seed() -> impl Strategy<Value = ModelSeed> {
    (1usize..=3, 1usize..=3).prop_flat_map(|(l, k)| {
        (
            proptest::collection::vec(0.1f64..2.0, l * l),
            proptest::collection::vec(0.0f64..2.0, l * k),
            proptest::collection::vec(0.0f64..1.0, l * k),
            proptest::collection::vec(0.5f64..3.0, l * k),
            proptest::collection::vec(0.0f64..1.0, l * k),
            proptest::collection::vec(0.5f64..5.0, k),
            prop_oneof![Just(1.0f64), Just(0.25), Just(0.0), Just(-0.5)],
        )
            .prop_map(move |(gen_offdiag, lam_base, lam_sqrt, mu_base, mu_sqrt, c, nu)| {
                ModelSeed { l, k, gen_offdiag, lam_base, lam_sqrt, mu_base, mu_sqrt, c, nu }
            })
    })
}

fn build_model(seed: &ModelSeed) -> NetworkModel {
    let l = seed.l;
    let k = seed.k;
    // All off-diagonal entries positive: the chain is trivially irreducible.
    let mut rows = vec![vec![0.0f64; l]; l];
    for y in 0..l {
        let mut out = 0.0;
        for j in 0..l {
            if j != y {
                let r = seed.gen_offdiag[y * l + j];
                rows[y][j] = r;
                out += r;
            }
        }
        rows[y][y] = -out;
    }
    let table = |flat: &[f64]| -> RateFunction {
        RateFunction::new(flat.chunks(k).map(<[f64]>::to_vec).collect()).unwrap()
    };
    let lam = RateFamily::affine_sqrt(table(&seed.lam_base), table(&seed.lam_sqrt)).unwrap();
    let mu = RateFamily::affine_sqrt(table(&seed.mu_base), table(&seed.mu_sqrt)).unwrap();
    NetworkModel::new(
        GeneratorMatrix::new(rows).unwrap(),
        lam,
        mu,
        seed.c.clone(),
        1.0,
        ScalingRegime::with_auto_alpha(seed.nu).unwrap(),
    )
    .unwrap()
}

proptest! {
    #[test]
    fn stationary_law_is_a_probability_vector_with_zero_residual(seed in arb_model_seed()) {
        let model = build_model(&seed);
        let pi = model.stationary();
        let total: f64 = (0..pi.len()).map(|y| pi.pi[y]).sum();
        prop_assert!((total - 1.0).abs() < 1e-12, "mass {total}");
        for y in 0..pi.len() {
            prop_assert!(pi.pi[y] >= 0.0, "π[{y}] = {}", pi.pi[y]);
        }
        prop_assert!(pi.residual(model.generator()) < 1e-10);
    }

    #[test]
    fn priority_order_is_a_permutation_sorted_by_index(seed in arb_model_seed()) {
        let model = build_model(&seed);
        let order = model.cmu_star_order();
        let mut seen = vec![false; seed.k];
        for &i in &order.order {
            prop_assert!(!seen[i], "class {i} listed twice");
            seen[i] = true;
        }
        for w in order.order.windows(2) {
            let (hi, lo) = (w[0], w[1]);
            prop_assert!(
                order.index_values[hi] >= order.index_values[lo],
                "priority order not descending in the index"
            );
        }
    }

    #[test]
    fn random_traces_satisfy_admissibility_and_the_netput_identity(
        seed in arb_model_seed(),
        n in prop_oneof![Just(1u64), Just(4), Just(9)],
        master in 0u64..1000,
    ) {
        let model = build_model(&seed);
        let (_, mu_star) = model.limit_rates();
        let policy = CmuStarPolicy::new(model.holding_costs(), &mu_star);
        let req = SimulationRequest {
            model: &model,
            n,
            policy: &policy,
            horizon: 0.5,
            master_seed: master,
            replication: 0,
            initial_env: None,
            record_level: RecordLevel::Events,
        };
        let trace = simulate(&req).unwrap();
        let report = validate_admissibility(&trace);
        prop_assert!(report.pass(), "{:?}", report.first_failure());
        let netput = diffusion_netput(&trace, &model).unwrap();
        prop_assert!(
            netput.max_decomposition_residual() < NETPUT_DECOMPOSITION_TOL,
            "residual {}",
            netput.max_decomposition_residual()
        );
    }

    #[test]
    fn discounted_cost_is_nonnegative_additive_and_homogeneous(
        seed in arb_model_seed(),
        scale in 0.1f64..8.0,
    ) {
        let model = build_model(&seed);
        let (_, mu_star) = model.limit_rates();
        let policy = CmuStarPolicy::new(model.holding_costs(), &mu_star);
        let req = SimulationRequest {
            model: &model,
            n: 4,
            policy: &policy,
            horizon: 0.5,
            master_seed: 11,
            replication: 0,
            initial_env: None,
            record_level: RecordLevel::Events,
        };
        let trace = simulate(&req).unwrap();
        let alpha = model.regime().alpha;
        let c = model.holding_costs();
        let j = discounted_cost_of_trace(&trace, c, 1.0, alpha).unwrap();
        prop_assert!(j >= 0.0);
        let scaled: Vec<f64> = c.iter().map(|&x| x * scale).collect();
        let js = discounted_cost_of_trace(&trace, &scaled, 1.0, alpha).unwrap();
        prop_assert!((js - scale * j).abs() <= 1e-12 * (1.0 + js.abs()), "homogeneity: {js} vs {}", scale * j);
        let doubled: Vec<f64> = c.iter().map(|&x| x + x).collect();
        let jd = discounted_cost_of_trace(&trace, &doubled, 1.0, alpha).unwrap();
        prop_assert!((jd - 2.0 * j).abs() <= 1e-12 * (1.0 + jd.abs()), "additivity: {jd} vs {}", 2.0 * j);
    }
}
