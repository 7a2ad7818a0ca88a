//! Scheduling policies and admissibility checking.
//!
//! A policy maps the observed state (queue lengths, environment state,
//! scaled time) to a service allocation: a vector with entries in `[0, 1]`
//! summing to at most one, zero for empty classes. Fractional allocations
//! (processor sharing) are supported by the simulator; the three shipped
//! policies are all priority rules and produce one-hot allocations:
//!
//! * [`CmuStarPolicy`] — fixed priorities by the limiting index `c_i μ*_i`;
//! * [`DynamicCmuPolicy`] — priorities by the state-dependent index
//!   `c_i μⁿ_i(y)`, re-evaluated whenever the environment moves;
//! * [`StaticPriorityPolicy`] — an arbitrary fixed permutation.
//!
//! [`validate_admissibility`] replays a recorded trace against the rules a
//! policy must obey. The conservation and time identities hold *bitwise* on
//! simulator output (the checker refolds the same sums the simulator
//! builds); only the consistency between allocation values and accumulated
//! service time carries a tolerance, because those two records accumulate
//! rounding independently.

use crate::chain::RateFunction;
use crate::model::{cmu_ordering, PriorityOrder};
use crate::sim::{canonical_elapsed, PathTrace};

/// Allocations may exceed a unit total only by accumulated rounding in the
/// policy's own arithmetic; one-hot policies are exact.
pub const ALLOCATION_SUM_TOL: f64 = 1e-12;

/// Tolerance for `|ΔT_i − a_i Δt|` per inter-event interval: the increment
/// of accumulated service time against allocation × elapsed time. Both sides
/// round independently (the elapsed time is a difference of canonical
/// sums), so equality is approximate, though typically within a few ulp.
pub const ALLOCATION_CONSISTENCY_TOL: f64 = 1e-9;

/// A scheduling policy. Implementations must be deterministic functions of
/// the observed state: the simulator re-invokes `decide` after every event
/// and assumes the allocation stays constant in between.
pub trait Policy: Send + Sync {
    /// Short stable label used in output rows and file names; must not
    /// contain commas or whitespace.
    fn name(&self) -> &str;

    /// Writes the service allocation for the observed state into `alloc`
    /// (length `K`). Entries must lie in `[0, 1]`, sum to at most one, and
    /// be zero wherever `queues` is zero.
    fn decide(&self, queues: &[u64], env_state: usize, scaled_time: f64, alloc: &mut [f64]);
}

/// Serves the first class with work in a fixed priority order.
fn serve_first_nonempty(order: &[usize], queues: &[u64], alloc: &mut [f64]) {
    alloc.fill(0.0);
    for &i in order {
        if queues[i] > 0 {
            alloc[i] = 1.0;
            return;
        }
    }
}

/// Fixed priorities by the limiting index `c_i μ*_i` (highest first).
#[derive(Debug, Clone)]
pub struct CmuStarPolicy {
    order: PriorityOrder,
}

impl CmuStarPolicy {
    /// Builds the policy from costs and limiting averaged service rates.
    #[must_use]
    pub fn new(c: &[f64], mu_star: &[f64]) -> Self {
        Self { order: cmu_ordering(c, mu_star) }
    }

    /// Builds the policy from a precomputed order.
    #[must_use]
    pub fn from_order(order: PriorityOrder) -> Self {
        Self { order }
    }

    /// The priority order in effect.
    #[must_use]
    pub fn order(&self) -> &PriorityOrder {
        &self.order
    }
}

impl Policy for CmuStarPolicy {
    fn name(&self) -> &str {
        "cmu-star"
    }

    fn decide(&self, queues: &[u64], _env_state: usize, _scaled_time: f64, alloc: &mut [f64]) {
        serve_first_nonempty(&self.order.order, queues, alloc);
    }
}

/// State-dependent priorities by the index `c_i μⁿ_i(y)`, one fixed order
/// per environment state, precomputed at construction.
#[derive(Debug, Clone)]
pub struct DynamicCmuPolicy {
    priority_by_state: Vec<Vec<usize>>,
}

impl DynamicCmuPolicy {
    /// Builds the per-state orders from costs and the service rates at the
    /// index `n` being simulated. Ties break by ascending class index, as
    /// everywhere else.
    ///
    /// # Panics
    ///
    /// `c` must have one entry per class of `mu_at_n` (programming error).
    #[must_use]
    pub fn new(c: &[f64], mu_at_n: &RateFunction) -> Self {
        assert_eq!(c.len(), mu_at_n.classes(), "cost vector must match rate table");
        let priority_by_state = (0..mu_at_n.states())
            .map(|y| cmu_ordering(c, mu_at_n.row(y)).order)
            .collect();
        Self { priority_by_state }
    }

    /// The priority order used in environment state `y`.
    #[must_use]
    pub fn order_in_state(&self, y: usize) -> &[usize] {
        &self.priority_by_state[y]
    }
}

impl Policy for DynamicCmuPolicy {
    fn name(&self) -> &str {
        "dynamic-cmu"
    }

    fn decide(&self, queues: &[u64], env_state: usize, _scaled_time: f64, alloc: &mut [f64]) {
        serve_first_nonempty(&self.priority_by_state[env_state], queues, alloc);
    }
}

/// An arbitrary fixed priority permutation.
#[derive(Debug, Clone)]
pub struct StaticPriorityPolicy {
    order: PriorityOrder,
    name: String,
}

impl StaticPriorityPolicy {
    /// Builds the policy; the label renders the order with 1-based class
    /// labels, e.g. `static[2-1]` for "class 2 first".
    #[must_use]
    pub fn new(order: PriorityOrder) -> Self {
        let label: Vec<String> = order.order.iter().map(|&i| (i + 1).to_string()).collect();
        let name = format!("static[{}]", label.join("-"));
        Self { order, name }
    }

    /// The priority order in effect.
    #[must_use]
    pub fn order(&self) -> &PriorityOrder {
        &self.order
    }
}

impl Policy for StaticPriorityPolicy {
    fn name(&self) -> &str {
        &self.name
    }

    fn decide(&self, queues: &[u64], _env_state: usize, _scaled_time: f64, alloc: &mut [f64]) {
        serve_first_nonempty(&self.order.order, queues, alloc);
    }
}

/// Outcome of one admissibility condition.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibilityCheck {
    /// Stable identifier of the condition.
    pub name: &'static str,
    /// Whether the condition holds over the whole trace.
    pub pass: bool,
    /// Location and values of the first violation, when failing.
    pub detail: Option<String>,
}

/// Outcome of [`validate_admissibility`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibilityReport {
    /// One entry per condition, in a fixed order.
    pub checks: Vec<AdmissibilityCheck>,
}

impl AdmissibilityReport {
    /// True when every condition passed.
    #[must_use]
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// The first failing condition, if any.
    #[must_use]
    pub fn first_failure(&self) -> Option<&AdmissibilityCheck> {
        self.checks.iter().find(|c| !c.pass)
    }
}

/// Replays a trace against the admissibility rules:
///
/// 1. **queue-conservation** — `Q_i = A_i − D_i ≥ 0` at every event, in
///    exact integer arithmetic;
/// 2. **time-identity** — every event time equals the canonical fold
///    `(Σ_i T_i) + I` of its own accumulators, bitwise;
/// 3. **cumulative-time-monotone** — each `T_i` and `I` starts at zero and
///    never decreases;
/// 4. **allocation-bounds** — allocations lie in `[0, 1]`, sum to at most
///    `1 +` [`ALLOCATION_SUM_TOL`], and vanish on empty queues;
/// 5. **allocation-consistency** — between consecutive events the recorded
///    `T_i` and `I` increments match allocation × elapsed time within
///    [`ALLOCATION_CONSISTENCY_TOL`] (the allocation is constant between
///    events by the data model; this confirms the accumulators agree with
///    it).
#[must_use]
pub fn validate_admissibility(trace: &PathTrace) -> AdmissibilityReport {
    let k = trace.k;
    let events = trace.events();

    let mut conservation = AdmissibilityCheck { name: "queue-conservation", pass: true, detail: None };
    let mut time_identity = AdmissibilityCheck { name: "time-identity", pass: true, detail: None };
    let mut monotone = AdmissibilityCheck { name: "cumulative-time-monotone", pass: true, detail: None };
    let mut bounds = AdmissibilityCheck { name: "allocation-bounds", pass: true, detail: None };
    let mut consistency =
        AdmissibilityCheck { name: "allocation-consistency", pass: true, detail: None };

    // Initial allocation must respect bounds on the empty initial state.
    check_allocation_row(&mut bounds, usize::MAX, &vec![0u64; k], &trace.initial_alloc);

    let mut prev_cum = vec![0.0f64; k];
    let mut prev_idle = 0.0f64;
    let mut prev_time = 0.0f64;

    for e in 0..events {
        let q = trace.queues_at(e);
        let a = trace.arrivals_at(e);
        let d = trace.departures_at(e);
        let cum = trace.cum_alloc_at(e);
        let idle = trace.idle[e];
        let alloc = trace.alloc_at(e);
        let alloc_prev = trace.alloc_before(e);
        let t = trace.times[e];

        if conservation.pass {
            for i in 0..k {
                let net = i128::from(a[i]) - i128::from(d[i]);
                if net < 0 || net != i128::from(q[i]) {
                    conservation.pass = false;
                    conservation.detail = Some(format!(
                        "event {e}, class {}: A = {}, D = {}, Q = {}",
                        i + 1,
                        a[i],
                        d[i],
                        q[i]
                    ));
                    break;
                }
            }
        }

        if time_identity.pass {
            let folded = canonical_elapsed(cum, idle);
            if folded.to_bits() != t.to_bits() {
                time_identity.pass = false;
                time_identity.detail = Some(format!(
                    "event {e}: recorded time {t:.17e} vs refolded (ΣT)+I = {folded:.17e}"
                ));
            }
        }

        if monotone.pass {
            for i in 0..k {
                if cum[i] < prev_cum[i] {
                    monotone.pass = false;
                    monotone.detail = Some(format!(
                        "event {e}, class {}: T decreased from {} to {}",
                        i + 1,
                        prev_cum[i],
                        cum[i]
                    ));
                    break;
                }
            }
            if monotone.pass && idle < prev_idle {
                monotone.pass = false;
                monotone.detail =
                    Some(format!("event {e}: I decreased from {prev_idle} to {idle}"));
            }
        }

        check_allocation_row(&mut bounds, e, q, alloc);

        if consistency.pass {
            let dt = t - prev_time;
            for i in 0..k {
                let expected = alloc_prev[i] * dt;
                if (cum[i] - prev_cum[i] - expected).abs() > ALLOCATION_CONSISTENCY_TOL {
                    consistency.pass = false;
                    consistency.detail = Some(format!(
                        "event {e}, class {}: ΔT = {} vs allocation×Δt = {expected}",
                        i + 1,
                        cum[i] - prev_cum[i]
                    ));
                    break;
                }
            }
            if consistency.pass {
                let busy: f64 = alloc_prev.iter().sum();
                let expected = (1.0 - busy) * dt;
                if (idle - prev_idle - expected).abs() > ALLOCATION_CONSISTENCY_TOL {
                    consistency.pass = false;
                    consistency.detail = Some(format!(
                        "event {e}: ΔI = {} vs (1−Σa)×Δt = {expected}",
                        idle - prev_idle
                    ));
                }
            }
        }

        prev_cum.copy_from_slice(cum);
        prev_idle = idle;
        prev_time = t;
    }

    AdmissibilityReport {
        checks: vec![conservation, time_identity, monotone, bounds, consistency],
    }
}

fn check_allocation_row(check: &mut AdmissibilityCheck, event: usize, queues: &[u64], alloc: &[f64]) {
    if !check.pass {
        return;
    }
    let label = if event == usize::MAX { "initial allocation".to_string() } else { format!("event {event}") };
    let mut sum = 0.0;
    for (i, &a) in alloc.iter().enumerate() {
        if !(0.0..=1.0).contains(&a) {
            check.pass = false;
            check.detail = Some(format!("{label}, class {}: allocation {a} outside [0,1]", i + 1));
            return;
        }
        if queues[i] == 0 && a != 0.0 {
            check.pass = false;
            check.detail =
                Some(format!("{label}, class {}: allocation {a} on an empty queue", i + 1));
            return;
        }
        sum += a;
    }
    if sum > 1.0 + ALLOCATION_SUM_TOL {
        check.pass = false;
        check.detail = Some(format!("{label}: allocations sum to {sum}"));
    }
}
