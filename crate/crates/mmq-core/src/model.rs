//! Network model: rate families indexed by the scaling parameter, scaling
//! regimes, averaged rates, heavy-traffic verification, and the cμ*
//! priority ordering.
//!
//! A model couples an environment chain with per-class arrival and service
//! rate families `λⁿ_i(y)`, `μⁿ_i(y)`, holding costs `c`, and a discount
//! rate `γ`. The scaling regime fixes the environment time scale `n^ν` and
//! the diffusion exponent `α`. Regimes are classified from `ν` alone:
//!
//! | case | `ν` range       | canonical `α` | state-dependent service? |
//! |------|-----------------|---------------|--------------------------|
//! | 1a   | `ν > 1/2`       | `1/2`         | allowed                  |
//! | 1b   | `0 < ν ≤ 1/2`   | `1/2`         | averaged only            |
//! | 2    | `ν = 0`         | `1/2`         | averaged only            |
//! | 3    | `−1 < ν < 0`    | `(1−ν)/2`     | averaged only            |
//!
//! Constructing a model or a regime never fails for *coverage* reasons: a
//! state-dependent service family under case 2, or a non-canonical `α`, is
//! a legitimate thing to simulate. [`NetworkModel::validate_regime`] reports
//! such mismatches as diagnostics so drivers can run the experiment anyway
//! and label the output as outside the supported asymptotic regime.

use std::collections::BTreeMap;

use crate::chain::{GeneratorMatrix, RateFunction, StationaryDistribution};
use crate::{Error, Result};

/// Tolerance for matching a user-supplied `α` against the canonical value of
/// its regime. Decimal literals for thirds differ from the computed binary
/// value by at most a few ulp; 1e-9 is far above that and far below any
/// intentional mismatch.
pub const ALPHA_MATCH_TOL: f64 = 1e-9;

/// Tolerance on `|Σ_i λ*_i/μ*_i − 1|` for declaring the model in heavy
/// traffic. The sum is a handful of floating divisions and additions of
/// exact user inputs.
pub const HEAVY_TRAFFIC_TOL: f64 = 1e-8;

/// Default probe values of `n` for finite-`n` drift estimates.
pub const DEFAULT_PROBES: [u64; 3] = [10_000, 1_000_000, 100_000_000];

/// Scaling-regime classification by the environment exponent `ν`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalingCase {
    /// `ν > 1/2`: environment averages out fast enough that state-dependent
    /// service rates are covered.
    Case1a,
    /// `0 < ν ≤ 1/2`.
    Case1b,
    /// `ν = 0`: the environment moves on the same clock as the queue; its
    /// fluctuations add to the diffusion covariance.
    Case2,
    /// `−1 < ν < 0`: the environment is slow and dominates the covariance;
    /// the diffusion exponent grows to `(1−ν)/2`.
    Case3,
}

impl ScalingCase {
    /// Classifies from the environment exponent.
    ///
    /// # Errors
    ///
    /// `ν ≤ −1` (no meaningful scaling limit) or non-finite `ν`.
    pub fn from_nu(nu: f64) -> Result<Self> {
        if !nu.is_finite() {
            return Err(Error::InvalidRegime(format!("ν must be finite, got {nu}")));
        }
        if nu > 0.5 {
            Ok(Self::Case1a)
        } else if nu > 0.0 {
            Ok(Self::Case1b)
        } else if nu == 0.0 {
            Ok(Self::Case2)
        } else if nu > -1.0 {
            Ok(Self::Case3)
        } else {
            Err(Error::InvalidRegime(format!("ν must exceed -1, got {nu}")))
        }
    }

    /// The diffusion exponent this case calls for.
    #[must_use]
    pub fn canonical_alpha(self, nu: f64) -> f64 {
        match self {
            Self::Case1a | Self::Case1b | Self::Case2 => 0.5,
            Self::Case3 => (1.0 - nu) / 2.0,
        }
    }

    /// Whether state-dependent service rates are inside the supported
    /// asymptotic regime.
    #[must_use]
    pub fn allows_state_dependent_service(self) -> bool {
        matches!(self, Self::Case1a)
    }

    /// Short label used in reports and output rows.
    #[must_use]
    pub fn label(self) -> &'static str {
        match self {
            Self::Case1a => "1a",
            Self::Case1b => "1b",
            Self::Case2 => "2",
            Self::Case3 => "3",
        }
    }
}

/// A scaling regime: environment exponent `ν`, diffusion exponent `α`, and
/// the case classified from `ν`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingRegime {
    /// Environment time-scale exponent (the chain runs with generator `n^ν Q`).
    pub nu: f64,
    /// Diffusion scaling exponent (queue lengths are divided by `n^α`).
    pub alpha: f64,
    /// Case classified from `ν`.
    pub case: ScalingCase,
}

impl ScalingRegime {
    /// Builds a regime with an explicit `α ∈ (0, 1]`.
    ///
    /// A non-canonical `α` is accepted (and later reported by
    /// [`NetworkModel::validate_regime`] as uncovered), so experiments can
    /// deliberately run the "wrong" scaling.
    ///
    /// # Errors
    ///
    /// Invalid `ν` (see [`ScalingCase::from_nu`]) or `α` outside `(0, 1]`.
    pub fn new(nu: f64, alpha: f64) -> Result<Self> {
        let case = ScalingCase::from_nu(nu)?;
        if !alpha.is_finite() || alpha <= 0.0 || alpha > 1.0 {
            return Err(Error::InvalidRegime(format!("α must lie in (0, 1], got {alpha}")));
        }
        Ok(Self { nu, alpha, case })
    }

    /// Builds a regime with the canonical `α` for the case of `ν`.
    ///
    /// # Errors
    ///
    /// Invalid `ν`.
    pub fn with_auto_alpha(nu: f64) -> Result<Self> {
        let case = ScalingCase::from_nu(nu)?;
        Ok(Self { nu, alpha: case.canonical_alpha(nu), case })
    }

    /// Canonical `α` for this regime's case.
    #[must_use]
    pub fn canonical_alpha(&self) -> f64 {
        self.case.canonical_alpha(self.nu)
    }

    /// Whether the stored `α` matches the canonical one within
    /// [`ALPHA_MATCH_TOL`].
    #[must_use]
    pub fn alpha_is_canonical(&self) -> bool {
        (self.alpha - self.canonical_alpha()).abs() <= ALPHA_MATCH_TOL
    }
}

/// A family of rate tables indexed by the scaling parameter `n`.
#[derive(Debug, Clone, PartialEq)]
pub enum RateFamily {
    /// `rate(n, y, i) = base_i(y) + sqrtCoeff_i(y)/√n`, the standard
    /// heavy-traffic parametrization. The limit is `base`.
    AffineSqrt {
        /// Limiting rates.
        base: RateFunction,
        /// Coefficient of the `1/√n` correction.
        sqrt_coeff: RateFunction,
    },
    /// Explicit tables at specific values of `n`, for families that do not
    /// fit the affine-in-`1/√n` form. The limit is taken to be the entry
    /// with the largest `n`.
    Tabulated {
        /// Map from `n` to its rate table.
        table: BTreeMap<u64, RateFunction>,
    },
}

impl RateFamily {
    /// Builds an affine family, checking that both tables have the same
    /// shape and that no rate is negative at any `n` (the `1/√n` correction
    /// is largest at `n = 1`; nonnegative base and coefficient are each
    /// validated by [`RateFunction`] already).
    pub fn affine_sqrt(base: RateFunction, sqrt_coeff: RateFunction) -> Result<Self> {
        if base.states() != sqrt_coeff.states() {
            return Err(Error::Dimension {
                what: "sqrt-coefficient states",
                expected: base.states(),
                actual: sqrt_coeff.states(),
            });
        }
        if base.classes() != sqrt_coeff.classes() {
            return Err(Error::Dimension {
                what: "sqrt-coefficient classes",
                expected: base.classes(),
                actual: sqrt_coeff.classes(),
            });
        }
        Ok(Self::AffineSqrt { base, sqrt_coeff })
    }

    /// Builds a tabulated family.
    ///
    /// # Errors
    ///
    /// Empty table or tables of differing shape.
    pub fn tabulated(table: BTreeMap<u64, RateFunction>) -> Result<Self> {
        let Some(first) = table.values().next() else {
            return Err(Error::InvalidArgument("tabulated rate family is empty".into()));
        };
        let (l, k) = (first.states(), first.classes());
        for (n, f) in &table {
            if f.states() != l || f.classes() != k {
                return Err(Error::InvalidArgument(format!(
                    "tabulated rates at n = {n} have shape {}×{}, expected {l}×{k}",
                    f.states(),
                    f.classes()
                )));
            }
        }
        Ok(Self::Tabulated { table })
    }

    /// Number of environment states.
    #[must_use]
    pub fn states(&self) -> usize {
        match self {
            Self::AffineSqrt { base, .. } => base.states(),
            Self::Tabulated { table } => table.values().next().expect("non-empty").states(),
        }
    }

    /// Number of classes.
    #[must_use]
    pub fn classes(&self) -> usize {
        match self {
            Self::AffineSqrt { base, .. } => base.classes(),
            Self::Tabulated { table } => table.values().next().expect("non-empty").classes(),
        }
    }

    /// The rate table at index `n`.
    ///
    /// # Errors
    ///
    /// `n = 0`, or a tabulated family without an entry for `n`.
    pub fn at(&self, n: u64) -> Result<RateFunction> {
        if n == 0 {
            return Err(Error::InvalidArgument("scaling index n must be positive".into()));
        }
        match self {
            Self::AffineSqrt { base, sqrt_coeff } => {
                let inv_sqrt_n = 1.0 / (n as f64).sqrt();
                let rows: Vec<Vec<f64>> = (0..base.states())
                    .map(|y| {
                        (0..base.classes())
                            .map(|i| base.rate(y, i) + sqrt_coeff.rate(y, i) * inv_sqrt_n)
                            .collect()
                    })
                    .collect();
                RateFunction::new(rows)
            }
            Self::Tabulated { table } => table.get(&n).cloned().ok_or_else(|| {
                Error::InvalidArgument(format!("tabulated rate family has no entry for n = {n}"))
            }),
        }
    }

    /// The limiting rate table (`n → ∞`).
    #[must_use]
    pub fn limit(&self) -> &RateFunction {
        match self {
            Self::AffineSqrt { base, .. } => base,
            Self::Tabulated { table } => table.values().next_back().expect("non-empty"),
        }
    }

    /// Whether the family is state-independent at every `n`.
    #[must_use]
    pub fn is_state_independent(&self) -> bool {
        match self {
            Self::AffineSqrt { base, sqrt_coeff } => {
                base.is_state_independent() && sqrt_coeff.is_state_independent()
            }
            Self::Tabulated { table } => table.values().all(RateFunction::is_state_independent),
        }
    }
}

/// A complete model instance.
#[derive(Debug, Clone)]
pub struct NetworkModel {
    generator: GeneratorMatrix,
    arrivals: RateFamily,
    services: RateFamily,
    holding_costs: Vec<f64>,
    discount: f64,
    regime: ScalingRegime,
    pi: StationaryDistribution,
}

impl NetworkModel {
    /// Validates and assembles a model.
    ///
    /// Requires consistent dimensions across the generator and both rate
    /// families, strictly positive holding costs, a nonnegative discount
    /// rate (zero means undiscounted cost curves; infinite-horizon tail
    /// bounds then degenerate to infinity), and a strictly positive limiting
    /// service rate for every class (otherwise neither the cμ* ordering nor
    /// the workload is defined). The stationary distribution of the
    /// environment is solved once here and cached.
    ///
    /// # Errors
    ///
    /// Any violated requirement above, or a failed stationary solve.
    pub fn new(
        generator: GeneratorMatrix,
        arrivals: RateFamily,
        services: RateFamily,
        holding_costs: Vec<f64>,
        discount: f64,
        regime: ScalingRegime,
    ) -> Result<Self> {
        let l = generator.states();
        let k = arrivals.classes();
        if arrivals.states() != l {
            return Err(Error::Dimension { what: "arrival states", expected: l, actual: arrivals.states() });
        }
        if services.states() != l {
            return Err(Error::Dimension { what: "service states", expected: l, actual: services.states() });
        }
        if services.classes() != k {
            return Err(Error::Dimension { what: "service classes", expected: k, actual: services.classes() });
        }
        if holding_costs.len() != k {
            return Err(Error::Dimension { what: "holding costs", expected: k, actual: holding_costs.len() });
        }
        for (i, &c) in holding_costs.iter().enumerate() {
            if !c.is_finite() || c <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "holding cost for class {i} must be positive and finite, got {c}"
                )));
            }
        }
        if !discount.is_finite() || discount < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "discount rate must be nonnegative and finite, got {discount}"
            )));
        }
        let pi = generator.stationary_distribution()?;
        let mu_star = pi.expectation(services.limit());
        for (i, &m) in mu_star.iter().enumerate() {
            if m <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "limiting averaged service rate for class {i} is {m}; must be positive"
                )));
            }
        }
        Ok(Self { generator, arrivals, services, holding_costs, discount, regime, pi })
    }

    /// Number of job classes.
    #[must_use]
    pub fn classes(&self) -> usize {
        self.arrivals.classes()
    }

    /// Number of environment states.
    #[must_use]
    pub fn states(&self) -> usize {
        self.generator.states()
    }

    /// The environment generator.
    #[must_use]
    pub fn generator(&self) -> &GeneratorMatrix {
        &self.generator
    }

    /// The arrival-rate family.
    #[must_use]
    pub fn arrivals(&self) -> &RateFamily {
        &self.arrivals
    }

    /// The service-rate family.
    #[must_use]
    pub fn services(&self) -> &RateFamily {
        &self.services
    }

    /// Holding-cost vector `c`.
    #[must_use]
    pub fn holding_costs(&self) -> &[f64] {
        &self.holding_costs
    }

    /// Discount rate `γ`.
    #[must_use]
    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// The scaling regime.
    #[must_use]
    pub fn regime(&self) -> &ScalingRegime {
        &self.regime
    }

    /// Same model under a different scaling regime.
    #[must_use]
    pub fn with_regime(&self, regime: ScalingRegime) -> Self {
        let mut m = self.clone();
        m.regime = regime;
        m
    }

    /// Stationary distribution of the environment (cached).
    #[must_use]
    pub fn stationary(&self) -> &StationaryDistribution {
        &self.pi
    }

    /// Environment-averaged rates at index `n`: `(π(λⁿ), π(μⁿ))`.
    ///
    /// # Errors
    ///
    /// Propagates rate-family lookup errors.
    pub fn averaged_rates(&self, n: u64) -> Result<(Vec<f64>, Vec<f64>)> {
        let lam = self.pi.expectation(&self.arrivals.at(n)?);
        let mu = self.pi.expectation(&self.services.at(n)?);
        Ok((lam, mu))
    }

    /// Limiting averaged rates `(λ*, μ*)`.
    #[must_use]
    pub fn limit_rates(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.pi.expectation(self.arrivals.limit()),
            self.pi.expectation(self.services.limit()),
        )
    }

    /// Rate tables at index `n`: `(λⁿ, μⁿ)`.
    ///
    /// # Errors
    ///
    /// Propagates rate-family lookup errors.
    pub fn rates_at(&self, n: u64) -> Result<(RateFunction, RateFunction)> {
        Ok((self.arrivals.at(n)?, self.services.at(n)?))
    }

    /// Checks the heavy-traffic condition and estimates the per-class
    /// second-order traffic drift
    ///
    /// ```text
    /// b_i = lim_n n^{1−α} ( λ^{n,*}_i / μ^{n,*}_i − λ*_i / μ*_i ) ,
    /// ```
    ///
    /// by finite-`n` probes. The largest-`n` probe is the headline estimate;
    /// for affine families a closed-form value is reported alongside (it
    /// equals `(π(λ΄)π(μ) − π(λ)π(μ΄)) / π(μ)²` per class at `α = 1/2`,
    /// where `΄` marks the `1/√n` coefficient, and `0` for `α > 1/2`).
    ///
    /// For tabulated families the probes are the tabulated values of `n`,
    /// whatever was requested.
    ///
    /// # Errors
    ///
    /// Empty probe list or rate-family lookup failures.
    pub fn verify_heavy_traffic(&self, probes: &[u64]) -> Result<HeavyTrafficReport> {
        let (lambda_star, mu_star) = self.limit_rates();
        let k = self.classes();
        let rho_star: Vec<f64> = (0..k).map(|i| lambda_star[i] / mu_star[i]).collect();
        let traffic_sum: f64 = rho_star.iter().sum();

        let probe_ns: Vec<u64> = match &self.arrivals {
            RateFamily::Tabulated { table } => table.keys().copied().collect(),
            RateFamily::AffineSqrt { .. } => probes.to_vec(),
        };
        if probe_ns.is_empty() {
            return Err(Error::InvalidArgument("no probe values of n".into()));
        }
        let alpha = self.regime.alpha;
        let mut probe_estimates = Vec::with_capacity(probe_ns.len());
        for &n in &probe_ns {
            let (lam_n, mu_n) = self.averaged_rates(n)?;
            let scale = (n as f64).powf(1.0 - alpha);
            let b: Vec<f64> = (0..k)
                .map(|i| scale * (lam_n[i] / mu_n[i] - rho_star[i]))
                .collect();
            probe_estimates.push(DriftProbe { n, b });
        }
        let b = probe_estimates.last().expect("non-empty probes").b.clone();

        let b_analytic = match (&self.arrivals, &self.services) {
            (
                RateFamily::AffineSqrt { base: lb, sqrt_coeff: lc },
                RateFamily::AffineSqrt { base: mb, sqrt_coeff: mc },
            ) => {
                if (alpha - 0.5).abs() <= ALPHA_MATCH_TOL {
                    let pl = self.pi.expectation(lb);
                    let plc = self.pi.expectation(lc);
                    let pm = self.pi.expectation(mb);
                    let pmc = self.pi.expectation(mc);
                    Some((0..k).map(|i| (plc[i] * pm[i] - pl[i] * pmc[i]) / (pm[i] * pm[i])).collect())
                } else if alpha > 0.5 {
                    Some(vec![0.0; k])
                } else {
                    None // the 1/√n correction diverges under n^{1−α} for α < 1/2
                }
            }
            _ => None,
        };

        Ok(HeavyTrafficReport {
            lambda_star,
            mu_star,
            traffic_sum,
            traffic_gap: (1.0 - traffic_sum).abs(),
            in_heavy_traffic: (1.0 - traffic_sum).abs() <= HEAVY_TRAFFIC_TOL,
            b,
            b_analytic,
            probes: probe_estimates,
        })
    }

    /// The cμ* priority order of this model (see [`cmu_ordering`]).
    #[must_use]
    pub fn cmu_star_order(&self) -> PriorityOrder {
        let (_, mu_star) = self.limit_rates();
        cmu_ordering(&self.holding_costs, &mu_star)
    }

    /// Reports how well the model instance fits its declared scaling
    /// regime. Construction never fails for these reasons; drivers use the
    /// diagnostics to label output as inside or outside the supported
    /// asymptotics.
    #[must_use]
    pub fn validate_regime(&self) -> RegimeDiagnostics {
        let mut violations = Vec::new();
        let mut warnings = Vec::new();

        if !self.regime.alpha_is_canonical() {
            violations.push(format!(
                "diffusion exponent α = {} differs from the canonical value {} for case {}",
                self.regime.alpha,
                self.regime.canonical_alpha(),
                self.regime.case.label()
            ));
        }
        if !self.regime.case.allows_state_dependent_service() && !self.services.is_state_independent() {
            violations.push(format!(
                "service rates are state-dependent, which case {} does not cover (ν = {})",
                self.regime.case.label(),
                self.regime.nu
            ));
        }
        match self.verify_heavy_traffic(&DEFAULT_PROBES) {
            Ok(report) => {
                if !report.in_heavy_traffic {
                    violations.push(format!(
                        "limiting traffic intensity is {} (must be 1 within {HEAVY_TRAFFIC_TOL:e})",
                        report.traffic_sum
                    ));
                }
            }
            Err(e) => violations.push(format!("heavy-traffic check failed: {e}")),
        }
        let lam_limit = self.arrivals.limit();
        'outer: for y in 0..self.states() {
            for i in 0..self.classes() {
                if lam_limit.rate(y, i) == 0.0 {
                    warnings.push(format!(
                        "limiting arrival rate for class {i} vanishes in state {y}; \
                         the model is degenerate there"
                    ));
                    break 'outer;
                }
            }
        }
        RegimeDiagnostics { covered: violations.is_empty(), violations, warnings }
    }
}

/// Finite-`n` estimate of the second-order traffic drift.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftProbe {
    /// Scaling index probed.
    pub n: u64,
    /// Estimate of `b` at this `n`.
    pub b: Vec<f64>,
}

/// Result of [`NetworkModel::verify_heavy_traffic`].
#[derive(Debug, Clone, PartialEq)]
pub struct HeavyTrafficReport {
    /// Limiting averaged arrival rates `λ*`.
    pub lambda_star: Vec<f64>,
    /// Limiting averaged service rates `μ*`.
    pub mu_star: Vec<f64>,
    /// `Σ_i λ*_i/μ*_i`.
    pub traffic_sum: f64,
    /// `|1 − trafficSum|`.
    pub traffic_gap: f64,
    /// Whether the gap is within [`HEAVY_TRAFFIC_TOL`].
    pub in_heavy_traffic: bool,
    /// Headline drift estimate (largest-`n` probe).
    pub b: Vec<f64>,
    /// Closed-form drift for affine families, when defined.
    pub b_analytic: Option<Vec<f64>>,
    /// All finite-`n` probes, in increasing `n`.
    pub probes: Vec<DriftProbe>,
}

/// Diagnostics from [`NetworkModel::validate_regime`].
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeDiagnostics {
    /// True when the instance satisfies every constraint of its regime.
    pub covered: bool,
    /// Constraint violations (empty iff `covered`).
    pub violations: Vec<String>,
    /// Soft warnings that do not affect coverage.
    pub warnings: Vec<String>,
}

/// A priority order over classes together with its index values.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorityOrder {
    /// Classes from highest to lowest priority.
    pub order: Vec<usize>,
    /// The index value (`c_i μ*_i` for the cμ* order) per class, in class
    /// order (not priority order).
    pub index_values: Vec<f64>,
}

impl PriorityOrder {
    /// An explicit order with no index values (static priorities).
    ///
    /// # Errors
    ///
    /// `order` is not a permutation of `0..K`.
    pub fn explicit(order: Vec<usize>) -> Result<Self> {
        let k = order.len();
        let mut seen = vec![false; k];
        for &i in &order {
            if i >= k || seen[i] {
                return Err(Error::InvalidArgument(format!(
                    "priority order {order:?} is not a permutation of 0..{k}"
                )));
            }
            seen[i] = true;
        }
        Ok(Self { order, index_values: Vec::new() })
    }

    /// Number of classes.
    #[must_use]
    pub fn classes(&self) -> usize {
        self.order.len()
    }

    /// The class served last (lowest priority); in the diffusion limit the
    /// entire workload concentrates here.
    #[must_use]
    pub fn lowest_priority(&self) -> usize {
        *self.order.last().expect("order is non-empty")
    }
}

/// The cμ* ordering: classes sorted by `c_i μ*_i` descending, ties broken by
/// ascending class index so the order is total and reproducible.
///
/// # Panics
///
/// `c` and `mu_star` must have equal, nonzero length (programming error,
/// not input error: both come from a validated model).
#[must_use]
pub fn cmu_ordering(c: &[f64], mu_star: &[f64]) -> PriorityOrder {
    assert_eq!(c.len(), mu_star.len(), "cost and rate vectors must align");
    assert!(!c.is_empty(), "need at least one class");
    let index_values: Vec<f64> = c.iter().zip(mu_star).map(|(&ci, &mi)| ci * mi).collect();
    let mut order: Vec<usize> = (0..c.len()).collect();
    order.sort_by(|&a, &b| {
        index_values[b]
            .partial_cmp(&index_values[a])
            .expect("cμ* index values are finite")
            .then(a.cmp(&b))
    });
    PriorityOrder { order, index_values }
}

/// The bundled two-class, two-state demonstration network used throughout
/// the tests and the sample configuration:
///
/// * generator `Q = [[-2, 2], [1, -1]]` (stationary law `(1/3, 2/3)`),
/// * arrivals `λⁿ_i(y) = λ_i + s_i y/√n` with `λ = (1, 3/2)`, `s = (3/5, 3/5)`
///   scaled by the state label `y ∈ {1, 2}`,
/// * services `μⁿ_1(y) = 5/2 + 3y/√n`, `μⁿ_2(y) = 3y/2 + 3y/√n`,
/// * costs `c = (20, 25)`, discount `γ = 2`.
///
/// Averages work out to `λ^{n,*} = λ* + 1/√n` and `μ^{n,*} = μ* + 5/√n` with
/// `λ* = (1, 3/2)`, `μ* = (5/2, 5/2)`, so the limiting traffic intensity is
/// exactly one and the second-order drift is `b = (−2/5, −4/5)`. Class 2 has
/// the larger cμ* index (62.5 against 50), while the *dynamic* cμ index
/// flips between the two environment states for every `n ≥ 2`.
///
/// # Panics
///
/// Never: all inputs are fixed and valid.
#[must_use]
pub fn two_class_two_state_demo(regime: ScalingRegime) -> NetworkModel {
    let generator =
        GeneratorMatrix::new(vec![vec![-2.0, 2.0], vec![1.0, -1.0]]).expect("valid generator");
    let arrivals = RateFamily::affine_sqrt(
        RateFunction::new(vec![vec![1.0, 1.5], vec![1.0, 1.5]]).expect("valid rates"),
        RateFunction::new(vec![vec![0.6, 0.6], vec![1.2, 1.2]]).expect("valid rates"),
    )
    .expect("consistent shapes");
    let services = RateFamily::affine_sqrt(
        RateFunction::new(vec![vec![2.5, 1.5], vec![2.5, 3.0]]).expect("valid rates"),
        RateFunction::new(vec![vec![3.0, 3.0], vec![6.0, 6.0]]).expect("valid rates"),
    )
    .expect("consistent shapes");
    NetworkModel::new(generator, arrivals, services, vec![20.0, 25.0], 2.0, regime)
        .expect("demo model is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn demo() -> NetworkModel {
        two_class_two_state_demo(ScalingRegime::with_auto_alpha(1.0).unwrap())
    }

    #[test]
    fn regime_classification_covers_all_cases() {
        for (nu, case, alpha) in [
            (1.0, ScalingCase::Case1a, 0.5),
            (2.0 / 3.0, ScalingCase::Case1a, 0.5),
            (0.5, ScalingCase::Case1b, 0.5),
            (1.0 / 3.0, ScalingCase::Case1b, 0.5),
            (0.0, ScalingCase::Case2, 0.5),
            (-1.0 / 3.0, ScalingCase::Case3, 2.0 / 3.0),
        ] {
            let r = ScalingRegime::with_auto_alpha(nu).unwrap();
            assert_eq!(r.case, case, "ν = {nu}");
            assert_abs_diff_eq!(r.alpha, alpha, epsilon = 1e-15);
            assert!(r.alpha_is_canonical());
        }
    }

    #[test]
    fn regime_rejects_out_of_range_nu_and_alpha() {
        assert!(ScalingRegime::with_auto_alpha(-1.0).is_err());
        assert!(ScalingRegime::with_auto_alpha(f64::NAN).is_err());
        assert!(ScalingRegime::new(1.0, 0.0).is_err());
        assert!(ScalingRegime::new(1.0, 1.5).is_err());
    }

    #[test]
    fn non_canonical_alpha_constructs_but_is_flagged() {
        let r = ScalingRegime::new(-1.0 / 3.0, 0.5).unwrap();
        assert_eq!(r.case, ScalingCase::Case3);
        assert!(!r.alpha_is_canonical());
        let model = two_class_two_state_demo(r);
        let diag = model.validate_regime();
        assert!(!diag.covered);
        assert!(diag.violations.iter().any(|v| v.contains("canonical")));
    }

    #[test]
    fn averaged_rates_at_25_match_hand_computation() {
        // π = (1/3, 2/3): λ^{25,*} = (1 + 1/5, 3/2 + 1/5) = (1.2, 1.7),
        // μ^{25,*} = (2.5 + 1, 2.5 + 1) = (3.5, 3.5).
        let (lam, mu) = demo().averaged_rates(25).unwrap();
        assert_abs_diff_eq!(lam[0], 1.2, epsilon = 1e-12);
        assert_abs_diff_eq!(lam[1], 1.7, epsilon = 1e-12);
        assert_abs_diff_eq!(mu[0], 3.5, epsilon = 1e-12);
        assert_abs_diff_eq!(mu[1], 3.5, epsilon = 1e-12);
    }

    #[test]
    fn limit_rates_are_exact() {
        let (lam, mu) = demo().limit_rates();
        assert_eq!(lam, vec![1.0, 1.5]);
        assert_eq!(mu, vec![2.5, 2.5]);
    }

    #[test]
    fn heavy_traffic_report_matches_known_drift() {
        let report = demo().verify_heavy_traffic(&DEFAULT_PROBES).unwrap();
        assert_eq!(report.traffic_sum, 1.0, "demo traffic intensity is exactly 1 in f64");
        assert!(report.in_heavy_traffic);
        let ba = report.b_analytic.as_ref().expect("affine family has closed form");
        assert_abs_diff_eq!(ba[0], -0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(ba[1], -0.8, epsilon = 1e-12);
        // Headline probe at n = 1e8 is within 1e-3 of the limit.
        assert!((report.b[0] + 0.4).abs() < 1e-3, "b₀ probe {}", report.b[0]);
        assert!((report.b[1] + 0.8).abs() < 1e-3, "b₁ probe {}", report.b[1]);
        // Probes sharpen with n.
        let errs: Vec<f64> =
            report.probes.iter().map(|p| (p.b[0] + 0.4).abs()).collect();
        assert!(errs.windows(2).all(|w| w[1] <= w[0]), "probe errors {errs:?}");
    }

    #[test]
    fn cmu_order_prefers_class_two_and_breaks_ties_by_index() {
        let order = demo().cmu_star_order();
        assert_eq!(order.index_values, vec![50.0, 62.5]);
        assert_eq!(order.order, vec![1, 0]);
        assert_eq!(order.lowest_priority(), 0);

        let tied = cmu_ordering(&[2.0, 1.0], &[1.0, 2.0]);
        assert_eq!(tied.order, vec![0, 1], "ties break by ascending class index");
    }

    #[test]
    fn explicit_priority_order_must_be_permutation() {
        assert!(PriorityOrder::explicit(vec![1, 0]).is_ok());
        assert!(PriorityOrder::explicit(vec![0, 0]).is_err());
        assert!(PriorityOrder::explicit(vec![0, 2]).is_err());
    }

    #[test]
    fn validate_regime_flags_state_dependent_service_outside_case_1a() {
        let covered = demo().validate_regime();
        assert!(covered.covered, "violations: {:?}", covered.violations);

        let slow = two_class_two_state_demo(ScalingRegime::with_auto_alpha(0.0).unwrap());
        let diag = slow.validate_regime();
        assert!(!diag.covered);
        assert!(diag.violations.iter().any(|v| v.contains("state-dependent")));
    }

    #[test]
    fn tabulated_family_looks_up_exact_n_only() {
        let mut table = BTreeMap::new();
        table.insert(25, RateFunction::constant(2, &[1.0, 2.0]).unwrap());
        table.insert(100, RateFunction::constant(2, &[1.5, 2.5]).unwrap());
        let fam = RateFamily::tabulated(table).unwrap();
        assert_eq!(fam.at(25).unwrap().rate(0, 1), 2.0);
        assert!(fam.at(50).is_err());
        assert_eq!(fam.limit().rate(0, 0), 1.5, "limit is the largest-n entry");
    }

    #[test]
    fn affine_family_evaluates_and_stays_nonnegative() {
        let fam = RateFamily::affine_sqrt(
            RateFunction::constant(1, &[2.0]).unwrap(),
            RateFunction::constant(1, &[1.0]).unwrap(),
        )
        .unwrap();
        assert_abs_diff_eq!(fam.at(4).unwrap().rate(0, 0), 2.5, epsilon = 1e-15);
        assert!(fam.at(0).is_err());
        assert_eq!(fam.limit().rate(0, 0), 2.0);
    }

    #[test]
    fn model_constructor_rejects_bad_inputs() {
        let regime = ScalingRegime::with_auto_alpha(1.0).unwrap();
        let gen = GeneratorMatrix::new(vec![vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        let lam = RateFamily::affine_sqrt(
            RateFunction::constant(2, &[1.0]).unwrap(),
            RateFunction::constant(2, &[0.0]).unwrap(),
        )
        .unwrap();
        let mu_ok = RateFamily::affine_sqrt(
            RateFunction::constant(2, &[2.0]).unwrap(),
            RateFunction::constant(2, &[0.0]).unwrap(),
        )
        .unwrap();
        // Negative cost.
        assert!(NetworkModel::new(
            gen.clone(),
            lam.clone(),
            mu_ok.clone(),
            vec![-1.0],
            1.0,
            regime
        )
        .is_err());
        // Negative discount rejected; zero is fine (undiscounted curves).
        assert!(
            NetworkModel::new(gen.clone(), lam.clone(), mu_ok.clone(), vec![1.0], -0.5, regime)
                .is_err()
        );
        assert!(
            NetworkModel::new(gen.clone(), lam.clone(), mu_ok.clone(), vec![1.0], 0.0, regime)
                .is_ok()
        );
        // Vanishing limiting service rate.
        let mu_zero = RateFamily::affine_sqrt(
            RateFunction::constant(2, &[0.0]).unwrap(),
            RateFunction::constant(2, &[1.0]).unwrap(),
        )
        .unwrap();
        assert!(
            NetworkModel::new(gen.clone(), lam.clone(), mu_zero, vec![1.0], 1.0, regime).is_err()
        );
        // Mismatched class counts.
        let mu_wide = RateFamily::affine_sqrt(
            RateFunction::constant(2, &[2.0, 2.0]).unwrap(),
            RateFunction::constant(2, &[0.0, 0.0]).unwrap(),
        )
        .unwrap();
        assert!(NetworkModel::new(gen, lam, mu_wide, vec![1.0], 1.0, regime).is_err());
    }

    #[test]
    fn dynamic_cmu_index_flips_between_states_in_demo() {
        // At n = 25: state y=1 has c₁μ₁ = 20·3.1 = 62 > c₂μ₂ = 25·2.1 = 52.5,
        // state y=2 has 20·3.7 = 74 < 25·4.2 = 105.
        let (_, mu) = demo().rates_at(25).map(|(l, m)| (l, m)).unwrap();
        let c = demo().holding_costs().to_vec();
        assert!(c[0] * mu.rate(0, 0) > c[1] * mu.rate(0, 1));
        assert!(c[0] * mu.rate(1, 0) < c[1] * mu.rate(1, 1));
    }
}
