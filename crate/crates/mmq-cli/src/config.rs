//! Experiment configuration: the JSON schema, its validation, and the
//! translation into core model objects.
//!
//! A config document has three blocks — `model`, `regime`, `run` — and
//! parses totally or fails with a line-anchored error. Everything the user
//! writes is 1-based (class labels, environment states); conversion to the
//! crate's 0-based indices happens here and nowhere else.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use mmq_core::chain::{GeneratorMatrix, RateFunction};
use mmq_core::model::{NetworkModel, PriorityOrder, RateFamily, ScalingRegime};
use mmq_core::policy::{CmuStarPolicy, DynamicCmuPolicy, Policy, StaticPriorityPolicy};

use crate::CliError;

/// Replications used when the run block does not say otherwise.
pub const DEFAULT_REPLICATIONS: u64 = 2000;
/// Brownian-path grid spacing used when the run block does not say otherwise.
pub const DEFAULT_DT: f64 = 1e-3;
/// Queue-observation grid spacing used when the run block does not say
/// otherwise.
pub const DEFAULT_GRID_DELTA: f64 = 0.1;

/// Top-level experiment document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Network primitives: dimensions, generator, rates, costs, discount.
    pub model: ModelConfig,
    /// Scaling regime `(ν, α)`.
    pub regime: RegimeConfig,
    /// What to run: scaling indices, policies, replication budget, grids.
    pub run: RunConfig,
}

/// The `model` block.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of job classes `K`.
    pub classes: usize,
    /// Number of environment states `L`.
    pub states: usize,
    /// Environment generator, `L` rows of `L` entries.
    pub generator: Vec<Vec<f64>>,
    /// Arrival-rate family.
    pub arrivals: RatesConfig,
    /// Service-rate family.
    pub services: RatesConfig,
    /// Holding costs `c`, one per class.
    pub holding_costs: Vec<f64>,
    /// Discount rate `γ ≥ 0`.
    pub discount: f64,
}

/// One rate family: either affine in `1/√n` (`base` plus an optional
/// `sqrtCoeff`, each an `L × K` table) or fully tabulated per scaling index
/// (`table`, keyed by the decimal value of `n`). Exactly one of the two
/// forms must be present.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct RatesConfig {
    /// Limiting rates `a(y, i)` of the affine form `a + b/√n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<Vec<Vec<f64>>>,
    /// First-order coefficients `b(y, i)`; omitted means zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sqrt_coeff: Option<Vec<Vec<f64>>>,
    /// Explicit tables per scaling index; the largest `n` doubles as the
    /// limiting table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<BTreeMap<String, Vec<Vec<f64>>>>,
}

impl RatesConfig {
    /// Builds the core rate family, checking the `L × K` shape.
    fn build(&self, what: &str, states: usize, classes: usize) -> Result<RateFamily, CliError> {
        let shape_checked = |rows: &Vec<Vec<f64>>| -> Result<RateFunction, CliError> {
            if rows.len() != states || rows.iter().any(|r| r.len() != classes) {
                return Err(CliError::Invariant(format!(
                    "{what}: rate table must have {states} rows of {classes} entries"
                )));
            }
            Ok(RateFunction::new(rows.clone())?)
        };
        match (&self.base, &self.sqrt_coeff, &self.table) {
            (Some(base), sqrt, None) => {
                let base = shape_checked(base)?;
                let sqrt = match sqrt {
                    Some(rows) => shape_checked(rows)?,
                    None => RateFunction::constant(states, &vec![0.0; classes])?,
                };
                Ok(RateFamily::affine_sqrt(base, sqrt)?)
            }
            (None, None, Some(table)) => {
                let mut parsed = BTreeMap::new();
                for (key, rows) in table {
                    let n: u64 = key.parse().map_err(|_| {
                        CliError::Invariant(format!(
                            "{what}: table key {key:?} is not a positive integer"
                        ))
                    })?;
                    if n == 0 {
                        return Err(CliError::Invariant(format!(
                            "{what}: table key must be at least 1"
                        )));
                    }
                    parsed.insert(n, shape_checked(rows)?);
                }
                Ok(RateFamily::tabulated(parsed)?)
            }
            _ => Err(CliError::Invariant(format!(
                "{what}: give either base (with optional sqrtCoeff) or table, not a mixture"
            ))),
        }
    }
}

/// The `regime` block.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct RegimeConfig {
    /// Environment time-scale exponent `ν ∈ (−1, ∞)`.
    pub nu: f64,
    /// Diffusion exponent: a number, or `"auto"` for the canonical value.
    #[serde(default = "AlphaConfig::auto")]
    pub alpha: AlphaConfig,
}

/// Either an explicit diffusion exponent or the string `"auto"`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaConfig {
    /// Explicit value.
    Value(f64),
    /// The literal `"auto"` (any other string is rejected).
    Auto(String),
}

impl AlphaConfig {
    fn auto() -> Self {
        Self::Auto("auto".to_string())
    }
}

impl RegimeConfig {
    /// Resolves to a core regime, expanding `"auto"` to the canonical `α`.
    pub fn resolve(&self) -> Result<ScalingRegime, CliError> {
        match &self.alpha {
            AlphaConfig::Value(alpha) => Ok(ScalingRegime::new(self.nu, *alpha)?),
            AlphaConfig::Auto(word) if word == "auto" => {
                Ok(ScalingRegime::with_auto_alpha(self.nu)?)
            }
            AlphaConfig::Auto(word) => Err(CliError::Invariant(format!(
                "regime.alpha must be a number or \"auto\", got {word:?}"
            ))),
        }
    }
}

/// The `run` block.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct RunConfig {
    /// Scaling indices to run, each at least 1.
    pub n: Vec<u64>,
    /// Policies, in presentation order.
    pub policies: Vec<PolicyConfig>,
    /// Monte Carlo replications per estimate.
    #[serde(default = "default_replications")]
    pub replications: u64,
    /// Estimation horizon in scaled time.
    pub horizon: f64,
    /// Grid spacing for Brownian workload paths (`bcp` command).
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Master seed; replication `r` always uses stream `r` of this seed.
    pub master_seed: u64,
    /// Queue-observation grid spacing (cost tables and curves).
    #[serde(default = "default_grid_delta")]
    pub grid_delta: f64,
    /// Starting environment state, 1-based; omitted means a stationary draw
    /// per replication.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_env: Option<usize>,
    /// Horizon for per-event trace dumps (`simulate` command); defaults to
    /// `horizon`, which can produce very large files at large `n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_horizon: Option<f64>,
    /// Traces dumped per `(n, policy)` by the `simulate` command. Kept
    /// separate from `replications` so statistical budgets do not translate
    /// into thousands of trace files.
    #[serde(default = "default_trace_replications")]
    pub trace_replications: u64,
    /// Output directory; the `--out` flag takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
}

fn default_replications() -> u64 {
    DEFAULT_REPLICATIONS
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

fn default_grid_delta() -> f64 {
    DEFAULT_GRID_DELTA
}

fn default_trace_replications() -> u64 {
    1
}

/// One policy entry: a named rule or an explicit static priority order.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PolicyConfig {
    /// `"cmuStar"` or `"dynamicCmu"`.
    Named(String),
    /// `{"static": [2, 1]}` — 1-based class labels, highest priority first.
    Static(StaticPolicyConfig),
}

/// Body of the explicit static-priority form.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaticPolicyConfig {
    /// 1-based class labels, highest priority first.
    #[serde(rename = "static")]
    pub order: Vec<usize>,
}

impl PolicyConfig {
    /// Builds the policy for scaling index `n` (the dynamic rule consults
    /// the service rates at that index).
    pub fn build(&self, model: &NetworkModel, n: u64) -> Result<Box<dyn Policy>, CliError> {
        match self {
            Self::Named(name) if name == "cmuStar" => {
                let (_, mu_star) = model.limit_rates();
                Ok(Box::new(CmuStarPolicy::new(model.holding_costs(), &mu_star)))
            }
            Self::Named(name) if name == "dynamicCmu" => {
                let (_, mu_n) = model.rates_at(n)?;
                Ok(Box::new(DynamicCmuPolicy::new(model.holding_costs(), &mu_n)))
            }
            Self::Named(name) => Err(CliError::Invariant(format!(
                "unknown policy {name:?}; expected \"cmuStar\", \"dynamicCmu\", or {{\"static\": [..]}}"
            ))),
            Self::Static(cfg) => {
                let k = model.classes();
                let mut zero_based = Vec::with_capacity(cfg.order.len());
                for &label in &cfg.order {
                    if !(1..=k).contains(&label) {
                        return Err(CliError::Invariant(format!(
                            "static policy: class label {label} is outside 1..={k}"
                        )));
                    }
                    zero_based.push(label - 1);
                }
                let order = PriorityOrder::explicit(zero_based)?;
                Ok(Box::new(StaticPriorityPolicy::new(order)))
            }
        }
    }
}

impl ExperimentConfig {
    /// Reads and parses a config file. Read failures and JSON errors are
    /// parse-stage errors; JSON errors carry line and column.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| {
            CliError::Parse(format!("cannot read config {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Parse(format!("config {}: {e}", path.display())))
    }

    /// Folds command-line overrides into the document, so the resolved echo
    /// reproduces the run with no extra flags.
    pub fn apply_overrides(&mut self, seed: Option<u64>, reps: Option<u64>, out: Option<&str>) {
        if let Some(seed) = seed {
            self.run.master_seed = seed;
        }
        if let Some(reps) = reps {
            self.run.replications = reps;
        }
        if let Some(out) = out {
            self.run.out_dir = Some(out.to_string());
        }
    }

    /// Validates cross-block consistency and builds the core model. The
    /// declared `classes`/`states` must match every table's shape.
    pub fn build_model(&self) -> Result<NetworkModel, CliError> {
        let m = &self.model;
        if m.classes == 0 || m.states == 0 {
            return Err(CliError::Invariant(
                "model.classes and model.states must be at least 1".to_string(),
            ));
        }
        if m.generator.len() != m.states || m.generator.iter().any(|r| r.len() != m.states) {
            return Err(CliError::Invariant(format!(
                "model.generator must be a {0}×{0} matrix (states = {0})",
                m.states
            )));
        }
        if m.holding_costs.len() != m.classes {
            return Err(CliError::Invariant(format!(
                "model.holdingCosts must have {} entries",
                m.classes
            )));
        }
        let generator = GeneratorMatrix::new(m.generator.clone())?;
        let arrivals = m.arrivals.build("model.arrivals", m.states, m.classes)?;
        let services = m.services.build("model.services", m.states, m.classes)?;
        let regime = self.regime.resolve()?;
        let model = NetworkModel::new(
            generator,
            arrivals,
            services,
            m.holding_costs.clone(),
            m.discount,
            regime,
        )?;
        self.validate_run(&model)?;
        Ok(model)
    }

    /// Run-block sanity checks that do not depend on simulation.
    fn validate_run(&self, model: &NetworkModel) -> Result<(), CliError> {
        let r = &self.run;
        if r.n.is_empty() {
            return Err(CliError::Invariant("run.n must list at least one index".to_string()));
        }
        if r.n.contains(&0) {
            return Err(CliError::Invariant("run.n entries must be at least 1".to_string()));
        }
        if r.policies.is_empty() {
            return Err(CliError::Invariant(
                "run.policies must list at least one policy".to_string(),
            ));
        }
        if r.replications == 0 {
            return Err(CliError::Invariant("run.replications must be at least 1".to_string()));
        }
        if r.trace_replications == 0 {
            return Err(CliError::Invariant(
                "run.traceReplications must be at least 1".to_string(),
            ));
        }
        for (label, v) in
            [("run.horizon", r.horizon), ("run.dt", r.dt), ("run.gridDelta", r.grid_delta)]
        {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::Invariant(format!("{label} must be positive, got {v}")));
            }
        }
        if let Some(h) = r.trace_horizon {
            if !(h > 0.0 && h.is_finite()) {
                return Err(CliError::Invariant(format!(
                    "run.traceHorizon must be positive, got {h}"
                )));
            }
        }
        if let Some(e) = r.initial_env {
            if !(1..=model.states()).contains(&e) {
                return Err(CliError::Invariant(format!(
                    "run.initialEnv must lie in 1..={}, got {e}",
                    model.states()
                )));
            }
        }
        Ok(())
    }

    /// Starting environment state as a 0-based index for the simulator.
    #[must_use]
    pub fn initial_env_index(&self) -> Option<usize> {
        self.run.initial_env.map(|e| e - 1)
    }

    /// The resolved-config echo: this document re-serialized after override
    /// folding, with `alpha` pinned to its numeric value. Re-parsing it
    /// reproduces the experiment byte for byte.
    pub fn resolved_echo(&self) -> Result<String, CliError> {
        let mut resolved = self.clone();
        resolved.regime.alpha = AlphaConfig::Value(self.regime.resolve()?.alpha);
        let mut text = serde_json::to_string_pretty(&resolved)
            .map_err(|e| CliError::Runtime(format!("cannot serialize resolved config: {e}")))?;
        text.push('\n');
        Ok(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo_text() -> &'static str {
        include_str!("../configs/demo.json")
    }

    #[test]
    fn demo_config_parses_and_builds() {
        let cfg: ExperimentConfig = serde_json::from_str(demo_text()).unwrap();
        let model = cfg.build_model().unwrap();
        assert_eq!(model.classes(), 2);
        assert_eq!(model.states(), 2);
        let report = model.verify_heavy_traffic(&[10_000]).unwrap();
        assert!(report.in_heavy_traffic);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = demo_text().replacen("\"classes\"", "\"classez\"", 1);
        let err = serde_json::from_str::<ExperimentConfig>(&text).unwrap_err();
        assert!(err.to_string().contains("classez"), "{err}");
    }

    #[test]
    fn resolved_echo_round_trips() {
        let mut cfg: ExperimentConfig = serde_json::from_str(demo_text()).unwrap();
        cfg.apply_overrides(Some(7), Some(5), Some("/tmp/x"));
        let echo = cfg.resolved_echo().unwrap();
        let back: ExperimentConfig = serde_json::from_str(&echo).unwrap();
        assert_eq!(back.run.master_seed, 7);
        assert_eq!(back.run.replications, 5);
        assert_eq!(back.run.out_dir.as_deref(), Some("/tmp/x"));
        let alpha = match back.regime.alpha {
            AlphaConfig::Value(a) => a,
            AlphaConfig::Auto(_) => panic!("echo must pin alpha numerically"),
        };
        assert_eq!(alpha, 0.5);
        // A second echo of the re-parsed document is byte-identical.
        assert_eq!(echo, back.resolved_echo().unwrap());
    }

    #[test]
    fn mixed_rate_forms_are_rejected() {
        let text = demo_text().replacen(
            "\"base\": [[1.0, 1.5], [1.0, 1.5]],",
            "\"base\": [[1.0, 1.5], [1.0, 1.5]], \"table\": {\"4\": [[1.0, 1.5], [1.0, 1.5]]},",
            1,
        );
        let cfg: ExperimentConfig = serde_json::from_str(&text).unwrap();
        let err = cfg.build_model().unwrap_err();
        assert!(matches!(err, CliError::Invariant(_)), "{err}");
    }

    #[test]
    fn tabulated_rates_build_and_simulate_only_at_listed_indices() {
        let text = demo_text()
            .replacen(
                "{\"base\": [[1.0, 1.5], [1.0, 1.5]], \"sqrtCoeff\": [[0.6, 0.6], [1.2, 1.2]]}",
                "{\"table\": {\"4\": [[1.3, 1.8], [1.3, 1.8]], \"25\": [[1.12, 1.62], [1.12, 1.62]]}}",
                1,
            );
        let cfg: ExperimentConfig = serde_json::from_str(&text).unwrap();
        let model = cfg.build_model().unwrap();
        assert!(model.rates_at(25).is_ok());
        assert!(model.rates_at(10).is_err());
    }

    #[test]
    fn static_policy_labels_are_one_based() {
        let cfg: ExperimentConfig = serde_json::from_str(demo_text()).unwrap();
        let model = cfg.build_model().unwrap();
        let policy = PolicyConfig::Static(StaticPolicyConfig { order: vec![2, 1] })
            .build(&model, 25)
            .unwrap();
        assert_eq!(policy.name(), "static[2-1]");
        let bad = PolicyConfig::Static(StaticPolicyConfig { order: vec![0, 1] }).build(&model, 25);
        assert!(bad.is_err());
    }

    #[test]
    fn alpha_accepts_auto_and_numbers_only() {
        let cfg: ExperimentConfig = serde_json::from_str(demo_text()).unwrap();
        assert_eq!(cfg.build_model().unwrap().regime().alpha, 0.5);
        let text = demo_text().replacen("\"auto\"", "\"canonical\"", 1);
        let cfg: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert!(cfg.build_model().is_err());
        let text = demo_text().replacen("\"auto\"", "0.625", 1);
        let cfg: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg.build_model().unwrap().regime().alpha, 0.625);
    }
}
