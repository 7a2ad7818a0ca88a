//! Subcommand implementations. Each command resolves the experiment once,
//! writes a `resolved-config.json` echo next to its outputs, and emits
//! fixed-layout delimited text so reruns are byte-comparable.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use mmq_core::bcp::{estimate_value, BrownianSpec};
use mmq_core::cost::{compare_policies, monte_carlo_cost, EstimatorMode, McRunSpec};
use mmq_core::model::NetworkModel;
use mmq_core::sim::{simulate, simulate_grid, RecordLevel, SimulationRequest};

use crate::config::ExperimentConfig;
use crate::output::{self, KeyValueRows, RESULT_HEADER};
use crate::CliError;

/// Scaling indices probed by `verify` for the traffic-drift estimate; the
/// largest one is the headline value.
const VERIFY_PROBES: [u64; 4] = [100, 10_000, 1_000_000, 100_000_000];

/// Everything a command needs: the resolved config, the built model, and
/// the run-wide settings that live outside the config document.
pub struct Context {
    /// Resolved config (command-line overrides already folded in).
    pub config: ExperimentConfig,
    /// The validated model.
    pub model: NetworkModel,
    /// Output directory.
    pub out_dir: PathBuf,
    /// Worker threads for replication-parallel estimation (0 = all cores).
    pub threads: usize,
}

impl Context {
    /// Writes the resolved-config echo and returns it for reuse.
    fn write_echo(&self) -> Result<(), CliError> {
        let echo = self.config.resolved_echo()?;
        output::write_file(&self.out_dir, "resolved-config.json", &echo)?;
        Ok(())
    }

    /// The Monte Carlo run spec shared by `compare` (grid estimator).
    fn grid_spec(&self) -> McRunSpec {
        let run = &self.config.run;
        McRunSpec {
            replications: run.replications,
            horizon: run.horizon,
            master_seed: run.master_seed,
            mode: EstimatorMode::GridVerbatim { delta: run.grid_delta },
            threads: self.threads,
            initial_env: self.config.initial_env_index(),
        }
    }
}

/// `verify`: heavy-traffic report, regime diagnostics, and the stationary
/// law, as `key,value` rows (printed and written to `verify.csv`).
pub fn verify(ctx: &Context) -> Result<(), CliError> {
    ctx.write_echo()?;
    let model = &ctx.model;
    let report = model.verify_heavy_traffic(&VERIFY_PROBES)?;
    let diagnostics = model.validate_regime();
    let order = model.cmu_star_order();
    let regime = model.regime();

    let mut rows = KeyValueRows::new();
    rows.push_float("trafficSum", report.traffic_sum);
    rows.push_float("trafficGap", report.traffic_gap);
    rows.push_bool("inHeavyTraffic", report.in_heavy_traffic);
    for (i, &v) in report.lambda_star.iter().enumerate() {
        rows.push_float(&format!("lambdaStar{}", i + 1), v);
    }
    for (i, &v) in report.mu_star.iter().enumerate() {
        rows.push_float(&format!("muStar{}", i + 1), v);
    }
    for (i, &v) in report.b.iter().enumerate() {
        rows.push_float(&format!("b{}", i + 1), v);
    }
    if let Some(analytic) = &report.b_analytic {
        for (i, &v) in analytic.iter().enumerate() {
            rows.push_float(&format!("bAnalytic{}", i + 1), v);
        }
    }
    for probe in &report.probes {
        for (i, &v) in probe.b.iter().enumerate() {
            rows.push_float(&format!("bAtN{}Class{}", probe.n, i + 1), v);
        }
    }
    for (y, &p) in model.stationary().pi.iter().enumerate() {
        rows.push_float(&format!("pi{}", y + 1), p);
    }
    for (i, &v) in order.index_values.iter().enumerate() {
        rows.push_float(&format!("cmuIndex{}", i + 1), v);
    }
    let order_label: Vec<String> = order.order.iter().map(|&i| (i + 1).to_string()).collect();
    rows.push_text("cmuStarOrder", &order_label.join("-"));
    rows.push_float("nu", regime.nu);
    rows.push_float("alpha", regime.alpha);
    rows.push_text("case", regime.case.label());
    rows.push_bool("alphaCanonical", regime.alpha_is_canonical());
    rows.push_bool("regimeCovered", diagnostics.covered);
    for (j, v) in diagnostics.violations.iter().enumerate() {
        rows.push_text(&format!("violation{}", j + 1), v);
    }
    for (j, w) in diagnostics.warnings.iter().enumerate() {
        rows.push_text(&format!("warning{}", j + 1), w);
    }

    let text = rows.render();
    output::write_file(&ctx.out_dir, "verify.csv", &text)?;
    print!("{text}");
    Ok(())
}

/// `simulate`: per-event trace dumps, one file per `(n, policy, replication)`.
pub fn simulate_cmd(ctx: &Context) -> Result<(), CliError> {
    ctx.write_echo()?;
    let run = &ctx.config.run;
    let horizon = run.trace_horizon.unwrap_or(run.horizon);
    for &n in &run.n {
        for policy_cfg in &run.policies {
            let policy = policy_cfg.build(&ctx.model, n)?;
            for rep in 0..run.trace_replications {
                let req = SimulationRequest {
                    model: &ctx.model,
                    n,
                    policy: &*policy,
                    horizon,
                    master_seed: run.master_seed,
                    replication: rep,
                    initial_env: ctx.config.initial_env_index(),
                    record_level: RecordLevel::Events,
                };
                let trace = simulate(&req)?;
                let name = format!("trace-{}-n{n}-r{rep}.csv", policy.name());
                fs::create_dir_all(&ctx.out_dir).map_err(|e| {
                    CliError::Runtime(format!("cannot create {}: {e}", ctx.out_dir.display()))
                })?;
                let path = ctx.out_dir.join(&name);
                let file = File::create(&path).map_err(|e| {
                    CliError::Runtime(format!("cannot write {}: {e}", path.display()))
                })?;
                let mut w = BufWriter::new(file);
                trace
                    .write_csv(&mut w)
                    .and_then(|()| w.flush())
                    .map_err(|e| CliError::Runtime(format!("cannot write {name}: {e}")))?;
                println!("{name}: {} events", trace.events());
            }
        }
    }
    Ok(())
}

/// `compare`: common-random-number discounted-cost estimates for every
/// configured policy against the first one, with paired differences.
pub fn compare(ctx: &Context) -> Result<(), CliError> {
    ctx.write_echo()?;
    let run = &ctx.config.run;
    if run.policies.len() < 2 {
        return Err(CliError::Invariant(
            "compare needs at least two policies in run.policies".to_string(),
        ));
    }
    let spec = ctx.grid_spec();
    let regime = ctx.model.regime();
    let mut text = String::from(RESULT_HEADER);
    text.push('\n');
    for &n in &run.n {
        let baseline = run.policies[0].build(&ctx.model, n)?;
        for (j, policy_cfg) in run.policies.iter().enumerate().skip(1) {
            let other = policy_cfg.build(&ctx.model, n)?;
            let cmp = compare_policies(&ctx.model, &*baseline, &*other, n, &spec, true)?;
            if j == 1 {
                text.push_str(&output::result_row(
                    &cmp.policy_a,
                    &n.to_string(),
                    regime.nu,
                    regime.alpha,
                    cmp.a.replications,
                    cmp.a.mean,
                    cmp.a.std_error,
                    cmp.a.truncation_bound,
                    cmp.a.ci95(),
                ));
                text.push('\n');
            }
            text.push_str(&output::result_row(
                &cmp.policy_b,
                &n.to_string(),
                regime.nu,
                regime.alpha,
                cmp.b.replications,
                cmp.b.mean,
                cmp.b.std_error,
                cmp.b.truncation_bound,
                cmp.b.ci95(),
            ));
            text.push('\n');
            let label = format!("crnDiff[{}|{}]", cmp.policy_a, cmp.policy_b);
            text.push_str(&output::result_row(
                &label,
                &n.to_string(),
                regime.nu,
                regime.alpha,
                cmp.a.replications,
                cmp.diff.mean,
                cmp.diff.std_error,
                cmp.a.truncation_bound + cmp.b.truncation_bound,
                cmp.diff_ci95(),
            ));
            text.push('\n');
        }
    }
    output::write_file(&ctx.out_dir, "compare.csv", &text)?;
    print!("{text}");
    Ok(())
}

/// `bcp`: assembles the Brownian benchmark, estimates `J*`, and optionally
/// the gap to the cμ* rule at the largest configured scaling index.
pub fn bcp(ctx: &Context, gap: bool) -> Result<(), CliError> {
    ctx.write_echo()?;
    let model = &ctx.model;
    let run = &ctx.config.run;
    let regime = model.regime();
    let report = model.verify_heavy_traffic(&VERIFY_PROBES)?;
    // The integrated rate-fluctuation covariance is always reported, even
    // in the regimes whose limit does not use it.
    let fluctuation = model
        .generator()
        .integrated_rate_covariance(model.arrivals().limit(), model.stationary())?;
    let spec = BrownianSpec::from_model(model, &report, Some(&fluctuation))?;
    let estimate = estimate_value(&spec, run.dt, run.horizon, run.replications, run.master_seed)?;

    let mut rows = KeyValueRows::new();
    rows.push_text("case", regime.case.label());
    rows.push_float("workloadDrift", spec.workload_drift);
    rows.push_float("workloadVariance", spec.workload_variance);
    rows.push_float("costRate", estimate.cost_rate);
    rows.push_text("bottleneckClass", &(estimate.bottleneck_class + 1).to_string());
    rows.push_float("dt", estimate.dt);
    for (i, &v) in spec.theta.iter().enumerate() {
        rows.push_float(&format!("theta{}", i + 1), v);
    }
    for i in 0..spec.k {
        for j in 0..spec.k {
            rows.push_float(&format!("sigma{}{}", i + 1, j + 1), spec.sigma.get(i, j));
        }
    }
    for i in 0..fluctuation.dim() {
        for j in 0..fluctuation.dim() {
            rows.push_float(&format!("lambdaCov{}{}", i + 1, j + 1), fluctuation.get(i, j));
        }
    }
    let spec_text = rows.render();
    output::write_file(&ctx.out_dir, "bcp-spec.csv", &spec_text)?;

    let mut table = String::from(RESULT_HEADER);
    table.push('\n');
    table.push_str(&output::result_row(
        "BCP",
        "limit",
        regime.nu,
        regime.alpha,
        estimate.replications,
        estimate.mean,
        estimate.std_error,
        estimate.truncation_bound,
        estimate.ci95(),
    ));
    table.push('\n');

    if gap {
        let n_max = *run.n.iter().max().expect("validated non-empty");
        let policy = crate::config::PolicyConfig::Named("cmuStar".to_string())
            .build(model, n_max)?;
        let mc_spec = McRunSpec {
            replications: run.replications,
            horizon: run.horizon,
            master_seed: run.master_seed,
            mode: EstimatorMode::Exact,
            threads: ctx.threads,
            initial_env: ctx.config.initial_env_index(),
        };
        let mc = monte_carlo_cost(model, &*policy, n_max, &mc_spec)?;
        table.push_str(&output::result_row(
            policy.name(),
            &n_max.to_string(),
            regime.nu,
            regime.alpha,
            mc.replications,
            mc.mean,
            mc.std_error,
            mc.truncation_bound,
            mc.ci95(),
        ));
        table.push('\n');
        let diff = mc.mean - estimate.mean;
        let se = (mc.std_error.powi(2) + estimate.std_error.powi(2)).sqrt();
        let tb = mc.truncation_bound + estimate.truncation_bound;
        table.push_str(&output::result_row(
            "gap[cmu-star]",
            &n_max.to_string(),
            regime.nu,
            regime.alpha,
            mc.replications,
            diff,
            se,
            tb,
            (diff - 1.96 * se, diff + 1.96 * se),
        ));
        table.push('\n');
    }

    output::write_file(&ctx.out_dir, "bcp.csv", &table)?;
    print!("{spec_text}{table}");
    Ok(())
}

/// `curves`: per-`n` cost-curve series. `c1` is the replication mean of the
/// instantaneous holding cost of the diffusion-scaled queue on the grid;
/// `c2` is the same series discounted at `γ`, so `c2 ≤ c1` pointwise
/// whenever `γ ≥ 0` (and `c2 = c1` exactly at `γ = 0`).
pub fn curves(ctx: &Context) -> Result<(), CliError> {
    ctx.write_echo()?;
    let run = &ctx.config.run;
    let model = &ctx.model;
    let k = model.classes();
    let c = model.holding_costs();
    let gamma = model.discount();
    let alpha = model.regime().alpha;
    for &n in &run.n {
        let space_scale = (n as f64).powf(alpha);
        let mut times: Option<Vec<f64>> = None;
        // Per policy, the running sum of c·Q̂ at each grid point.
        let mut series: Vec<(String, Vec<f64>)> = Vec::with_capacity(run.policies.len());
        for policy_cfg in &run.policies {
            let policy = policy_cfg.build(model, n)?;
            let mut sums: Vec<f64> = Vec::new();
            for rep in 0..run.replications {
                let req = SimulationRequest {
                    model,
                    n,
                    policy: &*policy,
                    horizon: run.horizon,
                    master_seed: run.master_seed,
                    replication: rep,
                    initial_env: ctx.config.initial_env_index(),
                    record_level: RecordLevel::Grid { delta: run.grid_delta },
                };
                let grid = simulate_grid(&req)?;
                if sums.is_empty() {
                    sums = vec![0.0; grid.times.len()];
                }
                debug_assert_eq!(sums.len() * k, grid.queues.len());
                for (g, sum) in sums.iter_mut().enumerate() {
                    let q = &grid.queues[g * k..(g + 1) * k];
                    let cost: f64 =
                        c.iter().zip(q).map(|(&ci, &qi)| ci * qi as f64 / space_scale).sum();
                    *sum += cost;
                }
                if times.is_none() {
                    times = Some(grid.times);
                }
            }
            series.push((policy.name().to_string(), sums));
        }
        let times = times.expect("at least one replication");
        let reps = run.replications as f64;

        let mut header = String::from("time");
        for (name, _) in &series {
            header.push_str(&format!(",c1[{name}],c2[{name}]"));
        }
        let mut text = header;
        text.push('\n');
        for (g, &t) in times.iter().enumerate() {
            text.push_str(&output::float(t));
            for (_, sums) in &series {
                let c1 = sums[g] / reps;
                let c2 = (-gamma * t).exp() * c1;
                text.push(',');
                text.push_str(&output::float(c1));
                text.push(',');
                text.push_str(&output::float(c2));
            }
            text.push('\n');
        }
        let name = format!("curves-n{n}.csv");
        output::write_file(&ctx.out_dir, &name, &text)?;
        println!("{name}: {} grid points, {} policies", times.len(), series.len());
    }
    Ok(())
}
