//! Exact event-driven simulation of the modulated queueing network.
//!
//! One replication is a single stream of competing exponential clocks
//! (environment jumps at scale `n^ν`, one Poisson arrival clock per class,
//! one service clock for the allocated class), advanced by inverse-CDF
//! holding times and a categorical pick over the atoms of the total rate —
//! no time discretization anywhere. Between events every rate is constant,
//! so occupation integrals (`∫λ_i`, `∫μ_i a_i`, cumulative service and idle
//! time) accumulate exactly, one fused multiply-add per interval.
//!
//! # Time is defined by its own decomposition
//!
//! The recorded event time is *defined* as the canonical left-to-right fold
//! `(Σ_i T_i) + I` of the accumulated busy and idle times
//! ([`canonical_elapsed`]). That makes the fundamental identity
//! `t = Σ_i T_i(t) + I(t)` hold bitwise at every event by construction, and
//! refolding the same accumulators can never disagree with the recorded
//! clock. Rounding error relative to the "true" sum of exponential holding
//! times affects only the (already random) horizon cutoff, not any
//! identity.
//!
//! # Replications and policies share randomness
//!
//! The generator for replication `r` is derived from
//! `(master seed, stream r)`; evaluating two policies on the same
//! replication index consumes identical randomness, which is what paired
//! cost comparisons rely on. A simulation request is a pure function of its
//! inputs: identical requests produce bitwise-identical traces.

use std::io::{self, Write};

use rand::Rng;

use crate::chain::RateFunction;
use crate::model::NetworkModel;
use crate::policy::Policy;
use crate::rng::replication_stream;
use crate::{Error, Result};

/// Tolerance for the diffusion netput decomposition residual
/// `max |Q̂ − (X̂ + μ^{n,*} η̂)|`. The identity is exact in real arithmetic;
/// floating cancellation across counts of order `n·t` leaves ~1e-12 at the
/// largest indices exercised here.
pub const NETPUT_DECOMPOSITION_TOL: f64 = 1e-9;

/// Tolerance for `max |Γ(x̂) − Ŵ|` on work-conserving traces of a model in
/// exact heavy traffic, where `Γ` is the one-sided reflection of the netput
/// workload. Same rounding sources as the decomposition residual.
pub const WORKLOAD_REFLECTION_TOL: f64 = 1e-9;

/// What happened at an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    /// A class-`i` job arrived.
    Arrival(usize),
    /// A class-`i` job finished service and departed.
    Service(usize),
    /// The environment jumped to a new state.
    EnvJump,
}

/// How much a simulation records.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RecordLevel {
    /// Every event, exactly ([`simulate`] → [`PathTrace`]).
    Events,
    /// Snapshots on a fixed grid of scaled times, with per-class queue
    /// suprema tracked pre-decimation ([`simulate_grid`] → [`GridPath`]).
    Grid {
        /// Grid spacing in scaled time.
        delta: f64,
    },
}

/// Everything one replication needs.
#[derive(Clone, Copy)]
pub struct SimulationRequest<'a> {
    /// The model to simulate.
    pub model: &'a NetworkModel,
    /// Scaling index `n ≥ 1`.
    pub n: u64,
    /// Scheduling policy.
    pub policy: &'a dyn Policy,
    /// Horizon in scaled time; the unscaled horizon is `n`× longer.
    pub horizon: f64,
    /// Master seed of the run.
    pub master_seed: u64,
    /// Replication index (selects the random stream).
    pub replication: u64,
    /// Starting environment state; `None` samples from the stationary law
    /// (the first draw of the stream).
    pub initial_env: Option<usize>,
    /// Recording level for [`simulate`]/[`simulate_grid`].
    pub record_level: RecordLevel,
}

/// The canonical clock: left-to-right fold of the per-class busy times,
/// then the idle time. Every recorded event time is produced by exactly
/// this expression, so consumers can refold and compare bitwise.
#[inline]
#[must_use]
pub fn canonical_elapsed(cum_alloc: &[f64], idle: f64) -> f64 {
    let mut t = 0.0;
    for &x in cum_alloc {
        t += x;
    }
    t + idle
}

/// State handed to an [`Observer`] at each event. All times are unscaled;
/// `_now` values are right-continuous (post-event), `_prev` values describe
/// the interval `[t_prev, t_now)` just closed.
pub struct EventCtx<'a> {
    /// Left endpoint of the closed interval.
    pub t_prev: f64,
    /// Event time (canonical clock).
    pub t_now: f64,
    /// Environment state on the interval.
    pub y_prev: usize,
    /// Environment state after the event.
    pub y_now: usize,
    /// What happened.
    pub kind: EventKind,
    /// Queue lengths on the interval.
    pub q_prev: &'a [u64],
    /// Queue lengths after the event.
    pub q_now: &'a [u64],
    /// Allocation on the interval.
    pub alloc_prev: &'a [f64],
    /// Allocation decided after the event.
    pub alloc_now: &'a [f64],
    /// Cumulative arrivals per class, post-event.
    pub arrivals: &'a [u64],
    /// Cumulative departures per class, post-event.
    pub departures: &'a [u64],
    /// Cumulative busy time per class at `t_now`.
    pub cum_alloc: &'a [f64],
    /// Cumulative idle time at `t_now`.
    pub idle: f64,
    /// `∫₀^{t_now} λⁿ_i(Y_s) ds` per class.
    pub int_arrival_rate: &'a [f64],
    /// `∫₀^{t_now} μⁿ_i(Y_s) a_i(s) ds` per class.
    pub int_service_rate: &'a [f64],
}

/// Streaming consumer of simulation events. Statistics runs implement this
/// instead of materializing traces; the simulator is generic over the
/// observer, so the hot loop monomorphizes.
pub trait Observer {
    /// Called once before the first event.
    fn on_start(&mut self, _k: usize, _initial_env: usize, _initial_alloc: &[f64]) {}

    /// Called after every event, including the final one at or beyond the
    /// horizon.
    fn on_event(&mut self, ctx: &EventCtx<'_>);

    /// Called after the last event (also when the total rate hit zero and
    /// the run stalled before the horizon).
    fn on_finish(&mut self) {}
}

/// A complete event-level record of one replication.
///
/// Columns are flat vectors with one entry (or one `K`-chunk) per event.
/// The state *after* event `e` persists on `[times[e], times[e+1])`; before
/// the first event the system is empty in state `initial_env` under
/// `initial_alloc`. The trace covers `[0, horizon_unscaled]`: the last
/// event lands at or beyond the horizon unless every rate vanished first,
/// in which case the final recorded state persists for good.
///
/// Fields are public so tests can assemble adversarial traces; simulator
/// output always satisfies the admissibility identities.
#[derive(Debug, Clone, PartialEq)]
pub struct PathTrace {
    /// Scaling index of the run.
    pub n: u64,
    /// Number of classes.
    pub k: usize,
    /// Unscaled horizon requested.
    pub horizon_unscaled: f64,
    /// Environment state before the first event.
    pub initial_env: usize,
    /// Allocation before the first event (all zeros: the system starts
    /// empty).
    pub initial_alloc: Vec<f64>,
    /// Event times (canonical clock), weakly increasing.
    pub times: Vec<f64>,
    /// Event kinds.
    pub kinds: Vec<EventKind>,
    /// Environment state after each event.
    pub env: Vec<usize>,
    /// Queue lengths after each event (`K` per event).
    pub queues: Vec<u64>,
    /// Allocation decided after each event (`K` per event).
    pub alloc: Vec<f64>,
    /// Cumulative busy time per class at each event (`K` per event).
    pub cum_alloc: Vec<f64>,
    /// Cumulative idle time at each event.
    pub idle: Vec<f64>,
    /// Cumulative arrivals per class (`K` per event).
    pub arrivals: Vec<u64>,
    /// Cumulative departures per class (`K` per event).
    pub departures: Vec<u64>,
    /// `∫λⁿ_i` per class at each event (`K` per event).
    pub int_arrival_rate: Vec<f64>,
    /// `∫μⁿ_i a_i` per class at each event (`K` per event).
    pub int_service_rate: Vec<f64>,
}

impl PathTrace {
    /// Number of events.
    #[must_use]
    pub fn events(&self) -> usize {
        self.times.len()
    }

    /// Queue lengths after event `e`.
    #[must_use]
    pub fn queues_at(&self, e: usize) -> &[u64] {
        &self.queues[e * self.k..(e + 1) * self.k]
    }

    /// Allocation after event `e`.
    #[must_use]
    pub fn alloc_at(&self, e: usize) -> &[f64] {
        &self.alloc[e * self.k..(e + 1) * self.k]
    }

    /// Cumulative busy times at event `e`.
    #[must_use]
    pub fn cum_alloc_at(&self, e: usize) -> &[f64] {
        &self.cum_alloc[e * self.k..(e + 1) * self.k]
    }

    /// Cumulative arrivals at event `e`.
    #[must_use]
    pub fn arrivals_at(&self, e: usize) -> &[u64] {
        &self.arrivals[e * self.k..(e + 1) * self.k]
    }

    /// Cumulative departures at event `e`.
    #[must_use]
    pub fn departures_at(&self, e: usize) -> &[u64] {
        &self.departures[e * self.k..(e + 1) * self.k]
    }

    /// Arrival-rate integrals at event `e`.
    #[must_use]
    pub fn int_arrival_at(&self, e: usize) -> &[f64] {
        &self.int_arrival_rate[e * self.k..(e + 1) * self.k]
    }

    /// Service-rate integrals at event `e`.
    #[must_use]
    pub fn int_service_at(&self, e: usize) -> &[f64] {
        &self.int_service_rate[e * self.k..(e + 1) * self.k]
    }

    /// Environment state on the interval *ending* at event `e`.
    #[must_use]
    pub fn env_before(&self, e: usize) -> usize {
        if e == 0 {
            self.initial_env
        } else {
            self.env[e - 1]
        }
    }

    /// Allocation on the interval ending at event `e`.
    #[must_use]
    pub fn alloc_before(&self, e: usize) -> &[f64] {
        if e == 0 {
            &self.initial_alloc
        } else {
            self.alloc_at(e - 1)
        }
    }

    /// Writes the trace as delimited text: a header row, then one row per
    /// event with columns `time, kind, class, envState, Q_1..Q_K,
    /// alloc_1..alloc_K, T_1..T_K, I`. Times are unscaled; floats carry 17
    /// significant digits so the dump is bit-faithful.
    ///
    /// # Errors
    ///
    /// Propagates I/O errors from the writer.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        write!(w, "time,kind,class,envState")?;
        for i in 1..=self.k {
            write!(w, ",Q{i}")?;
        }
        for i in 1..=self.k {
            write!(w, ",alloc{i}")?;
        }
        for i in 1..=self.k {
            write!(w, ",T{i}")?;
        }
        writeln!(w, ",I")?;
        for e in 0..self.events() {
            let (kind, class) = match self.kinds[e] {
                EventKind::Arrival(i) => ("arrival", (i + 1).to_string()),
                EventKind::Service(i) => ("service", (i + 1).to_string()),
                EventKind::EnvJump => ("envJump", String::new()),
            };
            write!(w, "{:.16e},{kind},{class},{}", self.times[e], self.env[e] + 1)?;
            for &q in self.queues_at(e) {
                write!(w, ",{q}")?;
            }
            for &a in self.alloc_at(e) {
                write!(w, ",{a:.16e}")?;
            }
            for &t in self.cum_alloc_at(e) {
                write!(w, ",{t:.16e}")?;
            }
            writeln!(w, ",{:.16e}", self.idle[e])?;
        }
        Ok(())
    }
}

/// The simulation engine for one replication.
struct Engine<'a> {
    k: usize,
    gen_states: usize,
    env_scale: f64,
    lambda: RateFunction,
    mu: RateFunction,
    lambda_row_sum: Vec<f64>,
    model: &'a NetworkModel,
    policy: &'a dyn Policy,
    n_f: f64,
    horizon_unscaled: f64,
}

impl<'a> Engine<'a> {
    fn new(req: &SimulationRequest<'a>) -> Result<Self> {
        if req.n == 0 {
            return Err(Error::InvalidArgument("scaling index n must be positive".into()));
        }
        if !req.horizon.is_finite() || req.horizon <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "horizon must be positive and finite, got {}",
                req.horizon
            )));
        }
        let (lambda, mu) = req.model.rates_at(req.n)?;
        let k = req.model.classes();
        let lambda_row_sum =
            (0..req.model.states()).map(|y| lambda.row(y).iter().sum()).collect();
        let n_f = req.n as f64;
        Ok(Self {
            k,
            gen_states: req.model.states(),
            env_scale: n_f.powf(req.model.regime().nu),
            lambda,
            mu,
            lambda_row_sum,
            model: req.model,
            policy: req.policy,
            n_f,
            horizon_unscaled: req.horizon * n_f,
        })
    }

    fn run<O: Observer>(&self, req: &SimulationRequest<'a>, obs: &mut O) -> Result<()> {
        let k = self.k;
        let mut rng = replication_stream(req.master_seed, req.replication);
        let y0 = match req.initial_env {
            Some(y) if y >= self.gen_states => {
                return Err(Error::InvalidArgument(format!(
                    "initial environment state {y} out of range (L = {})",
                    self.gen_states
                )));
            }
            Some(y) => y,
            None => self.model.stationary().sample(&mut rng),
        };

        let mut y = y0;
        let mut q = vec![0u64; k];
        let mut q_prev = vec![0u64; k];
        let mut arrivals = vec![0u64; k];
        let mut departures = vec![0u64; k];
        let mut cum_alloc = vec![0.0f64; k];
        let mut idle = 0.0f64;
        let mut int_lambda = vec![0.0f64; k];
        let mut int_mu_alloc = vec![0.0f64; k];
        let mut alloc = vec![0.0f64; k];
        let mut alloc_prev = vec![0.0f64; k];
        let mut time = 0.0f64;

        self.policy.decide(&q, y, 0.0, &mut alloc);
        debug_assert!(alloc.iter().all(|&a| a == 0.0), "policy must idle on an empty system");
        obs.on_start(k, y, &alloc);

        let gen = self.model.generator();
        loop {
            let env_rate = self.env_scale * gen.exit_rate(y);
            let arr_rate = self.lambda_row_sum[y];
            let mut svc_rate = 0.0;
            for i in 0..k {
                if alloc[i] > 0.0 {
                    svc_rate += self.mu.rate(y, i) * alloc[i];
                }
            }
            let total = env_rate + arr_rate + svc_rate;
            if total <= 0.0 {
                break; // nothing can ever happen again; state persists
            }

            let dt = crate::rng::standard_exponential(&mut rng) / total;

            // Close the interval: all rates are constant on it.
            for i in 0..k {
                int_lambda[i] += self.lambda.rate(y, i) * dt;
            }
            let mut busy = 0.0;
            for i in 0..k {
                let a = alloc[i];
                if a > 0.0 {
                    cum_alloc[i] += a * dt;
                    int_mu_alloc[i] += self.mu.rate(y, i) * a * dt;
                    busy += a;
                }
            }
            let gap = 1.0 - busy;
            if gap > 0.0 {
                idle += gap * dt;
            }
            let t_prev = time;
            time = canonical_elapsed(&cum_alloc, idle);

            // Pick the atom: environment destinations, arrivals, services.
            let y_prev = y;
            q_prev.copy_from_slice(&q);
            alloc_prev.copy_from_slice(&alloc);
            let v = rng.random::<f64>() * total;
            let kind = self.pick_event(v, y, &alloc, env_rate, arr_rate);
            match kind {
                EventKind::EnvJump => { /* destination applied in pick */ }
                EventKind::Arrival(i) => {
                    arrivals[i] += 1;
                    q[i] += 1;
                }
                EventKind::Service(i) => {
                    debug_assert!(q[i] > 0, "service completion on an empty queue");
                    departures[i] += 1;
                    q[i] -= 1;
                }
            }
            if let EventKind::EnvJump = kind {
                y = self.pick_env_destination(v, y_prev);
            }

            self.policy.decide(&q, y, time / self.n_f, &mut alloc);

            obs.on_event(&EventCtx {
                t_prev,
                t_now: time,
                y_prev,
                y_now: y,
                kind,
                q_prev: &q_prev,
                q_now: &q,
                alloc_prev: &alloc_prev,
                alloc_now: &alloc,
                arrivals: &arrivals,
                departures: &departures,
                cum_alloc: &cum_alloc,
                idle,
                int_arrival_rate: &int_lambda,
                int_service_rate: &int_mu_alloc,
            });

            if time >= self.horizon_unscaled {
                break;
            }
        }
        obs.on_finish();
        Ok(())
    }

    /// Classifies the uniform draw `v ∈ [0, total)` into an event kind.
    /// Environment destinations are resolved separately (same `v`) so this
    /// only decides the category boundaries.
    fn pick_event(&self, v: f64, y: usize, alloc: &[f64], env_rate: f64, arr_rate: f64) -> EventKind {
        if v < env_rate {
            return EventKind::EnvJump;
        }
        let mut acc = env_rate;
        let mut fallback: Option<EventKind> = if env_rate > 0.0 { Some(EventKind::EnvJump) } else { None };
        if arr_rate > 0.0 {
            for i in 0..self.k {
                let r = self.lambda.rate(y, i);
                if r > 0.0 {
                    acc += r;
                    fallback = Some(EventKind::Arrival(i));
                    if v < acc {
                        return EventKind::Arrival(i);
                    }
                }
            }
        }
        for i in 0..self.k {
            if alloc[i] > 0.0 {
                let r = self.mu.rate(y, i) * alloc[i];
                if r > 0.0 {
                    acc += r;
                    fallback = Some(EventKind::Service(i));
                    if v < acc {
                        return EventKind::Service(i);
                    }
                }
            }
        }
        // Round-off at the right edge: attribute to the last positive atom.
        fallback.expect("total rate was positive, some atom must be too")
    }

    /// Picks the destination of an environment jump given the uniform draw
    /// `v ∈ [0, env_rate)` that selected the jump.
    fn pick_env_destination(&self, v: f64, y: usize) -> usize {
        let gen = self.model.generator();
        let mut acc = 0.0;
        let mut dest = y;
        for j in 0..self.gen_states {
            if j == y {
                continue;
            }
            let r = self.env_scale * gen.rate(y, j);
            if r > 0.0 {
                acc += r;
                dest = j;
                if v < acc {
                    return j;
                }
            }
        }
        dest
    }
}

/// Records every event into a [`PathTrace`].
struct TraceRecorder {
    trace: PathTrace,
}

impl Observer for TraceRecorder {
    fn on_start(&mut self, _k: usize, initial_env: usize, initial_alloc: &[f64]) {
        self.trace.initial_env = initial_env;
        self.trace.initial_alloc = initial_alloc.to_vec();
    }

    fn on_event(&mut self, ctx: &EventCtx<'_>) {
        let t = &mut self.trace;
        t.times.push(ctx.t_now);
        t.kinds.push(ctx.kind);
        t.env.push(ctx.y_now);
        t.queues.extend_from_slice(ctx.q_now);
        t.alloc.extend_from_slice(ctx.alloc_now);
        t.cum_alloc.extend_from_slice(ctx.cum_alloc);
        t.idle.push(ctx.idle);
        t.arrivals.extend_from_slice(ctx.arrivals);
        t.departures.extend_from_slice(ctx.departures);
        t.int_arrival_rate.extend_from_slice(ctx.int_arrival_rate);
        t.int_service_rate.extend_from_slice(ctx.int_service_rate);
    }
}

/// Runs one replication and records every event.
///
/// # Errors
///
/// Invalid request (see [`SimulationRequest`]), or a request whose
/// `record_level` is not [`RecordLevel::Events`].
pub fn simulate(req: &SimulationRequest<'_>) -> Result<PathTrace> {
    let RecordLevel::Events = req.record_level else {
        return Err(Error::InvalidArgument(
            "simulate records events; use simulate_grid for grid recording".into(),
        ));
    };
    let engine = Engine::new(req)?;
    let mut rec = TraceRecorder {
        trace: PathTrace {
            n: req.n,
            k: req.model.classes(),
            horizon_unscaled: engine.horizon_unscaled,
            initial_env: 0,
            initial_alloc: vec![0.0; req.model.classes()],
            times: Vec::new(),
            kinds: Vec::new(),
            env: Vec::new(),
            queues: Vec::new(),
            alloc: Vec::new(),
            cum_alloc: Vec::new(),
            idle: Vec::new(),
            arrivals: Vec::new(),
            departures: Vec::new(),
            int_arrival_rate: Vec::new(),
            int_service_rate: Vec::new(),
        },
    };
    engine.run(req, &mut rec)?;
    Ok(rec.trace)
}

/// Runs one replication against a caller-supplied observer, recording
/// nothing itself. The request's `record_level` is ignored.
///
/// # Errors
///
/// Invalid request.
pub fn simulate_observed<O: Observer>(req: &SimulationRequest<'_>, obs: &mut O) -> Result<()> {
    Engine::new(req)?.run(req, obs)
}

/// Feeds a finished trace through an observer, reconstructing the same
/// event contexts the live simulation produced. Statistics computed
/// streaming and from a recorded trace therefore agree bitwise.
pub fn replay_trace<O: Observer>(trace: &PathTrace, obs: &mut O) {
    obs.on_start(trace.k, trace.initial_env, &trace.initial_alloc);
    let zeros = vec![0u64; trace.k];
    for e in 0..trace.events() {
        let q_prev = if e == 0 { zeros.as_slice() } else { trace.queues_at(e - 1) };
        obs.on_event(&EventCtx {
            t_prev: if e == 0 { 0.0 } else { trace.times[e - 1] },
            t_now: trace.times[e],
            y_prev: trace.env_before(e),
            y_now: trace.env[e],
            kind: trace.kinds[e],
            q_prev,
            q_now: trace.queues_at(e),
            alloc_prev: trace.alloc_before(e),
            alloc_now: trace.alloc_at(e),
            arrivals: trace.arrivals_at(e),
            departures: trace.departures_at(e),
            cum_alloc: trace.cum_alloc_at(e),
            idle: trace.idle[e],
            int_arrival_rate: trace.int_arrival_at(e),
            int_service_rate: trace.int_service_at(e),
        });
    }
    obs.on_finish();
}

/// Decimated snapshots on a fixed grid of scaled times.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPath {
    /// Number of classes.
    pub k: usize,
    /// Scaling index of the run.
    pub n: u64,
    /// Grid spacing in scaled time.
    pub delta: f64,
    /// Scaled grid times, starting at 0.
    pub times: Vec<f64>,
    /// Queue lengths at each grid time (`K` per point, right-continuous).
    pub queues: Vec<u64>,
    /// Cumulative idle time at each grid time (linear extrapolation between
    /// events; a derived view, not the canonical accumulator).
    pub idle: Vec<f64>,
    /// Cumulative busy time per class at each grid time (same caveat).
    pub cum_alloc: Vec<f64>,
    /// Per-class supremum of the queue over the *continuous* path up to the
    /// horizon, computed before decimation.
    pub sup_queue: Vec<u64>,
}

struct GridRecorder {
    k: usize,
    horizon: f64,
    delta_unscaled: f64,
    next: usize,
    points: usize,
    // snapshot of the state at the left end of the open interval
    t_prev: f64,
    q_prev: Vec<u64>,
    alloc_prev: Vec<f64>,
    cum_prev: Vec<f64>,
    idle_prev: f64,
    out: GridPath,
}

impl GridRecorder {
    fn record_at(&mut self, g: usize) {
        let tg = g as f64 * self.delta_unscaled;
        let dt = tg - self.t_prev;
        self.out.times.push(tg / self.out.n as f64);
        self.out.queues.extend_from_slice(&self.q_prev);
        for i in 0..self.k {
            self.out.cum_alloc.push(self.cum_prev[i] + self.alloc_prev[i] * dt);
        }
        let busy: f64 = self.alloc_prev.iter().sum();
        self.out.idle.push(self.idle_prev + (1.0 - busy).max(0.0) * dt);
    }
}

impl Observer for GridRecorder {
    fn on_start(&mut self, _k: usize, _initial_env: usize, _initial_alloc: &[f64]) {
        self.record_at(0); // grid point at t = 0: empty system
        self.next = 1;
    }

    fn on_event(&mut self, ctx: &EventCtx<'_>) {
        while self.next < self.points {
            let tg = self.next as f64 * self.delta_unscaled;
            if tg >= ctx.t_now {
                break;
            }
            self.record_at(self.next);
            self.next += 1;
        }
        if ctx.t_now <= self.horizon {
            for (s, &qv) in self.out.sup_queue.iter_mut().zip(ctx.q_now) {
                *s = (*s).max(qv);
            }
        }
        self.t_prev = ctx.t_now;
        self.q_prev.copy_from_slice(ctx.q_now);
        self.alloc_prev.copy_from_slice(ctx.alloc_now);
        self.cum_prev.copy_from_slice(ctx.cum_alloc);
        self.idle_prev = ctx.idle;
    }

    fn on_finish(&mut self) {
        while self.next < self.points {
            self.record_at(self.next);
            self.next += 1;
        }
    }
}

/// Runs one replication, recording snapshots on the grid `0, Δ, 2Δ, …`
/// (scaled time) up to the horizon. Queue values are right-continuous;
/// per-class suprema over the continuous path are tracked pre-decimation.
///
/// # Errors
///
/// Invalid request, non-positive `Δ`, or a `record_level` that is not
/// [`RecordLevel::Grid`].
pub fn simulate_grid(req: &SimulationRequest<'_>) -> Result<GridPath> {
    let RecordLevel::Grid { delta } = req.record_level else {
        return Err(Error::InvalidArgument(
            "simulate_grid needs grid recording; use simulate for events".into(),
        ));
    };
    if !delta.is_finite() || delta <= 0.0 {
        return Err(Error::InvalidArgument(format!("grid spacing must be positive, got {delta}")));
    }
    let engine = Engine::new(req)?;
    let k = req.model.classes();
    let points = (req.horizon / delta).floor() as usize + 1;
    let mut rec = GridRecorder {
        k,
        horizon: engine.horizon_unscaled,
        delta_unscaled: delta * req.n as f64,
        next: 0,
        points,
        t_prev: 0.0,
        q_prev: vec![0; k],
        alloc_prev: vec![0.0; k],
        cum_prev: vec![0.0; k],
        idle_prev: 0.0,
        out: GridPath {
            k,
            n: req.n,
            delta,
            times: Vec::with_capacity(points),
            queues: Vec::with_capacity(points * k),
            idle: Vec::with_capacity(points),
            cum_alloc: Vec::with_capacity(points * k),
            sup_queue: vec![0; k],
        },
    };
    engine.run(req, &mut rec)?;
    Ok(rec.out)
}

/// Tracks the per-class maximum queue length up to the horizon. The queue
/// is piecewise constant, so the supremum over the continuous path is the
/// maximum over post-event values (the initial state is empty).
#[derive(Debug, Clone)]
pub struct MaxQueueObserver {
    horizon_unscaled: f64,
    /// Per-class maximum of the queue over `[0, horizon]`.
    pub max_queue: Vec<u64>,
}

impl MaxQueueObserver {
    /// Creates an observer for a run with the given unscaled horizon.
    #[must_use]
    pub fn new(k: usize, horizon_unscaled: f64) -> Self {
        Self { horizon_unscaled, max_queue: vec![0; k] }
    }
}

impl Observer for MaxQueueObserver {
    fn on_event(&mut self, ctx: &EventCtx<'_>) {
        if ctx.t_now <= self.horizon_unscaled {
            for (m, &q) in self.max_queue.iter_mut().zip(ctx.q_now) {
                *m = (*m).max(q);
            }
        }
    }
}

/// Accumulates `∫₀^H q_i(s) ds` per class (clipped at the horizon), for
/// time-average statistics.
#[derive(Debug, Clone)]
pub struct TimeAverageQueueObserver {
    horizon_unscaled: f64,
    integral: Vec<f64>,
}

impl TimeAverageQueueObserver {
    /// Creates an observer for a run with the given unscaled horizon.
    #[must_use]
    pub fn new(k: usize, horizon_unscaled: f64) -> Self {
        Self { horizon_unscaled, integral: vec![0.0; k] }
    }

    /// Per-class time averages `∫₀^H q_i ds / H`.
    #[must_use]
    pub fn time_average(&self) -> Vec<f64> {
        self.integral.iter().map(|&x| x / self.horizon_unscaled).collect()
    }
}

impl Observer for TimeAverageQueueObserver {
    fn on_event(&mut self, ctx: &EventCtx<'_>) {
        let a = ctx.t_prev.min(self.horizon_unscaled);
        let b = ctx.t_now.min(self.horizon_unscaled);
        if b > a {
            for (acc, &q) in self.integral.iter_mut().zip(ctx.q_prev) {
                *acc += q as f64 * (b - a);
            }
        }
    }
}

/// Which scaling a [`ScaledPath`] carries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathScaling {
    /// Fluid: everything divided by `n`.
    Fluid,
    /// Diffusion: queues and idle time divided by `n^α` (busy times stay
    /// fluid-scaled — that is the natural companion in the decomposition).
    Diffusion {
        /// The exponent used.
        alpha: f64,
    },
}

/// A scaled view of a trace on its event grid, including the initial point.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledPath {
    /// Scaling applied.
    pub scaling: PathScaling,
    /// Number of classes.
    pub k: usize,
    /// Scaled times (`t/n`), starting at 0.
    pub times: Vec<f64>,
    /// Scaled queue lengths (`K` per point).
    pub queues: Vec<f64>,
    /// Scaled idle time.
    pub idle: Vec<f64>,
    /// Fluid-scaled busy times `T̄_i = T_i/n` (`K` per point).
    pub cum_alloc: Vec<f64>,
}

impl ScaledPath {
    /// Per-class supremum of `|q|` over the path (piecewise constant, so
    /// the grid maximum is the supremum).
    #[must_use]
    pub fn sup_abs_queue(&self) -> Vec<f64> {
        let mut out = vec![0.0f64; self.k];
        for row in self.queues.chunks_exact(self.k) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o = o.max(v.abs());
            }
        }
        out
    }

    /// Writes the path as delimited text with 17-significant-digit floats:
    /// `time, Q_1..Q_K, T_1..T_K, I`.
    ///
    /// # Errors
    ///
    /// Propagates I/O errors.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        write!(w, "time")?;
        for i in 1..=self.k {
            write!(w, ",Q{i}")?;
        }
        for i in 1..=self.k {
            write!(w, ",T{i}")?;
        }
        writeln!(w, ",I")?;
        for p in 0..self.times.len() {
            write!(w, "{:.16e}", self.times[p])?;
            for &q in &self.queues[p * self.k..(p + 1) * self.k] {
                write!(w, ",{q:.16e}")?;
            }
            for &t in &self.cum_alloc[p * self.k..(p + 1) * self.k] {
                write!(w, ",{t:.16e}")?;
            }
            writeln!(w, ",{:.16e}", self.idle[p])?;
        }
        Ok(())
    }
}

fn scale_trace(trace: &PathTrace, queue_div: f64, idle_div: f64, scaling: PathScaling) -> ScaledPath {
    let k = trace.k;
    let n_f = trace.n as f64;
    let events = trace.events();
    let mut times = Vec::with_capacity(events + 1);
    let mut queues = Vec::with_capacity((events + 1) * k);
    let mut idle = Vec::with_capacity(events + 1);
    let mut cum_alloc = Vec::with_capacity((events + 1) * k);
    times.push(0.0);
    queues.extend(std::iter::repeat_n(0.0, k));
    idle.push(0.0);
    cum_alloc.extend(std::iter::repeat_n(0.0, k));
    for e in 0..events {
        times.push(trace.times[e] / n_f);
        for &q in trace.queues_at(e) {
            queues.push(q as f64 / queue_div);
        }
        idle.push(trace.idle[e] / idle_div);
        for &t in trace.cum_alloc_at(e) {
            cum_alloc.push(t / n_f);
        }
    }
    ScaledPath { scaling, k, times, queues, idle, cum_alloc }
}

/// Fluid scaling: `Q̄ = Q/n`, `Ī = I/n`, `T̄ = T/n` on scaled time.
#[must_use]
pub fn fluid_scale(trace: &PathTrace) -> ScaledPath {
    let n_f = trace.n as f64;
    scale_trace(trace, n_f, n_f, PathScaling::Fluid)
}

/// Diffusion scaling: `Q̂ = Q/n^α`, `Î = I/n^α`, busy times fluid-scaled.
///
/// # Errors
///
/// `α` outside `(0, 1]`.
pub fn diffusion_scale(trace: &PathTrace, alpha: f64) -> Result<ScaledPath> {
    if !alpha.is_finite() || alpha <= 0.0 || alpha > 1.0 {
        return Err(Error::InvalidArgument(format!("α must lie in (0, 1], got {alpha}")));
    }
    let div = (trace.n as f64).powf(alpha);
    Ok(scale_trace(trace, div, div, PathScaling::Diffusion { alpha }))
}

/// The diffusion-scaled netput decomposition of a trace.
///
/// Per class, on the event grid (initial point included):
///
/// ```text
/// X̂_i = (A_i − ∫λⁿ_i)/n^α − (D_i − ∫μⁿ_i a_i)/n^α
///     + (∫λⁿ_i − λ^{n,*}_i t)/n^α − (∫μⁿ_i a_i − μ^{n,*}_i T_i)/n^α
///     + μ^{n,*}_i n^{1−α} (λ^{n,*}_i/μ^{n,*}_i − λ*_i/μ*_i) · (t/n)
/// η̂_i = n^{1−α} (λ*_i/μ*_i · t/n − T_i/n)
/// ```
///
/// and the decomposition identity `Q̂ = X̂ + μ^{n,*} η̂` holds exactly in
/// real arithmetic (all integral terms cancel), hence to ~1e-12 in floats.
/// The workload views `Ŵ = Σ Q̂_i/μ^{n,*}_i` and `x̂ = Σ X̂_i/μ^{n,*}_i` are
/// also recorded, the latter with its left limits so the one-sided
/// reflection can be evaluated including intra-jump infima.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionNetput {
    /// Number of classes.
    pub k: usize,
    /// Diffusion exponent used.
    pub alpha: f64,
    /// `Σ_i λ*_i/μ*_i` of the underlying model (exactly 1 in heavy
    /// traffic; reflection comparisons are meaningful only then).
    pub traffic_sum: f64,
    /// Scaled times on the event grid, starting at 0.
    pub times: Vec<f64>,
    /// Netput components (`K` per point).
    pub xhat: Vec<f64>,
    /// Centered allocation deviations (`K` per point).
    pub etahat: Vec<f64>,
    /// Scaled queues (`K` per point).
    pub qhat: Vec<f64>,
    /// Workload `Σ Q̂_i/μ^{n,*}_i` per point.
    pub workload: Vec<f64>,
    /// Netput workload `Σ X̂_i/μ^{n,*}_i` per point (right-continuous).
    pub netput_workload: Vec<f64>,
    /// Left limits of the netput workload at each point.
    pub netput_workload_pre: Vec<f64>,
    max_residual: f64,
}

impl DiffusionNetput {
    /// Largest decomposition residual `max |Q̂ − (X̂ + μ^{n,*} η̂)|` over the
    /// whole path.
    #[must_use]
    pub fn max_decomposition_residual(&self) -> f64 {
        self.max_residual
    }

    /// Largest gap `max |Γ(x̂) − Ŵ|` between the one-sided reflection of
    /// the netput workload and the actual workload. Meaningful for
    /// work-conserving traces of a model in exact heavy traffic.
    #[must_use]
    pub fn workload_reflection_residual(&self) -> f64 {
        let mut run_inf = 0.0f64;
        let mut worst = 0.0f64;
        for p in 0..self.times.len() {
            run_inf = run_inf.min(self.netput_workload_pre[p]).min(self.netput_workload[p]);
            let z = self.netput_workload[p] - run_inf.min(0.0);
            worst = worst.max((z - self.workload[p]).abs());
        }
        worst
    }
}

/// Computes the netput decomposition of a trace under its model.
///
/// # Errors
///
/// Trace/model mismatch (class count, missing rates at `n`).
pub fn diffusion_netput(trace: &PathTrace, model: &NetworkModel) -> Result<DiffusionNetput> {
    let k = trace.k;
    if model.classes() != k {
        return Err(Error::TraceMismatch(format!(
            "trace has {k} classes, model has {}",
            model.classes()
        )));
    }
    let n = trace.n;
    let n_f = n as f64;
    let alpha = model.regime().alpha;
    let n_alpha = n_f.powf(alpha);
    let n_one_alpha = n_f.powf(1.0 - alpha);
    let (lam_n_star, mu_n_star) = model.averaged_rates(n)?;
    let (lam_star, mu_star) = model.limit_rates();
    let rho_star: Vec<f64> = (0..k).map(|i| lam_star[i] / mu_star[i]).collect();
    let traffic_sum: f64 = rho_star.iter().sum();
    // Per-class drift coefficient in scaled time.
    let drift: Vec<f64> = (0..k)
        .map(|i| mu_n_star[i] * n_one_alpha * (lam_n_star[i] / mu_n_star[i] - rho_star[i]))
        .collect();

    let events = trace.events();
    let points = events + 1;
    let mut out = DiffusionNetput {
        k,
        alpha,
        traffic_sum,
        times: Vec::with_capacity(points),
        xhat: Vec::with_capacity(points * k),
        etahat: Vec::with_capacity(points * k),
        qhat: Vec::with_capacity(points * k),
        workload: Vec::with_capacity(points),
        netput_workload: Vec::with_capacity(points),
        netput_workload_pre: Vec::with_capacity(points),
        max_residual: 0.0,
    };
    out.times.push(0.0);
    out.xhat.extend(std::iter::repeat_n(0.0, k));
    out.etahat.extend(std::iter::repeat_n(0.0, k));
    out.qhat.extend(std::iter::repeat_n(0.0, k));
    out.workload.push(0.0);
    out.netput_workload.push(0.0);
    out.netput_workload_pre.push(0.0);

    for e in 0..events {
        let t = trace.times[e];
        let t_scaled = t / n_f;
        out.times.push(t_scaled);
        let a = trace.arrivals_at(e);
        let d = trace.departures_at(e);
        let q = trace.queues_at(e);
        let cum = trace.cum_alloc_at(e);
        let il = trace.int_arrival_at(e);
        let is = trace.int_service_at(e);

        let mut w = 0.0;
        let mut xw = 0.0;
        for i in 0..k {
            let centered_arrivals = (a[i] as f64 - il[i]) / n_alpha;
            let centered_departures = (d[i] as f64 - is[i]) / n_alpha;
            let rate_fluct_a = (il[i] - lam_n_star[i] * t) / n_alpha;
            let rate_fluct_s = (is[i] - mu_n_star[i] * cum[i]) / n_alpha;
            let x = centered_arrivals - centered_departures + rate_fluct_a - rate_fluct_s
                + drift[i] * t_scaled;
            let eta = n_one_alpha * (rho_star[i] * t_scaled - cum[i] / n_f);
            let qh = q[i] as f64 / n_alpha;
            out.xhat.push(x);
            out.etahat.push(eta);
            out.qhat.push(qh);
            let resid = (qh - (x + mu_n_star[i] * eta)).abs();
            if resid > out.max_residual {
                out.max_residual = resid;
            }
            w += qh / mu_n_star[i];
            xw += x / mu_n_star[i];
        }
        out.workload.push(w);
        // The netput workload jumps only at arrivals/departures; its left
        // limit differs from the value by exactly the jump of the counting
        // term.
        let jump = match trace.kinds[e] {
            EventKind::Arrival(i) => 1.0 / (n_alpha * mu_n_star[i]),
            EventKind::Service(i) => -1.0 / (n_alpha * mu_n_star[i]),
            EventKind::EnvJump => 0.0,
        };
        out.netput_workload.push(xw);
        out.netput_workload_pre.push(xw - jump);
    }
    Ok(out)
}
