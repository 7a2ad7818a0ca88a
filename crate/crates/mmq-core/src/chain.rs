//! The background environment chain.
//!
//! The environment is a continuous-time Markov chain on states
//! `0..L` given by a generator matrix `Q` (off-diagonal entries are jump
//! rates, rows sum to zero). In the queueing model the chain runs at time
//! scale `n^ν`, i.e. with generator `n^ν Q`; everything in this module works
//! with the unscaled `Q`, and the simulator applies the time scale.
//!
//! Beyond validation and exact jump simulation, this module solves the two
//! linear problems that drive the diffusion analysis:
//!
//! * the stationary distribution `π` (`πQ = 0`, `Σπ = 1`), and
//! * the Poisson equation `Q f̂ = π(f) − f` with the centering convention
//!   `π(f̂) = 0`, solved by one bordered direct solve per class.
//!
//! From the Poisson solution the long-run covariance of the integrated,
//! centered rate vector is assembled:
//!
//! ```text
//! Λ_ij = Σ_y [ (f_i(y) − f*_i) f̂_j(y) + (f_j(y) − f*_j) f̂_i(y) ] π(y)
//! ```
//!
//! which is symmetric by construction and positive semidefinite up to
//! round-off. All solves are verified after the fact against explicit
//! residual tolerances; failure to meet them is reported as an error rather
//! than silently returned.

use rand::Rng;

use crate::sim::PathTrace;
use crate::{Error, Result};

/// Absolute tolerance for generator row sums. Rows of a generator are sums
/// of user-entered rates and their negation; double rounding of a handful of
/// terms stays far below this.
pub const GENERATOR_ROW_SUM_TOL: f64 = 1e-12;

/// Residual tolerance for the stationary solve, `max_j |(πQ)_j|`. Direct LU
/// on the small, well-conditioned systems used here achieves ~1e-14; the
/// budget leaves two orders of headroom.
pub const STATIONARY_RESIDUAL_TOL: f64 = 1e-10;

/// Residual and centering tolerance for the Poisson solve:
/// `max_y |(Q f̂)(y) − (f* − f(y))|` and `|π(f̂)|`.
pub const POISSON_RESIDUAL_TOL: f64 = 1e-10;

/// Eigenvalue floor for the assembled covariance matrix: eigenvalues may be
/// negative only by round-off, never structurally.
pub const COVARIANCE_EIGEN_TOL: f64 = 1e-10;

/// A per-state, per-class rate table: `L` environment states × `K` classes.
///
/// Entries must be finite and nonnegative. (Strict positivity of arrival
/// rates is a modeling diagnostic, not a structural requirement: degenerate
/// zero-rate tables are legitimate inputs for stress tests and closed-form
/// checks.)
#[derive(Debug, Clone, PartialEq)]
pub struct RateFunction {
    l: usize,
    k: usize,
    values: Vec<f64>, // row-major: state y, then class i
}

impl RateFunction {
    /// Builds a rate table from rows indexed by environment state.
    ///
    /// # Errors
    ///
    /// Rejects empty tables, ragged rows, and entries that are negative,
    /// NaN, or infinite.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let l = rows.len();
        if l == 0 {
            return Err(Error::InvalidArgument("rate table has no states".into()));
        }
        let k = rows[0].len();
        if k == 0 {
            return Err(Error::InvalidArgument("rate table has no classes".into()));
        }
        let mut values = Vec::with_capacity(l * k);
        for (y, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::Dimension { what: "rate table row", expected: k, actual: row.len() });
            }
            for (i, &v) in row.iter().enumerate() {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "rate for state {y}, class {i} must be finite and nonnegative, got {v}"
                    )));
                }
                values.push(v);
            }
        }
        Ok(Self { l, k, values })
    }

    /// Constant-in-state table with one value per class.
    pub fn constant(l: usize, per_class: &[f64]) -> Result<Self> {
        Self::new(vec![per_class.to_vec(); l])
    }

    /// Number of environment states.
    #[must_use]
    pub fn states(&self) -> usize {
        self.l
    }

    /// Number of classes.
    #[must_use]
    pub fn classes(&self) -> usize {
        self.k
    }

    /// Rate of class `i` in state `y`.
    #[inline]
    #[must_use]
    pub fn rate(&self, y: usize, i: usize) -> f64 {
        self.values[y * self.k + i]
    }

    /// The whole row for state `y` (one rate per class).
    #[inline]
    #[must_use]
    pub fn row(&self, y: usize) -> &[f64] {
        &self.values[y * self.k..(y + 1) * self.k]
    }

    /// True when every class's rate is the same in all environment states.
    #[must_use]
    pub fn is_state_independent(&self) -> bool {
        (0..self.k).all(|i| {
            let first = self.rate(0, i);
            (1..self.l).all(|y| self.rate(y, i) == first)
        })
    }
}

/// A validated conservative generator matrix for an irreducible chain.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrix {
    l: usize,
    rows: Vec<f64>, // row-major L×L
}

impl GeneratorMatrix {
    /// Validates and stores a generator.
    ///
    /// Checks, in order: the matrix is square and nonempty; off-diagonal
    /// entries are finite and nonnegative; every row sums to zero within
    /// [`GENERATOR_ROW_SUM_TOL`]; and the directed graph of positive
    /// off-diagonal rates is strongly connected (a single-state chain is
    /// trivially irreducible).
    ///
    /// # Errors
    ///
    /// [`Error::InvalidGenerator`] for structural defects,
    /// [`Error::Reducible`] when the chain is not irreducible.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let l = rows.len();
        if l == 0 {
            return Err(Error::InvalidGenerator("generator has no states".into()));
        }
        let mut flat = Vec::with_capacity(l * l);
        for (y, row) in rows.iter().enumerate() {
            if row.len() != l {
                return Err(Error::Dimension { what: "generator row", expected: l, actual: row.len() });
            }
            let mut sum = 0.0;
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::InvalidGenerator(format!("entry ({y},{j}) is not finite")));
                }
                if j != y && v < 0.0 {
                    return Err(Error::InvalidGenerator(format!(
                        "off-diagonal entry ({y},{j}) = {v} is negative"
                    )));
                }
                if j == y && v > 0.0 {
                    return Err(Error::InvalidGenerator(format!(
                        "diagonal entry ({y},{y}) = {v} is positive"
                    )));
                }
                sum += v;
                flat.push(v);
            }
            if sum.abs() > GENERATOR_ROW_SUM_TOL {
                return Err(Error::InvalidGenerator(format!(
                    "row {y} sums to {sum:e}, exceeding |{GENERATOR_ROW_SUM_TOL:e}|"
                )));
            }
        }
        let g = Self { l, rows: flat };
        g.check_irreducible()?;
        Ok(g)
    }

    /// Number of environment states.
    #[must_use]
    pub fn states(&self) -> usize {
        self.l
    }

    /// Entry `Q[y][j]`.
    #[inline]
    #[must_use]
    pub fn rate(&self, y: usize, j: usize) -> f64 {
        self.rows[y * self.l + j]
    }

    /// Row `y` of the generator.
    #[inline]
    #[must_use]
    pub fn row(&self, y: usize) -> &[f64] {
        &self.rows[y * self.l..(y + 1) * self.l]
    }

    /// Total jump rate out of state `y`, `−Q[y][y]`.
    #[inline]
    #[must_use]
    pub fn exit_rate(&self, y: usize) -> f64 {
        -self.rate(y, y)
    }

    /// Strong connectivity of the positive-rate digraph via forward and
    /// backward reachability from state 0.
    fn check_irreducible(&self) -> Result<()> {
        if self.l == 1 {
            return Ok(());
        }
        let reach = |transpose: bool| -> Vec<bool> {
            let mut seen = vec![false; self.l];
            let mut stack = vec![0usize];
            seen[0] = true;
            while let Some(y) = stack.pop() {
                for j in 0..self.l {
                    let r = if transpose { self.rate(j, y) } else { self.rate(y, j) };
                    if j != y && r > 0.0 && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            seen
        };
        let fwd = reach(false);
        let bwd = reach(true);
        for y in 0..self.l {
            if !fwd[y] {
                return Err(Error::Reducible(format!("state {y} is unreachable from state 0")));
            }
            if !bwd[y] {
                return Err(Error::Reducible(format!("state 0 is unreachable from state {y}")));
            }
        }
        Ok(())
    }

    /// Solves `πQ = 0`, `Σπ = 1` by a direct solve of `Qᵀ` with the last
    /// equation replaced by the normalization row.
    ///
    /// The result is verified against [`STATIONARY_RESIDUAL_TOL`]; entries
    /// within round-off below zero are clamped and the vector renormalized.
    ///
    /// # Errors
    ///
    /// [`Error::Solver`] if the solve fails or verification does not meet
    /// tolerance (which indicates severe ill-conditioning, not a tolerable
    /// approximation).
    pub fn stationary_distribution(&self) -> Result<StationaryDistribution> {
        let l = self.l;
        if l == 1 {
            return Ok(StationaryDistribution { pi: vec![1.0] });
        }
        let mut m = nalgebra::DMatrix::<f64>::zeros(l, l);
        for y in 0..l {
            for j in 0..l {
                m[(j, y)] = self.rate(y, j); // transpose
            }
        }
        for y in 0..l {
            m[(l - 1, y)] = 1.0; // normalization replaces the redundant row
        }
        let mut b = nalgebra::DVector::<f64>::zeros(l);
        b[l - 1] = 1.0;
        let lu = m.lu();
        let sol = lu
            .solve(&b)
            .ok_or_else(|| Error::Solver("stationary system is singular".into()))?;
        let mut pi: Vec<f64> = sol.iter().copied().collect();
        for p in &mut pi {
            if *p < 0.0 {
                if *p < -STATIONARY_RESIDUAL_TOL {
                    return Err(Error::Solver(format!(
                        "stationary solve produced a negative probability {p:e}"
                    )));
                }
                *p = 0.0;
            }
        }
        let total: f64 = pi.iter().sum();
        for p in &mut pi {
            *p /= total;
        }
        let dist = StationaryDistribution { pi };
        let resid = dist.residual(self);
        if resid > STATIONARY_RESIDUAL_TOL {
            return Err(Error::Solver(format!(
                "stationary residual {resid:e} exceeds {STATIONARY_RESIDUAL_TOL:e}"
            )));
        }
        Ok(dist)
    }

    /// Samples the next jump from state `y`: holding time (exponential with
    /// the exit rate) and destination (categorical over the off-diagonal
    /// row). A state with zero exit rate returns `(+∞, y)`.
    pub fn next_jump<R: Rng + ?Sized>(&self, y: usize, rng: &mut R) -> (f64, usize) {
        let exit = self.exit_rate(y);
        if exit <= 0.0 {
            return (f64::INFINITY, y);
        }
        let dt = crate::rng::standard_exponential(rng) / exit;
        let target = rng.random::<f64>() * exit;
        let mut acc = 0.0;
        let mut dest = y;
        for j in 0..self.l {
            if j == y {
                continue;
            }
            let r = self.rate(y, j);
            if r <= 0.0 {
                continue;
            }
            acc += r;
            dest = j;
            if target < acc {
                return (dt, j);
            }
        }
        // Round-off can leave `target` marginally above the accumulated sum;
        // the last positive-rate destination is the correct limit choice.
        (dt, dest)
    }

    /// Solves the Poisson equation `Q f̂ = π(f) − f` column by column with the
    /// centering convention `π(f̂) = 0`, via the bordered system
    /// `[[Q, 1], [π, 0]]`.
    ///
    /// # Errors
    ///
    /// Dimension mismatch, singular solve, or a verified residual/centering
    /// above [`POISSON_RESIDUAL_TOL`].
    pub fn solve_poisson_equation(
        &self,
        f: &RateFunction,
        pi: &StationaryDistribution,
    ) -> Result<PoissonEquationSolution> {
        let l = self.l;
        if f.states() != l {
            return Err(Error::Dimension { what: "rate table states", expected: l, actual: f.states() });
        }
        if pi.len() != l {
            return Err(Error::Dimension { what: "stationary vector", expected: l, actual: pi.len() });
        }
        let k = f.classes();
        let f_star = pi.expectation(f);

        let mut m = nalgebra::DMatrix::<f64>::zeros(l + 1, l + 1);
        for y in 0..l {
            for j in 0..l {
                m[(y, j)] = self.rate(y, j);
            }
            m[(y, l)] = 1.0;
            m[(l, y)] = pi.pi[y];
        }
        let lu = m.lu();

        let mut hat = vec![0.0; l * k];
        for i in 0..k {
            let mut b = nalgebra::DVector::<f64>::zeros(l + 1);
            for y in 0..l {
                b[y] = f_star[i] - f.rate(y, i);
            }
            let sol = lu
                .solve(&b)
                .ok_or_else(|| Error::Solver("Poisson system is singular".into()))?;
            for y in 0..l {
                hat[y * k + i] = sol[y];
            }
        }
        let solution = PoissonEquationSolution { l, k, f_star, hat };
        let (resid, centering) = solution.verify(self, f, pi);
        if resid > POISSON_RESIDUAL_TOL || centering > POISSON_RESIDUAL_TOL {
            return Err(Error::Solver(format!(
                "Poisson solve verification failed: residual {resid:e}, centering {centering:e} \
                 (tolerance {POISSON_RESIDUAL_TOL:e})"
            )));
        }
        Ok(solution)
    }

    /// Long-run covariance of the integrated centered rates
    /// `t^{-1/2} ∫_0^t (f(Y_s) − f*) ds`, assembled from the Poisson
    /// solution:
    ///
    /// ```text
    /// Λ_ij = Σ_y [(f_i(y) − f*_i) f̂_j(y) + (f_j(y) − f*_j) f̂_i(y)] π(y)
    /// ```
    ///
    /// The same formula serves both the limiting rates and the rates at a
    /// finite index `n`; the caller chooses which table to pass.
    ///
    /// # Errors
    ///
    /// Propagates Poisson-solve errors; fails if the assembled matrix has an
    /// eigenvalue below `−`[`COVARIANCE_EIGEN_TOL`].
    pub fn integrated_rate_covariance(
        &self,
        f: &RateFunction,
        pi: &StationaryDistribution,
    ) -> Result<CovarianceMatrix> {
        let sol = self.solve_poisson_equation(f, pi)?;
        let k = f.classes();
        let mut values = vec![0.0; k * k];
        for i in 0..k {
            for j in i..k {
                let mut s = 0.0;
                for y in 0..self.l {
                    let di = f.rate(y, i) - sol.f_star[i];
                    let dj = f.rate(y, j) - sol.f_star[j];
                    s += (di * sol.hat(y, j) + dj * sol.hat(y, i)) * pi.pi[y];
                }
                values[i * k + j] = s;
                values[j * k + i] = s; // exact symmetry by assignment
            }
        }
        CovarianceMatrix::new(k, values)
    }
}

/// Stationary distribution of the environment chain.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDistribution {
    /// Probability per state; entries are nonnegative and sum to one.
    pub pi: Vec<f64>,
}

impl StationaryDistribution {
    /// Number of states.
    #[must_use]
    pub fn len(&self) -> usize {
        self.pi.len()
    }

    /// True for an empty vector (never produced by a successful solve).
    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }

    /// Stationary expectation per class, `(π f)_i = Σ_y π(y) f_i(y)`.
    #[must_use]
    pub fn expectation(&self, f: &RateFunction) -> Vec<f64> {
        let k = f.classes();
        let mut out = vec![0.0; k];
        for (y, &p) in self.pi.iter().enumerate() {
            for (i, o) in out.iter_mut().enumerate() {
                *o += p * f.rate(y, i);
            }
        }
        out
    }

    /// `max_j |(πQ)_j|`.
    #[must_use]
    pub fn residual(&self, q: &GeneratorMatrix) -> f64 {
        let l = self.pi.len();
        let mut worst: f64 = 0.0;
        for j in 0..l {
            let mut s = 0.0;
            for y in 0..l {
                s += self.pi[y] * q.rate(y, j);
            }
            worst = worst.max(s.abs());
        }
        worst
    }

    /// Samples a state from `π`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (y, &p) in self.pi.iter().enumerate() {
            acc += p;
            if u < acc {
                return y;
            }
        }
        self.pi.len() - 1
    }
}

/// Centered solution `f̂` of the Poisson equation for an `L×K` rate table.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonEquationSolution {
    l: usize,
    k: usize,
    /// Stationary averages `π(f)`, one per class.
    pub f_star: Vec<f64>,
    hat: Vec<f64>, // row-major L×K
}

impl PoissonEquationSolution {
    /// Solution value `f̂_i(y)`.
    #[inline]
    #[must_use]
    pub fn hat(&self, y: usize, i: usize) -> f64 {
        self.hat[y * self.k + i]
    }

    /// Returns `(residual, centering)`:
    /// `max_{y,i} |(Q f̂)_i(y) − (f*_i − f_i(y))|` and `max_i |π(f̂_i)|`.
    #[must_use]
    pub fn verify(&self, q: &GeneratorMatrix, f: &RateFunction, pi: &StationaryDistribution) -> (f64, f64) {
        let mut resid: f64 = 0.0;
        let mut centering: f64 = 0.0;
        for i in 0..self.k {
            let mut center = 0.0;
            for y in 0..self.l {
                let mut qhat = 0.0;
                for j in 0..self.l {
                    qhat += q.rate(y, j) * self.hat(j, i);
                }
                resid = resid.max((qhat - (self.f_star[i] - f.rate(y, i))).abs());
                center += pi.pi[y] * self.hat(y, i);
            }
            centering = centering.max(center.abs());
        }
        (resid, centering)
    }
}

/// Symmetric positive-semidefinite covariance matrix (up to round-off).
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    k: usize,
    values: Vec<f64>, // row-major K×K, exactly symmetric
    min_eigenvalue: f64,
}

impl CovarianceMatrix {
    /// Wraps a row-major `k×k` matrix, enforcing exact symmetry and an
    /// eigenvalue floor of `−`[`COVARIANCE_EIGEN_TOL`].
    ///
    /// # Errors
    ///
    /// Dimension mismatch, asymmetry, or an eigenvalue materially below
    /// zero.
    pub fn new(k: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != k * k {
            return Err(Error::Dimension { what: "covariance entries", expected: k * k, actual: values.len() });
        }
        for i in 0..k {
            for j in (i + 1)..k {
                if values[i * k + j] != values[j * k + i] {
                    return Err(Error::InvalidArgument(format!(
                        "covariance not exactly symmetric at ({i},{j})"
                    )));
                }
            }
        }
        let m = nalgebra::DMatrix::from_row_slice(k, k, &values);
        let eig = m.symmetric_eigen();
        let min_eigenvalue = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        if min_eigenvalue < -COVARIANCE_EIGEN_TOL {
            return Err(Error::InvalidArgument(format!(
                "covariance has eigenvalue {min_eigenvalue:e} below -{COVARIANCE_EIGEN_TOL:e}"
            )));
        }
        Ok(Self { k, values, min_eigenvalue })
    }

    /// Diagonal matrix with the given entries.
    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        let k = diag.len();
        let mut values = vec![0.0; k * k];
        for (i, &d) in diag.iter().enumerate() {
            values[i * k + i] = d;
        }
        Self::new(k, values)
    }

    /// Matrix order.
    #[must_use]
    pub fn dim(&self) -> usize {
        self.k
    }

    /// Entry `(i, j)`.
    #[inline]
    #[must_use]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.k + j]
    }

    /// Smallest eigenvalue (cached at construction).
    #[must_use]
    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }

    /// Entry-wise sum with another covariance of the same order.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if other.k != self.k {
            return Err(Error::Dimension { what: "covariance order", expected: self.k, actual: other.k });
        }
        let values: Vec<f64> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a + b)
            .collect();
        Self::new(self.k, values)
    }

    /// Quadratic form `vᵀ Λ v`.
    #[must_use]
    pub fn quadratic_form(&self, v: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.k {
            for j in 0..self.k {
                s += v[i] * self.get(i, j) * v[j];
            }
        }
        s
    }

    /// A factor `F` with `F Fᵀ = Λ`, built from the symmetric
    /// eigendecomposition with negative round-off eigenvalues clamped to
    /// zero. Works for singular matrices, where a Cholesky factorization
    /// would fail.
    #[must_use]
    pub fn factor(&self) -> Vec<f64> {
        let m = nalgebra::DMatrix::from_row_slice(self.k, self.k, &self.values);
        let eig = m.symmetric_eigen();
        let mut f = nalgebra::DMatrix::<f64>::zeros(self.k, self.k);
        for c in 0..self.k {
            let s = eig.eigenvalues[c].max(0.0).sqrt();
            for r in 0..self.k {
                f[(r, c)] = eig.eigenvectors[(r, c)] * s;
            }
        }
        let mut out = vec![0.0; self.k * self.k];
        for r in 0..self.k {
            for c in 0..self.k {
                out[r * self.k + c] = f[(r, c)];
            }
        }
        out
    }
}

/// A piecewise-linear per-class path recorded on an event grid, in scaled
/// time. Produced by [`ergodic_fluctuation`].
#[derive(Debug, Clone, PartialEq)]
pub struct PhiPath {
    /// Number of classes.
    pub k: usize,
    /// Scaled times, starting at 0.
    pub times: Vec<f64>,
    /// Path values, `k` per time point.
    pub values: Vec<f64>,
}

impl PhiPath {
    /// Per-class supremum of `|Φ_i|` over the whole path. The path is
    /// piecewise linear, so the supremum is attained at a grid point.
    #[must_use]
    pub fn sup_abs(&self) -> Vec<f64> {
        let mut out = vec![0.0f64; self.k];
        for row in self.values.chunks_exact(self.k) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o = o.max(v.abs());
            }
        }
        out
    }
}

/// Integrated, centered, allocation-weighted rate fluctuation along a trace:
///
/// ```text
/// Φ_i(t) = n^{-1/2} ∫_0^{nt} (f_i(Y_s) − f*_i) Ṫ_i(s) ds ,   f* = π(f).
/// ```
///
/// The integrand is piecewise constant between events, so the integral is
/// evaluated exactly interval by interval — no quadrature error. Returned on
/// the event grid in scaled time, including the initial point `(0, 0)`.
///
/// # Errors
///
/// Dimension mismatches between the trace, the rate table, and `π`.
pub fn ergodic_fluctuation(
    trace: &PathTrace,
    f: &RateFunction,
    pi: &StationaryDistribution,
) -> Result<PhiPath> {
    let k = trace.k;
    if f.classes() != k {
        return Err(Error::Dimension { what: "rate table classes", expected: k, actual: f.classes() });
    }
    if pi.len() != f.states() {
        return Err(Error::Dimension { what: "stationary vector", expected: f.states(), actual: pi.len() });
    }
    let f_star = pi.expectation(f);
    let n = trace.n as f64;
    let sqrt_n = n.sqrt();
    let events = trace.events();

    let mut times = Vec::with_capacity(events + 1);
    let mut values = Vec::with_capacity((events + 1) * k);
    times.push(0.0);
    values.extend(std::iter::repeat_n(0.0, k));

    let mut phi = vec![0.0f64; k];
    let mut t_prev = 0.0f64;
    for e in 0..events {
        let y = trace.env_before(e);
        if y >= f.states() {
            return Err(Error::TraceMismatch(format!(
                "trace visits environment state {y}, rate table has {}",
                f.states()
            )));
        }
        let alloc = trace.alloc_before(e);
        let dt = trace.times[e] - t_prev;
        for i in 0..k {
            phi[i] += (f.rate(y, i) - f_star[i]) * alloc[i] * dt;
        }
        t_prev = trace.times[e];
        times.push(t_prev / n);
        values.extend(phi.iter().map(|&v| v / sqrt_n));
    }
    Ok(PhiPath { k, times, values })
}
