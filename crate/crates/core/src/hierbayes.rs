//! Exact Gaussian-linear (a,b)-model.
//!
//! Task `i` has parameter `θ_i = (u_i, π)` with `u_i ∈ ℝ^a` task specific
//! and `π ∈ ℝ^b` shared. Observations are `y = xᵀθ_i + ε`,
//! `x ~ N(0, I_{a+b})`, `ε ~ N(0, σ²)`. The true prior draws
//! `u_i ~ N(0, τ²I_a)` and fixes the shared block to `π*`; the learner puts a
//! `N(0, ρ²I_b)` hyper-prior on `π` (or clamps it to `π*` when the prior is
//! known) and keeps the exact joint Gaussian posterior over
//! `(u_1, …, u_n, π)`.
//!
//! The per-trial loss is the KL divergence, per task and in nats, from the
//! true joint distribution of the next column of outputs to the learner's
//! joint predictive, averaged over fresh inputs. Summing it over trials
//! gives the cumulative risk, whose growth in `ln m` is `(a + b/n)/2`
//! asymptotically (`a/2` with the prior known).

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ABModelSpec {
    pub a: usize,
    pub b: usize,
    pub tau: f64,
    pub rho: f64,
    pub sigma: f64,
    pub pi_star: Vec<f64>,
}

/// Deterministic `π*` for a seed: each coordinate stretched into [-1, 1].
pub fn default_pi_star(b: usize, seed: u64) -> Vec<f64> {
    (0..b as u64)
        .map(|j| 2.0 * seed::unit_interval(seed::derive(seed, &[0x7069, j])) - 1.0)
        .collect()
}

impl ABModelSpec {
    /// Unit scales (`τ = ρ = σ = 1`) with the seed's default `π*`.
    pub fn unit(a: usize, b: usize, seed: u64) -> Self {
        ABModelSpec { a, b, tau: 1.0, rho: 1.0, sigma: 1.0, pi_star: default_pi_star(b, seed) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.a + self.b == 0 {
            return Err(Error::invalid("(a,b)-model needs a + b >= 1"));
        }
        for (name, v) in [("tau", self.tau), ("rho", self.rho), ("sigma", self.sigma)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.pi_star.len() != self.b {
            return Err(Error::invalid(format!("pi_star has length {}, expected b={}", self.pi_star.len(), self.b)));
        }
        Ok(())
    }

    /// Dimension of one task's parameter and input.
    pub fn dim(&self) -> usize {
        self.a + self.b
    }
}

/// `n` task parameters `θ_i = (u_i, π*)`, `u_i ~ N(0, τ²I_a)` seeded by
/// `derive(seed, [i])`.
pub fn sample_ab_tasks(spec: &ABModelSpec, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::invalid("sample_ab_tasks needs n >= 1"));
    }
    let normal = Normal::new(0.0, spec.tau).expect("validated");
    Ok((0..n as u64)
        .map(|i| {
            let mut rng = seed::rng(seed::derive(seed, &[i]));
            let mut theta: Vec<f64> = (0..spec.a).map(|_| normal.sample(&mut rng)).collect();
            theta.extend_from_slice(&spec.pi_star);
            theta
        })
        .collect())
}

/// `y = xᵀθ + ε`, `ε ~ N(0, σ²)` drawn from `rng`.
pub fn observe_with<R: Rng + ?Sized>(theta: &[f64], x: Vec<f64>, sigma: f64, rng: &mut R) -> Result<Example> {
    if x.len() != theta.len() {
        return Err(Error::invalid(format!("input has dimension {}, expected {}", x.len(), theta.len())));
    }
    let eps: f64 = StandardNormal.sample(rng);
    let y = dot(&x, theta) + sigma * eps;
    Ok(Example::new(x, y))
}

pub fn observe(spec: &ABModelSpec, theta: &[f64], x: Vec<f64>, seed: u64) -> Result<Example> {
    observe_with(theta, x, spec.sigma, &mut seed::rng(seed))
}

/// A standard normal design point in `ℝ^dim`.
pub fn draw_input<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Exact joint Gaussian posterior over `(u_1, …, u_n, π)`.
///
/// Kept in information form (precision and precision-weighted mean), with
/// the mean and covariance refreshed through a Cholesky factorization after
/// every update.
#[derive(Debug, Clone)]
pub struct PosteriorState {
    n: usize,
    a: usize,
    b: usize,
    /// `Some(π*)` in known-prior mode, where the shared block is not inferred.
    clamped: Option<Vec<f64>>,
    observations_per_task: usize,
    precision: DMatrix<f64>,
    info: DVector<f64>,
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
}

impl PosteriorState {
    /// The learner's prior before any data.
    pub fn prior(spec: &ABModelSpec, n: usize, known_prior: bool) -> Result<Self> {
        spec.validate()?;
        if n == 0 {
            return Err(Error::invalid("posterior needs n >= 1 tasks"));
        }
        let shared = if known_prior { 0 } else { spec.b };
        let dim = n * spec.a + shared;
        let diag = DVector::from_iterator(
            dim,
            (0..dim).map(|i| if i < n * spec.a { spec.tau.powi(-2) } else { spec.rho.powi(-2) }),
        );
        let mut state = PosteriorState {
            n,
            a: spec.a,
            b: spec.b,
            clamped: known_prior.then(|| spec.pi_star.clone()),
            observations_per_task: 0,
            precision: DMatrix::from_diagonal(&diag),
            info: DVector::zeros(dim),
            mean: DVector::zeros(dim),
            covariance: DMatrix::zeros(dim, dim),
        };
        state.refresh()?;
        Ok(state)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn observations_per_task(&self) -> usize {
        self.observations_per_task
    }

    pub fn is_known_prior(&self) -> bool {
        self.clamped.is_some()
    }

    /// Number of inferred coordinates: `n·a (+ b)`.
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    /// Joint-state coordinates and coefficients of `xᵀθ_task`.
    fn row(&self, task: usize, x: &[f64]) -> Vec<(usize, f64)> {
        let mut row: Vec<(usize, f64)> = (0..self.a).map(|j| (task * self.a + j, x[j])).collect();
        if self.clamped.is_none() {
            row.extend((0..self.b).map(|j| (self.n * self.a + j, x[self.a + j])));
        }
        row
    }

    /// `xᵀ` applied to the clamped shared block (zero unless known prior).
    fn clamped_offset(&self, x: &[f64]) -> f64 {
        self.clamped.as_ref().map_or(0.0, |pi| dot(&x[self.a..], pi))
    }

    fn check_task_input(&self, task: usize, x: &[f64]) -> Result<()> {
        if task >= self.n {
            return Err(Error::invalid(format!("task {task} out of range for n={}", self.n)));
        }
        if x.len() != self.a + self.b {
            return Err(Error::invalid(format!("input has dimension {}, expected {}", x.len(), self.a + self.b)));
        }
        Ok(())
    }

    /// Posterior mean of `θ_task`.
    pub fn task_mean(&self, task: usize) -> Vec<f64> {
        let mut m: Vec<f64> = (0..self.a).map(|j| self.mean[task * self.a + j]).collect();
        match &self.clamped {
            Some(pi) => m.extend_from_slice(pi),
            None => m.extend((0..self.b).map(|j| self.mean[self.n * self.a + j])),
        }
        m
    }

    /// Posterior covariance of `θ_task`; the shared block is zero when clamped.
    pub fn task_covariance(&self, task: usize) -> DMatrix<f64> {
        let dim = self.a + self.b;
        let idx: Vec<Option<usize>> = (0..dim)
            .map(|j| {
                if j < self.a {
                    Some(task * self.a + j)
                } else if self.clamped.is_none() {
                    Some(self.n * self.a + j - self.a)
                } else {
                    None
                }
            })
            .collect();
        DMatrix::from_fn(dim, dim, |r, c| match (idx[r], idx[c]) {
            (Some(p), Some(q)) => self.covariance[(p, q)],
            _ => 0.0,
        })
    }

    fn refresh(&mut self) -> Result<()> {
        let dim = self.dim();
        if dim == 0 {
            return Ok(());
        }
        let chol = Cholesky::new(self.precision.clone())
            .ok_or_else(|| Error::NumericalFailure("posterior precision lost positive-definiteness".into()))?;
        if chol.l_dirty().diagonal().iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
            return Err(Error::NumericalFailure("non-positive Cholesky pivot".into()));
        }
        self.mean = chol.solve(&self.info);
        let inv = chol.inverse();
        self.covariance = (&inv + inv.transpose()) * 0.5;
        Ok(())
    }

    /// Absorbs one example per task (a column of the (n,m)-sample).
    pub fn absorb(&mut self, spec: &ABModelSpec, column: &[Example]) -> Result<()> {
        if column.len() != self.n {
            return Err(Error::invalid(format!("column has {} examples for {} tasks", column.len(), self.n)));
        }
        if spec.a != self.a || spec.b != self.b {
            return Err(Error::invalid("state dimensions do not match the model"));
        }
        let w = spec.sigma.powi(-2);
        for (task, ex) in column.iter().enumerate() {
            self.check_task_input(task, &ex.x)?;
            let row = self.row(task, &ex.x);
            let y = ex.y - self.clamped_offset(&ex.x);
            for &(p, cp) in &row {
                self.info[p] += w * cp * y;
                for &(q, cq) in &row {
                    self.precision[(p, q)] += w * cp * cq;
                }
            }
        }
        self.observations_per_task += 1;
        self.refresh()
    }

    /// Joint Gaussian predictive of the outputs at `inputs[i]` for task `i`:
    /// mean vector and covariance (including observation noise).
    pub fn predictive_joint(&self, spec: &ABModelSpec, inputs: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
        if inputs.len() != self.n {
            return Err(Error::invalid("need one input per task"));
        }
        let rows = inputs
            .iter()
            .enumerate()
            .map(|(i, x)| {
                self.check_task_input(i, x)?;
                Ok(self.row(i, x))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = self.n;
        let mean: Vec<f64> = rows
            .iter()
            .zip(inputs)
            .map(|(r, x)| r.iter().map(|&(p, c)| c * self.mean[p]).sum::<f64>() + self.clamped_offset(x))
            .collect();
        let mut cov = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = 0.0;
                for &(p, cp) in &rows[i] {
                    for &(q, cq) in &rows[j] {
                        s += cp * cq * self.covariance[(p, q)];
                    }
                }
                if i == j {
                    s += spec.sigma * spec.sigma;
                }
                cov[i * n + j] = s;
                cov[j * n + i] = s;
            }
        }
        Ok((mean, cov))
    }
}

/// Functional form of a conjugate update.
pub fn posterior_update(state: &PosteriorState, spec: &ABModelSpec, column: &[Example]) -> Result<PosteriorState> {
    let mut next = state.clone();
    next.absorb(spec, column)?;
    Ok(next)
}

/// Gaussian predictive `(mean, variance)` of task `task`'s output at `x`:
/// `mean = xᵀE[θ_task]`, `variance = σ² + xᵀΣ_task x`.
pub fn predictive(state: &PosteriorState, spec: &ABModelSpec, task: usize, x: &[f64]) -> Result<(f64, f64)> {
    state.check_task_input(task, x)?;
    let row = state.row(task, x);
    let mean = row.iter().map(|&(p, c)| c * state.mean[p]).sum::<f64>() + state.clamped_offset(x);
    let mut var = spec.sigma * spec.sigma;
    for &(p, cp) in &row {
        for &(q, cq) in &row {
            var += cp * cq * state.covariance[(p, q)];
        }
    }
    Ok((mean, var))
}

/// `KL(N(m1, v1) ‖ N(m2, v2))` in nats.
pub fn gaussian_kl(m1: f64, v1: f64, m2: f64, v2: f64) -> Result<f64> {
    if !(v1 > 0.0 && v2 > 0.0) {
        return Err(Error::invalid(format!("variances must be positive, got {v1} and {v2}")));
    }
    Ok(0.5 * ((v2 / v1).ln() + (v1 + (m1 - m2).powi(2)) / v2 - 1.0))
}

/// `KL(Bernoulli(α) ‖ Bernoulli(β))` in nats, with `0·ln 0 = 0`.
/// Returns [`Error::InfiniteLoss`] when `β ∈ {0, 1}` puts zero mass on an
/// outcome `α` can produce.
pub fn bernoulli_kl(alpha: f64, beta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) || !(0.0..=1.0).contains(&beta) {
        return Err(Error::invalid(format!("probabilities out of range: ({alpha}, {beta})")));
    }
    let term = |p: f64, q: f64| -> Result<f64> {
        if p == 0.0 {
            Ok(0.0)
        } else if q == 0.0 {
            Err(Error::InfiniteLoss)
        } else {
            Ok(p * (p / q).ln())
        }
    };
    Ok(term(alpha, beta)? + term(1.0 - alpha, 1.0 - beta)?)
}

/// In-place lower Cholesky factor of a row-major `n × n` matrix.
fn cholesky_in_place(n: usize, a: &mut [f64]) -> Result<()> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) {
            return Err(Error::NumericalFailure("predictive covariance is not positive definite".into()));
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    Ok(())
}

/// `KL(N(μ1, s1²I) ‖ N(μ2, S2))` for an `n`-variate Gaussian.
fn isotropic_vs_full_kl(mu1: &[f64], s1_sq: f64, mu2: &[f64], s2: &mut [f64]) -> Result<f64> {
    let n = mu1.len();
    cholesky_in_place(n, s2)?;
    let l = s2;
    let mut log_det2 = 0.0;
    for i in 0..n {
        log_det2 += 2.0 * l[i * n + i].ln();
    }
    // ‖L⁻¹‖_F² = tr(S2⁻¹), by forward substitution on each unit vector.
    let mut trace_inv = 0.0;
    let mut col = vec![0.0; n];
    for e in 0..n {
        for i in 0..n {
            let mut s = if i == e { 1.0 } else { 0.0 };
            for k in 0..i {
                s -= l[i * n + k] * col[k];
            }
            col[i] = if i < e { 0.0 } else { s / l[i * n + i] };
            trace_inv += col[i] * col[i];
        }
    }
    let mut w = vec![0.0; n];
    let mut maha = 0.0;
    for i in 0..n {
        let mut s = mu2[i] - mu1[i];
        for k in 0..i {
            s -= l[i * n + k] * w[k];
        }
        w[i] = s / l[i * n + i];
        maha += w[i] * w[i];
    }
    Ok(0.5 * (s1_sq * trace_inv + maha - n as f64 + log_det2 - n as f64 * s1_sq.ln()))
}

/// Per-task KL from the true distribution of the next column of outputs at
/// `inputs` to the learner's joint predictive.
pub fn column_kl(spec: &ABModelSpec, thetas: &[Vec<f64>], state: &PosteriorState, inputs: &[Vec<f64>]) -> Result<f64> {
    if thetas.len() != state.n() {
        return Err(Error::invalid("need one task parameter per task"));
    }
    let (mean, mut cov) = state.predictive_joint(spec, inputs)?;
    let truth: Vec<f64> = thetas.iter().zip(inputs).map(|(t, x)| dot(t, x)).collect();
    Ok(isotropic_vs_full_kl(&truth, spec.sigma * spec.sigma, &mean, &mut cov)? / state.n() as f64)
}

/// Monte Carlo estimate of the per-trial loss `L̄_{n,m}` over `x_draws`
/// fresh input columns; the expectation over outputs is exact.
pub fn per_trial_loss(
    spec: &ABModelSpec,
    thetas: &[Vec<f64>],
    state: &PosteriorState,
    x_draws: usize,
    seed: u64,
) -> Result<f64> {
    if x_draws == 0 {
        return Err(Error::invalid("per_trial_loss needs x_draws >= 1"));
    }
    let mut rng = seed::rng(seed);
    let mut total = 0.0;
    for _ in 0..x_draws {
        let inputs: Vec<Vec<f64>> = (0..state.n()).map(|_| draw_input(spec.dim(), &mut rng)).collect();
        total += column_kl(spec, thetas, state, &inputs)?;
    }
    Ok(total / x_draws as f64)
}

/// Configuration of a cumulative-risk experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RiskConfig {
    pub a: usize,
    pub b: usize,
    pub tau: f64,
    pub rho: f64,
    pub sigma: f64,
    /// Defaults to [`default_pi_star`] of the seed.
    pub pi_star: Option<Vec<f64>>,
    pub n: usize,
    pub m_max: usize,
    pub outer_trials: usize,
    pub x_draws: usize,
    pub seed: u64,
    pub known_prior: bool,
}

impl Default for RiskConfig {
    fn default() -> Self {
        RiskConfig {
            a: 1,
            b: 4,
            tau: 1.0,
            rho: 1.0,
            sigma: 1.0,
            pi_star: None,
            n: 1,
            m_max: 256,
            outer_trials: 200,
            x_draws: 256,
            seed: 0,
            known_prior: false,
        }
    }
}

impl RiskConfig {
    pub fn spec(&self) -> ABModelSpec {
        ABModelSpec {
            a: self.a,
            b: self.b,
            tau: self.tau,
            rho: self.rho,
            sigma: self.sigma,
            pi_star: self.pi_star.clone().unwrap_or_else(|| default_pi_star(self.b, self.seed)),
        }
    }

    /// Slope the cumulative risk should approach: `(a + b/n)/2`, or `a/2`
    /// with the prior known.
    pub fn target_slope(&self) -> f64 {
        if self.known_prior {
            self.a as f64 / 2.0
        } else {
            (self.a as f64 + self.b as f64 / self.n as f64) / 2.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub trial: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskCurve {
    pub n: usize,
    pub m_values: Vec<usize>,
    pub cumulative: Vec<f64>,
    pub per_trial: Vec<f64>,
    /// Standard error of each cumulative value across outer trials.
    pub stderr: Vec<f64>,
    pub slope: Option<f64>,
    pub slope_window: Option<(usize, usize)>,
    pub pi_star: Vec<f64>,
    pub trials_used: usize,
    pub failures: Vec<TrialFailure>,
}

impl RiskCurve {
    pub fn m_max(&self) -> usize {
        self.m_values.len()
    }
}

/// Default slope window: the upper part of the range, `[max(4, m_max/4), m_max]`.
pub fn default_window(m_max: usize) -> (usize, usize) {
    ((m_max / 4).max(4), m_max)
}

fn run_risk_trial(cfg: &RiskConfig, spec: &ABModelSpec, trial: u64) -> Result<Vec<f64>> {
    let ts = seed::derive(cfg.seed, &[trial]);
    let thetas = sample_ab_tasks(spec, cfg.n, seed::derive(ts, &[0]))?;
    let mut state = PosteriorState::prior(spec, cfg.n, cfg.known_prior)?;
    let mut data_rng = seed::rng(seed::derive(ts, &[1]));
    let mut losses = Vec::with_capacity(cfg.m_max);
    for k in 0..cfg.m_max {
        losses.push(per_trial_loss(spec, &thetas, &state, cfg.x_draws, seed::derive(ts, &[2, k as u64]))?);
        if k + 1 < cfg.m_max {
            let column = thetas
                .iter()
                .map(|t| observe_with(t, draw_input(spec.dim(), &mut data_rng), spec.sigma, &mut data_rng))
                .collect::<Result<Vec<_>>>()?;
            state.absorb(spec, &column)?;
        }
    }
    Ok(losses)
}

/// Monte Carlo cumulative risk `C̄_{n,m}` for `m = 1..=m_max`.
///
/// Outer trial `t` is seeded by `derive(seed, [t])`: its tasks, data path
/// and test inputs depend only on that seed, so known- and unknown-prior
/// runs with the same seed are paired. A trial whose posterior fails
/// numerically is dropped and listed in `failures`.
pub fn cumulative_risk(cfg: &RiskConfig) -> Result<RiskCurve> {
    if cfg.n == 0 || cfg.m_max == 0 || cfg.outer_trials == 0 || cfg.x_draws == 0 {
        return Err(Error::invalid("n, m_max, outer_trials and x_draws must all be >= 1"));
    }
    let spec = cfg.spec();
    spec.validate()?;
    let results: Vec<Result<Vec<f64>>> = (0..cfg.outer_trials as u64)
        .into_par_iter()
        .map(|t| run_risk_trial(cfg, &spec, t))
        .collect();

    let mut paths = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (trial, r) in results.into_iter().enumerate() {
        match r {
            Ok(p) => paths.push(p),
            Err(Error::NumericalFailure(message)) => failures.push(TrialFailure { trial, message }),
            Err(e) => return Err(e),
        }
    }
    if paths.is_empty() {
        return Err(Error::NumericalFailure(format!("all {} trials failed", cfg.outer_trials)));
    }

    let t = paths.len() as f64;
    let mut per_trial = vec![0.0; cfg.m_max];
    let mut cumulative = vec![0.0; cfg.m_max];
    let mut stderr = vec![0.0; cfg.m_max];
    let mut running = vec![0.0; paths.len()];
    for k in 0..cfg.m_max {
        for (acc, p) in running.iter_mut().zip(&paths) {
            *acc += p[k];
        }
        per_trial[k] = paths.iter().map(|p| p[k]).sum::<f64>() / t;
        let mean = running.iter().sum::<f64>() / t;
        cumulative[k] = mean;
        stderr[k] = if paths.len() > 1 {
            (running.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (t - 1.0) / t).sqrt()
        } else {
            0.0
        };
    }

    let mut curve = RiskCurve {
        n: cfg.n,
        m_values: (1..=cfg.m_max).collect(),
        cumulative,
        per_trial,
        stderr,
        slope: None,
        slope_window: None,
        pi_star: spec.pi_star.clone(),
        trials_used: paths.len(),
        failures,
    };
    let window = default_window(cfg.m_max);
    if let Ok(s) = fit_log_slope(&curve, window) {
        curve.slope = Some(s);
        curve.slope_window = Some(window);
    }
    Ok(curve)
}

/// Least-squares slope and intercept of `ys` against `xs`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::invalid("linear fit needs at least two paired points"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::invalid("linear fit needs distinct abscissae"));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Coefficient of `ln m` in a least-squares fit of the cumulative risk over
/// `m ∈ [m_lo, m_hi]`.
pub fn fit_log_slope(curve: &RiskCurve, window: (usize, usize)) -> Result<f64> {
    let (lo, hi) = window;
    if lo < 4 {
        return Err(Error::invalid(format!("slope window must start at m >= 4, got {lo}")));
    }
    if hi > curve.m_max() || lo > hi || hi - lo + 1 < 3 {
        return Err(Error::invalid(format!(
            "slope window [{lo}, {hi}] needs at least 3 points within m <= {}",
            curve.m_max()
        )));
    }
    let xs: Vec<f64> = (lo..=hi).map(|m| (m as f64).ln()).collect();
    let ys: Vec<f64> = (lo..=hi).map(|m| curve.cumulative[m - 1]).collect();
    Ok(linear_fit(&xs, &ys)?.0)
}

/// Power law `y ≈ c·x^p` fitted on log-log axes; returns `(p, c)`.
pub fn fit_power_law(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(Error::invalid("power-law fit needs positive values"));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let (p, c) = linear_fit(&lx, &ly)?;
    Ok((p, c.exp()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub exponent: f64,
    pub constant: f64,
    /// Training-set sizes used in the fit.
    pub window: (usize, usize),
    /// Per-trial risk indexed by training-set size `0..=m_max`.
    pub risk: Vec<f64>,
}

/// Single-task decay of the per-trial risk with training-set size: runs the
/// risk experiment up to `m_max` observations and fits `risk ≈ c·m^p` over
/// `m ∈ [m_max/4, m_max]`. The shared block must be absent (`b = 0`) or
/// clamped.
pub fn clarke_barron_decay(cfg: &RiskConfig) -> Result<DecayFit> {
    if cfg.n != 1 {
        return Err(Error::invalid("decay fit is for a single task (n = 1)"));
    }
    if cfg.b > 0 && !cfg.known_prior {
        return Err(Error::invalid("decay fit needs b = 0 or a known prior"));
    }
    if cfg.m_max < 8 {
        return Err(Error::invalid("decay fit needs m_max >= 8"));
    }
    let run = RiskConfig { m_max: cfg.m_max + 1, ..cfg.clone() };
    let curve = cumulative_risk(&run)?;
    // per_trial[s] is the loss after s observations
    let risk = curve.per_trial;
    let window = (cfg.m_max / 4, cfg.m_max);
    let xs: Vec<f64> = (window.0..=window.1).map(|s| s as f64).collect();
    let ys: Vec<f64> = (window.0..=window.1).map(|s| risk[s]).collect();
    let (exponent, constant) = fit_power_law(&xs, &ys)?;
    Ok(DecayFit { exponent, constant, window, risk })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(a: usize, b: usize) -> ABModelSpec {
        ABModelSpec::unit(a, b, 3)
    }

    #[test]
    fn tasks_share_pi_star() {
        let s = spec(0, 2);
        let th = sample_ab_tasks(&s, 4, 1).unwrap();
        assert!(th.iter().all(|t| *t == s.pi_star));
        let s = spec(2, 3);
        let th = sample_ab_tasks(&s, 5, 1).unwrap();
        assert!(th.iter().all(|t| t[2..] == s.pi_star[..]));
        assert!(s.pi_star.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn task_block_variance() {
        let s = ABModelSpec { tau: 1.7, ..spec(4, 1) };
        let th = sample_ab_tasks(&s, 2500, 9).unwrap();
        let vals: Vec<f64> = th.iter().flat_map(|t| t[..4].to_vec()).collect();
        let var = vals.iter().map(|v| v * v).sum::<f64>() / vals.len() as f64;
        assert!((var / (1.7 * 1.7) - 1.0).abs() < 0.2, "{var}");
    }

    #[test]
    fn observe_limits() {
        let s = ABModelSpec { sigma: 1e-8, ..spec(1, 1) };
        let e = observe(&s, &[0.5, -2.0], vec![1.0, 3.0], 1).unwrap();
        assert!((e.y - (0.5 - 6.0)).abs() < 1e-6);
        assert!(observe(&s, &[0.5, -2.0], vec![1.0], 1).is_err());

        let theta = [0.7, -0.3];
        let x = vec![1.2, 0.4];
        let draws = 100_000;
        let mut rng = seed::rng(5);
        let mean = (0..draws).map(|_| observe_with(&theta, x.clone(), 1.0, &mut rng).unwrap().y).sum::<f64>() / draws as f64;
        assert!((mean - dot(&theta, &x)).abs() < 3.0 / (draws as f64).sqrt());
        let zero: Vec<f64> = (0..2000).map(|_| observe_with(&theta, vec![0.0, 0.0], 1.0, &mut rng).unwrap().y).collect();
        let m0 = zero.iter().sum::<f64>() / 2000.0;
        assert!(m0.abs() < 0.1);
    }

    #[test]
    fn prior_state_layout() {
        let s = ABModelSpec { tau: 2.0, rho: 3.0, ..spec(1, 2) };
        let st = PosteriorState::prior(&s, 2, false).unwrap();
        assert_eq!(st.dim(), 4);
        assert!(st.mean().iter().all(|v| *v == 0.0));
        let expect = [4.0, 4.0, 9.0, 9.0];
        for i in 0..4 {
            for j in 0..4 {
                let e = if i == j { expect[i] } else { 0.0 };
                assert!((st.covariance()[(i, j)] - e).abs() < 1e-12);
            }
        }
        // the shared block is the same coordinates for both tasks
        let c0 = st.task_covariance(0);
        let c1 = st.task_covariance(1);
        assert_eq!(c0.view((1, 1), (2, 2)), c1.view((1, 1), (2, 2)));
    }

    #[test]
    fn single_observation_posterior() {
        let s = ABModelSpec { pi_star: vec![0.0], ..spec(0, 1) };
        let st = PosteriorState::prior(&s, 1, false).unwrap();
        let st = posterior_update(&st, &s, &[Example::new(vec![1.0], 2.0)]).unwrap();
        assert!((st.mean()[0] - 1.0).abs() < 1e-12);
        assert!((st.covariance()[(0, 0)] - 0.5).abs() < 1e-12);
        assert_eq!(st.observations_per_task(), 1);
    }

    #[test]
    fn zero_data_predictive_is_prior() {
        let s = ABModelSpec { tau: 1.5, sigma: 0.7, ..spec(2, 1) };
        let st = PosteriorState::prior(&s, 2, false).unwrap();
        let (m, v) = predictive(&st, &s, 1, &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(m, 0.0);
        assert!((v - (0.49 + 2.25)).abs() < 1e-12);
        assert!(predictive(&st, &s, 2, &[1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn predictive_variance_never_grows() {
        let s = spec(1, 2);
        let thetas = sample_ab_tasks(&s, 3, 2).unwrap();
        let mut st = PosteriorState::prior(&s, 3, false).unwrap();
        let mut rng = seed::rng(4);
        let probe = vec![0.3, -1.0, 0.8];
        let mut last = predictive(&st, &s, 0, &probe).unwrap().1;
        for _ in 0..20 {
            let col: Vec<Example> = thetas.iter().map(|t| observe_with(t, draw_input(3, &mut rng), 1.0, &mut rng).unwrap()).collect();
            st.absorb(&s, &col).unwrap();
            let v = predictive(&st, &s, 0, &probe).unwrap().1;
            assert!(v <= last + 1e-12);
            last = v;
        }
    }

    #[test]
    fn known_prior_uses_pi_star() {
        let s = spec(1, 2);
        let st = PosteriorState::prior(&s, 2, true).unwrap();
        assert_eq!(st.dim(), 2);
        let x = [0.0, 1.0, 2.0];
        let (m, v) = predictive(&st, &s, 1, &x).unwrap();
        assert!((m - (s.pi_star[0] + 2.0 * s.pi_star[1])).abs() < 1e-12);
        assert!((v - 1.0).abs() < 1e-12);
        // with a = 0 there is nothing left to infer
        let s0 = spec(0, 2);
        let thetas = sample_ab_tasks(&s0, 1, 0).unwrap();
        let st0 = PosteriorState::prior(&s0, 1, true).unwrap();
        assert_eq!(per_trial_loss(&s0, &thetas, &st0, 10, 1).unwrap(), 0.0);
    }

    #[test]
    fn gaussian_kl_values() {
        assert_eq!(gaussian_kl(0.3, 2.0, 0.3, 2.0).unwrap(), 0.0);
        assert!((gaussian_kl(1.0, 1.0, 0.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(gaussian_kl(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(gaussian_kl(0.0, 1.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn gaussian_kl_matches_quadrature() {
        // KL(N(1,1) || N(0,1)) = ∫ p ln(p/q)
        let (m1, v1, m2, v2) = (1.0f64, 1.0f64, 0.0f64, 1.0f64);
        let step = 1e-3;
        let pdf = |y: f64, m: f64, v: f64| (-(y - m).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
        let mut total = 0.0;
        let mut y = -15.0;
        while y <= 15.0 {
            let p = pdf(y, m1, v1);
            total += p * (p / pdf(y, m2, v2)).ln() * step;
            y += step;
        }
        assert!((total - 0.5).abs() < 1e-6, "{total}");
    }

    #[test]
    fn bernoulli_kl_values() {
        assert_eq!(bernoulli_kl(0.4, 0.4).unwrap(), 0.0);
        assert!((bernoulli_kl(1.0, 0.5).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let direct = 0.3 * (0.3f64 / 0.7).ln() + 0.7 * (0.7f64 / 0.3).ln();
        assert!((bernoulli_kl(0.3, 0.7).unwrap() - direct).abs() < 1e-12);
        assert_eq!(bernoulli_kl(0.2, 1.0), Err(Error::InfiniteLoss));
        assert_eq!(bernoulli_kl(0.0, 0.0).unwrap(), 0.0);
        assert!(bernoulli_kl(1.2, 0.5).is_err());
    }

    #[test]
    fn joint_kl_reduces_to_scalar_for_one_task() {
        let s = spec(1, 1);
        let thetas = sample_ab_tasks(&s, 1, 4).unwrap();
        let mut st = PosteriorState::prior(&s, 1, false).unwrap();
        st.absorb(&s, &[Example::new(vec![0.4, 1.1], 0.9)]).unwrap();
        let x = vec![0.7, -0.2];
        let (m, v) = predictive(&st, &s, 0, &x).unwrap();
        let want = gaussian_kl(dot(&thetas[0], &x), 1.0, m, v).unwrap();
        let got = column_kl(&s, &thetas, &st, &[x]).unwrap();
        assert!((want - got).abs() < 1e-13);
    }

    #[test]
    fn loss_vanishes_when_posterior_pins_theta() {
        let s = ABModelSpec { sigma: 1.0, ..spec(1, 1) };
        let thetas = sample_ab_tasks(&s, 1, 2).unwrap();
        let mut st = PosteriorState::prior(&s, 1, false).unwrap();
        let mut rng = seed::rng(8);
        // a huge noise-free design drives the posterior covariance to ~0
        for _ in 0..200 {
            let x = draw_input(2, &mut rng);
            let y = dot(&thetas[0], &x);
            let scaled: Vec<f64> = x.iter().map(|v| v * 1e3).collect();
            st.absorb(&s, &[Example::new(scaled, y * 1e3)]).unwrap();
        }
        let l = per_trial_loss(&s, &thetas, &st, 100, 3).unwrap();
        assert!((0.0..1e-6).contains(&l), "{l}");
    }

    #[test]
    fn slope_fit_examples() {
        let mut curve = RiskCurve {
            n: 1,
            m_values: (1..=64).collect(),
            cumulative: (1..=64).map(|m| 2.5 * (m as f64).ln()).collect(),
            per_trial: vec![0.0; 64],
            stderr: vec![0.0; 64],
            slope: None,
            slope_window: None,
            pi_star: vec![],
            trials_used: 1,
            failures: vec![],
        };
        assert!((fit_log_slope(&curve, (16, 64)).unwrap() - 2.5).abs() < 1e-12);
        for c in curve.cumulative.iter_mut() {
            *c += 7.0;
        }
        assert!((fit_log_slope(&curve, (16, 64)).unwrap() - 2.5).abs() < 1e-12);
        assert!(fit_log_slope(&curve, (16, 17)).is_err());
        assert!(fit_log_slope(&curve, (2, 64)).is_err());
        assert!(fit_log_slope(&curve, (16, 65)).is_err());
    }

    #[test]
    fn power_law_of_exact_curve() {
        let xs: Vec<f64> = (128..=512).map(|m| m as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|m| 2.0 / m).collect();
        let (p, c) = fit_power_law(&xs, &ys).unwrap();
        assert!((p + 1.0).abs() < 1e-12);
        assert!((c - 2.0).abs() < 1e-9);
    }

    #[test]
    fn single_step_curve_is_first_trial_loss() {
        let cfg = RiskConfig { a: 1, b: 1, n: 2, m_max: 1, outer_trials: 5, x_draws: 16, seed: 4, ..RiskConfig::default() };
        let curve = cumulative_risk(&cfg).unwrap();
        assert_eq!(curve.cumulative.len(), 1);
        assert_eq!(curve.cumulative[0], curve.per_trial[0]);
        assert!(curve.slope.is_none());
    }

    #[test]
    fn risk_curve_is_deterministic_and_nondecreasing() {
        let cfg = RiskConfig { a: 1, b: 2, n: 2, m_max: 12, outer_trials: 8, x_draws: 8, seed: 6, ..RiskConfig::default() };
        let a = cumulative_risk(&cfg).unwrap();
        let b = cumulative_risk(&cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.cumulative.windows(2).all(|w| w[1] >= w[0] - 1e-6));
        assert!(a.per_trial.iter().all(|l| *l >= -1e-6));
        assert!(cumulative_risk(&RiskConfig { outer_trials: 0, ..cfg.clone() }).is_err());
    }

    #[test]
    fn decay_fit_preconditions() {
        let cfg = RiskConfig { a: 2, b: 1, n: 1, m_max: 16, outer_trials: 2, x_draws: 4, ..RiskConfig::default() };
        assert!(clarke_barron_decay(&cfg).is_err());
        assert!(clarke_barron_decay(&RiskConfig { n: 2, known_prior: true, ..cfg.clone() }).is_err());
        let fit = clarke_barron_decay(&RiskConfig { known_prior: true, ..cfg }).unwrap();
        assert_eq!(fit.window, (4, 16));
        assert_eq!(fit.risk.len(), 17);
    }
}
