//! Synthetic environments of related regression tasks.
//!
//! Every task in a [`SharedFeatureEnvironment`] is a linear head over the
//! same hidden feature map, optionally squashed, plus Gaussian label noise.
//! Inputs are uniform on `[-1, 1]^d`.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Example, MultiTaskSample};
use crate::error::{Error, Result};
use crate::feature_map::{dot, FeatureMap, OutputSquash};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedFeatureEnvironment {
    pub d: usize,
    pub h: usize,
    pub k: usize,
    pub weights: FeatureMap,
    pub head_std: f64,
    pub noise_std: f64,
    pub output_squash: OutputSquash,
    pub seed: u64,
}

/// Parameters for [`SharedFeatureEnvironment::generate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub d: usize,
    pub h: usize,
    pub k: usize,
    pub head_std: f64,
    pub noise_std: f64,
    pub output_squash: OutputSquash,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            d: 8,
            h: 16,
            k: 3,
            head_std: 1.0,
            noise_std: 0.05,
            output_squash: OutputSquash::Identity,
            seed: 0,
        }
    }
}

/// A task drawn from an environment: its head over the true features.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec<'e> {
    pub env: &'e SharedFeatureEnvironment,
    pub head: Vec<f64>,
}

impl SharedFeatureEnvironment {
    /// Draws the true feature weights once, each layer from N(0, 1/fan_in).
    pub fn generate(cfg: &EnvConfig) -> Result<Self> {
        if cfg.d == 0 || cfg.h == 0 || cfg.k == 0 {
            return Err(Error::invalid(format!(
                "environment dims must be >= 1 (d={}, h={}, k={})",
                cfg.d, cfg.h, cfg.k
            )));
        }
        let mut rng = seed::rng(seed::derive(cfg.seed, &[0]));
        let weights = FeatureMap::random_layered(
            cfg.d,
            cfg.h,
            cfg.k,
            1.0 / (cfg.d as f64).sqrt(),
            1.0 / (cfg.h as f64).sqrt(),
            &mut rng,
        )?;
        let env = SharedFeatureEnvironment {
            d: cfg.d,
            h: cfg.h,
            k: cfg.k,
            weights,
            head_std: cfg.head_std,
            noise_std: cfg.noise_std,
            output_squash: cfg.output_squash,
            seed: cfg.seed,
        };
        env.validate()?;
        Ok(env)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.h == 0 || self.k == 0 {
            return Err(Error::invalid("environment dims must be >= 1"));
        }
        if (self.weights.d(), self.weights.h(), self.weights.k()) != (self.d, self.h, self.k) {
            return Err(Error::invalid("environment weights do not match declared dims"));
        }
        if !(self.head_std > 0.0 && self.head_std.is_finite()) {
            return Err(Error::invalid("head_std must be positive"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::invalid("noise_std must be non-negative"));
        }
        Ok(())
    }

    /// Noise-free output of the task with head `head` at `x`.
    pub fn forward(&self, head: &[f64], x: &[f64]) -> Result<f64> {
        if head.len() != self.k {
            return Err(Error::invalid(format!("head has length {}, expected {}", head.len(), self.k)));
        }
        let phi = self.weights.features(x)?;
        Ok(self.output_squash.apply(dot(head, &phi)))
    }

    pub fn sample_input<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.d).map(|_| rng.random_range(-1.0..=1.0)).collect()
    }
}

/// `n` independent heads, head `i` seeded by `derive(seed, [i])`.
pub fn sample_tasks(env: &SharedFeatureEnvironment, n: usize, seed: u64) -> Result<Vec<TaskSpec<'_>>> {
    if n == 0 {
        return Err(Error::invalid("sample_tasks needs n >= 1"));
    }
    let normal = Normal::new(0.0, env.head_std).map_err(|e| Error::invalid(e.to_string()))?;
    Ok((0..n as u64)
        .map(|i| {
            let mut rng = seed::rng(seed::derive(seed, &[i]));
            TaskSpec { env, head: (0..env.k).map(|_| normal.sample(&mut rng)).collect() }
        })
        .collect())
}

/// `m` examples of `task`. Examples are drawn sequentially from one stream,
/// so a smaller `m` yields a prefix of a larger one, and the noise draw is
/// consumed even when `noise_std` is zero.
pub fn sample_dataset(task: &TaskSpec<'_>, m: usize, seed: u64) -> Result<Dataset> {
    if m == 0 {
        return Err(Error::invalid("sample_dataset needs m >= 1"));
    }
    let env = task.env;
    let mut rng = seed::rng(seed);
    let mut examples = Vec::with_capacity(m);
    for _ in 0..m {
        let x = env.sample_input(&mut rng);
        let eps: f64 = StandardNormal.sample(&mut rng);
        let y = env.forward(&task.head, &x)? + env.noise_std * eps;
        examples.push(Example::new(x, y));
    }
    Dataset::new(env.d, examples)
}

/// Classification variant: `y ~ Bernoulli(σ(αᵀΦ(x)))`. Only defined for
/// `logistic_tanh` environments, where the output is a probability.
pub fn sample_bernoulli_dataset(task: &TaskSpec<'_>, m: usize, seed: u64) -> Result<Dataset> {
    let env = task.env;
    if env.output_squash != OutputSquash::LogisticTanh {
        return Err(Error::invalid("bernoulli labels need logistic_tanh output squashing"));
    }
    if m == 0 {
        return Err(Error::invalid("sample_bernoulli_dataset needs m >= 1"));
    }
    let mut rng = seed::rng(seed);
    let mut examples = Vec::with_capacity(m);
    for _ in 0..m {
        let x = env.sample_input(&mut rng);
        let p = env.forward(&task.head, &x)?;
        let y = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
        examples.push(Example::new(x, y));
    }
    Dataset::new(env.d, examples)
}

/// The (n,m)-sample: heads from `derive(seed, [0])`, task `i`'s data from
/// `derive(seed, [1, i])`. Task `i` does not depend on `n`.
pub fn sample_nm(env: &SharedFeatureEnvironment, n: usize, m: usize, seed: u64) -> Result<MultiTaskSample> {
    let tasks = sample_tasks(env, n, seed::derive(seed, &[0]))?;
    let data = tasks
        .iter()
        .enumerate()
        .map(|(i, t)| sample_dataset(t, m, seed::derive(seed, &[1, i as u64])))
        .collect::<Result<Vec<_>>>()?;
    MultiTaskSample::new(data)
}

/// The generating head: the ground-truth baseline for transfer experiments.
pub fn oracle_best_head(env: &SharedFeatureEnvironment, task: &TaskSpec<'_>) -> Result<Vec<f64>> {
    if !std::ptr::eq(env, task.env) && env != task.env {
        return Err(Error::invalid("task does not belong to this environment"));
    }
    Ok(task.head.clone())
}
