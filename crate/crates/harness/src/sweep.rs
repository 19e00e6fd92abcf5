//! Task-count by examples-per-task sweeps of transfer error.

use std::path::PathBuf;

use biasbench_core::environment::{sample_nm, EnvConfig, SharedFeatureEnvironment};
use biasbench_core::featnet::{train_multitask, transfer_evaluate, TrainConfig};
use biasbench_core::{seed, Error as CoreError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{usage, Result};

/// Stream tags under the master seed. Every cell draws from the same
/// streams, so cells are paired and independent of grid order.
pub const DATA_STREAM: u64 = 1;
pub const INIT_STREAM: u64 = 2;
pub const TRANSFER_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    /// Environment JSON; when absent the environment is generated from
    /// `env` with the master seed.
    pub env_file: Option<PathBuf>,
    pub env: EnvConfig,
    pub n_grid: Vec<usize>,
    pub m_grid: Vec<usize>,
    pub m_novel: usize,
    pub m_test: usize,
    pub trials: usize,
    pub target_error: f64,
    /// `seed` here is ignored: initialization is derived from the master seed.
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            env_file: None,
            env: EnvConfig::default(),
            n_grid: vec![1, 4, 16],
            m_grid: vec![32, 64, 128],
            m_novel: 8,
            m_test: 200,
            trials: 200,
            target_error: 0.05,
            train: TrainConfig::default(),
            seed: 0,
        }
    }
}

fn check_grid(name: &str, grid: &[usize]) -> Result<()> {
    if grid.is_empty() || grid[0] == 0 || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(usage(format!("{name} must be nonempty, positive and strictly increasing")));
    }
    Ok(())
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        check_grid("n_grid", &self.n_grid)?;
        check_grid("m_grid", &self.m_grid)?;
        if self.target_error.is_nan() || self.target_error <= 0.0 {
            return Err(usage("target_error must be positive"));
        }
        if self.m_novel == 0 || self.m_test == 0 || self.trials == 0 {
            return Err(usage("m_novel, m_test and trials must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub n: usize,
    pub m: usize,
    pub mean_transfer_error: Option<f64>,
    pub stderr: Option<f64>,
    pub final_train_loss: Option<f64>,
    /// "ok" or "failed: <reason>".
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MStar {
    pub n: usize,
    /// Smallest grid `m` reaching the target; `None` if none does.
    pub m_star: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub cells: Vec<CellResult>,
    pub m_star: Vec<MStar>,
    pub target_error: f64,
}

impl SweepReport {
    pub fn cell(&self, n: usize, m: usize) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.n == n && c.m == m)
    }
}

/// One `(n, m)` cell: sample, train, evaluate on novel tasks.
pub fn run_cell(env: &SharedFeatureEnvironment, cfg: &SweepConfig, n: usize, m: usize) -> Result<CellResult> {
    let master = cfg.seed;
    let z = sample_nm(env, n, m, seed::derive(master, &[DATA_STREAM]))?;
    let train = TrainConfig { seed: seed::derive(master, &[INIT_STREAM]), ..cfg.train.clone() };
    let outcome = match train_multitask(&z, (env.h, env.k), &train) {
        Ok(o) => o,
        Err(e @ (CoreError::Diverged { .. } | CoreError::NumericalFailure(_))) => {
            return Ok(CellResult {
                n,
                m,
                mean_transfer_error: None,
                stderr: None,
                final_train_loss: None,
                status: format!("failed: {e}"),
            });
        }
        Err(e) => return Err(e.into()),
    };
    let s = transfer_evaluate(
        env,
        &outcome.net,
        cfg.m_novel,
        cfg.m_test,
        cfg.trials,
        seed::derive(master, &[TRANSFER_STREAM]),
    )?;
    Ok(CellResult {
        n,
        m,
        mean_transfer_error: Some(s.mean),
        stderr: Some(s.stderr()),
        final_train_loss: Some(outcome.final_loss),
        status: "ok".into(),
    })
}

/// `m*(n)` for each `n` of the grid.
pub fn m_star(cells: &[CellResult], n_grid: &[usize], m_grid: &[usize], target: f64) -> Vec<MStar> {
    n_grid
        .iter()
        .map(|&n| MStar {
            n,
            m_star: m_grid.iter().copied().find(|&m| {
                cells
                    .iter()
                    .any(|c| c.n == n && c.m == m && c.mean_transfer_error.is_some_and(|e| e <= target))
            }),
        })
        .collect()
}

pub fn run_sweep(env: &SharedFeatureEnvironment, cfg: &SweepConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let grid: Vec<(usize, usize)> = cfg.n_grid.iter().flat_map(|&n| cfg.m_grid.iter().map(move |&m| (n, m))).collect();
    let cells = grid
        .par_iter()
        .map(|&(n, m)| run_cell(env, cfg, n, m))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport {
        m_star: m_star(&cells, &cfg.n_grid, &cfg.m_grid, cfg.target_error),
        cells,
        target_error: cfg.target_error,
    })
}

/// Non-increasing, with "none" ranking above every grid value.
pub fn m_star_non_increasing(ms: &[MStar]) -> bool {
    ms.windows(2).all(|w| match (w[0].m_star, w[1].m_star) {
        (_, None) => w[0].m_star.is_none(),
        (None, Some(_)) => true,
        (Some(a), Some(b)) => b <= a,
    })
}

/// Whether the mean transfer error falls strictly as `n` grows, at every `m`.
pub fn strictly_decreasing_in_n(report: &SweepReport, n_grid: &[usize], m_grid: &[usize]) -> bool {
    m_grid.iter().all(|&m| {
        let errs: Vec<Option<f64>> = n_grid
            .iter()
            .map(|&n| report.cell(n, m).and_then(|c| c.mean_transfer_error))
            .collect();
        errs.windows(2).all(|w| matches!((w[0], w[1]), (Some(a), Some(b)) if b < a))
    })
}
