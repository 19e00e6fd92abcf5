//! Shared-feature network: one feature map, one linear head per task.
//!
//! Task `i` predicts `σ(α_iᵀ Φ_w(x))` where `Φ_w` is the two-layer tanh
//! [`FeatureMap`]. Training minimizes the mean over tasks of the per-task
//! mean squared error with full-batch gradient descent; novel tasks are
//! learned by fitting a head alone on the frozen features.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{empirical_error, Dataset, LossKind, MultiTaskSample};
use crate::environment::{sample_dataset, sample_tasks, SharedFeatureEnvironment};
use crate::error::{Error, Result};
use crate::feature_map::{dot, FeatureMap, FeatureMapRepr, OutputSquash};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetRepr", into = "NetRepr")]
pub struct FeatureNet {
    map: FeatureMap,
    heads: Vec<Vec<f64>>,
    output_squash: OutputSquash,
}

/// Model snapshot layout.
#[derive(Serialize, Deserialize)]
struct NetRepr {
    d: usize,
    h: usize,
    k: usize,
    n: usize,
    layer1: Vec<Vec<f64>>,
    b1: Vec<f64>,
    layer2: Vec<Vec<f64>>,
    b2: Vec<f64>,
    heads: Vec<Vec<f64>>,
    output_squash: OutputSquash,
}

impl TryFrom<NetRepr> for FeatureNet {
    type Error = Error;

    fn try_from(r: NetRepr) -> Result<Self> {
        let map = FeatureMap::try_from(FeatureMapRepr { layer1: r.layer1, b1: r.b1, layer2: r.layer2, b2: r.b2 })?;
        if (map.d(), map.h(), map.k()) != (r.d, r.h, r.k) || r.heads.len() != r.n {
            return Err(Error::invalid("model snapshot dims do not match its weights"));
        }
        FeatureNet::with_heads(map, r.heads, r.output_squash)
    }
}

impl From<FeatureNet> for NetRepr {
    fn from(net: FeatureNet) -> Self {
        let (d, h, k, n) = (net.map.d(), net.map.h(), net.map.k(), net.heads.len());
        let m = FeatureMapRepr::from(net.map);
        NetRepr {
            d,
            h,
            k,
            n,
            layer1: m.layer1,
            b1: m.b1,
            layer2: m.layer2,
            b2: m.b2,
            heads: net.heads,
            output_squash: net.output_squash,
        }
    }
}

/// Gradient of the training loss, shaped like the network's weights.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGradient {
    pub layer1: Vec<f64>,
    pub b1: Vec<f64>,
    pub layer2: Vec<f64>,
    pub b2: Vec<f64>,
    pub heads: Vec<Vec<f64>>,
}

impl NetGradient {
    fn zeros_like(net: &FeatureNet) -> Self {
        NetGradient {
            layer1: vec![0.0; net.map.layer1.len()],
            b1: vec![0.0; net.map.b1.len()],
            layer2: vec![0.0; net.map.layer2.len()],
            b2: vec![0.0; net.map.b2.len()],
            heads: vec![vec![0.0; net.map.k()]; net.heads.len()],
        }
    }

    /// Coordinates in the same order as [`FeatureNet::params`].
    pub fn flat(&self) -> Vec<f64> {
        self.layer1
            .iter()
            .chain(&self.b1)
            .chain(&self.layer2)
            .chain(&self.b2)
            .chain(self.heads.iter().flatten())
            .copied()
            .collect()
    }
}

impl FeatureNet {
    pub fn with_heads(map: FeatureMap, heads: Vec<Vec<f64>>, output_squash: OutputSquash) -> Result<Self> {
        if heads.is_empty() {
            return Err(Error::invalid("network needs at least one head"));
        }
        if heads.iter().any(|h| h.len() != map.k()) {
            return Err(Error::invalid(format!("every head must have length k={}", map.k())));
        }
        if heads.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("head weights must be finite"));
        }
        Ok(FeatureNet { map, heads, output_squash })
    }

    /// Network with `n` zero heads over `map`.
    pub fn new(map: FeatureMap, n: usize, output_squash: OutputSquash) -> Result<Self> {
        let k = map.k();
        Self::with_heads(map, vec![vec![0.0; k]; n], output_squash)
    }

    /// Network whose features are the environment's true feature map.
    pub fn from_environment(env: &SharedFeatureEnvironment, n: usize) -> Result<Self> {
        Self::new(env.weights.clone(), n, env.output_squash)
    }

    pub fn feature_map(&self) -> &FeatureMap {
        &self.map
    }

    pub fn heads(&self) -> &[Vec<f64>] {
        &self.heads
    }

    pub fn output_squash(&self) -> OutputSquash {
        self.output_squash
    }

    pub fn n(&self) -> usize {
        self.heads.len()
    }

    pub fn set_head(&mut self, task: usize, head: Vec<f64>) -> Result<()> {
        if task >= self.n() || head.len() != self.map.k() {
            return Err(Error::invalid("head index or length out of range"));
        }
        self.heads[task] = head;
        Ok(())
    }

    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.map.features(x)
    }

    /// Output of an arbitrary head over this network's features.
    pub fn predict_with(&self, head: &[f64], x: &[f64]) -> Result<f64> {
        if head.len() != self.map.k() {
            return Err(Error::invalid("head length does not match k"));
        }
        Ok(self.output_squash.apply(dot(head, &self.map.features(x)?)))
    }

    pub fn forward(&self, x: &[f64], task: usize) -> Result<f64> {
        let head = self
            .heads
            .get(task)
            .ok_or_else(|| Error::invalid(format!("task {task} out of range for {} heads", self.n())))?;
        self.predict_with(head, x)
    }

    /// All trainable weights: layer1, b1, layer2, b2, then heads in task order.
    pub fn params(&self) -> Vec<f64> {
        self.map.params().chain(self.heads.iter().flatten()).copied().collect()
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        let expected = self.map.weight_count() + self.n() * self.map.k();
        if values.len() != expected {
            return Err(Error::invalid(format!("expected {expected} parameters, got {}", values.len())));
        }
        let mut it = values.iter();
        for p in self.map.params_mut().chain(self.heads.iter_mut().flatten()) {
            *p = *it.next().expect("length checked");
        }
        Ok(())
    }

    fn check_sample(&self, z: &MultiTaskSample) -> Result<()> {
        if z.n() != self.n() {
            return Err(Error::invalid(format!("sample has {} tasks, network has {} heads", z.n(), self.n())));
        }
        if z.d() != self.map.d() {
            return Err(Error::invalid(format!("sample dimension {} != network input {}", z.d(), self.map.d())));
        }
        Ok(())
    }
}

/// Training loss `(1/n) Σ_i (1/m) Σ_j (f_i(x_ij) − y_ij)²` and its exact
/// gradient by backpropagation.
pub fn loss_and_grad(net: &FeatureNet, z: &MultiTaskSample) -> Result<(f64, NetGradient)> {
    net.check_sample(z)?;
    let map = &net.map;
    let (d, h, k) = (map.d(), map.h(), map.k());
    let scale = 1.0 / (z.n() * z.m()) as f64;
    let mut grad = NetGradient::zeros_like(net);
    let mut hidden = vec![0.0; h];
    let mut feats = vec![0.0; k];
    let mut d_pre2 = vec![0.0; k];
    let mut d_pre1 = vec![0.0; h];
    let mut loss = 0.0;

    for (task, data) in z.tasks().iter().enumerate() {
        let head = &net.heads[task];
        for ex in data.iter() {
            let x = &ex.x;
            for r in 0..h {
                hidden[r] = (dot(&map.layer1[r * d..(r + 1) * d], x) + map.b1[r]).tanh();
            }
            for r in 0..k {
                feats[r] = (dot(&map.layer2[r * h..(r + 1) * h], &hidden) + map.b2[r]).tanh();
            }
            let t = dot(head, &feats);
            let resid = net.output_squash.apply(t) - ex.y;
            loss += resid * resid;

            let dt = 2.0 * scale * resid * net.output_squash.derivative(t);
            let g_head = &mut grad.heads[task];
            for r in 0..k {
                g_head[r] += dt * feats[r];
                d_pre2[r] = dt * head[r] * (1.0 - feats[r] * feats[r]);
                grad.b2[r] += d_pre2[r];
                for (g, hv) in grad.layer2[r * h..(r + 1) * h].iter_mut().zip(&hidden) {
                    *g += d_pre2[r] * hv;
                }
            }
            for j in 0..h {
                let back: f64 = (0..k).map(|r| map.layer2[r * h + j] * d_pre2[r]).sum();
                d_pre1[j] = back * (1.0 - hidden[j] * hidden[j]);
                grad.b1[j] += d_pre1[j];
                for (g, xv) in grad.layer1[j * d..(j + 1) * d].iter_mut().zip(x) {
                    *g += d_pre1[j] * xv;
                }
            }
        }
    }
    Ok((loss * scale, grad))
}

/// Training loss only.
pub fn training_loss(net: &FeatureNet, z: &MultiTaskSample) -> Result<f64> {
    net.check_sample(z)?;
    let mut total = 0.0;
    for (task, data) in z.tasks().iter().enumerate() {
        total += empirical_error(|x| net.forward(x, task).unwrap_or(f64::NAN), data, LossKind::Squared)?;
    }
    Ok(total / z.n() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub init_std: f64,
    /// Replace every head by its exact least-squares fit each time this many
    /// epochs have passed (and once before the first step). 0 disables.
    /// Only honored with identity squashing.
    pub head_refit_every: usize,
    pub output_squash: OutputSquash,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1.0,
            epochs: 3000,
            seed: 0,
            init_std: 0.5,
            head_refit_every: 1,
            output_squash: OutputSquash::Identity,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: FeatureNet,
    /// `trace[e]` is the training loss after `e` epochs; the last entry is
    /// the final loss.
    pub trace: Vec<f64>,
    pub final_loss: f64,
}

fn refit_heads(net: &mut FeatureNet, z: &MultiTaskSample) -> Result<()> {
    for (i, data) in z.tasks().iter().enumerate() {
        net.heads[i] = fit_head(net, data)?;
    }
    Ok(())
}

/// Joint full-batch gradient descent on every weight.
pub fn train_multitask(z: &MultiTaskSample, dims: (usize, usize), cfg: &TrainConfig) -> Result<TrainOutcome> {
    let (h, k) = dims;
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) {
        return Err(Error::invalid("learning_rate must be positive"));
    }
    if !(cfg.init_std > 0.0) {
        return Err(Error::invalid("init_std must be positive"));
    }
    let mut rng = seed::rng(seed::derive(cfg.seed, &[0]));
    let map = FeatureMap::random(z.d(), h, k, cfg.init_std, &mut rng)?;
    let mut net = FeatureNet::new(map, z.n(), cfg.output_squash)?;
    let refit = cfg.head_refit_every > 0 && cfg.output_squash == OutputSquash::Identity;
    if refit {
        refit_heads(&mut net, z)?;
    }

    let mut trace = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..cfg.epochs {
        let (loss, grad) = loss_and_grad(&net, z)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        trace.push(loss);
        let lr = cfg.learning_rate;
        for (p, g) in net.map.params_mut().zip(grad.layer1.iter().chain(&grad.b1).chain(&grad.layer2).chain(&grad.b2)) {
            *p -= lr * g;
        }
        for (head, g) in net.heads.iter_mut().zip(&grad.heads) {
            for (p, gv) in head.iter_mut().zip(g) {
                *p -= lr * gv;
            }
        }
        if refit && (epoch + 1) % cfg.head_refit_every == 0 {
            refit_heads(&mut net, z)?;
        }
    }
    let final_loss = training_loss(&net, z)?;
    if !final_loss.is_finite() {
        return Err(Error::Diverged { epoch: cfg.epochs, loss: final_loss });
    }
    trace.push(final_loss);
    Ok(TrainOutcome { net, trace, final_loss })
}

fn feature_matrix(net: &FeatureNet, z: &Dataset) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let k = net.map.k();
    let mut f = DMatrix::zeros(z.len(), k);
    for (r, ex) in z.iter().enumerate() {
        let phi = net.map.features(&ex.x)?;
        for c in 0..k {
            f[(r, c)] = phi[c];
        }
    }
    Ok((f, DVector::from_iterator(z.len(), z.iter().map(|e| e.y))))
}

/// Minimum-norm least-squares solution of `f · head ≈ y`.
fn min_norm_least_squares(f: DMatrix<f64>, y: &DVector<f64>) -> Result<Vec<f64>> {
    let dim = f.nrows().max(f.ncols()) as f64;
    let svd = f.svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let eps = (smax * dim * f64::EPSILON).max(f64::MIN_POSITIVE);
    let sol = svd.solve(y, eps).map_err(|e| Error::NumericalFailure(e.to_string()))?;
    Ok(sol.iter().copied().collect())
}

const HEAD_GD_ITERS: usize = 2000;
const HEAD_GD_LR: f64 = 2.0;

fn squashed_head_loss(f: &DMatrix<f64>, y: &DVector<f64>, head: &DVector<f64>) -> f64 {
    let t = f * head;
    let m = y.len() as f64;
    t.iter().zip(y.iter()).map(|(t, y)| (OutputSquash::LogisticTanh.apply(*t) - y).powi(2)).sum::<f64>() / m
}

/// Gradient descent on the head alone, starting from zero. A step that
/// would raise the loss is rejected and the step size halved.
fn fit_squashed_head(f: &DMatrix<f64>, y: &DVector<f64>) -> Vec<f64> {
    let m = y.len() as f64;
    let mut head = DVector::zeros(f.ncols());
    let mut loss = squashed_head_loss(f, y, &head);
    let mut lr = HEAD_GD_LR;
    for _ in 0..HEAD_GD_ITERS {
        let t = f * &head;
        let dt = DVector::from_iterator(
            y.len(),
            t.iter().zip(y.iter()).map(|(t, y)| {
                2.0 / m * (OutputSquash::LogisticTanh.apply(*t) - y) * OutputSquash::LogisticTanh.derivative(*t)
            }),
        );
        let g = f.transpose() * dt;
        if g.norm() < 1e-12 {
            break;
        }
        loop {
            let cand = &head - lr * &g;
            let l = squashed_head_loss(f, y, &cand);
            if l <= loss {
                head = cand;
                loss = l;
                break;
            }
            lr *= 0.5;
            if lr < 1e-12 {
                return head.iter().copied().collect();
            }
        }
    }
    head.iter().copied().collect()
}

/// Fits only a head for a novel task on the frozen features. Exact
/// (minimum-norm) least squares for identity squashing; a local minimum by
/// gradient descent for `logistic_tanh`.
pub fn fit_head(net: &FeatureNet, z_novel: &Dataset) -> Result<Vec<f64>> {
    if z_novel.is_empty() {
        return Err(Error::invalid("fit_head needs a nonempty dataset"));
    }
    if z_novel.d() != net.map.d() {
        return Err(Error::invalid("novel task dimension does not match the network"));
    }
    let (f, y) = feature_matrix(net, z_novel)?;
    match net.output_squash {
        OutputSquash::Identity => min_norm_least_squares(f, &y),
        OutputSquash::LogisticTanh => Ok(fit_squashed_head(&f, &y)),
    }
}

/// Empirical error of the feature map as a hypothesis space: the mean over
/// tasks of the squared error after refitting each head.
pub fn family_empirical_error(net: &FeatureNet, z: &MultiTaskSample) -> Result<f64> {
    if z.d() != net.map.d() {
        return Err(Error::invalid("sample dimension does not match the network"));
    }
    let mut total = 0.0;
    for data in z.tasks() {
        let head = fit_head(net, data)?;
        total += empirical_error(|x| net.predict_with(&head, x).unwrap_or(f64::NAN), data, LossKind::Squared)?;
    }
    Ok(total / z.n() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferSummary {
    pub mean: f64,
    pub std: f64,
    pub values: Vec<f64>,
}

impl TransferSummary {
    fn from_values(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        TransferSummary { mean, std, values }
    }

    pub fn stderr(&self) -> f64 {
        self.std / (self.values.len() as f64).sqrt()
    }
}

/// Learns novel tasks on frozen features: each trial draws a fresh task,
/// fits a head on `m_novel` examples and reports squared error on `m_test`
/// fresh examples. Trial `t` is seeded by `derive(seed, [t])`.
pub fn transfer_evaluate(
    env: &SharedFeatureEnvironment,
    net: &FeatureNet,
    m_novel: usize,
    m_test: usize,
    trials: usize,
    seed: u64,
) -> Result<TransferSummary> {
    if m_novel == 0 || m_test == 0 || trials == 0 {
        return Err(Error::invalid("transfer counts must all be >= 1"));
    }
    if env.d != net.map.d() {
        return Err(Error::invalid("network input dimension does not match the environment"));
    }
    let values = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let ts = seed::derive(seed, &[t]);
            let task = sample_tasks(env, 1, seed::derive(ts, &[0]))?.remove(0);
            let train = sample_dataset(&task, m_novel, seed::derive(ts, &[1]))?;
            let test = sample_dataset(&task, m_test, seed::derive(ts, &[2]))?;
            let head = fit_head(net, &train)?;
            empirical_error(|x| net.predict_with(&head, x).unwrap_or(f64::NAN), &test, LossKind::Squared)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TransferSummary::from_values(values))
}
