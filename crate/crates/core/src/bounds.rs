//! Sample-complexity calculators, the pseudo-metrics `d_P` and `d_Q`, and
//! exact covering numbers for tiny finite hypothesis space families.

use rand::Rng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{loss, LossKind};
use crate::error::{Error, Result};
use crate::seed;

/// Inputs shared by every calculator. Each calculator reads only the fields
/// it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundQuery {
    pub epsilon: f64,
    pub delta: f64,
    pub n: u64,
    pub m: u64,
    pub d_vc: u64,
    /// `ln C(ε/48, 𝐇*)`.
    pub ln_cover_star: f64,
    /// `ln C(ε/48, 𝐇ⁿ_l)` (or at `ε/24` for the multi-task bound).
    pub ln_cover_nl: f64,
    pub k: u64,
    #[serde(rename = "W")]
    pub w: u64,
    pub kappa: f64,
    pub kappa_prime: f64,
}

pub const DEFAULT_KAPPA: f64 = 1.0 + std::f64::consts::E;

impl Default for BoundQuery {
    fn default() -> Self {
        BoundQuery {
            epsilon: 0.1,
            delta: 0.01,
            n: 1,
            m: 0,
            d_vc: 0,
            ln_cover_star: 0.0,
            ln_cover_nl: 0.0,
            k: 0,
            w: 0,
            kappa: DEFAULT_KAPPA,
            kappa_prime: DEFAULT_KAPPA,
        }
    }
}

impl BoundQuery {
    fn check_eps_delta(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::invalid(format!("epsilon must lie in (0,1), got {}", self.epsilon)));
        }
        self.check_delta()
    }

    fn check_delta(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!("delta must lie in (0,1), got {}", self.delta)));
        }
        Ok(())
    }

    fn check_ln_cover(v: f64, name: &str) -> Result<()> {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
        }
        Ok(())
    }

    fn check_kappas(&self) -> Result<()> {
        if !(self.kappa >= 1.0 && self.kappa_prime >= 1.0) {
            return Err(Error::invalid("kappa and kappa_prime must be >= 1"));
        }
        Ok(())
    }
}

/// Smallest integer `>= v`, treating values within `1e-12` relative of an
/// integer as that integer so float noise cannot add one.
pub fn ceil_count(v: f64) -> u64 {
    let r = v.round();
    if (v - r).abs() <= 1e-12 * v.abs().max(1.0) {
        r as u64
    } else {
        v.ceil() as u64
    }
}

/// Uniform deviation bound for a class of VC dimension `d_vc` from `m`
/// examples: `√((32/m)(d ln(2em/d) + ln(4/δ)))`.
pub fn vc_deviation(q: &BoundQuery) -> Result<f64> {
    q.check_delta()?;
    if q.d_vc == 0 || q.m < q.d_vc {
        return Err(Error::invalid(format!("need m >= d_vc >= 1, got m={}, d_vc={}", q.m, q.d_vc)));
    }
    let (d, m) = (q.d_vc as f64, q.m as f64);
    Ok((32.0 / m * (d * (2.0 * std::f64::consts::E * m / d).ln() + (4.0 / q.delta).ln())).sqrt())
}

/// Number of tasks: `n ≥ (288/ε²) ln(8 C(ε/48, 𝐇*)/δ)`.
pub fn tasks_bound(q: &BoundQuery) -> Result<u64> {
    q.check_eps_delta()?;
    BoundQuery::check_ln_cover(q.ln_cover_star, "ln_cover_star")?;
    let e2 = q.epsilon * q.epsilon;
    Ok(ceil_count(288.0 / e2 * ((8.0 / q.delta).ln() + q.ln_cover_star)))
}

fn per_task_examples(coef: f64, log_num: f64, q: &BoundQuery) -> Result<u64> {
    q.check_eps_delta()?;
    BoundQuery::check_ln_cover(q.ln_cover_nl, "ln_cover_nl")?;
    if q.n == 0 {
        return Err(Error::invalid("n must be >= 1"));
    }
    let e2 = q.epsilon * q.epsilon;
    let first = ceil_count(coef / (q.n as f64 * e2) * ((log_num / q.delta).ln() + q.ln_cover_nl));
    Ok(first.max(ceil_count(18.0 / e2)))
}

/// Examples per task for bias learning:
/// `m ≥ max{(288/(nε²)) ln(8 C(ε/48, 𝐇ⁿ_l)/δ), 18/ε²}`.
pub fn examples_bound(q: &BoundQuery) -> Result<u64> {
    per_task_examples(288.0, 8.0, q)
}

/// Examples per task for learning `n` fixed tasks:
/// `m ≥ max{(72/(nε²)) ln(4 C(ε/24, 𝐇ⁿ_l)/δ), 18/ε²}`.
pub fn multitask_examples_bound(q: &BoundQuery) -> Result<u64> {
    per_task_examples(72.0, 4.0, q)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatnetCoverLogs {
    pub ln_cover_nl_bound: f64,
    pub ln_cover_star_bound: f64,
}

/// Cover-log bounds for the shared-feature family at scale `ε`:
/// `2(kn + W) ln(κ/ε)` and `2W ln(κ′/ε)`.
pub fn featnet_cover_logs(q: &BoundQuery) -> Result<FeatnetCoverLogs> {
    q.check_kappas()?;
    if !(q.epsilon > 0.0 && q.epsilon < q.kappa && q.epsilon < q.kappa_prime) {
        return Err(Error::invalid(format!(
            "epsilon must lie in (0, min(kappa, kappa_prime)), got {}",
            q.epsilon
        )));
    }
    let (k, w, n) = (q.k as f64, q.w as f64, q.n as f64);
    Ok(FeatnetCoverLogs {
        ln_cover_nl_bound: 2.0 * (k * n + w) * (q.kappa / q.epsilon).ln(),
        ln_cover_star_bound: 2.0 * w * (q.kappa_prime / q.epsilon).ln(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCounts {
    pub n_bound: u64,
    pub m_bound: u64,
    pub cover_logs: FeatnetCoverLogs,
    /// `k + W/n`, the shape of the per-task example requirement.
    pub summary: f64,
}

/// Task and example counts for feature learning: the cover-log bounds at
/// `ε/48` plugged into [`tasks_bound`] and [`examples_bound`].
pub fn feature_learning_counts(q: &BoundQuery) -> Result<FeatureCounts> {
    q.check_eps_delta()?;
    if q.n == 0 {
        return Err(Error::invalid("n must be >= 1"));
    }
    let logs = featnet_cover_logs(&BoundQuery { epsilon: q.epsilon / 48.0, ..q.clone() })?;
    let inner = BoundQuery { ln_cover_star: logs.ln_cover_star_bound, ln_cover_nl: logs.ln_cover_nl_bound, ..q.clone() };
    Ok(FeatureCounts {
        n_bound: tasks_bound(&inner)?,
        m_bound: examples_bound(&inner)?,
        cover_logs: logs,
        summary: q.k as f64 + q.w as f64 / q.n as f64,
    })
}

/// Markov bound on the probability that a task drawn from the environment
/// has error above `γ`: `min(1, er_Q/γ)`.
pub fn markov_tail(er_q: f64, gamma: f64) -> Result<f64> {
    if !(er_q >= 0.0) || !(gamma > 0.0) {
        return Err(Error::invalid(format!("need er_q >= 0 and gamma > 0, got ({er_q}, {gamma})")));
    }
    Ok((er_q / gamma).min(1.0))
}

/// A predictor defined on a finite input grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorTable {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

impl PredictorTable {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() || self.grid.len() != self.values.len() {
            return Err(Error::invalid("predictor table needs matching non-empty grid and values"));
        }
        Ok(())
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        self.grid
            .iter()
            .position(|g| *g == x)
            .map(|i| self.values[i])
            .ok_or_else(|| Error::invalid(format!("input {x} is not on the predictor grid")))
    }

    pub fn loss_at(&self, kind: LossKind, x: f64, y: f64) -> Result<f64> {
        let l = loss(kind, y, self.eval(x)?)?;
        if !(0.0..=1.0).contains(&l) {
            return Err(Error::invalid(format!("loss {l} outside [0,1]")));
        }
        Ok(l)
    }
}

pub type HypothesisSpace = Vec<PredictorTable>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteFamily {
    pub spaces: Vec<HypothesisSpace>,
    pub loss: LossKind,
}

impl FiniteFamily {
    pub fn new(spaces: Vec<HypothesisSpace>, loss: LossKind) -> Result<Self> {
        let f = FiniteFamily { spaces, loss };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if self.spaces.is_empty() || self.spaces.iter().any(Vec::is_empty) {
            return Err(Error::invalid("family needs at least one non-empty space"));
        }
        self.spaces.iter().flatten().try_for_each(PredictorTable::validate)
    }

    /// `H¹_l` as a flat predictor list: every predictor of every space.
    pub fn single_task_points(&self) -> Vec<&PredictorTable> {
        self.spaces.iter().flatten().collect()
    }

    /// Number of tuples in `𝐇ⁿ_l` (with repetition), saturating.
    pub fn tuple_count(&self, n: usize) -> u64 {
        self.spaces
            .iter()
            .map(|s| (s.len() as u64).saturating_pow(n as u32))
            .fold(0u64, u64::saturating_add)
    }
}

/// A finitely supported distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSpec<T> {
    pub atoms: Vec<(T, f64)>,
}

/// An atom of a task distribution: input and label.
pub type XY = (f64, f64);

impl<T> DistributionSpec<T> {
    pub fn new(atoms: Vec<(T, f64)>) -> Result<Self> {
        let d = DistributionSpec { atoms };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.atoms.is_empty() {
            return Err(Error::invalid("distribution needs at least one atom"));
        }
        if self.atoms.iter().any(|(_, p)| !(*p >= 0.0)) {
            return Err(Error::invalid("atom probabilities must be nonnegative"));
        }
        let total: f64 = self.atoms.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("atom probabilities sum to {total}, not 1")));
        }
        Ok(())
    }

    pub fn probs(&self) -> Vec<f64> {
        self.atoms.iter().map(|(_, p)| *p).collect()
    }
}

/// Expected loss of `h` under `p`.
pub fn expected_loss(h: &PredictorTable, p: &DistributionSpec<XY>, kind: LossKind) -> Result<f64> {
    p.atoms.iter().map(|((x, y), w)| Ok(w * h.loss_at(kind, *x, *y)?)).sum()
}

/// `H*(P)`: the smallest expected loss in the space.
pub fn best_in_space(space: &[PredictorTable], p: &DistributionSpec<XY>, kind: LossKind) -> Result<f64> {
    if space.is_empty() {
        return Err(Error::invalid("empty hypothesis space"));
    }
    space.iter().map(|h| expected_loss(h, p, kind)).try_fold(f64::INFINITY, |acc, v| Ok(acc.min(v?)))
}

/// Largest atom product [`metric_dp`] enumerates exactly.
pub const EXACT_PRODUCT_LIMIT: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DpMode {
    ExactOnly,
    /// Fall back to Monte Carlo above [`EXACT_PRODUCT_LIMIT`].
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpValue {
    pub value: f64,
    /// Present for Monte Carlo estimates.
    pub stderr: Option<f64>,
}

/// `|1/n Σ_i (a_i[j_i] − b_i[j_i])|` averaged over the product of the
/// distributions, by exhaustive enumeration of atom tuples.
fn enumerate_tuple_distance(a: &[&[f64]], b: &[&[f64]], probs: &[&[f64]]) -> f64 {
    let n = probs.len();
    let mut idx = vec![0usize; n];
    let mut total = 0.0;
    loop {
        let mut w = 1.0;
        let mut diff = 0.0;
        for i in 0..n {
            w *= probs[i][idx[i]];
            diff += a[i][idx[i]] - b[i][idx[i]];
        }
        total += w * (diff / n as f64).abs();
        let mut i = 0;
        loop {
            if i == n {
                return total;
            }
            idx[i] += 1;
            if idx[i] < probs[i].len() {
                break;
            }
            idx[i] = 0;
            i += 1;
        }
    }
}

fn refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
    v.iter().map(Vec::as_slice).collect()
}

fn loss_vector(h: &PredictorTable, p: &DistributionSpec<XY>, kind: LossKind) -> Result<Vec<f64>> {
    p.atoms.iter().map(|((x, y), _)| h.loss_at(kind, *x, *y)).collect()
}

/// `d_P(h_l, h′_l)` for `n`-tuples of predictors under the product of
/// `p_list`.
pub fn metric_dp(
    h1: &[&PredictorTable],
    h2: &[&PredictorTable],
    p_list: &[DistributionSpec<XY>],
    kind: LossKind,
    mode: DpMode,
) -> Result<DpValue> {
    let n = p_list.len();
    if n == 0 || h1.len() != n || h2.len() != n {
        return Err(Error::invalid(format!(
            "tuple lengths {} and {} must equal the number of distributions {n} >= 1",
            h1.len(),
            h2.len()
        )));
    }
    p_list.iter().try_for_each(DistributionSpec::validate)?;
    let la = h1.iter().zip(p_list).map(|(h, p)| loss_vector(h, p, kind)).collect::<Result<Vec<_>>>()?;
    let lb = h2.iter().zip(p_list).map(|(h, p)| loss_vector(h, p, kind)).collect::<Result<Vec<_>>>()?;
    let probs: Vec<Vec<f64>> = p_list.iter().map(DistributionSpec::probs).collect();
    let product = probs.iter().map(|p| p.len() as u64).fold(1u64, u64::saturating_mul);

    if product <= EXACT_PRODUCT_LIMIT {
        let value = enumerate_tuple_distance(&refs(&la), &refs(&lb), &refs(&probs));
        return Ok(DpValue { value, stderr: None });
    }
    let DpMode::MonteCarlo { samples, seed: s } = mode else {
        return Err(Error::Refused(format!(
            "atom product {product} exceeds {EXACT_PRODUCT_LIMIT}; enable Monte Carlo"
        )));
    };
    if samples < 2 {
        return Err(Error::invalid("Monte Carlo needs at least 2 samples"));
    }
    let mut rng = seed::rng(s);
    let cumulative: Vec<Vec<f64>> = probs
        .iter()
        .map(|p| p.iter().scan(0.0, |acc, w| { *acc += w; Some(*acc) }).collect())
        .collect();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..samples {
        let mut diff = 0.0;
        for i in 0..n {
            let u: f64 = rng.random();
            let j = cumulative[i].partition_point(|c| *c <= u).min(probs[i].len() - 1);
            diff += la[i][j] - lb[i][j];
        }
        let v = (diff / n as f64).abs();
        sum += v;
        sum_sq += v * v;
    }
    let t = samples as f64;
    let mean = sum / t;
    let var = ((sum_sq - t * mean * mean) / (t - 1.0)).max(0.0);
    Ok(DpValue { value: mean, stderr: Some((var / t).sqrt()) })
}

/// `d_Q(H1*, H2*) = Σ_q Q(q) |H1*(P_q) − H2*(P_q)|`, with `Q` a distribution
/// over indices into `tasks`.
pub fn metric_dq(
    h1: &[PredictorTable],
    h2: &[PredictorTable],
    q: &DistributionSpec<usize>,
    tasks: &[DistributionSpec<XY>],
    kind: LossKind,
) -> Result<f64> {
    q.validate()?;
    q.atoms
        .iter()
        .map(|(t, w)| {
            let p = tasks.get(*t).ok_or_else(|| Error::invalid(format!("task index {t} out of range")))?;
            Ok(w * (best_in_space(h1, p, kind)? - best_in_space(h2, p, kind)?).abs())
        })
        .sum()
}

/// Slack for comparing a distance against `ε`.
const COVER_TOL: f64 = 1e-12;

fn check_table(dist: &[Vec<f64>]) -> Result<()> {
    let n = dist.len();
    for (i, row) in dist.iter().enumerate() {
        if row.len() != n {
            return Err(Error::invalid("distance table must be square"));
        }
        for (j, v) in row.iter().enumerate() {
            if !(*v >= 0.0) || (v - dist[j][i]).abs() > 1e-12 {
                return Err(Error::invalid("distance table must be symmetric and nonnegative"));
            }
        }
    }
    Ok(())
}

/// Greedy internal ε-cover: take the first uncovered point in input order,
/// mark everything within `ε` of it, repeat. Returns center indices.
pub fn greedy_cover(dist: &[Vec<f64>], epsilon: f64) -> Result<Vec<usize>> {
    check_table(dist)?;
    if !(epsilon >= 0.0) {
        return Err(Error::invalid("epsilon must be >= 0"));
    }
    let mut covered = vec![false; dist.len()];
    let mut centers = Vec::new();
    while let Some(c) = covered.iter().position(|c| !c) {
        centers.push(c);
        for (j, flag) in covered.iter_mut().enumerate() {
            if dist[c][j] <= epsilon + COVER_TOL {
                *flag = true;
            }
        }
    }
    Ok(centers)
}

/// Whether every point lies within `ε` of some center.
pub fn is_cover(dist: &[Vec<f64>], centers: &[usize], epsilon: f64) -> bool {
    (0..dist.len()).all(|j| centers.iter().any(|&c| dist[c][j] <= epsilon + COVER_TOL))
}

type Bits = Vec<u64>;

fn bit(b: &Bits, i: usize) -> bool {
    b[i / 64] >> (i % 64) & 1 == 1
}

struct CoverSearch {
    balls: Vec<Bits>,
    /// `by_point[j]`: centers covering point `j`, largest ball first.
    by_point: Vec<Vec<usize>>,
    best: Vec<usize>,
}

impl CoverSearch {
    fn search(&mut self, uncovered: &Bits, chosen: &mut Vec<usize>, remaining: usize, max_ball: usize) {
        if remaining == 0 {
            if chosen.len() < self.best.len() {
                self.best = chosen.clone();
            }
            return;
        }
        if chosen.len() + remaining.div_ceil(max_ball) >= self.best.len() {
            return;
        }
        // branch on the uncovered point with the fewest candidate centers
        let target = (0..self.by_point.len())
            .filter(|&j| bit(uncovered, j))
            .min_by_key(|&j| self.by_point[j].len())
            .expect("remaining > 0");
        for c in self.by_point[target].clone() {
            let mut next = uncovered.clone();
            let mut gone = 0;
            for (w, (u, b)) in next.iter_mut().zip(&self.balls[c]).enumerate() {
                let hit = *u & b;
                gone += hit.count_ones() as usize;
                *u &= !b;
                let _ = w;
            }
            chosen.push(c);
            self.search(&next, chosen, remaining - gone, max_ball);
            chosen.pop();
        }
    }
}

/// Exact minimum internal ε-cover by branch and bound, seeded with the
/// greedy cover as the incumbent.
pub fn minimum_cover(dist: &[Vec<f64>], epsilon: f64) -> Result<Vec<usize>> {
    let greedy = greedy_cover(dist, epsilon)?;
    let n = dist.len();
    if n <= 1 || greedy.len() == 1 {
        return Ok(greedy);
    }
    let words = n.div_ceil(64);
    let balls: Vec<Bits> = (0..n)
        .map(|c| {
            let mut b = vec![0u64; words];
            for j in 0..n {
                if dist[c][j] <= epsilon + COVER_TOL {
                    b[j / 64] |= 1 << (j % 64);
                }
            }
            b
        })
        .collect();
    let sizes: Vec<usize> = balls.iter().map(|b| b.iter().map(|w| w.count_ones() as usize).sum()).collect();
    let by_point: Vec<Vec<usize>> = (0..n)
        .map(|j| {
            let mut cs: Vec<usize> = (0..n).filter(|&c| bit(&balls[c], j)).collect();
            cs.sort_by_key(|&c| std::cmp::Reverse(sizes[c]));
            cs
        })
        .collect();
    let max_ball = *sizes.iter().max().expect("n > 1");
    let mut all = vec![u64::MAX; words];
    if !n.is_multiple_of(64) {
        all[words - 1] = (1u64 << (n % 64)) - 1;
    }
    let mut s = CoverSearch { balls, by_point, best: greedy };
    s.search(&all, &mut Vec::new(), n, max_ball);
    let mut best = s.best;
    best.sort_unstable();
    Ok(best)
}

/// Largest `𝐇ⁿ_l` the sandwich check will build.
pub const TUPLE_LIMIT: u64 = 100_000;

/// Where cover centers may come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverCenters {
    /// Centers are members of the covered set.
    Internal,
    /// Centers are arbitrary loss functions into [0, 1]. Computed exactly
    /// only for point-mass distributions, where each distance is the gap
    /// between two reals.
    External,
}

impl std::str::FromStr for CoverCenters {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "internal" => Ok(CoverCenters::Internal),
            "external" => Ok(CoverCenters::External),
            other => Err(Error::invalid(format!("unknown cover centers '{other}'"))),
        }
    }
}

/// Minimum number of closed intervals of radius `ε` covering `values`.
pub fn interval_cover_size(values: &[f64], epsilon: f64) -> usize {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mut count = 0;
    let mut reach = f64::NEG_INFINITY;
    for x in v {
        if x > reach + COVER_TOL {
            count += 1;
            reach = x + 2.0 * epsilon;
        }
    }
    count
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub n: usize,
    pub epsilon: f64,
    pub centers: CoverCenters,
    /// `C(ε, H¹_l)`: largest exact cover over the listed distributions.
    pub cover_single: usize,
    /// `C(ε, 𝐇ⁿ_l)`: largest exact cover over all `n`-tuples of listed
    /// distributions.
    pub cover_multi: usize,
    pub ln_cover_single: f64,
    pub ln_cover_multi: f64,
    pub n_ln_cover_single: f64,
    pub lower_holds: bool,
    pub upper_holds: bool,
    pub points_single: usize,
    pub points_multi: usize,
    pub distributions: usize,
    pub note: String,
}

impl SandwichReport {
    pub fn passed(&self) -> bool {
        self.lower_holds && self.upper_holds
    }

    /// Both inequalities strict.
    pub fn strict_middle(&self) -> bool {
        self.cover_single < self.cover_multi && self.cover_multi < self.cover_single.pow(self.n as u32)
    }
}

/// Loss vectors of every predictor of `family` under each distribution:
/// `table[p][h][atom]`, predictors numbered as in
/// [`FiniteFamily::single_task_points`].
fn loss_tables(family: &FiniteFamily, dists: &[DistributionSpec<XY>]) -> Result<Vec<Vec<Vec<f64>>>> {
    let points = family.single_task_points();
    dists
        .iter()
        .map(|p| points.iter().map(|h| loss_vector(h, p, family.loss)).collect())
        .collect()
}

/// `n`-tuples of predictor indices, each drawn from a single space.
fn family_tuples(family: &FiniteFamily, n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for space in &family.spaces {
        out.extend(odometer(n, space.len()).map(|t| t.into_iter().map(|i| offset + i).collect::<Vec<_>>()));
        offset += space.len();
    }
    out
}

fn odometer(len: usize, base: usize) -> impl Iterator<Item = Vec<usize>> {
    let total = base.pow(len as u32);
    (0..total).map(move |mut k| {
        (0..len)
            .map(|_| {
                let d = k % base;
                k /= base;
                d
            })
            .collect()
    })
}

fn exact_cover_size(rows: &[Vec<&[f64]>], probs: &[&[f64]], epsilon: f64, centers: CoverCenters) -> Result<usize> {
    match centers {
        CoverCenters::Internal => {
            let table: Vec<Vec<f64>> = rows
                .iter()
                .map(|a| rows.iter().map(|b| enumerate_tuple_distance(a, b, probs)).collect())
                .collect();
            Ok(minimum_cover(&table, epsilon)?.len())
        }
        CoverCenters::External => {
            // point masses: a tuple is the single number (1/n) Σ_i l_i
            let n = probs.len() as f64;
            let values: Vec<f64> = rows.iter().map(|r| r.iter().map(|l| l[0]).sum::<f64>() / n).collect();
            Ok(interval_cover_size(&values, epsilon))
        }
    }
}

/// Exhaustive check of `ln C(ε, H¹_l) ≤ ln C(ε, 𝐇ⁿ_l) ≤ n ln C(ε, H¹_l)`.
///
/// The supremum over distributions is taken over `dists` for one task and
/// over `dists^n` for `n` tasks; covering numbers are exact minima.
pub fn cover_sandwich_check(
    family: &FiniteFamily,
    dists: &[DistributionSpec<XY>],
    n: usize,
    epsilon: f64,
    centers: CoverCenters,
) -> Result<SandwichReport> {
    family.validate()?;
    if n == 0 || dists.is_empty() {
        return Err(Error::invalid("need n >= 1 and at least one distribution"));
    }
    if !(epsilon > 0.0) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    dists.iter().try_for_each(DistributionSpec::validate)?;
    if centers == CoverCenters::External && dists.iter().any(|d| d.atoms.len() != 1) {
        return Err(Error::Refused(
            "external covers are computed exactly only for point-mass distributions".into(),
        ));
    }
    let tuple_count = family.tuple_count(n);
    let dist_tuples = (dists.len() as u64).saturating_pow(n as u32);
    if tuple_count > TUPLE_LIMIT || dist_tuples > TUPLE_LIMIT {
        return Err(Error::Refused(format!(
            "family has {tuple_count} {n}-tuples over {dist_tuples} distribution tuples (limit {TUPLE_LIMIT})"
        )));
    }
    let losses = loss_tables(family, dists)?;
    let probs: Vec<Vec<f64>> = dists.iter().map(DistributionSpec::probs).collect();
    let singles = family.single_task_points().len();

    let mut cover_single = 0;
    for (l, p) in losses.iter().zip(&probs) {
        let rows: Vec<Vec<&[f64]>> = l.iter().map(|v| vec![v.as_slice()]).collect();
        cover_single = cover_single.max(exact_cover_size(&rows, &[p], epsilon, centers)?);
    }

    let tuples = family_tuples(family, n);
    let mut cover_multi = 0;
    for choice in odometer(n, dists.len()) {
        let pr: Vec<&[f64]> = choice.iter().map(|&c| probs[c].as_slice()).collect();
        let rows: Vec<Vec<&[f64]>> = tuples
            .iter()
            .map(|t| t.iter().zip(&choice).map(|(&h, &c)| losses[c][h].as_slice()).collect())
            .collect();
        cover_multi = cover_multi.max(exact_cover_size(&rows, &pr, epsilon, centers)?);
    }

    let ln1 = (cover_single as f64).ln();
    let lnn = (cover_multi as f64).ln();
    Ok(SandwichReport {
        n,
        epsilon,
        centers,
        cover_single,
        cover_multi,
        ln_cover_single: ln1,
        ln_cover_multi: lnn,
        n_ln_cover_single: n as f64 * ln1,
        lower_holds: cover_single <= cover_multi,
        upper_holds: cover_multi <= cover_single.pow(n as u32),
        points_single: singles,
        points_multi: tuples.len(),
        distributions: dists.len(),
        note: "supremum over the listed distributions only".into(),
    })
}

/// A seeded tiny instance for the sandwich check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyInstance {
    pub family: FiniteFamily,
    pub distributions: Vec<DistributionSpec<XY>>,
    pub n: usize,
    pub epsilon: f64,
}

/// Random tiny family on a grid of at most three inputs: one to three
/// spaces of one to three predictors, and one to three distributions, each
/// a point mass on a labelled grid input. Half the instances use the 0-1
/// loss with binary predictors, the rest the squared loss with predictions
/// in {0, 1/2, 1}.
pub fn random_tiny_instance(seed: u64) -> TinyInstance {
    let mut rng = seed::rng(seed);
    let kind = if rng.random_bool(0.5) { LossKind::ZeroOne } else { LossKind::Squared };
    let levels: &[f64] = match kind {
        LossKind::ZeroOne => &[0.0, 1.0],
        LossKind::Squared => &[0.0, 0.5, 1.0],
    };
    let grid_len = rng.random_range(1..=3usize);
    let grid: Vec<f64> = (0..grid_len).map(|i| i as f64).collect();
    let spaces = (0..rng.random_range(1..=3usize))
        .map(|_| {
            (0..rng.random_range(1..=3usize))
                .map(|_| PredictorTable {
                    grid: grid.clone(),
                    values: (0..grid_len).map(|_| levels[rng.random_range(0..levels.len())]).collect(),
                })
                .collect()
        })
        .collect();
    let mut atoms: Vec<XY> = grid.iter().flat_map(|&x| [(x, 0.0), (x, 1.0)]).collect();
    atoms.shuffle(&mut rng);
    let distributions = atoms
        .into_iter()
        .take(rng.random_range(1..=3usize))
        .map(|a| DistributionSpec { atoms: vec![(a, 1.0)] })
        .collect();
    TinyInstance {
        family: FiniteFamily { spaces, loss: kind },
        distributions,
        n: rng.random_range(2..=3usize),
        epsilon: [0.05, 0.1, 0.2, 0.3, 0.5][rng.random_range(0..5usize)],
    }
}
