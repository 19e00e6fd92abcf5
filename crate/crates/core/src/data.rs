//! Examples, datasets, (n,m)-samples and the error functionals built on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// A labeled example `(x, y)`. Serializes as the pair `[[x...], y]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "(Vec<f64>, f64)", into = "(Vec<f64>, f64)")]
pub struct Example {
    pub x: Vec<f64>,
    pub y: f64,
}

impl Example {
    pub fn new(x: Vec<f64>, y: f64) -> Self {
        Example { x, y }
    }
}

impl From<(Vec<f64>, f64)> for Example {
    fn from((x, y): (Vec<f64>, f64)) -> Self {
        Example { x, y }
    }
}

impl From<Example> for (Vec<f64>, f64) {
    fn from(e: Example) -> Self {
        (e.x, e.y)
    }
}

/// An ordered training set with a fixed input dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DatasetRepr", into = "DatasetRepr")]
pub struct Dataset {
    d: usize,
    examples: Vec<Example>,
}

#[derive(Serialize, Deserialize)]
struct DatasetRepr {
    m: usize,
    d: usize,
    examples: Vec<Example>,
}

impl TryFrom<DatasetRepr> for Dataset {
    type Error = Error;

    fn try_from(r: DatasetRepr) -> Result<Self> {
        if r.examples.len() != r.m {
            return Err(Error::invalid(format!(
                "dataset declares m={} but holds {} examples",
                r.m,
                r.examples.len()
            )));
        }
        Dataset::new(r.d, r.examples)
    }
}

impl From<Dataset> for DatasetRepr {
    fn from(ds: Dataset) -> Self {
        DatasetRepr { m: ds.examples.len(), d: ds.d, examples: ds.examples }
    }
}

impl Dataset {
    /// Checks that every input has dimension `d` and every label is finite.
    pub fn new(d: usize, examples: Vec<Example>) -> Result<Self> {
        for (i, e) in examples.iter().enumerate() {
            if e.x.len() != d {
                return Err(Error::invalid(format!(
                    "example {i} has dimension {}, expected {d}",
                    e.x.len()
                )));
            }
            if !e.y.is_finite() || e.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("example {i} is not finite")));
            }
        }
        Ok(Dataset { d, examples })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn iter(&self) -> impl Iterator<Item = &Example> {
        self.examples.iter()
    }
}

/// The (n,m)-sample: `n` datasets of exactly `m` examples each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SampleRepr", into = "SampleRepr")]
pub struct MultiTaskSample {
    m: usize,
    d: usize,
    tasks: Vec<Dataset>,
}

#[derive(Serialize, Deserialize)]
struct SampleRepr {
    n: usize,
    m: usize,
    d: usize,
    tasks: Vec<Vec<Example>>,
}

impl TryFrom<SampleRepr> for MultiTaskSample {
    type Error = Error;

    fn try_from(r: SampleRepr) -> Result<Self> {
        if r.tasks.len() != r.n {
            return Err(Error::invalid(format!(
                "sample declares n={} but holds {} tasks",
                r.n,
                r.tasks.len()
            )));
        }
        let tasks = r
            .tasks
            .into_iter()
            .map(|ex| Dataset::new(r.d, ex))
            .collect::<Result<Vec<_>>>()?;
        let s = MultiTaskSample::new(tasks)?;
        if s.m != r.m {
            return Err(Error::invalid(format!("sample declares m={} but tasks have m={}", r.m, s.m)));
        }
        Ok(s)
    }
}

impl From<MultiTaskSample> for SampleRepr {
    fn from(s: MultiTaskSample) -> Self {
        SampleRepr {
            n: s.tasks.len(),
            m: s.m,
            d: s.d,
            tasks: s.tasks.into_iter().map(|t| t.examples).collect(),
        }
    }
}

impl MultiTaskSample {
    pub fn new(tasks: Vec<Dataset>) -> Result<Self> {
        let first = tasks.first().ok_or_else(|| Error::invalid("sample needs at least one task"))?;
        let (m, d) = (first.len(), first.d());
        if m == 0 {
            return Err(Error::invalid("tasks must hold at least one example"));
        }
        for (i, t) in tasks.iter().enumerate() {
            if t.len() != m || t.d() != d {
                return Err(Error::invalid(format!(
                    "task {i} is {}x{}, expected {m}x{d}",
                    t.len(),
                    t.d()
                )));
            }
        }
        Ok(MultiTaskSample { m, d, tasks })
    }

    pub fn n(&self) -> usize {
        self.tasks.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn tasks(&self) -> &[Dataset] {
        &self.tasks
    }

    pub fn task(&self, i: usize) -> &Dataset {
        &self.tasks[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    ZeroOne,
    Squared,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero_one" => Ok(LossKind::ZeroOne),
            "squared" => Ok(LossKind::Squared),
            other => Err(Error::invalid(format!("unknown loss '{other}'"))),
        }
    }
}

fn is_binary(v: f64) -> bool {
    v == 0.0 || v == 1.0
}

/// `l(y_pred, y)`. The 0-1 loss only accepts labels in {0, 1}.
pub fn loss(kind: LossKind, y: f64, y_pred: f64) -> Result<f64> {
    match kind {
        LossKind::ZeroOne => {
            if !is_binary(y) || !is_binary(y_pred) {
                return Err(Error::invalid(format!(
                    "zero_one loss needs binary arguments, got ({y}, {y_pred})"
                )));
            }
            Ok(if y == y_pred { 0.0 } else { 1.0 })
        }
        LossKind::Squared => Ok((y - y_pred) * (y - y_pred)),
    }
}

/// Mean loss of `predict` over `z`.
pub fn empirical_error<F>(predict: F, z: &Dataset, kind: LossKind) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    if z.is_empty() {
        return Err(Error::invalid("empirical error of an empty dataset"));
    }
    let mut total = 0.0;
    for e in z.iter() {
        total += loss(kind, e.y, predict(&e.x))?;
    }
    Ok(total / z.len() as f64)
}

/// Average over tasks of each predictor's empirical error on its own task.
pub fn multitask_empirical_error<F>(
    predictors: &[F],
    z: &MultiTaskSample,
    kind: LossKind,
) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    if predictors.len() != z.n() {
        return Err(Error::invalid(format!(
            "{} predictors for {} tasks",
            predictors.len(),
            z.n()
        )));
    }
    let mut total = 0.0;
    for (p, t) in predictors.iter().zip(z.tasks()) {
        total += empirical_error(p, t, kind)?;
    }
    Ok(total / z.n() as f64)
}

/// Monte Carlo estimate of the expected loss over `trials` fresh examples
/// drawn by `sampler` from a generator seeded with `seed`.
pub fn monte_carlo_expected_error<F, S>(
    predict: F,
    mut sampler: S,
    trials: usize,
    kind: LossKind,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
    S: FnMut(&mut seed::Rng) -> Example,
{
    if trials == 0 {
        return Err(Error::invalid("monte carlo estimate needs trials >= 1"));
    }
    let mut rng = seed::rng(seed);
    let mut total = 0.0;
    for _ in 0..trials {
        let e = sampler(&mut rng);
        total += loss(kind, e.y, predict(&e.x))?;
    }
    Ok(total / trials as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn labels(ys: &[f64]) -> Dataset {
        Dataset::new(1, ys.iter().enumerate().map(|(i, &y)| Example::new(vec![i as f64], y)).collect())
            .unwrap()
    }

    #[test]
    fn loss_values() {
        assert_eq!(loss(LossKind::ZeroOne, 1.0, 1.0).unwrap(), 0.0);
        assert_eq!(loss(LossKind::ZeroOne, 1.0, 0.0).unwrap(), 1.0);
        assert_eq!(loss(LossKind::Squared, 2.0, 0.5).unwrap(), 2.25);
        assert!(matches!(loss(LossKind::ZeroOne, 0.5, 1.0), Err(Error::InvalidInput(_))));
        assert!(matches!(loss(LossKind::ZeroOne, 1.0, 2.0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn empirical_error_examples() {
        let z = labels(&[0.0, 1.0, 1.0]);
        let e = empirical_error(|_| 0.0, &z, LossKind::ZeroOne).unwrap();
        assert!((e - 2.0 / 3.0).abs() < 1e-15);

        let z = labels(&[0.3, -1.2, 4.0]);
        let lookup = |x: &[f64]| [0.3, -1.2, 4.0][x[0] as usize];
        assert_eq!(empirical_error(lookup, &z, LossKind::Squared).unwrap(), 0.0);

        let z = labels(&[0.0, 1.0]);
        assert_eq!(empirical_error(|_| 0.5, &z, LossKind::Squared).unwrap(), 0.25);

        let empty = Dataset::new(1, vec![]).unwrap();
        assert!(empirical_error(|_| 0.0, &empty, LossKind::Squared).is_err());
    }

    #[test]
    fn multitask_mean() {
        // per-task errors 0.2 and 0.4 under 0-1 loss
        let t1 = labels(&[1.0, 0.0, 0.0, 0.0, 0.0]);
        let t2 = labels(&[1.0, 1.0, 0.0, 0.0, 0.0]);
        let z = MultiTaskSample::new(vec![t1.clone(), t2]).unwrap();
        let zero = |_: &[f64]| 0.0;
        let e = multitask_empirical_error(&[zero, zero], &z, LossKind::ZeroOne).unwrap();
        assert!((e - 0.3).abs() < 1e-15);

        let single = MultiTaskSample::new(vec![t1.clone()]).unwrap();
        assert_eq!(
            multitask_empirical_error(&[zero], &single, LossKind::ZeroOne).unwrap(),
            empirical_error(zero, &t1, LossKind::ZeroOne).unwrap()
        );
        assert!(multitask_empirical_error(&[zero], &z, LossKind::ZeroOne).is_err());
    }

    #[test]
    fn sample_shape_checks() {
        assert!(MultiTaskSample::new(vec![]).is_err());
        assert!(MultiTaskSample::new(vec![labels(&[1.0]), labels(&[1.0, 0.0])]).is_err());
        assert!(Dataset::new(2, vec![Example::new(vec![1.0], 0.0)]).is_err());
        assert!(Dataset::new(1, vec![Example::new(vec![1.0], f64::NAN)]).is_err());
    }

    #[test]
    fn json_layout() {
        let z = MultiTaskSample::new(vec![labels(&[1.0]), labels(&[0.5])]).unwrap();
        let s = serde_json::to_string(&z).unwrap();
        assert_eq!(s, r#"{"n":2,"m":1,"d":1,"tasks":[[[[0.0],1.0]],[[[0.0],0.5]]]}"#);
        let back: MultiTaskSample = serde_json::from_str(&s).unwrap();
        assert_eq!(back, z);
        assert!(serde_json::from_str::<MultiTaskSample>(r#"{"n":3,"m":1,"d":1,"tasks":[[[[0.0],1.0]]]}"#).is_err());
    }

    #[test]
    fn monte_carlo_error() {
        let exact = |r: &mut seed::Rng| {
            let x: f64 = r.random();
            Example::new(vec![x], 3.0 * x)
        };
        let e = monte_carlo_expected_error(|x| 3.0 * x[0], exact, 100, LossKind::Squared, 1).unwrap();
        assert_eq!(e, 0.0);
        assert!(monte_carlo_expected_error(|_| 0.0, exact, 0, LossKind::Squared, 1).is_err());

        // predictor correct with probability 1 - p
        let p = 0.3;
        let flip = move |r: &mut seed::Rng| {
            let wrong = r.random::<f64>() < p;
            Example::new(vec![0.0], if wrong { 0.0 } else { 1.0 })
        };
        let trials = 20_000;
        let est = monte_carlo_expected_error(|_| 1.0, flip, trials, LossKind::ZeroOne, 9).unwrap();
        let se = (p * (1.0 - p) / trials as f64).sqrt();
        assert!((est - p).abs() < 4.0 * se, "{est}");
        let again = monte_carlo_expected_error(|_| 1.0, flip, trials, LossKind::ZeroOne, 9).unwrap();
        assert_eq!(est.to_bits(), again.to_bits());
    }

    proptest! {
        #[test]
        fn errors_stay_in_unit_interval(ys in prop::collection::vec(0u8..2, 1..20), c in 0u8..2) {
            let ys: Vec<f64> = ys.into_iter().map(f64::from).collect();
            let z = labels(&ys);
            let e = empirical_error(|_| f64::from(c), &z, LossKind::ZeroOne).unwrap();
            prop_assert!((0.0..=1.0).contains(&e));
        }

        #[test]
        fn duplicating_dataset_keeps_error(ys in prop::collection::vec(0.0f64..1.0, 1..20), c in 0.0f64..1.0) {
            let z = labels(&ys);
            let mut doubled = z.examples().to_vec();
            doubled.extend_from_slice(z.examples());
            let z2 = Dataset::new(1, doubled).unwrap();
            let a = empirical_error(|_| c, &z, LossKind::Squared).unwrap();
            let b = empirical_error(|_| c, &z2, LossKind::Squared).unwrap();
            prop_assert!((a - b).abs() < 1e-14);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn multitask_permutation_invariant(
            ys in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), 2..6),
            cs in prop::collection::vec(-1.0f64..1.0, 6),
            rot in 0usize..6,
        ) {
            let n = ys.len();
            let tasks: Vec<Dataset> = ys.iter().map(|t| labels(t)).collect();
            let preds: Vec<_> = (0..n).map(|i| { let c = cs[i]; move |_: &[f64]| c }).collect();
            let z = MultiTaskSample::new(tasks.clone()).unwrap();
            let a = multitask_empirical_error(&preds, &z, LossKind::Squared).unwrap();

            let order: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
            let z2 = MultiTaskSample::new(order.iter().map(|&i| tasks[i].clone()).collect()).unwrap();
            let p2: Vec<_> = order.iter().map(|&i| { let c = cs[i]; move |_: &[f64]| c }).collect();
            let b = multitask_empirical_error(&p2, &z2, LossKind::Squared).unwrap();
            prop_assert!((a - b).abs() < 1e-13);
        }
    }
}
