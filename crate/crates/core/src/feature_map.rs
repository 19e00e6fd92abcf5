//! Two-layer tanh feature map `x -> tanh(L2 tanh(L1 x + b1) + b2)` and the
//! output squashing applied on top of a linear head.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputSquash {
    Identity,
    /// `(1 + tanh t) / 2`, mapping into (0, 1).
    LogisticTanh,
}

impl OutputSquash {
    pub fn apply(self, t: f64) -> f64 {
        match self {
            OutputSquash::Identity => t,
            OutputSquash::LogisticTanh => 0.5 * (1.0 + t.tanh()),
        }
    }

    pub fn derivative(self, t: f64) -> f64 {
        match self {
            OutputSquash::Identity => 1.0,
            OutputSquash::LogisticTanh => {
                let th = t.tanh();
                0.5 * (1.0 - th * th)
            }
        }
    }
}

impl std::str::FromStr for OutputSquash {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(OutputSquash::Identity),
            "logistic_tanh" => Ok(OutputSquash::LogisticTanh),
            other => Err(Error::invalid(format!("unknown output squash '{other}'"))),
        }
    }
}

/// Weights of the feature map. Matrices are stored row-major and serialize
/// as lists of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FeatureMapRepr", into = "FeatureMapRepr")]
pub struct FeatureMap {
    d: usize,
    h: usize,
    k: usize,
    pub(crate) layer1: Vec<f64>,
    pub(crate) b1: Vec<f64>,
    pub(crate) layer2: Vec<f64>,
    pub(crate) b2: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct FeatureMapRepr {
    pub layer1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub layer2: Vec<Vec<f64>>,
    pub b2: Vec<f64>,
}

fn flatten(rows: Vec<Vec<f64>>, cols: usize, name: &str) -> Result<Vec<f64>> {
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::invalid(format!("{name} rows must all have length {cols}")));
    }
    Ok(rows.into_iter().flatten().collect())
}

fn to_rows(flat: &[f64], cols: usize) -> Vec<Vec<f64>> {
    flat.chunks(cols).map(<[f64]>::to_vec).collect()
}

impl TryFrom<FeatureMapRepr> for FeatureMap {
    type Error = Error;

    fn try_from(r: FeatureMapRepr) -> Result<Self> {
        let h = r.layer1.len();
        let d = r.layer1.first().map_or(0, Vec::len);
        let k = r.layer2.len();
        if r.b1.len() != h || r.b2.len() != k {
            return Err(Error::invalid("bias lengths do not match layer heights"));
        }
        let map = FeatureMap {
            d,
            h,
            k,
            layer1: flatten(r.layer1, d, "layer1")?,
            b1: r.b1,
            layer2: flatten(r.layer2, h, "layer2")?,
            b2: r.b2,
        };
        map.validate()?;
        Ok(map)
    }
}

impl From<FeatureMap> for FeatureMapRepr {
    fn from(m: FeatureMap) -> Self {
        FeatureMapRepr {
            layer1: to_rows(&m.layer1, m.d),
            b1: m.b1,
            layer2: to_rows(&m.layer2, m.h),
            b2: m.b2,
        }
    }
}

/// Intermediate activations of one forward pass.
#[derive(Debug, Clone)]
pub(crate) struct Activations {
    pub hidden: Vec<f64>,
    pub features: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(d: usize, h: usize, k: usize) -> Result<Self> {
        let map = FeatureMap {
            d,
            h,
            k,
            layer1: vec![0.0; h * d],
            b1: vec![0.0; h],
            layer2: vec![0.0; k * h],
            b2: vec![0.0; k],
        };
        map.validate()?;
        Ok(map)
    }

    /// Every weight and bias drawn from N(0, std²), in the order
    /// layer1, b1, layer2, b2.
    pub fn random<R: Rng + ?Sized>(d: usize, h: usize, k: usize, std: f64, rng: &mut R) -> Result<Self> {
        Self::random_layered(d, h, k, std, std, rng)
    }

    /// Like [`FeatureMap::random`] but with a separate std per layer.
    pub fn random_layered<R: Rng + ?Sized>(
        d: usize,
        h: usize,
        k: usize,
        std1: f64,
        std2: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(std1 > 0.0 && std2 > 0.0) {
            return Err(Error::invalid("weight std must be positive"));
        }
        let mut map = Self::zeros(d, h, k)?;
        let n1 = Normal::new(0.0, std1).expect("positive std");
        let n2 = Normal::new(0.0, std2).expect("positive std");
        for v in map.layer1.iter_mut().chain(map.b1.iter_mut()) {
            *v = n1.sample(rng);
        }
        for v in map.layer2.iter_mut().chain(map.b2.iter_mut()) {
            *v = n2.sample(rng);
        }
        Ok(map)
    }

    fn validate(&self) -> Result<()> {
        if self.d == 0 || self.h == 0 || self.k == 0 {
            return Err(Error::invalid(format!(
                "feature map dims must be >= 1 (d={}, h={}, k={})",
                self.d, self.h, self.k
            )));
        }
        if self.params().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature weights must be finite"));
        }
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of feature weights `W = h·d + h + k·h + k`.
    pub fn weight_count(&self) -> usize {
        self.h * self.d + self.h + self.k * self.h + self.k
    }

    pub(crate) fn params(&self) -> impl Iterator<Item = &f64> {
        self.layer1.iter().chain(&self.b1).chain(&self.layer2).chain(&self.b2)
    }

    pub(crate) fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layer1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.layer2.iter_mut())
            .chain(self.b2.iter_mut())
    }

    pub(crate) fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::invalid(format!("input has dimension {}, expected {}", x.len(), self.d)));
        }
        Ok(())
    }

    pub(crate) fn activations(&self, x: &[f64]) -> Activations {
        let hidden: Vec<f64> = (0..self.h)
            .map(|r| {
                let row = &self.layer1[r * self.d..(r + 1) * self.d];
                (dot(row, x) + self.b1[r]).tanh()
            })
            .collect();
        let features = (0..self.k)
            .map(|r| {
                let row = &self.layer2[r * self.h..(r + 1) * self.h];
                (dot(row, &hidden) + self.b2[r]).tanh()
            })
            .collect();
        Activations { hidden, features }
    }

    /// The feature vector, every coordinate in (-1, 1).
    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.activations(x).features)
    }

    /// Analytic Jacobian of the features with respect to the input, `k` rows
    /// of length `d`.
    pub fn jacobian(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        let act = self.activations(x);
        let dh: Vec<f64> = act.hidden.iter().map(|z| 1.0 - z * z).collect();
        Ok((0..self.k)
            .map(|r| {
                let outer = 1.0 - act.features[r] * act.features[r];
                (0..self.d)
                    .map(|c| {
                        let s: f64 = (0..self.h)
                            .map(|j| self.layer2[r * self.h + j] * dh[j] * self.layer1[j * self.d + c])
                            .sum();
                        outer * s
                    })
                    .collect()
            })
            .collect())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
