//! Seeded generators for the simulation models F1–F5 (CP factors emitted
//! directly), M1 (i.i.d. dense arrays) and T1 (mode-multiplied Gaussian cores).
//!
//! Class 1 gets label −1 and class 2 label +1; class 1 samples come first.
//! Sample `i` is drawn from its own sub-stream of the seed, so generation can
//! be reproduced one sample at a time.
//!
//! `Γ(a, b)` is read as shape `a`, rate `b` (mean `a/b`). Per-mode uniform and
//! gamma laws are i.i.d. per coordinate.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Provenance, Samples};
use crate::error::{Result, TecError};
use crate::rng::{self, Purpose};
use crate::tensor::{CpTensor, DenseTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SimModel {
    F1,
    F2,
    F3,
    F4,
    F5,
    M1,
    T1,
}

impl SimModel {
    pub const ALL: [SimModel; 7] = [
        SimModel::F1,
        SimModel::F2,
        SimModel::F3,
        SimModel::F4,
        SimModel::F5,
        SimModel::M1,
        SimModel::T1,
    ];

    pub fn mode_dims(self) -> Vec<usize> {
        match self {
            SimModel::F1 | SimModel::F4 | SimModel::M1 | SimModel::T1 => vec![30; 3],
            SimModel::F2 | SimModel::F3 | SimModel::F5 => vec![50; 4],
        }
    }

    pub fn is_dense(self) -> bool {
        matches!(self, SimModel::M1 | SimModel::T1)
    }

    /// CP rank of the emitted factors; `None` for dense models.
    pub fn cp_rank(self) -> Option<usize> {
        match self {
            SimModel::F3 => Some(3),
            SimModel::M1 | SimModel::T1 => None,
            _ => Some(1),
        }
    }
}

impl fmt::Display for SimModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for SimModel {
    type Err = TecError;

    fn from_str(s: &str) -> Result<Self> {
        SimModel::ALL
            .into_iter()
            .find(|m| m.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| TecError::invalid("datagen", format!("unknown model {s:?} (expected F1-F5, M1, T1)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimModelSpec {
    pub model: SimModel,
    pub samples_per_class: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceKind {
    Identity,
    /// `Σ_ij = ρ^{|i−j|}`
    Ar(f64),
    /// `Σ_ij = min(i, j)` with 1-based indices.
    MinIj,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSpec {
    pub kind: CovarianceKind,
    pub dim: usize,
}

pub fn build_covariance(spec: &CovarianceSpec) -> Result<DMatrix<f64>> {
    if spec.dim == 0 {
        return Err(TecError::invalid("datagen", "covariance dimension must be at least 1"));
    }
    let n = spec.dim;
    Ok(match spec.kind {
        CovarianceKind::Identity => DMatrix::identity(n, n),
        CovarianceKind::Ar(rho) => {
            if !(rho > -1.0 && rho < 1.0) {
                return Err(TecError::invalid("datagen", format!("AR coefficient {rho} not in (-1, 1)")));
            }
            DMatrix::from_fn(n, n, |i, j| rho.powi(i.abs_diff(j) as i32))
        }
        CovarianceKind::MinIj => DMatrix::from_fn(n, n, |i, j| (i.min(j) + 1) as f64),
    })
}

/// Draws `x = mean + L z` with `Σ = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct MvnSampler {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl MvnSampler {
    pub fn new(mean: &[f64], cov: &DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(TecError::shape(
                "datagen",
                format!("mean of length {} vs {}×{} covariance", mean.len(), cov.nrows(), cov.ncols()),
            ));
        }
        let chol = cov.clone().cholesky().ok_or(TecError::NotPositiveDefinite)?;
        Ok(Self {
            mean: DVector::from_column_slice(mean),
            factor: chol.l(),
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z = DVector::from_fn(self.mean.len(), |_, _| StandardNormal.sample(rng));
        (&self.mean + &self.factor * z).iter().copied().collect()
    }
}

/// `n` draws from `N(mean, cov)` on sub-stream 0 of `seed`.
pub fn mvn_sample(mean: &[f64], cov: &DMatrix<f64>, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let sampler = MvnSampler::new(mean, cov)?;
    let mut rng = rng::stream(seed, Purpose::DataGen, 0);
    Ok((0..n).map(|_| sampler.sample(&mut rng)).collect())
}

fn iid<D: Distribution<f64>, R: Rng + ?Sized>(dist: &D, n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| dist.sample(rng)).collect()
}

fn gamma(shape: f64, rate: f64) -> Gamma<f64> {
    Gamma::new(shape, 1.0 / rate).expect("positive gamma parameters")
}

fn uniform(lo: f64, hi: f64) -> Uniform<f64> {
    Uniform::new(lo, hi).expect("lo < hi")
}

/// Per-mode samplers shared by F2 and F3: `Σ¹ = I, Σ² = Σ⁴ = AR(0.7), Σ³ = min(i, j)`.
fn f2_samplers(mean: f64) -> Result<Vec<MvnSampler>> {
    let kinds = [
        CovarianceKind::Identity,
        CovarianceKind::Ar(0.7),
        CovarianceKind::MinIj,
        CovarianceKind::Ar(0.7),
    ];
    kinds
        .iter()
        .map(|&kind| {
            let cov = build_covariance(&CovarianceSpec { kind, dim: 50 })?;
            MvnSampler::new(&[mean; 50], &cov)
        })
        .collect()
}

struct Generator {
    model: SimModel,
    /// F2/F3 samplers, indexed `[class][mode]`.
    mvn: Vec<Vec<MvnSampler>>,
    ar_mode3: DMatrix<f64>,
}

impl Generator {
    fn new(model: SimModel) -> Result<Self> {
        let mvn = match model {
            SimModel::F2 | SimModel::F3 => vec![f2_samplers(0.0)?, f2_samplers(1.0)?],
            _ => Vec::new(),
        };
        let ar_mode3 = build_covariance(&CovarianceSpec {
            kind: CovarianceKind::Ar(0.7),
            dim: 30,
        })?;
        Ok(Self { model, mvn, ar_mode3 })
    }

    fn cp_sample<R: Rng + ?Sized>(&self, class2: bool, rng: &mut R) -> Result<CpTensor> {
        let normal = StandardNormal;
        let vectors: Vec<Vec<f64>> = match self.model {
            SimModel::F1 => {
                let shift = if class2 { 0.5 } else { 0.0 };
                (0..3)
                    .map(|_| iid(&normal, 30, rng).into_iter().map(|z: f64| z + shift).collect())
                    .collect()
            }
            SimModel::F2 => self.mvn[class2 as usize].iter().map(|s| s.sample(rng)).collect(),
            SimModel::F3 => {
                let samplers = &self.mvn[class2 as usize];
                let mut factors = vec![DMatrix::zeros(50, 3); 4];
                for k in 0..3 {
                    for (j, s) in samplers.iter().enumerate() {
                        factors[j].set_column(k, &DVector::from_vec(s.sample(rng)));
                    }
                }
                return CpTensor::new(factors);
            }
            SimModel::F4 => vec![
                iid(&gamma(if class2 { 6.0 } else { 4.0 }, 2.0), 30, rng),
                iid(&normal, 30, rng),
                iid(&uniform(0.0, 1.0), 30, rng),
            ],
            SimModel::F5 => vec![
                iid(&gamma(if class2 { 5.0 } else { 4.0 }, 2.0), 50, rng),
                iid(&normal, 50, rng),
                iid(&gamma(2.0, 1.0), 50, rng),
                if class2 {
                    iid(&uniform(4.5, 5.5), 50, rng)
                } else {
                    iid(&uniform(3.5, 4.5), 50, rng)
                },
            ],
            SimModel::M1 | SimModel::T1 => unreachable!("dense model"),
        };
        CpTensor::rank_one(vectors)
    }

    fn dense_sample<R: Rng + ?Sized>(&self, class2: bool, rng: &mut R) -> Result<DenseTensor> {
        let shift = if class2 { 0.5 } else { 0.0 };
        let core: Vec<f64> = (0..27_000)
            .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng) + shift)
            .collect();
        match self.model {
            SimModel::M1 => DenseTensor::new(vec![30; 3], core),
            SimModel::T1 => {
                // Modes 1 and 2 multiply by identity; mode 3 (last, contiguous) by AR(0.7).
                let mut values = vec![0.0; 27_000];
                for (fiber_in, fiber_out) in core.chunks_exact(30).zip(values.chunks_exact_mut(30)) {
                    let z = DVector::from_column_slice(fiber_in);
                    fiber_out.copy_from_slice((&self.ar_mode3 * z).as_slice());
                }
                DenseTensor::new(vec![30; 3], values)
            }
            _ => unreachable!("factor model"),
        }
    }
}

/// Generates `samples_per_class` tensors of each class.
pub fn generate(spec: &SimModelSpec) -> Result<Dataset> {
    if spec.samples_per_class == 0 {
        return Err(TecError::invalid("datagen", "samples_per_class must be at least 1"));
    }
    let generator = Generator::new(spec.model)?;
    let n = 2 * spec.samples_per_class;
    let class2 = |i: usize| i >= spec.samples_per_class;
    let labels: Vec<i8> = (0..n).map(|i| if class2(i) { 1 } else { -1 }).collect();
    let samples = if spec.model.is_dense() {
        Samples::Dense(
            (0..n)
                .into_par_iter()
                .map(|i| {
                    let mut rng = rng::stream(spec.seed, Purpose::DataGen, i as u64);
                    generator.dense_sample(class2(i), &mut rng)
                })
                .collect::<Result<_>>()?,
        )
    } else {
        Samples::Cp(
            (0..n)
                .into_par_iter()
                .map(|i| {
                    let mut rng = rng::stream(spec.seed, Purpose::DataGen, i as u64);
                    generator.cp_sample(class2(i), &mut rng)
                })
                .collect::<Result<_>>()?,
        )
    };
    let mut ds = Dataset::new(samples, Some(labels))?;
    ds.provenance = Some(Provenance {
        model: spec.model,
        samples_per_class: spec.samples_per_class,
        seed: spec.seed,
    });
    Ok(ds)
}
