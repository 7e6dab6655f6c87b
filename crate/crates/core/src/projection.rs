//! Per-mode, per-rank Gaussian random projection of CP tensors.
//!
//! Rank column `k` of factor `j` is mapped by its own matrix `A_k^(j)` of shape
//! `P_j × I_j`. Matrices are never stored: a [`ProjectionSpec`] (seed,
//! scaling, dims) regenerates them bit for bit.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TecError};
use crate::rng::{self, Purpose};
use crate::tensor::CpTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// Entries `N(0, 1)`.
    UnitVariance,
    /// Entries `N(0, 1/P_j)`, so that `E‖Ax‖² = ‖x‖²`.
    InvSqrtP,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "scaling", rename_all = "snake_case")]
pub enum ProjectionKind {
    Gaussian(Scaling),
    /// `A_k^(j) = I`; target dims must equal mode dims.
    Identity,
}

/// Everything needed to regenerate a [`ProjectionSet`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectionSpec {
    pub kind: ProjectionKind,
    pub mode_dims: Vec<usize>,
    pub target_dims: Vec<usize>,
    pub rank: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSet {
    spec: ProjectionSpec,
    /// `matrices[j][k]` is `A_k^(j)`.
    matrices: Vec<Vec<DMatrix<f64>>>,
}

impl ProjectionSet {
    pub fn from_spec(spec: &ProjectionSpec) -> Result<Self> {
        validate_dims(&spec.mode_dims, &spec.target_dims, spec.rank)?;
        let matrices = match spec.kind {
            ProjectionKind::Identity => {
                if spec.mode_dims != spec.target_dims {
                    return Err(TecError::invalid("projection", "identity projection needs target dims = mode dims"));
                }
                spec.mode_dims
                    .iter()
                    .map(|&n| vec![DMatrix::identity(n, n); spec.rank])
                    .collect()
            }
            ProjectionKind::Gaussian(scaling) => spec
                .mode_dims
                .iter()
                .zip(&spec.target_dims)
                .enumerate()
                .map(|(j, (&n, &p))| {
                    (0..spec.rank)
                        .map(|k| gaussian_matrix(spec.seed, j, k, p, n, scaling))
                        .collect()
                })
                .collect(),
        };
        Ok(Self {
            spec: spec.clone(),
            matrices,
        })
    }

    pub fn identity(mode_dims: &[usize], rank: usize) -> Result<Self> {
        Self::from_spec(&ProjectionSpec {
            kind: ProjectionKind::Identity,
            mode_dims: mode_dims.to_vec(),
            target_dims: mode_dims.to_vec(),
            rank,
            seed: 0,
        })
    }

    pub fn spec(&self) -> &ProjectionSpec {
        &self.spec
    }

    pub fn target_dims(&self) -> &[usize] {
        &self.spec.target_dims
    }

    pub fn matrix(&self, mode: usize, k: usize) -> &DMatrix<f64> {
        &self.matrices[mode][k]
    }
}

fn validate_dims(mode_dims: &[usize], target_dims: &[usize], rank: usize) -> Result<()> {
    if rank == 0 {
        return Err(TecError::invalid("projection", "rank must be at least 1"));
    }
    if mode_dims.is_empty() || mode_dims.len() != target_dims.len() {
        return Err(TecError::shape(
            "projection",
            format!("target dims {target_dims:?} do not match mode dims {mode_dims:?}"),
        ));
    }
    for (j, (&n, &p)) in mode_dims.iter().zip(target_dims).enumerate() {
        if p == 0 || p > n {
            return Err(TecError::invalid(
                "projection",
                format!("target dim {p} for mode {j} must lie in 1..={n}"),
            ));
        }
    }
    Ok(())
}

/// `A_k^(j)` is drawn row-major from sub-stream `j · 2^24 + k` of the seed.
fn gaussian_matrix(seed: u64, mode: usize, k: usize, rows: usize, cols: usize, scaling: Scaling) -> DMatrix<f64> {
    let mut rng = rng::stream(seed, Purpose::Projection, ((mode as u64) << 24) | k as u64);
    let scale = match scaling {
        Scaling::UnitVariance => 1.0,
        Scaling::InvSqrtP => 1.0 / (rows as f64).sqrt(),
    };
    DMatrix::from_row_iterator(
        rows,
        cols,
        (0..rows * cols).map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)),
    )
}

/// Samples the `d × rank` grid of Gaussian projection matrices.
pub fn sample_projection_set(
    mode_dims: &[usize],
    target_dims: &[usize],
    rank: usize,
    seed: u64,
    scaling: Scaling,
) -> Result<ProjectionSet> {
    ProjectionSet::from_spec(&ProjectionSpec {
        kind: ProjectionKind::Gaussian(scaling),
        mode_dims: mode_dims.to_vec(),
        target_dims: target_dims.to_vec(),
        rank,
        seed,
    })
}

/// Projects each rank column with its own matrix: column `k` of factor `j`
/// becomes `A_k^(j) · x_k^(j)`.
pub fn project_cp(t: &CpTensor, p: &ProjectionSet) -> Result<CpTensor> {
    if t.mode_dims() != p.spec.mode_dims {
        return Err(TecError::shape(
            "projection",
            format!("tensor dims {:?} vs projection dims {:?}", t.mode_dims(), p.spec.mode_dims),
        ));
    }
    if t.rank() > p.spec.rank {
        return Err(TecError::shape(
            "projection",
            format!("tensor rank {} exceeds projection rank {}", t.rank(), p.spec.rank),
        ));
    }
    let factors = (0..t.order())
        .map(|j| {
            let target = p.spec.target_dims[j];
            let mut out = DMatrix::zeros(target, t.rank());
            for k in 0..t.rank() {
                out.set_column(k, &(p.matrix(j, k) * t.factor(j).column(k)));
            }
            out
        })
        .collect();
    CpTensor::new(factors)
}

/// Default target dims: `max(1, floor(frac · I_j))` per mode.
pub fn fraction_target_dims(mode_dims: &[usize], frac: f64) -> Result<Vec<usize>> {
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(TecError::invalid("projection", format!("projection fraction {frac} not in (0, 1]")));
    }
    Ok(mode_dims
        .iter()
        .map(|&n| ((frac * n as f64).floor() as usize).clamp(1, n))
        .collect())
}

/// `⌈3 · r^{2/d} · ε^{−2} · (ln(n/δ₁))^{1/d}⌉ + 1`.
///
/// `eps` is accepted on `(0, 1]`; the formula is well defined at the closed end.
pub fn jl_target_dim(n: usize, eps: f64, delta1: f64, rank: usize, d: usize) -> Result<usize> {
    if n == 0 || rank == 0 || d == 0 {
        return Err(TecError::invalid("projection", "n, rank and d must be positive"));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(TecError::invalid("projection", format!("eps {eps} not in (0, 1]")));
    }
    if !(delta1 > 0.0 && delta1 < 0.5) {
        return Err(TecError::invalid("projection", format!("delta1 {delta1} not in (0, 1/2)")));
    }
    let log_term = (n as f64 / delta1).ln();
    let d = d as f64;
    let value = 3.0 * (rank as f64).powf(2.0 / d) * eps.powi(-2) * log_term.powf(1.0 / d);
    Ok(value.ceil() as usize + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_cp(dims: &[usize], rank: usize, seed: u64) -> CpTensor {
        let mut rng = rng::stream(seed, Purpose::Test, 3);
        CpTensor::new(
            dims.iter()
                .map(|&n| DMatrix::from_fn(n, rank, |_, _| rng.random::<f64>() - 0.5))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_projection_set(&[10, 8], &[5, 4], 2, 99, Scaling::InvSqrtP).unwrap();
        let b = sample_projection_set(&[10, 8], &[5, 4], 2, 99, Scaling::InvSqrtP).unwrap();
        let c = sample_projection_set(&[10, 8], &[5, 4], 2, 100, Scaling::InvSqrtP).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a.matrix(0, 0), a.matrix(0, 1));
        // Rank prefix property: rank-1 set is the first column of the rank-2 set.
        let one = sample_projection_set(&[10, 8], &[5, 4], 1, 99, Scaling::InvSqrtP).unwrap();
        assert_eq!(one.matrix(1, 0), a.matrix(1, 0));
    }

    #[test]
    fn entry_moments() {
        for (scaling, var) in [(Scaling::UnitVariance, 1.0f64), (Scaling::InvSqrtP, 1.0 / 25.0)] {
            let p = sample_projection_set(&[40], &[25], 1, 5, scaling).unwrap();
            let entries = p.matrix(0, 0).as_slice();
            let n = entries.len() as f64;
            let mean = entries.iter().sum::<f64>() / n;
            let v = entries.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            assert!(mean.abs() < 4.0 * var.sqrt() / n.sqrt(), "mean {mean}");
            assert!((v / var - 1.0).abs() < 0.1, "variance {v} vs {var}");
        }
    }

    #[test]
    fn inv_sqrt_p_preserves_squared_norm_in_expectation() {
        let x = DMatrix::from_fn(30, 1, |i, _| ((i as f64) * 0.37).sin());
        let t = CpTensor::new(vec![x.clone()]).unwrap();
        let draws = 2000;
        let mean: f64 = (0..draws)
            .map(|s| {
                let p = sample_projection_set(&[30], &[10], 1, s, Scaling::InvSqrtP).unwrap();
                project_cp(&t, &p).unwrap().factor(0).norm_squared()
            })
            .sum::<f64>()
            / draws as f64;
        assert!((mean / x.norm_squared() - 1.0).abs() < 0.05, "ratio {}", mean / x.norm_squared());
    }

    #[test]
    fn identity_projection_is_noop() {
        let t = random_cp(&[5, 4, 3], 2, 1);
        let p = ProjectionSet::identity(&t.mode_dims(), 2).unwrap();
        assert_eq!(project_cp(&t, &p).unwrap(), t);
    }

    #[test]
    fn projected_shapes() {
        let t = random_cp(&[30, 30, 30], 1, 2);
        let p = sample_projection_set(&[30, 30, 30], &[21, 21, 21], 1, 3, Scaling::InvSqrtP).unwrap();
        let out = project_cp(&t, &p).unwrap();
        assert_eq!(out.mode_dims(), vec![21, 21, 21]);
        assert_eq!(out.rank(), 1);
        assert_eq!(fraction_target_dims(&[30, 30, 30], 0.7).unwrap(), vec![21, 21, 21]);
        assert_eq!(fraction_target_dims(&[1, 2], 0.1).unwrap(), vec![1, 1]);
    }

    #[test]
    fn columns_match_matvec_oracle() {
        let t = random_cp(&[6, 5, 4], 3, 4);
        let p = sample_projection_set(&[6, 5, 4], &[3, 2, 4], 3, 7, Scaling::UnitVariance).unwrap();
        let out = project_cp(&t, &p).unwrap();
        for j in 0..3 {
            for k in 0..3 {
                let a = p.matrix(j, k);
                for row in 0..a.nrows() {
                    let mut acc = 0.0;
                    for c in 0..a.ncols() {
                        acc += a[(row, c)] * t.factor(j)[(c, k)];
                    }
                    assert!((out.factor(j)[(row, k)] - acc).abs() <= 1e-13);
                }
            }
        }
    }

    #[test]
    fn projection_is_columnwise_linear() {
        let t = random_cp(&[6, 5], 2, 8);
        let p = sample_projection_set(&[6, 5], &[3, 3], 2, 9, Scaling::InvSqrtP).unwrap();
        let mut factors = t.clone().into_factors();
        factors[1].column_mut(1).scale_mut(2.5);
        let scaled = CpTensor::new(factors).unwrap();
        let (a, b) = (project_cp(&t, &p).unwrap(), project_cp(&scaled, &p).unwrap());
        for i in 0..3 {
            assert!((b.factor(1)[(i, 1)] - 2.5 * a.factor(1)[(i, 1)]).abs() < 1e-13);
            assert_eq!(b.factor(1)[(i, 0)], a.factor(1)[(i, 0)]);
        }
    }

    #[test]
    fn projection_errors() {
        assert!(sample_projection_set(&[5], &[6], 1, 0, Scaling::InvSqrtP).is_err());
        assert!(sample_projection_set(&[5], &[0], 1, 0, Scaling::InvSqrtP).is_err());
        assert!(sample_projection_set(&[5, 5], &[3], 1, 0, Scaling::InvSqrtP).is_err());
        let t = random_cp(&[5, 5], 2, 1);
        let p = sample_projection_set(&[5, 5], &[3, 3], 1, 0, Scaling::InvSqrtP).unwrap();
        assert!(project_cp(&t, &p).is_err());
        let q = sample_projection_set(&[5, 4], &[3, 3], 2, 0, Scaling::InvSqrtP).unwrap();
        assert!(project_cp(&t, &q).is_err());
    }

    #[test]
    fn jl_dimension_formula() {
        // Independent evaluation: 3 · 1 · 4 · ln(1400)^{1/3} = 23.219… → 24 + 1.
        assert_eq!(jl_target_dim(140, 0.5, 0.1, 1, 3).unwrap(), 25);
        assert_eq!(jl_target_dim(1, 1.0, (-1f64).exp(), 1, 1).unwrap(), 4);
        assert!(jl_target_dim(140, 0.3, 0.1, 1, 3).unwrap() > jl_target_dim(140, 0.5, 0.1, 1, 3).unwrap());
        assert!(jl_target_dim(140, 0.0, 0.1, 1, 3).is_err());
        assert!(jl_target_dim(140, 0.5, 0.5, 1, 3).is_err());
        assert!(jl_target_dim(0, 0.5, 0.1, 1, 3).is_err());
    }
}
