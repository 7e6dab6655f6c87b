//! Per-mode kernels and the cross-norm tensor kernel
//! `K(X, Y) = Σ_{k,l} Π_j K_j(x_k^(j), y_l^(j))` on CP tensors.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TecError};
use crate::tensor::CpTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    /// `exp(−‖a − b‖² / (2σ²))`
    GaussianRbf,
}

/// Kernel family plus one bandwidth per mode. A single bandwidth is broadcast
/// to every mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidths: Vec<f64>,
}

impl KernelSpec {
    pub fn gaussian(bandwidths: Vec<f64>) -> Result<Self> {
        let spec = Self {
            family: KernelFamily::GaussianRbf,
            bandwidths,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn uniform(bandwidth: f64) -> Result<Self> {
        Self::gaussian(vec![bandwidth])
    }

    pub fn validate(&self) -> Result<()> {
        if self.bandwidths.is_empty() {
            return Err(TecError::invalid("kernels", "no bandwidth given"));
        }
        if let Some(bad) = self.bandwidths.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(TecError::invalid("kernels", format!("bandwidth {bad} must be positive and finite")));
        }
        Ok(())
    }

    pub fn bandwidth(&self, mode: usize) -> f64 {
        if self.bandwidths.len() == 1 {
            self.bandwidths[0]
        } else {
            self.bandwidths[mode]
        }
    }

    fn check_order(&self, d: usize) -> Result<()> {
        if self.bandwidths.len() != 1 && self.bandwidths.len() != d {
            return Err(TecError::shape(
                "kernels",
                format!("{} bandwidths for a {d}-mode tensor", self.bandwidths.len()),
            ));
        }
        Ok(())
    }

    /// `1 / (2σ_j²)` for each mode.
    fn precisions(&self, d: usize) -> Vec<f64> {
        (0..d).map(|j| 0.5 / (self.bandwidth(j) * self.bandwidth(j))).collect()
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Evaluates one per-mode kernel on a pair of vectors.
pub fn mode_kernel_eval(a: &[f64], b: &[f64], family: KernelFamily, bandwidth: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(TecError::shape("kernels", format!("vector lengths {} and {}", a.len(), b.len())));
    }
    if !(bandwidth.is_finite() && bandwidth > 0.0) {
        return Err(TecError::invalid("kernels", format!("bandwidth {bandwidth} must be positive")));
    }
    match family {
        KernelFamily::GaussianRbf => Ok((-squared_distance(a, b) / (2.0 * bandwidth * bandwidth)).exp()),
    }
}

fn check_pair(x: &CpTensor, y: &CpTensor) -> Result<()> {
    if x.order() != y.order() || x.mode_dims() != y.mode_dims() {
        return Err(TecError::shape(
            "kernels",
            format!("mode dims {:?} vs {:?}", x.mode_dims(), y.mode_dims()),
        ));
    }
    Ok(())
}

/// Unchecked kernel evaluation. The `r_x · r_y` terms are summed in sorted
/// order so that swapping the arguments reproduces the value bit for bit.
fn kernel_unchecked(x: &CpTensor, y: &CpTensor, precisions: &[f64]) -> f64 {
    let mut terms = Vec::with_capacity(x.rank() * y.rank());
    for k in 0..x.rank() {
        for l in 0..y.rank() {
            let exponent: f64 = precisions
                .iter()
                .enumerate()
                .map(|(j, p)| p * squared_distance(x.component(j, k), y.component(j, l)))
                .sum();
            terms.push((-exponent).exp());
        }
    }
    if terms.len() > 1 {
        terms.sort_unstable_by(f64::total_cmp);
    }
    terms.iter().sum()
}

/// Cross-norm tensor kernel between two CP tensors of equal mode dims.
/// Ranks may differ.
pub fn tensor_kernel(x: &CpTensor, y: &CpTensor, spec: &KernelSpec) -> Result<f64> {
    check_pair(x, y)?;
    spec.validate()?;
    spec.check_order(x.order())?;
    Ok(kernel_unchecked(x, y, &spec.precisions(x.order())))
}

/// Symmetric matrix of pairwise tensor kernel values.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    values: DMatrix<f64>,
}

impl GramMatrix {
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        if !values.is_square() || values.nrows() == 0 {
            return Err(TecError::shape("kernels", "gram matrix must be square and nonempty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(TecError::invalid("kernels", "gram matrix has non-finite entries"));
        }
        let n = values.nrows();
        for i in 0..n {
            for m in 0..i {
                let (a, b) = (values[(i, m)], values[(m, i)]);
                if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                    return Err(TecError::invalid("kernels", format!("gram matrix asymmetric at ({i},{m})")));
                }
            }
        }
        Ok(Self { values })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn get(&self, i: usize, m: usize) -> f64 {
        self.values[(i, m)]
    }

    pub fn trace(&self) -> f64 {
        self.values.trace()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.values
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

fn check_homogeneous(data: &[CpTensor]) -> Result<()> {
    let Some(first) = data.first() else {
        return Err(TecError::invalid("kernels", "no samples"));
    };
    let dims = first.mode_dims();
    if let Some((i, t)) = data.iter().enumerate().find(|(_, t)| t.mode_dims() != dims) {
        return Err(TecError::shape(
            "kernels",
            format!("sample {i} has mode dims {:?}, expected {dims:?}", t.mode_dims()),
        ));
    }
    Ok(())
}

/// Builds the Gram matrix. Rows of the lower triangle are evaluated in
/// parallel on the current rayon pool and mirrored; every entry is an
/// independent computation, so the result does not depend on the pool size.
pub fn gram_matrix(data: &[CpTensor], spec: &KernelSpec) -> Result<GramMatrix> {
    check_homogeneous(data)?;
    spec.validate()?;
    spec.check_order(data[0].order())?;
    let precisions = spec.precisions(data[0].order());
    let n = data.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..=i).map(|m| kernel_unchecked(&data[i], &data[m], &precisions)).collect())
        .collect();
    let mut values = DMatrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for (m, &v) in row.iter().enumerate() {
            values[(i, m)] = v;
            values[(m, i)] = v;
        }
    }
    Ok(GramMatrix { values })
}

/// Kernel values between `x` and every training sample.
pub fn kernel_row(train: &[CpTensor], x: &CpTensor, spec: &KernelSpec) -> Result<Vec<f64>> {
    check_homogeneous(train)?;
    check_pair(&train[0], x)?;
    spec.check_order(x.order())?;
    let precisions = spec.precisions(x.order());
    Ok(train.iter().map(|t| kernel_unchecked(t, x, &precisions)).collect())
}

/// Per-mode median heuristic: `σ_j` is the median Euclidean distance between
/// mode-`j` components of distinct samples (all rank pairs). Falls back to 1
/// when the median is zero or there are fewer than two samples.
pub fn median_bandwidths(data: &[CpTensor]) -> Result<Vec<f64>> {
    check_homogeneous(data)?;
    let d = data[0].order();
    let mut out = Vec::with_capacity(d);
    for j in 0..d {
        let mut dists = Vec::new();
        for i in 0..data.len() {
            for m in 0..i {
                for k in 0..data[i].rank() {
                    for l in 0..data[m].rank() {
                        dists.push(squared_distance(data[i].component(j, k), data[m].component(j, l)).sqrt());
                    }
                }
            }
        }
        let sigma = median(&mut dists).filter(|&s| s > 0.0 && s.is_finite()).unwrap_or(1.0);
        out.push(sigma);
    }
    Ok(out)
}

fn median(values: &mut [f64]) -> Option<f64> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let (_, &mut upper, _) = values.select_nth_unstable_by(n / 2, f64::total_cmp);
    if n % 2 == 1 {
        return Some(upper);
    }
    let lower = values[..n / 2].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Some(0.5 * (lower + upper))
}
