//! CP (rank-r) tensors, dense tensors, and the ALS decomposition that turns the
//! latter into the former.
//!
//! Modes are zero-based throughout the Rust API. Dense storage is row-major
//! (last index fastest). Mode-`n` unfoldings follow the Kolda & Bader
//! convention: the remaining modes index the columns in increasing order with
//! the lowest mode varying fastest, which pairs with
//! `A_d ⊙ … ⊙ A_{n+1} ⊙ A_{n-1} ⊙ … ⊙ A_1` in the ALS normal equations.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TecError};
use crate::rng::{self, Purpose};

/// A d-mode tensor stored as `d` factor matrices of shape `I_j × r`.
///
/// Column `k` of factor `j` is the mode-`j` vector of the `k`-th rank-one term.
#[derive(Debug, Clone, PartialEq)]
pub struct CpTensor {
    factors: Vec<DMatrix<f64>>,
    rank: usize,
}

impl CpTensor {
    pub fn new(factors: Vec<DMatrix<f64>>) -> Result<Self> {
        let Some(first) = factors.first() else {
            return Err(TecError::invalid("tensor", "a CP tensor needs at least one mode"));
        };
        let rank = first.ncols();
        if rank == 0 {
            return Err(TecError::invalid("tensor", "CP rank must be positive"));
        }
        for (j, f) in factors.iter().enumerate() {
            if f.ncols() != rank {
                return Err(TecError::shape(
                    "tensor",
                    format!("factor {j} has {} columns, expected rank {rank}", f.ncols()),
                ));
            }
            if f.nrows() == 0 {
                return Err(TecError::shape("tensor", format!("factor {j} has no rows")));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(TecError::invalid("tensor", format!("factor {j} has non-finite entries")));
            }
        }
        Ok(Self { factors, rank })
    }

    /// Rank-one tensor `v_1 ⊗ v_2 ⊗ … ⊗ v_d`.
    pub fn rank_one(vectors: Vec<Vec<f64>>) -> Result<Self> {
        let factors = vectors
            .into_iter()
            .map(|v| DMatrix::from_column_slice(v.len(), 1, &v))
            .collect();
        Self::new(factors)
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn mode_dims(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.nrows()).collect()
    }

    pub fn factors(&self) -> &[DMatrix<f64>] {
        &self.factors
    }

    pub fn factor(&self, mode: usize) -> &DMatrix<f64> {
        &self.factors[mode]
    }

    pub fn into_factors(self) -> Vec<DMatrix<f64>> {
        self.factors
    }

    /// Mode-`mode` vector of rank component `k`, as a contiguous slice.
    pub fn component(&self, mode: usize, k: usize) -> &[f64] {
        let f = &self.factors[mode];
        let rows = f.nrows();
        &f.as_slice()[k * rows..(k + 1) * rows]
    }

    /// Removes the scaling and sign freedom of each rank-one term.
    ///
    /// After the call every column of component `k` has norm `w_k^{1/d}` where
    /// `w_k` is the product of the original column norms, and the columns of
    /// modes `0..d-1` have a non-negative entry sum (flips are paired with the
    /// last mode, so the represented tensor is unchanged). Components with a
    /// zero column become all-zero.
    pub fn canonical(&self) -> CpTensor {
        let d = self.order();
        let mut factors = self.factors.clone();
        for k in 0..self.rank {
            let norms: Vec<f64> = factors.iter().map(|f| f.column(k).norm()).collect();
            if norms.contains(&0.0) {
                for f in factors.iter_mut() {
                    f.column_mut(k).fill(0.0);
                }
                continue;
            }
            let log_weight: f64 = norms.iter().map(|n| n.ln()).sum();
            let target = (log_weight / d as f64).exp();
            for (f, n) in factors.iter_mut().zip(&norms) {
                f.column_mut(k).scale_mut(target / n);
            }
            for j in 0..d.saturating_sub(1) {
                if factors[j].column(k).sum() < 0.0 {
                    factors[j].column_mut(k).neg_mut();
                    factors[d - 1].column_mut(k).neg_mut();
                }
            }
        }
        CpTensor {
            factors,
            rank: self.rank,
        }
    }
}

/// Row-major dense tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    values: Vec<f64>,
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(TecError::invalid("tensor", format!("invalid dense dims {dims:?}")));
        }
        let len = checked_len(&dims)?;
        if values.len() != len {
            return Err(TecError::shape(
                "tensor",
                format!("{} values for dims {dims:?} (expected {len})", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(TecError::invalid("tensor", "dense tensor has non-finite entries"));
        }
        Ok(Self { dims, values })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let len = checked_len(&dims)?;
        Self::new(dims, vec![0.0; len])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        let mut flat = 0;
        for (i, d) in index.iter().zip(&self.dims) {
            flat = flat * d + i;
        }
        self.values[flat]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn checked_len(dims: &[usize]) -> Result<usize> {
    let len = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| TecError::Capacity { dims: dims.to_vec() })?;
    if len > isize::MAX as usize / std::mem::size_of::<f64>() {
        return Err(TecError::Capacity { dims: dims.to_vec() });
    }
    Ok(len)
}

/// Materializes `Σ_k ⊗_j factors[j][:, k]` as a dense row-major tensor.
pub fn cp_reconstruct(t: &CpTensor) -> Result<DenseTensor> {
    let dims = t.mode_dims();
    let len = checked_len(&dims)?;
    let mut values = vec![0.0; len];
    for k in 0..t.rank() {
        // Build the k-th rank-one term by successive outer products, last mode fastest.
        let mut term = vec![1.0];
        for j in 0..t.order() {
            let col = t.component(j, k);
            let mut next = Vec::with_capacity(term.len() * col.len());
            for &a in &term {
                next.extend(col.iter().map(|&b| a * b));
            }
            term = next;
        }
        for (v, x) in values.iter_mut().zip(&term) {
            *v += x;
        }
    }
    DenseTensor::new(dims, values)
}

/// Column strides of the mode-`mode` unfolding (lower modes vary fastest).
fn unfold_strides(dims: &[usize], mode: usize) -> Vec<usize> {
    let mut strides = vec![0; dims.len()];
    let mut acc = 1;
    for (j, &d) in dims.iter().enumerate() {
        if j != mode {
            strides[j] = acc;
            acc *= d;
        }
    }
    strides
}

/// Mode-`mode` unfolding: an `I_mode × Π_{j≠mode} I_j` matrix.
pub fn mode_unfold(t: &DenseTensor, mode: usize) -> Result<DMatrix<f64>> {
    let dims = t.dims();
    if mode >= dims.len() {
        return Err(TecError::invalid(
            "tensor",
            format!("mode {mode} out of range for a {}-mode tensor", dims.len()),
        ));
    }
    let rows = dims[mode];
    let cols = t.values.len() / rows;
    let col_strides = unfold_strides(dims, mode);
    let mut out = DMatrix::zeros(rows, cols);
    let mut index = vec![0usize; dims.len()];
    for &v in &t.values {
        let col: usize = index.iter().zip(&col_strides).map(|(i, s)| i * s).sum();
        out[(index[mode], col)] = v;
        increment(&mut index, dims);
    }
    Ok(out)
}

/// Inverse of [`mode_unfold`].
pub fn mode_refold(m: &DMatrix<f64>, mode: usize, dims: &[usize]) -> Result<DenseTensor> {
    if mode >= dims.len() {
        return Err(TecError::invalid("tensor", format!("mode {mode} out of range")));
    }
    let len = checked_len(dims)?;
    if m.nrows() != dims[mode] || m.nrows() * m.ncols() != len {
        return Err(TecError::shape(
            "tensor",
            format!("{}×{} matrix cannot refold into {dims:?}", m.nrows(), m.ncols()),
        ));
    }
    let col_strides = unfold_strides(dims, mode);
    let mut values = Vec::with_capacity(len);
    let mut index = vec![0usize; dims.len()];
    for _ in 0..len {
        let col: usize = index.iter().zip(&col_strides).map(|(i, s)| i * s).sum();
        values.push(m[(index[mode], col)]);
        increment(&mut index, dims);
    }
    DenseTensor::new(dims.to_vec(), values)
}

fn increment(index: &mut [usize], dims: &[usize]) {
    for j in (0..dims.len()).rev() {
        index[j] += 1;
        if index[j] < dims[j] {
            return;
        }
        index[j] = 0;
    }
}

/// Column-wise Kronecker product: row `ia * I_b + ib` of column `k` is `a[ia,k] * b[ib,k]`.
pub fn khatri_rao(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.ncols() != b.ncols() {
        return Err(TecError::shape(
            "tensor",
            format!("khatri-rao column mismatch: {} vs {}", a.ncols(), b.ncols()),
        ));
    }
    let (ra, rb) = (a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(ra * rb, a.ncols());
    for k in 0..a.ncols() {
        let (ca, cb) = (a.column(k), b.column(k));
        let mut col = out.column_mut(k);
        for ia in 0..ra {
            for ib in 0..rb {
                col[ia * rb + ib] = ca[ia] * cb[ib];
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlsOptions {
    pub rank: usize,
    pub max_sweeps: usize,
    /// Stop once the relative residual improves by less than this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for AlsOptions {
    fn default() -> Self {
        Self {
            rank: 3,
            max_sweeps: 100,
            tol: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AlsFit {
    pub tensor: CpTensor,
    /// Relative Frobenius residual `‖X − X̂‖ / ‖X‖` after each sweep.
    pub residuals: Vec<f64>,
    pub converged: bool,
}

impl AlsFit {
    pub fn final_residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(0.0)
    }
}

/// Rank-`opts.rank` CP decomposition by alternating least squares.
pub fn cp_als(t: &DenseTensor, opts: &AlsOptions) -> Result<AlsFit> {
    if opts.rank == 0 {
        return Err(TecError::invalid("tensor", "ALS rank must be at least 1"));
    }
    if opts.tol.is_nan() || opts.tol <= 0.0 {
        return Err(TecError::invalid("tensor", "ALS tolerance must be positive"));
    }
    let dims = t.dims().to_vec();
    let r = opts.rank;
    let norm = t.frobenius_norm();
    if norm == 0.0 {
        let factors = dims.iter().map(|&n| DMatrix::zeros(n, r)).collect();
        return Ok(AlsFit {
            tensor: CpTensor::new(factors)?,
            residuals: vec![0.0],
            converged: true,
        });
    }

    let mut rng = rng::stream(opts.seed, Purpose::AlsInit, 0);
    let mut factors: Vec<DMatrix<f64>> = dims
        .iter()
        .map(|&n| DMatrix::from_fn(n, r, |_, _| rng.random::<f64>()))
        .collect();
    let unfoldings: Vec<DMatrix<f64>> = (0..dims.len())
        .map(|m| mode_unfold(t, m))
        .collect::<Result<_>>()?;

    let mut residuals = Vec::new();
    let mut converged = false;
    for _ in 0..opts.max_sweeps.max(1) {
        for mode in 0..dims.len() {
            factors[mode] = als_update(&unfoldings[mode], &factors, mode)?;
        }
        let fit = CpTensor::new(factors.clone())?;
        let recon = cp_reconstruct(&fit)?;
        let resid = t
            .values()
            .iter()
            .zip(recon.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
            / norm;
        let improvement = residuals.last().map(|prev: &f64| prev - resid);
        residuals.push(resid);
        if improvement.is_some_and(|imp| imp < opts.tol) {
            converged = true;
            break;
        }
    }
    Ok(AlsFit {
        tensor: CpTensor::new(factors)?,
        residuals,
        converged,
    })
}

fn als_update(unfolded: &DMatrix<f64>, factors: &[DMatrix<f64>], mode: usize) -> Result<DMatrix<f64>> {
    let r = factors[0].ncols();
    let mut kr: Option<DMatrix<f64>> = None;
    let mut gram = DMatrix::from_element(r, r, 1.0);
    for j in (0..factors.len()).rev().filter(|&j| j != mode) {
        kr = Some(match kr {
            None => factors[j].clone(),
            Some(acc) => khatri_rao(&acc, &factors[j])?,
        });
        gram.component_mul_assign(&(factors[j].transpose() * &factors[j]));
    }
    let rhs = match kr {
        Some(kr) => unfolded * kr,
        // Single-mode tensor: the factor is the vector itself scaled per column.
        None => unfolded * DMatrix::from_element(unfolded.ncols(), r, 1.0),
    };
    let damping = 1e-10 * gram.trace();
    let mut damped = gram.clone();
    for i in 0..r {
        damped[(i, i)] += damping;
    }
    // Solve X · damped = rhs, i.e. damped · Xᵀ = rhsᵀ (damped is symmetric).
    let solved = match damped.clone().cholesky() {
        Some(chol) => chol.solve(&rhs.transpose()).transpose(),
        None => {
            let pinv = damped
                .pseudo_inverse(1e-12)
                .map_err(|e| TecError::invalid("tensor", e.to_string()))?;
            rhs * pinv
        }
    };
    if solved.iter().any(|v| !v.is_finite()) {
        return Err(TecError::invalid("tensor", "ALS update produced non-finite factors"));
    }
    Ok(solved)
}
