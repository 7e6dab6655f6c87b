//! Random-projection STMs and the thresholded voting ensemble built from them.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TecError};
use crate::kernels::{self, gram_matrix, KernelSpec};
use crate::projection::{project_cp, ProjectionKind, ProjectionSet, ProjectionSpec, Scaling};
use crate::rng::split_seed;
use crate::stm::{self, newton_solve, SolverOptions, StmProblem};
use crate::tensor::CpTensor;

/// How the per-mode bandwidths of a member are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// Median heuristic on the member's projected training factors.
    Median,
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RpstmConfig {
    pub bandwidth: Bandwidth,
    pub lambda: f64,
    pub target_dims: Vec<usize>,
    pub projection: ProjectionKind,
    pub solver: SolverOptions,
}

impl RpstmConfig {
    pub fn new(target_dims: Vec<usize>) -> Self {
        Self {
            bandwidth: Bandwidth::Median,
            lambda: 1e-2,
            target_dims,
            projection: ProjectionKind::Gaussian(Scaling::InvSqrtP),
            solver: SolverOptions::default(),
        }
    }
}

/// Solver diagnostics and wall-clock timings of one member fit.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MemberStats {
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    pub project_gram_seconds: f64,
    pub solve_seconds: f64,
}

/// One trained RPSTM: projected training factors, labels, coefficients and
/// the descriptor that regenerates its projection matrices.
#[derive(Debug, Clone)]
pub struct StmModel {
    projection: ProjectionSet,
    kernel: KernelSpec,
    beta: Vec<f64>,
    labels: Vec<f64>,
    training: Vec<CpTensor>,
    pub stats: MemberStats,
}

impl StmModel {
    pub fn from_parts(
        projection: ProjectionSpec,
        kernel: KernelSpec,
        beta: Vec<f64>,
        labels: Vec<f64>,
        training: Vec<CpTensor>,
    ) -> Result<Self> {
        kernel.validate()?;
        if beta.len() != labels.len() || beta.len() != training.len() || beta.is_empty() {
            return Err(TecError::shape(
                "ensemble",
                format!(
                    "beta {}, labels {}, training samples {}",
                    beta.len(),
                    labels.len(),
                    training.len()
                ),
            ));
        }
        if let Some(bad) = training.iter().find(|t| t.mode_dims() != projection.target_dims) {
            return Err(TecError::shape(
                "ensemble",
                format!(
                    "stored factor dims {:?} differ from projection target {:?}",
                    bad.mode_dims(),
                    projection.target_dims
                ),
            ));
        }
        Ok(Self {
            projection: ProjectionSet::from_spec(&projection)?,
            kernel,
            beta,
            labels,
            training,
            stats: MemberStats::default(),
        })
    }

    pub fn projection(&self) -> &ProjectionSpec {
        self.projection.spec()
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn training(&self) -> &[CpTensor] {
        &self.training
    }

    pub fn mode_dims(&self) -> &[usize] {
        &self.projection.spec().mode_dims
    }
}

fn check_labels(labels: &[f64], n: usize) -> Result<()> {
    if labels.len() != n {
        return Err(TecError::shape("ensemble", format!("{} labels for {n} samples", labels.len())));
    }
    if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
        return Err(TecError::invalid("ensemble", "labels must be ±1"));
    }
    if !(labels.contains(&1.0) && labels.contains(&-1.0)) {
        return Err(TecError::SingleClass);
    }
    Ok(())
}

fn check_shapes(train: &[CpTensor]) -> Result<Vec<usize>> {
    let Some(first) = train.first() else {
        return Err(TecError::invalid("ensemble", "no training samples"));
    };
    let dims = first.mode_dims();
    if let Some(i) = train.iter().position(|t| t.mode_dims() != dims) {
        return Err(TecError::shape(
            "ensemble",
            format!("sample {i} has dims {:?}, expected {dims:?}", train[i].mode_dims()),
        ));
    }
    Ok(dims)
}

/// Projects the training set with a fresh projection drawn from `seed`,
/// builds the Gram matrix and solves for `β`.
pub fn train_rpstm(train: &[CpTensor], labels: &[f64], config: &RpstmConfig, seed: u64) -> Result<StmModel> {
    let mode_dims = check_shapes(train)?;
    check_labels(labels, train.len())?;
    let rank = train.iter().map(CpTensor::rank).max().unwrap_or(1);

    let started = Instant::now();
    let target_dims = match config.projection {
        ProjectionKind::Identity => mode_dims.clone(),
        ProjectionKind::Gaussian(_) => config.target_dims.clone(),
    };
    let projection = ProjectionSet::from_spec(&ProjectionSpec {
        kind: config.projection,
        mode_dims,
        target_dims,
        rank,
        seed,
    })?;
    let projected: Vec<CpTensor> = train
        .iter()
        .map(|t| project_cp(t, &projection))
        .collect::<Result<_>>()?;
    let kernel = match &config.bandwidth {
        Bandwidth::Median => KernelSpec::gaussian(kernels::median_bandwidths(&projected)?)?,
        Bandwidth::Fixed(b) => KernelSpec::gaussian(b.clone())?,
    };
    let gram = gram_matrix(&projected, &kernel)?;
    let project_gram_seconds = started.elapsed().as_secs_f64();

    let started = Instant::now();
    let problem = StmProblem::new(gram, labels.to_vec(), config.lambda)?;
    let solution = newton_solve(&problem, &config.solver)?;
    let solve_seconds = started.elapsed().as_secs_f64();

    Ok(StmModel {
        projection,
        kernel,
        beta: solution.beta,
        labels: labels.to_vec(),
        training: projected,
        stats: MemberStats {
            iterations: solution.iterations,
            converged: solution.converged,
            objective: solution.objective,
            project_gram_seconds,
            solve_seconds,
        },
    })
}

/// Decision value `kᵀ D_y β` of one member for a new tensor.
pub fn rpstm_predict(m: &StmModel, x: &CpTensor) -> Result<f64> {
    if x.mode_dims() != m.mode_dims() {
        return Err(TecError::shape(
            "ensemble",
            format!("input dims {:?}, model expects {:?}", x.mode_dims(), m.mode_dims()),
        ));
    }
    let projected = project_cp(x, &m.projection)?;
    let row = kernels::kernel_row(&m.training, &projected, &m.kernel)?;
    stm::decision_value(&m.beta, &m.labels, &row)
}

/// `Sign` with `sign(0) = +1`.
pub fn vote(decision: f64) -> i8 {
    if decision >= 0.0 {
        1
    } else {
        -1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TecConfig {
    pub b: usize,
    pub gamma: f64,
    pub member: RpstmConfig,
    pub master_seed: u64,
}

impl TecConfig {
    pub fn new(target_dims: Vec<usize>) -> Self {
        Self {
            b: 5,
            gamma: 0.0,
            member: RpstmConfig::new(target_dims),
            master_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.b == 0 {
            return Err(TecError::invalid("ensemble", "ensemble size b must be at least 1"));
        }
        check_gamma(self.gamma)
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(-1.0..=1.0).contains(&gamma) {
        return Err(TecError::invalid("ensemble", format!("gamma {gamma} not in [-1, 1]")));
    }
    Ok(())
}

/// Seed of member `m`: the `m`-th SplitMix64 child of the master seed.
pub fn member_seed(master: u64, m: usize) -> u64 {
    split_seed(master, m as u64)
}

#[derive(Debug, Clone)]
pub struct TecModel {
    members: Vec<StmModel>,
    gamma: f64,
}

impl TecModel {
    pub fn new(members: Vec<StmModel>, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        let Some(first) = members.first() else {
            return Err(TecError::invalid("ensemble", "an ensemble needs at least one member"));
        };
        if members.iter().any(|m| m.mode_dims() != first.mode_dims()) {
            return Err(TecError::shape("ensemble", "members disagree on input mode dims"));
        }
        Ok(Self { members, gamma })
    }

    pub fn members(&self) -> &[StmModel] {
        &self.members
    }

    pub fn b(&self) -> usize {
        self.members.len()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        self.gamma = gamma;
        Ok(self)
    }

    /// Keeps the first `b` members.
    pub fn truncated(&self, b: usize) -> Result<Self> {
        if b == 0 || b > self.members.len() {
            return Err(TecError::invalid("ensemble", format!("cannot keep {b} of {} members", self.b())));
        }
        Self::new(self.members[..b].to_vec(), self.gamma)
    }

    pub fn mode_dims(&self) -> &[usize] {
        self.members[0].mode_dims()
    }

    /// Member votes `sign(g_m(x))` in member order.
    pub fn votes(&self, x: &CpTensor) -> Result<Vec<i8>> {
        self.members
            .iter()
            .map(|m| rpstm_predict(m, x).map(vote))
            .collect()
    }

    /// `τ(x) = (1/b) Σ_m sign(g_m(x))`, reduced in member order.
    pub fn tau(&self, x: &CpTensor) -> Result<f64> {
        let votes = self.votes(x)?;
        Ok(tau_from_votes(&votes))
    }
}

pub fn tau_from_votes(votes: &[i8]) -> f64 {
    votes.iter().map(|&v| v as i64).sum::<i64>() as f64 / votes.len() as f64
}

/// `+1` iff `τ ≥ γ`.
pub fn threshold(tau: f64, gamma: f64) -> i8 {
    if tau >= gamma {
        1
    } else {
        -1
    }
}

/// Trains `b` members with seeds derived from the master seed. Members run
/// on the current rayon pool; the result does not depend on its size.
pub fn tec_train(train: &[CpTensor], labels: &[f64], config: &TecConfig) -> Result<TecModel> {
    config.validate()?;
    check_shapes(train)?;
    check_labels(labels, train.len())?;
    let members: Vec<Result<StmModel>> = (0..config.b)
        .into_par_iter()
        .map(|m| train_rpstm(train, labels, &config.member, member_seed(config.master_seed, m)))
        .collect();
    let members = members
        .into_iter()
        .enumerate()
        .map(|(index, r)| {
            r.map_err(|e| TecError::Member {
                index,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    TecModel::new(members, config.gamma)
}

pub fn tec_predict(m: &TecModel, x: &CpTensor) -> Result<i8> {
    Ok(threshold(m.tau(x)?, m.gamma))
}

/// Predicts a batch, parallel over samples.
pub fn tec_predict_batch(m: &TecModel, xs: &[CpTensor]) -> Result<Vec<i8>> {
    xs.par_iter().map(|x| tec_predict(m, x)).collect()
}
