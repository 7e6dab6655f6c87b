//! Training, prediction, repeated-split benchmarking and cross-validated
//! tuning over whole datasets.
//!
//! All randomness is drawn from the run seed: split shuffles and fold
//! assignment use named sub-streams, member projections use
//! `split_seed`-derived children, and ALS starts from the run seed for every
//! dense sample so that a sample's decomposition depends on its values only.
//! Work runs on the caller's rayon pool; the numbers reported do not depend
//! on its size (timings aside).

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Samples};
use crate::ensemble::{tau_from_votes, tec_train, threshold, Bandwidth, TecConfig, TecModel};
use crate::error::{Result, TecError};
use crate::io::ModelMeta;
use crate::projection::{fraction_target_dims, ProjectionKind, Scaling};
use crate::rng::{self, split_seed, Purpose};
use crate::tensor::{cp_als, AlsOptions, CpTensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetDims {
    /// `floor(frac · I_j)` per mode.
    Fraction(f64),
    Explicit(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// CP rank used to decompose dense inputs.
    pub rank: usize,
    pub lambda: f64,
    pub b: usize,
    pub gamma: f64,
    pub target: TargetDims,
    pub bandwidth: Bandwidth,
    pub scaling: Scaling,
    pub seed: u64,
    pub splits: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub folds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            rank: 3,
            lambda: 1e-2,
            b: 5,
            gamma: 0.0,
            target: TargetDims::Fraction(0.7),
            bandwidth: Bandwidth::Median,
            scaling: Scaling::InvSqrtP,
            seed: 0,
            splits: 100,
            train_size: 140,
            test_size: 60,
            folds: 5,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |detail: String| Err(TecError::invalid("harness", detail));
        if self.rank == 0 {
            return fail("rank must be at least 1".into());
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda {} must be positive", self.lambda));
        }
        if self.b == 0 {
            return fail("b must be at least 1".into());
        }
        if !(-1.0..=1.0).contains(&self.gamma) {
            return fail(format!("gamma {} not in [-1, 1]", self.gamma));
        }
        if let TargetDims::Fraction(f) = self.target {
            if !(f > 0.0 && f <= 1.0) {
                return fail(format!("projection fraction {f} not in (0, 1]"));
            }
        }
        if self.splits == 0 || self.train_size == 0 || self.test_size == 0 {
            return fail("splits, train size and test size must be positive".into());
        }
        if self.folds < 2 {
            return fail("at least two folds are needed".into());
        }
        Ok(())
    }

    pub fn als_options(&self) -> AlsOptions {
        AlsOptions {
            rank: self.rank,
            seed: self.seed,
            ..AlsOptions::default()
        }
    }

    pub fn target_dims(&self, mode_dims: &[usize]) -> Result<Vec<usize>> {
        match &self.target {
            TargetDims::Fraction(f) => fraction_target_dims(mode_dims, *f),
            TargetDims::Explicit(dims) => {
                if dims.len() != mode_dims.len() || dims.iter().zip(mode_dims).any(|(&p, &n)| p == 0 || p > n) {
                    return Err(TecError::invalid(
                        "harness",
                        format!("target dims {dims:?} incompatible with mode dims {mode_dims:?}"),
                    ));
                }
                Ok(dims.clone())
            }
        }
    }

    pub fn tec_config(&self, mode_dims: &[usize], master_seed: u64) -> Result<TecConfig> {
        let mut config = TecConfig::new(self.target_dims(mode_dims)?);
        config.b = self.b;
        config.gamma = self.gamma;
        config.master_seed = master_seed;
        config.member.lambda = self.lambda;
        config.member.bandwidth = self.bandwidth.clone();
        config.member.projection = ProjectionKind::Gaussian(self.scaling);
        Ok(config)
    }
}

/// Wall-clock seconds per phase, summed over splits, folds and members.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub decompose: f64,
    pub project_gram: f64,
    pub solve: f64,
    pub predict: f64,
}

impl PhaseTimings {
    fn add(&mut self, other: &PhaseTimings) {
        self.decompose += other.decompose;
        self.project_gram += other.project_gram;
        self.solve += other.solve;
        self.predict += other.predict;
    }

    fn add_model(&mut self, model: &TecModel) {
        for m in model.members() {
            self.project_gram += m.stats.project_gram_seconds;
            self.solve += m.stats.solve_seconds;
        }
    }
}

/// CP factors for every sample: F-model factors as stored, dense samples via
/// rank-`als.rank` ALS followed by [`CpTensor::canonical`].
pub fn to_cp(samples: &Samples, als: &AlsOptions) -> Result<Vec<CpTensor>> {
    match samples {
        Samples::Cp(v) => Ok(v.iter().map(CpTensor::canonical).collect()),
        Samples::Dense(v) => v
            .par_iter()
            .map(|t| cp_als(t, als).map(|fit| fit.tensor.canonical()))
            .collect(),
    }
}

fn labels_of(ds: &Dataset) -> Result<Vec<f64>> {
    ds.labels_f64()
        .ok_or_else(|| TecError::Data("dataset has no labels".into()))
}

fn error_percent(predicted: &[i8], truth: &[f64]) -> f64 {
    let wrong = predicted
        .iter()
        .zip(truth)
        .filter(|(&p, &y)| p as f64 != y)
        .count();
    100.0 * wrong as f64 / truth.len() as f64
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_and_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberReport {
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    pub project_gram_seconds: f64,
    pub solve_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub n_train: usize,
    pub members: Vec<MemberReport>,
    pub timings: PhaseTimings,
    pub wall_seconds: f64,
}

/// Trains on the whole dataset with the run seed as ensemble master seed.
pub fn train(ds: &Dataset, config: &RunConfig) -> Result<(TecModel, ModelMeta, TrainReport)> {
    config.validate()?;
    let started = Instant::now();
    let labels = labels_of(ds)?;
    let als = config.als_options();
    let mut timings = PhaseTimings::default();
    let t0 = Instant::now();
    let samples = to_cp(&ds.samples, &als)?;
    timings.decompose = t0.elapsed().as_secs_f64();
    let mode_dims = samples
        .first()
        .map(CpTensor::mode_dims)
        .ok_or_else(|| TecError::Data("no training samples".into()))?;
    let model = tec_train(&samples, &labels, &config.tec_config(&mode_dims, config.seed)?)?;
    timings.add_model(&model);
    let members = model
        .members()
        .iter()
        .map(|m| MemberReport {
            seed: m.projection().seed,
            iterations: m.stats.iterations,
            converged: m.stats.converged,
            objective: m.stats.objective,
            project_gram_seconds: m.stats.project_gram_seconds,
            solve_seconds: m.stats.solve_seconds,
        })
        .collect();
    let meta = ModelMeta {
        lambda: config.lambda,
        master_seed: config.seed,
        dense_als: ds.samples.is_dense().then_some(als),
    };
    let report = TrainReport {
        n_train: samples.len(),
        members,
        timings,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((model, meta, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub labels: Vec<i8>,
    pub tau: Vec<f64>,
    /// Percent misclassified when the dataset carries labels.
    pub error: Option<f64>,
    pub timings: PhaseTimings,
}

pub fn predict(model: &TecModel, meta: &ModelMeta, ds: &Dataset) -> Result<Prediction> {
    if ds.is_empty() {
        return Err(TecError::Data("no samples to predict".into()));
    }
    let mut timings = PhaseTimings::default();
    let t0 = Instant::now();
    let samples = match (&ds.samples, &meta.dense_als) {
        (Samples::Dense(_), None) => {
            return Err(TecError::Data(
                "dense input given to a model trained on CP data; decomposition rank unknown".into(),
            ))
        }
        (Samples::Dense(_), Some(als)) => to_cp(&ds.samples, als)?,
        (Samples::Cp(_), _) => to_cp(&ds.samples, &AlsOptions::default())?,
    };
    timings.decompose = t0.elapsed().as_secs_f64();
    let t0 = Instant::now();
    let tau: Vec<f64> = samples
        .par_iter()
        .map(|x| model.tau(x))
        .collect::<Result<_>>()?;
    timings.predict = t0.elapsed().as_secs_f64();
    let labels: Vec<i8> = tau.iter().map(|&t| threshold(t, model.gamma())).collect();
    let error = ds.labels_f64().map(|truth| error_percent(&labels, &truth));
    Ok(Prediction {
        labels,
        tau,
        error,
        timings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Percent test error per split, in split order.
    pub split_errors: Vec<f64>,
    pub mean_error: f64,
    /// Sample standard deviation of the split errors.
    pub std_error: f64,
    pub wall_seconds: f64,
    pub timings: PhaseTimings,
    pub config: RunConfig,
}

/// Repeated random splits: shuffle, train on the first `train_size`, test on
/// the next `test_size`.
pub fn benchmark(ds: &Dataset, config: &RunConfig) -> Result<EvalReport> {
    config.validate()?;
    let started = Instant::now();
    let labels = labels_of(ds)?;
    let needed = config.train_size + config.test_size;
    if ds.len() < needed {
        return Err(TecError::Data(format!(
            "{} samples, but a split needs {} train + {} test",
            ds.len(),
            config.train_size,
            config.test_size
        )));
    }
    let mut timings = PhaseTimings::default();
    let t0 = Instant::now();
    let samples = to_cp(&ds.samples, &config.als_options())?;
    timings.decompose = t0.elapsed().as_secs_f64();
    let mode_dims = samples[0].mode_dims();

    let outcomes: Vec<Result<(f64, PhaseTimings)>> = (0..config.splits)
        .into_par_iter()
        .map(|s| {
            let mut order: Vec<usize> = (0..samples.len()).collect();
            order.shuffle(&mut rng::stream(config.seed, Purpose::Shuffle, s as u64));
            let (train_idx, rest) = order.split_at(config.train_size);
            let test_idx = &rest[..config.test_size];
            let pick = |idx: &[usize]| -> (Vec<CpTensor>, Vec<f64>) {
                (idx.iter().map(|&i| samples[i].clone()).collect(), idx.iter().map(|&i| labels[i]).collect())
            };
            let (xtr, ytr) = pick(train_idx);
            let (xte, yte) = pick(test_idx);
            let tec = config.tec_config(&mode_dims, split_seed(config.seed, s as u64))?;
            let model = tec_train(&xtr, &ytr, &tec).map_err(|e| split_error(s, e))?;
            let mut t = PhaseTimings::default();
            t.add_model(&model);
            let t0 = Instant::now();
            let predicted: Vec<i8> = xte
                .iter()
                .map(|x| model.tau(x).map(|tau| threshold(tau, model.gamma())))
                .collect::<Result<_>>()?;
            t.predict = t0.elapsed().as_secs_f64();
            Ok((error_percent(&predicted, &yte), t))
        })
        .collect();

    let mut split_errors = Vec::with_capacity(config.splits);
    for outcome in outcomes {
        let (err, t) = outcome?;
        split_errors.push(err);
        timings.add(&t);
    }
    let (mean_error, std_error) = mean_and_sd(&split_errors);
    Ok(EvalReport {
        split_errors,
        mean_error,
        std_error,
        wall_seconds: started.elapsed().as_secs_f64(),
        timings,
        config: config.clone(),
    })
}

fn split_error(split: usize, e: TecError) -> TecError {
    match e {
        TecError::SingleClass => TecError::Data(format!("split {split}: training part holds a single class")),
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneGrid {
    pub b_values: Vec<usize>,
    pub gammas: Vec<f64>,
}

impl Default for TuneGrid {
    fn default() -> Self {
        Self {
            b_values: (2..=20).collect(),
            gammas: (-10..=10).map(|i| i as f64 / 10.0).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub b: usize,
    pub gamma: f64,
    /// Percent error per fold.
    pub fold_errors: Vec<f64>,
    pub mean_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    /// `b` search at `γ = 0`.
    pub stage1: Vec<CvRow>,
    /// `γ` search at the chosen `b`.
    pub stage2: Vec<CvRow>,
    pub best_b: usize,
    pub best_gamma: f64,
    /// The input configuration with `b` and `γ` replaced by the winners.
    pub config: RunConfig,
    pub wall_seconds: f64,
    pub timings: PhaseTimings,
}

/// Stratified fold index per sample: each class is shuffled and dealt
/// round-robin starting at a random fold.
fn stratified_folds(labels: &[f64], k: usize, seed: u64, attempt: u64) -> Vec<usize> {
    let mut rng = rng::stream(seed, Purpose::Folds, attempt);
    let mut fold = vec![0; labels.len()];
    for class in [-1.0, 1.0] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let offset = rand::Rng::random_range(&mut rng, 0..k);
        for (pos, &i) in idx.iter().enumerate() {
            fold[i] = (pos + offset) % k;
        }
    }
    fold
}

/// A fold assignment is usable when every test fold is non-empty and every
/// training complement holds both classes.
fn folds_usable(labels: &[f64], fold: &[usize], k: usize) -> bool {
    (0..k).all(|f| {
        let test = fold.contains(&f);
        let has = |c: f64| labels.iter().zip(fold).any(|(&y, &g)| g != f && y == c);
        test && has(-1.0) && has(1.0)
    })
}

/// Two-stage cross-validated search: `b` over its grid with `γ = 0`, then
/// `γ` over its grid at the chosen `b`. Ties go to the smaller `b`, then to
/// the `γ` closest to zero (the smaller one if still tied).
///
/// Each fold trains `max(b_values)` members once; smaller ensembles are the
/// leading members, which are identical to a fresh ensemble of that size.
pub fn tune(ds: &Dataset, config: &RunConfig, grid: &TuneGrid) -> Result<TuneReport> {
    config.validate()?;
    if grid.b_values.is_empty() || grid.gammas.is_empty() {
        return Err(TecError::invalid("harness", "tuning grids must be non-empty"));
    }
    if grid.b_values.contains(&0) || grid.gammas.iter().any(|g| !(-1.0..=1.0).contains(g)) {
        return Err(TecError::invalid("harness", "b values must be positive and gammas within [-1, 1]"));
    }
    let started = Instant::now();
    let labels = labels_of(ds)?;
    let k = config.folds;
    let mut fold = stratified_folds(&labels, k, config.seed, 0);
    if !folds_usable(&labels, &fold, k) {
        fold = stratified_folds(&labels, k, config.seed, 1);
        if !folds_usable(&labels, &fold, k) {
            return Err(TecError::Data(format!(
                "cannot form {k} folds with both classes in every training part"
            )));
        }
    }

    let mut timings = PhaseTimings::default();
    let t0 = Instant::now();
    let samples = to_cp(&ds.samples, &config.als_options())?;
    timings.decompose = t0.elapsed().as_secs_f64();
    let mode_dims = samples[0].mode_dims();
    let max_b = *grid.b_values.iter().max().expect("non-empty grid");

    // votes[i][m]: member m's vote on test sample i of the fold.
    type FoldVotes = (Vec<Vec<i8>>, Vec<f64>, PhaseTimings);
    let per_fold: Vec<Result<FoldVotes>> = (0..k)
        .into_par_iter()
        .map(|f| {
            let (mut xtr, mut ytr, mut xte, mut yte) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for (i, x) in samples.iter().enumerate() {
                if fold[i] == f {
                    xte.push(x.clone());
                    yte.push(labels[i]);
                } else {
                    xtr.push(x.clone());
                    ytr.push(labels[i]);
                }
            }
            let mut tec = config.tec_config(&mode_dims, split_seed(config.seed, f as u64))?;
            tec.b = max_b;
            tec.gamma = 0.0;
            let model = tec_train(&xtr, &ytr, &tec)?;
            let mut t = PhaseTimings::default();
            t.add_model(&model);
            let t0 = Instant::now();
            let votes = xte.iter().map(|x| model.votes(x)).collect::<Result<_>>()?;
            t.predict = t0.elapsed().as_secs_f64();
            Ok((votes, yte, t))
        })
        .collect();
    let mut folds = Vec::with_capacity(k);
    for r in per_fold {
        let (votes, yte, t) = r?;
        timings.add(&t);
        folds.push((votes, yte));
    }

    let row = |b: usize, gamma: f64| -> CvRow {
        let fold_errors: Vec<f64> = folds
            .iter()
            .map(|(votes, truth)| {
                let predicted: Vec<i8> = votes
                    .iter()
                    .map(|v| threshold(tau_from_votes(&v[..b]), gamma))
                    .collect();
                error_percent(&predicted, truth)
            })
            .collect();
        let (mean_error, _) = mean_and_sd(&fold_errors);
        CvRow {
            b,
            gamma,
            fold_errors,
            mean_error,
        }
    };

    let stage1: Vec<CvRow> = grid.b_values.iter().map(|&b| row(b, 0.0)).collect();
    let best_b = stage1
        .iter()
        .min_by(|x, y| x.mean_error.total_cmp(&y.mean_error).then(x.b.cmp(&y.b)))
        .expect("non-empty")
        .b;
    let stage2: Vec<CvRow> = grid.gammas.iter().map(|&g| row(best_b, g)).collect();
    let best_gamma = stage2
        .iter()
        .min_by(|x, y| {
            x.mean_error
                .total_cmp(&y.mean_error)
                .then(x.gamma.abs().total_cmp(&y.gamma.abs()))
                .then(x.gamma.total_cmp(&y.gamma))
        })
        .expect("non-empty")
        .gamma;

    let mut tuned = config.clone();
    tuned.b = best_b;
    tuned.gamma = best_gamma;
    Ok(TuneReport {
        stage1,
        stage2,
        best_b,
        best_gamma,
        config: tuned,
        wall_seconds: started.elapsed().as_secs_f64(),
        timings,
    })
}
