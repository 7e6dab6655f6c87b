//! Primal Newton solver for the squared-hinge support tensor machine on a
//! precomputed Gram matrix.
//!
//! The decision function on the training set is `f = K D_y β`, and the
//! objective is
//!
//! ```text
//! J(β) = λ βᵀ D_y K D_y β + (1/n) Σ_i max(0, 1 − y_i f_i)²
//! ```
//!
//! Writing `M = D_y K D_y`, the margins are `y_i f_i = (Mβ)_i`. With the
//! support set `S = {i : (Mβ)_i < 1}` fixed, the exact Newton step lands on
//! the solution of `(nλ I + I_S M) β = I_S 1`, i.e. `β_i = 0` off the support
//! and `(nλ I + M_SS) β_S = 1` on it. The iteration starts from `β = 1`.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, TecError};
use crate::kernels::GramMatrix;

#[derive(Debug, Clone)]
pub struct StmProblem {
    gram: GramMatrix,
    labels: Vec<f64>,
    lambda: f64,
}

impl StmProblem {
    pub fn new(gram: GramMatrix, labels: Vec<f64>, lambda: f64) -> Result<Self> {
        if labels.len() != gram.n() {
            return Err(TecError::shape(
                "stm",
                format!("{} labels for a {}×{} gram matrix", labels.len(), gram.n(), gram.n()),
            ));
        }
        if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(TecError::invalid("stm", "labels must be ±1"));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(TecError::invalid("stm", format!("lambda {lambda} must be positive")));
        }
        Ok(Self { gram, labels, lambda })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn gram(&self) -> &GramMatrix {
        &self.gram
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `D_y K D_y`
    fn signed_gram(&self) -> DMatrix<f64> {
        let n = self.n();
        let k = self.gram.values();
        DMatrix::from_fn(n, n, |i, m| self.labels[i] * self.labels[m] * k[(i, m)])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Convergence threshold on `‖β_new − β‖₂`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 50 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StmSolution {
    pub beta: Vec<f64>,
    /// `true` where `y_i f_i < 1` at the returned `beta`.
    pub support_mask: Vec<bool>,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
}

fn margins(signed: &DMatrix<f64>, beta: &DVector<f64>) -> DVector<f64> {
    signed * beta
}

fn objective_from_margins(lambda: f64, beta: &DVector<f64>, margins: &DVector<f64>) -> f64 {
    let n = beta.len() as f64;
    let reg = lambda * beta.dot(margins);
    let loss: f64 = margins.iter().map(|&m| (1.0 - m).max(0.0).powi(2)).sum();
    reg + loss / n
}

/// Runs the active-set Newton iteration until `‖Δβ‖ < tol`, the support is
/// self-consistent, or `max_iter` is reached.
///
/// If a support mask reappears before convergence, the step is halved
/// (`β ← (β_old + β_new)/2`) to break the cycle.
pub fn newton_solve(p: &StmProblem, opts: &SolverOptions) -> Result<StmSolution> {
    if opts.tol.is_nan() || opts.tol <= 0.0 || opts.max_iter == 0 {
        return Err(TecError::invalid("stm", "tol must be positive and max_iter at least 1"));
    }
    let n = p.n();
    let ridge = n as f64 * p.lambda;
    let signed = p.signed_gram();
    let mut beta = DVector::from_element(n, 1.0);
    let mut seen: HashSet<Vec<bool>> = HashSet::new();
    let mut converged = false;
    let mut iterations = 0;

    for iteration in 1..=opts.max_iter {
        iterations = iteration;
        let m = margins(&signed, &beta);
        let mask: Vec<bool> = m.iter().map(|&v| v < 1.0).collect();
        let support: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();

        let mut next = DVector::zeros(n);
        if !support.is_empty() {
            let s = support.len();
            let mut system = DMatrix::from_fn(s, s, |a, b| signed[(support[a], support[b])]);
            for a in 0..s {
                system[(a, a)] += ridge;
            }
            let solved = system
                .lu()
                .solve(&DVector::from_element(s, 1.0))
                .filter(|x| x.iter().all(|v| v.is_finite()))
                .ok_or(TecError::Singular { iteration })?;
            for (a, &i) in support.iter().enumerate() {
                next[i] = solved[a];
            }
        }

        let repeated = !seen.insert(mask.clone());
        if repeated {
            next = (&beta + &next) * 0.5;
        }
        let step = (&next - &beta).norm();
        beta = next;
        // An undamped iterate whose own support equals the one it was solved
        // on is reproduced exactly by the next update.
        let settled = !repeated && margins(&signed, &beta).iter().map(|&v| v < 1.0).eq(mask.iter().copied());
        if step < opts.tol || settled {
            converged = true;
            break;
        }
    }

    let m = margins(&signed, &beta);
    Ok(StmSolution {
        support_mask: m.iter().map(|&v| v < 1.0).collect(),
        objective: objective_from_margins(p.lambda, &beta, &m),
        beta: beta.iter().copied().collect(),
        iterations,
        converged,
    })
}

/// `Σ_i kernel_row[i] · labels[i] · beta[i]`
pub fn decision_value(beta: &[f64], labels: &[f64], kernel_row: &[f64]) -> Result<f64> {
    if beta.len() != labels.len() || beta.len() != kernel_row.len() {
        return Err(TecError::shape(
            "stm",
            format!(
                "beta {}, labels {}, kernel row {}",
                beta.len(),
                labels.len(),
                kernel_row.len()
            ),
        ));
    }
    Ok(kernel_row
        .iter()
        .zip(labels)
        .zip(beta)
        .map(|((k, y), b)| k * y * b)
        .sum())
}

/// Primal objective `λ βᵀ D_y K D_y β + (1/n) Σ max(0, 1 − y_i f_i)²`.
pub fn objective_value(p: &StmProblem, beta: &[f64]) -> Result<f64> {
    if beta.len() != p.n() {
        return Err(TecError::shape("stm", format!("beta has {} entries, expected {}", beta.len(), p.n())));
    }
    let beta = DVector::from_column_slice(beta);
    let signed = p.signed_gram();
    Ok(objective_from_margins(p.lambda, &beta, &margins(&signed, &beta)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Purpose};
    use rand::Rng;

    fn problem(k: DMatrix<f64>, y: Vec<f64>, lambda: f64) -> StmProblem {
        StmProblem::new(GramMatrix::from_matrix(k).unwrap(), y, lambda).unwrap()
    }

    fn random_problem(n: usize, seed: u64) -> StmProblem {
        let mut rng = rng::stream(seed, Purpose::Test, 4);
        let pts: Vec<[f64; 3]> = (0..n)
            .map(|_| [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let y: Vec<f64> = pts
            .iter()
            .map(|p| if p[0] + 0.3 * rng.random::<f64>() > 0.6 { 1.0 } else { -1.0 })
            .collect();
        let k = DMatrix::from_fn(n, n, |i, m| {
            let d2: f64 = (0..3).map(|c| (pts[i][c] - pts[m][c]).powi(2)).sum();
            (-d2 / 0.5).exp()
        });
        problem(k, y, 0.01 + rng.random::<f64>() * 0.2)
    }

    /// Term-by-term objective evaluated with explicit loops.
    fn objective_oracle(k: &DMatrix<f64>, y: &[f64], lambda: f64, beta: &[f64]) -> f64 {
        let n = y.len();
        let mut reg = 0.0;
        for i in 0..n {
            for m in 0..n {
                reg += beta[i] * y[i] * k[(i, m)] * y[m] * beta[m];
            }
        }
        let mut loss = 0.0;
        for i in 0..n {
            let mut f = 0.0;
            for m in 0..n {
                f += k[(m, i)] * y[m] * beta[m];
            }
            loss += (1.0 - y[i] * f).max(0.0).powi(2);
        }
        lambda * reg + loss / n as f64
    }

    #[test]
    fn single_point_fixed_point() {
        let p = problem(DMatrix::from_element(1, 1, 1.0), vec![1.0], 1.0);
        let sol = newton_solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(sol.beta, vec![0.5]);
        assert_eq!(sol.support_mask, vec![true]);
        assert!(sol.converged && sol.iterations <= 2);
    }

    #[test]
    fn two_point_identity_kernel() {
        let p = problem(DMatrix::identity(2, 2), vec![1.0, -1.0], 0.5);
        let sol = newton_solve(&p, &SolverOptions::default()).unwrap();
        // Separable coordinates: minimize 0.5 b² + 0.5 (1 − b)² → b = 1/2, J = 0.5.
        for b in &sol.beta {
            assert!((b - 0.5).abs() < 1e-12);
        }
        assert!((sol.objective - 0.5).abs() < 1e-6);
    }

    #[test]
    fn heavy_regularization_shrinks_beta() {
        let p = random_problem(12, 3);
        let p = StmProblem::new(p.gram().clone(), p.labels().to_vec(), 1e6).unwrap();
        let sol = newton_solve(&p, &SolverOptions::default()).unwrap();
        let norm = sol.beta.iter().map(|b| b * b).sum::<f64>().sqrt();
        let kmax = p.gram().values().amax();
        assert!(norm <= 12.0 / 1e6 * kmax);
    }

    #[test]
    fn objective_baselines_and_oracle() {
        let p = random_problem(9, 5);
        assert!((objective_value(&p, &[0.0; 9]).unwrap() - 1.0).abs() < 1e-15);

        let mut rng = rng::stream(6, Purpose::Test, 0);
        let beta: Vec<f64> = (0..9).map(|_| rng.random::<f64>() - 0.2).collect();
        let expect = objective_oracle(p.gram().values(), p.labels(), p.lambda(), &beta);
        assert!((objective_value(&p, &beta).unwrap() - expect).abs() <= 1e-12);
        assert!(objective_value(&p, &[0.0; 3]).is_err());
    }

    #[test]
    fn separable_fit_has_only_regularizer() {
        // K = 4 I, beta = 1/2: every margin is 2 ≥ 1 so the hinge vanishes.
        let p = problem(DMatrix::identity(2, 2) * 4.0, vec![1.0, -1.0], 0.3);
        let beta = [0.5, 0.5];
        let reg = 0.3 * (0.25 * 4.0 + 0.25 * 4.0);
        assert!((objective_value(&p, &beta).unwrap() - reg).abs() < 1e-15);
    }

    #[test]
    fn decision_values() {
        assert_eq!(decision_value(&[0.0; 3], &[1.0, -1.0, 1.0], &[0.2, 0.3, 0.4]).unwrap(), 0.0);
        assert_eq!(decision_value(&[0.5], &[1.0], &[1.0]).unwrap(), 0.5);
        let mut rng = rng::stream(8, Purpose::Test, 0);
        let b: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
        let k: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = (0..20).map(|i| if i % 3 == 0 { 1.0 } else { -1.0 }).collect();
        let mut expect = 0.0;
        for i in 0..20 {
            expect += k[i] * y[i] * b[i];
        }
        assert!((decision_value(&b, &y, &k).unwrap() - expect).abs() <= 1e-14);
        assert!(decision_value(&b, &y[..3], &k).is_err());
    }

    #[test]
    fn converged_solution_is_a_fixed_point() {
        for seed in 0..10 {
            let p = random_problem(25, 100 + seed);
            let sol = newton_solve(&p, &SolverOptions::default()).unwrap();
            assert!(sol.converged);
            // One more undamped update from the returned beta.
            let signed = p.signed_gram();
            let beta = DVector::from_column_slice(&sol.beta);
            let m = &signed * &beta;
            let support: Vec<usize> = (0..25).filter(|&i| m[i] < 1.0).collect();
            let s = support.len();
            let mut a = DMatrix::from_fn(s, s, |x, z| signed[(support[x], support[z])]);
            for x in 0..s {
                a[(x, x)] += 25.0 * p.lambda();
            }
            let solved = a.lu().solve(&DVector::from_element(s, 1.0)).unwrap();
            let mut again = DVector::zeros(25);
            for (x, &i) in support.iter().enumerate() {
                again[i] = solved[x];
            }
            assert!((again - beta).norm() < 1e-6);
            assert!(sol.objective <= 1.0);
        }
    }

    #[test]
    fn label_flip_keeps_beta_and_negates_decisions() {
        let p = random_problem(15, 42);
        let flipped: Vec<f64> = p.labels().iter().map(|y| -y).collect();
        let q = StmProblem::new(p.gram().clone(), flipped.clone(), p.lambda()).unwrap();
        let (a, b) = (
            newton_solve(&p, &SolverOptions::default()).unwrap(),
            newton_solve(&q, &SolverOptions::default()).unwrap(),
        );
        assert_eq!(a.beta, b.beta);
        for i in 0..15 {
            let row: Vec<f64> = (0..15).map(|m| p.gram().get(m, i)).collect();
            let (da, db) = (
                decision_value(&a.beta, p.labels(), &row).unwrap(),
                decision_value(&b.beta, &flipped, &row).unwrap(),
            );
            assert_eq!(da, -db);
        }
    }

    #[test]
    fn max_iter_exhaustion_is_not_an_error() {
        let p = random_problem(20, 7);
        let sol = newton_solve(&p, &SolverOptions { tol: 1e-300, max_iter: 1 }).unwrap();
        assert_eq!(sol.iterations, 1);
        assert!(!sol.converged);
    }

    #[test]
    fn problem_validation() {
        let g = GramMatrix::from_matrix(DMatrix::identity(2, 2)).unwrap();
        assert!(StmProblem::new(g.clone(), vec![1.0], 1.0).is_err());
        assert!(StmProblem::new(g.clone(), vec![1.0, 0.0], 1.0).is_err());
        assert!(StmProblem::new(g.clone(), vec![1.0, -1.0], 0.0).is_err());
        let p = StmProblem::new(g, vec![1.0, -1.0], 1.0).unwrap();
        assert!(newton_solve(&p, &SolverOptions { tol: 0.0, max_iter: 5 }).is_err());
    }
}
