//! Acceptance suite: one PASS/FAIL line per criterion; exits non-zero if any
//! criterion fails.

use std::fs;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use tec_core::datagen::{generate, SimModel, SimModelSpec};
use tec_core::harness::{benchmark, predict, train, RunConfig};
use tec_core::io::{read_model, write_model};
use tec_core::kernels::{gram_matrix, tensor_kernel, KernelSpec};
use tec_core::projection::{jl_target_dim, project_cp, sample_projection_set, Scaling};
use tec_core::rng::{stream, Purpose};
use tec_core::stm::{newton_solve, SolverOptions, StmProblem};
use tec_core::{CpTensor, Dataset};

struct Outcome {
    pass: bool,
    detail: String,
}

fn data(model: SimModel, per_class: usize, seed: u64) -> Dataset {
    generate(&SimModelSpec {
        model,
        samples_per_class: per_class,
        seed,
    })
    .expect("generation succeeds")
}

fn reproduction(model: SimModel, splits: usize, rank: usize, accept: impl Fn(f64) -> bool, band: &str) -> Outcome {
    let ds = data(model, 100, 7);
    let config = RunConfig {
        rank,
        splits,
        seed: 7,
        ..RunConfig::default()
    };
    match benchmark(&ds, &config) {
        Ok(r) => Outcome {
            pass: accept(r.mean_error),
            detail: format!(
                "mean error {:.2}% (S.E. {:.2}, R={splits}) accept {band}; {:.1}s",
                r.mean_error, r.std_error, r.wall_seconds
            ),
        },
        Err(e) => Outcome {
            pass: false,
            detail: format!("benchmark failed: {e}"),
        },
    }
}

fn random_cp(rng: &mut impl Rng, dims: &[usize], rank: usize) -> CpTensor {
    CpTensor::new(
        dims.iter()
            .map(|&n| DMatrix::from_fn(n, rank, |_, _| rng.random::<f64>() * 2.0 - 1.0))
            .collect(),
    )
    .unwrap()
}

/// Squared-hinge objective minimized over `u = Lᵀ D_y β` with `K = L Lᵀ`:
/// `λ‖u‖² + (1/n) Σ max(0, 1 − y_i (L u)_i)²`, by Nesterov's method for
/// strongly convex smooth functions.
fn oracle_objective(k: &DMatrix<f64>, y: &[f64], lambda: f64) -> f64 {
    let n = y.len();
    let eig = k.clone().symmetric_eigen();
    let root = DVector::from_iterator(n, eig.eigenvalues.iter().map(|&v| v.max(0.0).sqrt()));
    let l = &eig.eigenvectors * DMatrix::from_diagonal(&root);
    let yl = DMatrix::from_fn(n, n, |i, j| y[i] * l[(i, j)]);
    let value = |u: &DVector<f64>| {
        let m = &yl * u;
        lambda * u.norm_squared() + m.iter().map(|&v| (1.0 - v).max(0.0).powi(2)).sum::<f64>() / n as f64
    };
    let grad = |u: &DVector<f64>| {
        let m = &yl * u;
        let slack = DVector::from_iterator(n, m.iter().map(|&v| (1.0 - v).max(0.0)));
        u * (2.0 * lambda) - yl.transpose() * slack * (2.0 / n as f64)
    };
    let smooth = 2.0 * lambda + 2.0 * root.iter().map(|r| r * r).fold(0.0, f64::max) / n as f64;
    let kappa = smooth / (2.0 * lambda);
    let momentum = (kappa.sqrt() - 1.0) / (kappa.sqrt() + 1.0);
    let mut u = DVector::zeros(n);
    let mut v = u.clone();
    for _ in 0..200_000 {
        let next = &v - grad(&v) / smooth;
        v = &next + (&next - &u) * momentum;
        u = next;
    }
    value(&u)
}

fn solver_oracle() -> Outcome {
    let mut rng = stream(5, Purpose::Test, 0);
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let n = rng.random_range(2..=30);
        let rank = rng.random_range(1..=2);
        let data: Vec<CpTensor> = (0..n).map(|_| random_cp(&mut rng, &[4, 3], rank)).collect();
        let spec = KernelSpec::uniform(rng.random_range(0.5..2.0)).unwrap();
        let gram = gram_matrix(&data, &spec).unwrap();
        let mut y: Vec<f64> = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        y[0] = 1.0;
        y[1] = -1.0;
        let lambda = 10f64.powf(rng.random_range(-3.0..0.0));
        let oracle = oracle_objective(gram.values(), &y, lambda);
        let problem = StmProblem::new(gram, y, lambda).unwrap();
        let sol = match newton_solve(&problem, &SolverOptions::default()) {
            Ok(s) => s,
            Err(e) => {
                return Outcome {
                    pass: false,
                    detail: format!("case {case}: solver failed: {e}"),
                }
            }
        };
        if !sol.converged {
            return Outcome {
                pass: false,
                detail: format!("case {case}: solver did not converge"),
            };
        }
        worst = worst.max((sol.objective - oracle).abs() / oracle.abs());
    }
    Outcome {
        pass: worst <= 1e-6,
        detail: format!("20 problems, worst relative objective gap {worst:.2e} (accept ≤ 1e-6)"),
    }
}

fn kernel_properties() -> Outcome {
    let mut rng = stream(6, Purpose::Test, 0);
    let mut symmetric = true;
    let mut worst_eig = f64::INFINITY;
    for _ in 0..10 {
        let n = rng.random_range(10..40);
        let rank = rng.random_range(1..=3);
        let data: Vec<CpTensor> = (0..n).map(|_| random_cp(&mut rng, &[6, 5, 4], rank)).collect();
        let spec = KernelSpec::gaussian(vec![0.8, 1.0, 1.3]).unwrap();
        let gram = gram_matrix(&data, &spec).unwrap();
        let g = gram.values();
        for i in 0..n {
            for j in 0..n {
                symmetric &= g[(i, j)].to_bits() == g[(j, i)].to_bits();
            }
        }
        symmetric &= tensor_kernel(&data[0], &data[1], &spec).unwrap().to_bits()
            == tensor_kernel(&data[1], &data[0], &spec).unwrap().to_bits();
        worst_eig = worst_eig.min(gram.min_eigenvalue() / gram.trace());
    }
    let mut worst_concat: f64 = 0.0;
    for _ in 0..50 {
        let x = random_cp(&mut rng, &[5, 7, 3], 1);
        let y = random_cp(&mut rng, &[5, 7, 3], 1);
        let sigma = rng.random_range(0.5..3.0);
        let k = tensor_kernel(&x, &y, &KernelSpec::uniform(sigma).unwrap()).unwrap();
        let dist: f64 = (0..3)
            .flat_map(|j| {
                let (a, b) = (x.component(j, 0), y.component(j, 0));
                a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).collect::<Vec<_>>()
            })
            .sum();
        worst_concat = worst_concat.max((k - (-dist / (2.0 * sigma * sigma)).exp()).abs());
    }
    Outcome {
        pass: symmetric && worst_eig >= -1e-8 && worst_concat <= 1e-12,
        detail: format!(
            "exact symmetry {symmetric}; min eigenvalue/trace {worst_eig:.2e} (accept ≥ -1e-8); \
             concatenation gap {worst_concat:.1e} (accept ≤ 1e-12)"
        ),
    }
}

fn jl_distortion() -> Outcome {
    let (n, eps, delta1) = (50, 0.5, 0.05);
    let p = jl_target_dim(n, eps, delta1, 1, 1).unwrap();
    let mut rng = stream(8, Purpose::Test, 0);
    let points: Vec<CpTensor> = (0..n)
        .map(|_| CpTensor::rank_one(vec![(0..100).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()]).unwrap())
        .collect();
    let mut fractions = Vec::new();
    for draw in 0..20 {
        let set = sample_projection_set(&[100], &[p], 1, 1000 + draw, Scaling::InvSqrtP).unwrap();
        let projected: Vec<Vec<f64>> = points
            .iter()
            .map(|x| project_cp(x, &set).unwrap().component(0, 0).to_vec())
            .collect();
        let (mut ok, mut total) = (0usize, 0usize);
        for i in 0..n {
            for j in i + 1..n {
                let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
                let before = d(points[i].component(0, 0), points[j].component(0, 0));
                let after = d(&projected[i], &projected[j]);
                ok += usize::from((after / before - 1.0).abs() <= eps);
                total += 1;
            }
        }
        fractions.push(ok as f64 / total as f64);
    }
    let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
    Outcome {
        pass: p == 84 && mean >= 0.9,
        detail: format!("P={p}; pairs within distortion {:.1}% over 20 draws (accept ≥ 90%)", 100.0 * mean),
    }
}

fn archive_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut mismatches = Vec::new();
    for model in [SimModel::F1, SimModel::M1] {
        let ds = data(model, 15, 3);
        let config = RunConfig {
            seed: 99,
            ..RunConfig::default()
        };
        type Run = (Vec<(String, Vec<u8>)>, Vec<i8>, Vec<u64>);
        let mut reference: Option<Run> = None;
        for threads in [1, 4, 8] {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            let dir = tmp.path().join(format!("{model}-{threads}"));
            let (bytes, labels, taus) = pool.install(|| {
                let (tec, meta, _) = train(&ds, &config).unwrap();
                write_model(&dir, &tec, &meta).unwrap();
                let (back, back_meta) = read_model(&dir).unwrap();
                let p = predict(&back, &back_meta, &ds).unwrap();
                (archive_bytes(&dir), p.labels, p.tau.iter().map(|t| t.to_bits()).collect::<Vec<_>>())
            });
            match &reference {
                None => reference = Some((bytes, labels, taus)),
                Some(r) => {
                    if r.0 != bytes || r.1 != labels || r.2 != taus {
                        mismatches.push(format!("{model} threads {threads}"));
                    }
                }
            }
        }
    }
    Outcome {
        pass: mismatches.is_empty(),
        detail: if mismatches.is_empty() {
            "F1 and M1 archives and predictions byte-identical for 1, 4, 8 threads".into()
        } else {
            format!("differences: {}", mismatches.join(", "))
        },
    }
}

fn complexity() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let mut rng = stream(9, Purpose::Test, 0);
    let (n, rank) = (80, 3);
    let mut time_for = |p: usize| {
        let data: Vec<CpTensor> = (0..n).map(|_| random_cp(&mut rng, &[p, p, p], rank)).collect();
        let spec = KernelSpec::uniform(p as f64).unwrap();
        pool.install(|| {
            (0..7)
                .map(|_| {
                    let t0 = Instant::now();
                    std::hint::black_box(gram_matrix(&data, &spec).unwrap());
                    t0.elapsed().as_secs_f64()
                })
                .fold(f64::INFINITY, f64::min)
        })
    };
    let small = time_for(400);
    let large = time_for(800);
    let ratio = large / small;
    Outcome {
        pass: (1.5..=3.0).contains(&ratio),
        detail: format!(
            "gram build ΣP 1200 → 2400: {:.1} ms → {:.1} ms, ratio {ratio:.2} (accept [1.5, 3.0])",
            small * 1e3,
            large * 1e3
        ),
    }
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 9] = [
        ("F1 reproduction", || reproduction(SimModel::F1, 100, 1, |m| (11.0..=24.0).contains(&m), "[11%, 24%]")),
        ("F2 reproduction", || reproduction(SimModel::F2, 20, 1, |m| m <= 16.0, "≤ 16%")),
        ("M1 reproduction", || reproduction(SimModel::M1, 20, 3, |m| m <= 7.0, "≤ 7%")),
        ("T1 reproduction", || reproduction(SimModel::T1, 20, 3, |m| m <= 11.0, "≤ 11%")),
        ("solver oracle equivalence", solver_oracle),
        ("kernel properties", kernel_properties),
        ("JL distortion", jl_distortion),
        ("determinism across thread counts", determinism),
        ("gram build complexity", complexity),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = check();
        let tag = if outcome.pass { "PASS" } else { "FAIL" };
        println!("criterion {} [{name}] {tag}: {}", i + 1, outcome.detail);
        failed += usize::from(!outcome.pass);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
