mod common;

use std::sync::Arc;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, NonnegativeConeT, SolverStatus};
use common::rng;
use hpm::model::FeatureVector;
use hpm::supervision::{supervise, DatasetManifest};
use hpm::synth::{PlantedConfig, PlantedGenerator};
use hpm::training::{list_images, negative_margin, solve, svm_objective, train, NegativeCache, SolverOptions};
use rand::prelude::*;

fn random_vector(r: &mut impl Rng, dim: usize) -> FeatureVector {
    // a dense block over the first half and a few scalar entries
    let half = dim / 2;
    let block: Arc<[f32]> = (0..half).map(|_| r.gen_range(-1.0f32..1.0)).collect();
    let mut sparse: Vec<(usize, f64)> = Vec::new();
    for i in half..dim {
        if r.gen_bool(0.6) {
            sparse.push((i, r.gen_range(-1.0..1.0)));
        }
    }
    sparse.push((half, r.gen_range(0.0..1.0)));
    sparse.sort_by_key(|e| e.0);
    sparse.dedup_by_key(|e| e.0);
    FeatureVector {
        dense: vec![(0, block)],
        sparse,
    }
}

struct Problem {
    dim: usize,
    positives: Vec<FeatureVector>,
    /// Windows of `(features, delta)`.
    windows: Vec<Vec<(FeatureVector, f64)>>,
    c: f64,
    m: f64,
    bounds: Vec<(usize, f64)>,
}

fn random_problem(seed: u64, bounds: bool) -> Problem {
    let mut r = rng(seed);
    let dim = 8;
    let positives = (0..r.gen_range(3..7)).map(|_| random_vector(&mut r, dim)).collect();
    let windows = (0..r.gen_range(2..5))
        .map(|_| {
            (0..r.gen_range(1..4))
                .map(|_| (random_vector(&mut r, dim), r.gen_range(0.0..=1.0)))
                .collect()
        })
        .collect();
    let bounds = if bounds { vec![(6, -0.05), (7, -0.02)] } else { Vec::new() };
    Problem {
        dim,
        positives,
        windows,
        c: r.gen_range(0.1..5.0),
        m: 0.5,
        bounds,
    }
}

/// Primal QP: variables `[w, xi_pos, xi_win]`, minimizing
/// `1/2 |w|^2 + C (sum xi)` subject to the hinge and bound constraints,
/// written as `A x + s = b` with `s >= 0`.
fn qp_oracle(p: &Problem) -> (Vec<f64>, f64) {
    let d = p.dim;
    let np = p.positives.len();
    let nw = p.windows.len();
    let n = d + np + nw;
    let p_mat = CscMatrix::new_from_triplets(n, n, (0..d).collect(), (0..d).collect(), vec![1.0; d]);
    let mut q = vec![0.0; n];
    for v in &mut q[d..] {
        *v = p.c;
    }
    let (mut rows, mut cols, mut vals, mut b) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut row = 0;
    let mut push_row = |coeffs: Vec<(usize, f64)>, rhs: f64, b: &mut Vec<f64>| {
        for (j, v) in coeffs {
            rows.push(row);
            cols.push(j);
            vals.push(v);
        }
        b.push(rhs);
        row += 1;
    };
    let dense = |x: &FeatureVector| x.to_dense(d);
    for j in d..n {
        push_row(vec![(j, -1.0)], 0.0, &mut b);
    }
    for (i, x) in p.positives.iter().enumerate() {
        let mut coeffs: Vec<(usize, f64)> = dense(x).into_iter().enumerate().map(|(j, v)| (j, -v)).collect();
        coeffs.push((d + i, -1.0));
        push_row(coeffs, -1.0, &mut b);
    }
    for (g, win) in p.windows.iter().enumerate() {
        for (x, delta) in win {
            let mut coeffs: Vec<(usize, f64)> = dense(x).into_iter().enumerate().collect();
            coeffs.push((d + np + g, -1.0));
            push_row(coeffs, -negative_margin(*delta, p.m), &mut b);
        }
    }
    for &(j, ub) in &p.bounds {
        push_row(vec![(j, 1.0)], ub, &mut b);
    }
    let a = CscMatrix::new_from_triplets(row, n, rows, cols, vals);
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .tol_gap_abs(1e-12)
        .tol_gap_rel(1e-12)
        .tol_feas(1e-12)
        .build()
        .unwrap();
    let mut solver = DefaultSolver::new(&p_mat, &q, &a, &b, &[NonnegativeConeT(row)], settings).unwrap();
    solver.solve();
    assert!(
        matches!(solver.solution.status, SolverStatus::Solved | SolverStatus::AlmostSolved),
        "{:?}",
        solver.solution.status
    );
    (solver.solution.x[..d].to_vec(), solver.solution.obj_val)
}

fn run_solver(p: &Problem) -> (hpm::training::Solution, NegativeCache<usize>) {
    let mut cache = NegativeCache::new(p.m);
    for (g, win) in p.windows.iter().enumerate() {
        for (x, delta) in win {
            cache.push(g, x.clone(), *delta);
        }
    }
    let mut alpha = vec![0.0; p.positives.len()];
    let opts = SolverOptions {
        c: p.c,
        tolerance: 1e-10,
        max_epochs: 200_000,
        upper_bounds: p.bounds.clone(),
        ..Default::default()
    };
    let sol = solve(&p.positives, &mut alpha, &mut cache, p.dim, &opts).unwrap();
    (sol, cache)
}

fn check_against_oracle(p: &Problem) {
    let (want_w, want_obj) = qp_oracle(p);
    let (sol, cache) = run_solver(p);
    let direct = svm_objective(&sol.w, &p.positives, &cache, p.c, p.m);
    assert!((direct - sol.objective).abs() <= 1e-9 * direct.max(1.0));
    assert!(
        (sol.objective - want_obj).abs() <= 1e-5 * want_obj.max(1e-3),
        "objective {} vs {want_obj}",
        sol.objective
    );
    for (a, b) in sol.w.iter().zip(&want_w) {
        assert!((a - b).abs() <= 1e-3, "w {:?} vs {want_w:?}", sol.w);
    }
    for &(j, ub) in &p.bounds {
        assert!(sol.w[j] <= ub + 1e-12);
    }
    assert!(sol.dual <= sol.objective + 1e-12);
}

#[test]
fn dual_solver_matches_qp() {
    for seed in 0..25 {
        check_against_oracle(&random_problem(seed, false));
    }
}

#[test]
fn bounded_dual_solver_matches_qp() {
    for seed in 100..125 {
        check_against_oracle(&random_problem(seed, true));
    }
}

#[test]
fn bounds_bind_when_unconstrained_optimum_violates_them() {
    // positives pull w[1] upward; the bound keeps it at -0.01
    let x = FeatureVector {
        dense: Vec::new(),
        sparse: vec![(0, 1.0), (1, 1.0)],
    };
    let p = Problem {
        dim: 2,
        positives: vec![x],
        windows: Vec::new(),
        c: 10.0,
        m: 0.5,
        bounds: vec![(1, -0.01)],
    };
    let (sol, _) = run_solver(&p);
    assert!((sol.w[1] + 0.01).abs() < 1e-9, "{:?}", sol.w);
    let (want, _) = qp_oracle(&p);
    assert!((sol.w[0] - want[0]).abs() < 1e-4);
}

#[test]
fn warm_start_reaches_the_same_optimum() {
    let p = random_problem(7, true);
    let mut cache = NegativeCache::new(p.m);
    for (g, win) in p.windows.iter().enumerate() {
        for (x, delta) in win {
            cache.push(g, x.clone(), *delta);
        }
    }
    let opts = SolverOptions {
        c: p.c,
        tolerance: 1e-10,
        max_epochs: 200_000,
        upper_bounds: p.bounds.clone(),
        ..Default::default()
    };
    let mut alpha = vec![0.0; p.positives.len()];
    let cold = solve(&p.positives, &mut alpha, &mut cache, p.dim, &opts).unwrap();
    let warm = solve(&p.positives, &mut alpha, &mut cache, p.dim, &opts).unwrap();
    assert!(warm.epochs <= cold.epochs);
    assert!((warm.objective - cold.objective).abs() <= 1e-8 * cold.objective.max(1.0));
}

#[test]
fn invalid_bound_index_is_a_config_error() {
    let p = Problem {
        bounds: vec![(99, 0.0)],
        ..random_problem(3, false)
    };
    let mut cache: NegativeCache<usize> = NegativeCache::new(0.5);
    let mut alpha = vec![0.0; p.positives.len()];
    let opts = SolverOptions {
        upper_bounds: p.bounds.clone(),
        ..Default::default()
    };
    let err = solve(&p.positives, &mut alpha, &mut cache, p.dim, &opts).unwrap_err();
    assert!(matches!(err, hpm::Error::Config(_)));
}

#[test]
fn training_logs_rounds_and_keeps_springs_concave() {
    let tmp = tempfile::tempdir().unwrap();
    let gen = PlantedGenerator::new(PlantedConfig::default()).unwrap();
    let ds = gen.write_dataset(tmp.path(), 8, 0, 2).unwrap();
    let mut run = gen.run_config();
    run.supervision.shapes = 1;
    run.training.rounds = 3;
    let manifest = DatasetManifest::load(&ds.train).unwrap();
    let sup = supervise(&manifest, &gen.reference_shapes(), &run.topology().unwrap(), &run.supervision).unwrap();
    let negatives = list_images(&ds.negatives).unwrap();
    let mut seen = Vec::new();
    let out = train(&sup, &negatives, &run.training, |log, model| {
        seen.push((log.round, model.params().to_vec()));
        Ok(())
    })
    .unwrap();
    assert_eq!(seen.len(), out.log.len());
    assert!(!out.log.is_empty() && out.log.len() <= 3);
    for (i, l) in out.log.iter().enumerate() {
        assert_eq!(l.round, i);
        assert_eq!(l.positives, 8 * 9);
        assert!(l.dual <= l.objective + 1e-9);
        assert!(l.new_constraints <= run.training.negatives_per_image * negatives.len());
    }
    assert_eq!(seen.last().unwrap().1, out.model.params());
    for i in out.model.quadratic_spring_indices() {
        assert!(out.model.params()[i] <= -run.training.spring_bound);
    }
}

#[test]
fn callback_errors_stop_training() {
    let tmp = tempfile::tempdir().unwrap();
    let gen = PlantedGenerator::new(PlantedConfig::default()).unwrap();
    let ds = gen.write_dataset(tmp.path(), 4, 0, 1).unwrap();
    let mut run = gen.run_config();
    run.supervision.shapes = 1;
    let manifest = DatasetManifest::load(&ds.train).unwrap();
    let sup = supervise(&manifest, &gen.reference_shapes(), &run.topology().unwrap(), &run.supervision).unwrap();
    let negatives = list_images(&ds.negatives).unwrap();
    let err = train(&sup, &negatives, &run.training, |_, _| Err(hpm::Error::Data("stop".into()))).unwrap_err();
    assert!(matches!(err, hpm::Error::Data(ref s) if s == "stop"));
}
