use std::sync::Arc;

use lobpcg_core::lobpcg::{
    solve, solve_staged, Constraints, ConvergenceMode, SolverConfig, SolverStatus,
};
use lobpcg_core::multivec::{seeded_random_fill, MultiVector};
use lobpcg_core::operators::{
    inner_pcg_preconditioner, jacobi_preconditioner, laplacian3d, shift_operator, DiagonalOperator,
    Grid3D, IdentityPreconditioner, LinearOperator, Preconditioner,
};
use lobpcg_core::problems::{dense_oracle_spectrum, exact_eigenvalues, DENSE_ORACLE_LIMIT};

fn diag(values: impl IntoIterator<Item = f64>) -> DiagonalOperator {
    DiagonalOperator::new(values.into_iter().collect()).unwrap()
}

fn assert_close(got: &[f64], want: &[f64], rel: f64) {
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(want) {
        assert!(((g - w) / w).abs() <= rel, "{got:?} vs {want:?}");
    }
}

#[test]
fn matches_dense_oracle_on_six_cube() {
    let g = Grid3D::cube(6).unwrap();
    let a = laplacian3d(g);
    let t = jacobi_preconditioner(&a).unwrap();
    let rep = solve(
        &a,
        None,
        Some(&t),
        None,
        None,
        &SolverConfig::new(5, 1e-8, 500).with_seed(2),
    )
    .unwrap();
    let dense = dense_oracle_spectrum(&a, DENSE_ORACLE_LIMIT).unwrap();
    assert_eq!(rep.status, SolverStatus::Converged);
    assert_close(rep.eigenvalues.values(), &dense[..5], 1e-8);
    assert!(rep.converged.iter().all(|&c| c));
    assert!(rep.max_residual() <= 1e-8);
}

#[test]
fn generalized_diagonal_pencil() {
    let a = diag((1..=40).map(|i| i as f64));
    let bvals: Vec<f64> = (1..=40).map(|i| 1.0 + (i % 3) as f64).collect();
    let b = diag(bvals.iter().copied());
    let mut want: Vec<f64> = (1..=40).map(|i| i as f64 / bvals[i - 1]).collect();
    want.sort_by(f64::total_cmp);
    let rep = solve(
        &a,
        Some(&b),
        None,
        None,
        None,
        &SolverConfig::new(4, 1e-9, 500),
    )
    .unwrap();
    assert!(rep.status.is_converged(), "{}", rep.status);
    assert_close(rep.eigenvalues.values(), &want[..4], 1e-10);
    let bx = b.apply(&rep.eigenvectors).unwrap();
    let e = lobpcg_core::lobpcg::orthonormality_error(&rep.eigenvectors, Some(&bx)).unwrap();
    assert!(e <= 1e-8);
}

#[test]
fn exact_preconditioner_still_needs_two_steps() {
    let a: Arc<dyn LinearOperator> = Arc::new(diag((1..=6).map(f64::from)));
    let inner: Arc<dyn Preconditioner> = Arc::new(IdentityPreconditioner::new(6));
    let t = inner_pcg_preconditioner(a.clone(), inner, 12).unwrap();
    let rep = solve(
        a.as_ref(),
        None,
        Some(&t),
        None,
        None,
        &SolverConfig::new(1, 1e-10, 50).with_seed(3),
    )
    .unwrap();
    assert!(rep.status.is_converged());
    assert!((rep.eigenvalues[0] - 1.0).abs() < 1e-12);
    assert!(
        rep.iterations_used >= 2,
        "converged in {} iterations",
        rep.iterations_used
    );
}

#[test]
fn staged_diagonal_finds_consecutive_blocks() {
    let a = diag((1..=10).map(f64::from));
    let rep = solve_staged(&a, None, None, 6, 3, &SolverConfig::new(3, 1e-9, 200)).unwrap();
    assert_eq!(rep.stages.len(), 2);
    assert_close(rep.stages[0].eigenvalues.values(), &[1.0, 2.0, 3.0], 1e-10);
    assert_close(rep.stages[1].eigenvalues.values(), &[4.0, 5.0, 6.0], 1e-10);
    assert_close(
        rep.eigenvalues.values(),
        &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        1e-10,
    );
    assert_eq!(rep.eigenvectors.ncols(), 6);
}

#[test]
fn staged_with_ragged_last_stage() {
    let g = Grid3D::new(5, 6, 7).unwrap();
    let a = laplacian3d(g);
    let t = jacobi_preconditioner(&a).unwrap();
    let rep = solve_staged(
        &a,
        None,
        Some(&t),
        7,
        3,
        &SolverConfig::new(3, 1e-8, 500).with_seed(5),
    )
    .unwrap();
    assert_eq!(rep.stages.len(), 3);
    assert_close(
        rep.eigenvalues.values(),
        &exact_eigenvalues(g, 7).unwrap(),
        1e-8,
    );
}

#[test]
fn exact_constraints_push_ritz_values_up() {
    let g = Grid3D::new(6, 7, 8).unwrap();
    let a = laplacian3d(g);
    let t = jacobi_preconditioner(&a).unwrap();
    let first = solve(
        &a,
        None,
        Some(&t),
        None,
        None,
        &SolverConfig::new(4, 1e-10, 500).with_seed(1),
    )
    .unwrap();
    let c = Constraints::new(first.eigenvectors.clone(), None).unwrap();
    let cfg = SolverConfig {
        lock_history: true,
        ..SolverConfig::new(4, 1e-8, 500).with_seed(2)
    };
    let second = solve(&a, None, Some(&t), Some(&c), None, &cfg).unwrap();
    let exact = exact_eigenvalues(g, 8).unwrap();
    for h in &second.history {
        assert!(
            h.ritz_values[0] >= exact[4] - 1e-8,
            "iteration {}: {}",
            h.iteration,
            h.ritz_values[0]
        );
    }
    assert_close(second.eigenvalues.values(), &exact[4..8], 1e-8);
}

#[test]
fn shift_invariance_with_jacobi_on_constant_diagonal() {
    let g = Grid3D::new(4, 5, 7).unwrap();
    let a: Arc<dyn LinearOperator> = Arc::new(laplacian3d(g));
    let s = shift_operator(a.clone(), None, 5.0).unwrap();
    let ta = jacobi_preconditioner(a.as_ref()).unwrap();
    let ts = jacobi_preconditioner(&s).unwrap();
    let cfg = SolverConfig::new(3, 1e-7, 300).with_seed(11);
    let p = solve(a.as_ref(), None, Some(&ta), None, None, &cfg).unwrap();
    let q = solve(&s, None, Some(&ts), None, None, &cfg).unwrap();
    assert_eq!(p.iterations_used, q.iterations_used);
    for (x, y) in p.eigenvalues.values().iter().zip(q.eigenvalues.values()) {
        assert!(((x + 5.0 - y) / y).abs() <= 1e-9);
    }
}

#[test]
fn supplied_initial_block_is_used() {
    let a = diag((1..=30).map(f64::from));
    // exact eigenvectors plus noise: should converge almost immediately
    let mut x0 = MultiVector::coordinate(30, &[0, 1]);
    x0.axpy(1e-3, &seeded_random_fill(30, 2, 4)).unwrap();
    let cfg = SolverConfig::new(2, 1e-8, 100);
    let rep = solve(&a, None, None, None, Some(&x0), &cfg).unwrap();
    let cold = solve(&a, None, None, None, None, &cfg).unwrap();
    assert!(rep.status.is_converged());
    assert!(rep.iterations_used < cold.iterations_used);
    assert!(solve(&a, None, None, None, Some(&MultiVector::zeros(30, 3)), &cfg).is_err());
}

#[test]
fn max_iter_gives_partial_result() {
    let g = Grid3D::cube(12).unwrap();
    let a = laplacian3d(g);
    let rep = solve(&a, None, None, None, None, &SolverConfig::new(4, 1e-12, 3)).unwrap();
    assert_eq!(rep.status, SolverStatus::MaxIterReached);
    assert_eq!(rep.iterations_used, 3);
    assert_eq!(rep.history.len(), 4);
    assert!(rep.converged.iter().any(|c| !c));
    let exact = exact_eigenvalues(g, 4).unwrap();
    for (v, e) in rep.eigenvalues.values().iter().zip(&exact) {
        assert!(*v >= e - 1e-8);
    }
}

#[test]
fn relative_mode_stops_earlier() {
    let a = diag((1..=200).map(|i| 100.0 * i as f64));
    let abs = SolverConfig::new(2, 1e-4, 500).with_seed(8);
    let rel = SolverConfig {
        convergence: ConvergenceMode::Relative,
        ..abs.clone()
    };
    let ra = solve(&a, None, None, None, None, &abs).unwrap();
    let rr = solve(&a, None, None, None, None, &rel).unwrap();
    assert!(ra.status.is_converged() && rr.status.is_converged());
    assert!(rr.iterations_used <= ra.iterations_used);
}

#[test]
fn history_tracks_locking() {
    let g = Grid3D::cube(8).unwrap();
    let a = laplacian3d(g);
    let t = jacobi_preconditioner(&a).unwrap();
    let cfg = SolverConfig {
        track_invariants: true,
        ..SolverConfig::new(6, 1e-7, 500).with_seed(2)
    };
    let rep = solve(&a, None, Some(&t), None, None, &cfg).unwrap();
    assert_eq!(rep.history.len(), rep.iterations_used + 1);
    let counts: Vec<usize> = rep.history.iter().map(|h| h.active_count).collect();
    assert!(counts.windows(2).all(|w| w[1] <= w[0]), "{counts:?}");
    assert_eq!(*counts.last().unwrap(), 0);
    for (j, lock) in rep.lock_iterations.iter().enumerate() {
        let l = lock.expect("every column locks");
        assert!(rep.history[l].residual_norms[j] <= 1e-7);
        assert!(!rep.history[l].active[j]);
    }
    assert!(rep
        .history
        .iter()
        .all(|h| h.b_orthonormality_error.unwrap() <= 1e-8));
}

#[test]
fn operator_errors_surface() {
    let a = diag((1..=5).map(f64::from));
    let wrong = IdentityPreconditioner::new(4);
    assert!(solve(
        &a,
        None,
        Some(&wrong),
        None,
        None,
        &SolverConfig::new(1, 1e-6, 10)
    )
    .is_err());
    assert!(solve(&a, None, None, None, None, &SolverConfig::new(6, 1e-6, 10)).is_err());
    assert!(solve(&a, None, None, None, None, &SolverConfig::new(1, 0.0, 10)).is_err());
}
