mod common;

use std::sync::Arc;
use std::time::Instant;

use common::*;
use execmm::execution::build_coeff_matrices;
use execmm::matrix::type_s_spread;
use execmm::riccati::{
    audit_structure, execution_riccati_problem, radon_closed_form, scalar_riccati, scalar_riccati_rk4,
    solve_linear_fbsde_affine, solve_riccati_backward, transform_tilde,
};
use execmm::{DenseMatrix, RiccatiProblem, TimeGrid};
use nalgebra::DMatrix;
use rand::Rng;

fn zero(n: usize) -> Arc<dyn Fn(f64) -> DenseMatrix + Send + Sync> {
    Arc::new(move |_| DenseMatrix::zeros(n))
}

#[test]
fn rk4_matches_radon_on_random_m_plus() {
    let started = Instant::now();
    let mut r = rng(100);
    let mut worst = 0.0f64;
    for k in 0..100 {
        let n = 2 + k % 2;
        let g = random_m_plus(&mut r, n);
        let a = r.random_range(1e-3..=2.0);
        let grid = TimeGrid::new(1.0, 1000).unwrap();
        let gc = g.clone();
        let prob = RiccatiProblem {
            g: zero(n),
            d: Arc::new(move |_| gc.clone()),
            e: zero(n),
            f: zero(n),
            terminal: DenseMatrix::identity(n).scale(-2.0 * a),
            grid,
        };
        let rk = solve_riccati_backward(&prob).unwrap();
        assert!(!rk.blew_up);
        let radon = radon_closed_form(&|_| g.clone(), a, grid).unwrap();
        let diff = (rk.initial() - radon.initial()).max_abs();
        // independent closed form at t = 0
        let oracle = (DMatrix::identity(n, n) + to_na(&g) * (2.0 * a)).try_inverse().unwrap() * (-2.0 * a);
        assert!(max_diff(radon.initial(), &oracle) < 1e-12);
        worst = worst.max(diff);
    }
    assert!(worst <= 1e-7, "worst RK4/Radon gap {worst}");
    assert!(started.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn radon_rejects_non_m_plus() {
    let g = DenseMatrix::from_rows(&[vec![1.0, 0.5], vec![0.5, 1.0]]).unwrap();
    let grid = TimeGrid::new(1.0, 10).unwrap();
    assert!(radon_closed_form(&|_| g.clone(), 1.0, grid).is_err());
}

#[test]
fn scalar_riccati_closed_form_and_rk4_agree() {
    let grid = TimeGrid::new(2.0, 400).unwrap();
    let ell = |t: f64| 1.0 + 0.5 * t.sin();
    let closed = scalar_riccati(&ell, 0.7, grid).unwrap();
    let rk = scalar_riccati_rk4(&ell, 0.7, grid).unwrap();
    for (a, b) in closed.iter().zip(&rk) {
        assert!((a - b).abs() < 1e-9);
    }
    // constant ℓ: ϱ(0) = −1/(1/(2A) + ℓT)
    let flat = scalar_riccati(&|_| 1.0, 0.7, grid).unwrap();
    assert!((flat[0] + 1.0 / (1.0 / 1.4 + 2.0)).abs() < 1e-12);
}

#[test]
fn homogeneous_riccati_is_symmetric_nsd_and_type_s_after_transform() {
    let mut r = rng(200);
    for case in 0..50 {
        let p = random_homogeneous(&mut r);
        let prob = execution_riccati_problem(&p).unwrap();
        let sol = solve_riccati_backward(&prob).unwrap();
        assert!(!sol.blew_up, "case {case}");
        let audit = audit_structure(&sol.r).unwrap();
        let norm = sol.max_norm();
        assert!(audit.max_asymmetry <= 1e-9, "case {case}: asymmetry {}", audit.max_asymmetry);
        assert!(audit.max_eigenvalue <= 1e-9, "case {case}: eigenvalue {}", audit.max_eigenvalue);
        assert!(audit.min_eigenvalue >= -norm - 1e-12);
        let tilde = transform_tilde(&sol, &*prob.e, &*prob.f).unwrap();
        for (k, m) in tilde.iter().enumerate() {
            let (sd, so) = type_s_spread(m);
            assert!(so <= 1e-9 && sd <= 1e-9, "case {case} node {k}: spread {sd} {so}");
        }
        let aff = solve_linear_fbsde_affine(&p, &p.q0).unwrap();
        assert!(aff.structure.unwrap().symmetric_nsd(1e-9));
    }
}

#[test]
fn no_permanent_impact_riccati_matches_scalar_oracle_for_one_trader() {
    // N = 1, α = 0: dR = 2φ − R²/(2β), R(T) = −2A
    let mut p = execmm::execution::ExecGameParams::constant(1, 1.0, 0.0, 0.5, 0.0, 1.5);
    p.grid_steps = 200;
    let sol = solve_riccati_backward(&execution_riccati_problem(&p).unwrap()).unwrap();
    let d = build_coeff_matrices(&p, 0.0).unwrap().d.expand()[(0, 0)];
    let grid = p.grid().unwrap();
    let oracle = scalar_riccati(&|_| d, 1.5, grid).unwrap();
    for k in 0..=200 {
        assert!((sol.at(k)[(0, 0)] - oracle[k]).abs() < 1e-8, "{k}: {} vs {}", sol.at(k)[(0, 0)], oracle[k]);
    }
}
