mod common;

use common::*;
use execmm::execution::{execution_fbsde_problem, ExecGameParams};
use execmm::fbsde::solve_fbsde_picard;
use execmm::riccati::solve_linear_fbsde_affine;
use execmm::{FbsdeProblem, TimeGrid};
use rand::Rng;

fn sup_gap(p: &ExecGameParams) -> f64 {
    let aff = solve_linear_fbsde_affine(p, &p.q0).unwrap();
    let pic = solve_fbsde_picard(&execution_fbsde_problem(p).unwrap()).unwrap();
    pic.distance(&aff.fbsde)
}

#[test]
fn picard_agrees_with_affine_on_homogeneous_games() {
    let mut r = rng(300);
    for case in 0..20 {
        let mut p = random_homogeneous(&mut r);
        p.a = r.random_range(0.0..1.0).into();
        p.b = r.random_range(0.0..1.0).into();
        let gap = sup_gap(&p);
        assert!(gap <= 1e-6, "case {case}: {gap}");
    }
}

#[test]
fn picard_agrees_with_affine_without_permanent_impact() {
    let mut r = rng(301);
    for case in 0..20 {
        let n = r.random_range(1..=4);
        let mut p = ExecGameParams::constant(n, r.random_range(0.5..2.0), 0.0, r.random_range(0.2..2.0), 0.0, 0.0);
        p.phi = (0..n).map(|_| r.random_range(0.0..1.0).into()).collect();
        p.terminal_penalty = (0..n).map(|_| r.random_range(0.05..2.0)).collect();
        p.q0 = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
        p.a = r.random_range(0.0..1.0).into();
        p.grid_steps = 100;
        let gap = sup_gap(&p);
        assert!(gap <= 1e-6, "case {case}: {gap}");
    }
}

#[test]
fn picard_agrees_with_time_varying_coefficients() {
    let mut p = ExecGameParams::constant(3, 1.0, 0.0, 1.0, 0.0, 0.5);
    p.alpha = execmm::TimeFn::func(|t| 0.5 + 0.3 * t);
    p.beta = execmm::TimeFn::func(|t| 1.0 + 0.5 * (3.0 * t).sin().abs());
    p.phi = vec![1.0.into(); 3];
    p.a = execmm::TimeFn::func(|t| 0.4 * t);
    p.q0 = vec![-1.0, 0.5, 2.0];
    p.grid_steps = 200;
    let gap = sup_gap(&p);
    assert!(gap <= 1e-6, "{gap}");
}

#[test]
fn scalar_linear_fbsde_matches_closed_form() {
    // dQ = Y dt, dY = 0, Y_T = −2Q_T ⇒ Y ≡ −2q0/(1 + 2T), Q linear
    let grid = TimeGrid::new(1.0, 50).unwrap();
    let prob = FbsdeProblem::new(
        |_, _q: &[f64], y: &[f64]| y.to_vec(),
        |_, q: &[f64], _y: &[f64]| vec![0.0; q.len()],
        |q: &[f64]| q.iter().map(|x| -2.0 * x).collect(),
        vec![3.0],
        grid,
    );
    let sol = solve_fbsde_picard(&prob).unwrap();
    let y = -2.0 * 3.0 / 3.0;
    for (k, t) in grid.times().into_iter().enumerate() {
        assert!((sol.y[k][0] - y).abs() < 1e-9);
        assert!((sol.q[k][0] - (3.0 + y * t)).abs() < 1e-9);
    }
}

#[test]
fn long_horizon_needs_continuation_and_still_agrees() {
    let mut p = ExecGameParams::constant(2, 8.0, 0.3, 0.5, 0.5, 2.0);
    p.q0 = vec![-1.0, 1.5];
    p.grid_steps = 400;
    let pic = solve_fbsde_picard(&execution_fbsde_problem(&p).unwrap()).unwrap();
    let aff = solve_linear_fbsde_affine(&p, &p.q0).unwrap();
    assert!(pic.distance(&aff.fbsde) <= 1e-6, "{}", pic.distance(&aff.fbsde));
}
