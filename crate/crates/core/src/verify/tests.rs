use super::*;
use crate::acas::{solve_acas, AcasParams};
use crate::approx::tests_support::one_by_one;
use crate::execution::ExecGameParams;
use crate::grid::Grid;
use crate::riccati::solve_linear_fbsde_affine;

fn exec_game() -> ExecGameParams {
    let mut p = ExecGameParams::constant(2, 1.0, 0.5, 1.0, 0.5, 1.0);
    p.q0 = vec![-1.0, 0.5];
    p.a = 0.2.into();
    p.b = 0.4.into();
    p
}

fn exec_equilibrium(p: &ExecGameParams) -> Candidate {
    let sol = solve_linear_fbsde_affine(p, &p.q0).unwrap();
    let rates = execution_rates(p, &sol.fbsde).unwrap();
    execution_candidate(p, &rates, 0.0).unwrap()
}

fn acas_game() -> AcasParams {
    let mut p = AcasParams::constant(1.0, 0.5, 0.5, -3.0, 0.5, -0.5, 1.0);
    p.grid_steps = 200;
    p.a = 0.3.into();
    p.b = 0.4.into();
    p.with_default_eps().unwrap()
}

#[test]
fn idle_trader_keeps_initial_value() {
    let mut p = ExecGameParams::constant(1, 1.0, 0.0, 1.0, 0.0, 0.0);
    p.q0 = vec![-2.0];
    let c = execution_candidate(&p, &vec![vec![0.0]; p.grid_steps + 1], 1.5).unwrap();
    let r = evaluate(c.agents[0].as_ref(), &c.controls[0]).unwrap();
    assert_eq!(r.value, -3.0);
}

#[test]
fn constant_rate_against_constant_quote() {
    let mut p = AcasParams::constant(1.0, 2.0, 0.0, -1.0, 0.0, 0.0, 2.0);
    p.grid_steps = 40;
    let mut prof = solve_acas(&AcasParams { eps: 0.0, ..p.clone() }).unwrap().profile;
    prof.rate.iter_mut().for_each(|v| *v = 0.3);
    prof.delta_a.iter_mut().for_each(|d| *d = [0.7, 0.9]);
    let c = acas_candidate(&p, &prof, 0.0).unwrap();
    let r = evaluate(c.agents[2].as_ref(), &c.controls[2]).unwrap();
    let want = -2.0 * (0.7 * 0.3 + 2.0 * 0.09);
    assert!((r.value - want).abs() < 1e-13, "{} vs {want}", r.value);
    assert!((r.value - r.breakdown.total()).abs() <= 1e-10);
}

#[test]
fn makers_without_flow_only_pay_penalties() {
    let mut p = AcasParams::constant(1.0, 1.0, 0.7, -1.0, 0.4, 0.1, 1.0);
    p.grid_steps = 20;
    let mut prof = solve_acas(&p).unwrap().profile;
    prof.rate.iter_mut().for_each(|v| *v = 0.0);
    let c = acas_candidate(&p, &prof, 0.0).unwrap();
    for i in 0..2 {
        let r = evaluate(c.agents[i].as_ref(), &c.controls[i]).unwrap();
        assert_eq!(r.breakdown.quote_revenue, 0.0);
        assert!((r.value + 0.7 * [0.4f64, 0.1][i].powi(2)).abs() < 1e-15);
    }
}

#[test]
fn identical_quotes_split_nothing() {
    // Λ(0) = 1: each maker books δ(ã + b̃) per unit time.
    let mut p = AcasParams::constant(2.0, 1.0, 0.0, -1.0, 0.0, 0.0, 1.0);
    p.a = 0.3.into();
    p.b = 0.5.into();
    p.grid_steps = 10;
    let mut prof = solve_acas(&p).unwrap().profile;
    prof.rate.iter_mut().for_each(|v| *v = 0.2);
    prof.delta_a.iter_mut().for_each(|d| *d = [0.4, 0.4]);
    prof.delta_b.iter_mut().for_each(|d| *d = [0.4, 0.4]);
    let c = acas_candidate(&p, &prof, 0.0).unwrap();
    for i in 0..2 {
        let r = evaluate(c.agents[i].as_ref(), &c.controls[i]).unwrap();
        assert!((r.breakdown.quote_revenue - 0.4 * (0.5 + 0.5)).abs() < 1e-14);
    }
}

#[test]
fn single_agent_analytic_optimum() {
    // max −∫βv² − A(q0 + ∫v)² is attained at the constant v = −Aq0/(β + AT).
    let mut p = ExecGameParams::constant(1, 1.0, 0.0, 2.0, 0.0, 1.0);
    p.q0 = vec![-1.0];
    p.grid_steps = 50;
    let v = 1.0 / 3.0;
    let c = execution_candidate(&p, &vec![vec![v]; 51], 0.0).unwrap();
    let cert = nash_certificate(&c, &DeviationFamily::default(), 1e-8).unwrap();
    assert!(cert.passed(), "{cert:?}");
    assert!(cert.agents[0].improvement <= 1e-8);
    let want = -(2.0 * v * v + (1.0 - v) * (1.0 - v));
    assert!((cert.agents[0].value - want).abs() < 1e-14);
}

#[test]
fn affine_equilibrium_is_certified() {
    let p = exec_game();
    let c = exec_equilibrium(&p);
    let cert = nash_certificate(&c, &DeviationFamily::default(), 1e-4).unwrap();
    assert!(cert.passed(), "{cert:#?}");
    assert!(cert.agents.iter().all(|a| a.best_response_gain.is_some()));
}

#[test]
fn scaled_trader_is_caught() {
    let p = exec_game();
    let sol = solve_linear_fbsde_affine(&p, &p.q0).unwrap();
    let mut rates = execution_rates(&p, &sol.fbsde).unwrap();
    rates.iter_mut().for_each(|r| r[0] *= 1.2);
    let c = execution_candidate(&p, &rates, 0.0).unwrap();
    let cert = nash_certificate(&c, &DeviationFamily::default(), 1e-4).unwrap();
    assert_eq!(cert.status, CertificateStatus::Fail);
    assert!(cert.agents[0].improvement > 0.0);
}

#[test]
fn best_quote_equilibrium_is_certified() {
    let p = acas_game();
    let prof = solve_acas(&p).unwrap().profile;
    let c = acas_candidate(&p, &prof, 0.0).unwrap();
    let cert = nash_certificate(&c, &DeviationFamily::default(), 1e-4).unwrap();
    assert!(cert.passed(), "{cert:#?}");
    let mut scaled = prof.clone();
    scaled.rate.iter_mut().for_each(|v| *v *= 1.2);
    let c = acas_candidate(&p, &scaled, 0.0).unwrap();
    let cert = nash_certificate(&c, &DeviationFamily::default(), 1e-4).unwrap();
    assert!(!cert.passed());
    assert!(cert.agents[2].improvement > 0.0);
}

#[test]
fn shifting_quotes_up_hurts_the_maker() {
    let p = acas_game();
    let prof = solve_acas(&p).unwrap().profile;
    let c = acas_candidate(&p, &prof, 0.0).unwrap();
    for i in 0..2 {
        let base = evaluate(c.agents[i].as_ref(), &c.controls[i]).unwrap().value;
        let up: Vec<Vec<f64>> = c.controls[i].iter().map(|u| u.iter().map(|d| 1.1 * d).collect()).collect();
        assert!(evaluate(c.agents[i].as_ref(), &up).unwrap().value < base);
    }
}

#[test]
fn best_quote_values_stable_under_step_halving() {
    let mut p = acas_game();
    let coarse: Vec<f64> = {
        let prof = solve_acas(&p).unwrap().profile;
        acas_candidate(&p, &prof, 0.0).unwrap().objectives().unwrap().iter().map(|r| r.value).collect()
    };
    p.grid_steps *= 2;
    let prof = solve_acas(&p).unwrap().profile;
    let fine = acas_candidate(&p, &prof, 0.0).unwrap().objectives().unwrap();
    for (a, b) in coarse.iter().zip(&fine) {
        assert!((a - b.value).abs() < 1e-6, "{a} vs {}", b.value);
    }
}

#[test]
fn approximation_game_deterministic_limit_is_certified() {
    let s = one_by_one(0.01);
    let det = solve_fbsde_picard(&s.deterministic_problem().unwrap()).unwrap();
    let controls = approx_controls(&s, &det).unwrap();
    let l: Vec<Vec<f64>> = det.q.iter().map(|x| x[..1].to_vec()).collect();
    let c = approx_candidate(&s, &l, &controls, 0.0).unwrap();
    let cert = nash_certificate(&c, &DeviationFamily::default(), 1e-4).unwrap();
    assert!(cert.passed(), "{cert:#?}");
}

#[test]
fn richer_families_never_find_less() {
    let p = exec_game();
    let sol = solve_linear_fbsde_affine(&p, &p.q0).unwrap();
    let mut rates = execution_rates(&p, &sol.fbsde).unwrap();
    rates.iter_mut().for_each(|r| r[1] *= 0.9);
    let c = execution_candidate(&p, &rates, 0.0).unwrap();
    let small = DeviationFamily {
        best_response: false,
        directions: 3,
        ..Default::default()
    };
    let big = DeviationFamily {
        directions: 10,
        ..small.clone()
    };
    let full = DeviationFamily::default();
    let gains: Vec<f64> = [small, big, full]
        .iter()
        .map(|f| nash_certificate(&c, f, 1e-4).unwrap().agents[1].improvement)
        .collect();
    assert!(gains[0] <= gains[1] && gains[1] <= gains[2], "{gains:?}");
}

#[test]
fn refinement_keeps_the_certificate() {
    let mut p = exec_game();
    p.grid_steps = 50;
    let a = nash_certificate(&exec_equilibrium(&p), &DeviationFamily::default(), 1e-4).unwrap();
    p.grid_steps = 100;
    let b = nash_certificate(&exec_equilibrium(&p), &DeviationFamily::default(), 1e-4).unwrap();
    assert!(a.passed() && b.passed());
    assert!(b.max_relative_gap() <= a.max_relative_gap() + 1e-6);
}

#[test]
fn mismatched_controls_are_rejected() {
    let p = exec_game();
    let c = exec_equilibrium(&p);
    assert!(matches!(evaluate(c.agents[0].as_ref(), &c.controls[0][1..]), Err(Error::GridMismatch(_))));
}

#[test]
fn bump_kernel_is_a_partition_of_unity() {
    let s: f64 = (-3..=3).map(|j| bump(0.3 - j as f64)).sum();
    assert!((s - 1.0).abs() < 1e-15);
    let g = Grid::new(1.0, 10).unwrap();
    assert_eq!(g.steps(), 10);
}
