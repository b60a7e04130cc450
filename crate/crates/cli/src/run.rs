//! Translating a scenario into solver calls and result tables.

use execmm::acas::{check_lower_rate, epsilon_bound, solve_acas_with, AcasParams, EquilibriumProfile};
use execmm::approx::{assemble_concise, solve_regression_picard, ApproxParams, ConciseSystem, LsmcOptions, NoiseSdeSpec};
use execmm::execution::{check_hamiltonian_concavity, check_monotone_condition, execution_fbsde_problem, ExecGameParams};
use execmm::fbsde::{solve_fbsde_picard, PicardOptions};
use execmm::market::{
    default_probe, validate_impact_family, validate_intensity, validate_share_family, AggregateImpact, BestQuoteShare,
    IndependentShare, IntensitySpec, LogitShare, QuadraticImpact, QuoteBounds, ShareFamily, TempImpactFamily,
};
use execmm::riccati::{affine_case, audit_structure, execution_riccati_problem, solve_linear_fbsde_affine, solve_riccati_backward, AffineCase};
use execmm::verify::{
    acas_candidate, approx_candidate, approx_controls, execution_candidate, execution_rates, nash_certificate, Candidate,
    DeviationFamily, NashCertificate,
};
use execmm::{Error, FbsdeSolution};

use crate::output::{fmt_num, Table};
use crate::scenario::{AcasSection, ApproxSection, ExecMethod, ExecutionSection, GridSpec, ImpactSpec, ScenarioConfig, ShareSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Solve,
    Verify,
    ValidateClasses,
    Riccati,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Solve => "solve",
            Self::Verify => "verify",
            Self::ValidateClasses => "validate-classes",
            Self::Riccati => "riccati",
        }
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_CERTIFICATE: i32 = 3;

/// Tables produced by one command, before they hit the disk.
#[derive(Debug, Default)]
pub struct Report {
    pub exit_code: i32,
    pub partial: bool,
    pub tables: Vec<(&'static str, Table)>,
    pub diagnostics: Vec<(String, String)>,
    pub summary: Vec<String>,
}

impl Report {
    fn diag(&mut self, key: impl Into<String>, value: impl ToString) {
        self.diagnostics.push((key.into(), value.to_string()));
    }

    fn num(&mut self, key: impl Into<String>, value: f64) {
        self.diag(key, fmt_num(value));
    }

    fn fail(&mut self, stage: &str, e: &Error) {
        self.exit_code = EXIT_SOLVER;
        self.partial = true;
        self.diag("status", "solver_failure");
        self.diag("failed_stage", stage);
        self.diag("error", e);
        if let Error::NonConvergence {
            solver,
            iterations,
            residual,
            trace,
        } = e
        {
            self.diag("solver", solver);
            self.diag("iterations", iterations);
            self.num("residual", *residual);
            for (k, r) in trace.iter().enumerate() {
                self.num(format!("update_{k}"), *r);
            }
        }
        if let Error::BlowUp { time } = e {
            self.num("blowup_time", *time);
        }
        self.summary.push(format!("{stage} failed: {e}"));
    }
}

#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn execution_params(e: &ExecutionSection, grid: &GridSpec) -> ExecGameParams {
    let n = e.q0.len();
    ExecGameParams {
        horizon: grid.horizon,
        alpha: e.alpha.into(),
        beta: e.beta.into(),
        phi: e.phi.values(n).into_iter().map(Into::into).collect(),
        terminal_penalty: e.terminal_penalty.values(n),
        a: e.a.into(),
        b: e.b.into(),
        q0: e.q0.clone(),
        grid_steps: grid.steps,
    }
}

pub fn acas_params(a: &AcasSection, grid: &GridSpec) -> AcasParams {
    AcasParams {
        gamma: a.gamma,
        beta: a.beta.into(),
        phi: a.phi.into(),
        terminal_penalty: a.terminal_penalty,
        a: a.a.into(),
        b: a.b.into(),
        q0_e: a.q0_e,
        q0_m1: a.q0_m1,
        q0_m2: a.q0_m2,
        eps: a.eps.unwrap_or(0.0),
        horizon: grid.horizon,
        grid_steps: grid.steps,
    }
}

fn share_family(s: &ShareSpec, n: usize) -> Result<ShareFamily, Error> {
    Ok(match s {
        ShareSpec::Logit { varsigma, gap } => ShareFamily::new(LogitShare::symmetric(*varsigma, n)?, *gap),
        ShareSpec::Independent { gamma, gap } => ShareFamily::new(
            IndependentShare {
                intensity: IntensitySpec::Exponential { gamma: *gamma },
                n,
            },
            *gap,
        ),
        ShareSpec::BestQuote { gamma, gap } => {
            ShareFamily::new(BestQuoteShare::new(IntensitySpec::Exponential { gamma: *gamma }, n)?, *gap)
        }
    })
}

fn impact_family(s: &ImpactSpec, n: usize) -> TempImpactFamily {
    match s {
        ImpactSpec::Quadratic { beta, convexity } => {
            let beta = beta.values(n);
            let c = convexity.unwrap_or_else(|| beta.iter().copied().fold(f64::INFINITY, f64::min));
            TempImpactFamily::new(QuadraticImpact { beta }, c)
        }
        ImpactSpec::Aggregate { beta, kappa, convexity } => {
            let beta = beta.values(n);
            let c = convexity.unwrap_or_else(|| beta.iter().copied().fold(f64::INFINITY, f64::min));
            TempImpactFamily::new(AggregateImpact { beta, kappa: *kappa }, c)
        }
    }
}

pub fn approx_system(x: &ApproxSection, grid: &GridSpec) -> Result<ConciseSystem, Error> {
    let n = x.q0_e.len();
    let params = ApproxParams {
        horizon: grid.horizon,
        q0_e: x.q0_e.clone(),
        q0_m: x.q0_m.clone(),
        phi_e: x.phi_e.values(n).into_iter().map(Into::into).collect(),
        phi_m: x.phi_m.values(n).into_iter().map(Into::into).collect(),
        a_e: x.a_e.values(n),
        a_m: x.a_m.values(n),
        bounds: QuoteBounds::new(x.xi, x.xi_tilde, x.rate_floor)?,
        grid_steps: grid.steps,
    };
    let mut noise = NoiseSdeSpec::constant(n, x.noise.drift, x.noise.vol, x.noise.kappa_a, x.noise.kappa_b);
    if let Some(l0) = &x.noise.l0 {
        noise.l0 = l0.clone();
    }
    assemble_concise(params, share_family(&x.share, n)?, impact_family(&x.impact, n), noise, x.diffusion)
}

fn picard_options(cfg: &ScenarioConfig) -> PicardOptions<f64> {
    PicardOptions {
        tol: cfg.solver.tol,
        max_iterations: cfg.solver.max_iterations,
        max_depth: cfg.solver.max_depth,
        shooting: cfg.solver.shooting,
        ..Default::default()
    }
}

fn deviation_family(cfg: &ScenarioConfig) -> DeviationFamily {
    DeviationFamily {
        best_response: cfg.verify.best_response,
        scales: cfg.verify.scales.clone(),
        directions: cfg.verify.directions,
        seed: cfg.seed,
    }
}

fn solution_diagnostics(r: &mut Report, sol: &FbsdeSolution) {
    r.diag("picard_iterations", sol.picard_iterations);
    r.num("residual", sol.residual);
    r.diag("subintervals", sol.subintervals);
}

pub fn execute(cfg: &ScenarioConfig, cmd: Command) -> Result<Report, UsageError> {
    let mut r = Report::default();
    r.diag("command", cmd.name());
    r.diag("model", cfg.model.section());
    match (cmd, cfg.model.section()) {
        (Command::Riccati, "execution") => riccati(cfg, &mut r),
        (Command::Riccati, m) => {
            return Err(UsageError(format!(
                "the riccati command applies to model = \"execution\" only, not \"{m}\""
            )))
        }
        (Command::ValidateClasses, _) => validate_classes(cfg, &mut r),
        (_, "execution") => execution(cfg, cmd, &mut r),
        (_, "acas") => acas(cfg, cmd, &mut r),
        _ => approx(cfg, cmd, &mut r),
    }
    if r.exit_code == EXIT_OK {
        r.diag("status", if cmd == Command::Verify { "certified" } else { "ok" });
    }
    Ok(r)
}

fn certify(cfg: &ScenarioConfig, cand: Result<Candidate, Error>, r: &mut Report) {
    let cert = cand.and_then(|c| nash_certificate(&c, &deviation_family(cfg), cfg.verify.tol));
    match cert {
        Ok(cert) => {
            r.diag("certificate_family", cert.family.clone());
            r.num("certificate_max_relative_gap", cert.max_relative_gap());
            r.diag("certificate_status", format!("{:?}", cert.status));
            r.summary.push(format!(
                "certificate {:?}: max relative gap {:.3e} (tol {:.1e})",
                cert.status,
                cert.max_relative_gap(),
                cert.tol
            ));
            let passed = cert.passed();
            r.tables.push(("certificate.csv", certificate_table(&cert)));
            if !passed {
                r.exit_code = EXIT_CERTIFICATE;
                r.diag("status", "certificate_failure");
            }
        }
        Err(e) => r.fail("certificate", &e),
    }
}

fn certificate_table(c: &NashCertificate) -> Table {
    let mut t = Table::new(&["agent", "value", "best_response_gain", "bump_gain", "improvement", "relative_gap", "error"]);
    for a in &c.agents {
        t.push(vec![
            a.agent.clone(),
            fmt_num(a.value),
            a.best_response_gain.map(fmt_num).unwrap_or_default(),
            fmt_num(a.bump_gain),
            fmt_num(a.improvement),
            fmt_num(a.relative),
            a.error.clone().unwrap_or_default(),
        ]);
    }
    t
}

fn execution(cfg: &ScenarioConfig, cmd: Command, r: &mut Report) {
    let e = cfg.execution.as_ref().expect("checked on load");
    let p = execution_params(e, &cfg.grid);
    let use_affine = match e.method {
        ExecMethod::Affine => true,
        ExecMethod::Picard => false,
        ExecMethod::Auto => affine_case(&p).is_ok(),
    };
    let sol = if use_affine {
        r.diag("method", "affine");
        solve_linear_fbsde_affine(&p, &p.q0).map(|s| {
            if let Some(st) = &s.structure {
                r.num("riccati_max_asymmetry", st.max_asymmetry);
                r.num("riccati_max_eigenvalue", st.max_eigenvalue);
            }
            s.fbsde
        })
    } else {
        r.diag("method", "picard");
        execution_fbsde_problem(&p).and_then(|prob| solve_fbsde_picard(&execmm::FbsdeProblem { options: picard_options(cfg), ..prob }))
    };
    let sol = match sol {
        Ok(s) => s,
        Err(err) => return r.fail("solve", &err),
    };
    solution_diagnostics(r, &sol);
    let rates = match execution_rates(&p, &sol) {
        Ok(v) => v,
        Err(err) => return r.fail("rates", &err),
    };
    let n = p.n_agents();
    let mut head = vec!["time".to_string()];
    for prefix in ["Q", "Y", "v"] {
        head.extend((1..=n).map(|i| format!("{prefix}_{i}")));
    }
    let mut t = Table::from_header(head);
    for (k, time) in sol.times().iter().enumerate() {
        let mut row = vec![*time];
        row.extend(&sol.q[k]);
        row.extend(&sol.y[k]);
        row.extend(&rates[k]);
        t.push_nums(&row);
    }
    r.tables.push(("trajectory.csv", t));
    r.summary.push(format!("execution game solved on {} steps", cfg.grid.steps));
    if cmd == Command::Verify {
        certify(cfg, execution_candidate(&p, &rates, cfg.verify.p0), r);
    }
}

fn acas_table(prof: &EquilibriumProfile) -> Table {
    let mut t = Table::new(&[
        "time", "Q_m1", "Q_m2", "Q_e1", "Y_m1", "Y_m2", "Y_e1", "v_e1", "delta_a_m1", "delta_a_m2", "delta_b_m1", "delta_b_m2",
    ]);
    for k in 0..prof.times.len() {
        let mut row = vec![prof.times[k]];
        row.extend(prof.q[k]);
        row.extend(prof.y[k]);
        row.push(prof.rate[k]);
        row.extend(prof.delta_a[k]);
        row.extend(prof.delta_b[k]);
        t.push_nums(&row);
    }
    t
}

fn acas(cfg: &ScenarioConfig, cmd: Command, r: &mut Report) {
    let p = acas_params(cfg.acas.as_ref().expect("checked on load"), &cfg.grid);
    r.num("eps", p.eps);
    let sol = match solve_acas_with(&p, &picard_options(cfg)) {
        Ok(s) => s,
        Err(err) => return r.fail("solve", &err),
    };
    solution_diagnostics(r, &sol.script);
    let prof = &sol.profile;
    r.num("ordering_violation", prof.ordering_violation());
    r.num("terminal_mismatch", prof.terminal_mismatch(p.terminal_penalty));
    r.num("max_abs_y", prof.max_abs_y());
    r.diag("truncation_active", prof.truncation_active(p.eps));
    if let Ok(lr) = check_lower_rate(&p, prof) {
        r.diag("lower_rate_holds", lr.holds);
        r.num("lower_rate_margin", lr.min_margin);
    }
    r.tables.push(("trajectory.csv", acas_table(prof)));
    r.summary.push(format!("best-quote model solved on {} steps", cfg.grid.steps));
    if cmd == Command::Verify {
        certify(cfg, acas_candidate(&p, prof, cfg.verify.p0), r);
    }
}

fn approx(cfg: &ScenarioConfig, cmd: Command, r: &mut Report) {
    let x = cfg.approx.as_ref().expect("checked on load");
    let sys = match approx_system(x, &cfg.grid) {
        Ok(s) => s,
        Err(err) => return r.fail("assemble", &err),
    };
    let opts = LsmcOptions {
        paths: x.lsmc.paths,
        basis_degree: x.lsmc.degree as usize,
        max_iterations: x.lsmc.max_iterations,
        tol: x.lsmc.tol,
        ridge: x.lsmc.ridge,
        seed: cfg.seed,
    };
    let grid = match sys.params.grid() {
        Ok(g) => g,
        Err(err) => return r.fail("grid", &err),
    };
    let run = match solve_regression_picard(&sys, &grid, &opts) {
        Ok(run) => run,
        Err(err) => return r.fail("lsmc", &err),
    };
    r.diag("lsmc_iterations", run.iterations);
    r.diag("lsmc_converged", run.converged);
    r.num("lsmc_terminal_residual", run.terminal_residual);
    for (k, u) in run.update_trace.iter().enumerate() {
        r.num(format!("update_{k}"), *u);
    }
    for (i, (y, s)) in run.y0.iter().zip(&run.y0_stderr).enumerate() {
        r.num(format!("y0_{i}"), *y);
        r.num(format!("y0_stderr_{i}"), *s);
    }
    let n = sys.n();
    let mut head = vec!["time".to_string()];
    for prefix in ["L", "Q_e", "Q_m", "Y_e", "Y_m", "v", "delta_a", "delta_b"] {
        head.extend((1..=n).map(|i| format!("{prefix}_{i}")));
    }
    let mut t = Table::from_header(head);
    for (k, time) in run.mean.times().iter().enumerate() {
        let y = &run.mean.y[k];
        let c = match sys.controls(y) {
            Ok(c) => c,
            Err(err) => return r.fail("controls", &err),
        };
        let mut row = vec![*time];
        row.extend(&run.mean.q[k]);
        row.extend(&y[n..]);
        row.extend(&c.v);
        row.extend(&c.delta_a);
        row.extend(&c.delta_b);
        t.push_nums(&row);
    }
    r.tables.push(("trajectory.csv", t));
    if !run.converged {
        r.exit_code = EXIT_SOLVER;
        r.partial = true;
        r.diag("status", "solver_failure");
        r.summary.push(format!("regression Picard did not converge in {} iterations", run.iterations));
        return;
    }
    r.summary.push(format!("approximation game solved with {} paths", opts.paths));
    if cmd == Command::Verify {
        // The certificate covers the deterministic limit of the system.
        let cand = sys.deterministic_problem().and_then(|prob| {
            let det = solve_fbsde_picard(&execmm::FbsdeProblem { options: picard_options(cfg), ..prob })?;
            let controls = approx_controls(&sys, &det)?;
            let l: Vec<Vec<f64>> = det.q.iter().map(|q| q[..n].to_vec()).collect();
            approx_candidate(&sys, &l, &controls, cfg.verify.p0)
        });
        certify(cfg, cand, r);
    }
}

fn riccati(cfg: &ScenarioConfig, r: &mut Report) {
    let e = cfg.execution.as_ref().expect("checked on load");
    let p = execution_params(e, &cfg.grid);
    match affine_case(&p) {
        Ok(c) => r.diag("affine_case", format!("{c:?}")),
        Err(err) => r.diag("affine_case", err),
    }
    let sol = match execution_riccati_problem(&p).and_then(|prob| solve_riccati_backward(&prob)) {
        Ok(s) => s,
        Err(err) => return r.fail("riccati", &err),
    };
    let n = p.n_agents();
    let mut head = vec!["time".to_string()];
    for i in 1..=n {
        head.extend((1..=n).map(|j| format!("R_{i}_{j}")));
    }
    let mut t = Table::from_header(head);
    for k in sol.first..=sol.grid.steps() {
        let mut row = vec![sol.grid.time(k)];
        row.extend(sol.at(k).as_slice());
        t.push_nums(&row);
    }
    r.tables.push(("riccati.csv", t));
    if sol.blew_up {
        let err = Error::BlowUp {
            time: sol.blowup_time.unwrap_or(f64::NAN),
        };
        return r.fail("riccati", &err);
    }
    if affine_case(&p) == Ok(AffineCase::Homogeneous) {
        match audit_structure(&sol.r) {
            Ok(st) => {
                r.num("max_asymmetry", st.max_asymmetry);
                r.num("max_eigenvalue", st.max_eigenvalue);
                r.num("min_eigenvalue", st.min_eigenvalue);
            }
            Err(err) => return r.fail("structure", &err),
        }
    }
    r.num("max_norm", sol.max_norm());
    r.summary.push(format!("Riccati path on {} nodes", sol.grid.steps() + 1 - sol.first));
}

struct Checks<'a> {
    t: Table,
    ok: bool,
    r: &'a mut Report,
}

impl Checks<'_> {
    fn add(&mut self, name: &str, passed: bool, value: f64) {
        self.ok &= passed;
        self.t.push(vec![name.to_string(), passed.to_string(), fmt_num(value)]);
        if !passed {
            self.r.summary.push(format!("class check `{name}` failed (value {value:.6e})"));
        }
    }

    fn error(&mut self, name: &str, e: &Error) {
        self.ok = false;
        self.t.push(vec![name.to_string(), "false".into(), String::new()]);
        self.r.summary.push(format!("class check `{name}` failed: {e}"));
    }
}

fn validate_classes(cfg: &ScenarioConfig, r: &mut Report) {
    let mut c = Checks {
        t: Table::new(&["check", "passed", "value"]),
        ok: true,
        r,
    };
    if let Some(e) = &cfg.execution {
        let p = execution_params(e, &cfg.grid);
        match check_hamiltonian_concavity(&p) {
            Ok(rep) => c.add("hamiltonian_concavity", rep.passed, rep.worst_margin),
            Err(err) => c.error("hamiltonian_concavity", &err),
        }
        match check_monotone_condition(&p) {
            Ok(rep) => c.add("monotone_condition", rep.passed, rep.r),
            Err(err) => c.error("monotone_condition", &err),
        }
        // Informational: outside the affine case the Picard solver still applies.
        match affine_case(&p) {
            Ok(k) => c.r.diag("affine_case", format!("{k:?}")),
            Err(err) => c.r.diag("affine_case", err),
        }
    }
    if let Some(a) = &cfg.acas {
        let p = acas_params(a, &cfg.grid);
        match p.validate() {
            Ok(()) => c.add("parameters", true, 0.0),
            Err(err) => c.error("parameters", &err),
        }
        match epsilon_bound(&p) {
            Ok(b) => c.add("eps_below_bound", p.eps <= b, b),
            // Without truncation there is no bound to respect.
            Err(_) if p.eps == 0.0 => c.add("eps_below_bound", true, 0.0),
            Err(err) => c.error("eps_below_bound", &err),
        }
    }
    if let Some(x) = &cfg.approx {
        let n = x.q0_e.len();
        if let ShareSpec::Independent { gamma, .. } | ShareSpec::BestQuote { gamma, .. } = &x.share {
            let probe: Vec<f64> = (0..=200).map(|k| -5.0 * x.xi + 10.0 * x.xi * k as f64 / 200.0).collect();
            match validate_intensity(&IntensitySpec::Exponential { gamma: *gamma }, &probe) {
                Ok(rep) => c.add("intensity_class", rep.passed, rep.max_curvature_ratio),
                Err(err) => c.error("intensity_class", &err),
            }
        }
        match share_family(&x.share, n).and_then(|f| validate_share_family(&f, &default_probe(n, x.xi))) {
            Ok(rep) => c.add("share_class", rep.passed, rep.min_dominance),
            Err(err) => c.error("share_class", &err),
        }
        let imp = impact_family(&x.impact, n);
        match validate_impact_family(&imp, &default_probe(n, x.xi_tilde)) {
            Ok(rep) => c.add("impact_class", rep.passed, rep.min_dominance),
            Err(err) => c.error("impact_class", &err),
        }
        match approx_system(x, &cfg.grid) {
            Ok(_) => c.add("system_assembly", true, 0.0),
            Err(err) => c.error("system_assembly", &err),
        }
    }
    let (ok, t) = (c.ok, c.t);
    r.tables.push(("classes.csv", t));
    if ok {
        r.summary.push("all class checks pass".into());
    } else {
        r.exit_code = EXIT_CERTIFICATE;
        r.diag("status", "class_failure");
    }
}
