//! Scenario files: a TOML document with one section per model plus solver
//! and certificate settings. Loading collects every schema and range
//! violation before giving up.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Execution,
    Acas,
    Approx,
}

impl ModelKind {
    pub fn section(self) -> &'static str {
        match self {
            Self::Execution => "execution",
            Self::Acas => "acas",
            Self::Approx => "approx",
        }
    }
}

/// A scalar broadcast to every agent, or one value per agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerAgent {
    One(f64),
    Many(Vec<f64>),
}

impl PerAgent {
    pub fn values(&self, n: usize) -> Vec<f64> {
        match self {
            Self::One(x) => vec![*x; n],
            Self::Many(v) => v.clone(),
        }
    }

    fn len_ok(&self, n: usize) -> bool {
        matches!(self, Self::One(_)) || matches!(self, Self::Many(v) if v.len() == n)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub horizon: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
}

fn default_steps() -> usize {
    200
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMethod {
    /// Riccati decoupling when the parameters allow it, Picard otherwise.
    #[default]
    Auto,
    Affine,
    Picard,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutionSection {
    #[serde(default)]
    pub alpha: f64,
    pub beta: f64,
    #[serde(default = "zero_per_agent")]
    pub phi: PerAgent,
    pub terminal_penalty: PerAgent,
    #[serde(default)]
    pub a: f64,
    #[serde(default)]
    pub b: f64,
    pub q0: Vec<f64>,
    #[serde(default)]
    pub method: ExecMethod,
}

fn zero_per_agent() -> PerAgent {
    PerAgent::One(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcasSection {
    pub gamma: f64,
    pub beta: f64,
    #[serde(default)]
    pub phi: f64,
    pub terminal_penalty: f64,
    #[serde(default)]
    pub a: f64,
    #[serde(default)]
    pub b: f64,
    pub q0_e: f64,
    pub q0_m1: f64,
    pub q0_m2: f64,
    /// Lower rate truncation; defaults to half the provable bound when the
    /// inventory condition holds and to zero otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShareSpec {
    Logit {
        varsigma: f64,
        #[serde(default = "default_gap")]
        gap: f64,
    },
    Independent {
        gamma: f64,
        #[serde(default = "default_gap")]
        gap: f64,
    },
    BestQuote {
        gamma: f64,
        #[serde(default = "default_gap")]
        gap: f64,
    },
}

fn default_gap() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ImpactSpec {
    Quadratic {
        beta: PerAgent,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        convexity: Option<f64>,
    },
    Aggregate {
        beta: PerAgent,
        kappa: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        convexity: Option<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(default)]
    pub drift: f64,
    pub vol: f64,
    #[serde(default = "one")]
    pub kappa_a: f64,
    #[serde(default = "one")]
    pub kappa_b: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l0: Option<Vec<f64>>,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LsmcSection {
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default = "default_degree")]
    pub degree: u32,
    #[serde(default = "default_lsmc_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_lsmc_tol")]
    pub tol: f64,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
}

fn default_paths() -> usize {
    20_000
}
fn default_degree() -> u32 {
    3
}
fn default_lsmc_iterations() -> usize {
    30
}
fn default_lsmc_tol() -> f64 {
    1e-4
}
fn default_ridge() -> f64 {
    1e-8
}

impl Default for LsmcSection {
    fn default() -> Self {
        Self {
            paths: default_paths(),
            degree: default_degree(),
            max_iterations: default_lsmc_iterations(),
            tol: default_lsmc_tol(),
            ridge: default_ridge(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApproxSection {
    pub q0_e: Vec<f64>,
    pub q0_m: Vec<f64>,
    #[serde(default = "zero_per_agent")]
    pub phi_e: PerAgent,
    #[serde(default = "zero_per_agent")]
    pub phi_m: PerAgent,
    pub a_e: PerAgent,
    pub a_m: PerAgent,
    pub xi: f64,
    pub xi_tilde: f64,
    /// Smallest admissible trading rate.
    pub rate_floor: f64,
    /// Inventory diffusion scale ε.
    pub diffusion: f64,
    pub share: ShareSpec,
    pub impact: ImpactSpec,
    pub noise: NoiseSection,
    #[serde(default)]
    pub lsmc: LsmcSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_depth")]
    pub max_depth: u32,
    #[serde(default = "yes")]
    pub shooting: bool,
}

fn default_max_iterations() -> usize {
    500
}
fn default_tol() -> f64 {
    1e-10
}
fn default_depth() -> u32 {
    12
}
fn yes() -> bool {
    true
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            max_iterations: default_max_iterations(),
            tol: default_tol(),
            max_depth: default_depth(),
            shooting: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    #[serde(default = "default_cert_tol")]
    pub tol: f64,
    #[serde(default = "default_directions")]
    pub directions: usize,
    #[serde(default = "default_scales")]
    pub scales: Vec<f64>,
    #[serde(default = "yes")]
    pub best_response: bool,
    /// Reference price at time zero.
    #[serde(default)]
    pub p0: f64,
}

fn default_cert_tol() -> f64 {
    1e-4
}
fn default_directions() -> usize {
    10
}
fn default_scales() -> Vec<f64> {
    vec![1e-3, 3e-3, 1e-2, 3e-2, 1e-1]
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            tol: default_cert_tol(),
            directions: default_directions(),
            scales: default_scales(),
            best_response: true,
            p0: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: ModelKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub grid: GridSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub execution: Option<ExecutionSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acas: Option<AcasSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub approx: Option<ApproxSection>,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub verify: VerifySection,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub key: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

#[derive(Debug)]
pub enum ScenarioError {
    Io { path: PathBuf, source: std::io::Error },
    Parse { line: usize, column: usize, message: String },
    Invalid(Vec<Violation>),
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Io { path, source } => write!(f, "cannot read {}: {source}", path.display()),
            Self::Parse { line, column, message } => write!(f, "parse error at line {line}, column {column}: {message}"),
            Self::Invalid(v) => {
                writeln!(f, "{} scenario violation(s):", v.len())?;
                for x in v {
                    writeln!(f, "  {x}")?;
                }
                Ok(())
            }
        }
    }
}

impl std::error::Error for ScenarioError {}

/// Accepted keys per table; `*` marks tables whose keys depend on a `kind`.
const SCHEMA: &[(&str, &[&str])] = &[
    ("", &["model", "seed", "out_dir", "grid", "execution", "acas", "approx", "solver", "verify"]),
    ("grid", &["horizon", "steps"]),
    ("execution", &["alpha", "beta", "phi", "terminal_penalty", "a", "b", "q0", "method"]),
    (
        "acas",
        &["gamma", "beta", "phi", "terminal_penalty", "a", "b", "q0_e", "q0_m1", "q0_m2", "eps"],
    ),
    (
        "approx",
        &[
            "q0_e", "q0_m", "phi_e", "phi_m", "a_e", "a_m", "xi", "xi_tilde", "rate_floor", "diffusion", "share",
            "impact", "noise", "lsmc",
        ],
    ),
    ("approx.share", &["kind", "varsigma", "gamma", "gap"]),
    ("approx.impact", &["kind", "beta", "kappa", "convexity"]),
    ("approx.noise", &["drift", "vol", "kappa_a", "kappa_b", "l0"]),
    ("approx.lsmc", &["paths", "degree", "max_iterations", "tol", "ridge"]),
    ("solver", &["max_iterations", "tol", "max_depth", "shooting"]),
    ("verify", &["tol", "directions", "scales", "best_response", "p0"]),
];

fn known_keys(path: &str) -> Option<&'static [&'static str]> {
    SCHEMA.iter().find(|(p, _)| *p == path).map(|(_, k)| *k)
}

fn nearest(key: &str, options: &[&str]) -> Option<String> {
    options
        .iter()
        .map(|o| (strsim::normalized_damerau_levenshtein(key, o), *o))
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .filter(|(score, _)| *score > 0.3)
        .map(|(_, o)| o.to_string())
}

fn unknown_keys(table: &toml::Table, path: &str, out: &mut Vec<Violation>) {
    let Some(keys) = known_keys(path) else { return };
    for (k, v) in table {
        let full = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
        if !keys.contains(&k.as_str()) {
            let hint = nearest(k, keys).map(|s| format!("; did you mean `{s}`?")).unwrap_or_default();
            out.push(Violation {
                key: full,
                message: format!("unknown key{hint}"),
            });
        } else if let toml::Value::Table(t) = v {
            unknown_keys(t, &full, out);
        }
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map(|i| i + 1).unwrap_or(0) + 1;
    (line, column)
}

fn parse_error(text: &str, e: &toml::de::Error) -> ScenarioError {
    let (line, column) = e.span().map(|s| line_col(text, s.start)).unwrap_or((0, 0));
    ScenarioError::Parse {
        line,
        column,
        message: e.message().to_string(),
    }
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario(&text)
}

/// Parses, rejects unknown keys, fills defaults and range-checks.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    let table: toml::Table = toml::from_str(text).map_err(|e| parse_error(text, &e))?;
    let mut violations = Vec::new();
    unknown_keys(&table, "", &mut violations);
    if !violations.is_empty() {
        return Err(ScenarioError::Invalid(violations));
    }
    let mut cfg: ScenarioConfig = toml::from_str(text).map_err(|e| parse_error(text, &e))?;
    let violations = check_ranges(&cfg);
    if !violations.is_empty() {
        return Err(ScenarioError::Invalid(violations));
    }
    fill_defaults(&mut cfg);
    Ok(cfg)
}

impl ScenarioConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }
}

struct Checker {
    out: Vec<Violation>,
}

impl Checker {
    fn fail(&mut self, key: &str, message: impl Into<String>) {
        self.out.push(Violation {
            key: key.to_string(),
            message: message.into(),
        });
    }

    fn require(&mut self, ok: bool, key: &str, message: &str) {
        if !ok {
            self.fail(key, message);
        }
    }

    fn positive(&mut self, x: f64, key: &str, module: &str) {
        self.require(x > 0.0 && x.is_finite(), key, &format!("must be positive ({module} precondition)"));
    }

    fn non_negative(&mut self, x: f64, key: &str, module: &str) {
        self.require(x >= 0.0 && x.is_finite(), key, &format!("must be non-negative ({module} precondition)"));
    }

    fn per_agent(&mut self, v: &PerAgent, n: usize, key: &str, module: &str) {
        if !v.len_ok(n) {
            self.fail(key, format!("needs one value or {n} values ({module} precondition)"));
        }
        for x in v.values(1.max(n)) {
            self.non_negative(x, key, module);
        }
    }
}

fn check_ranges(cfg: &ScenarioConfig) -> Vec<Violation> {
    let mut c = Checker { out: Vec::new() };
    c.positive(cfg.grid.horizon, "grid.horizon", "grid");
    c.require(cfg.grid.steps >= 1, "grid.steps", "must be at least 1");
    let section = cfg.model.section();
    let present = [
        ("execution", cfg.execution.is_some()),
        ("acas", cfg.acas.is_some()),
        ("approx", cfg.approx.is_some()),
    ];
    for (name, has) in present {
        if name == section && !has {
            c.fail(name, format!("section is required for model = \"{section}\""));
        } else if name != section && has {
            c.fail(name, format!("section does not apply to model = \"{section}\""));
        }
    }
    if let Some(e) = &cfg.execution {
        let m = "execution_game";
        let n = e.q0.len();
        c.require(n >= 1, "execution.q0", "needs at least one trader (execution_game precondition)");
        c.non_negative(e.alpha, "execution.alpha", m);
        c.positive(e.beta, "execution.beta", m);
        c.per_agent(&e.phi, n, "execution.phi", m);
        c.per_agent(&e.terminal_penalty, n, "execution.terminal_penalty", m);
        c.non_negative(e.a, "execution.a", m);
        c.non_negative(e.b, "execution.b", m);
    }
    if let Some(a) = &cfg.acas {
        let m = "acas_model";
        c.positive(a.gamma, "acas.gamma", m);
        c.positive(a.beta, "acas.beta", m);
        c.non_negative(a.phi, "acas.phi", m);
        c.non_negative(a.terminal_penalty, "acas.terminal_penalty", m);
        c.non_negative(a.a, "acas.a", m);
        c.non_negative(a.b, "acas.b", m);
        c.require(a.q0_e < 0.0, "acas.q0_e", "the trader must start short (acas_model precondition)");
        c.require(a.q0_m1 >= a.q0_m2, "acas.q0_m1", "makers must satisfy q0_m1 ≥ q0_m2 (acas_model precondition)");
        if let Some(eps) = a.eps {
            c.non_negative(eps, "acas.eps", m);
        }
    }
    if let Some(x) = &cfg.approx {
        let m = "approx_game";
        let n = x.q0_e.len();
        c.require(n >= 1, "approx.q0_e", "needs at least one trader (approx_game precondition)");
        c.require(x.q0_m.len() == n, "approx.q0_m", "needs as many makers as traders (approx_game precondition)");
        c.require(
            x.q0_e.iter().all(|q| *q != 0.0),
            "approx.q0_e",
            "initial trader inventories must be non-zero (approx_game precondition)",
        );
        for (v, k) in [(&x.phi_e, "approx.phi_e"), (&x.phi_m, "approx.phi_m"), (&x.a_e, "approx.a_e"), (&x.a_m, "approx.a_m")] {
            c.per_agent(v, n, k, m);
        }
        c.positive(x.xi, "approx.xi", m);
        c.positive(x.xi_tilde, "approx.xi_tilde", m);
        c.positive(x.rate_floor, "approx.rate_floor", m);
        c.require(x.rate_floor < x.xi_tilde, "approx.rate_floor", "must be below xi_tilde (approx_game precondition)");
        c.positive(x.diffusion, "approx.diffusion", m);
        match &x.share {
            ShareSpec::Logit { varsigma, gap } => {
                c.positive(*varsigma, "approx.share.varsigma", "market_making");
                c.positive(*gap, "approx.share.gap", "market_making");
            }
            ShareSpec::Independent { gamma, gap } | ShareSpec::BestQuote { gamma, gap } => {
                c.positive(*gamma, "approx.share.gamma", "market_making");
                c.positive(*gap, "approx.share.gap", "market_making");
            }
        }
        match &x.impact {
            ImpactSpec::Quadratic { beta, convexity } | ImpactSpec::Aggregate { beta, convexity, .. } => {
                c.require(beta.len_ok(n), "approx.impact.beta", "needs one value or one per trader");
                for b in beta.values(n.max(1)) {
                    c.positive(b, "approx.impact.beta", "market_making");
                }
                if let Some(s) = convexity {
                    c.positive(*s, "approx.impact.convexity", "market_making");
                }
            }
        }
        if let ImpactSpec::Aggregate { kappa, .. } = &x.impact {
            c.require(kappa.abs() < 2.0, "approx.impact.kappa", "needs |kappa| < 2 (market_making precondition)");
        }
        c.positive(x.noise.vol, "approx.noise.vol", m);
        c.positive(x.noise.kappa_a, "approx.noise.kappa_a", m);
        c.positive(x.noise.kappa_b, "approx.noise.kappa_b", m);
        if let Some(l0) = &x.noise.l0 {
            c.require(l0.len() == n, "approx.noise.l0", "needs one value per trader");
        }
        c.require(x.lsmc.paths >= 1, "approx.lsmc.paths", "must be at least 1");
        c.require(x.lsmc.degree <= 6, "approx.lsmc.degree", "must be at most 6");
        c.require(x.lsmc.max_iterations >= 1, "approx.lsmc.max_iterations", "must be at least 1");
        c.positive(x.lsmc.tol, "approx.lsmc.tol", m);
        c.non_negative(x.lsmc.ridge, "approx.lsmc.ridge", m);
    }
    c.require(cfg.solver.max_iterations >= 1, "solver.max_iterations", "must be at least 1");
    c.positive(cfg.solver.tol, "solver.tol", "riccati_fbsde");
    c.positive(cfg.verify.tol, "verify.tol", "verify");
    c.require(cfg.verify.directions >= 1, "verify.directions", "must be at least 1");
    c.require(!cfg.verify.scales.is_empty(), "verify.scales", "needs at least one scale");
    for s in &cfg.verify.scales {
        c.positive(*s, "verify.scales", "verify");
    }
    c.out
}

fn fill_defaults(cfg: &mut ScenarioConfig) {
    if let Some(e) = &mut cfg.execution {
        let n = e.q0.len();
        e.phi = PerAgent::Many(e.phi.values(n));
        e.terminal_penalty = PerAgent::Many(e.terminal_penalty.values(n));
    }
    if let Some(a) = &mut cfg.acas {
        if a.eps.is_none() {
            let p = crate::run::acas_params(a, &cfg.grid);
            a.eps = Some(execmm::acas::epsilon_bound(&p).map(|b| 0.5 * b).unwrap_or(0.0));
        }
    }
    if let Some(x) = &mut cfg.approx {
        let n = x.q0_e.len();
        for v in [&mut x.phi_e, &mut x.phi_m, &mut x.a_e, &mut x.a_m] {
            *v = PerAgent::Many(v.values(n));
        }
        match &mut x.impact {
            ImpactSpec::Quadratic { beta, convexity } | ImpactSpec::Aggregate { beta, convexity, .. } => {
                let b = beta.values(n);
                if convexity.is_none() {
                    *convexity = Some(b.iter().copied().fold(f64::INFINITY, f64::min));
                }
                *beta = PerAgent::Many(b);
            }
        }
        if x.noise.l0.is_none() {
            x.noise.l0 = Some(vec![0.0; n]);
        }
    }
}
