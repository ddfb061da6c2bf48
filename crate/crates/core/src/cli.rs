//! Scenario files, the `solve`/`verify`/`compare`/`sweep-n` runs and their
//! CSV and key/value outputs.
//!
//! A scenario is a TOML file:
//!
//! ```toml
//! [market]
//! horizon = 1.0
//! kappa = 10.0
//! eta = 5.0                                  # or { type = "linear", a = 5.0, b = -1.0 }
//! lambda = { type = "exponential", a = 5.0, b = -0.5 }
//! mode = "trading_constraint"
//!
//! [distribution]
//! type = "exp_mixture"
//! seller_mass = 0.8
//! seller_rate = 0.6666666666666666
//! buyer_mass = 0.2
//! buyer_rate = 1.0
//! ```
//!
//! Optional tables: `[grid]`, `[game]`, `[solver]`, `[output]`.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::dist::PortfolioDistribution;
use crate::equilibrium::{cross_check_picard, find_equilibrium, fixed_point_selfcheck, EquilibriumSolution, Solver};
use crate::error::Error;
use crate::kernels::check_mu_assumptions;
use crate::model::{build_grid, validate_params, Coefficient, CostParams, TimeGrid, VariantMode};
use crate::oracle::{
    best_response_qp, best_response_qp_nplayer, discrete_objective_of_path, nash_deviation_test, sensitivity_check,
};
use crate::paths::{aggregate_f, Game, PathBuilder, PlayerPath};
use crate::riccati::{solve_a, RiccatiBundle};

pub const SUMMARY_FORMAT: &str = "mfg-exec-summary/1";

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub market: MarketConfig,
    #[serde(default)]
    pub grid: GridConfig,
    pub distribution: DistributionConfig,
    #[serde(default)]
    pub game: GameConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    pub kappa: f64,
    pub eta: CoefficientSpec,
    pub lambda: CoefficientSpec,
    #[serde(default = "default_mode")]
    pub mode: VariantMode,
}

fn default_horizon() -> f64 {
    1.0
}

fn default_mode() -> VariantMode {
    VariantMode::TradingConstraint
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum CoefficientSpec {
    Value(f64),
    Family(CoefficientFamily),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientFamily {
    Constant { value: f64 },
    /// `a + b t`
    Linear { a: f64, b: f64 },
    /// `a exp(b t)`
    Exponential { a: f64, b: f64 },
}

impl CoefficientSpec {
    pub fn to_coefficient(&self) -> Coefficient {
        match *self {
            Self::Value(v) | Self::Family(CoefficientFamily::Constant { value: v }) => Coefficient::Constant(v),
            Self::Family(CoefficientFamily::Linear { a, b }) => Coefficient::Linear { a, b },
            Self::Family(CoefficientFamily::Exponential { a, b }) => Coefficient::Exponential { a, b },
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_grid_n")]
    pub n: usize,
    #[serde(default = "default_refinement")]
    pub refinement: f64,
}

fn default_grid_n() -> usize {
    crate::model::DEFAULT_GRID_N
}

fn default_refinement() -> f64 {
    crate::model::DEFAULT_REFINEMENT
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { n: default_grid_n(), refinement: default_refinement() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistributionConfig {
    ExpMixture { seller_mass: f64, seller_rate: f64, buyer_mass: f64, buyer_rate: f64 },
    Empirical { positions: Vec<f64> },
}

impl DistributionConfig {
    pub fn build(&self) -> crate::Result<PortfolioDistribution> {
        match self {
            Self::ExpMixture { seller_mass, seller_rate, buyer_mass, buyer_rate } => {
                PortfolioDistribution::exp_mixture(*seller_mass, *seller_rate, *buyer_mass, *buyer_rate)
            }
            Self::Empirical { positions } => PortfolioDistribution::empirical(positions.clone()),
        }
    }
}

/// `mfg`, or `nplayer` with `n` players. Without explicit positions the
/// players sit at the mid-quantiles of the configured distribution.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum GameConfig {
    #[default]
    Mfg,
    Nplayer {
        n: usize,
        #[serde(default)]
        positions: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Strata per side for the population aggregation check.
    #[serde(default = "default_strata")]
    pub strata: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Random deviations per sampled player.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Players sampled for the deviation test.
    #[serde(default = "default_nash_players")]
    pub nash_players: usize,
    #[serde(default = "default_coarse_n")]
    pub coarse_n: usize,
    #[serde(default = "default_sweep")]
    pub sweep_n: Vec<usize>,
}

fn default_tol() -> f64 {
    crate::equilibrium::DEFAULT_TOL
}
fn default_strata() -> usize {
    512
}
fn default_seed() -> u64 {
    7
}
fn default_samples() -> usize {
    100
}
fn default_nash_players() -> usize {
    12
}
fn default_coarse_n() -> usize {
    crate::oracle::DEFAULT_COARSE_N
}
fn default_sweep() -> Vec<usize> {
    vec![7, 15, 100]
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: default_tol(),
            strata: default_strata(),
            seed: default_seed(),
            samples: default_samples(),
            nash_players: default_nash_players(),
            coarse_n: default_coarse_n(),
            sweep_n: default_sweep(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    /// Initial positions whose paths are written to `paths.csv`.
    #[serde(default)]
    pub representative: Vec<f64>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_out_dir(), representative: Vec::new() }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Number of grid nodes.
    #[arg(long = "grid-n", global = true)]
    pub grid_n: Option<usize>,
    /// Root-finding tolerance.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Output directory.
    #[arg(long = "out-dir", global = true)]
    pub out_dir: Option<PathBuf>,
    /// Seed for the random deviation test.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

/// 1-based line of the first `key = ...` inside `[section]` (or anywhere when
/// `section` is empty).
fn locate(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut section_line = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix('[') {
            current = rest.trim_end_matches(']').trim().to_string();
            if current == section {
                section_line = Some(i + 1);
            }
            continue;
        }
        if current == section || section.is_empty() {
            if let Some(rest) = line.strip_prefix(key) {
                if rest.trim_start().starts_with('=') {
                    return Some(i + 1);
                }
            }
        }
    }
    section_line
}

fn config_error(text: &str, section: &str, key: &str, msg: impl std::fmt::Display) -> Error {
    match locate(text, section, key) {
        Some(line) => Error::Config(format!("line {line}: [{section}] {key}: {msg}")),
        None => Error::Config(format!("[{section}] {key}: {msg}")),
    }
}

pub fn parse_config(text: &str) -> crate::Result<ScenarioConfig> {
    let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
        let msg = e.message().to_string();
        match line {
            Some(l) => Error::Config(format!("line {l}: {msg}")),
            None => Error::Config(msg),
        }
    })?;
    let check = |ok: bool, section: &str, key: &str, msg: &str| -> crate::Result<()> {
        if ok {
            Ok(())
        } else {
            Err(config_error(text, section, key, msg))
        }
    };
    check(cfg.market.horizon > 0.0 && cfg.market.horizon.is_finite(), "market", "horizon", "must be positive")?;
    check(cfg.market.kappa > 0.0 && cfg.market.kappa.is_finite(), "market", "kappa", "must be positive")?;
    check(cfg.solver.tol > 0.0, "solver", "tol", "must be positive")?;
    check(cfg.solver.strata >= 1, "solver", "strata", "must be at least 1")?;
    check(cfg.solver.coarse_n >= 50, "solver", "coarse_n", "must be at least 50")?;
    check(cfg.solver.sweep_n.iter().all(|&n| n >= 1), "solver", "sweep_n", "player counts must be positive")?;
    if let GameConfig::Nplayer { n, positions } = &cfg.game {
        check(*n >= 1, "game", "n", "must be at least 1")?;
        if let Some(p) = positions {
            check(p.len() == *n, "game", "positions", "length must equal n")?;
        }
    }
    let params = cfg.cost_params(0.0);
    validate_params(&params).map_err(|e| {
        let key = if e.to_string().contains("lambda") { "lambda" } else { "eta" };
        config_error(text, "market", key, e)
    })?;
    cfg.distribution.build().map_err(|e| config_error(text, "distribution", "type", e))?;
    build_grid(cfg.market.horizon, cfg.grid.n, cfg.grid.refinement).map_err(|e| config_error(text, "grid", "n", e))?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> anyhow::Result<ScenarioConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_config(&text).with_context(|| format!("in {}", path.display()))
}

impl ScenarioConfig {
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(n) = o.grid_n {
            self.grid.n = n;
        }
        if let Some(t) = o.tol {
            self.solver.tol = t;
        }
        if let Some(d) = &o.out_dir {
            self.output.dir = d.clone();
        }
        if let Some(s) = o.seed {
            self.solver.seed = s;
        }
    }

    pub fn cost_params(&self, delta: f64) -> CostParams {
        CostParams {
            horizon: self.market.horizon,
            eta: self.market.eta.to_coefficient(),
            lambda: self.market.lambda.to_coefficient(),
            kappa: self.market.kappa,
            delta,
        }
    }
}

// ---------------------------------------------------------------------------
// Scenario setup

/// Everything a run needs, resolved from a config.
pub struct Scenario {
    pub config: ScenarioConfig,
    pub params: CostParams,
    pub grid: TimeGrid,
    pub bundle: RiccatiBundle,
    /// The configured law.
    pub law: PortfolioDistribution,
    /// The population actually solved: the law itself, or `N` positions.
    pub population: PortfolioDistribution,
    pub game: Game,
}

impl Scenario {
    pub fn new(config: ScenarioConfig) -> anyhow::Result<Self> {
        let law = config.distribution.build().context("stage setup: distribution")?;
        let grid = build_grid(config.market.horizon, config.grid.n, config.grid.refinement).context("stage setup: grid")?;
        let (game, population, delta) = match &config.game {
            GameConfig::Mfg => (Game::Mfg, law.clone(), 0.0),
            GameConfig::Nplayer { n, positions } => {
                let pos = positions.clone().unwrap_or_else(|| law.mid_quantile_positions(*n));
                let pop = PortfolioDistribution::empirical(pos).context("stage setup: player positions")?;
                (Game::NPlayer { n: *n }, pop, 1.0 / *n as f64)
            }
        };
        let params = config.cost_params(delta);
        let bundle = solve_a(&params, &grid).context("stage riccati")?;
        Ok(Self { config, params, grid, bundle, law, population, game })
    }

    pub fn solve(&self, mode: VariantMode) -> anyhow::Result<EquilibriumSolution> {
        find_equilibrium(&self.bundle, &self.params, &self.population, mode, self.config.solver.tol)
            .with_context(|| format!("stage equilibrium ({})", mode.tag()))
    }

    /// Configured representative positions, or six mid-quantiles of the law.
    pub fn representatives(&self) -> Vec<f64> {
        if self.config.output.representative.is_empty() {
            self.law.mid_quantile_positions(6)
        } else {
            self.config.output.representative.clone()
        }
    }

    fn nash_players(&self) -> Vec<f64> {
        match &self.game {
            Game::Mfg => self.law.mid_quantile_positions(self.config.solver.nash_players),
            Game::NPlayer { .. } => {
                let mut p: Vec<f64> = self.population.seller_atoms().iter().map(|a| a.0).collect();
                p.extend(self.population.buyer_atoms().iter().map(|a| a.0));
                p
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Output

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes through a temporary file in the target directory, then renames it.
pub fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn csv_string(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    // Writing to memory cannot fail.
    w.write_record(header).expect("in-memory csv");
    for r in rows {
        w.write_record(r.iter().map(|&v| fmt_f64(v))).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("ascii output")
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> anyhow::Result<()> {
    write_atomic(path, &csv_string(header, rows)).with_context(|| format!("writing {}", path.display()))
}

/// Ordered key/value text. Values are free text up to the end of the line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    pub entries: Vec<(String, String)>,
}

impl Summary {
    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn push_f64(&mut self, key: impl Into<String>, value: f64) {
        self.push(key, fmt_f64(value));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> crate::Result<f64> {
        let v = self.get(key).ok_or_else(|| Error::Config(format!("summary: missing {key}")))?;
        v.parse().map_err(|_| Error::Config(format!("summary: {key} is not a number: {v}")))
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Parses rendered text and re-checks the invariant block.
    pub fn parse(text: &str) -> crate::Result<Self> {
        let mut out = Summary::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| Error::Config(format!("summary line {}: expected `key = value`", i + 1)))?;
            out.push(k.trim(), v.trim());
        }
        out.validate()?;
        Ok(out)
    }

    pub fn load(path: &Path) -> crate::Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Internal consistency of a solve summary: format tag, mass identity and
    /// the sign of the solved parameters.
    pub fn validate(&self) -> crate::Result<()> {
        if self.get("format") != Some(SUMMARY_FORMAT) {
            return Err(Error::Config(format!("summary: format is not {SUMMARY_FORMAT}")));
        }
        let mass = self.get_f64("mass")?;
        let mean = self.get_f64("mean")?;
        let err = self.get_f64("mass_error")?;
        if ((mass - mean) - err).abs() > 1e-12 * (1.0 + mass.abs()) {
            return Err(Error::Config("summary: mass_error does not match mass - mean".into()));
        }
        if err.abs() > 1e-3 * mean.abs().max(1.0) {
            return Err(Error::Config(format!("summary: mass identity violated ({err:e})")));
        }
        let theta = self.get_f64("theta")?;
        let c = self.get_f64("c")?;
        if theta < 0.0 || c < 0.0 {
            return Err(Error::Config("summary: theta and c must be non-negative".into()));
        }
        Ok(())
    }
}

fn mu_rows(sol: &EquilibriumSolution, bundle: &RiccatiBundle) -> Vec<Vec<f64>> {
    (0..sol.t.len()).map(|i| vec![sol.t[i], sol.mu[i], bundle.eta[i] * sol.mu[i]]).collect()
}

// ---------------------------------------------------------------------------
// Runs

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
    pub note: String,
}

#[derive(Debug, Clone, Default)]
pub struct VerificationReport {
    pub seed: u64,
    pub checks: Vec<Check>,
}

impl VerificationReport {
    fn add(&mut self, name: &str, passed: bool, value: f64, tolerance: f64, note: impl Into<String>) {
        self.checks.push(Check { name: name.into(), passed, value, tolerance, note: note.into() });
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn render(&self) -> String {
        let mut s = Summary::default();
        s.push("seed", self.seed);
        for c in &self.checks {
            s.push(format!("check.{}.status", c.name), if c.passed { "pass" } else { "fail" });
            s.push_f64(format!("check.{}.value", c.name), c.value);
            s.push_f64(format!("check.{}.tolerance", c.name), c.tolerance);
            if !c.note.is_empty() {
                s.push(format!("check.{}.note", c.name), &c.note);
            }
        }
        s.push("overall", if self.all_passed() { "pass" } else { "fail" });
        s.render()
    }
}

#[derive(Debug, Clone)]
pub struct ModeComparison {
    pub t: Vec<f64>,
    pub modes: Vec<(VariantMode, Vec<f64>)>,
    pub masses: Vec<(VariantMode, f64)>,
    pub max_mass_spread: f64,
    /// `μ^trading(0) <= μ^unconstrained(0)`.
    pub slower_start: bool,
    /// First time the trading-constrained rate exceeds the unconstrained one.
    pub crossing: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    /// `(N, sup_t |μ^N - μ^MFG|, mass error of μ^N)`.
    pub rows: Vec<(usize, f64, f64)>,
    pub mfg: Vec<f64>,
    pub nplayer: Vec<Vec<f64>>,
}

impl SweepResult {
    pub fn decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].1 < w[0].1)
    }
}

pub struct ScenarioResult {
    pub solution: EquilibriumSolution,
    pub sample_paths: Vec<PlayerPath>,
    pub comparisons: Vec<EquilibriumSolution>,
    pub verification: Option<VerificationReport>,
    pub sweep: Option<SweepResult>,
    pub comparison: Option<ModeComparison>,
    /// Wall-clock seconds per stage; kept out of every written file.
    pub timing: Vec<(String, f64)>,
}

struct Timer(Vec<(String, f64)>, Instant);

impl Timer {
    fn new() -> Self {
        Timer(Vec::new(), Instant::now())
    }
    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.0.push((stage.into(), (now - self.1).as_secs_f64()));
        self.1 = now;
    }
}

fn solve_summary(sc: &Scenario, sol: &EquilibriumSolution, paths: &[PlayerPath]) -> Summary {
    let mut s = Summary::default();
    s.push("format", SUMMARY_FORMAT);
    if let Some(n) = &sc.config.name {
        s.push("name", n);
    }
    s.push("mode", sol.mode.tag());
    s.push(
        "game",
        match sc.game {
            Game::Mfg => "mfg".to_string(),
            Game::NPlayer { n } => format!("nplayer {n}"),
        },
    );
    s.push("grid_n", sc.grid.len());
    s.push("closed_form_riccati", sc.bundle.is_closed_form());
    s.push("trivial", sol.trivial);
    s.push_f64("orientation", sol.orientation);
    s.push_f64("theta", sol.theta);
    s.push_f64("c", sol.c);
    s.push_f64("psi_at_0", sol.kernels.psi_at_0);
    s.push_f64("phi_at_t", sol.kernels.phi_at_t);
    s.push_f64("mean", sc.population.mean());
    s.push_f64("mass", sol.mass(&sc.bundle));
    s.push_f64("mass_error", sol.mass(&sc.bundle) - sc.population.mean());
    s.push_f64("rho1", sol.residuals.rho1);
    s.push_f64("rho2", sol.residuals.rho2);
    if let Some(g) = sol.residuals.picard_gap {
        s.push_f64("picard_gap", g);
    }
    if let Some(g) = sol.residuals.fixed_point_sup_error {
        s.push_f64("fixed_point_sup_error", g);
    }
    s.push("outer_roots", sol.roots.len());
    s.push("unique_certificate", sol.unique_certificate);
    for (i, p) in paths.iter().enumerate() {
        s.push_f64(format!("path.{i}.x0"), p.x0);
        s.push_f64(format!("path.{i}.sigma"), p.sigma);
        s.push_f64(format!("path.{i}.tau"), p.tau);
        s.push_f64(format!("path.{i}.cost"), p.cost);
    }
    for w in &sol.warnings {
        s.push("warning", w);
    }
    s
}

fn write_solution(sc: &Scenario, sol: &EquilibriumSolution, paths: &[PlayerPath], out: &Path) -> anyhow::Result<()> {
    write_csv(&out.join(format!("mu_{}.csv", sol.mode.tag())), &["t", "mu", "eta_mu"], &mu_rows(sol, &sc.bundle))?;
    let k = &sol.kernels;
    let rows: Vec<Vec<f64>> = (0..k.t.len()).map(|i| vec![k.t[i], k.psi[i], k.phi[i]]).collect();
    write_csv(&out.join("kernels.csv"), &["t", "psi", "phi"], &rows)?;
    let mut rows = Vec::new();
    for p in paths {
        for i in 0..p.t.len() {
            rows.push(vec![p.x0, p.t[i], p.x[i], p.xi[i]]);
        }
    }
    write_csv(&out.join("paths.csv"), &["x0", "t", "inventory", "rate"], &rows)?;
    let summary = solve_summary(sc, sol, paths);
    write_atomic(&out.join("summary.txt"), &summary.render())?;
    Ok(())
}

/// `solve`: the configured mode, kernels, representative paths and summary.
pub fn run(sc: &Scenario) -> anyhow::Result<ScenarioResult> {
    let mut timer = Timer::new();
    let mode = sc.config.market.mode;
    let solution = sc.solve(mode)?;
    timer.lap("equilibrium");
    let builder = PathBuilder::new(&solution, &sc.bundle);
    let sample_paths: Vec<PlayerPath> = sc.representatives().iter().map(|&x| builder.path(x)).collect();
    timer.lap("paths");
    write_solution(sc, &solution, &sample_paths, &sc.config.output.dir).context("stage output")?;
    timer.lap("output");
    Ok(ScenarioResult {
        solution,
        sample_paths,
        comparisons: Vec::new(),
        verification: None,
        sweep: None,
        comparison: None,
        timing: timer.0,
    })
}

/// `verify`: solve, then every numerical check against independent oracles.
pub fn verify(sc: &Scenario) -> anyhow::Result<ScenarioResult> {
    let mut result = run(sc)?;
    let mut timer = Timer::new();
    let cfg = &sc.config.solver;
    let sol = &mut result.solution;
    let b = &sc.bundle;
    let mut rep = VerificationReport { seed: cfg.seed, checks: Vec::new() };
    let mean = sc.population.mean();

    let mass_err = (sol.mass(b) - mean).abs() / mean.abs().max(1.0);
    rep.add("mass_identity", mass_err < 1e-3, mass_err, 1e-3, "");

    if !sol.trivial {
        let oriented = sol.oriented_mu();
        let d = check_mu_assumptions(&oriented, &sol.t, &sc.params);
        let positive = oriented.iter().all(|&m| m > 0.0);
        let strict = oriented.windows(2).zip(b.eta.windows(2)).all(|(m, e)| m[1] * e[1] < m[0] * e[0]);
        let min_mu = oriented.iter().cloned().fold(f64::INFINITY, f64::min);
        rep.add("sign_and_monotonicity", positive && strict && d.sign_constant, min_mu, 0.0, "min oriented mu; eta*mu strictly decreasing");

        let sup = oriented.iter().fold(0.0f64, |a, m| a.max(m.abs()));
        let strata = cfg.strata;
        let fp = |n: usize| fixed_point_selfcheck(&mut sol.clone(), |s| aggregate_f(s, b, &sc.population, n)) / sup;
        let coarse = fp(strata / 2);
        let fine = fixed_point_selfcheck(sol, |s| aggregate_f(s, b, &sc.population, strata)) / sup;
        let halving = sc.population.is_atomic() || fine <= 0.5 * coarse || fine < 1e-12;
        rep.add("fixed_point", fine < 1e-3 && halving, fine, 1e-3, format!("{strata} strata; half as many gives {coarse:e}"));
        timer.lap("fixed point");

        let gap = cross_check_picard(sol, b, &sc.params, &sc.population).context("stage picard")?;
        rep.add("picard", gap < 1e-4, gap, 1e-4, "");
        timer.lap("picard");
    }

    let res = if b.is_closed_form() { b.max_residual() } else { f64::NAN };
    rep.add("riccati_residual", !(res >= 1e-8), res, 1e-8, if b.is_closed_form() { "" } else { "tabulated coefficients; skipped" });
    let lb = b.lower_bound();
    let k = b.delta() * b.kappa();
    let worst = b.a.iter().zip(&lb).take(b.a.len() - 1).map(|(a, l)| (a - k) / l - 1.0).fold(f64::INFINITY, f64::min);
    rep.add("riccati_lower_bound", worst >= -1e-10, worst, -1e-10, "min (A - delta*kappa)/bound - 1");

    if !sol.trivial {
        timing_checks(sc, sol, &mut rep)?;
        timer.lap("timing");
    }
    // Deviations are drawn from the direction-constrained set, which only
    // contains the equilibrium strategies under the trading constraint.
    if !sol.trivial && sol.mode == VariantMode::TradingConstraint {
        let players = sc.nash_players();
        let dev = nash_deviation_test(sol, b, sc.game, &players, cfg.samples, cfg.seed);
        rep.add(
            "nash_deviation",
            dev.min_relative_gap >= -1e-6 && dev.min_effective_samples == cfg.samples,
            dev.min_relative_gap,
            -1e-6,
            format!("{} players, worst at x0 = {}", players.len(), fmt_f64(dev.worst_player)),
        );
        timer.lap("nash");
    }
    if !sol.trivial {
        let reflected;
        let d = if sol.orientation < 0.0 {
            reflected = sc.population.reflect();
            &reflected
        } else {
            &sc.population
        };
        let solver = Solver::new(&sc.params, b, d, sol.mode);
        let sens = sensitivity_check(&solver, sol.theta, sol.c, 1e-4, cfg.tol).context("stage sensitivity")?;
        rep.add("sensitivity_theta", sens.min_dtheta >= sens.eta_end * (1.0 - 1e-2), sens.min_dtheta, sens.eta_end * (1.0 - 1e-2), "");
        rep.add("sensitivity_c", sens.max_dc <= 1e-6, sens.max_dc, 1e-6, "");
        rep.add("rho1_increasing", sens.rho1_increasing, crate::oracle::SWEEP_POINTS as f64, 0.0, "sweep points");
        timer.lap("sensitivity");
    }
    write_atomic(&sc.config.output.dir.join("verification.txt"), &rep.render()).context("stage output")?;
    result.verification = Some(rep);
    result.timing.extend(timer.0);
    Ok(result)
}

/// Entry/exit times are monotone in the position and match the active set of
/// the discretized best response.
fn timing_checks(sc: &Scenario, sol: &EquilibriumSolution, rep: &mut VerificationReport) -> anyhow::Result<()> {
    let b = &sc.bundle;
    let builder = PathBuilder::new(sol, b);
    let k = &sol.kernels;
    let s = sol.orientation;
    let coarse = sc.config.solver.coarse_n;
    let dt = sc.params.horizon / coarse as f64;
    // Buyers and sellers in the solved orientation, mapped back.
    let buyers: Vec<f64> = (1..=8).map(|i| -s * k.psi_at_0 * i as f64 / 9.0).collect();
    let sellers: Vec<f64> = (1..=8).map(|i| s * k.phi_at_t * i as f64 / 9.0).collect();
    let sig: Vec<f64> = buyers.iter().map(|&x| builder.path(x).sigma).collect();
    let tau: Vec<f64> = sellers.iter().map(|&x| builder.path(x).tau).collect();
    let constrained = sol.mode == crate::model::VariantMode::TradingConstraint && k.psi_at_0 > 0.0;
    if constrained {
        let ok = sig.iter().all(|&v| v > 0.0) && sig.windows(2).all(|w| w[1] < w[0]);
        rep.add("entry_times", ok, sig[0], 0.0, "sigma > 0 and decreasing in |x|");
    }
    if k.phi_at_t > 0.0 && sol.mode != crate::model::VariantMode::Unconstrained {
        let ok = tau.iter().all(|&v| v < sc.params.horizon) && tau.windows(2).all(|w| w[1] > w[0]);
        rep.add("exit_times", ok, tau[tau.len() - 1], sc.params.horizon, "tau < T and increasing in x");
    }
    if sol.mode != crate::model::VariantMode::TradingConstraint {
        return Ok(());
    }
    let qp = |x: f64| match sc.game {
        Game::Mfg => best_response_qp(x, &sol.t, &sol.mu, &sc.params, coarse),
        Game::NPlayer { n } => best_response_qp_nplayer(x, sol, b, &sc.params, n, coarse),
    };
    let mut worst_gap = 0.0f64;
    let mut worst_obj = 0.0f64;
    let mut kkt = 0.0f64;
    for (x, t_ref, is_buyer) in buyers.iter().zip(&sig).map(|(x, t)| (*x, *t, true)).chain(sellers.iter().zip(&tau).map(|(x, t)| (*x, *t, false))) {
        let r = qp(x).context("stage oracle qp")?;
        let found = if is_buyer { r.first_active_time(1e-6) } else { r.last_active_time(1e-6) };
        worst_gap = worst_gap.max((found - t_ref).abs());
        kkt = kkt.max(r.kkt_residual);
        if let Game::Mfg = sc.game {
            let p = builder.path(x);
            let analytic = discrete_objective_of_path(x, &p.t, &p.xi, &sol.t, &sol.mu, &sc.params, coarse);
            worst_obj = worst_obj.max((analytic - r.objective).abs() / r.objective.abs().max(1.0));
        }
    }
    rep.add("qp_thresholds", worst_gap <= 2.0 * dt + 1e-12, worst_gap, 2.0 * dt, "max |QP active edge - analytic time|");
    rep.add("qp_kkt", kkt < 1e-8, kkt, 1e-8, "");
    if let Game::Mfg = sc.game {
        rep.add("qp_objective", worst_obj < 1e-4, worst_obj, 1e-4, "analytic path priced on the QP grid vs QP optimum");
    }
    Ok(())
}

/// `compare`: all three modes side by side.
pub fn compare_modes(sc: &Scenario) -> anyhow::Result<ScenarioResult> {
    let mut timer = Timer::new();
    let sols: Vec<EquilibriumSolution> = VariantMode::ALL.iter().map(|&m| sc.solve(m)).collect::<anyhow::Result<_>>()?;
    timer.lap("equilibria");
    let out = &sc.config.output.dir;
    for s in &sols {
        write_csv(&out.join(format!("mu_{}.csv", s.mode.tag())), &["t", "mu", "eta_mu"], &mu_rows(s, &sc.bundle))?;
    }
    let t = sols[0].t.clone();
    let rows: Vec<Vec<f64>> = (0..t.len()).map(|i| vec![t[i], sols[0].mu[i], sols[1].mu[i], sols[2].mu[i]]).collect();
    write_csv(&out.join("compare.csv"), &["t", "trading_constraint", "drop_out", "unconstrained"], &rows)?;
    let masses: Vec<(VariantMode, f64)> = sols.iter().map(|s| (s.mode, s.mass(&sc.bundle))).collect();
    let scale = sc.population.mean().abs().max(1e-300);
    let hi = masses.iter().map(|m| m.1).fold(f64::NEG_INFINITY, f64::max);
    let lo = masses.iter().map(|m| m.1).fold(f64::INFINITY, f64::min);
    let (tc, un) = (&sols[0].mu, &sols[2].mu);
    let slower_start = tc[0] <= un[0];
    let crossing = (1..t.len()).find(|&i| tc[i - 1] <= un[i - 1] && tc[i] > un[i]).map(|i| {
        let (a, b) = (un[i - 1] - tc[i - 1], un[i] - tc[i]);
        t[i - 1] + (t[i] - t[i - 1]) * a / (a - b)
    });
    let cmp = ModeComparison {
        t,
        modes: sols.iter().map(|s| (s.mode, s.mu.clone())).collect(),
        masses: masses.clone(),
        max_mass_spread: if sols.iter().all(|s| s.trivial) { 0.0 } else { (hi - lo) / scale },
        slower_start,
        crossing,
    };
    let mut s = Summary::default();
    s.push("format", "mfg-exec-compare/1");
    for (m, v) in &masses {
        s.push_f64(format!("mass.{}", m.tag()), *v);
    }
    for sol in &sols {
        s.push_f64(format!("theta.{}", sol.mode.tag()), sol.theta);
        s.push_f64(format!("c.{}", sol.mode.tag()), sol.c);
    }
    s.push_f64("mean", sc.population.mean());
    s.push_f64("max_mass_spread", cmp.max_mass_spread);
    s.push("slower_start", cmp.slower_start);
    s.push("crossing", cmp.crossing.map(fmt_f64).unwrap_or_else(|| "none".into()));
    write_atomic(&out.join("compare_summary.txt"), &s.render()).context("stage output")?;
    timer.lap("output");
    let mut it = sols.into_iter();
    let solution = it.next().ok_or_else(|| anyhow!("no modes solved"))?;
    Ok(ScenarioResult {
        solution,
        sample_paths: Vec::new(),
        comparisons: it.collect(),
        verification: None,
        sweep: None,
        comparison: Some(cmp),
        timing: timer.0,
    })
}

/// `sweep-n`: the mean-field rate against `N`-player rates with players at
/// mid-quantiles of the configured law.
pub fn sweep_n(sc: &Scenario, ns: &[usize]) -> anyhow::Result<ScenarioResult> {
    let mut timer = Timer::new();
    let mode = sc.config.market.mode;
    let mfg_params = sc.config.cost_params(0.0);
    let mfg_bundle = solve_a(&mfg_params, &sc.grid).context("stage riccati")?;
    let mfg = find_equilibrium(&mfg_bundle, &mfg_params, &sc.law, mode, sc.config.solver.tol).context("stage equilibrium (mfg)")?;
    timer.lap("mfg");
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for &n in ns {
        let params = sc.config.cost_params(1.0 / n as f64);
        let bundle = solve_a(&params, &sc.grid).with_context(|| format!("stage riccati (N = {n})"))?;
        let pop = PortfolioDistribution::empirical(sc.law.mid_quantile_positions(n))?;
        let sol = find_equilibrium(&bundle, &params, &pop, mode, sc.config.solver.tol)
            .with_context(|| format!("stage equilibrium (N = {n})"))?;
        let gap = sol.mu.iter().zip(&mfg.mu).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        rows.push((n, gap, sol.mass(&bundle) - pop.mean()));
        curves.push(sol.mu);
        timer.lap(&format!("N = {n}"));
    }
    let out = &sc.config.output.dir;
    let table: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.0 as f64, r.1, r.2]).collect();
    write_csv(&out.join("nplayer_convergence.csv"), &["N", "sup_gap", "mass_error"], &table)?;
    let mut header = vec!["t".to_string(), "mfg".to_string()];
    header.extend(ns.iter().map(|n| format!("n{n}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows_mu: Vec<Vec<f64>> = (0..mfg.t.len())
        .map(|i| {
            let mut r = vec![mfg.t[i], mfg.mu[i]];
            r.extend(curves.iter().map(|c| c[i]));
            r
        })
        .collect();
    write_csv(&out.join("nplayer_mu.csv"), &header, &rows_mu)?;
    timer.lap("output");
    let sweep = SweepResult { rows, mfg: mfg.mu.clone(), nplayer: curves };
    Ok(ScenarioResult {
        solution: mfg,
        sample_paths: Vec::new(),
        comparisons: Vec::new(),
        verification: None,
        sweep: Some(sweep),
        comparison: None,
        timing: timer.0,
    })
}

// ---------------------------------------------------------------------------
// Command line

#[derive(Debug, Parser)]
#[command(name = "mfg-exec", version, about = "Equilibria of liquidation games with no direction changes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the configured mode and write rates, kernels, paths and a summary.
    Solve { config: PathBuf },
    /// Solve and run all numerical checks; fails if any check fails.
    Verify { config: PathBuf },
    /// Solve all three modes and compare them.
    Compare { config: PathBuf },
    /// Compare N-player equilibria with the mean-field one.
    SweepN {
        config: PathBuf,
        /// Player counts, comma separated. Defaults to the config's list.
        #[arg(long = "N", value_delimiter = ',')]
        n: Option<Vec<usize>>,
    },
}

/// Runs a parsed command line. Returns `false` when verification fails.
pub fn execute(cli: &Cli) -> anyhow::Result<bool> {
    let path = match &cli.command {
        Command::Solve { config } | Command::Verify { config } | Command::Compare { config } | Command::SweepN { config, .. } => config,
    };
    let mut cfg = load_config(path)?;
    cfg.apply(&cli.overrides);
    let sc = Scenario::new(cfg)?;
    let out = sc.config.output.dir.display().to_string();
    let (result, ok) = match &cli.command {
        Command::Solve { .. } => (run(&sc)?, true),
        Command::Verify { .. } => {
            let r = verify(&sc)?;
            let ok = r.verification.as_ref().map(|v| v.all_passed()).unwrap_or(false);
            if let Some(v) = &r.verification {
                for c in &v.checks {
                    println!("{:<24} {}  value={:e} tol={:e}", c.name, if c.passed { "pass" } else { "FAIL" }, c.value, c.tolerance);
                }
            }
            (r, ok)
        }
        Command::Compare { .. } => {
            let r = compare_modes(&sc)?;
            if let Some(c) = &r.comparison {
                for (m, v) in &c.masses {
                    println!("{:<20} mass={v:.10}", m.tag());
                }
                println!("crossing: {:?}", c.crossing);
            }
            (r, true)
        }
        Command::SweepN { n, .. } => {
            let ns = n.clone().unwrap_or_else(|| sc.config.solver.sweep_n.clone());
            let r = sweep_n(&sc, &ns)?;
            if let Some(s) = &r.sweep {
                for (n, gap, _) in &s.rows {
                    println!("N = {n:<5} sup gap = {gap:e}");
                }
            }
            (r, true)
        }
    };
    let sol = &result.solution;
    println!("theta = {}  c = {}  (outputs in {out})", fmt_f64(sol.theta), fmt_f64(sol.c));
    for (stage, secs) in &result.timing {
        eprintln!("{stage}: {secs:.3}s");
    }
    Ok(ok)
}
