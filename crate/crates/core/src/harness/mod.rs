//! Config-driven experiments producing reproducible artifacts.
//!
//! An experiment is described by one TOML file. Running it writes, into the
//! output directory:
//!
//! * `manifest.json`: the echoed config, seed, RNG, versions, probe set,
//!   artifact list and built-in assertions;
//! * one or more RFC-4180 CSV tables (Monte Carlo tables carry `rng` and
//!   `seed` columns);
//! * `summary.txt`, a human-readable digest.
//!
//! Reruns with the same config reproduce every CSV and JSON byte for byte,
//! whatever the worker count. Wall-clock time is left out of the manifest
//! unless `output.include_wall_clock` is set.

mod plot;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bvp::{evaluate, solve_bvp};
use crate::error::{Error, Result};
use crate::generator::{build_generator, marginal_at};
use crate::graph::{compute_coefficients, identify, CoefficientOptions, EdgeCoefficients};
use crate::model::{validate, AnnulusModel, Forcing, Model, Point, Tolerances};
use crate::sde::{
    empirical_marginal, estimate_exit_time, feynman_kac_probes, simulate_occupation, FeynmanKacOptions, Scheme,
    SimConfig, Start, Target, DEFAULT_DT_FACTOR, RNG_ALGORITHM,
};
use crate::stats::loglog_slope;

pub use plot::{plot, plot_file, PlotOutcome, PlotSpec};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Nine points on the positive x-axis spanning the well and the exterior.
pub const DEFAULT_PROBES: [[f64; 2]; 9] = [
    [0.0, 0.0],
    [0.25, 0.0],
    [0.5, 0.0],
    [0.75, 0.0],
    [0.95, 0.0],
    [1.1, 0.0],
    [1.3, 0.0],
    [1.7, 0.0],
    [1.95, 0.0],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Coefficients,
    Occupation,
    ExitTimes,
    Marginals,
    Bvp,
    Compare,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Coefficients => "coefficients",
            Experiment::Occupation => "occupation",
            Experiment::ExitTimes => "exit-times",
            Experiment::Marginals => "marginals",
            Experiment::Bvp => "bvp",
            Experiment::Compare => "compare",
        }
    }

    fn uses_ladder(&self) -> bool {
        !matches!(self, Experiment::Coefficients | Experiment::Bvp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    Annulus {
        #[serde(default = "radial")]
        forcing: Forcing,
        #[serde(default)]
        forcing_offset: f64,
        #[serde(default = "one")]
        a1_scale: f64,
        #[serde(default)]
        normalization_point: Option<[f64; 2]>,
    },
}

fn radial() -> Forcing {
    Forcing::Radial
}

fn one() -> f64 {
    1.0
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Annulus { forcing: Forcing::Radial, forcing_offset: 0.0, a1_scale: 1.0, normalization_point: None }
    }
}

impl ModelConfig {
    pub fn build(&self) -> AnnulusModel {
        match self {
            ModelConfig::Annulus { forcing, forcing_offset, a1_scale, normalization_point } => {
                let mut m = AnnulusModel::new()
                    .with_forcing(forcing.clone())
                    .with_forcing_offset(*forcing_offset)
                    .with_a1_scale(*a1_scale);
                if let Some([x, y]) = normalization_point {
                    m = m.with_normalization_point(Point::new(*x, *y));
                }
                m
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub csv: bool,
    pub json: bool,
    /// Also render SVG plots of the main tables.
    pub svg: bool,
    pub include_wall_clock: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("out"), csv: true, json: true, svg: false, include_wall_clock: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OccupationConfig {
    /// Start point; the normalization point when absent.
    pub start: Option<[f64; 2]>,
    pub tolerance: f64,
}

impl Default for OccupationConfig {
    fn default() -> Self {
        OccupationConfig { start: None, tolerance: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarginalConfig {
    pub start: Option<[f64; 2]>,
    pub bins: usize,
    /// Cells per edge of the graph chain.
    pub generator_cells: usize,
    /// Largest allowed distance at the smallest ε.
    pub tolerance: f64,
}

impl Default for MarginalConfig {
    fn default() -> Self {
        MarginalConfig { start: None, bins: 32, generator_cells: 512, tolerance: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExitTimeConfig {
    /// Smallest slope of the mean transit time γ⁺ → {γ, γ⁺⁺}.
    pub transit_slope_min: f64,
    /// Largest slope of the probability of reaching γ first.
    pub hit_slope_max: f64,
    /// Smallest slope of the mean descent time γ → γ⁻.
    pub descent_slope_min: f64,
}

impl Default for ExitTimeConfig {
    fn default() -> Self {
        ExitTimeConfig { transit_slope_min: 0.7, hit_slope_max: 0.35, descent_slope_min: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub probes: Vec<[f64; 2]>,
    /// When set, the smallest-ε error must lie within
    /// `2 SE + tolerance` of zero.
    pub tolerance: Option<f64>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig { probes: DEFAULT_PROBES.to_vec(), tolerance: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub model: ModelConfig,
    /// The ε ladder, strictly decreasing.
    #[serde(default)]
    pub eps: Vec<f64>,
    #[serde(default = "default_dt_factor")]
    pub dt_factor: f64,
    #[serde(default = "one")]
    pub horizon: f64,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    /// Worker threads; 0 lets the pool pick.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub coefficients: CoefficientOptions,
    #[serde(default)]
    pub feynman_kac: FeynmanKacOptions,
    #[serde(default)]
    pub occupation: OccupationConfig,
    #[serde(default)]
    pub marginals: MarginalConfig,
    #[serde(default)]
    pub exit_times: ExitTimeConfig,
    #[serde(default)]
    pub compare: CompareConfig,
}

fn default_dt_factor() -> f64 {
    DEFAULT_DT_FACTOR
}

fn default_paths() -> usize {
    1000
}

fn default_scheme() -> Scheme {
    Scheme::Adapted
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.experiment.uses_ladder() {
            if self.eps.is_empty() {
                return Err(Error::Config("the eps ladder is empty".into()));
            }
            if self.eps.iter().any(|e| !(*e > 0.0)) {
                return Err(Error::Config("every eps must be positive".into()));
            }
            if self.eps.windows(2).any(|w| !(w[1] < w[0])) {
                return Err(Error::Config("the eps ladder must be strictly decreasing".into()));
            }
            for &eps in &self.eps {
                self.sim(eps).validate().map_err(|e| Error::Config(e.to_string()))?;
            }
        }
        if self.experiment == Experiment::Marginals && self.marginals.bins == 0 {
            return Err(Error::Config("marginals.bins must be positive".into()));
        }
        if self.experiment == Experiment::Compare && self.compare.probes.is_empty() {
            return Err(Error::Config("compare.probes is empty".into()));
        }
        Ok(())
    }

    pub fn sim(&self, eps: f64) -> SimConfig {
        SimConfig::new(eps, self.horizon, self.n_paths, self.seed)
            .with_dt(self.dt_factor * eps)
            .with_scheme(self.scheme)
    }
}

/// A named pass/fail check computed by an experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assertion {
    pub name: String,
    pub value: f64,
    /// Human-readable condition, e.g. `<= 0.05`.
    pub condition: String,
    pub passed: bool,
}

impl Assertion {
    fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Assertion { name: name.into(), value, condition: format!("<= {bound}"), passed: value <= bound }
    }

    fn at_least(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Assertion { name: name.into(), value, condition: format!(">= {bound}"), passed: value >= bound }
    }

    fn decreasing(name: impl Into<String>, values: &[f64]) -> Self {
        let ok = values.windows(2).all(|w| w[1] < w[0]);
        let worst = values.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
        Assertion { name: name.into(), value: worst, condition: "strictly decreasing".into(), passed: ok }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub experiment: Experiment,
    pub out_dir: PathBuf,
    pub files: Vec<String>,
    pub assertions: Vec<Assertion>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }
}

/// A CSV table kept in memory until written.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shortest round-trip text for a float, in exponent form when very large or
/// very small.
pub(crate) fn num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-4..1e16).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

struct Artifacts {
    tables: Vec<(String, Table)>,
    json: Vec<(String, String)>,
    plots: Vec<(String, PlotSpec)>,
    assertions: Vec<Assertion>,
    summary: String,
    extra: BTreeMap<String, serde_json::Value>,
}

impl Artifacts {
    fn new() -> Self {
        Artifacts {
            tables: Vec::new(),
            json: Vec::new(),
            plots: Vec::new(),
            assertions: Vec::new(),
            summary: String::new(),
            extra: BTreeMap::new(),
        }
    }

    fn line(&mut self, text: impl AsRef<str>) {
        self.summary.push_str(text.as_ref());
        self.summary.push('\n');
    }
}

/// Runs the experiment in a worker pool of the configured size.
pub fn run(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let started = Instant::now();
    let artifacts = pool.install(|| execute(config))?;
    let elapsed = started.elapsed().as_secs_f64();
    write_artifacts(config, artifacts, elapsed)
}

fn execute(config: &ExperimentConfig) -> Result<Artifacts> {
    let model = config.model.build();
    let mut a = Artifacts::new();
    a.line(format!("experiment: {}", config.experiment.name()));
    a.line(format!("model: {}", model.name()));
    match config.experiment {
        Experiment::Coefficients => coefficients_experiment(config, &model, &mut a)?,
        Experiment::Occupation => occupation_experiment(config, &model, &mut a)?,
        Experiment::ExitTimes => exit_time_experiment(config, &model, &mut a)?,
        Experiment::Marginals => marginal_experiment(config, &model, &mut a)?,
        Experiment::Bvp => bvp_experiment(config, &model, &mut a)?,
        Experiment::Compare => compare_experiment(config, &model, &mut a)?,
    }
    Ok(a)
}

fn write_artifacts(config: &ExperimentConfig, a: Artifacts, elapsed: f64) -> Result<RunReport> {
    let dir = &config.output.dir;
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    if config.output.csv {
        for (name, table) in &a.tables {
            table.write(&dir.join(name))?;
            files.push(name.clone());
        }
    }
    if config.output.json {
        for (name, text) in &a.json {
            fs::write(dir.join(name), text)?;
            files.push(name.clone());
        }
    }
    if config.output.svg && config.output.csv {
        for (name, spec) in &a.plots {
            let outcome = plot_file(&dir.join(&spec.source), spec)?;
            fs::write(dir.join(name), outcome.svg)?;
            files.push(name.clone());
        }
    }

    let mut summary = a.summary.clone();
    summary.push_str("\nassertions:\n");
    for s in &a.assertions {
        let _ = writeln!(
            summary,
            "  [{}] {}: {} ({})",
            if s.passed { "PASS" } else { "FAIL" },
            s.name,
            s.value,
            s.condition
        );
    }
    fs::write(dir.join("summary.txt"), &summary)?;
    files.push("summary.txt".into());
    files.push("manifest.json".into());

    let mut manifest = serde_json::Map::new();
    manifest.insert("schema_version".into(), MANIFEST_SCHEMA_VERSION.into());
    manifest.insert("experiment".into(), config.experiment.name().into());
    manifest.insert("config".into(), serde_json::to_value(config)?);
    manifest.insert("seed".into(), config.seed.into());
    manifest.insert("rng".into(), RNG_ALGORITHM.into());
    manifest.insert(
        "versions".into(),
        serde_json::json!({ "sticky-averaging": env!("CARGO_PKG_VERSION") }),
    );
    manifest.insert("files".into(), serde_json::to_value(&files)?);
    manifest.insert("assertions".into(), serde_json::to_value(&a.assertions)?);
    manifest.insert("passed".into(), a.assertions.iter().all(|s| s.passed).into());
    for (k, v) in a.extra {
        manifest.insert(k, v);
    }
    if config.output.include_wall_clock {
        manifest.insert("wall_clock_seconds".into(), elapsed.into());
    }
    let text = serde_json::to_string_pretty(&serde_json::Value::Object(manifest))?;
    fs::write(dir.join("manifest.json"), text + "\n")?;

    Ok(RunReport { experiment: config.experiment, out_dir: dir.clone(), files, assertions: a.assertions })
}

/// Machine-readable description of a failed run.
pub fn error_json(err: &Error) -> String {
    let kind = match err {
        Error::Config(_) => "config",
        Error::Io(_) => "io",
        Error::Incompatible { .. } => "incompatible",
        Error::MissingColumn(_) => "missing-column",
        _ => "runtime",
    };
    serde_json::to_string_pretty(&serde_json::json!({ "error": kind, "message": err.to_string() }))
        .expect("plain JSON value")
}

fn point(p: Option<[f64; 2]>, model: &dyn Model) -> Point {
    p.map_or_else(|| model.normalization_point(), |[x, y]| Point::new(x, y))
}

/// Closed forms for the annulus: `M = 2π`, `ā = κ(2h+1)`, `p = 2πκ`,
/// `Vol(E) = 3π`, and `f̄(O) = 2/9 + offset` for the radial forcing.
fn annulus_closed_form_errors(config: &ExperimentConfig, c: &EdgeCoefficients) -> Option<f64> {
    let ModelConfig::Annulus { forcing, forcing_offset, a1_scale, .. } = &config.model;
    use std::f64::consts::PI;
    let rel = |got: f64, want: f64| (got - want).abs() / want.abs().max(1e-300);
    let e = c.edges.first()?;
    let mut worst: f64 = 0.0;
    for (j, &h) in e.h.iter().enumerate() {
        worst = worst.max(rel(e.normalizing[j], 2.0 * PI));
        if j > 0 {
            worst = worst.max(rel(e.abar[j], a1_scale * (2.0 * h + 1.0)));
        }
    }
    worst = worst.max(rel(e.p, 2.0 * PI * a1_scale));
    worst = worst.max(rel(c.exterior_volume, 3.0 * PI));
    if *forcing == Forcing::Radial {
        worst = worst.max(rel(c.exterior_forcing_mean, 2.0 / 9.0 + forcing_offset));
    }
    Some(worst)
}

fn coefficient_table(c: &EdgeCoefficients) -> Table {
    let mut t = Table::new(&["edge", "h", "normalizing", "abar", "fbar", "volume", "forcing"]);
    for (k, e) in c.edges.iter().enumerate() {
        for j in 0..e.h.len() {
            t.push(vec![
                k.to_string(),
                num(e.h[j]),
                num(e.normalizing[j]),
                num(e.abar[j]),
                num(e.fbar[j]),
                num(e.volume[j]),
                num(e.forcing[j]),
            ]);
        }
    }
    t
}

fn compatibility_assertion(c: &EdgeCoefficients) -> Assertion {
    let scale = c.exterior_volume * c.exterior_forcing_mean.abs()
        + c.edges.iter().map(|e| e.well_forcing().abs()).sum::<f64>();
    let bound = 1e-6 * scale.max(c.total_volume() * 1e-3) + 3.0 * c.exterior_standard_error;
    Assertion::at_most("compatibility residual", c.compatibility_residual().abs(), bound)
}

fn coefficients_experiment(config: &ExperimentConfig, model: &dyn Model, a: &mut Artifacts) -> Result<()> {
    let report = validate(model, 1000, &Tolerances::default())?;
    for check in &report.checks {
        a.assertions.push(Assertion {
            name: format!("model {}", check.name),
            value: check.worst,
            condition: format!("<= {}", check.tolerance),
            passed: check.passed,
        });
    }
    let c = compute_coefficients(model, &config.coefficients)?;
    a.line(format!("Vol(E) = {}", c.exterior_volume));
    a.line(format!("mean forcing on E = {}", c.exterior_forcing_mean));
    for (k, e) in c.edges.iter().enumerate() {
        a.line(format!("edge {k}: minimum {}, p = {}, area = {}, nodes = {}", e.minimum, e.p, e.well_volume(), e.curve_nodes));
    }
    a.assertions.push(compatibility_assertion(&c));
    if let Some(err) = annulus_closed_form_errors(config, &c) {
        a.assertions.push(Assertion::at_most("closed forms (relative)", err, 1e-6));
    }
    a.tables.push(("coefficients.csv".into(), coefficient_table(&c)));
    a.json.push(("coefficients.json".into(), c.to_json()?));
    a.plots.push((
        "coefficients.svg".into(),
        PlotSpec::line("coefficients.csv", "h", "abar").titled("averaged diffusion along the edge"),
    ));
    Ok(())
}

fn occupation_experiment(config: &ExperimentConfig, model: &dyn Model, a: &mut Artifacts) -> Result<()> {
    let coarse = compute_coefficients(model, &CoefficientOptions { cells: 16, ..config.coefficients })?;
    let target = coarse.exterior_volume / coarse.total_volume();
    let x0 = point(config.occupation.start, model);
    let mut paths = Table::new(&["eps", "path", "fraction", "rng", "seed"]);
    let mut summary = Table::new(&["eps", "mean", "standard_error", "n_paths", "target", "rng", "seed"]);
    for &eps in &config.eps {
        let out = simulate_occupation(model, &config.sim(eps), &x0)?;
        for (i, f) in out.fractions.iter().enumerate() {
            paths.push(vec![num(eps), i.to_string(), num(*f), RNG_ALGORITHM.into(), config.seed.to_string()]);
        }
        summary.push(vec![
            num(eps),
            num(out.mean),
            num(out.standard_error),
            out.n_paths.to_string(),
            num(target),
            RNG_ALGORITHM.into(),
            config.seed.to_string(),
        ]);
        a.line(format!("eps {eps}: occupation {} ± {} (target {target})", out.mean, out.standard_error));
        a.assertions.push(Assertion::at_most(
            format!("occupation error at eps {eps}"),
            (out.mean - target).abs(),
            config.occupation.tolerance,
        ));
    }
    a.tables.push(("occupation.csv".into(), summary));
    a.tables.push(("occupation_paths.csv".into(), paths));
    Ok(())
}

/// Levels of the exit-time experiments: `γ⁺ = ε^{1/4}`, `γ⁺⁺ = 2ε^{1/4}`,
/// `γ⁻ = −ε^{1/2}`.
pub fn exit_levels(eps: f64) -> (f64, f64, f64) {
    (eps.powf(0.25), 2.0 * eps.powf(0.25), -eps.sqrt())
}

fn exit_time_experiment(config: &ExperimentConfig, model: &dyn Model, a: &mut Artifacts) -> Result<()> {
    let mut table = Table::new(&[
        "eps",
        "scenario",
        "mean",
        "standard_error",
        "count",
        "censored",
        "hit_gamma",
        "rng",
        "seed",
    ]);
    let mut paths = Table::new(&["eps", "scenario", "path", "time", "target", "rng", "seed"]);
    let (mut transit, mut hit, mut descent) = (Vec::new(), Vec::new(), Vec::new());
    for &eps in &config.eps {
        let (plus, plus_plus, minus) = exit_levels(eps);
        let sim = config.sim(eps);
        let scenarios = [
            (
                "transit",
                Start::LevelCurve { k: 0, h: plus },
                vec![Target::Level { k: 0, h: 0.0 }, Target::Level { k: 0, h: plus_plus }],
            ),
            ("descent", Start::LevelCurve { k: 0, h: 0.0 }, vec![Target::Level { k: 0, h: minus }]),
        ];
        for (name, start, targets) in scenarios {
            let s = estimate_exit_time(model, &sim, &start, &targets)?;
            let hit_gamma = if name == "transit" { s.hit_frequencies[0] } else { f64::NAN };
            table.push(vec![
                num(eps),
                name.into(),
                num(s.mean),
                num(s.standard_error),
                s.count.to_string(),
                s.censored.to_string(),
                num(hit_gamma),
                RNG_ALGORITHM.into(),
                config.seed.to_string(),
            ]);
            for (i, r) in s.records.iter().enumerate() {
                paths.push(vec![
                    num(eps),
                    name.into(),
                    i.to_string(),
                    num(r.time),
                    r.target.map_or_else(|| "censored".to_string(), |t| t.to_string()),
                    RNG_ALGORITHM.into(),
                    config.seed.to_string(),
                ]);
            }
            a.line(format!(
                "eps {eps} {name}: mean {} ± {}, censored {}/{}{}",
                s.mean,
                s.standard_error,
                s.censored,
                s.n_paths,
                if name == "transit" { format!(", P(hit gamma) = {hit_gamma}") } else { String::new() }
            ));
            if s.censored > 0 {
                a.assertions.push(Assertion::at_most(format!("{name} censoring at eps {eps}"), s.censored as f64, 0.0));
            }
            if name == "transit" {
                transit.push(s.mean);
                hit.push(hit_gamma);
            } else {
                descent.push(s.mean);
            }
        }
    }
    if config.eps.len() >= 2 {
        let cfg = &config.exit_times;
        let slope = |y: &[f64]| loglog_slope(&config.eps, y).unwrap_or(f64::NAN);
        let (st, sh, sd) = (slope(&transit), slope(&hit), slope(&descent));
        a.line(format!("log-log slopes: transit {st}, hit {sh}, descent {sd}"));
        a.assertions.push(Assertion::at_least("transit time slope", st, cfg.transit_slope_min));
        a.assertions.push(Assertion::at_most("hit probability slope", sh, cfg.hit_slope_max));
        a.assertions.push(Assertion::decreasing("descent time", &descent));
        a.assertions.push(Assertion::at_least("descent time slope", sd, cfg.descent_slope_min));
        a.extra.insert("slopes".into(), serde_json::json!({ "transit": st, "hit": sh, "descent": sd }));
    }
    a.tables.push(("exit_times.csv".into(), table));
    a.tables.push(("exit_paths.csv".into(), paths));
    a.plots.push((
        "exit_times.svg".into(),
        PlotSpec::loglog("exit_times.csv", "eps", "mean")
            .grouped("scenario")
            .titled("mean exit times against eps"),
    ));
    Ok(())
}

fn marginal_experiment(config: &ExperimentConfig, model: &dyn Model, a: &mut Artifacts) -> Result<()> {
    let mc = &config.marginals;
    let coeffs = compute_coefficients(model, &config.coefficients)?;
    let gen = build_generator(&coeffs, mc.generator_cells)?;
    let x0 = point(mc.start, model);
    let y0 = identify(model, &x0)?;
    let limit = marginal_at(&gen, &gen.initial_distribution(&y0)?, config.horizon)?;
    let limit = gen.bin(&limit, mc.bins);

    let mut table =
        Table::new(&["eps", "edge", "bin", "h_low", "h_high", "empirical", "limit", "rng", "seed"]);
    let mut distances = Table::new(&["eps", "total_variation", "n_paths", "rng", "seed"]);
    let mut tvs = Vec::new();
    for &eps in &config.eps {
        let emp = empirical_marginal(model, &config.sim(eps), &x0, config.horizon, mc.bins)?;
        let tv = emp.law.total_variation(&limit);
        tvs.push(tv);
        table.push(vec![
            num(eps),
            "root".into(),
            "0".into(),
            "0".into(),
            "0".into(),
            num(emp.law.root),
            num(limit.root),
            RNG_ALGORITHM.into(),
            config.seed.to_string(),
        ]);
        for (k, (e, l)) in emp.law.edges.iter().zip(&limit.edges).enumerate() {
            let m = limit.minima[k];
            let w = -m / mc.bins as f64;
            for b in 0..mc.bins {
                table.push(vec![
                    num(eps),
                    k.to_string(),
                    b.to_string(),
                    num(m + w * b as f64),
                    num(m + w * (b + 1) as f64),
                    num(e[b]),
                    num(l[b]),
                    RNG_ALGORITHM.into(),
                    config.seed.to_string(),
                ]);
            }
        }
        distances.push(vec![num(eps), num(tv), config.n_paths.to_string(), RNG_ALGORITHM.into(), config.seed.to_string()]);
        a.line(format!("eps {eps}: total variation {tv} (root mass {} vs {})", emp.law.root, limit.root));
    }
    if tvs.len() >= 2 {
        a.assertions.push(Assertion::decreasing("total variation", &tvs));
    }
    a.assertions.push(Assertion::at_most("total variation at smallest eps", *tvs.last().unwrap(), mc.tolerance));
    a.tables.push(("marginals.csv".into(), table));
    a.tables.push(("marginal_distance.csv".into(), distances));
    a.plots.push((
        "marginal_distance.svg".into(),
        PlotSpec::loglog("marginal_distance.csv", "eps", "total_variation").titled("distance to the graph law"),
    ));
    Ok(())
}

fn bvp_experiment(config: &ExperimentConfig, model: &dyn Model, a: &mut Artifacts) -> Result<()> {
    let coeffs = compute_coefficients(model, &config.coefficients)?;
    a.assertions.push(compatibility_assertion(&coeffs));
    let anchor = identify(model, &model.normalization_point())?;
    let sol = solve_bvp(&coeffs, &anchor)?;
    a.line(format!("v(O) = {}", sol.root));
    for (k, e) in sol.edges.iter().enumerate() {
        a.line(format!("edge {k}: v'(0-) = {}, v(m) = {}", e.outer_slope, e.v[0]));
    }
    a.assertions.push(Assertion::at_most(
        "gluing residual",
        sol.gluing_residual.abs(),
        1e-8 * sol.gluing_scale.max(f64::MIN_POSITIVE),
    ));
    let mut buf = Vec::new();
    sol.write_csv(&mut buf)?;
    let text = String::from_utf8(buf).expect("csv output is UTF-8");
    let mut table = Table::new(&["edge", "h", "v", "flux"]);
    for line in text.lines().skip(1) {
        table.push(line.split(',').map(str::to_string).collect());
    }
    a.tables.push(("bvp.csv".into(), table));
    a.json.push(("bvp.json".into(), sol.to_json()?));
    a.plots.push(("bvp.svg".into(), PlotSpec::line("bvp.csv", "h", "v").titled("limit solution along the edge")));
    Ok(())
}

fn compare_experiment(config: &ExperimentConfig, model: &dyn Model, a: &mut Artifacts) -> Result<()> {
    let coeffs = compute_coefficients(model, &config.coefficients)?;
    let sol = solve_bvp(&coeffs, &identify(model, &model.normalization_point())?)?;
    let probes: Vec<Point> = config.compare.probes.iter().map(|[x, y]| Point::new(*x, *y)).collect();
    let limits = probes
        .iter()
        .map(|p| evaluate(&sol, &identify(model, p)?))
        .collect::<Result<Vec<_>>>()?;
    a.extra.insert("probes".into(), serde_json::to_value(&config.compare.probes)?);

    let mut table = Table::new(&[
        "eps",
        "x",
        "y",
        "u_hat",
        "standard_error",
        "v",
        "abs_error",
        "tail_mean",
        "tail_standard_error",
        "tail_warning",
        "rng",
        "seed",
    ]);
    let mut summary = Table::new(&["eps", "max_abs_error", "standard_error_at_max", "rng", "seed"]);
    let mut worst = Vec::new();
    let mut worst_se = Vec::new();
    for &eps in &config.eps {
        let est = feynman_kac_probes(model, &config.sim(eps), &probes, &config.feynman_kac)?;
        let mut max = (0.0, 0.0);
        for (e, v) in est.iter().zip(&limits) {
            let err = (e.value - v).abs();
            if err >= max.0 {
                max = (err, e.standard_error);
            }
            table.push(vec![
                num(eps),
                num(e.x[0]),
                num(e.x[1]),
                num(e.value),
                num(e.standard_error),
                num(*v),
                num(err),
                num(e.tail_mean),
                num(e.tail_standard_error),
                e.tail_warning.to_string(),
                RNG_ALGORITHM.into(),
                config.seed.to_string(),
            ]);
        }
        a.line(format!("eps {eps}: max |u - v| = {} (SE {})", max.0, max.1));
        summary.push(vec![num(eps), num(max.0), num(max.1), RNG_ALGORITHM.into(), config.seed.to_string()]);
        worst.push(max.0);
        worst_se.push(max.1);
    }
    if worst.len() >= 2 {
        a.assertions.push(Assertion::decreasing("max probe error", &worst));
    }
    if let Some(tol) = config.compare.tolerance {
        let (w, se) = (*worst.last().unwrap(), *worst_se.last().unwrap());
        a.assertions.push(Assertion::at_most("max probe error at smallest eps", w, 2.0 * se + tol));
    }
    a.tables.push(("compare.csv".into(), table));
    a.tables.push(("compare_summary.csv".into(), summary));
    a.plots.push((
        "compare.svg".into(),
        PlotSpec::loglog("compare_summary.csv", "eps", "max_abs_error").titled("distance to the graph limit"),
    ));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::from_toml(text)
    }

    #[test]
    fn ladder_validation() {
        assert!(matches!(parse("experiment = \"compare\"\neps = []"), Err(Error::Config(_))));
        assert!(parse("experiment = \"compare\"\neps = [0.01, 0.1]").is_err());
        assert!(parse("experiment = \"compare\"\neps = [0.1, 0.1]").is_err());
        assert!(parse("experiment = \"compare\"\neps = [0.1, -0.01]").is_err());
        assert!(parse("experiment = \"compare\"\neps = [0.1, 0.03]").is_ok());
        assert!(parse("experiment = \"bvp\"").is_ok());
    }

    #[test]
    fn unknown_experiment_or_field_is_rejected() {
        assert!(parse("experiment = \"teleport\"").is_err());
        assert!(parse("experiment = \"bvp\"\ncolour = 3").is_err());
    }

    #[test]
    fn nested_tables_parse() {
        let c = parse(
            r#"
            experiment = "marginals"
            eps = [0.1]
            seed = 9
            [model]
            kind = "annulus"
            forcing = { kind = "constant", value = 0.0 }
            [marginals]
            bins = 8
            [feynman_kac]
            t_max = 1.5
            "#,
        )
        .unwrap();
        assert_eq!(c.marginals.bins, 8);
        assert_eq!(c.feynman_kac.t_max, 1.5);
        assert_eq!(c.seed, 9);
        assert_eq!(c.model.build().forcing, Forcing::Constant { value: 0.0 });
    }

    #[test]
    fn error_json_is_machine_readable() {
        let v: serde_json::Value = serde_json::from_str(&error_json(&Error::Config("bad".into()))).unwrap();
        assert_eq!(v["error"], "config");
    }
}
