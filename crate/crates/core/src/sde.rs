//! Simulation of the reflected two-scale diffusion `X_t^ε` with generator
//! `(1/ε) L0 + L1`.
//!
//! In Cartesian coordinates the Euler–Maruyama step is
//!
//! ```text
//! x' = x + [ (1/2ε) ∇·a0 + ½ ∇·a1 ] dt + ε^{-1/2} σ0 ΔW⁰ + σ1 ΔW¹
//! ```
//!
//! followed by a reflection along the co-normal if `x'` leaves the domain.
//! Models may supply a step in coordinates adapted to their fast motion
//! (see [`Model::adapted_step`]); [`Scheme::Adapted`] uses it when present.
//!
//! Every path draws from its own ChaCha8 stream, selected by the path index,
//! so results do not depend on how paths are spread over worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{identify, trace_level_curve, Graph, GraphPoint};
use crate::model::{conormal_at, Model, Point, Region};
use crate::stats::{fit_line, mean_and_se};

pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha), stream = path index";

/// Largest allowed `dt / ε`.
pub const MAX_DT_FACTOR: f64 = 0.05;
pub const DEFAULT_DT_FACTOR: f64 = 0.01;

/// Censoring cap of the exit-time estimator, in units of the horizon.
pub const EXIT_CAP_FACTOR: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// The model's adapted step when it has one, Cartesian otherwise.
    Adapted,
    Cartesian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub eps: f64,
    pub dt: f64,
    /// Simulation horizon `T`.
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub scheme: Scheme,
}

impl SimConfig {
    /// `dt = 0.01 ε`, adapted scheme.
    pub fn new(eps: f64, horizon: f64, n_paths: usize, seed: u64) -> Self {
        SimConfig { eps, dt: DEFAULT_DT_FACTOR * eps, horizon, n_paths, seed, scheme: Scheme::Adapted }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::InvalidArgument(format!("eps must be positive, got {}", self.eps)));
        }
        if !(self.dt > 0.0) || self.dt > MAX_DT_FACTOR * self.eps * (1.0 + 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "dt = {} must lie in (0, {MAX_DT_FACTOR} eps]",
                self.dt
            )));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.n_paths == 0 {
            return Err(Error::InvalidArgument("n_paths must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of steps covering `[0, t]`.
    pub fn steps(&self, t: f64) -> usize {
        (t / self.dt).round() as usize
    }
}

/// Standard normal draws driving one step; the Brownian increments are
/// `√dt · fast` and `√dt · slow`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Noise {
    pub fast: [f64; 2],
    pub slow: [f64; 2],
}

impl Noise {
    pub fn sample(rng: &mut impl Rng) -> Self {
        Noise {
            fast: [rng.sample(StandardNormal), rng.sample(StandardNormal)],
            slow: [rng.sample(StandardNormal), rng.sample(StandardNormal)],
        }
    }

    fn combine(&self, other: &Noise, sign: f64) -> Noise {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Noise {
            fast: [s * (self.fast[0] + sign * other.fast[0]), s * (self.fast[1] + sign * other.fast[1])],
            slow: [s * (self.slow[0] + sign * other.slow[0]), s * (self.slow[1] + sign * other.slow[1])],
        }
    }
}

pub fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

/// Runs `f` for paths `0..n` and returns the results in path order.
pub fn run_paths<T: Send>(n: usize, seed: u64, f: impl Fn(usize, &mut ChaCha8Rng) -> T + Sync + Send) -> Vec<T> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i as u64);
            f(i, &mut rng)
        })
        .collect()
}

fn cartesian_proposal(model: &dyn Model, eps: f64, x: &Point, dt: f64, noise: &Noise) -> Point {
    let drift = model.div_a0(x) * (0.5 / eps) + model.div_a1(x) * 0.5;
    let z0 = Point::new(noise.fast[0], noise.fast[1]);
    let z1 = Point::new(noise.slow[0], noise.slow[1]);
    x + drift * dt + model.sigma0(x) * z0 * (dt / eps).sqrt() + model.sigma1(x) * z1 * dt.sqrt()
}

fn proposal_dt(model: &dyn Model, eps: f64, scheme: Scheme, x: &Point, dt: f64, noise: &Noise) -> Point {
    match scheme {
        Scheme::Adapted => model
            .adapted_step(x, eps, dt, noise)
            .unwrap_or_else(|| cartesian_proposal(model, eps, x, dt, noise)),
        Scheme::Cartesian => cartesian_proposal(model, eps, x, dt, noise),
    }
}

/// Unreflected increment from `x`.
pub fn proposal(model: &dyn Model, config: &SimConfig, x: &Point, noise: &Noise) -> Point {
    proposal_dt(model, config.eps, config.scheme, x, config.dt, noise)
}

/// Pulls a point outside `G` back inside along the co-normal at the nearest
/// boundary point, by twice its normal overshoot. On the annulus this maps
/// radius `r` to `4 − r`.
pub fn reflect(model: &dyn Model, eps: f64, p: &Point) -> Point {
    let mut q = *p;
    for _ in 0..16 {
        if model.contains(&q) {
            return q;
        }
        let b = model.boundary_projection(&q);
        let gamma = conormal_at(model, &b, eps);
        let along = gamma.dot(&b.inward_normal).max(1e-12);
        q += gamma * (2.0 * b.distance / along);
    }
    let b = model.boundary_projection(&q);
    b.point + b.inward_normal * (1e-12 * model.diameter())
}

/// One Euler step with reflection.
pub fn step(model: &dyn Model, config: &SimConfig, x: &Point, noise: &Noise) -> Result<Point> {
    let p = proposal(model, config, x, noise);
    finish(model, config.eps, x, p)
}

fn finish(model: &dyn Model, eps: f64, x: &Point, p: Point) -> Result<Point> {
    if !(p.x.is_finite() && p.y.is_finite()) {
        return Err(Error::NonFiniteState { last_valid: *x });
    }
    let next = reflect(model, eps, &p);
    debug_assert!(model.contains(&next), "state left the domain: {next:?}");
    Ok(next)
}

const MAX_HALVINGS: u32 = 12;

fn advance_dt(
    model: &dyn Model,
    config: &SimConfig,
    x: &Point,
    dt: f64,
    noise: &Noise,
    rng: &mut ChaCha8Rng,
    depth: u32,
) -> Result<Point> {
    let p = proposal_dt(model, config.eps, config.scheme, x, dt, noise);
    let cap = 0.1 * model.diameter();
    if depth < MAX_HALVINGS && p.x.is_finite() && p.y.is_finite() && (p - x).norm() > cap {
        // Brownian bridge split: the two half-step increments sum to the
        // rejected one.
        let extra = Noise::sample(rng);
        let first = noise.combine(&extra, 1.0);
        let second = noise.combine(&extra, -1.0);
        let mid = advance_dt(model, config, x, 0.5 * dt, &first, rng, depth + 1)?;
        return advance_dt(model, config, &mid, 0.5 * dt, &second, rng, depth + 1);
    }
    finish(model, config.eps, x, p)
}

/// One step of size `config.dt` with displacement capping: a step moving
/// further than a tenth of the diameter is rejected and redone as two half
/// steps.
pub fn advance(model: &dyn Model, config: &SimConfig, x: &Point, rng: &mut ChaCha8Rng) -> Result<Point> {
    let noise = Noise::sample(rng);
    advance_dt(model, config, x, config.dt, &noise, rng, 0)
}

fn check_start(model: &dyn Model, x0: &Point) -> Result<()> {
    if model.contains(x0) {
        Ok(())
    } else {
        Err(Error::OutsideDomain(*x0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OccupationStats {
    pub mean: f64,
    pub standard_error: f64,
    pub n_paths: usize,
    /// Per-path fraction of time spent in the exterior region.
    pub fractions: Vec<f64>,
}

/// Fraction of `[0, T]` spent in the exterior region, averaged over paths.
pub fn simulate_occupation(model: &dyn Model, config: &SimConfig, x0: &Point) -> Result<OccupationStats> {
    config.validate()?;
    check_start(model, x0)?;
    let steps = config.steps(config.horizon).max(1);
    let fractions = run_paths(config.n_paths, config.seed, |_, rng| -> Result<f64> {
        let mut x = *x0;
        let mut inside = 0usize;
        for _ in 0..steps {
            if model.region(&x) == Region::Exterior {
                inside += 1;
            }
            x = advance(model, config, &x, rng)?;
        }
        Ok(inside as f64 / steps as f64)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let (mean, standard_error) = mean_and_se(&fractions);
    Ok(OccupationStats { mean, standard_error, n_paths: config.n_paths, fractions })
}

/// Where exit-time paths start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Start {
    Point(Point),
    /// Uniform in arc length on the level curve `H_k = h` (`h` may be
    /// positive: the extended first integral).
    LevelCurve { k: usize, h: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Target {
    /// The level set `H_k = h` of the extended first integral.
    Level { k: usize, h: f64 },
    /// Points within `tolerance` of the outer boundary.
    Boundary { tolerance: f64 },
}

const LEVEL_TOLERANCE: f64 = 1e-12;

impl Target {
    fn offset(&self, model: &dyn Model, x: &Point) -> f64 {
        match *self {
            Target::Level { k, h } => model.first_integral(k, x) - h,
            Target::Boundary { tolerance } => model.boundary_projection(x).distance + tolerance,
        }
    }

    fn on_target(&self, model: &dyn Model, x: &Point) -> bool {
        let off = self.offset(model, x);
        match *self {
            Target::Level { h, .. } => off.abs() <= LEVEL_TOLERANCE * (1.0 + h.abs()),
            Target::Boundary { .. } => off >= 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExitRecord {
    pub time: f64,
    /// Index of the first target hit, `None` when censored.
    pub target: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExitTimeStats {
    /// Mean over uncensored paths.
    pub mean: f64,
    pub standard_error: f64,
    /// Uncensored paths.
    pub count: usize,
    pub censored: usize,
    pub n_paths: usize,
    /// Fraction of uncensored paths that hit each target first.
    pub hit_frequencies: Vec<f64>,
    pub records: Vec<ExitRecord>,
}

impl ExitTimeStats {
    pub fn censoring_fraction(&self) -> f64 {
        self.censored as f64 / self.n_paths as f64
    }
}

/// First time the path reaches any of `targets`, and which one.
///
/// A level target counts as reached when `H_k − h` changes sign relative to
/// the start. Paths still running at `100 T` are censored and reported.
pub fn estimate_exit_time(
    model: &dyn Model,
    config: &SimConfig,
    start: &Start,
    targets: &[Target],
) -> Result<ExitTimeStats> {
    config.validate()?;
    if targets.is_empty() {
        return Err(Error::InvalidArgument("no exit targets".into()));
    }
    let start_curve = match *start {
        Start::Point(p) => {
            check_start(model, &p)?;
            None
        }
        Start::LevelCurve { k, h } => {
            let curve = trace_level_curve(model, k, h, 512)?;
            if let Some(p) = curve.points.iter().find(|p| !model.contains(p)) {
                return Err(Error::OutsideDomain(*p));
            }
            let total: f64 = curve.weights.iter().sum();
            let mut cdf = Vec::with_capacity(curve.weights.len());
            let mut acc = 0.0;
            for w in &curve.weights {
                acc += w / total;
                cdf.push(acc);
            }
            Some((curve.points, cdf))
        }
    };
    let max_steps = config.steps(EXIT_CAP_FACTOR * config.horizon).max(1);

    let records = run_paths(config.n_paths, config.seed, |_, rng| -> Result<ExitRecord> {
        let x0 = match (&start_curve, start) {
            (Some((points, cdf)), _) => {
                let u: f64 = rng.random();
                let idx = cdf.partition_point(|c| *c < u).min(points.len() - 1);
                points[idx]
            }
            (None, Start::Point(p)) => *p,
            (None, Start::LevelCurve { .. }) => unreachable!(),
        };
        if let Some(i) = targets.iter().position(|t| t.on_target(model, &x0)) {
            return Ok(ExitRecord { time: 0.0, target: Some(i) });
        }
        let sides: Vec<bool> = targets.iter().map(|t| t.offset(model, &x0) > 0.0).collect();
        let mut x = x0;
        for n in 1..=max_steps {
            x = advance(model, config, &x, rng)?;
            for (i, t) in targets.iter().enumerate() {
                let off = t.offset(model, &x);
                if off == 0.0 || (off > 0.0) != sides[i] {
                    return Ok(ExitRecord { time: n as f64 * config.dt, target: Some(i) });
                }
            }
        }
        Ok(ExitRecord { time: max_steps as f64 * config.dt, target: None })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let times: Vec<f64> = records.iter().filter(|r| r.target.is_some()).map(|r| r.time).collect();
    let count = times.len();
    let (mean, standard_error) = if count > 0 { mean_and_se(&times) } else { (f64::NAN, f64::NAN) };
    let mut hits = vec![0usize; targets.len()];
    for r in &records {
        if let Some(i) = r.target {
            hits[i] += 1;
        }
    }
    let hit_frequencies = hits.iter().map(|&h| if count > 0 { h as f64 / count as f64 } else { 0.0 }).collect();
    Ok(ExitTimeStats {
        mean,
        standard_error,
        count,
        censored: config.n_paths - count,
        n_paths: config.n_paths,
        hit_frequencies,
        records,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeynmanKacOptions {
    /// Truncation time of the two time integrals.
    pub t_max: f64,
    /// Drive the paths from `x` and from `x_O` with the same noise.
    pub common_random_numbers: bool,
    /// Time bins used for the decay diagnostic.
    pub time_bins: usize,
    /// Fraction of `[0, t_max]` (at the end) checked for decay.
    pub tail_fraction: f64,
}

impl Default for FeynmanKacOptions {
    fn default() -> Self {
        FeynmanKacOptions { t_max: 3.0, common_random_numbers: true, time_bins: 50, tail_fraction: 0.2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeynmanKacEstimate {
    pub x: [f64; 2],
    /// `−∫₀^{t_max} E_x f dt + ∫₀^{t_max} E_{x_O} f dt`.
    pub value: f64,
    pub standard_error: f64,
    /// Mean of `Ê_x f − Ê_{x_O} f` over the tail window.
    pub tail_mean: f64,
    pub tail_standard_error: f64,
    /// Least-squares slope of the same difference over the tail window.
    pub tail_slope: f64,
    /// The tail has not decayed to within three standard errors of zero.
    pub tail_warning: bool,
}

struct ForcingPath {
    integral: f64,
    bins: Vec<f64>,
}

fn forcing_path(
    model: &dyn Model,
    config: &SimConfig,
    x0: &Point,
    steps: usize,
    bins: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ForcingPath> {
    let mut x = *x0;
    let mut integral = 0.0;
    let mut bin_sums = vec![0.0; bins];
    let mut bin_counts = vec![0usize; bins];
    for n in 0..steps {
        let f = model.forcing(&x);
        integral += f * config.dt;
        let b = (n * bins / steps).min(bins - 1);
        bin_sums[b] += f;
        bin_counts[b] += 1;
        x = advance(model, config, &x, rng)?;
    }
    let bins = bin_sums.iter().zip(&bin_counts).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect();
    Ok(ForcingPath { integral, bins })
}

const PROBE_SEED_STRIDE: u64 = 0x9e37_79b9_7f4a_7c15;

/// Feynman–Kac estimates of the normalized Neumann solution at several
/// points, sharing the reference integrals from `x_O`.
pub fn feynman_kac_probes(
    model: &dyn Model,
    config: &SimConfig,
    probes: &[Point],
    opts: &FeynmanKacOptions,
) -> Result<Vec<FeynmanKacEstimate>> {
    config.validate()?;
    if !(opts.t_max > 0.0) || opts.time_bins == 0 {
        return Err(Error::InvalidArgument("t_max must be positive and time_bins nonzero".into()));
    }
    let x_o = model.normalization_point();
    check_start(model, &x_o)?;
    for p in probes {
        check_start(model, p)?;
    }
    let steps = config.steps(opts.t_max).max(1);
    let bins = opts.time_bins.min(steps);
    let reference = run_paths(config.n_paths, config.seed, |_, rng| forcing_path(model, config, &x_o, steps, bins, rng))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let tail_start = ((1.0 - opts.tail_fraction.clamp(0.0, 1.0)) * bins as f64).floor() as usize;
    let tail_start = tail_start.min(bins - 1);
    let bin_width = opts.t_max / bins as f64;

    let mut out = Vec::with_capacity(probes.len());
    for (pi, x) in probes.iter().enumerate() {
        if *x == x_o {
            out.push(FeynmanKacEstimate {
                x: [x.x, x.y],
                value: 0.0,
                standard_error: 0.0,
                tail_mean: 0.0,
                tail_standard_error: 0.0,
                tail_slope: 0.0,
                tail_warning: false,
            });
            continue;
        }
        let seed = if opts.common_random_numbers {
            config.seed
        } else {
            config.seed.wrapping_add(PROBE_SEED_STRIDE.wrapping_mul(pi as u64 + 1))
        };
        let paths = run_paths(config.n_paths, seed, |_, rng| forcing_path(model, config, x, steps, bins, rng))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let diffs: Vec<f64> = paths.iter().zip(&reference).map(|(p, r)| r.integral - p.integral).collect();
        let (value, standard_error) = mean_and_se(&diffs);

        let tails: Vec<f64> = paths
            .iter()
            .zip(&reference)
            .map(|(p, r)| {
                let n = bins - tail_start;
                (tail_start..bins).map(|b| p.bins[b] - r.bins[b]).sum::<f64>() / n as f64
            })
            .collect();
        let (tail_mean, tail_standard_error) = mean_and_se(&tails);
        let (tx, ty): (Vec<f64>, Vec<f64>) = (tail_start..bins)
            .map(|b| {
                let (m, _) = mean_and_se(&paths.iter().zip(&reference).map(|(p, r)| p.bins[b] - r.bins[b]).collect::<Vec<_>>());
                ((b as f64 + 0.5) * bin_width, m)
            })
            .unzip();
        let tail_slope = fit_line(&tx, &ty).map(|f| f.slope).unwrap_or(0.0);
        out.push(FeynmanKacEstimate {
            x: [x.x, x.y],
            value,
            standard_error,
            tail_mean,
            tail_standard_error,
            tail_slope,
            tail_warning: tail_mean.abs() > 3.0 * tail_standard_error,
        });
    }
    Ok(out)
}

/// Feynman–Kac estimate of `u^ε(x)` normalized by `u^ε(x_O) = 0`.
pub fn feynman_kac_u(
    model: &dyn Model,
    config: &SimConfig,
    x: &Point,
    opts: &FeynmanKacOptions,
) -> Result<FeynmanKacEstimate> {
    Ok(feynman_kac_probes(model, config, std::slice::from_ref(x), opts)?.remove(0))
}

/// Law of a graph-valued random variable: an atom at the root and binned
/// masses on each edge (bins uniform in `h` over `[m_k, 0]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedLaw {
    pub root: f64,
    pub edges: Vec<Vec<f64>>,
    pub minima: Vec<f64>,
}

impl BinnedLaw {
    pub fn empty(graph: &Graph, bins: usize) -> Self {
        BinnedLaw {
            root: 0.0,
            edges: vec![vec![0.0; bins]; graph.edge_count()],
            minima: (0..graph.edge_count()).map(|k| graph.minimum(k)).collect(),
        }
    }

    pub fn bins(&self) -> usize {
        self.edges.first().map_or(0, |e| e.len())
    }

    pub fn bin_index(&self, k: usize, h: f64) -> usize {
        let bins = self.bins();
        let m = self.minima[k];
        (((h - m) / -m * bins as f64).floor().max(0.0) as usize).min(bins - 1)
    }

    pub fn add(&mut self, y: &GraphPoint, mass: f64) {
        match y.normalized() {
            GraphPoint::Root => self.root += mass,
            GraphPoint::Edge { k, h } => {
                let b = self.bin_index(k, h);
                self.edges[k][b] += mass;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.root *= factor;
        self.edges.iter_mut().flatten().for_each(|v| *v *= factor);
    }

    pub fn total(&self) -> f64 {
        self.root + self.edges.iter().flatten().sum::<f64>()
    }

    /// `½ Σ |p − q|` over the atom and all bins.
    pub fn total_variation(&self, other: &BinnedLaw) -> f64 {
        let mut tv = (self.root - other.root).abs();
        for (a, b) in self.edges.iter().zip(&other.edges) {
            tv += a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>();
        }
        0.5 * tv
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalMarginal {
    pub time: f64,
    pub n_paths: usize,
    pub law: BinnedLaw,
    /// `identify(X_t)` for every path.
    pub samples: Vec<GraphPoint>,
}

/// Empirical law of `identify(X_t^ε)` started from `x0`.
pub fn empirical_marginal(
    model: &dyn Model,
    config: &SimConfig,
    x0: &Point,
    t: f64,
    bins: usize,
) -> Result<EmpiricalMarginal> {
    config.validate()?;
    check_start(model, x0)?;
    if !(t >= 0.0) || t > config.horizon * (1.0 + 1e-12) {
        return Err(Error::InvalidArgument(format!("time {t} outside [0, {}]", config.horizon)));
    }
    if bins == 0 {
        return Err(Error::InvalidArgument("need at least one bin".into()));
    }
    let graph = Graph::from_model(model)?;
    let steps = config.steps(t);
    let samples = run_paths(config.n_paths, config.seed, |_, rng| -> Result<GraphPoint> {
        let mut x = *x0;
        for _ in 0..steps {
            x = advance(model, config, &x, rng)?;
        }
        identify(model, &x)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    // Count first and scale once so that a single occupied bin has mass
    // exactly one.
    let mut law = BinnedLaw::empty(&graph, bins);
    for y in &samples {
        law.add(y, 1.0);
    }
    law.scale(1.0 / config.n_paths as f64);
    Ok(EmpiricalMarginal { time: t, n_paths: config.n_paths, law, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AnnulusModel, Forcing};

    fn quiet() -> Noise {
        Noise::default()
    }

    #[test]
    fn interior_proposal_is_returned_unchanged() {
        let model = AnnulusModel::new();
        let cfg = SimConfig::new(0.1, 1.0, 1, 0).with_scheme(Scheme::Cartesian);
        let x = Point::new(0.3, -0.2);
        let noise = Noise { fast: [0.4, -1.0], slow: [0.2, 0.1] };
        let p = proposal(&model, &cfg, &x, &noise);
        assert_eq!(step(&model, &cfg, &x, &noise).unwrap(), p);
    }

    #[test]
    fn radial_overshoot_is_mirrored() {
        let model = AnnulusModel::new();
        let q = reflect(&model, 0.1, &Point::new(2.01, 0.0));
        assert!((q - Point::new(1.99, 0.0)).norm() < 1e-12);
        for r in [2.0001, 2.03, 2.07, 2.1] {
            let dir = Point::new(0.6, 0.8);
            let q = reflect(&model, 0.01, &(dir * r));
            assert!((q.norm() - (4.0 - r)).abs() < 1e-12, "r={r}");
        }
    }

    #[test]
    fn no_noise_and_no_drift_keeps_state() {
        // Inside the well λ = 0 but ∇·a0 = −e_r, so take a1-only motion in
        // the adapted scheme, whose fast radial drift vanishes there.
        let model = AnnulusModel::new();
        let cfg = SimConfig::new(0.05, 1.0, 1, 0);
        let x = Point::new(0.2, 0.5);
        assert_eq!(step(&model, &cfg, &x, &quiet()).unwrap(), x);
    }

    #[test]
    fn nonfinite_proposal_reports_last_state() {
        let model = AnnulusModel::new();
        let cfg = SimConfig::new(0.05, 1.0, 1, 0).with_scheme(Scheme::Cartesian);
        let x = Point::new(0.2, 0.5);
        let noise = Noise { fast: [f64::NAN, 0.0], slow: [0.0, 0.0] };
        match step(&model, &cfg, &x, &noise) {
            Err(Error::NonFiniteState { last_valid }) => assert_eq!(last_valid, x),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::new(0.1, 1.0, 10, 0).validate().is_ok());
        assert!(SimConfig::new(0.1, 1.0, 10, 0).with_dt(0.006).validate().is_err());
        assert!(SimConfig::new(0.1, 1.0, 0, 0).validate().is_err());
        assert!(SimConfig::new(-0.1, 1.0, 1, 0).validate().is_err());
    }

    #[test]
    fn short_horizon_occupation_from_inside_and_outside() {
        let model = AnnulusModel::new();
        let cfg = SimConfig::new(0.1, 1e-3, 20, 1);
        let out = simulate_occupation(&model, &cfg, &Point::new(1.5, 0.0)).unwrap();
        assert!(out.mean > 0.99);
        let out = simulate_occupation(&model, &cfg, &Point::new(0.0, 0.0)).unwrap();
        assert!(out.mean < 0.01);
    }

    #[test]
    fn start_on_target_hits_at_time_zero() {
        let model = AnnulusModel::new();
        let cfg = SimConfig::new(0.01, 1.0, 16, 3);
        let stats = estimate_exit_time(
            &model,
            &cfg,
            &Start::LevelCurve { k: 0, h: -0.2 },
            &[Target::Level { k: 0, h: -0.2 }],
        )
        .unwrap();
        assert_eq!(stats.count, 16);
        assert_eq!(stats.mean, 0.0);
        assert_eq!(stats.hit_frequencies, vec![1.0]);
    }

    #[test]
    fn exit_frequencies_sum_to_one() {
        let model = AnnulusModel::new();
        let cfg = SimConfig::new(0.01, 1.0, 64, 5);
        let stats = estimate_exit_time(
            &model,
            &cfg,
            &Start::Point(Point::new(0.7, 0.0)),
            &[Target::Level { k: 0, h: -0.4 }, Target::Level { k: 0, h: 0.0 }],
        )
        .unwrap();
        assert_eq!(stats.censored, 0);
        assert!((stats.hit_frequencies.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(stats.mean > 0.0);
    }

    #[test]
    fn feynman_kac_vanishes_at_reference_and_for_zero_forcing() {
        let model = AnnulusModel::new();
        let cfg = SimConfig::new(0.1, 1.0, 8, 2);
        let opts = FeynmanKacOptions { t_max: 0.2, ..Default::default() };
        let est = feynman_kac_u(&model, &cfg, &model.normalization_point(), &opts).unwrap();
        assert_eq!(est.value, 0.0);
        let zero = AnnulusModel::new().with_forcing(Forcing::Constant { value: 0.0 });
        let est = feynman_kac_u(&zero, &cfg, &Point::new(0.5, 0.0), &opts).unwrap();
        assert_eq!(est.value, 0.0);
        assert_eq!(est.standard_error, 0.0);
    }

    #[test]
    fn marginal_at_time_zero_is_the_start() {
        let model = AnnulusModel::new();
        let cfg = SimConfig::new(0.1, 1.0, 10, 2);
        let m = empirical_marginal(&model, &cfg, &Point::new(1.5, 0.0), 0.0, 8).unwrap();
        assert_eq!(m.law.root, 1.0);
        let one = SimConfig::new(0.1, 1.0, 1, 2);
        let m = empirical_marginal(&model, &one, &Point::new(0.5, 0.0), 0.5, 8).unwrap();
        assert!((m.law.total() - 1.0).abs() < 1e-15);
        let nonzero = m.law.edges[0].iter().filter(|&&v| v > 0.0).count() + usize::from(m.law.root > 0.0);
        assert_eq!(nonzero, 1);
        assert!(empirical_marginal(&model, &cfg, &Point::new(0.5, 0.0), 2.0, 8).is_err());
    }

    #[test]
    fn same_seed_same_paths() {
        let model = AnnulusModel::new();
        let cfg = SimConfig::new(0.05, 0.3, 6, 11);
        let a = simulate_occupation(&model, &cfg, &Point::new(0.9, 0.1)).unwrap();
        let b = simulate_occupation(&model, &cfg, &Point::new(0.9, 0.1)).unwrap();
        assert_eq!(a, b);
    }
}
