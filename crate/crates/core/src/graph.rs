//! The star graph, the identification map and the averaged edge coefficients.
//!
//! Every level curve `C_k(h) = {H_k = h}` of a well collapses to the point
//! `(k, h)` of edge `k`; the whole exterior region collapses to the root `O`.
//! Along edge `k` the limit process is driven by
//!
//! ```text
//! M_k(h)   = ∮ dσ / |∇H_k|
//! ā_k(h)   = M_k⁻¹ ∮ (a1 ∇H_k, ∇H_k) / |∇H_k| dσ
//! f̄(k, h) = M_k⁻¹ ∮ f / |∇H_k| dσ
//! ```
//!
//! and the gluing condition at `O` involves `p_k = M_k(0) ā_k(0)` and the
//! area of the exterior region.

use std::f64::consts::PI;
use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, Point, Region};

pub const COEFFICIENTS_SCHEMA_VERSION: u32 = 1;

/// Star graph with one edge `[m_k, 0]` per well, all joined at the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    minima: Vec<f64>,
}

impl Graph {
    pub fn new(minima: Vec<f64>) -> Result<Self> {
        if minima.is_empty() {
            return Err(Error::InvalidArgument("graph needs at least one edge".into()));
        }
        if let Some(m) = minima.iter().find(|m| !(**m < 0.0)) {
            return Err(Error::InvalidArgument(format!("edge minimum must be negative, got {m}")));
        }
        Ok(Graph { minima })
    }

    pub fn from_model(model: &dyn Model) -> Result<Self> {
        Graph::new((0..model.well_count()).map(|k| model.well_minimum(k).1).collect())
    }

    pub fn edge_count(&self) -> usize {
        self.minima.len()
    }

    pub fn minimum(&self, k: usize) -> f64 {
        self.minima[k]
    }

    /// Whether `y` lies on the graph.
    pub fn contains(&self, y: &GraphPoint) -> bool {
        match *y {
            GraphPoint::Root => true,
            GraphPoint::Edge { k, h } => k < self.minima.len() && h >= self.minima[k] && h <= 0.0,
        }
    }
}

/// A point of the graph: the root, or height `h` on edge `k`.
///
/// `Edge { k, h: 0.0 }` and `Root` denote the same point.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum GraphPoint {
    Root,
    Edge { k: usize, h: f64 },
}

impl GraphPoint {
    pub fn normalized(self) -> Self {
        match self {
            GraphPoint::Edge { h, .. } if h == 0.0 => GraphPoint::Root,
            other => other,
        }
    }

    /// Height coordinate; zero at the root.
    pub fn height(&self) -> f64 {
        match *self {
            GraphPoint::Root => 0.0,
            GraphPoint::Edge { h, .. } => h,
        }
    }

    pub fn edge(&self) -> Option<usize> {
        match self.normalized() {
            GraphPoint::Root => None,
            GraphPoint::Edge { k, .. } => Some(k),
        }
    }

    /// Path distance on the graph.
    pub fn distance(&self, other: &GraphPoint) -> f64 {
        match (self.edge(), other.edge()) {
            (Some(a), Some(b)) if a == b => (self.height() - other.height()).abs(),
            _ => self.height().abs() + other.height().abs(),
        }
    }
}

impl PartialEq for GraphPoint {
    fn eq(&self, other: &Self) -> bool {
        match (self.normalized(), other.normalized()) {
            (GraphPoint::Root, GraphPoint::Root) => true,
            (GraphPoint::Edge { k: a, h: x }, GraphPoint::Edge { k: b, h: y }) => a == b && x == y,
            _ => false,
        }
    }
}

/// Identification map `[G] → Γ`.
pub fn identify(model: &dyn Model, x: &Point) -> Result<GraphPoint> {
    if !model.contains(x) {
        return Err(Error::OutsideDomain(*x));
    }
    Ok(match model.region(x) {
        Region::Exterior => GraphPoint::Root,
        Region::Well(k) => GraphPoint::Edge { k, h: model.first_integral(k, x) },
    })
}

/// Nodes of a traced level curve with arc-length quadrature weights.
#[derive(Debug, Clone)]
pub struct LevelCurve {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
    /// Gradient of `H_k` at each node.
    pub gradients: Vec<Point>,
}

impl LevelCurve {
    pub fn integrate(&self, g: impl Fn(&Point, &Point) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.gradients)
            .zip(&self.weights)
            .map(|((x, grad), w)| w * g(x, grad))
            .sum()
    }

    pub fn length(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Root of `H_k(c + ρ e) = h` on `(0, rmax]` by Newton steps safeguarded
/// with bisection.
fn ray_root(model: &dyn Model, k: usize, h: f64, centre: &Point, dir: &Point, guess: f64, rmax: f64) -> Result<f64> {
    let g = |rho: f64| model.first_integral(k, &(centre + dir * rho)) - h;
    let (mut lo, mut hi) = (0.0, rmax);
    if g(hi) <= 0.0 {
        return Err(Error::LevelCurveNotFound {
            edge: k,
            level: h,
            reason: format!("ray in direction ({:.3}, {:.3}) never reaches the level", dir.x, dir.y),
        });
    }
    let mut rho = if guess > lo && guess < hi { guess } else { 0.5 * hi };
    for _ in 0..200 {
        let val = g(rho);
        if val < 0.0 {
            lo = rho;
        } else {
            hi = rho;
        }
        if val == 0.0 || hi - lo <= 4.0 * f64::EPSILON * hi {
            return Ok(rho);
        }
        let slope = model.first_integral_gradient(k, &(centre + dir * rho)).dot(dir);
        let newton = rho - val / slope;
        let next = if slope > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (next - rho).abs() <= 1e-15 * rho {
            return Ok(next);
        }
        rho = next;
    }
    Ok(0.5 * (lo + hi))
}

/// Traces `C_k(h)` by bisection along `nodes` equally spaced rays from the
/// well minimum, with the periodic trapezoid rule in the ray angle.
pub fn trace_level_curve(model: &dyn Model, k: usize, h: f64, nodes: usize) -> Result<LevelCurve> {
    let (centre, m) = model.well_minimum(k);
    if !(h > m) {
        return Err(Error::LevelCurveNotFound {
            edge: k,
            level: h,
            reason: format!("level at or below the minimum {m}"),
        });
    }
    let rmax = model.diameter();
    let dphi = 2.0 * PI / nodes as f64;
    let mut points = Vec::with_capacity(nodes);
    let mut weights = Vec::with_capacity(nodes);
    let mut gradients = Vec::with_capacity(nodes);
    let mut guess = 0.0;
    for j in 0..nodes {
        let phi = dphi * j as f64;
        let dir = Point::new(phi.cos(), phi.sin());
        let perp = Point::new(-dir.y, dir.x);
        let rho = ray_root(model, k, h, &centre, &dir, guess, rmax)?;
        guess = rho;
        let x = centre + dir * rho;
        let grad = model.first_integral_gradient(k, &x);
        let radial = grad.dot(&dir);
        if !(radial > 0.0) {
            return Err(Error::LevelCurveNotFound {
                edge: k,
                level: h,
                reason: "level curve is not star-shaped about the minimum".into(),
            });
        }
        let drho = -rho * grad.dot(&perp) / radial;
        points.push(x);
        gradients.push(grad);
        weights.push(dphi * (rho * rho + drho * drho).sqrt());
    }
    Ok(LevelCurve { points, weights, gradients })
}

/// `∮_{C_k(h)} g dσ`, doubling the node count until two successive values
/// agree to `1e-12` relative.
pub fn level_set_integral(model: &dyn Model, k: usize, h: f64, integrand: impl Fn(&Point) -> f64) -> Result<f64> {
    let mut nodes = 32;
    let mut prev = trace_level_curve(model, k, h, nodes)?.integrate(|x, _| integrand(x));
    loop {
        nodes *= 2;
        let curve = trace_level_curve(model, k, h, nodes)?;
        let value = curve.integrate(|x, _| integrand(x));
        let scale = curve.integrate(|x, _| integrand(x).abs());
        let change = (value - prev).abs();
        if change <= 1e-12 * scale || scale == 0.0 {
            return Ok(value);
        }
        if nodes >= 1 << 14 {
            return Err(Error::QuadratureNotConverged { edge: k, level: h, nodes, change });
        }
        prev = value;
    }
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub standard_error: f64,
}

/// `∫_G g(x) 1{keep(x)} dx` by uniform sampling of the bounding box.
pub fn monte_carlo_integral(
    model: &dyn Model,
    g: impl Fn(&Point) -> f64,
    keep: impl Fn(&Point) -> bool,
    samples: usize,
    seed: u64,
) -> Estimate {
    let (lo, hi) = model.bounding_box();
    let area = (hi.x - lo.x) * (hi.y - lo.y);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        let x = Point::new(rng.random_range(lo.x..hi.x), rng.random_range(lo.y..hi.y));
        if model.contains(&x) && keep(&x) {
            let v = g(&x);
            sum += v;
            sum_sq += v * v;
        }
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    Estimate { value: area * mean, standard_error: area * (var / n).sqrt() }
}

/// Averaged coefficients of one edge, tabulated on the half grid
/// `h_j = m + j Δh / 2`, `j = 0..=2n`. Even `j` are cell faces, odd `j`
/// cell centres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeTable {
    pub minimum: f64,
    pub cells: usize,
    pub curve_nodes: usize,
    pub h: Vec<f64>,
    /// `M_k(h)`.
    pub normalizing: Vec<f64>,
    /// `ā_k(h)`; zero at the minimum.
    pub abar: Vec<f64>,
    /// `f̄(k, h)`.
    pub fbar: Vec<f64>,
    /// `∫_m^h M_k` — the area enclosed by `C_k(h)`.
    pub volume: Vec<f64>,
    /// `∫_m^h f̄ M_k` — the integral of `f` over the region enclosed by `C_k(h)`.
    pub forcing: Vec<f64>,
    /// `p_k`.
    pub p: f64,
}

impl EdgeTable {
    pub fn width(&self) -> f64 {
        -self.minimum / self.cells as f64
    }

    pub fn face(&self, i: usize) -> f64 {
        self.h[2 * i]
    }

    pub fn center(&self, i: usize) -> f64 {
        self.h[2 * i + 1]
    }

    /// `M_k ā_k` at half-grid index `j`.
    pub fn flux_coefficient(&self, j: usize) -> f64 {
        self.normalizing[j] * self.abar[j]
    }

    pub fn well_volume(&self) -> f64 {
        *self.volume.last().unwrap()
    }

    pub fn well_forcing(&self) -> f64 {
        *self.forcing.last().unwrap()
    }

    /// Builds a table from closed-form profiles; `p` is taken as `M(0) ā(0)`.
    pub fn from_profiles(
        minimum: f64,
        cells: usize,
        normalizing: impl Fn(f64) -> f64,
        abar: impl Fn(f64) -> f64,
        fbar: impl Fn(f64) -> f64,
    ) -> Self {
        let h = half_grid(minimum, cells);
        let (volume, forcing) =
            cumulative_in_sqrt(minimum, &h, |x| (normalizing(x), fbar(x) * normalizing(x)));
        EdgeTable {
            minimum,
            cells,
            curve_nodes: 0,
            normalizing: h.iter().map(|&x| normalizing(x)).collect(),
            abar: h.iter().map(|&x| abar(x)).collect(),
            fbar: h.iter().map(|&x| fbar(x)).collect(),
            volume,
            forcing,
            p: normalizing(0.0) * abar(0.0),
            h,
        }
    }
}

fn half_grid(minimum: f64, cells: usize) -> Vec<f64> {
    let step = -minimum / (2 * cells) as f64;
    let mut h: Vec<f64> = (0..=2 * cells).map(|j| minimum + step * j as f64).collect();
    h[2 * cells] = 0.0;
    h
}

const SUBINTERVAL_ORDER: usize = 4;

/// Cumulative integrals of the two components of `g` from `m` to each grid
/// point, with Gauss–Legendre in `s = √(h − m)` on every sub-interval. The
/// substitution absorbs the square-root behaviour of averages near a
/// non-degenerate minimum.
fn cumulative_in_sqrt(minimum: f64, grid: &[f64], g: impl Fn(f64) -> (f64, f64)) -> (Vec<f64>, Vec<f64>) {
    let rule = GaussLegendre::new(NonZeroUsize::new(SUBINTERVAL_ORDER).expect("nonzero order"));
    let pieces: Vec<(f64, f64)> = grid
        .windows(2)
        .map(|w| {
            let (sa, sb) = ((w[0] - minimum).max(0.0).sqrt(), (w[1] - minimum).max(0.0).sqrt());
            let half = 0.5 * (sb - sa);
            rule.iter().fold((0.0, 0.0), |acc, &(node, weight)| {
                let s = sa + half * (node + 1.0);
                let (a, b) = g(minimum + s * s);
                let jac = weight * half * 2.0 * s;
                (acc.0 + jac * a, acc.1 + jac * b)
            })
        })
        .collect();
    let mut first = Vec::with_capacity(grid.len());
    let mut second = Vec::with_capacity(grid.len());
    let (mut a, mut b) = (0.0, 0.0);
    first.push(0.0);
    second.push(0.0);
    for (da, db) in pieces {
        a += da;
        b += db;
        first.push(a);
        second.push(b);
    }
    (first, second)
}

/// Averaged coefficients for every edge plus the root quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeCoefficients {
    pub schema_version: u32,
    pub model: String,
    pub edges: Vec<EdgeTable>,
    /// Area of the exterior region `E`.
    pub exterior_volume: f64,
    /// `f̄(O)`, the mean of `f` over `E`.
    pub exterior_forcing_mean: f64,
    /// Standard error of `∫_E f` (zero for deterministic quadrature).
    pub exterior_standard_error: f64,
}

impl EdgeCoefficients {
    pub fn graph(&self) -> Graph {
        Graph { minima: self.edges.iter().map(|e| e.minimum).collect() }
    }

    /// `Vol(E) f̄(O) + Σ_k ∫ f̄ M_k dh`, which equals `∫_G f`.
    pub fn compatibility_residual(&self) -> f64 {
        self.exterior_volume * self.exterior_forcing_mean + self.edges.iter().map(|e| e.well_forcing()).sum::<f64>()
    }

    pub fn total_volume(&self) -> f64 {
        self.exterior_volume + self.edges.iter().map(|e| e.well_volume()).sum::<f64>()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != COEFFICIENTS_SCHEMA_VERSION {
            return Err(Error::Schema { found, expected: COEFFICIENTS_SCHEMA_VERSION });
        }
        Ok(serde_json::from_value(value)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoefficientOptions {
    /// Cells per edge.
    pub cells: usize,
    /// Starting node count for the level-curve rule.
    pub min_curve_nodes: usize,
    pub max_curve_nodes: usize,
    /// Relative change allowed when the node count doubles.
    pub node_tolerance: f64,
    /// Samples for the exterior integrals when the model has no quadrature.
    pub monte_carlo_samples: usize,
    pub monte_carlo_seed: u64,
}

impl Default for CoefficientOptions {
    fn default() -> Self {
        CoefficientOptions {
            cells: 512,
            min_curve_nodes: 32,
            max_curve_nodes: 1 << 14,
            node_tolerance: 1e-10,
            monte_carlo_samples: 10_000_000,
            monte_carlo_seed: 0xc0ffee,
        }
    }
}

struct LevelAverages {
    normalizing: f64,
    flux: f64,
    forcing: f64,
}

fn level_averages(model: &dyn Model, k: usize, h: f64, nodes: usize) -> Result<LevelAverages> {
    let curve = trace_level_curve(model, k, h, nodes)?;
    let mut out = LevelAverages { normalizing: 0.0, flux: 0.0, forcing: 0.0 };
    for ((x, g), w) in curve.points.iter().zip(&curve.gradients).zip(&curve.weights) {
        let norm = g.norm();
        out.normalizing += w / norm;
        out.flux += w * g.dot(&(model.a1(x) * g)) / norm;
        out.forcing += w * model.forcing(x) / norm;
    }
    Ok(out)
}

fn relative_change(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Smallest node count (a power of two times `min_curve_nodes`) for which
/// doubling changes `M`, `M ā` and `∮ f/|∇H|` by less than the tolerance at
/// a few representative levels.
fn select_curve_nodes(model: &dyn Model, k: usize, minimum: f64, opts: &CoefficientOptions) -> Result<usize> {
    let probes = [minimum * 0.999, minimum * 0.5, minimum * 0.05, 0.0];
    let mut nodes = opts.min_curve_nodes.max(8);
    loop {
        let mut worst = (0.0, 0.0);
        for &h in &probes {
            let a = level_averages(model, k, h, nodes)?;
            let b = level_averages(model, k, h, 2 * nodes)?;
            let forcing_scale = b.normalizing * 1e-3;
            let change = relative_change(a.normalizing, b.normalizing)
                .max(relative_change(a.flux, b.flux))
                .max((a.forcing - b.forcing).abs() / b.forcing.abs().max(forcing_scale));
            if change > worst.0 {
                worst = (change, h);
            }
        }
        if worst.0 <= opts.node_tolerance {
            return Ok(nodes);
        }
        if 2 * nodes > opts.max_curve_nodes {
            return Err(Error::QuadratureNotConverged { edge: k, level: worst.1, nodes: 2 * nodes, change: worst.0 });
        }
        nodes *= 2;
    }
}

/// Quadratic extrapolation to `h_0` from the next three grid values.
fn extrapolate_to_start(v: &mut [f64]) {
    v[0] = 3.0 * v[1] - 3.0 * v[2] + v[3];
}

fn edge_table(model: &dyn Model, k: usize, opts: &CoefficientOptions) -> Result<EdgeTable> {
    let (_, minimum) = model.well_minimum(k);
    if !(minimum < 0.0) {
        return Err(Error::InvalidArgument(format!("well {k} minimum must be negative, got {minimum}")));
    }
    if opts.cells < 2 {
        return Err(Error::InvalidArgument("need at least two cells per edge".into()));
    }
    let nodes = select_curve_nodes(model, k, minimum, opts)?;
    let h = half_grid(minimum, opts.cells);

    let averages: Vec<LevelAverages> = h[1..]
        .par_iter()
        .map(|&level| level_averages(model, k, level, nodes))
        .collect::<Result<_>>()?;

    let mut normalizing = vec![0.0];
    let mut abar = vec![0.0];
    let mut fbar = vec![0.0];
    for a in &averages {
        normalizing.push(a.normalizing);
        abar.push(a.flux / a.normalizing);
        fbar.push(a.forcing / a.normalizing);
    }
    // The level curve shrinks to a point at the minimum: M and f̄ have finite
    // limits there while M ā vanishes linearly.
    extrapolate_to_start(&mut normalizing);
    fbar[0] = model.forcing(&model.well_minimum(k).0);
    abar[0] = 0.0;

    let grid_pieces: Vec<(f64, f64)> = h
        .windows(2)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|w| {
            let (v, f) = cumulative_in_sqrt(minimum, w, |level| {
                level_averages(model, k, level, nodes)
                    .map(|a| (a.normalizing, a.forcing))
                    .unwrap_or((f64::NAN, f64::NAN))
            });
            (v[1], f[1])
        })
        .collect();
    let mut volume = vec![0.0];
    let mut forcing = vec![0.0];
    for (dv, df) in grid_pieces {
        if !dv.is_finite() || !df.is_finite() {
            return Err(Error::LevelCurveNotFound {
                edge: k,
                level: minimum,
                reason: "level curve lost while integrating the enclosed area".into(),
            });
        }
        volume.push(volume.last().unwrap() + dv);
        forcing.push(forcing.last().unwrap() + df);
    }

    let p = averages.last().map(|a| a.flux).unwrap_or(0.0);
    Ok(EdgeTable { minimum, cells: opts.cells, curve_nodes: nodes, h, normalizing, abar, fbar, volume, forcing, p })
}

/// Tabulates the averaged coefficients of every edge and the root
/// quantities `Vol(E)` and `f̄(O)`.
pub fn compute_coefficients(model: &dyn Model, opts: &CoefficientOptions) -> Result<EdgeCoefficients> {
    let edges = (0..model.well_count()).map(|k| edge_table(model, k, opts)).collect::<Result<Vec<_>>>()?;

    let (exterior_volume, exterior_integral, exterior_standard_error) = match model.exterior_quadrature() {
        Some(q) => {
            let vol: f64 = q.iter().map(|(_, w)| w).sum();
            let int: f64 = q.iter().map(|(x, w)| w * model.forcing(x)).sum();
            (vol, int, 0.0)
        }
        None => {
            let in_exterior = |x: &Point| model.region(x) == Region::Exterior;
            let vol =
                monte_carlo_integral(model, |_| 1.0, in_exterior, opts.monte_carlo_samples, opts.monte_carlo_seed);
            let int = monte_carlo_integral(
                model,
                |x| model.forcing(x),
                in_exterior,
                opts.monte_carlo_samples,
                opts.monte_carlo_seed,
            );
            (vol.value, int.value, int.standard_error)
        }
    };
    if !(exterior_volume > 0.0) {
        return Err(Error::InvalidArgument(format!("exterior region has non-positive area {exterior_volume}")));
    }

    Ok(EdgeCoefficients {
        schema_version: COEFFICIENTS_SCHEMA_VERSION,
        model: model.name().to_string(),
        edges,
        exterior_volume,
        exterior_forcing_mean: exterior_integral / exterior_volume,
        exterior_standard_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AnnulusModel, Forcing};

    #[test]
    fn identification_of_annulus_points() {
        let model = AnnulusModel::new();
        assert_eq!(identify(&model, &Point::new(1.5, 0.0)).unwrap(), GraphPoint::Root);
        assert_eq!(identify(&model, &Point::new(0.5, 0.0)).unwrap(), GraphPoint::Edge { k: 0, h: -0.375 });
        assert_eq!(identify(&model, &Point::new(0.0, 0.0)).unwrap(), GraphPoint::Edge { k: 0, h: -0.5 });
        assert!(matches!(identify(&model, &Point::new(2.5, 0.0)), Err(Error::OutsideDomain(_))));
    }

    #[test]
    fn edge_top_is_the_root() {
        assert_eq!(GraphPoint::Edge { k: 3, h: 0.0 }, GraphPoint::Root);
        assert_ne!(GraphPoint::Edge { k: 0, h: -0.1 }, GraphPoint::Root);
        let a = GraphPoint::Edge { k: 0, h: -0.2 };
        let b = GraphPoint::Edge { k: 1, h: -0.3 };
        assert!((a.distance(&b) - 0.5).abs() < 1e-15);
        assert!((a.distance(&GraphPoint::Edge { k: 0, h: -0.5 }) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn graph_rejects_nonnegative_minimum() {
        assert!(Graph::new(vec![-0.5, 0.0]).is_err());
        assert!(Graph::new(vec![]).is_err());
        let g = Graph::from_model(&AnnulusModel::new()).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert!(g.contains(&GraphPoint::Edge { k: 0, h: -0.5 }));
        assert!(!g.contains(&GraphPoint::Edge { k: 0, h: -0.6 }));
    }

    #[test]
    fn level_integrals_on_circles() {
        let model = AnnulusModel::new();
        for h in [-0.49, -0.3, -0.1, 0.0] {
            let m = level_set_integral(&model, 0, h, |x| 1.0 / x.norm()).unwrap();
            assert!((m - 2.0 * PI).abs() < 1e-12, "h={h}: {m}");
        }
        let g = level_set_integral(&model, 0, 0.0, |x| x.norm()).unwrap();
        assert!((g - 2.0 * PI).abs() < 1e-12);
        assert_eq!(level_set_integral(&model, 0, -0.2, |_| 0.0).unwrap(), 0.0);
    }

    #[test]
    fn level_curve_below_minimum_or_beyond_reach_fails() {
        let model = AnnulusModel::new();
        assert!(matches!(level_set_integral(&model, 0, -0.5, |_| 1.0), Err(Error::LevelCurveNotFound { .. })));
        // H = 10 would need radius √21, beyond the ray search range.
        assert!(matches!(level_set_integral(&model, 0, 10.0, |_| 1.0), Err(Error::LevelCurveNotFound { .. })));
    }

    #[test]
    fn annulus_coefficients_match_closed_forms() {
        let model = AnnulusModel::new();
        let c = compute_coefficients(&model, &CoefficientOptions { cells: 64, ..Default::default() }).unwrap();
        let e = &c.edges[0];
        for (j, &h) in e.h.iter().enumerate() {
            assert!((e.normalizing[j] - 2.0 * PI).abs() < 1e-10);
            assert!((e.abar[j] - (2.0 * h + 1.0)).abs() < 1e-10);
            let fbar = (2.0 * h + 1.0).sqrt() - 4.0 / 3.0;
            assert!((e.fbar[j] - fbar).abs() < 1e-6, "j={j}");
        }
        assert!((e.p - 2.0 * PI).abs() < 1e-12);
        assert!((c.exterior_volume - 3.0 * PI).abs() < 1e-12);
        assert!((c.exterior_forcing_mean - 2.0 / 9.0).abs() < 1e-12);
        assert!((e.well_volume() - PI).abs() < 1e-12);
        assert!((e.well_forcing() + 2.0 * PI / 3.0).abs() < 1e-12);
        assert!(c.compatibility_residual().abs() < 1e-12);
    }

    #[test]
    fn zero_forcing_gives_zero_averages() {
        let model = AnnulusModel::new().with_forcing(Forcing::Constant { value: 0.0 });
        let c = compute_coefficients(&model, &CoefficientOptions { cells: 16, ..Default::default() }).unwrap();
        assert!(c.edges[0].fbar.iter().all(|&v| v == 0.0));
        assert_eq!(c.exterior_forcing_mean, 0.0);
    }

    #[test]
    fn profiles_table_integrates_exactly() {
        let t = EdgeTable::from_profiles(-0.5, 8, |_| 2.0 * PI, |h| 2.0 * h + 1.0, |h| (2.0 * h + 1.0).sqrt() - 4.0 / 3.0);
        assert!((t.well_volume() - PI).abs() < 1e-13);
        assert!((t.well_forcing() + 2.0 * PI / 3.0).abs() < 1e-13);
        assert_eq!(t.face(8), 0.0);
        assert!((t.center(0) - (-0.5 + t.width() / 2.0)).abs() < 1e-15);
    }

    #[test]
    fn json_round_trip_and_schema_guard() {
        let c = compute_coefficients(&AnnulusModel::new(), &CoefficientOptions { cells: 8, ..Default::default() }).unwrap();
        let text = c.to_json().unwrap();
        assert_eq!(EdgeCoefficients::from_json(&text).unwrap(), c);
        let bumped = text.replacen("\"schema_version\": 1", "\"schema_version\": 99", 1);
        assert!(matches!(EdgeCoefficients::from_json(&bumped), Err(Error::Schema { found: 99, .. })));
    }
}
