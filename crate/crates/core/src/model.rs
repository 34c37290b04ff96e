//! Coefficient fields and geometry of the two-scale problem.
//!
//! A [`Model`] describes a bounded planar domain `G` split into wells `U_k`,
//! on which the fast operator `L0` degenerates along the level curves of a
//! first integral `H_k`, and the exterior region `E` where `L0` is
//! non-degenerate. The slow operator `L1` is strictly elliptic everywhere.
//! Both operators are in divergence form, `L u = ½ ∇·(a ∇u)`.
//!
//! The only shipped model is [`AnnulusModel`]: the disk of radius 2 with the
//! unit disk as its single well.

use std::f64::consts::PI;
use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use nalgebra::{Matrix2, SymmetricEigen, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sde::Noise;

pub type Point = Vector2<f64>;
pub type Mat2 = Matrix2<f64>;

/// Step used by the finite-difference fallbacks for the row divergence.
pub const DIVERGENCE_STEP: f64 = 1e-5;

/// Which part of the closed domain a point belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    /// The closure of `E`, where `L0` is non-degenerate.
    Exterior,
    /// The open well `U_k` (0-based).
    Well(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryPoint {
    pub point: Point,
    pub inward_normal: Point,
    /// Signed distance to the boundary, positive outside `G`.
    pub distance: f64,
}

/// A planar two-scale model.
///
/// Wells are indexed from 0. `first_integral(k, x)` must be defined on a
/// neighbourhood of the closed well, so that level curves with small
/// positive `h` (outside the well) can be traced as well.
pub trait Model: Send + Sync {
    fn name(&self) -> &str;

    fn well_count(&self) -> usize;

    /// Membership in the closed domain `[G]`.
    fn contains(&self, x: &Point) -> bool;

    fn boundary_projection(&self, x: &Point) -> BoundaryPoint;

    fn diameter(&self) -> f64;

    /// Axis-aligned box containing `[G]`.
    fn bounding_box(&self) -> (Point, Point);

    fn region(&self, x: &Point) -> Region;

    fn a0(&self, x: &Point) -> Mat2;
    fn a1(&self, x: &Point) -> Mat2;
    fn sigma0(&self, x: &Point) -> Mat2;
    fn sigma1(&self, x: &Point) -> Mat2;

    /// `H_k(x)`, extended beyond the well.
    fn first_integral(&self, k: usize, x: &Point) -> f64;
    fn first_integral_gradient(&self, k: usize, x: &Point) -> Point;

    /// Minimum point `x_k(m_k)` and minimum value `m_k` of the well.
    fn well_minimum(&self, k: usize) -> (Point, f64);

    /// The point `x_O` where the solution is pinned to zero.
    fn normalization_point(&self) -> Point;

    fn forcing(&self, x: &Point) -> f64;

    /// Row divergence `(∇·a0)_i = Σ_j ∂_j a0_ij`.
    fn div_a0(&self, x: &Point) -> Point {
        row_divergence(|y| self.a0(y), x)
    }

    fn div_a1(&self, x: &Point) -> Point {
        row_divergence(|y| self.a1(y), x)
    }

    /// Nodes and weights of a deterministic quadrature over `[G]`, if the
    /// model has one. Otherwise integrals fall back to Monte Carlo.
    fn domain_quadrature(&self) -> Option<Vec<(Point, f64)>> {
        None
    }

    /// Deterministic quadrature over `[E]`, if available.
    fn exterior_quadrature(&self) -> Option<Vec<(Point, f64)>> {
        None
    }

    /// A model-specific Euler step in coordinates adapted to the fast motion.
    /// Returns `None` when the model has no such scheme; the caller then uses
    /// the Cartesian Euler–Maruyama step.
    fn adapted_step(&self, _x: &Point, _eps: f64, _dt: f64, _noise: &Noise) -> Option<Point> {
        None
    }
}

/// Global first integral: `H_k` on `U_k`, zero on `[E]`.
pub fn global_first_integral(model: &dyn Model, x: &Point) -> f64 {
    match model.region(x) {
        Region::Exterior => 0.0,
        Region::Well(k) => model.first_integral(k, x),
    }
}

pub fn row_divergence(a: impl Fn(&Point) -> Mat2, x: &Point) -> Point {
    let h = DIVERGENCE_STEP;
    let mut div = Point::zeros();
    for j in 0..2 {
        let mut e = Point::zeros();
        e[j] = h;
        let plus = a(&(x + e));
        let minus = a(&(x - e));
        for i in 0..2 {
            div[i] += (plus[(i, j)] - minus[(i, j)]) / (2.0 * h);
        }
    }
    div
}

/// Inward co-normal unit vector `(a0/ε + a1) n / |·|` at a boundary point.
pub fn conormal(model: &dyn Model, x: &Point, eps: f64) -> Result<Point> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let b = model.boundary_projection(x);
    let tol = 1e-6 * model.diameter();
    if b.distance.abs() > tol {
        return Err(Error::NotOnBoundary { point: *x, distance: b.distance });
    }
    Ok(conormal_at(model, &b, eps))
}

pub(crate) fn conormal_at(model: &dyn Model, b: &BoundaryPoint, eps: f64) -> Point {
    let a = model.a0(&b.point) / eps + model.a1(&b.point);
    let g = a * b.inward_normal;
    let norm = g.norm();
    if norm > 0.0 {
        g / norm
    } else {
        b.inward_normal
    }
}

/// Forcing term choices for the built-in model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Forcing {
    /// `f = r − 4/3`, zero mean on the disk of radius 2.
    Radial,
    /// `f = r² − 2`, zero mean and smooth at the origin.
    RadialSquared,
    Constant { value: f64 },
}

/// The built-in example: `G` the disk of radius 2, `U₁` the unit disk,
/// `H₁ = (r² − 1)/2`, and
///
/// ```text
/// a0 = λ(r) e_r e_rᵀ + r e_θ e_θᵀ,   λ(r) = (r − 1)² for r ≥ 1, 0 inside.
/// ```
///
/// The slow matrix is `a1 = κ I` with `κ = 1` unless changed.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnulusModel {
    pub forcing: Forcing,
    /// Added to the forcing everywhere.
    pub forcing_offset: f64,
    pub a1_scale: f64,
    pub normalization_point: Point,
}

impl Default for AnnulusModel {
    fn default() -> Self {
        AnnulusModel {
            forcing: Forcing::Radial,
            forcing_offset: 0.0,
            a1_scale: 1.0,
            normalization_point: Point::new(1.5, 0.0),
        }
    }
}

pub const ANNULUS_RADIUS: f64 = 2.0;

impl AnnulusModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_forcing(mut self, forcing: Forcing) -> Self {
        self.forcing = forcing;
        self
    }

    pub fn with_forcing_offset(mut self, offset: f64) -> Self {
        self.forcing_offset = offset;
        self
    }

    pub fn with_a1_scale(mut self, scale: f64) -> Self {
        self.a1_scale = scale;
        self
    }

    pub fn with_normalization_point(mut self, x: Point) -> Self {
        self.normalization_point = x;
        self
    }

    pub fn lambda(r: f64) -> f64 {
        if r >= 1.0 {
            (r - 1.0) * (r - 1.0)
        } else {
            0.0
        }
    }

    fn lambda_prime(r: f64) -> f64 {
        if r >= 1.0 {
            2.0 * (r - 1.0)
        } else {
            0.0
        }
    }

    /// Radial forcing profile `f(r)`.
    pub fn forcing_profile(&self, r: f64) -> f64 {
        let base = match self.forcing {
            Forcing::Radial => r - 4.0 / 3.0,
            Forcing::RadialSquared => r * r - 2.0,
            Forcing::Constant { value } => value,
        };
        base + self.forcing_offset
    }

    fn polar_frame(x: &Point) -> Option<(f64, Point, Point)> {
        let r = x.norm();
        if r == 0.0 {
            return None;
        }
        let er = x / r;
        let et = Point::new(-er.y, er.x);
        Some((r, er, et))
    }

    /// Tensor Gauss–Legendre (radius) by trapezoid (angle) rule on the ring
    /// `r0 ≤ r ≤ r1`; exact for forcing profiles polynomial in `r`.
    fn ring_quadrature(r0: f64, r1: f64) -> Vec<(Point, f64)> {
        let radial = GaussLegendre::new(NonZeroUsize::new(24).expect("nonzero order"));
        let angles = 64;
        let dt = 2.0 * PI / angles as f64;
        let mut nodes = Vec::with_capacity(24 * angles);
        for (r, w) in radial.iter().map(|&(node, w)| {
            let half = 0.5 * (r1 - r0);
            (r0 + half * (node + 1.0), w * half)
        }) {
            for j in 0..angles {
                let t = dt * j as f64;
                nodes.push((Point::new(r * t.cos(), r * t.sin()), w * r * dt));
            }
        }
        nodes
    }
}

impl Model for AnnulusModel {
    fn name(&self) -> &str {
        "annulus"
    }

    fn well_count(&self) -> usize {
        1
    }

    fn contains(&self, x: &Point) -> bool {
        x.norm() <= ANNULUS_RADIUS * (1.0 + 1e-14)
    }

    fn boundary_projection(&self, x: &Point) -> BoundaryPoint {
        let r = x.norm();
        let dir = if r > 0.0 { x / r } else { Point::new(1.0, 0.0) };
        BoundaryPoint {
            point: dir * ANNULUS_RADIUS,
            inward_normal: -dir,
            distance: r - ANNULUS_RADIUS,
        }
    }

    fn diameter(&self) -> f64 {
        2.0 * ANNULUS_RADIUS
    }

    fn bounding_box(&self) -> (Point, Point) {
        (
            Point::new(-ANNULUS_RADIUS, -ANNULUS_RADIUS),
            Point::new(ANNULUS_RADIUS, ANNULUS_RADIUS),
        )
    }

    fn region(&self, x: &Point) -> Region {
        if x.norm() < 1.0 {
            Region::Well(0)
        } else {
            Region::Exterior
        }
    }

    fn a0(&self, x: &Point) -> Mat2 {
        match Self::polar_frame(x) {
            None => Mat2::zeros(),
            Some((r, er, et)) => Self::lambda(r) * er * er.transpose() + r * et * et.transpose(),
        }
    }

    fn a1(&self, _x: &Point) -> Mat2 {
        Mat2::identity() * self.a1_scale
    }

    fn sigma0(&self, x: &Point) -> Mat2 {
        match Self::polar_frame(x) {
            None => Mat2::zeros(),
            Some((r, er, et)) => {
                Self::lambda(r).sqrt() * er * er.transpose() + r.sqrt() * et * et.transpose()
            }
        }
    }

    fn sigma1(&self, _x: &Point) -> Mat2 {
        Mat2::identity() * self.a1_scale.max(0.0).sqrt()
    }

    fn first_integral(&self, _k: usize, x: &Point) -> f64 {
        0.5 * (x.norm_squared() - 1.0)
    }

    fn first_integral_gradient(&self, _k: usize, x: &Point) -> Point {
        *x
    }

    fn well_minimum(&self, _k: usize) -> (Point, f64) {
        (Point::zeros(), -0.5)
    }

    fn normalization_point(&self) -> Point {
        self.normalization_point
    }

    fn forcing(&self, x: &Point) -> f64 {
        self.forcing_profile(x.norm())
    }

    // ∇·(λ e_r e_rᵀ) = (λ' + λ/r) e_r and ∇·(r e_θ e_θᵀ) = −e_r.
    fn div_a0(&self, x: &Point) -> Point {
        match Self::polar_frame(x) {
            None => Point::zeros(),
            Some((r, er, _)) => (Self::lambda_prime(r) + Self::lambda(r) / r - 1.0) * er,
        }
    }

    fn div_a1(&self, _x: &Point) -> Point {
        Point::zeros()
    }

    fn domain_quadrature(&self) -> Option<Vec<(Point, f64)>> {
        let mut q = Self::ring_quadrature(0.0, 1.0);
        q.extend(Self::ring_quadrature(1.0, ANNULUS_RADIUS));
        Some(q)
    }

    fn exterior_quadrature(&self) -> Option<Vec<(Point, f64)>> {
        Some(Self::ring_quadrature(1.0, ANNULUS_RADIUS))
    }

    /// Euler step of the fast part in polar coordinates followed by an exact
    /// Gaussian step of the slow part. In polar form the fast generator is
    ///
    /// ```text
    /// (1/2ε) [ λ u_rr + (λ' + λ/r) u_r + (1/r) u_θθ ]
    /// ```
    ///
    /// so the rotation never feeds back into the radius. The Cartesian step
    /// picks up a spurious radial diffusion of order `dt/ε²` from it.
    fn adapted_step(&self, x: &Point, eps: f64, dt: f64, noise: &Noise) -> Option<Point> {
        let z0 = Point::new(noise.fast[0], noise.fast[1]);
        let z1 = Point::new(noise.slow[0], noise.slow[1]);
        let fast = match Self::polar_frame(x) {
            None => *x,
            Some((r, er, et)) => {
                let (xi_r, xi_t) = (er.dot(&z0), et.dot(&z0));
                let lam = Self::lambda(r);
                let mut radius = r
                    + 0.5 * dt / eps * (Self::lambda_prime(r) + lam / r)
                    + (lam * dt / eps).sqrt() * xi_r;
                radius = radius.abs();
                let dtheta = (dt / (r * eps)).sqrt() * xi_t;
                let (s, c) = dtheta.sin_cos();
                radius * (c * er + s * et)
            }
        };
        Some(fast + (self.a1_scale.max(0.0) * dt).sqrt() * z1)
    }
}

/// Tolerances used by [`validate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Algebraic identities: symmetry and `σσᵀ = a`.
    pub algebraic: f64,
    /// `|a0 ∇H_k|` on the wells.
    pub first_integral: f64,
    /// Quadrature-based checks such as the zero mean of `f`.
    pub quadrature: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { algebraic: 1e-12, first_integral: 1e-10, quadrature: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    /// Largest violation seen (for positivity checks: the negated smallest
    /// eigenvalue).
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Where the worst value was attained.
    pub location: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub samples: usize,
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

struct Worst {
    name: &'static str,
    value: f64,
    at: Option<Point>,
    tolerance: f64,
    strict: bool,
}

impl Worst {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Worst { name, value: 0.0, at: None, tolerance, strict: false }
    }

    fn strict(mut self) -> Self {
        self.strict = true;
        self.value = f64::NEG_INFINITY;
        self
    }

    fn see(&mut self, v: f64, x: &Point) {
        if v > self.value {
            self.value = v;
            self.at = Some(*x);
        }
    }

    fn finish(self) -> Check {
        let passed = if self.strict { self.value < self.tolerance } else { self.value <= self.tolerance };
        Check {
            name: self.name,
            worst: self.value,
            tolerance: self.tolerance,
            passed,
            location: self.at.map(|p| [p.x, p.y]),
        }
    }
}

/// Radical inverse of `i` in base `b`.
fn radical_inverse(mut i: u64, b: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= b as f64;
        r += f * (i % b) as f64;
        i /= b;
    }
    r
}

/// Points of the (2, 3) Halton sequence falling inside `[G]`.
pub fn halton_samples(model: &dyn Model, count: usize) -> Vec<Point> {
    let (lo, hi) = model.bounding_box();
    let mut out = Vec::with_capacity(count);
    let mut i = 1u64;
    while out.len() < count {
        let p = Point::new(
            lo.x + (hi.x - lo.x) * radical_inverse(i, 2),
            lo.y + (hi.y - lo.y) * radical_inverse(i, 3),
        );
        if model.contains(&p) {
            out.push(p);
        }
        i += 1;
    }
    out
}

fn min_eigenvalue(a: &Mat2) -> f64 {
    let sym = 0.5 * (a + a.transpose());
    SymmetricEigen::new(sym).eigenvalues.min()
}

fn max_abs(m: &Mat2) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Checks the structural assumptions of a model on `sample_count`
/// quasi-random points of `[G]`.
pub fn validate(model: &dyn Model, sample_count: usize, tol: &Tolerances) -> Result<ValidationReport> {
    if sample_count < 100 {
        return Err(Error::InvalidArgument(format!(
            "validation needs at least 100 samples, got {sample_count}"
        )));
    }
    let points = halton_samples(model, sample_count);

    let mut finite = Worst::new("finite_coefficients", 0.0);
    let mut sym0 = Worst::new("a0_symmetric", tol.algebraic);
    let mut sym1 = Worst::new("a1_symmetric", tol.algebraic);
    let mut psd0 = Worst::new("a0_positive_semidefinite", tol.algebraic);
    let mut pd1 = Worst::new("a1_positive_definite", 0.0).strict();
    let mut fac0 = Worst::new("sigma0_factorization", tol.algebraic);
    let mut fac1 = Worst::new("sigma1_factorization", tol.algebraic);
    let mut first = Worst::new("first_integral", tol.first_integral);

    for x in &points {
        let a0 = model.a0(x);
        let a1 = model.a1(x);
        let s0 = model.sigma0(x);
        let s1 = model.sigma1(x);
        let f = model.forcing(x);
        let all_finite = a0.iter().chain(a1.iter()).chain(s0.iter()).chain(s1.iter()).all(|v| v.is_finite())
            && f.is_finite();
        if !all_finite {
            finite.see(1.0, x);
            continue;
        }
        sym0.see(max_abs(&(a0 - a0.transpose())), x);
        sym1.see(max_abs(&(a1 - a1.transpose())), x);
        psd0.see(-min_eigenvalue(&a0), x);
        pd1.see(-min_eigenvalue(&a1), x);
        fac0.see(max_abs(&(s0 * s0.transpose() - a0)), x);
        fac1.see(max_abs(&(s1 * s1.transpose() - a1)), x);
        if let Region::Well(k) = model.region(x) {
            let g = model.first_integral_gradient(k, x);
            first.see((a0 * g).norm(), x);
        }
    }

    let mut checks = vec![
        finite.finish(),
        sym0.finish(),
        sym1.finish(),
        psd0.finish(),
        pd1.finish(),
        fac0.finish(),
        fac1.finish(),
        first.finish(),
    ];

    let (mean_residual, allowance) = match model.domain_quadrature() {
        Some(q) => {
            let total: f64 = q.iter().map(|(x, w)| w * model.forcing(x)).sum();
            (total, tol.quadrature)
        }
        None => {
            let est = crate::graph::monte_carlo_integral(model, |x| model.forcing(x), |_| true, 1_000_000, 0x5eed);
            (est.value, tol.quadrature.max(4.0 * est.standard_error))
        }
    };
    checks.push(Check {
        name: "zero_mean_forcing",
        worst: mean_residual.abs(),
        tolerance: allowance,
        passed: mean_residual.abs() <= allowance,
        location: None,
    });

    Ok(ValidationReport { samples: points.len(), checks })
}
