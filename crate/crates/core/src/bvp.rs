//! The limiting Neumann problem on Γ.
//!
//! On every edge `½ M⁻¹ (M ā v')' = f̄`, so with zero flux at the bounded end
//! `m_k` the flux is known in closed form:
//!
//! ```text
//! (M ā v')(h) = 2 ∫_{m_k}^h f̄ M dh'.
//! ```
//!
//! Values are then marched from cell centre to cell centre using the flux at
//! the face in between, and from the last centre to the root using `p_k`.
//! This is the finite-volume scheme of the graph chain with the edge
//! differences solved explicitly, so the result coincides with a direct
//! solve of that discrete system. The gluing condition at the root holds
//! exactly when the forcing has zero mean over `G`; it is computed and
//! reported, never imposed.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeCoefficients, GraphPoint};
use crate::harness::num;

/// Guard against division by a vanishing `M ā` in the edge interior.
pub const FLUX_FLOOR: f64 = 1e-14;

/// Allowed compatibility residual relative to the forcing scale.
pub const COMPATIBILITY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSolution {
    pub minimum: f64,
    /// Nodes `m, c_0, …, c_{n−1}, 0` (the cell centres bracketed by the ends).
    pub h: Vec<f64>,
    pub v: Vec<f64>,
    /// `M ā v'` at the nodes.
    pub flux: Vec<f64>,
    /// `v'(0⁻)`.
    pub outer_slope: f64,
    /// `p_k`.
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSolution {
    pub edges: Vec<EdgeSolution>,
    /// `v(O)`.
    pub root: f64,
    /// The point where `v` vanishes.
    pub anchor: GraphPoint,
    /// `Vol(E) f̄(O) + ½ Σ p_k v'_k(0⁻)`.
    pub gluing_residual: f64,
    /// `Vol(E) |f̄(O)| + ½ Σ p_k |v'_k(0⁻)|`, the natural scale of the residual.
    pub gluing_scale: f64,
}

impl GraphSolution {
    /// Adds `c` to every value.
    pub fn shifted(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.root += c;
        for e in &mut out.edges {
            e.v.iter_mut().for_each(|v| *v += c);
        }
        out
    }

    /// Shifts so that `v(anchor) = 0`.
    pub fn renormalized(&self) -> Result<Self> {
        Ok(self.shifted(-evaluate(self, &self.anchor)?))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per node: `edge,h,v,flux`.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["edge", "h", "v", "flux"])?;
        for (k, e) in self.edges.iter().enumerate() {
            for ((h, v), f) in e.h.iter().zip(&e.v).zip(&e.flux) {
                w.write_record([k.to_string(), num(*h), num(*v), num(*f)])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Solves the graph problem and pins `v(anchor) = 0`.
pub fn solve_bvp(coeffs: &EdgeCoefficients, anchor: &GraphPoint) -> Result<GraphSolution> {
    let residual = coeffs.compatibility_residual();
    let scale = coeffs.exterior_volume * coeffs.exterior_forcing_mean.abs()
        + coeffs.edges.iter().map(|e| e.well_forcing().abs()).sum::<f64>();
    let tolerance = COMPATIBILITY_TOLERANCE * scale.max(coeffs.total_volume() * 1e-3)
        + 3.0 * coeffs.exterior_standard_error;
    if !(residual.abs() <= tolerance) {
        return Err(Error::Incompatible { residual, tolerance });
    }

    let mut edges = Vec::with_capacity(coeffs.edges.len());
    for (k, t) in coeffs.edges.iter().enumerate() {
        let n = t.cells;
        let dh = t.width();
        if !(t.p > FLUX_FLOOR) {
            return Err(Error::CoefficientFloor { edge: k, level: 0.0, value: t.p });
        }
        // Centre values relative to the first centre.
        let mut centres = vec![0.0; n];
        for i in 1..n {
            let j = 2 * i;
            let ma = t.flux_coefficient(j);
            if !(ma > FLUX_FLOOR) {
                return Err(Error::CoefficientFloor { edge: k, level: t.h[j], value: ma });
            }
            centres[i] = centres[i - 1] + dh * 2.0 * t.forcing[j] / ma;
        }
        let outer_slope = 2.0 * t.well_forcing() / t.p;
        let top = centres[n - 1] + 0.5 * dh * outer_slope;
        // Between m and the first centre the slope is bounded: use its value
        // at that centre.
        let first_slope = {
            let ma = t.flux_coefficient(1);
            if ma > FLUX_FLOOR {
                2.0 * t.forcing[1] / ma
            } else {
                0.0
            }
        };
        let bottom = -0.5 * dh * first_slope;

        let mut h = Vec::with_capacity(n + 2);
        let mut v = Vec::with_capacity(n + 2);
        let mut flux = Vec::with_capacity(n + 2);
        h.push(t.minimum);
        v.push(bottom - top);
        flux.push(0.0);
        for (i, c) in centres.iter().enumerate() {
            h.push(t.center(i));
            v.push(c - top);
            flux.push(2.0 * t.forcing[2 * i + 1]);
        }
        h.push(0.0);
        v.push(0.0);
        flux.push(2.0 * t.well_forcing());
        edges.push(EdgeSolution { minimum: t.minimum, h, v, flux, outer_slope, p: t.p });
    }

    let gluing_residual = coeffs.exterior_volume * coeffs.exterior_forcing_mean
        + 0.5 * edges.iter().map(|e| e.p * e.outer_slope).sum::<f64>();
    let gluing_scale = coeffs.exterior_volume * coeffs.exterior_forcing_mean.abs()
        + 0.5 * edges.iter().map(|e| (e.p * e.outer_slope).abs()).sum::<f64>();
    let raw = GraphSolution { edges, root: 0.0, anchor: anchor.normalized(), gluing_residual, gluing_scale };
    raw.renormalized()
}

/// `v(y)` by cubic interpolation through the four nearest nodes; exact at
/// the nodes.
pub fn evaluate(sol: &GraphSolution, y: &GraphPoint) -> Result<f64> {
    match y.normalized() {
        GraphPoint::Root => Ok(sol.root),
        GraphPoint::Edge { k, h } => {
            let e = sol
                .edges
                .get(k)
                .ok_or_else(|| Error::InvalidArgument(format!("edge {k} does not exist")))?;
            if !(h >= e.minimum && h <= 0.0) {
                return Err(Error::OffEdge { edge: k, level: h, minimum: e.minimum });
            }
            let upper = e.h.partition_point(|x| *x < h);
            if upper < e.h.len() && e.h[upper] == h {
                return Ok(e.v[upper]);
            }
            let len = e.h.len();
            let start = upper.saturating_sub(2).min(len - 4);
            let nodes = &e.h[start..start + 4];
            let values = &e.v[start..start + 4];
            let mut total = 0.0;
            for i in 0..4 {
                let mut basis = 1.0;
                for j in 0..4 {
                    if i != j {
                        basis *= (h - nodes[j]) / (nodes[i] - nodes[j]);
                    }
                }
                total += basis * values[i];
            }
            Ok(total)
        }
    }
}

/// Largest `|𝓛_k v − f̄|` over interior cell centres, with `𝓛_k` applied
/// by the flux-form second difference.
pub fn ode_residual(sol: &GraphSolution, coeffs: &EdgeCoefficients) -> f64 {
    let mut worst: f64 = 0.0;
    for (e, t) in sol.edges.iter().zip(&coeffs.edges) {
        let dh = t.width();
        for i in 1..t.cells - 1 {
            let (vl, vc, vr) = (e.v[i], e.v[i + 1], e.v[i + 2]);
            let left = t.flux_coefficient(2 * i) * (vc - vl);
            let right = t.flux_coefficient(2 * i + 2) * (vr - vc);
            let lv = 0.5 * (right - left) / (dh * dh * t.normalizing[2 * i + 1]);
            worst = worst.max((lv - t.fbar[2 * i + 1]).abs());
        }
    }
    worst
}
