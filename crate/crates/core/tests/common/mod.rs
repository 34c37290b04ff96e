//! Independent reference solutions shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use sticky_averaging::graph::{EdgeCoefficients, GraphPoint};

/// Limit solution for the annulus with `f = r − 4/3`, pinned to zero on the
/// exterior region.
pub fn limit_solution(r: f64) -> f64 {
    if r >= 1.0 {
        0.0
    } else {
        2.0 / 9.0 * (r.powi(3) - 1.0) - 2.0 / 3.0 * (r * r - 1.0)
    }
}

/// `u'(r)` of the radially symmetric Neumann solution at finite `ε`:
/// `r (1 + λ/ε) u' = 2 ∫₀^r (s − 4/3) s ds`.
pub fn radial_slope(r: f64, eps: f64) -> f64 {
    let lambda = if r >= 1.0 { (r - 1.0) * (r - 1.0) } else { 0.0 };
    2.0 / 3.0 * (r * r - 2.0 * r) / (1.0 + lambda / eps)
}

/// `u^ε(r)` with `u^ε(1.5) = 0`, by composite Simpson on a fine grid.
pub fn radial_solution(r: f64, eps: f64) -> f64 {
    let (a, b) = (1.5, r);
    if a == b {
        return 0.0;
    }
    let n = 20_000;
    let h = (b - a) / n as f64;
    let mut s = radial_slope(a, eps) + radial_slope(b, eps);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * radial_slope(a + h * i as f64, eps);
    }
    s * h / 3.0
}

/// Unknown layout of the dense oracle: index 0 is the root, then the cell
/// centres of each edge.
pub struct DenseSolution {
    pub root: f64,
    pub centres: Vec<Vec<f64>>,
    pub multiplier: f64,
}

/// Solves the flux-balance equations of the graph problem as one dense
/// bordered system:
///
/// * cell `i` of edge `k`: `½[(Mā)_{i+1}(v_{i+1} − v_i) − (Mā)_i(v_i − v_{i−1})]/Δh = ∫_cell f̄ M`,
///   with the root at distance `Δh/2` beyond the last centre and `p_k` as
///   the face coefficient there;
/// * root: `Σ_k p_k (v_{k,n−1} − v_O)/Δh = Vol(E) f̄(O)`;
/// * border: `v(anchor) = 0`, with a multiplier column of ones.
pub fn dense_graph_solve(coeffs: &EdgeCoefficients, anchor: &GraphPoint) -> DenseSolution {
    let n: Vec<usize> = coeffs.edges.iter().map(|e| e.cells).collect();
    let size = 1 + n.iter().sum::<usize>();
    let mut a = DMatrix::<f64>::zeros(size + 1, size + 1);
    let mut b = DVector::<f64>::zeros(size + 1);
    let mut offset = 1;
    let mut index = Vec::new();
    for (k, e) in coeffs.edges.iter().enumerate() {
        let dh = e.width();
        let idx = |i: usize| offset + i;
        for i in 0..n[k] {
            if i > 0 {
                let c = 0.5 * e.normalizing[2 * i] * e.abar[2 * i] / dh;
                a[(idx(i), idx(i - 1))] += c;
                a[(idx(i), idx(i))] -= c;
            }
            if i + 1 < n[k] {
                let c = 0.5 * e.normalizing[2 * i + 2] * e.abar[2 * i + 2] / dh;
                a[(idx(i), idx(i + 1))] += c;
                a[(idx(i), idx(i))] -= c;
            } else {
                let c = e.p / dh;
                a[(idx(i), 0)] += c;
                a[(idx(i), idx(i))] -= c;
                a[(0, idx(i))] += c;
                a[(0, 0)] -= c;
            }
            b[idx(i)] = e.forcing[2 * i + 2] - e.forcing[2 * i];
        }
        index.push(offset);
        offset += n[k];
    }
    b[0] = coeffs.exterior_volume * coeffs.exterior_forcing_mean;
    for r in 0..size {
        a[(r, size)] = 1.0;
    }
    // Pin the cell containing the anchor by linear interpolation between
    // neighbouring nodes, matching the node layout `m, centres…, 0`.
    match anchor.normalized() {
        GraphPoint::Root => a[(size, 0)] = 1.0,
        GraphPoint::Edge { k, h } => {
            let e = &coeffs.edges[k];
            let dh = e.width();
            let pos = (h - e.minimum) / dh - 0.5;
            let lo = pos.floor().clamp(0.0, (n[k] - 1) as f64) as usize;
            if lo + 1 < n[k] {
                let t = pos - lo as f64;
                a[(size, index[k] + lo)] = 1.0 - t;
                a[(size, index[k] + lo + 1)] = t;
            } else {
                let t = (h - e.center(n[k] - 1)) / (0.5 * dh);
                a[(size, index[k] + lo)] = 1.0 - t;
                a[(size, 0)] = t;
            }
        }
    }
    let x = a.lu().solve(&b).expect("bordered system is nonsingular");
    let centres = index.iter().zip(&n).map(|(&o, &len)| (0..len).map(|i| x[o + i]).collect()).collect();
    DenseSolution { root: x[0], centres, multiplier: x[size] }
}
