//! The limiting diffusion on Γ as a finite-volume continuous-time Markov
//! chain.
//!
//! Each edge `[m_k, 0]` is cut into `n` cells of width `Δh`; the root `O` is
//! one more cell whose volume is the area of the exterior region. Between
//! neighbouring cells the conductance is `½ (M ā)(face) / d`, with `d` the
//! distance between the two cell positions, and the rate from `i` to `j` is
//! the conductance divided by the volume of `i`. Rates therefore satisfy
//! detailed balance with respect to the cell volumes, and the stationary law
//! is the pushforward of Lebesgue measure.
//!
//! The root sits at `h = 0`, half a cell from the last edge centre, and the
//! face flux there is `½ p_k`. Summing the fluxes into `O` and dividing by
//! `Vol(E)` gives the discrete form of the gluing condition.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{EdgeCoefficients, GraphPoint};
use crate::sde::{run_paths, BinnedLaw};

/// Largest `Λ t` handled by a single uniformization chunk.
const CHUNK: f64 = 200.0;
const POISSON_TAIL: f64 = 1e-16;

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrix {
    pub minima: Vec<f64>,
    pub cells_per_edge: usize,
    /// Cell volumes; index 0 is the root.
    pub volumes: Vec<f64>,
    /// Off-diagonal rates `(j, q_ij)` per row.
    pub rates: Vec<Vec<(usize, f64)>>,
    /// `−q_ii`.
    pub exit_rates: Vec<f64>,
}

impl GeneratorMatrix {
    pub fn len(&self) -> usize {
        self.volumes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volumes.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.minima.len()
    }

    pub fn width(&self, k: usize) -> f64 {
        -self.minima[k] / self.cells_per_edge as f64
    }

    pub fn cell_index(&self, k: usize, i: usize) -> usize {
        1 + k * self.cells_per_edge + i
    }

    /// The graph point a cell stands for (its centre).
    pub fn cell_point(&self, cell: usize) -> GraphPoint {
        if cell == 0 {
            return GraphPoint::Root;
        }
        let k = (cell - 1) / self.cells_per_edge;
        let i = (cell - 1) % self.cells_per_edge;
        GraphPoint::Edge { k, h: self.minima[k] + (i as f64 + 0.5) * self.width(k) }
    }

    /// The cell containing a graph point.
    pub fn cell_of(&self, y: &GraphPoint) -> Result<usize> {
        match y.normalized() {
            GraphPoint::Root => Ok(0),
            GraphPoint::Edge { k, h } => {
                if k >= self.edge_count() {
                    return Err(Error::InvalidArgument(format!("edge {k} does not exist")));
                }
                let m = self.minima[k];
                if !(h >= m && h <= 0.0) {
                    return Err(Error::OffEdge { edge: k, level: h, minimum: m });
                }
                let i = (((h - m) / self.width(k)).floor() as usize).min(self.cells_per_edge - 1);
                Ok(self.cell_index(k, i))
            }
        }
    }

    /// Point mass at the cell containing `y`.
    pub fn initial_distribution(&self, y: &GraphPoint) -> Result<Vec<f64>> {
        let mut p = vec![0.0; self.len()];
        p[self.cell_of(y)?] = 1.0;
        Ok(p)
    }

    /// `(Q f)_i`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        self.rates
            .iter()
            .enumerate()
            .map(|(i, row)| row.iter().map(|&(j, q)| q * (f[j] - f[i])).sum())
            .collect()
    }

    /// `(p Q)_j`.
    pub fn apply_transpose(&self, p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for (i, row) in self.rates.iter().enumerate() {
            out[i] -= p[i] * self.exit_rates[i];
            for &(j, q) in row {
                out[j] += p[i] * q;
            }
        }
        out
    }

    /// Largest `|vol_i q_ij − vol_j q_ji|` relative to the flux scale.
    pub fn detailed_balance_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, row) in self.rates.iter().enumerate() {
            for &(j, q) in row {
                let back = self.rates[j].iter().find(|(l, _)| *l == i).map_or(0.0, |(_, q)| *q);
                let (a, b) = (self.volumes[i] * q, self.volumes[j] * back);
                worst = worst.max((a - b).abs() / a.abs().max(b.abs()));
            }
        }
        worst
    }

    /// Largest absolute row sum of `Q`.
    pub fn row_sum_residual(&self) -> f64 {
        self.rates
            .iter()
            .zip(&self.exit_rates)
            .map(|(row, exit)| (row.iter().map(|(_, q)| q).sum::<f64>() - exit).abs())
            .fold(0.0, f64::max)
    }

    /// The stationary law, proportional to the cell volumes.
    pub fn stationary(&self) -> Vec<f64> {
        let total: f64 = self.volumes.iter().sum();
        self.volumes.iter().map(|v| v / total).collect()
    }

    /// Dense copy of `Q`.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let n = self.len();
        let mut q = nalgebra::DMatrix::zeros(n, n);
        for (i, row) in self.rates.iter().enumerate() {
            q[(i, i)] = -self.exit_rates[i];
            for &(j, r) in row {
                q[(i, j)] = r;
            }
        }
        q
    }

    /// Cell probabilities collected into `bins` uniform bins per edge plus
    /// the root atom. Cells straddling a bin edge are split by overlap.
    pub fn bin(&self, p: &[f64], bins: usize) -> BinnedLaw {
        let mut law = BinnedLaw {
            root: p[0],
            edges: vec![vec![0.0; bins]; self.edge_count()],
            minima: self.minima.clone(),
        };
        let n = self.cells_per_edge;
        for k in 0..self.edge_count() {
            for i in 0..n {
                let mass = p[self.cell_index(k, i)];
                // Cell i covers [i/n, (i+1)/n] of the edge in relative units.
                let (lo, hi) = (i as f64 * bins as f64 / n as f64, (i + 1) as f64 * bins as f64 / n as f64);
                let mut b = lo.floor() as usize;
                while (b as f64) < hi && b < bins {
                    let overlap = hi.min(b as f64 + 1.0) - lo.max(b as f64);
                    law.edges[k][b] += mass * overlap / (hi - lo);
                    b += 1;
                }
            }
        }
        law
    }

    /// Sparse JSON description: cell labels, volumes and `(i, j, q_ij)`
    /// triplets including the diagonal.
    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Sparse<'a> {
            cells: Vec<String>,
            volumes: &'a [f64],
            triplets: Vec<(usize, usize, f64)>,
        }
        let cells = (0..self.len())
            .map(|c| match self.cell_point(c) {
                GraphPoint::Root => "O".to_string(),
                GraphPoint::Edge { k, h } => format!("edge{k}:{h}"),
            })
            .collect();
        let mut triplets = Vec::new();
        for (i, row) in self.rates.iter().enumerate() {
            triplets.push((i, i, -self.exit_rates[i]));
            triplets.extend(row.iter().map(|&(j, q)| (i, j, q)));
        }
        Ok(serde_json::to_string_pretty(&Sparse { cells, volumes: &self.volumes, triplets })?)
    }
}

/// Builds the chain with `n_cells` cells per edge.
///
/// `n_cells` must divide `2 × coeffs` cells so that every coarse face falls
/// on the tabulated half grid.
pub fn build_generator(coeffs: &EdgeCoefficients, n_cells: usize) -> Result<GeneratorMatrix> {
    if n_cells == 0 {
        return Err(Error::DegenerateGenerator("need at least one cell per edge".into()));
    }
    if !(coeffs.exterior_volume > 0.0) {
        return Err(Error::DegenerateGenerator(format!(
            "root volume must be positive, got {}",
            coeffs.exterior_volume
        )));
    }
    let mut volumes = vec![coeffs.exterior_volume];
    let mut rates: Vec<Vec<(usize, f64)>> = vec![Vec::new()];
    let mut minima = Vec::new();
    for (k, table) in coeffs.edges.iter().enumerate() {
        let half = 2 * table.cells;
        if half % n_cells != 0 {
            return Err(Error::InvalidArgument(format!(
                "{n_cells} cells do not align with the {}-cell table of edge {k}",
                table.cells
            )));
        }
        let stride = half / n_cells;
        let dh = -table.minimum / n_cells as f64;
        let base = volumes.len();
        for i in 0..n_cells {
            let v = table.volume[(i + 1) * stride] - table.volume[i * stride];
            if !(v > 0.0) {
                return Err(Error::DegenerateGenerator(format!("edge {k} cell {i} has volume {v}")));
            }
            volumes.push(v);
            rates.push(Vec::new());
        }
        let mut connect = |a: usize, b: usize, conductance: f64, level: f64| -> Result<()> {
            if !(conductance > 0.0) || !conductance.is_finite() {
                return Err(Error::DegenerateGenerator(format!(
                    "edge {k}: conductance {conductance} at h = {level}"
                )));
            }
            rates[a].push((b, conductance / volumes[a]));
            rates[b].push((a, conductance / volumes[b]));
            Ok(())
        };
        for i in 1..n_cells {
            let j = i * stride;
            connect(base + i - 1, base + i, 0.5 * table.flux_coefficient(j) / dh, table.h[j])?;
        }
        connect(base + n_cells - 1, 0, 0.5 * table.p / (0.5 * dh), 0.0)?;
        minima.push(table.minimum);
    }
    let exit_rates = rates.iter().map(|row| row.iter().map(|(_, q)| q).sum()).collect();
    Ok(GeneratorMatrix { minima, cells_per_edge: n_cells, volumes, rates, exit_rates })
}

/// `p₀ exp(tQ)` by uniformization, split into chunks with `Λ Δt ≤ 200` so
/// that the Poisson weights stay representable.
pub fn marginal_at(gen: &GeneratorMatrix, initial: &[f64], t: f64) -> Result<Vec<f64>> {
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("time must be nonnegative, got {t}")));
    }
    if initial.len() != gen.len() {
        return Err(Error::InvalidArgument(format!(
            "initial law has {} entries, generator has {} cells",
            initial.len(),
            gen.len()
        )));
    }
    let lambda = gen.exit_rates.iter().cloned().fold(0.0, f64::max);
    let mut p = initial.to_vec();
    if t == 0.0 || lambda == 0.0 {
        return Ok(p);
    }
    let chunks = (lambda * t / CHUNK).ceil().max(1.0) as usize;
    let mu = lambda * t / chunks as f64;
    for _ in 0..chunks {
        p = uniformized_step(gen, &p, lambda, mu);
    }
    Ok(p)
}

fn uniformized_step(gen: &GeneratorMatrix, p0: &[f64], lambda: f64, mu: f64) -> Vec<f64> {
    let mut term = p0.to_vec();
    let mut weight = (-mu).exp();
    let mut accumulated = weight;
    let mut out: Vec<f64> = term.iter().map(|x| x * weight).collect();
    let mut n = 0usize;
    while 1.0 - accumulated > POISSON_TAIL && (n as f64) < mu + 50.0 * mu.sqrt() + 50.0 {
        n += 1;
        let q = gen.apply_transpose(&term);
        for (t, d) in term.iter_mut().zip(&q) {
            *t += d / lambda;
        }
        weight *= mu / n as f64;
        accumulated += weight;
        for (o, t) in out.iter_mut().zip(&term) {
            *o += weight * t;
        }
    }
    out.iter().map(|x| x / accumulated).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CtmcPath {
    /// Cell occupied at each observation time.
    pub observations: Vec<usize>,
    /// Fraction of `[0, T]` spent in the root cell.
    pub root_fraction: f64,
}

/// Exact jump-chain simulation with exponential holding times.
pub fn simulate_ctmc(
    gen: &GeneratorMatrix,
    initial: usize,
    horizon: f64,
    observation_times: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<Vec<CtmcPath>> {
    if initial >= gen.len() {
        return Err(Error::InvalidArgument(format!("cell {initial} does not exist")));
    }
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    if observation_times.windows(2).any(|w| w[1] < w[0]) || observation_times.iter().any(|t| *t < 0.0 || *t > horizon) {
        return Err(Error::InvalidArgument("observation times must be sorted within [0, T]".into()));
    }
    Ok(run_paths(n_paths, seed, |_, rng| {
        let mut cell = initial;
        let mut now = 0.0;
        let mut root_time = 0.0;
        let mut observations = Vec::with_capacity(observation_times.len());
        let mut next_obs = 0;
        loop {
            let exit = gen.exit_rates[cell];
            let hold = if exit > 0.0 { Exp::new(exit).expect("positive rate").sample(rng) } else { f64::INFINITY };
            let leave = now + hold;
            while next_obs < observation_times.len() && observation_times[next_obs] < leave {
                observations.push(cell);
                next_obs += 1;
            }
            if cell == 0 {
                root_time += leave.min(horizon) - now;
            }
            if leave >= horizon {
                break;
            }
            now = leave;
            let mut u = rng.random::<f64>() * exit;
            let row = &gen.rates[cell];
            cell = row.last().expect("positive exit rate implies a neighbour").0;
            for &(j, q) in row {
                if u < q {
                    cell = j;
                    break;
                }
                u -= q;
            }
        }
        CtmcPath { observations, root_fraction: root_time / horizon }
    }))
}
