//! Euler-forward, centered-difference advection operator.
//!
//! For level `l` and step `k -> k+1` the transition mean of interior cell `i`
//! is `m x_k(i) + f x_{k+1}(i, l-1) + sum_s c_s x_k(nbr_s(i))`, where the four
//! stencil coefficients are `+-dt u / (2 dx)` (east/west) and `+-dt v / (2 dy)`
//! (north/south), evaluated with the wind at the receiving cell. The
//! neighbors may be interior cells or ghost-ring cells; the interior part of
//! the stencil is `A_k(l)` and the ghost part `A_k^B(l)`.
//!
//! Time indices are zero-based throughout: a propagator built for `k` maps
//! time `k` to `k + 1`, so `k` ranges over `0..T-1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid3D, NeighborRef};

/// Sanity bound on wind components, m/s.
pub const MAX_WIND: f64 = 150.0;

/// Which sign convention multiplies the forward difference.
///
/// `Model` keeps `+u dX/dx` on the right-hand side as written in the
/// hierarchical model; `Physical` uses the tracer-advection form `-u dX/dx`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdvectionSign {
    #[default]
    Model,
    Physical,
}

impl AdvectionSign {
    fn factor(self) -> f64 {
        match self {
            AdvectionSign::Model => 1.0,
            AdvectionSign::Physical => -1.0,
        }
    }
}

/// Horizontal winds over `(time, level, interior cell)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindField {
    pub n_times: usize,
    pub n_levels: usize,
    pub n_cells: usize,
    /// Time step in seconds.
    pub dt: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl WindField {
    pub fn new(n_times: usize, n_levels: usize, n_cells: usize, dt: f64, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        let len = n_times * n_levels * n_cells;
        if u.len() != len || v.len() != len {
            return Err(Error::Dimension(format!(
                "wind arrays have {} / {} values, expected {len}",
                u.len(),
                v.len()
            )));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::config("winds.dt", "time step must be positive"));
        }
        if let Some(bad) = u.iter().chain(v.iter()).find(|c| !c.is_finite() || c.abs() > MAX_WIND) {
            return Err(Error::Numerical(format!("wind component {bad} is not finite or exceeds {MAX_WIND} m/s")));
        }
        Ok(WindField {
            n_times,
            n_levels,
            n_cells,
            dt,
            u,
            v,
        })
    }

    pub fn zeros(n_times: usize, n_levels: usize, n_cells: usize, dt: f64) -> Self {
        let len = n_times * n_levels * n_cells;
        WindField {
            n_times,
            n_levels,
            n_cells,
            dt,
            u: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    #[inline]
    pub fn index(&self, k: usize, l: usize, i: usize) -> usize {
        (k * self.n_levels + l) * self.n_cells + i
    }

    pub fn at(&self, k: usize, l: usize, i: usize) -> (f64, f64) {
        let idx = self.index(k, l, i);
        (self.u[idx], self.v[idx])
    }
}

/// One stencil row: the four neighbor slots (E, W, N, S) and their
/// coefficients.
pub type StencilRow = [(NeighborRef, f64); 4];

#[derive(Debug, Clone, PartialEq)]
pub struct Propagator {
    pub k: usize,
    pub level: usize,
    pub rows: Vec<StencilRow>,
    pub n_ghost: usize,
}

pub fn build_propagator(g: &Grid3D, w: &WindField, k: usize, l: usize, sign: AdvectionSign) -> Result<Propagator> {
    if w.n_cells != g.n_cells() || w.n_levels != g.n_levels() {
        return Err(Error::Dimension("wind field does not match grid".into()));
    }
    if k + 1 >= w.n_times {
        return Err(Error::OutOfRange(format!("time {k} has no successor (T = {})", w.n_times)));
    }
    if l >= g.n_levels() {
        return Err(Error::OutOfRange(format!("level {l} (L = {})", g.n_levels())));
    }
    let s = sign.factor();
    let rows = (0..g.n_cells())
        .map(|i| {
            let c = g.unflatten(i);
            let (dx, dy) = g.cell_spacing(c.iy);
            let (u, v) = w.at(k, l, i);
            let cx = s * w.dt * u / (2.0 * dx);
            let cy = s * w.dt * v / (2.0 * dy);
            let n = g.neighbors(c);
            [(n.east, cx), (n.west, -cx), (n.north, cy), (n.south, -cy)]
        })
        .collect();
    Ok(Propagator {
        k,
        level: l,
        rows,
        n_ghost: g.n_ghost(),
    })
}

impl Propagator {
    pub fn n_cells(&self) -> usize {
        self.rows.len()
    }

    /// Advective part `A x + A_B xb` for one row.
    #[inline]
    pub fn advect_row(&self, i: usize, x: &[f64], xb: &[f64]) -> f64 {
        self.rows[i]
            .iter()
            .map(|&(r, c)| match r {
                NeighborRef::Interior(j) => c * x[j],
                NeighborRef::Ghost(b) => c * xb[b],
            })
            .sum()
    }

    /// Dense copies of `A` (N x N) and `A_B` (N x N_B), row-major.
    pub fn to_dense(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n_cells();
        let mut a = vec![0.0; n * n];
        let mut ab = vec![0.0; n * self.n_ghost];
        for (i, row) in self.rows.iter().enumerate() {
            for &(r, c) in row {
                match r {
                    NeighborRef::Interior(j) => a[i * n + j] += c,
                    NeighborRef::Ghost(b) => ab[i * self.n_ghost + b] += c,
                }
            }
        }
        (a, ab)
    }
}

/// Deterministic one-step transition mean.
pub fn step_mean(
    x_k: &[f64],
    xb_k: &[f64],
    x_below_next: Option<&[f64]>,
    m: f64,
    f: f64,
    p: &Propagator,
) -> Result<Vec<f64>> {
    let n = p.n_cells();
    if x_k.len() != n || xb_k.len() != p.n_ghost {
        return Err(Error::Dimension(format!(
            "state slice {} / ghost slice {} vs propagator {n} / {}",
            x_k.len(),
            xb_k.len(),
            p.n_ghost
        )));
    }
    if let Some(b) = x_below_next {
        if b.len() != n {
            return Err(Error::Dimension(format!("level-below slice has {} cells, expected {n}", b.len())));
        }
    }
    Ok((0..n)
        .map(|i| {
            let below = x_below_next.map_or(0.0, |b| f * b[i]);
            m * x_k[i] + below + p.advect_row(i, x_k, xb_k)
        })
        .collect())
}

/// Repeats the deterministic step with `m = 1`, `f = 0` and a zero ring,
/// reusing one stencil.
pub fn free_run(p: &Propagator, x0: &[f64], steps: usize) -> Result<Vec<f64>> {
    let ring = vec![0.0; p.n_ghost];
    let mut x = x0.to_vec();
    for _ in 0..steps {
        x = step_mean(&x, &ring, None, 1.0, 0.0, p)?;
    }
    Ok(x)
}

/// Alternating +1 / -1 pattern over the interior.
pub fn checkerboard(g: &Grid3D) -> Vec<f64> {
    (0..g.n_cells())
        .map(|i| {
            let c = g.unflatten(i);
            if (c.ix + c.iy) % 2 == 0 {
                1.0
            } else {
                -1.0
            }
        })
        .collect()
}

/// Largest Courant number `|dt u / dx| + |dt v / dy|` over all times,
/// levels and cells.
pub fn courant_report(g: &Grid3D, w: &WindField) -> f64 {
    let mut worst: f64 = 0.0;
    for k in 0..w.n_times {
        for l in 0..w.n_levels {
            for i in 0..w.n_cells {
                let (dx, dy) = g.cell_spacing(g.unflatten(i).iy);
                let (u, v) = w.at(k, l, i);
                worst = worst.max((w.dt * u / dx).abs() + (w.dt * v / dy).abs());
            }
        }
    }
    worst
}

/// Where each interior or ghost cell is referenced from, i.e. the transpose
/// of the stencil topology. Entries are `(row, slot)` pairs; the slot indexes
/// into a [`StencilRow`]. Topology does not depend on `(k, l)`.
#[derive(Debug, Clone)]
pub struct StencilAdjacency {
    pub interior: Vec<Vec<(usize, usize)>>,
    pub ghost: Vec<Vec<(usize, usize)>>,
}

impl StencilAdjacency {
    pub fn new(g: &Grid3D) -> Self {
        let rows: Vec<[NeighborRef; 4]> = (0..g.n_cells()).map(|i| g.neighbors(g.unflatten(i)).slots()).collect();
        Self::from_refs(&rows, g.n_cells(), g.n_ghost())
    }

    pub fn from_refs(rows: &[[NeighborRef; 4]], n_cells: usize, n_ghost: usize) -> Self {
        let mut interior = vec![Vec::new(); n_cells];
        let mut ghost = vec![Vec::new(); n_ghost];
        for (row, refs) in rows.iter().enumerate() {
            for (slot, r) in refs.iter().enumerate() {
                match *r {
                    NeighborRef::Interior(j) => interior[j].push((row, slot)),
                    NeighborRef::Ghost(b) => ghost[b].push((row, slot)),
                }
            }
        }
        StencilAdjacency { interior, ghost }
    }
}

/// All propagators for `k in 0..T-1`, `l in 0..L`, indexed `k * L + l`.
#[derive(Debug, Clone)]
pub struct PropagatorSet {
    pub n_levels: usize,
    pub n_cells: usize,
    pub n_ghost: usize,
    pub props: Vec<Propagator>,
    pub adjacency: StencilAdjacency,
}

impl PropagatorSet {
    pub fn build(g: &Grid3D, w: &WindField, sign: AdvectionSign) -> Result<Self> {
        let mut props = Vec::with_capacity(w.n_times.saturating_sub(1) * g.n_levels());
        for k in 0..w.n_times.saturating_sub(1) {
            for l in 0..g.n_levels() {
                props.push(build_propagator(g, w, k, l, sign)?);
            }
        }
        Ok(PropagatorSet {
            n_levels: g.n_levels(),
            n_cells: g.n_cells(),
            n_ghost: g.n_ghost(),
            props,
            adjacency: StencilAdjacency::new(g),
        })
    }

    /// Assembles a set from hand-built propagators, all of which must share
    /// one stencil topology.
    pub fn from_parts(n_levels: usize, n_cells: usize, n_ghost: usize, props: Vec<Propagator>) -> Result<Self> {
        if props.len() % n_levels.max(1) != 0 {
            return Err(Error::Dimension(format!("{} propagators for {n_levels} levels", props.len())));
        }
        let topology = |p: &Propagator| -> Vec<[NeighborRef; 4]> { p.rows.iter().map(|r| r.map(|(nr, _)| nr)).collect() };
        let refs: Vec<[NeighborRef; 4]> = match props.first() {
            Some(p) => topology(p),
            None => vec![[NeighborRef::Ghost(0); 4]; 0],
        };
        for p in &props {
            if p.rows.len() != n_cells || p.n_ghost != n_ghost || topology(p) != refs {
                return Err(Error::Dimension("propagators disagree on stencil topology".into()));
            }
        }
        let adjacency = if refs.is_empty() {
            StencilAdjacency {
                interior: vec![Vec::new(); n_cells],
                ghost: vec![Vec::new(); n_ghost],
            }
        } else {
            StencilAdjacency::from_refs(&refs, n_cells, n_ghost)
        };
        Ok(PropagatorSet {
            n_levels,
            n_cells,
            n_ghost,
            props,
            adjacency,
        })
    }

    #[inline]
    pub fn get(&self, k: usize, l: usize) -> &Propagator {
        &self.props[k * self.n_levels + l]
    }
}
