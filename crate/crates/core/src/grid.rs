//! Regular lon/lat/level lattice with a one-cell ghost ring.
//!
//! Interior cells are flattened row by row (`iy * nx + ix`). The ghost ring
//! is indexed separately: west edge (south to north), east edge, south edge
//! (west to east), north edge, then the four corners SW, SE, NW, NE.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Tolerance on `(max - min) / spacing` being an integer.
const STEP_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
    pub d_lon: f64,
    pub d_lat: f64,
    /// Pressure levels in hPa, bottom (largest) to top.
    pub levels: Vec<f64>,
    #[serde(default = "default_radius")]
    pub earth_radius: f64,
}

fn default_radius() -> f64 {
    EARTH_RADIUS_M
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            lon_min: 231.5,
            lon_max: 248.5,
            lat_min: 33.5,
            lat_max: 48.5,
            d_lon: 1.0,
            d_lat: 1.0,
            levels: vec![850.0, 750.0, 650.0, 550.0, 450.0],
            earth_radius: EARTH_RADIUS_M,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid3D {
    pub spec: GridSpec,
    pub nx: usize,
    pub ny: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CellIndex {
    pub ix: usize,
    pub iy: usize,
}

/// What a stencil slot points at: an interior cell (flat index) or a ghost
/// ring cell (ring index).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NeighborRef {
    Interior(usize),
    Ghost(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Neighbors {
    pub east: NeighborRef,
    pub west: NeighborRef,
    pub north: NeighborRef,
    pub south: NeighborRef,
}

impl Neighbors {
    /// Slots in fixed order E, W, N, S.
    pub fn slots(&self) -> [NeighborRef; 4] {
        [self.east, self.west, self.north, self.south]
    }
}

fn step_count(min: f64, max: f64, d: f64, axis: &str) -> Result<usize> {
    if !(d > 0.0) || !min.is_finite() || !max.is_finite() {
        return Err(Error::Grid(format!("{axis}: spacing must be positive and bounds finite")));
    }
    if max <= min {
        return Err(Error::Grid(format!("{axis}: max {max} must exceed min {min}")));
    }
    let steps = (max - min) / d;
    let rounded = steps.round();
    if (steps - rounded).abs() > STEP_TOL {
        return Err(Error::Grid(format!(
            "{axis}: range {min}..{max} is not an integral number of {d} steps ({steps:.4})"
        )));
    }
    Ok(rounded as usize + 1)
}

pub fn build_grid(spec: GridSpec) -> Result<Grid3D> {
    let nx = step_count(spec.lon_min, spec.lon_max, spec.d_lon, "lon")?;
    let ny = step_count(spec.lat_min, spec.lat_max, spec.d_lat, "lat")?;
    if nx < 3 || ny < 3 {
        return Err(Error::Grid(format!("need at least 3 cells per axis, got {nx}x{ny}")));
    }
    if spec.levels.len() < 2 {
        return Err(Error::Grid("need at least 2 levels".into()));
    }
    if spec.levels.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Grid("levels must be strictly decreasing in hPa".into()));
    }
    if !(spec.earth_radius > 0.0) {
        return Err(Error::Grid("earth radius must be positive".into()));
    }
    Ok(Grid3D { spec, nx, ny })
}

impl Grid3D {
    /// Interior cells per level.
    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    /// Ghost-ring cells per level.
    pub fn n_ghost(&self) -> usize {
        2 * (self.nx + self.ny) + 4
    }

    pub fn n_levels(&self) -> usize {
        self.spec.levels.len()
    }

    pub fn flatten(&self, c: CellIndex) -> usize {
        debug_assert!(c.ix < self.nx && c.iy < self.ny);
        c.iy * self.nx + c.ix
    }

    pub fn unflatten(&self, flat: usize) -> CellIndex {
        CellIndex {
            ix: flat % self.nx,
            iy: flat / self.nx,
        }
    }

    pub fn lon(&self, ix: i64) -> f64 {
        self.spec.lon_min + ix as f64 * self.spec.d_lon
    }

    pub fn lat(&self, iy: i64) -> f64 {
        self.spec.lat_min + iy as f64 * self.spec.d_lat
    }

    pub fn ghost_west(&self, iy: usize) -> usize {
        iy
    }
    pub fn ghost_east(&self, iy: usize) -> usize {
        self.ny + iy
    }
    pub fn ghost_south(&self, ix: usize) -> usize {
        2 * self.ny + ix
    }
    pub fn ghost_north(&self, ix: usize) -> usize {
        2 * self.ny + self.nx + ix
    }
    /// Corner ring index, `0..4` in order SW, SE, NW, NE.
    pub fn ghost_corner(&self, which: usize) -> usize {
        debug_assert!(which < 4);
        2 * (self.nx + self.ny) + which
    }

    /// Position of a ghost cell in extended coordinates, where the interior
    /// spans `0..nx` x `0..ny` and the ring sits at -1 and nx (resp. ny).
    pub fn ghost_coords(&self, b: usize) -> (i64, i64) {
        let (nx, ny) = (self.nx as i64, self.ny as i64);
        let b = b as i64;
        if b < ny {
            (-1, b)
        } else if b < 2 * ny {
            (nx, b - ny)
        } else if b < 2 * ny + nx {
            (b - 2 * ny, -1)
        } else if b < 2 * ny + 2 * nx {
            (b - 2 * ny - nx, ny)
        } else {
            match b - 2 * (nx + ny) {
                0 => (-1, -1),
                1 => (nx, -1),
                2 => (-1, ny),
                _ => (nx, ny),
            }
        }
    }

    /// Inverse of [`Grid3D::ghost_coords`]; `None` for positions that are
    /// not on the ring.
    pub fn ghost_at(&self, ix: i64, iy: i64) -> Option<usize> {
        let (nx, ny) = (self.nx as i64, self.ny as i64);
        match (ix, iy) {
            (-1, -1) => Some(self.ghost_corner(0)),
            (x, -1) if x == nx => Some(self.ghost_corner(1)),
            (-1, y) if y == ny => Some(self.ghost_corner(2)),
            (x, y) if x == nx && y == ny => Some(self.ghost_corner(3)),
            (-1, y) if (0..ny).contains(&y) => Some(self.ghost_west(y as usize)),
            (x, y) if x == nx && (0..ny).contains(&y) => Some(self.ghost_east(y as usize)),
            (x, -1) if (0..nx).contains(&x) => Some(self.ghost_south(x as usize)),
            (x, y) if y == ny && (0..nx).contains(&x) => Some(self.ghost_north(x as usize)),
            _ => None,
        }
    }

    pub fn neighbors(&self, c: CellIndex) -> Neighbors {
        let (ix, iy) = (c.ix, c.iy);
        let east = if ix + 1 < self.nx {
            NeighborRef::Interior(self.flatten(CellIndex { ix: ix + 1, iy }))
        } else {
            NeighborRef::Ghost(self.ghost_east(iy))
        };
        let west = if ix > 0 {
            NeighborRef::Interior(self.flatten(CellIndex { ix: ix - 1, iy }))
        } else {
            NeighborRef::Ghost(self.ghost_west(iy))
        };
        let north = if iy + 1 < self.ny {
            NeighborRef::Interior(self.flatten(CellIndex { ix, iy: iy + 1 }))
        } else {
            NeighborRef::Ghost(self.ghost_north(ix))
        };
        let south = if iy > 0 {
            NeighborRef::Interior(self.flatten(CellIndex { ix, iy: iy - 1 }))
        } else {
            NeighborRef::Ghost(self.ghost_south(ix))
        };
        Neighbors {
            east,
            west,
            north,
            south,
        }
    }

    /// Metric spacings `(dx, dy)` in meters for row `iy`; `dx` shrinks with
    /// the cosine of the row latitude.
    pub fn cell_spacing(&self, iy: usize) -> (f64, f64) {
        let r = self.spec.earth_radius;
        let dy = r * self.spec.d_lat.to_radians();
        let dx = r * self.lat(iy as i64).to_radians().cos() * self.spec.d_lon.to_radians();
        (dx, dy)
    }

    /// Great-circle distance in meters between two interior cell centers.
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let (ca, cb) = (self.unflatten(a), self.unflatten(b));
        haversine(
            self.spec.earth_radius,
            self.lon(ca.ix as i64),
            self.lat(ca.iy as i64),
            self.lon(cb.ix as i64),
            self.lat(cb.iy as i64),
        )
    }

    /// Index of the middle level, the default reporting level.
    pub fn middle_level(&self) -> usize {
        self.n_levels() / 2
    }
}

pub fn haversine(radius: f64, lon1: f64, lat1: f64, lon2: f64, lat2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * radius * h.sqrt().min(1.0).asin()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(lon: (f64, f64), lat: (f64, f64), d: f64, levels: &[f64]) -> GridSpec {
        GridSpec {
            lon_min: lon.0,
            lon_max: lon.1,
            lat_min: lat.0,
            lat_max: lat.1,
            d_lon: d,
            d_lat: d,
            levels: levels.to_vec(),
            earth_radius: EARTH_RADIUS_M,
        }
    }

    fn small() -> Grid3D {
        build_grid(spec((0.0, 2.0), (0.0, 2.0), 1.0, &[850.0, 750.0])).unwrap()
    }

    #[test]
    fn default_domain_counts() {
        let g = build_grid(GridSpec::default()).unwrap();
        assert_eq!((g.nx, g.ny, g.n_cells(), g.n_levels()), (18, 16, 288, 5));
        assert_eq!(g.n_ghost(), 2 * (18 + 16) + 4);
    }

    #[test]
    fn small_domain_counts() {
        let g = small();
        assert_eq!((g.nx, g.ny, g.n_cells(), g.n_ghost()), (3, 3, 9, 16));
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(build_grid(spec((0.0, 2.0), (0.0, 2.0), 0.7, &[850.0, 750.0])).is_err());
        assert!(build_grid(spec((0.0, 1.0), (0.0, 2.0), 1.0, &[850.0, 750.0])).is_err());
        assert!(build_grid(spec((0.0, 2.0), (0.0, 2.0), 1.0, &[750.0, 850.0])).is_err());
        assert!(build_grid(spec((0.0, 2.0), (0.0, 2.0), 1.0, &[850.0])).is_err());
    }

    #[test]
    fn neighbor_cases() {
        let g = small();
        let n = g.neighbors(CellIndex { ix: 1, iy: 1 });
        assert!(n.slots().iter().all(|s| matches!(s, NeighborRef::Interior(_))));

        let n = g.neighbors(CellIndex { ix: 0, iy: 1 });
        assert_eq!(n.west, NeighborRef::Ghost(g.ghost_west(1)));
        assert_eq!(g.ghost_coords(g.ghost_west(1)), (-1, 1));

        let n = g.neighbors(CellIndex { ix: 0, iy: 0 });
        assert!(matches!(n.west, NeighborRef::Ghost(_)));
        assert!(matches!(n.south, NeighborRef::Ghost(_)));
        assert_eq!(n.east, NeighborRef::Interior(1));
        assert_eq!(n.north, NeighborRef::Interior(3));
    }

    #[test]
    fn spacings() {
        let g = build_grid(spec((0.0, 2.0), (0.0, 2.0), 1.0, &[850.0, 750.0])).unwrap();
        let (dx0, dy) = g.cell_spacing(0);
        assert!((dy - 111_194.93).abs() < 0.01);
        assert!((dx0 - dy).abs() < 1e-9);

        let g = build_grid(spec((0.0, 2.0), (40.5, 42.5), 1.0, &[850.0, 750.0])).unwrap();
        let (dx, _) = g.cell_spacing(1);
        let expected = EARTH_RADIUS_M * (41.5f64).to_radians().cos() * std::f64::consts::PI / 180.0;
        assert!((dx - expected).abs() < 1e-6);
        assert!((dx - 83_300.0).abs() < 100.0);
    }

    #[test]
    fn ring_is_covered_by_edges_and_corners() {
        let g = build_grid(spec((0.0, 4.0), (0.0, 3.0), 1.0, &[850.0, 750.0])).unwrap();
        let mut hits = vec![0usize; g.n_ghost()];
        for flat in 0..g.n_cells() {
            for s in g.neighbors(g.unflatten(flat)).slots() {
                if let NeighborRef::Ghost(b) = s {
                    hits[b] += 1;
                }
            }
        }
        for b in 0..g.n_ghost() {
            let corner = b >= 2 * (g.nx + g.ny);
            assert_eq!(hits[b], if corner { 0 } else { 1 }, "ring cell {b}");
            let (x, y) = g.ghost_coords(b);
            assert_eq!(g.ghost_at(x, y), Some(b));
        }
    }

    proptest! {
        #[test]
        fn flatten_and_symmetry(nx in 3usize..9, ny in 3usize..9, seed in 0usize..1000) {
            let g = build_grid(spec((0.0, (nx - 1) as f64), (0.0, (ny - 1) as f64), 1.0, &[850.0, 750.0])).unwrap();
            let flat = seed % g.n_cells();
            let c = g.unflatten(flat);
            prop_assert_eq!(g.flatten(c), flat);
            let n = g.neighbors(c);
            if let NeighborRef::Interior(w) = n.west {
                prop_assert_eq!(g.neighbors(g.unflatten(w)).east, NeighborRef::Interior(flat));
            }
            if let NeighborRef::Interior(s) = n.south {
                prop_assert_eq!(g.neighbors(g.unflatten(s)).north, NeighborRef::Interior(flat));
            }
        }
    }
}
