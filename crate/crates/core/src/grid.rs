use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform mesh in the vehicle frame. The vehicle sits at `x = 0`, which is
/// always a cell edge: edge `e` lies at `(e - interface_edge) * dx`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct Grid {
    x_min: f64,
    x_max: f64,
    cells: usize,
    dx: f64,
    interface_edge: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSpec {
    x_min: f64,
    x_max: f64,
    cells: usize,
}

impl TryFrom<GridSpec> for Grid {
    type Error = Error;

    fn try_from(s: GridSpec) -> Result<Self> {
        Grid::new(s.x_min, s.x_max, s.cells)
    }
}

impl From<Grid> for GridSpec {
    fn from(g: Grid) -> Self {
        GridSpec {
            x_min: g.x_min,
            x_max: g.x_max,
            cells: g.cells,
        }
    }
}

impl Grid {
    pub fn new(x_min: f64, x_max: f64, cells: usize) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite() && x_min < 0.0 && x_max > 0.0) {
            return Err(Error::config(format!(
                "grid [{x_min}, {x_max}] must contain the vehicle at x = 0 in its interior"
            )));
        }
        if cells < 4 {
            return Err(Error::config(format!("grid needs at least 4 cells, got {cells}")));
        }
        let dx = (x_max - x_min) / cells as f64;
        let left = -x_min / dx;
        let interface_edge = left.round();
        if (left - interface_edge).abs() > 1e-8 * left.max(1.0) {
            return Err(Error::config(format!(
                "x = 0 is not a cell edge of [{x_min}, {x_max}] with {cells} cells"
            )));
        }
        let interface_edge = interface_edge as usize;
        if interface_edge == 0 || interface_edge >= cells {
            return Err(Error::config("vehicle must not sit on the domain boundary"));
        }
        Ok(Grid {
            x_min,
            x_max,
            cells,
            dx,
            interface_edge,
        })
    }

    /// Grid with `left` cells behind and `right` cells ahead of the vehicle.
    pub fn from_counts(dx: f64, left: usize, right: usize) -> Result<Self> {
        Grid::new(-(left as f64) * dx, right as f64 * dx, left + right)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    /// Index of the edge at `x = 0`; also the index of the first cell ahead of
    /// the vehicle.
    pub fn interface_edge(&self) -> usize {
        self.interface_edge
    }

    #[inline]
    pub fn edge(&self, e: usize) -> f64 {
        (e as f64 - self.interface_edge as f64) * self.dx
    }

    #[inline]
    pub fn center(&self, i: usize) -> f64 {
        (i as f64 - self.interface_edge as f64 + 0.5) * self.dx
    }

    /// The same domain with twice as many cells.
    pub fn refined(&self) -> Result<Grid> {
        Grid::new(self.x_min, self.x_max, 2 * self.cells)
    }

    /// `true` when `fine` splits every cell of `self` into two.
    pub fn nests(&self, fine: &Grid) -> bool {
        fine.cells == 2 * self.cells
            && fine.interface_edge == 2 * self.interface_edge
            && fine.dx * 2.0 == self.dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interface_is_an_edge() {
        let g = Grid::new(-0.4, 0.6, 40).unwrap();
        assert_eq!(g.interface_edge(), 16);
        assert_eq!(g.edge(16), 0.0);
        assert!(Grid::new(-0.41, 0.6, 40).is_err());
        assert!(Grid::new(0.0, 1.0, 40).is_err());
        assert!(Grid::new(-1.0, 1.0, 2).is_err());
    }

    #[test]
    fn refinement_nests() {
        let g = Grid::new(-0.4, 0.6, 40).unwrap();
        let f = g.refined().unwrap();
        assert!(g.nests(&f));
        assert!(!f.nests(&g));
    }
}
