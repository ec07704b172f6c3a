//! Circuit and grid data model: netlists, placements, the bin grid, the
//! geometrical feature channels, the cell graph, and synthetic designs.

pub mod archive;
pub mod bookshelf;
mod features;
mod synth;
mod topo;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use archive::{Dataset, Example, Split};
pub use bookshelf::{parse_bookshelf, write_bookshelf, BookshelfText};
pub use features::{compute_macro_region, compute_pin_rudy, compute_rudy, geom_features, MIN_BOX_EXTENT};
pub use synth::{route_demand, synth_generate, SynthSpec};
pub use topo::{build_topo_features, TOPO_WIDTH};

/// Floor applied to congestion values so maps stay strictly positive.
pub const CONGESTION_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum CircuitError {
    #[error("{file}:{line}: {msg}")]
    Syntax {
        file: &'static str,
        line: usize,
        msg: String,
    },
    #[error("net {net} references unknown cell {cell:?}")]
    DanglingPin { net: String, cell: String },
    #[error("cell {0:?} has no placement entry")]
    MissingPlacement(String),
    #[error("invalid netlist: {0}")]
    InvalidNetlist(String),
    #[error("invalid placement: {0}")]
    InvalidPlacement(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub name: String,
    pub width: f64,
    pub height: f64,
    pub is_macro: bool,
}

/// Pin offset is measured from the owning cell's lower-left corner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pin {
    pub cell: usize,
    pub dx: f64,
    pub dy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Net {
    pub name: String,
    pub pins: Vec<Pin>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Netlist {
    cells: Vec<Cell>,
    nets: Vec<Net>,
}

impl Netlist {
    pub fn new(cells: Vec<Cell>, nets: Vec<Net>) -> Result<Self, CircuitError> {
        for c in &cells {
            if !(c.width > 0.0 && c.height > 0.0) || !c.width.is_finite() || !c.height.is_finite() {
                return Err(CircuitError::InvalidNetlist(format!(
                    "cell {:?} has non-positive size {}x{}",
                    c.name, c.width, c.height
                )));
            }
        }
        for n in &nets {
            if n.pins.len() < 2 {
                return Err(CircuitError::InvalidNetlist(format!(
                    "net {:?} has {} pin(s), needs at least 2",
                    n.name,
                    n.pins.len()
                )));
            }
            if let Some(p) = n.pins.iter().find(|p| p.cell >= cells.len()) {
                return Err(CircuitError::DanglingPin {
                    net: n.name.clone(),
                    cell: format!("#{}", p.cell),
                });
            }
        }
        Ok(Netlist { cells, nets })
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn nets(&self) -> &[Net] {
        &self.nets
    }

    /// Nets whose pins all sit on a single cell. Allowed, but they induce no
    /// cell-cell edges.
    pub fn degenerate_nets(&self) -> Vec<usize> {
        self.nets
            .iter()
            .enumerate()
            .filter(|(_, n)| n.pins.iter().map(|p| p.cell).collect::<HashSet<_>>().len() < 2)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    /// Lower-left corner per cell, indexed like `Netlist::cells`.
    pub positions: Vec<(f64, f64)>,
    pub die: (f64, f64),
}

impl Placement {
    pub fn validate(&self, netlist: &Netlist) -> Result<(), CircuitError> {
        if self.positions.len() != netlist.cells().len() {
            return Err(CircuitError::InvalidPlacement(format!(
                "{} positions for {} cells",
                self.positions.len(),
                netlist.cells().len()
            )));
        }
        let tol = 1e-9 * self.die.0.max(self.die.1).max(1.0);
        for (c, &(x, y)) in netlist.cells().iter().zip(&self.positions) {
            if x < -tol || y < -tol || x + c.width > self.die.0 + tol || y + c.height > self.die.1 + tol {
                return Err(CircuitError::InvalidPlacement(format!(
                    "cell {:?} at ({x}, {y}) leaves the {}x{} die",
                    c.name, self.die.0, self.die.1
                )));
            }
        }
        Ok(())
    }

    pub fn pin_position(&self, pin: &Pin) -> (f64, f64) {
        let (x, y) = self.positions[pin.cell];
        (x + pin.dx, y + pin.dy)
    }

    pub fn cell_center(&self, netlist: &Netlist, cell: usize) -> (f64, f64) {
        let c = &netlist.cells()[cell];
        let (x, y) = self.positions[cell];
        (x + 0.5 * c.width, y + 0.5 * c.height)
    }
}

/// `rows x cols` bins of `bin_w x bin_h` layout units, origin at (0, 0).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub bin_w: f64,
    pub bin_h: f64,
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize, bin_w: f64, bin_h: f64) -> Result<Self, CircuitError> {
        if rows == 0 || cols == 0 {
            return Err(CircuitError::InvalidGrid(format!("{rows}x{cols} has no bins")));
        }
        if !(bin_w > 0.0 && bin_h > 0.0) || !bin_w.is_finite() || !bin_h.is_finite() {
            return Err(CircuitError::InvalidGrid(format!("bin size {bin_w}x{bin_h}")));
        }
        Ok(GridSpec {
            rows,
            cols,
            bin_w,
            bin_h,
        })
    }

    pub fn bins(&self) -> usize {
        self.rows * self.cols
    }

    /// Column of `x`; a point on a boundary belongs to the higher bin.
    pub fn col_of(&self, x: f64) -> usize {
        let c = (x / self.bin_w).floor();
        if c < 0.0 {
            0
        } else {
            (c as usize).min(self.cols - 1)
        }
    }

    pub fn row_of(&self, y: f64) -> usize {
        let r = (y / self.bin_h).floor();
        if r < 0.0 {
            0
        } else {
            (r as usize).min(self.rows - 1)
        }
    }

    /// Row-major bin index of a point.
    pub fn bin_of(&self, x: f64, y: f64) -> usize {
        self.row_of(y) * self.cols + self.col_of(x)
    }
}

/// `rows x cols` map of reals in row-major order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridMap {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl GridMap {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        GridMap {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }
}

/// Stack of RUDY, PinRUDY and MacroRegion channels, stored `[row][col][channel]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeomFeatureMap {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl GeomFeatureMap {
    pub const CHANNELS: usize = 3;

    pub fn from_channels(rudy: &GridMap, pin_rudy: &GridMap, macro_region: &GridMap) -> Self {
        let n = rudy.values.len();
        let mut values = Vec::with_capacity(n * 3);
        for i in 0..n {
            values.push(rudy.values[i]);
            values.push(pin_rudy.values[i]);
            values.push(macro_region.values[i]);
        }
        GeomFeatureMap {
            rows: rudy.rows,
            cols: rudy.cols,
            values,
        }
    }

    pub fn channel(&self, c: usize) -> GridMap {
        GridMap {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().skip(c).step_by(3).copied().collect(),
        }
    }
}

/// Per-cell features plus the undirected cell adjacency.
#[derive(Clone, Debug, PartialEq)]
pub struct TopoGraph {
    pub cells: usize,
    pub width: usize,
    /// `cells x width`, row-major.
    pub features: Vec<f64>,
    /// Sorted, unique `(j, k)` with `j < k`.
    pub edges: Vec<(usize, usize)>,
}

impl TopoGraph {
    pub fn adjacency_dense(&self) -> Vec<f64> {
        let c = self.cells;
        let mut a = vec![0.0; c * c];
        for &(j, k) in &self.edges {
            a[j * c + k] = 1.0;
            a[k * c + j] = 1.0;
        }
        a
    }

    /// `D^-1/2 (A + I) D^-1/2`.
    pub fn normalized_adjacency(&self) -> Vec<f64> {
        let c = self.cells;
        let mut a = self.adjacency_dense();
        for i in 0..c {
            a[i * c + i] = 1.0;
        }
        let inv_sqrt: Vec<f64> = (0..c)
            .map(|i| 1.0 / a[i * c..(i + 1) * c].iter().sum::<f64>().sqrt())
            .collect();
        for i in 0..c {
            for j in 0..c {
                a[i * c + j] *= inv_sqrt[i] * inv_sqrt[j];
            }
        }
        a
    }
}

/// Strictly positive routing-demand map.
#[derive(Clone, Debug, PartialEq)]
pub struct CongestionMap {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl CongestionMap {
    /// Applies the positivity floor; rejects non-finite entries.
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self, CircuitError> {
        if values.len() != rows * cols {
            return Err(CircuitError::InvalidDataset(format!(
                "congestion map has {} values for {rows}x{cols}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CircuitError::InvalidDataset("non-finite congestion value".into()));
        }
        let values = values.into_iter().map(|v| v.max(CONGESTION_FLOOR)).collect();
        Ok(CongestionMap { rows, cols, values })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(name: &str) -> Cell {
        Cell {
            name: name.into(),
            width: 1.0,
            height: 1.0,
            is_macro: false,
        }
    }

    #[test]
    fn netlist_rejects_single_pin_nets_and_bad_refs() {
        let one_pin = Net {
            name: "n".into(),
            pins: vec![Pin { cell: 0, dx: 0.0, dy: 0.0 }],
        };
        assert!(Netlist::new(vec![cell("a")], vec![one_pin]).is_err());
        let dangling = Net {
            name: "n".into(),
            pins: vec![Pin { cell: 0, dx: 0.0, dy: 0.0 }, Pin { cell: 3, dx: 0.0, dy: 0.0 }],
        };
        assert!(matches!(
            Netlist::new(vec![cell("a")], vec![dangling]),
            Err(CircuitError::DanglingPin { .. })
        ));
    }

    #[test]
    fn grid_tie_break_goes_to_higher_bin() {
        let g = GridSpec::new(2, 2, 1.0, 1.0).unwrap();
        assert_eq!(g.col_of(1.0), 1);
        assert_eq!(g.row_of(0.999), 0);
        assert_eq!(g.col_of(2.0), 1, "die edge clamps into the last bin");
        assert!(GridSpec::new(0, 8, 1.0, 1.0).is_err());
        assert!(GridSpec::new(8, 8, 0.0, 1.0).is_err());
    }

    #[test]
    fn normalized_adjacency_of_triangle() {
        let g = TopoGraph {
            cells: 3,
            width: 1,
            features: vec![0.0; 3],
            edges: vec![(0, 1), (0, 2), (1, 2)],
        };
        let a = g.normalized_adjacency();
        for i in 0..3 {
            let row: f64 = a[i * 3..i * 3 + 3].iter().sum();
            assert!((row - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn congestion_floor() {
        let m = CongestionMap::new(1, 2, vec![0.0, 3.0]).unwrap();
        assert_eq!(m.values, vec![CONGESTION_FLOOR, 3.0]);
        assert!(CongestionMap::new(1, 1, vec![f64::NAN]).is_err());
    }
}
