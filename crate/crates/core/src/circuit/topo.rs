use std::collections::BTreeSet;

use super::{Netlist, Placement, TopoGraph};

/// Per-cell feature width: degree, pin count, area, macro flag, x, y and two
/// reserved zeros.
pub const TOPO_WIDTH: usize = 8;

/// Nets with more pins than this are star-expanded instead of clique-expanded.
const CLIQUE_LIMIT: usize = 32;

/// Builds the cell graph and per-cell features. Without a placement (logic
/// stage) the position features are zero.
pub fn build_topo_features(netlist: &Netlist, placement: Option<&Placement>) -> TopoGraph {
    let c = netlist.cells().len();
    let mut edges = BTreeSet::new();
    let mut pins = vec![0usize; c];
    for net in netlist.nets() {
        for p in &net.pins {
            pins[p.cell] += 1;
        }
        let members: BTreeSet<usize> = net.pins.iter().map(|p| p.cell).collect();
        if net.pins.len() > CLIQUE_LIMIT {
            let hub = net.pins[0].cell;
            for &m in members.iter().filter(|&&m| m != hub) {
                edges.insert((hub.min(m), hub.max(m)));
            }
        } else {
            let members: Vec<usize> = members.into_iter().collect();
            for (i, &j) in members.iter().enumerate() {
                for &k in &members[i + 1..] {
                    edges.insert((j, k));
                }
            }
        }
    }
    let mut degree = vec![0usize; c];
    for &(j, k) in &edges {
        degree[j] += 1;
        degree[k] += 1;
    }
    let mut features = vec![0.0; c * TOPO_WIDTH];
    for (i, cell) in netlist.cells().iter().enumerate() {
        let row = &mut features[i * TOPO_WIDTH..(i + 1) * TOPO_WIDTH];
        row[0] = degree[i] as f64;
        row[1] = pins[i] as f64;
        row[2] = cell.width * cell.height;
        row[3] = if cell.is_macro { 1.0 } else { 0.0 };
        if let Some(pl) = placement {
            let (x, y) = pl.cell_center(netlist, i);
            row[4] = x / pl.die.0;
            row[5] = y / pl.die.1;
        }
    }
    TopoGraph {
        cells: c,
        width: TOPO_WIDTH,
        features,
        edges: edges.into_iter().collect(),
    }
}

impl TopoGraph {
    /// Copy with the placement-derived columns zeroed, as seen before placement.
    pub fn without_positions(&self) -> TopoGraph {
        let mut g = self.clone();
        for row in g.features.chunks_mut(g.width) {
            row[4] = 0.0;
            row[5] = 0.0;
        }
        g
    }
}
