//! Synthetic placed designs with an L-path routing-demand oracle.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Cell, CircuitError, CongestionMap, Example, GridMap, GridSpec, Net, Netlist, Pin, Placement, CONGESTION_FLOOR};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub rows: usize,
    pub cols: usize,
    pub cells: usize,
    pub nets: usize,
    /// Neighborhood radius recorded with each example.
    pub a: usize,
    pub bin_w: f64,
    pub bin_h: f64,
    pub macro_fraction: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            rows: 16,
            cols: 16,
            cells: 60,
            nets: 90,
            a: 1,
            bin_w: 4.0,
            bin_h: 4.0,
            macro_fraction: 0.05,
        }
    }
}

const NEAREST: usize = 8;
const LOCAL_PROB: f64 = 0.8;
const CLUSTERS: usize = 3;
const CLUSTER_PROB: f64 = 0.7;

fn quantize(v: f64, step: f64) -> f64 {
    (v / step).floor() * step
}

/// Demand map from routing every pin to its net's first pin along an L-path:
/// horizontal along the pin's row to the target column, then vertical along
/// that column. Each bin on a path gets +1, once per path.
pub fn route_demand(netlist: &Netlist, placement: &Placement, grid: &GridSpec) -> GridMap {
    let mut map = GridMap::zeros(grid.rows, grid.cols);
    for net in netlist.nets() {
        let (tx, ty) = placement.pin_position(&net.pins[0]);
        let (tr, tc) = (grid.row_of(ty), grid.col_of(tx));
        for p in &net.pins[1..] {
            let (x, y) = placement.pin_position(p);
            let (r, c) = (grid.row_of(y), grid.col_of(x));
            for col in c.min(tc)..=c.max(tc) {
                map.values[r * grid.cols + col] += 1.0;
            }
            for row in r.min(tr)..=r.max(tr) {
                if row != r {
                    map.values[row * grid.cols + tc] += 1.0;
                }
            }
        }
    }
    map
}

/// Generates one placed design and its ground-truth congestion map.
/// Deterministic in `seed`.
pub fn synth_generate(seed: u64, spec: &SynthSpec) -> Result<Example, CircuitError> {
    if spec.cells < 2 {
        return Err(CircuitError::InvalidNetlist(format!("need at least 2 cells, got {}", spec.cells)));
    }
    let grid = GridSpec::new(spec.rows, spec.cols, spec.bin_w, spec.bin_h)?;
    let die = (spec.cols as f64 * spec.bin_w, spec.rows as f64 * spec.bin_h);
    if die.0 < 2.0 || die.1 < 2.0 {
        return Err(CircuitError::InvalidGrid(format!("die {}x{} too small for cells", die.0, die.1)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let n_macros = ((spec.cells as f64 * spec.macro_fraction).round() as usize).min(spec.cells - 2);
    let macro_max = (die.0.min(die.1) / 8.0).max(2.0);
    let cells: Vec<Cell> = (0..spec.cells)
        .map(|i| {
            let is_macro = i < n_macros;
            let (width, height) = if is_macro {
                let steps = (2.0 * (macro_max - 2.0)) as u32;
                (
                    2.0 + 0.5 * rng.random_range(0..=steps) as f64,
                    2.0 + 0.5 * rng.random_range(0..=steps) as f64,
                )
            } else {
                (0.5 * rng.random_range(1..=4) as f64, 1.0)
            };
            Cell {
                name: if is_macro { format!("m{i}") } else { format!("c{i}") },
                width,
                height,
                is_macro,
            }
        })
        .collect();

    let centers: Vec<(f64, f64)> = (0..CLUSTERS)
        .map(|_| (rng.random::<f64>() * die.0, rng.random::<f64>() * die.1))
        .collect();
    let spread = die.0.max(die.1) / 8.0;
    let positions: Vec<(f64, f64)> = cells
        .iter()
        .map(|c| {
            let (x, y) = if rng.random::<f64>() < CLUSTER_PROB {
                let (cx, cy) = centers[rng.random_range(0..CLUSTERS)];
                let gx: f64 = rng.sample(rand_distr::StandardNormal);
                let gy: f64 = rng.sample(rand_distr::StandardNormal);
                (cx + spread * gx - 0.5 * c.width, cy + spread * gy - 0.5 * c.height)
            } else {
                (rng.random::<f64>() * die.0, rng.random::<f64>() * die.1)
            };
            (
                quantize(x.clamp(0.0, die.0 - c.width), 1.0 / 64.0),
                quantize(y.clamp(0.0, die.1 - c.height), 1.0 / 64.0),
            )
        })
        .collect();

    let center = |i: usize| (positions[i].0 + 0.5 * cells[i].width, positions[i].1 + 0.5 * cells[i].height);
    let neighbors: Vec<Vec<usize>> = (0..spec.cells)
        .map(|i| {
            let (xi, yi) = center(i);
            let mut others: Vec<(f64, usize)> = (0..spec.cells)
                .filter(|&j| j != i)
                .map(|j| {
                    let (xj, yj) = center(j);
                    ((xi - xj).powi(2) + (yi - yj).powi(2), j)
                })
                .collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            others.into_iter().take(NEAREST).map(|(_, j)| j).collect()
        })
        .collect();

    let pin_on = |cell: usize, rng: &mut ChaCha8Rng| {
        let c = &cells[cell];
        Pin {
            cell,
            dx: rng.random_range(0..=(c.width * 16.0) as u32) as f64 / 16.0,
            dy: rng.random_range(0..=(c.height * 16.0) as u32) as f64 / 16.0,
        }
    };
    let nets: Vec<Net> = (0..spec.nets)
        .map(|n| {
            let degree = if rng.random::<f64>() < 0.5 { 2 } else { rng.random_range(3..=5) };
            let driver = rng.random_range(0..spec.cells);
            let mut members = vec![driver];
            while members.len() < degree.min(spec.cells) {
                let cand = if rng.random::<f64>() < LOCAL_PROB {
                    *neighbors[driver].choose(&mut rng).unwrap()
                } else {
                    rng.random_range(0..spec.cells)
                };
                if !members.contains(&cand) {
                    members.push(cand);
                }
            }
            Net {
                name: format!("n{n}"),
                pins: members.into_iter().map(|m| pin_on(m, &mut rng)).collect(),
            }
        })
        .collect();

    let netlist = Netlist::new(cells, nets)?;
    let placement = Placement { positions, die };
    let demand = route_demand(&netlist, &placement, &grid);
    let target = CongestionMap::new(
        grid.rows,
        grid.cols,
        demand.values.into_iter().map(|v| v + CONGESTION_FLOOR).collect(),
    )?;
    Example::from_design(format!("synth_{seed}"), seed, spec.a, grid, netlist, placement, target)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_design() {
        let spec = SynthSpec::default();
        assert_eq!(synth_generate(7, &spec).unwrap(), synth_generate(7, &spec).unwrap());
        assert_ne!(synth_generate(7, &spec).unwrap(), synth_generate(8, &spec).unwrap());
    }

    #[test]
    fn horizontal_two_pin_net() {
        let cell = |n: &str| Cell {
            name: n.into(),
            width: 0.5,
            height: 0.5,
            is_macro: false,
        };
        let nl = Netlist::new(
            vec![cell("a"), cell("b")],
            vec![Net {
                name: "n".into(),
                pins: vec![Pin { cell: 0, dx: 0.0, dy: 0.0 }, Pin { cell: 1, dx: 0.0, dy: 0.0 }],
            }],
        )
        .unwrap();
        let pl = Placement {
            positions: vec![(1.5, 2.5), (6.5, 2.5)],
            die: (8.0, 4.0),
        };
        let g = GridSpec::new(4, 8, 1.0, 1.0).unwrap();
        let m = route_demand(&nl, &pl, &g);
        for r in 0..4 {
            for c in 0..8 {
                let want = if r == 2 && (1..=6).contains(&c) { 1.0 } else { 0.0 };
                assert_eq!(m.get(r, c), want, "bin ({r}, {c})");
            }
        }
    }

    #[test]
    fn l_path_bend() {
        let cell = |n: &str| Cell {
            name: n.into(),
            width: 0.5,
            height: 0.5,
            is_macro: false,
        };
        let nl = Netlist::new(
            vec![cell("t"), cell("s")],
            vec![Net {
                name: "n".into(),
                pins: vec![Pin { cell: 0, dx: 0.0, dy: 0.0 }, Pin { cell: 1, dx: 0.0, dy: 0.0 }],
            }],
        )
        .unwrap();
        let pl = Placement {
            positions: vec![(0.2, 0.2), (2.2, 2.2)],
            die: (3.0, 3.0),
        };
        let g = GridSpec::new(3, 3, 1.0, 1.0).unwrap();
        let m = route_demand(&nl, &pl, &g);
        // row 2 from column 2 to 0, then column 0 down to row 0
        assert_eq!(m.values, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn zero_nets_floor_only() {
        let spec = SynthSpec {
            nets: 0,
            ..SynthSpec::default()
        };
        let e = synth_generate(3, &spec).unwrap();
        assert!(e.target.values.iter().all(|&v| v == CONGESTION_FLOOR));
    }

    #[test]
    fn tiny_cell_count_rejected() {
        let spec = SynthSpec {
            cells: 1,
            ..SynthSpec::default()
        };
        assert!(synth_generate(0, &spec).is_err());
    }
}
