use super::{GeomFeatureMap, GridMap, GridSpec, Net, Netlist, Placement};

/// Extent substituted for a zero-width or zero-height net bounding box.
pub const MIN_BOX_EXTENT: f64 = 1.0;

/// Net bounding box `(x0, y0, x1, y1)` with degenerate sides inflated around
/// their center, plus the RUDY density of the net.
fn net_box(net: &Net, placement: &Placement) -> ((f64, f64, f64, f64), f64) {
    let mut x0 = f64::INFINITY;
    let mut y0 = f64::INFINITY;
    let mut x1 = f64::NEG_INFINITY;
    let mut y1 = f64::NEG_INFINITY;
    for p in &net.pins {
        let (x, y) = placement.pin_position(p);
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let w = x1 - x0;
    let h = y1 - y0;
    if w > 0.0 && h > 0.0 {
        return ((x0, y0, x1, y1), (w + h) / (w * h));
    }
    let d = 2.0 / w.max(h).max(MIN_BOX_EXTENT);
    let (x0, x1) = inflate(x0, x1);
    let (y0, y1) = inflate(y0, y1);
    ((x0, y0, x1, y1), d)
}

fn inflate(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5 * MIN_BOX_EXTENT, hi + 0.5 * MIN_BOX_EXTENT)
    }
}

fn overlap(lo: f64, hi: f64, bin_lo: f64, bin_hi: f64) -> f64 {
    (hi.min(bin_hi) - lo.max(bin_lo)).max(0.0)
}

/// Adds `weight * overlap_area(rect, bin)` to every bin the rectangle touches.
fn deposit_rect(map: &mut GridMap, grid: &GridSpec, rect: (f64, f64, f64, f64), weight: f64) {
    let (x0, y0, x1, y1) = rect;
    let c0 = grid.col_of(x0);
    let c1 = grid.col_of(x1);
    let r0 = grid.row_of(y0);
    let r1 = grid.row_of(y1);
    for r in r0..=r1 {
        let oy = overlap(y0, y1, r as f64 * grid.bin_h, (r + 1) as f64 * grid.bin_h);
        if oy == 0.0 {
            continue;
        }
        for c in c0..=c1 {
            let ox = overlap(x0, x1, c as f64 * grid.bin_w, (c + 1) as f64 * grid.bin_w);
            if ox > 0.0 {
                map.values[r * grid.cols + c] += weight * ox * oy;
            }
        }
    }
}

/// Rectangular uniform wire density: every net spreads `(w + h) / (w h)`
/// uniformly over its bounding box; a bin receives density times overlap area.
pub fn compute_rudy(netlist: &Netlist, placement: &Placement, grid: &GridSpec) -> GridMap {
    let mut map = GridMap::zeros(grid.rows, grid.cols);
    for net in netlist.nets() {
        let (rect, d) = net_box(net, placement);
        deposit_rect(&mut map, grid, rect, d);
    }
    map
}

/// Every pin deposits its net's RUDY density into the bin that contains it.
pub fn compute_pin_rudy(netlist: &Netlist, placement: &Placement, grid: &GridSpec) -> GridMap {
    let mut map = GridMap::zeros(grid.rows, grid.cols);
    for net in netlist.nets() {
        let (_, d) = net_box(net, placement);
        for p in &net.pins {
            let (x, y) = placement.pin_position(p);
            map.values[grid.bin_of(x, y)] += d;
        }
    }
    map
}

/// Fraction of each bin covered by macro cells, clamped to `[0, 1]`.
pub fn compute_macro_region(netlist: &Netlist, placement: &Placement, grid: &GridSpec) -> GridMap {
    let mut map = GridMap::zeros(grid.rows, grid.cols);
    let inv_area = 1.0 / (grid.bin_w * grid.bin_h);
    for (cell, &(x, y)) in netlist.cells().iter().zip(&placement.positions) {
        if cell.is_macro {
            deposit_rect(&mut map, grid, (x, y, x + cell.width, y + cell.height), inv_area);
        }
    }
    for v in &mut map.values {
        *v = v.clamp(0.0, 1.0);
    }
    map
}

pub fn geom_features(netlist: &Netlist, placement: &Placement, grid: &GridSpec) -> GeomFeatureMap {
    GeomFeatureMap::from_channels(
        &compute_rudy(netlist, placement, grid),
        &compute_pin_rudy(netlist, placement, grid),
        &compute_macro_region(netlist, placement, grid),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{Cell, Pin};

    fn cell(name: &str, w: f64, h: f64, is_macro: bool) -> Cell {
        Cell {
            name: name.into(),
            width: w,
            height: h,
            is_macro,
        }
    }

    fn pin(cell: usize) -> Pin {
        Pin { cell, dx: 0.0, dy: 0.0 }
    }

    fn two_point_net(a: (f64, f64), b: (f64, f64)) -> (Netlist, Placement) {
        let nl = Netlist::new(
            vec![cell("a", 0.5, 0.5, false), cell("b", 0.5, 0.5, false)],
            vec![Net {
                name: "n".into(),
                pins: vec![pin(0), pin(1)],
            }],
        )
        .unwrap();
        let pl = Placement {
            positions: vec![a, b],
            die: (4.0, 4.0),
        };
        (nl, pl)
    }

    #[test]
    fn box_covering_one_bin() {
        let (nl, pl) = two_point_net((1.0, 1.0), (2.0, 2.0));
        let g = GridSpec::new(4, 4, 1.0, 1.0).unwrap();
        let m = compute_rudy(&nl, &pl, &g);
        for (i, v) in m.values.iter().enumerate() {
            let want = if i == 5 { 2.0 } else { 0.0 };
            assert_eq!(*v, want, "bin {i}");
        }
    }

    #[test]
    fn empty_netlist_gives_zero_maps() {
        let nl = Netlist::new(vec![cell("a", 1.0, 1.0, false)], vec![]).unwrap();
        let pl = Placement {
            positions: vec![(0.0, 0.0)],
            die: (2.0, 2.0),
        };
        let g = GridSpec::new(2, 2, 1.0, 1.0).unwrap();
        assert!(compute_rudy(&nl, &pl, &g).values.iter().all(|&v| v == 0.0));
        assert!(compute_pin_rudy(&nl, &pl, &g).values.iter().all(|&v| v == 0.0));
        assert!(compute_macro_region(&nl, &pl, &g).values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn net_spanning_two_bins_splits_evenly() {
        let (nl, pl) = two_point_net((0.0, 0.0), (2.0, 1.0));
        let g = GridSpec::new(1, 2, 1.0, 1.0).unwrap();
        let m = compute_rudy(&nl, &pl, &g);
        let total = (2.0 + 1.0) / 2.0 * 2.0;
        assert_eq!(m.values, vec![total / 2.0, total / 2.0]);
    }

    #[test]
    fn pin_rudy_same_bin_and_boundary() {
        let (nl, pl) = two_point_net((0.25, 0.25), (0.75, 0.5));
        let g = GridSpec::new(2, 2, 1.0, 1.0).unwrap();
        let d = (0.5 + 0.25) / (0.5 * 0.25);
        let m = compute_pin_rudy(&nl, &pl, &g);
        assert_eq!(m.values, vec![2.0 * d, 0.0, 0.0, 0.0]);

        let (nl, pl) = two_point_net((1.0, 0.5), (0.25, 0.25));
        let m = compute_pin_rudy(&nl, &pl, &g);
        assert!(m.values[1] > 0.0, "pin on x = 1 belongs to column 1");
    }

    #[test]
    fn macro_coverage() {
        let nl = Netlist::new(vec![cell("m", 1.0, 2.0, true), cell("h", 0.5, 1.0, true)], vec![]).unwrap();
        let pl = Placement {
            positions: vec![(0.0, 0.0), (1.0, 0.0)],
            die: (2.0, 2.0),
        };
        let g = GridSpec::new(2, 2, 1.0, 1.0).unwrap();
        let m = compute_macro_region(&nl, &pl, &g);
        assert_eq!(m.values, vec![1.0, 0.5, 1.0, 0.0]);
    }

    #[test]
    fn degenerate_box_uses_floor() {
        let (nl, pl) = two_point_net((1.5, 1.5), (1.5, 1.5));
        let g = GridSpec::new(4, 4, 1.0, 1.0).unwrap();
        let m = compute_rudy(&nl, &pl, &g);
        let total: f64 = m.values.iter().sum();
        assert!((total - 2.0).abs() < 1e-12);
        assert_eq!(m.values[5], 2.0);
    }
}
