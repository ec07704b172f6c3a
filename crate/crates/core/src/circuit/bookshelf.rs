//! Reader and writer for a subset of the Bookshelf placement format.
//!
//! * `.nodes`: `name width height [terminal]`; a `terminal` node is treated
//!   as a macro.
//! * `.nets`: `NetDegree : k [name]` followed by `k` lines
//!   `cellname I/O : dx dy`, offsets measured from the cell center.
//! * `.pl`: `name x y [...]` lower-left corners, plus an optional
//!   `DieArea : width height` line.
//!
//! `#` starts a comment line. `UCLA ...` banners and `Num... : n` count
//! lines are accepted and ignored.

use std::collections::HashMap;
use std::fmt::Write;

use super::{Cell, CircuitError, Net, Netlist, Pin, Placement};

/// The three text files of one design.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BookshelfText {
    pub nodes: String,
    pub nets: String,
    pub pl: String,
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.trim();
        if l.is_empty() || l.starts_with('#') || l.starts_with("UCLA") {
            None
        } else {
            Some((i + 1, l))
        }
    })
}

fn is_count_line(line: &str) -> bool {
    line.starts_with("Num") && line.contains(':')
}

fn number(file: &'static str, line: usize, tok: Option<&str>, what: &str) -> Result<f64, CircuitError> {
    let tok = tok.ok_or_else(|| CircuitError::Syntax {
        file,
        line,
        msg: format!("missing {what}"),
    })?;
    tok.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| CircuitError::Syntax {
            file,
            line,
            msg: format!("bad {what} {tok:?}"),
        })
}

fn parse_nodes(text: &str) -> Result<Vec<Cell>, CircuitError> {
    let mut cells = Vec::new();
    for (ln, line) in content_lines(text) {
        if is_count_line(line) {
            continue;
        }
        let mut toks = line.split_whitespace();
        let name = toks.next().unwrap().to_string();
        let width = number("nodes", ln, toks.next(), "width")?;
        let height = number("nodes", ln, toks.next(), "height")?;
        let is_macro = match toks.next() {
            None => false,
            Some(t) if t.eq_ignore_ascii_case("terminal") || t.eq_ignore_ascii_case("terminal_NI") => true,
            Some(t) => {
                return Err(CircuitError::Syntax {
                    file: "nodes",
                    line: ln,
                    msg: format!("unexpected token {t:?}"),
                })
            }
        };
        cells.push(Cell {
            name,
            width,
            height,
            is_macro,
        });
    }
    Ok(cells)
}

fn parse_nets(text: &str, cells: &[Cell], index: &HashMap<&str, usize>) -> Result<Vec<Net>, CircuitError> {
    let mut nets = Vec::new();
    let mut lines = content_lines(text);
    while let Some((ln, line)) = lines.next() {
        if is_count_line(line) {
            continue;
        }
        let rest = line.strip_prefix("NetDegree").ok_or_else(|| CircuitError::Syntax {
            file: "nets",
            line: ln,
            msg: format!("expected NetDegree, found {line:?}"),
        })?;
        let mut toks = rest.split_whitespace();
        if toks.next() != Some(":") {
            return Err(CircuitError::Syntax {
                file: "nets",
                line: ln,
                msg: "expected ':' after NetDegree".into(),
            });
        }
        let degree: usize = toks
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| CircuitError::Syntax {
                file: "nets",
                line: ln,
                msg: "bad net degree".into(),
            })?;
        let name = toks.next().map(str::to_string).unwrap_or_else(|| format!("net{}", nets.len()));
        let mut pins = Vec::with_capacity(degree);
        for _ in 0..degree {
            let (pl, pline) = lines.next().ok_or_else(|| CircuitError::Syntax {
                file: "nets",
                line: ln,
                msg: format!("net {name} ends before {degree} pins"),
            })?;
            let mut toks = pline.split_whitespace();
            let cell_name = toks.next().unwrap();
            let cell = *index.get(cell_name).ok_or_else(|| CircuitError::DanglingPin {
                net: name.clone(),
                cell: cell_name.to_string(),
            })?;
            let mut rest: Vec<&str> = toks.collect();
            if rest.first().is_some_and(|t| *t != ":") {
                rest.remove(0); // direction
            }
            let (cx, cy) = match rest.as_slice() {
                [] => (0.0, 0.0),
                [":", dx, dy] => (
                    number("nets", pl, Some(dx), "pin x offset")?,
                    number("nets", pl, Some(dy), "pin y offset")?,
                ),
                _ => {
                    return Err(CircuitError::Syntax {
                        file: "nets",
                        line: pl,
                        msg: format!("malformed pin line {pline:?}"),
                    })
                }
            };
            let c = &cells[cell];
            pins.push(Pin {
                cell,
                dx: cx + 0.5 * c.width,
                dy: cy + 0.5 * c.height,
            });
        }
        nets.push(Net { name, pins });
    }
    Ok(nets)
}

fn parse_pl(text: &str, cells: &[Cell], index: &HashMap<&str, usize>) -> Result<Placement, CircuitError> {
    let mut positions: Vec<Option<(f64, f64)>> = vec![None; cells.len()];
    let mut die = None;
    for (ln, line) in content_lines(text) {
        if let Some(rest) = line.strip_prefix("DieArea") {
            let toks: Vec<&str> = rest.split_whitespace().filter(|t| *t != ":").collect();
            die = Some((
                number("pl", ln, toks.first().copied(), "die width")?,
                number("pl", ln, toks.get(1).copied(), "die height")?,
            ));
            continue;
        }
        let mut toks = line.split_whitespace();
        let name = toks.next().unwrap();
        let &cell = index.get(name).ok_or_else(|| CircuitError::Syntax {
            file: "pl",
            line: ln,
            msg: format!("unknown cell {name:?}"),
        })?;
        let x = number("pl", ln, toks.next(), "x")?;
        let y = number("pl", ln, toks.next(), "y")?;
        positions[cell] = Some((x, y));
    }
    let positions = positions
        .into_iter()
        .zip(cells)
        .map(|(p, c)| p.ok_or_else(|| CircuitError::MissingPlacement(c.name.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let die = die.unwrap_or_else(|| {
        positions.iter().zip(cells).fold((0.0_f64, 0.0_f64), |(w, h), (&(x, y), c)| {
            (w.max(x + c.width), h.max(y + c.height))
        })
    });
    Ok(Placement { positions, die })
}

/// Parses the three Bookshelf texts into a netlist and its placement.
pub fn parse_bookshelf(nodes_text: &str, nets_text: &str, pl_text: &str) -> Result<(Netlist, Placement), CircuitError> {
    let cells = parse_nodes(nodes_text)?;
    let mut index = HashMap::with_capacity(cells.len());
    for (i, c) in cells.iter().enumerate() {
        if index.insert(c.name.as_str(), i).is_some() {
            return Err(CircuitError::InvalidNetlist(format!("duplicate cell {:?}", c.name)));
        }
    }
    let nets = parse_nets(nets_text, &cells, &index)?;
    let placement = parse_pl(pl_text, &cells, &index)?;
    let netlist = Netlist::new(cells, nets)?;
    placement.validate(&netlist)?;
    Ok((netlist, placement))
}

/// Serializes a design in the subset accepted by [`parse_bookshelf`].
pub fn write_bookshelf(netlist: &Netlist, placement: &Placement) -> BookshelfText {
    let mut nodes = String::from("UCLA nodes 1.0\n");
    let terminals = netlist.cells().iter().filter(|c| c.is_macro).count();
    let _ = writeln!(nodes, "NumNodes : {}", netlist.cells().len());
    let _ = writeln!(nodes, "NumTerminals : {terminals}");
    for c in netlist.cells() {
        let _ = write!(nodes, "{} {} {}", c.name, c.width, c.height);
        nodes.push_str(if c.is_macro { " terminal\n" } else { "\n" });
    }

    let mut nets = String::from("UCLA nets 1.0\n");
    let pins: usize = netlist.nets().iter().map(|n| n.pins.len()).sum();
    let _ = writeln!(nets, "NumNets : {}", netlist.nets().len());
    let _ = writeln!(nets, "NumPins : {pins}");
    for n in netlist.nets() {
        let _ = writeln!(nets, "NetDegree : {} {}", n.pins.len(), n.name);
        for p in &n.pins {
            let c = &netlist.cells()[p.cell];
            let _ = writeln!(nets, "  {} I : {} {}", c.name, p.dx - 0.5 * c.width, p.dy - 0.5 * c.height);
        }
    }

    let mut pl = String::from("UCLA pl 1.0\n");
    let _ = writeln!(pl, "DieArea : {} {}", placement.die.0, placement.die.1);
    for (c, (x, y)) in netlist.cells().iter().zip(&placement.positions) {
        let _ = writeln!(pl, "{} {} {} : N", c.name, x, y);
    }
    BookshelfText { nodes, nets, pl }
}
