//! Generates one synthetic design and prints its feature channels.

use vaca::circuit::{synth_generate, SynthSpec};

fn main() {
    let ex = synth_generate(7, &SynthSpec::default()).expect("synthetic design");
    println!(
        "{}: {}x{} grid, {} cells, {} nets, {} graph edges",
        ex.name,
        ex.grid.rows,
        ex.grid.cols,
        ex.netlist.cells().len(),
        ex.netlist.nets().len(),
        ex.topo.edges.len()
    );
    for (c, name) in ["RUDY", "pin RUDY", "macro region"].iter().enumerate() {
        let ch = ex.geom.channel(c);
        let max = ch.values.iter().copied().fold(f64::MIN, f64::max);
        let mean = ch.values.iter().sum::<f64>() / ch.values.len() as f64;
        println!("{name:>12}: mean {mean:.4}, max {max:.4}");
    }
    println!("routing demand (target):");
    for r in 0..ex.target.rows {
        let row: Vec<String> = (0..ex.target.cols).map(|c| format!("{:3.0}", ex.target.get(r, c))).collect();
        println!("  {}", row.join(""));
    }
}
