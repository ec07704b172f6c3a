//! Writes a design as Bookshelf text and parses it back.

use vaca::circuit::{parse_bookshelf, synth_generate, write_bookshelf, SynthSpec};

fn main() {
    let ex = synth_generate(3, &SynthSpec::default()).expect("synthetic design");
    let text = write_bookshelf(&ex.netlist, &ex.placement);
    println!("--- .nodes (first lines)");
    text.nodes.lines().take(6).for_each(|l| println!("{l}"));
    println!("--- .nets (first lines)");
    text.nets.lines().take(6).for_each(|l| println!("{l}"));
    println!("--- .pl (first lines)");
    text.pl.lines().take(6).for_each(|l| println!("{l}"));
    let (netlist, placement) = parse_bookshelf(&text.nodes, &text.nets, &text.pl).expect("parse");
    println!(
        "round trip: netlist {}, placement {}",
        if netlist == ex.netlist { "identical" } else { "CHANGED" },
        if placement == ex.placement { "identical" } else { "CHANGED" }
    );
}
