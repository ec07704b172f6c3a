//! Writes a congestion map in the binary map format, then exports it as PNG
//! and CSV. Usage: `export_map [out_dir]`.

use std::path::PathBuf;

use vaca::circuit::{synth_generate, GridMap, SynthSpec};
use vaca::mapfile::{read_map, write_csv, write_map, write_png};

fn main() {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| ".".into()));
    std::fs::create_dir_all(&dir).expect("output directory");
    let ex = synth_generate(2, &SynthSpec::default()).expect("synthetic design");
    let map = GridMap {
        rows: ex.target.rows,
        cols: ex.target.cols,
        values: ex.target.values.clone(),
    };
    let path = dir.join("demand.f32");
    write_map(&path, &map).expect("write map");
    let back = read_map(&path).expect("read map");
    write_png(&dir.join("demand.png"), &back).expect("png");
    write_csv(&dir.join("demand.csv"), &back).expect("csv");
    println!("wrote demand.f32, demand.png and demand.csv to {}", dir.display());
}
