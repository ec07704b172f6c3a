//! Grid- and cell-level correlations between a noisy prediction and the
//! ground-truth demand map.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vaca::circuit::{synth_generate, CongestionMap, SynthSpec};
use vaca::metrics::{cell_level_for, grid_level, Level, MetricsReport};

fn main() {
    let ex = synth_generate(11, &SynthSpec::default()).expect("synthetic design");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for noise in [0.0, 1.0, 4.0, 16.0] {
        let values = ex.target.values.iter().map(|v| v + noise * rng.random::<f64>()).collect();
        let pred = CongestionMap::new(ex.target.rows, ex.target.cols, values).unwrap();
        let grid = MetricsReport::compute(Level::Grid, &grid_level(&pred, &ex.target).unwrap()).unwrap();
        let cell = MetricsReport::compute(Level::Cell, &cell_level_for(&pred, &ex).unwrap()).unwrap();
        println!(
            "noise {noise:5}: grid pearson {:.3} spearman {:.3} kendall {:.3} | cell spearman {:.3} (n = {})",
            grid.pearson, grid.spearman, grid.kendall, cell.spearman, cell.n
        );
    }
}
