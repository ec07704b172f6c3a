//! Held-out grid Spearman with and without the label-correlation terms,
//! over several seeds. Usage: `ablation [seeds] [max_epochs]`.

use vaca::circuit::{Dataset, SynthSpec};
use vaca::trainer::{evaluate, train, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seeds = args.get(1).map_or(3, |s| s.parse().expect("seeds"));
    let epochs = args.get(2).map_or(60, |s| s.parse().expect("max_epochs"));
    for seed in 0..seeds {
        let ds = Dataset::synthetic(28, &SynthSpec::default(), 100 + seed).expect("dataset");
        let test = ds.split_examples("test").unwrap();
        let mut row = Vec::new();
        for (lambda, tau) in [(0.1, 1.0), (0.0, 1.0)] {
            let mut cfg = TrainConfig {
                epochs,
                seed,
                ..TrainConfig::default()
            };
            cfg.loss.lambda = lambda;
            cfg.loss.tau = tau;
            let (state, logs) = train(&ds, cfg).expect("training");
            let rec = evaluate(&state.model, &test).expect("evaluation");
            row.push(format!("lambda {lambda}: {:.3} ({} epochs)", rec.grid.spearman, logs.len()));
        }
        println!("seed {seed}: {}", row.join(", "));
    }
}
