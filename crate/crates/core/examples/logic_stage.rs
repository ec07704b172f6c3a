//! Trains the logic-synthesis variant, which sees only the netlist graph.

use vaca::circuit::{Dataset, SynthSpec};
use vaca::models::Stage;
use vaca::trainer::{evaluate, train, TrainConfig};

fn main() {
    let ds = Dataset::synthetic(28, &SynthSpec::default(), 0).expect("dataset");
    let cfg = TrainConfig {
        epochs: 15,
        mode: Stage::LogicSynthesis,
        ..TrainConfig::default()
    };
    let (state, logs) = train(&ds, cfg).expect("training");
    for log in &logs {
        println!("epoch {:3}  risk {:9.4}  vi {:10.2}", log.epoch, log.risk, log.vi_loss);
    }
    println!("{} parameter tensors", state.model.params.len());
    let record = evaluate(&state.model, &ds.split_examples("test").unwrap()).expect("evaluation");
    println!("test grid spearman {:.3}, cell spearman {:.3}", record.grid.spearman, record.cell.spearman);
}
