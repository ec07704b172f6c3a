//! Trains the placement-stage model on a synthetic dataset and evaluates it
//! on the held-out split. Usage: `train_synthetic [epochs] [lambda]`.

use vaca::circuit::{Dataset, SynthSpec};
use vaca::trainer::{evaluate, TrainConfig, Trainer};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs = args.get(1).map_or(20, |s| s.parse().expect("epochs"));
    let lambda = args.get(2).map_or(0.0, |s| s.parse().expect("lambda"));
    let ds = Dataset::synthetic(28, &SynthSpec::default(), 0).expect("dataset");
    let mut cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    cfg.loss.lambda = lambda;
    let trainer = Trainer::new(&ds, cfg, None).expect("trainer");
    let mut state = trainer.init_state();
    trainer
        .run(&mut state, usize::MAX, |log, _| {
            println!(
                "epoch {:3}  risk {:9.4}  vi {:10.2}  val spearman {:.3}",
                log.epoch,
                log.risk,
                log.vi_loss,
                log.val_spearman_grid.unwrap_or(f64::NAN)
            )
        })
        .expect("training");
    let record = evaluate(&state.model, &ds.split_examples("test").unwrap()).expect("evaluation");
    println!(
        "test: mse {:.3}, grid spearman {:.3}, grid kendall {:.3}, cell spearman {:.3}",
        record.mse, record.grid.spearman, record.grid.kendall, record.cell.spearman
    );
}
