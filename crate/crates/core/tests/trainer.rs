use vaca::circuit::{Dataset, SynthSpec};
use vaca::diff::Tape;
use vaca::losses::{mse, LossConfig};
use vaca::metrics::{grid_level, spearman};
use vaca::models::{infer_gaussian_params, predict, scatter_latent, Bound, DesignInputs, Group, Params, Stage};
use vaca::trainer::{
    decode_checkpoint, encode_checkpoint, evaluate, load_checkpoint, save_checkpoint, train, Adam, TrainConfig,
    TrainError, Trainer, UpdateScheme,
};

fn small_dataset(seed: u64) -> Dataset {
    let spec = SynthSpec {
        rows: 8,
        cols: 8,
        cells: 20,
        nets: 30,
        ..SynthSpec::default()
    };
    Dataset::synthetic(8, &spec, seed).unwrap()
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        seed: 1,
        ..TrainConfig::default()
    }
}

#[test]
fn step_a_touches_only_the_regressor() {
    let ds = small_dataset(1);
    let trainer = Trainer::new(&ds, quick(1), None).unwrap();
    let mut state = trainer.init_state();
    let before: Vec<u64> = Group::ALL.iter().map(|&g| state.model.params.fingerprint(g)).collect();
    trainer.step_risk(&mut state, &ds.split.train[..2]).unwrap();
    for (g, b) in Group::ALL.iter().zip(before) {
        let changed = state.model.params.fingerprint(*g) != b;
        assert_eq!(changed, *g == Group::Regressor, "{g:?}");
    }
}

#[test]
fn step_b_leaves_the_regressor_alone() {
    let ds = small_dataset(1);
    let trainer = Trainer::new(&ds, quick(1), None).unwrap();
    let mut state = trainer.init_state();
    let before: Vec<u64> = Group::ALL.iter().map(|&g| state.model.params.fingerprint(g)).collect();
    trainer.step_variational(&mut state, &ds.split.train[..2]).unwrap();
    for (g, b) in Group::ALL.iter().zip(before) {
        let changed = state.model.params.fingerprint(*g) != b;
        assert_eq!(changed, Group::VARIATIONAL.contains(g), "{g:?}");
    }
}

#[test]
fn unregularized_training_is_plain_mse_regression() {
    let ds = small_dataset(2);
    let mut cfg = quick(1);
    cfg.loss = LossConfig {
        lambda: 0.0,
        tau: 0.0,
        ..LossConfig::default()
    };
    cfg.train_variational = false;
    cfg.batch_size = 3;
    let trainer = Trainer::new(&ds, cfg.clone(), None).unwrap();
    let mut state = trainer.init_state();

    let model_cfg = trainer.model_config().clone();
    let mut params = state.model.params.clone();
    let mut adam = Adam::new();
    let inputs: Vec<DesignInputs> = ds.examples.iter().map(|e| DesignInputs::new(e, &model_cfg).unwrap()).collect();

    for batch in ds.split.train.chunks(3).take(3) {
        let risk = trainer.step_risk(&mut state, batch).unwrap();

        let b = batch.len() as f64;
        let mut total = 0.0;
        let mut grads: Vec<(String, Vec<f64>)> = Vec::new();
        for &i in batch {
            let mut tape = Tape::new();
            let p = Bound::new(&mut tape, &params, &[Group::Regressor]).unwrap();
            let q = infer_gaussian_params(&mut tape, &p, &inputs[i]).unwrap();
            let zg = scatter_latent(&mut tape, q.mu, &inputs[i]).unwrap();
            let geom = tape.constant(inputs[i].geom.clone()).unwrap();
            let pred = predict(&mut tape, &p, geom, zg, inputs[i].rows, inputs[i].cols).unwrap();
            let y = tape
                .constant(vaca::diff::Tensor::vector(ds.examples[i].target.values.clone()))
                .unwrap();
            let loss = mse(&mut tape, pred, y).unwrap();
            total += tape.value(loss).item();
            let scaled = tape.scale(loss, 1.0 / b).unwrap();
            let g = tape.backward(scaled).unwrap();
            for (name, v) in p.iter() {
                if Group::of(name) != Some(Group::Regressor) {
                    continue;
                }
                let gv = g.get_or_zeros(*v, params.get(name).unwrap().len());
                match grads.iter_mut().find(|(n, _)| n == name) {
                    Some((_, acc)) => acc.iter_mut().zip(&gv).for_each(|(a, x)| *a += x),
                    None => grads.push((name.clone(), gv)),
                }
            }
        }
        for (name, t) in params.iter_mut() {
            if let Some((_, g)) = grads.iter().find(|(n, _)| n == name) {
                adam.update(name, t, g, cfg.lr);
            }
        }
        assert!((risk - total / b).abs() <= 1e-12 * risk.abs().max(1.0), "{risk} vs {}", total / b);
        for (name, t) in state.model.params.iter() {
            let o = params.get(name).unwrap();
            let gap = t.data().iter().zip(o.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(gap <= 1e-12, "{name} drifted by {gap}");
        }
    }
}

#[test]
fn same_seed_same_bytes_and_different_seed_differs() {
    let ds = small_dataset(3);
    let (a, _) = train(&ds, quick(2)).unwrap();
    let (b, _) = train(&ds, quick(2)).unwrap();
    assert_eq!(encode_checkpoint(&a).unwrap(), encode_checkpoint(&b).unwrap());
    let mut other = quick(2);
    other.seed = 2;
    let (c, _) = train(&ds, other).unwrap();
    assert_ne!(encode_checkpoint(&a).unwrap(), encode_checkpoint(&c).unwrap());
}

#[test]
fn checkpoint_file_round_trip() {
    let ds = small_dataset(4);
    let (state, _) = train(&ds, quick(1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&state, &path).unwrap();
    assert!(!path.with_extension("ckpt.tmp").exists());
    assert_eq!(load_checkpoint(&path).unwrap(), state);
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let ds = small_dataset(4);
    let (state, _) = train(&ds, quick(1)).unwrap();
    let bytes = encode_checkpoint(&state).unwrap();
    assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
    let mut longer = bytes.clone();
    longer.push(0);
    assert!(decode_checkpoint(&longer).is_err());
    let mut wrong_magic = bytes.clone();
    wrong_magic[0] = b'X';
    assert!(decode_checkpoint(&wrong_magic).is_err());
}

#[test]
fn header_architecture_must_match_the_tensors() {
    let ds = small_dataset(5);
    let (mut state, _) = train(&ds, quick(1)).unwrap();
    state.model.config.regressor_hidden += 1;
    let bytes = encode_checkpoint(&state).unwrap();
    assert!(matches!(decode_checkpoint(&bytes), Err(TrainError::Diff(_))));
}

#[test]
fn trainer_refuses_a_state_from_another_architecture() {
    let ds = small_dataset(5);
    let (mut state, _) = train(&ds, quick(1)).unwrap();
    let trainer = Trainer::new(&ds, quick(2), None).unwrap();
    state.model.config.geom_hidden = 3;
    state.model.params = Params::init(&state.model.config, 0);
    assert!(matches!(trainer.run_epoch(&mut state), Err(TrainError::Config(_))));
}

#[test]
fn evaluation_is_pure_and_matches_the_metrics() {
    let ds = small_dataset(6);
    let (state, _) = train(&ds, quick(2)).unwrap();
    let test = ds.split_examples("test").unwrap();
    let a = evaluate(&state.model, &test).unwrap();
    let b = evaluate(&state.model, &test).unwrap();
    assert_eq!(a, b);
    let manual: f64 = test
        .iter()
        .map(|e| spearman(&grid_level(&state.model.predict_map(e).unwrap(), &e.target).unwrap()).unwrap_or(0.0))
        .sum::<f64>()
        / test.len() as f64;
    assert!((a.grid.spearman - manual).abs() < 1e-12);
    assert_eq!(a.designs, test.len());
    assert_eq!(a.grid.n, test.iter().map(|e| e.target.values.len()).sum::<usize>());
}

#[test]
fn epoch_order_is_a_permutation_of_the_training_split() {
    let ds = small_dataset(7);
    let trainer = Trainer::new(&ds, quick(1), None).unwrap();
    let mut state = trainer.init_state();
    let mut seen = Vec::new();
    for _ in 0..3 {
        let mut order = trainer.shuffled_order(&mut state);
        seen.push(order.clone());
        order.sort_unstable();
        let mut train = ds.split.train.clone();
        train.sort_unstable();
        assert_eq!(order, train);
    }
    assert!(seen.windows(2).any(|w| w[0] != w[1]));
}

#[test]
fn unregularized_risk_drops_by_a_third_in_five_epochs() {
    let ds = Dataset::synthetic(28, &SynthSpec::default(), 0).unwrap();
    let mut cfg = quick(5);
    cfg.loss.lambda = 0.0;
    let (_, logs) = train(&ds, cfg).unwrap();
    let (first, last) = (logs[0].risk, logs[4].risk);
    assert!(last <= 0.7 * first, "risk {first} -> {last}");
}

#[test]
fn divergence_guard_fires() {
    let ds = small_dataset(8);
    let trainer = Trainer::new(&ds, quick(1), None).unwrap();
    let mut state = trainer.init_state();
    state.initial_risk = Some(1e-9);
    let err = trainer.step_risk(&mut state, &ds.split.train[..1]).unwrap_err();
    assert!(matches!(err, TrainError::Diverged { term: "risk", .. }), "{err}");
}

#[test]
fn early_stopping_honours_patience() {
    let ds = small_dataset(9);
    let mut cfg = quick(10);
    cfg.patience = 2;
    let trainer = Trainer::new(&ds, cfg, None).unwrap();
    let mut state = trainer.init_state();
    state.best_score = Some(2.0);
    let logs = trainer.run(&mut state, usize::MAX, |_, _| {}).unwrap();
    assert_eq!(logs.len(), 2);
    assert!(state.stopped && state.finished());
}

#[test]
fn fused_updates_train_every_group() {
    let ds = small_dataset(10);
    let mut cfg = quick(1);
    cfg.update = UpdateScheme::Fused;
    let trainer = Trainer::new(&ds, cfg, None).unwrap();
    let mut state = trainer.init_state();
    let before: Vec<u64> = Group::ALL.iter().map(|&g| state.model.params.fingerprint(g)).collect();
    let (risk, vi) = trainer.train_batch(&mut state, &ds.split.train[..2]).unwrap();
    assert!(risk.is_finite() && vi.is_finite());
    for (g, b) in Group::ALL.iter().zip(before) {
        assert_ne!(state.model.params.fingerprint(*g), b, "{g:?}");
    }
}

#[test]
fn logic_stage_model_has_no_gamma_network() {
    let ds = small_dataset(11);
    let mut cfg = quick(2);
    cfg.mode = Stage::LogicSynthesis;
    let (state, logs) = train(&ds, cfg).unwrap();
    assert!(state.model.params.iter().all(|(n, _)| Group::of(n) != Some(Group::GeomEncoder)));
    assert!(logs.iter().all(|l| l.risk.is_finite() && l.vi_loss.is_finite()));
}

#[test]
fn invalid_configs_are_rejected() {
    let ds = small_dataset(12);
    for cfg in [
        TrainConfig { batch_size: 0, ..quick(1) },
        TrainConfig { lr: -1.0, ..quick(1) },
        TrainConfig { epochs: 0, ..quick(1) },
    ] {
        assert!(Trainer::new(&ds, cfg, None).is_err());
    }
}
