//! Alternating optimization of the regressor (regularized risk) and the
//! encoders plus decoder (variational objective), with early stopping on
//! validation Spearman and resumable checkpoints.

mod adam;
mod checkpoint;

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::{Adam, BETA1, BETA2, EPSILON};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};

use crate::circuit::{CircuitError, Dataset, Example, TOPO_WIDTH};
use crate::diff::{DiffError, Tape, Tensor};
use crate::losses::{
    detached_weights, mse, risk_term, similarity_for, vi_terms, vi_terms_logic, LossConfig, Noise, ViParts, ViTerms,
};
use crate::metrics::{cell_level_for, grid_level, pearson, spearman, Level, MetricsError, MetricsReport, PairedSeries};
use crate::models::{
    infer_gamma_params, infer_gaussian_params, predict, predict_latent, scatter_latent, Bound, DesignInputs, Group,
    Model, ModelConfig, Params, Stage,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("training diverged: {term} = {value} (initial {initial})")]
    Diverged { term: &'static str, value: f64, initial: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How the two objectives are applied within a mini-batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateScheme {
    /// Risk step on the regressor, then a variational step on the rest.
    Alternating,
    /// One backward pass through risk plus variational objective, with the
    /// correlation weights not detached; all networks updated together.
    Fused,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub loss: LossConfig,
    pub mode: Stage,
    pub patience: usize,
    pub update: UpdateScheme,
    /// When false the encoders and decoder stay at their initial values.
    pub train_variational: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 1,
            lr: 1e-3,
            seed: 0,
            loss: LossConfig::default(),
            mode: Stage::Placement,
            patience: 10,
            update: UpdateScheme::Alternating,
            train_variational: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs < 1 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        self.loss.validate()?;
        Ok(())
    }

    fn variational_groups(&self) -> &'static [Group] {
        match self.mode {
            Stage::Placement => &Group::VARIATIONAL,
            Stage::LogicSynthesis => &[Group::TopoEncoder, Group::Decoder],
        }
    }
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub model: Model,
    pub adam: Adam,
    /// Completed epochs.
    pub epoch: usize,
    /// Drives the per-epoch shuffle.
    pub rng: ChaCha8Rng,
    pub best_score: Option<f64>,
    pub bad_epochs: usize,
    pub stopped: bool,
    pub initial_risk: Option<f64>,
    pub initial_vi: Option<f64>,
}

impl TrainState {
    pub fn finished(&self) -> bool {
        self.stopped || self.epoch >= self.config.epochs
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean over mini-batches of the regularized risk.
    pub risk: f64,
    /// Mean over mini-batches of the variational objective.
    pub vi_loss: f64,
    pub val_spearman_grid: Option<f64>,
    pub val_pearson_grid: Option<f64>,
    pub wall_ms: u64,
}

/// Metrics of a model on a set of designs; correlations are averaged over
/// designs, `n` counts all pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub designs: usize,
    pub mse: f64,
    pub grid: MetricsReport,
    pub cell: MetricsReport,
}

fn mean_report(level: Level, reports: &[MetricsReport]) -> MetricsReport {
    let k = reports.len().max(1) as f64;
    MetricsReport {
        level,
        pearson: reports.iter().map(|r| r.pearson).sum::<f64>() / k,
        spearman: reports.iter().map(|r| r.spearman).sum::<f64>() / k,
        kendall: reports.iter().map(|r| r.kendall).sum::<f64>() / k,
        n: reports.iter().map(|r| r.n).sum(),
    }
}

/// Correlations of one design; a constant series (a collapsed predictor)
/// scores zero instead of failing.
fn report_or_zero(level: Level, s: &PairedSeries) -> Result<MetricsReport, MetricsError> {
    match MetricsReport::compute(level, s) {
        Err(MetricsError::Constant(_)) => Ok(MetricsReport {
            level,
            pearson: 0.0,
            spearman: 0.0,
            kendall: 0.0,
            n: s.len(),
        }),
        other => other,
    }
}

/// Grid- and cell-level correlations plus MSE; no state is changed. A
/// design with a constant prediction contributes zero correlation.
pub fn evaluate(model: &Model, examples: &[&Example]) -> Result<EvalRecord, TrainError> {
    if examples.is_empty() {
        return Err(TrainError::Config("nothing to evaluate".into()));
    }
    let mut grid = Vec::new();
    let mut cell = Vec::new();
    let mut se = 0.0;
    let mut bins = 0usize;
    for e in examples {
        let pred = model.predict_map(e)?;
        se += pred.values.iter().zip(&e.target.values).map(|(p, y)| (p - y).powi(2)).sum::<f64>();
        bins += pred.values.len();
        grid.push(report_or_zero(Level::Grid, &grid_level(&pred, &e.target)?)?);
        cell.push(report_or_zero(Level::Cell, &cell_level_for(&pred, e)?)?);
    }
    Ok(EvalRecord {
        designs: examples.len(),
        mse: se / bins as f64,
        grid: mean_report(Level::Grid, &grid),
        cell: mean_report(Level::Cell, &cell),
    })
}

/// Per-design inputs computed once.
struct Prepared {
    inputs: DesignInputs,
    target: Tensor,
    similarity: Tensor,
}

type Grads = BTreeMap<String, Vec<f64>>;

fn collect_grads(tape: &Tape, p: &Bound, loss: crate::diff::Var, params: &Params, groups: &[Group]) -> Result<Grads, DiffError> {
    let g = tape.backward(loss)?;
    let mut out = BTreeMap::new();
    for (name, &v) in p.iter() {
        if Group::of(name).is_some_and(|gr| groups.contains(&gr)) {
            let len = params.get(name).map(|t| t.len()).unwrap_or(0);
            out.insert(name.clone(), g.get_or_zeros(v, len));
        }
    }
    Ok(out)
}

fn add_grads(total: &mut Grads, part: Grads) {
    for (name, g) in part {
        match total.get_mut(&name) {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            None => {
                total.insert(name, g);
            }
        }
    }
}

/// Owns the prepared dataset and runs epochs over a [`TrainState`].
pub struct Trainer<'a> {
    dataset: &'a Dataset,
    config: TrainConfig,
    model_config: ModelConfig,
    prepared: Vec<Prepared>,
}

impl<'a> Trainer<'a> {
    /// Builds the trainer; without an explicit model config the default one
    /// is used with input scales fitted on the training split.
    pub fn new(dataset: &'a Dataset, config: TrainConfig, model_config: Option<ModelConfig>) -> Result<Self, TrainError> {
        config.validate()?;
        let train = dataset
            .split_examples("train")
            .ok_or_else(|| TrainError::Config("dataset has no train split".into()))?;
        if train.is_empty() {
            return Err(TrainError::Config("train split is empty".into()));
        }
        let model_config = match model_config {
            Some(m) => m,
            None => {
                let mut m = ModelConfig::new(config.mode, config.loss.a, TOPO_WIDTH);
                m.fit_scales(train.iter().copied());
                m
            }
        };
        if model_config.stage != config.mode {
            return Err(TrainError::Config(format!(
                "model built for {:?}, training mode is {:?}",
                model_config.stage, config.mode
            )));
        }
        if model_config.radius != config.loss.a {
            return Err(TrainError::Config(format!(
                "model radius {} differs from loss radius {}",
                model_config.radius, config.loss.a
            )));
        }
        let prepared = dataset
            .examples
            .iter()
            .map(|e| {
                Ok(Prepared {
                    inputs: DesignInputs::new(e, &model_config)?,
                    target: Tensor::vector(e.target.values.clone()),
                    similarity: similarity_for(&e.target, &config.loss),
                })
            })
            .collect::<Result<Vec<_>, TrainError>>()?;
        Ok(Trainer {
            dataset,
            config,
            model_config,
            prepared,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model_config(&self) -> &ModelConfig {
        &self.model_config
    }

    pub fn init_state(&self) -> TrainState {
        TrainState {
            config: self.config.clone(),
            model: Model::new(self.model_config.clone(), self.config.seed),
            adam: Adam::new(),
            epoch: 0,
            rng: ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x5348_5546_464c_4531),
            best_score: None,
            bad_epochs: 0,
            stopped: false,
            initial_risk: None,
            initial_vi: None,
        }
    }

    fn check_state(&self, state: &TrainState) -> Result<(), TrainError> {
        if state.model.config != self.model_config {
            return Err(TrainError::Config("state was built for a different architecture".into()));
        }
        state.model.params.validate(&self.model_config)?;
        Ok(())
    }

    /// Risk of one design with the regressor trainable (and, when fused,
    /// everything else too). Returns the per-design risk and the
    /// contribution `risk / batch` to the batch gradient.
    fn risk_example(&self, params: &Params, idx: usize, scale: f64) -> Result<(f64, Grads), DiffError> {
        let prep = &self.prepared[idx];
        let inputs = &prep.inputs;
        let mut tape = Tape::new();
        let groups = [Group::Regressor];
        let p = Bound::new(&mut tape, params, &groups)?;
        let q = infer_gaussian_params(&mut tape, &p, inputs)?;
        let z_grid = scatter_latent(&mut tape, q.mu, inputs)?;
        let target = tape.constant(prep.target.clone())?;
        let loss = match self.config.mode {
            Stage::Placement => {
                let geom = tape.constant(inputs.geom.clone())?;
                let gamma = infer_gamma_params(&mut tape, &p, geom, z_grid, inputs.rows, inputs.cols)?;
                let m = detached_weights(&mut tape, &gamma)?;
                let pred = predict(&mut tape, &p, geom, z_grid, inputs.rows, inputs.cols)?;
                risk_term(&mut tape, pred, target, m, inputs.rows, inputs.cols, &self.config.loss)?
            }
            Stage::LogicSynthesis => {
                let pred = predict_latent(&mut tape, &p, z_grid, inputs.rows, inputs.cols)?;
                mse(&mut tape, pred, target)?
            }
        };
        let value = tape.value(loss).item();
        let scaled = tape.scale(loss, scale)?;
        Ok((value, collect_grads(&tape, &p, scaled, params, &groups)?))
    }

    fn example_rng(&self, epoch: usize, idx: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ idx as u64);
        rng.set_stream(epoch as u64);
        rng
    }

    fn vi_example_loss(&self, tape: &mut Tape, p: &Bound, idx: usize, rng: &mut ChaCha8Rng, batch: f64) -> Result<ViExampleLoss, DiffError> {
        let prep = &self.prepared[idx];
        let mut noise = Noise::Random(rng);
        let terms = match self.config.mode {
            Stage::Placement => vi_terms(
                tape,
                p,
                &prep.inputs,
                &prep.similarity,
                &self.config.loss.prior,
                &mut noise,
                ViParts::default(),
            )?,
            Stage::LogicSynthesis => vi_terms_logic(tape, p, &prep.inputs, &mut noise)?,
        };
        let tau = match self.config.mode {
            Stage::Placement => self.config.loss.tau,
            Stage::LogicSynthesis => 0.0,
        };
        let loss = per_example_vi(tape, &terms, tau, batch)?;
        Ok(ViExampleLoss { loss, terms })
    }

    /// Variational objective of one design: reconstruction divided by the
    /// batch size (the batch averages it) plus the summed KL and
    /// compatibility terms.
    fn vi_example(&self, params: &Params, idx: usize, epoch: usize, batch: f64) -> Result<(f64, Grads), DiffError> {
        let groups = self.config.variational_groups();
        let mut tape = Tape::new();
        let p = Bound::new(&mut tape, params, groups)?;
        let mut rng = self.example_rng(epoch, idx);
        let out = self.vi_example_loss(&mut tape, &p, idx, &mut rng, batch)?;
        let value = tape.value(out.loss).item();
        Ok((value, collect_grads(&tape, &p, out.loss, params, groups)?))
    }

    /// Fused variant: risk with live posterior-mean weights plus the
    /// variational objective, all groups trainable.
    fn fused_example(&self, params: &Params, idx: usize, epoch: usize, batch: f64) -> Result<(f64, f64, Grads), DiffError> {
        let prep = &self.prepared[idx];
        let inputs = &prep.inputs;
        let mut groups: Vec<Group> = vec![Group::Regressor];
        groups.extend_from_slice(self.config.variational_groups());
        let mut tape = Tape::new();
        let p = Bound::new(&mut tape, params, &groups)?;
        let mut rng = self.example_rng(epoch, idx);
        let vi = self.vi_example_loss(&mut tape, &p, idx, &mut rng, batch)?;
        let z_grid = scatter_latent(&mut tape, vi.terms.gaussian.mu, inputs)?;
        let target = tape.constant(prep.target.clone())?;
        let risk = match (self.config.mode, vi.terms.gamma) {
            (Stage::Placement, Some(gamma)) => {
                let geom = tape.constant(inputs.geom.clone())?;
                let m = crate::variational::posterior_mean(&mut tape, &gamma)?;
                let pred = predict(&mut tape, &p, geom, z_grid, inputs.rows, inputs.cols)?;
                risk_term(&mut tape, pred, target, m, inputs.rows, inputs.cols, &self.config.loss)?
            }
            _ => {
                let pred = predict_latent(&mut tape, &p, z_grid, inputs.rows, inputs.cols)?;
                mse(&mut tape, pred, target)?
            }
        };
        let risk_value = tape.value(risk).item();
        let vi_value = tape.value(vi.loss).item();
        let scaled = tape.scale(risk, 1.0 / batch)?;
        let total = tape.add(scaled, vi.loss)?;
        Ok((risk_value, vi_value, collect_grads(&tape, &p, total, params, &groups)?))
    }

    fn guard(initial: &mut Option<f64>, term: &'static str, value: f64) -> Result<(), TrainError> {
        if !value.is_finite() {
            return Err(TrainError::Diverged {
                term,
                value,
                initial: initial.unwrap_or(f64::NAN),
            });
        }
        match *initial {
            None => *initial = Some(value),
            Some(init) => {
                if value.abs() > 100.0 * init.abs().max(1e-12) {
                    return Err(TrainError::Diverged {
                        term,
                        value,
                        initial: init,
                    });
                }
            }
        }
        Ok(())
    }

    fn apply(state: &mut TrainState, grads: Grads, lr: f64) {
        for (name, t) in state.model.params.iter_mut() {
            if let Some(g) = grads.get(name) {
                state.adam.update(name, t, g, lr);
            }
        }
    }

    /// Step A: one Adam step on the regressor against the regularized risk,
    /// with the correlation weights taken as the detached posterior mean.
    /// Returns the batch risk.
    pub fn step_risk(&self, state: &mut TrainState, batch: &[usize]) -> Result<f64, TrainError> {
        let b = batch.len() as f64;
        let params = &state.model.params;
        let parts = batch
            .par_iter()
            .map(|&i| self.risk_example(params, i, 1.0 / b))
            .collect::<Result<Vec<_>, _>>()?;
        let mut grads = Grads::new();
        let mut risk = 0.0;
        for (v, g) in parts {
            risk += v;
            add_grads(&mut grads, g);
        }
        let risk = risk / b;
        Self::guard(&mut state.initial_risk, "risk", risk)?;
        Self::apply(state, grads, self.config.lr);
        Ok(risk)
    }

    /// Step B: one Adam step on the encoders and decoder against the
    /// variational objective. Returns the batch objective.
    pub fn step_variational(&self, state: &mut TrainState, batch: &[usize]) -> Result<f64, TrainError> {
        let b = batch.len() as f64;
        let epoch = state.epoch;
        let params = &state.model.params;
        let parts = batch
            .par_iter()
            .map(|&i| self.vi_example(params, i, epoch, b))
            .collect::<Result<Vec<_>, _>>()?;
        let mut grads = Grads::new();
        let mut vi = 0.0;
        for (v, g) in parts {
            vi += v;
            add_grads(&mut grads, g);
        }
        Self::guard(&mut state.initial_vi, "vi_loss", vi)?;
        Self::apply(state, grads, self.config.lr);
        Ok(vi)
    }

    fn step_fused(&self, state: &mut TrainState, batch: &[usize]) -> Result<(f64, f64), TrainError> {
        let b = batch.len() as f64;
        let epoch = state.epoch;
        let params = &state.model.params;
        let parts = batch
            .par_iter()
            .map(|&i| self.fused_example(params, i, epoch, b))
            .collect::<Result<Vec<_>, _>>()?;
        let mut grads = Grads::new();
        let (mut risk, mut vi) = (0.0, 0.0);
        for (r, v, g) in parts {
            risk += r;
            vi += v;
            add_grads(&mut grads, g);
        }
        let risk = risk / b;
        Self::guard(&mut state.initial_risk, "risk", risk)?;
        Self::guard(&mut state.initial_vi, "vi_loss", vi)?;
        Self::apply(state, grads, self.config.lr);
        Ok((risk, vi))
    }

    /// Step A then step B (or one fused step) on one mini-batch. Returns
    /// `(risk, vi_loss)` of the batch.
    pub fn train_batch(&self, state: &mut TrainState, batch: &[usize]) -> Result<(f64, f64), TrainError> {
        match self.config.update {
            UpdateScheme::Alternating => {
                let risk = self.step_risk(state, batch)?;
                let vi = if self.config.train_variational {
                    self.step_variational(state, batch)?
                } else {
                    0.0
                };
                Ok((risk, vi))
            }
            UpdateScheme::Fused => self.step_fused(state, batch),
        }
    }

    /// Training indices in this epoch's order, advancing the shuffle rng.
    pub fn shuffled_order(&self, state: &mut TrainState) -> Vec<usize> {
        let mut order: Vec<usize> = self.dataset.split.train.clone();
        order.shuffle(&mut state.rng);
        order
    }

    /// Mean validation grid-level Spearman and Pearson; a design whose
    /// prediction is constant counts as zero correlation.
    pub fn validation_scores(&self, model: &Model) -> Result<Option<(f64, f64)>, TrainError> {
        let val = self.dataset.split_examples("val").unwrap_or_default();
        if val.is_empty() {
            return Ok(None);
        }
        let (mut s, mut p) = (0.0, 0.0);
        for e in &val {
            let pred = model.predict_map(e)?;
            let series = grid_level(&pred, &e.target)?;
            s += spearman(&series).unwrap_or(0.0);
            p += pearson(&series).unwrap_or(0.0);
        }
        let k = val.len() as f64;
        Ok(Some((s / k, p / k)))
    }

    /// Shuffles the training split into mini-batches and runs one epoch,
    /// then validates and updates early stopping.
    pub fn run_epoch(&self, state: &mut TrainState) -> Result<EpochLog, TrainError> {
        self.check_state(state)?;
        let start = Instant::now();
        let order = self.shuffled_order(state);
        let (mut risk, mut vi) = (0.0, 0.0);
        let mut batches = 0usize;
        for batch in order.chunks(self.config.batch_size) {
            let (r, v) = self.train_batch(state, batch)?;
            risk += r;
            vi += v;
            batches += 1;
        }
        state.epoch += 1;
        let scores = self.validation_scores(&state.model)?;
        if let Some((s, _)) = scores {
            if state.best_score.is_none_or(|b| s > b) {
                state.best_score = Some(s);
                state.bad_epochs = 0;
            } else {
                state.bad_epochs += 1;
                if state.bad_epochs >= self.config.patience {
                    state.stopped = true;
                }
            }
        }
        Ok(EpochLog {
            epoch: state.epoch,
            risk: risk / batches as f64,
            vi_loss: vi / batches as f64,
            val_spearman_grid: scores.map(|s| s.0),
            val_pearson_grid: scores.map(|s| s.1),
            wall_ms: start.elapsed().as_millis() as u64,
        })
    }

    /// Runs epochs until `until` (capped at the configured count) or early
    /// stopping, passing each log line to `on_epoch`.
    pub fn run(
        &self,
        state: &mut TrainState,
        until: usize,
        mut on_epoch: impl FnMut(&EpochLog, &TrainState),
    ) -> Result<Vec<EpochLog>, TrainError> {
        let until = until.min(self.config.epochs);
        let mut logs = Vec::new();
        while state.epoch < until && !state.stopped {
            let log = self.run_epoch(state)?;
            on_epoch(&log, state);
            logs.push(log);
        }
        Ok(logs)
    }
}

struct ViExampleLoss {
    loss: crate::diff::Var,
    terms: ViTerms,
}

fn per_example_vi(tape: &mut Tape, t: &ViTerms, tau: f64, batch: f64) -> Result<crate::diff::Var, DiffError> {
    let mut loss = tape.scale(t.reconstruction, 1.0 / batch)?;
    if let Some(k) = t.kl_gamma {
        loss = tape.add(loss, k)?;
    }
    loss = tape.add(loss, t.kl_gaussian)?;
    if let (Some(c), true) = (t.compatibility, tau != 0.0) {
        let c = tape.scale(c, tau)?;
        loss = tape.add(loss, c)?;
    }
    Ok(loss)
}

/// Trains from scratch for the configured number of epochs.
pub fn train(dataset: &Dataset, config: TrainConfig) -> Result<(TrainState, Vec<EpochLog>), TrainError> {
    let trainer = Trainer::new(dataset, config, None)?;
    let mut state = trainer.init_state();
    let logs = trainer.run(&mut state, usize::MAX, |_, _| {})?;
    Ok((state, logs))
}
