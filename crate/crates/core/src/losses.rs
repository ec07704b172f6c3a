//! Objective terms: the regularized risk for the regressor, and the
//! variational objective (reconstruction, both KL terms, compatibility) for
//! the encoders and decoder, plus their logic-synthesis forms.
//!
//! Window slots are indexed `0..(2a+1)^2` in row-major `(h, w)` order, slot
//! `(h, w)` looking at offset `(h - a, w - a)`. A neighbor outside the grid
//! reads the center value.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::circuit::CongestionMap;
use crate::diff::{DiffError, Tape, Tensor, Var};
use crate::models::{decode, infer_gamma_params, infer_gaussian_params, scatter_latent, Bound, DesignInputs};
use crate::variational::{
    kl_gamma, kl_gaussian, posterior_mean, sample_gamma, sample_gamma_at, sample_gaussian, sample_gaussian_with,
    GammaParams, GammaPrior, GaussianParams,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Weight of the label-correlation regularizer in the risk.
    pub lambda: f64,
    /// Weight of the compatibility loss in the variational objective.
    pub tau: f64,
    /// Neighborhood radius.
    pub a: usize,
    /// Similarity bandwidth; `None` means half the target's standard
    /// deviation, per example.
    pub sigma_sim: Option<f64>,
    pub prior: GammaPrior,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 0.1,
            tau: 1.0,
            a: 1,
            sigma_sim: None,
            prior: GammaPrior::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), DiffError> {
        let bad = |func, value| Err(DiffError::Domain { func, value });
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda", self.lambda);
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return bad("tau", self.tau);
        }
        if self.a < 1 {
            return bad("a", self.a as f64);
        }
        if let Some(s) = self.sigma_sim {
            if !(s > 0.0 && s.is_finite()) {
                return bad("sigma_sim", s);
            }
        }
        GammaPrior::new(self.prior.alpha_hat, self.prior.beta_hat).map(|_| ())
    }

    pub fn window(&self) -> usize {
        (2 * self.a + 1).pow(2)
    }
}

/// Flat index of the neighbor seen by window slot `(h, w)` of bin `(j, k)`,
/// all zero-based; outside the grid the center is returned.
pub fn neighbor_index(rows: usize, cols: usize, a: usize, j: usize, k: usize, h: usize, w: usize) -> usize {
    let r = (j + h) as isize - a as isize;
    let v = (k + w) as isize - a as isize;
    if r < 0 || v < 0 || r >= rows as isize || v >= cols as isize {
        j * cols + k
    } else {
        r as usize * cols + v as usize
    }
}

/// Value seen by window slot `(h, w)` of bin `(j, k)` of a row-major map.
pub fn neighborhood_value(pred: &[f64], rows: usize, cols: usize, a: usize, j: usize, k: usize, h: usize, w: usize) -> f64 {
    pred[neighbor_index(rows, cols, a, j, k, h, w)]
}

/// `[H*W * (2a+1)^2]` neighbor indices, bin-major.
pub fn window_index(rows: usize, cols: usize, a: usize) -> Vec<usize> {
    let side = 2 * a + 1;
    let mut idx = Vec::with_capacity(rows * cols * side * side);
    for j in 0..rows {
        for k in 0..cols {
            for h in 0..side {
                for w in 0..side {
                    idx.push(neighbor_index(rows, cols, a, j, k, h, w));
                }
            }
        }
    }
    idx
}

/// Label-correlation loss of one bin: `sum_slots m * |pred[j,k] - neighbor|`.
/// `m_window` holds the `(2a+1)^2` weights of that bin.
pub fn label_corr_loss(pred: &[f64], rows: usize, cols: usize, a: usize, m_window: &[f64], j: usize, k: usize) -> f64 {
    let side = 2 * a + 1;
    let center = pred[j * cols + k];
    let mut total = 0.0;
    for h in 0..side {
        for w in 0..side {
            let nb = neighborhood_value(pred, rows, cols, a, j, k, h, w);
            total += m_window[h * side + w] * (center - nb).abs();
        }
    }
    total
}

/// Regularizer of one map: label-correlation loss summed over all bins.
/// `pred` is `[H*W]`, `m` is `[H*W, (2a+1)^2]`.
pub fn reg_loss(tape: &mut Tape, pred: Var, m: Var, rows: usize, cols: usize, a: usize) -> Result<Var, DiffError> {
    let k = (2 * a + 1).pow(2);
    if tape.shape(m) != [rows * cols, k] {
        return Err(DiffError::Shape(format!(
            "weights {:?} for a {rows}x{cols} grid with {k} window slots",
            tape.shape(m)
        )));
    }
    let neighbors = tape.gather(pred, window_index(rows, cols, a), &[rows * cols, k])?;
    let center = tape.reshape(pred, &[rows * cols, 1])?;
    let diff = tape.sub(center, neighbors)?;
    let diff = tape.abs(diff)?;
    let weighted = tape.mul(m, diff)?;
    tape.sum(weighted)
}

/// Mean squared error over bins.
pub fn mse(tape: &mut Tape, pred: Var, target: Var) -> Result<Var, DiffError> {
    let d = tape.sub(pred, target)?;
    let d = tape.square(d)?;
    tape.mean(d)
}

/// One example's risk term, `MSE + lambda * reg_loss`.
pub fn risk_term(
    tape: &mut Tape,
    pred: Var,
    target: Var,
    m: Var,
    rows: usize,
    cols: usize,
    cfg: &LossConfig,
) -> Result<Var, DiffError> {
    let sup = mse(tape, pred, target)?;
    if cfg.lambda == 0.0 {
        return Ok(sup);
    }
    let reg = reg_loss(tape, pred, m, rows, cols, cfg.a)?;
    let reg = tape.scale(reg, cfg.lambda)?;
    tape.add(sup, reg)
}

/// Batch mean of already-built per-example terms.
pub fn batch_mean(tape: &mut Tape, terms: &[Var]) -> Result<Var, DiffError> {
    let total = batch_sum(tape, terms)?;
    tape.scale(total, 1.0 / terms.len().max(1) as f64)
}

/// Sum in index order.
pub fn batch_sum(tape: &mut Tape, terms: &[Var]) -> Result<Var, DiffError> {
    let mut it = terms.iter();
    let mut total = match it.next() {
        Some(&t) => t,
        None => return tape.constant(Tensor::scalar(0.0)),
    };
    for &t in it {
        total = tape.add(total, t)?;
    }
    Ok(total)
}

/// Regularized risk: mean over the batch of `MSE + lambda * reg_loss`.
pub fn risk(
    tape: &mut Tape,
    preds: &[Var],
    targets: &[Var],
    ms: &[Var],
    rows: usize,
    cols: usize,
    cfg: &LossConfig,
) -> Result<Var, DiffError> {
    if preds.len() != targets.len() || preds.len() != ms.len() {
        return Err(DiffError::Shape("risk batch lengths differ".into()));
    }
    let terms = preds
        .iter()
        .zip(targets)
        .zip(ms)
        .map(|((&p, &t), &m)| risk_term(tape, p, t, m, rows, cols, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    batch_mean(tape, &terms)
}

/// Logic-stage risk: mean over the batch of the MSE alone.
pub fn risk_logic(tape: &mut Tape, preds: &[Var], targets: &[Var]) -> Result<Var, DiffError> {
    let terms = preds
        .iter()
        .zip(targets)
        .map(|(&p, &t)| mse(tape, p, t))
        .collect::<Result<Vec<_>, _>>()?;
    batch_mean(tape, &terms)
}

fn frobenius_sq(tape: &mut Tape, a: Var, b: Var) -> Result<Var, DiffError> {
    let d = tape.sub(a, b)?;
    let d = tape.square(d)?;
    tape.sum(d)
}

/// `|Φ̂ - Φ|² + |Ψ̂ - Ψ|² + |sigmoid(logits) - A|²` for one example; the
/// geometry pair is skipped when absent.
pub fn reconstruction_loss(
    tape: &mut Tape,
    geom: Option<(Var, Var)>,
    topo: Var,
    topo_hat: Var,
    adjacency: Var,
    adjacency_logits: Var,
) -> Result<Var, DiffError> {
    let s = tape.sigmoid(adjacency_logits)?;
    let mut total = frobenius_sq(tape, s, adjacency)?;
    let t = frobenius_sq(tape, topo_hat, topo)?;
    total = tape.add(total, t)?;
    if let Some((phi, phi_hat)) = geom {
        let g = frobenius_sq(tape, phi_hat, phi)?;
        total = tape.add(total, g)?;
    }
    Ok(total)
}

/// Bandwidth used when none is configured: half the target's standard
/// deviation.
pub fn default_sigma(target: &CongestionMap) -> f64 {
    let n = target.values.len() as f64;
    let mean = target.values.iter().sum::<f64>() / n;
    let var = target.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    0.5 * var.sqrt()
}

/// `[H*W, (2a+1)^2]` similarities `exp(-|y_center - y_neighbor| / (2 sigma^2))`.
/// With `sigma = 0` (a constant map) every entry is 1.
pub fn local_similarity(target: &CongestionMap, a: usize, sigma: f64) -> Tensor {
    let (rows, cols) = (target.rows, target.cols);
    let k = (2 * a + 1).pow(2);
    let idx = window_index(rows, cols, a);
    let y = &target.values;
    let data = idx
        .iter()
        .enumerate()
        .map(|(i, &nb)| {
            let d = (y[i / k] - y[nb]).abs();
            if d == 0.0 {
                1.0
            } else {
                (-d / (2.0 * sigma * sigma)).exp()
            }
        })
        .collect();
    Tensor::new(vec![rows * cols, k], data).expect("window index length")
}

/// Similarity tensor with the configured or default bandwidth.
pub fn similarity_for(target: &CongestionMap, cfg: &LossConfig) -> Tensor {
    let sigma = cfg.sigma_sim.unwrap_or_else(|| default_sigma(target));
    local_similarity(target, cfg.a, sigma)
}

/// Elementwise L1 distance `sum |M - S|`.
pub fn compatibility_loss(tape: &mut Tape, m: Var, s: &Tensor) -> Result<Var, DiffError> {
    let s = tape.constant(s.clone())?;
    let d = tape.sub(m, s)?;
    let d = tape.abs(d)?;
    tape.sum(d)
}

/// Source of the single Monte-Carlo sample. The Gaussian latent is drawn
/// before the Gamma weights.
pub enum Noise<'a> {
    Random(&'a mut ChaCha8Rng),
    /// Fixed standard-normal noise for the latent features and fixed CDF
    /// levels for the weights, for reproducible finite differences.
    Fixed { eps: &'a Tensor, quantiles: &'a [f64] },
}

/// Which terms of the placement-stage objective are included.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ViParts {
    pub geometry_reconstruction: bool,
    pub gamma_kl: bool,
}

impl Default for ViParts {
    fn default() -> Self {
        ViParts {
            geometry_reconstruction: true,
            gamma_kl: true,
        }
    }
}

/// Per-example pieces of the variational objective.
#[derive(Clone, Copy, Debug)]
pub struct ViTerms {
    pub reconstruction: Var,
    pub kl_gamma: Option<Var>,
    pub kl_gaussian: Var,
    pub compatibility: Option<Var>,
    pub gamma: Option<GammaParams>,
    pub gaussian: GaussianParams,
}

fn sample_latent(tape: &mut Tape, q: &GaussianParams, noise: &mut Noise) -> Result<Var, DiffError> {
    match noise {
        Noise::Random(rng) => sample_gaussian(tape, q, *rng),
        Noise::Fixed { eps, .. } => sample_gaussian_with(tape, q, (*eps).clone()),
    }
}

/// Placement-stage terms for one design. `similarity` is the target's local
/// similarity tensor.
pub fn vi_terms(
    tape: &mut Tape,
    p: &Bound,
    inputs: &DesignInputs,
    similarity: &Tensor,
    prior: &GammaPrior,
    noise: &mut Noise,
    parts: ViParts,
) -> Result<ViTerms, DiffError> {
    let gaussian = infer_gaussian_params(tape, p, inputs)?;
    let z = sample_latent(tape, &gaussian, noise)?;
    let z_grid = scatter_latent(tape, z, inputs)?;
    let phi = tape.constant(inputs.geom.clone())?;
    let gamma = infer_gamma_params(tape, p, phi, z_grid, inputs.rows, inputs.cols)?;
    let m = match noise {
        Noise::Random(rng) => sample_gamma(tape, &gamma, *rng)?,
        Noise::Fixed { quantiles, .. } => sample_gamma_at(tape, &gamma, quantiles)?,
    };
    let dec = decode(tape, p, Some(m), z, z_grid)?;
    let psi = tape.constant(inputs.topo.clone())?;
    let adjacency = tape.constant(inputs.adjacency.clone())?;
    let geom_pair = match (parts.geometry_reconstruction, dec.geom) {
        (true, Some(phi_hat)) => Some((phi, phi_hat)),
        _ => None,
    };
    let reconstruction = reconstruction_loss(tape, geom_pair, psi, dec.topo, adjacency, dec.adjacency_logits)?;
    let kl_gamma = if parts.gamma_kl {
        Some(kl_gamma(tape, &gamma, prior)?)
    } else {
        None
    };
    let kl_gaussian = kl_gaussian(tape, &gaussian)?;
    let compatibility = Some(compatibility_loss(tape, m, similarity)?);
    Ok(ViTerms {
        reconstruction,
        kl_gamma,
        kl_gaussian,
        compatibility,
        gamma: Some(gamma),
        gaussian,
    })
}

/// Logic-stage terms for one design: no geometry, no correlation weights.
pub fn vi_terms_logic(tape: &mut Tape, p: &Bound, inputs: &DesignInputs, noise: &mut Noise) -> Result<ViTerms, DiffError> {
    let gaussian = infer_gaussian_params(tape, p, inputs)?;
    let z = sample_latent(tape, &gaussian, noise)?;
    let z_grid = scatter_latent(tape, z, inputs)?;
    let dec = decode(tape, p, None, z, z_grid)?;
    let psi = tape.constant(inputs.topo.clone())?;
    let adjacency = tape.constant(inputs.adjacency.clone())?;
    let reconstruction = reconstruction_loss(tape, None, psi, dec.topo, adjacency, dec.adjacency_logits)?;
    let kl_gaussian = kl_gaussian(tape, &gaussian)?;
    Ok(ViTerms {
        reconstruction,
        kl_gamma: None,
        kl_gaussian,
        compatibility: None,
        gamma: None,
        gaussian,
    })
}

/// Batch-level variational objective and its parts.
#[derive(Clone, Copy, Debug)]
pub struct ViObjective {
    /// `tau * compatibility - elbo`.
    pub loss: Var,
    pub elbo: Var,
    pub reconstruction: Var,
    pub kl_gamma: Var,
    pub kl_gaussian: Var,
    pub compatibility: Var,
}

/// Reconstruction is averaged over the batch; KL and compatibility terms
/// are summed.
pub fn combine_vi(tape: &mut Tape, terms: &[ViTerms], tau: f64) -> Result<ViObjective, DiffError> {
    let recon: Vec<Var> = terms.iter().map(|t| t.reconstruction).collect();
    let reconstruction = batch_mean(tape, &recon)?;
    let kg: Vec<Var> = terms.iter().filter_map(|t| t.kl_gamma).collect();
    let kl_gamma = batch_sum(tape, &kg)?;
    let kn: Vec<Var> = terms.iter().map(|t| t.kl_gaussian).collect();
    let kl_gaussian = batch_sum(tape, &kn)?;
    let co: Vec<Var> = terms.iter().filter_map(|t| t.compatibility).collect();
    let compatibility = batch_sum(tape, &co)?;
    let neg_elbo = tape.add(reconstruction, kl_gamma)?;
    let neg_elbo = tape.add(neg_elbo, kl_gaussian)?;
    let elbo = tape.neg(neg_elbo)?;
    let loss = if tau == 0.0 {
        neg_elbo
    } else {
        let c = tape.scale(compatibility, tau)?;
        tape.add(c, neg_elbo)?
    };
    Ok(ViObjective {
        loss,
        elbo,
        reconstruction,
        kl_gamma,
        kl_gaussian,
        compatibility,
    })
}

/// One design of a variational batch.
pub struct ViExample<'a> {
    pub inputs: &'a DesignInputs,
    pub similarity: &'a Tensor,
}

/// Placement-stage objective over a batch, one noise source per design.
pub fn vi_loss(
    tape: &mut Tape,
    p: &Bound,
    batch: &[ViExample],
    cfg: &LossConfig,
    noises: &mut [Noise],
    parts: ViParts,
) -> Result<ViObjective, DiffError> {
    let terms = batch
        .iter()
        .zip(noises.iter_mut())
        .map(|(ex, noise)| vi_terms(tape, p, ex.inputs, ex.similarity, &cfg.prior, noise, parts))
        .collect::<Result<Vec<_>, _>>()?;
    combine_vi(tape, &terms, cfg.tau)
}

/// Logic-stage objective `-elbo` over a batch.
pub fn vi_loss_logic(tape: &mut Tape, p: &Bound, batch: &[&DesignInputs], noises: &mut [Noise]) -> Result<ViObjective, DiffError> {
    let terms = batch
        .iter()
        .zip(noises.iter_mut())
        .map(|(inputs, noise)| vi_terms_logic(tape, p, inputs, noise))
        .collect::<Result<Vec<_>, _>>()?;
    combine_vi(tape, &terms, 0.0)
}

/// Posterior-mean weights with gradients blocked, as consumed by the risk.
pub fn detached_weights(tape: &mut Tape, q: &GammaParams) -> Result<Var, DiffError> {
    let m = posterior_mean(tape, q)?;
    tape.detach(m)
}
