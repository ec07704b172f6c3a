//! The four networks: the geometry encoder producing the Gamma posterior over
//! correlation weights, the graph encoder producing the Gaussian posterior
//! over latent cell features, the decoder used by the reconstruction term,
//! and the congestion regressor.
//!
//! Grid tensors are `[H*W, channels]` in row-major bin order.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::circuit::{CongestionMap, Example, GeomFeatureMap};
use crate::diff::{DiffError, Tape, Tensor, Var, GATHER_ZERO};
use crate::variational::{positive_link, GammaParams, GaussianParams};

/// Design stage the models are built for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Geometry and topology both available.
    Placement,
    /// Before placement: topology only; the regressor reads latent features.
    LogicSynthesis,
}

/// Parameter groups, updated by different objectives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    Regressor,
    GeomEncoder,
    TopoEncoder,
    Decoder,
}

impl Group {
    pub const ALL: [Group; 4] = [Group::Regressor, Group::GeomEncoder, Group::TopoEncoder, Group::Decoder];
    pub const VARIATIONAL: [Group; 3] = [Group::GeomEncoder, Group::TopoEncoder, Group::Decoder];

    pub fn prefix(self) -> &'static str {
        match self {
            Group::Regressor => "regressor",
            Group::GeomEncoder => "geom_encoder",
            Group::TopoEncoder => "topo_encoder",
            Group::Decoder => "decoder",
        }
    }

    pub fn of(name: &str) -> Option<Group> {
        let prefix = name.split('.').next()?;
        Group::ALL.into_iter().find(|g| g.prefix() == prefix)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub stage: Stage,
    /// Neighborhood radius; windows hold `(2a+1)^2` weights.
    pub radius: usize,
    pub topo_width: usize,
    pub geom_hidden: usize,
    pub topo_hidden: usize,
    pub decoder_hidden: usize,
    pub regressor_hidden: usize,
    /// Per-channel divisors applied to the geometry channels.
    pub geom_scale: Vec<f64>,
    /// Per-column divisors applied to the cell features.
    pub topo_scale: Vec<f64>,
}

impl ModelConfig {
    pub fn new(stage: Stage, radius: usize, topo_width: usize) -> Self {
        ModelConfig {
            stage,
            radius,
            topo_width,
            geom_hidden: 16,
            topo_hidden: 16,
            decoder_hidden: 16,
            regressor_hidden: 32,
            geom_scale: vec![1.0; GeomFeatureMap::CHANNELS],
            topo_scale: vec![1.0; topo_width],
        }
    }

    /// Sets the input divisors to the per-channel RMS over `examples`
    /// (1 where a channel is all zero).
    pub fn fit_scales<'a>(&mut self, examples: impl IntoIterator<Item = &'a Example>) {
        let b = self.topo_width;
        let mut g = vec![0.0; GeomFeatureMap::CHANNELS];
        let mut t = vec![0.0; b];
        let (mut ng, mut nt) = (0usize, 0usize);
        for e in examples {
            for px in e.geom.values.chunks(GeomFeatureMap::CHANNELS) {
                for (acc, v) in g.iter_mut().zip(px) {
                    *acc += v * v;
                }
                ng += 1;
            }
            for row in e.topo.features.chunks(b) {
                for (acc, v) in t.iter_mut().zip(row) {
                    *acc += v * v;
                }
                nt += 1;
            }
        }
        let rms = |acc: Vec<f64>, n: usize| -> Vec<f64> {
            acc.into_iter()
                .map(|s| {
                    let r = (s / n.max(1) as f64).sqrt();
                    if r > 0.0 {
                        r
                    } else {
                        1.0
                    }
                })
                .collect()
        };
        self.geom_scale = rms(g, ng);
        self.topo_scale = rms(t, nt);
    }

    pub fn window(&self) -> usize {
        (2 * self.radius + 1).pow(2)
    }

    /// Name and shape of every parameter, in a fixed order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let b = self.topo_width;
        let k = self.window();
        let geom_in = GeomFeatureMap::CHANNELS;
        let mut out = Vec::new();
        let mut layer = |name: &str, fan_in: usize, fan_out: usize| {
            out.push((format!("{name}.w"), vec![fan_in, fan_out]));
            out.push((format!("{name}.b"), vec![fan_out]));
        };
        let reg_in = match self.stage {
            Stage::Placement => geom_in + b,
            Stage::LogicSynthesis => b,
        };
        let rh = self.regressor_hidden;
        layer("regressor.conv1", 9 * reg_in, rh);
        layer("regressor.conv2", 9 * rh, rh);
        layer("regressor.conv3", 9 * rh, 1);
        if self.stage == Stage::Placement {
            layer("geom_encoder.conv1", 9 * (geom_in + b), self.geom_hidden);
            layer("geom_encoder.conv2", 9 * self.geom_hidden, 2 * k);
        }
        layer("topo_encoder.gc1", b, self.topo_hidden);
        layer("topo_encoder.gc2", self.topo_hidden, 2 * b);
        if self.stage == Stage::Placement {
            layer("decoder.geom1", k + b, self.decoder_hidden);
            layer("decoder.geom2", self.decoder_hidden, geom_in);
        }
        layer("decoder.topo1", b, self.decoder_hidden);
        layer("decoder.topo2", self.decoder_hidden, b);
        out
    }
}

/// Layers whose weights start at zero so the posteriors start uninformative.
const ZERO_INIT: [&str; 2] = ["geom_encoder.conv2", "topo_encoder.gc2"];

/// Named parameter tensors of all networks.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    tensors: BTreeMap<String, Tensor>,
}

impl Params {
    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero, posterior-head
    /// output layers zero.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for (name, shape) in cfg.layout() {
            let zero = name.ends_with(".b") || ZERO_INIT.iter().any(|z| name.starts_with(z));
            let t = if zero {
                Tensor::zeros(&shape)
            } else {
                let bound = 1.0 / (shape[0] as f64).sqrt();
                let n = shape.iter().product();
                let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
                Tensor::new(shape, data).expect("layout shape")
            };
            tensors.insert(name, t);
        }
        Params { tensors }
    }

    pub fn from_map(tensors: BTreeMap<String, Tensor>) -> Self {
        Params { tensors }
    }

    /// Checks names and shapes against the layout of `cfg`.
    pub fn validate(&self, cfg: &ModelConfig) -> Result<(), DiffError> {
        let layout = cfg.layout();
        if layout.len() != self.tensors.len() {
            return Err(DiffError::Shape(format!(
                "architecture has {} parameters, found {}",
                layout.len(),
                self.tensors.len()
            )));
        }
        for (name, shape) in layout {
            match self.tensors.get(&name) {
                Some(t) if t.shape() == &shape[..] => {}
                Some(t) => {
                    return Err(DiffError::Shape(format!(
                        "parameter {name}: expected {shape:?}, found {:?}",
                        t.shape()
                    )))
                }
                None => return Err(DiffError::Shape(format!("parameter {name} missing"))),
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// FNV-1a over the bit patterns of a group's parameters.
    pub fn fingerprint(&self, group: Group) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (name, t) in &self.tensors {
            if Group::of(name) != Some(group) {
                continue;
            }
            for byte in name.bytes().chain(t.data().iter().flat_map(|v| v.to_bits().to_le_bytes())) {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

/// Parameters recorded on a tape; trainable groups are leaves.
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn new(tape: &mut Tape, params: &Params, trainable: &[Group]) -> Result<Self, DiffError> {
        let mut vars = BTreeMap::new();
        for (name, t) in &params.tensors {
            let train = Group::of(name).is_some_and(|g| trainable.contains(&g));
            let v = if train {
                tape.leaf(t.clone())?
            } else {
                tape.constant(t.clone())?
            };
            vars.insert(name.clone(), v);
        }
        Ok(Bound { vars })
    }

    /// Binds already-recorded variables by parameter name.
    pub fn from_vars(vars: BTreeMap<String, Var>) -> Self {
        Bound { vars }
    }

    pub fn var(&self, name: &str) -> Result<Var, DiffError> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| DiffError::Shape(format!("parameter {name} not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

/// Model inputs of one design, scaled and densified once.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignInputs {
    pub rows: usize,
    pub cols: usize,
    pub cells: usize,
    /// `[H*W, 3]`, divided by the configured channel scales.
    pub geom: Tensor,
    /// `[C, b]`, divided by the configured column scales.
    pub topo: Tensor,
    /// `[C, C]` binary adjacency.
    pub adjacency: Tensor,
    /// `[C, C]` symmetric normalization of adjacency plus self-loops.
    pub norm_adjacency: Tensor,
    /// `[H*W, C]` mean-pooling of cells into the bin holding their center.
    pub pool: Tensor,
}

impl DesignInputs {
    pub fn new(example: &Example, cfg: &ModelConfig) -> Result<Self, DiffError> {
        let (rows, cols) = (example.grid.rows, example.grid.cols);
        let c = example.topo.cells;
        if example.topo.width != cfg.topo_width {
            return Err(DiffError::Shape(format!(
                "cell features have width {}, model expects {}",
                example.topo.width, cfg.topo_width
            )));
        }
        let topo_graph = match cfg.stage {
            Stage::Placement => example.topo.clone(),
            Stage::LogicSynthesis => example.topo.without_positions(),
        };
        let geom: Vec<f64> = match cfg.stage {
            Stage::Placement => example
                .geom
                .values
                .chunks(GeomFeatureMap::CHANNELS)
                .flat_map(|px| px.iter().zip(&cfg.geom_scale).map(|(v, s)| v / s))
                .collect(),
            Stage::LogicSynthesis => vec![0.0; rows * cols * GeomFeatureMap::CHANNELS],
        };
        let topo: Vec<f64> = topo_graph
            .features
            .chunks(cfg.topo_width)
            .flat_map(|row| row.iter().zip(&cfg.topo_scale).map(|(v, s)| v / s))
            .collect();
        let bins = example.cell_bins();
        let mut counts = vec![0usize; rows * cols];
        for &b in &bins {
            counts[b] += 1;
        }
        let mut pool = vec![0.0; rows * cols * c];
        for (cell, &b) in bins.iter().enumerate() {
            pool[b * c + cell] = 1.0 / counts[b] as f64;
        }
        Ok(DesignInputs {
            rows,
            cols,
            cells: c,
            geom: Tensor::new(vec![rows * cols, GeomFeatureMap::CHANNELS], geom)?,
            topo: Tensor::new(vec![c, cfg.topo_width], topo)?,
            adjacency: Tensor::new(vec![c, c], topo_graph.adjacency_dense())?,
            norm_adjacency: Tensor::new(vec![c, c], topo_graph.normalized_adjacency())?,
            pool: Tensor::new(vec![rows * cols, c], pool)?,
        })
    }
}

/// Gather indices turning `[H*W, cin]` into 3x3 zero-padded patches
/// `[H*W, 9*cin]`, patch columns ordered (dy, dx, channel).
fn im2col_index(rows: usize, cols: usize, cin: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(rows * cols * 9 * cin);
    for r in 0..rows as isize {
        for c in 0..cols as isize {
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let (rr, cc) = (r + dy, c + dx);
                    let inside = rr >= 0 && cc >= 0 && rr < rows as isize && cc < cols as isize;
                    for ch in 0..cin {
                        idx.push(if inside {
                            (rr as usize * cols + cc as usize) * cin + ch
                        } else {
                            GATHER_ZERO
                        });
                    }
                }
            }
        }
    }
    idx
}

fn dense(tape: &mut Tape, p: &Bound, name: &str, x: Var) -> Result<Var, DiffError> {
    let w = p.var(&format!("{name}.w"))?;
    let b = p.var(&format!("{name}.b"))?;
    let y = tape.matmul(x, w)?;
    tape.add(y, b)
}

fn conv3x3(tape: &mut Tape, p: &Bound, name: &str, x: Var, rows: usize, cols: usize) -> Result<Var, DiffError> {
    let cin = tape.shape(x)[1];
    let patches = tape.gather(x, im2col_index(rows, cols, cin), &[rows * cols, 9 * cin])?;
    dense(tape, p, name, patches)
}

/// Mean of the latent vectors of the cells centered in each bin; empty bins
/// get zeros. `z` is `[C, b]`, the result `[H*W, b]`.
pub fn scatter_latent(tape: &mut Tape, z: Var, inputs: &DesignInputs) -> Result<Var, DiffError> {
    let pool = tape.constant(inputs.pool.clone())?;
    tape.matmul(pool, z)
}

/// Graph encoder: `relu(Â X W1 + b1)`, then `Â X' W2 + b2` split into the
/// mean and the pre-link standard deviation.
pub fn infer_gaussian_params(tape: &mut Tape, p: &Bound, inputs: &DesignInputs) -> Result<GaussianParams, DiffError> {
    let a = tape.constant(inputs.norm_adjacency.clone())?;
    let x = tape.constant(inputs.topo.clone())?;
    let b = inputs.topo.shape()[1];
    let ax = tape.matmul(a, x)?;
    let h = dense(tape, p, "topo_encoder.gc1", ax)?;
    let h = tape.relu(h)?;
    let ah = tape.matmul(a, h)?;
    let out = dense(tape, p, "topo_encoder.gc2", ah)?;
    let mu = tape.slice_last(out, 0, b)?;
    let pre_sigma = tape.slice_last(out, b, 2 * b)?;
    let sigma = positive_link(tape, pre_sigma)?;
    Ok(GaussianParams { mu, sigma })
}

/// Geometry encoder: two 3x3 convolutions over `[Φ ‖ pooled Z]`, output split
/// into `(2a+1)^2` shape and rate maps.
pub fn infer_gamma_params(
    tape: &mut Tape,
    p: &Bound,
    geom: Var,
    z_grid: Var,
    rows: usize,
    cols: usize,
) -> Result<GammaParams, DiffError> {
    let x = tape.concat_last(&[geom, z_grid])?;
    let h = conv3x3(tape, p, "geom_encoder.conv1", x, rows, cols)?;
    let h = tape.relu(h)?;
    let out = conv3x3(tape, p, "geom_encoder.conv2", h, rows, cols)?;
    let k = tape.shape(out)[1] / 2;
    let pre_alpha = tape.slice_last(out, 0, k)?;
    let pre_beta = tape.slice_last(out, k, 2 * k)?;
    Ok(GammaParams {
        alpha: positive_link(tape, pre_alpha)?,
        beta: positive_link(tape, pre_beta)?,
    })
}

/// Reconstructions used by the evidence lower bound.
#[derive(Clone, Copy, Debug)]
pub struct Decoded {
    /// `[H*W, 3]`, absent before placement.
    pub geom: Option<Var>,
    /// `[C, b]`.
    pub topo: Var,
    /// `[C, C]` logits `Z Zᵀ`.
    pub adjacency_logits: Var,
}

fn mlp2(tape: &mut Tape, p: &Bound, first: &str, second: &str, x: Var) -> Result<Var, DiffError> {
    let h = dense(tape, p, first, x)?;
    let h = tape.relu(h)?;
    dense(tape, p, second, h)
}

/// Decoder: per bin `[M window ‖ pooled Z] -> Φ̂`, per cell `z -> Ψ̂`, and
/// parameter-free adjacency logits `Z Zᵀ`. `m` is `None` before placement.
pub fn decode(tape: &mut Tape, p: &Bound, m: Option<Var>, z: Var, z_grid: Var) -> Result<Decoded, DiffError> {
    let geom = match m {
        Some(m) => {
            let x = tape.concat_last(&[m, z_grid])?;
            Some(mlp2(tape, p, "decoder.geom1", "decoder.geom2", x)?)
        }
        None => None,
    };
    let topo = mlp2(tape, p, "decoder.topo1", "decoder.topo2", z)?;
    let zt = tape.transpose(z)?;
    let adjacency_logits = tape.matmul(z, zt)?;
    Ok(Decoded {
        geom,
        topo,
        adjacency_logits,
    })
}

fn regressor(tape: &mut Tape, p: &Bound, x: Var, rows: usize, cols: usize) -> Result<Var, DiffError> {
    let h = conv3x3(tape, p, "regressor.conv1", x, rows, cols)?;
    let h = tape.relu(h)?;
    let h = conv3x3(tape, p, "regressor.conv2", h, rows, cols)?;
    let h = tape.relu(h)?;
    let out = conv3x3(tape, p, "regressor.conv3", h, rows, cols)?;
    let out = tape.softplus(out)?;
    tape.reshape(out, &[rows * cols])
}

/// Congestion from `[Φ ‖ pooled Z]`; returns `[H*W]`, strictly positive.
pub fn predict(tape: &mut Tape, p: &Bound, geom: Var, z_grid: Var, rows: usize, cols: usize) -> Result<Var, DiffError> {
    let x = tape.concat_last(&[geom, z_grid])?;
    regressor(tape, p, x, rows, cols)
}

/// Congestion from pooled latent features alone (logic-synthesis stage).
pub fn predict_latent(tape: &mut Tape, p: &Bound, z_grid: Var, rows: usize, cols: usize) -> Result<Var, DiffError> {
    regressor(tape, p, z_grid, rows, cols)
}

/// Configuration plus parameters, with deterministic inference helpers.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Params,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let params = Params::init(&config, seed);
        Model { config, params }
    }

    /// Prediction with the latent features at their posterior mean.
    pub fn predict_map(&self, example: &Example) -> Result<CongestionMap, DiffError> {
        let inputs = DesignInputs::new(example, &self.config)?;
        let mut tape = Tape::new();
        let p = Bound::new(&mut tape, &self.params, &[])?;
        let q = infer_gaussian_params(&mut tape, &p, &inputs)?;
        let z_grid = scatter_latent(&mut tape, q.mu, &inputs)?;
        let pred = match self.config.stage {
            Stage::Placement => {
                let geom = tape.constant(inputs.geom.clone())?;
                predict(&mut tape, &p, geom, z_grid, inputs.rows, inputs.cols)?
            }
            Stage::LogicSynthesis => predict_latent(&mut tape, &p, z_grid, inputs.rows, inputs.cols)?,
        };
        CongestionMap::new(inputs.rows, inputs.cols, tape.value(pred).data().to_vec())
            .map_err(|e| DiffError::Shape(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{synth_generate, SynthSpec};
    use crate::diff::check_gradients_multi;

    fn small_example() -> Example {
        let spec = SynthSpec {
            rows: 4,
            cols: 4,
            cells: 5,
            nets: 4,
            macro_fraction: 0.0,
            ..SynthSpec::default()
        };
        synth_generate(11, &spec).unwrap()
    }

    #[test]
    fn im2col_matches_direct_convolution() {
        let (rows, cols, cin, cout) = (3, 4, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..rows * cols * cin).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..9 * cin * cout).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut params = BTreeMap::new();
        params.insert("t.w".to_string(), Tensor::new(vec![9 * cin, cout], w.clone()).unwrap());
        params.insert("t.b".to_string(), Tensor::zeros(&[cout]));
        let mut tape = Tape::new();
        let vars = params
            .iter()
            .map(|(n, t)| (n.clone(), tape.constant(t.clone()).unwrap()))
            .collect();
        let bound = Bound { vars };
        let xv = tape.constant(Tensor::new(vec![rows * cols, cin], x.clone()).unwrap()).unwrap();
        let y = conv3x3(&mut tape, &bound, "t", xv, rows, cols).unwrap();
        for r in 0..rows {
            for c in 0..cols {
                for o in 0..cout {
                    let mut acc = 0.0;
                    for (slot, (dy, dx)) in (-1..=1i32).flat_map(|dy| (-1..=1i32).map(move |dx| (dy, dx))).enumerate() {
                        let (rr, cc) = (r as i32 + dy, c as i32 + dx);
                        if rr < 0 || cc < 0 || rr >= rows as i32 || cc >= cols as i32 {
                            continue;
                        }
                        for ch in 0..cin {
                            acc += x[(rr as usize * cols + cc as usize) * cin + ch] * w[(slot * cin + ch) * cout + o];
                        }
                    }
                    let got = tape.value(y).data()[(r * cols + c) * cout + o];
                    assert!((got - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_init_heads_start_at_unit_mean() {
        let ex = small_example();
        let cfg = ModelConfig::new(Stage::Placement, 1, 8);
        let params = Params::init(&cfg, 3);
        let inputs = DesignInputs::new(&ex, &cfg).unwrap();
        let mut tape = Tape::new();
        let p = Bound::new(&mut tape, &params, &[]).unwrap();
        let geom = tape.constant(Tensor::zeros(&[16, 3])).unwrap();
        let zg = tape.constant(Tensor::zeros(&[16, 8])).unwrap();
        let q = infer_gamma_params(&mut tape, &p, geom, zg, 4, 4).unwrap();
        let link = 2f64.ln() + 1e-4;
        assert!(tape.value(q.alpha).data().iter().all(|&v| v == link));
        assert_eq!(tape.value(q.alpha), tape.value(q.beta));
        assert_eq!(tape.value(q.alpha).shape(), &[16, 9]);
        let g = infer_gaussian_params(&mut tape, &p, &inputs).unwrap();
        assert!(tape.value(g.mu).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scatter_latent_means() {
        let ex = small_example();
        let cfg = ModelConfig::new(Stage::Placement, 1, 8);
        let inputs = DesignInputs::new(&ex, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z: Vec<f64> = (0..5 * 8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut tape = Tape::new();
        let zv = tape.constant(Tensor::new(vec![5, 8], z.clone()).unwrap()).unwrap();
        let zg = scatter_latent(&mut tape, zv, &inputs).unwrap();
        let bins = ex.cell_bins();
        for bin in 0..16 {
            let members: Vec<usize> = (0..5).filter(|&c| bins[c] == bin).collect();
            for f in 0..8 {
                let want = if members.is_empty() {
                    0.0
                } else {
                    members.iter().map(|&c| z[c * 8 + f]).sum::<f64>() / members.len() as f64
                };
                assert!((tape.value(zg).data()[bin * 8 + f] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn layout_matches_stage() {
        let logic = ModelConfig::new(Stage::LogicSynthesis, 1, 8);
        let names: Vec<String> = logic.layout().into_iter().map(|(n, _)| n).collect();
        assert!(names.iter().all(|n| !n.starts_with("geom_encoder") && !n.starts_with("decoder.geom")));
        assert_eq!(logic.layout()[0].1, vec![72, 32]);
        let params = Params::init(&ModelConfig::new(Stage::Placement, 1, 8), 0);
        assert!(params.validate(&logic).is_err());
    }

    #[test]
    fn model_gradients_pass_finite_differences() {
        let ex = small_example();
        let cfg = ModelConfig::new(Stage::Placement, 1, 8);
        let mut params = Params::init(&cfg, 5);
        // Move zero-initialized heads off zero so every path is exercised.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for (_, t) in params.iter_mut() {
            for v in t.data_mut() {
                *v += rng.random_range(-0.2..0.2);
            }
        }
        let inputs = DesignInputs::new(&ex, &cfg).unwrap();
        let names: Vec<String> = params.iter().map(|(n, _)| n.clone()).collect();
        let tensors: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
        let report = check_gradients_multi(
            |tape, vars| {
                let bound = Bound {
                    vars: names.iter().cloned().zip(vars.iter().copied()).collect(),
                };
                let q = infer_gaussian_params(tape, &bound, &inputs)?;
                let zg = scatter_latent(tape, q.mu, &inputs)?;
                let geom = tape.constant(inputs.geom.clone())?;
                let g = infer_gamma_params(tape, &bound, geom, zg, 4, 4)?;
                let pred = predict(tape, &bound, geom, zg, 4, 4)?;
                let dec = decode(tape, &bound, Some(g.alpha), q.mu, zg)?;
                let mut terms = vec![pred, g.beta, q.sigma, dec.geom.unwrap(), dec.topo, dec.adjacency_logits];
                let mut total = tape.constant(Tensor::scalar(0.0))?;
                for (i, t) in terms.drain(..).enumerate() {
                    let s = tape.square(t)?;
                    let s = tape.sum(s)?;
                    let s = tape.scale(s, 1.0 / (i + 1) as f64)?;
                    total = tape.add(total, s)?;
                }
                Ok(total)
            },
            &tensors,
            1e-6,
        )
        .unwrap();
        assert!(report.max_rel_err <= 1e-4, "{report:?} at {}", names[report.worst.0]);
    }

    #[test]
    fn permutation_equivariance_of_graph_encoder() {
        let ex = small_example();
        let cfg = ModelConfig::new(Stage::Placement, 1, 8);
        let mut params = Params::init(&cfg, 8);
        for (_, t) in params.iter_mut() {
            for (i, v) in t.data_mut().iter_mut().enumerate() {
                *v += 0.01 * ((i % 7) as f64 - 3.0);
            }
        }
        let inputs = DesignInputs::new(&ex, &cfg).unwrap();
        let run = |inp: &DesignInputs| {
            let mut tape = Tape::new();
            let p = Bound::new(&mut tape, &params, &[]).unwrap();
            let q = infer_gaussian_params(&mut tape, &p, inp).unwrap();
            (tape.value(q.mu).clone(), tape.value(q.sigma).clone())
        };
        let (mu, sigma) = run(&inputs);
        let perm = [3, 0, 4, 1, 2];
        let c = 5;
        let permute_rows = |t: &Tensor, w: usize| {
            let d: Vec<f64> = perm.iter().flat_map(|&i| t.data()[i * w..(i + 1) * w].to_vec()).collect();
            Tensor::new(t.shape().to_vec(), d).unwrap()
        };
        let permute_both = |t: &Tensor| {
            let d: Vec<f64> = perm
                .iter()
                .flat_map(|&i| perm.iter().map(move |&j| t.data()[i * c + j]))
                .collect();
            Tensor::new(vec![c, c], d).unwrap()
        };
        let mut moved = inputs.clone();
        moved.topo = permute_rows(&inputs.topo, 8);
        moved.norm_adjacency = permute_both(&inputs.norm_adjacency);
        moved.adjacency = permute_both(&inputs.adjacency);
        let (mu2, sigma2) = run(&moved);
        // Summation order inside the matmuls changes, so allow rounding.
        let close = |a: &Tensor, b: &Tensor| a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() <= 1e-14);
        assert!(close(&permute_rows(&mu, 8), &mu2));
        assert!(close(&permute_rows(&sigma, 8), &sigma2));
    }
}
