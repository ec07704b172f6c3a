//! Correlation between predicted and true congestion at grid and cell level.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{CongestionMap, Example};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("series lengths differ: {0} vs {1}")]
    Length(usize, usize),
    #[error("need at least 2 pairs, got {0}")]
    TooShort(usize),
    #[error("non-finite value in series")]
    NonFinite,
    #[error("correlation undefined: {0} series is constant")]
    Constant(&'static str),
}

/// Predictions `x` paired with ground truth `y`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSeries {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl PairedSeries {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self, MetricsError> {
        if x.len() != y.len() {
            return Err(MetricsError::Length(x.len(), y.len()));
        }
        if x.len() < 2 {
            return Err(MetricsError::TooShort(x.len()));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(MetricsError::NonFinite);
        }
        Ok(PairedSeries { x, y })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn swapped(&self) -> PairedSeries {
        PairedSeries {
            x: self.y.clone(),
            y: self.x.clone(),
        }
    }
}

fn centered_sq(v: &[f64]) -> (Vec<f64>, f64) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let d: Vec<f64> = v.iter().map(|x| x - mean).collect();
    let ss = d.iter().map(|x| x * x).sum();
    (d, ss)
}

fn pearson_raw(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    let (dx, sx) = centered_sq(x);
    let (dy, sy) = centered_sq(y);
    if sx == 0.0 {
        return Err(MetricsError::Constant("x"));
    }
    if sy == 0.0 {
        return Err(MetricsError::Constant("y"));
    }
    let sxy: f64 = dx.iter().zip(&dy).map(|(a, b)| a * b).sum();
    Ok((sxy / (sx * sy).sqrt()).clamp(-1.0, 1.0))
}

pub fn pearson(s: &PairedSeries) -> Result<f64, MetricsError> {
    pearson_raw(&s.x, &s.y)
}

/// 1-based ranks; tied values share the average of their positions.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(s: &PairedSeries) -> Result<f64, MetricsError> {
    pearson_raw(&average_ranks(&s.x), &average_ranks(&s.y))
}

/// Pair counts from which both Kendall variants follow.
struct KendallCounts {
    pairs: i64,
    /// Concordant minus discordant.
    score: i64,
    ties_x: i64,
    ties_y: i64,
}

fn tie_pairs(sorted: &[f64]) -> i64 {
    let mut total = 0i64;
    let mut run = 1i64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Sorts `v` and returns the number of inversions.
fn merge_count(v: &mut [f64], buf: &mut Vec<f64>) -> i64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], buf) + merge_count(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf.push(v[j]);
            swaps += (mid - i) as i64;
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Knight's O(n log n) counting: sort by `(x, y)`, count inversions of `y`.
fn kendall_counts(s: &PairedSeries) -> KendallCounts {
    let n = s.len() as i64;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s.x[a].total_cmp(&s.x[b]).then(s.y[a].total_cmp(&s.y[b])));
    let xs: Vec<f64> = order.iter().map(|&i| s.x[i]).collect();
    let mut ys: Vec<f64> = order.iter().map(|&i| s.y[i]).collect();

    let ties_x = tie_pairs(&xs);
    let mut joint = 0i64;
    let mut run = 1i64;
    for i in 1..order.len() {
        if xs[i] == xs[i - 1] && ys[i] == ys[i - 1] {
            run += 1;
        } else {
            joint += run * (run - 1) / 2;
            run = 1;
        }
    }
    joint += run * (run - 1) / 2;

    let swaps = merge_count(&mut ys, &mut Vec::with_capacity(s.len()));
    let ties_y = tie_pairs(&ys);
    let pairs = n * (n - 1) / 2;
    KendallCounts {
        pairs,
        score: pairs - ties_x - ties_y + joint - 2 * swaps,
        ties_x,
        ties_y,
    }
}

/// Kendall tau-a: `(concordant - discordant) / (n (n-1) / 2)`. Ties count as
/// neither, so a tied series scores below 1 even against itself.
pub fn kendall(s: &PairedSeries) -> Result<f64, MetricsError> {
    let c = kendall_counts(s);
    if c.ties_x == c.pairs {
        return Err(MetricsError::Constant("x"));
    }
    if c.ties_y == c.pairs {
        return Err(MetricsError::Constant("y"));
    }
    Ok(c.score as f64 / c.pairs as f64)
}

/// Kendall tau-b, which corrects for ties; for diagnostics.
pub fn kendall_tau_b(s: &PairedSeries) -> Result<f64, MetricsError> {
    let c = kendall_counts(s);
    if c.ties_x == c.pairs {
        return Err(MetricsError::Constant("x"));
    }
    if c.ties_y == c.pairs {
        return Err(MetricsError::Constant("y"));
    }
    let denom = (((c.pairs - c.ties_x) as f64) * ((c.pairs - c.ties_y) as f64)).sqrt();
    Ok((c.score as f64 / denom).clamp(-1.0, 1.0))
}

/// Both maps flattened in row-major order.
pub fn grid_level(pred: &CongestionMap, truth: &CongestionMap) -> Result<PairedSeries, MetricsError> {
    PairedSeries::new(pred.values.clone(), truth.values.clone())
}

/// One pair per cell, each cell taking the values of the bin that holds its
/// center.
pub fn cell_level(pred: &CongestionMap, truth: &CongestionMap, cell_bins: &[usize]) -> Result<PairedSeries, MetricsError> {
    if pred.values.len() != truth.values.len() {
        return Err(MetricsError::Length(pred.values.len(), truth.values.len()));
    }
    let x = cell_bins.iter().map(|&b| pred.values[b]).collect();
    let y = cell_bins.iter().map(|&b| truth.values[b]).collect();
    PairedSeries::new(x, y)
}

/// Cell-level series of a design.
pub fn cell_level_for(pred: &CongestionMap, example: &Example) -> Result<PairedSeries, MetricsError> {
    cell_level(pred, &example.target, &example.cell_bins())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Grid,
    Cell,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub level: Level,
    pub pearson: f64,
    pub spearman: f64,
    pub kendall: f64,
    pub n: usize,
}

impl MetricsReport {
    pub fn compute(level: Level, s: &PairedSeries) -> Result<Self, MetricsError> {
        Ok(MetricsReport {
            level,
            pearson: pearson(s)?,
            spearman: spearman(s)?,
            kendall: kendall(s)?,
            n: s.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(x: &[f64], y: &[f64]) -> PairedSeries {
        PairedSeries::new(x.to_vec(), y.to_vec()).unwrap()
    }

    #[test]
    fn spot_values() {
        let up = s(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]);
        let down = s(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]);
        let mixed = s(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]);
        assert_eq!(pearson(&up).unwrap(), 1.0);
        assert_eq!(pearson(&down).unwrap(), -1.0);
        assert!((pearson(&mixed).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(kendall(&mixed).unwrap(), 1.0 / 3.0);
        assert_eq!(kendall(&up).unwrap(), 1.0);
        assert_eq!(kendall(&down).unwrap(), -1.0);
        assert_eq!(spearman(&down).unwrap(), -1.0);
    }

    #[test]
    fn monotone_transform_and_ties() {
        let x = [0.3, 1.7, 2.2, 5.0, 9.1];
        let y: Vec<f64> = x.iter().map(|v: &f64| v.exp() + 3.0).collect();
        assert!((spearman(&s(&x, &y)).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(average_ranks(&[1.0, 2.0, 2.0, 3.0]), vec![1.0, 2.5, 2.5, 4.0]);
        let tied = s(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 2.0, 3.0]);
        assert!(kendall(&tied).unwrap() < 1.0);
        assert_eq!(kendall_tau_b(&tied).unwrap(), 1.0);
    }

    #[test]
    fn errors() {
        assert_eq!(pearson(&s(&[1.0, 1.0], &[1.0, 2.0])), Err(MetricsError::Constant("x")));
        assert_eq!(kendall(&s(&[1.0, 2.0], &[4.0, 4.0])), Err(MetricsError::Constant("y")));
        assert!(PairedSeries::new(vec![1.0], vec![1.0]).is_err());
        assert!(PairedSeries::new(vec![1.0, 2.0], vec![1.0]).is_err());
        assert!(PairedSeries::new(vec![1.0, f64::NAN], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn cell_level_duplicates_shared_bins() {
        let pred = CongestionMap::new(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let truth = CongestionMap::new(1, 3, vec![3.0, 1.0, 2.0]).unwrap();
        let cells = cell_level(&pred, &truth, &[2, 0, 2]).unwrap();
        assert_eq!(cells.x(), &[3.0, 1.0, 3.0]);
        assert_eq!(cells.y(), &[2.0, 3.0, 2.0]);
        let grid = grid_level(&pred, &truth).unwrap();
        let one_each = cell_level(&pred, &truth, &[0, 1, 2]).unwrap();
        assert_eq!(grid, one_each);
    }

    #[test]
    fn report_json_shape() {
        let r = MetricsReport::compute(Level::Grid, &s(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0])).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert_eq!(v["level"], "grid");
        assert_eq!(v["n"], 3);
    }
}
