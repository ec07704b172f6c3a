use std::collections::BTreeMap;

use crate::diff::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Per-parameter Adam moments and step counts.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Adam {
    pub(crate) m: BTreeMap<String, Vec<f64>>,
    pub(crate) v: BTreeMap<String, Vec<f64>>,
    pub(crate) t: BTreeMap<String, u64>,
}

impl Adam {
    pub fn new() -> Self {
        Adam::default()
    }

    /// One bias-corrected Adam step on `param`.
    pub fn update(&mut self, name: &str, param: &mut Tensor, grad: &[f64], lr: f64) {
        let n = param.len();
        let m = self.m.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
        let v = self.v.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
        let t = self.t.entry(name.to_string()).or_insert(0);
        *t += 1;
        let c1 = 1.0 - BETA1.powi(*t as i32);
        let c2 = 1.0 - BETA2.powi(*t as i32);
        for (((p, g), mi), vi) in param.data_mut().iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = BETA1 * *mi + (1.0 - BETA1) * g;
            *vi = BETA2 * *vi + (1.0 - BETA2) * g * g;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *p -= lr * mhat / (vhat.sqrt() + EPSILON);
        }
    }

    pub fn steps(&self, name: &str) -> u64 {
        self.t.get(name).copied().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut adam = Adam::new();
        let mut p = Tensor::vector(vec![1.0, -1.0]);
        adam.update("p", &mut p, &[0.5, -3.0], 0.1);
        // bias-corrected first step is lr * g / (|g| + eps)
        assert!((p.data()[0] - 0.9).abs() < 1e-7);
        assert!((p.data()[1] + 0.9).abs() < 1e-7);
        assert_eq!(adam.steps("p"), 1);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut adam = Adam::new();
        let mut p = Tensor::vector(vec![3.0]);
        for _ in 0..2000 {
            let g = 2.0 * (p.data()[0] - 1.0);
            adam.update("p", &mut p, &[g], 0.05);
        }
        assert!((p.data()[0] - 1.0).abs() < 1e-3);
    }
}
