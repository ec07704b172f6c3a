use super::{DiffError, Tape, Tensor, Var};

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(input, coordinate)` of the worst disagreement.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

/// `|a - b| / max(|a|, |b|, 1e-3)`; the floor keeps near-zero gradients
/// from being judged on pure rounding noise.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Compares reverse-mode gradients of `f` at `x` with central differences
/// `(f(x+h) - f(x-h)) / 2h`, returning the largest relative error.
pub fn check_gradients<F>(f: F, x: &Tensor, h: f64) -> Result<f64, DiffError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, DiffError>,
{
    let report = check_gradients_multi(|t, vs| f(t, vs[0]), std::slice::from_ref(x), h)?;
    Ok(report.max_rel_err)
}

/// [`check_gradients`] over several inputs at once, visiting every coordinate.
pub fn check_gradients_multi<F>(f: F, xs: &[Tensor], h: f64) -> Result<GradCheckReport, DiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, DiffError>,
{
    let eval = |inputs: &[Tensor]| -> Result<f64, DiffError> {
        let mut tape = Tape::new();
        let vars = inputs
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars = xs
        .iter()
        .map(|t| tape.leaf(t.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
    };
    let mut probe: Vec<Tensor> = xs.to_vec();
    for (i, (x, v)) in xs.iter().zip(&vars).enumerate() {
        let analytic = grads.get_or_zeros(*v, x.len());
        for j in 0..x.len() {
            let orig = x.data()[j];
            probe[i].data_mut()[j] = orig + h;
            let up = eval(&probe)?;
            probe[i].data_mut()[j] = orig - h;
            let down = eval(&probe)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = relative_error(analytic[j], numeric);
            report.coordinates += 1;
            if err > report.max_rel_err || report.coordinates == 1 {
                report.max_rel_err = err;
                report.worst = (i, j);
                report.analytic = analytic[j];
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
    }

    #[test]
    fn linear_function_is_exact() {
        let x = Tensor::vector(vec![1.0, -2.0, 0.5]);
        let err = check_gradients(
            |t, v| {
                let s = t.scale(v, 3.0)?;
                t.sum(s)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn matmul_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random(&[3, 4], &mut rng, -1.0, 1.0);
        let b = random(&[4, 2], &mut rng, -1.0, 1.0);
        let w = random(&[3, 2], &mut rng, -1.0, 1.0);
        let report = check_gradients_multi(
            |t, v| {
                let p = t.matmul(v[0], v[1])?;
                let wv = t.constant(w.clone())?;
                let q = t.mul(p, wv)?;
                t.sum(q)
            },
            &[a, b],
            1e-5,
        )
        .unwrap();
        assert_eq!(report.coordinates, 20);
        assert!(report.max_rel_err <= 1e-6, "{report:?}");
    }

    // Each smooth op at 10 random points.
    #[test]
    fn every_differentiable_op() {
        type OpFn = fn(&mut Tape, Var, Var) -> Result<Var, DiffError>;
        let ops: Vec<(&str, OpFn, (f64, f64))> = vec![
            ("add", |t, a, b| t.add(a, b), (-2.0, 2.0)),
            ("sub", |t, a, b| t.sub(a, b), (-2.0, 2.0)),
            ("mul", |t, a, b| t.mul(a, b), (-2.0, 2.0)),
            ("div", |t, a, b| t.div(a, b), (0.5, 2.0)),
            ("exp", |t, a, _| t.exp(a), (-2.0, 2.0)),
            ("log", |t, a, _| t.log(a), (0.2, 3.0)),
            ("abs", |t, a, _| t.abs(a), (0.1, 2.0)),
            ("relu", |t, a, _| t.relu(a), (0.1, 2.0)),
            ("sigmoid", |t, a, _| t.sigmoid(a), (-3.0, 3.0)),
            ("softplus", |t, a, _| t.softplus(a), (-3.0, 3.0)),
            ("square", |t, a, _| t.square(a), (-2.0, 2.0)),
            ("neg", |t, a, _| t.neg(a), (-2.0, 2.0)),
            ("lgamma", |t, a, _| t.lgamma(a), (0.2, 6.0)),
            ("digamma", |t, a, _| t.digamma(a), (0.2, 6.0)),
            ("mean", |t, a, b| {
                let p = t.mul(a, b)?;
                t.mean(p)
            }, (-2.0, 2.0)),
            ("bias-broadcast", |t, a, b| {
                let r = t.reshape(a, &[2, 3])?;
                let c = t.slice_last(b, 0, 3)?;
                let c = t.reshape(c, &[3])?;
                t.add(r, c)
            }, (-2.0, 2.0)),
            ("transpose", |t, a, b| {
                let r = t.reshape(a, &[2, 3])?;
                let r = t.transpose(r)?;
                let bb = t.reshape(b, &[3, 2])?;
                t.mul(r, bb)
            }, (-2.0, 2.0)),
            ("concat", |t, a, b| {
                let c = t.concat_last(&[a, b])?;
                t.square(c)
            }, (-2.0, 2.0)),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (name, op, (lo, hi)) in ops {
            for _ in 0..10 {
                let a = random(&[6], &mut rng, lo, hi);
                let b = random(&[6], &mut rng, lo, hi);
                let weights = random(&[64], &mut rng, 0.5, 1.5);
                let report = check_gradients_multi(
                    |t, v| {
                        let y = op(t, v[0], v[1])?;
                        let n = t.value(y).len();
                        let w = t.constant(
                            Tensor::new(t.shape(y).to_vec(), weights.data()[..n].to_vec())?,
                        )?;
                        let p = t.mul(y, w)?;
                        t.sum(p)
                    },
                    &[a, b],
                    1e-6,
                )
                .unwrap();
                assert!(report.max_rel_err <= 1e-5, "{name}: {report:?}");
            }
        }
    }
}
