//! Gamma and Gaussian posteriors over the correlation weights and the latent
//! cell features: sampling with reparameterized gradients and closed-form
//! KL divergences against the priors.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diff::special::incomplete_gamma_pq;
use crate::diff::{gamma_ln_pdf, gamma_quantile, DiffError, Tape, Tensor, Var};

/// Added after the softplus link so positive parameters stay away from 0.
pub const LINK_FLOOR: f64 = 1e-4;

/// Fresh draws allowed when a Gamma sample is not usable.
const MAX_RESAMPLE: usize = 8;

/// `softplus(x) + LINK_FLOOR`.
pub fn positive_link(tape: &mut Tape, x: Var) -> Result<Var, DiffError> {
    let s = tape.softplus(x)?;
    tape.offset(s, LINK_FLOOR)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub alpha_hat: f64,
    pub beta_hat: f64,
}

impl Default for GammaPrior {
    fn default() -> Self {
        GammaPrior {
            alpha_hat: 1.0,
            beta_hat: 1.0,
        }
    }
}

impl GammaPrior {
    pub fn new(alpha_hat: f64, beta_hat: f64) -> Result<Self, DiffError> {
        for (func, v) in [("GammaPrior(alpha)", alpha_hat), ("GammaPrior(beta)", beta_hat)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DiffError::Domain { func, value: v });
            }
        }
        Ok(GammaPrior { alpha_hat, beta_hat })
    }
}

/// The fixed standard normal prior over latent cell features.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GaussianPrior;

impl GaussianPrior {
    pub const MU: f64 = 0.0;
    pub const SIGMA: f64 = 1.0;
}

/// Shape and rate tensors of a Gamma posterior, recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct GammaParams {
    pub alpha: Var,
    pub beta: Var,
}

/// Mean and standard-deviation tensors of a Gaussian posterior.
#[derive(Clone, Copy, Debug)]
pub struct GaussianParams {
    pub mu: Var,
    pub sigma: Var,
}

fn check_same_shape(tape: &Tape, a: Var, b: Var, what: &str) -> Result<(), DiffError> {
    if tape.shape(a) != tape.shape(b) {
        return Err(DiffError::Shape(format!(
            "{what}: {:?} vs {:?}",
            tape.shape(a),
            tape.shape(b)
        )));
    }
    Ok(())
}

fn check_positive_values(tape: &Tape, v: Var, func: &'static str) -> Result<(), DiffError> {
    match tape.value(v).data().iter().find(|x| !(**x > 0.0)) {
        Some(&value) => Err(DiffError::Domain { func, value }),
        None => Ok(()),
    }
}

/// One `Gamma(alpha, 1)` draw: Marsaglia and Tsang's squeeze method, with
/// `G(alpha) = G(alpha + 1) * U^(1/alpha)` for `alpha < 1`.
pub fn marsaglia_tsang<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    if alpha < 1.0 {
        let u: f64 = rng.random();
        return marsaglia_tsang(alpha + 1.0, rng) * u.powf(1.0 / alpha);
    }
    let d = alpha - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let (x, v) = loop {
            let x: f64 = rng.sample(StandardNormal);
            let v = 1.0 + c * x;
            if v > 0.0 {
                break (x, v * v * v);
            }
        };
        let u: f64 = rng.random();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// `(dz/dalpha, dz/dbeta)` for a sample `z ~ Gamma(alpha, beta)` held at a
/// fixed CDF level: `dz/dalpha = -(dF/dalpha) / pdf(z)`, with `dF/dalpha` by
/// central difference of step `1e-5 alpha`, and `dz/dbeta = -z / beta`.
pub fn implicit_gradients(z: f64, alpha: f64, beta: f64) -> Result<(f64, f64), DiffError> {
    let x = beta * z;
    let h = 1e-5 * alpha;
    // Difference whichever tail is smaller so the subtraction keeps its digits.
    let (p, _) = incomplete_gamma_pq(alpha, x);
    let dcdf = if p < 0.5 {
        (incomplete_gamma_pq(alpha + h, x).0 - incomplete_gamma_pq(alpha - h, x).0) / (2.0 * h)
    } else {
        -(incomplete_gamma_pq(alpha + h, x).1 - incomplete_gamma_pq(alpha - h, x).1) / (2.0 * h)
    };
    let pdf = gamma_ln_pdf(z, alpha, beta)?.exp();
    let dz_dalpha = -dcdf / pdf;
    if !dz_dalpha.is_finite() {
        return Err(DiffError::NonFinite { op: "implicit gradient" });
    }
    Ok((dz_dalpha, -z / beta))
}

fn reparameterized(tape: &mut Tape, q: &GammaParams, z: Vec<f64>) -> Result<Var, DiffError> {
    let alpha = tape.value(q.alpha).data();
    let beta = tape.value(q.beta).data();
    let mut da = Vec::with_capacity(z.len());
    let mut db = Vec::with_capacity(z.len());
    for ((&zi, &a), &b) in z.iter().zip(alpha).zip(beta) {
        let (ga, gb) = implicit_gradients(zi, a, b)?;
        da.push(ga);
        db.push(gb);
    }
    tape.pointwise2(q.alpha, q.beta, z, da, db)
}

/// One sample per element of `q`, differentiable in `alpha` and `beta`
/// through implicit reparameterization. An unusable draw (zero after
/// underflow, or a non-finite gradient) is redrawn up to 8 times.
pub fn sample_gamma<R: Rng + ?Sized>(tape: &mut Tape, q: &GammaParams, rng: &mut R) -> Result<Var, DiffError> {
    check_same_shape(tape, q.alpha, q.beta, "sample_gamma")?;
    check_positive_values(tape, q.alpha, "sample_gamma(alpha)")?;
    check_positive_values(tape, q.beta, "sample_gamma(beta)")?;
    let alpha = tape.value(q.alpha).data().to_vec();
    let beta = tape.value(q.beta).data().to_vec();
    let mut z = Vec::with_capacity(alpha.len());
    for (&a, &b) in alpha.iter().zip(&beta) {
        let mut attempt = 0;
        let zi = loop {
            let zi = marsaglia_tsang(a, rng) / b;
            if zi > 0.0 && zi.is_finite() && implicit_gradients(zi, a, b).is_ok() {
                break zi;
            }
            attempt += 1;
            if attempt == MAX_RESAMPLE {
                return Err(DiffError::NonFinite { op: "sample_gamma" });
            }
        };
        z.push(zi);
    }
    reparameterized(tape, q, z)
}

/// Deterministic counterpart of [`sample_gamma`]: element `i` is the
/// `quantiles[i]` quantile of its Gamma posterior.
pub fn sample_gamma_at(tape: &mut Tape, q: &GammaParams, quantiles: &[f64]) -> Result<Var, DiffError> {
    check_same_shape(tape, q.alpha, q.beta, "sample_gamma_at")?;
    if quantiles.len() != tape.value(q.alpha).len() {
        return Err(DiffError::Shape(format!(
            "{} quantiles for {} parameters",
            quantiles.len(),
            tape.value(q.alpha).len()
        )));
    }
    let z = tape
        .value(q.alpha)
        .data()
        .iter()
        .zip(tape.value(q.beta).data())
        .zip(quantiles)
        .map(|((&a, &b), &u)| gamma_quantile(u, a, b))
        .collect::<Result<Vec<_>, _>>()?;
    reparameterized(tape, q, z)
}

/// Standard normal noise of the given shape.
pub fn standard_normal<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

/// `mu + sigma * eps` for given noise `eps`.
pub fn sample_gaussian_with(tape: &mut Tape, q: &GaussianParams, eps: Tensor) -> Result<Var, DiffError> {
    check_same_shape(tape, q.mu, q.sigma, "sample_gaussian")?;
    if eps.shape() != tape.shape(q.mu) {
        return Err(DiffError::Shape(format!(
            "noise {:?} for parameters {:?}",
            eps.shape(),
            tape.shape(q.mu)
        )));
    }
    let eps = tape.constant(eps)?;
    let scaled = tape.mul(q.sigma, eps)?;
    tape.add(q.mu, scaled)
}

pub fn sample_gaussian<R: Rng + ?Sized>(tape: &mut Tape, q: &GaussianParams, rng: &mut R) -> Result<Var, DiffError> {
    let eps = standard_normal(tape.shape(q.mu), rng);
    sample_gaussian_with(tape, q, eps)
}

/// `sum KL(Gamma(alpha, beta) || Gamma(alpha_hat, beta_hat))` over all elements:
/// `(a - a^) psi(a) - lnG(a) + lnG(a^) + a^ (ln b - ln b^) + a (b^ - b) / b`.
pub fn kl_gamma(tape: &mut Tape, q: &GammaParams, p: &GammaPrior) -> Result<Var, DiffError> {
    check_same_shape(tape, q.alpha, q.beta, "kl_gamma")?;
    check_positive_values(tape, q.alpha, "kl_gamma(alpha)")?;
    check_positive_values(tape, q.beta, "kl_gamma(beta)")?;
    let n = tape.value(q.alpha).len() as f64;
    let psi = tape.digamma(q.alpha)?;
    let shifted = tape.offset(q.alpha, -p.alpha_hat)?;
    let t1 = tape.mul(shifted, psi)?;
    let t2 = tape.lgamma(q.alpha)?;
    let ln_beta = tape.log(q.beta)?;
    let t3 = tape.scale(ln_beta, p.alpha_hat)?;
    let beta_hat = tape.constant(Tensor::scalar(p.beta_hat))?;
    let ratio = tape.div(beta_hat, q.beta)?;
    let ratio = tape.offset(ratio, -1.0)?;
    let t4 = tape.mul(q.alpha, ratio)?;
    let acc = tape.sub(t1, t2)?;
    let acc = tape.add(acc, t3)?;
    let acc = tape.add(acc, t4)?;
    let total = tape.sum(acc)?;
    let constant = n * (crate::diff::special::lgamma_unchecked(p.alpha_hat) - p.alpha_hat * p.beta_hat.ln());
    tape.offset(total, constant)
}

/// `sum KL(N(mu, sigma^2) || N(0, 1)) = sum ln(1/sigma) + (sigma^2 + mu^2)/2 - 1/2`.
pub fn kl_gaussian(tape: &mut Tape, q: &GaussianParams) -> Result<Var, DiffError> {
    check_same_shape(tape, q.mu, q.sigma, "kl_gaussian")?;
    check_positive_values(tape, q.sigma, "kl_gaussian(sigma)")?;
    let n = tape.value(q.mu).len() as f64;
    let ln_sigma = tape.log(q.sigma)?;
    let s2 = tape.square(q.sigma)?;
    let m2 = tape.square(q.mu)?;
    let quad = tape.add(s2, m2)?;
    let quad = tape.scale(quad, 0.5)?;
    let acc = tape.sub(quad, ln_sigma)?;
    let total = tape.sum(acc)?;
    tape.offset(total, -0.5 * n)
}

/// Elementwise `alpha / beta`.
pub fn posterior_mean(tape: &mut Tape, q: &GammaParams) -> Result<Var, DiffError> {
    check_same_shape(tape, q.alpha, q.beta, "posterior_mean")?;
    tape.div(q.alpha, q.beta)
}

/// Scalar closed form of the Gamma KL, for reporting and tests.
pub fn kl_gamma_value(alpha: f64, beta: f64, p: &GammaPrior) -> Result<f64, DiffError> {
    let mut tape = Tape::new();
    let q = GammaParams {
        alpha: tape.constant(Tensor::scalar(alpha))?,
        beta: tape.constant(Tensor::scalar(beta))?,
    };
    let kl = kl_gamma(&mut tape, &q, p)?;
    Ok(tape.value(kl).item())
}

/// Scalar closed form of the Gaussian KL against `N(0, 1)`.
pub fn kl_gaussian_value(mu: f64, sigma: f64) -> Result<f64, DiffError> {
    let mut tape = Tape::new();
    let q = GaussianParams {
        mu: tape.constant(Tensor::scalar(mu))?,
        sigma: tape.constant(Tensor::scalar(sigma))?,
    };
    let kl = kl_gaussian(&mut tape, &q)?;
    Ok(tape.value(kl).item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{check_gradients_multi, digamma, trigamma};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gamma_kl_spot_value() {
        let kl = kl_gamma_value(2.0, 2.0, &GammaPrior::default()).unwrap();
        let want = digamma(2.0).unwrap() + 2f64.ln() - 1.0;
        assert!((kl - want).abs() < 1e-14);
        assert!((kl - 0.115_931_515_658_412_45).abs() < 1e-14);
        assert!(kl_gamma_value(3.0, 0.5, &GammaPrior::new(3.0, 0.5).unwrap()).unwrap().abs() < 1e-12);
    }

    #[test]
    fn gaussian_kl_spot_values() {
        assert_eq!(kl_gaussian_value(0.0, 1.0).unwrap(), 0.0);
        assert!((kl_gaussian_value(1.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((kl_gaussian_value(0.0, 2.0).unwrap() - (2.0 - 0.5 - 2f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn kl_domain_errors() {
        assert!(kl_gamma_value(0.0, 1.0, &GammaPrior::default()).is_err());
        assert!(kl_gamma_value(1.0, -1.0, &GammaPrior::default()).is_err());
        assert!(kl_gaussian_value(0.0, 0.0).is_err());
        assert!(GammaPrior::new(0.0, 1.0).is_err());
    }

    #[test]
    fn posterior_mean_ratio() {
        let mut tape = Tape::new();
        let q = GammaParams {
            alpha: tape.constant(Tensor::vector(vec![3.0, 2.0])).unwrap(),
            beta: tape.constant(Tensor::vector(vec![2.0, 2.0])).unwrap(),
        };
        let m = posterior_mean(&mut tape, &q).unwrap();
        assert_eq!(tape.value(m).data(), &[1.5, 1.0]);
    }

    #[test]
    fn implicit_gradient_matches_quantile_derivative() {
        // z(alpha) = F^-1(u; alpha, beta) at fixed u, differentiated numerically.
        for &(u, a, b) in &[(0.3, 2.0, 1.0), (0.9, 0.5, 2.0), (0.999, 5.0, 3.0), (0.01, 0.3, 1.0)] {
            let z = gamma_quantile(u, a, b).unwrap();
            let (ga, gb) = implicit_gradients(z, a, b).unwrap();
            let h = 1e-6 * a;
            let fd_a = (gamma_quantile(u, a + h, b).unwrap() - gamma_quantile(u, a - h, b).unwrap()) / (2.0 * h);
            let hb = 1e-6 * b;
            let fd_b = (gamma_quantile(u, a, b + hb).unwrap() - gamma_quantile(u, a, b - hb).unwrap()) / (2.0 * hb);
            assert!((ga - fd_a).abs() <= 1e-5 * fd_a.abs().max(1e-3), "u={u} a={a}: {ga} vs {fd_a}");
            assert!((gb - fd_b).abs() <= 1e-5 * fd_b.abs().max(1e-3));
        }
    }

    #[test]
    fn sampler_mean_and_log_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &a in &[0.4, 1.0, 3.5] {
            let n = 40_000;
            let draws: Vec<f64> = (0..n).map(|_| marsaglia_tsang(a, &mut rng)).collect();
            let mean = draws.iter().sum::<f64>() / n as f64;
            let log_mean = draws.iter().map(|z| z.ln()).sum::<f64>() / n as f64;
            let se = (a / n as f64).sqrt();
            assert!((mean - a).abs() < 5.0 * se, "alpha {a}: mean {mean}");
            let se_log = (trigamma(a).unwrap() / n as f64).sqrt();
            assert!((log_mean - digamma(a).unwrap()).abs() < 5.0 * se_log);
        }
    }

    #[test]
    fn gaussian_reparameterization() {
        let mut tape = Tape::new();
        let q = GaussianParams {
            mu: tape.leaf(Tensor::vector(vec![0.5, -1.0])).unwrap(),
            sigma: tape.leaf(Tensor::vector(vec![1e-300, 2.0])).unwrap(),
        };
        let eps = Tensor::vector(vec![0.7, -0.3]);
        let z = sample_gaussian_with(&mut tape, &q, eps).unwrap();
        assert_eq!(tape.value(z).data()[0], 0.5);
        let s = tape.sum(z).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(q.mu).unwrap(), &[1.0, 1.0]);
        assert_eq!(g.get(q.sigma).unwrap(), &[0.7, -0.3]);
    }

    #[test]
    fn kl_gradients_pass_finite_differences() {
        let gamma = check_gradients_multi(
            |t, v| {
                let q = GammaParams { alpha: v[0], beta: v[1] };
                kl_gamma(t, &q, &GammaPrior::new(1.3, 0.7).unwrap())
            },
            &[Tensor::vector(vec![2.0, 0.4, 5.0]), Tensor::vector(vec![1.0, 3.0, 0.6])],
            1e-6,
        )
        .unwrap();
        assert!(gamma.max_rel_err <= 1e-5, "{gamma:?}");
        let gauss = check_gradients_multi(
            |t, v| kl_gaussian(t, &GaussianParams { mu: v[0], sigma: v[1] }),
            &[Tensor::vector(vec![0.3, -2.0]), Tensor::vector(vec![0.5, 1.7])],
            1e-6,
        )
        .unwrap();
        assert!(gauss.max_rel_err <= 1e-5, "{gauss:?}");
    }

    #[test]
    fn quantile_sample_gradient_passes_finite_differences() {
        let u = [0.2, 0.5, 0.95];
        let report = check_gradients_multi(
            |t, v| {
                let z = sample_gamma_at(t, &GammaParams { alpha: v[0], beta: v[1] }, &u)?;
                t.sum(z)
            },
            &[Tensor::vector(vec![2.0, 0.7, 4.0]), Tensor::vector(vec![1.0, 2.5, 0.8])],
            1e-6,
        )
        .unwrap();
        assert!(report.max_rel_err <= 1e-5, "{report:?}");
    }
}
