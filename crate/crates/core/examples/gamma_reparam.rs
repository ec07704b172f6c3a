//! Monte-Carlo gradients of Gamma expectations through implicit
//! reparameterization, compared with their closed forms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vaca::diff::{Tape, Tensor};
use vaca::variational::{sample_gamma, GammaParams};

fn main() {
    let (alpha, beta, n) = (3.0, 2.0, 50_000);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut tape = Tape::new();
    let q = GammaParams {
        alpha: tape.leaf(Tensor::full(&[n], alpha)).unwrap(),
        beta: tape.leaf(Tensor::full(&[n], beta)).unwrap(),
    };
    let z = sample_gamma(&mut tape, &q, &mut rng).unwrap();
    let mean = tape.mean(z).unwrap();
    let g = tape.backward(mean).unwrap();
    let da: f64 = g.get(q.alpha).unwrap().iter().sum();
    let db: f64 = g.get(q.beta).unwrap().iter().sum();
    println!("E[z] = {:.4} (exact {:.4})", tape.value(mean).item(), alpha / beta);
    println!("dE[z]/dalpha = {da:.4} (exact {:.4})", 1.0 / beta);
    println!("dE[z]/dbeta  = {db:.4} (exact {:.4})", -alpha / (beta * beta));
}
