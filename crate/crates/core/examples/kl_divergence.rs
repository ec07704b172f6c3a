//! Closed-form KL divergences against the standard priors.

use vaca::variational::{kl_gamma_value, kl_gaussian_value, GammaPrior};

fn main() {
    let prior = GammaPrior::default();
    println!("KL(Gamma(a, b) || Gamma(1, 1))");
    for a in [0.5, 1.0, 2.0, 5.0] {
        let row: Vec<String> = [0.5, 1.0, 2.0, 5.0]
            .iter()
            .map(|&b| format!("{:8.4}", kl_gamma_value(a, b, &prior).unwrap()))
            .collect();
        println!("  a = {a:3}: {}", row.join(""));
    }
    println!("KL(N(mu, sigma^2) || N(0, 1))");
    for (mu, sigma) in [(0.0, 1.0), (1.0, 1.0), (0.0, 2.0), (-2.0, 0.5)] {
        println!("  mu = {mu:4}, sigma = {sigma}: {:.4}", kl_gaussian_value(mu, sigma).unwrap());
    }
}
