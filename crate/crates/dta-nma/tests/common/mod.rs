//! Shared helpers for the integration suites: an independent quadrature
//! oracle for logistic-normal means and small utilities for building
//! synthetic draws.
#![allow(dead_code)]

use dta_nma::sampler::Draws;

/// Nodes and weights for n-point quadrature against the weight `e^{-x^2}`:
/// `integral e^{-x^2} f(x) dx ~= sum w_i f(x_i)`.
///
/// Roots of the degree-n Hermite polynomial by Newton's method on the
/// orthonormal three-term recurrence, seeded with the usual asymptotic
/// guesses for the largest roots. Weights follow from the derivative
/// identity `h_n'(x) = sqrt(2n) h_{n-1}(x)` at each root.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        let mut dp = 0.0;
        for _ in 0..200 {
            // orthonormal recurrence: h_j = x sqrt(2/j) h_{j-1} - sqrt((j-1)/j) h_{j-2}
            let mut hm = 0.0f64;
            let mut h = std::f64::consts::PI.powf(-0.25);
            for j in 1..=n {
                let jf = j as f64;
                let hp = z * (2.0 / jf).sqrt() * h - ((jf - 1.0) / jf).sqrt() * hm;
                hm = h;
                h = hp;
            }
            dp = (2.0 * nf).sqrt() * hm;
            let step = h / dp;
            z -= step;
            if step.abs() < 1e-15 * (1.0 + z.abs()) {
                break;
            }
        }
        nodes[i] = z;
        nodes[n - 1 - i] = -z;
        let w = 2.0 / (dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[m - 1] = 0.0;
    }
    (nodes, weights)
}

/// `E[expit(mu + sd Z)]` for standard normal `Z`, by substituting
/// `z = sqrt(2) x` into the quadrature above.
pub fn gh_logistic_normal_mean(mu: f64, sd: f64, nodes: &[f64], weights: &[f64]) -> f64 {
    let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
    nodes
        .iter()
        .zip(weights)
        .map(|(&x, &w)| {
            let z = std::f64::consts::SQRT_2 * x;
            w * expit(mu + sd * z)
        })
        .sum::<f64>()
        * inv_sqrt_pi
}

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Wraps per-chain series of derived quantities as a `Draws` value so the
/// regular diagnostics can produce means and Monte Carlo standard errors
/// for them. `series[q][chain][draw]` holds quantity `q`.
pub fn derived_draws(names: &[&str], series: &[Vec<Vec<f64>>]) -> Draws {
    assert_eq!(names.len(), series.len());
    let n_chains = series[0].len();
    let n_draws = series[0][0].len();
    let mut constrained = vec![vec![vec![0.0; names.len()]; n_draws]; n_chains];
    for (q, s) in series.iter().enumerate() {
        assert_eq!(s.len(), n_chains);
        for (c, chain) in s.iter().enumerate() {
            assert_eq!(chain.len(), n_draws);
            for (d, &v) in chain.iter().enumerate() {
                constrained[c][d][q] = v;
            }
        }
    }
    Draws {
        param_names: names.iter().map(|s| s.to_string()).collect(),
        unconstrained: constrained.clone(),
        constrained,
        log_posterior: vec![vec![0.0; n_draws]; n_chains],
        divergent: vec![vec![false; n_draws]; n_chains],
        tree_depth: vec![vec![0; n_draws]; n_chains],
        n_warmup: 0,
        thin: 1,
        seed: 0,
        step_sizes: vec![0.0; n_chains],
        inv_mass: Vec::new(),
    }
}
