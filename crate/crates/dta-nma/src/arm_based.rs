//! Arm-based hierarchical model for networks of diagnostic accuracy studies.
//!
//! Each observed (study, test) arm contributes two independent binomial
//! likelihood terms, one per disease margin:
//!
//! ```text
//! tp ~ Binomial(n_diseased, pi_1)    logit(pi_1jk) = mu_1k + x_i' theta_1k + eta_i1 + delta_i1k
//! tn ~ Binomial(n_healthy,  pi_2)    logit(pi_2jk) = mu_2k + x_i' theta_2k + eta_i2 + delta_i2k
//! ```
//!
//! with outcome index 1 = sensitivity (diseased margin) and 2 = specificity
//! (healthy margin). `mu` are fixed test effects, `theta` study-level
//! covariate effects, `eta_i` a bivariate study effect with covariance
//! `Sigma = D(sigma) Omega(rho) D(sigma)`, and `delta_ijk` a
//! test-within-study effect with standard deviation `tau` (shared across
//! tests under compound symmetry, test-specific otherwise). Arms a study did
//! not observe simply contribute no likelihood term and carry no latent
//! `delta`; their omission is ignorable when missingness does not depend on
//! the unobserved counts.
//!
//! Sampling runs on an unconstrained vector: `eta` and `delta` are stored as
//! standardized effects (non-centered), scales pass through their prior's
//! transform, and the correlation through `tanh`. The log posterior and its
//! exact gradient are produced by reverse-mode differentiation of a tape
//! built per evaluation; the value equals
//! `log_likelihood + log_prior + log_jacobian` of the constrained point.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::autodiff::{expit, softplus, Tape, Var};
use crate::dataset::NetworkDataset;
use crate::error::{Error, Result};
use crate::priors::{normal_lpdf0, CorrelationPrior, PriorSpec, UnconstrainedVector};
use crate::sampler::Target;

const LN_2PI: f64 = 1.8378770664093453;

/// Structure of the test-within-study standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceSpec {
    /// One tau per outcome, shared by all tests.
    CompoundSymmetry,
    /// One tau per (outcome, test).
    Unstructured,
}

/// Constrained parameters of the arm-based model.
///
/// Layouts (K tests, P covariates, I studies, A observed arms):
/// * `mu`: 2K, outcome-major (`j * K + k`);
/// * `theta`: P * 2K (`p * 2K + j * K + k`);
/// * `eta`: 2I, study-interleaved (`2i + j`);
/// * `delta`: 2A in dataset arm order (`2a + j`), observed arms only;
/// * `tau`: 2 under compound symmetry, 2K unstructured, empty when the
///   model was built with a fixed tau.
#[derive(Debug, Clone, PartialEq)]
pub struct AbParams {
    pub mu: Vec<f64>,
    pub theta: Vec<f64>,
    pub eta: Vec<f64>,
    pub delta: Vec<f64>,
    pub sigma: [f64; 2],
    pub rho: f64,
    pub tau: Vec<f64>,
}

/// 2x2 between-study covariance from standard deviations and correlation.
pub fn assemble_covariance(sigma: [f64; 2], rho: f64) -> Result<[[f64; 2]; 2]> {
    if !(sigma[0] > 0.0) || !(sigma[1] > 0.0) {
        return Err(Error::Domain(format!(
            "standard deviations must be positive, got ({}, {})",
            sigma[0], sigma[1]
        )));
    }
    if rho.abs() >= 1.0 {
        return Err(Error::Domain(format!(
            "correlation must satisfy |rho| < 1, got {rho}"
        )));
    }
    let c = rho * sigma[0] * sigma[1];
    Ok([[sigma[0] * sigma[0], c], [c, sigma[1] * sigma[1]]])
}

/// Correlation between two logit-scale accuracies of different tests
/// measured in the same study: shared study variance over the geometric
/// mean of the two total variances.
pub fn intra_study_correlation(sigma_j: f64, tau_jk: f64, tau_jk2: f64) -> f64 {
    let s2 = sigma_j * sigma_j;
    s2 / ((s2 + tau_jk * tau_jk) * (s2 + tau_jk2 * tau_jk2)).sqrt()
}

/// Per-arm data cached in evaluation order: dense indices and both margins
/// as floats.
#[derive(Debug, Clone)]
struct ArmData {
    study: usize,
    test: usize,
    y: [f64; 2],
    n: [f64; 2],
}

fn ln_choose(n: u64, k: u64) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// The arm-based model bound to one dataset: owns the parameter layout,
/// densities, gradients, and the constraining transform.
#[derive(Debug, Clone)]
pub struct AbModel {
    ds: NetworkDataset,
    priors: PriorSpec,
    covariance: CovarianceSpec,
    /// When set, tau is a constant rather than a parameter; a value of zero
    /// also removes the delta block entirely (exact reduction to a model
    /// with no test-within-study variation).
    tau_fixed: Option<f64>,
    arms: Vec<ArmData>,
    ln_choose_sum: f64,
    node_hint: usize,
}

impl AbModel {
    pub fn new(
        ds: NetworkDataset,
        covariance: CovarianceSpec,
        priors: PriorSpec,
    ) -> Result<Self> {
        priors.validate()?;
        let arms = ds
            .arms()
            .iter()
            .enumerate()
            .map(|(a, arm)| {
                let (study, test) = ds.arm_indices(a);
                ArmData {
                    study,
                    test,
                    y: [arm.tp as f64, arm.tn as f64],
                    n: [arm.n_diseased as f64, arm.n_healthy as f64],
                }
            })
            .collect();
        let ln_choose_sum = ds
            .arms()
            .iter()
            .map(|a| ln_choose(a.n_diseased, a.tp) + ln_choose(a.n_healthy, a.tn))
            .sum();
        let mut m = AbModel {
            ds,
            priors,
            covariance,
            tau_fixed: None,
            arms,
            ln_choose_sum,
            node_hint: 0,
        };
        m.node_hint = m.dim() + 16 * m.ds.n_studies() + 26 * m.ds.n_arms() + 8 * m.n_mu() + 64;
        Ok(m)
    }

    /// Freezes tau at a constant. `tau = 0` removes the delta block, which
    /// collapses the model to correlated study effects only (the bivariate
    /// random-effects model when each study has a single test).
    pub fn with_fixed_tau(mut self, tau: f64) -> Result<Self> {
        if !(tau >= 0.0) {
            return Err(Error::Domain(format!("fixed tau must be >= 0, got {tau}")));
        }
        self.tau_fixed = Some(tau);
        self.node_hint = self.dim() + 16 * self.ds.n_studies() + 26 * self.ds.n_arms()
            + 8 * self.n_mu()
            + 64;
        Ok(self)
    }

    pub fn dataset(&self) -> &NetworkDataset {
        &self.ds
    }

    pub fn priors(&self) -> &PriorSpec {
        &self.priors
    }

    pub fn covariance(&self) -> CovarianceSpec {
        self.covariance
    }

    pub fn tau_fixed(&self) -> Option<f64> {
        self.tau_fixed
    }

    fn k(&self) -> usize {
        self.ds.n_tests()
    }

    fn n_mu(&self) -> usize {
        2 * self.k()
    }

    fn n_theta(&self) -> usize {
        self.ds.n_covariates() * 2 * self.k()
    }

    fn has_delta(&self) -> bool {
        self.tau_fixed != Some(0.0)
    }

    fn n_delta(&self) -> usize {
        if self.has_delta() {
            2 * self.ds.n_arms()
        } else {
            0
        }
    }

    /// Number of free tau parameters.
    pub fn n_tau(&self) -> usize {
        if self.tau_fixed.is_some() {
            0
        } else {
            match self.covariance {
                CovarianceSpec::CompoundSymmetry => 2,
                CovarianceSpec::Unstructured => 2 * self.k(),
            }
        }
    }

    // Block offsets in the flat vector. Order: mu, theta, eta, delta,
    // sigma, rho, tau.
    fn off_theta(&self) -> usize {
        self.n_mu()
    }
    fn off_eta(&self) -> usize {
        self.off_theta() + self.n_theta()
    }
    fn off_delta(&self) -> usize {
        self.off_eta() + 2 * self.ds.n_studies()
    }
    fn off_sigma(&self) -> usize {
        self.off_delta() + self.n_delta()
    }
    fn off_rho(&self) -> usize {
        self.off_sigma() + 2
    }
    fn off_tau(&self) -> usize {
        self.off_rho() + 1
    }

    pub fn idx_mu(&self, j: usize, k: usize) -> usize {
        j * self.k() + k
    }
    pub fn idx_theta(&self, p: usize, j: usize, k: usize) -> usize {
        self.off_theta() + p * self.n_mu() + j * self.k() + k
    }
    pub fn idx_eta(&self, i: usize, j: usize) -> usize {
        self.off_eta() + 2 * i + j
    }
    pub fn idx_delta(&self, a: usize, j: usize) -> Option<usize> {
        if self.has_delta() {
            Some(self.off_delta() + 2 * a + j)
        } else {
            None
        }
    }
    pub fn idx_sigma(&self, j: usize) -> usize {
        self.off_sigma() + j
    }
    pub fn idx_rho(&self) -> usize {
        self.off_rho()
    }
    pub fn idx_tau(&self, j: usize, k: usize) -> Option<usize> {
        if self.tau_fixed.is_some() {
            return None;
        }
        Some(match self.covariance {
            CovarianceSpec::CompoundSymmetry => self.off_tau() + j,
            CovarianceSpec::Unstructured => self.off_tau() + j * self.k() + k,
        })
    }

    /// Effective tau for (outcome, test) under the given parameters.
    pub fn tau_value(&self, params: &AbParams, j: usize, k: usize) -> f64 {
        match self.tau_fixed {
            Some(c) => c,
            None => match self.covariance {
                CovarianceSpec::CompoundSymmetry => params.tau[j],
                CovarianceSpec::Unstructured => params.tau[j * self.k() + k],
            },
        }
    }

    /// Reads the effective tau for (outcome, test) out of a constrained row.
    pub fn tau_from_row(&self, row: &[f64], j: usize, k: usize) -> f64 {
        match self.idx_tau(j, k) {
            Some(i) => row[i],
            None => self.tau_fixed.unwrap(),
        }
    }

    fn check_params(&self, p: &AbParams) -> Result<()> {
        let want = |what: &str, got: usize, want: usize| -> Result<()> {
            if got != want {
                return Err(Error::Domain(format!(
                    "{what}: expected {want} entries, got {got}"
                )));
            }
            Ok(())
        };
        want("mu", p.mu.len(), self.n_mu())?;
        want("theta", p.theta.len(), self.n_theta())?;
        want("eta", p.eta.len(), 2 * self.ds.n_studies())?;
        want("delta", p.delta.len(), self.n_delta())?;
        want("tau", p.tau.len(), self.n_tau())?;
        Ok(())
    }

    /// Logit-scale linear predictor of arm `a`, outcome `j`.
    fn linear_predictor(&self, p: &AbParams, a: usize, j: usize) -> f64 {
        let arm = &self.arms[a];
        let k = arm.test;
        let mut lin = p.mu[self.idx_mu(j, k)] + p.eta[2 * arm.study + j];
        let x = self.ds.study_covariates(arm.study);
        for (pi, &xv) in x.iter().enumerate() {
            lin += p.theta[pi * self.n_mu() + j * self.k() + k] * xv;
        }
        if self.has_delta() {
            lin += p.delta[2 * a + j];
        }
        lin
    }

    /// Model probability for arm `a`, outcome `j` (1 = sensitivity margin).
    pub fn fitted_probability(&self, p: &AbParams, a: usize, j: usize) -> Result<f64> {
        self.check_params(p)?;
        Ok(expit(self.linear_predictor(p, a, j)))
    }

    /// Binomial log likelihood of the whole network, normalizing constants
    /// included. Observed arms only; an empty dataset gives exactly zero.
    pub fn log_likelihood(&self, p: &AbParams) -> Result<f64> {
        self.check_params(p)?;
        let mut ll = self.ln_choose_sum;
        for a in 0..self.arms.len() {
            let arm = &self.arms[a];
            for j in 0..2 {
                let lin = self.linear_predictor(p, a, j);
                ll += arm.y[j] * lin - arm.n[j] * softplus(lin);
            }
        }
        Ok(ll)
    }

    /// Joint log prior on the constrained space: bivariate normal study
    /// effects, normal test-within-study effects, and the configured
    /// hyperpriors. Out-of-support values yield `-inf`.
    pub fn log_prior(&self, p: &AbParams) -> Result<f64> {
        self.check_params(p)?;
        let [s1, s2] = p.sigma;
        if !(s1 > 0.0 && s2 > 0.0) || p.rho.abs() >= 1.0 {
            return Ok(f64::NEG_INFINITY);
        }
        let om = 1.0 - p.rho * p.rho;
        let mut lp = 0.0;
        // eta_i ~ N2(0, Sigma)
        for i in 0..self.ds.n_studies() {
            let a = p.eta[2 * i] / s1;
            let b = p.eta[2 * i + 1] / s2;
            let q = (a * a - 2.0 * p.rho * a * b + b * b) / om;
            lp += -LN_2PI - s1.ln() - s2.ln() - 0.5 * om.ln() - 0.5 * q;
        }
        // delta ~ N(0, tau^2)
        if self.has_delta() {
            for (a, arm) in self.arms.iter().enumerate() {
                for j in 0..2 {
                    let tau = self.tau_value(p, j, arm.test);
                    if !(tau > 0.0) {
                        return Ok(f64::NEG_INFINITY);
                    }
                    lp += normal_lpdf0(p.delta[2 * a + j], tau);
                }
            }
        }
        // hyperpriors
        for &m in p.mu.iter().chain(p.theta.iter()) {
            lp += normal_lpdf0(m, self.priors.mean_sd);
        }
        lp += self.priors.scale.log_density(s1) + self.priors.scale.log_density(s2);
        for &tv in &p.tau {
            lp += self.priors.scale.log_density(tv);
        }
        lp += self.priors.correlation.log_density(p.rho);
        Ok(lp)
    }

    /// Maps constrained parameters to the unconstrained sampling space,
    /// returning the log-Jacobian of the inverse (constraining) map at that
    /// point. Fails outside the open support.
    pub fn to_unconstrained(&self, p: &AbParams) -> Result<UnconstrainedVector> {
        self.check_params(p)?;
        let [s1, s2] = p.sigma;
        if !(s1 > 0.0 && s2 > 0.0) {
            return Err(Error::Domain("sigma must be positive".into()));
        }
        if p.rho.abs() >= 1.0 {
            return Err(Error::Domain("|rho| must be < 1".into()));
        }
        let w = (1.0 - p.rho * p.rho).sqrt();
        let mut u = vec![0.0; self.dim()];
        u[..self.n_mu()].copy_from_slice(&p.mu);
        u[self.off_theta()..self.off_theta() + self.n_theta()].copy_from_slice(&p.theta);
        let mut log_jac = 0.0;
        // eta = L z with L = [[s1, 0], [s2 rho, s2 w]]
        for i in 0..self.ds.n_studies() {
            let z1 = p.eta[2 * i] / s1;
            let z2 = (p.eta[2 * i + 1] - s2 * p.rho * z1) / (s2 * w);
            u[self.off_eta() + 2 * i] = z1;
            u[self.off_eta() + 2 * i + 1] = z2;
            log_jac += s1.ln() + s2.ln() + w.ln();
        }
        if self.has_delta() {
            for (a, arm) in self.arms.iter().enumerate() {
                for j in 0..2 {
                    let tau = self.tau_value(p, j, arm.test);
                    if !(tau > 0.0) {
                        return Err(Error::Domain("tau must be positive".into()));
                    }
                    u[self.off_delta() + 2 * a + j] = p.delta[2 * a + j] / tau;
                    log_jac += tau.ln();
                }
            }
        }
        for j in 0..2 {
            let us = self.priors.scale.unconstrain(p.sigma[j])?;
            u[self.off_sigma() + j] = us;
            log_jac += self.priors.scale.log_jacobian(us);
        }
        let ur = CorrelationPrior::unconstrain(p.rho)?;
        u[self.off_rho()] = ur;
        log_jac += CorrelationPrior::log_jacobian(ur);
        for (t, &tv) in p.tau.iter().enumerate() {
            let ut = self.priors.scale.unconstrain(tv)?;
            u[self.off_tau() + t] = ut;
            log_jac += self.priors.scale.log_jacobian(ut);
        }
        Ok(UnconstrainedVector {
            values: u,
            log_jacobian: log_jac,
        })
    }

    /// Inverse of [`AbModel::to_unconstrained`].
    pub fn to_constrained(&self, u: &[f64]) -> Result<AbParams> {
        self.check_dim(u)?;
        let s1 = self.priors.scale.constrain(u[self.off_sigma()]);
        let s2 = self.priors.scale.constrain(u[self.off_sigma() + 1]);
        let rho = CorrelationPrior::constrain(u[self.off_rho()]);
        let w = (1.0 - rho * rho).sqrt();
        let tau: Vec<f64> = (0..self.n_tau())
            .map(|t| self.priors.scale.constrain(u[self.off_tau() + t]))
            .collect();
        let mut eta = vec![0.0; 2 * self.ds.n_studies()];
        for i in 0..self.ds.n_studies() {
            let z1 = u[self.off_eta() + 2 * i];
            let z2 = u[self.off_eta() + 2 * i + 1];
            eta[2 * i] = s1 * z1;
            eta[2 * i + 1] = s2 * (rho * z1 + w * z2);
        }
        let mut delta = vec![0.0; self.n_delta()];
        if self.has_delta() {
            let params_tau_probe = AbParams {
                mu: vec![],
                theta: vec![],
                eta: vec![],
                delta: vec![],
                sigma: [s1, s2],
                rho,
                tau: tau.clone(),
            };
            for (a, arm) in self.arms.iter().enumerate() {
                for j in 0..2 {
                    let tv = self.tau_value(&params_tau_probe, j, arm.test);
                    delta[2 * a + j] = tv * u[self.off_delta() + 2 * a + j];
                }
            }
        }
        Ok(AbParams {
            mu: u[..self.n_mu()].to_vec(),
            theta: u[self.off_theta()..self.off_theta() + self.n_theta()].to_vec(),
            eta,
            delta,
            sigma: [s1, s2],
            rho,
            tau,
        })
    }

    /// Log-Jacobian of the constraining map at `u`.
    pub fn log_jacobian(&self, u: &[f64]) -> Result<f64> {
        self.check_dim(u)?;
        let s1 = self.priors.scale.constrain(u[self.off_sigma()]);
        let s2 = self.priors.scale.constrain(u[self.off_sigma() + 1]);
        let ur = u[self.off_rho()];
        let ln_w = 0.5 * CorrelationPrior::log_jacobian(ur);
        let mut jac = self.ds.n_studies() as f64 * (s1.ln() + s2.ln() + ln_w);
        if self.has_delta() {
            let p = self.to_constrained(u)?;
            for (a, arm) in self.arms.iter().enumerate() {
                let _ = a;
                for j in 0..2 {
                    jac += self.tau_value(&p, j, arm.test).ln();
                }
            }
        }
        jac += self.priors.scale.log_jacobian(u[self.off_sigma()]);
        jac += self.priors.scale.log_jacobian(u[self.off_sigma() + 1]);
        jac += CorrelationPrior::log_jacobian(ur);
        for t in 0..self.n_tau() {
            jac += self.priors.scale.log_jacobian(u[self.off_tau() + t]);
        }
        Ok(jac)
    }

    fn check_dim(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.dim() {
            return Err(Error::Domain(format!(
                "expected {} unconstrained coordinates, got {}",
                self.dim(),
                u.len()
            )));
        }
        Ok(())
    }

    /// Builds the tape computing the unconstrained-space log posterior.
    fn build_graph(&self, u: &[f64]) -> (Tape, Var) {
        let mut t = Tape::with_capacity(u, self.node_hint);
        let mut const_sum = self.ln_choose_sum;
        let sd = self.priors.mean_sd;

        // hyperparameters and their prior-plus-Jacobian terms
        let us1 = t.input(self.off_sigma());
        let (sig1, term_s1) = self.priors.scale.build_term(&mut t, us1);
        let us2 = t.input(self.off_sigma() + 1);
        let (sig2, term_s2) = self.priors.scale.build_term(&mut t, us2);
        let urho = t.input(self.off_rho());
        let (rho, term_r) = self.priors.correlation.build_term(&mut t, urho);
        let mut acc = t.add(term_s1, term_s2);
        acc = t.add(acc, term_r);

        let mut tau_nodes: Vec<Var> = Vec::with_capacity(self.n_tau().max(1));
        match self.tau_fixed {
            Some(c) => tau_nodes.push(t.constant(c)),
            None => {
                for ti in 0..self.n_tau() {
                    let ut = t.input(self.off_tau() + ti);
                    let (tau, term) = self.priors.scale.build_term(&mut t, ut);
                    tau_nodes.push(tau);
                    acc = t.add(acc, term);
                }
            }
        }
        let tau_node = |j: usize, k: usize| -> Var {
            match self.tau_fixed {
                Some(_) => tau_nodes[0],
                None => match self.covariance {
                    CovarianceSpec::CompoundSymmetry => tau_nodes[j],
                    CovarianceSpec::Unstructured => tau_nodes[j * self.k() + k],
                },
            }
        };

        // Cholesky factor of Sigma. sqrt(1 - rho^2) is written as
        // sech(u) = exp(ln 2 + u - softplus(2u)): the naive form has an
        // unbounded derivative as tanh saturates, which turns into NaN
        // gradients once 1 - rho^2 underflows to zero.
        let two_u = t.mul_const(urho, 2.0);
        let sp2u = t.softplus(two_u);
        let log_sech = t.sub(urho, sp2u);
        let log_sech = t.add_const(log_sech, std::f64::consts::LN_2);
        let wvar = t.exp(log_sech);
        let l21 = t.mul(sig2, rho);
        let l22 = t.mul(sig2, wvar);

        // study effects: eta = L z, z ~ N(0, I)
        let mut eta_nodes: Vec<[Var; 2]> = Vec::with_capacity(self.ds.n_studies());
        for i in 0..self.ds.n_studies() {
            let z1 = t.input(self.off_eta() + 2 * i);
            let z2 = t.input(self.off_eta() + 2 * i + 1);
            let e1 = t.mul(sig1, z1);
            let a = t.mul(l21, z1);
            let b = t.mul(l22, z2);
            let e2 = t.add(a, b);
            eta_nodes.push([e1, e2]);
            let q1 = t.square(z1);
            let q2 = t.square(z2);
            let q = t.add(q1, q2);
            let prior = t.mul_const(q, -0.5);
            acc = t.add(acc, prior);
            const_sum += -LN_2PI;
        }

        // mean priors
        for idx in 0..self.n_mu() + self.n_theta() {
            let m = t.input(idx);
            let q = t.square(m);
            let prior = t.mul_const(q, -0.5 / (sd * sd));
            acc = t.add(acc, prior);
            const_sum += -0.5 * LN_2PI - sd.ln();
        }

        // arms: delta effects, standardized priors, binomial terms
        for (a, arm) in self.arms.iter().enumerate() {
            let x = self.ds.study_covariates(arm.study);
            for j in 0..2 {
                if arm.n[j] == 0.0 && !self.has_delta() {
                    continue;
                }
                let mut lin = t.input(self.idx_mu(j, arm.test));
                for (p, &xv) in x.iter().enumerate() {
                    if xv != 0.0 {
                        let th = t.input(self.idx_theta(p, j, arm.test));
                        let c = t.mul_const(th, xv);
                        lin = t.add(lin, c);
                    }
                }
                lin = t.add(lin, eta_nodes[arm.study][j]);
                if self.has_delta() {
                    let zd = t.input(self.off_delta() + 2 * a + j);
                    let tn = tau_node(j, arm.test);
                    let d = t.mul(tn, zd);
                    lin = t.add(lin, d);
                    let q = t.square(zd);
                    let prior = t.mul_const(q, -0.5);
                    acc = t.add(acc, prior);
                    const_sum += -0.5 * LN_2PI;
                }
                if arm.n[j] > 0.0 {
                    let yl = t.mul_const(lin, arm.y[j]);
                    let sp = t.softplus(lin);
                    let nsp = t.mul_const(sp, arm.n[j]);
                    let term = t.sub(yl, nsp);
                    acc = t.add(acc, term);
                }
            }
        }

        let out = t.add_const(acc, const_sum);
        (t, out)
    }

    /// Log posterior value on the unconstrained space.
    pub fn log_posterior(&self, u: &[f64]) -> Result<f64> {
        self.check_finite(u)?;
        let (t, out) = self.build_graph(u);
        Ok(t.val(out))
    }

    /// Log posterior and its exact gradient on the unconstrained space.
    pub fn log_posterior_and_grad(&self, u: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_finite(u)?;
        let (t, out) = self.build_graph(u);
        Ok(t.gradient(out))
    }

    fn check_finite(&self, u: &[f64]) -> Result<()> {
        self.check_dim(u)?;
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(
                "unconstrained coordinates must be finite".into(),
            ));
        }
        Ok(())
    }

    /// Canonical parameter names aligned with [`AbModel::constrain_row`].
    /// Outcome index 1 = sensitivity, 2 = specificity; tests appear under
    /// their original labels, studies under their dense 1-based position.
    pub fn param_names_vec(&self) -> Vec<String> {
        let labels = self.ds.test_labels();
        let mut names = Vec::with_capacity(self.dim());
        for j in 0..2 {
            for &lab in labels {
                names.push(format!("mu[{},{}]", j + 1, lab));
            }
        }
        for p in 0..self.ds.n_covariates() {
            for j in 0..2 {
                for &lab in labels {
                    names.push(format!("theta[{},{},{}]", p + 1, j + 1, lab));
                }
            }
        }
        for i in 0..self.ds.n_studies() {
            for j in 0..2 {
                names.push(format!("eta[{},{}]", i + 1, j + 1));
            }
        }
        if self.has_delta() {
            for a in 0..self.arms.len() {
                let (si, ti) = (self.arms[a].study, self.arms[a].test);
                for j in 0..2 {
                    names.push(format!("delta[{},{},{}]", si + 1, j + 1, labels[ti]));
                }
            }
        }
        names.push("sigma[1]".into());
        names.push("sigma[2]".into());
        names.push("rho".into());
        if self.tau_fixed.is_none() {
            match self.covariance {
                CovarianceSpec::CompoundSymmetry => {
                    names.push("tau[1]".into());
                    names.push("tau[2]".into());
                }
                CovarianceSpec::Unstructured => {
                    for j in 0..2 {
                        for &lab in labels {
                            names.push(format!("tau[{},{}]", j + 1, lab));
                        }
                    }
                }
            }
        }
        names
    }

    /// Constrained view of an unconstrained point, aligned with
    /// [`AbModel::param_names_vec`].
    pub fn constrain_row(&self, u: &[f64]) -> Vec<f64> {
        let p = self
            .to_constrained(u)
            .expect("constrain_row called with wrong dimension");
        let mut row = Vec::with_capacity(self.dim());
        row.extend_from_slice(&p.mu);
        row.extend_from_slice(&p.theta);
        row.extend_from_slice(&p.eta);
        row.extend_from_slice(&p.delta);
        row.push(p.sigma[0]);
        row.push(p.sigma[1]);
        row.push(p.rho);
        row.extend_from_slice(&p.tau);
        row
    }
}

impl Target for AbModel {
    fn dim(&self) -> usize {
        self.off_tau() + self.n_tau()
    }

    fn logp_grad(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        let (t, out) = self.build_graph(u);
        let (v, g) = t.gradient(out);
        grad.copy_from_slice(&g);
        v
    }

    fn param_names(&self) -> Vec<String> {
        self.param_names_vec()
    }

    fn constrain(&self, u: &[f64]) -> Vec<f64> {
        self.constrain_row(u)
    }
}

impl AbModel {
    /// Total unconstrained dimension (also the constrained-view length).
    pub fn dim(&self) -> usize {
        self.off_tau() + self.n_tau()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference_gradient, rel_err};
    use crate::dataset::StudyArm;
    use approx::assert_relative_eq;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn arm(study: &str, test: u32, tp: u64, nd: u64, tn: u64, nh: u64) -> StudyArm {
        StudyArm {
            study_id: study.into(),
            test_id: test,
            tp,
            n_diseased: nd,
            tn,
            n_healthy: nh,
            covariates: vec![],
            stratum: None,
        }
    }

    fn small_dataset() -> NetworkDataset {
        NetworkDataset::new(vec![
            arm("s1", 1, 12, 20, 15, 25),
            arm("s1", 2, 14, 20, 11, 25),
            arm("s2", 1, 30, 40, 28, 35),
            arm("s3", 2, 9, 15, 10, 18),
            arm("s3", 3, 11, 15, 12, 18),
        ])
        .unwrap()
    }

    fn default_model(cov: CovarianceSpec) -> AbModel {
        AbModel::new(small_dataset(), cov, PriorSpec::vague_normal()).unwrap()
    }

    fn random_unconstrained(m: &AbModel, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..m.dim()).map(|_| rng.random_range(-1.5..1.5)).collect()
    }

    #[test]
    fn covariance_assembly() {
        let id = assemble_covariance([1.0, 1.0], 0.0).unwrap();
        assert_eq!(id, [[1.0, 0.0], [0.0, 1.0]]);
        let s = assemble_covariance([2.0, 3.0], 0.5).unwrap();
        assert_eq!(s, [[4.0, 3.0], [3.0, 9.0]]);
        assert!(assemble_covariance([2.0, 3.0], 1.0).is_err());
        assert!(assemble_covariance([2.0, 3.0], -1.0).is_err());
        assert!(assemble_covariance([0.0, 3.0], 0.0).is_err());
    }

    #[test]
    fn intra_study_correlation_values() {
        // sigma^2 = 3, tau^2 = 1 on both tests
        let r = intra_study_correlation(3f64.sqrt(), 1.0, 1.0);
        assert_relative_eq!(r, 0.75, epsilon = 1e-12);
        // compound-symmetry special case sigma^2 / (sigma^2 + tau^2)
        let s: f64 = 1.3;
        let tau: f64 = 0.7;
        assert_relative_eq!(
            intra_study_correlation(s, tau, tau),
            s * s / (s * s + tau * tau),
            epsilon = 1e-12
        );
    }

    #[test]
    fn likelihood_of_single_arm_at_zero_predictors() {
        let ds = NetworkDataset::new(vec![arm("s1", 1, 5, 10, 5, 10)]).unwrap();
        let m = AbModel::new(ds, CovarianceSpec::CompoundSymmetry, PriorSpec::vague_normal())
            .unwrap();
        let p = AbParams {
            mu: vec![0.0, 0.0],
            theta: vec![],
            eta: vec![0.0, 0.0],
            delta: vec![0.0, 0.0],
            sigma: [1.0, 1.0],
            rho: 0.0,
            tau: vec![1.0, 1.0],
        };
        let expect = 2.0 * (ln_choose(10, 5) + 10.0 * 0.5f64.ln());
        assert_relative_eq!(m.log_likelihood(&p).unwrap(), expect, epsilon = 1e-12);
    }

    #[test]
    fn likelihood_of_empty_dataset_is_zero() {
        let ds = NetworkDataset::new(vec![]).unwrap();
        let m = AbModel::new(ds, CovarianceSpec::CompoundSymmetry, PriorSpec::vague_normal())
            .unwrap();
        let p = AbParams {
            mu: vec![],
            theta: vec![],
            eta: vec![],
            delta: vec![],
            sigma: [1.0, 1.0],
            rho: 0.0,
            tau: vec![1.0, 1.0],
        };
        assert_eq!(m.log_likelihood(&p).unwrap(), 0.0);
    }

    #[test]
    fn likelihood_saturates_to_zero_from_below() {
        let ds = NetworkDataset::new(vec![arm("s1", 1, 10, 10, 0, 0)]).unwrap();
        let m = AbModel::new(ds, CovarianceSpec::CompoundSymmetry, PriorSpec::vague_normal())
            .unwrap();
        let mut p = AbParams {
            mu: vec![5.0, 0.0],
            theta: vec![],
            eta: vec![0.0, 0.0],
            delta: vec![0.0, 0.0],
            sigma: [1.0, 1.0],
            rho: 0.0,
            tau: vec![1.0, 1.0],
        };
        let ll_5 = m.log_likelihood(&p).unwrap();
        p.mu[0] = 20.0;
        let ll_20 = m.log_likelihood(&p).unwrap();
        assert!(ll_5 < ll_20 && ll_20 < 0.0, "{ll_5} {ll_20}");
        assert!(ll_20 > -1e-7);
    }

    #[test]
    fn likelihood_is_additive_over_arms() {
        let m = default_model(CovarianceSpec::Unstructured);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_unconstrained(&m, &mut rng);
        let p = m.to_constrained(&u).unwrap();
        let total = m.log_likelihood(&p).unwrap();

        let mut sum = 0.0;
        for (a, sa) in m.dataset().arms().iter().enumerate() {
            let ds1 = NetworkDataset::new(vec![sa.clone()]).unwrap();
            let m1 = AbModel::new(
                ds1,
                CovarianceSpec::CompoundSymmetry,
                PriorSpec::vague_normal(),
            )
            .unwrap();
            let (si, ti) = m.dataset().arm_indices(a);
            let p1 = AbParams {
                mu: vec![p.mu[m.idx_mu(0, ti)], p.mu[m.idx_mu(1, ti)]],
                theta: vec![],
                eta: vec![p.eta[2 * si], p.eta[2 * si + 1]],
                delta: vec![p.delta[2 * a], p.delta[2 * a + 1]],
                sigma: p.sigma,
                rho: p.rho,
                tau: vec![1.0, 1.0],
            };
            sum += m1.log_likelihood(&p1).unwrap();
        }
        assert_relative_eq!(total, sum, epsilon = 1e-10);
    }

    #[test]
    fn likelihood_invariant_under_relabeling() {
        let m = default_model(CovarianceSpec::Unstructured);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = random_unconstrained(&m, &mut rng);
        let p = m.to_constrained(&u).unwrap();
        let base = m.log_likelihood(&p).unwrap();

        // relabel tests 1,2,3 -> 30,10,20 and shuffle arm order
        let relabel = |t: u32| match t {
            1 => 30,
            2 => 10,
            _ => 20,
        };
        let mut arms2: Vec<StudyArm> = m.dataset().arms().to_vec();
        for a in &mut arms2 {
            a.test_id = relabel(a.test_id);
        }
        arms2.reverse();
        let ds2 = NetworkDataset::new(arms2).unwrap();
        let m2 = AbModel::new(ds2, CovarianceSpec::Unstructured, PriorSpec::vague_normal())
            .unwrap();

        // permute parameters to match: new dense index of old test k
        let mut p2 = p.clone();
        for j in 0..2 {
            for (k_old, &lab_old) in m.dataset().test_labels().iter().enumerate() {
                let k_new = m2.dataset().test_index(relabel(lab_old)).unwrap();
                p2.mu[m2.idx_mu(j, k_new)] = p.mu[m.idx_mu(j, k_old)];
                p2.tau[j * 3 + k_new] = p.tau[j * 3 + k_old];
            }
        }
        // studies: map old dense index to new dense index by id
        for (i_old, id) in m.dataset().study_ids().iter().enumerate() {
            let i_new = m2
                .dataset()
                .study_ids()
                .iter()
                .position(|s| s == id)
                .unwrap();
            p2.eta[2 * i_new] = p.eta[2 * i_old];
            p2.eta[2 * i_new + 1] = p.eta[2 * i_old + 1];
        }
        // arms: match (study, test) pairs
        for (a_old, sa) in m.dataset().arms().iter().enumerate() {
            let a_new = m2
                .dataset()
                .arms()
                .iter()
                .position(|b| b.study_id == sa.study_id && b.test_id == relabel(sa.test_id))
                .unwrap();
            p2.delta[2 * a_new] = p.delta[2 * a_old];
            p2.delta[2 * a_new + 1] = p.delta[2 * a_old + 1];
        }
        assert_relative_eq!(m2.log_likelihood(&p2).unwrap(), base, epsilon = 1e-10);
    }

    #[test]
    fn prior_terms_at_reference_point() {
        let ds = NetworkDataset::new(vec![arm("s1", 1, 5, 10, 5, 10)]).unwrap();
        let m = AbModel::new(ds, CovarianceSpec::CompoundSymmetry, PriorSpec::vague_normal())
            .unwrap();
        let p = AbParams {
            mu: vec![0.0, 0.0],
            theta: vec![],
            eta: vec![0.0, 0.0],
            delta: vec![0.0, 0.0],
            sigma: [1.0, 1.0],
            rho: 0.0,
            tau: vec![1.0, 1.0],
        };
        // eta: N2(0, I) at 0 = -ln(2pi); delta: two N(0,1) at 0;
        // mu: two N(0,25) at 0; sigma, tau: Uniform(0,5) each -ln 5;
        // rho: atanh-normal at 0.
        let expect = -LN_2PI
            + 2.0 * (-0.5 * LN_2PI)
            + 2.0 * normal_lpdf0(0.0, 5.0)
            + 4.0 * (-(5.0f64.ln()))
            + (normal_lpdf0(0.0, 5.0) - 0.0);
        assert_relative_eq!(m.log_prior(&p).unwrap(), expect, epsilon = 1e-12);
    }

    #[test]
    fn prior_rejects_tau_outside_uniform_support() {
        let m = default_model(CovarianceSpec::CompoundSymmetry);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u = random_unconstrained(&m, &mut rng);
        let mut p = m.to_constrained(&u).unwrap();
        p.tau[0] = 6.0;
        assert_eq!(m.log_prior(&p).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn transform_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for cov in [CovarianceSpec::CompoundSymmetry, CovarianceSpec::Unstructured] {
            let m = default_model(cov);
            for _ in 0..25 {
                let u = random_unconstrained(&m, &mut rng);
                let p = m.to_constrained(&u).unwrap();
                let back = m.to_unconstrained(&p).unwrap();
                for (a, b) in u.iter().zip(back.values.iter()) {
                    assert!((a - b).abs() < 1e-12, "{a} vs {b}");
                }
                assert_relative_eq!(
                    back.log_jacobian,
                    m.log_jacobian(&u).unwrap(),
                    epsilon = 1e-10
                );
            }
        }
    }

    /// The tape value must equal likelihood + prior + Jacobian assembled
    /// from the independent plain-arithmetic implementations.
    #[test]
    fn log_posterior_composes_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for cov in [CovarianceSpec::CompoundSymmetry, CovarianceSpec::Unstructured] {
            for priors in [
                PriorSpec::vague_normal(),
                PriorSpec::half_cauchy_uniform(),
                PriorSpec::lkj(2.0),
            ] {
                let m = AbModel::new(small_dataset(), cov, priors).unwrap();
                for _ in 0..20 {
                    let u = random_unconstrained(&m, &mut rng);
                    let p = m.to_constrained(&u).unwrap();
                    let direct = m.log_likelihood(&p).unwrap()
                        + m.log_prior(&p).unwrap()
                        + m.log_jacobian(&u).unwrap();
                    let graph = m.log_posterior(&u).unwrap();
                    assert!(
                        (graph - direct).abs() < 1e-10,
                        "cov={cov:?}: graph={graph} direct={direct}"
                    );
                }
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for cov in [CovarianceSpec::CompoundSymmetry, CovarianceSpec::Unstructured] {
            let m = default_model(cov);
            for _ in 0..10 {
                let u = random_unconstrained(&m, &mut rng);
                let (_, g) = m.log_posterior_and_grad(&u).unwrap();
                let fd = finite_difference_gradient(
                    &mut |x| m.log_posterior(x).unwrap(),
                    &u,
                    1e-5,
                );
                for i in 0..m.dim() {
                    assert!(
                        rel_err(g[i], fd[i]) < 1e-6,
                        "cov={cov:?} coord {i}: ad={} fd={}",
                        g[i],
                        fd[i]
                    );
                }
            }
        }
    }

    #[test]
    fn gradient_rejects_non_finite_input() {
        let m = default_model(CovarianceSpec::CompoundSymmetry);
        let mut u = vec![0.0; m.dim()];
        u[0] = f64::NAN;
        assert!(m.log_posterior_and_grad(&u).is_err());
        let err = m.log_posterior_and_grad(&[0.0]).unwrap_err();
        assert!(err.to_string().contains("coordinates"), "{err}");
    }

    /// Gradient ascent with Barzilai-Borwein steps must reach a stationary
    /// point: near-zero gradient at a local posterior maximum.
    #[test]
    fn gradient_ascent_reaches_stationary_point() {
        let ds = NetworkDataset::new(vec![
            arm("s1", 1, 12, 20, 15, 25),
            arm("s2", 1, 30, 40, 28, 35),
        ])
        .unwrap();
        let m = AbModel::new(ds, CovarianceSpec::CompoundSymmetry, PriorSpec::vague_normal())
            .unwrap();
        let mut x = vec![0.1; m.dim()];
        let (_, mut g) = m.log_posterior_and_grad(&x).unwrap();
        let mut step = 1e-3;
        let mut x_prev = x.clone();
        let mut g_prev = g.clone();
        for it in 0..20000 {
            for i in 0..x.len() {
                x[i] += step * g[i];
            }
            let (_, g_new) = m.log_posterior_and_grad(&x).unwrap();
            if it > 0 {
                let mut sy = 0.0;
                let mut yy = 0.0;
                for i in 0..x.len() {
                    let s = x[i] - x_prev[i];
                    let y = g_new[i] - g_prev[i];
                    sy += s * y;
                    yy += y * y;
                }
                if yy > 0.0 {
                    step = (sy / yy).abs().clamp(1e-6, 0.5);
                }
            }
            x_prev.copy_from_slice(&x);
            g_prev.copy_from_slice(&g_new);
            g = g_new;
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-8 {
                break;
            }
        }
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-6, "gradient norm {norm} after ascent");
    }

    /// With a single test per study and no test-within-study effects, the
    /// likelihood must equal an independently coded bivariate random-effects
    /// likelihood.
    #[test]
    fn reduces_to_bivariate_random_effects() {
        let ds = NetworkDataset::new(vec![
            arm("s1", 1, 12, 20, 15, 25),
            arm("s2", 1, 30, 40, 28, 35),
            arm("s3", 2, 9, 15, 10, 18),
        ])
        .unwrap();
        let m = AbModel::new(ds, CovarianceSpec::CompoundSymmetry, PriorSpec::vague_normal())
            .unwrap()
            .with_fixed_tau(0.0)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let u = random_unconstrained(&m, &mut rng);
        let p = m.to_constrained(&u).unwrap();
        assert!(p.delta.is_empty());

        // independent formulation: per arm, logit pi_j = mu_{j,k} + eta_{ij}
        let mut expect = 0.0;
        for (a, sa) in m.dataset().arms().iter().enumerate() {
            let (si, ti) = m.dataset().arm_indices(a);
            let l1 = p.mu[m.idx_mu(0, ti)] + p.eta[2 * si];
            let l2 = p.mu[m.idx_mu(1, ti)] + p.eta[2 * si + 1];
            let pi1 = 1.0 / (1.0 + (-l1).exp());
            let pi2 = 1.0 / (1.0 + (-l2).exp());
            expect += ln_choose(sa.n_diseased, sa.tp)
                + sa.tp as f64 * pi1.ln()
                + (sa.n_diseased - sa.tp) as f64 * (1.0 - pi1).ln();
            expect += ln_choose(sa.n_healthy, sa.tn)
                + sa.tn as f64 * pi2.ln()
                + (sa.n_healthy - sa.tn) as f64 * (1.0 - pi2).ln();
        }
        assert_relative_eq!(m.log_likelihood(&p).unwrap(), expect, epsilon = 1e-8);
    }

    #[test]
    fn fitted_probability_increases_with_mu() {
        let m = default_model(CovarianceSpec::CompoundSymmetry);
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let u = random_unconstrained(&m, &mut rng);
        let p = m.to_constrained(&u).unwrap();
        let mut p_up = p.clone();
        p_up.mu[m.idx_mu(0, 0)] += 0.5;
        for a in 0..m.dataset().n_arms() {
            let (_, ti) = m.dataset().arm_indices(a);
            if ti == 0 {
                assert!(
                    m.fitted_probability(&p_up, a, 0).unwrap()
                        > m.fitted_probability(&p, a, 0).unwrap()
                );
            }
        }
    }

    #[test]
    fn names_align_with_constrained_view() {
        for cov in [CovarianceSpec::CompoundSymmetry, CovarianceSpec::Unstructured] {
            let m = default_model(cov);
            let names = m.param_names_vec();
            assert_eq!(names.len(), m.dim());
            let distinct: std::collections::HashSet<&String> = names.iter().collect();
            assert_eq!(distinct.len(), names.len(), "duplicate names");
            let u = vec![0.25; m.dim()];
            let row = m.constrain_row(&u);
            assert_eq!(row.len(), names.len());
            // spot checks
            assert_eq!(names[0], "mu[1,1]");
            assert_eq!(row[0], 0.25);
            let i_rho = names.iter().position(|n| n == "rho").unwrap();
            assert_relative_eq!(row[i_rho], 0.25f64.tanh(), epsilon = 1e-12);
        }
    }

    #[test]
    fn fixed_tau_keeps_delta_when_positive() {
        let m = AbModel::new(
            small_dataset(),
            CovarianceSpec::CompoundSymmetry,
            PriorSpec::vague_normal(),
        )
        .unwrap()
        .with_fixed_tau(0.5)
        .unwrap();
        assert_eq!(m.n_tau(), 0);
        let u = vec![0.3; m.dim()];
        let p = m.to_constrained(&u).unwrap();
        assert_eq!(p.delta.len(), 2 * m.dataset().n_arms());
        assert_relative_eq!(p.delta[0], 0.5 * 0.3, epsilon = 1e-12);
        // still differentiable
        let (_, g) = m.log_posterior_and_grad(&u).unwrap();
        let fd =
            finite_difference_gradient(&mut |x| m.log_posterior(x).unwrap(), &u, 1e-5);
        for i in 0..m.dim() {
            assert!(rel_err(g[i], fd[i]) < 1e-6);
        }
    }
}
