//! Contrast-based comparator model.
//!
//! Instead of giving every arm its own effect, this formulation models each
//! study's logit-scale accuracy as a study mean plus a combination of
//! within-study contrasts against a designated baseline test. With K tests
//! and contrasts `delta_ijk` (k ranging over the K-1 non-baseline tests):
//!
//! ```text
//! theta_ijk        = mu_ij + delta_ijk - S_ij / K      (non-baseline k)
//! theta_ij,base    = mu_ij            - S_ij / K
//! S_ij = sum over contrasts of delta_ijk
//! ```
//!
//! so that any two non-baseline tests differ by their contrast difference
//! and a non-baseline test differs from the baseline by its contrast.
//! Study means are exchangeable, `mu_ij ~ N(m_j, s_j^2)`, and contrasts are
//! independent across tests, `delta_ijk ~ N(nu_jk, sd_jk^2)`.
//!
//! Only studies that observe the baseline and at least one other test are
//! admissible; [`restrict_to_baseline`] subsets a network accordingly.
//! Contrasts for arms a study did not observe stay in the model as latent
//! parameters informed by their prior; they still enter observed arms
//! through the shared `S_ij / K` term.
//!
//! Summary accuracies per test are recovered from `(m, nu)` with the same
//! combination on the logit scale ([`CbModel::recovered_accuracy`]); they
//! are conditional (random-effects-zero) accuracies, not population
//! averages.

use statrs::function::gamma::ln_gamma;

use crate::autodiff::{expit, softplus, Tape, Var};
use crate::dataset::NetworkDataset;
use crate::error::{Error, Result};
use crate::priors::{normal_lpdf0, PriorSpec, UnconstrainedVector};
use crate::sampler::Target;

const LN_2PI: f64 = 1.8378770664093453;

/// Constrained parameters of the contrast-based model.
///
/// Layouts (K tests, I studies, C = K-1 contrasts):
/// * `nu_delta`, `contrast_sd`: 2C, outcome-major (`j * C + c`);
/// * `mu_study`: 2I, study-interleaved (`2i + j`);
/// * `delta`: 2IC, study-major (`i * 2C + j * C + c`).
#[derive(Debug, Clone, PartialEq)]
pub struct CbParams {
    pub m: [f64; 2],
    pub nu_delta: Vec<f64>,
    pub s: [f64; 2],
    pub contrast_sd: Vec<f64>,
    pub mu_study: Vec<f64>,
    pub delta: Vec<f64>,
}

/// Drops studies that do not observe the baseline test together with at
/// least one other test. Returns the reduced network and the dropped study
/// ids in original order.
pub fn restrict_to_baseline(
    ds: &NetworkDataset,
    baseline: u32,
) -> Result<(NetworkDataset, Vec<String>)> {
    let base_idx = ds.test_index(baseline).ok_or_else(|| {
        Error::Validation(format!("baseline test {baseline} not present in the data"))
    })?;
    let miss = ds.missingness();
    let keep: Vec<bool> = miss
        .r
        .iter()
        .map(|row| row[base_idx] == 1 && row.iter().map(|&v| v as usize).sum::<usize>() >= 2)
        .collect();
    let dropped: Vec<String> = ds
        .study_ids()
        .iter()
        .enumerate()
        .filter(|(i, _)| !keep[*i])
        .map(|(_, id)| id.clone())
        .collect();
    let id_keep: std::collections::HashSet<&str> = ds
        .study_ids()
        .iter()
        .enumerate()
        .filter(|(i, _)| keep[*i])
        .map(|(_, id)| id.as_str())
        .collect();
    let reduced = ds.filter_studies(|id| id_keep.contains(id))?;
    Ok((reduced, dropped))
}

#[derive(Debug, Clone)]
struct ArmData {
    study: usize,
    /// Contrast index for non-baseline tests, `None` for the baseline.
    contrast: Option<usize>,
    y: [f64; 2],
    n: [f64; 2],
}

fn ln_choose(n: u64, k: u64) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Contrast-based model bound to one dataset and baseline test.
#[derive(Debug, Clone)]
pub struct CbModel {
    ds: NetworkDataset,
    priors: PriorSpec,
    baseline: u32,
    base_idx: usize,
    /// Dense test index per contrast (ascending label order, baseline
    /// skipped).
    contrast_tests: Vec<usize>,
    arms: Vec<ArmData>,
    ln_choose_sum: f64,
    node_hint: usize,
}

impl CbModel {
    /// Validates the inclusion rule: every study must observe the baseline
    /// and at least two tests. Violations are listed by study id.
    pub fn new(ds: NetworkDataset, baseline: u32, priors: PriorSpec) -> Result<Self> {
        priors.validate()?;
        let base_idx = ds.test_index(baseline).ok_or_else(|| {
            Error::Validation(format!("baseline test {baseline} not present in the data"))
        })?;
        let miss = ds.missingness();
        let violators: Vec<&String> = ds
            .study_ids()
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                let row = &miss.r[*i];
                row[base_idx] == 0 || row.iter().map(|&v| v as usize).sum::<usize>() < 2
            })
            .map(|(_, id)| id)
            .collect();
        if !violators.is_empty() {
            let list = violators
                .iter()
                .map(|s| format!("'{s}'"))
                .collect::<Vec<_>>()
                .join(", ");
            return Err(Error::Validation(format!(
                "studies not observing the baseline test {baseline} plus at least one \
                 other test: {list}"
            )));
        }
        let contrast_tests: Vec<usize> =
            (0..ds.n_tests()).filter(|&k| k != base_idx).collect();
        let contrast_of: Vec<Option<usize>> = (0..ds.n_tests())
            .map(|k| contrast_tests.iter().position(|&c| c == k))
            .collect();
        let arms = ds
            .arms()
            .iter()
            .enumerate()
            .map(|(a, arm)| {
                let (study, test) = ds.arm_indices(a);
                ArmData {
                    study,
                    contrast: contrast_of[test],
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
        let mut m = CbModel {
            ds,
            priors,
            baseline,
            base_idx,
            contrast_tests,
            arms,
            ln_choose_sum,
            node_hint: 0,
        };
        m.node_hint = m.dim() + 10 * m.ds.n_studies() * (2 * m.n_contrasts() + 2)
            + 16 * m.ds.n_arms()
            + 64;
        Ok(m)
    }

    pub fn dataset(&self) -> &NetworkDataset {
        &self.ds
    }

    pub fn baseline(&self) -> u32 {
        self.baseline
    }

    fn k(&self) -> usize {
        self.ds.n_tests()
    }

    /// Number of contrasts per (study, outcome): K - 1.
    pub fn n_contrasts(&self) -> usize {
        self.k() - 1
    }

    // Unconstrained layout: m, nu_delta, s, contrast_sd, z_mu, z_delta.
    fn off_nu(&self) -> usize {
        2
    }
    fn off_s(&self) -> usize {
        self.off_nu() + 2 * self.n_contrasts()
    }
    fn off_csd(&self) -> usize {
        self.off_s() + 2
    }
    fn off_zmu(&self) -> usize {
        self.off_csd() + 2 * self.n_contrasts()
    }
    fn off_zdelta(&self) -> usize {
        self.off_zmu() + 2 * self.ds.n_studies()
    }

    pub fn dim(&self) -> usize {
        self.off_zdelta() + 2 * self.ds.n_studies() * self.n_contrasts()
    }

    pub fn idx_m(&self, j: usize) -> usize {
        j
    }
    pub fn idx_nu(&self, j: usize, c: usize) -> usize {
        self.off_nu() + j * self.n_contrasts() + c
    }
    pub fn idx_s(&self, j: usize) -> usize {
        self.off_s() + j
    }
    pub fn idx_contrast_sd(&self, j: usize, c: usize) -> usize {
        self.off_csd() + j * self.n_contrasts() + c
    }
    fn idx_mu_study(&self, i: usize, j: usize) -> usize {
        self.off_zmu() + 2 * i + j
    }
    fn idx_delta(&self, i: usize, j: usize, c: usize) -> usize {
        self.off_zdelta() + i * 2 * self.n_contrasts() + j * self.n_contrasts() + c
    }

    /// Dense test index handled by contrast `c`.
    pub fn contrast_test(&self, c: usize) -> usize {
        self.contrast_tests[c]
    }

    fn check_params(&self, p: &CbParams) -> Result<()> {
        let c = self.n_contrasts();
        let i = self.ds.n_studies();
        let ok = p.nu_delta.len() == 2 * c
            && p.contrast_sd.len() == 2 * c
            && p.mu_study.len() == 2 * i
            && p.delta.len() == 2 * i * c;
        if !ok {
            return Err(Error::Domain(
                "contrast-based parameter blocks have wrong lengths".into(),
            ));
        }
        Ok(())
    }

    /// Logit-scale accuracy of study `i`, outcome `j`, dense test `k`.
    pub fn theta(&self, p: &CbParams, i: usize, j: usize, k: usize) -> f64 {
        let c = self.n_contrasts();
        let sum: f64 = (0..c).map(|cc| p.delta[i * 2 * c + j * c + cc]).sum();
        let mut th = p.mu_study[2 * i + j] - sum / self.k() as f64;
        if let Some(cc) = self.contrast_tests.iter().position(|&t| t == k) {
            th += p.delta[i * 2 * c + j * c + cc];
        }
        th
    }

    /// Binomial log likelihood over observed arms, constants included.
    pub fn log_likelihood(&self, p: &CbParams) -> Result<f64> {
        self.check_params(p)?;
        let mut ll = self.ln_choose_sum;
        for arm in &self.arms {
            let k = match arm.contrast {
                Some(c) => self.contrast_tests[c],
                None => self.base_idx,
            };
            for j in 0..2 {
                let th = self.theta(p, arm.study, j, k);
                ll += arm.y[j] * th - arm.n[j] * softplus(th);
            }
        }
        Ok(ll)
    }

    /// Log prior on the constrained space.
    pub fn log_prior(&self, p: &CbParams) -> Result<f64> {
        self.check_params(p)?;
        if !(p.s[0] > 0.0 && p.s[1] > 0.0) || p.contrast_sd.iter().any(|&v| !(v > 0.0)) {
            return Ok(f64::NEG_INFINITY);
        }
        let c = self.n_contrasts();
        let mut lp = 0.0;
        for i in 0..self.ds.n_studies() {
            for j in 0..2 {
                lp += normal_lpdf0(p.mu_study[2 * i + j] - p.m[j], p.s[j]);
                for cc in 0..c {
                    lp += normal_lpdf0(
                        p.delta[i * 2 * c + j * c + cc] - p.nu_delta[j * c + cc],
                        p.contrast_sd[j * c + cc],
                    );
                }
            }
        }
        for j in 0..2 {
            lp += normal_lpdf0(p.m[j], self.priors.mean_sd);
            lp += self.priors.scale.log_density(p.s[j]);
        }
        for cc in 0..2 * c {
            lp += normal_lpdf0(p.nu_delta[cc], self.priors.mean_sd);
            lp += self.priors.scale.log_density(p.contrast_sd[cc]);
        }
        Ok(lp)
    }

    pub fn to_constrained(&self, u: &[f64]) -> Result<CbParams> {
        self.check_dim(u)?;
        let c = self.n_contrasts();
        let m = [u[0], u[1]];
        let nu_delta = u[self.off_nu()..self.off_nu() + 2 * c].to_vec();
        let s = [
            self.priors.scale.constrain(u[self.off_s()]),
            self.priors.scale.constrain(u[self.off_s() + 1]),
        ];
        let contrast_sd: Vec<f64> = (0..2 * c)
            .map(|t| self.priors.scale.constrain(u[self.off_csd() + t]))
            .collect();
        let mut mu_study = vec![0.0; 2 * self.ds.n_studies()];
        for i in 0..self.ds.n_studies() {
            for j in 0..2 {
                mu_study[2 * i + j] = m[j] + s[j] * u[self.idx_mu_study(i, j)];
            }
        }
        let mut delta = vec![0.0; 2 * self.ds.n_studies() * c];
        for i in 0..self.ds.n_studies() {
            for j in 0..2 {
                for cc in 0..c {
                    delta[i * 2 * c + j * c + cc] = nu_delta[j * c + cc]
                        + contrast_sd[j * c + cc] * u[self.idx_delta(i, j, cc)];
                }
            }
        }
        Ok(CbParams {
            m,
            nu_delta,
            s,
            contrast_sd,
            mu_study,
            delta,
        })
    }

    pub fn to_unconstrained(&self, p: &CbParams) -> Result<UnconstrainedVector> {
        self.check_params(p)?;
        let c = self.n_contrasts();
        let mut u = vec![0.0; self.dim()];
        u[0] = p.m[0];
        u[1] = p.m[1];
        u[self.off_nu()..self.off_nu() + 2 * c].copy_from_slice(&p.nu_delta);
        let mut log_jac = 0.0;
        for j in 0..2 {
            let us = self.priors.scale.unconstrain(p.s[j])?;
            u[self.off_s() + j] = us;
            log_jac += self.priors.scale.log_jacobian(us);
        }
        for t in 0..2 * c {
            let uc = self.priors.scale.unconstrain(p.contrast_sd[t])?;
            u[self.off_csd() + t] = uc;
            log_jac += self.priors.scale.log_jacobian(uc);
        }
        for i in 0..self.ds.n_studies() {
            for j in 0..2 {
                u[self.idx_mu_study(i, j)] = (p.mu_study[2 * i + j] - p.m[j]) / p.s[j];
                log_jac += p.s[j].ln();
                for cc in 0..c {
                    u[self.idx_delta(i, j, cc)] = (p.delta[i * 2 * c + j * c + cc]
                        - p.nu_delta[j * c + cc])
                        / p.contrast_sd[j * c + cc];
                    log_jac += p.contrast_sd[j * c + cc].ln();
                }
            }
        }
        Ok(UnconstrainedVector {
            values: u,
            log_jacobian: log_jac,
        })
    }

    /// Log-Jacobian of the constraining map at `u`.
    pub fn log_jacobian(&self, u: &[f64]) -> Result<f64> {
        self.check_dim(u)?;
        let c = self.n_contrasts();
        let i_n = self.ds.n_studies() as f64;
        let mut jac = 0.0;
        for j in 0..2 {
            jac += self.priors.scale.log_jacobian(u[self.off_s() + j]);
            jac += i_n * self.priors.scale.constrain(u[self.off_s() + j]).ln();
        }
        for t in 0..2 * c {
            jac += self.priors.scale.log_jacobian(u[self.off_csd() + t]);
            jac += i_n * self.priors.scale.constrain(u[self.off_csd() + t]).ln();
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

    fn build_graph(&self, u: &[f64]) -> (Tape, Var) {
        let c = self.n_contrasts();
        let kf = self.k() as f64;
        let sd = self.priors.mean_sd;
        let mut t = Tape::with_capacity(u, self.node_hint);
        let mut const_sum = self.ln_choose_sum;

        let m = [t.input(0), t.input(1)];
        let nu: Vec<Var> = (0..2 * c).map(|i| t.input(self.off_nu() + i)).collect();
        let mut acc = t.constant(0.0);
        let mut s_nodes = Vec::with_capacity(2);
        for j in 0..2 {
            let us = t.input(self.off_s() + j);
            let (s, term) = self.priors.scale.build_term(&mut t, us);
            s_nodes.push(s);
            acc = t.add(acc, term);
        }
        let mut csd_nodes = Vec::with_capacity(2 * c);
        for i in 0..2 * c {
            let uc = t.input(self.off_csd() + i);
            let (s, term) = self.priors.scale.build_term(&mut t, uc);
            csd_nodes.push(s);
            acc = t.add(acc, term);
        }
        // location hyperpriors
        for &v in m.iter().chain(nu.iter()) {
            let q = t.square(v);
            let prior = t.mul_const(q, -0.5 / (sd * sd));
            acc = t.add(acc, prior);
            const_sum += -0.5 * LN_2PI - sd.ln();
        }

        // per-study effects and standardized priors
        let n_studies = self.ds.n_studies();
        let mut mu_study = vec![[m[0]; 2]; n_studies];
        let mut delta = vec![t.constant(0.0); n_studies * 2 * c];
        let mut s_over_k = vec![[m[0]; 2]; n_studies];
        for i in 0..n_studies {
            for j in 0..2 {
                let z = t.input(self.idx_mu_study(i, j));
                let sz = t.mul(s_nodes[j], z);
                mu_study[i][j] = t.add(m[j], sz);
                let q = t.square(z);
                let prior = t.mul_const(q, -0.5);
                acc = t.add(acc, prior);
                const_sum += -0.5 * LN_2PI;

                let mut sum = t.constant(0.0);
                for cc in 0..c {
                    let zd = t.input(self.idx_delta(i, j, cc));
                    let scaled = t.mul(csd_nodes[j * c + cc], zd);
                    let d = t.add(nu[j * c + cc], scaled);
                    delta[i * 2 * c + j * c + cc] = d;
                    sum = t.add(sum, d);
                    let qd = t.square(zd);
                    let priord = t.mul_const(qd, -0.5);
                    acc = t.add(acc, priord);
                    const_sum += -0.5 * LN_2PI;
                }
                s_over_k[i][j] = t.mul_const(sum, 1.0 / kf);
            }
        }

        // binomial terms
        for arm in &self.arms {
            for j in 0..2 {
                if arm.n[j] == 0.0 {
                    continue;
                }
                let mut th = t.sub(mu_study[arm.study][j], s_over_k[arm.study][j]);
                if let Some(cc) = arm.contrast {
                    th = t.add(th, delta[arm.study * 2 * c + j * c + cc]);
                }
                let yl = t.mul_const(th, arm.y[j]);
                let sp = t.softplus(th);
                let nsp = t.mul_const(sp, arm.n[j]);
                let term = t.sub(yl, nsp);
                acc = t.add(acc, term);
            }
        }

        let out = t.add_const(acc, const_sum);
        (t, out)
    }

    pub fn log_posterior(&self, u: &[f64]) -> Result<f64> {
        self.check_finite(u)?;
        let (t, out) = self.build_graph(u);
        Ok(t.val(out))
    }

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

    /// Conditional (random-effects-zero) accuracy per test on the
    /// probability scale, from summary-level `m` and `nu` values. Output is
    /// in dense test order.
    pub fn recovered_accuracy(&self, m_j: f64, nu_row: &[f64]) -> Result<Vec<f64>> {
        let c = self.n_contrasts();
        if nu_row.len() != c {
            return Err(Error::Domain(format!(
                "expected {} contrast means, got {}",
                c,
                nu_row.len()
            )));
        }
        let sum: f64 = nu_row.iter().sum();
        let kf = self.k() as f64;
        Ok((0..self.k())
            .map(|k| {
                let mut th = m_j - sum / kf;
                if let Some(cc) = self.contrast_tests.iter().position(|&t| t == k) {
                    th += nu_row[cc];
                }
                expit(th)
            })
            .collect())
    }

    pub fn param_names_vec(&self) -> Vec<String> {
        let labels = self.ds.test_labels();
        let c = self.n_contrasts();
        let mut names = vec!["m[1]".to_string(), "m[2]".to_string()];
        for j in 0..2 {
            for cc in 0..c {
                names.push(format!(
                    "nu_delta[{},{}]",
                    j + 1,
                    labels[self.contrast_tests[cc]]
                ));
            }
        }
        names.push("s[1]".into());
        names.push("s[2]".into());
        for j in 0..2 {
            for cc in 0..c {
                names.push(format!(
                    "contrast_sd[{},{}]",
                    j + 1,
                    labels[self.contrast_tests[cc]]
                ));
            }
        }
        for i in 0..self.ds.n_studies() {
            for j in 0..2 {
                names.push(format!("mu_study[{},{}]", i + 1, j + 1));
            }
        }
        for i in 0..self.ds.n_studies() {
            for j in 0..2 {
                for cc in 0..c {
                    names.push(format!(
                        "delta[{},{},{}]",
                        i + 1,
                        j + 1,
                        labels[self.contrast_tests[cc]]
                    ));
                }
            }
        }
        names
    }

    pub fn constrain_row(&self, u: &[f64]) -> Vec<f64> {
        let p = self
            .to_constrained(u)
            .expect("constrain_row called with wrong dimension");
        let mut row = Vec::with_capacity(self.dim());
        row.extend_from_slice(&p.m);
        row.extend_from_slice(&p.nu_delta);
        row.extend_from_slice(&p.s);
        row.extend_from_slice(&p.contrast_sd);
        row.extend_from_slice(&p.mu_study);
        row.extend_from_slice(&p.delta);
        row
    }
}

impl Target for CbModel {
    fn dim(&self) -> usize {
        CbModel::dim(self)
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
