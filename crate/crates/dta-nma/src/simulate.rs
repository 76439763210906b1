//! Synthetic network generation and missingness imposition.
//!
//! [`simulate_network`] draws complete networks (every study tests every
//! candidate) from known hyperparameters so that recovery can be checked
//! against ground truth; [`impose_mar`] then deletes arms by mechanisms
//! that do not look at the outcomes, which is exactly the ignorable
//! missing-at-random setting the models assume.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{NetworkDataset, StudyArm};
use crate::error::{Error, Result};

/// Arm-level heterogeneity: one value per outcome shared by all tests, or
/// a full 2 x K grid (outcome-major).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum TauSpec {
    Shared([f64; 2]),
    PerTest(Vec<Vec<f64>>),
}

impl TauSpec {
    pub fn value(&self, j: usize, k: usize) -> f64 {
        match self {
            TauSpec::Shared(t) => t[j],
            TauSpec::PerTest(t) => t[j][k],
        }
    }
}

/// Subjects per arm and disease group: one fixed count or a uniform range.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum SubjectsSpec {
    Fixed(u64),
    Range { min: u64, max: u64 },
}

impl SubjectsSpec {
    fn draw(&self, rng: &mut ChaCha8Rng) -> u64 {
        match *self {
            SubjectsSpec::Fixed(n) => n,
            SubjectsSpec::Range { min, max } => rng.random_range(min..=max),
        }
    }
}

/// Study-level covariate generator.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum CovariateGen {
    #[default]
    None,
    /// `count` independent standard normal covariates per study.
    StandardNormal { count: usize },
}

impl CovariateGen {
    pub fn count(&self) -> usize {
        match self {
            CovariateGen::None => 0,
            CovariateGen::StandardNormal { count } => *count,
        }
    }
}

/// Ground truth for a simulated network.
///
/// `mu` is outcome-major (`mu[0]` sensitivity logits, `mu[1]` specificity
/// logits, one entry per test); `theta` is indexed `[covariate][outcome]
/// [test]`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TruthSpec {
    pub n_studies: usize,
    pub tests: Vec<u32>,
    pub mu: Vec<Vec<f64>>,
    #[serde(default)]
    pub theta: Vec<Vec<Vec<f64>>>,
    pub sigma: [f64; 2],
    pub rho: f64,
    pub tau: TauSpec,
    pub subjects: SubjectsSpec,
    #[serde(default)]
    pub covariates: CovariateGen,
    pub seed: u64,
}

impl TruthSpec {
    pub fn validate(&self) -> Result<()> {
        let k = self.tests.len();
        if self.n_studies == 0 || k == 0 {
            return Err(Error::Validation(
                "simulation needs at least one study and one test".into(),
            ));
        }
        let mut sorted = self.tests.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != k || self.tests.iter().any(|&t| t == 0) {
            return Err(Error::Validation(
                "test labels must be distinct and at least 1".into(),
            ));
        }
        if self.mu.len() != 2 || self.mu.iter().any(|row| row.len() != k) {
            return Err(Error::Validation(format!(
                "mu must be a 2 x {k} grid of logits"
            )));
        }
        if self.theta.len() != self.covariates.count()
            || self
                .theta
                .iter()
                .any(|c| c.len() != 2 || c.iter().any(|row| row.len() != k))
        {
            return Err(Error::Validation(format!(
                "theta must hold one 2 x {k} grid per covariate ({} expected)",
                self.covariates.count()
            )));
        }
        if self.sigma.iter().any(|&s| !(s >= 0.0) || !s.is_finite()) {
            return Err(Error::Validation("sigma must be non-negative".into()));
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(Error::Validation("rho must lie in [-1, 1]".into()));
        }
        for j in 0..2 {
            for kk in 0..k {
                let t = self.tau.value(j, kk);
                if !(t >= 0.0) || !t.is_finite() {
                    return Err(Error::Validation("tau must be non-negative".into()));
                }
            }
        }
        if let TauSpec::PerTest(grid) = &self.tau {
            if grid.len() != 2 || grid.iter().any(|row| row.len() != k) {
                return Err(Error::Validation(format!(
                    "per-test tau must be a 2 x {k} grid"
                )));
            }
        }
        match self.subjects {
            SubjectsSpec::Fixed(n) if n == 0 => {
                return Err(Error::Validation("subject count must be positive".into()))
            }
            SubjectsSpec::Range { min, max } if min == 0 || min > max => {
                return Err(Error::Validation(
                    "subject range needs 1 <= min <= max".into(),
                ))
            }
            _ => {}
        }
        Ok(())
    }
}

/// The latent quantities behind one simulated network, study-aligned with
/// the returned dataset.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LatentRecord {
    /// Per-study bivariate study effects `[eta_i1, eta_i2]`.
    pub eta: Vec<[f64; 2]>,
    /// Per study, per test, per outcome arm effects.
    pub delta: Vec<Vec<[f64; 2]>>,
    /// Per study, per test: (sensitivity, specificity) on the probability
    /// scale.
    pub pi: Vec<Vec<[f64; 2]>>,
    /// Study covariate values.
    pub covariates: Vec<Vec<f64>>,
}

/// Simulates a complete network from known truth. Returns the dataset and
/// the latent effects that generated it.
pub fn simulate_network(spec: &TruthSpec) -> Result<(NetworkDataset, LatentRecord)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k_tests = spec.tests.len();
    let p_cov = spec.covariates.count();
    let width = spec.n_studies.to_string().len();
    let l21 = spec.sigma[1] * spec.rho;
    let l22 = spec.sigma[1] * (1.0 - spec.rho * spec.rho).sqrt();

    let mut arms = Vec::with_capacity(spec.n_studies * k_tests);
    let mut latent = LatentRecord {
        eta: Vec::with_capacity(spec.n_studies),
        delta: Vec::with_capacity(spec.n_studies),
        pi: Vec::with_capacity(spec.n_studies),
        covariates: Vec::with_capacity(spec.n_studies),
    };
    for i in 0..spec.n_studies {
        let study_id = format!("s{:0width$}", i + 1);
        let x: Vec<f64> = (0..p_cov).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let eta = [spec.sigma[0] * z1, l21 * z1 + l22 * z2];
        let mut deltas = Vec::with_capacity(k_tests);
        let mut pis = Vec::with_capacity(k_tests);
        for (k, &label) in spec.tests.iter().enumerate() {
            let mut d = [0.0f64; 2];
            let mut pi = [0.0f64; 2];
            for j in 0..2 {
                let z: f64 = rng.sample(StandardNormal);
                d[j] = spec.tau.value(j, k) * z;
                let mut lin = spec.mu[j][k] + eta[j] + d[j];
                for p in 0..p_cov {
                    lin += spec.theta[p][j][k] * x[p];
                }
                pi[j] = crate::autodiff::expit(lin);
            }
            let n_diseased = spec.subjects.draw(&mut rng);
            let n_healthy = spec.subjects.draw(&mut rng);
            let tp = rng.sample(Binomial::new(n_diseased, pi[0]).unwrap());
            let tn = rng.sample(Binomial::new(n_healthy, pi[1]).unwrap());
            arms.push(StudyArm {
                study_id: study_id.clone(),
                test_id: label,
                tp,
                n_diseased,
                tn,
                n_healthy,
                covariates: x.clone(),
                stratum: None,
            });
            deltas.push(d);
            pis.push(pi);
        }
        latent.eta.push(eta);
        latent.delta.push(deltas);
        latent.pi.push(pis);
        latent.covariates.push(x);
    }
    let ds = NetworkDataset::new(arms)?;
    Ok((ds, latent))
}

/// Outcome-blind arm deletion mechanisms.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum MarSpec {
    /// Each arm of test `k` survives independently with `keep_prob[k]`.
    PerTest { keep_prob: Vec<f64> },
    /// Each study draws one observation pattern (1 = keep the arm for that
    /// test) with the given weights.
    Patterns {
        patterns: Vec<Vec<u8>>,
        weights: Vec<f64>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MarReport {
    pub kept_arms: usize,
    pub removed_arms: usize,
    /// Studies that lost every arm and were removed outright.
    pub dropped_studies: usize,
}

/// Deletes arms according to `spec`, independently of all outcomes. Studies
/// left with no arms are dropped and counted.
pub fn impose_mar(
    ds: &NetworkDataset,
    spec: &MarSpec,
    seed: u64,
) -> Result<(NetworkDataset, MarReport)> {
    let k_tests = ds.n_tests();
    match spec {
        MarSpec::PerTest { keep_prob } => {
            if keep_prob.len() != k_tests {
                return Err(Error::Validation(format!(
                    "keep_prob needs one entry per test ({k_tests})"
                )));
            }
            if keep_prob.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Validation(
                    "keep probabilities must lie in [0, 1]".into(),
                ));
            }
        }
        MarSpec::Patterns { patterns, weights } => {
            if patterns.is_empty() || patterns.len() != weights.len() {
                return Err(Error::Validation(
                    "patterns and weights must be non-empty and equal length".into(),
                ));
            }
            if patterns.iter().any(|p| p.len() != k_tests) {
                return Err(Error::Validation(format!(
                    "each pattern needs one flag per test ({k_tests})"
                )));
            }
            if weights.iter().any(|&w| !(w >= 0.0)) || weights.iter().sum::<f64>() <= 0.0 {
                return Err(Error::Validation(
                    "pattern weights must be non-negative and sum above zero".into(),
                ));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; ds.n_arms()];
    match spec {
        MarSpec::PerTest { keep_prob } => {
            for (a, flag) in keep.iter_mut().enumerate() {
                let (_, k) = ds.arm_indices(a);
                *flag = rng.random::<f64>() < keep_prob[k];
            }
        }
        MarSpec::Patterns { patterns, weights } => {
            let total: f64 = weights.iter().sum();
            let mut study_pattern = Vec::with_capacity(ds.n_studies());
            for _ in 0..ds.n_studies() {
                let mut u = rng.random::<f64>() * total;
                let mut chosen = patterns.len() - 1;
                for (idx, &w) in weights.iter().enumerate() {
                    if u < w {
                        chosen = idx;
                        break;
                    }
                    u -= w;
                }
                study_pattern.push(chosen);
            }
            for (a, flag) in keep.iter_mut().enumerate() {
                let (i, k) = ds.arm_indices(a);
                *flag = patterns[study_pattern[i]][k] == 1;
            }
        }
    }
    let kept_arms: Vec<StudyArm> = ds
        .arms()
        .iter()
        .zip(&keep)
        .filter(|(_, &f)| f)
        .map(|(arm, _)| arm.clone())
        .collect();
    let surviving: std::collections::HashSet<&str> =
        kept_arms.iter().map(|a| a.study_id.as_str()).collect();
    let dropped_studies = ds
        .study_ids()
        .iter()
        .filter(|id| !surviving.contains(id.as_str()))
        .count();
    let report = MarReport {
        kept_arms: kept_arms.len(),
        removed_arms: ds.n_arms() - kept_arms.len(),
        dropped_studies,
    };
    if kept_arms.is_empty() {
        return Err(Error::Validation(
            "missingness mechanism removed every arm".into(),
        ));
    }
    Ok((NetworkDataset::new(kept_arms)?, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_spec() -> TruthSpec {
        TruthSpec {
            n_studies: 4,
            tests: vec![1, 2],
            mu: vec![vec![1.2, 0.8], vec![0.9, 1.5]],
            theta: vec![],
            sigma: [0.0, 0.0],
            rho: 0.0,
            tau: TauSpec::Shared([0.0, 0.0]),
            subjects: SubjectsSpec::Fixed(100_000),
            covariates: CovariateGen::None,
            seed: 61,
        }
    }

    #[test]
    fn large_samples_concentrate_on_true_probabilities() {
        let spec = base_spec();
        let (ds, latent) = simulate_network(&spec).unwrap();
        assert_eq!(ds.n_studies(), 4);
        assert_eq!(ds.n_arms(), 8);
        for a in 0..ds.n_arms() {
            let (i, k) = ds.arm_indices(a);
            let arm = &ds.arms()[a];
            let sens = arm.tp as f64 / arm.n_diseased as f64;
            let spec_rate = arm.tn as f64 / arm.n_healthy as f64;
            assert!((sens - latent.pi[i][k][0]).abs() < 0.01);
            assert!((spec_rate - latent.pi[i][k][1]).abs() < 0.01);
            // no heterogeneity: pi equals expit(mu)
            assert!((latent.pi[i][k][0] - crate::autodiff::expit(spec.mu[0][k])).abs() < 1e-12);
        }
    }

    #[test]
    fn study_effects_carry_the_requested_correlation() {
        let spec = TruthSpec {
            n_studies: 2000,
            sigma: [1.0, 1.0],
            rho: -0.99,
            subjects: SubjectsSpec::Fixed(1),
            seed: 67,
            ..base_spec()
        };
        let (_, latent) = simulate_network(&spec).unwrap();
        let xs: Vec<f64> = latent.eta.iter().map(|e| e[0]).collect();
        let ys: Vec<f64> = latent.eta.iter().map(|e| e[1]).collect();
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let mut sxy = 0.0;
        let mut sxx = 0.0;
        let mut syy = 0.0;
        for (a, b) in xs.iter().zip(&ys) {
            sxy += (a - mx) * (b - my);
            sxx += (a - mx) * (a - mx);
            syy += (b - my) * (b - my);
        }
        let r = sxy / (sxx * syy).sqrt();
        assert!((r + 0.99).abs() < 0.05, "correlation {r}");
    }

    #[test]
    fn linear_predictor_wiring_is_exact() {
        let spec = TruthSpec {
            n_studies: 5,
            sigma: [0.7, 0.5],
            rho: 0.4,
            tau: TauSpec::PerTest(vec![vec![0.3, 0.2], vec![0.1, 0.4]]),
            theta: vec![vec![vec![0.5, -0.5], vec![0.2, 0.1]]],
            covariates: CovariateGen::StandardNormal { count: 1 },
            subjects: SubjectsSpec::Range { min: 20, max: 60 },
            seed: 71,
            ..base_spec()
        };
        let (ds, latent) = simulate_network(&spec).unwrap();
        assert_eq!(ds.n_covariates(), 1);
        for i in 0..5 {
            for k in 0..2 {
                for j in 0..2 {
                    let lin = spec.mu[j][k]
                        + spec.theta[0][j][k] * latent.covariates[i][0]
                        + latent.eta[i][j]
                        + latent.delta[i][k][j];
                    assert!(
                        (latent.pi[i][k][j] - crate::autodiff::expit(lin)).abs() < 1e-12
                    );
                }
            }
        }
        for arm in ds.arms() {
            assert!(arm.n_diseased >= 20 && arm.n_diseased <= 60);
            assert!(arm.n_healthy >= 20 && arm.n_healthy <= 60);
        }
    }

    #[test]
    fn same_seed_reproduces_everything() {
        let spec = TruthSpec {
            sigma: [0.5, 0.5],
            tau: TauSpec::Shared([0.2, 0.2]),
            subjects: SubjectsSpec::Range { min: 50, max: 150 },
            ..base_spec()
        };
        let (d1, l1) = simulate_network(&spec).unwrap();
        let (d2, l2) = simulate_network(&spec).unwrap();
        assert_eq!(d1.arms(), d2.arms());
        assert_eq!(l1, l2);
        let other = TruthSpec { seed: 62, ..spec };
        let (d3, _) = simulate_network(&other).unwrap();
        assert_ne!(d1.arms(), d3.arms());
    }

    #[test]
    fn truth_spec_round_trips_through_json() {
        let spec = TruthSpec {
            tau: TauSpec::PerTest(vec![vec![0.3, 0.2], vec![0.1, 0.4]]),
            subjects: SubjectsSpec::Range { min: 20, max: 60 },
            covariates: CovariateGen::StandardNormal { count: 2 },
            theta: vec![
                vec![vec![0.5, -0.5], vec![0.2, 0.1]],
                vec![vec![0.0, 0.3], vec![-0.2, 0.0]],
            ],
            ..base_spec()
        };
        let json = serde_json::to_string(&spec).unwrap();
        let back: TruthSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(spec, back);
        // shared tau and fixed subjects parse from plain scalars/arrays
        let compact: TruthSpec = serde_json::from_str(
            r#"{"n_studies":3,"tests":[1,2],"mu":[[1.0,0.5],[0.8,0.9]],
                "sigma":[0.5,0.5],"rho":0.0,"tau":[0.2,0.3],
                "subjects":75,"seed":9}"#,
        )
        .unwrap();
        assert_eq!(compact.tau, TauSpec::Shared([0.2, 0.3]));
        assert_eq!(compact.subjects, SubjectsSpec::Fixed(75));
        assert_eq!(compact.covariates, CovariateGen::None);
    }

    #[test]
    fn validation_rejects_inconsistent_specs() {
        let mut spec = base_spec();
        spec.mu = vec![vec![1.0], vec![0.5]];
        assert!(spec.validate().is_err());
        spec = base_spec();
        spec.rho = 1.5;
        assert!(spec.validate().is_err());
        spec = base_spec();
        spec.tests = vec![1, 1];
        assert!(spec.validate().is_err());
        spec = base_spec();
        spec.subjects = SubjectsSpec::Range { min: 50, max: 20 };
        assert!(spec.validate().is_err());
        spec = base_spec();
        spec.theta = vec![vec![vec![0.1, 0.2], vec![0.3, 0.4]]];
        assert!(spec.validate().is_err(), "theta without covariates");
    }

    #[test]
    fn deletion_is_blind_to_outcomes() {
        let spec = TruthSpec {
            n_studies: 2000,
            sigma: [0.8, 0.8],
            rho: -0.5,
            tau: TauSpec::Shared([0.4, 0.4]),
            subjects: SubjectsSpec::Fixed(50),
            seed: 73,
            ..base_spec()
        };
        let (ds, _) = simulate_network(&spec).unwrap();
        let (reduced, report) = impose_mar(
            &ds,
            &MarSpec::PerTest {
                keep_prob: vec![0.5, 0.5],
            },
            91,
        )
        .unwrap();
        assert_eq!(report.kept_arms + report.removed_arms, ds.n_arms());
        assert!(report.kept_arms > 0);
        assert_eq!(reduced.n_arms(), report.kept_arms);
        // point-biserial correlation between the keep indicator and the
        // observed sensitivity of the full-data arm
        let kept_set: std::collections::HashSet<(String, u32)> = reduced
            .arms()
            .iter()
            .map(|a| (a.study_id.clone(), a.test_id))
            .collect();
        let pairs: Vec<(f64, f64)> = ds
            .arms()
            .iter()
            .map(|a| {
                let kept = kept_set.contains(&(a.study_id.clone(), a.test_id)) as u8 as f64;
                (kept, a.tp as f64 / a.n_diseased as f64)
            })
            .collect();
        let n = pairs.len() as f64;
        let mk = pairs.iter().map(|p| p.0).sum::<f64>() / n;
        let ms = pairs.iter().map(|p| p.1).sum::<f64>() / n;
        let mut skx = 0.0;
        let mut skk = 0.0;
        let mut sss = 0.0;
        for (k, s) in &pairs {
            skx += (k - mk) * (s - ms);
            skk += (k - mk) * (k - mk);
            sss += (s - ms) * (s - ms);
        }
        let r = skx / (skk * sss).sqrt();
        assert!(r.abs() < 0.05, "deletion correlates with outcomes: r={r}");
    }

    #[test]
    fn pattern_deletion_and_study_dropping() {
        let spec = TruthSpec {
            n_studies: 40,
            subjects: SubjectsSpec::Fixed(30),
            seed: 79,
            ..base_spec()
        };
        let (ds, _) = simulate_network(&spec).unwrap();
        let (reduced, report) = impose_mar(
            &ds,
            &MarSpec::Patterns {
                patterns: vec![vec![1, 0], vec![0, 1]],
                weights: vec![0.5, 0.5],
            },
            83,
        )
        .unwrap();
        assert_eq!(report.dropped_studies, 0);
        assert_eq!(reduced.n_studies(), 40);
        for i in 0..reduced.n_studies() {
            let row = &reduced.missingness().r[i];
            assert_eq!(row.iter().map(|&v| v as usize).sum::<usize>(), 1);
        }

        // a pattern that deletes everything for half the studies
        let (reduced2, report2) = impose_mar(
            &ds,
            &MarSpec::Patterns {
                patterns: vec![vec![1, 1], vec![0, 0]],
                weights: vec![0.5, 0.5],
            },
            87,
        )
        .unwrap();
        assert!(report2.dropped_studies > 0);
        assert_eq!(
            reduced2.n_studies(),
            40 - report2.dropped_studies
        );
        assert!(impose_mar(
            &ds,
            &MarSpec::Patterns {
                patterns: vec![vec![0, 0]],
                weights: vec![1.0],
            },
            89,
        )
        .is_err());
    }

    #[test]
    fn mar_validation_errors() {
        let (ds, _) = simulate_network(&TruthSpec {
            subjects: SubjectsSpec::Fixed(10),
            ..base_spec()
        })
        .unwrap();
        assert!(impose_mar(&ds, &MarSpec::PerTest { keep_prob: vec![0.5] }, 1).is_err());
        assert!(impose_mar(
            &ds,
            &MarSpec::PerTest {
                keep_prob: vec![0.5, 1.5]
            },
            1
        )
        .is_err());
        assert!(impose_mar(
            &ds,
            &MarSpec::Patterns {
                patterns: vec![vec![1, 0]],
                weights: vec![0.0]
            },
            1
        )
        .is_err());
    }
}
