//! Posterior summaries: population-averaged accuracies, relative measures,
//! diagnostic odds ratios, superiority ranking, and variance decomposition.
//!
//! Everything here consumes recorded draws; nothing re-runs the sampler.
//! Population-averaged ("marginal") accuracies integrate the logit-normal
//! random effects out of the arm-based model by Monte Carlo, with a fixed
//! internal seed so summaries are reproducible draw for draw.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::arm_based::{AbModel, CovarianceSpec};
use crate::autodiff::expit;
use crate::error::{Error, Result};
use crate::sampler::Draws;

/// Type-7 quantile (linear interpolation of order statistics) on sorted
/// input.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n as f64 - 1.0) * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if sorted[lo] == sorted[hi] {
        return sorted[lo];
    }
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SummaryStats {
    pub mean: f64,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Mean, median and central 95% interval (2.5% and 97.5% quantiles).
/// Infinite values are legal and propagate through the order statistics;
/// NaN is rejected.
pub fn summarize(values: &[f64]) -> Result<SummaryStats> {
    if values.len() < 2 {
        return Err(Error::Domain(format!(
            "need at least 2 values to summarize, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Domain("cannot summarize NaN values".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(SummaryStats {
        mean: values.iter().sum::<f64>() / values.len() as f64,
        median: quantile_type7(&sorted, 0.5),
        lower: quantile_type7(&sorted, 0.025),
        upper: quantile_type7(&sorted, 0.975),
    })
}

/// Renders a summary as `median [lower, upper]` with two decimals, e.g.
/// `0.66 [0.41, 1.04]`.
pub fn format_estimate(s: &SummaryStats) -> String {
    format!("{:.2} [{:.2}, {:.2}]", s.median, s.lower, s.upper)
}

/// Monte Carlo estimate of `E[expit(mu + sd * Z)]`, `Z` standard normal.
///
/// Draws are used in antithetic pairs (z, -z): expit is monotone, so the
/// pair members are negatively correlated and the pair mean has far lower
/// variance than two independent draws. An odd sample count spends its
/// last draw unpaired.
pub fn logistic_normal_mean_mc(mu: f64, sd: f64, mc_samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = 0.0;
    for _ in 0..mc_samples / 2 {
        let z: f64 = rng.sample(StandardNormal);
        acc += expit(mu + sd * z) + expit(mu - sd * z);
    }
    if mc_samples % 2 == 1 {
        let z: f64 = rng.sample(StandardNormal);
        acc += expit(mu + sd * z);
    }
    acc / mc_samples as f64
}

/// Per-draw population-averaged sensitivity and specificity, indexed
/// `[draw][test]` with tests in `labels` order.
#[derive(Debug, Clone)]
pub struct MarginalDraws {
    pub labels: Vec<u32>,
    pub sens: Vec<Vec<f64>>,
    pub spec: Vec<Vec<f64>>,
}

impl MarginalDraws {
    pub fn n_draws(&self) -> usize {
        self.sens.len()
    }

    pub fn n_tests(&self) -> usize {
        self.labels.len()
    }

    /// Per-test summaries of sensitivity and specificity.
    pub fn summaries(&self) -> Result<(Vec<SummaryStats>, Vec<SummaryStats>)> {
        let mut s = Vec::with_capacity(self.n_tests());
        let mut c = Vec::with_capacity(self.n_tests());
        for k in 0..self.n_tests() {
            let col: Vec<f64> = self.sens.iter().map(|r| r[k]).collect();
            s.push(summarize(&col)?);
            let col: Vec<f64> = self.spec.iter().map(|r| r[k]).collect();
            c.push(summarize(&col)?);
        }
        Ok((s, c))
    }
}

#[derive(Debug, Clone)]
pub struct MarginalOptions {
    /// Covariate values at which to average; must match the dataset's
    /// covariate count.
    pub covariates: Vec<f64>,
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for MarginalOptions {
    fn default() -> Self {
        MarginalOptions {
            covariates: Vec::new(),
            mc_samples: 1000,
            seed: 7_404_921,
        }
    }
}

/// Averages each test's accuracy over the study and arm random effects.
///
/// For one posterior draw the estimate is the Monte Carlo mean of
/// `expit(mu_jk + x'theta_jk + sigma_j z1 + tau_jk z2)` over standard
/// normal pairs `(z1, z2)`. The same pairs are reused for every `(j, k)`
/// within a draw, which leaves each marginal estimate unchanged but makes
/// cross-test contrasts far less noisy.
pub fn marginal_accuracy(
    model: &AbModel,
    draws: &Draws,
    opts: &MarginalOptions,
) -> Result<MarginalDraws> {
    let ds = model.dataset();
    if opts.covariates.len() != ds.n_covariates() {
        return Err(Error::Domain(format!(
            "expected {} covariate values, got {}",
            ds.n_covariates(),
            opts.covariates.len()
        )));
    }
    if opts.mc_samples == 0 {
        return Err(Error::Domain("mc_samples must be positive".into()));
    }
    let k_tests = ds.n_tests();
    let p_cov = ds.n_covariates();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut sens = Vec::with_capacity(draws.n_total());
    let mut spec = Vec::with_capacity(draws.n_total());
    let mut z_pairs = vec![(0.0f64, 0.0f64); opts.mc_samples];
    for chain in &draws.constrained {
        for row in chain {
            for pair in z_pairs.iter_mut() {
                *pair = (rng.sample(StandardNormal), rng.sample(StandardNormal));
            }
            let mut row_sens = Vec::with_capacity(k_tests);
            let mut row_spec = Vec::with_capacity(k_tests);
            for j in 0..2 {
                let sigma = row[model.idx_sigma(j)];
                for k in 0..k_tests {
                    let mut loc = row[model.idx_mu(j, k)];
                    for p in 0..p_cov {
                        loc += opts.covariates[p] * row[model.idx_theta(p, j, k)];
                    }
                    let tau = model.tau_from_row(row, j, k);
                    let mean = z_pairs
                        .iter()
                        .map(|&(z1, z2)| expit(loc + sigma * z1 + tau * z2))
                        .sum::<f64>()
                        / opts.mc_samples as f64;
                    if j == 0 {
                        row_sens.push(mean);
                    } else {
                        row_spec.push(mean);
                    }
                }
            }
            sens.push(row_sens);
            spec.push(row_spec);
        }
    }
    Ok(MarginalDraws {
        labels: ds.test_labels().to_vec(),
        sens,
        spec,
    })
}

/// Per-draw comparative measures of every test against a reference test.
#[derive(Debug, Clone)]
pub struct RelativeDraws {
    pub labels: Vec<u32>,
    pub reference: u32,
    /// Ratios `sens_k / sens_ref`, indexed `[draw][test]`.
    pub rr_sens: Vec<Vec<f64>>,
    pub rr_spec: Vec<Vec<f64>>,
    /// Odds ratios `odds(sens_k) / odds(sens_ref)`.
    pub or_sens: Vec<Vec<f64>>,
    pub or_spec: Vec<Vec<f64>>,
}

pub fn relative_measures(m: &MarginalDraws, reference: u32) -> Result<RelativeDraws> {
    let r = m
        .labels
        .iter()
        .position(|&l| l == reference)
        .ok_or_else(|| {
            Error::Domain(format!("reference test {reference} not among the fitted tests"))
        })?;
    let odds = |p: f64| p / (1.0 - p);
    let k_tests = m.n_tests();
    let mut out = RelativeDraws {
        labels: m.labels.clone(),
        reference,
        rr_sens: Vec::with_capacity(m.n_draws()),
        rr_spec: Vec::with_capacity(m.n_draws()),
        or_sens: Vec::with_capacity(m.n_draws()),
        or_spec: Vec::with_capacity(m.n_draws()),
    };
    for d in 0..m.n_draws() {
        let mut rr_s = Vec::with_capacity(k_tests);
        let mut rr_c = Vec::with_capacity(k_tests);
        let mut or_s = Vec::with_capacity(k_tests);
        let mut or_c = Vec::with_capacity(k_tests);
        for k in 0..k_tests {
            rr_s.push(m.sens[d][k] / m.sens[d][r]);
            rr_c.push(m.spec[d][k] / m.spec[d][r]);
            or_s.push(odds(m.sens[d][k]) / odds(m.sens[d][r]));
            or_c.push(odds(m.spec[d][k]) / odds(m.spec[d][r]));
        }
        out.rr_sens.push(rr_s);
        out.rr_spec.push(rr_c);
        out.or_sens.push(or_s);
        out.or_spec.push(or_c);
    }
    Ok(out)
}

/// Diagnostic odds ratio `sens * spec / ((1 - sens)(1 - spec))` per draw
/// and test.
pub fn diagnostic_odds_ratio(m: &MarginalDraws) -> Vec<Vec<f64>> {
    m.sens
        .iter()
        .zip(&m.spec)
        .map(|(s_row, c_row)| {
            s_row
                .iter()
                .zip(c_row)
                .map(|(&s, &c)| s * c / ((1.0 - s) * (1.0 - c)))
                .collect()
        })
        .collect()
}

/// Superiority index draws and their summaries.
///
/// Draws where the index is undefined (test neither dominates, is
/// dominated, nor ties with anything) are excluded from the summary and
/// counted in `undefined_count`. A test that dominates at least once and is
/// never dominated or tied scores infinity in that draw; infinities take
/// part in the order statistics.
#[derive(Debug, Clone)]
pub struct SuperiorityIndex {
    pub labels: Vec<u32>,
    /// `[draw][test]`, NaN marking undefined draws.
    pub draws: Vec<Vec<f64>>,
    pub summary: Vec<SummaryStats>,
    pub undefined_count: Vec<usize>,
}

/// Ranks tests by joint dominance of sensitivity and specificity.
///
/// Within each draw, test `k` scores `(2a + c) / (2b + c)` where `a` counts
/// competitors it strictly beats on both axes (margins above `tie_tol`),
/// `b` counts competitors that strictly beat it on both axes, and `c`
/// counts competitors tied with it on both axes (within `tie_tol`). Mixed
/// outcomes (better on one axis, worse on the other) count toward none of
/// the three.
pub fn superiority_index(m: &MarginalDraws, tie_tol: f64) -> Result<SuperiorityIndex> {
    if !(tie_tol >= 0.0) {
        return Err(Error::Domain("tie tolerance must be non-negative".into()));
    }
    if m.n_tests() < 2 {
        return Err(Error::Domain(
            "superiority ranking needs at least two tests".into(),
        ));
    }
    let k_tests = m.n_tests();
    let mut draws = Vec::with_capacity(m.n_draws());
    let mut undefined = vec![0usize; k_tests];
    for d in 0..m.n_draws() {
        let mut row = Vec::with_capacity(k_tests);
        for k in 0..k_tests {
            let (mut a, mut b, mut c) = (0u64, 0u64, 0u64);
            for k2 in 0..k_tests {
                if k2 == k {
                    continue;
                }
                let ds = m.sens[d][k] - m.sens[d][k2];
                let dc = m.spec[d][k] - m.spec[d][k2];
                if ds > tie_tol && dc > tie_tol {
                    a += 1;
                } else if ds < -tie_tol && dc < -tie_tol {
                    b += 1;
                } else if ds.abs() <= tie_tol && dc.abs() <= tie_tol {
                    c += 1;
                }
            }
            let num = 2 * a + c;
            let den = 2 * b + c;
            let s = if den > 0 {
                num as f64 / den as f64
            } else if num > 0 {
                f64::INFINITY
            } else {
                undefined[k] += 1;
                f64::NAN
            };
            row.push(s);
        }
        draws.push(row);
    }
    let mut summary = Vec::with_capacity(k_tests);
    for k in 0..k_tests {
        let defined: Vec<f64> = draws
            .iter()
            .map(|r| r[k])
            .filter(|v| !v.is_nan())
            .collect();
        summary.push(summarize(&defined).map_err(|_| {
            Error::Domain(format!(
                "superiority index for test {} is undefined in almost all draws",
                m.labels[k]
            ))
        })?);
    }
    Ok(SuperiorityIndex {
        labels: m.labels.clone(),
        draws,
        summary,
        undefined_count: undefined,
    })
}

/// One variance-component summary, keyed by outcome (1 = sensitivity,
/// 2 = specificity) and, when test-specific, by test label.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ComponentSummary {
    pub outcome: usize,
    pub label: Option<u32>,
    pub stats: SummaryStats,
}

/// Correlation between two tests' accuracy logits within a study, induced
/// by the shared study effect.
#[derive(Debug, Clone, serde::Serialize)]
pub struct IccSummary {
    pub outcome: usize,
    pub label_a: Option<u32>,
    pub label_b: Option<u32>,
    pub stats: SummaryStats,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct VariancePartition {
    pub sigma: Vec<ComponentSummary>,
    pub rho: SummaryStats,
    pub tau: Vec<ComponentSummary>,
    /// Percent of between-study heterogeneity carried by the study effect:
    /// `100 sigma_j^2 / (sigma_j^2 + tau_jk^2)`.
    pub between_study_pct: Vec<ComponentSummary>,
    pub icc: Vec<IccSummary>,
}

/// Summaries of the variance components and derived shares.
///
/// Under compound symmetry the test-specific entries collapse to one per
/// outcome (`label: None`); unstructured covariance reports one entry per
/// test and intra-study correlations for every test pair.
pub fn variance_partition(model: &AbModel, draws: &Draws) -> Result<VariancePartition> {
    let labels = model.dataset().test_labels().to_vec();
    let k_tests = labels.len();
    let pooled = |idx: usize| -> Vec<f64> { draws.pooled(idx) };
    let mut sigma = Vec::with_capacity(2);
    let mut sigma_draws: Vec<Vec<f64>> = Vec::with_capacity(2);
    for j in 0..2 {
        let col = pooled(model.idx_sigma(j));
        sigma.push(ComponentSummary {
            outcome: j + 1,
            label: None,
            stats: summarize(&col)?,
        });
        sigma_draws.push(col);
    }
    let rho = summarize(&pooled(model.idx_rho()))?;

    // tau columns keyed the same way the model names them
    let tau_keys: Vec<(usize, Option<u32>)> = match model.covariance() {
        CovarianceSpec::CompoundSymmetry => (0..2).map(|j| (j, None)).collect(),
        CovarianceSpec::Unstructured => (0..2)
            .flat_map(|j| labels.iter().map(move |&l| (j, Some(l))))
            .collect(),
    };
    let mut tau = Vec::with_capacity(tau_keys.len());
    let mut pct = Vec::with_capacity(tau_keys.len());
    for &(j, label) in &tau_keys {
        let k = label
            .map(|l| labels.iter().position(|&x| x == l).unwrap())
            .unwrap_or(0);
        let tau_col: Vec<f64> = draws
            .constrained
            .iter()
            .flat_map(|chain| chain.iter().map(|row| model.tau_from_row(row, j, k)))
            .collect();
        tau.push(ComponentSummary {
            outcome: j + 1,
            label,
            stats: summarize(&tau_col)?,
        });
        let pct_col: Vec<f64> = tau_col
            .iter()
            .zip(&sigma_draws[j])
            .map(|(&t, &s)| 100.0 * s * s / (s * s + t * t))
            .collect();
        pct.push(ComponentSummary {
            outcome: j + 1,
            label,
            stats: summarize(&pct_col)?,
        });
    }

    // intra-study correlations between test pairs sharing the study effect
    let mut icc = Vec::new();
    match model.covariance() {
        CovarianceSpec::CompoundSymmetry => {
            for j in 0..2 {
                let col: Vec<f64> = draws
                    .constrained
                    .iter()
                    .flat_map(|chain| {
                        chain.iter().map(|row| {
                            let s = row[model.idx_sigma(j)];
                            let t = model.tau_from_row(row, j, 0);
                            s * s / (s * s + t * t)
                        })
                    })
                    .collect();
                icc.push(IccSummary {
                    outcome: j + 1,
                    label_a: None,
                    label_b: None,
                    stats: summarize(&col)?,
                });
            }
        }
        CovarianceSpec::Unstructured => {
            for j in 0..2 {
                for ka in 0..k_tests {
                    for kb in ka + 1..k_tests {
                        let col: Vec<f64> = draws
                            .constrained
                            .iter()
                            .flat_map(|chain| {
                                chain.iter().map(|row| {
                                    let s2 = row[model.idx_sigma(j)].powi(2);
                                    let ta = model.tau_from_row(row, j, ka);
                                    let tb = model.tau_from_row(row, j, kb);
                                    s2 / ((s2 + ta * ta) * (s2 + tb * tb)).sqrt()
                                })
                            })
                            .collect();
                        icc.push(IccSummary {
                            outcome: j + 1,
                            label_a: Some(labels[ka]),
                            label_b: Some(labels[kb]),
                            stats: summarize(&col)?,
                        });
                    }
                }
            }
        }
    }

    Ok(VariancePartition {
        sigma,
        rho,
        tau,
        between_study_pct: pct,
        icc,
    })
}
