//! Command-line front end.
//!
//! Subcommands: `fit` (sample a posterior and write draws, diagnostics and
//! summaries), `simulate` (generate a synthetic network), `rank` (re-rank
//! tests from stored draws), `diagnose` (recompute convergence checks),
//! `plot` (render SVG figures) and `validate` (check a dataset and print
//! its network structure).
//!
//! Option precedence is flags, then the `--config` JSON file, then the
//! `DTA_NMA_SEED` environment variable (seed only), then built-in
//! defaults. All output files carry fixed names inside `--outdir` and no
//! timestamps, so a rerun with the same configuration and seed reproduces
//! them byte for byte.
//!
//! Exit codes: 0 success, 1 validation or data errors, 2 sampler
//! initialization failure, 64 command-line usage errors.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::arm_based::{AbModel, CovarianceSpec};
use crate::contrast_based::{restrict_to_baseline, CbModel};
use crate::dataset::{
    build_network, check_connected, parse_dataset, ConnectivityReport, NetworkDataset,
};
use crate::error::{Error, Result};
use crate::posterior::{
    diagnostic_odds_ratio, format_estimate, marginal_accuracy, relative_measures, summarize,
    superiority_index, variance_partition, MarginalDraws, MarginalOptions, SummaryStats,
};
use crate::priors::PriorSpec;
use crate::report::{
    forest_plot, network_plot, read_draws_csv, write_draws_csv, write_summary_csv, SummaryRow,
    SummarySet,
};
use crate::sampler::{diagnostics, run_chains, Draws, SamplerConfig};
use crate::simulate::{impose_mar, simulate_network, MarSpec, TruthSpec};

/// Runs the command line and returns the process exit code.
pub fn run_cli<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let ok = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return if ok { 0 } else { 64 };
        }
    };
    let res = match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Rank(a) => cmd_rank(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Plot(a) => cmd_plot(a),
        Command::Validate(a) => cmd_validate(a),
    };
    match res {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Usage(_) => 64,
                Error::Init(_) => 2,
                _ => 1,
            }
        }
    }
}

#[derive(Parser)]
#[command(
    name = "dta-nma",
    version,
    about = "Network meta-analysis of diagnostic test accuracy"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model and write draws, diagnostics, summaries and results
    Fit(FitArgs),
    /// Generate a synthetic network from a truth specification
    Simulate(SimulateArgs),
    /// Rank tests by DOR and superiority from stored draws
    Rank(RankArgs),
    /// Recompute convergence diagnostics from stored draws
    Diagnose(DiagnoseArgs),
    /// Render network and forest figures as SVG
    Plot(PlotArgs),
    /// Check a dataset file and print its network structure
    Validate(ValidateArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ModelKind {
    /// Arm-based: absolute accuracy per test with study random effects
    Ab,
    /// Contrast-based: within-study differences against a baseline test
    Cb,
}

impl ModelKind {
    fn as_str(self) -> &'static str {
        match self {
            ModelKind::Ab => "ab",
            ModelKind::Cb => "cb",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "ab" => Ok(ModelKind::Ab),
            "cb" => Ok(ModelKind::Cb),
            other => Err(Error::Usage(format!(
                "unknown model '{other}' (expected ab or cb)"
            ))),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum CovKind {
    /// One arm-effect variance per outcome, shared across tests
    Cs,
    /// One arm-effect variance per outcome and test
    Un,
}

impl CovKind {
    fn as_str(self) -> &'static str {
        match self {
            CovKind::Cs => "cs",
            CovKind::Un => "un",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "cs" => Ok(CovKind::Cs),
            "un" => Ok(CovKind::Un),
            other => Err(Error::Usage(format!(
                "unknown covariance '{other}' (expected cs or un)"
            ))),
        }
    }

    fn spec(self) -> CovarianceSpec {
        match self {
            CovKind::Cs => CovarianceSpec::CompoundSymmetry,
            CovKind::Un => CovarianceSpec::Unstructured,
        }
    }
}

#[derive(Args)]
struct FitArgs {
    /// Dataset CSV file
    #[arg(long)]
    data: PathBuf,
    /// JSON file supplying defaults for the other fit options
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model family
    #[arg(long, value_enum)]
    model: Option<ModelKind>,
    /// Arm-effect covariance structure (arm-based model only)
    #[arg(long, value_enum)]
    covariance: Option<CovKind>,
    /// Prior preset: vague, cauchy, lkj1 or lkj2
    #[arg(long)]
    priors: Option<String>,
    /// Baseline test label (required by the cb model)
    #[arg(long)]
    baseline: Option<u32>,
    /// Reference test for relative measures (default: first test label)
    #[arg(long)]
    reference: Option<u32>,
    /// Keep only rows with this stratum value
    #[arg(long)]
    stratum: Option<String>,
    /// Number of chains
    #[arg(long)]
    chains: Option<usize>,
    /// Warmup iterations per chain
    #[arg(long)]
    warmup: Option<usize>,
    /// Post-warmup iterations per chain
    #[arg(long)]
    samples: Option<usize>,
    /// Record every n-th post-warmup iteration
    #[arg(long)]
    thin: Option<usize>,
    /// Random seed
    #[arg(long)]
    seed: Option<u64>,
    /// Step-size adaptation target acceptance rate
    #[arg(long)]
    target_accept: Option<f64>,
    /// Maximum trajectory doublings per iteration
    #[arg(long)]
    max_depth: Option<usize>,
    /// Monte Carlo draws per posterior draw for marginal accuracy
    #[arg(long)]
    mc_samples: Option<usize>,
    /// Output directory (created if missing)
    #[arg(long, default_value = ".")]
    outdir: PathBuf,
}

/// Optional JSON config file mirroring the fit flags.
#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    model: Option<String>,
    covariance: Option<String>,
    priors: Option<String>,
    baseline: Option<u32>,
    reference: Option<u32>,
    stratum: Option<String>,
    chains: Option<usize>,
    warmup: Option<usize>,
    samples: Option<usize>,
    thin: Option<usize>,
    seed: Option<u64>,
    target_accept: Option<f64>,
    max_depth: Option<usize>,
    mc_samples: Option<usize>,
}

/// The fully resolved fit configuration, echoed into `results.json` so a
/// result file carries everything needed to reproduce it.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunConfig {
    pub data: String,
    pub model: String,
    pub covariance: String,
    pub priors: String,
    pub baseline: Option<u32>,
    pub reference: Option<u32>,
    pub stratum: Option<String>,
    pub chains: usize,
    pub warmup: usize,
    pub samples: usize,
    pub thin: usize,
    pub seed: u64,
    pub target_accept: f64,
    pub max_depth: usize,
    pub mc_samples: usize,
    pub outdir: String,
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var("DTA_NMA_SEED") {
        Ok(v) => v.trim().parse::<u64>().map(Some).map_err(|_| {
            Error::Usage(format!("DTA_NMA_SEED must be an unsigned integer, got '{v}'"))
        }),
        Err(_) => Ok(None),
    }
}

fn resolve_fit(a: &FitArgs) -> Result<RunConfig> {
    let file: FileConfig = match &a.config {
        Some(p) => serde_json::from_reader(BufReader::new(File::open(p)?))?,
        None => FileConfig::default(),
    };
    let model = match a.model {
        Some(m) => m,
        None => match file.model.as_deref() {
            Some(s) => ModelKind::parse(s)?,
            None => ModelKind::Ab,
        },
    };
    let covariance = match a.covariance {
        Some(c) => c,
        None => match file.covariance.as_deref() {
            Some(s) => CovKind::parse(s)?,
            None => CovKind::Cs,
        },
    };
    let priors = a
        .priors
        .clone()
        .or(file.priors)
        .unwrap_or_else(|| "vague".to_string());
    PriorSpec::preset(&priors)?;
    let baseline = a.baseline.or(file.baseline);
    if model == ModelKind::Cb && baseline.is_none() {
        return Err(Error::Usage(
            "the cb model requires --baseline <test label>".into(),
        ));
    }
    let d = SamplerConfig::default();
    Ok(RunConfig {
        data: a.data.to_string_lossy().into_owned(),
        model: model.as_str().to_string(),
        covariance: covariance.as_str().to_string(),
        priors,
        baseline,
        reference: a.reference.or(file.reference),
        stratum: a.stratum.clone().or(file.stratum),
        chains: a.chains.or(file.chains).unwrap_or(d.n_chains),
        warmup: a.warmup.or(file.warmup).unwrap_or(d.n_warmup),
        samples: a.samples.or(file.samples).unwrap_or(d.n_samples),
        thin: a.thin.or(file.thin).unwrap_or(d.thin),
        seed: a.seed.or(file.seed).or(env_seed()?).unwrap_or(d.seed),
        target_accept: a
            .target_accept
            .or(file.target_accept)
            .unwrap_or(d.target_accept),
        max_depth: a.max_depth.or(file.max_depth).unwrap_or(d.max_tree_depth),
        mc_samples: a.mc_samples.or(file.mc_samples).unwrap_or(1000),
        outdir: a.outdir.to_string_lossy().into_owned(),
    })
}

fn sampler_config(rc: &RunConfig) -> SamplerConfig {
    SamplerConfig {
        n_chains: rc.chains,
        n_warmup: rc.warmup,
        n_samples: rc.samples,
        thin: rc.thin,
        seed: rc.seed,
        target_accept: rc.target_accept,
        max_tree_depth: rc.max_depth,
        ..SamplerConfig::default()
    }
}

fn open_data(path: &Path, stratum: Option<&str>) -> Result<NetworkDataset> {
    parse_dataset(BufReader::new(File::open(path)?), stratum)
}

fn warn_if_disconnected(conn: &ConnectivityReport) {
    if !conn.connected {
        let parts: Vec<String> = conn
            .components
            .iter()
            .map(|c| {
                let labels: Vec<String> = c.iter().map(|l| l.to_string()).collect();
                format!("[{}]", labels.join(", "))
            })
            .collect();
        eprintln!(
            "warning: the test network is disconnected (components {}); \
             comparisons across components rest on the model alone, with no \
             direct or indirect evidence",
            parts.join(" ")
        );
    }
}

fn outcome_name(outcome: usize) -> &'static str {
    if outcome == 1 {
        "sens"
    } else {
        "spec"
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Per-draw column k of a `[draw][test]` matrix.
fn col(m: &[Vec<f64>], k: usize) -> Vec<f64> {
    m.iter().map(|r| r[k]).collect()
}

fn diagnostics_value(draws: &Draws) -> Result<serde_json::Value> {
    match diagnostics(draws) {
        Ok(d) => Ok(serde_json::to_value(&d)?),
        Err(e) => {
            eprintln!("warning: diagnostics unavailable: {e}");
            Ok(serde_json::json!({ "error": e.to_string() }))
        }
    }
}

fn print_fit_digest(draws: &Draws, diag: &serde_json::Value) {
    println!(
        "sampling finished: {} chains x {} recorded draws, {} divergent transition(s)",
        draws.n_chains(),
        draws.n_draws(),
        draws.divergence_count()
    );
    if let (Some(max_rhat), Some(min_n_eff), Some(ok)) = (
        diag["max_rhat"].as_f64(),
        diag["min_n_eff"].as_f64(),
        diag["all_rhat_ok"].as_bool(),
    ) {
        println!(
            "worst split R-hat {max_rhat:.3}, smallest n_eff {min_n_eff:.0}, all_rhat_ok {ok}"
        );
        if !ok {
            eprintln!(
                "warning: at least one parameter has split R-hat above 1.1; \
                 the chains have not mixed, treat these results as provisional"
            );
        }
    }
}

fn cmd_fit(args: &FitArgs) -> Result<()> {
    let rc = resolve_fit(args)?;
    let ds = open_data(&args.data, rc.stratum.as_deref())?;
    println!(
        "dataset: {} studies, {} tests, {} arms",
        ds.n_studies(),
        ds.n_tests(),
        ds.n_arms()
    );
    let conn = check_connected(&build_network(&ds));
    warn_if_disconnected(&conn);
    fs::create_dir_all(&args.outdir)?;
    match rc.model.as_str() {
        "ab" => fit_ab(&rc, ds, &conn, &args.outdir),
        _ => fit_cb(&rc, ds, &conn, &args.outdir),
    }
}

fn fit_ab(
    rc: &RunConfig,
    ds: NetworkDataset,
    conn: &ConnectivityReport,
    outdir: &Path,
) -> Result<()> {
    if rc.covariance == "un" && ds.n_tests() < 2 {
        return Err(Error::Validation(
            "per-test arm variances (un) need at least 2 tests; use cs".into(),
        ));
    }
    let labels = ds.test_labels().to_vec();
    let reference = rc.reference.unwrap_or(labels[0]);
    if !labels.contains(&reference) {
        return Err(Error::Validation(format!(
            "reference test {reference} is not in the dataset"
        )));
    }
    let cov = CovKind::parse(&rc.covariance)?.spec();
    let priors = PriorSpec::preset(&rc.priors)?;
    let model = AbModel::new(ds, cov, priors)?;
    let draws = run_chains(&model, &sampler_config(rc))?;

    write_draws_csv(&draws, BufWriter::new(File::create(outdir.join("draws.csv"))?))?;
    let diag = diagnostics_value(&draws)?;
    write_json(&outdir.join("diagnostics.json"), &diag)?;
    print_fit_digest(&draws, &diag);

    let opts = MarginalOptions {
        covariates: vec![0.0; model.dataset().n_covariates()],
        mc_samples: rc.mc_samples,
        ..MarginalOptions::default()
    };
    let marg = marginal_accuracy(&model, &draws, &opts)?;
    let (sens_sum, spec_sum) = marg.summaries()?;
    let rel = relative_measures(&marg, reference)?;
    let dor = diagnostic_odds_ratio(&marg);
    let sup = if labels.len() >= 2 {
        Some(superiority_index(&marg, 0.0)?)
    } else {
        None
    };
    let varpart = variance_partition(&model, &draws)?;

    let stratum = rc.stratum.clone().unwrap_or_else(|| "(all)".to_string());
    let mut rows = Vec::new();
    let mut dor_sum = Vec::with_capacity(labels.len());
    for (k, &label) in labels.iter().enumerate() {
        rows.push(SummaryRow::new(&stratum, label, "sensitivity", &sens_sum[k]));
        rows.push(SummaryRow::new(&stratum, label, "specificity", &spec_sum[k]));
        println!(
            "test {label}: sens {}, spec {}",
            format_estimate(&sens_sum[k]),
            format_estimate(&spec_sum[k])
        );
    }
    let mut rel_sum: [Vec<SummaryStats>; 4] = Default::default();
    for (k, &label) in labels.iter().enumerate() {
        let quads = [
            ("rr_sensitivity", &rel.rr_sens),
            ("rr_specificity", &rel.rr_spec),
            ("or_sensitivity", &rel.or_sens),
            ("or_specificity", &rel.or_spec),
        ];
        for (q, (measure, m)) in quads.into_iter().enumerate() {
            let s = summarize(&col(m, k))?;
            rel_sum[q].push(s);
            if label != reference {
                rows.push(SummaryRow::new(&stratum, label, measure, &s));
            }
        }
        let s = summarize(&col(&dor, k))?;
        dor_sum.push(s);
        rows.push(SummaryRow::new(&stratum, label, "dor", &s));
    }
    if let Some(sup) = &sup {
        for (k, &label) in labels.iter().enumerate() {
            rows.push(SummaryRow::new(&stratum, label, "superiority", &sup.summary[k]));
        }
    }
    for c in &varpart.sigma {
        let test = c.label.map_or(String::new(), |l| l.to_string());
        let measure = format!("sigma_{}", outcome_name(c.outcome));
        rows.push(SummaryRow::new(&stratum, test, &measure, &c.stats));
    }
    rows.push(SummaryRow::new(&stratum, "", "rho", &varpart.rho));
    for c in &varpart.tau {
        let test = c.label.map_or(String::new(), |l| l.to_string());
        let measure = format!("tau_{}", outcome_name(c.outcome));
        rows.push(SummaryRow::new(&stratum, test, &measure, &c.stats));
    }
    for c in &varpart.between_study_pct {
        let test = c.label.map_or(String::new(), |l| l.to_string());
        let measure = format!("between_study_pct_{}", outcome_name(c.outcome));
        rows.push(SummaryRow::new(&stratum, test, &measure, &c.stats));
    }
    for c in &varpart.icc {
        let test = match (c.label_a, c.label_b) {
            (Some(a), Some(b)) => format!("{a}-{b}"),
            _ => String::new(),
        };
        let measure = format!("icc_{}", outcome_name(c.outcome));
        rows.push(SummaryRow::new(&stratum, test, &measure, &c.stats));
    }
    write_summary_csv(&rows, BufWriter::new(File::create(outdir.join("summary.csv"))?))?;

    let results = serde_json::json!({
        "config": rc,
        "tests": labels,
        "reference": reference,
        "network": { "connected": conn.connected, "components": conn.components },
        "accuracy": { "sens": sens_sum, "spec": spec_sum },
        "relative": {
            "rr_sens": rel_sum[0], "rr_spec": rel_sum[1],
            "or_sens": rel_sum[2], "or_spec": rel_sum[3],
        },
        "dor": dor_sum,
        "superiority": sup.as_ref().map(|s| serde_json::json!({
            "summary": s.summary, "undefined_count": s.undefined_count,
        })),
        "variance": varpart,
        "diagnostics": diag,
    });
    write_json(&outdir.join("results.json"), &results)?;
    println!(
        "wrote draws.csv, diagnostics.json, summary.csv, results.json to {}",
        outdir.display()
    );
    Ok(())
}

fn fit_cb(
    rc: &RunConfig,
    ds: NetworkDataset,
    conn: &ConnectivityReport,
    outdir: &Path,
) -> Result<()> {
    let baseline = rc.baseline.expect("resolve_fit enforces this");
    let (ds, dropped) = restrict_to_baseline(&ds, baseline)?;
    if !dropped.is_empty() {
        eprintln!(
            "warning: dropped {} study(ies) not evaluating the baseline test \
             alongside a comparator: {}",
            dropped.len(),
            dropped.join(", ")
        );
        println!(
            "restricted dataset: {} studies, {} tests, {} arms",
            ds.n_studies(),
            ds.n_tests(),
            ds.n_arms()
        );
    }
    let labels = ds.test_labels().to_vec();
    let reference = rc.reference.unwrap_or(baseline);
    if !labels.contains(&reference) {
        return Err(Error::Validation(format!(
            "reference test {reference} is not in the restricted dataset"
        )));
    }
    let priors = PriorSpec::preset(&rc.priors)?;
    let model = CbModel::new(ds, baseline, priors)?;
    let draws = run_chains(&model, &sampler_config(rc))?;

    write_draws_csv(&draws, BufWriter::new(File::create(outdir.join("draws.csv"))?))?;
    let diag = diagnostics_value(&draws)?;
    write_json(&outdir.join("diagnostics.json"), &diag)?;
    print_fit_digest(&draws, &diag);

    // recovered accuracy per draw, then the same comparative measures as
    // the arm-based path, all conditional on random effects at zero
    let n_c = model.n_contrasts();
    let mut sens = Vec::with_capacity(draws.n_total());
    let mut spec = Vec::with_capacity(draws.n_total());
    for chain in &draws.constrained {
        for row in chain {
            for j in 0..2 {
                let nu: Vec<f64> = (0..n_c).map(|c| row[model.idx_nu(j, c)]).collect();
                let acc = model.recovered_accuracy(row[model.idx_m(j)], &nu)?;
                if j == 0 {
                    sens.push(acc);
                } else {
                    spec.push(acc);
                }
            }
        }
    }
    let marg = MarginalDraws {
        labels: labels.clone(),
        sens,
        spec,
    };
    let (sens_sum, spec_sum) = marg.summaries()?;
    let rel = relative_measures(&marg, reference)?;
    let dor = diagnostic_odds_ratio(&marg);
    let sup = if labels.len() >= 2 {
        Some(superiority_index(&marg, 0.0)?)
    } else {
        None
    };

    let stratum = rc.stratum.clone().unwrap_or_else(|| "(all)".to_string());
    let mut rows = Vec::new();
    for (k, &label) in labels.iter().enumerate() {
        rows.push(SummaryRow::new(&stratum, label, "sensitivity", &sens_sum[k]));
        rows.push(SummaryRow::new(&stratum, label, "specificity", &spec_sum[k]));
        println!(
            "test {label}: sens {}, spec {} (conditional)",
            format_estimate(&sens_sum[k]),
            format_estimate(&spec_sum[k])
        );
    }
    // the model's own contrasts: log odds ratios against the baseline
    let mut contrast_sum: [Vec<SummaryStats>; 2] = Default::default();
    let mut contrast_labels = Vec::with_capacity(n_c);
    for c in 0..n_c {
        contrast_labels.push(labels[model.contrast_test(c)]);
        for j in 0..2 {
            let vals = draws.pooled(model.idx_nu(j, c));
            let s = summarize(&vals)?;
            contrast_sum[j].push(s);
            let measure = format!("contrast_{}", outcome_name(j + 1));
            rows.push(SummaryRow::new(&stratum, labels[model.contrast_test(c)], &measure, &s));
        }
    }
    let mut dor_sum = Vec::with_capacity(labels.len());
    for (k, &label) in labels.iter().enumerate() {
        let quads = [
            ("rr_sensitivity", &rel.rr_sens),
            ("rr_specificity", &rel.rr_spec),
            ("or_sensitivity", &rel.or_sens),
            ("or_specificity", &rel.or_spec),
        ];
        for (measure, m) in quads {
            if label != reference {
                rows.push(SummaryRow::new(&stratum, label, measure, &summarize(&col(m, k))?));
            }
        }
        let s = summarize(&col(&dor, k))?;
        dor_sum.push(s);
        rows.push(SummaryRow::new(&stratum, label, "dor", &s));
    }
    if let Some(sup) = &sup {
        for (k, &label) in labels.iter().enumerate() {
            rows.push(SummaryRow::new(&stratum, label, "superiority", &sup.summary[k]));
        }
    }
    // variance components: study-effect SD and contrast SDs
    let mut study_sd_sum = Vec::with_capacity(2);
    for j in 0..2 {
        let s = summarize(&draws.pooled(model.idx_s(j)))?;
        study_sd_sum.push(s);
        let measure = format!("study_sd_{}", outcome_name(j + 1));
        rows.push(SummaryRow::new(&stratum, "", &measure, &s));
    }
    let mut contrast_sd_sum: [Vec<SummaryStats>; 2] = Default::default();
    for c in 0..n_c {
        for j in 0..2 {
            let s = summarize(&draws.pooled(model.idx_contrast_sd(j, c)))?;
            contrast_sd_sum[j].push(s);
            let measure = format!("contrast_sd_{}", outcome_name(j + 1));
            rows.push(SummaryRow::new(&stratum, labels[model.contrast_test(c)], &measure, &s));
        }
    }
    write_summary_csv(&rows, BufWriter::new(File::create(outdir.join("summary.csv"))?))?;

    let results = serde_json::json!({
        "config": rc,
        "tests": labels,
        "baseline": baseline,
        "reference": reference,
        "dropped_studies": dropped,
        "network": { "connected": conn.connected, "components": conn.components },
        "accuracy": { "sens": sens_sum, "spec": spec_sum },
        "contrasts": {
            "tests": contrast_labels,
            "sens": contrast_sum[0], "spec": contrast_sum[1],
        },
        "dor": dor_sum,
        "superiority": sup.as_ref().map(|s| serde_json::json!({
            "summary": s.summary, "undefined_count": s.undefined_count,
        })),
        "variance": {
            "study_sd": study_sd_sum,
            "contrast_sd": { "tests": contrast_labels, "sens": contrast_sd_sum[0], "spec": contrast_sd_sum[1] },
        },
        "diagnostics": diag,
    });
    write_json(&outdir.join("results.json"), &results)?;
    println!(
        "wrote draws.csv, diagnostics.json, summary.csv, results.json to {}",
        outdir.display()
    );
    Ok(())
}

#[derive(Args)]
struct SimulateArgs {
    /// Truth specification JSON
    #[arg(long)]
    truth: PathBuf,
    /// Override the seed from the truth file
    #[arg(long)]
    seed: Option<u64>,
    /// Arm-deletion specification JSON, applied after simulation
    #[arg(long)]
    mar: Option<PathBuf>,
    /// Seed for the deletion step (default: simulation seed + 1)
    #[arg(long)]
    mar_seed: Option<u64>,
    /// Output directory (created if missing)
    #[arg(long, default_value = ".")]
    outdir: PathBuf,
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let mut spec: TruthSpec = serde_json::from_reader(BufReader::new(File::open(&a.truth)?))?;
    if let Some(s) = a.seed.or(env_seed()?) {
        spec.seed = s;
    }
    let (ds, _latents) = simulate_network(&spec)?;
    fs::create_dir_all(&a.outdir)?;
    let (ds, report) = match &a.mar {
        Some(p) => {
            let mspec: MarSpec = serde_json::from_reader(BufReader::new(File::open(p)?))?;
            let seed = a.mar_seed.unwrap_or_else(|| spec.seed.wrapping_add(1));
            let (reduced, report) = impose_mar(&ds, &mspec, seed)?;
            (reduced, Some(report))
        }
        None => (ds, None),
    };
    fs::write(a.outdir.join("data.csv"), ds.write_csv())?;
    if let Some(report) = &report {
        write_json(&a.outdir.join("mar.json"), &serde_json::to_value(report)?)?;
        println!(
            "deletion: kept {} arms, removed {}, dropped {} emptied study(ies)",
            report.kept_arms, report.removed_arms, report.dropped_studies
        );
    }
    println!(
        "wrote {} studies, {} tests, {} arms to {}",
        ds.n_studies(),
        ds.n_tests(),
        ds.n_arms(),
        a.outdir.join("data.csv").display()
    );
    Ok(())
}

#[derive(Args)]
struct RankArgs {
    /// Dataset CSV the fit was run on
    #[arg(long)]
    data: PathBuf,
    /// draws.csv written by a previous arm-based fit
    #[arg(long)]
    draws: PathBuf,
    /// Model family of the stored fit (only ab can be ranked)
    #[arg(long, value_enum)]
    model: Option<ModelKind>,
    /// Covariance structure used by the stored fit
    #[arg(long, value_enum)]
    covariance: Option<CovKind>,
    /// Prior preset used by the stored fit
    #[arg(long)]
    priors: Option<String>,
    /// Stratum the fit was restricted to
    #[arg(long)]
    stratum: Option<String>,
    /// Monte Carlo draws per posterior draw for marginal accuracy
    #[arg(long)]
    mc_samples: Option<usize>,
    /// Accuracy differences within this margin count as ties
    #[arg(long, default_value_t = 0.0)]
    tie_tol: f64,
    /// Output directory (created if missing)
    #[arg(long, default_value = ".")]
    outdir: PathBuf,
}

/// Ranks descending; returns 1-based ranks per index. Ranking keys off the
/// posterior median: superiority draws contain infinities whenever a test
/// strictly dominates, which drag every mean to infinity and erase the
/// ordering, while medians stay informative.
fn rank_descending(key: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..key.len()).collect();
    order.sort_by(|&a, &b| key[b].partial_cmp(&key[a]).unwrap_or(std::cmp::Ordering::Equal));
    let mut ranks = vec![0; key.len()];
    for (pos, &idx) in order.iter().enumerate() {
        ranks[idx] = pos + 1;
    }
    ranks
}

fn write_rank_csv(
    path: &Path,
    labels: &[u32],
    stats: &[SummaryStats],
    undefined: Option<&[usize]>,
) -> Result<()> {
    let medians: Vec<f64> = stats.iter().map(|s| s.median).collect();
    let ranks = rank_descending(&medians);
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let mut header = vec!["test", "mean", "median", "lower", "upper"];
    if undefined.is_some() {
        header.push("undefined_draws");
    }
    header.push("rank");
    w.write_record(&header)?;
    for (k, &label) in labels.iter().enumerate() {
        let mut rec = vec![
            label.to_string(),
            stats[k].mean.to_string(),
            stats[k].median.to_string(),
            stats[k].lower.to_string(),
            stats[k].upper.to_string(),
        ];
        if let Some(u) = undefined {
            rec.push(u[k].to_string());
        }
        rec.push(ranks[k].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_rank(a: &RankArgs) -> Result<()> {
    if a.model == Some(ModelKind::Cb) {
        return Err(Error::Validation(
            "ranking needs an arm-based fit; contrast-based draws do not \
             carry marginal accuracies"
                .into(),
        ));
    }
    let ds = open_data(&a.data, a.stratum.as_deref())?;
    if ds.n_tests() < 2 {
        return Err(Error::Validation("ranking needs at least two tests".into()));
    }
    let cov = a.covariance.unwrap_or(CovKind::Cs).spec();
    let priors = PriorSpec::preset(a.priors.as_deref().unwrap_or("vague"))?;
    let model = AbModel::new(ds, cov, priors)?;
    let table = read_draws_csv(BufReader::new(File::open(&a.draws)?))?;
    if table.param_names != model.param_names_vec() {
        return Err(Error::Validation(
            "the draws file does not match this dataset and model \
             configuration (parameter columns differ)"
                .into(),
        ));
    }
    let draws = table.into_draws()?;
    let opts = MarginalOptions {
        covariates: vec![0.0; model.dataset().n_covariates()],
        mc_samples: a.mc_samples.unwrap_or(1000),
        ..MarginalOptions::default()
    };
    let marg = marginal_accuracy(&model, &draws, &opts)?;
    let labels = marg.labels.clone();

    let dor = diagnostic_odds_ratio(&marg);
    let mut dor_sum = Vec::with_capacity(labels.len());
    for k in 0..labels.len() {
        dor_sum.push(summarize(&col(&dor, k))?);
    }
    fs::create_dir_all(&a.outdir)?;
    write_rank_csv(&a.outdir.join("rank_dor.csv"), &labels, &dor_sum, None)?;

    let sup = superiority_index(&marg, a.tie_tol)?;
    write_rank_csv(
        &a.outdir.join("rank_superiority.csv"),
        &labels,
        &sup.summary,
        Some(&sup.undefined_count),
    )?;

    let dor_ranks = rank_descending(&dor_sum.iter().map(|s| s.median).collect::<Vec<_>>());
    let sup_ranks = rank_descending(&sup.summary.iter().map(|s| s.median).collect::<Vec<_>>());
    println!("test  dor                     superiority");
    for (k, &label) in labels.iter().enumerate() {
        println!(
            "{label:<5} {:<23} {} (ranks {} and {})",
            format_estimate(&dor_sum[k]),
            format_estimate(&sup.summary[k]),
            dor_ranks[k],
            sup_ranks[k]
        );
    }
    println!(
        "wrote rank_dor.csv, rank_superiority.csv to {}",
        a.outdir.display()
    );
    Ok(())
}

#[derive(Args)]
struct DiagnoseArgs {
    /// draws.csv written by a previous fit
    #[arg(long)]
    draws: PathBuf,
    /// Output directory (created if missing)
    #[arg(long, default_value = ".")]
    outdir: PathBuf,
}

fn cmd_diagnose(a: &DiagnoseArgs) -> Result<()> {
    let table = read_draws_csv(BufReader::new(File::open(&a.draws)?))?;
    let draws = table.into_draws()?;
    let diag = diagnostics(&draws)?;
    fs::create_dir_all(&a.outdir)?;
    write_json(&a.outdir.join("diagnostics.json"), &serde_json::to_value(&diag)?)?;
    println!(
        "{} chains x {} draws, {} divergent ({:.2}%)",
        diag.n_chains,
        diag.n_draws_per_chain,
        diag.n_divergent,
        100.0 * diag.divergence_rate
    );
    println!(
        "worst split R-hat {:.4}, smallest n_eff {:.1}, all_rhat_ok {}",
        diag.max_rhat, diag.min_n_eff, diag.all_rhat_ok
    );
    let flagged: Vec<_> = diag.params.iter().filter(|p| p.rhat > 1.1).collect();
    if !flagged.is_empty() {
        println!("parameters with split R-hat above 1.1:");
        for p in flagged {
            println!(
                "  {}: rhat {:.3}, n_eff {:.1}, mean {:.4}, sd {:.4}",
                p.name, p.rhat, p.n_eff, p.mean, p.sd
            );
        }
    }
    println!("wrote diagnostics.json to {}", a.outdir.display());
    Ok(())
}

#[derive(Args)]
struct PlotArgs {
    /// Dataset CSV file
    #[arg(long)]
    data: PathBuf,
    /// results.json from a previous fit; enables the forest plot
    #[arg(long)]
    results: Option<PathBuf>,
    /// Keep only rows with this stratum value
    #[arg(long)]
    stratum: Option<String>,
    /// Figure title (default: the data file stem)
    #[arg(long)]
    title: Option<String>,
    /// Output directory (created if missing)
    #[arg(long, default_value = ".")]
    outdir: PathBuf,
}

fn cmd_plot(a: &PlotArgs) -> Result<()> {
    let ds = open_data(&a.data, a.stratum.as_deref())?;
    let title = a.title.clone().unwrap_or_else(|| {
        a.data
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".to_string())
    });
    fs::create_dir_all(&a.outdir)?;
    let graph = build_network(&ds);
    fs::write(a.outdir.join("network.svg"), network_plot(&graph, &title)?)?;
    let mut written = vec!["network.svg"];
    if let Some(path) = &a.results {
        let v: serde_json::Value = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        let tests: Vec<u32> = serde_json::from_value(v["tests"].clone())?;
        if tests != ds.test_labels() {
            return Err(Error::Validation(
                "the results file covers different tests than this dataset \
                 (check --stratum and --data)"
                    .into(),
            ));
        }
        let sens: Vec<SummaryStats> = serde_json::from_value(v["accuracy"]["sens"].clone())?;
        let spec: Vec<SummaryStats> = serde_json::from_value(v["accuracy"]["spec"].clone())?;
        let label = match v["config"]["model"].as_str() {
            Some("cb") => "cb (conditional)".to_string(),
            _ => "ab (marginal)".to_string(),
        };
        let set = SummarySet { label, sens, spec };
        fs::write(a.outdir.join("forest.svg"), forest_plot(&ds, &[set], &title)?)?;
        written.push("forest.svg");
    }
    println!("wrote {} to {}", written.join(", "), a.outdir.display());
    Ok(())
}

#[derive(Args)]
struct ValidateArgs {
    /// Dataset CSV file
    #[arg(long)]
    data: PathBuf,
    /// Keep only rows with this stratum value
    #[arg(long)]
    stratum: Option<String>,
}

fn cmd_validate(a: &ValidateArgs) -> Result<()> {
    let ds = open_data(&a.data, a.stratum.as_deref())?;
    let graph = build_network(&ds);
    let conn = check_connected(&graph);
    println!(
        "dataset: {} studies, {} tests, {} arms",
        ds.n_studies(),
        ds.n_tests(),
        ds.n_arms()
    );
    for (i, &label) in graph.labels.iter().enumerate() {
        println!("  test {label}: {} study(ies)", graph.node_weights[i]);
    }
    let k = graph.labels.len();
    let mut any_edge = false;
    for i in 0..k {
        for j in i + 1..k {
            let w = graph.edge(i, j);
            if w > 0 {
                if !any_edge {
                    println!("direct comparisons:");
                    any_edge = true;
                }
                println!(
                    "  {} vs {}: {} study(ies)",
                    graph.labels[i], graph.labels[j], w
                );
            }
        }
    }
    if !any_edge {
        println!("direct comparisons: none");
    }
    let miss = ds.missingness();
    let observed: usize = miss
        .r
        .iter()
        .map(|row| row.iter().map(|&v| v as usize).sum::<usize>())
        .sum();
    let cells = ds.n_studies() * ds.n_tests();
    println!(
        "observed arms: {observed} of {cells} study-test pairs ({:.1}%)",
        100.0 * observed as f64 / cells as f64
    );
    println!("connected: {}", conn.connected);
    warn_if_disconnected(&conn);
    Ok(())
}
