//! Output rendering: forest and network plots as self-contained SVG, plus
//! the CSV and JSON writers used by the command line interface.
//!
//! Plots are assembled as plain strings with no external resources, fonts,
//! or scripts, so the files open identically everywhere. Elements carry
//! stable class names (`study-point`, `pooled-diamond`, `cri-line`, `node`,
//! `edge`) so that downstream checks can count them.

use std::io::Write as IoWrite;

use crate::dataset::{NetworkDataset, NetworkGraph};
use crate::error::{Error, Result};
use crate::posterior::SummaryStats;
use crate::sampler::Draws;

/// One named set of per-test summaries to overlay on a forest plot,
/// ordered like the dataset's test labels.
#[derive(Debug, Clone)]
pub struct SummarySet {
    pub label: String,
    pub sens: Vec<SummaryStats>,
    pub spec: Vec<SummaryStats>,
}

const SET_COLORS: [&str; 3] = ["#000000", "#c0392b", "#2c5aa0"];

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Forest plot of observed study accuracies and pooled summaries.
///
/// Two aligned panels (sensitivity, specificity) per test: each observing
/// study contributes a grey point at its raw proportion, and every summary
/// set adds a credible-interval line with a diamond at the median. Up to
/// three sets are overlaid in black, red and blue.
pub fn forest_plot(ds: &NetworkDataset, sets: &[SummarySet], title: &str) -> Result<String> {
    if sets.is_empty() || sets.len() > 3 {
        return Err(Error::Validation(format!(
            "forest plot takes 1 to 3 summary sets, got {}",
            sets.len()
        )));
    }
    let k_tests = ds.n_tests();
    for set in sets {
        if set.sens.len() != k_tests || set.spec.len() != k_tests {
            return Err(Error::Validation(format!(
                "summary set '{}' does not cover all {k_tests} tests",
                set.label
            )));
        }
    }
    let labels = ds.test_labels();
    let miss = ds.missingness();

    let left = 150.0;
    let panel_w = 300.0;
    let gap = 50.0;
    let row_h = 14.0;
    let block_gap = 26.0;
    let top = 60.0;
    let width = left + 2.0 * panel_w + gap + 20.0;
    let x_sens = left;
    let x_spec = left + panel_w + gap;

    // rows per test: its observing studies plus one per summary set
    let studies_of: Vec<Vec<usize>> = (0..k_tests)
        .map(|k| {
            (0..ds.n_studies())
                .filter(|&i| miss.r[i][k] == 1)
                .collect()
        })
        .collect();
    let total_rows: usize = studies_of
        .iter()
        .map(|s| s.len() + sets.len())
        .sum::<usize>();
    let height = top + total_rows as f64 * row_h + k_tests as f64 * block_gap + 60.0;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {width:.0} {height:.0}\" \
         font-family=\"sans-serif\" font-size=\"11\">\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"24\" font-size=\"15\" font-weight=\"bold\">{}</text>\n",
        left,
        xml_escape(title)
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"46\">Sensitivity</text>\n<text x=\"{:.1}\" y=\"46\">Specificity</text>\n",
        x_sens + panel_w / 2.0 - 28.0,
        x_spec + panel_w / 2.0 - 28.0
    ));
    // legend for multiple sets
    if sets.len() > 1 {
        let mut lx = left;
        for (s, set) in sets.iter().enumerate() {
            svg.push_str(&format!(
                "<rect x=\"{lx:.1}\" y=\"30\" width=\"10\" height=\"10\" fill=\"{}\"/>\
                 <text x=\"{:.1}\" y=\"39\">{}</text>\n",
                SET_COLORS[s],
                lx + 14.0,
                xml_escape(&set.label)
            ));
            lx += 20.0 + 7.0 * set.label.len() as f64 + 20.0;
        }
    }

    let mut y = top;
    for k in 0..k_tests {
        svg.push_str(&format!(
            "<text x=\"10\" y=\"{:.1}\" font-weight=\"bold\">Test {}</text>\n",
            y + 4.0,
            labels[k]
        ));
        y += 6.0;
        for &i in &studies_of[k] {
            y += row_h;
            let arm_pos = ds
                .arms()
                .iter()
                .position(|a| {
                    a.study_id == ds.study_ids()[i] && ds.test_index(a.test_id) == Some(k)
                })
                .expect("missingness says this arm exists");
            let arm = &ds.arms()[arm_pos];
            svg.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"#666666\" font-size=\"9\">{}</text>\n",
                18.0,
                y + 3.0,
                xml_escape(&arm.study_id)
            ));
            if arm.n_diseased > 0 {
                let p = arm.tp as f64 / arm.n_diseased as f64;
                svg.push_str(&format!(
                    "<circle class=\"study-point\" cx=\"{:.2}\" cy=\"{y:.1}\" r=\"2.6\" \
                     fill=\"#999999\"/>\n",
                    x_sens + p * panel_w
                ));
            }
            if arm.n_healthy > 0 {
                let p = arm.tn as f64 / arm.n_healthy as f64;
                svg.push_str(&format!(
                    "<circle class=\"study-point\" cx=\"{:.2}\" cy=\"{y:.1}\" r=\"2.6\" \
                     fill=\"#999999\"/>\n",
                    x_spec + p * panel_w
                ));
            }
        }
        for (s, set) in sets.iter().enumerate() {
            y += row_h;
            let color = SET_COLORS[s];
            for (x0, stats) in [(x_sens, &set.sens[k]), (x_spec, &set.spec[k])] {
                let clamp = |v: f64| v.clamp(0.0, 1.0);
                let xl = x0 + clamp(stats.lower) * panel_w;
                let xu = x0 + clamp(stats.upper) * panel_w;
                let xm = x0 + clamp(stats.median) * panel_w;
                svg.push_str(&format!(
                    "<line class=\"cri-line\" x1=\"{xl:.2}\" y1=\"{y:.1}\" x2=\"{xu:.2}\" \
                     y2=\"{y:.1}\" stroke=\"{color}\" stroke-width=\"1.4\"/>\n"
                ));
                svg.push_str(&format!(
                    "<polygon class=\"pooled-diamond\" points=\"{:.2},{:.1} {xm:.2},{:.1} \
                     {:.2},{:.1} {xm:.2},{:.1}\" fill=\"{color}\"/>\n",
                    xm - 5.0,
                    y,
                    y - 4.5,
                    xm + 5.0,
                    y,
                    y + 4.5
                ));
            }
            svg.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"{color}\" font-size=\"9\">{}</text>\n",
                18.0,
                y + 3.0,
                xml_escape(&set.label)
            ));
        }
        y += block_gap;
    }

    // axes
    let axis_y = y;
    for x0 in [x_sens, x_spec] {
        svg.push_str(&format!(
            "<line x1=\"{x0:.1}\" y1=\"{axis_y:.1}\" x2=\"{:.1}\" y2=\"{axis_y:.1}\" \
             stroke=\"#333333\"/>\n",
            x0 + panel_w
        ));
        for tick in 0..=4 {
            let frac = tick as f64 / 4.0;
            let x = x0 + frac * panel_w;
            svg.push_str(&format!(
                "<line x1=\"{x:.1}\" y1=\"{axis_y:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" \
                 stroke=\"#333333\"/>\n<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"9\">{:.2}</text>\n",
                axis_y + 4.0,
                x - 9.0,
                axis_y + 16.0,
                frac
            ));
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Network structure plot: tests on a circle, node area growing with the
/// number of studies evaluating the test, edge thickness with the number
/// of studies evaluating both endpoints. Pairs never studied together get
/// no edge.
pub fn network_plot(graph: &NetworkGraph, title: &str) -> Result<String> {
    let k = graph.labels.len();
    if k == 0 {
        return Err(Error::Validation("network plot needs at least one test".into()));
    }
    let size = 440.0;
    let c = size / 2.0;
    let ring = 150.0;
    let max_node = graph.node_weights.iter().copied().max().unwrap_or(0).max(1) as f64;
    let max_edge = graph
        .edge_weights
        .iter()
        .flat_map(|r| r.iter().copied())
        .max()
        .unwrap_or(0)
        .max(1) as f64;

    let pos: Vec<(f64, f64)> = (0..k)
        .map(|i| {
            let ang = std::f64::consts::TAU * i as f64 / k as f64 - std::f64::consts::FRAC_PI_2;
            (c + ring * ang.cos(), c + ring * ang.sin())
        })
        .collect();

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {size:.0} {size:.0}\" \
         font-family=\"sans-serif\" font-size=\"11\">\n"
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"24\" font-size=\"15\" font-weight=\"bold\">{}</text>\n",
        xml_escape(title)
    ));
    for a in 0..k {
        for b in a + 1..k {
            let w = graph.edge(a, b);
            if w == 0 {
                continue;
            }
            let stroke = 1.0 + 7.0 * w as f64 / max_edge;
            svg.push_str(&format!(
                "<line class=\"edge\" x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" \
                 stroke=\"#7f8c8d\" stroke-width=\"{stroke:.2}\"/>\n",
                pos[a].0, pos[a].1, pos[b].0, pos[b].1
            ));
        }
    }
    for i in 0..k {
        if graph.node_weights[i] == 0 {
            continue;
        }
        let r = 7.0 + 15.0 * (graph.node_weights[i] as f64 / max_node).sqrt();
        svg.push_str(&format!(
            "<circle class=\"node\" cx=\"{:.1}\" cy=\"{:.1}\" r=\"{r:.2}\" \
             fill=\"#2c5aa0\" stroke=\"#1b3a6b\"/>\n",
            pos[i].0, pos[i].1
        ));
        let (dx, dy) = (pos[i].0 - c, pos[i].1 - c);
        let lx = c + (ring + r + 26.0) * dx / ring;
        let ly = c + (ring + r + 26.0) * dy / ring;
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{} ({})</text>\n",
            lx,
            ly + 4.0,
            graph.labels[i],
            graph.node_weights[i]
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Writes recorded draws as CSV: `chain, iter, lp, divergent, tree_depth`
/// then one column per constrained parameter. `iter` is the 1-based
/// post-warmup iteration the draw was recorded at. Floats go through
/// Rust's shortest-round-trip formatting, so re-reading reproduces them
/// bit for bit.
pub fn write_draws_csv<W: IoWrite>(draws: &Draws, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "chain".to_string(),
        "iter".to_string(),
        "lp".to_string(),
        "divergent".to_string(),
        "tree_depth".to_string(),
    ];
    header.extend(draws.param_names.iter().cloned());
    w.write_record(&header)?;
    for chain in 0..draws.n_chains() {
        for d in 0..draws.n_draws() {
            let mut rec = vec![
                (chain + 1).to_string(),
                ((d + 1) * draws.thin).to_string(),
                draws.log_posterior[chain][d].to_string(),
                (draws.divergent[chain][d] as u8).to_string(),
                draws.tree_depth[chain][d].to_string(),
            ];
            rec.extend(draws.constrained[chain][d].iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Draws read back from a CSV written by [`write_draws_csv`].
#[derive(Debug, Clone)]
pub struct DrawsTable {
    pub param_names: Vec<String>,
    /// 1-based chain id per row.
    pub chain: Vec<usize>,
    pub lp: Vec<f64>,
    pub divergent: Vec<bool>,
    pub tree_depth: Vec<usize>,
    /// `[row][param]`, aligned with `param_names`.
    pub values: Vec<Vec<f64>>,
}

impl DrawsTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.param_names.iter().position(|n| n == name)?;
        Some(self.values.iter().map(|r| r[idx]).collect())
    }

    /// Splits one parameter back into per-chain series, in chain order.
    pub fn column_by_chain(&self, name: &str) -> Option<Vec<Vec<f64>>> {
        let idx = self.param_names.iter().position(|n| n == name)?;
        let max_chain = *self.chain.iter().max()?;
        let mut out = vec![Vec::new(); max_chain];
        for (row, &c) in self.values.iter().zip(&self.chain) {
            out[c - 1].push(row[idx]);
        }
        Some(out)
    }

    /// Rebuilds a [`Draws`] value so downstream summaries and diagnostics
    /// can run on re-read output. Only the constrained values, log
    /// posterior and divergence flags are recovered; the unconstrained
    /// coordinates and adaptation records are gone and left empty.
    pub fn into_draws(self) -> Result<Draws> {
        let n_chains = self.chain.iter().copied().max().unwrap_or(0);
        if n_chains == 0 || self.chain.iter().any(|&c| c == 0) {
            return Err(Error::Validation("chain ids must be 1-based".into()));
        }
        let mut constrained = vec![Vec::new(); n_chains];
        let mut log_posterior = vec![Vec::new(); n_chains];
        let mut divergent = vec![Vec::new(); n_chains];
        let mut tree_depth = vec![Vec::new(); n_chains];
        for (r, row) in self.values.into_iter().enumerate() {
            let c = self.chain[r] - 1;
            constrained[c].push(row);
            log_posterior[c].push(self.lp[r]);
            divergent[c].push(self.divergent[r]);
            tree_depth[c].push(self.tree_depth[r]);
        }
        let n = constrained[0].len();
        if constrained.iter().any(|c| c.len() != n) || n == 0 {
            return Err(Error::Validation(
                "chains must be non-empty and of equal length".into(),
            ));
        }
        Ok(Draws {
            param_names: self.param_names,
            unconstrained: constrained
                .iter()
                .map(|c| vec![Vec::new(); c.len()])
                .collect(),
            constrained,
            log_posterior,
            divergent,
            tree_depth,
            n_warmup: 0,
            thin: 1,
            seed: 0,
            step_sizes: Vec::new(),
            inv_mass: Vec::new(),
        })
    }
}

pub fn read_draws_csv<R: std::io::Read>(input: R) -> Result<DrawsTable> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    let fixed = ["chain", "iter", "lp", "divergent", "tree_depth"];
    if header.len() < fixed.len() || header.iter().take(5).ne(fixed) {
        return Err(Error::Validation(
            "draws CSV must start with columns chain, iter, lp, divergent, tree_depth".into(),
        ));
    }
    let param_names: Vec<String> = header.iter().skip(5).map(|s| s.to_string()).collect();
    let mut table = DrawsTable {
        param_names,
        chain: Vec::new(),
        lp: Vec::new(),
        divergent: Vec::new(),
        tree_depth: Vec::new(),
        values: Vec::new(),
    };
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| -> Result<&str> {
            rec.get(i).ok_or_else(|| Error::Parse {
                line,
                msg: "short record".into(),
            })
        };
        let parse_f = |i: usize| -> Result<f64> {
            field(i)?.parse::<f64>().map_err(|e| Error::Parse {
                line,
                msg: format!("bad float in column {i}: {e}"),
            })
        };
        let parse_u = |i: usize, what: &str| -> Result<usize> {
            field(i)?.parse::<usize>().map_err(|e| Error::Parse {
                line,
                msg: format!("bad {what}: {e}"),
            })
        };
        table.chain.push(parse_u(0, "chain id")?);
        table.lp.push(parse_f(2)?);
        table.divergent.push(parse_u(3, "divergence flag")? != 0);
        table.tree_depth.push(parse_u(4, "tree depth")?);
        let mut row = Vec::with_capacity(table.param_names.len());
        for i in 5..5 + table.param_names.len() {
            row.push(parse_f(i)?);
        }
        table.values.push(row);
    }
    if table.values.is_empty() {
        return Err(Error::Validation("draws CSV holds no draws".into()));
    }
    Ok(table)
}

/// One row of the summary table.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SummaryRow {
    pub stratum: String,
    pub test: String,
    pub measure: String,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

impl SummaryRow {
    pub fn new(
        stratum: &str,
        test: impl std::fmt::Display,
        measure: &str,
        stats: &SummaryStats,
    ) -> Self {
        SummaryRow {
            stratum: stratum.to_string(),
            test: test.to_string(),
            measure: measure.to_string(),
            mean: stats.mean,
            lower: stats.lower,
            upper: stats.upper,
        }
    }
}

/// Writes `stratum, test, measure, mean, lower, upper` rows.
pub fn write_summary_csv<W: IoWrite>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["stratum", "test", "measure", "mean", "lower", "upper"])?;
    for r in rows {
        w.write_record([
            r.stratum.as_str(),
            r.test.as_str(),
            r.measure.as_str(),
            &r.mean.to_string(),
            &r.lower.to_string(),
            &r.upper.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
