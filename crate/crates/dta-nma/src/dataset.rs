//! Study arms, validated networks, and network structure summaries.
//!
//! The central container is [`NetworkDataset`]: a flat list of
//! [`StudyArm`]s plus dense study/test index maps. One arm is one
//! (study, test) pair reporting a 2x2 table split into the diseased margin
//! (`tp` of `n_diseased`) and the healthy margin (`tn` of `n_healthy`).
//! Studies rarely evaluate every test, so the missingness pattern
//! ([`MissingnessMatrix`]) and the comparison graph ([`NetworkGraph`]) are
//! first-class outputs used by reporting and by connectivity checks.
//!
//! CSV layout (header required, `#` lines are comments):
//!
//! ```text
//! study_id,test_id,tp,n_diseased,tn,n_healthy[,stratum][,cov_1..cov_P]
//! ```
//!
//! Zero counts are legitimate data and are kept as-is; no continuity
//! correction is ever applied.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Read;

use crate::error::{Error, Result};

/// One (study, test) arm: both margins of the 2x2 table plus study-level
/// covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyArm {
    pub study_id: String,
    /// Original test label as given in the data; positive, not necessarily
    /// contiguous.
    pub test_id: u32,
    pub tp: u64,
    pub n_diseased: u64,
    pub tn: u64,
    pub n_healthy: u64,
    /// Study-level covariate values; same length for every arm of a dataset.
    pub covariates: Vec<f64>,
    pub stratum: Option<String>,
}

impl StudyArm {
    fn validate(&self) -> Result<()> {
        let who = format!("study '{}' test {}", self.study_id, self.test_id);
        if self.test_id == 0 {
            return Err(Error::Validation(format!("{who}: test_id must be >= 1")));
        }
        if self.tp > self.n_diseased {
            return Err(Error::Validation(format!(
                "{who}: tp exceeds n_diseased ({} > {})",
                self.tp, self.n_diseased
            )));
        }
        if self.tn > self.n_healthy {
            return Err(Error::Validation(format!(
                "{who}: tn exceeds n_healthy ({} > {})",
                self.tn, self.n_healthy
            )));
        }
        if self.n_diseased == 0 && self.n_healthy == 0 {
            return Err(Error::Validation(format!(
                "{who}: arm has no subjects on either margin"
            )));
        }
        Ok(())
    }
}

/// Validated network of studies. Construction enforces:
///
/// * every arm satisfies its count invariants,
/// * no (study, test) pair appears twice,
/// * covariate vectors have one shared length and are constant within study.
///
/// Studies are indexed densely in order of first appearance; tests are
/// indexed densely by ascending original label.
#[derive(Debug, Clone)]
pub struct NetworkDataset {
    arms: Vec<StudyArm>,
    /// Dense (study index, test index) per arm, aligned with `arms`.
    arm_index: Vec<(usize, usize)>,
    study_ids: Vec<String>,
    test_labels: Vec<u32>,
    n_covariates: usize,
}

impl NetworkDataset {
    /// Builds and validates a dataset from raw arms.
    pub fn new(arms: Vec<StudyArm>) -> Result<Self> {
        let n_covariates = arms.first().map_or(0, |a| a.covariates.len());
        let mut study_ids: Vec<String> = Vec::new();
        let mut study_map: HashMap<String, usize> = HashMap::new();
        let mut labels: Vec<u32> = Vec::new();
        let mut seen: HashSet<(usize, u32)> = HashSet::new();
        let mut study_covs: Vec<Vec<f64>> = Vec::new();

        for arm in &arms {
            arm.validate()?;
            if arm.covariates.len() != n_covariates {
                return Err(Error::Validation(format!(
                    "study '{}' test {}: expected {} covariates, found {}",
                    arm.study_id,
                    arm.test_id,
                    n_covariates,
                    arm.covariates.len()
                )));
            }
            let si = *study_map.entry(arm.study_id.clone()).or_insert_with(|| {
                study_ids.push(arm.study_id.clone());
                study_covs.push(arm.covariates.clone());
                study_ids.len() - 1
            });
            if study_covs[si] != arm.covariates {
                return Err(Error::Validation(format!(
                    "study '{}': covariates differ between arms; covariates are study-level",
                    arm.study_id
                )));
            }
            if !seen.insert((si, arm.test_id)) {
                return Err(Error::Validation(format!(
                    "duplicate arm: study '{}' test {}",
                    arm.study_id, arm.test_id
                )));
            }
            if !labels.contains(&arm.test_id) {
                labels.push(arm.test_id);
            }
        }
        labels.sort_unstable();

        let arm_index = arms
            .iter()
            .map(|a| {
                let si = study_map[&a.study_id];
                let ti = labels.binary_search(&a.test_id).unwrap();
                (si, ti)
            })
            .collect();

        Ok(NetworkDataset {
            arms,
            arm_index,
            study_ids,
            test_labels: labels,
            n_covariates,
        })
    }

    pub fn n_studies(&self) -> usize {
        self.study_ids.len()
    }

    pub fn n_tests(&self) -> usize {
        self.test_labels.len()
    }

    pub fn n_arms(&self) -> usize {
        self.arms.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }

    pub fn arms(&self) -> &[StudyArm] {
        &self.arms
    }

    /// Dense (study, test) indices for arm `a`.
    pub fn arm_indices(&self, a: usize) -> (usize, usize) {
        self.arm_index[a]
    }

    pub fn study_ids(&self) -> &[String] {
        &self.study_ids
    }

    /// Original test labels in dense-index order.
    pub fn test_labels(&self) -> &[u32] {
        &self.test_labels
    }

    pub fn test_index(&self, label: u32) -> Option<usize> {
        self.test_labels.binary_search(&label).ok()
    }

    /// Covariates of study `i` (study-level, so any arm's copy works).
    pub fn study_covariates(&self, i: usize) -> &[f64] {
        static EMPTY: &[f64] = &[];
        for (a, arm) in self.arms.iter().enumerate() {
            if self.arm_index[a].0 == i {
                return &arm.covariates;
            }
        }
        EMPTY
    }

    /// Indicator matrix r[i][k] = 1 iff study i observed test k.
    pub fn missingness(&self) -> MissingnessMatrix {
        let mut r = vec![vec![0u8; self.n_tests()]; self.n_studies()];
        for &(si, ti) in &self.arm_index {
            r[si][ti] = 1;
        }
        MissingnessMatrix { r }
    }

    /// Keeps the studies selected by `keep`, revalidating the result.
    pub fn filter_studies<F: Fn(&str) -> bool>(&self, keep: F) -> Result<NetworkDataset> {
        let arms = self
            .arms
            .iter()
            .filter(|a| keep(&a.study_id))
            .cloned()
            .collect();
        NetworkDataset::new(arms)
    }

    /// Serializes back to the CSV schema accepted by [`parse_dataset`].
    /// Optional columns are emitted only when present in the data.
    pub fn write_csv(&self) -> String {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        let has_stratum = self.arms.iter().any(|a| a.stratum.is_some());
        let mut header = vec![
            "study_id".to_string(),
            "test_id".to_string(),
            "tp".to_string(),
            "n_diseased".to_string(),
            "tn".to_string(),
            "n_healthy".to_string(),
        ];
        if has_stratum {
            header.push("stratum".to_string());
        }
        for p in 1..=self.n_covariates {
            header.push(format!("cov_{p}"));
        }
        wtr.write_record(&header).unwrap();
        for arm in &self.arms {
            let mut rec = vec![
                arm.study_id.clone(),
                arm.test_id.to_string(),
                arm.tp.to_string(),
                arm.n_diseased.to_string(),
                arm.tn.to_string(),
                arm.n_healthy.to_string(),
            ];
            if has_stratum {
                rec.push(arm.stratum.clone().unwrap_or_default());
            }
            for &c in &arm.covariates {
                rec.push(format!("{c}"));
            }
            wtr.write_record(&rec).unwrap();
        }
        String::from_utf8(wtr.into_inner().unwrap()).unwrap()
    }
}

/// Study-by-test observation indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct MissingnessMatrix {
    /// r[i][k] = 1 iff study i observed test k (dense indices).
    pub r: Vec<Vec<u8>>,
}

/// Undirected comparison graph over tests.
#[derive(Debug, Clone)]
pub struct NetworkGraph {
    /// Original test labels, dense order.
    pub labels: Vec<u32>,
    /// Number of studies observing each test.
    pub node_weights: Vec<usize>,
    /// Symmetric matrix of co-observation counts; diagonal unused (zero).
    pub edge_weights: Vec<Vec<usize>>,
}

impl NetworkGraph {
    pub fn edge(&self, a: usize, b: usize) -> usize {
        self.edge_weights[a][b]
    }
}

/// Counts nodes and edges of the comparison graph: an edge (k, k') is
/// weighted by the number of studies observing both tests. Pairs never
/// co-observed keep weight zero.
pub fn build_network(ds: &NetworkDataset) -> NetworkGraph {
    let k = ds.n_tests();
    let m = ds.missingness();
    let mut node_weights = vec![0usize; k];
    let mut edge_weights = vec![vec![0usize; k]; k];
    for row in &m.r {
        for a in 0..k {
            if row[a] == 1 {
                node_weights[a] += 1;
                for b in (a + 1)..k {
                    if row[b] == 1 {
                        edge_weights[a][b] += 1;
                        edge_weights[b][a] += 1;
                    }
                }
            }
        }
    }
    NetworkGraph {
        labels: ds.test_labels().to_vec(),
        node_weights,
        edge_weights,
    }
}

/// Connectivity of the comparison graph restricted to tests that appear in
/// at least one study.
#[derive(Debug, Clone)]
pub struct ConnectivityReport {
    pub connected: bool,
    /// Connected components as lists of original test labels.
    pub components: Vec<Vec<u32>>,
}

/// Union-find style component sweep over positive-weight edges. A network
/// with a single test is connected by definition.
pub fn check_connected(g: &NetworkGraph) -> ConnectivityReport {
    let k = g.labels.len();
    let active: Vec<usize> = (0..k).filter(|&i| g.node_weights[i] > 0).collect();
    let mut comp = vec![usize::MAX; k];
    let mut n_comp = 0;
    for &start in &active {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = n_comp;
        n_comp += 1;
        let mut stack = vec![start];
        comp[start] = id;
        while let Some(v) = stack.pop() {
            for &w in &active {
                if comp[w] == usize::MAX && g.edge_weights[v][w] > 0 {
                    comp[w] = id;
                    stack.push(w);
                }
            }
        }
    }
    let mut components = vec![Vec::new(); n_comp];
    for &i in &active {
        components[comp[i]].push(g.labels[i]);
    }
    ConnectivityReport {
        connected: n_comp <= 1,
        components,
    }
}

/// Column layout discovered from the CSV header.
struct Header {
    study_id: usize,
    test_id: usize,
    tp: usize,
    n_diseased: usize,
    tn: usize,
    n_healthy: usize,
    stratum: Option<usize>,
    /// Column index of cov_p for p = 1..=P, in order.
    covs: Vec<usize>,
}

fn parse_header(rec: &csv::StringRecord) -> Result<Header> {
    let mut map: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, name) in rec.iter().enumerate() {
        if map.insert(name.trim(), i).is_some() {
            return Err(Error::Parse {
                line: 1,
                msg: format!("duplicate column '{}'", name.trim()),
            });
        }
    }
    let need = |name: &str| -> Result<usize> {
        map.get(name).copied().ok_or_else(|| Error::Parse {
            line: 1,
            msg: format!("missing required column '{name}'"),
        })
    };
    let mut covs = Vec::new();
    for p in 1.. {
        match map.get(format!("cov_{p}").as_str()) {
            Some(&idx) => covs.push(idx),
            None => break,
        }
    }
    // Reject cov columns with gaps (cov_1, cov_3) since P would be ambiguous.
    let n_cov_cols = map.keys().filter(|k| k.starts_with("cov_")).count();
    if n_cov_cols != covs.len() {
        return Err(Error::Parse {
            line: 1,
            msg: "covariate columns must be named cov_1..cov_P without gaps".into(),
        });
    }
    Ok(Header {
        study_id: need("study_id")?,
        test_id: need("test_id")?,
        tp: need("tp")?,
        n_diseased: need("n_diseased")?,
        tn: need("tn")?,
        n_healthy: need("n_healthy")?,
        stratum: map.get("stratum").copied(),
        covs,
    })
}

fn field<'a>(rec: &'a csv::StringRecord, idx: usize, line: u64, what: &str) -> Result<&'a str> {
    rec.get(idx).map(str::trim).ok_or_else(|| Error::Parse {
        line,
        msg: format!("missing field '{what}'"),
    })
}

fn parse_num<T: std::str::FromStr>(s: &str, line: u64, what: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("field '{what}' is not a valid number: '{s}'"),
    })
}

/// Parses and validates a dataset from CSV. When `stratum_filter` is given,
/// only rows with that stratum value are kept; rows must then carry a
/// `stratum` column. Strata are analyzed independently, so a multi-stratum
/// file must be read once per stratum.
pub fn parse_dataset<R: Read>(reader: R, stratum_filter: Option<&str>) -> Result<NetworkDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(reader);

    let header = parse_header(rdr.headers().map_err(|e| Error::Parse {
        line: 1,
        msg: e.to_string(),
    })?)?;

    if stratum_filter.is_some() && header.stratum.is_none() {
        return Err(Error::Parse {
            line: 1,
            msg: "stratum filter given but file has no 'stratum' column".into(),
        });
    }

    let mut arms = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e
                .position()
                .map(csv::Position::line)
                .unwrap_or(0);
            Error::Parse {
                line,
                msg: e.to_string(),
            }
        })?;
        let line = rec.position().map(csv::Position::line).unwrap_or(0);
        let stratum = match header.stratum {
            Some(i) => {
                let v = field(&rec, i, line, "stratum")?;
                if v.is_empty() {
                    None
                } else {
                    Some(v.to_string())
                }
            }
            None => None,
        };
        if let Some(want) = stratum_filter {
            if stratum.as_deref() != Some(want) {
                continue;
            }
        }
        let mut covariates = Vec::with_capacity(header.covs.len());
        for (p, &ci) in header.covs.iter().enumerate() {
            let s = field(&rec, ci, line, &format!("cov_{}", p + 1))?;
            covariates.push(parse_num::<f64>(s, line, &format!("cov_{}", p + 1))?);
        }
        arms.push(StudyArm {
            study_id: field(&rec, header.study_id, line, "study_id")?.to_string(),
            test_id: parse_num(field(&rec, header.test_id, line, "test_id")?, line, "test_id")?,
            tp: parse_num(field(&rec, header.tp, line, "tp")?, line, "tp")?,
            n_diseased: parse_num(
                field(&rec, header.n_diseased, line, "n_diseased")?,
                line,
                "n_diseased",
            )?,
            tn: parse_num(field(&rec, header.tn, line, "tn")?, line, "tn")?,
            n_healthy: parse_num(
                field(&rec, header.n_healthy, line, "n_healthy")?,
                line,
                "n_healthy",
            )?,
            covariates,
            stratum,
        });
    }
    NetworkDataset::new(arms)
}

/// Distinct stratum values in file order; `None` entries mean rows without a
/// stratum value.
pub fn list_strata<R: Read>(reader: R) -> Result<Vec<String>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = parse_header(rdr.headers().map_err(|e| Error::Parse {
        line: 1,
        msg: e.to_string(),
    })?)?;
    let mut out: Vec<String> = Vec::new();
    if let Some(i) = header.stratum {
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Parse {
                line: 0,
                msg: e.to_string(),
            })?;
            if let Some(v) = rec.get(i) {
                let v = v.trim();
                if !v.is_empty() && !out.iter().any(|s| s == v) {
                    out.push(v.to_string());
                }
            }
        }
    }
    Ok(out)
}
