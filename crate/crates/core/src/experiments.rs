//! Seeded simulation studies: fixtures, data generation, replication and
//! summary metrics.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;
use crate::inference::{two_step_fit, Dataset, FitControl, TwoStepResult, MISSING};
use crate::lcbn::{proportions_capped, sample_patterns_with, LcbnParams, ProportionVector};
use crate::measurement::{equal_effects_gdina, local_mask, DinaParams, ItemParams, MeasurementModel, QMatrix};
use crate::pattern::{AttributePattern, PatternSet};

/// Conditional mastery probabilities of the diamond design.
pub const DIAMOND_T: [f64; 8] = [0.9, 0.8, 0.8, 0.7, 0.7, 0.7, 0.6, 0.6];

/// Attribute order of the TIMSS-shaped design: content (Data, Geometry,
/// Number) crossed with cognitive domain (Applying, Knowing, Reasoning).
pub const TIMSS_ATTRIBUTES: [&str; 9] = ["DA", "DK", "DR", "GA", "GK", "GR", "NA", "NK", "NR"];

const TIMSS_T: [f64; 9] = [0.97, 0.64, 0.91, 0.93, 0.54, 0.96, 0.96, 0.49, 0.995];
/// Sample size of the assessment-shaped fixture.
pub const TIMSS_N: usize = 4668;
const TIMSS_J: usize = 174;

/// Two-layer diamond: 1 feeds 2 and 3, both feed 4, 5 and 6, which all feed 7 and 8.
pub fn diamond_hierarchy() -> Hierarchy {
    let mut edges = vec![(0, 1), (0, 2)];
    for from in [1, 2] {
        for to in [3, 4, 5] {
            edges.push((from, to));
        }
    }
    for from in [3, 4, 5] {
        for to in [6, 7] {
            edges.push((from, to));
        }
    }
    Hierarchy::new(8, &edges).expect("diamond is acyclic")
}

/// `[Q1; Q2; I]` with tridiagonal `Q1` and upper bidiagonal `Q2`.
pub fn simulation_q(k: usize) -> QMatrix {
    let row = |cols: &[usize]| -> Vec<u8> {
        let mut r = vec![0; k];
        for &c in cols {
            r[c] = 1;
        }
        r
    };
    let mut rows = Vec::with_capacity(3 * k);
    for i in 0..k {
        let cols: Vec<usize> = (i.saturating_sub(1)..=(i + 1).min(k - 1)).collect();
        rows.push(row(&cols));
    }
    for i in 0..k {
        let cols: Vec<usize> = (i..=(i + 1).min(k - 1)).collect();
        rows.push(row(&cols));
    }
    for i in 0..k {
        rows.push(row(&[i]));
    }
    QMatrix::new(&rows).expect("well-formed rows")
}

/// Hierarchy, LCBN parameters and Q-matrix of the diamond simulation design.
pub fn diamond_fixture() -> (Hierarchy, LcbnParams, QMatrix) {
    (
        diamond_hierarchy(),
        LcbnParams::new(DIAMOND_T.to_vec()).expect("t inside (0, 1)"),
        simulation_q(8),
    )
}

fn timss_index(name: &str) -> usize {
    TIMSS_ATTRIBUTES.iter().position(|&a| a == name).expect("known attribute")
}

pub fn timss_hierarchy() -> Hierarchy {
    let edges: Vec<(usize, usize)> = [
        ("DK", "DR"),
        ("DK", "DA"),
        ("NK", "NA"),
        ("GK", "GR"),
        ("DR", "GA"),
        ("DR", "NR"),
        ("DA", "NR"),
        ("NA", "NR"),
    ]
    .iter()
    .map(|(a, b)| (timss_index(a), timss_index(b)))
    .collect();
    Hierarchy::new(9, &edges).expect("acyclic")
}

/// Basis-row Q-matrix with item `j` measuring attribute `j mod K`.
pub fn basis_q(k: usize, items: usize) -> QMatrix {
    let rows: Vec<Vec<u8>> = (0..items)
        .map(|j| (0..k).map(|a| (a == j % k) as u8).collect())
        .collect();
    QMatrix::new(&rows).expect("well-formed rows")
}

/// A nine-attribute, 174-item design shaped like a large-scale assessment.
pub fn timss_fixture() -> (Hierarchy, LcbnParams, QMatrix) {
    let q = basis_q(9, TIMSS_J)
        .with_names(TIMSS_ATTRIBUTES.iter().map(|s| s.to_string()).collect())
        .expect("nine names");
    (timss_hierarchy(), LcbnParams::new(TIMSS_T.to_vec()).expect("t inside (0, 1)"), q)
}

/// Groups that collapse attributes whose conditional mastery exceeds 0.95
/// into their prerequisite: {DK, DA}, {NK, NA}, {GK, GR}. DR, GA and NR
/// stay on their own.
pub fn timss_merge_groups() -> Vec<Vec<usize>> {
    vec![
        vec![timss_index("DK"), timss_index("DA")],
        vec![timss_index("DR")],
        vec![timss_index("GA")],
        vec![timss_index("GK"), timss_index("GR")],
        vec![timss_index("NK"), timss_index("NA")],
        vec![timss_index("NR")],
    ]
}

/// Named or inline structural fixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FixtureSpec {
    Named(NamedFixture),
    Inline(InlineFixture),
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self::Named(NamedFixture::Diamond)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NamedFixture {
    Diamond,
    Timss,
}

/// Hierarchy edges are 1-based pairs; `q` is a list of 0/1 rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineFixture {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(default)]
    pub edges: Vec<(usize, usize)>,
    pub t: Vec<f64>,
    pub q: Vec<Vec<u8>>,
}

impl FixtureSpec {
    pub fn resolve(&self) -> Result<(Hierarchy, LcbnParams, QMatrix)> {
        match self {
            Self::Named(NamedFixture::Diamond) => Ok(diamond_fixture()),
            Self::Named(NamedFixture::Timss) => Ok(timss_fixture()),
            Self::Inline(f) => {
                let mut edges = Vec::with_capacity(f.edges.len());
                for &(a, b) in &f.edges {
                    if a == 0 || b == 0 || a > f.k || b > f.k {
                        return Err(Error::Index {
                            index: a.max(b),
                            k: f.k,
                        });
                    }
                    edges.push((a - 1, b - 1));
                }
                let h = Hierarchy::new(f.k, &edges)?;
                let t = LcbnParams::with_boundary(f.t.clone())?;
                let q = QMatrix::new(&f.q)?;
                if q.k() != f.k || t.k() != f.k {
                    return Err(Error::Dimension("inline fixture sizes disagree with K".into()));
                }
                Ok((h, t, q))
            }
        }
    }
}

/// Explicit pattern proportions replacing the LCBN-implied ones: either a
/// list aligned with the fixture's permissible patterns in canonical order,
/// or a map from pattern strings. Weights are rescaled to sum to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProportionSpec {
    Ordered(Vec<f64>),
    ByPattern(BTreeMap<String, f64>),
}

/// Block-rotated missingness: items are dealt into `blocks` blocks and each
/// subject sees `per_subject` of them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BookletDesign {
    pub blocks: usize,
    pub per_subject: usize,
}

/// One simulation setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    /// Generating and fitted measurement model (`dina` or `gdina`).
    pub model: MeasurementModel,
    pub n: usize,
    /// Noise level: DINA slip and guess, or the GDINA endpoint probability.
    pub r: f64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub fixture: FixtureSpec,
    #[serde(default)]
    pub proportions: Option<ProportionSpec>,
    #[serde(default)]
    pub missing_rate: f64,
    #[serde(default)]
    pub booklets: Option<BookletDesign>,
    #[serde(default)]
    pub control: FitControl,
}

fn default_replicates() -> usize {
    1
}

/// A config file holds either one setting or a list under `experiments`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExperimentFile {
    Suite { experiments: Vec<ExperimentConfig> },
    Single(Box<ExperimentConfig>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Suite {
    experiments: Vec<ExperimentConfig>,
}

impl ExperimentFile {
    /// Parse a config file, keeping the line, column and field name of the
    /// first schema error.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        if value.get("experiments").is_some() {
            let suite: Suite = serde_json::from_str(text)?;
            Ok(Self::Suite {
                experiments: suite.experiments,
            })
        } else {
            Ok(Self::Single(Box::new(serde_json::from_str(text)?)))
        }
    }

    pub fn read(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn into_configs(self) -> Vec<ExperimentConfig> {
        match self {
            Self::Suite { experiments } => experiments,
            Self::Single(cfg) => vec![*cfg],
        }
    }
}

/// Data-generating truth of a setting.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Truth {
    pub hierarchy: Hierarchy,
    /// `None` when explicit proportions replace the LCBN.
    pub t: Option<LcbnParams>,
    pub proportions: ProportionVector,
    pub params: ItemParams,
    #[serde(skip)]
    pub q: Option<QMatrix>,
}

impl Truth {
    fn q(&self) -> &QMatrix {
        self.q.as_ref().expect("Q attached")
    }

    /// Patterns the true model treats as permissible.
    pub fn permissible(&self, cap: usize) -> Result<PatternSet> {
        self.hierarchy.permissible_patterns_capped(cap)
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.model, MeasurementModel::Dina | MeasurementModel::Gdina { .. }) {
            return Err(Error::InvalidArgument(format!(
                "simulation supports dina and gdina, not {}",
                self.model.name()
            )));
        }
        if !(0.0..0.5).contains(&self.r) {
            return Err(Error::InvalidArgument(format!("noise level r = {} outside [0, 0.5)", self.r)));
        }
        if self.replicates == 0 || self.n == 0 {
            return Err(Error::InvalidArgument("n and replicates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(Error::InvalidArgument(format!(
                "missing_rate = {} outside [0, 1)",
                self.missing_rate
            )));
        }
        if let Some(b) = &self.booklets {
            if b.blocks == 0 || b.per_subject == 0 || b.per_subject > b.blocks {
                return Err(Error::InvalidArgument("booklets need 0 < per_subject <= blocks".into()));
            }
        }
        Ok(())
    }

    pub fn truth(&self) -> Result<Truth> {
        self.validate()?;
        let (hierarchy, t, q) = self.fixture.resolve()?;
        let cap = self.control.enumeration_cap;
        let (t, proportions) = match &self.proportions {
            None => {
                let p = proportions_capped(&t, &hierarchy, cap)?;
                (Some(t), p)
            }
            Some(ProportionSpec::Ordered(values)) => {
                let set = hierarchy.permissible_patterns_capped(cap)?;
                (None, ProportionVector::normalized(set, values.clone())?)
            }
            Some(ProportionSpec::ByPattern(map)) => {
                let mut pairs = Vec::with_capacity(map.len());
                for (key, &p) in map {
                    let pattern: AttributePattern = key.parse()?;
                    pairs.push((pattern, p));
                }
                pairs.sort_by_key(|(pattern, _)| pattern.code());
                let set = PatternSet::from_patterns(hierarchy.k(), pairs.iter().map(|(pat, _)| *pat))?;
                (None, ProportionVector::normalized(set, pairs.into_iter().map(|(_, p)| p).collect())?)
            }
        };
        let params = match self.model {
            MeasurementModel::Dina => ItemParams::Dina(DinaParams::uniform(q.items(), self.r, self.r)),
            _ => ItemParams::Gdina(equal_effects_gdina(&q, self.r)),
        };
        Ok(Truth {
            hierarchy,
            t,
            proportions,
            params,
            q: Some(q),
        })
    }

    /// Generator seed for fitting replicate `replicate`.
    fn fit_seed(&self, replicate: usize) -> u64 {
        self.seed ^ (replicate as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

/// Simulated responses with the latent patterns that produced them.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub data: Dataset,
    pub patterns: Vec<AttributePattern>,
}

/// Responses of replicate `replicate`, deterministic in `(seed, replicate)`.
pub fn generate_dataset(cfg: &ExperimentConfig, replicate: usize) -> Result<Dataset> {
    Ok(simulate(cfg, &cfg.truth()?, replicate)?.data)
}

pub fn simulate(cfg: &ExperimentConfig, truth: &Truth, replicate: usize) -> Result<Simulation> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(replicate as u64 + 1);
    let q = truth.q();
    let k = q.k();
    let n = cfg.n;

    let patterns = match &truth.t {
        Some(t) if cfg.proportions.is_none() => sample_patterns_with(t, &truth.hierarchy, n, &mut rng)?,
        _ => {
            let set = truth.proportions.patterns();
            let probs = truth.proportions.probs();
            (0..n)
                .map(|_| {
                    let u: f64 = rng.gen();
                    let mut acc = 0.0;
                    let mut idx = probs.len() - 1;
                    for (i, &p) in probs.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            idx = i;
                            break;
                        }
                    }
                    set.get(idx)
                })
                .collect()
        }
    };

    let support = PatternSet::from_codes(k, patterns.iter().map(AttributePattern::code));
    let theta = truth.params.theta_table(q, &support);
    let j_count = q.items();
    let mut cells = ndarray::Array2::<u8>::zeros((n, j_count));
    for (i, pattern) in patterns.iter().enumerate() {
        let col = support.index_of(pattern.code()).expect("pattern in support");
        for j in 0..j_count {
            cells[[i, j]] = rng.gen_bool(theta[[j, col]].clamp(0.0, 1.0)) as u8;
        }
    }

    let mut observed = ndarray::Array2::<bool>::from_elem((n, j_count), true);
    if let Some(b) = &cfg.booklets {
        let blocks: Vec<usize> = (0..b.blocks).collect();
        for i in 0..n {
            let chosen: Vec<usize> = blocks.choose_multiple(&mut rng, b.per_subject).copied().collect();
            for j in 0..j_count {
                observed[[i, j]] = chosen.contains(&(j % b.blocks));
            }
        }
    }
    if cfg.missing_rate > 0.0 {
        for i in 0..n {
            for j in 0..j_count {
                if observed[[i, j]] && rng.gen_bool(cfg.missing_rate) {
                    observed[[i, j]] = false;
                }
            }
        }
    }
    for i in 0..n {
        if !observed.row(i).iter().any(|&o| o) {
            observed[[i, rng.gen_range(0..j_count)]] = true;
        }
    }
    for ((i, j), &o) in observed.indexed_iter() {
        if !o {
            cells[[i, j]] = MISSING;
        }
    }
    Ok(Simulation {
        data: Dataset::new(cells)?,
        patterns,
    })
}

/// Item parameters compared against the truth: slips then guesses for
/// DINA, group response probabilities otherwise.
pub fn item_values(params: &ItemParams, q: &QMatrix) -> Vec<f64> {
    match params {
        ItemParams::Dina(d) => d.slip.iter().chain(&d.guess).copied().collect(),
        _ => (0..q.items()).flat_map(|j| params.group_probs(q, j)).collect(),
    }
}

/// Marks the entries of [`item_values`] that some pattern in `patterns`
/// reaches. Groups of attributes no permissible pattern can form carry no
/// information and are left out of the comparison.
pub fn reachable_item_values(params: &ItemParams, q: &QMatrix, patterns: &PatternSet) -> Vec<bool> {
    match params {
        ItemParams::Dina(d) => vec![true; d.slip.len() + d.guess.len()],
        _ => (0..q.items())
            .flat_map(|j| {
                let attrs = q.required(j);
                let mut seen = vec![false; 1 << attrs.len()];
                for &code in patterns.codes() {
                    seen[local_mask(q.k(), code, &attrs)] = true;
                }
                seen
            })
            .collect(),
    }
}

/// Stored estimates of one replicate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub lambda: f64,
    pub selected_patterns: usize,
    pub hierarchy: Hierarchy,
    pub t_hat: Vec<f64>,
    pub items_hat: Vec<f64>,
    pub items_hat_pem: Vec<f64>,
    /// Estimated proportions over all `2^K` patterns.
    pub p_hat: Vec<f64>,
    pub p_hat_pem: Vec<f64>,
    pub loglik: f64,
    pub ebic_pem: f64,
    pub ebic_lcbn: f64,
    pub bic_pem: f64,
    pub bic_lcbn: f64,
    pub converged: bool,
}

impl ReplicateRecord {
    pub fn from_fit(replicate: usize, q: &QMatrix, fit: &TwoStepResult) -> Self {
        let sel = &fit.selection;
        Self {
            replicate,
            lambda: sel.lambda,
            selected_patterns: sel.step1.selected.len(),
            hierarchy: fit.fit.hierarchy.clone(),
            t_hat: fit.fit.t.t().to_vec(),
            items_hat: item_values(&fit.fit.params, q),
            items_hat_pem: item_values(&sel.step1.params, q),
            p_hat: fit.fit.proportions.dense(),
            p_hat_pem: sel.step1.proportions.dense(),
            loglik: fit.fit.loglik,
            ebic_pem: sel.ebic,
            ebic_lcbn: fit.fit.ebic,
            bic_pem: sel.bic,
            bic_lcbn: fit.fit.bic,
            converged: fit.fit.converged && sel.step1.converged,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub error: String,
}

/// Aggregate accuracy and error metrics over replicates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub completed: usize,
    /// Fraction of replicates whose hierarchy closure equals the truth.
    pub acc_hierarchy: f64,
    /// Fraction whose estimated permissible set contains the true one.
    pub acc_patterns: f64,
    pub rmse_theta: f64,
    pub rmse_theta_pem: f64,
    pub rmse_p: f64,
    pub rmse_p_pem: f64,
    /// `None` when the truth is not an LCBN.
    pub rmse_t: Option<f64>,
    /// Fraction of replicates where the LCBN fit has the smaller EBIC.
    pub ebic_lcbn_share: f64,
    pub bic_lcbn_share: f64,
}

fn rmse<'a>(pairs: impl Iterator<Item = (&'a [f64], &'a [f64])>) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for (est, truth) in pairs {
        for (a, b) in est.iter().zip(truth) {
            sum += (a - b).powi(2);
            count += 1;
        }
    }
    if count == 0 {
        return f64::NAN;
    }
    (sum / count as f64).sqrt()
}

/// Metrics of stored replicate estimates against the truth.
pub fn compute_metrics(truth: &Truth, q: &QMatrix, records: &[ReplicateRecord], cap: usize) -> Result<Metrics> {
    let c = records.len();
    if c == 0 {
        return Err(Error::InvalidArgument("no completed replicates".into()));
    }
    let true_set = truth.permissible(cap)?;
    let p_true = truth.proportions.dense();
    let mask = reachable_item_values(&truth.params, q, &true_set);
    let keep = |v: &[f64]| -> Vec<f64> { v.iter().zip(&mask).filter(|(_, &m)| m).map(|(x, _)| *x).collect() };
    let items_true = keep(&item_values(&truth.params, q));
    let items_hat: Vec<Vec<f64>> = records.iter().map(|r| keep(&r.items_hat)).collect();
    let items_hat_pem: Vec<Vec<f64>> = records.iter().map(|r| keep(&r.items_hat_pem)).collect();
    let frac = |count: usize| count as f64 / c as f64;

    let mut recovered = 0;
    let mut covered = 0;
    for r in records {
        if r.hierarchy == truth.hierarchy {
            recovered += 1;
        }
        if true_set.is_subset_of(&r.hierarchy.permissible_patterns_capped(cap)?) {
            covered += 1;
        }
    }
    Ok(Metrics {
        completed: c,
        acc_hierarchy: frac(recovered),
        acc_patterns: frac(covered),
        rmse_theta: rmse(items_hat.iter().map(|v| (&v[..], &items_true[..]))),
        rmse_theta_pem: rmse(items_hat_pem.iter().map(|v| (&v[..], &items_true[..]))),
        rmse_p: rmse(records.iter().map(|r| (&r.p_hat[..], &p_true[..]))),
        rmse_p_pem: rmse(records.iter().map(|r| (&r.p_hat_pem[..], &p_true[..]))),
        rmse_t: truth
            .t
            .as_ref()
            .map(|t| rmse(records.iter().map(|r| (&r.t_hat[..], t.t())))),
        ebic_lcbn_share: frac(records.iter().filter(|r| r.ebic_lcbn < r.ebic_pem).count()),
        bic_lcbn_share: frac(records.iter().filter(|r| r.bic_lcbn < r.bic_pem).count()),
    })
}

/// One row of a results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub name: String,
    pub model: String,
    pub n: usize,
    pub r: f64,
    pub replicates: usize,
    pub failures: usize,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "name",
            "model",
            "n",
            "r",
            "replicates",
            "completed",
            "failures",
            "acc_hierarchy",
            "acc_patterns",
            "rmse_theta",
            "rmse_theta_pem",
            "rmse_p",
            "rmse_p_pem",
            "rmse_t",
            "ebic_lcbn_share",
            "bic_lcbn_share",
        ])?;
        for row in &self.rows {
            let m = &row.metrics;
            let fmt = |x: f64| format!("{x:.6}");
            w.write_record([
                row.name.clone(),
                row.model.clone(),
                row.n.to_string(),
                row.r.to_string(),
                row.replicates.to_string(),
                m.completed.to_string(),
                row.failures.to_string(),
                fmt(m.acc_hierarchy),
                fmt(m.acc_patterns),
                fmt(m.rmse_theta),
                fmt(m.rmse_theta_pem),
                fmt(m.rmse_p),
                fmt(m.rmse_p_pem),
                m.rmse_t.map(fmt).unwrap_or_default(),
                fmt(m.ebic_lcbn_share),
                fmt(m.bic_lcbn_share),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
    }
}

/// Everything produced by one setting.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub row: MetricsRow,
    pub records: Vec<ReplicateRecord>,
    pub failures: Vec<ReplicateFailure>,
}

/// Generate, fit and score every replicate of `cfg`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let truth = cfg.truth()?;
    let q = truth.q().clone();
    let outcomes: Vec<std::result::Result<ReplicateRecord, ReplicateFailure>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|replicate| {
            let attempt = || -> Result<ReplicateRecord> {
                let sim = simulate(cfg, &truth, replicate)?;
                let mut control = cfg.control.clone();
                control.seed = cfg.fit_seed(replicate);
                let fit = two_step_fit(&sim.data, &q, cfg.model, &control)?;
                Ok(ReplicateRecord::from_fit(replicate, &q, &fit))
            };
            attempt().map_err(|e| {
                log::warn!("replicate {replicate} failed: {e}");
                ReplicateFailure {
                    replicate,
                    error: e.to_string(),
                }
            })
        })
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(r) => records.push(r),
            Err(f) => failures.push(f),
        }
    }
    let metrics = compute_metrics(&truth, &q, &records, cfg.control.enumeration_cap)?;
    Ok(ExperimentReport {
        config: cfg.clone(),
        row: MetricsRow {
            name: cfg.name.clone(),
            model: cfg.model.name().to_string(),
            n: cfg.n,
            r: cfg.r,
            replicates: cfg.replicates,
            failures: failures.len(),
            metrics,
        },
        records,
        failures,
    })
}
