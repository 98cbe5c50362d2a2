//! Q-matrices and item response models.
//!
//! Item parameters are held per model. All three families share the view of
//! an item as a table of response probabilities indexed by which of its
//! required attributes a pattern has: the "local mask", bit `i` standing for
//! the `i`-th required attribute in ascending order.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;
use crate::pattern::{attr_bit, AttributePattern, PatternSet};

/// Fitted response probabilities are kept inside `[THETA_FLOOR, 1 - THETA_FLOOR]`.
pub const THETA_FLOOR: f64 = 1e-4;

#[inline]
pub(crate) fn clamp_theta(x: f64) -> f64 {
    x.clamp(THETA_FLOOR, 1.0 - THETA_FLOOR)
}

/// Binary `J x K` matrix of item skill requirements.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QMatrix {
    k: usize,
    rows: Vec<u32>,
    names: Option<Vec<String>>,
}

impl QMatrix {
    pub fn new(rows: &[Vec<u8>]) -> Result<Self> {
        let k = rows.first().map(Vec::len).unwrap_or(0);
        if k == 0 {
            return Err(Error::InvalidArgument("Q-matrix has no columns".into()));
        }
        let mut codes = Vec::with_capacity(rows.len());
        for (j, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::Dimension(format!(
                    "Q-matrix row {j} has {} entries, expected {k}",
                    row.len()
                )));
            }
            let mut code = 0;
            for (a, &v) in row.iter().enumerate() {
                match v {
                    0 => {}
                    1 => code |= attr_bit(k, a),
                    other => {
                        return Err(Error::Parse(format!(
                            "Q-matrix entry ({j}, {a}) is {other}, expected 0 or 1"
                        )))
                    }
                }
            }
            codes.push(code);
        }
        let q = Self {
            k,
            rows: codes,
            names: None,
        };
        for j in q.zero_rows() {
            log::warn!("Q-matrix row {j} requires no attribute; modelled as a constant-probability item");
        }
        Ok(q)
    }

    pub fn from_codes(k: usize, rows: Vec<u32>) -> Self {
        Self {
            k,
            rows,
            names: None,
        }
    }

    pub fn identity(k: usize) -> Self {
        Self::from_codes(k, (0..k).map(|a| attr_bit(k, a)).collect())
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn stack(&self, other: &QMatrix) -> Result<Self> {
        if self.k != other.k {
            return Err(Error::Dimension("stacked Q-matrices differ in K".into()));
        }
        let mut rows = self.rows.clone();
        rows.extend_from_slice(&other.rows);
        Ok(Self {
            k: self.k,
            rows,
            names: self.names.clone(),
        })
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.k {
            return Err(Error::Dimension(format!(
                "{} attribute names for {} columns",
                names.len(),
                self.k
            )));
        }
        self.names = Some(names);
        Ok(self)
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn items(&self) -> usize {
        self.rows.len()
    }

    /// Row `j` as a pattern code.
    #[inline]
    pub fn row(&self, j: usize) -> u32 {
        self.rows[j]
    }

    pub fn rows(&self) -> &[u32] {
        &self.rows
    }

    pub fn get(&self, j: usize, a: usize) -> bool {
        self.rows[j] & attr_bit(self.k, a) != 0
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.items())
            .map(|j| (0..self.k).map(|a| self.get(j, a) as u8).collect())
            .collect()
    }

    /// Required attributes of item `j`, ascending.
    pub fn required(&self, j: usize) -> Vec<usize> {
        (0..self.k).filter(|&a| self.get(j, a)).collect()
    }

    pub fn zero_rows(&self) -> Vec<usize> {
        (0..self.items()).filter(|&j| self.rows[j] == 0).collect()
    }

    /// Number of rows with a 1 in column `a`.
    pub fn column_count(&self, a: usize) -> usize {
        (0..self.items()).filter(|&j| self.get(j, a)).count()
    }

    /// Rows restricted to `keep`.
    pub fn select_rows(&self, keep: &[usize]) -> Self {
        Self {
            k: self.k,
            rows: keep.iter().map(|&j| self.rows[j]).collect(),
            names: self.names.clone(),
        }
    }
}

/// Bit `i` set when `pattern` has the `i`-th attribute in `attrs`.
#[inline]
pub fn local_mask(k: usize, code: u32, attrs: &[usize]) -> usize {
    attrs
        .iter()
        .enumerate()
        .filter(|(_, &a)| code & attr_bit(k, a) != 0)
        .fold(0, |acc, (i, _)| acc | (1 << i))
}

/// Drop a requirement `q[j][k]` whenever the same item also requires an
/// attribute that has `k` as a (possibly indirect) prerequisite.
pub fn sparsify_q(q: &QMatrix, h: &Hierarchy) -> Result<QMatrix> {
    if q.k() != h.k() {
        return Err(Error::Dimension(format!(
            "Q has {} attributes, hierarchy has {}",
            q.k(),
            h.k()
        )));
    }
    let k = q.k();
    let rows = q
        .rows()
        .iter()
        .map(|&row| {
            (0..k)
                .filter(|&a| row & attr_bit(k, a) != 0 && row & h.descendant_mask(a) == 0)
                .fold(0, |acc, a| acc | attr_bit(k, a))
        })
        .collect();
    Ok(QMatrix {
        k,
        rows,
        names: q.names.clone(),
    })
}

/// Collapse groups of attributes into single meta-attributes.
///
/// Each group must be a chain under the hierarchy's closure. The merged
/// Q-matrix column of a group is the OR of its members' columns, and group
/// `A` precedes group `B` when some member of `A` precedes some member of `B`.
pub fn merge_attributes(
    q: &QMatrix,
    h: &Hierarchy,
    groups: &[Vec<usize>],
) -> Result<(QMatrix, Hierarchy)> {
    let k = h.k();
    if q.k() != k {
        return Err(Error::Dimension("Q and hierarchy differ in K".into()));
    }
    let mut owner = vec![usize::MAX; k];
    for (g, members) in groups.iter().enumerate() {
        if members.is_empty() {
            return Err(Error::InvalidArgument(format!("group {g} is empty")));
        }
        for &a in members {
            if a >= k {
                return Err(Error::Index { index: a, k });
            }
            if owner[a] != usize::MAX {
                return Err(Error::InvalidArgument(format!(
                    "attribute {a} appears in more than one group"
                )));
            }
            owner[a] = g;
        }
        for (i, &a) in members.iter().enumerate() {
            for &b in &members[i + 1..] {
                if !h.reaches(a, b) && !h.reaches(b, a) {
                    return Err(Error::InvalidArgument(format!(
                        "attributes {a} and {b} in group {g} are not ordered by the hierarchy"
                    )));
                }
            }
        }
    }
    if let Some(a) = owner.iter().position(|&g| g == usize::MAX) {
        return Err(Error::InvalidArgument(format!(
            "attribute {a} is not assigned to a group"
        )));
    }

    let m = groups.len();
    let rows = q
        .rows()
        .iter()
        .map(|&row| {
            (0..k)
                .filter(|&a| row & attr_bit(k, a) != 0)
                .fold(0u32, |acc, a| acc | attr_bit(m, owner[a]))
        })
        .collect();
    let mut edges = Vec::new();
    for (from, to) in h.closure_edges() {
        let (gf, gt) = (owner[from], owner[to]);
        if gf != gt && !edges.contains(&(gf, gt)) {
            edges.push((gf, gt));
        }
    }
    let merged_h = Hierarchy::new(m, &edges)?;
    let names = q.names().map(|names| {
        groups
            .iter()
            .map(|members| {
                members
                    .iter()
                    .map(|&a| names[a].as_str())
                    .collect::<Vec<_>>()
                    .join("/")
            })
            .collect()
    });
    Ok((
        QMatrix {
            k: m,
            rows,
            names,
        },
        merged_h,
    ))
}

/// Link between the linear predictor and the response probability.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    #[default]
    Identity,
    Logit,
}

impl Link {
    #[inline]
    pub fn apply(self, eta: f64) -> f64 {
        match self {
            Self::Identity => eta,
            Self::Logit => 1.0 / (1.0 + (-eta).exp()),
        }
    }

    #[inline]
    pub fn inverse(self, p: f64) -> f64 {
        match self {
            Self::Identity => p,
            Self::Logit => (p / (1.0 - p)).ln(),
        }
    }
}

/// Which measurement model to fit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum MeasurementModel {
    Dina,
    /// All-effect model: GDINA under the identity link, LCDM under logit.
    Gdina { link: Link },
    /// Main-effect model: ACDM under the identity link, LLM under logit.
    MainEffect { link: Link },
}

impl TryFrom<String> for MeasurementModel {
    type Error = Error;

    fn try_from(name: String) -> Result<Self> {
        Self::parse(&name)
    }
}

impl From<MeasurementModel> for String {
    fn from(model: MeasurementModel) -> String {
        model.name().to_string()
    }
}

impl MeasurementModel {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name.to_ascii_lowercase().as_str() {
            "dina" => Self::Dina,
            "gdina" => Self::Gdina { link: Link::Identity },
            "lcdm" => Self::Gdina { link: Link::Logit },
            "acdm" => Self::MainEffect { link: Link::Identity },
            "llm" => Self::MainEffect { link: Link::Logit },
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown measurement model {other:?} (expected dina, gdina, lcdm, acdm or llm)"
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Dina => "dina",
            Self::Gdina { link: Link::Identity } => "gdina",
            Self::Gdina { link: Link::Logit } => "lcdm",
            Self::MainEffect { link: Link::Identity } => "acdm",
            Self::MainEffect { link: Link::Logit } => "llm",
        }
    }

    /// Number of free item parameters.
    pub fn free_parameters(&self, q: &QMatrix) -> usize {
        match self {
            Self::Dina => 2 * q.items(),
            Self::Gdina { .. } => (0..q.items()).map(|j| 1usize << q.row(j).count_ones()).sum(),
            Self::MainEffect { .. } => (0..q.items()).map(|j| 1 + q.row(j).count_ones() as usize).sum(),
        }
    }

    /// Random starting values that respect monotonicity: fully capable
    /// patterns answer correctly with probability in (0.7, 0.9), all others
    /// in (0.1, 0.3).
    pub fn random_init<R: Rng + ?Sized>(&self, q: &QMatrix, rng: &mut R) -> ItemParams {
        let j_count = q.items();
        match *self {
            Self::Dina => {
                let mut slip = Vec::with_capacity(j_count);
                let mut guess = Vec::with_capacity(j_count);
                for _ in 0..j_count {
                    slip.push(1.0 - rng.gen_range(0.7..0.9));
                    guess.push(rng.gen_range(0.1..0.3));
                }
                ItemParams::Dina(DinaParams { slip, guess })
            }
            Self::Gdina { link } => {
                let probs = (0..j_count)
                    .map(|j| {
                        let m = q.row(j).count_ones() as usize;
                        let full = (1usize << m) - 1;
                        let mut low: Vec<f64> = (0..full).map(|_| rng.gen_range(0.1..0.3)).collect();
                        low.sort_by(f64::total_cmp);
                        // Probabilities rise with the number of mastered attributes.
                        let mut table = vec![0.0; 1 << m];
                        let mut order: Vec<usize> = (0..full).collect();
                        order.sort_by_key(|s| s.count_ones());
                        for (s, p) in order.into_iter().zip(low) {
                            table[s] = p;
                        }
                        table[full] = rng.gen_range(0.7..0.9);
                        table
                    })
                    .collect();
                ItemParams::Gdina(GdinaParams::from_group_probs(link, probs))
            }
            Self::MainEffect { link } => {
                let mut intercept = Vec::with_capacity(j_count);
                let mut main = Vec::with_capacity(j_count);
                for j in 0..j_count {
                    let m = q.row(j).count_ones() as usize;
                    let low = rng.gen_range(0.1..0.3);
                    let high = rng.gen_range(0.7..0.9);
                    let (lo, hi) = (link.inverse(low), link.inverse(high));
                    intercept.push(if m == 0 { hi } else { lo });
                    main.push(vec![if m == 0 { 0.0 } else { (hi - lo) / m as f64 }; m]);
                }
                ItemParams::MainEffect(MainEffectParams {
                    link,
                    intercept,
                    main,
                })
            }
        }
    }
}

/// Slipping and guessing probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DinaParams {
    pub slip: Vec<f64>,
    pub guess: Vec<f64>,
}

impl DinaParams {
    pub fn uniform(items: usize, slip: f64, guess: f64) -> Self {
        Self {
            slip: vec![slip; items],
            guess: vec![guess; items],
        }
    }

    /// Items where `1 - s <= g`.
    pub fn monotonicity_violations(&self) -> Vec<usize> {
        (0..self.slip.len())
            .filter(|&j| 1.0 - self.slip[j] <= self.guess[j])
            .collect()
    }
}

/// DINA response probability: `1 - s` when the pattern covers `q_j`, else `g`.
pub fn theta_dina(slip: f64, guess: f64, q_row: u32, pattern: &AttributePattern) -> Result<f64> {
    if 1.0 - slip <= guess {
        return Err(Error::Monotonicity {
            item: 0,
            slip,
            guess,
        });
    }
    Ok(if pattern.covers(q_row) { 1.0 - slip } else { guess })
}

/// All-effect coefficients. `delta[j][s]` is the effect of the subset `s` of
/// item `j`'s required attributes (local mask), `delta[j][0]` the intercept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GdinaParams {
    pub link: Link,
    pub delta: Vec<Vec<f64>>,
}

impl GdinaParams {
    /// Build coefficients from per-group response probabilities
    /// (`probs[j][s]` for local mask `s`) by Möbius inversion on the link scale.
    pub fn from_group_probs(link: Link, probs: Vec<Vec<f64>>) -> Self {
        let delta = probs
            .into_iter()
            .map(|table| {
                let mut d: Vec<f64> = table.into_iter().map(|p| link.inverse(p)).collect();
                mobius(&mut d);
                d
            })
            .collect();
        Self { link, delta }
    }

    /// Per-group response probabilities for item `j`.
    pub fn group_probs(&self, j: usize) -> Vec<f64> {
        let mut eta = self.delta[j].clone();
        zeta(&mut eta);
        eta.into_iter().map(|x| self.link.apply(x)).collect()
    }
}

/// Response probability under the all-effect model:
/// `f(delta_0 + sum of delta_S over nonempty S within the mastered required attributes)`.
pub fn theta_gdina(delta: &[f64], q_row: u32, pattern: &AttributePattern, link: Link) -> Result<f64> {
    let k = pattern.len();
    let attrs: Vec<usize> = (0..k).filter(|&a| q_row & attr_bit(k, a) != 0).collect();
    if delta.len() != 1 << attrs.len() {
        return Err(Error::Dimension(format!(
            "{} coefficients for {} required attributes",
            delta.len(),
            attrs.len()
        )));
    }
    let mastered = local_mask(k, pattern.code(), &attrs);
    let eta: f64 = (0..delta.len())
        .filter(|&s| s & !mastered == 0)
        .map(|s| delta[s])
        .sum();
    let theta = link.apply(eta);
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::Range { value: theta });
    }
    Ok(theta)
}

/// Main-effect coefficients: intercept plus one effect per required attribute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MainEffectParams {
    pub link: Link,
    pub intercept: Vec<f64>,
    pub main: Vec<Vec<f64>>,
}

impl MainEffectParams {
    pub fn group_probs(&self, j: usize) -> Vec<f64> {
        let m = self.main[j].len();
        (0..1usize << m)
            .map(|s| {
                let eta = self.intercept[j]
                    + (0..m).filter(|i| s & (1 << i) != 0).map(|i| self.main[j][i]).sum::<f64>();
                self.link.apply(eta)
            })
            .collect()
    }
}

/// Fitted or true item parameters under one of the supported models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ItemParams {
    Dina(DinaParams),
    Gdina(GdinaParams),
    MainEffect(MainEffectParams),
}

impl ItemParams {
    pub fn model(&self) -> MeasurementModel {
        match self {
            Self::Dina(_) => MeasurementModel::Dina,
            Self::Gdina(p) => MeasurementModel::Gdina { link: p.link },
            Self::MainEffect(p) => MeasurementModel::MainEffect { link: p.link },
        }
    }

    pub fn items(&self) -> usize {
        match self {
            Self::Dina(p) => p.slip.len(),
            Self::Gdina(p) => p.delta.len(),
            Self::MainEffect(p) => p.intercept.len(),
        }
    }

    /// Response probabilities of item `j` per local mask of its required attributes.
    pub fn group_probs(&self, q: &QMatrix, j: usize) -> Vec<f64> {
        match self {
            Self::Dina(p) => {
                let m = q.row(j).count_ones() as usize;
                let full = (1usize << m) - 1;
                (0..=full)
                    .map(|s| if s == full { 1.0 - p.slip[j] } else { p.guess[j] })
                    .collect()
            }
            Self::Gdina(p) => p.group_probs(j),
            Self::MainEffect(p) => p.group_probs(j),
        }
    }

    pub fn theta(&self, q: &QMatrix, j: usize, pattern: &AttributePattern) -> f64 {
        let row = q.row(j);
        match self {
            Self::Dina(p) => {
                if pattern.covers(row) {
                    1.0 - p.slip[j]
                } else {
                    p.guess[j]
                }
            }
            _ => {
                let attrs = q.required(j);
                self.group_probs(q, j)[local_mask(q.k(), pattern.code(), &attrs)]
            }
        }
    }

    /// `J x |A|` table of response probabilities.
    pub fn theta_table(&self, q: &QMatrix, patterns: &PatternSet) -> Array2<f64> {
        let k = q.k();
        let mut table = Array2::zeros((q.items(), patterns.len()));
        for j in 0..q.items() {
            let attrs = q.required(j);
            let groups = self.group_probs(q, j);
            for (col, &code) in patterns.codes().iter().enumerate() {
                table[[j, col]] = groups[local_mask(k, code, &attrs)];
            }
        }
        table
    }

    pub fn free_parameters(&self, q: &QMatrix) -> usize {
        self.model().free_parameters(q)
    }
}

/// In-place subset-sum transform: `out[S] = sum over T ⊆ S of in[T]`.
pub(crate) fn zeta(values: &mut [f64]) {
    let n = values.len();
    let mut bit = 1;
    while bit < n {
        for s in 0..n {
            if s & bit != 0 {
                values[s] += values[s ^ bit];
            }
        }
        bit <<= 1;
    }
}

/// Inverse of [`zeta`].
pub(crate) fn mobius(values: &mut [f64]) {
    let n = values.len();
    let mut bit = 1;
    while bit < n {
        for s in 0..n {
            if s & bit != 0 {
                values[s] -= values[s ^ bit];
            }
        }
        bit <<= 1;
    }
}

/// All-effect construction used in simulations: intercept `r` and every
/// nonempty-subset effect equal, so that the all-zero pattern answers with
/// probability `r` and full mastery with `1 - r`.
pub fn equal_effects_gdina(q: &QMatrix, r: f64) -> GdinaParams {
    let delta = (0..q.items())
        .map(|j| {
            let m = q.row(j).count_ones() as usize;
            let size = 1usize << m;
            let mut d = vec![0.0; size];
            d[0] = if m == 0 { 1.0 - r } else { r };
            if m > 0 {
                let effect = (1.0 - 2.0 * r) / (size - 1) as f64;
                d[1..].iter_mut().for_each(|x| *x = effect);
            }
            d
        })
        .collect();
    GdinaParams {
        link: Link::Identity,
        delta,
    }
}
