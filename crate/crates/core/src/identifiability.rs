//! Identifiability checks with witnesses.
//!
//! Item and attribute numbers inside witnesses are 1-based, matching the
//! file formats.

use std::collections::{BTreeMap, HashSet};

use itertools::Itertools;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{AttributeRole, Hierarchy};
use crate::measurement::{sparsify_q, QMatrix};
use crate::pattern::{attr_bit, AttributePattern, PatternSet};

/// Default number of candidates examined by the subset searches.
pub const DEFAULT_SEARCH_BUDGET: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Unknown,
}

/// Evidence backing a verdict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Witness {
    /// Rows forming the identity block, listed by attribute.
    BasisRows { rows: Vec<usize> },
    NoBasisRow { attribute: usize },
    MeasurementCounts { counts: Vec<usize> },
    TooFewMeasurements {
        attribute: usize,
        role: Option<AttributeRole>,
        count: usize,
        required: usize,
    },
    DistinctSingletonColumns { basis_rows: Vec<usize> },
    IdenticalColumns { first: usize, second: usize, basis_rows: Vec<usize> },
    ItemSets {
        s1: Vec<usize>,
        s2: Vec<usize>,
        /// Cells switched from 0 to 1 as `(item, pattern)`.
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        flips: Vec<(usize, AttributePattern)>,
    },
    Unseparated {
        s1: Vec<usize>,
        s2: Vec<usize>,
        first: AttributePattern,
        second: AttributePattern,
    },
    SharedColumn { pattern: AttributePattern, complement: AttributePattern },
    DistinctColumns,
    /// Every candidate was examined without success.
    Exhausted { candidates: usize },
    BudgetExceeded { candidates: usize },
    NotApplicable { reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub verdict: Verdict,
    pub witness: Witness,
}

impl ConditionResult {
    fn new(verdict: Verdict, witness: Witness) -> Self {
        Self { verdict, witness }
    }
}

/// Per-condition verdicts, serialized as `{condition: {verdict, witness}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConditionReport {
    pub conditions: BTreeMap<String, ConditionResult>,
}

impl ConditionReport {
    fn from_pairs(pairs: Vec<(&str, ConditionResult)>) -> Self {
        Self {
            conditions: pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }

    pub fn get(&self, condition: &str) -> Option<&ConditionResult> {
        self.conditions.get(condition)
    }

    /// Fail if any condition fails, else unknown if any is unknown.
    pub fn verdict(&self) -> Verdict {
        let verdicts: Vec<Verdict> = self.conditions.values().map(|c| c.verdict).collect();
        if verdicts.contains(&Verdict::Fail) {
            Verdict::Fail
        } else if verdicts.contains(&Verdict::Unknown) {
            Verdict::Unknown
        } else {
            Verdict::Pass
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict() == Verdict::Pass
    }
}

/// Ideal responses `Gamma[j][a] = 1(alpha_a covers q_j)` over a pattern set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GammaMatrix {
    pub patterns: PatternSet,
    pub matrix: Array2<u8>,
}

impl GammaMatrix {
    pub fn items(&self) -> usize {
        self.matrix.nrows()
    }

    fn column(&self, a: usize, rows: &[usize]) -> Vec<u8> {
        rows.iter().map(|&j| self.matrix[[j, a]]).collect()
    }
}

pub fn build_gamma(q: &QMatrix, patterns: &PatternSet) -> Result<GammaMatrix> {
    if q.k() != patterns.k() {
        return Err(Error::Dimension(format!(
            "Q-matrix has {} attributes, patterns have {}",
            q.k(),
            patterns.k()
        )));
    }
    let matrix = Array2::from_shape_fn((q.items(), patterns.len()), |(j, a)| {
        (patterns.codes()[a] & q.row(j) == q.row(j)) as u8
    });
    Ok(GammaMatrix {
        patterns: patterns.clone(),
        matrix,
    })
}

fn check_dims(q: &QMatrix, h: &Hierarchy) -> Result<()> {
    if q.k() != h.k() {
        return Err(Error::Dimension(format!(
            "Q-matrix has {} attributes, hierarchy has {}",
            q.k(),
            h.k()
        )));
    }
    Ok(())
}

/// Sufficient conditions for strict identifiability of the DINA-based model
/// in terms of the sparsified Q-matrix and attribute roles.
pub fn check_dina_strict(q: &QMatrix, h: &Hierarchy) -> Result<ConditionReport> {
    check_dims(q, h)?;
    let k = q.k();
    let sparse = sparsify_q(q, h)?;
    let roles = h.roles();

    // Rows whose sparsified form is e_k, per attribute.
    let candidates: Vec<Vec<usize>> = (0..k)
        .map(|a| (0..q.items()).filter(|&j| sparse.row(j) == attr_bit(k, a)).collect())
        .collect();
    let missing = candidates.iter().position(Vec::is_empty);
    let cond_a = match missing {
        None => ConditionResult::new(
            Verdict::Pass,
            Witness::BasisRows {
                rows: candidates.iter().map(|c| c[0] + 1).collect(),
            },
        ),
        Some(a) => ConditionResult::new(Verdict::Fail, Witness::NoBasisRow { attribute: a + 1 }),
    };

    let counts: Vec<usize> = (0..k).map(|a| sparse.column_count(a)).collect();
    let deficit = (0..k).find(|&a| counts[a] < roles[a].required_measurements());
    let cond_b = match deficit {
        None => ConditionResult::new(Verdict::Pass, Witness::MeasurementCounts { counts }),
        Some(a) => ConditionResult::new(
            Verdict::Fail,
            Witness::TooFewMeasurements {
                attribute: a + 1,
                role: Some(roles[a]),
                count: counts[a],
                required: roles[a].required_measurements(),
            },
        ),
    };

    let cond_c = if missing.is_some() {
        ConditionResult::new(
            Verdict::Unknown,
            Witness::NotApplicable {
                reason: "no identity block to remove".into(),
            },
        )
    } else {
        singleton_columns(q, &roles, &candidates, DEFAULT_SEARCH_BUDGET)
    };
    Ok(ConditionReport::from_pairs(vec![("A", cond_a), ("B", cond_b), ("C", cond_c)]))
}

/// Search identity-block choices for one leaving all singleton columns of
/// the remaining rows pairwise distinct.
fn singleton_columns(
    q: &QMatrix,
    roles: &[AttributeRole],
    candidates: &[Vec<usize>],
    budget: usize,
) -> ConditionResult {
    let singletons: Vec<usize> = (0..q.k()).filter(|&a| roles[a] == AttributeRole::Singleton).collect();
    let base: Vec<usize> = candidates.iter().map(|c| c[0]).collect();
    let mut first_failure = None;
    let mut examined = 0;
    for choice in singletons.iter().map(|&a| candidates[a].iter()).multi_cartesian_product() {
        examined += 1;
        if examined > budget {
            return ConditionResult::new(Verdict::Unknown, Witness::BudgetExceeded { candidates: budget });
        }
        let mut block = base.clone();
        for (&a, &row) in singletons.iter().zip(&choice) {
            block[a] = *row;
        }
        let rest: Vec<usize> = (0..q.items()).filter(|j| !block.contains(j)).collect();
        let column = |a: usize| -> Vec<bool> { rest.iter().map(|&j| q.get(j, a)).collect() };
        let clash = singletons
            .iter()
            .tuple_combinations()
            .find(|(&a, &b)| column(a) == column(b));
        let rows: Vec<usize> = block.iter().map(|j| j + 1).collect();
        match clash {
            None => {
                return ConditionResult::new(Verdict::Pass, Witness::DistinctSingletonColumns { basis_rows: rows })
            }
            Some((&a, &b)) => {
                first_failure.get_or_insert(Witness::IdenticalColumns {
                    first: a + 1,
                    second: b + 1,
                    basis_rows: rows,
                });
            }
        }
    }
    match first_failure {
        Some(w) => ConditionResult::new(Verdict::Fail, w),
        // No singletons: the single empty choice always passes above.
        None => ConditionResult::new(Verdict::Pass, Witness::DistinctSingletonColumns { basis_rows: vec![] }),
    }
}

/// Necessary and sufficient condition under a linear hierarchy: the first
/// and last attributes of the chain are each measured at least twice in the
/// sparsified Q-matrix.
pub fn check_linear_necessary(q: &QMatrix, h: &Hierarchy) -> Result<ConditionReport> {
    check_dims(q, h)?;
    if !h.is_linear() {
        return Err(Error::NotLinear);
    }
    let sparse = sparsify_q(q, h)?;
    let order = h.topological_order();
    let ends = [order[0], order[order.len() - 1]];
    let deficit = ends
        .iter()
        .map(|&a| (a, sparse.column_count(a)))
        .find(|&(_, count)| count < 2);
    let result = match deficit {
        None => ConditionResult::new(
            Verdict::Pass,
            Witness::MeasurementCounts {
                counts: (0..q.k()).map(|a| sparse.column_count(a)).collect(),
            },
        ),
        Some((a, count)) => ConditionResult::new(
            Verdict::Fail,
            Witness::TooFewMeasurements {
                attribute: a + 1,
                role: h.roles().get(a).copied(),
                count,
                required: 2,
            },
        ),
    };
    Ok(ConditionReport::from_pairs(vec![("B_star", result)]))
}

/// `order[a * n + b]`: pattern `a` dominates pattern `b` on every row.
fn dominance(g: &Array2<u8>, rows: &[usize]) -> Vec<bool> {
    let n = g.ncols();
    let mut out = vec![true; n * n];
    for a in 0..n {
        for b in 0..n {
            out[a * n + b] = rows.iter().all(|&j| g[[j, a]] >= g[[j, b]]);
        }
    }
    out
}

fn distinct_columns(g: &Array2<u8>, rows: &[usize]) -> bool {
    let mut seen = HashSet::with_capacity(g.ncols());
    (0..g.ncols()).all(|a| seen.insert(rows.iter().map(|&j| g[[j, a]]).collect::<Vec<u8>>()))
}

/// First pattern pair comparable under `order` that no row outside `used`
/// separates in `original`.
fn unseparated(original: &Array2<u8>, order: &[bool], used: &[usize]) -> Option<(usize, usize)> {
    let n = original.ncols();
    let outside: Vec<usize> = (0..original.nrows()).filter(|j| !used.contains(j)).collect();
    for a in 0..n {
        for b in a + 1..n {
            if (order[a * n + b] || order[b * n + a])
                && !outside.iter().any(|&j| original[[j, a]] != original[[j, b]])
            {
                return Some((a, b));
            }
        }
    }
    None
}

/// Condition A on a (possibly modified) matrix for the item sets.
fn same_order(g: &Array2<u8>, s1: &[usize], s2: &[usize]) -> Option<Vec<bool>> {
    if !distinct_columns(g, s1) || !distinct_columns(g, s2) {
        return None;
    }
    let order = dominance(g, s1);
    (order == dominance(g, s2)).then_some(order)
}

enum Search<T> {
    Found(T),
    Exhausted(usize),
    Budget,
}

/// Visit disjoint nonempty item-set pairs by increasing total size, then
/// lexicographically.
fn search_pairs<T>(
    items: usize,
    budget: usize,
    examined: &mut usize,
    mut visit: impl FnMut(&[usize], &[usize], &mut usize) -> Option<T>,
) -> Search<T> {
    for total in 2..=items {
        for size1 in 1..=total / 2 {
            let size2 = total - size1;
            for s1 in (0..items).combinations(size1) {
                let rest: Vec<usize> = (0..items).filter(|j| !s1.contains(j)).collect();
                for s2 in rest.into_iter().combinations(size2) {
                    if size1 == size2 && s2 < s1 {
                        continue;
                    }
                    *examined += 1;
                    if *examined > budget {
                        return Search::Budget;
                    }
                    if let Some(found) = visit(&s1, &s2, examined) {
                        return Search::Found(found);
                    }
                    if *examined > budget {
                        return Search::Budget;
                    }
                }
            }
        }
    }
    Search::Exhausted(*examined)
}

fn one_based(set: &[usize]) -> Vec<usize> {
    set.iter().map(|j| j + 1).collect()
}

fn check_c(gamma: &GammaMatrix, complement: &GammaMatrix) -> ConditionResult {
    let all: Vec<usize> = (0..gamma.items()).collect();
    for a in 0..gamma.patterns.len() {
        let col = gamma.column(a, &all);
        for c in 0..complement.patterns.len() {
            if complement.column(c, &all) == col {
                return ConditionResult::new(
                    Verdict::Fail,
                    Witness::SharedColumn {
                        pattern: gamma.patterns.get(a),
                        complement: complement.patterns.get(c),
                    },
                );
            }
        }
    }
    ConditionResult::new(Verdict::Pass, Witness::DistinctColumns)
}

fn check_gamma_dims(gamma: &GammaMatrix, complement: &GammaMatrix) -> Result<()> {
    if gamma.items() != complement.items() && complement.patterns.len() > 0 {
        return Err(Error::Dimension("Gamma matrices differ in item count".into()));
    }
    Ok(())
}

/// Strict identifiability conditions on the ideal-response matrix over the
/// permissible set and its complement.
pub fn check_slam_strict(gamma: &GammaMatrix, complement: &GammaMatrix, budget: usize) -> Result<ConditionReport> {
    check_gamma_dims(gamma, complement)?;
    let g = &gamma.matrix;
    let mut first_a: Option<(Vec<usize>, Vec<usize>)> = None;
    let mut first_b_failure: Option<Witness> = None;
    let mut examined = 0;
    let outcome = search_pairs(gamma.items(), budget, &mut examined, |s1, s2, _| {
        let order = same_order(g, s1, s2)?;
        first_a.get_or_insert_with(|| (s1.to_vec(), s2.to_vec()));
        let used: Vec<usize> = s1.iter().chain(s2).copied().collect();
        match unseparated(g, &order, &used) {
            None => Some((s1.to_vec(), s2.to_vec())),
            Some((a, b)) => {
                first_b_failure.get_or_insert_with(|| Witness::Unseparated {
                    s1: one_based(s1),
                    s2: one_based(s2),
                    first: gamma.patterns.get(a),
                    second: gamma.patterns.get(b),
                });
                None
            }
        }
    });
    let sets = |s1: &[usize], s2: &[usize]| Witness::ItemSets {
        s1: one_based(s1),
        s2: one_based(s2),
        flips: vec![],
    };
    let not_applicable = || {
        ConditionResult::new(
            Verdict::Unknown,
            Witness::NotApplicable {
                reason: "no item sets satisfy condition A".into(),
            },
        )
    };
    let (cond_a, cond_b) = match outcome {
        Search::Found((s1, s2)) => (
            ConditionResult::new(Verdict::Pass, sets(&s1, &s2)),
            ConditionResult::new(Verdict::Pass, sets(&s1, &s2)),
        ),
        Search::Exhausted(candidates) => match (&first_a, first_b_failure) {
            (Some((s1, s2)), Some(w)) => (
                ConditionResult::new(Verdict::Pass, sets(s1, s2)),
                ConditionResult::new(Verdict::Fail, w),
            ),
            _ => (
                ConditionResult::new(Verdict::Fail, Witness::Exhausted { candidates }),
                not_applicable(),
            ),
        },
        Search::Budget => {
            let exceeded = ConditionResult::new(Verdict::Unknown, Witness::BudgetExceeded { candidates: budget });
            match &first_a {
                Some((s1, s2)) => (ConditionResult::new(Verdict::Pass, sets(s1, s2)), exceeded),
                None => (exceeded.clone(), exceeded),
            }
        }
    };
    Ok(ConditionReport::from_pairs(vec![
        ("A", cond_a),
        ("B", cond_b),
        ("C", check_c(gamma, complement)),
    ]))
}

/// Convenience wrapper building both Gamma matrices from `Q` and a hierarchy.
pub fn check_slam_strict_q(q: &QMatrix, h: &Hierarchy, budget: usize) -> Result<ConditionReport> {
    let (gamma, complement) = gamma_pair(q, h)?;
    check_slam_strict(&gamma, &complement, budget)
}

fn gamma_pair(q: &QMatrix, h: &Hierarchy) -> Result<(GammaMatrix, GammaMatrix)> {
    check_dims(q, h)?;
    let set = h.permissible_patterns()?;
    let complement = set.complement(crate::hierarchy::DEFAULT_ENUMERATION_CAP)?;
    Ok((build_gamma(q, &set)?, build_gamma(q, &complement)?))
}

/// Generic identifiability: item sets that satisfy condition A after
/// switching up to `max_flips` zero cells of their rows to one, with
/// separation checked on the original matrix.
pub fn check_generic(
    gamma: &GammaMatrix,
    complement: &GammaMatrix,
    max_flips: usize,
    budget: usize,
) -> Result<ConditionReport> {
    check_gamma_dims(gamma, complement)?;
    let g = &gamma.matrix;
    let mut examined = 0;
    let mut outcome = Search::Exhausted(0);
    for flips in 0..=max_flips {
        outcome = search_pairs(gamma.items(), budget, &mut examined, |s1, s2, examined| {
            let used: Vec<usize> = s1.iter().chain(s2).copied().collect();
            let zeros: Vec<(usize, usize)> = used
                .iter()
                .flat_map(|&j| (0..g.ncols()).filter(move |&a| g[[j, a]] == 0).map(move |a| (j, a)))
                .collect();
            for cells in zeros.into_iter().combinations(flips) {
                if !cells.is_empty() {
                    *examined += 1;
                    if *examined > budget {
                        return None;
                    }
                }
                let mut modified = g.clone();
                for &(j, a) in &cells {
                    modified[[j, a]] = 1;
                }
                if let Some(order) = same_order(&modified, s1, s2) {
                    if unseparated(g, &order, &used).is_none() {
                        return Some((s1.to_vec(), s2.to_vec(), cells));
                    }
                }
            }
            None
        });
        if !matches!(outcome, Search::Exhausted(_)) {
            break;
        }
    }
    let cond_a = match outcome {
        Search::Found((s1, s2, cells)) => ConditionResult::new(
            Verdict::Pass,
            Witness::ItemSets {
                s1: one_based(&s1),
                s2: one_based(&s2),
                flips: cells.into_iter().map(|(j, a)| (j + 1, gamma.patterns.get(a))).collect(),
            },
        ),
        Search::Exhausted(candidates) => ConditionResult::new(Verdict::Fail, Witness::Exhausted { candidates }),
        Search::Budget => ConditionResult::new(Verdict::Unknown, Witness::BudgetExceeded { candidates: budget }),
    };
    Ok(ConditionReport::from_pairs(vec![
        ("A_star_star", cond_a),
        ("C", check_c(gamma, complement)),
    ]))
}

pub fn check_generic_q(q: &QMatrix, h: &Hierarchy, max_flips: usize, budget: usize) -> Result<ConditionReport> {
    let (gamma, complement) = gamma_pair(q, h)?;
    check_generic(&gamma, &complement, max_flips, budget)
}
