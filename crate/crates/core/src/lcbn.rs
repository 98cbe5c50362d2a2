//! The latent conjunctive Bayesian network over attribute patterns.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{Hierarchy, DEFAULT_ENUMERATION_CAP};
use crate::pattern::{attr_bit, AttributePattern, PatternSet};

/// Conditional mastery probabilities `t_k`: the chance of mastering attribute
/// `k` given that all of its prerequisites are mastered.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LcbnParams {
    t: Vec<f64>,
}

impl LcbnParams {
    /// Parameters for estimation: every `t_k` strictly inside (0, 1).
    pub fn new(t: Vec<f64>) -> Result<Self> {
        if let Some(&bad) = t.iter().find(|&&x| !(x > 0.0 && x < 1.0)) {
            return Err(Error::InvalidArgument(format!("t = {bad} is outside (0, 1)")));
        }
        Ok(Self { t })
    }

    /// Parameters for sampling fixtures, where `t_k` may be 0 or 1.
    pub fn with_boundary(t: Vec<f64>) -> Result<Self> {
        if let Some(&bad) = t.iter().find(|&&x| !(0.0..=1.0).contains(&x)) {
            return Err(Error::InvalidArgument(format!("t = {bad} is outside [0, 1]")));
        }
        Ok(Self { t })
    }

    pub fn uniform(k: usize, value: f64) -> Self {
        Self { t: vec![value; k] }
    }

    pub fn k(&self) -> usize {
        self.t.len()
    }

    pub fn t(&self) -> &[f64] {
        &self.t
    }
}

/// Pattern proportions over a pattern set; patterns outside the set have
/// probability zero.
#[derive(Clone, Debug, PartialEq)]
pub struct ProportionVector {
    patterns: PatternSet,
    probs: Vec<f64>,
}

impl ProportionVector {
    pub fn new(patterns: PatternSet, probs: Vec<f64>) -> Result<Self> {
        if patterns.len() != probs.len() {
            return Err(Error::Dimension(format!(
                "{} proportions for {} patterns",
                probs.len(),
                patterns.len()
            )));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidArgument("proportions must be finite and nonnegative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("proportions sum to {total}, expected 1")));
        }
        Ok(Self { patterns, probs })
    }

    /// Rescale nonnegative weights to sum to one.
    pub fn normalized(patterns: PatternSet, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Numerical("proportion weights sum to zero".into()));
        }
        Self::new(patterns, weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(patterns: PatternSet) -> Self {
        let n = patterns.len();
        Self {
            patterns,
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn patterns(&self) -> &PatternSet {
        &self.patterns
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn k(&self) -> usize {
        self.patterns.k()
    }

    pub fn get(&self, pattern: &AttributePattern) -> f64 {
        self.get_code(pattern.code())
    }

    pub fn get_code(&self, code: u32) -> f64 {
        self.patterns.index_of(code).map_or(0.0, |i| self.probs[i])
    }

    /// Proportions laid out over all `2^K` patterns in code order.
    pub fn dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; 1usize << self.k()];
        for (&code, &p) in self.patterns.codes().iter().zip(&self.probs) {
            out[code as usize] = p;
        }
        out
    }

    /// Patterns whose proportion exceeds `threshold`.
    pub fn support(&self, threshold: f64) -> PatternSet {
        PatternSet::from_codes(
            self.k(),
            self.patterns
                .codes()
                .iter()
                .zip(&self.probs)
                .filter(|(_, &p)| p > threshold)
                .map(|(&c, _)| c),
        )
    }
}

impl Serialize for ProportionVector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = s.serialize_map(Some(self.probs.len()))?;
        for (pattern, p) in self.patterns.iter().zip(&self.probs) {
            map.serialize_entry(&pattern.to_string(), p)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for ProportionVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let map = std::collections::BTreeMap::<String, f64>::deserialize(d)?;
        let mut k = None;
        let mut pairs = Vec::with_capacity(map.len());
        for (key, p) in map {
            let pattern: AttributePattern = key.parse().map_err(serde::de::Error::custom)?;
            if *k.get_or_insert(pattern.len()) != pattern.len() {
                return Err(serde::de::Error::custom("patterns of differing length"));
            }
            pairs.push((pattern.code(), p));
        }
        let k = k.ok_or_else(|| serde::de::Error::custom("empty proportion map"))?;
        pairs.sort_unstable_by_key(|&(c, _)| c);
        let set = PatternSet::from_codes(k, pairs.iter().map(|&(c, _)| c));
        Self::new(set, pairs.into_iter().map(|(_, p)| p).collect()).map_err(serde::de::Error::custom)
    }
}

/// Probability of one attribute given the rest of the pattern.
#[inline]
fn conditional(t: f64, prerequisites_met: bool, mastered: bool) -> f64 {
    match (prerequisites_met, mastered) {
        (true, true) => t,
        (true, false) => 1.0 - t,
        (false, true) => 0.0,
        (false, false) => 1.0,
    }
}

fn check_k(t: &LcbnParams, h: &Hierarchy) -> Result<()> {
    if t.k() != h.k() {
        return Err(Error::Dimension(format!(
            "t has {} entries, hierarchy has {} attributes",
            t.k(),
            h.k()
        )));
    }
    Ok(())
}

pub(crate) fn code_prob(t: &[f64], h: &Hierarchy, code: u32) -> f64 {
    let k = h.k();
    (0..k)
        .map(|a| {
            let anc = h.ancestor_mask(a);
            conditional(t[a], code & anc == anc, code & attr_bit(k, a) != 0)
        })
        .product()
}

/// `P(alpha)` under the LCBN: the product over attributes of the
/// conditional mastery terms. Zero exactly for impermissible patterns.
pub fn pattern_prob(t: &LcbnParams, h: &Hierarchy, pattern: &AttributePattern) -> Result<f64> {
    check_k(t, h)?;
    if pattern.len() != h.k() {
        return Err(Error::Dimension(format!(
            "pattern {pattern} has length {}, expected {}",
            pattern.len(),
            h.k()
        )));
    }
    Ok(code_prob(&t.t, h, pattern.code()))
}

/// Proportions over the permissible set of `h`.
pub fn proportions(t: &LcbnParams, h: &Hierarchy) -> Result<ProportionVector> {
    proportions_capped(t, h, DEFAULT_ENUMERATION_CAP)
}

pub fn proportions_capped(t: &LcbnParams, h: &Hierarchy, cap: usize) -> Result<ProportionVector> {
    check_k(t, h)?;
    let patterns = h.permissible_patterns_capped(cap)?;
    Ok(proportions_on(&t.t, h, patterns))
}

pub(crate) fn proportions_on(t: &[f64], h: &Hierarchy, patterns: PatternSet) -> ProportionVector {
    let probs = patterns.codes().iter().map(|&c| code_prob(t, h, c)).collect();
    ProportionVector { patterns, probs }
}

/// `N` patterns drawn by forward sampling in the hierarchy's topological order.
pub fn sample_patterns(t: &LcbnParams, h: &Hierarchy, n: usize, seed: u64) -> Result<Vec<AttributePattern>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_patterns_with(t, h, n, &mut rng)
}

pub fn sample_patterns_with<R: Rng + ?Sized>(
    t: &LcbnParams,
    h: &Hierarchy,
    n: usize,
    rng: &mut R,
) -> Result<Vec<AttributePattern>> {
    check_k(t, h)?;
    let k = h.k();
    Ok((0..n)
        .map(|_| {
            let mut code = 0u32;
            for &a in h.topological_order() {
                let anc = h.ancestor_mask(a);
                if code & anc == anc && rng.gen_bool(t.t[a]) {
                    code |= attr_bit(k, a);
                }
            }
            AttributePattern::from_code(k, code)
        })
        .collect())
}

/// Closed-form maximizer of `sum_alpha weight_alpha * ln P(alpha | t)` over
/// `t`: for each attribute, the weighted fraction of masters among patterns
/// whose prerequisites are all mastered. Attributes with no such weight keep
/// their `fallback` value.
pub fn update_t(h: &Hierarchy, patterns: &PatternSet, weights: &[f64], fallback: &[f64]) -> Vec<f64> {
    let k = h.k();
    (0..k)
        .map(|a| {
            let anc = h.ancestor_mask(a);
            let bit = attr_bit(k, a);
            let (mut num, mut den) = (0.0, 0.0);
            for (&code, &w) in patterns.codes().iter().zip(weights) {
                if code & anc == anc {
                    den += w;
                    if code & bit != 0 {
                        num += w;
                    }
                }
            }
            if den > 0.0 {
                num / den
            } else {
                fallback[a]
            }
        })
        .collect()
}

/// `sum_alpha weight_alpha * ln P(alpha | t)`, the structural part of the
/// expected complete-data log-likelihood.
pub fn structural_objective(t: &[f64], h: &Hierarchy, patterns: &PatternSet, weights: &[f64]) -> f64 {
    patterns
        .codes()
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&c, &w)| w * code_prob(t, h, c).ln())
        .sum()
}
