//! Binary attribute patterns and ordered pattern sets.
//!
//! A pattern over `K` attributes is stored as a `u32` code in which attribute 0
//! occupies the most significant of the `K` low bits. Sorting codes ascending
//! therefore matches the rendered string order (`"0000" < "1000" < "1100"`).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Largest attribute count representable by a pattern code.
pub const MAX_ATTRIBUTES: usize = 32;

/// Bit used by attribute `attr` in a `k`-attribute code.
#[inline]
pub fn attr_bit(k: usize, attr: usize) -> u32 {
    debug_assert!(attr < k);
    1u32 << (k - 1 - attr)
}

/// Code with every one of the `k` attribute bits set.
#[inline]
pub fn full_mask(k: usize) -> u32 {
    if k == 32 {
        u32::MAX
    } else {
        (1u32 << k) - 1
    }
}

/// A skill profile over `K` binary attributes.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct AttributePattern {
    k: u8,
    code: u32,
}

impl AttributePattern {
    pub fn from_code(k: usize, code: u32) -> Self {
        assert!(k <= MAX_ATTRIBUTES, "at most {MAX_ATTRIBUTES} attributes");
        debug_assert_eq!(code & !full_mask(k), 0);
        Self { k: k as u8, code }
    }

    pub fn from_bits(bits: &[bool]) -> Result<Self> {
        if bits.len() > MAX_ATTRIBUTES {
            return Err(Error::InvalidArgument(format!(
                "pattern length {} exceeds {MAX_ATTRIBUTES}",
                bits.len()
            )));
        }
        let k = bits.len();
        let code = bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .fold(0, |acc, (a, _)| acc | attr_bit(k, a));
        Ok(Self::from_code(k, code))
    }

    pub fn zeros(k: usize) -> Self {
        Self::from_code(k, 0)
    }

    pub fn ones(k: usize) -> Self {
        Self::from_code(k, full_mask(k))
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.k as usize
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.k == 0
    }

    #[inline]
    pub fn code(&self) -> u32 {
        self.code
    }

    #[inline]
    pub fn has(&self, attr: usize) -> bool {
        self.code & attr_bit(self.len(), attr) != 0
    }

    /// `self ⪰ other` elementwise, with `other` given as a code.
    #[inline]
    pub fn covers(&self, mask: u32) -> bool {
        self.code & mask == mask
    }

    pub fn bits(&self) -> Vec<bool> {
        (0..self.len()).map(|a| self.has(a)).collect()
    }

    pub fn count_ones(&self) -> u32 {
        self.code.count_ones()
    }
}

impl fmt::Display for AttributePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in 0..self.len() {
            f.write_str(if self.has(a) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for AttributePattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bits = s
            .trim()
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Parse(format!("invalid pattern character {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_bits(&bits)
    }
}

impl Serialize for AttributePattern {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AttributePattern {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A sorted collection of distinct patterns over the same `K`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct PatternSet {
    k: usize,
    codes: Vec<u32>,
}

impl PatternSet {
    pub fn from_codes(k: usize, codes: impl IntoIterator<Item = u32>) -> Self {
        assert!(k <= MAX_ATTRIBUTES);
        let mut codes: Vec<u32> = codes.into_iter().collect();
        codes.sort_unstable();
        codes.dedup();
        debug_assert!(codes.iter().all(|&c| c & !full_mask(k) == 0));
        Self { k, codes }
    }

    pub fn from_patterns(k: usize, patterns: impl IntoIterator<Item = AttributePattern>) -> Result<Self> {
        let mut codes = Vec::new();
        for p in patterns {
            if p.len() != k {
                return Err(Error::Dimension(format!(
                    "pattern {p} has length {}, expected {k}",
                    p.len()
                )));
            }
            codes.push(p.code());
        }
        Ok(Self::from_codes(k, codes))
    }

    /// All `2^K` patterns, subject to `cap`.
    pub fn full(k: usize, cap: usize) -> Result<Self> {
        if k > cap || k >= MAX_ATTRIBUTES {
            return Err(Error::Capacity { k, cap });
        }
        Ok(Self {
            k,
            codes: (0..(1u32 << k)).collect(),
        })
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.codes.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    #[inline]
    pub fn codes(&self) -> &[u32] {
        &self.codes
    }

    pub fn get(&self, idx: usize) -> AttributePattern {
        AttributePattern::from_code(self.k, self.codes[idx])
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = AttributePattern> + '_ {
        self.codes.iter().map(move |&c| AttributePattern::from_code(self.k, c))
    }

    pub fn index_of(&self, code: u32) -> Option<usize> {
        self.codes.binary_search(&code).ok()
    }

    pub fn contains(&self, pattern: &AttributePattern) -> bool {
        pattern.len() == self.k && self.index_of(pattern.code()).is_some()
    }

    pub fn is_subset_of(&self, other: &PatternSet) -> bool {
        self.k == other.k && self.codes.iter().all(|&c| other.index_of(c).is_some())
    }

    /// Patterns of `{0,1}^K` not in this set.
    pub fn complement(&self, cap: usize) -> Result<Self> {
        let full = Self::full(self.k, cap)?;
        Ok(Self {
            k: self.k,
            codes: full
                .codes
                .into_iter()
                .filter(|&c| self.index_of(c).is_none())
                .collect(),
        })
    }

    /// Closed under elementwise AND and OR.
    pub fn is_lattice(&self) -> bool {
        self.codes.iter().all(|&a| {
            self.codes
                .iter()
                .all(|&b| self.index_of(a & b).is_some() && self.index_of(a | b).is_some())
        })
    }
}

impl Serialize for PatternSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for PatternSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let patterns = Vec::<AttributePattern>::deserialize(d)?;
        let k = patterns
            .first()
            .map(AttributePattern::len)
            .ok_or_else(|| serde::de::Error::custom("empty pattern set"))?;
        Self::from_patterns(k, patterns).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn attribute_one_renders_leftmost() {
        let p = AttributePattern::from_bits(&[true, true, false, false]).unwrap();
        assert_eq!(p.to_string(), "1100");
        assert_eq!(p.code(), 0b1100);
        assert!(p.has(0) && p.has(1) && !p.has(2));
    }

    #[test]
    fn covers_is_elementwise_dominance() {
        let a: AttributePattern = "110".parse().unwrap();
        let q: AttributePattern = "100".parse().unwrap();
        let r: AttributePattern = "101".parse().unwrap();
        assert!(a.covers(q.code()));
        assert!(!a.covers(r.code()));
        assert!(a.covers(0));
    }

    #[test]
    fn rejects_bad_characters() {
        assert!("10x".parse::<AttributePattern>().is_err());
    }

    #[test]
    fn canonical_order_is_ascending_string_order() {
        let set = PatternSet::from_patterns(
            3,
            ["110", "000", "100", "111"].iter().map(|s| s.parse().unwrap()),
        )
        .unwrap();
        let rendered: Vec<String> = set.iter().map(|p| p.to_string()).collect();
        assert_eq!(rendered, ["000", "100", "110", "111"]);
    }

    #[test]
    fn complement_partitions_the_cube() {
        let set = PatternSet::from_codes(3, [0, 4, 6, 7]);
        let comp = set.complement(20).unwrap();
        assert_eq!(comp.codes(), &[1, 2, 3, 5]);
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(bits in proptest::collection::vec(any::<bool>(), 1..20)) {
            let p = AttributePattern::from_bits(&bits).unwrap();
            let back: AttributePattern = p.to_string().parse().unwrap();
            prop_assert_eq!(back, p);
            prop_assert_eq!(back.bits(), bits);
        }
    }
}
