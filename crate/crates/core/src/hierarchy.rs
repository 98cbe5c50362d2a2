//! Attribute hierarchies: prerequisite DAGs over `K` attributes.
//!
//! Attribute indices are 0-based throughout the library API. The text and JSON
//! file formats (see [`crate::io`]) use 1-based indices.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pattern::{attr_bit, AttributePattern, PatternSet, MAX_ATTRIBUTES};

/// Default cap on `K` for exhaustive pattern enumeration.
pub const DEFAULT_ENUMERATION_CAP: usize = 20;

/// A prerequisite DAG with its transitive closure.
///
/// `k -> l` means attribute `l` can only be mastered after attribute `k`.
/// The closure (reachability matrix `G`) is authoritative; the edge list the
/// hierarchy was built from is only kept for display.
#[derive(Clone, Debug)]
pub struct Hierarchy {
    k: usize,
    edges: Vec<(usize, usize)>,
    /// `ancestors[l]`: code with the bit of every `k` such that `G[k][l] = 1`.
    ancestors: Vec<u32>,
    /// `descendants[k]`: code with the bit of every `l` such that `G[k][l] = 1`.
    descendants: Vec<u32>,
    topo_order: Vec<usize>,
}

impl PartialEq for Hierarchy {
    /// Hierarchies are equal when their closures are.
    fn eq(&self, other: &Self) -> bool {
        self.k == other.k && self.ancestors == other.ancestors
    }
}

impl Eq for Hierarchy {}

/// JSON form: `{"K": 4, "edges": [[1, 3], [1, 4]]}` with 1-based attributes
/// and the direct edges of the closure.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HierarchyJson {
    #[serde(rename = "K")]
    k: usize,
    edges: Vec<(usize, usize)>,
}

impl Serialize for Hierarchy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        HierarchyJson {
            k: self.k,
            edges: self.direct_edges().into_iter().map(|(a, b)| (a + 1, b + 1)).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Hierarchy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = HierarchyJson::deserialize(d)?;
        let mut edges = Vec::with_capacity(raw.edges.len());
        for (a, b) in raw.edges {
            if a == 0 || b == 0 {
                return Err(serde::de::Error::custom("attributes are numbered from 1"));
            }
            edges.push((a - 1, b - 1));
        }
        Hierarchy::new(raw.k, &edges).map_err(serde::de::Error::custom)
    }
}

impl Hierarchy {
    pub fn new(k: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if k == 0 || k > MAX_ATTRIBUTES {
            return Err(Error::InvalidArgument(format!(
                "attribute count must be in [1, {MAX_ATTRIBUTES}], got {k}"
            )));
        }
        let mut children = vec![Vec::new(); k];
        let mut indegree = vec![0usize; k];
        let mut stored = Vec::with_capacity(edges.len());
        for &(from, to) in edges {
            for index in [from, to] {
                if index >= k {
                    return Err(Error::Index { index, k });
                }
            }
            if from == to {
                return Err(Error::Cycle { attribute: from });
            }
            if stored.contains(&(from, to)) {
                continue;
            }
            stored.push((from, to));
            children[from].push(to);
            indegree[to] += 1;
        }

        // Kahn's algorithm, smallest ready index first.
        let mut ready: BinaryHeap<Reverse<usize>> =
            (0..k).filter(|&v| indegree[v] == 0).map(Reverse).collect();
        let mut topo_order = Vec::with_capacity(k);
        let mut remaining = indegree.clone();
        while let Some(Reverse(v)) = ready.pop() {
            topo_order.push(v);
            for &c in &children[v] {
                remaining[c] -= 1;
                if remaining[c] == 0 {
                    ready.push(Reverse(c));
                }
            }
        }
        if topo_order.len() < k {
            let attribute = (0..k).find(|&v| remaining[v] > 0).unwrap_or(0);
            return Err(Error::Cycle { attribute });
        }

        let mut ancestors = vec![0u32; k];
        for &v in &topo_order {
            for &c in &children[v] {
                ancestors[c] |= ancestors[v] | attr_bit(k, v);
            }
        }
        let mut descendants = vec![0u32; k];
        for (l, &anc) in ancestors.iter().enumerate() {
            for (a, desc) in descendants.iter_mut().enumerate() {
                if anc & attr_bit(k, a) != 0 {
                    *desc |= attr_bit(k, l);
                }
            }
        }

        stored.sort_unstable();
        Ok(Self {
            k,
            edges: stored,
            ancestors,
            descendants,
            topo_order,
        })
    }

    /// No prerequisites at all.
    pub fn empty(k: usize) -> Result<Self> {
        Self::new(k, &[])
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    /// Edges as supplied (deduplicated, sorted).
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Code of all attributes that are prerequisites of `attr`.
    #[inline]
    pub fn ancestor_mask(&self, attr: usize) -> u32 {
        self.ancestors[attr]
    }

    /// Code of all attributes that have `attr` as a prerequisite.
    #[inline]
    pub fn descendant_mask(&self, attr: usize) -> u32 {
        self.descendants[attr]
    }

    /// `G[from][to]`.
    #[inline]
    pub fn reaches(&self, from: usize, to: usize) -> bool {
        self.ancestors[to] & attr_bit(self.k, from) != 0
    }

    /// The `K x K` reachability matrix, zero diagonal.
    pub fn reachability(&self) -> Vec<Vec<u8>> {
        (0..self.k)
            .map(|from| (0..self.k).map(|to| self.reaches(from, to) as u8).collect())
            .collect()
    }

    pub fn closure_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for from in 0..self.k {
            for to in 0..self.k {
                if self.reaches(from, to) {
                    out.push((from, to));
                }
            }
        }
        out
    }

    /// Edges of the transitive reduction.
    pub fn direct_edges(&self) -> Vec<(usize, usize)> {
        self.closure_edges()
            .into_iter()
            .filter(|&(from, to)| self.descendants[from] & self.ancestors[to] == 0)
            .collect()
    }

    pub fn direct_parents(&self, attr: usize) -> Vec<usize> {
        self.direct_edges()
            .into_iter()
            .filter(|&(_, to)| to == attr)
            .map(|(from, _)| from)
            .collect()
    }

    /// Topological order, smallest index first among ready attributes.
    pub fn topological_order(&self) -> &[usize] {
        &self.topo_order
    }

    pub fn is_permissible(&self, pattern: &AttributePattern) -> bool {
        debug_assert_eq!(pattern.len(), self.k);
        self.code_is_permissible(pattern.code())
    }

    #[inline]
    pub(crate) fn code_is_permissible(&self, code: u32) -> bool {
        (0..self.k).all(|a| code & attr_bit(self.k, a) == 0 || code & self.ancestors[a] == self.ancestors[a])
    }

    /// `A(E)` in canonical order, with the default enumeration cap.
    pub fn permissible_patterns(&self) -> Result<PatternSet> {
        self.permissible_patterns_capped(DEFAULT_ENUMERATION_CAP)
    }

    pub fn permissible_patterns_capped(&self, cap: usize) -> Result<PatternSet> {
        let full = PatternSet::full(self.k, cap)?;
        Ok(PatternSet::from_codes(
            self.k,
            full.codes()
                .iter()
                .copied()
                .filter(|&c| self.code_is_permissible(c)),
        ))
    }

    /// Rebuild the hierarchy implied by a set of permissible patterns:
    /// `k -> l` whenever `l` is present only in patterns that also have `k`.
    pub fn from_patterns(patterns: &PatternSet) -> Result<Self> {
        if patterns.is_empty() {
            return Err(Error::InvalidArgument("pattern set is empty".into()));
        }
        let k = patterns.k();
        // column[a] lists, as a bitset over pattern positions, where attribute a is present.
        let words = patterns.len().div_ceil(64);
        let mut columns = vec![vec![0u64; words]; k];
        for (pos, p) in patterns.iter().enumerate() {
            for (a, col) in columns.iter_mut().enumerate() {
                if p.has(a) {
                    col[pos / 64] |= 1 << (pos % 64);
                }
            }
        }
        let mut edges = Vec::new();
        for from in 0..k {
            for to in 0..k {
                if from == to {
                    continue;
                }
                let implied = columns[to]
                    .iter()
                    .zip(&columns[from])
                    .all(|(t, f)| t & !f == 0);
                if implied {
                    if columns[to] == columns[from] {
                        return Err(Error::MergedAttributes {
                            first: from.min(to),
                            second: from.max(to),
                        });
                    }
                    edges.push((from, to));
                }
            }
        }
        Self::new(k, &edges)
    }

    pub fn roles(&self) -> Vec<AttributeRole> {
        (0..self.k)
            .map(|a| AttributeRole::from_links(self.ancestors[a] != 0, self.descendants[a] != 0))
            .collect()
    }

    /// A single path `a1 -> a2 -> ... -> aK` covering every attribute (`K >= 2`).
    pub fn is_linear(&self) -> bool {
        if self.k < 2 {
            return false;
        }
        // In a total order the i-th attribute of the topological order has
        // exactly i ancestors.
        self.topo_order
            .iter()
            .enumerate()
            .all(|(i, &a)| self.ancestors[a].count_ones() as usize == i)
    }

    /// The hierarchy induced on a subset of attributes (closure restricted,
    /// attributes renumbered in the order given).
    pub fn induced(&self, keep: &[usize]) -> Result<Self> {
        for &a in keep {
            if a >= self.k {
                return Err(Error::Index { index: a, k: self.k });
            }
        }
        let mut edges = Vec::new();
        for (i, &a) in keep.iter().enumerate() {
            for (j, &b) in keep.iter().enumerate() {
                if self.reaches(a, b) {
                    edges.push((i, j));
                }
            }
        }
        Self::new(keep.len(), &edges)
    }
}

/// Position of an attribute in the hierarchy graph.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeRole {
    /// Has a child, no parent.
    Ancestor,
    /// Has both.
    Intermediate,
    /// Has a parent, no child.
    Leaf,
    /// Has neither.
    Singleton,
}

impl AttributeRole {
    fn from_links(has_parent: bool, has_child: bool) -> Self {
        match (has_parent, has_child) {
            (false, true) => Self::Ancestor,
            (true, true) => Self::Intermediate,
            (true, false) => Self::Leaf,
            (false, false) => Self::Singleton,
        }
    }

    /// Minimum number of measurements in the sparsified Q-matrix required by
    /// the strict identifiability conditions for DINA.
    pub fn required_measurements(self) -> usize {
        match self {
            Self::Intermediate => 1,
            Self::Ancestor | Self::Leaf => 2,
            Self::Singleton => 3,
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    fn patterns(set: &PatternSet) -> Vec<String> {
        set.iter().map(|p| p.to_string()).collect()
    }

    fn two_by_two() -> Hierarchy {
        Hierarchy::new(4, &[(0, 2), (0, 3), (1, 2), (1, 3)]).unwrap()
    }

    pub(crate) fn diamond() -> Hierarchy {
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
        Hierarchy::new(8, &edges).unwrap()
    }

    #[test]
    fn reachability_of_the_two_layer_example() {
        let g = two_by_two().reachability();
        assert_eq!(g[0], [0, 0, 1, 1]);
        assert_eq!(g[1], [0, 0, 1, 1]);
        assert_eq!(g[2], [0, 0, 0, 0]);
        assert_eq!(g[3], [0, 0, 0, 0]);
    }

    #[test]
    fn no_edges_gives_zero_reachability() {
        let h = Hierarchy::empty(3).unwrap();
        assert!(h.reachability().iter().flatten().all(|&x| x == 0));
    }

    #[test]
    fn closure_adds_transitive_edges() {
        let h = Hierarchy::new(3, &[(0, 1), (1, 2)]).unwrap();
        assert!(h.reaches(0, 2));
        assert_eq!(h.direct_edges(), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn two_cycle_is_rejected() {
        assert!(matches!(
            Hierarchy::new(2, &[(0, 1), (1, 0)]),
            Err(Error::Cycle { .. })
        ));
        assert!(matches!(Hierarchy::new(2, &[(0, 0)]), Err(Error::Cycle { .. })));
    }

    #[test]
    fn out_of_range_endpoint_is_rejected() {
        assert!(matches!(
            Hierarchy::new(3, &[(0, 3)]),
            Err(Error::Index { index: 3, k: 3 })
        ));
    }

    #[test]
    fn two_layer_example_has_seven_patterns() {
        let a = two_by_two().permissible_patterns().unwrap();
        assert_eq!(
            patterns(&a),
            ["0000", "0100", "1000", "1100", "1101", "1110", "1111"]
        );
    }

    #[test]
    fn diamond_has_fifteen_patterns_in_table_order() {
        let a = diamond().permissible_patterns().unwrap();
        assert_eq!(
            patterns(&a),
            [
                "00000000", "10000000", "10100000", "11000000", "11100000", "11100100",
                "11101000", "11101100", "11110000", "11110100", "11111000", "11111100",
                "11111101", "11111110", "11111111",
            ]
        );
    }

    #[test]
    fn no_edges_enumerates_the_cube() {
        let a = Hierarchy::empty(2).unwrap().permissible_patterns().unwrap();
        assert_eq!(patterns(&a), ["00", "01", "10", "11"]);
    }

    #[test]
    fn linear_chain_of_five_matches_brute_force() {
        let h = Hierarchy::new(5, &[(0, 1), (1, 2), (2, 3), (3, 4)]).unwrap();
        // Brute force: keep the codes where no edge (a, b) has b present and a absent.
        let brute = (0u32..32)
            .filter(|&c| {
                (0..4).all(|a| {
                    let has = |x: usize| c & (1 << (4 - x)) != 0;
                    !has(a + 1) || has(a)
                })
            })
            .count();
        assert_eq!(brute, 6);
        assert_eq!(h.permissible_patterns().unwrap().len(), brute);
    }

    #[test]
    fn enumeration_cap_is_enforced() {
        let h = Hierarchy::empty(6).unwrap();
        assert!(matches!(
            h.permissible_patterns_capped(5),
            Err(Error::Capacity { k: 6, cap: 5 })
        ));
    }

    #[test]
    fn reconstructs_two_layer_example() {
        let a = two_by_two().permissible_patterns().unwrap();
        let h = Hierarchy::from_patterns(&a).unwrap();
        assert_eq!(h.closure_edges(), vec![(0, 2), (0, 3), (1, 2), (1, 3)]);
    }

    #[test]
    fn full_cube_reconstructs_to_no_edges() {
        let h = Hierarchy::from_patterns(&PatternSet::full(4, 20).unwrap()).unwrap();
        assert!(h.closure_edges().is_empty());
    }

    #[test]
    fn diamond_survives_five_missing_patterns() {
        let d = diamond();
        let a = d.permissible_patterns().unwrap();
        // Table positions 2, 5, 6, 11, 12 (1-based).
        let dropped = [1usize, 4, 5, 10, 11];
        let kept = PatternSet::from_codes(
            8,
            a.codes()
                .iter()
                .enumerate()
                .filter(|(i, _)| !dropped.contains(i))
                .map(|(_, &c)| c),
        );
        assert_eq!(kept.len(), 10);
        assert_eq!(Hierarchy::from_patterns(&kept).unwrap(), d);
    }

    #[test]
    fn identical_columns_are_reported() {
        let a = PatternSet::from_patterns(2, ["00", "11"].iter().map(|s| s.parse().unwrap())).unwrap();
        assert!(matches!(
            Hierarchy::from_patterns(&a),
            Err(Error::MergedAttributes { first: 0, second: 1 })
        ));
    }

    #[test]
    fn figure_three_roles() {
        let h = Hierarchy::new(8, &[(0, 1), (1, 2), (1, 3), (2, 4), (3, 4), (4, 5)]).unwrap();
        use AttributeRole::*;
        assert_eq!(
            h.roles(),
            [Ancestor, Intermediate, Intermediate, Intermediate, Intermediate, Leaf, Singleton, Singleton]
        );
    }

    #[test]
    fn roles_ignore_redundant_closure_edges() {
        let reduced = Hierarchy::new(3, &[(0, 1), (1, 2)]).unwrap();
        let closed = Hierarchy::new(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        assert_eq!(reduced, closed);
        assert_eq!(reduced.roles(), closed.roles());
        assert_eq!(closed.direct_edges(), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn simple_roles() {
        let h = Hierarchy::empty(3).unwrap();
        assert!(h.roles().iter().all(|&r| r == AttributeRole::Singleton));
        let h = Hierarchy::new(2, &[(0, 1)]).unwrap();
        assert_eq!(h.roles(), [AttributeRole::Ancestor, AttributeRole::Leaf]);
    }

    #[test]
    fn permissibility() {
        let h = two_by_two();
        assert!(h.is_permissible(&"1110".parse().unwrap()));
        assert!(!h.is_permissible(&"0010".parse().unwrap()));
        assert!(h.is_permissible(&AttributePattern::zeros(4)));
    }

    #[test]
    fn linearity() {
        assert!(Hierarchy::new(3, &[(0, 1), (1, 2)]).unwrap().is_linear());
        assert!(Hierarchy::new(3, &[(2, 0), (0, 1)]).unwrap().is_linear());
        assert!(!diamond().is_linear());
        assert!(!Hierarchy::new(3, &[(0, 1)]).unwrap().is_linear());
    }

    /// Random DAG: edges only go from lower to higher position in a random
    /// permutation, so the result is always acyclic.
    pub(crate) fn arb_dag(max_k: usize) -> impl Strategy<Value = Hierarchy> {
        (2..=max_k)
            .prop_flat_map(|k| {
                (
                    Just(k),
                    Just((0..k).collect::<Vec<_>>()).prop_shuffle(),
                    proptest::collection::vec(any::<bool>(), k * (k - 1) / 2),
                )
            })
            .prop_map(|(k, perm, mask)| {
                let mut edges = Vec::new();
                let mut idx = 0;
                for i in 0..k {
                    for j in (i + 1)..k {
                        if mask[idx] {
                            edges.push((perm[i], perm[j]));
                        }
                        idx += 1;
                    }
                }
                Hierarchy::new(k, &edges).unwrap()
            })
    }

    proptest! {
        #[test]
        fn reconstruct_inverts_enumerate(h in arb_dag(8)) {
            let a = h.permissible_patterns().unwrap();
            prop_assert_eq!(Hierarchy::from_patterns(&a).unwrap(), h);
        }

        #[test]
        fn permissible_set_is_a_lattice(h in arb_dag(7)) {
            let a = h.permissible_patterns().unwrap();
            prop_assert!(a.is_lattice());
            prop_assert!(a.contains(&AttributePattern::zeros(h.k())));
        }

        #[test]
        fn adding_an_edge_never_grows_the_set(h in arb_dag(7), pick in any::<proptest::sample::Index>()) {
            let k = h.k();
            let topo = h.topological_order().to_vec();
            // Any pair ordered consistently with the topological order keeps the graph acyclic.
            let pairs: Vec<(usize, usize)> = (0..k)
                .flat_map(|i| ((i + 1)..k).map(move |j| (i, j)))
                .map(|(i, j)| (topo[i], topo[j]))
                .collect();
            let extra = pairs[pick.index(pairs.len())];
            let mut edges = h.closure_edges();
            edges.push(extra);
            let bigger = Hierarchy::new(k, &edges).unwrap();
            prop_assert!(bigger.permissible_patterns().unwrap().len() <= h.permissible_patterns().unwrap().len());
        }

        #[test]
        fn at_least_k_plus_one_patterns(h in arb_dag(6)) {
            prop_assert!(h.permissible_patterns().unwrap().len() > h.k());
        }
    }

    #[test]
    fn empty_hierarchy_gives_two_to_the_k() {
        for k in 1..=8 {
            assert_eq!(Hierarchy::empty(k).unwrap().permissible_patterns().unwrap().len(), 1 << k);
        }
    }
}
