//! Posets, maximal ordered partitions and rank-breaking edges.
//!
//! A poset over an offered set is reduced to the finest ordered partition
//! whose cross-block relations are all implied by the poset. Each block except
//! the least preferred one becomes a hyper edge `(B(e), T(e))` with top-set
//! `T(e)` the block and bottom-set `B(e)` everything ranked below it.

use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

/// Default cap on the offer-set size accepted by [`extract_ordered_partition`].
pub const DEFAULT_MAX_OFFER: usize = 128;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PosetError {
    #[error("relation endpoint {0} is not in the offer set")]
    UnknownItem(usize),
    #[error("item {0} appears more than once")]
    DuplicateItem(usize),
    #[error("relations are inconsistent: item {0} lies on a preference cycle")]
    Cycle(usize),
    #[error("offer set of size {size} exceeds the cap of {cap}")]
    TooLarge { size: usize, cap: usize },
    #[error("ordered partition has an empty block at position {0}")]
    EmptyBlock(usize),
    #[error("ordered partition needs at least one block")]
    NoBlocks,
    #[error("complete cuts are not nested")]
    CutsNotNested,
}

/// User preferences as a DAG. `(x, y)` in `relations` means `x ≺ y`: `y` is
/// preferred over `x`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Poset {
    offer_set: Vec<usize>,
    relations: Vec<(usize, usize)>,
}

impl Poset {
    pub fn new(offer_set: Vec<usize>, relations: Vec<(usize, usize)>) -> Result<Self, PosetError> {
        let mut seen = BTreeSet::new();
        for &i in &offer_set {
            if !seen.insert(i) {
                return Err(PosetError::DuplicateItem(i));
            }
        }
        for &(x, y) in &relations {
            for v in [x, y] {
                if !seen.contains(&v) {
                    return Err(PosetError::UnknownItem(v));
                }
            }
        }
        Ok(Self { offer_set, relations })
    }

    /// Builds the poset from set-to-set relations `(lower, upper)`: every item
    /// of `upper` is preferred over every item of `lower`.
    pub fn from_set_relations(
        offer_set: Vec<usize>,
        set_relations: &[(Vec<usize>, Vec<usize>)],
    ) -> Result<Self, PosetError> {
        let mut relations = Vec::new();
        for (lower, upper) in set_relations {
            for &x in lower {
                for &y in upper {
                    relations.push((x, y));
                }
            }
        }
        Self::new(offer_set, relations)
    }

    pub fn offer_set(&self) -> &[usize] {
        &self.offer_set
    }

    pub fn relations(&self) -> &[(usize, usize)] {
        &self.relations
    }
}

/// Disjoint blocks listed from least preferred to most preferred. Items inside
/// a block are kept in ascending id order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OrderedPartition {
    blocks: Vec<Vec<usize>>,
}

impl OrderedPartition {
    pub fn new(blocks: Vec<Vec<usize>>) -> Result<Self, PosetError> {
        if blocks.is_empty() {
            return Err(PosetError::NoBlocks);
        }
        let mut seen = BTreeSet::new();
        let mut sorted = Vec::with_capacity(blocks.len());
        for (k, mut block) in blocks.into_iter().enumerate() {
            if block.is_empty() {
                return Err(PosetError::EmptyBlock(k));
            }
            for &i in &block {
                if !seen.insert(i) {
                    return Err(PosetError::DuplicateItem(i));
                }
            }
            block.sort_unstable();
            sorted.push(block);
        }
        Ok(Self { blocks: sorted })
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Union of the blocks in ascending id order.
    pub fn offer_set(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.blocks.iter().flatten().copied().collect();
        s.sort_unstable();
        s
    }

    pub fn kappa(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    /// The poset whose relations are exactly the cross-block pairs.
    pub fn induced_poset(&self) -> Poset {
        let mut relations = Vec::new();
        for (a, lower) in self.blocks.iter().enumerate() {
            for upper in &self.blocks[a + 1..] {
                for &x in lower {
                    for &y in upper {
                        relations.push((x, y));
                    }
                }
            }
        }
        Poset { offer_set: self.offer_set(), relations }
    }
}

/// A rank-breaking hyper edge: every item of `top` beats every item of `bottom`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RankBreakingEdge {
    top: Vec<usize>,
    bottom: Vec<usize>,
}

impl RankBreakingEdge {
    /// Both sets must be non-empty and disjoint.
    pub fn new(mut top: Vec<usize>, mut bottom: Vec<usize>) -> Result<Self, PosetError> {
        if top.is_empty() {
            return Err(PosetError::EmptyBlock(1));
        }
        if bottom.is_empty() {
            return Err(PosetError::EmptyBlock(0));
        }
        top.sort_unstable();
        bottom.sort_unstable();
        let mut seen = BTreeSet::new();
        for &i in top.iter().chain(&bottom) {
            if !seen.insert(i) {
                return Err(PosetError::DuplicateItem(i));
            }
        }
        Ok(Self { top, bottom })
    }

    pub fn top(&self) -> &[usize] {
        &self.top
    }

    pub fn bottom(&self) -> &[usize] {
        &self.bottom
    }

    /// `|T(e)|`.
    pub fn m(&self) -> usize {
        self.top.len()
    }

    /// `|T(e)| + |B(e)|`.
    pub fn r(&self) -> usize {
        self.top.len() + self.bottom.len()
    }

    /// Items of `T(e) ∪ B(e)`, top-set first.
    pub fn items(&self) -> impl Iterator<Item = usize> + '_ {
        self.top.iter().chain(&self.bottom).copied()
    }
}

/// One user's reduced observation: offered set, ordered partition and its
/// rank-breaking edges (bottom-most edge first).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    offer_set: Vec<usize>,
    partition: OrderedPartition,
    edges: Vec<RankBreakingEdge>,
}

impl Observation {
    pub fn from_partition(partition: OrderedPartition) -> Self {
        let edges = breaking_edges(&partition);
        Self { offer_set: partition.offer_set(), partition, edges }
    }

    pub fn from_poset(poset: &Poset) -> Result<Self, PosetError> {
        Ok(Self::from_partition(extract_ordered_partition(poset)?))
    }

    pub fn offer_set(&self) -> &[usize] {
        &self.offer_set
    }

    /// `κ_j`.
    pub fn kappa(&self) -> usize {
        self.offer_set.len()
    }

    pub fn partition(&self) -> &OrderedPartition {
        &self.partition
    }

    pub fn edges(&self) -> &[RankBreakingEdge] {
        &self.edges
    }

    /// Edges with `m ≤ order`, in edge order.
    pub fn retained_edges(&self, order: usize) -> impl Iterator<Item = &RankBreakingEdge> + '_ {
        self.edges.iter().filter(move |e| e.m() <= order)
    }

    /// `(ℓ_j, p_j)`: count of retained edges and the sum of their top-set sizes.
    pub fn order_stats(&self, order: usize) -> OrderStats {
        order_stats(self.retained_edges(order))
    }
}

/// Per-observation bookkeeping under an order cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OrderStats {
    /// Number of retained edges.
    pub ell: usize,
    /// Sum of `m` over retained edges.
    pub p: usize,
}

pub fn order_stats<'a>(edges: impl IntoIterator<Item = &'a RankBreakingEdge>) -> OrderStats {
    edges.into_iter().fold(OrderStats::default(), |acc, e| OrderStats { ell: acc.ell + 1, p: acc.p + e.m() })
}

/// Extracts the maximal ordered partition consistent with `poset`, with the
/// default offer-set cap.
pub fn extract_ordered_partition(poset: &Poset) -> Result<OrderedPartition, PosetError> {
    extract_ordered_partition_capped(poset, DEFAULT_MAX_OFFER)
}

/// Extracts the maximal ordered partition consistent with `poset`.
///
/// A complete cut is a set `C` such that every element of `C` lies below
/// every element of its complement in the transitive closure. The cuts form a
/// chain and the blocks are the differences of consecutive cuts.
pub fn extract_ordered_partition_capped(
    poset: &Poset,
    max_offer: usize,
) -> Result<OrderedPartition, PosetError> {
    let kappa = poset.offer_set.len();
    if kappa > max_offer {
        return Err(PosetError::TooLarge { size: kappa, cap: max_offer });
    }
    if kappa == 0 {
        return Err(PosetError::NoBlocks);
    }
    let index: HashMap<usize, usize> =
        poset.offer_set.iter().enumerate().map(|(k, &i)| (i, k)).collect();

    // below[x][y]: x ≺ y in the transitive closure.
    let mut below = vec![vec![false; kappa]; kappa];
    for &(x, y) in &poset.relations {
        below[index[&x]][index[&y]] = true;
    }
    transitive_closure(&mut below);
    if let Some(k) = (0..kappa).find(|&k| below[k][k]) {
        return Err(PosetError::Cycle(poset.offer_set[k]));
    }

    let above_count: Vec<usize> =
        below.iter().map(|row| row.iter().filter(|&&b| b).count()).collect();

    // A cut of size k, if it exists, is exactly {x : |up(x)| ≥ κ - k}.
    let mut cuts: Vec<Vec<usize>> = Vec::new();
    for size in 1..kappa {
        let cut: Vec<usize> = (0..kappa).filter(|&x| above_count[x] >= kappa - size).collect();
        if cut.len() != size {
            continue;
        }
        let mut inside = vec![false; kappa];
        for &x in &cut {
            inside[x] = true;
        }
        let complete = cut
            .iter()
            .all(|&x| (0..kappa).filter(|&o| !inside[o]).all(|o| below[x][o]));
        if complete {
            cuts.push(cut);
        }
    }

    for pair in cuts.windows(2) {
        let outer: BTreeSet<usize> = pair[1].iter().copied().collect();
        if !pair[0].iter().all(|x| outer.contains(x)) {
            return Err(PosetError::CutsNotNested);
        }
    }

    let mut assigned = vec![false; kappa];
    let mut blocks = Vec::with_capacity(cuts.len() + 1);
    for cut in cuts.iter().map(|c| c.as_slice()).chain(std::iter::once(&[][..])) {
        let members: Vec<usize> = if cut.is_empty() {
            (0..kappa).filter(|&x| !assigned[x]).collect()
        } else {
            cut.iter().copied().filter(|&x| !assigned[x]).collect()
        };
        for &x in &members {
            assigned[x] = true;
        }
        blocks.push(members.into_iter().map(|x| poset.offer_set[x]).collect());
    }
    OrderedPartition::new(blocks)
}

/// Boolean closure by repeated squaring until a fixed point.
fn transitive_closure(rel: &mut [Vec<bool>]) {
    let n = rel.len();
    loop {
        let mut changed = false;
        let snapshot: Vec<Vec<bool>> = rel.to_vec();
        for (x, row) in snapshot.iter().enumerate() {
            for (z, _) in row.iter().enumerate().filter(|(_, reach)| **reach) {
                for y in 0..n {
                    if snapshot[z][y] && !rel[x][y] {
                        rel[x][y] = true;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
}

/// One edge per block above the bottom block, bottom-most first.
pub fn breaking_edges(partition: &OrderedPartition) -> Vec<RankBreakingEdge> {
    let mut edges = Vec::with_capacity(partition.num_blocks().saturating_sub(1));
    let mut below: Vec<usize> = Vec::new();
    for (a, block) in partition.blocks().iter().enumerate() {
        if a > 0 {
            let mut bottom = below.clone();
            bottom.sort_unstable();
            edges.push(RankBreakingEdge { top: block.clone(), bottom });
        }
        below.extend_from_slice(block);
    }
    edges
}

/// Keeps the edges whose top-set has at most `order` items, preserving order.
pub fn filter_order_m(edges: &[RankBreakingEdge], order: usize) -> Vec<RankBreakingEdge> {
    edges.iter().filter(|e| e.m() <= order).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Items i1..i6 map to ids 1..6.
    fn figure_one_poset() -> Poset {
        Poset::from_set_relations(
            vec![1, 2, 3, 4, 5, 6],
            &[(vec![6], vec![5, 4]), (vec![5], vec![3]), (vec![3, 4], vec![1, 2])],
        )
        .unwrap()
    }

    #[test]
    fn figure_one_partition() {
        let p = extract_ordered_partition(&figure_one_poset()).unwrap();
        assert_eq!(p.blocks(), &[vec![6], vec![3, 4, 5], vec![1, 2]]);
    }

    #[test]
    fn figure_one_edges() {
        let p = extract_ordered_partition(&figure_one_poset()).unwrap();
        let edges = breaking_edges(&p);
        assert_eq!(edges.len(), 2);
        assert_eq!(edges[0].bottom(), &[6]);
        assert_eq!(edges[0].top(), &[3, 4, 5]);
        assert_eq!(edges[1].bottom(), &[3, 4, 5, 6]);
        assert_eq!(edges[1].top(), &[1, 2]);
        assert_eq!((edges[1].m(), edges[1].r()), (2, 6));
        assert!(filter_order_m(&edges, 1).is_empty());
        assert_eq!(filter_order_m(&edges, 3), edges);
        let kept = filter_order_m(&edges, 2);
        assert_eq!(order_stats(&kept), OrderStats { ell: 1, p: 2 });
    }

    #[test]
    fn no_relations_gives_single_block() {
        let p = extract_ordered_partition(&Poset::new(vec![4, 2, 7], vec![]).unwrap()).unwrap();
        assert_eq!(p.blocks(), &[vec![2, 4, 7]]);
        assert!(breaking_edges(&p).is_empty());
    }

    #[test]
    fn chain_gives_singletons() {
        let poset = Poset::new(vec![1, 2, 3], vec![(3, 2), (2, 1)]).unwrap();
        let p = extract_ordered_partition(&poset).unwrap();
        assert_eq!(p.blocks(), &[vec![3], vec![2], vec![1]]);
        let edges = breaking_edges(&p);
        assert_eq!((edges[0].bottom(), edges[0].top()), (&[3][..], &[2][..]));
        assert_eq!((edges[1].bottom(), edges[1].top()), (&[2, 3][..], &[1][..]));
    }

    #[test]
    fn cycles_are_rejected() {
        let poset = Poset::new(vec![0, 1, 2], vec![(0, 1), (1, 2), (2, 0)]).unwrap();
        assert!(matches!(extract_ordered_partition(&poset), Err(PosetError::Cycle(_))));
    }

    #[test]
    fn invalid_inputs() {
        assert_eq!(Poset::new(vec![0, 1], vec![(0, 5)]), Err(PosetError::UnknownItem(5)));
        assert_eq!(Poset::new(vec![0, 0], vec![]), Err(PosetError::DuplicateItem(0)));
        assert_eq!(OrderedPartition::new(vec![vec![0], vec![]]), Err(PosetError::EmptyBlock(1)));
        let big = Poset::new((0..10).collect(), vec![]).unwrap();
        assert!(matches!(
            extract_ordered_partition_capped(&big, 5),
            Err(PosetError::TooLarge { size: 10, cap: 5 })
        ));
    }

    /// True if `blocks` is an ordered partition all of whose cross-block
    /// relations are implied by the closure.
    fn consistent(blocks: &[Vec<usize>], below: &[Vec<bool>]) -> bool {
        blocks.iter().enumerate().all(|(a, lower)| {
            blocks[a + 1..].iter().all(|upper| lower.iter().all(|&x| upper.iter().all(|&y| below[x][y])))
        })
    }

    fn random_dag(kappa: usize, bits: &[bool]) -> Poset {
        let mut relations = Vec::new();
        let mut k = 0;
        for x in 0..kappa {
            for y in x + 1..kappa {
                if bits[k % bits.len()] {
                    relations.push((x, y));
                }
                k += 1;
            }
        }
        Poset::new((0..kappa).collect(), relations).unwrap()
    }

    proptest! {
        #[test]
        fn round_trip_through_induced_poset(sizes in prop::collection::vec(1usize..4, 1..5)) {
            let mut next = 0;
            let blocks: Vec<Vec<usize>> = sizes.iter().map(|&s| {
                let b = (next..next + s).collect();
                next += s;
                b
            }).collect();
            let p = OrderedPartition::new(blocks).unwrap();
            let q = extract_ordered_partition(&p.induced_poset()).unwrap();
            prop_assert_eq!(p, q);
        }

        #[test]
        fn extracted_partition_is_consistent_and_maximal(
            kappa in 2usize..8,
            bits in prop::collection::vec(any::<bool>(), 28),
        ) {
            let poset = random_dag(kappa, &bits);
            let p = extract_ordered_partition(&poset).unwrap();
            let mut below = vec![vec![false; kappa]; kappa];
            for &(x, y) in poset.relations() {
                below[x][y] = true;
            }
            transitive_closure(&mut below);
            prop_assert!(consistent(p.blocks(), &below));
            // No block can be split into two consistent ordered pieces.
            for (a, block) in p.blocks().iter().enumerate() {
                let s = block.len();
                if s < 2 {
                    continue;
                }
                for mask in 1..(1u32 << s) - 1 {
                    let lo: Vec<usize> = (0..s).filter(|k| mask >> k & 1 == 1).map(|k| block[k]).collect();
                    let hi: Vec<usize> = (0..s).filter(|k| mask >> k & 1 == 0).map(|k| block[k]).collect();
                    let mut refined = p.blocks().to_vec();
                    refined.splice(a..=a, [lo, hi]);
                    prop_assert!(!consistent(&refined, &below));
                }
            }
        }
    }
}
