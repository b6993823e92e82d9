//! Fenwick-tree decomposition of the token prefix into power-of-two buckets,
//! and the hierarchical state store that maintains one state per active
//! bucket with binary-carry merging.
//!
//! Level `l` corresponds to bit `l` of the prefix length n and owns a bucket
//! of exactly 2^l tokens; level 0 is the finest (most recent) scale. After
//! absorbing n tokens, exactly the set bits of n carry a state.

use crate::error::{Error, Result};

/// One bucket of the prefix partition: level = bit index, span [start, end).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bucket {
    pub level: usize,
    pub start: usize,
    pub end: usize,
}

/// Partition of the prefix [0, n) into buckets, largest (oldest) first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BucketPartition {
    pub n: usize,
    pub buckets: Vec<Bucket>,
}

/// Decompose n into its set bits, largest first; the bucket for bit l spans
/// 2^l tokens, with offsets accumulating left to right.
pub fn partition(n: usize) -> Result<BucketPartition> {
    if n == 0 {
        return Err(Error::EmptyPrefix);
    }
    let mut buckets = Vec::with_capacity(n.count_ones() as usize);
    let mut offset = 0;
    for level in (0..usize::BITS as usize).rev() {
        if n & (1 << level) != 0 {
            let size = 1 << level;
            buckets.push(Bucket {
                level,
                start: offset,
                end: offset + size,
            });
            offset += size;
        }
    }
    Ok(BucketPartition { n, buckets })
}

/// Set bits of n, ascending: the active memory levels after n tokens.
pub fn active_levels(n: usize) -> Vec<usize> {
    (0..usize::BITS as usize).filter(|l| n & (1 << l) != 0).collect()
}

/// Number of levels needed for prefixes up to t_max tokens:
/// floor(log2(t_max)) + 1, so that n = t_max itself has a slot for its top bit.
pub fn max_levels(t_max: usize) -> usize {
    assert!(t_max >= 1);
    (usize::BITS - t_max.leading_zeros()) as usize
}

/// Hierarchical per-level state store, generic over the state type so the
/// same carry logic drives both plain matrices and tape nodes.
#[derive(Debug, Clone)]
pub struct HierarchicalMemory<S> {
    n: usize,
    capacity: usize,
    levels: Vec<Option<S>>,
    merge_count: usize,
}

impl<S> HierarchicalMemory<S> {
    /// A memory able to absorb up to t_max tokens.
    pub fn new(t_max: usize) -> Self {
        let l_max = max_levels(t_max.max(1));
        HierarchicalMemory {
            n: 0,
            capacity: t_max,
            levels: (0..l_max).map(|_| None).collect(),
            merge_count: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    /// Total carry merges performed so far; amortized <= 2n over n appends.
    pub fn merge_count(&self) -> usize {
        self.merge_count
    }

    pub fn active_levels(&self) -> Vec<usize> {
        active_levels(self.n)
    }

    pub fn read_level(&self, level: usize) -> Result<&S> {
        self.levels
            .get(level)
            .and_then(|s| s.as_ref())
            .ok_or(Error::InactiveLevel { level, n: self.n })
    }

    /// Absorb one token's state: start a carry at level 0 and merge upward
    /// while the corresponding bit of the old n is set, exactly like a binary
    /// counter increment. Returns the level where the carry settled.
    pub fn append_with(
        &mut self,
        leaf: S,
        mut merge: impl FnMut(S, S) -> Result<S>,
    ) -> Result<usize> {
        if self.n >= self.capacity {
            return Err(Error::MemoryFull {
                n: self.n,
                capacity: self.capacity,
            });
        }
        let mut carry = leaf;
        let mut level = 0;
        while self.n & (1 << level) != 0 {
            let existing = self.levels[level].take().expect("bit set implies state");
            carry = merge(existing, carry)?;
            self.merge_count += 1;
            level += 1;
        }
        debug_assert!(level < self.levels.len());
        self.levels[level] = Some(carry);
        self.n += 1;
        Ok(level)
    }
}

/// Plain-f64 memory over key/value outer products: S[l] is a d_k x d_v
/// matrix holding sum of k_i v_i^T over the level's bucket.
#[derive(Debug, Clone)]
pub struct KvMemory {
    d_k: usize,
    d_v: usize,
    inner: HierarchicalMemory<Vec<f64>>,
}

impl KvMemory {
    pub fn new(t_max: usize, d_k: usize, d_v: usize) -> Self {
        KvMemory {
            d_k,
            d_v,
            inner: HierarchicalMemory::new(t_max),
        }
    }

    pub fn n(&self) -> usize {
        self.inner.n()
    }

    pub fn level_count(&self) -> usize {
        self.inner.level_count()
    }

    pub fn merge_count(&self) -> usize {
        self.inner.merge_count()
    }

    pub fn active_levels(&self) -> Vec<usize> {
        self.inner.active_levels()
    }

    pub fn read_level(&self, level: usize) -> Result<&[f64]> {
        self.inner.read_level(level).map(|s| s.as_slice())
    }

    pub fn append(&mut self, k: &[f64], v: &[f64]) -> Result<()> {
        if k.len() != self.d_k || v.len() != self.d_v {
            return Err(Error::ShapeMismatch {
                op: "KvMemory::append",
                lhs: vec![k.len(), v.len()],
                rhs: vec![self.d_k, self.d_v],
            });
        }
        let mut leaf = vec![0.0; self.d_k * self.d_v];
        for i in 0..self.d_k {
            for j in 0..self.d_v {
                leaf[i * self.d_v + j] = k[i] * v[j];
            }
        }
        self.inner.append_with(leaf, |mut a, b| {
            for (x, y) in a.iter_mut().zip(&b) {
                *x += y;
            }
            Ok(a)
        })?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn partition_base_cases() {
        let p = partition(1).unwrap();
        assert_eq!(p.buckets, vec![Bucket { level: 0, start: 0, end: 1 }]);

        // 13 = 0b1101
        let p = partition(13).unwrap();
        assert_eq!(
            p.buckets,
            vec![
                Bucket { level: 3, start: 0, end: 8 },
                Bucket { level: 2, start: 8, end: 12 },
                Bucket { level: 0, start: 12, end: 13 },
            ]
        );
        assert!(matches!(partition(0), Err(Error::EmptyPrefix)));
    }

    #[test]
    fn partition_exhaustive_against_naive_bit_scan() {
        for n in 1usize..=4096 {
            let p = partition(n).unwrap();
            // Naive oracle: sizes are the set bits, descending.
            let naive: Vec<usize> = (0..13).rev().filter(|b| n & (1 << b) != 0).map(|b| 1 << b).collect();
            let sizes: Vec<usize> = p.buckets.iter().map(|b| b.end - b.start).collect();
            assert_eq!(sizes, naive, "n={n}");
            // Contiguous disjoint cover of [0, n).
            let mut cursor = 0;
            for b in &p.buckets {
                assert_eq!(b.start, cursor);
                assert_eq!(b.end - b.start, 1 << b.level);
                cursor = b.end;
            }
            assert_eq!(cursor, n);
            // Strictly decreasing sizes; last bucket holds token n-1 at the
            // lowest set bit; count bound.
            for w in p.buckets.windows(2) {
                assert!(w[0].end - w[0].start > w[1].end - w[1].start);
            }
            let last = p.buckets.last().unwrap();
            assert_eq!(last.end, n);
            assert_eq!(last.level, n.trailing_zeros() as usize);
            assert_eq!(p.buckets.len(), n.count_ones() as usize);
            assert!(p.buckets.len() <= (n as f64).log2().floor() as usize + 1);
            // active_levels agrees with the partition.
            let mut lv: Vec<usize> = p.buckets.iter().map(|b| b.level).collect();
            lv.sort_unstable();
            assert_eq!(lv, active_levels(n));
        }
    }

    #[test]
    fn active_levels_examples() {
        assert_eq!(active_levels(1), vec![0]);
        assert_eq!(active_levels(13), vec![0, 2, 3]);
        assert_eq!(active_levels(128), vec![7]);
    }

    #[test]
    fn max_levels_covers_top_bit() {
        assert_eq!(max_levels(1), 1);
        assert_eq!(max_levels(127), 7);
        assert_eq!(max_levels(128), 8);
        assert_eq!(max_levels(512), 10);
    }

    #[test]
    fn append_first_token_and_carry_chain() {
        let mut mem = KvMemory::new(8, 2, 2);
        mem.append(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(mem.n(), 1);
        assert_eq!(mem.active_levels(), vec![0]);
        assert_eq!(mem.read_level(0).unwrap(), &[3.0, 4.0, 6.0, 8.0]);

        // From n=3 (levels 0 and 1 set), one append carries into a single
        // level-2 state equal to the sum over all four tokens.
        let mut mem = KvMemory::new(8, 1, 1);
        for x in [1.0, 2.0, 3.0] {
            mem.append(&[1.0], &[x]).unwrap();
        }
        assert_eq!(mem.active_levels(), vec![0, 1]);
        mem.append(&[1.0], &[4.0]).unwrap();
        assert_eq!(mem.active_levels(), vec![2]);
        assert_eq!(mem.read_level(2).unwrap(), &[10.0]);
        assert!(mem.read_level(0).is_err());
        assert!(mem.read_level(1).is_err());
    }

    #[test]
    fn read_inactive_level_errors() {
        let mut mem = KvMemory::new(8, 1, 1);
        mem.append(&[1.0], &[1.0]).unwrap();
        mem.append(&[1.0], &[1.0]).unwrap();
        // n=2: bit 0 clear.
        assert!(matches!(
            mem.read_level(0),
            Err(Error::InactiveLevel { level: 0, n: 2 })
        ));
    }

    #[test]
    fn capacity_enforced() {
        let mut mem = KvMemory::new(2, 1, 1);
        mem.append(&[1.0], &[1.0]).unwrap();
        mem.append(&[1.0], &[1.0]).unwrap();
        assert!(matches!(
            mem.append(&[1.0], &[1.0]),
            Err(Error::MemoryFull { n: 2, capacity: 2 })
        ));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut mem = KvMemory::new(4, 3, 2);
        assert!(mem.append(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(mem.append(&[1.0, 2.0, 3.0], &[1.0]).is_err());
    }

    /// Every present level state equals a from-scratch bucket sum, and the
    /// sum over levels conserves the running outer-product mass.
    #[test]
    fn incremental_matches_from_scratch_recomputation() {
        let d_k = 3;
        let d_v = 2;
        let mut rng = stream_rng(42, 0);
        let n_max = 256;
        let ks: Vec<Vec<f64>> = (0..n_max)
            .map(|_| (0..d_k).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let vs: Vec<Vec<f64>> = (0..n_max)
            .map(|_| (0..d_v).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();

        let outer_sum = |range: std::ops::Range<usize>| -> Vec<f64> {
            let mut acc = vec![0.0; d_k * d_v];
            for i in range {
                for a in 0..d_k {
                    for b in 0..d_v {
                        acc[a * d_v + b] += ks[i][a] * vs[i][b];
                    }
                }
            }
            acc
        };

        let mut mem = KvMemory::new(n_max, d_k, d_v);
        for t in 0..n_max {
            mem.append(&ks[t], &vs[t]).unwrap();
            let n = t + 1;
            let part = partition(n).unwrap();
            // Per-level from-scratch recomputation.
            for b in &part.buckets {
                let expect = outer_sum(b.start..b.end);
                let got = mem.read_level(b.level).unwrap();
                for (g, e) in got.iter().zip(&expect) {
                    assert!((g - e).abs() < 1e-12, "n={n} level={}", b.level);
                }
            }
            // Mass conservation.
            let total = outer_sum(0..n);
            let mut from_levels = vec![0.0; d_k * d_v];
            for l in mem.active_levels() {
                for (acc, x) in from_levels.iter_mut().zip(mem.read_level(l).unwrap()) {
                    *acc += x;
                }
            }
            for (g, e) in from_levels.iter().zip(&total) {
                assert!((g - e).abs() < 1e-12, "mass at n={n}");
            }
        }
    }

    #[test]
    fn amortized_merge_bound() {
        let mut mem = KvMemory::new(4096, 1, 1);
        for _ in 0..4096 {
            mem.append(&[1.0], &[1.0]).unwrap();
        }
        assert!(mem.merge_count() <= 2 * 4096, "merges = {}", mem.merge_count());
    }

    proptest! {
        #[test]
        fn prop_partition_covers_prefix(n in 1usize..100_000) {
            let p = partition(n).unwrap();
            let mut cursor = 0;
            for b in &p.buckets {
                prop_assert_eq!(b.start, cursor);
                prop_assert_eq!(b.end - b.start, 1usize << b.level);
                cursor = b.end;
            }
            prop_assert_eq!(cursor, n);
            prop_assert_eq!(p.buckets.len(), n.count_ones() as usize);
        }
    }
}
