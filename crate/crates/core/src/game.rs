//! Players, coalitions and memoized utility evaluation.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use dashmap::mapref::entry::Entry;
use dashmap::DashMap;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Maximum number of players a [`Coalition`] can hold.
pub const MAX_PLAYERS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PlayerId(pub usize);

impl PlayerId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A set of players, stored as a bit mask.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Coalition(u64);

impl Coalition {
    pub const EMPTY: Coalition = Coalition(0);

    pub fn from_bits(bits: u64) -> Self {
        Coalition(bits)
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    /// The grand coalition `{0, .., n-1}`.
    pub fn full(n: usize) -> Self {
        assert!(n <= MAX_PLAYERS, "at most {MAX_PLAYERS} players");
        if n == MAX_PLAYERS {
            Coalition(u64::MAX)
        } else {
            Coalition((1u64 << n) - 1)
        }
    }

    pub fn singleton(i: usize) -> Self {
        Coalition(1u64 << i)
    }

    pub fn contains(self, i: usize) -> bool {
        i < MAX_PLAYERS && self.0 & (1u64 << i) != 0
    }

    #[must_use]
    pub fn with(self, i: usize) -> Self {
        Coalition(self.0 | (1u64 << i))
    }

    #[must_use]
    pub fn without(self, i: usize) -> Self {
        Coalition(self.0 & !(1u64 << i))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// True when no bit at or above `n` is set.
    pub fn fits(self, n: usize) -> bool {
        n >= MAX_PLAYERS || self.0 >> n == 0
    }

    pub fn members(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let i = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(i)
            }
        })
    }
}

impl fmt::Debug for Coalition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.members()).finish()
    }
}

/// Builds a coalition from player indices; duplicates collapse.
pub fn coalition_from_members(indices: &[i64], n: usize) -> Result<Coalition> {
    let mut c = Coalition::EMPTY;
    for &i in indices {
        if i < 0 || i as u64 >= n as u64 || i as usize >= MAX_PLAYERS {
            return Err(Error::IndexOutOfRange { index: i, n });
        }
        c = c.with(i as usize);
    }
    Ok(c)
}

/// A deterministic utility function over coalitions.
///
/// Implementations must return bit-identical values for repeated calls with
/// the same coalition.
pub trait UtilityOracle: Send + Sync {
    fn evaluate(&self, s: Coalition) -> Result<f64>;
}

impl<F> UtilityOracle for F
where
    F: Fn(Coalition) -> f64 + Send + Sync,
{
    fn evaluate(&self, s: Coalition) -> Result<f64> {
        Ok(self(s))
    }
}

/// Player count plus a memoized utility oracle.
pub struct CoalitionGame {
    n: usize,
    oracle: Arc<dyn UtilityOracle>,
    cache: Option<DashMap<Coalition, f64>>,
    eval_count: AtomicU64,
}

impl fmt::Debug for CoalitionGame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoalitionGame")
            .field("n", &self.n)
            .field("cached", &self.cache.as_ref().map(|c| c.len()))
            .field("eval_count", &self.eval_count())
            .finish()
    }
}

impl CoalitionGame {
    pub fn new(n: usize, oracle: impl UtilityOracle + 'static) -> Self {
        Self::from_arc(n, Arc::new(oracle))
    }

    pub fn from_arc(n: usize, oracle: Arc<dyn UtilityOracle>) -> Self {
        assert!(n <= MAX_PLAYERS, "at most {MAX_PLAYERS} players");
        Self {
            n,
            oracle,
            cache: Some(DashMap::new()),
            eval_count: AtomicU64::new(0),
        }
    }

    /// A game that calls the oracle on every evaluation.
    pub fn uncached(n: usize, oracle: impl UtilityOracle + 'static) -> Self {
        let mut g = Self::new(n, oracle);
        g.cache = None;
        g
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn oracle(&self) -> &Arc<dyn UtilityOracle> {
        &self.oracle
    }

    pub fn grand(&self) -> Coalition {
        Coalition::full(self.n)
    }

    /// Number of distinct coalitions whose value entered the cache (or, for
    /// an uncached game, the number of oracle calls).
    pub fn eval_count(&self) -> u64 {
        self.eval_count.load(Ordering::Relaxed)
    }

    pub fn evaluate(&self, s: Coalition) -> Result<f64> {
        if !s.fits(self.n) {
            let index = 63 - s.bits().leading_zeros() as i64;
            return Err(Error::IndexOutOfRange { index, n: self.n });
        }
        let Some(cache) = &self.cache else {
            self.eval_count.fetch_add(1, Ordering::Relaxed);
            return self.oracle.evaluate(s);
        };
        if let Some(v) = cache.get(&s) {
            return Ok(*v);
        }
        // The oracle runs outside the shard lock; a racing evaluation of the
        // same coalition keeps whichever value was stored first.
        let v = self.oracle.evaluate(s)?;
        match cache.entry(s) {
            Entry::Occupied(e) => Ok(*e.get()),
            Entry::Vacant(e) => {
                self.eval_count.fetch_add(1, Ordering::Relaxed);
                e.insert(v);
                Ok(v)
            }
        }
    }

    /// Values of all `2^n` coalitions, indexed by coalition bits.
    pub fn evaluate_all(&self) -> Result<Vec<f64>> {
        assert!(self.n < MAX_PLAYERS);
        (0..1u64 << self.n)
            .into_par_iter()
            .map(|bits| self.evaluate(Coalition(bits)))
            .collect()
    }
}

/// Every subset of `N \ {i}` with exactly `size` members, in increasing
/// order of the compressed bit pattern.
pub fn subsets_excluding(n: usize, i: PlayerId, size: usize) -> impl Iterator<Item = Coalition> {
    let i = i.index();
    assert!(i < n && n <= MAX_PLAYERS, "player {i} outside game of {n}");
    assert!(size < n, "subset size {size} exceeds n-1 = {}", n - 1);
    let width = n - 1;
    let low_mask = (1u64 << i) - 1;
    let expand = move |compact: u64| -> Coalition {
        let low = compact & low_mask;
        let high = (compact & !low_mask) << 1;
        Coalition(low | high)
    };
    let limit: u128 = 1u128 << width;
    let mut next: Option<u64> = Some(if size == 0 { 0 } else { (1u64 << size) - 1 });
    std::iter::from_fn(move || {
        let cur = next?;
        next = if cur == 0 {
            None
        } else {
            // Gosper's hack: next larger integer with the same popcount.
            let c = cur & cur.wrapping_neg();
            let r = cur.wrapping_add(c);
            if r == 0 {
                None
            } else {
                let nx = (((r ^ cur) >> 2) / c) | r;
                (u128::from(nx) < limit).then_some(nx)
            }
        };
        Some(expand(cur))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::binomial;

    fn collect(n: usize, i: usize, k: usize) -> Vec<Vec<usize>> {
        subsets_excluding(n, PlayerId(i), k).map(|c| c.members().collect()).collect()
    }

    #[test]
    fn coalition_from_members_cases() {
        let c = coalition_from_members(&[], 4).unwrap();
        assert!(c.is_empty());
        assert_eq!(c.len(), 0);
        let c = coalition_from_members(&[0, 2, 2], 4).unwrap();
        assert_eq!(c.members().collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(c.len(), 2);
        assert!(matches!(
            coalition_from_members(&[3], 3),
            Err(Error::IndexOutOfRange { index: 3, n: 3 })
        ));
        assert!(matches!(coalition_from_members(&[-1], 3), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn empty_is_distinct() {
        for b in 1..16u64 {
            assert_ne!(Coalition::EMPTY, Coalition::from_bits(b));
        }
        assert_eq!(Coalition::full(64).len(), 64);
        assert_eq!(Coalition::full(0), Coalition::EMPTY);
    }

    #[test]
    fn evaluate_memoizes() {
        let game = CoalitionGame::new(3, |s: Coalition| s.len() as f64);
        let s = coalition_from_members(&[0, 1], 3).unwrap();
        assert_eq!(game.evaluate(s).unwrap(), 2.0);
        assert_eq!(game.eval_count(), 1);
        assert_eq!(game.evaluate(s).unwrap(), 2.0);
        assert_eq!(game.eval_count(), 1);
        assert!(game.evaluate(Coalition::singleton(3)).is_err());
    }

    #[test]
    fn evaluate_all_bounded_count() {
        let game = CoalitionGame::new(5, |s: Coalition| s.bits() as f64);
        let all = game.evaluate_all().unwrap();
        game.evaluate_all().unwrap();
        assert_eq!(all.len(), 32);
        assert_eq!(game.eval_count(), 32);
    }

    #[test]
    fn oracle_errors_propagate() {
        struct Failing;
        impl UtilityOracle for Failing {
            fn evaluate(&self, _: Coalition) -> Result<f64> {
                Err(Error::OracleFailure("degenerate fit".into()))
            }
        }
        let game = CoalitionGame::new(2, Failing);
        assert!(matches!(game.evaluate(Coalition::EMPTY), Err(Error::OracleFailure(_))));
        assert_eq!(game.eval_count(), 0);
    }

    #[test]
    fn subset_examples() {
        assert_eq!(collect(3, 0, 1), vec![vec![1], vec![2]]);
        assert_eq!(collect(3, 0, 0), vec![Vec::<usize>::new()]);
        assert_eq!(collect(4, 2, 3), vec![vec![0, 1, 3]]);
    }

    #[test]
    fn subset_counts_match_binomials() {
        for n in 1..=8usize {
            for i in 0..n {
                let mut seen = std::collections::HashSet::new();
                for k in 0..n {
                    let subsets: Vec<_> = subsets_excluding(n, PlayerId(i), k).collect();
                    assert_eq!(subsets.len() as u64, binomial((n - 1) as u64, k as u64).unwrap());
                    for s in subsets {
                        assert_eq!(s.len(), k);
                        assert!(!s.contains(i));
                        assert!(s.fits(n));
                        assert!(seen.insert(s));
                    }
                }
                assert_eq!(seen.len(), 1 << (n - 1));
            }
        }
    }

    #[test]
    fn subsets_at_capacity() {
        assert_eq!(subsets_excluding(64, PlayerId(63), 63).count(), 1);
        assert_eq!(subsets_excluding(64, PlayerId(0), 1).count(), 63);
        let last = subsets_excluding(64, PlayerId(5), 63).next().unwrap();
        assert_eq!(last, Coalition::full(64).without(5));
    }

    #[test]
    fn concurrent_evaluation_stores_one_value() {
        use rayon::prelude::*;
        let game = CoalitionGame::new(4, |s: Coalition| s.len() as f64 * 0.5);
        let vals: Vec<f64> = (0..1000)
            .into_par_iter()
            .map(|k| game.evaluate(Coalition::from_bits(k % 16)).unwrap())
            .collect();
        assert_eq!(game.eval_count(), 16);
        for (k, v) in vals.iter().enumerate() {
            assert_eq!(*v, (k % 16).count_ones() as f64 * 0.5);
        }
    }
}
