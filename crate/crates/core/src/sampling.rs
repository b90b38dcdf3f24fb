//! Disjoint partitions (PATE) and Poisson subsamples (PSN) of record indices.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{domain, Result};
use crate::rng::RngStream;

/// Sorted, distinct record indices into a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct IndexSet(Vec<usize>);

impl IndexSet {
    /// Sorts and deduplicates `indices`, rejecting any `>= bound`.
    pub fn new(mut indices: Vec<usize>, bound: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&i) = indices.last() {
            if i >= bound {
                return Err(domain(format!("index {i} out of bounds for {bound} records")));
            }
        }
        Ok(Self(indices))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }
}

/// Splits `0..n` into `num_parts` disjoint sets after a uniform shuffle.
/// Part sizes differ by at most one.
pub fn partition_disjoint(n: usize, num_parts: usize, rng: &RngStream) -> Result<Vec<IndexSet>> {
    if num_parts == 0 {
        return Err(domain("need at least one part"));
    }
    if num_parts > n {
        return Err(domain(format!("cannot split {n} records into {num_parts} non-empty parts")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng.rng());
    let base = n / num_parts;
    let extra = n % num_parts;
    let mut parts = Vec::with_capacity(num_parts);
    let mut start = 0;
    for p in 0..num_parts {
        let size = base + usize::from(p < extra);
        let mut part = order[start..start + size].to_vec();
        part.sort_unstable();
        parts.push(IndexSet(part));
        start += size;
    }
    Ok(parts)
}

/// Includes each of `0..n` independently with probability `gamma`.
pub fn poisson_subsample(n: usize, gamma: f64, rng: &RngStream) -> Result<IndexSet> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(domain(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    if gamma == 1.0 {
        return Ok(IndexSet((0..n).collect()));
    }
    let mut r = rng.rng();
    Ok(IndexSet((0..n).filter(|_| r.random::<f64>() < gamma).collect()))
}

/// Draws Poisson subsamples until one is non-empty, moving to a derived
/// stream for each re-draw. Returns the subsample and the number of
/// discarded draws. Gives up after `max_draws`.
pub fn poisson_subsample_nonempty(
    n: usize,
    gamma: f64,
    rng: &RngStream,
    max_draws: usize,
) -> Result<(IndexSet, usize)> {
    if n == 0 {
        return Err(domain("cannot subsample an empty dataset"));
    }
    let mut stream = *rng;
    for attempt in 0..max_draws {
        let set = poisson_subsample(n, gamma, &stream)?;
        if !set.is_empty() {
            return Ok((set, attempt));
        }
        stream = rng.derive(attempt as u64);
    }
    Err(domain(format!("{max_draws} Poisson draws with gamma={gamma} over {n} records were all empty")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sizes(parts: &[IndexSet]) -> Vec<usize> {
        let mut s: Vec<usize> = parts.iter().map(IndexSet::len).collect();
        s.sort_unstable();
        s
    }

    #[test]
    fn partition_examples() {
        let r = RngStream::new(1, 0);
        let p = partition_disjoint(6, 3, &r).unwrap();
        assert_eq!(sizes(&p), vec![2, 2, 2]);
        let mut all: Vec<usize> = p.iter().flat_map(|s| s.iter()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..6).collect::<Vec<_>>());

        assert_eq!(sizes(&partition_disjoint(7, 3, &r).unwrap()), vec![2, 2, 3]);
        assert_eq!(sizes(&partition_disjoint(600, 3, &r).unwrap()), vec![200, 200, 200]);
    }

    #[test]
    fn partition_errors() {
        let r = RngStream::new(1, 0);
        assert!(partition_disjoint(2, 3, &r).is_err());
        assert!(partition_disjoint(5, 0, &r).is_err());
    }

    #[test]
    fn partition_is_shuffled() {
        let p = partition_disjoint(100, 2, &RngStream::new(9, 9)).unwrap();
        assert_ne!(p[0].as_slice(), &(0..50).collect::<Vec<_>>()[..]);
    }

    #[test]
    fn poisson_edges() {
        let r = RngStream::new(4, 2);
        assert_eq!(poisson_subsample(10, 1.0, &r).unwrap().len(), 10);
        assert!(poisson_subsample(1000, 1e-9, &r).unwrap().is_empty());
        assert!(poisson_subsample(10, 0.0, &r).is_err());
        assert!(poisson_subsample(10, 1.5, &r).is_err());
    }

    #[test]
    fn poisson_size_concentrates() {
        // Bin(10⁴, 0.25): sd = 43.3, so [2250, 2750] is ±5.8 sd
        for seed in 0..200 {
            let s = poisson_subsample(10_000, 0.25, &RngStream::new(seed, 0)).unwrap();
            assert!((2250..=2750).contains(&s.len()), "seed {seed}: {}", s.len());
        }
    }

    #[test]
    fn nonempty_redraws() {
        let r = RngStream::new(0, 0);
        let (s, redraws) = poisson_subsample_nonempty(3, 0.05, &r, 10_000).unwrap();
        assert!(!s.is_empty());
        // P(empty) = 0.857 per draw, so some seed in 0..20 must have re-drawn
        let total: usize = (0..20)
            .map(|seed| poisson_subsample_nonempty(3, 0.05, &RngStream::new(seed, 0), 10_000).unwrap().1)
            .sum();
        assert!(total > 0, "{redraws}");
        assert!(poisson_subsample_nonempty(5, 1e-12, &r, 5).is_err());
        assert_eq!(poisson_subsample_nonempty(5, 1.0, &r, 1).unwrap().1, 0);
    }

    #[test]
    fn index_set_bounds() {
        assert!(IndexSet::new(vec![3, 1, 1], 4).is_ok());
        assert_eq!(IndexSet::new(vec![3, 1, 1], 4).unwrap().as_slice(), &[1, 3]);
        assert!(IndexSet::new(vec![4], 4).is_err());
    }

    proptest! {
        #[test]
        fn partition_covers_disjointly(n in 1usize..400, parts in 1usize..40, seed in any::<u64>()) {
            prop_assume!(parts <= n);
            let p = partition_disjoint(n, parts, &RngStream::new(seed, 0)).unwrap();
            prop_assert_eq!(p.len(), parts);
            let mut seen = vec![false; n];
            for set in &p {
                for i in set.iter() {
                    prop_assert!(!seen[i]);
                    seen[i] = true;
                }
            }
            prop_assert!(seen.iter().all(|s| *s));
            let s = sizes(&p);
            prop_assert!(s[s.len() - 1] - s[0] <= 1);
        }

        #[test]
        fn subsample_is_deterministic(n in 0usize..300, gamma in 0.01f64..1.0, seed in any::<u64>(), id in any::<u64>()) {
            let r = RngStream::new(seed, id);
            prop_assert_eq!(poisson_subsample(n, gamma, &r).unwrap(), poisson_subsample(n, gamma, &r).unwrap());
        }
    }
}
