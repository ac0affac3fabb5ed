//! Balanced selection across strata (supplement types).
//!
//! Quotas follow a water-filling rule: every stratum gets an equal share of
//! what is left, strata that cannot fill their share give up their shortfall
//! to the others, and the final remainder goes one unit each to strata in
//! ascending key order. Selected counts of unsaturated strata differ by at
//! most one.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::seed;

/// Per-stratum counts for a total of `target` drawn from `supply`.
pub fn quotas(supply: &BTreeMap<String, usize>, target: usize) -> BTreeMap<String, usize> {
    let mut alloc: BTreeMap<String, usize> = supply.keys().map(|k| (k.clone(), 0)).collect();
    let total: usize = supply.values().sum();
    let mut remaining = target.min(total);
    let mut active: Vec<&String> = supply.iter().filter(|(_, &n)| n > 0).map(|(k, _)| k).collect();
    let left = |k: &String, alloc: &BTreeMap<String, usize>| supply[k] - alloc[k];

    while remaining > 0 && !active.is_empty() {
        let share = remaining / active.len();
        if share == 0 {
            for k in active.iter().take(remaining) {
                *alloc.get_mut(*k).expect("known key") += 1;
            }
            break;
        }
        let short: Vec<&String> = active.iter().copied().filter(|k| left(k, &alloc) < share).collect();
        if !short.is_empty() {
            for k in &short {
                let give = left(k, &alloc);
                *alloc.get_mut(*k).expect("known key") += give;
                remaining -= give;
            }
            active.retain(|k| !short.contains(k));
            continue;
        }
        for k in &active {
            *alloc.get_mut(*k).expect("known key") += share;
        }
        remaining -= share * active.len();
        active.retain(|k| left(k, &alloc) > 0);
    }
    alloc
}

/// Pick `target` items across groups by [`quotas`]; within a group, items
/// are chosen by a shuffle seeded from `(seed, label, key)`. Output is in
/// key order, then shuffled order within the key.
pub fn stratified_sample<T: Clone>(groups: &BTreeMap<String, Vec<T>>, target: usize, seed: u64, label: &str) -> Vec<T> {
    let supply: BTreeMap<String, usize> = groups.iter().map(|(k, v)| (k.clone(), v.len())).collect();
    let quota = quotas(&supply, target);
    let mut out = Vec::with_capacity(target);
    for (key, items) in groups {
        let take = quota[key];
        if take == 0 {
            continue;
        }
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.shuffle(&mut seed::rng(seed, &["stratify", label, key]));
        out.extend(order.into_iter().take(take).map(|i| items[i].clone()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn supply(pairs: &[(&str, usize)]) -> BTreeMap<String, usize> {
        pairs.iter().map(|(k, n)| (k.to_string(), *n)).collect()
    }

    /// Independent oracle: hand out one unit at a time, cycling through keys
    /// in ascending order and skipping exhausted ones.
    pub(crate) fn round_robin(supply: &BTreeMap<String, usize>, target: usize) -> BTreeMap<String, usize> {
        let mut alloc: BTreeMap<String, usize> = supply.keys().map(|k| (k.clone(), 0)).collect();
        let mut given = 0;
        loop {
            let mut progressed = false;
            for (k, &cap) in supply {
                if given == target {
                    return alloc;
                }
                if alloc[k] < cap {
                    *alloc.get_mut(k).unwrap() += 1;
                    given += 1;
                    progressed = true;
                }
            }
            if !progressed {
                return alloc;
            }
        }
    }

    #[test]
    fn even_division() {
        let s: BTreeMap<String, usize> = (0..9).map(|i| (format!("t{i}"), 5)).collect();
        assert!(quotas(&s, 18).values().all(|&n| n == 2));
    }

    #[test]
    fn shortfall_is_redistributed() {
        assert_eq!(quotas(&supply(&[("A", 5), ("B", 1), ("C", 5)]), 9), supply(&[("A", 4), ("B", 1), ("C", 4)]));
        assert_eq!(quotas(&supply(&[("A", 30), ("B", 20)]), 20), supply(&[("A", 10), ("B", 10)]));
    }

    #[test]
    fn remainder_goes_to_smallest_keys() {
        assert_eq!(quotas(&supply(&[("a", 9), ("b", 9), ("c", 9)]), 8), supply(&[("a", 3), ("b", 3), ("c", 2)]));
    }

    #[test]
    fn zero_target_and_oversupply() {
        let s = supply(&[("A", 3), ("B", 2)]);
        assert!(quotas(&s, 0).values().all(|&n| n == 0));
        assert_eq!(quotas(&s, 100), s);
        assert!(stratified_sample(&BTreeMap::<String, Vec<u8>>::new(), 5, 0, "x").is_empty());
    }

    #[test]
    fn sample_is_seeded() {
        let groups: BTreeMap<String, Vec<u32>> =
            [("A".to_string(), (0..30).collect()), ("B".to_string(), (100..120).collect())].into();
        let a = stratified_sample(&groups, 20, 1, "t");
        assert_eq!(a, stratified_sample(&groups, 20, 1, "t"));
        assert_ne!(a, stratified_sample(&groups, 20, 2, "t"));
        assert_eq!(a.iter().filter(|&&x| x < 100).count(), 10);
    }

    proptest! {
        #[test]
        fn matches_round_robin_oracle(caps in proptest::collection::vec(0usize..12, 0..8), target in 0usize..60) {
            let s: BTreeMap<String, usize> = caps.iter().enumerate().map(|(i, &c)| (format!("k{i}"), c)).collect();
            let q = quotas(&s, target);
            prop_assert_eq!(&q, &round_robin(&s, target));
            prop_assert_eq!(q.values().sum::<usize>(), target.min(s.values().sum()));
            // unsaturated strata differ by at most one
            let open: Vec<usize> = q.iter().filter(|(k, &n)| n < s[*k]).map(|(_, &n)| n).collect();
            if let (Some(lo), Some(hi)) = (open.iter().min(), q.values().max()) {
                prop_assert!(*hi <= lo + 1);
            }
        }
    }
}
