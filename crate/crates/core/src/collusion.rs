//! Colluding user sets and their split relative to an observing server.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::params::{SystemParams, UserId};

/// A set of users whose inputs and keys are revealed to a curious server.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct ColludingSet {
    members: BTreeSet<UserId>,
}

impl ColludingSet {
    pub fn empty() -> Self {
        Self { members: BTreeSet::new() }
    }

    pub fn new(members: impl IntoIterator<Item = UserId>) -> Self {
        Self { members: members.into_iter().collect() }
    }

    pub fn from_indices(params: &SystemParams, indices: &[usize]) -> Self {
        Self::new(indices.iter().map(|&i| params.user_at(i)))
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, user: UserId) -> bool {
        self.members.contains(&user)
    }

    pub fn iter(&self) -> impl Iterator<Item = UserId> + '_ {
        self.members.iter().copied()
    }

    /// Within `|T| <= T` and inside `[U] x [V]`.
    pub fn is_admissible(&self, params: &SystemParams) -> bool {
        self.len() <= params.max_colluders() && self.iter().all(|u| params.contains(u))
    }
}

impl std::fmt::Display for ColludingSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.iter().map(|u| u.to_string()).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

/// Split of a colluding set as seen from server `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ColluderPartition {
    /// Colluders attached to server `k`.
    pub t1: Vec<UserId>,
    /// Servers other than `k` whose every user colludes.
    pub u2: Vec<usize>,
    /// The users of those servers.
    pub t2: Vec<UserId>,
    /// Everyone else in the set.
    pub t3: Vec<UserId>,
}

pub fn partition_colluders(params: &SystemParams, set: &ColludingSet, k: usize) -> ColluderPartition {
    let v = params.users_per_server();
    let t1: Vec<UserId> = set.iter().filter(|u| u.server == k).collect();
    let u2: Vec<usize> = (0..params.servers())
        .filter(|&u| u != k && (0..v).all(|s| set.contains(UserId::new(u, s))))
        .collect();
    let t2: Vec<UserId> = set.iter().filter(|u| u2.contains(&u.server)).collect();
    let t3: Vec<UserId> = set.iter().filter(|u| u.server != k && !u2.contains(&u.server)).collect();
    ColluderPartition { t1, u2, t2, t3 }
}

/// `C(n, k)` as `u128`, `None` on overflow.
pub fn binomial(n: usize, k: usize) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

/// Number of colluding sets with `|T| <= max_size` among `n` users.
pub fn count_sets(n: usize, max_size: usize) -> Option<u128> {
    (0..=max_size.min(n)).try_fold(0u128, |acc, t| acc.checked_add(binomial(n, t)?))
}

/// All subsets of `0..n` with at most `max_size` elements, by size and then lexicographically.
pub fn subsets_up_to(n: usize, max_size: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..=max_size.min(n)).flat_map(move |k| Combinations::new(n, k))
}

/// Lexicographic `k`-subsets of `0..n`.
pub struct Combinations {
    n: usize,
    current: Option<Vec<usize>>,
}

impl Combinations {
    pub fn new(n: usize, k: usize) -> Self {
        let current = (k <= n).then(|| (0..k).collect());
        Self { n, current }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let out = self.current.take()?;
        let k = out.len();
        let mut next = out.clone();
        // Rightmost position that can still move right.
        if let Some(i) = (0..k).rev().find(|&i| next[i] < self.n - k + i) {
            next[i] += 1;
            for j in i + 1..k {
                next[j] = next[j - 1] + 1;
            }
            self.current = Some(next);
        }
        Some(out)
    }
}

/// Every `(server, colluding set)` pair with `|T| <= T`, servers outermost.
pub fn all_cases(params: &SystemParams) -> Vec<(usize, ColludingSet)> {
    let sets: Vec<ColludingSet> = subsets_up_to(params.num_users(), params.max_colluders())
        .map(|idx| ColludingSet::from_indices(params, &idx))
        .collect();
    (0..params.servers())
        .flat_map(|k| sets.iter().cloned().map(move |s| (k, s)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(u: usize, v: usize, t: usize) -> SystemParams {
        SystemParams::new(u, v, t, 11, 0).unwrap()
    }

    #[test]
    fn partition_examples() {
        let params = p(3, 3, 3);
        let empty = partition_colluders(&params, &ColludingSet::empty(), 0);
        assert!(empty.t1.is_empty() && empty.u2.is_empty() && empty.t2.is_empty() && empty.t3.is_empty());

        let full = ColludingSet::new([UserId::new(1, 0), UserId::new(1, 1), UserId::new(1, 2)]);
        let part = partition_colluders(&params, &full, 0);
        assert_eq!(part.u2, vec![1]);
        assert_eq!(part.t2, full.iter().collect::<Vec<_>>());
        assert!(part.t1.is_empty() && part.t3.is_empty());

        let mixed = ColludingSet::new([UserId::new(0, 1), UserId::new(2, 0)]);
        let part = partition_colluders(&params, &mixed, 0);
        assert_eq!(part.t1, vec![UserId::new(0, 1)]);
        assert_eq!(part.t3, vec![UserId::new(2, 0)]);
        assert!(part.u2.is_empty());
    }

    #[test]
    fn counts() {
        assert_eq!(binomial(9, 2), Some(36));
        assert_eq!(count_sets(9, 2), Some(46));
        assert_eq!(count_sets(6, 0), Some(1));
        assert_eq!(subsets_up_to(9, 2).count(), 46);
        assert_eq!(Combinations::new(5, 0).collect::<Vec<_>>(), vec![Vec::<usize>::new()]);
        assert_eq!(Combinations::new(2, 3).count(), 0);
        let c: Vec<_> = Combinations::new(4, 2).collect();
        assert_eq!(c, vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]);
        assert_eq!(all_cases(&p(3, 3, 2)).len(), 3 * 46);
    }

    #[test]
    fn partition_covers_members() {
        let params = p(4, 3, 5);
        for idx in subsets_up_to(12, 5) {
            let set = ColludingSet::from_indices(&params, &idx);
            for k in 0..4 {
                let part = partition_colluders(&params, &set, k);
                assert_eq!(part.t1.len() + part.t2.len() + part.t3.len(), set.len());
                assert!(!part.u2.contains(&k));
            }
        }
    }
}
