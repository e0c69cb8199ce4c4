//! Greedy one-dimensional nearest-neighbour matching.

use std::cmp::Ordering;
use std::collections::BTreeSet;

#[derive(Debug, Clone, Copy)]
struct Key(f64);

impl PartialEq for Key {
    fn eq(&self, other: &Self) -> bool {
        self.0.total_cmp(&other.0) == Ordering::Equal
    }
}

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Candidates sorted by score for nearest lookups.
struct Pool {
    set: BTreeSet<(Key, usize)>,
}

impl Pool {
    fn new(candidates: &[(f64, usize)]) -> Self {
        Self {
            set: candidates.iter().map(|&(s, i)| (Key(s), i)).collect(),
        }
    }

    /// Nearest candidate to `t`; equal distances go to the lowest index.
    fn nearest(&self, t: f64) -> Option<(f64, usize, f64)> {
        let mut best: Option<(f64, usize, f64)> = None;
        let mut consider = |s: f64, i: usize| {
            let d = (s - t).abs();
            let better = match best {
                None => true,
                Some((bd, bi, _)) => d < bd || (d == bd && i < bi),
            };
            if better {
                best = Some((d, i, s));
            }
        };
        if let Some(&(Key(s), _)) = self.set.range(..=(Key(t), usize::MAX)).next_back() {
            // lowest index sharing that score
            let &(_, i) = self.set.range((Key(s), 0)..).next().expect("present");
            consider(s, i);
        }
        if let Some(&(Key(s), i)) = self.set.range((Key(t), 0)..).next() {
            consider(s, i);
        }
        best
    }

    fn remove(&mut self, s: f64, i: usize) {
        self.set.remove(&(Key(s), i));
    }

    fn insert(&mut self, s: f64, i: usize) {
        self.set.insert((Key(s), i));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct AnchorMatches {
    pub anchor: usize,
    /// `(candidate, distance)` in the order chosen.
    pub matches: Vec<(usize, f64)>,
}

pub(crate) struct GreedyOptions {
    pub per_anchor: usize,
    /// Candidates stay available to later anchors.
    pub replacement: bool,
    pub caliper: Option<f64>,
    /// Drop an anchor that cannot receive all `per_anchor` matches instead
    /// of keeping a partial set.
    pub all_or_nothing: bool,
}

/// Anchors are processed in descending score order (ties by lowest index);
/// each takes its matches one at a time by smallest absolute distance.
pub(crate) fn greedy_match(
    anchors: &[(f64, usize)],
    candidates: &[(f64, usize)],
    opts: &GreedyOptions,
) -> Vec<AnchorMatches> {
    let mut order = anchors.to_vec();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut pool = Pool::new(candidates);
    let mut out = Vec::with_capacity(order.len());
    for (t, anchor) in order {
        let mut taken: Vec<(usize, f64, f64)> = Vec::with_capacity(opts.per_anchor);
        for _ in 0..opts.per_anchor {
            let Some((d, i, s)) = pool.nearest(t) else {
                break;
            };
            if opts.caliper.is_some_and(|c| d > c) {
                break;
            }
            pool.remove(s, i);
            taken.push((i, d, s));
        }
        let complete = taken.len() == opts.per_anchor;
        if opts.replacement || (opts.all_or_nothing && !complete) {
            for &(i, _, s) in &taken {
                pool.insert(s, i);
            }
        }
        if opts.all_or_nothing && !complete {
            taken.clear();
        }
        out.push(AnchorMatches {
            anchor,
            matches: taken.into_iter().map(|(i, d, _)| (i, d)).collect(),
        });
    }
    out
}
