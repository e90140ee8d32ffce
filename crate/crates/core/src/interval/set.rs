use serde::{Deserialize, Serialize};

use super::PredictionInterval;
use crate::error::{Error, Result};

/// Sorted union of pairwise-disjoint closed segments.
///
/// Segments that overlap or touch are merged on construction, so two sets
/// covering the same points always compare equal.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IntervalSet {
    segments: Vec<PredictionInterval>,
}

impl IntervalSet {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Minimal sorted disjoint representation of the union of `intervals`.
    pub fn union<I>(intervals: I) -> Self
    where
        I: IntoIterator<Item = PredictionInterval>,
    {
        let mut items: Vec<PredictionInterval> = intervals.into_iter().collect();
        items.sort_by(|a, b| {
            a.lower()
                .total_cmp(&b.lower())
                .then(a.upper().total_cmp(&b.upper()))
        });
        let mut segments: Vec<PredictionInterval> = Vec::with_capacity(items.len());
        for iv in items {
            match segments.last_mut() {
                Some(last) if iv.lower() <= last.upper() => *last = last.span(&iv),
                _ => segments.push(iv),
            }
        }
        Self { segments }
    }

    pub fn segments(&self) -> &[PredictionInterval] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// True when the set is a single segment (or empty).
    pub fn is_contiguous(&self) -> bool {
        self.segments.len() <= 1
    }

    pub fn contains(&self, y: f64) -> bool {
        // segments are sorted and disjoint: find the last one starting at or before y
        let idx = self.segments.partition_point(|s| s.lower() <= y);
        idx > 0 && self.segments[idx - 1].contains(y)
    }

    /// Sum of segment lengths; `+inf` if any segment is unbounded.
    pub fn total_width(&self) -> f64 {
        self.segments.iter().map(PredictionInterval::width).sum()
    }

    /// `[min lower, max upper]` over all segments.
    pub fn hull(&self) -> Result<PredictionInterval> {
        match (self.segments.first(), self.segments.last()) {
            (Some(first), Some(last)) => Ok(first.span(last)),
            _ => Err(Error::EmptySet),
        }
    }

    /// Applies `f` to every segment and re-normalises the result.
    pub fn map_segments<F>(&self, f: F) -> Self
    where
        F: FnMut(&PredictionInterval) -> PredictionInterval,
    {
        Self::union(self.segments.iter().map(f))
    }
}

impl From<PredictionInterval> for IntervalSet {
    fn from(iv: PredictionInterval) -> Self {
        Self { segments: vec![iv] }
    }
}

impl FromIterator<PredictionInterval> for IntervalSet {
    fn from_iter<T: IntoIterator<Item = PredictionInterval>>(iter: T) -> Self {
        Self::union(iter)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn iv(a: f64, b: f64) -> PredictionInterval {
        PredictionInterval::new(a, b).unwrap()
    }

    #[test]
    fn overlap_merges() {
        let s = IntervalSet::union([iv(1.0, 3.0), iv(2.0, 5.0)]);
        assert_eq!(s.segments(), &[iv(1.0, 5.0)]);
    }

    #[test]
    fn disjoint_preserved() {
        let s = IntervalSet::union([iv(4.0, 5.0), iv(1.0, 2.0)]);
        assert_eq!(s.segments(), &[iv(1.0, 2.0), iv(4.0, 5.0)]);
    }

    #[test]
    fn touching_endpoints_merge() {
        let s = IntervalSet::union([iv(8.0, 10.0), iv(10.0, 14.0)]);
        assert_eq!(s.segments(), &[iv(8.0, 14.0)]);
    }

    #[test]
    fn empty_input() {
        let s = IntervalSet::union(std::iter::empty());
        assert!(s.is_empty());
        assert!(matches!(s.hull(), Err(Error::EmptySet)));
        assert_eq!(s.total_width(), 0.0);
        assert!(!s.contains(0.0));
    }

    #[test]
    fn hull_cases() {
        let s = IntervalSet::union([iv(1.0, 2.0), iv(4.0, 5.0)]);
        assert_eq!(s.hull().unwrap(), iv(1.0, 5.0));
        assert_eq!(IntervalSet::from(iv(3.0, 3.0)).hull().unwrap(), iv(3.0, 3.0));
        let unbounded = IntervalSet::union([iv(0.0, 1.0), iv(10.0, f64::INFINITY)]);
        assert_eq!(unbounded.hull().unwrap(), iv(0.0, f64::INFINITY));
    }

    #[test]
    fn contains_and_width() {
        let s = IntervalSet::union([iv(1.0, 2.0), iv(4.0, 5.0)]);
        assert!(!s.contains(3.0));
        assert!(s.contains(4.0));
        assert!(IntervalSet::from(iv(1.0, 2.0)).contains(2.0));
        let w = IntervalSet::union([iv(1.0, 2.0), iv(4.0, 6.0)]);
        assert_eq!(w.total_width(), 3.0);
        let inf = IntervalSet::from(iv(0.0, f64::INFINITY));
        assert_eq!(inf.total_width(), f64::INFINITY);
    }

    fn arb_intervals() -> impl Strategy<Value = Vec<(i32, i32)>> {
        prop::collection::vec((-20i32..20, 0i32..8), 0..8)
    }

    proptest! {
        #[test]
        fn union_matches_pointwise_membership(raw in arb_intervals()) {
            let input: Vec<PredictionInterval> = raw
                .iter()
                .map(|&(a, w)| iv(a as f64 / 2.0, (a + w) as f64 / 2.0))
                .collect();
            let set = IntervalSet::union(input.iter().copied());
            for w in set.segments().windows(2) {
                prop_assert!(w[0].upper() < w[1].lower());
            }
            // dense grid at quarter steps catches every endpoint and gap
            for k in -100..=100 {
                let y = k as f64 / 4.0;
                let expected = input.iter().any(|i| i.contains(y));
                prop_assert_eq!(set.contains(y), expected, "y = {}", y);
            }
            if let Ok(h) = set.hull() {
                for i in &input {
                    prop_assert!(h.lower() <= i.lower() && i.upper() <= h.upper());
                }
            }
        }
    }
}
