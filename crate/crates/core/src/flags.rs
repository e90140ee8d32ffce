use bitflags::bitflags;

use crate::interval::IntervalSet;

bitflags! {
    /// Conditions worth surfacing next to an interval.
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
    pub struct IntervalFlags: u8 {
        /// The point prediction lay below the support and was clamped onto it.
        const CLAMPED = 1;
        /// Lower and upper quantile predictions crossed and were swapped.
        const CROSSED = 1 << 1;
        /// Negative-binomial moments implied underdispersion; Poisson was used.
        const POISSON_FALLBACK = 1 << 2;
        /// The grid search accepted no candidate value.
        const EMPTY = 1 << 3;
        /// Bounds were rounded to integers.
        const ROUNDED = 1 << 4;
    }
}

const TOKENS: [(IntervalFlags, &str); 5] = [
    (IntervalFlags::CLAMPED, "clamped"),
    (IntervalFlags::CROSSED, "crossed"),
    (IntervalFlags::POISSON_FALLBACK, "poisson-fallback"),
    (IntervalFlags::EMPTY, "empty"),
    (IntervalFlags::ROUNDED, "rounded"),
];

impl IntervalFlags {
    /// `|`-separated tokens, empty string when no flag is set.
    pub fn to_tokens(self) -> String {
        TOKENS
            .iter()
            .filter(|(f, _)| self.contains(*f))
            .map(|(_, t)| *t)
            .collect::<Vec<_>>()
            .join("|")
    }

    pub fn from_tokens(s: &str) -> Option<Self> {
        let mut flags = IntervalFlags::empty();
        for tok in s.split('|').map(str::trim).filter(|t| !t.is_empty()) {
            let (f, _) = TOKENS.iter().find(|(_, t)| *t == tok)?;
            flags |= *f;
        }
        Some(flags)
    }
}

/// An interval set together with the flags raised while building it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlaggedSet {
    pub set: IntervalSet,
    pub flags: IntervalFlags,
}

impl FlaggedSet {
    pub fn new(set: impl Into<IntervalSet>, flags: IntervalFlags) -> Self {
        Self {
            set: set.into(),
            flags,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_round_trip() {
        let f = IntervalFlags::CLAMPED | IntervalFlags::ROUNDED;
        assert_eq!(f.to_tokens(), "clamped|rounded");
        assert_eq!(IntervalFlags::from_tokens("clamped|rounded"), Some(f));
        assert_eq!(IntervalFlags::from_tokens(""), Some(IntervalFlags::empty()));
        assert_eq!(IntervalFlags::from_tokens("bogus"), None);
    }
}
