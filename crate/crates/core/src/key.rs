use std::fmt;

use smallvec::SmallVec;

pub type Key = u64;
pub type Offset = u64;

/// Sorted record locators for one key. Most keys are unique, so one inline slot.
pub type OffsetList = SmallVec<[Offset; 1]>;

/// Logical key range `[lo, hi)` plus the inclusive hull of keys actually seen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KeyRange {
    pub lo: Key,
    pub hi: Key,
    pub observed: Option<(Key, Key)>,
}

impl KeyRange {
    pub fn new(lo: Key, hi: Key) -> Self {
        debug_assert!(lo <= hi);
        KeyRange {
            lo,
            hi,
            observed: None,
        }
    }

    pub fn contains_logical(&self, k: Key) -> bool {
        self.lo <= k && k < self.hi
    }

    pub fn contains_observed(&self, k: Key) -> bool {
        matches!(self.observed, Some((a, b)) if a <= k && k <= b)
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_none()
    }

    pub fn observe(&mut self, k: Key) {
        self.observed = Some(match self.observed {
            None => (k, k),
            Some((a, b)) => (a.min(k), b.max(k)),
        });
    }

    /// Distance from `k` to the logical range, 0 when inside.
    pub fn logical_distance(&self, k: Key) -> u64 {
        if k < self.lo {
            self.lo - k
        } else if k >= self.hi {
            k - self.hi.saturating_sub(1).max(self.lo)
        } else {
            0
        }
    }

    /// Width of the logical range.
    pub fn width(&self) -> u64 {
        self.hi - self.lo
    }

    /// The `i`-th of `parts` floor-width slices; the last slice absorbs the remainder.
    pub fn slice(&self, i: usize, parts: usize) -> KeyRange {
        debug_assert!(parts > 0 && i < parts);
        let w = self.width() / parts as u64;
        let lo = self.lo + w * i as u64;
        let hi = if i + 1 == parts {
            self.hi
        } else {
            lo + w
        };
        KeyRange::new(lo, hi)
    }

    /// Inverse of [`KeyRange::slice`], clamped to `[0, parts)` for keys outside the range.
    pub fn slice_of(&self, k: Key, parts: usize) -> usize {
        let w = self.width() / parts as u64;
        if k < self.lo {
            return 0;
        }
        if w == 0 {
            return parts - 1;
        }
        (((k - self.lo) / w) as usize).min(parts - 1)
    }
}

impl fmt::Display for KeyRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.lo, self.hi)?;
        if let Some((a, b)) = self.observed {
            write!(f, " seen [{a}, {b}]")?;
        }
        Ok(())
    }
}
