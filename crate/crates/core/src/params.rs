use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Default block capacity `m` (keys per block).
pub const DEFAULT_CAPACITY: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockKind {
    Ordered,
    Unordered,
}

impl BlockKind {
    pub const ALL: [BlockKind; 2] = [BlockKind::Ordered, BlockKind::Unordered];

    pub fn index(self) -> usize {
        match self {
            BlockKind::Ordered => 0,
            BlockKind::Unordered => 1,
        }
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlockKind::Ordered => "ordered",
            BlockKind::Unordered => "unordered",
        })
    }
}

impl FromStr for BlockKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ordered" | "o" => Ok(BlockKind::Ordered),
            "unordered" | "u" | "hash" => Ok(BlockKind::Unordered),
            other => Err(Error::InvalidParams(format!("unknown block type `{other}`"))),
        }
    }
}

/// The six per-group tunables.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperParams {
    pub kind: BlockKind,
    /// Fanout of non-bottom blocks, initial reservation of bottom blocks.
    pub x: usize,
    /// Blocks per group.
    pub y: usize,
    /// Split when a block holds more than `alpha * m` keys.
    pub alpha: f64,
    /// Merge two neighbours when both hold fewer than `beta * m` keys.
    pub beta: f64,
    /// Skip-link probability for distance `2^(k+1)`, `floor(log2 y)` entries.
    pub gamma: Vec<f64>,
}

/// `floor(log2(y))`, the number of skip-link distances a group of `y` blocks can use.
pub fn link_levels(y: usize) -> usize {
    if y <= 1 {
        0
    } else {
        (usize::BITS - 1 - y.leading_zeros()) as usize
    }
}

impl HyperParams {
    pub fn validate(&self, m: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if self.x == 0 || self.x > m {
            return bad(format!("x={} outside [1, m={m}]", self.x));
        }
        if self.y == 0 {
            return bad("y must be positive".into());
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha={} outside (0, 1]", self.alpha));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad(format!("beta={} outside (0, 1)", self.beta));
        }
        if self.alpha <= self.beta {
            return bad(format!("alpha={} must exceed beta={}", self.alpha, self.beta));
        }
        if self.gamma.len() != link_levels(self.y) {
            return bad(format!(
                "gamma has {} entries, y={} needs {}",
                self.gamma.len(),
                self.y,
                link_levels(self.y)
            ));
        }
        if self.gamma.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("gamma probabilities must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn split_threshold(&self, m: usize) -> f64 {
        self.alpha * m as f64
    }

    pub fn merge_threshold(&self, m: usize) -> f64 {
        self.beta * m as f64
    }
}

/// Admissible values the controller chooses from.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueSets {
    /// Fractions of `m`.
    pub x_fractions: Vec<f64>,
    pub y: Vec<usize>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl Default for ValueSets {
    fn default() -> Self {
        ValueSets {
            x_fractions: vec![0.25, 0.5, 0.75, 1.0],
            y: vec![32, 64, 128, 256],
            alpha: vec![0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
            beta: vec![0.1, 0.2, 0.3, 0.4],
        }
    }
}

impl ValueSets {
    pub fn x_values(&self, m: usize) -> Vec<usize> {
        self.x_fractions
            .iter()
            .map(|f| ((f * m as f64).round() as usize).clamp(1, m))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(y: usize) -> HyperParams {
        HyperParams {
            kind: BlockKind::Ordered,
            x: 64,
            y,
            alpha: 0.8,
            beta: 0.2,
            gamma: vec![0.5; link_levels(y)],
        }
    }

    #[test]
    fn link_levels_is_floor_log2() {
        assert_eq!(link_levels(1), 0);
        assert_eq!(link_levels(2), 1);
        assert_eq!(link_levels(3), 1);
        assert_eq!(link_levels(8), 3);
        assert_eq!(link_levels(256), 8);
    }

    #[test]
    fn validation() {
        assert!(p(32).validate(256).is_ok());
        let mut q = p(32);
        q.x = 300;
        assert!(q.validate(256).is_err());
        let mut q = p(32);
        q.beta = 0.9;
        assert!(q.validate(256).is_err());
        let mut q = p(32);
        q.gamma.pop();
        assert!(q.validate(256).is_err());
    }

    #[test]
    fn table_values() {
        let v = ValueSets::default();
        assert_eq!(v.x_values(256), vec![64, 128, 192, 256]);
        assert_eq!(v.y, vec![32, 64, 128, 256]);
        assert_eq!(v.alpha.len(), 6);
        assert_eq!(v.beta, vec![0.1, 0.2, 0.3, 0.4]);
    }
}
