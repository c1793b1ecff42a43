/// Number of performance classes; class 0 holds zero-cost blocks.
pub const CLASSES: usize = 100;

/// Log-spaced cost buckets between the smallest positive and the largest observed cost.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassMap {
    /// Upper bounds of classes `1..CLASSES-1`; the last class is open-ended.
    pub edges: Vec<f64>,
}

impl ClassMap {
    /// Aggregated costs are heavy-tailed: the few top-group blocks hold the largest values,
    /// so the upper edge sits at the maximum rather than a high percentile.
    pub fn fit(costs: &[f64]) -> Self {
        let pos = costs.iter().copied().filter(|&c| c > 0.0 && c.is_finite());
        let lo = pos.clone().fold(f64::INFINITY, f64::min);
        let hi = pos.fold(0.0, f64::max);
        if lo.is_infinite() {
            return Self::log_spaced(1.0, 1.0);
        }
        Self::log_spaced(lo, hi)
    }

    pub fn log_spaced(lo: f64, hi: f64) -> Self {
        let lo = lo.max(f64::MIN_POSITIVE);
        let hi = if hi > lo * (1.0 + 1e-9) { hi } else { lo * 2.0 };
        let n = CLASSES - 2;
        let ratio = (hi / lo).ln();
        let edges = (0..n)
            .map(|j| lo * (ratio * j as f64 / (n - 1) as f64).exp())
            .collect();
        ClassMap { edges }
    }

    pub fn class(&self, cost: f64) -> usize {
        if cost <= 0.0 {
            return 0;
        }
        (1 + self.edges.partition_point(|&e| e < cost)).min(CLASSES - 1)
    }

    /// Representative cost of a class: geometric centre of its bounds.
    pub fn midpoint(&self, class: usize) -> f64 {
        match class {
            0 => 0.0,
            1 => self.edges[0],
            c if c >= CLASSES - 1 => *self.edges.last().unwrap(),
            c => (self.edges[c - 2] * self.edges[c - 1]).sqrt(),
        }
    }
}
