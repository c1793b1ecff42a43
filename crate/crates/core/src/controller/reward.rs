/// Latency gain over the no-index baseline blended with space utilization.
pub fn compute_reward(c_b: f64, c_t: f64, c_s: f64, rho: f64) -> f64 {
    assert!(c_b > 0.0, "baseline cost must be positive, got {c_b}");
    rho * (c_b - c_t) / c_b + (1.0 - rho) * c_s
}

/// Reward given to configs that exceed the storage budget.
pub const BUDGET_VIOLATION_REWARD: f64 = -1.0;

/// Exponentially aged running reward.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Baseline {
    pub b: f64,
    pub mu: f64,
    pub n: u64,
}

impl Baseline {
    pub fn new(mu: f64) -> Self {
        Baseline { b: 0.0, mu, n: 0 }
    }

    pub fn update(&mut self, reward: f64) -> f64 {
        self.b = self.mu * self.b + (1.0 - self.mu) * reward;
        self.n += 1;
        self.b
    }
}
