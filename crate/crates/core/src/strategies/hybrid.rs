use serde::{Deserialize, Serialize};

use super::{QueryContext, QueryOutcome, QueryStrategy, StrategyError, StrategyId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Seed,
    Main,
}

/// Iteration sizes and phases of a hybrid run. Seed iterations never
/// overshoot `seed_budget`, so the switch lands exactly on it.
pub fn hybrid_schedule(seed_budget: usize, step: usize, budget: usize) -> Vec<(usize, Phase)> {
    let mut plan = Vec::new();
    if step == 0 {
        return plan;
    }
    let mut labeled = 0;
    while labeled < budget {
        let (size, phase) = next_size(labeled, seed_budget, step, budget);
        plan.push((size, phase));
        labeled += size;
    }
    plan
}

fn next_size(labeled: usize, seed_budget: usize, step: usize, budget: usize) -> (usize, Phase) {
    if labeled < seed_budget.min(budget) {
        (step.min(seed_budget.min(budget) - labeled), Phase::Seed)
    } else {
        (step.min(budget.saturating_sub(labeled)), Phase::Main)
    }
}

/// The LLM picks until `seed_budget` labels exist, then `main` takes over.
pub struct HybridStrategy {
    seed_budget: usize,
    seed: Option<Box<dyn QueryStrategy>>,
    main: Box<dyn QueryStrategy>,
}

impl HybridStrategy {
    /// `seed` may be `None` only when `seed_budget` is zero.
    pub fn new(seed_budget: usize, seed: Option<Box<dyn QueryStrategy>>, main: Box<dyn QueryStrategy>) -> Self {
        Self { seed_budget, seed, main }
    }

    pub fn seed_budget(&self) -> usize {
        self.seed_budget
    }

    pub fn phase(&self, labeled: usize) -> Phase {
        if labeled < self.seed_budget {
            Phase::Seed
        } else {
            Phase::Main
        }
    }
}

impl QueryStrategy for HybridStrategy {
    fn id(&self) -> StrategyId {
        StrategyId::HybridColdstart
    }

    fn query(&mut self, ctx: &QueryContext<'_>) -> Result<QueryOutcome, StrategyError> {
        match self.phase(ctx.history.labeled_count()) {
            Phase::Seed => self
                .seed
                .as_mut()
                .ok_or_else(|| StrategyError::Resource("hybrid run has no seed strategy".into()))?
                .query(ctx),
            Phase::Main => self.main.query(ctx),
        }
    }

    fn iteration_size(&self, labeled: usize, step: usize, budget: usize) -> usize {
        next_size(labeled, self.seed_budget, step, budget).0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fifty_then_conventional() {
        let plan = hybrid_schedule(50, 25, 300);
        assert_eq!(plan.len(), 12);
        assert!(plan.iter().all(|(size, _)| *size == 25));
        assert_eq!(plan.iter().filter(|(_, p)| *p == Phase::Seed).count(), 2);
        assert_eq!(plan[2].1, Phase::Main);
    }

    #[test]
    fn degenerate_seed_budgets() {
        assert!(hybrid_schedule(0, 25, 100).iter().all(|(_, p)| *p == Phase::Main));
        assert!(hybrid_schedule(100, 25, 100).iter().all(|(_, p)| *p == Phase::Seed));
    }

    #[test]
    fn seed_phase_stops_on_budget() {
        let plan = hybrid_schedule(30, 25, 100);
        let sizes: Vec<usize> = plan.iter().map(|(s, _)| *s).collect();
        assert_eq!(sizes, vec![25, 5, 25, 25, 20]);
        assert_eq!(plan[1].1, Phase::Seed);
        assert_eq!(plan[2].1, Phase::Main);
    }
}
