use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    fit_ensemble, fit_proxy_classifier, score_bald, score_entropy, score_least_confidence, score_margin, select_kmeans,
    select_uncertainty, EmbeddingMatrix, ProxyParams, QueryContext, QueryOutcome, QueryStrategy, ScoreOrder,
    StrategyError, StrategyId, StrategyParams,
};
use crate::selection_parser::{Diagnostic, SelectionResult};

/// `k` distinct items of `candidates`, drawn uniformly with a seeded
/// generator, in draw order.
pub fn random_draw(candidates: &[usize], k: usize, seed: u64) -> Result<Vec<usize>, StrategyError> {
    if k > candidates.len() {
        return Err(StrategyError::Size { requested: k, available: candidates.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample(&mut rng, candidates.len(), k).into_iter().map(|i| candidates[i]).collect())
}

fn outcome(id: StrategyId, presented: Vec<usize>, selection: SelectionResult) -> QueryOutcome {
    QueryOutcome { presented, selection, exchanges: Vec::new(), strategy_id: id.to_string() }
}

fn check_k(k: usize, available: usize) -> Result<(), StrategyError> {
    if k == 0 {
        return Err(StrategyError::Validation("k must be at least 1".into()));
    }
    if k > available {
        return Err(StrategyError::Size { requested: k, available });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RandomStrategy;

impl QueryStrategy for RandomStrategy {
    fn id(&self) -> StrategyId {
        StrategyId::Random
    }

    fn query(&mut self, ctx: &QueryContext<'_>) -> Result<QueryOutcome, StrategyError> {
        let unlabeled = ctx.unlabeled();
        check_k(ctx.k, unlabeled.len())?;
        let picked = random_draw(&unlabeled, ctx.k, ctx.seed)?;
        Ok(outcome(StrategyId::Random, unlabeled, SelectionResult::direct(picked, ctx.k)))
    }
}

/// Least confidence, prediction entropy, margin or BALD over a proxy fit on
/// the labels collected so far.
#[derive(Debug)]
pub struct UncertaintyStrategy {
    id: StrategyId,
    embeddings: Arc<EmbeddingMatrix>,
    params: StrategyParams,
}

impl UncertaintyStrategy {
    pub fn new(
        id: StrategyId,
        embeddings: Arc<EmbeddingMatrix>,
        params: &StrategyParams,
    ) -> Result<Self, StrategyError> {
        if !matches!(
            id,
            StrategyId::LeastConfidence | StrategyId::PredictionEntropy | StrategyId::Margin | StrategyId::Bald
        ) {
            return Err(StrategyError::Validation(format!("{id} is not an uncertainty strategy")));
        }
        if id == StrategyId::Bald && params.ensemble_size < 2 {
            return Err(StrategyError::Validation("bald needs ensemble_size >= 2".into()));
        }
        Ok(Self { id, embeddings, params: params.clone() })
    }

    fn scores(&self, ctx: &QueryContext<'_>, unlabeled: &[usize]) -> Result<Vec<(usize, f64)>, StrategyError> {
        let labeled: Vec<usize> = ctx.history.labeled.keys().copied().collect();
        let labels: Vec<String> = ctx.history.labeled.values().cloned().collect();
        let train = self.embeddings.subset(&labeled)?;
        let candidates = self.embeddings.subset(unlabeled)?;
        let label_space = ctx.pool.label_space();
        let proxy: ProxyParams = self.params.proxy(ctx.seed);

        if self.id == StrategyId::Bald {
            let members = fit_ensemble(&train, &labels, label_space, &proxy, self.params.ensemble_size)?;
            return candidates
                .row_index_map()
                .iter()
                .zip(candidates.vectors())
                .map(|(&index, x)| {
                    let draws: Vec<Vec<f64>> = members.iter().map(|m| m.predict_proba(x)).collect();
                    Ok((index, score_bald(&draws)?))
                })
                .collect();
        }

        let model = fit_proxy_classifier(&train, &labels, label_space, &proxy)?;
        let probabilities = model.predict_matrix(&candidates)?;
        match self.id {
            StrategyId::LeastConfidence => probabilities.scores(score_least_confidence),
            StrategyId::PredictionEntropy => probabilities.scores(score_entropy),
            StrategyId::Margin => probabilities.scores(score_margin),
            _ => unreachable!("checked in new"),
        }
    }
}

impl QueryStrategy for UncertaintyStrategy {
    fn id(&self) -> StrategyId {
        self.id
    }

    fn query(&mut self, ctx: &QueryContext<'_>) -> Result<QueryOutcome, StrategyError> {
        let unlabeled = ctx.unlabeled();
        check_k(ctx.k, unlabeled.len())?;
        if ctx.history.labeled.is_empty() {
            let picked = random_draw(&unlabeled, ctx.k, ctx.seed)?;
            let mut selection = SelectionResult::direct(picked, ctx.k);
            selection.diagnostics.push(Diagnostic::ColdStart);
            return Ok(outcome(self.id, unlabeled, selection));
        }
        let scores = self.scores(ctx, &unlabeled)?;
        let order = if self.id == StrategyId::Margin { ScoreOrder::Asc } else { ScoreOrder::Desc };
        let picked = select_uncertainty(&scores, ctx.k, order)?;
        Ok(outcome(self.id, unlabeled, SelectionResult::direct(picked, ctx.k)))
    }
}

#[derive(Debug)]
pub struct KMeansStrategy {
    embeddings: Arc<EmbeddingMatrix>,
}

impl KMeansStrategy {
    pub fn new(embeddings: Arc<EmbeddingMatrix>) -> Self {
        Self { embeddings }
    }
}

impl QueryStrategy for KMeansStrategy {
    fn id(&self) -> StrategyId {
        StrategyId::EmbeddingKmeans
    }

    fn query(&mut self, ctx: &QueryContext<'_>) -> Result<QueryOutcome, StrategyError> {
        let unlabeled = ctx.unlabeled();
        check_k(ctx.k, unlabeled.len())?;
        let candidates = self.embeddings.subset(&unlabeled)?;
        let picked = select_kmeans(&candidates, ctx.k, ctx.seed)?;
        Ok(outcome(StrategyId::EmbeddingKmeans, unlabeled, SelectionResult::direct(picked, ctx.k)))
    }
}
