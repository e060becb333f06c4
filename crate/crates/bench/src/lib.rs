//! Fixtures shared by the benchmarks: a synthetic pool with embeddings,
//! class distributions from a fitted proxy, and a chatty LLM reply.

use activellm_core::corpus::Pool;
use activellm_core::harness::SyntheticSpec;
use activellm_core::strategies::{fit_proxy_classifier, EmbeddingMatrix, ProxyParams, StrategyError};

pub struct Workload {
    pub pool: Pool,
    pub embeddings: EmbeddingMatrix,
    /// The first `labeled` pool indices, used as the training set.
    pub labeled: Vec<usize>,
}

pub fn workload(n: usize, classes: usize, dim: usize, labeled: usize) -> Workload {
    let spec = SyntheticSpec { classes, dim, separation: 2.0, spread: 1.0, seed: 42 };
    let (pool, embeddings) = spec.split("bench", n);
    Workload { pool, embeddings, labeled: (0..labeled.min(n)).collect() }
}

impl Workload {
    pub fn labels(&self) -> Vec<String> {
        self.labeled
            .iter()
            .map(|&i| self.pool.instances()[i].gold_label.clone().expect("synthetic rows are labeled"))
            .collect()
    }

    pub fn labeled_embeddings(&self) -> EmbeddingMatrix {
        self.embeddings.subset(&self.labeled).expect("labeled rows exist")
    }

    /// Predicted distributions over the whole pool from a short proxy fit.
    pub fn distributions(&self) -> Result<Vec<Vec<f64>>, StrategyError> {
        let params = ProxyParams { epochs: 50, ..ProxyParams::default() };
        let model = fit_proxy_classifier(&self.labeled_embeddings(), &self.labels(), self.pool.label_space(), &params)?;
        Ok(model.predict_matrix(&self.embeddings)?.rows().to_vec())
    }
}

/// A step-by-step answer that mentions many numbers before the final list.
pub fn cot_response(presented: &[usize], k: usize) -> String {
    let mut out = String::from("Let me go through the candidates one at a time.\n\n");
    for (n, index) in presented.iter().enumerate() {
        out.push_str(&format!(
            "{}. Index {index}: covers {} distinct points and differs from item {} in tone.\n",
            n + 1,
            index % 7 + 2,
            presented[(n + 1) % presented.len()]
        ));
    }
    let chosen: Vec<String> =
        presented.iter().step_by((presented.len() / k).max(1)).take(k).map(usize::to_string).collect();
    out.push_str(&format!(
        "\nAfter weighing them, the most informative set is below.\n\nSelected indices: {}",
        chosen.join(", ")
    ));
    out
}
