//! Uncertainty scores over class-probability vectors and batch top-k
//! selection. Entropies use the natural log with `0 ln 0 = 0`.

use serde::{Deserialize, Serialize};

use super::StrategyError;

pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

pub fn validate_distribution(p: &[f64]) -> Result<(), StrategyError> {
    if p.is_empty() {
        return Err(StrategyError::Validation("probability vector is empty".into()));
    }
    if let Some(bad) = p.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
        return Err(StrategyError::Validation(format!("probability {bad} outside [0, 1]")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(StrategyError::Validation(format!("probabilities sum to {sum}, not 1")));
    }
    Ok(())
}

fn entropy_unchecked(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

/// `1 - max(p)`. Higher is more uncertain.
pub fn score_least_confidence(p: &[f64]) -> Result<f64, StrategyError> {
    validate_distribution(p)?;
    Ok(1.0 - p.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Shannon entropy in nats.
pub fn score_entropy(p: &[f64]) -> Result<f64, StrategyError> {
    validate_distribution(p)?;
    Ok(entropy_unchecked(p))
}

/// Gap between the two largest probabilities. Lower is more uncertain.
pub fn score_margin(p: &[f64]) -> Result<f64, StrategyError> {
    validate_distribution(p)?;
    if p.len() < 2 {
        return Err(StrategyError::Domain("margin needs at least two classes".into()));
    }
    let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &v in p {
        if v > first {
            second = first;
            first = v;
        } else if v > second {
            second = v;
        }
    }
    Ok(first - second)
}

/// Mutual information between the label and the ensemble member:
/// `H(mean_m p_m) - mean_m H(p_m)`.
pub fn score_bald<P: AsRef<[f64]>>(ensemble: &[P]) -> Result<f64, StrategyError> {
    if ensemble.len() < 2 {
        return Err(StrategyError::Domain("BALD needs an ensemble of at least two members".into()));
    }
    let classes = ensemble[0].as_ref().len();
    for member in ensemble {
        validate_distribution(member.as_ref())?;
        if member.as_ref().len() != classes {
            return Err(StrategyError::Validation("ensemble members disagree on class count".into()));
        }
    }
    let first = ensemble[0].as_ref();
    if ensemble.iter().all(|p| p.as_ref() == first) {
        return Ok(0.0);
    }
    let m = ensemble.len() as f64;
    let mean: Vec<f64> = (0..classes).map(|c| ensemble.iter().map(|p| p.as_ref()[c]).sum::<f64>() / m).collect();
    let expected_entropy = ensemble.iter().map(|p| entropy_unchecked(p.as_ref())).sum::<f64>() / m;
    Ok((entropy_unchecked(&mean) - expected_entropy).max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreOrder {
    /// Highest scores first.
    Desc,
    /// Lowest scores first.
    Asc,
}

/// Top `k` pool indices by score; ties go to the lower pool index.
pub fn select_uncertainty(scores: &[(usize, f64)], k: usize, order: ScoreOrder) -> Result<Vec<usize>, StrategyError> {
    if k > scores.len() {
        return Err(StrategyError::Size { requested: k, available: scores.len() });
    }
    if let Some((index, _)) = scores.iter().find(|(_, s)| s.is_nan()) {
        return Err(StrategyError::Validation(format!("score for index {index} is NaN")));
    }
    let mut ranked = scores.to_vec();
    ranked.sort_by(|(ia, sa), (ib, sb)| {
        let by_score = match order {
            ScoreOrder::Desc => sb.total_cmp(sa),
            ScoreOrder::Asc => sa.total_cmp(sb),
        };
        by_score.then(ia.cmp(ib))
    });
    Ok(ranked.into_iter().take(k).map(|(i, _)| i).collect())
}

/// Per-instance class-probability rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityMatrix {
    rows: Vec<Vec<f64>>,
    row_index_map: Vec<usize>,
}

impl ProbabilityMatrix {
    pub fn new(rows: Vec<Vec<f64>>, row_index_map: Vec<usize>) -> Result<Self, StrategyError> {
        if rows.len() != row_index_map.len() {
            return Err(StrategyError::Validation("row count does not match index map".into()));
        }
        for row in &rows {
            validate_distribution(row)?;
        }
        Ok(Self { rows, row_index_map })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row_index_map(&self) -> &[usize] {
        &self.row_index_map
    }

    pub fn scores(
        &self,
        score: impl Fn(&[f64]) -> Result<f64, StrategyError>,
    ) -> Result<Vec<(usize, f64)>, StrategyError> {
        self.row_index_map.iter().zip(&self.rows).map(|(&i, row)| Ok((i, score(row)?))).collect()
    }
}
