use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Accuracy,
    MacroF1,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Accuracy => "accuracy",
            Metric::MacroF1 => "macro_f1",
        })
    }
}

impl FromStr for Metric {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "accuracy" | "acc" => Ok(Metric::Accuracy),
            "macro_f1" | "f1" => Ok(Metric::MacroF1),
            _ => Err(HarnessError::Plan(format!("unknown metric `{s}`"))),
        }
    }
}

/// Accuracy, or the unweighted mean of per-class F1 over `label_space`. A
/// class with no gold and no predicted instances scores F1 = 0.
pub fn compute_metrics(
    predictions: &[String],
    gold: &[String],
    metric: Metric,
    label_space: &[String],
) -> Result<f64, HarnessError> {
    if predictions.len() != gold.len() || gold.is_empty() {
        return Err(HarnessError::Shape { predictions: predictions.len(), gold: gold.len() });
    }
    match metric {
        Metric::Accuracy => {
            let correct = predictions.iter().zip(gold).filter(|(p, g)| p == g).count();
            Ok(correct as f64 / gold.len() as f64)
        }
        Metric::MacroF1 => {
            if label_space.is_empty() {
                return Err(HarnessError::Plan("macro-F1 needs a label space".into()));
            }
            let total: f64 = label_space
                .iter()
                .map(|class| {
                    let mut tp = 0usize;
                    let mut fp = 0usize;
                    let mut fn_ = 0usize;
                    for (p, g) in predictions.iter().zip(gold) {
                        match (p == class, g == class) {
                            (true, true) => tp += 1,
                            (true, false) => fp += 1,
                            (false, true) => fn_ += 1,
                            (false, false) => {}
                        }
                    }
                    let denominator = 2 * tp + fp + fn_;
                    if denominator == 0 {
                        0.0
                    } else {
                        2.0 * tp as f64 / denominator as f64
                    }
                })
                .sum();
            Ok(total / label_space.len() as f64)
        }
    }
}

/// Mean and sample standard deviation (n - 1). One value has SD 0.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
