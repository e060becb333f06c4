//! Seeded clustered data: one Gaussian blob per class in embedding space and
//! short template texts. Offline runs, benchmarks and tests use it where a
//! real corpus with precomputed embeddings would otherwise be needed.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{Instance, Pool};
use crate::seeds::derive_seed;
use crate::strategies::EmbeddingMatrix;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    /// Distance of each class center from the origin.
    pub separation: f64,
    /// Per-coordinate standard deviation around the center.
    pub spread: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { classes: 4, dim: 8, separation: 3.0, spread: 1.0, seed: 0 }
    }
}

const TOPICS: [&str; 8] = ["sports", "business", "science", "world", "health", "travel", "music", "food"];

impl SyntheticSpec {
    pub fn label(&self, class: usize) -> String {
        TOPICS.get(class).map_or_else(|| format!("class_{class}"), |t| t.to_string())
    }

    pub fn label_space(&self) -> Vec<String> {
        (0..self.classes).map(|c| self.label(c)).collect()
    }

    /// Class centers; shared by every split drawn from this spec.
    pub fn centers(&self) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, "centers", 0));
        let normal = Normal::new(0.0, 1.0).expect("valid normal");
        (0..self.classes)
            .map(|_| {
                let v: Vec<f64> = (0..self.dim).map(|_| normal.sample(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::EPSILON);
                v.into_iter().map(|x| x / norm * self.separation).collect()
            })
            .collect()
    }

    /// Draws `n` instances with balanced classes in shuffled order. `split`
    /// names the draw so train and test splits differ.
    pub fn split(&self, split: &str, n: usize) -> (Pool, EmbeddingMatrix) {
        assert!(self.classes >= 1 && self.dim >= 1 && n >= 1, "degenerate synthetic spec");
        let centers = self.centers();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, split, 0));
        let noise = Normal::new(0.0, self.spread).expect("spread must be finite and non-negative");
        let mut classes: Vec<usize> = (0..n).map(|i| i % self.classes).collect();
        classes.shuffle(&mut rng);

        let mut instances = Vec::with_capacity(n);
        let mut vectors = Vec::with_capacity(n);
        for (row, &class) in classes.iter().enumerate() {
            let label = self.label(class);
            instances.push(Instance {
                index: row,
                text: format!("{split} item {row}: a short note about {label}"),
                text_pair: None,
                gold_label: Some(label),
                source_row: row,
            });
            vectors.push(centers[class].iter().map(|c| c + noise.sample(&mut rng)).collect());
        }
        let pool = Pool::new("synthetic", self.label_space(), None, instances).expect("synthetic pool is valid");
        let embeddings =
            EmbeddingMatrix::new(vectors, (0..n).collect(), format!("synthetic-{split}")).expect("finite embeddings");
        (pool, embeddings)
    }
}
