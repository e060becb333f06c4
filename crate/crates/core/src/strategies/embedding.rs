//! Embedding input file:
//!
//! ```text
//! <count> <dimension> <source_tag>
//! <index> <v1> <v2> ... <vd>
//! ...
//! ```
//!
//! Indices refer to record positions in the data file, so the same file
//! serves every shuffled view of the pool.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::StrategyError;
use crate::corpus::Pool;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMatrix {
    vectors: Vec<Vec<f64>>,
    row_index_map: Vec<usize>,
    source_tag: String,
    #[serde(skip)]
    lookup: HashMap<usize, usize>,
}

impl EmbeddingMatrix {
    pub fn new(
        vectors: Vec<Vec<f64>>,
        row_index_map: Vec<usize>,
        source_tag: impl Into<String>,
    ) -> Result<Self, StrategyError> {
        if vectors.len() != row_index_map.len() {
            return Err(StrategyError::Validation("vector count does not match index map".into()));
        }
        let dim = vectors.first().map_or(0, Vec::len);
        if vectors.iter().any(|v| v.len() != dim) {
            return Err(StrategyError::Validation("embedding rows differ in dimension".into()));
        }
        if !vectors.is_empty() && dim == 0 {
            return Err(StrategyError::Validation("embedding dimension must be at least 1".into()));
        }
        if vectors.iter().flatten().any(|v| !v.is_finite()) {
            return Err(StrategyError::Validation("embedding contains a non-finite value".into()));
        }
        let mut lookup = HashMap::with_capacity(row_index_map.len());
        for (row, &index) in row_index_map.iter().enumerate() {
            if lookup.insert(index, row).is_some() {
                return Err(StrategyError::Validation(format!("index {index} appears twice")));
            }
        }
        Ok(Self { vectors, row_index_map, source_tag: source_tag.into(), lookup })
    }

    pub fn load(path: &Path) -> Result<Self, StrategyError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| StrategyError::Resource(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&raw).map_err(|e| match e {
            StrategyError::Validation(m) => StrategyError::Validation(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(raw: &str) -> Result<Self, StrategyError> {
        let bad = |m: String| StrategyError::Validation(m);
        let mut lines = raw.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("empty embedding file".into()))?;
        let mut fields = header.split_whitespace();
        let count: usize = fields.next().and_then(|f| f.parse().ok()).ok_or_else(|| bad("header: bad count".into()))?;
        let dim: usize =
            fields.next().and_then(|f| f.parse().ok()).ok_or_else(|| bad("header: bad dimension".into()))?;
        let tag = fields.collect::<Vec<_>>().join(" ");

        let mut vectors = Vec::with_capacity(count);
        let mut indices = Vec::with_capacity(count);
        for (n, line) in lines.enumerate() {
            let mut fields = line.split_whitespace();
            let index: usize =
                fields.next().and_then(|f| f.parse().ok()).ok_or_else(|| bad(format!("row {}: bad index", n + 1)))?;
            let vector: Vec<f64> = fields
                .map(|f| f.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| bad(format!("row {}: {e}", n + 1)))?;
            if vector.len() != dim {
                return Err(bad(format!("row {}: expected {dim} values, found {}", n + 1, vector.len())));
            }
            indices.push(index);
            vectors.push(vector);
        }
        if vectors.len() != count {
            return Err(bad(format!("header declares {count} rows, found {}", vectors.len())));
        }
        Self::new(vectors, indices, tag)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {} {}\n", self.vectors.len(), self.dim(), self.source_tag);
        for (index, vector) in self.row_index_map.iter().zip(&self.vectors) {
            out.push_str(&index.to_string());
            for v in vector {
                out.push(' ');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn source_tag(&self) -> &str {
        &self.source_tag
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn row_index_map(&self) -> &[usize] {
        &self.row_index_map
    }

    pub fn get(&self, index: usize) -> Option<&[f64]> {
        let row = match self.lookup.get(&index) {
            Some(&row) => row,
            None => self.row_index_map.iter().position(|&i| i == index)?,
        };
        Some(&self.vectors[row])
    }

    /// Re-keys file-position embeddings by the pool's current indices.
    pub fn aligned_to(&self, pool: &Pool) -> Result<Self, StrategyError> {
        let mut vectors = Vec::with_capacity(pool.len());
        for instance in pool.instances() {
            let vector = self
                .get(instance.source_row)
                .ok_or_else(|| StrategyError::Resource(format!("no embedding for record {}", instance.source_row)))?;
            vectors.push(vector.to_vec());
        }
        Self::new(vectors, (0..pool.len()).collect(), self.source_tag.clone())
    }

    /// Rows for the given pool indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self, StrategyError> {
        let vectors = indices
            .iter()
            .map(|&i| {
                self.get(i)
                    .map(<[f64]>::to_vec)
                    .ok_or_else(|| StrategyError::Resource(format!("no embedding for index {i}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(vectors, indices.to_vec(), self.source_tag.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_render_round_trip() {
        let raw = "2 3 toy-encoder\n0 0.5 1 -2\n1 0 0 0.25\n";
        let m = EmbeddingMatrix::parse(raw).unwrap();
        assert_eq!(m.dim(), 3);
        assert_eq!(m.source_tag(), "toy-encoder");
        assert_eq!(m.get(1).unwrap(), &[0.0, 0.0, 0.25]);
        assert_eq!(EmbeddingMatrix::parse(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn rejects_malformed() {
        assert!(EmbeddingMatrix::parse("2 2 t\n0 1 1\n").is_err());
        assert!(EmbeddingMatrix::parse("1 2 t\n0 1\n").is_err());
        assert!(EmbeddingMatrix::parse("1 1 t\n0 NaN\n").is_err());
        assert!(EmbeddingMatrix::parse("2 1 t\n0 1\n0 2\n").is_err());
    }
}
