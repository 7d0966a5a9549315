//! Sparse feature vectors and record-aligned feature matrices shared by the
//! text, financial, and model modules.

use thiserror::Error;

use crate::panel::RecordKey;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SparseError {
    #[error("indices must be strictly increasing (index {0} out of order)")]
    UnsortedIndices(u32),
    #[error("non-finite value at index {0}")]
    NonFiniteValue(u32),
    #[error("index {index} exceeds dimensionality {dim}")]
    IndexOutOfBounds { index: u32, dim: usize },
}

/// Sparse vector of (index, value) pairs with strictly increasing indices
/// and finite values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVector {
    entries: Vec<(u32, f64)>,
}

impl SparseVector {
    pub fn empty() -> Self {
        SparseVector::default()
    }

    /// Builds a vector from pairs, validating ordering and finiteness.
    /// Zero values are kept out of the representation.
    pub fn new(entries: Vec<(u32, f64)>) -> Result<Self, SparseError> {
        let mut last: Option<u32> = None;
        for &(i, v) in &entries {
            if let Some(prev) = last {
                if i <= prev {
                    return Err(SparseError::UnsortedIndices(i));
                }
            }
            if !v.is_finite() {
                return Err(SparseError::NonFiniteValue(i));
            }
            last = Some(i);
        }
        Ok(SparseVector {
            entries: entries.into_iter().filter(|&(_, v)| v != 0.0).collect(),
        })
    }

    /// Builds a vector from a dense slice, dropping zeros.
    pub fn from_dense(values: &[f64]) -> Self {
        SparseVector {
            entries: values
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(i, &v)| (i as u32, v))
                .collect(),
        }
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Largest index plus one, or 0 for the empty vector.
    pub fn min_dim(&self) -> usize {
        self.entries.last().map_or(0, |&(i, _)| i as usize + 1)
    }

    pub fn l2_norm(&self) -> f64 {
        self.entries
            .iter()
            .map(|&(_, v)| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Dot product against a dense weight slice.
    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        self.entries
            .iter()
            .map(|&(i, v)| v * dense[i as usize])
            .sum()
    }

    /// Adds `factor * self` into a dense accumulator.
    pub fn add_scaled_into(&self, factor: f64, acc: &mut [f64]) {
        for &(i, v) in &self.entries {
            acc[i as usize] += factor * v;
        }
    }
}

/// Where a feature matrix came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureProvenance {
    Financial,
    Text,
    Combined,
    CompanyIdOnly,
}

/// Sparse rows aligned one-to-one with record keys.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    dim: usize,
    keys: Vec<RecordKey>,
    rows: Vec<SparseVector>,
    provenance: FeatureProvenance,
}

impl FeatureMatrix {
    pub fn new(
        dim: usize,
        keys: Vec<RecordKey>,
        rows: Vec<SparseVector>,
        provenance: FeatureProvenance,
    ) -> Result<Self, SparseError> {
        assert_eq!(keys.len(), rows.len(), "keys and rows must align");
        for row in &rows {
            if let Some(&(i, _)) = row.entries().last() {
                if i as usize >= dim {
                    return Err(SparseError::IndexOutOfBounds { index: i, dim });
                }
            }
        }
        Ok(FeatureMatrix {
            dim,
            keys,
            rows,
            provenance,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn keys(&self) -> &[RecordKey] {
        &self.keys
    }

    pub fn rows(&self) -> &[SparseVector] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &SparseVector {
        &self.rows[i]
    }

    pub fn provenance(&self) -> FeatureProvenance {
        self.provenance
    }

    /// New matrix holding the given row positions, in the given order.
    pub fn subset(&self, positions: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            dim: self.dim,
            keys: positions.iter().map(|&i| self.keys[i].clone()).collect(),
            rows: positions.iter().map(|&i| self.rows[i].clone()).collect(),
            provenance: self.provenance,
        }
    }
}
