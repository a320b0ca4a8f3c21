//! Per-sample maximum mean discrepancy against a clean reference set.
//!
//! The sample is treated as a point mass, so the squared discrepancy is
//! `k(x, x) - (2/m) sum_i k(x, r_i) + (1/m^2) sum_ij k(r_i, r_j)` with a
//! Gaussian kernel `k(a, b) = exp(-|a - b|^2 / h^2)` whose bandwidth `h` is the
//! median pairwise distance within the reference set.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util;

/// Default cap on reference rows.
pub const DEFAULT_REFERENCE_SIZE: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmdReference {
    pub vectors: Vec<Vec<f64>>,
    pub bandwidth: f64,
    pub self_term: f64,
    /// Set when the reference points all coincide and the bandwidth fell
    /// back to 1.
    #[serde(default)]
    pub degenerate: bool,
}

impl MmdReference {
    /// Builds a reference from exactly the given vectors (no subsampling).
    pub fn from_vectors(vectors: Vec<Vec<f64>>) -> Result<Self> {
        if vectors.len() < 2 {
            return Err(Error::InsufficientReference(vectors.len()));
        }
        let dim = vectors[0].len();
        if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, actual: v.len() });
        }
        let m = vectors.len();
        let mut distances = Vec::with_capacity(m * (m - 1) / 2);
        for i in 0..m {
            for j in i + 1..m {
                distances.push(sq_dist(&vectors[i], &vectors[j]).sqrt());
            }
        }
        distances.sort_by(f64::total_cmp);
        let mid = distances.len() / 2;
        let median = if distances.len() % 2 == 1 {
            distances[mid]
        } else {
            0.5 * (distances[mid - 1] + distances[mid])
        };
        let (bandwidth, degenerate) = if median > 0.0 { (median, false) } else { (1.0, true) };

        let mut reference = Self { vectors, bandwidth, self_term: 0.0, degenerate };
        let mut total = 0.0;
        for i in 0..m {
            total += 1.0;
            for j in i + 1..m {
                total += 2.0 * reference.kernel(&reference.vectors[i], &reference.vectors[j]);
            }
        }
        reference.self_term = total / (m * m) as f64;
        Ok(reference)
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    #[inline]
    pub fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        (-sq_dist(a, b) / (self.bandwidth * self.bandwidth)).exp()
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Subsamples `m` rows without replacement (seeded) and builds the reference.
pub fn build_reference(clean: &[Vec<f64>], m: usize, seed: u64) -> Result<MmdReference> {
    if clean.len() < 2 {
        return Err(Error::InsufficientReference(clean.len()));
    }
    if m < 2 || m > clean.len() {
        return Err(Error::InvalidArgument(format!(
            "reference size {m} must lie in [2, {}]",
            clean.len()
        )));
    }
    let mut rng = util::rng(seed);
    let picked = sample(&mut rng, clean.len(), m);
    MmdReference::from_vectors(picked.iter().map(|i| clean[i].clone()).collect())
}

/// MMD distance of one standardized sample from the reference.
pub fn mmd_score(x: &[f64], reference: &MmdReference) -> Result<f64> {
    if x.len() != reference.dim() {
        return Err(Error::DimensionMismatch {
            expected: reference.dim(),
            actual: x.len(),
        });
    }
    let cross: f64 = reference.vectors.iter().map(|r| reference.kernel(x, r)).sum();
    let sq = 1.0 - 2.0 * cross / reference.len() as f64 + reference.self_term;
    Ok(sq.max(0.0).sqrt())
}
