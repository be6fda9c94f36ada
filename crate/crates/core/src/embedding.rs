//! Fixed-dimension embedding vectors and the cosine-similarity kernels used
//! by every other module.
//!
//! Embeddings are stored unnormalized; normalization happens on read inside
//! the similarity and loss computations, so plain gradient steps on raw
//! coordinates stay valid. All arithmetic is `f64`.

use crate::error::{Error, Result};

/// A `d`-dimensional embedding vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    values: Vec<f64>,
}

impl FeatureVector {
    /// Wraps raw coordinates. Rejects empty or non-finite input.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::empty("feature vector must have dimension >= 1"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::degenerate("feature vector has non-finite component"));
        }
        Ok(FeatureVector { values })
    }

    /// All-zero vector of dimension `d` (valid storage, degenerate for cosine ops).
    pub fn zeros(d: usize) -> Self {
        FeatureVector {
            values: vec![0.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &FeatureVector) -> Result<f64> {
        self.check_dim(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum())
    }

    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: f64, other: &FeatureVector) -> Result<FeatureVector> {
        self.check_dim(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + alpha * b)
            .collect();
        FeatureVector::new(values)
    }

    pub fn sub(&self, other: &FeatureVector) -> Result<FeatureVector> {
        self.axpy(-1.0, other)
    }

    pub fn scale(&self, alpha: f64) -> FeatureVector {
        FeatureVector {
            values: self.values.iter().map(|v| v * alpha).collect(),
        }
    }

    fn check_dim(&self, other: &FeatureVector) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(())
    }
}

/// Cosine similarity `u.v / (|u||v|)` in `[-1, 1]`.
///
/// Zero-norm inputs are an explicit error, never a silent 0.
pub fn cosine_sim(u: &FeatureVector, v: &FeatureVector) -> Result<f64> {
    let nu = u.norm();
    let nv = v.norm();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::degenerate("cosine similarity of zero-norm vector"));
    }
    Ok(u.dot(v)? / (nu * nv))
}

/// Cosine distance `1 - cosine_sim(u, v)` in `[0, 2]`.
pub fn cosine_distance(u: &FeatureVector, v: &FeatureVector) -> Result<f64> {
    Ok(1.0 - cosine_sim(u, v)?)
}

/// Direction-preserving rescale to unit norm.
pub fn l2_normalize(u: &FeatureVector) -> Result<FeatureVector> {
    let n = u.norm();
    if n == 0.0 {
        return Err(Error::degenerate("cannot normalize zero-norm vector"));
    }
    Ok(u.scale(1.0 / n))
}

/// The learnable per-sample feature table. Row count and dimension are fixed
/// for a run; rows are mutated only by the trainer's gradient step.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    rows: Vec<FeatureVector>,
    dim: usize,
}

impl EmbeddingTable {
    pub fn new(rows: Vec<FeatureVector>) -> Result<Self> {
        let dim = match rows.first() {
            Some(r) => r.dim(),
            None => return Err(Error::empty("embedding table needs at least one row")),
        };
        for r in &rows {
            if r.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: r.dim(),
                });
            }
        }
        Ok(EmbeddingTable { rows, dim })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> Result<&FeatureVector> {
        self.rows.get(i).ok_or(Error::OutOfRange {
            what: "sample id",
            index: i,
            len: self.rows.len(),
        })
    }

    pub fn rows(&self) -> &[FeatureVector] {
        &self.rows
    }

    /// In-place update `row[i] += alpha * delta`. Rejects non-finite results.
    pub fn add_to_row(&mut self, i: usize, alpha: f64, delta: &[f64]) -> Result<()> {
        let len = self.rows.len();
        let row = self.rows.get_mut(i).ok_or(Error::OutOfRange {
            what: "sample id",
            index: i,
            len,
        })?;
        if delta.len() != row.values.len() {
            return Err(Error::DimensionMismatch {
                expected: row.values.len(),
                got: delta.len(),
            });
        }
        for (v, d) in row.values.iter_mut().zip(delta) {
            *v += alpha * d;
        }
        if row.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invariant(format!(
                "row {i} became non-finite after update"
            )));
        }
        Ok(())
    }

    /// Multiplies every coordinate of every row by `alpha`.
    pub fn scale_all(&mut self, alpha: f64) {
        for row in &mut self.rows {
            for v in &mut row.values {
                *v *= alpha;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(values: &[f64]) -> FeatureVector {
        FeatureVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn cosine_identical_unit_vectors() {
        assert_eq!(cosine_sim(&fv(&[1.0, 0.0]), &fv(&[1.0, 0.0])).unwrap(), 1.0);
    }

    #[test]
    fn cosine_orthogonal() {
        assert_eq!(cosine_sim(&fv(&[1.0, 0.0]), &fv(&[0.0, 1.0])).unwrap(), 0.0);
    }

    #[test]
    fn cosine_hand_value() {
        // (3,4).(4,3) = 24, norms 5 and 5.
        let s = cosine_sim(&fv(&[3.0, 4.0]), &fv(&[4.0, 3.0])).unwrap();
        assert!((s - 0.96).abs() < 1e-15);
    }

    #[test]
    fn cosine_zero_norm_is_error() {
        assert!(cosine_sim(&fv(&[0.0, 0.0]), &fv(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn cosine_symmetric() {
        let u = fv(&[0.3, -1.2, 0.5]);
        let v = fv(&[2.0, 0.1, -0.4]);
        assert_eq!(cosine_sim(&u, &v).unwrap(), cosine_sim(&v, &u).unwrap());
    }

    #[test]
    fn normalize_scaling() {
        let n = l2_normalize(&fv(&[2.0, 0.0])).unwrap();
        assert_eq!(n.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn normalize_symmetry() {
        let n = l2_normalize(&fv(&[1.0, 1.0])).unwrap();
        let e = 1.0 / 2f64.sqrt();
        assert!((n.as_slice()[0] - e).abs() < 1e-15);
        assert!((n.as_slice()[1] - e).abs() < 1e-15);
    }

    #[test]
    fn normalize_zero_is_error() {
        assert!(l2_normalize(&fv(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn table_rejects_ragged_rows() {
        let rows = vec![fv(&[1.0, 0.0]), fv(&[1.0, 0.0, 0.0])];
        assert!(EmbeddingTable::new(rows).is_err());
    }

    #[test]
    fn non_finite_component_rejected() {
        assert!(FeatureVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(FeatureVector::new(vec![f64::INFINITY]).is_err());
    }
}
