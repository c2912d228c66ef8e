use crate::error::{D3Error, Result};
use crate::scalar::Scalar;

/// Row-major set of equally sized vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T> {
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> FeatureMatrix<T> {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "feature dimension must be positive");
        Self {
            dim,
            data: Vec::new(),
        }
    }

    pub fn from_flat(dim: usize, data: Vec<T>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(D3Error::Shape(format!(
                "{} values do not split into rows of {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let dim = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or_else(|| D3Error::Shape("no rows".into()))?;
        let mut m = Self::from_flat(dim, Vec::with_capacity(dim * rows.len()))?;
        for r in rows {
            m.push(r.as_ref())?;
        }
        Ok(m)
    }

    pub fn push(&mut self, row: &[T]) -> Result<()> {
        if row.len() != self.dim {
            return Err(D3Error::Shape(format!(
                "row of length {} pushed into matrix of dim {}",
                row.len(),
                self.dim
            )));
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    /// Appends an `f32` row, widening or narrowing to `T`.
    pub fn push_f32(&mut self, row: &[f32]) -> Result<()> {
        if row.len() != self.dim {
            return Err(D3Error::Shape(format!(
                "row of length {} pushed into matrix of dim {}",
                row.len(),
                self.dim
            )));
        }
        self.data.extend(row.iter().map(|&v| T::from_f32_lossless(v)));
        Ok(())
    }

    pub fn extend(&mut self, other: &FeatureMatrix<T>) -> Result<()> {
        if other.dim != self.dim {
            return Err(D3Error::Shape(format!(
                "cannot append dim {} rows to dim {} matrix",
                other.dim, self.dim
            )));
        }
        self.data.extend_from_slice(&other.data);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, T> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[T] {
        &self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
