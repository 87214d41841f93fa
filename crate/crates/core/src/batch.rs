//! Dense sample batches with shape metadata and optional public labels.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// A batch of flattened samples, `count x flat_dim`, remembering the
/// original per-sample shape (e.g. `[1, 28, 28]`).
///
/// Labels are public information and travel with the samples; `client_id`
/// tags provenance inside the protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    data: Array2<f32>,
    shape: Vec<usize>,
    labels: Option<Vec<u16>>,
    client_id: Option<u32>,
}

impl SampleBatch {
    pub fn new(
        data: Array2<f32>,
        shape: Vec<usize>,
        labels: Option<Vec<u16>>,
        client_id: Option<u32>,
    ) -> Result<Self> {
        let count = data.nrows();
        if count == 0 {
            return Err(Error::Batch("batch must contain at least one sample".into()));
        }
        let flat: usize = shape.iter().product();
        if flat != data.ncols() || shape.is_empty() {
            return Err(Error::ShapeMismatch {
                expected: vec![count, data.ncols()],
                got: std::iter::once(count).chain(shape.iter().copied()).collect(),
            });
        }
        if let Some(ref l) = labels {
            if l.len() != count {
                return Err(Error::Batch(format!(
                    "label count {} does not match sample count {count}",
                    l.len()
                )));
            }
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Batch("batch contains non-finite entries".into()));
        }
        Ok(Self { data, shape, labels, client_id })
    }

    /// Flat 1-dimensional samples, shape `[dim]`.
    pub fn flat(data: Array2<f32>, labels: Option<Vec<u16>>) -> Result<Self> {
        let dim = data.ncols();
        Self::new(data, vec![dim], labels, None)
    }

    pub fn count(&self) -> usize {
        self.data.nrows()
    }

    pub fn flat_dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> ArrayView2<'_, f32> {
        self.data.view()
    }

    pub fn into_data(self) -> Array2<f32> {
        self.data
    }

    pub fn labels(&self) -> Option<&[u16]> {
        self.labels.as_deref()
    }

    pub fn client_id(&self) -> Option<u32> {
        self.client_id
    }

    pub fn with_client_id(mut self, id: u32) -> Self {
        self.client_id = Some(id);
        self
    }

    /// Replace the data array, keeping shape metadata, labels and client id.
    /// The new array must have the same dimensions.
    pub fn with_data(&self, data: Array2<f32>) -> Result<Self> {
        if data.dim() != self.data.dim() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.count(), self.flat_dim()],
                got: vec![data.nrows(), data.ncols()],
            });
        }
        Self::new(data, self.shape.clone(), self.labels.clone(), self.client_id)
    }

    /// Select rows by index, carrying labels along.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if indices.iter().any(|&i| i >= self.count()) {
            return Err(Error::Batch("row index out of range".into()));
        }
        let data = self.data.select(Axis(0), indices);
        let labels = self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect());
        Self::new(data, self.shape.clone(), labels, self.client_id)
    }

    /// Concatenate batches with identical per-sample shape. Labels are kept
    /// only if every batch carries them; the result has no client id.
    pub fn concat(batches: &[SampleBatch]) -> Result<Self> {
        let first = batches.first().ok_or_else(|| Error::Batch("nothing to concatenate".into()))?;
        let mut rows = Vec::new();
        let all_labeled = batches.iter().all(|b| b.labels.is_some());
        let mut labels = all_labeled.then(Vec::new);
        for b in batches {
            if b.shape != first.shape {
                return Err(Error::ShapeMismatch {
                    expected: first.shape.clone(),
                    got: b.shape.clone(),
                });
            }
            rows.push(b.data.view());
            if let (Some(acc), Some(l)) = (labels.as_mut(), b.labels.as_ref()) {
                acc.extend_from_slice(l);
            }
        }
        let data = ndarray::concatenate(Axis(0), &rows)
            .map_err(|e| Error::Batch(format!("concatenate: {e}")))?;
        Self::new(data, first.shape.clone(), labels, None)
    }
}
