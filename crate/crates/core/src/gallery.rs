//! Gallery dictionary: feature matrix, subject labels and the per-subject
//! block partition consumed by every solver in the crate.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense 1-based subject identifier. Ids are assigned at ingest in order of
/// first appearance; the original labels are kept alongside the gallery so
/// reports can map back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubjectId(pub u32);

impl std::fmt::Display for SubjectId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Gallery dictionary `A` (`d x N`) with one label per column and the block
/// partition `g_c` derived from the labels. Immutable after construction:
/// `remove_subject` returns a new value.
#[derive(Debug, Clone)]
pub struct Gallery {
    matrix: DMatrix<f64>,
    labels: Vec<SubjectId>,
    blocks: BTreeMap<SubjectId, Vec<usize>>,
    original_labels: BTreeMap<SubjectId, i64>,
}

impl Gallery {
    /// Build a gallery from a feature matrix and one raw label per column.
    ///
    /// Labels are re-indexed densely to `1..=C` preserving first-appearance
    /// order; the mapping back to the raw labels is recorded. Columns keep
    /// their input order inside each block.
    pub fn build(matrix: DMatrix<f64>, raw_labels: &[i64]) -> Result<Self> {
        if raw_labels.is_empty() || matrix.ncols() == 0 || matrix.nrows() == 0 {
            return Err(Error::EmptyInput("gallery matrix and labels must be non-empty".into()));
        }
        if matrix.ncols() != raw_labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "gallery has {} columns but {} labels",
                matrix.ncols(),
                raw_labels.len()
            )));
        }
        if let Some(bad) = raw_labels.iter().find(|&&l| l <= 0) {
            return Err(Error::InvalidConfig(format!("labels must be positive, got {bad}")));
        }
        if !matrix.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("gallery matrix".into()));
        }

        let mut dense_of_raw: BTreeMap<i64, SubjectId> = BTreeMap::new();
        let mut original_labels = BTreeMap::new();
        let mut labels = Vec::with_capacity(raw_labels.len());
        let mut blocks: BTreeMap<SubjectId, Vec<usize>> = BTreeMap::new();
        let mut next = 1u32;
        for (col, &raw) in raw_labels.iter().enumerate() {
            let id = *dense_of_raw.entry(raw).or_insert_with(|| {
                let id = SubjectId(next);
                next += 1;
                original_labels.insert(id, raw);
                id
            });
            labels.push(id);
            blocks.entry(id).or_default().push(col);
        }

        Ok(Gallery { matrix, labels, blocks, original_labels })
    }

    /// Feature matrix `A`.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Feature dimension `d`.
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Number of columns `N`.
    pub fn num_columns(&self) -> usize {
        self.matrix.ncols()
    }

    /// Number of subjects currently present.
    pub fn num_subjects(&self) -> usize {
        self.blocks.len()
    }

    /// Per-column dense labels.
    pub fn labels(&self) -> &[SubjectId] {
        &self.labels
    }

    /// Block partition: subject id to ordered 0-based column indices.
    pub fn blocks(&self) -> &BTreeMap<SubjectId, Vec<usize>> {
        &self.blocks
    }

    /// Column indices of subject `c`.
    pub fn block(&self, c: SubjectId) -> Result<&[usize]> {
        self.blocks
            .get(&c)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::SubjectAbsent(format!("subject {c} not in gallery")))
    }

    /// Subjects currently present, ascending.
    pub fn subjects(&self) -> impl Iterator<Item = SubjectId> + '_ {
        self.blocks.keys().copied()
    }

    /// Raw label a dense id was assigned from.
    pub fn original_label(&self, c: SubjectId) -> Option<i64> {
        self.original_labels.get(&c).copied()
    }

    /// Returns a copy with every column scaled to unit `l2` norm
    /// (zero columns are left untouched).
    pub fn normalized_columns(&self) -> Self {
        let mut matrix = self.matrix.clone();
        for mut col in matrix.column_iter_mut() {
            let norm = col.norm();
            if norm > 0.0 {
                col /= norm;
            }
        }
        Gallery { matrix, ..self.clone() }
    }

    /// Zero out every entry of `x` outside subject `c`'s block.
    ///
    /// This is the selection map applied to a coefficient vector before a
    /// per-subject reconstruction `A * select(x, c)`.
    pub fn select_subject(&self, x: &DVector<f64>, c: SubjectId) -> Result<DVector<f64>> {
        if x.len() != self.num_columns() {
            return Err(Error::DimensionMismatch(format!(
                "vector has {} entries, gallery has {} columns",
                x.len(),
                self.num_columns()
            )));
        }
        let block = self.block(c)?;
        let mut out = DVector::zeros(x.len());
        for &j in block {
            out[j] = x[j];
        }
        Ok(out)
    }

    /// Reconstruction `A * select(x, c)` computed over block columns only.
    pub fn reconstruct_subject(&self, x: &DVector<f64>, c: SubjectId) -> Result<DVector<f64>> {
        if x.len() != self.num_columns() {
            return Err(Error::DimensionMismatch(format!(
                "vector has {} entries, gallery has {} columns",
                x.len(),
                self.num_columns()
            )));
        }
        let block = self.block(c)?;
        let mut out = DVector::zeros(self.dim());
        for &j in block {
            out.axpy(x[j], &self.matrix.column(j), 1.0);
        }
        Ok(out)
    }

    /// Remove every column of subject `c`, preserving the relative order of
    /// the survivors. Returns the reduced gallery and the map from each new
    /// column index to its old one. Removing the last subject yields a valid
    /// zero-column gallery.
    pub fn remove_subject(&self, c: SubjectId) -> Result<(Gallery, Vec<usize>)> {
        if !self.blocks.contains_key(&c) {
            return Err(Error::SubjectAbsent(format!("subject {c} not in gallery")));
        }
        let keep: Vec<usize> = (0..self.num_columns()).filter(|j| self.labels[*j] != c).collect();
        let matrix = self.matrix.select_columns(keep.iter());
        let labels: Vec<SubjectId> = keep.iter().map(|&j| self.labels[j]).collect();

        let mut blocks: BTreeMap<SubjectId, Vec<usize>> = BTreeMap::new();
        for (new_col, &id) in labels.iter().enumerate() {
            blocks.entry(id).or_default().push(new_col);
        }
        let mut original_labels = self.original_labels.clone();
        original_labels.remove(&c);

        Ok((Gallery { matrix, labels, blocks, original_labels }, keep))
    }
}

/// One probe: `d x L` observation matrix, optionally tagged with the true
/// subject for evaluation.
#[derive(Debug, Clone)]
pub struct ProbeSet {
    matrix: DMatrix<f64>,
    pub true_subject: Option<SubjectId>,
}

impl ProbeSet {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.ncols() == 0 || matrix.nrows() == 0 {
            return Err(Error::EmptyInput("probe must have at least one frame".into()));
        }
        if !matrix.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("probe matrix".into()));
        }
        Ok(ProbeSet { matrix, true_subject: None })
    }

    pub fn with_truth(mut self, c: SubjectId) -> Self {
        self.true_subject = Some(c);
        self
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Number of frames `L`.
    pub fn num_frames(&self) -> usize {
        self.matrix.ncols()
    }

    /// Error unless the probe's feature dimension matches the gallery's.
    pub fn check_dims(&self, gallery: &Gallery) -> Result<()> {
        if self.dim() != gallery.dim() {
            return Err(Error::DimensionMismatch(format!(
                "probe dimension {} does not match gallery dimension {}",
                self.dim(),
                gallery.dim()
            )));
        }
        Ok(())
    }
}
