//! Embeddings, demographic annotations, and the cohort that joins them.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::math;

/// Tolerance on row norms for a set flagged as normalized.
pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Race {
    Caucasian,
    African,
    Asian,
    Indian,
}

impl Race {
    /// Canonical order, also used as the figure palette order.
    pub const ALL: [Race; 4] = [Race::Caucasian, Race::African, Race::Asian, Race::Indian];

    pub fn as_str(self) -> &'static str {
        match self {
            Race::Caucasian => "Caucasian",
            Race::African => "African",
            Race::Asian => "Asian",
            Race::Indian => "Indian",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::Male, Gender::Female];

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "Male",
            Gender::Female => "Female",
        }
    }
}

/// Age class index: 0..=5 for 0-20, 21-30, 31-40, 41-50, 51-60, 61-100.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AgeBin(u8);

impl AgeBin {
    pub const COUNT: usize = 6;
    const LABELS: [&'static str; 6] = ["0-20", "21-30", "31-40", "41-50", "51-60", "61-100"];

    pub fn new(bin: u32) -> Result<Self> {
        if bin < Self::COUNT as u32 {
            Ok(AgeBin(bin as u8))
        } else {
            Err(Error::AgeBinOutOfRange(bin))
        }
    }

    pub fn all() -> impl Iterator<Item = AgeBin> {
        (0..Self::COUNT as u8).map(AgeBin)
    }

    pub fn index(self) -> u8 {
        self.0
    }

    /// Human-readable range, e.g. `"61-100"`.
    pub fn label(self) -> &'static str {
        Self::LABELS[self.0 as usize]
    }
}

macro_rules! label_enum_impls {
    ($ty:ty, $kind:literal) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                let t = s.trim();
                Self::ALL
                    .iter()
                    .copied()
                    .find(|v| v.as_str().eq_ignore_ascii_case(t))
                    .ok_or_else(|| Error::UnknownLabel {
                        kind: $kind,
                        value: s.to_string(),
                    })
            }
        }
    };
}

label_enum_impls!(Race, "race");
label_enum_impls!(Gender, "gender");

impl fmt::Display for AgeBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleAnnotation {
    pub sample_id: String,
    pub identity_id: String,
    pub race: Race,
    pub gender: Gender,
    pub age_bin: AgeBin,
}

/// Fixed-dimension embedding rows keyed by unique sample ids.
///
/// Values are held in `f64` regardless of the on-disk precision.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f64>,
    normalized: bool,
}

impl EmbeddingSet {
    /// Validates and builds a set from row-major `data`.
    ///
    /// `normalized` is re-checked against the rows rather than trusted.
    pub fn new(dim: usize, ids: Vec<String>, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ZeroDimension);
        }
        if data.len() != ids.len() * dim {
            let row = data.len() / dim;
            return Err(Error::DimensionMismatch {
                row,
                expected: dim,
                found: data.len() % dim,
            });
        }
        let mut seen = BTreeSet::new();
        for (row, id) in ids.iter().enumerate() {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId {
                    row,
                    id: id.clone(),
                });
            }
        }
        for (row, chunk) in data.chunks(dim).enumerate() {
            if let Some(column) = chunk.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row, column });
            }
        }
        let normalized = !ids.is_empty()
            && data
                .chunks(dim)
                .all(|r| (math::norm(r) - 1.0).abs() <= NORM_TOLERANCE);
        Ok(Self {
            dim,
            ids,
            data,
            normalized,
        })
    }

    /// Builds a set from rows, reporting the first row whose length differs.
    pub fn from_rows(ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (row, r) in rows.into_iter().enumerate() {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    row,
                    expected: dim,
                    found: r.len(),
                });
            }
            data.extend(r);
        }
        Self::new(dim, ids, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim)
    }

    /// Row-major backing storage.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Returns a copy with every row scaled to unit L2 norm.
    pub fn normalize(&self) -> Result<Self> {
        let mut data = Vec::with_capacity(self.data.len());
        for (i, r) in self.rows().enumerate() {
            let n = math::norm(r);
            if n == 0.0 {
                return Err(Error::ZeroNorm {
                    id: self.ids[i].clone(),
                });
            }
            data.extend(r.iter().map(|v| v / n));
        }
        Ok(Self {
            dim: self.dim,
            ids: self.ids.clone(),
            data,
            normalized: !self.ids.is_empty(),
        })
    }

    /// Keeps the rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let ids = indices.iter().map(|&i| self.ids[i].clone()).collect();
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            dim: self.dim,
            ids,
            data,
            normalized: self.normalized,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JoinMode {
    Strict,
    Lenient,
}

/// What a lenient join threw away.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct JoinSummary {
    pub dropped_embeddings: Vec<String>,
    pub dropped_annotations: Vec<String>,
}

impl JoinSummary {
    pub fn dropped(&self) -> usize {
        self.dropped_embeddings.len() + self.dropped_annotations.len()
    }
}

/// Embeddings with exactly one annotation per row. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedCohort {
    embeddings: EmbeddingSet,
    annotations: Vec<SampleAnnotation>,
    index: BTreeMap<String, usize>,
}

impl AnnotatedCohort {
    /// Joins embeddings with an annotation table by `sample_id`.
    ///
    /// Row order follows the embedding set. Duplicate annotation ids are an
    /// error in both modes.
    pub fn join(
        embeddings: EmbeddingSet,
        annotations: Vec<SampleAnnotation>,
        mode: JoinMode,
    ) -> Result<(Self, JoinSummary)> {
        let mut by_id: BTreeMap<String, SampleAnnotation> = BTreeMap::new();
        for (row, a) in annotations.into_iter().enumerate() {
            if by_id.contains_key(&a.sample_id) {
                return Err(Error::DuplicateId {
                    row,
                    id: a.sample_id,
                });
            }
            by_id.insert(a.sample_id.clone(), a);
        }

        let mut summary = JoinSummary::default();
        let mut keep = Vec::with_capacity(embeddings.len());
        for (i, id) in embeddings.ids().iter().enumerate() {
            if by_id.contains_key(id) {
                keep.push(i);
            } else {
                summary.dropped_embeddings.push(id.clone());
            }
        }
        let kept: BTreeSet<&str> = keep.iter().map(|&i| embeddings.ids[i].as_str()).collect();
        summary.dropped_annotations = by_id
            .keys()
            .filter(|k| !kept.contains(k.as_str()))
            .cloned()
            .collect();

        if mode == JoinMode::Strict && summary.dropped() > 0 {
            let mut ids = summary.dropped_embeddings;
            ids.extend(summary.dropped_annotations);
            return Err(Error::CohortMismatch { ids });
        }

        let embeddings = if keep.len() == embeddings.len() {
            embeddings
        } else {
            embeddings.select(&keep)
        };
        let annotations: Vec<SampleAnnotation> = embeddings
            .ids()
            .iter()
            .map(|id| by_id.remove(id).expect("kept ids are annotated"))
            .collect();
        let index = embeddings
            .ids()
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        Ok((
            Self {
                embeddings,
                annotations,
                index,
            },
            summary,
        ))
    }

    pub fn embeddings(&self) -> &EmbeddingSet {
        &self.embeddings
    }

    pub fn annotations(&self) -> &[SampleAnnotation] {
        &self.annotations
    }

    pub fn len(&self) -> usize {
        self.annotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.annotations.is_empty()
    }

    pub fn index_of(&self, sample_id: &str) -> Result<usize> {
        self.index
            .get(sample_id)
            .copied()
            .ok_or_else(|| Error::UnknownSample(sample_id.to_string()))
    }

    pub fn annotation(&self, i: usize) -> &SampleAnnotation {
        &self.annotations[i]
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        self.embeddings.row(i)
    }

    /// The samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let embeddings = self.embeddings.select(indices);
        let annotations: Vec<SampleAnnotation> = indices.iter().map(|&i| self.annotations[i].clone()).collect();
        let index = embeddings
            .ids()
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        Self {
            embeddings,
            annotations,
            index,
        }
    }

    /// Same cohort with unit-normalized embeddings.
    pub fn normalized(&self) -> Result<Self> {
        Ok(Self {
            embeddings: self.embeddings.normalize()?,
            annotations: self.annotations.clone(),
            index: self.index.clone(),
        })
    }

    /// Distinct identities in first-appearance order, with their member rows.
    pub fn identity_groups(&self) -> Vec<(String, Vec<usize>)> {
        let mut order: Vec<String> = Vec::new();
        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, a) in self.annotations.iter().enumerate() {
            let e = groups.entry(a.identity_id.as_str()).or_default();
            if e.is_empty() {
                order.push(a.identity_id.clone());
            }
            e.push(i);
        }
        order
            .into_iter()
            .map(|id| {
                let rows = groups.remove(id.as_str()).unwrap_or_default();
                (id, rows)
            })
            .collect()
    }
}
