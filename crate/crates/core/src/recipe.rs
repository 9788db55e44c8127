//! Recipe-level data model: vocabulary, relative amount vectors, detection
//! vectors and datasets of recipes with precomputed embeddings.

use std::collections::HashMap;

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};

/// Default normalizing constant: every recipe is rescaled to 1000 g.
pub const DEFAULT_TOTAL_GRAMS: f64 = 1000.0;

/// Ordered list of canonical ingredient names. The position of a name is its
/// index in every vector over the vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    names: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::InvalidInput("vocabulary is empty".into()));
        }
        let mut lookup = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: "empty ingredient name".into(),
                });
            }
            if lookup.insert(name.clone(), i).is_some() {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("duplicate ingredient name {name:?}"),
                });
            }
        }
        Ok(Self { names, lookup })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.lookup.get(name).copied()
    }
}

/// Nonnegative per-ingredient relative masses summing to the normalizing
/// constant.
#[derive(Debug, Clone, PartialEq)]
pub struct AmountVector(Vec<f64>);

impl AmountVector {
    /// Wraps raw values. Entries must be finite and nonnegative.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidMass {
                index: bad,
                grams: values[bad],
            });
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Same vector rescaled to unit mass. Fails on an all-zero vector.
    pub fn normalized(&self) -> Result<Vec<f64>> {
        let total = self.total();
        if total <= 0.0 {
            return Err(Error::EmptyDistribution);
        }
        Ok(self.0.iter().map(|v| v / total).collect())
    }

    /// Sparse `(index, grams)` list of the strictly positive entries.
    pub fn nonzero(&self) -> Vec<(usize, f64)> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > 0.0)
            .map(|(i, v)| (i, *v))
            .collect()
    }
}

/// Binary ingredient presence vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectionVector(Vec<bool>);

impl DetectionVector {
    pub fn new(flags: Vec<bool>) -> Self {
        Self(flags)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![false; len])
    }

    pub fn from_indices(len: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut flags = vec![false; len];
        for i in indices {
            flags[i] = true;
        }
        Self(flags)
    }

    pub fn flags(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|f| **f).count()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, f)| **f).map(|(i, _)| i)
    }

    /// As 0/1 floats, for concatenation onto an embedding.
    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect()
    }
}

/// Rescales absolute masses so they sum to `total`: `v_i = total * m_i / sum(m)`.
pub fn relative_amounts(items: &[(usize, f64)], size: usize, total: f64) -> Result<AmountVector> {
    if items.is_empty() {
        return Err(Error::EmptyRecipe);
    }
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "normalizing constant must be positive, got {total}"
        )));
    }
    let mut values = vec![0.0; size];
    let mut seen = vec![false; size];
    let mut mass = 0.0;
    for &(index, grams) in items {
        if index >= size {
            return Err(Error::VocabularyMismatch { index, size });
        }
        if !(grams > 0.0 && grams.is_finite()) {
            return Err(Error::InvalidMass { index, grams });
        }
        if std::mem::replace(&mut seen[index], true) {
            return Err(Error::DuplicateIngredient(index));
        }
        values[index] = grams;
        mass += grams;
    }
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(Error::EmptyRecipe);
    }
    let scale = total / mass;
    for v in values.iter_mut() {
        *v *= scale;
    }
    Ok(AmountVector(values))
}

/// Indicator of the strictly positive entries.
pub fn detection_from_amounts(amounts: &AmountVector) -> DetectionVector {
    DetectionVector(amounts.0.iter().map(|v| *v > 0.0).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
    Unspecified,
}

impl Split {
    /// Infers the split from a file stem such as `train` or `recipes_test`.
    pub fn from_stem(stem: &str) -> Self {
        let stem = stem.to_ascii_lowercase();
        if stem.ends_with("train") {
            Split::Train
        } else if stem.ends_with("val") || stem.ends_with("valid") {
            Split::Val
        } else if stem.ends_with("test") {
            Split::Test
        } else {
            Split::Unspecified
        }
    }
}

/// One recipe: an identifier, a row into the embedding matrix, and the sparse
/// list of ingredient masses.
#[derive(Debug, Clone, PartialEq)]
pub struct RecipeRecord {
    pub id: String,
    pub embedding_row: usize,
    pub items: Vec<(usize, f64)>,
}

impl RecipeRecord {
    pub fn amounts(&self, size: usize, total: f64) -> Result<AmountVector> {
        relative_amounts(&self.items, size, total)
    }

    pub fn detection(&self, size: usize) -> DetectionVector {
        DetectionVector::from_indices(size, self.items.iter().map(|(i, _)| *i))
    }
}

/// Validated recipes sharing one vocabulary and one embedding matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub vocabulary: Vocabulary,
    pub embeddings: Array2<f64>,
    pub records: Vec<RecipeRecord>,
    pub split: Split,
}

impl Dataset {
    pub fn new(
        vocabulary: Vocabulary,
        embeddings: Array2<f64>,
        records: Vec<RecipeRecord>,
        split: Split,
    ) -> Result<Self> {
        let size = vocabulary.len();
        for (n, rec) in records.iter().enumerate() {
            let line = n + 1;
            if rec.items.is_empty() {
                return Err(Error::Parse {
                    line,
                    msg: format!("recipe {:?} has no items", rec.id),
                });
            }
            if rec.embedding_row >= embeddings.nrows() {
                return Err(Error::Parse {
                    line,
                    msg: format!(
                        "embedding row {} out of range ({} rows)",
                        rec.embedding_row,
                        embeddings.nrows()
                    ),
                });
            }
            match relative_amounts(&rec.items, size, DEFAULT_TOTAL_GRAMS) {
                Ok(_) => {}
                Err(Error::InvalidMass { index, grams }) => {
                    return Err(Error::Parse {
                        line,
                        msg: format!("ingredient {index} has invalid mass {grams}"),
                    })
                }
                Err(Error::DuplicateIngredient(i)) => {
                    return Err(Error::Parse {
                        line,
                        msg: format!("duplicate ingredient index {i}"),
                    })
                }
                Err(e) => return Err(e),
            }
        }
        if embeddings.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("embedding contains non-finite values".into()));
        }
        Ok(Self {
            vocabulary,
            embeddings,
            records,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_ingredients(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn embedding_dim(&self) -> usize {
        self.embeddings.ncols()
    }

    pub fn embedding(&self, record: &RecipeRecord) -> ArrayView1<'_, f64> {
        self.embeddings.row(record.embedding_row)
    }

    /// Stacks the embeddings of all records, in record order.
    pub fn embedding_matrix(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.records.len(), self.embedding_dim()));
        for (mut row, rec) in out.rows_mut().into_iter().zip(&self.records) {
            row.assign(&self.embeddings.row(rec.embedding_row));
        }
        out
    }

    pub fn amounts(&self, total: f64) -> Result<Vec<AmountVector>> {
        let size = self.num_ingredients();
        self.records.iter().map(|r| r.amounts(size, total)).collect()
    }

    pub fn detections(&self) -> Vec<DetectionVector> {
        let size = self.num_ingredients();
        self.records.iter().map(|r| r.detection(size)).collect()
    }

    /// A dataset with the same vocabulary and embeddings restricted to `records`.
    pub fn with_records(&self, records: Vec<RecipeRecord>, split: Split) -> Self {
        Self {
            vocabulary: self.vocabulary.clone(),
            embeddings: self.embeddings.clone(),
            records,
            split,
        }
    }
}
