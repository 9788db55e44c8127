//! On-disk formats: vocabulary text, the `PITAEMB1` float matrix container,
//! recipe JSON lines, curation verdict TSV, group JSON and prediction JSON
//! lines.
//!
//! Every `parse_*` function accepts untrusted bytes and reports malformed
//! input as an error; none of them panic.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groups::{CurationVerdicts, Verdict};
use crate::recipe::{Dataset, RecipeRecord, Split, Vocabulary};

pub const MATRIX_MAGIC: &[u8; 8] = b"PITAEMB1";

pub fn read_file(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn utf8(bytes: &[u8]) -> Result<&str> {
    std::str::from_utf8(bytes).map_err(|e| {
        let line = bytes[..e.valid_up_to()].iter().filter(|b| **b == b'\n').count() + 1;
        Error::Parse {
            line,
            msg: "invalid UTF-8".into(),
        }
    })
}

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.split('\n')
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
}

// ---------------------------------------------------------------------------
// Vocabulary

pub fn parse_vocabulary(bytes: &[u8]) -> Result<Vocabulary> {
    let text = utf8(bytes)?;
    let text = text.strip_suffix('\n').unwrap_or(text);
    let names = lines(text).map(|(_, l)| l.to_string()).collect();
    Vocabulary::new(names)
}

pub fn write_vocabulary(vocab: &Vocabulary) -> Vec<u8> {
    let mut out = String::new();
    for name in vocab.names() {
        out.push_str(name);
        out.push('\n');
    }
    out.into_bytes()
}

// ---------------------------------------------------------------------------
// Matrix container

/// Decodes `PITAEMB1 | u32 rows | u32 cols | rows*cols f32`, all little-endian.
pub fn parse_matrix(bytes: &[u8]) -> Result<Array2<f64>> {
    if bytes.len() < 16 {
        return Err(Error::Format(format!(
            "matrix header needs 16 bytes, got {}",
            bytes.len()
        )));
    }
    if &bytes[..8] != MATRIX_MAGIC {
        return Err(Error::Format("bad magic, expected PITAEMB1".into()));
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let payload = &bytes[16..];
    if payload.len() % 4 != 0 {
        return Err(Error::Format("payload is not a whole number of f32".into()));
    }
    let present = payload.len() / 4;
    let expected = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format("row/col count overflow".into()))?;
    if present != expected {
        return Err(Error::DimensionMismatch {
            expected,
            got: present,
        });
    }
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Format(format!(
            "non-finite value at row {}",
            pos / cols.max(1)
        )));
    }
    Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_matrix(m: &Array2<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * m.len());
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
    for v in m.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    parse_matrix(&read_file(path)?)
}

pub fn save_matrix(path: impl AsRef<Path>, m: &Array2<f64>) -> Result<()> {
    write_file(path, &write_matrix(m))
}

// ---------------------------------------------------------------------------
// Recipes

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecipeLine {
    id: String,
    emb: usize,
    items: Vec<(usize, f64)>,
}

/// Parses recipe JSON lines. Blank lines are skipped; indices are checked
/// against `vocab_size` and masses must be positive and finite.
pub fn parse_recipes(bytes: &[u8], vocab_size: usize) -> Result<Vec<RecipeRecord>> {
    let text = utf8(bytes)?;
    let mut out = Vec::new();
    for (line, raw) in lines(text) {
        if raw.trim().is_empty() {
            continue;
        }
        let rec: RecipeLine = serde_json::from_str(raw).map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        if rec.items.is_empty() {
            return Err(Error::Parse {
                line,
                msg: format!("recipe {:?} has no items", rec.id),
            });
        }
        let mut seen = std::collections::HashSet::with_capacity(rec.items.len());
        for &(index, grams) in &rec.items {
            if index >= vocab_size {
                return Err(Error::VocabularyMismatch {
                    index,
                    size: vocab_size,
                });
            }
            if !(grams > 0.0 && grams.is_finite()) {
                return Err(Error::Parse {
                    line,
                    msg: format!("ingredient {index} has invalid mass {grams}"),
                });
            }
            if !seen.insert(index) {
                return Err(Error::Parse {
                    line,
                    msg: format!("duplicate ingredient index {index}"),
                });
            }
        }
        out.push(RecipeRecord {
            id: rec.id,
            embedding_row: rec.emb,
            items: rec.items,
        });
    }
    Ok(out)
}

/// Canonical serialization: one compact JSON object per line, fields in the
/// order `id`, `emb`, `items`.
pub fn write_recipes(records: &[RecipeRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        let line = RecipeLine {
            id: r.id.clone(),
            emb: r.embedding_row,
            items: r.items.clone(),
        };
        serde_json::to_writer(&mut out, &line).expect("in-memory write");
        out.push(b'\n');
    }
    out
}

pub fn load_vocabulary(path: impl AsRef<Path>) -> Result<Vocabulary> {
    parse_vocabulary(&read_file(path)?)
}

/// Loads and validates a dataset; the split is inferred from the recipe file
/// stem (`train.jsonl`, `val.jsonl`, `test.jsonl`).
pub fn load_dataset(
    recipes: impl AsRef<Path>,
    embeddings: impl AsRef<Path>,
    vocabulary: impl AsRef<Path>,
) -> Result<Dataset> {
    let recipes = recipes.as_ref();
    let vocab = load_vocabulary(vocabulary)?;
    let emb = load_matrix(embeddings)?;
    let records = parse_recipes(&read_file(recipes)?, vocab.len())?;
    let split = recipes
        .file_stem()
        .and_then(|s| s.to_str())
        .map(Split::from_stem)
        .unwrap_or(Split::Unspecified);
    Dataset::new(vocab, emb, records, split)
}

/// Writes the three files of a dataset in canonical form.
pub fn save_dataset(
    ds: &Dataset,
    recipes: impl AsRef<Path>,
    embeddings: impl AsRef<Path>,
    vocabulary: impl AsRef<Path>,
) -> Result<()> {
    write_file(recipes, &write_recipes(&ds.records))?;
    save_matrix(embeddings, &ds.embeddings)?;
    write_file(vocabulary, &write_vocabulary(&ds.vocabulary))
}

// ---------------------------------------------------------------------------
// Verdicts

/// Parses `name_a<TAB>name_b<TAB>verdict` lines against a vocabulary.
pub fn parse_verdicts(bytes: &[u8], vocab: &Vocabulary) -> Result<CurationVerdicts> {
    let text = utf8(bytes)?;
    let mut entries = Vec::new();
    for (line, raw) in lines(text) {
        if raw.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = raw.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 3 tab-separated columns, got {}", cols.len()),
            });
        }
        let index = |name: &str| {
            vocab.index_of(name).ok_or_else(|| Error::Parse {
                line,
                msg: format!("unknown ingredient {name:?}"),
            })
        };
        let a = index(cols[0])?;
        let b = index(cols[1])?;
        let verdict = match cols[2].trim() {
            "approve" => Verdict::Approve,
            "reject" => Verdict::Reject,
            "add" => Verdict::Add,
            other => {
                return Err(Error::Parse {
                    line,
                    msg: format!("unknown verdict {other:?}"),
                })
            }
        };
        entries.push((a, b, verdict));
    }
    CurationVerdicts::new(entries, vocab.len()).map_err(|e| match e {
        Error::InvalidVerdict(msg) => Error::Parse { line: 0, msg },
        other => other,
    })
}

pub fn write_verdicts(verdicts: &CurationVerdicts, vocab: &Vocabulary) -> Vec<u8> {
    let mut out = String::new();
    for &(a, b, v) in verdicts.entries() {
        let tag = match v {
            Verdict::Approve => "approve",
            Verdict::Reject => "reject",
            Verdict::Add => "add",
        };
        out.push_str(&format!(
            "{}\t{}\t{}\n",
            vocab.name(a).unwrap_or_default(),
            vocab.name(b).unwrap_or_default(),
            tag
        ));
    }
    out.into_bytes()
}

// ---------------------------------------------------------------------------
// Groups

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupsFile {
    groups: Vec<Vec<usize>>,
}

/// Parses `{"groups": [[int,...],...]}` and checks it partitions `0..size`.
pub fn parse_groups(bytes: &[u8], size: usize) -> Result<Vec<Vec<usize>>> {
    let file: GroupsFile = serde_json::from_slice(bytes).map_err(|e| Error::Parse {
        line: e.line(),
        msg: e.to_string(),
    })?;
    let mut seen = vec![false; size];
    for g in &file.groups {
        if g.is_empty() {
            return Err(Error::InvalidInput("empty substitution group".into()));
        }
        for &i in g {
            if i >= size {
                return Err(Error::VocabularyMismatch { index: i, size });
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidInput(format!(
                    "ingredient {i} appears in more than one group"
                )));
            }
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::InvalidInput(format!(
            "ingredient {missing} is not assigned to a group"
        )));
    }
    Ok(file.groups)
}

pub fn write_groups(groups: &[Vec<usize>]) -> Vec<u8> {
    let mut out = serde_json::to_vec(&GroupsFile {
        groups: groups.to_vec(),
    })
    .expect("in-memory write");
    out.push(b'\n');
    out
}

// ---------------------------------------------------------------------------
// Predictions

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionLine {
    pub id: String,
    pub amounts: Vec<(usize, f64)>,
}

pub fn parse_predictions(bytes: &[u8], vocab_size: usize) -> Result<Vec<PredictionLine>> {
    let text = utf8(bytes)?;
    let mut out = Vec::new();
    for (line, raw) in lines(text) {
        if raw.trim().is_empty() {
            continue;
        }
        let p: PredictionLine = serde_json::from_str(raw).map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        for &(index, grams) in &p.amounts {
            if index >= vocab_size {
                return Err(Error::VocabularyMismatch {
                    index,
                    size: vocab_size,
                });
            }
            if !(grams > 0.0 && grams.is_finite()) {
                return Err(Error::Parse {
                    line,
                    msg: format!("ingredient {index} has invalid amount {grams}"),
                });
            }
        }
        out.push(p);
    }
    Ok(out)
}

pub fn write_predictions(preds: &[PredictionLine]) -> Vec<u8> {
    let mut out = Vec::new();
    for p in preds {
        serde_json::to_writer(&mut out, p).expect("in-memory write");
        out.push(b'\n');
    }
    out
}
