//! Ingredient substitution groups.
//!
//! Candidate pairs come from cosine similarity of ingredient word embeddings,
//! curated verdicts turn them into graph edges, and the connected components of
//! that graph are the substitution groups. From the groups we derive the
//! ingredient distance matrix, the group distance matrix and the
//! group-ingredient membership matrix used to collapse vectors.

use std::collections::{BTreeSet, HashMap};

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::recipe::{AmountVector, DetectionVector};

pub const DEFAULT_PAIR_THRESHOLD: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Approve,
    Reject,
    Add,
}

/// Curated decisions on ingredient pairs. At most one verdict per unordered
/// pair; self-pairs are invalid.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CurationVerdicts {
    entries: Vec<(usize, usize, Verdict)>,
}

impl CurationVerdicts {
    pub fn new(entries: Vec<(usize, usize, Verdict)>, size: usize) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for &(a, b, _) in &entries {
            if a == b {
                return Err(Error::InvalidVerdict(format!("self-pair ({a}, {b})")));
            }
            for i in [a, b] {
                if i >= size {
                    return Err(Error::VocabularyMismatch { index: i, size });
                }
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(Error::InvalidVerdict(format!(
                    "more than one verdict for pair ({a}, {b})"
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(usize, usize, Verdict)] {
        &self.entries
    }
}

/// Ingredient word embeddings, one row per vocabulary entry.
#[derive(Debug, Clone, PartialEq)]
pub struct IngredientEmbeddings {
    rows: Array2<f64>,
    norms: Vec<f64>,
}

impl IngredientEmbeddings {
    pub fn new(rows: Array2<f64>) -> Result<Self> {
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("ingredient embedding is not finite".into()));
        }
        let norms = rows.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
        Ok(Self { rows, norms })
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }

    /// Indices of rows whose norm is zero.
    pub fn zero_norm_rows(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.norms[i] == 0.0).collect()
    }

    /// Cosine similarity of rows `i` and `j`.
    pub fn cosine(&self, i: usize, j: usize) -> Result<f64> {
        for k in [i, j] {
            if self.norms[k] == 0.0 {
                return Err(Error::ZeroNormEmbedding(k));
            }
        }
        let dot = self.rows.row(i).dot(&self.rows.row(j));
        Ok((dot / (self.norms[i] * self.norms[j])).clamp(-1.0, 1.0))
    }
}

fn cosine_of(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Option<f64> {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((a.dot(&b) / (na * nb)).clamp(-1.0, 1.0))
}

/// All pairs `(i, j)`, `i < j`, whose cosine similarity is strictly greater
/// than `threshold`.
pub fn propose_pairs(em: &IngredientEmbeddings, threshold: f64) -> Result<Vec<(usize, usize)>> {
    if !(threshold > -1.0 && threshold < 1.0) {
        return Err(Error::InvalidInput(format!(
            "pair threshold must lie in (-1, 1), got {threshold}"
        )));
    }
    let n = em.len();
    if n >= 2 {
        if let Some(&z) = em.zero_norm_rows().first() {
            return Err(Error::ZeroNormEmbedding(z));
        }
    }
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if em.cosine(i, j)? > threshold {
                out.push((i, j));
            }
        }
    }
    Ok(out)
}

/// Keeps proposed pairs that were approved, plus every added pair. Proposed
/// pairs without a verdict are dropped.
pub fn apply_verdicts(
    proposed: &[(usize, usize)],
    verdicts: &CurationVerdicts,
) -> Result<Vec<(usize, usize)>> {
    let key = |a: usize, b: usize| (a.min(b), a.max(b));
    let mut decided = HashMap::new();
    for &(a, b, v) in verdicts.entries() {
        if a == b {
            return Err(Error::InvalidVerdict(format!("self-pair ({a}, {b})")));
        }
        decided.insert(key(a, b), v);
    }
    let mut edges = BTreeSet::new();
    for &(a, b) in proposed {
        if decided.get(&key(a, b)) == Some(&Verdict::Approve) {
            edges.insert(key(a, b));
        }
    }
    for (&pair, &v) in &decided {
        if v == Verdict::Add {
            edges.insert(pair);
        }
    }
    Ok(edges.into_iter().collect())
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}

/// A partition of `0..n` into disjoint groups. Members are sorted and groups
/// are ordered by their smallest member.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    groups: Vec<Vec<usize>>,
    group_of: Vec<usize>,
}

impl Partition {
    pub fn from_groups(groups: Vec<Vec<usize>>, n: usize) -> Result<Self> {
        let mut groups: Vec<Vec<usize>> = groups
            .into_iter()
            .map(|mut g| {
                g.sort_unstable();
                g
            })
            .collect();
        groups.sort_unstable_by_key(|g| g.first().copied());
        let mut group_of = vec![usize::MAX; n];
        for (gi, g) in groups.iter().enumerate() {
            if g.is_empty() {
                return Err(Error::InvalidInput("empty group".into()));
            }
            for &i in g {
                if i >= n {
                    return Err(Error::VocabularyMismatch { index: i, size: n });
                }
                if group_of[i] != usize::MAX {
                    return Err(Error::InvalidInput(format!("ingredient {i} in two groups")));
                }
                group_of[i] = gi;
            }
        }
        if let Some(i) = group_of.iter().position(|g| *g == usize::MAX) {
            return Err(Error::InvalidInput(format!("ingredient {i} has no group")));
        }
        Ok(Self { groups, group_of })
    }

    pub fn singletons(n: usize) -> Self {
        Self {
            groups: (0..n).map(|i| vec![i]).collect(),
            group_of: (0..n).collect(),
        }
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn num_items(&self) -> usize {
        self.group_of.len()
    }

    pub fn group_of(&self, i: usize) -> usize {
        self.group_of[i]
    }

    pub fn group_of_all(&self) -> &[usize] {
        &self.group_of
    }
}

/// Connected components of the undirected graph on `0..n`.
pub fn connected_components(n: usize, edges: &[(usize, usize)]) -> Result<Partition> {
    let mut uf = UnionFind::new(n);
    for &(a, b) in edges {
        if a >= n || b >= n {
            return Err(Error::VocabularyMismatch {
                index: a.max(b),
                size: n,
            });
        }
        uf.union(a, b);
    }
    let mut by_root: HashMap<usize, Vec<usize>> = HashMap::new();
    for i in 0..n {
        let r = uf.find(i);
        by_root.entry(r).or_default().push(i);
    }
    Partition::from_groups(by_root.into_values().collect(), n)
}

/// Ingredient distance: zero within a group, `1 - cos` across groups.
pub fn build_distance_matrix(partition: &Partition, em: &IngredientEmbeddings) -> Result<Array2<f64>> {
    let n = partition.num_items();
    if em.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: em.len(),
        });
    }
    let mut m = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            if partition.group_of(i) == partition.group_of(j) {
                continue;
            }
            let d = 1.0 - em.cosine(i, j)?;
            m[[i, j]] = d;
            m[[j, i]] = d;
        }
    }
    Ok(m)
}

/// Group distance: `1 - cos` between group centroids.
pub fn build_group_distance_matrix(
    partition: &Partition,
    em: &IngredientEmbeddings,
) -> Result<Array2<f64>> {
    if em.len() != partition.num_items() {
        return Err(Error::DimensionMismatch {
            expected: partition.num_items(),
            got: em.len(),
        });
    }
    let centroids: Vec<Array1<f64>> = partition
        .groups()
        .iter()
        .map(|g| {
            let mut c = Array1::zeros(em.dim());
            for &k in g {
                c += &em.rows().row(k);
            }
            c / g.len() as f64
        })
        .collect();
    let g = centroids.len();
    if g >= 2 {
        if let Some(z) = centroids.iter().position(|c| c.dot(c) == 0.0) {
            return Err(Error::ZeroNormCentroid(z));
        }
    }
    let mut m1 = Array2::zeros((g, g));
    for i in 0..g {
        for j in i + 1..g {
            let cos = cosine_of(centroids[i].view(), centroids[j].view())
                .ok_or(Error::ZeroNormCentroid(i))?;
            m1[[i, j]] = 1.0 - cos;
            m1[[j, i]] = 1.0 - cos;
        }
    }
    Ok(m1)
}

/// Binary `g x I` matrix with `G[k, i] = 1` iff ingredient `i` is in group `k`.
pub fn group_ingredient_matrix(partition: &Partition) -> Array2<f64> {
    let mut g = Array2::zeros((partition.num_groups(), partition.num_items()));
    for (k, members) in partition.groups().iter().enumerate() {
        for &i in members {
            g[[k, i]] = 1.0;
        }
    }
    g
}

/// Per-group totals, `G . v`.
pub fn collapse_amounts(v: &[f64], partition: &Partition) -> Vec<f64> {
    let mut out = vec![0.0; partition.num_groups()];
    for (i, x) in v.iter().enumerate() {
        out[partition.group_of(i)] += x;
    }
    out
}

/// Group presence, `1{G . y > 0}`.
pub fn collapse_detection(y: &DetectionVector, partition: &Partition) -> DetectionVector {
    let mut out = vec![false; partition.num_groups()];
    for i in y.indices() {
        out[partition.group_of(i)] = true;
    }
    DetectionVector::new(out)
}

/// Groups plus the derived distance matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct SubstitutionModel {
    partition: Partition,
    distances: Array2<f64>,
    group_distances: Array2<f64>,
}

impl SubstitutionModel {
    pub fn build(partition: Partition, em: &IngredientEmbeddings) -> Result<Self> {
        let distances = build_distance_matrix(&partition, em)?;
        let group_distances = build_group_distance_matrix(&partition, em)?;
        Ok(Self {
            partition,
            distances,
            group_distances,
        })
    }

    /// Reassembles a model from stored parts, checking every invariant.
    pub fn from_parts(
        partition: Partition,
        distances: Array2<f64>,
        group_distances: Array2<f64>,
    ) -> Result<Self> {
        let n = partition.num_items();
        let g = partition.num_groups();
        if distances.dim() != (n, n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: distances.nrows(),
            });
        }
        if group_distances.dim() != (g, g) {
            return Err(Error::DimensionMismatch {
                expected: g,
                got: group_distances.nrows(),
            });
        }
        check_metric_matrix(&distances, "ingredient distance")?;
        check_metric_matrix(&group_distances, "group distance")?;
        for i in 0..n {
            for j in 0..n {
                if partition.group_of(i) == partition.group_of(j) && distances[[i, j]] != 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "distance between same-group ingredients {i} and {j} is nonzero"
                    )));
                }
            }
        }
        Ok(Self {
            partition,
            distances,
            group_distances,
        })
    }

    /// Singleton groups with a caller-supplied distance matrix.
    pub fn singletons(distances: Array2<f64>) -> Result<Self> {
        let n = distances.nrows();
        let m1 = distances.clone();
        Self::from_parts(Partition::singletons(n), distances, m1)
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn distances(&self) -> &Array2<f64> {
        &self.distances
    }

    pub fn group_distances(&self) -> &Array2<f64> {
        &self.group_distances
    }

    pub fn group_matrix(&self) -> Array2<f64> {
        group_ingredient_matrix(&self.partition)
    }

    pub fn num_ingredients(&self) -> usize {
        self.partition.num_items()
    }

    pub fn collapse_amounts(&self, v: &AmountVector) -> AmountVector {
        AmountVector::new(collapse_amounts(v.values(), &self.partition))
            .expect("sums of nonnegative values are nonnegative")
    }

    pub fn collapse_detection(&self, y: &DetectionVector) -> DetectionVector {
        collapse_detection(y, &self.partition)
    }
}

fn check_metric_matrix(m: &Array2<f64>, what: &str) -> Result<()> {
    let n = m.nrows();
    for i in 0..n {
        if m[[i, i]] != 0.0 {
            return Err(Error::InvalidInput(format!("{what} matrix has nonzero diagonal at {i}")));
        }
        for j in 0..n {
            let v = m[[i, j]];
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidInput(format!("{what} matrix entry ({i},{j}) = {v}")));
            }
            if v != m[[j, i]] {
                return Err(Error::InvalidInput(format!("{what} matrix is not symmetric")));
            }
        }
    }
    Ok(())
}
