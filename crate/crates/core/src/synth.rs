//! Synthetic data with planted substitution groups.
//!
//! Ingredient word embeddings cluster around orthonormal group centroids.
//! Recipes are variations of a fixed set of dishes. A dish has a centroid in
//! embedding space, an ingredient list and base log-masses. A recipe's
//! embedding `q` is its dish centroid plus Gaussian variation `z`; each dish
//! ingredient `i` is kept when its gate `s_i . z` clears a threshold, and its
//! log-mass moves linearly with `z`. Used ingredients are occasionally
//! swapped for another member of their group. Detection and relative amounts
//! are therefore learnable functions of the embedding.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::formats::{save_matrix, write_file, write_groups, write_recipes, write_verdicts, write_vocabulary};
use crate::groups::{CurationVerdicts, Partition, Verdict};
use crate::recipe::{RecipeRecord, Vocabulary};
use crate::rng::{stage_rng, Stage};

/// Within-group word-embedding cosine is kept above this.
pub const MIN_WITHIN_COSINE: f64 = 0.7;
/// Cross-group word-embedding cosine is kept below this.
pub const MAX_CROSS_COSINE: f64 = 0.5;
/// Standard deviation of dish base log-masses; about the spread between a
/// pinch of salt and a bowl of flour.
const BASE_SPREAD: f64 = 1.5;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub ingredients: usize,
    pub groups: usize,
    pub recipes: usize,
    pub seed: u64,
    /// Recipe embedding dimension.
    pub embedding_dim: usize,
    /// Minimum ingredient word-embedding dimension (raised to `groups`).
    pub word_dim: usize,
    /// Number of dish prototypes recipes are drawn from.
    pub dishes: usize,
    /// Smallest and largest dish ingredient lists (capped at `ingredients`).
    pub dish_size: (usize, usize),
    /// Scale of the within-dish variation relative to the unit-variance
    /// dish centroids.
    pub variation: f64,
    /// Standard deviation of the log-mass noise.
    pub amount_noise: f64,
    /// Probability of swapping a used ingredient for another group member.
    pub substitution_rate: f64,
    /// Standard deviation of the text-feature noise.
    pub feature_noise: f64,
    /// Optional-ingredient gate threshold on a standard normal score; lower
    /// values keep more of each dish.
    pub gate_threshold: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            ingredients: 50,
            groups: 10,
            recipes: 5000,
            seed: 0,
            embedding_dim: 32,
            word_dim: 16,
            dishes: 40,
            dish_size: (8, 16),
            variation: 0.5,
            amount_noise: 0.1,
            substitution_rate: 0.1,
            feature_noise: 0.3,
            gate_threshold: -1.0,
        }
    }
}

impl SynthConfig {
    /// Same generator without amount noise or substitutions.
    pub fn noiseless(mut self) -> Self {
        self.amount_noise = 0.0;
        self.substitution_rate = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.ingredients == 0 || self.groups == 0 || self.recipes == 0 {
            return Err(Error::InvalidConfig("ingredient, group and recipe counts must be at least 1".into()));
        }
        if self.groups > self.ingredients {
            return Err(Error::InvalidConfig(format!(
                "cannot plant {} groups in {} ingredients",
                self.groups, self.ingredients
            )));
        }
        if self.dishes == 0 || self.dish_size.0 == 0 || self.dish_size.0 > self.dish_size.1 {
            return Err(Error::InvalidConfig("need at least one dish and a valid dish size range".into()));
        }
        if self.embedding_dim == 0 || self.word_dim == 0 {
            return Err(Error::InvalidConfig("dimensions must be at least 1".into()));
        }
        for (name, x) in [
            ("amount_noise", self.amount_noise),
            ("variation", self.variation),
            ("feature_noise", self.feature_noise),
        ] {
            if !(x >= 0.0 && x.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and nonnegative")));
            }
        }
        if !(0.0..=1.0).contains(&self.substitution_rate) {
            return Err(Error::InvalidConfig("substitution_rate must lie in [0, 1]".into()));
        }
        if !self.gate_threshold.is_finite() {
            return Err(Error::InvalidConfig("gate_threshold must be finite".into()));
        }
        Ok(())
    }
}

/// Everything the generator produces.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub vocabulary: Vocabulary,
    pub ingredient_embeddings: Array2<f64>,
    pub planted: Partition,
    pub verdicts: CurationVerdicts,
    /// Image-side recipe features, one row per recipe.
    pub embeddings: Array2<f64>,
    /// Text-side recipe features, row-aligned with `embeddings`.
    pub text_features: Array2<f64>,
    pub train: Vec<RecipeRecord>,
    pub val: Vec<RecipeRecord>,
    pub test: Vec<RecipeRecord>,
}

fn gaussian<R: Rng>(rng: &mut R, len: usize, scale: f64) -> Array1<f64> {
    Array1::from_shape_simple_fn(len, || scale * rng.sample::<f64, _>(StandardNormal))
}

fn cosine(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.dot(b) / (a.dot(a).sqrt() * b.dot(b).sqrt())
}

/// Rounds through `f32` so values survive the binary matrix format.
fn f32_round(m: Array2<f64>) -> Array2<f64> {
    m.mapv(|x| x as f32 as f64)
}

fn orthonormal_centroids<R: Rng>(rng: &mut R, count: usize, dim: usize) -> Vec<Array1<f64>> {
    let mut out: Vec<Array1<f64>> = Vec::with_capacity(count);
    while out.len() < count {
        let mut v = gaussian(rng, dim, 1.0);
        for c in &out {
            let proj = v.dot(c);
            v.scaled_add(-proj, c);
        }
        let norm = v.dot(&v).sqrt();
        if norm > 1e-6 {
            out.push(v / norm);
        }
    }
    out
}

pub fn generate(config: &SynthConfig) -> Result<SynthData> {
    config.validate()?;
    let mut rng = stage_rng(config.seed, Stage::Synth);
    let n_ing = config.ingredients;
    let n_groups = config.groups;
    let d = config.embedding_dim;
    let word_dim = config.word_dim.max(n_groups);

    let mut perm: Vec<usize> = (0..n_ing).collect();
    perm.shuffle(&mut rng);
    let mut members = vec![Vec::new(); n_groups];
    for (pos, &i) in perm.iter().enumerate() {
        members[pos % n_groups].push(i);
    }
    let planted = Partition::from_groups(members, n_ing)?;

    let centroids = orthonormal_centroids(&mut rng, n_groups, word_dim);
    let radius = 0.35 / (word_dim as f64).sqrt();
    let mut word: Vec<Option<Array1<f64>>> = vec![None; n_ing];
    for i in 0..n_ing {
        let g = planted.group_of(i);
        let mut tries = 0;
        let candidate = loop {
            tries += 1;
            if tries > 1000 {
                return Err(Error::InvalidConfig(
                    "could not place ingredient embeddings with the required separation".into(),
                ));
            }
            let v = &centroids[g] + &gaussian(&mut rng, word_dim, radius);
            let v = v.mapv(|x| x as f32 as f64);
            let ok = word.iter().enumerate().filter_map(|(j, w)| w.as_ref().map(|w| (j, w))).all(|(j, w)| {
                let c = cosine(&v, w);
                if planted.group_of(j) == g {
                    c > MIN_WITHIN_COSINE
                } else {
                    c < MAX_CROSS_COSINE
                }
            });
            if ok {
                break v;
            }
        };
        word[i] = Some(candidate);
    }
    let mut ingredient_embeddings = Array2::zeros((n_ing, word_dim));
    for (mut row, w) in ingredient_embeddings.rows_mut().into_iter().zip(&word) {
        row.assign(w.as_ref().expect("every ingredient placed"));
    }

    let mut verdict_entries = Vec::new();
    for group in planted.groups() {
        for (k, &a) in group.iter().enumerate() {
            for &b in &group[k + 1..] {
                verdict_entries.push((a, b, Verdict::Approve));
            }
        }
    }
    verdict_entries.sort_by_key(|&(a, b, _)| (a, b));
    let verdicts = CurationVerdicts::new(verdict_entries, n_ing)?;
    let vocabulary = Vocabulary::new((0..n_ing).map(|i| format!("ingredient_{i:03}")).collect())?;

    struct Dish {
        centroid: Array1<f64>,
        items: Vec<usize>,
        base: Vec<f64>,
        slopes: Vec<Array1<f64>>,
    }
    let unit = 1.0 / (d as f64).sqrt();
    let (lo, hi) = (config.dish_size.0.min(n_ing), config.dish_size.1.min(n_ing));
    let dishes: Vec<Dish> = (0..config.dishes)
        .map(|_| {
            let size = rng.random_range(lo..=hi);
            let mut items: Vec<usize> = (0..n_ing).collect();
            items.shuffle(&mut rng);
            items.truncate(size);
            Dish {
                centroid: gaussian(&mut rng, d, 1.0),
                base: (0..size).map(|_| BASE_SPREAD * rng.sample::<f64, _>(StandardNormal)).collect(),
                slopes: (0..size).map(|_| gaussian(&mut rng, d, 0.5 * unit)).collect(),
                items,
            }
        })
        .collect();
    // whether an optional ingredient is used depends on one direction per
    // ingredient, shared by every dish
    let gates: Vec<Array1<f64>> = (0..n_ing).map(|_| gaussian(&mut rng, d, unit)).collect();

    let mut embeddings = Array2::zeros((config.recipes, d));
    let mut text_features = Array2::zeros((config.recipes, d));
    let mut records = Vec::with_capacity(config.recipes);
    for r in 0..config.recipes {
        let dish = &dishes[rng.random_range(0..dishes.len())];
        let z = gaussian(&mut rng, d, 1.0);
        let q = (&dish.centroid + &(&z * config.variation)).mapv(|x| x as f32 as f64);
        let text = &q + &gaussian(&mut rng, d, config.feature_noise);
        embeddings.row_mut(r).assign(&q);
        text_features.row_mut(r).assign(&text);

        let scores: Vec<f64> = dish.items.iter().map(|&i| gates[i].dot(&z)).collect();
        let mut kept: Vec<usize> = (0..dish.items.len()).filter(|&k| scores[k] > config.gate_threshold).collect();
        if kept.is_empty() {
            let best = (0..scores.len())
                .max_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(b.cmp(&a)))
                .expect("dishes are nonempty");
            kept.push(best);
        }
        let mut items: Vec<(usize, f64)> = Vec::with_capacity(kept.len());
        for k in kept {
            let mut ingredient = dish.items[k];
            let swap: f64 = rng.random();
            if swap < config.substitution_rate {
                let group = &planted.groups()[planted.group_of(ingredient)];
                let free: Vec<usize> = group
                    .iter()
                    .copied()
                    .filter(|i| !dish.items.contains(i) && !items.iter().any(|(j, _)| j == i))
                    .collect();
                if !free.is_empty() {
                    ingredient = free[rng.random_range(0..free.len())];
                }
            }
            let noise: f64 = rng.sample(StandardNormal);
            let log_mass = dish.base[k] + dish.slopes[k].dot(&z) + config.amount_noise * noise;
            let grams = ((100.0 * log_mass.exp()) * 100.0).round().max(1.0) / 100.0;
            items.push((ingredient, grams));
        }
        items.sort_by_key(|&(i, _)| i);
        records.push(RecipeRecord {
            id: format!("r{r:06}"),
            embedding_row: r,
            items,
        });
    }

    let n_train = config.recipes * 8 / 10;
    let n_val = config.recipes / 10;
    let test = records.split_off(n_train + n_val);
    let val = records.split_off(n_train);
    Ok(SynthData {
        vocabulary,
        ingredient_embeddings: f32_round(ingredient_embeddings),
        planted,
        verdicts,
        embeddings,
        text_features: f32_round(text_features),
        train: records,
        val,
        test,
    })
}

/// File names written by [`write_synth`].
pub mod files {
    pub const VOCAB: &str = "vocab.txt";
    pub const INGREDIENT_EMBEDDINGS: &str = "ingredient_embeddings.bin";
    pub const VERDICTS: &str = "verdicts.tsv";
    pub const PLANTED_GROUPS: &str = "planted_groups.json";
    pub const EMBEDDINGS: &str = "embeddings.bin";
    pub const TEXT_FEATURES: &str = "text_features.bin";
    pub const TRAIN: &str = "train.jsonl";
    pub const VAL: &str = "val.jsonl";
    pub const TEST: &str = "test.jsonl";
}

pub fn write_synth(data: &SynthData, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(dir.join(files::VOCAB), &write_vocabulary(&data.vocabulary))?;
    save_matrix(dir.join(files::INGREDIENT_EMBEDDINGS), &data.ingredient_embeddings)?;
    write_file(dir.join(files::VERDICTS), &write_verdicts(&data.verdicts, &data.vocabulary))?;
    write_file(dir.join(files::PLANTED_GROUPS), &write_groups(data.planted.groups()))?;
    save_matrix(dir.join(files::EMBEDDINGS), &data.embeddings)?;
    save_matrix(dir.join(files::TEXT_FEATURES), &data.text_features)?;
    write_file(dir.join(files::TRAIN), &write_recipes(&data.train))?;
    write_file(dir.join(files::VAL), &write_recipes(&data.val))?;
    write_file(dir.join(files::TEST), &write_recipes(&data.test))
}
