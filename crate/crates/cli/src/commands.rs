use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use pita_core::config::RunConfig;
use pita_core::formats::{
    load_dataset, load_matrix, load_vocabulary, parse_groups, parse_predictions, parse_recipes, parse_verdicts,
    read_file, save_matrix, write_file, write_groups, write_predictions, PredictionLine,
};
use pita_core::groups::{apply_verdicts, connected_components, propose_pairs, IngredientEmbeddings, Partition, SubstitutionModel};
use pita_core::nn::{parse_checkpoint, write_checkpoint, MlpModel};
use pita_core::pipeline::{evaluate_amounts, train_ap, train_id, EpochLog, Mode, TrainedPipeline};
use pita_core::recipe::{AmountVector, Dataset};
use pita_core::retrieval::{train_projection, PairedFeatures, ProjectionModel};
use pita_core::synth::{files, generate, write_synth, SynthConfig};
use pita_core::Error;

use crate::layout;
use crate::{BuildGroupsArgs, EvaluateArgs, PredictArgs, StageArg, SynthArgs, TrainArgs};

#[derive(Debug)]
pub enum Failure {
    Core(Error),
    MissingCheckpoint(PathBuf),
    Usage(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Core(e) if e.is_numeric() => 3,
            Failure::Core(_) | Failure::Usage(_) => 2,
            Failure::MissingCheckpoint(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Failure::Core(e) if e.is_numeric() => "numeric",
            Failure::Core(Error::Io { .. }) => "io",
            Failure::Core(Error::Parse { .. }) => "parse",
            Failure::Core(Error::Format(_)) => "format",
            Failure::Core(Error::InvalidConfig(_)) => "config",
            Failure::Core(_) => "input",
            Failure::MissingCheckpoint(_) => "missing-checkpoint",
            Failure::Usage(_) => "usage",
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Core(e) => e.fmt(f),
            Failure::MissingCheckpoint(p) => write!(f, "required file {} does not exist", p.display()),
            Failure::Usage(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn create_dir(dir: &Path) -> Outcome {
    fs::create_dir_all(dir).map_err(|e| {
        Failure::Core(Error::Io {
            path: dir.display().to_string(),
            source: e,
        })
    })
}

fn require(path: PathBuf) -> Outcome<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Failure::MissingCheckpoint(path))
    }
}

fn load_model(path: PathBuf) -> Outcome<MlpModel> {
    Ok(parse_checkpoint(&read_file(require(path)?)?)?)
}

fn write_log(path: &Path, lines: &[EpochLog]) -> Outcome {
    let mut out = String::new();
    for l in lines {
        out.push_str(&serde_json::to_string(l).expect("log line serializes"));
        out.push('\n');
    }
    Ok(write_file(path, out.as_bytes())?)
}

pub fn load_split(data: &Path, split: &str) -> Outcome<Dataset> {
    if !matches!(split, "train" | "val" | "test") {
        return Err(Failure::Usage(format!("unknown split {split:?}, expected train, val or test")));
    }
    Ok(load_dataset(
        data.join(format!("{split}.jsonl")),
        data.join(files::EMBEDDINGS),
        data.join(files::VOCAB),
    )?)
}

pub fn load_substitution(dir: &Path) -> Outcome<SubstitutionModel> {
    let distances = load_matrix(dir.join(layout::DISTANCES))?;
    let group_distances = load_matrix(dir.join(layout::GROUP_DISTANCES))?;
    let n = distances.nrows();
    let groups = parse_groups(&read_file(dir.join(layout::GROUPS))?, n)?;
    let partition = Partition::from_groups(groups, n)?;
    Ok(SubstitutionModel::from_parts(partition, distances, group_distances)?)
}

pub fn synth(args: &SynthArgs) -> Outcome {
    let mut cfg = SynthConfig {
        ingredients: args.ingredients,
        groups: args.groups,
        recipes: args.recipes,
        seed: args.seed,
        ..Default::default()
    };
    if args.noiseless {
        cfg = cfg.noiseless();
    }
    let data = generate(&cfg)?;
    write_synth(&data, &args.out)?;
    println!(
        "wrote {} ingredients in {} planted groups and {}/{}/{} train/val/test recipes to {}",
        data.vocabulary.len(),
        data.planted.num_groups(),
        data.train.len(),
        data.val.len(),
        data.test.len(),
        args.out.display()
    );
    Ok(())
}

pub fn build_groups(args: &BuildGroupsArgs) -> Outcome {
    let vocab = load_vocabulary(&args.vocab)?;
    let em = IngredientEmbeddings::new(load_matrix(&args.embeddings)?)?;
    if em.len() != vocab.len() {
        return Err(Error::DimensionMismatch {
            expected: vocab.len(),
            got: em.len(),
        }
        .into());
    }
    let verdicts = parse_verdicts(&read_file(&args.verdicts)?, &vocab)?;
    let proposed = propose_pairs(&em, args.threshold)?;
    let kept = apply_verdicts(&proposed, &verdicts)?;
    let partition = connected_components(vocab.len(), &kept)?;
    let model = SubstitutionModel::build(partition, &em)?;

    create_dir(&args.out)?;
    write_file(args.out.join(layout::GROUPS), &write_groups(model.partition().groups()))?;
    save_matrix(args.out.join(layout::DISTANCES), model.distances())?;
    save_matrix(args.out.join(layout::GROUP_DISTANCES), model.group_distances())?;
    save_matrix(args.out.join(layout::GROUP_MATRIX), &model.group_matrix())?;

    let mut histogram = BTreeMap::new();
    for g in model.partition().groups() {
        *histogram.entry(g.len()).or_insert(0usize) += 1;
    }
    println!("groups: {}", model.partition().num_groups());
    for (size, count) in histogram {
        println!("  size {size}: {count}");
    }
    Ok(())
}

fn resolve(flag: &Option<PathBuf>, configured: &Option<String>, what: &str) -> Outcome<PathBuf> {
    flag.clone()
        .or_else(|| configured.as_ref().map(PathBuf::from))
        .ok_or_else(|| Failure::Usage(format!("no {what} directory given (flag or config)")))
}

fn load_projection(dir: &Path) -> Outcome<ProjectionModel> {
    Ok(ProjectionModel::from_model(load_model(dir.join(layout::checkpoint("retrieval")))?)?)
}

fn load_config(dir: &Path) -> Outcome<RunConfig> {
    Ok(RunConfig::parse(&read_file(require(dir.join(layout::CONFIG))?)?)?)
}

pub fn train(args: &TrainArgs) -> Outcome {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::parse(&read_file(p)?)?,
        None => RunConfig::default(),
    };
    for o in &args.overrides {
        cfg.apply_override(o)?;
    }
    let data = resolve(&args.data, &cfg.data_dir, "data")?;
    cfg.data_dir = Some(data.display().to_string());
    if let Some(g) = &args.groups {
        cfg.groups_dir = Some(g.display().to_string());
    }
    let out = &args.out;

    // prerequisites first, so a bad invocation fails before any work
    let projection = match args.stage {
        StageArg::Id | StageArg::Ap if cfg.use_projection => Some(load_projection(out)?),
        _ => None,
    };
    let id_model = match args.stage {
        StageArg::Ap if cfg.pipeline.mode == Mode::Full => Some(load_model(out.join(layout::checkpoint("id")))?),
        _ => None,
    };

    let mut log_lines = Vec::new();
    let (stage, model) = match args.stage {
        StageArg::Retrieval => {
            let train = load_split(&data, "train")?;
            let text = load_matrix(data.join(files::TEXT_FEATURES))?;
            let rows: Vec<usize> = train.records.iter().map(|r| r.embedding_row).collect();
            if text.nrows() != train.embeddings.nrows() {
                return Err(Error::DimensionMismatch {
                    expected: train.embeddings.nrows(),
                    got: text.nrows(),
                }
                .into());
            }
            let features = PairedFeatures::new(text.select(Axis(0), &rows), train.embeddings.select(Axis(0), &rows))?;
            let p = train_projection(&features, &cfg.retrieval, |e| {
                log::info!("retrieval epoch {} loss {:.6}", e.epoch, e.loss);
                log_lines.push(EpochLog {
                    stage: "retrieval".into(),
                    epoch: e.epoch,
                    loss: e.loss,
                    val_loss: None,
                });
            })?;
            ("retrieval", p.model().clone())
        }
        StageArg::Id => {
            let train = load_split(&data, "train")?;
            let val = optional_split(&data, "val")?;
            let m = train_id(&train, val.as_ref(), projection.as_ref(), &cfg.pipeline, |l| {
                log::info!("id epoch {} loss {:.6}", l.epoch, l.loss);
                log_lines.push(l.clone());
            })?;
            ("id", m)
        }
        StageArg::Ap => {
            let groups = resolve(&args.groups, &cfg.groups_dir, "groups")?;
            let substitution = load_substitution(&groups)?;
            let train = load_split(&data, "train")?;
            let val = optional_split(&data, "val")?;
            let m = train_ap(
                &train,
                val.as_ref(),
                projection.as_ref(),
                id_model.as_ref(),
                &substitution,
                &cfg.pipeline,
                |l| {
                    log::info!("ap epoch {} loss {:.6}", l.epoch, l.loss);
                    log_lines.push(l.clone());
                },
            )?;
            ("ap", m)
        }
    };

    create_dir(out)?;
    write_file(out.join(layout::checkpoint(stage)), &write_checkpoint(&model))?;
    write_log(&out.join(layout::log(stage)), &log_lines)?;
    write_file(out.join(layout::CONFIG), cfg.to_json().as_bytes())?;
    if let Some(last) = log_lines.last() {
        println!("{stage}: {} epochs, final loss {:.6}", log_lines.len(), last.loss);
    }
    Ok(())
}

fn optional_split(data: &Path, split: &str) -> Outcome<Option<Dataset>> {
    if data.join(format!("{split}.jsonl")).is_file() {
        load_split(data, split).map(Some)
    } else {
        Ok(None)
    }
}

pub fn load_pipeline(dir: &Path) -> Outcome<TrainedPipeline> {
    let cfg = load_config(dir)?;
    let projection = if cfg.use_projection {
        Some(load_projection(dir)?)
    } else {
        None
    };
    let id = match cfg.pipeline.mode {
        Mode::Full => Some(load_model(dir.join(layout::checkpoint("id")))?),
        Mode::NoId => None,
    };
    let ap = load_model(dir.join(layout::checkpoint("ap")))?;
    Ok(TrainedPipeline::new(cfg.pipeline, projection, id, ap)?)
}

pub fn predict(args: &PredictArgs) -> Outcome {
    let pipeline = load_pipeline(&args.model_dir)?;
    let emb = load_matrix(&args.embeddings)?;
    if emb.ncols() != pipeline.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: pipeline.input_dim(),
            got: emb.ncols(),
        }
        .into());
    }
    let (ids, z): (Vec<String>, Array2<f64>) = match &args.recipes {
        Some(path) => {
            let records = parse_recipes(&read_file(path)?, pipeline.num_ingredients())?;
            let mut rows = Vec::with_capacity(records.len());
            for r in &records {
                if r.embedding_row >= emb.nrows() {
                    return Err(Error::InvalidInput(format!(
                        "recipe {} references embedding row {} of {}",
                        r.id,
                        r.embedding_row,
                        emb.nrows()
                    ))
                    .into());
                }
                rows.push(r.embedding_row);
            }
            (records.into_iter().map(|r| r.id).collect(), emb.select(Axis(0), &rows))
        }
        None => ((0..emb.nrows()).map(|i| i.to_string()).collect(), emb),
    };
    let preds = pipeline.predict_batch(z.view())?;
    let lines: Vec<PredictionLine> = ids
        .into_iter()
        .zip(preds)
        .map(|(id, p)| PredictionLine {
            id,
            amounts: p.amounts.nonzero(),
        })
        .collect();
    write_file(&args.out, &write_predictions(&lines))?;
    println!("predicted {} recipes", lines.len());
    Ok(())
}

pub fn evaluate(args: &EvaluateArgs) -> Outcome {
    let ds = load_split(&args.data, &args.split)?;
    let substitution = load_substitution(&args.groups)?;
    let pipeline = match &args.model_dir {
        Some(dir) => Some(load_pipeline(dir)?),
        None => None,
    };
    let total = pipeline
        .as_ref()
        .map_or(pita_core::recipe::DEFAULT_TOTAL_GRAMS, |p| p.config.total_grams);
    let size = ds.num_ingredients();
    let amounts: Vec<AmountVector> = match (&args.predictions, &pipeline) {
        (Some(path), _) => {
            let mut by_id: HashMap<String, Vec<(usize, f64)>> = parse_predictions(&read_file(path)?, size)?
                .into_iter()
                .map(|p| (p.id, p.amounts))
                .collect();
            ds.records
                .iter()
                .map(|r| {
                    let sparse = by_id
                        .remove(&r.id)
                        .ok_or_else(|| Error::InvalidInput(format!("no prediction for recipe {}", r.id)))?;
                    let mut dense = vec![0.0; size];
                    for (i, g) in sparse {
                        dense[i] = g;
                    }
                    AmountVector::new(dense)
                })
                .collect::<Result<_, Error>>()?
        }
        (None, Some(p)) => p.predict_dataset(&ds)?.into_iter().map(|p| p.amounts).collect(),
        (None, None) => unreachable!("clap requires --model-dir without --predictions"),
    };
    let report = evaluate_amounts(&ds, &amounts, &substitution, total, args.jobs)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_file(&args.out, report.to_json().as_bytes())?;
    println!(
        "n={} cvg={:.4} iou={:.4} emd={:.2} cvg_group={:.4} iou_group={:.4} emd_group={:.2}",
        report.n, report.cvg, report.iou, report.emd, report.cvg_group, report.iou_group, report.emd_group
    );
    Ok(())
}
