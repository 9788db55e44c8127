//! Run configuration stored as a flat JSON object with dotted keys, e.g.
//! `{"seed": 7, "pipeline.mode": "no_id", "sinkhorn.lambda": 100}`.
//! Unknown keys are rejected. Missing keys keep their defaults.

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::pipeline::PipelineConfig;
use crate::retrieval::RetrievalConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub pipeline: PipelineConfig,
    /// Feed ID and AP with projected embeddings from the retrieval stage.
    pub use_projection: bool,
    pub retrieval: RetrievalConfig,
    pub data_dir: Option<String>,
    pub groups_dir: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            pipeline: PipelineConfig::default(),
            use_projection: true,
            retrieval: RetrievalConfig::default(),
            data_dir: None,
            groups_dir: None,
        }
    }
}

/// Every accepted key, in the order they are written.
pub const KEYS: &[&str] = &[
    "paths.data",
    "paths.groups",
    "pipeline.batch_size",
    "pipeline.ce_eps",
    "pipeline.detection_threshold",
    "pipeline.epochs",
    "pipeline.hidden",
    "pipeline.loss",
    "pipeline.lr",
    "pipeline.mode",
    "pipeline.top_k",
    "pipeline.total_grams",
    "pipeline.use_projection",
    "pipeline.weight_clamp",
    "retrieval.batch_size",
    "retrieval.epochs",
    "retrieval.lr",
    "retrieval.margin",
    "retrieval.output_dim",
    "seed",
    "sinkhorn.lambda",
    "sinkhorn.max_iters",
    "sinkhorn.p",
    "sinkhorn.tol",
];

fn invalid(key: &str, want: &str, got: &Value) -> Error {
    Error::InvalidConfig(format!("{key}: expected {want}, got {got}"))
}

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| invalid(key, "a number", v))
}

fn as_usize(key: &str, v: &Value) -> Result<usize> {
    v.as_u64()
        .and_then(|x| usize::try_from(x).ok())
        .ok_or_else(|| invalid(key, "a nonnegative integer", v))
}

fn as_str<'a>(key: &str, v: &'a Value) -> Result<&'a str> {
    v.as_str().ok_or_else(|| invalid(key, "a string", v))
}

fn opt<T>(v: &Value, f: impl FnOnce(&Value) -> Result<T>) -> Result<Option<T>> {
    if v.is_null() {
        Ok(None)
    } else {
        f(v).map(Some)
    }
}

impl RunConfig {
    /// Parses a config file body. An empty object gives the defaults.
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(bytes).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let map: Map<String, Value> = serde_json::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("config is not a JSON object: {e}")))?;
        let mut cfg = Self::default();
        for (k, v) in &map {
            cfg.set_value(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies a `key=value` override. The value is read as JSON when it
    /// parses, otherwise as a bare string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("override {assignment:?} is not key=value")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        self.set_value(key.trim(), &value)?;
        self.validate()
    }

    pub fn set_value(&mut self, key: &str, v: &Value) -> Result<()> {
        let p = &mut self.pipeline;
        match key {
            "seed" => {
                self.seed = v.as_u64().ok_or_else(|| invalid(key, "a nonnegative integer", v))?;
                p.seed = self.seed;
                self.retrieval.seed = self.seed;
            }
            "paths.data" => self.data_dir = opt(v, |v| as_str(key, v).map(String::from))?,
            "paths.groups" => self.groups_dir = opt(v, |v| as_str(key, v).map(String::from))?,
            "pipeline.mode" => p.mode = as_str(key, v)?.parse()?,
            "pipeline.loss" => p.loss = as_str(key, v)?.parse()?,
            "pipeline.detection_threshold" => p.detection_threshold = as_f64(key, v)?,
            "pipeline.top_k" => p.top_k = opt(v, |v| as_usize(key, v))?,
            "pipeline.batch_size" => p.batch_size = as_usize(key, v)?,
            "pipeline.epochs" => p.epochs = as_usize(key, v)?,
            "pipeline.hidden" => {
                let items = v.as_array().ok_or_else(|| invalid(key, "an array of widths", v))?;
                p.hidden = items.iter().map(|x| as_usize(key, x)).collect::<Result<_>>()?;
            }
            "pipeline.lr" => p.adam.lr = as_f64(key, v)?,
            "pipeline.total_grams" => p.total_grams = as_f64(key, v)?,
            "pipeline.weight_clamp" => p.weight_clamp = as_f64(key, v)?,
            "pipeline.ce_eps" => p.ce_eps = as_f64(key, v)?,
            "pipeline.use_projection" => {
                self.use_projection = v.as_bool().ok_or_else(|| invalid(key, "true or false", v))?
            }
            "sinkhorn.lambda" => p.sinkhorn.lambda = as_f64(key, v)?,
            "sinkhorn.max_iters" => p.sinkhorn.max_iters = as_usize(key, v)?,
            "sinkhorn.tol" => p.sinkhorn.tol = as_f64(key, v)?,
            "sinkhorn.p" => p.sinkhorn.p = as_f64(key, v)?,
            "retrieval.margin" => self.retrieval.margin = as_f64(key, v)?,
            "retrieval.epochs" => self.retrieval.epochs = as_usize(key, v)?,
            "retrieval.batch_size" => self.retrieval.batch_size = as_usize(key, v)?,
            "retrieval.output_dim" => self.retrieval.output_dim = opt(v, |v| as_usize(key, v))?,
            "retrieval.lr" => self.retrieval.adam.lr = as_f64(key, v)?,
            _ => return Err(Error::InvalidConfig(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        let r = &self.retrieval;
        if r.batch_size < 2 {
            return Err(Error::InvalidConfig("retrieval.batch_size must be at least 2".into()));
        }
        if r.margin < 0.0 {
            return Err(Error::InvalidConfig("retrieval.margin must be nonnegative".into()));
        }
        if r.output_dim == Some(0) {
            return Err(Error::InvalidConfig("retrieval.output_dim must be positive".into()));
        }
        if !(r.adam.lr > 0.0) {
            return Err(Error::InvalidConfig("retrieval.lr must be positive".into()));
        }
        Ok(())
    }

    fn value_of(&self, key: &str) -> Value {
        let p = &self.pipeline;
        let opt_str = |s: &Option<String>| s.clone().map(Value::String).unwrap_or(Value::Null);
        match key {
            "seed" => self.seed.into(),
            "paths.data" => opt_str(&self.data_dir),
            "paths.groups" => opt_str(&self.groups_dir),
            "pipeline.mode" => p.mode.to_string().into(),
            "pipeline.loss" => p.loss.to_string().into(),
            "pipeline.detection_threshold" => p.detection_threshold.into(),
            "pipeline.top_k" => p.top_k.map(Value::from).unwrap_or(Value::Null),
            "pipeline.batch_size" => p.batch_size.into(),
            "pipeline.epochs" => p.epochs.into(),
            "pipeline.hidden" => p.hidden.clone().into(),
            "pipeline.lr" => p.adam.lr.into(),
            "pipeline.total_grams" => p.total_grams.into(),
            "pipeline.weight_clamp" => p.weight_clamp.into(),
            "pipeline.ce_eps" => p.ce_eps.into(),
            "pipeline.use_projection" => self.use_projection.into(),
            "sinkhorn.lambda" => p.sinkhorn.lambda.into(),
            "sinkhorn.max_iters" => p.sinkhorn.max_iters.into(),
            "sinkhorn.tol" => p.sinkhorn.tol.into(),
            "sinkhorn.p" => p.sinkhorn.p.into(),
            "retrieval.margin" => self.retrieval.margin.into(),
            "retrieval.epochs" => self.retrieval.epochs.into(),
            "retrieval.batch_size" => self.retrieval.batch_size.into(),
            "retrieval.output_dim" => self.retrieval.output_dim.map(Value::from).unwrap_or(Value::Null),
            "retrieval.lr" => self.retrieval.adam.lr.into(),
            _ => unreachable!("KEYS lists only handled keys"),
        }
    }

    /// The full effective configuration with every key present.
    pub fn to_json(&self) -> String {
        let map: Map<String, Value> = KEYS.iter().map(|k| (k.to_string(), self.value_of(k))).collect();
        let mut s = serde_json::to_string_pretty(&Value::Object(map)).expect("config serializes");
        s.push('\n');
        s
    }
}
