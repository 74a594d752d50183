//! Run configuration: a flat `key = value` file with `[section]` headers,
//! merged with command-line overrides of the form `--section.key value`.
//! Every field is validated up front; errors carry the field path.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::bench::{Mode, SweepConfig};
use crate::model::ModelConfig;
use crate::snapkv::CompressionConfig;
use crate::tensor::Precision;
use crate::error::{Result, SnapError};

/// Merged view of model, compression, sweep, metric and demo knobs.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    /// None until a command applies its default (f64 for verification,
    /// f32 for benchmarks).
    pub precision: Option<Precision>,
    pub out_dir: PathBuf,
    pub include_prefill: bool,
    /// Number of oracle cases for the verify command.
    pub cases: usize,
    pub theta: f64,

    pub model: ModelConfig,
    pub compression: CompressionConfig,

    pub prompt_lengths: Vec<usize>,
    pub batch_sizes: Vec<usize>,
    pub gen_len: usize,
    pub repeats: usize,
    pub warmup: usize,
    pub modes: Vec<Mode>,
    pub mem_budget_bytes: Option<usize>,

    pub demo_prompt_len: usize,
    pub demo_gen_len: usize,
    /// Report cache arithmetic for `demo_prompt_len` without running a
    /// forward pass.
    pub demo_metadata_only: bool,

    pub hitrate_planted_mass: f64,
    pub hitrate_seeds: usize,
    pub hitrate_prompt_len: usize,
    pub hitrate_gen_len: usize,
    pub hitrate_window: usize,
    pub hitrate_k: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            precision: None,
            out_dir: PathBuf::from("out"),
            include_prefill: false,
            cases: 1000,
            theta: 0.02,
            model: ModelConfig {
                vocab: 512,
                d_model: 256,
                layers: 4,
                num_heads: 2,
                num_kv_heads: 2,
                head_dim: 128,
                mlp_hidden: 512,
                seed: 42,
                precision: Precision::F32,
            },
            compression: CompressionConfig::with_capacity(16, 1024),
            prompt_lengths: vec![1024, 2048, 4096, 8192, 16384],
            batch_sizes: vec![1],
            gen_len: 64,
            repeats: 3,
            warmup: 1,
            modes: vec![Mode::Baseline, Mode::SnapKv],
            mem_budget_bytes: None,
            demo_prompt_len: 2048,
            demo_gen_len: 8,
            demo_metadata_only: false,
            hitrate_planted_mass: 0.6,
            hitrate_seeds: 100,
            hitrate_prompt_len: 160,
            hitrate_gen_len: 32,
            hitrate_window: 16,
            hitrate_k: 24,
        }
    }
}

impl RunConfig {
    /// Builds the config from an optional file plus override pairs
    /// (`section.key`, `value`), validating every field.
    pub fn from_sources(file: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let mut map = BTreeMap::new();
        if let Some(text) = file {
            parse_file(text, &mut map)?;
        }
        for (k, v) in overrides {
            map.insert(k.clone(), v.clone());
        }
        Self::from_map(map)
    }

    fn from_map(map: BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = Self::default();
        for (key, value) in &map {
            cfg.apply(key, value)?;
        }
        // one knob drives capacity: setting a rate clears the default cap
        if map.contains_key("compression.compression_rate")
            && !map.contains_key("compression.max_capacity_prompt")
        {
            cfg.compression.max_capacity_prompt = None;
        }
        cfg.model.seed = cfg.seed;
        if let Some(p) = cfg.precision {
            cfg.model.precision = p;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "precision" => self.precision = Some(value.parse()?),
            "out" => self.out_dir = PathBuf::from(value),
            "include_prefill" => self.include_prefill = parse_bool(key, value)?,
            "cases" => self.cases = parse(key, value)?,
            "theta" | "metrics.theta" => self.theta = parse(key, value)?,

            "model.vocab" => self.model.vocab = parse(key, value)?,
            "model.d_model" => self.model.d_model = parse(key, value)?,
            "model.layers" => self.model.layers = parse(key, value)?,
            "model.num_heads" => self.model.num_heads = parse(key, value)?,
            "model.num_kv_heads" => self.model.num_kv_heads = parse(key, value)?,
            "model.head_dim" => self.model.head_dim = parse(key, value)?,
            "model.mlp_hidden" => self.model.mlp_hidden = parse(key, value)?,

            "compression.window_size" => self.compression.window_size = parse(key, value)?,
            "compression.max_capacity_prompt" => {
                self.compression.max_capacity_prompt = Some(parse(key, value)?)
            }
            "compression.compression_rate" => {
                self.compression.compression_rate = Some(parse(key, value)?)
            }
            "compression.kernel_size" => self.compression.kernel_size = parse(key, value)?,
            "compression.pooling" => self.compression.pooling = value.parse()?,

            "sweep.prompt_lengths" => self.prompt_lengths = parse_list(key, value)?,
            "sweep.batch_sizes" => self.batch_sizes = parse_list(key, value)?,
            "sweep.gen_len" => self.gen_len = parse(key, value)?,
            "sweep.repeats" => self.repeats = parse(key, value)?,
            "sweep.warmup" => self.warmup = parse(key, value)?,
            "sweep.modes" => {
                self.modes = value
                    .split(',')
                    .map(|m| match m.trim() {
                        "baseline" => Ok(Mode::Baseline),
                        "snapkv" => Ok(Mode::SnapKv),
                        other => Err(SnapError::Config(format!(
                            "sweep.modes: unknown mode {other:?}"
                        ))),
                    })
                    .collect::<Result<_>>()?
            }
            "sweep.mem_budget_bytes" => self.mem_budget_bytes = Some(parse(key, value)?),

            "demo.prompt_len" => self.demo_prompt_len = parse(key, value)?,
            "demo.gen_len" => self.demo_gen_len = parse(key, value)?,
            "demo.metadata_only" => self.demo_metadata_only = parse_bool(key, value)?,

            "hitrate.planted_mass" => self.hitrate_planted_mass = parse(key, value)?,
            "hitrate.seeds" => self.hitrate_seeds = parse(key, value)?,
            "hitrate.prompt_len" => self.hitrate_prompt_len = parse(key, value)?,
            "hitrate.gen_len" => self.hitrate_gen_len = parse(key, value)?,
            "hitrate.window" => self.hitrate_window = parse(key, value)?,
            "hitrate.k" => self.hitrate_k = parse(key, value)?,

            other => {
                return Err(SnapError::Config(format!("unknown config key {other:?}")));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model
            .validate()
            .map_err(|e| SnapError::Config(format!("model: {e}")))?;
        self.compression
            .validate()
            .map_err(|e| SnapError::Config(format!("compression: {e}")))?;
        if self.theta < 0.0 {
            return Err(SnapError::Config(format!(
                "metrics.theta: must be nonnegative, got {}",
                self.theta
            )));
        }
        if self.cases == 0 {
            return Err(SnapError::Config("cases: must be >= 1".into()));
        }
        self.sweep_config()
            .validate()
            .map_err(|e| SnapError::Config(format!("sweep: {e}")))?;
        Ok(())
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            prompt_lengths: self.prompt_lengths.clone(),
            batch_sizes: self.batch_sizes.clone(),
            gen_len: self.gen_len,
            repeats: self.repeats,
            warmup: self.warmup,
            modes: self.modes.clone(),
            compression: self.compression.clone(),
            model: self.model.clone(),
            seed: self.seed,
            mem_budget_bytes: self.mem_budget_bytes,
            include_prefill: self.include_prefill,
        }
    }
}

fn parse_file(text: &str, map: &mut BTreeMap<String, String>) -> Result<()> {
    let mut section = String::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(SnapError::Config(format!(
                "line {}: expected key = value, got {raw:?}",
                lineno + 1
            )));
        };
        let key = key.trim();
        let full = if section.is_empty() {
            key.to_string()
        } else {
            format!("{section}.{key}")
        };
        map.insert(full, value.trim().to_string());
    }
    Ok(())
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| SnapError::Config(format!("{key}: cannot parse {value:?} ({e})")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(SnapError::Config(format!(
            "{key}: expected a boolean, got {other:?}"
        ))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}
