//! Systems-claims harness: per-token decode latency versus prompt length
//! and exact cache-memory accounting, on a seeded deterministic workload.
//! Prefill is never part of the per-token timing; it is measured
//! separately and reported only when asked for.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SnapError};
use crate::model::{init_model, Model, ModelConfig};
use crate::snapkv::CompressionConfig;
use crate::tensor::Element;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Baseline,
    SnapKv,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Baseline => write!(f, "baseline"),
            Self::SnapKv => write!(f, "snapkv"),
        }
    }
}

/// Grid and measurement parameters for one sweep.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    /// Strictly increasing prompt lengths.
    pub prompt_lengths: Vec<usize>,
    /// Batch sizes, emulated as independent caches stepped round-robin in
    /// one thread.
    pub batch_sizes: Vec<usize>,
    pub gen_len: usize,
    pub repeats: usize,
    pub warmup: usize,
    pub modes: Vec<Mode>,
    pub compression: CompressionConfig,
    pub model: ModelConfig,
    /// Workload seed; both modes decode the same token streams.
    pub seed: u64,
    /// Optional memory budget; a grid point whose predicted cache footprint
    /// exceeds it is marked OOM and skipped, and the sweep continues.
    pub mem_budget_bytes: Option<usize>,
    /// Also measure prefill wall time (reported in a separate table).
    pub include_prefill: bool,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeats < 3 {
            return Err(SnapError::Config(format!(
                "repeats must be >= 3, got {}",
                self.repeats
            )));
        }
        if self.warmup < 1 {
            return Err(SnapError::Config(format!(
                "warmup must be >= 1, got {}",
                self.warmup
            )));
        }
        if self.prompt_lengths.is_empty()
            || self.prompt_lengths.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(SnapError::Config(
                "prompt_lengths must be nonempty and strictly increasing".into(),
            ));
        }
        if self.batch_sizes.is_empty() || self.batch_sizes.contains(&0) {
            return Err(SnapError::Config("batch_sizes must be positive".into()));
        }
        if self.gen_len < 2 {
            return Err(SnapError::Config(
                "gen_len must be >= 2 (at least one timed decode step)".into(),
            ));
        }
        if self.modes.is_empty() {
            return Err(SnapError::Config("at least one mode required".into()));
        }
        self.compression.validate()?;
        self.model.validate()
    }
}

/// One grid point's measurements.
#[derive(Debug, Clone)]
pub struct BenchRecord {
    pub mode: Mode,
    pub prompt_len: usize,
    pub batch: usize,
    pub median_ms_per_token: f64,
    pub p90_ms_per_token: f64,
    /// Exact post-prefill cache footprint (all layers, all batch items).
    pub cache_bytes: usize,
    /// Arithmetic estimate of peak resident memory (weights + caches +
    /// activations); secondary to `cache_bytes`, never allocator data.
    pub peak_rss_estimate: usize,
    pub oom: bool,
    pub prefill_ms: Option<f64>,
}

/// Closed-form prompt-cache footprint for one mode at one prompt length:
/// entries x 2 (K and V) x kv heads x head_dim x element size, per layer.
pub fn predicted_cache_bytes(
    model: &ModelConfig,
    compression: &CompressionConfig,
    mode: Mode,
    prompt_len: usize,
    batch: usize,
) -> usize {
    let entries = match mode {
        Mode::Baseline => prompt_len,
        Mode::SnapKv => prompt_len.min(compression.effective_capacity(prompt_len)),
    };
    batch
        * model.layers
        * entries
        * 2
        * model.num_kv_heads
        * model.head_dim
        * model.precision.bytes()
}

/// Deterministic token stream for one prompt length.
pub fn workload_tokens(vocab: usize, len: usize, seed: u64) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (len as u64).wrapping_mul(0x9e3779b97f4a7c15));
    (0..len).map(|_| rng.gen_range(0..vocab as u32)).collect()
}

/// Runs the full grid. Every live grid point is prefilled once up front;
/// then `warmup` discarded rounds and `repeats` timed rounds each visit
/// every grid point in turn, cloning its post-prefill state and timing
/// `gen_len - 1` decode steps. Interleaving the rounds across the grid
/// means a transient machine stall can corrupt at most one repeat per
/// point instead of every repeat of one point; the reported latency is
/// the median over the per-repeat medians. Single-threaded by contract.
pub fn run_sweep<T: Element>(cfg: &SweepConfig) -> Result<Vec<BenchRecord>> {
    cfg.validate()?;
    let model: Model<T> = init_model(&cfg.model)?;

    enum Slot<T> {
        Oom(BenchRecord),
        Live(LivePoint<T>),
    }
    struct LivePoint<T> {
        mode: Mode,
        prompt_len: usize,
        batch: usize,
        base: crate::model::GenerationState<T>,
        prefill_ms: f64,
        repeat_medians: Vec<f64>,
        samples: Vec<f64>,
    }

    // phase 1: prefill every grid point (or mark it OOM)
    let mut slots: Vec<Slot<T>> = Vec::new();
    for &prompt_len in &cfg.prompt_lengths {
        let tokens = workload_tokens(cfg.model.vocab, prompt_len, cfg.seed);
        for &batch in &cfg.batch_sizes {
            for &mode in &cfg.modes {
                let predicted =
                    predicted_cache_bytes(&cfg.model, &cfg.compression, mode, prompt_len, batch);
                if cfg.mem_budget_bytes.is_some_and(|budget| predicted > budget) {
                    slots.push(Slot::Oom(BenchRecord {
                        mode,
                        prompt_len,
                        batch,
                        median_ms_per_token: f64::NAN,
                        p90_ms_per_token: f64::NAN,
                        cache_bytes: predicted,
                        peak_rss_estimate: predicted,
                        oom: true,
                        prefill_ms: None,
                    }));
                    continue;
                }
                let compression = match mode {
                    Mode::Baseline => None,
                    Mode::SnapKv => Some(&cfg.compression),
                };
                let t0 = std::time::Instant::now();
                let base = model.start_generation(&tokens, compression)?;
                let prefill_ms = t0.elapsed().as_secs_f64() * 1e3;
                slots.push(Slot::Live(LivePoint {
                    mode,
                    prompt_len,
                    batch,
                    base,
                    prefill_ms,
                    repeat_medians: Vec::new(),
                    samples: Vec::new(),
                }));
            }
        }
    }

    // phase 2: interleaved warmup + timed rounds over the whole grid
    for round in 0..cfg.warmup + cfg.repeats {
        let timed = round >= cfg.warmup;
        for slot in &mut slots {
            let Slot::Live(point) = slot else { continue };
            let mut states: Vec<_> = (0..point.batch).map(|_| point.base.clone()).collect();
            let mut round_samples = Vec::with_capacity((cfg.gen_len - 1) * point.batch);
            for _ in 1..cfg.gen_len {
                for state in &mut states {
                    let t = std::time::Instant::now();
                    model.decode_next(state)?;
                    if timed {
                        round_samples.push(t.elapsed().as_secs_f64() * 1e3);
                    }
                }
            }
            if timed {
                round_samples.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
                point.repeat_medians.push(median(&round_samples));
                point.samples.extend(round_samples);
            }
        }
    }

    let weights_bytes = model_bytes(&cfg.model);
    slots
        .into_iter()
        .map(|slot| match slot {
            Slot::Oom(record) => Ok(record),
            Slot::Live(mut point) => {
                point
                    .repeat_medians
                    .sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
                point
                    .samples
                    .sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
                let cache_bytes = point.base.cache_bytes() * point.batch;
                let activation_bytes = 4
                    * point.prompt_len
                    * cfg.model.d_model.max(cfg.model.mlp_hidden)
                    * cfg.model.precision.bytes();
                Ok(BenchRecord {
                    mode: point.mode,
                    prompt_len: point.prompt_len,
                    batch: point.batch,
                    median_ms_per_token: median(&point.repeat_medians),
                    p90_ms_per_token: percentile(&point.samples, 0.9),
                    cache_bytes,
                    peak_rss_estimate: weights_bytes + cache_bytes + activation_bytes,
                    oom: false,
                    prefill_ms: cfg.include_prefill.then_some(point.prefill_ms),
                })
            }
        })
        .collect()
}

fn model_bytes(cfg: &ModelConfig) -> usize {
    let d = cfg.d_model;
    let kv = cfg.num_kv_heads * cfg.head_dim;
    let per_layer = d * d * 2 + d * kv * 2 + d * cfg.mlp_hidden * 2;
    (cfg.vocab * d * 2 + cfg.layers * per_layer) * cfg.precision.bytes()
}

/// Median of a sorted sample (mean of the middle two when even).
fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let idx = ((n as f64 * p).ceil() as usize).clamp(1, n) - 1;
    sorted[idx]
}

/// CSV table with the stable header
/// `mode,prompt_len,batch,median_ms_per_token,p90_ms_per_token,cache_bytes,oom`.
/// OOM rows leave the latency columns empty.
pub fn records_csv(records: &[BenchRecord]) -> String {
    let mut out =
        String::from("mode,prompt_len,batch,median_ms_per_token,p90_ms_per_token,cache_bytes,oom\n");
    for r in records {
        let (med, p90) = if r.oom {
            (String::new(), String::new())
        } else {
            (
                format!("{:.6}", r.median_ms_per_token),
                format!("{:.6}", r.p90_ms_per_token),
            )
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.mode, r.prompt_len, r.batch, med, p90, r.cache_bytes, r.oom
        ));
    }
    out
}

/// Companion table for `--include-prefill` runs:
/// `mode,prompt_len,batch,prefill_ms`.
pub fn prefill_csv(records: &[BenchRecord]) -> String {
    let mut out = String::from("mode,prompt_len,batch,prefill_ms\n");
    for r in records {
        if let Some(ms) = r.prefill_ms {
            out.push_str(&format!(
                "{},{},{},{:.6}\n",
                r.mode, r.prompt_len, r.batch, ms
            ));
        }
    }
    out
}

/// Ordinary least squares fit y = slope * x + intercept.
#[derive(Debug, Clone, Copy)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(SnapError::Config(
            "linear_fit needs >= 2 paired samples".into(),
        ));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return Err(SnapError::Config("linear_fit: degenerate x values".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(LinearFit {
        slope,
        intercept,
        r2,
    })
}
