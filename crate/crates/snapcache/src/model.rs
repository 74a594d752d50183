//! A small, seeded, deterministic decoder-only transformer: untied
//! embeddings, pre-norm layers of attention + SiLU MLP, and a logits
//! head. It exists to host prefill / snap / decode and the latency and
//! memory experiments; nothing asserts on its text quality.

use std::io::{Read, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::attention::{self, AttentionConfig, KvCache};
use crate::error::{Result, SnapError};
use crate::snapkv::{snap, CompressionConfig, SelectedIndices};
use crate::tensor::{Element, Precision, Tensor};

const RMS_EPS: f64 = 1e-6;
const CHECKPOINT_MAGIC: &[u8; 8] = b"SNAPTOY1";

/// Model geometry and seed. Identical (config, seed) yields bit-identical
/// weights.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub vocab: usize,
    pub d_model: usize,
    pub layers: usize,
    pub num_heads: usize,
    pub num_kv_heads: usize,
    pub head_dim: usize,
    pub mlp_hidden: usize,
    pub seed: u64,
    pub precision: Precision,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab == 0 || self.layers == 0 || self.mlp_hidden == 0 {
            return Err(SnapError::Config(
                "vocab, layers and mlp_hidden must be positive".into(),
            ));
        }
        if self.d_model != self.num_heads * self.head_dim {
            return Err(SnapError::Config(format!(
                "d_model {} != num_heads {} * head_dim {}",
                self.d_model, self.num_heads, self.head_dim
            )));
        }
        self.attention().validate()
    }

    pub fn attention(&self) -> AttentionConfig {
        AttentionConfig {
            num_heads: self.num_heads,
            num_kv_heads: self.num_kv_heads,
            head_dim: self.head_dim,
            rope_base: 10000.0,
        }
    }

    fn kv_dim(&self) -> usize {
        self.num_kv_heads * self.head_dim
    }
}

/// Weights of one layer, in checkpoint declaration order.
#[derive(Debug, Clone, PartialEq)]
struct LayerWeights<T> {
    wq: Tensor<T>,
    wk: Tensor<T>,
    wv: Tensor<T>,
    wo: Tensor<T>,
    w1: Tensor<T>,
    w2: Tensor<T>,
}

/// Immutable model; safe to share across concurrent generations.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    embed: Tensor<T>,
    layers: Vec<LayerWeights<T>>,
    lm_head: Tensor<T>,
}

/// Draws weights from a seeded normal with std `0.02 / sqrt(layers)`.
pub fn init_model<T: Element>(config: &ModelConfig) -> Result<Model<T>> {
    config.validate()?;
    if T::PRECISION != config.precision {
        return Err(SnapError::Config(format!(
            "element type is {} but config.precision is {}",
            T::PRECISION,
            config.precision
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let std = 0.02 / (config.layers as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("valid std");
    let mut draw = |shape: Vec<usize>| -> Tensor<T> {
        let n: usize = shape.iter().product();
        let data: Vec<T> = (0..n)
            .map(|_| T::from_f64(normal.sample(&mut rng)))
            .collect();
        Tensor::new(shape, data).expect("sized buffer")
    };
    let d = config.d_model;
    let kv = config.kv_dim();
    let embed = draw(vec![config.vocab, d]);
    let layers = (0..config.layers)
        .map(|_| LayerWeights {
            wq: draw(vec![d, d]),
            wk: draw(vec![d, kv]),
            wv: draw(vec![d, kv]),
            wo: draw(vec![d, d]),
            w1: draw(vec![d, config.mlp_hidden]),
            w2: draw(vec![config.mlp_hidden, d]),
        })
        .collect();
    let lm_head = draw(vec![d, config.vocab]);
    Ok(Model {
        config: config.clone(),
        embed,
        layers,
        lm_head,
    })
}

/// Outcome of one generation run.
#[derive(Debug, Clone)]
pub struct GenerationResult {
    /// Generated token ids (prompt excluded).
    pub tokens: Vec<u32>,
    /// Wall time of each decode step; same length as `tokens`.
    pub per_step_latency: Vec<Duration>,
    /// Final cache length per layer.
    pub cache_entries_per_layer: Vec<usize>,
    /// Cache length per layer right after prefill (and snap, if enabled).
    pub prefill_entries_per_layer: Vec<usize>,
    pub prefill_duration: Duration,
}

/// In-flight generation: per-layer caches plus decode bookkeeping. Each
/// state owns its caches; independent states never share mutable data.
#[derive(Debug, Clone)]
pub struct GenerationState<T> {
    caches: Vec<KvCache<T>>,
    selections: Vec<Option<SelectedIndices>>,
    next_position: usize,
    last_token: u32,
    prompt_len: usize,
    bypassed: bool,
}

impl<T: Element> GenerationState<T> {
    pub fn cache_entries_per_layer(&self) -> Vec<usize> {
        self.caches.iter().map(|c| c.seq_len()).collect()
    }

    pub fn caches(&self) -> &[KvCache<T>] {
        &self.caches
    }

    /// Per-layer prompt selections; `None` for a layer whose compression
    /// was bypassed (or disabled).
    pub fn selections(&self) -> &[Option<SelectedIndices>] {
        &self.selections
    }

    pub fn prompt_len(&self) -> usize {
        self.prompt_len
    }

    /// True when compression was requested but the prompt fit the
    /// capacity, so every layer kept its full cache.
    pub fn bypassed(&self) -> bool {
        self.bypassed
    }

    /// Exact cache footprint in bytes, summed over layers.
    pub fn cache_bytes(&self) -> usize {
        self.caches.iter().map(|c| c.bytes()).sum()
    }
}

impl<T: Element> Model<T> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Prefills the prompt through every layer (compressing each layer's
    /// cache right after that layer finishes, when compression is set)
    /// and returns the state ready to decode.
    pub fn start_generation(
        &self,
        prompt: &[u32],
        compression: Option<&CompressionConfig>,
    ) -> Result<GenerationState<T>> {
        if prompt.is_empty() {
            return Err(SnapError::Config("empty prompt".into()));
        }
        if let Some(c) = compression {
            c.validate()?;
            if c.window_size > prompt.len() {
                return Err(SnapError::Config(format!(
                    "window_size {} exceeds prompt length {}",
                    c.window_size,
                    prompt.len()
                )));
            }
        }
        let l = prompt.len();
        let obs_window = compression.map_or(1, |c| c.window_size);
        let mut x = self.embed_tokens(prompt)?;
        let mut caches = Vec::with_capacity(self.config.layers);
        let mut selections = Vec::with_capacity(self.config.layers);
        let mut bypassed = compression.is_some();
        let attn_cfg = self.config.attention();
        for lw in &self.layers {
            let normed = rmsnorm_rows(&x, self.config.d_model);
            let q = self.project(&normed, &lw.wq, l, self.config.num_heads)?;
            let k = self.project(&normed, &lw.wk, l, self.config.num_kv_heads)?;
            let v = self.project(&normed, &lw.wv, l, self.config.num_kv_heads)?;
            let out = attention::prefill(&q, &k, &v, &attn_cfg, obs_window)?;
            let merged = heads_to_rows(&out.output, l, self.config.d_model);
            let proj = Tensor::new(vec![l, self.config.d_model], merged)?.matmul(&lw.wo)?;
            add_assign(&mut x, proj.data());
            self.mlp(&mut x, lw, l)?;
            // Streaming snap: this layer's cache is final before the next
            // layer's prefill runs.
            let cache = match compression {
                Some(c) => {
                    let res = snap(out.cache, &out.obs_weights, c)?;
                    bypassed &= res.bypassed();
                    selections.push(res.selected);
                    res.cache
                }
                None => {
                    selections.push(None);
                    out.cache
                }
            };
            caches.push(cache);
        }
        let last_logits = self.logits(&x[(l - 1) * self.config.d_model..]);
        let last_token = argmax_low_tie(&last_logits);
        Ok(GenerationState {
            caches,
            selections,
            next_position: l,
            last_token,
            prompt_len: l,
            bypassed: compression.is_some() && bypassed,
        })
    }

    /// One greedy decode step: appends the pending token's KV to every
    /// layer and returns the next token (argmax, ties toward the lower
    /// token id).
    pub fn decode_next(&self, state: &mut GenerationState<T>) -> Result<u32> {
        let d = self.config.d_model;
        let token = state.last_token;
        if token as usize >= self.config.vocab {
            return Err(SnapError::Config(format!("token {token} out of vocab")));
        }
        let mut x = self.embed.data()[token as usize * d..(token as usize + 1) * d].to_vec();
        let attn_cfg = self.config.attention();
        for (lw, cache_slot) in self.layers.iter().zip(&mut state.caches) {
            let normed = rmsnorm_rows(&x, d);
            let q = self.project(&normed, &lw.wq, 1, self.config.num_heads)?;
            let k = self.project(&normed, &lw.wk, 1, self.config.num_kv_heads)?;
            let v = self.project(&normed, &lw.wv, 1, self.config.num_kv_heads)?;
            let cache = std::mem::replace(cache_slot, KvCache::new(1, 1));
            let (out, cache) =
                attention::decode_step(&q, &k, &v, cache, state.next_position, &attn_cfg)?;
            *cache_slot = cache;
            let merged = heads_to_rows(&out, 1, d);
            let proj = Tensor::new(vec![1, d], merged)?.matmul(&lw.wo)?;
            add_assign(&mut x, proj.data());
            self.mlp(&mut x, lw, 1)?;
        }
        let logits = self.logits(&x);
        let next = argmax_low_tie(&logits);
        state.last_token = next;
        state.next_position += 1;
        Ok(next)
    }

    /// Greedy generation of `gen_len` tokens with per-step wall times.
    pub fn generate(
        &self,
        prompt: &[u32],
        gen_len: usize,
        compression: Option<&CompressionConfig>,
    ) -> Result<GenerationResult> {
        if gen_len == 0 {
            return Err(SnapError::Config("gen_len must be >= 1".into()));
        }
        let t0 = Instant::now();
        let mut state = self.start_generation(prompt, compression)?;
        let prefill_duration = t0.elapsed();
        let prefill_entries = state.cache_entries_per_layer();
        let mut tokens = Vec::with_capacity(gen_len);
        let mut latency = Vec::with_capacity(gen_len);
        // The token emitted by prefill counts as the first generated one.
        tokens.push(state.last_token);
        latency.push(Duration::ZERO);
        for _ in 1..gen_len {
            let t = Instant::now();
            let tok = self.decode_next(&mut state)?;
            latency.push(t.elapsed());
            tokens.push(tok);
        }
        Ok(GenerationResult {
            tokens,
            per_step_latency: latency,
            cache_entries_per_layer: state.cache_entries_per_layer(),
            prefill_entries_per_layer: prefill_entries,
            prefill_duration,
        })
    }

    /// Full causal attention grids `[num_kv_heads, L, L]` per layer for
    /// the prompt followed by `gen_len` greedily generated tokens
    /// (teacher-forced re-run of the whole sequence).
    pub fn attention_maps(&self, prompt: &[u32], gen_len: usize) -> Result<Vec<Tensor<T>>> {
        let mut seq = prompt.to_vec();
        if gen_len > 0 {
            let gen = self.generate(prompt, gen_len, None)?;
            seq.extend(gen.tokens);
        }
        let l = seq.len();
        let mut x = self.embed_tokens(&seq)?;
        let attn_cfg = self.config.attention();
        let mut maps = Vec::with_capacity(self.config.layers);
        for lw in &self.layers {
            let normed = rmsnorm_rows(&x, self.config.d_model);
            let q = self.project(&normed, &lw.wq, l, self.config.num_heads)?;
            let k = self.project(&normed, &lw.wk, l, self.config.num_kv_heads)?;
            let v = self.project(&normed, &lw.wv, l, self.config.num_kv_heads)?;
            let out = attention::prefill(&q, &k, &v, &attn_cfg, l)?;
            maps.push(out.obs_weights);
            let merged = heads_to_rows(&out.output, l, self.config.d_model);
            let proj = Tensor::new(vec![l, self.config.d_model], merged)?.matmul(&lw.wo)?;
            add_assign(&mut x, proj.data());
            self.mlp(&mut x, lw, l)?;
        }
        Ok(maps)
    }

    fn embed_tokens(&self, tokens: &[u32]) -> Result<Vec<T>> {
        let d = self.config.d_model;
        let mut x = Vec::with_capacity(tokens.len() * d);
        for &t in tokens {
            let t = t as usize;
            if t >= self.config.vocab {
                return Err(SnapError::Config(format!("token {t} out of vocab")));
            }
            x.extend_from_slice(&self.embed.data()[t * d..(t + 1) * d]);
        }
        Ok(x)
    }

    /// Projects `[rows, d_model]` activations through `w` and lays the
    /// result out as `[heads, rows, head_dim]`.
    fn project(&self, x: &[T], w: &Tensor<T>, rows: usize, heads: usize) -> Result<Tensor<T>> {
        let d = self.config.d_model;
        let hd = self.config.head_dim;
        let xm = Tensor::new(vec![rows, d], x.to_vec())?;
        let y = xm.matmul(w)?;
        let mut data = vec![T::zero(); heads * rows * hd];
        let width = heads * hd;
        for t in 0..rows {
            for h in 0..heads {
                let src = &y.data()[t * width + h * hd..t * width + (h + 1) * hd];
                data[(h * rows + t) * hd..(h * rows + t + 1) * hd].copy_from_slice(src);
            }
        }
        Tensor::new(vec![heads, rows, hd], data)
    }

    fn mlp(&self, x: &mut [T], lw: &LayerWeights<T>, rows: usize) -> Result<()> {
        let d = self.config.d_model;
        let normed = rmsnorm_rows(x, d);
        let mut h = Tensor::new(vec![rows, d], normed)?.matmul(&lw.w1)?;
        for v in h.data_mut() {
            // SiLU: x * sigmoid(x)
            let f = v.as_f64();
            *v = T::from_f64(f / (1.0 + (-f).exp()));
        }
        let out = h.matmul(&lw.w2)?;
        add_assign(x, out.data());
        Ok(())
    }

    fn logits(&self, x_last: &[T]) -> Vec<T> {
        let d = self.config.d_model;
        let normed = rmsnorm_rows(x_last, d);
        let y = Tensor::new(vec![1, d], normed)
            .and_then(|t| t.matmul(&self.lm_head))
            .expect("logits matmul");
        y.into_data()
    }

    /// FNV-1a over the little-endian weight bytes, in declaration order.
    pub fn weight_checksum(&self) -> u64 {
        let mut hash = 0xcbf29ce484222325u64;
        let mut feed = |t: &Tensor<T>| {
            let mut buf = Vec::with_capacity(t.len() * T::PRECISION.bytes());
            for &v in t.data() {
                v.write_le(&mut buf);
            }
            for b in buf {
                hash ^= b as u64;
                hash = hash.wrapping_mul(0x100000001b3);
            }
        };
        feed(&self.embed);
        for lw in &self.layers {
            for t in [&lw.wq, &lw.wk, &lw.wv, &lw.wo, &lw.w1, &lw.w2] {
                feed(t);
            }
        }
        feed(&self.lm_head);
        hash
    }

    /// Writes the checkpoint: magic, config fields as little-endian u64,
    /// precision tag, then all weights in declaration order.
    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        for v in [
            self.config.vocab,
            self.config.d_model,
            self.config.layers,
            self.config.num_heads,
            self.config.num_kv_heads,
            self.config.head_dim,
            self.config.mlp_hidden,
        ] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        w.write_all(&self.config.seed.to_le_bytes())?;
        w.write_all(&[self.config.precision.tag()])?;
        let mut write_tensor = |t: &Tensor<T>| -> Result<()> {
            let mut buf = Vec::with_capacity(t.len() * T::PRECISION.bytes());
            for &v in t.data() {
                v.write_le(&mut buf);
            }
            w.write_all(&buf)?;
            Ok(())
        };
        write_tensor(&self.embed)?;
        for lw in &self.layers {
            for t in [&lw.wq, &lw.wk, &lw.wv, &lw.wo, &lw.w1, &lw.w2] {
                write_tensor(t)?;
            }
        }
        write_tensor(&self.lm_head)?;
        Ok(())
    }

    pub fn save_to_path<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        self.save(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(SnapError::Format("bad checkpoint magic".into()));
        }
        let mut u64buf = [0u8; 8];
        let mut next = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut u64buf)?;
            Ok(u64::from_le_bytes(u64buf))
        };
        let vocab = next(&mut r)? as usize;
        let d_model = next(&mut r)? as usize;
        let layers = next(&mut r)? as usize;
        let num_heads = next(&mut r)? as usize;
        let num_kv_heads = next(&mut r)? as usize;
        let head_dim = next(&mut r)? as usize;
        let mlp_hidden = next(&mut r)? as usize;
        let seed = next(&mut r)?;
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let precision = Precision::from_tag(tag[0])?;
        if precision != T::PRECISION {
            return Err(SnapError::Format(format!(
                "checkpoint is {precision}, loader is {}",
                T::PRECISION
            )));
        }
        let config = ModelConfig {
            vocab,
            d_model,
            layers,
            num_heads,
            num_kv_heads,
            head_dim,
            mlp_hidden,
            seed,
            precision,
        };
        config.validate()?;
        let bytes = T::PRECISION.bytes();
        let read_tensor = |r: &mut R, shape: Vec<usize>| -> Result<Tensor<T>> {
            let n: usize = shape.iter().product();
            let mut buf = vec![0u8; n * bytes];
            r.read_exact(&mut buf)?;
            let data = buf.chunks_exact(bytes).map(T::from_le).collect();
            Tensor::new(shape, data)
        };
        let kv = config.kv_dim();
        let embed = read_tensor(&mut r, vec![vocab, d_model])?;
        let mut layer_weights = Vec::with_capacity(layers);
        for _ in 0..layers {
            layer_weights.push(LayerWeights {
                wq: read_tensor(&mut r, vec![d_model, d_model])?,
                wk: read_tensor(&mut r, vec![d_model, kv])?,
                wv: read_tensor(&mut r, vec![d_model, kv])?,
                wo: read_tensor(&mut r, vec![d_model, d_model])?,
                w1: read_tensor(&mut r, vec![d_model, mlp_hidden])?,
                w2: read_tensor(&mut r, vec![mlp_hidden, d_model])?,
            });
        }
        let lm_head = read_tensor(&mut r, vec![d_model, vocab])?;
        Ok(Model {
            config,
            embed,
            layers: layer_weights,
            lm_head,
        })
    }

    pub fn load_from_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::load(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn rmsnorm_rows<T: Element>(x: &[T], d: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks_exact(d) {
        let ms: f64 = row.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>() / d as f64;
        let inv = T::from_f64(1.0 / (ms + RMS_EPS).sqrt());
        out.extend(row.iter().map(|&v| v * inv));
    }
    out
}

fn add_assign<T: Element>(x: &mut [T], y: &[T]) {
    for (a, b) in x.iter_mut().zip(y) {
        *a += *b;
    }
}

/// `[heads, rows, head_dim]` back to `[rows, heads * head_dim]`.
fn heads_to_rows<T: Element>(x: &Tensor<T>, rows: usize, d: usize) -> Vec<T> {
    let heads = x.shape()[0];
    let hd = x.shape()[2];
    let mut out = vec![T::zero(); rows * d];
    for h in 0..heads {
        for t in 0..rows {
            let src = &x.data()[(h * rows + t) * hd..(h * rows + t + 1) * hd];
            out[t * d + h * hd..t * d + (h + 1) * hd].copy_from_slice(src);
        }
    }
    out
}

fn argmax_low_tie<T: Element>(logits: &[T]) -> u32 {
    let mut best = 0usize;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best as u32
}
