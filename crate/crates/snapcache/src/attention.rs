//! Causal multi-head attention with rotary position embedding, split into
//! a prefill phase over the whole prompt and a per-token decode phase
//! against the KV cache. Grouped-query attention is supported: query
//! heads sharing a KV head have their observation-window attention rows
//! summed into that KV head before voting.

use crate::error::{Result, SnapError};
use crate::tensor::{dot, Element, Tensor};

/// Attention geometry. `num_kv_heads` must divide `num_heads`; with the
/// two equal this is plain multi-head attention.
#[derive(Debug, Clone)]
pub struct AttentionConfig {
    pub num_heads: usize,
    pub num_kv_heads: usize,
    pub head_dim: usize,
    pub rope_base: f64,
}

impl AttentionConfig {
    pub fn new(num_heads: usize, num_kv_heads: usize, head_dim: usize) -> Result<Self> {
        let cfg = Self {
            num_heads,
            num_kv_heads,
            head_dim,
            rope_base: 10000.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || self.num_kv_heads == 0 {
            return Err(SnapError::Config("head counts must be positive".into()));
        }
        if self.num_heads % self.num_kv_heads != 0 {
            return Err(SnapError::Config(format!(
                "num_heads {} not divisible by num_kv_heads {}",
                self.num_heads, self.num_kv_heads
            )));
        }
        if self.head_dim == 0 || self.head_dim % 2 != 0 {
            return Err(SnapError::Config(format!(
                "head_dim must be positive and even (rotary pairs dims), got {}",
                self.head_dim
            )));
        }
        if !(self.rope_base > 0.0) {
            return Err(SnapError::Config("rope_base must be positive".into()));
        }
        Ok(())
    }

    /// Query heads per KV head.
    pub fn group_size(&self) -> usize {
        self.num_heads / self.num_kv_heads
    }
}

/// Per-layer key/value sequences with position metadata. Keys are stored
/// post-rotation, values raw. Positions are tracked per KV head because
/// compression selects indices per head; before compression every head
/// carries the same list.
#[derive(Debug, Clone, PartialEq)]
pub struct KvCache<T> {
    num_kv_heads: usize,
    head_dim: usize,
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
    positions: Vec<Vec<usize>>,
}

impl<T: Element> KvCache<T> {
    pub fn new(num_kv_heads: usize, head_dim: usize) -> Self {
        Self {
            num_kv_heads,
            head_dim,
            keys: vec![Vec::new(); num_kv_heads],
            values: vec![Vec::new(); num_kv_heads],
            positions: vec![Vec::new(); num_kv_heads],
        }
    }

    pub fn num_kv_heads(&self) -> usize {
        self.num_kv_heads
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn seq_len(&self) -> usize {
        self.positions[0].len()
    }

    /// Rotated keys of one KV head, `[seq_len * head_dim]` row-major.
    pub fn keys_of(&self, head: usize) -> &[T] {
        &self.keys[head]
    }

    pub fn values_of(&self, head: usize) -> &[T] {
        &self.values[head]
    }

    /// Original absolute positions kept by one KV head.
    pub fn positions_of(&self, head: usize) -> &[usize] {
        &self.positions[head]
    }

    fn last_position(&self) -> Option<usize> {
        self.positions.iter().filter_map(|p| p.last().copied()).max()
    }

    /// Appends one entry to every KV head. `k` and `v` are laid out
    /// `[num_kv_heads, head_dim]`; `k` must already be rotated.
    pub fn append(&mut self, position: usize, k: &[T], v: &[T]) -> Result<()> {
        if k.len() != self.num_kv_heads * self.head_dim || v.len() != k.len() {
            return Err(SnapError::Shape(format!(
                "append expects {} values per tensor, got k={} v={}",
                self.num_kv_heads * self.head_dim,
                k.len(),
                v.len()
            )));
        }
        if let Some(last) = self.last_position() {
            if position <= last {
                return Err(SnapError::Config(format!(
                    "non-monotone position: {position} after {last}"
                )));
            }
        }
        for h in 0..self.num_kv_heads {
            self.keys[h].extend_from_slice(&k[h * self.head_dim..(h + 1) * self.head_dim]);
            self.values[h].extend_from_slice(&v[h * self.head_dim..(h + 1) * self.head_dim]);
            self.positions[h].push(position);
        }
        Ok(())
    }

    /// Builds a cache from full-prompt tensors `[num_kv_heads, seq, head_dim]`
    /// (keys already rotated) with positions `0..seq`.
    pub fn from_prompt(keys: &Tensor<T>, values: &Tensor<T>) -> Result<Self> {
        if keys.shape() != values.shape() || keys.rank() != 3 {
            return Err(SnapError::Shape(format!(
                "cache tensors must be rank-3 and equal: {:?} vs {:?}",
                keys.shape(),
                values.shape()
            )));
        }
        let (kvh, seq, hd) = (keys.shape()[0], keys.shape()[1], keys.shape()[2]);
        let mut cache = Self::new(kvh, hd);
        for h in 0..kvh {
            let base = h * seq * hd;
            cache.keys[h].extend_from_slice(&keys.data()[base..base + seq * hd]);
            cache.values[h].extend_from_slice(&values.data()[base..base + seq * hd]);
            cache.positions[h] = (0..seq).collect();
        }
        Ok(cache)
    }

    /// New cache keeping, per head, the rows at `kept[h]` (indices into the
    /// current sequence, strictly increasing). Pure copy: no recompute.
    pub fn gather(&self, kept: &[Vec<usize>]) -> Result<Self> {
        if kept.len() != self.num_kv_heads {
            return Err(SnapError::Shape(format!(
                "gather expects {} index lists, got {}",
                self.num_kv_heads,
                kept.len()
            )));
        }
        let len0 = kept[0].len();
        let mut out = Self::new(self.num_kv_heads, self.head_dim);
        for h in 0..self.num_kv_heads {
            if kept[h].len() != len0 {
                return Err(SnapError::Shape(
                    "gather index lists must have equal length (rectangular cache)".into(),
                ));
            }
            for &i in &kept[h] {
                if i >= self.seq_len() {
                    return Err(SnapError::Shape(format!(
                        "gather index {i} out of range (seq_len {})",
                        self.seq_len()
                    )));
                }
                out.keys[h]
                    .extend_from_slice(&self.keys[h][i * self.head_dim..(i + 1) * self.head_dim]);
                out.values[h]
                    .extend_from_slice(&self.values[h][i * self.head_dim..(i + 1) * self.head_dim]);
                out.positions[h].push(self.positions[h][i]);
            }
        }
        Ok(out)
    }

    /// Exact cache footprint: entries x 2 (K and V) x heads x head_dim x
    /// bytes per element, for this single layer.
    pub fn bytes(&self) -> usize {
        self.seq_len() * 2 * self.num_kv_heads * self.head_dim * T::PRECISION.bytes()
    }
}

/// Rotates each (2i, 2i+1) dimension pair of `x` (`[heads, seq, head_dim]`)
/// by `positions[t] * rope_base^(-2i/head_dim)`. Norm-preserving.
pub fn apply_rope<T: Element>(
    x: &Tensor<T>,
    positions: &[usize],
    rope_base: f64,
) -> Result<Tensor<T>> {
    if x.rank() != 3 {
        return Err(SnapError::Shape(format!(
            "apply_rope expects [heads, seq, head_dim], got {:?}",
            x.shape()
        )));
    }
    let (heads, seq, hd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if positions.len() != seq {
        return Err(SnapError::Shape(format!(
            "apply_rope: {} positions for seq len {seq}",
            positions.len()
        )));
    }
    if hd % 2 != 0 {
        return Err(SnapError::Shape(format!("head_dim {hd} must be even")));
    }
    let mut out = x.clone();
    let data = out.data_mut();
    for h in 0..heads {
        for t in 0..seq {
            let base = (h * seq + t) * hd;
            let pos = positions[t] as f64;
            for i in 0..hd / 2 {
                let angle = pos * rope_base.powf(-((2 * i) as f64) / hd as f64);
                let (sin, cos) = angle.sin_cos();
                let (sin, cos) = (T::from_f64(sin), T::from_f64(cos));
                let a = data[base + 2 * i];
                let b = data[base + 2 * i + 1];
                data[base + 2 * i] = a * cos - b * sin;
                data[base + 2 * i + 1] = a * sin + b * cos;
            }
        }
    }
    out.check_finite("apply_rope")?;
    Ok(out)
}

/// Result of a prefill pass.
#[derive(Debug, Clone)]
pub struct PrefillOutput<T> {
    /// Attention output, `[num_heads, L_prompt, head_dim]`.
    pub output: Tensor<T>,
    /// Cache of rotated keys and raw values, positions `0..L_prompt`.
    pub cache: KvCache<T>,
    /// Softmax-normalized attention of the last `obs_window` queries over
    /// all prompt keys under the causal mask,
    /// `[num_kv_heads, obs_window, L_prompt]`. Query heads in a GQA group
    /// are summed into their shared KV head's row.
    pub obs_weights: Tensor<T>,
}

/// Causal attention over the full prompt. `q` is
/// `[num_heads, L, head_dim]`, `k`/`v` are `[num_kv_heads, L, head_dim]`,
/// all unrotated; rotation happens inside at positions `0..L`.
pub fn prefill<T: Element>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    config: &AttentionConfig,
    obs_window: usize,
) -> Result<PrefillOutput<T>> {
    config.validate()?;
    check_qkv_shapes(q, k, v, config)?;
    let l = q.shape()[1];
    if obs_window == 0 || obs_window > l {
        return Err(SnapError::Config(format!(
            "obs_window {obs_window} out of range for prompt length {l}"
        )));
    }
    let hd = config.head_dim;
    let positions: Vec<usize> = (0..l).collect();
    let q_rot = apply_rope(q, &positions, config.rope_base)?;
    let k_rot = apply_rope(k, &positions, config.rope_base)?;

    let mut output = Tensor::zeros(vec![config.num_heads, l, hd]);
    let mut obs = Tensor::zeros(vec![config.num_kv_heads, obs_window, l]);
    let scale = T::from_f64(1.0 / (hd as f64).sqrt());
    let obs_start = l - obs_window;
    let group = config.group_size();

    let mut weights = vec![T::zero(); l];
    for h in 0..config.num_heads {
        let g = h / group;
        let kh = &k_rot.data()[g * l * hd..(g + 1) * l * hd];
        let vh = &v.data()[g * l * hd..(g + 1) * l * hd];
        for t in 0..l {
            let qrow = &q_rot.data()[(h * l + t) * hd..(h * l + t + 1) * hd];
            // Causal support 0..=t only; masked columns are never computed.
            let w = &mut weights[..t + 1];
            let mut max = T::neg_infinity();
            for (s, ws) in w.iter_mut().enumerate() {
                let logit = dot(qrow, &kh[s * hd..(s + 1) * hd]) * scale;
                *ws = logit;
                if logit > max {
                    max = logit;
                }
            }
            if !max.is_finite() {
                return Err(SnapError::Numeric(format!(
                    "prefill: non-finite attention logit at head {h}, query {t}"
                )));
            }
            let mut denom = T::zero();
            for ws in w.iter_mut() {
                *ws = (*ws - max).exp();
                denom += *ws;
            }
            for ws in w.iter_mut() {
                *ws /= denom;
            }
            let orow = &mut output.data_mut()[(h * l + t) * hd..(h * l + t + 1) * hd];
            for (s, &ws) in w.iter().enumerate() {
                let vrow = &vh[s * hd..(s + 1) * hd];
                for (o, &vv) in orow.iter_mut().zip(vrow) {
                    *o += ws * vv;
                }
            }
            if t >= obs_start {
                let row = t - obs_start;
                let obase = (g * obs_window + row) * l;
                let odata = obs.data_mut();
                for (s, &ws) in w.iter().enumerate() {
                    odata[obase + s] += ws;
                }
            }
        }
    }
    output.check_finite("prefill output")?;
    obs.check_finite("prefill obs_weights")?;
    Ok(PrefillOutput {
        output,
        cache: KvCache::from_prompt(&k_rot, v)?,
        obs_weights: obs,
    })
}

/// One autoregressive step. `q`, `k_new`, `v_new` are
/// `[heads, 1, head_dim]` and unrotated; the new entry is appended at
/// `position` (which must exceed every cached position), then every query
/// head attends over its KV head's full cache. Consumes the cache and
/// returns the extended one.
pub fn decode_step<T: Element>(
    q: &Tensor<T>,
    k_new: &Tensor<T>,
    v_new: &Tensor<T>,
    mut cache: KvCache<T>,
    position: usize,
    config: &AttentionConfig,
) -> Result<(Tensor<T>, KvCache<T>)> {
    check_qkv_shapes(q, k_new, v_new, config)?;
    if q.shape()[1] != 1 {
        return Err(SnapError::Shape(format!(
            "decode_step expects a single query, got seq {}",
            q.shape()[1]
        )));
    }
    let hd = config.head_dim;
    let pos = [position];
    let q_rot = apply_rope(q, &pos, config.rope_base)?;
    let k_rot = apply_rope(k_new, &pos, config.rope_base)?;
    cache.append(position, k_rot.data(), v_new.data())?;

    let seq = cache.seq_len();
    let group = config.group_size();
    let scale = T::from_f64(1.0 / (hd as f64).sqrt());
    let mut output = Tensor::zeros(vec![config.num_heads, 1, hd]);
    let mut weights = vec![T::zero(); seq];
    for h in 0..config.num_heads {
        let g = h / group;
        let kh = cache.keys_of(g);
        let vh = cache.values_of(g);
        let qrow = &q_rot.data()[h * hd..(h + 1) * hd];
        let mut max = T::neg_infinity();
        for (s, ws) in weights.iter_mut().enumerate() {
            let logit = dot(qrow, &kh[s * hd..(s + 1) * hd]) * scale;
            *ws = logit;
            if logit > max {
                max = logit;
            }
        }
        if !max.is_finite() {
            return Err(SnapError::Numeric(format!(
                "decode_step: non-finite attention logit at head {h}"
            )));
        }
        let mut denom = T::zero();
        for ws in weights.iter_mut() {
            *ws = (*ws - max).exp();
            denom += *ws;
        }
        let orow = &mut output.data_mut()[h * hd..(h + 1) * hd];
        for (s, &ws) in weights.iter().enumerate() {
            let w = ws / denom;
            let vrow = &vh[s * hd..(s + 1) * hd];
            for (o, &vv) in orow.iter_mut().zip(vrow) {
                *o += w * vv;
            }
        }
    }
    output.check_finite("decode_step output")?;
    Ok((output, cache))
}

fn check_qkv_shapes<T: Element>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    config: &AttentionConfig,
) -> Result<()> {
    if q.rank() != 3 || k.rank() != 3 || v.rank() != 3 {
        return Err(SnapError::Shape(format!(
            "q/k/v must be rank 3, got {:?}/{:?}/{:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    if k.shape() != v.shape() {
        return Err(SnapError::Shape(format!(
            "k and v shapes differ: {:?} vs {:?}",
            k.shape(),
            v.shape()
        )));
    }
    if q.shape()[0] != config.num_heads
        || k.shape()[0] != config.num_kv_heads
        || q.shape()[1] != k.shape()[1]
        || q.shape()[2] != config.head_dim
        || k.shape()[2] != config.head_dim
    {
        return Err(SnapError::Shape(format!(
            "q {:?} / k {:?} inconsistent with {} heads, {} kv heads, head_dim {}",
            q.shape(),
            k.shape(),
            config.num_heads,
            config.num_kv_heads,
            config.head_dim
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    fn mha(heads: usize, hd: usize) -> AttentionConfig {
        AttentionConfig::new(heads, heads, hd).unwrap()
    }

    #[test]
    fn rope_zero_positions_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&[2, 3, 4], &mut rng);
        let y = apply_rope(&x, &[0, 0, 0], 10000.0).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn rope_head_dim2_is_one_radian_rotation() {
        // head_dim 2, position 1: the single pair rotates by exactly
        // 1 * 10000^0 = 1 radian. Check against a 2x2 rotation matrix.
        let x = Tensor::new(vec![1, 1, 2], vec![0.3, -0.7]).unwrap();
        let y = apply_rope(&x, &[1], 10000.0).unwrap();
        let (s, c) = 1.0f64.sin_cos();
        let expect = [0.3 * c - (-0.7) * s, 0.3 * s + (-0.7) * c];
        assert!((y.data()[0] - expect[0]).abs() < 1e-15);
        assert!((y.data()[1] - expect[1]).abs() < 1e-15);
    }

    #[test]
    fn rope_preserves_norms() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_tensor(&[2, 5, 8], &mut rng);
        let y = apply_rope(&x, &[0, 3, 7, 11, 100], 10000.0).unwrap();
        for h in 0..2 {
            for t in 0..5 {
                let a = &x.data()[(h * 5 + t) * 8..(h * 5 + t + 1) * 8];
                let b = &y.data()[(h * 5 + t) * 8..(h * 5 + t + 1) * 8];
                let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
                let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((na - nb).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rope_position_count_mismatch() {
        let x = Tensor::<f64>::zeros(vec![1, 3, 2]);
        assert!(matches!(
            apply_rope(&x, &[0, 1], 10000.0),
            Err(SnapError::Shape(_))
        ));
    }

    #[test]
    fn prefill_single_token_obs_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = mha(1, 4);
        let q = rand_tensor(&[1, 1, 4], &mut rng);
        let k = rand_tensor(&[1, 1, 4], &mut rng);
        let v = rand_tensor(&[1, 1, 4], &mut rng);
        let out = prefill(&q, &k, &v, &cfg, 1).unwrap();
        assert_eq!(out.obs_weights.shape(), &[1, 1, 1]);
        assert!((out.obs_weights.data()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn prefill_obs_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = mha(2, 6);
        let l = 9;
        let q = rand_tensor(&[2, l, 6], &mut rng);
        let k = rand_tensor(&[2, l, 6], &mut rng);
        let v = rand_tensor(&[2, l, 6], &mut rng);
        let out = prefill(&q, &k, &v, &cfg, 4).unwrap();
        for h in 0..2 {
            for r in 0..4 {
                let row = &out.obs_weights.data()[(h * 4 + r) * l..(h * 4 + r + 1) * l];
                let sum: f64 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-9, "h={h} r={r} sum={sum}");
            }
        }
    }

    #[test]
    fn prefill_causality() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = mha(2, 4);
        let l = 7;
        let q = rand_tensor(&[2, l, 4], &mut rng);
        let k = rand_tensor(&[2, l, 4], &mut rng);
        let v = rand_tensor(&[2, l, 4], &mut rng);
        // Observation window covering the whole prompt exposes every
        // attention row; future columns must carry zero weight.
        let out = prefill(&q, &k, &v, &cfg, l).unwrap();
        for h in 0..2 {
            for t in 0..l {
                for s in t + 1..l {
                    let w = out.obs_weights.data()[(h * l + t) * l + s];
                    assert!(w <= 1e-12, "head {h}: weight {w} of query {t} on key {s}");
                }
            }
        }
    }

    #[test]
    fn prefill_matches_sequential_decode() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cfg = mha(2, 4);
        let l = 8;
        let q = rand_tensor(&[2, l, 4], &mut rng);
        let k = rand_tensor(&[2, l, 4], &mut rng);
        let v = rand_tensor(&[2, l, 4], &mut rng);
        let full = prefill(&q, &k, &v, &cfg, 1).unwrap();

        let mut cache = KvCache::new(2, 4);
        for t in 0..l {
            let slice = |x: &Tensor<f64>| {
                let mut data = Vec::with_capacity(2 * 4);
                for h in 0..2 {
                    data.extend_from_slice(&x.data()[(h * l + t) * 4..(h * l + t + 1) * 4]);
                }
                Tensor::new(vec![2, 1, 4], data).unwrap()
            };
            let (out, next) =
                decode_step(&slice(&q), &slice(&k), &slice(&v), cache, t, &cfg).unwrap();
            cache = next;
            for h in 0..2 {
                for d in 0..4 {
                    let a = out.data()[h * 4 + d];
                    let b = full.output.data()[(h * l + t) * 4 + d];
                    assert!((a - b).abs() < 1e-9, "t={t} h={h} d={d}: {a} vs {b}");
                }
            }
        }
        assert_eq!(cache.seq_len(), l);
    }

    #[test]
    fn decode_single_cached_key_gets_full_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = mha(1, 4);
        let q = rand_tensor(&[1, 1, 4], &mut rng);
        let k = rand_tensor(&[1, 1, 4], &mut rng);
        let v = rand_tensor(&[1, 1, 4], &mut rng);
        let (out, cache) = decode_step(&q, &k, &v, KvCache::new(1, 4), 0, &cfg).unwrap();
        assert_eq!(cache.seq_len(), 1);
        // One cached key: attention output must equal its value row.
        for d in 0..4 {
            assert!((out.data()[d] - v.data()[d]).abs() < 1e-12);
        }
    }

    #[test]
    fn decode_rejects_non_monotone_position() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = mha(1, 4);
        let q = rand_tensor(&[1, 1, 4], &mut rng);
        let k = rand_tensor(&[1, 1, 4], &mut rng);
        let v = rand_tensor(&[1, 1, 4], &mut rng);
        let (_, cache) = decode_step(&q, &k, &v, KvCache::new(1, 4), 5, &cfg).unwrap();
        assert!(matches!(
            decode_step(&q, &k, &v, cache, 5, &cfg),
            Err(SnapError::Config(_))
        ));
    }

    #[test]
    fn logits_depend_only_on_relative_position() {
        // Shifting all positions by a constant must leave attention
        // outputs unchanged (rotary relative-position property).
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = mha(1, 8);
        let l = 5;
        let q = rand_tensor(&[1, l, 8], &mut rng);
        let k = rand_tensor(&[1, l, 8], &mut rng);
        let base: Vec<usize> = (0..l).collect();
        let shifted: Vec<usize> = (0..l).map(|t| t + 37).collect();
        let q0 = apply_rope(&q, &base, cfg.rope_base).unwrap();
        let k0 = apply_rope(&k, &base, cfg.rope_base).unwrap();
        let q1 = apply_rope(&q, &shifted, cfg.rope_base).unwrap();
        let k1 = apply_rope(&k, &shifted, cfg.rope_base).unwrap();
        for t in 0..l {
            for s in 0..l {
                let a = dot(
                    &q0.data()[t * 8..(t + 1) * 8],
                    &k0.data()[s * 8..(s + 1) * 8],
                );
                let b = dot(
                    &q1.data()[t * 8..(t + 1) * 8],
                    &k1.data()[s * 8..(s + 1) * 8],
                );
                assert!((a - b).abs() < 1e-9, "t={t} s={s}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn gqa_reduces_to_plain_attention_when_groups_are_trivial() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let l = 6;
        let q = rand_tensor(&[2, l, 4], &mut rng);
        let k = rand_tensor(&[2, l, 4], &mut rng);
        let v = rand_tensor(&[2, l, 4], &mut rng);
        let out = prefill(&q, &k, &v, &mha(2, 4), 3).unwrap();
        // With num_kv_heads == num_heads each obs row is one head's own
        // softmax row: unmasked columns sum to exactly 1.
        for h in 0..2 {
            for r in 0..3 {
                let row = &out.obs_weights.data()[(h * 3 + r) * l..(h * 3 + r + 1) * l];
                let sum: f64 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gqa_sums_group_rows_into_kv_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let l = 6;
        let cfg = AttentionConfig::new(4, 2, 4).unwrap();
        let q = rand_tensor(&[4, l, 4], &mut rng);
        let k = rand_tensor(&[2, l, 4], &mut rng);
        let v = rand_tensor(&[2, l, 4], &mut rng);
        let out = prefill(&q, &k, &v, &cfg, 2).unwrap();
        // Two query heads per group: each obs row carries mass 2.
        for g in 0..2 {
            for r in 0..2 {
                let row = &out.obs_weights.data()[(g * 2 + r) * l..(g * 2 + r + 1) * l];
                let sum: f64 = row.iter().sum();
                assert!((sum - 2.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn obs_window_larger_than_prompt_rejected() {
        let q = Tensor::<f64>::zeros(vec![1, 2, 4]);
        let k = Tensor::<f64>::zeros(vec![1, 2, 4]);
        let v = Tensor::<f64>::zeros(vec![1, 2, 4]);
        assert!(matches!(
            prefill(&q, &k, &v, &mha(1, 4), 3),
            Err(SnapError::Config(_))
        ));
    }
}
