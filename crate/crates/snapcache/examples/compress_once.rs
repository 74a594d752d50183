//! One full compression pass, no model: prefill random q/k/v through
//! causal attention, let the observation window vote, and print which
//! prefix positions survive per head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snapcache::attention::{self, AttentionConfig};
use snapcache::snapkv::{snap, CompressionConfig};
use snapcache::tensor::Tensor;

fn main() -> snapcache::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let config = AttentionConfig::new(2, 2, 16)?;
    let prompt_len = 48;

    let mut draw = |heads: usize| -> snapcache::Result<Tensor<f64>> {
        let data = (0..heads * prompt_len * 16)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        Tensor::new(vec![heads, prompt_len, 16], data)
    };
    let q = draw(2)?;
    let k = draw(2)?;
    let v = draw(2)?;

    let compression = CompressionConfig::with_capacity(8, 24).kernel(5);
    let out = attention::prefill(&q, &k, &v, &config, compression.window_size)?;
    println!("cache before: {} entries per head", out.cache.seq_len());

    let result = snap(out.cache, &out.obs_weights, &compression)?;
    println!("cache after:  {} entries per head", result.cache.seq_len());

    let selected = result.selected.expect("prompt exceeds capacity, so no bypass");
    for h in 0..2 {
        println!("head {h} kept prefix positions: {:?}", selected.head(h));
    }
    println!(
        "positions {}..{} (the observation window) are always kept",
        prompt_len - compression.window_size,
        prompt_len
    );
    Ok(())
}
