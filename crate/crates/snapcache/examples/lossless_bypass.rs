//! The bypass guarantee: when the prompt already fits the capacity,
//! compressed generation is bit-identical to uncompressed generation.

use snapcache::bench::workload_tokens;
use snapcache::model::{init_model, Model, ModelConfig};
use snapcache::snapkv::CompressionConfig;
use snapcache::tensor::Precision;

fn main() -> snapcache::Result<()> {
    let config = ModelConfig {
        vocab: 64,
        d_model: 32,
        layers: 2,
        num_heads: 2,
        num_kv_heads: 2,
        head_dim: 16,
        mlp_hidden: 64,
        seed: 11,
        precision: Precision::F64,
    };
    let model: Model<f64> = init_model(&config)?;
    let prompt = workload_tokens(config.vocab, 40, 11);

    // capacity 64 >= prompt 40: the compressor steps aside
    let compression = CompressionConfig::with_capacity(8, 64).kernel(3);

    let plain = model.generate(&prompt, 12, None)?;
    let compressed = model.generate(&prompt, 12, Some(&compression))?;

    println!("plain:      {:?}", plain.tokens);
    println!("compressed: {:?}", compressed.tokens);
    assert_eq!(plain.tokens, compressed.tokens, "bypass must be lossless");
    println!("identical token streams, cache kept all {} prompt entries", prompt.len());

    // shrink the capacity below the prompt and the streams may diverge
    let tight = CompressionConfig::with_capacity(8, 24).kernel(3);
    let squeezed = model.generate(&prompt, 12, Some(&tight))?;
    println!("capacity 24: {:?}", squeezed.tokens);
    Ok(())
}
