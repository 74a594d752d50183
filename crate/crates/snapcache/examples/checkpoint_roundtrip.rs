//! Deterministic persistence: save a model checkpoint and a token dump,
//! reload both, and show the generation replays bit-exactly.

use snapcache::model::{init_model, Model, ModelConfig};
use snapcache::synth::{dump_tokens, kv_lines_prompt, load_tokens};
use snapcache::tensor::Precision;

fn main() -> snapcache::Result<()> {
    let config = ModelConfig {
        vocab: 256,
        d_model: 32,
        layers: 2,
        num_heads: 2,
        num_kv_heads: 2,
        head_dim: 16,
        mlp_hidden: 64,
        seed: 99,
        precision: Precision::F64,
    };
    let model: Model<f64> = init_model(&config)?;

    let dir = std::env::temp_dir();
    let ckpt = dir.join("snapcache-example.ckpt");
    let toks = dir.join("snapcache-example.tokens");

    model.save_to_path(&ckpt)?;
    let (prompt, lines) = kv_lines_prompt(6, 99)?;
    dump_tokens(&prompt, std::fs::File::create(&toks)?)?;
    println!("{} key/value lines, prompt of {} tokens", lines.len(), prompt.len());

    let reloaded: Model<f64> = Model::load_from_path(&ckpt)?;
    let replayed = load_tokens(std::fs::File::open(&toks)?)?;
    assert_eq!(prompt, replayed, "token dump must round-trip");
    assert_eq!(
        model.weight_checksum(),
        reloaded.weight_checksum(),
        "checkpoint must round-trip bit-exactly"
    );

    let a = model.generate(&prompt, 8, None)?;
    let b = reloaded.generate(&replayed, 8, None)?;
    assert_eq!(a.tokens, b.tokens);
    println!("reloaded model replays the same continuation: {:?}", a.tokens);

    std::fs::remove_file(&ckpt).ok();
    std::fs::remove_file(&toks).ok();
    Ok(())
}
