//! Hit rate and window-overlap on a real (untrained) model: teacher-force
//! a prompt plus continuation, compare the attention the generated tokens
//! actually pay against what the observation window voted for.

use snapcache::bench::workload_tokens;
use snapcache::metrics::{hit_rate, overlap_csv, threshold_mask, vote_mask, window_overlap_profile};
use snapcache::model::{init_model, Model, ModelConfig};
use snapcache::snapkv::{select_topk, vote};
use snapcache::tensor::{PoolMode, Precision, Tensor};

fn main() -> snapcache::Result<()> {
    let config = ModelConfig {
        vocab: 128,
        d_model: 64,
        layers: 2,
        num_heads: 2,
        num_kv_heads: 2,
        head_dim: 32,
        mlp_hidden: 128,
        seed: 5,
        precision: Precision::F64,
    };
    let model: Model<f64> = init_model(&config)?;

    let prompt_len = 96;
    let gen_len = 16;
    let window = 8;
    let k = 16;
    let prefix = prompt_len - window;
    let prompt = workload_tokens(config.vocab, prompt_len, 5);
    let maps = model.attention_maps(&prompt, gen_len)?;

    for (layer, map) in maps.iter().enumerate() {
        // votes from the observation window
        let total = map.shape()[1];
        let mut obs = Tensor::<f64>::zeros(vec![2, window, prompt_len]);
        for h in 0..2 {
            for (r, t) in (prompt_len - window..prompt_len).enumerate() {
                for s in 0..prompt_len {
                    obs.data_mut()[(h * window + r) * prompt_len + s] =
                        map.data()[(h * total + t) * total + s];
                }
            }
        }
        let votes = vote(&obs, window)?;
        let selected = select_topk(&votes, k, 5, PoolMode::Max)?;
        let selected_mask = vote_mask(&selected, prefix, 2)?;

        // what generation actually attended to, averaged over its steps
        let mut cur = Tensor::<f64>::zeros(vec![2, prefix]);
        for h in 0..2 {
            for t in prompt_len..prompt_len + gen_len {
                for s in 0..prefix {
                    cur.data_mut()[h * prefix + s] +=
                        map.data()[(h * total + t) * total + s] / gen_len as f64;
                }
            }
        }
        let important = threshold_mask(&cur, 0.01)?;
        let h = hit_rate(&important, &selected_mask)?;
        println!(
            "layer {layer}: hit rate {:.3}{}",
            h.value,
            if h.vacuous { " (vacuous: nothing above theta)" } else { "" }
        );
    }

    let rows = window_overlap_profile(&maps, prompt_len, gen_len, window, k)?;
    println!("\noverlap of each prompt window's vote with generation's needs:");
    print!("{}", overlap_csv(&rows));
    Ok(())
}
