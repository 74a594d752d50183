//! Selection quality on synthetic attention with known ground truth:
//! plant important positions, drown them in Dirichlet noise, and measure
//! how much of the plant the vote recovers as the planted mass varies.

use snapcache::snapkv::{select_topk, vote};
use snapcache::synth::{planted_attention, recovery_rate, PlantedSpec};
use snapcache::tensor::PoolMode;

fn main() -> snapcache::Result<()> {
    println!("planted_mass  mean_recovery");
    // a single voting row over a wide prefix, so weakly planted positions
    // genuinely compete with the noise floor
    for mass in [0.02, 0.05, 0.1, 0.2, 0.4, 0.8] {
        let mut acc = 0.0;
        let seeds = 50;
        for seed in 0..seeds {
            let spec = PlantedSpec {
                prefix_len: 256,
                obs_len: 1,
                heads: 2,
                planted: vec![
                    vec![9, 40, 77, 130, 166, 201, 220, 240],
                    vec![3, 52, 101, 140, 180, 210, 230, 250],
                ],
                planted_mass: mass,
                cluster_width: 1,
                seed,
            };
            let attn = planted_attention::<f64>(&spec)?;
            let votes = vote(&attn.tensor, spec.obs_len)?;
            let selected = select_topk(&votes, 8, 1, PoolMode::Max)?;
            acc += recovery_rate(&selected, &attn.truth);
        }
        println!("{mass:<13} {:.4}", acc / seeds as f64);
    }
    Ok(())
}
