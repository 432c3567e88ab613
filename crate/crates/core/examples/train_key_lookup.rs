//! Trains a small embedder on the synthetic key-lookup task and evaluates
//! it on held-out keys.
//!
//! cargo run --release --example train_key_lookup -- [steps] [seed]

use std::time::Instant;

use icl_embed::eval::{encode_corpus, evaluate_task};
use icl_embed::model::{Model, ModelConfig};
use icl_embed::synthetic::{key_lookup, KeyLookupSizes};
use icl_embed::training::{AdamConfig, Dataset, ExampleMode, TrainConfig, Trainer};

fn main() -> icl_embed::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let steps = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let seed = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(7);

    let fx = key_lookup(seed, KeyLookupSizes::default());
    let data = Dataset::new(vec![fx.task.clone()], fx.train.clone())?;
    let cfg = ModelConfig {
        d_model: 32,
        n_layers: 2,
        n_heads: 4,
        max_len: 256,
        ..Default::default()
    };
    let mut trainer = Trainer::new(
        Model::new(cfg, seed)?,
        TrainConfig {
            steps,
            batch_size: 64,
            hard_negatives: 3,
            mode: ExampleMode::InBatch { n_max: 2 },
            adam: AdamConfig { lr: 1e-3, ..Default::default() },
            seed,
            ..Default::default()
        },
    )?;
    let t0 = Instant::now();
    let curve = trainer.fit(&data, |r| {
        if r.step % 100 == 0 {
            println!("step {:>5}  loss {:.4}  ({:.1}s)", r.step, r.loss, t0.elapsed().as_secs_f64());
        }
    })?;
    println!("trained {} steps in {:.1}s", curve.len(), t0.elapsed().as_secs_f64());

    let enc = encode_corpus(&fx.corpus, &trainer.model, false)?;
    let report = evaluate_task(&trainer.model, &fx.task, &enc, &fx.queries, &fx.qrels, 0, &[1, 10])?;
    print!("{report}");
    Ok(())
}
