//! Trains the same embedder three ways (no examples, fixed examples,
//! in-batch examples) on a family of category-tagged lookup tasks and compares
//! zero-shot and 3-shot retrieval on a task never seen in training.
//!
//! cargo run --release --example icl_ablation -- [seeds] [steps] [d_model] [batch]

use icl_embed::eval::{encode_corpus, evaluate_task};
use icl_embed::model::{Model, ModelConfig};
use icl_embed::synthetic::category_family;
use icl_embed::training::{Dataset, ExampleMode, TrainConfig, Trainer};

fn main() -> icl_embed::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seeds: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let steps = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let d_model = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(32);
    let batch_size = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(32);

    let modes = [
        ("none", ExampleMode::None),
        ("fixed", ExampleMode::Fixed),
        ("in_batch", ExampleMode::InBatch { n_max: 3 }),
    ];
    let mut sums = [[0.0f64; 2]; 3];
    for seed in 0..seeds {
        let fam = category_family(seed, 8, 64, 32, 3);
        let data = Dataset::new(fam.train_tasks.clone(), fam.train.clone())?;
        let h = &fam.heldout;
        for (m, (name, mode)) in modes.iter().enumerate() {
            let cfg = ModelConfig {
                d_model,
                n_layers: 2,
                n_heads: 4,
                max_len: 256,
                ..Default::default()
            };
            let mut t = Trainer::new(
                Model::new(cfg, seed)?,
                TrainConfig {
                    steps,
                    batch_size,
                    hard_negatives: 3,
                    mode: *mode,
                    seed,
                    ..Default::default()
                },
            )?;
            t.fit(&data, |_| {})?;
            let enc = encode_corpus(&h.corpus, &t.model, false)?;
            let zero = evaluate_task(&t.model, &h.task, &enc, &h.queries, &h.qrels, 0, &[10])?;
            let three = evaluate_task(&t.model, &h.task, &enc, &h.queries, &h.qrels, 3, &[10])?;
            let (z, f) = (zero.ndcg_at(10).unwrap(), three.ndcg_at(10).unwrap());
            println!("seed {seed}  {name:>8}  zero-shot {z:.4}  3-shot {f:.4}");
            sums[m][0] += z;
            sums[m][1] += f;
        }
    }
    for (m, (name, _)) in modes.iter().enumerate() {
        println!(
            "mean {name:>8}  zero-shot {:.4}  3-shot {:.4}",
            sums[m][0] / seeds as f64,
            sums[m][1] / seeds as f64
        );
    }
    Ok(())
}
