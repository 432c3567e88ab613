//! Layerwise reranker: trains the final exit alone, then every exit with
//! self-distillation, and reports how far the earliest exit's candidate
//! distribution sits from the final one before and after.
//!
//! cargo run --release --example rerank_distill -- [steps] [seed]

use icl_embed::model::{Model, ModelConfig};
use icl_embed::reranker::{batch_scores, pairwise_accuracy, self_distill_loss, RerankTrainConfig, RerankTrainer};
use icl_embed::synthetic::rerank_batch;
use icl_embed::training::AdamConfig;

fn main() -> icl_embed::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let seed = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3);

    let batch = rerank_batch(seed, 16, 3);
    let model = Model::new(
        ModelConfig {
            d_model: 32,
            n_layers: 6,
            n_heads: 4,
            max_len: 128,
            ..Default::default()
        },
        seed,
    )?;
    let base = RerankTrainConfig {
        prompt: Some("Y?".into()),
        adam: AdamConfig { lr: 3e-3, ..Default::default() },
        seed,
        ..Default::default()
    };
    let prompt = base.prompt.clone().unwrap();
    let exits = base.exits.clone();
    let kl = |m: &Model| -> icl_embed::Result<(f64, f64)> {
        let s = batch_scores(m, &batch, &prompt, &exits)?;
        Ok((self_distill_loss(&s[..1], &s[s.len() - 1], 1.0)?, pairwise_accuracy(&s[s.len() - 1])))
    };

    let mut teacher = RerankTrainer::new(
        model,
        RerankTrainConfig {
            exits: vec![*exits.last().unwrap()],
            self_distill: false,
            ..base.clone()
        },
    )?;
    for _ in 0..steps {
        teacher.train_step(&batch)?;
    }
    let (before, acc) = kl(&teacher.model)?;
    println!("final exit only: KL(final || exit {}) {before:.4}  accuracy {acc:.3}", exits[0]);

    let mut layerwise = RerankTrainer::new(teacher.model, base)?;
    for _ in 0..steps {
        layerwise.train_step(&batch)?;
    }
    let (after, acc) = kl(&layerwise.model)?;
    println!("layerwise + distill: KL(final || exit {}) {after:.4}  accuracy {acc:.3}", exits[0]);
    println!("relative drop {:.1}%", 100.0 * (1.0 - after / before));
    Ok(())
}
