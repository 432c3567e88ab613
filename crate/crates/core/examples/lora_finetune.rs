//! Fine-tunes low-rank adapters on the key-lookup task while the base
//! weights stay frozen, then merges them into plain weights.
//!
//! cargo run --release --example lora_finetune -- [steps]

use icl_embed::eval::{encode_corpus, evaluate_task};
use icl_embed::model::{LoraSpec, Model, ModelConfig};
use icl_embed::synthetic::{key_lookup, KeyLookupSizes};
use icl_embed::training::{AdamConfig, Dataset, ExampleMode, TrainConfig, Trainer};

fn main() -> icl_embed::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let fx = key_lookup(4, KeyLookupSizes::default());
    let data = Dataset::new(vec![fx.task.clone()], fx.train.clone())?;
    let base = Model::new(
        ModelConfig {
            d_model: 32,
            n_layers: 2,
            max_len: 256,
            ..Default::default()
        },
        4,
    )?;
    let mut trainer = Trainer::new(
        base.clone(),
        TrainConfig {
            steps,
            batch_size: 32,
            hard_negatives: 3,
            mode: ExampleMode::InBatch { n_max: 2 },
            adam: AdamConfig { lr: 3e-3, ..Default::default() },
            lora: Some(LoraSpec { rank: 4, alpha: 8.0 }),
            seed: 4,
            ..Default::default()
        },
    )?;
    let adapter_params: usize = trainer.model.adapters.iter().map(|a| a.a.numel() + a.b.numel()).sum();
    println!(
        "{} adapters, {adapter_params} trainable values over {} frozen",
        trainer.model.adapters.len(),
        trainer.model.weights.parameter_count()
    );
    trainer.fit(&data, |r| {
        if r.step % 50 == 0 {
            println!("step {:>4}  loss {:.4}", r.step, r.loss);
        }
    })?;
    assert_eq!(trainer.model.weights, base.weights);

    let merged = Model::from_parts(trainer.model.config.clone(), trainer.model.merged_weights()?)?;
    for (name, m) in [("base", &base), ("adapted", &trainer.model), ("merged", &merged)] {
        let enc = encode_corpus(&fx.corpus, m, false)?;
        let r = evaluate_task(m, &fx.task, &enc, &fx.queries, &fx.qrels, 0, &[1, 10])?;
        println!("{name:>8}  R@1 {:.3}  nDCG@10 {:.3}", r.recall_at(1).unwrap(), r.ndcg_at(10).unwrap());
    }
    Ok(())
}
