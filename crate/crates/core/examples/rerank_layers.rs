//! Layerwise reranker scores for one pair, then the same pair under depth
//! and width compression with the estimated cost of each setting.
//!
//! cargo run --release --example rerank_layers

use icl_embed::model::{Model, ModelConfig};
use icl_embed::prompting::RERANK_QUERY_PASSAGE;
use icl_embed::reranker::{flops_estimate, layerwise_scores, rerank_score, RerankerConfig};

fn main() -> icl_embed::Result<()> {
    let model = Model::new(
        ModelConfig {
            d_model: 32,
            n_layers: 6,
            ..Default::default()
        },
        2,
    )?;
    let (q, p) = ("what is the boiling point of water", "Water boils at 100 degrees Celsius at sea level.");
    for s in layerwise_scores(q, p, RERANK_QUERY_PASSAGE, &model, &[1, 2, 3, 4, 5, 6])? {
        println!("exit {}  score {:+.5}", s.layer, s.score);
    }
    println!();
    let settings = [
        RerankerConfig::identity(6),
        RerankerConfig { exit_layer: 4, merge_ratio: 1, merge_layers: vec![] },
        RerankerConfig { exit_layer: 4, merge_ratio: 2, merge_layers: vec![2] },
        RerankerConfig { exit_layer: 6, merge_ratio: 4, merge_layers: vec![1] },
    ];
    for cfg in &settings {
        let score = rerank_score(q, p, RERANK_QUERY_PASSAGE, cfg, &model)?;
        let cost = flops_estimate(cfg, 6, 32, 512);
        println!(
            "exit {}  ratio {}  merge {:?}  score {:+.5}  cost {:.3}",
            cfg.exit_layer, cfg.merge_ratio, cfg.merge_layers, score, cost
        );
    }
    Ok(())
}
