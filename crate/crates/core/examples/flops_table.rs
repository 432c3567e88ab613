//! Relative cost of compressed reranking settings for a 42-layer,
//! 3584-wide model on 512-token inputs.
//!
//! cargo run --example flops_table

use icl_embed::reranker::{flops_estimate, RerankerConfig};

fn main() {
    let (n, d, len) = (42, 3584, 512);
    println!("{:>5} {:>6} {:>10} {:>8} {:>8}", "exit", "ratio", "merge at", "cost", "savings");
    for exit in [42, 34, 25, 16] {
        for (ratio, at) in [(1, None), (2, Some(8)), (4, Some(8)), (2, Some(2))] {
            let cfg = RerankerConfig {
                exit_layer: exit,
                merge_ratio: ratio,
                merge_layers: at.into_iter().collect(),
            };
            let cost = flops_estimate(&cfg, n, d, len);
            let at = at.map_or("-".to_string(), |l| l.to_string());
            println!("{exit:>5} {ratio:>6} {at:>10} {cost:>8.3} {:>8.3}", 1.0 - cost);
        }
    }
}
