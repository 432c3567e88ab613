//! Multiply-accumulate cost model for compressed reranking.
//!
//! A layer over `L` live positions at width `d` costs `4 L d^2 + 2 L^2 d`
//! for attention and `8 L d^2` for the MLP. Embeddings, norms and the head
//! are not counted.

use super::RerankerConfig;

/// MACs of one block over `len` positions.
pub fn layer_macs(len: u64, d_model: u64) -> u128 {
    let (l, d) = (len as u128, d_model as u128);
    4 * l * d * d + 2 * l * l * d + 8 * l * d * d
}

/// MACs of a compressed forward: layers `1..=exit_layer`, with the live
/// length divided (rounding up) by the merge ratio after each merge layer
/// below the exit.
pub fn config_macs(cfg: &RerankerConfig, d_model: usize, seq_len: usize) -> u128 {
    let mut len = seq_len.max(1) as u64;
    let mut total = 0u128;
    for layer in 1..=cfg.exit_layer {
        total += layer_macs(len, d_model as u64);
        if cfg.merge_ratio > 1 && layer < cfg.exit_layer && cfg.merge_layers.contains(&layer) {
            len = len.div_ceil(cfg.merge_ratio as u64);
        }
    }
    total
}

/// Cost of `cfg` relative to the full-depth, uncompressed model.
pub fn flops_estimate(cfg: &RerankerConfig, n_layers: usize, d_model: usize, seq_len: usize) -> f64 {
    let full = n_layers as u128 * layer_macs(seq_len.max(1) as u64, d_model as u64);
    config_macs(cfg, d_model, seq_len) as f64 / full as f64
}
