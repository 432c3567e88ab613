//! Encodes a small corpus, runs exact cosine top-k search and scores the
//! rankings with nDCG and Recall against graded judgments.
//!
//! cargo run --release --example encode_search

use icl_embed::eval::{encode_corpus, ndcg_at_k, recall_at_k, search_top_k, Corpus, QRels, TextRecord};
use icl_embed::model::{Model, ModelConfig};
use icl_embed::prompting::{render_query, LengthBudget, TaskKind, TaskSpec};

fn main() -> icl_embed::Result<()> {
    let model = Model::new(
        ModelConfig {
            d_model: 32,
            n_layers: 2,
            ..Default::default()
        },
        1,
    )?;
    let docs = [
        ("d1", "The mitochondria is the powerhouse of the cell."),
        ("d2", "Paris is the capital of France."),
        ("d3", "Cells produce energy in mitochondria via respiration."),
        ("d4", "The Eiffel Tower stands in Paris."),
    ];
    let corpus = Corpus::new(docs.iter().map(|(id, t)| TextRecord::new(*id, *t)).collect())?;
    let encoded = encode_corpus(&corpus, &model, false)?;
    println!("encoded {} documents at width {}", encoded.len(), encoded.dim().unwrap_or(0));

    let mut qrels = QRels::new();
    qrels.insert("q1", "d1", 2);
    qrels.insert("q1", "d3", 1);
    let task = TaskSpec::new("bio", "Retrieve passages that answer the question", TaskKind::Retrieval);
    let prompt = render_query(&task, "where do cells make energy?", &[], &LengthBudget::default())?;
    let hits = search_top_k(&model.encode(&prompt)?, &encoded, 3)?;
    for (rank, h) in hits.iter().enumerate() {
        println!("{:>2}. {}  {:+.4}", rank + 1, h.doc_id, h.score);
    }
    // An untrained model ranks arbitrarily; the metrics still apply.
    println!("nDCG@3   {:.4}", ndcg_at_k(&hits, &qrels, "q1", 3)?);
    println!("Recall@3 {:.4}", recall_at_k(&hits, &qrels, "q1", 3)?);
    Ok(())
}
