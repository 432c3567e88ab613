//! Renders zero-shot, few-shot, passage and rerank prompts, shows their
//! token ids, and squeezes a long few-shot prompt into a tight budget.
//!
//! cargo run --example prompt_render

use icl_embed::prompting::tokenizer::{special_glyph, tokenize};
use icl_embed::prompting::{
    detokenize, encoder_input, render_passage, render_query, render_rerank_pair, ExampleRecord, LengthBudget,
    TaskKind, TaskSpec, RERANK_QUERY_PASSAGE,
};

fn show_ids(label: &str, text: &str) {
    let ids = tokenize(text).ids;
    let shown: Vec<String> = ids
        .iter()
        .take(24)
        .map(|&t| special_glyph(t).map_or(t.to_string(), str::to_string))
        .collect();
    println!("{label}: {} tokens [{} ...]", ids.len(), shown.join(" "));
}

fn main() -> icl_embed::Result<()> {
    let task = TaskSpec::new(
        "scifact",
        "Given a scientific claim, retrieve documents that support or refute the claim",
        TaskKind::Retrieval,
    );
    let examples = vec![
        ExampleRecord::new("aspirin lowers fever", "Aspirin inhibits prostaglandin synthesis ..."),
        ExampleRecord::new("bats carry rabies", "Rabies virus reservoirs include bats ..."),
    ];
    let budget = LengthBudget::default();

    let zero = render_query(&task, "vitamin d prevents colds", &[], &budget)?;
    println!("--- zero-shot query\n{}\n", zero.text);
    let few = render_query(&task, "vitamin d prevents colds", &examples, &budget)?;
    println!("--- {}-shot query\n{}\n", few.shot_count, few.text);
    println!("--- passage with prompt\n{}\n", render_passage("Vitamin D trial results ...", true).text);
    println!(
        "--- rerank pair\n{}\n",
        render_rerank_pair("vitamin d prevents colds", "Vitamin D trial results ...", RERANK_QUERY_PASSAGE).text
    );

    show_ids("few-shot ids", &few.text);
    let seq = encoder_input(&few, &budget)?;
    println!("encoder input adds [BOS] and [EOS]: {} tokens", seq.len());

    // A tight query-side cap drops whole examples before touching the query.
    let tight = LengthBudget {
        total_query_side: 300,
        per_example_query: 64,
        per_example_doc: 64,
        passage_side: 64,
    };
    let cut = render_query(&task, "vitamin d prevents colds", &examples, &tight)?;
    println!("\n--- under a 300-token cap: {} shot(s) kept\n{}", cut.shot_count, cut.text);
    assert_eq!(detokenize(&tokenize(&cut.text))?, cut.text);
    Ok(())
}
