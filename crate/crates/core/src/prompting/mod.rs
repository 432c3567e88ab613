//! Prompt templates, tokenization and length budgets.
//!
//! Canonical template bytes (`⟨…⟩` markers are single reserved tokens):
//!
//! ```text
//! example:  ⟨Instruct⟩ {task_definition}\n⟨query⟩ {q_i}\n⟨response⟩ {p_i}
//! query:    {example_1}\n\n … {example_n}\n\n⟨Instruct⟩ {task_definition}\n⟨query⟩ {q}\n⟨response⟩
//! passage:  {passage}                      (plain)
//!           {passage}\nSummarize the above passage:␠   (passage prompt on)
//! rerank:   A: {query}\nB: {passage}\n{prompt}
//! ```
//!
//! Encoder inputs are `[BOS] tokens [EOS]`.

mod templates;
pub mod tokenizer;
mod truncate;

pub use templates::{
    render_example, render_passage, render_query, render_rerank_pair, ExampleRecord, PromptRole,
    RenderedPrompt, TaskKind, TaskSpec, EXAMPLE_SEPARATOR, PASSAGE_PROMPT,
};
pub use tokenizer::{detokenize, tokenize, TokenSeq};
pub use truncate::{truncate, LengthBudget};

/// Rerank prompt for query-to-passage relevance.
pub const RERANK_QUERY_PASSAGE: &str = "Predict whether passage B contains an answer to query A.";
/// Rerank prompt for duplicate-question detection.
pub const RERANK_QUERY_QUERY: &str = "Predict whether queries A and B are asking the same thing.";
/// Rerank prompt for paraphrase detection between passages.
pub const RERANK_PASSAGE_PASSAGE: &str = "Predict whether passages A and B have the same meaning.";
/// Rerank prompt for argument retrieval.
pub const RERANK_ARGUMENT: &str =
    "Predict whether argument A and counterargument B express contradictory opinions.";

/// Default rerank prompt for a task kind.
pub fn default_rerank_prompt(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::Sts => RERANK_PASSAGE_PASSAGE,
        TaskKind::Reranking => RERANK_QUERY_QUERY,
        _ => RERANK_QUERY_PASSAGE,
    }
}

/// Tokenizes a rendered prompt as an encoder input and applies the budget
/// that matches its role.
pub fn encoder_input(prompt: &RenderedPrompt, budget: &LengthBudget) -> crate::Result<TokenSeq> {
    let seq = tokenize(&prompt.text).wrap_for_encoder();
    truncate(&seq, budget, prompt.role)
}
