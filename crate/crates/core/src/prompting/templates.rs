use serde::{Deserialize, Serialize};

use super::tokenizer::{self, INSTRUCT_GLYPH, QUERY_GLYPH, RESPONSE_GLYPH};
use super::truncate::{truncate, LengthBudget};
use crate::error::Result;

/// Suffix appended to passages when the passage-side prompt is enabled.
pub const PASSAGE_PROMPT: &str = "\nSummarize the above passage: ";

/// Separator between consecutive few-shot blocks.
pub const EXAMPLE_SEPARATOR: &str = "\n\n";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Retrieval,
    Reranking,
    Classification,
    Clustering,
    Sts,
}

impl TaskKind {
    /// In-batch negatives are used for retrieval tasks only.
    pub fn uses_in_batch_negatives(self) -> bool {
        self == TaskKind::Retrieval
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub query: String,
    pub response: String,
}

impl ExampleRecord {
    pub fn new(query: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            query: query.into(),
            response: response.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub task_definition: String,
    pub task_kind: TaskKind,
    /// Predetermined training examples for the fixed-example mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_examples: Option<Vec<ExampleRecord>>,
    /// Examples prepended to every query at few-shot evaluation time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_examples: Option<Vec<ExampleRecord>>,
}

impl TaskSpec {
    pub fn new(name: impl Into<String>, task_definition: impl Into<String>, task_kind: TaskKind) -> Self {
        Self {
            name: name.into(),
            task_definition: task_definition.into(),
            task_kind,
            fixed_examples: None,
            eval_examples: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptRole {
    QuerySide,
    PassageSide,
    RerankPair,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub text: String,
    pub role: PromptRole,
    pub shot_count: usize,
}

impl RenderedPrompt {
    pub fn passage(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            role: PromptRole::PassageSide,
            shot_count: 0,
        }
    }
}

/// `⟨Instruct⟩ {def}\n⟨query⟩ {q}\n⟨response⟩ {p}`
pub fn render_example(spec: &TaskSpec, ex: &ExampleRecord) -> String {
    format!(
        "{INSTRUCT_GLYPH} {}\n{QUERY_GLYPH} {}\n{RESPONSE_GLYPH} {}",
        spec.task_definition, ex.query, ex.response
    )
}

fn render_query_text(spec: &TaskSpec, q: &str, examples: &[ExampleRecord]) -> String {
    let mut text = String::new();
    for ex in examples {
        text.push_str(&render_example(spec, ex));
        text.push_str(EXAMPLE_SEPARATOR);
    }
    text.push_str(&format!(
        "{INSTRUCT_GLYPH} {}\n{QUERY_GLYPH} {q}\n{RESPONSE_GLYPH}",
        spec.task_definition
    ));
    text
}

/// Few-shot query prompt: the examples in order, then the instruction and
/// query, ending at the response marker. Zero examples is the zero-shot form.
pub fn render_query(
    spec: &TaskSpec,
    q: &str,
    examples: &[ExampleRecord],
    budget: &LengthBudget,
) -> Result<RenderedPrompt> {
    let full = render_query_text(spec, q, examples);
    let seq = tokenizer::tokenize(&full).wrap_for_encoder();
    let cut = truncate(&seq, budget, PromptRole::QuerySide)?;
    let text = if cut == seq {
        full
    } else {
        let inner = tokenizer::TokenSeq::new(cut.ids[1..cut.ids.len() - 1].to_vec());
        tokenizer::detokenize(&inner)?
    };
    let shot_count = cut
        .ids
        .iter()
        .filter(|&&id| id == tokenizer::INSTRUCT)
        .count()
        .saturating_sub(1);
    Ok(RenderedPrompt {
        text,
        role: PromptRole::QuerySide,
        shot_count,
    })
}

pub fn render_passage(p: &str, use_passage_prompt: bool) -> RenderedPrompt {
    let text = if use_passage_prompt {
        format!("{p}{PASSAGE_PROMPT}")
    } else {
        p.to_string()
    };
    RenderedPrompt::passage(text)
}

/// `A: {q}\nB: {p}\n{prompt}`
pub fn render_rerank_pair(q: &str, p: &str, prompt: &str) -> RenderedPrompt {
    RenderedPrompt {
        text: format!("A: {q}\nB: {p}\n{prompt}"),
        role: PromptRole::RerankPair,
        shot_count: 0,
    }
}
