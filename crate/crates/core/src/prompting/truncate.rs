//! Length budgets for encoder inputs.
//!
//! Order of application on the query side: example fields are capped
//! individually, then whole examples are dropped from the front, then the
//! query text loses its tail. The instruction and every retained marker are
//! never touched, and `[EOS]` always survives.

use serde::{Deserialize, Serialize};

use super::templates::PromptRole;
use super::tokenizer::{char_safe_cut, TokenSeq, BOS, EOS, INSTRUCT, QUERY, RESPONSE};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthBudget {
    pub per_example_query: usize,
    pub per_example_doc: usize,
    pub total_query_side: usize,
    pub passage_side: usize,
}

impl Default for LengthBudget {
    fn default() -> Self {
        Self {
            per_example_query: 256,
            per_example_doc: 256,
            total_query_side: 2048,
            passage_side: 512,
        }
    }
}

impl LengthBudget {
    pub fn validate(&self) -> Result<()> {
        let caps = [
            self.per_example_query,
            self.per_example_doc,
            self.total_query_side,
            self.passage_side,
        ];
        if caps.contains(&0) {
            return Err(Error::config("length caps must be positive"));
        }
        if self.total_query_side < self.per_example_query.max(self.per_example_doc) {
            return Err(Error::config(
                "total query-side cap must be at least the per-field caps",
            ));
        }
        Ok(())
    }

    /// Same budget with whole-sequence caps clamped to `max_len`.
    pub fn clamped(&self, max_len: usize) -> Self {
        Self {
            total_query_side: self.total_query_side.min(max_len),
            passage_side: self.passage_side.min(max_len),
            ..*self
        }
    }
}

/// Token ranges of one `⟨Instruct⟩ … ⟨query⟩ … ⟨response⟩ …` segment.
struct Segment {
    tokens: Vec<u32>,
    /// Query field range within `tokens`.
    query: Option<(usize, usize)>,
    /// Response field range within `tokens` (examples only).
    response: Option<(usize, usize)>,
}

impl Segment {
    /// Parses a segment. `is_example` segments end with a response field
    /// followed by the two-byte blank-line separator.
    fn parse(tokens: Vec<u32>, is_example: bool) -> Self {
        let q = tokens.iter().position(|&t| t == QUERY);
        let r = tokens.iter().position(|&t| t == RESPONSE);
        let (query, response) = match (q, r) {
            (Some(q), Some(r)) if q < r && r >= q + 2 => {
                // "⟨query⟩ {q}\n⟨response⟩"
                let qs = (q + 2).min(r - 1);
                let query = Some((qs, r - 1));
                let response = if is_example {
                    let end = if tokens.ends_with(&[b'\n' as u32, b'\n' as u32]) {
                        tokens.len() - 2
                    } else {
                        tokens.len()
                    };
                    let start = (r + 2).min(end);
                    Some((start, end))
                } else {
                    None
                };
                (query, response)
            }
            _ => (None, None),
        };
        Self {
            tokens,
            query,
            response,
        }
    }

    fn cut_field(&mut self, which: Field, cap: usize) {
        let range = match which {
            Field::Query => &mut self.query,
            Field::Response => &mut self.response,
        };
        let Some((s, e)) = *range else { return };
        let len = e - s;
        if len <= cap {
            return;
        }
        let keep = char_safe_cut(&self.tokens[s..e], cap);
        let removed = len - keep;
        self.tokens.drain(s + keep..e);
        *range = Some((s, s + keep));
        // A response precedes nothing we track; a query precedes the response.
        if which == Field::Query {
            if let Some((rs, re)) = self.response {
                self.response = Some((rs - removed, re - removed));
            }
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Field {
    Query,
    Response,
}

/// Applies the budget for `role` to an encoder input (`[BOS] … [EOS]`).
///
/// Idempotent: a sequence already within budget is returned unchanged.
pub fn truncate(seq: &TokenSeq, budget: &LengthBudget, role: PromptRole) -> Result<TokenSeq> {
    let ids = &seq.ids;
    let has_bos = ids.first() == Some(&BOS);
    let has_eos = ids.len() > has_bos as usize && ids.last() == Some(&EOS);
    let body_start = has_bos as usize;
    let body_end = ids.len() - has_eos as usize;
    let frame = has_bos as usize + has_eos as usize;
    let body = &ids[body_start..body_end];
    let is_template = body.contains(&INSTRUCT);

    let out_body = if role == PromptRole::QuerySide && is_template {
        truncate_query_body(body, budget, frame)?
    } else {
        let cap = match role {
            PromptRole::QuerySide => budget.total_query_side,
            _ => budget.passage_side,
        };
        if cap < frame {
            return Err(Error::Budget {
                cap,
                skeleton: frame,
            });
        }
        let room = cap - frame;
        if body.len() <= room {
            body.to_vec()
        } else {
            body[..char_safe_cut(body, room)].to_vec()
        }
    };

    if out_body.len() == body.len() {
        return Ok(seq.clone());
    }
    let mut ids = Vec::with_capacity(out_body.len() + frame);
    let mut pad_mask = Vec::with_capacity(out_body.len() + frame);
    if has_bos {
        ids.push(BOS);
        pad_mask.push(false);
    }
    // The body mask is rebuilt from ids: truncation only happens on unpadded input.
    pad_mask.extend(out_body.iter().map(|&t| t == super::tokenizer::PAD));
    ids.extend(out_body);
    if has_eos {
        ids.push(EOS);
        pad_mask.push(false);
    }
    TokenSeq::with_mask(ids, pad_mask)
}

fn truncate_query_body(body: &[u32], budget: &LengthBudget, frame: usize) -> Result<Vec<u32>> {
    let starts: Vec<usize> = body
        .iter()
        .enumerate()
        .filter(|(_, &t)| t == INSTRUCT)
        .map(|(i, _)| i)
        .collect();
    let prefix = &body[..starts[0]];
    let mut segments: Vec<Segment> = starts
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let e = starts.get(k + 1).copied().unwrap_or(body.len());
            Segment::parse(body[s..e].to_vec(), k + 1 < starts.len())
        })
        .collect();
    let mut query_seg = segments.pop().expect("at least one instruct marker");

    let query_len = query_seg.query.map_or(0, |(s, e)| e - s);
    let skeleton = frame + prefix.len() + query_seg.tokens.len() - query_len;
    let cap = budget.total_query_side;
    if cap < skeleton {
        return Err(Error::Budget { cap, skeleton });
    }

    for seg in &mut segments {
        seg.cut_field(Field::Query, budget.per_example_query);
        seg.cut_field(Field::Response, budget.per_example_doc);
    }

    let total = |segs: &[Segment], q: &Segment| {
        frame + prefix.len() + segs.iter().map(|s| s.tokens.len()).sum::<usize>() + q.tokens.len()
    };
    let mut first = 0;
    while total(&segments[first..], &query_seg) > cap && first < segments.len() {
        first += 1;
    }
    let over = total(&segments[first..], &query_seg).saturating_sub(cap);
    if over > 0 {
        query_seg.cut_field(Field::Query, query_len - over);
    }

    let mut out = prefix.to_vec();
    for seg in &segments[first..] {
        out.extend_from_slice(&seg.tokens);
    }
    out.extend_from_slice(&query_seg.tokens);
    Ok(out)
}
