//! Line-delimited JSON records, TSV qrels and the binary embedding file.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{QRels, TextRecord};
use crate::prompting::{ExampleRecord, TaskKind, TaskSpec};

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

fn parse_error(path: &str, line: usize, offset: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        offset,
        msg: msg.into(),
    }
}

/// Parses one JSON value per non-blank line. Errors carry the 1-based line
/// and the byte offset of the offending character in the whole text.
pub fn parse_jsonl<T: DeserializeOwned>(text: &str, path: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, line) in text.split_inclusive('\n').enumerate() {
        let body = line.trim_end_matches(['\n', '\r']);
        if !body.trim().is_empty() {
            match serde_json::from_str(body) {
                Ok(v) => out.push(v),
                Err(e) => {
                    let col = e.column().saturating_sub(1).min(body.len());
                    return Err(parse_error(path, i + 1, start + col, e.to_string()));
                }
            }
        }
        start += line.len();
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    parse_jsonl(&read(path)?, &path.display().to_string())
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> Result<String> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).map_err(|e| Error::Data(e.to_string()))?);
        s.push('\n');
    }
    Ok(s)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    write_bytes(path, to_jsonl(records)?.as_bytes())
}

/// One task registry line.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistryRecord {
    pub name: String,
    pub instruction: String,
    pub kind: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_examples: Option<Vec<ExampleRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_examples: Option<Vec<ExampleRecord>>,
}

impl From<RegistryRecord> for TaskSpec {
    fn from(r: RegistryRecord) -> Self {
        TaskSpec {
            name: r.name,
            task_definition: r.instruction,
            task_kind: r.kind,
            fixed_examples: r.fixed_examples,
            eval_examples: r.eval_examples,
        }
    }
}

impl From<&TaskSpec> for RegistryRecord {
    fn from(t: &TaskSpec) -> Self {
        RegistryRecord {
            name: t.name.clone(),
            instruction: t.task_definition.clone(),
            kind: t.task_kind,
            fixed_examples: t.fixed_examples.clone(),
            eval_examples: t.eval_examples.clone(),
        }
    }
}

pub fn parse_registry(text: &str, path: &str) -> Result<Vec<TaskSpec>> {
    let records: Vec<RegistryRecord> = parse_jsonl(text, path)?;
    let mut seen = HashSet::new();
    for r in &records {
        if !seen.insert(r.name.clone()) {
            return Err(Error::Data(format!("{path}: duplicate task `{}`", r.name)));
        }
        if r.instruction.trim().is_empty() {
            return Err(Error::Data(format!("{path}: task `{}` has an empty instruction", r.name)));
        }
    }
    Ok(records.into_iter().map(TaskSpec::from).collect())
}

pub fn read_registry(path: &Path) -> Result<Vec<TaskSpec>> {
    parse_registry(&read(path)?, &path.display().to_string())
}

pub fn write_registry(path: &Path, tasks: &[TaskSpec]) -> Result<()> {
    write_jsonl(path, &tasks.iter().map(RegistryRecord::from).collect::<Vec<_>>())
}

/// Corpus or query file: `{"id": .., "text": ..}` per line (`_id` accepted).
pub fn read_records(path: &Path) -> Result<Vec<TextRecord>> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Rec {
        #[serde(alias = "_id")]
        id: String,
        text: String,
    }
    let recs: Vec<Rec> = read_jsonl(path)?;
    Ok(recs.into_iter().map(|r| TextRecord::new(r.id, r.text)).collect())
}

/// `query-id <TAB> doc-id <TAB> grade` per line; a leading header whose
/// grade column is not a number is skipped.
pub fn parse_qrels(text: &str, path: &str) -> Result<QRels> {
    let mut q = QRels::new();
    let mut start = 0;
    for (i, line) in text.split_inclusive('\n').enumerate() {
        let body = line.trim_end_matches(['\n', '\r']);
        let line_start = start;
        start += line.len();
        if body.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = body.split('\t').collect();
        if fields.len() != 3 {
            let off = if fields.len() > 3 {
                fields[..3].iter().map(|f| f.len() + 1).sum::<usize>() - 1
            } else {
                body.len()
            };
            return Err(parse_error(
                path,
                i + 1,
                line_start + off,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        match fields[2].trim().parse::<u32>() {
            Ok(rel) => q.insert(fields[0], fields[1], rel),
            Err(_) if i == 0 => {}
            Err(_) => {
                let off = fields[0].len() + fields[1].len() + 2;
                return Err(parse_error(path, i + 1, line_start + off, "relevance grade is not an unsigned integer"));
            }
        }
    }
    Ok(q)
}

pub fn read_qrels(path: &Path) -> Result<QRels> {
    parse_qrels(&read(path)?, &path.display().to_string())
}

/// `{query, passage, layer, score}` output line of a rerank run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RerankRecord {
    pub query: String,
    pub passage: String,
    pub layer: usize,
    pub score: f64,
}

const EMB_MAGIC: &[u8; 4] = b"ICLV";

/// Embedding matrix file: magic `ICLV`, `u32` dimension, `u64` row count,
/// then row-major little-endian `f32` values.
pub fn encode_embeddings(dim: usize, rows: &[Vec<f32>]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + rows.len() * dim * 4);
    out.extend_from_slice(EMB_MAGIC);
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(rows.len() as u64).to_le_bytes());
    for (i, r) in rows.iter().enumerate() {
        if r.len() != dim {
            return Err(Error::shape(format!("embedding {i} has dimension {} not {dim}", r.len())));
        }
        for v in r {
            out.write_all(&v.to_le_bytes()).expect("vec write");
        }
    }
    Ok(out)
}

/// Inverse of [`encode_embeddings`]; rejects truncation and trailing bytes.
pub fn decode_embeddings(bytes: &[u8], path: &str) -> Result<(usize, Vec<Vec<f32>>)> {
    let bad = |offset: usize, msg: &str| parse_error(path, 0, offset, msg);
    if bytes.len() < 16 {
        return Err(bad(bytes.len(), "truncated header"));
    }
    if &bytes[..4] != EMB_MAGIC {
        return Err(bad(0, "bad magic"));
    }
    let dim = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let n = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let need = n
        .checked_mul(dim)
        .and_then(|x| x.checked_mul(4))
        .and_then(|x| x.checked_add(16))
        .ok_or_else(|| bad(8, "row count overflows"))?;
    if bytes.len() < need {
        return Err(bad(bytes.len(), "truncated embedding data"));
    }
    if bytes.len() > need {
        return Err(bad(need, "trailing bytes after embeddings"));
    }
    let rows = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect::<Vec<_>>()
        .chunks(dim.max(1))
        .map(<[f32]>::to_vec)
        .collect();
    Ok((dim, if dim == 0 { Vec::new() } else { rows }))
}

pub fn read_embeddings(path: &Path) -> Result<(usize, Vec<Vec<f32>>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    decode_embeddings(&bytes, &path.display().to_string())
}

pub fn write_loss_curve(path: &Path, curve: &[f64]) -> Result<()> {
    let mut s = String::new();
    for (i, l) in curve.iter().enumerate() {
        s.push_str(&format!("{}\t{l}\n", i + 1));
    }
    write_bytes(path, s.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::DatasetRecord;

    #[test]
    fn jsonl_errors_locate_the_byte() {
        let text = "{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"b\",\"text\":\"y\"} junk\n";
        let e = parse_jsonl::<TextRecord>(text, "f").unwrap_err();
        match e {
            Error::Parse { line, offset, .. } => {
                assert_eq!(line, 2);
                assert_eq!(&text[offset..offset + 4], "junk");
            }
            other => panic!("{other}"),
        }
        let ok: Vec<DatasetRecord> =
            parse_jsonl("{\"task\":\"t\",\"query\":\"q\",\"pos\":[\"p\"],\"neg\":[]}\n\n", "f").unwrap();
        assert_eq!(ok.len(), 1);
    }

    #[test]
    fn registry_rules() {
        let line = |n: &str, i: &str| format!("{{\"name\":\"{n}\",\"instruction\":\"{i}\",\"kind\":\"retrieval\"}}\n");
        assert_eq!(parse_registry(&line("a", "x"), "r").unwrap()[0].task_definition, "x");
        assert!(parse_registry(&(line("a", "x") + &line("a", "y")), "r").is_err());
        assert!(parse_registry(&line("a", " "), "r").is_err());
        assert!(parse_registry("{\"name\":\"a\",\"kind\":\"retrieval\"}", "r").is_err());
    }

    #[test]
    fn qrels_tsv() {
        let q = parse_qrels("query-id\tcorpus-id\tscore\nq1\td1\t1\nq1\td2\t2\n", "q").unwrap();
        assert_eq!(q.len(), 2);
        let e = parse_qrels("q1\td1\t1\nq1\td2\t1\textra\n", "q").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, offset: 15, .. }), "{e}");
        assert!(parse_qrels("q1\td1\t1\nq1\td2\tx\n", "q").is_err());
    }

    #[test]
    fn embedding_file_round_trip() {
        let rows = vec![vec![1.0f32, -2.5], vec![0.0, 3.25]];
        let b = encode_embeddings(2, &rows).unwrap();
        assert_eq!(decode_embeddings(&b, "e").unwrap(), (2, rows));
        let empty = encode_embeddings(8, &[]).unwrap();
        assert_eq!(empty.len(), 16);
        assert_eq!(decode_embeddings(&empty, "e").unwrap(), (8, vec![]));
        let mut long = b.clone();
        long.push(0);
        assert!(matches!(decode_embeddings(&long, "e"), Err(Error::Parse { offset: 32, .. })));
        assert!(decode_embeddings(&b[..30], "e").is_err());
    }
}
