//! Seeded synthetic tasks for smoke training, examples and tests.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::eval::{Corpus, QRels, QuerySet, TextRecord};
use crate::prompting::{ExampleRecord, TaskKind, TaskSpec};
use crate::training::{DatasetRecord, SeededRng, TrainBatch, TrainingPair};

const ALPHABET: &[u8] = b"abcdefghij";

/// Training records plus a held-out evaluation split for one task.
#[derive(Clone, Debug)]
pub struct RetrievalFixture {
    pub task: TaskSpec,
    pub train: Vec<DatasetRecord>,
    pub corpus: Corpus,
    pub queries: QuerySet,
    pub qrels: QRels,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KeyLookupSizes {
    pub train: usize,
    pub heldout: usize,
    pub corpus: usize,
    pub negatives: usize,
}

impl Default for KeyLookupSizes {
    fn default() -> Self {
        Self {
            train: 512,
            heldout: 64,
            corpus: 256,
            negatives: 3,
        }
    }
}

fn all_keys(len: usize) -> Vec<String> {
    let mut keys = vec![String::new()];
    for _ in 0..len {
        keys = keys
            .into_iter()
            .flat_map(|k| ALPHABET.iter().map(move |&c| format!("{k}{}", c as char)))
            .collect();
    }
    keys
}

fn hamming(a: &str, b: &str) -> usize {
    a.bytes().zip(b.bytes()).filter(|(x, y)| x != y).count()
}

/// `n` hard negatives for `key`: documents whose keys differ in one place
/// first, then random others.
fn hard_negatives<R: Rng + ?Sized>(key: &str, docs: &[(String, String)], n: usize, rng: &mut R) -> Vec<String> {
    let mut near: Vec<&(String, String)> = docs.iter().filter(|(k, _)| hamming(k, key) == 1).collect();
    near.shuffle(rng);
    let mut out: Vec<String> = near.iter().take(n).map(|(_, d)| d.clone()).collect();
    while out.len() < n {
        let (k, d) = docs.choose(rng).expect("non-empty docs");
        if k != key && !out.contains(d) {
            out.push(d.clone());
        }
    }
    out
}

/// Key-value lookup: the query is a three-letter key and the relevant
/// document is `key=NN`. Train, held-out and distractor keys are disjoint.
pub fn key_lookup(seed: u64, sizes: KeyLookupSizes) -> RetrievalFixture {
    let mut rng = SeededRng::new(seed);
    let mut keys = all_keys(3);
    assert!(sizes.train + sizes.corpus <= keys.len(), "not enough distinct keys");
    assert!(sizes.heldout <= sizes.corpus);
    keys.shuffle(&mut rng);
    let doc = |k: &str, rng: &mut SeededRng| format!("{k}={:02}", rng.random_range(0..100));
    let train_docs: Vec<(String, String)> = keys[..sizes.train]
        .iter()
        .map(|k| (k.clone(), doc(k, &mut rng)))
        .collect();
    let name = "key_lookup";
    let train = train_docs
        .iter()
        .map(|(k, d)| DatasetRecord {
            task: name.into(),
            query: k.clone(),
            pos: vec![d.clone()],
            neg: hard_negatives(k, &train_docs, sizes.negatives, &mut rng),
        })
        .collect();
    let eval_docs: Vec<(String, String)> = keys[sizes.train..sizes.train + sizes.corpus]
        .iter()
        .map(|k| (k.clone(), doc(k, &mut rng)))
        .collect();
    let mut task = TaskSpec::new(name, "find the key", TaskKind::Retrieval);
    task.eval_examples = Some(
        train_docs[..3]
            .iter()
            .map(|(k, d)| ExampleRecord::new(k.clone(), d.clone()))
            .collect(),
    );
    task.fixed_examples = task.eval_examples.clone();
    let mut qrels = QRels::new();
    let mut queries = Vec::new();
    for (i, (k, _)) in eval_docs[..sizes.heldout].iter().enumerate() {
        queries.push(TextRecord::new(format!("q{i:03}"), k.clone()));
        qrels.insert(format!("q{i:03}"), format!("d{i:03}"), 1);
    }
    let corpus = eval_docs
        .iter()
        .enumerate()
        .map(|(i, (_, d))| TextRecord::new(format!("d{i:03}"), d.clone()))
        .collect();
    RetrievalFixture {
        task,
        train,
        corpus: Corpus::new(corpus).expect("unique ids"),
        queries: QuerySet::new(queries).expect("unique ids"),
        qrels,
    }
}

/// Documents are `key#c` for a category letter `c`. Each task of the
/// family binds one category: its relevant documents carry it and its hard
/// negatives are the same key under other categories. Only the task's
/// opaque instruction tag, or its examples, say which category that is.
#[derive(Clone, Debug)]
pub struct CategoryFamily {
    pub train_tasks: Vec<TaskSpec>,
    pub train: Vec<DatasetRecord>,
    /// Held-out task: fresh keys and an instruction tag never seen in
    /// training, bound to one of the training categories.
    pub heldout: RetrievalFixture,
}

const CATEGORIES: &[u8] = b"pqrstuvw";

fn category_doc(key: &str, c: u8) -> String {
    format!("{key}#{}", c as char)
}

/// `n_tasks` (at most 8) training tasks with `pairs_per_task` keys each.
/// Held-out queries have one relevant document and `negatives`
/// same-key distractors under other categories.
pub fn category_family(seed: u64, n_tasks: usize, pairs_per_task: usize, heldout_queries: usize, negatives: usize) -> CategoryFamily {
    assert!(n_tasks >= 2 && n_tasks <= CATEGORIES.len());
    assert!(negatives < n_tasks);
    let mut rng = SeededRng::new(seed);
    let mut keys = all_keys(3);
    keys.shuffle(&mut rng);
    let (train_keys, heldout_keys) = keys.split_at(keys.len() - heldout_queries - 3);
    let cats = &CATEGORIES[..n_tasks];
    let others = |c: u8, rng: &mut SeededRng| -> Vec<u8> {
        let mut o: Vec<u8> = cats.iter().copied().filter(|&x| x != c).collect();
        o.shuffle(rng);
        o.truncate(negatives);
        o
    };

    let mut train_tasks = Vec::with_capacity(n_tasks);
    let mut train = Vec::new();
    for (t, &c) in cats.iter().enumerate() {
        let name = format!("category_{t}");
        let mut task = TaskSpec::new(name.clone(), format!("tag {t:02}"), TaskKind::Retrieval);
        let picked: Vec<&String> = train_keys.choose_multiple(&mut rng, pairs_per_task).collect();
        for k in &picked {
            train.push(DatasetRecord {
                task: name.clone(),
                query: (*k).clone(),
                pos: vec![category_doc(k, c)],
                neg: others(c, &mut rng).into_iter().map(|o| category_doc(k, o)).collect(),
            });
        }
        task.fixed_examples = Some(
            picked[..3]
                .iter()
                .map(|k| ExampleRecord::new((*k).clone(), category_doc(k, c)))
                .collect(),
        );
        train_tasks.push(task);
    }

    let c = cats[rng.random_range(0..cats.len())];
    let mut task = TaskSpec::new("category_heldout", "tag ??", TaskKind::Retrieval);
    task.eval_examples = Some(
        heldout_keys[..3]
            .iter()
            .map(|k| ExampleRecord::new(k.clone(), category_doc(k, c)))
            .collect(),
    );
    let mut docs = Vec::new();
    let mut queries = Vec::new();
    let mut qrels = QRels::new();
    for (i, k) in heldout_keys[3..].iter().enumerate() {
        let qid = format!("q{i:03}");
        qrels.insert(qid.clone(), format!("d{:04}", docs.len()), 1);
        docs.push(TextRecord::new(format!("d{:04}", docs.len()), category_doc(k, c)));
        for o in others(c, &mut rng) {
            docs.push(TextRecord::new(format!("d{:04}", docs.len()), category_doc(k, o)));
        }
        queries.push(TextRecord::new(qid, k.clone()));
    }
    CategoryFamily {
        train_tasks,
        train,
        heldout: RetrievalFixture {
            task,
            train: Vec::new(),
            corpus: Corpus::new(docs).expect("unique ids"),
            queries: QuerySet::new(queries).expect("unique ids"),
            qrels,
        },
    }
}

/// Reranker pairs: the query is a key, the positive the document holding
/// it, and the negatives documents whose keys differ in one letter.
pub fn rerank_batch(seed: u64, batch_size: usize, negatives: usize) -> TrainBatch {
    let fx = key_lookup(
        seed,
        KeyLookupSizes {
            train: 256,
            heldout: 1,
            corpus: 1,
            negatives,
        },
    );
    let pairs = fx
        .train
        .into_iter()
        .take(batch_size)
        .map(|r| TrainingPair {
            query: r.query,
            positive: r.pos[0].clone(),
            hard_negatives: r.neg,
        })
        .collect();
    TrainBatch { task: fx.task, pairs }
}
