//! End-to-end runs of the `icle` binary on small synthetic fixtures.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use icl_embed::clio::files::{
    decode_embeddings, encode_embeddings, read_records, write_jsonl, write_registry, RerankRecord,
};
use icl_embed::clio::Checkpoint;
use icl_embed::eval::EvalReport;
use icl_embed::model::forward_hidden;
use icl_embed::prompting::{render_passage, RERANK_QUERY_PASSAGE};
use icl_embed::reranker::{rerank_tokens, YES_TOKEN};
use icl_embed::synthetic::{key_lookup, KeyLookupSizes};
use tempfile::TempDir;

const CONFIG: &str = "\
[model]
d_model = 16
n_layers = 2
n_heads = 2
max_len = 128

[train]
steps = 4
batch_size = 8
hard_negatives = 3
n_max = 2
";

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let fx = key_lookup(
            2,
            KeyLookupSizes {
                train: 64,
                heldout: 8,
                corpus: 16,
                negatives: 3,
            },
        );
        write_registry(&dir.path().join("registry.jsonl"), std::slice::from_ref(&fx.task)).unwrap();
        write_jsonl(&dir.path().join("train.jsonl"), &fx.train).unwrap();
        write_jsonl(&dir.path().join("corpus.jsonl"), &fx.corpus.documents).unwrap();
        write_jsonl(&dir.path().join("queries.jsonl"), &fx.queries.queries).unwrap();
        let mut qrels = String::from("query-id\tcorpus-id\tscore\n");
        for (i, _) in fx.queries.queries.iter().enumerate() {
            qrels.push_str(&format!("q{i:03}\td{i:03}\t1\n"));
        }
        std::fs::write(dir.path().join("qrels.tsv"), qrels).unwrap();
        std::fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }

    fn train(&self, out: &str, extra: &[&str]) -> Output {
        let mut args = vec![
            "train".to_string(),
            "--config".into(),
            self.arg("run.toml"),
            "--registry".into(),
            self.arg("registry.jsonl"),
            "--dataset".into(),
            self.arg("train.jsonl"),
            "--out".into(),
            self.arg(out),
            "--seed".into(),
            "7".into(),
        ];
        args.extend(extra.iter().map(|s| s.to_string()));
        icle(&args)
    }

    fn trained(&self) -> String {
        if !self.path("model.ckpt").exists() {
            ok(&self.train("model.ckpt", &[]));
        }
        self.arg("model.ckpt")
    }
}

fn icle<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_icle"))
        .args(args)
        .env_remove("ICLE_SEED")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn train_is_deterministic_and_writes_loss_curve() {
    let f = Fixture::new();
    ok(&f.train("a.ckpt", &["--loss-curve", &f.arg("loss.tsv")]));
    ok(&f.train("b.ckpt", &[]));
    assert_eq!(read(&f.path("a.ckpt")), read(&f.path("b.ckpt")));
    let curve = String::from_utf8(read(&f.path("loss.tsv"))).unwrap();
    let lines: Vec<&str> = curve.lines().collect();
    assert_eq!(lines.len(), 4);
    for (i, l) in lines.iter().enumerate() {
        let (step, loss) = l.split_once('\t').unwrap();
        assert_eq!(step.parse::<usize>().unwrap(), i + 1);
        assert!(loss.parse::<f64>().unwrap().is_finite());
    }
    let ck = Checkpoint::load(&f.path("a.ckpt")).unwrap();
    assert_eq!(ck.step, 4);
}

#[test]
fn train_flags_override_config() {
    let f = Fixture::new();
    ok(&f.train("base.ckpt", &[]));
    let flagged = [
        "--mode", "fixed", "--tau", "0.05", "--attention", "bidir", "--pooling", "mean", "--passage-prompt",
        "--save-config", &f.arg("effective.toml"),
    ];
    ok(&f.train("flag.ckpt", &flagged));
    assert_ne!(read(&f.path("base.ckpt")), read(&f.path("flag.ckpt")));
    let eff = icl_embed::clio::RunConfig::load(&f.path("effective.toml")).unwrap();
    assert_eq!(eff.train.tau, 0.05);
    assert_eq!(eff.seed, Some(7));
    assert_eq!(eff.to_toml().unwrap().as_bytes(), read(&f.path("effective.toml")));
    ok(&f.train("nmax.ckpt", &["--mode", "inbatch", "--nmax", "1"]));
}

#[test]
fn seed_comes_from_environment() {
    let f = Fixture::new();
    let base = [
        "train", "--config", &f.arg("run.toml"), "--registry", &f.arg("registry.jsonl"), "--dataset",
        &f.arg("train.jsonl"),
    ];
    let run = |out: &str, seed: &str| {
        let mut args: Vec<&str> = base.to_vec();
        args.extend(["--out", out]);
        Command::new(env!("CARGO_BIN_EXE_icle"))
            .args(&args)
            .env("ICLE_SEED", seed)
            .output()
            .unwrap()
    };
    let a = run(&f.arg("env.ckpt"), "7");
    assert!(ok(&a).contains("seed 7"));
    ok(&f.train("flag.ckpt", &[]));
    assert_eq!(read(&f.path("env.ckpt")), read(&f.path("flag.ckpt")));
    assert_eq!(run(&f.arg("bad.ckpt"), "seven").status.code(), Some(2));
}

#[test]
fn train_rejects_unknown_task_and_bad_records() {
    let f = Fixture::new();
    let mut text = String::from_utf8(read(&f.path("train.jsonl"))).unwrap();
    text.push_str("{\"task\":\"ghost_task\",\"query\":\"q\",\"pos\":[\"p\"],\"neg\":[\"a\",\"b\",\"c\"]}\n");
    std::fs::write(f.path("train.jsonl"), &text).unwrap();
    let out = f.train("x.ckpt", &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("ghost_task"), "{}", stderr(&out));

    std::fs::write(f.path("train.jsonl"), "{oops\n").unwrap();
    let out = f.train("x.ckpt", &[]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("line 1"), "{}", stderr(&out));

    std::fs::write(f.path("run.toml"), "[train]\nbogus = 1\n").unwrap();
    assert_eq!(f.train("x.ckpt", &[]).status.code(), Some(2));
}

#[test]
fn encode_round_trips_and_handles_empty_input() {
    let f = Fixture::new();
    let ck = f.trained();
    let enc = |input: &str, out: &str, extra: &[&str]| {
        let mut args = vec!["encode", "--checkpoint", &ck, "--input", input, "--out", out];
        args.extend_from_slice(extra);
        icle(&args)
    };
    let corpus = f.arg("corpus.jsonl");
    ok(&enc(&corpus, &f.arg("p1.bin"), &["--side", "passage"]));
    ok(&enc(&corpus, &f.arg("p2.bin"), &["--side", "passage"]));
    let bytes = read(&f.path("p1.bin"));
    assert_eq!(bytes, read(&f.path("p2.bin")));
    let (dim, rows) = decode_embeddings(&bytes, "p1").unwrap();
    assert_eq!((dim, rows.len()), (16, 16));
    assert_eq!(encode_embeddings(dim, &rows).unwrap(), bytes);

    let model = Checkpoint::load(&f.path("model.ckpt")).unwrap().into_model().unwrap();
    let docs = read_records(&f.path("corpus.jsonl")).unwrap();
    let first = model.encode(&render_passage(&docs[0].text, false)).unwrap();
    assert_eq!(rows[0], first);

    std::fs::write(f.path("empty.jsonl"), "").unwrap();
    ok(&enc(&f.arg("empty.jsonl"), &f.arg("empty.bin"), &["--side", "passage"]));
    let empty = read(&f.path("empty.bin"));
    assert_eq!(empty.len(), 16);
    assert_eq!(decode_embeddings(&empty, "e").unwrap(), (16, vec![]));

    let reg = f.arg("registry.jsonl");
    let query = |shots: &str, out: &str| {
        enc(
            &f.arg("queries.jsonl"),
            &f.arg(out),
            &["--side", "query", "--registry", &reg, "--task", "key_lookup", "--shots", shots],
        )
    };
    ok(&query("0", "q0.bin"));
    ok(&query("3", "q3.bin"));
    assert_ne!(read(&f.path("q0.bin")), read(&f.path("q3.bin")));
    assert_eq!(query("4", "q4.bin").status.code(), Some(2));
    let missing = enc(&f.arg("queries.jsonl"), &f.arg("qx.bin"), &["--side", "query"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn search_writes_ranked_hits() {
    let f = Fixture::new();
    let ck = f.trained();
    let args = [
        "search", "--checkpoint", &ck, "--corpus", &f.arg("corpus.jsonl"), "--queries", &f.arg("queries.jsonl"),
        "--registry", &f.arg("registry.jsonl"), "--task", "key_lookup", "--k", "5",
    ];
    let text = ok(&icle(&args));
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 8 * 5);
    for chunk in lines.chunks(5) {
        let scores: Vec<f64> = chunk.iter().map(|v| v["score"].as_f64().unwrap()).collect();
        assert!(scores.windows(2).all(|w| w[0] >= w[1]));
        let ranks: Vec<u64> = chunk.iter().map(|v| v["rank"].as_u64().unwrap()).collect();
        assert_eq!(ranks, [1, 2, 3, 4, 5]);
    }
    assert_eq!(text, ok(&icle(&args)));
}

#[test]
fn eval_reports_and_structural_errors() {
    let f = Fixture::new();
    let ck = f.trained();
    let eval = |qrels: &str, shots: &str, out: &str| {
        icle(&[
            "eval", "--checkpoint", &ck, "--corpus", &f.arg("corpus.jsonl"), "--queries", &f.arg("queries.jsonl"),
            "--qrels", qrels, "--registry", &f.arg("registry.jsonl"), "--task", "key_lookup", "--shots", shots,
            "--k", "1,10", "--out", &f.arg(out),
        ])
    };
    let table = ok(&eval(&f.arg("qrels.tsv"), "0", "r0.json"));
    assert!(table.contains("nDCG") && table.contains("shots 0"), "{table}");
    ok(&eval(&f.arg("qrels.tsv"), "3", "r3.json"));
    let load = |p: &str| -> EvalReport { serde_json::from_slice(&read(&f.path(p))).unwrap() };
    let (r0, r3) = (load("r0.json"), load("r3.json"));
    assert_eq!((r0.shot_count, r3.shot_count), (0, 3));
    assert_ne!(r0, r3);
    assert_eq!(r0.ks, [1, 10]);

    // Every document relevant: any ranking is ideal.
    let mut all = String::new();
    for q in 0..8 {
        for d in 0..16 {
            all.push_str(&format!("q{q:03}\td{d:03}\t1\n"));
        }
    }
    std::fs::write(f.path("all.tsv"), all).unwrap();
    ok(&eval(&f.arg("all.tsv"), "0", "all.json"));
    assert_eq!(load("all.json").ndcg_at(10), Some(1.0));

    std::fs::write(f.path("bad.tsv"), "q000\td999\t1\n").unwrap();
    let out = eval(&f.arg("bad.tsv"), "0", "bad.json");
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("d999"));
}

#[test]
fn rerank_final_exit_matches_reference_forward() {
    let f = Fixture::new();
    let ck = f.trained();
    let pairs = [("abc", "abc=12"), ("what is x", "x is one")];
    let lines: String = pairs
        .iter()
        .map(|(q, p)| format!("{{\"query\":\"{q}\",\"passage\":\"{p}\"}}\n"))
        .collect();
    std::fs::write(f.path("pairs.jsonl"), lines).unwrap();
    let text = ok(&icle(&["rerank", "--checkpoint", &ck, "--input", &f.arg("pairs.jsonl"), "--exit-layer", "1,2"]));
    let recs: Vec<RerankRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(recs.len(), 4);
    let model = Checkpoint::load(&f.path("model.ckpt")).unwrap().into_model().unwrap();
    let yes = model.weights.head.row(YES_TOKEN as usize);
    for (i, (q, p)) in pairs.iter().enumerate() {
        let seq = rerank_tokens(q, p, RERANK_QUERY_PASSAGE, 128).unwrap();
        let h = forward_hidden(&seq, &model.config, &model.weights, &[]).unwrap();
        let reference: f64 = yes
            .iter()
            .zip(h.final_states.row(seq.len() - 1))
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum();
        let last = &recs[2 * i + 1];
        assert_eq!(last.layer, 2);
        assert_eq!(last.score, reference);
    }
    let bad = icle(&["rerank", "--checkpoint", &ck, "--input", &f.arg("pairs.jsonl"), "--merge-ratio", "3"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn flops_reports() {
    let ident = ok(&icle(&["flops", "--n-layers", "6", "--d-model", "64"]));
    assert!(ident.contains("cost 1.000"), "{ident}");
    // Hand sheet: (2 * 58_720_256 + 2 * 20_971_520) / (6 * 58_720_256) = 0.45238...
    let toy = ok(&icle(&[
        "flops", "--n-layers", "6", "--d-model", "64", "--exit-layer", "4", "--merge-ratio", "2", "--merge-layers", "2",
    ]));
    assert!(toy.contains("cost 0.452  savings 0.548"), "{toy}");
    let grid = ok(&icle(&["flops", "--n-layers", "4", "--d-model", "8", "--grid"]));
    assert_eq!(grid.lines().count(), 1 + 4 * 4);
    let bad = icle(&["flops", "--n-layers", "4", "--d-model", "8", "--exit-layer", "9"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn corrupted_checkpoint_is_a_data_error() {
    let f = Fixture::new();
    f.trained();
    let mut bytes = read(&f.path("model.ckpt"));
    let len = bytes.len();
    bytes.extend_from_slice(b"junk");
    std::fs::write(f.path("long.ckpt"), &bytes).unwrap();
    std::fs::write(f.path("empty.jsonl"), "").unwrap();
    let out = icle(&[
        "encode", "--checkpoint", &f.arg("long.ckpt"), "--input", &f.arg("empty.jsonl"), "--side", "passage", "--out",
        &f.arg("x.bin"),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains(&len.to_string()), "{}", stderr(&out));
}
