use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use s3ma::embedding_store::{read_embeddings, read_vocabulary};
use s3ma::trainer::read_checkpoint;
use s3ma::{validate, ConceptSpace, TemporalMode};
use tempfile::TempDir;

fn s3ma(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_s3ma"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = s3ma(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// gen-synth + cluster into `dir`, returning (embeddings, vocab, concepts).
fn small_pipeline(dir: &Path) -> (String, String, String) {
    let data = dir.join("data");
    ok(&[
        "gen-synth", "--pairs", "12", "--dim", "8", "--frames", "3", "--vocab", "16", "--words", "3", "--seed", "7",
        "--out", p(&data),
    ]);
    let emb = data.join("embeddings.emb");
    let voc = data.join("vocab.voc");
    let cpt = dir.join("concepts.cpt");
    ok(&["cluster", "--vocab", p(&voc), "--nc", "4", "--seed", "1", "--out", p(&cpt)]);
    (p(&emb).into(), p(&voc).into(), p(&cpt).into())
}

#[test]
fn gen_synth_writes_valid_deterministic_files() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        ok(&["gen-synth", "--pairs", "64", "--dim", "32", "--seed", "7", "--out", p(dir)]);
    }
    let set = read_embeddings(a.join("embeddings.emb")).unwrap();
    let vocab = read_vocabulary(a.join("vocab.voc")).unwrap();
    assert_eq!((set.len(), set.d), (64, 32));
    assert!(validate(&set, Some(vocab.len())).is_empty());
    for f in ["embeddings.emb", "vocab.voc"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }
}

#[test]
fn usage_errors_exit_two() {
    let out = s3ma(&["gen-synth", "--pairs", "4"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--out"));
    assert_eq!(s3ma(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(s3ma(&["--help"]).status.code(), Some(0));

    let tmp = TempDir::new().unwrap();
    let (_, voc, _) = small_pipeline(tmp.path());
    let out = s3ma(&["cluster", "--vocab", &voc, "--nc", "17", "--out", p(&tmp.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn cluster_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let (_, voc, cpt) = small_pipeline(tmp.path());
    let again = tmp.path().join("again.cpt");
    ok(&["cluster", "--vocab", &voc, "--nc", "4", "--seed", "1", "--out", p(&again)]);
    assert_eq!(fs::read(&cpt).unwrap(), fs::read(&again).unwrap());
    let space = ConceptSpace::read(&cpt).unwrap();
    assert_eq!((space.n_concepts(), space.n_words()), (4, 16));
}

#[test]
fn train_eval_retrieve_pipeline() {
    let tmp = TempDir::new().unwrap();
    let (emb, _, cpt) = small_pipeline(tmp.path());
    let ckpt = tmp.path().join("model.ckp");
    let trace = tmp.path().join("trace.csv");
    ok(&[
        "train", "--data", &emb, "--concepts", &cpt, "--out", p(&ckpt), "--trace", p(&trace), "--epochs", "3",
        "--batch-size", "4", "--warmup", "2",
    ]);
    let csv = fs::read_to_string(&trace).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "step,l_sim,l_align,l_sparse,total,lr");
    assert_eq!(lines.len(), 1 + 3 * 3);

    let json = ok(&["eval", "--checkpoint", p(&ckpt), "--data", &emb]);
    let reports: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(reports.as_array().unwrap().len(), 2);
    assert_eq!(reports[0]["direction"], "text_to_video");
    assert_eq!(reports[1]["n"], 12);

    let inv = ok(&[
        "eval", "--checkpoint", p(&ckpt), "--data", &emb, "--inverted-softmax", "--tau", "100", "--format", "csv",
    ]);
    assert!(inv.starts_with("direction,n,r1,r5,r10,median_rank,mean_rank\n"));
    assert_eq!(inv.lines().count(), 3);

    let hits = ok(&["retrieve", "--checkpoint", p(&ckpt), "--data", &emb, "--query", "pair00003", "--k", "3"]);
    let hits: serde_json::Value = serde_json::from_str(&hits).unwrap();
    let list = hits["hits"].as_array().unwrap();
    assert_eq!(list.len(), 3);
    assert_eq!(list[0]["rank"], 1);
    assert!(list[0]["score"].as_f64().unwrap() >= list[2]["score"].as_f64().unwrap());

    let missing = s3ma(&["retrieve", "--checkpoint", p(&ckpt), "--data", &emb, "--query", "nope"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn train_flags_reach_the_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let (emb, _, cpt) = small_pipeline(tmp.path());
    let ckpt = tmp.path().join("m.ckp");
    ok(&[
        "train", "--data", &emb, "--concepts", &cpt, "--out", p(&ckpt), "--epochs", "1", "--batch-size", "4",
        "--alpha", "0", "--beta", "0", "--no-temporal", "--heads", "dV+sF", "--freeze-concepts",
    ]);
    let (params, cfg) = read_checkpoint(&ckpt).unwrap();
    assert_eq!((cfg.weights.alpha, cfg.weights.beta), (0.0, 0.0));
    assert_eq!(params.temporal.mode(), TemporalMode::MeanPool);
    assert_eq!(params.heads.enabled.label(), "dV+sF");
    assert_eq!(params.concepts, ConceptSpace::read(&cpt).unwrap());

    let bad = s3ma(&["train", "--data", &emb, "--concepts", &cpt, "--out", p(&ckpt), "--heads", "dX"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = TempDir::new().unwrap();
    let (emb, _, cpt) = small_pipeline(tmp.path());
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, "[train]\nepochs = 1\nbatch_size = 6\nwarmup_steps = 0\n").unwrap();
    let trace = tmp.path().join("t.csv");
    let ckpt = tmp.path().join("m.ckp");
    let base = [
        "--config", p(&cfg), "train", "--data", &emb, "--concepts", &cpt, "--out", p(&ckpt), "--trace", p(&trace),
    ];
    ok(&base);
    assert_eq!(fs::read_to_string(&trace).unwrap().lines().count(), 1 + 2);
    let mut with_flag = base.to_vec();
    with_flag.extend(["--epochs", "2"]);
    let out = s3ma(&with_flag);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("\"epochs\":2"));
    assert_eq!(fs::read_to_string(&trace).unwrap().lines().count(), 1 + 4);

    fs::write(&cfg, "[train]\nepochs = \"many\"\n").unwrap();
    assert_eq!(s3ma(&base).status.code(), Some(2));
}

#[test]
fn io_failures_exit_one() {
    let tmp = TempDir::new().unwrap();
    let (emb, _, _) = small_pipeline(tmp.path());
    let out = s3ma(&["eval", "--checkpoint", p(&tmp.path().join("absent.ckp")), "--data", &emb]);
    assert_eq!(out.status.code(), Some(1));
    let out = s3ma(&["cluster", "--vocab", p(&tmp.path().join("absent.voc")), "--nc", "2", "--out", "x"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn ablate_emits_rows_per_seed() {
    let tmp = TempDir::new().unwrap();
    let csv = tmp.path().join("abl.csv");
    ok(&[
        "ablate", "--seeds", "1,2,3", "--pairs", "12", "--dim", "6", "--frames", "2", "--vocab", "10", "--words", "2",
        "--nc", "4", "--epochs", "1", "--batch-size", "3", "--out", p(&csv),
    ]);
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("seed,variant,t2v_r1"));
    assert_eq!(lines.len(), 1 + 30);
    assert!(lines[1].starts_with("1,dV,"));
    assert!(lines[30].starts_with("3,dV+dF+sV+sF,"));

    let single = ok(&[
        "ablate", "--study", "anchor", "--seeds", "5", "--pairs", "12", "--dim", "6", "--frames", "2", "--vocab", "10",
        "--words", "2", "--nc", "4", "--epochs", "1", "--batch-size", "3",
    ]);
    assert_eq!(single.lines().count(), 3);
    assert_eq!(s3ma(&["ablate", "--study", "bogus"]).status.code(), Some(2));
}
