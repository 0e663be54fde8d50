use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use depref::checkpoint::load_checkpoint;
use depref::conllu::read_conllu;

fn depref(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_depref"))
        .current_dir(dir)
        .env("RNG_REFINE_LOG", "warn")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = depref(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Small train and dev files plus a corrupted copy of dev.
fn corpus(dir: &Path) {
    ok(dir, &["gen-toy", "--count", "10", "--seed", "1", "--output-dir", "train"]);
    ok(dir, &["gen-toy", "--count", "6", "--seed", "2", "--corrupt", "0.3", "--output-dir", "dev"]);
}

fn train(dir: &Path, out: &str, extra: &[&str]) -> PathBuf {
    let mut args = vec![
        "train", "--train", "train/toy.conllu", "--dev", "dev/toy.conllu", "--seed", "3", "--output-dir", out,
    ];
    args.extend_from_slice(extra);
    ok(dir, &args);
    dir.join(out)
}

#[test]
fn missing_train_path_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    corpus(tmp.path());
    let out = depref(
        tmp.path(),
        &["train", "--train", "absent.conllu", "--dev", "dev/toy.conllu", "--seed", "1", "--output-dir", "m"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("absent.conllu"), "{}", stderr(&out));
    assert!(!tmp.path().join("m").exists());
}

#[test]
fn seed_is_mandatory() {
    let tmp = tempfile::tempdir().unwrap();
    corpus(tmp.path());
    let out = depref(tmp.path(), &["train", "--train", "train/toy.conllu", "--dev", "dev/toy.conllu", "--output-dir", "m"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--seed"));
}

#[test]
fn one_epoch_smoke_run() {
    let tmp = tempfile::tempdir().unwrap();
    corpus(tmp.path());
    let m = train(tmp.path(), "m", &["--epochs", "1"]);
    let model = load_checkpoint(m.join("model.ckpt"), None).unwrap();
    assert!(!model.params.is_empty());
    let metrics = std::fs::read_to_string(m.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines.len(), 2, "{metrics}");
    assert!(lines[0].starts_with("epoch,loss,learning_rate,dev_uas,dev_las"));
    assert!(lines[1].starts_with("1,"));
    assert!(m.join("vocab.tsv").exists());
}

#[test]
fn same_seed_gives_identical_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    corpus(tmp.path());
    let a = train(tmp.path(), "a", &["--epochs", "2"]);
    let b = train(tmp.path(), "b", &["--epochs", "2"]);
    let read = |p: PathBuf| std::fs::read(p).unwrap();
    assert_eq!(read(a.join("metrics.csv")), read(b.join("metrics.csv")));
    assert_eq!(read(a.join("model.ckpt")), read(b.join("model.ckpt")));
}

#[test]
fn settings_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    corpus(tmp.path());
    std::fs::write(tmp.path().join("run.cfg"), "# toy run\nepochs = 2\nbatch_size = 4\n").unwrap();
    let rows = |dir: PathBuf| std::fs::read_to_string(dir.join("metrics.csv")).unwrap().lines().count() - 1;
    assert_eq!(rows(train(tmp.path(), "file", &["--config", "run.cfg"])), 2);
    assert_eq!(rows(train(tmp.path(), "flag", &["--config", "run.cfg", "--epochs", "1"])), 1);

    std::fs::write(tmp.path().join("bad.cfg"), "epochz = 2\n").unwrap();
    let out = depref(tmp.path(), &["train", "--config", "bad.cfg"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("epochz"));
}

#[test]
fn refine_writes_iterations_trace_and_parsable_output() {
    let tmp = tempfile::tempdir().unwrap();
    corpus(tmp.path());
    train(tmp.path(), "m", &["--epochs", "1"]);
    let common = ["refine", "--checkpoint", "m/model.ckpt", "--test", "dev/toy.conllu", "--seed", "1"];

    let mut args = common.to_vec();
    args.extend(["--init", "empty", "--iterations", "3", "--no-stopping", "--gold", "dev/toy.conllu", "--output-dir", "empty"]);
    ok(tmp.path(), &args);
    let out = tmp.path().join("empty");
    for t in 1..=4 {
        let file = out.join(format!("iterations/iter_{t}.conllu"));
        assert_eq!(read_conllu(&file).unwrap().len(), 6, "{}", file.display());
    }
    assert!(!out.join("iterations/iter_5.conllu").exists());
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().next().unwrap(), "iteration,active_sentences,changed_words,uas,las,rel");
    assert_eq!(trace.lines().count(), 5, "{trace}");
    let parsed = read_conllu(out.join("output.conllu")).unwrap();
    let gold = read_conllu(tmp.path().join("dev/toy.conllu")).unwrap();
    assert_eq!(parsed.len(), gold.len());
    for (p, g) in parsed.iter().zip(&gold) {
        assert_eq!(p.forms, g.forms);
    }

    let mut args = common.to_vec();
    args.extend(["--initial-parse", "dev/toy.corrupted.conllu", "--output-dir", "file"]);
    ok(tmp.path(), &args);
    let trace = std::fs::read_to_string(tmp.path().join("file/trace.csv")).unwrap();
    assert!(trace.lines().nth(1).unwrap().starts_with("0,"), "{trace}");
    assert!(trace.lines().count() <= 5, "{trace}");
}

#[test]
fn refine_from_initializer_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    corpus(tmp.path());
    train(tmp.path(), "init", &["--epochs", "1", "--model", "syntr"]);
    train(tmp.path(), "m", &["--epochs", "1", "--init", "syntr", "--initializer", "init/model.ckpt"]);
    ok(
        tmp.path(),
        &[
            "refine", "--checkpoint", "m/model.ckpt", "--test", "dev/toy.conllu", "--seed", "1", "--init", "syntr",
            "--initializer", "init/model.ckpt", "--output-dir", "r",
        ],
    );
    assert_eq!(read_conllu(tmp.path().join("r/output.conllu")).unwrap().len(), 6);
    ok(tmp.path(), &["parse", "--checkpoint", "init/model.ckpt", "--test", "dev/toy.conllu", "--seed", "1", "--output-dir", "p"]);
    assert_eq!(read_conllu(tmp.path().join("p/output.conllu")).unwrap().len(), 6);
}

#[test]
fn mismatched_initial_parse_names_the_sentence() {
    let tmp = tempfile::tempdir().unwrap();
    corpus(tmp.path());
    train(tmp.path(), "m", &["--epochs", "1"]);
    let out = depref(
        tmp.path(),
        &[
            "refine", "--checkpoint", "m/model.ckpt", "--test", "dev/toy.conllu", "--seed", "1", "--initial-parse",
            "train/toy.conllu", "--output-dir", "r",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("sentence 7"), "{}", stderr(&out));
}

#[test]
fn eval_of_gold_against_itself() {
    let tmp = tempfile::tempdir().unwrap();
    corpus(tmp.path());
    for punct in ["keep", "exclude"] {
        let out = ok(tmp.path(), &["eval", "--gold", "dev/toy.conllu", "--pred", "dev/toy.conllu", "--punct", punct]);
        assert!(out.lines().next().unwrap().contains(punct), "{out}");
        assert!(out.contains("UAS    100.00"));
        assert!(out.contains("LAS    100.00"));
    }
    let out = ok(
        tmp.path(),
        &["eval", "--gold", "dev/toy.conllu", "--pred", "dev/toy.corrupted.conllu", "--output-dir", "e"],
    );
    assert!(!out.contains("UAS    100.00"));
    assert!(tmp.path().join("e/scores.csv").exists());
    let out = depref(tmp.path(), &["eval", "--gold", "dev/toy.conllu", "--pred", "train/toy.conllu"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn analyze_writes_all_tables() {
    let tmp = tempfile::tempdir().unwrap();
    corpus(tmp.path());
    ok(
        tmp.path(),
        &["analyze", "--gold", "dev/toy.conllu", "--pred", "dev/toy.corrupted.conllu,dev/toy.conllu", "--output-dir", "a"],
    );
    for name in ["bins.csv", "deptypes.csv", "projectivity.csv", "rel.csv"] {
        assert!(tmp.path().join("a").join(name).exists(), "{name}");
    }
    let rel = std::fs::read_to_string(tmp.path().join("a/rel.csv")).unwrap();
    assert!(rel.lines().nth(2).unwrap().contains(",100.00,100.00,100.00"), "{rel}");
}

#[test]
fn gradcheck_command() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(tmp.path(), &["gradcheck", "--seed", "1"]);
    assert!(out.contains("model_loss"));
    assert!(!out.contains("FAIL"));
    let out = ok(tmp.path(), &["gradcheck", "--seed", "1", "--only"]);
    assert!(out.contains("0 ops"), "{out}");
    let out = depref(tmp.path(), &["gradcheck", "--seed", "1", "--only", "no_such_op"]);
    assert_eq!(out.status.code(), Some(2));
}
