use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nrcid::eval::SyntheticSpec;
use nrcid::identity::ParticipantModel;
use nrcid::quantizer::{Codebook, QuantizerSpec};
use nrcid::signal::FilterSpec;
use nrcid::xafcm::{AlphaMode, ModelParams, XaModel};

fn nrcid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nrcid"))
        .args(args)
        .env_remove("NRCID_STORE")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = nrcid(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixture_spec() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/synthetic5.toml")
}

fn dataset(dir: &Path) -> PathBuf {
    let ds = dir.join("ds");
    ok(&["synth", "--spec", s(&fixture_spec()), "--out", s(&ds)]);
    ds
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// First `seconds` of a recording as a plain segment file.
fn segment_file(
    ds: &Path,
    participant: &str,
    session: &str,
    dir: &Path,
    seconds: usize,
) -> PathBuf {
    let text = fs::read_to_string(ds.join(participant).join(format!("{session}.csv"))).unwrap();
    let body: Vec<&str> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .take(seconds * 1000)
        .collect();
    let path = dir.join(format!("{participant}_{session}.csv"));
    fs::write(&path, body.join("\n") + "\n").unwrap();
    path
}

#[test]
fn committed_fixture_matches_the_builtin_spec() {
    let text = fs::read_to_string(fixture_spec()).unwrap();
    let spec: SyntheticSpec = toml::from_str(&text).unwrap();
    assert_eq!(spec, SyntheticSpec::fixture());
}

#[test]
fn synth_is_seeded_and_spec_round_trips() {
    let t = tempfile::tempdir().unwrap();
    let a = dataset(t.path());
    let b = t.path().join("b");
    ok(&["synth", "--out", s(&b)]);
    assert_eq!(files(&a), files(&b));

    let c = t.path().join("c");
    ok(&["synth", "--out", s(&c), "--seed", "7"]);
    assert_ne!(files(&a), files(&c));

    let emitted = ok(&["synth", "--emit-spec", "--seed", "7"]);
    let spec_path = t.path().join("seed7.toml");
    fs::write(&spec_path, emitted).unwrap();
    let d = t.path().join("d");
    ok(&["synth", "--spec", s(&spec_path), "--out", s(&d)]);
    assert_eq!(files(&c), files(&d));
}

#[test]
fn synth_rejects_an_empty_spec() {
    let t = tempfile::tempdir().unwrap();
    let spec = t.path().join("empty.toml");
    fs::write(&spec, "sessions = 3\nduration_seconds = 1.0\nsample_rate_hz = 100.0\nseed = 1\nparticipants = []\n").unwrap();
    let out = nrcid(&["synth", "--spec", s(&spec), "--out", s(&t.path().join("x"))]);
    assert_eq!(code(&out), 2);
    assert!(!t.path().join("x").exists());
}

#[test]
fn enroll_writes_one_model_per_participant_reproducibly() {
    let t = tempfile::tempdir().unwrap();
    let ds = dataset(t.path());
    let store = t.path().join("store");
    let args = [
        "enroll",
        "--dataset",
        s(&ds),
        "--store",
        s(&store),
        "--k",
        "6",
        "--train-sessions",
        "day1,day2",
    ];
    let summary = ok(&args);
    assert!(summary.starts_with("enrolled 5 participants"), "{summary}");
    let first = files(&store);
    let names: Vec<&str> = first.iter().map(|f| f.0.as_str()).collect();
    assert_eq!(
        names,
        ["P0.model", "P1.model", "P2.model", "P3.model", "P4.model"]
    );
    ok(&args);
    assert_eq!(files(&store), first);
}

#[test]
fn enroll_on_an_empty_root_writes_nothing() {
    let t = tempfile::tempdir().unwrap();
    let root = t.path().join("root");
    fs::create_dir(&root).unwrap();
    fs::write(root.join("manifest.txt"), "rate_hz=1000\n").unwrap();
    let store = t.path().join("store");
    let out = nrcid(&["enroll", "--dataset", s(&root), "--store", s(&store)]);
    assert_eq!(code(&out), 3);
    assert!(!store.exists());
}

#[test]
fn enroll_reports_missing_sessions_per_participant() {
    let t = tempfile::tempdir().unwrap();
    let ds = dataset(t.path());
    fs::remove_file(ds.join("P2/day2.csv")).unwrap();
    let store = t.path().join("store");
    let out = nrcid(&[
        "enroll",
        "--dataset",
        s(&ds),
        "--store",
        s(&store),
        "--k",
        "4",
        "--train-sessions",
        "day1,day2",
    ]);
    assert_eq!(code(&out), 3);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("P2: missing session day2"), "{err}");
    assert_eq!(files(&store).len(), 4);
}

#[test]
fn identify_ranks_the_enrolled_participant_first() {
    let t = tempfile::tempdir().unwrap();
    let ds = dataset(t.path());
    let store = t.path().join("store");
    ok(&[
        "enroll",
        "--dataset",
        s(&ds),
        "--store",
        s(&store),
        "--k",
        "8",
        "--train-sessions",
        "day1,day2",
    ]);
    for p in ["P0", "P1", "P2", "P3", "P4"] {
        let seg = segment_file(&ds, p, "day3", t.path(), 10);
        let text = ok(&["identify", "--store", s(&store), s(&seg)]);
        assert!(text.starts_with(&format!("predicted={p}\n")), "{text}");

        let csv = ok(&["identify", "--store", s(&store), "--format", "csv", s(&seg)]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "participant,nrc");
        assert_eq!(lines.len(), 6);
        assert!(lines[1].starts_with(&format!("{p},")));
        let scores: Vec<f64> = lines[1..]
            .iter()
            .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
            .collect();
        assert!(scores.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn identify_uses_the_store_environment_variable() {
    let t = tempfile::tempdir().unwrap();
    let ds = dataset(t.path());
    let store = t.path().join("store");
    ok(&[
        "enroll",
        "--dataset",
        s(&ds),
        "--store",
        s(&store),
        "--k",
        "4",
    ]);
    let seg = segment_file(&ds, "P1", "day3", t.path(), 10);
    let out = Command::new(env!("CARGO_BIN_EXE_nrcid"))
        .args(["identify", "--format", "csv", s(&seg)])
        .env("NRCID_STORE", &store)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("participant,nrc\n"));
}

#[test]
fn identify_error_codes() {
    let t = tempfile::tempdir().unwrap();
    let empty = t.path().join("empty_store");
    fs::create_dir(&empty).unwrap();
    let seg = t.path().join("seg.csv");
    fs::write(
        &seg,
        (0..2000)
            .map(|i| format!("{}\n", (i as f64 * 0.01).sin()))
            .collect::<String>(),
    )
    .unwrap();
    let out = nrcid(&["identify", "--store", s(&empty), s(&seg)]);
    assert_eq!(code(&out), 4);
    assert!(String::from_utf8_lossy(&out.stderr).contains(s(&empty)));

    let ds = dataset(t.path());
    let store = t.path().join("store");
    ok(&[
        "enroll",
        "--dataset",
        s(&ds),
        "--store",
        s(&store),
        "--k",
        "4",
    ]);
    let short = t.path().join("short.csv");
    fs::write(&short, "1\n2\n3\n").unwrap();
    assert_eq!(
        code(&nrcid(&["identify", "--store", s(&store), s(&short)])),
        3
    );
    assert_eq!(code(&nrcid(&["identify", s(&seg)])), 2);
}

#[test]
fn evaluate_writes_all_report_files() {
    let t = tempfile::tempdir().unwrap();
    let ds = dataset(t.path());
    let out = t.path().join("eval");
    let summary = ok(&[
        "evaluate",
        "--dataset",
        s(&ds),
        "--out",
        s(&out),
        "--k",
        "8",
    ]);
    assert!(summary.starts_with("accuracy="), "{summary}");
    let names: Vec<String> = files(&out).into_iter().map(|f| f.0).collect();
    assert_eq!(
        names,
        [
            "confusion.csv",
            "metrics.txt",
            "per_segment.csv",
            "sweep.csv"
        ]
    );
    let metrics = fs::read_to_string(out.join("metrics.txt")).unwrap();
    assert!(metrics.contains("k=8\nd=2\nalphabet=17\nalpha=auto\n"));
}

#[test]
fn config_file_sits_between_flags_and_defaults() {
    let t = tempfile::tempdir().unwrap();
    let ds = dataset(t.path());
    let cfg = t.path().join("run.toml");
    fs::write(
        &cfg,
        format!("k = 3\nd = 1\nalpha = 0.5\ndataset = {:?}\n", s(&ds)),
    )
    .unwrap();
    let out = t.path().join("eval");
    ok(&[
        "evaluate",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--d",
        "2",
    ]);
    let metrics = fs::read_to_string(out.join("metrics.txt")).unwrap();
    assert!(
        metrics.contains("k=3\nd=2\nalphabet=17\nalpha=0.5\n"),
        "{metrics}"
    );
}

#[test]
fn invalid_configuration_lists_every_problem() {
    let t = tempfile::tempdir().unwrap();
    let out = nrcid(&[
        "evaluate",
        "--dataset",
        "x",
        "--out",
        s(t.path()),
        "--k",
        "0",
        "--alphabet",
        "1",
        "--segment-seconds=-2",
    ]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    for needle in ["k:", "alphabet:", "segment-seconds:"] {
        assert!(err.contains(needle), "{err}");
    }
}

#[test]
fn sweep_rows_and_resume() {
    let t = tempfile::tempdir().unwrap();
    let ds = dataset(t.path());
    let out = t.path().join("sweep");
    ok(&[
        "sweep",
        "--dataset",
        s(&ds),
        "--out",
        s(&out),
        "--k",
        "1..10",
        "--d",
        "2",
    ]);
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
    assert_eq!(csv.lines().next().unwrap(), "k,d,accuracy,macro_f1,status");

    // A resumed run must take finished cells from their markers; a doctored
    // marker shows up verbatim only if the cell was not recomputed.
    let marker = out.join("cells/k3_d2.done");
    fs::write(&marker, "3,2,0.125,0.25,ok\n").unwrap();
    let summary = ok(&[
        "sweep",
        "--dataset",
        s(&ds),
        "--out",
        s(&out),
        "--k",
        "1..11",
        "--d",
        "2",
        "--resume",
    ]);
    assert!(summary.contains("10 resumed"), "{summary}");
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 12);
    assert!(csv.contains("\n3,2,0.125,0.25,ok\n"));

    // Without --resume every cell is recomputed.
    ok(&[
        "sweep",
        "--dataset",
        s(&ds),
        "--out",
        s(&out),
        "--k",
        "1..10",
        "--d",
        "2",
    ]);
    assert!(!fs::read_to_string(out.join("sweep.csv"))
        .unwrap()
        .contains("0.125"));

    // Resuming with different settings is refused.
    let other = nrcid(&[
        "sweep",
        "--dataset",
        s(&ds),
        "--out",
        s(&out),
        "--k",
        "1..10",
        "--d",
        "2",
        "--alphabet",
        "9",
        "--resume",
    ]);
    assert_eq!(code(&other), 2);
}

#[test]
fn inspect_prints_known_parameters() {
    let t = tempfile::tempdir().unwrap();
    let ds = dataset(t.path());
    let store = t.path().join("store");
    ok(&[
        "enroll",
        "--dataset",
        s(&ds),
        "--store",
        s(&store),
        "--k",
        "7",
        "--d",
        "3",
        "--alphabet",
        "9",
    ]);
    let text = ok(&["inspect", s(&store.join("P1.model"))]);
    for line in [
        "participant_id=P1",
        "k=7",
        "d=3",
        "alphabet=9",
        "sessions=day1:59999,day2:59999,day3:59999",
    ] {
        assert!(
            text.lines().any(|l| l == line),
            "{line} missing from\n{text}"
        );
    }
}

#[test]
fn inspect_flags_corruption_and_handles_empty_models() {
    let t = tempfile::tempdir().unwrap();
    let blank = ParticipantModel::from_parts(
        "blank",
        FilterSpec::default_at(1000.0),
        QuantizerSpec::with_alphabet(3),
        Codebook::from_levels(vec![-1.0, 0.0, 1.0]).unwrap(),
        XaModel::new(ModelParams::new(2, 1, 3, AlphaMode::Auto).unwrap()).unwrap(),
        vec![],
    )
    .unwrap();
    let path = t.path().join("blank.model");
    blank.save(&path).unwrap();
    let text = ok(&["inspect", s(&path)]);
    assert!(text.lines().any(|l| l == "contexts=0"), "{text}");

    let corrupt = t.path().join("corrupt.model");
    fs::write(
        &corrupt,
        fs::read_to_string(&path).unwrap().replace("k=2", "k=3"),
    )
    .unwrap();
    let out = nrcid(&["inspect", s(&corrupt)]);
    assert_eq!(code(&out), 4);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));
}
