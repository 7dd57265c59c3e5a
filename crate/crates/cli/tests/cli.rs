use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn patlex(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_patlex"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn events(out: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&out.stderr)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap_or_else(|_| panic!("not JSON: {l}")))
        .collect()
}

fn synth(dir: &Path, utterances: &str) {
    ok(&patlex(
        &["synth", "--out", "data", "--utterances", utterances, "--dim", "13", "--seed", "4"],
        dir,
    ));
}

const SMALL_GRID: &[&str] = &[
    "discover", "--manifest", "data/manifest.jsonl", "--temporal", "2,3", "--phonetic", "6,8",
    "--t-max", "3", "--seed", "9",
];

fn discover(dir: &Path, run: &str, extra: &[&str]) -> Output {
    let mut args = SMALL_GRID.to_vec();
    args.extend(["--run", run]);
    args.extend(extra);
    patlex(&args, dir)
}

#[test]
fn version_lists_format_versions() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(&patlex(&["--version"], tmp.path()));
    for name in ["PLXF", "PLXM", "PLXS", "labels.jsonl"] {
        assert!(out.contains(name), "{out}");
    }
}

#[test]
fn single_point_smoke_run() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "10");
    let out = patlex(
        &[
            "discover", "--manifest", "data/manifest.jsonl", "--run", "run", "--temporal", "2",
            "--phonetic", "5", "--t-max", "4", "--convergence", "0",
        ],
        tmp.path(),
    );
    ok(&out);
    let run = tmp.path().join("run");
    assert!(run.join("2x5/model.plxm").exists());
    assert_eq!(fs::read_dir(&run).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count(), 2);
    let history: Value = serde_json::from_str(&fs::read_to_string(run.join("history.json")).unwrap()).unwrap();
    assert_eq!(history["points"]["2x5"].as_array().unwrap().len(), 4);
    let iterations = events(&out).iter().filter(|e| e["event"] == "iteration").count();
    assert_eq!(iterations, 4);
}

#[test]
fn relabel_flag_records_change_counts() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "30");
    ok(&discover(tmp.path(), "run", &["--relabel", "--convergence", "0"]));
    let history: Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("run/history.json")).unwrap()).unwrap();
    for (_, h) in history["points"].as_object().unwrap() {
        let h = h.as_array().unwrap();
        assert_eq!(h.len(), 3);
        assert!(h[0].get("relabel_changes").is_none());
        assert!(h[1]["relabel_changes"].is_u64() && h[2]["relabel_changes"].is_u64());
    }
}

fn run_files(run: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for p in ["2x6", "2x8", "3x6", "3x8"] {
        for f in ["model.plxm", "labels.jsonl", "similarity.plxs"] {
            out.push((format!("{p}/{f}"), fs::read(run.join(p).join(f)).unwrap()));
        }
    }
    out.push(("history.json".into(), fs::read(run.join("history.json")).unwrap()));
    out
}

#[test]
fn reruns_are_deterministic_and_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "30");
    ok(&discover(tmp.path(), "a", &[]));
    ok(&discover(tmp.path(), "b", &[]));
    let a = run_files(&tmp.path().join("a"));
    assert_eq!(a, run_files(&tmp.path().join("b")));

    let again = discover(tmp.path(), "a", &[]);
    ok(&again);
    let skipped: Vec<_> = events(&again)
        .into_iter()
        .filter(|e| e["event"] == "stage_skipped")
        .map(|e| e["stage"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(skipped, ["discover", "similarity"]);
    assert_eq!(a, run_files(&tmp.path().join("a")));

    // Without stage markers the finished checkpoint is resumed, not redone.
    fs::remove_dir_all(tmp.path().join("b/stages")).unwrap();
    let resumed = discover(tmp.path(), "b", &[]);
    ok(&resumed);
    assert!(events(&resumed).iter().any(|e| e["event"] == "resume"));
    assert_eq!(a, run_files(&tmp.path().join("b")));
}

#[test]
fn search_and_eval_report_tables() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "30");
    ok(&discover(tmp.path(), "run", &[]));
    let search = ["search", "--run", "run", "--query", "data/queries/q_word00.plxf", "--top", "3"];
    let first = ok(&patlex(&search, tmp.path()));
    assert_eq!(first, ok(&patlex(&search, tmp.path())));
    let lines: Vec<&str> = first.lines().collect();
    assert_eq!(lines[0], "rank\tdoc_id\tfused_score\tR_2x6\tR_2x8\tR_3x6\tR_3x8");
    assert_eq!(lines.len(), 4);
    let scores: Vec<f64> = lines[1..]
        .iter()
        .map(|l| l.split('\t').nth(2).unwrap().parse().unwrap())
        .collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));

    // A different beta recomputes the similarities instead of reading them.
    ok(&patlex(&[&search[..], &["--beta", "10"]].concat(), tmp.path()));

    let map = ok(&patlex(
        &["eval", "map", "--run", "run", "--judgments", "data/judgments.jsonl"],
        tmp.path(),
    ));
    let last = map.lines().last().unwrap();
    let value: f64 = last.strip_prefix("MAP\t").unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&value));

    let imp = ok(&patlex(&["eval", "impurity", "--run", "run", "--words", "top:2"], tmp.path()));
    let mut rows = imp.lines();
    assert_eq!(rows.next(), Some("word\tm\tn\tcount\tI\timpurity"));
    assert_eq!(rows.count(), 8);
}

#[test]
fn exit_codes_follow_error_classes() {
    let tmp = tempfile::tempdir().unwrap();
    let code = |out: Output| out.status.code().unwrap();
    assert_eq!(code(patlex(&["synth", "--out", "x", "--phones", "1"], tmp.path())), 2);
    assert_eq!(code(patlex(&["synth", "--out", "x", "--noise=-1"], tmp.path())), 2);
    assert_eq!(
        code(patlex(&["discover", "--manifest", "missing.jsonl", "--run", "r"], tmp.path())),
        3
    );
    synth(tmp.path(), "12");
    assert_eq!(code(discover(tmp.path(), "bad", &["--temporal", "3,2"])), 2);
    ok(&discover(tmp.path(), "run", &[]));
    // Reusing a run directory with another configuration.
    let changed = discover(tmp.path(), "run", &["--seed", "10"]);
    assert_eq!(code(changed), 2);
    assert_eq!(code(patlex(&["search", "--run", "nowhere", "--query", "q.plxf"], tmp.path())), 3);
    assert_eq!(code(patlex(&[], tmp.path())), 2);
}

fn write_wav(path: &Path, rate: u32, samples: &[i16]) {
    let data_len = (samples.len() * 2) as u32;
    let mut b = Vec::new();
    b.extend_from_slice(b"RIFF");
    b.extend_from_slice(&(36 + data_len).to_le_bytes());
    b.extend_from_slice(b"WAVEfmt ");
    b.extend_from_slice(&16u32.to_le_bytes());
    b.extend_from_slice(&1u16.to_le_bytes());
    b.extend_from_slice(&1u16.to_le_bytes());
    b.extend_from_slice(&rate.to_le_bytes());
    b.extend_from_slice(&(rate * 2).to_le_bytes());
    b.extend_from_slice(&2u16.to_le_bytes());
    b.extend_from_slice(&16u16.to_le_bytes());
    b.extend_from_slice(b"data");
    b.extend_from_slice(&data_len.to_le_bytes());
    for s in samples {
        b.extend_from_slice(&s.to_le_bytes());
    }
    fs::write(path, b).unwrap();
}

#[test]
fn features_from_wav() {
    let tmp = tempfile::tempdir().unwrap();
    let tone: Vec<i16> = (0..8000)
        .map(|i| ((i as f64 * 2.0 * std::f64::consts::PI * 440.0 / 16000.0).sin() * 8000.0) as i16)
        .collect();
    write_wav(&tmp.path().join("tone.wav"), 16000, &tone);
    ok(&patlex(&["features", "--out", "feats", "tone.wav"], tmp.path()));
    let bytes = fs::read(tmp.path().join("feats/tone.plxf")).unwrap();
    assert_eq!(&bytes[..4], b"PLXF");
    let t = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let f = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    assert_eq!((t, f), (48, 39));
    let manifest = fs::read_to_string(tmp.path().join("feats/manifest.jsonl")).unwrap();
    assert!(manifest.contains("tone.plxf"));

    write_wav(&tmp.path().join("low.wav"), 8000, &tone);
    let out = patlex(&["features", "--out", "feats2", "low.wav"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}
