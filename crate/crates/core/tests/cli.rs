use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hlgt::engine::{BenchReport, MetricReport};

const SMALL: &str = r#"
[model]
video_dim = 8
query_dim = 8
dim = 8
heads = 2
slots = 3
phrases = 2
fusion_hidden = 8
max_frames = 16

[synth]
samples = 20
frames = 16
words = 4
dim = 8
phrases = 2

[train]
epochs = 2
batch_size = 4
"#;

fn hlgt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hlgt"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes the small config, synthesizes a dataset and trains a checkpoint.
fn setup(dir: &Path) {
    fs::write(dir.join("small.toml"), SMALL).unwrap();
    let cfg = dir.join("small.toml");
    let o = hlgt(&["synth", "--config", p(&cfg), "--out", p(&dir.join("data"))]);
    assert_eq!(code(&o), 0, "{o:?}");
    let o = hlgt(&[
        "train",
        "--config",
        p(&cfg),
        "--data",
        p(&dir.join("data")),
        "--out",
        p(&dir.join("ckpt")),
        "--quiet",
    ]);
    assert_eq!(code(&o), 0, "{o:?}");
    assert!(stdout(&o).starts_with("best epoch"));
}

#[test]
fn synth_is_reproducible_and_validated() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    for out in ["a", "b"] {
        let o = hlgt(&[
            "synth",
            "--config",
            p(&cfg),
            "--seed",
            "3",
            "--out",
            p(&dir.path().join(out)),
        ]);
        assert_eq!(code(&o), 0, "{o:?}");
    }
    let read = |d: &str, f: &str| fs::read(dir.path().join(d).join(f)).unwrap();
    let manifest = String::from_utf8(read("a", "manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 20);
    assert_eq!(read("a", "manifest.jsonl"), read("b", "manifest.jsonl"));
    assert_eq!(
        read("a", "features/s00007_video.hlgt"),
        read("b", "features/s00007_video.hlgt")
    );
    assert!(String::from_utf8(read("a", "synth.toml"))
        .unwrap()
        .contains("seed = 3"));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[synth]\nmin_fraction = 0.9\nmax_fraction = 0.1\n").unwrap();
    let o = hlgt(&[
        "synth",
        "--config",
        p(&bad),
        "--out",
        p(&dir.path().join("c")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("error:"));
}

#[test]
fn train_eval_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d);
    for f in [
        "header.json",
        "params.hlgt",
        "history.jsonl",
        "config.toml",
        "val_metrics.json",
    ] {
        assert!(d.join("ckpt").join(f).is_file(), "{f}");
    }
    assert_eq!(
        fs::read_to_string(d.join("ckpt/history.jsonl"))
            .unwrap()
            .lines()
            .count(),
        2
    );

    let o = hlgt(&[
        "eval",
        "--checkpoint",
        p(&d.join("ckpt")),
        "--data",
        p(&d.join("data")),
        "--n",
        "1,5",
        "--m",
        "0.3,0.5,0.7",
    ]);
    assert_eq!(code(&o), 0, "{o:?}");
    let rows = stdout(&o)
        .lines()
        .filter(|l| {
            l.split_whitespace()
                .filter_map(|w| w.parse::<f64>().ok())
                .count()
                == 3
        })
        .count();
    assert_eq!(rows, 6, "{}", stdout(&o));

    let o = hlgt(&[
        "eval",
        "--checkpoint",
        p(&d.join("ckpt")),
        "--data",
        p(&d.join("data")),
        "--split",
        "val",
        "--json",
    ]);
    assert_eq!(code(&o), 0, "{o:?}");
    let report: MetricReport = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(report.samples, 4);
    assert_eq!(report.entries.len(), 6);

    let o = hlgt(&[
        "predict",
        "--checkpoint",
        p(&d.join("ckpt")),
        "--features",
        p(&d.join("data/features/s00000_video.hlgt")),
        "--query-features",
        p(&d.join("data/features/s00000_query.hlgt")),
        "--duration",
        "120",
        "--json",
    ]);
    assert_eq!(code(&o), 0, "{o:?}");
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    let (s, e) = (
        v["start_sec"].as_f64().unwrap(),
        v["end_sec"].as_f64().unwrap(),
    );
    assert!(0.0 <= s && s <= e && e <= 120.0);

    let o = hlgt(&[
        "train",
        "--config",
        p(&d.join("small.toml")),
        "--data",
        p(&d.join("data")),
        "--out",
        p(&d.join("ckpt2")),
        "--resume",
        p(&d.join("ckpt")),
        "--quiet",
    ]);
    assert_eq!(code(&o), 0, "{o:?}");
}

#[test]
fn train_rejects_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d);
    let o = hlgt(&[
        "train",
        "--config",
        p(&d.join("small.toml")),
        "--data",
        p(&d.join("nowhere")),
        "--out",
        p(&d.join("x")),
    ]);
    assert_eq!(code(&o), 2);

    let wide = d.join("wide.toml");
    fs::write(&wide, SMALL.replace("dim = 8\nheads", "dim = 16\nheads")).unwrap();
    let o = hlgt(&[
        "train",
        "--config",
        p(&wide),
        "--data",
        p(&d.join("data")),
        "--out",
        p(&d.join("y")),
        "--resume",
        p(&d.join("ckpt")),
    ]);
    assert_eq!(code(&o), 2, "{o:?}");
    assert!(String::from_utf8_lossy(&o.stderr).contains("resume"));
}

#[test]
fn gradcheck_scopes_and_injection() {
    let o = hlgt(&["gradcheck", "--scope", "blocks"]);
    assert_eq!(code(&o), 0, "{o:?}");
    assert!(stdout(&o).contains("PASS blocks/trm"));
    assert!(stdout(&o).ends_with("gradcheck passed\n"));

    let o = hlgt(&[
        "gradcheck",
        "--scope",
        "blocks",
        "--inject",
        "softmax_rows:1.5",
    ]);
    assert_eq!(code(&o), 1);
    let out = stdout(&o);
    assert!(out.contains("FAIL blocks/attention_fusion"), "{out}");
    assert!(out.contains("gradcheck FAILED"));

    assert_eq!(code(&hlgt(&["gradcheck", "--scope", "nope"])), 2);
}

#[test]
fn bench_reports_throughput() {
    let o = hlgt(&[
        "bench",
        "--samples",
        "2",
        "--repeats",
        "1",
        "--decoder-calls",
        "5",
        "--json",
    ]);
    assert_eq!(code(&o), 0, "{o:?}");
    let r: BenchReport = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(r.samples, 2);
    assert!(r.forward_samples_per_second > 0.0 && r.train_step_samples_per_second > 0.0);
    assert!(
        r.decoder_parallel_calls_per_second > 0.0 && r.decoder_sequential_calls_per_second > 0.0
    );
    assert!(r.decoder_max_abs_diff < 1e-5);
}
