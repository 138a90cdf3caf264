use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[synth]
n_images = 12
image_size = 48
anomaly_radius = [3, 8]
bubble_radius = [2, 5]
debris_radius = [2, 5]
seed = 4

[train]
batch_size = 4
epochs = 2
probe_size = 4
seed = 9

[train.views]
crop_size = 16
view_size = 16
tile_size = 8

[train.encoder]
channels = [4, 8]
embedding_dim = 8

[train.loss]
k = 5

[eval]
knn_k = 5

[eval.probe]
epochs = 5
"#;

fn pgcon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pgcon")).args(args).output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_dataset(dir: &Path) -> std::path::PathBuf {
    let cfg = dir.join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let data = dir.join("data");
    ok(&pgcon(&["synth", "--config", s(&cfg), "--out", s(&data)]));
    data
}

#[test]
fn synth_is_reproducible_and_writes_the_layout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = pgcon(&["synth", "--config", s(&cfg), "--n", "8", "--seed", "7", "--out", s(out)]);
        ok(&o);
        assert!(String::from_utf8_lossy(&o.stdout).contains("wrote 8 images"));
    }
    assert_eq!(fs::read(a.join("manifest.json")).unwrap(), fs::read(b.join("manifest.json")).unwrap());
    let pngs = walk(&a).into_iter().filter(|p| p.extension().is_some_and(|e| e == "png")).count();
    assert_eq!(pngs, 8);
    let resolved = fs::read_to_string(a.join("config.toml")).unwrap();
    assert!(resolved.contains("n_images = 8"));
    assert!(resolved.contains("seed = 7"));
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn bad_class_mix_is_a_config_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let o = pgcon(&["synth", "--class-mix", "0.3,0.3,0.3,0.3", "--out", s(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("synth.class_mix"));
}

#[test]
fn unknown_flags_and_keys_exit_2() {
    assert_eq!(pgcon(&["synth", "--out", "x", "--bogus"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[train]\nbatchsize = 3\n").unwrap();
    let o = pgcon(&["synth", "--config", s(&cfg), "--out", s(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_inputs_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = pgcon(&["pretrain", "--data", s(&dir.path().join("none")), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(3));
    let o = pgcon(&["analyze", s(&dir.path().join("none.csv")), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn help_documents_every_flag() {
    let o = pgcon(&["pretrain", "--help"]);
    ok(&o);
    let text = String::from_utf8_lossy(&o.stdout);
    for flag in [
        "--config", "--data", "--out", "--mode", "--epochs", "--max-steps", "--seed", "--batch-size", "--lr", "--workers",
        "--snapshot-every", "--checkpoint-every", "--resume",
    ] {
        assert!(text.contains(flag), "{flag} missing from help");
    }
}

#[test]
fn pretrain_eval_and_analyze_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_dataset(dir.path());
    let cfg = dir.path().join("tiny.toml");
    let run = dir.path().join("run");
    ok(&pgcon(&[
        "pretrain", "--config", s(&cfg), "--data", s(&data), "--out", s(&run), "--mode", "wincon", "--max-steps", "4",
        "--snapshot-every", "2",
    ]));
    let metrics = fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 4);
    let first: serde_json::Value = serde_json::from_str(metrics.lines().next().unwrap()).unwrap();
    assert!(first["mean_win_sim"].is_number());
    assert!(fs::read_to_string(run.join("config.toml")).unwrap().contains("mode = \"wincon\""));
    let ckpt = run.join("checkpoints").join("final.pgcw");
    assert!(ckpt.exists());

    let an = dir.path().join("an");
    let o = pgcon(&["analyze", s(&run.join("snapshots.csv")), "--out", s(&an)]);
    ok(&o);
    let table = fs::read_to_string(an.join("analysis.csv")).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.iter().map(|r| r.split(',').next().unwrap()).collect::<Vec<_>>(), ["0", "2", "4"]);
    for r in &rows {
        let uniform: f64 = r.split(',').nth(3).unwrap().parse().unwrap();
        assert!(uniform <= 0.0);
    }
    assert!(an.join("pca_000_step_000000.csv").exists());

    let ev = dir.path().join("ev");
    let o = pgcon(&[
        "eval", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--train", s(&data), "--test", s(&data), "--knn-k", "1",
        "--out", s(&ev),
    ]);
    ok(&o);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(ev.join("eval_report.json")).unwrap()).unwrap();
    assert_eq!(report["top1_accuracy"], 1.0);
    assert_eq!(report["n_test"], 12);
    assert_eq!(report["confusion"].as_array().unwrap().len(), 4);

    let o = pgcon(&[
        "eval", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--train", s(&data), "--test", s(&data), "--task", "linear",
    ]);
    ok(&o);
    assert!(String::from_utf8_lossy(&o.stdout).contains("best_val_accuracy"));
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_dataset(dir.path());
    let cfg = dir.path().join("tiny.toml");
    let (full, part, resumed) = (dir.path().join("full"), dir.path().join("part"), dir.path().join("resumed"));
    let base = ["--config", s(&cfg), "--data", s(&data), "--max-steps", "5", "--checkpoint-every", "2"];
    ok(&pgcon(&[&["pretrain"], &base[..], &["--out", s(&full)]].concat()));
    ok(&pgcon(&[&["pretrain"], &base[..], &["--out", s(&part)]].concat()));
    let mid = part.join("checkpoints").join("step_000002.pgcw");
    ok(&pgcon(&[&["pretrain"], &base[..], &["--out", s(&resumed), "--resume", s(&mid)]].concat()));
    let read = |d: &Path| fs::read(d.join("checkpoints").join("final.pgcw")).unwrap();
    assert_eq!(read(&full), read(&resumed));
    let tail: Vec<String> = fs::read_to_string(full.join("metrics.jsonl")).unwrap().lines().skip(2).map(String::from).collect();
    let res: Vec<String> = fs::read_to_string(resumed.join("metrics.jsonl")).unwrap().lines().map(String::from).collect();
    assert_eq!(tail, res);
}

#[test]
fn divergence_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_dataset(dir.path());
    let cfg = dir.path().join("tiny.toml");
    let o = pgcon(&[
        "pretrain", "--config", s(&cfg), "--data", s(&data), "--out", s(&dir.path().join("o")), "--lr", "1e30",
        "--max-steps", "20",
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}
