use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "widths = 8,16\ngroups = 4\nadapter_ratio = 4\ntext_dim = 8\ntime_dim = 8\ntemb_dim = 16\nfeature_dim = 8\n\
resolution = 4\nframes = 4\nheight = 16\nwidth = 16\nnum_clips = 8\nval_clips = 2\nbatch_size = 2\n\
steps = 2\nlr = 1e-3\nddim_steps = 4\neval_samples = 2\nedit_steps = 2\n\
bench_lengths = 2,4\nbench_tokens = 4\nbench_dim = 4\nbench_repeats = 1\n";

fn simda(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_simda")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let o = simda(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn tiny_config(dir: &Path) -> String {
    let p = dir.join("tiny.cfg");
    std::fs::write(&p, TINY).unwrap();
    p.to_str().unwrap().to_string()
}

fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(simda(&[]).status.code(), Some(2));
    assert_eq!(simda(&["fly"]).status.code(), Some(2));
    assert_eq!(simda(&["bench", "--bogus"]).status.code(), Some(2));
    assert_eq!(simda(&["bench", "--seed", "x"]).status.code(), Some(2));
}

#[test]
fn config_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = simda(&["generate", "--seed", "1", "--out-dir", out]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("config error"));
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "no_such_key = 1\n").unwrap();
    assert_eq!(simda(&["bench", "--config", bad.to_str().unwrap(), "--out-dir", out]).status.code(), Some(3));
    assert_eq!(simda(&["bench", "--threads", "0", "--out-dir", out]).status.code(), Some(3));
    let cfg = tiny_config(dir.path());
    assert_eq!(simda(&["generate", "--config", &cfg, "--ckpt", "x.ckpt", "--out-dir", out]).status.code(), Some(3));
}

#[test]
fn bench_report_matches_cost_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("b");
    ok(&["bench", "--config", &cfg, "--threads", "1", "--seed", "5", "--out-dir", out.to_str().unwrap()]);
    let r = read_json(&out.join("bench.json"));
    for key in ["metric", "value", "config", "commit", "seed"] {
        assert!(r.get(key).is_some(), "missing {key}");
    }
    assert_eq!(r["seed"], 5);
    assert_eq!(r["config"]["threads"], 1);
    let rows = r["value"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    for row in rows {
        let (l, n, d) = (row["frames"].as_u64().unwrap(), row["tokens"].as_u64().unwrap(), row["dim"].as_u64().unwrap());
        let want = match row["variant"].as_str().unwrap() {
            "global_st" => 2 * (l * n) * (l * n) * d,
            "lsa" => 4 * l * n * n * d,
            v => panic!("unexpected variant {v}"),
        };
        assert_eq!(row["macs"].as_u64().unwrap(), want);
    }
}

#[test]
fn end_to_end_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let d = |s: &str| dir.path().join(s).to_str().unwrap().to_string();
    ok(&["pretrain-base", "--config", &cfg, "--out-dir", &d("base")]);
    let losses = std::fs::read_to_string(dir.path().join("base/loss.csv")).unwrap();
    assert!(losses.starts_with("step,loss,wallclock_ms\n"));
    assert_eq!(losses.lines().count(), 3);
    ok(&["train", "--config", &cfg, "--ckpt", &d("base/base.ckpt"), "--out-dir", &d("video")]);
    let budget = read_json(&dir.path().join("video/budget.json"));
    assert_eq!(budget["metric"], "parameter_budget");
    let ckpt = d("video/video.ckpt");
    let bytes = std::fs::read(&ckpt).unwrap();
    assert_eq!(&bytes[..8], b"SIMDA001");

    // Same seed in two separate processes gives identical frames.
    let gen = |name: &str| {
        ok(&["generate", "--config", &cfg, "--ckpt", &ckpt, "--caption", "a red square moving right", "--seed", "9", "--out-dir", &d(name)]);
    };
    gen("g1");
    gen("g2");
    for i in 0..4 {
        let f = format!("frame_{i:03}.ppm");
        let a = std::fs::read(dir.path().join("g1").join(&f)).unwrap();
        let b = std::fs::read(dir.path().join("g2").join(&f)).unwrap();
        assert!(a.starts_with(b"P6\n16 16\n255\n"));
        assert_eq!(a, b, "{f}");
    }
    assert!(dir.path().join("g1/manifest.jsonl").exists());

    ok(&["generate", "--config", &cfg, "--ckpt", &ckpt, "--caption", "a red square moving right", "--frames", "2", "--out-dir", &d("short")]);
    assert!(dir.path().join("short/frame_001.ppm").exists());
    assert!(!dir.path().join("short/frame_002.ppm").exists());

    ok(&["edit", "--config", &cfg, "--ckpt", &ckpt, "--caption", "a blue square moving right", "--out-dir", &d("edit")]);
    for sub in ["source", "reconstruction", "edited"] {
        assert!(dir.path().join("edit").join(sub).join("frame_003.ppm").exists());
    }
    assert_eq!(read_json(&dir.path().join("edit/edit.json"))["value"]["steps"], 2);

    ok(&["eval", "--config", &cfg, "--ckpt", &ckpt, "--out-dir", &d("eval")]);
    for f in ["eval_text_similarity.json", "eval_frame_consistency.json", "eval_frechet.json", "eval_validation_loss.json"] {
        assert!(read_json(&dir.path().join("eval").join(f))["value"].is_number(), "{f}");
    }

    // A base checkpoint is not a video checkpoint.
    let o = simda(&["edit", "--config", &cfg, "--ckpt", &d("base/base.ckpt"), "--caption", "a blue square moving right", "--out-dir", &d("x")]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn superres_train_and_apply() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let d = |s: &str| dir.path().join(s).to_str().unwrap().to_string();
    ok(&["superres", "--config", &cfg, "--steps", "1", "--out-dir", &d("sr")]);
    ok(&["superres", "--config", &cfg, "--ckpt", &d("sr/superres.ckpt"), "--caption", "a green circle static", "--out-dir", &d("up")]);
    let low = std::fs::read(dir.path().join("up/low/frame_000.ppm")).unwrap();
    let high = std::fs::read(dir.path().join("up/high/frame_000.ppm")).unwrap();
    assert!(low.starts_with(b"P6\n4 4\n255\n"));
    assert!(high.starts_with(b"P6\n16 16\n255\n"));
    ok(&["superres", "--config", &cfg, "--ckpt", &d("sr/superres.ckpt"), "--caption", "a green circle static", "--input", &d("up/low"), "--out-dir", &d("up2")]);
    assert_eq!(std::fs::read(dir.path().join("up2/high/frame_000.ppm")).unwrap().len(), high.len());
}
