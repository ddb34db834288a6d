use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn tama(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tama"))
        .args(args)
        .env_remove("TAMA_CACHE_DIR")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Two short synthetic series with labels and types.
fn dataset(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    let o = tama(&["gen-synth", "--out", s(&data), "--count", "2", "--length", "1200", "--seed", "4"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    data.join("manifest.toml")
}

fn detect(manifest: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["detect", "--manifest", s(manifest), "--out", s(out), "--window", "300"];
    args.extend_from_slice(extra);
    tama(&args)
}

#[test]
fn missing_credentials_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path());
    let o = Command::new(env!("CARGO_BIN_EXE_tama"))
        .args(["detect", "--manifest", s(&manifest), "--out", s(&dir.path().join("run"))])
        .args(["--backend", "http", "--api-key-env", "TAMA_TEST_UNSET_KEY"])
        .env_remove("TAMA_TEST_UNSET_KEY")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("TAMA_TEST_UNSET_KEY"));
}

#[test]
fn invalid_configuration_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path());
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "alpha = 2.0\n").unwrap();
    let o = tama(&["detect", "--config", s(&cfg), "--manifest", s(&manifest), "--out", s(&dir.path().join("r"))]);
    assert_eq!(code(&o), 2);
    let o = detect(&manifest, &dir.path().join("r2"), &["--backend", "oracle", "--stride", "300"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn oracle_run_scores_perfectly_and_evaluates_from_the_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path());
    let run = dir.path().join("run");
    let o = detect(&manifest, &run, &["--backend", "oracle", "--cache-mode", "off"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["config.toml", "summary.json", "eval/aggregate.json", "eval/pat.csv", "eval/summary.txt"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    let series = ["synth_000", "synth_001"];
    for name in series {
        for f in ["zraw.json", "result.json", "0.png", "ref_0.png"] {
            assert!(run.join(name).join(f).is_file(), "{name}/{f} missing");
        }
    }
    let zraw: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("synth_000/zraw.json")).unwrap()).unwrap();
    assert_eq!(zraw["schema"], "tama.zraw/v1");

    // eval needs only the run directory
    let o = tama(&["eval", s(&run), "--out", s(&dir.path().join("eval2"))]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("mean"));
    let agg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("eval2/aggregate.json")).unwrap()).unwrap();
    assert_eq!(agg["count"], 2);
    assert_eq!(agg["mean"]["f1"], 1.0);
    assert_eq!(agg["std"]["f1"], 0.0);
    for name in series {
        let r: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(format!("eval2/{name}.json"))).unwrap())
                .unwrap();
        assert_eq!(r["f1"], 1.0, "{name}");
    }
}

#[test]
fn pat_sweep_writes_one_row_per_alpha_and_series() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path());
    let run = dir.path().join("run");
    let noisy = ["--backend", "oracle", "--cache-mode", "off", "--oracle-fidelity", "noisy:1:5:0.1"];
    assert_eq!(code(&detect(&manifest, &run, &noisy)), 0);
    let csv = dir.path().join("pat.csv");
    let o = tama(&["sweep-pat", s(&run), "--alphas", "0,0.2,0.4,0.6,0.8,1", "--out", s(&csv)]);
    assert_eq!(code(&o), 0);
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "series,alpha,precision,recall,f1,auc_pr,auc_roc");
    assert_eq!(lines.len(), 1 + 2 * 6);
    for name in ["synth_000", "synth_001"] {
        let f1: Vec<f64> = lines
            .iter()
            .filter(|l| l.starts_with(&format!("{name},")))
            .map(|l| l.split(',').nth(4).unwrap().parse().unwrap())
            .collect();
        assert_eq!(f1.len(), 6);
        assert!(f1.windows(2).all(|w| w[1] <= w[0]), "{name}: {f1:?}");
    }
}

#[test]
fn recorded_run_replays_identically_and_misses_fail() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path());
    let cache = dir.path().join("cache");
    let first = dir.path().join("first");
    let record = ["--backend", "oracle", "--cache-mode", "record", "--cache-dir", s(&cache), "--oracle-fidelity", "noisy:2:5:0.3"];
    assert_eq!(code(&detect(&manifest, &first, &record)), 0);

    let o = tama(&["cache", "inspect", s(&cache)]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.contains("analyze") && out.contains("reference"), "{out}");

    let second = dir.path().join("second");
    let o = detect(&manifest, &second, &["--backend", "replay", "--cache-dir", s(&cache)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["synth_000/zraw.json", "synth_001/result.json", "eval/aggregate.json", "eval/pat.csv"] {
        assert_eq!(std::fs::read(first.join(f)).unwrap(), std::fs::read(second.join(f)).unwrap(), "{f}");
    }

    // a different window size asks for responses that were never recorded
    let third = dir.path().join("third");
    let o = tama(&[
        "detect", "--manifest", s(&manifest), "--out", s(&third), "--window", "200", "--backend", "replay",
        "--cache-dir", s(&cache),
    ]);
    assert_eq!(code(&o), 1);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(third.join("summary.json")).unwrap()).unwrap();
    assert!(summary["series"].as_array().unwrap().iter().all(|s| s["ok"] == false));

    let o = tama(&["cache", "purge", s(&cache)]);
    assert_eq!(code(&o), 0);
    let o = tama(&["cache", "inspect", s(&cache)]);
    assert!(stdout(&o).contains(": 0 entries"), "{}", stdout(&o));
}

#[test]
fn eval_reports_missing_results_as_partial() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path());
    let run = dir.path().join("run");
    assert_eq!(code(&detect(&manifest, &run, &["--backend", "oracle", "--cache-mode", "off"])), 0);
    std::fs::remove_file(run.join("synth_001/result.json")).unwrap();
    let o = tama(&["eval", s(&run)]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).is_empty() || !stdout(&o).contains("synth_001  1."));
    let summary = std::fs::read_to_string(run.join("eval/summary.txt")).unwrap();
    assert!(summary.contains("synth_001  missing result"), "{summary}");
}

#[test]
fn render_writes_windows_and_zoom() {
    let dir = tempfile::tempdir().unwrap();
    let series = dir.path().join("x.csv");
    let text: String = (0..500).map(|t| format!("{t},{}\n", (t as f64 / 20.0).sin())).collect();
    std::fs::write(&series, format!("time,value\n{text}")).unwrap();
    let out = dir.path().join("img");
    let o = tama(&[
        "render", s(&series), "--out", s(&out), "--column", "1", "--window", "200", "--zoom", "100,140", "--no-grid",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    // starts 0, 100, 200, 300 and the anchored tail at 300 coincides
    for f in ["0.png", "1.png", "2.png", "3.png", "zoom.png"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert!(!out.join("4.png").exists());
    let (w, h, _) = tama_core::plotrender::decode_png(&std::fs::read(out.join("zoom.png")).unwrap()).unwrap();
    assert_eq!((w, h), (1600, 600));
}

#[test]
fn gen_synth_rejects_overlapping_spec() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    std::fs::write(
        &spec,
        r#"
[[series]]
name = "a"
length = 800
injections = [
  { kind = "trend", interval = [100, 160], magnitude = 1.5 },
  { kind = "point", interval = [150, 150], magnitude = 3.0 },
]
"#,
    )
    .unwrap();
    let o = tama(&["gen-synth", "--out", s(&dir.path().join("d")), "--config", s(&spec)]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("trend") && err.contains("point") && err.contains("overlap"), "{err}");
}
