use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn porogen(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_porogen"))
        .args(args)
        .current_dir(dir)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout)
        .unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {}", String::from_utf8_lossy(&o.stdout)))
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Small corpus + one-epoch 16px checkpoint shared by several tests.
fn trained(dir: &Path) {
    let o = porogen(
        dir,
        &[
            "synth-corpus",
            "--classes",
            "10",
            "--per-class",
            "4",
            "--size",
            "16",
            "--seed",
            "7",
            "--out",
            "corpus",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = porogen(
        dir,
        &[
            "train",
            "--corpus",
            "corpus",
            "--epochs",
            "1",
            "--batch",
            "8",
            "--base-channels",
            "2",
            "--latent-dim",
            "8",
            "--seed",
            "3",
            "--out",
            "ckpt",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn synth_corpus_writes_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let o = porogen(
        tmp.path(),
        &[
            "--json",
            "synth-corpus",
            "--classes",
            "10",
            "--per-class",
            "5",
            "--size",
            "16",
            "--seed",
            "7",
            "--out",
            "c",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let j = stdout_json(&o);
    assert_eq!(j["tiles"], 50);
    assert_eq!(
        j["class_counts"],
        serde_json::json!([5, 5, 5, 5, 5, 5, 5, 5, 5, 5])
    );
    let manifest: Value =
        serde_json::from_slice(&fs::read(tmp.path().join("c/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["tiles"].as_array().unwrap().len(), 50);
    assert!(tmp.path().join("c/tiles/4").is_dir());
}

#[test]
fn synth_corpus_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = porogen(
            tmp.path(),
            &[
                "--workers",
                "1",
                "synth-corpus",
                "--classes",
                "4",
                "--per-class",
                "3",
                "--size",
                "16",
                "--seed",
                "9",
                "--out",
                out,
            ],
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    assert_eq!(
        fs::read(tmp.path().join("a/manifest.json")).unwrap(),
        fs::read(tmp.path().join("b/manifest.json")).unwrap()
    );
}

#[test]
fn dry_run_has_no_side_effects() {
    let tmp = tempfile::tempdir().unwrap();
    let o = porogen(
        tmp.path(),
        &[
            "--dry-run",
            "--sat-min",
            "0.3",
            "synth-corpus",
            "--per-class",
            "5",
            "--size",
            "32",
            "--out",
            "c",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let j = stdout_json(&o);
    assert_eq!(j["command"], "synth-corpus");
    assert_eq!(j["config"]["segmentation"]["sat_min"], 0.3);
    assert_eq!(j["config"]["corpus"]["tile"], 32);
    assert!(!tmp.path().join("c").exists());
}

#[test]
fn layering_file_env_flag() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("p.toml"),
        "[segmentation]\nsat_min = 0.3\nval_min = 0.3\n[corpus]\nper_class = 7\n",
    )
    .unwrap();
    let run = |env: Option<(&str, &str)>, extra: &[&str]| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_porogen"));
        cmd.current_dir(tmp.path())
            .args(["--config", "p.toml", "--dry-run"])
            .args(extra)
            .args(["synth-corpus"]);
        if let Some((k, v)) = env {
            cmd.env(k, v);
        }
        let o = cmd.output().unwrap();
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        stdout_json(&o)
    };
    let file = run(None, &[]);
    assert_eq!(file["config"]["segmentation"]["sat_min"], 0.3);
    assert_eq!(file["config"]["segmentation"]["hue_lo"], 0.5);
    assert_eq!(file["config"]["corpus"]["per_class"], 7);
    let env = run(Some(("POROGEN_SAT_MIN", "0.4")), &[]);
    assert_eq!(env["config"]["segmentation"]["sat_min"], 0.4);
    assert_eq!(env["config"]["segmentation"]["val_min"], 0.3);
    let flag = run(Some(("POROGEN_SAT_MIN", "0.4")), &["--sat-min", "0.45"]);
    assert_eq!(flag["config"]["segmentation"]["sat_min"], 0.45);
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.toml"), "[segmentation]\nhue_low = 0.5\n").unwrap();
    let o = porogen(tmp.path(), &["--config", "bad.toml", "synth-corpus"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("hue_low"));

    let o = porogen(tmp.path(), &["--val-min=-0.1", "synth-corpus"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));

    let o = porogen(tmp.path(), &["--sat-min", "1.5", "synth-corpus"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn empty_source_dir_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    fs::create_dir(tmp.path().join("src")).unwrap();
    let o = porogen(
        tmp.path(),
        &["ingest", "--src", "src", "--out", "c", "--tile", "16"],
    );
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn train_generate_validate_logsynth() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    trained(dir);
    assert!(dir.join("ckpt/final.ckpt").exists());
    let log = fs::read_to_string(dir.join("ckpt/train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1);
    let first: Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(first["epoch"], 1);

    // Explicit class count that disagrees with the corpus.
    let o = porogen(
        dir,
        &[
            "train",
            "--corpus",
            "corpus",
            "--classes",
            "5",
            "--epochs",
            "1",
            "--out",
            "x",
        ],
    );
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("classes"), "{}", stderr(&o));

    let gen = |args: &[&str]| {
        let mut full = vec!["--json", "generate", "--ckpt", "ckpt/final.ckpt", "--out", "g"];
        full.extend_from_slice(args);
        porogen(dir, &full)
    };
    let o = gen(&["--phi", "0.37", "--n", "4", "--seed", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let j = stdout_json(&o);
    assert_eq!(j["class_index"], 4);
    assert_eq!(j["images"].as_array().unwrap().len(), 4);
    assert!(dir.join("g/sample_c04_0003.png").exists());
    assert_eq!(stdout_json(&gen(&["--phi", "0.0"]))["class_index"], 0);
    assert_eq!(stdout_json(&gen(&["--phi", "0.745"]))["class_index"], 9);
    assert_eq!(stdout_json(&gen(&["--class", "9"]))["class_index"], 9);
    assert_eq!(stdout_json(&gen(&["--phi", "0.9"]))["class_index"], 9);
    assert_eq!(code(&gen(&["--phi", "0.9", "--no-clamp"])), 3);
    assert_eq!(code(&gen(&["--class", "10"])), 2);

    let o = porogen(
        dir,
        &[
            "--json",
            "validate",
            "--ckpt",
            "ckpt/final.ckpt",
            "--per-class",
            "3",
            "--out",
            "report",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let j = stdout_json(&o);
    let acc = j["overall_accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    for f in ["report.json", "scatter.csv", "scatter.png"] {
        assert!(dir.join("report").join(f).exists(), "{f}");
    }
    let o = porogen(
        dir,
        &[
            "--json",
            "validate",
            "--ckpt",
            "ckpt/final.ckpt",
            "--per-class",
            "3",
            "--margin",
            "10",
            "--margin-mode",
            "absolute",
            "--out",
            "r2",
        ],
    );
    assert_eq!(stdout_json(&o)["overall_accuracy"], 1.0);

    let mut csv = String::from("depth_m,porosity\n");
    for i in 0..20 {
        csv.push_str(&format!(
            "{},{}\n",
            1992.0 + 8.0 * i as f64 / 19.0,
            0.05 + 0.65 * i as f64 / 19.0
        ));
    }
    fs::write(dir.join("well.csv"), csv).unwrap();
    let o = porogen(
        dir,
        &[
            "--json",
            "logsynth",
            "--log",
            "well.csv",
            "--ckpt",
            "ckpt/final.ckpt",
            "--seed",
            "5",
            "--out",
            "track",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(stdout_json(&o)["entries"], 20);
    let m: Value = serde_json::from_slice(&fs::read(dir.join("track/track_manifest.json")).unwrap()).unwrap();
    assert_eq!(m["entries"].as_array().unwrap().len(), 20);
    assert!(dir.join("track/track.png").exists());
    assert!(dir.join("track/images/depth_1992.000.png").exists());

    fs::write(dir.join("bad.csv"), "depth_m,porosity\n1995,0.1\n1993,0.2\n").unwrap();
    let o = porogen(
        dir,
        &[
            "logsynth",
            "--log",
            "bad.csv",
            "--ckpt",
            "ckpt/final.ckpt",
            "--out",
            "t2",
        ],
    );
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("row 2"), "{}", stderr(&o));

    let o = porogen(dir, &["validate", "--ckpt", "missing.ckpt"]);
    assert_eq!(code(&o), 4);
    fs::write(dir.join("junk.ckpt"), b"not a checkpoint").unwrap();
    let o = porogen(dir, &["generate", "--ckpt", "junk.ckpt", "--class", "1"]);
    assert_eq!(code(&o), 4);
}

#[test]
fn env_mirrors_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_porogen"))
        .current_dir(tmp.path())
        .args(["--dry-run", "synth-corpus"])
        .env("POROGEN_SEED", "42")
        .env("POROGEN_PER_CLASS", "9")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let j = stdout_json(&o);
    assert_eq!(j["config"]["corpus"]["seed"], 42);
    assert_eq!(j["config"]["corpus"]["per_class"], 9);
}
