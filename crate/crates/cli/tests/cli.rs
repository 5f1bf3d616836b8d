use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "--layers",
    "1",
    "--hidden",
    "16",
    "--heads",
    "2",
    "--ffn",
    "32",
    "--max-len",
    "16",
];

fn dse(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dse"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn dse")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = dse(dir, args);
    assert!(
        out.status.success(),
        "dse {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn with_tiny<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().copied().chain(TINY.iter().copied()).collect()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Data, teacher and cached scores shared by several tests.
fn prepared() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &["gen-data", "--size", "600", "--seed", "1", "--out", "data.tsv"],
    );
    ok(
        d,
        &with_tiny(&[
            "train-teacher",
            "--data",
            "data.tsv",
            "--out",
            "teacher.ckpt",
            "--epochs",
            "6",
            "--lr",
            "3e-3",
        ]),
    );
    ok(
        d,
        &[
            "cache-scores",
            "--teacher",
            "teacher.ckpt",
            "--data",
            "data.tsv",
            "--out",
            "scored.tsv",
        ],
    );
    dir
}

#[test]
fn distilled_student_beats_untrained_student() {
    let dir = prepared();
    let d = dir.path();
    for (name, epochs) in [("untrained", "0"), ("trained", "8")] {
        let out = format!("{name}.ckpt");
        ok(
            d,
            &with_tiny(&[
                "distill",
                "--data",
                "scored.tsv",
                "--out",
                &out,
                "--epochs",
                epochs,
                "--lr",
                "3e-3",
            ]),
        );
        ok(
            d,
            &[
                "eval",
                "--model",
                &out,
                "--data",
                "scored.tsv",
                "--out",
                &format!("{name}.json"),
            ],
        );
    }
    let acc = |name: &str| {
        json(&d.join(format!("{name}.json")))["metrics"]["accuracy"]
            .as_f64()
            .unwrap()
    };
    assert!(
        acc("trained") > acc("untrained") + 0.1,
        "{} vs {}",
        acc("trained"),
        acc("untrained")
    );

    // Teacher checkpoints evaluate through the same command.
    ok(
        d,
        &[
            "eval",
            "--model",
            "teacher.ckpt",
            "--data",
            "data.tsv",
            "--out",
            "teacher.json",
        ],
    );
    assert_eq!(json(&d.join("teacher.json"))["kind"], "teacher");
}

#[test]
fn invalid_alpha_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-data", "--size", "20", "--out", "data.tsv"]);
    let out = dse(
        d,
        &[
            "distill", "--data", "data.tsv", "--out", "s.ckpt", "--alpha", "1.5",
        ],
    );
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("alpha"), "{err}");
    assert!(!d.join("s.ckpt").exists());
}

#[test]
fn distilling_unscored_data_needs_alpha_zero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-data", "--size", "40", "--out", "data.tsv"]);
    let out = dse(
        d,
        &with_tiny(&[
            "distill", "--data", "data.tsv", "--out", "s.ckpt", "--epochs", "1",
        ]),
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("teacher logits"));
    ok(
        d,
        &with_tiny(&[
            "distill", "--data", "data.tsv", "--out", "s.ckpt", "--epochs", "1", "--alpha", "0",
        ]),
    );
}

#[test]
fn missing_input_reports_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dse(
        dir.path(),
        &[
            "eval",
            "--model",
            "nope.ckpt",
            "--data",
            "nope.tsv",
            "--out",
            "e.json",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));
}

#[test]
fn manifest_replays_and_detects_drift() {
    let dir = prepared();
    let d = dir.path();
    let args = with_tiny(&[
        "distill",
        "--data",
        "scored.tsv",
        "--out",
        "s.ckpt",
        "--epochs",
        "2",
        "--seed",
        "5",
    ]);
    ok(d, &args);
    let manifest = d.join("s.ckpt.manifest.json");
    let recorded = json(&manifest);
    assert_eq!(recorded["command"]["name"], "distill");
    assert_eq!(recorded["seed"], 5);
    assert_eq!(recorded["command"]["args"]["data"], "scored.tsv");
    assert!(recorded["artifacts"]["s.ckpt"].is_string());
    assert!(recorded["artifacts"]["s.ckpt.trace.csv"].is_string());

    let before = std::fs::read(d.join("s.ckpt")).unwrap();
    let stdout = ok(d, &["replay", "--manifest", "s.ckpt.manifest.json"]);
    assert!(stdout.contains("match"), "{stdout}");
    assert_eq!(std::fs::read(d.join("s.ckpt")).unwrap(), before);

    // Replays resolve paths against the manifest, not the working directory.
    let elsewhere = tempfile::tempdir().unwrap();
    ok(
        elsewhere.path(),
        &["replay", "--manifest", manifest.to_str().unwrap()],
    );

    let mut drifted = recorded.clone();
    drifted["metrics"]["best_epoch"] = serde_json::json!(99);
    std::fs::write(&manifest, serde_json::to_string(&drifted).unwrap()).unwrap();
    let out = dse(d, &["replay", "--manifest", "s.ckpt.manifest.json"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("metrics differ"));
}

#[test]
fn frozen_distill_keeps_encoder_checksum() {
    let dir = prepared();
    let d = dir.path();
    ok(
        d,
        &with_tiny(&[
            "distill",
            "--data",
            "scored.tsv",
            "--out",
            "f.ckpt",
            "--epochs",
            "2",
            "--freeze-encoder",
            "--init-teacher",
            "teacher.ckpt",
        ]),
    );
    let m = json(&d.join("f.ckpt.manifest.json"));
    assert_eq!(
        m["metrics"]["encoder_checksum_init"],
        m["metrics"]["encoder_checksum_final"]
    );
    assert_eq!(m["config"]["train"]["freeze_encoder"], true);
}

#[test]
fn index_query_and_benchmark() {
    let dir = prepared();
    let d = dir.path();
    ok(
        d,
        &with_tiny(&[
            "distill",
            "--data",
            "scored.tsv",
            "--out",
            "s.ckpt",
            "--epochs",
            "1",
        ]),
    );
    std::fs::write(
        d.join("catalog.txt"),
        "tok10 tok11 tok12\ntok200 tok201\n\ntok10 tok12\ntok300\n",
    )
    .unwrap();
    ok(
        d,
        &[
            "build-index",
            "--model",
            "s.ckpt",
            "--catalog",
            "catalog.txt",
            "--out",
            "c.idx",
        ],
    );
    let m = json(&d.join("c.idx.manifest.json"));
    assert_eq!(m["metrics"]["N"], 4);

    let stdout = ok(
        d,
        &[
            "query",
            "--model",
            "s.ckpt",
            "--index",
            "c.idx",
            "--query",
            "tok10 tok11",
            "--k",
            "3",
        ],
    );
    let results: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    let hits = results["results"].as_array().unwrap();
    assert_eq!(hits.len(), 3);
    let scores: Vec<f64> = hits.iter().map(|h| h["score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]), "{scores:?}");

    // An index built by another model is refused.
    ok(
        d,
        &with_tiny(&[
            "distill",
            "--data",
            "scored.tsv",
            "--out",
            "other.ckpt",
            "--epochs",
            "1",
            "--seed",
            "9",
        ]),
    );
    let out = dse(
        d,
        &[
            "query",
            "--model",
            "other.ckpt",
            "--index",
            "c.idx",
            "--query",
            "tok10",
        ],
    );
    assert!(!out.status.success());

    let table = ok(
        d,
        &[
            "benchmark",
            "--scenario",
            "offline",
            "--n",
            "6",
            "--student",
            "s.ckpt",
            "--teacher",
            "teacher.ckpt",
            "--out",
            "bench.json",
        ],
    );
    assert!(table.contains("Speedup"), "{table}");
    let report = json(&d.join("bench.json"));
    assert_eq!(report["teacher_encoder_passes"], 36);
    assert_eq!(report["dse_encoder_passes"], 6);
    assert_eq!(report["dse_head_evals"], 36);
}
