mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::{small_config_toml, write};

fn cartal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cartal"))
        .args(args)
        .output()
        .expect("spawn cartal")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn small(dir: &Path, seed_size: usize, strategies: &[&str]) -> String {
    let path = dir.join("config.toml");
    write(
        &path,
        &small_config_toml(60, seed_size, 10, 2, strategies, &[1, 2]),
    );
    path.to_str().unwrap().to_string()
}

#[test]
fn run_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), 20, &["random", "mcme", "bald", "dal"]);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = cartal(&[
            "run",
            "--config",
            &cfg,
            "--out",
            out.to_str().unwrap(),
            "--parallel",
            "3",
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for file in [
        "rounds.csv",
        "summary.csv",
        "acquired.csv",
        "aggregate.csv",
        "datamap.csv",
        "manifest.json",
    ] {
        let x = fs::read(a.join(file)).unwrap();
        assert_eq!(x, fs::read(b.join(file)).unwrap(), "{file} differs");
    }
    let summary = fs::read_to_string(a.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 8);
    assert!(summary.lines().next().unwrap().contains("acc_clean"));
}

#[test]
fn unknown_strategy_exits_1_and_lists_valid_names() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), 20, &["random"]);
    let o = cartal(&[
        "run",
        "--config",
        &cfg,
        "--out",
        dir.path().join("o").to_str().unwrap(),
        "--strategies",
        "random,coreset",
    ]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("coreset"), "{err}");
    for name in ["random", "mcme", "bald", "dal"] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn failed_runs_exit_2_and_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    // DAL cannot train a discriminator without labelled examples.
    let cfg = small(dir.path(), 0, &["random", "dal"]);
    let out = dir.path().join("o");
    let o = cartal(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let failures = fs::read_to_string(out.join("failures.csv")).unwrap();
    assert_eq!(failures.lines().count(), 1 + 2, "{failures}");
    assert!(
        failures.lines().skip(1).all(|l| l.starts_with("dal,")),
        "{failures}"
    );
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 2);
}

#[test]
fn generate_writes_sources_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), 20, &["random"]);
    let (a, b) = (dir.path().join("ga"), dir.path().join("gb"));
    for out in [&a, &b] {
        let o = cartal(&["generate", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for file in ["a.jsonl", "b.jsonl", "c.jsonl", "manifest.json"] {
        assert_eq!(
            fs::read(a.join(file)).unwrap(),
            fs::read(b.join(file)).unwrap(),
            "{file} differs"
        );
    }
    let ds =
        cartal::pool::load_dataset(&a.join("c.jsonl"), cartal::pool::Format::Jsonl, None).unwrap();
    assert_eq!(ds.len(), 60);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    let c = &manifest["sources"][2];
    assert_eq!(c["name"], "c");
    assert_eq!(c["flipped_ids"].as_array().unwrap().len(), 18);
    assert_eq!(
        manifest["sources"][0]["flipped_ids"]
            .as_array()
            .unwrap()
            .len(),
        0
    );
}

#[test]
fn generate_names_a_missing_key() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    write(
        &path,
        "name = \"bad\"\n\n[[sources]]\nname = \"x\"\nn = 10\nnoise_scale = [1.0, 1.0]\n",
    );
    let o = cartal(&[
        "generate",
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
    assert!(
        stderr(&o).contains("sources[0].class_centroids"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn ablate_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), 20, &["random", "mcme"]);
    let out = dir.path().join("o");
    let o = cartal(&[
        "ablate",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--fraction",
        "0.25",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    // 3 sources x 54 pooled examples, 13 dropped from each.
    let retained = fs::read_to_string(out.join("retained.csv")).unwrap();
    assert_eq!(retained.lines().count(), 1 + 3 * (54 - 13));
    assert!(out.join("summary_ablated.csv").exists());

    let o = cartal(&["report", "--exp", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let md = fs::read_to_string(out.join("report.md")).unwrap();
    assert_eq!(md, String::from_utf8_lossy(&o.stdout));
    assert!(md.contains("|---"), "{md}");
    assert!(md.contains("Ablated"), "{md}");

    let o = cartal(&["report", "--exp", out.to_str().unwrap(), "--format", "csv"]);
    assert_eq!(code(&o), 0);
    assert!(out.join("report.csv").exists());
    let o = cartal(&["report", "--exp", out.to_str().unwrap(), "--format", "html"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn report_on_a_missing_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = cartal(&[
        "report",
        "--exp",
        dir.path().join("nothing").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("nothing"), "{}", stderr(&o));
    let o = cartal(&["report", "--exp", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("summary.csv"), "{}", stderr(&o));
}

#[test]
fn splits_and_stratify() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.toml");
    let mut text = small_config_toml(60, 20, 10, 1, &["random"], &[1, 2]);
    text = text.replacen("[classifier]", "stratify_test_set = \"clean\"\n\n[difficulty_split]\ncombos = [\"E\", \"EM\"]\nn = 20\n\n[classifier]", 1);
    write(&path, &text);
    let cfg = path.to_str().unwrap();

    let out = dir.path().join("splits");
    let o = cartal(&["splits", "--config", cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let splits = fs::read_to_string(out.join("splits.csv")).unwrap();
    assert!(splits.lines().count() > 1, "{splits}");

    let out = dir.path().join("strat");
    let o = cartal(&["stratify", "--config", cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.join("stratified.csv").exists());
    assert!(out.join("test_datamap.csv").exists());

    let o = cartal(&[
        "stratify",
        "--config",
        cfg,
        "--out",
        out.to_str().unwrap(),
        "--test-set",
        "missing",
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn usage_errors_exit_1_and_help_exits_0() {
    assert_eq!(code(&cartal(&["frobnicate"])), 1);
    assert_eq!(code(&cartal(&["run"])), 1);
    assert_eq!(code(&cartal(&["--help"])), 0);
}
