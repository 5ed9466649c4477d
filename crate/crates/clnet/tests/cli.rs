use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clnet::checkpoint::Checkpoint;
use clnet::config::RunConfig;
use clnet::evaluate::MetricsReport;
use clnet_core::Model;

fn clnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clnet"))
        .args(args)
        .env_remove("CLNET_SEED")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), stderr(o));
}

fn assert_fails(o: &Output, code: i32, kind: &str, needle: &str) {
    assert_eq!(o.status.code(), Some(code), "{}", stderr(o));
    let err = stderr(o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with(&format!("error[{kind}]: ")), "{err}");
    assert!(err.contains(needle), "{err}");
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

#[test]
fn help_matches_golden_files() {
    let update = std::env::var_os("CLNET_UPDATE_GOLDEN").is_some();
    for cmd in ["", "synth", "train", "embed", "eval", "viz", "ablate"] {
        let mut args: Vec<&str> = if cmd.is_empty() { vec![] } else { vec![cmd] };
        args.push("--help");
        let o = clnet(&args);
        assert_ok(&o);
        let text = String::from_utf8(o.stdout).unwrap();
        let name = if cmd.is_empty() { "clnet" } else { cmd };
        let path = golden_dir().join(format!("{name}.help.txt"));
        if update {
            std::fs::write(&path, &text).unwrap();
        }
        let want = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing {}", path.display()));
        assert_eq!(text, want, "`clnet {cmd} --help` changed");
    }
}

#[test]
fn help_lists_a_default_for_every_flag() {
    for cmd in ["synth", "train", "embed", "eval", "viz", "ablate"] {
        let text = String::from_utf8(clnet(&[cmd, "--help"]).stdout).unwrap();
        let mut in_options = false;
        for line in text.lines() {
            if line.starts_with("Options:") {
                in_options = true;
                continue;
            }
            let flag = line.trim_start();
            if !in_options || !flag.starts_with("--") || flag.starts_with("--help") {
                continue;
            }
            let required = [
                "--out ",
                "--checkpoint ",
                "--manifest ",
                "--view ",
                "--queries ",
                "--references ",
                "--level ",
            ]
            .iter()
            .any(|r| flag.starts_with(r))
                && !flag.contains("[default");
            assert!(
                flag.contains("[default") || required,
                "`clnet {cmd}`: flag without default: {flag}"
            );
        }
    }
}

#[test]
fn synth_writes_pairs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        assert_ok(&clnet(&["synth", "--out", p(d), "--pairs", "4", "--seed", "5"]));
    }
    let count = |d: &Path, sub: &str| std::fs::read_dir(d.join(sub)).unwrap().count();
    assert_eq!(count(&a, "ground") + count(&a, "satellite"), 8);
    let manifest = std::fs::read_to_string(a.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 5);
    assert!(manifest.starts_with("pair_id,ground_path,satellite_path,semi_positive_ids\n"));
    for sub in ["manifest.csv", "ground/train-000002.png", "satellite/train-000003.png"] {
        assert_eq!(
            std::fs::read(a.join(sub)).unwrap(),
            std::fs::read(b.join(sub)).unwrap(),
            "{sub}"
        );
    }
}

#[test]
fn synth_vigor_rows_carry_three_semi_positives() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&clnet(&[
        "synth",
        "--out",
        p(dir.path()),
        "--pairs",
        "3",
        "--vigor",
        "--split",
        "eval",
    ]));
    let manifest = std::fs::read_to_string(dir.path().join("manifest.csv")).unwrap();
    for row in manifest.lines().skip(1) {
        let semis = row.rsplit(',').next().unwrap();
        assert_eq!(semis.split(';').count(), 3, "{row}");
    }
    assert_eq!(std::fs::read_dir(dir.path().join("satellite")).unwrap().count(), 12);
}

#[test]
fn synth_refuses_non_empty_dir() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("x"), "").unwrap();
    let o = clnet(&["synth", "--out", p(dir.path()), "--pairs", "2"]);
    assert_fails(&o, 3, "validation", "--force");
    assert_ok(&clnet(&["synth", "--out", p(dir.path()), "--pairs", "2", "--force"]));
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_fails(
        &clnet(&["train", "--preset", "7", "--out", p(dir.path())]),
        2,
        "usage",
        "7",
    );
    assert_fails(&clnet(&["frobnicate"]), 2, "usage", "frobnicate");
    assert_fails(
        &clnet(&[
            "viz",
            "--checkpoint",
            p(dir.path()),
            "--level",
            "5",
            "--out",
            p(dir.path()),
        ]),
        2,
        "usage",
        "5",
    );
}

fn write_config(dir: &Path, json: &str) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, json).unwrap();
    path
}

const TOY: &str = r#"{"train": {"epochs": 15, "batch_size": 8, "base_lr": 0.002, "threads": 1},
  "data": {"kind": "synthetic", "train_pairs": 16, "eval_pairs": 8}}"#;

#[test]
fn train_embed_eval_viz_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let config = write_config(d, TOY);
    let run = d.join("run");
    assert_ok(&clnet(&[
        "train",
        "--config",
        p(&config),
        "--out",
        p(&run),
        "--preset",
        "5",
    ]));
    for f in ["manifest.txt", "tensors.bin", "config.json", "loss.csv", "metrics.json"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let loss = std::fs::read_to_string(run.join("loss.csv")).unwrap();
    assert!(loss.starts_with("step,loss,lr\n"));
    assert_eq!(loss.lines().count(), 1 + 30);

    let trained = Checkpoint::load(&run).unwrap();
    assert_eq!(trained.config.train.preset, clnet_core::AblationPreset::P5);
    let untrained_dir = d.join("untrained");
    let model = Model::<f32>::init(trained.config.model_config(), trained.config.seed).unwrap();
    Checkpoint::new(trained.config.clone(), 0, &model, trained.log_tau)
        .save(&untrained_dir)
        .unwrap();

    let data = d.join("data");
    assert_ok(&clnet(&["synth", "--out", p(&data), "--pairs", "16"]));
    let manifest = data.join("manifest.csv");
    let mut recall = Vec::new();
    for ck in [&run, &untrained_dir] {
        let (q, r) = (d.join("q.emb"), d.join("r.emb"));
        assert_ok(&clnet(&[
            "embed",
            "--checkpoint",
            p(ck),
            "--manifest",
            p(&manifest),
            "--view",
            "ground",
            "--out",
            p(&q),
        ]));
        assert_ok(&clnet(&[
            "embed",
            "--checkpoint",
            p(ck),
            "--manifest",
            p(&manifest),
            "--view",
            "satellite",
            "--out",
            p(&r),
        ]));
        let out = d.join("metrics.json");
        assert_ok(&clnet(&[
            "eval",
            "--queries",
            p(&q),
            "--references",
            p(&r),
            "--manifest",
            p(&manifest),
            "--checkpoint",
            p(ck),
            "--out",
            p(&out),
        ]));
        let report: MetricsReport = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
        assert_eq!(report.num_queries, 16);
        assert_eq!(report.config_hash.as_deref(), Some(trained.config.hash().as_str()));
        recall.push(report.recall_at_1);

        let o = clnet(&[
            "eval",
            "--queries",
            p(&q),
            "--references",
            p(&q),
            "--manifest",
            p(&manifest),
        ]);
        assert_ok(&o);
        let selfie: MetricsReport = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(selfie.recall_at_1, 1.0);

        let o = clnet(&[
            "eval",
            "--queries",
            p(&q),
            "--references",
            p(&r),
            "--manifest",
            p(&manifest),
            "--hit-rate",
        ]);
        assert_fails(&o, 3, "validation", "semi-positive");
    }
    assert!(
        recall[0] > recall[1],
        "trained {} vs untrained {}",
        recall[0],
        recall[1]
    );

    let bad = d.join("bad.emb");
    let mut bytes = std::fs::read(d.join("q.emb")).unwrap();
    bytes[0] = b'X';
    std::fs::write(&bad, bytes).unwrap();
    let o = clnet(&[
        "eval",
        "--queries",
        p(&bad),
        "--references",
        p(&bad),
        "--manifest",
        p(&manifest),
    ]);
    assert_fails(&o, 3, "validation", "magic");

    let (v1, v2) = (d.join("viz1"), d.join("viz2"));
    for v in [&v1, &v2] {
        assert_ok(&clnet(&["viz", "--checkpoint", p(&run), "--level", "4", "--out", p(v)]));
    }
    for f in ["level4-ground.png", "level4-satellite.png"] {
        assert_eq!(
            std::fs::read(v1.join(f)).unwrap(),
            std::fs::read(v2.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn seed_comes_from_env_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let config = write_config(
        d,
        r#"{"seed": 1, "train": {"epochs": 1, "batch_size": 4, "threads": 1},
      "data": {"kind": "synthetic", "train_pairs": 4, "eval_pairs": 2}}"#,
    );
    let run = |env: Option<&str>, extra: &[&str], out: &str| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_clnet"));
        c.args(["train", "--config", p(&config), "--out", p(&d.join(out))])
            .args(extra);
        match env {
            Some(v) => c.env("CLNET_SEED", v),
            None => c.env_remove("CLNET_SEED"),
        };
        c.output().unwrap()
    };
    assert_ok(&run(Some("9"), &[], "env"));
    assert_eq!(Checkpoint::load(&d.join("env")).unwrap().config.seed, 9);
    assert_ok(&run(Some("9"), &["--seed", "4"], "flag"));
    assert_eq!(Checkpoint::load(&d.join("flag")).unwrap().config.seed, 4);
    assert_fails(&run(Some("nine"), &[], "bad"), 3, "validation", "CLNET_SEED");
}

#[test]
fn invalid_config_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), r#"{"train": {"epochs": 1, "bogus": 2}}"#);
    let o = clnet(&["train", "--config", p(&config), "--out", p(&dir.path().join("o"))]);
    assert_fails(&o, 3, "validation", "bogus");
    let cfg = RunConfig::default();
    assert_eq!(cfg.train.epochs, 40);
    assert_eq!(cfg.train.base_lr, 0.001);
}
