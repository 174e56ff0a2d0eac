use std::path::Path;
use std::process::{Command, Output};

fn xopgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xopgan"))
        .args(args)
        .env("XOPGAN_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL_CONFIG: &str = r#"{
  "lr": 0.001,
  "lambda_rec": 1.0,
  "generator": {"in_channels": 3, "encoder_channels": [2, 2, 4, 4, 4], "order": 2,
                "encoder_kernel": 7, "decoder_kernel": 5, "skip_connections": true},
  "discriminator": {"in_channels": 3, "input_size": 32, "channels": [2, 2, 4, 4, 4],
                    "strides": [2, 2, 2, 2, 1], "kernel": 4, "order": 2, "dense_hidden": 4}
}"#;

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&xopgan(&["--help"])), 0);
    assert_eq!(code(&xopgan(&["--version"])), 0);
    assert_eq!(code(&xopgan(&[])), 1);
    assert_eq!(code(&xopgan(&["frobnicate"])), 1);
    let o = xopgan(&["gradcheck", "--bogus"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--bogus"));
}

#[test]
fn seed_is_mandatory_for_randomized_commands() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path());
    for args in [
        vec!["synth", "--out", out],
        vec!["pretrain", "--manifest", "m.jsonl", "--out", out],
        vec![
            "train",
            "--manifest",
            "m.jsonl",
            "--base",
            out,
            "--out",
            out,
        ],
    ] {
        let o = xopgan(&args);
        assert_eq!(code(&o), 1, "{args:?}");
        assert!(stderr(&o).contains("--seed"), "{}", stderr(&o));
    }
}

#[test]
fn partition_prints_tercile_boundaries() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.jsonl");
    let lines: String = [10.0, 12.0, 15.0, 17.0, 20.0, 25.0]
        .iter()
        .enumerate()
        .map(|(i, v)| {
            format!("{{\"input\":\"in{i}.png\",\"target\":\"gt{i}.png\",\"psnr_db\":{v},\"partition\":\"UNASSIGNED\"}}\n")
        })
        .collect();
    std::fs::write(&m, lines).unwrap();
    let out = dir.path().join("tagged");
    let o = xopgan(&["partition", "--manifest", p(&m), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(
        text.contains("LQ: 2 records, PSNR 10.0000 to 12.0000"),
        "{text}"
    );
    assert!(
        text.contains("MQ: 2 records, PSNR 15.0000 to 17.0000"),
        "{text}"
    );
    assert!(
        text.contains("HQ: 2 records, PSNR 20.0000 to 25.0000"),
        "{text}"
    );
    let tagged = std::fs::read_to_string(out.join("m.jsonl")).unwrap();
    assert_eq!(tagged.matches("\"LQ\"").count(), 2);
    assert!(out.join("partition_report.json").is_file());
}

#[test]
fn restore_with_missing_checkpoint_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let ckpts = dir.path().join("nothing_here");
    let o = xopgan(&["restore", "--image", "x.png", "--ckpt-dir", p(&ckpts)]);
    assert_eq!(code(&o), 2);
    assert!(
        stderr(&o).contains("nothing_here/expert_lq.ckpt"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn gradcheck_passes() {
    let o = xopgan(&["gradcheck", "--seed", "7", "--probes", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("max relative error"));
}

fn list_files(dir: &Path) -> Vec<String> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let e = e.unwrap();
        if e.path().is_dir() {
            out.extend(list_files(&e.path()));
        } else {
            out.push(e.path().to_string_lossy().into_owned());
        }
    }
    out.sort();
    out
}

#[test]
fn full_pipeline_is_reproducible_and_contained() {
    let root = tempfile::tempdir().unwrap();
    let r = root.path();
    let cfg = r.join("small.json");
    std::fs::write(&cfg, SMALL_CONFIG).unwrap();
    let data = r.join("data");
    let ok = |args: &[&str]| {
        let o = xopgan(args);
        assert_eq!(code(&o), 0, "{args:?}: {}", stderr(&o));
        o
    };
    ok(&[
        "synth",
        "--out",
        p(&data),
        "--seed",
        "3",
        "--n",
        "12",
        "--size",
        "32",
    ]);
    for f in [
        "manifest.jsonl",
        "train.jsonl",
        "test.jsonl",
        "dataset.json",
        "clean/00011.png",
    ] {
        assert!(data.join(f).exists(), "{f}");
    }
    let train_m = data.join("train.jsonl");
    let test_m = data.join("test.jsonl");
    let pre = |out: &Path| {
        ok(&[
            "pretrain",
            "--manifest",
            p(&train_m),
            "--out",
            p(out),
            "--seed",
            "5",
            "--config",
            p(&cfg),
            "--iterations",
            "3",
            "--threads",
            "1",
        ])
    };
    let (pre_a, pre_b) = (r.join("pre_a"), r.join("pre_b"));
    pre(&pre_a);
    pre(&pre_b);
    for f in [
        "generator.ckpt",
        "discriminator.ckpt",
        "train_log.jsonl",
        "config.json",
    ] {
        assert_eq!(
            std::fs::read(pre_a.join(f)).unwrap(),
            std::fs::read(pre_b.join(f)).unwrap(),
            "{f}"
        );
    }
    let echoed = std::fs::read_to_string(pre_a.join("config.json")).unwrap();
    assert!(
        echoed.contains("\"max_iterations\": 3") && echoed.contains("\"seed\": 5"),
        "{echoed}"
    );

    let experts = r.join("experts");
    ok(&[
        "train",
        "--manifest",
        p(&train_m),
        "--base",
        p(&pre_a),
        "--out",
        p(&experts),
        "--seed",
        "6",
        "--iterations",
        "4",
    ]);
    for f in [
        "expert_lq.ckpt",
        "expert_mq.ckpt",
        "expert_hq.ckpt",
        "discriminator.ckpt",
        "train_log.jsonl",
    ] {
        assert!(experts.join(f).is_file(), "{f}");
    }

    let before = list_files(r);
    let o = ok(&[
        "restore",
        "--image",
        p(&data.join("degraded/00000.png")),
        "--ckpt-dir",
        p(&experts),
    ]);
    assert!(stdout(&o).contains("chosen "));
    assert_eq!(list_files(r), before, "restore without --out wrote files");

    let eval_dir = r.join("eval");
    ok(&[
        "eval",
        "--manifest",
        p(&test_m),
        "--ckpt-dir",
        p(&experts),
        "--out",
        p(&eval_dir),
        "--grids",
        "--pretrained",
        p(&pre_a.join("generator.ckpt")),
    ]);
    let report = std::fs::read_to_string(eval_dir.join("report.json")).unwrap();
    assert!(report.contains("\"agreement_rate\""));
    assert!(report.contains("\"pretrained\""));
    assert!(eval_dir.join("grids").read_dir().unwrap().count() >= 1);
    let new_files: Vec<String> = list_files(r)
        .into_iter()
        .filter(|f| !before.contains(f))
        .collect();
    assert!(
        new_files.iter().all(|f| f.starts_with(p(&eval_dir))),
        "{new_files:?}"
    );
}

#[test]
fn mismatched_base_architecture_is_runtime_error() {
    let root = tempfile::tempdir().unwrap();
    let r = root.path();
    let cfg = r.join("small.json");
    std::fs::write(&cfg, SMALL_CONFIG).unwrap();
    let data = r.join("data");
    assert_eq!(
        code(&xopgan(&[
            "synth",
            "--out",
            p(&data),
            "--seed",
            "1",
            "--n",
            "6"
        ])),
        0
    );
    let m = data.join("manifest.jsonl");
    let base = r.join("base");
    let o = xopgan(&[
        "pretrain",
        "--manifest",
        p(&m),
        "--out",
        p(&base),
        "--seed",
        "1",
        "--config",
        p(&cfg),
        "--iterations",
        "0",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    // the default desk architecture does not match the small base checkpoints
    let default_cfg = r.join("default.json");
    std::fs::write(&default_cfg, "{}").unwrap();
    let o = xopgan(&[
        "train",
        "--manifest",
        p(&m),
        "--base",
        p(&base),
        "--out",
        p(&r.join("x")),
        "--seed",
        "1",
        "--config",
        p(&default_cfg),
        "--iterations",
        "1",
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("digest mismatch"), "{}", stderr(&o));
}
