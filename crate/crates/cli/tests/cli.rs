//! End-to-end behaviour of the `vitfield` binary: exit codes, configuration
//! precedence and run-directory artifacts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL_VIT: &[&str] = &["--d-model", "16", "--depth", "2", "--heads", "2", "--mlp-dim", "32"];

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vitfield"))
        .args(args)
        .env_remove("VITFIELD_SEED")
        .output()
        .unwrap()
}

fn run_env(args: &[&str], seed: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vitfield"))
        .args(args)
        .env("VITFIELD_SEED", seed)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, per_class: usize) -> PathBuf {
    let data = dir.join("data");
    ok(&[
        "gen-data",
        "--per-class",
        &per_class.to_string(),
        "--seed",
        "3",
        "--out",
        s(&data),
    ]);
    data
}

fn count_files(dir: &Path, ext: &str) -> usize {
    let mut n = 0;
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            n += count_files(&p, ext);
        } else if p.extension().is_some_and(|e| e == ext) {
            n += 1;
        }
    }
    n
}

fn split_dirs(dir: &Path) -> usize {
    std::fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("split_"))
        .count()
}

#[test]
fn gen_data_writes_the_requested_images_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    ok(&["gen-data", "--per-class", "100", "--seed", "7", "--out", s(&a)]);
    assert_eq!(count_files(&a, "png"), 500);
    let manifest = std::fs::read_to_string(a.join("manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().count(), 501);
    let b = dir.path().join("b");
    ok(&["gen-data", "--per-class", "100", "--seed", "7", "--out", s(&b)]);
    assert_eq!(manifest, std::fs::read_to_string(b.join("manifest.tsv")).unwrap());
    let config = std::fs::read_to_string(a.join("run_config.txt")).unwrap();
    assert!(config.contains("per_class=100  # flag") && config.contains("seed=7  # flag"));
}

#[test]
fn gen_data_validation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let zero = run(&["gen-data", "--per-class", "0", "--out", s(&out)]);
    assert_eq!(code(&zero), 2);
    assert!(String::from_utf8_lossy(&zero.stderr).contains("per-class"));
    assert_eq!(code(&run(&["gen-data", "--per-class", "2"])), 2, "missing --out");
    ok(&["gen-data", "--per-class", "2", "--out", s(&out)]);
    let again = run(&["gen-data", "--per-class", "2", "--out", s(&out)]);
    assert_eq!(code(&again), 2);
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    ok(&["gen-data", "--per-class", "2", "--out", s(&out), "--force"]);
}

#[test]
fn train_defaults_are_echoed() {
    let text = ok(&["train", "--print-config"]);
    for line in [
        "lr=0.0001",
        "factor=0.2",
        "batch=8",
        "epochs=100",
        "patience=10",
        "test_fraction=1/6",
    ] {
        assert!(
            text.lines().any(|l| l.starts_with(&format!("{line} "))),
            "missing {line} in\n{text}"
        );
    }
}

#[test]
fn seed_precedence_default_env_config_flag() {
    let seed_line = |out: Output| {
        let text = String::from_utf8(out.stdout).unwrap();
        text.lines().find(|l| l.starts_with("seed=")).unwrap().to_string()
    };
    assert_eq!(seed_line(run(&["train", "--print-config"])), "seed=7  # default");
    assert_eq!(seed_line(run_env(&["train", "--print-config"], "99")), "seed=99  # env");
    assert_eq!(
        seed_line(run_env(&["train", "--print-config", "--seed", "5"], "99")),
        "seed=5  # flag"
    );
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.txt");
    std::fs::write(&cfg, "# comment\nseed=42\nbatch=4\n").unwrap();
    let text =
        String::from_utf8(run_env(&["train", "--print-config", "--config", s(&cfg), "--batch", "2"], "99").stdout)
            .unwrap();
    assert!(text.contains("seed=42  # config"));
    assert!(text.contains("batch=2  # flag"));
    std::fs::write(&cfg, "bogus=1\n").unwrap();
    assert_eq!(code(&run(&["train", "--print-config", "--config", s(&cfg)])), 2);
    assert_eq!(code(&run_env(&["train", "--print-config"], "abc")), 2);
}

#[test]
fn crossval_creates_one_directory_per_split() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 5);
    let out = dir.path().join("cv");
    let mut args = vec![
        "crossval",
        "--data",
        s(&data),
        "--k",
        "1,2",
        "--epochs",
        "1",
        "--quiet",
        "--out",
        s(&out),
    ];
    args.extend(SMALL_VIT);
    let stdout = ok(&args);
    assert_eq!(split_dirs(&out.join("vit16-k1")), 5);
    assert_eq!(split_dirs(&out.join("vit16-k2")), 10);
    assert!(stdout.contains("F1 = ") && stdout.contains("±"));
    assert!(stdout.contains("spinach"));
    for f in ["table3.csv", "fig10.csv", "timings.csv", "run_config.txt"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let fig = std::fs::read_to_string(out.join("fig10.csv")).unwrap();
    assert!(fig.starts_with("model,k,train_size,f1_mean\nvit16,1,20,"));
    assert!(out.join("vit16-k2/split_9/checkpoint.bin").is_file());
    assert!(out.join("vit16-k2/split_9/history.csv").is_file());
}

#[test]
fn crossval_progress_goes_to_stderr_one_line_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 5);
    let out = dir.path().join("cv");
    let mut args = vec!["crossval", "--data", s(&data), "--epochs", "2", "--out", s(&out)];
    args.extend(SMALL_VIT);
    let o = run(&args);
    assert!(o.status.success());
    let stderr = String::from_utf8(o.stderr).unwrap();
    let lines: Vec<&str> = stderr.lines().filter(|l| l.contains("] epoch")).collect();
    assert_eq!(lines.len(), 10);
    assert!(lines.iter().all(|l| l.contains("val_f1") && l.contains("lr")));
    assert!(!String::from_utf8(o.stdout).unwrap().contains("] epoch"));
}

#[test]
fn crossval_usage_and_numeric_errors() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 5);
    let out = dir.path().join("cv");
    let k5 = run(&["crossval", "--data", s(&data), "--k", "5", "--out", s(&out)]);
    assert_eq!(code(&k5), 2);
    assert!(String::from_utf8_lossy(&k5.stderr).contains("k = 5"));
    assert_eq!(
        code(&run(&[
            "crossval",
            "--data",
            s(&data),
            "--model",
            "resnet",
            "--out",
            s(&out)
        ])),
        2
    );
    let few = dir.path().join("few");
    ok(&["gen-data", "--per-class", "3", "--out", s(&few)]);
    let strat = run(&["crossval", "--data", s(&few), "--out", s(&out)]);
    assert_eq!(code(&strat), 2);
    assert!(String::from_utf8_lossy(&strat.stderr).contains("stratify"));
    let mut args = vec![
        "crossval",
        "--data",
        s(&data),
        "--lr",
        "1e300",
        "--epochs",
        "2",
        "--quiet",
        "--force",
        "--out",
        s(&out),
    ];
    args.extend(SMALL_VIT);
    let nan = run(&args);
    assert_eq!(code(&nan), 3, "{}", String::from_utf8_lossy(&nan.stderr));
    assert!(String::from_utf8_lossy(&nan.stderr).contains("non-finite"));
}

/// Trains a small ViT and returns its run directory.
fn trained(dir: &Path, data: &Path) -> PathBuf {
    let out = dir.join("train");
    let mut args = vec![
        "train",
        "--data",
        s(data),
        "--epochs",
        "12",
        "--augment",
        "off",
        "--lr",
        "0.003",
        "--quiet",
        "--out",
        s(&out),
    ];
    args.extend(SMALL_VIT);
    ok(&args);
    out
}

fn json_f1(text: &str) -> f64 {
    let v: serde_json::Value = serde_json::from_str(text).unwrap();
    v["macro_f1"].as_f64().unwrap()
}

#[test]
fn train_then_evaluate_and_attention_agree() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 12);
    let run_dir = trained(dir.path(), &data);
    for f in [
        "checkpoint.bin",
        "checkpoint.cfg",
        "history.csv",
        "report.json",
        "run_config.txt",
    ] {
        assert!(run_dir.join(f).is_file(), "{f}");
    }
    let val_f1 = json_f1(&std::fs::read_to_string(run_dir.join("report.json")).unwrap());
    let ckpt = run_dir.join("checkpoint.bin");
    let eval_dir = dir.path().join("eval");
    let table = ok(&[
        "evaluate",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&data),
        "--out",
        s(&eval_dir),
    ]);
    assert!(table.contains("precision") && table.contains("macro"));
    let json = ok(&["evaluate", "--checkpoint", s(&ckpt), "--data", s(&data), "--json"]);
    let train_f1 = json_f1(&json);
    assert!(
        train_f1 >= val_f1,
        "evaluation on the training data {train_f1} < validation {val_f1}"
    );
    assert_eq!(json, std::fs::read_to_string(eval_dir.join("report.json")).unwrap());

    // The attention command classifies an image exactly as evaluate did.
    let predictions = std::fs::read_to_string(eval_dir.join("predictions.csv")).unwrap();
    for line in predictions.lines().skip(1).step_by(11).take(5) {
        let f: Vec<&str> = line.split(',').collect();
        let image = data.join(f[0]);
        let out = dir.path().join("att").join(f[0].replace('/', "_"));
        let stdout = ok(&[
            "attention",
            "--checkpoint",
            s(&ckpt),
            "--image",
            s(&image),
            "--out",
            s(&out),
        ]);
        assert!(
            stdout.lines().any(|l| l == format!("predicted {}", f[2])),
            "{line}\n{stdout}"
        );
        assert!(stdout.contains("logits weed="));
        assert_eq!(count_files(&out, "png"), 3, "2 layers + rollout");
    }
}

#[test]
fn attention_layers_and_model_checks() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 5);
    let cv = dir.path().join("cv");
    ok(&[
        "crossval",
        "--data",
        s(&data),
        "--model",
        "vit16,cnn",
        "--epochs",
        "1",
        "--quiet",
        "--out",
        s(&cv),
    ]);
    let image = data.join("beet/beet_00000.png");
    let vit = cv.join("vit16-k1/split_0/checkpoint.bin");
    let out = dir.path().join("maps");
    ok(&[
        "attention",
        "--checkpoint",
        s(&vit),
        "--image",
        s(&image),
        "--layers",
        "all",
        "--out",
        s(&out),
    ]);
    let mut names: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "beet_00000.layer1.png",
            "beet_00000.layer2.png",
            "beet_00000.layer3.png",
            "beet_00000.layer4.png",
            "beet_00000.rollout.png",
            "run_config.txt"
        ]
    );
    let some = dir.path().join("some");
    ok(&[
        "attention",
        "--checkpoint",
        s(&vit),
        "--image",
        s(&image),
        "--layers",
        "1,3",
        "--format",
        "ppm",
        "--layout",
        "overlay",
        "--out",
        s(&some),
    ]);
    assert_eq!(count_files(&some, "ppm"), 3);
    let nine = run(&[
        "attention",
        "--checkpoint",
        s(&vit),
        "--image",
        s(&image),
        "--layers",
        "9",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&nine), 2);
    let cnn = cv.join("cnn-k1/split_0/checkpoint.bin");
    let refused = run(&[
        "attention",
        "--checkpoint",
        s(&cnn),
        "--image",
        s(&image),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&refused), 2);
    assert!(String::from_utf8_lossy(&refused.stderr).contains("attention maps require a transformer model"));
}

#[test]
fn evaluate_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 2);
    let missing = run(&[
        "evaluate",
        "--checkpoint",
        s(&dir.path().join("nope.bin")),
        "--data",
        s(&data),
    ]);
    assert_eq!(code(&missing), 2);
    assert!(String::from_utf8_lossy(&missing.stderr).contains("not found"));
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let cv = dir.path().join("cv");
    std::fs::write(cv.with_extension("bin"), b"").unwrap();
    let out = run(&[
        "evaluate",
        "--checkpoint",
        s(&cv.with_extension("bin")),
        "--data",
        s(&empty),
    ]);
    assert_eq!(code(&out), 2);
    // A valid checkpoint against an empty folder layout.
    let data5 = dir.path().join("d5");
    ok(&["gen-data", "--per-class", "5", "--out", s(&data5)]);
    ok(&[
        "crossval",
        "--data",
        s(&data5),
        "--epochs",
        "1",
        "--quiet",
        "--out",
        s(&cv),
        "--d-model",
        "8",
        "--depth",
        "1",
        "--heads",
        "1",
        "--mlp-dim",
        "8",
    ]);
    let ckpt = cv.join("vit16-k1/split_0/checkpoint.bin");
    for label in ["weed", "beet", "off_type_beet", "parsley", "spinach"] {
        std::fs::create_dir(empty.join(label)).unwrap();
    }
    let none = run(&["evaluate", "--checkpoint", s(&ckpt), "--data", s(&empty)]);
    assert_eq!(code(&none), 2);
    assert!(String::from_utf8_lossy(&none.stderr).contains("no images"));
}

fn write_voc(path: &Path, objects: &[(&str, [i32; 4])]) {
    let mut xml = String::from("<annotation><filename>x.png</filename>");
    for (name, [x0, y0, x1, y1]) in objects {
        xml.push_str(&format!(
            "<object><name>{name}</name><bndbox><xmin>{x0}</xmin><ymin>{y0}</ymin><xmax>{x1}</xmax><ymax>{y1}</ymax></bndbox></object>"
        ));
    }
    xml.push_str("</annotation>");
    std::fs::write(path, xml).unwrap();
}

#[test]
fn ingest_crops_and_balances() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("raw");
    std::fs::create_dir(&images).unwrap();
    let field = vitfield::tensor::Tensor::full(&[120, 160, 3], 0.4);
    vitfield::data::write_image(&images.join("field.png"), &field).unwrap();
    vitfield::data::write_image(&images.join("lonely.png"), &field).unwrap();
    write_voc(
        &images.join("field.xml"),
        &[
            ("weed", [10, 10, 74, 74]),
            ("beet", [100, 50, 190, 110]),
            ("parsley", [0, 0, 30, 30]),
            ("spinach", [5, 5, 40, 40]),
            ("off_type_beet", [60, 60, 90, 90]),
            ("tomato", [1, 1, 9, 9]),
        ],
    );
    let out = dir.path().join("patches");
    let stdout = ok(&["ingest", "--images", s(&images), "--out", s(&out), "--balance", "3"]);
    assert!(
        stdout.contains("clamped 1") && stdout.contains("rejected 1") && stdout.contains("unannotated 1"),
        "{stdout}"
    );
    assert_eq!(count_files(&out, "png"), 15);
    assert!(out.join("weed/field_0.png").is_file());
    assert!(out.join("weed/field_0_rot90.png").is_file() && out.join("weed/field_0_rot180.png").is_file());
    let index = vitfield::data::load_folder_dataset(&out).unwrap();
    assert_eq!(index.counts(), [3; 5]);
    assert!(index.iter().all(|p| p.pixels.shape() == [64, 64, 3]));
}
