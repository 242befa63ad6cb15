mod common;

use common::{glrtml, run_pipeline, write_config, SMALL_CONFIG};

#[test]
fn gen_writes_six_splits() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), SMALL_CONFIG);
    let out = glrtml(dir.path(), &["gen", "--config", "c.toml", "--out", "data"]);
    assert!(out.status.success());
    let mut names: Vec<String> = std::fs::read_dir(dir.path().join("data"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let expected: Vec<String> = ["source", "target"]
        .iter()
        .flat_map(|d| ["gallery", "query", "train"].map(|r| format!("{d}_{r}.csv")))
        .collect();
    assert_eq!(names, expected);
}

#[test]
fn invalid_config_exits_2_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[train]\nbatchsize = 3\n").unwrap();
    let out = glrtml(dir.path(), &["gen", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("batchsize"));

    std::fs::write(dir.path().join("bad.toml"), "[synth]\nnum_classes = 1\n").unwrap();
    let out = glrtml(dir.path(), &["gen", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("num_classes"));
}

#[test]
fn missing_inputs_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), SMALL_CONFIG);
    let out = glrtml(dir.path(), &["train", "--config", "c.toml"]);
    assert_eq!(out.status.code(), Some(3));
    let out = glrtml(dir.path(), &["eval", "--config", "missing.toml"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn pipeline_is_byte_identical_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = run_pipeline(a.path(), SMALL_CONFIG, &[]);
    let second = run_pipeline(b.path(), SMALL_CONFIG, &[]);
    assert_eq!(first.len(), 15);
    assert_eq!(first, second);
    let c = tempfile::tempdir().unwrap();
    let reseeded = run_pipeline(c.path(), SMALL_CONFIG, &["--seed", "9"]);
    assert_ne!(first, reseeded);
}

#[test]
fn gmm_variant_pipeline_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = format!("{SMALL_CONFIG}\n[glrt]\nk1 = 2\nk0 = 2\n");
    let first = run_pipeline(a.path(), &cfg, &["--variant", "gmm"]);
    assert_eq!(first, run_pipeline(b.path(), &cfg, &["--variant", "gmm"]));
    let model = &first.iter().find(|(n, _)| n == "model.json").unwrap().1;
    assert!(String::from_utf8_lossy(model).contains("\"variant\": \"gmm\""));
}

#[test]
fn effective_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), SMALL_CONFIG);
    let out = glrtml(dir.path(), &["gen", "--config", "c.toml", "--seed", "5", "--emit-effective-config"]);
    assert!(out.status.success());
    let effective = String::from_utf8(out.stdout).unwrap();
    assert!(effective.contains("seed = 5"));
    assert!(!dir.path().join("out").exists());

    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let original = run_pipeline(a.path(), SMALL_CONFIG, &["--seed", "5"]);
    std::fs::write(b.path().join("effective.toml"), &effective).unwrap();
    let gen = glrtml(b.path(), &["gen", "--config", "effective.toml"]);
    assert!(gen.status.success());
    for role in ["source_train.csv", "target_gallery.csv"] {
        let again = std::fs::read(b.path().join("out").join(role)).unwrap();
        assert_eq!(original.iter().find(|(n, _)| n == role).unwrap().1, again);
    }
}

#[test]
fn perfectly_separated_classes_give_map_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"
[synth]
num_classes = 4
per_class = 20
d_in = 4
class_sep = 200.0
anisotropy = 1.0
shift_rotation_deg = 0.0
shift_scale = 1.0
[train]
t0 = 20
t1_minus_t0 = 2
d = 4
hidden = 8
"#;
    let files = run_pipeline(dir.path(), cfg, &[]);
    for name in ["metrics_glrt.json", "metrics_cosine.json"] {
        let text = &files.iter().find(|(n, _)| n == name).unwrap().1;
        let report: serde_json::Value = serde_json::from_slice(text).unwrap();
        assert_eq!(report["map"].as_f64(), Some(1.0), "{name}");
    }
}

fn benchmark(stage2_epochs: usize) -> String {
    format!(
        "[synth]\nper_class = 150\nclass_sep = 5.0\nanisotropy = 8.0\n\
         [train]\nt0 = 30\nt1_minus_t0 = {stage2_epochs}\nd = 16\n\
         [loss]\nnu = 0.1\n"
    )
}

fn eval_map(dir: &std::path::Path, config: &str, extra: &[&str]) -> f64 {
    write_config(dir, config);
    for cmd in [&["gen"][..], &["train"], &["eval"]] {
        let mut args = cmd.to_vec();
        args.extend(["--config", "c.toml"]);
        args.extend(extra);
        let out = glrtml(dir, &args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let metric = if extra.contains(&"cosine") { "cosine" } else { "glrt" };
    let text = std::fs::read(dir.join("out").join(format!("metrics_{metric}.json"))).unwrap();
    serde_json::from_slice::<serde_json::Value>(&text).unwrap()["map"].as_f64().unwrap()
}

#[test]
fn glrt_pipeline_beats_identity_cosine_baseline() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let glrt = eval_map(a.path(), &benchmark(15), &[]);
    let baseline = eval_map(b.path(), &benchmark(0), &["--metric", "cosine"]);
    assert!(glrt - baseline >= 0.05, "glrt {glrt}, baseline {baseline}");
}

#[test]
fn desk_scale_training_is_quick() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[train]\nt0 = 30\nt1_minus_t0 = 15\nd = 8\n";
    write_config(dir.path(), cfg);
    assert!(glrtml(dir.path(), &["gen", "--config", "c.toml"]).status.success());
    let start = std::time::Instant::now();
    let out = glrtml(dir.path(), &["train", "--config", "c.toml"]);
    assert!(out.status.success());
    assert!(start.elapsed().as_secs() < 300);
    let log: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("out/train_log.json")).unwrap()).unwrap();
    assert_eq!(log.as_array().unwrap().len(), 45);
}
