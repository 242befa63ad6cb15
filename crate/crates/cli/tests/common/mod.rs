use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const SMALL_CONFIG: &str = r#"
[synth]
per_class = 20
d_in = 6
[train]
t0 = 4
t1_minus_t0 = 2
d = 4
hidden = 8
[adapt]
k = 4
pos_budget = 500
neg_budget = 500
"#;

pub fn glrtml(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_glrtml"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("failed to launch glrtml")
}

/// Writes `config` into `dir/c.toml` with `io` pointing inside `dir/out`.
pub fn write_config(dir: &Path, config: &str) -> PathBuf {
    let text = format!("{config}\n[io]\ndata_dir = \"out\"\nmodel = \"out/model.json\"\nout_dir = \"out\"\n");
    let path = dir.join("c.toml");
    std::fs::write(&path, text).unwrap();
    path
}

pub const PIPELINE: [&[&str]; 8] = [
    &["gen"],
    &["train"],
    &["adapt"],
    &["eval"],
    &["eval", "--metric", "cosine"],
    &["score"],
    &["roc"],
    &["roc", "--metric", "cosine"],
];

/// Runs every command in order inside `dir` and returns the sorted output
/// file names with their contents.
pub fn run_pipeline(dir: &Path, config: &str, extra: &[&str]) -> Vec<(String, Vec<u8>)> {
    write_config(dir, config);
    for cmd in PIPELINE {
        let mut args: Vec<&str> = cmd.to_vec();
        args.extend(["--config", "c.toml"]);
        args.extend(extra);
        let out = glrtml(dir, &args);
        assert!(
            out.status.success(),
            "{cmd:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir.join("out"))
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}
