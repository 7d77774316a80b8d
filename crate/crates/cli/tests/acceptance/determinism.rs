//! Every CLI command run twice with the same inputs and seed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use crate::common::{ensure, Check};

const TRAIN: &str = r#"{"model": {"template_points": 32, "encoder": {"edgeconv_widths": [8, 8], "head_width": 8, "latent_dim": 3},
 "deformer": {"hidden": [16]}}, "train": {"epochs": 6, "burn_in_epochs": 2, "template_update_every": 3, "template_samples": 10}}"#;

const SPEC: &str = r#"{"family": "bumped_ellipsoid", "subdivision": 1, "seed": 3,
 "factor_ranges": {"scale_x": [0.9, 1.1], "scale_y": [0.9, 1.1], "scale_z": [0.9, 1.1], "exponent": [1.0, 1.0]},
 "bump": {"center": [0, 0, 1], "radius": 0.8, "amplitude_range": [0.0, 0.3]}}"#;

fn run(args: &[String]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_ssmkit"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| format!("spawn ssmkit: {e}"))?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

/// Relative path to contents of every CSV and particle file under `dir`.
fn outputs(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else if matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "particles")) {
                files.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap_or_default());
            }
        }
    }
    files
}

pub fn cli_determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let p = |name: &str| root.join(name).to_string_lossy().into_owned();
    fs::write(root.join("spec.json"), SPEC).map_err(|e| e.to_string())?;
    fs::write(root.join("train.json"), TRAIN).map_err(|e| e.to_string())?;
    let manifest = p("synth_a/manifest.json");
    let model = p("train_a/checkpoint.json");
    let src = |extra: &[&str]| {
        let mut v = vec!["--model".to_string(), model.clone(), "--manifest".into(), manifest.clone()];
        v.extend(extra.iter().map(|s| s.to_string()));
        v
    };
    let commands: Vec<(&str, Vec<String>)> = vec![
        (
            "synth",
            ["synth", "--spec", &p("spec.json"), "--controls", "6", "--pathology", "6"].map(String::from).to_vec(),
        ),
        ("train", ["train", "--manifest", &manifest, "--config", &p("train.json")].map(String::from).to_vec()),
        ("infer", [vec!["infer".to_string()], src(&[])].concat()),
        ("eval", [vec!["eval".to_string()], src(&["--specificity-samples", "20"])].concat()),
        ("uncertainty", [vec!["uncertainty".to_string()], src(&["--samples", "10"])].concat()),
        ("modes", [vec!["analyze".to_string(), "modes".into()], src(&["--steps=-2,0,2"])].concat()),
        ("groupdiff", [vec!["analyze".to_string(), "groupdiff".into()], src(&["--permutations", "200"])].concat()),
        ("lda", [vec!["analyze".to_string(), "lda".into()], src(&[])].concat()),
        (
            "classify",
            [vec!["analyze".to_string(), "classify".into()], src(&["--folds", "3", "--epochs", "30"])].concat(),
        ),
    ];
    let mut compared = 0;
    let mut differing = Vec::new();
    for (name, args) in &commands {
        for run_id in ["a", "b"] {
            let mut full = args.clone();
            full.extend(["--out".to_string(), p(&format!("{name}_{run_id}"))]);
            run(&full)?;
        }
        let a = outputs(&root.join(format!("{name}_a")));
        let b = outputs(&root.join(format!("{name}_b")));
        if a.is_empty() {
            differing.push(format!("{name}: no CSV output"));
        }
        if a.keys().ne(b.keys()) {
            differing.push(format!("{name}: different file sets"));
        }
        for (file, bytes) in &a {
            compared += 1;
            if b.get(file) != Some(bytes) {
                differing.push(format!("{name}/{}", file.display()));
            }
        }
    }
    ensure(
        differing.is_empty(),
        format!(
            "{} commands, {compared} files compared, differing: {}",
            commands.len(),
            if differing.is_empty() { "none".into() } else { differing.join(", ") }
        ),
    )
}
