use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use obfusim::RunManifest;

fn tiny() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tiny.json")
}

fn obfusim(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_obfusim"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("OBFUSIM_SEED")
        .env_remove("OBFUSIM_SCALE")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn run_stage(stage: &str, config: &Path, out: &Path) -> Output {
    obfusim(&[stage, "--config", config.to_str().unwrap()], out)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn config_problems_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    assert_eq!(run_stage("gen-universe", &missing, dir.path()).status.code(), Some(2));

    let typo = dir.path().join("typo.json");
    fs::write(&typo, r#"{"universe": {"dims": 8}}"#).unwrap();
    let o = run_stage("gen-universe", &typo, dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("dims"));

    let bad_gamma = dir.path().join("gamma.json");
    fs::write(&bad_gamma, r#"{"a2c": {"gamma": 0.0}}"#).unwrap();
    assert_eq!(run_stage("train-rl", &bad_gamma, dir.path()).status.code(), Some(2));

    assert_eq!(obfusim(&["bogus-stage", "--config", "x.json"], dir.path()).status.code(), Some(2));
    assert_eq!(obfusim(&["report", "--config", tiny().to_str().unwrap(), "--scale", "huge"], dir.path()).status.code(), Some(2));
}

#[test]
fn missing_upstream_exits_with_3_and_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_stage("collect", &tiny(), dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("gen-universe"), "{}", stderr(&o));
    let o = run_stage("report", &tiny(), dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("`evaluate`"), "{}", stderr(&o));
}

#[test]
fn completed_stage_is_skipped_until_its_inputs_change() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert!(run_stage("gen-universe", &tiny(), &out).status.success());
    let first = manifest(&out);
    let o = run_stage("gen-universe", &tiny(), &out);
    assert!(String::from_utf8_lossy(&o.stdout).contains("gen-universe: up to date"));
    assert_eq!(manifest(&out).stages, first.stages);

    // a different seed changes the config hash, so the stage reruns
    let o = obfusim(&["gen-universe", "--config", tiny().to_str().unwrap(), "--seed", "6"], &out);
    assert!(String::from_utf8_lossy(&o.stdout).contains("gen-universe: done"));
    let second = manifest(&out);
    assert_eq!(second.seed, 6);
    assert_ne!(second.stages["gen-universe"].artifacts, first.stages["gen-universe"].artifacts);

    // a tampered artifact also forces a rerun
    fs::write(out.join("oracles.json"), "{}").unwrap();
    let o = obfusim(&["gen-universe", "--config", tiny().to_str().unwrap(), "--seed", "6"], &out);
    assert!(String::from_utf8_lossy(&o.stdout).contains("gen-universe: done"));
    assert_eq!(manifest(&out).stages["gen-universe"].artifacts, second.stages["gen-universe"].artifacts);
}

fn listed_files(dir: &Path) -> Vec<String> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push(p.strip_prefix(dir).unwrap().to_string_lossy().into_owned());
            }
        }
    }
    files.retain(|f| f != "manifest.json");
    files.sort();
    files
}

#[test]
fn tiny_pipeline_lists_every_file_and_repeats_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let o = run_stage("all", &tiny(), &a);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = manifest(&a);
    assert_eq!(m.stages.len(), 11);
    let mut recorded: Vec<String> = m.stages.values().flat_map(|s| s.artifacts.iter().map(|a| a.path.clone())).collect();
    recorded.sort();
    assert_eq!(recorded, listed_files(&a));
    assert!(recorded.len() >= 10);
    for table in ["privacy.csv", "personalization.csv", "stealth.csv", "sweep.csv", "summary.json"] {
        assert!(a.join("report").join(table).is_file(), "{table}");
    }

    let o = run_stage("all", &tiny(), &b);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["metrics.csv", "privacy.csv", "sweep.csv", "stealth.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }

    // dropping an agent makes evaluation fail with the producing stage
    fs::remove_file(a.join("agent-L1.json")).unwrap();
    let o = run_stage("evaluate", &tiny(), &a);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("train-rl"));
}
