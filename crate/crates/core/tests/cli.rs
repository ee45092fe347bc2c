use std::process::Command;

fn ymlab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ymlab"))
}

#[test]
fn presets_are_listed_and_printed() {
    let out = ymlab().arg("presets").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["flat-gap", "abelian-harmonic", "bump-n5", "hym-conformal"] {
        assert!(text.contains(name));
    }
    let out = ymlab().args(["presets", "flat-gap"]).output().unwrap();
    assert!(String::from_utf8(out.stdout).unwrap().contains("[flow]"));
}

#[test]
fn gradcheck_from_a_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(
        &cfg,
        "[geometry]\nn = 3\nsizes = [4]\nspacing = 0.25\n\n[bundle]\nrank = 2\n\n[initial]\nkind = \"random\"\namplitude = 0.5\n",
    )
    .unwrap();
    let out = ymlab()
        .args(["gradcheck", "--config"])
        .arg(&cfg)
        .arg("--out-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("gradcheck.toml").exists());
}

#[test]
fn run_with_overrides_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = ymlab()
        .args(["run", "--preset", "flat-gap", "--threads", "1", "--seed-override", "3", "--cadence", "4", "--out-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = std::fs::read_to_string(dir.path().join("summary.toml")).unwrap();
    assert!(summary.contains("seed = 3"));
    assert!(summary.contains("verdict = \"flat\""));
    assert!(dir.path().join("checkpoint.bin").exists());
}

#[test]
fn bad_input_exits_with_code_two() {
    let out = ymlab().args(["run", "--preset", "nope"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown preset"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[flow]\nbogus = 1\n").unwrap();
    let out = ymlab().arg("run").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
