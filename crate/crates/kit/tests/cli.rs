use std::process::Command;

fn unissl(args: &[&str], root: &std::path::Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_unissl")).args(args).env("UNISSL_OUTPUT_ROOT", root).output().unwrap()
}

#[test]
fn exit_codes_separate_validation_from_runtime_errors() {
    let root = tempfile::tempdir().unwrap();
    let out = unissl(&["all"], root.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("objective, spec, steps"));

    let out = unissl(&["pretrain", "--objective", "emixx", "--spec", "synth_image", "--steps", "1"], root.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("emix, shed, none"));

    let out = unissl(&["pretrain", "--bogus", "1"], root.path());
    assert_eq!(out.status.code(), Some(1));

    let data = root.path().join("missing_data");
    let out = unissl(
        &["pretrain", "--objective", "shed", "--spec", "synth_image", "--steps", "1", "--layers", "1", "--d-model", "12"],
        root.path(),
    );
    assert_eq!(out.status.code(), Some(1), "heads must divide d_model");
    let out = unissl(
        &[
            "pretrain", "--objective", "shed", "--spec", "synth_image", "--steps", "1", "--layers", "1", "--d-model", "8",
            "--heads", "2", "--data-dir", data.to_str().unwrap(),
        ],
        root.path(),
    );
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn flags_override_the_config_file_and_env_sets_the_root() {
    let root = tempfile::tempdir().unwrap();
    let file = root.path().join("run.toml");
    std::fs::write(&file, "objective = \"none\"\nspec = \"synth_tokens\"\nsteps = 100\nlayers = 1\nd_model = 8\nheads = 2\n").unwrap();
    let out = unissl(&["pretrain", "--config", file.to_str().unwrap(), "--steps", "0"], root.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let runs: Vec<_> = std::fs::read_dir(root.path()).unwrap().filter_map(|e| e.ok()).filter(|e| e.path().is_dir()).collect();
    assert_eq!(runs.len(), 1);
    let snapshot = std::fs::read_to_string(runs[0].path().join("config.toml")).unwrap();
    assert!(snapshot.contains("steps = 0"), "{snapshot}");
}
