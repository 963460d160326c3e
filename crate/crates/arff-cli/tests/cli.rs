use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use tempfile::tempdir;

fn arff(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_arff"));
    cmd.args(args).env_remove("ARFF_SEED");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("failed to spawn arff")
}

fn minimal_config() -> String {
    "[target]\n\
     kind = bump\n\
     dim = 1\n\
     direction = axis\n\
     sharpness = 0.5\n\
     period = 12\n\
     samples = 100\n\
     \n\
     [train]\n\
     algorithm = lattice\n\
     k = 16\n\
     iterations = 2\n\
     seed = 7\n\
     \n\
     [walk]\n\
     delta = 0.5\n\
     \n\
     [solver]\n\
     lambda1 = 0.05\n"
        .to_string()
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("run.ini");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn train_minimal_config_emits_exactly_three_files_quickly() {
    let dir = tempdir().unwrap();
    let cfg = write_config(dir.path(), &minimal_config());
    let out = dir.path().join("out");
    let start = Instant::now();
    let result = arff(&["train", "-c", cfg.to_str().unwrap(), "-o", out.to_str().unwrap()], &[]);
    assert!(result.status.success(), "stderr: {}", String::from_utf8_lossy(&result.stderr));
    assert!(start.elapsed().as_secs() < 5, "took {:?}", start.elapsed());

    let mut names: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, vec!["history.csv", "metadata.ini", "model.csv"]);

    // Every emitted CSV parses with the library's own readers.
    let history = fs::read_to_string(out.join("history.csv")).unwrap();
    arff::output::parse_history(&history).unwrap();
    let model = fs::read_to_string(out.join("model.csv")).unwrap();
    arff::output::parse_model(&model).unwrap();
    arff::config::parse_metadata(&fs::read_to_string(out.join("metadata.ini")).unwrap()).unwrap();
}

#[test]
fn unknown_config_key_names_itself_and_the_nearest_valid_key() {
    let dir = tempdir().unwrap();
    let broken = minimal_config().replace("lambda1 = 0.05", "lamda1 = 0.05");
    let cfg = write_config(dir.path(), &broken);
    let out = dir.path().join("out");
    let result = arff(&["train", "-c", cfg.to_str().unwrap(), "-o", out.to_str().unwrap()], &[]);
    assert_eq!(result.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("lamda1"), "stderr: {stderr}");
    assert!(stderr.contains("lambda1"), "stderr: {stderr}");
}

#[test]
fn rerun_with_same_seed_is_byte_identical() {
    let dir = tempdir().unwrap();
    let cfg = write_config(dir.path(), &minimal_config());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let result =
            arff(&["train", "-c", cfg.to_str().unwrap(), "-o", out.to_str().unwrap()], &[]);
        assert!(result.status.success());
    }
    assert_eq!(fs::read(a.join("history.csv")).unwrap(), fs::read(b.join("history.csv")).unwrap());
    assert_eq!(fs::read(a.join("model.csv")).unwrap(), fs::read(b.join("model.csv")).unwrap());
}

#[test]
fn arff_seed_env_replaces_the_config_seed() {
    let dir = tempdir().unwrap();
    let cfg = write_config(dir.path(), &minimal_config());
    let native = dir.path().join("native");
    let env_run = dir.path().join("env");
    let rewritten = dir.path().join("rewritten");

    let result = arff(&["train", "-c", cfg.to_str().unwrap(), "-o", native.to_str().unwrap()], &[]);
    assert!(result.status.success());
    let result = arff(
        &["train", "-c", cfg.to_str().unwrap(), "-o", env_run.to_str().unwrap()],
        &[("ARFF_SEED", "1234")],
    );
    assert!(result.status.success());
    let cfg2 = write_config(
        &dir.path().join("."),
        &minimal_config().replace("seed = 7", "seed = 1234"),
    );
    let result =
        arff(&["train", "-c", cfg2.to_str().unwrap(), "-o", rewritten.to_str().unwrap()], &[]);
    assert!(result.status.success());

    let native_h = fs::read(native.join("history.csv")).unwrap();
    let env_h = fs::read(env_run.join("history.csv")).unwrap();
    let rewritten_h = fs::read(rewritten.join("history.csv")).unwrap();
    assert_ne!(native_h, env_h);
    assert_eq!(env_h, rewritten_h);

    let bad = arff(
        &["train", "-c", cfg.to_str().unwrap(), "-o", dir.path().join("x").to_str().unwrap()],
        &[("ARFF_SEED", "not-a-number")],
    );
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn oracle_cosine_mode_writes_a_two_entry_table() {
    let dir = tempdir().unwrap();
    let cfg = write_config(dir.path(), &minimal_config());
    let table_path = dir.path().join("table.csv");
    let result = arff(
        &[
            "oracle",
            "-c",
            cfg.to_str().unwrap(),
            "--nmax",
            "4",
            "--cos",
            "3",
            "--refine",
            "-o",
            table_path.to_str().unwrap(),
        ],
        &[],
    );
    assert!(result.status.success(), "stderr: {}", String::from_utf8_lossy(&result.stderr));
    let stdout = String::from_utf8_lossy(&result.stdout);
    assert!(stdout.contains("C_p* = "), "stdout: {stdout}");

    let spec = arff::model::LatticeSpec::new(12.0).unwrap();
    let table =
        arff::output::parse_table(&fs::read_to_string(&table_path).unwrap(), spec).unwrap();
    for (n, c) in table.iter() {
        let expect = if n[0].abs() == 3 { 0.5 } else { 0.0 };
        assert!((c.norm() - expect).abs() < 1e-10, "entry {n:?} = {c}");
    }

    // The doubled-grid check agrees to well below the documented bound.
    let delta: f64 = stdout
        .split("refine_delta = ")
        .nth(1)
        .expect("refine_delta in summary")
        .trim()
        .parse()
        .unwrap();
    assert!(delta < 1e-8, "delta = {delta}");
}

#[test]
fn experiment_rejects_unknown_presets_and_scales() {
    let dir = tempdir().unwrap();
    let result =
        arff(&["experiment", "test99", "-o", dir.path().join("x").to_str().unwrap()], &[]);
    assert_eq!(result.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("test1"), "stderr should list valid names: {stderr}");

    let result = arff(
        &["experiment", "test1", "--scale", "tiny", "-o", dir.path().join("y").to_str().unwrap()],
        &[],
    );
    assert_eq!(result.status.code(), Some(2));

    let result = arff(
        &["experiment", "mnist", "-o", dir.path().join("z").to_str().unwrap()],
        &[],
    );
    assert_eq!(result.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&result.stderr).contains("arff mnist"));
}

#[test]
fn missing_files_exit_with_the_io_code() {
    let dir = tempdir().unwrap();
    let result = arff(
        &["train", "-c", "/no/such/config.ini", "-o", dir.path().join("o").to_str().unwrap()],
        &[],
    );
    assert_eq!(result.status.code(), Some(4));

    let result = arff(
        &[
            "mnist",
            "--images",
            "/no/such/images",
            "--labels",
            "/no/such/labels",
            "--test-images",
            "/no/such/ti",
            "--test-labels",
            "/no/such/tl",
            "-o",
            dir.path().join("m").to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(result.status.code(), Some(4));
}
