use std::path::Path;
use std::process::{Command, Output};

fn tscn(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tscn"))
        .args(args)
        .current_dir(cwd)
        .env("TSCN_THREADS", "1")
        .output()
        .expect("spawn tscn")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn synth_then_train_leaves_checkpoint_and_loss_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let o = tscn(&["synth", "--ids", "4", "--frames", "4", "--extent", "16x16", "--out", "d/"], dir);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.join("d/person_0000/cam_0/0000.png").is_file());

    let o = tscn(&["train", "--data", "d/", "--config", "desk", "--epochs", "2", "--out", "run"], dir);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let run = dir.join("run");
    assert!(run.join("checkpoint.bin").is_file());
    let loss = std::fs::read_to_string(run.join("loss.csv")).unwrap();
    assert!(loss.starts_with("epoch,step,"));
    assert_eq!(loss.lines().count(), 1 + 2 * 2);

    let m = manifest(&run);
    assert_eq!(m["verb"], "train");
    assert_eq!(m["config"]["training"]["epochs"], 2);
    for name in ["checkpoint.bin", "loss.csv", "config.txt", "cmc.csv"] {
        assert_eq!(m["artifacts"][name].as_str().unwrap().len(), 64, "{name}");
    }

    let o = tscn(
        &["eval", "--data", "d", "--config", "run/config.txt", "--checkpoint", "run/checkpoint.bin", "--out", "ev"],
        dir,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    // Same seed, same split, same weights: the held-out curve matches.
    assert_eq!(
        std::fs::read(dir.join("ev/cmc.csv")).unwrap(),
        std::fs::read(run.join("cmc.csv")).unwrap()
    );
}

#[test]
fn identical_seeds_give_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let args = |out: &'static str| {
        vec!["train", "--epochs", "2", "--seed", "5", "--override", "data.num_ids=4", "--override", "data.frames_per_seq=4", "--out", out]
    };
    assert_eq!(code(&tscn(&args("a"), tmp.path())), 0);
    assert_eq!(code(&tscn(&args("b"), tmp.path())), 0);
    let (a, b) = (manifest(&tmp.path().join("a")), manifest(&tmp.path().join("b")));
    assert_eq!(a["artifacts"], b["artifacts"]);
}

#[test]
fn gradcheck_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tscn(&["gradcheck", "--out", "gc"], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("gradient: pass"));
    assert_eq!(manifest(&tmp.path().join("gc"))["passed"], true);
}

#[test]
fn oracle_check_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tscn(&["oracle-check", "--out", "oc"], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn ablate_fusion_method_writes_five_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tscn(
        &[
            "ablate",
            "fusion_method",
            "--epochs",
            "1",
            "--seeds",
            "2",
            "--override",
            "data.num_ids=4",
            "--override",
            "data.frames_per_seq=4",
            "--out",
            "ab",
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("ab/fusion_method.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 5, "{csv}");
    assert!(rows.iter().all(|r| r.split(',').nth(1) == Some("2")));
    for f in ["fusion_method_seeds.csv", "fusion_method.json", "fusion_method.svg"] {
        assert!(tmp.path().join("ab").join(f).is_file(), "{f}");
    }
    assert_eq!(manifest(&tmp.path().join("ab"))["seeds"], serde_json::json!([0, 1]));
}

#[test]
fn usage_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cases: [&[&str]; 6] = [
        &["frobnicate"],
        &["train", "--config", "no_such_preset"],
        &["train", "--override", "network.kernel=five"],
        &["ablate", "no_such_grid"],
        &["synth", "--ids", "1", "--out", "d"],
        &["synth", "--extent", "16by16", "--out", "d"],
    ];
    for args in cases {
        let o = tscn(args, tmp.path());
        assert_eq!(code(&o), 2, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn runtime_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tscn(&["train", "--data", "missing_dir", "--epochs", "1"], tmp.path());
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    let o = tscn(&["eval", "--checkpoint", "missing.bin"], tmp.path());
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
}
