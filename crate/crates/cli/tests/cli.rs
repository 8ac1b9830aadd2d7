use std::path::Path;
use std::process::{Command, Output};

fn wscdn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wscdn")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_train_evaluate_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = wscdn(&["gen-data", "--out", path(&data), "--n-train", "6", "--n-test", "4", "--seed", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(data.join("manifest.json").exists());

    let weak = dir.path().join("weak");
    let o = wscdn(&[
        "train", "--mode", "weak_only", "--dataset", path(&data), "--out", path(&weak), "--epochs", "2",
        "--set", "eval_every=1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("epoch,detector,map,corloc"));
    for f in ["model.ckpt", "runlog.csv", "map.svg", "steps.csv", "config.txt"] {
        assert!(weak.join(f).exists(), "{f} missing");
    }
    let config = std::fs::read_to_string(weak.join("config.txt")).unwrap();
    assert!(config.contains("mode = weak_only") && config.contains("epochs = 2"));

    let cascade = dir.path().join("cascade");
    let o = wscdn(&[
        "train", "--mode", "cascade", "--dataset", path(&data), "--out", path(&cascade), "--epochs", "1",
        "--weak-checkpoint", path(&weak.join("model.ckpt")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("CS_S"));

    let dets = dir.path().join("dets.csv");
    let ckpt = weak.join("model.ckpt");
    let o = wscdn(&[
        "eval", "--checkpoint", path(&ckpt), "--dataset", path(&data), "--detector", "I_W", "--out", path(&dets),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).lines().nth(1).unwrap().starts_with("I_W,test,"));
    assert!(std::fs::read_to_string(&dets).unwrap().starts_with("image_id,class,score,x1,y1,x2,y2"));

    let o = wscdn(&["eval", "--checkpoint", path(&ckpt), "--dataset", path(&data), "--detector", "CL_S"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("error [config]"), "{}", stderr(&o));

    let plots = dir.path().join("plots");
    let o = wscdn(&["plot", "--runlog", path(&weak.join("runlog.csv")), "--out", path(&plots)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(std::fs::read_to_string(plots.join("map.svg")).unwrap().contains("data-tag=\"I_W\""));
}

#[test]
fn configuration_errors_are_reported_by_category() {
    let o = wscdn(&["train", "--mode", "cascade", "--dataset", "/nonexistent"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("error [config]"), "{}", stderr(&o));

    let o = wscdn(&["train", "--set", "beta=2"]);
    assert!(stderr(&o).contains("error [config]"), "{}", stderr(&o));
    let o = wscdn(&["train", "--set", "nonsense"]);
    assert!(stderr(&o).contains("error [config]"), "{}", stderr(&o));
    let o = wscdn(&["train", "--preset", "huge"]);
    assert!(stderr(&o).contains("error [config]"), "{}", stderr(&o));
}

#[test]
fn gradcheck_reports_every_instance() {
    let o = wscdn(&["gradcheck", "--instances", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().filter(|l| l.starts_with("instance")).count(), 4);
    assert!(out.contains("ok: max relative error"));
}
