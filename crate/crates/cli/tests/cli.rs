use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tsa(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsa"))
        .current_dir(dir)
        .env_remove("TSA_SEED")
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn synth(dir: &Path, seed: &str) {
    ok(&tsa(
        dir,
        &["synth", "--out-features", "x.txt", "--out-labels", "y.txt", "--seed", seed],
    ));
}

fn train(dir: &Path, z: &str) -> Output {
    tsa(
        dir,
        &["train", "--features", "x.txt", "--out-z", z, "--out-model", "m.txt", "--log", "log.txt", "--seed", "5"],
    )
}

#[test]
fn pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, "2");
    ok(&train(dir, "z.bin"));
    let x = tsa::data_io::load_features(&dir.join("x.txt"), tsa::FeatureFormat::Text).unwrap();
    let z = tsa::data_io::load_features(&dir.join("z.bin"), tsa::FeatureFormat::Binary).unwrap();
    assert_eq!((z.rows(), z.cols()), (x.rows(), x.cols()));

    let log = fs::read_to_string(dir.join("log.txt")).unwrap();
    assert!(log.starts_with("# L = 6\n"));
    assert!(log.contains("# seed = 5\n"));
    assert!(log.lines().any(|l| l.starts_with("epoch 1 loss ")));

    ok(&tsa(dir, &["segment", "--z", "z.bin", "--method", "kmeans", "--k", "4", "--out", "p.txt"]));
    let json = ok(&tsa(dir, &["eval", "--pred", "p.txt", "--gt", "y.txt"]));
    assert!(json.starts_with("{\"mof\":") && json.trim_end().ends_with('}'));

    let perfect = ok(&tsa(dir, &["eval", "--pred", "y.txt", "--gt", "y.txt"]));
    assert!(perfect.starts_with("{\"mof\":1.0,\"iou\":1.0,\"f1\":1.0,"));
}

#[test]
fn train_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, "4");
    ok(&train(dir, "a.bin"));
    ok(&train(dir, "b.bin"));
    assert_eq!(fs::read(dir.join("a.bin")).unwrap(), fs::read(dir.join("b.bin")).unwrap());
}

#[test]
fn seed_falls_back_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let run = |seed: &str, out: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_tsa"))
            .current_dir(dir)
            .env("TSA_SEED", seed)
            .args(["synth", "--out-features", out, "--out-labels", "l.txt"])
            .output()
            .unwrap();
        ok(&o);
        fs::read(dir.join(out)).unwrap()
    };
    assert_eq!(run("7", "a.txt"), run("7", "b.txt"));
    assert_ne!(run("7", "a.txt"), run("8", "c.txt"));
}

#[test]
fn config_file_and_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, "1");
    fs::write(dir.join("run.cfg"), "# short run\nmax_epochs = 3\nmin_epochs = 3\nh = 0.5\n").unwrap();
    let out = tsa(
        dir,
        &["train", "--features", "x.txt", "--config", "run.cfg", "--set", "h=0.25", "--out-z", "z.bin", "--out-model", "m.txt", "--log", "log.txt"],
    );
    ok(&out);
    let log = fs::read_to_string(dir.join("log.txt")).unwrap();
    assert!(log.contains("# h = 0.25\n"));
    assert_eq!(log.lines().filter(|l| l.starts_with("epoch ")).count(), 3);

    let bad = tsa(dir, &["train", "--features", "x.txt", "--set", "nope=1", "--out-z", "z", "--out-model", "m"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn dump_triplets_table() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, "1");
    ok(&tsa(
        dir,
        &["train", "--features", "x.txt", "--out-z", "z.bin", "--out-model", "m.txt", "--dump-triplets", "t.txt"],
    ));
    let table = fs::read_to_string(dir.join("t.txt")).unwrap();
    assert!(table.starts_with("# epoch 1\nanchor positive negative\n"));
    let row = table.lines().nth(2).unwrap();
    assert_eq!(row.split_whitespace().count(), 3);
}

#[test]
fn equal_split_file() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("z.txt"), "6 1\n0\n1\n2\n3\n4\n5\n").unwrap();
    ok(&tsa(dir, &["segment", "--z", "z.txt", "--method", "equal", "--k", "3", "--out", "p.txt"]));
    assert_eq!(fs::read_to_string(dir.join("p.txt")).unwrap().trim_end(), "0\n0\n1\n1\n2\n2");

    let too_many = tsa(dir, &["segment", "--z", "z.txt", "--method", "kmeans", "--k", "7", "--out", "q.txt"]);
    assert_eq!(too_many.status.code(), Some(1));
    let unknown = tsa(dir, &["segment", "--z", "z.txt", "--method", "dbscan", "--k", "2", "--out", "q.txt"]);
    assert_eq!(unknown.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("dbscan"));
}

#[test]
fn errors_name_the_problem() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let missing = tsa(dir, &["train", "--features", "missing.txt", "--out-z", "z", "--out-model", "m"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("missing.txt"));

    fs::write(dir.join("a.txt"), "x\ny\nx\n").unwrap();
    fs::write(dir.join("b.txt"), "x\ny\n").unwrap();
    let mismatch = tsa(dir, &["eval", "--pred", "a.txt", "--gt", "b.txt"]);
    assert_eq!(mismatch.status.code(), Some(1));
    assert!(mismatch.stdout.is_empty());

    let unknown_flag = tsa(dir, &["eval", "--pred", "a.txt", "--gt", "a.txt", "--frobnicate"]);
    assert_eq!(unknown_flag.status.code(), Some(1));
}

#[test]
fn eval_removes_background() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    // 8 background frames, 4 action frames
    let gt = "bg\nbg\nbg\nbg\npour\npour\nbg\nbg\nstir\nstir\nbg\nbg\n";
    fs::write(dir.join("gt.txt"), gt).unwrap();
    fs::write(dir.join("pred.txt"), gt).unwrap();
    let json = ok(&tsa(
        dir,
        &["eval", "--pred", "pred.txt", "--gt", "gt.txt", "--background", "bg", "--tau", "0.75", "--seed", "3"],
    ));
    // floor(0.75 * 8) = 6 background frames removed
    assert!(json.contains("\"n_frames\":6"), "{json}");
}

#[test]
fn plot_draws_one_rect_per_run() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, "3");
    ok(&tsa(dir, &["plot", "--gt", "y.txt", "--out", "gt.svg"]));
    let svg = fs::read_to_string(dir.join("gt.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    assert_eq!(svg.matches("<rect").count(), 6);

    ok(&tsa(dir, &["plot", "--gt", "y.txt", "--pred", "same=y.txt", "--out", "two.svg"]));
    let svg = fs::read_to_string(dir.join("two.svg")).unwrap();
    assert_eq!(svg.matches("<rect").count(), 12);
    assert_eq!(svg.matches("<g ").count(), svg.matches("</g>").count());
}
