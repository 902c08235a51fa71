use std::path::Path;
use std::process::{Command, Output};

fn hierdet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hierdet")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = hierdet(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn end_to_end_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let cfg = dir.path().join("tiny.cfg");
    std::fs::write(&cfg, "train.total_iters = 2\ntrain.batch_size = 2\n").unwrap();
    ok(&["synth", "--out", p(&corpus), "--count", "6", "--seed", "3"]);
    assert!(corpus.join("wider.txt").exists() && corpus.join("fddb.txt").exists());

    let ckpt = dir.path().join("m.ckpt");
    ok(&["train", "--config", p(&cfg), "--data", p(&corpus), "--out", p(&ckpt)]);
    let log = std::fs::read_to_string(dir.path().join("m.ckpt.log.csv")).unwrap();
    assert!(log.starts_with("iter,total,conf,loc,N,lr\n"));
    assert_eq!(log.lines().count(), 3);

    for metric in ["ap", "roc-discrete", "roc-continuous"] {
        let csv = dir.path().join(format!("{metric}.csv"));
        let summary = ok(&["eval", "--ckpt", p(&ckpt), "--data", p(&corpus), "--metric", metric, "--csv", p(&csv)]);
        assert!(summary.starts_with("metric,value,n_images,n_gt,n_det\n"), "{summary}");
        assert!(std::fs::read_to_string(&csv).unwrap().starts_with("x,y\n"));
    }

    let image = corpus.join("images/synth_00000.png");
    let dets = ok(&["detect", "--ckpt", p(&ckpt), "--image", p(&image), "--score-floor", "0.01"]);
    for line in dets.lines().skip(1) {
        assert_eq!(line.split(',').count(), 5, "{line}");
    }
    let acts = ok(&["dump-activations", "--ckpt", p(&ckpt), "--image", p(&image), "--bins", "4"]);
    assert!(acts.lines().any(|l| l.starts_with("fuse0.lateral_bn,")));

    let stats = ok(&["stats", "--annotations", p(&corpus.join("wider.txt")), "--root", p(&corpus)]);
    assert!(stats.starts_with("bucket,count,fraction\n"));
    assert!(stats.contains("bucket,rank,height,width,percent"));
    let fddb = ok(&["stats", "--annotations", p(&corpus.join("fddb.txt")), "--format", "fddb"]);
    assert_eq!(fddb.lines().count(), 6);
}

#[test]
fn geometry_and_receptive_field_reports() {
    let anchors = ok(&["anchors", "--hierarchy", "2"]);
    // 8×8 cells of six boxes plus a header
    assert_eq!(anchors.lines().count(), 8 * 8 * 6 + 1);
    let rf = ok(&["rf"]);
    assert!(rf.lines().any(|l| l.starts_with("conv2_2,")));
    let dir = tempfile::tempdir().unwrap();
    let vgg = dir.path().join("vgg.cfg");
    std::fs::write(&vgg, "network.preset = vgg16\n").unwrap();
    let rf = ok(&["rf", "--config", p(&vgg)]);
    assert!(rf.lines().any(|l| l.starts_with("conv3_3,40,4,")), "{rf}");
}

#[test]
fn exit_codes_separate_usage_data_and_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(hierdet(&["--help"]).status.code(), Some(0));
    assert_eq!(hierdet(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(hierdet(&["anchors", "--hierarchy"]).status.code(), Some(1));

    let missing = dir.path().join("missing.ckpt");
    let out = hierdet(&["detect", "--ckpt", p(&missing), "--image", p(&missing)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.ckpt"));

    let bad_cfg = dir.path().join("bad.cfg");
    std::fs::write(&bad_cfg, "network.fusion = C\n").unwrap();
    let out = hierdet(&["anchors", "--config", p(&bad_cfg)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));

    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let out = hierdet(&["rf", "--ckpt", p(&junk)]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(hierdet(&["anchors", "--hierarchy", "7"]).status.code(), Some(1));
}
