use std::path::Path;
use std::process::{Command, Output};

use csrp::io;
use csrp::metrics::ConfusionMatrix;
use csrp::supervision::{boundary_labels, LabelMap};
use csrp::Tensor;

const TINY: &str = "\
height = 16
width = 16
channels = 2,4,8,16
classes = 3
epochs_stage1 = 1
epochs_stage2 = 1
batch_size = 2
train_images = 4
val_images = 2
objects = 2
";

fn csrp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csrp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = csrp(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = csrp(args);
    assert!(!out.status.success(), "{args:?} should fail");
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn kv(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no `{key}` in {text}"))
        .parse()
        .unwrap()
}

#[test]
fn train_both_stages_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    std::fs::write(&cfg, TINY).unwrap();
    let (s1, s2) = (dir.path().join("s1"), dir.path().join("s2"));

    let err = fails(&[
        "train",
        "--stage",
        "2",
        "--config",
        s(&cfg),
        "--out",
        s(&s2),
    ]);
    assert!(
        err.contains("contract violation") && err.contains("--resume"),
        "{err}"
    );

    let log = ok(&[
        "train",
        "--stage",
        "1",
        "--config",
        s(&cfg),
        "--out",
        s(&s1),
    ]);
    assert!(log.starts_with("epoch=0 lr=0.010000 loss="), "{log}");
    assert!(log.contains(" val_mAcc=") && log.contains(" val_mIoU="));
    assert!(s1.join(io::MANIFEST).exists() && s1.join("config.txt").exists());
    assert_eq!(
        std::fs::read_to_string(s1.join("train_stage1.log")).unwrap(),
        log
    );

    ok(&[
        "train",
        "--stage",
        "2",
        "--config",
        s(&cfg),
        "--resume",
        s(&s1),
        "--out",
        s(&s2),
    ]);
    let before = io::load_checkpoint(&s1).unwrap();
    let after = io::load_checkpoint(&s2).unwrap();
    for (name, t) in before.iter() {
        if !csrp::pipeline::model::is_stage2_param(name) {
            assert_eq!(after.get(name).unwrap(), t, "{name} moved in stage 2");
        }
    }

    let report = dir.path().join("report.txt");
    let bdr = dir.path().join("bdr");
    let text = ok(&[
        "eval",
        "--ckpt",
        s(&s2),
        "--data",
        s(&cfg),
        "--report",
        s(&report),
        "--boundary-dir",
        s(&bdr),
    ]);
    assert!(text.contains("mIoU"), "{text}");
    let kvs = std::fs::read_to_string(&report).unwrap();
    assert_eq!(kv(&kvs, "classes"), 3.0);
    assert_eq!(kv(&kvs, "pixels"), 2.0 * 16.0 * 16.0);
    assert_eq!(io::list_files(&bdr, "bnd").unwrap().len(), 2);
    // same checkpoint, same report
    let again = dir.path().join("again.txt");
    ok(&[
        "eval",
        "--ckpt",
        s(&s2),
        "--data",
        s(&cfg),
        "--report",
        s(&again),
    ]);
    assert_eq!(
        std::fs::read(&report).unwrap(),
        std::fs::read(&again).unwrap()
    );

    let other = dir.path().join("other.cfg");
    std::fs::write(&other, TINY.replace("classes = 3", "classes = 4")).unwrap();
    let err = fails(&["eval", "--ckpt", s(&s2), "--data", s(&other)]);
    assert!(
        err.contains("contract violation") && err.contains("classes"),
        "{err}"
    );
}

#[test]
fn bad_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, format!("{TINY}learning_rate = 0.1\n")).unwrap();
    let err = fails(&[
        "train",
        "--stage",
        "1",
        "--config",
        s(&cfg),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert!(
        err.contains("config error") && err.contains("learning_rate"),
        "{err}"
    );
}

#[test]
fn boundary_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let gt = LabelMap::new(
        6,
        6,
        (0..36).map(|i| ((i % 6) / 3 + (i / 18)) as u8).collect(),
    )
    .unwrap();
    let (input, output) = (dir.path().join("gt.lbl"), dir.path().join("gt.bnd"));
    io::write_label_map(&input, &gt).unwrap();
    ok(&["boundary", s(&input), s(&output), "--window", "3"]);
    assert_eq!(
        io::read_boundary_map(&output).unwrap(),
        boundary_labels(&gt, 3).unwrap()
    );
    let err = fails(&["boundary", s(&input), s(&output), "--window", "4"]);
    assert!(err.contains("contract violation"), "{err}");
}

#[test]
fn metrics_over_directories() {
    let dir = tempfile::tempdir().unwrap();
    let (pred, gt) = (dir.path().join("pred"), dir.path().join("gt"));
    std::fs::create_dir_all(&pred).unwrap();
    std::fs::create_dir_all(&gt).unwrap();
    let mut cm = ConfusionMatrix::new(2);
    // the hand-checked matrix [[3, 1], [0, 4]] split over two files
    let pairs = [
        (vec![0, 0, 1, 1], vec![0, 0, 0, 1]),
        (vec![0, 1, 1, 1], vec![0, 1, 1, 1]),
    ];
    for (i, (p, g)) in pairs.into_iter().enumerate() {
        let (p, g) = (
            LabelMap::new(2, 2, p).unwrap(),
            LabelMap::new(2, 2, g).unwrap(),
        );
        cm.accumulate(&p, &g).unwrap();
        io::write_label_map(pred.join(format!("{i}.lbl")), &p).unwrap();
        io::write_label_map(gt.join(format!("{i}.lbl")), &g).unwrap();
    }
    let out = dir.path().join("m.txt");
    let text = ok(&[
        "metrics",
        "--pred",
        s(&pred),
        "--gt",
        s(&gt),
        "--classes",
        "2",
        "--out",
        s(&out),
    ]);
    assert!(
        text.contains("mAcc  0.875000") && text.contains("mIoU  0.775000"),
        "{text}"
    );
    assert_eq!(std::fs::read_to_string(&out).unwrap(), cm.report_kv());

    let err = fails(&[
        "metrics",
        "--pred",
        s(&pred),
        "--gt",
        s(&gt),
        "--classes",
        "1",
    ]);
    assert!(err.contains("contract violation"), "{err}");
}

#[test]
fn fuse_writes_features_and_stochastic_rows() {
    let dir = tempfile::tempdir().unwrap();
    let (rgb, thermal) = (dir.path().join("r.dtf"), dir.path().join("t.dtf"));
    io::write_tensor(
        &rgb,
        &Tensor::from_fn(&[4, 3, 3], |i| (i as f64 * 0.37).sin()),
    )
    .unwrap();
    io::write_tensor(
        &thermal,
        &Tensor::from_fn(&[4, 3, 3], |i| (i as f64 * 0.21).cos()),
    )
    .unwrap();
    for relation in ["dot", "gaussian"] {
        let out = dir.path().join(relation);
        ok(&[
            "fuse",
            "--rgb",
            s(&rgb),
            "--thermal",
            s(&thermal),
            "--relation",
            relation,
            "--out",
            s(&out),
        ]);
        for name in ["rgb_enhanced", "thermal_enhanced", "fused"] {
            assert_eq!(
                io::read_tensor(out.join(format!("{name}.dtf")))
                    .unwrap()
                    .dims(),
                &[4, 3, 3]
            );
        }
        let sums = std::fs::read_to_string(out.join("row_sums.txt")).unwrap();
        let values: Vec<f64> = sums
            .lines()
            .filter(|l| !l.starts_with('#'))
            .map(|l| l.split_once('=').unwrap().1.parse().unwrap())
            .collect();
        assert_eq!(values.len(), 4 + 9);
        assert!(
            values.iter().all(|&v| v == 0.0 || (v - 1.0).abs() < 1e-9),
            "{sums}"
        );
    }

    let odd = dir.path().join("odd.dtf");
    io::write_tensor(&odd, &Tensor::zeros(&[4, 2, 3])).unwrap();
    let err = fails(&["fuse", "--rgb", s(&rgb), "--thermal", s(&odd)]);
    assert!(err.contains("shape error"), "{err}");
}

#[test]
fn ablate_single_variant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    std::fs::write(&cfg, TINY).unwrap();
    let out = dir.path().join("table.txt");
    let table = ok(&[
        "ablate",
        "--variants",
        "baseline",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
    ]);
    assert_eq!(table.lines().count(), 2, "{table}");
    assert!(table
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("baseline       none"));
    assert_eq!(std::fs::read_to_string(&out).unwrap(), table);
    let err = fails(&["ablate", "--variants", "nonsense", "--config", s(&cfg)]);
    assert!(err.contains("nonsense"), "{err}");
}
