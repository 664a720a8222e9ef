use std::path::Path;
use std::process::{Command, Output};

fn fedfoa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedfoa"))
        .args(args)
        .output()
        .expect("binary runs")
}

const TINY: &[&str] = &[
    "--set", "rounds=3",
    "--set", "num_clients=2",
    "--set", "batches_per_round=2",
    "--set", "batch_size=16",
    "--set", "projection_dim=4",
    "--set", "t_warm=1",
    "--set", "data_classes=3",
    "--set", "data_dim=6",
    "--set", "data_train_per_class=20",
    "--set", "data_test_per_class=5",
    "--set", "probe_every=1",
    "--set", "probe_epochs=10",
];

fn train(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--seed", "3", "--out", out.to_str().unwrap()];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    fedfoa(&args)
}

#[test]
fn check_passes() {
    let out = fedfoa(&["check"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}");
    for suite in ["qr", "svd", "procrustes", "gradient"] {
        assert!(text.lines().any(|l| l.starts_with(suite) && l.ends_with("ok")), "{text}");
    }
}

#[test]
fn batch_smaller_than_projection_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = train(dir.path(), &["--set", "batch_size=2"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("batch_size"), "{err}");
}

#[test]
fn train_requires_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = fedfoa(&["train", "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
}

#[test]
fn unknown_key_is_reported() {
    let out = fedfoa(&["commcost", "--set", "bogus=1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn local_only_and_lambda_zero_write_identical_metrics() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(train(a.path(), &["--mode", "local-only"]).status.success());
    assert!(train(b.path(), &["--mode", "fedfoa", "--lambda", "0"]).status.success());
    for file in ["metrics.csv", "metrics.ndjson", "record_log.ndjson", "probes.csv"] {
        let x = std::fs::read(a.path().join(file)).unwrap();
        let y = std::fs::read(b.path().join(file)).unwrap();
        assert_eq!(x, y, "{file} differs");
    }
    for i in 0..2 {
        let ckpt = format!("checkpoints/client_{i}.ckpt");
        assert_eq!(
            std::fs::read(a.path().join(&ckpt)).unwrap(),
            std::fs::read(b.path().join(&ckpt)).unwrap()
        );
    }
}

#[test]
fn train_outputs_feed_the_other_commands() {
    let dir = tempfile::tempdir().unwrap();
    let out = train(dir.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "round,client_id,arch_id,loss_contrastive,loss_reg,trace_rbar,bytes_up,bytes_down"
    );
    assert_eq!(csv.lines().count(), 1 + 3 * 2);

    let log = dir.path().join("record_log.ndjson");
    let heat = fedfoa(&["heatmap", "--log", log.to_str().unwrap(), "--rounds", "1,3"]);
    assert!(heat.status.success());
    assert_eq!(
        String::from_utf8_lossy(&heat.stdout).lines().collect::<Vec<_>>().len(),
        1 + 2
    );
    let missing = fedfoa(&["heatmap", "--log", log.to_str().unwrap(), "--rounds", "9"]);
    assert!(!missing.status.success());

    let ckpt = dir.path().join("checkpoints/client_0.ckpt");
    let mut probe = vec!["probe", "--checkpoint", ckpt.to_str().unwrap(), "--seed", "3"];
    probe.extend_from_slice(TINY);
    let probed = fedfoa(&probe);
    assert!(probed.status.success(), "{}", String::from_utf8_lossy(&probed.stderr));
    let acc: f64 = String::from_utf8_lossy(&probed.stdout).trim().parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    let mut embed = vec!["embed", "--checkpoint", ckpt.to_str().unwrap(), "--seed", "3", "--count", "7"];
    embed.extend_from_slice(TINY);
    let emb = fedfoa(&embed);
    assert!(emb.status.success());
    let text = String::from_utf8_lossy(&emb.stdout);
    assert_eq!(text.lines().next().unwrap(), "label,e0,e1,e2,e3");
    assert_eq!(text.lines().count(), 8);
}

#[test]
fn commcost_reports_ratio_b() {
    let out = fedfoa(&["commcost", "--set", "projection_dim=16", "--set", "batches_per_round=10"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success());
    let bytes: Vec<u64> = text
        .lines()
        .map(|l| l.split_whitespace().nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(bytes[1], 10 * bytes[0]);
}
