use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
iterations = [1, 3]
model_dim = 8

[loss]
steps = 40
batch_size = 4

[synth]
n_train = 20
n_dev = 5
n_test = 6
"#;

fn maskctc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maskctc")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = maskctc(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn full_pipeline_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = root.join("run.toml");
    fs::write(&cfg, SMALL).unwrap();
    let data = root.join("data");
    let out = root.join("out");

    ok(&["gen-data", "--config", s(&cfg), "--seed", "4", "--out-dir", s(&data)]);
    let refs = fs::read_to_string(data.join("test/refs.txt")).unwrap();
    assert_eq!(refs.lines().count(), 6);
    assert!(data.join("train/feats/00019.feat").exists());

    let common = [
        "--config",
        s(&cfg),
        "--seed",
        "4",
        "--out-dir",
        s(&out),
        "--data-dir",
        s(&data),
    ];
    ok(&[&["train", "--tag", "mask_rec_axe"], &common[..]].concat());
    let ckpt = out.join("model_mask_rec_axe.ckpt");
    assert!(ckpt.exists());
    assert_eq!(
        fs::read_to_string(out.join("loss_mask_rec_axe.csv"))
            .unwrap()
            .lines()
            .count(),
        41
    );

    ok(&[&["decode", "--checkpoint", s(&ckpt), "--iterations", "3"], &common[..]].concat());
    let hyps = fs::read_to_string(out.join("decode_test_k3.txt")).unwrap();
    assert_eq!(hyps.lines().count(), 6);
    for line in fs::read_to_string(out.join("decode_test_k3.jsonl")).unwrap().lines() {
        let rec: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in [
            "id",
            "iteration",
            "hypothesis",
            "filled_positions",
            "probabilities",
            "remaining_masks",
        ] {
            assert!(rec.get(key).is_some(), "{key} missing in {line}");
        }
    }

    let csv = ok(&[
        &["eval", "--checkpoint", s(&ckpt), "--tag", "mask_rec_axe"],
        &common[..],
    ]
    .concat());
    assert_eq!(
        csv.lines().next().unwrap(),
        "tag,split,iterations,utterances,ref_tokens,edits,wer"
    );
    assert_eq!(csv.lines().count(), 1 + 6);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report_mask_rec_axe.json")).unwrap()).unwrap();
    assert_eq!(summary["rows"].as_array().unwrap().len(), 6);

    for kind in ["ce", "axe"] {
        ok(&[&["scatter", "--checkpoint", s(&ckpt), "--loss-kind", kind], &common[..]].concat());
        let text = fs::read_to_string(out.join(format!("scatter_{kind}_test.csv"))).unwrap();
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows[0], "id,loss,levenshtein");
        assert_eq!(rows.len(), 1 + 6);
        assert!(text.lines().last().unwrap().starts_with("# pearson,"));
    }
}

#[test]
fn run_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, SMALL).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["run", "--config", s(&cfg), "--seed", "9", "--out-dir", s(out)]);
    }
    for tag in ["mask_ce", "mask_axe", "mask_rec_axe"] {
        for file in [
            format!("report_{tag}.csv"),
            format!("report_{tag}.json"),
            format!("model_{tag}.ckpt"),
        ] {
            assert_eq!(
                fs::read(a.join(&file)).unwrap(),
                fs::read(b.join(&file)).unwrap(),
                "{file}"
            );
        }
    }
}

#[test]
fn failures_print_a_json_error_record() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[loss]\nctc_weight = 2.0\n").unwrap();
    let out = maskctc(&["train", "--config", s(&cfg), "--out-dir", s(dir.path())]);
    assert!(!out.status.success());
    let rec: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(rec["error"], "InvalidConfig");

    let missing = dir.path().join("nope.ckpt");
    let out = maskctc(&["decode", "--checkpoint", s(&missing), "--out-dir", s(dir.path())]);
    assert!(!out.status.success());
    let rec: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(rec["error"], "IoError");
}
