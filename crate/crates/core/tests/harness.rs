use std::collections::HashSet;
use std::fs;
use std::path::Path;

use maskctc::harness::{gen_data, train_model, write_dataset, ExperimentTag, RunConfig, Split, SynthSpec};

fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn same_seed_writes_identical_dataset_files() {
    let spec = SynthSpec {
        n_train: 40,
        n_dev: 10,
        n_test: 10,
        seed: 11,
        ..Default::default()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_dataset(&gen_data(&spec).unwrap(), a.path()).unwrap();
    write_dataset(&gen_data(&spec).unwrap(), b.path()).unwrap();
    let (ta, tb) = (tree_bytes(a.path()), tree_bytes(b.path()));
    assert_eq!(ta.len(), 1 + 3 + 60);
    assert!(ta == tb);
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let ds = gen_data(&SynthSpec {
        n_train: 1,
        n_dev: 1,
        n_test: 1,
        ..Default::default()
    })
    .unwrap();
    let err = write_dataset(&ds, &blocker.join("sub")).unwrap_err();
    assert_eq!(err.kind(), "IoError");
}

#[test]
fn splits_share_no_utterance() {
    let ds = gen_data(&SynthSpec::default()).unwrap();
    let key = |e: &maskctc::model::Example| {
        let mut k: Vec<u64> = e.y.iter().map(|&t| t as u64).collect();
        k.extend(e.features.iter().map(|x| x.to_bits()));
        k
    };
    let train: HashSet<_> = ds.train.examples.iter().map(key).collect();
    for split in [Split::Dev, Split::Test] {
        for e in &ds.split(split).examples {
            assert!(!train.contains(&key(e)));
        }
    }
    let dev: HashSet<_> = ds.dev.examples.iter().map(key).collect();
    assert!(ds.test.examples.iter().all(|e| !dev.contains(&key(e))));
}

#[test]
fn default_training_lowers_the_loss() {
    let cfg = RunConfig::default().with_tag(ExperimentTag::MaskAxe);
    let ds = gen_data(&cfg.synth).unwrap();
    let (model, report) = train_model(&cfg, &ds).unwrap();
    assert!(model.is_finite());
    assert_eq!(report.losses.len(), 2000);
    let window = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let means: Vec<f64> = report.losses.chunks(200).map(window).collect();
    assert!(means.last().unwrap() < &(0.7 * means[0]), "{means:?}");
    assert!(report.losses[1999] < report.losses[0]);
}
