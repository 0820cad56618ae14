// SPDX-License-Identifier: Apache-2.0

use msc_core::synth::{synth_scene, SceneSpec};
use msc_core::toytrain::pretrain::{self, moving_average, PretrainConfig, Trainer};
use msc_core::toytrain::Metrics;
use msc_core::{MscError, PointCloud, Rng};

fn scenes(n: u64) -> Vec<PointCloud> {
    (0..n)
        .map(|i| pretrain::with_normals(synth_scene(&SceneSpec::default(), &mut Rng::derive(77, i)).unwrap()).unwrap())
        .collect()
}

fn small_config(steps: u64) -> PretrainConfig {
    let mut cfg = PretrainConfig {
        batch: 2,
        steps,
        ..PretrainConfig::default()
    };
    cfg.train.hidden = 16;
    cfg.train.feat_dim = 8;
    cfg.train.n_max = 256;
    cfg
}

#[test]
fn zero_learning_rate_freezes_parameters() {
    let data = scenes(4);
    let mut cfg = small_config(3);
    cfg.train.lr = 0.0;
    let mut t = Trainer::new(cfg, 1);
    let before = t.model.clone();
    let run = t.run(&data, |_| Ok(())).unwrap();
    assert_eq!(run.len(), 3);
    assert!(run.iter().all(|m| m.l_total.is_finite()));
    assert_eq!(t.model, before);
}

#[test]
fn contrastive_only_training_lowers_the_loss() {
    let data = scenes(8);
    let mut cfg = small_config(60);
    cfg.train.mask_rate = 0.0;
    cfg.train.objective.lambda_c = 0.0;
    cfg.train.objective.lambda_n = 0.0;
    let mut t = Trainer::new(cfg, 2);
    let run = t.run(&data, |_| Ok(())).unwrap();
    for m in &run {
        assert_eq!(m.l_total, m.l_nce);
        assert_eq!(m.l_color, 0.0);
    }
    let nce: Vec<f64> = run.iter().map(|m| m.l_nce).collect();
    let ma = moving_average(&nce, 10);
    assert!(ma[59] < ma[9], "{} vs {}", ma[59], ma[9]);
}

#[test]
fn resume_continues_bit_exactly() {
    let data = scenes(4);
    let mut whole = Trainer::new(small_config(6), 3);
    let full = whole.run(&data, |_| Ok(())).unwrap();

    let mut first = Trainer::new(small_config(3), 3);
    let head = first.run(&data, |_| Ok(())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    first.checkpoint().save(&path).unwrap();
    let ck = msc_core::toytrain::checkpoint::Checkpoint::load(&path).unwrap();
    let mut second = Trainer::from_checkpoint(small_config(6), ck).unwrap();
    let tail = second.run(&data, |_| Ok(())).unwrap();

    let joined: Vec<Metrics> = head.into_iter().chain(tail).collect();
    assert_eq!(joined, full);
    assert_eq!(second.model, whole.model);
    assert_eq!(second.opt, whole.opt);
}

#[test]
fn same_seed_same_csv_bytes() {
    let data = scenes(4);
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for name in ["a.csv", "b.csv"] {
        let mut t = Trainer::new(small_config(4), 9);
        let run = t.run(&data, |_| Ok(())).unwrap();
        let path = dir.path().join(name);
        pretrain::write_metrics_csv(&path, &run, false).unwrap();
        files.push(std::fs::read(&path).unwrap());
    }
    assert_eq!(files[0], files[1]);
    let text = String::from_utf8(files.pop().unwrap()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], Metrics::CSV_HEADER);
    assert_eq!(lines.len(), 5);
    for (i, l) in lines[1..].iter().enumerate() {
        assert!(l.starts_with(&format!("{},", i + 1)));
        assert_eq!(l.split(',').count(), 7);
    }
}

#[test]
fn empty_dataset_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("notes.txt"), "not a scene").unwrap();
    let err = pretrain::load_dataset(dir.path()).unwrap_err();
    assert!(matches!(&err, MscError::InvalidInput(m) if m.contains("no .mscb or .ply")), "{err}");
}
