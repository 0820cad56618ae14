// SPDX-License-Identifier: Apache-2.0

//! Pretraining loop over a scene dataset.
//!
//! Every step draws from its own stream `Rng::derive(seed, step)`, and the
//! initial parameters from stream 0, so a run resumed from a checkpoint
//! continues exactly as the uninterrupted run would.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::checkpoint::Checkpoint;
use super::{train_step, Metrics, Model, OptState, TrainConfig};
use crate::augment::AugmentParams;
use crate::cloud::PointCloud;
use crate::error::{MscError, Result};
use crate::io::{self, Format};
use crate::rng::Rng;
use crate::surfel;
use crate::viewgen::{self, ViewPair};

/// Attempts per scene before an empty view is reported as an error.
const VIEW_RETRIES: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub train: TrainConfig,
    pub augment: AugmentParams,
    pub batch: usize,
    pub steps: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            augment: AugmentParams::default(),
            batch: 8,
            steps: 200,
        }
    }
}

/// Scene files of a dataset directory in name order.
pub fn dataset_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| MscError::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| MscError::io(dir, e))?.path();
        if path.is_file() && Format::from_path(&path).is_some() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Loads every scene of `dir`. Scenes without normals get surfel estimates;
/// points whose estimate is degenerate are dropped.
pub fn load_dataset(dir: &Path) -> Result<Vec<PointCloud>> {
    let files = dataset_files(dir)?;
    if files.is_empty() {
        return Err(MscError::invalid(format!("no .mscb or .ply scenes in {}", dir.display())));
    }
    files
        .par_iter()
        .map(|path| {
            let cloud = io::load_cloud(path, Format::from_path(path).expect("filtered"))?;
            with_normals(cloud)
        })
        .collect()
}

pub fn with_normals(cloud: PointCloud) -> Result<PointCloud> {
    if cloud.normals.is_some() {
        return Ok(cloud);
    }
    let k = surfel::DEFAULT_K.min(cloud.len());
    let est = surfel::estimate_normals(&cloud, k, None)?;
    let keep: Vec<usize> = (0..cloud.len()).filter(|&i| est.valid[i]).collect();
    let mut out = cloud;
    out.normals = Some(est.normals);
    let dropped = out.len() - keep.len();
    if dropped > 0 {
        log::warn!("dropped {dropped} points with degenerate normal estimates");
        out = out.select(&keep);
    }
    Ok(out)
}

/// Draws the scenes of one step and generates their view pairs.
pub fn sample_batch(scenes: &[PointCloud], batch: usize, augment: &AugmentParams, rng: &mut Rng) -> Result<Vec<ViewPair>> {
    let ids: Vec<usize> = if batch <= scenes.len() {
        rng.sample_indices(scenes.len(), batch)
    } else {
        (0..batch).map(|_| rng.below(scenes.len())).collect()
    };
    let mut rngs: Vec<Rng> = ids.iter().map(|_| rng.split()).collect();
    ids.par_iter()
        .zip(rngs.par_iter_mut())
        .map(|(&id, r)| {
            let mut last = None;
            for _ in 0..VIEW_RETRIES {
                match viewgen::generate_pair(&scenes[id], augment, id, r) {
                    Ok(p) => return Ok(p),
                    Err(MscError::EmptyView) => last = Some(MscError::EmptyView),
                    Err(e) => return Err(e),
                }
            }
            Err(last.unwrap_or(MscError::EmptyView))
        })
        .collect()
}

pub struct Trainer {
    pub cfg: PretrainConfig,
    pub seed: u64,
    pub step: u64,
    pub model: Model,
    pub opt: OptState,
}

impl Trainer {
    pub fn new(cfg: PretrainConfig, seed: u64) -> Self {
        let mut rng = Rng::derive(seed, 0);
        let model = Model::init(cfg.train.hidden, cfg.train.feat_dim, &mut rng);
        let opt = OptState::new(&model, cfg.train.lr, cfg.train.momentum);
        Self { cfg, seed, step: 0, model, opt }
    }

    pub fn from_checkpoint(cfg: PretrainConfig, ck: Checkpoint) -> Result<Self> {
        let e = &ck.model.encoder;
        if e.hidden_dim() != cfg.train.hidden || e.output_dim() != cfg.train.feat_dim {
            return Err(MscError::invalid(format!(
                "checkpoint dims {}x{} differ from config {}x{}",
                e.hidden_dim(),
                e.output_dim(),
                cfg.train.hidden,
                cfg.train.feat_dim
            )));
        }
        let mut opt = ck.opt;
        opt.lr = cfg.train.lr;
        opt.momentum = cfg.train.momentum;
        Ok(Self {
            cfg,
            seed: ck.seed,
            step: ck.step,
            model: ck.model,
            opt,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            seed: self.seed,
            step: self.step,
            model: self.model.clone(),
            opt: self.opt.clone(),
        }
    }

    pub fn step(&mut self, scenes: &[PointCloud]) -> Result<Metrics> {
        if scenes.is_empty() {
            return Err(MscError::invalid("empty dataset"));
        }
        let step = self.step + 1;
        let mut rng = Rng::derive(self.seed, step);
        let batch = sample_batch(scenes, self.cfg.batch, &self.cfg.augment, &mut rng)?;
        let m = train_step(&batch, &mut self.model, &mut self.opt, &self.cfg.train, step, &mut rng)?;
        self.step = step;
        Ok(m)
    }

    /// Runs until `cfg.steps` steps are complete, calling `on_step` after each.
    pub fn run(&mut self, scenes: &[PointCloud], mut on_step: impl FnMut(&Metrics) -> Result<()>) -> Result<Vec<Metrics>> {
        let mut out = Vec::new();
        while self.step < self.cfg.steps {
            let m = self.step(scenes)?;
            on_step(&m)?;
            out.push(m);
        }
        Ok(out)
    }
}

/// Writes metrics as CSV with header.
pub fn write_metrics_csv(path: &Path, metrics: &[Metrics], append: bool) -> Result<()> {
    let mut text = String::new();
    if !append {
        text.push_str(Metrics::CSV_HEADER);
        text.push('\n');
    }
    for m in metrics {
        text.push_str(&m.csv_row());
        text.push('\n');
    }
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(append)
        .write(true)
        .truncate(!append)
        .open(path)
        .map_err(|e| MscError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| MscError::io(path, e))
}

/// Trailing moving average of `values` with window `w`, one output per input.
pub fn moving_average(values: &[f64], w: usize) -> Vec<f64> {
    let w = w.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for i in 0..values.len() {
        acc += values[i];
        if i >= w {
            acc -= values[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}
