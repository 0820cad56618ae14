// SPDX-License-Identifier: Apache-2.0

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use rayon::prelude::*;

use msc_core::config::Config;
use msc_core::correspond;
use msc_core::flat::{self, PairSample};
use msc_core::gradcheck::{self, GradcheckConfig};
use msc_core::io::{self, Format};
use msc_core::synth;
use msc_core::toytrain::checkpoint::Checkpoint;
use msc_core::toytrain::pretrain::{self, Trainer};
use msc_core::toytrain::Metrics;
use msc_core::viewgen::View;
use msc_core::{bench, PointCloud, Rng};

/// A check that ran to completion and failed.
#[derive(Debug)]
pub struct CheckFailed(pub String);

impl fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_text(p, text),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn load_scene(path: &Path) -> Result<PointCloud> {
    let format = Format::from_path(path).with_context(|| format!("unknown scene format: {}", path.display()))?;
    Ok(io::load_cloud(path, format)?)
}

/// Per-scene seed derived from the run seed.
fn scene_seed(seed: u64, index: usize) -> u64 {
    Rng::derive(seed, index as u64).next_u64()
}

pub fn config(cfg: &Config) -> Result<()> {
    print!("{}", cfg.render());
    Ok(())
}

pub fn synth(cfg: &Config, count: usize, out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    (0..count).into_par_iter().try_for_each(|i| -> Result<()> {
        let cloud = synth::synth_scene(&cfg.scene, &mut Rng::derive(cfg.seed, i as u64))?;
        io::save_cloud(&cloud, &out.join(format!("scene_{i:04}.mscb")), Format::Mscb)?;
        Ok(())
    })?;
    log::info!("wrote {count} scenes to {}", out.display());
    Ok(())
}

const MASKED_COLOR: [f64; 3] = [1.0, 0.0, 0.0];
const VISIBLE_COLOR: [f64; 3] = [0.5, 0.5, 0.5];

/// The view with masked points recolored red and the rest grey.
pub fn mask_preview(view: &View, mask: &[bool]) -> PointCloud {
    let mut cloud = view.cloud.clone();
    for (c, &m) in cloud.colors.iter_mut().zip(mask) {
        *c = if m { MASKED_COLOR } else { VISIBLE_COLOR };
    }
    cloud
}

pub fn viewgen(cfg: &Config, input: &Path, out: &Path, format: &str) -> Result<()> {
    let format: Format = format.parse()?;
    let ext = match format {
        Format::Mscb => "mscb",
        Format::PlyAscii | Format::PlyBinaryLe => "ply",
    };
    let cloud = load_scene(input)?;
    let sample: PairSample = flat::sample_pair(&cloud, cfg, cfg.seed)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let (q, k) = (&sample.pair.query, &sample.pair.key);
    io::save_cloud(&q.cloud, &out.join(format!("query.{ext}")), format)?;
    io::save_cloud(&k.cloud, &out.join(format!("key.{ext}")), format)?;
    io::save_cloud(&mask_preview(q, &sample.masks.query_mask), &out.join("query_mask.ply"), Format::PlyAscii)?;
    io::save_cloud(&mask_preview(k, &sample.masks.key_mask), &out.join("key_mask.ply"), Format::PlyAscii)?;
    let mut csv = String::from("query,key\n");
    for (i, j) in &sample.matches.pairs {
        csv.push_str(&format!("{i},{j}\n"));
    }
    write_text(&out.join("pairs.csv"), &csv)?;
    log::info!(
        "query {} points, key {} points, {} unmasked pairs",
        q.len(),
        k.len(),
        sample.matches.len()
    );
    Ok(())
}

pub fn match_stats(cfg: &Config, data: &Path, out: Option<&Path>) -> Result<()> {
    let files = pretrain::dataset_files(data)?;
    let rows: Vec<String> = files
        .par_iter()
        .enumerate()
        .map(|(i, path)| -> Result<String> {
            let cloud = load_scene(path)?;
            let s = flat::sample_pair(&cloud, cfg, scene_seed(cfg.seed, i))?;
            let (q, k) = (&s.pair.query, &s.pair.key);
            let all = correspond::match_positions(&q.original_positions, &k.original_positions, cfg.train.match_epsilon);
            let unmasked = all
                .pairs
                .iter()
                .filter(|&&(a, b)| !s.masks.query_mask[a] && !s.masks.key_mask[b])
                .count();
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            Ok(format!("{name},{},{},{},{unmasked},{}\n", q.len(), k.len(), all.len(), s.matches.len()))
        })
        .collect::<Result<_>>()?;
    let mut csv = String::from("scene,query_points,key_points,matches,unmasked_matches,used\n");
    rows.iter().for_each(|r| csv.push_str(r));
    emit(out, &csv)
}

pub fn pretrain(cfg: &Config, data: &Path, metrics: &Path, checkpoint: &Path, resume: Option<&Path>) -> Result<()> {
    let scenes = pretrain::load_dataset(data)?;
    log::info!("loaded {} scenes", scenes.len());
    let mut trainer = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.seed != cfg.seed {
                log::warn!("resuming with the checkpoint seed {} (requested {})", ck.seed, cfg.seed);
            }
            Trainer::from_checkpoint(cfg.pretrain(), ck)?
        }
        None => Trainer::new(cfg.pretrain(), cfg.seed),
    };
    let mut file = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(resume.is_some())
        .truncate(resume.is_none())
        .open(metrics)
        .with_context(|| format!("opening {}", metrics.display()))?;
    if resume.is_none() {
        writeln!(file, "{}", Metrics::CSV_HEADER)?;
    }
    let result = trainer.run(&scenes, |m| {
        writeln!(file, "{}", m.csv_row()).map_err(|e| msc_core::MscError::Io {
            path: metrics.to_path_buf(),
            source: e,
        })?;
        log::debug!("step {} l_total {:.4}", m.step, m.l_total);
        Ok(())
    });
    file.flush()?;
    let run = result?;
    trainer.checkpoint().save(checkpoint)?;
    if let Some(last) = run.last() {
        log::info!(
            "step {}: l_total {:.4}, neg_cos {:.3}, feat_std_min {:.3}",
            last.step,
            last.l_total,
            last.neg_cos,
            last.feat_std_min
        );
    }
    Ok(())
}

pub fn bench(cfg: &Config, sizes: &[usize], out: Option<&Path>) -> Result<()> {
    let rows = bench::run_bench(sizes, &cfg.augment, cfg.seed)?;
    log::info!("per-point cost spread {:.1}%", 100.0 * bench::scaling_spread(&rows));
    emit(out, &bench::render_csv(&rows))
}

pub fn gradcheck(cfg: &Config, seeds: u64, step: f64, perturb: Option<&str>) -> Result<()> {
    let gc = GradcheckConfig { h: step, ..GradcheckConfig::default() };
    let hook = |name: &str, g: &mut [f64]| {
        if Some(name) == perturb {
            if let Some(v) = g.first_mut() {
                *v += 1e-2;
            }
        }
    };
    let report = gradcheck::gradcheck_many(cfg.seed, seeds, &gc, perturb.map(|_| &hook as gradcheck::Perturb<'_>))?;
    print!("{}", report.render());
    if report.passed() {
        Ok(())
    } else {
        Err(CheckFailed(format!(
            "gradient check failed: max relative error {:.3e} >= {:.0e}",
            report.max_rel_err(),
            report.tol
        ))
        .into())
    }
}
