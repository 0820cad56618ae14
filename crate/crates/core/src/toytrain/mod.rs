// SPDX-License-Identifier: Apache-2.0

//! Desk-scale trainer: a small hand-differentiated encoder, linear
//! reconstruction heads, and SGD with momentum over the full masked
//! contrastive objective.

pub mod checkpoint;
pub mod encoder;
pub mod pretrain;

use rayon::prelude::*;

use crate::correspond;
use crate::error::{MscError, Result};
use crate::geom::Vec3;
use crate::linalg::{self, Mat};
use crate::maskgen::{self, CrossMaskPair};
use crate::objective::{self, LinearHead, ObjectiveConfig, ReconHeads, ViewTargets};
use crate::rng::Rng;
use crate::viewgen::{self, ViewPair};

pub use encoder::{encoder_backward, encoder_forward, EncoderCache, EncoderInput, EncoderParams, INPUT_CHANNELS};

/// Encoder plus reconstruction heads: everything the optimizer updates.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: EncoderParams,
    pub heads: ReconHeads,
}

impl Model {
    pub fn init(hidden: usize, feat_dim: usize, rng: &mut Rng) -> Self {
        let encoder = EncoderParams::init(INPUT_CHANNELS, hidden, feat_dim, rng);
        let heads = ReconHeads::init(feat_dim, rng);
        Self { encoder, heads }
    }

    pub fn zeros_like(other: &Model) -> Self {
        let e = &other.encoder;
        Self {
            encoder: EncoderParams::zeros(e.input_dim(), e.hidden_dim(), e.output_dim()),
            heads: ReconHeads::zeros(e.output_dim()),
        }
    }

    pub fn blocks(&self) -> Vec<(&'static str, &[f64])> {
        let mut out: Vec<(&'static str, &[f64])> = self.encoder.blocks().into_iter().collect();
        out.push(("color_w", self.heads.color.weight.as_slice()));
        out.push(("color_b", &self.heads.color.bias));
        out.push(("normal_w", self.heads.normal.weight.as_slice()));
        out.push(("normal_b", &self.heads.normal.bias));
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut out: Vec<(&'static str, &mut [f64])> = self.encoder.blocks_mut().into_iter().collect();
        out.push(("color_w", self.heads.color.weight.as_mut_slice()));
        out.push(("color_b", &mut self.heads.color.bias));
        out.push(("normal_w", self.heads.normal.weight.as_mut_slice()));
        out.push(("normal_b", &mut self.heads.normal.bias));
        out
    }

    pub fn add_scaled(&mut self, other: &Model, s: f64) {
        for ((_, a), (_, b)) in self.blocks_mut().into_iter().zip(other.blocks()) {
            linalg::axpy(s, b, a);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|(_, b)| b.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub hidden: usize,
    pub feat_dim: usize,
    /// Aggregation radius of the encoder, meters.
    pub radius: f64,
    pub mask_grid: f64,
    pub mask_rate: f64,
    pub match_epsilon: f64,
    pub n_max: usize,
    pub objective: ObjectiveConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            momentum: 0.9,
            hidden: 64,
            feat_dim: 32,
            radius: 0.25,
            mask_grid: 0.15,
            mask_rate: 0.3,
            match_epsilon: 0.02,
            n_max: 4096,
            objective: ObjectiveConfig::default(),
        }
    }
}

/// SGD with heavy-ball momentum: `v ← μv + g`, `θ ← θ − lr·v`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub velocity: Model,
    pub lr: f64,
    pub momentum: f64,
}

impl OptState {
    pub fn new(model: &Model, lr: f64, momentum: f64) -> Self {
        Self {
            velocity: Model::zeros_like(model),
            lr,
            momentum,
        }
    }

    pub fn apply(&mut self, model: &mut Model, grad: &Model) {
        for ((_, v), (_, g)) in self.velocity.blocks_mut().into_iter().zip(grad.blocks()) {
            for (vi, gi) in v.iter_mut().zip(g) {
                *vi = self.momentum * *vi + gi;
            }
        }
        model.add_scaled(&self.velocity, -self.lr);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub step: u64,
    pub l_nce: f64,
    pub l_color: f64,
    pub l_normal: f64,
    pub l_total: f64,
    /// Mean off-diagonal cosine of the matched similarity matrices.
    pub neg_cos: f64,
    /// Smallest per-dimension standard deviation of all encoder outputs.
    pub feat_std_min: f64,
    pub pairs: usize,
    pub skipped: bool,
}

impl Metrics {
    pub const CSV_HEADER: &'static str = "step,l_nce,l_color,l_normal,l_total,neg_cos,feat_std_min";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step, self.l_nce, self.l_color, self.l_normal, self.l_total, self.neg_cos, self.feat_std_min
        )
    }
}

/// Collapse diagnostics on matched features: mean negative-pair cosine and
/// per-dimension standard deviation over the rows of both matrices.
pub fn collapse_metrics(fq: &Mat, fk: &Mat, pairs: &[(usize, usize)]) -> Result<(f64, Vec<f64>)> {
    let qi: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let kj: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let s = objective::similarity_matrix(&fq.select_rows(&qi), &fk.select_rows(&kj))?;
    let n = s.rows();
    let neg = if n > 1 {
        let total: f64 = s.as_slice().iter().sum();
        let diag: f64 = (0..n).map(|i| s.get(i, i)).sum();
        (total - diag) / (n * (n - 1)) as f64
    } else {
        0.0
    };
    Ok((neg, feature_std(&[fq, fk])))
}

/// Population standard deviation of every column over the stacked rows.
pub fn feature_std(mats: &[&Mat]) -> Vec<f64> {
    let d = mats.first().map_or(0, |m| m.cols());
    let rows: usize = mats.iter().map(|m| m.rows()).sum();
    if rows == 0 {
        return vec![0.0; d];
    }
    let mut mean = vec![0.0; d];
    for m in mats {
        for i in 0..m.rows() {
            linalg::axpy(1.0, m.row(i), &mut mean);
        }
    }
    mean.iter_mut().for_each(|v| *v /= rows as f64);
    let mut var = vec![0.0; d];
    for m in mats {
        for i in 0..m.rows() {
            for (k, &v) in m.row(i).iter().enumerate() {
                var[k] += (v - mean[k]) * (v - mean[k]);
            }
        }
    }
    var.iter().map(|v| (v / rows as f64).sqrt()).collect()
}

/// RGB plus height above the lowest point of the same scene.
pub fn input_features(colors: &[Vec3], positions: &[Vec3], scene_ids: &[usize]) -> Mat {
    let mut floor: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
    for (p, &s) in positions.iter().zip(scene_ids) {
        let e = floor.entry(s).or_insert(f64::INFINITY);
        *e = e.min(p[2]);
    }
    let mut out = Mat::zeros(colors.len(), INPUT_CHANNELS);
    for i in 0..colors.len() {
        let row = out.row_mut(i);
        row[..3].copy_from_slice(&colors[i]);
        row[3] = positions[i][2] - floor[&scene_ids[i]];
    }
    out
}

struct Unit {
    features: Mat,
    positions: Vec<Vec3>,
    scene_ids: Vec<usize>,
    mask: Vec<bool>,
}

/// One optimization step over a batch of view pairs: mix queries, draw cross
/// masks, encode, split, match unmasked points, evaluate the combined loss,
/// backpropagate, and update. A batch with no positive pair anywhere is
/// evaluated but not applied.
pub fn train_step(batch: &[ViewPair], model: &mut Model, opt: &mut OptState, cfg: &TrainConfig, step: u64, rng: &mut Rng) -> Result<Metrics> {
    let b = batch.len();
    if b == 0 {
        return Err(MscError::invalid("empty batch"));
    }
    let mixed = viewgen::mix_queries(batch, rng);

    let masks: Vec<CrossMaskPair> = batch
        .iter()
        .map(|p| {
            let part = maskgen::partition_patches(&p.query, &p.key, cfg.mask_grid)?;
            maskgen::sample_cross_masks(&part, cfg.mask_rate, rng)
        })
        .collect::<Result<_>>()?;

    let mut units: Vec<Unit> = Vec::with_capacity(mixed.queries.len() + b);
    for mq in &mixed.queries {
        let mut mask = Vec::with_capacity(mq.cloud.len());
        for m in &mq.members {
            mask.extend_from_slice(&masks[m.scene].query_mask);
        }
        units.push(Unit {
            features: input_features(&mq.cloud.colors, &mq.cloud.positions, &mq.scene_ids),
            positions: mq.cloud.positions.clone(),
            scene_ids: mq.scene_ids.clone(),
            mask,
        });
    }
    for (s, key) in mixed.keys.iter().enumerate() {
        let ids = vec![s; key.len()];
        units.push(Unit {
            features: input_features(&key.cloud.colors, &key.cloud.positions, &ids),
            positions: key.cloud.positions.clone(),
            scene_ids: ids,
            mask: masks[s].key_mask.clone(),
        });
    }

    let forward: Vec<(Mat, EncoderCache)> = units
        .par_iter()
        .map(|u| {
            encoder_forward(
                EncoderInput {
                    features: &u.features,
                    positions: &u.positions,
                    scene_ids: &u.scene_ids,
                    mask: &u.mask,
                },
                &model.encoder,
                cfg.radius,
            )
        })
        .collect::<Result<_>>()?;

    // Detach mixed queries back into per-scene feature blocks.
    let nq = mixed.queries.len();
    let mut query_feats: Vec<Option<Mat>> = vec![None; b];
    for (mq, (f, _)) in mixed.queries.iter().zip(&forward[..nq]) {
        for m in &mq.members {
            query_feats[m.scene] = Some(f.slice_rows(m.rows.clone()));
        }
    }
    let query_feats: Vec<Mat> = query_feats.into_iter().map(|f| f.expect("member")).collect();

    let mut scene_rngs: Vec<Rng> = (0..b).map(|_| rng.split()).collect();
    let scenes: Vec<objective::SceneObjective> = (0..b)
        .into_par_iter()
        .zip(scene_rngs.par_iter_mut())
        .map(|(s, srng)| {
            let pair = &batch[s];
            let mq = &masks[s];
            let corr = correspond::match_unmasked(
                &pair.query,
                &pair.key,
                &mq.query_mask,
                &mq.key_mask,
                cfg.match_epsilon,
                cfg.n_max,
                srng,
            )?;
            let key_feats = &forward[nq + s].0;
            objective::scene_objective(
                ViewTargets {
                    features: &query_feats[s],
                    colors: &pair.query.cloud.colors,
                    normals: pair.query.original_normals.as_deref(),
                    normal_valid: None,
                    mask: &mq.query_mask,
                },
                ViewTargets {
                    features: key_feats,
                    colors: &pair.key.cloud.colors,
                    normals: pair.key.original_normals.as_deref(),
                    normal_valid: None,
                    mask: &mq.key_mask,
                },
                &corr.pairs,
                &model.heads,
                &cfg.objective,
            )
        })
        .collect::<Result<_>>()?;

    let inv_b = 1.0 / b as f64;
    let mean = |f: &dyn Fn(&objective::SceneObjective) -> f64| scenes.iter().map(f).sum::<f64>() * inv_b;
    let total_pairs: usize = scenes.iter().map(|s| s.pairs).sum();
    let negs: Vec<f64> = scenes.iter().filter_map(|s| s.mean_negative_cosine).collect();
    let all_feats: Vec<&Mat> = forward.iter().map(|(f, _)| f).collect();
    let feat_std_min = feature_std(&all_feats).into_iter().fold(f64::INFINITY, f64::min);
    let metrics = Metrics {
        step,
        l_nce: mean(&|s| s.breakdown.l_nce),
        l_color: mean(&|s| s.breakdown.l_color),
        l_normal: mean(&|s| s.breakdown.l_normal),
        l_total: mean(&|s| s.breakdown.l_total),
        neg_cos: if negs.is_empty() { f64::NAN } else { negs.iter().sum::<f64>() / negs.len() as f64 },
        feat_std_min,
        pairs: total_pairs,
        skipped: total_pairs == 0,
    };
    if !metrics.l_total.is_finite() {
        return Err(MscError::Numerical(format!("non-finite loss at step {step}")));
    }
    if metrics.skipped {
        log::warn!("step {step}: no positive pairs in batch, update skipped");
        return Ok(metrics);
    }

    // dL/dF per unit, in unit order, scaled by the batch mean.
    let mut grad_units: Vec<Mat> = Vec::with_capacity(units.len());
    for mq in &mixed.queries {
        let mut g = Mat::zeros(mq.cloud.len(), model.encoder.output_dim());
        for m in &mq.members {
            for (r, row) in m.rows.clone().enumerate() {
                linalg::axpy(inv_b, scenes[m.scene].grad_query.row(r), g.row_mut(row));
            }
        }
        grad_units.push(g);
    }
    for s in &scenes {
        let mut g = s.grad_key.clone();
        g.scale(inv_b);
        grad_units.push(g);
    }
    let enc_grads: Vec<EncoderParams> = forward
        .par_iter()
        .zip(grad_units.par_iter())
        .map(|((_, cache), g)| encoder_backward(cache, &model.encoder, g))
        .collect();

    let mut grad = Model::zeros_like(model);
    for eg in &enc_grads {
        for ((_, dst), (_, src)) in grad.encoder.blocks_mut().into_iter().zip(eg.blocks()) {
            linalg::axpy(1.0, src, dst);
        }
    }
    for s in &scenes {
        add_head(&mut grad.heads.color, &s.grad_heads.color, inv_b);
        add_head(&mut grad.heads.normal, &s.grad_heads.normal, inv_b);
    }
    opt.apply(model, &grad);
    if !model.is_finite() {
        return Err(MscError::Numerical(format!("non-finite parameters after step {step}")));
    }
    Ok(metrics)
}

fn add_head(dst: &mut LinearHead, src: &LinearHead, s: f64) {
    linalg::axpy(s, src.weight.as_slice(), dst.weight.as_mut_slice());
    linalg::axpy(s, &src.bias, &mut dst.bias);
}
