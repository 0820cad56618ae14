// SPDX-License-Identifier: Apache-2.0

//! Flat-array entry points for foreign callers.
//!
//! Everything here is a thin repacking of the native pipeline: inputs are
//! row-major `f64` buffers, outputs are owned buffers with explicit shapes.
//! [`sample_pair`] is the same routine the `viewgen` command uses, so a
//! caller passing the same cloud, configuration text and seed receives the
//! same bytes.

use crate::cloud::PointCloud;
use crate::config::Config;
use crate::correspond::{self, CorrespondenceMap};
use crate::error::{MscError, Result};
use crate::geom::Vec3;
use crate::linalg::Mat;
use crate::maskgen::{self, CrossMaskPair};
use crate::objective::{self, NormalSign, ReconInput};
use crate::rng::Rng;
use crate::viewgen::{self, ViewPair};

/// Bumped whenever a flat signature or layout changes.
pub const ABI_VERSION: u32 = 1;

/// A view pair with its cross masks and unmasked correspondences.
#[derive(Debug, Clone)]
pub struct PairSample {
    pub pair: ViewPair,
    pub masks: CrossMaskPair,
    pub matches: CorrespondenceMap,
}

/// Generates one masked view pair from `cloud` under `seed`.
pub fn sample_pair(cloud: &PointCloud, cfg: &Config, seed: u64) -> Result<PairSample> {
    let mut rng = Rng::new(seed);
    let pair = viewgen::generate_pair(cloud, &cfg.augment, 0, &mut rng)?;
    let partition = maskgen::partition_patches(&pair.query, &pair.key, cfg.train.mask_grid)?;
    let masks = maskgen::sample_cross_masks(&partition, cfg.train.mask_rate, &mut rng)?;
    let matches = correspond::match_unmasked(
        &pair.query,
        &pair.key,
        &masks.query_mask,
        &masks.key_mask,
        cfg.train.match_epsilon,
        cfg.train.n_max,
        &mut rng,
    )?;
    Ok(PairSample { pair, masks, matches })
}

/// Flat view-pair buffers. `*_pos`, `*_col`, `*_orig` are `n × 3`;
/// `pairs` is `m × 2` (query row, key row).
#[derive(Debug, Clone, PartialEq)]
pub struct FlatPair {
    pub q_pos: Vec<f64>,
    pub q_col: Vec<f64>,
    pub q_orig: Vec<f64>,
    pub k_pos: Vec<f64>,
    pub k_col: Vec<f64>,
    pub k_orig: Vec<f64>,
    pub pairs: Vec<i64>,
    pub mask_q: Vec<bool>,
    pub mask_k: Vec<bool>,
}

impl FlatPair {
    pub fn query_len(&self) -> usize {
        self.mask_q.len()
    }

    pub fn key_len(&self) -> usize {
        self.mask_k.len()
    }

    pub fn pair_count(&self) -> usize {
        self.pairs.len() / 2
    }
}

fn flatten(v: &[Vec3]) -> Vec<f64> {
    v.iter().flatten().copied().collect()
}

fn rows3(buf: &[f64], what: &str) -> Result<Vec<Vec3>> {
    if !buf.len().is_multiple_of(3) {
        return Err(MscError::DimMismatch(format!("{what}: length {} is not a multiple of 3", buf.len())));
    }
    Ok(buf.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
}

impl From<&PairSample> for FlatPair {
    fn from(s: &PairSample) -> Self {
        let (q, k) = (&s.pair.query, &s.pair.key);
        FlatPair {
            q_pos: flatten(&q.cloud.positions),
            q_col: flatten(&q.cloud.colors),
            q_orig: flatten(&q.original_positions),
            k_pos: flatten(&k.cloud.positions),
            k_col: flatten(&k.cloud.colors),
            k_orig: flatten(&k.original_positions),
            pairs: s.matches.pairs.iter().flat_map(|&(i, j)| [i as i64, j as i64]).collect(),
            mask_q: s.masks.query_mask.clone(),
            mask_k: s.masks.key_mask.clone(),
        }
    }
}

/// `positions` and `colors` are `n × 3` row-major; `config` is a
/// configuration document. Nothing is returned on error.
pub fn generate_pair_flat(positions: &[f64], colors: &[f64], config: &str, seed: u64) -> Result<FlatPair> {
    let cfg = Config::parse(config)?;
    let p = rows3(positions, "positions")?;
    let c = rows3(colors, "colors")?;
    if p.len() != c.len() {
        return Err(MscError::DimMismatch("positions and colors differ in rows".into()));
    }
    let cloud = PointCloud::new(p, c, None)?;
    Ok(FlatPair::from(&sample_pair(&cloud, &cfg, seed)?))
}

/// Inputs to [`losses_flat`]. Features are `n × dim`, every `*_color` and
/// `*_normal` buffer is `n × 3` for its view, `pairs` is `m × 2`.
#[derive(Debug, Clone, Copy)]
pub struct FlatLossInput<'a> {
    pub dim: usize,
    pub fq: &'a [f64],
    pub fk: &'a [f64],
    pub pairs: &'a [i64],
    pub mask_q: &'a [bool],
    pub mask_k: &'a [bool],
    pub pred_color_q: &'a [f64],
    pub pred_color_k: &'a [f64],
    pub color_q: &'a [f64],
    pub color_k: &'a [f64],
    pub pred_normal_q: &'a [f64],
    pub pred_normal_k: &'a [f64],
    pub normal_q: &'a [f64],
    pub normal_k: &'a [f64],
    pub tau: f64,
    pub lambda_c: f64,
    pub lambda_n: f64,
}

/// Loss values and gradients of `l_total` with respect to every input
/// buffer that carries one, in the input's shape.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatLosses {
    pub l_nce: f64,
    pub l_color: f64,
    pub l_normal: f64,
    pub l_total: f64,
    pub grad_fq: Vec<f64>,
    pub grad_fk: Vec<f64>,
    pub grad_pred_color_q: Vec<f64>,
    pub grad_pred_color_k: Vec<f64>,
    pub grad_pred_normal_q: Vec<f64>,
    pub grad_pred_normal_k: Vec<f64>,
}

fn feature_mat(buf: &[f64], dim: usize, what: &str) -> Result<Mat> {
    if dim == 0 || !buf.len().is_multiple_of(dim) {
        return Err(MscError::DimMismatch(format!("{what}: length {} vs width {dim}", buf.len())));
    }
    Mat::from_vec(buf.len() / dim, dim, buf.to_vec())
}

fn recon_pair<'a>(pq: &'a [Vec3], pk: &'a [Vec3], tq: &'a [Vec3], tk: &'a [Vec3], mq: &'a [bool], mk: &'a [bool]) -> [ReconInput<'a>; 2] {
    [
        ReconInput {
            pred: pq,
            target: tq,
            mask: mq,
            valid: None,
        },
        ReconInput {
            pred: pk,
            target: tk,
            mask: mk,
            valid: None,
        },
    ]
}

/// Evaluates the combined objective on caller-provided features and head
/// predictions: InfoNCE over `pairs` (mean reduction) plus masked color MSE
/// and masked normal cosine loss.
pub fn losses_flat(inp: &FlatLossInput<'_>) -> Result<FlatLosses> {
    let fq = feature_mat(inp.fq, inp.dim, "fq")?;
    let fk = feature_mat(inp.fk, inp.dim, "fk")?;
    if !inp.pairs.len().is_multiple_of(2) {
        return Err(MscError::DimMismatch("pairs must be m × 2".into()));
    }
    let mut pairs = Vec::with_capacity(inp.pairs.len() / 2);
    for c in inp.pairs.chunks_exact(2) {
        let (i, j) = (c[0], c[1]);
        if i < 0 || j < 0 || i as usize >= fq.rows() || j as usize >= fk.rows() {
            return Err(MscError::invalid(format!("pair ({i}, {j}) out of range")));
        }
        pairs.push((i as usize, j as usize));
    }

    let mut grad_fq = Mat::zeros(fq.rows(), inp.dim);
    let mut grad_fk = Mat::zeros(fk.rows(), inp.dim);
    let l_nce = if pairs.is_empty() {
        0.0
    } else {
        let qi: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let kj: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let out = objective::contrastive_loss(
            &fq.select_rows(&qi),
            &fk.select_rows(&kj),
            inp.tau,
            objective::Reduction::Mean,
        )?;
        for (r, &i) in qi.iter().enumerate() {
            crate::linalg::axpy(1.0, out.grad_query.row(r), grad_fq.row_mut(i));
        }
        for (r, &j) in kj.iter().enumerate() {
            crate::linalg::axpy(1.0, out.grad_key.row(r), grad_fk.row_mut(j));
        }
        out.loss
    };

    let pcq = rows3(inp.pred_color_q, "pred_color_q")?;
    let pck = rows3(inp.pred_color_k, "pred_color_k")?;
    let cq = rows3(inp.color_q, "color_q")?;
    let ck = rows3(inp.color_k, "color_k")?;
    let pnq = rows3(inp.pred_normal_q, "pred_normal_q")?;
    let pnk = rows3(inp.pred_normal_k, "pred_normal_k")?;
    let nq = rows3(inp.normal_q, "normal_q")?;
    let nk = rows3(inp.normal_k, "normal_k")?;
    let (mq, mk) = (inp.mask_q.len(), inp.mask_k.len());
    let shapes = [(pcq.len(), cq.len(), mq), (pck.len(), ck.len(), mk), (pnq.len(), nq.len(), mq), (pnk.len(), nk.len(), mk)];
    if shapes.iter().any(|&(a, b, m)| a != b || a != m) {
        return Err(MscError::DimMismatch("prediction, target and mask rows differ".into()));
    }
    let color = objective::color_loss(&recon_pair(&pcq, &pck, &cq, &ck, inp.mask_q, inp.mask_k))?;
    let normal = objective::normal_loss(&recon_pair(&pnq, &pnk, &nq, &nk, inp.mask_q, inp.mask_k), NormalSign::Aligned)?;
    let total = objective::combined_loss(l_nce, color.loss, normal.loss, inp.lambda_c, inp.lambda_n);
    let scaled = |g: &[Vec3], s: f64| -> Vec<f64> { g.iter().flatten().map(|v| v * s).collect() };
    Ok(FlatLosses {
        l_nce: total.l_nce,
        l_color: total.l_color,
        l_normal: total.l_normal,
        l_total: total.l_total,
        grad_fq: grad_fq.into_vec(),
        grad_fk: grad_fk.into_vec(),
        grad_pred_color_q: scaled(&color.grads[0], inp.lambda_c),
        grad_pred_color_k: scaled(&color.grads[1], inp.lambda_c),
        grad_pred_normal_q: scaled(&normal.grads[0], inp.lambda_n),
        grad_pred_normal_k: scaled(&normal.grads[1], inp.lambda_n),
    })
}
