// SPDX-License-Identifier: Apache-2.0

//! Central finite-difference check of every analytic gradient in the stack.
//!
//! Loss-level blocks check InfoNCE against its similarity matrix, the
//! contrastive loss against raw features, and the color and normal losses
//! against head predictions. Model-level blocks check every encoder and head
//! parameter through the full per-scene objective on a small mixed scene.
//!
//! An element whose ±h probe flips a ReLU is re-probed at h/10; if the
//! activation pattern still changes the element is skipped and counted.

use std::fmt::Write as _;

use crate::error::Result;
use crate::geom::{self, Vec3};
use crate::linalg::Mat;
use crate::objective::{self, ObjectiveConfig, ReconInput, Reduction, ViewTargets};
use crate::rng::Rng;
use crate::toytrain::{encoder_backward, encoder_forward, EncoderInput, Model, INPUT_CHANNELS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    /// Finite-difference step.
    pub h: f64,
    /// Pass threshold on the maximum relative error.
    pub tol: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    pub points: usize,
    pub hidden: usize,
    pub feat_dim: usize,
    pub radius: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            h: 1e-5,
            tol: 1e-4,
            floor: 1e-4,
            points: 30,
            hidden: 8,
            feat_dim: 4,
            radius: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub tol: f64,
    pub blocks: Vec<BlockReport>,
}

impl GradcheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.max_rel_err < self.tol)
    }

    /// Folds another report in, keeping the worst error per block name.
    pub fn merge(&mut self, other: &GradcheckReport) {
        for b in &other.blocks {
            match self.blocks.iter_mut().find(|x| x.name == b.name) {
                Some(x) => {
                    x.max_rel_err = x.max_rel_err.max(b.max_rel_err);
                    x.checked += b.checked;
                    x.skipped += b.skipped;
                }
                None => self.blocks.push(b.clone()),
            }
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::from("block,max_rel_err,checked,skipped,status\n");
        for b in &self.blocks {
            let status = if b.max_rel_err < self.tol { "pass" } else { "FAIL" };
            writeln!(out, "{},{:.3e},{},{},{}", b.name, b.max_rel_err, b.checked, b.skipped, status).unwrap();
        }
        out
    }
}

/// Hook applied to each analytic gradient block before comparison.
pub type Perturb<'a> = &'a dyn Fn(&str, &mut [f64]);

fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

fn compare(name: &str, analytic: &mut [f64], numeric: &[Option<f64>], cfg: &GradcheckConfig, perturb: Option<Perturb<'_>>) -> BlockReport {
    if let Some(p) = perturb {
        p(name, analytic);
    }
    let mut rep = BlockReport {
        name: name.to_string(),
        max_rel_err: 0.0,
        checked: 0,
        skipped: 0,
    };
    for (a, n) in analytic.iter().zip(numeric) {
        match n {
            Some(n) => {
                rep.checked += 1;
                rep.max_rel_err = rep.max_rel_err.max(rel_err(*a, *n, cfg.floor));
            }
            None => rep.skipped += 1,
        }
    }
    rep
}

/// Central differences of a smooth scalar function of `x`.
fn fd_smooth(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<Option<f64>> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + h;
            let plus = f(&probe);
            probe[k] = x[k] - h;
            let minus = f(&probe);
            probe[k] = x[k];
            Some((plus - minus) / (2.0 * h))
        })
        .collect()
}

fn random_vec(n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| rng.normal()).collect()
}

fn random_mat(rows: usize, cols: usize, rng: &mut Rng) -> Mat {
    Mat::from_vec(rows, cols, random_vec(rows * cols, rng)).expect("shape")
}

fn unit_vec3(rng: &mut Rng) -> Vec3 {
    geom::normalize([rng.normal(), rng.normal(), rng.normal()])
}

fn to_vec3s(flat: &[f64]) -> Vec<Vec3> {
    flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

fn flatten(v: &[Vec3]) -> Vec<f64> {
    v.iter().flatten().copied().collect()
}

fn loss_blocks(rng: &mut Rng, cfg: &GradcheckConfig, perturb: Option<Perturb<'_>>) -> Result<Vec<BlockReport>> {
    let mut out = Vec::new();
    let tau = objective::DEFAULT_TAU;

    let n = 6;
    let s = Mat::from_vec(n, n, (0..n * n).map(|_| rng.uniform(-1.0, 1.0)).collect())?;
    let (_, mut ds) = objective::info_nce(&s, tau, Reduction::Mean)?;
    let num = fd_smooth(s.as_slice(), cfg.h, |x| {
        objective::info_nce(&Mat::from_vec(n, n, x.to_vec()).unwrap(), tau, Reduction::Mean)
            .unwrap()
            .0
    });
    out.push(compare("info_nce", ds.as_mut_slice(), &num, cfg, perturb));

    let d = cfg.feat_dim;
    let q = random_mat(n, d, rng);
    let k = random_mat(n, d, rng);
    let c = objective::contrastive_loss(&q, &k, tau, Reduction::Mean)?;
    let mut gq = c.grad_query.into_vec();
    let num = fd_smooth(q.as_slice(), cfg.h, |x| {
        objective::contrastive_loss(&Mat::from_vec(n, d, x.to_vec()).unwrap(), &k, tau, Reduction::Mean)
            .unwrap()
            .loss
    });
    out.push(compare("contrastive_query", &mut gq, &num, cfg, perturb));
    let mut gk = c.grad_key.into_vec();
    let num = fd_smooth(k.as_slice(), cfg.h, |x| {
        objective::contrastive_loss(&q, &Mat::from_vec(n, d, x.to_vec()).unwrap(), tau, Reduction::Mean)
            .unwrap()
            .loss
    });
    out.push(compare("contrastive_key", &mut gk, &num, cfg, perturb));

    let m = 8;
    let pred: Vec<f64> = random_vec(3 * m, rng);
    let target: Vec<Vec3> = (0..m).map(|_| [rng.unit(), rng.unit(), rng.unit()]).collect();
    let mask: Vec<bool> = (0..m).map(|i| i % 3 != 0).collect();
    let recon = |p: &[f64], t: &[Vec3], normal: bool| -> objective::ReconOutput {
        let p = to_vec3s(p);
        let input = [ReconInput {
            pred: &p,
            target: t,
            mask: &mask,
            valid: None,
        }];
        if normal {
            objective::normal_loss(&input, objective::NormalSign::Aligned).unwrap()
        } else {
            objective::color_loss(&input).unwrap()
        }
    };
    let mut g = flatten(&recon(&pred, &target, false).grads[0]);
    let num = fd_smooth(&pred, cfg.h, |x| recon(x, &target, false).loss);
    out.push(compare("color_loss", &mut g, &num, cfg, perturb));

    let normals: Vec<Vec3> = (0..m).map(|_| unit_vec3(rng)).collect();
    let mut g = flatten(&recon(&pred, &normals, true).grads[0]);
    let num = fd_smooth(&pred, cfg.h, |x| recon(x, &normals, true).loss);
    out.push(compare("normal_loss", &mut g, &num, cfg, perturb));
    Ok(out)
}

struct Scene {
    features: [Mat; 2],
    positions: [Vec<Vec3>; 2],
    scene_ids: [Vec<usize>; 2],
    colors: [Vec<Vec3>; 2],
    normals: [Vec<Vec3>; 2],
    masks: [Vec<bool>; 2],
    pairs: Vec<(usize, usize)>,
}

fn random_scene(rng: &mut Rng, n: usize) -> Scene {
    let mut side = || {
        let positions: Vec<Vec3> = (0..n).map(|_| [rng.unit(), rng.unit(), 0.5 * rng.unit()]).collect();
        let colors: Vec<Vec3> = (0..n).map(|_| [rng.unit(), rng.unit(), rng.unit()]).collect();
        let normals: Vec<Vec3> = (0..n).map(|_| unit_vec3(rng)).collect();
        let mut masks: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.3)).collect();
        masks[0] = true;
        masks[1] = false;
        let mut features = Mat::zeros(n, INPUT_CHANNELS);
        for i in 0..n {
            let row = features.row_mut(i);
            row[..3].copy_from_slice(&colors[i]);
            row[3] = positions[i][2];
        }
        (features, positions, colors, normals, masks)
    };
    let (fq, pq, cq, nq, mq) = side();
    let (fk, pk, ck, nk, mk) = side();
    let mut pairs: Vec<(usize, usize)> = (0..n).map(|i| (i, n - 1 - i)).filter(|&(i, j)| !mq[i] && !mk[j]).collect();
    if pairs.len() < 2 {
        pairs = vec![(1, 1), (1, 1)];
    }
    // Query rows alternate between two scenes, as in a mixed query.
    let qid = (0..n).map(|i| i % 2).collect();
    Scene {
        features: [fq, fk],
        positions: [pq, pk],
        scene_ids: [qid, vec![0; n]],
        colors: [cq, ck],
        normals: [nq, nk],
        masks: [mq, mk],
        pairs,
    }
}

fn random_model(rng: &mut Rng, cfg: &GradcheckConfig) -> Model {
    let mut model = Model::init(cfg.hidden, cfg.feat_dim, rng);
    for (_, b) in model.blocks_mut() {
        b.iter_mut().for_each(|v| *v += 0.2 * rng.normal());
    }
    model
}

/// Total loss, parameter gradient and ReLU pattern of the composite objective.
fn composite(sc: &Scene, model: &Model, radius: f64, obj: &ObjectiveConfig, want_grad: bool) -> Result<(f64, Option<Model>, Vec<bool>)> {
    let mut feats = Vec::with_capacity(2);
    let mut caches = Vec::with_capacity(2);
    let mut pattern = Vec::new();
    for v in 0..2 {
        let (f, cache) = encoder_forward(
            EncoderInput {
                features: &sc.features[v],
                positions: &sc.positions[v],
                scene_ids: &sc.scene_ids[v],
                mask: &sc.masks[v],
            },
            &model.encoder,
            radius,
        )?;
        pattern.extend(cache.activation_pattern());
        feats.push(f);
        caches.push(cache);
    }
    let targets = |v: usize| ViewTargets {
        features: &feats[v],
        colors: &sc.colors[v],
        normals: Some(&sc.normals[v]),
        normal_valid: None,
        mask: &sc.masks[v],
    };
    let res = objective::scene_objective(targets(0), targets(1), &sc.pairs, &model.heads, obj)?;
    if !want_grad {
        return Ok((res.breakdown.l_total, None, pattern));
    }
    let mut grad = Model::zeros_like(model);
    grad.heads = res.grad_heads.clone();
    for (v, g) in [&res.grad_query, &res.grad_key].into_iter().enumerate() {
        let eg = encoder_backward(&caches[v], &model.encoder, g);
        for ((_, dst), (_, src)) in grad.encoder.blocks_mut().into_iter().zip(eg.blocks()) {
            crate::linalg::axpy(1.0, src, dst);
        }
    }
    Ok((res.breakdown.l_total, Some(grad), pattern))
}

fn model_blocks(rng: &mut Rng, cfg: &GradcheckConfig, perturb: Option<Perturb<'_>>) -> Result<Vec<BlockReport>> {
    let sc = random_scene(rng, cfg.points);
    let model = random_model(rng, cfg);
    let obj = ObjectiveConfig::default();
    let (_, grad, base_pattern) = composite(&sc, &model, cfg.radius, &obj, true)?;
    let mut grad = grad.expect("requested");

    let probe = |b: usize, k: usize, h: f64| -> Result<Option<f64>> {
        let mut side = [0.0; 2];
        for (s, sign) in [1.0, -1.0].into_iter().enumerate() {
            let mut m = model.clone();
            m.blocks_mut()[b].1[k] += sign * h;
            let (l, _, pattern) = composite(&sc, &m, cfg.radius, &obj, false)?;
            if pattern != base_pattern {
                return Ok(None);
            }
            side[s] = l;
        }
        Ok(Some((side[0] - side[1]) / (2.0 * h)))
    };

    let mut out = Vec::new();
    let names: Vec<&'static str> = model.blocks().iter().map(|(n, _)| *n).collect();
    for (b, name) in names.iter().enumerate() {
        let len = model.blocks()[b].1.len();
        let mut numeric = Vec::with_capacity(len);
        for k in 0..len {
            let n = match probe(b, k, cfg.h)? {
                Some(v) => Some(v),
                None => probe(b, k, cfg.h / 10.0)?,
            };
            numeric.push(n);
        }
        let mut blocks = grad.blocks_mut();
        out.push(compare(name, blocks[b].1, &numeric, cfg, perturb));
    }
    Ok(out)
}

/// Runs every block for one seed.
pub fn gradcheck(seed: u64, cfg: &GradcheckConfig, perturb: Option<Perturb<'_>>) -> Result<GradcheckReport> {
    let mut rng = Rng::new(seed);
    let mut blocks = loss_blocks(&mut rng, cfg, perturb)?;
    blocks.extend(model_blocks(&mut rng, cfg, perturb)?);
    Ok(GradcheckReport { tol: cfg.tol, blocks })
}

/// Worst case over `seeds` consecutive seeds starting at `first`.
pub fn gradcheck_many(first: u64, seeds: u64, cfg: &GradcheckConfig, perturb: Option<Perturb<'_>>) -> Result<GradcheckReport> {
    let mut total = GradcheckReport {
        tol: cfg.tol,
        blocks: Vec::new(),
    };
    for s in first..first + seeds {
        total.merge(&gradcheck(s, cfg, perturb)?);
    }
    Ok(total)
}
