// SPDX-License-Identifier: Apache-2.0

//! Contrastive and reconstruction objectives with analytic gradients.
//!
//! Everything is f64. Gradients are returned alongside values; chaining into
//! the encoder is the caller's job.

use crate::error::{MscError, Result};
use crate::geom::{self, Vec3};
use crate::linalg::{self, Mat};
use crate::rng::Rng;

pub const DEFAULT_TAU: f64 = 0.4;

/// Guard added to prediction norms before normalizing.
pub const NORMAL_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

impl std::str::FromStr for Reduction {
    type Err = MscError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Reduction::Sum),
            "mean" => Ok(Reduction::Mean),
            _ => Err(MscError::invalid(format!("unknown reduction {s:?}"))),
        }
    }
}

/// Sign convention of the normal loss. `Aligned` is `1 - mean cos`, which is
/// minimized by aligned predictions; `Literal` is `+mean cos`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalSign {
    Aligned,
    Literal,
}

impl std::str::FromStr for NormalSign {
    type Err = MscError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aligned" => Ok(NormalSign::Aligned),
            "literal" => Ok(NormalSign::Literal),
            _ => Err(MscError::invalid(format!("unknown normal sign {s:?}"))),
        }
    }
}

// ---- contrastive -------------------------------------------------------

/// Floor on row norms before normalization; zero rows map to zero.
pub const COSINE_EPS: f64 = 1e-8;

/// Rows divided by `max(|f|, COSINE_EPS)`, plus the unclamped norms.
fn normalize_rows(f: &Mat) -> Result<(Mat, Vec<f64>)> {
    let mut out = f.clone();
    let mut norms = Vec::with_capacity(f.rows());
    for i in 0..f.rows() {
        let n = linalg::norm(f.row(i));
        if !n.is_finite() {
            return Err(MscError::Numerical(format!("non-finite feature row {i}")));
        }
        let d = n.max(COSINE_EPS);
        out.row_mut(i).iter_mut().for_each(|v| *v /= d);
        norms.push(n);
    }
    Ok((out, norms))
}

/// Pairwise cosine similarity `s_ij = <q_i, k_j> / (|q_i| |k_j|)`.
pub fn similarity_matrix(query: &Mat, key: &Mat) -> Result<Mat> {
    if query.cols() != key.cols() {
        return Err(MscError::DimMismatch(format!(
            "query features {} wide, key features {}",
            query.cols(),
            key.cols()
        )));
    }
    let (q, _) = normalize_rows(query)?;
    let (k, _) = normalize_rows(key)?;
    Ok(q.matmul_t(&k))
}

/// InfoNCE over a square similarity matrix whose diagonal holds the positives.
/// Returns the loss and `dLoss/dS`.
pub fn info_nce(s: &Mat, tau: f64, reduction: Reduction) -> Result<(f64, Mat)> {
    let n = s.rows();
    if s.cols() != n {
        return Err(MscError::DimMismatch(format!("similarity matrix {}x{}", n, s.cols())));
    }
    if n == 0 {
        return Err(MscError::NoPositivePairs);
    }
    if tau.is_nan() || tau <= 0.0 {
        return Err(MscError::invalid("temperature must be > 0"));
    }
    let weight = match reduction {
        Reduction::Sum => 1.0,
        Reduction::Mean => 1.0 / n as f64,
    };
    let mut loss = 0.0;
    let mut grad = Mat::zeros(n, n);
    for i in 0..n {
        let row = s.row(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v / tau));
        let sum: f64 = row.iter().map(|&v| (v / tau - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - row[i] / tau;
        let g = grad.row_mut(i);
        for (j, &v) in row.iter().enumerate() {
            g[j] = weight * ((v / tau - max).exp() / sum) / tau;
        }
        g[i] -= weight / tau;
    }
    Ok((weight * loss, grad))
}

#[derive(Debug, Clone)]
pub struct ContrastiveOutput {
    pub loss: f64,
    pub grad_query: Mat,
    pub grad_key: Mat,
    /// Mean off-diagonal similarity; `0` when there is a single pair.
    pub mean_negative_cosine: f64,
}

/// InfoNCE on matched feature rows (`query.row(i)` ↔ `key.row(i)`), with
/// gradients back through the cosine normalization.
pub fn contrastive_loss(query: &Mat, key: &Mat, tau: f64, reduction: Reduction) -> Result<ContrastiveOutput> {
    if query.rows() != key.rows() {
        return Err(MscError::DimMismatch(format!(
            "{} query rows vs {} key rows",
            query.rows(),
            key.rows()
        )));
    }
    if query.cols() != key.cols() {
        return Err(MscError::DimMismatch("feature widths differ".into()));
    }
    let (qn, q_norms) = normalize_rows(query)?;
    let (kn, k_norms) = normalize_rows(key)?;
    let s = qn.matmul_t(&kn);
    let (loss, gs) = info_nce(&s, tau, reduction)?;

    let n = s.rows();
    let mean_negative_cosine = if n > 1 {
        let total: f64 = s.as_slice().iter().sum();
        let diag: f64 = (0..n).map(|i| s.get(i, i)).sum();
        (total - diag) / (n * (n - 1)) as f64
    } else {
        0.0
    };

    let gq_hat = gs.matmul(&kn);
    let gk_hat = gs.t_matmul(&qn);
    Ok(ContrastiveOutput {
        loss,
        grad_query: unnormalize_grad(&gq_hat, &qn, &q_norms),
        grad_key: unnormalize_grad(&gk_hat, &kn, &k_norms),
        mean_negative_cosine,
    })
}

/// Chains `dL/d(f/|f|)` to `dL/df` row by row.
fn unnormalize_grad(g_hat: &Mat, f_hat: &Mat, norms: &[f64]) -> Mat {
    let mut out = g_hat.clone();
    for (i, &norm) in norms.iter().enumerate() {
        // Direction of a (near-)zero row is undefined; it passes no gradient.
        if norm < COSINE_EPS {
            out.row_mut(i).iter_mut().for_each(|v| *v = 0.0);
            continue;
        }
        let proj = linalg::dot(g_hat.row(i), f_hat.row(i));
        let fh = f_hat.row(i);
        for (o, &u) in out.row_mut(i).iter_mut().zip(fh) {
            *o = (*o - proj * u) / norm;
        }
    }
    out
}

// ---- reconstruction ----------------------------------------------------

/// Predictions, targets and mask of one view.
#[derive(Debug, Clone, Copy)]
pub struct ReconInput<'a> {
    pub pred: &'a [Vec3],
    pub target: &'a [Vec3],
    pub mask: &'a [bool],
    /// Rows whose target is unusable (normals only).
    pub valid: Option<&'a [bool]>,
}

impl ReconInput<'_> {
    fn check(&self) -> Result<()> {
        let n = self.pred.len();
        if self.target.len() != n || self.mask.len() != n || self.valid.is_some_and(|v| v.len() != n) {
            return Err(MscError::DimMismatch("prediction/target/mask lengths differ".into()));
        }
        Ok(())
    }

    fn used(&self, i: usize) -> bool {
        self.mask[i] && self.valid.is_none_or(|v| v[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconOutput {
    pub loss: f64,
    /// Number of rows that entered the loss.
    pub count: usize,
    /// `dLoss/dpred`, one vector per view.
    pub grads: Vec<Vec<Vec3>>,
}

fn zero_grads(views: &[ReconInput<'_>]) -> Vec<Vec<Vec3>> {
    views.iter().map(|v| vec![[0.0; 3]; v.pred.len()]).collect()
}

/// Mean over masked rows of all views of the squared L2 color error.
pub fn color_loss(views: &[ReconInput<'_>]) -> Result<ReconOutput> {
    let mut grads = zero_grads(views);
    let mut count = 0;
    for v in views {
        v.check()?;
        count += (0..v.pred.len()).filter(|&i| v.used(i)).count();
    }
    if count == 0 {
        log::warn!("color loss: no masked points, contribution is 0");
        return Ok(ReconOutput { loss: 0.0, count, grads });
    }
    let inv = 1.0 / count as f64;
    let mut loss = 0.0;
    for (v, g) in views.iter().zip(&mut grads) {
        for i in (0..v.pred.len()).filter(|&i| v.used(i)) {
            let e = geom::sub(v.pred[i], v.target[i]);
            loss += geom::dot(e, e);
            g[i] = geom::scale(e, 2.0 * inv);
        }
    }
    Ok(ReconOutput { loss: loss * inv, count, grads })
}

/// Cosine loss between normalized predictions and unit targets over masked,
/// valid rows of all views.
pub fn normal_loss(views: &[ReconInput<'_>], sign: NormalSign) -> Result<ReconOutput> {
    let mut grads = zero_grads(views);
    let mut count = 0;
    for v in views {
        v.check()?;
        count += (0..v.pred.len()).filter(|&i| v.used(i)).count();
    }
    if count == 0 {
        log::warn!("normal loss: no usable masked normals, contribution is 0");
        return Ok(ReconOutput { loss: 0.0, count, grads });
    }
    let inv = 1.0 / count as f64;
    let dir = match sign {
        NormalSign::Aligned => -inv,
        NormalSign::Literal => inv,
    };
    let mut cos_sum = 0.0;
    for (v, g) in views.iter().zip(&mut grads) {
        for i in (0..v.pred.len()).filter(|&i| v.used(i)) {
            let p = v.pred[i];
            let t = v.target[i];
            let r = geom::norm(p);
            let s = r + NORMAL_EPS;
            let pt = geom::dot(p, t);
            cos_sum += pt / s;
            // d(p·t/s)/dp = t/s − (p·t) p / (r s²)
            let mut dcos = geom::scale(t, 1.0 / s);
            if r > 0.0 {
                dcos = geom::sub(dcos, geom::scale(p, pt / (r * s * s)));
            }
            g[i] = geom::scale(dcos, dir);
        }
    }
    let mean_cos = cos_sum * inv;
    let loss = match sign {
        NormalSign::Aligned => 1.0 - mean_cos,
        NormalSign::Literal => mean_cos,
    };
    Ok(ReconOutput { loss, count, grads })
}

// ---- heads and combination --------------------------------------------

/// Linear map from features to a 3-vector: `x = f·W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    /// `d × 3`.
    pub weight: Mat,
    pub bias: Vec3,
}

impl LinearHead {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weight: Mat::zeros(dim, 3),
            bias: [0.0; 3],
        }
    }

    pub fn init(dim: usize, rng: &mut Rng) -> Self {
        let std = (1.0 / dim as f64).sqrt();
        let data = (0..dim * 3).map(|_| std * rng.normal()).collect();
        Self {
            weight: Mat::from_vec(dim, 3, data).expect("shape"),
            bias: [0.0; 3],
        }
    }

    pub fn predict_row(&self, f: &[f64]) -> Vec3 {
        let mut out = self.bias;
        for (k, &v) in f.iter().enumerate() {
            let w = self.weight.row(k);
            out[0] += v * w[0];
            out[1] += v * w[1];
            out[2] += v * w[2];
        }
        out
    }

    /// Accumulates head gradients and returns `dLoss/df` for one row.
    fn backward_row(&self, f: &[f64], dpred: Vec3, grad: &mut LinearHead) -> Vec<f64> {
        for (k, &v) in f.iter().enumerate() {
            let gw = grad.weight.row_mut(k);
            gw[0] += v * dpred[0];
            gw[1] += v * dpred[1];
            gw[2] += v * dpred[2];
        }
        grad.bias = geom::add(grad.bias, dpred);
        (0..f.len())
            .map(|k| geom::dot(self.weight.row(k).try_into().unwrap(), dpred))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconHeads {
    pub color: LinearHead,
    pub normal: LinearHead,
}

impl ReconHeads {
    pub fn zeros(dim: usize) -> Self {
        Self {
            color: LinearHead::zeros(dim),
            normal: LinearHead::zeros(dim),
        }
    }

    pub fn init(dim: usize, rng: &mut Rng) -> Self {
        Self {
            color: LinearHead::init(dim, rng),
            normal: LinearHead::init(dim, rng),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l_nce: f64,
    pub l_color: f64,
    pub l_normal: f64,
    pub l_total: f64,
}

/// `l_nce + λc·l_color + λn·l_normal`.
pub fn combined_loss(l_nce: f64, l_color: f64, l_normal: f64, lambda_c: f64, lambda_n: f64) -> LossBreakdown {
    LossBreakdown {
        l_nce,
        l_color,
        l_normal,
        l_total: l_nce + lambda_c * l_color + lambda_n * l_normal,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    pub tau: f64,
    pub lambda_c: f64,
    pub lambda_n: f64,
    pub reduction: Reduction,
    pub normal_sign: NormalSign,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            lambda_c: 1.0,
            lambda_n: 1.0,
            reduction: Reduction::Mean,
            normal_sign: NormalSign::Aligned,
        }
    }
}

/// Per-view inputs to [`scene_objective`].
#[derive(Debug, Clone, Copy)]
pub struct ViewTargets<'a> {
    pub features: &'a Mat,
    pub colors: &'a [Vec3],
    pub normals: Option<&'a [Vec3]>,
    pub normal_valid: Option<&'a [bool]>,
    pub mask: &'a [bool],
}

#[derive(Debug, Clone)]
pub struct SceneObjective {
    pub breakdown: LossBreakdown,
    pub grad_query: Mat,
    pub grad_key: Mat,
    pub grad_heads: ReconHeads,
    /// Number of contrastive pairs used; `0` means `l_nce` was skipped.
    pub pairs: usize,
    pub masked: usize,
    pub mean_negative_cosine: Option<f64>,
}

/// Full objective for one query/key pair of views.
///
/// `pairs` index matched rows of the two feature matrices. Reconstruction
/// runs over masked rows through `heads`, applied to unit-normalized
/// features. An empty `pairs` skips the
/// contrastive term.
pub fn scene_objective(
    query: ViewTargets<'_>,
    key: ViewTargets<'_>,
    pairs: &[(usize, usize)],
    heads: &ReconHeads,
    cfg: &ObjectiveConfig,
) -> Result<SceneObjective> {
    let dim = query.features.cols();
    if key.features.cols() != dim || heads.color.weight.rows() != dim || heads.normal.weight.rows() != dim {
        return Err(MscError::DimMismatch("feature width vs heads".into()));
    }
    let mut grad_query = Mat::zeros(query.features.rows(), dim);
    let mut grad_key = Mat::zeros(key.features.rows(), dim);
    let mut grad_heads = ReconHeads::zeros(dim);

    let (l_nce, mean_negative_cosine) = if pairs.is_empty() {
        (0.0, None)
    } else {
        let qi: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let kj: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let out = contrastive_loss(
            &query.features.select_rows(&qi),
            &key.features.select_rows(&kj),
            cfg.tau,
            cfg.reduction,
        )?;
        for (r, &i) in qi.iter().enumerate() {
            linalg::axpy(1.0, out.grad_query.row(r), grad_query.row_mut(i));
        }
        for (r, &j) in kj.iter().enumerate() {
            linalg::axpy(1.0, out.grad_key.row(r), grad_key.row_mut(j));
        }
        (out.loss, Some(out.mean_negative_cosine))
    };

    let views = [query, key];
    let masked: usize = views.iter().map(|v| v.mask.iter().filter(|&&m| m).count()).sum();
    let mut l_color = 0.0;
    let mut l_normal = 0.0;
    if masked > 0 && (cfg.lambda_c != 0.0 || cfg.lambda_n != 0.0) {
        for v in &views {
            if v.colors.len() != v.features.rows() || v.mask.len() != v.features.rows() {
                return Err(MscError::DimMismatch("targets vs feature rows".into()));
            }
        }
        // Heads read unit-normalized features, like the contrastive term.
        let units = [normalize_rows(query.features)?, normalize_rows(key.features)?];
        // Predictions only matter on masked rows; others stay zero.
        let predict = |head: &LinearHead, vi: usize| -> Vec<Vec3> {
            let (u, v) = (&units[vi].0, &views[vi]);
            (0..u.rows())
                .map(|i| if v.mask[i] { head.predict_row(u.row(i)) } else { [0.0; 3] })
                .collect()
        };
        let mut grad_units = [Mat::zeros(query.features.rows(), dim), Mat::zeros(key.features.rows(), dim)];

        if cfg.lambda_c != 0.0 {
            let preds: Vec<Vec<Vec3>> = (0..2).map(|vi| predict(&heads.color, vi)).collect();
            let inputs: Vec<ReconInput<'_>> = views
                .iter()
                .zip(&preds)
                .map(|(v, p)| ReconInput {
                    pred: p,
                    target: v.colors,
                    mask: v.mask,
                    valid: None,
                })
                .collect();
            let out = color_loss(&inputs)?;
            l_color = out.loss;
            for (vi, g) in out.grads.iter().enumerate() {
                for i in (0..g.len()).filter(|&i| views[vi].mask[i]) {
                    let df = heads
                        .color
                        .backward_row(units[vi].0.row(i), geom::scale(g[i], cfg.lambda_c), &mut grad_heads.color);
                    linalg::axpy(1.0, &df, grad_units[vi].row_mut(i));
                }
            }
        }

        let have_normals = views.iter().all(|v| v.normals.is_some());
        if cfg.lambda_n != 0.0 && have_normals {
            let preds: Vec<Vec<Vec3>> = (0..2).map(|vi| predict(&heads.normal, vi)).collect();
            let inputs: Vec<ReconInput<'_>> = views
                .iter()
                .zip(&preds)
                .map(|(v, p)| ReconInput {
                    pred: p,
                    target: v.normals.unwrap(),
                    mask: v.mask,
                    valid: v.normal_valid,
                })
                .collect();
            let out = normal_loss(&inputs, cfg.normal_sign)?;
            l_normal = out.loss;
            for (vi, g) in out.grads.iter().enumerate() {
                for i in (0..g.len()).filter(|&i| inputs[vi].used(i)) {
                    let df = heads
                        .normal
                        .backward_row(units[vi].0.row(i), geom::scale(g[i], cfg.lambda_n), &mut grad_heads.normal);
                    linalg::axpy(1.0, &df, grad_units[vi].row_mut(i));
                }
            }
        } else if cfg.lambda_n != 0.0 {
            log::warn!("normal loss skipped: views carry no normals");
        }
        grad_query.add_assign(&unnormalize_grad(&grad_units[0], &units[0].0, &units[0].1));
        grad_key.add_assign(&unnormalize_grad(&grad_units[1], &units[1].0, &units[1].1));
    }

    Ok(SceneObjective {
        breakdown: combined_loss(l_nce, l_color, l_normal, cfg.lambda_c, cfg.lambda_n),
        grad_query,
        grad_key,
        grad_heads,
        pairs: pairs.len(),
        masked,
        mean_negative_cosine,
    })
}
