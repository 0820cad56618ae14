// SPDX-License-Identifier: Apache-2.0

//! Point encoder: pointwise MLP, one radius mean-aggregation restricted to
//! the point's own scene, pointwise MLP.
//!
//! ```text
//! u  = mask ? token : x                      (n × c_in)
//! h1 = relu(u W1a + b1a);  h2 = relu(h1 W1b + b1b)
//! g_i = mean_{j ∈ N(i)} h2_j                 N(i): same scene, |p_j − p_i| ≤ ρ
//! h3 = relu([h2 | g] W2a + b2a);  f = h3 W2b + b2b
//! ```

use crate::correspond::SpatialIndex;
use crate::error::{MscError, Result};
use crate::geom::Vec3;
use crate::linalg::{self, Mat};
use crate::rng::Rng;

/// Input channels: RGB plus height above the scene floor.
pub const INPUT_CHANNELS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub w1a: Mat,
    pub b1a: Vec<f64>,
    pub w1b: Mat,
    pub b1b: Vec<f64>,
    pub w2a: Mat,
    pub b2a: Vec<f64>,
    pub w2b: Mat,
    pub b2b: Vec<f64>,
    /// Mask token, one value per input channel.
    pub token: Vec<f64>,
}

impl EncoderParams {
    pub fn zeros(c_in: usize, hidden: usize, out: usize) -> Self {
        Self {
            w1a: Mat::zeros(c_in, hidden),
            b1a: vec![0.0; hidden],
            w1b: Mat::zeros(hidden, hidden),
            b1b: vec![0.0; hidden],
            w2a: Mat::zeros(2 * hidden, hidden),
            b2a: vec![0.0; hidden],
            w2b: Mat::zeros(hidden, out),
            b2b: vec![0.0; out],
            token: vec![0.0; c_in],
        }
    }

    /// He-normal weights, zero biases and token.
    pub fn init(c_in: usize, hidden: usize, out: usize, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(c_in, hidden, out);
        for w in [&mut p.w1a, &mut p.w1b, &mut p.w2a, &mut p.w2b] {
            let std = (2.0 / w.rows() as f64).sqrt();
            w.as_mut_slice().iter_mut().for_each(|v| *v = std * rng.normal());
        }
        p
    }

    pub fn input_dim(&self) -> usize {
        self.w1a.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1a.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w2b.cols()
    }

    pub fn blocks(&self) -> [(&'static str, &[f64]); 9] {
        [
            ("w1a", self.w1a.as_slice()),
            ("b1a", &self.b1a),
            ("w1b", self.w1b.as_slice()),
            ("b1b", &self.b1b),
            ("w2a", self.w2a.as_slice()),
            ("b2a", &self.b2a),
            ("w2b", self.w2b.as_slice()),
            ("b2b", &self.b2b),
            ("token", &self.token),
        ]
    }

    pub fn blocks_mut(&mut self) -> [(&'static str, &mut [f64]); 9] {
        [
            ("w1a", self.w1a.as_mut_slice()),
            ("b1a", &mut self.b1a),
            ("w1b", self.w1b.as_mut_slice()),
            ("b1b", &mut self.b1b),
            ("w2a", self.w2a.as_mut_slice()),
            ("b2a", &mut self.b2a),
            ("w2b", self.w2b.as_mut_slice()),
            ("b2b", &mut self.b2b),
            ("token", &mut self.token),
        ]
    }
}

/// One forward unit: a (possibly mixed) cloud.
#[derive(Debug, Clone, Copy)]
pub struct EncoderInput<'a> {
    /// `n × c_in` raw input features.
    pub features: &'a Mat,
    /// Coordinates the aggregation radius is measured in.
    pub positions: &'a [Vec3],
    /// Aggregation never crosses scene ids.
    pub scene_ids: &'a [usize],
    pub mask: &'a [bool],
}

/// Radius neighborhoods in CSR form; every point lists itself.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhoods {
    offsets: Vec<usize>,
    indices: Vec<u32>,
}

impl Neighborhoods {
    pub fn build(positions: &[Vec3], scene_ids: &[usize], radius: f64) -> Self {
        let n = positions.len();
        let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| (scene_ids[i], i));
        for i in order {
            match groups.last_mut() {
                Some((s, rows)) if *s == scene_ids[i] => rows.push(i),
                _ => groups.push((scene_ids[i], vec![i])),
            }
        }
        let mut lists: Vec<Vec<u32>> = vec![Vec::new(); n];
        for (_, rows) in &groups {
            let pts: Vec<Vec3> = rows.iter().map(|&r| positions[r]).collect();
            let index = SpatialIndex::build(&pts, radius);
            for (local, &row) in rows.iter().enumerate() {
                let list = &mut lists[row];
                index.for_each_within(&pts, pts[local], radius, |j, _| list.push(rows[j] as u32));
                list.sort_unstable();
            }
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        let mut indices = Vec::new();
        for l in lists {
            indices.extend_from_slice(&l);
            offsets.push(indices.len());
        }
        Self { offsets, indices }
    }

    pub fn of(&self, i: usize) -> &[u32] {
        &self.indices[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    pub mask: Vec<bool>,
    u: Mat,
    h1: Mat,
    h2: Mat,
    z: Mat,
    h3: Mat,
    pub neighbors: Neighborhoods,
}

impl EncoderCache {
    /// Which hidden units are active, over all three ReLU layers.
    pub fn activation_pattern(&self) -> Vec<bool> {
        [&self.h1, &self.h2, &self.h3]
            .iter()
            .flat_map(|m| m.as_slice().iter().map(|&v| v > 0.0))
            .collect()
    }
}

fn linear(x: &Mat, w: &Mat, b: &[f64]) -> Mat {
    let mut out = x.matmul(w);
    for i in 0..out.rows() {
        linalg::axpy(1.0, b, out.row_mut(i));
    }
    out
}

fn relu_in_place(m: &mut Mat) {
    m.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
}

pub fn encoder_forward(input: EncoderInput<'_>, params: &EncoderParams, radius: f64) -> Result<(Mat, EncoderCache)> {
    let neighbors = Neighborhoods::build(input.positions, input.scene_ids, radius);
    encoder_forward_with(input, params, neighbors)
}

/// Forward pass with precomputed neighborhoods.
pub fn encoder_forward_with(input: EncoderInput<'_>, params: &EncoderParams, neighbors: Neighborhoods) -> Result<(Mat, EncoderCache)> {
    let n = input.features.rows();
    if input.features.cols() != params.input_dim() {
        return Err(MscError::DimMismatch(format!(
            "encoder expects {} input channels, got {}",
            params.input_dim(),
            input.features.cols()
        )));
    }
    if input.mask.len() != n || input.positions.len() != n || input.scene_ids.len() != n || neighbors.len() != n {
        return Err(MscError::DimMismatch("encoder input lengths differ".into()));
    }
    let h = params.hidden_dim();
    let mut u = input.features.clone();
    for i in (0..n).filter(|&i| input.mask[i]) {
        u.row_mut(i).copy_from_slice(&params.token);
    }
    let mut h1 = linear(&u, &params.w1a, &params.b1a);
    relu_in_place(&mut h1);
    let mut h2 = linear(&h1, &params.w1b, &params.b1b);
    relu_in_place(&mut h2);

    let mut z = Mat::zeros(n, 2 * h);
    for i in 0..n {
        let nb = neighbors.of(i);
        let inv = 1.0 / nb.len() as f64;
        let row = z.row_mut(i);
        row[..h].copy_from_slice(h2.row(i));
        let agg = &mut row[h..];
        for &j in nb {
            linalg::axpy(inv, h2.row(j as usize), agg);
        }
    }
    let mut h3 = linear(&z, &params.w2a, &params.b2a);
    relu_in_place(&mut h3);
    let f = linear(&h3, &params.w2b, &params.b2b);
    Ok((
        f,
        EncoderCache {
            mask: input.mask.to_vec(),
            u,
            h1,
            h2,
            z,
            h3,
            neighbors,
        },
    ))
}

fn relu_backward(grad: &mut Mat, activated: &Mat) {
    for (g, &a) in grad.as_mut_slice().iter_mut().zip(activated.as_slice()) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

fn bias_grad(d: &Mat) -> Vec<f64> {
    let mut b = vec![0.0; d.cols()];
    for i in 0..d.rows() {
        linalg::axpy(1.0, d.row(i), &mut b);
    }
    b
}

/// Reverse pass; returns gradients shaped like `params`. Input features get
/// no gradient; masked rows route theirs into the token.
pub fn encoder_backward(cache: &EncoderCache, params: &EncoderParams, grad_out: &Mat) -> EncoderParams {
    let h = params.hidden_dim();
    let n = cache.h3.rows();
    let mut g = EncoderParams::zeros(params.input_dim(), h, params.output_dim());

    g.w2b = cache.h3.t_matmul(grad_out);
    g.b2b = bias_grad(grad_out);
    let mut d3 = grad_out.matmul_t(&params.w2b);
    relu_backward(&mut d3, &cache.h3);

    g.w2a = cache.z.t_matmul(&d3);
    g.b2a = bias_grad(&d3);
    let dz = d3.matmul_t(&params.w2a);

    let mut d2 = Mat::zeros(n, h);
    for i in 0..n {
        let dzi = dz.row(i);
        linalg::axpy(1.0, &dzi[..h], d2.row_mut(i));
        let nb = cache.neighbors.of(i);
        let inv = 1.0 / nb.len() as f64;
        for &j in nb {
            linalg::axpy(inv, &dzi[h..], d2.row_mut(j as usize));
        }
    }
    relu_backward(&mut d2, &cache.h2);

    g.w1b = cache.h1.t_matmul(&d2);
    g.b1b = bias_grad(&d2);
    let mut d1 = d2.matmul_t(&params.w1b);
    relu_backward(&mut d1, &cache.h1);

    g.w1a = cache.u.t_matmul(&d1);
    g.b1a = bias_grad(&d1);
    let du = d1.matmul_t(&params.w1a);
    for i in (0..n).filter(|&i| cache.mask[i]) {
        linalg::axpy(1.0, du.row(i), &mut g.token);
    }
    g
}
