// SPDX-License-Identifier: Apache-2.0

//! Flat `key = value` configuration.
//!
//! One assignment per line, `#` starts a comment, blank lines are ignored.
//! Unknown or repeated keys are errors. [`Config::render`] emits every key
//! and parses back to the same value.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::augment::{AugmentParams, GridFrame};
use crate::error::{MscError, Result};
use crate::objective::{NormalSign, Reduction};
use crate::synth::{ColorScheme, SceneSpec, Shell};
use crate::toytrain::pretrain::PretrainConfig;
use crate::toytrain::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub augment: AugmentParams,
    pub train: TrainConfig,
    pub batch: usize,
    pub steps: u64,
    pub seed: u64,
    pub scene: SceneSpec,
}

impl Default for Config {
    fn default() -> Self {
        let augment = AugmentParams::default();
        let train = TrainConfig {
            match_epsilon: augment.voxel_size,
            ..TrainConfig::default()
        };
        Self {
            augment,
            train,
            batch: 8,
            steps: 200,
            seed: 0,
            scene: SceneSpec::default(),
        }
    }
}

pub const KEYS: &[&str] = &[
    "brightness",
    "contrast",
    "saturation",
    "hue",
    "color_noise_sigma",
    "color_noise_prob",
    "rot_z_max",
    "rot_xy_max",
    "flip_prob",
    "scale_min",
    "scale_max",
    "voxel_size",
    "grid_frame",
    "crop_min",
    "crop_max",
    "mask_grid",
    "mask_rate",
    "match_epsilon",
    "n_max",
    "tau",
    "lambda_color",
    "lambda_normal",
    "reduction",
    "normal_sign",
    "lr",
    "momentum",
    "steps",
    "batch",
    "hidden",
    "feat_dim",
    "radius",
    "seed",
    "scene_size_x",
    "scene_size_y",
    "scene_height",
    "scene_shell",
    "scene_boxes",
    "scene_spheres",
    "scene_density",
    "scene_colors",
];

fn num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse {v:?}"))
}

fn word<T: FromStr<Err = MscError>>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|e: MscError| e.to_string())
}

fn grid_frame_name(g: GridFrame) -> &'static str {
    match g {
        GridFrame::Augmented => "augmented",
        GridFrame::Original => "original",
    }
}

fn reduction_name(r: Reduction) -> &'static str {
    match r {
        Reduction::Sum => "sum",
        Reduction::Mean => "mean",
    }
}

fn normal_sign_name(s: NormalSign) -> &'static str {
    match s {
        NormalSign::Aligned => "aligned",
        NormalSign::Literal => "literal",
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| MscError::io(path, e))?;
        Self::parse(&text)
    }

    /// Parses a document on top of the defaults. `match_epsilon` follows
    /// `voxel_size` unless set explicitly.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        let mut seen: Vec<&str> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| MscError::Config {
                line,
                message: format!("expected `key = value`, got {content:?}"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let known = KEYS.iter().find(|&&k| k == key).ok_or_else(|| MscError::Config {
                line,
                message: format!("unknown key {key:?}"),
            })?;
            if seen.contains(known) {
                return Err(MscError::Config {
                    line,
                    message: format!("duplicate key {key:?}"),
                });
            }
            seen.push(known);
            cfg.set(key, value).map_err(|message| MscError::Config {
                line,
                message: format!("{key}: {message}"),
            })?;
        }
        if !seen.contains(&"match_epsilon") {
            cfg.train.match_epsilon = cfg.augment.voxel_size;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let a = &mut self.augment;
        let t = &mut self.train;
        let s = &mut self.scene;
        match key {
            "brightness" => a.brightness = num(v)?,
            "contrast" => a.contrast = num(v)?,
            "saturation" => a.saturation = num(v)?,
            "hue" => a.hue = num(v)?,
            "color_noise_sigma" => a.color_noise_sigma = num(v)?,
            "color_noise_prob" => a.color_noise_prob = num(v)?,
            "rot_z_max" => a.rot_z_max = num(v)?,
            "rot_xy_max" => a.rot_xy_max = num(v)?,
            "flip_prob" => a.flip_prob = num(v)?,
            "scale_min" => a.scale_range[0] = num(v)?,
            "scale_max" => a.scale_range[1] = num(v)?,
            "voxel_size" => a.voxel_size = num(v)?,
            "grid_frame" => a.grid_frame = word(v)?,
            "crop_min" => a.crop_keep_range[0] = num(v)?,
            "crop_max" => a.crop_keep_range[1] = num(v)?,
            "mask_grid" => t.mask_grid = num(v)?,
            "mask_rate" => t.mask_rate = num(v)?,
            "match_epsilon" => t.match_epsilon = num(v)?,
            "n_max" => t.n_max = num(v)?,
            "tau" => t.objective.tau = num(v)?,
            "lambda_color" => t.objective.lambda_c = num(v)?,
            "lambda_normal" => t.objective.lambda_n = num(v)?,
            "reduction" => t.objective.reduction = word(v)?,
            "normal_sign" => t.objective.normal_sign = word(v)?,
            "lr" => t.lr = num(v)?,
            "momentum" => t.momentum = num(v)?,
            "steps" => self.steps = num(v)?,
            "batch" => self.batch = num(v)?,
            "hidden" => t.hidden = num(v)?,
            "feat_dim" => t.feat_dim = num(v)?,
            "radius" => t.radius = num(v)?,
            "seed" => self.seed = num(v)?,
            "scene_size_x" => s.extent[0] = num(v)?,
            "scene_size_y" => s.extent[1] = num(v)?,
            "scene_height" => s.extent[2] = num(v)?,
            "scene_shell" => {
                s.shell = match v {
                    "room" => Shell::Room,
                    "floor" => Shell::FloorOnly,
                    _ => return Err(format!("expected room or floor, got {v:?}")),
                }
            }
            "scene_boxes" => s.boxes = num(v)?,
            "scene_spheres" => s.spheres = num(v)?,
            "scene_density" => s.density = num(v)?,
            "scene_colors" => {
                s.colors = match v {
                    "palette" => ColorScheme::Palette,
                    "random" => ColorScheme::Random,
                    _ => return Err(format!("expected palette or random, got {v:?}")),
                }
            }
            _ => unreachable!("key list and setter disagree on {key}"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |message: String| Err(MscError::Config { line: 0, message });
        self.augment.validate().or_else(|e| bad(e.to_string()))?;
        self.scene.validate().or_else(|e| bad(e.to_string()))?;
        let t = &self.train;
        if !(t.mask_grid.is_finite() && t.mask_grid > 0.0) {
            return bad("mask_grid must be > 0".into());
        }
        if !(0.0..=0.5).contains(&t.mask_rate) {
            return bad("mask_rate must lie in [0, 0.5]".into());
        }
        if !(t.match_epsilon.is_finite() && t.match_epsilon > 0.0) {
            return bad("match_epsilon must be > 0".into());
        }
        if t.n_max == 0 {
            return bad("n_max must be >= 1".into());
        }
        let o = &t.objective;
        if !(o.tau.is_finite() && o.tau > 0.0) {
            return bad("tau must be > 0".into());
        }
        if !(o.lambda_c.is_finite() && o.lambda_c >= 0.0 && o.lambda_n.is_finite() && o.lambda_n >= 0.0) {
            return bad("loss weights must be >= 0".into());
        }
        if !(t.lr.is_finite() && t.lr >= 0.0) {
            return bad("lr must be >= 0".into());
        }
        if !(0.0..1.0).contains(&t.momentum) {
            return bad("momentum must lie in [0, 1)".into());
        }
        if self.batch == 0 || t.hidden == 0 || t.feat_dim == 0 {
            return bad("batch, hidden and feat_dim must be >= 1".into());
        }
        if !(t.radius.is_finite() && t.radius > 0.0) {
            return bad("radius must be > 0".into());
        }
        Ok(())
    }

    pub fn pretrain(&self) -> PretrainConfig {
        PretrainConfig {
            train: self.train.clone(),
            augment: self.augment.clone(),
            batch: self.batch,
            steps: self.steps,
        }
    }

    /// Every key with its current value, in [`KEYS`] order.
    pub fn render(&self) -> String {
        let a = &self.augment;
        let t = &self.train;
        let o = &t.objective;
        let s = &self.scene;
        let values: Vec<String> = vec![
            a.brightness.to_string(),
            a.contrast.to_string(),
            a.saturation.to_string(),
            a.hue.to_string(),
            a.color_noise_sigma.to_string(),
            a.color_noise_prob.to_string(),
            a.rot_z_max.to_string(),
            a.rot_xy_max.to_string(),
            a.flip_prob.to_string(),
            a.scale_range[0].to_string(),
            a.scale_range[1].to_string(),
            a.voxel_size.to_string(),
            grid_frame_name(a.grid_frame).into(),
            a.crop_keep_range[0].to_string(),
            a.crop_keep_range[1].to_string(),
            t.mask_grid.to_string(),
            t.mask_rate.to_string(),
            t.match_epsilon.to_string(),
            t.n_max.to_string(),
            o.tau.to_string(),
            o.lambda_c.to_string(),
            o.lambda_n.to_string(),
            reduction_name(o.reduction).into(),
            normal_sign_name(o.normal_sign).into(),
            t.lr.to_string(),
            t.momentum.to_string(),
            self.steps.to_string(),
            self.batch.to_string(),
            t.hidden.to_string(),
            t.feat_dim.to_string(),
            t.radius.to_string(),
            self.seed.to_string(),
            s.extent[0].to_string(),
            s.extent[1].to_string(),
            s.extent[2].to_string(),
            match s.shell {
                Shell::Room => "room",
                Shell::FloorOnly => "floor",
            }
            .into(),
            s.boxes.to_string(),
            s.spheres.to_string(),
            s.density.to_string(),
            match s.colors {
                ColorScheme::Palette => "palette",
                ColorScheme::Random => "random",
            }
            .into(),
        ];
        let mut out = String::new();
        for (k, v) in KEYS.iter().zip(values) {
            writeln!(out, "{k} = {v}").unwrap();
        }
        out
    }
}
